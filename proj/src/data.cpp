#include "dad/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace dad::data {

void Dataset::rebuild_index() {
  index_by_id.clear();
  for (size_t i = 0; i < examples.size(); ++i) {
    auto [it, inserted] = index_by_id.emplace(examples[i].id, i);
    check(inserted, "duplicate sample id " + std::to_string(examples[i].id));
  }
}

namespace {

int read_pnm_token(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    check(c != EOF, "truncated ppm header: " + path);
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      break;
    }
  }
  int value = 0;
  in >> value;
  check(in.good(), "malformed ppm header: " + path);
  return value;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open image: " + path);
  char magic[2] = {0, 0};
  f.read(magic, 2);
  check(f.good() && magic[0] == 'P' && magic[1] == '6', "not a binary ppm (P6): " + path);
  const int w = read_pnm_token(f, path);
  const int h = read_pnm_token(f, path);
  const int maxval = read_pnm_token(f, path);
  check(w > 0 && h > 0, "bad ppm dimensions: " + path);
  check(maxval == 255, "unsupported ppm maxval (want 255): " + path);
  f.get();  // single whitespace after maxval
  std::vector<uint8_t> raw(size_t(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  check(f.gcount() == std::streamsize(raw.size()), "truncated ppm pixel data: " + path);
  Tensor img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.v[size_t(c) * h * w + size_t(y) * w + x] = real(raw[(size_t(y) * w + x) * 3 + c]) / 255.0;
  return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
  check(image.ndim() == 3 && image.dim(0) == 3, "write_ppm: expected [3,H,W] image");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "cannot open image for writing: " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> raw(size_t(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const real v = std::clamp(image.v[size_t(c) * h * w + size_t(y) * w + x], real(0), real(1));
        raw[(size_t(y) * w + x) * 3 + c] = uint8_t(std::lround(v * 255.0));
      }
  f.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  check(f.good(), "failed writing image: " + path);
}

Dataset load_dataset(const std::string& source_path, const std::string& split_name) {
  const fs::path root = fs::path(source_path) / split_name;
  check(fs::exists(root), "dataset split not found: " + root.string());
  check(fs::is_directory(root), "dataset split is not a directory: " + root.string());

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());

  Dataset ds;
  ds.class_names = class_dirs;
  uint64_t next_id = 0;
  for (size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(root / class_dirs[label]))
      if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      LabeledExample ex;
      ex.image = read_ppm(file);
      ex.label = int(label);
      ex.id = next_id++;
      ds.examples.push_back(std::move(ex));
    }
  }
  ds.rebuild_index();
  return ds;
}

const real kGaussianNoiseSigma[6] = {0, 0.04, 0.08, 0.12, 0.18, 0.26};
const real kBlurSigma[6] = {0, 0.5, 0.8, 1.1, 1.5, 2.0};
const real kContrastFactor[6] = {0, 0.75, 0.60, 0.45, 0.30, 0.20};
const real kFogBlend[6] = {0, 0.20, 0.30, 0.40, 0.50, 0.60};
const int kPixelateBlock[6] = {0, 2, 3, 4, 6, 8};
const real kJpegQuantStep[6] = {0, 0.04, 0.08, 0.12, 0.18, 0.26};

CorruptionKind corruption_kind_from_name(const std::string& name) {
  if (name == "gaussian_noise") return CorruptionKind::gaussian_noise;
  if (name == "blur") return CorruptionKind::blur;
  if (name == "contrast") return CorruptionKind::contrast;
  if (name == "fog") return CorruptionKind::fog;
  if (name == "pixelate") return CorruptionKind::pixelate;
  if (name == "jpeg_like" || name == "jpeg-like") return CorruptionKind::jpeg_like;
  fail("unknown corruption kind: " + name);
}

std::string corruption_kind_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::blur: return "blur";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::fog: return "fog";
    case CorruptionKind::pixelate: return "pixelate";
    case CorruptionKind::jpeg_like: return "jpeg_like";
  }
  fail("bad corruption kind");
}

const std::vector<CorruptionKind>& all_corruption_kinds() {
  static const std::vector<CorruptionKind> kinds = {
      CorruptionKind::gaussian_noise, CorruptionKind::blur,     CorruptionKind::contrast,
      CorruptionKind::fog,            CorruptionKind::pixelate, CorruptionKind::jpeg_like};
  return kinds;
}

namespace {

Tensor clipped(Tensor t) {
  for (auto& x : t.v) x = std::clamp(x, real(0), real(1));
  return t;
}

void check_image(const Tensor& image) {
  check(image.ndim() == 3, "corrupt: expected [C,H,W] image");
  check(image.dim(1) > 0 && image.dim(2) > 0, "corrupt: empty image");
}

}  // namespace

Tensor apply_gaussian_noise(const Tensor& image, real sigma, uint64_t seed) {
  check_image(image);
  Tensor out = image;
  if (sigma > 0) {
    Rng rng(seed);
    std::normal_distribution<real> noise(0.0, sigma);
    for (auto& x : out.v) x += noise(rng);
  }
  return clipped(std::move(out));
}

Tensor apply_blur(const Tensor& image, real sigma) {
  check_image(image);
  if (sigma <= 0) return clipped(image);
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const int r = std::max(1, int(std::ceil(2.5 * sigma)));
  std::vector<real> k(size_t(2 * r + 1));
  real ksum = 0;
  for (int i = -r; i <= r; ++i) {
    k[size_t(i + r)] = std::exp(-0.5 * (real(i) / sigma) * (real(i) / sigma));
    ksum += k[size_t(i + r)];
  }
  for (auto& x : k) x /= ksum;

  Tensor tmp(image.shape), out(image.shape);
  auto px = [&](const Tensor& t, int c, int y, int x) {
    y = std::clamp(y, 0, H - 1);
    x = std::clamp(x, 0, W - 1);
    return t.v[size_t(c) * H * W + size_t(y) * W + x];
  };
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        real s = 0;
        for (int i = -r; i <= r; ++i) s += k[size_t(i + r)] * px(image, c, y, x + i);
        tmp.v[size_t(c) * H * W + size_t(y) * W + x] = s;
      }
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        real s = 0;
        for (int i = -r; i <= r; ++i) s += k[size_t(i + r)] * px(tmp, c, y + i, x);
        out.v[size_t(c) * H * W + size_t(y) * W + x] = s;
      }
  return clipped(std::move(out));
}

Tensor apply_contrast(const Tensor& image, real factor) {
  check_image(image);
  const int C = image.dim(0);
  const int64_t hw = int64_t(image.dim(1)) * image.dim(2);
  Tensor out = image;
  for (int c = 0; c < C; ++c) {
    real mean = 0;
    for (int64_t i = 0; i < hw; ++i) mean += image.v[size_t(c) * hw + i];
    mean /= real(hw);
    for (int64_t i = 0; i < hw; ++i) {
      real& x = out.v[size_t(c) * hw + i];
      x = (x - mean) * factor + mean;
    }
  }
  return clipped(std::move(out));
}

Tensor apply_fog(const Tensor& image, real blend, uint64_t seed) {
  check_image(image);
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  // coarse random field, bilinearly upsampled -> smooth haze
  const int G = 8;
  Rng rng(seed);
  std::uniform_real_distribution<real> u(0.0, 1.0);
  std::vector<real> grid(size_t(G) * G);
  for (auto& g : grid) g = u(rng);
  Tensor out = image;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const real gy = real(y) / real(H) * (G - 1);
      const real gx = real(x) / real(W) * (G - 1);
      const int y0 = int(gy), x0 = int(gx);
      const int y1 = std::min(y0 + 1, G - 1), x1 = std::min(x0 + 1, G - 1);
      const real fy = gy - y0, fx = gx - x0;
      const real field = grid[size_t(y0) * G + x0] * (1 - fy) * (1 - fx) +
                         grid[size_t(y0) * G + x1] * (1 - fy) * fx +
                         grid[size_t(y1) * G + x0] * fy * (1 - fx) +
                         grid[size_t(y1) * G + x1] * fy * fx;
      const real haze = 0.7 + 0.3 * field;
      for (int c = 0; c < C; ++c) {
        real& px = out.v[size_t(c) * H * W + size_t(y) * W + x];
        px = (1 - blend) * px + blend * haze;
      }
    }
  return clipped(std::move(out));
}

Tensor apply_pixelate(const Tensor& image, int block) {
  check_image(image);
  check(block >= 1, "pixelate: block must be >= 1");
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out = image;
  for (int c = 0; c < C; ++c)
    for (int by = 0; by < H; by += block)
      for (int bx = 0; bx < W; bx += block) {
        const int ey = std::min(by + block, H), ex = std::min(bx + block, W);
        real mean = 0;
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) mean += image.v[size_t(c) * H * W + size_t(y) * W + x];
        mean /= real((ey - by) * (ex - bx));
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) out.v[size_t(c) * H * W + size_t(y) * W + x] = mean;
      }
  return clipped(std::move(out));
}

namespace {

// orthonormal DCT-II over one 8-point axis
void dct8(const real* in, real* out, bool inverse) {
  static real basis[8][8];
  static bool init = false;
  if (!init) {
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n)
        basis[k][n] = std::sqrt((k == 0 ? 1.0 : 2.0) / 8.0) *
                      std::cos(M_PI / 8.0 * (real(n) + 0.5) * real(k));
    init = true;
  }
  for (int i = 0; i < 8; ++i) {
    real s = 0;
    for (int j = 0; j < 8; ++j) s += inverse ? basis[j][i] * in[j] : basis[i][j] * in[j];
    out[i] = s;
  }
}

}  // namespace

Tensor apply_jpeg_like(const Tensor& image, real quant_step) {
  check_image(image);
  if (quant_step <= 0) return clipped(image);
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out = image;
  real block[8][8], tmp[8][8];
  for (int c = 0; c < C; ++c)
    for (int by = 0; by < H; by += 8)
      for (int bx = 0; bx < W; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            const int sy = std::min(by + y, H - 1), sx = std::min(bx + x, W - 1);
            block[y][x] = image.v[size_t(c) * H * W + size_t(sy) * W + sx];
          }
        for (int y = 0; y < 8; ++y) dct8(block[y], tmp[y], false);
        for (int x = 0; x < 8; ++x) {
          real colin[8], colout[8];
          for (int y = 0; y < 8; ++y) colin[y] = tmp[y][x];
          dct8(colin, colout, false);
          for (int y = 0; y < 8; ++y) {
            const real w = quant_step * (y + x == 0 ? 0.5 : 1.0 + 0.7 * real(y + x));
            tmp[y][x] = std::round(colout[y] / w) * w;
          }
        }
        for (int x = 0; x < 8; ++x) {
          real colin[8], colout[8];
          for (int y = 0; y < 8; ++y) colin[y] = tmp[y][x];
          dct8(colin, colout, true);
          for (int y = 0; y < 8; ++y) tmp[y][x] = colout[y];
        }
        for (int y = 0; y < 8; ++y) {
          real rowout[8];
          dct8(tmp[y], rowout, true);
          for (int x = 0; x < 8; ++x) {
            const int sy = by + y, sx = bx + x;
            if (sy < H && sx < W) out.v[size_t(c) * H * W + size_t(sy) * W + sx] = rowout[x];
          }
        }
      }
  return clipped(std::move(out));
}

Tensor corrupt(const Tensor& image, const CorruptionSpec& spec) {
  check(spec.severity >= 1 && spec.severity <= 5,
        "corruption severity out of range (want 1..5): " + std::to_string(spec.severity));
  const int s = spec.severity;
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: return apply_gaussian_noise(image, kGaussianNoiseSigma[s], spec.seed);
    case CorruptionKind::blur: return apply_blur(image, kBlurSigma[s]);
    case CorruptionKind::contrast: return apply_contrast(image, kContrastFactor[s]);
    case CorruptionKind::fog: return apply_fog(image, kFogBlend[s], spec.seed);
    case CorruptionKind::pixelate: return apply_pixelate(image, kPixelateBlock[s]);
    case CorruptionKind::jpeg_like: return apply_jpeg_like(image, kJpegQuantStep[s]);
  }
  fail("bad corruption kind");
}

std::vector<std::pair<CorruptionKind, int>> read_corruption_manifest(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open corruption manifest: " + path);
  std::vector<std::pair<CorruptionKind, int>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string kind;
    int severity;
    if (!(ss >> kind)) continue;
    check(bool(ss >> severity),
          "corruption manifest " + path + ":" + std::to_string(lineno) + ": missing severity");
    check(severity >= 1 && severity <= 5,
          "corruption manifest " + path + ":" + std::to_string(lineno) + ": severity out of range");
    out.emplace_back(corruption_kind_from_name(kind), severity);
  }
  return out;
}

std::vector<Batch> mixed_epoch(const Dataset& dataset, const std::vector<uint64_t>& augmented_ids,
                               int batch_size, uint64_t seed, int epoch) {
  check(batch_size >= 1, "batch_size must be >= 1");
  for (uint64_t id : augmented_ids)
    check(dataset.index_by_id.count(id) > 0,
          "augmented cache references unknown sample id " + std::to_string(id));

  std::vector<BatchElement> elems;
  elems.reserve(dataset.size() + augmented_ids.size());
  for (const auto& ex : dataset.examples) elems.push_back({ex.id, false});
  for (uint64_t id : augmented_ids) elems.push_back({id, true});

  Rng rng(derive_seed(seed, uint64_t(epoch)));
  std::shuffle(elems.begin(), elems.end(), rng);

  std::vector<Batch> batches;
  for (size_t i = 0; i < elems.size(); i += size_t(batch_size)) {
    Batch b;
    const size_t end = std::min(elems.size(), i + size_t(batch_size));
    b.elems.assign(elems.begin() + std::ptrdiff_t(i), elems.begin() + std::ptrdiff_t(end));
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace dad::data
