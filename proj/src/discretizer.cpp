#include "dad/discretizer.hpp"

#include <cmath>

#include "json.hpp"

using nlohmann::json;

namespace dad::vq {

int nearest_index(const Tensor& entries, const real* vec) {
  check(entries.ndim() == 2 && entries.dim(0) >= 1, "nearest_index: bad codebook");
  const int K = entries.dim(0), d = entries.dim(1);
  int best = 0;
  real best_dist = 0;
  for (int j = 0; j < d; ++j) {
    const real diff = vec[j] - entries.v[size_t(j)];
    best_dist += diff * diff;
  }
  for (int i = 1; i < K; ++i) {
    const real* row = entries.data() + size_t(i) * d;
    real dist = 0;
    for (int j = 0; j < d; ++j) {
      const real diff = vec[j] - row[j];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  return best;
}

std::pair<int, std::vector<real>> quantize(const Codebook& cb, const std::vector<real>& v) {
  check(int(v.size()) == cb.dim(),
        "quantize: vector dimension " + std::to_string(v.size()) + " != codebook dim " +
            std::to_string(cb.dim()));
  const int idx = nearest_index(cb.entries.value, v.data());
  const real* row = cb.entries.value.data() + size_t(idx) * cb.dim();
  return {idx, std::vector<real>(row, row + cb.dim())};
}

namespace {

int ilog2_exact(int f) {
  int l = 0, v = f;
  while (v > 1) {
    check(v % 2 == 0, "downsample factor must be a power of two, got " + std::to_string(f));
    v /= 2;
    ++l;
  }
  return l;
}

}  // namespace

Discretizer::Discretizer(const VqConfig& cfg) : cfg_(cfg) {
  check(cfg.K >= 2, "codebook size must be >= 2");
  check(cfg.d >= 1, "latent dimension must be >= 1");
  check(cfg.f >= 1, "downsample factor must be >= 1");
  const int levels = ilog2_exact(cfg.f);
  Rng rng(cfg.seed);

  int ch = 3;
  int width = 32;
  for (int i = 0; i < levels; ++i) {
    enc_.emplace_back(ch, width, 3, 2, 1, rng);
    ch = width;
    width = std::min(64, width * 2);
  }
  enc_.emplace_back(ch, cfg.d, 3, 1, 1, rng);

  int dch = cfg.d;
  int dwidth = std::min(64, 32 << std::max(0, levels - 1));
  dec_.emplace_back(dch, dwidth, 3, 1, 1, rng);
  dch = dwidth;
  for (int i = 0; i < levels; ++i) {
    dec_upsample_before_.push_back(int(dec_.size()));
    dwidth = std::max(32, dwidth / 2);
    dec_.emplace_back(dch, dwidth, 3, 1, 1, rng);
    dch = dwidth;
  }
  dec_.emplace_back(dch, 3, 3, 1, 1, rng);

  codebook_.entries = Param(Tensor::randn({cfg.K, cfg.d}, rng, 1.0));
  codebook_.reset_usage();
}

Var Discretizer::encode(Tape& t, Var image) const {
  const Tensor& tx = t.val(image);
  check(tx.ndim() == 4 && tx.dim(1) == 3, "encode: expected [B,3,H,W] image");
  check(tx.dim(2) % cfg_.f == 0 && tx.dim(3) % cfg_.f == 0,
        "encode: spatial dims " + std::to_string(tx.dim(2)) + "x" + std::to_string(tx.dim(3)) +
            " not divisible by f=" + std::to_string(cfg_.f));
  Var x = image;
  for (size_t i = 0; i < enc_.size(); ++i) {
    x = enc_[i].forward(t, x);
    if (i + 1 < enc_.size()) x = t.relu(x);
  }
  return x;
}

Var Discretizer::decode(Tape& t, Var grid) const {
  const Tensor& tg = t.val(grid);
  check(tg.ndim() == 4 && tg.dim(1) == cfg_.d, "decode: expected [B," + std::to_string(cfg_.d) +
                                                   ",h,w] grid, got " + shape_str(tg.shape));
  Var x = grid;
  size_t up = 0;
  for (size_t i = 0; i < dec_.size(); ++i) {
    if (up < dec_upsample_before_.size() && dec_upsample_before_[up] == int(i)) {
      x = t.upsample2x(x);
      ++up;
    }
    x = dec_[i].forward(t, x);
    if (i + 1 < dec_.size()) x = t.relu(x);
  }
  return t.sigmoid(x);
}

Discretizer::Quantized Discretizer::quantize_grid(Tape& t, Var ze) const {
  const Tensor& tz = t.val(ze);
  check(tz.ndim() == 4 && tz.dim(1) == cfg_.d, "quantize_grid: bad latent shape");
  const int B = tz.dim(0), h = tz.dim(2), w = tz.dim(3);

  Quantized q;
  q.ze_rows = t.nchw_to_rows(ze);  // [N,d]
  const Tensor& rows = t.val(q.ze_rows);
  const int N = rows.dim(0);
  q.indices.resize(size_t(N));
  const Tensor& entries = codebook_.entries.value;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < N; ++i)
    q.indices[size_t(i)] = nearest_index(entries, rows.data() + size_t(i) * cfg_.d);

  q.zq_rows = t.embed(t.use(const_cast<Param&>(codebook_.entries)), q.indices);
  Var st_rows = t.add(q.ze_rows, t.detach(t.sub(q.zq_rows, q.ze_rows)));
  q.zq_st = t.rows_to_nchw(st_rows, B, cfg_.d, h, w);
  return q;
}

Var Discretizer::discretize(Tape& t, Var image) const {
  Var ze = encode(t, image);
  Quantized q = quantize_grid(t, ze);
  return decode(t, q.zq_st);
}

Tensor Discretizer::encode_value(const Tensor& image) const {
  Tape t;
  return t.val(encode(t, t.leaf(image)));
}

Tensor Discretizer::decode_value(const Tensor& grid) const {
  Tape t;
  return t.val(decode(t, t.leaf(grid)));
}

Tensor Discretizer::discretize_value(const Tensor& image) const {
  Tape t;
  return t.val(discretize(t, t.leaf(image)));
}

std::vector<int> Discretizer::code_indices(const Tensor& image) const {
  Tape t;
  Var ze = encode(t, t.leaf(image));
  return quantize_grid(t, ze).indices;
}

std::vector<Param*> Discretizer::params() {
  std::vector<Param*> out;
  for (auto& c : enc_) {
    out.push_back(&c.w);
    out.push_back(&c.b);
  }
  for (auto& c : dec_) {
    out.push_back(&c.w);
    out.push_back(&c.b);
  }
  out.push_back(&codebook_.entries);
  return out;
}

Fingerprint Discretizer::fingerprint() {
  std::vector<uint8_t> bytes;
  const std::string head = "vq f=" + std::to_string(cfg_.f) + " d=" + std::to_string(cfg_.d) +
                           " K=" + std::to_string(cfg_.K) + "\n";
  put_bytes(bytes, head.data(), head.size());
  for (Param* p : params()) put_bytes(bytes, p->value.v.data(), p->value.v.size() * sizeof(real));
  return fingerprint_bytes(bytes.data(), bytes.size());
}

void Discretizer::init_codebook_from(const Tensor& ze_batch, Rng& rng) {
  real lo = ze_batch.v.empty() ? -1.0 : ze_batch.v[0];
  real hi = lo;
  for (real x : ze_batch.v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi <= lo) hi = lo + 1e-3;
  std::uniform_real_distribution<real> u(lo, hi);
  for (auto& x : codebook_.entries.value.v) x = u(rng);
  codebook_ready_ = true;
}

// ---- training ----

namespace {

struct Adam {
  real lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::vector<Tensor> m, v;

  explicit Adam(real lr_) : lr(lr_) {}

  void update(std::vector<Param*>& params) {
    if (m.empty()) {
      for (Param* p : params) {
        m.emplace_back(p->value.shape);
        v.emplace_back(p->value.shape);
      }
    }
    ++step;
    const real bc1 = 1 - std::pow(beta1, real(step));
    const real bc2 = 1 - std::pow(beta2, real(step));
    for (size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      if (p.grad.shape != p.value.shape) continue;
      for (int64_t j = 0; j < p.value.numel(); ++j) {
        const real g = p.grad.v[size_t(j)];
        real& mj = m[i].v[size_t(j)];
        real& vj = v[i].v[size_t(j)];
        mj = beta1 * mj + (1 - beta1) * g;
        vj = beta2 * vj + (1 - beta2) * g * g;
        p.value.v[size_t(j)] -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps);
      }
    }
  }
};

}  // namespace

VqTrainResult train_discretizer(Discretizer& disc, const data::Dataset& dataset,
                                const VqTrainConfig& cfg) {
  check(dataset.size() > 0, "train_discretizer: empty dataset");
  const int K = disc.config().K;
  const int d = disc.config().d;

  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(cfg.seed, 0xd15c));
  std::shuffle(order.begin(), order.end(), rng);

  const size_t holdout = std::min(dataset.size() - (dataset.size() > 1 ? 1 : 0),
                                  std::max<size_t>(dataset.size() > 1 ? 1 : 0,
                                                   size_t(std::floor(real(dataset.size()) * cfg.holdout_fraction))));
  const size_t n_train = dataset.size() - holdout;
  check(n_train >= 1, "train_discretizer: no training images after holdout split");

  VqTrainResult result;
  Adam opt(cfg.lr);
  auto params = disc.params();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> epoch_order(order.begin(), order.begin() + std::ptrdiff_t(n_train));
    Rng erng(derive_seed(cfg.seed, 1000 + uint64_t(epoch)));
    std::shuffle(epoch_order.begin(), epoch_order.end(), erng);

    disc.codebook().reset_usage();
    std::vector<std::vector<real>> reservoir;  // encoder rows for dead-entry reseed
    real loss_sum = 0;
    int64_t batches = 0;

    for (size_t start = 0; start < epoch_order.size(); start += size_t(cfg.batch_size)) {
      const size_t end = std::min(epoch_order.size(), start + size_t(cfg.batch_size));
      std::vector<const Tensor*> imgs;
      for (size_t i = start; i < end; ++i) imgs.push_back(&dataset.examples[epoch_order[i]].image);
      const Tensor batch = model::stack_images(imgs);

      Tape t;
      Var x = t.leaf(batch);
      Var ze = disc.encode(t, x);
      if (!disc.codebook_initialized()) disc.init_codebook_from(t.val(ze), erng);

      auto q = disc.quantize_grid(t, ze);
      Var recon = disc.decode(t, q.zq_st);
      Var rec_loss = t.mse(recon, x);
      Var cb_loss = t.mse(q.zq_rows, t.detach(q.ze_rows));
      Var commit = t.mse(q.ze_rows, t.detach(q.zq_rows));
      Var loss = t.add(rec_loss, t.add(cb_loss, t.scale(commit, cfg.commitment_weight)));

      const real lv = t.val(loss).v[0];
      check(std::isfinite(lv), "train_discretizer: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batches));
      loss_sum += lv;
      ++batches;

      for (int idx : q.indices) ++disc.codebook().usage_counts[size_t(idx)];
      const Tensor& rows = t.val(q.ze_rows);
      for (int i = 0; i < rows.dim(0); i += 7) {
        if (reservoir.size() >= 4 * size_t(K)) break;
        reservoir.emplace_back(rows.data() + size_t(i) * d, rows.data() + size_t(i + 1) * d);
      }

      for (Param* p : params) p->zero_grad();
      t.backward(loss);
      t.collect_param_grads();
      opt.update(params);
    }

    // re-seed entries unused this epoch
    if (!reservoir.empty()) {
      std::uniform_int_distribution<size_t> pick(0, reservoir.size() - 1);
      for (int k = 0; k < K; ++k)
        if (disc.codebook().usage_counts[size_t(k)] == 0) {
          const auto& src = reservoir[pick(erng)];
          std::copy(src.begin(), src.end(),
                    disc.codebook().entries.value.data() + size_t(k) * d);
        }
    }

    result.epoch_loss.push_back(loss_sum / real(std::max<int64_t>(1, batches)));
    real total = 0, entropy = 0;
    for (int64_t c : disc.codebook().usage_counts) total += real(c);
    if (total > 0)
      for (int64_t c : disc.codebook().usage_counts)
        if (c > 0) {
          const real p = real(c) / total;
          entropy -= p * std::log(p);
        }
    result.epoch_perplexity.push_back(std::exp(entropy));
  }

  real mae = 0;
  int64_t count = 0;
  for (size_t i = n_train; i < dataset.size(); ++i) {
    const Tensor& img = dataset.examples[order[i]].image;
    std::vector<const Tensor*> one = {&img};
    const Tensor rec = disc.discretize_value(model::stack_images(one));
    for (int64_t j = 0; j < img.numel(); ++j) mae += std::abs(rec.v[size_t(j)] - img.v[size_t(j)]);
    count += img.numel();
  }
  result.holdout_mae = count > 0 ? mae / real(count) : 0;
  return result;
}

static constexpr char kVqMagic[4] = {'D', 'A', 'D', 'Q'};
static constexpr uint16_t kVqVersion = 1;

void save_discretizer(Discretizer& disc, const std::string& path) {
  json header;
  header["f"] = disc.config().f;
  header["d"] = disc.config().d;
  header["K"] = disc.config().K;
  header["seed"] = disc.config().seed;
  header["initialized"] = disc.codebook_initialized();
  int64_t n = 0;
  for (Param* p : disc.params()) n += p->value.numel();
  header["param_count"] = n;
  const std::string hs = header.dump();

  std::vector<uint8_t> bytes;
  put_bytes(bytes, kVqMagic, 4);
  put_pod(bytes, kVqVersion);
  put_pod(bytes, uint32_t(hs.size()));
  put_bytes(bytes, hs.data(), hs.size());
  for (Param* p : disc.params()) put_bytes(bytes, p->value.v.data(), p->value.v.size() * sizeof(real));
  write_file_bytes(path, bytes);
}

Discretizer load_discretizer(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes);
  char magic[4];
  r.read(magic, 4);
  check(std::memcmp(magic, kVqMagic, 4) == 0, "not a discretizer checkpoint: " + path);
  check(r.pod<uint16_t>() == kVqVersion, "unsupported discretizer checkpoint version: " + path);
  const uint32_t hlen = r.pod<uint32_t>();
  std::string hs(hlen, '\0');
  r.read(hs.data(), hlen);
  const json header = json::parse(hs);

  VqConfig cfg;
  cfg.f = header["f"].get<int>();
  cfg.d = header["d"].get<int>();
  cfg.K = header["K"].get<int>();
  cfg.seed = header["seed"].get<uint64_t>();
  Discretizer disc(cfg);
  int64_t n = 0;
  for (Param* p : disc.params()) n += p->value.numel();
  check(n == header["param_count"].get<int64_t>(), "discretizer parameter count mismatch: " + path);
  for (Param* p : disc.params()) r.read(p->value.v.data(), p->value.v.size() * sizeof(real));
  if (header.value("initialized", true)) disc.mark_codebook_initialized();
  return disc;
}

}  // namespace dad::vq
