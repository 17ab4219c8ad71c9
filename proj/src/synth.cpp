#include "dad/synth.hpp"

#include <cmath>
#include <filesystem>

namespace fs = std::filesystem;

namespace dad::synth {

namespace {

struct Rgb {
  real r, g, b;
};

// smooth 0->1 step over [lo,hi]; soft edges keep shapes readable under blur
real smoothstep(real lo, real hi, real x) {
  const real t = std::clamp((x - lo) / (hi - lo), real(0), real(1));
  return t * t * (3 - 2 * t);
}

Rgb random_color(Rng& rng) {
  std::uniform_real_distribution<real> u(0.05, 0.95);
  return {u(rng), u(rng), u(rng)};
}

real luminance(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

}  // namespace

Tensor render_example(int cls, int hw, Rng& rng) {
  check(cls >= 0 && cls < kNumClasses, "bad synth class");
  check(hw >= 16, "synth images must be at least 16x16");
  std::uniform_real_distribution<real> u01(0.0, 1.0);

  Rgb fg = random_color(rng);
  Rgb bg = random_color(rng);
  // keep figure/ground separable across nuisance colors
  while (std::abs(luminance(fg) - luminance(bg)) < 0.25) {
    fg = random_color(rng);
    bg = random_color(rng);
  }
  Rgb bg2 = random_color(rng);  // second background stop for the gradient

  const real cx = hw * (0.5 + 0.12 * (u01(rng) - 0.5) * 2);
  const real cy = hw * (0.5 + 0.12 * (u01(rng) - 0.5) * 2);
  const real scale = hw * (0.28 + 0.10 * u01(rng));
  const real phase = u01(rng) * 2 * M_PI;
  const real period = hw * (0.14 + 0.06 * u01(rng));
  const real edge = 1.2;  // pixels of soft edge
  const real noise_sigma = 0.015 + 0.03 * u01(rng);
  const real grad_angle = u01(rng) * 2 * M_PI;

  Tensor img({3, hw, hw});
  std::normal_distribution<real> noise(0.0, noise_sigma);

  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      const real dx = x + 0.5 - cx;
      const real dy = y + 0.5 - cy;
      const real r = std::sqrt(dx * dx + dy * dy);
      real m = 0;  // figure mask in [0,1]
      switch (cls) {
        case 0:  // disk
          m = smoothstep(scale, scale - edge, r);
          break;
        case 1:  // ring
          m = smoothstep(scale, scale - edge, r) * smoothstep(scale * 0.55 - edge, scale * 0.55, r);
          break;
        case 2:  // filled square
          m = smoothstep(scale * 0.9, scale * 0.9 - edge, std::max(std::abs(dx), std::abs(dy)));
          break;
        case 3: {  // square frame
          const real d = std::max(std::abs(dx), std::abs(dy));
          m = smoothstep(scale * 0.9, scale * 0.9 - edge, d) *
              smoothstep(scale * 0.55 - edge, scale * 0.55, d);
          break;
        }
        case 4: {  // cross
          const real arm = scale * 0.33;
          const real in_h = smoothstep(arm, arm - edge, std::abs(dy)) *
                            smoothstep(scale, scale - edge, std::abs(dx));
          const real in_v = smoothstep(arm, arm - edge, std::abs(dx)) *
                            smoothstep(scale, scale - edge, std::abs(dy));
          m = std::max(in_h, in_v);
          break;
        }
        case 5: {  // diagonal stripes
          const real t = std::sin(2 * M_PI * (dx + dy) / (period * 1.4142) + phase);
          m = smoothstep(0.0, 0.35, t);
          break;
        }
        case 6: {  // horizontal stripes
          const real t = std::sin(2 * M_PI * dy / period + phase);
          m = smoothstep(0.0, 0.35, t);
          break;
        }
        case 7: {  // checkerboard
          const real tx = std::sin(2 * M_PI * dx / period + phase);
          const real ty = std::sin(2 * M_PI * dy / period + phase);
          m = smoothstep(0.0, 0.3, tx * ty);
          break;
        }
        case 8: {  // triangle (up)
          const real h = scale * 0.95;
          const real fy = cy + h * 0.5 - (y + 0.5);  // height above base
          if (fy > 0 && fy < h) {
            const real half_width = (1.0 - fy / h) * scale * 0.85;
            m = smoothstep(half_width, half_width - edge, std::abs(dx));
          }
          break;
        }
        case 9: {  // dot grid
          const real cellx = std::fmod(std::fmod(dx, period) + period, period) - period / 2;
          const real celly = std::fmod(std::fmod(dy, period) + period, period) - period / 2;
          const real rr = std::sqrt(cellx * cellx + celly * celly);
          const real dot = period * 0.28;
          m = smoothstep(dot, dot - edge, rr) * smoothstep(scale * 1.2, scale * 1.1, r);
          break;
        }
        default: break;
      }
      // background gradient between bg and bg2 along grad_angle
      const real gpos = ((x + 0.5) / hw - 0.5) * std::cos(grad_angle) +
                        ((y + 0.5) / hw - 0.5) * std::sin(grad_angle) + 0.5;
      const Rgb base = {bg.r + (bg2.r - bg.r) * gpos, bg.g + (bg2.g - bg.g) * gpos,
                        bg.b + (bg2.b - bg.b) * gpos};
      const real px[3] = {base.r + (fg.r - base.r) * m, base.g + (fg.g - base.g) * m,
                          base.b + (fg.b - base.b) * m};
      for (int c = 0; c < 3; ++c)
        img.v[size_t(c) * hw * hw + size_t(y) * hw + x] =
            std::clamp(px[c] + noise(rng), real(0), real(1));
    }
  }
  return img;
}

data::Dataset make_dataset(int per_class, int hw, uint64_t seed) {
  data::Dataset ds;
  for (int c = 0; c < kNumClasses; ++c) ds.class_names.push_back("class_" + std::to_string(c));
  uint64_t id = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, uint64_t(c) * 1000003ULL + uint64_t(i)));
      data::LabeledExample ex;
      ex.image = render_example(c, hw, rng);
      ex.label = c;
      ex.id = id++;
      ds.examples.push_back(std::move(ex));
    }
  }
  ds.rebuild_index();
  return ds;
}

void write_dataset(const std::string& root, const std::string& split, int per_class, int hw,
                   uint64_t seed) {
  for (int c = 0; c < kNumClasses; ++c) {
    const fs::path dir = fs::path(root) / split / ("class_" + std::to_string(c));
    fs::create_directories(dir);
    for (int i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, uint64_t(c) * 1000003ULL + uint64_t(i)));
      const Tensor img = render_example(c, hw, rng);
      char name[32];
      std::snprintf(name, sizeof(name), "img_%05d.ppm", i);
      data::write_ppm((dir / name).string(), img);
    }
  }
}

}  // namespace dad::synth
