#pragma once

#include "dad/data.hpp"
#include "dad/model.hpp"

namespace dad::vq {

struct Codebook {
  Param entries;                      // [K, d]
  std::vector<int64_t> usage_counts;  // hits per entry, maintained by training

  int size() const { return entries.value.dim(0); }
  int dim() const { return entries.value.dim(1); }

  void reset_usage() { usage_counts.assign(size_t(size()), 0); }
};

// Index of the nearest entry by squared Euclidean distance; ties resolve to
// the lowest index.
int nearest_index(const Tensor& entries, const real* vec);

// (index, codeword) for a single latent vector.
std::pair<int, std::vector<real>> quantize(const Codebook& cb, const std::vector<real>& v);

struct VqConfig {
  int f = 4;    // spatial downsample factor (power of two)
  int d = 16;   // latent channels
  int K = 512;  // codebook entries
  uint64_t seed = 1;
};

// Encoder -> codebook quantization -> decoder. Gradients pass the
// quantization step via the straight-through estimator.
class Discretizer {
 public:
  explicit Discretizer(const VqConfig& cfg);

  const VqConfig& config() const { return cfg_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }

  Var encode(Tape& t, Var image) const;  // [B,3,H,W] -> [B,d,H/f,W/f]
  Var decode(Tape& t, Var grid) const;   // [B,d,h,w] -> [B,3,h*f,w*f], values in [0,1]

  struct Quantized {
    Var zq_st;                 // straight-through latent, decoder input
    Var zq_rows;               // raw codeword rows [N,d] (codebook gradient path)
    Var ze_rows;               // encoder output rows [N,d]
    std::vector<int> indices;  // per spatial location, row-major (b,h,w)
  };
  Quantized quantize_grid(Tape& t, Var ze) const;

  Var discretize(Tape& t, Var image) const;  // decode(quantize(encode(x)))

  // value-only conveniences (fresh tape, no gradients)
  Tensor encode_value(const Tensor& image) const;
  Tensor decode_value(const Tensor& grid) const;
  Tensor discretize_value(const Tensor& image) const;
  std::vector<int> code_indices(const Tensor& image) const;

  std::vector<Param*> params();
  Fingerprint fingerprint();

  void init_codebook_from(const Tensor& ze_batch, Rng& rng);
  bool codebook_initialized() const { return codebook_ready_; }
  void mark_codebook_initialized() { codebook_ready_ = true; }

 private:
  VqConfig cfg_;
  std::vector<model::Conv2d> enc_;
  std::vector<model::Conv2d> dec_;
  std::vector<int> dec_upsample_before_;  // stage indices preceded by 2x upsampling
  Codebook codebook_;
  bool codebook_ready_ = false;
};

struct VqTrainConfig {
  int epochs = 12;
  int batch_size = 32;
  real lr = 2e-3;
  real commitment_weight = 0.25;
  real holdout_fraction = 0.1;
  uint64_t seed = 1;
};

struct VqTrainResult {
  std::vector<real> epoch_loss;
  std::vector<real> epoch_perplexity;
  real holdout_mae = 0;
};

// Standard VQ objective: reconstruction + codebook + commitment terms. Dead
// entries are re-seeded from encoder outputs at epoch boundaries.
VqTrainResult train_discretizer(Discretizer& disc, const data::Dataset& dataset,
                                const VqTrainConfig& cfg);

void save_discretizer(Discretizer& disc, const std::string& path);
Discretizer load_discretizer(const std::string& path);

}  // namespace dad::vq
