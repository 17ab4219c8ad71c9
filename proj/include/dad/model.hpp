#pragma once

#include <memory>

#include "dad/tape.hpp"

namespace dad::model {

struct Conv2d {
  Param w, b;
  int stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng);
  Var forward(Tape& t, Var x) const;
};

struct Linear {
  Param w, b;

  Linear() = default;
  Linear(int in, int out, Rng& rng);
  Var forward(Tape& t, Var x) const;
};

// Receives the pre-normalization activations of each norm layer, in forward
// call order. Layer index 0 is reserved for the raw model input.
struct BnObserver {
  virtual ~BnObserver() = default;
  virtual void observe(int norm_layer, const Tensor& pre_norm) = 0;
};

struct BatchNorm2d {
  Param gamma, beta;  // [C]
  Tensor running_mean, running_var;
  real momentum = 0.1;
  real eps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);
  // train=true uses batch statistics and updates the running ones.
  Var forward(Tape& t, Var x, bool train);
};

class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string arch() const = 0;
  virtual std::string config_json() const = 0;
  virtual int num_classes() const = 0;
  virtual int in_channels() const = 0;
  virtual Var forward(Tape& t, Var images, bool train, BnObserver* obs) = 0;
  virtual std::vector<Param*> params() = 0;
  virtual int norm_layer_count() const { return 0; }

  Var forward(Tape& t, Var images, bool train) { return forward(t, images, train, nullptr); }

  bool frozen = false;

  // eval-mode conveniences (no gradients)
  Tensor logits(const Tensor& images, BnObserver* obs = nullptr);
  std::vector<int> predict(const Tensor& images);

  int64_t param_count();
  // stable digest over arch, config, and the parameter blob
  Fingerprint fingerprint();
};

// ---- probability utilities ----

// rows sum to 1; requires t > 0
Tensor temp_softmax(const Tensor& logits, real t);
// argmax per row; ties resolved to the lowest class index
std::vector<int> argmax_rows(const Tensor& logits);

// ---- architectures ----

// Conv stack: per-stage 3x3 conv (+BN+ReLU), stride 2 where marked, then
// global average pooling and a linear head.
std::unique_ptr<Classifier> make_small_cnn(int num_classes, uint64_t seed);
std::unique_ptr<Classifier> make_wide_cnn(int num_classes, uint64_t seed);
// logits = W*flatten(x) + b; no norm layers (used by toy and oracle setups)
std::unique_ptr<Classifier> make_linear(int in_channels, int hw, int num_classes, uint64_t seed);
// 3-layer MLP, no norm layers
std::unique_ptr<Classifier> make_mlp3(int in_channels, int hw, int hidden, int num_classes,
                                      uint64_t seed);

std::unique_ptr<Classifier> make_classifier(const std::string& arch, const std::string& config_json);

// ---- checkpoint container: magic, version, json header, f64 parameter blob ----

void save_checkpoint(Classifier& model, const std::string& path);
std::unique_ptr<Classifier> load_checkpoint(const std::string& path);

// batched image tensor from [C,H,W] slices
Tensor stack_images(const std::vector<const Tensor*>& images);

}  // namespace dad::model
