#pragma once

#include "dad/data.hpp"
#include "dad/discretizer.hpp"
#include "dad/model.hpp"

namespace dad::adversary {

enum class Norm { Linf, L2 };

Norm norm_from_name(const std::string& name);
std::string norm_name(Norm n);

struct AttackConfig {
  real epsilon = 8.0 / 255.0;  // budget in normalized pixel units
  int steps = 1;
  real step_size = 0.1;
  Norm norm = Norm::Linf;

  void validate() const {
    check(epsilon >= 0, "attack epsilon must be >= 0");
    check(steps >= 1, "attack steps must be >= 1");
    check(step_size > 0, "attack step size must be positive");
  }
};

// Differentiable attack target: images -> (mean CE loss, dLoss/dImages).
using GradFn =
    std::function<std::pair<real, Tensor>(const Tensor& images, const std::vector<int>& labels)>;

// Iterated signed-gradient (Linf) / normalized-gradient (L2) ascent on the
// cross-entropy, each step followed by exact projection onto the epsilon
// ball around the start point and clipping to [0,1].
Tensor attack_fn(const GradFn& fn, const Tensor& x, const std::vector<int>& labels,
                 const AttackConfig& cfg);

// Attack a plain classifier in pixel space.
Tensor attack(model::Classifier& m, const Tensor& x, const std::vector<int>& labels,
              const AttackConfig& cfg);

// Gradient target for phi(Q(.)): the discretizer is crossed with
// straight-through gradients at the quantization step.
GradFn through_discretizer(model::Classifier& m, const vq::Discretizer& disc);

struct AdversarialRecord {
  uint64_t sample_id = 0;
  uint16_t label = 0;
  bool accepted = false;
  uint64_t gen_seed = 0;
  Tensor image;                          // Q(x'), f32-quantized values in [0,1]
  std::vector<real> teacher_logits_aug;  // teacher on Q(x')
  std::vector<real> teacher_logits_clean;  // teacher on the original x
};

// Batched generation: for each sample, x_q = Q(x), x' = attack through Q
// starting at x_q, output image Q(x'); accepted iff the teacher still
// predicts the true label on Q(x'). Stored images and logits are rounded to
// f32 before the verdict is computed so reloaded records re-verify exactly.
std::vector<AdversarialRecord> dad_generate(model::Classifier& teacher,
                                            const vq::Discretizer& disc, const Tensor& images,
                                            const std::vector<int>& labels,
                                            const std::vector<uint64_t>& sample_ids,
                                            const AttackConfig& cfg, uint64_t global_seed);

// Same pipeline driven by the student's own gradients, no oracle filter;
// returns the discretized adversarial images Q(x').
Tensor student_attack(model::Classifier& student, const vq::Discretizer& disc, const Tensor& images,
                      const std::vector<int>& labels, const AttackConfig& cfg);

struct CacheHeader {
  uint16_t version = 1;
  Fingerprint teacher_fp;
  Fingerprint discretizer_fp;
  AttackConfig attack;
  uint64_t global_seed = 0;
  uint8_t store_rejected = 0;
};

struct CacheFile {
  CacheHeader header;
  std::vector<AdversarialRecord> records;  // sorted by sample_id

  std::vector<uint64_t> accepted_ids() const;
  const AdversarialRecord* find(uint64_t sample_id) const;
};

struct CacheBuildConfig {
  AttackConfig attack;
  uint64_t seed = 1;
  bool store_rejected = false;
  int workers = 0;      // 0 = library default
  int batch_size = 32;  // generation micro-batch
};

// One generation attempt per sample; per-sample seed derived from
// (seed, sample_id); output canonical (records sorted by id) and
// bit-deterministic in the seed regardless of worker count.
CacheFile build_cache(const data::Dataset& dataset, model::Classifier& teacher,
                      const vq::Discretizer& disc, const CacheBuildConfig& cfg);

std::vector<uint8_t> serialize_cache(const CacheFile& cache);
CacheFile deserialize_cache(const std::vector<uint8_t>& bytes);
void write_cache(const CacheFile& cache, const std::string& path);
CacheFile read_cache(const std::string& path);

// verify stored accepted flags against fresh teacher predictions
struct ReverifyResult {
  size_t checked = 0;
  size_t mismatched = 0;
};
ReverifyResult reverify_cache(const CacheFile& cache, model::Classifier& teacher);

// round every value to the nearest f32 (the cache's on-disk precision)
void round_to_f32(Tensor& t);
void round_to_f32(std::vector<real>& v);

}  // namespace dad::adversary
