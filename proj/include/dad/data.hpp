#pragma once

#include <optional>
#include <unordered_map>

#include "dad/tensor.hpp"

namespace dad::data {

// One (image, label) pair. Pixels in [0,1], layout [C,H,W].
struct LabeledExample {
  Tensor image;
  int label = 0;
  uint64_t id = 0;
};

struct Dataset {
  std::vector<LabeledExample> examples;
  std::vector<std::string> class_names;
  std::unordered_map<uint64_t, size_t> index_by_id;

  size_t size() const { return examples.size(); }
  int num_classes() const { return int(class_names.size()); }

  const LabeledExample& by_id(uint64_t id) const {
    auto it = index_by_id.find(id);
    check(it != index_by_id.end(), "unknown sample id " + std::to_string(id));
    return examples[it->second];
  }

  void rebuild_index();
};

// Directory layout: <source_path>/<split_name>/<class_name>/*.ppm
// Classes sorted by name get labels 0..n-1; ids are assigned sequentially in
// (class, filename) sorted order, so reloading an unchanged tree reproduces
// the same ids.
Dataset load_dataset(const std::string& source_path, const std::string& split_name);

// Binary PPM (P6, maxval 255).
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);

enum class CorruptionKind { gaussian_noise, blur, contrast, fog, pixelate, jpeg_like };

CorruptionKind corruption_kind_from_name(const std::string& name);
std::string corruption_kind_name(CorruptionKind kind);
const std::vector<CorruptionKind>& all_corruption_kinds();

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;  // 1..5
  uint64_t seed = 0;
};

// Pure in (image, spec): same inputs always give the same output, clipped to [0,1].
Tensor corrupt(const Tensor& image, const CorruptionSpec& spec);

// Severity parameter tables (index 0 unused; [1..5] valid).
extern const real kGaussianNoiseSigma[6];
extern const real kBlurSigma[6];
extern const real kContrastFactor[6];
extern const real kFogBlend[6];
extern const int kPixelateBlock[6];
extern const real kJpegQuantStep[6];

// Per-kind applicators with explicit parameters (corrupt() dispatches through
// the severity tables above).
Tensor apply_gaussian_noise(const Tensor& image, real sigma, uint64_t seed);
Tensor apply_blur(const Tensor& image, real sigma);
Tensor apply_contrast(const Tensor& image, real factor);
Tensor apply_fog(const Tensor& image, real blend, uint64_t seed);
Tensor apply_pixelate(const Tensor& image, int block);
Tensor apply_jpeg_like(const Tensor& image, real quant_step);

// Corruption suite manifest: one "<kind> <severity>" pair per line, '#' comments.
std::vector<std::pair<CorruptionKind, int>> read_corruption_manifest(const std::string& path);

struct BatchElement {
  uint64_t id = 0;
  bool augmented = false;
};

struct Batch {
  std::vector<BatchElement> elems;
};

// One epoch of batches covering every clean id exactly once and every entry
// of augmented_ids exactly once, shuffled deterministically in (seed, epoch).
// The final partial batch is emitted. Every augmented id must exist in the
// dataset.
std::vector<Batch> mixed_epoch(const Dataset& dataset, const std::vector<uint64_t>& augmented_ids,
                               int batch_size, uint64_t seed, int epoch);

}  // namespace dad::data
