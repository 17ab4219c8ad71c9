#pragma once

#include "dad/data.hpp"

namespace dad::synth {

// Procedural 10-class shape dataset. Each class is a geometric pattern
// (disk, ring, square, frame, cross, diagonal stripes, horizontal stripes,
// checkerboard, triangle, dot grid) rendered with randomized position,
// scale, colors, background gradient, and mild pixel noise, so class
// identity lives in shape rather than color statistics.
inline constexpr int kNumClasses = 10;

Tensor render_example(int cls, int hw, Rng& rng);

// Writes <root>/<split>/class_0..9/img_*.ppm. Deterministic in seed.
void write_dataset(const std::string& root, const std::string& split, int per_class, int hw,
                   uint64_t seed);

// In-memory variant used by tests; same renderer.
data::Dataset make_dataset(int per_class, int hw, uint64_t seed);

}  // namespace dad::synth
