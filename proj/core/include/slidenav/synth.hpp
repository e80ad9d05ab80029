#pragma once

#include <cstdint>
#include <optional>

#include "slidenav/pyramid.hpp"

namespace slidenav {

/// Configuration for the planted-ground-truth slide generator.
struct SynthConfig {
    int num_levels = 5;
    int base_size = 1024;               // highest-level width == height
    double base_magnification = 10.0;
    std::optional<SlideLabel> label;    // unset: drawn from the seed
    int min_blobs = 1;
    int max_blobs = 4;
    double min_tumor_frac = 0.02;       // tumor area band at the highest level
    double max_tumor_frac = 0.30;
    int min_fixations = 24;
    int max_fixations = 48;
    double outside_fixation_prob = 0.1;
    double fixation_sigma_frac = 1.0 / 32.0;  // sigma at base, fraction of base_size
};

/// Deterministic synthetic slide: elliptical tumor blobs with class-dependent
/// texture planted at the highest level, lower levels by exact block-mean
/// downsampling, G_tumor as the blob union, and per-level fixation-based
/// navigation heatmaps (sparse, partly off-tumor, max-normalized).
MagnificationPyramid generate_synthetic_slide(std::uint64_t seed, const SynthConfig& config);

}  // namespace slidenav
