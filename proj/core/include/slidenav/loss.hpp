#pragma once

#include "slidenav/image.hpp"

namespace slidenav {

struct LossConfig {
    double lambda_l1 = 0.1;
    double lambda_dice = 1.0;
    double lambda_focal = 1.0;
    double foreground_weight = 2.0;     // weight where G > foreground_threshold
    double foreground_threshold = 0.0;  // strictly greater
    double epsilon = 1e-6;
    double focal_exponent = 2.0;

    void validate() const;
};

/// Mean of w(G)*|P-G| with w = foreground_weight where G > threshold else 1,
/// normalized by the mean weight. Optional gradient w.r.t. P.
double weighted_l1(const ImageF& p, const ImageF& g, const LossConfig& cfg,
                   ImageF* grad = nullptr);

/// 1 - (2*sum(PG) + eps) / (sum(P^2) + sum(G^2) + eps).
double soft_dice(const ImageF& p, const ImageF& g, const LossConfig& cfg,
                 ImageF* grad = nullptr);

/// Mean of |P-G|^gamma * (-G log P - (1-G) log(1-P)), P clamped away from 0/1.
double soft_focal(const ImageF& p, const ImageF& g, const LossConfig& cfg,
                  ImageF* grad = nullptr);

struct NdslParts {
    double total = 0.0;
    double l1 = 0.0;
    double dice = 0.0;
    double focal = 0.0;
};

NdslParts ndsl_loss(const ImageF& p, const ImageF& g, const LossConfig& cfg,
                    ImageF* grad = nullptr);

/// Navigation annotation resampled to the prediction grid by area-averaging,
/// then max-renormalized (max exactly 1 unless all-zero).
ImageF render_annotation(const ImageF& nav, int width, int height);

}  // namespace slidenav
