#pragma once

#include <string>
#include <vector>

#include "slidenav/image.hpp"

namespace slidenav {

/// Spearman rank correlation of the flattened maps; ties get average ranks.
/// Throws MetricError for constant inputs.
double spearman(const ImageF& p, const ImageF& g);

/// Average precision with positives = top ceil(0.05 n) cells of G. All
/// rankings break ties by ascending cell index.
double ap_top5(const ImageF& p, const ImageF& g);

/// Jensen-Shannon divergence of the mass-normalized maps, base-2 logs
/// (range [0,1]). Throws MetricError for zero-mass input.
double js_divergence(const ImageF& p, const ImageF& g);

/// Fraction of the top ceil(q n) attention cells lying inside the tumor mask.
/// The mask is rendered to p's grid by block-max. Empty mask: 0 with warning.
double ranked_precision(const ImageF& p, const ImageF& tumor_mask, double q = 0.10);

/// |top-q cells of P intersect tumor| / |tumor cells|. Empty mask throws.
double tumor_recall(const ImageF& p, const ImageF& tumor_mask, double q = 0.10);

struct MetricRow {
    std::string slide_id;
    int level = 0;
    double rho = 0.0, ap5 = 0.0, jsd = 0.0, p10 = 0.0, rec = 0.0;
};

/// Per-slide/level rows plus per-level and overall aggregate rows.
void write_metric_report_csv(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace slidenav
