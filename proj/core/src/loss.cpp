#include "slidenav/loss.hpp"

#include <cmath>

#include "slidenav/errors.hpp"

namespace slidenav {

void LossConfig::validate() const {
    if (lambda_l1 < 0 || lambda_dice < 0 || lambda_focal < 0)
        throw ConfigError("loss: lambdas must be non-negative");
    if (foreground_weight < 1.0) throw ConfigError("loss: foreground weight must be >= 1");
    if (epsilon <= 0.0) throw ConfigError("loss: epsilon must be positive");
    if (focal_exponent < 0.0) throw ConfigError("loss: focal exponent must be non-negative");
}

namespace {

void check_shapes(const ImageF& p, const ImageF& g, const char* where) {
    if (p.width != g.width || p.height != g.height || p.channels != g.channels)
        throw DimensionMismatchError(std::string(where) + ": shape mismatch");
    if (p.empty()) throw DimensionMismatchError(std::string(where) + ": empty maps");
}

}  // namespace

double weighted_l1(const ImageF& p, const ImageF& g, const LossConfig& cfg, ImageF* grad) {
    check_shapes(p, g, "weighted_l1");
    const std::size_t n = p.size();
    double weight_sum = 0.0, loss_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = g.data[i] > cfg.foreground_threshold ? cfg.foreground_weight : 1.0;
        weight_sum += w;
        loss_sum += w * std::abs(p.data[i] - g.data[i]);
    }
    if (grad) {
        *grad = ImageF(p.width, p.height, p.channels);
        for (std::size_t i = 0; i < n; ++i) {
            const double w = g.data[i] > cfg.foreground_threshold ? cfg.foreground_weight : 1.0;
            const double d = p.data[i] - g.data[i];
            grad->data[i] = d > 0 ? w / weight_sum : (d < 0 ? -w / weight_sum : 0.0);
        }
    }
    return loss_sum / weight_sum;
}

double soft_dice(const ImageF& p, const ImageF& g, const LossConfig& cfg, ImageF* grad) {
    check_shapes(p, g, "soft_dice");
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        a += p.data[i] * g.data[i];
        b += p.data[i] * p.data[i] + g.data[i] * g.data[i];
    }
    const double num = 2.0 * a + cfg.epsilon;
    const double den = b + cfg.epsilon;
    if (grad) {
        *grad = ImageF(p.width, p.height, p.channels);
        const double inv_den2 = 1.0 / (den * den);
        for (std::size_t i = 0; i < p.size(); ++i)
            grad->data[i] = -(2.0 * g.data[i] * den - num * 2.0 * p.data[i]) * inv_den2;
    }
    return 1.0 - num / den;
}

double soft_focal(const ImageF& p, const ImageF& g, const LossConfig& cfg, ImageF* grad) {
    check_shapes(p, g, "soft_focal");
    const std::size_t n = p.size();
    const double lo = cfg.epsilon, hi = 1.0 - cfg.epsilon;
    const double gamma = cfg.focal_exponent;
    double sum = 0.0;
    if (grad) *grad = ImageF(p.width, p.height, p.channels);
    for (std::size_t i = 0; i < n; ++i) {
        const bool clamped_low = p.data[i] < lo, clamped_high = p.data[i] > hi;
        const double pc = clamped_low ? lo : (clamped_high ? hi : p.data[i]);
        const double t = g.data[i];
        const double d = pc - t;
        const double mod = gamma == 0.0 ? 1.0 : std::pow(std::abs(d), gamma);
        const double ce = -t * std::log(pc) - (1.0 - t) * std::log(1.0 - pc);
        sum += mod * ce;
        if (grad) {
            if (clamped_low || clamped_high) {
                grad->data[i] = 0.0;
                continue;
            }
            double dmod = 0.0;
            if (gamma > 0.0 && d != 0.0)
                dmod = gamma * std::pow(std::abs(d), gamma - 1.0) * (d > 0 ? 1.0 : -1.0);
            const double dce = (pc - t) / (pc * (1.0 - pc));
            grad->data[i] = (dmod * ce + mod * dce) / static_cast<double>(n);
        }
    }
    return sum / static_cast<double>(n);
}

NdslParts ndsl_loss(const ImageF& p, const ImageF& g, const LossConfig& cfg, ImageF* grad) {
    cfg.validate();
    NdslParts parts;
    if (grad) {
        ImageF g1, g2, g3;
        parts.l1 = weighted_l1(p, g, cfg, &g1);
        parts.dice = soft_dice(p, g, cfg, &g2);
        parts.focal = soft_focal(p, g, cfg, &g3);
        *grad = ImageF(p.width, p.height, p.channels);
        for (std::size_t i = 0; i < p.size(); ++i)
            grad->data[i] = cfg.lambda_l1 * g1.data[i] + cfg.lambda_dice * g2.data[i] +
                            cfg.lambda_focal * g3.data[i];
    } else {
        parts.l1 = weighted_l1(p, g, cfg);
        parts.dice = soft_dice(p, g, cfg);
        parts.focal = soft_focal(p, g, cfg);
    }
    parts.total =
        cfg.lambda_l1 * parts.l1 + cfg.lambda_dice * parts.dice + cfg.lambda_focal * parts.focal;
    return parts;
}

ImageF render_annotation(const ImageF& nav, int width, int height) {
    ImageF out = resize_area(nav, width, height);
    double mx = 0.0;
    for (double v : out.data) mx = std::max(mx, v);
    if (mx > 0.0)
        for (double& v : out.data) v /= mx;
    return out;
}

}  // namespace slidenav
