#include "slidenav/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "slidenav/errors.hpp"
#include "slidenav/rng.hpp"

namespace slidenav {

namespace {

struct Ellipse {
    double cx, cy, rx, ry, angle;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = (dx * ca + dy * sa) / rx;
        const double v = (-dx * sa + dy * ca) / ry;
        return u * u + v * v <= 1.0;
    }
};

// Integer lattice hash -> [0,1). Stable value noise for textures.
double lattice(int x, int y, std::uint64_t salt) {
    std::uint64_t h = salt;
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)) * 0xc2b2ae3d27d4eb4fULL;
    h ^= h >> 29;
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 32;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Bilinear value noise with lattice cell size `cell`.
double smooth_noise(double x, double y, int cell, std::uint64_t salt) {
    const double gx = x / cell, gy = y / cell;
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const double fx = gx - x0, fy = gy - y0;
    const double a = lattice(x0, y0, salt), b = lattice(x0 + 1, y0, salt);
    const double c = lattice(x0, y0 + 1, salt), d = lattice(x0 + 1, y0 + 1, salt);
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
}

struct Rgb {
    double r, g, b;
};

Rgb tumor_texel(SlideLabel label, int x, int y, std::uint64_t salt) {
    const double fine = lattice(x / 3, y / 3, salt ^ 0x51);
    const double coarse = smooth_noise(x, y, 24, salt ^ 0x52);
    switch (label) {
        case SlideLabel::nevus: {
            // smooth brownish nests
            const double v = 0.30 + 0.12 * coarse;
            return {v + 0.12, v - 0.02, v - 0.10};
        }
        case SlideLabel::bcc: {
            // blue-purple with dense dark nuclei
            double r = 0.42, g = 0.34, b = 0.58;
            if (fine > 0.62) { r -= 0.25; g -= 0.22; b -= 0.25; }
            return {r + 0.05 * coarse, g + 0.05 * coarse, b + 0.05 * coarse};
        }
        case SlideLabel::melanoma: {
            // very dark irregular speckle
            const double v = 0.10 + 0.18 * fine + 0.08 * coarse;
            return {v + 0.05, v - 0.02, v - 0.03};
        }
        case SlideLabel::scc: {
            // reddish keratin streaks
            const double streak = 0.5 + 0.5 * std::sin((x + 3.0 * y) * 0.08 + 6.0 * coarse);
            double v = 0.45 + 0.18 * streak;
            if (fine > 0.8) v -= 0.25;
            return {v + 0.22, v - 0.08, v - 0.05};
        }
    }
    return {0.5, 0.5, 0.5};
}

}  // namespace

MagnificationPyramid generate_synthetic_slide(std::uint64_t seed, const SynthConfig& config) {
    if (config.min_blobs < 0 || config.max_blobs < config.min_blobs)
        throw ConfigError("synth: invalid blob count range");
    if (config.min_tumor_frac < 0.0 || config.max_tumor_frac > 1.0 ||
        config.max_tumor_frac < config.min_tumor_frac)
        throw ConfigError("synth: invalid tumor fraction band");
    if (config.min_fixations < 0 || config.max_fixations < config.min_fixations)
        throw ConfigError("synth: invalid fixation count range");

    MagnificationPyramid p;
    p.levels = make_default_levels(config.num_levels, config.base_size,
                                   config.base_magnification);
    p.slide_id = "synth_" + std::to_string(seed);

    DetRng rng(seed);
    const SlideLabel label = config.label
                                 ? *config.label
                                 : static_cast<SlideLabel>(rng.uniform_int(0, kNumClasses - 1));
    p.label = label;

    const int W = config.base_size, H = config.base_size;
    const std::uint64_t salt = seed * 0x9e3779b97f4a7c15ULL + 0xabcdef;

    // Plant elliptical blobs until the tumor-area fraction lands in the band.
    const int n_blobs = static_cast<int>(rng.uniform_int(config.min_blobs, config.max_blobs));
    std::vector<Ellipse> blobs;
    ImageF tumor(W, H, 1, 0.0);
    if (n_blobs > 0) {
        const int max_tries = 64;
        for (int attempt = 0; attempt < max_tries; ++attempt) {
            blobs.clear();
            const double target =
                rng.uniform(config.min_tumor_frac, config.max_tumor_frac);
            const double per_blob_area = target * W * H / n_blobs;
            for (int b = 0; b < n_blobs; ++b) {
                const double ecc = rng.uniform(0.65, 1.5);
                const double r0 = std::sqrt(per_blob_area / M_PI);
                Ellipse e;
                e.rx = r0 * ecc;
                e.ry = r0 / ecc;
                const double margin_x = std::min(e.rx * 1.2, W * 0.45);
                const double margin_y = std::min(e.ry * 1.2, H * 0.45);
                e.cx = rng.uniform(margin_x, W - margin_x);
                e.cy = rng.uniform(margin_y, H - margin_y);
                e.angle = rng.uniform(0.0, M_PI);
                blobs.push_back(e);
            }
            std::fill(tumor.data.begin(), tumor.data.end(), 0.0);
            std::size_t inside = 0;
            for (const auto& e : blobs) {
                const int x0 = std::max(0, static_cast<int>(e.cx - std::max(e.rx, e.ry) - 1));
                const int x1 = std::min(W - 1, static_cast<int>(e.cx + std::max(e.rx, e.ry) + 1));
                const int y0 = std::max(0, static_cast<int>(e.cy - std::max(e.rx, e.ry) - 1));
                const int y1 = std::min(H - 1, static_cast<int>(e.cy + std::max(e.rx, e.ry) + 1));
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x)
                        if (e.contains(x + 0.5, y + 0.5) && tumor.at(x, y, 0) == 0.0) {
                            tumor.at(x, y, 0) = 1.0;
                            ++inside;
                        }
            }
            const double frac = static_cast<double>(inside) / (static_cast<double>(W) * H);
            if (frac >= config.min_tumor_frac && frac <= config.max_tumor_frac) break;
            if (attempt == max_tries - 1)
                throw ConfigError("synth: could not satisfy tumor fraction band");
        }
    }

    // Base raster: tissue-like background, class texture inside blobs.
    ImageF base(W, H, 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double n1 = smooth_noise(x, y, 64, salt ^ 0x10);
            const double n2 = smooth_noise(x, y, 12, salt ^ 0x11);
            Rgb c{0.90 + 0.05 * n1 - 0.03 * n2,
                  0.78 + 0.06 * n1 - 0.04 * n2,
                  0.84 + 0.05 * n1 - 0.03 * n2};
            if (tumor.at(x, y, 0) > 0.0) {
                const Rgb t = tumor_texel(label, x, y, salt);
                c = t;
            }
            base.at(x, y, 0) = std::clamp(c.r, 0.0, 1.0);
            base.at(x, y, 1) = std::clamp(c.g, 0.0, 1.0);
            base.at(x, y, 2) = std::clamp(c.b, 0.0, 1.0);
        }
    }

    // Per-level rasters by exact block-mean from the base.
    const int L = p.num_levels();
    p.rasters.resize(static_cast<std::size_t>(L));
    std::vector<ImageF> level_float(static_cast<std::size_t>(L));
    for (int m = L - 1; m >= 0; --m) {
        const int factor = static_cast<int>(std::lround(p.levels[m].scale_to_base));
        level_float[m] = block_mean_downsample(base, factor);
        p.rasters[m] = to_u8(level_float[m]);
    }

    p.tumor_mask = std::move(tumor);

    // Fixations in base coordinates; mostly inside blobs, sometimes outside.
    struct Fix {
        double x, y;
    };
    std::vector<Fix> fixations;
    const int n_fix =
        static_cast<int>(rng.uniform_int(config.min_fixations, config.max_fixations));
    for (int i = 0; i < n_fix; ++i) {
        const bool outside = blobs.empty() || rng.uniform() < config.outside_fixation_prob;
        if (outside) {
            fixations.push_back({rng.uniform(0.0, W), rng.uniform(0.0, H)});
        } else {
            const auto& e = blobs[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(blobs.size()) - 1))];
            // uniform inside the ellipse via rejection in its bounding box
            double fx = e.cx, fy = e.cy;
            for (int t = 0; t < 32; ++t) {
                const double r = std::max(e.rx, e.ry);
                const double sx = rng.uniform(e.cx - r, e.cx + r);
                const double sy = rng.uniform(e.cy - r, e.cy + r);
                if (e.contains(sx, sy)) {
                    fx = std::clamp(sx, 0.0, W - 1.0);
                    fy = std::clamp(sy, 0.0, H - 1.0);
                    break;
                }
            }
            fixations.push_back({fx, fy});
        }
    }

    // Gaussian-splat navigation maps per level, max-normalized.
    p.nav_annotations.resize(static_cast<std::size_t>(L));
    const double sigma_base = config.fixation_sigma_frac * config.base_size;
    for (int m = 0; m < L; ++m) {
        const auto& lvl = p.levels[static_cast<std::size_t>(m)];
        ImageF nav(lvl.width, lvl.height, 1, 0.0);
        const double scale = 1.0 / lvl.scale_to_base;
        const double sigma = std::max(1.0, sigma_base * scale);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        const int radius = static_cast<int>(std::ceil(3.0 * sigma));
        for (const auto& f : fixations) {
            const double cx = f.x * scale, cy = f.y * scale;
            const int x0 = std::max(0, static_cast<int>(cx) - radius);
            const int x1 = std::min(lvl.width - 1, static_cast<int>(cx) + radius);
            const int y0 = std::max(0, static_cast<int>(cy) - radius);
            const int y1 = std::min(lvl.height - 1, static_cast<int>(cy) + radius);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                    nav.at(x, y, 0) += std::exp(-(dx * dx + dy * dy) * inv2s2);
                }
        }
        double mx = 0.0;
        for (double v : nav.data) mx = std::max(mx, v);
        if (mx > 0.0)
            for (double& v : nav.data) v /= mx;
        p.nav_annotations[static_cast<std::size_t>(m)] = std::move(nav);
    }

    p.validate();
    return p;
}

}  // namespace slidenav
