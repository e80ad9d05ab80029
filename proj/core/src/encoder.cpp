#include "slidenav/encoder.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "slidenav/errors.hpp"
#include "slidenav/rng.hpp"

namespace slidenav {

void EncoderSpec::validate() const {
    if (patch_size <= 0 || render_size <= 0)
        throw ConfigError("encoder: patch_size and render_size must be positive");
    if (render_size % patch_size != 0)
        throw ConfigError("encoder: render_size must be divisible by patch_size");
    if (token_dim <= 0) throw ConfigError("encoder: token_dim must be positive");
    if (kind == EncoderKind::external && external_name.empty())
        throw ConfigError("encoder: external encoder needs a registered name");
}

namespace {

std::map<std::string, ExternalEncoderFn>& registry() {
    static std::map<std::string, ExternalEncoderFn> reg;
    return reg;
}
std::mutex registry_mutex;

MatrixRM toy_projection(int in_dim, int out_dim, std::uint64_t seed) {
    DetRng rng(seed);
    MatrixRM proj(out_dim, in_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (int r = 0; r < out_dim; ++r)
        for (int c = 0; c < in_dim; ++c) proj(r, c) = rng.normal() * scale;
    return proj;
}

}  // namespace

void register_external_encoder(const std::string& name, ExternalEncoderFn fn) {
    std::lock_guard<std::mutex> lock(registry_mutex);
    registry()[name] = std::move(fn);
}

bool has_external_encoder(const std::string& name) {
    std::lock_guard<std::mutex> lock(registry_mutex);
    return registry().count(name) > 0;
}

ImageF render_level(const MagnificationPyramid& p, int m, int render_size) {
    p.level(m);  // bounds check
    ImageF raster = to_float(p.rasters[static_cast<std::size_t>(m)]);
    return resize_area(raster, render_size, render_size);
}

TokenGrid encode(const ImageF& img, const EncoderSpec& spec) {
    spec.validate();
    if (img.width != spec.render_size || img.height != spec.render_size || img.channels != 3)
        throw ConfigError("encode: expected a " + std::to_string(spec.render_size) + "x" +
                          std::to_string(spec.render_size) + " RGB image");

    const int g = spec.grid_side();
    const int ps = spec.patch_size;
    const int in_dim = 3 * ps * ps;
    const int n = g * g;

    MatrixRM patches(n, in_dim);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            const int row = gy * g + gx;
            int k = 0;
            for (int py = 0; py < ps; ++py)
                for (int px = 0; px < ps; ++px)
                    for (int c = 0; c < 3; ++c)
                        patches(row, k++) = img.at(gx * ps + px, gy * ps + py, c);
        }

    MatrixRM tokens;
    if (spec.kind == EncoderKind::toy) {
        static std::mutex cache_mutex;
        static std::map<std::tuple<int, int, std::uint64_t>, MatrixRM> cache;
        const auto key = std::make_tuple(in_dim, spec.token_dim, spec.seed);
        MatrixRM proj;
        {
            std::lock_guard<std::mutex> lock(cache_mutex);
            auto it = cache.find(key);
            if (it == cache.end())
                it = cache.emplace(key, toy_projection(in_dim, spec.token_dim, spec.seed)).first;
            proj = it->second;
        }
        tokens = patches * proj.transpose();
        // per-token standardization; zero-variance tokens pass through
        for (int i = 0; i < n; ++i) {
            auto row = tokens.row(i);
            const double mean = row.mean();
            const double var = (row.array() - mean).square().sum() / spec.token_dim;
            row = (row.array() - mean) / (std::sqrt(var) + 1e-8);
        }
    } else {
        ExternalEncoderFn fn;
        {
            std::lock_guard<std::mutex> lock(registry_mutex);
            auto it = registry().find(spec.external_name);
            if (it == registry().end())
                throw BackendError("encoder backend '" + spec.external_name + "' is not registered");
            fn = it->second;
        }
        try {
            tokens = fn(patches);
        } catch (const std::exception& e) {
            throw BackendError(std::string("encoder backend failed: ") + e.what());
        }
        if (tokens.rows() != n || tokens.cols() != spec.token_dim)
            throw BackendError("encoder backend returned wrong shape");
    }

    if (!tokens.allFinite()) throw NumericError("encode: non-finite token values");

    TokenGrid grid;
    grid.tokens = std::move(tokens);
    grid.grid_h = g;
    grid.grid_w = g;
    return grid;
}

std::vector<TokenGrid> encode_pyramid(const MagnificationPyramid& p, const EncoderSpec& spec) {
    std::vector<TokenGrid> grids;
    grids.reserve(static_cast<std::size_t>(p.num_levels()));
    for (int m = 0; m < p.num_levels(); ++m) {
        TokenGrid g = encode(render_level(p, m, spec.render_size), spec);
        g.level_index = m;
        g.level_width = p.level(m).width;
        g.level_height = p.level(m).height;
        grids.push_back(std::move(g));
    }
    return grids;
}

}  // namespace slidenav
