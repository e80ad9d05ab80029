#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slidenav/pyramid.hpp"

namespace slidenav {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Patch tokens on a spatial grid: row i*grid_w + j of `tokens` is the token
/// of grid cell (i, j). All entries finite; (N, D) constant across the levels
/// of one slide under one spec.
struct TokenGrid {
    MatrixRM tokens;      // N x D
    int grid_h = 0;
    int grid_w = 0;
    int level_index = 0;
    int level_width = 0;  // level raster dims, for region coordinate mapping
    int level_height = 0;

    int count() const { return grid_h * grid_w; }
    int dim() const { return static_cast<int>(tokens.cols()); }
};

enum class EncoderKind { toy, external };

struct EncoderSpec {
    int patch_size = 16;
    int token_dim = 32;
    EncoderKind kind = EncoderKind::toy;
    std::uint64_t seed = 17;
    std::string external_name;  // registered factory name when kind == external

    int render_size = 256;
    int grid_side() const { return render_size / patch_size; }
    void validate() const;
};

/// External-encoder adapter: rows are flattened RGB patches (3*patch^2),
/// must return one D-dim token per row.
using ExternalEncoderFn = std::function<MatrixRM(const MatrixRM& patches)>;

void register_external_encoder(const std::string& name, ExternalEncoderFn fn);
bool has_external_encoder(const std::string& name);

/// Level raster resampled to render_size x render_size by area-averaging.
ImageF render_level(const MagnificationPyramid& p, int m, int render_size = 256);

/// Frozen tokenizer. The toy encoder is a fixed seeded random projection of
/// each flattened patch followed by per-token standardization; the external
/// path dispatches to a registered adapter under the same contract.
TokenGrid encode(const ImageF& img, const EncoderSpec& spec);

/// All levels of a slide encoded once (rendering included); index = level.
std::vector<TokenGrid> encode_pyramid(const MagnificationPyramid& p, const EncoderSpec& spec);

}  // namespace slidenav
