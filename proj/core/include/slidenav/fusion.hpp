#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slidenav/encoder.hpp"
#include "slidenav/image.hpp"
#include "slidenav/pyramid.hpp"

namespace slidenav {

using Eigen::VectorXd;

/// Per-level attention prediction, values in [0,1].
struct Heatmap {
    ImageF values;  // H x W, single channel
    int level_index = 0;
    int level_width = 0;
    int level_height = 0;

    int width() const { return values.width; }
    int height() const { return values.height; }
};

struct McfnConfig {
    int levels = 5;
    int dim = 32;            // token dimension D; divisible by 4 for the decoder
    int grid_side = 16;      // token grid side (render_size / patch_size)
    int render_size = 256;   // heatmap side
    int cmb_window = 4;      // token window side for cross-level attention; 0 = global
    bool enable_mab = true;
    bool enable_cmb_lower = true;
    bool enable_cmb_upper = true;
    std::uint64_t init_seed = 23;

    void validate() const;
};

/// All trainable parameters. Tensor declaration order is the checkpoint
/// order: mag_tokens, MAB projections, CMB projections, gates, decoder.
struct McfnParams {
    McfnConfig config;

    MatrixRM mag_tokens;                        // L x D, one t per level
    MatrixRM mab_wq, mab_wk, mab_wv, mab_wo;    // D x D
    MatrixRM cmb_wq, cmb_wk, cmb_wv, cmb_wo;    // D x D
    double gate_mab = 0.0;                      // injection gate
    double gate_lower = 0.0;                    // lower-neighbor weight
    double gate_upper = 0.0;                    // upper-neighbor weight
    std::vector<double> dec_w1, dec_b1;         // (D/2, D, 3, 3), (D/2)
    std::vector<double> dec_w2, dec_b2;         // (D/4, D/2, 3, 3), (D/4)
    std::vector<double> dec_w3, dec_b3;         // (1, D/4, 3, 3), (1)

    struct TensorRef {
        std::string name;
        double* data;
        std::size_t size;
        std::vector<int> shape;
    };
    void for_each_tensor(const std::function<void(const TensorRef&)>& fn);
    std::size_t num_parameters();

    static McfnParams zeros(const McfnConfig& config);
    static McfnParams init(const McfnConfig& config);  // seeded default init
};

/// Projection set handed to the attention primitive.
struct AttnProjection {
    const MatrixRM* wq;
    const MatrixRM* wk;
    const MatrixRM* wv;
    const MatrixRM* wo;
};

/// Scaled dot-product attention with a single query vector:
/// wo * (softmax((wq q) . (wk k_i) / sqrt(D)) * (wv v_i)).
VectorXd attn(const VectorXd& q, const MatrixRM& keys, const MatrixRM& values,
              const AttnProjection& proj);

/// Level-token injection: X + gate * attn(t_m, X, X) broadcast over rows.
TokenGrid mab_forward(const TokenGrid& x, int m, const McfnParams& params);

/// Block-mean downsample / bilinear upsample of the token grid.
TokenGrid resample_grid(const TokenGrid& x, int target_h, int target_w);

/// Counters for the boundary contract (which neighbors were attended).
struct McfnStats {
    int cmb_lower_reads = 0;
    int cmb_upper_reads = 0;
};

/// Adjacent-level fusion. Neighbors must already be MAB-updated; each is
/// resampled to x's grid and queried with its own level token per spatially
/// aligned window, then broadcast-added under its gate.
TokenGrid cmb_forward(const TokenGrid& x, int m, const TokenGrid* lower,
                      const TokenGrid* upper, const McfnParams& params,
                      McfnStats* stats = nullptr);

/// Conv/upsample decoder: (grid, grid, D) -> (render, render, 1), sigmoid.
Heatmap decode(const TokenGrid& x, const McfnParams& params);

/// Full per-level forward from precomputed token grids (levels indexed by m).
Heatmap mcfn_forward_tokens(const std::vector<TokenGrid>& grids, int m,
                            const McfnParams& params, McfnStats* stats = nullptr);

/// Composes render -> encode -> MAB -> CMB -> decode for one level.
Heatmap mcfn_forward(const MagnificationPyramid& pyramid, int m, const McfnParams& params,
                     const EncoderSpec& spec, McfnStats* stats = nullptr);

/// Forward with saved activations plus backward pass. `loss_grad` is
/// dLoss/dHeatmap on the prediction grid; gradients accumulate into `grads`.
class McfnTape {
public:
    McfnTape(const std::vector<TokenGrid>& grids, int m, const McfnParams& params);

    const Heatmap& heatmap() const { return heatmap_; }
    void backward(const ImageF& loss_grad, McfnParams& grads) const;

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    std::shared_ptr<McfnParams> params_snapshot_;
    Heatmap heatmap_;
};

}  // namespace slidenav
