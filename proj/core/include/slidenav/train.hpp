#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slidenav/encoder.hpp"
#include "slidenav/fusion.hpp"
#include "slidenav/loss.hpp"
#include "slidenav/pyramid.hpp"

namespace slidenav {

struct OptimizerConfig {
    double lr = 1e-3;
    int steps = 200;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First-order adaptive-moment update over a parameter set exposed through
/// McfnParams::for_each_tensor. Parameter layout must not change between calls.
class AdamOptimizer {
public:
    explicit AdamOptimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}

    void step(McfnParams& params, McfnParams& grads);

private:
    OptimizerConfig cfg_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

struct TrainRecord {
    int step = 0;
    double total = 0.0, l1 = 0.0, dice = 0.0, focal = 0.0;
};

struct TrainResult {
    McfnParams params;
    std::vector<TrainRecord> curve;
};

/// Desk-scale supervision loop: per step, one (slide, level) pair in dataset
/// order, ndsl loss on the rendered navigation annotation, Adam update on all
/// trainable parameters. Encoder stays frozen; deterministic single-threaded.
TrainResult train_cmt(const std::vector<MagnificationPyramid>& dataset, McfnParams params,
                      const EncoderSpec& spec, const LossConfig& loss_cfg,
                      const OptimizerConfig& opt_cfg);

/// Same loop over pre-encoded token grids and pre-rendered annotations.
TrainResult train_cmt_tokens(const std::vector<std::vector<TokenGrid>>& slides,
                             const std::vector<std::vector<ImageF>>& annotations,
                             McfnParams params, const LossConfig& loss_cfg,
                             const OptimizerConfig& opt_cfg);

void write_loss_curve_csv(const std::string& path, const std::vector<TrainRecord>& curve);

}  // namespace slidenav
