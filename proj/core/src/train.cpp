#include "slidenav/train.hpp"

#include <cmath>
#include <fstream>

#include "slidenav/errors.hpp"

namespace slidenav {

void AdamOptimizer::step(McfnParams& params, McfnParams& grads) {
    std::vector<McfnParams::TensorRef> prefs, grefs;
    params.for_each_tensor([&](const McfnParams::TensorRef& t) { prefs.push_back(t); });
    grads.for_each_tensor([&](const McfnParams::TensorRef& t) { grefs.push_back(t); });

    std::size_t total = 0;
    for (const auto& t : prefs) total += t.size;
    if (m_.empty()) {
        m_.assign(total, 0.0);
        v_.assign(total, 0.0);
    } else if (m_.size() != total) {
        throw ConfigError("optimizer: parameter layout changed between steps");
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    std::size_t off = 0;
    for (std::size_t k = 0; k < prefs.size(); ++k) {
        double* p = prefs[k].data;
        const double* g = grefs[k].data;
        for (std::size_t i = 0; i < prefs[k].size; ++i, ++off) {
            m_[off] = cfg_.beta1 * m_[off] + (1.0 - cfg_.beta1) * g[i];
            v_[off] = cfg_.beta2 * v_[off] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m_[off] / bc1;
            const double vhat = v_[off] / bc2;
            p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
}

TrainResult train_cmt_tokens(const std::vector<std::vector<TokenGrid>>& slides,
                             const std::vector<std::vector<ImageF>>& annotations,
                             McfnParams params, const LossConfig& loss_cfg,
                             const OptimizerConfig& opt_cfg) {
    if (slides.empty()) throw DatasetError("train: empty dataset");
    if (annotations.size() != slides.size())
        throw DatasetError("train: annotation count does not match dataset");
    const int levels = static_cast<int>(slides.front().size());
    for (std::size_t s = 0; s < slides.size(); ++s) {
        if (static_cast<int>(slides[s].size()) != levels)
            throw DatasetError("train: inconsistent level counts across slides");
        if (static_cast<int>(annotations[s].size()) != levels)
            throw DatasetError("train: slide " + std::to_string(s) +
                               " lacks an annotation for every level");
    }

    AdamOptimizer opt(opt_cfg);
    TrainResult result;
    result.curve.reserve(static_cast<std::size_t>(opt_cfg.steps));

    const int pairs = static_cast<int>(slides.size()) * levels;
    for (int step = 0; step < opt_cfg.steps; ++step) {
        const int idx = step % pairs;
        const int slide = idx / levels;
        const int level = idx % levels;

        McfnTape tape(slides[static_cast<std::size_t>(slide)], level, params);
        ImageF grad;
        const NdslParts parts =
            ndsl_loss(tape.heatmap().values,
                      annotations[static_cast<std::size_t>(slide)][static_cast<std::size_t>(level)],
                      loss_cfg, &grad);

        McfnParams grads = McfnParams::zeros(params.config);
        tape.backward(grad, grads);
        opt.step(params, grads);

        result.curve.push_back({step, parts.total, parts.l1, parts.dice, parts.focal});
    }
    result.params = std::move(params);
    return result;
}

TrainResult train_cmt(const std::vector<MagnificationPyramid>& dataset, McfnParams params,
                      const EncoderSpec& spec, const LossConfig& loss_cfg,
                      const OptimizerConfig& opt_cfg) {
    for (const auto& slide : dataset)
        if (!slide.has_nav())
            throw DatasetError("train: slide '" + slide.slide_id +
                               "' has no navigation annotations");

    std::vector<std::vector<TokenGrid>> grids;
    std::vector<std::vector<ImageF>> annotations;
    grids.reserve(dataset.size());
    annotations.reserve(dataset.size());
    for (const auto& slide : dataset) {
        grids.push_back(encode_pyramid(slide, spec));
        std::vector<ImageF> navs;
        navs.reserve(static_cast<std::size_t>(slide.num_levels()));
        for (int m = 0; m < slide.num_levels(); ++m)
            navs.push_back(render_annotation(slide.nav_annotations[static_cast<std::size_t>(m)],
                                             params.config.render_size, params.config.render_size));
        annotations.push_back(std::move(navs));
    }
    return train_cmt_tokens(grids, annotations, std::move(params), loss_cfg, opt_cfg);
}

void write_loss_curve_csv(const std::string& path, const std::vector<TrainRecord>& curve) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write loss curve to " + path);
    out << "step,total,l1,dice,focal\n";
    for (const auto& r : curve)
        out << r.step << "," << r.total << "," << r.l1 << "," << r.dice << "," << r.focal << "\n";
}

}  // namespace slidenav
