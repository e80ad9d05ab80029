#include "slidenav/fusion.hpp"

#include <cmath>

#include <Eigen/QR>

#include "slidenav/errors.hpp"
#include "slidenav/rng.hpp"

namespace slidenav {

void McfnConfig::validate() const {
    if (levels < 1) throw ConfigError("mcfn: need at least one level");
    if (dim <= 0 || dim % 4 != 0) throw ConfigError("mcfn: token dim must be a positive multiple of 4");
    if (grid_side <= 0) throw ConfigError("mcfn: grid side must be positive");
    if (render_size % grid_side != 0)
        throw ConfigError("mcfn: render size must be divisible by grid side");
    const int total = render_size / grid_side;
    const int f = static_cast<int>(std::lround(std::sqrt(static_cast<double>(total))));
    if (f * f != total)
        throw ConfigError("mcfn: render/grid ratio must be a perfect square (two upsample stages)");
    if (cmb_window < 0) throw ConfigError("mcfn: negative cmb window");
    if (cmb_window > 0 && grid_side % cmb_window != 0)
        throw ConfigError("mcfn: cmb window must divide the grid side");
}

namespace {

int upsample_factor(const McfnConfig& c) {
    return static_cast<int>(std::lround(std::sqrt(static_cast<double>(c.render_size / c.grid_side))));
}

// ---------------------------------------------------------------------------
// attention primitive

struct AttnCtx {
    VectorXd q;    // raw query
    VectorXd qp;   // wq q
    MatrixRM kp;   // K wk^T
    MatrixRM vp;   // V wv^T
    VectorXd sm;   // softmax weights
    VectorXd ctx;  // vp^T sm
};

VectorXd attn_fwd(const VectorXd& q, const MatrixRM& keys, const MatrixRM& values,
                  const AttnProjection& proj, AttnCtx* save) {
    const int d = static_cast<int>(q.size());
    AttnCtx local;
    AttnCtx& c = save ? *save : local;
    c.q = q;
    c.qp = (*proj.wq) * q;
    c.kp = keys * proj.wk->transpose();
    c.vp = values * proj.wv->transpose();
    VectorXd logits = c.kp * c.qp / std::sqrt(static_cast<double>(d));
    const double mx = logits.maxCoeff();
    VectorXd e = (logits.array() - mx).exp();
    c.sm = e / e.sum();
    c.ctx = c.vp.transpose() * c.sm;
    return (*proj.wo) * c.ctx;
}

struct AttnGrads {
    MatrixRM* wq;
    MatrixRM* wk;
    MatrixRM* wv;
    MatrixRM* wo;
};

// g = dL/d(output). Optional input gradients; dk/dv accumulate (+=).
void attn_bwd(const AttnCtx& c, const MatrixRM& keys, const MatrixRM& values,
              const AttnProjection& proj, const VectorXd& g, const AttnGrads& out,
              VectorXd* dq, MatrixRM* dk, MatrixRM* dv) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.q.size()));

    *out.wo += g * c.ctx.transpose();
    const VectorXd dctx = proj.wo->transpose() * g;

    const VectorXd dsm = c.vp * dctx;
    // dvp row i = sm_i * dctx
    *out.wv += (c.sm * dctx.transpose()).transpose() * values;  // dvp^T V
    if (dv) *dv += (c.sm * dctx.transpose()) * (*proj.wv);

    const double dot = c.sm.dot(dsm);
    const VectorXd dlog = c.sm.array() * (dsm.array() - dot);

    const VectorXd dqp = c.kp.transpose() * dlog * inv_sqrt_d;
    const MatrixRM dkp = dlog * c.qp.transpose() * inv_sqrt_d;

    *out.wq += dqp * c.q.transpose();
    if (dq) *dq += proj.wq->transpose() * dqp;
    *out.wk += dkp.transpose() * keys;
    if (dk) *dk += dkp * (*proj.wk);
}

// ---------------------------------------------------------------------------
// token-grid resampling with adjoint

enum class ResampleMode { identity, block_mean, bilinear };

struct ResampleInfo {
    ResampleMode mode = ResampleMode::identity;
    int src_h = 0, src_w = 0, dst_h = 0, dst_w = 0;
};

MatrixRM resample_tokens(const MatrixRM& src, int src_h, int src_w, int dst_h, int dst_w,
                         ResampleInfo* info) {
    if (info) *info = {ResampleMode::identity, src_h, src_w, dst_h, dst_w};
    if (src_h == dst_h && src_w == dst_w) return src;

    const int d = static_cast<int>(src.cols());
    MatrixRM out(dst_h * dst_w, d);
    if (dst_h <= src_h && dst_w <= src_w) {
        if (src_h % dst_h != 0 || src_w % dst_w != 0)
            throw ResampleError("resample_grid: non-integer block factor for downsampling");
        const int fy = src_h / dst_h, fx = src_w / dst_w;
        const double inv = 1.0 / (fy * fx);
        for (int oy = 0; oy < dst_h; ++oy)
            for (int ox = 0; ox < dst_w; ++ox) {
                Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
                for (int iy = 0; iy < fy; ++iy)
                    for (int ix = 0; ix < fx; ++ix)
                        acc += src.row((oy * fy + iy) * src_w + (ox * fx + ix));
                out.row(oy * dst_w + ox) = acc * inv;
            }
        if (info) info->mode = ResampleMode::block_mean;
    } else if (dst_h >= src_h && dst_w >= src_w) {
        for (int oy = 0; oy < dst_h; ++oy) {
            double sy = (oy + 0.5) * src_h / static_cast<double>(dst_h) - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(src_h - 1));
            const int y0 = static_cast<int>(std::floor(sy));
            const int y1 = std::min(y0 + 1, src_h - 1);
            const double fy = sy - y0;
            for (int ox = 0; ox < dst_w; ++ox) {
                double sx = (ox + 0.5) * src_w / static_cast<double>(dst_w) - 0.5;
                sx = std::clamp(sx, 0.0, static_cast<double>(src_w - 1));
                const int x0 = static_cast<int>(std::floor(sx));
                const int x1 = std::min(x0 + 1, src_w - 1);
                const double fx = sx - x0;
                out.row(oy * dst_w + ox) =
                    (1 - fy) * ((1 - fx) * src.row(y0 * src_w + x0) + fx * src.row(y0 * src_w + x1)) +
                    fy * ((1 - fx) * src.row(y1 * src_w + x0) + fx * src.row(y1 * src_w + x1));
            }
        }
        if (info) info->mode = ResampleMode::bilinear;
    } else {
        throw ResampleError("resample_grid: mixed up/down resampling is not supported");
    }
    return out;
}

// Adjoint of resample_tokens: scatters d_out (dst grid) back onto the source grid.
MatrixRM resample_adjoint(const MatrixRM& d_out, const ResampleInfo& info) {
    if (info.mode == ResampleMode::identity) return d_out;
    const int d = static_cast<int>(d_out.cols());
    MatrixRM d_src = MatrixRM::Zero(info.src_h * info.src_w, d);
    if (info.mode == ResampleMode::block_mean) {
        const int fy = info.src_h / info.dst_h, fx = info.src_w / info.dst_w;
        const double inv = 1.0 / (fy * fx);
        for (int oy = 0; oy < info.dst_h; ++oy)
            for (int ox = 0; ox < info.dst_w; ++ox)
                for (int iy = 0; iy < fy; ++iy)
                    for (int ix = 0; ix < fx; ++ix)
                        d_src.row((oy * fy + iy) * info.src_w + (ox * fx + ix)) +=
                            d_out.row(oy * info.dst_w + ox) * inv;
    } else {
        for (int oy = 0; oy < info.dst_h; ++oy) {
            double sy = (oy + 0.5) * info.src_h / static_cast<double>(info.dst_h) - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(info.src_h - 1));
            const int y0 = static_cast<int>(std::floor(sy));
            const int y1 = std::min(y0 + 1, info.src_h - 1);
            const double fy = sy - y0;
            for (int ox = 0; ox < info.dst_w; ++ox) {
                double sx = (ox + 0.5) * info.src_w / static_cast<double>(info.dst_w) - 0.5;
                sx = std::clamp(sx, 0.0, static_cast<double>(info.src_w - 1));
                const int x0 = static_cast<int>(std::floor(sx));
                const int x1 = std::min(x0 + 1, info.src_w - 1);
                const double fx = sx - x0;
                const auto g = d_out.row(oy * info.dst_w + ox);
                d_src.row(y0 * info.src_w + x0) += (1 - fy) * (1 - fx) * g;
                d_src.row(y0 * info.src_w + x1) += (1 - fy) * fx * g;
                d_src.row(y1 * info.src_w + x0) += fy * (1 - fx) * g;
                d_src.row(y1 * info.src_w + x1) += fy * fx * g;
            }
        }
    }
    return d_src;
}

// ---------------------------------------------------------------------------
// decoder helpers (channel-major planes)

struct Planes {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Planes() = default;
    Planes(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    double& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    double at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
};

// 3x3 same conv, zero padding.
Planes conv3x3(const Planes& in, const std::vector<double>& weight,
               const std::vector<double>& bias, int c_out) {
    Planes out(c_out, in.h, in.w);
    for (int co = 0; co < c_out; ++co) {
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) out.at(co, y, x) = bias[static_cast<std::size_t>(co)];
        for (int ci = 0; ci < in.c; ++ci) {
            const double* wbase = &weight[((static_cast<std::size_t>(co) * in.c + ci) * 3) * 3];
            for (int y = 0; y < in.h; ++y) {
                const int y0 = std::max(0, y - 1), y1 = std::min(in.h - 1, y + 1);
                for (int x = 0; x < in.w; ++x) {
                    const int x0 = std::max(0, x - 1), x1 = std::min(in.w - 1, x + 1);
                    double acc = 0.0;
                    for (int yy = y0; yy <= y1; ++yy)
                        for (int xx = x0; xx <= x1; ++xx)
                            acc += wbase[(yy - y + 1) * 3 + (xx - x + 1)] * in.at(ci, yy, xx);
                    out.at(co, y, x) += acc;
                }
            }
        }
    }
    return out;
}

// Gradients of conv3x3: returns d_in, accumulates dw/db.
Planes conv3x3_bwd(const Planes& d_out, const Planes& in, const std::vector<double>& weight,
                   std::vector<double>& d_weight, std::vector<double>& d_bias) {
    const int c_out = d_out.c;
    Planes d_in(in.c, in.h, in.w);
    for (int co = 0; co < c_out; ++co) {
        double db = 0.0;
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) db += d_out.at(co, y, x);
        d_bias[static_cast<std::size_t>(co)] += db;
        for (int ci = 0; ci < in.c; ++ci) {
            const double* wbase = &weight[((static_cast<std::size_t>(co) * in.c + ci) * 3) * 3];
            double* dwbase = &d_weight[((static_cast<std::size_t>(co) * in.c + ci) * 3) * 3];
            for (int y = 0; y < in.h; ++y) {
                const int y0 = std::max(0, y - 1), y1 = std::min(in.h - 1, y + 1);
                for (int x = 0; x < in.w; ++x) {
                    const double g = d_out.at(co, y, x);
                    if (g == 0.0) continue;
                    const int x0 = std::max(0, x - 1), x1 = std::min(in.w - 1, x + 1);
                    for (int yy = y0; yy <= y1; ++yy)
                        for (int xx = x0; xx <= x1; ++xx) {
                            const int k = (yy - y + 1) * 3 + (xx - x + 1);
                            dwbase[k] += g * in.at(ci, yy, xx);
                            d_in.at(ci, yy, xx) += g * wbase[k];
                        }
                }
            }
        }
    }
    return d_in;
}

Planes upsample_nn(const Planes& in, int f) {
    Planes out(in.c, in.h * f, in.w * f);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) out.at(c, y, x) = in.at(c, y / f, x / f);
    return out;
}

Planes upsample_nn_bwd(const Planes& d_out, int f) {
    Planes d_in(d_out.c, d_out.h / f, d_out.w / f);
    for (int c = 0; c < d_out.c; ++c)
        for (int y = 0; y < d_out.h; ++y)
            for (int x = 0; x < d_out.w; ++x) d_in.at(c, y / f, x / f) += d_out.at(c, y, x);
    return d_in;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

struct DecoderSaved {
    Planes f0;       // token planes (conv1 input)
    Planes c1, c2;   // pre-activations
    Planes u1, u2;   // conv2 / conv3 inputs
    Planes p;        // sigmoid output
};

Planes tokens_to_planes(const MatrixRM& tokens, int gh, int gw) {
    const int d = static_cast<int>(tokens.cols());
    Planes out(d, gh, gw);
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x)
            for (int c = 0; c < d; ++c) out.at(c, y, x) = tokens(y * gw + x, c);
    return out;
}

Planes decoder_fwd(const MatrixRM& tokens, int gh, int gw, const McfnParams& params,
                   DecoderSaved* save) {
    const McfnConfig& cfg = params.config;
    const int d = cfg.dim;
    const int f = upsample_factor(cfg);
    DecoderSaved local;
    DecoderSaved& s = save ? *save : local;

    s.f0 = tokens_to_planes(tokens, gh, gw);
    s.c1 = conv3x3(s.f0, params.dec_w1, params.dec_b1, d / 2);
    Planes a1 = s.c1;
    for (double& x : a1.v) x = silu(x);
    s.u1 = upsample_nn(a1, f);
    s.c2 = conv3x3(s.u1, params.dec_w2, params.dec_b2, d / 4);
    Planes a2 = s.c2;
    for (double& x : a2.v) x = silu(x);
    s.u2 = upsample_nn(a2, f);
    Planes c3 = conv3x3(s.u2, params.dec_w3, params.dec_b3, 1);
    s.p = c3;
    for (double& x : s.p.v) x = 1.0 / (1.0 + std::exp(-x));
    return s.p;
}

// d_p is dLoss/dHeatmap; returns dLoss/dTokens, accumulates decoder grads.
MatrixRM decoder_bwd(const Planes& d_p, const DecoderSaved& s, const McfnParams& params,
                     McfnParams& grads, int gh, int gw) {
    const int f = upsample_factor(params.config);
    Planes d_c3 = d_p;
    for (std::size_t i = 0; i < d_c3.v.size(); ++i)
        d_c3.v[i] = d_p.v[i] * s.p.v[i] * (1.0 - s.p.v[i]);

    Planes d_u2 = conv3x3_bwd(d_c3, s.u2, params.dec_w3, grads.dec_w3, grads.dec_b3);
    Planes d_a2 = upsample_nn_bwd(d_u2, f);
    Planes d_c2 = d_a2;
    for (std::size_t i = 0; i < d_c2.v.size(); ++i) d_c2.v[i] = d_a2.v[i] * silu_grad(s.c2.v[i]);

    Planes d_u1 = conv3x3_bwd(d_c2, s.u1, params.dec_w2, grads.dec_w2, grads.dec_b2);
    Planes d_a1 = upsample_nn_bwd(d_u1, f);
    Planes d_c1 = d_a1;
    for (std::size_t i = 0; i < d_c1.v.size(); ++i) d_c1.v[i] = d_a1.v[i] * silu_grad(s.c1.v[i]);

    Planes d_f0 = conv3x3_bwd(d_c1, s.f0, params.dec_w1, grads.dec_w1, grads.dec_b1);

    const int d = params.config.dim;
    MatrixRM d_tokens(gh * gw, d);
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x)
            for (int c = 0; c < d; ++c) d_tokens(y * gw + x, c) = d_f0.at(c, y, x);
    return d_tokens;
}

std::vector<std::vector<int>> window_rows(int gh, int gw, int window) {
    std::vector<std::vector<int>> wins;
    const int wy_n = window > 0 ? gh / window : 1;
    const int wx_n = window > 0 ? gw / window : 1;
    const int wh = window > 0 ? window : gh;
    const int ww = window > 0 ? window : gw;
    for (int wy = 0; wy < wy_n; ++wy)
        for (int wx = 0; wx < wx_n; ++wx) {
            std::vector<int> rows;
            rows.reserve(static_cast<std::size_t>(wh) * ww);
            for (int iy = 0; iy < wh; ++iy)
                for (int ix = 0; ix < ww; ++ix)
                    rows.push_back((wy * wh + iy) * gw + (wx * ww + ix));
            wins.push_back(std::move(rows));
        }
    return wins;
}

}  // namespace

// ---------------------------------------------------------------------------
// parameters

McfnParams McfnParams::zeros(const McfnConfig& config) {
    config.validate();
    McfnParams p;
    p.config = config;
    const int L = config.levels, D = config.dim;
    p.mag_tokens = MatrixRM::Zero(L, D);
    p.mab_wq = p.mab_wk = p.mab_wv = p.mab_wo = MatrixRM::Zero(D, D);
    p.cmb_wq = p.cmb_wk = p.cmb_wv = p.cmb_wo = MatrixRM::Zero(D, D);
    p.gate_mab = p.gate_lower = p.gate_upper = 0.0;
    p.dec_w1.assign(static_cast<std::size_t>(D / 2) * D * 9, 0.0);
    p.dec_b1.assign(static_cast<std::size_t>(D / 2), 0.0);
    p.dec_w2.assign(static_cast<std::size_t>(D / 4) * (D / 2) * 9, 0.0);
    p.dec_b2.assign(static_cast<std::size_t>(D / 4), 0.0);
    p.dec_w3.assign(static_cast<std::size_t>(1) * (D / 4) * 9, 0.0);
    p.dec_b3.assign(1, 0.0);
    return p;
}

namespace {

MatrixRM orthogonal_init(int d, DetRng& rng) {
    MatrixRM a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < d; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return q;
}

void kaiming_fill(std::vector<double>& w, int fan_in, DetRng& rng) {
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (double& x : w) x = rng.normal() * std_dev;
}

}  // namespace

McfnParams McfnParams::init(const McfnConfig& config) {
    McfnParams p = zeros(config);
    DetRng rng(config.init_seed);
    const int L = config.levels, D = config.dim;
    const double token_std = 1.0 / std::sqrt(static_cast<double>(D));
    for (int m = 0; m < L; ++m)
        for (int j = 0; j < D; ++j) p.mag_tokens(m, j) = rng.normal() * token_std;
    p.mab_wq = orthogonal_init(D, rng);
    p.mab_wk = orthogonal_init(D, rng);
    p.mab_wv = orthogonal_init(D, rng);
    p.mab_wo = orthogonal_init(D, rng);
    p.cmb_wq = orthogonal_init(D, rng);
    p.cmb_wk = orthogonal_init(D, rng);
    p.cmb_wv = orthogonal_init(D, rng);
    p.cmb_wo = orthogonal_init(D, rng);
    p.gate_mab = p.gate_lower = p.gate_upper = 0.1;
    kaiming_fill(p.dec_w1, D * 9, rng);
    kaiming_fill(p.dec_w2, (D / 2) * 9, rng);
    kaiming_fill(p.dec_w3, (D / 4) * 9, rng);
    return p;
}

void McfnParams::for_each_tensor(const std::function<void(const TensorRef&)>& fn) {
    const int L = config.levels, D = config.dim;
    auto mat = [&](const char* name, MatrixRM& m) {
        fn({name, m.data(), static_cast<std::size_t>(m.size()),
            {static_cast<int>(m.rows()), static_cast<int>(m.cols())}});
    };
    auto vec = [&](const char* name, std::vector<double>& v, std::vector<int> shape) {
        fn({name, v.data(), v.size(), std::move(shape)});
    };
    auto scalar = [&](const char* name, double& s) { fn({name, &s, 1, {1}}); };

    mat("mag_tokens", mag_tokens);
    mat("mab_wq", mab_wq);
    mat("mab_wk", mab_wk);
    mat("mab_wv", mab_wv);
    mat("mab_wo", mab_wo);
    mat("cmb_wq", cmb_wq);
    mat("cmb_wk", cmb_wk);
    mat("cmb_wv", cmb_wv);
    mat("cmb_wo", cmb_wo);
    scalar("gate_mab", gate_mab);
    scalar("gate_lower", gate_lower);
    scalar("gate_upper", gate_upper);
    vec("dec_w1", dec_w1, {D / 2, D, 3, 3});
    vec("dec_b1", dec_b1, {D / 2});
    vec("dec_w2", dec_w2, {D / 4, D / 2, 3, 3});
    vec("dec_b2", dec_b2, {D / 4});
    vec("dec_w3", dec_w3, {1, D / 4, 3, 3});
    vec("dec_b3", dec_b3, {1});
    (void)L;
}

std::size_t McfnParams::num_parameters() {
    std::size_t n = 0;
    for_each_tensor([&](const TensorRef& t) { n += t.size; });
    return n;
}

// ---------------------------------------------------------------------------
// public single ops

VectorXd attn(const VectorXd& q, const MatrixRM& keys, const MatrixRM& values,
              const AttnProjection& proj) {
    if (!q.allFinite() || !keys.allFinite() || !values.allFinite())
        throw NumericError("attn: non-finite input");
    if (keys.rows() != values.rows() || keys.cols() != q.size() || values.cols() != q.size())
        throw DimensionMismatchError("attn: dimension mismatch");
    return attn_fwd(q, keys, values, proj, nullptr);
}

TokenGrid mab_forward(const TokenGrid& x, int m, const McfnParams& params) {
    if (m < 0 || m >= params.config.levels)
        throw ConfigError("mab_forward: no magnification token for level " + std::to_string(m));
    if (!x.tokens.allFinite()) throw NumericError("mab_forward: non-finite tokens");
    const AttnProjection proj{&params.mab_wq, &params.mab_wk, &params.mab_wv, &params.mab_wo};
    const VectorXd a = attn_fwd(params.mag_tokens.row(m), x.tokens, x.tokens, proj, nullptr);
    TokenGrid y = x;
    if (params.gate_mab != 0.0)
        y.tokens.rowwise() += (params.gate_mab * a).transpose();
    return y;
}

TokenGrid resample_grid(const TokenGrid& x, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0) throw ResampleError("resample_grid: non-positive target");
    TokenGrid out = x;
    out.tokens = resample_tokens(x.tokens, x.grid_h, x.grid_w, target_h, target_w, nullptr);
    out.grid_h = target_h;
    out.grid_w = target_w;
    return out;
}

TokenGrid cmb_forward(const TokenGrid& x, int m, const TokenGrid* lower, const TokenGrid* upper,
                      const McfnParams& params, McfnStats* stats) {
    TokenGrid z = x;
    const AttnProjection proj{&params.cmb_wq, &params.cmb_wk, &params.cmb_wv, &params.cmb_wo};
    const auto wins = window_rows(x.grid_h, x.grid_w, params.config.cmb_window);

    auto fuse = [&](const TokenGrid& nb, int nb_level, double gate, bool is_lower) {
        if (nb.dim() != x.dim())
            throw DimensionMismatchError("cmb_forward: neighbor token dim mismatch");
        if (nb_level < 0 || nb_level >= params.config.levels)
            throw ConfigError("cmb_forward: no magnification token for neighbor level " +
                              std::to_string(nb_level));
        const MatrixRM resampled =
            resample_tokens(nb.tokens, nb.grid_h, nb.grid_w, x.grid_h, x.grid_w, nullptr);
        const VectorXd t = params.mag_tokens.row(nb_level);
        for (const auto& rows : wins) {
            MatrixRM kw(static_cast<int>(rows.size()), x.dim());
            for (std::size_t i = 0; i < rows.size(); ++i) kw.row(static_cast<int>(i)) = resampled.row(rows[i]);
            const VectorXd b = attn_fwd(t, kw, kw, proj, nullptr);
            if (gate != 0.0)
                for (int r : rows) z.tokens.row(r) += gate * b.transpose();
        }
        if (stats) (is_lower ? stats->cmb_lower_reads : stats->cmb_upper_reads)++;
    };

    if (lower) fuse(*lower, m - 1, params.gate_lower, true);
    if (upper) fuse(*upper, m + 1, params.gate_upper, false);
    return z;
}

Heatmap decode(const TokenGrid& x, const McfnParams& params) {
    if (!x.tokens.allFinite()) throw NumericError("decode: non-finite tokens");
    if (x.dim() != params.config.dim)
        throw DimensionMismatchError("decode: token dim does not match params");
    Planes p = decoder_fwd(x.tokens, x.grid_h, x.grid_w, params, nullptr);
    Heatmap h;
    h.values = ImageF(p.w, p.h, 1);
    for (int y = 0; y < p.h; ++y)
        for (int xx = 0; xx < p.w; ++xx) h.values.at(xx, y, 0) = p.at(0, y, xx);
    h.level_index = x.level_index;
    h.level_width = x.level_width;
    h.level_height = x.level_height;
    return h;
}

// ---------------------------------------------------------------------------
// tape

struct McfnTape::Impl {
    McfnConfig config;
    int target = 0;

    struct LevelMab {
        int level = 0;
        MatrixRM x;  // encoder tokens
        AttnCtx ctx;
        VectorXd a;
        MatrixRM y;  // post-MAB
        bool mab_applied = false;
    };
    // indexed 0=lower,1=target,2=upper where present
    std::vector<LevelMab> mabs;
    int idx_of_level(int level) const {
        for (std::size_t i = 0; i < mabs.size(); ++i)
            if (mabs[i].level == level) return static_cast<int>(i);
        return -1;
    }

    struct CmbNeighbor {
        int level = 0;
        bool is_lower = false;
        MatrixRM resampled;
        ResampleInfo rs;
        std::vector<AttnCtx> win_ctx;
        std::vector<VectorXd> win_b;
    };
    std::vector<CmbNeighbor> neighbors;
    std::vector<std::vector<int>> wins;

    MatrixRM z;  // CMB output (decoder input)
    DecoderSaved dec;
    int grid_h = 0, grid_w = 0;
};

McfnTape::McfnTape(const std::vector<TokenGrid>& grids, int m, const McfnParams& params) {
    const McfnConfig& cfg = params.config;
    cfg.validate();
    if (m < 0 || m >= static_cast<int>(grids.size()))
        throw LevelNotFoundError("mcfn: level " + std::to_string(m) + " outside token grids");
    if (static_cast<int>(grids.size()) > cfg.levels)
        throw ConfigError("mcfn: more grids than configured levels");

    impl_ = std::make_shared<Impl>();
    impl_->config = cfg;
    impl_->target = m;
    impl_->grid_h = grids[static_cast<std::size_t>(m)].grid_h;
    impl_->grid_w = grids[static_cast<std::size_t>(m)].grid_w;

    const AttnProjection mab_proj{&params.mab_wq, &params.mab_wk, &params.mab_wv, &params.mab_wo};
    const AttnProjection cmb_proj{&params.cmb_wq, &params.cmb_wk, &params.cmb_wv, &params.cmb_wo};

    const bool want_lower = cfg.enable_cmb_lower && m - 1 >= 0;
    const bool want_upper = cfg.enable_cmb_upper && m + 1 < static_cast<int>(grids.size());

    std::vector<int> needed;
    if (want_lower) needed.push_back(m - 1);
    needed.push_back(m);
    if (want_upper) needed.push_back(m + 1);

    for (int level : needed) {
        Impl::LevelMab lm;
        lm.level = level;
        lm.x = grids[static_cast<std::size_t>(level)].tokens;
        if (!lm.x.allFinite()) throw NumericError("mcfn: non-finite encoder tokens");
        if (cfg.enable_mab) {
            lm.a = attn_fwd(params.mag_tokens.row(level), lm.x, lm.x, mab_proj, &lm.ctx);
            lm.y = lm.x;
            if (params.gate_mab != 0.0)
                lm.y.rowwise() += (params.gate_mab * lm.a).transpose();
            lm.mab_applied = true;
        } else {
            lm.y = lm.x;
        }
        impl_->mabs.push_back(std::move(lm));
    }

    impl_->wins = window_rows(impl_->grid_h, impl_->grid_w, cfg.cmb_window);
    const int target_idx = impl_->idx_of_level(m);
    impl_->z = impl_->mabs[static_cast<std::size_t>(target_idx)].y;

    auto run_neighbor = [&](int level, bool is_lower, double gate) {
        Impl::CmbNeighbor nb;
        nb.level = level;
        nb.is_lower = is_lower;
        const auto& src = impl_->mabs[static_cast<std::size_t>(impl_->idx_of_level(level))];
        const auto& g = grids[static_cast<std::size_t>(level)];
        nb.resampled = resample_tokens(src.y, g.grid_h, g.grid_w, impl_->grid_h, impl_->grid_w, &nb.rs);
        const VectorXd t = params.mag_tokens.row(level);
        nb.win_ctx.resize(impl_->wins.size());
        nb.win_b.resize(impl_->wins.size());
        for (std::size_t wi = 0; wi < impl_->wins.size(); ++wi) {
            const auto& rows = impl_->wins[wi];
            MatrixRM kw(static_cast<int>(rows.size()), cfg.dim);
            for (std::size_t i = 0; i < rows.size(); ++i)
                kw.row(static_cast<int>(i)) = nb.resampled.row(rows[i]);
            nb.win_b[wi] = attn_fwd(t, kw, kw, cmb_proj, &nb.win_ctx[wi]);
            if (gate != 0.0)
                for (int r : rows) impl_->z.row(r) += gate * nb.win_b[wi].transpose();
        }
        impl_->neighbors.push_back(std::move(nb));
    };

    if (want_lower) run_neighbor(m - 1, true, params.gate_lower);
    if (want_upper) run_neighbor(m + 1, false, params.gate_upper);

    Planes p = decoder_fwd(impl_->z, impl_->grid_h, impl_->grid_w, params, &impl_->dec);
    heatmap_.values = ImageF(p.w, p.h, 1);
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x) heatmap_.values.at(x, y, 0) = p.at(0, y, x);
    const auto& tg = grids[static_cast<std::size_t>(m)];
    heatmap_.level_index = tg.level_index;
    heatmap_.level_width = tg.level_width;
    heatmap_.level_height = tg.level_height;

    // the tape needs the exact parameter values again at backward time
    params_snapshot_ = std::make_shared<McfnParams>(params);
}

void McfnTape::backward(const ImageF& loss_grad, McfnParams& grads) const {
    const Impl& im = *impl_;
    const McfnParams& params = *params_snapshot_;
    const McfnConfig& cfg = im.config;
    if (loss_grad.width != heatmap_.values.width || loss_grad.height != heatmap_.values.height)
        throw DimensionMismatchError("mcfn backward: loss gradient shape mismatch");

    Planes d_p(1, loss_grad.height, loss_grad.width);
    for (int y = 0; y < loss_grad.height; ++y)
        for (int x = 0; x < loss_grad.width; ++x) d_p.at(0, y, x) = loss_grad.at(x, y, 0);

    MatrixRM d_z = decoder_bwd(d_p, im.dec, params, grads, im.grid_h, im.grid_w);

    // gradient flowing into each MAB output
    std::vector<MatrixRM> d_y(im.mabs.size());
    for (std::size_t i = 0; i < im.mabs.size(); ++i)
        d_y[i] = MatrixRM::Zero(im.mabs[i].y.rows(), im.mabs[i].y.cols());

    const int target_idx = im.idx_of_level(im.target);
    d_y[static_cast<std::size_t>(target_idx)] += d_z;

    const AttnProjection cmb_proj{&params.cmb_wq, &params.cmb_wk, &params.cmb_wv, &params.cmb_wo};
    const AttnGrads cmb_grads{&grads.cmb_wq, &grads.cmb_wk, &grads.cmb_wv, &grads.cmb_wo};

    for (const auto& nb : im.neighbors) {
        const double gate = nb.is_lower ? params.gate_lower : params.gate_upper;
        double& d_gate = nb.is_lower ? grads.gate_lower : grads.gate_upper;
        MatrixRM d_resampled = MatrixRM::Zero(nb.resampled.rows(), nb.resampled.cols());

        for (std::size_t wi = 0; wi < im.wins.size(); ++wi) {
            const auto& rows = im.wins[wi];
            VectorXd g_rows = VectorXd::Zero(cfg.dim);
            for (int r : rows) g_rows += d_z.row(r).transpose();
            d_gate += nb.win_b[wi].dot(g_rows);
            if (gate == 0.0 || g_rows.isZero(0.0)) continue;

            const VectorXd d_b = gate * g_rows;
            MatrixRM kw(static_cast<int>(rows.size()), cfg.dim);
            for (std::size_t i = 0; i < rows.size(); ++i)
                kw.row(static_cast<int>(i)) = nb.resampled.row(rows[i]);
            VectorXd d_t = VectorXd::Zero(cfg.dim);
            MatrixRM d_kw = MatrixRM::Zero(kw.rows(), kw.cols());
            attn_bwd(nb.win_ctx[wi], kw, kw, cmb_proj, d_b, cmb_grads, &d_t, &d_kw, &d_kw);
            grads.mag_tokens.row(nb.level) += d_t.transpose();
            for (std::size_t i = 0; i < rows.size(); ++i)
                d_resampled.row(rows[i]) += d_kw.row(static_cast<int>(i));
        }
        const int nb_idx = im.idx_of_level(nb.level);
        d_y[static_cast<std::size_t>(nb_idx)] += resample_adjoint(d_resampled, nb.rs);
    }

    const AttnProjection mab_proj{&params.mab_wq, &params.mab_wk, &params.mab_wv, &params.mab_wo};
    const AttnGrads mab_grads{&grads.mab_wq, &grads.mab_wk, &grads.mab_wv, &grads.mab_wo};

    for (std::size_t i = 0; i < im.mabs.size(); ++i) {
        const auto& lm = im.mabs[i];
        if (!lm.mab_applied) continue;
        const VectorXd col_sum = d_y[i].colwise().sum().transpose();
        grads.gate_mab += lm.a.dot(col_sum);
        if (params.gate_mab == 0.0 || col_sum.isZero(0.0)) continue;
        const VectorXd d_a = params.gate_mab * col_sum;
        VectorXd d_t = VectorXd::Zero(cfg.dim);
        // encoder tokens are frozen; no input gradients needed
        attn_bwd(lm.ctx, lm.x, lm.x, mab_proj, d_a, mab_grads, &d_t, nullptr, nullptr);
        grads.mag_tokens.row(lm.level) += d_t.transpose();
    }
}

Heatmap mcfn_forward_tokens(const std::vector<TokenGrid>& grids, int m, const McfnParams& params,
                            McfnStats* stats) {
    McfnTape tape(grids, m, params);
    if (stats) {
        for (int level : {m - 1, m + 1}) {
            if (level < 0 || level >= static_cast<int>(grids.size())) continue;
            const bool enabled = level < m ? params.config.enable_cmb_lower
                                           : params.config.enable_cmb_upper;
            if (!enabled) continue;
            (level < m ? stats->cmb_lower_reads : stats->cmb_upper_reads)++;
        }
    }
    return tape.heatmap();
}

Heatmap mcfn_forward(const MagnificationPyramid& pyramid, int m, const McfnParams& params,
                     const EncoderSpec& spec, McfnStats* stats) {
    pyramid.level(m);  // level existence check first
    std::vector<TokenGrid> grids = encode_pyramid(pyramid, spec);
    return mcfn_forward_tokens(grids, m, params, stats);
}

}  // namespace slidenav
