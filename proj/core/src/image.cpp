#include "slidenav/image.hpp"

#include <algorithm>
#include <cmath>

#include "slidenav/errors.hpp"

namespace slidenav {

ImageF block_mean_downsample(const ImageF& in, int factor) {
    if (factor <= 0) throw ResampleError("block_mean_downsample: factor must be positive");
    if (factor == 1) return in;
    if (in.width % factor != 0 || in.height % factor != 0)
        throw ResampleError("block_mean_downsample: dimensions not divisible by factor " +
                            std::to_string(factor));
    ImageF out(in.width / factor, in.height / factor, in.channels);
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < in.channels; ++c) {
                double s = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        s += in.at(x * factor + dx, y * factor + dy, c);
                out.at(x, y, c) = s * inv;
            }
        }
    }
    return out;
}

ImageF block_max_downsample(const ImageF& in, int factor) {
    if (factor <= 0) throw ResampleError("block_max_downsample: factor must be positive");
    if (factor == 1) return in;
    if (in.width % factor != 0 || in.height % factor != 0)
        throw ResampleError("block_max_downsample: dimensions not divisible by factor " +
                            std::to_string(factor));
    ImageF out(in.width / factor, in.height / factor, in.channels);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < in.channels; ++c) {
                double m = in.at(x * factor, y * factor, c);
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        m = std::max(m, in.at(x * factor + dx, y * factor + dy, c));
                out.at(x, y, c) = m;
            }
        }
    }
    return out;
}

namespace {

// Output pixel i covers [i*scale, (i+1)*scale) in input-pixel units.
struct Span {
    int first, last;  // inclusive input pixel range
};

Span span_for(double lo, double hi, int in_n) {
    Span s;
    s.first = std::clamp(static_cast<int>(std::floor(lo)), 0, in_n - 1);
    // hi is an exclusive bound; a pixel starting exactly at hi is not covered.
    s.last = std::clamp(static_cast<int>(std::ceil(hi)) - 1, 0, in_n - 1);
    return s;
}

double overlap(int j, double lo, double hi) {
    const double a = std::max(lo, static_cast<double>(j));
    const double b = std::min(hi, static_cast<double>(j + 1));
    return std::max(0.0, b - a);
}

}  // namespace

ImageF resize_area(const ImageF& in, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) throw ResampleError("resize_area: non-positive target size");
    if (in.empty()) throw ResampleError("resize_area: empty input");
    if (out_w == in.width && out_h == in.height) return in;

    ImageF out(out_w, out_h, in.channels);
    const double sx = static_cast<double>(in.width) / out_w;
    const double sy = static_cast<double>(in.height) / out_h;
    const double inv_area = 1.0 / (sx * sy);

    for (int oy = 0; oy < out_h; ++oy) {
        const double ylo = oy * sy, yhi = (oy + 1) * sy;
        const Span ys = span_for(ylo, yhi, in.height);
        for (int ox = 0; ox < out_w; ++ox) {
            const double xlo = ox * sx, xhi = (ox + 1) * sx;
            const Span xs = span_for(xlo, xhi, in.width);
            for (int c = 0; c < in.channels; ++c) {
                double acc = 0.0;
                for (int j = ys.first; j <= ys.last; ++j) {
                    const double wy = overlap(j, ylo, yhi);
                    if (wy <= 0.0) continue;
                    for (int i = xs.first; i <= xs.last; ++i) {
                        const double wx = overlap(i, xlo, xhi);
                        if (wx <= 0.0) continue;
                        acc += wx * wy * in.at(i, j, c);
                    }
                }
                out.at(ox, oy, c) = acc * inv_area;
            }
        }
    }
    return out;
}

ImageF resize_max(const ImageF& in, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) throw ResampleError("resize_max: non-positive target size");
    if (in.empty()) throw ResampleError("resize_max: empty input");
    if (out_w == in.width && out_h == in.height) return in;

    ImageF out(out_w, out_h, in.channels);
    const double sx = static_cast<double>(in.width) / out_w;
    const double sy = static_cast<double>(in.height) / out_h;
    for (int oy = 0; oy < out_h; ++oy) {
        const double ylo = oy * sy, yhi = (oy + 1) * sy;
        const int y0 = std::clamp(static_cast<int>(std::floor(ylo)), 0, in.height - 1);
        const int y1 = std::clamp(static_cast<int>(std::ceil(yhi)) - 1, 0, in.height - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            const double xlo = ox * sx, xhi = (ox + 1) * sx;
            const int x0 = std::clamp(static_cast<int>(std::floor(xlo)), 0, in.width - 1);
            const int x1 = std::clamp(static_cast<int>(std::ceil(xhi)) - 1, 0, in.width - 1);
            for (int c = 0; c < in.channels; ++c) {
                double m = in.at(x0, y0, c);
                for (int j = y0; j <= y1; ++j)
                    for (int i = x0; i <= x1; ++i)
                        m = std::max(m, in.at(i, j, c));
                out.at(ox, oy, c) = m;
            }
        }
    }
    return out;
}

ImageF to_float(const ImageU8& in) {
    ImageF out(in.width, in.height, in.channels);
    for (std::size_t i = 0; i < in.data.size(); ++i)
        out.data[i] = in.data[i] / 255.0;
    return out;
}

ImageU8 to_u8(const ImageF& in) {
    ImageU8 out(in.width, in.height, in.channels);
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        const double v = std::clamp(in.data[i], 0.0, 1.0);
        out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

double mean_value(const ImageF& in) {
    if (in.empty()) return 0.0;
    double s = 0.0;
    for (double v : in.data) s += v;
    return s / static_cast<double>(in.data.size());
}

}  // namespace slidenav
