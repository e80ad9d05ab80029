#pragma once

#include <cstdint>
#include <vector>

namespace slidenav {

/// 8-bit interleaved image, row-major, `channels` in {1, 3}.
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> data;

    ImageU8() = default;
    ImageU8(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::uint8_t& at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool empty() const { return data.empty(); }

    bool operator==(const ImageU8&) const = default;
};

/// Double-precision interleaved image; model-side rasters and annotation maps.
struct ImageF {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    ImageF() = default;
    ImageF(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
};

/// Exact block-mean downsampling by integer `factor`; errors unless the
/// dimensions are divisible by the factor.
ImageF block_mean_downsample(const ImageF& in, int factor);

/// Block max over integer blocks; used to derive lower-level masks from the
/// highest-level tumor mask.
ImageF block_max_downsample(const ImageF& in, int factor);

/// Area-average resample to an arbitrary target size (handles both up- and
/// downsampling, anisotropic ratios included). Each output pixel is the mean
/// of the input region it covers, weighted by fractional overlap.
ImageF resize_area(const ImageF& in, int out_w, int out_h);

/// Render a mask (values >= 0) onto a coarser/finer grid taking the max over
/// the covered input pixels. Any overlap counts.
ImageF resize_max(const ImageF& in, int out_w, int out_h);

ImageF to_float(const ImageU8& in);          // values scaled to [0,1]
ImageU8 to_u8(const ImageF& in);             // clamps to [0,1], rounds to nearest

double mean_value(const ImageF& in);

}  // namespace slidenav
