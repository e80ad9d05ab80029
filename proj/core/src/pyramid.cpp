#include "slidenav/pyramid.hpp"

#include <cmath>

#include "slidenav/errors.hpp"

namespace slidenav {

const char* to_string(SlideLabel label) {
    switch (label) {
        case SlideLabel::nevus: return "nevus";
        case SlideLabel::bcc: return "BCC";
        case SlideLabel::melanoma: return "melanoma";
        case SlideLabel::scc: return "SCC";
    }
    return "unknown";
}

SlideLabel slide_label_from_string(const std::string& s) {
    if (s == "nevus") return SlideLabel::nevus;
    if (s == "BCC" || s == "bcc") return SlideLabel::bcc;
    if (s == "melanoma") return SlideLabel::melanoma;
    if (s == "SCC" || s == "scc") return SlideLabel::scc;
    throw ValidationError("unknown slide label: " + s);
}

const MagnificationLevel& MagnificationPyramid::level(int m) const {
    if (m < 0 || m >= num_levels())
        throw LevelNotFoundError("level " + std::to_string(m) + " not in pyramid (" +
                                 std::to_string(num_levels()) + " levels)");
    return levels[static_cast<std::size_t>(m)];
}

ImageF MagnificationPyramid::tumor_mask_at_level(int m) const {
    if (!has_tumor_mask()) throw ValidationError("pyramid has no tumor mask");
    const MagnificationLevel& lvl = level(m);
    if (m == highest_level()) return tumor_mask;
    return resize_max(tumor_mask, lvl.width, lvl.height);
}

void MagnificationPyramid::validate() const {
    if (levels.empty()) throw ValidationError("pyramid has no levels");
    if (rasters.size() != levels.size())
        throw ValidationError("raster count does not match level count");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const auto& lvl = levels[i];
        if (lvl.index != static_cast<int>(i))
            throw ValidationError("level indices must be 0..n-1 in order");
        if (lvl.width <= 0 || lvl.height <= 0 || lvl.magnification <= 0.0)
            throw ValidationError("level " + std::to_string(i) + " has non-positive extent");
        if (rasters[i].width != lvl.width || rasters[i].height != lvl.height)
            throw DimensionMismatchError("raster of level " + std::to_string(i) +
                                         " does not match declared dimensions");
        if (rasters[i].channels != 3)
            throw ValidationError("rasters must be 3-channel RGB");
    }
    // Strictly increasing magnification, except the thumbnail may share
    // level 1's nominal magnification.
    for (std::size_t i = 1; i < levels.size(); ++i) {
        const double prev = levels[i - 1].magnification;
        const double cur = levels[i].magnification;
        const bool thumbnail_boundary = (i == 1);
        if (cur < prev || (cur == prev && !thumbnail_boundary))
            throw ValidationError("level magnifications must increase with index");
    }
    // Adjacent dimensions consistent with the magnification ratio (+-1 px).
    for (std::size_t i = 1; i < levels.size(); ++i) {
        const double ratio = levels[i].magnification / levels[i - 1].magnification;
        const double w_expect = levels[i - 1].width * ratio;
        const double h_expect = levels[i - 1].height * ratio;
        if (std::abs(levels[i].width - w_expect) > 1.0 + 1e-9 ||
            std::abs(levels[i].height - h_expect) > 1.0 + 1e-9)
            throw DimensionMismatchError("level " + std::to_string(i) +
                                         " dimensions inconsistent with magnification ratio");
    }
    if (!nav_annotations.empty()) {
        if (nav_annotations.size() != levels.size())
            throw ValidationError("nav annotations must exist for every level");
        for (std::size_t i = 0; i < levels.size(); ++i) {
            const auto& nav = nav_annotations[i];
            if (nav.width != levels[i].width || nav.height != levels[i].height)
                throw DimensionMismatchError("nav annotation of level " + std::to_string(i) +
                                             " does not match raster dimensions");
            for (double v : nav.data)
                if (!(v >= 0.0 && v <= 1.0))
                    throw ValueRangeError("nav annotation value outside [0,1]");
        }
    }
    if (has_tumor_mask()) {
        const auto& top = levels.back();
        if (tumor_mask.width != top.width || tumor_mask.height != top.height)
            throw DimensionMismatchError("tumor mask must match the highest level's dimensions");
        for (double v : tumor_mask.data)
            if (v != 0.0 && v != 1.0)
                throw ValueRangeError("tumor mask values must be 0 or 1");
    }
}

Region map_region(const Region& r, int target_level, const MagnificationPyramid& pyramid) {
    const MagnificationLevel& src = pyramid.level(r.level_index);
    const MagnificationLevel& dst = pyramid.level(target_level);
    if (target_level == r.level_index) return r;

    const double ratio = dst.magnification / src.magnification;
    Region out = r;
    out.level_index = target_level;
    const int x0 = static_cast<int>(std::floor(r.x * ratio));
    const int y0 = static_cast<int>(std::floor(r.y * ratio));
    const int x1 = static_cast<int>(std::ceil((r.x + r.w) * ratio));
    const int y1 = static_cast<int>(std::ceil((r.y + r.h) * ratio));
    out.x = std::clamp(x0, 0, dst.width - 1);
    out.y = std::clamp(y0, 0, dst.height - 1);
    out.w = std::clamp(x1, out.x + 1, dst.width) - out.x;
    out.h = std::clamp(y1, out.y + 1, dst.height) - out.y;
    return out;
}

std::vector<MagnificationLevel> make_default_levels(int num_levels, int base_size,
                                                    double base_magnification) {
    if (num_levels < 1) throw ConfigError("pyramid needs at least one level");
    if (base_size < 1) throw ConfigError("base size must be positive");

    // Levels above the thumbnail double in magnification; the thumbnail
    // duplicates the smallest level's nominal magnification and size.
    std::vector<MagnificationLevel> levels(static_cast<std::size_t>(num_levels));
    const int top = num_levels - 1;
    for (int m = num_levels - 1; m >= 1; --m) {
        const int halvings = top - m;
        const int factor = 1 << halvings;
        if (base_size % factor != 0)
            throw ConfigError("base size " + std::to_string(base_size) +
                              " not divisible by inter-level factor " + std::to_string(factor));
        auto& lvl = levels[static_cast<std::size_t>(m)];
        lvl.index = m;
        lvl.magnification = base_magnification / factor;
        lvl.width = lvl.height = base_size / factor;
        lvl.scale_to_base = static_cast<double>(factor);
    }
    if (num_levels >= 2) {
        levels[0] = levels[1];
        levels[0].index = 0;
    } else {
        levels[0] = {0, base_magnification, base_size, base_size, 1.0};
    }
    return levels;
}

}  // namespace slidenav
