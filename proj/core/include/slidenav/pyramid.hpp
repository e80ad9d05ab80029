#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slidenav/image.hpp"

namespace slidenav {

enum class SlideLabel { nevus, bcc, melanoma, scc };

const char* to_string(SlideLabel label);
SlideLabel slide_label_from_string(const std::string& s);
inline constexpr int kNumClasses = 4;

/// One layer of the slide pyramid. Index 0 is the thumbnail; levels above it
/// are strictly increasing in magnification. The thumbnail carries the
/// nominal magnification of the smallest real level, so its magnification may
/// equal level 1's.
struct MagnificationLevel {
    int index = 0;
    double magnification = 0.0;
    int width = 0;
    int height = 0;
    double scale_to_base = 1.0;  // highest level's magnification / this one's
};

/// Rectangle in one level's pixel frame plus the attention score it was
/// selected with.
struct Region {
    int level_index = 0;
    int x = 0, y = 0, w = 0, h = 0;
    double score = 0.0;
    int step_selected = 0;

    bool same_rect(const Region& o) const {
        return level_index == o.level_index && x == o.x && y == o.y && w == o.w && h == o.h;
    }
};

/// Key used for Move-exclusion and memory-bank uniqueness.
struct RegionKey {
    int level, x, y, w, h;
    auto operator<=>(const RegionKey&) const = default;
};
inline RegionKey key_of(const Region& r) { return {r.level_index, r.x, r.y, r.w, r.h}; }

/// A slide as co-registered rasters across magnifications, with optional
/// navigation annotations (per level, [0,1]) and a binary tumor mask at the
/// highest level. Immutable after construction; share freely across threads.
struct MagnificationPyramid {
    std::string slide_id;
    std::vector<MagnificationLevel> levels;
    std::vector<ImageU8> rasters;                 // one RGB raster per level
    std::vector<ImageF> nav_annotations;          // empty, or one per level
    ImageF tumor_mask;                            // empty or highest-level binary mask
    std::optional<SlideLabel> label;

    int num_levels() const { return static_cast<int>(levels.size()); }
    bool has_nav() const { return !nav_annotations.empty(); }
    bool has_tumor_mask() const { return !tumor_mask.empty(); }
    const MagnificationLevel& level(int m) const;
    int highest_level() const { return num_levels() - 1; }

    /// Tumor mask re-expressed at level m by block-max from the highest
    /// level (single source of truth lives at the top).
    ImageF tumor_mask_at_level(int m) const;

    /// Throws the matching validation error on any broken invariant.
    void validate() const;
};

/// Re-express a region in another level's pixel frame. Origin rounds down,
/// extent rounds up (outward), the result is clamped to level bounds; score
/// and step are preserved.
Region map_region(const Region& r, int target_level, const MagnificationPyramid& pyramid);

/// Default 5-level layout: thumbnail at the smallest level's nominal
/// magnification, then magnifications doubling upward (1.25, 2.5, 5, 10 when
/// base_magnification = 10 and num_levels = 5).
std::vector<MagnificationLevel> make_default_levels(int num_levels, int base_size,
                                                    double base_magnification = 10.0);

}  // namespace slidenav
