#include "slidenav/pyramid_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "slidenav/errors.hpp"
#include "slidenav/png_io.hpp"

namespace slidenav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::uint16_t> quantize_nav(const ImageF& nav) {
    std::vector<std::uint16_t> q(nav.data.size());
    for (std::size_t i = 0; i < nav.data.size(); ++i)
        q[i] = static_cast<std::uint16_t>(std::lround(nav.data[i] * 65535.0));
    return q;
}

}  // namespace

void save_pyramid(const MagnificationPyramid& p, const std::string& dir) {
    p.validate();
    fs::create_directories(dir);

    json levels = json::array();
    for (int m = 0; m < p.num_levels(); ++m) {
        const auto& lvl = p.levels[static_cast<std::size_t>(m)];
        const std::string raster_name = "level_" + std::to_string(m) + ".png";
        write_png_u8((fs::path(dir) / raster_name).string(), p.rasters[static_cast<std::size_t>(m)]);

        json jl = {{"index", lvl.index},
                   {"magnification", lvl.magnification},
                   {"width", lvl.width},
                   {"height", lvl.height},
                   {"raster", raster_name}};
        if (p.has_nav()) {
            const std::string nav_name = "nav_" + std::to_string(m) + ".png";
            const auto& nav = p.nav_annotations[static_cast<std::size_t>(m)];
            write_png_gray16((fs::path(dir) / nav_name).string(), nav.width, nav.height,
                             quantize_nav(nav));
            jl["nav"] = nav_name;
        } else {
            jl["nav"] = nullptr;
        }
        levels.push_back(std::move(jl));
    }

    json manifest = {{"slide_id", p.slide_id}, {"levels", std::move(levels)}};
    manifest["label"] = p.label ? json(to_string(*p.label)) : json(nullptr);
    if (p.has_tumor_mask()) {
        ImageU8 mask(p.tumor_mask.width, p.tumor_mask.height, 1);
        for (std::size_t i = 0; i < p.tumor_mask.data.size(); ++i)
            mask.data[i] = p.tumor_mask.data[i] != 0.0 ? 255 : 0;
        write_png_u8((fs::path(dir) / "tumor.png").string(), mask);
        manifest["tumor_mask"] = "tumor.png";
    } else {
        manifest["tumor_mask"] = nullptr;
    }

    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw ValidationError("save_pyramid: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

MagnificationPyramid load_pyramid(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw ManifestError("load_pyramid: missing manifest.json in " + dir);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw ManifestError("load_pyramid: unparseable manifest: " + std::string(e.what()));
    }

    MagnificationPyramid p;
    try {
        p.slide_id = manifest.at("slide_id").get<std::string>();
        if (!manifest.at("label").is_null())
            p.label = slide_label_from_string(manifest["label"].get<std::string>());

        const auto& jlevels = manifest.at("levels");
        if (!jlevels.is_array() || jlevels.empty())
            throw ManifestError("load_pyramid: manifest has no levels");

        bool any_nav = false;
        for (const auto& jl : jlevels) {
            MagnificationLevel lvl;
            lvl.index = jl.at("index").get<int>();
            lvl.magnification = jl.at("magnification").get<double>();
            lvl.width = jl.at("width").get<int>();
            lvl.height = jl.at("height").get<int>();
            p.levels.push_back(lvl);

            ImageU8 raster = read_png_u8((fs::path(dir) / jl.at("raster").get<std::string>()).string());
            if (raster.width != lvl.width || raster.height != lvl.height)
                throw DimensionMismatchError("load_pyramid: raster of level " +
                                             std::to_string(lvl.index) +
                                             " does not match manifest dimensions");
            p.rasters.push_back(std::move(raster));
            if (!jl.at("nav").is_null()) any_nav = true;
        }
        // scale_to_base from magnifications
        const double top_mag = p.levels.back().magnification;
        for (auto& lvl : p.levels) lvl.scale_to_base = top_mag / lvl.magnification;

        if (any_nav) {
            for (std::size_t m = 0; m < jlevels.size(); ++m) {
                const auto& jl = jlevels[m];
                if (jl.at("nav").is_null())
                    throw ManifestError("load_pyramid: nav annotations must cover every level");
                int w = 0, h = 0;
                std::vector<std::uint16_t> samples;
                read_png_gray16((fs::path(dir) / jl["nav"].get<std::string>()).string(), w, h,
                                samples);
                if (w != p.levels[m].width || h != p.levels[m].height)
                    throw DimensionMismatchError("load_pyramid: nav of level " + std::to_string(m) +
                                                 " does not match level dimensions");
                ImageF nav(w, h, 1);
                for (std::size_t i = 0; i < samples.size(); ++i)
                    nav.data[i] = samples[i] / 65535.0;
                p.nav_annotations.push_back(std::move(nav));
            }
        }

        if (!manifest.at("tumor_mask").is_null()) {
            ImageU8 mask =
                read_png_u8((fs::path(dir) / manifest["tumor_mask"].get<std::string>()).string());
            if (mask.channels != 1)
                throw ValidationError("load_pyramid: tumor mask must be grayscale");
            ImageF maskf(mask.width, mask.height, 1);
            for (std::size_t i = 0; i < mask.data.size(); ++i) {
                if (mask.data[i] != 0 && mask.data[i] != 255)
                    throw ValueRangeError("load_pyramid: tumor mask values must be 0 or 255");
                maskf.data[i] = mask.data[i] == 255 ? 1.0 : 0.0;
            }
            p.tumor_mask = std::move(maskf);
        }
    } catch (const json::exception& e) {
        throw ManifestError("load_pyramid: manifest field error: " + std::string(e.what()));
    }

    p.validate();
    return p;
}

}  // namespace slidenav
