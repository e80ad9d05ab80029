#include "slidenav/model_io.hpp"

#include <nlohmann/json.hpp>

#include <cstring>

#include "slidenav/errors.hpp"

namespace slidenav {

using nlohmann::json;

void save_mcfn(const McfnParams& params, const std::string& path,
               const std::string& config_hash) {
    TensorArchive arc;
    arc.kind = "mcfn";
    arc.config_hash = config_hash;
    arc.seed = params.config.init_seed;
    const McfnConfig& c = params.config;
    arc.meta_json = json{{"levels", c.levels},
                         {"dim", c.dim},
                         {"grid_side", c.grid_side},
                         {"render_size", c.render_size},
                         {"cmb_window", c.cmb_window},
                         {"enable_mab", c.enable_mab},
                         {"enable_cmb_lower", c.enable_cmb_lower},
                         {"enable_cmb_upper", c.enable_cmb_upper}}
                        .dump();
    McfnParams copy = params;  // for_each_tensor hands out mutable views
    copy.for_each_tensor([&](const McfnParams::TensorRef& t) {
        TensorArchive::Entry e;
        e.name = t.name;
        e.shape = t.shape;
        e.data.assign(t.data, t.data + t.size);
        arc.entries.push_back(std::move(e));
    });
    arc.save(path);
}

McfnParams load_mcfn(const std::string& path, std::string* config_hash) {
    TensorArchive arc = TensorArchive::load(path);
    if (arc.kind != "mcfn") throw ValidationError("checkpoint kind is not 'mcfn': " + path);
    json meta = json::parse(arc.meta_json);

    McfnConfig cfg;
    cfg.levels = meta.at("levels").get<int>();
    cfg.dim = meta.at("dim").get<int>();
    cfg.grid_side = meta.at("grid_side").get<int>();
    cfg.render_size = meta.at("render_size").get<int>();
    cfg.cmb_window = meta.at("cmb_window").get<int>();
    cfg.enable_mab = meta.at("enable_mab").get<bool>();
    cfg.enable_cmb_lower = meta.at("enable_cmb_lower").get<bool>();
    cfg.enable_cmb_upper = meta.at("enable_cmb_upper").get<bool>();
    cfg.init_seed = arc.seed;

    McfnParams params = McfnParams::zeros(cfg);
    std::size_t idx = 0;
    params.for_each_tensor([&](const McfnParams::TensorRef& t) {
        if (idx >= arc.entries.size())
            throw ValidationError("checkpoint has too few tensors: " + path);
        const auto& e = arc.entries[idx++];
        if (e.name != t.name || e.shape != t.shape || e.data.size() != t.size)
            throw ValidationError("checkpoint tensor mismatch at '" + t.name + "': " + path);
        std::memcpy(t.data, e.data.data(), t.size * sizeof(double));
    });
    if (idx != arc.entries.size())
        throw ValidationError("checkpoint has extra tensors: " + path);
    if (config_hash) *config_hash = arc.config_hash;
    return params;
}

}  // namespace slidenav
