#include "slidenav/agent.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "slidenav/errors.hpp"

namespace slidenav {

using ordered_json = nlohmann::ordered_json;

const char* to_string(ActionKind kind) {
    switch (kind) {
        case ActionKind::move: return "move";
        case ActionKind::zoom: return "zoom";
        case ActionKind::stop: return "stop";
    }
    return "unknown";
}

const char* to_string(StopReason reason) {
    switch (reason) {
        case StopReason::backend_stop: return "backend_stop";
        case StopReason::max_steps: return "max_steps";
        case StopReason::level_exhausted: return "level_exhausted";
    }
    return "unknown";
}

void AgentAction::validate(int current_level, int num_levels) const {
    switch (kind) {
        case ActionKind::stop:
            return;
        case ActionKind::move:
            if (n_regions < 1) throw ValidationError("move action needs n >= 1");
            return;
        case ActionKind::zoom:
            if (n_regions < 1) throw ValidationError("zoom action needs n >= 1");
            if (target_level <= current_level)
                throw ValidationError("zoom target must exceed the current level");
            if (target_level >= num_levels)
                throw ValidationError("zoom target outside the pyramid");
            return;
    }
}

void MemoryBank::append(const MemoryRecord& record) {
    const int expected = records_.empty() ? 0 : records_.back().step + 1;
    if (record.step != expected)
        throw ConsistencyError("memory: step " + std::to_string(record.step) +
                               " breaks contiguity (expected " + std::to_string(expected) + ")");
    std::set<RegionKey> fresh;
    for (const auto& r : record.regions) {
        const RegionKey k = key_of(r);
        if (keys_.count(k) || !fresh.insert(k).second)
            throw ConsistencyError("memory: duplicate region in step " +
                                   std::to_string(record.step));
    }
    keys_.insert(fresh.begin(), fresh.end());
    records_.push_back(record);
}

std::vector<Region> MemoryBank::all_regions() const {
    std::vector<Region> out;
    for (const auto& rec : records_)
        out.insert(out.end(), rec.regions.begin(), rec.regions.end());
    return out;
}

int current_level_of(const MemoryBank& memory) {
    int level = 0;
    for (const auto& rec : memory.records())
        if (rec.action.kind == ActionKind::zoom) level = rec.action.target_level;
    return level;
}

// ---------------------------------------------------------------------------
// action grammar

namespace {

// Extracts `key=<int>` from a token stream.
std::optional<int> parse_kv_int(std::istringstream& in, const std::string& key) {
    std::string tok;
    if (!(in >> tok)) return std::nullopt;
    const std::string prefix = key + "=";
    if (tok.rfind(prefix, 0) != 0) return std::nullopt;
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok.substr(prefix.size()), &used);
        if (used != tok.size() - prefix.size()) return std::nullopt;
        return v;
    } catch (...) {
        return std::nullopt;
    }
}

}  // namespace

std::optional<AgentAction> parse_action_reply(const std::string& reply, int default_n) {
    std::istringstream lines(reply);
    std::string line;
    while (std::getline(lines, line)) {
        const auto pos = line.find("ACTION:");
        if (pos == std::string::npos) continue;
        std::istringstream in(line.substr(pos + 7));
        std::string verb;
        if (!(in >> verb)) return std::nullopt;

        AgentAction action;
        if (verb == "STOP") {
            action.kind = ActionKind::stop;
            std::string rest;
            if (in >> rest) return std::nullopt;  // STOP carries no parameters
            return action;
        }
        if (verb == "MOVE") {
            action.kind = ActionKind::move;
            action.n_regions = default_n;
            const auto save = in.tellg();
            if (auto n = parse_kv_int(in, "n")) {
                action.n_regions = *n;
            } else {
                in.clear();
                in.seekg(save);
                std::string rest;
                if (in >> rest) return std::nullopt;
            }
            if (action.n_regions < 1) return std::nullopt;
            return action;
        }
        if (verb == "ZOOM") {
            action.kind = ActionKind::zoom;
            auto level = parse_kv_int(in, "level");
            if (!level) return std::nullopt;
            action.target_level = *level;
            action.n_regions = default_n;
            const auto save = in.tellg();
            if (auto n = parse_kv_int(in, "n")) {
                action.n_regions = *n;
            } else {
                in.clear();
                in.seekg(save);
                std::string rest;
                if (in >> rest) return std::nullopt;
            }
            if (action.n_regions < 1) return std::nullopt;
            return action;
        }
        return std::nullopt;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// region selection

std::vector<Region> select_top_regions(const Heatmap& h, int k,
                                       const std::set<RegionKey>& exclusion, int region_cells,
                                       int step_selected) {
    if (k < 1) throw ValidationError("select_top_regions: k must be >= 1");
    if (region_cells <= 0 || h.width() % region_cells != 0 || h.height() % region_cells != 0)
        throw PartitionError("select_top_regions: window size " + std::to_string(region_cells) +
                             " does not partition a " + std::to_string(h.width()) + "x" +
                             std::to_string(h.height()) + " heatmap");
    if (h.level_width <= 0 || h.level_height <= 0)
        throw ConfigError("select_top_regions: heatmap lacks level dimensions");

    const int cols = h.width() / region_cells;
    const int rows = h.height() / region_cells;

    struct Win {
        int row, col;
        double score;
    };
    std::vector<Win> wins;
    wins.reserve(static_cast<std::size_t>(rows) * cols);
    const double inv = 1.0 / (static_cast<double>(region_cells) * region_cells);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double s = 0.0;
            for (int y = 0; y < region_cells; ++y)
                for (int x = 0; x < region_cells; ++x)
                    s += h.values.at(c * region_cells + x, r * region_cells + y, 0);
            wins.push_back({r, c, s * inv});
        }
    std::sort(wins.begin(), wins.end(), [](const Win& a, const Win& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });

    const auto map_axis = [](long long cell_lo, long long cell_hi, long long level_extent,
                             long long heat_extent) {
        const long long lo = cell_lo * level_extent / heat_extent;  // floor (non-negative)
        const long long hi = (cell_hi * level_extent + heat_extent - 1) / heat_extent;  // ceil
        return std::pair<int, int>{static_cast<int>(lo), static_cast<int>(hi)};
    };

    std::vector<Region> out;
    for (const auto& w : wins) {
        if (static_cast<int>(out.size()) == k) break;
        const auto [x0, x1] = map_axis(static_cast<long long>(w.col) * region_cells,
                                       static_cast<long long>(w.col + 1) * region_cells,
                                       h.level_width, h.width());
        const auto [y0, y1] = map_axis(static_cast<long long>(w.row) * region_cells,
                                       static_cast<long long>(w.row + 1) * region_cells,
                                       h.level_height, h.height());
        Region r;
        r.level_index = h.level_index;
        r.x = x0;
        r.y = y0;
        r.w = std::min(x1, h.level_width) - x0;
        r.h = std::min(y1, h.level_height) - y0;
        r.score = w.score;
        r.step_selected = step_selected;
        if (exclusion.count(key_of(r))) continue;
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// decisions

namespace {

ImageU8 crop_region(const MagnificationPyramid& pyramid, const Region& r) {
    const ImageU8& raster = pyramid.rasters[static_cast<std::size_t>(r.level_index)];
    ImageU8 out(r.w, r.h, raster.channels);
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x)
            for (int c = 0; c < raster.channels; ++c)
                out.at(x, y, c) = raster.at(r.x + x, r.y + y, c);
    return out;
}

const std::string kGrammarReminder =
    "Reply with exactly one line: ACTION: MOVE n=<k> | ZOOM level=<m> n=<k> | STOP";

}  // namespace

MsdmDecision msdm_decide(DecisionBackend& backend, const MagnificationPyramid& pyramid,
                         int current_level, const std::vector<Region>& prev_regions,
                         const MemoryBank& memory, const std::string& prompt,
                         const AgentLimits& limits) {
    MsdmDecision decision;
    if (prev_regions.empty()) {
        // step 0 (or an empty previous selection): describe the whole view
        decision.descriptions.push_back(
            backend.describe(pyramid.rasters[static_cast<std::size_t>(current_level)]));
    } else {
        for (const auto& r : prev_regions)
            decision.descriptions.push_back(backend.describe(crop_region(pyramid, r)));
    }

    const int default_n = limits.n_move;
    auto try_reply = [&](const std::string& reply) -> std::optional<AgentAction> {
        auto action = parse_action_reply(reply, default_n);
        if (!action) return std::nullopt;
        try {
            action->validate(current_level, pyramid.num_levels());
        } catch (const ValidationError&) {
            return std::nullopt;
        }
        return action;
    };

    if (auto action = try_reply(backend.decide(decision.descriptions, prompt, memory))) {
        decision.action = *action;
        return decision;
    }
    // one structured-repair retry with the grammar spelled out
    const std::string repair_prompt = prompt.empty() ? kGrammarReminder
                                                     : prompt + "\n" + kGrammarReminder;
    if (auto action = try_reply(backend.decide(decision.descriptions, repair_prompt, memory))) {
        decision.action = *action;
        decision.repaired = true;
        return decision;
    }
    // deterministic fallback: zoom to the next level if one exists, else stop
    if (current_level + 1 < pyramid.num_levels()) {
        decision.action = {ActionKind::zoom, current_level + 1, limits.n_zoom};
    } else {
        decision.action = {ActionKind::stop, -1, 0};
    }
    decision.repaired = true;
    return decision;
}

// ---------------------------------------------------------------------------
// trace serialization

namespace {

ordered_json record_to_json(const MemoryRecord& rec) {
    ordered_json action;
    action["kind"] = to_string(rec.action.kind);
    if (rec.action.kind == ActionKind::zoom)
        action["target_level"] = rec.action.target_level;
    else
        action["target_level"] = nullptr;
    if (rec.action.kind == ActionKind::stop)
        action["n"] = nullptr;
    else
        action["n"] = rec.action.n_regions;
    action["repaired"] = rec.repaired;

    ordered_json regions = ordered_json::array();
    for (const auto& r : rec.regions)
        regions.push_back({{"level", r.level_index},
                           {"x", r.x},
                           {"y", r.y},
                           {"w", r.w},
                           {"h", r.h},
                           {"score", r.score}});
    return ordered_json{{"step", rec.step},
                        {"action", std::move(action)},
                        {"regions", std::move(regions)},
                        {"descriptions", rec.descriptions}};
}

MemoryRecord record_from_json(const ordered_json& j) {
    MemoryRecord rec;
    rec.step = j.at("step").get<int>();
    const auto& ja = j.at("action");
    const std::string kind = ja.at("kind").get<std::string>();
    if (kind == "move")
        rec.action.kind = ActionKind::move;
    else if (kind == "zoom")
        rec.action.kind = ActionKind::zoom;
    else if (kind == "stop")
        rec.action.kind = ActionKind::stop;
    else
        throw ValidationError("trace: unknown action kind '" + kind + "'");
    rec.action.target_level = ja.at("target_level").is_null() ? -1 : ja["target_level"].get<int>();
    rec.action.n_regions = ja.at("n").is_null() ? 0 : ja["n"].get<int>();
    rec.repaired = ja.at("repaired").get<bool>();
    for (const auto& jr : j.at("regions")) {
        Region r;
        r.level_index = jr.at("level").get<int>();
        r.x = jr.at("x").get<int>();
        r.y = jr.at("y").get<int>();
        r.w = jr.at("w").get<int>();
        r.h = jr.at("h").get<int>();
        r.score = jr.at("score").get<double>();
        r.step_selected = rec.step;
        rec.regions.push_back(r);
    }
    rec.descriptions = j.at("descriptions").get<std::vector<std::string>>();
    return rec;
}

}  // namespace

std::string trace_to_jsonl(const MemoryBank& bank, const std::string& slide_id,
                           const std::string& config_hash) {
    std::ostringstream out;
    out << ordered_json{{"slide_id", slide_id},
                        {"prompt", bank.prompt()},
                        {"config_hash", config_hash}}
               .dump()
        << "\n";
    for (const auto& rec : bank.records()) out << record_to_json(rec).dump() << "\n";
    return out.str();
}

void trace_save(const MemoryBank& bank, const std::string& slide_id,
                const std::string& config_hash, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("trace: cannot write " + path);
    out << trace_to_jsonl(bank, slide_id, config_hash);
}

LoadedTrace trace_load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("trace: missing file " + path +
                                   " (produce it with the navigate command)");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("trace: empty file " + path);
    LoadedTrace loaded;
    try {
        const auto header = ordered_json::parse(line);
        loaded.slide_id = header.at("slide_id").get<std::string>();
        loaded.config_hash = header.at("config_hash").get<std::string>();
        loaded.bank = MemoryBank(header.at("prompt").get<std::string>());
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            loaded.bank.append(record_from_json(ordered_json::parse(line)));
        }
    } catch (const ordered_json::exception& e) {
        throw ValidationError("trace: parse error in " + path + ": " + e.what());
    }
    return loaded;
}

// ---------------------------------------------------------------------------
// agent loop

NavigationResult agent_run(const MagnificationPyramid& pyramid, const McfnParams& params,
                           const EncoderSpec& spec, DecisionBackend& backend,
                           const AgentLimits& limits, const std::string& prompt,
                           const std::string& config_hash,
                           const std::optional<std::string>& trace_path) {
    if (limits.max_steps < 1) throw ConfigError("agent: max_steps must be >= 1");
    pyramid.validate();

    const std::vector<TokenGrid> grids = encode_pyramid(pyramid, spec);
    std::vector<std::optional<Heatmap>> heatmaps(static_cast<std::size_t>(pyramid.num_levels()));
    auto heatmap_for = [&](int level) -> const Heatmap& {
        auto& slot = heatmaps[static_cast<std::size_t>(level)];
        if (!slot) slot = mcfn_forward_tokens(grids, level, params);
        return *slot;
    };

    NavigationResult result;
    result.trace = MemoryBank(prompt);
    result.stop_reason = StopReason::max_steps;

    std::ofstream trace_out;
    if (trace_path) {
        trace_out.open(*trace_path, std::ios::binary);
        if (!trace_out) throw ValidationError("agent: cannot write trace " + *trace_path);
        trace_out << ordered_json{{"slide_id", pyramid.slide_id},
                                  {"prompt", prompt},
                                  {"config_hash", config_hash}}
                         .dump()
                  << "\n";
        trace_out.flush();
    }
    auto emit = [&](const MemoryRecord& rec) {
        result.trace.append(rec);
        if (trace_out.is_open()) {
            trace_out << record_to_json(rec).dump() << "\n";
            trace_out.flush();
        }
    };

    int level = 0;
    const int top = pyramid.highest_level();
    for (int step = 0; step < limits.max_steps; ++step) {
        const std::vector<Region> prev_regions =
            result.trace.empty() ? std::vector<Region>{} : result.trace.records().back().regions;

        MsdmDecision decision =
            msdm_decide(backend, pyramid, level, prev_regions, result.trace, prompt, limits);

        MemoryRecord rec;
        rec.step = step;
        rec.action = decision.action;
        rec.repaired = decision.repaired;
        rec.descriptions = std::move(decision.descriptions);

        if (decision.action.kind == ActionKind::stop) {
            emit(rec);
            result.stop_reason = StopReason::backend_stop;
            break;
        }

        if (decision.action.kind == ActionKind::zoom) level = decision.action.target_level;
        rec.regions = select_top_regions(heatmap_for(level), decision.action.n_regions,
                                         result.trace.region_keys(), limits.region_cells, step);
        const bool exhausted = rec.regions.empty() && level == top;
        emit(rec);
        if (exhausted) {
            result.stop_reason = StopReason::level_exhausted;
            break;
        }
    }

    result.regions = result.trace.all_regions();
    return result;
}

}  // namespace slidenav
