#pragma once

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "slidenav/encoder.hpp"
#include "slidenav/fusion.hpp"
#include "slidenav/pyramid.hpp"

namespace slidenav {

enum class ActionKind { move, zoom, stop };

const char* to_string(ActionKind kind);

struct AgentAction {
    ActionKind kind = ActionKind::stop;
    int target_level = -1;  // zoom only; must exceed the current level
    int n_regions = 0;      // move/zoom

    void validate(int current_level, int num_levels) const;
};

struct MemoryRecord {
    int step = 0;
    AgentAction action;
    bool repaired = false;               // reply needed repair or fallback
    std::vector<Region> regions;         // selected at this step
    std::vector<std::string> descriptions;  // evidence the decision was based on
};

/// Append-only record of all operations. Regions are unique across the bank
/// by (level, x, y, w, h); that set doubles as the Move exclusion set.
class MemoryBank {
public:
    MemoryBank() = default;
    explicit MemoryBank(std::string prompt) : prompt_(std::move(prompt)) {}

    const std::string& prompt() const { return prompt_; }
    const std::vector<MemoryRecord>& records() const { return records_; }
    const std::set<RegionKey>& region_keys() const { return keys_; }
    bool empty() const { return records_.empty(); }
    int size() const { return static_cast<int>(records_.size()); }

    /// Step must be contiguous and regions must not repeat; throws
    /// ConsistencyError otherwise.
    void append(const MemoryRecord& record);

    std::vector<Region> all_regions() const;

    bool operator==(const MemoryBank&) const = default;

private:
    std::string prompt_;
    std::vector<MemoryRecord> records_;
    std::set<RegionKey> keys_;
};

enum class StopReason { backend_stop, max_steps, level_exhausted };

const char* to_string(StopReason reason);

struct NavigationResult {
    std::vector<Region> regions;  // union over trace records, in step order
    MemoryBank trace;
    StopReason stop_reason = StopReason::max_steps;
};

/// Two-stage decision backend: describe plays the VLM role, decide the LLM
/// role. decide returns a raw reply; the loop parses it against the action
/// grammar `ACTION: MOVE n=<k> | ZOOM level=<m> n=<k> | STOP`.
class DecisionBackend {
public:
    virtual ~DecisionBackend() = default;
    virtual std::string name() const = 0;
    virtual std::string describe(const ImageU8& region_image) = 0;
    virtual std::string decide(const std::vector<std::string>& descriptions,
                               const std::string& prompt, const MemoryBank& memory) = 0;
};

/// Parses one grammar line anywhere in the reply; n defaults to default_n
/// when omitted. Returns nullopt on malformed replies.
std::optional<AgentAction> parse_action_reply(const std::string& reply, int default_n);

/// Heatmap windows ranked by mean attention (ties by row, then column),
/// excluded windows skipped, up to k regions in level-pixel coordinates.
std::vector<Region> select_top_regions(const Heatmap& h, int k,
                                       const std::set<RegionKey>& exclusion, int region_cells,
                                       int step_selected = 0);

struct AgentLimits {
    int max_steps = 8;
    int n_move = 4;          // N_t default
    int n_zoom = 4;          // k_t default
    int region_cells = 16;   // heatmap window side, px on the prediction grid
};

struct MsdmDecision {
    AgentAction action;
    bool repaired = false;
    std::vector<std::string> descriptions;
};

/// One decision: describe the regions selected at the previous step (the
/// whole current view at step 0), then ask the backend; malformed replies get
/// one structured-repair retry, then the deterministic fallback (zoom to the
/// next level if one exists, else stop).
MsdmDecision msdm_decide(DecisionBackend& backend, const MagnificationPyramid& pyramid,
                         int current_level, const std::vector<Region>& prev_regions,
                         const MemoryBank& memory, const std::string& prompt,
                         const AgentLimits& limits);

/// Full navigation loop of the agent: starts at the thumbnail, alternates
/// decisions and region selection, and stops on Stop, step budget, or a fully
/// exhausted top level. Strictly sequential over steps; deterministic given a
/// deterministic backend. When `trace_path` is set every record is flushed to
/// disk as it is produced, so a backend abort preserves the partial trace.
NavigationResult agent_run(const MagnificationPyramid& pyramid, const McfnParams& params,
                           const EncoderSpec& spec, DecisionBackend& backend,
                           const AgentLimits& limits, const std::string& prompt = "",
                           const std::string& config_hash = "",
                           const std::optional<std::string>& trace_path = std::nullopt);

/// Trace JSONL: header {"slide_id","prompt","config_hash"} then one record
/// line per step.
void trace_save(const MemoryBank& bank, const std::string& slide_id,
                const std::string& config_hash, const std::string& path);

struct LoadedTrace {
    std::string slide_id;
    std::string config_hash;
    MemoryBank bank;
};
LoadedTrace trace_load(const std::string& path);

std::string trace_to_jsonl(const MemoryBank& bank, const std::string& slide_id,
                           const std::string& config_hash);

/// Level after replaying the bank's zoom actions from the thumbnail.
int current_level_of(const MemoryBank& memory);

}  // namespace slidenav
