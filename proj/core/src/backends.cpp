#include "slidenav/backends.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "slidenav/errors.hpp"
#include "slidenav/rng.hpp"

// vendor single-header HTTP client
#include <httplib.h>

namespace slidenav {

using nlohmann::json;

namespace {

std::string image_summary(const ImageU8& img) {
    double mean = 0.0, dark = 0.0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double v = 0.0;
            for (int c = 0; c < img.channels; ++c) v += img.at(x, y, c) / 255.0;
            v /= img.channels;
            mean += v;
            if (v < 0.45) dark += 1.0;
        }
    const double n = static_cast<double>(img.width) * img.height;
    mean /= n;
    dark /= n;
    std::ostringstream out;
    out << img.width << "x" << img.height << " px, mean intensity " << mean << ", dark fraction "
        << dark;
    return out.str();
}

std::string memory_summary(const MemoryBank& memory) {
    std::ostringstream out;
    for (const auto& rec : memory.records()) {
        out << "step " << rec.step << ": " << to_string(rec.action.kind);
        if (rec.action.kind == ActionKind::zoom) out << " to level " << rec.action.target_level;
        out << ", " << rec.regions.size() << " regions\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// scripted policies

class ScriptedBackend : public DecisionBackend {
public:
    ScriptedBackend(std::string policy, int default_n, std::uint64_t seed, int num_levels)
        : policy_(std::move(policy)), n_(default_n), rng_(seed), num_levels_(num_levels) {}

    std::string name() const override { return "scripted:" + policy_; }

    std::string describe(const ImageU8& region_image) override {
        return "region " + image_summary(region_image);
    }

    std::string decide(const std::vector<std::string>&, const std::string&,
                       const MemoryBank& memory) override {
        const int level = current_level_of(memory);
        const bool at_top = num_levels_ > 0 && level + 1 >= num_levels_;
        if (policy_ == "zoom_all") {
            if (at_top) return "ACTION: STOP";
            return "ACTION: ZOOM level=" + std::to_string(level + 1) + " n=" + std::to_string(n_);
        }
        if (policy_ == "move_twice_then_zoom") {
            int moves_here = 0;
            for (auto it = memory.records().rbegin(); it != memory.records().rend(); ++it) {
                if (it->action.kind == ActionKind::zoom) break;
                if (it->action.kind == ActionKind::move) ++moves_here;
            }
            if (moves_here < 2) return "ACTION: MOVE n=" + std::to_string(n_);
            if (at_top) return "ACTION: STOP";
            return "ACTION: ZOOM level=" + std::to_string(level + 1) + " n=" + std::to_string(n_);
        }
        if (policy_ == "always_move") return "ACTION: MOVE n=" + std::to_string(n_);
        if (policy_ == "stop") return "ACTION: STOP";
        if (policy_ == "random") return random_reply(level);
        throw ConfigError("unknown scripted policy '" + policy_ + "'");
    }

private:
    std::string random_reply(int level) {
        const double roll = rng_.uniform();
        if (roll < 0.35)
            return "ACTION: MOVE n=" + std::to_string(rng_.uniform_int(1, 6));
        if (roll < 0.60) {
            // sometimes an invalid target, exercising repair/fallback
            const int target = level + static_cast<int>(rng_.uniform_int(-1, 3));
            return "ACTION: ZOOM level=" + std::to_string(target) + " n=" +
                   std::to_string(rng_.uniform_int(1, 5));
        }
        if (roll < 0.75) return "ACTION: STOP";
        switch (rng_.uniform_int(0, 4)) {
            case 0: return "";
            case 1: return "I think we should look closer at the lesion.";
            case 2: return "ACTION: FLY n=2";
            case 3: return "ACTION: ZOOM level=abc n=2";
            default: return "ACTION: MOVE n=0";
        }
    }

    std::string policy_;
    int n_;
    DetRng rng_;
    int num_levels_;
};

// ---------------------------------------------------------------------------
// deterministic heuristic policy over memory scores

class HeuristicBackend : public DecisionBackend {
public:
    explicit HeuristicBackend(int default_n) : n_(default_n) {}

    std::string name() const override { return "heuristic"; }

    std::string describe(const ImageU8& region_image) override {
        return "tissue view: " + image_summary(region_image);
    }

    std::string decide(const std::vector<std::string>&, const std::string&,
                       const MemoryBank& memory) override {
        const int level = current_level_of(memory);
        double last_score = 1.0;  // optimistic before any evidence
        if (!memory.empty() && !memory.records().back().regions.empty()) {
            last_score = 0.0;
            for (const auto& r : memory.records().back().regions) last_score += r.score;
            last_score /= static_cast<double>(memory.records().back().regions.size());
        }
        int moves_here = 0;
        for (auto it = memory.records().rbegin(); it != memory.records().rend(); ++it) {
            if (it->action.kind == ActionKind::zoom) break;
            if (it->action.kind == ActionKind::move) ++moves_here;
        }
        if (last_score >= 0.45) {
            // promising evidence: go deeper while there is somewhere to go
            return "ACTION: ZOOM level=" + std::to_string(level + 1) + " n=" + std::to_string(n_);
        }
        if (moves_here < 2) return "ACTION: MOVE n=" + std::to_string(n_);
        return "ACTION: ZOOM level=" + std::to_string(level + 1) + " n=" + std::to_string(n_);
        // an invalid zoom at the top level falls back to STOP via repair
    }

private:
    int n_;
};

}  // namespace

// ---------------------------------------------------------------------------
// remote backend

HttpChatTransport::HttpChatTransport(const RemoteBackendConfig& config) : config_(config) {
    std::string url = config.endpoint;
    const std::string http = "http://";
    if (url.rfind("https://", 0) == 0)
        throw BackendError("remote: https endpoints need TLS support; use http");
    if (url.rfind(http, 0) == 0) url = url.substr(http.size());
    const auto slash = url.find('/');
    if (slash != std::string::npos) {
        path_prefix_ = url.substr(slash);
        if (path_prefix_ == "/") path_prefix_.clear();
        url = url.substr(0, slash);
    }
    const auto colon = url.find(':');
    if (colon != std::string::npos) {
        host_ = url.substr(0, colon);
        port_ = std::stoi(url.substr(colon + 1));
    } else {
        host_ = url;
        port_ = 80;
    }
    if (host_.empty()) throw BackendError("remote: empty endpoint host");
}

std::string HttpChatTransport::post_chat(const std::string& request_body) {
    httplib::Client client(host_, port_);
    const auto timeout_ms = static_cast<int>(config_.timeout_s * 1000.0);
    client.set_connection_timeout(0, timeout_ms * 1000);
    client.set_read_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);

    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);

    auto res = client.Post((path_prefix_ + "/v1/chat/completions").c_str(), headers, request_body,
                           "application/json");
    if (!res)
        throw BackendError("remote: transport failure contacting " + host_ + ":" +
                           std::to_string(port_));
    if (res->status != 200)
        throw BackendError("remote: HTTP " + std::to_string(res->status));
    return res->body;
}

RemoteBackend::RemoteBackend(RemoteBackendConfig config, std::shared_ptr<ChatTransport> transport,
                             BackendLogger logger)
    : config_(std::move(config)), transport_(std::move(transport)), logger_(std::move(logger)) {
    if (!transport_) transport_ = std::make_shared<HttpChatTransport>(config_);
}

std::string RemoteBackend::chat(const std::string& body) {
    if (logger_) logger_(json{{"direction", "request"}, {"body", json::parse(body)}}.dump());
    std::string response;
    int attempt = 0;
    for (;;) {
        try {
            response = transport_->post_chat(body);
            break;
        } catch (const BackendError&) {
            if (++attempt > config_.max_retries) throw;
        }
    }
    if (logger_) {
        json parsed;
        try {
            parsed = json::parse(response);
        } catch (...) {
            parsed = response;
        }
        logger_(json{{"direction", "response"}, {"body", parsed}}.dump());
    }
    try {
        const json j = json::parse(response);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (...) {
        // protocol-shaped garbage is a malformed reply, not a transport error;
        // hand it back so the repair path can deal with it
        return response;
    }
}

std::string RemoteBackend::describe(const ImageU8& region_image) {
    const json body = {
        {"model", config_.model},
        {"messages",
         json::array({{{"role", "user"},
                       {"content", "Describe this whole-slide region: " +
                                       image_summary(region_image)}}})}};
    return chat(body.dump());
}

std::string RemoteBackend::decide(const std::vector<std::string>& descriptions,
                                  const std::string& prompt, const MemoryBank& memory) {
    std::ostringstream user;
    user << "Region descriptions from the last step:\n";
    for (const auto& d : descriptions) user << "- " << d << "\n";
    user << "Operation memory:\n" << memory_summary(memory);
    user << "Choose the next action as `ACTION: MOVE n=<k> | ZOOM level=<m> n=<k> | STOP`.";
    const json body = {{"model", config_.model},
                       {"messages", json::array({{{"role", "system"}, {"content", prompt}},
                                                 {{"role", "user"}, {"content", user.str()}}})}};
    return chat(body.dump());
}

std::unique_ptr<DecisionBackend> make_backend(const BackendConfig& config,
                                              std::shared_ptr<ChatTransport> transport,
                                              BackendLogger logger) {
    const std::string scripted_prefix = "scripted:";
    if (config.name.rfind(scripted_prefix, 0) == 0)
        return std::make_unique<ScriptedBackend>(config.name.substr(scripted_prefix.size()),
                                                 config.default_n, config.seed);
    if (config.name == "heuristic") return std::make_unique<HeuristicBackend>(config.default_n);
    if (config.name == "remote")
        return std::make_unique<RemoteBackend>(config.remote, std::move(transport),
                                               std::move(logger));
    throw ConfigError("unknown backend '" + config.name + "'");
}

}  // namespace slidenav
