#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "slidenav/agent.hpp"

namespace slidenav {

/// Transport for the OpenAI-compatible chat-completions protocol. Request and
/// response are serialized JSON bodies; tests substitute a mock.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual std::string post_chat(const std::string& request_body) = 0;
};

struct RemoteBackendConfig {
    std::string endpoint = "http://127.0.0.1:8080";
    std::string model = "navigator";
    std::string api_key_env = "SLIDENAV_API_KEY";  // key read from env, never stored
    double timeout_s = 30.0;
    int max_retries = 2;
};

/// HTTP client transport. The API key travels only in the Authorization
/// header; logged bodies never contain it.
class HttpChatTransport : public ChatTransport {
public:
    explicit HttpChatTransport(const RemoteBackendConfig& config);
    std::string post_chat(const std::string& request_body) override;

private:
    RemoteBackendConfig config_;
    std::string host_;
    int port_ = 80;
    std::string path_prefix_;
};

using BackendLogger = std::function<void(const std::string& line)>;

/// VLM/LLM stand-in speaking chat completions over a transport. Transport
/// failures retry up to max_retries, then raise BackendError; malformed
/// reply text is returned as-is for the caller's repair path.
class RemoteBackend : public DecisionBackend {
public:
    RemoteBackend(RemoteBackendConfig config, std::shared_ptr<ChatTransport> transport,
                  BackendLogger logger = nullptr);

    std::string name() const override { return "remote"; }
    std::string describe(const ImageU8& region_image) override;
    std::string decide(const std::vector<std::string>& descriptions, const std::string& prompt,
                       const MemoryBank& memory) override;

private:
    std::string chat(const std::string& body);

    RemoteBackendConfig config_;
    std::shared_ptr<ChatTransport> transport_;
    BackendLogger logger_;
};

struct BackendConfig {
    /// "scripted:<policy>" with policy in {zoom_all, move_twice_then_zoom,
    /// always_move, stop, random}, or "heuristic", or "remote".
    std::string name = "scripted:zoom_all";
    int default_n = 4;
    std::uint64_t seed = 0;   // used by scripted:random
    int num_levels = 0;       // lets scripted policies stop at the top; 0 = unknown
    RemoteBackendConfig remote;
};

/// Factory over the configured backend names. For "remote", a custom
/// transport (e.g. a mock) may be injected; otherwise HTTP is used.
std::unique_ptr<DecisionBackend> make_backend(const BackendConfig& config,
                                              std::shared_ptr<ChatTransport> transport = nullptr,
                                              BackendLogger logger = nullptr);

}  // namespace slidenav
