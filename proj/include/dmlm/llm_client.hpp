#pragma once

#include <optional>
#include <string>

namespace dmlm {

/// Endpoint settings, resolved from the environment:
///   DMLM_LLM_ENDPOINT  full URL of a chat-completion-style endpoint
///   DMLM_LLM_API_KEY   bearer token (optional)
///   DMLM_LLM_MODEL     model id (default "gpt-4")
///   DMLM_LLM_CACHE     on-disk response cache directory (optional)
struct LlmConfig {
    std::string endpoint;
    std::string api_key;
    std::string model = "gpt-4";
    std::string cache_dir;
    int timeout_seconds = 30;

    static LlmConfig from_env();
};

/// Minimal single-turn chat-completion client with an on-disk response
/// cache keyed by (prompt hash, model id). Cache writes go through a
/// temp-file rename, so concurrent generators never see partial entries.
class LlmClient {
  public:
    explicit LlmClient(LlmConfig cfg);

    bool configured() const { return !cfg_.endpoint.empty(); }

    /// Sends {model, messages:[{role:"user", content:prompt}]} and
    /// returns the first choice's message content. Throws io_error on
    /// transport or protocol failure. use_cache=false forces a fresh
    /// request.
    std::string complete(const std::string& prompt, bool use_cache = true);

    std::optional<std::string> cache_lookup(const std::string& prompt) const;
    void cache_store(const std::string& prompt, const std::string& response) const;

  private:
    std::string cache_path(const std::string& prompt) const;
    LlmConfig cfg_;
};

}  // namespace dmlm
