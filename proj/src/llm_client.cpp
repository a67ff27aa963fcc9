#include "dmlm/llm_client.hpp"

#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "dmlm/errors.hpp"
#include "dmlm/util.hpp"

namespace dmlm {

namespace {

std::string env_or(const char* name, const std::string& fallback = "") {
    const char* v = std::getenv(name);
    return v ? std::string(v) : fallback;
}

struct SplitUrl {
    std::string base;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw io_error("llm endpoint must be a full URL: " + url);
    const std::size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

LlmConfig LlmConfig::from_env() {
    LlmConfig cfg;
    cfg.endpoint = env_or("DMLM_LLM_ENDPOINT");
    cfg.api_key = env_or("DMLM_LLM_API_KEY");
    cfg.model = env_or("DMLM_LLM_MODEL", "gpt-4");
    cfg.cache_dir = env_or("DMLM_LLM_CACHE");
    return cfg;
}

LlmClient::LlmClient(LlmConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.cache_dir.empty()) ensure_dir(cfg_.cache_dir);
}

std::string LlmClient::cache_path(const std::string& prompt) const {
    return cfg_.cache_dir + "/" + to_hex(fnv1a64(prompt)) + "-" + to_hex(fnv1a64(cfg_.model)) +
           ".txt";
}

std::optional<std::string> LlmClient::cache_lookup(const std::string& prompt) const {
    if (cfg_.cache_dir.empty()) return std::nullopt;
    const std::string path = cache_path(prompt);
    if (!file_exists(path)) return std::nullopt;
    return read_file(path);
}

void LlmClient::cache_store(const std::string& prompt, const std::string& response) const {
    if (cfg_.cache_dir.empty()) return;
    atomic_write_file(cache_path(prompt), response);
}

std::string LlmClient::complete(const std::string& prompt, bool use_cache) {
    if (!configured()) throw io_error("llm client not configured");
    if (use_cache) {
        if (auto cached = cache_lookup(prompt)) return *cached;
    }

    const SplitUrl url = split_url(cfg_.endpoint);
    if (url.base.rfind("http://", 0) != 0) {
        throw io_error("only http:// endpoints are supported: " + cfg_.endpoint);
    }
    httplib::Client client(url.base);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    client.set_write_timeout(cfg_.timeout_seconds, 0);

    nlohmann::json body;
    body["model"] = cfg_.model;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});

    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) throw io_error("llm request failed: no response from " + cfg_.endpoint);
    if (res->status != 200) {
        throw io_error("llm request failed: HTTP " + std::to_string(res->status));
    }
    try {
        const nlohmann::json reply = nlohmann::json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("llm response malformed: ") + e.what());
    }
}

}  // namespace dmlm
