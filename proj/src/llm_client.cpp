#include "podgen/llm_client.hpp"

#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "httplib.h"
#include "json.hpp"

namespace podgen {

HttpLlmClient::HttpLlmClient(std::string endpoint, std::string api_key, std::string model)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), model_(std::move(model)) {
    if (endpoint_.empty()) throw std::invalid_argument("HttpLlmClient: empty endpoint");
}

std::unique_ptr<HttpLlmClient> HttpLlmClient::from_env() {
    const char* endpoint = std::getenv("PODGEN_LLM_ENDPOINT");
    const char* key = std::getenv("PODGEN_LLM_API_KEY");
    const char* model = std::getenv("PODGEN_LLM_MODEL");
    if (!endpoint || !*endpoint)
        throw std::runtime_error("HttpLlmClient: PODGEN_LLM_ENDPOINT not set");
    return std::make_unique<HttpLlmClient>(endpoint, key ? key : "", model ? model : "default");
}

std::string HttpLlmClient::complete(const std::string& prompt, const LlmParams& params) {
    // split endpoint into host part and path
    std::string host = endpoint_, path = "/v1/chat/completions";
    const std::size_t scheme = host.find("://");
    const std::size_t slash = host.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
        path = host.substr(slash);
        host = host.substr(0, slash);
    }
    httplib::Client client(host);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    nlohmann::json body = {
        {"model", model_},
        {"messages", {{{"role", "user"}, {"content", prompt}}}},
        {"temperature", params.temperature},
        {"max_tokens", params.max_tokens},
    };
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
        throw std::runtime_error("HttpLlmClient: transport failure contacting " + endpoint_);
    if (res->status != 200)
        throw std::runtime_error("HttpLlmClient: HTTP " + std::to_string(res->status) + ": " +
                                 res->body);
    nlohmann::json j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
}

void MockLlm::add_response(const std::string& prompt_substring, const std::string& response) {
    responses_.emplace_back(prompt_substring, response);
}

std::string MockLlm::complete(const std::string& prompt, const LlmParams&) {
    ++calls;
    for (const auto& [needle, response] : responses_)
        if (prompt.find(needle) != std::string::npos) return response;
    throw std::runtime_error("MockLlm: no response registered for prompt");
}

}  // namespace podgen
