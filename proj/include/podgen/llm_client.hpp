#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

namespace podgen {

struct LlmParams {
    float temperature = 0.7f;
    int max_tokens = 8192;
};

// Single-call completion contract over whatever provider is configured.
class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string complete(const std::string& prompt, const LlmParams& params) = 0;
};

// OpenAI-style chat-completions endpoint. Credentials come from the
// environment only: PODGEN_LLM_ENDPOINT, PODGEN_LLM_API_KEY, PODGEN_LLM_MODEL.
class HttpLlmClient : public LlmClient {
public:
    HttpLlmClient(std::string endpoint, std::string api_key, std::string model);
    static std::unique_ptr<HttpLlmClient> from_env();

    std::string complete(const std::string& prompt, const LlmParams& params) override;

private:
    std::string endpoint_, api_key_, model_;
};

// Deterministic offline stand-in: responses are selected by substring match
// against the prompt, in registration order.
class MockLlm : public LlmClient {
public:
    void add_response(const std::string& prompt_substring, const std::string& response);
    std::string complete(const std::string& prompt, const LlmParams& params) override;

    int calls = 0;

private:
    std::vector<std::pair<std::string, std::string>> responses_;
};

// Adapter for test lambdas.
class FunctionLlm : public LlmClient {
public:
    explicit FunctionLlm(std::function<std::string(const std::string&)> fn)
        : fn_(std::move(fn)) {}
    std::string complete(const std::string& prompt, const LlmParams&) override {
        return fn_(prompt);
    }

private:
    std::function<std::string(const std::string&)> fn_;
};

}  // namespace podgen
