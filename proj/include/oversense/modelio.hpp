#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "oversense/refusal.hpp"

namespace oversense {

/// Name of the environment variable holding the bearer credential.
inline constexpr const char* kApiKeyEnv = "OVERSENSE_API_KEY";

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

/// One chat-completion call. Wire body: {"model", "messages",
/// "temperature", "top_p", "max_tokens"}; reply content is read from
/// choices[0].message.content.
struct ChatRequest {
    std::string model_name;
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
    double top_p = 0.8;
    std::size_t max_tokens = 256;

    void validate() const;  // throws ConfigError
    bool operator==(const ChatRequest&) const = default;
};

std::string chat_request_to_json(const ChatRequest& request);
ChatRequest chat_request_from_json(const std::string& json_text,
                                   const std::string& origin = "<memory>");

/// Extracts choices[0].message.content; throws ProtocolError on any other
/// shape.
std::string parse_chat_response(const std::string& body);

struct RetryPolicy {
    std::size_t max_retries = 3;
    std::chrono::milliseconds base_delay{500};
    double factor = 2.0;
    std::uint64_t jitter_seed = 0;
};

/// Uniform completion interface; the pipeline runs against either the
/// networked client or the offline simulators without modification.
class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
};

/// Networked client. Retries connection failures, 429, and 5xx with
/// exponential jittered backoff; other non-2xx statuses fail immediately.
/// The credential is sent as a bearer token.
class HttpChatClient : public ChatClient {
public:
    HttpChatClient(std::string endpoint_url, std::string api_key,
                   RetryPolicy policy = {});

    /// Reads the credential from OVERSENSE_API_KEY; throws ConfigError
    /// before any network activity when it is unset or empty.
    static HttpChatClient from_env(std::string endpoint_url,
                                   RetryPolicy policy = {});

    std::string complete(const ChatRequest& request) override;

private:
    std::string endpoint_url_;
    std::string api_key_;
    RetryPolicy policy_;
};

/// Offline stand-in for the target model: refuses iff any trigger token
/// appears in the tokenized prompt. Pure.
struct SimulatedRefuser {
    std::set<std::string> trigger_tokens;
    std::string refusal_text;
    std::string comply_text;

    void validate() const;  // non-empty trigger set
};

std::string simulate_target(const SimulatedRefuser& refuser,
                            const std::string& prompt);

/// Offline stand-in for the generator: a seeded hash of (q_old, feature)
/// picks a template, and the feature replaces its placeholder. Every
/// template must contain `{feature}` exactly once.
struct TemplateGenerator {
    std::vector<std::string> templates;
    std::uint64_t seed = 0;

    void validate() const;
};

std::string template_generate(const TemplateGenerator& gen,
                              const std::string& q_old,
                              const std::string& feature);

/// Generator interface used by the pipeline: produces a new candidate
/// conditioned on the seed prompt and one trigger feature.
class CandidateGenerator {
public:
    virtual ~CandidateGenerator() = default;
    virtual std::string generate(const std::string& q_old,
                                 const std::string& feature) = 0;
};

/// Offline CandidateGenerator over a TemplateGenerator.
class OfflineGenerator : public CandidateGenerator {
public:
    explicit OfflineGenerator(TemplateGenerator gen);
    std::string generate(const std::string& q_old,
                         const std::string& feature) override;

private:
    TemplateGenerator gen_;
};

/// Networked CandidateGenerator: renders the prompt template ({seed} and
/// {feature} placeholders) and sends one user message.
class LlmGenerator : public CandidateGenerator {
public:
    LlmGenerator(ChatClient& client, std::string model_name,
                 std::string prompt_template, double temperature, double top_p,
                 std::size_t max_tokens = 256);
    std::string generate(const std::string& q_old,
                         const std::string& feature) override;

private:
    ChatClient& client_;
    std::string model_name_;
    std::string template_;
    double temperature_;
    double top_p_;
    std::size_t max_tokens_;
};

/// Networked judge: renders the judge template ({response} placeholder),
/// asks for a constrained one-token reply, and returns it raw.
class LlmJudge : public JudgeClient {
public:
    LlmJudge(ChatClient& client, std::string model_name,
             std::string judge_template);
    std::string judge(const std::string& response_text) override;
    std::size_t calls() const override { return calls_; }

private:
    ChatClient& client_;
    std::string model_name_;
    std::string template_;
    std::size_t calls_ = 0;
};

/// Replaces every occurrence of `placeholder` (e.g. "{feature}") in
/// `template_text`; throws ConfigError when the placeholder is absent.
std::string render_template(const std::string& template_text,
                            const std::string& placeholder,
                            const std::string& value);

}  // namespace oversense
