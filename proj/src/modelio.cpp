#include "oversense/modelio.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "oversense/corpus.hpp"
#include "oversense/errors.hpp"
#include "oversense/util.hpp"

namespace oversense {

namespace {

using ordered_json = nlohmann::ordered_json;

bool valid_role(const std::string& role) {
    return role == "system" || role == "user" || role == "assistant";
}

// Splits "http(s)://host[:port]/path" into the client base and the path.
std::pair<std::string, std::string> split_endpoint(const std::string& url) {
    std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint URL must start with http:// or https://: " + url);
    }
    std::size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

bool retriable_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

}  // namespace

void ChatRequest::validate() const {
    if (model_name.empty()) {
        throw ConfigError("chat request: model_name is empty");
    }
    if (messages.empty()) {
        throw ConfigError("chat request: at least one message required");
    }
    for (const ChatMessage& m : messages) {
        if (!valid_role(m.role)) {
            throw ConfigError("chat request: invalid role \"" + m.role + "\"");
        }
    }
    if (!(temperature >= 0.0)) {
        throw ConfigError("chat request: temperature must be >= 0");
    }
    if (!(top_p > 0.0) || top_p > 1.0) {
        throw ConfigError("chat request: top_p must be in (0, 1]");
    }
    if (max_tokens == 0) {
        throw ConfigError("chat request: max_tokens must be positive");
    }
}

std::string chat_request_to_json(const ChatRequest& request) {
    request.validate();
    ordered_json j;
    j["model"] = request.model_name;
    ordered_json msgs = ordered_json::array();
    for (const ChatMessage& m : request.messages) {
        msgs.push_back({{"role", m.role}, {"content", m.content}});
    }
    j["messages"] = std::move(msgs);
    j["temperature"] = request.temperature;
    j["top_p"] = request.top_p;
    j["max_tokens"] = request.max_tokens;
    return j.dump();
}

ChatRequest chat_request_from_json(const std::string& json_text,
                                   const std::string& origin) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(origin, 1, e.what());
    }
    try {
        ChatRequest request;
        request.model_name = j.at("model").get<std::string>();
        for (const auto& m : j.at("messages")) {
            request.messages.push_back({m.at("role").get<std::string>(),
                                        m.at("content").get<std::string>()});
        }
        request.temperature = j.at("temperature").get<double>();
        request.top_p = j.at("top_p").get<double>();
        request.max_tokens = j.at("max_tokens").get<std::size_t>();
        request.validate();
        return request;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(origin, 1, std::string("chat request: ") + e.what());
    }
}

std::string parse_chat_response(const std::string& body) {
    ordered_json j;
    try {
        j = ordered_json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
    try {
        const auto& choices = j.at("choices");
        if (!choices.is_array() || choices.empty()) {
            throw ProtocolError("response has no choices");
        }
        return choices[0].at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("response shape: ") + e.what());
    }
}

HttpChatClient::HttpChatClient(std::string endpoint_url, std::string api_key,
                               RetryPolicy policy)
    : endpoint_url_(std::move(endpoint_url)),
      api_key_(std::move(api_key)),
      policy_(policy) {
    if (api_key_.empty()) {
        throw ConfigError("API credential is empty; set " + std::string(kApiKeyEnv));
    }
    split_endpoint(endpoint_url_);  // validate shape up front
}

HttpChatClient HttpChatClient::from_env(std::string endpoint_url,
                                        RetryPolicy policy) {
    const char* key = std::getenv(kApiKeyEnv);
    if (key == nullptr || *key == '\0') {
        throw ConfigError(std::string(kApiKeyEnv) +
                          " is not set; required for online mode");
    }
    return HttpChatClient(std::move(endpoint_url), key, policy);
}

std::string HttpChatClient::complete(const ChatRequest& request) {
    std::string body = chat_request_to_json(request);
    auto [base, path] = split_endpoint(endpoint_url_);
    httplib::Client client(base);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(60, 0);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};

    Rng jitter(policy_.jitter_seed);
    int last_status = 0;
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= policy_.max_retries; ++attempt) {
        if (attempt > 0) {
            double scale = 1.0;
            for (std::size_t i = 1; i < attempt; ++i) {
                scale *= policy_.factor;
            }
            // Full jitter in [0.5, 1.0] of the exponential delay.
            double ms = static_cast<double>(policy_.base_delay.count()) * scale *
                        (0.5 + 0.5 * jitter.uniform01());
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long long>(ms)));
        }
        httplib::Result res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_status = 0;
            last_error = "connection failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            return parse_chat_response(res->body);
        }
        last_status = res->status;
        last_error = "HTTP " + std::to_string(res->status);
        if (!retriable_status(res->status)) {
            throw TransportError("chat endpoint returned " + last_error,
                                 last_status);
        }
    }
    throw TransportError("chat endpoint failed after " +
                             std::to_string(policy_.max_retries) + " retries: " +
                             last_error,
                         last_status);
}

void SimulatedRefuser::validate() const {
    if (trigger_tokens.empty()) {
        throw ConfigError("simulated refuser: trigger set is empty");
    }
}

std::string simulate_target(const SimulatedRefuser& refuser,
                            const std::string& prompt) {
    refuser.validate();
    for (const std::string& token : tokenize(prompt)) {
        if (refuser.trigger_tokens.count(token) != 0) {
            return refuser.refusal_text;
        }
    }
    return refuser.comply_text;
}

void TemplateGenerator::validate() const {
    if (templates.empty()) {
        throw ConfigError("template generator: template list is empty");
    }
    for (std::size_t i = 0; i < templates.size(); ++i) {
        std::size_t first = templates[i].find("{feature}");
        if (first == std::string::npos) {
            throw ConfigError("template generator: template " + std::to_string(i) +
                              " lacks the {feature} placeholder");
        }
        if (templates[i].find("{feature}", first + 1) != std::string::npos) {
            throw ConfigError("template generator: template " + std::to_string(i) +
                              " contains {feature} more than once");
        }
    }
}

std::string template_generate(const TemplateGenerator& gen,
                              const std::string& q_old,
                              const std::string& feature) {
    gen.validate();
    if (feature.empty()) {
        throw ConfigError("template generator: empty feature");
    }
    // Seeded selection: chain the run seed and both conditioning inputs.
    std::uint64_t h = fnv1a(q_old, gen.seed ^ 14695981039346656037ULL);
    h = fnv1a("\x1f", h);
    h = fnv1a(feature, h);
    const std::string& chosen = gen.templates[h % gen.templates.size()];
    return render_template(chosen, "{feature}", feature);
}

OfflineGenerator::OfflineGenerator(TemplateGenerator gen) : gen_(std::move(gen)) {
    gen_.validate();
}

std::string OfflineGenerator::generate(const std::string& q_old,
                                       const std::string& feature) {
    return template_generate(gen_, q_old, feature);
}

LlmGenerator::LlmGenerator(ChatClient& client, std::string model_name,
                           std::string prompt_template, double temperature,
                           double top_p, std::size_t max_tokens)
    : client_(client),
      model_name_(std::move(model_name)),
      template_(std::move(prompt_template)),
      temperature_(temperature),
      top_p_(top_p),
      max_tokens_(max_tokens) {}

std::string LlmGenerator::generate(const std::string& q_old,
                                   const std::string& feature) {
    std::string prompt = render_template(template_, "{seed}", q_old);
    prompt = render_template(prompt, "{feature}", feature);
    ChatRequest request;
    request.model_name = model_name_;
    request.messages = {{"user", prompt}};
    request.temperature = temperature_;
    request.top_p = top_p_;
    request.max_tokens = max_tokens_;
    return client_.complete(request);
}

LlmJudge::LlmJudge(ChatClient& client, std::string model_name,
                   std::string judge_template)
    : client_(client),
      model_name_(std::move(model_name)),
      template_(std::move(judge_template)) {}

std::string LlmJudge::judge(const std::string& response_text) {
    ++calls_;
    ChatRequest request;
    request.model_name = model_name_;
    request.messages = {{"user", render_template(template_, "{response}",
                                                 response_text)}};
    request.temperature = 0.0;
    request.top_p = 1.0;
    request.max_tokens = 4;
    return client_.complete(request);
}

std::string render_template(const std::string& template_text,
                            const std::string& placeholder,
                            const std::string& value) {
    std::size_t pos = template_text.find(placeholder);
    if (pos == std::string::npos) {
        throw ConfigError("template lacks placeholder " + placeholder);
    }
    std::string out = template_text;
    while (pos != std::string::npos) {
        out.replace(pos, placeholder.size(), value);
        pos = out.find(placeholder, pos + value.size());
    }
    return out;
}

}  // namespace oversense
