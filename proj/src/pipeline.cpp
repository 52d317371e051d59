#include "oversense/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <deque>
#include <unordered_set>

#include "oversense/errors.hpp"
#include "oversense/util.hpp"

namespace oversense {

namespace {

std::string origin_to_string(Origin origin) {
    return origin == Origin::kSeed ? "seed" : "generated";
}

Origin origin_from_string(const std::string& s) {
    if (s == "seed") {
        return Origin::kSeed;
    }
    if (s == "generated") {
        return Origin::kGenerated;
    }
    throw ConfigError("unknown origin \"" + s + "\"");
}

std::string benign_to_string(BenignLabel label) {
    switch (label) {
        case BenignLabel::kBenign:
            return "benign";
        case BenignLabel::kHarmful:
            return "harmful";
        default:
            return "unlabeled";
    }
}

BenignLabel benign_from_string(const std::string& s) {
    if (s == "benign") {
        return BenignLabel::kBenign;
    }
    if (s == "harmful") {
        return BenignLabel::kHarmful;
    }
    if (s == "unlabeled") {
        return BenignLabel::kUnlabeled;
    }
    throw ConfigError("unknown benign label \"" + s + "\"");
}

// Instruction cues that turn a blocklisted token into a harmful-instruction
// pattern when they appear shortly before it.
const std::unordered_set<std::string>& instruction_cues() {
    static const std::unordered_set<std::string> kCues = {
        "how", "ways", "steps", "teach", "guide", "instructions"};
    return kCues;
}

constexpr std::size_t kCueWindow = 3;

std::string generated_id(std::size_t n) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "g%06zu", n);
    return std::string(buf);
}

}  // namespace

void FeaturePool::validate() const {
    if (cap == 0) {
        throw ConfigError("feature pool cap must be positive");
    }
    for (const auto& [feature, count] : counts) {
        if (count == 0) {
            throw ConfigError("feature pool stores a zero count for \"" +
                              feature + "\"; absent means zero");
        }
        if (count > cap) {
            throw ConfigError("feature pool count for \"" + feature +
                              "\" exceeds the cap");
        }
    }
}

bool pool_admit(const FeaturePool& pool, const std::string& feature) {
    auto it = pool.counts.find(feature);
    std::uint64_t count = it == pool.counts.end() ? 0 : it->second;
    return count < pool.cap;
}

void pool_record(FeaturePool& pool, const std::string& feature) {
    if (!pool_admit(pool, feature)) {
        throw InvariantViolation("pool_record(\"" + feature +
                                 "\") past the cap; callers must check "
                                 "pool_admit first");
    }
    ++pool.counts[feature];
}

void PromptRecord::validate() const {
    if (id.empty()) {
        throw IntegrityError("prompt record with empty id");
    }
    if (origin == Origin::kGenerated) {
        if (!seed_id || !trigger_feature) {
            throw IntegrityError("generated record \"" + id +
                                 "\" is missing seed_id or trigger_feature");
        }
    } else {
        if (seed_id || trigger_feature) {
            throw IntegrityError("seed record \"" + id +
                                 "\" carries generation lineage fields");
        }
    }
}

bool PromptRecord::operator==(const PromptRecord& other) const {
    return id == other.id && text == other.text && origin == other.origin &&
           benign == other.benign && seed_id == other.seed_id &&
           trigger_feature == other.trigger_feature &&
           proxy_p == other.proxy_p && safety_passed == other.safety_passed &&
           extras == other.extras;
}

void RunBudget::validate() const {
    if (max_total_samples == 0) {
        throw ConfigError("budget max_total_samples must be positive");
    }
    if (max_expansion_passes == 0) {
        throw ConfigError("budget max_expansion_passes must be positive");
    }
    if (per_seed_feature_limit == 0) {
        throw ConfigError("budget per_seed_feature_limit must be positive");
    }
}

SafetyFilter SafetyFilter::load(const std::filesystem::path& path) {
    return from_lines(split_lines(read_file(path)), path.string());
}

SafetyFilter SafetyFilter::from_lines(const std::vector<std::string>& lines,
                                      const std::string& origin) {
    SafetyFilter filter;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::string token = ascii_lower(line);
        if (!seen.insert(token).second) {
            throw ParseError(origin, static_cast<int>(i + 1),
                             "duplicate blocklist token \"" + token + "\"");
        }
        filter.blocklist.push_back(std::move(token));
    }
    filter.validate();
    return filter;
}

void SafetyFilter::validate() const {
    if (blocklist.empty()) {
        throw ConfigError("safety blocklist is empty");
    }
    std::unordered_set<std::string> seen;
    for (const std::string& entry : blocklist) {
        if (entry.empty()) {
            throw ConfigError("safety blocklist contains an empty entry");
        }
        std::vector<std::string> tokens = tokenize(entry);
        if (tokens.size() != 1 || tokens[0] != entry) {
            throw ConfigError("safety blocklist entry \"" + entry +
                              "\" is not a single lowercase token");
        }
        if (!seen.insert(entry).second) {
            throw ConfigError("safety blocklist entry \"" + entry +
                              "\" is duplicated");
        }
    }
}

bool check_benign(const SafetyFilter& filter, const std::string& text) {
    filter.validate();
    std::vector<std::string> tokens = tokenize(text);
    std::unordered_set<std::string> blocked(filter.blocklist.begin(),
                                            filter.blocklist.end());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (blocked.find(tokens[i]) == blocked.end()) {
            continue;
        }
        if (i > 0 && tokens[i - 1] == "to") {
            return false;
        }
        std::size_t begin = i > kCueWindow ? i - kCueWindow : 0;
        for (std::size_t k = begin; k < i; ++k) {
            if (instruction_cues().count(tokens[k]) != 0) {
                return false;
            }
        }
    }
    if (filter.judge != nullptr) {
        std::string raw = filter.judge->judge(text);
        std::string answer = trim(raw);
        if (answer == "HARMFUL") {
            return false;
        }
        if (answer != "SAFE") {
            throw JudgeFormatError(raw);
        }
    }
    return true;
}

std::vector<PromptRecord> filter_seeds(const std::vector<PromptRecord>& seeds,
                                       const ProxyParams& params,
                                       const Vocabulary& vocab) {
    std::vector<PromptRecord> rejected;
    for (const PromptRecord& seed : seeds) {
        RefusalPrediction prediction;
        try {
            prediction = predict(params, vocab, seed.text);
        } catch (const EmptyInputError&) {
            log_warn("seed \"" + seed.id +
                     "\" tokenizes to nothing; skipped by the proxy filter");
            continue;
        }
        if (prediction.reject()) {
            PromptRecord annotated = seed;
            annotated.proxy_p = prediction.probability;
            rejected.push_back(std::move(annotated));
        }
    }
    return rejected;
}

std::string RunReport::to_json() const {
    nlohmann::ordered_json j;
    j["seeds"] = n_seeds;
    j["rejected_seeds"] = n_rejected_seeds;
    j["generated"] = n_generated;
    j["kept"] = n_kept;
    j["skipped"] = n_skipped;
    j["safety_filtered"] = n_safety_filtered;
    j["proxy_accepted"] = n_proxy_accepted;
    j["budget_truncated"] = budget_truncated;
    j["pool"] = nlohmann::ordered_json::object();
    for (const auto& [feature, count] : pool_snapshot) {
        j["pool"][feature] = count;
    }
    j["elapsed_seconds"] = elapsed_seconds;
    return j.dump(2) + "\n";
}

LoopResult run_generation_loop(const std::vector<PromptRecord>& seeds,
                               const ProxyParams& params,
                               const Vocabulary& vocab,
                               CandidateGenerator& generator,
                               FeaturePool pool, const RunBudget& budget,
                               const SafetyFilter& safety,
                               const AttributionConfig& attribution,
                               const FrequencyTable& frequencies) {
    pool.validate();
    budget.validate();
    attribution.validate();
    safety.validate();
    auto started = std::chrono::steady_clock::now();

    LoopResult result;
    result.report.n_seeds = seeds.size();

    struct WorkItem {
        PromptRecord record;
        std::size_t depth = 0;
    };
    std::deque<WorkItem> worklist;
    for (PromptRecord& seed : filter_seeds(seeds, params, vocab)) {
        worklist.push_back({std::move(seed), 0});
    }
    result.report.n_rejected_seeds = worklist.size();

    while (!worklist.empty()) {
        if (result.generated.size() >= budget.max_total_samples) {
            result.report.budget_truncated = true;
            break;
        }
        WorkItem item = std::move(worklist.front());
        worklist.pop_front();
        if (item.depth >= budget.max_expansion_passes) {
            continue;
        }

        TokenizedPrompt encoded = vocab.encode(item.record.id, item.record.text);
        if (encoded.size() == 0) {
            log_warn("worklist item \"" + item.record.id +
                     "\" tokenizes to nothing; not expanded");
            continue;
        }
        AttributionResult attributed =
            extract_features(params, encoded, attribution, frequencies);
        std::size_t n_features = std::min(attributed.features.size(),
                                          budget.per_seed_feature_limit);

        for (std::size_t fi = 0; fi < n_features; ++fi) {
            if (result.generated.size() >= budget.max_total_samples) {
                result.report.budget_truncated = true;
                break;
            }
            const std::string& feature = attributed.features[fi];
            if (!pool_admit(pool, feature)) {
                continue;
            }

            std::string candidate;
            bool generated_ok = false;
            for (int attempt = 0; attempt < 2 && !generated_ok; ++attempt) {
                try {
                    candidate = generator.generate(item.record.text, feature);
                    generated_ok = true;
                } catch (const TransportError& e) {
                    if (attempt == 1) {
                        log_warn("generator failed twice for item \"" +
                                 item.record.id + "\" feature \"" + feature +
                                 "\": " + e.what());
                    }
                }
            }
            if (!generated_ok) {
                ++result.report.n_skipped;
                continue;
            }
            ++result.report.n_generated;

            // Benignness gate first: discarded candidates never reach the
            // proxy, and only benign candidates can enter the dataset.
            if (!check_benign(safety, candidate)) {
                ++result.report.n_safety_filtered;
                continue;
            }

            RefusalPrediction prediction;
            try {
                prediction = predict(params, vocab, candidate);
            } catch (const EmptyInputError&) {
                log_warn("candidate for item \"" + item.record.id +
                         "\" tokenizes to nothing; skipped");
                ++result.report.n_skipped;
                continue;
            }
            if (!prediction.reject()) {
                ++result.report.n_proxy_accepted;
                continue;
            }

            pool_record(pool, feature);
            PromptRecord record;
            record.id = generated_id(result.generated.size() + 1);
            record.text = candidate;
            record.origin = Origin::kGenerated;
            record.benign = BenignLabel::kBenign;
            record.seed_id = item.record.id;
            record.trigger_feature = feature;
            record.proxy_p = prediction.probability;
            record.safety_passed = true;
            record.validate();
            result.generated.push_back(record);
            worklist.push_back({std::move(record), item.depth + 1});
        }
    }

    result.report.n_kept = result.generated.size();
    result.report.pool_snapshot = pool.counts;
    result.report.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      started)
            .count();
    result.pool = std::move(pool);
    return result;
}

std::pair<ProxyParams, TrainReport> refine_detector(
    const ProxyParams& params, const std::vector<PromptRecord>& generated,
    const std::vector<PromptRecord>& accepted_controls, const Vocabulary& vocab,
    const TrainConfig& config) {
    if (generated.empty()) {
        return {params, TrainReport{}};
    }
    std::vector<LabeledExample> examples;
    examples.reserve(generated.size() + accepted_controls.size());
    auto append = [&](const std::vector<PromptRecord>& records, int label) {
        for (const PromptRecord& record : records) {
            TokenizedPrompt prompt = vocab.encode(record.id, record.text);
            if (prompt.size() == 0) {
                log_warn("record \"" + record.id +
                         "\" tokenizes to nothing; excluded from refinement");
                continue;
            }
            examples.push_back({std::move(prompt), label});
        }
    };
    append(generated, 1);
    append(accepted_controls, 0);
    return continue_training(params, examples, config);
}

nlohmann::ordered_json prompt_record_to_json(const PromptRecord& record) {
    nlohmann::ordered_json j;
    j["id"] = record.id;
    j["text"] = record.text;
    j["origin"] = origin_to_string(record.origin);
    j["benign"] = benign_to_string(record.benign);
    if (record.seed_id) {
        j["seed_id"] = *record.seed_id;
    }
    if (record.trigger_feature) {
        j["trigger_feature"] = *record.trigger_feature;
    }
    if (record.proxy_p) {
        j["proxy_p"] = *record.proxy_p;
    }
    if (record.safety_passed) {
        j["safety_passed"] = *record.safety_passed;
    }
    for (const auto& [key, value] : record.extras.items()) {
        j[key] = value;
    }
    return j;
}

PromptRecord prompt_record_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) {
        throw ConfigError("prompt record is not a JSON object");
    }
    PromptRecord record;
    for (const std::string& field : {"id", "text", "origin"}) {
        if (!j.contains(field)) {
            throw ConfigError("prompt record is missing \"" + field + "\"");
        }
    }
    record.id = j.at("id").get<std::string>();
    record.text = j.at("text").get<std::string>();
    record.origin = origin_from_string(j.at("origin").get<std::string>());
    if (j.contains("benign")) {
        record.benign = benign_from_string(j.at("benign").get<std::string>());
    }
    if (j.contains("seed_id")) {
        record.seed_id = j.at("seed_id").get<std::string>();
    }
    if (j.contains("trigger_feature")) {
        record.trigger_feature = j.at("trigger_feature").get<std::string>();
    }
    if (j.contains("proxy_p")) {
        record.proxy_p = j.at("proxy_p").get<double>();
    }
    if (j.contains("safety_passed")) {
        record.safety_passed = j.at("safety_passed").get<bool>();
    }
    static const std::unordered_set<std::string> kKnown = {
        "id",      "text",    "origin",         "benign",
        "seed_id", "trigger_feature", "proxy_p", "safety_passed"};
    for (const auto& [key, value] : j.items()) {
        if (kKnown.find(key) == kKnown.end()) {
            record.extras[key] = value;
        }
    }
    record.validate();
    return record;
}

void save_dataset(const std::vector<PromptRecord>& records,
                  const std::filesystem::path& path) {
    std::string content;
    for (const PromptRecord& record : records) {
        content += prompt_record_to_json(record).dump();
        content += '\n';
    }
    atomic_write(path, content);
}

std::vector<PromptRecord> load_dataset(const std::filesystem::path& path) {
    std::vector<std::string> lines = split_lines(read_file(path));
    std::vector<PromptRecord> records;
    records.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            nlohmann::ordered_json j =
                nlohmann::ordered_json::parse(lines[i]);
            records.push_back(prompt_record_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), static_cast<int>(i + 1), e.what());
        } catch (const Error& e) {
            throw ParseError(path.string(), static_cast<int>(i + 1), e.what());
        }
    }
    return records;
}

}  // namespace oversense
