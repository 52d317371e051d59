#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "oversense/attribution.hpp"
#include "oversense/pipeline.hpp"
#include "oversense/proxy.hpp"

namespace oversense {

/// Whether a run talks to live chat endpoints or to bundled simulators.
enum class RunMode { kOffline, kOnline };

std::string run_mode_to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& text);  // throws ConfigError

/// File locations referenced by commands. Relative entries in a config file
/// are resolved against the config file's directory at load time, so a saved
/// config always carries absolute paths.
struct PathsConfig {
    std::filesystem::path seed_data;        // JSONL prompt records
    std::filesystem::path proxy_data;       // JSONL {"text", "label"} pairs
    std::filesystem::path frequency_table;  // TSV token counts
    std::filesystem::path phrase_list;      // refusal phrases, one per line
    std::filesystem::path blocklist;        // safety tokens, one per line
    std::filesystem::path categories;       // TSV category keyword rows
    std::filesystem::path templates;        // offline candidate templates
    std::filesystem::path generation_template;  // online prompt template
    std::filesystem::path judge_template;       // online judge template
    std::filesystem::path output_dir;

    bool operator==(const PathsConfig&) const = default;
};

/// One offline stand-in target: refuses whenever a trigger token appears.
struct SimulatorSpec {
    std::string id;
    std::vector<std::string> trigger_tokens;
    std::string refusal_text;
    std::string comply_text;

    bool operator==(const SimulatorSpec&) const = default;
};

/// Live chat endpoint settings (online mode only). The API key is never
/// stored in the config; it comes from the environment.
struct EndpointConfig {
    std::string base_url;
    std::string model;
    std::size_t max_retries = 4;

    bool operator==(const EndpointConfig&) const = default;
};

/// Sampling knobs and the template-selection seed for candidate generation.
struct GenerationConfig {
    double temperature = 1.0;
    double top_p = 0.8;
    std::uint64_t seed = 1234;

    bool operator==(const GenerationConfig&) const = default;
};

/// Full configuration for a run. Key names and defaults are contractual;
/// unknown keys are rejected so typos fail loudly instead of silently
/// falling back to defaults.
struct RunConfig {
    RunMode mode = RunMode::kOffline;
    PathsConfig paths;
    TrainConfig proxy;
    std::size_t vocab_min_count = 1;
    AttributionConfig attribution;
    std::uint64_t pool_cap = 50;
    RunBudget budget;
    GenerationConfig generation;
    bool refine_enabled = false;
    std::size_t distill_min_rejections = 5;
    std::size_t report_top_n = 20;
    bool report_rank_over_all = false;
    std::vector<SimulatorSpec> simulators;
    std::optional<EndpointConfig> endpoint;

    /// Parses and resolves relative paths against the file's directory.
    /// Throws ParseError (with a line number) on malformed JSON and
    /// ConfigError on unknown or ill-typed keys.
    static RunConfig load(const std::filesystem::path& path);
    static RunConfig from_json(const std::string& text,
                               const std::filesystem::path& base_dir,
                               const std::string& origin = "<memory>");
    std::string to_json() const;
    void save(const std::filesystem::path& path) const;  // atomic

    /// Full fail-fast validation: every referenced input path must exist,
    /// offline mode forbids endpoint settings and requires at least one
    /// simulator, online mode requires endpoint settings, and all nested
    /// configs must validate. Throws ConfigError.
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

}  // namespace oversense
