#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "oversense/attribution.hpp"
#include "oversense/corpus.hpp"
#include "oversense/modelio.hpp"
#include "oversense/proxy.hpp"
#include "oversense/refusal.hpp"

namespace oversense {

/// Global feature usage counter with an admission cap. Absent features count
/// as zero; stored counts are >= 1, never exceed the cap, and only grow.
struct FeaturePool {
    std::map<std::string, std::uint64_t> counts;
    std::uint64_t cap = 50;

    void validate() const;  // throws ConfigError on cap == 0
};

/// True iff the feature's count is strictly below the cap. Pure.
bool pool_admit(const FeaturePool& pool, const std::string& feature);

/// Increments the feature's count by one. The caller must have checked
/// pool_admit first; recording past the cap throws InvariantViolation — that
/// is a bug in the caller, not bad input.
void pool_record(FeaturePool& pool, const std::string& feature);

enum class Origin { kSeed, kGenerated };

enum class BenignLabel { kBenign, kHarmful, kUnlabeled };

/// One prompt in a dataset. Generated records carry lineage (seed_id,
/// trigger_feature) and the evidence they were admitted on (proxy_p,
/// safety_passed); seed records carry neither lineage field. Unknown JSON
/// fields found on load are preserved in extras and re-emitted on save.
struct PromptRecord {
    std::string id;
    std::string text;
    Origin origin = Origin::kSeed;
    BenignLabel benign = BenignLabel::kUnlabeled;
    std::optional<std::string> seed_id;
    std::optional<std::string> trigger_feature;
    std::optional<double> proxy_p;
    std::optional<bool> safety_passed;
    nlohmann::ordered_json extras = nlohmann::ordered_json::object();

    void validate() const;  // origin/lineage invariants, throws IntegrityError
    bool operator==(const PromptRecord& other) const;
};

/// Termination guards for the generation loop. All limits must be positive.
struct RunBudget {
    std::size_t max_total_samples = 500;
    std::size_t max_expansion_passes = 3;
    std::size_t per_seed_feature_limit = 3;

    void validate() const;  // throws ConfigError
    bool operator==(const RunBudget&) const = default;
};

/// Harmful-content gate for candidate prompts. The token blocklist always
/// runs; the judge (when configured) runs only after the blocklist passes.
/// The blocklist targets harmful-instruction patterns, not bare tokens: a
/// blocklisted token only fails the check when an instruction cue ("how",
/// "ways", "steps", "teach", "guide", "instructions") appears within the
/// three preceding tokens or the token directly follows "to". The judge must
/// reply exactly HARMFUL or SAFE.
struct SafetyFilter {
    std::vector<std::string> blocklist;  // lowercase tokens
    JudgeClient* judge = nullptr;        // optional, not owned

    /// One token per line; `#` comments and blank lines skipped.
    static SafetyFilter load(const std::filesystem::path& path);
    static SafetyFilter from_lines(const std::vector<std::string>& lines,
                                   const std::string& origin = "<memory>");

    void validate() const;  // throws ConfigError on empty/duplicate tokens
};

/// True when the text is semantically benign under the filter's rules.
/// Empty text is vacuously benign (upstream rejects empties anyway). Judge
/// transport errors propagate; a malformed judge reply throws
/// JudgeFormatError.
bool check_benign(const SafetyFilter& filter, const std::string& text);

/// Returns the proxy-rejected subset of seeds, order preserved, each with
/// proxy_p filled in. Records that tokenize to nothing are skipped with a
/// logged warning.
std::vector<PromptRecord> filter_seeds(const std::vector<PromptRecord>& seeds,
                                       const ProxyParams& params,
                                       const Vocabulary& vocab);

/// Counters and outcome of one generation run. budget_truncated is set only
/// when the sample budget stopped the loop while work remained; draining the
/// worklist (including via the expansion-depth cap) is normal termination.
struct RunReport {
    std::size_t n_seeds = 0;
    std::size_t n_rejected_seeds = 0;
    std::size_t n_generated = 0;        // candidates produced
    std::size_t n_kept = 0;             // admitted to the output set
    std::size_t n_skipped = 0;  // generator failures, untokenizable output
    std::size_t n_safety_filtered = 0;  // candidates failing check_benign
    std::size_t n_proxy_accepted = 0;   // candidates the proxy did not reject
    bool budget_truncated = false;
    std::map<std::string, std::uint64_t> pool_snapshot;
    double elapsed_seconds = 0.0;

    std::string to_json() const;
};

/// Output of run_generation_loop: the generated records, the updated pool,
/// and the run counters.
struct LoopResult {
    std::vector<PromptRecord> generated;
    FeaturePool pool;
    RunReport report;
};

/// The full closed loop. A FIFO worklist starts with the proxy-rejected
/// seeds (depth 0). Each item is expanded while its depth is below
/// budget.max_expansion_passes: the top attribution features are extracted
/// (at most per_seed_feature_limit of them are used), and for each feature
/// still admissible in the pool a candidate is generated conditioned on
/// (item text, feature). A candidate is kept only if check_benign passes
/// and then the proxy rejects it — in that order. Kept candidates record
/// the feature in the pool exactly once, join the output set with full
/// lineage (seed_id = expanded item's id, trigger_feature, proxy_p,
/// safety_passed), and re-enter the worklist at depth + 1. The loop stops
/// when the worklist drains or the output reaches max_total_samples.
/// Generator transport failures are retried once, then the (item, feature)
/// pair is skipped with a logged warning. Deterministic for deterministic
/// generators: sequential, FIFO, features in rank order.
LoopResult run_generation_loop(const std::vector<PromptRecord>& seeds,
                               const ProxyParams& params,
                               const Vocabulary& vocab,
                               CandidateGenerator& generator,
                               FeaturePool pool, const RunBudget& budget,
                               const SafetyFilter& safety,
                               const AttributionConfig& attribution,
                               const FrequencyTable& frequencies);

/// Continues proxy training on generated records (labeled reject) plus
/// accepted controls (labeled accept). An empty generated set is a no-op
/// returning the parameters bitwise unchanged with an empty report. Records
/// that tokenize to nothing are skipped with a logged warning.
std::pair<ProxyParams, TrainReport> refine_detector(
    const ProxyParams& params, const std::vector<PromptRecord>& generated,
    const std::vector<PromptRecord>& accepted_controls, const Vocabulary& vocab,
    const TrainConfig& config);

/// JSON object for one record: fixed field names id, text, origin, benign,
/// seed_id, trigger_feature, proxy_p, safety_passed (optional fields omitted
/// when absent), then any preserved unknown fields.
nlohmann::ordered_json prompt_record_to_json(const PromptRecord& record);
PromptRecord prompt_record_from_json(const nlohmann::ordered_json& j);

/// UTF-8 JSONL, one record per line, written atomically. load(save(x)) == x
/// field for field, unknown fields included. A malformed line raises
/// ParseError naming the 1-based line number; an empty file is an empty
/// collection.
void save_dataset(const std::vector<PromptRecord>& records,
                  const std::filesystem::path& path);
std::vector<PromptRecord> load_dataset(const std::filesystem::path& path);

}  // namespace oversense
