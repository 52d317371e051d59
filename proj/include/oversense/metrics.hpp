#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oversense/refusal.hpp"

namespace oversense {

/// The (prompt x model) table of refusal verdicts. Coverage is explicit:
/// a pair is covered exactly when a verdict was added for it; nothing is
/// ever assumed for missing pairs. Prompt and model ids are unique.
class DecisionMatrix {
public:
    struct PromptInfo {
        std::string id;
        bool benign = false;
    };

    /// Registers a prompt (with its semantic benign label) or a model.
    /// Re-adding the same prompt with the same label is a no-op; a
    /// conflicting label throws IntegrityError.
    void add_prompt(const std::string& id, bool benign);
    void add_model(const std::string& id);

    /// Records a verdict. Prompt and model must be registered, and the pair
    /// must not be covered yet; violations throw IntegrityError.
    void set_verdict(const std::string& prompt_id, const std::string& model_id,
                     Verdict verdict);

    bool covers(const std::string& prompt_id,
                const std::string& model_id) const;
    std::optional<Verdict> verdict(const std::string& prompt_id,
                                   const std::string& model_id) const;

    const std::vector<PromptInfo>& prompts() const { return prompts_; }
    const std::vector<std::string>& models() const { return models_; }
    bool has_prompt(const std::string& id) const;
    bool has_model(const std::string& id) const;
    bool prompt_benign(const std::string& id) const;  // IntegrityError if absent
    std::size_t n_verdicts() const { return verdicts_.size(); }

    bool operator==(const DecisionMatrix& other) const;

private:
    std::vector<PromptInfo> prompts_;
    std::vector<std::string> models_;
    std::map<std::string, bool> prompt_benign_;
    std::map<std::pair<std::string, std::string>, Verdict> verdicts_;
};

/// One oversensitivity event: 1 iff the prompt is benign AND the model
/// rejected it, else 0.
int oversensitivity(bool benign, Verdict verdict);

/// Oversensitivity rate of one model: |benign and rejected| / |benign|,
/// counted over the matrix's distinct prompt ids. Throws MetricsError when
/// the model is not covered for every benign prompt (listing the missing
/// pairs) or when there are zero benign prompts — never silently 0.
double osr(const DecisionMatrix& matrix, const std::string& model_id);

/// Prompts rejected by at least min_rejections of the covered models, in
/// the matrix's prompt order. Throws ConfigError when the matrix has fewer
/// than min_rejections models or min_rejections == 0.
std::vector<std::string> distill_hard(const DecisionMatrix& matrix,
                                      std::size_t min_rejections = 5);

/// Ordered keyword categories. A prompt belongs to the first category (in
/// config order) with any keyword among its tokens, else the fallback.
struct CategoryConfig {
    std::vector<std::pair<std::string, std::vector<std::string>>> categories;
    std::string fallback = "Others";

    /// TSV, one category per line: name, then one keyword per column.
    /// `#` comments and blank lines skipped.
    static CategoryConfig load(const std::filesystem::path& path);

    void validate() const;  // unique names, lowercase single-token keywords
};

std::string categorize(const std::string& text, const CategoryConfig& config);

/// Rectangular percentile matrix: rows are models, columns the selected
/// features.
struct Heatmap {
    std::vector<std::string> models;
    std::vector<std::string> features;
    std::vector<std::vector<double>> cells;  // models x features, in [0, 100]
};

/// Selects the top_n features by total count across models (ties broken
/// lexicographically; fewer than top_n features selects all). Each cell is
/// the percentile rank of the feature's count within its model row:
/// 100 * (#features with strictly smaller count) / (n_selected - 1), and 0
/// when only one feature is selected. With rank_over_all, the rank is taken
/// over all of the model's features instead of the selection. Throws
/// ConfigError when top_n is zero or no model has any feature.
Heatmap feature_heatmap(
    const std::map<std::string, std::map<std::string, std::uint64_t>>&
        counts_by_model,
    std::size_t top_n = 20, bool rank_over_all = false);

/// TSV export: header `model` + feature columns, one row per model.
std::string heatmap_to_tsv(const Heatmap& heatmap);

/// A named prompt subset to report on; ids must exist in the matrix.
struct ReportDataset {
    std::string name;
    std::vector<std::string> prompt_ids;
};

/// One (model, dataset) report row. category_counts hold, per category, how
/// many benign prompts of the dataset the model rejected.
struct ReportRow {
    std::string model;
    std::string dataset;
    std::size_t n_benign = 0;
    std::size_t n_rejected_benign = 0;
    double osr = 0.0;
    std::map<std::string, std::size_t> category_counts;
};

/// One row per (model, dataset), models outer. prompt_texts maps prompt id
/// to its text for categorization. Throws MetricsError on any coverage gap
/// (listing the missing pairs) or a dataset with zero benign prompts.
std::vector<ReportRow> osr_report(
    const DecisionMatrix& matrix, const std::vector<ReportDataset>& datasets,
    const std::map<std::string, std::string>& prompt_texts,
    const CategoryConfig& categories);

/// TSV export: model, dataset, n_benign, n_rejected_benign, osr, then one
/// column per category (config order, fallback last).
std::string report_to_tsv(const std::vector<ReportRow>& rows,
                          const CategoryConfig& categories);

/// Per-model trigger-feature counts for the heatmap: over the generated
/// records (those carrying trigger_feature) whose verdict for the model is
/// reject. Uncovered pairs are ignored.
struct FeatureCountSource {
    std::string prompt_id;
    std::string trigger_feature;
};
std::map<std::string, std::map<std::string, std::uint64_t>>
count_trigger_features(const DecisionMatrix& matrix,
                       const std::vector<FeatureCountSource>& sources);

/// JSONL persistence. Line 1 is a header object; then one line per prompt,
/// per model, and per verdict, in matrix order. load(save(x)) == x. A
/// malformed or duplicated line raises ParseError with its 1-based number.
/// Single JSONL rows of the matrix file format (no trailing newline).
/// Exposed so an in-progress evaluation can append decisions to a journal
/// that load_matrix itself can read back.
std::string matrix_header_row();
std::string matrix_prompt_row(const std::string& id, bool benign);
std::string matrix_model_row(const std::string& id);
std::string matrix_verdict_row(const std::string& prompt_id,
                               const std::string& model_id, Verdict verdict);

void save_matrix(const DecisionMatrix& matrix,
                 const std::filesystem::path& path);
DecisionMatrix load_matrix(const std::filesystem::path& path);

/// Evaluation driver, resumable: for every (prompt, model) pair not already
/// covered in `matrix`, queries the target and labels the response via the
/// two-stage refusal protocol. Prompts and models are registered on entry;
/// on_decision (when set) runs after each new verdict, in deterministic
/// (prompt-major) order — the hook for incremental persistence.
using TargetFn = std::function<std::string(const std::string& prompt_text)>;
DecisionMatrix extend_matrix(
    DecisionMatrix matrix,
    const std::vector<std::pair<std::string, bool>>& prompts_with_benign,
    const std::map<std::string, std::string>& prompt_texts,
    const std::vector<std::pair<std::string, TargetFn>>& models,
    const PhraseList& phrases, JudgeClient& judge,
    const std::function<void(const std::string& prompt_id,
                             const std::string& model_id, Verdict verdict)>&
        on_decision = nullptr);

}  // namespace oversense
