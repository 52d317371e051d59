#include "oversense/metrics.hpp"

#include <algorithm>
#include <unordered_set>

#include <json.hpp>

#include "oversense/corpus.hpp"
#include "oversense/errors.hpp"
#include "oversense/util.hpp"

namespace oversense {

namespace {

std::string verdict_to_string(Verdict v) {
    return v == Verdict::kReject ? "reject" : "accept";
}

Verdict verdict_from_string(const std::string& s) {
    if (s == "reject") {
        return Verdict::kReject;
    }
    if (s == "accept") {
        return Verdict::kAccept;
    }
    throw ConfigError("unknown verdict \"" + s + "\"");
}

constexpr const char* kMatrixFormat = "oversense-decision-matrix";
constexpr int kMatrixVersion = 1;

std::string join_pairs(const std::vector<std::pair<std::string, std::string>>&
                           pairs) {
    std::string out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += "(" + pairs[i].first + ", " + pairs[i].second + ")";
    }
    return out;
}

}  // namespace

void DecisionMatrix::add_prompt(const std::string& id, bool benign) {
    auto it = prompt_benign_.find(id);
    if (it != prompt_benign_.end()) {
        if (it->second != benign) {
            throw IntegrityError("prompt \"" + id +
                                 "\" re-added with a conflicting benign label");
        }
        return;
    }
    prompt_benign_.emplace(id, benign);
    prompts_.push_back({id, benign});
}

void DecisionMatrix::add_model(const std::string& id) {
    if (std::find(models_.begin(), models_.end(), id) != models_.end()) {
        return;
    }
    models_.push_back(id);
}

void DecisionMatrix::set_verdict(const std::string& prompt_id,
                                 const std::string& model_id, Verdict verdict) {
    if (!has_prompt(prompt_id)) {
        throw IntegrityError("verdict for unregistered prompt \"" + prompt_id +
                             "\"");
    }
    if (!has_model(model_id)) {
        throw IntegrityError("verdict for unregistered model \"" + model_id +
                             "\"");
    }
    auto key = std::make_pair(prompt_id, model_id);
    if (verdicts_.find(key) != verdicts_.end()) {
        throw IntegrityError("verdict for (" + prompt_id + ", " + model_id +
                             ") recorded twice");
    }
    verdicts_.emplace(std::move(key), verdict);
}

bool DecisionMatrix::covers(const std::string& prompt_id,
                            const std::string& model_id) const {
    return verdicts_.find({prompt_id, model_id}) != verdicts_.end();
}

std::optional<Verdict> DecisionMatrix::verdict(
    const std::string& prompt_id, const std::string& model_id) const {
    auto it = verdicts_.find({prompt_id, model_id});
    if (it == verdicts_.end()) {
        return std::nullopt;
    }
    return it->second;
}

bool DecisionMatrix::has_prompt(const std::string& id) const {
    return prompt_benign_.find(id) != prompt_benign_.end();
}

bool DecisionMatrix::has_model(const std::string& id) const {
    return std::find(models_.begin(), models_.end(), id) != models_.end();
}

bool DecisionMatrix::prompt_benign(const std::string& id) const {
    auto it = prompt_benign_.find(id);
    if (it == prompt_benign_.end()) {
        throw IntegrityError("unknown prompt id \"" + id + "\"");
    }
    return it->second;
}

bool DecisionMatrix::operator==(const DecisionMatrix& other) const {
    auto same_prompt = [](const PromptInfo& a, const PromptInfo& b) {
        return a.id == b.id && a.benign == b.benign;
    };
    return std::equal(prompts_.begin(), prompts_.end(), other.prompts_.begin(),
                      other.prompts_.end(), same_prompt) &&
           models_ == other.models_ && verdicts_ == other.verdicts_;
}

int oversensitivity(bool benign, Verdict verdict) {
    return benign && verdict == Verdict::kReject ? 1 : 0;
}

double osr(const DecisionMatrix& matrix, const std::string& model_id) {
    if (!matrix.has_model(model_id)) {
        throw MetricsError("model \"" + model_id + "\" is not in the matrix");
    }
    std::size_t n_benign = 0;
    std::size_t n_rejected = 0;
    std::vector<std::pair<std::string, std::string>> missing;
    for (const auto& prompt : matrix.prompts()) {
        if (!prompt.benign) {
            continue;
        }
        ++n_benign;
        auto v = matrix.verdict(prompt.id, model_id);
        if (!v) {
            missing.emplace_back(prompt.id, model_id);
            continue;
        }
        n_rejected += static_cast<std::size_t>(
            oversensitivity(prompt.benign, *v));
    }
    if (!missing.empty()) {
        throw MetricsError("rate undefined: missing verdicts for " +
                           join_pairs(missing));
    }
    if (n_benign == 0) {
        throw MetricsError(
            "rate undefined: the matrix contains no benign prompts");
    }
    return static_cast<double>(n_rejected) / static_cast<double>(n_benign);
}

std::vector<std::string> distill_hard(const DecisionMatrix& matrix,
                                      std::size_t min_rejections) {
    if (min_rejections == 0) {
        throw ConfigError("min_rejections must be positive");
    }
    if (matrix.models().size() < min_rejections) {
        throw ConfigError("distillation needs at least " +
                          std::to_string(min_rejections) +
                          " covered models; the matrix has " +
                          std::to_string(matrix.models().size()));
    }
    std::vector<std::string> hard;
    for (const auto& prompt : matrix.prompts()) {
        std::size_t rejections = 0;
        for (const std::string& model : matrix.models()) {
            auto v = matrix.verdict(prompt.id, model);
            if (v && *v == Verdict::kReject) {
                ++rejections;
            }
        }
        if (rejections >= min_rejections) {
            hard.push_back(prompt.id);
        }
    }
    return hard;
}

CategoryConfig CategoryConfig::load(const std::filesystem::path& path) {
    CategoryConfig config;
    std::vector<std::string> lines = split_lines(read_file(path));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::vector<std::string> columns;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t end = line.find('\t', start);
            if (end == std::string::npos) {
                columns.push_back(line.substr(start));
                break;
            }
            columns.push_back(line.substr(start, end - start));
            start = end + 1;
        }
        if (columns.size() < 2) {
            throw ParseError(path.string(), static_cast<int>(i + 1),
                             "expected a category name and at least one "
                             "keyword, tab-separated");
        }
        std::vector<std::string> keywords;
        for (std::size_t c = 1; c < columns.size(); ++c) {
            keywords.push_back(ascii_lower(columns[c]));
        }
        config.categories.emplace_back(columns[0], std::move(keywords));
    }
    try {
        config.validate();
    } catch (const Error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config;
}

void CategoryConfig::validate() const {
    if (categories.empty()) {
        throw ConfigError("category config has no categories");
    }
    std::unordered_set<std::string> names;
    for (const auto& [name, keywords] : categories) {
        if (name.empty()) {
            throw ConfigError("category with an empty name");
        }
        if (name == fallback) {
            throw ConfigError("category \"" + name +
                              "\" collides with the fallback category");
        }
        if (!names.insert(name).second) {
            throw ConfigError("category \"" + name + "\" is duplicated");
        }
        if (keywords.empty()) {
            throw ConfigError("category \"" + name + "\" has no keywords");
        }
        for (const std::string& keyword : keywords) {
            std::vector<std::string> tokens = tokenize(keyword);
            if (tokens.size() != 1 || tokens[0] != keyword) {
                throw ConfigError("category \"" + name + "\" keyword \"" +
                                  keyword +
                                  "\" is not a single lowercase token");
            }
        }
    }
}

std::string categorize(const std::string& text, const CategoryConfig& config) {
    config.validate();
    std::vector<std::string> token_list = tokenize(text);
    std::unordered_set<std::string> tokens(token_list.begin(),
                                           token_list.end());
    for (const auto& [name, keywords] : config.categories) {
        for (const std::string& keyword : keywords) {
            if (tokens.count(keyword) != 0) {
                return name;
            }
        }
    }
    return config.fallback;
}

Heatmap feature_heatmap(
    const std::map<std::string, std::map<std::string, std::uint64_t>>&
        counts_by_model,
    std::size_t top_n, bool rank_over_all) {
    if (top_n == 0) {
        throw ConfigError("heatmap top_n must be positive");
    }
    std::map<std::string, std::uint64_t> totals;
    for (const auto& [model, counts] : counts_by_model) {
        for (const auto& [feature, count] : counts) {
            totals[feature] += count;
        }
    }
    if (counts_by_model.empty() || totals.empty()) {
        throw ConfigError(
            "heatmap needs at least one model with at least one feature");
    }

    std::vector<std::pair<std::string, std::uint64_t>> ranked(totals.begin(),
                                                              totals.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    if (ranked.size() > top_n) {
        ranked.resize(top_n);
    }

    Heatmap heatmap;
    for (const auto& [feature, total] : ranked) {
        heatmap.features.push_back(feature);
    }
    for (const auto& [model, counts] : counts_by_model) {
        heatmap.models.push_back(model);
        std::vector<double> row;
        auto count_of = [&counts](const std::string& feature) {
            auto it = counts.find(feature);
            return it == counts.end() ? std::uint64_t{0} : it->second;
        };
        for (const std::string& feature : heatmap.features) {
            std::uint64_t c = count_of(feature);
            std::size_t smaller = 0;
            std::size_t population = 0;
            if (rank_over_all) {
                population = counts.size();
                for (const auto& [other, other_count] : counts) {
                    if (other_count < c) {
                        ++smaller;
                    }
                }
            } else {
                population = heatmap.features.size();
                for (const std::string& other : heatmap.features) {
                    if (count_of(other) < c) {
                        ++smaller;
                    }
                }
            }
            double cell = population > 1
                              ? 100.0 * static_cast<double>(smaller) /
                                    static_cast<double>(population - 1)
                              : 0.0;
            row.push_back(cell);
        }
        heatmap.cells.push_back(std::move(row));
    }
    return heatmap;
}

std::string heatmap_to_tsv(const Heatmap& heatmap) {
    std::string out = "model";
    for (const std::string& feature : heatmap.features) {
        out += '\t';
        out += feature;
    }
    out += '\n';
    for (std::size_t m = 0; m < heatmap.models.size(); ++m) {
        out += heatmap.models[m];
        for (double cell : heatmap.cells[m]) {
            out += '\t';
            out += format_double(cell);
        }
        out += '\n';
    }
    return out;
}

std::vector<ReportRow> osr_report(
    const DecisionMatrix& matrix, const std::vector<ReportDataset>& datasets,
    const std::map<std::string, std::string>& prompt_texts,
    const CategoryConfig& categories) {
    categories.validate();
    for (const ReportDataset& dataset : datasets) {
        for (const std::string& id : dataset.prompt_ids) {
            if (!matrix.has_prompt(id)) {
                throw MetricsError("dataset \"" + dataset.name +
                                   "\" references unknown prompt \"" + id +
                                   "\"");
            }
        }
    }

    std::vector<ReportRow> rows;
    for (const std::string& model : matrix.models()) {
        for (const ReportDataset& dataset : datasets) {
            ReportRow row;
            row.model = model;
            row.dataset = dataset.name;
            for (const auto& [name, keywords] : categories.categories) {
                row.category_counts[name] = 0;
            }
            row.category_counts[categories.fallback] = 0;

            std::vector<std::pair<std::string, std::string>> missing;
            for (const std::string& id : dataset.prompt_ids) {
                auto v = matrix.verdict(id, model);
                if (!v) {
                    missing.emplace_back(id, model);
                    continue;
                }
                if (!matrix.prompt_benign(id)) {
                    continue;
                }
                ++row.n_benign;
                if (oversensitivity(true, *v) == 1) {
                    ++row.n_rejected_benign;
                    auto text = prompt_texts.find(id);
                    if (text == prompt_texts.end()) {
                        throw MetricsError("no text provided for prompt \"" +
                                           id + "\"");
                    }
                    ++row.category_counts[categorize(text->second, categories)];
                }
            }
            if (!missing.empty()) {
                throw MetricsError("report undefined: missing verdicts for " +
                                   join_pairs(missing));
            }
            if (row.n_benign == 0) {
                throw MetricsError("dataset \"" + dataset.name +
                                   "\" has no benign prompts; rate undefined");
            }
            row.osr = static_cast<double>(row.n_rejected_benign) /
                      static_cast<double>(row.n_benign);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string report_to_tsv(const std::vector<ReportRow>& rows,
                          const CategoryConfig& categories) {
    std::string out = "model\tdataset\tn_benign\tn_rejected_benign\tosr";
    std::vector<std::string> column_order;
    for (const auto& [name, keywords] : categories.categories) {
        column_order.push_back(name);
    }
    column_order.push_back(categories.fallback);
    for (const std::string& name : column_order) {
        out += '\t';
        out += name;
    }
    out += '\n';
    for (const ReportRow& row : rows) {
        out += row.model + '\t' + row.dataset + '\t' +
               std::to_string(row.n_benign) + '\t' +
               std::to_string(row.n_rejected_benign) + '\t' +
               format_double(row.osr);
        for (const std::string& name : column_order) {
            auto it = row.category_counts.find(name);
            std::size_t count = it == row.category_counts.end() ? 0 : it->second;
            out += '\t';
            out += std::to_string(count);
        }
        out += '\n';
    }
    return out;
}

std::map<std::string, std::map<std::string, std::uint64_t>>
count_trigger_features(const DecisionMatrix& matrix,
                       const std::vector<FeatureCountSource>& sources) {
    std::map<std::string, std::map<std::string, std::uint64_t>> counts;
    for (const std::string& model : matrix.models()) {
        counts[model];  // every model gets a row, even if empty
        for (const FeatureCountSource& source : sources) {
            auto v = matrix.verdict(source.prompt_id, model);
            if (v && *v == Verdict::kReject) {
                ++counts[model][source.trigger_feature];
            }
        }
    }
    return counts;
}

std::string matrix_header_row() {
    nlohmann::ordered_json header;
    header["format"] = kMatrixFormat;
    header["version"] = kMatrixVersion;
    return header.dump();
}

std::string matrix_prompt_row(const std::string& id, bool benign) {
    nlohmann::ordered_json j;
    j["row"] = "prompt";
    j["id"] = id;
    j["benign"] = benign;
    return j.dump();
}

std::string matrix_model_row(const std::string& id) {
    nlohmann::ordered_json j;
    j["row"] = "model";
    j["id"] = id;
    return j.dump();
}

std::string matrix_verdict_row(const std::string& prompt_id,
                               const std::string& model_id, Verdict verdict) {
    nlohmann::ordered_json j;
    j["row"] = "verdict";
    j["prompt_id"] = prompt_id;
    j["model_id"] = model_id;
    j["verdict"] = verdict_to_string(verdict);
    return j.dump();
}

void save_matrix(const DecisionMatrix& matrix,
                 const std::filesystem::path& path) {
    std::string content = matrix_header_row() + "\n";
    for (const auto& prompt : matrix.prompts()) {
        content += matrix_prompt_row(prompt.id, prompt.benign) + "\n";
    }
    for (const std::string& model : matrix.models()) {
        content += matrix_model_row(model) + "\n";
    }
    for (const auto& prompt : matrix.prompts()) {
        for (const std::string& model : matrix.models()) {
            auto v = matrix.verdict(prompt.id, model);
            if (!v) {
                continue;
            }
            content += matrix_verdict_row(prompt.id, model, *v) + "\n";
        }
    }
    atomic_write(path, content);
}

DecisionMatrix load_matrix(const std::filesystem::path& path) {
    std::vector<std::string> lines = split_lines(read_file(path));
    if (lines.empty()) {
        throw ParseError(path.string(), 1, "empty decision matrix file");
    }
    DecisionMatrix matrix;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            nlohmann::ordered_json j = nlohmann::ordered_json::parse(lines[i]);
            if (i == 0) {
                if (!j.is_object() || j.value("format", "") != kMatrixFormat) {
                    throw ConfigError("not a decision matrix file");
                }
                if (j.value("version", 0) != kMatrixVersion) {
                    throw ConfigError("unsupported matrix version");
                }
                continue;
            }
            std::string row = j.at("row").get<std::string>();
            if (row == "prompt") {
                std::string id = j.at("id").get<std::string>();
                if (matrix.has_prompt(id)) {
                    throw ConfigError("prompt \"" + id + "\" declared twice");
                }
                matrix.add_prompt(id, j.at("benign").get<bool>());
            } else if (row == "model") {
                std::string id = j.at("id").get<std::string>();
                if (matrix.has_model(id)) {
                    throw ConfigError("model \"" + id + "\" declared twice");
                }
                matrix.add_model(id);
            } else if (row == "verdict") {
                matrix.set_verdict(
                    j.at("prompt_id").get<std::string>(),
                    j.at("model_id").get<std::string>(),
                    verdict_from_string(j.at("verdict").get<std::string>()));
            } else {
                throw ConfigError("unknown row type \"" + row + "\"");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), static_cast<int>(i + 1), e.what());
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(path.string(), static_cast<int>(i + 1), e.what());
        }
    }
    return matrix;
}

DecisionMatrix extend_matrix(
    DecisionMatrix matrix,
    const std::vector<std::pair<std::string, bool>>& prompts_with_benign,
    const std::map<std::string, std::string>& prompt_texts,
    const std::vector<std::pair<std::string, TargetFn>>& models,
    const PhraseList& phrases, JudgeClient& judge,
    const std::function<void(const std::string&, const std::string&, Verdict)>&
        on_decision) {
    for (const auto& [id, benign] : prompts_with_benign) {
        matrix.add_prompt(id, benign);
    }
    for (const auto& [id, target] : models) {
        matrix.add_model(id);
    }
    for (const auto& [prompt_id, benign] : prompts_with_benign) {
        for (const auto& [model_id, target] : models) {
            if (matrix.covers(prompt_id, model_id)) {
                continue;
            }
            auto text = prompt_texts.find(prompt_id);
            if (text == prompt_texts.end()) {
                throw ConfigError("no text provided for prompt \"" +
                                  prompt_id + "\"");
            }
            std::string response = target(text->second);
            RefusalDecision decision = label_response(response, phrases, judge);
            matrix.set_verdict(prompt_id, model_id, decision.verdict);
            if (on_decision) {
                on_decision(prompt_id, model_id, decision.verdict);
            }
        }
    }
    return matrix;
}

}  // namespace oversense
