#include "oversense/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "oversense/errors.hpp"

namespace oversense {

void AttributionConfig::validate() const {
    if (steps == 0) {
        throw ConfigError("attribution config: steps must be >= 1");
    }
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
        throw ConfigError("attribution config: beta must be non-negative");
    }
    if (top_k == 0) {
        throw ConfigError("attribution config: top_k must be >= 1");
    }
}

Vec integrated_gradients_field(const ScalarField& field, const Matrix& x,
                               const Matrix& baseline, std::size_t steps) {
    if (x.rows() == 0) {
        throw EmptyInputError("integrated gradients: empty input");
    }
    if (!x.same_shape(baseline)) {
        throw IntegrityError("integrated gradients: baseline shape mismatch");
    }
    if (steps == 0) {
        throw ConfigError("integrated gradients: steps must be >= 1");
    }

    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Matrix mean_grad(n, d);
    Matrix point(n, d);
    for (std::size_t k = 1; k <= steps; ++k) {
        double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double base = baseline.at(i, j);
                point.at(i, j) = base + alpha * (x.at(i, j) - base);
            }
        }
        Matrix g = field.gradient(point);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double v = g.at(i, j);
                if (!std::isfinite(v)) {
                    throw NumericError(
                        "integrated gradients: non-finite gradient at step " +
                        std::to_string(k));
                }
                mean_grad.at(i, j) += v;
            }
        }
    }

    double inv = 1.0 / static_cast<double>(steps);
    Vec scores(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            row += (x.at(i, j) - baseline.at(i, j)) * mean_grad.at(i, j) * inv;
        }
        scores[i] = row;
    }
    return scores;
}

Vec integrated_gradients(const ProxyParams& params, const TokenizedPrompt& prompt,
                         const AttributionConfig& config) {
    config.validate();
    if (prompt.empty()) {
        throw EmptyInputError("integrated gradients: empty prompt");
    }
    Matrix x = embed(params, prompt);
    Matrix baseline(x.rows(), x.cols());
    ProxyField field(params);
    return integrated_gradients_field(field, x, baseline, config.steps);
}

Vec adjust_by_frequency(const std::vector<std::string>& tokens, const Vec& ig,
                        const FrequencyTable& table, double beta) {
    if (tokens.size() != ig.size()) {
        throw IntegrityError("adjust_by_frequency: token/score length mismatch");
    }
    Vec adj(ig.size(), 0.0);
    for (std::size_t i = 0; i < ig.size(); ++i) {
        if (!std::isfinite(ig[i])) {
            throw NumericError("adjust_by_frequency: non-finite score at position " +
                               std::to_string(i));
        }
        adj[i] = ig[i] / std::pow(table.lookup(tokens[i]), beta);
    }
    return adj;
}

std::vector<std::string> select_features(const std::vector<std::string>& tokens,
                                         const Vec& scores, std::size_t top_k,
                                         bool rank_by_absolute) {
    if (tokens.size() != scores.size()) {
        throw IntegrityError("select_features: token/score length mismatch");
    }
    struct Entry {
        std::string token;
        std::size_t position;  // earliest occurrence of the token string
        double score;          // max over the token's occurrences
    };
    std::map<std::string, Entry> best;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto it = best.find(tokens[i]);
        if (it == best.end()) {
            best.emplace(tokens[i], Entry{tokens[i], i, scores[i]});
        } else if (scores[i] > it->second.score) {
            it->second.score = scores[i];
        }
    }
    std::vector<Entry> entries;
    entries.reserve(best.size());
    for (auto& [token, entry] : best) {
        entries.push_back(std::move(entry));
    }
    auto key = [rank_by_absolute](double s) {
        return rank_by_absolute ? std::abs(s) : s;
    };
    std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
        double ka = key(a.score);
        double kb = key(b.score);
        if (ka != kb) {
            return ka > kb;
        }
        if (a.position != b.position) {
            return a.position < b.position;
        }
        return a.token < b.token;
    });
    std::vector<std::string> features;
    for (std::size_t i = 0; i < entries.size() && i < top_k; ++i) {
        features.push_back(entries[i].token);
    }
    return features;
}

AttributionResult extract_features(const ProxyParams& params,
                                   const TokenizedPrompt& prompt,
                                   const AttributionConfig& config,
                                   const FrequencyTable& table) {
    config.validate();
    if (prompt.empty()) {
        throw EmptyInputError("extract_features: empty prompt");
    }
    Matrix x = embed(params, prompt);
    Matrix baseline(x.rows(), x.cols());
    ProxyField field(params);
    Vec ig = integrated_gradients_field(field, x, baseline, config.steps);
    Vec adj = adjust_by_frequency(prompt.tokens, ig, table, config.beta);

    AttributionResult result;
    result.prompt_id = prompt.prompt_id;
    result.per_token.reserve(prompt.size());
    double ig_sum = 0.0;
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        result.per_token.push_back({prompt.tokens[i], i, ig[i], adj[i]});
        ig_sum += ig[i];
    }
    result.completeness_residual =
        ig_sum - (field.value(x) - field.value(baseline));
    result.features = select_features(prompt.tokens, adj, config.top_k,
                                      config.rank_by_absolute);
    return result;
}

std::string attribution_dump_tsv(const std::vector<AttributionResult>& results) {
    std::string out = "# prompt_id\ttoken\tposition\tig\tadj\n";
    for (const AttributionResult& r : results) {
        for (const TokenAttribution& t : r.per_token) {
            out += r.prompt_id;
            out += '\t';
            out += t.token;
            out += '\t';
            out += std::to_string(t.position);
            out += '\t';
            out += format_double(t.ig_score);
            out += '\t';
            out += format_double(t.adj_score);
            out += '\n';
        }
    }
    return out;
}

}  // namespace oversense
