#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "oversense/corpus.hpp"
#include "oversense/proxy.hpp"
#include "oversense/util.hpp"

namespace oversense {

struct AttributionConfig {
    std::size_t steps = 50;    // Riemann steps m
    double beta = 1.0;         // frequency-adjustment exponent
    std::size_t top_k = 3;     // features extracted per prompt
    bool rank_by_absolute = false;  // rank by |adj| instead of signed adj

    void validate() const;  // throws ConfigError
    bool operator==(const AttributionConfig&) const = default;
};

struct TokenAttribution {
    std::string token;
    std::size_t position = 0;
    double ig_score = 0.0;
    double adj_score = 0.0;
};

struct AttributionResult {
    std::string prompt_id;
    std::vector<TokenAttribution> per_token;  // one entry per token position
    double completeness_residual = 0.0;       // sum(ig) - (F(x) - F(baseline))
    std::vector<std::string> features;        // top_k distinct tokens, ranked
};

/// Differentiable scalar field over an n x d embedding matrix. Production
/// code binds the proxy's reject probability; tests may bind closed forms.
class ScalarField {
public:
    virtual ~ScalarField() = default;
    virtual double value(const Matrix& x) const = 0;
    virtual Matrix gradient(const Matrix& x) const = 0;
};

/// The proxy's reject probability as a scalar field (what attribution
/// explains in production).
class ProxyField : public ScalarField {
public:
    explicit ProxyField(const ProxyParams& params) : params_(params) {}
    double value(const Matrix& x) const override { return forward(params_, x); }
    Matrix gradient(const Matrix& x) const override {
        return input_gradient(params_, x);
    }

private:
    const ProxyParams& params_;
};

/// Midpoint-rule path integral of the field's gradient from `baseline` to
/// `x`, one score per row (token): score_i = sum_j (x - baseline)_ij *
/// (1/m) sum_k dF/dx_ij at baseline + ((k - 0.5)/m)(x - baseline).
/// Throws EmptyInputError on a 0-row x and NumericError (naming the step)
/// on a non-finite gradient.
Vec integrated_gradients_field(const ScalarField& field, const Matrix& x,
                               const Matrix& baseline, std::size_t steps);

/// Proxy-bound IG with the all-zero embedding baseline.
Vec integrated_gradients(const ProxyParams& params, const TokenizedPrompt& prompt,
                         const AttributionConfig& config);

/// adj_i = ig_i / freq(tokens_i)^beta. Sign-preserving; the table's floor
/// keeps the divisor strictly positive.
Vec adjust_by_frequency(const std::vector<std::string>& tokens, const Vec& ig,
                        const FrequencyTable& table, double beta);

/// Top-k distinct token strings by descending score. Duplicate strings
/// contribute once with the max of their scores and their earliest position;
/// ties break by earlier position, then lexicographically. With
/// rank_by_absolute, |score| is compared instead of the signed value.
std::vector<std::string> select_features(const std::vector<std::string>& tokens,
                                         const Vec& scores, std::size_t top_k,
                                         bool rank_by_absolute = false);

/// Full per-prompt pass: IG, frequency adjustment, feature selection, and
/// the completeness residual.
AttributionResult extract_features(const ProxyParams& params,
                                   const TokenizedPrompt& prompt,
                                   const AttributionConfig& config,
                                   const FrequencyTable& table);

/// Deterministic TSV dump (prompt_id, token, position, ig, adj), one line
/// per token in prompt order, prompts in input order. Starts with a `#`
/// header line.
std::string attribution_dump_tsv(const std::vector<AttributionResult>& results);

}  // namespace oversense
