#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "oversense/corpus.hpp"
#include "oversense/util.hpp"

namespace oversense {

/// Weights of the refusal classifier: a token embedding table pooled by mean,
/// one ReLU hidden layer, and a sigmoid output. Immutable once training
/// returns; prediction and attribution share it read-only.
struct ProxyParams {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::size_t hidden_dim = 0;
    std::uint64_t vocab_hash = 0;

    Matrix embeddings;      // vocab_size x embed_dim
    Matrix hidden_weights;  // embed_dim x hidden_dim
    Vec hidden_bias;        // hidden_dim
    Vec out_weights;        // hidden_dim
    double out_bias = 0.0;

    bool all_finite() const;
    bool operator==(const ProxyParams& other) const;
};

/// Gradients shaped like ProxyParams.
struct ProxyGradients {
    Matrix embeddings;
    Matrix hidden_weights;
    Vec hidden_bias;
    Vec out_weights;
    double out_bias = 0.0;
};

struct LabeledExample {
    TokenizedPrompt prompt;
    int label = 0;  // 1 = target rejects, 0 = target accepts
};

struct SplitFractions {
    double train = 0.90;
    double validation = 0.05;
    double test = 0.05;

    bool operator==(const SplitFractions&) const = default;
};

struct TrainConfig {
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    double learning_rate = 2.0;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 42;
    SplitFractions split;

    void validate() const;  // throws ConfigError
    bool operator==(const TrainConfig&) const = default;
};

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double validation_loss = 0.0;
    double validation_accuracy = 0.0;
};

struct TrainReport {
    double initial_train_loss = 0.0;
    double initial_validation_loss = 0.0;
    double initial_validation_accuracy = 0.0;
    std::vector<EpochMetrics> epochs;
    std::size_t chosen_epoch = 0;  // epoch whose parameters were kept
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    std::size_t n_train = 0;
    std::size_t n_validation = 0;
    std::size_t n_test = 0;

    std::string to_json() const;
};

struct RefusalPrediction {
    double probability = 0.0;
    double threshold = 0.5;

    bool reject() const { return probability >= threshold; }
};

/// Embedding lookup: row i is the embedding of token i. An empty prompt
/// yields a 0 x d matrix. Throws IntegrityError when a token id is outside
/// the parameter table.
Matrix embed(const ProxyParams& params, const TokenizedPrompt& prompt);

/// Reject probability for an explicit embedding matrix (rows pooled by mean
/// in row order). Throws EmptyInputError when x has no rows. This is the
/// differentiable surface the attribution path integrates over.
double forward(const ProxyParams& params, const Matrix& x);

/// Reject probability for a tokenized prompt. Pooling groups tokens by
/// vocabulary id, which makes the result exactly invariant to token order.
double forward_prompt(const ProxyParams& params, const TokenizedPrompt& prompt);

/// d(forward)/dx for an explicit embedding matrix; same shape as x.
Matrix input_gradient(const ProxyParams& params, const Matrix& x);

/// Mean binary cross-entropy over the batch, probabilities clamped to
/// [1e-12, 1 - 1e-12]. Throws ConfigError on an empty batch and
/// EmptyInputError on an empty prompt.
double loss(const ProxyParams& params, const std::vector<LabeledExample>& batch);

/// Analytic gradients of the batch loss with respect to every parameter.
ProxyGradients grad(const ProxyParams& params,
                    const std::vector<LabeledExample>& batch);

/// Deterministic split/init/mini-batch gradient descent. Returns the
/// parameters of the epoch with the best validation accuracy plus the full
/// metrics report. Throws ConfigError when data lacks both labels and
/// TrainingDivergedError (naming the epoch) on non-finite loss.
std::pair<ProxyParams, TrainReport> train(const std::vector<LabeledExample>& data,
                                          const TrainConfig& config,
                                          const Vocabulary& vocab);

/// Continues training from existing parameters; empty data is a no-op that
/// returns the parameters unchanged.
std::pair<ProxyParams, TrainReport> continue_training(
    const ProxyParams& start, const std::vector<LabeledExample>& data,
    const TrainConfig& config);

/// Tokenize -> embed -> forward -> threshold. Throws EmptyInputError when
/// the text tokenizes to nothing.
RefusalPrediction predict(const ProxyParams& params, const Vocabulary& vocab,
                          const std::string& text, double threshold = 0.5);

/// Versioned checkpoint container; round-trip exact.
std::string checkpoint_to_json(const ProxyParams& params);
ProxyParams checkpoint_from_json(const std::string& json_text,
                                 const std::string& origin = "<memory>");
void save_checkpoint(const ProxyParams& params, const std::filesystem::path& path);
ProxyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace oversense
