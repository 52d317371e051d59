#include "oversense/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "oversense/errors.hpp"

namespace oversense {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kProbClampLo = 1e-12;
constexpr double kProbClampHi = 1.0 - 1e-12;

double sigmoid(double s) {
    if (s >= 0.0) {
        return 1.0 / (1.0 + std::exp(-s));
    }
    double e = std::exp(s);
    return e / (1.0 + e);
}

double clamp_prob(double p) {
    return std::min(std::max(p, kProbClampLo), kProbClampHi);
}

double bce(double p, int y) {
    double q = clamp_prob(p);
    return y ? -std::log(q) : -std::log1p(-q);
}

// dL/ds for the clamped cross-entropy through the sigmoid. Zero when the
// clamp is active, so analytic gradients agree with finite differences of
// the exact loss being minimized.
double bce_dlds(double p, int y) {
    if (p <= kProbClampLo || p >= kProbClampHi) {
        return 0.0;
    }
    return p - static_cast<double>(y);
}

void check_shapes(const ProxyParams& params) {
    bool ok = params.embeddings.rows() == params.vocab_size &&
              params.embeddings.cols() == params.embed_dim &&
              params.hidden_weights.rows() == params.embed_dim &&
              params.hidden_weights.cols() == params.hidden_dim &&
              params.hidden_bias.size() == params.hidden_dim &&
              params.out_weights.size() == params.hidden_dim;
    if (!ok) {
        throw IntegrityError("proxy parameters: inconsistent dimensions");
    }
}

struct Head {
    Vec pooled;  // d
    Vec z;       // h, pre-activation
    Vec a;       // h, relu(z)
    double s = 0.0;
    double p = 0.0;
};

Head head_forward(const ProxyParams& params, Vec pooled) {
    Head head;
    head.pooled = std::move(pooled);
    head.z.assign(params.hidden_dim, 0.0);
    for (std::size_t k = 0; k < params.hidden_dim; ++k) {
        double z = params.hidden_bias[k];
        for (std::size_t j = 0; j < params.embed_dim; ++j) {
            z += params.hidden_weights.at(j, k) * head.pooled[j];
        }
        head.z[k] = z;
    }
    head.a.assign(params.hidden_dim, 0.0);
    double s = params.out_bias;
    for (std::size_t k = 0; k < params.hidden_dim; ++k) {
        double a = head.z[k] > 0.0 ? head.z[k] : 0.0;
        head.a[k] = a;
        s += params.out_weights[k] * a;
    }
    head.s = s;
    head.p = sigmoid(s);
    return head;
}

// Backpropagates dL/ds through the head. Returns dL/dpooled and accumulates
// parameter gradients into `g` (if non-null).
Vec head_backward(const ProxyParams& params, const Head& head, double dlds,
                  ProxyGradients* g) {
    Vec dz(params.hidden_dim, 0.0);
    for (std::size_t k = 0; k < params.hidden_dim; ++k) {
        double da = dlds * params.out_weights[k];
        dz[k] = head.z[k] > 0.0 ? da : 0.0;
    }
    if (g != nullptr) {
        g->out_bias += dlds;
        for (std::size_t k = 0; k < params.hidden_dim; ++k) {
            g->out_weights[k] += dlds * head.a[k];
            g->hidden_bias[k] += dz[k];
        }
        for (std::size_t j = 0; j < params.embed_dim; ++j) {
            for (std::size_t k = 0; k < params.hidden_dim; ++k) {
                g->hidden_weights.at(j, k) += head.pooled[j] * dz[k];
            }
        }
    }
    Vec dpooled(params.embed_dim, 0.0);
    for (std::size_t j = 0; j < params.embed_dim; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < params.hidden_dim; ++k) {
            acc += params.hidden_weights.at(j, k) * dz[k];
        }
        dpooled[j] = acc;
    }
    return dpooled;
}

// Distinct (vocab id, multiplicity) pairs in ascending id order. Summing
// group-wise makes pooling exactly invariant to token permutation.
std::vector<std::pair<std::size_t, std::size_t>> group_ids(
    const TokenizedPrompt& prompt) {
    std::vector<std::size_t> ids = prompt.token_ids;
    std::sort(ids.begin(), ids.end());
    std::vector<std::pair<std::size_t, std::size_t>> groups;
    for (std::size_t i = 0; i < ids.size();) {
        std::size_t j = i;
        while (j < ids.size() && ids[j] == ids[i]) {
            ++j;
        }
        groups.emplace_back(ids[i], j - i);
        i = j;
    }
    return groups;
}

Vec pool_groups(const ProxyParams& params,
                const std::vector<std::pair<std::size_t, std::size_t>>& groups,
                std::size_t n_tokens) {
    Vec pooled(params.embed_dim, 0.0);
    for (const auto& [id, count] : groups) {
        if (id >= params.vocab_size) {
            throw IntegrityError("token id " + std::to_string(id) +
                                 " outside vocabulary of size " +
                                 std::to_string(params.vocab_size));
        }
        double w = static_cast<double>(count);
        for (std::size_t j = 0; j < params.embed_dim; ++j) {
            pooled[j] += w * params.embeddings.at(id, j);
        }
    }
    double inv = 1.0 / static_cast<double>(n_tokens);
    for (double& v : pooled) {
        v *= inv;
    }
    return pooled;
}

ProxyGradients zero_gradients(const ProxyParams& params) {
    ProxyGradients g;
    g.embeddings = Matrix(params.vocab_size, params.embed_dim);
    g.hidden_weights = Matrix(params.embed_dim, params.hidden_dim);
    g.hidden_bias.assign(params.hidden_dim, 0.0);
    g.out_weights.assign(params.hidden_dim, 0.0);
    g.out_bias = 0.0;
    return g;
}

// Loss and gradient contribution of one example, scaled by `weight`.
double accumulate_example(const ProxyParams& params, const LabeledExample& ex,
                          double weight, ProxyGradients* g) {
    if (ex.prompt.empty()) {
        throw EmptyInputError("empty prompt in batch (prompt_id=" +
                              ex.prompt.prompt_id + ")");
    }
    auto groups = group_ids(ex.prompt);
    std::size_t n = ex.prompt.size();
    Head head = head_forward(params, pool_groups(params, groups, n));
    double l = bce(head.p, ex.label);
    if (g != nullptr) {
        double dlds = weight * bce_dlds(head.p, ex.label);
        Vec dpooled = head_backward(params, head, dlds, g);
        double inv_n = 1.0 / static_cast<double>(n);
        for (const auto& [id, count] : groups) {
            double w = static_cast<double>(count) * inv_n;
            for (std::size_t j = 0; j < params.embed_dim; ++j) {
                g->embeddings.at(id, j) += w * dpooled[j];
            }
        }
    }
    return l;
}

struct EvalStats {
    double mean_loss = 0.0;
    double accuracy = 0.0;
};

EvalStats evaluate(const ProxyParams& params,
                   const std::vector<LabeledExample>& data,
                   const std::vector<std::size_t>& indices) {
    EvalStats stats;
    if (indices.empty()) {
        return stats;
    }
    std::size_t correct = 0;
    for (std::size_t idx : indices) {
        const LabeledExample& ex = data[idx];
        auto groups = group_ids(ex.prompt);
        Head head = head_forward(params, pool_groups(params, groups, ex.prompt.size()));
        stats.mean_loss += bce(head.p, ex.label);
        int verdict = head.p >= 0.5 ? 1 : 0;
        if (verdict == ex.label) {
            ++correct;
        }
    }
    stats.mean_loss /= static_cast<double>(indices.size());
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
    return stats;
}

struct DataSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

DataSplit split_data(std::size_t n, const SplitFractions& split, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    rng.shuffle(order);
    auto n_train = static_cast<std::size_t>(std::llround(split.train * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(split.validation * static_cast<double>(n)));
    if (n_train + n_val > n) {
        throw ConfigError("split fractions produce more examples than available");
    }
    DataSplit out;
    out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                          order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return out;
}

ProxyParams init_params(std::size_t vocab_size, std::uint64_t vocab_hash,
                        const TrainConfig& config, Rng& rng) {
    ProxyParams p;
    p.vocab_size = vocab_size;
    p.embed_dim = config.embed_dim;
    p.hidden_dim = config.hidden_dim;
    p.vocab_hash = vocab_hash;
    p.embeddings = Matrix(vocab_size, config.embed_dim);
    for (double& v : p.embeddings.data()) {
        v = rng.uniform(-0.1, 0.1);
    }
    p.hidden_weights = Matrix(config.embed_dim, config.hidden_dim);
    for (double& v : p.hidden_weights.data()) {
        v = rng.uniform(-0.1, 0.1);
    }
    p.hidden_bias.assign(config.hidden_dim, 0.0);
    p.out_weights.assign(config.hidden_dim, 0.0);
    for (double& v : p.out_weights) {
        v = rng.uniform(-0.1, 0.1);
    }
    p.out_bias = 0.0;
    return p;
}

void apply_update(ProxyParams& params, const ProxyGradients& g, double lr) {
    auto& e = params.embeddings.data();
    const auto& ge = g.embeddings.data();
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] -= lr * ge[i];
    }
    auto& w = params.hidden_weights.data();
    const auto& gw = g.hidden_weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= lr * gw[i];
    }
    for (std::size_t k = 0; k < params.hidden_dim; ++k) {
        params.hidden_bias[k] -= lr * g.hidden_bias[k];
        params.out_weights[k] -= lr * g.out_weights[k];
    }
    params.out_bias -= lr * g.out_bias;
}

// Consumes `rng` in a fixed order (split shuffle, then one shuffle per
// epoch), so a given seed replays the exact same run.
std::pair<ProxyParams, TrainReport> run_training(
    ProxyParams params, const std::vector<LabeledExample>& data,
    const TrainConfig& config, Rng& rng) {
    DataSplit split = split_data(data.size(), config.split, rng);

    TrainReport report;
    report.n_train = split.train.size();
    report.n_validation = split.validation.size();
    report.n_test = split.test.size();

    EvalStats initial_train = evaluate(params, data, split.train);
    EvalStats initial_val = evaluate(params, data, split.validation);
    report.initial_train_loss = initial_train.mean_loss;
    report.initial_validation_loss = initial_val.mean_loss;
    report.initial_validation_accuracy = initial_val.accuracy;

    ProxyParams best = params;
    double best_val_acc = -1.0;
    std::size_t best_epoch = 0;

    std::vector<std::size_t> order = split.train;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::size_t end = std::min(start + config.batch_size, order.size());
            ProxyGradients g = zero_gradients(params);
            double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                accumulate_example(params, data[order[i]], inv, &g);
            }
            apply_update(params, g, config.learning_rate);
        }

        EpochMetrics m;
        m.epoch = epoch;
        EvalStats tr = evaluate(params, data, split.train);
        EvalStats va = evaluate(params, data, split.validation);
        m.train_loss = tr.mean_loss;
        m.train_accuracy = tr.accuracy;
        m.validation_loss = va.mean_loss;
        m.validation_accuracy = va.accuracy;
        report.epochs.push_back(m);

        if (!std::isfinite(m.train_loss) || !params.all_finite()) {
            throw TrainingDivergedError(static_cast<int>(epoch));
        }

        if (m.validation_accuracy > best_val_acc) {
            best_val_acc = m.validation_accuracy;
            best = params;
            best_epoch = epoch;
        }
    }

    if (split.validation.empty()) {
        // No validation set: keep the final parameters.
        best = params;
        best_epoch = config.epochs;
    }
    report.chosen_epoch = best_epoch;

    EvalStats test = evaluate(best, data, split.test);
    report.test_loss = test.mean_loss;
    report.test_accuracy = test.accuracy;
    return {std::move(best), std::move(report)};
}

ordered_json matrix_to_json(const Matrix& m) {
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) {
            row.push_back(m.at(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const ordered_json& j, std::size_t rows, std::size_t cols,
                        const std::string& name) {
    if (!j.is_array() || j.size() != rows) {
        throw IntegrityError("checkpoint: " + name + " has wrong row count");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto& row = j[i];
        if (!row.is_array() || row.size() != cols) {
            throw IntegrityError("checkpoint: " + name + " has wrong column count");
        }
        for (std::size_t c = 0; c < cols; ++c) {
            m.at(i, c) = row[c].get<double>();
        }
    }
    return m;
}

}  // namespace

bool ProxyParams::all_finite() const {
    auto finite = [](const Vec& v) {
        return std::all_of(v.begin(), v.end(),
                           [](double x) { return std::isfinite(x); });
    };
    return finite(embeddings.data()) && finite(hidden_weights.data()) &&
           finite(hidden_bias) && finite(out_weights) && std::isfinite(out_bias);
}

bool ProxyParams::operator==(const ProxyParams& other) const {
    return vocab_size == other.vocab_size && embed_dim == other.embed_dim &&
           hidden_dim == other.hidden_dim && vocab_hash == other.vocab_hash &&
           embeddings == other.embeddings &&
           hidden_weights == other.hidden_weights &&
           hidden_bias == other.hidden_bias && out_weights == other.out_weights &&
           out_bias == other.out_bias;
}

void TrainConfig::validate() const {
    if (embed_dim == 0 || hidden_dim == 0 || epochs == 0 || batch_size == 0) {
        throw ConfigError("train config: dims, epochs, and batch_size must be positive");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train config: learning_rate must be positive");
    }
    if (split.train < 0.0 || split.validation < 0.0 || split.test < 0.0) {
        throw ConfigError("train config: split fractions must be non-negative");
    }
    double sum = split.train + split.validation + split.test;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("train config: split fractions must sum to 1");
    }
}

Matrix embed(const ProxyParams& params, const TokenizedPrompt& prompt) {
    check_shapes(params);
    Matrix x(prompt.size(), params.embed_dim);
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        std::size_t id = prompt.token_ids[i];
        if (id >= params.vocab_size) {
            throw IntegrityError("token id " + std::to_string(id) +
                                 " outside vocabulary of size " +
                                 std::to_string(params.vocab_size));
        }
        for (std::size_t j = 0; j < params.embed_dim; ++j) {
            x.at(i, j) = params.embeddings.at(id, j);
        }
    }
    return x;
}

double forward(const ProxyParams& params, const Matrix& x) {
    check_shapes(params);
    if (x.rows() == 0) {
        throw EmptyInputError("forward: empty embedding matrix");
    }
    if (x.cols() != params.embed_dim) {
        throw IntegrityError("forward: embedding width mismatch");
    }
    Vec pooled(params.embed_dim, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < params.embed_dim; ++j) {
            pooled[j] += x.at(i, j);
        }
    }
    double inv = 1.0 / static_cast<double>(x.rows());
    for (double& v : pooled) {
        v *= inv;
    }
    return head_forward(params, std::move(pooled)).p;
}

double forward_prompt(const ProxyParams& params, const TokenizedPrompt& prompt) {
    check_shapes(params);
    if (prompt.empty()) {
        throw EmptyInputError("forward: empty prompt");
    }
    auto groups = group_ids(prompt);
    return head_forward(params, pool_groups(params, groups, prompt.size())).p;
}

Matrix input_gradient(const ProxyParams& params, const Matrix& x) {
    check_shapes(params);
    if (x.rows() == 0) {
        throw EmptyInputError("input_gradient: empty embedding matrix");
    }
    if (x.cols() != params.embed_dim) {
        throw IntegrityError("input_gradient: embedding width mismatch");
    }
    Vec pooled(params.embed_dim, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < params.embed_dim; ++j) {
            pooled[j] += x.at(i, j);
        }
    }
    double inv = 1.0 / static_cast<double>(x.rows());
    for (double& v : pooled) {
        v *= inv;
    }
    Head head = head_forward(params, std::move(pooled));
    double dpds = head.p * (1.0 - head.p);
    Vec dpooled = head_backward(params, head, dpds, nullptr);
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            g.at(i, j) = dpooled[j] * inv;
        }
    }
    return g;
}

double loss(const ProxyParams& params, const std::vector<LabeledExample>& batch) {
    check_shapes(params);
    if (batch.empty()) {
        throw ConfigError("loss: empty batch");
    }
    double total = 0.0;
    for (const LabeledExample& ex : batch) {
        total += accumulate_example(params, ex, 0.0, nullptr);
    }
    return total / static_cast<double>(batch.size());
}

ProxyGradients grad(const ProxyParams& params,
                    const std::vector<LabeledExample>& batch) {
    check_shapes(params);
    if (batch.empty()) {
        throw ConfigError("grad: empty batch");
    }
    ProxyGradients g = zero_gradients(params);
    double inv = 1.0 / static_cast<double>(batch.size());
    for (const LabeledExample& ex : batch) {
        accumulate_example(params, ex, inv, &g);
    }
    return g;
}

std::pair<ProxyParams, TrainReport> train(const std::vector<LabeledExample>& data,
                                          const TrainConfig& config,
                                          const Vocabulary& vocab) {
    config.validate();
    bool has_pos = false;
    bool has_neg = false;
    for (const LabeledExample& ex : data) {
        (ex.label ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw ConfigError("train: data must contain both labels");
    }
    Rng rng(config.seed);
    // Draw order: parameter init, then split shuffle, then epoch shuffles.
    ProxyParams params = init_params(vocab.size(), vocab.hash(), config, rng);
    return run_training(std::move(params), data, config, rng);
}

std::pair<ProxyParams, TrainReport> continue_training(
    const ProxyParams& start, const std::vector<LabeledExample>& data,
    const TrainConfig& config) {
    if (data.empty()) {
        TrainReport report;
        return {start, report};
    }
    config.validate();
    check_shapes(start);
    bool has_pos = false;
    bool has_neg = false;
    for (const LabeledExample& ex : data) {
        (ex.label ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw ConfigError("continue_training: data must contain both labels");
    }
    Rng rng(config.seed);
    return run_training(start, data, config, rng);
}

RefusalPrediction predict(const ProxyParams& params, const Vocabulary& vocab,
                          const std::string& text, double threshold) {
    if (vocab.hash() != params.vocab_hash) {
        throw IntegrityError("predict: vocabulary does not match checkpoint");
    }
    TokenizedPrompt prompt = vocab.encode("", text);
    if (prompt.empty()) {
        throw EmptyInputError("predict: text tokenizes to nothing");
    }
    RefusalPrediction out;
    out.probability = forward_prompt(params, prompt);
    out.threshold = threshold;
    return out;
}

std::string TrainReport::to_json() const {
    ordered_json j;
    j["initial_train_loss"] = initial_train_loss;
    j["initial_validation_loss"] = initial_validation_loss;
    j["initial_validation_accuracy"] = initial_validation_accuracy;
    ordered_json rows = ordered_json::array();
    for (const EpochMetrics& m : epochs) {
        ordered_json row;
        row["epoch"] = m.epoch;
        row["train_loss"] = m.train_loss;
        row["train_accuracy"] = m.train_accuracy;
        row["validation_loss"] = m.validation_loss;
        row["validation_accuracy"] = m.validation_accuracy;
        rows.push_back(std::move(row));
    }
    j["epochs"] = std::move(rows);
    j["chosen_epoch"] = chosen_epoch;
    j["test_loss"] = test_loss;
    j["test_accuracy"] = test_accuracy;
    j["split_sizes"] = {{"train", n_train},
                        {"validation", n_validation},
                        {"test", n_test}};
    return j.dump(2) + "\n";
}

std::string checkpoint_to_json(const ProxyParams& params) {
    check_shapes(params);
    char hash_hex[32];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(params.vocab_hash));
    ordered_json j;
    j["format"] = "oversense-proxy-checkpoint";
    j["version"] = 1;
    j["vocab_size"] = params.vocab_size;
    j["embed_dim"] = params.embed_dim;
    j["hidden_dim"] = params.hidden_dim;
    j["vocab_hash"] = hash_hex;
    j["embeddings"] = matrix_to_json(params.embeddings);
    j["hidden_weights"] = matrix_to_json(params.hidden_weights);
    j["hidden_bias"] = params.hidden_bias;
    j["out_weights"] = params.out_weights;
    j["out_bias"] = params.out_bias;
    return j.dump(2) + "\n";
}

ProxyParams checkpoint_from_json(const std::string& json_text,
                                 const std::string& origin) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(origin, 1, e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "oversense-proxy-checkpoint") {
            throw IntegrityError("checkpoint: unrecognized format tag");
        }
        if (j.at("version").get<int>() != 1) {
            throw IntegrityError("checkpoint: unsupported version");
        }
        ProxyParams p;
        p.vocab_size = j.at("vocab_size").get<std::size_t>();
        p.embed_dim = j.at("embed_dim").get<std::size_t>();
        p.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        p.vocab_hash = std::strtoull(j.at("vocab_hash").get<std::string>().c_str(),
                                     nullptr, 16);
        p.embeddings = matrix_from_json(j.at("embeddings"), p.vocab_size,
                                        p.embed_dim, "embeddings");
        p.hidden_weights = matrix_from_json(j.at("hidden_weights"), p.embed_dim,
                                            p.hidden_dim, "hidden_weights");
        p.hidden_bias = j.at("hidden_bias").get<Vec>();
        p.out_weights = j.at("out_weights").get<Vec>();
        p.out_bias = j.at("out_bias").get<double>();
        check_shapes(p);
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(origin, 1, std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const ProxyParams& params, const std::filesystem::path& path) {
    atomic_write(path, checkpoint_to_json(params));
}

ProxyParams load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_json(read_file(path), path.string());
}

}  // namespace oversense
