#include <doctest.h>

#include <cmath>

#include "oversense/attribution.hpp"
#include "oversense/corpus.hpp"
#include "oversense/errors.hpp"
#include "oversense/proxy.hpp"
#include "testutil.hpp"

using namespace oversense;

namespace {

/// F(x) = w . mean_rows(x): constant gradient along any path, so IG has the
/// closed form (1/n) * (w . row_i) for a zero baseline.
class LinearMeanField : public ScalarField {
public:
    explicit LinearMeanField(Vec w) : w_(std::move(w)) {}

    double value(const Matrix& x) const override {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t j = 0; j < x.cols(); ++j) {
                acc += w_[j] * x.at(i, j);
            }
        }
        return acc / static_cast<double>(x.rows());
    }

    Matrix gradient(const Matrix& x) const override {
        Matrix g(x.rows(), x.cols());
        double inv = 1.0 / static_cast<double>(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t j = 0; j < x.cols(); ++j) {
                g.at(i, j) = w_[j] * inv;
            }
        }
        return g;
    }

private:
    Vec w_;
};

/// Returns a NaN gradient once the path parameter passes 0.5; used to check
/// the numeric guard names the offending step.
class PoisonField : public ScalarField {
public:
    double value(const Matrix&) const override { return 0.0; }
    Matrix gradient(const Matrix& x) const override {
        Matrix g(x.rows(), x.cols());
        if (x.at(0, 0) > 0.5) {
            g.at(0, 0) = std::nan("");
        }
        return g;
    }
};

FrequencyTable uniform_table(const std::vector<std::string>& tokens, double f) {
    std::map<std::string, double> freqs;
    for (const auto& t : tokens) {
        freqs[t] = f;
    }
    return FrequencyTable::from_frequencies(freqs);
}

}  // namespace

TEST_CASE("attribution of the baseline itself is exactly zero") {
    ProxyParams params = testutil::random_params(6, 4, 3, 31);
    for (std::size_t j = 0; j < 4; ++j) {
        params.embeddings.at(2, j) = 0.0;  // token 2 sits on the baseline
    }
    TokenizedPrompt prompt{"p", {"a", "a"}, {2, 2}};
    AttributionConfig config;
    Vec ig = integrated_gradients(params, prompt, config);
    for (double v : ig) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("linear field attribution equals the closed form for any step count") {
    Vec w{0.3, -1.7, 2.5};
    LinearMeanField field(w);
    Matrix x(4, 3);
    Rng rng(5);
    for (double& v : x.data()) {
        v = rng.uniform(-2.0, 2.0);
    }
    Matrix baseline(4, 3);
    for (std::size_t steps : {std::size_t{1}, std::size_t{200}}) {
        Vec ig = integrated_gradients_field(field, x, baseline, steps);
        for (std::size_t i = 0; i < 4; ++i) {
            double closed = 0.0;
            for (std::size_t j = 0; j < 3; ++j) {
                closed += w[j] * x.at(i, j);
            }
            closed /= 4.0;
            CHECK(ig[i] == doctest::Approx(closed).epsilon(1e-12));
        }
    }
}

TEST_CASE("completeness residual is small and shrinks as steps double") {
    auto corpus = testutil::make_trigger_corpus(120, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    TrainConfig tc;
    auto [params, report] = train(examples, tc, vocab);

    ProxyField field(params);
    double mean_prev = 0.0;
    bool first = true;
    for (std::size_t steps : {std::size_t{25}, std::size_t{50}, std::size_t{100},
                              std::size_t{200}}) {
        double mean_abs = 0.0;
        std::size_t count = 0;
        for (const auto& ex : examples) {
            Matrix x = embed(params, ex.prompt);
            Matrix baseline(x.rows(), x.cols());
            Vec ig = integrated_gradients_field(field, x, baseline, steps);
            double sum = 0.0;
            for (double v : ig) {
                sum += v;
            }
            double residual = sum - (field.value(x) - field.value(baseline));
            mean_abs += std::abs(residual);
            ++count;
            if (steps == 200) {
                CHECK(std::abs(residual) <= 1e-3);
            }
        }
        mean_abs /= static_cast<double>(count);
        if (!first) {
            CHECK(mean_abs <= mean_prev);
        }
        mean_prev = mean_abs;
        first = false;
    }
}

TEST_CASE("frequency adjustment reproduces direct substitution") {
    FrequencyTable table = FrequencyTable::from_frequencies({{"kill", 0.25}});
    Vec adj = adjust_by_frequency({"kill"}, {0.5}, table, 1.0);
    CHECK(adj[0] == 2.0);
}

TEST_CASE("beta zero and unit frequency leave scores unchanged") {
    std::vector<std::string> tokens{"a", "b", "c"};
    Vec ig{0.3, -0.2, 0.0};
    FrequencyTable table =
        FrequencyTable::from_frequencies({{"a", 0.5}, {"b", 0.01}, {"c", 0.9}});
    CHECK(adjust_by_frequency(tokens, ig, table, 0.0) == ig);
    FrequencyTable unit = uniform_table(tokens, 1.0);
    CHECK(adjust_by_frequency(tokens, ig, unit, 1.0) == ig);
}

TEST_CASE("frequency adjustment preserves signs on random inputs") {
    Rng rng(99);
    std::vector<std::string> tokens;
    Vec ig;
    std::map<std::string, double> freqs;
    for (int i = 0; i < 1000; ++i) {
        std::string t = "t" + std::to_string(i);
        tokens.push_back(t);
        ig.push_back(rng.uniform(-1.0, 1.0));
        if (i % 3 != 0) {  // every third token exercises the floor
            freqs[t] = rng.uniform(1e-7, 1.0);
        }
    }
    FrequencyTable table = FrequencyTable::from_frequencies(freqs);
    for (double beta : {0.0, 0.5, 1.0, 2.0}) {
        Vec adj = adjust_by_frequency(tokens, ig, table, beta);
        for (std::size_t i = 0; i < ig.size(); ++i) {
            if (ig[i] > 0.0) {
                CHECK(adj[i] > 0.0);
            } else if (ig[i] < 0.0) {
                CHECK(adj[i] < 0.0);
            } else {
                CHECK(adj[i] == 0.0);
            }
        }
    }
}

TEST_CASE("uniform frequency rescaling leaves the feature list identical") {
    auto corpus = testutil::make_trigger_corpus(60, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    TrainConfig tc;
    auto [params, report] = train(examples, tc, vocab);

    FrequencyTable base = FrequencyTable::from_corpus(corpus.texts);
    std::map<std::string, double> scaled_freqs;
    for (const auto& text : corpus.texts) {
        for (const auto& tok : tokenize(text)) {
            scaled_freqs[tok] = base.lookup(tok) * 0.25;  // exact in binary
        }
    }
    FrequencyTable scaled =
        FrequencyTable::from_frequencies(scaled_freqs, base.floor() * 0.25);

    AttributionConfig config;
    for (std::size_t i = 0; i < 10; ++i) {
        AttributionResult a = extract_features(params, examples[i].prompt, config, base);
        AttributionResult b = extract_features(params, examples[i].prompt, config, scaled);
        CHECK(a.features == b.features);
        for (std::size_t t = 0; t < a.per_token.size(); ++t) {
            CHECK(b.per_token[t].adj_score ==
                  doctest::Approx(a.per_token[t].adj_score * 4.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("select_features orders by score with documented tie-breaks") {
    std::vector<std::string> tokens{"kill", "time", "flight", "how"};
    Vec scores{2.0, 0.1, 0.05, 0.01};
    CHECK(select_features(tokens, scores, 3) ==
          std::vector<std::string>{"kill", "time", "flight"});

    // Equal scores: earlier position wins.
    CHECK(select_features({"b", "a"}, {0.5, 0.5}, 2) ==
          std::vector<std::string>{"b", "a"});

    // Duplicates contribute once, with the max of their scores.
    CHECK(select_features({"x", "y", "x"}, {0.1, 0.2, 0.9}, 2) ==
          std::vector<std::string>{"x", "y"});

    // Fewer distinct tokens than top_k: shorter list.
    CHECK(select_features({"a", "a"}, {0.1, 0.2}, 3) ==
          std::vector<std::string>{"a"});
}

TEST_CASE("absolute ranking flag changes which magnitudes win") {
    std::vector<std::string> tokens{"neg", "pos"};
    Vec scores{-5.0, 1.0};
    CHECK(select_features(tokens, scores, 1, false) ==
          std::vector<std::string>{"pos"});
    CHECK(select_features(tokens, scores, 1, true) ==
          std::vector<std::string>{"neg"});
}

TEST_CASE("trained proxy attribution surfaces the planted trigger") {
    auto corpus = testutil::make_trigger_corpus(2000, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    TrainConfig tc;
    auto [params, report] = train(examples, tc, vocab);
    FrequencyTable table = FrequencyTable::from_corpus(corpus.texts);

    AttributionConfig config;
    TokenizedPrompt prompt = vocab.encode("t", "w01 w02 kill w03 w04");
    AttributionResult result = extract_features(params, prompt, config, table);
    REQUIRE(result.per_token.size() == 5);
    REQUIRE(!result.features.empty());
    CHECK(result.features[0] == "kill");
    for (const auto& t : result.per_token) {
        double expected = t.ig_score / table.lookup(t.token);
        CHECK(t.adj_score == doctest::Approx(expected).epsilon(1e-9));
    }

    // Deterministic: a second run reproduces the result bitwise.
    AttributionResult again = extract_features(params, prompt, config, table);
    CHECK(again.features == result.features);
    for (std::size_t i = 0; i < result.per_token.size(); ++i) {
        CHECK(again.per_token[i].ig_score == result.per_token[i].ig_score);
        CHECK(again.per_token[i].adj_score == result.per_token[i].adj_score);
    }
}

TEST_CASE("attribution rejects empty prompts and bad configs") {
    ProxyParams params = testutil::random_params(4, 3, 2, 1);
    AttributionConfig config;
    CHECK_THROWS_AS(integrated_gradients(params, TokenizedPrompt{}, config),
                    EmptyInputError);
    AttributionConfig bad;
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = AttributionConfig{};
    bad.beta = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = AttributionConfig{};
    bad.top_k = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("non-finite gradients name the offending step") {
    PoisonField field;
    Matrix x(1, 1);
    x.at(0, 0) = 1.0;
    Matrix baseline(1, 1);
    try {
        integrated_gradients_field(field, x, baseline, 4);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        // Midpoints are 0.125, 0.375, 0.625, 0.875: step 3 first exceeds 0.5.
        CHECK(std::string(e.what()).find("step 3") != std::string::npos);
    }
}

TEST_CASE("attribution dump is deterministic TSV") {
    AttributionResult r;
    r.prompt_id = "p1";
    r.per_token = {{"kill", 0, 0.5, 2.0}, {"time", 1, 0.25, 0.5}};
    r.features = {"kill"};
    std::string tsv = attribution_dump_tsv({r});
    CHECK(tsv ==
          "# prompt_id\ttoken\tposition\tig\tadj\n"
          "p1\tkill\t0\t0.5\t2\n"
          "p1\ttime\t1\t0.25\t0.5\n");
}
