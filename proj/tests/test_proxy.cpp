#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oversense/corpus.hpp"
#include "oversense/errors.hpp"
#include "oversense/proxy.hpp"
#include "oversense/util.hpp"
#include "testutil.hpp"

using namespace oversense;

namespace {

// Central finite difference of the batch loss along one coordinate.
double fd_loss(ProxyParams& params, const std::vector<LabeledExample>& batch,
               double* coord, double step) {
    double saved = *coord;
    *coord = saved + step;
    double up = loss(params, batch);
    *coord = saved - step;
    double down = loss(params, batch);
    *coord = saved;
    return (up - down) / (2.0 * step);
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
    const double step = 1e-4;
    const double tol = 1e-4;
    for (std::uint64_t trial = 0; trial < 3; ++trial) {
        ProxyParams params = testutil::random_params(12, 4, 5, 100 + trial);
        auto batch = testutil::random_batch(12, 6, 200 + trial);
        ProxyGradients g = grad(params, batch);
        auto analytic = testutil::flatten_grads(g);
        auto coords = testutil::param_coords(params);
        REQUIRE(analytic.size() == coords.size());
        double worst = 0.0;
        for (std::size_t i = 0; i < coords.size(); ++i) {
            double numeric = fd_loss(params, batch, coords[i], step);
            double rel = std::abs(analytic[i] - numeric) /
                         std::max(1.0, std::abs(analytic[i]));
            worst = std::max(worst, rel);
        }
        CHECK(worst <= tol);
    }
}

TEST_CASE("input gradients match finite differences of forward") {
    ProxyParams params = testutil::random_params(9, 4, 5, 11);
    auto batch = testutil::random_batch(9, 1, 12);
    Matrix x = embed(params, batch[0].prompt);
    Matrix g = input_gradient(params, x);
    REQUIRE(g.rows() == x.rows());
    REQUIRE(g.cols() == x.cols());
    const double step = 1e-5;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            double saved = x.at(i, j);
            x.at(i, j) = saved + step;
            double up = forward(params, x);
            x.at(i, j) = saved - step;
            double down = forward(params, x);
            x.at(i, j) = saved;
            double numeric = (up - down) / (2.0 * step);
            CHECK(std::abs(g.at(i, j) - numeric) <=
                  1e-6 * std::max(1.0, std::abs(numeric)));
        }
    }
}

TEST_CASE("loss reproduces analytic values") {
    // All-zero parameters give p = 0.5 exactly.
    ProxyParams zero;
    zero.vocab_size = 4;
    zero.embed_dim = 3;
    zero.hidden_dim = 2;
    zero.embeddings = Matrix(4, 3);
    zero.hidden_weights = Matrix(3, 2);
    zero.hidden_bias.assign(2, 0.0);
    zero.out_weights.assign(2, 0.0);

    LabeledExample pos{{"p", {"a"}, {1}}, 1};
    LabeledExample neg{{"n", {"b"}, {2}}, 0};
    CHECK(forward_prompt(zero, pos.prompt) == 0.5);
    CHECK(loss(zero, {pos, neg}) == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    // out_bias = -ln 3 puts p at 0.25; loss for y=1 is -ln(0.25).
    ProxyParams quarter = zero;
    quarter.out_bias = -std::log(3.0);
    CHECK(loss(quarter, {pos}) ==
          doctest::Approx(-std::log(0.25)).epsilon(1e-6));
}

TEST_CASE("saturated correct predictions produce zero gradients") {
    ProxyParams params = testutil::random_params(6, 3, 4, 77);
    params.out_weights.assign(4, 0.0);
    params.out_bias = 40.0;  // p rounds to 1.0, clamp freezes the signal
    auto batch = testutil::random_batch(6, 4, 78);
    for (auto& ex : batch) {
        ex.label = 1;
    }
    CHECK(loss(params, batch) <= 1e-10);
    ProxyGradients g = grad(params, batch);
    for (double v : testutil::flatten_grads(g)) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("balanced batch at the symmetric point has zero bias gradient") {
    ProxyParams zero;
    zero.vocab_size = 3;
    zero.embed_dim = 2;
    zero.hidden_dim = 2;
    zero.embeddings = Matrix(3, 2);
    zero.hidden_weights = Matrix(2, 2);
    zero.hidden_bias.assign(2, 0.0);
    zero.out_weights.assign(2, 0.0);
    LabeledExample pos{{"p", {"a"}, {1}}, 1};
    LabeledExample neg{{"n", {"a"}, {1}}, 0};
    ProxyGradients g = grad(zero, {pos, neg});
    CHECK(g.out_bias == 0.0);
}

TEST_CASE("embed looks up rows and flags bad ids") {
    ProxyParams params = testutil::random_params(5, 3, 2, 9);
    TokenizedPrompt p{"x", {"t1", "t1", "t0"}, {1, 1, 0}};
    Matrix x = embed(params, p);
    REQUIRE(x.rows() == 3);
    REQUIRE(x.cols() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(x.at(0, j) == x.at(1, j));               // identical tokens
        CHECK(x.at(2, j) == params.embeddings.at(0, j));  // unknown row
    }
    TokenizedPrompt bad{"y", {"oops"}, {17}};
    CHECK_THROWS_AS(embed(params, bad), IntegrityError);
    TokenizedPrompt empty{"z", {}, {}};
    CHECK(embed(params, empty).rows() == 0);
}

TEST_CASE("forward is invariant to token order and rejects empty input") {
    ProxyParams params = testutil::random_params(8, 4, 3, 21);
    TokenizedPrompt p{"x", {"a", "b", "c", "a"}, {1, 5, 3, 1}};
    TokenizedPrompt q{"x", {"c", "a", "a", "b"}, {3, 1, 1, 5}};
    CHECK(forward_prompt(params, p) == forward_prompt(params, q));
    CHECK_THROWS_AS(forward_prompt(params, TokenizedPrompt{}), EmptyInputError);
    CHECK_THROWS_AS(forward(params, Matrix(0, 4)), EmptyInputError);
    double prob = forward_prompt(params, p);
    CHECK(prob > 0.0);
    CHECK(prob < 1.0);
}

TEST_CASE("llround split yields 900/50/50 on 1000 examples") {
    auto corpus = testutil::make_trigger_corpus(1000, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    TrainConfig config;
    config.epochs = 1;
    auto [params, report] = train(examples, config, vocab);
    CHECK(report.n_train == 900);
    CHECK(report.n_validation == 50);
    CHECK(report.n_test == 50);
}

TEST_CASE("training on the separable corpus reaches high held-out accuracy") {
    auto corpus = testutil::make_trigger_corpus(2000, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    TrainConfig config;  // defaults
    auto [params, report] = train(examples, config, vocab);

    CHECK(report.test_accuracy >= 0.95);
    CHECK(report.epochs.back().train_loss < report.initial_train_loss);

    // A planted-trigger prompt scores high and is rejected.
    std::string trigger_text = "w01 w02 kill w03 w04";
    CHECK(forward_prompt(params, vocab.encode("t", trigger_text)) >= 0.9);
    CHECK(predict(params, vocab, trigger_text).reject());
    CHECK_FALSE(predict(params, vocab, "w01 w02 w05 w03 w04").reject());
}

TEST_CASE("training is deterministic for identical data and seed") {
    auto corpus = testutil::make_trigger_corpus(300, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    TrainConfig config;
    config.epochs = 3;
    auto [p1, r1] = train(examples, config, vocab);
    auto [p2, r2] = train(examples, config, vocab);
    CHECK(p1 == p2);
    CHECK(r1.to_json() == r2.to_json());
    CHECK(checkpoint_to_json(p1) == checkpoint_to_json(p2));

    TrainConfig other = config;
    other.seed = 43;
    auto [p3, r3] = train(examples, other, vocab);
    CHECK_FALSE(p1 == p3);
}

TEST_CASE("train validates labels and config") {
    auto corpus = testutil::make_trigger_corpus(50, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    for (auto& ex : examples) {
        ex.label = 1;
    }
    TrainConfig config;
    CHECK_THROWS_AS(train(examples, config, vocab), ConfigError);

    TrainConfig bad;
    bad.split.train = 0.5;  // fractions no longer sum to 1
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("poisoned parameters surface a diverged error naming the epoch") {
    auto corpus = testutil::make_trigger_corpus(100, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    ProxyParams start = testutil::random_params(vocab.size(), 4, 5, 5);
    start.out_bias = std::nan("");
    TrainConfig config;
    config.embed_dim = 4;
    config.hidden_dim = 5;
    config.epochs = 2;
    try {
        continue_training(start, examples, config);
        FAIL("expected TrainingDivergedError");
    } catch (const TrainingDivergedError& e) {
        CHECK(e.epoch() == 1);
    }
}

TEST_CASE("continue_training with empty data returns parameters unchanged") {
    ProxyParams start = testutil::random_params(6, 3, 4, 55);
    TrainConfig config;
    auto [params, report] = continue_training(start, {}, config);
    CHECK(params == start);
    CHECK(report.epochs.empty());
}

TEST_CASE("prediction thresholds at 0.5 with reject on the boundary") {
    RefusalPrediction boundary{0.5, 0.5};
    CHECK(boundary.reject());
    RefusalPrediction below{0.49, 0.5};
    CHECK_FALSE(below.reject());
}

TEST_CASE("predict rejects text that tokenizes to nothing") {
    auto corpus = testutil::make_trigger_corpus(100, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    TrainConfig config;
    config.epochs = 1;
    auto [params, report] = train(examples, config, vocab);
    CHECK_THROWS_AS(predict(params, vocab, "?!"), EmptyInputError);
}

TEST_CASE("checkpoints round-trip bit-for-bit") {
    ProxyParams params = testutil::random_params(7, 3, 4, 99);
    params.vocab_hash = 0xabcdef0123456789ULL;
    std::string json = checkpoint_to_json(params);
    ProxyParams back = checkpoint_from_json(json);
    CHECK(back == params);

    namespace fs = std::filesystem;
    fs::path tmp = fs::temp_directory_path() / "oversense_ckpt_test.json";
    save_checkpoint(params, tmp);
    CHECK(load_checkpoint(tmp) == params);
    fs::remove(tmp);
}

TEST_CASE("corrupt checkpoints report parse or integrity errors") {
    CHECK_THROWS_AS(checkpoint_from_json("{not json", "ckpt.json"), ParseError);
    ProxyParams params = testutil::random_params(7, 3, 4, 99);
    std::string json = checkpoint_to_json(params);
    std::string wrong = json;
    auto pos = wrong.find("\"vocab_size\": 7");
    REQUIRE(pos != std::string::npos);
    wrong.replace(pos, 15, "\"vocab_size\": 9");
    CHECK_THROWS_AS(checkpoint_from_json(wrong, "ckpt.json"), IntegrityError);
}

TEST_CASE("predict refuses a vocabulary that does not match the checkpoint") {
    auto corpus = testutil::make_trigger_corpus(100, 7);
    Vocabulary vocab = testutil::corpus_vocab(corpus);
    auto examples = testutil::to_examples(corpus, vocab);
    TrainConfig config;
    config.epochs = 1;
    auto [params, report] = train(examples, config, vocab);
    Vocabulary other = Vocabulary::build({"different words entirely"});
    CHECK_THROWS_AS(predict(params, other, "different words"), IntegrityError);
}
