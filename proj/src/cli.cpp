#include "oversense/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "oversense/attribution.hpp"
#include "oversense/config.hpp"
#include "oversense/corpus.hpp"
#include "oversense/errors.hpp"
#include "oversense/metrics.hpp"
#include "oversense/modelio.hpp"
#include "oversense/pipeline.hpp"
#include "oversense/proxy.hpp"
#include "oversense/refusal.hpp"
#include "oversense/util.hpp"

namespace oversense {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

/// Exclusive lock on an output directory. Concurrent commands writing the
/// same directory would torn-write artifacts, so the second one is refused.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : lock_path_(dir / ".lock") {
        fs::create_directories(dir);
        int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            if (errno == EEXIST) {
                throw LockError("output directory \"" + dir.string() +
                                "\" is in use by another run; remove \"" +
                                lock_path_.string() +
                                "\" if that run crashed");
            }
            throw LockError("cannot create lock file \"" +
                            lock_path_.string() +
                            "\": " + std::strerror(errno));
        }
        std::string pid = std::to_string(::getpid()) + "\n";
        ssize_t written = ::write(fd, pid.data(), pid.size());
        (void)written;
        ::close(fd);
    }

    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

    ~DirLock() {
        std::error_code ec;
        fs::remove(lock_path_, ec);
    }

private:
    fs::path lock_path_;
};

struct ProxyArtifacts {
    ProxyParams params;
    Vocabulary vocab;
};

fs::path checkpoint_path(const RunConfig& config) {
    return config.paths.output_dir / "checkpoint.json";
}
fs::path vocab_path(const RunConfig& config) {
    return config.paths.output_dir / "vocab.txt";
}

/// Reads proxy training data: one JSON object per line with "text" and
/// "label" ("reject" or "accept"). Unknown fields are ignored.
std::vector<std::pair<std::string, int>> load_proxy_training(
    const fs::path& path) {
    std::vector<std::pair<std::string, int>> out;
    std::vector<std::string> lines = split_lines(read_file(path));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            continue;
        }
        ojson row;
        try {
            row = ojson::parse(lines[i]);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), i + 1, e.what());
        }
        if (!row.is_object() || !row.contains("text") ||
            !row.contains("label") || !row["text"].is_string() ||
            !row["label"].is_string()) {
            throw ParseError(path.string(), i + 1,
                             "expected {\"text\": ..., \"label\": ...}");
        }
        std::string label = row["label"].get<std::string>();
        int y = 0;
        if (label == "reject") {
            y = 1;
        } else if (label == "accept") {
            y = 0;
        } else {
            throw ParseError(path.string(), i + 1,
                             "label must be \"reject\" or \"accept\", got \"" +
                                 label + "\"");
        }
        out.emplace_back(row["text"].get<std::string>(), y);
    }
    return out;
}

/// Trains the proxy from config.paths.proxy_data and writes the checkpoint,
/// vocabulary, and training report into the output directory.
ProxyArtifacts train_and_save_proxy(const RunConfig& config) {
    auto rows = load_proxy_training(config.paths.proxy_data);
    std::vector<std::string> texts;
    texts.reserve(rows.size());
    for (const auto& [text, label] : rows) {
        texts.push_back(text);
    }
    Vocabulary vocab = Vocabulary::build(texts, config.vocab_min_count);

    std::vector<LabeledExample> examples;
    examples.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "t%05zu", i);
        TokenizedPrompt prompt = vocab.encode(id, rows[i].first);
        if (prompt.token_ids.empty()) {
            log_warn("training line " + std::to_string(i + 1) +
                     " tokenizes to nothing; skipped");
            continue;
        }
        examples.push_back({std::move(prompt), rows[i].second});
    }

    auto [params, report] = train(examples, config.proxy, vocab);
    save_checkpoint(params, checkpoint_path(config));
    vocab.save(vocab_path(config));
    atomic_write(config.paths.output_dir / "train_report.json",
                 report.to_json());
    std::cout << "trained proxy on " << examples.size()
              << " examples: test accuracy "
              << format_double(report.test_accuracy) << ", checkpoint "
              << checkpoint_path(config).string() << "\n";
    return {std::move(params), std::move(vocab)};
}

/// Loads the proxy artifacts from the output directory, training them
/// first when absent so each command is runnable from a fresh directory.
ProxyArtifacts ensure_proxy(const RunConfig& config) {
    if (fs::is_regular_file(checkpoint_path(config)) &&
        fs::is_regular_file(vocab_path(config))) {
        std::cout << "reusing proxy checkpoint "
                  << checkpoint_path(config).string() << "\n";
        return {load_checkpoint(checkpoint_path(config)),
                Vocabulary::load(vocab_path(config))};
    }
    return train_and_save_proxy(config);
}

std::vector<PromptRecord> load_seed_records(const RunConfig& config) {
    std::vector<PromptRecord> seeds = load_dataset(config.paths.seed_data);
    std::vector<PromptRecord> usable;
    std::size_t harmful = 0;
    for (PromptRecord& seed : seeds) {
        if (seed.benign == BenignLabel::kHarmful) {
            ++harmful;
            continue;
        }
        usable.push_back(std::move(seed));
    }
    if (harmful > 0) {
        log_warn(std::to_string(harmful) +
                 " seed(s) labeled harmful were excluded");
    }
    return usable;
}

int cmd_train_proxy(const RunConfig& config) {
    train_and_save_proxy(config);
    return 0;
}

int cmd_filter(const RunConfig& config) {
    ProxyArtifacts proxy = ensure_proxy(config);
    std::vector<PromptRecord> seeds = load_seed_records(config);
    std::vector<PromptRecord> rejected =
        filter_seeds(seeds, proxy.params, proxy.vocab);
    fs::path out = config.paths.output_dir / "filtered_seeds.jsonl";
    save_dataset(rejected, out);
    std::cout << "proxy rejected " << rejected.size() << " of " << seeds.size()
              << " seeds -> " << out.string() << "\n";
    return 0;
}

int cmd_attribute(const RunConfig& config, const std::string& dataset_arg) {
    ProxyArtifacts proxy = ensure_proxy(config);
    FrequencyTable frequencies =
        FrequencyTable::load(config.paths.frequency_table);
    fs::path dataset_path = dataset_arg.empty()
                                ? config.paths.seed_data
                                : fs::path(dataset_arg);
    std::vector<PromptRecord> records = load_dataset(dataset_path);

    std::vector<AttributionResult> results;
    for (const PromptRecord& record : records) {
        TokenizedPrompt prompt = proxy.vocab.encode(record.id, record.text);
        if (prompt.token_ids.empty()) {
            log_warn("record \"" + record.id +
                     "\" tokenizes to nothing; skipped");
            continue;
        }
        results.push_back(extract_features(proxy.params, prompt,
                                           config.attribution, frequencies));
    }
    fs::path out = config.paths.output_dir / "attributions.tsv";
    atomic_write(out, attribution_dump_tsv(results));
    std::cout << "attributed " << results.size() << " prompts -> "
              << out.string() << "\n";
    return 0;
}

/// Builds the candidate generator for the configured mode. The returned
/// holder keeps the HTTP client (online) or template list (offline) alive.
struct GeneratorHolder {
    std::unique_ptr<HttpChatClient> client;
    std::unique_ptr<CandidateGenerator> generator;
};

GeneratorHolder make_generator(const RunConfig& config) {
    GeneratorHolder holder;
    if (config.mode == RunMode::kOffline) {
        TemplateGenerator gen;
        for (const std::string& line :
             split_lines(read_file(config.paths.templates))) {
            if (line.empty() || line[0] == '#') {
                continue;
            }
            gen.templates.push_back(line);
        }
        gen.seed = config.generation.seed;
        holder.generator = std::make_unique<OfflineGenerator>(std::move(gen));
        return holder;
    }
    RetryPolicy policy;
    policy.max_retries = config.endpoint->max_retries;
    // Key lookup happens here, before any network call.
    holder.client = std::make_unique<HttpChatClient>(
        HttpChatClient::from_env(config.endpoint->base_url, policy));
    holder.generator = std::make_unique<LlmGenerator>(
        *holder.client, config.endpoint->model,
        read_file(config.paths.generation_template),
        config.generation.temperature, config.generation.top_p);
    return holder;
}

int cmd_generate(const RunConfig& config) {
    ProxyArtifacts proxy = ensure_proxy(config);
    FrequencyTable frequencies =
        FrequencyTable::load(config.paths.frequency_table);
    SafetyFilter safety = SafetyFilter::load(config.paths.blocklist);
    std::vector<PromptRecord> seeds = load_seed_records(config);
    GeneratorHolder holder = make_generator(config);

    FeaturePool pool;
    pool.cap = config.pool_cap;
    LoopResult result = run_generation_loop(
        seeds, proxy.params, proxy.vocab, *holder.generator, std::move(pool),
        config.budget, safety, config.attribution, frequencies);

    fs::path dataset_out = config.paths.output_dir / "dataset.jsonl";
    save_dataset(result.generated, dataset_out);
    atomic_write(config.paths.output_dir / "run_report.json",
                 result.report.to_json());

    if (config.refine_enabled) {
        // Controls: seeds the proxy accepted (the complement of the
        // rejected set actually expanded by the loop).
        std::vector<PromptRecord> accepted;
        for (const PromptRecord& seed : seeds) {
            TokenizedPrompt prompt = proxy.vocab.encode(seed.id, seed.text);
            if (prompt.token_ids.empty()) {
                continue;
            }
            if (!predict(proxy.params, proxy.vocab, seed.text).reject()) {
                accepted.push_back(seed);
            }
        }
        auto [refined, refine_report] =
            refine_detector(proxy.params, result.generated, accepted,
                            proxy.vocab, config.proxy);
        save_checkpoint(refined,
                        config.paths.output_dir / "checkpoint_refined.json");
        atomic_write(config.paths.output_dir / "refine_report.json",
                     refine_report.to_json());
        std::cout << "refined proxy -> "
                  << (config.paths.output_dir / "checkpoint_refined.json")
                         .string()
                  << "\n";
    }

    std::cout << "kept " << result.report.n_kept << " of "
              << result.report.n_generated << " candidates from "
              << result.report.n_rejected_seeds << "/" << result.report.n_seeds
              << " proxy-rejected seeds"
              << (result.report.budget_truncated ? " (budget truncated)" : "")
              << " -> " << dataset_out.string() << "\n";
    return 0;
}

/// Loads an evaluation journal, tolerating a torn final line (the file is
/// appended to mid-run, so a crash can cut the last row short). A malformed
/// line anywhere else still fails the load.
DecisionMatrix load_journal(const fs::path& path) {
    try {
        return load_matrix(path);
    } catch (const ParseError& e) {
        std::vector<std::string> lines = split_lines(read_file(path));
        std::size_t last = 0;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (!lines[i].empty()) {
                last = i + 1;
            }
        }
        if (e.line() != last) {
            throw;
        }
        log_warn("dropping torn final line of \"" + path.string() + "\"");
        std::string content;
        for (std::size_t i = 0; i + 1 < last; ++i) {
            content += lines[i] + "\n";
        }
        fs::path recovered = path;
        recovered += ".recovered";
        atomic_write(recovered, content);
        DecisionMatrix matrix = load_matrix(recovered);
        fs::remove(recovered);
        return matrix;
    }
}

/// Unified prompt view over the dataset files passed to evaluate/report.
struct PromptSet {
    std::vector<std::pair<std::string, bool>> prompts;  // (id, benign)
    std::map<std::string, std::string> texts;
    std::vector<FeatureCountSource> feature_sources;
    std::vector<std::string> ids_in_order;
};

PromptSet load_prompt_set(const std::vector<std::string>& dataset_paths) {
    PromptSet set;
    for (const std::string& raw : dataset_paths) {
        for (PromptRecord& record : load_dataset(fs::path(raw))) {
            auto it = set.texts.find(record.id);
            if (it != set.texts.end()) {
                if (it->second != record.text) {
                    throw IntegrityError(
                        "prompt id \"" + record.id +
                        "\" appears in two datasets with different texts");
                }
                continue;
            }
            set.texts.emplace(record.id, record.text);
            set.prompts.emplace_back(record.id,
                                     record.benign == BenignLabel::kBenign);
            set.ids_in_order.push_back(record.id);
            if (record.trigger_feature.has_value()) {
                set.feature_sources.push_back(
                    {record.id, *record.trigger_feature});
            }
        }
    }
    return set;
}

/// The evaluation targets for the configured mode, with owned state.
struct TargetSet {
    std::vector<SimulatedRefuser> simulators;
    std::unique_ptr<HttpChatClient> client;
    std::unique_ptr<JudgeClient> judge;
    std::vector<std::pair<std::string, TargetFn>> models;
};

TargetSet make_targets(const RunConfig& config,
                       const std::vector<std::string>& requested,
                       const PhraseList& phrases) {
    TargetSet set;
    if (config.mode == RunMode::kOffline) {
        std::set<std::string> known;
        for (const SimulatorSpec& spec : config.simulators) {
            known.insert(spec.id);
        }
        for (const std::string& id : requested) {
            if (known.count(id) == 0) {
                throw ConfigError("unknown model id \"" + id +
                                  "\"; configured simulators: " +
                                  [&] {
                                      std::string joined;
                                      for (const auto& k : known) {
                                          joined += joined.empty() ? k
                                                                   : ", " + k;
                                      }
                                      return joined;
                                  }());
            }
        }
        for (const SimulatorSpec& spec : config.simulators) {
            if (!requested.empty() &&
                std::find(requested.begin(), requested.end(), spec.id) ==
                    requested.end()) {
                continue;
            }
            SimulatedRefuser refuser;
            refuser.trigger_tokens.insert(spec.trigger_tokens.begin(),
                                          spec.trigger_tokens.end());
            refuser.refusal_text = spec.refusal_text;
            refuser.comply_text = spec.comply_text;
            refuser.validate();
            set.simulators.push_back(std::move(refuser));
        }
        std::size_t index = 0;
        for (const SimulatorSpec& spec : config.simulators) {
            if (!requested.empty() &&
                std::find(requested.begin(), requested.end(), spec.id) ==
                    requested.end()) {
                continue;
            }
            const SimulatedRefuser* refuser = &set.simulators[index++];
            set.models.emplace_back(spec.id,
                                    [refuser](const std::string& text) {
                                        return simulate_target(*refuser, text);
                                    });
        }
        set.judge = std::make_unique<PhraseJudge>(phrases);
        return set;
    }

    for (const std::string& id : requested) {
        if (id != config.endpoint->model) {
            throw ConfigError("unknown model id \"" + id +
                              "\"; the endpoint serves \"" +
                              config.endpoint->model + "\"");
        }
    }
    RetryPolicy policy;
    policy.max_retries = config.endpoint->max_retries;
    set.client = std::make_unique<HttpChatClient>(
        HttpChatClient::from_env(config.endpoint->base_url, policy));
    HttpChatClient* client = set.client.get();
    std::string model_name = config.endpoint->model;
    set.models.emplace_back(model_name, [client,
                                         model_name](const std::string& text) {
        ChatRequest request;
        request.model_name = model_name;
        request.messages = {{"user", text}};
        request.temperature = 0.0;
        request.top_p = 1.0;
        return parse_chat_response(client->complete(request));
    });
    set.judge = std::make_unique<LlmJudge>(
        *client, model_name, read_file(config.paths.judge_template));
    return set;
}

int cmd_evaluate(const RunConfig& config,
                 const std::vector<std::string>& dataset_paths,
                 const std::vector<std::string>& requested_models) {
    PromptSet prompts = load_prompt_set(dataset_paths);
    PhraseList phrases = PhraseList::load(config.paths.phrase_list);
    TargetSet targets = make_targets(config, requested_models, phrases);

    fs::path matrix_out = config.paths.output_dir / "matrix.jsonl";
    fs::path journal_path = config.paths.output_dir / "matrix.progress.jsonl";
    DecisionMatrix base;
    if (fs::is_regular_file(matrix_out)) {
        base = load_matrix(matrix_out);
        std::cout << "resuming from " << matrix_out.string() << "\n";
    } else if (fs::is_regular_file(journal_path)) {
        base = load_journal(journal_path);
        std::cout << "resuming from journal " << journal_path.string()
                  << "\n";
    }

    // The journal is a valid matrix file at every instant: header and
    // declarations first, then one verdict row per decision as it lands.
    std::ofstream journal(journal_path,
                          std::ios::binary | std::ios::trunc);
    if (!journal) {
        throw LockError("cannot open journal \"" + journal_path.string() +
                        "\" for writing");
    }
    journal << matrix_header_row() << "\n";
    std::set<std::string> declared_prompts;
    for (const auto& prompt : base.prompts()) {
        journal << matrix_prompt_row(prompt.id, prompt.benign) << "\n";
        declared_prompts.insert(prompt.id);
    }
    for (const auto& [id, benign] : prompts.prompts) {
        if (declared_prompts.insert(id).second) {
            journal << matrix_prompt_row(id, benign) << "\n";
        }
    }
    std::set<std::string> declared_models(base.models().begin(),
                                          base.models().end());
    for (const std::string& model : base.models()) {
        journal << matrix_model_row(model) << "\n";
    }
    for (const auto& [id, fn] : targets.models) {
        if (declared_models.insert(id).second) {
            journal << matrix_model_row(id) << "\n";
        }
    }
    for (const auto& prompt : base.prompts()) {
        for (const std::string& model : base.models()) {
            auto v = base.verdict(prompt.id, model);
            if (v) {
                journal << matrix_verdict_row(prompt.id, model, *v) << "\n";
            }
        }
    }
    journal.flush();

    std::size_t decisions = 0;
    DecisionMatrix matrix = extend_matrix(
        base, prompts.prompts, prompts.texts, targets.models, phrases,
        *targets.judge,
        [&](const std::string& prompt_id, const std::string& model_id,
            Verdict verdict) {
            journal << matrix_verdict_row(prompt_id, model_id, verdict)
                    << "\n";
            journal.flush();
            ++decisions;
        });
    journal.close();

    save_matrix(matrix, matrix_out);
    fs::remove(journal_path);
    std::cout << "decided " << decisions << " new pairs; matrix -> "
              << matrix_out.string() << "\n";
    for (const auto& [id, fn] : targets.models) {
        std::cout << "  " << id << " oversensitivity rate "
                  << format_double(osr(matrix, id)) << "\n";
    }
    return 0;
}

fs::path matrix_path_or_default(const RunConfig& config,
                                const std::string& arg) {
    return arg.empty() ? config.paths.output_dir / "matrix.jsonl"
                       : fs::path(arg);
}

int cmd_distill(const RunConfig& config, const std::string& matrix_arg) {
    DecisionMatrix matrix = load_matrix(matrix_path_or_default(config,
                                                               matrix_arg));
    std::vector<std::string> hard =
        distill_hard(matrix, config.distill_min_rejections);
    std::string content;
    for (const std::string& id : hard) {
        content += id + "\n";
    }
    fs::path out = config.paths.output_dir / "hard_subset.txt";
    atomic_write(out, content);
    std::cout << "hard subset: " << hard.size() << " of "
              << matrix.prompts().size() << " prompts (rejected by >= "
              << config.distill_min_rejections << " models) -> "
              << out.string() << "\n";
    return 0;
}

int cmd_report(const RunConfig& config, const std::string& matrix_arg,
               const std::vector<std::string>& dataset_paths,
               const std::string& hard_arg) {
    DecisionMatrix matrix = load_matrix(matrix_path_or_default(config,
                                                               matrix_arg));
    PromptSet prompts = load_prompt_set(dataset_paths);
    CategoryConfig categories = CategoryConfig::load(config.paths.categories);

    std::vector<ReportDataset> datasets;
    ReportDataset full;
    full.name = "full";
    for (const auto& prompt : matrix.prompts()) {
        full.prompt_ids.push_back(prompt.id);
    }
    datasets.push_back(std::move(full));

    fs::path hard_path = hard_arg.empty()
                             ? config.paths.output_dir / "hard_subset.txt"
                             : fs::path(hard_arg);
    if (fs::is_regular_file(hard_path)) {
        ReportDataset hard;
        hard.name = "hard";
        for (const std::string& line : split_lines(read_file(hard_path))) {
            if (!line.empty()) {
                hard.prompt_ids.push_back(line);
            }
        }
        if (!hard.prompt_ids.empty()) {
            datasets.push_back(std::move(hard));
        }
    } else if (!hard_arg.empty()) {
        throw ConfigError("hard-subset file \"" + hard_path.string() +
                          "\" does not exist");
    }

    std::vector<ReportRow> rows =
        osr_report(matrix, datasets, prompts.texts, categories);
    fs::path report_out = config.paths.output_dir / "report.tsv";
    atomic_write(report_out, report_to_tsv(rows, categories));
    std::cout << "report: " << rows.size() << " rows -> "
              << report_out.string() << "\n";

    auto counts = count_trigger_features(matrix, prompts.feature_sources);
    bool any = false;
    for (const auto& [model, row] : counts) {
        any = any || !row.empty();
    }
    if (!any) {
        log_warn("no rejected prompts carry trigger features; heatmap "
                 "skipped");
        return 0;
    }
    Heatmap heatmap = feature_heatmap(counts, config.report_top_n,
                                      config.report_rank_over_all);
    fs::path heatmap_out = config.paths.output_dir / "heatmap.tsv";
    atomic_write(heatmap_out, heatmap_to_tsv(heatmap));
    std::cout << "heatmap: " << heatmap.features.size() << " features x "
              << heatmap.models.size() << " models -> "
              << heatmap_out.string() << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{
        "oversense: builds model-specific benign prompts that trigger "
        "refusals, and measures each model's oversensitivity rate"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path;
    app.add_option("--config", config_path, "run configuration JSON file")
        ->required();
    std::uint64_t seed_override = 0;
    CLI::Option* seed_opt =
        app.add_option("--seed", seed_override,
                       "override the proxy and generation seeds");
    bool force_offline = false;
    app.add_flag("--offline", force_offline,
                 "force offline mode, ignoring any endpoint settings");

    std::string out_override;
    std::string attribute_dataset;
    std::vector<std::string> eval_datasets;
    std::vector<std::string> eval_models;
    std::string matrix_arg;
    std::vector<std::string> report_datasets;
    std::string hard_arg;

    CLI::App* train = app.add_subcommand(
        "train-proxy", "train the refusal proxy and write its checkpoint");
    CLI::App* filter = app.add_subcommand(
        "filter", "write the proxy-rejected subset of the seed prompts");
    CLI::App* attribute = app.add_subcommand(
        "attribute", "write per-token attributions for a dataset");
    attribute->add_option("--dataset", attribute_dataset,
                          "dataset to attribute (default: seed data)");
    CLI::App* generate = app.add_subcommand(
        "generate", "run the full generation loop and write the dataset");
    CLI::App* evaluate = app.add_subcommand(
        "evaluate", "query each target per prompt and write the matrix");
    evaluate->add_option("--dataset", eval_datasets,
                         "prompt dataset(s) to evaluate")
        ->required();
    evaluate->add_option("--model", eval_models,
                         "model ids to query (default: all configured)");
    CLI::App* distill = app.add_subcommand(
        "distill", "write the hard subset of a decision matrix");
    distill->add_option("--matrix", matrix_arg,
                        "matrix file (default: <output_dir>/matrix.jsonl)");
    CLI::App* report = app.add_subcommand(
        "report", "write the rate table and feature heatmap");
    report->add_option("--matrix", matrix_arg,
                       "matrix file (default: <output_dir>/matrix.jsonl)");
    report->add_option("--dataset", report_datasets,
                       "dataset(s) supplying prompt texts and features")
        ->required();
    report->add_option("--hard", hard_arg,
                       "hard-subset id file (default: "
                       "<output_dir>/hard_subset.txt when present)");
    for (CLI::App* sub :
         {train, filter, attribute, generate, evaluate, distill, report}) {
        sub->add_option("--out", out_override,
                        "override paths.output_dir from the config");
    }

    std::vector<const char*> argv;
    argv.push_back("oversense");
    for (const std::string& arg : args) {
        argv.push_back(arg.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunConfig config = RunConfig::load(config_path);
        if (force_offline) {
            config.mode = RunMode::kOffline;
            config.endpoint.reset();
        }
        if (seed_opt->count() > 0) {
            config.proxy.seed = seed_override;
            config.generation.seed = seed_override;
        }
        if (!out_override.empty()) {
            config.paths.output_dir = fs::path(out_override);
        }
        config.validate();

        DirLock lock(config.paths.output_dir);
        if (train->parsed()) {
            return cmd_train_proxy(config);
        }
        if (filter->parsed()) {
            return cmd_filter(config);
        }
        if (attribute->parsed()) {
            return cmd_attribute(config, attribute_dataset);
        }
        if (generate->parsed()) {
            return cmd_generate(config);
        }
        if (evaluate->parsed()) {
            return cmd_evaluate(config, eval_datasets, eval_models);
        }
        if (distill->parsed()) {
            return cmd_distill(config, matrix_arg);
        }
        if (report->parsed()) {
            return cmd_report(config, matrix_arg, report_datasets, hard_arg);
        }
        std::cerr << "error: no subcommand selected\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace oversense
