#include "oversense/config.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "oversense/errors.hpp"
#include "oversense/util.hpp"

namespace oversense {

namespace {

using ojson = nlohmann::ordered_json;

/// Parses JSON text, converting the library's byte offset into a 1-based
/// line number so corrupt files are reported the same way as other formats.
ojson parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t upto = e.byte > 0 ? e.byte - 1 : 0;
        upto = std::min(upto, text.size());
        auto line = static_cast<std::size_t>(
            1 + std::count(text.begin(),
                           text.begin() + static_cast<std::ptrdiff_t>(upto),
                           '\n'));
        throw ParseError(origin, line, e.what());
    }
}

void check_keys(const ojson& obj, const std::set<std::string>& allowed,
                const std::string& context, const std::string& origin) {
    for (const auto& item : obj.items()) {
        if (allowed.count(item.key()) == 0) {
            throw ConfigError(origin + ": unknown key \"" + item.key() +
                              "\" in " + context);
        }
    }
}

const ojson* find_field(const ojson& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

const ojson& require_object(const ojson& obj, const char* key,
                            const std::string& origin) {
    const ojson* field = find_field(obj, key);
    if (field == nullptr) {
        throw ConfigError(origin + ": missing required object \"" +
                          std::string(key) + "\"");
    }
    if (!field->is_object()) {
        throw ConfigError(origin + ": \"" + std::string(key) +
                          "\" must be an object");
    }
    return *field;
}

std::string require_string(const ojson& obj, const char* key,
                           const std::string& context,
                           const std::string& origin) {
    const ojson* field = find_field(obj, key);
    if (field == nullptr) {
        throw ConfigError(origin + ": missing required key \"" +
                          std::string(key) + "\" in " + context);
    }
    if (!field->is_string()) {
        throw ConfigError(origin + ": " + context + "." + key +
                          " must be a string");
    }
    return field->get<std::string>();
}

std::string get_string(const ojson& obj, const char* key,
                       const std::string& fallback, const std::string& context,
                       const std::string& origin) {
    const ojson* field = find_field(obj, key);
    if (field == nullptr) {
        return fallback;
    }
    if (!field->is_string()) {
        throw ConfigError(origin + ": " + context + "." + key +
                          " must be a string");
    }
    return field->get<std::string>();
}

double get_double(const ojson& obj, const char* key, double fallback,
                  const std::string& context, const std::string& origin) {
    const ojson* field = find_field(obj, key);
    if (field == nullptr) {
        return fallback;
    }
    if (!field->is_number()) {
        throw ConfigError(origin + ": " + context + "." + key +
                          " must be a number");
    }
    return field->get<double>();
}

std::uint64_t get_unsigned(const ojson& obj, const char* key,
                           std::uint64_t fallback, const std::string& context,
                           const std::string& origin) {
    const ojson* field = find_field(obj, key);
    if (field == nullptr) {
        return fallback;
    }
    bool ok = field->is_number_unsigned() ||
              (field->is_number_integer() && field->get<std::int64_t>() >= 0);
    if (!ok) {
        throw ConfigError(origin + ": " + context + "." + key +
                          " must be a non-negative integer");
    }
    return field->get<std::uint64_t>();
}

bool get_bool(const ojson& obj, const char* key, bool fallback,
              const std::string& context, const std::string& origin) {
    const ojson* field = find_field(obj, key);
    if (field == nullptr) {
        return fallback;
    }
    if (!field->is_boolean()) {
        throw ConfigError(origin + ": " + context + "." + key +
                          " must be a boolean");
    }
    return field->get<bool>();
}

std::filesystem::path resolve_path(const std::string& raw,
                                   const std::filesystem::path& base_dir) {
    if (raw.empty()) {
        return {};
    }
    std::filesystem::path p(raw);
    if (p.is_relative()) {
        p = base_dir / p;
    }
    return p.lexically_normal();
}

void require_input_file(const std::filesystem::path& path, const char* key) {
    if (path.empty()) {
        throw ConfigError(std::string("paths.") + key + " is not set");
    }
    if (!std::filesystem::is_regular_file(path)) {
        throw ConfigError(std::string("paths.") + key + ": \"" +
                          path.string() + "\" does not exist");
    }
}

}  // namespace

std::string run_mode_to_string(RunMode mode) {
    return mode == RunMode::kOffline ? "offline" : "online";
}

RunMode run_mode_from_string(const std::string& text) {
    if (text == "offline") {
        return RunMode::kOffline;
    }
    if (text == "online") {
        return RunMode::kOnline;
    }
    throw ConfigError("unknown mode \"" + text +
                      "\" (expected \"offline\" or \"online\")");
}

RunConfig RunConfig::from_json(const std::string& text,
                               const std::filesystem::path& base_dir,
                               const std::string& origin) {
    ojson root = parse_json_text(text, origin);
    if (!root.is_object()) {
        throw ConfigError(origin + ": top level must be a JSON object");
    }
    check_keys(root,
               {"mode", "paths", "proxy", "attribution", "pool", "budget",
                "generation", "refine", "distill", "report", "simulators",
                "endpoint"},
               "the top-level object", origin);

    RunConfig config;
    config.mode = run_mode_from_string(
        require_string(root, "mode", "the top-level object", origin));

    const ojson& paths = require_object(root, "paths", origin);
    check_keys(paths,
               {"seed_data", "proxy_data", "frequency_table", "phrase_list",
                "blocklist", "categories", "templates", "generation_template",
                "judge_template", "output_dir"},
               "paths", origin);
    auto path_of = [&](const char* key, bool required) {
        std::string raw = required
                              ? require_string(paths, key, "paths", origin)
                              : get_string(paths, key, "", "paths", origin);
        return resolve_path(raw, base_dir);
    };
    config.paths.seed_data = path_of("seed_data", true);
    config.paths.proxy_data = path_of("proxy_data", true);
    config.paths.frequency_table = path_of("frequency_table", true);
    config.paths.phrase_list = path_of("phrase_list", true);
    config.paths.blocklist = path_of("blocklist", true);
    config.paths.categories = path_of("categories", true);
    config.paths.templates = path_of("templates", false);
    config.paths.generation_template = path_of("generation_template", false);
    config.paths.judge_template = path_of("judge_template", false);
    config.paths.output_dir = path_of("output_dir", true);

    if (const ojson* proxy = find_field(root, "proxy")) {
        if (!proxy->is_object()) {
            throw ConfigError(origin + ": \"proxy\" must be an object");
        }
        check_keys(*proxy,
                   {"embed_dim", "hidden_dim", "learning_rate", "epochs",
                    "batch_size", "seed", "split", "vocab_min_count"},
                   "proxy", origin);
        config.proxy.embed_dim = get_unsigned(*proxy, "embed_dim",
                                              config.proxy.embed_dim, "proxy",
                                              origin);
        config.proxy.hidden_dim = get_unsigned(
            *proxy, "hidden_dim", config.proxy.hidden_dim, "proxy", origin);
        config.proxy.learning_rate =
            get_double(*proxy, "learning_rate", config.proxy.learning_rate,
                       "proxy", origin);
        config.proxy.epochs = get_unsigned(*proxy, "epochs",
                                           config.proxy.epochs, "proxy",
                                           origin);
        config.proxy.batch_size = get_unsigned(
            *proxy, "batch_size", config.proxy.batch_size, "proxy", origin);
        config.proxy.seed =
            get_unsigned(*proxy, "seed", config.proxy.seed, "proxy", origin);
        if (const ojson* split = find_field(*proxy, "split")) {
            if (!split->is_object()) {
                throw ConfigError(origin +
                                  ": \"proxy.split\" must be an object");
            }
            check_keys(*split, {"train", "validation", "test"}, "proxy.split",
                       origin);
            config.proxy.split.train =
                get_double(*split, "train", config.proxy.split.train,
                           "proxy.split", origin);
            config.proxy.split.validation =
                get_double(*split, "validation", config.proxy.split.validation,
                           "proxy.split", origin);
            config.proxy.split.test =
                get_double(*split, "test", config.proxy.split.test,
                           "proxy.split", origin);
        }
        config.vocab_min_count =
            get_unsigned(*proxy, "vocab_min_count", config.vocab_min_count,
                         "proxy", origin);
    }

    if (const ojson* attribution = find_field(root, "attribution")) {
        if (!attribution->is_object()) {
            throw ConfigError(origin + ": \"attribution\" must be an object");
        }
        check_keys(*attribution, {"steps", "beta", "top_k", "rank_by_absolute"},
                   "attribution", origin);
        config.attribution.steps =
            get_unsigned(*attribution, "steps", config.attribution.steps,
                         "attribution", origin);
        config.attribution.beta = get_double(
            *attribution, "beta", config.attribution.beta, "attribution",
            origin);
        config.attribution.top_k =
            get_unsigned(*attribution, "top_k", config.attribution.top_k,
                         "attribution", origin);
        config.attribution.rank_by_absolute =
            get_bool(*attribution, "rank_by_absolute",
                     config.attribution.rank_by_absolute, "attribution",
                     origin);
    }

    if (const ojson* pool = find_field(root, "pool")) {
        if (!pool->is_object()) {
            throw ConfigError(origin + ": \"pool\" must be an object");
        }
        check_keys(*pool, {"cap"}, "pool", origin);
        config.pool_cap =
            get_unsigned(*pool, "cap", config.pool_cap, "pool", origin);
    }

    if (const ojson* budget = find_field(root, "budget")) {
        if (!budget->is_object()) {
            throw ConfigError(origin + ": \"budget\" must be an object");
        }
        check_keys(*budget,
                   {"max_total_samples", "max_expansion_passes",
                    "per_seed_feature_limit"},
                   "budget", origin);
        config.budget.max_total_samples =
            get_unsigned(*budget, "max_total_samples",
                         config.budget.max_total_samples, "budget", origin);
        config.budget.max_expansion_passes =
            get_unsigned(*budget, "max_expansion_passes",
                         config.budget.max_expansion_passes, "budget", origin);
        config.budget.per_seed_feature_limit =
            get_unsigned(*budget, "per_seed_feature_limit",
                         config.budget.per_seed_feature_limit, "budget",
                         origin);
    }

    if (const ojson* generation = find_field(root, "generation")) {
        if (!generation->is_object()) {
            throw ConfigError(origin + ": \"generation\" must be an object");
        }
        check_keys(*generation, {"temperature", "top_p", "seed"}, "generation",
                   origin);
        config.generation.temperature =
            get_double(*generation, "temperature",
                       config.generation.temperature, "generation", origin);
        config.generation.top_p = get_double(
            *generation, "top_p", config.generation.top_p, "generation",
            origin);
        config.generation.seed =
            get_unsigned(*generation, "seed", config.generation.seed,
                         "generation", origin);
    }

    if (const ojson* refine = find_field(root, "refine")) {
        if (!refine->is_object()) {
            throw ConfigError(origin + ": \"refine\" must be an object");
        }
        check_keys(*refine, {"enabled"}, "refine", origin);
        config.refine_enabled = get_bool(*refine, "enabled",
                                         config.refine_enabled, "refine",
                                         origin);
    }

    if (const ojson* distill = find_field(root, "distill")) {
        if (!distill->is_object()) {
            throw ConfigError(origin + ": \"distill\" must be an object");
        }
        check_keys(*distill, {"min_rejections"}, "distill", origin);
        config.distill_min_rejections =
            get_unsigned(*distill, "min_rejections",
                         config.distill_min_rejections, "distill", origin);
    }

    if (const ojson* report = find_field(root, "report")) {
        if (!report->is_object()) {
            throw ConfigError(origin + ": \"report\" must be an object");
        }
        check_keys(*report, {"top_n", "rank_over_all"}, "report", origin);
        config.report_top_n = get_unsigned(*report, "top_n",
                                           config.report_top_n, "report",
                                           origin);
        config.report_rank_over_all =
            get_bool(*report, "rank_over_all", config.report_rank_over_all,
                     "report", origin);
    }

    if (const ojson* simulators = find_field(root, "simulators")) {
        if (!simulators->is_array()) {
            throw ConfigError(origin + ": \"simulators\" must be an array");
        }
        for (std::size_t i = 0; i < simulators->size(); ++i) {
            const ojson& entry = (*simulators)[i];
            std::string context = "simulators[" + std::to_string(i) + "]";
            if (!entry.is_object()) {
                throw ConfigError(origin + ": " + context +
                                  " must be an object");
            }
            check_keys(entry,
                       {"id", "trigger_tokens", "refusal_text", "comply_text"},
                       context, origin);
            SimulatorSpec spec;
            spec.id = require_string(entry, "id", context, origin);
            const ojson* triggers = find_field(entry, "trigger_tokens");
            if (triggers == nullptr || !triggers->is_array()) {
                throw ConfigError(origin + ": " + context +
                                  ".trigger_tokens must be an array");
            }
            for (const ojson& token : *triggers) {
                if (!token.is_string()) {
                    throw ConfigError(origin + ": " + context +
                                      ".trigger_tokens must hold strings");
                }
                spec.trigger_tokens.push_back(token.get<std::string>());
            }
            spec.refusal_text =
                require_string(entry, "refusal_text", context, origin);
            spec.comply_text =
                require_string(entry, "comply_text", context, origin);
            config.simulators.push_back(std::move(spec));
        }
    }

    if (const ojson* endpoint = find_field(root, "endpoint")) {
        if (!endpoint->is_object()) {
            throw ConfigError(origin + ": \"endpoint\" must be an object");
        }
        check_keys(*endpoint, {"base_url", "model", "max_retries"}, "endpoint",
                   origin);
        EndpointConfig ep;
        ep.base_url = require_string(*endpoint, "base_url", "endpoint", origin);
        ep.model = require_string(*endpoint, "model", "endpoint", origin);
        ep.max_retries = get_unsigned(*endpoint, "max_retries", ep.max_retries,
                                      "endpoint", origin);
        config.endpoint = std::move(ep);
    }

    return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::filesystem::path base_dir =
        std::filesystem::absolute(path).parent_path();
    return from_json(read_file(path), base_dir, path.string());
}

std::string RunConfig::to_json() const {
    ojson root = ojson::object();
    root["mode"] = run_mode_to_string(mode);

    ojson paths_obj = ojson::object();
    paths_obj["seed_data"] = paths.seed_data.string();
    paths_obj["proxy_data"] = paths.proxy_data.string();
    paths_obj["frequency_table"] = paths.frequency_table.string();
    paths_obj["phrase_list"] = paths.phrase_list.string();
    paths_obj["blocklist"] = paths.blocklist.string();
    paths_obj["categories"] = paths.categories.string();
    paths_obj["templates"] = paths.templates.string();
    paths_obj["generation_template"] = paths.generation_template.string();
    paths_obj["judge_template"] = paths.judge_template.string();
    paths_obj["output_dir"] = paths.output_dir.string();
    root["paths"] = std::move(paths_obj);

    ojson proxy_obj = ojson::object();
    proxy_obj["embed_dim"] = proxy.embed_dim;
    proxy_obj["hidden_dim"] = proxy.hidden_dim;
    proxy_obj["learning_rate"] = proxy.learning_rate;
    proxy_obj["epochs"] = proxy.epochs;
    proxy_obj["batch_size"] = proxy.batch_size;
    proxy_obj["seed"] = proxy.seed;
    proxy_obj["split"] = {{"train", proxy.split.train},
                          {"validation", proxy.split.validation},
                          {"test", proxy.split.test}};
    proxy_obj["vocab_min_count"] = vocab_min_count;
    root["proxy"] = std::move(proxy_obj);

    root["attribution"] = {{"steps", attribution.steps},
                           {"beta", attribution.beta},
                           {"top_k", attribution.top_k},
                           {"rank_by_absolute", attribution.rank_by_absolute}};
    root["pool"] = {{"cap", pool_cap}};
    root["budget"] = {{"max_total_samples", budget.max_total_samples},
                      {"max_expansion_passes", budget.max_expansion_passes},
                      {"per_seed_feature_limit",
                       budget.per_seed_feature_limit}};
    root["generation"] = {{"temperature", generation.temperature},
                          {"top_p", generation.top_p},
                          {"seed", generation.seed}};
    root["refine"] = {{"enabled", refine_enabled}};
    root["distill"] = {{"min_rejections", distill_min_rejections}};
    root["report"] = {{"top_n", report_top_n},
                      {"rank_over_all", report_rank_over_all}};

    ojson sims = ojson::array();
    for (const SimulatorSpec& spec : simulators) {
        ojson entry = ojson::object();
        entry["id"] = spec.id;
        entry["trigger_tokens"] = spec.trigger_tokens;
        entry["refusal_text"] = spec.refusal_text;
        entry["comply_text"] = spec.comply_text;
        sims.push_back(std::move(entry));
    }
    root["simulators"] = std::move(sims);

    if (endpoint.has_value()) {
        root["endpoint"] = {{"base_url", endpoint->base_url},
                            {"model", endpoint->model},
                            {"max_retries", endpoint->max_retries}};
    }
    return root.dump(2) + "\n";
}

void RunConfig::save(const std::filesystem::path& path) const {
    atomic_write(path, to_json());
}

void RunConfig::validate() const {
    require_input_file(paths.seed_data, "seed_data");
    require_input_file(paths.proxy_data, "proxy_data");
    require_input_file(paths.frequency_table, "frequency_table");
    require_input_file(paths.phrase_list, "phrase_list");
    require_input_file(paths.blocklist, "blocklist");
    require_input_file(paths.categories, "categories");
    if (paths.output_dir.empty()) {
        throw ConfigError("paths.output_dir is not set");
    }

    proxy.validate();
    attribution.validate();
    budget.validate();
    if (vocab_min_count == 0) {
        throw ConfigError("proxy.vocab_min_count must be positive");
    }
    if (pool_cap == 0) {
        throw ConfigError("pool.cap must be positive");
    }
    if (distill_min_rejections == 0) {
        throw ConfigError("distill.min_rejections must be positive");
    }
    if (report_top_n == 0) {
        throw ConfigError("report.top_n must be positive");
    }
    if (generation.temperature < 0.0 || generation.temperature > 2.0) {
        throw ConfigError("generation.temperature must be within [0, 2]");
    }
    if (generation.top_p <= 0.0 || generation.top_p > 1.0) {
        throw ConfigError("generation.top_p must be within (0, 1]");
    }

    std::set<std::string> simulator_ids;
    for (const SimulatorSpec& spec : simulators) {
        if (spec.id.empty()) {
            throw ConfigError("simulator ids must be non-empty");
        }
        if (!simulator_ids.insert(spec.id).second) {
            throw ConfigError("duplicate simulator id \"" + spec.id + "\"");
        }
        if (spec.trigger_tokens.empty()) {
            throw ConfigError("simulator \"" + spec.id +
                              "\" needs at least one trigger token");
        }
        if (spec.refusal_text.empty()) {
            throw ConfigError("simulator \"" + spec.id +
                              "\" needs a refusal_text");
        }
    }

    if (mode == RunMode::kOffline) {
        if (endpoint.has_value()) {
            throw ConfigError(
                "offline mode forbids endpoint settings; remove "
                "\"endpoint\" or switch mode to \"online\"");
        }
        if (simulators.empty()) {
            throw ConfigError(
                "offline mode requires simulator settings; add at least "
                "one entry under \"simulators\"");
        }
        require_input_file(paths.templates, "templates");
    } else {
        if (!endpoint.has_value()) {
            throw ConfigError("online mode requires endpoint settings");
        }
        if (endpoint->base_url.empty() || endpoint->model.empty()) {
            throw ConfigError(
                "endpoint.base_url and endpoint.model must be non-empty");
        }
        require_input_file(paths.generation_template, "generation_template");
        require_input_file(paths.judge_template, "judge_template");
    }
}

}  // namespace oversense
