// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "taskmerge/errors.hpp"
#include "taskmerge/merge_methods.hpp"
#include "taskmerge/reports.hpp"
#include "taskmerge/saliency_mask.hpp"
#include "taskmerge/task_vector.hpp"
#include "taskmerge/tensor_store.hpp"
#include "taskmerge/theory_validation.hpp"

namespace taskmerge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
    std::string config_path;
    std::string base_path;
    std::vector<std::string> finetuned_paths;
    std::vector<std::string> taskvec_paths;
    std::vector<std::string> beta_paths;
    std::string method;
    double eta = kDefaultPruningRatio;
    std::string lambda;
    std::string lambda_table_path;
    double keep_fraction = kTiesKeepFraction;
    double alpha = kWiseFtAlpha;
    std::string mask = "none";
    std::string score = "salience";
    std::string preprocess = "none";
    double drop_rate = 0.9;
    std::uint64_t seed = 0;
    std::string output_path;
    std::string report_path;
    std::string task_id;

    // prop1
    std::size_t tasks = 8;
    std::size_t dim = 64;
    std::size_t support = 8;
    double signal = 1.0;
    double noise = 0.01;
    std::size_t trials = 1;

    // hscore
    double id_avg = 0.0;
    double ood_avg = 0.0;
};

// Fills options the user did not pass on the command line from a JSON config.
void apply_config(CLI::App& sub, RunConfig& cfg) {
    if (cfg.config_path.empty()) {
        return;
    }
    const json j = read_json_file(cfg.config_path);
    if (!j.is_object()) {
        throw InvalidArgument("config file must hold a JSON object");
    }
    using Setter = std::function<void(const json&)>;
    const std::map<std::string, std::pair<std::string, Setter>> keys = {
        {"base", {"--base", [&](const json& v) { cfg.base_path = v.get<std::string>(); }}},
        {"finetuned", {"--finetuned", [&](const json& v) { cfg.finetuned_paths = v.get<std::vector<std::string>>(); }}},
        {"taskvec", {"--taskvec", [&](const json& v) { cfg.taskvec_paths = v.get<std::vector<std::string>>(); }}},
        {"beta", {"--beta", [&](const json& v) { cfg.beta_paths = v.get<std::vector<std::string>>(); }}},
        {"method", {"--method", [&](const json& v) { cfg.method = v.get<std::string>(); }}},
        {"eta", {"--eta", [&](const json& v) { cfg.eta = v.get<double>(); }}},
        {"lambda", {"--lambda", [&](const json& v) { cfg.lambda = v.is_string() ? v.get<std::string>() : v.dump(); }}},
        {"lambda_table", {"--lambda-table", [&](const json& v) { cfg.lambda_table_path = v.get<std::string>(); }}},
        {"keep_fraction", {"--keep-fraction", [&](const json& v) { cfg.keep_fraction = v.get<double>(); }}},
        {"alpha", {"--alpha", [&](const json& v) { cfg.alpha = v.get<double>(); }}},
        {"mask", {"--mask", [&](const json& v) { cfg.mask = v.get<std::string>(); }}},
        {"score", {"--score", [&](const json& v) { cfg.score = v.get<std::string>(); }}},
        {"preprocess", {"--preprocess", [&](const json& v) { cfg.preprocess = v.get<std::string>(); }}},
        {"drop_rate", {"--drop-rate", [&](const json& v) { cfg.drop_rate = v.get<double>(); }}},
        {"seed", {"--seed", [&](const json& v) { cfg.seed = v.get<std::uint64_t>(); }}},
        {"out", {"--out", [&](const json& v) { cfg.output_path = v.get<std::string>(); }}},
        {"report", {"--report", [&](const json& v) { cfg.report_path = v.get<std::string>(); }}},
        {"id", {"--id", [&](const json& v) { cfg.task_id = v.get<std::string>(); }}},
        {"tasks", {"--tasks", [&](const json& v) { cfg.tasks = v.get<std::size_t>(); }}},
        {"dim", {"--dim", [&](const json& v) { cfg.dim = v.get<std::size_t>(); }}},
        {"support", {"--support", [&](const json& v) { cfg.support = v.get<std::size_t>(); }}},
        {"signal", {"--signal", [&](const json& v) { cfg.signal = v.get<double>(); }}},
        {"noise", {"--noise", [&](const json& v) { cfg.noise = v.get<double>(); }}},
        {"trials", {"--trials", [&](const json& v) { cfg.trials = v.get<std::size_t>(); }}},
    };
    for (const auto& [key, value] : j.items()) {
        auto it = keys.find(key);
        if (it == keys.end()) {
            throw InvalidArgument("unknown config key \"" + key + "\"");
        }
        const CLI::Option* opt = nullptr;
        try {
            opt = sub.get_option(it->second.first);
        } catch (const CLI::OptionNotFound&) {
            throw InvalidArgument("config key \"" + key + "\" does not apply to '" + sub.get_name() + "'");
        }
        if (opt->count() > 0) {
            continue;
        }
        try {
            it->second.second(value);
        } catch (const json::exception& e) {
            throw InvalidArgument("config key \"" + key + "\" has the wrong type: " + e.what());
        }
    }
}

std::vector<double> parse_lambda_list(const std::string& text) {
    std::vector<double> out;
    std::string cleaned = text;
    for (char& c : cleaned) {
        if (c == '[' || c == ']') {
            c = ' ';
        }
    }
    std::stringstream ss(cleaned);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (item.find_first_not_of(" \t", used) != std::string::npos) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw InvalidArgument("cannot parse lambda value \"" + item + "\"");
        }
    }
    if (out.empty()) {
        throw InvalidArgument("empty --lambda");
    }
    return out;
}

std::vector<TaskVector> load_inputs(const RunConfig& cfg, const std::optional<Checkpoint>& base) {
    std::vector<TaskVector> tvs;
    if (!cfg.taskvec_paths.empty()) {
        for (const auto& p : cfg.taskvec_paths) {
            tvs.push_back(load_task_vector(p));
            if (base) {
                check_provenance(tvs.back(), *base);
            }
        }
        return tvs;
    }
    if (!base || cfg.finetuned_paths.empty()) {
        throw InvalidArgument("provide --taskvec files, or --base with one or more --finetuned");
    }
    for (const auto& p : cfg.finetuned_paths) {
        tvs.push_back(diff(load_checkpoint(p), *base, fs::path(p).stem().string()));
    }
    return tvs;
}

std::optional<Checkpoint> load_base(const RunConfig& cfg) {
    if (cfg.base_path.empty()) {
        return std::nullopt;
    }
    return load_checkpoint(cfg.base_path);
}

SaliencyMatrix score_of(const RunConfig& cfg, std::span<const TaskVector> tvs) {
    if (cfg.score == "salience") {
        return compute_saliency(tvs);
    }
    if (cfg.score == "absolute") {
        return compute_absolute_score(tvs);
    }
    throw InvalidArgument("unknown --score \"" + cfg.score + "\" (expected salience or absolute)");
}

void emit_json(const json& j, const std::string& path, std::ostream& out) {
    if (path.empty()) {
        out << j.dump(2) << '\n';
    } else {
        write_json_file(j, path);
    }
}

void require_distinct_output(const RunConfig& cfg) {
    if (cfg.output_path.empty()) {
        return;
    }
    std::vector<std::string> inputs = cfg.finetuned_paths;
    inputs.insert(inputs.end(), cfg.taskvec_paths.begin(), cfg.taskvec_paths.end());
    inputs.insert(inputs.end(), cfg.beta_paths.begin(), cfg.beta_paths.end());
    if (!cfg.base_path.empty()) {
        inputs.push_back(cfg.base_path);
    }
    const fs::path out = fs::absolute(cfg.output_path).lexically_normal();
    for (const auto& in : inputs) {
        if (fs::absolute(in).lexically_normal() == out) {
            throw InvalidArgument("--out must differ from every input path (" + in + ")");
        }
    }
}

std::ostream* g_log = nullptr;

void log_line(const std::string& msg) {
    if (g_log) {
        *g_log << msg << '\n';
    }
}

// --- subcommands -------------------------------------------------------------

int cmd_diff(const RunConfig& cfg) {
    if (cfg.base_path.empty() || cfg.finetuned_paths.size() != 1 || cfg.output_path.empty()) {
        throw InvalidArgument("diff needs --base, exactly one --finetuned and --out");
    }
    require_distinct_output(cfg);
    const Checkpoint base = load_checkpoint(cfg.base_path);
    const Checkpoint ft = load_checkpoint(cfg.finetuned_paths.front());
    const std::string id = cfg.task_id.empty() ? fs::path(cfg.finetuned_paths.front()).stem().string() : cfg.task_id;
    const TaskVector tv = diff(ft, base, id);
    save_task_vector(tv, cfg.output_path);
    log_line("diff: wrote task vector \"" + id + "\" (" + std::to_string(tv.deltas.entries.size()) + " layers) to " +
             cfg.output_path);
    return kOk;
}

int cmd_saliency(const RunConfig& cfg, std::ostream& out) {
    const auto base = load_base(cfg);
    const auto tvs = load_inputs(cfg, base);
    const SaliencyMatrix s = score_of(cfg, tvs);
    emit_json(to_json(s), cfg.output_path.empty() ? cfg.report_path : cfg.output_path, out);
    log_line("saliency: scored " + std::to_string(s.tasks()) + " tasks x " + std::to_string(s.layers()) + " layers");
    return kOk;
}

json mask_report(const SaliencyMatrix& s, const LayerMaskSet& ms, const SharedMask& shared, const std::string& score) {
    return {{"eta", ms.eta},
            {"score", score},
            {"saliency", to_json(s)},
            {"task_masks", to_json(ms)},
            {"shared_mask", to_json(shared)}};
}

int cmd_mask(const RunConfig& cfg, std::ostream& out) {
    const auto base = load_base(cfg);
    const auto tvs = load_inputs(cfg, base);
    const SaliencyMatrix s = score_of(cfg, tvs);
    const LayerMaskSet ms = threshold_mask(s, cfg.eta);
    const SharedMask shared = or_masks(ms);
    emit_json(mask_report(s, ms, shared, cfg.score), cfg.output_path.empty() ? cfg.report_path : cfg.output_path, out);
    log_line("mask: eta=" + std::to_string(cfg.eta) + ", keeping " + std::to_string(shared.ones()) + " of " +
             std::to_string(shared.values.size()) + " layers");
    return kOk;
}

MergeMask build_mask(const RunConfig& cfg, std::span<const TaskVector> tvs, const LayerCatalog& cat) {
    const std::string& src = cfg.mask;
    if (src == "none") {
        return {};
    }
    if (src == "lwptv" || src == "lwptv-absolute") {
        const SaliencyMatrix s = src == "lwptv" ? compute_saliency(tvs) : compute_absolute_score(tvs);
        return or_masks(threshold_mask(s, cfg.eta));
    }
    if (src == "random") {
        return random_layer_mask(cat.names(), cfg.eta, cfg.seed);
    }
    if (src == "pwptv") {
        return parameter_saliency_mask(tvs, cfg.eta);
    }
    if (!fs::exists(src)) {
        throw InvalidArgument("--mask must be none, lwptv, lwptv-absolute, random, pwptv or an existing JSON file; got \"" +
                              src + "\"");
    }
    return shared_mask_from_json(read_json_file(src));
}

std::vector<TaskVector> preprocess(const RunConfig& cfg, std::vector<TaskVector> tvs) {
    if (cfg.preprocess == "none") {
        return tvs;
    }
    for (auto& tv : tvs) {
        if (cfg.preprocess == "dare") {
            tv = dare(tv, cfg.drop_rate, cfg.seed);
        } else if (cfg.preprocess == "mwp") {
            tv = mwp(tv, cfg.keep_fraction);
        } else {
            throw InvalidArgument("unknown --preprocess \"" + cfg.preprocess + "\" (expected none, dare or mwp)");
        }
    }
    return tvs;
}

json mask_summary(const MergeMask& mask, const LayerCatalog& cat) {
    json j;
    json pruned = json::object();
    if (const auto* m = std::get_if<SharedMask>(&mask)) {
        j["mask_ones"] = m->ones();
        for (std::size_t l = 0; l < cat.size(); ++l) {
            pruned[cat.layers[l].name] = m->values[l] == 0;
        }
    } else if (const auto* p = std::get_if<ParameterMask>(&mask)) {
        j["mask_ones"] = p->ones();
        for (std::size_t l = 0; l < cat.size(); ++l) {
            pruned[cat.layers[l].name] =
                std::none_of(p->values[l].begin(), p->values[l].end(), [](std::uint8_t v) { return v != 0; });
        }
    } else {
        j["mask_ones"] = cat.size();
        for (const auto& layer : cat.layers) {
            pruned[layer.name] = false;
        }
    }
    j["pruned"] = pruned;
    return j;
}

int cmd_merge(const RunConfig& cfg, std::ostream& out) {
    if (cfg.method.empty()) {
        throw InvalidArgument("merge needs --method");
    }
    MergeRecipe recipe;
    recipe.method = parse_method(cfg.method);
    recipe.eta = cfg.eta;
    recipe.mask_source = cfg.mask;
    recipe.keep_fraction = cfg.keep_fraction;
    recipe.alpha = cfg.alpha;
    recipe.seed = cfg.seed;
    recipe.preprocess = cfg.preprocess;
    recipe.drop_rate = cfg.drop_rate;
    if (cfg.output_path.empty()) {
        throw InvalidArgument("merge needs --out");
    }
    if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) {
        throw InvalidArgument("--eta must lie in [0, 1]");
    }
    require_distinct_output(cfg);

    Checkpoint merged;
    LayerCatalog cat;
    MergeMask mask;

    if (recipe.method == MergeMethod::WeightAverage || recipe.method == MergeMethod::WiseFt) {
        if (cfg.mask != "none" || cfg.preprocess != "none") {
            throw InvalidArgument(method_name(recipe.method) + " does not take --mask or --preprocess");
        }
        if (recipe.method == MergeMethod::WeightAverage) {
            if (cfg.finetuned_paths.empty()) {
                throw InvalidArgument("weight-average needs one or more --finetuned");
            }
            std::vector<Checkpoint> ckpts;
            for (const auto& p : cfg.finetuned_paths) {
                ckpts.push_back(load_checkpoint(p));
                recipe.task_ids.push_back(fs::path(p).stem().string());
            }
            merged = weight_average(ckpts);
        } else {
            if (cfg.base_path.empty() || cfg.finetuned_paths.size() != 1) {
                throw InvalidArgument("wise-ft needs --base and exactly one --finetuned");
            }
            const Checkpoint base = load_checkpoint(cfg.base_path);
            const Checkpoint ft = load_checkpoint(cfg.finetuned_paths.front());
            recipe.task_ids.push_back(fs::path(cfg.finetuned_paths.front()).stem().string());
            merged = wise_ft(base, ft, cfg.alpha);
        }
        cat = catalog_of(merged);
    } else {
        if (cfg.base_path.empty()) {
            throw InvalidArgument(method_name(recipe.method) + " needs --base");
        }
        const Checkpoint base = load_checkpoint(cfg.base_path);
        auto tvs = load_inputs(cfg, base);
        for (const auto& tv : tvs) {
            recipe.task_ids.push_back(tv.id);
        }
        cat = catalog_of(base);
        for (const auto& tv : tvs) {
            require_same_layout(cat, tv.deltas, "task vector \"" + tv.id + "\"");
        }
        mask = build_mask(cfg, tvs, cat);
        tvs = preprocess(cfg, std::move(tvs));

        switch (recipe.method) {
        case MergeMethod::TaskArithmetic: {
            const auto l = cfg.lambda.empty() ? std::vector<double>{kTaskArithmeticLambda} : parse_lambda_list(cfg.lambda);
            if (l.size() != 1) {
                throw InvalidArgument("task-arithmetic takes a single --lambda");
            }
            recipe.lambda = l.front();
            merged = task_arithmetic(base, tvs, l.front(), mask);
            break;
        }
        case MergeMethod::Ties: {
            const auto l = cfg.lambda.empty() ? std::vector<double>{kTiesLambda} : parse_lambda_list(cfg.lambda);
            if (l.size() != 1) {
                throw InvalidArgument("ties takes a single --lambda");
            }
            recipe.lambda = l.front();
            merged = ties_merge(base, tvs, cfg.keep_fraction, l.front(), mask);
            break;
        }
        case MergeMethod::AdaMergingApply: {
            LambdaTable table;
            if (!cfg.lambda_table_path.empty()) {
                table = lambda_table_from_json(read_json_file(cfg.lambda_table_path));
            } else if (!cfg.lambda.empty()) {
                auto l = parse_lambda_list(cfg.lambda);
                if (l.size() == 1) {
                    l.assign(tvs.size(), l.front());
                }
                table.task_ids = recipe.task_ids;
                for (double v : l) {
                    table.values.push_back({v});
                }
            } else {
                throw InvalidArgument("adamerging needs --lambda-table or --lambda");
            }
            // Layer-wise coefficients are damped by eta when a mask is active.
            const bool scale = table.layer_wise() && cfg.mask != "none";
            recipe.lambda_table = table;
            merged = adamerging_apply(base, tvs, table, scale ? cfg.eta : 1.0, mask);
            break;
        }
        case MergeMethod::PcbApply: {
            auto l = cfg.lambda.empty() ? std::vector<double>{kPcbLambda} : parse_lambda_list(cfg.lambda);
            if (l.size() == 1) {
                l.assign(tvs.size(), l.front());
            }
            if (cfg.beta_paths.size() != tvs.size()) {
                throw InvalidArgument("pcb needs one --beta file per task vector");
            }
            std::vector<Checkpoint> beta;
            for (const auto& p : cfg.beta_paths) {
                beta.push_back(load_checkpoint(p));
            }
            recipe.lambdas = l;
            merged = pcb_apply(base, tvs, beta, l, mask);
            break;
        }
        default:
            break;
        }
    }

    Metadata meta = merged.metadata.value_or(Metadata{});
    meta[kRecipeKey] = recipe.to_canonical_json();
    merged.metadata = std::move(meta);
    save_checkpoint(merged, cfg.output_path);

    json summary = json::parse(recipe.to_canonical_json());
    summary["layers"] = cat.size();
    summary.update(mask_summary(mask, cat));
    summary["output"] = cfg.output_path;
    if (!cfg.report_path.empty()) {
        write_json_file(summary, cfg.report_path);
    }
    log_line("merge: " + method_name(recipe.method) + " -> " + cfg.output_path + " (" +
             summary["mask_ones"].dump() + " of " + std::to_string(cat.size()) + " layers/elements kept)");
    (void)out;
    return kOk;
}

int cmd_prop1(const RunConfig& cfg, std::ostream& out) {
    SyntheticSpec spec{cfg.tasks, cfg.dim, cfg.support, cfg.signal, cfg.noise, cfg.seed};
    if (cfg.trials <= 1) {
        emit_json(to_json(prop1_experiment(spec)), cfg.output_path, out);
        return kOk;
    }
    std::size_t passed = 0;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        spec.seed = cfg.seed + t;
        passed += prop1_experiment(spec).passed ? 1 : 0;
    }
    json j = {{"K", cfg.tasks},
              {"sqrt_K", std::sqrt(static_cast<double>(cfg.tasks))},
              {"trials", cfg.trials},
              {"first_seed", cfg.seed},
              {"pass_count", passed},
              {"pass_rate", static_cast<double>(passed) / static_cast<double>(cfg.trials)}};
    emit_json(j, cfg.output_path, out);
    return kOk;
}

int cmd_hscore(const RunConfig& cfg, std::ostream& out) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", h_score(cfg.id_avg, cfg.ood_avg));
    out << buf << '\n';
    return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    CLI::App app{"Task-vector merging with layer-wise pruning", "taskmerge"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", cfg.config_path, "JSON config; command-line flags take precedence");
    };
    auto add_inputs = [&](CLI::App* sub) {
        sub->add_option("--base", cfg.base_path, "Pre-trained checkpoint (.safetensors)");
        sub->add_option("--finetuned", cfg.finetuned_paths, "Fine-tuned checkpoint; repeat in task order");
        sub->add_option("--taskvec", cfg.taskvec_paths, "Task vector file; repeat in task order");
        sub->add_option("--score", cfg.score, "Layer score: salience | absolute")->capture_default_str();
    };
    auto add_report = [&](CLI::App* sub) {
        sub->add_option("--out", cfg.output_path, "Output file (stdout when omitted)");
        sub->add_option("--report", cfg.report_path, "Report file");
    };

    auto* diff_cmd = app.add_subcommand("diff", "Compute a task vector: finetuned - base");
    add_common(diff_cmd);
    diff_cmd->add_option("--base", cfg.base_path, "Pre-trained checkpoint");
    diff_cmd->add_option("--finetuned", cfg.finetuned_paths, "Fine-tuned checkpoint");
    diff_cmd->add_option("--id", cfg.task_id, "Task id (default: fine-tuned filename stem)");
    diff_cmd->add_option("--out", cfg.output_path, "Task vector output file");

    auto* sal_cmd = app.add_subcommand("saliency", "Layer-wise saliency matrix as JSON");
    add_common(sal_cmd);
    add_inputs(sal_cmd);
    add_report(sal_cmd);

    auto* mask_cmd = app.add_subcommand("mask", "Saliency, per-task masks and shared OR mask as JSON");
    add_common(mask_cmd);
    add_inputs(mask_cmd);
    add_report(mask_cmd);
    mask_cmd->add_option("--eta", cfg.eta, "Pruning ratio")->capture_default_str();

    auto* merge_cmd = app.add_subcommand("merge", "Merge task vectors into the base checkpoint");
    add_common(merge_cmd);
    add_inputs(merge_cmd);
    merge_cmd->add_option("--method", cfg.method,
                          "weight-average | task-arithmetic | ties | adamerging | pcb | wise-ft");
    merge_cmd->add_option("--eta", cfg.eta, "Pruning ratio")->capture_default_str();
    merge_cmd->add_option("--lambda", cfg.lambda, "Merging coefficient, or comma-separated per-task list");
    merge_cmd->add_option("--lambda-table", cfg.lambda_table_path, "AdaMerging coefficient table (JSON)");
    merge_cmd->add_option("--keep-fraction", cfg.keep_fraction, "Ties/MWP kept fraction")->capture_default_str();
    merge_cmd->add_option("--beta", cfg.beta_paths, "PCB importance weights per task (.safetensors)");
    merge_cmd->add_option("--mask", cfg.mask, "none | lwptv | lwptv-absolute | random | pwptv | <mask.json>")
        ->capture_default_str();
    merge_cmd->add_option("--alpha", cfg.alpha, "WiSE-FT mixing coefficient")->capture_default_str();
    merge_cmd->add_option("--preprocess", cfg.preprocess, "none | dare | mwp")->capture_default_str();
    merge_cmd->add_option("--drop-rate", cfg.drop_rate, "DARE drop probability")->capture_default_str();
    merge_cmd->add_option("--seed", cfg.seed, "Seed for random masks and DARE")->capture_default_str();
    merge_cmd->add_option("--out", cfg.output_path, "Merged checkpoint output");
    merge_cmd->add_option("--report", cfg.report_path, "JSON summary output");

    auto* prop_cmd = app.add_subcommand("prop1", "Synthetic diversity separation experiment");
    add_common(prop_cmd);
    prop_cmd->add_option("--tasks", cfg.tasks, "K")->capture_default_str();
    prop_cmd->add_option("--dim", cfg.dim, "Neuron dimensionality")->capture_default_str();
    prop_cmd->add_option("--support", cfg.support, "Discriminative block size |S|")->capture_default_str();
    prop_cmd->add_option("--signal", cfg.signal, "Planted magnitude")->capture_default_str();
    prop_cmd->add_option("--noise", cfg.noise, "Noise standard deviation")->capture_default_str();
    prop_cmd->add_option("--seed", cfg.seed, "Seed (first seed when --trials > 1)")->capture_default_str();
    prop_cmd->add_option("--trials", cfg.trials, "Number of consecutive seeds")->capture_default_str();
    prop_cmd->add_option("--out", cfg.output_path, "Report file (stdout when omitted)");

    auto* h_cmd = app.add_subcommand("hscore", "Harmonic mean of ID and OOD averages");
    h_cmd->add_option("id", cfg.id_avg, "Average in-domain score")->required();
    h_cmd->add_option("ood", cfg.ood_avg, "Average out-of-domain score")->required();

    std::ostream* previous_log = g_log;
    g_log = &err;
    struct Restore {
        std::ostream*& slot;
        std::ostream* value;
        ~Restore() { slot = value; }
    } restore{g_log, previous_log};

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kInvalidArguments;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        apply_config(*sub, cfg);
        if (sub == diff_cmd) return cmd_diff(cfg);
        if (sub == sal_cmd) return cmd_saliency(cfg, out);
        if (sub == mask_cmd) return cmd_mask(cfg, out);
        if (sub == merge_cmd) return cmd_merge(cfg, out);
        if (sub == prop_cmd) return cmd_prop1(cfg, out);
        if (sub == h_cmd) return cmd_hscore(cfg, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const IncompatibleError& e) {
        err << "error: " << e.what() << '\n';
        return kIncompatible;
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n\n" << sub->help();
        return kInvalidArguments;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}

} // namespace taskmerge::cli
