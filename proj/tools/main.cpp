// Command-line front end: training runs, file-level vector algebra, edits,
// and the named experiment suites. Every run writes its resolved
// configuration next to its outputs so results can be reproduced from the
// artifacts alone.
//
// Exit codes: 0 success, 2 configuration, 3 training, 4 compatibility,
// 5 experiment failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "taskvec/arith.hpp"
#include "taskvec/config.hpp"
#include "taskvec/errors.hpp"
#include "taskvec/eval.hpp"
#include "taskvec/experiments.hpp"
#include "taskvec/hash.hpp"
#include "taskvec/io.hpp"
#include "taskvec/io_container.hpp"
#include "taskvec/rng.hpp"
#include "taskvec/synth.hpp"
#include "taskvec/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace taskvec;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("missing config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid json in " + path + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    if (!out) throw ConfigError("cannot write " + path.string());
}

void write_json_file(const fs::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

std::uint64_t seed_for(std::uint64_t seed, const std::string& tag) {
    return splitmix64(seed ^ fnv1a64(tag));
}

// Task entries are either a full spec object or the name of a built-in
// preset ("control", the bank ids, the grid-cell ids).
SyntheticTaskSpec resolve_task(const json& entry, std::uint64_t seed) {
    if (entry.is_string()) {
        const std::string name = entry.get<std::string>();
        if (name == "control") return control_spec(seed);
        for (const auto& s : bank_specs(seed))
            if (s.task_id == name) return s;
        for (const auto& s : grid_specs(seed))
            if (s.task_id == name) return s;
        throw ConfigError("unknown task preset '" + name + "'");
    }
    return task_spec_from_json(entry);
}

struct RawConfig {
    json root = json::object();
    std::string source; // empty when defaults are used

    bool has(const char* key) const { return root.contains(key); }
    const json& at(const char* key) const { return root.at(key); }
};

RawConfig load_config(const std::string& path) {
    RawConfig cfg;
    if (path.empty()) return cfg;
    cfg.root = read_json_file(path);
    cfg.source = path;
    check_keys(cfg.root,
               {"arch", "train", "tasks", "grid", "experiment", "output_dir"},
               "config");
    return cfg;
}

fs::path pick_output_dir(const std::string& flag, const RawConfig& cfg) {
    if (!flag.empty()) return flag;
    if (cfg.has("output_dir")) {
        if (!cfg.at("output_dir").is_string())
            throw ConfigError("output_dir must be a string");
        return cfg.at("output_dir").get<std::string>();
    }
    throw ConfigError("no output directory: pass --out or set output_dir");
}

int env_thread_cap() {
    const char* raw = std::getenv("TASKVEC_THREADS");
    if (!raw || !*raw) return 0;
    char* end = nullptr;
    const long v = std::strtol(raw, &end, 10);
    if (!end || *end != '\0' || v < 1 || v > 64)
        throw ConfigError("TASKVEC_THREADS must be an integer in 1..64");
    return static_cast<int>(v);
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string out;
    std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& args) {
    const RawConfig cfg = load_config(args.config);

    MlpSpec arch;
    if (cfg.has("arch")) arch = mlp_spec_from_json(cfg.at("arch"));
    arch.validate();

    TrainConfig train;
    if (cfg.has("train")) train = train_config_from_json(cfg.at("train"));
    if (args.seed >= 0) train.seed = static_cast<std::uint64_t>(args.seed);
    train.validate();

    if (!cfg.has("tasks") || !cfg.at("tasks").is_array() ||
        cfg.at("tasks").size() != 1)
        throw ConfigError("train needs a tasks list with exactly one entry");
    const SyntheticTaskSpec task_spec =
        resolve_task(cfg.at("tasks").at(0), train.seed);
    task_spec.validate();
    if (task_spec.dim != arch.input_dim)
        throw ConfigError("task dim does not match the architecture input");

    const fs::path out_dir = pick_output_dir(args.out, cfg);
    fs::create_directories(out_dir);

    const Dataset data = make_task(task_spec);
    const Checkpoint start =
        init_model(arch, seed_for(train.seed, "train:init"));
    const FineTuneResult res = fine_tune(start, arch, data, train);

    json manifest;
    manifest["final"] = {{"path", "final.tvkp"},
                         {"step", res.final.meta.step},
                         {"hash", content_hash(res.final.weights)}};
    save_checkpoint(res.final, out_dir / "final.tvkp");
    manifest["snapshots"] = json::array();
    for (const auto& snap : res.snapshots) {
        char name[32];
        std::snprintf(name, sizeof(name), "snap-%06lld.tvkp",
                      static_cast<long long>(snap.step));
        save_checkpoint(snap.ckpt, out_dir / name);
        manifest["snapshots"].push_back(
            {{"path", name},
             {"step", snap.step},
             {"hash", content_hash(snap.ckpt.weights)}});
    }
    manifest["loss"] = {{"first", res.loss_history.front()},
                        {"last", res.loss_history.back()},
                        {"count", res.loss_history.size()}};
    write_json_file(out_dir / "manifest.json", manifest);

    json resolved;
    resolved["arch"] = to_json(arch);
    resolved["train"] = to_json(train);
    resolved["tasks"] = json::array({to_json(task_spec)});
    resolved["output_dir"] = out_dir.string();
    write_json_file(out_dir / "config.resolved.json", resolved);

    std::cout << "trained " << task_spec.task_id << " for " << train.steps
              << " steps; wrote " << (out_dir / "final.tvkp").string()
              << " hash=" << content_hash(res.final.weights) << "\n";
    return 0;
}

// ---- vector --------------------------------------------------------------

struct VectorArgs {
    std::string sub;
    std::vector<std::string> inputs;
    std::string out;
    std::string task_id;
    std::int64_t seed = 0;
};

int cmd_vector(const VectorArgs& args) {
    TaskVector result;
    if (args.sub == "diff") {
        const Checkpoint ft = load_checkpoint(args.inputs.at(0));
        const Checkpoint pre = load_checkpoint(args.inputs.at(1));
        result = diff(ft, pre, args.task_id);
    } else if (args.sub == "negate") {
        result = negate(load_task_vector(args.inputs.at(0)));
    } else if (args.sub == "add") {
        if (args.inputs.empty())
            throw ConfigError("add needs at least one vector file");
        std::vector<TaskVector> vs;
        vs.reserve(args.inputs.size());
        for (const auto& p : args.inputs) vs.push_back(load_task_vector(p));
        result = sum(vs);
    } else if (args.sub == "analogy") {
        const TaskVector a = load_task_vector(args.inputs.at(0));
        const TaskVector b = load_task_vector(args.inputs.at(1));
        const TaskVector c = load_task_vector(args.inputs.at(2));
        result = analogy(a, b, c);
    } else if (args.sub == "random") {
        result = random_matched(load_task_vector(args.inputs.at(0)),
                                static_cast<std::uint64_t>(args.seed));
    } else {
        throw ConfigError("unknown vector subcommand '" + args.sub + "'");
    }
    save_task_vector(result, args.out);
    std::cout << "wrote " << args.out << " kind="
              << to_string(result.provenance.kind)
              << " task=" << result.provenance.task_id
              << " norm=" << l2_norm(result.delta) << "\n";
    return 0;
}

// ---- apply ---------------------------------------------------------------

ArithExpr parse_expr(const json& j, const fs::path& base_dir) {
    if (!j.is_object() || j.size() != 1)
        throw ConfigError(
            "expression node must be an object with exactly one key");
    const auto& [key, value] = *j.items().begin();
    if (key == "leaf") {
        if (!value.is_string())
            throw ConfigError("leaf expects a file path string");
        fs::path p = value.get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        return ArithExpr::leaf(load_task_vector(p));
    }
    if (key == "neg") return ArithExpr::neg(parse_expr(value, base_dir));
    if (key == "sum") {
        if (!value.is_array() || value.empty())
            throw ConfigError("sum expects a non-empty array");
        std::vector<ArithExpr> terms;
        for (const auto& t : value) terms.push_back(parse_expr(t, base_dir));
        return ArithExpr::sum(std::move(terms));
    }
    if (key == "scaled") {
        if (!value.is_array() || value.size() != 2 ||
            !value.at(0).is_number())
            throw ConfigError("scaled expects [coefficient, expression]");
        return ArithExpr::scaled(value.at(0).get<double>(),
                                 parse_expr(value.at(1), base_dir));
    }
    throw ConfigError("unknown expression node key '" + key + "'");
}

struct ApplyArgs {
    std::string base;
    std::string vec;
    std::string expr;
    std::vector<double> lambdas;
    std::string out;
};

int cmd_apply(const ApplyArgs& args) {
    if (args.vec.empty() == args.expr.empty())
        throw ConfigError("apply needs exactly one of VECTOR or --expr");
    if (args.lambdas.size() > 1)
        throw ConfigError("apply takes a single --lambda");
    const double lambda = args.lambdas.empty() ? 1.0 : args.lambdas.front();

    const Checkpoint base = load_checkpoint(args.base);
    Checkpoint edited;
    if (!args.vec.empty()) {
        edited = apply(base, load_task_vector(args.vec), lambda);
    } else {
        const json ej = read_json_file(args.expr);
        const fs::path dir = fs::path(args.expr).parent_path();
        edited = apply(base, parse_expr(ej, dir), lambda);
    }
    save_checkpoint(edited, args.out);
    std::cout << "wrote " << args.out << " model_id=" << edited.meta.model_id
              << " step=" << edited.meta.step
              << " note=" << edited.meta.note
              << " hash=" << content_hash(edited.weights) << "\n";
    return 0;
}

// ---- experiment ----------------------------------------------------------

const std::vector<std::string> kExperimentNames = {
    "forget", "add",  "analogy",    "domain",
    "cosim",  "lr-seed", "trajectory", "ensemble"};

struct ExperimentArgs {
    std::string name;
    std::string config;
    std::string out;
    std::int64_t seed = -1;
    std::string grid;
};

struct ExperimentSetup {
    LabConfig lab;
    CoeffGrid grid = CoeffGrid::fine();
    bool grid_given = false;
    json params = json::object();
};

ExperimentSetup build_setup(const ExperimentArgs& args, const RawConfig& cfg) {
    ExperimentSetup s;
    s.lab = default_lab();
    if (cfg.has("arch")) s.lab.arch = mlp_spec_from_json(cfg.at("arch"));

    if (cfg.has("experiment")) {
        s.params = cfg.at("experiment");
        if (!s.params.is_object())
            throw ConfigError("experiment section must be a json object");
    }
    if (s.params.contains("name")) {
        const std::string n = s.params.at("name").get<std::string>();
        if (n != args.name)
            throw ConfigError("config experiment name '" + n +
                              "' does not match command line '" + args.name +
                              "'");
        s.params.erase("name");
    }
    if (s.params.contains("pretrain")) {
        s.lab.pretrain = train_config_from_json(s.params.at("pretrain"));
        s.params.erase("pretrain");
    }
    if (s.params.contains("finetune")) {
        s.lab.finetune = train_config_from_json(s.params.at("finetune"));
        s.params.erase("finetune");
    }
    if (s.params.contains("threads")) {
        s.lab.threads = s.params.at("threads").get<int>();
        s.params.erase("threads");
    }
    if (args.seed >= 0) s.lab.seed = static_cast<std::uint64_t>(args.seed);

    const int cap = env_thread_cap();
    if (cap > 0 && s.lab.threads > cap) s.lab.threads = cap;
    s.lab.validate();

    if (!args.grid.empty()) {
        s.grid = coeff_grid_from_string(args.grid);
        s.grid_given = true;
    } else if (cfg.has("grid")) {
        s.grid = coeff_grid_from_json(cfg.at("grid"));
        s.grid_given = true;
    }
    return s;
}

template <typename T>
T param_or(const json& params, const char* key, T fallback) {
    if (!params.contains(key)) return fallback;
    return params.at(key).get<T>();
}

int cmd_experiment(const ExperimentArgs& args) {
    bool known = false;
    for (const auto& n : kExperimentNames) known = known || n == args.name;
    if (!known) {
        std::string names;
        for (const auto& n : kExperimentNames) {
            if (!names.empty()) names += ", ";
            names += n;
        }
        throw ConfigError("unknown experiment '" + args.name +
                          "'; valid names: " + names);
    }

    const RawConfig cfg = load_config(args.config);
    ExperimentSetup s = build_setup(args, cfg);
    const fs::path out_dir = pick_output_dir(args.out, cfg);
    fs::create_directories(out_dir);

    EvalReport rep;
    json resolved_opts = json::object();
    if (args.name == "forget") {
        check_keys(s.params, {"num_targets", "retain"}, "experiment");
        ForgettingOptions opt;
        opt.num_targets = param_or(s.params, "num_targets", opt.num_targets);
        opt.retain = param_or(s.params, "retain", opt.retain);
        if (s.grid_given) opt.grid = s.grid;
        rep = run_forgetting(s.lab, opt);
        resolved_opts = {{"num_targets", opt.num_targets},
                         {"retain", opt.retain},
                         {"grid", to_json(opt.grid)}};
    } else if (args.name == "add") {
        check_keys(s.params, {"num_tasks", "mode", "joint_baseline"},
                   "experiment");
        AdditionOptions opt;
        opt.num_tasks = param_or(s.params, "num_tasks", opt.num_tasks);
        const std::string mode = param_or<std::string>(
            s.params, "mode", "pairs");
        if (mode == "pairs")
            opt.mode = SubsetMode::pairs;
        else if (mode == "all_subsets")
            opt.mode = SubsetMode::all_subsets;
        else
            throw ConfigError(
                "experiment mode must be 'pairs' or 'all_subsets'");
        opt.joint_baseline =
            param_or(s.params, "joint_baseline", opt.joint_baseline);
        if (s.grid_given) opt.grid = s.grid;
        rep = run_addition(s.lab, opt);
        resolved_opts = {{"num_tasks", opt.num_tasks},
                         {"mode", mode},
                         {"joint_baseline", opt.joint_baseline},
                         {"grid", to_json(opt.grid)}};
    } else if (args.name == "analogy") {
        check_keys(s.params,
                   {"fewshot_budgets", "sweep_three_row", "fewshot",
                    "train_seeds", "heldout_cell"},
                   "experiment");
        AnalogyOptions opt = default_analogy_options();
        opt.fewshot_budgets = param_or(s.params, "fewshot_budgets",
                                       opt.fewshot_budgets);
        opt.sweep_three_row =
            param_or(s.params, "sweep_three_row", opt.sweep_three_row);
        if (s.params.contains("fewshot"))
            opt.fewshot = train_config_from_json(s.params.at("fewshot"));
        if (s.grid_given) opt.grid = s.grid;
        std::vector<std::uint64_t> train_seeds = param_or(
            s.params, "train_seeds", std::vector<std::uint64_t>{1, 2, 3});
        const int cell = param_or(s.params, "heldout_cell", -1);
        if (cell >= 0)
            rep = run_analogy_grid(s.lab, cell, opt, train_seeds.at(0));
        else
            rep = run_analogy_suite(s.lab, opt, train_seeds);
        resolved_opts = {{"fewshot_budgets", opt.fewshot_budgets},
                         {"sweep_three_row", opt.sweep_three_row},
                         {"fewshot", to_json(opt.fewshot)},
                         {"train_seeds", train_seeds},
                         {"heldout_cell", cell},
                         {"grid", to_json(opt.grid)}};
    } else if (args.name == "domain") {
        check_keys(s.params, {}, "experiment");
        DomainOptions opt;
        if (s.grid_given) {
            opt.sup_grid = s.grid;
            opt.unsup_grid = s.grid;
        }
        rep = run_domain_generalization(s.lab, opt);
        resolved_opts = {{"sup_grid", to_json(opt.sup_grid)},
                         {"unsup_grid", to_json(opt.unsup_grid)}};
    } else if (args.name == "cosim") {
        check_keys(s.params, {"num_tasks", "same_task_reps"}, "experiment");
        CosimOptions opt;
        opt.num_tasks = param_or(s.params, "num_tasks", opt.num_tasks);
        opt.same_task_reps =
            param_or(s.params, "same_task_reps", opt.same_task_reps);
        rep = run_cosine_structure(s.lab, opt);
        resolved_opts = {{"num_tasks", opt.num_tasks},
                         {"same_task_reps", opt.same_task_reps}};
    } else if (args.name == "trajectory") {
        check_keys(s.params, {"snapshot_every"}, "experiment");
        TrajectoryOptions opt;
        opt.snapshot_every =
            param_or(s.params, "snapshot_every", opt.snapshot_every);
        rep = run_trajectory(s.lab, opt);
        resolved_opts = {{"snapshot_every", opt.snapshot_every}};
    } else if (args.name == "ensemble") {
        check_keys(s.params, {"num_tasks"}, "experiment");
        EnsembleOptions opt;
        opt.num_tasks = param_or(s.params, "num_tasks", opt.num_tasks);
        rep = run_ensemble_study(s.lab, opt);
        resolved_opts = {{"num_tasks", opt.num_tasks}};
    } else { // lr-seed
        check_keys(s.params, {"lrs", "seeds"}, "experiment");
        LrSeedOptions opt;
        opt.lrs = param_or(s.params, "lrs", opt.lrs);
        opt.seeds = param_or(s.params, "seeds", opt.seeds);
        if (s.grid_given) opt.grid = s.grid;
        rep = run_lr_seed_study(s.lab, opt);
        resolved_opts = {{"lrs", opt.lrs},
                         {"seeds", opt.seeds},
                         {"grid", to_json(opt.grid)}};
    }

    rep.write_json(out_dir / "report.json");
    rep.write_csv(out_dir / "report.csv");
    rep.write_plot_csv(out_dir / "plot.csv");

    json resolved;
    resolved["experiment"] = resolved_opts;
    resolved["experiment"]["name"] = args.name;
    resolved["arch"] = to_json(s.lab.arch);
    resolved["pretrain"] = to_json(s.lab.pretrain);
    resolved["finetune"] = to_json(s.lab.finetune);
    resolved["seed"] = s.lab.seed;
    resolved["threads"] = s.lab.threads;
    resolved["output_dir"] = out_dir.string();
    write_json_file(out_dir / "config.resolved.json", resolved);

    std::cout << "experiment " << args.name << " wrote "
              << (out_dir / "report.json").string() << " (" << rep.rows.size()
              << " rows, digest " << rep.config_digest.substr(0, 12)
              << ")\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"edit neural models with task-vector arithmetic"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand(
        "train", "fine-tune a model on one synthetic task");
    train->add_option("--config", train_args.config, "run config json")
        ->required();
    train->add_option("--out", train_args.out, "output directory");
    train->add_option("--seed", train_args.seed, "override the train seed");

    VectorArgs vec_args;
    auto* vec = app.add_subcommand(
        "vector", "file-level task-vector algebra");
    vec->require_subcommand(1);
    struct VecSub {
        CLI::App* cmd;
        int arity; // -1 = at least one
    };
    std::vector<std::pair<std::string, VecSub>> vec_subs;
    auto add_vec_sub = [&](const std::string& name, const char* help,
                           int arity) {
        auto* c = vec->add_subcommand(name, help);
        c->add_option("inputs", vec_args.inputs, "input files")
            ->expected(arity == -1 ? -1 : arity)
            ->required();
        c->add_option("--out", vec_args.out, "output vector file")
            ->required();
        vec_subs.push_back({name, {c, arity}});
        return c;
    };
    auto* vdiff = add_vec_sub("diff", "FT PRE: fine-tuned minus pre-trained",
                              2);
    vdiff->add_option("--task-id", vec_args.task_id,
                      "task id stored in the vector");
    add_vec_sub("negate", "V: negated vector", 1);
    add_vec_sub("add", "V...: elementwise sum", -1);
    add_vec_sub("analogy", "A B C: c + (b - a)", 3);
    auto* vrand = add_vec_sub(
        "random", "REF: random direction with matched per-tensor norms", 1);
    vrand->add_option("--seed", vec_args.seed, "draw seed");

    ApplyArgs apply_args;
    auto* ap = app.add_subcommand(
        "apply", "base + lambda * vector, written as a checkpoint");
    ap->add_option("base", apply_args.base, "base checkpoint file")
        ->required();
    ap->add_option("vector", apply_args.vec, "task vector file");
    ap->add_option("--expr", apply_args.expr,
                   "expression json instead of a single vector");
    ap->add_option("--lambda", apply_args.lambdas,
                   "scaling coefficient (default 1)");
    ap->add_option("--out", apply_args.out, "output checkpoint file")
        ->required();

    ExperimentArgs exp_args;
    auto* ex = app.add_subcommand("experiment", "run a named study");
    ex->add_option("name", exp_args.name,
                   "forget|add|analogy|domain|cosim|trajectory|ensemble|"
                   "lr-seed")
        ->required();
    ex->add_option("--config", exp_args.config, "run config json");
    ex->add_option("--out", exp_args.out, "output directory");
    ex->add_option("--seed", exp_args.seed, "override the lab seed");
    ex->add_option("--grid", exp_args.grid,
                   "coefficient grid as \"lo:hi:step\"");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_args);
        if (vec->parsed()) {
            for (const auto& [name, sub] : vec_subs) {
                if (sub.cmd->parsed()) {
                    vec_args.sub = name;
                    return cmd_vector(vec_args);
                }
            }
        }
        if (ap->parsed()) return cmd_apply(apply_args);
        if (ex->parsed()) return cmd_experiment(exp_args);
        std::cerr << "no command selected\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const TrainError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 3;
    } catch (const CompatError& e) {
        std::cerr << "compatibility error: " << e.what() << "\n";
        return 4;
    } catch (const ExperimentError& e) {
        std::cerr << "experiment error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
