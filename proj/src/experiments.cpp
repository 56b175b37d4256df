#include "taskvec/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "taskvec/config.hpp"
#include "taskvec/hash.hpp"
#include "taskvec/rng.hpp"

namespace taskvec {

using nlohmann::json;

namespace {

std::uint64_t seed_for(std::uint64_t seed, const std::string& tag) {
    return splitmix64(seed ^ fnv1a64(tag));
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) throw ConfigError("mean over an empty collection");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// Run fn(0..n-1), fanning out over up to `threads` workers. Results must go
// into disjoint, preallocated slots; the first exception wins and the rest
// of the work is abandoned.
void parallel_for(int threads, std::int64_t n,
                  const std::function<void(std::int64_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            if (stop.load()) return;
            const std::int64_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                stop.store(true);
                return;
            }
        }
    };
    const int count =
        static_cast<int>(std::min<std::int64_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// threads is excluded on purpose: it changes scheduling, never results, so
// two runs of the same experiment at different fan-out share a digest.
json lab_json(const LabConfig& lab) {
    json j;
    j["arch"] = to_json(lab.arch);
    j["pretrain"] = to_json(lab.pretrain);
    j["finetune"] = to_json(lab.finetune);
    j["seed"] = lab.seed;
    return j;
}

std::string digest_for(const std::string& experiment, const LabConfig& lab,
                       const json& options) {
    json root;
    root["experiment"] = experiment;
    root["lab"] = lab_json(lab);
    root["options"] = options;
    return sha256_hex(root.dump());
}

struct BaseModel {
    Dataset control;
    Checkpoint ckpt;
    double control_val = 0.0;
    double control_test = 0.0;
};

BaseModel pretrain_base(const LabConfig& lab,
                        const std::vector<const Dataset*>& extra) {
    BaseModel out;
    out.control = make_control(lab.seed);
    const Checkpoint start = init_model(lab.arch, seed_for(lab.seed, "lab:init"));
    TrainConfig cfg = lab.pretrain;
    cfg.seed = seed_for(lab.seed, "lab:pretrain");
    if (extra.empty()) {
        out.ckpt = fine_tune(start, lab.arch, out.control, cfg).final;
        out.ckpt.meta.note = "pretrain(control)";
    } else {
        std::vector<const Dataset*> parts;
        parts.push_back(&out.control);
        parts.insert(parts.end(), extra.begin(), extra.end());
        const Dataset mix = concat_datasets(parts, "mixture");
        out.ckpt = fine_tune(start, lab.arch, mix, cfg).final;
        out.ckpt.meta.note = "pretrain(mixture)";
    }
    out.ckpt.meta.model_id = "base";
    out.control_val = accuracy(out.ckpt, lab.arch, out.control, Split::val);
    out.control_test = accuracy(out.ckpt, lab.arch, out.control, Split::test);
    return out;
}

// First `per_class` train rows of every class; val and test kept whole.
Dataset subsample_train(const Dataset& ds, int per_class) {
    if (per_class < 1) throw ConfigError("few-shot budget must be positive");
    Dataset out;
    out.spec = ds.spec;
    const std::int64_t d = ds.dim();
    std::map<std::int32_t, int> taken;
    std::int64_t kept_train = 0;
    for (std::int64_t r = 0; r < ds.rows(); ++r) {
        if (ds.split[r] == Split::train) {
            int& c = taken[ds.labels[r]];
            if (c >= per_class) continue;
            ++c;
            ++kept_train;
        }
        out.labels.push_back(ds.labels[r]);
        out.split.push_back(ds.split[r]);
        const float* row = ds.inputs.data() + r * d;
        out.inputs.insert(out.inputs.end(), row, row + d);
    }
    if (kept_train == 0)
        throw ConfigError("few-shot subsample found no train rows");
    out.spec.sizes.train = kept_train;
    return out;
}

std::string join_ids(const std::vector<Dataset>& tasks,
                     const std::vector<int>& members) {
    std::string s;
    for (std::size_t k = 0; k < members.size(); ++k) {
        if (k) s += '+';
        s += tasks[static_cast<std::size_t>(members[k])].spec.task_id;
    }
    return s;
}

int popcount32(std::uint32_t v) {
    int c = 0;
    while (v) {
        c += static_cast<int>(v & 1u);
        v >>= 1;
    }
    return c;
}

} // namespace

// ---- LabConfig ------------------------------------------------------------

void LabConfig::validate() const {
    arch.validate();
    pretrain.validate();
    finetune.validate();
    if (threads < 1 || threads > 64)
        throw ConfigError("threads must be between 1 and 64");
}

LabConfig default_lab() {
    LabConfig lab;
    lab.pretrain.steps = 1200;
    lab.pretrain.batch_size = 32;
    lab.pretrain.peak_lr = 5e-3;
    lab.pretrain.warmup_steps = 100;
    lab.pretrain.weight_decay = 1e-4;
    lab.finetune.steps = 400;
    lab.finetune.batch_size = 32;
    lab.finetune.peak_lr = 2e-3;
    lab.finetune.warmup_steps = 40;
    lab.finetune.weight_decay = 1e-4;
    lab.finetune.freeze = {"head.cls.bias", "head.cls.weight"};
    return lab;
}

// ---- TaskBank -------------------------------------------------------------

TaskBank build_bank(const LabConfig& lab, int num_tasks, bool broad_pretrain) {
    lab.validate();
    if (num_tasks < 1 || num_tasks > 8)
        throw ConfigError("bank size must be between 1 and 8");

    TaskBank bank;
    bank.arch = lab.arch;
    auto specs = bank_specs(lab.seed);
    specs.resize(static_cast<std::size_t>(num_tasks));
    bank.tasks.reserve(specs.size());
    for (const auto& s : specs) bank.tasks.push_back(make_task(s));

    std::vector<const Dataset*> extra;
    if (broad_pretrain)
        for (const auto& t : bank.tasks) extra.push_back(&t);
    BaseModel base = pretrain_base(lab, extra);
    bank.control = std::move(base.control);
    bank.base = std::move(base.ckpt);
    bank.base_control_val = base.control_val;
    bank.base_control_test = base.control_test;

    const auto n = static_cast<std::size_t>(num_tasks);
    bank.finetuned.resize(n);
    bank.vectors.resize(n);
    bank.ft_val_acc.resize(n);
    bank.ft_test_acc.resize(n);
    parallel_for(lab.threads, num_tasks, [&](std::int64_t ti) {
        const auto t = static_cast<std::size_t>(ti);
        const std::string& id = bank.tasks[t].spec.task_id;
        TrainConfig cfg = lab.finetune;
        cfg.seed = seed_for(lab.seed, "lab:finetune:" + id);
        Checkpoint ft = fine_tune(bank.base, lab.arch, bank.tasks[t], cfg).final;
        ft.meta.model_id = "ft-" + id;
        bank.vectors[t] = diff(ft, bank.base, id);
        bank.ft_val_acc[t] = accuracy(ft, lab.arch, bank.tasks[t], Split::val);
        bank.ft_test_acc[t] = accuracy(ft, lab.arch, bank.tasks[t], Split::test);
        bank.finetuned[t] = std::move(ft);
    });
    return bank;
}

// ---- EvalReport -----------------------------------------------------------

const ReportRow& EvalReport::row(const std::string& desc) const {
    for (const auto& r : rows)
        if (r.desc == desc) return r;
    throw ConfigError("report has no row '" + desc + "'");
}

bool EvalReport::has_row(const std::string& desc) const {
    for (const auto& r : rows)
        if (r.desc == desc) return true;
    return false;
}

std::string EvalReport::to_json_string() const {
    json j;
    j["experiment_id"] = experiment_id;
    j["config_digest"] = config_digest;
    j["seeds"] = seeds;
    j["notes"] = notes;
    j["rows"] = json::array();
    for (const auto& r : rows) {
        json jr;
        jr["desc"] = r.desc;
        jr["per_task_acc"] = r.per_task_acc;
        jr["normalized_acc"] = r.normalized_acc;
        jr["coeffs"] = r.coeffs;
        jr["baselines"] = r.baselines;
        jr["warning"] = r.warning;
        j["rows"].push_back(std::move(jr));
    }
    j["plot"] = json::array();
    for (const auto& p : plot) {
        json jp;
        jp["series"] = p.series;
        jp["x"] = p.x;
        jp["y"] = p.y;
        j["plot"].push_back(std::move(jp));
    }
    return j.dump(2) + "\n";
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    return out;
}

} // namespace

void EvalReport::write_json(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << to_json_string();
    if (!out) throw ConfigError("cannot write " + path.string());
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << "row,desc,field,key,value\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const ReportRow& r = rows[i];
        for (const auto& [k, v] : r.per_task_acc)
            out << i << ',' << r.desc << ",per_task_acc," << k << ','
                << fmt(v) << '\n';
        for (const auto& [k, v] : r.normalized_acc)
            out << i << ',' << r.desc << ",normalized_acc," << k << ','
                << fmt(v) << '\n';
        for (std::size_t c = 0; c < r.coeffs.size(); ++c)
            out << i << ',' << r.desc << ",coeff," << c << ','
                << fmt(r.coeffs[c]) << '\n';
        for (const auto& [k, v] : r.baselines)
            out << i << ',' << r.desc << ",baseline," << k << ',' << fmt(v)
                << '\n';
        out << i << ',' << r.desc << ",warning,," << (r.warning ? 1 : 0)
            << '\n';
    }
    if (!out) throw ConfigError("cannot write " + path.string());
}

void EvalReport::write_plot_csv(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << "series,x,y\n";
    for (const auto& p : plot)
        out << p.series << ',' << fmt(p.x) << ',' << fmt(p.y) << '\n';
    if (!out) throw ConfigError("cannot write " + path.string());
}

// ---- forgetting -----------------------------------------------------------

EvalReport run_forgetting(const LabConfig& lab, const ForgettingOptions& opt) {
    lab.validate();
    opt.grid.validate();
    if (opt.num_targets < 1 || opt.num_targets > 8)
        throw ConfigError("forgetting needs between 1 and 8 target tasks");
    if (!(opt.retain > 0.0 && opt.retain <= 1.0))
        throw ConfigError("retain fraction must be in (0, 1]");

    TaskBank bank = build_bank(lab, opt.num_targets, /*broad_pretrain=*/true);
    const int n = opt.num_targets;

    EvalReport rep;
    rep.experiment_id = "forgetting";
    {
        json oj;
        oj["num_targets"] = opt.num_targets;
        oj["grid"] = to_json(opt.grid);
        oj["retain"] = opt.retain;
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds = {lab.seed};
    rep.notes.push_back(
        "target metric per task: accuracy on that task's test split");
    rep.notes.push_back(
        "control metric: accuracy on the control task's validation split, "
        "selection threshold " + fmt(opt.retain) +
        " of the pre-trained value");

    auto control_val = [&](const Checkpoint& m) {
        return accuracy(m, bank.arch, bank.control, Split::val);
    };
    auto id_of = [&](int t) -> const std::string& {
        return bank.tasks[static_cast<std::size_t>(t)].spec.task_id;
    };

    {
        ReportRow pre;
        pre.desc = "pretrained";
        std::vector<double> accs;
        for (int t = 0; t < n; ++t) {
            const double a = accuracy(bank.base, bank.arch,
                                      bank.tasks[static_cast<std::size_t>(t)],
                                      Split::test);
            pre.per_task_acc[id_of(t)] = a;
            accs.push_back(a);
        }
        pre.baselines["mean_target_acc"] = mean_of(accs);
        pre.baselines["control_val_acc"] = bank.base_control_val;
        pre.baselines["control_test_acc"] = bank.base_control_test;
        rep.rows.push_back(std::move(pre));
    }

    {
        ReportRow ft;
        ft.desc = "finetuned";
        std::vector<double> accs;
        std::vector<double> ctrls;
        for (int t = 0; t < n; ++t) {
            const auto u = static_cast<std::size_t>(t);
            ft.per_task_acc[id_of(t)] = bank.ft_test_acc[u];
            ft.normalized_acc[id_of(t)] =
                normalized_accuracy(bank.ft_test_acc[u], bank.ft_test_acc[u]);
            accs.push_back(bank.ft_test_acc[u]);
            ctrls.push_back(control_val(bank.finetuned[u]));
        }
        ft.baselines["mean_target_acc"] = mean_of(accs);
        ft.baselines["control_val_acc"] = mean_of(ctrls);
        rep.rows.push_back(std::move(ft));
    }

    {
        ReportRow ga;
        ga.desc = "gradient_ascent";
        std::vector<double> acc_slot(static_cast<std::size_t>(n));
        std::vector<double> ctrl_slot(static_cast<std::size_t>(n));
        parallel_for(lab.threads, n, [&](std::int64_t ti) {
            const auto t = static_cast<std::size_t>(ti);
            TrainConfig cfg = lab.finetune;
            cfg.objective = Objective::negated_cross_entropy;
            cfg.seed = seed_for(lab.seed, "forget:ascent:" + id_of(static_cast<int>(t)));
            const Checkpoint m =
                fine_tune(bank.base, lab.arch, bank.tasks[t], cfg).final;
            acc_slot[t] = accuracy(m, bank.arch, bank.tasks[t], Split::test);
            ctrl_slot[t] = control_val(m);
        });
        std::vector<double> accs;
        std::vector<double> ctrls;
        for (int t = 0; t < n; ++t) {
            ga.per_task_acc[id_of(t)] = acc_slot[static_cast<std::size_t>(t)];
            accs.push_back(acc_slot[static_cast<std::size_t>(t)]);
            ctrls.push_back(ctrl_slot[static_cast<std::size_t>(t)]);
        }
        ga.baselines["mean_target_acc"] = mean_of(accs);
        ga.baselines["control_val_acc"] = mean_of(ctrls);
        rep.rows.push_back(std::move(ga));
    }

    // Negation sweeps come before the random row because the random vector
    // reuses each task's selected coefficient.
    std::vector<double> lambda_star(static_cast<std::size_t>(n), 0.0);
    std::vector<double> neg_acc(static_cast<std::size_t>(n), 0.0);
    std::vector<double> neg_ctrl(static_cast<std::size_t>(n), 0.0);
    std::vector<double> neg_ctrl_test(static_cast<std::size_t>(n), 0.0);
    std::vector<char> neg_warn(static_cast<std::size_t>(n), 0);
    std::vector<SweepResult> neg_sweeps(static_cast<std::size_t>(n));
    parallel_for(lab.threads, n, [&](std::int64_t ti) {
        const auto t = static_cast<std::size_t>(ti);
        const ArithExpr expr =
            ArithExpr::neg(ArithExpr::leaf(bank.vectors[t]));
        const Evaluator ev = [&, t](const Checkpoint& m) {
            EvalMetrics em;
            em.target = accuracy(m, bank.arch, bank.tasks[t], Split::val);
            em.control = control_val(m);
            return em;
        };
        SweepResult sr = sweep(bank.base, expr, opt.grid, ev);
        const Selection sel =
            select_negation(sr, bank.base_control_val, opt.retain);
        lambda_star[t] = sel.coeffs.at(0);
        neg_warn[t] = sel.warning ? 1 : 0;
        const Checkpoint edited =
            apply(bank.base, negate(bank.vectors[t]), lambda_star[t]);
        neg_acc[t] = accuracy(edited, bank.arch, bank.tasks[t], Split::test);
        neg_ctrl[t] = control_val(edited);
        neg_ctrl_test[t] =
            accuracy(edited, bank.arch, bank.control, Split::test);
        neg_sweeps[t] = std::move(sr);
    });

    {
        ReportRow rnd;
        rnd.desc = "random";
        std::vector<double> acc_slot(static_cast<std::size_t>(n));
        std::vector<double> ctrl_slot(static_cast<std::size_t>(n));
        std::vector<SweepResult> rnd_sweeps(static_cast<std::size_t>(n));
        parallel_for(lab.threads, n, [&](std::int64_t ti) {
            const auto t = static_cast<std::size_t>(ti);
            const TaskVector rv = random_matched(
                bank.vectors[t],
                seed_for(lab.seed, "forget:random:" + id_of(static_cast<int>(t))));
            const Checkpoint edited =
                apply(bank.base, negate(rv), lambda_star[t]);
            acc_slot[t] =
                accuracy(edited, bank.arch, bank.tasks[t], Split::test);
            ctrl_slot[t] = control_val(edited);
            const Evaluator ev = [&, t](const Checkpoint& m) {
                EvalMetrics em;
                em.target = accuracy(m, bank.arch, bank.tasks[t], Split::val);
                em.control = control_val(m);
                return em;
            };
            rnd_sweeps[t] = sweep(
                bank.base, ArithExpr::neg(ArithExpr::leaf(rv)), opt.grid, ev);
        });
        std::vector<double> accs;
        std::vector<double> ctrls;
        for (int t = 0; t < n; ++t) {
            const auto u = static_cast<std::size_t>(t);
            rnd.per_task_acc[id_of(t)] = acc_slot[u];
            rnd.baselines["lambda_" + id_of(t)] = lambda_star[u];
            accs.push_back(acc_slot[u]);
            ctrls.push_back(ctrl_slot[u]);
        }
        rnd.baselines["mean_target_acc"] = mean_of(accs);
        rnd.baselines["control_val_acc"] = mean_of(ctrls);
        rep.rows.push_back(std::move(rnd));
        for (int t = 0; t < n; ++t) {
            for (const auto& row :
                 rnd_sweeps[static_cast<std::size_t>(t)].rows) {
                rep.plot.push_back({"rand_target_val:" + id_of(t),
                                    row.coeffs.at(0), row.target_metric});
                rep.plot.push_back({"rand_control_val:" + id_of(t),
                                    row.coeffs.at(0), *row.control_metric});
            }
        }
    }

    {
        ReportRow neg;
        neg.desc = "negated";
        std::vector<double> accs;
        std::vector<double> ctrls;
        for (int t = 0; t < n; ++t) {
            const auto u = static_cast<std::size_t>(t);
            neg.per_task_acc[id_of(t)] = neg_acc[u];
            neg.baselines["lambda_" + id_of(t)] = lambda_star[u];
            neg.baselines["control_val_" + id_of(t)] = neg_ctrl[u];
            neg.baselines["control_test_" + id_of(t)] = neg_ctrl_test[u];
            neg.warning = neg.warning || neg_warn[u] != 0;
            accs.push_back(neg_acc[u]);
            ctrls.push_back(neg_ctrl[u]);
        }
        neg.coeffs = lambda_star;
        neg.baselines["mean_target_acc"] = mean_of(accs);
        neg.baselines["control_val_acc"] = mean_of(ctrls);
        neg.baselines["control_reference"] = bank.base_control_val;
        rep.rows.push_back(std::move(neg));
        for (int t = 0; t < n; ++t) {
            for (const auto& row :
                 neg_sweeps[static_cast<std::size_t>(t)].rows) {
                rep.plot.push_back({"neg_target_val:" + id_of(t),
                                    row.coeffs.at(0), row.target_metric});
                rep.plot.push_back({"neg_control_val:" + id_of(t),
                                    row.coeffs.at(0), *row.control_metric});
            }
        }
    }

    return rep;
}

// ---- addition -------------------------------------------------------------

EvalReport run_addition(const LabConfig& lab, const AdditionOptions& opt) {
    lab.validate();
    opt.grid.validate();
    if (opt.num_tasks < 2 || opt.num_tasks > 8)
        throw ConfigError("addition needs between 2 and 8 bank tasks");

    TaskBank bank = build_bank(lab, opt.num_tasks, /*broad_pretrain=*/false);
    const int n = opt.num_tasks;

    EvalReport rep;
    rep.experiment_id = "addition";
    {
        json oj;
        oj["num_tasks"] = opt.num_tasks;
        oj["mode"] = opt.mode == SubsetMode::pairs ? "pairs" : "all_subsets";
        oj["joint_baseline"] = opt.joint_baseline;
        oj["grid"] = to_json(opt.grid);
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds = {lab.seed};
    rep.notes.push_back(
        "subset selection metric: mean validation accuracy over the subset's "
        "tasks, one shared coefficient");
    rep.notes.push_back(
        "normalized accuracy divides by the task's own fine-tuned test "
        "accuracy");

    auto id_of = [&](int t) -> const std::string& {
        return bank.tasks[static_cast<std::size_t>(t)].spec.task_id;
    };

    {
        ReportRow pre;
        pre.desc = "pretrained";
        std::vector<double> accs;
        std::vector<double> norms;
        for (int t = 0; t < n; ++t) {
            const auto u = static_cast<std::size_t>(t);
            const double a =
                accuracy(bank.base, bank.arch, bank.tasks[u], Split::test);
            pre.per_task_acc[id_of(t)] = a;
            pre.normalized_acc[id_of(t)] =
                normalized_accuracy(a, bank.ft_test_acc[u]);
            accs.push_back(a);
            norms.push_back(pre.normalized_acc[id_of(t)]);
        }
        pre.baselines["mean_target_acc"] = mean_of(accs);
        pre.baselines["bank_mean_norm"] = mean_of(norms);
        pre.baselines["control_val_acc"] = bank.base_control_val;
        rep.rows.push_back(std::move(pre));
    }

    for (int t = 0; t < n; ++t) {
        const auto u = static_cast<std::size_t>(t);
        ReportRow r;
        r.desc = "finetuned:" + id_of(t);
        r.per_task_acc[id_of(t)] = bank.ft_test_acc[u];
        r.normalized_acc[id_of(t)] =
            normalized_accuracy(bank.ft_test_acc[u], bank.ft_test_acc[u]);
        r.baselines["val_acc"] = bank.ft_val_acc[u];
        rep.rows.push_back(std::move(r));
    }

    std::vector<std::uint32_t> masks;
    if (opt.mode == SubsetMode::pairs) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                masks.push_back((1u << i) | (1u << j));
    } else {
        for (std::uint32_t m = 1; m < (1u << n); ++m) masks.push_back(m);
        std::sort(masks.begin(), masks.end(),
                  [](std::uint32_t a, std::uint32_t b) {
                      const int pa = popcount32(a), pb = popcount32(b);
                      return pa != pb ? pa < pb : a < b;
                  });
    }

    std::vector<ArithExpr> leaves;
    leaves.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t)
        leaves.push_back(
            ArithExpr::leaf(bank.vectors[static_cast<std::size_t>(t)]));

    struct SubsetOut {
        std::vector<int> members;
        double lambda = 0.0;
        double best_val = 0.0;
        std::vector<double> test_acc;
        std::vector<double> sweep_val; // target metric per grid point
    };
    std::vector<SubsetOut> outs(masks.size());
    parallel_for(lab.threads, static_cast<std::int64_t>(masks.size()),
                 [&](std::int64_t mi) {
        const std::uint32_t mask = masks[static_cast<std::size_t>(mi)];
        SubsetOut& so = outs[static_cast<std::size_t>(mi)];
        std::vector<ArithExpr> terms;
        for (int t = 0; t < n; ++t)
            if (mask & (1u << t)) {
                so.members.push_back(t);
                terms.push_back(leaves[static_cast<std::size_t>(t)]);
            }
        const ArithExpr expr = ArithExpr::sum(std::move(terms));
        const Evaluator ev = [&, members = so.members](const Checkpoint& m) {
            std::vector<double> vals;
            for (int t : members)
                vals.push_back(accuracy(
                    m, bank.arch, bank.tasks[static_cast<std::size_t>(t)],
                    Split::val));
            EvalMetrics em;
            em.target = mean_of(vals);
            return em;
        };
        const SweepResult sr = sweep(bank.base, expr, opt.grid, ev);
        for (const auto& row : sr.rows) so.sweep_val.push_back(row.target_metric);
        const Selection sel = select_max(sr);
        so.lambda = sel.coeffs.at(0);
        so.best_val = sel.row->target_metric;
        const Checkpoint edited = apply(bank.base, expr, so.lambda);
        for (int t = 0; t < n; ++t)
            so.test_acc.push_back(accuracy(
                edited, bank.arch, bank.tasks[static_cast<std::size_t>(t)],
                Split::test));
    });

    std::vector<std::vector<double>> bucket_norms(
        static_cast<std::size_t>(n) + 1);
    std::vector<std::vector<double>> bucket_val_sum(
        static_cast<std::size_t>(n) + 1,
        std::vector<double>(opt.grid.size(), 0.0));
    std::vector<int> bucket_count(static_cast<std::size_t>(n) + 1, 0);

    for (std::size_t mi = 0; mi < masks.size(); ++mi) {
        const SubsetOut& so = outs[mi];
        const auto size = static_cast<std::size_t>(so.members.size());
        ReportRow r;
        r.desc = "subset:" + join_ids(bank.tasks, so.members);
        r.coeffs = {so.lambda};
        std::vector<double> subset_norms;
        std::vector<double> all_norms;
        for (int t = 0; t < n; ++t) {
            const auto u = static_cast<std::size_t>(t);
            r.per_task_acc[id_of(t)] = so.test_acc[u];
            const double norm =
                normalized_accuracy(so.test_acc[u], bank.ft_test_acc[u]);
            r.normalized_acc[id_of(t)] = norm;
            all_norms.push_back(norm);
            if (std::find(so.members.begin(), so.members.end(), t) !=
                so.members.end())
                subset_norms.push_back(norm);
        }
        r.baselines["size"] = static_cast<double>(size);
        r.baselines["subset_mean_norm"] = mean_of(subset_norms);
        r.baselines["bank_mean_norm"] = mean_of(all_norms);
        r.baselines["best_val"] = so.best_val;
        if (size == 1) {
            // A singleton applied at full strength reproduces its fine-tune.
            const int t = so.members.front();
            const auto u = static_cast<std::size_t>(t);
            const Checkpoint one = apply(bank.base, bank.vectors[u], 1.0);
            r.baselines["own_norm_at_lambda1"] = normalized_accuracy(
                accuracy(one, bank.arch, bank.tasks[u], Split::test),
                bank.ft_test_acc[u]);
        }
        rep.rows.push_back(std::move(r));

        bucket_norms[size].push_back(mean_of(all_norms));
        for (std::size_t g = 0; g < so.sweep_val.size(); ++g)
            bucket_val_sum[size][g] += so.sweep_val[g];
        bucket_count[size] += 1;
    }

    {
        ReportRow b;
        b.desc = "size_buckets";
        for (int k = 1; k <= n; ++k) {
            const auto u = static_cast<std::size_t>(k);
            if (bucket_norms[u].empty()) continue;
            const double m = mean_of(bucket_norms[u]);
            b.baselines["size" + std::to_string(k)] = m;
            b.baselines["count" + std::to_string(k)] =
                static_cast<double>(bucket_norms[u].size());
            rep.plot.push_back({"bank_norm_vs_size", static_cast<double>(k), m});
            for (std::size_t g = 0; g < opt.grid.size(); ++g)
                rep.plot.push_back(
                    {"mean_subset_val:size" + std::to_string(k),
                     opt.grid.values[g],
                     bucket_val_sum[u][g] / bucket_count[u]});
        }
        rep.rows.push_back(std::move(b));
    }

    if (opt.joint_baseline) {
        std::vector<const Dataset*> parts;
        for (const auto& t : bank.tasks) parts.push_back(&t);
        const Dataset joint = concat_datasets(parts, "joint");
        TrainConfig cfg = lab.finetune;
        cfg.seed = seed_for(lab.seed, "addition:joint");
        const Checkpoint jm = fine_tune(bank.base, lab.arch, joint, cfg).final;
        ReportRow r;
        r.desc = "joint";
        std::vector<double> norms;
        for (int t = 0; t < n; ++t) {
            const auto u = static_cast<std::size_t>(t);
            const double a =
                accuracy(jm, bank.arch, bank.tasks[u], Split::test);
            r.per_task_acc[id_of(t)] = a;
            r.normalized_acc[id_of(t)] =
                normalized_accuracy(a, bank.ft_test_acc[u]);
            norms.push_back(r.normalized_acc[id_of(t)]);
        }
        r.baselines["bank_mean_norm"] = mean_of(norms);
        rep.rows.push_back(std::move(r));
    }

    return rep;
}

// ---- analogy --------------------------------------------------------------

AnalogyOptions default_analogy_options() {
    AnalogyOptions opt;
    opt.fewshot.steps = 120;
    opt.fewshot.batch_size = 16;
    opt.fewshot.peak_lr = 1e-3;
    opt.fewshot.warmup_steps = 12;
    opt.fewshot.weight_decay = 1e-4;
    opt.fewshot.freeze = {"head.cls.bias", "head.cls.weight"};
    return opt;
}

EvalReport run_analogy_grid(const LabConfig& lab, int heldout_cell,
                            const AnalogyOptions& opt,
                            std::uint64_t train_seed) {
    lab.validate();
    opt.grid.validate();
    opt.fewshot.validate();
    if (heldout_cell < 0 || heldout_cell > 3)
        throw ConfigError("held-out cell must be in 0..3");
    if (opt.fewshot_budgets.empty())
        throw ConfigError("analogy needs at least one few-shot budget");
    for (int b : opt.fewshot_budgets)
        if (b < 1) throw ConfigError("few-shot budget must be positive");

    const auto specs = grid_specs(lab.seed);
    std::vector<Dataset> cells;
    cells.reserve(specs.size());
    for (const auto& s : specs) cells.push_back(make_task(s));

    const BaseModel base = pretrain_base(lab, {});

    // Cell index bit 0 is the content, bit 1 the style. Relative to the
    // held-out cell D: B shares its content, C shares its style, A shares
    // neither, so A relates to B the way C relates to D.
    const int D = heldout_cell;
    const int A = D ^ 3, B = D ^ 2, C = D ^ 1;
    const Dataset& target = cells[static_cast<std::size_t>(D)];

    auto ft_cell = [&](int k) {
        const Dataset& ds = cells[static_cast<std::size_t>(k)];
        TrainConfig cfg = lab.finetune;
        cfg.seed = seed_for(train_seed, "analogy:ft:" + ds.spec.task_id);
        Checkpoint ft = fine_tune(base.ckpt, lab.arch, ds, cfg).final;
        return diff(ft, base.ckpt, ds.spec.task_id);
    };
    std::vector<TaskVector> abc(3);
    const int cell_order[3] = {A, B, C};
    parallel_for(lab.threads, 3, [&](std::int64_t i) {
        abc[static_cast<std::size_t>(i)] = ft_cell(cell_order[i]);
    });
    const TaskVector& tauA = abc[0];
    const TaskVector& tauB = abc[1];
    const TaskVector& tauC = abc[2];
    const TaskVector edit = analogy(tauA, tauB, tauC);

    const Evaluator ev = [&](const Checkpoint& m) {
        EvalMetrics em;
        em.target = accuracy(m, lab.arch, target, Split::val);
        return em;
    };
    const SweepResult sr =
        sweep(base.ckpt, ArithExpr::leaf(edit), opt.grid, ev);
    const Selection sel = select_max(sr);
    const double lambda = sel.coeffs.at(0);
    const Checkpoint edited = apply(base.ckpt, edit, lambda);

    const double pre_val = accuracy(base.ckpt, lab.arch, target, Split::val);
    const double pre_test = accuracy(base.ckpt, lab.arch, target, Split::test);
    const double zs_test = accuracy(edited, lab.arch, target, Split::test);

    EvalReport rep;
    rep.experiment_id = "analogy";
    {
        json oj;
        oj["heldout_cell"] = heldout_cell;
        oj["grid"] = to_json(opt.grid);
        oj["fewshot_budgets"] = opt.fewshot_budgets;
        oj["sweep_three_row"] = opt.sweep_three_row;
        oj["fewshot"] = to_json(opt.fewshot);
        oj["train_seed"] = train_seed;
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds = {lab.seed, train_seed};
    rep.notes.push_back("held-out cell " + target.spec.task_id +
                        " edited with " + tauC.provenance.task_id + " + (" +
                        tauB.provenance.task_id + " - " +
                        tauA.provenance.task_id + ")");

    {
        ReportRow r;
        r.desc = "zeroshot";
        r.coeffs = {lambda};
        r.per_task_acc[target.spec.task_id] = zs_test;
        r.baselines["pretrained_test"] = pre_test;
        r.baselines["pretrained_val"] = pre_val;
        r.baselines["best_val"] = sel.row->target_metric;
        r.baselines["lambda0_val"] = sr.rows.front().target_metric;
        r.baselines["gain"] = zs_test - pre_test;
        rep.rows.push_back(std::move(r));
    }
    for (const auto& row : sr.rows)
        rep.plot.push_back({"zeroshot_val", row.coeffs.at(0),
                            row.target_metric});

    if (opt.sweep_three_row) {
        const SweepResult s3 =
            sweep_three(base.ckpt, tauA, tauB, tauC, opt.grid, ev);
        const Selection sel3 = select_max(s3);
        ArithExpr e3 = ArithExpr::sum(
            {ArithExpr::scaled(sel3.coeffs.at(2), ArithExpr::leaf(tauC)),
             ArithExpr::scaled(sel3.coeffs.at(1), ArithExpr::leaf(tauB)),
             ArithExpr::scaled(-sel3.coeffs.at(0), ArithExpr::leaf(tauA))});
        const Checkpoint m3 = apply(base.ckpt, e3, 1.0);
        ReportRow r;
        r.desc = "sweep3";
        r.coeffs = sel3.coeffs;
        r.per_task_acc[target.spec.task_id] =
            accuracy(m3, lab.arch, target, Split::test);
        r.baselines["best_val"] = sel3.row->target_metric;
        rep.rows.push_back(std::move(r));
    }

    struct FewOut {
        double from_pre = 0.0;
        double from_edit = 0.0;
    };
    std::vector<FewOut> few(opt.fewshot_budgets.size());
    parallel_for(lab.threads,
                 static_cast<std::int64_t>(opt.fewshot_budgets.size()),
                 [&](std::int64_t bi) {
        const int budget = opt.fewshot_budgets[static_cast<std::size_t>(bi)];
        const Dataset fs = subsample_train(target, budget);
        TrainConfig cfg = opt.fewshot;
        cfg.seed = seed_for(train_seed, "analogy:fewshot:" +
                                            target.spec.task_id + ":" +
                                            std::to_string(budget));
        FewOut& fo = few[static_cast<std::size_t>(bi)];
        fo.from_pre = accuracy(fine_tune(base.ckpt, lab.arch, fs, cfg).final,
                               lab.arch, target, Split::test);
        fo.from_edit = accuracy(fine_tune(edited, lab.arch, fs, cfg).final,
                                lab.arch, target, Split::test);
    });
    for (std::size_t bi = 0; bi < opt.fewshot_budgets.size(); ++bi) {
        const int budget = opt.fewshot_budgets[bi];
        ReportRow r;
        r.desc = "fewshot:n" + std::to_string(budget);
        r.per_task_acc[target.spec.task_id] = few[bi].from_edit;
        r.baselines["budget"] = static_cast<double>(budget);
        r.baselines["from_pretrained"] = few[bi].from_pre;
        r.baselines["from_edited"] = few[bi].from_edit;
        rep.rows.push_back(std::move(r));
        rep.plot.push_back({"fewshot_pretrained",
                            static_cast<double>(budget), few[bi].from_pre});
        rep.plot.push_back({"fewshot_edited", static_cast<double>(budget),
                            few[bi].from_edit});
    }

    return rep;
}

EvalReport run_analogy_suite(const LabConfig& lab, const AnalogyOptions& opt,
                             const std::vector<std::uint64_t>& train_seeds) {
    lab.validate();
    if (train_seeds.empty())
        throw ConfigError("analogy suite needs at least one training seed");

    EvalReport rep;
    rep.experiment_id = "analogy-suite";
    {
        json oj;
        oj["grid"] = to_json(opt.grid);
        oj["fewshot_budgets"] = opt.fewshot_budgets;
        oj["sweep_three_row"] = opt.sweep_three_row;
        oj["fewshot"] = to_json(opt.fewshot);
        oj["train_seeds"] = train_seeds;
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds.push_back(lab.seed);
    for (auto s : train_seeds) rep.seeds.push_back(s);

    std::vector<double> gains, zs, pre;
    std::map<int, std::vector<double>> few_pre, few_edit;
    for (int cell = 0; cell < 4; ++cell) {
        for (std::uint64_t s : train_seeds) {
            const EvalReport sub = run_analogy_grid(lab, cell, opt, s);
            const std::string prefix =
                "cell" + std::to_string(cell) + ":seed" + std::to_string(s) +
                ":";
            const ReportRow& z = sub.row("zeroshot");
            gains.push_back(z.baselines.at("gain"));
            zs.push_back(z.per_task_acc.begin()->second);
            pre.push_back(z.baselines.at("pretrained_test"));
            for (int b : opt.fewshot_budgets) {
                const ReportRow& f =
                    sub.row("fewshot:n" + std::to_string(b));
                few_pre[b].push_back(f.baselines.at("from_pretrained"));
                few_edit[b].push_back(f.baselines.at("from_edited"));
            }
            for (ReportRow r : sub.rows) {
                r.desc = prefix + r.desc;
                rep.rows.push_back(std::move(r));
            }
            for (PlotPoint p : sub.plot) {
                p.series = prefix + p.series;
                rep.plot.push_back(std::move(p));
            }
        }
    }

    {
        ReportRow r;
        r.desc = "mean:zeroshot";
        r.baselines["gain"] = mean_of(gains);
        r.baselines["edited"] = mean_of(zs);
        r.baselines["pretrained"] = mean_of(pre);
        rep.rows.push_back(std::move(r));
    }
    for (int b : opt.fewshot_budgets) {
        ReportRow r;
        r.desc = "mean:fewshot:n" + std::to_string(b);
        r.baselines["from_pretrained"] = mean_of(few_pre[b]);
        r.baselines["from_edited"] = mean_of(few_edit[b]);
        rep.rows.push_back(std::move(r));
    }
    rep.notes.push_back("mean rows average over 4 held-out cells x " +
                        std::to_string(train_seeds.size()) +
                        " training seeds");
    return rep;
}

// ---- domain generalization ------------------------------------------------

EvalReport run_domain_generalization(const LabConfig& lab,
                                     const DomainOptions& opt) {
    lab.validate();
    opt.sup_grid.validate();
    opt.unsup_grid.validate();

    const DomainPair pair = make_domain_pair(lab.seed);
    const BaseModel base = pretrain_base(lab, {});

    // Pre-training only exercises the classification loss, so at this point
    // head.recon still holds initializer noise. "Adapting the representation
    // to unlabeled data" is only a meaningful operation against a readout
    // that already decodes the pre-training distribution; against a random
    // readout the trunk has to learn to invert it, which swamps any
    // distribution-specific signal. So fit the reconstruction head once on
    // the pre-training data with everything else frozen and use the result
    // as the experiment's base model. Because the trunk and classifier head
    // stay frozen here, this phase is invisible to classification metrics.
    TrainConfig cal_cfg = lab.pretrain;
    cal_cfg.objective = Objective::reconstruction;
    cal_cfg.steps = std::max<std::int64_t>(1, lab.pretrain.steps / 2);
    cal_cfg.warmup_steps = lab.pretrain.warmup_steps / 2;
    cal_cfg.seed = seed_for(lab.seed, "domain:recon-head");
    cal_cfg.freeze.clear();
    for (const auto& [name, shape] : lab.arch.layout())
        if (name.rfind("head.recon.", 0) != 0) cal_cfg.freeze.push_back(name);
    const Checkpoint base_ckpt =
        fine_tune(base.ckpt, lab.arch, base.control, cal_cfg).final;

    TrainConfig sup_cfg = lab.finetune;
    TrainConfig unsup_cfg = lab.finetune;
    unsup_cfg.objective = Objective::reconstruction;
    // Freeze the reconstruction head too: with both heads pinned, the only
    // way to lower the reconstruction loss is to adapt the trunk, so the
    // unsupervised vectors isolate the input-distribution (style) shift
    // instead of parking it in head weights the classifier never reads.
    unsup_cfg.freeze = {"head.cls.bias", "head.cls.weight",
                        "head.recon.bias", "head.recon.weight"};

    Checkpoint ft_sup, ft_aux_unsup, ft_target_unsup;
    {
        std::vector<Checkpoint*> slots = {&ft_sup, &ft_aux_unsup,
                                          &ft_target_unsup};
        const Dataset* data[3] = {&pair.aux_supervised, &pair.aux_unsupervised,
                                  &pair.target_unsupervised};
        const char* tags[3] = {"domain:aux-sup", "domain:aux-unsup",
                               "domain:target-unsup"};
        parallel_for(lab.threads, 3, [&](std::int64_t i) {
            TrainConfig cfg = i == 0 ? sup_cfg : unsup_cfg;
            cfg.seed = seed_for(lab.seed, tags[i]);
            *slots[static_cast<std::size_t>(i)] =
                fine_tune(base_ckpt, lab.arch, *data[i], cfg).final;
        });
    }
    const TaskVector tau_sup = diff(ft_sup, base_ckpt, "domain-aux-sup");
    const TaskVector tau_aux_unsup =
        diff(ft_aux_unsup, base_ckpt, "domain-aux-unsup");
    const TaskVector tau_target_unsup =
        diff(ft_target_unsup, base_ckpt, "domain-target-unsup");

    const Dataset& eval_ds = pair.target_supervised_eval;
    const Evaluator ev = [&](const Checkpoint& m) {
        EvalMetrics em;
        em.target = accuracy(m, lab.arch, eval_ds, Split::val);
        return em;
    };
    const SweepResult sr =
        sweep_two(base_ckpt, tau_sup, tau_target_unsup, tau_aux_unsup,
                  opt.sup_grid, opt.unsup_grid, ev);
    const Selection sel = select_max(sr);
    const double ls = sel.coeffs.at(0);
    const double lu = sel.coeffs.at(1);
    const ArithExpr expr = ArithExpr::sum(
        {ArithExpr::scaled(ls, ArithExpr::leaf(tau_sup)),
         ArithExpr::scaled(
             lu, ArithExpr::sum({ArithExpr::leaf(tau_target_unsup),
                                 ArithExpr::neg(
                                     ArithExpr::leaf(tau_aux_unsup))}))});
    const Checkpoint edited = apply(base_ckpt, expr, 1.0);

    TrainConfig tgt_cfg = sup_cfg;
    tgt_cfg.seed = seed_for(lab.seed, "domain:target-sup");
    const Checkpoint ft_target =
        fine_tune(base_ckpt, lab.arch, eval_ds, tgt_cfg).final;

    EvalReport rep;
    rep.experiment_id = "domain";
    {
        json oj;
        oj["sup_grid"] = to_json(opt.sup_grid);
        oj["unsup_grid"] = to_json(opt.unsup_grid);
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds = {lab.seed};
    rep.notes.push_back(
        "edit: base + ls * sup + lu * (target_unsup - aux_unsup), both "
        "coefficients selected on the target validation split");

    const std::string& tid = eval_ds.spec.task_id;
    auto target_test = [&](const Checkpoint& m) {
        return accuracy(m, lab.arch, eval_ds, Split::test);
    };

    {
        ReportRow r;
        r.desc = "pretrained";
        r.per_task_acc[tid] = target_test(base_ckpt);
        rep.rows.push_back(std::move(r));
    }
    {
        ReportRow r;
        r.desc = "aux_finetune";
        r.per_task_acc[tid] = target_test(ft_sup);
        r.baselines["aux_test_acc"] =
            accuracy(ft_sup, lab.arch, pair.aux_supervised, Split::test);
        rep.rows.push_back(std::move(r));
    }
    {
        ReportRow r;
        r.desc = "edited";
        r.coeffs = {ls, lu};
        r.per_task_acc[tid] = target_test(edited);
        r.baselines["best_val"] = sel.row->target_metric;
        r.baselines["lambda_sup"] = ls;
        r.baselines["lambda_unsup"] = lu;
        rep.rows.push_back(std::move(r));
    }
    {
        ReportRow r;
        r.desc = "target_finetune";
        r.per_task_acc[tid] = target_test(ft_target);
        rep.rows.push_back(std::move(r));
    }
    rep.notes.push_back(ls >= lu
                            ? "supervised coefficient >= unsupervised"
                            : "unsupervised coefficient > supervised");

    for (const auto& row : sr.rows)
        rep.plot.push_back({"domain_val:ls=" + fmt(row.coeffs.at(0)),
                            row.coeffs.at(1), row.target_metric});

    return rep;
}

// ---- ensembles ------------------------------------------------------------

EvalReport run_ensemble_study(const LabConfig& lab,
                              const EnsembleOptions& opt) {
    lab.validate();
    if (opt.num_tasks < 3 || opt.num_tasks > 8)
        throw ConfigError(
            "ensemble study needs between 3 and 8 bank tasks (at least two "
            "pairs)");

    TaskBank bank = build_bank(lab, opt.num_tasks, /*broad_pretrain=*/false);
    const int n = opt.num_tasks;

    EvalReport rep;
    rep.experiment_id = "ensemble";
    {
        json oj;
        oj["num_tasks"] = opt.num_tasks;
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds = {lab.seed};
    rep.notes.push_back(
        "per pair: accuracy of the half-strength sum of both task vectors "
        "vs the 0.5/0.5 logit ensemble, on the union of both test splits");

    auto id_of = [&](int t) -> const std::string& {
        return bank.tasks[static_cast<std::size_t>(t)].spec.task_id;
    };

    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);

    struct PairOut {
        double avg_acc = 0.0;
        double ens_acc = 0.0;
        double max_gap = 0.0;
    };
    std::vector<PairOut> outs(pairs.size());
    parallel_for(lab.threads, static_cast<std::int64_t>(pairs.size()),
                 [&](std::int64_t pi) {
        const auto [i, j] = pairs[static_cast<std::size_t>(pi)];
        const auto ui = static_cast<std::size_t>(i);
        const auto uj = static_cast<std::size_t>(j);
        const Checkpoint wavg =
            apply(bank.base, sum({bank.vectors[ui], bank.vectors[uj]}), 0.5);

        // base + 0.5 (t_i + t_j) must equal the plain parameter average of
        // the two fine-tunes; anything beyond float rounding is a bug.
        double max_gap = 0.0;
        for (const auto& [name, tensor] : wavg.weights) {
            const Tensor& a = bank.finetuned[ui].weights.at(name);
            const Tensor& b = bank.finetuned[uj].weights.at(name);
            for (std::size_t k = 0; k < tensor.data.size(); ++k) {
                const double want = 0.5 * (static_cast<double>(a.data[k]) +
                                           static_cast<double>(b.data[k]));
                max_gap = std::max(
                    max_gap,
                    std::abs(static_cast<double>(tensor.data[k]) - want));
            }
        }
        if (max_gap > 1e-6)
            throw ExperimentError(
                "half-strength sum drifted from the parameter average by " +
                fmt(max_gap));

        const Dataset union_ds = concat_datasets(
            {&bank.tasks[ui], &bank.tasks[uj]},
            "union:" + id_of(i) + "+" + id_of(j));
        PairOut& po = outs[static_cast<std::size_t>(pi)];
        po.avg_acc = accuracy(wavg, bank.arch, union_ds, Split::test);
        po.ens_acc =
            ensemble_accuracy(bank.finetuned[ui], bank.finetuned[uj], 0.5,
                              bank.arch, union_ds, Split::test);
        po.max_gap = max_gap;
    });

    std::vector<double> xs, ys;
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        const auto [i, j] = pairs[pi];
        ReportRow r;
        r.desc = "pair:" + id_of(i) + "+" + id_of(j);
        r.baselines["weight_avg_acc"] = outs[pi].avg_acc;
        r.baselines["ensemble_acc"] = outs[pi].ens_acc;
        r.baselines["max_param_gap"] = outs[pi].max_gap;
        rep.rows.push_back(std::move(r));
        rep.plot.push_back(
            {"ensemble_vs_avg", outs[pi].avg_acc, outs[pi].ens_acc});
        xs.push_back(outs[pi].avg_acc);
        ys.push_back(outs[pi].ens_acc);
    }

    {
        // Self-ensemble sanity row: mixing a model with itself is a no-op.
        const Checkpoint& m = bank.finetuned.front();
        const Dataset& ds = bank.tasks.front();
        ReportRow r;
        r.desc = "identity:" + id_of(0);
        r.baselines["model_acc"] = bank.ft_test_acc.front();
        r.baselines["self_ensemble_acc"] =
            ensemble_accuracy(m, m, 0.5, bank.arch, ds, Split::test);
        rep.rows.push_back(std::move(r));
    }

    {
        ReportRow r;
        r.desc = "correlation";
        r.baselines["pearson"] = pearson(xs, ys);
        r.baselines["num_pairs"] = static_cast<double>(pairs.size());
        r.baselines["mean_weight_avg"] = mean_of(xs);
        r.baselines["mean_ensemble"] = mean_of(ys);
        rep.rows.push_back(std::move(r));
    }

    return rep;
}

// ---- cosine structure -----------------------------------------------------

EvalReport run_cosine_structure(const LabConfig& lab,
                                const CosimOptions& opt) {
    lab.validate();
    if (opt.num_tasks < 2 || opt.num_tasks > 8)
        throw ConfigError("cosine study needs between 2 and 8 bank tasks");
    if (opt.same_task_reps < 1 || opt.same_task_reps > opt.num_tasks)
        throw ConfigError(
            "same-task repetitions must be between 1 and the bank size");

    TaskBank bank = build_bank(lab, opt.num_tasks, /*broad_pretrain=*/false);
    const int n = opt.num_tasks;
    const auto mat = cosine_matrix(bank.vectors);

    EvalReport rep;
    rep.experiment_id = "cosim";
    {
        json oj;
        oj["num_tasks"] = opt.num_tasks;
        oj["same_task_reps"] = opt.same_task_reps;
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds = {lab.seed};
    rep.notes.push_back(
        "off-diagonal entries compare vectors of different tasks; 'same' "
        "rows re-fine-tune one task with a different data-order seed");

    auto id_of = [&](int t) -> const std::string& {
        return bank.tasks[static_cast<std::size_t>(t)].spec.task_id;
    };

    std::vector<double> offdiag;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double c =
                mat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            ReportRow r;
            r.desc = "cos:" + id_of(i) + ":" + id_of(j);
            r.baselines["cos"] = c;
            rep.rows.push_back(std::move(r));
            offdiag.push_back(std::abs(c));
        }
        for (int j = 0; j < n; ++j)
            rep.plot.push_back(
                {"cos_row:" + id_of(i), static_cast<double>(j),
                 mat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]});
    }

    std::vector<double> same(static_cast<std::size_t>(opt.same_task_reps));
    parallel_for(lab.threads, opt.same_task_reps, [&](std::int64_t ti) {
        const auto t = static_cast<std::size_t>(ti);
        TrainConfig cfg = lab.finetune;
        cfg.seed = seed_for(lab.seed, "cosim:reseed:" + id_of(static_cast<int>(t)));
        const Checkpoint ft =
            fine_tune(bank.base, lab.arch, bank.tasks[t], cfg).final;
        same[t] = cosine(diff(ft, bank.base, id_of(static_cast<int>(t))),
                         bank.vectors[t]);
    });
    for (int t = 0; t < opt.same_task_reps; ++t) {
        ReportRow r;
        r.desc = "same:" + id_of(t);
        r.baselines["cos"] = same[static_cast<std::size_t>(t)];
        rep.rows.push_back(std::move(r));
    }

    {
        ReportRow r;
        r.desc = "structure";
        r.baselines["mean_abs_offdiag"] = mean_of(offdiag);
        r.baselines["mean_same_task"] = mean_of(same);
        r.baselines["num_tasks"] = static_cast<double>(n);
        rep.rows.push_back(std::move(r));
    }

    return rep;
}

// ---- trajectory -----------------------------------------------------------

EvalReport run_trajectory(const LabConfig& lab, const TrajectoryOptions& opt) {
    lab.validate();
    if (opt.snapshot_every < 1)
        throw ConfigError("trajectory needs a positive snapshot interval");

    const BaseModel base = pretrain_base(lab, {});
    const Dataset task = make_task(bank_specs(lab.seed).front());

    TrainConfig cfg = lab.finetune;
    cfg.snapshot_every = opt.snapshot_every;
    cfg.seed = seed_for(lab.seed, "trajectory:ft");
    const FineTuneResult res = fine_tune(base.ckpt, lab.arch, task, cfg);
    const TaskVector final_tv = diff(res.final, base.ckpt, task.spec.task_id);
    const auto pts = trajectory_cosines(res.snapshots, base.ckpt, final_tv);

    EvalReport rep;
    rep.experiment_id = "trajectory";
    {
        json oj;
        oj["snapshot_every"] = opt.snapshot_every;
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds = {lab.seed};
    rep.notes.push_back(
        "cosine of each snapshot's weight delta against the final task "
        "vector of the same run");

    std::vector<double> xs, ys;
    for (const auto& p : pts) {
        ReportRow r;
        r.desc = "step:" + std::to_string(p.step);
        r.baselines["step"] = static_cast<double>(p.step);
        r.baselines["defined"] = p.defined ? 1.0 : 0.0;
        if (p.defined) {
            r.baselines["cos"] = p.cos;
            rep.plot.push_back(
                {"cos_vs_step", static_cast<double>(p.step), p.cos});
            if (p.step > 0) {
                xs.push_back(static_cast<double>(p.step));
                ys.push_back(p.cos);
            }
        }
        rep.rows.push_back(std::move(r));
    }

    {
        ReportRow r;
        r.desc = "convergence";
        r.baselines["spearman"] = spearman(xs, ys);
        r.baselines["final_cos"] = ys.back();
        r.baselines["num_points"] = static_cast<double>(xs.size());
        r.baselines["steps"] = static_cast<double>(cfg.steps);
        rep.rows.push_back(std::move(r));
    }

    return rep;
}

// ---- learning-rate and seed stability ------------------------------------

EvalReport run_lr_seed_study(const LabConfig& lab, const LrSeedOptions& opt) {
    lab.validate();
    opt.grid.validate();
    if (opt.lrs.empty()) throw ConfigError("lr study needs learning rates");
    for (double lr : opt.lrs)
        if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (opt.seeds.size() < 2)
        throw ConfigError("seed study needs at least two seeds");

    const BaseModel base = pretrain_base(lab, {});
    const auto specs = bank_specs(lab.seed);
    const Dataset t1 = make_task(specs[0]);
    const Dataset t2 = make_task(specs[1]);
    const std::string& id1 = t1.spec.task_id;
    const std::string& id2 = t2.spec.task_id;

    EvalReport rep;
    rep.experiment_id = "lr-seed";
    {
        json oj;
        oj["lrs"] = opt.lrs;
        oj["seeds"] = opt.seeds;
        oj["grid"] = to_json(opt.grid);
        rep.config_digest = digest_for(rep.experiment_id, lab, oj);
    }
    rep.seeds = {lab.seed};
    rep.notes.push_back(
        "pair metric: mean of the two tasks' normalized test accuracies "
        "after adding both vectors at the jointly selected coefficient");

    struct PairEval {
        double lambda = 0.0;
        double acc1 = 0.0;
        double acc2 = 0.0;
        double norm = 0.0;
        double best_val = 0.0;
    };
    auto eval_pair = [&](const TaskVector& v1, const TaskVector& v2,
                         double ft1_test, double ft2_test) {
        const ArithExpr expr =
            ArithExpr::sum({ArithExpr::leaf(v1), ArithExpr::leaf(v2)});
        const Evaluator ev = [&](const Checkpoint& m) {
            EvalMetrics em;
            em.target = 0.5 * (accuracy(m, lab.arch, t1, Split::val) +
                               accuracy(m, lab.arch, t2, Split::val));
            return em;
        };
        const SweepResult sr = sweep(base.ckpt, expr, opt.grid, ev);
        const Selection sel = select_max(sr);
        PairEval pe;
        pe.lambda = sel.coeffs.at(0);
        pe.best_val = sel.row->target_metric;
        const Checkpoint edited = apply(base.ckpt, expr, pe.lambda);
        pe.acc1 = accuracy(edited, lab.arch, t1, Split::test);
        pe.acc2 = accuracy(edited, lab.arch, t2, Split::test);
        pe.norm = 0.5 * (normalized_accuracy(pe.acc1, ft1_test) +
                         normalized_accuracy(pe.acc2, ft2_test));
        return pe;
    };
    auto ft_with = [&](const Dataset& ds, double lr, std::uint64_t seed,
                       const std::string& tag) {
        TrainConfig cfg = lab.finetune;
        cfg.peak_lr = lr;
        cfg.seed = seed_for(seed, tag + ":" + ds.spec.task_id);
        return fine_tune(base.ckpt, lab.arch, ds, cfg).final;
    };

    {
        struct LrOut {
            PairEval pe;
            double ft1_test = 0.0;
            double ft2_test = 0.0;
        };
        std::vector<LrOut> outs(opt.lrs.size());
        parallel_for(lab.threads, static_cast<std::int64_t>(opt.lrs.size()),
                     [&](std::int64_t li) {
            const double lr = opt.lrs[static_cast<std::size_t>(li)];
            const Checkpoint f1 = ft_with(t1, lr, lab.seed, "lrseed:lr");
            const Checkpoint f2 = ft_with(t2, lr, lab.seed, "lrseed:lr");
            LrOut& lo = outs[static_cast<std::size_t>(li)];
            lo.ft1_test = accuracy(f1, lab.arch, t1, Split::test);
            lo.ft2_test = accuracy(f2, lab.arch, t2, Split::test);
            lo.pe = eval_pair(diff(f1, base.ckpt, id1),
                              diff(f2, base.ckpt, id2), lo.ft1_test,
                              lo.ft2_test);
        });
        for (std::size_t li = 0; li < opt.lrs.size(); ++li) {
            const double lr = opt.lrs[li];
            const LrOut& lo = outs[li];
            ReportRow r;
            r.desc = "lr:" + fmt(lr);
            r.coeffs = {lo.pe.lambda};
            r.per_task_acc[id1] = lo.pe.acc1;
            r.per_task_acc[id2] = lo.pe.acc2;
            r.normalized_acc[id1] =
                normalized_accuracy(lo.pe.acc1, lo.ft1_test);
            r.normalized_acc[id2] =
                normalized_accuracy(lo.pe.acc2, lo.ft2_test);
            r.baselines["lr"] = lr;
            r.baselines["pair_mean_norm"] = lo.pe.norm;
            r.baselines["ft1_test"] = lo.ft1_test;
            r.baselines["ft2_test"] = lo.ft2_test;
            r.baselines["best_val"] = lo.pe.best_val;
            rep.rows.push_back(std::move(r));
            rep.plot.push_back({"norm_vs_lr", lr, lo.pe.norm});
        }
    }

    {
        const auto ns = opt.seeds.size();
        std::vector<Checkpoint> f1(ns), f2(ns);
        std::vector<double> a1(ns), a2(ns);
        parallel_for(lab.threads, static_cast<std::int64_t>(2 * ns),
                     [&](std::int64_t i) {
            const auto s = static_cast<std::size_t>(i % ns);
            const std::uint64_t seed = opt.seeds[s];
            if (i < static_cast<std::int64_t>(ns)) {
                f1[s] = ft_with(t1, lab.finetune.peak_lr, seed, "lrseed:seed");
                a1[s] = accuracy(f1[s], lab.arch, t1, Split::test);
            } else {
                f2[s] = ft_with(t2, lab.finetune.peak_lr, seed, "lrseed:seed");
                a2[s] = accuracy(f2[s], lab.arch, t2, Split::test);
            }
        });

        std::vector<PairEval> grid_out(ns * ns);
        parallel_for(lab.threads, static_cast<std::int64_t>(ns * ns),
                     [&](std::int64_t i) {
            const auto si = static_cast<std::size_t>(i) / ns;
            const auto sj = static_cast<std::size_t>(i) % ns;
            grid_out[static_cast<std::size_t>(i)] =
                eval_pair(diff(f1[si], base.ckpt, id1),
                          diff(f2[sj], base.ckpt, id2), a1[si], a2[sj]);
        });

        std::vector<double> norms;
        for (std::size_t si = 0; si < ns; ++si) {
            for (std::size_t sj = 0; sj < ns; ++sj) {
                const PairEval& pe = grid_out[si * ns + sj];
                ReportRow r;
                r.desc = "seeds:" + std::to_string(opt.seeds[si]) + ":" +
                         std::to_string(opt.seeds[sj]);
                r.coeffs = {pe.lambda};
                r.per_task_acc[id1] = pe.acc1;
                r.per_task_acc[id2] = pe.acc2;
                r.baselines["pair_mean_norm"] = pe.norm;
                rep.rows.push_back(std::move(r));
                rep.plot.push_back(
                    {"seed_grid", static_cast<double>(si * ns + sj), pe.norm});
                norms.push_back(pe.norm);
            }
        }
        ReportRow r;
        r.desc = "seed_spread";
        const double lo = *std::min_element(norms.begin(), norms.end());
        const double hi = *std::max_element(norms.begin(), norms.end());
        r.baselines["min"] = lo;
        r.baselines["max"] = hi;
        r.baselines["spread"] = hi - lo;
        r.baselines["mean"] = mean_of(norms);
        rep.rows.push_back(std::move(r));
    }

    return rep;
}

} // namespace taskvec
