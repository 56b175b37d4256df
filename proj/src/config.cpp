#include "taskvec/config.hpp"

#include <cmath>
#include <cstdio>

namespace taskvec {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& context) {
    if (!j.is_object())
        throw ConfigError(context + " must be a json object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok)
            throw ConfigError("unknown key '" + key + "' in " + context);
        (void)value;
    }
}

json to_json(const MlpSpec& spec) {
    json j;
    j["input_dim"] = spec.input_dim;
    j["trunk_widths"] = spec.trunk_widths;
    j["activation"] = to_string(spec.activation);
    j["num_classes"] = spec.num_classes;
    j["recon_dim"] = spec.recon_dim;
    return j;
}

MlpSpec mlp_spec_from_json(const json& j) {
    check_keys(j, {"input_dim", "trunk_widths", "activation", "num_classes",
                   "recon_dim"},
               "arch");
    MlpSpec spec;
    if (j.contains("input_dim")) spec.input_dim = j["input_dim"];
    if (j.contains("trunk_widths"))
        spec.trunk_widths = j["trunk_widths"].get<std::vector<std::int64_t>>();
    if (j.contains("activation"))
        spec.activation = activation_from_string(j["activation"]);
    if (j.contains("num_classes")) spec.num_classes = j["num_classes"];
    if (j.contains("recon_dim")) spec.recon_dim = j["recon_dim"];
    spec.validate();
    return spec;
}

json to_json(const TrainConfig& cfg) {
    json j;
    j["steps"] = cfg.steps;
    j["batch_size"] = cfg.batch_size;
    j["peak_lr"] = cfg.peak_lr;
    j["warmup_steps"] = cfg.warmup_steps;
    j["weight_decay"] = cfg.weight_decay;
    j["objective"] = to_string(cfg.objective);
    j["seed"] = cfg.seed;
    j["snapshot_every"] = cfg.snapshot_every;
    j["freeze"] = cfg.freeze;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    check_keys(j,
               {"steps", "batch_size", "peak_lr", "warmup_steps",
                "weight_decay", "objective", "seed", "snapshot_every",
                "freeze"},
               "train");
    TrainConfig cfg;
    if (j.contains("steps")) cfg.steps = j["steps"];
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"];
    if (j.contains("peak_lr")) cfg.peak_lr = j["peak_lr"];
    if (j.contains("warmup_steps")) cfg.warmup_steps = j["warmup_steps"];
    if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"];
    if (j.contains("objective"))
        cfg.objective = objective_from_string(j["objective"]);
    if (j.contains("seed")) cfg.seed = j["seed"];
    if (j.contains("snapshot_every")) cfg.snapshot_every = j["snapshot_every"];
    if (j.contains("freeze"))
        cfg.freeze = j["freeze"].get<std::vector<std::string>>();
    cfg.validate();
    return cfg;
}

json to_json(const SyntheticTaskSpec& spec) {
    json j;
    j["task_id"] = spec.task_id;
    j["content_id"] = spec.content_id;
    j["style_id"] = spec.style_id;
    j["num_classes"] = spec.num_classes;
    j["dim"] = spec.dim;
    j["sizes"] = {{"train", spec.sizes.train},
                  {"val", spec.sizes.val},
                  {"test", spec.sizes.test}};
    j["noise_sigma"] = spec.noise_sigma;
    j["seed"] = spec.seed;
    return j;
}

SyntheticTaskSpec task_spec_from_json(const json& j) {
    check_keys(j,
               {"task_id", "content_id", "style_id", "num_classes", "dim",
                "sizes", "noise_sigma", "seed"},
               "task");
    SyntheticTaskSpec spec;
    if (j.contains("task_id")) spec.task_id = j["task_id"];
    if (j.contains("content_id")) spec.content_id = j["content_id"];
    if (j.contains("style_id")) spec.style_id = j["style_id"];
    if (j.contains("num_classes")) spec.num_classes = j["num_classes"];
    if (j.contains("dim")) spec.dim = j["dim"];
    if (j.contains("sizes")) {
        check_keys(j["sizes"], {"train", "val", "test"}, "task.sizes");
        if (j["sizes"].contains("train"))
            spec.sizes.train = j["sizes"]["train"];
        if (j["sizes"].contains("val")) spec.sizes.val = j["sizes"]["val"];
        if (j["sizes"].contains("test")) spec.sizes.test = j["sizes"]["test"];
    }
    if (j.contains("noise_sigma")) spec.noise_sigma = j["noise_sigma"];
    if (j.contains("seed")) spec.seed = j["seed"];
    spec.validate();
    return spec;
}

json to_json(const CoeffGrid& grid) {
    json j;
    j["values"] = grid.values;
    return j;
}

CoeffGrid coeff_grid_from_string(const std::string& s) {
    double lo = 0.0, hi = 0.0, step = 0.0;
    char extra = 0;
    if (std::sscanf(s.c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &extra) != 3)
        throw ConfigError("grid spec must look like \"lo:hi:step\", got '" +
                          s + "'");
    if (step <= 0.0) throw ConfigError("grid step must be positive");
    if (hi < lo) throw ConfigError("grid upper bound below lower bound");
    CoeffGrid g;
    // Build by index to keep the spacing uniform in spite of rounding.
    const auto n = static_cast<std::int64_t>(
        std::floor((hi - lo) / step + 1e-9));
    for (std::int64_t i = 0; i <= n; ++i)
        g.values.push_back(lo + static_cast<double>(i) * step);
    g.validate();
    return g;
}

CoeffGrid coeff_grid_from_json(const json& j) {
    if (j.is_string()) return coeff_grid_from_string(j.get<std::string>());
    check_keys(j, {"values"}, "grid");
    if (!j.contains("values"))
        throw ConfigError("grid needs \"values\" or a \"lo:hi:step\" string");
    CoeffGrid g;
    g.values = j["values"].get<std::vector<double>>();
    g.validate();
    return g;
}

} // namespace taskvec
