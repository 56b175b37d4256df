#include "taskvec/mlp.hpp"

#include <cmath>

#include <json.hpp>

#include "taskvec/hash.hpp"
#include "taskvec/rng.hpp"

namespace taskvec {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::tanh_fn: return "tanh";
        case Activation::relu: return "relu";
    }
    throw Error("unreachable activation");
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh_fn;
    if (s == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + s + "'");
}

void MlpSpec::validate() const {
    if (input_dim <= 0) throw ConfigError("input_dim must be positive");
    if (trunk_widths.empty())
        throw ConfigError("trunk_widths must not be empty");
    for (auto w : trunk_widths)
        if (w <= 0) throw ConfigError("trunk widths must be positive");
    if (num_classes <= 0) throw ConfigError("num_classes must be positive");
    if (recon_dim < 0) throw ConfigError("recon_dim must be >= 0");
}

std::string MlpSpec::arch_digest() const {
    nlohmann::json j;
    j["activation"] = to_string(activation);
    j["input_dim"] = input_dim;
    j["num_classes"] = num_classes;
    j["recon_dim"] = recon_dim;
    j["trunk_widths"] = trunk_widths;
    return sha256_hex(j.dump());
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>>
MlpSpec::layout() const {
    validate();
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
    std::int64_t in = input_dim;
    for (std::size_t k = 0; k < trunk_widths.size(); ++k) {
        const std::int64_t width = trunk_widths[k];
        const std::string base = "trunk." + std::to_string(k) + ".";
        out.emplace_back(base + "weight",
                         std::vector<std::int64_t>{width, in});
        out.emplace_back(base + "bias", std::vector<std::int64_t>{width});
        in = width;
    }
    out.emplace_back("head.cls.weight",
                     std::vector<std::int64_t>{num_classes, in});
    out.emplace_back("head.cls.bias", std::vector<std::int64_t>{num_classes});
    if (recon_dim > 0) {
        out.emplace_back("head.recon.weight",
                         std::vector<std::int64_t>{recon_dim, in});
        out.emplace_back("head.recon.bias",
                         std::vector<std::int64_t>{recon_dim});
    }
    return out;
}

Checkpoint init_model(const MlpSpec& spec, std::uint64_t seed) {
    Checkpoint ckpt;
    for (const auto& [name, shape] : spec.layout()) {
        const std::int64_t n = shape_numel(shape);
        std::vector<float> data(static_cast<std::size_t>(n), 0.0f);
        if (shape.size() == 2) {
            const double fan_out = static_cast<double>(shape[0]);
            const double fan_in = static_cast<double>(shape[1]);
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            Rng rng = Rng::stream(seed, "init:" + name);
            for (auto& v : data)
                v = static_cast<float>(rng.uniform(-limit, limit));
        }
        ckpt.weights.insert(name, Tensor(shape, std::move(data)));
    }
    ckpt.meta.model_id = "mlp";
    ckpt.meta.arch_digest = spec.arch_digest();
    ckpt.meta.seed = seed;
    ckpt.meta.step = 0;
    ckpt.meta.note = "init";
    return ckpt;
}

void validate_model(const Checkpoint& model, const MlpSpec& spec) {
    const auto layout = spec.layout();
    if (model.weights.size() != layout.size())
        throw CompatError("model has " + std::to_string(model.weights.size()) +
                          " tensors, architecture expects " +
                          std::to_string(layout.size()));
    for (const auto& [name, shape] : layout) {
        if (!model.weights.contains(name))
            throw CompatError("model is missing tensor '" + name + "'");
        if (model.weights.at(name).shape != shape)
            throw CompatError("shape mismatch at '" + name + "': " +
                              shape_str(model.weights.at(name).shape) +
                              " vs " + shape_str(shape));
    }
}

namespace {

// out[r, :] = W x[r, :] + b for row-major W [outdim, indim].
void dense(const Tensor& w, const Tensor& b, const DMat& x, DMat& out) {
    const std::int64_t outdim = w.shape[0];
    const std::int64_t indim = w.shape[1];
    out = DMat(x.rows, outdim);
    for (std::int64_t r = 0; r < x.rows; ++r) {
        const double* xr = &x.data[static_cast<std::size_t>(r * indim)];
        for (std::int64_t o = 0; o < outdim; ++o) {
            const float* wr = &w.data[static_cast<std::size_t>(o * indim)];
            double acc = static_cast<double>(b.data[static_cast<std::size_t>(o)]);
            for (std::int64_t i = 0; i < indim; ++i)
                acc += static_cast<double>(wr[i]) * xr[i];
            out.at(r, o) = acc;
        }
    }
}

} // namespace

ForwardOut forward(const Checkpoint& model, const MlpSpec& spec,
                   const float* x, std::int64_t rows, std::int64_t cols) {
    validate_model(model, spec);
    if (rows < 0) throw ConfigError("negative row count");
    if (cols != spec.input_dim)
        throw ConfigError("input dim mismatch: got " + std::to_string(cols) +
                          ", model expects " +
                          std::to_string(spec.input_dim));

    DMat h(rows, spec.input_dim);
    for (std::size_t i = 0; i < h.data.size(); ++i)
        h.data[i] = static_cast<double>(x[i]);

    DMat z;
    for (std::size_t k = 0; k < spec.trunk_widths.size(); ++k) {
        const std::string base = "trunk." + std::to_string(k) + ".";
        dense(model.weights.at(base + "weight"),
              model.weights.at(base + "bias"), h, z);
        for (auto& v : z.data)
            v = spec.activation == Activation::tanh_fn
                    ? std::tanh(v)
                    : (v > 0.0 ? v : 0.0);
        h = std::move(z);
    }

    ForwardOut out;
    dense(model.weights.at("head.cls.weight"),
          model.weights.at("head.cls.bias"), h, out.logits);
    if (spec.recon_dim > 0)
        dense(model.weights.at("head.recon.weight"),
              model.weights.at("head.recon.bias"), h, out.recon);
    return out;
}

} // namespace taskvec
