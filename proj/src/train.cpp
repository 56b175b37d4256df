#include "taskvec/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "taskvec/hash.hpp"
#include "taskvec/rng.hpp"

namespace taskvec {

std::string to_string(Objective o) {
    switch (o) {
        case Objective::cross_entropy: return "cross_entropy";
        case Objective::negated_cross_entropy: return "negated_cross_entropy";
        case Objective::reconstruction: return "reconstruction";
    }
    throw Error("unreachable objective");
}

Objective objective_from_string(const std::string& s) {
    if (s == "cross_entropy") return Objective::cross_entropy;
    if (s == "negated_cross_entropy") return Objective::negated_cross_entropy;
    if (s == "reconstruction") return Objective::reconstruction;
    throw ConfigError("unknown objective '" + s + "'");
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (peak_lr <= 0.0) throw ConfigError("peak_lr must be positive");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (warmup_steps > steps)
        throw ConfigError("warmup_steps must not exceed steps");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (snapshot_every < 0) throw ConfigError("snapshot_every must be >= 0");
}

double lr_at(std::int64_t step, const TrainConfig& cfg) {
    cfg.validate();
    if (step < 0 || step >= cfg.steps)
        throw ConfigError("step " + std::to_string(step) +
                          " out of range [0, " + std::to_string(cfg.steps) +
                          ")");
    if (step < cfg.warmup_steps)
        return cfg.peak_lr * static_cast<double>(step + 1) /
               static_cast<double>(cfg.warmup_steps);
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) /
        static_cast<double>(cfg.steps - cfg.warmup_steps);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

struct LayerCache {
    DMat input;                  // activations entering the layer
    DMat preact;                 // z before the nonlinearity
    DMat output;                 // act(z)
};

// out[r, :] = W x[r, :] + b for row-major W [outdim, indim].
void dense_forward_into(const Tensor& w, const Tensor& b, const DMat& x,
                        DMat& out) {
    const std::int64_t outdim = w.shape[0];
    const std::int64_t indim = w.shape[1];
    out = DMat(x.rows, outdim);
    for (std::int64_t r = 0; r < x.rows; ++r) {
        const double* xr = &x.data[static_cast<std::size_t>(r * indim)];
        for (std::int64_t o = 0; o < outdim; ++o) {
            const float* wr = &w.data[static_cast<std::size_t>(o * indim)];
            double acc =
                static_cast<double>(b.data[static_cast<std::size_t>(o)]);
            for (std::int64_t i = 0; i < indim; ++i)
                acc += static_cast<double>(wr[i]) * xr[i];
            out.at(r, o) = acc;
        }
    }
}

// dL/dW and dL/db for out = W x + b given dL/dout, plus dL/dx.
void dense_backward(const Tensor& w, const DMat& x, const DMat& dout,
                    std::vector<double>& dw, std::vector<double>& db,
                    DMat* dx) {
    const std::int64_t outdim = w.shape[0];
    const std::int64_t indim = w.shape[1];
    dw.assign(static_cast<std::size_t>(outdim * indim), 0.0);
    db.assign(static_cast<std::size_t>(outdim), 0.0);
    if (dx) *dx = DMat(x.rows, indim);
    for (std::int64_t r = 0; r < x.rows; ++r) {
        for (std::int64_t o = 0; o < outdim; ++o) {
            const double g = dout.at(r, o);
            if (g == 0.0) continue;
            db[static_cast<std::size_t>(o)] += g;
            const float* wr = &w.data[static_cast<std::size_t>(o * indim)];
            double* dwr = &dw[static_cast<std::size_t>(o * indim)];
            const double* xr = &x.data[static_cast<std::size_t>(r * indim)];
            for (std::int64_t i = 0; i < indim; ++i) {
                dwr[i] += g * xr[i];
                if (dx) dx->at(r, i) += g * static_cast<double>(wr[i]);
            }
        }
    }
}

} // namespace

LossGrads loss_and_grads(const Checkpoint& model, const MlpSpec& spec,
                         const Batch& batch, Objective objective) {
    validate_model(model, spec);
    if (batch.rows <= 0) throw ConfigError("empty batch");
    if (batch.cols != spec.input_dim)
        throw ConfigError("input dim mismatch: got " +
                          std::to_string(batch.cols) + ", model expects " +
                          std::to_string(spec.input_dim));
    const bool classify = objective != Objective::reconstruction;
    if (classify && !batch.labels)
        throw ConfigError("classification objective needs labels");
    if (!classify && spec.recon_dim == 0)
        throw ConfigError(
            "reconstruction objective needs a reconstruction head");
    if (!classify && spec.recon_dim != spec.input_dim &&
        !batch.recon_targets)
        throw ConfigError("reconstruction targets required when recon_dim "
                          "differs from input_dim");

    const std::int64_t B = batch.rows;
    const std::size_t nlayers = spec.trunk_widths.size();

    // Forward pass, caching what backward needs.
    std::vector<LayerCache> cache(nlayers);
    DMat h(B, spec.input_dim);
    for (std::size_t i = 0; i < h.data.size(); ++i)
        h.data[i] = static_cast<double>(batch.x[i]);
    for (std::size_t k = 0; k < nlayers; ++k) {
        const std::string base = "trunk." + std::to_string(k) + ".";
        const Tensor& w = model.weights.at(base + "weight");
        const Tensor& b = model.weights.at(base + "bias");
        LayerCache& c = cache[k];
        c.input = std::move(h);
        const std::int64_t outdim = w.shape[0];
        const std::int64_t indim = w.shape[1];
        c.preact = DMat(B, outdim);
        for (std::int64_t r = 0; r < B; ++r) {
            const double* xr =
                &c.input.data[static_cast<std::size_t>(r * indim)];
            for (std::int64_t o = 0; o < outdim; ++o) {
                const float* wr =
                    &w.data[static_cast<std::size_t>(o * indim)];
                double acc =
                    static_cast<double>(b.data[static_cast<std::size_t>(o)]);
                for (std::int64_t i = 0; i < indim; ++i)
                    acc += static_cast<double>(wr[i]) * xr[i];
                c.preact.at(r, o) = acc;
            }
        }
        c.output = DMat(B, outdim);
        for (std::size_t i = 0; i < c.preact.data.size(); ++i)
            c.output.data[i] =
                spec.activation == Activation::tanh_fn
                    ? std::tanh(c.preact.data[i])
                    : (c.preact.data[i] > 0.0 ? c.preact.data[i] : 0.0);
        h = c.output;
    }
    const DMat& features = cache.back().output;

    LossGrads out;
    for (const auto& [name, shape] : spec.layout())
        out.grads[name].assign(static_cast<std::size_t>(shape_numel(shape)),
                               0.0);

    // Head-specific loss and gradient w.r.t. the trunk features.
    DMat dfeatures(B, spec.trunk_widths.back());
    const double sign =
        objective == Objective::negated_cross_entropy ? -1.0 : 1.0;
    if (classify) {
        const Tensor& w = model.weights.at("head.cls.weight");
        const Tensor& b = model.weights.at("head.cls.bias");
        DMat logits;
        dense_forward_into(w, b, features, logits);
        double loss = 0.0;
        DMat dlogits(B, spec.num_classes);
        for (std::int64_t r = 0; r < B; ++r) {
            const std::int32_t y = batch.labels[static_cast<std::size_t>(r)];
            if (y < 0 || y >= spec.num_classes)
                throw ConfigError("label " + std::to_string(y) +
                                  " out of range for " +
                                  std::to_string(spec.num_classes) +
                                  " classes");
            double mx = logits.at(r, 0);
            for (std::int64_t c = 1; c < spec.num_classes; ++c)
                mx = std::max(mx, logits.at(r, c));
            double z = 0.0;
            for (std::int64_t c = 0; c < spec.num_classes; ++c)
                z += std::exp(logits.at(r, c) - mx);
            const double logz = std::log(z) + mx;
            loss += logz - logits.at(r, y);
            for (std::int64_t c = 0; c < spec.num_classes; ++c) {
                const double p = std::exp(logits.at(r, c) - logz);
                dlogits.at(r, c) =
                    sign * (p - (c == y ? 1.0 : 0.0)) / static_cast<double>(B);
            }
        }
        out.loss = sign * loss / static_cast<double>(B);
        dense_backward(w, features, dlogits, out.grads["head.cls.weight"],
                       out.grads["head.cls.bias"], &dfeatures);
    } else {
        const Tensor& w = model.weights.at("head.recon.weight");
        const Tensor& b = model.weights.at("head.recon.bias");
        DMat recon;
        dense_forward_into(w, b, features, recon);
        const float* targets =
            batch.recon_targets ? batch.recon_targets : batch.x;
        const double denom = static_cast<double>(B * spec.recon_dim);
        double loss = 0.0;
        DMat drecon(B, spec.recon_dim);
        for (std::int64_t r = 0; r < B; ++r) {
            for (std::int64_t c = 0; c < spec.recon_dim; ++c) {
                const double diff =
                    recon.at(r, c) -
                    static_cast<double>(
                        targets[static_cast<std::size_t>(r * spec.recon_dim +
                                                         c)]);
                loss += diff * diff;
                drecon.at(r, c) = 2.0 * diff / denom;
            }
        }
        out.loss = loss / denom;
        dense_backward(w, features, drecon, out.grads["head.recon.weight"],
                       out.grads["head.recon.bias"], &dfeatures);
    }

    // Back through the trunk.
    DMat dh = std::move(dfeatures);
    for (std::size_t k = nlayers; k-- > 0;) {
        const LayerCache& c = cache[k];
        DMat dz(B, c.preact.cols);
        for (std::size_t i = 0; i < dz.data.size(); ++i) {
            const double grad_through =
                spec.activation == Activation::tanh_fn
                    ? 1.0 - c.output.data[i] * c.output.data[i]
                    : (c.preact.data[i] > 0.0 ? 1.0 : 0.0);
            dz.data[i] = dh.data[i] * grad_through;
        }
        const std::string base = "trunk." + std::to_string(k) + ".";
        const Tensor& w = model.weights.at(base + "weight");
        DMat dx;
        dense_backward(w, c.input, dz, out.grads[base + "weight"],
                       out.grads[base + "bias"], k > 0 ? &dx : nullptr);
        if (k > 0) dh = std::move(dx);
    }
    return out;
}

namespace {

// Epoch-reshuffled index stream; batches may straddle epoch boundaries.
class BatchSampler {
public:
    BatchSampler(std::int64_t n, std::uint64_t seed)
        : rng_(Rng::stream(seed, "batches")), perm_(
              static_cast<std::size_t>(n)) {
        for (std::int64_t i = 0; i < n; ++i)
            perm_[static_cast<std::size_t>(i)] = i;
        rng_.shuffle(perm_);
    }

    std::vector<std::int64_t> next(std::int64_t batch_size) {
        std::vector<std::int64_t> idx;
        idx.reserve(static_cast<std::size_t>(batch_size));
        while (static_cast<std::int64_t>(idx.size()) < batch_size) {
            if (cursor_ == perm_.size()) {
                rng_.shuffle(perm_);
                cursor_ = 0;
            }
            idx.push_back(perm_[cursor_++]);
        }
        return idx;
    }

private:
    Rng rng_;
    std::vector<std::int64_t> perm_;
    std::size_t cursor_ = 0;
};

} // namespace

FineTuneResult fine_tune(const Checkpoint& start, const MlpSpec& spec,
                         const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    validate_model(start, spec);
    if (data.dim() != spec.input_dim)
        throw ConfigError("input dim mismatch: dataset " +
                          std::to_string(data.dim()) + ", model expects " +
                          std::to_string(spec.input_dim));

    std::set<std::string> frozen(cfg.freeze.begin(), cfg.freeze.end());
    for (const auto& name : frozen)
        if (!start.weights.contains(name))
            throw ConfigError("freeze names unknown tensor '" + name + "'");

    FineTuneResult result;
    if (cfg.steps == 0) {
        result.final = start;
        result.snapshots.push_back({0, start});
        return result;
    }

    const Dataset::View train = data.view(Split::train);
    if (train.rows == 0) throw TrainError("empty train split");
    const bool classify = cfg.objective != Objective::reconstruction;
    if (classify) {
        for (std::int32_t y : train.y)
            if (y < 0 || y >= spec.num_classes)
                throw TrainError("label " + std::to_string(y) +
                                 " out of range for " +
                                 std::to_string(spec.num_classes) +
                                 " classes");
    }

    Checkpoint model = start;
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    std::map<std::string, std::vector<double>> m1, m2;
    for (const auto& [name, t] : model.weights) {
        if (frozen.count(name)) continue;
        m1[name].assign(t.data.size(), 0.0);
        m2[name].assign(t.data.size(), 0.0);
    }

    auto snapshot_meta = [&](Checkpoint ck, std::int64_t steps_done) {
        ck.meta.model_id = start.meta.model_id;
        ck.meta.arch_digest = spec.arch_digest();
        ck.meta.seed = cfg.seed;
        ck.meta.step = start.meta.step + static_cast<std::uint64_t>(steps_done);
        ck.meta.parent_hash = content_hash(start.weights);
        ck.meta.note = "fine_tune(" + to_string(cfg.objective) + ", " +
                       data.spec.task_id + ")";
        return ck;
    };

    if (cfg.snapshot_every > 0)
        result.snapshots.push_back({0, snapshot_meta(start, 0)});

    BatchSampler sampler(train.rows, cfg.seed);
    std::vector<float> bx(static_cast<std::size_t>(cfg.batch_size) *
                          static_cast<std::size_t>(train.cols));
    std::vector<std::int32_t> by(static_cast<std::size_t>(cfg.batch_size));

    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        const auto idx = sampler.next(cfg.batch_size);
        for (std::int64_t r = 0; r < cfg.batch_size; ++r) {
            const std::int64_t src = idx[static_cast<std::size_t>(r)];
            std::copy_n(&train.x[static_cast<std::size_t>(src * train.cols)],
                        train.cols,
                        &bx[static_cast<std::size_t>(r * train.cols)]);
            by[static_cast<std::size_t>(r)] =
                train.y[static_cast<std::size_t>(src)];
        }
        Batch batch;
        batch.x = bx.data();
        batch.rows = cfg.batch_size;
        batch.cols = train.cols;
        batch.labels = classify ? by.data() : nullptr;

        LossGrads lg = loss_and_grads(model, spec, batch, cfg.objective);
        if (!std::isfinite(lg.loss))
            throw TrainError("non-finite loss at step " +
                             std::to_string(step));
        result.loss_history.push_back(lg.loss);

        const double lr = lr_at(step, cfg);
        const double t = static_cast<double>(step + 1);
        const double bc1 = 1.0 - std::pow(kBeta1, t);
        const double bc2 = 1.0 - std::pow(kBeta2, t);
        for (const auto& [name, unused] : model.weights) {
            if (frozen.count(name)) continue;
            Tensor& w = model.weights.at(name);
            const std::vector<double>& g = lg.grads.at(name);
            std::vector<double>& mm = m1.at(name);
            std::vector<double>& vv = m2.at(name);
            for (std::size_t i = 0; i < w.data.size(); ++i) {
                mm[i] = kBeta1 * mm[i] + (1.0 - kBeta1) * g[i];
                vv[i] = kBeta2 * vv[i] + (1.0 - kBeta2) * g[i] * g[i];
                const double mhat = mm[i] / bc1;
                const double vhat = vv[i] / bc2;
                const double wd = static_cast<double>(w.data[i]);
                w.data[i] = static_cast<float>(
                    wd - lr * (mhat / (std::sqrt(vhat) + kEps) +
                               cfg.weight_decay * wd));
            }
        }

        const std::int64_t done = step + 1;
        if (cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0 &&
            done != cfg.steps)
            result.snapshots.push_back({done, snapshot_meta(model, done)});
    }

    result.final = snapshot_meta(model, cfg.steps);
    result.snapshots.push_back({cfg.steps, result.final});
    return result;
}

} // namespace taskvec
