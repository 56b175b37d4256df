#include "taskvec/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "taskvec/rng.hpp"

namespace taskvec {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw Error("unreachable split");
}

void SyntheticTaskSpec::validate() const {
    if (dim <= 0) throw ConfigError("task dim must be positive");
    if (num_classes <= 0)
        throw ConfigError("task num_classes must be positive");
    if (noise_sigma < 0.0)
        throw ConfigError("task noise_sigma must be >= 0");
    if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0)
        throw ConfigError("split sizes must be >= 0");
}

std::int64_t Dataset::count(Split s) const {
    std::int64_t n = 0;
    for (auto t : split)
        if (t == s) ++n;
    return n;
}

Dataset::View Dataset::view(Split s) const {
    View v;
    v.cols = dim();
    for (std::int64_t r = 0; r < rows(); ++r) {
        if (split[static_cast<std::size_t>(r)] != s) continue;
        const float* row = &inputs[static_cast<std::size_t>(r * v.cols)];
        v.x.insert(v.x.end(), row, row + v.cols);
        v.y.push_back(labels[static_cast<std::size_t>(r)]);
        ++v.rows;
    }
    return v;
}

std::vector<double> StyleTransform::apply(const std::vector<double>& x) const {
    std::vector<double> y(static_cast<std::size_t>(dim), 0.0);
    for (std::int64_t i = 0; i < dim; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < dim; ++j)
            acc += rotation[static_cast<std::size_t>(i * dim + j)] *
                   x[static_cast<std::size_t>(j)];
        y[static_cast<std::size_t>(i)] =
            scale * acc + translation[static_cast<std::size_t>(i)];
    }
    return y;
}

std::vector<double> StyleTransform::invert(const std::vector<double>& y) const {
    // R is orthogonal, so the inverse is R^T (y - t) / scale.
    std::vector<double> shifted(static_cast<std::size_t>(dim));
    for (std::int64_t i = 0; i < dim; ++i)
        shifted[static_cast<std::size_t>(i)] =
            y[static_cast<std::size_t>(i)] -
            translation[static_cast<std::size_t>(i)];
    std::vector<double> x(static_cast<std::size_t>(dim), 0.0);
    for (std::int64_t i = 0; i < dim; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < dim; ++j)
            acc += rotation[static_cast<std::size_t>(j * dim + i)] *
                   shifted[static_cast<std::size_t>(j)];
        x[static_cast<std::size_t>(i)] = acc / scale;
    }
    return x;
}

namespace {

// Style strength knobs. Styles need to be mild enough that skills transfer
// across them linearly, but strong enough that a model trained on one style
// visibly underperforms on another.
constexpr double kStyleMaxAngle = 0.5;   // radians per Givens rotation
constexpr double kStyleScaleLo = 0.85;
constexpr double kStyleScaleHi = 1.15;
constexpr double kStyleShiftSigma = 0.15;

// Styles 3 and up carry a much larger offset and model whole-domain shifts
// rather than in-domain restyling. Two mildly shifted styles occupy nearly
// the same region of input space, so representation learning on unlabeled
// data from either one converges to nearly the same solution and the
// difference between those solutions carries no usable signal. A large
// offset separates the domains enough that each unlabeled fit adapts to
// its own region.
constexpr std::uint64_t kDomainStyleFloor = 3;
constexpr double kDomainShiftSigma = 0.3;

} // namespace

StyleTransform style_transform(std::uint64_t style_id, std::int64_t dim) {
    if (dim <= 0) throw ConfigError("style transform dim must be positive");
    StyleTransform t;
    t.dim = dim;
    t.rotation.assign(static_cast<std::size_t>(dim * dim), 0.0);
    for (std::int64_t i = 0; i < dim; ++i)
        t.rotation[static_cast<std::size_t>(i * dim + i)] = 1.0;
    t.translation.assign(static_cast<std::size_t>(dim), 0.0);
    if (style_id == 0) return t;

    Rng rng = Rng::stream(0, "style:" + std::to_string(style_id));
    const std::int64_t nrot = dim / 2;
    for (std::int64_t k = 0; k < nrot; ++k) {
        std::int64_t i = static_cast<std::int64_t>(
            rng.bounded(static_cast<std::uint64_t>(dim)));
        std::int64_t j = static_cast<std::int64_t>(
            rng.bounded(static_cast<std::uint64_t>(dim)));
        while (j == i)
            j = static_cast<std::int64_t>(
                rng.bounded(static_cast<std::uint64_t>(dim)));
        const double angle = rng.uniform(-kStyleMaxAngle, kStyleMaxAngle);
        const double c = std::cos(angle), s = std::sin(angle);
        // Left-multiply by the Givens rotation G(i, j, angle): only rows i
        // and j of the accumulated matrix change.
        for (std::int64_t col = 0; col < dim; ++col) {
            const double ri = t.rotation[static_cast<std::size_t>(i * dim + col)];
            const double rj = t.rotation[static_cast<std::size_t>(j * dim + col)];
            t.rotation[static_cast<std::size_t>(i * dim + col)] = c * ri - s * rj;
            t.rotation[static_cast<std::size_t>(j * dim + col)] = s * ri + c * rj;
        }
    }
    t.scale = rng.uniform(kStyleScaleLo, kStyleScaleHi);
    const double shift =
        style_id >= kDomainStyleFloor ? kDomainShiftSigma : kStyleShiftSigma;
    for (auto& v : t.translation) v = shift * rng.normal();
    return t;
}

std::vector<std::vector<double>> content_centers(std::uint64_t content_id,
                                                 std::int64_t num_classes,
                                                 std::int64_t dim) {
    Rng rng = Rng::stream(0, "content:" + std::to_string(content_id));
    std::vector<std::vector<double>> centers;
    centers.reserve(static_cast<std::size_t>(num_classes));
    for (std::int64_t c = 0; c < num_classes; ++c) {
        std::vector<double> v = rng.normal_vec(static_cast<std::size_t>(dim));
        double sq = 0.0;
        for (double x : v) sq += x * x;
        const double norm = std::sqrt(sq);
        for (double& x : v) x /= norm;
        centers.push_back(std::move(v));
    }
    return centers;
}

Dataset make_task(const SyntheticTaskSpec& spec) {
    spec.validate();
    const auto centers =
        content_centers(spec.content_id, spec.num_classes, spec.dim);
    const StyleTransform xf = style_transform(spec.style_id, spec.dim);

    Dataset ds;
    ds.spec = spec;
    const std::int64_t total =
        spec.sizes.train + spec.sizes.val + spec.sizes.test;
    ds.inputs.reserve(static_cast<std::size_t>(total * spec.dim));
    ds.labels.reserve(static_cast<std::size_t>(total));
    ds.split.reserve(static_cast<std::size_t>(total));

    const std::pair<Split, std::int64_t> parts[] = {
        {Split::train, spec.sizes.train},
        {Split::val, spec.sizes.val},
        {Split::test, spec.sizes.test},
    };
    for (const auto& [part, n] : parts) {
        // Raw draws are keyed by (seed, content, split) only, never style,
        // so restyled variants of a task see the same underlying points.
        Rng rng = Rng::stream(
            spec.seed, "samples:" + std::to_string(spec.content_id) + ":" +
                           to_string(part));
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int32_t label =
                static_cast<std::int32_t>(i % spec.num_classes);
            std::vector<double> x(static_cast<std::size_t>(spec.dim));
            const auto& center = centers[static_cast<std::size_t>(label)];
            for (std::int64_t d = 0; d < spec.dim; ++d)
                x[static_cast<std::size_t>(d)] =
                    center[static_cast<std::size_t>(d)] +
                    spec.noise_sigma * rng.normal();
            const std::vector<double> styled = xf.apply(x);
            for (double v : styled)
                ds.inputs.push_back(static_cast<float>(v));
            ds.labels.push_back(label);
            ds.split.push_back(part);
        }
    }
    return ds;
}

SyntheticTaskSpec control_spec(std::uint64_t seed) {
    SyntheticTaskSpec spec;
    spec.task_id = "control";
    spec.content_id = 0;
    spec.style_id = 0;
    spec.num_classes = 16;
    spec.sizes = {1024, 256, 1024};
    spec.seed = seed;
    return spec;
}

Dataset make_control(std::uint64_t seed) {
    return make_task(control_spec(seed));
}

std::vector<SyntheticTaskSpec> bank_specs(std::uint64_t seed) {
    std::vector<SyntheticTaskSpec> specs;
    for (std::uint64_t c = 1; c <= 8; ++c) {
        SyntheticTaskSpec s;
        s.task_id = "bank-" + std::to_string(c);
        s.content_id = c;
        s.style_id = 0;
        s.seed = splitmix64(seed + c);
        specs.push_back(std::move(s));
    }
    return specs;
}

std::vector<SyntheticTaskSpec> grid_specs(std::uint64_t seed) {
    const std::uint64_t contents[] = {100, 101};
    const std::uint64_t styles[] = {1, 2};
    std::vector<SyntheticTaskSpec> specs;
    for (std::uint64_t style : styles) {
        for (std::uint64_t content : contents) {
            SyntheticTaskSpec s;
            s.task_id = "grid-" + std::to_string(content) + "-" +
                        std::to_string(style);
            s.content_id = content;
            s.style_id = style;
            s.seed = splitmix64(seed + content * 10 + style);
            specs.push_back(std::move(s));
        }
    }
    return specs;
}

DomainPair make_domain_pair(std::uint64_t seed) {
    constexpr std::uint64_t kContent = 120;
    constexpr std::uint64_t kAuxStyle = 3;
    constexpr std::uint64_t kTargetStyle = 4;

    auto part = [&](const char* id, std::uint64_t style,
                    std::uint64_t salt) {
        SyntheticTaskSpec s;
        s.task_id = id;
        s.content_id = kContent;
        s.style_id = style;
        s.seed = splitmix64(seed + salt);
        return make_task(s);
    };

    DomainPair p;
    p.aux_supervised = part("domain-aux-sup", kAuxStyle, 1);
    p.aux_unsupervised = part("domain-aux-unsup", kAuxStyle, 2);
    p.target_unsupervised = part("domain-target-unsup", kTargetStyle, 3);
    p.target_supervised_eval = part("domain-target-eval", kTargetStyle, 4);
    // The unsupervised segments expose inputs only; zero the labels so
    // nothing downstream can lean on them by accident.
    for (auto* ds : {&p.aux_unsupervised, &p.target_unsupervised})
        std::fill(ds->labels.begin(), ds->labels.end(), 0);
    return p;
}

void export_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("cannot write file: " + path.string());
    os << "split,label";
    for (std::int64_t d = 0; d < ds.dim(); ++d) os << ",x" << d;
    os << "\n";
    char buf[32];
    for (std::int64_t r = 0; r < ds.rows(); ++r) {
        os << to_string(ds.split[static_cast<std::size_t>(r)]) << ","
           << ds.labels[static_cast<std::size_t>(r)];
        for (std::int64_t d = 0; d < ds.dim(); ++d) {
            // %.9g round-trips float32 exactly.
            std::snprintf(buf, sizeof(buf), "%.9g",
                          static_cast<double>(
                              ds.inputs[static_cast<std::size_t>(
                                  r * ds.dim() + d)]));
            os << "," << buf;
        }
        os << "\n";
    }
    if (!os) throw ConfigError("write failed: " + path.string());
}

Dataset concat_datasets(const std::vector<const Dataset*>& parts,
                        std::string task_id) {
    if (parts.empty()) throw ConfigError("concat needs at least one dataset");
    Dataset out;
    out.spec = parts[0]->spec;
    out.spec.task_id = std::move(task_id);
    out.spec.sizes = {0, 0, 0};
    for (const Dataset* p : parts) {
        if (p->dim() != parts[0]->dim())
            throw CompatError("concat dim mismatch: " +
                              std::to_string(p->dim()) + " vs " +
                              std::to_string(parts[0]->dim()));
        out.spec.num_classes =
            std::max(out.spec.num_classes, p->spec.num_classes);
        out.inputs.insert(out.inputs.end(), p->inputs.begin(),
                          p->inputs.end());
        out.labels.insert(out.labels.end(), p->labels.begin(),
                          p->labels.end());
        out.split.insert(out.split.end(), p->split.begin(), p->split.end());
        out.spec.sizes.train += p->spec.sizes.train;
        out.spec.sizes.val += p->spec.sizes.val;
        out.spec.sizes.test += p->spec.sizes.test;
    }
    return out;
}

} // namespace taskvec
