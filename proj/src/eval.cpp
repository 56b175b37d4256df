#include "taskvec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace taskvec {

namespace {

std::int64_t argmax_row(const DMat& m, std::int64_t r) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < m.cols; ++c)
        if (m.at(r, c) > m.at(r, best)) best = c;
    return best;
}

} // namespace

double accuracy(const Checkpoint& model, const MlpSpec& spec,
                const Dataset& ds, Split split) {
    const Dataset::View v = ds.view(split);
    if (v.rows == 0)
        throw ConfigError("empty " + to_string(split) + " split");
    const ForwardOut out = forward(model, spec, v.x.data(), v.rows, v.cols);
    std::int64_t correct = 0;
    for (std::int64_t r = 0; r < v.rows; ++r)
        if (argmax_row(out.logits, r) == v.y[static_cast<std::size_t>(r)])
            ++correct;
    return static_cast<double>(correct) / static_cast<double>(v.rows);
}

double normalized_accuracy(double acc, double finetuned_acc) {
    if (finetuned_acc <= 0.0)
        throw ConfigError("normalized accuracy needs a positive reference");
    return acc / finetuned_acc;
}

double ensemble_accuracy(const Checkpoint& m1, const Checkpoint& m2,
                         double alpha, const MlpSpec& spec, const Dataset& ds,
                         Split split) {
    const Dataset::View v = ds.view(split);
    if (v.rows == 0)
        throw ConfigError("empty " + to_string(split) + " split");
    const ForwardOut o1 = forward(m1, spec, v.x.data(), v.rows, v.cols);
    const ForwardOut o2 = forward(m2, spec, v.x.data(), v.rows, v.cols);
    std::int64_t correct = 0;
    for (std::int64_t r = 0; r < v.rows; ++r) {
        std::int64_t best = 0;
        double best_val = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < spec.num_classes; ++c) {
            const double val =
                (1.0 - alpha) * o1.logits.at(r, c) + alpha * o2.logits.at(r, c);
            if (val > best_val) {
                best_val = val;
                best = c;
            }
        }
        if (best == v.y[static_cast<std::size_t>(r)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(v.rows);
}

std::vector<std::vector<double>> cosine_matrix(
    const std::vector<TaskVector>& vs) {
    const std::size_t n = vs.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        m[i][i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = cosine(vs[i], vs[j]);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    return m;
}

std::vector<TrajectoryPoint> trajectory_cosines(
    const std::vector<Snapshot>& snapshots, const Checkpoint& pre,
    const TaskVector& final_tv) {
    if (snapshots.empty())
        throw ConfigError("trajectory needs at least one snapshot");
    if (l2_norm(final_tv.delta) == 0.0)
        throw ConfigError("trajectory reference vector has zero norm");
    std::vector<TrajectoryPoint> out;
    out.reserve(snapshots.size());
    for (const auto& snap : snapshots) {
        const TaskVector v = diff(snap.ckpt, pre);
        TrajectoryPoint p;
        p.step = snap.step;
        if (l2_norm(v.delta) == 0.0) {
            p.defined = false;
        } else {
            p.cos = cosine(v, final_tv);
        }
        out.push_back(p);
    }
    return out;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw ConfigError("pearson inputs differ in length");
    if (xs.size() < 2)
        throw ConfigError("pearson needs at least two points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw ConfigError("pearson undefined for constant input");
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> r(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        // Average rank for ties, 1-based.
        const double avg = (static_cast<double>(i) +
                            static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw ConfigError("spearman inputs differ in length");
    return pearson(ranks(xs), ranks(ys));
}

} // namespace taskvec
