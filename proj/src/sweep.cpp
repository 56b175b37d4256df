#include "taskvec/sweep.hpp"

#include <cstdio>
#include <fstream>

namespace taskvec {

namespace {

// Evaluator failures are rethrown with the grid point attached so a crash
// deep inside a long sweep is traceable to its coefficients.
EvalMetrics eval_at(const Evaluator& eval, const Checkpoint& edited,
                    const std::vector<double>& coeffs) {
    try {
        return eval(edited);
    } catch (const std::exception& e) {
        std::string where;
        char buf[32];
        for (double c : coeffs) {
            if (!where.empty()) where += ",";
            std::snprintf(buf, sizeof(buf), "%g", c);
            where += buf;
        }
        throw Error("evaluator failed at coeff " + where + ": " + e.what());
    }
}

} // namespace

CoeffGrid CoeffGrid::fine() {
    CoeffGrid g;
    for (int i = 0; i <= 20; ++i) g.values.push_back(i * 0.05);
    return g;
}

CoeffGrid CoeffGrid::coarse() {
    CoeffGrid g;
    for (int i = 0; i <= 10; ++i) g.values.push_back(i * 0.1);
    return g;
}

void CoeffGrid::validate() const {
    if (values.empty()) throw ConfigError("coefficient grid is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] < 0.0)
            throw ConfigError("coefficient grid values must be >= 0");
        if (i > 0 && values[i] <= values[i - 1])
            throw ConfigError("coefficient grid must be strictly ascending");
    }
}

void SweepResult::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("cannot write file: " + path.string());
    const std::size_t ncoeff = rows.empty() ? 1 : rows[0].coeffs.size();
    for (std::size_t i = 0; i < ncoeff; ++i) os << "lambda" << i << ",";
    os << "target,control\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        os << buf;
    };
    for (const auto& row : rows) {
        for (double c : row.coeffs) {
            put(c);
            os << ",";
        }
        put(row.target_metric);
        os << ",";
        if (row.control_metric) put(*row.control_metric);
        os << "\n";
    }
    if (!os) throw ConfigError("write failed: " + path.string());
}

SweepResult sweep(const Checkpoint& base, const ArithExpr& expr,
                  const CoeffGrid& grid, const Evaluator& eval) {
    grid.validate();
    const TaskVector tv = eval_expr(expr);
    SweepResult out;
    out.rows.reserve(grid.size());
    for (double coeff : grid.values) {
        const Checkpoint edited = apply(base, tv, coeff);
        const EvalMetrics m = eval_at(eval, edited, {coeff});
        out.rows.push_back({{coeff}, m.target, m.control});
    }
    return out;
}

Selection select_negation(const SweepResult& result, double control_reference,
                          double retain) {
    if (result.rows.empty()) throw ConfigError("selection over empty sweep");
    const double threshold = retain * control_reference;
    const SweepRow* best = nullptr;
    for (const auto& row : result.rows) {
        if (!row.control_metric)
            throw ConfigError("negation selection needs control metrics");
        if (*row.control_metric >= threshold &&
            (!best || row.coeffs > best->coeffs))
            best = &row;
    }
    Selection sel;
    if (best) {
        sel.coeffs = best->coeffs;
        sel.row = *best;
        return sel;
    }
    // Nothing retains enough control skill: fall back to "do not edit".
    sel.warning = true;
    sel.coeffs.assign(result.rows[0].coeffs.size(), 0.0);
    for (const auto& row : result.rows)
        if (row.coeffs == sel.coeffs) sel.row = row;
    return sel;
}

Selection select_max(const SweepResult& result) {
    if (result.rows.empty()) throw ConfigError("selection over empty sweep");
    const SweepRow* best = &result.rows[0];
    for (const auto& row : result.rows) {
        if (row.target_metric > best->target_metric ||
            (row.target_metric == best->target_metric &&
             row.coeffs < best->coeffs))
            best = &row;
    }
    Selection sel;
    sel.coeffs = best->coeffs;
    sel.row = *best;
    return sel;
}

SweepResult sweep_two(const Checkpoint& base, const TaskVector& sup,
                      const TaskVector& target_unsup,
                      const TaskVector& aux_unsup, const CoeffGrid& sup_grid,
                      const CoeffGrid& unsup_grid, const Evaluator& eval) {
    sup_grid.validate();
    unsup_grid.validate();
    const ArithExpr leaf_sup = ArithExpr::leaf(sup);
    const ArithExpr leaf_delta = ArithExpr::sum(
        {ArithExpr::leaf(target_unsup),
         ArithExpr::neg(ArithExpr::leaf(aux_unsup))});
    SweepResult out;
    out.rows.reserve(sup_grid.size() * unsup_grid.size());
    for (double ls : sup_grid.values) {
        for (double lu : unsup_grid.values) {
            const ArithExpr expr = ArithExpr::sum(
                {ArithExpr::scaled(ls, leaf_sup),
                 ArithExpr::scaled(lu, leaf_delta)});
            const Checkpoint edited = apply(base, expr, 1.0);
            const EvalMetrics m = eval_at(eval, edited, {ls, lu});
            out.rows.push_back({{ls, lu}, m.target, m.control});
        }
    }
    return out;
}

SweepResult sweep_three(const Checkpoint& base, const TaskVector& a,
                        const TaskVector& b, const TaskVector& c,
                        const CoeffGrid& grid, const Evaluator& eval) {
    grid.validate();
    const ArithExpr leaf_a = ArithExpr::leaf(a);
    const ArithExpr leaf_b = ArithExpr::leaf(b);
    const ArithExpr leaf_c = ArithExpr::leaf(c);
    SweepResult out;
    out.rows.reserve(grid.size() * grid.size() * grid.size());
    for (double la : grid.values) {
        for (double lb : grid.values) {
            for (double lc : grid.values) {
                const ArithExpr expr = ArithExpr::sum(
                    {ArithExpr::scaled(lc, leaf_c),
                     ArithExpr::scaled(lb, leaf_b),
                     ArithExpr::scaled(-la, leaf_a)});
                const Checkpoint edited = apply(base, expr, 1.0);
                const EvalMetrics m = eval_at(eval, edited, {la, lb, lc});
                out.rows.push_back({{la, lb, lc}, m.target, m.control});
            }
        }
    }
    return out;
}

} // namespace taskvec
