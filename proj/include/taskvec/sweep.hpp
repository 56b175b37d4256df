#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "taskvec/arith.hpp"
#include "taskvec/tensor.hpp"

namespace taskvec {

// Scaling-coefficient grid: non-empty, non-negative, strictly ascending.
struct CoeffGrid {
    std::vector<double> values;

    // 0 to 1 in steps of 0.05 (21 points).
    static CoeffGrid fine();
    // 0 to 1 in steps of 0.1 (11 points).
    static CoeffGrid coarse();

    void validate() const;
    std::size_t size() const { return values.size(); }
};

// What an evaluator reports for one edited model. target drives selection;
// control is optional and only some protocols use it.
struct EvalMetrics {
    double target = 0.0;
    std::optional<double> control;
};

using Evaluator = std::function<EvalMetrics(const Checkpoint&)>;

struct SweepRow {
    std::vector<double> coeffs;
    double target_metric = 0.0;
    std::optional<double> control_metric;
};

struct SweepResult {
    std::vector<SweepRow> rows;

    // "lambda0,...,target,control"; control column empty when absent.
    void write_csv(const std::filesystem::path& path) const;
};

// Evaluate base + coeff * expr at every grid point, in grid order. The
// evaluator runs exactly once per point.
SweepResult sweep(const Checkpoint& base, const ArithExpr& expr,
                  const CoeffGrid& grid, const Evaluator& eval);

struct Selection {
    std::vector<double> coeffs;
    std::optional<SweepRow> row; // absent when the fallback fired off-grid
    bool warning = false;        // no coefficient met the constraint
};

// Largest coefficient whose control metric retains at least `retain` of the
// reference control value. Falls back to 0 with a warning when none does.
// Rows must carry control metrics.
Selection select_negation(const SweepResult& result, double control_reference,
                          double retain = 0.95);

// Row with the best target metric; ties go to the lexicographically
// smallest coefficient tuple.
Selection select_max(const SweepResult& result);

// Two-coefficient sweep for cross-domain transfer:
//   base + ls * sup + lu * (target_unsup - aux_unsup)
// over sup_grid x unsup_grid, sup in the outer loop. Each row's coeffs are
// {ls, lu}.
SweepResult sweep_two(const Checkpoint& base, const TaskVector& sup,
                      const TaskVector& target_unsup,
                      const TaskVector& aux_unsup, const CoeffGrid& sup_grid,
                      const CoeffGrid& unsup_grid, const Evaluator& eval);

// Three-coefficient sweep for analogies:
//   base + lc * c + lb * b - la * a
// over grid^3 with la outermost, then lb, then lc. Coeffs are {la, lb, lc}.
SweepResult sweep_three(const Checkpoint& base, const TaskVector& a,
                        const TaskVector& b, const TaskVector& c,
                        const CoeffGrid& grid, const Evaluator& eval);

} // namespace taskvec
