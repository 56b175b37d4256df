#pragma once

#include <cstdint>
#include <vector>

#include "taskvec/arith.hpp"
#include "taskvec/mlp.hpp"
#include "taskvec/synth.hpp"
#include "taskvec/train.hpp"

namespace taskvec {

// Fraction of a split classified correctly; argmax ties go to the lowest
// class index. Throws ConfigError on an empty split.
double accuracy(const Checkpoint& model, const MlpSpec& spec,
                const Dataset& ds, Split split);

// acc / finetuned_acc. finetuned_acc must be positive.
double normalized_accuracy(double acc, double finetuned_acc);

// Accuracy of the output ensemble (1 - alpha) * f(x; m1) + alpha * f(x; m2),
// mixing raw logits.
double ensemble_accuracy(const Checkpoint& m1, const Checkpoint& m2,
                         double alpha, const MlpSpec& spec, const Dataset& ds,
                         Split split);

// Pairwise cosine similarities; diagonal pinned to exactly 1.
std::vector<std::vector<double>> cosine_matrix(
    const std::vector<TaskVector>& vs);

struct TrajectoryPoint {
    std::int64_t step = 0;
    double cos = 0.0;
    bool defined = true; // false for the zero vector at step 0
};

// Cosine of each snapshot's diff-from-pre against the run's final task
// vector. The final snapshot of the producing run scores 1 within 1e-6.
std::vector<TrajectoryPoint> trajectory_cosines(
    const std::vector<Snapshot>& snapshots, const Checkpoint& pre,
    const TaskVector& final_tv);

// Sample Pearson correlation. Throws ConfigError when sizes differ, fewer
// than two points, or either side has zero variance.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Spearman rank correlation: Pearson over average ranks.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

} // namespace taskvec
