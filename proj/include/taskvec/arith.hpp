#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "taskvec/tensor.hpp"

namespace taskvec {

enum class VectorKind { finetune_diff, random_matched, composite };

std::string to_string(VectorKind k);
VectorKind vector_kind_from_string(const std::string& s);

struct Provenance {
    std::string pre_hash;               // content hash of the base weights
    std::optional<std::string> ft_hash; // set for plain fine-tune diffs
    std::string task_id;
    VectorKind kind = VectorKind::composite;
};

// Elementwise difference of two weight collections. Same algebra as the
// checkpoints themselves; all reductions over it accumulate in double.
struct TaskVector {
    TensorMap delta;
    Provenance provenance;
};

// finetuned - pretrained, elementwise. task_id defaults to the fine-tuned
// model's id when empty.
TaskVector diff(const Checkpoint& finetuned, const Checkpoint& pretrained,
                std::string task_id = "");

TaskVector negate(const TaskVector& v);

// Elementwise sum of one or more compatible vectors, accumulated in double
// and rounded to float once.
TaskVector sum(const std::vector<TaskVector>& vs);

// c + (b - a), evaluated in double per element with a single rounding.
TaskVector analogy(const TaskVector& a, const TaskVector& b,
                   const TaskVector& c);

// base + coeff * delta, computed in double per element, rounded to float
// once. coeff = 0 returns the base weights bit-exactly.
Checkpoint apply(const Checkpoint& base, const TaskVector& v, double coeff);

// Random direction that copies the reference's energy profile: each tensor is
// drawn i.i.d. normal from a per-name stream, then rescaled so its l2 norm
// equals the reference tensor's. A zero reference tensor stays zero.
TaskVector random_matched(const TaskVector& reference, std::uint64_t seed);

double l2_norm(const TensorMap& m);
double dot(const TensorMap& a, const TensorMap& b);

// Cosine similarity over the full flattened vectors, double accumulation.
// Throws ConfigError when either vector has zero norm.
double cosine(const TaskVector& a, const TaskVector& b);

std::map<std::string, double> per_layer_norms(const TaskVector& v);

// Expression tree over task vectors: leaf, negation, n-ary sum, scaling.
// Evaluation accumulates every element in double across the whole tree and
// rounds to float once at materialization.
class ArithExpr {
public:
    static ArithExpr leaf(TaskVector v);
    static ArithExpr neg(ArithExpr e);
    static ArithExpr sum(std::vector<ArithExpr> terms);
    static ArithExpr scaled(double coeff, ArithExpr e);

    TaskVector eval() const;
    std::string describe() const;

private:
    struct Node;
    friend struct ExprAccess;
    explicit ArithExpr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
    std::shared_ptr<const Node> node_;
};

TaskVector eval_expr(const ArithExpr& e);
Checkpoint apply(const Checkpoint& base, const ArithExpr& e, double coeff);

// Task vectors ride the checkpoint container with note = "taskvector" and
// their provenance stored in the header.
void save_task_vector(const TaskVector& v, const std::filesystem::path& path);
TaskVector load_task_vector(const std::filesystem::path& path);

} // namespace taskvec
