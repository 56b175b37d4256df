#include "taskvec/arith.hpp"

#include <cmath>
#include <sstream>
#include <variant>

#include "taskvec/hash.hpp"
#include "taskvec/io_container.hpp"
#include "taskvec/rng.hpp"

namespace taskvec {

std::string to_string(VectorKind k) {
    switch (k) {
        case VectorKind::finetune_diff: return "finetune_diff";
        case VectorKind::random_matched: return "random_matched";
        case VectorKind::composite: return "composite";
    }
    throw Error("unreachable vector kind");
}

VectorKind vector_kind_from_string(const std::string& s) {
    if (s == "finetune_diff") return VectorKind::finetune_diff;
    if (s == "random_matched") return VectorKind::random_matched;
    if (s == "composite") return VectorKind::composite;
    throw ConfigError("unknown vector kind '" + s + "'");
}

TaskVector diff(const Checkpoint& finetuned, const Checkpoint& pretrained,
                std::string task_id) {
    validate_compat(finetuned.weights, pretrained.weights);
    TaskVector out;
    for (const auto& [name, ft] : finetuned.weights) {
        const Tensor& pre = pretrained.weights.at(name);
        std::vector<float> d(ft.data.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = static_cast<float>(static_cast<double>(ft.data[i]) -
                                      static_cast<double>(pre.data[i]));
        out.delta.insert(name, Tensor(ft.shape, std::move(d)));
    }
    out.provenance.pre_hash = content_hash(pretrained.weights);
    out.provenance.ft_hash = content_hash(finetuned.weights);
    out.provenance.task_id =
        task_id.empty() ? finetuned.meta.model_id : std::move(task_id);
    out.provenance.kind = VectorKind::finetune_diff;
    return out;
}

TaskVector negate(const TaskVector& v) {
    TaskVector out;
    for (const auto& [name, t] : v.delta) {
        std::vector<float> d(t.data.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = -t.data[i];
        out.delta.insert(name, Tensor(t.shape, std::move(d)));
    }
    out.provenance = v.provenance;
    out.provenance.kind = VectorKind::composite;
    out.provenance.ft_hash.reset();
    return out;
}

TaskVector sum(const std::vector<TaskVector>& vs) {
    if (vs.empty()) throw ConfigError("sum needs at least one vector");
    for (std::size_t i = 1; i < vs.size(); ++i)
        validate_compat(vs[0].delta, vs[i].delta);
    TaskVector out;
    for (const auto& [name, t0] : vs[0].delta) {
        std::vector<double> acc(t0.data.size(), 0.0);
        for (const auto& v : vs) {
            const Tensor& t = v.delta.at(name);
            for (std::size_t i = 0; i < acc.size(); ++i)
                acc[i] += static_cast<double>(t.data[i]);
        }
        std::vector<float> d(acc.size());
        for (std::size_t i = 0; i < acc.size(); ++i)
            d[i] = static_cast<float>(acc[i]);
        out.delta.insert(name, Tensor(t0.shape, std::move(d)));
    }
    out.provenance.kind = VectorKind::composite;
    bool same_pre = true;
    for (const auto& v : vs)
        same_pre = same_pre && v.provenance.pre_hash == vs[0].provenance.pre_hash;
    if (same_pre) out.provenance.pre_hash = vs[0].provenance.pre_hash;
    std::ostringstream id;
    id << "sum(";
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (i) id << "+";
        id << vs[i].provenance.task_id;
    }
    id << ")";
    out.provenance.task_id = id.str();
    return out;
}

TaskVector analogy(const TaskVector& a, const TaskVector& b,
                   const TaskVector& c) {
    validate_compat(a.delta, b.delta);
    validate_compat(a.delta, c.delta);
    TaskVector out;
    for (const auto& [name, tc] : c.delta) {
        const Tensor& ta = a.delta.at(name);
        const Tensor& tb = b.delta.at(name);
        std::vector<float> d(tc.data.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = static_cast<float>(static_cast<double>(tc.data[i]) +
                                      (static_cast<double>(tb.data[i]) -
                                       static_cast<double>(ta.data[i])));
        out.delta.insert(name, Tensor(tc.shape, std::move(d)));
    }
    out.provenance.kind = VectorKind::composite;
    out.provenance.pre_hash = c.provenance.pre_hash;
    out.provenance.task_id = c.provenance.task_id + "+(" +
                             b.provenance.task_id + "-" +
                             a.provenance.task_id + ")";
    return out;
}

Checkpoint apply(const Checkpoint& base, const TaskVector& v, double coeff) {
    validate_compat(base.weights, v.delta);
    Checkpoint out;
    for (const auto& [name, w] : base.weights) {
        const Tensor& t = v.delta.at(name);
        std::vector<float> d(w.data.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = static_cast<float>(static_cast<double>(w.data[i]) +
                                      coeff * static_cast<double>(t.data[i]));
        out.weights.insert(name, Tensor(w.shape, std::move(d)));
    }
    out.meta = base.meta;
    out.meta.parent_hash = content_hash(base.weights);
    std::ostringstream note;
    note << "apply(" << v.provenance.task_id << ", lambda=" << coeff << ")";
    out.meta.note = note.str();
    return out;
}

TaskVector random_matched(const TaskVector& reference, std::uint64_t seed) {
    TaskVector out;
    for (const auto& [name, t] : reference.delta) {
        Rng rng = Rng::stream(seed, "rand:" + name);
        std::vector<double> r = rng.normal_vec(t.data.size());
        double ref_sq = 0.0, r_sq = 0.0;
        for (float v : t.data) ref_sq += static_cast<double>(v) * v;
        for (double v : r) r_sq += v * v;
        const double ref_norm = std::sqrt(ref_sq);
        const double r_norm = std::sqrt(r_sq);
        const double scale = (r_norm > 0.0) ? ref_norm / r_norm : 0.0;
        std::vector<float> d(r.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = static_cast<float>(r[i] * scale);
        out.delta.insert(name, Tensor(t.shape, std::move(d)));
    }
    out.provenance = reference.provenance;
    out.provenance.kind = VectorKind::random_matched;
    out.provenance.ft_hash.reset();
    return out;
}

double l2_norm(const TensorMap& m) {
    double sq = 0.0;
    for (const auto& [name, t] : m)
        for (float v : t.data) sq += static_cast<double>(v) * v;
    return std::sqrt(sq);
}

double dot(const TensorMap& a, const TensorMap& b) {
    validate_compat(a, b);
    double acc = 0.0;
    for (const auto& [name, ta] : a) {
        const Tensor& tb = b.at(name);
        for (std::size_t i = 0; i < ta.data.size(); ++i)
            acc += static_cast<double>(ta.data[i]) *
                   static_cast<double>(tb.data[i]);
    }
    return acc;
}

double cosine(const TaskVector& a, const TaskVector& b) {
    const double na = l2_norm(a.delta);
    const double nb = l2_norm(b.delta);
    if (na == 0.0 || nb == 0.0)
        throw ConfigError("cosine undefined for zero-norm vector");
    return dot(a.delta, b.delta) / (na * nb);
}

std::map<std::string, double> per_layer_norms(const TaskVector& v) {
    std::map<std::string, double> out;
    for (const auto& [name, t] : v.delta) {
        double sq = 0.0;
        for (float x : t.data) sq += static_cast<double>(x) * x;
        out[name] = std::sqrt(sq);
    }
    return out;
}

// ---- expression trees -----------------------------------------------------

struct ArithExpr::Node {
    struct Leaf {
        TaskVector v;
    };
    struct Neg {
        ArithExpr e;
    };
    struct Sum {
        std::vector<ArithExpr> terms;
    };
    struct Scaled {
        double coeff;
        ArithExpr e;
    };
    std::variant<Leaf, Neg, Sum, Scaled> v;
};

ArithExpr ArithExpr::leaf(TaskVector v) {
    return ArithExpr(std::make_shared<const Node>(
        Node{Node::Leaf{std::move(v)}}));
}

ArithExpr ArithExpr::neg(ArithExpr e) {
    return ArithExpr(std::make_shared<const Node>(
        Node{Node::Neg{std::move(e)}}));
}

ArithExpr ArithExpr::sum(std::vector<ArithExpr> terms) {
    if (terms.empty()) throw ConfigError("sum needs at least one term");
    return ArithExpr(std::make_shared<const Node>(
        Node{Node::Sum{std::move(terms)}}));
}

ArithExpr ArithExpr::scaled(double coeff, ArithExpr e) {
    return ArithExpr(std::make_shared<const Node>(
        Node{Node::Scaled{coeff, std::move(e)}}));
}

using Acc = std::map<std::string, std::vector<double>>;

// Walkers live here because Node is private; this is the one declared friend.
struct ExprAccess {
    using Node = ArithExpr::Node;

    static const Node& node(const ArithExpr& e) { return *e.node_; }
    static const TaskVector* find_first_leaf(const ArithExpr& e);
    static void accumulate_expr(const ArithExpr& e, double factor, Acc& acc,
                                const TensorMap& layout);
    static std::string describe_expr(const ArithExpr& e);
};

const TaskVector* ExprAccess::find_first_leaf(const ArithExpr& e) {
    const Node& n = node(e);
    return std::visit(
        [&](const auto& node) -> const TaskVector* {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, Node::Leaf>) {
                return &node.v;
            } else if constexpr (std::is_same_v<T, Node::Neg>) {
                return find_first_leaf(node.e);
            } else if constexpr (std::is_same_v<T, Node::Sum>) {
                for (const auto& term : node.terms)
                    if (const auto* v = find_first_leaf(term)) return v;
                return nullptr;
            } else {
                return find_first_leaf(node.e);
            }
        },
        n.v);
}

void ExprAccess::accumulate_expr(const ArithExpr& e, double factor, Acc& acc,
                                 const TensorMap& layout) {
    const Node& n = node(e);
    std::visit(
        [&](const auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, Node::Leaf>) {
                validate_compat(layout, node.v.delta);
                for (const auto& [name, t] : node.v.delta) {
                    auto& dst = acc[name];
                    if (dst.empty()) dst.resize(t.data.size(), 0.0);
                    for (std::size_t i = 0; i < t.data.size(); ++i)
                        dst[i] += factor * static_cast<double>(t.data[i]);
                }
            } else if constexpr (std::is_same_v<T, Node::Neg>) {
                accumulate_expr(node.e, -factor, acc, layout);
            } else if constexpr (std::is_same_v<T, Node::Sum>) {
                for (const auto& term : node.terms)
                    accumulate_expr(term, factor, acc, layout);
            } else {
                accumulate_expr(node.e, factor * node.coeff, acc, layout);
            }
        },
        n.v);
}

std::string ExprAccess::describe_expr(const ArithExpr& e) {
    const Node& n = node(e);
    return std::visit(
        [&](const auto& node) -> std::string {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, Node::Leaf>) {
                return node.v.provenance.task_id.empty()
                           ? "<vector>"
                           : node.v.provenance.task_id;
            } else if constexpr (std::is_same_v<T, Node::Neg>) {
                return "-" + describe_expr(node.e);
            } else if constexpr (std::is_same_v<T, Node::Sum>) {
                std::ostringstream os;
                os << "(";
                for (std::size_t i = 0; i < node.terms.size(); ++i) {
                    if (i) os << " + ";
                    os << describe_expr(node.terms[i]);
                }
                os << ")";
                return os.str();
            } else {
                std::ostringstream os;
                os << node.coeff << "*" << describe_expr(node.e);
                return os.str();
            }
        },
        n.v);
}

TaskVector ArithExpr::eval() const { return eval_expr(*this); }

std::string ArithExpr::describe() const {
    return ExprAccess::describe_expr(*this);
}

TaskVector eval_expr(const ArithExpr& e) {
    const TaskVector* first = ExprAccess::find_first_leaf(e);
    if (!first) throw ConfigError("expression has no leaves");
    Acc acc;
    ExprAccess::accumulate_expr(e, 1.0, acc, first->delta);
    TaskVector out;
    for (const auto& [name, vals] : acc) {
        std::vector<float> d(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i)
            d[i] = static_cast<float>(vals[i]);
        out.delta.insert(name, Tensor(first->delta.at(name).shape,
                                      std::move(d)));
    }
    out.provenance.kind = VectorKind::composite;
    out.provenance.pre_hash = first->provenance.pre_hash;
    out.provenance.task_id = ExprAccess::describe_expr(e);
    return out;
}

Checkpoint apply(const Checkpoint& base, const ArithExpr& e, double coeff) {
    return apply(base, eval_expr(e), coeff);
}

void save_task_vector(const TaskVector& v, const std::filesystem::path& path) {
    Checkpoint container;
    container.weights = v.delta;
    container.meta.model_id = v.provenance.task_id;
    container.meta.note = "taskvector";
    if (!v.provenance.pre_hash.empty())
        container.meta.parent_hash = v.provenance.pre_hash;
    ProvenanceFields fields;
    fields["pre_hash"] = v.provenance.pre_hash;
    if (v.provenance.ft_hash) fields["ft_hash"] = *v.provenance.ft_hash;
    fields["task_id"] = v.provenance.task_id;
    fields["kind"] = to_string(v.provenance.kind);
    save_container(container, &fields, path);
}

TaskVector load_task_vector(const std::filesystem::path& path) {
    LoadedContainer c = load_container(path);
    if (c.ckpt.meta.note != "taskvector" || !c.has_provenance)
        throw ConfigError("not a task vector file: " + path.string());
    TaskVector out;
    out.delta = std::move(c.ckpt.weights);
    auto get = [&](const char* k) -> std::string {
        auto it = c.provenance.find(k);
        return it == c.provenance.end() ? std::string() : it->second;
    };
    out.provenance.pre_hash = get("pre_hash");
    out.provenance.task_id = get("task_id");
    if (c.provenance.count("ft_hash"))
        out.provenance.ft_hash = c.provenance.at("ft_hash");
    const std::string kind = get("kind");
    out.provenance.kind =
        kind.empty() ? VectorKind::composite : vector_kind_from_string(kind);
    return out;
}

} // namespace taskvec
