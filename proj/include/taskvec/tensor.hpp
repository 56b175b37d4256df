#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "taskvec/errors.hpp"

namespace taskvec {

// Dense float32 tensor, row-major. Shapes are validated on construction:
// every dimension must be positive and the flat size must match.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<std::int64_t> shape_, std::vector<float> data_);

    static Tensor zeros(std::vector<std::int64_t> shape_);

    std::int64_t numel() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool operator==(const Tensor&) const = default;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_str(const std::vector<std::int64_t>& shape);

// Ordered name -> Tensor collection. Backed by std::map, so iteration is
// always lexicographic by name regardless of insertion order; that ordering
// is the canonical one used for hashing and serialization.
class TensorMap {
public:
    using Storage = std::map<std::string, Tensor>;
    using const_iterator = Storage::const_iterator;

    TensorMap() = default;

    void insert(std::string name, Tensor t);
    bool contains(const std::string& name) const;
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::int64_t total_numel() const;

    const_iterator begin() const { return entries_.begin(); }
    const_iterator end() const { return entries_.end(); }

    bool operator==(const TensorMap&) const = default;

private:
    Storage entries_;
};

// Same names with the same shapes, in the same canonical order. Throws
// CompatError naming the first offending entry otherwise. Symmetric.
void validate_compat(const TensorMap& a, const TensorMap& b);
bool is_compat(const TensorMap& a, const TensorMap& b);

struct CheckpointMeta {
    std::string model_id;
    std::string arch_digest;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::optional<std::string> parent_hash;
    std::string note;

    bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
    TensorMap weights;
    CheckpointMeta meta;
};

} // namespace taskvec
