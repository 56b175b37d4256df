#include "taskvec/tensor.hpp"

#include <sstream>

namespace taskvec {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    for (auto d : shape) {
        if (d <= 0)
            throw ConfigError("tensor dimension must be positive, got " +
                              shape_str(shape));
    }
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
        throw ConfigError("tensor data size " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape_) {
    auto n = shape_numel(shape_);
    return Tensor(std::move(shape_), std::vector<float>(n, 0.0f));
}

std::int64_t Tensor::numel() const {
    return static_cast<std::int64_t>(data.size());
}

void TensorMap::insert(std::string name, Tensor t) {
    if (name.empty()) throw ConfigError("tensor name must not be empty");
    entries_.insert_or_assign(std::move(name), std::move(t));
}

bool TensorMap::contains(const std::string& name) const {
    return entries_.count(name) != 0;
}

const Tensor& TensorMap::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw CompatError("no tensor named '" + name + "'");
    return it->second;
}

Tensor& TensorMap::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw CompatError("no tensor named '" + name + "'");
    return it->second;
}

std::int64_t TensorMap::total_numel() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

void validate_compat(const TensorMap& a, const TensorMap& b) {
    auto ia = a.begin(), ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (ia->first != ib->first) {
            const std::string& missing = std::min(ia->first, ib->first);
            throw CompatError("missing tensor '" + missing + "' on one side");
        }
        if (ia->second.shape != ib->second.shape)
            throw CompatError("shape mismatch at '" + ia->first + "': " +
                              shape_str(ia->second.shape) + " vs " +
                              shape_str(ib->second.shape));
        ++ia;
        ++ib;
    }
    if (ia != a.end())
        throw CompatError("missing tensor '" + ia->first + "' on one side");
    if (ib != b.end())
        throw CompatError("missing tensor '" + ib->first + "' on one side");
}

bool is_compat(const TensorMap& a, const TensorMap& b) {
    try {
        validate_compat(a, b);
        return true;
    } catch (const CompatError&) {
        return false;
    }
}

} // namespace taskvec
