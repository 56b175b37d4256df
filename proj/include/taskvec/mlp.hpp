#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "taskvec/tensor.hpp"

namespace taskvec {

enum class Activation { tanh_fn, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Small MLP: a stack of dense trunk layers with a shared nonlinearity,
// a linear classification head, and an optional linear reconstruction head
// hanging off the same trunk features.
//
// Tensor names follow "trunk.<k>.weight" / "trunk.<k>.bias" and
// "head.cls.weight" / "head.cls.bias" / "head.recon.weight" /
// "head.recon.bias". Weight shapes are [out, in], row-major.
struct MlpSpec {
    std::int64_t input_dim = 16;
    std::vector<std::int64_t> trunk_widths = {64, 64};
    Activation activation = Activation::tanh_fn;
    std::int64_t num_classes = 16;
    std::int64_t recon_dim = 16; // 0 disables the reconstruction head

    void validate() const;

    // Digest of the architecture record; checkpoints carry it so mismatched
    // model/spec pairings fail loudly instead of silently misreading shapes.
    std::string arch_digest() const;

    // Canonical (name, shape) list for this architecture.
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> layout()
        const;
};

// Deterministic init: weights uniform in +-sqrt(6 / (fan_in + fan_out)) from
// a per-tensor stream keyed by (seed, name), biases zero.
Checkpoint init_model(const MlpSpec& spec, std::uint64_t seed);

// Row-major double matrix used for activations and logits.
struct DMat {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> data;

    DMat() = default;
    DMat(std::int64_t r, std::int64_t c)
        : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0) {}
    double& at(std::int64_t r, std::int64_t c) {
        return data[static_cast<std::size_t>(r * cols + c)];
    }
    double at(std::int64_t r, std::int64_t c) const {
        return data[static_cast<std::size_t>(r * cols + c)];
    }
};

struct ForwardOut {
    DMat logits;
    DMat recon; // rows == 0 when the model has no reconstruction head
};

// Batched forward pass in double precision. Throws ConfigError when the
// input width disagrees with the declared architecture, CompatError when the
// checkpoint does not have this architecture's tensors.
ForwardOut forward(const Checkpoint& model, const MlpSpec& spec,
                   const float* x, std::int64_t rows, std::int64_t cols);

void validate_model(const Checkpoint& model, const MlpSpec& spec);

} // namespace taskvec
