#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "taskvec/tensor.hpp"

namespace taskvec {

enum class Split { train, val, test };

std::string to_string(Split s);

struct SplitSizes {
    std::int64_t train = 512;
    std::int64_t val = 128;
    std::int64_t test = 512;

    bool operator==(const SplitSizes&) const = default;
};

// A synthetic classification task is a (content, style) pair:
//   content_id  picks the label semantics: fixed unit-vector class centers
//               drawn from a stream keyed by content_id alone,
//   style_id    picks an affine input transform (rotation, global scale,
//               translation) keyed by style_id alone; style 0 is identity.
// Samples are center[label] + noise, pushed through the style transform.
// Raw samples depend only on (seed, content_id, split), so two specs that
// differ in style see the same underlying points through different lenses.
//
// content_id 0 is reserved for the control task.
struct SyntheticTaskSpec {
    std::string task_id;
    std::uint64_t content_id = 1;
    std::uint64_t style_id = 0;
    std::int64_t num_classes = 4;
    std::int64_t dim = 16;
    SplitSizes sizes;
    double noise_sigma = 0.18;
    std::uint64_t seed = 0;

    void validate() const;

    bool operator==(const SyntheticTaskSpec&) const = default;
};

struct Dataset {
    SyntheticTaskSpec spec;
    std::vector<float> inputs; // rows x spec.dim, row-major
    std::vector<std::int32_t> labels;
    std::vector<Split> split;

    std::int64_t rows() const {
        return static_cast<std::int64_t>(labels.size());
    }
    std::int64_t dim() const { return spec.dim; }
    std::int64_t count(Split s) const;

    // Contiguous copy of one split's rows.
    struct View {
        std::vector<float> x;
        std::vector<std::int32_t> y;
        std::int64_t rows = 0;
        std::int64_t cols = 0;
    };
    View view(Split s) const;
};

// x -> scale * (R x) + translation with R a product of Givens rotations.
// Determined entirely by (style_id, dim); style 0 is the identity.
struct StyleTransform {
    std::int64_t dim = 0;
    double scale = 1.0;
    std::vector<double> rotation; // dim x dim, row-major
    std::vector<double> translation;

    std::vector<double> apply(const std::vector<double>& x) const;
    std::vector<double> invert(const std::vector<double>& y) const;
};

StyleTransform style_transform(std::uint64_t style_id, std::int64_t dim);

// Unit-norm class centers for a content stream; depends only on
// (content_id, num_classes, dim) and is shared by every split and seed.
std::vector<std::vector<double>> content_centers(std::uint64_t content_id,
                                                 std::int64_t num_classes,
                                                 std::int64_t dim);

Dataset make_task(const SyntheticTaskSpec& spec);

// 16-way control task on content 0, identity style, larger splits.
Dataset make_control(std::uint64_t seed);
SyntheticTaskSpec control_spec(std::uint64_t seed);

// Specs for the eight-task bank used by the composition studies: contents
// 1..8, identity style.
std::vector<SyntheticTaskSpec> bank_specs(std::uint64_t seed);

// 2x2 (content, style) grid. Order: (c0,s0), (c1,s0), (c0,s1), (c1,s1), so
// cells 0 and 2 share content and cells 0 and 1 share style.
std::vector<SyntheticTaskSpec> grid_specs(std::uint64_t seed);

// Two domains (styles) over one content. Supervised labels are exposed only
// for the auxiliary domain and the held-out evaluation segment; the
// unsupervised segments carry zeroed labels and disjoint sample seeds.
struct DomainPair {
    Dataset aux_supervised;
    Dataset aux_unsupervised;
    Dataset target_unsupervised;
    Dataset target_supervised_eval;
};

DomainPair make_domain_pair(std::uint64_t seed);

// Rows "split,label,x0,...,x{dim-1}".
void export_csv(const Dataset& ds, const std::filesystem::path& path);

// Stack datasets of equal dim into one (split tags kept). Used to build
// broad pre-training mixtures.
Dataset concat_datasets(const std::vector<const Dataset*>& parts,
                        std::string task_id);

} // namespace taskvec
