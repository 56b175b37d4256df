#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "taskvec/arith.hpp"
#include "taskvec/errors.hpp"
#include "taskvec/hash.hpp"
#include "taskvec/io.hpp"
#include "taskvec/tensor.hpp"

using namespace taskvec;
namespace fs = std::filesystem;

namespace {

TaskVector tv(std::vector<float> w) {
    const std::int64_t n = static_cast<std::int64_t>(w.size());
    TaskVector v;
    v.delta.insert("w", Tensor({n}, std::move(w)));
    v.provenance.task_id = "unit";
    return v;
}

Checkpoint ckpt(std::vector<float> w, const std::string& id = "m") {
    const std::int64_t n = static_cast<std::int64_t>(w.size());
    Checkpoint c;
    c.meta.model_id = id;
    c.weights.insert("w", Tensor({n}, std::move(w)));
    return c;
}

// Distance in representable float steps. Maps the bit pattern to a
// monotone integer line so that adjacent floats differ by exactly 1.
std::int64_t ulp_distance(float a, float b) {
    auto key = [](float f) {
        std::int32_t bits;
        std::memcpy(&bits, &f, 4);
        return bits < 0 ? std::int64_t{std::numeric_limits<std::int32_t>::min()} - bits
                        : std::int64_t{bits};
    };
    const std::int64_t d = key(a) - key(b);
    return d < 0 ? -d : d;
}

Checkpoint random_checkpoint(std::uint32_t seed, std::size_t n = 300) {
    std::mt19937 gen(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> a(n), b(2 * n);
    for (auto& v : a) v = dist(gen);
    for (auto& v : b) v = dist(gen);
    Checkpoint c;
    c.meta.model_id = "rand" + std::to_string(seed);
    c.weights.insert("layer.bias",
                     Tensor({static_cast<std::int64_t>(n)}, std::move(a)));
    c.weights.insert("layer.weight",
                     Tensor({2, static_cast<std::int64_t>(n)}, std::move(b)));
    return c;
}

} // namespace

TEST_CASE("diff subtracts elementwise and records provenance") {
    const Checkpoint pre = ckpt({1.0f, 2.0f}, "pre");
    const Checkpoint ft = ckpt({3.0f, 5.0f}, "ft");
    const TaskVector d = diff(ft, pre, "demo");
    CHECK(d.delta.at("w").data == std::vector<float>{2.0f, 3.0f});
    CHECK(d.provenance.kind == VectorKind::finetune_diff);
    CHECK(d.provenance.task_id == "demo");
    CHECK(d.provenance.pre_hash == content_hash(pre.weights));
    REQUIRE(d.provenance.ft_hash.has_value());
    CHECK(*d.provenance.ft_hash == content_hash(ft.weights));
}

TEST_CASE("diff of a checkpoint with itself is exactly zero") {
    const Checkpoint c = random_checkpoint(11);
    const TaskVector d = diff(c, c);
    for (const auto& [name, t] : d.delta)
        for (float v : t.data) CHECK(v == 0.0f);
    // Empty task_id falls back to the fine-tuned model's id.
    CHECK(d.provenance.task_id == c.meta.model_id);
}

TEST_CASE("diff requires matching layouts") {
    const Checkpoint pre = ckpt({1.0f, 2.0f});
    Checkpoint other;
    other.weights.insert("w", Tensor({3}, {1.0f, 2.0f, 3.0f}));
    CHECK_THROWS_AS(diff(other, pre), CompatError);
}

TEST_CASE("negation flips every element") {
    const TaskVector t = tv({2.0f, -3.0f});
    const TaskVector n = negate(t);
    CHECK(n.delta.at("w").data == std::vector<float>{-2.0f, 3.0f});

    const TaskVector z = tv({0.0f, 0.0f});
    const TaskVector nz = negate(z);
    for (float v : nz.delta.at("w").data) CHECK(v == 0.0f);
}

TEST_CASE("double negation is bit-exact") {
    const Checkpoint a = random_checkpoint(3), b = random_checkpoint(4);
    const TaskVector t = diff(a, b);
    const TaskVector back = negate(negate(t));
    for (const auto& [name, orig] : t.delta) {
        const Tensor& r = back.delta.at(name);
        REQUIRE(r.data.size() == orig.data.size());
        CHECK(std::memcmp(r.data.data(), orig.data.data(),
                          orig.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("sum of vectors") {
    const TaskVector a = tv({1.0f, 0.0f});
    const TaskVector b = tv({0.5f, 2.0f});
    CHECK(sum({a, b}).delta.at("w").data == std::vector<float>{1.5f, 2.0f});
    CHECK(sum({a}).delta.at("w").data == a.delta.at("w").data);
    CHECK_THROWS_AS(sum({}), ConfigError);

    const Checkpoint c1 = random_checkpoint(5), c2 = random_checkpoint(6);
    const TaskVector t = diff(c1, c2);
    const TaskVector cancel = sum({t, negate(t)});
    for (const auto& [name, tens] : cancel.delta)
        for (std::size_t i = 0; i < tens.data.size(); ++i)
            CHECK(ulp_distance(tens.data[i], 0.0f) <= 1);
}

TEST_CASE("analogy composes c + b - a") {
    const TaskVector tA = tv({1.0f});
    const TaskVector tB = tv({4.0f});
    const TaskVector tC = tv({2.0f});
    CHECK(analogy(tA, tB, tC).delta.at("w").data == std::vector<float>{5.0f});
    CHECK(analogy(tA, tA, tC).delta.at("w").data == tC.delta.at("w").data);

    const TaskVector zero = tv({0.0f});
    CHECK(analogy(zero, tB, tC).delta.at("w").data ==
          sum({tB, tC}).delta.at("w").data);
    CHECK(analogy(tA, tB, tC).provenance.kind == VectorKind::composite);
}

TEST_CASE("apply at coefficient zero is a no-op on the weights") {
    const Checkpoint base = random_checkpoint(21);
    const TaskVector t = diff(random_checkpoint(22), base);
    const Checkpoint out = apply(base, t, 0.0);
    CHECK(content_hash(out.weights) == content_hash(base.weights));
    // Lineage still updates even though the values are untouched.
    REQUIRE(out.meta.parent_hash.has_value());
    CHECK(*out.meta.parent_hash == content_hash(base.weights));
}

TEST_CASE("apply at coefficient one recovers the fine-tuned weights") {
    // Training moves weights by amounts small relative to the weights
    // themselves; the one-ulp recovery guarantee lives in that regime, so
    // model it with a proportional perturbation.
    const Checkpoint pre = random_checkpoint(31);
    Checkpoint ft = pre;
    std::mt19937 gen(32);
    std::uniform_real_distribution<float> rel(-0.01f, 0.01f);
    for (const auto& [name, t0] : pre.weights) {
        Tensor& t1 = ft.weights.at(name);
        for (auto& v : t1.data) v *= 1.0f + rel(gen);
    }
    const TaskVector t = diff(ft, pre);
    const Checkpoint back = apply(pre, t, 1.0);
    std::int64_t worst = 0;
    for (const auto& [name, tens] : back.weights) {
        const Tensor& want = ft.weights.at(name);
        for (std::size_t i = 0; i < tens.data.size(); ++i)
            worst = std::max(worst,
                             ulp_distance(tens.data[i], want.data[i]));
    }
    CHECK(worst <= 1);
}

TEST_CASE("half-strength two-vector sum equals the parameter average") {
    const Checkpoint pre = random_checkpoint(41);
    const Checkpoint ft1 = random_checkpoint(42);
    const Checkpoint ft2 = random_checkpoint(43);
    const ArithExpr expr =
        ArithExpr::sum({ArithExpr::leaf(diff(ft1, pre)),
                        ArithExpr::leaf(diff(ft2, pre))});
    const Checkpoint mixed = apply(pre, expr, 0.5);
    for (const auto& [name, tens] : mixed.weights) {
        const Tensor& a = ft1.weights.at(name);
        const Tensor& b = ft2.weights.at(name);
        for (std::size_t i = 0; i < tens.data.size(); ++i) {
            const double avg = 0.5 * (static_cast<double>(a.data[i]) +
                                      static_cast<double>(b.data[i]));
            CHECK(std::abs(tens.data[i] - avg) < 1e-6);
        }
    }
}

TEST_CASE("apply is linear in the coefficient") {
    const Checkpoint base = random_checkpoint(51);
    const TaskVector t = diff(random_checkpoint(52), base);
    const ArithExpr expr = ArithExpr::leaf(t);
    const double a = 0.3, b = 0.45;
    const Checkpoint direct = apply(base, expr, a + b);
    const Checkpoint staged = apply(apply(base, expr, a), expr, b);
    for (const auto& [name, tens] : direct.weights) {
        const Tensor& s = staged.weights.at(name);
        for (std::size_t i = 0; i < tens.data.size(); ++i)
            CHECK(std::abs(tens.data[i] - s.data[i]) < 1e-6);
    }
}

TEST_CASE("norms and dot products") {
    CHECK(l2_norm(tv({3.0f, 4.0f}).delta) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(l2_norm(tv({0.0f, 0.0f}).delta) == 0.0);

    const TaskVector v = tv({3.0f, 4.0f});
    const auto norms = per_layer_norms(v);
    REQUIRE(norms.size() == 1);
    CHECK(norms.at("w") == doctest::Approx(5.0).epsilon(1e-12));

    TaskVector two;
    two.delta.insert("a", Tensor({2}, {3.0f, 4.0f}));
    two.delta.insert("b", Tensor({1}, {0.0f}));
    const auto norms2 = per_layer_norms(two);
    CHECK(norms2.at("a") == doctest::Approx(5.0));
    CHECK(norms2.at("b") == 0.0);
}

TEST_CASE("cosine similarity") {
    const TaskVector t1 = tv({1.0f, 0.0f});
    const TaskVector t2 = tv({1.0f, 1.0f});
    CHECK(std::abs(cosine(t1, t2) - 0.7071067811865475) < 1e-12);
    CHECK(std::abs(cosine(t1, t1) - 1.0) < 1e-12);
    CHECK(std::abs(cosine(t1, negate(t1)) + 1.0) < 1e-12);
    CHECK(cosine(t1, t2) == cosine(t2, t1));

    // Invariant under positive uniform scaling of either side.
    const TaskVector t1x2 = sum({t1, t1});
    CHECK(std::abs(cosine(t1x2, t2) - cosine(t1, t2)) < 1e-12);

    CHECK_THROWS_AS(cosine(tv({0.0f, 0.0f}), t1), ConfigError);

    const Checkpoint a = random_checkpoint(61), b = random_checkpoint(62),
                     c = random_checkpoint(63);
    const double cs = cosine(diff(a, c), diff(b, c));
    CHECK(std::abs(cs) <= 1.0 + 1e-12);
}

TEST_CASE("random matched vectors preserve per-layer norms") {
    const Checkpoint pre = random_checkpoint(71);
    const Checkpoint ft = random_checkpoint(72);
    TaskVector t = diff(ft, pre, "ref");

    const TaskVector r1 = random_matched(t, 123);
    const TaskVector r2 = random_matched(t, 123);
    const TaskVector r3 = random_matched(t, 124);

    const auto want = per_layer_norms(t);
    const auto got = per_layer_norms(r1);
    for (const auto& [name, n] : want) {
        CHECK(std::abs(got.at(name) - n) / std::max(n, 1e-30) < 1e-6);
    }
    CHECK(r1.provenance.kind == VectorKind::random_matched);

    // Same seed reproduces bitwise; a different seed does not.
    CHECK(content_hash(r1.delta) == content_hash(r2.delta));
    CHECK(content_hash(r1.delta) != content_hash(r3.delta));
    // The draw is a genuinely different direction, not a copy.
    CHECK(std::abs(cosine(r1, t)) < 0.5);
}

TEST_CASE("random matched maps zero layers to zero layers") {
    TaskVector t;
    t.delta.insert("live", Tensor({2}, {3.0f, 4.0f}));
    t.delta.insert("frozen", Tensor({2}, {0.0f, 0.0f}));
    const TaskVector r = random_matched(t, 5);
    for (float v : r.delta.at("frozen").data) CHECK(v == 0.0f);
    CHECK(per_layer_norms(r).at("live") == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("expression evaluation matches the direct operations") {
    const Checkpoint base = random_checkpoint(81);
    const TaskVector tA = diff(random_checkpoint(82), base);
    const TaskVector tB = diff(random_checkpoint(83), base);
    const TaskVector tC = diff(random_checkpoint(84), base);

    CHECK(content_hash(ArithExpr::neg(ArithExpr::leaf(tA)).eval().delta) ==
          content_hash(negate(tA).delta));
    CHECK(content_hash(
              ArithExpr::scaled(2.0, ArithExpr::leaf(tA)).eval().delta) ==
          content_hash(sum({tA, tA}).delta));
    const ArithExpr an = ArithExpr::sum({ArithExpr::leaf(tC),
                                         ArithExpr::leaf(tB),
                                         ArithExpr::neg(ArithExpr::leaf(tA))});
    CHECK(content_hash(an.eval().delta) ==
          content_hash(analogy(tA, tB, tC).delta));

    CHECK_THROWS_AS(ArithExpr::sum({}), ConfigError);
    CHECK_FALSE(an.describe().empty());
}

TEST_CASE("task vector files roundtrip and reject plain checkpoints") {
    const Checkpoint pre = random_checkpoint(91);
    const Checkpoint ft = random_checkpoint(92);
    const TaskVector t = diff(ft, pre, "io-check");

    const fs::path p = fs::temp_directory_path() / "taskvec_arith_rt.tvkp";
    save_task_vector(t, p);
    const TaskVector r = load_task_vector(p);
    CHECK(content_hash(r.delta) == content_hash(t.delta));
    CHECK(r.provenance.task_id == "io-check");
    CHECK(r.provenance.kind == VectorKind::finetune_diff);
    CHECK(r.provenance.pre_hash == t.provenance.pre_hash);
    REQUIRE(r.provenance.ft_hash.has_value());
    CHECK(*r.provenance.ft_hash == *t.provenance.ft_hash);

    const fs::path cp = fs::temp_directory_path() / "taskvec_arith_ckpt.tvkp";
    save_checkpoint(pre, cp);
    CHECK_THROWS_AS(load_task_vector(cp), ConfigError);
    fs::remove(p);
    fs::remove(cp);
}
