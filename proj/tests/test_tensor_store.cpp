#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskvec/errors.hpp"
#include "taskvec/hash.hpp"
#include "taskvec/io.hpp"
#include "taskvec/io_container.hpp"
#include "taskvec/tensor.hpp"

using namespace taskvec;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& stem) {
    static std::uint64_t counter = 0;
    return fs::temp_directory_path() /
           ("taskvec_store_" + std::to_string(++counter) + "_" + stem);
}

Checkpoint small_checkpoint() {
    Checkpoint c;
    c.meta.model_id = "unit";
    c.meta.arch_digest = "digest";
    c.meta.seed = 7;
    c.meta.step = 42;
    c.meta.note = "fixture";
    // Awkward values on purpose: negative zero, denormal, large magnitude.
    c.weights.insert("a.weight",
                     Tensor({2, 3}, {1.0f, -0.0f, 1e-40f, -3.5f, 2e20f, 0.25f}));
    c.weights.insert("b.bias", Tensor({2}, {-1.5f, 4.0f}));
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)),
                       std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    REQUIRE(os.good());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Runs fn and checks that it throws E (a taskvec error) whose message
// contains needle. Returns the full message for extra checks.
template <typename E = ConfigError, typename Fn>
std::string error_message(Fn&& fn, const std::string& needle) {
    try {
        fn();
    } catch (const E& e) {
        std::string msg = e.what();
        INFO("message: " << msg);
        CHECK(msg.find(needle) != std::string::npos);
        return msg;
    } catch (...) {
        FAIL("threw the wrong exception type");
        return "";
    }
    FAIL("expected an error containing '" << needle << "'");
    return "";
}

template <typename Fn>
std::string config_error_message(Fn&& fn, const std::string& needle) {
    return error_message<ConfigError>(std::forward<Fn>(fn), needle);
}

bool same_float_bits(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Hand-built container file so offset pathologies can be expressed that
// save_checkpoint itself would never emit.
std::string build_raw_file(const nlohmann::json& header,
                           const std::string& payload) {
    const std::string hs = header.dump();
    std::string out = "TVKP";
    std::uint32_t version = kTvkpVersion;
    std::uint64_t hlen = hs.size();
    out.append(reinterpret_cast<const char*>(&version), 4);
    out.append(reinterpret_cast<const char*>(&hlen), 8);
    out += hs;
    out += payload;
    return out;
}

nlohmann::json minimal_header(std::uint64_t offset_b) {
    nlohmann::json meta = {{"model_id", "m"}, {"arch_digest", "d"},
                           {"seed", 0},       {"step", 0},
                           {"parent_hash", nullptr}, {"note", ""}};
    nlohmann::json tensors;
    tensors["a"] = {{"dtype", "f32"}, {"shape", {2}}, {"offset", 0},
                    {"nbytes", 8}};
    tensors["b"] = {{"dtype", "f32"}, {"shape", {2}}, {"offset", offset_b},
                    {"nbytes", 8}};
    return nlohmann::json{{"meta", meta}, {"tensors", tensors}};
}

} // namespace

TEST_CASE("tensor construction checks shape against data length") {
    CHECK_NOTHROW(Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ConfigError);
    CHECK_THROWS_AS(Tensor({-1}, {}), ConfigError);
    Tensor z = Tensor::zeros({3, 4});
    CHECK(z.numel() == 12);
    for (float v : z.data) CHECK(v == 0.0f);
}

TEST_CASE("tensor map resolves names and reports misses") {
    TensorMap m;
    m.insert("w", Tensor({1}, {1.0f}));
    CHECK(m.contains("w"));
    CHECK_FALSE(m.contains("v"));
    CHECK_THROWS_AS(m.insert("", Tensor({1}, {2.0f})), ConfigError);
    CHECK_THROWS_AS(m.at("v"), CompatError);
    // Re-insertion under an existing name replaces the tensor.
    m.insert("w", Tensor({2}, {5.0f, 6.0f}));
    CHECK(m.size() == 1);
    CHECK(m.total_numel() == 2);
}

TEST_CASE("save then load returns bit-identical checkpoints") {
    const Checkpoint c = small_checkpoint();
    const fs::path p = temp_path("roundtrip.tvkp");
    save_checkpoint(c, p);
    const Checkpoint r = load_checkpoint(p);

    CHECK(r.meta == c.meta);
    REQUIRE(r.weights.size() == c.weights.size());
    for (const auto& [name, t] : c.weights) {
        REQUIRE(r.weights.contains(name));
        const Tensor& rt = r.weights.at(name);
        CHECK(rt.shape == t.shape);
        CHECK(same_float_bits(rt.data, t.data));
    }
    fs::remove(p);
}

TEST_CASE("empty checkpoint roundtrips") {
    Checkpoint c;
    c.meta.model_id = "empty";
    const fs::path p = temp_path("empty.tvkp");
    save_checkpoint(c, p);
    const Checkpoint r = load_checkpoint(p);
    CHECK(r.weights.empty());
    CHECK(r.meta.model_id == "empty");
    fs::remove(p);
}

TEST_CASE("two saves of the same checkpoint are byte-identical") {
    const Checkpoint c = small_checkpoint();
    const fs::path p1 = temp_path("first.tvkp");
    const fs::path p2 = temp_path("second.tvkp");
    save_checkpoint(c, p1);
    save_checkpoint(c, p2);
    const std::string b1 = slurp(p1), b2 = slurp(p2);
    CHECK(b1 == b2);
    CHECK(sha256_hex(b1) == sha256_hex(b2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("non-finite values are rejected at save") {
    Checkpoint c = small_checkpoint();
    c.weights.at("a.weight").data[3] = std::nanf("");
    const fs::path p = temp_path("nan.tvkp");
    config_error_message([&] { save_checkpoint(c, p); },
                         "non-finite value in tensor");

    Checkpoint inf = small_checkpoint();
    inf.weights.at("b.bias").data[0] = std::numeric_limits<float>::infinity();
    config_error_message([&] { save_checkpoint(inf, p); },
                         "non-finite value in tensor");
}

TEST_CASE("load rejects a payload with non-finite bits") {
    const Checkpoint c = small_checkpoint();
    const fs::path p = temp_path("nan_load.tvkp");
    save_checkpoint(c, p);
    std::string bytes = slurp(p);
    const std::uint32_t qnan = 0x7fc00000u;
    std::memcpy(bytes.data() + bytes.size() - 4, &qnan, 4);
    spit(p, bytes);
    config_error_message([&] { load_checkpoint(p); },
                         "non-finite value in tensor");
    fs::remove(p);
}

TEST_CASE("corrupt file taxonomy") {
    const Checkpoint c = small_checkpoint();
    const fs::path good = temp_path("good.tvkp");
    save_checkpoint(c, good);
    const std::string bytes = slurp(good);
    const fs::path p = temp_path("corrupt.tvkp");

    SUBCASE("bad magic") {
        std::string b = bytes;
        b.replace(0, 4, "XXXX");
        spit(p, b);
        config_error_message([&] { load_checkpoint(p); }, "bad magic");
    }
    SUBCASE("unsupported version") {
        std::string b = bytes;
        const std::uint32_t v = 9;
        std::memcpy(b.data() + 4, &v, 4);
        spit(p, b);
        config_error_message([&] { load_checkpoint(p); },
                             "unsupported version 9");
    }
    SUBCASE("file shorter than the fixed prologue") {
        spit(p, bytes.substr(0, 10));
        config_error_message([&] { load_checkpoint(p); }, "truncated header");
    }
    SUBCASE("header length pointing past the end") {
        spit(p, bytes.substr(0, 40));
        config_error_message([&] { load_checkpoint(p); }, "truncated header");
    }
    SUBCASE("header bytes that are not json") {
        std::string b = bytes;
        b[16] = '?';
        spit(p, b);
        config_error_message([&] { load_checkpoint(p); },
                             "invalid header json");
    }
    SUBCASE("payload truncated") {
        spit(p, bytes.substr(0, bytes.size() - 4));
        config_error_message([&] { load_checkpoint(p); },
                             "truncated payload");
    }
    SUBCASE("trailing bytes after the payload") {
        spit(p, bytes + "xx");
        config_error_message([&] { load_checkpoint(p); },
                             "trailing bytes after payload");
    }
    SUBCASE("missing file") {
        config_error_message([&] { load_checkpoint(temp_path("nope.tvkp")); },
                             "cannot open file");
    }
    fs::remove(good);
    fs::remove(p);
}

TEST_CASE("offset pathologies in a hand-built header") {
    const fs::path p = temp_path("offsets.tvkp");
    const std::string payload(16, '\0');

    SUBCASE("overlapping offsets") {
        spit(p, build_raw_file(minimal_header(4), payload));
        config_error_message([&] { load_checkpoint(p); },
                             "overlapping offsets at tensor 'b'");
    }
    SUBCASE("gap between tensors") {
        spit(p, build_raw_file(minimal_header(12),
                               std::string(20, '\0')));
        config_error_message([&] { load_checkpoint(p); },
                             "payload gap at tensor 'b'");
    }
    SUBCASE("contiguous offsets load fine") {
        spit(p, build_raw_file(minimal_header(8), payload));
        const Checkpoint r = load_checkpoint(p);
        CHECK(r.weights.size() == 2);
    }
    SUBCASE("nbytes disagreeing with the shape") {
        nlohmann::json h = minimal_header(8);
        h["tensors"]["b"]["nbytes"] = 12;
        spit(p, build_raw_file(h, std::string(20, '\0')));
        config_error_message([&] { load_checkpoint(p); },
                             "nbytes mismatch for tensor");
    }
    SUBCASE("unknown dtype") {
        nlohmann::json h = minimal_header(8);
        h["tensors"]["a"]["dtype"] = "f64";
        spit(p, build_raw_file(h, payload));
        config_error_message([&] { load_checkpoint(p); },
                             "unsupported dtype for tensor");
    }
    SUBCASE("unknown top-level header field") {
        nlohmann::json h = minimal_header(8);
        h["surprise"] = 1;
        spit(p, build_raw_file(h, payload));
        config_error_message([&] { load_checkpoint(p); },
                             "unexpected header field");
    }
    SUBCASE("unknown meta field") {
        nlohmann::json h = minimal_header(8);
        h["meta"]["extra"] = true;
        spit(p, build_raw_file(h, payload));
        config_error_message([&] { load_checkpoint(p); },
                             "unexpected meta field");
    }
    fs::remove(p);
}

TEST_CASE("content hash is stable, order-free and value-sensitive") {
    TensorMap a;
    a.insert("x", Tensor({2}, {1.0f, 2.0f}));
    a.insert("y", Tensor({1}, {3.0f}));

    TensorMap copy;
    copy.insert("y", Tensor({1}, {3.0f}));
    copy.insert("x", Tensor({2}, {1.0f, 2.0f}));

    CHECK(content_hash(a) == content_hash(copy));
    CHECK(a == copy);

    TensorMap tweaked;
    tweaked.insert("x", Tensor({2}, {1.0f + 1e-7f, 2.0f}));
    tweaked.insert("y", Tensor({1}, {3.0f}));
    CHECK(content_hash(a) != content_hash(tweaked));

    // Shape participates in the hash even when the flat data agrees.
    TensorMap reshaped;
    reshaped.insert("x", Tensor({2, 1}, {1.0f, 2.0f}));
    reshaped.insert("y", Tensor({1}, {3.0f}));
    CHECK(content_hash(a) != content_hash(reshaped));
}

TEST_CASE("content hash of the empty map matches the pinned digest") {
    // sha256 of zero bytes; the canonical stream for an empty map is empty.
    CHECK(content_hash(TensorMap{}) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("compatibility checks names and shapes both ways") {
    TensorMap a;
    a.insert("w", Tensor({4, 3}, std::vector<float>(12, 1.0f)));
    TensorMap same;
    same.insert("w", Tensor({4, 3}, std::vector<float>(12, 2.0f)));
    CHECK_NOTHROW(validate_compat(a, same));
    CHECK(is_compat(a, same));

    TensorMap extra = same;
    extra.insert("v", Tensor({1}, {0.0f}));
    error_message<CompatError>([&] { validate_compat(a, extra); },
                               "missing tensor");
    error_message<CompatError>([&] { validate_compat(extra, a); },
                               "missing tensor");
    CHECK(is_compat(a, extra) == is_compat(extra, a));

    TensorMap transposed;
    transposed.insert("w", Tensor({3, 4}, std::vector<float>(12, 1.0f)));
    error_message<CompatError>([&] { validate_compat(a, transposed); },
                               "shape mismatch");
    CHECK_FALSE(is_compat(a, transposed));
}

TEST_CASE("containers carry optional provenance") {
    const Checkpoint c = small_checkpoint();
    const fs::path p = temp_path("prov.tvkp");

    SUBCASE("with provenance fields") {
        ProvenanceFields fields = {{"pre_hash", "abc"},
                                   {"task_id", "demo"},
                                   {"kind", "finetune_diff"}};
        save_container(c, &fields, p);
        const LoadedContainer lc = load_container(p);
        CHECK(lc.has_provenance);
        CHECK(lc.provenance == fields);
        CHECK(lc.ckpt.meta == c.meta);
    }
    SUBCASE("plain checkpoints have none") {
        save_checkpoint(c, p);
        const LoadedContainer lc = load_container(p);
        CHECK_FALSE(lc.has_provenance);
        CHECK(lc.provenance.empty());
    }
    fs::remove(p);
}
