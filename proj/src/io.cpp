#include "taskvec/io.hpp"
#include "taskvec/io_container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "file format and hashing assume a little-endian host");

namespace taskvec {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'V', 'K', 'P'};

json meta_to_json(const CheckpointMeta& m) {
    json j;
    j["model_id"] = m.model_id;
    j["arch_digest"] = m.arch_digest;
    j["seed"] = m.seed;
    j["step"] = m.step;
    j["parent_hash"] = m.parent_hash ? json(*m.parent_hash) : json(nullptr);
    j["note"] = m.note;
    return j;
}

CheckpointMeta meta_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("header meta must be an object");
    for (const auto& [k, v] : j.items()) {
        if (k != "model_id" && k != "arch_digest" && k != "seed" &&
            k != "step" && k != "parent_hash" && k != "note")
            throw ConfigError("unexpected meta field '" + k + "'");
        (void)v;
    }
    CheckpointMeta m;
    m.model_id = j.at("model_id").get<std::string>();
    m.arch_digest = j.at("arch_digest").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.step = j.at("step").get<std::uint64_t>();
    const auto& ph = j.at("parent_hash");
    if (!ph.is_null()) m.parent_hash = ph.get<std::string>();
    m.note = j.at("note").get<std::string>();
    return m;
}

void check_finite(const TensorMap& tensors) {
    for (const auto& [name, t] : tensors)
        for (float v : t.data)
            if (!std::isfinite(v))
                throw ConfigError("non-finite value in tensor '" + name + "'");
}

template <typename T>
void write_le(std::ofstream& os, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    os.write(b, sizeof(T));
}

} // namespace

void save_container(const Checkpoint& ckpt, const ProvenanceFields* provenance,
                    const std::filesystem::path& path) {
    check_finite(ckpt.weights);

    json tensors = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.weights) {
        const std::uint64_t nbytes = t.data.size() * sizeof(float);
        tensors[name] = {{"dtype", "f32"},
                         {"shape", t.shape},
                         {"offset", offset},
                         {"nbytes", nbytes}};
        offset += nbytes;
    }

    json header;
    header["meta"] = meta_to_json(ckpt.meta);
    header["tensors"] = tensors;
    if (provenance) header["provenance"] = *provenance;
    // nlohmann objects iterate sorted by key, so dump() is deterministic.
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot write file: " + path.string());
    os.write(kMagic, 4);
    write_le<std::uint32_t>(os, kTvkpVersion);
    write_le<std::uint64_t>(os, header_str.size());
    os.write(header_str.data(),
             static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : ckpt.weights)
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    os.flush();
    if (!os) throw ConfigError("write failed: " + path.string());
}

LoadedContainer load_container(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open file: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());

    if (buf.size() < 16)
        throw ConfigError("truncated header in " + path.string());
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw ConfigError("bad magic in " + path.string());
    std::uint32_t version;
    std::memcpy(&version, buf.data() + 4, 4);
    if (version != kTvkpVersion)
        throw ConfigError("unsupported version " + std::to_string(version) +
                          " in " + path.string());
    std::uint64_t header_len;
    std::memcpy(&header_len, buf.data() + 8, 8);
    if (16 + header_len > buf.size())
        throw ConfigError("truncated header in " + path.string());

    json header;
    try {
        header = json::parse(buf.begin() + 16,
                             buf.begin() + 16 + static_cast<std::ptrdiff_t>(
                                                    header_len));
    } catch (const json::exception& e) {
        throw ConfigError("invalid header json in " + path.string() + ": " +
                          e.what());
    }
    if (!header.is_object())
        throw ConfigError("header must be a json object in " + path.string());
    for (const auto& [k, v] : header.items()) {
        if (k != "meta" && k != "tensors" && k != "provenance")
            throw ConfigError("unexpected header field '" + k + "'");
        (void)v;
    }

    LoadedContainer out;
    out.ckpt.meta = meta_from_json(header.at("meta"));
    if (header.contains("provenance")) {
        out.has_provenance = true;
        for (const auto& [k, v] : header.at("provenance").items()) {
            if (v.is_null()) continue;
            out.provenance[k] = v.get<std::string>();
        }
    }

    const char* payload = buf.data() + 16 + header_len;
    const std::uint64_t payload_size = buf.size() - 16 - header_len;

    const json& tensors = header.at("tensors");
    if (!tensors.is_object())
        throw ConfigError("header tensors must be an object in " +
                          path.string());
    // nlohmann iterates keys sorted, which is exactly the canonical packing
    // order, so a running offset check catches both overlaps and gaps.
    std::uint64_t expected_offset = 0;
    for (const auto& [name, desc] : tensors.items()) {
        if (desc.at("dtype").get<std::string>() != "f32")
            throw ConfigError("unsupported dtype for tensor '" + name + "'");
        std::vector<std::int64_t> shape =
            desc.at("shape").get<std::vector<std::int64_t>>();
        for (auto d : shape)
            if (d <= 0)
                throw ConfigError("bad shape for tensor '" + name + "'");
        const std::uint64_t nbytes = desc.at("nbytes").get<std::uint64_t>();
        const std::uint64_t offset = desc.at("offset").get<std::uint64_t>();
        const std::uint64_t numel =
            static_cast<std::uint64_t>(shape_numel(shape));
        if (nbytes != numel * sizeof(float))
            throw ConfigError("nbytes mismatch for tensor '" + name + "'");
        if (offset < expected_offset)
            throw ConfigError("overlapping offsets at tensor '" + name + "'");
        if (offset > expected_offset)
            throw ConfigError("payload gap at tensor '" + name + "'");
        if (offset + nbytes > payload_size)
            throw ConfigError("truncated payload in " + path.string());
        std::vector<float> data(numel);
        std::memcpy(data.data(), payload + offset, nbytes);
        out.ckpt.weights.insert(name, Tensor(std::move(shape),
                                             std::move(data)));
        expected_offset = offset + nbytes;
    }
    if (expected_offset != payload_size)
        throw ConfigError("trailing bytes after payload in " + path.string());
    check_finite(out.ckpt.weights);
    return out;
}

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path) {
    save_container(ckpt, nullptr, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return load_container(path).ckpt;
}

} // namespace taskvec
