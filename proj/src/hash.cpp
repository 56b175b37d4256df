#include "taskvec/hash.hpp"

#include <array>
#include <cstring>
#include <memory>

#include <openssl/evp.h>

namespace taskvec {

namespace {

struct Sha256 {
    Sha256() : ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
            throw Error("sha256 init failed");
    }
    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx.get(), data, n) != 1)
            throw Error("sha256 update failed");
    }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1)
            throw Error("sha256 final failed");
        static const char* k = "0123456789abcdef";
        std::string out(len * 2, '0');
        for (unsigned int i = 0; i < len; ++i) {
            out[2 * i] = k[digest[i] >> 4];
            out[2 * i + 1] = k[digest[i] & 0xf];
        }
        return out;
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx;
};

void update_u64le(Sha256& h, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    h.update(b, 8);
}

} // namespace

std::string sha256_hex(const void* data, std::size_t nbytes) {
    Sha256 h;
    h.update(data, nbytes);
    return h.hex();
}

std::string sha256_hex(const std::string& s) {
    return sha256_hex(s.data(), s.size());
}

std::string content_hash(const TensorMap& m) {
    Sha256 h;
    for (const auto& [name, t] : m) {
        update_u64le(h, name.size());
        h.update(name.data(), name.size());
        update_u64le(h, t.shape.size());
        for (auto d : t.shape) update_u64le(h, static_cast<std::uint64_t>(d));
        // float32 payload as little-endian bytes. This codebase only targets
        // little-endian hosts; static_assert would need std::endian, checked
        // in io.cpp where the same assumption backs the file format.
        h.update(t.data.data(), t.data.size() * sizeof(float));
    }
    return h.hex();
}

} // namespace taskvec
