#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>

#include "core/tensor.hpp"

namespace mapkit {

/// FNV-1a over raw bytes. Used for the frozen-base "bit identical" checks:
/// hashing the raw double representation detects any parameter mutation.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t tensor_bits_hash(const Tensor& t, uint64_t h = 0xcbf29ce484222325ULL) {
    for (int64_t d : t.shape()) h = fnv1a64(&d, sizeof(d), h);
    return fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(double), h);
}

/// Hash a named tensor map in name order (bit-exact, shape-aware).
inline uint64_t tensor_map_hash(const std::map<std::string, Tensor>& tensors) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : tensors) {
        h = fnv1a64(name, h);
        h = tensor_bits_hash(t, h);
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

}  // namespace mapkit
