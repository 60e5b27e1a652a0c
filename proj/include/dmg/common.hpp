#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmg {

using f32 = float;
using f64 = double;

// Row-major extents, innermost axis last.
using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a required input file (dataset, checkpoint) is absent.
class FileNotFound : public Error {
public:
    explicit FileNotFound(const std::string& path) : Error("file not found: " + path) {}
};

template <typename... Args>
[[noreturn]] inline void fail(Args&&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    throw Error(os.str());
}

template <typename T>
inline bool all_finite(std::span<const T> xs) {
    for (T x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

// FNV-1a, used for manifest/checkpoint fingerprints.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

} // namespace dmg
