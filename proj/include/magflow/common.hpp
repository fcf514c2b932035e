#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace magflow {

// Error taxonomy mapped to CLI exit codes (io=2, validation=3, numerical=4).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a, used for content hashes carried by every cache file.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), seed);
}

std::uint64_t hash_file_contents(const std::string& path);

// Static chunking over [0, n). Deterministic for a fixed thread count:
// worker i owns one contiguous range. threads <= 1 runs inline.
void parallel_for_chunks(std::size_t n, int threads,
                         const std::function<void(std::size_t, std::size_t, int)>& body);

}  // namespace magflow
