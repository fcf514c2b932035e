#include "magflow/common.hpp"

#include <fstream>
#include <sstream>

namespace magflow {

std::uint64_t hash_file_contents(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a64(bytes.data(), bytes.size());
}

void parallel_for_chunks(std::size_t n, int threads,
                         const std::function<void(std::size_t, std::size_t, int)>& body) {
    if (n == 0) return;
    if (threads <= 1 || n == 1) {
        body(0, n, 0);
        return;
    }
    const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(nt);
    const std::size_t chunk = (n + nt - 1) / nt;
    for (std::size_t w = 0; w < nt; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi, w] { body(lo, hi, static_cast<int>(w)); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace magflow
