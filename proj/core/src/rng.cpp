#include "hdlab/rng.hpp"

namespace hdlab {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
    return splitmix64(master ^ fnv1a64(stream));
}

Rng make_stream(std::uint64_t master, std::string_view stream) {
    return Rng(derive_seed(master, stream));
}

Tensor random_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Tensor out({rows, cols});
    for (double& v : out.data()) v = rng.uniform(lo, hi);
    return out;
}

Tensor random_normal(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev) {
    Tensor out({rows, cols});
    for (double& v : out.data()) v = rng.normal(mean, stddev);
    return out;
}

}  // namespace hdlab
