#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "hdlab/tensor.hpp"

namespace hdlab {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(std::string_view s);

// Derives an independent stream seed from a master seed and a stream name.
// Every random draw in a run flows from the run's master seed through here.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    std::uint64_t next_u64() { return gen_(); }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(gen_);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

Rng make_stream(std::uint64_t master, std::string_view stream);

Tensor random_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);
Tensor random_normal(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev);

}  // namespace hdlab
