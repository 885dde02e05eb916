#pragma once

#include <cstdint>
#include <random>

namespace rns {

// splitmix64 finalizer; used to derive well-separated seeds from (base, index) pairs.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return mix_seed(mix_seed(base) ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

// Substream labels for one macro-replication.
enum class Substream : std::uint64_t { InputData = 1, Simulation = 2, Schedule = 3 };

class RngStream {
public:
    RngStream() : engine_(0) {}
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    double normal(double mean, double stddev) {
        return normal_(engine_, std::normal_distribution<double>::param_type(mean, stddev));
    }
    double uniform() { return uniform_(engine_); }
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(engine_);
    }
    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Seeds for one macro-replication; procedures compared on the same replication share them.
struct ReplicationSeeds {
    std::uint64_t input = 0;
    std::uint64_t simulation = 0;
    std::uint64_t schedule = 0;

    static ReplicationSeeds for_replication(std::uint64_t base_seed, std::uint64_t rep) {
        const auto root = derive_seed(base_seed, rep);
        return {derive_seed(root, static_cast<std::uint64_t>(Substream::InputData)),
                derive_seed(root, static_cast<std::uint64_t>(Substream::Simulation)),
                derive_seed(root, static_cast<std::uint64_t>(Substream::Schedule))};
    }
};

}  // namespace rns
