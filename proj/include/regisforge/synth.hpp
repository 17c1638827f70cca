#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "regisforge/config.hpp"

namespace regisforge::synth {

/// Seeded generator whose output depends only on the seed: the engine is
/// fully specified by the standard and the conversions below are done by
/// hand rather than through library distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    /// Standard normal (Box-Muller, one value per call).
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

struct Entity {
    std::string uid;
    std::size_t stratum = 0;
    std::int64_t y = 0;
    int day = 0;  // offset from the scenario start
};

struct Population {
    std::vector<std::string> dimensions;
    /// Categories of each stratum, in dimension order.
    std::vector<std::vector<std::string>> strata;
    std::vector<Entity> entities;

    std::vector<std::size_t> stratum_sizes() const;
    std::int64_t total_y() const;
};

/// Entities stratum by stratum; y is a non-negative integer drawn around the
/// stratum mean.
Population generate_population(const config::SynthConfig& cfg, Rng& rng);

/// Entity indices included by each source, one independent coin flip per
/// entity and source with the stratum's probability.
std::vector<std::vector<std::size_t>> draw_inclusion(const Population& pop, const config::SynthConfig& cfg, Rng& rng);

/// Writes `population.csv` and one `<tag>.csv` per source into `dir`.
/// Returns the written paths.
std::vector<std::filesystem::path> write_scenario(const config::SynthConfig& cfg, std::uint64_t seed,
                                                  const std::filesystem::path& dir);

}  // namespace regisforge::synth
