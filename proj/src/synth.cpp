#include "regisforge/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "regisforge/csv.hpp"
#include "regisforge/error.hpp"

namespace regisforge::synth {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

std::vector<std::size_t> Population::stratum_sizes() const {
    std::vector<std::size_t> sizes(strata.size(), 0);
    for (const auto& e : entities) ++sizes[e.stratum];
    return sizes;
}

std::int64_t Population::total_y() const {
    std::int64_t t = 0;
    for (const auto& e : entities) t += e.y;
    return t;
}

Population generate_population(const config::SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    Population pop;
    pop.dimensions = cfg.dimensions();
    for (const auto& s : cfg.strata) {
        std::vector<std::string> cats;
        for (const auto& dim : pop.dimensions) cats.push_back(s.categories.at(dim));
        pop.strata.push_back(std::move(cats));
    }
    std::size_t n = 0;
    for (std::size_t s = 0; s < cfg.strata.size(); ++s) {
        for (std::size_t i = 0; i < cfg.strata[s].size; ++i) {
            Entity e;
            char buf[32];
            std::snprintf(buf, sizeof buf, "U%08zu", ++n);
            e.uid = buf;
            e.stratum = s;
            const double y = cfg.strata[s].y_mean + cfg.strata[s].y_sd * rng.normal();
            e.y = std::max<std::int64_t>(0, std::llround(y));
            e.day = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.days)));
            pop.entities.push_back(std::move(e));
        }
    }
    return pop;
}

std::vector<std::vector<std::size_t>> draw_inclusion(const Population& pop, const config::SynthConfig& cfg,
                                                     Rng& rng) {
    std::vector<std::vector<std::size_t>> included(cfg.sources.size());
    for (std::size_t s = 0; s < cfg.sources.size(); ++s) {
        const auto& p = cfg.sources[s].inclusion;
        for (std::size_t i = 0; i < pop.entities.size(); ++i) {
            if (rng.bernoulli(p[pop.entities[i].stratum])) included[s].push_back(i);
        }
    }
    return included;
}

std::vector<std::filesystem::path> write_scenario(const config::SynthConfig& cfg, std::uint64_t seed,
                                                  const std::filesystem::path& dir) {
    Rng rng(seed);
    const auto pop = generate_population(cfg, rng);
    const auto included = draw_inclusion(pop, cfg, rng);

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::io_error, "cannot create " + dir.string() + ": " + ec.message());

    auto open = [](const std::filesystem::path& path) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
        return out;
    };
    auto row_of = [&](const Entity& e, std::vector<std::string> lead) {
        lead.push_back(Date{cfg.start.days() + std::chrono::days{e.day}}.to_string());
        lead.push_back(e.uid);
        for (const auto& c : pop.strata[e.stratum]) lead.push_back(c);
        lead.push_back(std::to_string(e.y));
        return lead;
    };
    std::vector<std::string> header{"date", "uid"};
    header.insert(header.end(), pop.dimensions.begin(), pop.dimensions.end());
    header.push_back("y");

    std::vector<std::filesystem::path> written;
    {
        const auto path = dir / "population.csv";
        auto out = open(path);
        csv::write_row(out, header);
        for (const auto& e : pop.entities) csv::write_row(out, row_of(e, {}));
        written.push_back(path);
    }
    for (std::size_t s = 0; s < cfg.sources.size(); ++s) {
        const auto& tag = cfg.sources[s].tag;
        const auto path = dir / (tag + ".csv");
        auto out = open(path);
        std::vector<std::string> h{"key"};
        h.insert(h.end(), header.begin(), header.end());
        csv::write_row(out, h);
        std::size_t n = 0;
        for (std::size_t i : included[s]) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%s-%07zu", tag.c_str(), ++n);
            csv::write_row(out, row_of(pop.entities[i], {buf}));
        }
        written.push_back(path);
    }
    return written;
}

}  // namespace regisforge::synth
