// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "regisforge/kernels.hpp"

using namespace regisforge::kernels;

namespace {

std::string random_name(std::mt19937_64& rng) {
    std::string s(5 + rng() % 6, 'A');
    for (auto& c : s) c = static_cast<char>('A' + rng() % 26);
    return s;
}

struct Scoring {
    std::vector<FieldValues> left, right;
    std::vector<Candidate> candidates;
    std::vector<Comparator> comparators{{Comparator::Kind::text, 1.0}, {Comparator::Kind::numeric, 10.0}};

    explicit Scoring(std::size_t n) {
        std::mt19937_64 rng(3);
        for (std::size_t i = 0; i < n; ++i) {
            left.push_back({random_name(rng), std::to_string(rng() % 100)});
            right.push_back({random_name(rng), std::to_string(rng() % 100)});
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < 32; ++j) candidates.push_back({i, (i + j * 7) % n});
        }
    }
};

void BM_score_serial(benchmark::State& st) {
    const Scoring s(static_cast<std::size_t>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(serial::score_candidates(s.candidates, s.left, s.right, s.comparators));
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.candidates.size()));
}

void BM_score_parallel(benchmark::State& st) {
    const Scoring s(static_cast<std::size_t>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(parallel::score_candidates(s.candidates, s.left, s.right, s.comparators));
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.candidates.size()));
}

struct Buckets {
    std::vector<double> weights;
    std::vector<std::vector<std::size_t>> buckets;

    explicit Buckets(std::size_t n) : buckets(64) {
        std::mt19937_64 rng(5);
        for (std::size_t i = 0; i < n; ++i) {
            weights.push_back(static_cast<double>(rng() % 1000) / 7.0);
            buckets[rng() % buckets.size()].push_back(i);
        }
    }
};

void BM_buckets_serial(benchmark::State& st) {
    const Buckets b(static_cast<std::size_t>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(serial::bucket_totals(b.weights, b.buckets));
}

void BM_buckets_parallel(benchmark::State& st) {
    const Buckets b(static_cast<std::size_t>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(parallel::bucket_totals(b.weights, b.buckets));
}

}  // namespace

BENCHMARK(BM_score_serial)->Arg(1 << 10)->Arg(1 << 13);
BENCHMARK(BM_score_parallel)->Arg(1 << 10)->Arg(1 << 13);
BENCHMARK(BM_buckets_serial)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_buckets_parallel)->Arg(1 << 16)->Arg(1 << 20);

BENCHMARK_MAIN();
