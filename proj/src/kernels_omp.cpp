#include "regisforge/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace regisforge::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace parallel {

std::vector<double> score_candidates(std::span<const Candidate> candidates, std::span<const FieldValues> left,
                                     std::span<const FieldValues> right, std::span<const Comparator> comparators) {
    const auto n = static_cast<std::ptrdiff_t>(candidates.size());
    std::vector<double> scores(candidates.size());
    // Edit distance cost varies with string length, hence dynamic chunks.
#pragma omp parallel for schedule(dynamic, 256)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const Candidate& c = candidates[static_cast<std::size_t>(i)];
        scores[static_cast<std::size_t>(i)] = pair_similarity(left[c.left], right[c.right], comparators);
    }
    return scores;
}

std::vector<double> bucket_totals(std::span<const double> weights,
                                  std::span<const std::vector<std::size_t>> buckets) {
    const auto n = static_cast<std::ptrdiff_t>(buckets.size());
    std::vector<double> totals(buckets.size(), 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < n; ++b) {
        double sum = 0.0;
        for (std::size_t i : buckets[static_cast<std::size_t>(b)]) sum += weights[i];
        totals[static_cast<std::size_t>(b)] = sum;
    }
    return totals;
}

}  // namespace parallel
}  // namespace regisforge::kernels
