#include <algorithm>
#include <charconv>
#include <cmath>

#include "regisforge/kernels.hpp"

namespace regisforge::kernels {

std::size_t edit_distance(std::string_view a, std::string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            const std::size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + cost});
            diag = up;
        }
    }
    return row[b.size()];
}

double edit_similarity(std::string_view a, std::string_view b) {
    const std::size_t longest = std::max(a.size(), b.size());
    if (longest == 0) return 1.0;
    return 1.0 - static_cast<double>(edit_distance(a, b)) / static_cast<double>(longest);
}

double numeric_similarity(std::string_view a, std::string_view b, double scale) {
    double x = 0, y = 0;
    auto ra = std::from_chars(a.data(), a.data() + a.size(), x);
    auto rb = std::from_chars(b.data(), b.data() + b.size(), y);
    if (ra.ec != std::errc{} || rb.ec != std::errc{} || ra.ptr != a.data() + a.size() ||
        rb.ptr != b.data() + b.size() || !(scale > 0)) {
        return 0.0;
    }
    return std::max(0.0, 1.0 - std::abs(x - y) / scale);
}

double pair_similarity(const FieldValues& left, const FieldValues& right, std::span<const Comparator> comparators) {
    if (comparators.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t f = 0; f < comparators.size(); ++f) {
        const auto& l = left[f];
        const auto& r = right[f];
        if (!l || !r) continue;
        sum += comparators[f].kind == Comparator::Kind::text ? edit_similarity(*l, *r)
                                                             : numeric_similarity(*l, *r, comparators[f].scale);
    }
    return sum / static_cast<double>(comparators.size());
}

namespace serial {

std::vector<double> score_candidates(std::span<const Candidate> candidates, std::span<const FieldValues> left,
                                     std::span<const FieldValues> right, std::span<const Comparator> comparators) {
    std::vector<double> scores(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        scores[i] = pair_similarity(left[candidates[i].left], right[candidates[i].right], comparators);
    }
    return scores;
}

std::vector<double> bucket_totals(std::span<const double> weights,
                                  std::span<const std::vector<std::size_t>> buckets) {
    std::vector<double> totals(buckets.size(), 0.0);
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        double sum = 0.0;
        for (std::size_t i : buckets[b]) sum += weights[i];
        totals[b] = sum;
    }
    return totals;
}

}  // namespace serial
}  // namespace regisforge::kernels
