#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Data-parallel inner loops. Each kernel has a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::parallel` with the
// same signature. Parallel versions write each output slot from exactly one
// iteration and never reduce across threads, so both produce bit-identical
// results for any thread count.

namespace regisforge::kernels {

/// Levenshtein distance over bytes.
std::size_t edit_distance(std::string_view a, std::string_view b);

/// 1 - edit_distance / max(len); two empty strings are identical (1.0).
double edit_similarity(std::string_view a, std::string_view b);

/// max(0, 1 - |a - b| / scale) when both parse as numbers, else 0.
double numeric_similarity(std::string_view a, std::string_view b, double scale);

struct Comparator {
    enum class Kind { text, numeric };
    Kind kind = Kind::text;
    double scale = 1.0;  // numeric only
};

/// Compare-field values of one record, one slot per comparator; nullopt is
/// missing and scores 0 on that field.
using FieldValues = std::vector<std::optional<std::string>>;

struct Candidate {
    std::size_t left = 0;
    std::size_t right = 0;
};

/// Mean per-field similarity of one record pair.
double pair_similarity(const FieldValues& left, const FieldValues& right, std::span<const Comparator> comparators);

namespace serial {

std::vector<double> score_candidates(std::span<const Candidate> candidates, std::span<const FieldValues> left,
                                     std::span<const FieldValues> right, std::span<const Comparator> comparators);

/// Sum of `weights[i]` over the indices of each bucket, in bucket order.
std::vector<double> bucket_totals(std::span<const double> weights,
                                  std::span<const std::vector<std::size_t>> buckets);

}  // namespace serial

namespace parallel {

std::vector<double> score_candidates(std::span<const Candidate> candidates, std::span<const FieldValues> left,
                                     std::span<const FieldValues> right, std::span<const Comparator> comparators);

std::vector<double> bucket_totals(std::span<const double> weights,
                                  std::span<const std::vector<std::size_t>> buckets);

}  // namespace parallel

/// Threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace regisforge::kernels
