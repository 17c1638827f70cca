#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "regisforge/kernels.hpp"
#include "regisforge/timeline.hpp"

namespace regisforge::linkage {

/// Source tag used for the register side of a link-to-frame relation.
inline constexpr std::string_view kRegisterSource = "REGISTER";

struct CompareField {
    std::string field;
    kernels::Comparator comparator;
};

struct Method {
    enum class Kind { exact_key, blocked_similarity };
    Kind kind = Kind::exact_key;
    // exact_key
    std::string left_field;
    std::string right_field;
    // blocked_similarity
    std::vector<std::string> blocking_fields;
    std::vector<CompareField> compare_fields;
    double threshold = 1.0;

    /// One-line human-readable descriptor.
    std::string describe() const;
    friend bool operator==(const Method&, const Method&);
};

struct Pair {
    std::string left;
    std::string right;
    double score = 1.0;
};

/// Key values shared by more than one entity on one side; those entities
/// are left out of the relation.
struct Collision {
    enum class Side { left, right };
    Side side = Side::left;
    std::string value;
    std::vector<std::string> entity_keys;
};

/// One-to-one pair set between exactly two sources. Not necessarily
/// exhaustive: unpaired keys may exist on either side.
struct LinkageRelation {
    std::string name;
    std::string left_source;
    std::string right_source;
    Method method;
    std::vector<Pair> pairs;  // ascending by (left, right)
    std::vector<Collision> collisions;
    std::size_t candidates = 0;

    bool is_one_to_one() const;
    /// Same relation with sides swapped.
    LinkageRelation flipped() const;

    /// Two-column key table preceded by a `#` descriptor block.
    std::string render() const;
    static LinkageRelation parse(std::string_view content);
};

/// Entity key with the value it is matched on.
struct KeyedValue {
    std::string entity_key;
    std::string value;
};

/// Equality join on values; values held by several entities on one side
/// are excluded and reported as collisions.
LinkageRelation link_exact_keys(std::span<const KeyedValue> left, std::span<const KeyedValue> right);

/// Matches entities whose latest `left_field` / `right_field` values are
/// equal. `entity_key` may be used as a field name. Throws
/// Error(unknown_field).
LinkageRelation build_exact_linkage(const timeline::TimelineDB& left, const timeline::TimelineDB& right,
                                    const std::string& left_field, const std::string& right_field);

/// Candidate pairs agree exactly on every blocking field (after
/// case-folding and whitespace collapse; entities missing one are never
/// candidates). Score is the mean per-field similarity over
/// `compare_fields`. Pairs scoring at least `threshold` are accepted
/// greedily by descending score, ties broken by (left, right) key, subject
/// to one-to-one. Throws Error(threshold_out_of_range) unless
/// 0 < threshold <= 1, Error(unknown_field) for a field either side lacks.
LinkageRelation build_blocked_linkage(const timeline::TimelineDB& left, const timeline::TimelineDB& right,
                                      const std::vector<std::string>& blocking_fields,
                                      const std::vector<CompareField>& compare_fields, double threshold);

struct ScoredCandidate {
    std::size_t left = 0;
    std::size_t right = 0;
    double score = 0.0;
};

/// Greedy one-to-one acceptance over scored candidates; `left_keys` and
/// `right_keys` give the tie-break order. Returns accepted candidates.
std::vector<ScoredCandidate> greedy_one_to_one(std::vector<ScoredCandidate> candidates,
                                               std::span<const std::string> left_keys,
                                               std::span<const std::string> right_keys, double threshold);

/// Rows of a step-through join along a path of relations.
struct IntegratedDataset {
    /// Source tag of every column, in path order.
    std::vector<std::string> sources;
    /// Descriptor of every traversed relation, in path order.
    std::vector<std::string> path;
    std::vector<std::vector<std::string>> rows;  // ascending
    /// True when the last column holds register SVIDs.
    bool terminal_register = false;

    std::size_t column(std::string_view source) const;
    std::string render() const;
    static IntegratedDataset parse(std::string_view content);
};

/// Joins relations in order. Each relation is flipped if needed so that its
/// left side is the previous relation's right side; the first relation is
/// flipped if only that makes the path chain. Throws
/// Error(non_chainable_path) for an empty or broken path.
IntegratedDataset step_through(std::span<const LinkageRelation> path);

}  // namespace regisforge::linkage
