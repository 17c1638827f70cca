#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "regisforge/registry.hpp"

namespace regisforge::estimate {

struct Dimension {
    std::string name;
    std::vector<std::string> categories;
    friend bool operator==(const Dimension&, const Dimension&) = default;
};

enum class Mode { full_cross, margins_only };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);

/// Estimation domains: categorical dimensions crossed fully (one indicator
/// per cell) or used as separate margins (one indicator block per
/// dimension).
struct DomainSpec {
    std::vector<Dimension> dimensions;
    Mode mode = Mode::full_cross;

    /// Throws Error(spec_mismatch) for an empty or duplicated category list.
    void validate() const;
    std::size_t vector_length() const;
    std::vector<std::string> dimension_names() const;
    /// Categories observed in the frame, sorted, per frame dimension.
    static DomainSpec from_frame(const registry::Frame& frame, Mode mode);

    friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

using DomainVector = std::vector<std::uint8_t>;

/// 0/1 indicators for a row given as dimension -> category. Full-cross
/// vectors index cells in row-major order over the dimension list. Throws
/// Error(unknown_category) for a missing attribute or an unlisted category.
DomainVector domain_vector(const std::map<std::string, std::string>& row, const DomainSpec& spec);

/// One linked row entering calibration.
struct SampleRow {
    std::string key;
    /// One category per spec dimension, in spec order.
    std::vector<std::string> categories;
    /// Study variables; nullopt is a missing value.
    std::map<std::string, std::optional<std::string>> values;
};

/// Positive rational weight numerator / denominator.
struct Ratio {
    std::int64_t num = 0;
    std::int64_t den = 1;
    friend bool operator==(const Ratio&, const Ratio&) = default;
    friend auto operator<=>(const Ratio&, const Ratio&) = default;
};

struct Weight {
    double value = 0.0;
    /// Set when the weight is an exact ratio of counts (post-stratification);
    /// sums over such weights are then computed in exact arithmetic.
    std::optional<Ratio> exact;
};

struct Diagnostics {
    bool converged = false;
    std::size_t iterations = 0;
    double max_residual = 0.0;
    double tolerance = 0.0;
    /// Frame strata with N_d > 0 but no linked rows; weights undefined there.
    std::vector<std::string> uncovered_strata;
    /// Linked rows whose stratum has no frame members; weighted 0.
    std::vector<std::string> out_of_scope_rows;
};

struct WeightSet {
    std::map<std::string, Weight> weights;
    DomainSpec spec;
    std::string frame_ref;
    Diagnostics diagnostics;

    /// Overrides one weight, dropping its exact form.
    void set_weight(const std::string& key, double value);

    /// (row_key, weight, exact) table after a `#` diagnostics block.
    std::string render() const;
    static WeightSet parse(std::string_view content);
};

/// Post-stratification over full-cross cells: w = N_d / n_d. Rows in cells
/// without frame members are flagged and get weight 0; frame cells without
/// rows are reported as uncovered and leave the set unconverged. Throws
/// Error(spec_mismatch) unless the domain spec is full-cross over the frame's
/// dimensions, Error(unknown_category) for rows outside the domain spec.
WeightSet poststratify(const registry::Frame& frame, std::span<const SampleRow> rows, const DomainSpec& spec);

/// Iterative proportional fitting from unit weights. Each sweep scales
/// every dimension in turn so its category totals match `margins`; stops
/// once every margin residual is within `tol`. Rows in a category with no
/// frame mass are flagged and zero-weighted.
///
/// Throws Error(incompatible_margins) when margins disagree in total or a
/// positive margin has no rows, or when max_iter is reached without the
/// residual decreasing; Error(non_convergence) when max_iter is reached
/// while the residual is still falling.
WeightSet rake(std::span<const std::map<std::string, double>> margins, std::span<const SampleRow> rows,
               const DomainSpec& spec, double tol = 1e-6, std::size_t max_iter = 100,
               std::string frame_ref = {});

/// Convenience overload taking margins from a frame.
WeightSet rake(const registry::Frame& frame, std::span<const SampleRow> rows, const DomainSpec& spec,
               double tol = 1e-6, std::size_t max_iter = 100);

/// `all`, a full-cross cell label `c1|c2`, or `dimension=category`.
struct Domain {
    std::string label = "all";
    static Domain all() { return {}; }
};

struct EstimateResult {
    double total = 0.0;
    std::size_t rows = 0;
    std::size_t missing = 0;
    bool exact = false;
};

/// Sum of w_k * y_k over weighted rows in the domain. Rows with missing y
/// are skipped and counted. Uses exact arithmetic when every weight is an
/// exact ratio and every y an integer. Throws Error(unknown_field),
/// Error(unknown_domain) or Error(non_numeric_value).
EstimateResult estimate_total(const WeightSet& weights, std::span<const SampleRow> rows,
                              const std::string& y_field, const Domain& domain = Domain::all());

/// Count of weighted rows in the domain (y == 1 without a y field).
EstimateResult estimate_count(const WeightSet& weights, std::span<const SampleRow> rows,
                              const Domain& domain = Domain::all());

bool row_in_domain(const SampleRow& row, const Domain& domain, const DomainSpec& spec);

struct Constraint {
    std::string label;
    double target = 0.0;
    double achieved = 0.0;
    double residual = 0.0;
};

struct CalibrationReport {
    std::vector<Constraint> constraints;
    double max_residual = 0.0;
    bool pass = false;
};

/// |sum_A w_k x_k - frame total| for every constraint of the domain spec: every
/// frame cell in full-cross mode, every dimension category in margins mode.
/// Throws Error(spec_mismatch) if the weights were built for another spec
/// or the frame lacks a spec dimension.
CalibrationReport check_calibration(const WeightSet& weights, std::span<const SampleRow> rows,
                                    const registry::Frame& frame, const DomainSpec& spec, double tol);

}  // namespace regisforge::estimate
