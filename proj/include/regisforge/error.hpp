#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace regisforge {

enum class Errc {
    sequence_exhausted,
    malformed_sequence,
    rejected_by_birth_rules,
    malformed_date,
    unknown_svid,
    unknown_source,
    conflicting_alias,
    duplicate_birth_svid,
    cycle_detected,
    type_mismatch,
    unknown_strata_attribute,
    snapshot_conflict,
    invalid_event,
    unknown_field,
    threshold_out_of_range,
    non_chainable_path,
    unknown_category,
    unknown_domain,
    non_numeric_value,
    incompatible_margins,
    non_convergence,
    spec_mismatch,
    config_invalid,
    missing_prerequisite,
    corrupt_artifact,
    io_error,
    internal_invariant,
};

std::string_view to_string(Errc code) noexcept;

/// Process exit status for a failure of this kind: 2 for broken internal
/// invariants, 1 for everything caused by user input or configuration.
int exit_status(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace regisforge
