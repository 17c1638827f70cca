#include "regisforge/error.hpp"

namespace regisforge {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::sequence_exhausted: return "sequence-exhausted";
        case Errc::malformed_sequence: return "malformed-sequence";
        case Errc::rejected_by_birth_rules: return "rejected-by-birth-rules";
        case Errc::malformed_date: return "malformed-date";
        case Errc::unknown_svid: return "unknown-svid";
        case Errc::unknown_source: return "unknown-source";
        case Errc::conflicting_alias: return "conflicting-alias";
        case Errc::duplicate_birth_svid: return "duplicate-birth-svid";
        case Errc::cycle_detected: return "cycle-detected";
        case Errc::type_mismatch: return "type-mismatch";
        case Errc::unknown_strata_attribute: return "unknown-strata-attribute";
        case Errc::snapshot_conflict: return "snapshot-conflict";
        case Errc::invalid_event: return "invalid-event";
        case Errc::unknown_field: return "unknown-field";
        case Errc::threshold_out_of_range: return "threshold-out-of-range";
        case Errc::non_chainable_path: return "non-chainable-path";
        case Errc::unknown_category: return "unknown-category";
        case Errc::unknown_domain: return "unknown-domain";
        case Errc::non_numeric_value: return "non-numeric-value";
        case Errc::incompatible_margins: return "incompatible-margins";
        case Errc::non_convergence: return "non-convergence";
        case Errc::spec_mismatch: return "spec-mismatch";
        case Errc::config_invalid: return "config-invalid";
        case Errc::missing_prerequisite: return "missing-prerequisite";
        case Errc::corrupt_artifact: return "corrupt-artifact";
        case Errc::io_error: return "io-error";
        case Errc::internal_invariant: return "internal-invariant";
    }
    return "unknown";
}

int exit_status(Errc code) noexcept {
    return code == Errc::internal_invariant ? 2 : 1;
}

}  // namespace regisforge
