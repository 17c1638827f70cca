#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "regisforge/date.hpp"
#include "regisforge/estimate.hpp"
#include "regisforge/linkage.hpp"
#include "regisforge/registry.hpp"
#include "regisforge/timeline.hpp"

namespace regisforge::quality {

// ---------------------------------------------------------------------------
// Coverage

struct StratumCoverage {
    std::size_t linked = 0;      // n_d: distinct frame members reached
    std::size_t frame = 0;       // N_d
    std::size_t duplicates = 0;  // dataset rows reaching an already counted member
    double ratio = 0.0;          // n_d / N_d
    /// Set when duplicate rows would push a row-based ratio above 1.
    bool flagged = false;
};

struct CoverageReport {
    std::string dataset_ref;
    std::string frame_ref;
    std::map<std::string, StratumCoverage> per_stratum;
    std::size_t unmatched = 0;

    nlohmann::json to_json() const;
    static CoverageReport from_json(const nlohmann::json& j);
    std::string render_text() const;
};

/// Coverage of a frame by a dataset. Each dataset key is followed through
/// `link_to_frame` (left = dataset key, right = SVID); keys that reach no
/// frame member count as unmatched. Strata are the frame's full-cross cells
/// over the domain spec dimensions. Throws Error(spec_mismatch) if the frame lacks
/// a spec dimension.
CoverageReport coverage_ratios(std::span<const std::string> dataset_keys, const linkage::LinkageRelation& link_to_frame,
                               const registry::Frame& frame, const estimate::DomainSpec& spec,
                               std::string dataset_ref = {});

/// One constituent source of an integrated dataset.
struct SourceCoverageInput {
    std::string source;
    std::vector<std::string> keys;
    linkage::LinkageRelation link_to_frame;
};

struct BoundViolation {
    std::string stratum;
    double integrated = 0.0;
    double source_min = 0.0;
};

struct LinkedCoverageReport {
    std::vector<CoverageReport> sources;
    CoverageReport integrated;
    bool exact_linkage = false;
    std::vector<BoundViolation> violations;

    nlohmann::json to_json() const;
    std::string render_text() const;
};

/// Coverage of every source and of the integrated dataset. Integrated rows
/// reach the frame through their SVID column when the path ends at the
/// register, otherwise through the first column's source link. Under
/// exact-key linkage a stratum where the integrated ratio exceeds the
/// minimum source ratio throws Error(internal_invariant); otherwise such
/// strata are only listed.
LinkedCoverageReport linked_coverage_report(std::span<const SourceCoverageInput> sources,
                                            const linkage::IntegratedDataset& integrated,
                                            const registry::Frame& frame, const estimate::DomainSpec& spec,
                                            bool exact_linkage);

// ---------------------------------------------------------------------------
// Metadata descriptors

inline constexpr const char* kNotAssessed = "not assessed";

struct ChecklistEntry {
    std::string id;
    std::string question;
    std::string answer;
};

struct MetaSection {
    std::string dimension;
    std::vector<ChecklistEntry> entries;
};

/// Dimension names in report order.
const std::vector<std::string>& quality_dimensions();

/// Standard questions per dimension as (id, question) pairs.
const std::vector<std::pair<std::string, std::string>>& standard_questions(const std::string& dimension);

/// Configured description of one source.
struct SourceProfile {
    std::string tag;
    /// dimension -> question id -> answer
    std::map<std::string, std::map<std::string, std::string>> checklist;
    /// Date the extract was taken; drives the collection lag.
    std::optional<Date> extracted_on;
};

struct AutoFields {
    std::optional<DateSpan> span;
    /// Calendar years inside the span without a single event.
    std::vector<int> missing_periods;
    /// Days from the latest event to the extract date.
    std::optional<long> collection_lag_days;
    /// Pooled share of events missing each field.
    std::map<std::string, double> field_missing_rates;
    std::size_t events = 0;
    std::size_t entities = 0;
};

struct MetaDescriptor {
    std::string source;
    std::vector<MetaSection> sections;
    AutoFields auto_fields;

    nlohmann::json to_json() const;
    std::string render_text() const;
};

/// Throws Error(unknown_source) if `db.source()` has no profile.
MetaDescriptor build_meta_descriptor(const std::map<std::string, SourceProfile>& profiles,
                                     const timeline::TimelineDB& db);

// ---------------------------------------------------------------------------
// TSE report

/// Output of one executed sub-process.
struct Phase {
    std::string name;
    nlohmann::json body;
    /// Input path -> sha256.
    std::map<std::string, std::string> inputs;
};

struct PipelineRun {
    std::string config_sha256;
    std::vector<Phase> ingestion;
    std::vector<Phase> linkage;
    std::optional<Phase> frame;
    std::optional<Phase> estimation;
};

struct TseSection {
    std::string kind;  // ingestion | linkage | frame | estimation
    std::string name;
    bool present = true;
    nlohmann::json body;
    std::string config_sha256;
    std::map<std::string, std::string> inputs;
};

struct TseReport {
    std::string config_sha256;
    std::vector<TseSection> sections;
    std::vector<std::string> missing_phases;

    bool complete() const { return missing_phases.empty(); }
    nlohmann::json to_json() const;
    std::string render_text() const;
};

/// One section per executed sub-process; phases that did not run appear as
/// absent sections and are listed in `missing_phases`.
TseReport tse_report(const PipelineRun& run);

}  // namespace regisforge::quality
