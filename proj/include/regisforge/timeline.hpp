#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "regisforge/date.hpp"

namespace regisforge::timeline {

/// Field name to value; a present key with no value is a missing cell.
using Payload = std::map<std::string, std::optional<std::string>>;

struct Event {
    std::string entity_key;
    Date event_date;
    std::uint64_t ingest_seq = 0;
    Payload payload;
    /// Reserved for payloads kept in an external store; unused while
    /// payloads are inline.
    std::optional<std::string> payload_ref;

    friend bool operator==(const Event&, const Event&) = default;
};

/// Per-source collection of entity timelines. Each timeline is non-empty and
/// ordered by (event_date, ingest_seq); ingest sequence numbers are unique
/// across the whole database.
class TimelineDB {
public:
    TimelineDB() = default;
    explicit TimelineDB(std::string source) : source_(std::move(source)) {}

    const std::string& source() const { return source_; }

    /// Inserts in sort position. Throws Error(invalid_event) on an empty
    /// entity key or a reused ingest sequence.
    void append_event(Event event);

    const std::map<std::string, std::vector<Event>>& timelines() const { return timelines_; }
    const std::vector<Event>* find(const std::string& entity_key) const;
    std::size_t event_count() const { return seqs_.size(); }
    std::uint64_t next_ingest_seq() const { return seqs_.empty() ? 0 : *seqs_.rbegin() + 1; }

    /// All events, timeline by timeline.
    std::vector<Event> flatten() const;

    /// Latest present value of `field` on an entity's timeline; with
    /// `field == "entity_key"` the key itself.
    std::optional<std::string> latest_value(const std::string& entity_key, const std::string& field) const;
    bool has_field(const std::string& field) const;

    /// Appends events to a line file, one JSON object per line.
    static void append_to_file(std::span<const Event> events, const std::filesystem::path& path);
    static TimelineDB load(const std::filesystem::path& path, std::string source);

    friend bool operator==(const TimelineDB&, const TimelineDB&) = default;

private:
    std::string source_;
    std::map<std::string, std::vector<Event>> timelines_;
    std::set<std::uint64_t> seqs_;
    std::set<std::string> fields_;
};

/// Buckets events by entity key, verbatim. Result does not depend on input
/// order.
TimelineDB group_events(std::string source, std::span<const Event> raw_events);

struct FieldStability {
    double change_rate = 0.0;
    double missing_rate = 0.0;
    std::size_t events = 0;
};

struct StabilityReport {
    std::string field;
    std::map<std::string, FieldStability> per_entity;
    /// Means over entities, each entity weighted equally.
    double mean_change_rate = 0.0;
    double mean_missing_rate = 0.0;
    /// Missing events over all events, pooled across entities.
    double pooled_missing_rate = 0.0;
};

/// missing_rate = absent / n; change_rate = differing adjacent present pairs
/// over adjacent present pairs (missing values skipped), 0 with fewer than
/// two present values. Throws Error(unknown_field) if no event carries the
/// field.
StabilityReport stability_metrics(const TimelineDB& db, const std::string& field);

/// Same metrics for one value sequence; nullopt is a missing value.
FieldStability sequence_stability(std::span<const std::optional<std::string>> values);

/// Reads a delimiter-separated source extract. `key_column` and
/// `date_column` are mandatory; every other column becomes payload, with
/// empty cells recorded as missing. Sequence numbers start at `first_seq`
/// in file order.
std::vector<Event> read_events_csv(const std::filesystem::path& path, const std::string& key_column,
                                   const std::string& date_column, std::uint64_t first_seq = 0);

}  // namespace regisforge::timeline
