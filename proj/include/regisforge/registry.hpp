#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "regisforge/date.hpp"
#include "regisforge/disjoint_set.hpp"
#include "regisforge/idforge.hpp"

namespace regisforge::registry {

using idforge::Svid;
using Attributes = std::map<std::string, std::string>;

// ---------------------------------------------------------------------------
// Rules

/// One declarative condition. `field` names an attribute, or for frame rules
/// one of the reserved entity fields `entity_type`, `birth_source`,
/// `active_span`. `ge`/`le` compare numerically when both sides parse as
/// numbers and lexicographically otherwise (so ISO dates work either way).
struct Predicate {
    enum class Op { present, absent, eq, ne, in, ge, le, overlaps };

    std::string field;
    Op op = Op::present;
    std::vector<std::string> values;  // `overlaps` takes [from, to] ISO dates

    static Op parse_op(std::string_view name);
};

/// Conjunction of predicates, so evaluation order never matters. An empty
/// rule set passes everything.
struct RuleSet {
    std::vector<Predicate> predicates;
    /// Retention window in years; unset means unlimited.
    std::optional<int> retention_years;

    /// `span` backs `active_span overlaps` predicates; without one those
    /// predicates fail.
    bool passes(const Attributes& attrs, std::optional<DateSpan> span = std::nullopt) const;
};

// ---------------------------------------------------------------------------
// Administrative registers

struct AdminRecord {
    std::string source;
    std::string source_key;
    Svid svid;
    Svid alias_id;
    Attributes attrs;
    Date first_seen;
    Date last_seen;

    bool is_representative() const { return svid == alias_id; }
};

/// Builds a composite source key that stays unique when a source reuses raw
/// identifiers across institutions or periods. Injective; decode with
/// `split_source_key`.
std::string namespace_source_key(std::string_view raw_key, std::string_view institution,
                                 std::string_view period);
struct SourceKeyParts {
    std::string raw_key;
    std::string institution;
    std::string period;
    friend bool operator==(const SourceKeyParts&, const SourceKeyParts&) = default;
};
SourceKeyParts split_source_key(std::string_view composite);

/// Per-source register mapping source keys to SVIDs. Records are never
/// deleted; duplicates are expressed through `alias_id`, which always holds
/// the smallest SVID of the record's duplicate group.
///
/// Every state change is also appended to an in-memory journal so the
/// register can be persisted as an append-only line file.
class AdminRegister {
public:
    explicit AdminRegister(std::string source);

    const std::string& source() const { return source_; }

    /// Looks up `source_key`; an existing record gets its attributes merged
    /// and its seen-span widened, a new key passing `birth_rules` is born
    /// with a fresh SVID. Throws Error(malformed_date) or
    /// Error(rejected_by_birth_rules); neither consumes an SVID.
    const AdminRecord& ingest_transaction(idforge::Generator& ids, std::string_view source_key,
                                          const Attributes& attrs, std::string_view date,
                                          const RuleSet& birth_rules);

    /// Asserts that `group` is one real entity. Throws Error(unknown_svid)
    /// before touching anything if a member is not in this register.
    void mark_source_duplicates(std::span<const Svid> group);

    const AdminRecord* find_key(std::string_view source_key) const;
    const AdminRecord* find(Svid svid) const;
    const AdminRecord& at(Svid svid) const;

    /// Birth order (ascending SVID).
    std::span<const AdminRecord> records() const { return records_; }
    std::vector<const AdminRecord*> representatives() const;

    /// Appends pending journal lines to `path` and clears the journal.
    void flush(const std::filesystem::path& path);
    /// Replays a journal file. A missing file yields an empty register.
    static AdminRegister load(const std::filesystem::path& path, std::string source);

private:
    void apply_put(std::string_view source_key, Svid svid, Attributes attrs, Date first, Date last);
    void apply_duplicates(std::span<const Svid> group);

    std::string source_;
    std::vector<AdminRecord> records_;
    std::unordered_map<std::string, std::size_t> by_key_;
    std::unordered_map<Svid, std::size_t> by_svid_;
    MinDisjointSet<Svid> groups_;
    std::vector<std::string> journal_;
};

// ---------------------------------------------------------------------------
// Population (entity) register

struct EntityRecord {
    Svid birth_svid;
    std::string birth_source;
    /// One column per core source; unset columns are absent.
    std::map<std::string, Svid> source_alias;
    Svid current_id;
    std::string entity_type;
    std::optional<Svid> parent_alias;
    DateSpan active_span;
    Attributes attrs;

    bool is_unique() const { return birth_svid == current_id; }
};

/// Allowed (child type, parent type) pairs, e.g. (location, enterprise).
struct Hierarchy {
    std::set<std::pair<std::string, std::string>> allowed;

    bool permits(const std::string& child_type, const std::string& parent_type) const {
        return allowed.count({child_type, parent_type}) != 0;
    }
    std::vector<std::string> entity_types() const;
};

struct LinkAssertion {
    Svid a;
    Svid b;
    friend bool operator==(const LinkAssertion&, const LinkAssertion&) = default;
};

/// Every entity ever observed in the core sources, duplicates included.
/// Linked records form components; each record's `current_id` is the
/// smallest birth SVID in its component, so the unique view keeps exactly
/// one record per component.
class EntityRegister {
public:
    EntityRegister() = default;

    /// One record per representative administrative record, sources taken
    /// in the given order (which also fixes the alias column order).
    /// `entity_types` maps source tag to entity kind; sources not listed
    /// default to "person". Throws Error(duplicate_birth_svid) if two
    /// sources share an SVID.
    static EntityRegister init(std::span<const AdminRegister* const> admin,
                               const std::map<std::string, std::string>& entity_types = {});

    /// Declares two records to be the same entity. Cross-source links fill
    /// each side's alias column for the other's birth source; same-source
    /// links only merge components. Idempotent and order-insensitive.
    /// Throws Error(unknown_svid) or Error(conflicting_alias); a throwing
    /// call leaves the register untouched.
    void link_entities(Svid a, Svid b);

    /// Component minimum. Throws Error(unknown_svid).
    Svid resolve_current_id(Svid svid) const;

    /// Records with birth_svid == current_id, ascending by SVID.
    std::vector<EntityRecord> unique_view() const;

    /// Places `child` under `parent`. `child == parent` designates a
    /// self-headed group. Throws Error(unknown_svid), Error(type_mismatch),
    /// Error(cycle_detected) or Error(conflicting_alias) when the child
    /// already has a different parent.
    void link_child_to_parent(Svid child, Svid parent, const Hierarchy& hierarchy);

    /// Per-entity-type alias view of one record: its own type maps to
    /// itself, its parent's type to the parent, and a self-headed parent
    /// also heads its child types.
    std::map<std::string, std::optional<Svid>> hierarchy_row(Svid svid, const Hierarchy& hierarchy) const;

    const EntityRecord& at(Svid svid) const;
    bool contains(Svid svid) const { return index_.count(svid) != 0; }
    std::span<const EntityRecord> records() const { return records_; }
    const std::vector<std::string>& sources() const { return sources_; }
    const std::vector<LinkAssertion>& links() const { return links_; }

    /// Members of the component containing `svid`, ascending.
    std::vector<Svid> component(Svid svid) const;

    /// Log-style line file: entity lines, then link and parent assertions.
    void save(const std::filesystem::path& path) const;
    static EntityRegister load(const std::filesystem::path& path);

private:
    std::size_t index_of(Svid svid) const;
    void apply_parent(std::size_t child, std::size_t parent);

    std::vector<std::string> sources_;
    std::vector<EntityRecord> records_;
    std::unordered_map<Svid, std::size_t> index_;
    MinDisjointSet<Svid> groups_;
    std::vector<LinkAssertion> links_;
    std::vector<std::pair<Svid, Svid>> parents_;  // (child, parent) in assertion order
};

// ---------------------------------------------------------------------------
// Frames

/// Immutable snapshot of unique entities passing a rule set at a date.
struct Frame {
    std::string frame_id;
    Date as_of;
    std::vector<std::string> dimensions;
    std::set<Svid> members;
    /// Category per dimension for each member.
    std::map<Svid, std::vector<std::string>> cells;
    /// Stratum label: the member's categories joined with '|'.
    std::map<Svid, std::string> strata;
    std::map<std::string, std::size_t> stratum_counts;
    std::vector<std::string> warnings;

    /// Frame count of each category, per dimension.
    std::vector<std::map<std::string, double>> margins() const;

    /// `<frame_id>@<as_of>.csv`
    std::string snapshot_name() const;
    /// Table with header (svid, stratum, as_of), preceded by a `#`
    /// descriptor block.
    std::string render() const;
    static Frame parse(std::string_view content);
};

inline constexpr std::string_view kMissingCategory = "NA";

std::string stratum_label(const std::vector<std::string>& categories);
std::vector<std::string> split_stratum_label(std::string_view label);

/// Filters the unique view. An entity's activity span and attributes are
/// taken over its whole component (attributes: representative first, then
/// other members in SVID order). Members must have appeared by `as_of` and,
/// with a retention window, been seen within the last Ω years. Throws
/// Error(unknown_strata_attribute) if no entity carries a stratum
/// attribute; members lacking one fall in the "NA" category.
Frame build_frame(const EntityRegister& reg, const RuleSet& rules, Date as_of,
                  const std::vector<std::string>& strata_dims, std::string frame_id);

/// Writes the snapshot into `dir` unless an identical one exists. Throws
/// Error(snapshot_conflict) if a different snapshot already holds the name.
std::filesystem::path save_snapshot(const Frame& frame, const std::filesystem::path& dir);

}  // namespace regisforge::registry
