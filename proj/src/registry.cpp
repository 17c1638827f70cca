#include "regisforge/registry.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "regisforge/csv.hpp"
#include "regisforge/error.hpp"
#include "regisforge/text.hpp"

namespace regisforge::registry {

using nlohmann::json;

namespace {

std::optional<double> as_number(const std::string& s) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

int compare_values(const std::string& a, const std::string& b) {
    auto na = as_number(a);
    auto nb = as_number(b);
    if (na && nb) return *na < *nb ? -1 : (*na > *nb ? 1 : 0);
    return a.compare(b) < 0 ? -1 : (a == b ? 0 : 1);
}

bool evaluate(const Predicate& p, const Attributes& attrs, const std::optional<DateSpan>& span) {
    using Op = Predicate::Op;
    if (p.op == Op::overlaps) {
        if (!span || p.values.size() != 2) return false;
        DateSpan window{Date::parse(p.values[0]), Date::parse(p.values[1])};
        return span->overlaps(window);
    }
    auto it = attrs.find(p.field);
    const bool present = it != attrs.end() && !it->second.empty();
    switch (p.op) {
        case Op::present: return present;
        case Op::absent: return !present;
        case Op::eq: return present && !p.values.empty() && it->second == p.values[0];
        case Op::ne: return !present || p.values.empty() || it->second != p.values[0];
        case Op::in:
            return present && std::find(p.values.begin(), p.values.end(), it->second) != p.values.end();
        case Op::ge: return present && !p.values.empty() && compare_values(it->second, p.values[0]) >= 0;
        case Op::le: return present && !p.values.empty() && compare_values(it->second, p.values[0]) <= 0;
        case Op::overlaps: break;
    }
    return false;
}

Svid parse_svid(const json& j) {
    return Svid::parse(j.get<std::string>());
}

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
            fn(j);
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_artifact, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace

Predicate::Op Predicate::parse_op(std::string_view name) {
    static const std::pair<std::string_view, Op> kOps[] = {
        {"present", Op::present}, {"absent", Op::absent}, {"eq", Op::eq}, {"ne", Op::ne},
        {"in", Op::in},           {"ge", Op::ge},         {"le", Op::le}, {"overlaps", Op::overlaps},
    };
    for (auto [n, op] : kOps) {
        if (n == name) return op;
    }
    throw Error(Errc::config_invalid, "unknown rule operator '" + std::string(name) + "'");
}

bool RuleSet::passes(const Attributes& attrs, std::optional<DateSpan> span) const {
    return std::all_of(predicates.begin(), predicates.end(),
                       [&](const Predicate& p) { return evaluate(p, attrs, span); });
}

// ---------------------------------------------------------------------------

std::string namespace_source_key(std::string_view raw_key, std::string_view institution,
                                 std::string_view period) {
    return text::join_escaped({std::string(raw_key), std::string(institution), std::string(period)}, '|');
}

SourceKeyParts split_source_key(std::string_view composite) {
    auto parts = text::split_escaped(composite, '|');
    if (parts.size() != 3) {
        throw Error(Errc::malformed_sequence, "not a namespaced source key: '" + std::string(composite) + "'");
    }
    return {parts[0], parts[1], parts[2]};
}

// ---------------------------------------------------------------------------
// AdminRegister

AdminRegister::AdminRegister(std::string source) : source_(std::move(source)) {}

const AdminRecord& AdminRegister::ingest_transaction(idforge::Generator& ids, std::string_view source_key,
                                                     const Attributes& attrs, std::string_view date,
                                                     const RuleSet& birth_rules) {
    const Date when = Date::parse(date);
    if (auto it = by_key_.find(std::string(source_key)); it != by_key_.end()) {
        AdminRecord& rec = records_[it->second];
        Attributes merged = rec.attrs;
        for (const auto& [k, v] : attrs) {
            if (!v.empty()) merged[k] = v;
        }
        const Date first = std::min(rec.first_seen, when);
        const Date last = std::max(rec.last_seen, when);
        if (merged != rec.attrs || first != rec.first_seen || last != rec.last_seen) {
            apply_put(source_key, rec.svid, std::move(merged), first, last);
        }
        return records_[it->second];
    }
    if (!birth_rules.passes(attrs)) {
        throw Error(Errc::rejected_by_birth_rules,
                    source_ + " key '" + std::string(source_key) + "' fails the birth rules");
    }
    Attributes kept;
    for (const auto& [k, v] : attrs) {
        if (!v.empty()) kept.emplace(k, v);
    }
    apply_put(source_key, ids.next(), std::move(kept), when, when);
    return records_.back();
}

void AdminRegister::apply_put(std::string_view source_key, Svid svid, Attributes attrs, Date first, Date last) {
    json line = {{"op", "put"},
                 {"key", std::string(source_key)},
                 {"svid", svid.to_string()},
                 {"attrs", attrs},
                 {"first_seen", first.to_string()},
                 {"last_seen", last.to_string()}};
    journal_.push_back(line.dump());

    if (auto it = by_key_.find(std::string(source_key)); it != by_key_.end()) {
        AdminRecord& rec = records_[it->second];
        if (rec.svid != svid) {
            throw Error(Errc::corrupt_artifact, "source key '" + std::string(source_key) + "' changed SVID");
        }
        rec.attrs = std::move(attrs);
        rec.first_seen = first;
        rec.last_seen = last;
        return;
    }
    if (!records_.empty() && svid <= records_.back().svid) {
        throw Error(Errc::internal_invariant, "SVIDs must be born in ascending order");
    }
    const std::size_t idx = records_.size();
    records_.push_back(AdminRecord{source_, std::string(source_key), svid, svid, std::move(attrs), first, last});
    by_key_.emplace(std::string(source_key), idx);
    by_svid_.emplace(svid, idx);
    groups_.add(svid);
}

void AdminRegister::mark_source_duplicates(std::span<const Svid> group) {
    for (Svid s : group) {
        if (!by_svid_.count(s)) {
            throw Error(Errc::unknown_svid, s.to_string() + " is not in the " + source_ + " register");
        }
    }
    if (group.size() < 2) return;
    json svids = json::array();
    for (Svid s : group) svids.push_back(s.to_string());
    journal_.push_back(json{{"op", "dup"}, {"svids", svids}}.dump());
    apply_duplicates(group);
}

void AdminRegister::apply_duplicates(std::span<const Svid> group) {
    const std::size_t first = by_svid_.at(group.front());
    for (Svid s : group.subspan(1)) groups_.unite(first, by_svid_.at(s));
    const Svid alias = groups_.min_label(first);
    for (std::size_t m : groups_.members(first)) records_[m].alias_id = alias;
}

const AdminRecord* AdminRegister::find_key(std::string_view source_key) const {
    auto it = by_key_.find(std::string(source_key));
    return it == by_key_.end() ? nullptr : &records_[it->second];
}

const AdminRecord* AdminRegister::find(Svid svid) const {
    auto it = by_svid_.find(svid);
    return it == by_svid_.end() ? nullptr : &records_[it->second];
}

const AdminRecord& AdminRegister::at(Svid svid) const {
    if (const AdminRecord* r = find(svid)) return *r;
    throw Error(Errc::unknown_svid, svid.to_string() + " is not in the " + source_ + " register");
}

std::vector<const AdminRecord*> AdminRegister::representatives() const {
    std::vector<const AdminRecord*> out;
    for (const auto& r : records_) {
        if (r.is_representative()) out.push_back(&r);
    }
    return out;
}

void AdminRegister::flush(const std::filesystem::path& path) {
    if (journal_.empty()) {
        if (!std::filesystem::exists(path)) std::ofstream(path, std::ios::app);
        return;
    }
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error(Errc::io_error, "cannot append to " + path.string());
    for (const auto& line : journal_) out << line << '\n';
    journal_.clear();
}

AdminRegister AdminRegister::load(const std::filesystem::path& path, std::string source) {
    AdminRegister reg(std::move(source));
    if (!std::filesystem::exists(path)) return reg;
    for_each_json_line(path, [&](const json& j) {
        const auto op = j.at("op").get<std::string>();
        if (op == "put") {
            reg.apply_put(j.at("key").get<std::string>(), parse_svid(j.at("svid")),
                          j.at("attrs").get<Attributes>(), Date::parse(j.at("first_seen").get<std::string>()),
                          Date::parse(j.at("last_seen").get<std::string>()));
        } else if (op == "dup") {
            std::vector<Svid> group;
            for (const auto& s : j.at("svids")) group.push_back(parse_svid(s));
            reg.apply_duplicates(group);
        } else {
            throw Error(Errc::corrupt_artifact, path.string() + ": unknown op '" + op + "'");
        }
    });
    reg.journal_.clear();
    return reg;
}

// ---------------------------------------------------------------------------
// EntityRegister

std::vector<std::string> Hierarchy::entity_types() const {
    std::set<std::string> types;
    for (const auto& [c, p] : allowed) {
        types.insert(c);
        types.insert(p);
    }
    return {types.begin(), types.end()};
}

EntityRegister EntityRegister::init(std::span<const AdminRegister* const> admin,
                                    const std::map<std::string, std::string>& entity_types) {
    EntityRegister reg;
    for (const AdminRegister* source : admin) {
        reg.sources_.push_back(source->source());
        auto type_it = entity_types.find(source->source());
        const std::string type = type_it == entity_types.end() ? "person" : type_it->second;
        for (const AdminRecord* rec : source->representatives()) {
            if (reg.index_.count(rec->svid)) {
                throw Error(Errc::duplicate_birth_svid,
                            rec->svid.to_string() + " appears in more than one administrative register");
            }
            EntityRecord e;
            e.birth_svid = rec->svid;
            e.birth_source = source->source();
            e.source_alias[e.birth_source] = rec->svid;
            e.current_id = rec->svid;
            e.entity_type = type;
            e.active_span = {rec->first_seen, rec->last_seen};
            e.attrs = rec->attrs;
            reg.index_.emplace(rec->svid, reg.records_.size());
            reg.records_.push_back(std::move(e));
            reg.groups_.add(rec->svid);
        }
    }
    return reg;
}

std::size_t EntityRegister::index_of(Svid svid) const {
    auto it = index_.find(svid);
    if (it == index_.end()) throw Error(Errc::unknown_svid, svid.to_string() + " is not in the entity register");
    return it->second;
}

const EntityRecord& EntityRegister::at(Svid svid) const { return records_[index_of(svid)]; }

void EntityRegister::link_entities(Svid a, Svid b) {
    const std::size_t ia = index_of(a);
    const std::size_t ib = index_of(b);
    if (ia == ib) return;
    EntityRecord& ra = records_[ia];
    EntityRecord& rb = records_[ib];
    const bool cross = ra.birth_source != rb.birth_source;
    if (groups_.same(ia, ib) && (!cross || (ra.source_alias.count(rb.birth_source) &&
                                            ra.source_alias.at(rb.birth_source) == b &&
                                            rb.source_alias.count(ra.birth_source) &&
                                            rb.source_alias.at(ra.birth_source) == a))) {
        return;
    }

    if (cross) {
        auto occupied = [](const EntityRecord& r, const std::string& col, Svid want) {
            auto it = r.source_alias.find(col);
            return it != r.source_alias.end() && it->second != want;
        };
        if (occupied(ra, rb.birth_source, b) || occupied(rb, ra.birth_source, a)) {
            throw Error(Errc::conflicting_alias, "linking " + a.to_string() + " and " + b.to_string() +
                                                     " would overwrite an existing alias column");
        }
        ra.source_alias[rb.birth_source] = b;
        rb.source_alias[ra.birth_source] = a;
    }
    links_.push_back({a, b});

    const std::size_t root = groups_.unite(ia, ib);
    if (root == groups_.size()) return;
    const Svid min = groups_.min_label(root);
    for (std::size_t m : groups_.members(root)) records_[m].current_id = min;
}

Svid EntityRegister::resolve_current_id(Svid svid) const { return records_[index_of(svid)].current_id; }

std::vector<EntityRecord> EntityRegister::unique_view() const {
    std::vector<EntityRecord> out;
    for (const auto& r : records_) {
        if (r.is_unique()) out.push_back(r);
    }
    std::sort(out.begin(), out.end(),
              [](const EntityRecord& x, const EntityRecord& y) { return x.birth_svid < y.birth_svid; });
    return out;
}

std::vector<Svid> EntityRegister::component(Svid svid) const {
    std::vector<Svid> out;
    for (std::size_t m : groups_.members(index_of(svid))) out.push_back(records_[m].birth_svid);
    std::sort(out.begin(), out.end());
    return out;
}

void EntityRegister::link_child_to_parent(Svid child, Svid parent, const Hierarchy& hierarchy) {
    const std::size_t ic = index_of(child);
    const std::size_t ip = index_of(parent);
    EntityRecord& rc = records_[ic];
    const EntityRecord& rp = records_[ip];

    if (ic == ip) {
        if (rc.parent_alias && *rc.parent_alias != rc.current_id) {
            throw Error(Errc::conflicting_alias, child.to_string() + " already has a parent");
        }
        apply_parent(ic, ip);
        parents_.emplace_back(child, parent);
        return;
    }
    if (!hierarchy.permits(rc.entity_type, rp.entity_type)) {
        throw Error(Errc::type_mismatch,
                    "a " + rc.entity_type + " cannot sit under a " + rp.entity_type);
    }
    // Walk up from the parent; reaching the child's component closes a loop.
    std::size_t cursor = ip;
    for (std::size_t steps = 0; steps <= records_.size(); ++steps) {
        if (groups_.same(cursor, ic)) {
            throw Error(Errc::cycle_detected,
                        "placing " + child.to_string() + " under " + parent.to_string() + " forms a cycle");
        }
        const auto& up = records_[cursor].parent_alias;
        if (!up || *up == records_[cursor].current_id) break;
        cursor = index_of(*up);
    }
    if (rc.parent_alias && *rc.parent_alias != rp.current_id) {
        throw Error(Errc::conflicting_alias,
                    child.to_string() + " already sits under " + rc.parent_alias->to_string());
    }
    if (rc.parent_alias) return;
    apply_parent(ic, ip);
    parents_.emplace_back(child, parent);
}

void EntityRegister::apply_parent(std::size_t child, std::size_t parent) {
    EntityRecord& rp = records_[parent];
    records_[child].parent_alias = rp.current_id;
    if (!rp.parent_alias) rp.parent_alias = rp.current_id;
}

std::map<std::string, std::optional<Svid>> EntityRegister::hierarchy_row(Svid svid,
                                                                         const Hierarchy& hierarchy) const {
    const EntityRecord& r = at(svid);
    std::map<std::string, std::optional<Svid>> row;
    for (const auto& type : hierarchy.entity_types()) row[type] = std::nullopt;
    row[r.entity_type] = r.birth_svid;
    if (!r.parent_alias) return row;
    if (*r.parent_alias == r.current_id) {
        for (const auto& [child_type, parent_type] : hierarchy.allowed) {
            if (parent_type == r.entity_type) row[child_type] = r.birth_svid;
        }
    } else {
        row[at(*r.parent_alias).entity_type] = *r.parent_alias;
    }
    return row;
}

void EntityRegister::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    out << json{{"type", "sources"}, {"sources", sources_}}.dump() << '\n';
    for (const auto& r : records_) {
        out << json{{"type", "entity"},
                    {"birth_svid", r.birth_svid.to_string()},
                    {"birth_source", r.birth_source},
                    {"entity_type", r.entity_type},
                    {"first_seen", r.active_span.first.to_string()},
                    {"last_seen", r.active_span.last.to_string()},
                    {"attrs", r.attrs}}
                   .dump()
            << '\n';
    }
    for (const auto& l : links_) {
        out << json{{"type", "link"}, {"a", l.a.to_string()}, {"b", l.b.to_string()}}.dump() << '\n';
    }
    for (const auto& [c, p] : parents_) {
        out << json{{"type", "parent"}, {"child", c.to_string()}, {"parent", p.to_string()}}.dump() << '\n';
    }
}

EntityRegister EntityRegister::load(const std::filesystem::path& path) {
    EntityRegister reg;
    for_each_json_line(path, [&](const json& j) {
        const auto type = j.at("type").get<std::string>();
        if (type == "sources") {
            reg.sources_ = j.at("sources").get<std::vector<std::string>>();
        } else if (type == "entity") {
            EntityRecord e;
            e.birth_svid = parse_svid(j.at("birth_svid"));
            e.birth_source = j.at("birth_source").get<std::string>();
            e.source_alias[e.birth_source] = e.birth_svid;
            e.current_id = e.birth_svid;
            e.entity_type = j.at("entity_type").get<std::string>();
            e.active_span = {Date::parse(j.at("first_seen").get<std::string>()),
                             Date::parse(j.at("last_seen").get<std::string>())};
            e.attrs = j.at("attrs").get<Attributes>();
            if (reg.index_.count(e.birth_svid)) {
                throw Error(Errc::corrupt_artifact, "duplicate entity " + e.birth_svid.to_string());
            }
            reg.index_.emplace(e.birth_svid, reg.records_.size());
            reg.groups_.add(e.birth_svid);
            reg.records_.push_back(std::move(e));
        } else if (type == "link") {
            reg.link_entities(parse_svid(j.at("a")), parse_svid(j.at("b")));
        } else if (type == "parent") {
            const Svid c = parse_svid(j.at("child"));
            const Svid p = parse_svid(j.at("parent"));
            reg.apply_parent(reg.index_of(c), reg.index_of(p));
            reg.parents_.emplace_back(c, p);
        } else {
            throw Error(Errc::corrupt_artifact, path.string() + ": unknown record type '" + type + "'");
        }
    });
    return reg;
}

// ---------------------------------------------------------------------------
// Frames

std::string stratum_label(const std::vector<std::string>& categories) {
    return text::join_escaped(categories, '|');
}

std::vector<std::string> split_stratum_label(std::string_view label) { return text::split_escaped(label, '|'); }

std::vector<std::map<std::string, double>> Frame::margins() const {
    std::vector<std::map<std::string, double>> out(dimensions.size());
    for (const auto& [svid, cats] : cells) {
        for (std::size_t d = 0; d < cats.size(); ++d) out[d][cats[d]] += 1.0;
    }
    return out;
}

std::string Frame::snapshot_name() const { return frame_id + "@" + as_of.to_string() + ".csv"; }

std::string Frame::render() const {
    std::ostringstream out;
    out << "# frame_id: " << frame_id << '\n';
    out << "# as_of: " << as_of.to_string() << '\n';
    out << "# dimensions: " << text::join_escaped(dimensions, '|') << '\n';
    out << "# members: " << members.size() << '\n';
    out << "svid,stratum,as_of\n";
    const std::string date = as_of.to_string();
    for (Svid s : members) {
        out << s.to_string() << ',' << csv::escape(strata.at(s)) << ',' << date << '\n';
    }
    return out.str();
}

Frame Frame::parse(std::string_view content) {
    Frame f;
    std::istringstream in{std::string(content)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# ", 0) == 0) {
            auto colon = line.find(": ");
            if (colon == std::string::npos) continue;
            auto key = line.substr(2, colon - 2);
            auto value = line.substr(colon + 2);
            if (key == "frame_id") f.frame_id = value;
            if (key == "as_of") f.as_of = Date::parse(value);
            if (key == "dimensions" && !value.empty()) f.dimensions = text::split_escaped(value, '|');
            continue;
        }
        break;
    }
    auto table = csv::parse(content);
    auto col_svid = table.column("svid");
    auto col_stratum = table.column("stratum");
    if (!col_svid || !col_stratum) throw Error(Errc::corrupt_artifact, "frame table lacks svid/stratum columns");
    for (const auto& row : table.rows) {
        const Svid s = Svid::parse(row[*col_svid]);
        const std::string& label = row[*col_stratum];
        f.members.insert(s);
        f.strata[s] = label;
        f.cells[s] = f.dimensions.empty() ? std::vector<std::string>{} : split_stratum_label(label);
        ++f.stratum_counts[label];
    }
    return f;
}

Frame build_frame(const EntityRegister& reg, const RuleSet& rules, Date as_of,
                  const std::vector<std::string>& strata_dims, std::string frame_id) {
    for (const auto& dim : strata_dims) {
        const bool known = std::any_of(reg.records().begin(), reg.records().end(),
                                       [&](const EntityRecord& r) { return r.attrs.count(dim) != 0; });
        if (!known) throw Error(Errc::unknown_strata_attribute, "no entity carries attribute '" + dim + "'");
    }
    Frame f;
    f.frame_id = std::move(frame_id);
    f.as_of = as_of;
    f.dimensions = strata_dims;
    const std::optional<Date> horizon =
        rules.retention_years ? std::optional<Date>(as_of.add_years(-*rules.retention_years)) : std::nullopt;

    for (const EntityRecord& rep : reg.unique_view()) {
        DateSpan span = rep.active_span;
        Attributes attrs = rep.attrs;
        for (Svid m : reg.component(rep.birth_svid)) {
            if (m == rep.birth_svid) continue;
            const EntityRecord& other = reg.at(m);
            span = span.hull(other.active_span);
            for (const auto& [k, v] : other.attrs) attrs.emplace(k, v);
        }
        if (span.first > as_of) continue;
        if (horizon && span.last < *horizon) continue;
        Attributes view = attrs;
        view["entity_type"] = rep.entity_type;
        view["birth_source"] = rep.birth_source;
        if (!rules.passes(view, span)) continue;

        std::vector<std::string> cats;
        for (const auto& dim : strata_dims) {
            auto it = attrs.find(dim);
            cats.push_back(it == attrs.end() || it->second.empty() ? std::string(kMissingCategory) : it->second);
        }
        const std::string label = stratum_label(cats);
        f.members.insert(rep.birth_svid);
        f.strata.emplace(rep.birth_svid, label);
        f.cells.emplace(rep.birth_svid, std::move(cats));
        ++f.stratum_counts[label];
    }
    if (f.members.empty()) f.warnings.push_back("empty-frame: no entity passes the frame rules");
    return f;
}

std::filesystem::path save_snapshot(const Frame& frame, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto path = dir / frame.snapshot_name();
    const std::string content = frame.render();
    if (std::filesystem::exists(path)) {
        if (read_all(path) == content) return path;
        throw Error(Errc::snapshot_conflict,
                    path.string() + " already holds a different snapshot; frames are never rebuilt in place");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    out << content;
    return path;
}

}  // namespace regisforge::registry
