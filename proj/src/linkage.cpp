#include "regisforge/linkage.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "regisforge/csv.hpp"
#include "regisforge/error.hpp"
#include "regisforge/text.hpp"

namespace regisforge::linkage {

using nlohmann::json;

namespace {

json method_to_json(const Method& m) {
    if (m.kind == Method::Kind::exact_key) {
        return {{"kind", "exact-key"}, {"left_field", m.left_field}, {"right_field", m.right_field}};
    }
    json compare = json::array();
    for (const auto& c : m.compare_fields) {
        json f = {{"field", c.field},
                  {"kind", c.comparator.kind == kernels::Comparator::Kind::text ? "text" : "numeric"}};
        if (c.comparator.kind == kernels::Comparator::Kind::numeric) f["scale"] = c.comparator.scale;
        compare.push_back(f);
    }
    return {{"kind", "blocked-similarity"},
            {"blocking", m.blocking_fields},
            {"compare", compare},
            {"threshold", m.threshold}};
}

Method method_from_json(const json& j) {
    Method m;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "exact-key") {
        m.kind = Method::Kind::exact_key;
        m.left_field = j.at("left_field").get<std::string>();
        m.right_field = j.at("right_field").get<std::string>();
        return m;
    }
    if (kind != "blocked-similarity") throw Error(Errc::corrupt_artifact, "unknown linkage method '" + kind + "'");
    m.kind = Method::Kind::blocked_similarity;
    m.blocking_fields = j.at("blocking").get<std::vector<std::string>>();
    m.threshold = j.at("threshold").get<double>();
    for (const auto& f : j.at("compare")) {
        CompareField c;
        c.field = f.at("field").get<std::string>();
        if (f.value("kind", "text") == "numeric") {
            c.comparator.kind = kernels::Comparator::Kind::numeric;
            c.comparator.scale = f.at("scale").get<double>();
        }
        m.compare_fields.push_back(c);
    }
    return m;
}

bool pair_less(const Pair& a, const Pair& b) {
    return a.left != b.left ? a.left < b.left : a.right < b.right;
}

std::vector<std::pair<std::string, std::string>> header_block(std::string_view content) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in{std::string(content)};
    std::string line;
    while (std::getline(in, line) && line.rfind("# ", 0) == 0) {
        auto colon = line.find(": ");
        if (colon == std::string::npos) continue;
        out.emplace_back(line.substr(2, colon - 2), line.substr(colon + 2));
    }
    return out;
}

void require_field(const timeline::TimelineDB& db, const std::string& field) {
    if (!db.has_field(field)) {
        throw Error(Errc::unknown_field, "source " + db.source() + " has no field '" + field + "'");
    }
}

}  // namespace

std::string Method::describe() const {
    if (kind == Kind::exact_key) return "exact-key(" + left_field + "=" + right_field + ")";
    std::string compare;
    for (const auto& c : compare_fields) {
        if (!compare.empty()) compare += ",";
        compare += c.field;
        if (c.comparator.kind == kernels::Comparator::Kind::numeric) {
            compare += ":numeric/" + text::format_double(c.comparator.scale);
        }
    }
    std::string blocking;
    for (const auto& b : blocking_fields) blocking += (blocking.empty() ? "" : ",") + b;
    return "blocked-similarity(threshold=" + text::format_double(threshold) + "; blocking=" + blocking +
           "; compare=" + compare + ")";
}

bool operator==(const Method& a, const Method& b) { return method_to_json(a) == method_to_json(b); }

bool LinkageRelation::is_one_to_one() const {
    std::unordered_map<std::string, int> l, r;
    for (const auto& p : pairs) {
        if (++l[p.left] > 1 || ++r[p.right] > 1) return false;
    }
    return true;
}

LinkageRelation LinkageRelation::flipped() const {
    LinkageRelation f = *this;
    std::swap(f.left_source, f.right_source);
    if (f.method.kind == Method::Kind::exact_key) std::swap(f.method.left_field, f.method.right_field);
    for (auto& p : f.pairs) std::swap(p.left, p.right);
    std::sort(f.pairs.begin(), f.pairs.end(), pair_less);
    for (auto& c : f.collisions) {
        c.side = c.side == Collision::Side::left ? Collision::Side::right : Collision::Side::left;
    }
    return f;
}

std::string LinkageRelation::render() const {
    json collisions_json = json::array();
    for (const auto& c : collisions) {
        collisions_json.push_back({{"side", c.side == Collision::Side::left ? "left" : "right"},
                                   {"value", c.value},
                                   {"entity_keys", c.entity_keys}});
    }
    std::ostringstream out;
    out << "# name: " << name << '\n';
    out << "# left_source: " << left_source << '\n';
    out << "# right_source: " << right_source << '\n';
    out << "# method: " << method_to_json(method).dump() << '\n';
    out << "# describe: " << method.describe() << '\n';
    out << "# candidates: " << candidates << '\n';
    out << "# pairs: " << pairs.size() << '\n';
    out << "# collisions: " << collisions_json.dump() << '\n';
    out << "left_key,right_key,score\n";
    for (const auto& p : pairs) csv::write_row(out, {p.left, p.right, text::format_double(p.score)});
    return out.str();
}

LinkageRelation LinkageRelation::parse(std::string_view content) {
    LinkageRelation rel;
    try {
        for (const auto& [key, value] : header_block(content)) {
            if (key == "name") rel.name = value;
            if (key == "left_source") rel.left_source = value;
            if (key == "right_source") rel.right_source = value;
            if (key == "method") rel.method = method_from_json(json::parse(value));
            if (key == "candidates") rel.candidates = std::stoull(value);
            if (key == "collisions") {
                for (const auto& c : json::parse(value)) {
                    rel.collisions.push_back({c.at("side") == "left" ? Collision::Side::left : Collision::Side::right,
                                              c.at("value").get<std::string>(),
                                              c.at("entity_keys").get<std::vector<std::string>>()});
                }
            }
        }
    } catch (const json::exception& e) {
        throw Error(Errc::corrupt_artifact, std::string("relation header: ") + e.what());
    }
    auto table = csv::parse(content);
    auto l = table.column("left_key");
    auto r = table.column("right_key");
    auto s = table.column("score");
    if (!l || !r || !s) throw Error(Errc::corrupt_artifact, "relation table lacks left_key/right_key/score");
    for (const auto& row : table.rows) rel.pairs.push_back({row[*l], row[*r], std::stod(row[*s])});
    return rel;
}

// ---------------------------------------------------------------------------

LinkageRelation link_exact_keys(std::span<const KeyedValue> left, std::span<const KeyedValue> right) {
    struct Slot {
        std::string_view first;
        std::size_t count = 0;
    };
    using Index = std::unordered_map<std::string_view, Slot>;
    auto index = [](std::span<const KeyedValue> side) {
        Index by_value;
        by_value.reserve(side.size());
        for (const auto& kv : side) {
            auto& slot = by_value[kv.value];
            if (slot.count++ == 0) slot.first = kv.entity_key;
        }
        return by_value;
    };
    const auto left_index = index(left);
    const auto right_index = index(right);

    LinkageRelation rel;
    rel.method.kind = Method::Kind::exact_key;
    auto report = [&rel](Collision::Side side, std::span<const KeyedValue> records, const Index& by_value) {
        std::map<std::string_view, std::vector<std::string>> shared;
        for (const auto& kv : records) {
            if (by_value.at(kv.value).count > 1) shared[kv.value].push_back(kv.entity_key);
        }
        for (auto& [value, keys] : shared) {
            std::sort(keys.begin(), keys.end());
            rel.collisions.push_back({side, std::string(value), std::move(keys)});
        }
    };
    report(Collision::Side::left, left, left_index);
    report(Collision::Side::right, right, right_index);
    for (const auto& [value, l] : left_index) {
        auto it = right_index.find(value);
        if (it == right_index.end()) continue;
        ++rel.candidates;
        if (l.count != 1 || it->second.count != 1) continue;
        rel.pairs.push_back({std::string(l.first), std::string(it->second.first), 1.0});
    }
    std::sort(rel.pairs.begin(), rel.pairs.end(), pair_less);
    return rel;
}

LinkageRelation build_exact_linkage(const timeline::TimelineDB& left, const timeline::TimelineDB& right,
                                    const std::string& left_field, const std::string& right_field) {
    require_field(left, left_field);
    require_field(right, right_field);
    auto keyed = [](const timeline::TimelineDB& db, const std::string& field) {
        std::vector<KeyedValue> out;
        for (const auto& [key, events] : db.timelines()) {
            if (auto v = db.latest_value(key, field)) out.push_back({key, *v});
        }
        return out;
    };
    const auto lk = keyed(left, left_field);
    const auto rk = keyed(right, right_field);
    LinkageRelation rel = link_exact_keys(lk, rk);
    rel.left_source = left.source();
    rel.right_source = right.source();
    rel.method.left_field = left_field;
    rel.method.right_field = right_field;
    return rel;
}

std::vector<ScoredCandidate> greedy_one_to_one(std::vector<ScoredCandidate> candidates,
                                               std::span<const std::string> left_keys,
                                               std::span<const std::string> right_keys, double threshold) {
    std::erase_if(candidates, [threshold](const ScoredCandidate& c) { return c.score < threshold; });
    std::sort(candidates.begin(), candidates.end(), [&](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (left_keys[a.left] != left_keys[b.left]) return left_keys[a.left] < left_keys[b.left];
        return right_keys[a.right] < right_keys[b.right];
    });
    std::vector<bool> left_used(left_keys.size()), right_used(right_keys.size());
    std::vector<ScoredCandidate> accepted;
    for (const auto& c : candidates) {
        if (left_used[c.left] || right_used[c.right]) continue;
        left_used[c.left] = right_used[c.right] = true;
        accepted.push_back(c);
    }
    return accepted;
}

LinkageRelation build_blocked_linkage(const timeline::TimelineDB& left, const timeline::TimelineDB& right,
                                      const std::vector<std::string>& blocking_fields,
                                      const std::vector<CompareField>& compare_fields, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw Error(Errc::threshold_out_of_range, "threshold must lie in (0, 1], got " + text::format_double(threshold));
    }
    for (const auto& f : blocking_fields) {
        require_field(left, f);
        require_field(right, f);
    }
    for (const auto& c : compare_fields) {
        require_field(left, c.field);
        require_field(right, c.field);
    }
    std::vector<kernels::Comparator> comparators;
    for (const auto& c : compare_fields) comparators.push_back(c.comparator);

    struct Side {
        std::vector<std::string> keys;
        std::vector<kernels::FieldValues> values;
        std::map<std::string, std::vector<std::size_t>> blocks;
    };
    auto prepare = [&](const timeline::TimelineDB& db) {
        Side side;
        for (const auto& [key, events] : db.timelines()) {
            std::vector<std::string> block;
            bool complete = true;
            for (const auto& f : blocking_fields) {
                auto v = db.latest_value(key, f);
                if (!v) {
                    complete = false;
                    break;
                }
                block.push_back(text::standardize(*v));
            }
            if (!complete) continue;
            kernels::FieldValues values;
            for (const auto& c : compare_fields) {
                auto v = db.latest_value(key, c.field);
                if (v && c.comparator.kind == kernels::Comparator::Kind::text) v = text::standardize(*v);
                values.push_back(std::move(v));
            }
            side.blocks[text::join_escaped(block, '|')].push_back(side.keys.size());
            side.keys.push_back(key);
            side.values.push_back(std::move(values));
        }
        return side;
    };
    const Side l = prepare(left);
    const Side r = prepare(right);

    std::vector<kernels::Candidate> candidates;
    for (const auto& [block, left_members] : l.blocks) {
        auto it = r.blocks.find(block);
        if (it == r.blocks.end()) continue;
        for (std::size_t li : left_members) {
            for (std::size_t ri : it->second) candidates.push_back({li, ri});
        }
    }
    const auto scores = kernels::parallel::score_candidates(candidates, l.values, r.values, comparators);

    std::vector<ScoredCandidate> scored(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        scored[i] = {candidates[i].left, candidates[i].right, scores[i]};
    }
    LinkageRelation rel;
    rel.left_source = left.source();
    rel.right_source = right.source();
    rel.method.kind = Method::Kind::blocked_similarity;
    rel.method.blocking_fields = blocking_fields;
    rel.method.compare_fields = compare_fields;
    rel.method.threshold = threshold;
    rel.candidates = candidates.size();
    for (const auto& c : greedy_one_to_one(std::move(scored), l.keys, r.keys, threshold)) {
        rel.pairs.push_back({l.keys[c.left], r.keys[c.right], c.score});
    }
    std::sort(rel.pairs.begin(), rel.pairs.end(), pair_less);
    return rel;
}

// ---------------------------------------------------------------------------

std::size_t IntegratedDataset::column(std::string_view source) const {
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (sources[i] == source) return i;
    }
    throw Error(Errc::unknown_source, "integrated dataset has no column for " + std::string(source));
}

std::string IntegratedDataset::render() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < path.size(); ++i) out << "# step " << i + 1 << ": " << path[i] << '\n';
    out << "# terminal_register: " << (terminal_register ? "true" : "false") << '\n';
    out << "# rows: " << rows.size() << '\n';
    csv::write_row(out, sources);
    for (const auto& row : rows) csv::write_row(out, row);
    return out.str();
}

IntegratedDataset IntegratedDataset::parse(std::string_view content) {
    IntegratedDataset ds;
    for (const auto& [key, value] : header_block(content)) {
        if (key.rfind("step ", 0) == 0) ds.path.push_back(value);
        if (key == "terminal_register") ds.terminal_register = value == "true";
    }
    auto table = csv::parse(content);
    ds.sources = std::move(table.header);
    ds.rows = std::move(table.rows);
    return ds;
}

IntegratedDataset step_through(std::span<const LinkageRelation> path) {
    if (path.empty()) throw Error(Errc::non_chainable_path, "empty path");

    std::vector<LinkageRelation> oriented;
    oriented.reserve(path.size());
    oriented.push_back(path[0]);
    if (path.size() > 1) {
        const auto& next = path[1];
        const bool chains = next.left_source == path[0].right_source || next.right_source == path[0].right_source;
        const bool chains_flipped = next.left_source == path[0].left_source || next.right_source == path[0].left_source;
        if (!chains && chains_flipped) oriented[0] = path[0].flipped();
    }
    for (std::size_t i = 1; i < path.size(); ++i) {
        const std::string& tail = oriented.back().right_source;
        if (path[i].left_source == tail) {
            oriented.push_back(path[i]);
        } else if (path[i].right_source == tail) {
            oriented.push_back(path[i].flipped());
        } else {
            throw Error(Errc::non_chainable_path, "relation " + std::to_string(i + 1) + " (" + path[i].left_source +
                                                      "-" + path[i].right_source + ") does not touch " + tail);
        }
    }

    IntegratedDataset ds;
    ds.sources = {oriented[0].left_source, oriented[0].right_source};
    for (const auto& p : oriented[0].pairs) ds.rows.push_back({p.left, p.right});
    for (std::size_t i = 1; i < oriented.size(); ++i) {
        std::unordered_map<std::string, const std::string*> step;
        for (const auto& p : oriented[i].pairs) step.emplace(p.left, &p.right);
        std::vector<std::vector<std::string>> next;
        for (auto& row : ds.rows) {
            auto it = step.find(row.back());
            if (it == step.end()) continue;
            row.push_back(*it->second);
            next.push_back(std::move(row));
        }
        ds.rows = std::move(next);
        ds.sources.push_back(oriented[i].right_source);
    }
    for (const auto& rel : oriented) {
        ds.path.push_back(rel.left_source + "->" + rel.right_source + " " + rel.method.describe());
    }
    ds.terminal_register = ds.sources.back() == kRegisterSource;
    std::sort(ds.rows.begin(), ds.rows.end());
    return ds;
}

}  // namespace regisforge::linkage
