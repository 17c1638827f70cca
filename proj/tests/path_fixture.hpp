#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "regisforge/linkage.hpp"
#include "regisforge/timeline.hpp"

namespace path_fixture {

namespace fs = std::filesystem;
using regisforge::linkage::IntegratedDataset;
using regisforge::linkage::LinkageRelation;
using regisforge::timeline::TimelineDB;

inline fs::path dir() { return fs::path(REGISFORGE_FIXTURES) / "path_dependence"; }

inline TimelineDB load(const std::string& tag) {
    auto events = regisforge::timeline::read_events_csv(dir() / (tag + ".csv"), "id", "date");
    return regisforge::timeline::group_events(tag, events);
}

/// Relation between two fixture sources, either blocked on region and
/// compared on name at 0.75 or exact on uid.
inline LinkageRelation relate(const TimelineDB& l, const TimelineDB& r, bool blocked) {
    LinkageRelation rel;
    if (blocked) {
        regisforge::linkage::CompareField name{"name", {}};
        rel = regisforge::linkage::build_blocked_linkage(l, r, {"region"}, {name}, 0.75);
    } else {
        rel = regisforge::linkage::build_exact_linkage(l, r, "uid", "uid");
    }
    return rel;
}

/// Integrated rows as source -> key maps, so datasets built along different
/// orders compare column-independently.
inline std::set<std::map<std::string, std::string>> row_set(const IntegratedDataset& ds) {
    std::set<std::map<std::string, std::string>> out;
    for (const auto& row : ds.rows) {
        std::map<std::string, std::string> m;
        for (std::size_t c = 0; c < row.size(); ++c) m[ds.sources[c]] = row[c];
        out.insert(m);
    }
    return out;
}

/// Step-through along sources in the given order.
inline IntegratedDataset along(const std::vector<std::string>& order, bool blocked) {
    std::map<std::string, TimelineDB> dbs;
    for (const auto& tag : order) dbs.emplace(tag, load(tag));
    std::vector<LinkageRelation> path;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        path.push_back(relate(dbs.at(order[i]), dbs.at(order[i + 1]), blocked));
    }
    return regisforge::linkage::step_through(path);
}

}  // namespace path_fixture
