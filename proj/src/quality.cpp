#include "regisforge/quality.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "regisforge/error.hpp"
#include "regisforge/text.hpp"

namespace regisforge::quality {

using nlohmann::json;

namespace {

struct SvidHash {
    std::size_t operator()(idforge::Svid s) const { return std::hash<std::uint64_t>{}(s.value()); }
};

/// Frame members grouped into the strata of a domain spec.
struct Projection {
    std::vector<std::string> labels;
    std::vector<std::size_t> frame_counts;
    std::unordered_map<idforge::Svid, std::size_t, SvidHash> stratum_of;
};

Projection project_strata(const registry::Frame& frame, const estimate::DomainSpec& spec) {
    std::vector<std::size_t> idx;
    for (const auto& dim : spec.dimensions) {
        auto it = std::find(frame.dimensions.begin(), frame.dimensions.end(), dim.name);
        if (it == frame.dimensions.end()) {
            throw Error(Errc::spec_mismatch, "frame " + frame.frame_id + " has no dimension " + dim.name);
        }
        idx.push_back(static_cast<std::size_t>(it - frame.dimensions.begin()));
    }
    Projection out;
    std::map<std::vector<std::string>, std::size_t> seen;
    std::vector<std::string> projected(idx.size());
    out.stratum_of.reserve(frame.cells.size());
    for (const auto& [svid, cats] : frame.cells) {
        for (std::size_t k = 0; k < idx.size(); ++k) projected[k] = cats[idx[k]];
        auto [it, fresh] = seen.try_emplace(projected, out.labels.size());
        if (fresh) {
            out.labels.push_back(registry::stratum_label(projected));
            out.frame_counts.push_back(0);
        }
        ++out.frame_counts[it->second];
        out.stratum_of.emplace(svid, it->second);
    }
    return out;
}

std::string frame_ref(const registry::Frame& frame) { return frame.frame_id + "@" + frame.as_of.to_string(); }

std::string fmt(double v) { return text::format_double(v); }

// ---------------------------------------------------------------------------
// Coverage

CoverageReport coverage_from(const Projection& strata, std::span<const std::string> dataset_keys,
                             const linkage::LinkageRelation& link_to_frame, const registry::Frame& frame,
                             std::string dataset_ref) {
    CoverageReport report;
    report.dataset_ref = dataset_ref.empty() ? link_to_frame.left_source : std::move(dataset_ref);
    report.frame_ref = frame_ref(frame);
    std::vector<StratumCoverage> per(strata.labels.size());
    for (std::size_t i = 0; i < per.size(); ++i) per[i].frame = strata.frame_counts[i];

    std::unordered_map<std::string_view, std::string_view> target;
    target.reserve(link_to_frame.pairs.size());
    for (const auto& p : link_to_frame.pairs) target.emplace(p.left, p.right);

    std::unordered_set<idforge::Svid, SvidHash> reached;
    for (const auto& key : dataset_keys) {
        auto t = target.find(key);
        if (t == target.end() || !idforge::validate_svid(t->second)) {
            ++report.unmatched;
            continue;
        }
        const auto svid = idforge::Svid::parse(t->second);
        auto s = strata.stratum_of.find(svid);
        if (s == strata.stratum_of.end()) {
            ++report.unmatched;
            continue;
        }
        auto& cov = per[s->second];
        if (reached.insert(svid).second) {
            ++cov.linked;
        } else {
            ++cov.duplicates;
        }
    }
    for (std::size_t i = 0; i < per.size(); ++i) {
        auto& cov = per[i];
        cov.ratio = static_cast<double>(cov.linked) / static_cast<double>(cov.frame);
        cov.flagged = cov.linked + cov.duplicates > cov.frame;
        report.per_stratum.emplace(strata.labels[i], cov);
    }
    return report;
}

}  // namespace

CoverageReport coverage_ratios(std::span<const std::string> dataset_keys, const linkage::LinkageRelation& link_to_frame,
                               const registry::Frame& frame, const estimate::DomainSpec& spec,
                               std::string dataset_ref) {
    return coverage_from(project_strata(frame, spec), dataset_keys, link_to_frame, frame, std::move(dataset_ref));
}

json CoverageReport::to_json() const {
    json strata = json::object();
    for (const auto& [label, c] : per_stratum) {
        strata[label] = {{"n", c.linked},
                         {"N", c.frame},
                         {"ratio", c.ratio},
                         {"ratio_exact", std::to_string(c.linked) + "/" + std::to_string(c.frame)},
                         {"duplicates", c.duplicates},
                         {"flagged", c.flagged}};
    }
    return {{"dataset_ref", dataset_ref}, {"frame_ref", frame_ref}, {"per_stratum", strata}, {"unmatched", unmatched}};
}

CoverageReport CoverageReport::from_json(const json& j) {
    try {
        CoverageReport r;
        r.dataset_ref = j.at("dataset_ref").get<std::string>();
        r.frame_ref = j.at("frame_ref").get<std::string>();
        r.unmatched = j.at("unmatched").get<std::size_t>();
        for (const auto& [label, c] : j.at("per_stratum").items()) {
            r.per_stratum[label] = StratumCoverage{c.at("n").get<std::size_t>(), c.at("N").get<std::size_t>(),
                                                   c.at("duplicates").get<std::size_t>(), c.at("ratio").get<double>(),
                                                   c.at("flagged").get<bool>()};
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(Errc::corrupt_artifact, std::string("coverage report: ") + e.what());
    }
}

std::string CoverageReport::render_text() const {
    std::ostringstream out;
    out << "coverage of " << frame_ref << " by " << dataset_ref << '\n';
    for (const auto& [label, c] : per_stratum) {
        out << "  " << label << ": " << c.linked << "/" << c.frame << " = " << fmt(c.ratio);
        if (c.duplicates) out << " (" << c.duplicates << " duplicate rows)";
        if (c.flagged) out << " [over-coverage]";
        out << '\n';
    }
    out << "  unmatched: " << unmatched << '\n';
    return out.str();
}

LinkedCoverageReport linked_coverage_report(std::span<const SourceCoverageInput> sources,
                                            const linkage::IntegratedDataset& integrated,
                                            const registry::Frame& frame, const estimate::DomainSpec& spec,
                                            bool exact_linkage) {
    LinkedCoverageReport report;
    report.exact_linkage = exact_linkage;
    const auto strata = project_strata(frame, spec);
    for (const auto& src : sources) {
        report.sources.push_back(coverage_from(strata, src.keys, src.link_to_frame, frame, src.source));
    }

    std::string ref;
    for (const auto& step : integrated.path) ref += (ref.empty() ? "" : " -> ") + step;
    if (ref.empty()) ref = "integrated";

    // A row reaches a frame member only when every column with a frame link
    // (and the SVID column of a register-terminated path) agrees on it.
    std::vector<const linkage::LinkageRelation*> column_links(integrated.sources.size(), nullptr);
    std::vector<std::unordered_map<std::string_view, std::string_view>> targets(integrated.sources.size());
    for (std::size_t c = 0; c < integrated.sources.size(); ++c) {
        auto src = std::find_if(sources.begin(), sources.end(),
                                [&](const SourceCoverageInput& s) { return s.source == integrated.sources[c]; });
        if (src == sources.end()) continue;
        column_links[c] = &src->link_to_frame;
        targets[c].reserve(src->link_to_frame.pairs.size());
        for (const auto& p : src->link_to_frame.pairs) targets[c].emplace(p.left, p.right);
    }
    const bool any_link = std::any_of(column_links.begin(), column_links.end(), [](auto* l) { return l != nullptr; });
    if (!integrated.terminal_register && !any_link) {
        throw Error(Errc::unknown_source, "no integrated column has a link to the frame");
    }

    std::vector<std::string> keys;
    linkage::LinkageRelation via;
    for (std::size_t r = 0; r < integrated.rows.size(); ++r) {
        const auto& row = integrated.rows[r];
        const std::string key = std::to_string(r);
        keys.push_back(key);
        std::optional<std::string_view> member;
        bool agree = true;
        auto visit = [&](std::string_view svid) {
            if (member && *member != svid) agree = false;
            member = svid;
        };
        if (integrated.terminal_register) visit(row.back());
        for (std::size_t c = 0; c < row.size() && agree; ++c) {
            if (!column_links[c]) continue;
            auto t = targets[c].find(row[c]);
            if (t == targets[c].end()) {
                agree = false;
            } else {
                visit(t->second);
            }
        }
        if (agree && member) via.pairs.push_back({key, std::string(*member), 1.0});
    }
    report.integrated = coverage_from(strata, keys, via, frame, ref);

    for (const auto& [label, cov] : report.integrated.per_stratum) {
        double lowest = std::numeric_limits<double>::infinity();
        for (const auto& s : report.sources) lowest = std::min(lowest, s.per_stratum.at(label).ratio);
        if (cov.ratio > lowest) report.violations.push_back({label, cov.ratio, lowest});
    }
    if (exact_linkage && !report.violations.empty()) {
        const auto& v = report.violations.front();
        throw Error(Errc::internal_invariant, "integrated coverage " + fmt(v.integrated) + " exceeds source minimum " +
                                                  fmt(v.source_min) + " in stratum " + v.stratum);
    }
    return report;
}

json LinkedCoverageReport::to_json() const {
    json srcs = json::array();
    for (const auto& s : sources) srcs.push_back(s.to_json());
    json viol = json::array();
    for (const auto& v : violations) {
        viol.push_back({{"stratum", v.stratum}, {"integrated", v.integrated}, {"source_min", v.source_min}});
    }
    return {{"sources", srcs}, {"integrated", integrated.to_json()}, {"exact_linkage", exact_linkage},
            {"bound_violations", viol}};
}

std::string LinkedCoverageReport::render_text() const {
    std::ostringstream out;
    for (const auto& s : sources) out << s.render_text();
    out << integrated.render_text();
    out << "intersection bound (integrated <= min source): "
        << (violations.empty() ? "holds" : "violated in " + std::to_string(violations.size()) + " strata") << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Metadata descriptors

const std::vector<std::string>& quality_dimensions() {
    static const std::vector<std::string> dims{"relevance",     "timeliness",       "accuracy",
                                               "accessibility", "interpretability", "coherence"};
    return dims;
}

const std::vector<std::pair<std::string, std::string>>& standard_questions(const std::string& dimension) {
    static const std::map<std::string, std::vector<std::pair<std::string, std::string>>> questions{
        {"relevance",
         {{"collector", "Which agency collects the data?"},
          {"purpose", "Is collection mandated by law, and for what purpose?"},
          {"entity_type", "Which kind of entity does a record describe?"},
          {"exempt", "Are any entities exempt from reporting?"},
          {"variables", "Which variables are collected?"}}},
        {"timeliness",
         {{"frequency", "How often is the data collected?"},
          {"lag", "How long after the observation is the data loaded?"},
          {"special_periods", "Were any periods affected by unusual events?"}}},
        {"accuracy",
         {{"known_weaknesses", "Are there known weaknesses in the data?"},
          {"imputation", "Are any values imputed?"},
          {"miscoding", "Is anything known about miscoding errors?"},
          {"identifiers", "Do identifiers uniquely define entities?"}}},
        {"accessibility",
         {{"format", "Is the data stored in a standard, accessible format?"},
          {"restrictions", "Are parts of the data withheld for confidentiality or quality reasons?"}}},
        {"interpretability",
         {{"definitions", "How are the variables defined?"},
          {"non_standard", "Are any definitions non-standard?"}}},
        {"coherence",
         {{"discontinuities", "Have collection methods or definitions changed over time?"},
          {"coverage_change", "Has coverage of the target population changed over time?"}}},
    };
    auto it = questions.find(dimension);
    if (it == questions.end()) throw Error(Errc::config_invalid, "unknown quality dimension '" + dimension + "'");
    return it->second;
}

MetaDescriptor build_meta_descriptor(const std::map<std::string, SourceProfile>& profiles,
                                     const timeline::TimelineDB& db) {
    auto prof = profiles.find(db.source());
    if (prof == profiles.end()) throw Error(Errc::unknown_source, "no profile for source '" + db.source() + "'");
    const auto& profile = prof->second;
    for (const auto& [dim, answers] : profile.checklist) standard_questions(dim);

    MetaDescriptor md;
    md.source = profile.tag;
    for (const auto& dim : quality_dimensions()) {
        MetaSection section{dim, {}};
        const auto found = profile.checklist.find(dim);
        const std::map<std::string, std::string> none;
        const auto& answers = found == profile.checklist.end() ? none : found->second;
        std::set<std::string> standard;
        for (const auto& [id, question] : standard_questions(dim)) {
            standard.insert(id);
            auto a = answers.find(id);
            section.entries.push_back({id, question, a == answers.end() || a->second.empty() ? kNotAssessed : a->second});
        }
        for (const auto& [id, answer] : answers) {
            if (!standard.count(id)) section.entries.push_back({id, id, answer.empty() ? kNotAssessed : answer});
        }
        md.sections.push_back(std::move(section));
    }

    auto& af = md.auto_fields;
    af.events = db.event_count();
    af.entities = db.timelines().size();
    std::set<int> years;
    std::set<std::string> fields;
    for (const auto& [key, events] : db.timelines()) {
        for (const auto& e : events) {
            years.insert(e.event_date.year());
            const DateSpan one{e.event_date, e.event_date};
            af.span = af.span ? af.span->hull(one) : one;
            for (const auto& [field, value] : e.payload) fields.insert(field);
        }
    }
    if (af.span) {
        for (int y = af.span->first.year(); y <= af.span->last.year(); ++y) {
            if (!years.count(y)) af.missing_periods.push_back(y);
        }
        if (profile.extracted_on) {
            af.collection_lag_days = static_cast<long>((profile.extracted_on->days() - af.span->last.days()).count());
        }
    }
    for (const auto& field : fields) {
        af.field_missing_rates[field] = timeline::stability_metrics(db, field).pooled_missing_rate;
    }
    return md;
}

json MetaDescriptor::to_json() const {
    json sections_j = json::object();
    for (const auto& s : sections) {
        json entries = json::array();
        for (const auto& e : s.entries) entries.push_back({{"id", e.id}, {"question", e.question}, {"answer", e.answer}});
        sections_j[s.dimension] = entries;
    }
    json af = {{"events", auto_fields.events},
               {"entities", auto_fields.entities},
               {"missing_periods", auto_fields.missing_periods},
               {"field_missing_rates", auto_fields.field_missing_rates}};
    af["span"] = auto_fields.span ? json{{"first", auto_fields.span->first.to_string()},
                                         {"last", auto_fields.span->last.to_string()}}
                                  : json(nullptr);
    af["collection_lag_days"] = auto_fields.collection_lag_days ? json(*auto_fields.collection_lag_days) : json(nullptr);
    return {{"source", source}, {"sections", sections_j}, {"auto_fields", af}};
}

std::string MetaDescriptor::render_text() const {
    std::ostringstream out;
    out << "source " << source << '\n';
    for (const auto& s : sections) {
        out << "[" << s.dimension << "]\n";
        for (const auto& e : s.entries) out << "  " << e.question << " " << e.answer << '\n';
    }
    out << "[computed]\n";
    out << "  events: " << auto_fields.events << ", entities: " << auto_fields.entities << '\n';
    if (auto_fields.span) {
        out << "  span: " << auto_fields.span->first.to_string() << " to " << auto_fields.span->last.to_string() << '\n';
    }
    out << "  years without events:";
    if (auto_fields.missing_periods.empty()) out << " none";
    for (int y : auto_fields.missing_periods) out << ' ' << y;
    out << '\n';
    if (auto_fields.collection_lag_days) out << "  collection lag: " << *auto_fields.collection_lag_days << " days\n";
    for (const auto& [field, rate] : auto_fields.field_missing_rates) {
        out << "  missing " << field << ": " << fmt(rate) << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// TSE report

TseReport tse_report(const PipelineRun& run) {
    TseReport report;
    report.config_sha256 = run.config_sha256;
    auto add = [&](const std::string& kind, const Phase& phase) {
        report.sections.push_back({kind, phase.name, true, phase.body, run.config_sha256, phase.inputs});
    };
    auto absent = [&](const std::string& kind) {
        report.sections.push_back({kind, kind, false, json(nullptr), run.config_sha256, {}});
        report.missing_phases.push_back(kind);
    };

    if (run.ingestion.empty()) absent("ingestion");
    for (const auto& p : run.ingestion) add("ingestion", p);
    if (run.linkage.empty()) absent("linkage");
    for (const auto& p : run.linkage) add("linkage", p);
    if (run.frame) {
        add("frame", *run.frame);
    } else {
        absent("frame");
    }
    if (run.estimation) {
        add("estimation", *run.estimation);
    } else {
        absent("estimation");
    }
    return report;
}

json TseReport::to_json() const {
    json secs = json::array();
    for (const auto& s : sections) {
        secs.push_back({{"kind", s.kind},
                        {"name", s.name},
                        {"present", s.present},
                        {"config_sha256", s.config_sha256},
                        {"inputs", s.inputs},
                        {"body", s.body}});
    }
    return {{"config_sha256", config_sha256},
            {"complete", complete()},
            {"missing_phases", missing_phases},
            {"sections", secs}};
}

std::string TseReport::render_text() const {
    std::ostringstream out;
    out << "total survey error report\n";
    out << "config sha256: " << config_sha256 << '\n';
    if (!complete()) {
        out << "missing phases:";
        for (const auto& m : missing_phases) out << ' ' << m;
        out << '\n';
    }
    for (const auto& s : sections) {
        out << "\n== " << s.kind << ": " << s.name << (s.present ? "" : " (absent)") << " ==\n";
        for (const auto& [path, digest] : s.inputs) out << "input " << path << " sha256 " << digest << '\n';
        if (s.present) out << s.body.dump(2) << '\n';
    }
    return out.str();
}

}  // namespace regisforge::quality
