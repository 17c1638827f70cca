#include "regisforge/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "regisforge/csv.hpp"
#include "regisforge/digest.hpp"
#include "regisforge/error.hpp"
#include "regisforge/estimate.hpp"
#include "regisforge/idforge.hpp"
#include "regisforge/linkage.hpp"
#include "regisforge/quality.hpp"
#include "regisforge/registry.hpp"
#include "regisforge/synth.hpp"
#include "regisforge/text.hpp"
#include "regisforge/timeline.hpp"

namespace regisforge::pipeline {

using nlohmann::json;
using config::ProjectConfig;
using idforge::Svid;

namespace {

constexpr const char* kStageDir = ".stages";
constexpr const char* kLockFile = ".lock";
constexpr std::string_view kWorkspaceToken = "${workspace}";

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, std::string_view content) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::io_error, "cannot write " + tmp.string());
        out << content;
        if (!out) throw Error(Errc::io_error, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

/// Input paths inside the workspace are recorded relative to it so that two
/// workspaces built from the same inputs stay byte-identical.
std::string display_path(const fs::path& workspace, const fs::path& p) {
    const auto rel = fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(workspace).lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return std::string(kWorkspaceToken) + "/" + rel.generic_string();
    return fs::absolute(p).lexically_normal().generic_string();
}

fs::path resolve_display(const fs::path& workspace, const std::string& shown) {
    if (shown.rfind(kWorkspaceToken, 0) == 0) return workspace / shown.substr(kWorkspaceToken.size() + 1);
    return shown;
}

class WorkspaceLock {
public:
    explicit WorkspaceLock(const fs::path& workspace) {
        fs::create_directories(workspace);
        const auto path = workspace / kLockFile;
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw Error(Errc::io_error, "cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw Error(Errc::io_error, "workspace " + workspace.string() + " is in use by another run");
        }
    }
    ~WorkspaceLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    WorkspaceLock(const WorkspaceLock&) = delete;
    WorkspaceLock& operator=(const WorkspaceLock&) = delete;

private:
    int fd_ = -1;
};

std::optional<json> read_stage_record(const fs::path& workspace, const std::string& stage) {
    const auto path = workspace / kStageDir / (stage + ".json");
    if (!fs::exists(path)) return std::nullopt;
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw Error(Errc::corrupt_artifact, path.string() + ": " + e.what());
    }
}

/// Bookkeeping for one stage run.
class Stage {
public:
    Stage(const ProjectConfig& cfg, std::string name) : cfg_(cfg) { result.stage = std::move(name); }

    fs::path path(const std::string& rel) const { return cfg_.workspace / rel; }

    void input(const fs::path& p) {
        if (!fs::exists(p)) throw Error(Errc::io_error, "missing input " + p.string());
        inputs_[display_path(cfg_.workspace, p)] = sha256_file(p);
    }
    void output(const std::string& rel) { outputs_.insert(rel); }
    void write(const std::string& rel, std::string_view content) {
        write_text(path(rel), content);
        output(rel);
    }
    void upstream(const std::string& stage) { upstream_.insert(stage); }
    void warn(std::string w) { result.warnings.push_back(std::move(w)); }

    const std::map<std::string, std::string>& inputs() const { return inputs_; }

    StageResult commit() {
        json outputs = json::object();
        for (const auto& rel : outputs_) outputs[rel] = sha256_file(path(rel));
        json record = {{"stage", result.stage},
                       {"config_sha256", cfg_.sha256},
                       {"inputs", inputs_},
                       {"outputs", outputs},
                       {"upstream", upstream_}};
        write_text(path(std::string(kStageDir) + "/" + result.stage + ".json"), record.dump(2) + "\n");
        result.outputs.assign(outputs_.begin(), outputs_.end());
        return result;
    }

    StageResult result;

private:
    const ProjectConfig& cfg_;
    std::map<std::string, std::string> inputs_;
    std::set<std::string> outputs_;
    std::set<std::string> upstream_;
};

// ---------------------------------------------------------------------------
// Workspace layout

std::string timeline_rel(const std::string& tag) { return "timelines/" + tag + ".ndjson"; }
std::string admin_rel(const std::string& tag) { return "registers/admin/" + tag + ".ndjson"; }
std::string admin_summary_rel(const std::string& tag) { return "registers/admin/" + tag + ".summary.json"; }
std::string meta_rel(const std::string& tag, const char* ext) { return "registers/admin/" + tag + ".meta." + ext; }
constexpr const char* kIdState = "registers/idgen.state";
constexpr const char* kEntityRegister = "registers/entity.ndjson";
constexpr const char* kEntitySummary = "registers/entity.summary.json";
std::string relation_rel(const std::string& name) { return "linkage/" + name + ".rel"; }
constexpr const char* kIntegrated = "linkage/integrated.csv";
constexpr const char* kWeights = "estimation/weights.csv";
constexpr const char* kCalibration = "estimation/calibration.json";
constexpr const char* kEstimatesCsv = "estimation/estimates.csv";
constexpr const char* kEstimatesJson = "estimation/estimates.json";
constexpr const char* kCoverageJson = "quality/coverage.json";
constexpr const char* kCoverageText = "quality/coverage.txt";
constexpr const char* kTseJson = "quality/tse.json";
constexpr const char* kTseText = "quality/tse.txt";

std::string frame_rel(const config::FrameConfig& f) { return "frames/" + f.id + "@" + f.as_of.to_string() + ".csv"; }
std::string anchor_relation_name(const std::string& anchor) {
    return anchor + "_" + std::string(linkage::kRegisterSource);
}

const config::FrameConfig& need_frame(const ProjectConfig& cfg) {
    if (!cfg.frame) throw Error(Errc::config_invalid, "config has no frame section");
    return *cfg.frame;
}

const config::CalibrationConfig& need_calibration(const ProjectConfig& cfg) {
    if (!cfg.calibration) throw Error(Errc::config_invalid, "config has no calibration section");
    return *cfg.calibration;
}

timeline::TimelineDB load_timeline(Stage& st, const std::string& tag) {
    const auto p = st.path(timeline_rel(tag));
    st.input(p);
    return timeline::TimelineDB::load(p, tag);
}

registry::AdminRegister load_admin(Stage& st, const std::string& tag) {
    const auto p = st.path(admin_rel(tag));
    st.input(p);
    return registry::AdminRegister::load(p, tag);
}

registry::EntityRegister load_entities(Stage& st) {
    const auto p = st.path(kEntityRegister);
    st.input(p);
    return registry::EntityRegister::load(p);
}

registry::Frame load_frame(Stage& st, const ProjectConfig& cfg) {
    const auto p = st.path(frame_rel(need_frame(cfg)));
    st.input(p);
    return registry::Frame::parse(read_text(p));
}

linkage::LinkageRelation load_relation(Stage& st, const std::string& name) {
    const auto p = st.path(relation_rel(name));
    st.input(p);
    return linkage::LinkageRelation::parse(read_text(p));
}

linkage::IntegratedDataset load_integrated(Stage& st) {
    const auto p = st.path(kIntegrated);
    st.input(p);
    return linkage::IntegratedDataset::parse(read_text(p));
}

std::string event_signature(const timeline::Event& e) {
    json payload = json::object();
    for (const auto& [k, v] : e.payload) payload[k] = v ? json(*v) : json(nullptr);
    return e.entity_key + '\x1f' + e.event_date.to_string() + '\x1f' + payload.dump();
}

/// Source key -> representative SVID -> current ID, kept when it is a frame
/// member.
linkage::LinkageRelation register_link(const std::string& source, const registry::AdminRegister& admin,
                                       const registry::EntityRegister& reg, const registry::Frame& frame) {
    linkage::LinkageRelation rel;
    rel.name = anchor_relation_name(source);
    rel.left_source = source;
    rel.right_source = std::string(linkage::kRegisterSource);
    rel.method.kind = linkage::Method::Kind::exact_key;
    rel.method.left_field = "entity_key";
    rel.method.right_field = "current_id";
    for (const auto& rec : admin.records()) {
        ++rel.candidates;
        if (!reg.contains(rec.alias_id)) continue;
        const Svid current = reg.resolve_current_id(rec.alias_id);
        if (!frame.members.count(current)) continue;
        rel.pairs.push_back({rec.source_key, current.to_string(), 1.0});
    }
    std::sort(rel.pairs.begin(), rel.pairs.end(),
              [](const auto& a, const auto& b) { return std::tie(a.left, a.right) < std::tie(b.left, b.right); });
    return rel;
}

/// Integrated rows that reach a frame member through the anchor column.
struct Sample {
    std::vector<estimate::SampleRow> rows;
    std::size_t unlinked = 0;
};

Sample build_sample(const linkage::IntegratedDataset& ds, const linkage::LinkageRelation& anchor_link,
                    const registry::Frame& frame, const std::string& anchor) {
    std::size_t col = 0;
    try {
        col = ds.column(anchor);
    } catch (const Error&) {
        throw Error(Errc::config_invalid, "calibration anchor " + anchor + " is not a column of the integrated path");
    }
    std::map<std::string, std::string> to_svid;
    for (const auto& p : anchor_link.pairs) to_svid.emplace(p.left, p.right);
    Sample sample;
    for (const auto& row : ds.rows) {
        auto it = to_svid.find(row[col]);
        if (it == to_svid.end()) {
            ++sample.unlinked;
            continue;
        }
        const auto cells = frame.cells.find(Svid::parse(it->second));
        if (cells == frame.cells.end()) {
            ++sample.unlinked;
            continue;
        }
        sample.rows.push_back({row[col], cells->second, {}});
    }
    return sample;
}

// ---------------------------------------------------------------------------
// Stages

void stage_synth(const ProjectConfig& cfg, const Options& opts, Stage& st) {
    if (!cfg.synth) throw Error(Errc::config_invalid, "config has no synth section");
    const std::uint64_t seed = opts.seed.value_or(cfg.synth->seed);
    const auto written = synth::write_scenario(*cfg.synth, seed, cfg.synth->output);
    std::size_t inside = 0;
    for (const auto& p : written) {
        const auto shown = display_path(cfg.workspace, p);
        if (shown.rfind(kWorkspaceToken, 0) == 0) {
            st.output(shown.substr(kWorkspaceToken.size() + 1));
            ++inside;
        }
    }
    if (inside != written.size()) st.warn("synthetic files written outside the workspace are not tracked");
    st.result.summary = "synthetic scenario with seed " + std::to_string(seed) + ": " +
                        std::to_string(written.size()) + " files";
}

void stage_ingest(const ProjectConfig& cfg, Stage& st) {
    if (cfg.sources.empty()) throw Error(Errc::config_invalid, "config declares no sources");
    cfg.validate_schemas();
    const auto previous = read_stage_record(cfg.workspace, "ingest");
    auto previously = [&](const fs::path& p) -> std::optional<std::string> {
        if (!previous) return std::nullopt;
        const auto& in = (*previous)["inputs"];
        auto it = in.find(display_path(cfg.workspace, p));
        if (it == in.end()) return std::nullopt;
        return it->get<std::string>();
    };

    const auto state_path = st.path(kIdState);
    auto ids = idforge::Generator::load(state_path);
    fs::create_directories(st.path("timelines"));
    fs::create_directories(st.path("registers/admin"));

    std::size_t ingested = 0;
    for (const auto& src : cfg.sources) {
        const auto before = previously(src.file);
        st.input(src.file);
        const auto tl_path = st.path(timeline_rel(src.tag));
        const auto adm_path = st.path(admin_rel(src.tag));
        const bool unchanged = before && *before == st.inputs().at(display_path(cfg.workspace, src.file)) &&
                               fs::exists(tl_path) && fs::exists(adm_path);
        if (!unchanged) {
            ++ingested;
            auto db = fs::exists(tl_path) ? timeline::TimelineDB::load(tl_path, src.tag) : timeline::TimelineDB(src.tag);
            auto events = timeline::read_events_csv(src.file, src.key_field, src.date_field, db.next_ingest_seq());
            if (src.institution_field || src.period_field) {
                for (auto& e : events) {
                    auto field = [&](const std::optional<std::string>& name) -> std::string {
                        if (!name) return {};
                        auto it = e.payload.find(*name);
                        return it == e.payload.end() || !it->second ? std::string{} : *it->second;
                    };
                    e.entity_key = registry::namespace_source_key(e.entity_key, field(src.institution_field),
                                                                  field(src.period_field));
                }
            }
            std::set<std::string> seen;
            for (const auto& e : db.flatten()) seen.insert(event_signature(e));
            std::vector<timeline::Event> fresh;
            std::uint64_t seq = db.next_ingest_seq();
            for (auto& e : events) {
                if (!seen.insert(event_signature(e)).second) continue;
                e.ingest_seq = seq++;
                fresh.push_back(std::move(e));
            }
            timeline::TimelineDB::append_to_file(fresh, tl_path);

            auto admin = fs::exists(adm_path) ? registry::AdminRegister::load(adm_path, src.tag)
                                              : registry::AdminRegister(src.tag);
            std::vector<const timeline::Event*> order;
            for (const auto& e : fresh) order.push_back(&e);
            std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
                return std::tie(a->event_date, a->ingest_seq) < std::tie(b->event_date, b->ingest_seq);
            });
            const auto& rules = src.birth_rules ? *src.birth_rules : cfg.birth_rules;
            std::set<std::string> rejected;
            for (const auto* e : order) {
                registry::Attributes attrs;
                for (const auto& [k, v] : e->payload) {
                    if (v) attrs.emplace(k, *v);
                }
                try {
                    admin.ingest_transaction(ids, e->entity_key, attrs, e->event_date.to_string(), rules);
                } catch (const Error& err) {
                    if (err.code() != Errc::rejected_by_birth_rules) throw;
                    rejected.insert(e->entity_key);
                }
            }
            admin.flush(adm_path);
            if (!fs::exists(adm_path)) write_text(adm_path, "");
            ids.persist(state_path);

            json summary = {{"source", src.tag},
                            {"file", display_path(cfg.workspace, src.file)},
                            {"rows_read", events.size()},
                            {"events_added", fresh.size()},
                            {"records", admin.records().size()},
                            {"representatives", admin.representatives().size()},
                            {"rejected_keys", rejected}};
            st.write(admin_summary_rel(src.tag), summary.dump(2) + "\n");
        }
        const auto db = timeline::TimelineDB::load(tl_path, src.tag);
        const auto meta = quality::build_meta_descriptor(cfg.profiles(), db);
        st.write(meta_rel(src.tag, "json"), meta.to_json().dump(2) + "\n");
        st.write(meta_rel(src.tag, "txt"), meta.render_text());
        st.output(timeline_rel(src.tag));
        st.output(admin_rel(src.tag));
        st.output(admin_summary_rel(src.tag));
    }

    if (cfg.duplicates) {
        const auto before = previously(*cfg.duplicates);
        st.input(*cfg.duplicates);
        if (!before || *before != st.inputs().at(display_path(cfg.workspace, *cfg.duplicates))) {
            const auto table = csv::read_file(*cfg.duplicates);
            const auto sc = table.column("source");
            const auto kc = table.column("key");
            const auto gc = table.column("group");
            if (!sc || !kc || !gc) throw Error(Errc::config_invalid, "duplicates file needs source,key,group columns");
            std::map<std::string, std::map<std::string, std::vector<std::string>>> groups;
            for (const auto& row : table.rows) {
                cfg.source(row[*sc]);
                groups[row[*sc]][row[*gc]].push_back(row[*kc]);
            }
            for (const auto& [tag, by_group] : groups) {
                const auto p = st.path(admin_rel(tag));
                auto admin = registry::AdminRegister::load(p, tag);
                for (const auto& [group, keys] : by_group) {
                    std::vector<Svid> svids;
                    for (const auto& key : keys) {
                        const auto* rec = admin.find_key(key);
                        if (!rec) throw Error(Errc::unknown_svid, tag + " has no record for key '" + key + "'");
                        svids.push_back(rec->svid);
                    }
                    admin.mark_source_duplicates(svids);
                }
                admin.flush(p);
            }
        }
    }
    st.output(kIdState);
    st.result.summary = "ingested " + std::to_string(ingested) + " of " + std::to_string(cfg.sources.size()) +
                        " sources (others unchanged)";
}

void stage_register_build(const ProjectConfig& cfg, Stage& st) {
    st.upstream("ingest");
    std::vector<registry::AdminRegister> admins;
    std::map<std::string, std::string> types;
    for (const auto& src : cfg.sources) {
        if (!src.core) continue;
        admins.push_back(load_admin(st, src.tag));
        types[src.tag] = src.entity_type;
    }
    if (admins.empty()) throw Error(Errc::config_invalid, "no core source to seed the entity register");
    std::vector<const registry::AdminRegister*> ptrs;
    for (const auto& a : admins) ptrs.push_back(&a);
    auto reg = registry::EntityRegister::init(ptrs, types);

    auto resolve = [&](const std::string& tag, const std::string& key) {
        for (const auto& a : admins) {
            if (a.source() != tag) continue;
            const auto* rec = a.find_key(key);
            if (!rec) throw Error(Errc::unknown_svid, tag + " has no record for key '" + key + "'");
            return rec->alias_id;
        }
        throw Error(Errc::unknown_source, "'" + tag + "' is not a core source");
    };
    auto read_pairs = [&](const fs::path& file, const char* a_src, const char* a_key, const char* b_src,
                          const char* b_key) {
        st.input(file);
        const auto table = csv::read_file(file);
        const auto c1 = table.column(a_src), c2 = table.column(a_key), c3 = table.column(b_src), c4 = table.column(b_key);
        if (!c1 || !c2 || !c3 || !c4) {
            throw Error(Errc::config_invalid, file.string() + " needs columns " + a_src + "," + a_key + "," + b_src +
                                                  "," + b_key);
        }
        std::vector<std::pair<Svid, Svid>> out;
        for (const auto& row : table.rows) out.emplace_back(resolve(row[*c1], row[*c2]), resolve(row[*c3], row[*c4]));
        return out;
    };
    if (cfg.entity_links) {
        for (const auto& [a, b] : read_pairs(*cfg.entity_links, "left_source", "left_key", "right_source", "right_key")) {
            reg.link_entities(a, b);
        }
    }
    if (cfg.hierarchy_links) {
        for (const auto& [child, parent] :
             read_pairs(*cfg.hierarchy_links, "child_source", "child_key", "parent_source", "parent_key")) {
            reg.link_child_to_parent(child, parent, cfg.hierarchy);
        }
    }
    fs::create_directories(st.path("registers"));
    reg.save(st.path(kEntityRegister));
    st.output(kEntityRegister);

    const auto unique = reg.unique_view();
    json summary = {{"records", reg.records().size()},
                    {"unique_entities", unique.size()},
                    {"links", reg.links().size()},
                    {"sources", reg.sources()}};
    st.write(kEntitySummary, summary.dump(2) + "\n");
    st.result.summary = std::to_string(reg.records().size()) + " register records, " +
                        std::to_string(unique.size()) + " unique entities";
}

void stage_link(const ProjectConfig& cfg, Stage& st) {
    st.upstream("ingest");
    if (cfg.linkages.empty()) throw Error(Errc::config_invalid, "config declares no linkages");
    std::map<std::string, timeline::TimelineDB> dbs;
    auto db = [&](const std::string& tag) -> const timeline::TimelineDB& {
        auto it = dbs.find(tag);
        if (it == dbs.end()) it = dbs.emplace(tag, load_timeline(st, tag)).first;
        return it->second;
    };
    std::map<std::string, linkage::LinkageRelation> built;
    for (const auto& l : cfg.linkages) {
        linkage::LinkageRelation rel;
        if (l.method.kind == linkage::Method::Kind::exact_key) {
            rel = linkage::build_exact_linkage(db(l.left), db(l.right), l.method.left_field, l.method.right_field);
        } else {
            rel = linkage::build_blocked_linkage(db(l.left), db(l.right), l.method.blocking_fields,
                                                 l.method.compare_fields, l.method.threshold);
        }
        rel.name = l.name;
        if (!rel.is_one_to_one()) throw Error(Errc::internal_invariant, "linkage " + l.name + " is not one-to-one");
        st.write(relation_rel(l.name), rel.render());
        built.emplace(l.name, std::move(rel));
    }
    std::string summary = std::to_string(built.size()) + " linkage relations";
    if (!cfg.path_order.empty()) {
        std::vector<linkage::LinkageRelation> path;
        for (const auto& name : cfg.path_order) path.push_back(built.at(name));
        const auto ds = linkage::step_through(path);
        st.write(kIntegrated, ds.render());
        summary += ", integrated dataset of " + std::to_string(ds.rows.size()) + " rows";
    } else {
        st.warn("no path configured; integrated dataset not built");
    }
    st.result.summary = summary;
}

void stage_frame(const ProjectConfig& cfg, Stage& st) {
    st.upstream("register-build");
    const auto& fc = need_frame(cfg);
    const auto reg = load_entities(st);
    const auto frame = registry::build_frame(reg, fc.rules, fc.as_of, fc.strata, fc.id);
    registry::save_snapshot(frame, st.path("frames"));
    st.output(frame_rel(fc));
    for (const auto& w : frame.warnings) st.warn(w);
    st.result.summary = "frame " + frame.snapshot_name() + " with " + std::to_string(frame.members.size()) +
                        " members in " + std::to_string(frame.stratum_counts.size()) + " strata";
}

json diagnostics_json(const estimate::Diagnostics& d) {
    return {{"converged", d.converged},
            {"iterations", d.iterations},
            {"max_residual", d.max_residual},
            {"tolerance", d.tolerance},
            {"uncovered_strata", d.uncovered_strata},
            {"out_of_scope_rows", d.out_of_scope_rows}};
}

void stage_calibrate(const ProjectConfig& cfg, Stage& st) {
    st.upstream("frame");
    st.upstream("link");
    const auto& cc = need_calibration(cfg);
    if (!cfg.source(cc.anchor_source).core) {
        throw Error(Errc::config_invalid, "calibration anchor " + cc.anchor_source + " must be a core source");
    }
    const auto frame = load_frame(st, cfg);
    const auto reg = load_entities(st);
    const auto admin = load_admin(st, cc.anchor_source);
    if (cfg.path_order.empty()) throw Error(Errc::config_invalid, "calibration needs a linkage path");
    const auto ds = load_integrated(st);

    const auto anchor = register_link(cc.anchor_source, admin, reg, frame);
    st.write(relation_rel(anchor.name), anchor.render());

    const auto sample = build_sample(ds, anchor, frame, cc.anchor_source);
    const auto spec = estimate::DomainSpec::from_frame(frame, cc.mode);
    estimate::WeightSet ws = cc.mode == estimate::Mode::full_cross
                                 ? estimate::poststratify(frame, sample.rows, spec)
                                 : estimate::rake(frame, sample.rows, spec, cc.tol, cc.max_iter);
    if (cc.mode == estimate::Mode::full_cross) ws.diagnostics.tolerance = cc.tol;
    const auto check = estimate::check_calibration(ws, sample.rows, frame, spec, cc.tol);

    json constraints = json::array();
    for (const auto& c : check.constraints) {
        constraints.push_back(
            {{"label", c.label}, {"target", c.target}, {"achieved", c.achieved}, {"residual", c.residual}});
    }
    json report = {{"mode", std::string(estimate::to_string(cc.mode))},
                   {"frame_ref", ws.frame_ref},
                   {"anchor_source", cc.anchor_source},
                   {"linked_rows", sample.rows.size()},
                   {"rows_outside_frame", sample.unlinked},
                   {"diagnostics", diagnostics_json(ws.diagnostics)},
                   {"constraints", constraints},
                   {"max_residual", check.max_residual},
                   {"calibrated", check.pass}};
    st.write(kWeights, ws.render());
    st.write(kCalibration, report.dump(2) + "\n");
    if (!check.pass) st.warn("calibration constraints not met within tol; see " + std::string(kCalibration));
    st.result.summary = std::string(estimate::to_string(cc.mode)) + " weights for " +
                        std::to_string(sample.rows.size()) + " linked rows, max residual " +
                        text::format_double(check.max_residual);
}

void stage_estimate(const ProjectConfig& cfg, Stage& st) {
    st.upstream("calibrate");
    const auto& cc = need_calibration(cfg);
    if (cfg.estimates.empty()) throw Error(Errc::config_invalid, "config declares no estimates");
    const auto weights_path = st.path(kWeights);
    st.input(weights_path);
    const auto ws = estimate::WeightSet::parse(read_text(weights_path));
    const auto frame = load_frame(st, cfg);
    const auto ds = load_integrated(st);
    const auto anchor = load_relation(st, anchor_relation_name(cc.anchor_source));
    auto sample = build_sample(ds, anchor, frame, cc.anchor_source);

    // Attach study variables: latest value on the row's timeline in each source.
    std::map<std::string, timeline::TimelineDB> dbs;
    std::map<std::string, std::size_t> anchor_row;
    const std::size_t acol = ds.column(cc.anchor_source);
    for (std::size_t r = 0; r < ds.rows.size(); ++r) anchor_row.emplace(ds.rows[r][acol], r);
    for (const auto& e : cfg.estimates) {
        if (e.is_count()) continue;
        const auto tag = e.y_source();
        std::size_t col = 0;
        try {
            col = ds.column(tag);
        } catch (const Error&) {
            throw Error(Errc::config_invalid, "estimate " + e.name + ": source " + tag + " is not on the path");
        }
        if (!dbs.count(tag)) dbs.emplace(tag, load_timeline(st, tag));
        const auto& db = dbs.at(tag);
        if (!db.has_field(e.y_field())) throw Error(Errc::unknown_field, tag + " has no field '" + e.y_field() + "'");
        for (auto& row : sample.rows) {
            const auto& key = ds.rows[anchor_row.at(row.key)][col];
            row.values[e.y] = db.latest_value(key, e.y_field());
        }
    }

    std::ostringstream out;
    csv::write_row(out, {"estimate", "y", "domain", "total", "rows", "missing", "exact"});
    json results = json::array();
    for (const auto& e : cfg.estimates) {
        for (const auto& d : e.domains) {
            const estimate::Domain domain{d};
            const auto r = e.is_count() ? estimate::estimate_count(ws, sample.rows, domain)
                                        : estimate::estimate_total(ws, sample.rows, e.y, domain);
            csv::write_row(out, {e.name, e.y, d, text::format_double(r.total), std::to_string(r.rows),
                                 std::to_string(r.missing), r.exact ? "true" : "false"});
            results.push_back({{"estimate", e.name},
                               {"y", e.y},
                               {"domain", d},
                               {"total", r.total},
                               {"rows", r.rows},
                               {"missing", r.missing},
                               {"exact", r.exact}});
        }
    }
    st.write(kEstimatesCsv, out.str());
    st.write(kEstimatesJson, json{{"frame_ref", ws.frame_ref}, {"estimates", results}}.dump(2) + "\n");
    if (!ws.diagnostics.converged) st.warn("weights did not satisfy every frame constraint");
    st.result.summary = std::to_string(results.size()) + " estimates";
}

/// Frame link for every source: core sources through their own register,
/// other sources through the first configured relation to a core source.
std::map<std::string, linkage::LinkageRelation> frame_links(const ProjectConfig& cfg, Stage& st,
                                                            const registry::EntityRegister& reg,
                                                            const registry::Frame& frame) {
    std::map<std::string, linkage::LinkageRelation> links;
    for (const auto& src : cfg.sources) {
        if (src.core) links.emplace(src.tag, register_link(src.tag, load_admin(st, src.tag), reg, frame));
    }
    for (const auto& src : cfg.sources) {
        if (src.core) continue;
        for (const auto& l : cfg.linkages) {
            const bool left = l.left == src.tag && links.count(l.right) && cfg.source(l.right).core;
            const bool right = l.right == src.tag && links.count(l.left) && cfg.source(l.left).core;
            if (!left && !right) continue;
            auto rel = load_relation(st, l.name);
            if (right) rel = rel.flipped();
            const auto& core_link = links.at(rel.right_source);
            std::map<std::string, std::string> to_svid;
            for (const auto& p : core_link.pairs) to_svid.emplace(p.left, p.right);
            linkage::LinkageRelation composed;
            composed.name = anchor_relation_name(src.tag);
            composed.left_source = src.tag;
            composed.right_source = std::string(linkage::kRegisterSource);
            composed.method = core_link.method;
            for (const auto& p : rel.pairs) {
                auto it = to_svid.find(p.right);
                if (it != to_svid.end()) composed.pairs.push_back({p.left, it->second, 1.0});
            }
            links.emplace(src.tag, std::move(composed));
            break;
        }
        if (!links.count(src.tag)) st.warn("source " + src.tag + " has no route to the frame; coverage not computed");
    }
    return links;
}

void stage_coverage(const ProjectConfig& cfg, Stage& st) {
    st.upstream("frame");
    st.upstream("link");
    const auto frame = load_frame(st, cfg);
    const auto reg = load_entities(st);
    const auto links = frame_links(cfg, st, reg, frame);
    const auto spec = estimate::DomainSpec::from_frame(frame, estimate::Mode::full_cross);

    std::vector<std::string> involved;
    std::optional<linkage::IntegratedDataset> ds;
    bool exact = true;
    if (!cfg.path_order.empty()) {
        ds = load_integrated(st);
        for (const auto& s : ds->sources) {
            if (s != linkage::kRegisterSource) involved.push_back(s);
        }
        for (const auto& name : cfg.path_order) {
            if (cfg.linkage(name).method.kind != linkage::Method::Kind::exact_key) exact = false;
        }
    } else {
        for (const auto& s : cfg.sources) involved.push_back(s.tag);
    }

    std::vector<quality::SourceCoverageInput> inputs;
    for (const auto& tag : involved) {
        auto link = links.find(tag);
        if (link == links.end()) continue;
        const auto db = load_timeline(st, tag);
        quality::SourceCoverageInput in{tag, {}, link->second};
        for (const auto& [key, events] : db.timelines()) in.keys.push_back(key);
        inputs.push_back(std::move(in));
    }

    json doc;
    std::string text;
    if (ds) {
        const auto report = quality::linked_coverage_report(inputs, *ds, frame, spec, exact);
        doc = report.to_json();
        text = report.render_text();
    } else {
        json srcs = json::array();
        for (const auto& in : inputs) {
            const auto r = quality::coverage_ratios(in.keys, in.link_to_frame, frame, spec, in.source);
            srcs.push_back(r.to_json());
            text += r.render_text();
        }
        doc = {{"sources", srcs}};
    }
    doc["frame_ref"] = frame.frame_id + "@" + frame.as_of.to_string();
    st.write(kCoverageJson, doc.dump(2) + "\n");
    st.write(kCoverageText, text);
    st.result.summary = "coverage of " + std::to_string(inputs.size()) + " sources" +
                        (ds ? " and the integrated dataset" : "");
}

json read_json(Stage& st, const std::string& rel) {
    const auto p = st.path(rel);
    st.input(p);
    try {
        return json::parse(read_text(p));
    } catch (const json::exception& e) {
        throw Error(Errc::corrupt_artifact, p.string() + ": " + e.what());
    }
}

std::map<std::string, std::string> record_inputs(const json& record) {
    return record.at("inputs").get<std::map<std::string, std::string>>();
}

void stage_tse(const ProjectConfig& cfg, Stage& st) {
    const auto ingest = read_stage_record(cfg.workspace, "ingest");
    const auto link = read_stage_record(cfg.workspace, "link");
    st.upstream("ingest");
    st.upstream("link");
    quality::PipelineRun run;
    run.config_sha256 = cfg.sha256;

    const auto ingest_inputs = record_inputs(*ingest);
    for (const auto& src : cfg.sources) {
        quality::Phase phase;
        phase.name = src.tag;
        phase.body = {{"register", read_json(st, admin_summary_rel(src.tag))},
                      {"metadata", read_json(st, meta_rel(src.tag, "json"))}};
        const auto shown = display_path(cfg.workspace, src.file);
        if (auto it = ingest_inputs.find(shown); it != ingest_inputs.end()) phase.inputs.emplace(*it);
        run.ingestion.push_back(std::move(phase));
    }

    auto relation_phase = [&](const linkage::LinkageRelation& rel, std::map<std::string, std::string> inputs) {
        std::size_t excluded = 0;
        for (const auto& c : rel.collisions) excluded += c.entity_keys.size();
        quality::Phase phase;
        phase.name = rel.name;
        phase.body = {{"left_source", rel.left_source},
                      {"right_source", rel.right_source},
                      {"method", rel.method.describe()},
                      {"candidates", rel.candidates},
                      {"pairs", rel.pairs.size()},
                      {"collisions", rel.collisions.size()},
                      {"excluded_entities", excluded}};
        phase.inputs = std::move(inputs);
        return phase;
    };
    const auto link_inputs = record_inputs(*link);
    for (const auto& l : cfg.linkages) {
        std::map<std::string, std::string> inputs;
        for (const auto& tag : {l.left, l.right}) {
            const auto shown = display_path(cfg.workspace, st.path(timeline_rel(tag)));
            if (auto it = link_inputs.find(shown); it != link_inputs.end()) inputs.emplace(*it);
        }
        run.linkage.push_back(relation_phase(load_relation(st, l.name), inputs));
    }

    if (const auto calibrate = read_stage_record(cfg.workspace, "calibrate")) {
        st.upstream("calibrate");
        const auto& cc = need_calibration(cfg);
        auto inputs = record_inputs(*calibrate);
        inputs.erase(display_path(cfg.workspace, st.path(kIntegrated)));
        run.linkage.push_back(relation_phase(load_relation(st, anchor_relation_name(cc.anchor_source)), inputs));

        quality::Phase est;
        est.name = "calibration and estimation";
        est.body = {{"calibration", read_json(st, kCalibration)}};
        est.inputs = record_inputs(*calibrate);
        if (const auto estimate = read_stage_record(cfg.workspace, "estimate")) {
            st.upstream("estimate");
            est.body["estimates"] = read_json(st, kEstimatesJson).at("estimates");
        } else {
            est.body["estimates"] = nullptr;
        }
        run.estimation = std::move(est);
    }

    if (const auto frame_rec = read_stage_record(cfg.workspace, "frame")) {
        st.upstream("frame");
        const auto frame = load_frame(st, cfg);
        quality::Phase phase;
        phase.name = frame.frame_id + "@" + frame.as_of.to_string();
        phase.body = {{"members", frame.members.size()},
                      {"dimensions", frame.dimensions},
                      {"stratum_counts", frame.stratum_counts},
                      {"warnings", frame.warnings}};
        if (read_stage_record(cfg.workspace, "coverage")) {
            st.upstream("coverage");
            phase.body["coverage"] = read_json(st, kCoverageJson);
        } else {
            phase.body["coverage"] = nullptr;
        }
        phase.inputs = record_inputs(*frame_rec);
        run.frame = std::move(phase);
    }

    const auto report = quality::tse_report(run);
    st.write(kTseJson, report.to_json().dump(2) + "\n");
    st.write(kTseText, report.render_text());
    for (const auto& m : report.missing_phases) st.warn("phase not run: " + m);
    st.result.summary = "TSE report with " + std::to_string(report.sections.size()) + " sections" +
                        (report.complete() ? "" : " (incomplete)");
}

}  // namespace

const std::vector<std::string>& commands() {
    static const std::vector<std::string> c{"synth", "ingest",   "register-build", "link",      "frame",
                                            "calibrate", "estimate", "coverage",       "tse-report"};
    return c;
}

const std::vector<std::string>& prerequisites(const std::string& command) {
    static const std::map<std::string, std::vector<std::string>> p{
        {"synth", {}},
        {"ingest", {}},
        {"register-build", {"ingest"}},
        {"link", {"ingest"}},
        {"frame", {"register-build"}},
        {"calibrate", {"frame", "link"}},
        {"estimate", {"calibrate"}},
        {"coverage", {"frame", "link"}},
        {"tse-report", {"ingest", "link"}},
    };
    auto it = p.find(command);
    if (it == p.end()) throw Error(Errc::config_invalid, "unknown command '" + command + "'");
    return it->second;
}

StageResult run_command(const std::string& command, const ProjectConfig& cfg, const Options& opts) {
    const auto& needs = prerequisites(command);
    WorkspaceLock lock(cfg.workspace);
    for (const auto& stage : needs) {
        if (!fs::exists(cfg.workspace / kStageDir / (stage + ".json"))) {
            throw Error(Errc::missing_prerequisite, command + " needs `" + stage + "` to run first");
        }
    }
    Stage st(cfg, command);
    if (command == "synth") stage_synth(cfg, opts, st);
    if (command == "ingest") stage_ingest(cfg, st);
    if (command == "register-build") stage_register_build(cfg, st);
    if (command == "link") stage_link(cfg, st);
    if (command == "frame") stage_frame(cfg, st);
    if (command == "calibrate") stage_calibrate(cfg, st);
    if (command == "estimate") stage_estimate(cfg, st);
    if (command == "coverage") stage_coverage(cfg, st);
    if (command == "tse-report") stage_tse(cfg, st);
    return st.commit();
}

// ---------------------------------------------------------------------------
// Audit

bool Manifest::all_current() const {
    return std::all_of(entries.begin(), entries.end(), [](const AuditEntry& e) { return e.status == "current"; });
}

json Manifest::to_json() const {
    json list = json::array();
    for (const auto& e : entries) {
        list.push_back({{"path", e.path},
                        {"stage", e.stage},
                        {"status", e.status},
                        {"sha256", e.sha256},
                        {"config_sha256", e.config_sha256},
                        {"inputs", e.inputs},
                        {"detail", e.detail}});
    }
    return {{"artifacts", list}, {"all_current", all_current()}};
}

std::string Manifest::render_text() const {
    std::ostringstream out;
    if (entries.empty()) out << "empty workspace\n";
    for (const auto& e : entries) {
        out << e.status << '\t' << (e.stage.empty() ? "-" : e.stage) << '\t' << e.path;
        if (!e.detail.empty()) out << "\t(" << e.detail << ")";
        out << '\n';
    }
    return out.str();
}

Manifest workspace_audit(const fs::path& workspace, const std::optional<std::string>& config_sha256) {
    Manifest manifest;
    if (!fs::exists(workspace)) return manifest;

    struct Record {
        json j;
        std::string problem;  // why the stage itself is stale
    };
    std::map<std::string, Record> records;
    std::set<std::string> tracked;
    const auto stage_dir = workspace / kStageDir;
    if (fs::exists(stage_dir)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(stage_dir)) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            const auto rel = fs::relative(file, workspace).generic_string();
            tracked.insert(rel);
            if (file.extension() != ".json") continue;
            try {
                auto j = json::parse(read_text(file));
                j.at("stage").get<std::string>();
                j.at("outputs").get<std::map<std::string, std::string>>();
                j.at("inputs").get<std::map<std::string, std::string>>();
                records[file.stem().string()] = {std::move(j), {}};
            } catch (const std::exception& e) {
                manifest.entries.push_back({rel, file.stem().string(), "corrupt", "", "", {}, e.what()});
            }
        }
    }

    for (auto& [stage, rec] : records) {
        if (config_sha256 && rec.j.value("config_sha256", "") != *config_sha256) {
            rec.problem = "config changed";
            continue;
        }
        for (const auto& [shown, digest] : rec.j.at("inputs").get<std::map<std::string, std::string>>()) {
            const auto p = resolve_display(workspace, shown);
            if (!fs::exists(p)) {
                rec.problem = "input " + shown + " is gone";
                break;
            }
            if (sha256_file(p) != digest) {
                rec.problem = "input " + shown + " changed";
                break;
            }
        }
    }
    // Staleness flows downstream.
    std::function<std::string(const std::string&, int)> problem_of = [&](const std::string& stage, int depth) {
        auto it = records.find(stage);
        if (it == records.end() || depth > 16) return std::string{};
        if (!it->second.problem.empty()) return it->second.problem;
        for (const auto& up : it->second.j.value("upstream", std::vector<std::string>{})) {
            if (!problem_of(up, depth + 1).empty()) return "upstream " + up + " is stale";
        }
        return std::string{};
    };

    for (const auto& [stage, rec] : records) {
        const auto problem = problem_of(stage, 0);
        const auto inputs = rec.j.at("inputs").get<std::map<std::string, std::string>>();
        const auto config_rev = rec.j.value("config_sha256", "");
        for (const auto& [rel, digest] : rec.j.at("outputs").get<std::map<std::string, std::string>>()) {
            tracked.insert(rel);
            AuditEntry e{rel, stage, "current", digest, config_rev, inputs, ""};
            const auto p = workspace / rel;
            if (!fs::exists(p)) {
                e.status = "missing";
            } else {
                try {
                    const auto now = sha256_file(p);
                    if (now != digest) {
                        e.status = "modified";
                        e.detail = "content differs from what " + stage + " wrote";
                        e.sha256 = now;
                    } else if (!problem.empty()) {
                        e.status = "stale";
                        e.detail = problem;
                    }
                } catch (const Error& err) {
                    e.status = "corrupt";
                    e.detail = err.what();
                }
            }
            manifest.entries.push_back(std::move(e));
        }
    }

    for (auto it = fs::recursive_directory_iterator(workspace); it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        const auto rel = fs::relative(it->path(), workspace).generic_string();
        if (rel == kLockFile || tracked.count(rel)) continue;
        AuditEntry e{rel, "", "orphaned", "", "", {}, "not produced by any recorded stage"};
        try {
            e.sha256 = sha256_file(it->path());
        } catch (const Error& err) {
            e.status = "corrupt";
            e.detail = err.what();
        }
        manifest.entries.push_back(std::move(e));
    }
    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const AuditEntry& a, const AuditEntry& b) { return a.path < b.path; });
    return manifest;
}

}  // namespace regisforge::pipeline
