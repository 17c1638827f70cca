#include "regisforge/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "regisforge/csv.hpp"
#include "regisforge/digest.hpp"
#include "regisforge/error.hpp"

namespace regisforge::config {

using nlohmann::json;

namespace {

constexpr std::string_view kWorkspaceToken = "${workspace}";

[[noreturn]] void invalid(const std::string& msg) { throw Error(Errc::config_invalid, msg); }

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    return it == j.end() || it->is_null() ? fallback : it->get<T>();
}

std::vector<std::string> string_list(const json& j, const char* key) {
    return get_or(j, key, std::vector<std::string>{});
}

linkage::Method parse_method(const json& j) {
    linkage::Method m;
    const auto kind = j.at("method").get<std::string>();
    if (kind == "exact") {
        m.kind = linkage::Method::Kind::exact_key;
        m.left_field = j.at("left_field").get<std::string>();
        m.right_field = j.at("right_field").get<std::string>();
    } else if (kind == "blocked") {
        m.kind = linkage::Method::Kind::blocked_similarity;
        m.blocking_fields = string_list(j, "blocking");
        m.threshold = j.at("threshold").get<double>();
        for (const auto& c : j.at("compare")) {
            linkage::CompareField f;
            f.field = c.at("field").get<std::string>();
            if (get_or(c, "numeric", false)) {
                f.comparator.kind = kernels::Comparator::Kind::numeric;
                f.comparator.scale = get_or(c, "scale", 1.0);
                if (!(f.comparator.scale > 0)) invalid("numeric compare scale must be positive");
            }
            m.compare_fields.push_back(std::move(f));
        }
        if (m.compare_fields.empty()) invalid("blocked linkage needs at least one compare field");
    } else {
        invalid("unknown linkage method '" + kind + "' (expected exact or blocked)");
    }
    return m;
}

std::vector<std::string> csv_header(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open source file " + file.string());
    std::string line;
    std::string content;
    while (std::getline(in, line)) {
        if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (line.empty() || line[0] == '#') continue;
        content = line + "\n";
        break;
    }
    return csv::parse(content).header;
}

}  // namespace

registry::RuleSet parse_rules(const json& rules, std::optional<int> retention_years) {
    registry::RuleSet set;
    set.retention_years = retention_years;
    if (rules.is_null()) return set;
    for (const auto& r : rules) {
        registry::Predicate p;
        p.field = r.at("field").get<std::string>();
        p.op = registry::Predicate::parse_op(r.at("op").get<std::string>());
        if (r.contains("values")) p.values = r.at("values").get<std::vector<std::string>>();
        if (r.contains("value")) p.values = {r.at("value").get<std::string>()};
        using Op = registry::Predicate::Op;
        if (p.op != Op::present && p.op != Op::absent && p.values.empty()) {
            invalid("rule on '" + p.field + "' needs a value");
        }
        if (p.op == Op::overlaps) {
            if (p.values.size() != 2) invalid("overlaps rule needs [from, to]");
            Date::parse(p.values[0]);
            Date::parse(p.values[1]);
        }
        set.predicates.push_back(std::move(p));
    }
    return set;
}

std::string EstimateConfig::y_source() const { return y.substr(0, y.find('.')); }
std::string EstimateConfig::y_field() const { return y.substr(y.find('.') + 1); }

std::vector<std::string> SynthConfig::dimensions() const {
    std::vector<std::string> dims;
    if (!strata.empty()) {
        for (const auto& [name, cat] : strata.front().categories) dims.push_back(name);
    }
    return dims;
}

void SynthConfig::validate() const {
    if (strata.empty()) invalid("synth needs at least one stratum");
    const auto dims = dimensions();
    std::set<std::map<std::string, std::string>> seen;
    for (const auto& s : strata) {
        std::vector<std::string> names;
        for (const auto& [name, cat] : s.categories) names.push_back(name);
        if (names != dims) invalid("synth strata must share the same dimensions");
        if (!seen.insert(s.categories).second) invalid("synth strata repeat a category combination");
        if (s.y_sd < 0) invalid("synth y_sd must be non-negative");
    }
    std::set<std::string> tags;
    for (const auto& src : sources) {
        if (!tags.insert(src.tag).second) invalid("synth source " + src.tag + " declared twice");
        if (src.inclusion.size() != strata.size()) {
            invalid("synth source " + src.tag + " needs one inclusion probability per stratum");
        }
        for (double p : src.inclusion) {
            if (!(p >= 0.0 && p <= 1.0)) invalid("synth inclusion probabilities must lie in [0, 1]");
        }
    }
    if (days <= 0) invalid("synth days must be positive");
}

fs::path ProjectConfig::resolve(const std::string& p) const {
    if (p.rfind(kWorkspaceToken, 0) == 0) {
        std::string rest = p.substr(kWorkspaceToken.size());
        while (!rest.empty() && (rest.front() == '/' || rest.front() == '\\')) rest.erase(0, 1);
        return workspace / rest;
    }
    fs::path path(p);
    return path.is_absolute() ? path : dir / path;
}

ProjectConfig ProjectConfig::load(const fs::path& path, const std::optional<fs::path>& workspace_override) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::config_invalid, "cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::exception& e) {
        invalid(path.string() + ": " + e.what());
    }
    auto cfg = parse(j, fs::absolute(path).parent_path(), sha256_hex(bytes), workspace_override);
    cfg.path = fs::absolute(path);
    return cfg;
}

ProjectConfig ProjectConfig::parse(const json& j, const fs::path& dir, std::string sha256,
                                   const std::optional<fs::path>& workspace_override) {
    ProjectConfig cfg;
    cfg.dir = dir;
    cfg.sha256 = std::move(sha256);
    try {
        if (!j.is_object()) invalid("config must be a JSON object");
        if (workspace_override) {
            cfg.workspace = fs::absolute(*workspace_override);
        } else {
            cfg.workspace = dir / get_or<std::string>(j, "workspace", "workspace");
        }
        cfg.workspace = cfg.workspace.lexically_normal();

        cfg.birth_rules = parse_rules(j.value("birth_rules", json()));
        std::set<std::string> tags;
        for (const auto& s : j.value("sources", json::array())) {
            SourceConfig src;
            src.tag = s.at("tag").get<std::string>();
            if (src.tag.empty() || src.tag == linkage::kRegisterSource) invalid("invalid source tag '" + src.tag + "'");
            if (!tags.insert(src.tag).second) invalid("source " + src.tag + " declared twice");
            src.file = cfg.resolve(s.at("file").get<std::string>());
            src.key_field = s.at("key_field").get<std::string>();
            src.date_field = s.at("date_field").get<std::string>();
            src.core = get_or(s, "core", true);
            src.entity_type = get_or<std::string>(s, "entity_type", "person");
            if (s.contains("institution_field")) src.institution_field = s.at("institution_field").get<std::string>();
            if (s.contains("period_field")) src.period_field = s.at("period_field").get<std::string>();
            if (s.contains("birth_rules")) src.birth_rules = parse_rules(s.at("birth_rules"));
            src.profile.tag = src.tag;
            if (s.contains("extracted_on")) src.profile.extracted_on = Date::parse(s.at("extracted_on").get<std::string>());
            if (s.contains("checklist")) {
                src.profile.checklist =
                    s.at("checklist").get<std::map<std::string, std::map<std::string, std::string>>>();
                for (const auto& [dim, answers] : src.profile.checklist) quality::standard_questions(dim);
            }
            cfg.sources.push_back(std::move(src));
        }

        if (j.contains("duplicates")) cfg.duplicates = cfg.resolve(j.at("duplicates").get<std::string>());
        if (j.contains("entity_links")) cfg.entity_links = cfg.resolve(j.at("entity_links").get<std::string>());
        if (j.contains("hierarchy")) {
            const auto& h = j.at("hierarchy");
            for (const auto& pair : h.value("allowed", json::array())) {
                const auto v = pair.get<std::vector<std::string>>();
                if (v.size() != 2) invalid("hierarchy pairs are [child_type, parent_type]");
                cfg.hierarchy.allowed.insert({v[0], v[1]});
            }
            if (h.contains("links")) cfg.hierarchy_links = cfg.resolve(h.at("links").get<std::string>());
        }

        if (j.contains("frame")) {
            const auto& f = j.at("frame");
            FrameConfig fc;
            fc.id = f.at("id").get<std::string>();
            if (fc.id.empty() || fc.id.find_first_of("/\\@") != std::string::npos) invalid("invalid frame id");
            fc.as_of = Date::parse(f.at("as_of").get<std::string>());
            std::optional<int> omega;
            if (f.contains("retention_years") && !f.at("retention_years").is_null()) {
                omega = f.at("retention_years").get<int>();
                if (*omega < 0) invalid("retention_years must be non-negative");
            }
            fc.rules = parse_rules(f.value("rules", json()), omega);
            fc.strata = string_list(f, "strata");
            if (fc.strata.empty()) invalid("frame needs at least one stratum attribute");
            cfg.frame = std::move(fc);
        }

        std::set<std::string> names;
        for (const auto& l : j.value("linkages", json::array())) {
            LinkageConfig lc;
            lc.name = l.at("name").get<std::string>();
            if (lc.name.empty() || lc.name.find_first_of("/\\") != std::string::npos) invalid("invalid linkage name");
            if (!names.insert(lc.name).second) invalid("linkage " + lc.name + " declared twice");
            lc.left = l.at("left").get<std::string>();
            lc.right = l.at("right").get<std::string>();
            if (!tags.count(lc.left) || !tags.count(lc.right)) {
                invalid("linkage " + lc.name + " refers to an undeclared source");
            }
            if (lc.left == lc.right) invalid("linkage " + lc.name + " must join two distinct sources");
            lc.method = parse_method(l);
            if (lc.method.kind == linkage::Method::Kind::blocked_similarity &&
                !(lc.method.threshold > 0 && lc.method.threshold <= 1)) {
                throw Error(Errc::threshold_out_of_range, "linkage " + lc.name + " threshold must lie in (0, 1]");
            }
            cfg.linkages.push_back(std::move(lc));
        }
        cfg.path_order = string_list(j, "path");
        for (const auto& step : cfg.path_order) {
            if (!names.count(step)) invalid("path refers to unknown linkage " + step);
        }

        if (j.contains("calibration")) {
            const auto& c = j.at("calibration");
            CalibrationConfig cc;
            cc.mode = estimate::parse_mode(get_or<std::string>(c, "mode", "full-cross"));
            cc.tol = get_or(c, "tol", 1e-6);
            cc.max_iter = get_or<std::size_t>(c, "max_iter", 100);
            cc.anchor_source = c.at("anchor_source").get<std::string>();
            if (!(cc.tol > 0)) invalid("calibration tol must be positive");
            if (cc.max_iter == 0) invalid("calibration max_iter must be positive");
            if (!tags.count(cc.anchor_source)) invalid("calibration anchor is not a declared source");
            cfg.calibration = cc;
        }

        for (const auto& e : j.value("estimates", json::array())) {
            EstimateConfig ec;
            ec.name = e.at("name").get<std::string>();
            ec.y = e.at("y").get<std::string>();
            if (e.contains("domains")) ec.domains = e.at("domains").get<std::vector<std::string>>();
            if (!ec.is_count()) {
                if (ec.y.find('.') == std::string::npos) invalid("estimate y must be 'count' or SOURCE.field");
                if (!tags.count(ec.y_source())) invalid("estimate " + ec.name + " refers to an undeclared source");
            }
            cfg.estimates.push_back(std::move(ec));
        }

        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            SynthConfig sc;
            sc.seed = get_or<std::uint64_t>(s, "seed", 1);
            for (const auto& st : s.at("strata")) {
                SynthStratum stratum;
                stratum.categories = st.at("categories").get<std::map<std::string, std::string>>();
                stratum.size = st.at("size").get<std::size_t>();
                stratum.y_mean = get_or(st, "y_mean", 0.0);
                stratum.y_sd = get_or(st, "y_sd", 0.0);
                sc.strata.push_back(std::move(stratum));
            }
            for (const auto& src : s.value("sources", json::array())) {
                sc.sources.push_back({src.at("tag").get<std::string>(), src.at("inclusion").get<std::vector<double>>()});
            }
            if (s.contains("start")) sc.start = Date::parse(s.at("start").get<std::string>());
            sc.days = get_or(s, "days", 365);
            sc.output = cfg.resolve(get_or<std::string>(s, "output", "${workspace}/synth"));
            sc.validate();
            cfg.synth = std::move(sc);
        }
    } catch (const json::exception& e) {
        invalid(e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::malformed_date) invalid(e.what());
        throw;
    }
    return cfg;
}

const SourceConfig& ProjectConfig::source(const std::string& tag) const {
    auto it = std::find_if(sources.begin(), sources.end(), [&](const SourceConfig& s) { return s.tag == tag; });
    if (it == sources.end()) throw Error(Errc::unknown_source, "no source '" + tag + "' in config");
    return *it;
}

const LinkageConfig& ProjectConfig::linkage(const std::string& name) const {
    auto it = std::find_if(linkages.begin(), linkages.end(), [&](const LinkageConfig& l) { return l.name == name; });
    if (it == linkages.end()) throw Error(Errc::config_invalid, "no linkage '" + name + "' in config");
    return *it;
}

std::map<std::string, quality::SourceProfile> ProjectConfig::profiles() const {
    std::map<std::string, quality::SourceProfile> out;
    for (const auto& s : sources) out.emplace(s.tag, s.profile);
    return out;
}

void ProjectConfig::validate_schemas() const {
    std::map<std::string, std::set<std::string>> fields;
    for (const auto& s : sources) {
        const auto header = csv_header(s.file);
        auto& f = fields[s.tag];
        f.insert(header.begin(), header.end());
        auto need = [&](const std::string& field, const std::string& what) {
            if (!f.count(field)) invalid(s.tag + " (" + s.file.string() + ") has no " + what + " column '" + field + "'");
        };
        need(s.key_field, "key");
        need(s.date_field, "date");
        if (s.institution_field) need(*s.institution_field, "institution");
        if (s.period_field) need(*s.period_field, "period");
        f.insert("entity_key");
    }
    auto need = [&](const std::string& tag, const std::string& field, const std::string& where) {
        if (!fields.at(tag).count(field)) invalid(where + ": source " + tag + " has no field '" + field + "'");
    };
    for (const auto& l : linkages) {
        if (l.method.kind == linkage::Method::Kind::exact_key) {
            need(l.left, l.method.left_field, "linkage " + l.name);
            need(l.right, l.method.right_field, "linkage " + l.name);
        } else {
            for (const auto& b : l.method.blocking_fields) {
                need(l.left, b, "linkage " + l.name);
                need(l.right, b, "linkage " + l.name);
            }
            for (const auto& c : l.method.compare_fields) {
                need(l.left, c.field, "linkage " + l.name);
                need(l.right, c.field, "linkage " + l.name);
            }
        }
    }
    if (frame) {
        for (const auto& dim : frame->strata) {
            const bool somewhere = std::any_of(sources.begin(), sources.end(), [&](const SourceConfig& s) {
                return s.core && fields.at(s.tag).count(dim);
            });
            if (!somewhere) invalid("frame stratum '" + dim + "' is not a field of any core source");
        }
    }
    for (const auto& e : estimates) {
        if (!e.is_count()) need(e.y_source(), e.y_field(), "estimate " + e.name);
    }
}

}  // namespace regisforge::config
