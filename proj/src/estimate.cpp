#include "regisforge/estimate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json.hpp>

#include "regisforge/csv.hpp"
#include "regisforge/error.hpp"
#include "regisforge/kernels.hpp"
#include "regisforge/text.hpp"

namespace regisforge::estimate {

using nlohmann::json;
using boost::multiprecision::cpp_int;
using boost::multiprecision::cpp_rational;

namespace {

Ratio reduced(std::int64_t num, std::int64_t den) {
    const auto g = std::gcd(num, den);
    return g == 0 ? Ratio{num, den} : Ratio{num / g, den / g};
}

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Sums weight * y, exactly when every term is an exact ratio times an
/// integer, compensated otherwise.
class WeightedSum {
public:
    void add(const Weight& w, double y, std::optional<std::int64_t> y_int) {
        approx_.add(w.value * y);
        if (!exact_ok_) return;
        if (!w.exact || !y_int) {
            exact_ok_ = false;
            return;
        }
        groups_[*w.exact] += *y_int;
    }
    bool exact() const { return exact_ok_; }
    double value() const {
        if (!exact_ok_) return approx_.value();
        cpp_rational total = 0;
        for (const auto& [ratio, ysum] : groups_) total += cpp_rational(ratio.num, ratio.den) * cpp_rational(ysum);
        return total.convert_to<double>();
    }
    cpp_rational exact_value() const {
        cpp_rational total = 0;
        for (const auto& [ratio, ysum] : groups_) total += cpp_rational(ratio.num, ratio.den) * cpp_rational(ysum);
        return total;
    }

private:
    CompensatedSum approx_;
    bool exact_ok_ = true;
    std::map<Ratio, cpp_int> groups_;
};

std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<double> parse_real(std::string_view s) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::size_t category_index(const Dimension& dim, const std::string& category) {
    auto it = std::find(dim.categories.begin(), dim.categories.end(), category);
    if (it == dim.categories.end()) {
        throw Error(Errc::unknown_category, "'" + category + "' is not a category of " + dim.name);
    }
    return static_cast<std::size_t>(it - dim.categories.begin());
}

void check_rows(std::span<const SampleRow> rows, const DomainSpec& spec) {
    std::set<std::string_view> keys;
    for (const auto& row : rows) {
        if (row.categories.size() != spec.dimensions.size()) {
            throw Error(Errc::unknown_category, "row " + row.key + " does not carry every spec dimension");
        }
        for (std::size_t d = 0; d < spec.dimensions.size(); ++d) category_index(spec.dimensions[d], row.categories[d]);
        if (!keys.insert(row.key).second) throw Error(Errc::spec_mismatch, "row key " + row.key + " repeats");
    }
}

/// Position of each spec dimension among the frame's dimensions.
std::vector<std::size_t> frame_dims(const registry::Frame& frame, const DomainSpec& spec) {
    std::vector<std::size_t> idx;
    for (const auto& dim : spec.dimensions) {
        auto it = std::find(frame.dimensions.begin(), frame.dimensions.end(), dim.name);
        if (it == frame.dimensions.end()) {
            throw Error(Errc::spec_mismatch, "frame " + frame.frame_id + " has no dimension " + dim.name);
        }
        idx.push_back(static_cast<std::size_t>(it - frame.dimensions.begin()));
    }
    return idx;
}

/// Frame member count per full-cross cell label over the domain spec dimensions.
std::map<std::string, std::int64_t> frame_cell_counts(const registry::Frame& frame, const DomainSpec& spec) {
    const auto idx = frame_dims(frame, spec);
    std::map<std::string, std::int64_t> counts;
    for (const auto& [svid, cats] : frame.cells) {
        std::vector<std::string> projected;
        for (std::size_t i : idx) projected.push_back(cats[i]);
        ++counts[registry::stratum_label(projected)];
    }
    return counts;
}

std::vector<std::map<std::string, double>> frame_margins(const registry::Frame& frame, const DomainSpec& spec) {
    const auto idx = frame_dims(frame, spec);
    const auto all = frame.margins();
    std::vector<std::map<std::string, double>> out;
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

json spec_to_json(const DomainSpec& spec) {
    json dims = json::array();
    for (const auto& d : spec.dimensions) dims.push_back({{"name", d.name}, {"categories", d.categories}});
    return {{"mode", to_string(spec.mode)}, {"dimensions", dims}};
}

DomainSpec spec_from_json(const json& j) {
    DomainSpec spec;
    spec.mode = parse_mode(j.at("mode").get<std::string>());
    for (const auto& d : j.at("dimensions")) {
        spec.dimensions.push_back({d.at("name").get<std::string>(), d.at("categories").get<std::vector<std::string>>()});
    }
    return spec;
}

}  // namespace

std::string_view to_string(Mode mode) { return mode == Mode::full_cross ? "full-cross" : "margins-only"; }

Mode parse_mode(std::string_view name) {
    if (name == "full-cross") return Mode::full_cross;
    if (name == "margins-only") return Mode::margins_only;
    throw Error(Errc::config_invalid, "unknown calibration mode '" + std::string(name) + "'");
}

void DomainSpec::validate() const {
    if (dimensions.empty()) throw Error(Errc::spec_mismatch, "domain spec has no dimensions");
    for (const auto& d : dimensions) {
        if (d.categories.empty()) throw Error(Errc::spec_mismatch, "dimension " + d.name + " has no categories");
        std::set<std::string> seen(d.categories.begin(), d.categories.end());
        if (seen.size() != d.categories.size()) {
            throw Error(Errc::spec_mismatch, "dimension " + d.name + " lists a category twice");
        }
    }
}

std::size_t DomainSpec::vector_length() const {
    std::size_t n = mode == Mode::full_cross ? 1 : 0;
    for (const auto& d : dimensions) {
        if (mode == Mode::full_cross) {
            n *= d.categories.size();
        } else {
            n += d.categories.size();
        }
    }
    return n;
}

std::vector<std::string> DomainSpec::dimension_names() const {
    std::vector<std::string> names;
    for (const auto& d : dimensions) names.push_back(d.name);
    return names;
}

DomainSpec DomainSpec::from_frame(const registry::Frame& frame, Mode mode) {
    DomainSpec spec;
    spec.mode = mode;
    std::vector<std::set<std::string>> seen(frame.dimensions.size());
    for (const auto& [svid, cats] : frame.cells) {
        for (std::size_t d = 0; d < cats.size(); ++d) seen[d].insert(cats[d]);
    }
    for (std::size_t d = 0; d < frame.dimensions.size(); ++d) {
        spec.dimensions.push_back({frame.dimensions[d], {seen[d].begin(), seen[d].end()}});
    }
    return spec;
}

DomainVector domain_vector(const std::map<std::string, std::string>& row, const DomainSpec& spec) {
    DomainVector v(spec.vector_length(), 0);
    std::size_t cell = 0;
    std::size_t offset = 0;
    for (const auto& dim : spec.dimensions) {
        auto it = row.find(dim.name);
        if (it == row.end()) throw Error(Errc::unknown_category, "row lacks dimension " + dim.name);
        const std::size_t c = category_index(dim, it->second);
        if (spec.mode == Mode::full_cross) {
            cell = cell * dim.categories.size() + c;
        } else {
            v[offset + c] = 1;
            offset += dim.categories.size();
        }
    }
    if (spec.mode == Mode::full_cross) v[cell] = 1;
    return v;
}

// ---------------------------------------------------------------------------

void WeightSet::set_weight(const std::string& key, double value) {
    auto& w = weights.at(key);
    w.value = value;
    w.exact.reset();
}

std::string WeightSet::render() const {
    std::ostringstream out;
    out << "# frame_ref: " << frame_ref << '\n';
    out << "# spec: " << spec_to_json(spec).dump() << '\n';
    out << "# converged: " << (diagnostics.converged ? "true" : "false") << '\n';
    out << "# iterations: " << diagnostics.iterations << '\n';
    out << "# max_residual: " << text::format_double(diagnostics.max_residual) << '\n';
    out << "# tolerance: " << text::format_double(diagnostics.tolerance) << '\n';
    out << "# uncovered_strata: " << json(diagnostics.uncovered_strata).dump() << '\n';
    out << "# out_of_scope_rows: " << json(diagnostics.out_of_scope_rows).dump() << '\n';
    out << "row_key,weight,exact\n";
    for (const auto& [key, w] : weights) {
        std::string exact;
        if (w.exact) exact = std::to_string(w.exact->num) + "/" + std::to_string(w.exact->den);
        csv::write_row(out, {key, text::format_double(w.value), exact});
    }
    return out.str();
}

WeightSet WeightSet::parse(std::string_view content) {
    WeightSet ws;
    std::istringstream in{std::string(content)};
    std::string line;
    try {
        while (std::getline(in, line) && line.rfind("# ", 0) == 0) {
            const auto colon = line.find(": ");
            if (colon == std::string::npos) continue;
            const auto key = line.substr(2, colon - 2);
            const auto value = line.substr(colon + 2);
            if (key == "frame_ref") ws.frame_ref = value;
            if (key == "spec") ws.spec = spec_from_json(json::parse(value));
            if (key == "converged") ws.diagnostics.converged = value == "true";
            if (key == "iterations") ws.diagnostics.iterations = std::stoull(value);
            if (key == "max_residual") ws.diagnostics.max_residual = std::stod(value);
            if (key == "tolerance") ws.diagnostics.tolerance = std::stod(value);
            if (key == "uncovered_strata") ws.diagnostics.uncovered_strata = json::parse(value).get<std::vector<std::string>>();
            if (key == "out_of_scope_rows") ws.diagnostics.out_of_scope_rows = json::parse(value).get<std::vector<std::string>>();
        }
    } catch (const json::exception& e) {
        throw Error(Errc::corrupt_artifact, std::string("weight header: ") + e.what());
    }
    const auto table = csv::parse(content);
    const auto k = table.column("row_key");
    const auto w = table.column("weight");
    const auto x = table.column("exact");
    if (!k || !w || !x) throw Error(Errc::corrupt_artifact, "weight table lacks row_key/weight/exact");
    for (const auto& row : table.rows) {
        Weight weight{std::stod(row[*w]), std::nullopt};
        if (!row[*x].empty()) {
            const auto slash = row[*x].find('/');
            weight.exact = reduced(std::stoll(row[*x].substr(0, slash)), std::stoll(row[*x].substr(slash + 1)));
        }
        ws.weights.emplace(row[*k], weight);
    }
    return ws;
}

// ---------------------------------------------------------------------------

WeightSet poststratify(const registry::Frame& frame, std::span<const SampleRow> rows, const DomainSpec& spec) {
    spec.validate();
    if (spec.mode != Mode::full_cross) throw Error(Errc::spec_mismatch, "post-stratification needs a full-cross spec");
    check_rows(rows, spec);
    const auto population = frame_cell_counts(frame, spec);

    std::map<std::string, std::int64_t> sample;
    for (const auto& row : rows) ++sample[registry::stratum_label(row.categories)];

    WeightSet ws;
    ws.spec = spec;
    ws.frame_ref = frame.frame_id + "@" + frame.as_of.to_string();
    for (const auto& row : rows) {
        const auto label = registry::stratum_label(row.categories);
        auto it = population.find(label);
        if (it == population.end()) {
            ws.weights[row.key] = Weight{0.0, std::nullopt};
            ws.diagnostics.out_of_scope_rows.push_back(row.key);
            continue;
        }
        const std::int64_t big_n = it->second;
        const std::int64_t small_n = sample.at(label);
        ws.weights[row.key] = Weight{static_cast<double>(big_n) / static_cast<double>(small_n), reduced(big_n, small_n)};
    }
    for (const auto& [label, count] : population) {
        if (count > 0 && !sample.count(label)) ws.diagnostics.uncovered_strata.push_back(label);
    }
    std::sort(ws.diagnostics.out_of_scope_rows.begin(), ws.diagnostics.out_of_scope_rows.end());
    ws.diagnostics.iterations = 1;
    ws.diagnostics.converged = ws.diagnostics.uncovered_strata.empty();
    double worst = 0.0;
    for (const auto& label : ws.diagnostics.uncovered_strata) {
        worst = std::max(worst, static_cast<double>(population.at(label)));
    }
    ws.diagnostics.max_residual = worst;
    return ws;
}

WeightSet rake(std::span<const std::map<std::string, double>> margins, std::span<const SampleRow> rows,
               const DomainSpec& spec, double tol, std::size_t max_iter, std::string frame_ref) {
    spec.validate();
    if (spec.mode != Mode::margins_only) throw Error(Errc::spec_mismatch, "raking needs a margins-only spec");
    if (margins.size() != spec.dimensions.size()) {
        throw Error(Errc::spec_mismatch, "need one margin per spec dimension");
    }
    check_rows(rows, spec);
    const std::size_t dims = spec.dimensions.size();

    // Dense margin vectors in spec category order.
    std::vector<std::vector<double>> target(dims);
    for (std::size_t d = 0; d < dims; ++d) {
        target[d].assign(spec.dimensions[d].categories.size(), 0.0);
        for (const auto& [cat, total] : margins[d]) {
            if (total < 0 || !std::isfinite(total)) {
                throw Error(Errc::incompatible_margins, "margin of " + cat + " must be a finite non-negative total");
            }
            target[d][category_index(spec.dimensions[d], cat)] = total;
        }
    }
    double reference = 0.0;
    for (double t : target[0]) reference += t;
    if (!(reference > 0)) throw Error(Errc::incompatible_margins, "margin totals must be positive");
    for (std::size_t d = 1; d < dims; ++d) {
        double sum = 0.0;
        for (double t : target[d]) sum += t;
        if (std::abs(sum - reference) > tol) {
            throw Error(Errc::incompatible_margins, "margin totals differ between " + spec.dimensions[0].name +
                                                        " and " + spec.dimensions[d].name);
        }
    }

    WeightSet ws;
    ws.spec = spec;
    ws.frame_ref = std::move(frame_ref);
    ws.diagnostics.tolerance = tol;

    // Rows with no frame mass in some dimension sit outside the frame.
    std::vector<std::size_t> active;
    std::vector<std::vector<std::size_t>> cat_of;  // [row][dim]
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<std::size_t> cats(dims);
        bool in_scope = true;
        for (std::size_t d = 0; d < dims; ++d) {
            cats[d] = category_index(spec.dimensions[d], rows[r].categories[d]);
            if (target[d][cats[d]] <= 0) in_scope = false;
        }
        if (!in_scope) {
            ws.weights[rows[r].key] = Weight{0.0, std::nullopt};
            ws.diagnostics.out_of_scope_rows.push_back(rows[r].key);
            continue;
        }
        active.push_back(r);
        cat_of.push_back(std::move(cats));
    }
    std::sort(ws.diagnostics.out_of_scope_rows.begin(), ws.diagnostics.out_of_scope_rows.end());

    std::vector<std::vector<std::vector<std::size_t>>> buckets(dims);
    for (std::size_t d = 0; d < dims; ++d) {
        buckets[d].resize(target[d].size());
        for (std::size_t a = 0; a < active.size(); ++a) buckets[d][cat_of[a][d]].push_back(a);
        for (std::size_t c = 0; c < target[d].size(); ++c) {
            if (target[d][c] > 0 && buckets[d][c].empty()) {
                throw Error(Errc::incompatible_margins, spec.dimensions[d].name + "=" +
                                                            spec.dimensions[d].categories[c] +
                                                            " has a frame margin but no linked rows");
            }
        }
    }

    std::vector<double> w(active.size(), 1.0);
    auto max_residual = [&] {
        double worst = 0.0;
        for (std::size_t d = 0; d < dims; ++d) {
            const auto totals = kernels::parallel::bucket_totals(w, buckets[d]);
            for (std::size_t c = 0; c < totals.size(); ++c) worst = std::max(worst, std::abs(totals[c] - target[d][c]));
        }
        return worst;
    };

    std::vector<double> history;
    double residual = max_residual();
    std::size_t sweep = 0;
    while (residual > tol && sweep < max_iter) {
        ++sweep;
        for (std::size_t d = 0; d < dims; ++d) {
            const auto totals = kernels::parallel::bucket_totals(w, buckets[d]);
            for (std::size_t c = 0; c < totals.size(); ++c) {
                if (buckets[d][c].empty()) continue;
                const double factor = target[d][c] / totals[c];
                for (std::size_t a : buckets[d][c]) w[a] *= factor;
            }
        }
        residual = max_residual();
        history.push_back(residual);
    }
    ws.diagnostics.iterations = sweep;
    ws.diagnostics.max_residual = residual;

    if (residual > tol) {
        const std::string detail = "after " + std::to_string(sweep) + " sweeps the largest margin residual is " +
                                   text::format_double(residual) + " (tol " + text::format_double(tol) + ")";
        const bool stalled = history.size() >= 4 && history.back() >= history[history.size() / 2];
        throw Error(stalled ? Errc::incompatible_margins : Errc::non_convergence, detail);
    }
    ws.diagnostics.converged = true;
    for (std::size_t a = 0; a < active.size(); ++a) ws.weights[rows[active[a]].key] = Weight{w[a], std::nullopt};
    return ws;
}

WeightSet rake(const registry::Frame& frame, std::span<const SampleRow> rows, const DomainSpec& spec, double tol,
               std::size_t max_iter) {
    const auto margins = frame_margins(frame, spec);
    return rake(margins, rows, spec, tol, max_iter, frame.frame_id + "@" + frame.as_of.to_string());
}

// ---------------------------------------------------------------------------

bool row_in_domain(const SampleRow& row, const Domain& domain, const DomainSpec& spec) {
    if (domain.label == "all") return true;
    if (const auto eq = domain.label.find('='); eq != std::string::npos) {
        const auto name = domain.label.substr(0, eq);
        const auto cat = domain.label.substr(eq + 1);
        for (std::size_t d = 0; d < spec.dimensions.size(); ++d) {
            if (spec.dimensions[d].name != name) continue;
            const auto& cats = spec.dimensions[d].categories;
            if (std::find(cats.begin(), cats.end(), cat) == cats.end()) {
                throw Error(Errc::unknown_domain, "'" + cat + "' is not a category of " + name);
            }
            return row.categories[d] == cat;
        }
    }
    const auto parts = registry::split_stratum_label(domain.label);
    if (parts.size() != spec.dimensions.size()) throw Error(Errc::unknown_domain, "unknown domain '" + domain.label + "'");
    for (std::size_t d = 0; d < parts.size(); ++d) {
        const auto& cats = spec.dimensions[d].categories;
        if (std::find(cats.begin(), cats.end(), parts[d]) == cats.end()) {
            throw Error(Errc::unknown_domain, "unknown domain '" + domain.label + "'");
        }
    }
    return row.categories == parts;
}

EstimateResult estimate_total(const WeightSet& weights, std::span<const SampleRow> rows, const std::string& y_field,
                              const Domain& domain) {
    const bool known = std::any_of(rows.begin(), rows.end(), [&](const SampleRow& r) { return r.values.count(y_field); });
    if (!known && !rows.empty()) throw Error(Errc::unknown_field, "no linked row carries '" + y_field + "'");
    // Validate the domain even when there are no rows.
    if (rows.empty()) {
        row_in_domain(SampleRow{{}, std::vector<std::string>(weights.spec.dimensions.size()), {}}, domain, weights.spec);
    }

    EstimateResult result;
    WeightedSum sum;
    for (const auto& row : rows) {
        if (!row_in_domain(row, domain, weights.spec)) continue;
        auto w = weights.weights.find(row.key);
        if (w == weights.weights.end()) continue;
        auto v = row.values.find(y_field);
        if (v == row.values.end() || !v->second) {
            ++result.missing;
            continue;
        }
        const auto y = parse_real(*v->second);
        if (!y) throw Error(Errc::non_numeric_value, y_field + " of row " + row.key + " is '" + *v->second + "'");
        sum.add(w->second, *y, parse_int(*v->second));
        ++result.rows;
    }
    result.total = sum.value();
    result.exact = sum.exact();
    return result;
}

EstimateResult estimate_count(const WeightSet& weights, std::span<const SampleRow> rows, const Domain& domain) {
    EstimateResult result;
    WeightedSum sum;
    for (const auto& row : rows) {
        if (!row_in_domain(row, domain, weights.spec)) continue;
        auto w = weights.weights.find(row.key);
        if (w == weights.weights.end()) continue;
        sum.add(w->second, 1.0, 1);
        ++result.rows;
    }
    result.total = sum.value();
    result.exact = sum.exact();
    return result;
}

CalibrationReport check_calibration(const WeightSet& weights, std::span<const SampleRow> rows,
                                    const registry::Frame& frame, const DomainSpec& spec, double tol) {
    if (!(weights.spec == spec)) throw Error(Errc::spec_mismatch, "weights were built for a different domain spec");
    CalibrationReport report;

    auto finish = [&](const std::string& label, double target, const WeightedSum& sum) {
        Constraint c;
        c.label = label;
        c.target = target;
        if (sum.exact()) {
            const cpp_rational diff = sum.exact_value() - cpp_rational(static_cast<std::int64_t>(target));
            c.achieved = sum.value();
            c.residual = boost::multiprecision::abs(diff).convert_to<double>();
        } else {
            c.achieved = sum.value();
            c.residual = std::abs(c.achieved - target);
        }
        report.max_residual = std::max(report.max_residual, c.residual);
        report.constraints.push_back(std::move(c));
    };

    if (spec.mode == Mode::full_cross) {
        const auto population = frame_cell_counts(frame, spec);
        std::map<std::string, WeightedSum> sums;
        for (const auto& [label, n] : population) sums[label];
        for (const auto& row : rows) {
            auto w = weights.weights.find(row.key);
            if (w == weights.weights.end()) continue;
            sums[registry::stratum_label(row.categories)].add(w->second, 1.0, 1);
        }
        for (const auto& [label, sum] : sums) {
            auto it = population.find(label);
            finish(label, it == population.end() ? 0.0 : static_cast<double>(it->second), sum);
        }
    } else {
        const auto margins = frame_margins(frame, spec);
        for (std::size_t d = 0; d < spec.dimensions.size(); ++d) {
            std::map<std::string, WeightedSum> sums;
            for (const auto& cat : spec.dimensions[d].categories) sums[cat];
            for (const auto& row : rows) {
                auto w = weights.weights.find(row.key);
                if (w == weights.weights.end()) continue;
                sums[row.categories[d]].add(w->second, 1.0, 1);
            }
            for (const auto& [cat, sum] : sums) {
                auto it = margins[d].find(cat);
                finish(spec.dimensions[d].name + "=" + cat, it == margins[d].end() ? 0.0 : it->second, sum);
            }
        }
    }
    report.pass = report.max_residual <= tol;
    return report;
}

}  // namespace regisforge::estimate
