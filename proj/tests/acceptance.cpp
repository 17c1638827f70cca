// Acceptance harness: one pass/fail line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unordered_map>
#include <vector>

#include "path_fixture.hpp"
#include "regisforge/config.hpp"
#include "regisforge/error.hpp"
#include "regisforge/estimate.hpp"
#include "regisforge/idforge.hpp"
#include "regisforge/linkage.hpp"
#include "regisforge/quality.hpp"
#include "regisforge/registry.hpp"
#include "regisforge/synth.hpp"
#include "regisforge/timeline.hpp"
#include "scenarios.hpp"
#include "support.hpp"
#include "timeline_cases.hpp"
#include "workspace_tree.hpp"

using namespace regisforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

/// Accumulates failed checks; the first few are kept for the report.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        if (ok) return;
        ++failures_;
        if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
    }
    bool ok() const { return failures_ == 0; }
    std::string summary(const std::string& on_pass) const {
        if (ok()) return on_pass;
        return std::to_string(failures_) + " failed checks: " + notes_;
    }

private:
    std::size_t failures_ = 0;
    std::string notes_;
};

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome id_integrity() {
    Checks c;
    idforge::Generator gen;
    std::vector<std::uint64_t> ids;
    ids.reserve(1'000'000);
    for (int i = 0; i < 1'000'000; ++i) ids.push_back(gen.next().value());

    bool increasing = true, valid = true;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!idforge::validate_svid(ids[i])) valid = false;
        if (i > 0 && ids[i] / 10 <= ids[i - 1] / 10) increasing = false;
    }
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    const bool unique = std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
    c.expect(unique, "duplicate identifiers");
    c.expect(increasing, "prefixes not strictly increasing");
    c.expect(valid, "generated identifier fails validation");

    std::mt19937_64 rng(1);
    std::size_t substitutions = 0, accepted = 0;
    for (int n = 0; n < 1000; ++n) {
        const std::string id = std::to_string(ids[rng() % ids.size()]);
        for (std::size_t pos = 0; pos < id.size(); ++pos) {
            for (char d = '0'; d <= '9'; ++d) {
                if (d == id[pos]) continue;
                std::string bad = id;
                bad[pos] = d;
                ++substitutions;
                if (idforge::validate_svid(std::string_view(bad))) ++accepted;
            }
        }
    }
    c.expect(accepted == 0, std::to_string(accepted) + " substituted identifiers validate");
    return {c.ok(), c.summary("1e6 unique increasing ids; " + std::to_string(substitutions) +
                              " single-digit substitutions all rejected")};
}

// Index of the smallest label in each node's component, by breadth-first
// search over an edge list.
std::vector<std::size_t> bfs_min(const std::vector<idforge::Svid>& labels,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& edges, std::size_t& components) {
    const std::size_t n = labels.size();
    std::vector<std::vector<std::size_t>> adj(n);
    for (auto [a, b] : edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<std::size_t> out(n, n);
    components = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (out[s] != n) continue;
        ++components;
        std::vector<std::size_t> comp{s};
        out[s] = s;
        for (std::size_t head = 0; head < comp.size(); ++head) {
            for (auto w : adj[comp[head]]) {
                if (out[w] == n) {
                    out[w] = s;
                    comp.push_back(w);
                }
            }
        }
        const auto lo = *std::min_element(comp.begin(), comp.end(),
                                          [&](std::size_t x, std::size_t y) { return labels[x] < labels[y]; });
        for (auto v : comp) out[v] = lo;
    }
    return out;
}

Outcome alias_resolution() {
    Checks c;
    std::mt19937_64 rng(2);
    std::size_t links_applied = 0, entities_checked = 0;
    for (int script = 0; script < 500; ++script) {
        idforge::Generator ids;
        const std::size_t total = 2 + rng() % 999;
        const std::size_t nsrc = 1 + rng() % 3;
        std::vector<registry::AdminRegister> admin;
        for (std::size_t s = 0; s < nsrc; ++s) admin.emplace_back("S" + std::to_string(s));
        for (std::size_t i = 0; i < total; ++i) {
            admin[i % nsrc].ingest_transaction(ids, "k" + std::to_string(i), {}, "2020-01-01", {});
        }
        std::vector<const registry::AdminRegister*> ptrs;
        for (const auto& a : admin) ptrs.push_back(&a);
        auto reg = registry::EntityRegister::init(ptrs);
        const auto& recs = reg.records();
        const std::size_t n = recs.size();
        std::vector<std::pair<std::size_t, std::size_t>> accepted;
        const std::size_t links = rng() % (n + 1);
        for (std::size_t k = 0; k < links; ++k) {
            const std::size_t x = rng() % n, y = rng() % n;
            try {
                reg.link_entities(recs[x].birth_svid, recs[y].birth_svid);
                accepted.emplace_back(x, y);
            } catch (const Error& e) {
                c.expect(e.code() == Errc::conflicting_alias, std::string("unexpected error ") + e.what());
            }
        }
        links_applied += accepted.size();
        std::size_t components = 0;
        std::vector<idforge::Svid> labels;
        for (const auto& r : recs) labels.push_back(r.birth_svid);
        const auto oracle = bfs_min(labels, accepted, components);
        for (std::size_t i = 0; i < n; ++i) {
            const auto got = reg.resolve_current_id(recs[i].birth_svid);
            c.expect(got == recs[oracle[i]].birth_svid, "script " + std::to_string(script) + " entity " + std::to_string(i));
            ++entities_checked;
        }
        c.expect(reg.unique_view().size() == components, "unique view size in script " + std::to_string(script));
    }
    return {c.ok(), c.summary("500 scripts, " + std::to_string(entities_checked) + " entities, " +
                              std::to_string(links_applied) + " links match the traversal oracle")};
}

Outcome worked_example() {
    Checks c;
    scenarios::TripleKey fig;
    for (const auto& r : fig.ird.records()) c.expect(r.alias_id == fig.svids[0], "IRD key does not alias to SV_ID01");
    c.expect(fig.ird.records().size() == 3, "duplicate records deleted");

    scenarios::ThreeSources s;
    c.expect(s.reg.records().size() == 9, "initial register is not 9 records");
    for (int i = 1; i <= 9; ++i) c.expect(s.reg.at(s.sv[i]).current_id == s.sv[i], "initial current id");
    s.reg.link_entities(s.sv[3], s.sv[5]);
    const auto& r3 = s.reg.at(s.sv[3]);
    const auto& r5 = s.reg.at(s.sv[5]);
    c.expect(r3.source_alias.count("IMM") && r3.source_alias.at("IMM") == s.sv[5], "record 3 lacks IMM alias 5");
    c.expect(r5.source_alias.count("IRD") && r5.source_alias.at("IRD") == s.sv[3], "record 5 lacks IRD alias 3");
    c.expect(r5.current_id == s.sv[3], "record 5 current id is not 3");
    c.expect(r3.current_id == s.sv[3], "record 3 current id changed");
    for (int i : {1, 2, 4, 6, 7, 8, 9}) {
        c.expect(s.reg.at(s.sv[i]).source_alias.size() == 1, "unrelated record gained an alias");
    }
    c.expect(s.reg.unique_view().size() == 8, "unique view is not 8 records");
    c.expect(s.reg.records().size() == 9, "records deleted");
    return {c.ok(), c.summary("aliases to SV_ID01; SV_ID5 gains IRD alias SV_ID3, current SV_ID3; 8 of 9 unique")};
}

// ---------------------------------------------------------------------------
// Calibration problems

struct Problem {
    registry::Frame frame;
    std::vector<estimate::SampleRow> rows;
    std::vector<std::vector<double>> frame_cells;  // [i][j]
    std::vector<std::vector<int>> sample_cells;
};

Problem random_problem(std::mt19937_64& rng, std::size_t dim = 5) {
    Problem p;
    idforge::Generator ids;
    p.frame.frame_id = "calibration";
    p.frame.as_of = Date::parse("2020-12-31");
    p.frame.dimensions = {"r", "c"};
    p.frame_cells.assign(dim, std::vector<double>(dim));
    p.sample_cells.assign(dim, std::vector<int>(dim));
    int key = 0;
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            const int big = 20 + static_cast<int>(rng() % 180);
            const int small = 1 + static_cast<int>(rng() % std::min(big, 15));
            p.frame_cells[i][j] = big;
            p.sample_cells[i][j] = small;
            const std::vector<std::string> cats{"r" + std::to_string(i), "c" + std::to_string(j)};
            for (int m = 0; m < big; ++m) {
                const auto s = ids.next();
                p.frame.members.insert(s);
                p.frame.cells[s] = cats;
                p.frame.strata[s] = registry::stratum_label(cats);
                ++p.frame.stratum_counts[p.frame.strata[s]];
            }
            for (int m = 0; m < small; ++m) {
                char buf[16];
                std::snprintf(buf, sizeof buf, "k%06d", key++);
                p.rows.push_back({buf, cats, {{"y", "1"}}});
            }
        }
    }
    return p;
}

// Independent oracle: dense-table IPF from the sample counts, to 1e-12.
std::vector<std::vector<double>> ipf_oracle(const Problem& p) {
    const std::size_t n = p.sample_cells.size();
    std::vector<double> rowm(n, 0), colm(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            rowm[i] += p.frame_cells[i][j];
            colm[j] += p.frame_cells[i][j];
        }
    }
    std::vector<std::vector<double>> t(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) t[i][j] = p.sample_cells[i][j];
    }
    for (int it = 0; it < 100000; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += t[i][j];
            for (std::size_t j = 0; j < n; ++j) t[i][j] *= rowm[i] / s;
        }
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += t[i][j];
            for (std::size_t i = 0; i < n; ++i) t[i][j] *= colm[j] / s;
        }
        double worst = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += t[i][j];
            worst = std::max(worst, std::abs(s - rowm[i]));
        }
        if (worst < 1e-12) break;
    }
    return t;
}

std::size_t index_of(const std::string& cat) { return static_cast<std::size_t>(std::stoul(cat.substr(1))); }

Outcome calibration_identity() {
    Checks c;
    std::mt19937_64 rng(4);

    double ps_worst = 0;
    for (int k = 0; k < 20; ++k) {
        const auto p = random_problem(rng);
        const auto spec = estimate::DomainSpec::from_frame(p.frame, estimate::Mode::full_cross);
        const auto ws = estimate::poststratify(p.frame, p.rows, spec);
        const auto rep = estimate::check_calibration(ws, p.rows, p.frame, spec, 0.0);
        ps_worst = std::max(ps_worst, rep.max_residual);
        c.expect(rep.max_residual == 0.0, "post-stratified residual " + sci(rep.max_residual));
    }

    double worst_residual = 0, worst_gap = 0;
    std::size_t max_iter_used = 0;
    for (int k = 0; k < 200; ++k) {
        const auto p = random_problem(rng);
        const auto spec = estimate::DomainSpec::from_frame(p.frame, estimate::Mode::margins_only);
        estimate::WeightSet ws;
        try {
            ws = estimate::rake(p.frame, p.rows, spec, 1e-6, 100);
        } catch (const Error& e) {
            c.expect(false, std::string("rake failed: ") + e.what());
            continue;
        }
        c.expect(ws.diagnostics.converged, "not converged");
        max_iter_used = std::max(max_iter_used, ws.diagnostics.iterations);
        const auto rep = estimate::check_calibration(ws, p.rows, p.frame, spec, 1e-6);
        worst_residual = std::max(worst_residual, rep.max_residual);
        c.expect(rep.pass, "residual " + sci(rep.max_residual));
        const auto oracle = ipf_oracle(p);
        for (const auto& row : p.rows) {
            const auto i = index_of(row.categories[0]), j = index_of(row.categories[1]);
            const double expect = oracle[i][j] / p.sample_cells[i][j];
            const double gap = std::abs(ws.weights.at(row.key).value - expect);
            worst_gap = std::max(worst_gap, gap);
            c.expect(gap <= 1e-6, "weight off oracle by " + sci(gap));
        }
    }
    return {c.ok(), c.summary("post-stratified residuals 0; 200 raked 5x5 problems, max residual " +
                              sci(worst_residual) + ", max iterations " + std::to_string(max_iter_used) +
                              ", max weight gap to oracle " + sci(worst_gap))};
}

Outcome count_recovery() {
    Checks c;
    std::mt19937_64 rng(5);
    double rake_worst = 0;
    std::size_t domains = 0;
    for (int k = 0; k < 50; ++k) {
        const auto p = random_problem(rng, 3 + k % 3);
        const auto cross = estimate::DomainSpec::from_frame(p.frame, estimate::Mode::full_cross);
        const auto ps = estimate::poststratify(p.frame, p.rows, cross);
        for (const auto& [label, n] : p.frame.stratum_counts) {
            const auto got = estimate::estimate_total(ps, p.rows, "y", estimate::Domain{label});
            c.expect(got.total == static_cast<double>(n), "post-stratified count in " + label);
            ++domains;
        }
        const auto margins = estimate::DomainSpec::from_frame(p.frame, estimate::Mode::margins_only);
        const auto rk = estimate::rake(p.frame, p.rows, margins, 1e-9, 200);
        const auto fm = p.frame.margins();
        for (std::size_t d = 0; d < margins.dimensions.size(); ++d) {
            for (const auto& [cat, n] : fm[d]) {
                const auto label = margins.dimensions[d].name + "=" + cat;
                const auto got = estimate::estimate_total(rk, p.rows, "y", estimate::Domain{label});
                const double gap = std::abs(got.total - n);
                rake_worst = std::max(rake_worst, gap);
                c.expect(gap <= 1e-6, "raked count in " + label + " off by " + sci(gap));
                ++domains;
            }
        }
    }
    return {c.ok(), c.summary(std::to_string(domains) + " domains; post-stratified exact, raked max gap " + sci(rake_worst))};
}

// ---------------------------------------------------------------------------
// Monte Carlo over a synthetic population (criteria 6 and 7)

struct MonteCarlo {
    bool ran = false;
    std::string error;
    double truth = 0;
    std::vector<double> calibrated, naive;
    std::size_t strata_checked = 0, bound_failures = 0, oracle_failures = 0, third_source_increases = 0;
    double seconds = 0;           // setup, two-source linkage and estimation
    double coverage_seconds = 0;  // coverage reports and their oracle
};

config::SynthConfig mc_config() {
    config::SynthConfig cfg;
    cfg.seed = 17;
    const std::vector<std::pair<std::string, std::string>> cats = {{"F", "young"}, {"F", "old"}, {"M", "young"}, {"M", "old"}};
    const double means[] = {30, 55, 38, 70};
    const double sds[] = {6, 9, 7, 12};
    for (std::size_t s = 0; s < 4; ++s) {
        config::SynthStratum st;
        st.categories = {{"sex", cats[s].first}, {"age", cats[s].second}};
        st.size = 25'000;
        st.y_mean = means[s];
        st.y_sd = sds[s];
        cfg.strata.push_back(st);
    }
    cfg.sources = {{"A", {0.9, 0.3, 0.6, 0.2}}, {"B", {0.8, 0.4, 0.5, 0.3}}, {"C", {0.7, 0.7, 0.4, 0.5}}};
    return cfg;
}

linkage::LinkageRelation named(linkage::LinkageRelation rel, std::string l, std::string r) {
    rel.left_source = std::move(l);
    rel.right_source = std::move(r);
    return rel;
}

MonteCarlo run_monte_carlo() {
    MonteCarlo mc;
    const auto start = std::chrono::steady_clock::now();
    std::chrono::steady_clock::duration coverage_time{};
    try {
        const auto cfg = mc_config();
        synth::Rng pop_rng(cfg.seed);
        const auto pop = synth::generate_population(cfg, pop_rng);
        mc.truth = static_cast<double>(pop.total_y());

        // Register and frame are built once; only source inclusion is redrawn.
        idforge::Generator ids;
        registry::AdminRegister admin("POP");
        for (const auto& e : pop.entities) {
            std::map<std::string, std::string> attrs;
            for (std::size_t d = 0; d < pop.dimensions.size(); ++d) attrs[pop.dimensions[d]] = pop.strata[e.stratum][d];
            admin.ingest_transaction(ids, e.uid, attrs, "2021-01-01", {});
        }
        std::vector<const registry::AdminRegister*> srcs{&admin};
        const auto reg = registry::EntityRegister::init(srcs);
        const auto frame = registry::build_frame(reg, {}, Date::parse("2021-12-31"), pop.dimensions, "population");
        const auto spec = estimate::DomainSpec::from_frame(frame, estimate::Mode::full_cross);

        std::vector<linkage::KeyedValue> register_side;
        std::unordered_map<std::string, std::size_t> entity_of;
        std::vector<std::string> entity_label;
        for (std::size_t i = 0; i < pop.entities.size(); ++i) {
            const auto* rec = admin.find_key(pop.entities[i].uid);
            register_side.push_back({rec->svid.to_string(), pop.entities[i].uid});
            entity_of.emplace(pop.entities[i].uid, i);
            entity_label.push_back(registry::stratum_label(pop.strata[pop.entities[i].stratum]));
        }
        const double N = static_cast<double>(frame.members.size());

        for (int rep = 0; rep < 200; ++rep) {
            synth::Rng rng(1000 + static_cast<std::uint64_t>(rep));
            const auto included = synth::draw_inclusion(pop, cfg, rng);
            std::vector<std::vector<linkage::KeyedValue>> keyed(3);
            std::vector<quality::SourceCoverageInput> inputs(3);
            std::vector<std::vector<char>> member_sets(3, std::vector<char>(pop.entities.size(), 0));
            const char* tags[] = {"A", "B", "C"};
            for (std::size_t s = 0; s < 3; ++s) {
                for (auto i : included[s]) {
                    keyed[s].push_back({pop.entities[i].uid, pop.entities[i].uid});
                    member_sets[s][i] = 1;
                }
                inputs[s].source = tags[s];
                for (const auto& kv : keyed[s]) inputs[s].keys.push_back(kv.entity_key);
                inputs[s].link_to_frame =
                    named(linkage::link_exact_keys(keyed[s], register_side), tags[s], std::string(linkage::kRegisterSource));
            }
            const auto ab = named(linkage::link_exact_keys(keyed[0], keyed[1]), "A", "B");
            const auto bc = named(linkage::link_exact_keys(keyed[1], keyed[2]), "B", "C");

            std::vector<linkage::LinkageRelation> two{ab, inputs[1].link_to_frame};
            const auto ds = linkage::step_through(two);

            // Calibrated and naive totals from the two-source linked sample.
            std::vector<estimate::SampleRow> rows;
            rows.reserve(ds.rows.size());
            double ysum = 0;
            for (const auto& row : ds.rows) {
                const auto svid = idforge::Svid::parse(row.back());
                const auto& e = pop.entities[entity_of.at(row[0])];
                rows.push_back({row[0], frame.cells.at(svid), {{"y", std::to_string(e.y)}}});
                ysum += static_cast<double>(e.y);
            }
            const auto ws = estimate::poststratify(frame, rows, spec);
            mc.calibrated.push_back(estimate::estimate_total(ws, rows, "y").total);
            mc.naive.push_back(ysum * N / static_cast<double>(rows.size()));
            const auto estimated = std::chrono::steady_clock::now();

            // Coverage of the two-source and three-source integrations.
            const std::vector<quality::SourceCoverageInput> two_inputs{inputs[0], inputs[1]};
            const auto cov2 = quality::linked_coverage_report(two_inputs, ds, frame, spec, false);
            std::vector<linkage::LinkageRelation> three{ab, bc, inputs[2].link_to_frame};
            const auto cov3 = quality::linked_coverage_report(inputs, linkage::step_through(three), frame, spec, false);
            for (const auto& [label, cov] : cov2.integrated.per_stratum) {
                ++mc.strata_checked;
                double lo2 = 1e300, lo3 = 1e300;
                for (const auto& s : cov2.sources) lo2 = std::min(lo2, s.per_stratum.at(label).ratio);
                for (const auto& s : cov3.sources) lo3 = std::min(lo3, s.per_stratum.at(label).ratio);
                const double r2 = cov.ratio, r3 = cov3.integrated.per_stratum.at(label).ratio;
                if (r2 > lo2 || r3 > lo3) ++mc.bound_failures;
                if (r3 > r2) ++mc.third_source_increases;

                // Set-intersection oracle for both integrations.
                std::size_t in2 = 0, in3 = 0, nd = 0;
                for (std::size_t i = 0; i < pop.entities.size(); ++i) {
                    if (entity_label[i] != label) continue;
                    ++nd;
                    const bool ab_in = member_sets[0][i] && member_sets[1][i];
                    in2 += ab_in;
                    in3 += ab_in && member_sets[2][i];
                }
                if (r2 != static_cast<double>(in2) / static_cast<double>(nd) ||
                    r3 != static_cast<double>(in3) / static_cast<double>(nd)) {
                    ++mc.oracle_failures;
                }
            }
            coverage_time += std::chrono::steady_clock::now() - estimated;
        }
        mc.ran = true;
    } catch (const std::exception& e) {
        mc.error = e.what();
    }
    mc.coverage_seconds = std::chrono::duration<double>(coverage_time).count();
    mc.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start - coverage_time).count();
    return mc;
}

const MonteCarlo& monte_carlo() {
    static const MonteCarlo mc = run_monte_carlo();
    return mc;
}

Outcome bias_correction() {
    const auto& mc = monte_carlo();
    if (!mc.ran) return {false, "simulation failed: " + mc.error};
    double mean_cal = 0, mean_abs_cal = 0, mean_naive = 0;
    for (double v : mc.calibrated) {
        mean_cal += v;
        mean_abs_cal += std::abs(v / mc.truth - 1.0);
    }
    for (double v : mc.naive) mean_naive += v;
    const double reps = static_cast<double>(mc.calibrated.size());
    mean_cal /= reps;
    mean_abs_cal /= reps;
    mean_naive /= reps;
    const double cal_bias = mean_cal / mc.truth - 1.0;
    const double naive_bias = mean_naive / mc.truth - 1.0;
    const bool pass = mc.calibrated.size() == 200 && mean_abs_cal < 0.005 && std::abs(cal_bias) < 0.005 &&
                      std::abs(naive_bias) > 0.05 && mc.seconds < 120.0;
    return {pass, "200 replications of 1e5 entities in " + fixed(mc.seconds, 1) + " s; calibrated mean |rel error| " +
                      fixed(100 * mean_abs_cal) + "%, bias of mean " + fixed(100 * cal_bias) + "%; naive bias " +
                      fixed(100 * naive_bias, 2) + "%"};
}

Outcome coverage_erosion() {
    const auto& mc = monte_carlo();
    if (!mc.ran) return {false, "simulation failed: " + mc.error};
    const bool pass = mc.strata_checked == 800 && mc.bound_failures == 0 && mc.oracle_failures == 0 &&
                      mc.third_source_increases == 0;
    return {pass, std::to_string(mc.strata_checked) + " stratum-replications in " + fixed(mc.coverage_seconds, 1) +
                      " s; bound failures " +
                      std::to_string(mc.bound_failures) + ", oracle mismatches " + std::to_string(mc.oracle_failures) +
                      ", increases from a third source " + std::to_string(mc.third_source_increases)};
}

Outcome path_dependence() {
    Checks c;
    const auto abc = path_fixture::along({"A", "B", "C"}, true);
    const auto acb = path_fixture::along({"A", "C", "B"}, true);
    c.expect(path_fixture::row_set(abc) != path_fixture::row_set(acb), "blocked orders give the same rows");
    const auto xabc = path_fixture::along({"A", "B", "C"}, false);
    const auto xacb = path_fixture::along({"A", "C", "B"}, false);
    c.expect(path_fixture::row_set(xabc) == path_fixture::row_set(xacb), "exact orders differ");
    c.expect(!xabc.rows.empty(), "exact path is empty");
    std::size_t records = 0;
    for (const char* tag : {"A", "B", "C"}) records += path_fixture::load(tag).timelines().size();
    c.expect(records <= 20, "fixture exceeds 20 records");
    return {c.ok(), c.summary("blocked (A,B,C) " + std::to_string(abc.rows.size()) + " rows vs (A,C,B) " +
                              std::to_string(acb.rows.size()) + "; exact orders identical; " + std::to_string(records) +
                              " records")};
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(REGISFORGE_CLI) + " " + args + " >>" + log.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

Outcome determinism() {
    testsupport::TempDir dir("determinism");
    const auto config = fs::path(REGISFORGE_DEMO) / "synthetic" / "config.json";
    const std::vector<std::string> stages = {"synth", "ingest", "register-build", "link", "frame",
                                             "calibrate", "estimate", "coverage", "tse-report"};
    for (const char* ws : {"w1", "w2"}) {
        for (const auto& stage : stages) {
            const int rc = run_cli(stage + " --config " + config.string() + " --workspace " + (dir / ws).string() +
                                       " --seed 7",
                                   dir / "log.txt");
            if (rc != 0) return {false, stage + " exited " + std::to_string(rc) + " in " + ws};
        }
    }
    const auto a = workspace_tree::snapshot(dir / "w1");
    const auto b = workspace_tree::snapshot(dir / "w2");
    const auto diff = workspace_tree::first_difference(a, b);
    if (!diff.empty()) return {false, "workspaces differ at " + diff};
    std::size_t bytes = 0;
    for (const auto& [p, content] : a) bytes += content.size();
    return {true, "two full runs, " + std::to_string(a.size()) + " files, " + std::to_string(bytes) + " bytes identical"};
}

Outcome timeline_metrics() {
    Checks c;
    const auto& cases = timeline_cases::table();
    timeline::TimelineDB db("CASES");
    std::uint64_t seq = 0;
    std::size_t single = 0, all_missing = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto values = timeline_cases::as_values(cases[i]);
        if (values.size() == 1) ++single;
        if (cases[i].missing == static_cast<int>(values.size())) ++all_missing;
        for (std::size_t j = 0; j < values.size(); ++j) {
            db.append_event({"E" + std::to_string(100 + i), Date::from_ymd(2012, 3, 1 + static_cast<unsigned>(j)), seq++,
                             {{"status", values[j]}}, std::nullopt});
        }
    }
    const auto report = timeline::stability_metrics(db, "status");
    std::size_t i = 0;
    for (const auto& [key, s] : report.per_entity) {
        const auto& k = cases[i++];
        c.expect(s.change_rate == timeline_cases::expected_change(k), key + " change rate " + fixed(s.change_rate, 4));
        c.expect(s.missing_rate == timeline_cases::expected_missing(k), key + " missing rate " + fixed(s.missing_rate, 4));
    }
    c.expect(report.per_entity.size() == 20, "table has " + std::to_string(report.per_entity.size()) + " cases");
    c.expect(single >= 2 && all_missing >= 2, "degenerate cases missing from the table");
    return {c.ok(), c.summary("20 cases incl. " + std::to_string(single) + " single-event and " +
                              std::to_string(all_missing) + " all-missing timelines match")};
}

struct Criterion {
    int number;
    const char* name;
    double limit_seconds;  // 0 = no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "id-integrity", 10, id_integrity},
        {2, "alias-resolution", 30, alias_resolution},
        {3, "worked-example", 0, worked_example},
        {4, "calibration-identity", 20, calibration_identity},
        {5, "count-recovery", 0, count_recovery},
        {6, "bias-correction", 0, bias_correction},
        {7, "coverage-erosion", 0, coverage_erosion},
        {8, "path-dependence", 0, path_dependence},
        {9, "determinism", 0, determinism},
        {10, "timeline-metrics", 0, timeline_metrics},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.limit_seconds > 0 && secs >= c.limit_seconds) {
            out.pass = false;
            out.detail += "; over the " + fixed(c.limit_seconds, 0) + " s limit";
        }
        if (!out.pass) ++failed;
        std::printf("criterion %2d %-22s %s  (%.2f s)  %s\n", c.number, c.name, out.pass ? "PASS" : "FAIL", secs,
                    out.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
