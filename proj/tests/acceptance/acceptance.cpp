// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <qvi/qvi.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace qvi;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

RunSetup load(const char* name) {
    std::ifstream is(std::string(QVI_MODELS_DIR) + "/" + name);
    if (!is) throw Error(std::string("cannot open model ") + name);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct Verdict {
    bool pass;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    auto t0 = Clock::now();
    try {
        v = fn();
    } catch (const std::exception& e) {
        v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS " : "FAIL ") << id << " " << name << ": " << v.detail << " [" << fmt(since(t0))
              << " s]" << std::endl;
}

Verdict put_oracle() {
    RunSetup s = load("put.ini");
    double ref = std::nan("");
    std::ifstream fx(QVI_FIXTURE_PATH);
    fx >> ref;
    if (!std::isfinite(ref)) return {false, "fixture missing"};
    auto t0 = Clock::now();
    auto f = solve_penalized(s.spec, *s.grid, 0.0, s.driver, s.solve);
    double secs = since(t0);
    double v = interpolate(f, 0.0, State{1.0, 0.0});
    double diff = std::fabs(v - ref);
    return {diff <= 5e-3 && secs <= 10.0,
            "value " + fmt(v) + " binomial " + fmt(ref) + " |diff| " + fmt(diff) + " solve " + fmt(secs) + " s"};
}

Verdict monotone_penalization() {
    RunSetup s = load("model_a.ini");
    const Grid& g = *s.grid;
    std::vector<double> ns{1, 4, 16, 64, 256};
    std::vector<ValueField> fs;
    for (double n : ns) fs.push_back(solve_penalized(s.spec, g, n, s.driver, s.solve));
    std::size_t bad = 0;
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < fs.size(); ++i)
        for (std::size_t j = i + 1; j < fs.size(); ++j) {
            OrderingStats st = compare_fields(fs[j], fs[i]);
            bad += st.violations;
            worst = std::max(worst, st.max_diff);
        }
    double gap = sup_distance(fs.back(), solve_double(s.spec, g, s.driver, s.solve));
    return {bad == 0 && gap <= 1e-2, "ordering violations " + std::to_string(bad) + " max(v_n' - v_n) " + fmt(worst) +
                                         " sup|v_256 - v| " + fmt(gap)};
}

Verdict residual_rate() {
    RunSetup s = load("model_a.ini");
    const Grid& base = *s.grid;
    std::vector<double> sups;
    std::string d;
    bool ok = true;
    for (int lvl = 0; lvl < 3; ++lvl) {
        int f = 1 << lvl;
        Grid g(base.dim, base.box_radius, (base.nodes_per_axis - 1) / 2 * f + 1, base.time_steps / 2 * f, base.horizon);
        auto t0 = Clock::now();
        auto field = solve_double(s.spec, g, s.driver, s.solve);
        Residuals r = residual_qvi(field, s.spec, g, s.driver);
        double secs = since(t0);
        ok = ok && secs <= 30.0;
        double C = r.sup / (g.dt() + g.dx() * g.dx());
        d += "level " + std::to_string(g.nodes_per_axis) + "x" + std::to_string(g.time_steps) + " sup " + fmt(r.sup) +
             " l2 " + fmt(r.l2) + " C " + fmt(C) + " (" + fmt(secs) + " s); ";
        sups.push_back(r.sup);
    }
    for (std::size_t i = 1; i < sups.size(); ++i) {
        double ratio = sups[i - 1] / sups[i];
        d += "ratio " + fmt(ratio) + " ";
        ok = ok && ratio >= 1.5;
    }
    return {ok, d};
}

Verdict picard() {
    RunSetup s = load("model_a.ini");
    const Grid& g = *s.grid;
    DriverSpec drv = s.driver.with_k_m(0.1);
    auto r = picard_solve(s.spec, g, drv, 1e-6, 30, s.solve);
    const auto& e = r.trace.entries;
    bool ok = true;
    double worst = 0.0;
    for (std::size_t i = 1; i < e.size(); ++i) {
        worst = std::max(worst, e[i].ratio);
        ok = ok && e[i].diff <= 0.9 * e[i - 1].diff;
    }
    double fpr = fixed_point_residual(r.field, s.spec, g, drv, s.solve);
    ok = ok && fpr <= 2e-6;
    auto z = picard_solve(s.spec, g, s.driver.with_k_m(0.0), 1e-9, 5, s.solve);
    double d2 = z.trace.entries.size() >= 2 ? z.trace.entries[1].diff : 0.0;
    ok = ok && d2 <= 10.0 * s.solve.inner_tol;
    return {ok, "iterations " + std::to_string(e.size()) + " max ratio " + fmt(worst) + " final diff " +
                    fmt(e.back().diff) + " fixed-point residual " + fmt(fpr) + " k_nl=0 d2 " + fmt(d2)};
}

Verdict terminal_behavior() {
    RunSetup s = load("model_a.ini");
    const Grid& base = *s.grid;
    std::vector<double> probes{-2.0, -1.0, 0.0, 0.5, 1.5};
    std::vector<std::vector<double>> err(probes.size());
    for (int lvl = 0; lvl < 4; ++lvl) {
        Grid g(base.dim, base.box_radius, base.nodes_per_axis, 25 << lvl, base.horizon);
        auto f = solve_double(s.spec, g, s.driver, s.solve);
        const Slice& last = f.slices[g.time_steps - 1];
        for (std::size_t i = 0; i < probes.size(); ++i) {
            State x{probes[i], 0.0};
            err[i].push_back(std::fabs(interpolate(g, last, x) - s.spec.coeffs.terminal(x)));
        }
    }
    bool ok = true;
    std::string d;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        d += "x=" + fmt(probes[i]) + ":";
        for (std::size_t k = 0; k < err[i].size(); ++k) {
            d += " " + fmt(err[i][k]);
            if (k > 0 && err[i][k] > err[i][k - 1] + 1e-14) ok = false;
        }
        d += "; ";
    }
    return {ok, d};
}

Verdict consistency() {
    RunSetup s = load("model_a.ini");
    const Grid& g = *s.grid;
    const McOptions& mc = s.mc;
    auto f = solve_penalized(s.spec, g, mc.consistency_n, s.driver, s.solve);
    auto b = simulate_forward(s.spec, mc.probe_t, mc.probe_x, mc.dt_sim, 10000, mc.seed);
    StopRule rule = mc.stop_hit_h ? StopRule::hit_h(mc.epsilon.value_or(g.dx())) : StopRule::fixed_t();
    auto r = pathwise_consistency(f, mc.consistency_n, s.spec, s.driver, b, rule, 2e-2);
    double h = s.spec.coeffs.obstacle(mc.probe_t, mc.probe_x);
    return {r.pass, "x=" + fmt(mc.probe_x[0]) + " field " + fmt(r.field_value) + " (h " + fmt(h) + ") estimate " +
                        fmt(r.estimate.mean) + " se " + fmt(r.estimate.stderr_) + " excluded " +
                        fmt(r.excluded_fraction)};
}

Verdict domination() {
    RunSetup s = load("model_a.ini");
    double x = s.mc.domination_x.value_or(s.mc.probe_x[0]);
    std::size_t bad = 0;
    double margin = std::numeric_limits<double>::infinity(), clamp = 0.0;
    for (std::uint64_t seed : {s.mc.seed, s.mc.seed + 1, s.mc.seed + 2}) {
        auto d = domination_check(s.spec, 0.0, x, s.mc.dt_sim, 1000, seed, s.mc.c_a_sigma);
        bad += d.violations.size();
        margin = std::min(margin, d.min_margin);
        clamp = std::max(clamp, d.clamp_fraction);
    }
    return {bad == 0, "violations " + std::to_string(bad) + " min margin " + fmt(margin) + " clamp fraction " +
                          fmt(clamp)};
}

Verdict comparison() {
    RunSetup s = load("model_a.ini");
    const Grid& g = *s.grid;
    ProblemSpec hi = s.spec;
    auto h0 = s.spec.coeffs.obstacle;
    auto p0 = s.spec.coeffs.terminal;
    hi.coeffs.obstacle = [h0](double t, const State& x) { return h0(t, x) + 0.1 / (1.0 + x[0] * x[0]); };
    hi.coeffs.terminal = [p0](const State& x) { return p0(x) + 0.05 * std::exp(-x[0] * x[0]); };
    auto st = compare_fields(solve_double(s.spec, g, s.driver, s.solve), solve_double(hi, g, s.driver, s.solve));
    return {st.violations == 0, "violations " + std::to_string(st.violations) + " max(v1 - v2) " + fmt(st.max_diff)};
}

// Independent enumeration by counting through all chain words.
bool brute_violates(const std::vector<double>& g, const std::vector<double>& c, double d1, double d2, double x0,
                    int depth, std::vector<int>& best) {
    bool found = false;
    double best_cost = 0.0;
    for (int len = 1; len <= depth; ++len)
        for (int code = 0; code < (1 << len); ++code) {
            std::vector<int> w(len);
            for (int i = 0; i < len; ++i) w[i] = (code >> (len - 1 - i)) & 1;
            double x = x0, cost = 0.0;
            for (int i : w) {
                cost += c[i];
                x += g[i];
            }
            if (std::fabs(x - x0) <= d1 * (1 + 1e-9) && cost < d2 - 1e-9 * std::max(1.0, d2) &&
                (!found || cost < best_cost || (cost == best_cost && w.size() < best.size()))) {
                found = true;
                best_cost = cost;
                best = w;
            }
        }
    return found;
}

Verdict no_free_loop() {
    RunSetup a = load("model_a.ini"), b = load("model_b.ini");
    bool a_ok = true;
    for (double t : a.validate.loop_times.empty() ? std::vector<double>{0.0} : a.validate.loop_times)
        a_ok = a_ok && check_no_free_loop(a.spec, t, a.validate.loop_starts, 4).passed();
    auto rb = check_no_free_loop(b.spec, 0.0, b.validate.loop_starts, 4);
    const CheckResult* r = rb.find("no_free_loop");
    bool b_ok = r && r->status == CheckStatus::fail && r->witness && r->witness->chain.size() == 2;

    bool agree = true;
    int instances = 0;
    for (double chi : {0.0, 0.1, 0.3})
        for (double d2 : {0.5, 0.15}) {
            ProblemSpec p;
            p.coeffs = a.spec.coeffs;
            p.coeffs.jump = [](double, const State&, const Mark& e) { return State{e[0] == 0.0 ? 1.0 : -1.0, 0.0}; };
            p.coeffs.cost = [chi](double, const State&, const Mark&) { return chi; };
            p.marks = MarkSpace({Mark{0, 0}, Mark{1, 0}}, {1.0, 1.0});
            p.loop_delta1 = 0.1;
            p.loop_delta2 = d2;
            for (int depth = 1; depth <= 6; ++depth) {
                ++instances;
                auto rep = check_no_free_loop(p, 0.0, {State{0.0, 0.0}}, depth);
                std::vector<int> w;
                bool bv = brute_violates({1.0, -1.0}, {chi, chi}, 0.1, d2, 0.0, depth, w);
                const CheckResult* c = rep.find("no_free_loop");
                bool lv = c->status == CheckStatus::fail;
                if (bv != lv || (bv && c->witness->chain != w)) agree = false;
            }
        }
    return {a_ok && b_ok && agree,
            std::string("model A ") + (a_ok ? "passes" : "fails") + ", model B witness " +
                (r && r->witness ? ValidationReport::chain_text(r->witness->chain) : std::string("none")) +
                ", brute force agrees on " + std::to_string(instances) + " instances: " + (agree ? "yes" : "no")};
}

Verdict operator_suite() {
    RunSetup s = load("model_a.ini");
    const Grid& g = *s.grid;
    std::mt19937_64 rng(20240607);
    std::uniform_real_distribution<double> u(-1.0, 1.0), ut(0.0, 1.0);
    auto rel = [](double a, double b) {
        return std::fabs(a - b) <= 1e-12 * std::max({1.0, std::fabs(a), std::fabs(b)});
    };
    long fails[5] = {0, 0, 0, 0, 0};
    const int slices = 10000;
    std::vector<double> times;
    for (int i = 0; i < 20; ++i) times.push_back(g.time(i * g.time_steps / 20));
    std::vector<JumpTable> tabs;
    std::vector<GeneratorMatrix> gens;
    for (double t : times) {
        tabs.push_back(build_jump_table(s.spec, g, t));
        gens.push_back(assemble_generator(s.spec, g, t));
    }
    const int N = g.node_count();
    for (int it = 0; it < slices; ++it) {
        std::size_t ti = static_cast<std::size_t>(it) % times.size();
        const JumpTable& tab = tabs[ti];
        double scale = std::pow(10.0, 3.0 * u(rng));
        Slice v{std::vector<double>(N), times[ti]}, w = v, vc = v;
        double c = scale * u(rng);
        for (int k = 0; k < N; ++k) {
            v.values[k] = scale * u(rng);
            w.values[k] = v.values[k] + scale * ut(rng);
            vc.values[k] = v.values[k] + c;
        }
        Slice mv = apply_M(tab, v), mw = apply_M(tab, w), mvc = apply_M(tab, vc);
        double n = 1.0 + 100.0 * ut(rng);
        Slice p1 = penalty(tab, v, 1.0), pn = penalty(tab, v, n);
        std::vector<double> cst(N, c);
        std::vector<double> lc = gens[ti].apply(cst);
        for (int k = 0; k < N; ++k) {
            if (mv.values[k] > mw.values[k]) ++fails[0];
            if (!rel(mvc.values[k], mv.values[k] + c)) ++fails[1];
            bool active = v.values[k] > mv.values[k];
            if (active != (p1.values[k] > 0.0)) ++fails[2];
            if (!rel(pn.values[k], n * p1.values[k])) ++fails[3];
            if (std::fabs(lc[k]) > 1e-12 * std::max(1.0, std::fabs(c)) * std::fabs(gens[ti].diag[k])) ++fails[4];
        }
    }
    bool ok = true;
    for (long f : fails) ok = ok && f == 0;
    return {ok, std::to_string(slices) + " slices; failures: monotone " + std::to_string(fails[0]) + ", translation " +
                    std::to_string(fails[1]) + ", complementarity " + std::to_string(fails[2]) + ", linearity " +
                    std::to_string(fails[3]) + ", constants " + std::to_string(fails[4])};
}

Verdict moments() {
    RunSetup s = load("model_a.ini");
    auto st = moment_stability(s.spec, 0.0, s.mc.moment_starts, 4.0, s.mc.dt_sim, 10000, s.mc.seed, 3.0);
    std::string d = "ratios";
    for (double r : st.ratios) d += " " + fmt(r);
    return {st.pass, d + " spread " + fmt(st.spread)};
}

}  // namespace

int main() {
    report(1, "american-put-oracle", put_oracle);
    report(2, "monotone-penalization", monotone_penalization);
    report(3, "residual-consistency", residual_rate);
    report(4, "picard-contraction", picard);
    report(5, "terminal-behavior", terminal_behavior);
    report(6, "pathwise-consistency", consistency);
    report(7, "domination", domination);
    report(8, "comparison-principle", comparison);
    report(9, "no-free-loop", no_free_loop);
    report(10, "operator-properties", operator_suite);
    report(11, "moment-stability", moments);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
