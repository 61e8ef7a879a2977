#pragma once

#include <qvi/config.hpp>
#include <qvi/fixedpoint.hpp>
#include <qvi/montecarlo.hpp>
#include <qvi/solver.hpp>
#include <qvi/validate.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qvi::cli {

struct Options {
    std::string command;
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> n;
    std::optional<std::string> mode;
    std::optional<std::string> check;
};

namespace detail {

namespace fs = std::filesystem;

/// Collects pass/fail per check and prints `FAIL <check> <detail>` lines.
class Outcome {
public:
    Outcome(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

    void pass(const std::string& check) { results_.emplace_back(check, true); }
    void fail(const std::string& check, const std::string& detail) {
        results_.emplace_back(check, false);
        std::string one_line = detail;
        std::replace(one_line.begin(), one_line.end(), '\n', ' ');
        err_ << "FAIL " << check << " " << one_line << "\n";
    }
    void note(const std::string& key, const std::string& value) { out_ << key << " = " << value << "\n"; }
    void note(const std::string& key, double value) { note(key, format_double(value)); }

    bool ok() const {
        for (const auto& r : results_)
            if (!r.second) return false;
        return true;
    }

    std::string status_text() const {
        std::ostringstream os;
        for (const auto& [c, p] : results_) os << c << ".status = " << (p ? "pass" : "fail") << "\n";
        return os.str();
    }

private:
    std::ostream& out_;
    std::ostream& err_;
    std::vector<std::pair<std::string, bool>> results_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    return std::string(std::istreambuf_iterator<char>(is), {});
}

inline void write_file(const fs::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("cannot write '" + p.string() + "'");
    os << content;
}

inline const Grid& need_grid(const RunSetup& s) {
    if (!s.grid) throw ConfigError("this command needs a [grid] section");
    return *s.grid;
}

inline void cmd_validate(const RunSetup& s, const fs::path& out, Outcome& oc) {
    const ProblemSpec& spec = s.spec;
    const ValidateOptions& vo = s.validate;
    double radius = vo.sample_radius ? *vo.sample_radius
                                     : (s.grid ? s.grid->box_radius : 2.0 * spec.k_gamma_radius);
    ValidationReport rep = validate_static(spec, make_samples(spec, radius, vo.sample_times, vo.sample_points), &s.driver);
    rep.merge(estimate_lipschitz(spec, make_lipschitz_pairs(spec, radius, vo.sample_times, vo.sample_points), &s.driver));

    std::vector<State> starts = vo.loop_starts;
    if (starts.empty())
        for (const Sample& smp : make_samples(spec, radius, 1, 9))
            if (smp.mark == 0) starts.push_back(smp.x);
    std::vector<double> times = vo.loop_times.empty() ? std::vector<double>{0.0} : vo.loop_times;
    for (double t : times) {
        try {
            rep.merge(check_no_free_loop(spec, t, starts, vo.loop_depth, vo.loop_budget));
        } catch (const BudgetError& e) {
            oc.fail("no_free_loop", e.what());
        }
    }
    write_file(out / "validation.txt", rep.to_text());
    write_file(out / "witnesses.csv", rep.witness_csv());
    for (const auto& [name, r] : rep.checks()) {
        if (r.status == CheckStatus::pass) oc.pass(name);
        else oc.fail(name, std::string(status_name(r.status)) + " " +
                               (r.witness ? ValidationReport::witness_text(*r.witness) : std::string()));
    }
}

inline void cmd_solve(const RunSetup& s, const Options& o, const fs::path& out, Outcome& oc) {
    const Grid& g = need_grid(s);
    std::string mode = o.mode.value_or(s.mode);
    DriverSpec drv = s.driver;
    ValueField f;
    if (mode == "penalized") {
        double n = o.n ? static_cast<double>(*o.n) : s.solve.penalty_n;
        f = solve_penalized(s.spec, g, n, drv, s.solve);
        oc.note("penalty_n", n);
    } else if (mode == "double") {
        f = solve_double(s.spec, g, drv, s.solve);
    } else {
        throw ConfigError("--mode must be penalized or double");
    }
    Residuals res = residual_qvi(f, s.spec, g, drv);
    std::ostringstream fcsv, rcsv;
    write_field_csv(fcsv, f);
    write_residual_csv(rcsv, res);
    write_file(out / "field.csv", fcsv.str());
    write_file(out / "residual.csv", rcsv.str());
    oc.note("mode", mode);
    oc.note("sup_residual", res.sup);
    oc.note("l2_residual", res.l2);
    oc.note("growth_constant", growth_constant(f, s.spec.growth_rho));
    oc.pass("solve");
}

inline void cmd_iterate(const RunSetup& s, const fs::path& out, Outcome& oc) {
    const Grid& g = need_grid(s);
    DriverSpec drv = s.driver.with_k_m(s.picard.k_nl);
    std::ostringstream tcsv;
    try {
        PicardResult r = picard_solve(s.spec, g, drv, s.picard.tol, s.picard.kmax, s.solve);
        r.trace.final_residual = fixed_point_residual(r.field, s.spec, g, drv, s.solve);
        write_trace_csv(tcsv, r.trace);
        std::ostringstream fcsv;
        write_field_csv(fcsv, r.field);
        write_file(out / "field.csv", fcsv.str());
        write_file(out / "trace.csv", tcsv.str());
        oc.note("iterations", std::to_string(r.trace.entries.size()));
        oc.note("fixed_point_residual", r.trace.final_residual);
        if (r.trace.final_residual <= 2.0 * s.picard.tol) oc.pass("picard");
        else oc.fail("picard", "fixed-point residual " + format_double(r.trace.final_residual) + " > 2*tol");
    } catch (const NonConvergenceError& e) {
        write_trace_csv(tcsv, e.trace());
        write_file(out / "trace.csv", tcsv.str());
        oc.fail("picard", e.what());
    }
}

inline void cmd_verify(const RunSetup& s, const Options& o, const fs::path& out, Outcome& oc) {
    if (!o.check) throw ConfigError("verify needs --check");
    const std::string& check = *o.check;
    const McOptions& mc = s.mc;
    std::uint64_t seed = o.seed.value_or(mc.seed);
    std::vector<EstimateCI> rows;
    auto fixed_row = [&](const std::string& name, double v) {
        EstimateCI e;
        e.name = name;
        e.mean = v;
        e.seed = seed;
        rows.push_back(e);
    };

    if (check == "consistency") {
        const Grid& g = need_grid(s);
        double n = o.n ? static_cast<double>(*o.n) : mc.consistency_n;
        ValueField f = solve_penalized(s.spec, g, n, s.driver, s.solve);
        PathBundle b = simulate_forward(s.spec, mc.probe_t, mc.probe_x, mc.dt_sim, mc.paths, seed);
        StopRule rule = mc.stop_hit_h ? StopRule::hit_h(mc.epsilon.value_or(g.dx())) : StopRule::fixed_t();
        ConsistencyResult r = pathwise_consistency(f, n, s.spec, s.driver, b, rule, mc.allowance);
        rows.push_back(r.estimate);
        fixed_row("field_value", r.field_value);
        fixed_row("excluded_fraction", r.excluded_fraction);
        if (r.pass) oc.pass("consistency");
        else
            oc.fail("consistency", "estimate " + format_double(r.estimate.mean) + " +- " +
                                       format_double(3.0 * r.estimate.stderr_) + " vs field " +
                                       format_double(r.field_value) + ", excluded " +
                                       format_double(r.excluded_fraction));
    } else if (check == "domination") {
        double x = mc.domination_x.value_or(mc.probe_x[0]);
        DominationSummary all;
        std::ostringstream csv;
        bool ok = true;
        for (int i = 0; i < mc.domination_seeds; ++i) {
            DominationSummary d = domination_check(s.spec, mc.probe_t, x, mc.dt_sim, std::min(mc.paths, 1000),
                                                   seed + i, mc.c_a_sigma);
            fixed_row("min_margin_seed" + std::to_string(seed + i), d.min_margin);
            fixed_row("clamp_fraction_seed" + std::to_string(seed + i), d.clamp_fraction);
            all.violations.insert(all.violations.end(), d.violations.begin(), d.violations.end());
            ok = ok && d.pass;
        }
        write_domination_csv(csv, all);
        write_file(out / "domination_failures.csv", csv.str());
        if (ok) oc.pass("domination");
        else oc.fail("domination", std::to_string(all.violations.size()) + " violating paths, first path " +
                                       std::to_string(all.violations.front().path) + " at t=" +
                                       format_double(all.violations.front().time));
    } else if (check == "moments") {
        std::vector<State> starts = mc.moment_starts;
        if (starts.empty()) starts = {State{0.5, 0}, State{1, 0}, State{2, 0}};
        MomentStability ms = moment_stability(s.spec, mc.probe_t, starts, mc.moment_p, mc.dt_sim, mc.paths, seed,
                                              mc.moment_factor);
        for (std::size_t i = 0; i < starts.size(); ++i) {
            EstimateCI e = ms.estimates[i];
            e.name = "moment_x" + format_double(starts[i][0]);
            rows.push_back(e);
            fixed_row("ratio_x" + format_double(starts[i][0]), ms.ratios[i]);
        }
        fixed_row("spread", ms.spread);
        if (ms.pass) oc.pass("moments");
        else oc.fail("moments", "ratio spread " + format_double(ms.spread) + " >= " + format_double(mc.moment_factor));
    } else if (check == "dualgap") {
        const Grid& g = need_grid(s);
        DualGapTable t = dual_gap(s.spec, g, s.driver, mc.dual_n, mc.probe_t, mc.probe_x, s.solve);
        for (std::size_t i = 0; i < t.n_list.size(); ++i) fixed_row("n_" + format_double(t.n_list[i]), t.values[i]);
        fixed_row("double", t.double_value);
        bool ok = t.non_increasing && t.bounded_below && t.final_gap <= mc.dual_tol;
        if (ok) oc.pass("dualgap");
        else oc.fail("dualgap", "non_increasing=" + std::to_string(t.non_increasing) + " bounded_below=" +
                                    std::to_string(t.bounded_below) + " final_gap=" + format_double(t.final_gap));
    } else if (check == "oracle") {
        const Grid& g = need_grid(s);
        double v = interpolate(solve_penalized(s.spec, g, 0.0, s.driver, s.solve), mc.probe_t, mc.probe_x);
        double ref = binomial_oracle(mc.oracle_rate, mc.oracle_vol, mc.oracle_strike, s.spec.horizon, mc.oracle_steps);
        fixed_row("solver", v);
        fixed_row("binomial", ref);
        if (std::fabs(v - ref) <= mc.oracle_tol) oc.pass("oracle");
        else oc.fail("oracle", "solver " + format_double(v) + " vs binomial " + format_double(ref));
    } else {
        throw ConfigError("unknown --check '" + check + "'");
    }
    std::ostringstream csv;
    write_estimates_csv(csv, rows);
    write_file(out / (check + ".csv"), csv.str());
}

/// Concatenates `key = value` files and estimate CSVs in the output directory.
inline void cmd_report(const fs::path& out, Outcome& oc) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(out))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::ostringstream rep;
    bool failed = false;
    for (const fs::path& p : files) {
        std::string stem = p.stem().string();
        if (p.filename() == "report.txt") continue;
        std::ifstream is(p);
        std::string line;
        if (p.extension() == ".txt") {
            while (std::getline(is, line)) {
                if (line.empty()) continue;
                rep << stem << "." << line << "\n";
                if (line.find(".status = fail") != std::string::npos || line.find(".status = error") != std::string::npos)
                    failed = true;
            }
        } else if (p.extension() == ".csv") {
            std::getline(is, line);
            if (line == "name,mean,stderr,n_paths,seed") {
                while (std::getline(is, line)) {
                    auto c1 = line.find(',');
                    auto c2 = line.find(',', c1 + 1);
                    if (c1 == std::string::npos || c2 == std::string::npos) continue;
                    rep << stem << "." << line.substr(0, c1) << " = " << line.substr(c1 + 1, c2 - c1 - 1) << "\n";
                }
            } else {
                long rows = 0;
                while (std::getline(is, line)) rows += !line.empty();
                rep << stem << ".rows = " << rows << "\n";
            }
        }
    }
    write_file(out / "report.txt", rep.str());
    if (failed) oc.fail("report", "aggregated outputs contain failed checks");
    else oc.pass("report");
}

}  // namespace detail

/// Runs one command; returns the process exit status (0 iff every invoked check passed).
inline int run(const Options& o, std::ostream& out, std::ostream& err) {
    detail::Outcome oc(out, err);
    try {
        std::filesystem::path dir(o.out_dir);
        std::filesystem::create_directories(dir);
        if (o.command == "report") {
            detail::cmd_report(dir, oc);
            return oc.ok() ? 0 : 1;
        }
        RunSetup s = parse_config(detail::read_file(o.config_path));
        if (o.command == "validate") detail::cmd_validate(s, dir, oc);
        else if (o.command == "solve") detail::cmd_solve(s, o, dir, oc);
        else if (o.command == "iterate") detail::cmd_iterate(s, dir, oc);
        else if (o.command == "verify") detail::cmd_verify(s, o, dir, oc);
        else throw ConfigError("unknown command '" + o.command + "'");
        std::string tag = o.command + (o.check ? "_" + *o.check : std::string());
        detail::write_file(dir / (tag + "_status.txt"), oc.status_text());
    } catch (const Error& e) {
        oc.fail(o.command, e.what());
    } catch (const std::exception& e) {
        oc.fail(o.command, std::string("unexpected error: ") + e.what());
    }
    return oc.ok() ? 0 : 1;
}

}  // namespace qvi::cli
