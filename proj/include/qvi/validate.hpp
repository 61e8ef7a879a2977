#pragma once

#include <qvi/expr.hpp>
#include <qvi/model.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace qvi {

enum class CheckStatus { pass = 0, fail = 1, error = 2 };

inline const char* status_name(CheckStatus s) {
    switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::error: return "error";
    }
    return "?";
}

/// Concrete point reproducing a violation.
struct Witness {
    double t = 0.0;
    State x{};
    int mark = -1;
    std::vector<int> chain;  ///< mark indices, for loop checks
    double violation = 0.0;  ///< amount by which the inequality fails
    std::string detail;

    /// Total order used to pick one witness deterministically.
    bool worse_than(const Witness& o) const {
        if (violation != o.violation) return violation > o.violation;
        return std::tie(t, x, mark, chain, detail) < std::tie(o.t, o.x, o.mark, o.chain, o.detail);
    }
};

struct CheckResult {
    std::string name;
    CheckStatus status = CheckStatus::pass;
    std::optional<Witness> witness;
    std::map<std::string, double> measured;
    double tolerance = 1e-9;
};

class ValidationReport {
public:
    void add(CheckResult r) {
        auto it = checks_.find(r.name);
        if (it == checks_.end()) checks_.emplace(r.name, std::move(r));
        else combine(it->second, r);
    }

    /// Order-independent merge; reports over disjoint sample partitions merge to the full report.
    void merge(const ValidationReport& other) {
        for (const auto& [name, r] : other.checks_) add(r);
    }

    bool passed() const {
        for (const auto& [name, r] : checks_)
            if (r.status != CheckStatus::pass) return false;
        return true;
    }

    const CheckResult* find(const std::string& name) const {
        auto it = checks_.find(name);
        return it == checks_.end() ? nullptr : &it->second;
    }

    const std::map<std::string, CheckResult>& checks() const { return checks_; }

    /// Plain `key = value` lines, sorted by check name.
    std::string to_text() const {
        std::ostringstream os;
        for (const auto& [name, r] : checks_) {
            os << name << ".status = " << status_name(r.status) << "\n";
            os << name << ".tolerance = " << format_double(r.tolerance) << "\n";
            for (const auto& [k, v] : r.measured)
                os << name << "." << k << " = " << format_double(v) << "\n";
            auto sg = r.measured.find("s_gphi");
            auto sp = r.measured.find("s_phi2");
            if (sg != r.measured.end() && sp != r.measured.end() && sp->second > 0)
                os << name << ".c_fit = " << format_double(sg->second / sp->second) << "\n";
            if (r.witness) os << name << ".witness = " << witness_text(*r.witness) << "\n";
        }
        return os.str();
    }

    /// CSV of witnesses: check,t,x1,x2,mark,chain,violation,detail
    std::string witness_csv() const {
        std::ostringstream os;
        os << "check,t,x1,x2,mark,chain,violation,detail\n";
        for (const auto& [name, r] : checks_) {
            if (!r.witness) continue;
            const Witness& w = *r.witness;
            os << name << "," << format_double(w.t) << "," << format_double(w.x[0]) << ","
               << format_double(w.x[1]) << "," << w.mark << "," << chain_text(w.chain) << ","
               << format_double(w.violation) << ",\"" << w.detail << "\"\n";
        }
        return os.str();
    }

    static std::string chain_text(const std::vector<int>& chain) {
        std::string s;
        for (std::size_t i = 0; i < chain.size(); ++i) {
            if (i) s += ";";
            s += std::to_string(chain[i]);
        }
        return s;
    }

    static std::string witness_text(const Witness& w) {
        std::ostringstream os;
        os << "t=" << format_double(w.t) << " x=(" << format_double(w.x[0]) << "," << format_double(w.x[1])
           << ") mark=" << w.mark;
        if (!w.chain.empty()) os << " chain=" << chain_text(w.chain);
        os << " violation=" << format_double(w.violation) << " " << w.detail;
        return os.str();
    }

private:
    std::map<std::string, CheckResult> checks_;

    static void combine(CheckResult& a, const CheckResult& b) {
        a.status = std::max(a.status, b.status);
        if (b.witness && (!a.witness || b.witness->worse_than(*a.witness))) a.witness = b.witness;
        for (const auto& [k, v] : b.measured) {
            auto it = a.measured.find(k);
            if (it == a.measured.end()) a.measured.emplace(k, v);
            else if (k.rfind("s_", 0) == 0 || k == "count") it->second += v;
            else if (k.rfind("min_", 0) == 0) it->second = std::min(it->second, v);
            else it->second = std::max(it->second, v);
        }
        a.tolerance = std::max(a.tolerance, b.tolerance);
    }
};

inline constexpr double assumption_rel_tol = 1e-9;

/// lhs <= rhs up to the relative tolerance used for assumption checks.
inline bool leq_tol(double lhs, double rhs) {
    return lhs <= rhs + assumption_rel_tol * std::max({1.0, std::fabs(lhs), std::fabs(rhs)});
}

struct Sample {
    double t = 0.0;
    State x{};
    int mark = 0;
};

/// Tensor cloud: nt times in [0,T], nx points per axis on [-radius, radius], all marks.
inline std::vector<Sample> make_samples(const ProblemSpec& spec, double radius, int nt, int nx) {
    std::vector<Sample> out;
    int ny = spec.dim > 1 ? nx : 1;
    for (int it = 0; it < nt; ++it) {
        double t = nt > 1 ? spec.horizon * it / (nt - 1) : 0.0;
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                State x{};
                x[0] = nx > 1 ? -radius + 2.0 * radius * i / (nx - 1) : 0.0;
                if (spec.dim > 1) x[1] = nx > 1 ? -radius + 2.0 * radius * j / (nx - 1) : 0.0;
                for (int m = 0; m < static_cast<int>(spec.marks.size()); ++m) out.push_back({t, x, m});
            }
    }
    return out;
}

namespace detail {

inline CheckResult make_check(const std::string& name) {
    CheckResult r;
    r.name = name;
    r.tolerance = assumption_rel_tol;
    return r;
}

inline void record_violation(CheckResult& r, Witness w) {
    r.status = std::max(r.status, CheckStatus::fail);
    if (!r.witness || w.worse_than(*r.witness)) r.witness = std::move(w);
}

inline void record_error(CheckResult& r, const Sample& s, const std::string& msg) {
    r.status = CheckStatus::error;
    Witness w;
    w.t = s.t;
    w.x = s.x;
    w.mark = s.mark;
    w.violation = std::numeric_limits<double>::infinity();
    w.detail = "evaluation error: " + msg;
    if (!r.witness || w.worse_than(*r.witness)) r.witness = std::move(w);
}

/// Accumulates the least-squares fit |g| ~ C (1 + |x|^rho) and the envelope max ratio.
inline void record_growth(CheckResult& r, double g, double phi) {
    if (!std::isfinite(g)) {
        r.status = std::max(r.status, CheckStatus::fail);
        return;
    }
    r.measured["s_gphi"] += std::fabs(g) * phi;
    r.measured["s_phi2"] += phi * phi;
    double& env = r.measured["c_envelope"];
    env = std::max(env, std::fabs(g) / phi);
}

}  // namespace detail

/// Sampled checks of chi >= 0, the impulse bound, terminal consistency and polynomial growth.
/// Growth of f~(t,x,0,0) is checked only when a driver is supplied.
inline ValidationReport validate_static(const ProblemSpec& spec, const std::vector<Sample>& samples,
                                        const DriverSpec* driver = nullptr) {
    if (samples.empty()) throw Error("validate_static needs at least one sample");
    const CoefficientSet& c = spec.coeffs;
    const int d = spec.dim;
    auto chi = detail::make_check("chi_nonneg");
    auto imp = detail::make_check("impulse_bound");
    auto term = detail::make_check("terminal_consistency");
    auto gf = detail::make_check("growth_f");
    auto gh = detail::make_check("growth_h");
    auto gpsi = detail::make_check("growth_psi");
    auto gchi = detail::make_check("growth_chi");
    for (CheckResult* r : {&gf, &gh, &gpsi, &gchi}) r->measured["rho"] = spec.growth_rho;

    for (const Sample& s : samples) {
        const Mark& e = spec.marks.nodes.at(s.mark);
        double phi = 1.0 + std::pow(norm(s.x, d), spec.growth_rho);
        auto guarded = [&](CheckResult& r, auto&& fn) {
            try {
                fn();
            } catch (const Error& ex) {
                detail::record_error(r, s, ex.what());
            }
        };
        guarded(chi, [&] {
            double v = c.cost(s.t, s.x, e);
            if (!leq_tol(0.0, v)) detail::record_violation(chi, {s.t, s.x, s.mark, {}, -v, "chi < 0"});
        });
        guarded(imp, [&] {
            State g = c.jump(s.t, s.x, e);
            State y{s.x[0] + g[0], s.x[1] + g[1]};
            double lhs = norm(y, d);
            double rhs = std::max(spec.k_gamma_radius, norm(s.x, d));
            if (!leq_tol(lhs, rhs))
                detail::record_violation(imp, {s.t, s.x, s.mark, {}, lhs - rhs,
                                               "|x+gamma| = " + format_double(lhs) + " > " + format_double(rhs)});
        });
        guarded(term, [&] {
            double T = spec.horizon;
            double hT = c.obstacle(T, s.x);
            double psi = c.terminal(s.x);
            State g = c.jump(T, s.x, e);
            State y{s.x[0] + g[0], s.x[1] + g[1]};
            double up = c.terminal(y) + c.cost(T, s.x, e);
            if (!leq_tol(hT, psi))
                detail::record_violation(term, {T, s.x, s.mark, {}, hT - psi, "h(T,x) > psi(x)"});
            if (!leq_tol(psi, up))
                detail::record_violation(term, {T, s.x, s.mark, {}, psi - up,
                                                "psi(x) = " + format_double(psi) + " > psi(x+gamma)+chi = " +
                                                    format_double(up)});
        });
        guarded(gh, [&] { detail::record_growth(gh, c.obstacle(s.t, s.x), phi); });
        guarded(gpsi, [&] { detail::record_growth(gpsi, c.terminal(s.x), phi); });
        guarded(gchi, [&] { detail::record_growth(gchi, c.cost(s.t, s.x, e), phi); });
        if (driver && driver->f_tilde)
            guarded(gf, [&] { detail::record_growth(gf, driver->f_tilde(s.t, s.x, 0.0, State{}), phi); });
    }
    ValidationReport rep;
    for (CheckResult* r : {&chi, &imp, &term, &gh, &gpsi, &gchi}) rep.add(std::move(*r));
    if (driver && driver->f_tilde) rep.add(std::move(gf));
    return rep;
}

/// Exhaustive enumeration of impulse chains up to max_depth from each start.
/// A chain returning within loop_delta1 of its start must cost at least loop_delta2.
inline ValidationReport check_no_free_loop(const ProblemSpec& spec, double t, const std::vector<State>& starts,
                                           int max_depth, double budget = 1e7) {
    if (max_depth < 1) throw Error("max_depth must be at least 1");
    const int m = static_cast<int>(spec.marks.size());
    if (m == 0) throw Error("mark space is empty");
    double chains = 0.0, level = 1.0;
    for (int k = 1; k <= max_depth; ++k) {
        level *= m;
        chains += level;
    }
    chains *= static_cast<double>(starts.size());
    if (chains > budget)
        throw BudgetError("no-free-loop enumeration needs " + format_double(chains) + " chains, budget is " +
                          format_double(budget));

    const CoefficientSet& c = spec.coeffs;
    const int d = spec.dim;
    const double d1 = spec.loop_delta1 * (1.0 + assumption_rel_tol);
    const double d2 = spec.loop_delta2 - assumption_rel_tol * std::max(1.0, spec.loop_delta2);

    auto r = detail::make_check("no_free_loop");
    r.measured["count"] = chains;
    double min_return_cost = std::numeric_limits<double>::infinity();
    struct Best {
        double cost;
        std::size_t len;
        std::vector<int> chain;
        std::size_t start;
    };
    std::optional<Best> best;
    std::vector<int> chain;

    auto dfs = [&](auto&& self, std::size_t si, const State& x, double cost, int depth) -> void {
        const State& x0 = starts[si];
        for (int i = 0; i < m; ++i) {
            const Mark& e = spec.marks.nodes[i];
            State g = c.jump(t, x, e);
            State y{x[0] + g[0], x[1] + g[1]};
            double cc = cost + c.cost(t, x, e);
            chain.push_back(i);
            State diff{y[0] - x0[0], y[1] - x0[1]};
            if (norm(diff, d) <= d1) {
                min_return_cost = std::min(min_return_cost, cc);
                if (cc < d2) {
                    Best cand{cc, chain.size(), chain, si};
                    if (!best || std::tie(cand.cost, cand.len, cand.chain, cand.start) <
                                     std::tie(best->cost, best->len, best->chain, best->start))
                        best = std::move(cand);
                }
            }
            if (depth + 1 < max_depth) self(self, si, y, cc, depth + 1);
            chain.pop_back();
        }
    };
    for (std::size_t si = 0; si < starts.size(); ++si) {
        try {
            dfs(dfs, si, starts[si], 0.0, 0);
        } catch (const Error& ex) {
            chain.clear();
            detail::record_error(r, {t, starts[si], -1}, ex.what());
        }
    }
    if (std::isfinite(min_return_cost)) r.measured["min_return_cost"] = min_return_cost;
    if (best) {
        Witness w;
        w.t = t;
        w.x = starts[best->start];
        w.mark = best->chain.front();
        w.chain = best->chain;
        w.violation = spec.loop_delta2 - best->cost;
        w.detail = "chain of length " + std::to_string(best->len) + " returns with cost " +
                   format_double(best->cost) + " < " + format_double(spec.loop_delta2);
        detail::record_violation(r, std::move(w));
    }
    ValidationReport rep;
    rep.add(std::move(r));
    return rep;
}

struct LipschitzPair {
    double t = 0.0;
    State x1{}, x2{};
    int mark = 0;
    double y1 = 0.0, y2 = 0.0;
    State z1{}, z2{};
};

/// Max difference quotients of (a, sigma) and gamma in x and of f~ in (y, z) at fixed (t, x1).
inline ValidationReport estimate_lipschitz(const ProblemSpec& spec, const std::vector<LipschitzPair>& pairs,
                                           const DriverSpec* driver = nullptr) {
    const CoefficientSet& c = spec.coeffs;
    const int d = spec.dim;
    auto ras = detail::make_check("lipschitz_a_sigma");
    auto rg = detail::make_check("lipschitz_gamma");
    auto rf = detail::make_check("lipschitz_f");
    ras.measured["declared"] = spec.lipschitz.k_a_sigma;
    rg.measured["declared"] = spec.lipschitz.k_gamma;
    rf.measured["declared"] = spec.lipschitz.k_f;
    ras.measured["estimate"] = rg.measured["estimate"] = rf.measured["estimate"] = 0.0;
    ras.tolerance = rg.tolerance = rf.tolerance = 0.01;

    auto note = [&](CheckResult& r, double q, double declared, const LipschitzPair& p, const char* what) {
        double& est = r.measured["estimate"];
        est = std::max(est, q);
        if (q > declared * 1.01)
            detail::record_violation(r, {p.t, p.x1, p.mark, {}, q - declared,
                                         std::string(what) + " quotient " + format_double(q) + " exceeds " +
                                             format_double(declared)});
    };

    for (const LipschitzPair& p : pairs) {
        State dxs{p.x1[0] - p.x2[0], p.x1[1] - p.x2[1]};
        double dx = norm(dxs, d);
        Sample s{p.t, p.x1, p.mark};
        if (dx > 0.0) {
            try {
                State a1 = c.drift(p.t, p.x1), a2 = c.drift(p.t, p.x2);
                Matrix s1 = c.diffusion(p.t, p.x1), s2 = c.diffusion(p.t, p.x2);
                State da{a1[0] - a2[0], a1[1] - a2[1]};
                double ds = 0.0;
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < d; ++j) ds += std::pow(s1[2 * i + j] - s2[2 * i + j], 2);
                note(ras, (norm(da, d) + std::sqrt(ds)) / dx, spec.lipschitz.k_a_sigma, p, "a/sigma");
            } catch (const Error& ex) {
                detail::record_error(ras, s, ex.what());
            }
            try {
                const Mark& e = spec.marks.nodes.at(p.mark);
                State g1 = c.jump(p.t, p.x1, e), g2 = c.jump(p.t, p.x2, e);
                State dg{g1[0] - g2[0], g1[1] - g2[1]};
                note(rg, norm(dg, d) / dx, spec.lipschitz.k_gamma, p, "gamma");
            } catch (const Error& ex) {
                detail::record_error(rg, s, ex.what());
            }
        }
        if (driver && driver->f_tilde) {
            State dzs{p.z1[0] - p.z2[0], p.z1[1] - p.z2[1]};
            double den = std::fabs(p.y1 - p.y2) + norm(dzs, d);
            if (den > 0.0) {
                try {
                    double f1 = driver->f_tilde(p.t, p.x1, p.y1, p.z1);
                    double f2 = driver->f_tilde(p.t, p.x1, p.y2, p.z2);
                    note(rf, std::fabs(f1 - f2) / den, spec.lipschitz.k_f, p, "f");
                } catch (const Error& ex) {
                    detail::record_error(rf, s, ex.what());
                }
            }
        }
    }
    ValidationReport rep;
    rep.add(std::move(ras));
    rep.add(std::move(rg));
    if (driver && driver->f_tilde) rep.add(std::move(rf));
    return rep;
}

/// Neighbouring pairs on a sample cloud, perturbing x by h and (y, z) by fixed offsets.
inline std::vector<LipschitzPair> make_lipschitz_pairs(const ProblemSpec& spec, double radius, int nt, int nx) {
    std::vector<LipschitzPair> out;
    double h = nx > 1 ? 2.0 * radius / (nx - 1) : 1.0;
    for (const Sample& s : make_samples(spec, radius, nt, nx)) {
        for (int axis = 0; axis < spec.dim; ++axis) {
            LipschitzPair p;
            p.t = s.t;
            p.x1 = s.x;
            p.x2 = s.x;
            p.x2[axis] += h;
            p.mark = s.mark;
            p.y1 = s.x[0];
            p.y2 = s.x[0] + 0.5;
            p.z1[axis] = -0.25;
            p.z2[axis] = 0.25;
            out.push_back(p);
        }
    }
    return out;
}

}  // namespace qvi
