#pragma once

#include <qvi/error.hpp>
#include <qvi/grid.hpp>
#include <qvi/model.hpp>
#include <qvi/operators.hpp>
#include <qvi/solver.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace qvi {

/// Independent engine per path: the stream is a pure function of (seed, path index).
inline std::mt19937_64 path_engine(std::uint64_t seed, std::uint64_t path) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t s = mix(seed ^ mix(path));
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    return std::mt19937_64(seq);
}

struct PathPoint {
    double t = 0.0;
    State x{};        ///< state after any jump at t
    State pre{};      ///< state before the jump (equals x when no jump)
    State dw{};       ///< Brownian increment over the interval ending at t
    int mark = -1;    ///< jump mark, -1 when no jump
    bool step = true; ///< point lies on the uniform step grid
};

struct PathBundle {
    double t0 = 0.0;
    State x0{};
    double dt_sim = 0.0;
    std::uint64_t seed = 0;
    int dim = 1;
    std::vector<std::vector<PathPoint>> paths;
};

/// Euler-Maruyama between exact exponential jump times at rate lambda(E).
inline PathBundle simulate_forward(const ProblemSpec& spec, double t, const State& x, double dt_sim, int n_paths,
                                   std::uint64_t seed) {
    if (!(dt_sim > 0.0) || n_paths < 1) throw Error("simulate_forward needs dt_sim > 0 and n_paths >= 1");
    const double T = spec.horizon;
    const int d = spec.dim;
    const double lam = spec.marks.total();
    const int steps = std::max(1, static_cast<int>(std::ceil((T - t) / dt_sim - 1e-9)));
    const CoefficientSet& c = spec.coeffs;
    PathBundle b;
    b.t0 = t;
    b.x0 = x;
    b.dt_sim = dt_sim;
    b.seed = seed;
    b.dim = d;
    b.paths.resize(n_paths);
    for (int p = 0; p < n_paths; ++p) {
        auto eng = path_engine(seed, static_cast<std::uint64_t>(p));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::exponential_distribution<double> expo(lam);
        std::uniform_real_distribution<double> unif(0.0, lam);
        auto& pts = b.paths[p];
        pts.reserve(steps + 8);
        PathPoint start;
        start.t = t;
        start.x = start.pre = x;
        pts.push_back(start);
        double cur = t;
        State X = x;
        double next_jump = t + expo(eng);
        auto euler = [&](double to) {
            double h = to - cur;
            State dw{};
            for (int i = 0; i < d; ++i) dw[i] = std::sqrt(h) * normal(eng);
            State a = c.drift(cur, X);
            Matrix s = c.diffusion(cur, X);
            State Y = X;
            for (int i = 0; i < d; ++i) {
                Y[i] += a[i] * h;
                for (int j = 0; j < d; ++j) Y[i] += s[2 * i + j] * dw[j];
            }
            X = Y;
            cur = to;
            return dw;
        };
        for (int j = 1; j <= steps; ++j) {
            double s_end = j == steps ? T : t + j * dt_sim;
            while (next_jump < s_end) {
                PathPoint q;
                q.dw = euler(next_jump);
                q.t = next_jump;
                q.pre = X;
                double u = unif(eng);
                int mark = 0;
                double acc = spec.marks.weights[0];
                while (u >= acc && mark + 1 < static_cast<int>(spec.marks.size())) acc += spec.marks.weights[++mark];
                State g = c.jump(next_jump, X, spec.marks.nodes[mark]);
                for (int i = 0; i < d; ++i) X[i] += g[i];
                q.x = X;
                q.mark = mark;
                q.step = false;
                pts.push_back(q);
                next_jump += expo(eng);
            }
            PathPoint q;
            q.dw = euler(s_end);
            q.t = s_end;
            q.x = q.pre = X;
            pts.push_back(q);
        }
    }
    return b;
}

struct EstimateCI {
    std::string name;
    double mean = 0.0;
    double stderr_ = 0.0;
    long n_paths = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline EstimateCI summarize(const std::vector<double>& xs, std::string name, std::uint64_t seed) {
    EstimateCI e;
    e.name = std::move(name);
    e.seed = seed;
    e.n_paths = static_cast<long>(xs.size());
    if (xs.empty()) return e;
    double s = 0.0;
    for (double v : xs) s += v;
    e.mean = s / xs.size();
    if (xs.size() > 1) {
        double q = 0.0;
        for (double v : xs) q += (v - e.mean) * (v - e.mean);
        e.stderr_ = std::sqrt(q / (xs.size() - 1) / xs.size());
    }
    return e;
}

}  // namespace detail

/// CSV `name,mean,stderr,n_paths,seed`.
inline void write_estimates_csv(std::ostream& os, const std::vector<EstimateCI>& es) {
    os << "name,mean,stderr,n_paths,seed\n";
    for (const EstimateCI& e : es)
        os << e.name << "," << format_double(e.mean) << "," << format_double(e.stderr_) << "," << e.n_paths << ","
           << e.seed << "\n";
}

/// E[sup_s |X_s|^p]
inline EstimateCI moment_check(const PathBundle& b, double p) {
    if (!(p >= 0.0)) throw Error("moment order must be non-negative");
    std::vector<double> vals;
    vals.reserve(b.paths.size());
    for (const auto& path : b.paths) {
        double m = 0.0;
        for (const PathPoint& q : path) m = std::max(m, std::pow(norm(q.x, b.dim), p));
        vals.push_back(m);
    }
    return detail::summarize(vals, "moment_p" + format_double(p), b.seed);
}

struct MomentStability {
    std::vector<State> starts;
    std::vector<EstimateCI> estimates;
    std::vector<double> ratios;  ///< E[sup|X|^p] / (1 + |x|^p)
    double spread = 0.0;         ///< max ratio / min ratio
    bool pass = false;
};

inline MomentStability moment_stability(const ProblemSpec& spec, double t, const std::vector<State>& starts, double p,
                                        double dt_sim, int n_paths, std::uint64_t seed, double factor = 3.0) {
    MomentStability out;
    out.starts = starts;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const State& x : starts) {
        EstimateCI e = moment_check(simulate_forward(spec, t, x, dt_sim, n_paths, seed), p);
        double r = e.mean / (1.0 + std::pow(norm(x, spec.dim), p));
        out.estimates.push_back(e);
        out.ratios.push_back(r);
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    out.spread = hi / lo;
    out.pass = std::isfinite(out.spread) && out.spread < factor;
    return out;
}

/// Field value and central-difference gradient at arbitrary (t, x).
class FieldEvaluator {
public:
    explicit FieldEvaluator(const ValueField& f) : f_(f), grads_(f.grid.dim, ValueField(f.grid)) {
        for (int ti = 0; ti <= f.grid.time_steps; ++ti)
            for (int k = 0; k < f.grid.node_count(); ++k) {
                State gk = gradient_at(f.grid, f.slices[ti].values, k);
                for (int a = 0; a < f.grid.dim; ++a) grads_[a].slices[ti].values[k] = gk[a];
            }
    }
    double value(double t, const State& x) const { return interpolate(f_, t, x); }
    State gradient(double t, const State& x) const {
        State g{};
        for (int a = 0; a < f_.grid.dim; ++a) g[a] = interpolate(grads_[a], t, x);
        return g;
    }

private:
    const ValueField& f_;
    std::vector<ValueField> grads_;
};

struct StopRule {
    enum class Kind { hit_h, fixed_t };
    Kind kind = Kind::fixed_t;
    double eps = 0.0;

    static StopRule hit_h(double e) { return {Kind::hit_h, e}; }
    static StopRule fixed_t() { return {Kind::fixed_t, 0.0}; }
};

struct ConsistencyResult {
    EstimateCI estimate;
    double field_value = 0.0;
    double allowance = 0.0;
    long excluded = 0;
    double excluded_fraction = 0.0;
    bool covered = false;
    bool pass = false;  ///< covered and exclusion at most 5%
};

/// Pathwise estimate of the penalized value: payoff at the stop, plus the integrated driver and penalty,
/// minus the realized jumps of the field along the path. y, z and V are read off the field.
inline ConsistencyResult pathwise_consistency(const ValueField& field, double n, const ProblemSpec& spec,
                                              const DriverSpec& drv, const PathBundle& b, StopRule rule,
                                              double allowance) {
    const CoefficientSet& c = spec.coeffs;
    const Grid& g = field.grid;
    const int d = spec.dim;
    const int m = static_cast<int>(spec.marks.size());
    const double T = spec.horizon;
    FieldEvaluator ev(field);
    std::vector<double> vals;
    vals.reserve(b.paths.size());
    long excluded = 0;
    for (const auto& path : b.paths) {
        double est = 0.0;
        bool out = false;
        for (std::size_t j = 0; j < path.size(); ++j) {
            const PathPoint& q = path[j];
            if (!g.inside(q.x)) {
                out = true;
                break;
            }
            if (q.mark >= 0) est -= ev.value(q.t, q.x) - ev.value(q.t, q.pre);
            double r = q.t;
            if (rule.kind == StopRule::Kind::hit_h && q.step && r < T &&
                ev.value(r, q.x) <= c.obstacle(r, q.x) + rule.eps) {
                est += c.obstacle(r, q.x);
                break;
            }
            if (j + 1 == path.size()) {
                est += c.terminal(q.x);
                break;
            }
            double dt = path[j + 1].t - r;
            double y = ev.value(r, q.x);
            State z = sigma_t_times(c.diffusion(r, q.x), ev.gradient(r, q.x), d);
            double f = drv.f_tilde(r, q.x, y, z);
            double pen = 0.0;
            for (int i = 0; i < m; ++i) {
                const Mark& e = spec.marks.nodes[i];
                State gam = c.jump(r, q.x, e);
                State to{q.x[0] + gam[0], q.x[1] + gam[1]};
                double V = ev.value(r, to) - y;
                double lam = spec.marks.weights[i];
                double gap = V + c.cost(r, q.x, e);
                if (gap < 0.0) pen += lam * -gap;
            }
            est += (f - n * pen) * dt;
        }
        if (out) ++excluded;
        else vals.push_back(est);
    }
    ConsistencyResult res;
    res.estimate = detail::summarize(vals, "consistency", b.seed);
    res.field_value = ev.value(b.t0, b.x0);
    res.allowance = allowance;
    res.excluded = excluded;
    res.excluded_fraction = static_cast<double>(excluded) / b.paths.size();
    res.covered = std::fabs(res.estimate.mean - res.field_value) <= 3.0 * res.estimate.stderr_ + allowance;
    res.pass = res.covered && res.excluded_fraction <= 0.05;
    return res;
}

struct DualGapTable {
    std::vector<double> n_list;
    std::vector<double> values;
    double double_value = 0.0;
    bool non_increasing = false;
    bool bounded_below = false;
    double final_gap = 0.0;
};

/// Penalized values at (t, x) for each n, next to the double-obstacle value.
inline DualGapTable dual_gap(const ProblemSpec& spec, const Grid& grid, const DriverSpec& drv,
                             const std::vector<double>& n_list, double t, const State& x, const SolveConfig& cfg = {}) {
    for (std::size_t i = 1; i < n_list.size(); ++i)
        if (!(n_list[i] > n_list[i - 1])) throw Error("dual_gap needs a strictly increasing n list");
    DualGapTable tab;
    tab.n_list = n_list;
    for (double n : n_list) tab.values.push_back(interpolate(solve_penalized(spec, grid, n, drv, cfg), t, x));
    tab.double_value = interpolate(solve_double(spec, grid, drv, cfg), t, x);
    tab.non_increasing = true;
    for (std::size_t i = 1; i < tab.values.size(); ++i)
        if (tab.values[i] > tab.values[i - 1] + 1e-8) tab.non_increasing = false;
    tab.bounded_below = true;
    for (double v : tab.values)
        if (v < tab.double_value - 1e-8) tab.bounded_below = false;
    tab.final_gap = tab.values.empty() ? 0.0 : tab.values.back() - tab.double_value;
    return tab;
}

struct DominationViolation {
    long path;
    double time;
    double X;
    double R;
};

struct DominationSummary {
    long n_paths = 0;
    double c_a_sigma = 0.0;
    double floor = 0.0;
    std::vector<DominationViolation> violations;
    double clamp_fraction = 0.0;
    double max_complementarity = 0.0;
    double min_margin = std::numeric_limits<double>::infinity();  ///< min over paths/times of R - |X|
    bool pass = false;
};

/// CSV `path,first_violation_time,X,R`.
inline void write_domination_csv(std::ostream& os, const DominationSummary& s) {
    os << "path,first_violation_time,X,R\n";
    for (const auto& v : s.violations)
        os << v.path << "," << format_double(v.time) << "," << format_double(v.X) << "," << format_double(v.R) << "\n";
}

/// sup of (|a| + |sigma|) / (1 + |x|) over [t, T] x [-radius, radius].
inline double fit_c_a_sigma(const ProblemSpec& spec, double t, double radius) {
    double C = 0.0;
    for (int it = 0; it <= 10; ++it) {
        double r = t + (spec.horizon - t) * it / 10.0;
        for (int i = 0; i <= 400; ++i) {
            State x{-radius + 2.0 * radius * i / 400.0, 0.0};
            double a = std::fabs(spec.coeffs.drift(r, x)[0]);
            double s = std::fabs(spec.coeffs.diffusion(r, x)[0]);
            C = std::max(C, (a + s) / (1.0 + std::fabs(x[0])));
        }
    }
    return C;
}

/// Couples X with the reflected dominating process on the same Brownian increments and checks |X| <= sqrt(Upsilon).
inline DominationSummary domination_check(const ProblemSpec& spec, double t, double x, double dt_sim, int n_paths,
                                          std::uint64_t seed, std::optional<double> c_a_sigma = std::nullopt,
                                          double fit_radius = 10.0) {
    if (spec.dim != 1) throw Error("domination_check is implemented for scalar state only");
    PathBundle b = simulate_forward(spec, t, State{x, 0.0}, dt_sim, n_paths, seed);
    DominationSummary s;
    s.n_paths = n_paths;
    const double C = c_a_sigma ? *c_a_sigma : fit_c_a_sigma(spec, t, std::max(fit_radius, 2.0 * std::fabs(x)));
    s.c_a_sigma = C;
    const double K = spec.k_gamma_radius;
    const double lvl = std::max(x * x, K * K);
    s.floor = lvl;
    long clamps = 0, controls = 0;
    for (std::size_t p = 0; p < b.paths.size(); ++p) {
        const auto& path = b.paths[p];
        double U = lvl;
        bool flagged = false;
        auto check = [&](double time, double X) {
            double R = std::sqrt(U);
            s.min_margin = std::min(s.min_margin, R - std::fabs(X));
            if (!flagged && std::fabs(X) > R + 1e-8) {
                s.violations.push_back({static_cast<long>(p), time, X, R});
                flagged = true;
            }
        };
        check(path[0].t, path[0].x[0]);
        for (std::size_t j = 1; j < path.size(); ++j) {
            const PathPoint& a = path[j - 1];
            const PathPoint& q = path[j];
            double h = q.t - a.t;
            double alpha = 0.0;
            if (C > 0.0) {
                double sig = spec.coeffs.diffusion(a.t, a.x)[0];
                double raw = a.x[0] * sig / (2.0 * C * (1.0 + U));
                alpha = std::clamp(raw, -1.0, 1.0);
                if (alpha != raw) ++clamps;
            }
            ++controls;
            double Uu = U + (4.0 * C + 2.0 * C * C) * (1.0 + U) * h + 4.0 * C * (1.0 + U) * alpha * q.dw[0];
            double dTheta = std::max(0.0, lvl - Uu);
            U = std::max(Uu, lvl);
            s.max_complementarity = std::max(s.max_complementarity, (U - lvl) * dTheta);
            check(q.t, q.x[0]);
        }
    }
    s.clamp_fraction = controls ? static_cast<double>(clamps) / controls : 0.0;
    s.pass = s.violations.empty();
    return s;
}

/// Cox-Ross-Rubinstein American put at spot = strike.
inline double binomial_oracle(double r, double s, double K, double T, int steps) {
    if (steps < 1) throw Error("binomial_oracle needs at least one step");
    const double spot = K;
    if (!(T > 0.0)) return std::max(K - spot, 0.0);
    const double dt = T / steps;
    if (!(s > 0.0)) {
        // deterministic path S e^{rt}; best discounted exercise
        double best = 0.0;
        for (int i = 0; i <= steps; ++i) {
            double ti = i * dt;
            best = std::max(best, std::exp(-r * ti) * std::max(K - spot * std::exp(r * ti), 0.0));
        }
        return best;
    }
    const double u = std::exp(s * std::sqrt(dt));
    const double dn = 1.0 / u;
    const double disc = std::exp(-r * dt);
    const double p = (std::exp(r * dt) - dn) / (u - dn);
    if (!(p > 0.0 && p < 1.0)) throw Error("binomial tree has no risk-neutral probability for these inputs");
    std::vector<double> v(steps + 1);
    for (int j = 0; j <= steps; ++j) v[j] = std::max(K - spot * std::pow(u, 2.0 * j - steps), 0.0);
    for (int i = steps - 1; i >= 0; --i)
        for (int j = 0; j <= i; ++j) {
            double cont = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
            v[j] = std::max(cont, K - spot * std::pow(u, 2.0 * j - i));
        }
    return v[0];
}

}  // namespace qvi
