#pragma once

#include <qvi/error.hpp>
#include <qvi/grid.hpp>
#include <qvi/model.hpp>
#include <qvi/operators.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

namespace qvi {

struct SolveConfig {
    double theta = 1.0;
    double inner_tol = 1e-11;
    int inner_max = 20000;
    double damping = 1.0;  ///< relaxation factor of the inner sweeps
    double penalty_n = 0.0;

    void check() const {
        if (!(theta >= 0.0 && theta <= 1.0)) throw Error("theta must lie in [0,1]");
        if (!(inner_tol > 0.0)) throw Error("inner_tol must be positive");
        if (inner_max < 1) throw Error("inner_max must be at least 1");
        if (!(damping > 0.0 && damping <= 1.0)) throw Error("damping must lie in (0,1]");
        if (!(penalty_n >= 0.0)) throw Error("penalty_n must be non-negative");
    }
};

namespace detail {

enum class StepMode { penalized, double_obstacle };

/// Frozen-field slice matching time t, checked against the grid.
inline const Slice& frozen_slice(const DriverSpec& drv, const Grid& g, double t) {
    if (!drv.frozen) throw Error("frozen driver without a field");
    if (!drv.frozen->grid.same_as(g)) throw GridMismatchError("frozen field lives on a different grid");
    long k = std::lround(t / g.dt());
    if (k < 0 || k > g.time_steps) throw Error("time outside the frozen field");
    return drv.frozen->slices[static_cast<std::size_t>(k)];
}

/// One backward step by projected Gauss-Seidel on the fully implicit system.
/// Node update: w(x) <- max(h, U) where U solves the node equation with the penalty
/// (penalized mode) or U = min(pde value, impulse bound) (double mode).
inline Slice solve_step(const Slice& next, double t, const ProblemSpec& spec, const Grid& g,
                        const SolveConfig& cfg, const DriverSpec& drv, StepMode mode) {
    cfg.check();
    if (drv.mode == DriverSpec::Mode::local_plus_k_m)
        throw Error("time steps take a LOCAL or FROZEN driver; use the fixed-point module for k*M drivers");
    const int N = g.node_count();
    const int d = g.dim;
    const double dt = g.dt();
    const double th = cfg.theta;
    const double tn = next.t;
    const double n_pen = mode == StepMode::penalized ? cfg.penalty_n : 0.0;

    GeneratorMatrix L = assemble_generator(spec, g, t);
    JumpTable tab = build_jump_table(spec, g, t);
    std::vector<State> xs(N);
    std::vector<double> h(N), b(next.values);
    for (int k = 0; k < N; ++k) {
        xs[k] = g.node(k);
        h[k] = spec.coeffs.obstacle(t, xs[k]);
    }
    if (th < 1.0) {
        GeneratorMatrix Ln = assemble_generator(spec, g, tn);
        std::vector<double> ln = Ln.apply(next.values);
        for (int k = 0; k < N; ++k) b[k] += dt * (1.0 - th) * ln[k];
    }

    const bool frozen = drv.mode == DriverSpec::Mode::frozen;
    const Slice* gs = frozen ? &frozen_slice(drv, g, t) : nullptr;
    std::vector<double> kmg(N, 0.0);
    if (frozen && drv.k != 0.0) {
        Slice mg = apply_M(tab, *gs);
        for (int k = 0; k < N; ++k) kmg[k] = drv.k * mg.values[k];
    }
    std::vector<Matrix> sig;
    if (drv.uses_z) sig = diffusion_at_nodes(spec, g, t);

    std::vector<double> w(next.values);
    auto driver_at = [&](int k) {
        State z{};
        if (drv.uses_z) z = sigma_t_times(sig[k], gradient_at(g, w, k), d);
        double y = frozen ? gs->values[k] : w[k];
        return drv.f_tilde(t, xs[k], y, z) + kmg[k];
    };
    const bool fixed_driver = !drv.uses_z && (frozen || !drv.uses_y);
    std::vector<double> F;
    if (fixed_driver) {
        F.resize(N);
        for (int k = 0; k < N; ++k) F[k] = driver_at(k);
    }

    const int m = tab.marks;
    std::vector<double> beta(m), c(m);
    std::vector<int> order(m), idx(m);
    const double eps = 1e-12;
    double last = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < cfg.inner_max; ++sweep) {
        double maxdiff = 0.0;
        for (int k = 0; k < N; ++k) {
            double fk = fixed_driver ? F[k] : driver_at(k);
            double R = b[k] + dt * fk + th * dt * L.offdiag_dot(k, w);
            double diag = 1.0 - th * dt * L.diag[k];
            int act = 0;
            for (int i = 0; i < m; ++i) {
                const JumpTable::Entry& e = tab.at(k, i);
                double rest = 0.0;
                for (int j = 0; j < e.count; ++j)
                    if (e.idx[j] != k) rest += e.w[j] * w[e.idx[j]];
                double bi = 1.0 - e.self;
                double ci = rest + e.cost;
                if (bi > eps) {
                    beta[act] = bi;
                    c[act] = ci;
                    order[act] = i;
                    ++act;
                } else if (n_pen > 0.0) {
                    R -= dt * n_pen * tab.lambda[i] * std::max(0.0, bi * w[k] - ci);
                }
            }
            double u = R / diag;
            if (mode == StepMode::double_obstacle) {
                for (int a = 0; a < act; ++a) u = std::min(u, c[a] / beta[a]);
            } else if (n_pen > 0.0 && act > 0) {
                // breakpoints c/beta in ascending order; activate terms while u passes them
                for (int a = 0; a < act; ++a) idx[a] = a;
                std::sort(idx.begin(), idx.begin() + act,
                          [&](int p, int q) { return c[p] / beta[p] < c[q] / beta[q]; });
                double A = diag, B = R;
                for (int p = 0; p < act; ++p) {
                    int a = idx[p];
                    if (u <= c[a] / beta[a]) break;
                    double s = dt * n_pen * tab.lambda[order[a]];
                    A += s * beta[a];
                    B += s * c[a];
                    u = B / A;
                }
            }
            double wn = std::max(h[k], u);
            if (cfg.damping < 1.0) wn = std::max(h[k], w[k] + cfg.damping * (wn - w[k]));
            maxdiff = std::max(maxdiff, std::fabs(wn - w[k]));
            w[k] = wn;
        }
        last = maxdiff;
        if (maxdiff <= cfg.inner_tol) return Slice{std::move(w), t};
        if (!std::isfinite(maxdiff)) break;
    }
    throw StepError("inner iteration at t = " + format_double(t) + " stopped at change " + format_double(last) +
                        " > inner_tol; reduce dt, increase inner_max, or run check_no_free_loop on the model",
                    t, last);
}

inline ValueField solve_field(const ProblemSpec& spec, const Grid& g, const DriverSpec& drv, const SolveConfig& cfg,
                              StepMode mode) {
    spec.check();
    g.check_against(spec);
    ValueField f(g);
    Slice& term = f.slices[g.time_steps];
    for (int k = 0; k < g.node_count(); ++k) term.values[k] = spec.coeffs.terminal(g.node(k));
    for (int k = g.time_steps - 1; k >= 0; --k) f.slices[k] = solve_step(f.slices[k + 1], g.time(k), spec, g, cfg, drv, mode);
    return f;
}

}  // namespace detail

inline Slice step_penalized(const Slice& next, double t, const ProblemSpec& spec, const Grid& g, const SolveConfig& cfg,
                            const DriverSpec& drv) {
    return detail::solve_step(next, t, spec, g, cfg, drv, detail::StepMode::penalized);
}

inline Slice step_double(const Slice& next, double t, const ProblemSpec& spec, const Grid& g, const SolveConfig& cfg,
                         const DriverSpec& drv) {
    return detail::solve_step(next, t, spec, g, cfg, drv, detail::StepMode::double_obstacle);
}

inline ValueField solve_penalized(const ProblemSpec& spec, const Grid& g, double n, const DriverSpec& drv,
                                  SolveConfig cfg = {}) {
    cfg.penalty_n = n;
    return detail::solve_field(spec, g, drv, cfg, detail::StepMode::penalized);
}

inline ValueField solve_double(const ProblemSpec& spec, const Grid& g, const DriverSpec& drv,
                               const SolveConfig& cfg = {}) {
    return detail::solve_field(spec, g, drv, cfg, detail::StepMode::double_obstacle);
}

/// Smallest C with |v| <= C (1 + |x|^p) over the whole field.
inline double growth_constant(const ValueField& f, double p) {
    double C = 0.0;
    for (const Slice& s : f.slices)
        for (int k = 0; k < f.grid.node_count(); ++k)
            C = std::max(C, std::fabs(s.values[k]) / (1.0 + std::pow(norm(f.grid.node(k), f.grid.dim), p)));
    return C;
}

struct Residuals {
    struct Entry {
        int time_index;
        int node;
        double value;     ///< min{obstacle, max{upper, pde}}
        double obstacle;  ///< v - h
        double upper;     ///< v - Mv
        double pde;       ///< -dv/dt - Lv - f
    };
    Grid grid;
    std::vector<Entry> entries;
    double sup = 0.0;
    double l2 = 0.0;

    double min_value() const {
        double m = std::numeric_limits<double>::infinity();
        for (const Entry& e : entries) m = std::min(m, e.value);
        return m;
    }
};

/// Discrete min{v-h, max{v-Mv, -dv/dt - Lv - f}} at interior nodes for t_1..t_{N-1}, using
/// the backward difference (v(t_{k-1}) - v(t_k))/dt for -dv/dt.
inline Residuals residual_qvi(const ValueField& field, const ProblemSpec& spec, const Grid& g, const DriverSpec& drv) {
    if (!field.grid.same_as(g)) throw GridMismatchError("field and grid differ");
    Residuals res;
    res.grid = g;
    const int N = g.node_count();
    const double dt = g.dt();
    double acc = 0.0;
    std::vector<State> xs(N);
    for (int k = 0; k < N; ++k) xs[k] = g.node(k);
    for (int ti = 1; ti < g.time_steps; ++ti) {
        double t = g.time(ti);
        const Slice& v = field.slices[ti];
        const Slice& vp = field.slices[ti - 1];
        JumpTable tab = build_jump_table(spec, g, t);
        Slice mv = apply_M(tab, v);
        std::vector<double> lv = assemble_generator(spec, g, t).apply(v.values);
        std::vector<Matrix> sig = diffusion_at_nodes(spec, g, t);
        const Slice* gsl = nullptr;
        if (drv.mode == DriverSpec::Mode::frozen) gsl = &detail::frozen_slice(drv, g, t);
        else if (drv.mode == DriverSpec::Mode::local_plus_k_m) gsl = &v;
        std::vector<double> kmg(N, 0.0);
        if (gsl && drv.k != 0.0) {
            Slice mg = gsl == &v ? mv : apply_M(tab, *gsl);
            for (int k = 0; k < N; ++k) kmg[k] = drv.k * mg.values[k];
        }
        for (int k = 0; k < N; ++k) {
            if (g.on_boundary(k)) continue;
            State z = sigma_t_times(sig[k], gradient_at(g, v.values, k), g.dim);
            double y = drv.mode == DriverSpec::Mode::frozen ? gsl->values[k] : v.values[k];
            double f = drv.f_tilde(t, xs[k], y, z) + kmg[k];
            Residuals::Entry e;
            e.time_index = ti;
            e.node = k;
            e.obstacle = v.values[k] - spec.coeffs.obstacle(t, xs[k]);
            e.upper = v.values[k] - mv.values[k];
            e.pde = (vp.values[k] - v.values[k]) / dt - lv[k] - f;
            e.value = std::min(e.obstacle, std::max(e.upper, e.pde));
            res.sup = std::max(res.sup, std::fabs(e.value));
            acc += e.value * e.value;
            res.entries.push_back(e);
        }
    }
    res.l2 = std::sqrt(acc * std::pow(g.dx(), g.dim) * dt);
    return res;
}

/// CSV `t,x1[,x2],residual` over the evaluated nodes.
inline void write_residual_csv(std::ostream& os, const Residuals& r) {
    const Grid& g = r.grid;
    os << "t,x1" << (g.dim > 1 ? ",x2" : "") << ",residual\n";
    for (const Residuals::Entry& e : r.entries) {
        os << format_double(g.time(e.time_index)) << ",";
        write_coords(os, g, e.node);
        os << "," << format_double(e.value) << "\n";
    }
}

struct SupersolutionResult {
    double min_residual = 0.0;
    double tol = 0.0;
    bool pass = false;
};

/// Adds theta_p e^{-varpi t} (1 + ((|x| - K_Gamma)^+)^{2 varrho + 2}) and checks the residual stays >= -tol.
inline SupersolutionResult perturbed_supersolution_check(const ValueField& field, double theta_p, double varpi,
                                                         double varrho, const ProblemSpec& spec, const Grid& g,
                                                         const DriverSpec& drv, double tol) {
    ValueField w = field;
    for (int ti = 0; ti <= g.time_steps; ++ti) {
        double decay = theta_p * std::exp(-varpi * g.time(ti));
        for (int k = 0; k < g.node_count(); ++k) {
            double r = std::max(0.0, norm(g.node(k), g.dim) - spec.k_gamma_radius);
            w.slices[ti].values[k] += decay * (1.0 + std::pow(r, 2.0 * varrho + 2.0));
        }
    }
    SupersolutionResult out;
    out.tol = tol;
    out.min_residual = residual_qvi(w, spec, g, drv).min_value();
    out.pass = out.min_residual >= -tol;
    return out;
}

struct OrderingStats {
    double max_diff = -std::numeric_limits<double>::infinity();  ///< max of field1 - field2
    double violation_fraction = 0.0;
    std::size_t violations = 0;
    std::size_t nodes = 0;
};

/// Nodewise statistics of field1 <= field2 + 1e-8.
inline OrderingStats compare_fields(const ValueField& a, const ValueField& b) {
    if (!a.grid.same_as(b.grid)) throw GridMismatchError("compare_fields needs fields on the same grid");
    OrderingStats s;
    for (std::size_t ti = 0; ti < a.slices.size(); ++ti)
        for (std::size_t k = 0; k < a.slices[ti].values.size(); ++k) {
            double d = a.slices[ti].values[k] - b.slices[ti].values[k];
            s.max_diff = std::max(s.max_diff, d);
            if (d > 1e-8) ++s.violations;
            ++s.nodes;
        }
    s.violation_fraction = s.nodes ? static_cast<double>(s.violations) / s.nodes : 0.0;
    return s;
}

/// Sup-norm distance between two fields on the same grid.
inline double sup_distance(const ValueField& a, const ValueField& b) {
    if (!a.grid.same_as(b.grid)) throw GridMismatchError("sup_distance needs fields on the same grid");
    double m = 0.0;
    for (std::size_t ti = 0; ti < a.slices.size(); ++ti)
        for (std::size_t k = 0; k < a.slices[ti].values.size(); ++k)
            m = std::max(m, std::fabs(a.slices[ti].values[k] - b.slices[ti].values[k]));
    return m;
}

}  // namespace qvi
