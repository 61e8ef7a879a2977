#pragma once

#include <qvi/error.hpp>
#include <qvi/solver.hpp>

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

namespace qvi {

struct IterationTrace {
    struct Entry {
        int k;
        double diff;
        double ratio;  ///< NaN for the first iteration
        double seconds;
    };
    std::vector<Entry> entries;
    double final_residual = std::numeric_limits<double>::quiet_NaN();
};

/// CSV `k,diff,ratio,seconds`.
inline void write_trace_csv(std::ostream& os, const IterationTrace& tr) {
    os << "k,diff,ratio,seconds\n";
    for (const auto& e : tr.entries)
        os << e.k << "," << format_double(e.diff) << "," << format_double(e.ratio) << "," << format_double(e.seconds)
           << "\n";
}

class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& msg, IterationTrace tr) : Error(msg), trace_(std::move(tr)) {}
    const IterationTrace& trace() const { return trace_; }

private:
    IterationTrace trace_;
};

struct PicardResult {
    ValueField field;
    IterationTrace trace;
};

namespace detail {

inline void require_k_m(const DriverSpec& drv) {
    if (drv.mode != DriverSpec::Mode::local_plus_k_m) throw Error("fixed-point iteration needs a LOCAL_PLUS_K_M driver");
}

/// Phi(g): solve_double with the driver frozen at g.
inline ValueField apply_phi(const ValueField& g, const ProblemSpec& spec, const Grid& grid, const DriverSpec& drv,
                            const SolveConfig& cfg) {
    auto frozen = std::make_shared<const ValueField>(g);
    return solve_double(spec, grid, drv.frozen_at(frozen, drv.k), cfg);
}

}  // namespace detail

/// v_0 = 0; v_k = Phi(v_{k-1}) until sup |v_k - v_{k-1}| <= tol.
inline PicardResult picard_solve(const ProblemSpec& spec, const Grid& grid, const DriverSpec& drv, double tol, int kmax,
                                 const SolveConfig& cfg = {}) {
    detail::require_k_m(drv);
    if (!(tol > 0.0) || kmax < 1) throw Error("picard_solve needs tol > 0 and kmax >= 1");
    ValueField v(grid);
    IterationTrace tr;
    double prev = std::numeric_limits<double>::quiet_NaN();
    for (int k = 1; k <= kmax; ++k) {
        auto t0 = std::chrono::steady_clock::now();
        ValueField next = detail::apply_phi(v, spec, grid, drv, cfg);
        double d = sup_distance(next, v);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        tr.entries.push_back({k, d, k == 1 ? std::numeric_limits<double>::quiet_NaN() : d / prev, secs});
        v = std::move(next);
        prev = d;
        if (d <= tol) return {std::move(v), std::move(tr)};
    }
    throw NonConvergenceError("picard iteration did not reach tol " + format_double(tol) + " within " +
                                  std::to_string(kmax) + " iterations",
                              std::move(tr));
}

/// sup |Phi(field) - field|
inline double fixed_point_residual(const ValueField& field, const ProblemSpec& spec, const Grid& grid,
                                   const DriverSpec& drv, const SolveConfig& cfg = {}) {
    detail::require_k_m(drv);
    return sup_distance(detail::apply_phi(field, spec, grid, drv, cfg), field);
}

}  // namespace qvi
