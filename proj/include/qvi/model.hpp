#pragma once

#include <qvi/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace qvi {

/// Point in state space. Only the first d components are used; the rest stay zero.
using State = std::array<double, 2>;
/// d x d matrix stored row-major in a 2 x 2 block.
using Matrix = std::array<double, 4>;
using Mark = State;

inline double norm(const State& x, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += x[i] * x[i];
    return std::sqrt(s);
}

/// Finite quadrature of the mark measure.
struct MarkSpace {
    std::vector<Mark> nodes;
    std::vector<double> weights;

    MarkSpace() = default;
    MarkSpace(std::vector<Mark> n, std::vector<double> w) : nodes(std::move(n)), weights(std::move(w)) {
        if (nodes.empty()) throw Error("mark space must have at least one node");
        if (nodes.size() != weights.size()) throw Error("mark nodes and weights differ in length");
        for (double x : weights)
            if (!(x > 0.0) || !std::isfinite(x)) throw Error("mark weights must be positive and finite");
    }

    std::size_t size() const { return nodes.size(); }
    double total() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }
};

struct CoefficientSet {
    std::function<State(double t, const State& x)> drift;
    std::function<Matrix(double t, const State& x)> diffusion;
    std::function<State(double t, const State& x, const Mark& e)> jump;
    std::function<double(double t, const State& x, const Mark& e)> cost;
    std::function<double(double t, const State& x)> obstacle;
    std::function<double(const State& x)> terminal;
};

struct LipschitzConstants {
    double k_f = 1.0;
    double k_gamma = 1.0;
    double k_a_sigma = 1.0;
};

struct ProblemSpec {
    double horizon = 1.0;
    int dim = 1;
    CoefficientSet coeffs;
    MarkSpace marks;
    double k_gamma_radius = 1.0;  ///< K_Gamma
    double growth_rho = 2.0;
    LipschitzConstants lipschitz;
    double loop_delta1 = 0.1;
    double loop_delta2 = 0.1;

    void check() const {
        if (!(horizon > 0.0)) throw Error("horizon must be positive");
        if (dim != 1 && dim != 2) throw Error("dimension must be 1 or 2");
        if (!(k_gamma_radius > 0.0)) throw Error("k_gamma must be positive");
        if (!(loop_delta1 > 0.0) || !(loop_delta2 > 0.0)) throw Error("loop deltas must be positive");
        if (marks.size() == 0) throw Error("mark space is empty");
        const CoefficientSet& c = coeffs;
        if (!c.drift || !c.diffusion || !c.jump || !c.cost || !c.obstacle || !c.terminal)
            throw Error("coefficient set is incomplete");
    }

    /// Combined payoff: h before the horizon, psi at it.
    double payoff(double t, const State& x) const {
        return t < horizon ? coeffs.obstacle(t, x) : coeffs.terminal(x);
    }
};

struct ValueField;

/// Local driver f~(t, x, y, z) plus the non-local composition mode.
struct DriverSpec {
    enum class Mode { local, local_plus_k_m, frozen };

    std::function<double(double t, const State& x, double y, const State& z)> f_tilde;
    Mode mode = Mode::local;
    double k = 0.0;
    std::shared_ptr<const ValueField> frozen;
    /// Lets the solver skip re-evaluation inside sweeps when f~ ignores y or z.
    bool uses_y = true;
    bool uses_z = true;

    static DriverSpec local(decltype(f_tilde) f, bool uses_y = true, bool uses_z = true) {
        DriverSpec d;
        d.f_tilde = std::move(f);
        d.uses_y = uses_y;
        d.uses_z = uses_z;
        return d;
    }

    DriverSpec with_k_m(double kk) const {
        DriverSpec d = *this;
        d.mode = Mode::local_plus_k_m;
        d.k = kk;
        d.frozen.reset();
        return d;
    }

    DriverSpec frozen_at(std::shared_ptr<const ValueField> g, double kk) const {
        DriverSpec d = *this;
        d.mode = Mode::frozen;
        d.k = kk;
        d.frozen = std::move(g);
        return d;
    }

    DriverSpec as_local() const {
        DriverSpec d = *this;
        d.mode = Mode::local;
        d.k = 0.0;
        d.frozen.reset();
        return d;
    }
};

}  // namespace qvi
