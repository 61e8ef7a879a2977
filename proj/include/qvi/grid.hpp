#pragma once

#include <qvi/error.hpp>
#include <qvi/expr.hpp>
#include <qvi/model.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qvi {

/// Uniform tensor grid on [-L, L]^d with N_t backward time steps on [0, T].
struct Grid {
    int dim = 1;
    double box_radius = 1.0;
    int nodes_per_axis = 3;
    int time_steps = 1;
    double horizon = 1.0;

    Grid() = default;
    Grid(int d, double L, int n, int nt, double T)
        : dim(d), box_radius(L), nodes_per_axis(n), time_steps(nt), horizon(T) {
        if (d != 1 && d != 2) throw Error("grid dimension must be 1 or 2");
        if (!(L > 0.0)) throw Error("box radius must be positive");
        if (n < 3) throw Error("nodes_per_axis must be at least 3");
        if (nt < 1) throw Error("time_steps must be at least 1");
        if (!(T > 0.0)) throw Error("horizon must be positive");
    }

    double dx() const { return 2.0 * box_radius / (nodes_per_axis - 1); }
    double dt() const { return horizon / time_steps; }
    int node_count() const { return dim == 1 ? nodes_per_axis : nodes_per_axis * nodes_per_axis; }
    double time(int k) const { return k == time_steps ? horizon : k * dt(); }

    /// Node coordinate along one axis; the last node hits the corner exactly.
    double coord(int i) const {
        if (i == nodes_per_axis - 1) return box_radius;
        return -box_radius + i * dx();
    }

    int axis_index(int k, int axis) const { return axis == 0 ? k % nodes_per_axis : k / nodes_per_axis; }

    State node(int k) const {
        State x{};
        x[0] = coord(axis_index(k, 0));
        if (dim > 1) x[1] = coord(axis_index(k, 1));
        return x;
    }

    bool on_boundary(int k) const {
        for (int a = 0; a < dim; ++a) {
            int i = axis_index(k, a);
            if (i == 0 || i == nodes_per_axis - 1) return true;
        }
        return false;
    }

    bool inside(const State& x) const {
        for (int a = 0; a < dim; ++a)
            if (std::fabs(x[a]) > box_radius) return false;
        return true;
    }

    bool same_as(const Grid& o) const {
        return dim == o.dim && box_radius == o.box_radius && nodes_per_axis == o.nodes_per_axis &&
               time_steps == o.time_steps && horizon == o.horizon;
    }

    /// The box must contain the impulse barrier ball.
    void check_against(const ProblemSpec& spec) const {
        if (dim != spec.dim) throw GridMismatchError("grid and model dimensions differ");
        if (horizon != spec.horizon) throw GridMismatchError("grid and model horizons differ");
        if (!(box_radius > spec.k_gamma_radius))
            throw Error("box radius " + format_double(box_radius) + " must exceed K_gamma " +
                        format_double(spec.k_gamma_radius));
    }
};

struct Slice {
    std::vector<double> values;
    double t = 0.0;
};

struct ValueField {
    Grid grid;
    std::vector<Slice> slices;  ///< index 0..N_t

    ValueField() = default;
    explicit ValueField(const Grid& g) : grid(g), slices(g.time_steps + 1) {
        for (int k = 0; k <= g.time_steps; ++k) {
            slices[k].t = g.time(k);
            slices[k].values.assign(g.node_count(), 0.0);
        }
    }

    double max_abs() const {
        double m = 0.0;
        for (const Slice& s : slices)
            for (double v : s.values) m = std::max(m, std::fabs(v));
        return m;
    }
};

/// Multilinear interpolation; linear extrapolation from the edge cell outside the box.
inline double interpolate(const Grid& g, const std::vector<double>& v, const State& x) {
    const int n = g.nodes_per_axis;
    const double dx = g.dx();
    int i[2] = {0, 0};
    double w[2] = {0.0, 0.0};
    for (int a = 0; a < g.dim; ++a) {
        double s = (x[a] + g.box_radius) / dx;
        int c = static_cast<int>(std::floor(s));
        c = std::clamp(c, 0, n - 2);
        i[a] = c;
        w[a] = s - c;
    }
    if (g.dim == 1) return (1.0 - w[0]) * v[i[0]] + w[0] * v[i[0] + 1];
    int k = i[0] + n * i[1];
    return (1.0 - w[1]) * ((1.0 - w[0]) * v[k] + w[0] * v[k + 1]) +
           w[1] * ((1.0 - w[0]) * v[k + n] + w[0] * v[k + n + 1]);
}

inline double interpolate(const Grid& g, const Slice& s, const State& x) { return interpolate(g, s.values, x); }

/// Value at an arbitrary time: linear between neighbouring slices.
inline double interpolate(const ValueField& f, double t, const State& x) {
    const Grid& g = f.grid;
    double s = std::clamp(t / g.dt(), 0.0, static_cast<double>(g.time_steps));
    int k = std::min(static_cast<int>(std::floor(s)), g.time_steps - 1);
    double w = s - k;
    double a = interpolate(g, f.slices[k].values, x);
    if (w == 0.0) return a;
    return (1.0 - w) * a + w * interpolate(g, f.slices[k + 1].values, x);
}

inline void write_coords(std::ostream& os, const Grid& g, int k) {
    State x = g.node(k);
    os << format_double(x[0]);
    if (g.dim > 1) os << "," << format_double(x[1]);
}

/// CSV `t,x1[,x2],v`, row-major by time then node index.
inline void write_field_csv(std::ostream& os, const ValueField& f, const char* value_name = "v") {
    const Grid& g = f.grid;
    os << "t,x1" << (g.dim > 1 ? ",x2," : ",") << value_name << "\n";
    for (const Slice& s : f.slices)
        for (int k = 0; k < g.node_count(); ++k) {
            os << format_double(s.t) << ",";
            write_coords(os, g, k);
            os << "," << format_double(s.values[k]) << "\n";
        }
}

/// Reads a field written by write_field_csv onto the given grid.
inline ValueField read_field_csv(std::istream& is, const Grid& g) {
    ValueField f(g);
    std::string line;
    std::getline(is, line);
    const int per = g.node_count();
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto pos = line.rfind(',');
        if (pos == std::string::npos) throw Error("malformed field CSV line");
        double v = std::stod(line.substr(pos + 1));
        std::size_t k = row / per, node = row % per;
        if (k >= f.slices.size()) throw GridMismatchError("field CSV has more rows than the grid");
        f.slices[k].values[node] = v;
        ++row;
    }
    if (row != f.slices.size() * static_cast<std::size_t>(per))
        throw GridMismatchError("field CSV row count does not match the grid");
    return f;
}

}  // namespace qvi
