#pragma once

#include <qvi/grid.hpp>
#include <qvi/model.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace qvi {

/// Interpolation stencil of x + gamma(t, x, e_i) for every node and mark, plus the cost.
struct JumpTable {
    struct Entry {
        std::array<int, 4> idx{};
        std::array<double, 4> w{};
        int count = 0;
        double cost = 0.0;
        double self = 0.0;  ///< summed weight that falls on the source node itself
    };

    int nodes = 0;
    int marks = 0;
    std::vector<Entry> entries;  ///< node-major
    std::vector<double> lambda;

    const Entry& at(int k, int i) const { return entries[static_cast<std::size_t>(k) * marks + i]; }

    double target(const std::vector<double>& v, int k, int i) const {
        const Entry& e = at(k, i);
        double s = 0.0;
        for (int j = 0; j < e.count; ++j) s += e.w[j] * v[e.idx[j]];
        return s;
    }

    /// v(x + gamma) + chi at node k for mark i.
    double jump_value(const std::vector<double>& v, int k, int i) const { return target(v, k, i) + at(k, i).cost; }
};

inline JumpTable build_jump_table(const ProblemSpec& spec, const Grid& g, double t) {
    JumpTable tab;
    tab.nodes = g.node_count();
    tab.marks = static_cast<int>(spec.marks.size());
    tab.lambda = spec.marks.weights;
    tab.entries.resize(static_cast<std::size_t>(tab.nodes) * tab.marks);
    const int n = g.nodes_per_axis;
    const double dx = g.dx();
    for (int k = 0; k < tab.nodes; ++k) {
        State x = g.node(k);
        for (int i = 0; i < tab.marks; ++i) {
            const Mark& e = spec.marks.nodes[i];
            State gam = spec.coeffs.jump(t, x, e);
            JumpTable::Entry& en = tab.entries[static_cast<std::size_t>(k) * tab.marks + i];
            en.cost = spec.coeffs.cost(t, x, e);
            int c[2] = {0, 0};
            double w[2] = {0.0, 0.0};
            for (int a = 0; a < g.dim; ++a) {
                double s = (x[a] + gam[a] + g.box_radius) / dx;
                int ci = std::clamp(static_cast<int>(std::floor(s)), 0, n - 2);
                c[a] = ci;
                w[a] = s - ci;
            }
            if (g.dim == 1) {
                en.count = 2;
                en.idx = {c[0], c[0] + 1, 0, 0};
                en.w = {1.0 - w[0], w[0], 0.0, 0.0};
            } else {
                int b = c[0] + n * c[1];
                en.count = 4;
                en.idx = {b, b + 1, b + n, b + n + 1};
                en.w = {(1.0 - w[1]) * (1.0 - w[0]), (1.0 - w[1]) * w[0], w[1] * (1.0 - w[0]), w[1] * w[0]};
            }
            for (int j = 0; j < en.count; ++j)
                if (en.idx[j] == k) en.self += en.w[j];
        }
    }
    return tab;
}

inline Slice apply_M(const JumpTable& tab, const Slice& s) {
    Slice out{std::vector<double>(s.values.size()), s.t};
    for (int k = 0; k < tab.nodes; ++k) {
        double m = tab.jump_value(s.values, k, 0);
        for (int i = 1; i < tab.marks; ++i) m = std::min(m, tab.jump_value(s.values, k, i));
        out.values[k] = m;
    }
    return out;
}

/// Intervention operator: min over marks of slice(x + gamma) + chi at every node.
inline Slice apply_M(const Slice& s, double t, const ProblemSpec& spec, const Grid& g) {
    Slice out = apply_M(build_jump_table(spec, g, t), s);
    out.t = t;
    return out;
}

inline Slice penalty(const JumpTable& tab, const Slice& s, double n) {
    Slice out{std::vector<double>(s.values.size(), 0.0), s.t};
    if (n == 0.0) return out;
    for (int k = 0; k < tab.nodes; ++k) {
        double acc = 0.0;
        for (int i = 0; i < tab.marks; ++i) {
            double gap = tab.jump_value(s.values, k, i) - s.values[k];
            if (gap < 0.0) acc += tab.lambda[i] * -gap;
        }
        out.values[k] = n * acc;
    }
    return out;
}

/// n * sum_i lambda_i * (slice(x+gamma_i) + chi_i - slice(x))^-
inline Slice penalty(const Slice& s, double t, double n, const ProblemSpec& spec, const Grid& g) {
    Slice out = penalty(build_jump_table(spec, g, t), s, n);
    out.t = t;
    return out;
}

/// Discrete generator in compressed rows, diagonal kept separately.
struct GeneratorMatrix {
    std::vector<int> row_ptr;
    std::vector<int> col;
    std::vector<double> val;  ///< off-diagonal entries
    std::vector<double> diag;

    double offdiag_dot(int k, const std::vector<double>& v) const {
        double s = 0.0;
        for (int j = row_ptr[k]; j < row_ptr[k + 1]; ++j) s += val[j] * v[col[j]];
        return s;
    }

    std::vector<double> apply(const std::vector<double>& v) const {
        std::vector<double> out(v.size());
        for (std::size_t k = 0; k < v.size(); ++k)
            out[k] = diag[k] * v[k] + offdiag_dot(static_cast<int>(k), v);
        return out;
    }
};

inline std::vector<Matrix> diffusion_at_nodes(const ProblemSpec& spec, const Grid& g, double t) {
    std::vector<Matrix> out(g.node_count());
    for (int k = 0; k < g.node_count(); ++k) out[k] = spec.coeffs.diffusion(t, g.node(k));
    return out;
}

/// Central second differences and upwind drift. Boundary rows drop the normal second
/// derivative and cross terms and keep only inward-pointing drift, so I - c L stays an M-matrix.
inline GeneratorMatrix assemble_generator(const ProblemSpec& spec, const Grid& g, double t) {
    const int N = g.node_count();
    const int n = g.nodes_per_axis;
    const int d = g.dim;
    const double dx = g.dx();
    const double dx2 = dx * dx;
    GeneratorMatrix L;
    L.row_ptr.reserve(N + 1);
    L.diag.assign(N, 0.0);
    L.row_ptr.push_back(0);
    std::vector<std::pair<int, double>> row;
    for (int k = 0; k < N; ++k) {
        row.clear();
        State x = g.node(k);
        State a = spec.coeffs.drift(t, x);
        Matrix s = spec.coeffs.diffusion(t, x);
        // (sigma sigma^T)_{ij}
        double q[2][2] = {{0, 0}, {0, 0}};
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                for (int m = 0; m < d; ++m) q[i][j] += s[2 * i + m] * s[2 * j + m];
        int idx[2] = {g.axis_index(k, 0), d > 1 ? g.axis_index(k, 1) : 0};
        int stride[2] = {1, n};
        bool interior[2] = {true, true};
        for (int ax = 0; ax < d; ++ax) {
            int i = idx[ax];
            interior[ax] = i > 0 && i < n - 1;
            if (interior[ax]) {
                double c = 0.5 * q[ax][ax] / dx2;
                row.emplace_back(k - stride[ax], c);
                row.emplace_back(k + stride[ax], c);
                L.diag[k] -= 2.0 * c;
            }
            double b = a[ax];
            if (b > 0.0 && i < n - 1) {
                row.emplace_back(k + stride[ax], b / dx);
                L.diag[k] -= b / dx;
            } else if (b < 0.0 && i > 0) {
                row.emplace_back(k - stride[ax], -b / dx);
                L.diag[k] += b / dx;
            }
        }
        if (d == 2 && interior[0] && interior[1] && q[0][1] != 0.0) {
            double c = q[0][1] / (4.0 * dx2);
            row.emplace_back(k + 1 + n, c);
            row.emplace_back(k - 1 - n, c);
            row.emplace_back(k + 1 - n, -c);
            row.emplace_back(k - 1 + n, -c);
        }
        std::sort(row.begin(), row.end());
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (!L.col.empty() && static_cast<int>(L.col.size()) > L.row_ptr.back() && L.col.back() == row[j].first)
                L.val.back() += row[j].second;
            else {
                L.col.push_back(row[j].first);
                L.val.push_back(row[j].second);
            }
        }
        L.row_ptr.push_back(static_cast<int>(L.col.size()));
    }
    return L;
}

inline Slice generator_apply(const Slice& s, double t, const ProblemSpec& spec, const Grid& g) {
    return Slice{assemble_generator(spec, g, t).apply(s.values), t};
}

/// Central-difference gradient at node k (one-sided at the box edge).
inline State gradient_at(const Grid& g, const std::vector<double>& v, int k) {
    State out{};
    const int n = g.nodes_per_axis;
    const double dx = g.dx();
    int stride[2] = {1, n};
    for (int ax = 0; ax < g.dim; ++ax) {
        int i = g.axis_index(k, ax);
        if (i == 0) out[ax] = (v[k + stride[ax]] - v[k]) / dx;
        else if (i == n - 1) out[ax] = (v[k] - v[k - stride[ax]]) / dx;
        else out[ax] = (v[k + stride[ax]] - v[k - stride[ax]]) / (2.0 * dx);
    }
    return out;
}

/// z = sigma^T grad
inline State sigma_t_times(const Matrix& s, const State& p, int d) {
    State z{};
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) z[j] += s[2 * i + j] * p[i];
    return z;
}

}  // namespace qvi
