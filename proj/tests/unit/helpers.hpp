#pragma once

#include <qvi/qvi.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace qvi::test {

// 1D ProblemSpec with constant coefficients; tests overwrite what they need.
inline ProblemSpec const_spec(double a = 0.0, double s = 0.0, double gamma = 0.0, double chi = 1e6, double h = -1e6,
                              double psi = 0.0) {
    ProblemSpec p;
    p.horizon = 1.0;
    p.dim = 1;
    p.coeffs.drift = [a](double, const State&) { return State{a, 0.0}; };
    p.coeffs.diffusion = [s](double, const State&) { return Matrix{s, 0.0, 0.0, 0.0}; };
    p.coeffs.jump = [gamma](double, const State&, const Mark&) { return State{gamma, 0.0}; };
    p.coeffs.cost = [chi](double, const State&, const Mark&) { return chi; };
    p.coeffs.obstacle = [h](double, const State&) { return h; };
    p.coeffs.terminal = [psi](const State&) { return psi; };
    p.marks = MarkSpace({Mark{0.0, 0.0}}, {1.0});
    return p;
}

inline DriverSpec const_driver(double f) {
    return DriverSpec::local([f](double, const State&, double, const State&) { return f; }, false, false);
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline RunSetup load_model(const std::string& name) {
    return parse_config(read_file(std::string(QVI_MODELS_DIR) + "/" + name));
}

inline Slice slice_of(const Grid& g, double (*f)(double)) {
    Slice s{std::vector<double>(g.node_count()), 0.0};
    for (int k = 0; k < g.node_count(); ++k) s.values[k] = f(g.node(k)[0]);
    return s;
}

}  // namespace qvi::test
