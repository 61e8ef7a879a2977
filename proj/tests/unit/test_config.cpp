#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace qvi;

namespace {

const char* kZero = R"doc(# zero model
[model]
dimension = 1
horizon = 1
drift = "0"
sigma = "0"
jump = "0"
cost = "1"
obstacle = "0"
terminal = "abs(x1)"
driver = "0"
marks = [(0, 1)]
k_gamma = 1

[grid]
box_radius = 2
nodes = 21
time_steps = 10
)doc";

std::string with_line(const std::string& doc, const std::string& after, const std::string& line) {
    std::string out = doc;
    auto p = out.find(after);
    out.insert(out.find('\n', p) + 1, line + "\n");
    return out;
}

}  // namespace

TEST(Config, MinimalZeroModel) {
    RunSetup s = parse_config(kZero);
    EXPECT_EQ(s.spec.dim, 1);
    ASSERT_TRUE(s.grid);
    EXPECT_EQ(s.grid->nodes_per_axis, 21);
    State x{0.3, 0};
    EXPECT_EQ(s.spec.coeffs.drift(0.2, x)[0], 0.0);
    EXPECT_EQ(s.spec.coeffs.terminal(State{-1.5, 0}), 1.5);
    EXPECT_FALSE(s.driver.uses_y);
    EXPECT_TRUE(validate_static(s.spec, make_samples(s.spec, 2.0, 3, 11), &s.driver).passed());
}

TEST(Config, UnknownKeyIsNamed) {
    try {
        parse_config(with_line(kZero, "sigma =", "sigma2 = \"1\""));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("sigma2"), std::string::npos);
    }
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_config(with_line(kZero, "drift =", "drift = \"1\"")), ConfigError);
    EXPECT_THROW(parse_config(with_line(kZero, "k_gamma", "[nosuch]")), ConfigError);
    std::string missing = kZero;
    missing.erase(missing.find("terminal"), missing.find('\n', missing.find("terminal")) - missing.find("terminal"));
    EXPECT_THROW(parse_config(missing), ConfigError);
    // driver may use y and z but not the marks
    std::string bad = kZero;
    bad.replace(bad.find("driver = \"0\""), 12, "driver = \"e1\"");
    EXPECT_THROW(parse_config(bad), Error);
    // expression syntax errors surface as parse errors with an offset
    std::string syn = kZero;
    syn.replace(syn.find("drift = \"0\""), 11, "drift = \"1 +\"");
    EXPECT_THROW(parse_config(syn), Error);
}

TEST(Config, OrderInsensitiveWithinSection) {
    std::string doc = kZero;
    std::string a = "drift = \"0\"\n", b = "k_gamma = 1\n";
    std::string shuffled = doc;
    shuffled.erase(shuffled.find(a), a.size());
    shuffled.erase(shuffled.find(b), b.size());
    shuffled.insert(shuffled.find("[model]\n") + 8, b + a);
    RunSetup s1 = parse_config(doc), s2 = parse_config(shuffled);
    Grid g = *s1.grid;
    auto f1 = solve_double(s1.spec, g, s1.driver, s1.solve);
    auto f2 = solve_double(s2.spec, g, s2.driver, s2.solve);
    EXPECT_EQ(sup_distance(f1, f2), 0.0);
    EXPECT_EQ(s1.spec.k_gamma_radius, s2.spec.k_gamma_radius);
}

TEST(Config, TwoDimensionalLists) {
    std::string doc = R"doc([model]
dimension = 2
horizon = 0.5
drift = ["-x1", "0.1*x2"]
sigma = ["0.2", "0", "0.1", "0.3"]
jump = ["-0.5*x1", "-0.5*x2*e2"]
cost = "0.1 + e1"
obstacle = "-1"
terminal = "x1^2 + x2^2"
driver = "-0.01*y + z1"
marks = [(0, 1, 0.5), (1, 0, 2)]
k_gamma = 1
)doc";
    RunSetup s = parse_config(doc);
    EXPECT_EQ(s.spec.dim, 2);
    EXPECT_EQ(s.spec.marks.size(), 2u);
    EXPECT_DOUBLE_EQ(s.spec.marks.total(), 2.5);
    State x{1.0, 2.0};
    EXPECT_DOUBLE_EQ(s.spec.coeffs.drift(0, x)[1], 0.2);
    EXPECT_DOUBLE_EQ(s.spec.coeffs.diffusion(0, x)[2], 0.1);
    EXPECT_DOUBLE_EQ(s.spec.coeffs.jump(0, x, s.spec.marks.nodes[0])[1], -1.0);
    EXPECT_DOUBLE_EQ(s.spec.coeffs.cost(0, x, s.spec.marks.nodes[1]), 1.1);
    EXPECT_TRUE(s.driver.uses_y);
    EXPECT_TRUE(s.driver.uses_z);
    EXPECT_DOUBLE_EQ(s.driver.f_tilde(0, x, 2.0, State{3.0, 0}), 2.98);
    EXPECT_THROW(parse_config(with_line(doc, "dimension", "nodes = 3")), ConfigError);
}

TEST(Config, BundledModelsParse) {
    for (const char* m : {"put.ini", "model_a.ini", "model_b.ini", "zero.ini"}) {
        RunSetup s = qvi::test::load_model(m);
        EXPECT_NO_THROW(s.spec.check()) << m;
        ASSERT_TRUE(s.grid) << m;
        EXPECT_NO_THROW(s.grid->check_against(s.spec)) << m;
    }
    RunSetup put = qvi::test::load_model("put.ini");
    EXPECT_EQ(put.mode, "penalized");
    EXPECT_EQ(put.grid->nodes_per_axis, 400);
    EXPECT_EQ(put.grid->time_steps, 200);
}

TEST(Config, ModelBDiffersOnlyInCost) {
    std::string a = qvi::test::read_file(std::string(QVI_MODELS_DIR) + "/model_a.ini");
    std::string b = qvi::test::read_file(std::string(QVI_MODELS_DIR) + "/model_b.ini");
    auto body = [](const std::string& s) {
        std::istringstream is(s);
        std::string line, out;
        while (std::getline(is, line))
            if (!line.empty() && line[0] != '#' && line.rfind("cost", 0) != 0 && line.rfind("name", 0) != 0)
                out += line + "\n";
        return out;
    };
    EXPECT_EQ(body(a), body(b));
    RunSetup sb = parse_config(b);
    EXPECT_EQ(sb.spec.coeffs.cost(0.3, State{1.0, 0}, sb.spec.marks.nodes[0]), 0.0);
}
