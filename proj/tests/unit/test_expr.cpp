#include <qvi/expr.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace qvi;

namespace {

double ev(const char* text, std::map<std::string, double> env = {}) { return eval_expr(parse_expr(text), env); }

// Random tree over the full operator set, built without going through the parser.
int grow(Expr& e, std::mt19937_64& rng, int depth) {
    using Op = Expr::Op;
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 15);
    int c = pick(rng);
    if (c == 0) {
        std::uniform_real_distribution<double> u(-5.0, 5.0);
        return e.add_node({Op::num, std::round(u(rng) * 1000.0) / 1000.0});
    }
    if (c == 1) {
        std::uniform_int_distribution<int> v(0, 7);
        return e.add_node({Op::var, static_cast<double>(v(rng))});
    }
    static const Op ops[] = {Op::neg, Op::add, Op::sub, Op::mul, Op::div, Op::pow, Op::exp,
                             Op::log, Op::sqrt, Op::abs, Op::min, Op::max, Op::sin, Op::cos};
    Op op = ops[c - 2];
    bool binary = op == Op::add || op == Op::sub || op == Op::mul || op == Op::div || op == Op::pow ||
                  op == Op::min || op == Op::max;
    int a = grow(e, rng, depth - 1);
    int b = binary ? grow(e, rng, depth - 1) : -1;
    return e.add_node({op, 0.0, a, b});
}

// Evaluation outcome: value, or NaN as a marker for a domain error.
double outcome(const Expr& e, const Env& env) {
    try {
        return e.eval(env);
    } catch (const EvalError&) {
        return std::nan("");
    }
}

}  // namespace

TEST(Expr, Examples) {
    EXPECT_DOUBLE_EQ(ev("x1^2 + 1", {{"x1", 2}}), 5.0);
    EXPECT_DOUBLE_EQ(ev("max(1 - x1, 0)", {{"x1", 0.4}}), 0.6);
    EXPECT_NEAR(ev("exp(-0.05*t)*y", {{"t", 1}, {"y", 2}}), 2.0 / std::exp(0.05), 1e-15);
    EXPECT_DOUBLE_EQ(ev("3.5"), 3.5);
    EXPECT_DOUBLE_EQ(ev("pow(x1, 3)", {{"x1", -2}}), -8.0);
}

TEST(Expr, DivisionByZero) {
    EXPECT_THROW(ev("1/ (x1 - x1)", {{"x1", 0.7}}), EvalError);
    try {
        ev("1/ (x1 - x1)", {{"x1", 0.7}});
    } catch (const EvalError& e) {
        EXPECT_NE(e.subexpression().find("x1"), std::string::npos);
    }
}

TEST(Expr, DomainErrors) {
    EXPECT_THROW(ev("log(0)"), EvalError);
    EXPECT_THROW(ev("sqrt(x1)", {{"x1", -1}}), EvalError);
    EXPECT_THROW(ev("exp(1000)"), EvalError);
}

TEST(Expr, PowerIsRightAssociative) {
    EXPECT_DOUBLE_EQ(ev("2^3^2"), 512.0);
    EXPECT_DOUBLE_EQ(ev("-2^2"), -4.0);
    EXPECT_DOUBLE_EQ(ev("2^-1"), 0.5);
}

TEST(Expr, Precedence) {
    EXPECT_DOUBLE_EQ(ev("1 + 2*3 - 4/2"), 5.0);
    EXPECT_DOUBLE_EQ(ev("(1 + 2)*3"), 9.0);
    EXPECT_DOUBLE_EQ(ev("1 - 2 - 3"), -4.0);
    EXPECT_DOUBLE_EQ(ev("8/4/2"), 1.0);
    EXPECT_DOUBLE_EQ(ev("min(3, abs(-2)) + cos(0) + sin(0)"), 3.0);
}

TEST(Expr, ParseErrorsCarryOffset) {
    try {
        parse_expr("1 + * 2");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 4u);
    }
    try {
        parse_expr("x1 + foo");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 5u);
        EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos);
    }
    EXPECT_THROW(parse_expr("(1 + 2"), ParseError);
    EXPECT_THROW(parse_expr("1 2"), ParseError);
    EXPECT_THROW(parse_expr(""), ParseError);
    EXPECT_THROW(parse_expr("max(1)"), ParseError);
}

TEST(Expr, RestrictedVariables) {
    EXPECT_NO_THROW(parse_expr("t + x1", vars_for(1, "tx")));
    EXPECT_THROW(parse_expr("y", vars_for(1, "tx")), ParseError);
    EXPECT_THROW(parse_expr("x2", vars_for(1, "tx")), ParseError);
    EXPECT_NO_THROW(parse_expr("x2", vars_for(2, "tx")));
}

TEST(Expr, UsedVariables) {
    Expr e = parse_expr("y*exp(t)");
    EXPECT_TRUE(e.uses(Var::y));
    EXPECT_TRUE(e.uses(Var::t));
    EXPECT_FALSE(e.uses(Var::x1));
    EXPECT_THROW(e.eval(std::map<std::string, double>{{"t", 1}}), EvalError);
}

TEST(Expr, PrintParseRoundTrip) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int tree = 0; tree < 200; ++tree) {
        Expr e;
        e.set_root(grow(e, rng, 5));
        std::string text = e.to_string();
        Expr back = parse_expr(text);
        EXPECT_EQ(back.to_string(), text);
        for (int k = 0; k < 100; ++k) {
            Env env;
            for (double& v : env) v = u(rng);
            double a = outcome(e, env), b = outcome(back, env);
            if (std::isnan(a)) EXPECT_TRUE(std::isnan(b)) << text;
            else EXPECT_EQ(a, b) << text;
        }
    }
}

TEST(Expr, FormatsSeventeenDigits) {
    EXPECT_EQ(format_double(0.1), "0.10000000000000001");
    EXPECT_EQ(format_double(2.0), "2");
}
