#pragma once

#include <qvi/error.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace qvi {

/// Variable slots an expression may reference.
enum class Var : std::uint8_t { t = 0, x1, x2, e1, e2, y, z1, z2 };
inline constexpr std::size_t var_count = 8;

/// Evaluation environment indexed by Var.
using Env = std::array<double, var_count>;

using VarMask = std::uint32_t;

inline constexpr VarMask var_bit(Var v) { return VarMask{1} << static_cast<unsigned>(v); }

inline constexpr VarMask all_vars = (VarMask{1} << var_count) - 1;

inline const char* var_name(Var v) {
    static constexpr const char* names[var_count] = {"t", "x1", "x2", "e1", "e2", "y", "z1", "z2"};
    return names[static_cast<unsigned>(v)];
}

/// Variables admissible for a coefficient of a d-dimensional model.
/// `which` combines the letters t, x, e, y, z.
inline VarMask vars_for(int d, std::string_view which) {
    VarMask m = 0;
    for (char c : which) {
        switch (c) {
        case 't': m |= var_bit(Var::t); break;
        case 'x': m |= var_bit(Var::x1) | (d > 1 ? var_bit(Var::x2) : 0); break;
        case 'e': m |= var_bit(Var::e1) | (d > 1 ? var_bit(Var::e2) : 0); break;
        case 'y': m |= var_bit(Var::y); break;
        case 'z': m |= var_bit(Var::z1) | (d > 1 ? var_bit(Var::z2) : 0); break;
        default: break;
        }
    }
    return m;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Parsed arithmetic expression over the variables in Var.
class Expr {
public:
    enum class Op : std::uint8_t {
        num, var, neg, add, sub, mul, div, pow,
        exp, log, sqrt, abs, min, max, sin, cos
    };

    struct Node {
        Op op;
        double value = 0.0;  // literal value, or variable slot for Op::var
        int a = -1;
        int b = -1;
    };

    Expr() { nodes_.push_back({Op::num, 0.0}); }

    static Expr constant(double v) {
        Expr e;
        e.nodes_[0].value = v;
        return e;
    }

    double eval(const Env& env) const { return eval_node(root_, env); }

    /// Evaluates with a name -> value map; every used variable must be present.
    double eval(const std::map<std::string, double>& env) const {
        Env e{};
        for (std::size_t i = 0; i < var_count; ++i) {
            auto v = static_cast<Var>(i);
            if (!(used_ & var_bit(v))) continue;
            auto it = env.find(var_name(v));
            if (it == env.end())
                throw EvalError(std::string("unbound variable ") + var_name(v), to_string());
            e[i] = it->second;
        }
        return eval(e);
    }

    VarMask used() const { return used_; }
    bool uses(Var v) const { return (used_ & var_bit(v)) != 0; }

    /// Fully parenthesized text that parses back to an equivalent tree.
    std::string to_string() const { return print(root_); }

    const std::vector<Node>& nodes() const { return nodes_; }
    int root() const { return root_; }

    /// Builds a tree directly (used by tests that generate random expressions).
    int add_node(Node n) {
        if (n.op == Op::var) used_ |= var_bit(static_cast<Var>(static_cast<int>(n.value)));
        nodes_.push_back(n);
        return static_cast<int>(nodes_.size()) - 1;
    }
    void set_root(int r) { root_ = r; }

private:
    friend class ExprParser;

    std::vector<Node> nodes_;
    int root_ = 0;
    VarMask used_ = 0;

    double fail(int i, const char* what) const { throw EvalError(what, print(i)); }

    double eval_node(int i, const Env& env) const {
        const Node& n = nodes_[i];
        switch (n.op) {
        case Op::num: return n.value;
        case Op::var: return env[static_cast<std::size_t>(n.value)];
        default: break;
        }
        double a = eval_node(n.a, env);
        double b = n.b >= 0 ? eval_node(n.b, env) : 0.0;
        double r = 0.0;
        switch (n.op) {
        case Op::neg: r = -a; break;
        case Op::add: r = a + b; break;
        case Op::sub: r = a - b; break;
        case Op::mul: r = a * b; break;
        case Op::div:
            if (b == 0.0) fail(i, "division by zero");
            r = a / b;
            break;
        case Op::pow: r = std::pow(a, b); break;
        case Op::exp: r = std::exp(a); break;
        case Op::log:
            if (!(a > 0.0)) fail(i, "log of non-positive value");
            r = std::log(a);
            break;
        case Op::sqrt:
            if (a < 0.0) fail(i, "sqrt of negative value");
            r = std::sqrt(a);
            break;
        case Op::abs: r = std::fabs(a); break;
        case Op::min: r = std::fmin(a, b); break;
        case Op::max: r = std::fmax(a, b); break;
        case Op::sin: r = std::sin(a); break;
        case Op::cos: r = std::cos(a); break;
        default: break;
        }
        if (!std::isfinite(r) && std::isfinite(a) && std::isfinite(b))
            fail(i, "non-finite result");
        return r;
    }

    std::string print(int i) const {
        const Node& n = nodes_[i];
        auto bin = [&](const char* op) {
            return "(" + print(n.a) + " " + op + " " + print(n.b) + ")";
        };
        auto call = [&](const char* f) {
            std::string s = std::string(f) + "(" + print(n.a);
            if (n.b >= 0) s += ", " + print(n.b);
            return s + ")";
        };
        switch (n.op) {
        case Op::num: {
            std::string s = format_double(n.value);
            return (n.value < 0 || std::signbit(n.value)) ? "(-" + format_double(-n.value) + ")" : s;
        }
        case Op::var: return var_name(static_cast<Var>(static_cast<int>(n.value)));
        case Op::neg: return "(-" + print(n.a) + ")";
        case Op::add: return bin("+");
        case Op::sub: return bin("-");
        case Op::mul: return bin("*");
        case Op::div: return bin("/");
        case Op::pow: return bin("^");
        case Op::exp: return call("exp");
        case Op::log: return call("log");
        case Op::sqrt: return call("sqrt");
        case Op::abs: return call("abs");
        case Op::min: return call("min");
        case Op::max: return call("max");
        case Op::sin: return call("sin");
        case Op::cos: return call("cos");
        }
        return "?";
    }
};

/// Recursive-descent parser. Grammar (lowest to highest binding):
///   expr    := term (('+' | '-') term)*
///   term    := unary (('*' | '/') unary)*
///   unary   := '-' unary | power
///   power   := primary ('^' unary)?          right associative
///   primary := number | name | func '(' expr [',' expr] ')' | '(' expr ')'
class ExprParser {
public:
    ExprParser(std::string_view text, VarMask allowed) : s_(text), allowed_(allowed) {}

    Expr parse() {
        skip_ws();
        if (pos_ >= s_.size()) error({"expression"});
        e_.nodes_.clear();
        int r = parse_expr();
        skip_ws();
        if (pos_ < s_.size()) error({"'+'", "'-'", "'*'", "'/'", "'^'", "end of input"});
        e_.root_ = r;
        return std::move(e_);
    }

private:
    std::string_view s_;
    VarMask allowed_;
    std::size_t pos_ = 0;
    Expr e_;

    [[noreturn]] void error(std::initializer_list<const char*> expected) {
        std::string msg = "syntax error at byte " + std::to_string(pos_) + ": expected ";
        bool first = true;
        for (const char* x : expected) {
            if (!first) msg += " | ";
            msg += x;
            first = false;
        }
        if (pos_ < s_.size()) msg += ", found '" + std::string(1, s_[pos_]) + "'";
        throw ParseError(msg, pos_);
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r'))
            ++pos_;
    }

    bool eat(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    int node(Expr::Op op, int a = -1, int b = -1, double v = 0.0) {
        return e_.add_node({op, v, a, b});
    }

    int parse_expr() {
        int lhs = parse_term();
        for (;;) {
            if (eat('+')) lhs = node(Expr::Op::add, lhs, parse_term());
            else if (eat('-')) lhs = node(Expr::Op::sub, lhs, parse_term());
            else return lhs;
        }
    }

    int parse_term() {
        int lhs = parse_unary();
        for (;;) {
            if (eat('*')) lhs = node(Expr::Op::mul, lhs, parse_unary());
            else if (eat('/')) lhs = node(Expr::Op::div, lhs, parse_unary());
            else return lhs;
        }
    }

    int parse_unary() {
        if (eat('-')) return node(Expr::Op::neg, parse_unary());
        return parse_power();
    }

    int parse_power() {
        int base = parse_primary();
        if (eat('^')) return node(Expr::Op::pow, base, parse_unary());
        return base;
    }

    static bool is_ident_start(char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
    }
    static bool is_ident(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

    int parse_primary() {
        skip_ws();
        if (pos_ >= s_.size()) error({"number", "identifier", "'('", "'-'"});
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            int inner = parse_expr();
            if (!eat(')')) error({"')'"});
            return inner;
        }
        if ((c >= '0' && c <= '9') || c == '.') return parse_number();
        if (is_ident_start(c)) return parse_name();
        error({"number", "identifier", "'('", "'-'"});
    }

    int parse_number() {
        std::size_t start = pos_;
        auto digits = [&] {
            while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
        };
        digits();
        if (pos_ < s_.size() && s_[pos_] == '.') {
            ++pos_;
            digits();
        }
        if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
            if (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') digits();
            else pos_ = save;
        }
        double v = 0.0;
        auto res = std::from_chars(s_.data() + start, s_.data() + pos_, v);
        if (res.ec != std::errc() || res.ptr != s_.data() + pos_) {
            pos_ = start;
            error({"number"});
        }
        return node(Expr::Op::num, -1, -1, v);
    }

    int parse_name() {
        std::size_t start = pos_;
        while (pos_ < s_.size() && is_ident(s_[pos_])) ++pos_;
        std::string name(s_.substr(start, pos_ - start));

        struct Fn { const char* name; Expr::Op op; int arity; };
        static constexpr Fn fns[] = {
            {"exp", Expr::Op::exp, 1}, {"log", Expr::Op::log, 1}, {"sqrt", Expr::Op::sqrt, 1},
            {"abs", Expr::Op::abs, 1}, {"sin", Expr::Op::sin, 1}, {"cos", Expr::Op::cos, 1},
            {"min", Expr::Op::min, 2}, {"max", Expr::Op::max, 2}, {"pow", Expr::Op::pow, 2}};
        for (const Fn& f : fns) {
            if (name != f.name) continue;
            if (!eat('(')) error({"'('"});
            int a = parse_expr();
            int b = -1;
            if (f.arity == 2) {
                if (!eat(',')) error({"','"});
                b = parse_expr();
            }
            if (!eat(')')) error({"')'"});
            return node(f.op, a, b);
        }
        for (std::size_t i = 0; i < var_count; ++i) {
            auto v = static_cast<Var>(i);
            if (name == var_name(v) && (allowed_ & var_bit(v)))
                return node(Expr::Op::var, -1, -1, static_cast<double>(i));
        }
        throw ParseError("unknown identifier '" + name + "' at byte " + std::to_string(start), start);
    }
};

inline Expr parse_expr(std::string_view text, VarMask allowed = all_vars) {
    return ExprParser(text, allowed).parse();
}

inline double eval_expr(const Expr& e, const std::map<std::string, double>& env) { return e.eval(env); }

}  // namespace qvi
