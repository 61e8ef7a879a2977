#pragma once

#include <qvi/error.hpp>
#include <qvi/expr.hpp>
#include <qvi/grid.hpp>
#include <qvi/model.hpp>
#include <qvi/solver.hpp>

#include <charconv>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace qvi {

struct ConfigValue {
    enum class Kind { number, string, list };
    Kind kind = Kind::string;
    double number = 0.0;
    std::string text;  ///< raw text, or the unquoted string
    std::vector<ConfigValue> items;
};

/// Sections of `key = value` lines. `#` starts a comment outside quotes.
struct ConfigDoc {
    std::map<std::string, std::map<std::string, ConfigValue>> sections;

    const ConfigValue* get(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        if (s == sections.end()) return nullptr;
        auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return std::string(s.substr(a, b - a));
}

inline std::optional<double> parse_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    std::string_view body = s;
    if (body.front() == '+') body.remove_prefix(1);
    double v = 0.0;
    auto r = std::from_chars(body.data(), body.data() + body.size(), v);
    if (r.ec != std::errc() || r.ptr != body.data() + body.size()) return std::nullopt;
    return v;
}

class ValueParser {
public:
    ValueParser(std::string_view s, int line) : s_(s), line_(line) {}

    ConfigValue parse() {
        ConfigValue v = value();
        ws();
        if (pos_ != s_.size()) fail("trailing characters after value");
        return v;
    }

private:
    std::string_view s_;
    int line_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& m) {
        throw ConfigError("line " + std::to_string(line_) + ": " + m);
    }
    void ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    ConfigValue value() {
        ws();
        if (pos_ >= s_.size()) fail("missing value");
        char c = s_[pos_];
        if (c == '"') {
            std::size_t end = s_.find('"', pos_ + 1);
            if (end == std::string_view::npos) fail("unterminated string");
            ConfigValue v;
            v.kind = ConfigValue::Kind::string;
            v.text = std::string(s_.substr(pos_ + 1, end - pos_ - 1));
            pos_ = end + 1;
            return v;
        }
        if (c == '[' || c == '(') {
            char close = c == '[' ? ']' : ')';
            ++pos_;
            ConfigValue v;
            v.kind = ConfigValue::Kind::list;
            ws();
            if (pos_ < s_.size() && s_[pos_] == close) {
                ++pos_;
                return v;
            }
            for (;;) {
                v.items.push_back(value());
                ws();
                if (pos_ < s_.size() && s_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                if (pos_ < s_.size() && s_[pos_] == close) {
                    ++pos_;
                    return v;
                }
                fail(std::string("expected ',' or '") + close + "' in list");
            }
        }
        // bare token up to a list delimiter
        std::size_t start = pos_;
        int depth = 0;
        while (pos_ < s_.size()) {
            char d = s_[pos_];
            if (d == '(') ++depth;
            else if (d == ')') {
                if (depth == 0) break;
                --depth;
            } else if ((d == ',' || d == ']') && depth == 0)
                break;
            ++pos_;
        }
        ConfigValue v;
        v.text = trim(s_.substr(start, pos_ - start));
        if (auto n = parse_number(v.text)) {
            v.kind = ConfigValue::Kind::number;
            v.number = *n;
        }
        return v;
    }
};

inline std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

inline const std::map<std::string, std::set<std::string>>& allowed_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"model",
         {"name", "dimension", "horizon", "drift", "sigma", "jump", "cost", "obstacle", "terminal", "driver", "marks",
          "k_gamma", "growth_rho", "lip_f", "lip_gamma", "lip_a_sigma", "loop_delta1", "loop_delta2", "loop_starts",
          "loop_depth", "loop_times", "loop_budget", "sample_radius", "sample_times", "sample_points"}},
        {"grid", {"box_radius", "nodes", "time_steps"}},
        {"solver", {"theta", "inner_tol", "inner_max", "damping", "penalty_n", "mode"}},
        {"picard", {"k_nl", "tol", "kmax"}},
        {"mc",
         {"seed", "paths", "dt_sim", "probe_t", "probe_x", "moment_p", "moment_starts", "moment_factor", "stop_rule",
          "epsilon", "allowance", "consistency_n", "dual_n", "dual_tol", "c_a_sigma", "domination_x",
          "domination_seeds", "oracle_rate", "oracle_vol", "oracle_strike", "oracle_steps", "oracle_tol"}},
    };
    return keys;
}

}  // namespace detail

inline ConfigDoc parse_config_doc(std::string_view text) {
    ConfigDoc doc;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    const auto& allowed = detail::allowed_keys();
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string line = detail::trim(detail::strip_comment(std::string(text.substr(pos, end - pos))));
        ++line_no;
        pos = end + 1;
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
            section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
            if (!allowed.count(section))
                throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
            doc.sections[section];
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::trim(std::string_view(line).substr(0, eq));
        if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside of a section");
        if (!allowed.at(section).count(key))
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "' in [" + section + "]");
        auto& sec = doc.sections[section];
        if (sec.count(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        sec.emplace(key, detail::ValueParser(std::string_view(line).substr(eq + 1), line_no).parse());
    }
    return doc;
}

struct PicardOptions {
    double k_nl = 0.0;
    double tol = 1e-6;
    int kmax = 30;
};

struct McOptions {
    std::uint64_t seed = 1;
    int paths = 10000;
    double dt_sim = 0.01;
    double probe_t = 0.0;
    State probe_x{};
    double moment_p = 4.0;
    std::vector<State> moment_starts;
    double moment_factor = 3.0;
    bool stop_hit_h = true;
    std::optional<double> epsilon;  ///< defaults to dx
    double allowance = 2e-2;
    double consistency_n = 4.0;
    std::vector<double> dual_n{1, 4, 16, 64, 256};
    double dual_tol = 1e-2;
    std::optional<double> c_a_sigma;
    std::optional<double> domination_x;
    int domination_seeds = 3;
    double oracle_rate = 0.05, oracle_vol = 0.2, oracle_strike = 1.0;
    int oracle_steps = 2000;
    double oracle_tol = 5e-3;
};

struct ValidateOptions {
    std::vector<State> loop_starts;
    int loop_depth = 4;
    std::vector<double> loop_times;
    double loop_budget = 1e7;
    std::optional<double> sample_radius;
    int sample_times = 5;
    int sample_points = 41;
};

/// Everything a run needs, built from one config document.
struct RunSetup {
    std::string name;
    ProblemSpec spec;
    DriverSpec driver;
    std::optional<Grid> grid;
    SolveConfig solve;
    std::string mode = "double";
    PicardOptions picard;
    McOptions mc;
    ValidateOptions validate;
};

namespace detail {

using ExprPtr = std::shared_ptr<const Expr>;

inline Env make_env(double t, const State& x) {
    Env e{};
    e[static_cast<int>(Var::t)] = t;
    e[static_cast<int>(Var::x1)] = x[0];
    e[static_cast<int>(Var::x2)] = x[1];
    return e;
}

class SetupBuilder {
public:
    explicit SetupBuilder(const ConfigDoc& doc) : doc_(doc) {}

    RunSetup build() {
        RunSetup r;
        r.name = str_or("model", "name", "model");
        const int d = static_cast<int>(req_num("model", "dimension"));
        if (d != 1 && d != 2) throw ConfigError("[model] dimension must be 1 or 2");
        d_ = d;
        ProblemSpec& s = r.spec;
        s.dim = d;
        s.horizon = req_num("model", "horizon");
        s.k_gamma_radius = req_num("model", "k_gamma");
        s.growth_rho = num_or("model", "growth_rho", 2.0);
        s.lipschitz.k_f = num_or("model", "lip_f", 1.0);
        s.lipschitz.k_gamma = num_or("model", "lip_gamma", 1.0);
        s.lipschitz.k_a_sigma = num_or("model", "lip_a_sigma", 1.0);
        s.loop_delta1 = num_or("model", "loop_delta1", 0.1);
        s.loop_delta2 = num_or("model", "loop_delta2", 0.1);

        auto drift = exprs("drift", d, "tx");
        auto sigma = exprs("sigma", d * d, "tx");
        auto jump = exprs("jump", d, "txe");
        ExprPtr cost = expr1("cost", "txe");
        ExprPtr obstacle = expr1("obstacle", "tx");
        ExprPtr terminal = expr1("terminal", "x");
        ExprPtr driver = expr1("driver", "txyz");

        CoefficientSet& c = s.coeffs;
        c.drift = [drift, d](double t, const State& x) {
            Env e = make_env(t, x);
            State out{};
            for (int i = 0; i < d; ++i) out[i] = drift[i]->eval(e);
            return out;
        };
        c.diffusion = [sigma, d](double t, const State& x) {
            Env e = make_env(t, x);
            Matrix out{};
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) out[2 * i + j] = sigma[d * i + j]->eval(e);
            return out;
        };
        c.jump = [jump, d](double t, const State& x, const Mark& m) {
            Env e = make_env(t, x);
            e[static_cast<int>(Var::e1)] = m[0];
            e[static_cast<int>(Var::e2)] = m[1];
            State out{};
            for (int i = 0; i < d; ++i) out[i] = jump[i]->eval(e);
            return out;
        };
        c.cost = [cost](double t, const State& x, const Mark& m) {
            Env e = make_env(t, x);
            e[static_cast<int>(Var::e1)] = m[0];
            e[static_cast<int>(Var::e2)] = m[1];
            return cost->eval(e);
        };
        c.obstacle = [obstacle](double t, const State& x) { return obstacle->eval(make_env(t, x)); };
        c.terminal = [terminal](const State& x) { return terminal->eval(make_env(0.0, x)); };

        r.driver = DriverSpec::local(
            [driver](double t, const State& x, double y, const State& z) {
                Env e = make_env(t, x);
                e[static_cast<int>(Var::y)] = y;
                e[static_cast<int>(Var::z1)] = z[0];
                e[static_cast<int>(Var::z2)] = z[1];
                return driver->eval(e);
            },
            driver->uses(Var::y), driver->uses(Var::z1) || driver->uses(Var::z2));

        s.marks = marks();
        s.check();

        if (doc_.sections.count("grid"))
            r.grid = Grid(d, req_num("grid", "box_radius"), static_cast<int>(req_num("grid", "nodes")),
                          static_cast<int>(req_num("grid", "time_steps")), s.horizon);

        r.solve.theta = num_or("solver", "theta", 1.0);
        r.solve.inner_tol = num_or("solver", "inner_tol", 1e-11);
        r.solve.inner_max = static_cast<int>(num_or("solver", "inner_max", 20000));
        r.solve.damping = num_or("solver", "damping", 1.0);
        r.solve.penalty_n = num_or("solver", "penalty_n", 0.0);
        r.solve.check();
        r.mode = str_or("solver", "mode", "double");

        r.picard.k_nl = num_or("picard", "k_nl", 0.0);
        r.picard.tol = num_or("picard", "tol", 1e-6);
        r.picard.kmax = static_cast<int>(num_or("picard", "kmax", 30));

        McOptions& mc = r.mc;
        mc.seed = static_cast<std::uint64_t>(num_or("mc", "seed", 1));
        mc.paths = static_cast<int>(num_or("mc", "paths", 10000));
        mc.dt_sim = num_or("mc", "dt_sim", 0.01);
        mc.probe_t = num_or("mc", "probe_t", 0.0);
        if (auto v = doc_.get("mc", "probe_x")) mc.probe_x = state(*v, "probe_x");
        mc.moment_p = num_or("mc", "moment_p", 4.0);
        if (auto v = doc_.get("mc", "moment_starts")) mc.moment_starts = states(*v, "moment_starts");
        mc.moment_factor = num_or("mc", "moment_factor", 3.0);
        std::string rule = str_or("mc", "stop_rule", "hit_h");
        if (rule != "hit_h" && rule != "fixed_t") throw ConfigError("[mc] stop_rule must be hit_h or fixed_t");
        mc.stop_hit_h = rule == "hit_h";
        if (doc_.get("mc", "epsilon")) mc.epsilon = req_num("mc", "epsilon");
        mc.allowance = num_or("mc", "allowance", 2e-2);
        mc.consistency_n = num_or("mc", "consistency_n", 4.0);
        if (auto v = doc_.get("mc", "dual_n")) mc.dual_n = numbers(*v, "dual_n");
        mc.dual_tol = num_or("mc", "dual_tol", 1e-2);
        if (doc_.get("mc", "c_a_sigma")) mc.c_a_sigma = req_num("mc", "c_a_sigma");
        if (doc_.get("mc", "domination_x")) mc.domination_x = req_num("mc", "domination_x");
        mc.domination_seeds = static_cast<int>(num_or("mc", "domination_seeds", 3));
        mc.oracle_rate = num_or("mc", "oracle_rate", 0.05);
        mc.oracle_vol = num_or("mc", "oracle_vol", 0.2);
        mc.oracle_strike = num_or("mc", "oracle_strike", 1.0);
        mc.oracle_steps = static_cast<int>(num_or("mc", "oracle_steps", 2000));
        mc.oracle_tol = num_or("mc", "oracle_tol", 5e-3);

        ValidateOptions& vo = r.validate;
        if (auto v = doc_.get("model", "loop_starts")) vo.loop_starts = states(*v, "loop_starts");
        vo.loop_depth = static_cast<int>(num_or("model", "loop_depth", 4));
        if (auto v = doc_.get("model", "loop_times")) vo.loop_times = numbers(*v, "loop_times");
        vo.loop_budget = num_or("model", "loop_budget", 1e7);
        if (doc_.get("model", "sample_radius")) vo.sample_radius = req_num("model", "sample_radius");
        vo.sample_times = static_cast<int>(num_or("model", "sample_times", 5));
        vo.sample_points = static_cast<int>(num_or("model", "sample_points", 41));
        return r;
    }

private:
    const ConfigDoc& doc_;
    int d_ = 1;

    double req_num(const std::string& sec, const std::string& key) const {
        const ConfigValue* v = doc_.get(sec, key);
        if (!v) throw ConfigError("missing required key '" + key + "' in [" + sec + "]");
        if (v->kind != ConfigValue::Kind::number) throw ConfigError("key '" + key + "' must be a number");
        return v->number;
    }
    double num_or(const std::string& sec, const std::string& key, double dflt) const {
        return doc_.get(sec, key) ? req_num(sec, key) : dflt;
    }
    std::string str_or(const std::string& sec, const std::string& key, const std::string& dflt) const {
        const ConfigValue* v = doc_.get(sec, key);
        if (!v) return dflt;
        if (v->kind == ConfigValue::Kind::list) throw ConfigError("key '" + key + "' must be a string");
        return v->text;
    }

    ExprPtr parse(const ConfigValue& v, const std::string& key, const char* vars) const {
        if (v.kind == ConfigValue::Kind::list) throw ConfigError("key '" + key + "' expects a single expression");
        try {
            return std::make_shared<const Expr>(parse_expr(v.text, vars_for(d_, vars)));
        } catch (const ParseError& e) {
            throw ConfigError("in '" + key + "': " + e.what());
        }
    }

    ExprPtr expr1(const std::string& key, const char* vars) const {
        const ConfigValue* v = doc_.get("model", key);
        if (!v) throw ConfigError("missing required key '" + key + "' in [model]");
        return parse(*v, key, vars);
    }

    std::vector<ExprPtr> exprs(const std::string& key, int count, const char* vars) const {
        const ConfigValue* v = doc_.get("model", key);
        if (!v) throw ConfigError("missing required key '" + key + "' in [model]");
        std::vector<ExprPtr> out;
        if (v->kind != ConfigValue::Kind::list) {
            if (count != 1)
                throw ConfigError("'" + key + "' needs " + std::to_string(count) + " components for dimension " +
                                  std::to_string(d_));
            out.push_back(parse(*v, key, vars));
            return out;
        }
        if (static_cast<int>(v->items.size()) != count)
            throw ConfigError("'" + key + "' has " + std::to_string(v->items.size()) + " components, dimension " +
                              std::to_string(d_) + " needs " + std::to_string(count));
        for (const ConfigValue& it : v->items) out.push_back(parse(it, key, vars));
        return out;
    }

    static double as_number(const ConfigValue& v, const std::string& key) {
        if (v.kind != ConfigValue::Kind::number) throw ConfigError("'" + key + "' expects numbers");
        return v.number;
    }

    std::vector<double> numbers(const ConfigValue& v, const std::string& key) const {
        if (v.kind == ConfigValue::Kind::number) return {v.number};
        if (v.kind != ConfigValue::Kind::list) throw ConfigError("'" + key + "' expects a list of numbers");
        std::vector<double> out;
        for (const ConfigValue& it : v.items) out.push_back(as_number(it, key));
        return out;
    }

    State state(const ConfigValue& v, const std::string& key) const {
        std::vector<double> xs = numbers(v, key);
        if (static_cast<int>(xs.size()) != d_) throw ConfigError("'" + key + "' needs " + std::to_string(d_) + " coordinates");
        State s{};
        for (int i = 0; i < d_; ++i) s[i] = xs[i];
        return s;
    }

    std::vector<State> states(const ConfigValue& v, const std::string& key) const {
        if (v.kind != ConfigValue::Kind::list) throw ConfigError("'" + key + "' expects a list");
        std::vector<State> out;
        if (d_ == 1 && !v.items.empty() && v.items.front().kind == ConfigValue::Kind::number) {
            for (double x : numbers(v, key)) out.push_back(State{x, 0.0});
            return out;
        }
        for (const ConfigValue& it : v.items) out.push_back(state(it, key));
        return out;
    }

    MarkSpace marks() const {
        const ConfigValue* v = doc_.get("model", "marks");
        if (!v) throw ConfigError("missing required key 'marks' in [model]");
        if (v->kind != ConfigValue::Kind::list || v->items.empty())
            throw ConfigError("'marks' must be a non-empty list of (e, weight) tuples");
        std::vector<Mark> nodes;
        std::vector<double> weights;
        for (const ConfigValue& it : v->items) {
            std::vector<double> xs = numbers(it, "marks");
            if (static_cast<int>(xs.size()) != d_ + 1)
                throw ConfigError("each mark needs " + std::to_string(d_) + " coordinates and a weight");
            Mark m{};
            for (int i = 0; i < d_; ++i) m[i] = xs[i];
            nodes.push_back(m);
            weights.push_back(xs[d_]);
        }
        try {
            return MarkSpace(std::move(nodes), std::move(weights));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(std::string("marks: ") + e.what());
        }
    }
};

}  // namespace detail

inline RunSetup parse_config(std::string_view text) {
    ConfigDoc doc = parse_config_doc(text);
    return detail::SetupBuilder(doc).build();
}

}  // namespace qvi
