#pragma once

// SPICE-subset netlist reader and canonical writer.
//
// Line-oriented, case-insensitive. `*` starts a comment line, `+` continues
// the previous line, `.end` stops parsing. Supported cards:
//
//   R<name> n+ n- <value>
//   C<name> n+ n- <value> [IC=<volts>]
//   V<name> n+ n- [DC] <value> [AC <mag> [<phase_deg>]] [PWL(t1 v1 t2 v2 ...)]
//   I<name> n+ n- [DC] <value> [AC <mag> [<phase_deg>]] [PWL(...)]
//   E<name> out+ out- in+ in- <gain>
//   M<name> nd ng ns nb <model> W=<m> L=<m> [M=<int>]
//   .MODEL <name> NMOS|PMOS (VTO=<v> KP=<a/v2> LAMBDA=<1/v> [CGS=<f>] [CGD=<f>])
//   .OP | .DC <src> <start> <stop> <step> | .AC DEC <n> <fstart> <fstop>
//   .TRAN <tstep> <tstop> | .END
//
// Node "0" and "gnd" both denote ground. Numbers are decimals with an
// optional SI suffix (f p n u m k meg g); an exponent and a suffix cannot
// be combined. Trailing unit letters after the suffix are ignored ("3pF").

#include "ldosim/circuit.hpp"

#include <cstdlib>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ldosim {

// =============================================================================
// Value parsing
// =============================================================================

/// Parse a number token with optional SI suffix, e.g. "2.6", "3p", "5meg",
/// "10k", "1e-6". Throws ParseError(MalformedNumber) for anything else.
inline double parse_value(std::string_view token, int line = 0) {
    auto fail = [&](const std::string& why) -> double {
        throw ParseError(ParseErrorKind::MalformedNumber, line,
                         "malformed number '" + std::string(token) + "': " + why);
    };
    if (token.empty()) return fail("empty token");

    // Numeric prefix: sign, digits, optional fraction, optional exponent.
    std::size_t i = 0;
    if (token[i] == '+' || token[i] == '-') ++i;
    std::size_t digits_begin = i;
    while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) ++i;
    if (i < token.size() && token[i] == '.') {
        ++i;
        while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) ++i;
    }
    if (i == digits_begin || (i == digits_begin + 1 && token[digits_begin] == '.'))
        return fail("no digits");
    bool has_exponent = false;
    if (i < token.size() && (token[i] == 'e' || token[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < token.size() && (token[j] == '+' || token[j] == '-')) ++j;
        if (j < token.size() && std::isdigit(static_cast<unsigned char>(token[j]))) {
            while (j < token.size() && std::isdigit(static_cast<unsigned char>(token[j]))) ++j;
            has_exponent = true;
            i = j;
        }
    }

    const std::string mantissa(token.substr(0, i));
    double value = std::strtod(mantissa.c_str(), nullptr);

    std::string rest = detail::to_lower(token.substr(i));
    if (rest.empty()) return value;
    if (has_exponent) return fail("suffix after exponent is not allowed");

    double mult = 1.0;
    if (rest.rfind("meg", 0) == 0) {
        mult = 1e6;
        rest.erase(0, 3);
    } else {
        switch (rest[0]) {
            case 'f': mult = 1e-15; rest.erase(0, 1); break;
            case 'p': mult = 1e-12; rest.erase(0, 1); break;
            case 'n': mult = 1e-9;  rest.erase(0, 1); break;
            case 'u': mult = 1e-6;  rest.erase(0, 1); break;
            case 'm': mult = 1e-3;  rest.erase(0, 1); break;
            case 'k': mult = 1e3;   rest.erase(0, 1); break;
            case 'g': mult = 1e9;   rest.erase(0, 1); break;
            default: break; // no suffix; rest must be unit letters
        }
    }
    for (char c : rest) {
        if (!std::isalpha(static_cast<unsigned char>(c)))
            return fail("unexpected character '" + std::string(1, c) + "'");
    }
    return value * mult;
}

namespace detail {

// -----------------------------------------------------------------------------
// Tokenizer: whitespace-separated words; '(', ')' and '=' are their own tokens.
// -----------------------------------------------------------------------------

struct Token {
    std::string text; // lower case
    int column = 0;
};

inline std::vector<Token> tokenize_line(std::string_view line) {
    std::vector<Token> out;
    std::string cur;
    int cur_col = 0;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back({to_lower(cur), cur_col});
            cur.clear();
        }
    };
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (c == '(' || c == ')' || c == '=') {
            flush();
            out.push_back({std::string(1, c), static_cast<int>(i) + 1});
        } else {
            if (cur.empty()) cur_col = static_cast<int>(i) + 1;
            cur += c;
        }
    }
    flush();
    return out;
}

/// Cursor over one logical netlist line.
class LineCursor {
public:
    LineCursor(std::vector<Token> tokens, int line)
        : tokens_(std::move(tokens)), line_(line) {}

    [[nodiscard]] bool done() const { return pos_ >= tokens_.size(); }
    [[nodiscard]] int line() const { return line_; }

    [[nodiscard]] const Token& peek() const {
        static const Token sentinel{"", 0};
        return done() ? sentinel : tokens_[pos_];
    }

    std::string next(const char* what) {
        if (done())
            throw ParseError(ParseErrorKind::Syntax, line_,
                             std::string("expected ") + what + " but line ended");
        return tokens_[pos_++].text;
    }

    double next_value(const char* what) { return parse_value(next(what), line_); }

    bool accept(std::string_view word) {
        if (!done() && tokens_[pos_].text == word) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(std::string_view word, const char* what) {
        if (!accept(word))
            throw ParseError(ParseErrorKind::Syntax, line_,
                             std::string("expected ") + what + ", got '" + peek().text + "'");
    }

    [[nodiscard]] bool peek_is_number() const {
        if (done()) return false;
        char c = tokens_[pos_].text[0];
        return std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.';
    }

    void expect_end() {
        if (!done())
            throw ParseError(ParseErrorKind::Syntax, line_,
                             "unexpected trailing token '" + peek().text + "'");
    }

private:
    std::vector<Token> tokens_;
    int line_;
    std::size_t pos_ = 0;
};

inline std::string normalize_node(std::string name) {
    if (name == "gnd") return "0";
    return name;
}

/// Collects nodes in first-appearance order while elements are parsed.
struct NodeCollector {
    std::vector<std::string> order;

    std::string add(const std::string& raw) {
        std::string n = normalize_node(raw);
        if (!is_ground(n)) {
            bool known = false;
            for (const auto& existing : order)
                if (existing == n) { known = true; break; }
            if (!known) order.push_back(n);
        }
        return n;
    }
};

inline std::optional<Pwl> parse_optional_pwl(LineCursor& cur) {
    if (!cur.accept("pwl")) return std::nullopt;
    cur.expect("(", "'(' after PWL");
    Pwl pwl;
    while (!cur.accept(")")) {
        double t = cur.next_value("PWL time");
        double v = cur.next_value("PWL value");
        pwl.points.emplace_back(t, v);
    }
    if (pwl.points.empty())
        throw ParseError(ParseErrorKind::Syntax, cur.line(), "empty PWL list");
    return pwl;
}

inline std::optional<AcSpec> parse_optional_ac(LineCursor& cur) {
    if (!cur.accept("ac")) return std::nullopt;
    AcSpec spec;
    spec.magnitude = cur.next_value("AC magnitude");
    if (cur.peek_is_number()) spec.phase_deg = cur.next_value("AC phase");
    return spec;
}

} // namespace detail

// =============================================================================
// parse_netlist
// =============================================================================

inline Circuit parse_netlist(std::string_view text) {
    using detail::LineCursor;

    // Assemble logical lines: strip comments/blanks, merge '+' continuations.
    struct Logical {
        std::string text;
        int line;
    };
    std::vector<Logical> logical;
    {
        std::istringstream in{std::string(text)};
        std::string raw;
        int lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            std::size_t first = raw.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            if (raw[first] == '*') continue;
            if (raw[first] == '+') {
                if (logical.empty())
                    throw ParseError(ParseErrorKind::Syntax, lineno,
                                     "continuation line with nothing to continue");
                logical.back().text += ' ';
                logical.back().text += raw.substr(first + 1);
            } else {
                logical.push_back({raw.substr(first), lineno});
            }
        }
    }

    Circuit circuit;
    detail::NodeCollector nodes;
    bool ended = false;

    for (const auto& [line_text, lineno] : logical) {
        if (ended) break;
        LineCursor cur(detail::tokenize_line(line_text), lineno);
        std::string head = cur.next("card");

        if (head[0] == '.') {
            if (head == ".end") {
                ended = true;
            } else if (head == ".op") {
                cur.expect_end();
                circuit.analyses.emplace_back(OpDirective{});
            } else if (head == ".dc") {
                DcSweepDirective d;
                d.source = cur.next("source name");
                d.start = cur.next_value("sweep start");
                d.stop = cur.next_value("sweep stop");
                d.step = cur.next_value("sweep step");
                cur.expect_end();
                circuit.analyses.emplace_back(d);
            } else if (head == ".ac") {
                cur.expect("dec", "DEC (only decade sweeps are supported)");
                AcDirective d;
                double n = cur.next_value("points per decade");
                d.points_per_decade = static_cast<int>(n);
                if (d.points_per_decade < 1 || n != d.points_per_decade)
                    throw ParseError(ParseErrorKind::Syntax, lineno,
                                     "points per decade must be a positive integer");
                d.fstart = cur.next_value("start frequency");
                d.fstop = cur.next_value("stop frequency");
                cur.expect_end();
                circuit.analyses.emplace_back(d);
            } else if (head == ".tran") {
                TranDirective d;
                d.tstep = cur.next_value("time step");
                d.tstop = cur.next_value("stop time");
                cur.expect_end();
                circuit.analyses.emplace_back(d);
            } else if (head == ".model") {
                ModelCard m;
                m.name = cur.next("model name");
                std::string type = cur.next("NMOS or PMOS");
                if (type == "nmos") m.polarity = Polarity::Nmos;
                else if (type == "pmos") m.polarity = Polarity::Pmos;
                else
                    throw ParseError(ParseErrorKind::Syntax, lineno,
                                     "unknown model type '" + type + "'");
                bool parens = cur.accept("(");
                bool saw_vto = false, saw_kp = false, saw_lambda = false;
                while (!cur.done() && !(parens && cur.peek().text == ")")) {
                    std::string key = cur.next("parameter name");
                    cur.expect("=", "'=' after model parameter");
                    double val = cur.next_value("parameter value");
                    if (key == "vto") { m.vto = val; saw_vto = true; }
                    else if (key == "kp") { m.kp = val; saw_kp = true; }
                    else if (key == "lambda") { m.lambda = val; saw_lambda = true; }
                    else if (key == "cgs") m.cgs = val;
                    else if (key == "cgd") m.cgd = val;
                    else
                        throw ParseError(ParseErrorKind::Syntax, lineno,
                                         "unknown model parameter '" + key + "'");
                }
                if (parens) cur.expect(")", "closing ')'");
                cur.expect_end();
                if (!saw_vto || !saw_kp || !saw_lambda)
                    throw ParseError(ParseErrorKind::Syntax, lineno,
                                     "model '" + m.name + "' requires VTO, KP and LAMBDA");
                if (circuit.models.count(m.name))
                    throw ParseError(ParseErrorKind::DuplicateName, lineno,
                                     "duplicate model name '" + m.name + "'");
                circuit.models.emplace(m.name, m);
            } else {
                throw ParseError(ParseErrorKind::Syntax, lineno,
                                 "unknown directive '" + head + "'");
            }
            continue;
        }

        Element e;
        e.name = head;
        e.line = lineno;
        e.column = 1;

        switch (head[0]) {
            case 'r': {
                Resistor r;
                r.node_pos = nodes.add(cur.next("node"));
                r.node_neg = nodes.add(cur.next("node"));
                r.ohms = cur.next_value("resistance");
                cur.expect_end();
                e.device = r;
                break;
            }
            case 'c': {
                Capacitor c;
                c.node_pos = nodes.add(cur.next("node"));
                c.node_neg = nodes.add(cur.next("node"));
                c.farads = cur.next_value("capacitance");
                if (cur.accept("ic")) {
                    cur.expect("=", "'=' after IC");
                    c.initial_volts = cur.next_value("initial voltage");
                }
                cur.expect_end();
                e.device = c;
                break;
            }
            case 'v': {
                VoltageSource v;
                v.node_pos = nodes.add(cur.next("node"));
                v.node_neg = nodes.add(cur.next("node"));
                cur.accept("dc");
                v.dc_volts = cur.next_value("DC value");
                v.ac = detail::parse_optional_ac(cur);
                v.pwl = detail::parse_optional_pwl(cur);
                cur.expect_end();
                e.device = v;
                break;
            }
            case 'i': {
                CurrentSource s;
                s.node_pos = nodes.add(cur.next("node"));
                s.node_neg = nodes.add(cur.next("node"));
                cur.accept("dc");
                s.dc_amps = cur.next_value("DC value");
                s.ac = detail::parse_optional_ac(cur);
                s.pwl = detail::parse_optional_pwl(cur);
                cur.expect_end();
                e.device = s;
                break;
            }
            case 'e': {
                Vcvs g;
                g.out_pos = nodes.add(cur.next("node"));
                g.out_neg = nodes.add(cur.next("node"));
                g.in_pos = nodes.add(cur.next("node"));
                g.in_neg = nodes.add(cur.next("node"));
                g.gain = cur.next_value("gain");
                cur.expect_end();
                e.device = g;
                break;
            }
            case 'm': {
                Mosfet m;
                m.drain = nodes.add(cur.next("drain node"));
                m.gate = nodes.add(cur.next("gate node"));
                m.source = nodes.add(cur.next("source node"));
                m.bulk = nodes.add(cur.next("bulk node"));
                m.model = cur.next("model name");
                bool saw_w = false, saw_l = false;
                while (!cur.done()) {
                    std::string key = cur.next("parameter");
                    cur.expect("=", "'=' after parameter");
                    double val = cur.next_value("parameter value");
                    if (key == "w") { m.width_m = val; saw_w = true; }
                    else if (key == "l") { m.length_m = val; saw_l = true; }
                    else if (key == "m") {
                        m.multiplier = static_cast<int>(val);
                        if (m.multiplier < 1 || val != m.multiplier)
                            throw ParseError(ParseErrorKind::Syntax, lineno,
                                             "multiplier must be a positive integer");
                    } else
                        throw ParseError(ParseErrorKind::Syntax, lineno,
                                         "unknown MOSFET parameter '" + key + "'");
                }
                if (!saw_w || !saw_l)
                    throw ParseError(ParseErrorKind::Syntax, lineno,
                                     "MOSFET '" + e.name + "' requires W= and L=");
                e.device = m;
                break;
            }
            default:
                throw ParseError(ParseErrorKind::Syntax, lineno,
                                 "unknown element type '" + std::string(1, head[0]) + "'");
        }
        circuit.elements.push_back(std::move(e));
    }

    circuit.nodes = std::move(nodes.order);
    validate_circuit(circuit);
    return circuit;
}

// =============================================================================
// print_netlist
// =============================================================================

/// Canonical netlist text: models first (sorted by name), then elements in
/// order, then analyses, then `.end`. parse_netlist(print_netlist(c)) is
/// structurally equal to c.
inline std::string print_netlist(const Circuit& c) {
    std::string out;
    auto put = [&](const std::string& s) { out += s; out += '\n'; };

    if (c.title) put("* " + *c.title);

    for (const auto& [name, m] : c.models) {
        put(".model " + name + (m.polarity == Polarity::Nmos ? " nmos (" : " pmos (") +
            "vto=" + fmt_double(m.vto) + " kp=" + fmt_double(m.kp) +
            " lambda=" + fmt_double(m.lambda) + " cgs=" + fmt_double(m.cgs) +
            " cgd=" + fmt_double(m.cgd) + ")");
    }

    for (const auto& e : c.elements) {
        std::string line = std::visit(
            [&](const auto& d) -> std::string {
                using T = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<T, Resistor>) {
                    return e.name + " " + d.node_pos + " " + d.node_neg + " " +
                           fmt_double(d.ohms);
                } else if constexpr (std::is_same_v<T, Capacitor>) {
                    std::string s = e.name + " " + d.node_pos + " " + d.node_neg + " " +
                                    fmt_double(d.farads);
                    if (d.initial_volts) s += " ic=" + fmt_double(*d.initial_volts);
                    return s;
                } else if constexpr (std::is_same_v<T, VoltageSource> ||
                                     std::is_same_v<T, CurrentSource>) {
                    double dc;
                    if constexpr (std::is_same_v<T, VoltageSource>) dc = d.dc_volts;
                    else dc = d.dc_amps;
                    std::string s = e.name + " " + d.node_pos + " " + d.node_neg +
                                    " dc " + fmt_double(dc);
                    if (d.ac)
                        s += " ac " + fmt_double(d.ac->magnitude) + " " +
                             fmt_double(d.ac->phase_deg);
                    if (d.pwl) {
                        s += " pwl(";
                        bool first = true;
                        for (const auto& [t, v] : d.pwl->points) {
                            if (!first) s += ' ';
                            s += fmt_double(t) + " " + fmt_double(v);
                            first = false;
                        }
                        s += ')';
                    }
                    return s;
                } else if constexpr (std::is_same_v<T, Vcvs>) {
                    return e.name + " " + d.out_pos + " " + d.out_neg + " " + d.in_pos +
                           " " + d.in_neg + " " + fmt_double(d.gain);
                } else {
                    return e.name + " " + d.drain + " " + d.gate + " " + d.source + " " +
                           d.bulk + " " + d.model + " w=" + fmt_double(d.width_m) +
                           " l=" + fmt_double(d.length_m) +
                           " m=" + std::to_string(d.multiplier);
                }
            },
            e.device);
        put(line);
    }

    for (const auto& a : c.analyses) {
        if (std::holds_alternative<OpDirective>(a)) {
            put(".op");
        } else if (const auto* dc = std::get_if<DcSweepDirective>(&a)) {
            put(".dc " + dc->source + " " + fmt_double(dc->start) + " " +
                fmt_double(dc->stop) + " " + fmt_double(dc->step));
        } else if (const auto* ac = std::get_if<AcDirective>(&a)) {
            put(".ac dec " + std::to_string(ac->points_per_decade) + " " +
                fmt_double(ac->fstart) + " " + fmt_double(ac->fstop));
        } else if (const auto* tr = std::get_if<TranDirective>(&a)) {
            put(".tran " + fmt_double(tr->tstep) + " " + fmt_double(tr->tstop));
        }
    }

    put(".end");
    return out;
}

} // namespace ldosim
