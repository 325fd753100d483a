#pragma once

// Circuit data model: elements, MOSFET model cards and analysis directives.
// A Circuit is an immutable value produced by the netlist parser (or a
// builder); all invariants below are enforced before one is handed out,
// so downstream code never sees a partially valid circuit.

#include "ldosim/common.hpp"

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace ldosim {

// =============================================================================
// Errors
// =============================================================================

enum class ParseErrorKind {
    Syntax,
    MalformedNumber,
    UnknownModel,
    DuplicateName,
    NoGroundNode,
};

class ParseError : public std::runtime_error {
public:
    ParseError(ParseErrorKind kind, int line, const std::string& message)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message
                                      : message),
          kind_(kind), line_(line) {}

    [[nodiscard]] ParseErrorKind kind() const { return kind_; }
    [[nodiscard]] int line() const { return line_; }

private:
    ParseErrorKind kind_;
    int line_;
};

// =============================================================================
// Element variants
// =============================================================================

/// Piecewise-linear waveform. Times are strictly increasing; the value is
/// clamped to the first point before t1 and to the last point after tn.
struct Pwl {
    std::vector<std::pair<double, double>> points; // (time_s, value)

    [[nodiscard]] double at(double t) const {
        if (points.empty()) return 0.0;
        if (t <= points.front().first) return points.front().second;
        if (t >= points.back().first) return points.back().second;
        for (std::size_t i = 1; i < points.size(); ++i) {
            if (t <= points[i].first) {
                const auto& [t0, v0] = points[i - 1];
                const auto& [t1, v1] = points[i];
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        return points.back().second;
    }

    bool operator==(const Pwl&) const = default;
};

/// Small-signal drive of an independent source: magnitude and phase.
struct AcSpec {
    double magnitude = 0.0;
    double phase_deg = 0.0;

    bool operator==(const AcSpec&) const = default;
};

struct Resistor {
    std::string node_pos, node_neg;
    double ohms = 0.0;

    bool operator==(const Resistor&) const = default;
};

struct Capacitor {
    std::string node_pos, node_neg;
    double farads = 0.0;
    std::optional<double> initial_volts; // IC=

    bool operator==(const Capacitor&) const = default;
};

struct VoltageSource {
    std::string node_pos, node_neg;
    double dc_volts = 0.0;
    std::optional<AcSpec> ac;
    std::optional<Pwl> pwl; // overrides dc_volts in time-domain contexts

    bool operator==(const VoltageSource&) const = default;
};

struct CurrentSource {
    std::string node_pos, node_neg; // positive current flows node_pos -> node_neg
    double dc_amps = 0.0;
    std::optional<AcSpec> ac;
    std::optional<Pwl> pwl;

    bool operator==(const CurrentSource&) const = default;
};

/// Voltage-controlled voltage source: V(out+,out-) = gain * V(in+,in-).
struct Vcvs {
    std::string out_pos, out_neg, in_pos, in_neg;
    double gain = 0.0;

    bool operator==(const Vcvs&) const = default;
};

struct Mosfet {
    std::string drain, gate, source, bulk;
    std::string model; // model card name, canonical lower case
    double width_m = 0.0;
    double length_m = 0.0;
    int multiplier = 1; // parallel device count

    bool operator==(const Mosfet&) const = default;
};

using Device = std::variant<Resistor, Capacitor, VoltageSource, CurrentSource, Vcvs, Mosfet>;

enum class ElementKind { Resistor, Capacitor, VoltageSource, CurrentSource, Vcvs, Mosfet };

struct Element {
    std::string name; // canonical lower case, unique per circuit
    Device device;
    int line = 0;   // source location for diagnostics; ignored by equality
    int column = 0;

    [[nodiscard]] ElementKind kind() const {
        return static_cast<ElementKind>(device.index());
    }

    /// Node names this element touches, in terminal order.
    [[nodiscard]] std::vector<std::string> terminals() const {
        return std::visit(
            [](const auto& d) -> std::vector<std::string> {
                using T = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<T, Vcvs>)
                    return {d.out_pos, d.out_neg, d.in_pos, d.in_neg};
                else if constexpr (std::is_same_v<T, Mosfet>)
                    return {d.drain, d.gate, d.source, d.bulk};
                else
                    return {d.node_pos, d.node_neg};
            },
            device);
    }
};

inline bool structurally_equal(const Element& a, const Element& b) {
    return a.name == b.name && a.device == b.device;
}

// =============================================================================
// Model cards and analysis directives
// =============================================================================

enum class Polarity { Nmos, Pmos };

/// Level-1 square-law model card. VTO is negative for P devices by
/// convention; CGS/CGD are constant per-device terminal capacitances.
struct ModelCard {
    std::string name;
    Polarity polarity = Polarity::Nmos;
    double vto = 0.0;    // threshold [V]
    double kp = 0.0;     // transconductance parameter [A/V^2], > 0
    double lambda = 0.0; // channel-length modulation [1/V], >= 0
    double cgs = 0.0;    // [F], >= 0
    double cgd = 0.0;    // [F], >= 0

    bool operator==(const ModelCard&) const = default;
};

struct OpDirective {
    bool operator==(const OpDirective&) const = default;
};

struct DcSweepDirective {
    std::string source; // element name of the swept V or I source
    double start = 0.0, stop = 0.0, step = 0.0;

    bool operator==(const DcSweepDirective&) const = default;
};

struct AcDirective {
    int points_per_decade = 10;
    double fstart = 0.0, fstop = 0.0;

    bool operator==(const AcDirective&) const = default;
};

struct TranDirective {
    double tstep = 0.0, tstop = 0.0;

    bool operator==(const TranDirective&) const = default;
};

using AnalysisDirective =
    std::variant<OpDirective, DcSweepDirective, AcDirective, TranDirective>;

// =============================================================================
// Circuit
// =============================================================================

inline bool is_ground(std::string_view node) { return node == "0"; }

/// Ground-referenced node graph. Node "0" is ground ("gnd" is normalized to
/// "0" at parse time); `nodes` lists the non-ground nodes in order of first
/// appearance, which also fixes the MNA row ordering.
struct Circuit {
    std::optional<std::string> title;
    std::vector<std::string> nodes;               // non-ground, first-appearance order
    std::map<std::string, ModelCard> models;      // keyed by canonical name
    std::vector<Element> elements;                // netlist order
    std::vector<AnalysisDirective> analyses;      // netlist order

    [[nodiscard]] const Element* find_element(std::string_view name) const {
        for (const auto& e : elements)
            if (detail::iequals(e.name, name)) return &e;
        return nullptr;
    }

    [[nodiscard]] bool has_node(std::string_view node) const {
        if (is_ground(node)) return true;
        for (const auto& n : nodes)
            if (n == node) return true;
        return false;
    }
};

inline bool structurally_equal(const Circuit& a, const Circuit& b) {
    if (a.title != b.title) return false;
    if (a.nodes != b.nodes) return false;
    if (a.models != b.models) return false;
    if (a.analyses != b.analyses) return false;
    if (a.elements.size() != b.elements.size()) return false;
    for (std::size_t i = 0; i < a.elements.size(); ++i)
        if (!structurally_equal(a.elements[i], b.elements[i])) return false;
    return true;
}

// =============================================================================
// Validation
// =============================================================================

namespace detail {

inline void require(bool ok, ParseErrorKind kind, int line, const std::string& msg) {
    if (!ok) throw ParseError(kind, line, msg);
}

} // namespace detail

/// Enforce all Circuit invariants; throws ParseError on the first violation.
/// Used by the parser and by circuit builders before a Circuit escapes.
inline void validate_circuit(const Circuit& c) {
    using detail::require;

    bool touches_ground = false;
    std::map<std::string, int> seen_names;
    for (const auto& e : c.elements) {
        auto [it, inserted] = seen_names.emplace(e.name, e.line);
        require(inserted, ParseErrorKind::DuplicateName, e.line,
                "duplicate element name '" + e.name + "' (first defined on line " +
                    std::to_string(it->second) + ")");
        for (const auto& t : e.terminals()) {
            if (is_ground(t)) touches_ground = true;
            require(c.has_node(t), ParseErrorKind::Syntax, e.line,
                    "element '" + e.name + "' references unknown node '" + t + "'");
        }

        std::visit(
            [&](const auto& d) {
                using T = std::decay_t<decltype(d)>;
                auto finite_positive = [&](double v, const char* what) {
                    require(std::isfinite(v) && v > 0.0, ParseErrorKind::Syntax, e.line,
                            std::string(what) + " of '" + e.name + "' must be positive and finite");
                };
                if constexpr (std::is_same_v<T, Resistor>) {
                    finite_positive(d.ohms, "resistance");
                } else if constexpr (std::is_same_v<T, Capacitor>) {
                    finite_positive(d.farads, "capacitance");
                } else if constexpr (std::is_same_v<T, VoltageSource> ||
                                     std::is_same_v<T, CurrentSource>) {
                    double dc_value = 0.0;
                    if constexpr (std::is_same_v<T, VoltageSource>) dc_value = d.dc_volts;
                    else dc_value = d.dc_amps;
                    require(std::isfinite(dc_value), ParseErrorKind::Syntax, e.line,
                            "source value of '" + e.name + "' must be finite");
                    if (d.pwl) {
                        require(!d.pwl->points.empty(), ParseErrorKind::Syntax, e.line,
                                "PWL of '" + e.name + "' needs at least one point");
                        for (std::size_t i = 1; i < d.pwl->points.size(); ++i)
                            require(d.pwl->points[i].first > d.pwl->points[i - 1].first,
                                    ParseErrorKind::Syntax, e.line,
                                    "PWL times of '" + e.name + "' must be strictly increasing");
                    }
                } else if constexpr (std::is_same_v<T, Vcvs>) {
                    require(std::isfinite(d.gain), ParseErrorKind::Syntax, e.line,
                            "gain of '" + e.name + "' must be finite");
                } else if constexpr (std::is_same_v<T, Mosfet>) {
                    finite_positive(d.width_m, "width");
                    finite_positive(d.length_m, "length");
                    require(d.multiplier >= 1, ParseErrorKind::Syntax, e.line,
                            "multiplier of '" + e.name + "' must be >= 1");
                    auto it2 = c.models.find(d.model);
                    require(it2 != c.models.end(), ParseErrorKind::UnknownModel, e.line,
                            "element '" + e.name + "' references unknown model '" + d.model + "'");
                }
            },
            e.device);
    }

    require(c.elements.empty() || touches_ground, ParseErrorKind::NoGroundNode, 0,
            "no element is connected to ground node '0'");

    for (const auto& [name, m] : c.models) {
        require(std::isfinite(m.vto), ParseErrorKind::Syntax, 0,
                "model '" + name + "': VTO must be finite");
        require(std::isfinite(m.kp) && m.kp > 0.0, ParseErrorKind::Syntax, 0,
                "model '" + name + "': KP must be > 0");
        require(std::isfinite(m.lambda) && m.lambda >= 0.0, ParseErrorKind::Syntax, 0,
                "model '" + name + "': LAMBDA must be >= 0");
        require(m.cgs >= 0.0 && m.cgd >= 0.0, ParseErrorKind::Syntax, 0,
                "model '" + name + "': CGS/CGD must be >= 0");
    }

    for (const auto& a : c.analyses) {
        if (const auto* dc = std::get_if<DcSweepDirective>(&a)) {
            require(c.find_element(dc->source) != nullptr, ParseErrorKind::Syntax, 0,
                    ".dc references unknown source '" + dc->source + "'");
            require(dc->start != dc->stop, ParseErrorKind::Syntax, 0,
                    ".dc start and stop must differ");
            require(dc->step != 0.0 && (dc->stop - dc->start) * dc->step > 0.0,
                    ParseErrorKind::Syntax, 0,
                    ".dc step sign must agree with sweep direction");
        } else if (const auto* ac = std::get_if<AcDirective>(&a)) {
            require(ac->points_per_decade >= 1, ParseErrorKind::Syntax, 0,
                    ".ac needs at least one point per decade");
            require(ac->fstart > 0.0 && ac->fstop > ac->fstart, ParseErrorKind::Syntax, 0,
                    ".ac requires 0 < fstart < fstop");
        } else if (const auto* tr = std::get_if<TranDirective>(&a)) {
            require(tr->tstep > 0.0 && tr->tstop > tr->tstep, ParseErrorKind::Syntax, 0,
                    ".tran requires 0 < tstep < tstop");
        }
    }
}

} // namespace ldosim
