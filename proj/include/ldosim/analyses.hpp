#pragma once

// The four analysis drivers over the engine: operating point, DC sweep,
// small-signal AC and fixed-step trapezoidal transient, plus their CSV
// serializations.

#include "ldosim/engine.hpp"

#include <complex>
#include <functional>
#include <string>
#include <vector>

namespace ldosim {

// =============================================================================
// Result types
// =============================================================================

struct SweepResult {
    std::string source;                 // swept element name
    std::vector<double> values;         // sweep variable, in sweep order
    std::vector<bool> converged;        // per point; never silently interpolated
    std::vector<OperatingPoint> points; // per point (last iterate when flagged)
};

struct AcResponse {
    std::vector<double> freq_hz;                  // strictly increasing, log-spaced
    std::vector<std::complex<double>> values;     // designated output/input ratio
    OperatingPoint bias;
};

/// AC solution for every node, one complex voltage vector per frequency.
/// Frequencies whose system could not be solved are reported in
/// `failed_points` and carry no value row.
struct AcFullResponse {
    std::vector<std::string> node_names;
    std::vector<double> freq_hz;
    std::vector<std::vector<std::complex<double>>> node_values; // [freq][node]
    std::vector<std::pair<double, std::string>> failed_points;  // freq -> reason
    OperatingPoint bias;
};

struct TransientAbort {
    int step = 0;
    double time_s = 0.0;
    std::string reason;
};

struct TransientWaveform {
    std::vector<std::string> node_names;
    std::vector<double> time_s;                    // strictly increasing, t0 = 0
    std::vector<std::vector<double>> node_voltages; // [point][node]
    std::string method = "trapezoidal";
    std::optional<TransientAbort> abort; // set when the run stopped early

    [[nodiscard]] std::vector<double> node_waveform(const std::string& node) const {
        int idx = -1;
        for (std::size_t i = 0; i < node_names.size(); ++i)
            if (node_names[i] == node) idx = static_cast<int>(i);
        if (idx < 0) throw std::out_of_range("unknown node '" + node + "'");
        std::vector<double> out(time_s.size());
        for (std::size_t k = 0; k < time_s.size(); ++k) out[k] = node_voltages[k][idx];
        return out;
    }
};

// =============================================================================
// Operating point and DC sweep
// =============================================================================

inline OperatingPoint run_op(const Circuit& circuit, const NewtonConfig& config = {}) {
    return solve_op(circuit, config);
}

namespace detail {

/// Copy of the circuit with the named source's DC value replaced.
inline void set_source_dc(Circuit& circuit, const std::string& source, double value) {
    for (auto& e : circuit.elements) {
        if (!iequals(e.name, source)) continue;
        if (auto* v = std::get_if<VoltageSource>(&e.device)) {
            v->dc_volts = value;
            return;
        }
        if (auto* i = std::get_if<CurrentSource>(&e.device)) {
            i->dc_amps = value;
            return;
        }
        throw std::invalid_argument("element '" + source + "' is not a V or I source");
    }
    throw std::invalid_argument("unknown source '" + source + "'");
}

inline int sweep_point_count(const DcSweepDirective& d) {
    return static_cast<int>(std::floor((d.stop - d.start) / d.step + 1e-9)) + 1;
}

} // namespace detail

/// Per-point solve in sweep order, each point seeded by the previous
/// solution. Non-converged points are flagged and the previous seed is kept.
inline SweepResult run_dc_sweep(const Circuit& circuit, const DcSweepDirective& directive,
                                const NewtonConfig& config = {}) {
    if (!circuit.find_element(directive.source))
        throw std::invalid_argument("unknown sweep source '" + directive.source + "'");

    SweepResult result;
    result.source = directive.source;

    Circuit work = circuit;
    const SystemPlan plan = make_plan(work);
    StampContext ctx;
    ctx.gmin = config.gmin;

    std::vector<double> seed;
    const int npoints = detail::sweep_point_count(directive);
    for (int k = 0; k < npoints; ++k) {
        const double value = directive.start + k * directive.step;
        detail::set_source_dc(work, directive.source, value);

        NewtonOutcome outcome = newton_iterate(work, plan, config, seed, ctx);
        if (!outcome.converged && k == 0) {
            // First point has no useful seed; give the homotopy a chance.
            try {
                OperatingPoint op = continuation_solve(work, config);
                outcome.converged = true;
                outcome.x = op.solution();
                outcome.devices = op.devices;
                outcome.iterations = op.iterations_used;
            } catch (const ConvergenceError&) {
            }
        }

        result.values.push_back(value);
        result.converged.push_back(outcome.converged);
        result.points.push_back(detail::make_operating_point(plan, work, outcome));
        if (outcome.converged) seed = outcome.x;
    }
    return result;
}

// =============================================================================
// AC analysis
// =============================================================================

namespace detail {

inline std::vector<double> ac_frequency_grid(const AcDirective& d) {
    std::vector<double> freqs;
    const double decades = std::log10(d.fstop / d.fstart);
    const int total = static_cast<int>(std::ceil(decades * d.points_per_decade - 1e-9));
    for (int k = 0; k <= total; ++k) {
        double f = d.fstart * std::pow(10.0, static_cast<double>(k) / d.points_per_decade);
        if (f > d.fstop) f = d.fstop;
        if (!freqs.empty() && f <= freqs.back()) continue;
        freqs.push_back(f);
    }
    if (freqs.back() < d.fstop) freqs.push_back(d.fstop);
    return freqs;
}

inline const Element& single_ac_source(const Circuit& circuit) {
    const Element* found = nullptr;
    for (const auto& e : circuit.elements) {
        const bool flagged =
            std::visit(
                [](const auto& d) {
                    using T = std::decay_t<decltype(d)>;
                    if constexpr (std::is_same_v<T, VoltageSource> ||
                                  std::is_same_v<T, CurrentSource>)
                        return d.ac.has_value() && d.ac->magnitude != 0.0;
                    else
                        return false;
                },
                e.device);
        if (flagged) {
            if (found)
                throw std::invalid_argument(
                    "AC analysis requires exactly one AC-flagged source; found '" +
                    found->name + "' and '" + e.name + "'");
            found = &e;
        }
    }
    if (!found) throw std::invalid_argument("AC analysis requires one AC-flagged source");
    return *found;
}

} // namespace detail

/// Linearize at the bias and solve the complex system on the log grid,
/// returning every node voltage per frequency.
inline AcFullResponse run_ac_full(const Circuit& circuit, const AcDirective& directive,
                                  const NewtonConfig& config = {}) {
    detail::single_ac_source(circuit); // enforces the one-AC-source rule
    const SystemPlan plan = make_plan(circuit);

    AcFullResponse out;
    out.bias = run_op(circuit, config);
    out.node_names = plan.node_names;

    for (double f : detail::ac_frequency_grid(directive)) {
        const double omega = 2.0 * kPi * f;
        SystemMatrix<std::complex<double>> sys =
            assemble_ac(circuit, plan, omega, out.bias.devices, config.gmin);
        try {
            std::vector<std::complex<double>> x = lu_solve(sys);
            x.resize(plan.num_nodes());
            out.freq_hz.push_back(f);
            out.node_values.push_back(std::move(x));
        } catch (const SingularMatrixError& e) {
            out.failed_points.emplace_back(f, e.what());
        }
    }
    return out;
}

/// Transfer from the single AC-flagged source to one output node:
/// value = V(output) / (AC source phasor).
inline AcResponse run_ac(const Circuit& circuit, const AcDirective& directive,
                         const std::string& input_source, const std::string& output_node,
                         const NewtonConfig& config = {}) {
    const Element& src = detail::single_ac_source(circuit);
    if (!detail::iequals(src.name, input_source))
        throw std::invalid_argument("the AC-flagged source is '" + src.name +
                                    "', not '" + input_source + "'");
    const std::complex<double> drive = std::visit(
        [](const auto& d) -> std::complex<double> {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, VoltageSource> || std::is_same_v<T, CurrentSource>)
                return detail::source_ac_value(d.ac);
            else
                return {};
        },
        src.device);

    AcFullResponse full = run_ac_full(circuit, directive, config);
    int out_idx = -1;
    for (std::size_t i = 0; i < full.node_names.size(); ++i)
        if (full.node_names[i] == output_node) out_idx = static_cast<int>(i);
    if (out_idx < 0) throw std::invalid_argument("unknown output node '" + output_node + "'");

    AcResponse resp;
    resp.freq_hz = full.freq_hz;
    resp.bias = std::move(full.bias);
    resp.values.reserve(full.node_values.size());
    for (const auto& nv : full.node_values) resp.values.push_back(nv[out_idx] / drive);
    return resp;
}

// =============================================================================
// Transient analysis
// =============================================================================

namespace detail {

/// DC solve with IC-carrying capacitors pinned by temporary voltage sources;
/// gives the t=0 state and the initial capacitor currents.
inline OperatingPoint transient_initial_point(const Circuit& circuit,
                                              const SystemPlan& plan,
                                              const NewtonConfig& config,
                                              std::vector<CapState>& cap_states) {
    bool any_ic = false;
    for (const auto& cap : plan.caps) any_ic = any_ic || cap.initial_volts.has_value();

    OperatingPoint op;
    std::vector<double> pin_currents(plan.caps.size(), 0.0);
    if (!any_ic) {
        op = run_op(circuit, config);
    } else {
        Circuit pinned = circuit;
        std::vector<std::string> pin_names(plan.caps.size());
        for (std::size_t ci = 0; ci < plan.caps.size(); ++ci) {
            const CapInstance& cap = plan.caps[ci];
            if (!cap.initial_volts) continue;
            const auto& c = std::get<Capacitor>(circuit.elements[cap.element_index].device);
            Element pin;
            pin.name = "v_ic_" + circuit.elements[cap.element_index].name;
            pin_names[ci] = pin.name;
            pin.device = VoltageSource{c.node_pos, c.node_neg, *cap.initial_volts, {}, {}};
            pinned.elements.push_back(std::move(pin));
        }
        OperatingPoint pinned_op = run_op(pinned, config);
        for (std::size_t ci = 0; ci < plan.caps.size(); ++ci)
            if (!pin_names[ci].empty())
                pin_currents[ci] = pinned_op.branch_current(pin_names[ci]);
        // Project onto the original circuit's variables.
        op.node_names = plan.node_names;
        for (const auto& n : plan.node_names) op.node_voltages.push_back(pinned_op.voltage(n));
        for (std::size_t k = 0; k < plan.branch_elements.size(); ++k) {
            const std::string& name = circuit.elements[plan.branch_elements[k]].name;
            op.branch_names.push_back(name);
            op.branch_currents.push_back(pinned_op.branch_current(name));
        }
        op.devices = pinned_op.devices;
        op.iterations_used = pinned_op.iterations_used;
    }

    cap_states.assign(plan.caps.size(), CapState{});
    for (std::size_t ci = 0; ci < plan.caps.size(); ++ci) {
        const CapInstance& cap = plan.caps[ci];
        const double va = cap.node_a < 0 ? 0.0 : op.node_voltages[cap.node_a];
        const double vb = cap.node_b < 0 ? 0.0 : op.node_voltages[cap.node_b];
        cap_states[ci].v_prev = va - vb;
        cap_states[ci].i_prev = pin_currents[ci];
    }
    return op;
}

} // namespace detail

/// Fixed-step integration: backward Euler on the first step to damp startup,
/// trapezoidal afterwards. Each step's Newton solve is seeded by the previous
/// step. A non-converged step aborts and returns the partial waveform.
inline TransientWaveform run_tran(const Circuit& circuit, const TranDirective& directive,
                                  const NewtonConfig& config = {}) {
    const SystemPlan plan = make_plan(circuit);
    TransientWaveform wave;
    wave.node_names = plan.node_names;

    std::vector<CapState> cap_states;
    OperatingPoint op0 = detail::transient_initial_point(circuit, plan, config, cap_states);
    wave.time_s.push_back(0.0);
    wave.node_voltages.push_back(op0.node_voltages);

    std::vector<double> x = op0.solution();
    const int nsteps = static_cast<int>(std::llround(directive.tstop / directive.tstep));

    for (int step = 1; step <= nsteps; ++step) {
        const double t = step * directive.tstep;
        StampContext ctx;
        ctx.kind = AnalysisKind::Transient;
        ctx.timestep = directive.tstep;
        ctx.backward_euler = (step == 1);
        ctx.time = t;
        ctx.gmin = config.gmin;

        NewtonOutcome outcome = newton_iterate(circuit, plan, config, x, ctx, &cap_states);
        if (!outcome.converged) {
            wave.abort = TransientAbort{step, t, outcome.failure};
            return wave;
        }
        x = outcome.x;

        for (std::size_t ci = 0; ci < plan.caps.size(); ++ci) {
            const CapInstance& cap = plan.caps[ci];
            const double va = cap.node_a < 0 ? 0.0 : x[cap.node_a];
            const double vb = cap.node_b < 0 ? 0.0 : x[cap.node_b];
            advance_cap_state(cap_states[ci], va - vb, cap.farads, ctx);
        }

        wave.time_s.push_back(t);
        wave.node_voltages.emplace_back(x.begin(), x.begin() + plan.num_nodes());
    }
    return wave;
}

// =============================================================================
// CSV serialization
// =============================================================================

/// One row per analysis result; headers follow the V(node)/I(src) naming.
inline std::string to_csv(const Circuit& circuit, const OperatingPoint& op) {
    std::string head, row;
    for (std::size_t i = 0; i < op.node_names.size(); ++i) {
        if (!head.empty()) { head += ','; row += ','; }
        head += "V(" + op.node_names[i] + ")";
        row += fmt_double(op.node_voltages[i]);
    }
    for (std::size_t i = 0; i < op.branch_names.size(); ++i) {
        if (!head.empty()) { head += ','; row += ','; }
        head += "I(" + op.branch_names[i] + ")";
        row += fmt_double(op.branch_currents[i]);
    }
    (void)circuit;
    return head + "\n" + row + "\n";
}

inline std::string to_csv(const Circuit& circuit, const SweepResult& sweep) {
    std::string out = sweep.source;
    if (!sweep.points.empty()) {
        for (const auto& n : sweep.points.front().node_names) out += ",V(" + n + ")";
        for (const auto& b : sweep.points.front().branch_names) out += ",I(" + b + ")";
    }
    out += ",converged\n";
    for (std::size_t k = 0; k < sweep.values.size(); ++k) {
        out += fmt_double(sweep.values[k]);
        for (double v : sweep.points[k].node_voltages) out += ',' + fmt_double(v);
        for (double i : sweep.points[k].branch_currents) out += ',' + fmt_double(i);
        out += sweep.converged[k] ? ",1\n" : ",0\n";
    }
    (void)circuit;
    return out;
}

inline std::string to_csv(const AcFullResponse& resp) {
    std::string out = "freq_hz";
    for (const auto& n : resp.node_names)
        out += ",mag_db(V(" + n + ")),phase_deg(V(" + n + "))";
    out += '\n';
    for (std::size_t k = 0; k < resp.freq_hz.size(); ++k) {
        out += fmt_double(resp.freq_hz[k]);
        for (const auto& v : resp.node_values[k]) {
            out += ',' + fmt_double(db20(std::abs(v)));
            out += ',' + fmt_double(std::arg(v) * 180.0 / kPi);
        }
        out += '\n';
    }
    return out;
}

inline std::string to_csv(const AcResponse& resp) {
    std::string out = "freq_hz,mag_db,phase_deg\n";
    for (std::size_t k = 0; k < resp.freq_hz.size(); ++k) {
        out += fmt_double(resp.freq_hz[k]);
        out += ',' + fmt_double(db20(std::abs(resp.values[k])));
        out += ',' + fmt_double(std::arg(resp.values[k]) * 180.0 / kPi);
        out += '\n';
    }
    return out;
}

inline std::string to_csv(const TransientWaveform& wave) {
    std::string out = "time_s";
    for (const auto& n : wave.node_names) out += ",V(" + n + ")";
    out += '\n';
    for (std::size_t k = 0; k < wave.time_s.size(); ++k) {
        out += fmt_double(wave.time_s[k]);
        for (double v : wave.node_voltages[k]) out += ',' + fmt_double(v);
        out += '\n';
    }
    return out;
}

} // namespace ldosim
