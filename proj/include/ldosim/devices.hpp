#pragma once

// Element evaluation into MNA stamp contributions. Linear elements stamp
// directly; MOSFETs go through the Level-1 square-law model which returns
// the linearized (gm, gds, Ieq) triple for Newton iteration.

#include "ldosim/circuit.hpp"

#include <complex>
#include <stdexcept>
#include <vector>

namespace ldosim {

// =============================================================================
// Stamp containers
// =============================================================================

enum class AnalysisKind { Dc, Ac, Transient };

/// Per-assembly context. `source_scale` is the source-stepping homotopy
/// factor; `gmin` is the conductance tied from every node to ground and the
/// floor under MOSFET gds; `gshunt` is the extra node-to-ground conductance
/// applied by gmin stepping (zero outside the homotopy).
struct StampContext {
    AnalysisKind kind = AnalysisKind::Dc;
    double omega = 0.0;          // AC angular frequency [rad/s]
    double timestep = 0.0;       // transient step [s]
    bool backward_euler = false; // first transient step
    double time = 0.0;           // absolute time for PWL evaluation [s]
    double source_scale = 1.0;
    double gmin = 1e-12;
    double gshunt = 0.0;
};

struct MatrixEntry {
    int row = -1, col = -1; // -1 denotes ground; dropped on apply
    double value = 0.0;
};

struct RhsEntry {
    int row = -1;
    std::complex<double> value;
};

/// Matrix and right-hand-side contributions of one element. `capacitance`
/// entries carry plain farads and are scaled by j*omega when an AC system is
/// assembled; DC and transient assemblies ignore them (transient caps stamp
/// their companion model into `conductance`/`rhs` instead).
struct StampSet {
    std::vector<MatrixEntry> conductance;
    std::vector<MatrixEntry> capacitance;
    std::vector<RhsEntry> rhs;

    void g(int row, int col, double v) { conductance.push_back({row, col, v}); }
    void c(int row, int col, double v) { capacitance.push_back({row, col, v}); }
    void b(int row, std::complex<double> v) { rhs.push_back({row, v}); }

    /// Two-terminal admittance pattern.
    void g_pair(int a, int bnode, double v) {
        g(a, a, v);
        g(bnode, bnode, v);
        g(a, bnode, -v);
        g(bnode, a, -v);
    }
    void c_pair(int a, int bnode, double v) {
        c(a, a, v);
        c(bnode, bnode, v);
        c(a, bnode, -v);
        c(bnode, a, -v);
    }
};

class UnsupportedElementError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// =============================================================================
// Level-1 MOSFET model
// =============================================================================

enum class MosRegion { Cutoff, Triode, Saturation };

/// Polarity-normalized large/small-signal evaluation at one bias point.
/// All quantities refer to the equivalent N-type device after sign
/// normalization (and drain/source swap when the channel conducts backwards),
/// so id >= 0, gm >= 0 and gds >= gmin always hold.
struct MosfetEval {
    MosRegion region = MosRegion::Cutoff;
    double id = 0.0;   // drain current [A]
    double gm = 0.0;   // dId/dVgs [S]
    double gds = 0.0;  // dId/dVds [S], floored at gmin
    double ieq = 0.0;  // id - gm*vgs - gds*vds at the linearization point [A]
    bool reversed = false; // true when the source terminal acts as the drain
    double vgs = 0.0;  // normalized voltages actually used
    double vds = 0.0;
};

/// Evaluate the square-law model at raw terminal voltages. P-polarity inputs
/// are sign-normalized internally; a negative normalized Vds is handled by
/// the symmetric drain/source swap. Total over finite inputs.
inline MosfetEval mosfet_eval(const ModelCard& model, double vgs_raw, double vds_raw,
                              double width_m, double length_m, int multiplier,
                              double gmin = 1e-12) {
    const double sign = model.polarity == Polarity::Nmos ? 1.0 : -1.0;
    double vgs = sign * vgs_raw;
    double vds = sign * vds_raw;
    const double vto = sign * model.vto;

    MosfetEval ev;
    if (vds < 0.0) {
        // Conduction with swapped terminals: gate-to-effective-source voltage.
        ev.reversed = true;
        vgs = vgs - vds;
        vds = -vds;
    }
    ev.vgs = vgs;
    ev.vds = vds;

    const double beta = model.kp * (width_m / length_m) * static_cast<double>(multiplier);
    const double vov = vgs - vto;
    const double clm = 1.0 + model.lambda * vds;

    if (vov <= 0.0) {
        ev.region = MosRegion::Cutoff;
        ev.id = 0.0;
        ev.gm = 0.0;
        ev.gds = gmin;
    } else if (vds < vov) {
        ev.region = MosRegion::Triode;
        const double core = vov * vds - 0.5 * vds * vds;
        ev.id = beta * core * clm;
        ev.gm = beta * vds * clm;
        ev.gds = beta * (vov - vds) * clm + beta * core * model.lambda;
    } else {
        ev.region = MosRegion::Saturation;
        ev.id = 0.5 * beta * vov * vov * clm;
        ev.gm = beta * vov * clm;
        ev.gds = 0.5 * beta * vov * vov * model.lambda;
    }
    if (ev.gds < gmin) ev.gds = gmin;
    ev.ieq = ev.id - ev.gm * ev.vgs - ev.gds * ev.vds;
    return ev;
}

/// Newton linearization stamps for a MOSFET whose terminals resolve to the
/// given rows (-1 = ground). The gm/gds pattern is polarity-independent; the
/// equivalent current changes sign for P devices and the drain/source roles
/// swap in reverse conduction.
inline StampSet mosfet_stamp(const MosfetEval& ev, Polarity polarity, int drain, int gate,
                             int source) {
    int d = drain, s = source;
    if (ev.reversed) std::swap(d, s);
    const double sign = polarity == Polarity::Nmos ? 1.0 : -1.0;

    StampSet st;
    st.g(d, gate, ev.gm);
    st.g(d, d, ev.gds);
    st.g(d, s, -(ev.gm + ev.gds));
    st.g(s, gate, -ev.gm);
    st.g(s, d, -ev.gds);
    st.g(s, s, ev.gm + ev.gds);

    const double irhs = sign * ev.ieq; // current entering the effective drain
    st.b(d, -irhs);
    st.b(s, irhs);
    return st;
}

/// Small-signal stamps at a converged bias: the same gm/gds pattern plus the
/// constant gate capacitances, which provide the Miller feedback path.
inline StampSet mosfet_ac_stamp(const MosfetEval& ev, const ModelCard& model, int drain,
                                int gate, int source, int multiplier) {
    int d = drain, s = source;
    if (ev.reversed) std::swap(d, s);

    StampSet st;
    st.g(d, gate, ev.gm);
    st.g(d, d, ev.gds);
    st.g(d, s, -(ev.gm + ev.gds));
    st.g(s, gate, -ev.gm);
    st.g(s, d, -ev.gds);
    st.g(s, s, ev.gm + ev.gds);

    const double m = static_cast<double>(multiplier);
    if (model.cgs > 0.0) st.c_pair(gate, source, model.cgs * m);
    if (model.cgd > 0.0) st.c_pair(gate, drain, model.cgd * m);
    return st;
}

// =============================================================================
// Linear element stamps
// =============================================================================

/// Trapezoidal companion state of one capacitor: voltage across and current
/// through it at the end of the previous accepted step.
struct CapState {
    double v_prev = 0.0;
    double i_prev = 0.0;
};

/// Companion-model stamp for a capacitor between two rows. DC: open. AC:
/// reactive entry. Transient: conductance 2C/h (C/h on the damped first
/// step) plus the history current.
inline StampSet stamp_capacitor(int na, int nb, double farads, const StampContext& ctx,
                                const CapState* state) {
    StampSet st;
    switch (ctx.kind) {
        case AnalysisKind::Dc:
            break;
        case AnalysisKind::Ac:
            st.c_pair(na, nb, farads);
            break;
        case AnalysisKind::Transient: {
            const double k = (ctx.backward_euler ? 1.0 : 2.0) * farads / ctx.timestep;
            const CapState hist = state ? *state : CapState{};
            const double ihist = ctx.backward_euler
                                     ? -k * hist.v_prev
                                     : -(k * hist.v_prev + hist.i_prev);
            st.g_pair(na, nb, k);
            st.b(na, -ihist);
            st.b(nb, ihist);
            break;
        }
    }
    return st;
}

/// Update a capacitor companion state after a solve; `v_now` is the voltage
/// across the capacitor at the accepted time point.
inline void advance_cap_state(CapState& state, double v_now, double farads,
                              const StampContext& ctx) {
    const double k = (ctx.backward_euler ? 1.0 : 2.0) * farads / ctx.timestep;
    const double i_now = ctx.backward_euler ? k * (v_now - state.v_prev)
                                            : k * (v_now - state.v_prev) - state.i_prev;
    state.v_prev = v_now;
    state.i_prev = i_now;
}

namespace detail {

/// Time/scale-resolved operating value of an independent source.
inline double source_dc_value(double dc, const std::optional<Pwl>& pwl,
                              const StampContext& ctx) {
    const double base = pwl ? pwl->at(ctx.time) : dc;
    return base * ctx.source_scale;
}

inline std::complex<double> source_ac_value(const std::optional<AcSpec>& ac) {
    if (!ac) return {0.0, 0.0};
    const double rad = ac->phase_deg * kPi / 180.0;
    return std::polar(ac->magnitude, rad);
}

} // namespace detail

/// Resolved row indices for one element: node rows in terminal order plus the
/// auxiliary branch row for voltage-defined elements (-1 if none).
struct StampRows {
    std::vector<int> nodes;
    int branch = -1;
};

/// Stamp a linear element (R, C, V, I, E). MOSFETs are rejected; they go
/// through the mosfet_eval / mosfet_stamp path.
inline StampSet stamp_linear(const Element& e, const StampRows& rows,
                             const StampContext& ctx, const CapState* cap_state = nullptr) {
    StampSet st;
    std::visit(
        [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Resistor>) {
                st.g_pair(rows.nodes[0], rows.nodes[1], 1.0 / d.ohms);
            } else if constexpr (std::is_same_v<T, Capacitor>) {
                st = stamp_capacitor(rows.nodes[0], rows.nodes[1], d.farads, ctx, cap_state);
            } else if constexpr (std::is_same_v<T, VoltageSource>) {
                const int np = rows.nodes[0], nn = rows.nodes[1], br = rows.branch;
                st.g(np, br, 1.0);
                st.g(nn, br, -1.0);
                st.g(br, np, 1.0);
                st.g(br, nn, -1.0);
                if (ctx.kind == AnalysisKind::Ac)
                    st.b(br, detail::source_ac_value(d.ac));
                else
                    st.b(br, detail::source_dc_value(d.dc_volts, d.pwl, ctx));
            } else if constexpr (std::is_same_v<T, CurrentSource>) {
                const int np = rows.nodes[0], nn = rows.nodes[1];
                std::complex<double> value =
                    ctx.kind == AnalysisKind::Ac
                        ? detail::source_ac_value(d.ac)
                        : std::complex<double>(detail::source_dc_value(d.dc_amps, d.pwl, ctx));
                st.b(np, -value);
                st.b(nn, value);
            } else if constexpr (std::is_same_v<T, Vcvs>) {
                const int op = rows.nodes[0], on = rows.nodes[1];
                const int ip = rows.nodes[2], in = rows.nodes[3];
                const int br = rows.branch;
                st.g(op, br, 1.0);
                st.g(on, br, -1.0);
                st.g(br, op, 1.0);
                st.g(br, on, -1.0);
                st.g(br, ip, -d.gain);
                st.g(br, in, d.gain);
            } else {
                throw UnsupportedElementError(
                    "stamp_linear: MOSFET '" + e.name + "' is not a linear element");
            }
        },
        e.device);
    return st;
}

} // namespace ldosim
