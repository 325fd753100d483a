#pragma once

// MNA system assembly and solution: dense LU with partial pivoting for the
// linear systems, damped Newton-Raphson with gmin/source-stepping homotopies
// for nonlinear DC. Everything here is deterministic: fixed iteration order,
// no randomized pivoting, identical inputs give bit-identical outputs.

#include "ldosim/devices.hpp"

#include <cmath>
#include <complex>
#include <string>
#include <unordered_map>
#include <vector>

namespace ldosim {

// =============================================================================
// System matrix and LU solve
// =============================================================================

class SingularMatrixError : public std::runtime_error {
public:
    SingularMatrixError(int row, const std::string& label)
        : std::runtime_error("singular system matrix at row " + std::to_string(row) +
                             " (" + label + "); the circuit has a floating or "
                             "inconsistent node"),
          row_(row), label_(label) {}

    [[nodiscard]] int row() const { return row_; }
    [[nodiscard]] const std::string& label() const { return label_; }

private:
    int row_;
    std::string label_;
};

/// Dense MNA system over real or complex scalars. Dimension is
/// (#non-ground nodes) + (#auxiliary branches); `labels` names each row.
template <typename Scalar>
struct SystemMatrix {
    int n = 0;
    std::vector<Scalar> a; // row-major n*n
    std::vector<Scalar> b;
    std::vector<std::string> labels;

    explicit SystemMatrix(int dim = 0) { resize(dim); }

    void resize(int dim) {
        n = dim;
        a.assign(static_cast<std::size_t>(dim) * dim, Scalar{});
        b.assign(dim, Scalar{});
    }

    Scalar& at(int r, int c) { return a[static_cast<std::size_t>(r) * n + c]; }
    [[nodiscard]] Scalar at(int r, int c) const {
        return a[static_cast<std::size_t>(r) * n + c];
    }

    void add(int r, int c, Scalar v) {
        if (r < 0 || c < 0) return; // ground row/column eliminated
        at(r, c) += v;
    }
    void add_rhs(int r, Scalar v) {
        if (r < 0) return;
        b[r] += v;
    }
};

/// Solve A x = b by LU factorization with partial pivoting (largest absolute
/// column entry). Throws SingularMatrixError when a pivot falls below
/// 1e-13 times the max-abs matrix norm.
template <typename Scalar>
std::vector<Scalar> lu_solve(const SystemMatrix<Scalar>& system) {
    const int n = system.n;
    std::vector<Scalar> a = system.a;
    std::vector<Scalar> x = system.b;
    auto at = [&](int r, int c) -> Scalar& {
        return a[static_cast<std::size_t>(r) * n + c];
    };

    double norm = 0.0;
    for (const Scalar& v : a) norm = std::max(norm, std::abs(v));
    const double pivot_floor = 1e-13 * norm;

    for (int k = 0; k < n; ++k) {
        int pivot_row = k;
        double best = std::abs(at(k, k));
        for (int r = k + 1; r < n; ++r) {
            const double mag = std::abs(at(r, k));
            if (mag > best) {
                best = mag;
                pivot_row = r;
            }
        }
        if (!(best > pivot_floor) || !std::isfinite(best)) {
            const std::string label =
                k < static_cast<int>(system.labels.size()) ? system.labels[k] : "?";
            throw SingularMatrixError(k, label);
        }
        if (pivot_row != k) {
            for (int c = 0; c < n; ++c) std::swap(at(k, c), at(pivot_row, c));
            std::swap(x[k], x[pivot_row]);
        }
        const Scalar pivot = at(k, k);
        for (int r = k + 1; r < n; ++r) {
            const Scalar factor = at(r, k) / pivot;
            if (factor == Scalar{}) continue;
            at(r, k) = Scalar{};
            for (int c = k + 1; c < n; ++c) at(r, c) -= factor * at(k, c);
            x[r] -= factor * x[k];
        }
    }
    for (int k = n - 1; k >= 0; --k) {
        Scalar sum = x[k];
        for (int c = k + 1; c < n; ++c) sum -= at(k, c) * x[c];
        x[k] = sum / at(k, k);
    }
    return x;
}

// =============================================================================
// System plan: row indexing and capacitor enumeration
// =============================================================================

enum class CapOrigin { Explicit, GateSource, GateDrain };

/// One physical capacitance in the circuit: an explicit C element or a
/// MOSFET terminal capacitance (already scaled by the device multiplier).
struct CapInstance {
    int node_a = -1, node_b = -1;
    double farads = 0.0;
    std::size_t element_index = 0;
    CapOrigin origin = CapOrigin::Explicit;
    std::optional<double> initial_volts;
};

/// Fixed row assignment for a circuit: non-ground nodes first (in circuit
/// order), then one auxiliary branch per voltage-defined element (V, E).
struct SystemPlan {
    std::vector<std::string> node_names;
    std::unordered_map<std::string, int> node_index; // ground absent
    std::vector<std::size_t> branch_elements;        // element indices owning branches
    std::unordered_map<std::string, int> branch_of_element; // name -> row
    std::vector<std::string> row_labels;
    std::vector<CapInstance> caps;

    [[nodiscard]] int num_nodes() const { return static_cast<int>(node_names.size()); }
    [[nodiscard]] int dimension() const {
        return num_nodes() + static_cast<int>(branch_elements.size());
    }

    [[nodiscard]] int node(const std::string& name) const {
        if (is_ground(name)) return -1;
        return node_index.at(name);
    }

    [[nodiscard]] StampRows rows_for(const Element& e) const {
        StampRows rows;
        for (const auto& t : e.terminals()) rows.nodes.push_back(node(t));
        auto it = branch_of_element.find(e.name);
        rows.branch = it == branch_of_element.end() ? -1 : it->second;
        return rows;
    }
};

inline SystemPlan make_plan(const Circuit& circuit) {
    SystemPlan plan;
    plan.node_names = circuit.nodes;
    for (int i = 0; i < static_cast<int>(circuit.nodes.size()); ++i) {
        plan.node_index.emplace(circuit.nodes[i], i);
        plan.row_labels.push_back("v(" + circuit.nodes[i] + ")");
    }
    for (std::size_t ei = 0; ei < circuit.elements.size(); ++ei) {
        const Element& e = circuit.elements[ei];
        if (e.kind() == ElementKind::VoltageSource || e.kind() == ElementKind::Vcvs) {
            const int row = plan.dimension();
            plan.branch_elements.push_back(ei);
            plan.branch_of_element.emplace(e.name, row);
            plan.row_labels.push_back("i(" + e.name + ")");
        }
    }
    for (std::size_t ei = 0; ei < circuit.elements.size(); ++ei) {
        const Element& e = circuit.elements[ei];
        if (const auto* c = std::get_if<Capacitor>(&e.device)) {
            plan.caps.push_back({plan.node(c->node_pos), plan.node(c->node_neg), c->farads,
                                 ei, CapOrigin::Explicit, c->initial_volts});
        } else if (const auto* m = std::get_if<Mosfet>(&e.device)) {
            const ModelCard& card = circuit.models.at(m->model);
            const double mult = static_cast<double>(m->multiplier);
            if (card.cgs > 0.0)
                plan.caps.push_back({plan.node(m->gate), plan.node(m->source),
                                     card.cgs * mult, ei, CapOrigin::GateSource, {}});
            if (card.cgd > 0.0)
                plan.caps.push_back({plan.node(m->gate), plan.node(m->drain),
                                     card.cgd * mult, ei, CapOrigin::GateDrain, {}});
        }
    }
    return plan;
}

// =============================================================================
// Assembly
// =============================================================================

/// Per-MOSFET record of the linearization used in an assembly.
struct MosfetOp {
    std::size_t element_index = 0;
    std::string name;
    MosfetEval eval;
    double vgs_raw = 0.0, vds_raw = 0.0;
};

struct Assembly {
    SystemMatrix<double> sys;
    std::vector<MosfetOp> devices;
    std::vector<double> node_scale; // max |element current| incident per node row
};

namespace detail {

inline void apply_stamp(SystemMatrix<double>& sys, const StampSet& st) {
    for (const auto& en : st.conductance) sys.add(en.row, en.col, en.value);
    for (const auto& en : st.rhs) sys.add_rhs(en.row, en.value.real());
}

inline void apply_stamp_ac(SystemMatrix<std::complex<double>>& sys, const StampSet& st,
                           double omega) {
    for (const auto& en : st.conductance) sys.add(en.row, en.col, {en.value, 0.0});
    for (const auto& en : st.capacitance)
        sys.add(en.row, en.col, {0.0, omega * en.value});
    for (const auto& en : st.rhs) sys.add_rhs(en.row, en.value);
}

inline void bump_scale(std::vector<double>& scale, int row, double current) {
    if (row < 0) return;
    scale[row] = std::max(scale[row], std::abs(current));
}

inline double voltage_at(const std::vector<double>& x, int row) {
    return row < 0 ? 0.0 : x[row];
}

} // namespace detail

/// Assemble the real (DC or transient-companion) MNA system linearized at x.
/// `cap_states` must align with plan.caps for transient assemblies.
inline Assembly assemble_real(const Circuit& circuit, const SystemPlan& plan,
                              const StampContext& ctx, const std::vector<double>& x,
                              const std::vector<CapState>* cap_states = nullptr) {
    Assembly out;
    out.sys.resize(plan.dimension());
    out.sys.labels = plan.row_labels;
    out.node_scale.assign(plan.dimension(), 0.0);

    using detail::bump_scale;
    using detail::voltage_at;

    for (std::size_t ei = 0; ei < circuit.elements.size(); ++ei) {
        const Element& e = circuit.elements[ei];
        const StampRows rows = plan.rows_for(e);
        switch (e.kind()) {
            case ElementKind::Capacitor:
                break; // handled through plan.caps below
            case ElementKind::Mosfet: {
                const auto& m = std::get<Mosfet>(e.device);
                const ModelCard& card = circuit.models.at(m.model);
                const double vd = voltage_at(x, rows.nodes[0]);
                const double vg = voltage_at(x, rows.nodes[1]);
                const double vs = voltage_at(x, rows.nodes[2]);
                MosfetOp op;
                op.element_index = ei;
                op.name = e.name;
                op.vgs_raw = vg - vs;
                op.vds_raw = vd - vs;
                op.eval = mosfet_eval(card, op.vgs_raw, op.vds_raw, m.width_m, m.length_m,
                                      m.multiplier, ctx.gmin);
                detail::apply_stamp(out.sys, mosfet_stamp(op.eval, card.polarity,
                                                          rows.nodes[0], rows.nodes[1],
                                                          rows.nodes[2]));
                bump_scale(out.node_scale, rows.nodes[0], op.eval.id);
                bump_scale(out.node_scale, rows.nodes[2], op.eval.id);
                out.devices.push_back(std::move(op));
                break;
            }
            default: {
                detail::apply_stamp(out.sys, stamp_linear(e, rows, ctx));
                // Current magnitudes for the KCL residual scale.
                if (const auto* r = std::get_if<Resistor>(&e.device)) {
                    const double i = (voltage_at(x, rows.nodes[0]) -
                                      voltage_at(x, rows.nodes[1])) / r->ohms;
                    bump_scale(out.node_scale, rows.nodes[0], i);
                    bump_scale(out.node_scale, rows.nodes[1], i);
                } else if (std::get_if<VoltageSource>(&e.device) ||
                           std::get_if<Vcvs>(&e.device)) {
                    const double i = rows.branch < static_cast<int>(x.size())
                                         ? x[rows.branch] : 0.0;
                    bump_scale(out.node_scale, rows.nodes[0], i);
                    bump_scale(out.node_scale, rows.nodes[1], i);
                } else if (const auto* s = std::get_if<CurrentSource>(&e.device)) {
                    const double i = detail::source_dc_value(s->dc_amps, s->pwl, ctx);
                    bump_scale(out.node_scale, rows.nodes[0], i);
                    bump_scale(out.node_scale, rows.nodes[1], i);
                }
                break;
            }
        }
    }

    if (ctx.kind == AnalysisKind::Transient) {
        for (std::size_t ci = 0; ci < plan.caps.size(); ++ci) {
            const CapInstance& cap = plan.caps[ci];
            const CapState* st = cap_states ? &(*cap_states)[ci] : nullptr;
            detail::apply_stamp(out.sys,
                                stamp_capacitor(cap.node_a, cap.node_b, cap.farads, ctx, st));
            if (st) {
                const double k = (ctx.backward_euler ? 1.0 : 2.0) * cap.farads / ctx.timestep;
                const double v = detail::voltage_at(x, cap.node_a) -
                                 detail::voltage_at(x, cap.node_b);
                const double i = ctx.backward_euler
                                     ? k * (v - st->v_prev)
                                     : k * (v - st->v_prev) - st->i_prev;
                bump_scale(out.node_scale, cap.node_a, i);
                bump_scale(out.node_scale, cap.node_b, i);
            }
        }
    }

    // gmin from every node to ground keeps cutoff devices and floating nodes
    // from producing a singular matrix; gshunt is the homotopy ladder.
    const double shunt = ctx.gmin + ctx.gshunt;
    if (shunt > 0.0) {
        for (int i = 0; i < plan.num_nodes(); ++i) out.sys.add(i, i, shunt);
    }
    return out;
}

/// Assemble the complex small-signal system at a converged bias.
inline SystemMatrix<std::complex<double>>
assemble_ac(const Circuit& circuit, const SystemPlan& plan, double omega,
            const std::vector<MosfetOp>& bias_devices, double gmin = 1e-12) {
    SystemMatrix<std::complex<double>> sys(plan.dimension());
    sys.labels = plan.row_labels;

    StampContext ctx;
    ctx.kind = AnalysisKind::Ac;
    ctx.omega = omega;
    ctx.gmin = gmin;

    std::size_t dev = 0;
    for (std::size_t ei = 0; ei < circuit.elements.size(); ++ei) {
        const Element& e = circuit.elements[ei];
        const StampRows rows = plan.rows_for(e);
        if (e.kind() == ElementKind::Mosfet) {
            const auto& m = std::get<Mosfet>(e.device);
            const ModelCard& card = circuit.models.at(m.model);
            while (dev < bias_devices.size() && bias_devices[dev].element_index != ei) ++dev;
            const MosfetEval& ev = bias_devices.at(dev).eval;
            detail::apply_stamp_ac(sys,
                                   mosfet_ac_stamp(ev, card, rows.nodes[0], rows.nodes[1],
                                                   rows.nodes[2], m.multiplier),
                                   omega);
        } else {
            detail::apply_stamp_ac(sys, stamp_linear(e, rows, ctx), omega);
        }
    }
    if (gmin > 0.0)
        for (int i = 0; i < plan.num_nodes(); ++i) sys.add(i, i, {gmin, 0.0});
    return sys;
}

// =============================================================================
// Newton-Raphson DC solve
// =============================================================================

struct NewtonConfig {
    double reltol = 1e-3;
    double vntol = 1e-6;   // [V]
    double abstol = 1e-12; // [A]
    int max_iterations = 100;
    double dv_clamp = 0.5; // max node-voltage change per iteration [V]
    int gmin_steps = 10;
    int source_steps = 10;
    double gmin = 1e-12;
};

class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Converged bias point: node voltages, auxiliary branch currents and the
/// small-signal linearization of every MOSFET.
struct OperatingPoint {
    std::vector<std::string> node_names;
    std::vector<double> node_voltages;
    std::vector<std::string> branch_names;
    std::vector<double> branch_currents;
    std::vector<MosfetOp> devices;
    int iterations_used = 0;

    [[nodiscard]] double voltage(const std::string& node) const {
        if (is_ground(node)) return 0.0;
        for (std::size_t i = 0; i < node_names.size(); ++i)
            if (node_names[i] == node) return node_voltages[i];
        throw std::out_of_range("unknown node '" + node + "'");
    }

    [[nodiscard]] double branch_current(const std::string& element) const {
        for (std::size_t i = 0; i < branch_names.size(); ++i)
            if (branch_names[i] == element) return branch_currents[i];
        throw std::out_of_range("element '" + element + "' has no branch current");
    }

    [[nodiscard]] const MosfetOp* device(const std::string& name) const {
        for (const auto& d : devices)
            if (d.name == name) return &d;
        return nullptr;
    }

    /// Full solution vector (node voltages then branch currents), usable as
    /// the seed of a follow-up solve.
    [[nodiscard]] std::vector<double> solution() const {
        std::vector<double> x = node_voltages;
        x.insert(x.end(), branch_currents.begin(), branch_currents.end());
        return x;
    }
};

struct NewtonOutcome {
    bool converged = false;
    std::vector<double> x;
    std::vector<MosfetOp> devices;
    int iterations = 0;
    std::string failure; // diagnostic when not converged
};

namespace detail {

inline bool circuit_is_linear(const Circuit& c) {
    for (const auto& e : c.elements)
        if (e.kind() == ElementKind::Mosfet) return false;
    return true;
}

/// Residual of the nonlinear system at x given the assembly linearized at x:
/// for node rows this is exactly the KCL current imbalance.
inline std::vector<double> residual_at(const Assembly& asmb, const std::vector<double>& x) {
    const int n = asmb.sys.n;
    std::vector<double> r(n, 0.0);
    for (int row = 0; row < n; ++row) {
        double acc = -asmb.sys.b[row];
        for (int col = 0; col < n; ++col) acc += asmb.sys.at(row, col) * x[col];
        r[row] = acc;
    }
    return r;
}

} // namespace detail

/// Damped Newton iteration. Does not throw on non-convergence; callers decide
/// whether to fall back to a homotopy.
inline NewtonOutcome newton_iterate(const Circuit& circuit, const SystemPlan& plan,
                                    const NewtonConfig& config, std::vector<double> x,
                                    const StampContext& ctx,
                                    const std::vector<CapState>* cap_states = nullptr) {
    const int dim = plan.dimension();
    const int nodes = plan.num_nodes();
    if (static_cast<int>(x.size()) != dim) x.assign(dim, 0.0);
    const bool linear = detail::circuit_is_linear(circuit);

    NewtonOutcome out;
    Assembly asmb = assemble_real(circuit, plan, ctx, x, cap_states);

    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        out.iterations = iter;
        std::vector<double> x_next;
        try {
            x_next = lu_solve(asmb.sys);
        } catch (const SingularMatrixError& err) {
            out.failure = err.what();
            return out;
        }

        if (!linear) {
            for (int i = 0; i < nodes; ++i) {
                const double dv = x_next[i] - x[i];
                if (dv > config.dv_clamp) x_next[i] = x[i] + config.dv_clamp;
                else if (dv < -config.dv_clamp) x_next[i] = x[i] - config.dv_clamp;
            }
        }

        Assembly next = assemble_real(circuit, plan, ctx, x_next, cap_states);
        const std::vector<double> r = detail::residual_at(next, x_next);

        bool dv_ok = true;
        for (int i = 0; i < nodes && dv_ok; ++i)
            dv_ok = std::abs(x_next[i] - x[i]) <= config.vntol + config.reltol * std::abs(x_next[i]);

        bool res_ok = true;
        int worst_row = 0;
        double worst_excess = 0.0;
        for (int i = 0; i < dim; ++i) {
            const double tol = i < nodes
                                   ? config.abstol + config.reltol * next.node_scale[i]
                                   : config.vntol + config.reltol * std::abs(next.sys.b[i]);
            const double excess = std::abs(r[i]) - tol;
            if (excess > 0.0) {
                res_ok = false;
                if (excess > worst_excess) {
                    worst_excess = excess;
                    worst_row = i;
                }
            }
        }

        x = std::move(x_next);
        asmb = std::move(next);

        if (res_ok && (dv_ok || linear)) {
            out.converged = true;
            out.x = std::move(x);
            out.devices = std::move(asmb.devices);
            return out;
        }
        if (iter == config.max_iterations) {
            out.failure = "no convergence after " + std::to_string(iter) +
                          " iterations; worst residual at " + plan.row_labels[worst_row];
        }
    }
    out.x = std::move(x);
    return out;
}

namespace detail {

inline OperatingPoint make_operating_point(const SystemPlan& plan, const Circuit& circuit,
                                           const NewtonOutcome& outcome) {
    OperatingPoint op;
    op.node_names = plan.node_names;
    op.node_voltages.assign(outcome.x.begin(), outcome.x.begin() + plan.num_nodes());
    for (std::size_t k = 0; k < plan.branch_elements.size(); ++k) {
        op.branch_names.push_back(circuit.elements[plan.branch_elements[k]].name);
        op.branch_currents.push_back(outcome.x[plan.num_nodes() + k]);
    }
    op.devices = outcome.devices;
    op.iterations_used = outcome.iterations;
    return op;
}

} // namespace detail

/// Plain damped Newton from the given initial guess (all zeros by default).
/// Throws ConvergenceError when the iteration does not settle.
inline OperatingPoint newton_solve(const Circuit& circuit, const NewtonConfig& config = {},
                                   const std::vector<double>& initial = {}) {
    const SystemPlan plan = make_plan(circuit);
    StampContext ctx;
    ctx.gmin = config.gmin;
    NewtonOutcome outcome = newton_iterate(circuit, plan, config, initial, ctx);
    if (!outcome.converged)
        throw ConvergenceError("newton_solve: " + outcome.failure);
    return detail::make_operating_point(plan, circuit, outcome);
}

/// Homotopy solve for circuits where plain Newton fails: gmin stepping from
/// 1e-2 down in decades (each solution seeding the next), then source
/// stepping 0 -> 1 if the gmin path fails.
inline OperatingPoint continuation_solve(const Circuit& circuit,
                                         const NewtonConfig& config = {}) {
    const SystemPlan plan = make_plan(circuit);
    StampContext ctx;
    ctx.gmin = config.gmin;

    std::string first_failure;

    // gmin stepping: extra node-to-ground shunt from 1e-2 down in decades,
    // removed entirely on the final rung.
    {
        std::vector<double> x;
        bool ok = true;
        NewtonOutcome outcome;
        for (int step = 0; step <= config.gmin_steps; ++step) {
            StampContext stepped = ctx;
            stepped.gshunt =
                step == config.gmin_steps ? 0.0 : 1e-2 * std::pow(10.0, -step);
            outcome = newton_iterate(circuit, plan, config, x, stepped);
            if (!outcome.converged) {
                ok = false;
                if (first_failure.empty()) first_failure = outcome.failure;
                break;
            }
            x = outcome.x;
        }
        if (ok) return detail::make_operating_point(plan, circuit, outcome);
    }

    // source stepping
    {
        std::vector<double> x;
        NewtonOutcome outcome;
        for (int step = 1; step <= config.source_steps; ++step) {
            StampContext stepped = ctx;
            stepped.source_scale =
                static_cast<double>(step) / static_cast<double>(config.source_steps);
            outcome = newton_iterate(circuit, plan, config, x, stepped);
            if (!outcome.converged)
                throw ConvergenceError(
                    "continuation_solve: gmin stepping failed (" + first_failure +
                    "); source stepping failed at scale " +
                    fmt_double(stepped.source_scale) + " (" + outcome.failure + ")");
            x = outcome.x;
        }
        return detail::make_operating_point(plan, circuit, outcome);
    }
}

/// Operating-point solve: plain Newton first, homotopy continuation on failure.
inline OperatingPoint solve_op(const Circuit& circuit, const NewtonConfig& config = {}) {
    try {
        return newton_solve(circuit, config);
    } catch (const ConvergenceError&) {
        return continuation_solve(circuit, config);
    }
}

// =============================================================================
// Post-solve audits
// =============================================================================

/// Signed current through each element (n+ -> n- convention; drain terminal
/// current for MOSFETs), computed from a converged operating point.
inline std::vector<double> element_currents(const Circuit& circuit,
                                            const OperatingPoint& op) {
    std::vector<double> currents(circuit.elements.size(), 0.0);
    auto v = [&](const std::string& node) { return op.voltage(node); };

    for (std::size_t ei = 0; ei < circuit.elements.size(); ++ei) {
        const Element& e = circuit.elements[ei];
        std::visit(
            [&](const auto& d) {
                using T = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<T, Resistor>) {
                    currents[ei] = (v(d.node_pos) - v(d.node_neg)) / d.ohms;
                } else if constexpr (std::is_same_v<T, Capacitor>) {
                    currents[ei] = 0.0; // open in DC
                } else if constexpr (std::is_same_v<T, VoltageSource>) {
                    currents[ei] = op.branch_current(e.name);
                } else if constexpr (std::is_same_v<T, Vcvs>) {
                    currents[ei] = op.branch_current(e.name);
                } else if constexpr (std::is_same_v<T, CurrentSource>) {
                    StampContext ctx;
                    currents[ei] = detail::source_dc_value(d.dc_amps, d.pwl, ctx);
                } else if constexpr (std::is_same_v<T, Mosfet>) {
                    const MosfetOp* dev = op.device(e.name);
                    if (dev) {
                        const ModelCard& card = circuit.models.at(d.model);
                        const double sign = card.polarity == Polarity::Nmos ? 1.0 : -1.0;
                        const double into_drain =
                            sign * (dev->eval.reversed ? -dev->eval.id : dev->eval.id);
                        currents[ei] = into_drain;
                    }
                }
            },
            e.device);
    }
    return currents;
}

/// Max KCL residual over nodes, normalized against the per-node tolerance
/// abstol + reltol * (largest incident current). <= 1 means the invariant holds.
inline double kcl_worst_ratio(const Circuit& circuit, const SystemPlan& plan,
                              const OperatingPoint& op, const NewtonConfig& config = {}) {
    StampContext ctx;
    ctx.gmin = config.gmin;
    std::vector<double> x = op.solution();
    Assembly asmb = assemble_real(circuit, plan, ctx, x);
    const std::vector<double> r = detail::residual_at(asmb, x);
    double worst = 0.0;
    for (int i = 0; i < plan.num_nodes(); ++i) {
        const double tol = config.abstol + config.reltol * asmb.node_scale[i];
        worst = std::max(worst, std::abs(r[i]) / tol);
    }
    return worst;
}

} // namespace ldosim
