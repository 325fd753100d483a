#pragma once

// Bundled two-stage OTA and PMOS LDO reference circuits as parameterized
// templates, plus the experiment runners (Bode characterization, Miller
// ablation, line sweep / dropout ladder, maximum load, load-step transient)
// and the machine-readable report.

#include "ldosim/metrics.hpp"
#include "ldosim/netlist.hpp"

#include <json.hpp>

#include <limits>
#include <map>
#include <string>
#include <vector>

namespace ldosim {

// =============================================================================
// Templates
// =============================================================================

/// Two-stage OTA: NMOS input pair (m2 inverting, m3 non-inverting) with a
/// PMOS mirror load, current-mirror bias (m6 diode, m1 tail), PMOS
/// common-source second stage (m7) against an NMOS sink (m8), and the
/// compensation capacitor from the first-stage output to the OTA output.
struct OtaTemplate {
    double w1 = 3.8e-6, l1 = 1e-6;  // tail mirror output (m1)
    double w2 = 3.0e-6, l2 = 1e-6;  // input pair (m2, m3)
    double w4 = 5.4e-6, l4 = 1e-6;  // mirror load (m4, m5)
    double w6 = 3.8e-6, l6 = 1e-6;  // bias diode (m6)
    double w7 = 2.5e-5, l7 = 1e-6;  // second-stage common source (m7)
    double w8 = 5.7e-6, l8 = 1e-6;  // second-stage sink (m8)
    double ibias = 2e-5;            // reference branch current [A]
    double cc = 3e-12;              // Miller compensation [F]
    double cl = 1e-12;              // output load for standalone runs [F]
    double supply = 3.3;            // [V]
};

/// PMOS LDO around the OTA: pass device (multiplier = parallel copies),
/// feedback divider with the tap on the non-inverting input and the
/// reference on the inverting input, output capacitor with series ESR,
/// and a DC load current source.
struct LdoTemplate {
    OtaTemplate ota;
    double vref = 1.2;        // [V]
    double r1 = 2e4, r2 = 3e4; // divider: r1 vout->tap, r2 tap->gnd
    double pass_w = 3.46e-5;  // per-finger width [m]
    double pass_l = 1e-6;
    int pass_m = 4;           // parallel pass devices
    double cl_out = 1e-6;     // output capacitor [F]
    double esr = 5.0;         // output capacitor series resistance [ohm]
    double vin = 3.3;         // [V]
    double iload = 5e-3;      // [A]

    /// Regulation target from the divider relation.
    [[nodiscard]] double target_vout() const { return vref * (r1 + r2) / r2; }
};

namespace detail {

inline std::string model_cards() {
    return ".model nm nmos (vto=0.45 kp=0.00017 lambda=0.05 cgs=2e-14 cgd=5e-15)\n"
           ".model pm pmos (vto=-0.45 kp=6e-05 lambda=0.05 cgs=5e-14 cgd=1e-14)\n"
           ".model ppass pmos (vto=-0.45 kp=6e-05 lambda=0.05 cgs=1.5e-12 cgd=4e-13)\n";
}

/// OTA element lines against the given node names (no supply source).
inline std::string ota_lines(const OtaTemplate& t, const std::string& vdd,
                             const std::string& inp, const std::string& inn,
                             const std::string& out) {
    std::string s;
    auto mos = [&](const char* name, const std::string& d, const std::string& g,
                   const std::string& src, const std::string& b, const char* model,
                   double w, double l) {
        s += std::string(name) + " " + d + " " + g + " " + src + " " + b + " " + model +
             " w=" + fmt_double(w) + " l=" + fmt_double(l) + "\n";
    };
    s += "ib " + vdd + " nbias " + fmt_double(t.ibias) + "\n";
    mos("m6", "nbias", "nbias", "0", "0", "nm", t.w6, t.l6);
    mos("m1", "ntail", "nbias", "0", "0", "nm", t.w1, t.l1);
    mos("m2", "nd2", inn, "ntail", "ntail", "nm", t.w2, t.l2);
    mos("m3", "nd5", inp, "ntail", "ntail", "nm", t.w2, t.l2);
    mos("m4", "nd2", "nd2", vdd, vdd, "pm", t.w4, t.l4);
    mos("m5", "nd5", "nd2", vdd, vdd, "pm", t.w4, t.l4);
    mos("m7", out, "nd5", vdd, vdd, "pm", t.w7, t.l7);
    mos("m8", out, "nbias", "0", "0", "nm", t.w8, t.l8);
    if (t.cc > 0.0) s += "cc nd5 " + out + " " + fmt_double(t.cc) + "\n";
    if (t.cl > 0.0) s += "cl " + out + " 0 " + fmt_double(t.cl) + "\n";
    return s;
}

} // namespace detail

/// Standalone OTA circuit: supply source plus the amplifier, differential
/// inputs exposed as nodes `inp` / `inn`, output node `out`.
inline Circuit build_ota(const OtaTemplate& t) {
    std::string text = detail::model_cards();
    text += "vdd vdd 0 dc " + fmt_double(t.supply) + "\n";
    text += detail::ota_lines(t, "vdd", "inp", "inn", "out");
    text += ".end\n";
    return parse_netlist(text);
}

/// OTA wrapped in the open-loop AC measurement fixture: DC unity feedback
/// through a large resistor keeps the bias servoed, while a large capacitor
/// grounds the inverting input for AC so the measured transfer is the
/// open-loop gain. When `dc_follower` is set the capacitor and resistor are
/// omitted and the inverting input is wired straight to the output.
inline Circuit build_ota_fixture(const OtaTemplate& t, bool dc_follower = false,
                                 double vcm = 1.2) {
    std::string text = detail::model_cards();
    text += "vdd vdd 0 dc " + fmt_double(t.supply) + "\n";
    text += detail::ota_lines(t, "vdd", "inp", dc_follower ? "out" : "inn", "out");
    text += "vp inp 0 dc " + fmt_double(vcm) + " ac 1 0\n";
    if (!dc_follower) {
        text += "rfb out inn 1000000000\n";
        text += "cfb inn 0 1\n";
    }
    text += ".end\n";
    return parse_netlist(text);
}

/// Full transistor-level LDO (supply `vin`, output `vout`, pass gate `gate`).
inline Circuit build_ldo(const LdoTemplate& t) {
    std::string text = detail::model_cards();
    text += "vin vin 0 dc " + fmt_double(t.vin) + "\n";
    text += "vref vref 0 dc " + fmt_double(t.vref) + "\n";
    text += detail::ota_lines(t.ota, "vin", "tap", "vref", "gate");
    text += "mp vout gate vin vin ppass w=" + fmt_double(t.pass_w) +
            " l=" + fmt_double(t.pass_l) + " m=" + std::to_string(t.pass_m) + "\n";
    if (t.r1 > 0.0) {
        text += "r1 vout tap " + fmt_double(t.r1) + "\n";
    } else {
        // Unity feedback: tie the tap to the output through a negligible
        // resistance so the divider relation degenerates to vout = vref.
        text += "r1 vout tap 1e-3\n";
    }
    text += "r2 tap 0 " + fmt_double(t.r2) + "\n";
    if (t.cl_out > 0.0) {
        if (t.esr > 0.0) {
            text += "cout vout nesr " + fmt_double(t.cl_out) + "\n";
            text += "resr nesr 0 " + fmt_double(t.esr) + "\n";
        } else {
            text += "cout vout 0 " + fmt_double(t.cl_out) + "\n";
        }
    }
    text += "iload vout 0 dc " + fmt_double(t.iload) + "\n";
    text += ".end\n";
    return parse_netlist(text);
}

/// LDO variant with the OTA replaced by an ideal voltage-controlled source
/// of the given gain; used for the divider-relation (virtual short) checks.
inline Circuit build_ldo_ideal(const LdoTemplate& t, double gain = 1e6) {
    std::string text = detail::model_cards();
    text += "vin vin 0 dc " + fmt_double(t.vin) + "\n";
    text += "vref vref 0 dc " + fmt_double(t.vref) + "\n";
    text += "eamp gate 0 tap vref " + fmt_double(gain) + "\n";
    text += "mp vout gate vin vin ppass w=" + fmt_double(t.pass_w) +
            " l=" + fmt_double(t.pass_l) + " m=" + std::to_string(t.pass_m) + "\n";
    if (t.r1 > 0.0) text += "r1 vout tap " + fmt_double(t.r1) + "\n";
    else text += "r1 vout tap 1e-3\n";
    text += "r2 tap 0 " + fmt_double(t.r2) + "\n";
    text += "iload vout 0 dc " + fmt_double(t.iload) + "\n";
    text += ".end\n";
    return parse_netlist(text);
}

/// Operating point of the ideal-amplifier LDO. High VCVS gains make a cold
/// Newton start hopeless, so the gain is ramped in decades with each
/// solution seeding the next.
inline OperatingPoint ideal_ldo_op(const LdoTemplate& t, double gain = 1e6,
                                   const NewtonConfig& config = {}) {
    std::vector<double> seed;
    OperatingPoint op;
    for (double g = 10.0; ; g *= 10.0) {
        if (g > gain) g = gain;
        Circuit c = build_ldo_ideal(t, g);
        const SystemPlan plan = make_plan(c);
        StampContext ctx;
        ctx.gmin = config.gmin;
        NewtonOutcome outcome = newton_iterate(c, plan, config, seed, ctx);
        if (!outcome.converged)
            throw ConvergenceError("ideal_ldo_op: gain ramp failed at gain " +
                                   fmt_double(g) + ": " + outcome.failure);
        seed = outcome.x;
        op = detail::make_operating_point(plan, c, outcome);
        if (g >= gain) break;
    }
    return op;
}

// =============================================================================
// Experiments
// =============================================================================

struct OtaBodeResult {
    AcResponse response;
    BodeMetrics metrics;
};

/// Open-loop Bode characterization over 0.1 Hz .. 100 MHz, 20 points/decade.
inline OtaBodeResult experiment_ota_bode(const OtaTemplate& t,
                                         const NewtonConfig& config = {}) {
    Circuit c = build_ota_fixture(t);
    AcDirective dir{20, 0.1, 1e8};
    OtaBodeResult out;
    out.response = run_ac(c, dir, "vp", "out", config);
    out.metrics = bode_metrics(out.response);
    return out;
}

struct MillerRow {
    double cc_f = 0.0;
    std::optional<double> phase_margin_deg;
    std::optional<double> dominant_pole_hz; // f3dB of the open-loop response
    std::optional<double> unity_hz;
};

/// Phase margin and dominant pole as a function of the compensation
/// capacitor; rows sorted by Cc.
inline std::vector<MillerRow> experiment_miller_ablation(const OtaTemplate& t,
                                                         std::vector<double> cc_values,
                                                         const NewtonConfig& config = {}) {
    std::sort(cc_values.begin(), cc_values.end());
    std::vector<MillerRow> rows;
    for (double cc : cc_values) {
        OtaTemplate variant = t;
        variant.cc = cc;
        OtaBodeResult bode = experiment_ota_bode(variant, config);
        MillerRow row;
        row.cc_f = cc;
        row.phase_margin_deg = bode.metrics.phase_margin_deg;
        row.dominant_pole_hz = bode.metrics.f3db_hz;
        row.unity_hz = bode.metrics.unity_gain_hz;
        rows.push_back(row);
    }
    return rows;
}

struct LineSweepResult {
    SweepResult sweep;
    std::vector<double> vin;  // converged points only, descending
    std::vector<double> vout;
    DropoutResult dropout;
};

/// Input sweep 5.0 V down to 1.0 V in 50 mV steps at the template's load.
inline LineSweepResult experiment_line_sweep(const LdoTemplate& t,
                                             const NewtonConfig& config = {}) {
    Circuit c = build_ldo(t);
    DcSweepDirective dir{"vin", 5.0, 1.0, -0.05};
    LineSweepResult out;
    out.sweep = run_dc_sweep(c, dir, config);
    for (std::size_t k = 0; k < out.sweep.values.size(); ++k) {
        if (!out.sweep.converged[k]) continue;
        out.vin.push_back(out.sweep.values[k]);
        out.vout.push_back(out.sweep.points[k].voltage("vout"));
    }
    out.dropout = dropout_voltage(out.vin, out.vout, t.target_vout());
    return out;
}

/// Largest regulated load current at a fixed input voltage (bisection to
/// 0.1 mA between 0 and 100 mA).
inline MaxLoadResult experiment_load_limit(const LdoTemplate& t, double vin = 2.6,
                                           const NewtonConfig& config = {}) {
    // Probes far beyond the pass capability settle tens of volts below
    // ground (ideal current-sink load); the damped Newton walk there needs
    // more than the default iteration budget. A probe that still fails to
    // converge is deep in overload and counts as unregulated.
    NewtonConfig cfg = config;
    cfg.max_iterations = std::max(cfg.max_iterations, 400);
    auto vout_at = [&, cfg](double iload) {
        LdoTemplate variant = t;
        variant.vin = vin;
        variant.iload = iload;
        try {
            OperatingPoint op = solve_op(build_ldo(variant), cfg);
            return op.voltage("vout");
        } catch (const ConvergenceError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    return max_load_current(vout_at, t.target_vout());
}

struct LoadStepResult {
    TransientWaveform wave;
    double step_time_s = 0.0;
    double settle_window_s = 0.0;
    double dip_v = 0.0;     // minimum output right after the step
    double final_v = 0.0;
    bool settled = false;   // within 1% of target from step+window onward
    bool railed = false;
};

/// PWL load step (default 5 mA -> 10 mA) and recovery check. The settle
/// window is 10 * (vtarget / i_high) * CL.
inline LoadStepResult experiment_load_step(const LdoTemplate& t, double i_low = 5e-3,
                                           double i_high = 1e-2,
                                           const NewtonConfig& config = {}) {
    const double t_step = 2e-4;
    const double target = t.target_vout();
    const double window = 10.0 * (target / i_high) * t.cl_out;
    const double t_stop = t_step + 1.25 * window;
    const double h = 1e-6;

    LdoTemplate variant = t;
    variant.iload = i_low;
    Circuit c = build_ldo(variant);
    for (auto& e : c.elements) {
        if (e.name != "iload") continue;
        auto& src = std::get<CurrentSource>(e.device);
        src.pwl = Pwl{{{0.0, i_low}, {t_step, i_low}, {t_step + 1e-6, i_high}}};
    }

    LoadStepResult out;
    out.step_time_s = t_step;
    out.settle_window_s = window;
    out.wave = run_tran(c, TranDirective{h, t_stop}, config);

    const std::vector<double> vout = out.wave.node_waveform("vout");
    out.dip_v = target;
    out.final_v = vout.back();
    out.settled = !out.wave.abort.has_value();
    for (std::size_t k = 0; k < vout.size(); ++k) {
        const double time = out.wave.time_s[k];
        if (time > t_step && time <= t_step + 0.2 * window)
            out.dip_v = std::min(out.dip_v, vout[k]);
        if (time >= t_step + window && std::abs(vout[k] - target) > 0.01 * target)
            out.settled = false;
        if (vout[k] < 0.2 || vout[k] > t.vin - 0.05) out.railed = true;
    }
    return out;
}

// =============================================================================
// Report
// =============================================================================

struct LdoCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct LdoReport {
    LdoTemplate config;
    double vout_nominal = 0.0;
    double regulation_error = 0.0; // |vout_nominal - target| / target
    double line_regulation = 0.0;  // dVout/dVin over the regulated range
    OtaBodeResult bode;
    LineSweepResult line;                                    // at 10 mA (Fig. 5 setup)
    std::vector<std::pair<double, DropoutResult>> dropout;   // iload -> dropout
    std::vector<std::pair<double, PowerBreakdown>> power;    // iload -> audit
    std::vector<std::pair<double, double>> power_pass_w;     // iload -> pass dissipation
    std::vector<std::pair<double, double>> power_quiescent_w;
    double max_load_vin = 2.6;
    MaxLoadResult max_load;
    std::vector<std::pair<double, MaxLoadResult>> max_load_by_vin;
    std::vector<MillerRow> miller;
    LoadStepResult step;
    std::vector<LdoCheck> checks;
    std::vector<std::string> diagnostics; // solver failures, one per experiment

    [[nodiscard]] bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return diagnostics.empty();
    }
};

namespace detail {

inline void add_check(LdoReport& r, const std::string& name, bool pass,
                      const std::string& detail) {
    r.checks.push_back({name, pass, detail});
}

inline std::string opt_str(const std::optional<double>& v) {
    return v ? fmt_double(*v) : std::string("absent");
}

} // namespace detail

namespace detail {

/// Run one experiment stage; a solver failure becomes a diagnostic entry
/// instead of an exception so the report always materializes.
template <typename Fn>
bool guarded(LdoReport& r, const char* stage, Fn&& fn) {
    try {
        fn();
        return true;
    } catch (const ConvergenceError& e) {
        r.diagnostics.push_back(std::string(stage) + ": " + e.what());
    } catch (const SingularMatrixError& e) {
        r.diagnostics.push_back(std::string(stage) + ": " + e.what());
    }
    return false;
}

} // namespace detail

/// Run every experiment on the template and stamp the pass/fail checks.
/// Experiments that fail to converge leave a diagnostic and fail their
/// checks; they never fabricate values.
inline LdoReport run_ldo_report(const LdoTemplate& t, const NewtonConfig& config = {}) {
    LdoReport r;
    r.config = t;
    const double target = t.target_vout();

    // Nominal operating point and power ladder.
    const bool have_nominal = detail::guarded(r, "nominal_op", [&] {
        Circuit c = build_ldo(t);
        OperatingPoint op = solve_op(c, config);
        r.vout_nominal = op.voltage("vout");
        r.regulation_error = std::abs(r.vout_nominal - target) / target;

        for (double iload : {2.5e-3, 5e-3, 7.5e-3, 1e-2}) {
            LdoTemplate variant = t;
            variant.iload = iload;
            Circuit ci = build_ldo(variant);
            OperatingPoint opi = solve_op(ci, config);
            PowerBreakdown pb = power_dissipated(ci, opi, config.gmin);
            const MosfetOp* pass = opi.device("mp");
            const double vsd = variant.vin - opi.voltage("vout");
            const double ipass = pass ? pass->eval.id : 0.0;
            r.power.emplace_back(iload, pb);
            r.power_pass_w.emplace_back(iload, vsd * ipass);
            const double i_vin = -opi.branch_current("vin"); // delivered by the supply
            r.power_quiescent_w.emplace_back(iload, variant.vin * (i_vin - ipass));
        }
    });

    // Line regulation over the clearly regulated range (vin 5.0 -> 3.0).
    detail::guarded(r, "line_regulation", [&] {
        LdoTemplate variant = t;
        variant.iload = 5e-3;
        Circuit c = build_ldo(variant);
        OperatingPoint hi = solve_op(c, config);
        detail::set_source_dc(c, "vin", 3.0);
        OperatingPoint lo = solve_op(c, config);
        r.line_regulation = (hi.voltage("vout") - lo.voltage("vout")) / (5.0 - 3.0);
    });

    const bool have_bode = detail::guarded(r, "ota_bode", [&] {
        r.bode = experiment_ota_bode(t.ota, config);
    });

    const bool have_miller = detail::guarded(r, "miller_ablation", [&] {
        r.miller = experiment_miller_ablation(t.ota, {0.0, 0.5e-12, 1e-12, t.ota.cc}, config);
    });

    // Dropout ladder, with the 10 mA sweep kept as the Fig.-5 line sweep.
    const bool have_dropout = detail::guarded(r, "dropout_ladder", [&] {
        for (double iload : {2.5e-3, 5e-3, 7.5e-3, 1e-2}) {
            LdoTemplate variant = t;
            variant.iload = iload;
            LineSweepResult sweep = experiment_line_sweep(variant, config);
            r.dropout.emplace_back(iload, sweep.dropout);
            if (iload == 1e-2) r.line = std::move(sweep);
        }
    });

    const bool have_max_load = detail::guarded(r, "load_limit", [&] {
        r.max_load = experiment_load_limit(t, r.max_load_vin, config);
        for (double vin : {2.6, 3.3, 5.0})
            r.max_load_by_vin.emplace_back(vin, experiment_load_limit(t, vin, config));
    });

    const bool have_step = detail::guarded(r, "load_step", [&] {
        r.step = experiment_load_step(t, 5e-3, 1e-2, config);
    });

    // ---- checks (acceptance thresholds) ----
    const std::string failed = "experiment failed; see diagnostics";

    detail::add_check(r, "vout_nominal",
                      have_nominal && std::abs(r.vout_nominal - target) <= 0.01 * target,
                      have_nominal ? "vout=" + fmt_double(r.vout_nominal) +
                                         " target=" + fmt_double(target)
                                   : failed);

    detail::add_check(r, "ota_dc_gain", have_bode && r.bode.metrics.dc_gain_db >= 74.0,
                      have_bode ? "dc_gain_db=" + fmt_double(r.bode.metrics.dc_gain_db) +
                                      " (>= 74)"
                                : failed);
    {
        const auto& gbw = r.bode.metrics.gbw_hz;
        detail::add_check(r, "ota_gbw", have_bode && gbw && *gbw >= 2.5e6 && *gbw <= 1e7,
                          have_bode ? "gbw_hz=" + detail::opt_str(gbw) + " (in [2.5e6, 1e7])"
                                    : failed);
        const auto& pm = r.bode.metrics.phase_margin_deg;
        detail::add_check(r, "ota_phase_margin", have_bode && pm && *pm >= 50.0,
                          have_bode ? "pm_deg=" + detail::opt_str(pm) + " (>= 50)" : failed);
    }
    {
        bool pm_up = have_miller && r.miller.size() >= 2;
        bool pole_down = pm_up;
        for (std::size_t i = 1; i < r.miller.size(); ++i) {
            const auto& a = r.miller[i - 1];
            const auto& b = r.miller[i];
            pm_up = pm_up && a.phase_margin_deg && b.phase_margin_deg &&
                    *b.phase_margin_deg > *a.phase_margin_deg;
            pole_down = pole_down && a.dominant_pole_hz && b.dominant_pole_hz &&
                        *b.dominant_pole_hz < *a.dominant_pole_hz;
        }
        detail::add_check(r, "miller_pm_monotone", pm_up,
                          "phase margin strictly increasing in cc");
        detail::add_check(r, "miller_pole_monotone", pole_down,
                          "dominant pole strictly decreasing in cc");
        const auto* pm0 = have_miller && !r.miller.empty()
                              ? &r.miller.front().phase_margin_deg
                              : nullptr;
        detail::add_check(r, "miller_uncompensated",
                          pm0 && r.miller.front().cc_f == 0.0 && *pm0 && **pm0 < 30.0,
                          pm0 ? "pm(cc=0)=" + detail::opt_str(*pm0) + " (< 30)" : failed);
    }
    {
        const double bands[3][3] = {{5e-3, 0.30, 0.07}, {7.5e-3, 0.45, 0.08},
                                    {1e-2, 0.60, 0.10}};
        const char* names[3] = {"dropout_5ma", "dropout_7p5ma", "dropout_10ma"};
        for (int bi = 0; bi < 3; ++bi) {
            bool pass = false;
            std::string detail_s = have_dropout ? "no sweep" : failed;
            for (const auto& [iload, res] : r.dropout) {
                if (iload != bands[bi][0]) continue;
                pass = res.status == DropoutStatus::Ok &&
                       std::abs(res.dropout_v - bands[bi][1]) <= bands[bi][2];
                detail_s = "dropout_v=" + fmt_double(res.dropout_v) + " (" +
                           fmt_double(bands[bi][1]) + " +/- " + fmt_double(bands[bi][2]) + ")";
            }
            detail::add_check(r, names[bi], pass, detail_s);
        }
        bool monotone = have_dropout && !r.dropout.empty();
        for (std::size_t i = 1; i < r.dropout.size(); ++i)
            monotone = monotone &&
                       r.dropout[i].second.dropout_v >= r.dropout[i - 1].second.dropout_v;
        detail::add_check(r, "dropout_monotone", monotone,
                          "dropout non-decreasing over 2.5/5/7.5/10 mA");
        detail::add_check(r, "line_knee_10ma",
                          have_dropout && r.line.dropout.status == DropoutStatus::Ok &&
                              std::abs(r.line.dropout.knee_vin - 2.6) <= 0.1,
                          have_dropout ? "knee_vin=" + fmt_double(r.line.dropout.knee_vin) +
                                             " (2.6 +/- 0.1)"
                                       : failed);
    }
    detail::add_check(r, "max_load_window",
                      have_max_load && r.max_load.status == MaxLoadStatus::Ok &&
                          r.max_load.amps >= 15e-3 && r.max_load.amps <= 30e-3,
                      have_max_load ? "max_load_a=" + fmt_double(r.max_load.amps) +
                                          " at vin=" + fmt_double(r.max_load_vin) +
                                          " (in [0.015, 0.03])"
                                    : failed);
    {
        bool ok = false;
        std::string detail_s = failed;
        if (have_max_load) {
            detail::guarded(r, "load_limit_2x", [&] {
                LdoTemplate doubled = t;
                doubled.pass_m = 2 * t.pass_m;
                MaxLoadResult twice = experiment_load_limit(doubled, r.max_load_vin, config);
                ok = twice.amps >= 1.5 * r.max_load.amps;
                detail_s = "2x multiplier: " + fmt_double(twice.amps) + " vs " +
                           fmt_double(r.max_load.amps);
            });
        }
        detail::add_check(r, "max_load_multiplier", ok, detail_s);
    }
    detail::add_check(r, "load_step_recovery",
                      have_step && r.step.settled && !r.step.railed && r.step.dip_v < target,
                      have_step ? "dip_v=" + fmt_double(r.step.dip_v) + " final_v=" +
                                      fmt_double(r.step.final_v) + " settled=" +
                                      (r.step.settled ? "1" : "0")
                                : failed);
    return r;
}

// =============================================================================
// Serialization
// =============================================================================

inline nlohmann::ordered_json config_json(const LdoTemplate& t) {
    nlohmann::ordered_json j;
    j["vref"] = t.vref;
    j["r1"] = t.r1;
    j["r2"] = t.r2;
    j["target_vout"] = t.target_vout();
    j["pass_w"] = t.pass_w;
    j["pass_l"] = t.pass_l;
    j["pass_m"] = t.pass_m;
    j["cl_out"] = t.cl_out;
    j["esr"] = t.esr;
    j["vin"] = t.vin;
    j["iload"] = t.iload;
    j["ibias"] = t.ota.ibias;
    j["cc"] = t.ota.cc;
    j["cl"] = t.ota.cl;
    j["supply"] = t.ota.supply;
    return j;
}

inline nlohmann::ordered_json report_to_json(const LdoReport& r) {
    nlohmann::ordered_json j;
    j["config"] = config_json(r.config);

    nlohmann::ordered_json bode;
    bode["dc_gain_db"] = r.bode.metrics.dc_gain_db;
    bode["f3db_hz"] = r.bode.metrics.f3db_hz ? nlohmann::ordered_json(*r.bode.metrics.f3db_hz)
                                             : nlohmann::ordered_json(nullptr);
    bode["gbw_hz"] = r.bode.metrics.gbw_hz ? nlohmann::ordered_json(*r.bode.metrics.gbw_hz)
                                           : nlohmann::ordered_json(nullptr);
    bode["phase_margin_deg"] =
        r.bode.metrics.phase_margin_deg
            ? nlohmann::ordered_json(*r.bode.metrics.phase_margin_deg)
            : nlohmann::ordered_json(nullptr);
    j["bode"] = bode;

    nlohmann::ordered_json line = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < r.line.sweep.values.size(); ++k) {
        nlohmann::ordered_json row;
        row["vin"] = r.line.sweep.values[k];
        row["vout"] = r.line.sweep.points[k].voltage("vout");
        row["converged"] = static_cast<bool>(r.line.sweep.converged[k]);
        line.push_back(row);
    }
    j["line_sweep"] = line;

    nlohmann::ordered_json drops = nlohmann::ordered_json::array();
    for (const auto& [iload, res] : r.dropout) {
        nlohmann::ordered_json row;
        row["iload_a"] = iload;
        row["dropout_v"] = res.dropout_v;
        row["knee_vin"] = res.knee_vin;
        row["status"] = res.status == DropoutStatus::Ok
                            ? "ok"
                            : (res.status == DropoutStatus::NeverRegulated
                                   ? "never_regulated"
                                   : "always_regulated");
        drops.push_back(row);
    }
    j["dropout"] = drops;

    j["max_load_a"] = r.max_load.amps;
    nlohmann::ordered_json by_vin = nlohmann::ordered_json::array();
    for (const auto& [vin, res] : r.max_load_by_vin) {
        nlohmann::ordered_json row;
        row["vin"] = vin;
        row["max_load_a"] = res.amps;
        row["status"] = res.status == MaxLoadStatus::Ok
                            ? "ok"
                            : (res.status == MaxLoadStatus::RegulatedAtUpperBound
                                   ? "regulated_at_upper_bound"
                                   : "never_regulated");
        by_vin.push_back(row);
    }
    j["max_load_by_vin"] = by_vin;

    nlohmann::ordered_json miller = nlohmann::ordered_json::array();
    for (const auto& row : r.miller) {
        nlohmann::ordered_json m;
        m["cc_f"] = row.cc_f;
        m["pm_deg"] = row.phase_margin_deg ? nlohmann::ordered_json(*row.phase_margin_deg)
                                           : nlohmann::ordered_json(nullptr);
        m["fp1_hz"] = row.dominant_pole_hz ? nlohmann::ordered_json(*row.dominant_pole_hz)
                                           : nlohmann::ordered_json(nullptr);
        miller.push_back(m);
    }
    j["miller_ablation"] = miller;

    nlohmann::ordered_json power = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < r.power.size(); ++k) {
        nlohmann::ordered_json row;
        row["iload_a"] = r.power[k].first;
        row["total_w"] = r.power[k].second.dissipated_w;
        row["pass_w"] = r.power_pass_w[k].second;
        row["quiescent_w"] = r.power_quiescent_w[k].second;
        power.push_back(row);
    }
    j["power"] = power;

    j["vout_nominal_v"] = r.vout_nominal;
    j["regulation_error"] = r.regulation_error;
    j["line_regulation_v_per_v"] = r.line_regulation;

    nlohmann::ordered_json step;
    step["dip_v"] = r.step.dip_v;
    step["final_v"] = r.step.final_v;
    step["settled"] = r.step.settled;
    step["railed"] = r.step.railed;
    step["settle_window_s"] = r.step.settle_window_s;
    j["load_step"] = step;

    nlohmann::ordered_json checks = nlohmann::ordered_json::array();
    for (const auto& c : r.checks) {
        nlohmann::ordered_json row;
        row["name"] = c.name;
        row["pass"] = c.pass;
        row["detail"] = c.detail;
        checks.push_back(row);
    }
    j["checks"] = checks;
    j["diagnostics"] = r.diagnostics;
    return j;
}

/// CSV of the Miller ablation table.
inline std::string miller_to_csv(const std::vector<MillerRow>& rows) {
    std::string out = "cc_f,pm_deg,fp1_hz,unity_hz\n";
    for (const auto& r : rows) {
        out += fmt_double(r.cc_f);
        out += ',' + (r.phase_margin_deg ? fmt_double(*r.phase_margin_deg) : std::string());
        out += ',' + (r.dominant_pole_hz ? fmt_double(*r.dominant_pole_hz) : std::string());
        out += ',' + (r.unity_hz ? fmt_double(*r.unity_hz) : std::string());
        out += '\n';
    }
    return out;
}

// =============================================================================
// Template overrides (CLI --set)
// =============================================================================

/// Apply one `key=value` override; throws std::invalid_argument for unknown
/// keys, ParseError for malformed values.
inline void apply_override(LdoTemplate& t, const std::string& key,
                           const std::string& value) {
    const std::string k = detail::to_lower(key);
    const double v = parse_value(value);
    if (k == "vref") t.vref = v;
    else if (k == "r1") t.r1 = v;
    else if (k == "r2") t.r2 = v;
    else if (k == "pass_w") t.pass_w = v;
    else if (k == "pass_l") t.pass_l = v;
    else if (k == "pass_m") t.pass_m = static_cast<int>(v);
    else if (k == "cl_out") t.cl_out = v;
    else if (k == "esr") t.esr = v;
    else if (k == "vin") t.vin = v;
    else if (k == "iload") t.iload = v;
    else if (k == "cc") t.ota.cc = v;
    else if (k == "cl") t.ota.cl = v;
    else if (k == "ibias") t.ota.ibias = v;
    else if (k == "supply") t.ota.supply = v;
    else
        throw std::invalid_argument("unknown template field '" + key + "'");
}

} // namespace ldosim
