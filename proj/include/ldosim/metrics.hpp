#pragma once

// Figures of merit extracted from raw analysis results: Bode numbers
// (dc gain, f3dB, GBW, phase margin), dropout voltage from a line sweep,
// maximum regulated load current by bisection, and the DC power audit.

#include "ldosim/analyses.hpp"

#include <functional>
#include <optional>
#include <span>

namespace ldosim {

// =============================================================================
// Bode metrics
// =============================================================================

struct BodeMetrics {
    double dc_gain_db = 0.0;                  // magnitude at the lowest frequency
    std::optional<double> f3db_hz;            // -3dB point, log-interpolated
    std::optional<double> gbw_hz;             // dc gain (linear) * f3db
    std::optional<double> unity_gain_hz;      // |H| = 1 crossing
    std::optional<double> phase_margin_deg;   // 180 + phase at unity crossing
};

namespace detail {

inline std::vector<double> unwrap_phase_deg(std::span<const std::complex<double>> values) {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        double raw = std::arg(values[i]) * 180.0 / kPi;
        if (i > 0) raw -= 360.0 * std::round((raw - out[i - 1]) / 360.0);
        out[i] = raw;
    }
    return out;
}

/// First downward crossing of `target` in `db`, log-interpolated in frequency.
inline std::optional<double> crossing_freq(std::span<const double> freq,
                                           std::span<const double> db, double target) {
    for (std::size_t i = 0; i + 1 < db.size(); ++i) {
        if (db[i] >= target && db[i + 1] < target) {
            const double lf0 = std::log10(freq[i]);
            const double lf1 = std::log10(freq[i + 1]);
            const double t = (target - db[i]) / (db[i + 1] - db[i]);
            return std::pow(10.0, lf0 + t * (lf1 - lf0));
        }
    }
    return std::nullopt;
}

inline double interp_at_freq(std::span<const double> freq, std::span<const double> y,
                             double f) {
    if (f <= freq.front()) return y.front();
    if (f >= freq.back()) return y.back();
    const double lf = std::log10(f);
    for (std::size_t i = 0; i + 1 < freq.size(); ++i) {
        if (f <= freq[i + 1]) {
            const double lf0 = std::log10(freq[i]);
            const double lf1 = std::log10(freq[i + 1]);
            const double t = (lf - lf0) / (lf1 - lf0);
            return y[i] + t * (y[i + 1] - y[i]);
        }
    }
    return y.back();
}

} // namespace detail

inline BodeMetrics bode_metrics(std::span<const double> freq,
                                std::span<const std::complex<double>> values) {
    BodeMetrics m;
    if (freq.empty()) return m;

    std::vector<double> db(freq.size());
    for (std::size_t i = 0; i < freq.size(); ++i) db[i] = db20(std::abs(values[i]));
    const std::vector<double> phase = detail::unwrap_phase_deg(values);

    m.dc_gain_db = db[0];
    const double half_power = 10.0 * std::log10(2.0); // 3.0103 dB
    m.f3db_hz = detail::crossing_freq(freq, db, m.dc_gain_db - half_power);
    if (m.f3db_hz) m.gbw_hz = from_db20(m.dc_gain_db) * *m.f3db_hz;

    if (m.dc_gain_db > 0.0) {
        m.unity_gain_hz = detail::crossing_freq(freq, db, 0.0);
        if (m.unity_gain_hz)
            m.phase_margin_deg =
                180.0 + detail::interp_at_freq(freq, phase, *m.unity_gain_hz);
    }
    return m;
}

inline BodeMetrics bode_metrics(const AcResponse& resp) {
    return bode_metrics(resp.freq_hz, resp.values);
}

// =============================================================================
// Dropout voltage
// =============================================================================

enum class DropoutStatus { Ok, NeverRegulated, AlwaysRegulated };

struct DropoutResult {
    DropoutStatus status = DropoutStatus::NeverRegulated;
    double knee_vin = 0.0;  // lowest Vin still regulated, interpolated
    double dropout_v = 0.0; // knee_vin - vtarget
};

/// Knee of a line sweep: the lowest Vin whose output stays within
/// (1 - tolerance) of the target, interpolated between bracketing points.
/// Direction-invariant: ascending sweeps are reversed before processing.
inline DropoutResult dropout_voltage(std::span<const double> vin,
                                     std::span<const double> vout, double vtarget,
                                     double tolerance = 0.02) {
    DropoutResult res;
    if (vin.size() < 2 || vin.size() != vout.size()) return res;

    std::vector<double> vi(vin.begin(), vin.end());
    std::vector<double> vo(vout.begin(), vout.end());
    if (vi.front() < vi.back()) {
        std::reverse(vi.begin(), vi.end());
        std::reverse(vo.begin(), vo.end());
    }

    const double threshold = (1.0 - tolerance) * vtarget;
    int lowest_regulated = -1;
    for (std::size_t i = 0; i < vi.size(); ++i)
        if (vo[i] >= threshold) lowest_regulated = static_cast<int>(i);

    if (lowest_regulated < 0) {
        res.status = DropoutStatus::NeverRegulated;
        return res;
    }
    if (lowest_regulated == static_cast<int>(vi.size()) - 1) {
        res.status = DropoutStatus::AlwaysRegulated;
        res.knee_vin = vi.back();
        res.dropout_v = res.knee_vin - vtarget;
        return res;
    }

    const std::size_t a = static_cast<std::size_t>(lowest_regulated);
    const std::size_t b = a + 1;
    const double t = (threshold - vo[a]) / (vo[b] - vo[a]);
    res.status = DropoutStatus::Ok;
    res.knee_vin = vi[a] + t * (vi[b] - vi[a]);
    res.dropout_v = res.knee_vin - vtarget;
    return res;
}

// =============================================================================
// Maximum load current
// =============================================================================

enum class MaxLoadStatus { Ok, RegulatedAtUpperBound, NeverRegulated };

struct MaxLoadResult {
    MaxLoadStatus status = MaxLoadStatus::NeverRegulated;
    double amps = 0.0;
};

/// Bisection for the largest load current whose output stays within the
/// regulation tolerance. `vout_at` solves the circuit at a given load and
/// returns the output voltage.
inline MaxLoadResult max_load_current(const std::function<double(double)>& vout_at,
                                      double vtarget, double tolerance = 0.02,
                                      double upper_bound = 0.1, double resolution = 1e-4) {
    auto regulated = [&](double iload) {
        return std::abs(vout_at(iload) - vtarget) <= tolerance * vtarget;
    };

    if (!regulated(0.0)) return {MaxLoadStatus::NeverRegulated, 0.0};
    if (regulated(upper_bound)) return {MaxLoadStatus::RegulatedAtUpperBound, upper_bound};

    double lo = 0.0, hi = upper_bound;
    while (hi - lo > resolution) {
        const double mid = 0.5 * (lo + hi);
        if (regulated(mid)) lo = mid;
        else hi = mid;
    }
    return {MaxLoadStatus::Ok, lo};
}

// =============================================================================
// Power audit
// =============================================================================

struct PowerBreakdown {
    double source_delivered_w = 0.0; // net power out of all V/I/E sources
    double dissipated_w = 0.0;       // absorbed by R and MOSFET elements + gmin leak
    double gmin_leak_w = 0.0;
    std::vector<double> element_absorbed_w; // per element, n+ -> n- convention
};

/// DC power audit at a converged operating point. Tellegen's theorem pins
/// source_delivered_w == dissipated_w up to solver tolerance.
inline PowerBreakdown power_dissipated(const Circuit& circuit, const OperatingPoint& op,
                                       double gmin = 1e-12) {
    PowerBreakdown out;
    out.element_absorbed_w.assign(circuit.elements.size(), 0.0);
    const std::vector<double> currents = element_currents(circuit, op);

    for (std::size_t ei = 0; ei < circuit.elements.size(); ++ei) {
        const Element& e = circuit.elements[ei];
        const double i = currents[ei];
        double absorbed = 0.0;
        bool is_source = false;
        std::visit(
            [&](const auto& d) {
                using T = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<T, Resistor>) {
                    absorbed = (op.voltage(d.node_pos) - op.voltage(d.node_neg)) * i;
                } else if constexpr (std::is_same_v<T, Capacitor>) {
                    absorbed = 0.0;
                } else if constexpr (std::is_same_v<T, VoltageSource>) {
                    absorbed = (op.voltage(d.node_pos) - op.voltage(d.node_neg)) * i;
                    is_source = true;
                } else if constexpr (std::is_same_v<T, CurrentSource>) {
                    absorbed = (op.voltage(d.node_pos) - op.voltage(d.node_neg)) * i;
                    is_source = true;
                } else if constexpr (std::is_same_v<T, Vcvs>) {
                    absorbed = (op.voltage(d.out_pos) - op.voltage(d.out_neg)) * i;
                    is_source = true;
                } else if constexpr (std::is_same_v<T, Mosfet>) {
                    absorbed = (op.voltage(d.drain) - op.voltage(d.source)) * i;
                }
            },
            e.device);
        out.element_absorbed_w[ei] = absorbed;
        if (is_source) out.source_delivered_w -= absorbed;
        else out.dissipated_w += absorbed;
    }

    for (std::size_t ni = 0; ni < op.node_names.size(); ++ni) {
        const double v = op.node_voltages[ni];
        out.gmin_leak_w += v * v * gmin;
    }
    out.dissipated_w += out.gmin_leak_w;
    return out;
}

} // namespace ldosim
