#include <doctest.h>

#include "ldosim/metrics.hpp"
#include "ldosim/netlist.hpp"

#include <random>

using namespace ldosim;

namespace {

/// Synthetic response sampled on a decade grid.
struct Synthetic {
    std::vector<double> freq;
    std::vector<std::complex<double>> values;
};

template <typename Fn>
Synthetic sample(Fn&& h, double fstart, double fstop, int per_decade = 20) {
    Synthetic s;
    const int total =
        static_cast<int>(std::ceil(std::log10(fstop / fstart) * per_decade));
    for (int k = 0; k <= total; ++k) {
        const double f = fstart * std::pow(10.0, static_cast<double>(k) / per_decade);
        s.freq.push_back(f);
        s.values.push_back(h(f));
    }
    return s;
}

std::complex<double> one_pole(double f, double gain, double pole) {
    return gain / std::complex<double>(1.0, f / pole);
}

} // namespace

TEST_CASE("one-pole metrics: 81 dB / 440 Hz / 4.94 MHz") {
    // H(s) = 11220 / (1 + s/(2*pi*440)); GBW = 11220 * 440 = 4.9368e6.
    Synthetic s = sample([](double f) { return one_pole(f, 11220.0, 440.0); }, 0.1, 1e8);
    BodeMetrics m = bode_metrics(s.freq, s.values);
    CHECK(m.dc_gain_db == doctest::Approx(81.0).epsilon(1e-3));
    REQUIRE(m.f3db_hz.has_value());
    CHECK(*m.f3db_hz == doctest::Approx(440.0).epsilon(0.01));
    REQUIRE(m.gbw_hz.has_value());
    CHECK(*m.gbw_hz == doctest::Approx(11220.0 * 440.0).epsilon(0.01));
    REQUIRE(m.phase_margin_deg.has_value());
    CHECK(*m.phase_margin_deg == doctest::Approx(90.0).epsilon(0.01));
}

TEST_CASE("flat unity response reports absent crossings") {
    Synthetic s = sample([](double) { return std::complex<double>(1.0, 0.0); }, 1.0, 1e6);
    BodeMetrics m = bode_metrics(s.freq, s.values);
    CHECK(m.dc_gain_db == doctest::Approx(0.0));
    CHECK(!m.f3db_hz.has_value());
    CHECK(!m.unity_gain_hz.has_value());
    CHECK(!m.phase_margin_deg.has_value());
}

TEST_CASE("two-pole phase margin against the closed form") {
    const double gain = 1000.0, p1 = 1e3;
    const double fu_estimate = gain * p1;     // ~1e6
    const double p2 = 10.0 * fu_estimate;     // second pole a decade above
    auto h = [&](double f) { return one_pole(f, gain, p1) / std::complex<double>(1.0, f / p2); };

    // Independent oracle: solve |H(fu)| = 1 by bisection on the closed form,
    // then evaluate the phase there.
    double lo = p1, hi = 1e10;
    for (int i = 0; i < 200; ++i) {
        const double mid = std::sqrt(lo * hi);
        (std::abs(h(mid)) > 1.0 ? lo : hi) = mid;
    }
    const double fu = std::sqrt(lo * hi);
    const double pm_expected = 180.0 + std::arg(h(fu)) * 180.0 / kPi; // ~84 deg

    Synthetic s = sample(h, 1.0, 1e9, 40);
    BodeMetrics m = bode_metrics(s.freq, s.values);
    REQUIRE(m.phase_margin_deg.has_value());
    CHECK(*m.phase_margin_deg == doctest::Approx(pm_expected).epsilon(0.005));
    CHECK(pm_expected == doctest::Approx(84.3).epsilon(0.01));
}

TEST_CASE("one-pole recovery within 1% over random gain/pole") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        const double gain = std::pow(10.0, 1.0 + 5.0 * uni(rng)); // 10 .. 1e6
        const double pole = std::pow(10.0, 6.0 * uni(rng));       // 1 .. 1e6
        Synthetic s = sample([&](double f) { return one_pole(f, gain, pole); },
                             pole * 1e-2, gain * pole * 1e2);
        BodeMetrics m = bode_metrics(s.freq, s.values);
        REQUIRE(m.f3db_hz.has_value());
        CHECK(*m.f3db_hz == doctest::Approx(pole).epsilon(0.01));
        CHECK(m.dc_gain_db == doctest::Approx(db20(gain)).epsilon(0.01));
        REQUIRE(m.gbw_hz.has_value());
        CHECK(*m.gbw_hz == doctest::Approx(gain * pole).epsilon(0.01));
    }
}

TEST_CASE("dropout knee on the synthetic Fig.-5 shape") {
    // Vout = 2.0 above the knee at Vin = 2.6, Vout = Vin - 0.6 below.
    std::vector<double> vin, vout;
    for (double v = 5.0; v >= 1.0 - 1e-9; v -= 0.05) {
        vin.push_back(v);
        vout.push_back(v >= 2.6 ? 2.0 : v - 0.6);
    }
    DropoutResult res = dropout_voltage(vin, vout, 2.0);
    CHECK(res.status == DropoutStatus::Ok);
    // The knee is measured at the 2% regulation threshold, which sits
    // 0.04 V below the ideal departure point on a unity slope.
    CHECK(res.dropout_v == doctest::Approx(0.6).epsilon(0.09));
    CHECK(res.knee_vin == doctest::Approx(2.56).epsilon(0.01));

    // Direction invariance.
    std::vector<double> vin_up(vin.rbegin(), vin.rend());
    std::vector<double> vout_up(vout.rbegin(), vout.rend());
    DropoutResult up = dropout_voltage(vin_up, vout_up, 2.0);
    CHECK(up.knee_vin == doctest::Approx(res.knee_vin));
}

TEST_CASE("dropout status edges") {
    std::vector<double> vin = {5.0, 4.0, 3.0, 2.0, 1.0};
    SUBCASE("ideal follower is always regulated") {
        std::vector<double> vout = {2.0, 2.0, 2.0, 2.0, 2.0};
        CHECK(dropout_voltage(vin, vout, 2.0).status == DropoutStatus::AlwaysRegulated);
    }
    SUBCASE("dead output is never regulated") {
        std::vector<double> vout = {0.1, 0.1, 0.1, 0.1, 0.1};
        CHECK(dropout_voltage(vin, vout, 2.0).status == DropoutStatus::NeverRegulated);
    }
}

TEST_CASE("max load bisection on a synthetic droop") {
    // Vout = 2 until 10 mA, then drops 50 V/A: 2% tolerance is lost at
    // 10 mA + 0.04/50 = 10.8 mA.
    auto vout_at = [](double i) { return 2.0 - std::max(0.0, i - 1e-2) * 50.0; };
    MaxLoadResult res = max_load_current(vout_at, 2.0);
    CHECK(res.status == MaxLoadStatus::Ok);
    CHECK(res.amps == doctest::Approx(10.8e-3).epsilon(0.02));
    // Boundary property: the result is regulated, result + resolution is not.
    CHECK(std::abs(vout_at(res.amps) - 2.0) <= 0.04);
    CHECK(std::abs(vout_at(res.amps + 1e-4) - 2.0) > 0.04);
}

TEST_CASE("max load status edges") {
    CHECK(max_load_current([](double) { return 2.0; }, 2.0).status ==
          MaxLoadStatus::RegulatedAtUpperBound);
    CHECK(max_load_current([](double) { return 0.5; }, 2.0).status ==
          MaxLoadStatus::NeverRegulated);
}

TEST_CASE("power audit on the divider") {
    Circuit c = parse_netlist("v1 in 0 5\nr1 in out 2k\nr2 out 0 3k\n.op\n");
    OperatingPoint op = run_op(c);
    PowerBreakdown p = power_dissipated(c, op);
    CHECK(p.source_delivered_w == doctest::Approx(5e-3).epsilon(1e-6));
    CHECK(p.dissipated_w == doctest::Approx(5e-3).epsilon(1e-6));
}

TEST_CASE("zero-source circuit dissipates nothing") {
    Circuit c = parse_netlist("r1 a 0 1k\nr2 a 0 2k\n");
    OperatingPoint op = run_op(c);
    PowerBreakdown p = power_dissipated(c, op);
    CHECK(p.source_delivered_w == doctest::Approx(0.0));
    CHECK(p.dissipated_w == doctest::Approx(0.0));
}

TEST_CASE("Tellegen: delivered equals dissipated on random networks") {
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 3 + static_cast<int>(uni(rng) * 6);
        std::string text = "v1 n1 0 dc " + fmt_double(1.0 + 4.0 * uni(rng)) + "\n";
        int id = 2;
        for (int i = 2; i <= n; ++i)
            text += "r" + std::to_string(id++) + " n" + std::to_string(i) + " n" +
                    std::to_string(1 + static_cast<int>(uni(rng) * (i - 1))) + " " +
                    fmt_double(100.0 + 1e4 * uni(rng)) + "\n";
        text += "r" + std::to_string(id++) + " n1 0 " + fmt_double(500.0 + 500.0 * uni(rng)) + "\n";
        text += "i" + std::to_string(id++) + " 0 n" + std::to_string(n) + " dc " +
                fmt_double(1e-3 * uni(rng)) + "\n";

        Circuit c = parse_netlist(text);
        OperatingPoint op = run_op(c);
        PowerBreakdown p = power_dissipated(c, op);
        CHECK(p.dissipated_w ==
              doctest::Approx(p.source_delivered_w).epsilon(1e-9));
    }
}
