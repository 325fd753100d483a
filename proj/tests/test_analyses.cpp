#include <doctest.h>

#include "ldosim/analyses.hpp"
#include "ldosim/metrics.hpp"
#include "ldosim/netlist.hpp"

using namespace ldosim;

TEST_CASE("run_op on the divider") {
    Circuit c = parse_netlist("v1 in 0 5\nr1 in out 2k\nr2 out 0 3k\n.op\n");
    OperatingPoint op = run_op(c);
    CHECK(op.voltage("out") == doctest::Approx(3.0));
}

TEST_CASE("dc sweep of a linear divider is linear") {
    Circuit c = parse_netlist("v1 in 0 0\nr1 in out 2k\nr2 out 0 3k\n");
    SweepResult sweep = run_dc_sweep(c, DcSweepDirective{"v1", 0.0, 5.0, 1.0});
    REQUIRE(sweep.values.size() == 6);
    const double expected[] = {0.0, 0.6, 1.2, 1.8, 2.4, 3.0};
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(sweep.converged[k]);
        CHECK(sweep.points[k].voltage("out") == doctest::Approx(expected[k]).epsilon(1e-8));
    }
}

TEST_CASE("RC low-pass AC response") {
    // f3dB = 1/(2*pi*R*C) = 1.000 kHz for R=1k, C=159.155nF.
    Circuit c = parse_netlist(
        "v1 in 0 dc 0 ac 1 0\n"
        "r1 in out 1k\n"
        "c1 out 0 159.155n\n");
    AcDirective dir{40, 1.0, 1e6};
    AcResponse resp = run_ac(c, dir, "v1", "out");

    // The decade grid hits 1 kHz exactly: |H| = -3.0103 dB, phase = -45 deg.
    bool found = false;
    for (std::size_t k = 0; k < resp.freq_hz.size(); ++k) {
        if (std::abs(resp.freq_hz[k] - 1000.0) > 1e-6) continue;
        found = true;
        CHECK(db20(std::abs(resp.values[k])) == doctest::Approx(-3.0103).epsilon(2e-4));
        CHECK(std::arg(resp.values[k]) * 180.0 / kPi == doctest::Approx(-45.0).epsilon(1e-4));
    }
    CHECK(found);

    BodeMetrics m = bode_metrics(resp);
    REQUIRE(m.f3db_hz.has_value());
    CHECK(*m.f3db_hz == doctest::Approx(1000.0).epsilon(0.005));
}

TEST_CASE("one-pole VCVS system approaches -90 degrees past the pole") {
    // Inverting gain stage with a feedback capacitor: pole at
    // 1/(2*pi*R*C*(1+A)); well past it the phase settles near the
    // single-pole asymptote.
    Circuit c = parse_netlist(
        "v1 in 0 dc 0 ac 1 0\n"
        "r1 in x 1k\n"
        "c1 x out 1u\n"
        "e1 out 0 0 x 1000\n");
    const double pole_hz = 1.0 / (2.0 * kPi * 1e3 * 1e-6 * 1001.0);
    AcDirective dir{20, pole_hz / 100.0, pole_hz * 1000.0};
    AcResponse resp = run_ac(c, dir, "v1", "out");

    std::vector<double> mag_db(resp.freq_hz.size());
    for (std::size_t k = 0; k < resp.freq_hz.size(); ++k)
        mag_db[k] = db20(std::abs(resp.values[k]));

    for (std::size_t k = 0; k < resp.freq_hz.size(); ++k) {
        const double f = resp.freq_hz[k];
        if (f < pole_hz * 10.0 || f > pole_hz * 100.0) continue;
        const double phase = std::arg(resp.values[k]) * 180.0 / kPi;
        // Inverting stage: 180 deg at DC, heading to 90 = 180 - 90.
        CHECK(std::abs(phase - 90.0) < 7.0);
        // -20 dB/decade slope.
        const double expected = db20(1000.0) - db20(f / pole_hz);
        CHECK(mag_db[k] == doctest::Approx(expected).epsilon(0.02));
    }
}

TEST_CASE("RC discharge matches the analytic exponential") {
    // R=1k, C=1uF, V(0)=1: V(t) = exp(-t/1ms).
    const char* netlist =
        "c1 out 0 1u ic=1\n"
        "r1 out 0 1k\n";
    Circuit c = parse_netlist(netlist);
    const double tau = 1e-3;

    auto max_error = [&](double tstep) {
        TransientWaveform w = run_tran(c, TranDirective{tstep, 5 * tau});
        REQUIRE(!w.abort.has_value());
        double worst = 0.0;
        const std::vector<double> v = w.node_waveform("out");
        for (std::size_t k = 0; k < w.time_s.size(); ++k)
            worst = std::max(worst, std::abs(v[k] - std::exp(-w.time_s[k] / tau)));
        return worst;
    };

    const double err_100 = max_error(tau / 100.0);
    CHECK(err_100 < 1e-3);

    // Value check at t = tau.
    TransientWaveform w = run_tran(c, TranDirective{tau / 100.0, 2 * tau});
    const std::vector<double> v = w.node_waveform("out");
    bool found = false;
    for (std::size_t k = 0; k < w.time_s.size(); ++k) {
        if (std::abs(w.time_s[k] - tau) > 1e-12) continue;
        found = true;
        CHECK(v[k] == doctest::Approx(std::exp(-1.0)).epsilon(1e-3));
    }
    CHECK(found);

    // Trapezoidal order: halving the step cuts the max error by >= 3x.
    const double err_200 = max_error(tau / 200.0);
    CHECK(err_100 / err_200 >= 3.0);
}

TEST_CASE("RC charge step matches 1 - exp(-t/tau)") {
    // IC=0 holds the output at zero at t=0; the source then charges the cap.
    Circuit c = parse_netlist(
        "v1 in 0 dc 1\n"
        "r1 in out 1k\n"
        "c1 out 0 1u ic=0\n");
    const double tau = 1e-3;
    TransientWaveform w = run_tran(c, TranDirective{tau / 1000.0, 4 * tau});
    REQUIRE(!w.abort.has_value());
    const std::vector<double> v = w.node_waveform("out");
    for (double mult : {1.0, 2.0, 3.0}) {
        bool found = false;
        for (std::size_t k = 0; k < w.time_s.size(); ++k) {
            if (std::abs(w.time_s[k] - mult * tau) > 1e-12) continue;
            found = true;
            CHECK(v[k] == doctest::Approx(1.0 - std::exp(-mult)).epsilon(1e-3));
        }
        CHECK(found);
    }
}

TEST_CASE("transient initial point equals the DC operating point") {
    Circuit c = parse_netlist(
        "v1 in 0 dc 2\n"
        "r1 in out 10k\n"
        "r2 out 0 10k\n"
        "c1 out 0 1n\n");
    OperatingPoint op = run_op(c);
    TransientWaveform w = run_tran(c, TranDirective{1e-6, 1e-5});
    REQUIRE(!w.time_s.empty());
    CHECK(w.time_s[0] == 0.0);
    const std::vector<double> v = w.node_waveform("out");
    CHECK(v[0] == doctest::Approx(op.voltage("out")).epsilon(1e-9));
}

TEST_CASE("AC low-frequency limit matches the DC transfer slope") {
    // Divider: perturb the input DC by +/-1mV and compare the slope with the
    // AC magnitude at 0.1 Hz.
    auto dc_out = [](double vin) {
        Circuit c = parse_netlist("v1 in 0 dc " + fmt_double(vin) +
                                  "\nr1 in out 2k\nr2 out 0 3k\n");
        return run_op(c).voltage("out");
    };
    const double slope = (dc_out(2.501) - dc_out(2.499)) / 0.002;

    Circuit c = parse_netlist("v1 in 0 dc 2.5 ac 1 0\nr1 in out 2k\nr2 out 0 3k\n");
    AcResponse resp = run_ac(c, AcDirective{10, 0.1, 10.0}, "v1", "out");
    CHECK(std::abs(resp.values.front()) == doctest::Approx(slope).epsilon(0.02));
}

TEST_CASE("AC/DC consistency for a common-source MOSFET stage") {
    // Nonlinear stage: the stamped small-signal system's dc limit must match
    // the finite-difference slope of the nonlinear DC transfer.
    auto stage = [](double vbias, bool with_ac) {
        return parse_netlist(
            ".model nmod nmos (vto=0.5 kp=200u lambda=0.05)\n"
            "vdd vdd 0 dc 3\n"
            "rd vdd out 20k\n"
            "vg in 0 dc " + fmt_double(vbias) + (with_ac ? " ac 1 0" : "") + "\n"
            "m1 out in 0 0 nmod w=10u l=1u\n");
    };
    const double h = 1e-3;
    const double up = run_op(stage(0.8 + h, false)).voltage("out");
    const double dn = run_op(stage(0.8 - h, false)).voltage("out");
    const double slope = (up - dn) / (2 * h);

    AcResponse resp = run_ac(stage(0.8, true), AcDirective{10, 0.1, 10.0}, "vg", "out");
    CHECK(std::abs(resp.values.front()) == doctest::Approx(std::abs(slope)).epsilon(0.02));
    CHECK(slope < -1.0); // inverting gain stage
}

TEST_CASE("exactly one AC source is enforced") {
    Circuit two = parse_netlist(
        "v1 in 0 dc 0 ac 1 0\n"
        "v2 x 0 dc 0 ac 1 0\n"
        "r1 in out 1k\n"
        "r2 x out 1k\n"
        "c1 out 0 1n\n");
    CHECK_THROWS_AS(run_ac(two, AcDirective{10, 1.0, 1e3}, "v1", "out"),
                    std::invalid_argument);
}

TEST_CASE("CSV serialization is stable and carries headers") {
    Circuit c = parse_netlist("v1 in 0 5\nr1 in out 2k\nr2 out 0 3k\n.op\n");
    OperatingPoint op = run_op(c);
    const std::string csv = to_csv(c, op);
    CHECK(csv.find("V(out)") != std::string::npos);
    CHECK(csv.find("I(v1)") != std::string::npos);
    CHECK(csv == to_csv(c, run_op(c))); // byte-identical re-run
}
