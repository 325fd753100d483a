#include <doctest.h>

#include "ldosim/devices.hpp"
#include "ldosim/engine.hpp"

#include <random>

using namespace ldosim;

namespace {

ModelCard nmos_card(double vto = 0.5, double kp = 100e-6, double lambda = 0.0) {
    ModelCard m;
    m.name = "nm";
    m.polarity = Polarity::Nmos;
    m.vto = vto;
    m.kp = kp;
    m.lambda = lambda;
    return m;
}

ModelCard pmos_card(double vto = -0.5, double kp = 100e-6, double lambda = 0.0) {
    ModelCard m = nmos_card(-vto, kp, lambda);
    m.polarity = Polarity::Pmos;
    m.vto = vto;
    return m;
}

} // namespace

TEST_CASE("square-law saturation point") {
    // KP=100u, W/L=10, VTO=0.5, lambda=0, Vgs=1.0, Vds=2.0
    MosfetEval ev = mosfet_eval(nmos_card(), 1.0, 2.0, 10e-6, 1e-6, 1);
    CHECK(ev.region == MosRegion::Saturation);
    CHECK(ev.id == doctest::Approx(125e-6));
    // gm is the exact partial derivative beta*(Vgs-VTO) of the implemented Id.
    CHECK(ev.gm == doctest::Approx(500e-6));
    CHECK(ev.gds == doctest::Approx(1e-12));
}

TEST_CASE("cutoff below threshold") {
    MosfetEval ev = mosfet_eval(nmos_card(), 0.4, 2.0, 10e-6, 1e-6, 1);
    CHECK(ev.region == MosRegion::Cutoff);
    CHECK(ev.id == 0.0);
    CHECK(ev.gm == 0.0);
    CHECK(ev.gds == doctest::Approx(1e-12)); // gmin floor only
}

TEST_CASE("triode and saturation agree at the boundary") {
    SUBCASE("lambda = 0, exact boundary") {
        // Vds exactly Vgs - VTO: both formulas evaluate to beta/2 * Vov^2.
        MosfetEval ev = mosfet_eval(nmos_card(), 1.0, 0.5, 10e-6, 1e-6, 1);
        CHECK(ev.id == doctest::Approx(0.5 * 1e-3 * 0.25));
    }
    SUBCASE("randomized boundary points, 1e-15 relative") {
        std::mt19937 rng(42);
        std::uniform_real_distribution<double> vov_d(0.05, 2.0);
        std::uniform_real_distribution<double> lam_d(0.0, 0.2);
        for (int i = 0; i < 1000; ++i) {
            ModelCard card = nmos_card(0.5, 100e-6, lam_d(rng));
            const double vgs = card.vto + vov_d(rng);
            const double vov = vgs - card.vto; // the boundary as the model sees it
            // One ulp below the boundary lands in triode, the boundary itself
            // in saturation; the formulas must agree to rounding.
            MosfetEval below =
                mosfet_eval(card, vgs, std::nextafter(vov, 0.0), 10e-6, 1e-6, 1);
            MosfetEval above = mosfet_eval(card, vgs, vov, 10e-6, 1e-6, 1);
            CHECK(below.region == MosRegion::Triode);
            CHECK(above.region == MosRegion::Saturation);
            const double scale = std::max(1.0, std::abs(above.id));
            CHECK(std::abs(above.id - below.id) / scale < 1e-15);
        }
    }
}

TEST_CASE("gm and gds match central finite differences of Id") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> vgs_d(0.6, 2.5);
    std::uniform_real_distribution<double> vds_d(0.05, 3.0);
    std::uniform_real_distribution<double> lam_d(0.02, 0.1);
    const double h = 1e-4; // balances truncation vs cancellation for the FD oracle
    int tested = 0;
    for (int i = 0; i < 500; ++i) {
        ModelCard card = nmos_card(0.5, 170e-6, lam_d(rng));
        const double vgs = vgs_d(rng);
        const double vds = vds_d(rng);
        // Stay away from the region boundary where the derivative is only C0.
        if (std::abs(vds - (vgs - card.vto)) < 1e-2) continue;
        ++tested;
        MosfetEval ev = mosfet_eval(card, vgs, vds, 5e-6, 1e-6, 2);
        const double id_p = mosfet_eval(card, vgs + h, vds, 5e-6, 1e-6, 2).id;
        const double id_m = mosfet_eval(card, vgs - h, vds, 5e-6, 1e-6, 2).id;
        const double id_dp = mosfet_eval(card, vgs, vds + h, 5e-6, 1e-6, 2).id;
        const double id_dm = mosfet_eval(card, vgs, vds - h, 5e-6, 1e-6, 2).id;
        CHECK(ev.gm == doctest::Approx((id_p - id_m) / (2 * h)).epsilon(1e-6));
        CHECK(ev.gds == doctest::Approx((id_dp - id_dm) / (2 * h)).epsilon(1e-6));
    }
    CHECK(tested > 400);
}

TEST_CASE("multiplier scales Id, gm and gds exactly") {
    ModelCard card = nmos_card(0.5, 100e-6, 0.05);
    MosfetEval one = mosfet_eval(card, 1.2, 1.5, 10e-6, 1e-6, 1);
    MosfetEval four = mosfet_eval(card, 1.2, 1.5, 10e-6, 1e-6, 4);
    CHECK(four.id == doctest::Approx(4.0 * one.id).epsilon(1e-15));
    CHECK(four.gm == doctest::Approx(4.0 * one.gm).epsilon(1e-15));
    CHECK(four.gds == doctest::Approx(4.0 * one.gds).epsilon(1e-15));
}

TEST_CASE("PMOS sign normalization mirrors the NMOS evaluation") {
    MosfetEval n = mosfet_eval(nmos_card(0.5, 60e-6, 0.05), 1.0, 1.5, 10e-6, 1e-6, 1);
    MosfetEval p = mosfet_eval(pmos_card(-0.5, 60e-6, 0.05), -1.0, -1.5, 10e-6, 1e-6, 1);
    CHECK(p.region == MosRegion::Saturation);
    CHECK(p.id == doctest::Approx(n.id));
    CHECK(p.gm == doctest::Approx(n.gm));
    CHECK(p.gds == doctest::Approx(n.gds));
}

TEST_CASE("reverse conduction swaps drain and source symmetrically") {
    ModelCard card = nmos_card(0.5, 100e-6, 0.02);
    // Vds < 0: same channel seen from the other side, so the evaluation must
    // match the forward device with the terminal roles exchanged.
    MosfetEval rev = mosfet_eval(card, 0.4, -1.0, 10e-6, 1e-6, 1);
    MosfetEval fwd = mosfet_eval(card, 1.4, 1.0, 10e-6, 1e-6, 1);
    CHECK(rev.reversed);
    CHECK(rev.id == doctest::Approx(fwd.id));
    CHECK(rev.gm == doctest::Approx(fwd.gm));
    CHECK(rev.id >= 0.0);
}

TEST_CASE("resistor stamp: textbook pattern, ground entries dropped") {
    Element e;
    e.name = "r1";
    e.device = Resistor{"1", "0", 1000.0};
    StampRows rows{{0, -1}, -1};
    StampContext ctx;
    StampSet st = stamp_linear(e, rows, ctx);

    SystemMatrix<double> sys(1);
    for (const auto& en : st.conductance) sys.add(en.row, en.col, en.value);
    CHECK(sys.at(0, 0) == doctest::Approx(1e-3));

    // Symmetry of the resistive contributions.
    for (const auto& en : st.conductance) {
        bool found = false;
        for (const auto& other : st.conductance)
            if (other.row == en.col && other.col == en.row && other.value == en.value)
                found = true;
        CHECK(found);
    }
}

TEST_CASE("capacitor stamps per analysis kind") {
    Element e;
    e.name = "c1";
    e.device = Capacitor{"a", "0", 1e-6, {}};
    StampRows rows{{0, -1}, -1};

    SUBCASE("open in DC") {
        StampContext ctx;
        StampSet st = stamp_linear(e, rows, ctx);
        CHECK(st.conductance.empty());
        CHECK(st.rhs.empty());
    }
    SUBCASE("AC admittance magnitude 2*pi*1e-3 at 1 kHz") {
        StampContext ctx;
        ctx.kind = AnalysisKind::Ac;
        ctx.omega = 2.0 * kPi * 1000.0;
        StampSet st = stamp_linear(e, rows, ctx);
        REQUIRE(!st.capacitance.empty());
        CHECK(ctx.omega * st.capacitance.front().value ==
              doctest::Approx(2.0 * kPi * 1e-3));
    }
    SUBCASE("trapezoidal companion conductance 2C/h") {
        StampContext ctx;
        ctx.kind = AnalysisKind::Transient;
        ctx.timestep = 1e-6;
        CapState state; // zero history
        StampSet st = stamp_linear(e, rows, ctx, &state);
        REQUIRE(!st.conductance.empty());
        CHECK(st.conductance.front().value == doctest::Approx(2.0));
    }
}

TEST_CASE("stamp_linear rejects MOSFETs") {
    Element e;
    e.name = "m1";
    e.device = Mosfet{"d", "g", "s", "b", "nm", 1e-6, 1e-6, 1};
    StampRows rows{{0, 1, 2, 3}, -1};
    StampContext ctx;
    CHECK_THROWS_AS(stamp_linear(e, rows, ctx), UnsupportedElementError);
}

TEST_CASE("mosfet_stamp RHS equals Id - gm*Vgs - gds*Vds") {
    MosfetEval ev;
    ev.region = MosRegion::Saturation;
    ev.id = 100e-6;
    ev.gm = 250e-6;
    ev.gds = 0.0;
    ev.vgs = 1.0;
    ev.vds = 2.0;
    ev.ieq = ev.id - ev.gm * ev.vgs - ev.gds * ev.vds;

    StampSet st = mosfet_stamp(ev, Polarity::Nmos, 0, 1, 2);
    REQUIRE(st.rhs.size() == 2);
    CHECK(st.rhs[0].row == 0); // drain
    CHECK(st.rhs[0].value.real() == doctest::Approx(-(ev.id - ev.gm * 1.0)));
    CHECK(st.rhs[1].value.real() == doctest::Approx(ev.id - ev.gm * 1.0));
}

TEST_CASE("CGD stamp matches an explicit capacitor between the same nodes") {
    ModelCard card = nmos_card();
    card.cgd = 3e-12;
    MosfetEval ev = mosfet_eval(card, 1.0, 2.0, 10e-6, 1e-6, 1);
    StampSet dev = mosfet_ac_stamp(ev, card, /*drain*/ 0, /*gate*/ 1, /*source*/ 2, 1);

    Element e;
    e.name = "cx";
    e.device = Capacitor{"g", "d", 3e-12, {}};
    StampContext ctx;
    ctx.kind = AnalysisKind::Ac;
    ctx.omega = 1.0;
    StampSet cap = stamp_linear(e, StampRows{{1, 0}, -1}, ctx);

    // Accumulate both capacitance patterns over a 3x3 system and compare.
    auto accumulate = [](const StampSet& st) {
        SystemMatrix<double> m(3);
        for (const auto& en : st.capacitance) m.add(en.row, en.col, en.value);
        return m;
    };
    SystemMatrix<double> a = accumulate(dev);
    SystemMatrix<double> b = accumulate(cap);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(a.at(r, c) == doctest::Approx(b.at(r, c)));
}
