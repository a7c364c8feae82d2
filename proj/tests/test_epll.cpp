#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"
#include "gridstab/epll.hpp"

using namespace gridstab;

namespace {

constexpr double kA0 = 480.0 * 1.4142135623730951;  // design normalization
constexpr double kW60 = 2.0 * M_PI * 60.0;
constexpr double kFs = 10000.0;

EpllParams paper_params() { return design_gains(0.85, 200.0, kA0, 200.0, kFs); }

/// Signal at the loop design point: peak amplitude equals a0.
double design_signal(double t) { return kA0 * std::cos(kW60 * t); }

}  // namespace

TEST_CASE("design_gains formulas") {
    const auto p = paper_params();
    CHECK(p.k2 == doctest::Approx(58.926).epsilon(1e-4));
    CHECK(p.k3 == doctest::Approx(0.50087).epsilon(1e-4));
    CHECK(p.k1 == 200.0);
    CHECK(p.a0 == kA0);

    const auto unit = design_gains(0.85, 200.0, 1.0, 200.0);
    CHECK(unit.k2 == doctest::Approx(200.0 * 200.0).epsilon(1e-14));
    CHECK(unit.k3 == doctest::Approx(2.0 * 0.85 * 200.0).epsilon(1e-14));

    CHECK(design_gains(0.0, 200.0, kA0, 200.0).k3 == 0.0);
    CHECK_THROWS_AS(design_gains(0.85, -1.0, kA0, 200.0), ValidationError);
}

TEST_CASE("epll_derivatives") {
    const auto p = paper_params();

    SUBCASE("locked state is a fixed point of the estimator") {
        const double a = kA0 / std::sqrt(2.0);
        for (double phi : {0.0, 0.7, 2.5, -1.2}) {
            const EpllState s{a, kW60, phi};
            const double x = std::sqrt(2.0) * a * std::cos(phi);
            const auto d = epll_derivatives(s, x, p);
            CHECK(std::abs(d.e) < 1e-10);
            CHECK(std::abs(d.da) < 1e-7);
            CHECK(std::abs(d.domega) < 1e-7);
            CHECK(d.dphi == doctest::Approx(kW60).epsilon(1e-12));
        }
    }

    SUBCASE("amplitude channel is blind at phi = pi/2") {
        const EpllState s{100.0, kW60, M_PI / 2.0};
        const auto d = epll_derivatives(s, 57.0, p);
        CHECK(std::abs(d.da) < 1e-10);
    }

    SUBCASE("zero input with unit phase") {
        const double a = 321.0;
        const EpllState s{a, kW60, 0.0};
        const auto d = epll_derivatives(s, 0.0, p);
        CHECK(d.e == doctest::Approx(-std::sqrt(2.0) * a).epsilon(1e-14));
        CHECK(d.da == doctest::Approx(-2.0 * std::sqrt(2.0) * p.k1 * a).epsilon(1e-14));
        CHECK(d.domega == 0.0);  // sin(0) = 0
    }
}

TEST_CASE("epll_step zero-order hold behavior") {
    const auto p = paper_params();
    const double a = kA0 / std::sqrt(2.0);
    const EpllState s{a, kW60, 0.3};
    const double dt = 1.0 / kFs;

    SUBCASE("locked step advances phase by omega dt") {
        const double x = std::sqrt(2.0) * a * std::cos(0.3);
        const auto s2 = epll_step(s, x, dt, p);
        // the held input leaves an O(dt^2) residue on every channel
        CHECK(std::abs(s2.phi_hat - (0.3 + kW60 * dt)) < 5e-4);
        CHECK(std::abs(s2.a_hat - a) < 1.0);
        CHECK(std::abs(s2.omega_hat - kW60) < 1.0);
    }

    SUBCASE("amplitude clamps at zero") {
        const EpllState tiny{1e-6, kW60, 0.0};
        const auto s2 = epll_step(tiny, -2.0 * kA0, dt, p);
        CHECK(s2.a_hat >= 0.0);
    }

    CHECK_THROWS_AS(epll_step(s, 0.0, 0.0, p), ValidationError);
}

TEST_CASE("continuous-input lock holds to machine precision") {
    const auto p = paper_params();
    const double a = kA0 / std::sqrt(2.0);
    const auto trace = run_epll(design_signal, 0.0, 10000, kFs, p,
                                EpllState{a, kW60, 0.0});
    REQUIRE(trace.size() == 10000);
    double worst_a = 0.0, worst_w = 0.0;
    for (std::size_t k = 0; k < trace.size(); ++k) {
        worst_a = std::max(worst_a, std::abs(trace.a_hat[k] - a) / a);
        worst_w = std::max(worst_w, std::abs(trace.omega_hat[k] - kW60) / kW60);
    }
    CHECK(worst_a < 1e-9);
    CHECK(worst_w < 1e-9);
    // phase advances at exactly omega_hat
    const double expected = wrap_angle(kW60 * trace.t.back());
    CHECK(std::abs(wrap_angle(trace.phi_hat.back() - expected)) < 1e-8);
}

TEST_CASE("sampled (zero-order hold) lock carries the documented ripple") {
    const auto p = paper_params();
    const double a = kA0 / std::sqrt(2.0);
    std::vector<double> samples(3000);
    for (std::size_t k = 0; k < samples.size(); ++k)
        samples[k] = design_signal(k / kFs);
    const auto trace = run_epll(samples, kFs, p, EpllState{a, kW60, 0.0});
    REQUIRE(trace.size() == samples.size());
    double worst_a = 0.0;
    for (std::size_t k = samples.size() / 2; k < samples.size(); ++k)
        worst_a = std::max(worst_a, std::abs(trace.a_hat[k] - a) / a);
    CHECK(worst_a > 1e-9);   // not an exact fixed point
    CHECK(worst_a < 1e-2);   // but bounded ripple
}

TEST_CASE("run_epll empty input gives an empty trace") {
    const auto p = paper_params();
    CHECK(run_epll(std::span<const double>{}, kFs, p, EpllState{}).size() == 0);
    CHECK(run_epll(design_signal, 0.0, 0, kFs, p, EpllState{}).size() == 0);
}

TEST_CASE("frequency step tracking") {
    const auto p = paper_params();
    const double a = kA0 / std::sqrt(2.0);
    const double w_new = 2.0 * M_PI * 60.5;
    const double t_step = 0.2;
    auto x = [&](double t) {
        return t < t_step ? kA0 * std::cos(kW60 * t)
                          : kA0 * std::cos(kW60 * t_step + w_new * (t - t_step));
    };
    const auto trace = run_epll(x, 0.0, 5000, kFs, p, EpllState{a, kW60, 0.0});

    double settle = 0.0, peak = 0.0;
    for (std::size_t k = 0; k < trace.size(); ++k) {
        if (trace.t[k] <= t_step) continue;
        peak = std::max(peak, trace.omega_hat[k]);
        if (std::abs(trace.omega_hat[k] - w_new) > 1e-3 * w_new)
            settle = trace.t[k] - t_step;
    }
    CHECK(settle <= 0.060);
    CHECK((peak - w_new) / (w_new - kW60) < 0.10);  // overshoot below 10%
}

TEST_CASE("amplitude step tracking") {
    const auto p = paper_params();
    const double a = kA0 / std::sqrt(2.0);
    const double t_step = 0.2;
    auto x = [&](double t) {
        const double amp = t < t_step ? a : 1.1 * a;
        return std::sqrt(2.0) * amp * std::cos(kW60 * t);
    };
    const auto trace = run_epll(x, 0.0, 5000, kFs, p, EpllState{a, kW60, 0.0});
    const double a_new = 1.1 * a;
    double settle = 0.0, peak = 0.0;
    for (std::size_t k = 0; k < trace.size(); ++k) {
        if (trace.t[k] <= t_step) continue;
        peak = std::max(peak, trace.a_hat[k]);
        if (std::abs(trace.a_hat[k] - a_new) > 1e-3 * a_new) settle = trace.t[k] - t_step;
    }
    CHECK(settle <= 0.060);
    CHECK((peak - a_new) / (0.1 * a) < 0.10);
}

TEST_CASE("initial frequency mismatch converges within 60 ms") {
    const auto p = paper_params();
    const double a = kA0 / std::sqrt(2.0);
    const auto trace = run_epll(design_signal, 0.0, 2000, kFs, p,
                                EpllState{a, kW60 + 2.0 * M_PI * 0.5, 0.0});
    double settle = 0.0;
    for (std::size_t k = 0; k < trace.size(); ++k)
        if (std::abs(trace.omega_hat[k] - kW60) > 1e-3 * kW60) settle = trace.t[k];
    CHECK(settle <= 0.060);
}

TEST_CASE("RK4 order on a smooth transient") {
    const auto p = paper_params();
    const EpllState s0{0.98 * kA0 / std::sqrt(2.0), kW60 + 2.0 * M_PI * 0.5, 0.1};

    auto end_state = [&](double fs, int steps_scale) {
        const auto trace = run_epll(design_signal, 0.0, 100 * steps_scale + 1, fs, p, s0);
        const std::size_t last = trace.size() - 1;
        return Eigen::Vector3d{trace.a_hat[last], trace.omega_hat[last],
                               trace.phi_hat[last]};
    };
    const Eigen::Vector3d ref = end_state(100.0 * kFs, 100);
    const Eigen::Vector3d coarse = end_state(kFs, 1);
    const Eigen::Vector3d fine = end_state(2.0 * kFs, 2);
    const double e1 = (coarse - ref).norm();
    const double e2 = (fine - ref).norm();
    CHECK(e1 / e2 > 10.0);  // ~16 for a fourth-order method
    CHECK(e1 / e2 < 26.0);
}

TEST_CASE("phase-shift equivariance and amplitude scaling") {
    const auto p = paper_params();
    const double a = kA0 / std::sqrt(2.0);
    const double tau = 1.7e-3;

    auto base = [&](double t) { return kA0 * std::cos(kW60 * t); };
    auto delayed = [&](double t) { return kA0 * std::cos(kW60 * (t - tau)); };
    // start both from unlocked states and compare converged tails
    const EpllState init{0.9 * a, kW60, 0.4};
    const auto t1 = run_epll(base, 0.0, 4000, kFs, p, init);
    const auto t2 = run_epll(delayed, 0.0, 4000, kFs, p, init);
    const std::size_t k = 3500;
    CHECK(std::abs(t1.a_hat[k] - t2.a_hat[k]) < 1e-6 * a);
    CHECK(std::abs(t1.omega_hat[k] - t2.omega_hat[k]) < 1e-6 * kW60);
    const double dphi = wrap_angle(t2.phi_hat[k] - t1.phi_hat[k] + kW60 * tau);
    CHECK(std::abs(dphi) < 1e-6);

    auto scaled = [&](double t) { return 1.5 * kA0 * std::cos(kW60 * t); };
    const auto t3 = run_epll(scaled, 0.0, 4000, kFs, p, init);
    CHECK(t3.a_hat[k] == doctest::Approx(1.5 * a).epsilon(1e-6));
    CHECK(t3.omega_hat[k] == doctest::Approx(kW60).epsilon(1e-9));
}

TEST_CASE("trace phase is reported wrapped") {
    const auto p = paper_params();
    const double a = kA0 / std::sqrt(2.0);
    const auto trace = run_epll(design_signal, 0.0, 5000, kFs, p, EpllState{a, kW60, 0.0});
    for (std::size_t k = 0; k < trace.size(); k += 97) {
        CHECK(trace.phi_hat[k] <= M_PI);
        CHECK(trace.phi_hat[k] > -M_PI);
    }
}
