#include "gridstab/epll.hpp"

#include <cmath>

namespace gridstab {

EpllParams design_gains(double zeta, double omega_n, double a0, double k1,
                        double sample_rate) {
    if (zeta < 0.0 || omega_n <= 0.0 || a0 <= 0.0 || k1 <= 0.0 || sample_rate <= 0.0)
        throw ValidationError("design_gains: parameters must be positive (zeta >= 0)");
    EpllParams p;
    p.k1 = k1;
    p.k2 = omega_n * omega_n / a0;
    p.k3 = 2.0 * zeta * omega_n / a0;
    p.a0 = a0;
    p.sample_rate = sample_rate;
    return p;
}

EpllDerivatives epll_derivatives(const EpllState& state, double x, const EpllParams& p) {
    const double c = std::cos(state.phi_hat);
    const double s = std::sin(state.phi_hat);
    EpllDerivatives d;
    d.e = x - std::sqrt(2.0) * state.a_hat * c;
    d.da = 2.0 * p.k1 * d.e * c;
    d.domega = -2.0 * p.k2 * d.e * s;
    d.dphi = -2.0 * p.k3 * d.e * s + state.omega_hat;
    return d;
}

namespace {

EpllState clamp_amplitude(EpllState s) {
    if (s.a_hat < 0.0) s.a_hat = 0.0;
    return s;
}

EpllState advance(const EpllState& s, const EpllDerivatives& d, double h) {
    return {s.a_hat + h * d.da, s.omega_hat + h * d.domega, s.phi_hat + h * d.dphi};
}

/// One RK4 step with the input evaluated at the stage times.
template <typename InputAt>
EpllState rk4_stage_input(const EpllState& s, double t, double dt, const EpllParams& p,
                          InputAt&& input) {
    const EpllDerivatives k1 = epll_derivatives(s, input(t), p);
    const double x_mid = input(t + 0.5 * dt);
    const EpllDerivatives k2 = epll_derivatives(advance(s, k1, 0.5 * dt), x_mid, p);
    const EpllDerivatives k3 = epll_derivatives(advance(s, k2, 0.5 * dt), x_mid, p);
    const EpllDerivatives k4 = epll_derivatives(advance(s, k3, dt), input(t + dt), p);
    EpllState out;
    out.a_hat = s.a_hat + dt / 6.0 * (k1.da + 2 * k2.da + 2 * k3.da + k4.da);
    out.omega_hat = s.omega_hat + dt / 6.0 * (k1.domega + 2 * k2.domega + 2 * k3.domega +
                                              k4.domega);
    out.phi_hat = s.phi_hat + dt / 6.0 * (k1.dphi + 2 * k2.dphi + 2 * k3.dphi + k4.dphi);
    return clamp_amplitude(out);
}

}  // namespace

EpllState epll_step(const EpllState& state, double x, double dt, const EpllParams& p) {
    if (dt <= 0.0) throw ValidationError("epll_step: dt must be positive");
    return rk4_stage_input(state, 0.0, dt, p, [x](double) { return x; });
}

double wrap_angle(double phi) {
    phi = std::fmod(phi, 2.0 * M_PI);
    if (phi > M_PI) phi -= 2.0 * M_PI;
    if (phi <= -M_PI) phi += 2.0 * M_PI;
    return phi;
}

namespace {

void push_sample(EpllTrace& trace, double t, double x, const EpllState& s,
                 const EpllParams& p) {
    trace.t.push_back(t);
    trace.x.push_back(x);
    trace.a_hat.push_back(s.a_hat);
    trace.omega_hat.push_back(s.omega_hat);
    trace.phi_hat.push_back(wrap_angle(s.phi_hat));
    trace.e.push_back(epll_derivatives(s, x, p).e);
}

}  // namespace

EpllTrace run_epll(const std::function<double(double)>& x, double t0, int n_samples,
                   double fs, const EpllParams& p, const EpllState& init) {
    if (fs <= 0.0) throw ValidationError("run_epll: sample rate must be positive");
    EpllTrace trace;
    if (n_samples <= 0) return trace;
    const double dt = 1.0 / fs;
    EpllState s = init;
    push_sample(trace, t0, x(t0), s, p);
    for (int k = 1; k < n_samples; ++k) {
        const double t = t0 + (k - 1) * dt;
        s = rk4_stage_input(s, t, dt, p, x);
        push_sample(trace, t0 + k * dt, x(t0 + k * dt), s, p);
    }
    return trace;
}

EpllTrace run_epll(std::span<const double> samples, double fs, const EpllParams& p,
                   const EpllState& init) {
    if (fs <= 0.0) throw ValidationError("run_epll: sample rate must be positive");
    EpllTrace trace;
    if (samples.empty()) return trace;
    const double dt = 1.0 / fs;
    EpllState s = init;
    push_sample(trace, 0.0, samples[0], s, p);
    for (std::size_t k = 1; k < samples.size(); ++k) {
        s = epll_step(s, samples[k - 1], dt, p);
        push_sample(trace, k * dt, samples[k], s, p);
    }
    return trace;
}

}  // namespace gridstab
