#include "gridstab/dynsim.hpp"

#include <cmath>
#include <string>

namespace gridstab {

namespace {

constexpr Complex kImag{0.0, 1.0};

struct AlgebraicState {
    Eigen::VectorXcd e;
    Eigen::VectorXcd i;
    Eigen::VectorXd p;
    Eigen::VectorXd q;
};

AlgebraicState network_solve(const Eigen::VectorXd& state, const SimInputs& in) {
    const auto& invs = *in.inverters;
    const Eigen::Index n = static_cast<Eigen::Index>(invs.size());
    AlgebraicState a;
    a.e.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double delta = state(3 * k);
        const double q_f = state(3 * k + 2);
        const double mag = invs[k].e_0 - invs[k].kv * q_f;
        if (mag <= 0.0)
            throw Error("dynamics: commanded voltage magnitude at bus " +
                        std::to_string(k + 1) + " dropped to " + std::to_string(mag) + " V");
        a.e(k) = mag * std::exp(kImag * delta);
    }
    a.i = *in.ybus * a.e;
    std::tie(a.p, a.q) = bus_powers(a.e, a.i, in.q_conv);
    return a;
}

}  // namespace

Eigen::VectorXd dynamics(const Eigen::VectorXd& state, const SimInputs& in) {
    const auto& invs = *in.inverters;
    const Eigen::Index n = static_cast<Eigen::Index>(invs.size());
    if (state.size() != 3 * n) throw ValidationError("dynamics: state dimension mismatch");

    const AlgebraicState a = network_solve(state, in);
    Eigen::VectorXd dx(3 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double p_f = state(3 * k + 1);
        const double q_f = state(3 * k + 2);
        dx(3 * k) = (invs[k].omega_0 - invs[k].kp * p_f) - in.omega_frame;
        dx(3 * k + 1) = invs[k].omega_f * (a.p(k) - p_f);
        dx(3 * k + 2) = invs[k].omega_f * (a.q(k) - q_f);
    }
    return dx;
}

Eigen::VectorXd equilibrium_state(const OperatingPoint& op) {
    const Eigen::Index n = op.e.size();
    Eigen::VectorXd x(3 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        x(3 * k) = std::arg(op.e(k));
        x(3 * k + 1) = op.p(k);
        x(3 * k + 2) = op.q(k);
    }
    return x;
}

namespace {

Eigen::VectorXd rk4_step(const Eigen::VectorXd& x, double dt, const SimInputs& in) {
    const Eigen::VectorXd k1 = dynamics(x, in);
    const Eigen::VectorXd k2 = dynamics(x + 0.5 * dt * k1, in);
    const Eigen::VectorXd k3 = dynamics(x + 0.5 * dt * k2, in);
    const Eigen::VectorXd k4 = dynamics(x + dt * k3, in);
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Working copy of the mutable scenario pieces; events edit these.
struct LiveScenario {
    NetworkModel network;
    std::vector<InverterParams> inverters;
    Eigen::MatrixXcd ybus;
    LoadConversion load_conv;

    void apply_load_scale(int bus, double factor) {
        if (factor <= 0.0) throw ValidationError("load_scale: factor must be positive");
        bool found = false;
        for (auto& load : network.loads)
            if (load.bus == bus) {
                load.apparent_power *= factor;
                found = true;
            }
        if (!found)
            throw ValidationError("load_scale: no load at bus " + std::to_string(bus));
        ybus = network.ybus(static_cast<int>(inverters.size()), load_conv);
    }
};

/// Steady-state sensitivity of inverter `index`'s p (or q) to its own
/// omega_0 (or e_0), from re-solving the droop equilibrium at a bumped
/// setpoint. Used to size PowerTarget events.
double setpoint_step_for_power_target(const LiveScenario& live, QConvention conv,
                                      double v_guess, int index, char quantity,
                                      double fraction) {
    const int k = index - 1;
    const OperatingPoint base =
        solve_droop_equilibrium(live.ybus, live.inverters, conv, v_guess);
    const double y0 = quantity == 'p' ? base.p(k) : base.q(k);
    const double target_change = fraction * y0;

    auto bumped = live.inverters;
    const double h = quantity == 'p' ? 1e-3 : 1e-3 * std::max(1.0, live.inverters[k].e_0);
    if (quantity == 'p')
        bumped[k].omega_0 += h;
    else
        bumped[k].e_0 += h;
    const OperatingPoint moved = solve_droop_equilibrium(live.ybus, bumped, conv, v_guess);
    const double gain = ((quantity == 'p' ? moved.p(k) : moved.q(k)) - y0) / h;
    if (std::abs(gain) < 1e-12)
        throw Error("power_target: zero steady-state gain, cannot size setpoint step");
    return target_change / gain;
}

}  // namespace

SimTrace simulate(const DynScenario& scenario) {
    if (scenario.dt <= 0.0) throw ValidationError("simulate: dt must be positive");
    if (scenario.duration < 0.0) throw ValidationError("simulate: duration must be >= 0");
    const int n = scenario.buses();
    const int steps = static_cast<int>(std::floor(scenario.duration / scenario.dt + 0.5));

    LiveScenario live{scenario.network, scenario.inverters,
                      scenario.network.ybus(n, scenario.load_conv), scenario.load_conv};

    // Resolve events to grid indices, in time order.
    struct PendingEvent {
        int step;
        StepEvent ev;
    };
    std::vector<PendingEvent> pending;
    for (const auto& ev : scenario.events) {
        if (ev.time < 0.0 || ev.time > scenario.duration)
            throw ValidationError("simulate: event time outside [0, duration]");
        pending.push_back({static_cast<int>(std::floor(ev.time / scenario.dt + 0.5)), ev});
    }
    std::stable_sort(pending.begin(), pending.end(),
                     [](const PendingEvent& a, const PendingEvent& b) {
                         return a.step < b.step;
                     });

    SimTrace trace;
    trace.t.resize(steps + 1);
    trace.omega.resize(steps + 1, n);
    trace.e_mag.resize(steps + 1, n);
    trace.p.resize(steps + 1, n);
    trace.q.resize(steps + 1, n);
    trace.e_d.resize(steps + 1, n);
    trace.e_q.resize(steps + 1, n);

    Eigen::VectorXd x = equilibrium_state(scenario.op);
    const double v_guess = std::abs(scenario.op.e(0));
    std::size_t next_event = 0;
    int rows_recorded = 0;

    auto record = [&](int row) {
        SimInputs in{&live.ybus, &live.inverters, scenario.q_conv, scenario.omega_frame};
        const AlgebraicState a = network_solve(x, in);
        trace.t(row) = row * scenario.dt;
        for (int k = 0; k < n; ++k) {
            trace.omega(row, k) = live.inverters[k].omega_0 -
                                  live.inverters[k].kp * x(3 * k + 1);
            trace.e_mag(row, k) = std::abs(a.e(k));
            trace.p(row, k) = a.p(k);
            trace.q(row, k) = a.q(k);
            trace.e_d(row, k) = a.e(k).real();
            trace.e_q(row, k) = a.e(k).imag();
        }
        rows_recorded = row + 1;
    };

    auto apply_events_at = [&](int step) {
        while (next_event < pending.size() && pending[next_event].step == step) {
            const StepEvent& ev = pending[next_event].ev;
            EventMarker marker;
            marker.time = step * scenario.dt;
            marker.index = ev.index;
            switch (ev.kind) {
                case StepEvent::Kind::LoadScale:
                    live.apply_load_scale(ev.index, ev.magnitude);
                    marker.kind = "load_scale";
                    marker.applied = ev.magnitude;
                    break;
                case StepEvent::Kind::Omega0Step:
                    live.inverters.at(ev.index - 1).omega_0 += ev.magnitude;
                    marker.kind = "omega0_step";
                    marker.applied = ev.magnitude;
                    break;
                case StepEvent::Kind::E0Step:
                    live.inverters.at(ev.index - 1).e_0 += ev.magnitude;
                    marker.kind = "e0_step";
                    marker.applied = ev.magnitude;
                    break;
                case StepEvent::Kind::PowerTarget: {
                    const double du = setpoint_step_for_power_target(
                        live, scenario.q_conv, v_guess, ev.index, ev.quantity,
                        ev.magnitude);
                    if (ev.quantity == 'p')
                        live.inverters.at(ev.index - 1).omega_0 += du;
                    else
                        live.inverters.at(ev.index - 1).e_0 += du;
                    marker.kind = std::string("power_target_") + ev.quantity;
                    marker.applied = du;
                    break;
                }
            }
            trace.markers.push_back(marker);
            ++next_event;
        }
    };

    try {
        apply_events_at(0);
        record(0);
        for (int step = 1; step <= steps; ++step) {
            SimInputs in{&live.ybus, &live.inverters, scenario.q_conv,
                         scenario.omega_frame};
            x = rk4_step(x, scenario.dt, in);
            if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e9)
                throw Error("simulate: state diverged at t = " +
                            std::to_string(step * scenario.dt) + " s");
            apply_events_at(step);
            record(step);
        }
    } catch (const Error& err) {
        trace.t.conservativeResize(rows_recorded);
        trace.omega.conservativeResize(rows_recorded, n);
        trace.e_mag.conservativeResize(rows_recorded, n);
        trace.p.conservativeResize(rows_recorded, n);
        trace.q.conservativeResize(rows_recorded, n);
        trace.e_d.conservativeResize(rows_recorded, n);
        trace.e_q.conservativeResize(rows_recorded, n);
        trace.aborted = true;
        trace.diagnostic = err.what();
        return trace;
    }
    return trace;
}

Eigen::MatrixXd fd_jacobian(const DynScenario& scenario, double h_rel) {
    if (h_rel < 1e-7 || h_rel > 1e-4)
        throw ValidationError("fd_jacobian: relative step must lie in [1e-7, 1e-4]");
    const int n = scenario.buses();
    const Eigen::MatrixXcd ybus = scenario.network.ybus(n, scenario.load_conv);
    SimInputs in{&ybus, &scenario.inverters, scenario.q_conv, scenario.omega_frame};

    const Eigen::VectorXd x0 = equilibrium_state(scenario.op);
    const double res = dynamics(x0, in).cwiseAbs().maxCoeff();
    const double p_scale = std::max(scenario.op.p.cwiseAbs().maxCoeff(), 1.0);
    if (res > 1e-6 * p_scale)
        throw ValidationError("fd_jacobian: scenario is not at equilibrium (residual " +
                              std::to_string(res) + ")");

    Eigen::VectorXd scale(3 * n);
    for (int k = 0; k < n; ++k) {
        scale(3 * k) = 1.0;  // angles, rad
        scale(3 * k + 1) = p_scale;
        scale(3 * k + 2) = p_scale;
    }

    Eigen::MatrixXd jac(3 * n, 3 * n);
    for (int j = 0; j < 3 * n; ++j) {
        const double h = h_rel * std::max(std::abs(x0(j)), scale(j));
        Eigen::VectorXd xp = x0, xm = x0;
        xp(j) += h;
        xm(j) -= h;
        jac.col(j) = (dynamics(xp, in) - dynamics(xm, in)) / (2.0 * h);
    }
    return jac;
}

Eigen::MatrixXd coordinate_map(const OperatingPoint& op,
                               const std::vector<InverterParams>& inverters) {
    const Eigen::Index n = op.e.size();
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(3 * n, 3 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double ed = op.e(k).real(), eq = op.e(k).imag();
        const double mag = std::abs(op.e(k));
        const auto& inv = inverters[k];
        if (inv.kp == 0.0 || inv.kv == 0.0 || mag == 0.0)
            throw ValidationError("coordinate_map: requires nonzero kp, kv and voltage");
        // (d_omega, d_e_d, d_e_q) from (d_delta, d_p_f, d_q_f)
        t(3 * k + 0, 3 * k + 1) = -inv.kp;
        t(3 * k + 1, 3 * k + 0) = -eq;
        t(3 * k + 1, 3 * k + 2) = -inv.kv * ed / mag;
        t(3 * k + 2, 3 * k + 0) = ed;
        t(3 * k + 2, 3 * k + 2) = -inv.kv * eq / mag;
    }
    return t;
}

SynthesisResult synthesize_and_track(const SimTrace& trace, int bus, double fs,
                                     const EpllParams& params) {
    const int n_rows = trace.samples();
    if (n_rows < 1) throw ValidationError("synthesize_and_track: empty trace");
    if (bus < 1 || bus > trace.omega.cols())
        throw ValidationError("synthesize_and_track: bus index out of range");
    const int b = bus - 1;
    const double t_end = trace.t(n_rows - 1);
    const double dt_trace = n_rows > 1 ? trace.t(1) - trace.t(0) : 0.0;

    auto interp = [&](const Eigen::MatrixXd& series, double t) {
        if (n_rows == 1 || t <= 0.0) return series(0, b);
        if (t >= t_end) return series(n_rows - 1, b);
        const int k = std::min<int>(static_cast<int>(t / dt_trace), n_rows - 2);
        const double frac = (t - trace.t(k)) / dt_trace;
        return series(k, b) + frac * (series(k + 1, b) - series(k, b));
    };
    // Phase: theta(0) = delta(0); omega piecewise linear, so theta is
    // piecewise quadratic with a closed form per trace segment.
    std::vector<double> theta_knots(n_rows);
    theta_knots[0] = std::atan2(trace.e_q(0, b), trace.e_d(0, b));
    for (int k = 0; k + 1 < n_rows; ++k)
        theta_knots[k + 1] = theta_knots[k] +
                             0.5 * (trace.omega(k, b) + trace.omega(k + 1, b)) * dt_trace;
    auto theta_at = [&](double t) {
        if (n_rows == 1) return theta_knots[0] + trace.omega(0, b) * t;
        if (t >= t_end) return theta_knots[n_rows - 1] +
                               trace.omega(n_rows - 1, b) * (t - t_end);
        const int k = std::min<int>(static_cast<int>(t / dt_trace), n_rows - 2);
        const double tau = t - trace.t(k);
        const double slope = (trace.omega(k + 1, b) - trace.omega(k, b)) / dt_trace;
        return theta_knots[k] + trace.omega(k, b) * tau + 0.5 * slope * tau * tau;
    };
    auto x = [&](double t) {
        return std::sqrt(2.0) * interp(trace.e_mag, t) * std::cos(theta_at(t));
    };

    const int n_samples = static_cast<int>(std::floor(t_end * fs + 0.5)) + 1;
    EpllState init{interp(trace.e_mag, 0.0), trace.omega(0, b), theta_knots[0]};

    SynthesisResult out;
    out.epll = run_epll(x, 0.0, n_samples, fs, params, init);
    out.true_omega.resize(out.epll.size());
    out.true_e_mag.resize(out.epll.size());
    for (std::size_t k = 0; k < out.epll.size(); ++k) {
        out.true_omega[k] = interp(trace.omega, out.epll.t[k]);
        out.true_e_mag[k] = interp(trace.e_mag, out.epll.t[k]);
    }
    return out;
}

}  // namespace gridstab
