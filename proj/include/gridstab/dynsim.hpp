#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridstab/epll.hpp"
#include "gridstab/equilibrium.hpp"
#include "gridstab/network.hpp"

namespace gridstab {

/// Disturbance applied at a grid-snapped simulation time.
///
/// LoadScale   multiply the load admittance at `index` (bus) by `magnitude`.
/// Omega0Step  add `magnitude` rad/s to inverter `index`'s frequency setpoint.
/// E0Step      add `magnitude` volts to inverter `index`'s voltage setpoint.
/// PowerTarget step inverter `index`'s steady-state real power (quantity 'p',
///             via omega_0) or reactive power ('q', via e_0) by the fraction
///             `magnitude`; the setpoint step is sized from the equilibrium
///             DC gain at simulation setup.
struct StepEvent {
    enum class Kind { LoadScale, Omega0Step, E0Step, PowerTarget };
    double time = 0.0;
    Kind kind = Kind::LoadScale;
    int index = 0;  // 1-based bus / inverter
    double magnitude = 0.0;
    char quantity = 'p';  // PowerTarget only
};

/// Simulation-ready scenario: network, inverters with resolved setpoints,
/// the initial equilibrium, and the event list.
struct DynScenario {
    NetworkModel network;
    LoadConversion load_conv;
    std::vector<InverterParams> inverters;
    QConvention q_conv = QConvention::ImEConjI;
    OperatingPoint op;           // initial equilibrium
    double omega_frame = 0.0;    // rad/s, constant per run
    std::vector<StepEvent> events;
    double dt = 1e-4;
    double duration = 1.0;

    int buses() const { return static_cast<int>(inverters.size()); }
};

/// State layout: per inverter (delta, p_f, q_f) where delta is the phasor
/// angle in the frame rotating at omega_frame and p_f/q_f are the filtered
/// power measurements.
struct SimInputs {
    const Eigen::MatrixXcd* ybus = nullptr;
    const std::vector<InverterParams>* inverters = nullptr;
    QConvention q_conv = QConvention::ImEConjI;
    double omega_frame = 0.0;
};

/// Right-hand side of the nonlinear model. Algebraic stage: E_i = e0_i -
/// kv_i q_f_i, e_i = E_i (cos d_i + j sin d_i), i = Y e, powers per the
/// convention. Differential stage: d' = (omega0 - kp p_f) - omega_frame,
/// p_f' = omega_f (p - p_f), q_f' = omega_f (q - q_f). Throws when any
/// commanded magnitude E_i drops to zero or below.
Eigen::VectorXd dynamics(const Eigen::VectorXd& state, const SimInputs& in);

Eigen::VectorXd equilibrium_state(const OperatingPoint& op);

struct EventMarker {
    double time = 0.0;  // snapped to the integration grid
    std::string kind;
    int index = 0;
    double applied = 0.0;  // resolved setpoint delta / scale factor
};

struct SimTrace {
    Eigen::VectorXd t;
    Eigen::MatrixXd omega;  // rad/s, per bus columns
    Eigen::MatrixXd e_mag;  // volts RMS per phase
    Eigen::MatrixXd p;      // watts per phase
    Eigen::MatrixXd q;      // VARs per phase (active convention)
    Eigen::MatrixXd e_d;
    Eigen::MatrixXd e_q;
    std::vector<EventMarker> markers;
    bool aborted = false;
    std::string diagnostic;

    int samples() const { return static_cast<int>(t.size()); }
};

/// Fixed-step RK4 over the scenario. Events snap to the nearest grid time.
/// Divergence (any |state| > 1e9) stops the run and returns the trace up to
/// the last good step with `aborted` set.
SimTrace simulate(const DynScenario& scenario);

/// Central-difference Jacobian of `dynamics` about the scenario equilibrium,
/// h relative to per-state scales. The spectrum matches the assembled small-
/// signal A matrix (the coordinate change (delta, p_f, q_f) <-> (omega, e_d,
/// e_q) preserves eigenvalues).
Eigen::MatrixXd fd_jacobian(const DynScenario& scenario, double h_rel);

/// Per-inverter block-diagonal map T with x_smallsignal = T * x_dynsim,
/// valid when every kp and kv is nonzero.
Eigen::MatrixXd coordinate_map(const OperatingPoint& op,
                               const std::vector<InverterParams>& inverters);

/// Instantaneous waveform x(t) = sqrt(2) E_b(t) cos(theta(t)) reconstructed
/// from a trace at bus `bus`, with theta' = omega_b(t); E and omega are
/// linearly interpolated between trace samples (theta is piecewise
/// quadratic, evaluated in closed form). Feeds the continuous-input E-PLL.
struct SynthesisResult {
    EpllTrace epll;                  // estimator trace (x column = samples)
    std::vector<double> true_omega;  // interpolated simulator truth at fs
    std::vector<double> true_e_mag;
};
SynthesisResult synthesize_and_track(const SimTrace& trace, int bus, double fs,
                                     const EpllParams& params);

}  // namespace gridstab
