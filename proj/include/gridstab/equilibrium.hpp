#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gridstab/network.hpp"

namespace gridstab {

/// Droop and measurement parameters of one inverter.
struct InverterParams {
    double kp = 0.0;       // rad/s per watt (frequency droop)
    double kv = 0.0;       // volts per VAR (voltage droop)
    double omega_f = 0.0;  // rad/s, measurement filter pole
    double omega_0 = 0.0;  // rad/s, frequency setpoint
    double e_0 = 0.0;      // volts, voltage magnitude setpoint
};

/// Sign convention for reactive power in terms of dq components.
///
/// ImEConjI: q = e_q*i_d - e_d*i_q = Im(E * conj(I)), the standard complex-
///           power convention (inductive loads consume positive q).
/// Eq15:     q = e_d*i_q - e_q*i_d, the opposite sign. The two differ only
///           in the sign of the kv feedback path of the assembled dynamics.
enum class QConvention { ImEConjI, Eq15 };

/// Steady state the linearization is taken about. Phasors are per-phase RMS
/// in a common synchronous frame with bus 1 as angle reference (e_q[0] = 0).
struct OperatingPoint {
    Eigen::VectorXcd e;  // bus voltages, volts
    Eigen::VectorXcd i;  // injected currents, amperes
    Eigen::VectorXd p;   // per-phase real power, watts
    Eigen::VectorXd q;   // per-phase reactive power, VARs (active convention)
    double omega = 0.0;  // common equilibrium frequency, rad/s

    int buses() const { return static_cast<int>(e.size()); }
};

/// i = Y * e.
Eigen::VectorXcd bus_currents(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& e);

/// p = e_d*i_d + e_q*i_q; q per the selected convention.
std::pair<double, double> bus_powers(double e_d, double e_q, double i_d, double i_q,
                                     QConvention conv);
std::pair<Eigen::VectorXd, Eigen::VectorXd> bus_powers(const Eigen::VectorXcd& e,
                                                       const Eigen::VectorXcd& i,
                                                       QConvention conv);

struct PowerFlowOptions {
    int max_iterations = 50;
    double step_tol = 1e-12;   // relative Newton step size at convergence
    double stall_tol = 1e-8;   // "still moving" threshold for the failure path
};

struct PowerFlowResult {
    Eigen::VectorXcd e;
    double residual = 0.0;  // ||diag(e) conj(Y e) - s||, volt-amperes
    int iterations = 0;
};

/// Solve diag(e) * conj(Y e) = s for bus voltages with angle(e[0]) = 0.
///
/// The polar parameterization has 2N-1 unknowns against 2N real equations,
/// so this is a damped Gauss-Newton least-squares solve; the attained
/// residual is reported rather than assumed zero. Consistent injections
/// (data generated from an actual voltage profile) reach the numerical
/// floor; rounded case data settles at the rounding level.
PowerFlowResult power_flow(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& s_injections,
                           double v_guess, const PowerFlowOptions& opts = {});

/// Solve the droop equilibrium: common omega with
///   omega = omega_0_i - kp_i * p_i   and   |e_i| = e_0_i - kv_i * q_i
/// for every inverter, i = Y e, powers per `conv`. Unknowns are the N
/// magnitudes, N-1 angles (bus 1 fixed at zero) and omega; the common
/// frequency absorbs the angle-reference deficiency, making the Newton
/// system square.
///
/// When every kp is zero the angles are indeterminate; they are frozen at
/// zero, omega is pinned to omega_0 (which must agree across inverters),
/// and only the magnitude equations are solved. Mixed zero/nonzero kp goes
/// through the full Newton and fails on a singular Jacobian.
OperatingPoint solve_droop_equilibrium(const Eigen::MatrixXcd& y,
                                       const std::vector<InverterParams>& inverters,
                                       QConvention conv, double v_guess);

struct Setpoint {
    double omega_0 = 0.0;  // rad/s
    double e_0 = 0.0;      // volts
};

/// Setpoints that make `op` a droop equilibrium:
/// omega_0_i = omega + kp_i * p_i, e_0_i = |e_i| + kv_i * q_i.
std::vector<Setpoint> implied_setpoints(const OperatingPoint& op,
                                        const std::vector<InverterParams>& inverters);

}  // namespace gridstab
