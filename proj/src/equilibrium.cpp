#include "gridstab/equilibrium.hpp"

#include <cmath>

namespace gridstab {

namespace {

constexpr Complex kImag{0.0, 1.0};

Eigen::VectorXcd polar_voltages(const Eigen::VectorXd& mag, const Eigen::VectorXd& ang) {
    Eigen::VectorXcd e(mag.size());
    for (Eigen::Index k = 0; k < mag.size(); ++k)
        e(k) = mag(k) * std::exp(kImag * ang(k));
    return e;
}

/// Complex injections S_i = e_i conj((Y e)_i) and their derivatives with
/// respect to the polar coordinates.
struct InjectionDerivatives {
    Eigen::VectorXcd s;
    Eigen::MatrixXcd ds_dmag;  // N x N
    Eigen::MatrixXcd ds_dang;  // N x N
};

InjectionDerivatives injections(const Eigen::MatrixXcd& y, const Eigen::VectorXd& mag,
                                const Eigen::VectorXd& ang) {
    const Eigen::Index n = mag.size();
    const Eigen::VectorXcd e = polar_voltages(mag, ang);
    const Eigen::VectorXcd ye = y * e;
    InjectionDerivatives out;
    out.s = e.cwiseProduct(ye.conjugate());
    out.ds_dmag.resize(n, n);
    out.ds_dang.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            // de_j/dE_j = e_j / E_j, de_j/dang_j = i e_j
            const Complex u = mag(j) != 0.0 ? e(j) / mag(j) : std::exp(kImag * ang(j));
            const Complex self = (i == j) ? std::conj(ye(i)) : Complex{0.0, 0.0};
            out.ds_dmag(i, j) = self * u + e(i) * std::conj(y(i, j) * u);
            out.ds_dang(i, j) = self * (kImag * e(j)) + e(i) * std::conj(y(i, j) * kImag * e(j));
        }
    }
    return out;
}

}  // namespace

Eigen::VectorXcd bus_currents(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& e) {
    if (y.cols() != e.size()) throw ValidationError("bus_currents: dimension mismatch");
    return y * e;
}

std::pair<double, double> bus_powers(double e_d, double e_q, double i_d, double i_q,
                                     QConvention conv) {
    const double p = e_d * i_d + e_q * i_q;
    const double q = conv == QConvention::ImEConjI ? e_q * i_d - e_d * i_q
                                                   : e_d * i_q - e_q * i_d;
    return {p, q};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> bus_powers(const Eigen::VectorXcd& e,
                                                       const Eigen::VectorXcd& i,
                                                       QConvention conv) {
    if (e.size() != i.size()) throw ValidationError("bus_powers: dimension mismatch");
    Eigen::VectorXd p(e.size()), q(e.size());
    for (Eigen::Index k = 0; k < e.size(); ++k)
        std::tie(p(k), q(k)) = bus_powers(e(k).real(), e(k).imag(), i(k).real(),
                                          i(k).imag(), conv);
    return {p, q};
}

PowerFlowResult power_flow(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& s_injections,
                           double v_guess, const PowerFlowOptions& opts) {
    const Eigen::Index n = y.rows();
    if (s_injections.size() != n) throw ValidationError("power_flow: dimension mismatch");
    if (v_guess <= 0.0) throw ValidationError("power_flow: voltage guess must be positive");

    Eigen::VectorXd mag = Eigen::VectorXd::Constant(n, v_guess);
    Eigen::VectorXd ang = Eigen::VectorXd::Zero(n);
    const int n_unknowns = static_cast<int>(2 * n - 1);

    auto residual = [&](const Eigen::VectorXd& m, const Eigen::VectorXd& a) {
        const Eigen::VectorXcd e = polar_voltages(m, a);
        const Eigen::VectorXcd mis = e.cwiseProduct((y * e).conjugate()) - s_injections;
        Eigen::VectorXd r(2 * n);
        r.head(n) = mis.real();
        r.tail(n) = mis.imag();
        return r;
    };

    Eigen::VectorXd r = residual(mag, ang);
    int it = 0;
    double rel_step = 0.0;
    for (; it < opts.max_iterations; ++it) {
        const auto inj = injections(y, mag, ang);
        Eigen::MatrixXd jac(2 * n, n_unknowns);
        for (Eigen::Index j = 0; j < n; ++j) {
            jac.col(j).head(n) = inj.ds_dmag.col(j).real();
            jac.col(j).tail(n) = inj.ds_dmag.col(j).imag();
        }
        for (Eigen::Index j = 1; j < n; ++j) {  // angle 1 fixed at zero
            jac.col(n + j - 1).head(n) = inj.ds_dang.col(j).real();
            jac.col(n + j - 1).tail(n) = inj.ds_dang.col(j).imag();
        }
        const Eigen::VectorXd dx = jac.colPivHouseholderQr().solve(-r);

        double lambda = 1.0;
        Eigen::VectorXd mag_n, ang_n, r_n;
        for (int half = 0; half < 30; ++half) {
            mag_n = mag + lambda * dx.head(n);
            ang_n = ang;
            ang_n.tail(n - 1) += lambda * dx.tail(n - 1);
            r_n = residual(mag_n, ang_n);
            if (r_n.norm() <= r.norm()) break;
            lambda *= 0.5;
        }
        mag = mag_n;
        ang = ang_n;
        r = r_n;
        const double x_scale = std::max(1.0, std::hypot(mag.norm(), ang.norm()));
        rel_step = lambda * dx.norm() / x_scale;
        if (rel_step < opts.step_tol) break;
    }
    if (it == opts.max_iterations && rel_step > opts.stall_tol)
        throw ConvergenceError("power_flow: no convergence after " +
                                   std::to_string(opts.max_iterations) +
                                   " iterations (residual " + std::to_string(r.norm()) + " VA)",
                               r.norm());

    PowerFlowResult out;
    out.e = polar_voltages(mag, ang);
    out.residual = r.norm();
    out.iterations = it;
    return out;
}

OperatingPoint solve_droop_equilibrium(const Eigen::MatrixXcd& y,
                                       const std::vector<InverterParams>& inverters,
                                       QConvention conv, double v_guess) {
    const Eigen::Index n = y.rows();
    if (static_cast<Eigen::Index>(inverters.size()) != n)
        throw ValidationError("solve_droop_equilibrium: one inverter per bus required");
    if (v_guess <= 0.0)
        throw ValidationError("solve_droop_equilibrium: voltage guess must be positive");

    const double q_sign = conv == QConvention::ImEConjI ? 1.0 : -1.0;
    const bool all_kp_zero = std::all_of(inverters.begin(), inverters.end(),
                                         [](const InverterParams& p) { return p.kp == 0.0; });

    const double w_scale = std::abs(inverters[0].omega_0) > 0 ? std::abs(inverters[0].omega_0)
                                                              : 1.0;
    const double e_scale = v_guess;

    Eigen::VectorXd mag = Eigen::VectorXd::Constant(n, v_guess);
    Eigen::VectorXd ang = Eigen::VectorXd::Zero(n);
    double omega = inverters[0].omega_0;
    for (Eigen::Index k = 0; k < n; ++k)
        if (inverters[k].e_0 > 0.0) mag(k) = inverters[k].e_0;

    if (all_kp_zero) {
        // Angles are indeterminate (no frequency feedback); freeze them at
        // zero and require consistent frequency setpoints.
        for (const auto& p : inverters)
            if (std::abs(p.omega_0 - omega) > 1e-9 * w_scale)
                throw ValidationError(
                    "solve_droop_equilibrium: all kp are zero but frequency setpoints "
                    "disagree; no common equilibrium frequency exists");
    }

    // Scaled residuals: frequency rows / w_scale, magnitude rows / e_scale.
    auto residual = [&](const Eigen::VectorXd& m, const Eigen::VectorXd& a, double w) {
        const Eigen::VectorXcd e = polar_voltages(m, a);
        const Eigen::VectorXcd s = e.cwiseProduct((y * e).conjugate());
        Eigen::VectorXd r(2 * n);
        for (Eigen::Index k = 0; k < n; ++k) {
            const double p = s(k).real();
            const double q = q_sign * s(k).imag();
            r(k) = (inverters[k].omega_0 - inverters[k].kp * p - w) / w_scale;
            r(n + k) = (inverters[k].e_0 - inverters[k].kv * q - m(k)) / e_scale;
        }
        return r;
    };

    Eigen::VectorXd r = residual(mag, ang, omega);
    bool converged = r.norm() < 1e-9;
    for (int it = 0; it < 50 && !converged; ++it) {
        const auto inj = injections(y, mag, ang);
        // Unknowns: magnitudes (n), angles 2..n (n-1), omega. When all kp
        // vanish the angle and omega columns drop (angles frozen, omega
        // pinned) and only the magnitude block is solved.
        const int n_ang = all_kp_zero ? 0 : static_cast<int>(n - 1);
        const int n_unknowns = static_cast<int>(n) + n_ang + (all_kp_zero ? 0 : 1);
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * n, n_unknowns);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                jac(i, j) = -inverters[i].kp * inj.ds_dmag(i, j).real() / w_scale;
                jac(n + i, j) = -inverters[i].kv * q_sign * inj.ds_dmag(i, j).imag() / e_scale;
                if (i == j) jac(n + i, j) -= 1.0 / e_scale;
                if (!all_kp_zero && j >= 1) {
                    jac(i, n + j - 1) = -inverters[i].kp * inj.ds_dang(i, j).real() / w_scale;
                    jac(n + i, n + j - 1) =
                        -inverters[i].kv * q_sign * inj.ds_dang(i, j).imag() / e_scale;
                }
            }
            if (!all_kp_zero) jac(i, n_unknowns - 1) = -1.0 / w_scale;
        }

        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac.transpose() * jac);
        if (!lu.isInvertible())
            throw ConvergenceError(
                "solve_droop_equilibrium: singular Jacobian (underdetermined droop "
                "configuration, e.g. mixed zero/nonzero kp)",
                r.norm());
        const Eigen::VectorXd dx = lu.solve(jac.transpose() * (-r));

        double lambda = 1.0;
        Eigen::VectorXd mag_n, ang_n, r_n;
        double omega_n = omega;
        for (int half = 0; half < 30; ++half) {
            mag_n = mag + lambda * dx.head(n);
            ang_n = ang;
            if (!all_kp_zero) {
                ang_n.tail(n - 1) += lambda * dx.segment(n, n - 1);
                omega_n = omega + lambda * dx(n_unknowns - 1);
            }
            r_n = residual(mag_n, ang_n, omega_n);
            if (r_n.norm() <= r.norm()) break;
            lambda *= 0.5;
        }
        mag = mag_n;
        ang = ang_n;
        omega = omega_n;
        r = r_n;
        converged = r.norm() < 1e-9;
    }
    if (!converged)
        throw ConvergenceError("solve_droop_equilibrium: residual " +
                                   std::to_string(r.norm()) + " after 50 iterations",
                               r.norm());
    if ((mag.array() <= 0.0).any())
        throw ConvergenceError("solve_droop_equilibrium: nonpositive voltage magnitude",
                               r.norm());

    OperatingPoint op;
    op.e = polar_voltages(mag, ang);
    op.i = y * op.e;
    std::tie(op.p, op.q) = bus_powers(op.e, op.i, conv);
    op.omega = omega;
    return op;
}

std::vector<Setpoint> implied_setpoints(const OperatingPoint& op,
                                        const std::vector<InverterParams>& inverters) {
    if (static_cast<Eigen::Index>(inverters.size()) != op.e.size())
        throw ValidationError("implied_setpoints: dimension mismatch");
    std::vector<Setpoint> out(inverters.size());
    for (std::size_t k = 0; k < inverters.size(); ++k) {
        out[k].omega_0 = op.omega + inverters[k].kp * op.p(static_cast<Eigen::Index>(k));
        out[k].e_0 = std::abs(op.e(static_cast<Eigen::Index>(k))) +
                     inverters[k].kv * op.q(static_cast<Eigen::Index>(k));
    }
    return out;
}

}  // namespace gridstab
