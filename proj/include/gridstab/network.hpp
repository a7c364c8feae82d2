#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "gridstab/error.hpp"

namespace gridstab {

using Complex = std::complex<double>;

/// Series line between two buses (1-based indices), impedance in ohms.
struct LineSpec {
    int from_bus = 0;
    int to_bus = 0;
    Complex impedance{0.0, 0.0};
};

/// Constant-admittance load at a bus. `apparent_power` is the value as
/// listed in the case data (P + jQ, volt-amperes); how it converts to an
/// admittance is governed by LoadConversion.
struct LoadSpec {
    int bus = 0;
    Complex apparent_power{0.0, 0.0};
    double rated_voltage_ll = 0.0;  // volts RMS line-to-line
};

/// Rule for converting a LoadSpec VA figure into a shunt admittance.
///
/// style:
///   ThreePhaseTotal  apparent_power is a three-phase total; the per-phase
///                    value S/3 converts at the conversion voltage.
///   PerPhase         apparent_power is already per phase.
/// voltage_v: phase-to-neutral RMS conversion voltage. <= 0 means derive
/// from the load's rated_voltage_ll as V_ll / sqrt(3).
struct LoadConversion {
    enum class Style { ThreePhaseTotal, PerPhase };
    Style style = Style::ThreePhaseTotal;
    double voltage_v = 0.0;

    double conversion_voltage(double rated_voltage_ll) const;
    /// Per-phase complex power implied by a raw VA figure.
    Complex per_phase(Complex apparent_power) const;
};

/// Admittance of a series impedance. Throws on |z| == 0.
Complex line_admittance(Complex impedance);

/// Shunt admittance of a load: Y = conj(S_phase) / V_ln^2.
Complex load_admittance(const LoadSpec& load, const LoadConversion& conv);

/// N x N complex bus admittance matrix: diagonal = local load admittance
/// plus incident line admittances, off-diagonal = -(line admittance).
Eigen::MatrixXcd build_ybus(const std::vector<LineSpec>& lines,
                            const std::vector<LoadSpec>& loads, int n,
                            const LoadConversion& conv);

/// 2N x 2N real expansion of a complex matrix: each entry G + jB becomes
/// the block [[G, -B], [B, G]] acting on interleaved (d, q) components.
Eigen::MatrixXd expand_real(const Eigen::MatrixXcd& y);

/// Interleave a complex vector into (d1, q1, d2, q2, ...).
Eigen::VectorXd interleave_dq(const Eigen::VectorXcd& e);

/// Line/load description of one case.
struct NetworkModel {
    std::vector<LineSpec> lines;
    std::vector<LoadSpec> loads;
    double rated_voltage_ll = 0.0;

    Eigen::MatrixXcd ybus(int n, const LoadConversion& conv) const {
        return build_ybus(lines, loads, n, conv);
    }
};

}  // namespace gridstab
