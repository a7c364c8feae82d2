#include "gridstab/network.hpp"

#include <cmath>
#include <set>
#include <string>

namespace gridstab {

double LoadConversion::conversion_voltage(double rated_voltage_ll) const {
    if (voltage_v > 0.0) return voltage_v;
    if (rated_voltage_ll <= 0.0)
        throw ValidationError("load conversion: rated line-to-line voltage must be positive");
    return rated_voltage_ll / std::sqrt(3.0);
}

Complex LoadConversion::per_phase(Complex apparent_power) const {
    return style == Style::ThreePhaseTotal ? apparent_power / 3.0 : apparent_power;
}

Complex line_admittance(Complex impedance) {
    if (std::abs(impedance) == 0.0)
        throw ValidationError("line admittance: zero impedance is singular");
    return 1.0 / impedance;
}

Complex load_admittance(const LoadSpec& load, const LoadConversion& conv) {
    if (load.apparent_power.real() < 0.0)
        throw ValidationError("load at bus " + std::to_string(load.bus) +
                              ": negative real power");
    const double v_ln = conv.conversion_voltage(load.rated_voltage_ll);
    const Complex s_phase = conv.per_phase(load.apparent_power);
    return std::conj(s_phase) / (v_ln * v_ln);
}

Eigen::MatrixXcd build_ybus(const std::vector<LineSpec>& lines,
                            const std::vector<LoadSpec>& loads, int n,
                            const LoadConversion& conv) {
    if (n < 1) throw ValidationError("build_ybus: bus count must be >= 1");
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);

    std::set<std::pair<int, int>> seen;
    for (const auto& line : lines) {
        if (line.from_bus < 1 || line.from_bus > n || line.to_bus < 1 || line.to_bus > n)
            throw ValidationError("line " + std::to_string(line.from_bus) + "-" +
                                  std::to_string(line.to_bus) + ": bus index out of range");
        if (line.from_bus == line.to_bus)
            throw ValidationError("line at bus " + std::to_string(line.from_bus) +
                                  ": from and to coincide");
        const auto key = std::minmax(line.from_bus, line.to_bus);
        if (!seen.insert(key).second)
            throw ValidationError("duplicate line between buses " +
                                  std::to_string(key.first) + " and " +
                                  std::to_string(key.second) +
                                  " (merge parallel lines first)");
        const Complex ya = line_admittance(line.impedance);
        const int a = line.from_bus - 1, b = line.to_bus - 1;
        y(a, a) += ya;
        y(b, b) += ya;
        y(a, b) -= ya;
        y(b, a) -= ya;
    }

    for (const auto& load : loads) {
        if (load.bus < 1 || load.bus > n)
            throw ValidationError("load bus index " + std::to_string(load.bus) +
                                  " out of range");
        y(load.bus - 1, load.bus - 1) += load_admittance(load, conv);
    }
    return y;
}

Eigen::MatrixXd expand_real(const Eigen::MatrixXcd& y) {
    const Eigen::Index n = y.rows();
    if (y.cols() != n) throw ValidationError("expand_real: matrix must be square");
    Eigen::MatrixXd r(2 * n, 2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double g = y(i, j).real();
            const double b = y(i, j).imag();
            r(2 * i, 2 * j) = g;
            r(2 * i, 2 * j + 1) = -b;
            r(2 * i + 1, 2 * j) = b;
            r(2 * i + 1, 2 * j + 1) = g;
        }
    }
    return r;
}

Eigen::VectorXd interleave_dq(const Eigen::VectorXcd& e) {
    Eigen::VectorXd v(2 * e.size());
    for (Eigen::Index k = 0; k < e.size(); ++k) {
        v(2 * k) = e(k).real();
        v(2 * k + 1) = e(k).imag();
    }
    return v;
}

}  // namespace gridstab
