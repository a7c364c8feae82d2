#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gridstab/equilibrium.hpp"

namespace gridstab {

/// Per-inverter linearized blocks for states (d_omega, d_e_d, d_e_q) and
/// inputs (dP, dQ).
struct InverterBlock {
    Eigen::Matrix3d m;
    Eigen::Matrix<double, 3, 2> c;
};

/// Linearization of one inverter about (e_d0, e_q0). Row 1 is the filtered
/// frequency droop; rows 2-3 follow from the magnitude dynamics and the
/// chain rule on e_d = E cos(delta), e_q = E sin(delta) with
/// d(delta)/dt = d_omega in the equilibrium-frequency frame.
InverterBlock inverter_block(const InverterParams& params, Complex e0);

/// Block-diagonal power linearization dS = Is * de + Es * di per bus,
/// Q rows per the active convention.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_is_es(const OperatingPoint& op,
                                                        QConvention conv);

/// 2n x 3n selection matrix picking (d_e_d, d_e_q) out of the state vector
/// (skipping every d_omega column).
Eigen::MatrixXd build_ks(int n);

struct SmallSignalModel {
    Eigen::MatrixXd ms;      // 3N x 3N block diagonal of m blocks
    Eigen::MatrixXd cs;      // 3N x 2N block diagonal of c blocks
    Eigen::MatrixXd is_mat;  // 2N x 2N
    Eigen::MatrixXd es_mat;  // 2N x 2N
    Eigen::MatrixXd ys;      // 2N x 2N real-expanded admittance
    Eigen::MatrixXd ks;      // 2N x 3N
    Eigen::MatrixXd a;       // 3N x 3N, ms + cs (is + es ys) ks
};

SmallSignalModel assemble_model(const OperatingPoint& op,
                                const std::vector<InverterParams>& inverters,
                                const Eigen::MatrixXd& ys, QConvention conv);

/// Full spectrum of a real square matrix (dense solve). Throws on solver
/// failure.
Eigen::VectorXcd eigenvalues(const Eigen::MatrixXd& a);

/// Eigenvalues with |lambda| < zero_tol are treated as the gauge (rotation)
/// modes and excluded from the margin.
struct MarginResult {
    double margin = 0.0;
    bool zero_mode_present = false;
};
MarginResult stability_margin(const Eigen::VectorXcd& eigs, double zero_tol);

/// Spectrum summary. `margin` is over all non-gauge modes. The 2N largest-
/// modulus non-gauge modes form the dominant set (what a 6-entry case table
/// reports for N = 3); surplus slow modes are kept and reported, never
/// dropped.
struct EigenReport {
    Eigen::VectorXcd eigenvalues;
    double zero_tol = 0.0;
    double margin = 0.0;               // max Re over non-gauge modes
    double margin_dominant = 0.0;      // max Re over the dominant set
    bool zero_mode_present = false;
    int zero_mode_count = 0;
    int complex_pairs = 0;             // conjugate pairs in the full spectrum
    int complex_pairs_dominant = 0;    // conjugate pairs within the dominant set
    std::vector<int> dominant;         // indices into `eigenvalues`
    Eigen::VectorXd zero_mode_vector;  // uniform-rotation direction, 3N
};

EigenReport make_eigen_report(const Eigen::MatrixXd& a, const OperatingPoint& op,
                              double omega_f, double zero_tol = 0.0);

/// Uniform-rotation direction (0, -e_q0_i, e_d0_i) per inverter; an exact
/// null vector of any assembled A.
Eigen::VectorXd gauge_vector(const OperatingPoint& op);

/// Which margin a design search tracks.
enum class MarginKind { AllNonGauge, Dominant };

struct SweepSpec {
    std::vector<double> kp_grid;
    std::vector<double> kv_grid;
    std::vector<double> omega_f_grid;  // empty = keep scenario omega_f
    bool freeze_operating_point = false;
    int threads = 0;  // 0 = hardware concurrency
};

struct SweepCell {
    double kp = 0.0, kv = 0.0, omega_f = 0.0;
    bool ok = false;
    std::string error;
    double margin = 0.0;           // all non-gauge
    double margin_dominant = 0.0;
    bool zero_mode = false;
    int complex_pairs = 0;
};

/// Stability map over droop-coefficient grids. Every cell applies (kp, kv,
/// omega_f) to all inverters and by default re-solves the equilibrium at
/// fixed setpoints (droop gains shift the operating point); the freeze flag
/// keeps the base operating point for pure root-locus behavior. Cells are
/// independent; row order is row-major over (kp, kv, omega_f).
std::vector<SweepCell> sweep_droop(const Eigen::MatrixXcd& ybus,
                                   const std::vector<InverterParams>& inverters,
                                   QConvention conv, const OperatingPoint& base_op,
                                   const SweepSpec& spec);

struct FindKpResult {
    bool found = false;
    double kp_max = 0.0;
    int crossings = 0;
    bool non_monotonic = false;
};

/// Largest kp in [kp_lo, kp_hi] whose margin stays at or below
/// `target_margin`, located by a lattice scan refined by bisection to
/// relative width 1e-3. Multiple crossings are reported as non-monotonic.
FindKpResult find_max_kp(const Eigen::MatrixXcd& ybus,
                         const std::vector<InverterParams>& inverters, QConvention conv,
                         const OperatingPoint& base_op, double kv_fixed,
                         double target_margin, double kp_lo, double kp_hi,
                         MarginKind kind = MarginKind::Dominant, int lattice = 33);

}  // namespace gridstab
