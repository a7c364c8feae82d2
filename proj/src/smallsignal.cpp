#include "gridstab/smallsignal.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <Eigen/Eigenvalues>

namespace gridstab {

InverterBlock inverter_block(const InverterParams& params, Complex e0) {
    const double ed = e0.real(), eq = e0.imag();
    const double mag2 = ed * ed + eq * eq;
    if (mag2 <= 0.0)
        throw ValidationError("inverter_block: zero voltage magnitude makes the "
                              "linearization singular");
    const double mag = std::sqrt(mag2);
    const double wf = params.omega_f;

    InverterBlock b;
    b.m << -wf, 0.0, 0.0,
        -eq, -wf * ed * ed / mag2, -wf * ed * eq / mag2,
        ed, -wf * ed * eq / mag2, -wf * eq * eq / mag2;
    b.c << -params.kp * wf, 0.0,
        0.0, -params.kv * wf * ed / mag,
        0.0, -params.kv * wf * eq / mag;
    return b;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_is_es(const OperatingPoint& op,
                                                        QConvention conv) {
    const Eigen::Index n = op.e.size();
    Eigen::MatrixXd is = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    Eigen::MatrixXd es = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    const double sgn = conv == QConvention::ImEConjI ? 1.0 : -1.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        const double ed = op.e(k).real(), eq = op.e(k).imag();
        const double id = op.i(k).real(), iq = op.i(k).imag();
        is(2 * k, 2 * k) = id;
        is(2 * k, 2 * k + 1) = iq;
        es(2 * k, 2 * k) = ed;
        es(2 * k, 2 * k + 1) = eq;
        // q rows: derivative of q = sgn * (e_q i_d - e_d i_q)
        is(2 * k + 1, 2 * k) = -sgn * iq;
        is(2 * k + 1, 2 * k + 1) = sgn * id;
        es(2 * k + 1, 2 * k) = sgn * eq;
        es(2 * k + 1, 2 * k + 1) = -sgn * ed;
    }
    return {is, es};
}

Eigen::MatrixXd build_ks(int n) {
    if (n < 1) throw ValidationError("build_ks: n must be >= 1");
    Eigen::MatrixXd ks = Eigen::MatrixXd::Zero(2 * n, 3 * n);
    for (int i = 0; i < n; ++i) {
        ks(2 * i, 3 * i + 1) = 1.0;
        ks(2 * i + 1, 3 * i + 2) = 1.0;
    }
    return ks;
}

SmallSignalModel assemble_model(const OperatingPoint& op,
                                const std::vector<InverterParams>& inverters,
                                const Eigen::MatrixXd& ys, QConvention conv) {
    const Eigen::Index n = op.e.size();
    if (static_cast<Eigen::Index>(inverters.size()) != n)
        throw ValidationError("assemble_model: one inverter per bus required");
    if (ys.rows() != 2 * n || ys.cols() != 2 * n)
        throw ValidationError("assemble_model: admittance expansion dimension mismatch");

    SmallSignalModel m;
    m.ms = Eigen::MatrixXd::Zero(3 * n, 3 * n);
    m.cs = Eigen::MatrixXd::Zero(3 * n, 2 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const InverterBlock b = inverter_block(inverters[k], op.e(k));
        m.ms.block<3, 3>(3 * k, 3 * k) = b.m;
        m.cs.block<3, 2>(3 * k, 2 * k) = b.c;
    }
    std::tie(m.is_mat, m.es_mat) = build_is_es(op, conv);
    m.ys = ys;
    m.ks = build_ks(static_cast<int>(n));
    m.a = m.ms + m.cs * (m.is_mat + m.es_mat * m.ys) * m.ks;
    return m;
}

Eigen::VectorXcd eigenvalues(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw ValidationError("eigenvalues: matrix must be square");
    Eigen::EigenSolver<Eigen::MatrixXd> solver(a, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success)
        throw Error("eigenvalues: dense QR iteration did not converge");
    return solver.eigenvalues();
}

MarginResult stability_margin(const Eigen::VectorXcd& eigs, double zero_tol) {
    if (zero_tol <= 0.0) throw ValidationError("stability_margin: zero_tol must be positive");
    MarginResult out;
    out.margin = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < eigs.size(); ++k) {
        if (std::abs(eigs(k)) < zero_tol) {
            out.zero_mode_present = true;
        } else {
            out.margin = std::max(out.margin, eigs(k).real());
        }
    }
    return out;
}

Eigen::VectorXd gauge_vector(const OperatingPoint& op) {
    const Eigen::Index n = op.e.size();
    Eigen::VectorXd v = Eigen::VectorXd::Zero(3 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        v(3 * k + 1) = -op.e(k).imag();
        v(3 * k + 2) = op.e(k).real();
    }
    return v;
}

EigenReport make_eigen_report(const Eigen::MatrixXd& a, const OperatingPoint& op,
                              double omega_f, double zero_tol) {
    EigenReport rep;
    rep.eigenvalues = eigenvalues(a);
    rep.zero_tol = zero_tol > 0.0 ? zero_tol : 1e-6 * omega_f;

    const Eigen::Index total = rep.eigenvalues.size();
    double radius = 0.0;
    for (Eigen::Index k = 0; k < total; ++k)
        radius = std::max(radius, std::abs(rep.eigenvalues(k)));
    const double pair_tol = 1e-12 * std::max(radius, 1.0);

    std::vector<int> nonzero;
    for (Eigen::Index k = 0; k < total; ++k) {
        if (std::abs(rep.eigenvalues(k)) < rep.zero_tol) {
            ++rep.zero_mode_count;
        } else {
            nonzero.push_back(static_cast<int>(k));
            if (rep.eigenvalues(k).imag() > pair_tol) ++rep.complex_pairs;
        }
    }
    rep.zero_mode_present = rep.zero_mode_count > 0;

    const auto margin_all = stability_margin(rep.eigenvalues, rep.zero_tol);
    rep.margin = margin_all.margin;

    // Dominant set: 2N largest-modulus non-gauge modes (N = states / 3).
    const int n_dominant = std::min<int>(static_cast<int>(2 * (total / 3)),
                                         static_cast<int>(nonzero.size()));
    std::sort(nonzero.begin(), nonzero.end(), [&](int lhs, int rhs) {
        return std::abs(rep.eigenvalues(lhs)) > std::abs(rep.eigenvalues(rhs));
    });
    rep.dominant.assign(nonzero.begin(), nonzero.begin() + n_dominant);
    rep.margin_dominant = -std::numeric_limits<double>::infinity();
    for (int idx : rep.dominant) {
        rep.margin_dominant = std::max(rep.margin_dominant, rep.eigenvalues(idx).real());
        if (rep.eigenvalues(idx).imag() > pair_tol) ++rep.complex_pairs_dominant;
    }

    rep.zero_mode_vector = gauge_vector(op);
    const double norm = rep.zero_mode_vector.norm();
    if (norm > 0.0) rep.zero_mode_vector /= norm;
    return rep;
}

namespace {

SweepCell evaluate_cell(const Eigen::MatrixXcd& ybus,
                        std::vector<InverterParams> inverters, QConvention conv,
                        const OperatingPoint& base_op, bool freeze, double kp, double kv,
                        double omega_f) {
    SweepCell cell;
    cell.kp = kp;
    cell.kv = kv;
    cell.omega_f = omega_f;
    for (auto& inv : inverters) {
        inv.kp = kp;
        inv.kv = kv;
        inv.omega_f = omega_f;
    }
    try {
        OperatingPoint op;
        if (freeze || (kp == 0.0 && kv == 0.0)) {
            // With both gains zero the input blocks vanish and A = Ms for
            // any operating point, so no re-solve is needed (or possible:
            // per-bus setpoints generally admit no common frequency).
            op = base_op;
        } else {
            const double guess = std::abs(base_op.e(0));
            op = solve_droop_equilibrium(ybus, inverters, conv, guess);
        }
        const auto model = assemble_model(op, inverters, expand_real(ybus), conv);
        const auto rep = make_eigen_report(model.a, op, omega_f);
        cell.ok = true;
        cell.margin = rep.margin;
        cell.margin_dominant = rep.margin_dominant;
        cell.zero_mode = rep.zero_mode_present;
        cell.complex_pairs = rep.complex_pairs;
    } catch (const Error& err) {
        cell.ok = false;
        cell.error = err.what();
        cell.margin = std::numeric_limits<double>::quiet_NaN();
        cell.margin_dominant = cell.margin;
    }
    return cell;
}

}  // namespace

std::vector<SweepCell> sweep_droop(const Eigen::MatrixXcd& ybus,
                                   const std::vector<InverterParams>& inverters,
                                   QConvention conv, const OperatingPoint& base_op,
                                   const SweepSpec& spec) {
    if (spec.kp_grid.empty() || spec.kv_grid.empty())
        throw ValidationError("sweep_droop: grids must be nonempty");
    for (double v : spec.kp_grid)
        if (v < 0.0) throw ValidationError("sweep_droop: kp values must be >= 0");
    for (double v : spec.kv_grid)
        if (v < 0.0) throw ValidationError("sweep_droop: kv values must be >= 0");

    std::vector<double> wf_grid = spec.omega_f_grid;
    if (wf_grid.empty()) wf_grid.push_back(inverters.at(0).omega_f);

    struct Job {
        double kp, kv, wf;
    };
    std::vector<Job> jobs;
    for (double kp : spec.kp_grid)
        for (double kv : spec.kv_grid)
            for (double wf : wf_grid) jobs.push_back({kp, kv, wf});

    std::vector<SweepCell> cells(jobs.size());
    int threads = spec.threads > 0 ? spec.threads
                                   : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp<int>(threads, 1, static_cast<int>(jobs.size()));

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next.fetch_add(1); k < jobs.size(); k = next.fetch_add(1))
            cells[k] = evaluate_cell(ybus, inverters, conv, base_op,
                                     spec.freeze_operating_point, jobs[k].kp, jobs[k].kv,
                                     jobs[k].wf);
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return cells;
}

FindKpResult find_max_kp(const Eigen::MatrixXcd& ybus,
                         const std::vector<InverterParams>& inverters, QConvention conv,
                         const OperatingPoint& base_op, double kv_fixed,
                         double target_margin, double kp_lo, double kp_hi, MarginKind kind,
                         int lattice) {
    if (!(kp_lo >= 0.0 && kp_hi > kp_lo))
        throw ValidationError("find_max_kp: need 0 <= kp_lo < kp_hi");
    if (lattice < 2) throw ValidationError("find_max_kp: lattice must have >= 2 points");

    const double wf = inverters.at(0).omega_f;
    auto margin_at = [&](double kp) {
        const SweepCell cell = evaluate_cell(ybus, inverters, conv, base_op, false, kp,
                                             kv_fixed, wf);
        if (!cell.ok) return std::numeric_limits<double>::infinity();
        return kind == MarginKind::Dominant ? cell.margin_dominant : cell.margin;
    };

    std::vector<double> kp_pts(lattice), margins(lattice);
    for (int k = 0; k < lattice; ++k) {
        kp_pts[k] = kp_lo + (kp_hi - kp_lo) * k / (lattice - 1);
        margins[k] = margin_at(kp_pts[k]);
    }

    FindKpResult out;
    std::vector<std::pair<double, double>> crossings;  // satisfied -> violated brackets
    for (int k = 0; k + 1 < lattice; ++k) {
        const bool ok_l = margins[k] <= target_margin;
        const bool ok_r = margins[k + 1] <= target_margin;
        if (ok_l != ok_r) crossings.emplace_back(kp_pts[k], kp_pts[k + 1]);
    }
    out.crossings = static_cast<int>(crossings.size());
    out.non_monotonic = out.crossings > 1;

    if (margins.back() <= target_margin) {
        out.found = true;
        out.kp_max = kp_hi;
        return out;
    }
    // Bisect the last satisfied->violated bracket: the largest kp meeting the
    // target along the scanned lattice.
    for (auto it = crossings.rbegin(); it != crossings.rend(); ++it) {
        auto [lo, hi] = *it;
        if (margin_at(lo) > target_margin) continue;
        while ((hi - lo) > 1e-3 * std::max(hi, 1e-300)) {
            const double mid = 0.5 * (lo + hi);
            (margin_at(mid) <= target_margin ? lo : hi) = mid;
        }
        out.found = true;
        out.kp_max = lo;
        return out;
    }
    if (margins.front() <= target_margin) {
        out.found = true;
        out.kp_max = kp_lo;
    }
    return out;
}

}  // namespace gridstab
