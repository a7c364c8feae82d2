#include "gridstab/report_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace gridstab {

using nlohmann::json;

std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json eigen_report_json(const EigenReport& rep) {
    json doc;
    json eigs = json::array();
    for (Eigen::Index k = 0; k < rep.eigenvalues.size(); ++k)
        eigs.push_back(json::array(
            {rep.eigenvalues(k).real(), rep.eigenvalues(k).imag()}));
    doc["eigenvalues"] = eigs;
    doc["zero_tol"] = rep.zero_tol;
    doc["margin"] = rep.margin;
    doc["margin_dominant"] = rep.margin_dominant;
    doc["zero_mode_present"] = rep.zero_mode_present;
    doc["zero_mode_count"] = rep.zero_mode_count;
    doc["complex_pairs"] = rep.complex_pairs;
    doc["complex_pairs_dominant"] = rep.complex_pairs_dominant;
    doc["dominant"] = rep.dominant;
    json v = json::array();
    for (Eigen::Index k = 0; k < rep.zero_mode_vector.size(); ++k)
        v.push_back(rep.zero_mode_vector(k));
    doc["zero_mode_vector"] = v;
    return doc;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
    std::ostringstream out;
    out << "kp,kv,omega_f,margin,zero_mode,complex_pairs\n";
    for (const auto& cell : cells) {
        out << fmt_g17(cell.kp) << ',' << fmt_g17(cell.kv) << ',' << fmt_g17(cell.omega_f)
            << ',' << (cell.ok ? fmt_g17(cell.margin) : "nan") << ','
            << (cell.zero_mode ? 1 : 0) << ',' << cell.complex_pairs << '\n';
    }
    return out.str();
}

std::string trace_csv(const SimTrace& trace) {
    const int n = static_cast<int>(trace.omega.cols());
    std::ostringstream out;
    out << 't';
    for (int b = 1; b <= n; ++b)
        out << ",omega_hz_" << b << ",e_mag_peak_" << b << ",p_w_" << b << ",q_var_" << b;
    out << '\n';
    const double sqrt2 = std::sqrt(2.0);
    for (int row = 0; row < trace.samples(); ++row) {
        out << fmt_g17(trace.t(row));
        for (int b = 0; b < n; ++b) {
            out << ',' << fmt_g17(trace.omega(row, b) / (2.0 * M_PI));
            out << ',' << fmt_g17(sqrt2 * trace.e_mag(row, b));
            out << ',' << fmt_g17(3.0 * trace.p(row, b));
            out << ',' << fmt_g17(3.0 * trace.q(row, b));
        }
        out << '\n';
    }
    return out.str();
}

json trace_sidecar_json(const SimTrace& trace, const json& scenario_meta) {
    json doc;
    doc["scenario"] = scenario_meta;
    doc["samples"] = trace.samples();
    doc["aborted"] = trace.aborted;
    if (trace.aborted) doc["diagnostic"] = trace.diagnostic;
    json events = json::array();
    for (const auto& m : trace.markers)
        events.push_back({{"time", m.time},
                          {"kind", m.kind},
                          {"index", m.index},
                          {"applied", m.applied}});
    doc["events"] = events;
    return doc;
}

std::string epll_csv(const EpllTrace& trace) {
    std::ostringstream out;
    out << "t,x,a_hat,omega_hat_hz,phi_hat,e\n";
    for (std::size_t k = 0; k < trace.size(); ++k) {
        out << fmt_g17(trace.t[k]) << ',' << fmt_g17(trace.x[k]) << ','
            << fmt_g17(trace.a_hat[k]) << ',' << fmt_g17(trace.omega_hat[k] / (2.0 * M_PI))
            << ',' << fmt_g17(trace.phi_hat[k]) << ',' << fmt_g17(trace.e[k]) << '\n';
    }
    return out.str();
}

json run_report_json(const RunReport& rep) {
    json doc;
    doc["command"] = rep.command;
    doc["inputs_digest"] = rep.inputs_digest;
    doc["outputs"] = rep.outputs;
    doc["wall_time_s"] = rep.wall_time_s;
    doc["warnings"] = rep.warnings;
    return doc;
}

std::string digest(const std::string& text) {
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char ch : text) {
        hash ^= ch;
        hash *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << content;
    if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace gridstab
