#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gridstab/dynsim.hpp"
#include "gridstab/smallsignal.hpp"

namespace gridstab {

/// Shortest round-trippable decimal form, 17 significant digits. All file
/// output goes through this so identical inputs produce byte-identical
/// files.
std::string fmt_g17(double v);

nlohmann::json eigen_report_json(const EigenReport& report);

/// Header: kp,kv,omega_f,margin,zero_mode,complex_pairs. Failed cells carry
/// margin "nan". RFC 4180 quoting, LF line endings.
std::string sweep_csv(const std::vector<SweepCell>& cells);

/// Header: t, then omega_hz_<b>, e_mag_peak_<b>, p_w_<b>, q_var_<b> per bus.
/// Voltages are per-phase peak (sqrt(2) x RMS); powers are three-phase
/// totals. Frequencies in Hz.
std::string trace_csv(const SimTrace& trace);

nlohmann::json trace_sidecar_json(const SimTrace& trace, const nlohmann::json& scenario_meta);

/// Header: t,x,a_hat,omega_hat_hz,phi_hat,e.
std::string epll_csv(const EpllTrace& trace);

struct RunReport {
    std::string command;
    std::string inputs_digest;
    std::vector<std::string> outputs;
    double wall_time_s = 0.0;
    std::vector<std::string> warnings;
};

nlohmann::json run_report_json(const RunReport& report);

/// FNV-1a of a canonical serialization, hex string.
std::string digest(const std::string& text);

void write_file(const std::string& path, const std::string& content);

}  // namespace gridstab
