#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gridstab/dynsim.hpp"

namespace gridstab {

/// One inverter as configured. Exactly one operating-point style is allowed
/// per document: either every inverter carries power_va (resolved through
/// the network solve) or every inverter carries omega0_hz + e0_v setpoints.
struct InverterConfig {
    double kp = 0.0;
    double kv = 0.0;
    double omega_f = 0.0;
    std::optional<double> omega0_hz;
    std::optional<double> e0_v;
    std::optional<Complex> power_va;
};

struct EpllConfig {
    double zeta = 0.85;
    double omega_n = 200.0;
    double k1 = 200.0;
    double a0 = 0.0;  // volts
    double sample_rate = 10000.0;
};

struct Options {
    QConvention q_convention = QConvention::Eq15;
    LoadConversion load_conversion;
};

/// Parsed scenario document (schema version "1").
struct ScenarioConfig {
    NetworkModel network;
    std::vector<InverterConfig> inverters;
    std::vector<StepEvent> events;
    double dt = 1e-4;
    double duration = 1.0;
    double nominal_frequency_hz = 60.0;
    EpllConfig epll;
    Options options;

    int buses() const { return static_cast<int>(inverters.size()); }
};

/// Strict parse: schema_version must be "1"; unknown keys are rejected with
/// their JSON location.
ScenarioConfig parse_config(const nlohmann::json& doc);
ScenarioConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ScenarioConfig& config);

/// Shipped case presets. All network, droop, and power figures are the case
/// table values verbatim; options carry the calibrated conversion voltage
/// and reactive-power convention selected against the case eigenvalue
/// tables (see README).
ScenarioConfig preset(const std::string& case_id);

/// Everything computed from a config: the bus matrix, inverters with
/// resolved setpoints, the equilibrium, and a simulation-ready scenario.
struct ResolvedScenario {
    Eigen::MatrixXcd ybus;
    std::vector<InverterParams> inverters;
    OperatingPoint op;
    DynScenario dyn;
    double power_flow_residual = 0.0;  // VA; 0 for setpoint-style configs
};

ResolvedScenario resolve(const ScenarioConfig& config);

EpllParams epll_params(const EpllConfig& c);

}  // namespace gridstab
