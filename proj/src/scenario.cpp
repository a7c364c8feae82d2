#include "gridstab/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace gridstab {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw ValidationError("config: " + where + ": " + what);
}

void require_keys(const json& obj, const std::string& where,
                  const std::set<std::string>& allowed) {
    if (!obj.is_object()) bad(where, "expected an object");
    for (const auto& item : obj.items())
        if (!allowed.count(item.key())) bad(where + "." + item.key(), "unknown key");
}

double num(const json& obj, const std::string& where, const std::string& key) {
    if (!obj.contains(key)) bad(where, "missing key '" + key + "'");
    if (!obj.at(key).is_number()) bad(where + "." + key, "expected a number");
    return obj.at(key).get<double>();
}

double num_or(const json& obj, const std::string& where, const std::string& key,
              double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_number()) bad(where + "." + key, "expected a number");
    return obj.at(key).get<double>();
}

int integer(const json& obj, const std::string& where, const std::string& key) {
    if (!obj.contains(key)) bad(where, "missing key '" + key + "'");
    if (!obj.at(key).is_number_integer()) bad(where + "." + key, "expected an integer");
    return obj.at(key).get<int>();
}

std::string text(const json& obj, const std::string& where, const std::string& key) {
    if (!obj.contains(key)) bad(where, "missing key '" + key + "'");
    if (!obj.at(key).is_string()) bad(where + "." + key, "expected a string");
    return obj.at(key).get<std::string>();
}

Complex complex_pair(const json& obj, const std::string& where, const std::string& key) {
    if (!obj.contains(key)) bad(where, "missing key '" + key + "'");
    const json& v = obj.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        bad(where + "." + key, "expected [re, im]");
    return {v[0].get<double>(), v[1].get<double>()};
}

json complex_to_json(Complex z) { return json::array({z.real(), z.imag()}); }

StepEvent parse_event(const json& ev, const std::string& where) {
    require_keys(ev, where,
                 {"time", "kind", "bus", "inverter", "factor", "delta", "fraction",
                  "quantity"});
    StepEvent out;
    out.time = num(ev, where, "time");
    const std::string kind = text(ev, where, "kind");
    if (kind == "load_scale") {
        out.kind = StepEvent::Kind::LoadScale;
        out.index = integer(ev, where, "bus");
        out.magnitude = num(ev, where, "factor");
        if (out.magnitude <= 0.0) bad(where + ".factor", "load_scale factor must be > 0");
    } else if (kind == "omega0_step") {
        out.kind = StepEvent::Kind::Omega0Step;
        out.index = integer(ev, where, "inverter");
        out.magnitude = num(ev, where, "delta");
    } else if (kind == "e0_step") {
        out.kind = StepEvent::Kind::E0Step;
        out.index = integer(ev, where, "inverter");
        out.magnitude = num(ev, where, "delta");
    } else if (kind == "power_target") {
        out.kind = StepEvent::Kind::PowerTarget;
        out.index = integer(ev, where, "inverter");
        out.magnitude = num(ev, where, "fraction");
        const std::string q = text(ev, where, "quantity");
        if (q != "p" && q != "q") bad(where + ".quantity", "expected \"p\" or \"q\"");
        out.quantity = q[0];
    } else {
        bad(where + ".kind", "unknown event kind '" + kind + "'");
    }
    if (out.time < 0.0) bad(where + ".time", "must be >= 0");
    return out;
}

json event_to_json(const StepEvent& ev) {
    json out;
    out["time"] = ev.time;
    switch (ev.kind) {
        case StepEvent::Kind::LoadScale:
            out["kind"] = "load_scale";
            out["bus"] = ev.index;
            out["factor"] = ev.magnitude;
            break;
        case StepEvent::Kind::Omega0Step:
            out["kind"] = "omega0_step";
            out["inverter"] = ev.index;
            out["delta"] = ev.magnitude;
            break;
        case StepEvent::Kind::E0Step:
            out["kind"] = "e0_step";
            out["inverter"] = ev.index;
            out["delta"] = ev.magnitude;
            break;
        case StepEvent::Kind::PowerTarget:
            out["kind"] = "power_target";
            out["inverter"] = ev.index;
            out["fraction"] = ev.magnitude;
            out["quantity"] = std::string(1, ev.quantity);
            break;
    }
    return out;
}

}  // namespace

ScenarioConfig parse_config(const json& doc) {
    require_keys(doc, "$",
                 {"schema_version", "network", "inverters", "scenario", "epll", "options"});
    if (!doc.contains("schema_version") || doc.at("schema_version") != "1")
        bad("$.schema_version", "expected \"1\"");

    ScenarioConfig cfg;

    const json& net = doc.contains("network") ? doc.at("network") : json::object();
    require_keys(net, "$.network", {"lines", "loads", "rated_voltage_ll"});
    cfg.network.rated_voltage_ll = num(net, "$.network", "rated_voltage_ll");
    if (cfg.network.rated_voltage_ll <= 0.0)
        bad("$.network.rated_voltage_ll", "must be > 0");
    if (net.contains("lines")) {
        if (!net.at("lines").is_array()) bad("$.network.lines", "expected an array");
        int idx = 0;
        for (const auto& line : net.at("lines")) {
            const std::string where = "$.network.lines[" + std::to_string(idx++) + "]";
            require_keys(line, where, {"from_bus", "to_bus", "impedance"});
            LineSpec spec;
            spec.from_bus = integer(line, where, "from_bus");
            spec.to_bus = integer(line, where, "to_bus");
            spec.impedance = complex_pair(line, where, "impedance");
            cfg.network.lines.push_back(spec);
        }
    }
    if (net.contains("loads")) {
        if (!net.at("loads").is_array()) bad("$.network.loads", "expected an array");
        int idx = 0;
        for (const auto& load : net.at("loads")) {
            const std::string where = "$.network.loads[" + std::to_string(idx++) + "]";
            require_keys(load, where, {"bus", "apparent_power"});
            LoadSpec spec;
            spec.bus = integer(load, where, "bus");
            spec.apparent_power = complex_pair(load, where, "apparent_power");
            spec.rated_voltage_ll = cfg.network.rated_voltage_ll;
            cfg.network.loads.push_back(spec);
        }
    }

    if (!doc.contains("inverters") || !doc.at("inverters").is_array() ||
        doc.at("inverters").empty())
        bad("$.inverters", "expected a nonempty array");
    int n_power = 0, n_setpoint = 0, idx = 0;
    for (const auto& inv : doc.at("inverters")) {
        const std::string where = "$.inverters[" + std::to_string(idx++) + "]";
        require_keys(inv, where, {"kp", "kv", "omega_f", "omega0_hz", "e0_v", "power_va"});
        InverterConfig c;
        c.kp = num(inv, where, "kp");
        c.kv = num(inv, where, "kv");
        c.omega_f = num(inv, where, "omega_f");
        if (c.omega_f <= 0.0) bad(where + ".omega_f", "must be > 0");
        if (c.kp < 0.0 || c.kv < 0.0) bad(where, "droop coefficients must be >= 0");
        if (inv.contains("power_va")) {
            c.power_va = complex_pair(inv, where, "power_va");
            ++n_power;
        }
        if (inv.contains("omega0_hz") || inv.contains("e0_v")) {
            c.omega0_hz = num(inv, where, "omega0_hz");
            c.e0_v = num(inv, where, "e0_v");
            if (*c.e0_v <= 0.0) bad(where + ".e0_v", "must be > 0");
            ++n_setpoint;
        }
        cfg.inverters.push_back(c);
    }
    const int n = static_cast<int>(cfg.inverters.size());
    if (!((n_power == n && n_setpoint == 0) || (n_power == 0 && n_setpoint == n)))
        bad("$.inverters",
            "exactly one operating-point style per config: either every inverter has "
            "power_va or every inverter has omega0_hz + e0_v");

    const json& sc = doc.contains("scenario") ? doc.at("scenario") : json::object();
    require_keys(sc, "$.scenario", {"events", "dt", "duration", "nominal_frequency_hz"});
    cfg.dt = num_or(sc, "$.scenario", "dt", 1e-4);
    cfg.duration = num_or(sc, "$.scenario", "duration", 1.0);
    cfg.nominal_frequency_hz = num_or(sc, "$.scenario", "nominal_frequency_hz", 60.0);
    if (cfg.dt <= 0.0) bad("$.scenario.dt", "must be > 0");
    if (cfg.duration < 0.0) bad("$.scenario.duration", "must be >= 0");
    if (sc.contains("events")) {
        if (!sc.at("events").is_array()) bad("$.scenario.events", "expected an array");
        int eidx = 0;
        double prev = 0.0;
        for (const auto& ev : sc.at("events")) {
            const std::string where = "$.scenario.events[" + std::to_string(eidx++) + "]";
            StepEvent parsed = parse_event(ev, where);
            if (parsed.time > cfg.duration) bad(where + ".time", "beyond scenario duration");
            if (parsed.time < prev) bad(where + ".time", "events must be sorted by time");
            prev = parsed.time;
            cfg.events.push_back(parsed);
        }
    }

    if (doc.contains("epll")) {
        const json& ep = doc.at("epll");
        require_keys(ep, "$.epll", {"zeta", "omega_n", "k1", "a0", "sample_rate"});
        cfg.epll.zeta = num_or(ep, "$.epll", "zeta", cfg.epll.zeta);
        cfg.epll.omega_n = num_or(ep, "$.epll", "omega_n", cfg.epll.omega_n);
        cfg.epll.k1 = num_or(ep, "$.epll", "k1", cfg.epll.k1);
        cfg.epll.a0 = num_or(ep, "$.epll", "a0", cfg.epll.a0);
        cfg.epll.sample_rate = num_or(ep, "$.epll", "sample_rate", cfg.epll.sample_rate);
    }
    if (cfg.epll.a0 <= 0.0) cfg.epll.a0 = cfg.network.rated_voltage_ll * std::sqrt(2.0);

    if (doc.contains("options")) {
        const json& op = doc.at("options");
        require_keys(op, "$.options", {"q_convention", "load_conversion"});
        if (op.contains("q_convention")) {
            const std::string conv = text(op, "$.options", "q_convention");
            if (conv == "im_e_conj_i")
                cfg.options.q_convention = QConvention::ImEConjI;
            else if (conv == "eq15")
                cfg.options.q_convention = QConvention::Eq15;
            else
                bad("$.options.q_convention", "expected \"im_e_conj_i\" or \"eq15\"");
        }
        if (op.contains("load_conversion")) {
            const json& lc = op.at("load_conversion");
            require_keys(lc, "$.options.load_conversion", {"style", "voltage_v"});
            if (lc.contains("style")) {
                const std::string style = text(lc, "$.options.load_conversion", "style");
                if (style == "three_phase")
                    cfg.options.load_conversion.style = LoadConversion::Style::ThreePhaseTotal;
                else if (style == "per_phase")
                    cfg.options.load_conversion.style = LoadConversion::Style::PerPhase;
                else
                    bad("$.options.load_conversion.style",
                        "expected \"three_phase\" or \"per_phase\"");
            }
            cfg.options.load_conversion.voltage_v =
                num_or(lc, "$.options.load_conversion", "voltage_v", 0.0);
        }
    }
    return cfg;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& err) {
        throw ValidationError("config: '" + path + "' is not valid JSON: " + err.what());
    }
    return parse_config(doc);
}

json config_to_json(const ScenarioConfig& cfg) {
    json doc;
    doc["schema_version"] = "1";
    doc["network"]["rated_voltage_ll"] = cfg.network.rated_voltage_ll;
    doc["network"]["lines"] = json::array();
    for (const auto& line : cfg.network.lines)
        doc["network"]["lines"].push_back({{"from_bus", line.from_bus},
                                           {"to_bus", line.to_bus},
                                           {"impedance", complex_to_json(line.impedance)}});
    doc["network"]["loads"] = json::array();
    for (const auto& load : cfg.network.loads)
        doc["network"]["loads"].push_back(
            {{"bus", load.bus}, {"apparent_power", complex_to_json(load.apparent_power)}});
    doc["inverters"] = json::array();
    for (const auto& inv : cfg.inverters) {
        json j{{"kp", inv.kp}, {"kv", inv.kv}, {"omega_f", inv.omega_f}};
        if (inv.power_va) j["power_va"] = complex_to_json(*inv.power_va);
        if (inv.omega0_hz) j["omega0_hz"] = *inv.omega0_hz;
        if (inv.e0_v) j["e0_v"] = *inv.e0_v;
        doc["inverters"].push_back(j);
    }
    doc["scenario"]["dt"] = cfg.dt;
    doc["scenario"]["duration"] = cfg.duration;
    doc["scenario"]["nominal_frequency_hz"] = cfg.nominal_frequency_hz;
    doc["scenario"]["events"] = json::array();
    for (const auto& ev : cfg.events) doc["scenario"]["events"].push_back(event_to_json(ev));
    doc["epll"] = {{"zeta", cfg.epll.zeta},
                   {"omega_n", cfg.epll.omega_n},
                   {"k1", cfg.epll.k1},
                   {"a0", cfg.epll.a0},
                   {"sample_rate", cfg.epll.sample_rate}};
    doc["options"]["q_convention"] =
        cfg.options.q_convention == QConvention::ImEConjI ? "im_e_conj_i" : "eq15";
    doc["options"]["load_conversion"] = {
        {"style", cfg.options.load_conversion.style == LoadConversion::Style::ThreePhaseTotal
                      ? "three_phase"
                      : "per_phase"},
        {"voltage_v", cfg.options.load_conversion.voltage_v}};
    return doc;
}

ScenarioConfig preset(const std::string& case_id) {
    const bool case1 = case_id == "case1";
    if (!case1 && case_id != "case2")
        throw ValidationError("preset: unknown case id '" + case_id +
                              "' (expected case1 or case2)");

    ScenarioConfig cfg;
    cfg.network.rated_voltage_ll = 480.0;
    cfg.network.lines = {{1, 2, {1.5, 3.0}}, {1, 3, {0.25, 1.0}}, {2, 3, {0.5, 4.0}}};
    const std::vector<Complex> loads =
        case1 ? std::vector<Complex>{{11059, 6128}, {14061, 6183}, {7025, 3462}}
              : std::vector<Complex>{{900, 400}, {750, 375}, {1000, 450}};
    const std::vector<Complex> powers =
        case1 ? std::vector<Complex>{{11073, 5996}, {13951, 5538}, {7123, 4296}}
              : std::vector<Complex>{{900, 400}, {750, 375}, {1000, 450}};
    for (int b = 0; b < 3; ++b) {
        cfg.network.loads.push_back({b + 1, loads[b], cfg.network.rated_voltage_ll});
        InverterConfig inv;
        inv.kp = 5e-4;
        inv.kv = 5e-4;
        inv.omega_f = 75.4;
        inv.power_va = powers[b];
        cfg.inverters.push_back(inv);
    }
    cfg.nominal_frequency_hz = 60.0;
    cfg.dt = 1e-4;
    cfg.duration = 1.0;
    // Case step events: real power at inverter 2 and reactive power at
    // inverter 3, both at 0.500 s (10% each; the second case uses 15% on
    // the reactive step).
    cfg.events = {{0.5, StepEvent::Kind::PowerTarget, 2, 0.10, 'p'},
                  {0.5, StepEvent::Kind::PowerTarget, 3, case1 ? 0.10 : 0.15, 'q'}};
    cfg.epll = {0.85, 200.0, 200.0, 480.0 * std::sqrt(2.0), 10000.0};
    // Calibrated against the case eigenvalue tables (see README): the
    // Eq.(15) reactive-power sign and a 130 V conversion base reproduce the
    // published spectra; the physical line-to-neutral base (480/sqrt(3))
    // reproduces the published transient timing instead.
    cfg.options.q_convention = QConvention::Eq15;
    cfg.options.load_conversion = {LoadConversion::Style::ThreePhaseTotal, 130.0};
    return cfg;
}

EpllParams epll_params(const EpllConfig& c) {
    return design_gains(c.zeta, c.omega_n, c.a0, c.k1, c.sample_rate);
}

ResolvedScenario resolve(const ScenarioConfig& cfg) {
    const int n = cfg.buses();
    ResolvedScenario out;
    out.ybus = cfg.network.ybus(n, cfg.options.load_conversion);

    std::vector<InverterParams> inverters(n);
    for (int k = 0; k < n; ++k) {
        inverters[k].kp = cfg.inverters[k].kp;
        inverters[k].kv = cfg.inverters[k].kv;
        inverters[k].omega_f = cfg.inverters[k].omega_f;
    }

    const double v_guess =
        cfg.options.load_conversion.conversion_voltage(cfg.network.rated_voltage_ll);
    const bool power_style = cfg.inverters[0].power_va.has_value();

    if (power_style) {
        Eigen::VectorXcd s(n);
        for (int k = 0; k < n; ++k)
            s(k) = cfg.options.load_conversion.per_phase(*cfg.inverters[k].power_va);
        const PowerFlowResult pf = power_flow(out.ybus, s, v_guess);
        out.power_flow_residual = pf.residual;
        OperatingPoint op;
        op.e = pf.e;
        op.i = bus_currents(out.ybus, pf.e);
        std::tie(op.p, op.q) = bus_powers(op.e, op.i, cfg.options.q_convention);
        op.omega = 2.0 * M_PI * cfg.nominal_frequency_hz;
        const auto setpoints = implied_setpoints(op, inverters);
        for (int k = 0; k < n; ++k) {
            inverters[k].omega_0 = setpoints[k].omega_0;
            inverters[k].e_0 = setpoints[k].e_0;
        }
        out.op = op;
    } else {
        for (int k = 0; k < n; ++k) {
            inverters[k].omega_0 = 2.0 * M_PI * *cfg.inverters[k].omega0_hz;
            inverters[k].e_0 = *cfg.inverters[k].e0_v;
        }
        out.op = solve_droop_equilibrium(out.ybus, inverters, cfg.options.q_convention,
                                         v_guess);
    }
    out.inverters = inverters;

    out.dyn.network = cfg.network;
    out.dyn.load_conv = cfg.options.load_conversion;
    out.dyn.inverters = inverters;
    out.dyn.q_conv = cfg.options.q_convention;
    out.dyn.op = out.op;
    out.dyn.omega_frame = out.op.omega;
    out.dyn.events = cfg.events;
    out.dyn.dt = cfg.dt;
    out.dyn.duration = cfg.duration;
    return out;
}

}  // namespace gridstab
