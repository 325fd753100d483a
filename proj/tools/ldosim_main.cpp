// ldosim command-line front end.
//
//   ldosim run <netlist> [--out DIR]          execute the netlist's analyses
//   ldosim check <netlist>                    parse + validate only
//   ldosim ota-bode [--set k=v] [--out DIR]   OTA open-loop Bode + metrics
//   ldosim miller-sweep [--set k=v] [--cc v]  phase margin vs compensation cap
//   ldosim ldo-report [--set k=v] [--out DIR] full experiment suite + report
//
// Exit codes: 0 success, 1 I/O error, 2 parse/validation error, 3 solver
// non-convergence, 4 report checks failed.

#include "ldosim/ldosim.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace ldosim;

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitParse = 2;
constexpr int kExitSolver = 3;
constexpr int kExitChecksFailed = 4;

bool read_file(const std::string& path, std::string& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::ostringstream ss;
    ss << in.rdbuf();
    out = ss.str();
    return true;
}

bool write_file(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) return false;
    out << content;
    return static_cast<bool>(out);
}

int apply_overrides(LdoTemplate& tpl, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
            return kExitParse;
        }
        try {
            apply_override(tpl, kv.substr(0, eq), kv.substr(eq + 1));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitParse;
        }
    }
    return kExitOk;
}

int cmd_run(const std::string& path, const std::string& out_dir) {
    std::string text;
    if (!read_file(path, text)) {
        std::cerr << "error: cannot read '" << path << "'\n";
        return kExitIo;
    }

    Circuit circuit;
    try {
        circuit = parse_netlist(text);
    } catch (const ParseError& e) {
        std::cerr << path << ": " << e.what() << "\n";
        return kExitParse;
    }

    int op_count = 0, dc_count = 0, ac_count = 0, tran_count = 0;
    auto csv_name = [](const char* stem, int k) {
        return k == 1 ? std::string(stem) + ".csv"
                      : std::string(stem) + std::to_string(k) + ".csv";
    };

    try {
        for (const auto& directive : circuit.analyses) {
            std::string name, content;
            if (std::holds_alternative<OpDirective>(directive)) {
                OperatingPoint op = run_op(circuit);
                name = csv_name("op", ++op_count);
                content = to_csv(circuit, op);
            } else if (const auto* dc = std::get_if<DcSweepDirective>(&directive)) {
                SweepResult sweep = run_dc_sweep(circuit, *dc);
                name = csv_name("dc", ++dc_count);
                content = to_csv(circuit, sweep);
            } else if (const auto* ac = std::get_if<AcDirective>(&directive)) {
                AcFullResponse resp = run_ac_full(circuit, *ac);
                for (const auto& [freq, reason] : resp.failed_points)
                    std::cerr << "warning: no AC solution at " << fmt_double(freq)
                              << " Hz: " << reason << "\n";
                name = csv_name("ac", ++ac_count);
                content = to_csv(resp);
            } else if (const auto* tr = std::get_if<TranDirective>(&directive)) {
                TransientWaveform wave = run_tran(circuit, *tr);
                if (wave.abort) {
                    std::cerr << "error: transient aborted at step " << wave.abort->step
                              << " (t=" << fmt_double(wave.abort->time_s)
                              << "s): " << wave.abort->reason << "\n";
                    return kExitSolver;
                }
                name = csv_name("tran", ++tran_count);
                content = to_csv(wave);
            }
            const auto dest = std::filesystem::path(out_dir) / name;
            if (!write_file(dest, content)) {
                std::cerr << "error: cannot write '" << dest.string() << "'\n";
                return kExitIo;
            }
            std::cout << "wrote " << dest.string() << "\n";
        }
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const SingularMatrixError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitParse;
    }
    return kExitOk;
}

int cmd_check(const std::string& path) {
    std::string text;
    if (!read_file(path, text)) {
        std::cerr << "error: cannot read '" << path << "'\n";
        return kExitIo;
    }
    try {
        Circuit c = parse_netlist(text);
        std::cout << "ok: " << c.elements.size() << " elements, " << c.nodes.size()
                  << " nodes\n";
        return kExitOk;
    } catch (const ParseError& e) {
        std::cerr << path << ": " << e.what() << "\n";
        return kExitParse;
    }
}

int cmd_ota_bode(const LdoTemplate& tpl, const std::string& out_dir,
                 const std::string& format) {
    try {
        OtaBodeResult res = experiment_ota_bode(tpl.ota);
        const auto dir = std::filesystem::path(out_dir);
        if (!write_file(dir / "ota_ac.csv", to_csv(res.response))) return kExitIo;

        nlohmann::ordered_json j;
        j["dc_gain_db"] = res.metrics.dc_gain_db;
        j["f3db_hz"] = res.metrics.f3db_hz ? nlohmann::ordered_json(*res.metrics.f3db_hz)
                                           : nlohmann::ordered_json(nullptr);
        j["gbw_hz"] = res.metrics.gbw_hz ? nlohmann::ordered_json(*res.metrics.gbw_hz)
                                         : nlohmann::ordered_json(nullptr);
        j["unity_gain_hz"] = res.metrics.unity_gain_hz
                                 ? nlohmann::ordered_json(*res.metrics.unity_gain_hz)
                                 : nlohmann::ordered_json(nullptr);
        j["phase_margin_deg"] = res.metrics.phase_margin_deg
                                    ? nlohmann::ordered_json(*res.metrics.phase_margin_deg)
                                    : nlohmann::ordered_json(nullptr);
        if (format == "json") {
            if (!write_file(dir / "ota_bode.json", j.dump(2) + "\n")) return kExitIo;
        } else {
            std::string csv = "dc_gain_db,f3db_hz,gbw_hz,unity_gain_hz,phase_margin_deg\n";
            auto cell = [](const std::optional<double>& v) {
                return v ? fmt_double(*v) : std::string();
            };
            csv += fmt_double(res.metrics.dc_gain_db) + ',' + cell(res.metrics.f3db_hz) +
                   ',' + cell(res.metrics.gbw_hz) + ',' + cell(res.metrics.unity_gain_hz) +
                   ',' + cell(res.metrics.phase_margin_deg) + '\n';
            if (!write_file(dir / "ota_bode.csv", csv)) return kExitIo;
        }
        std::cout << j.dump() << "\n";
        return kExitOk;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
}

int cmd_miller_sweep(const LdoTemplate& tpl, std::vector<double> cc_values,
                     const std::string& out_dir, const std::string& format) {
    if (cc_values.empty()) cc_values = {0.0, 0.5e-12, 1e-12, 3e-12};
    try {
        std::vector<MillerRow> rows = experiment_miller_ablation(tpl.ota, cc_values);
        const auto dir = std::filesystem::path(out_dir);
        if (format == "json") {
            nlohmann::ordered_json arr = nlohmann::ordered_json::array();
            for (const auto& r : rows) {
                nlohmann::ordered_json row;
                row["cc_f"] = r.cc_f;
                row["pm_deg"] = r.phase_margin_deg
                                    ? nlohmann::ordered_json(*r.phase_margin_deg)
                                    : nlohmann::ordered_json(nullptr);
                row["fp1_hz"] = r.dominant_pole_hz
                                    ? nlohmann::ordered_json(*r.dominant_pole_hz)
                                    : nlohmann::ordered_json(nullptr);
                arr.push_back(row);
            }
            if (!write_file(dir / "miller.json", arr.dump(2) + "\n")) return kExitIo;
            std::cout << arr.dump() << "\n";
        } else {
            const std::string csv = miller_to_csv(rows);
            if (!write_file(dir / "miller.csv", csv)) return kExitIo;
            std::cout << csv;
        }
        return kExitOk;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
}

int cmd_ldo_report(const LdoTemplate& tpl, const std::string& out_dir) {
    try {
        LdoReport report = run_ldo_report(tpl);
        const auto dir = std::filesystem::path(out_dir);
        if (!write_file(dir / "report.json", report_to_json(report).dump(2) + "\n"))
            return kExitIo;
        if (!write_file(dir / "line_sweep.csv", to_csv(build_ldo(tpl), report.line.sweep)))
            return kExitIo;
        if (!write_file(dir / "ota_ac.csv", to_csv(report.bode.response))) return kExitIo;
        if (!write_file(dir / "miller.csv", miller_to_csv(report.miller))) return kExitIo;
        if (!write_file(dir / "load_step.csv", to_csv(report.step.wave))) return kExitIo;

        for (const auto& check : report.checks)
            std::cout << (check.pass ? "pass  " : "FAIL  ") << check.name << "  ("
                      << check.detail << ")\n";
        std::cout << "report: " << (dir / "report.json").string() << "\n";
        return report.all_pass() ? kExitOk : kExitChecksFailed;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const SingularMatrixError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"netlist-driven analog circuit simulator and LDO bench"};
    app.require_subcommand(1);

    std::string netlist_path, out_dir = ".", format = "csv";
    std::vector<std::string> sets;
    std::vector<double> cc_values;

    auto* run = app.add_subcommand("run", "execute a netlist's analyses");
    run->add_option("netlist", netlist_path, "netlist file")->required();
    run->add_option("--out", out_dir, "output directory");

    auto* check = app.add_subcommand("check", "parse and validate a netlist");
    check->add_option("netlist", netlist_path, "netlist file")->required();

    auto* ota = app.add_subcommand("ota-bode", "OTA open-loop Bode metrics");
    ota->add_option("--set", sets, "template override key=value");
    ota->add_option("--out", out_dir, "output directory");
    ota->add_option("--format", format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));

    auto* miller = app.add_subcommand("miller-sweep", "phase margin vs Cc");
    miller->add_option("--set", sets, "template override key=value");
    miller->add_option("--cc", cc_values, "compensation capacitor values [F]");
    miller->add_option("--out", out_dir, "output directory");
    miller->add_option("--format", format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));

    auto* report = app.add_subcommand("ldo-report", "run all experiments");
    report->add_option("--set", sets, "template override key=value");
    report->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    LdoTemplate tpl;
    if (const int rc = apply_overrides(tpl, sets); rc != kExitOk) return rc;

    if (run->parsed()) return cmd_run(netlist_path, out_dir);
    if (check->parsed()) return cmd_check(netlist_path);
    if (ota->parsed()) return cmd_ota_bode(tpl, out_dir, format);
    if (miller->parsed()) return cmd_miller_sweep(tpl, cc_values, out_dir, format);
    if (report->parsed()) return cmd_ldo_report(tpl, out_dir);
    return kExitOk;
}
