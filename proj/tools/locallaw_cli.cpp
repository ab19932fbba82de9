// locallaw: run a Monte Carlo experiment from a config file, or evaluate the limiting laws.
//
//   locallaw run --config run.cfg --out results/ [--<key> value ...]
//   locallaw eval mp --phi 1 --z 2+0.01i
//
// Exit status: 0 all checks pass, 1 a check failed, 2 bad input, 3 budget exceeded (partial report).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "locallaw/report.hpp"
#include "locallaw/spectral_laws.hpp"

using namespace locallaw;

namespace {

constexpr int kExitFail = 1, kExitInput = 2, kExitBudget = 3;

cplx parse_complex(const std::string& s) {
    // a, bi, a+bi, a-bi (also with j); no spaces
    static const std::regex re(R"(^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?(?:([+-]?(?:\d+\.?\d*|\.\d+)?(?:[eE][+-]?\d+)?)[ij])?$)");
    std::smatch m;
    if (s.empty() || !std::regex_match(s, m, re)) throw invalid_parameter("cannot read complex number '" + s + "'");
    double re_part = m[1].matched ? std::stod(m[1].str()) : 0.0;
    double im_part = 0.0;
    if (s.back() == 'i' || s.back() == 'j') {
        std::string t = m[2].str();
        if (t.empty() || t == "+") im_part = 1.0;
        else if (t == "-") im_part = -1.0;
        else im_part = std::stod(t);
    }
    return {re_part, im_part};
}

std::string g15(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", x + 0.0);  // no "-0"
    return buf;
}

int run_command(const std::string& config_path, const std::string& out_dir, const std::map<std::string, std::string>& flags) {
    using report::config_error;
    harness::ExperimentConfig cfg;
    std::string text;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) {
            std::cerr << "error: cannot open config " << config_path << "\n";
            return kExitInput;
        }
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    try {
        auto entries = report::parse_entries(text);
        if (const char* env = std::getenv("LOCALLAW_JOBS")) entries.push_back({0, "jobs", env});
        for (auto& [k, v] : flags) entries.push_back({0, k, v});
        cfg = report::build_config(entries);
    } catch (const config_error& e) {
        std::cerr << "error: " << (config_path.empty() ? "" : config_path + ": ") << e.what() << "\n";
        return kExitInput;
    }

    std::filesystem::create_directories(out_dir);
    auto base = std::filesystem::path(out_dir) / cfg.experiment;
    auto t0 = std::chrono::steady_clock::now();
    harness::ExperimentResult res;
    bool partial = false;
    std::string error;
    int status = 0;
    try {
        res = harness::run_experiment(cfg);
    } catch (const resource_error& e) {
        partial = true;
        error = e.what();
        status = kExitBudget;
    } catch (const invalid_parameter& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ofstream csv(base.string() + ".csv");
    report::write_csv(csv, res.rows);
    auto j = report::report_json(cfg, res, partial, error);
    j["wall_clock_seconds"] = wall;
    std::ofstream(base.string() + ".json") << j.dump(2) << "\n";

    if (partial) {
        std::cerr << "budget exceeded, partial report written: " << error << "\n";
        return status;
    }
    for (auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
    for (auto& c : res.checks) std::cout << (c.pass ? "PASS " : "FAIL ") << c.id << ": " << c.detail << "\n";
    std::cout << "report: " << base.string() << ".json\n";
    return res.all_pass() ? 0 : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Local law experiments for sample covariance and Wigner matrices"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run",
                                   "run one experiment and write <out>/<experiment>.csv and .json. Every config key "
                                   "is also a flag; flags override LOCALLAW_JOBS, which overrides the file");
    std::string config_path, out_dir = ".";
    run->add_option("--config", config_path, "flat 'key = value' config file")->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "output directory");
    std::map<std::string, std::string> flag_values;
    for (auto& k : report::config_keys())
        run->add_option("--" + k.name, flag_values[k.name], k.help);

    auto* ev = app.add_subcommand("eval", "evaluate limiting laws (15 significant digits)");
    ev->require_subcommand(1);
    std::string z_text;
    double phi = 1.0;
    long N = 0, alpha = 0;
    auto* mp = ev->add_subcommand("mp", "Marchenko-Pastur Stieltjes transform: prints Re Im");
    mp->add_option("--phi", phi, "M/N")->required();
    mp->add_option("--z", z_text, "spectral parameter, e.g. 2+0.01i")->required();
    auto* sc = ev->add_subcommand("sc", "semicircle Stieltjes transform: prints Re Im");
    sc->add_option("--z", z_text, "spectral parameter")->required();
    auto* gamma = ev->add_subcommand("gamma", "classical location of the alpha-th largest eigenvalue");
    gamma->add_option("--phi", phi, "M/N")->required();
    gamma->add_option("--N", N, "N")->required();
    gamma->add_option("--alpha", alpha, "index, 1 = largest")->required();
    auto* psi = ev->add_subcommand("psi", "control parameter sqrt(Im m/(N eta)) + 1/(N eta)");
    psi->add_option("--phi", phi, "M/N")->required();
    psi->add_option("--N", N, "N")->required();
    psi->add_option("--z", z_text, "spectral parameter")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    if (*run) {
        std::map<std::string, std::string> set;
        for (auto& k : report::config_keys())
            if (run->count("--" + k.name)) set[k.name] = flag_values[k.name];
        return run_command(config_path, out_dir, set);
    }

    try {
        if (!(phi > 0.0) || !std::isfinite(phi)) throw invalid_parameter("phi must be positive");
        if (*mp) {
            cplx m = mp_stieltjes(parse_complex(z_text), phi);
            std::cout << g15(m.real()) << " " << g15(m.imag()) << "\n";
        } else if (*sc) {
            cplx m = sc_stieltjes(parse_complex(z_text));
            std::cout << g15(m.real()) << " " << g15(m.imag()) << "\n";
        } else if (*gamma) {
            if (N < 1) throw invalid_parameter("N must be positive");
            long M = std::max(1L, std::lround(phi * static_cast<double>(N)));
            std::cout << g15(classical_locations(N, M, {alpha}).front()) << "\n";
        } else if (*psi) {
            if (N < 1) throw invalid_parameter("N must be positive");
            std::cout << g15(control_psi(parse_complex(z_text), phi, N)) << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return 0;
}
