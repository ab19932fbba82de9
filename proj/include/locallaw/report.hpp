#pragma once

// Run configuration (flat "key = value" text), CSV rows and the JSON report.

#include <charconv>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "locallaw/experiments.hpp"

namespace locallaw::report {

using harness::ExperimentConfig;
using harness::ExperimentResult;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kReportSchema = 1;
inline constexpr int kCsvSchema = 1;
inline constexpr const char* kCsvHeader = "experiment,seed,N,M,phi,z_re,z_im,metric,value";

// Config text problem, located by line (0 when the problem is not tied to a line) and key.
struct config_error : invalid_parameter {
    int line = 0;
    std::string key;
    config_error(int ln, std::string k, const std::string& msg)
        : invalid_parameter(format(ln, k, msg)), line(ln), key(std::move(k)) {}

    static std::string format(int ln, const std::string& k, const std::string& msg) {
        std::string where = ln > 0 ? "line " + std::to_string(ln) : "config";
        if (!k.empty()) where += ", key '" + k + "'";
        return where + ": " + msg;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// shortest text that reads back to the same double
inline std::string num(double x) {
    char buf[40];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

inline double to_double(const std::string& s) {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

inline long to_long(const std::string& s) {
    std::size_t used = 0;
    long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

inline std::uint64_t to_u64(const std::string& s) {
    if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
    std::size_t used = 0;
    auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

template <class T, class F>
std::vector<T> to_list(const std::string& s, F conv) {
    std::vector<T> out;
    if (trim(s).empty()) return out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(conv(trim(item)));
    return out;
}

template <class T, class F>
std::string from_list(const std::vector<T>& v, F conv) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + conv(v[i]);
    return out;
}

}  // namespace detail

// One accepted key: how to read it into a config, how to print it back, and a help line.
struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
    using namespace detail;
    auto dbl = [](const std::string& s) { return to_double(s); };
    auto lng = [](const std::string& s) { return to_long(s); };
    auto dstr = [](double x) { return num(x); };
    auto lstr = [](long x) { return std::to_string(x); };
    auto profile = [](ExperimentConfig& c) -> VarianceProfile& {
        if (!c.ensemble.profile) c.ensemble.profile = build_profile("flat", 0.0, 1);
        return *c.ensemble.profile;
    };
    static const std::vector<ConfigKey> keys{
        {"experiment", "experiment id",
         [](ExperimentConfig& c, const std::string& v) {
             for (auto& id : harness::experiment_ids())
                 if (id == v) {
                     c.experiment = v;
                     return;
                 }
             std::string valid;
             for (auto& id : harness::experiment_ids()) valid += (valid.empty() ? "" : ", ") + id;
             throw std::invalid_argument("unknown experiment '" + v + "'; valid ids: " + valid);
         },
         [](const ExperimentConfig& c) { return c.experiment; }},
        {"ensemble", "sample-covariance or generalized-wigner",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "sample-covariance") c.ensemble.kind = EnsembleKind::sample_covariance;
             else if (v == "generalized-wigner") c.ensemble.kind = EnsembleKind::generalized_wigner;
             else throw std::invalid_argument("expected sample-covariance or generalized-wigner");
         },
         [](const ExperimentConfig& c) { return std::string(to_string(c.ensemble.kind)); }},
        {"entry", "entry law: complex-gaussian, real-gaussian, rademacher, standardized-uniform",
         [](ExperimentConfig& c, const std::string& v) { c.ensemble.entry = entry_from_string(v); },
         [](const ExperimentConfig& c) { return std::string(to_string(c.ensemble.entry)); }},
        {"N", "sample count N (columns of X); size when N_ladder is empty",
         [=](ExperimentConfig& c, const std::string& v) {
             long n = lng(v);
             if (n < 2) throw std::invalid_argument("must be at least 2");
             c.ensemble.N = n;
         },
         [=](const ExperimentConfig& c) { return lstr(c.ensemble.N); }},
        {"M", "population dimension M (rows of X); phi = M/N is kept along the ladder",
         [=](ExperimentConfig& c, const std::string& v) {
             long m = lng(v);
             if (m < 1) throw std::invalid_argument("must be positive");
             c.ensemble.M = m;
         },
         [=](const ExperimentConfig& c) { return lstr(c.ensemble.M); }},
        {"profile", "Wigner variance profile: flat or convex-mix",
         [=](ExperimentConfig& c, const std::string& v) {
             if (v != "flat" && v != "convex-mix") throw std::invalid_argument("expected flat or convex-mix");
             profile(c).kind = v;
         },
         [](const ExperimentConfig& c) { return c.ensemble.profile ? c.ensemble.profile->kind : std::string("flat"); }},
        {"profile_t", "profile mixing parameter in [0, 1)",
         [=](ExperimentConfig& c, const std::string& v) {
             double t = dbl(v);
             if (!(t >= 0.0 && t < 1.0)) throw std::invalid_argument("must lie in [0, 1)");
             profile(c).t = t;
         },
         [=](const ExperimentConfig& c) { return dstr(c.ensemble.profile ? c.ensemble.profile->t : 0.0); }},
        {"profile_seed", "seed of the random profile blocks",
         [=](ExperimentConfig& c, const std::string& v) { profile(c).seed = to_u64(v); },
         [](const ExperimentConfig& c) {
             return std::to_string(c.ensemble.profile ? c.ensemble.profile->seed : std::uint64_t{0});
         }},
        {"N_ladder", "comma-separated N values; empty runs N only",
         [=](ExperimentConfig& c, const std::string& v) {
             auto l = to_list<long>(v, lng);
             for (long n : l)
                 if (n < 2) throw std::invalid_argument("every N must be at least 2");
             c.N_ladder = l;
         },
         [=](const ExperimentConfig& c) { return from_list(c.N_ladder, lstr); }},
        {"trials", "trials per N",
         [=](ExperimentConfig& c, const std::string& v) {
             long t = lng(v);
             if (t < 1) throw std::invalid_argument("must be at least 1");
             c.trials = static_cast<int>(t);
         },
         [=](const ExperimentConfig& c) { return lstr(c.trials); }},
        {"seed", "master seed",
         [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        {"omega", "spectral domain margin in (0, 1)",
         [=](ExperimentConfig& c, const std::string& v) {
             double w = dbl(v);
             if (!(w > 0.0 && w < 1.0)) throw std::invalid_argument("must lie in (0, 1)");
             c.omega = w;
         },
         [=](const ExperimentConfig& c) { return dstr(c.omega); }},
        {"E", "comma-separated energies; empty uses the experiment default",
         [=](ExperimentConfig& c, const std::string& v) { c.E = to_list<double>(v, dbl); },
         [=](const ExperimentConfig& c) { return from_list(c.E, dstr); }},
        {"eta", "comma-separated imaginary parts; empty uses the experiment default",
         [=](ExperimentConfig& c, const std::string& v) {
             auto l = to_list<double>(v, dbl);
             for (double e : l)
                 if (!(e >= 0.0)) throw std::invalid_argument("eta must be nonnegative");
             c.eta = l;
         },
         [=](const ExperimentConfig& c) { return from_list(c.eta, dstr); }},
        {"eps", "comma-separated exponents for the domination test",
         [=](ExperimentConfig& c, const std::string& v) {
             auto l = to_list<double>(v, dbl);
             if (l.empty()) throw std::invalid_argument("needs at least one value");
             for (double e : l)
                 if (!(e > 0.0)) throw std::invalid_argument("eps must be positive");
             c.eps = l;
         },
         [=](const ExperimentConfig& c) { return from_list(c.eps, dstr); }},
        {"tail", "largest exceedance fraction allowed at the largest N",
         [=](ExperimentConfig& c, const std::string& v) {
             double t = dbl(v);
             if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("must lie in (0, 1)");
             c.tail = t;
         },
         [=](const ExperimentConfig& c) { return dstr(c.tail); }},
        {"kappa", "comma-separated distances beyond the upper edge (outside)",
         [=](ExperimentConfig& c, const std::string& v) {
             auto l = to_list<double>(v, dbl);
             for (double k : l)
                 if (!(k > 0.0)) throw std::invalid_argument("kappa must be positive");
             c.kappa = l;
         },
         [=](const ExperimentConfig& c) { return from_list(c.kappa, dstr); }},
        {"kappa_fixed", "kappa used for the N scaling fit (outside)",
         [=](ExperimentConfig& c, const std::string& v) { c.kappa_fixed = dbl(v); },
         [=](const ExperimentConfig& c) { return dstr(c.kappa_fixed); }},
        {"alpha", "comma-separated eigenvalue indices, 1 = largest (rigidity)",
         [=](ExperimentConfig& c, const std::string& v) {
             auto l = to_list<long>(v, lng);
             for (long a : l)
                 if (a < 1) throw std::invalid_argument("indices start at 1");
             c.alpha = l;
         },
         [=](const ExperimentConfig& c) { return from_list(c.alpha, lstr); }},
        {"bulk_eps", "bulk index window [bulk_eps K, (1 - bulk_eps) K]",
         [=](ExperimentConfig& c, const std::string& v) {
             double b = dbl(v);
             if (!(b >= 0.0 && b < 0.5)) throw std::invalid_argument("must lie in [0, 0.5)");
             c.bulk_eps = b;
         },
         [=](const ExperimentConfig& c) { return dstr(c.bulk_eps); }},
        {"phi_gap", "|phi - 1| at or above this counts as separated from 1",
         [=](ExperimentConfig& c, const std::string& v) {
             double g = dbl(v);
             if (!(g > 0.0)) throw std::invalid_argument("must be positive");
             c.phi_gap = g;
         },
         [=](const ExperimentConfig& c) { return dstr(c.phi_gap); }},
        {"ld_kind", "large-deviation form: linear, bilinear or offdiag",
         [](ExperimentConfig& c, const std::string& v) {
             if (v != "linear" && v != "bilinear" && v != "offdiag")
                 throw std::invalid_argument("expected linear, bilinear or offdiag");
             c.ld_kind = v;
         },
         [](const ExperimentConfig& c) { return c.ld_kind; }},
        {"lattice_spacing", "eta spacing of the stability lattice, at least 1e-6",
         [=](ExperimentConfig& c, const std::string& v) {
             double s = dbl(v);
             if (!(s >= 1e-6)) throw std::invalid_argument("must be at least 1e-6");
             c.lattice_spacing = s;
         },
         [=](const ExperimentConfig& c) { return dstr(c.lattice_spacing); }},
        {"jobs", "worker threads",
         [=](ExperimentConfig& c, const std::string& v) {
             long j = lng(v);
             if (j < 1) throw std::invalid_argument("must be at least 1");
             c.jobs = static_cast<int>(j);
         },
         [=](const ExperimentConfig& c) { return lstr(c.jobs); }},
    };
    return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
    for (auto& k : config_keys())
        if (k.name == name) return &k;
    return nullptr;
}

// Applies one key; errors carry the line and key.
inline void set_key(ExperimentConfig& c, const std::string& key, const std::string& value, int line = 0) {
    const ConfigKey* k = find_key(key);
    if (!k) throw config_error(line, key, "unknown key");
    try {
        k->set(c, value);
    } catch (const std::exception& e) {
        throw config_error(line, key, "bad value '" + value + "': " + e.what());
    }
}

// Ladder and ensemble consistency once all keys are read.
inline void validate(const ExperimentConfig& c) {
    if (c.ensemble.kind == EnsembleKind::generalized_wigner && c.ensemble.M != c.ensemble.N)
        throw config_error(0, "M", "generalized-wigner needs M = N");
    if ((c.experiment == "fluctuation_averaging" || c.experiment == "stability") &&
        c.ensemble.kind != EnsembleKind::sample_covariance)
        throw config_error(0, "ensemble", c.experiment + " needs sample-covariance");
}

struct ConfigEntry {
    int line = 0;  // 0: not from a file (environment or command line)
    std::string key, value;
};

// Syntax only: "key = value" lines, '#' comments, no duplicate keys.
inline std::vector<ConfigEntry> parse_entries(const std::string& text) {
    std::vector<ConfigEntry> out;
    std::istringstream in(text);
    std::string raw;
    std::map<std::string, int> seen;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = detail::trim(raw.substr(0, raw.find('#')));
        if (s.empty()) continue;
        auto eq = s.find('=');
        if (eq == std::string::npos) throw config_error(line, "", "expected 'key = value'");
        std::string key = detail::trim(s.substr(0, eq)), value = detail::trim(s.substr(eq + 1));
        if (key.empty()) throw config_error(line, "", "empty key");
        if (auto it = seen.find(key); it != seen.end())
            throw config_error(line, key, "duplicate key (first set on line " + std::to_string(it->second) + ")");
        seen[key] = line;
        out.push_back({line, key, value});
    }
    return out;
}

// Applies entries in order, so later ones override. N defaults to 256 and M to N.
inline ExperimentConfig build_config(const std::vector<ConfigEntry>& entries) {
    ExperimentConfig c;
    c.ensemble.N = 256;
    bool has_M = false;
    for (auto& e : entries) {
        set_key(c, e.key, e.value, e.line);
        has_M = has_M || e.key == "M";
    }
    if (!has_M) c.ensemble.M = c.ensemble.N;
    validate(c);
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) { return build_config(parse_entries(text)); }

inline std::string serialize_config(const ExperimentConfig& c) {
    std::string out;
    for (auto& k : config_keys()) out += k.name + " = " + k.get(c) + "\n";
    return out;
}

// ---------------------------------------------------------------- CSV

inline void write_csv(std::ostream& os, const std::vector<harness::Row>& rows) {
    os << kCsvHeader << "\n";
    for (auto& r : rows)
        os << r.experiment << "," << r.seed << "," << r.N << "," << r.M << "," << detail::num(r.phi) << ","
           << detail::num(r.z.real()) << "," << detail::num(r.z.imag()) << "," << r.metric << ","
           << detail::num(r.value) << "\n";
}

// ---------------------------------------------------------------- JSON

// Acceptance item each experiment's checks feed, or empty.
inline std::string criterion_for(const std::string& experiment) {
    static const std::map<std::string, std::string> ids{{"isotropic", "C5"},     {"outside", "C6"},
                                                        {"rigidity", "C7"},      {"delocalization", "C8"},
                                                        {"fluctuation_averaging", "C9"}};
    auto it = ids.find(experiment);
    return it == ids.end() ? "" : it->second;
}

inline nlohmann::json finite_or_null(double x) {
    return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

// Everything except the wall clock, which the caller adds under "wall_clock_seconds".
inline nlohmann::json report_json(const ExperimentConfig& c, const ExperimentResult& r, bool partial = false,
                                  const std::string& error = "") {
    using nlohmann::json;
    json j;
    j["schema_version"] = kReportSchema;
    j["csv_schema_version"] = kCsvSchema;
    j["tool"] = "locallaw";
    j["tool_version"] = kToolVersion;
    json cfg = json::object();
    for (auto& k : config_keys()) cfg[k.name] = k.get(c);
    j["config"] = cfg;
    j["experiment"] = r.experiment.empty() ? c.experiment : r.experiment;
    json summary = json::object();
    for (auto& [k, v] : r.summary) summary[k] = finite_or_null(v);
    j["summary"] = summary;
    json fits = json::array();
    for (auto& f : r.fits) {
        json pts = json::array();
        for (auto [x, y] : f.fit.points) pts.push_back({x, y});
        fits.push_back({{"name", f.name},
                        {"exponent", finite_or_null(f.fit.exponent)},
                        {"intercept", finite_or_null(f.fit.intercept)},
                        {"stderr", finite_or_null(f.fit.stderr_)},
                        {"log_points", pts}});
    }
    j["fits"] = fits;
    json verdicts = json::array();
    for (auto& v : r.verdicts) {
        json per = json::array();
        for (std::size_t e = 0; e < v.verdict.eps.size(); ++e)
            per.push_back({{"eps", v.verdict.eps[e]},
                           {"fraction", v.verdict.fraction[e]},
                           {"trials", v.verdict.trials[e]},
                           {"consistent", static_cast<bool>(v.verdict.per_eps[e])}});
        verdicts.push_back({{"name", v.name},
                            {"N", v.verdict.Ns},
                            {"tail", v.verdict.tail},
                            {"per_eps", per},
                            {"verdict", v.verdict.consistent ? "consistent" : "inconsistent"}});
    }
    j["verdicts"] = verdicts;
    json checks = json::array();
    std::string crit = criterion_for(j["experiment"].get<std::string>());
    for (auto& ch : r.checks)
        checks.push_back({{"id", ch.id},
                          {"criterion", crit.empty() ? json(nullptr) : json(crit)},
                          {"pass", ch.pass},
                          {"detail", ch.detail}});
    j["checks"] = checks;
    j["warnings"] = r.warnings;
    j["rows"] = r.rows.size();
    j["partial"] = partial;
    if (!error.empty()) j["error"] = error;
    j["all_pass"] = !partial && error.empty() && r.all_pass();
    return j;
}

}  // namespace locallaw::report
