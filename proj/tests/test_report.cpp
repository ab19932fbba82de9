#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "locallaw/report.hpp"

using namespace locallaw;
using namespace locallaw::report;

namespace {

// Random but valid config values, one per key.
std::string random_value(const std::string& key, std::mt19937_64& g) {
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::uniform_int_distribution<long> n(2, 5000);
    auto dlist = [&](int k) {
        std::string s;
        for (int i = 0; i < k; ++i) s += (i ? ", " : "") + report::detail::num(u(g));
        return s;
    };
    auto llist = [&](int k) {
        std::string s;
        for (int i = 0; i < k; ++i) s += (i ? "," : "") + std::to_string(n(g));
        return s;
    };
    const auto& ids = harness::experiment_ids();
    if (key == "experiment") return ids[g() % ids.size()];
    if (key == "ensemble") return "sample-covariance";
    if (key == "entry") return std::vector<std::string>{"complex-gaussian", "real-gaussian", "rademacher", "standardized-uniform"}[g() % 4];
    if (key == "N" || key == "M" || key == "trials" || key == "jobs") return std::to_string(n(g));
    if (key == "profile") return g() % 2 ? "flat" : "convex-mix";
    if (key == "profile_seed" || key == "seed") return std::to_string(g());
    if (key == "N_ladder" || key == "alpha") return llist(static_cast<int>(g() % 5));
    if (key == "E" || key == "eta" || key == "kappa") return dlist(static_cast<int>(g() % 4));
    if (key == "eps") return dlist(1 + static_cast<int>(g() % 3));
    if (key == "ld_kind") return std::vector<std::string>{"linear", "bilinear", "offdiag"}[g() % 3];
    if (key == "bulk_eps") return report::detail::num(u(g) / 2.0);
    if (key == "lattice_spacing") return report::detail::num(1e-6 + u(g) * 1e-2);
    if (key == "phi_gap" || key == "kappa_fixed" || key == "omega" || key == "tail" || key == "profile_t")
        return report::detail::num(u(g));
    ADD_FAILURE() << "no generator for key " << key;
    return "";
}

harness::ExperimentResult fake_result() {
    harness::ExperimentResult r;
    r.experiment = "rigidity";
    r.rows.push_back({"rigidity", 3, 64, 128, 2.0, cplx(0.25, 1e-3), "deviation_a1", -0.125});
    r.summary["x"] = 1.5;
    r.summary["nan"] = std::numeric_limits<double>::quiet_NaN();
    r.fits.push_back({"upper_edge", harness::fit_power_law({1, 2, 4, 8}, {1, 0.5, 0.25, 0.125})});
    r.checks.push_back({"ordering", true, "ok"});
    r.checks.push_back({"upper_edge_exponent", false, "off"});
    return r;
}

}  // namespace

TEST(Config, RoundTripOnRandomValues) {
    std::mt19937_64 g(12);
    for (int rep = 0; rep < 200; ++rep) {
        std::string text = "# generated\n";
        for (auto& k : config_keys()) text += k.name + " = " + random_value(k.name, g) + "   # trailing comment\n";
        ExperimentConfig c = parse_config(text);
        std::string once = serialize_config(c);
        ExperimentConfig back = parse_config(once);
        ASSERT_EQ(serialize_config(back), once) << text;
        EXPECT_EQ(back.trials, c.trials);
        EXPECT_EQ(back.eta, c.eta);
        EXPECT_EQ(back.seed, c.seed);
    }
}

TEST(Config, DefaultsWhenEmpty) {
    ExperimentConfig c = parse_config("");
    EXPECT_EQ(c.experiment, "isotropic");
    EXPECT_EQ(c.ensemble.N, 256);
    EXPECT_EQ(c.ensemble.M, 256);
    EXPECT_EQ(parse_config("N = 100\n").ensemble.M, 100);
    EXPECT_EQ(parse_config("N = 100\nM = 200\n").ensemble.phi(), 2.0);
}

TEST(Config, DiagnosticsNameLineAndKey) {
    struct Case {
        std::string text;
        int line;
        std::string key;
    };
    std::vector<Case> cases{
        {"N = 10\nbogus = 1\n", 2, "bogus"},
        {"\n\nN = ten\n", 3, "N"},
        {"trials = 0\n", 1, "trials"},
        {"N = 10\nN = 20\n", 2, "N"},
        {"just words\n", 1, ""},
        {"experiment = spectral\n", 1, "experiment"},
        {"eta = 0.1, -1\n", 1, "eta"},
        {"omega = 1.5\n", 1, "omega"},
        {"entry = cauchy\n", 1, "entry"},
        {"N = 12abc\n", 1, "N"},
        {"seed = -3\n", 1, "seed"},
        {"ensemble = generalized-wigner\nN = 10\nM = 20\n", 0, "M"},
        {"experiment = stability\nensemble = generalized-wigner\n", 0, "ensemble"},
    };
    for (auto& cs : cases) {
        try {
            parse_config(cs.text);
            ADD_FAILURE() << "accepted: " << cs.text;
        } catch (const config_error& e) {
            EXPECT_EQ(e.line, cs.line) << cs.text;
            EXPECT_EQ(e.key, cs.key) << cs.text;
            if (cs.line > 0) {
                EXPECT_NE(std::string(e.what()).find("line " + std::to_string(cs.line)), std::string::npos);
            }
        }
    }
}

TEST(Config, UnknownExperimentListsValidIds) {
    try {
        parse_config("experiment = nope\n");
        FAIL();
    } catch (const config_error& e) {
        for (auto& id : harness::experiment_ids()) EXPECT_NE(std::string(e.what()).find(id), std::string::npos);
    }
}

TEST(Config, LaterEntriesOverride) {
    auto entries = parse_entries("jobs = 2\nN = 64\n");
    entries.push_back({0, "jobs", "5"});
    entries.push_back({0, "N", "128"});
    auto c = build_config(entries);
    EXPECT_EQ(c.jobs, 5);
    EXPECT_EQ(c.ensemble.N, 128);
    EXPECT_EQ(c.ensemble.M, 128);
}

TEST(Csv, HeaderAndShortestRoundTrip) {
    std::ostringstream os;
    write_csv(os, fake_result().rows);
    EXPECT_EQ(os.str(), std::string(kCsvHeader) + "\nrigidity,3,64,128,2,0.25,0.001,deviation_a1,-0.125\n");
    for (double x : {0.1, 1.0 / 3.0, 1e-300, 6.02e23, -2.5}) EXPECT_EQ(std::stod(report::detail::num(x)), x);
}

TEST(Json, SchemaAndCriterionIds) {
    ExperimentConfig c = parse_config("experiment = rigidity\n");
    auto j = report_json(c, fake_result());
    EXPECT_EQ(j["schema_version"], kReportSchema);
    EXPECT_EQ(j["csv_schema_version"], kCsvSchema);
    EXPECT_EQ(j["config"].size(), config_keys().size());
    EXPECT_EQ(j["config"]["experiment"], "rigidity");
    EXPECT_TRUE(j["summary"]["nan"].is_null());
    EXPECT_EQ(j["summary"]["x"], 1.5);
    EXPECT_NEAR(j["fits"][0]["exponent"].get<double>(), -1.0, 1e-12);
    for (auto& ch : j["checks"]) EXPECT_EQ(ch["criterion"], "C7");
    EXPECT_FALSE(j["all_pass"].get<bool>());
    EXPECT_FALSE(j.contains("wall_clock_seconds"));

    auto partial = report_json(c, {}, true, "budget");
    EXPECT_TRUE(partial["partial"].get<bool>());
    EXPECT_EQ(partial["error"], "budget");
    EXPECT_FALSE(partial["all_pass"].get<bool>());
}

TEST(Json, IdenticalRunsGiveIdenticalReports) {
    ExperimentConfig c = parse_config("experiment = large_deviation\nN_ladder = 50, 100, 200\ntrials = 20\n");
    auto a = report_json(c, harness::run_experiment(c)).dump();
    c.jobs = 2;
    auto b = report_json(c, harness::run_experiment(c));
    b["config"]["jobs"] = "1";
    EXPECT_EQ(a, b.dump());
}
