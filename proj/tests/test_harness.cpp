#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "locallaw/experiments.hpp"

using namespace locallaw;
using namespace locallaw::harness;

namespace {

DominationSamples triple(double power, std::vector<long> Ns = {100, 200, 400, 800}, int n = 25) {
    DominationSamples s;
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (long N : Ns)
        for (int i = 0; i < n; ++i) {
            double zeta = u(g);
            double xi = power < 0 ? 0.0 : std::pow(static_cast<double>(N), power) * zeta;
            s[N].emplace_back(xi, zeta);
        }
    return s;
}

Eigen::MatrixXcd random_X(long M, long N, std::uint64_t seed) {
    EnsembleSpec s;
    s.M = M;
    s.N = N;
    s.seed = seed;
    return sample_covariance(s);
}

Spectrum spectrum_from(const Eigen::MatrixXcd& X) {
    auto d = decompose_trusted<cplx>(gram_right(X));
    Spectrum sp;
    sp.real = false;
    sp.values = d.eigenvalues;
    sp.Uc = d.eigenvectors;
    return sp;
}

ExperimentConfig small(const std::string& id) {
    ExperimentConfig c;
    c.experiment = id;
    c.ensemble.N = c.ensemble.M = 48;
    c.ensemble.entry = EntryDistribution::real_gaussian;
    c.N_ladder = {32, 40, 48, 64};
    c.trials = 20;
    c.seed = 9;
    return c;
}

bool same_rows(const std::vector<Row>& a, const std::vector<Row>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Row &x = a[i], &y = b[i];
        if (x.experiment != y.experiment || x.seed != y.seed || x.N != y.N || x.M != y.M || x.z != y.z ||
            x.metric != y.metric || x.value != y.value)
            return false;
    }
    return true;
}

}  // namespace

TEST(Domination, AnalyticTriples) {
    auto zero = estimate_domination(triple(-1), {0.25});
    auto same = estimate_domination(triple(0.0), {0.25});
    auto big = estimate_domination(triple(0.5), {0.25});
    EXPECT_TRUE(zero.consistent);
    EXPECT_TRUE(same.consistent);
    EXPECT_FALSE(big.consistent);
    for (double f : zero.fraction[0]) EXPECT_EQ(f, 0.0);
    for (double f : same.fraction[0]) EXPECT_EQ(f, 0.0);
    for (double f : big.fraction[0]) EXPECT_EQ(f, 1.0);
}

TEST(Domination, GrowingExceedanceIsInconsistent) {
    DominationSamples s;
    // fractions 0, 0.05, 0.5 at n = 40: the last jump is far beyond 2 sigma
    for (long N : {100L, 200L, 400L})
        for (int i = 0; i < 40; ++i) {
            int hits = N == 100 ? 0 : N == 200 ? 2 : 20;
            s[N].emplace_back(i < hits ? 1e6 : 0.0, 1.0);
        }
    auto v = estimate_domination(s, {0.25});
    EXPECT_FALSE(v.consistent);
    EXPECT_NEAR(v.fraction[0][2], 0.5, 1e-15);
}

TEST(Domination, SmallUpwardNoiseIsTolerated) {
    DominationSamples s;
    for (long N : {100L, 200L, 400L})
        for (int i = 0; i < 100; ++i) {
            int hits = N == 100 ? 6 : N == 200 ? 8 : 9;
            s[N].emplace_back(i < hits ? 1e6 : 0.0, 1.0);
        }
    EXPECT_TRUE(estimate_domination(s, {0.25}).consistent);
    // same trend but the last fraction above the tail cap
    EXPECT_FALSE(estimate_domination(s, {0.25}, 0.05).consistent);
}

TEST(Domination, PerEpsilonVerdicts) {
    // xi = N^0.3 zeta: exceeds N^0.25 zeta always, never N^0.5 zeta
    auto v = estimate_domination(triple(0.3), {0.25, 0.5});
    ASSERT_EQ(v.per_eps.size(), 2u);
    EXPECT_FALSE(v.per_eps[0]);
    EXPECT_TRUE(v.per_eps[1]);
    EXPECT_FALSE(v.consistent);
}

TEST(Domination, RejectsThinSamples) {
    EXPECT_THROW(estimate_domination(triple(0.0, {100, 200}), {0.25}), invalid_parameter);
    EXPECT_THROW(estimate_domination(triple(0.0, {100, 200, 400}, 19), {0.25}), invalid_parameter);
    EXPECT_THROW(estimate_domination(triple(0.0), {}), invalid_parameter);
}

TEST(Domination, SingleVariableLinearForm) {
    // b = e1: xi = |xi_1|, zeta = 1
    DominationSamples s;
    for (long N : {100L, 400L, 1600L}) {
        Rng rng = make_rng(1, static_cast<std::uint64_t>(N), Stream::variables);
        EntrySampler draw(EntryDistribution::real_gaussian);
        for (int i = 0; i < 100; ++i) s[N].emplace_back(std::abs(draw(rng)), 1.0);
    }
    EXPECT_TRUE(estimate_domination(s, {0.25}).consistent);
}

TEST(Fit, HandComputedLeastSquares) {
    // log points (0,0), (1,1), (2,1), (3,2): slope 3/5, intercept 0.1, residuals +-0.1, +-0.3
    std::vector<double> x, y;
    for (double lx : {0.0, 1.0, 2.0, 3.0}) x.push_back(std::exp(lx));
    for (double ly : {0.0, 1.0, 1.0, 2.0}) y.push_back(std::exp(ly));
    auto f = fit_power_law(x, y);
    EXPECT_NEAR(f.exponent, 0.6, 1e-12);
    EXPECT_NEAR(f.intercept, 0.1, 1e-12);
    EXPECT_NEAR(f.stderr_, std::sqrt(0.02), 1e-12);
    EXPECT_EQ(f.points.size(), 4u);
}

TEST(Fit, ExactPowerLawsOnRandomGrids) {
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> ex(-2.0, 2.0), c(0.1, 10.0), xs(1.0, 5000.0);
    for (int rep = 0; rep < 100; ++rep) {
        double a = ex(g), k = c(g);
        std::vector<double> x, y;
        for (int i = 0; i < 6; ++i) {
            x.push_back(xs(g));
            y.push_back(k * std::pow(x.back(), a));
        }
        if (std::abs(std::log(x[0]) - std::log(x[1])) < 1e-6) continue;
        auto f = fit_power_law(x, y);
        ASSERT_NEAR(f.exponent, a, 1e-9);
        ASSERT_NEAR(std::exp(f.intercept), k, 1e-8 * k);
        ASSERT_LT(f.stderr_, 1e-8);
    }
}

TEST(Fit, RejectsBadInput) {
    EXPECT_THROW(fit_power_law({1, 2, 3}, {1, 2, 3}), invalid_parameter);
    EXPECT_THROW(fit_power_law({1, 2, 3, 4}, {1, 2, 0, 4}), invalid_parameter);
    EXPECT_THROW(fit_power_law({2, 2, 2, 2}, {1, 2, 3, 4}), invalid_parameter);
    EXPECT_THROW(fit_power_law({1, 2, 3, 4}, {1, 2, 3}), invalid_parameter);
}

TEST(Median, OddEvenAndEmpty) {
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
    EXPECT_THROW(median({}), invalid_parameter);
    EXPECT_EQ(fraction_if({1, 2, 3, 4}, [](double v) { return v > 2; }), 0.5);
}

TEST(Spectrum, ResolventAndDiagonalMatchDirectInverse) {
    Eigen::MatrixXcd X = random_X(20, 15, 2);
    Spectrum sp = spectrum_from(X);
    cplx z(1.1, 0.3);
    Eigen::MatrixXcd A = gram_right(X);
    Eigen::MatrixXcd direct = (A - z * Eigen::MatrixXcd::Identity(15, 15)).inverse();
    EXPECT_LT((sp.resolvent(z) - direct).norm(), 1e-11);
    EXPECT_LT((sp.diagonal(sp.resolvent_weights(z)) - direct.diagonal()).norm(), 1e-11);
    EXPECT_LT(std::abs(sp.trace(z) - direct.trace()), 1e-11);
    Eigen::MatrixXcd sq = direct * direct;
    EXPECT_LT((sp.diagonal(sp.resolvent_weights(z, 2)) - sq.diagonal()).norm(), 1e-10);
}

TEST(Spectrum, RealAndComplexPathsAgree) {
    EnsembleSpec s;
    s.M = 30;
    s.N = 24;
    s.entry = EntryDistribution::rademacher;
    Spectrum a = spectrum_of(s, 1, true);
    EXPECT_TRUE(a.real);
    Eigen::MatrixXcd Xc = sample_covariance(s, 1);
    Spectrum b = spectrum_from(Xc);
    EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-12);
    cplx z(0.7, 0.05);
    EXPECT_LT((a.resolvent(z) - b.resolvent(z)).norm(), 1e-9);
}

TEST(ColumnFluctuations, MatchDirectQuadraticFormOn32Columns) {
    // Z_mu = z x_mu^* G^[mu] x_mu - (zt / N) tr G^[mu], column mu removed by a full recomputation
    const long M = 36, N = 40;
    Eigen::MatrixXcd X = random_X(M, N, 8);
    Spectrum sp = spectrum_from(X);
    MinorCache cache(X);
    for (cplx z : {cplx(1.0, 0.1), cplx(2.5, 0.02), cplx(0.3, 1.0)}) {
        Eigen::VectorXcd Z = column_fluctuations(sp, z, M);
        double phi = static_cast<double>(M) / N;
        cplx zt = z / std::sqrt(phi);
        for (long mu = 0; mu < 32; ++mu) {
            Eigen::MatrixXcd G = cache.cols({mu}).G_matrix(z);
            Eigen::VectorXcd x = X.col(mu);
            cplx want = z * x.dot(G * x) - zt / static_cast<double>(N) * G.trace();
            ASSERT_LT(std::abs(Z(mu) - want), 1e-9 * std::max(1.0, std::abs(want))) << "mu " << mu << " z " << z;
        }
    }
}

TEST(Stability, ExactLawGivesZeroMarginWithClipping) {
    double phi = 0.5;
    auto lattice = lattice_L({1.2, 0.05}, 0.01);
    std::vector<cplx> u;
    for (auto& w : lattice) u.push_back(mp_stieltjes(w.z(), phi));
    auto m = stability_margins(lattice, u, phi, 100);
    EXPECT_EQ(m.clipped, lattice.size());
    for (std::size_t i = 0; i < lattice.size(); ++i) {
        EXPECT_EQ(m.delta[i], 1e-4);
        EXPECT_LT(m.margin[i], 1e-6);
    }
}

TEST(Stability, EnvelopeIsMonotoneInEta) {
    std::mt19937_64 g(6);
    std::normal_distribution<double> n(0.0, 1e-3);
    double phi = 1.0;
    auto lattice = lattice_L({2.0, 0.02}, 0.01);
    std::vector<cplx> u;
    for (auto& w : lattice) u.push_back(mp_stieltjes(w.z(), phi) + cplx(n(g), n(g)));
    auto m = stability_margins(lattice, u, phi, 1000);
    for (std::size_t i = 0; i < lattice.size(); ++i)
        for (std::size_t j = 0; j < lattice.size(); ++j) {
            if (lattice[i].eta < lattice[j].eta) {
                EXPECT_GE(m.delta[i], m.delta[j]);
            }
            EXPECT_GE(m.delta[i], std::abs(stability_operator(u[i], lattice[i].z(), phi)));
        }
    EXPECT_THROW(stability_margins(lattice, {u[0]}, phi, 10), invalid_parameter);
}

TEST(VectorFamilies, UnitNormsAndShapes) {
    auto f = vector_families(50, 3);
    ASSERT_EQ(f.size(), 5u);
    for (auto& p : f) {
        EXPECT_NEAR(p.v.norm(), 1.0, 1e-14) << p.family;
        EXPECT_NEAR(p.w.norm(), 1.0, 1e-14) << p.family;
    }
    EXPECT_EQ(f[0].v.dot(f[0].w), cplx(0.0));
    EXPECT_EQ(f[1].v, f[1].w);
    long nz = (f[3].v.array() != cplx(0.0)).count();
    EXPECT_EQ(nz, 4);
    EXPECT_EQ(f[4].v, f[4].w);
    auto again = vector_families(50, 3), other = vector_families(50, 4);
    EXPECT_EQ(again[2].v, f[2].v);
    EXPECT_NE(other[2].v, f[2].v);
    EXPECT_THROW(vector_families(1, 0), invalid_parameter);
}

TEST(ParallelMap, OrderedAndRethrows) {
    std::function<long(std::size_t)> sq = [](std::size_t i) { return static_cast<long>(i * i); };
    auto a = parallel_map<long>(50, 1, sq), b = parallel_map<long>(50, 4, sq);
    EXPECT_EQ(a, b);
    EXPECT_EQ(b[7], 49);
    std::function<int(std::size_t)> bad = [](std::size_t i) -> int {
        if (i == 13) throw std::runtime_error("boom");
        return 0;
    };
    EXPECT_THROW(parallel_map<int>(20, 3, bad), std::runtime_error);
}

TEST(Experiments, UnknownIdNamesValidIds) {
    ExperimentConfig c;
    c.experiment = "bogus";
    try {
        run_experiment(c);
        FAIL();
    } catch (const invalid_parameter& e) {
        std::string msg = e.what();
        for (auto& id : experiment_ids()) EXPECT_NE(msg.find(id), std::string::npos) << id;
    }
}

TEST(Experiments, ThreadCountDoesNotChangeResults) {
    for (const char* id : {"isotropic", "rigidity", "large_deviation"}) {
        auto c = small(id);
        if (std::string(id) == "large_deviation") c.N_ladder = {50, 100, 200};
        auto a = run_experiment(c);
        c.jobs = 3;
        auto b = run_experiment(c);
        EXPECT_TRUE(same_rows(a.rows, b.rows)) << id;
        EXPECT_EQ(a.summary, b.summary) << id;
    }
}

TEST(Experiments, SmokeRunsProduceFiniteRows) {
    for (auto& id : experiment_ids()) {
        auto c = small(id);
        c.trials = id == "isotropic" || id == "rigidity" || id == "large_deviation" ? 20 : 4;
        if (id == "large_deviation") c.N_ladder = {50, 100, 200};
        if (id == "stability") c.lattice_spacing = 0.05;
        auto r = run_experiment(c);
        EXPECT_EQ(r.experiment, id);
        EXPECT_FALSE(r.rows.empty()) << id;
        EXPECT_FALSE(r.checks.empty()) << id;
        for (auto& row : r.rows) ASSERT_TRUE(std::isfinite(row.value)) << id << " " << row.metric;
    }
}

TEST(Experiments, IsotropicAtModerateSize) {
    auto c = small("isotropic");
    c.N_ladder = {64, 96, 128, 192};
    c.ensemble.entry = EntryDistribution::complex_gaussian;
    auto r = run_experiment(c);
    ASSERT_NE(r.check("median_ratio_below_10"), nullptr);
    EXPECT_TRUE(r.check("median_ratio_below_10")->pass) << r.check("median_ratio_below_10")->detail;
    EXPECT_LT(r.summary.at("median_ratio_worst"), 3.0);
}

TEST(Experiments, EntrywiseControlOrderingAndTrace) {
    auto c = small("entrywise");
    c.trials = 5;
    auto r = run_experiment(c);
    EXPECT_TRUE(r.check("control_ordering")->pass);
    EXPECT_TRUE(r.check("trace_two_ways")->pass) << r.check("trace_two_ways")->detail;
}

TEST(Experiments, WrongEnsembleKindRejected) {
    for (const char* id : {"fluctuation_averaging", "stability"}) {
        auto c = small(id);
        c.ensemble.kind = EnsembleKind::generalized_wigner;
        EXPECT_THROW(run_experiment(c), invalid_parameter) << id;
    }
    auto c = small("large_deviation");
    c.ld_kind = "cubic";
    EXPECT_THROW(run_experiment(c), invalid_parameter);
    c = small("isotropic");
    c.trials = 0;
    EXPECT_THROW(run_experiment(c), invalid_parameter);
}

TEST(Experiments, OutsideSkipsPointsBeyondTopEigenvalue) {
    auto c = small("outside");
    c.kappa = {1e-4, 0.5};
    c.omega = 0.001;
    c.trials = 6;
    auto r = run_experiment(c);
    bool skipped = false;
    for (auto& w : r.warnings) skipped = skipped || w.find("top eigenvalue") != std::string::npos || w.find("outside the domain") != std::string::npos;
    EXPECT_TRUE(skipped);
    for (auto& row : r.rows) EXPECT_GT(row.z.real() - mp_edges(1.0).second, 0.0);
}
