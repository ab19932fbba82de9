// Acceptance run: one PASS/FAIL line per criterion C1..C10, plus INFO lines.
// Tolerances, sizes and seeds are fixed here; the exit status is 1 if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "locallaw/ensembles.hpp"
#include "locallaw/experiments.hpp"
#include "locallaw/graph_expansion.hpp"
#include "locallaw/resolvent.hpp"
#include "locallaw/spectral_laws.hpp"

using namespace locallaw;
using namespace locallaw::harness;
namespace gx = locallaw::graph;

namespace {

// ---------------------------------------------------------------- pinned tolerances
constexpr double kLawResidual = 1e-10;
constexpr double kEdgeValueTol = 1e-10;
constexpr double kDualityTol = 1e-12;
constexpr double kNormalizationTol = 1e-8;
constexpr double kLawSeconds = 5.0;
constexpr double kIdentityTol = 1e-8;  // times max(1, eta^-2)
constexpr double kIdentitySeconds = 30.0;
constexpr double kLeafSumRel = 1e-8;
constexpr double kExpansionSeconds = 300.0;
constexpr double kRemainderFactor = 10.0;
constexpr double kRemainderFraction = 0.9;
constexpr double kIsotropicSeconds = 1200.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(4);
    os << x;
    return os.str();
}

void info(const std::string& id, const std::string& text) { std::cout << "INFO " << id << ": " << text << std::endl; }

Eigen::MatrixXcd sample_X(long M, long N, std::uint64_t seed, EntryDistribution d = EntryDistribution::complex_gaussian) {
    EnsembleSpec s;
    s.M = M;
    s.N = N;
    s.entry = d;
    s.seed = seed;
    return sample_covariance(s);
}

// ---------------------------------------------------------------- C1

Outcome law_suite() {
    auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double omega = 0.1;
    const long K = 1000;
    int points = 0;
    double worst_D = 0.0, worst_dual = 0.0;
    while (points < 10000) {
        double phi = std::exp(std::log(1.0 / 8.0) + u(rng) * std::log(64.0));
        auto [lo, hi] = mp_edges(phi);
        double E = lo - 3.0 + u(rng) * (hi - lo + 6.0);
        double eta_lo = std::pow(static_cast<double>(K), -1.0 + omega);
        double eta = std::exp(std::log(eta_lo) + u(rng) * std::log(1.0 / omega / eta_lo));
        cplx z(E, eta);
        if (!DomainSpec(omega, K, DomainKind::S, phi).contains(z)) continue;
        ++points;
        cplx m = mp_stieltjes(z, phi);
        worst_D = std::max(worst_D, std::abs(stability_operator(m, z, phi)));
        worst_dual = std::max(worst_dual, std::abs(mp_stieltjes_dual(z, phi) - mp_stieltjes(z, 1.0 / phi)));
    }
    double edge_err = std::abs(mp_stieltjes(cplx(2.0, 1e-13), 1.0) - cplx(-0.5, 0.5));

    // raw density integrated independently of the library's quadrature
    boost::math::quadrature::tanh_sinh<double> ts;
    double worst_norm = 0.0;
    for (double phi : {0.125, 0.5, 1.0, 2.0, 8.0}) {
        auto [lo, hi] = mp_edges(phi);
        double mass = ts.integrate([&](double x) { return mp_density(x, phi).first; }, lo, hi, 1e-14);
        worst_norm = std::max(worst_norm, std::abs(mass + std::max(0.0, 1.0 - phi) - 1.0));
    }
    double secs = seconds_since(t0);
    bool ok = worst_D < kLawResidual && edge_err < kEdgeValueTol && worst_dual < kDualityTol &&
              worst_norm < kNormalizationTol && secs < kLawSeconds;
    return {ok, "max |D(m)| " + fmt(worst_D) + " on " + std::to_string(points) + " points, edge value error " +
                    fmt(edge_err) + ", duality " + fmt(worst_dual) + ", normalization " + fmt(worst_norm) + ", " +
                    fmt(secs) + " s"};
}

// ---------------------------------------------------------------- C2

Outcome identity_suite() {
    auto t0 = Clock::now();
    Rng g(4242);
    double worst = 0.0;
    int bad = 0;
    for (int rep = 0; rep < 100; ++rep) {
        std::uniform_int_distribution<long> dim(6, 40);
        std::uniform_real_distribution<double> E(-0.5, 5.0), eta(0.1, 2.0);
        long M = dim(g), N = dim(g);
        cplx z(E(g), eta(g));
        long lim = std::min(M, N);
        std::vector<long> idx(lim);
        for (long i = 0; i < lim; ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), g);
        long t = static_cast<long>(g() % 3);
        std::vector<long> T(idx.begin(), idx.begin() + t);
        long a = idx[t], b = idx[t + 1], c = idx[t + 2];
        auto entry = rep % 2 ? EntryDistribution::rademacher : EntryDistribution::complex_gaussian;
        MinorCache cache(sample_X(M, N, g(), entry));
        double scale = identity_scale(z);
        std::vector<double> scaled;
        for (auto r : {check_identities_G(cache, z, T, a, b, c), check_identities_R(cache, z, T, a, b, c),
                       check_trace_identities(cache, z, T, T)})
            scaled.push_back(r.max() / r.scale);
        scaled.push_back(check_ward(cache, z, T, a) / scale);
        for (double s : scaled) {
            worst = std::max(worst, s);
            bad += !(s <= kIdentityTol);
        }
    }
    double secs = seconds_since(t0);
    return {bad == 0 && secs < kIdentitySeconds,
            "worst scaled residual " + fmt(worst) + " over 100 instances, " + std::to_string(bad) + " above tolerance, " +
                fmt(secs) + " s"};
}

// ---------------------------------------------------------------- C3, C4

struct ExpansionStats {
    int instances = 0, leaf_sum_bad = 0, depth_bad = 0, structure_bad = 0, monotone_bad = 0;
    double worst_leaf_rel = 0.0, worst_node_rel = 0.0;
    int max_depth = 0;
    std::size_t max_nodes = 0;

    int diag_leaves = 0, diag_bad = 0;
    double worst_diag_rel = 0.0;
    int runs = 0, runs_within = 0;
    double worst_remainder_ratio = 0.0;
};

std::vector<long> distinct_rows(int n, long M, std::mt19937_64& g) {
    std::vector<long> all(M);
    for (long i = 0; i < M; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), g);
    all.resize(n);
    return all;
}

// p = 2, M = N = 8, every partition, 3 seeds, at the given ell.
ExpansionStats expansion_runs(int ell) {
    ExpansionStats st;
    const long M = 8, N = 8;
    const int p = 2;
    const cplx z_sum(1.0, 1.0), z_rem(1.0, 0.5);
    const double phi = static_cast<double>(M) / N;
    const double bound = kRemainderFactor * std::pow(control_psi(z_rem, phi, N) / std::sqrt(phi), ell);
    std::mt19937_64 g(77 + ell);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Eigen::MatrixXcd X = sample_X(M, N, 1000 + seed);
        for (auto& P : gx::enumerate_partitions(p)) {
            ++st.instances;
            auto delta = gx::build_delta(P);
            auto a = distinct_rows(delta.black, M, g);
            auto tree = gx::build_tree(delta, ell);
            MinorCache cache(X);
            gx::Evaluator ev(cache, z_sum, a);
            auto rep = gx::verify_leaf_sum(tree, ev);
            double rel = rep.residual / std::max(std::abs(rep.root), 1e-300);
            st.worst_leaf_rel = std::max(st.worst_leaf_rel, rel);
            st.worst_node_rel = std::max(st.worst_node_rel, rep.worst_node_relative);
            st.leaf_sum_bad += !rep.ok(kLeafSumRel) || !(rep.worst_node_relative < kLeafSumRel);
            st.max_depth = std::max(st.max_depth, tree.depth);
            st.max_nodes = std::max(st.max_nodes, tree.nodes.size());
            st.depth_bad += static_cast<std::size_t>(tree.depth) > gx::depth_bound(p, ell);

            auto parity = gx::parity_signature(delta);
            for (auto& [s, node] : tree.nodes) {
                bool fine = gx::structure_violations(node).empty() && gx::parity_signature(node) == parity &&
                            std::count(s.begin(), s.end(), '1') <= ell;
                st.structure_bad += !fine;
                if (!tree.is_leaf(s)) {
                    int d = gx::d_count(node);
                    st.monotone_bad += gx::d_count(tree.nodes.at("0" + s)) < d || gx::d_count(tree.nodes.at("1" + s)) < d + 1;
                }
            }
            for (auto& s : tree.trivial_leaves) st.structure_bad += gx::d_count(tree.nodes.at(s)) < ell;
            for (auto& s : tree.nontrivial_leaves) st.structure_bad += !gx::all_G_maximal(tree.nodes.at(s));

            // diagonal expansion of every all-diagonal nontrivial leaf, evaluated at both z
            MinorCache cache_rem(X);
            gx::Evaluator ev_rem(cache_rem, z_rem, a);
            bool any = false, within = true;
            double run_worst = 0.0;
            for (auto& s : tree.nontrivial_leaves) {
                const auto& leaf = tree.nodes.at(s);
                bool diagonal = true;
                for (auto& e : leaf.edges) diagonal = diagonal && (!gx::is_G(e.kind) || e.loop());
                if (!diagonal) continue;
                auto out = gx::expand_diagonal(leaf, ell);
                ++st.diag_leaves;
                for (gx::Evaluator* E : {&ev, &ev_rem}) {
                    cplx sum = 0.0;
                    for (auto& h : out.main) sum += (*E)(h);
                    for (auto& h : out.remainder) sum += (*E)(h);
                    cplx want = (*E)(leaf);
                    double r = std::abs(sum - want) / std::max(std::abs(want), 1e-300);
                    st.worst_diag_rel = std::max(st.worst_diag_rel, r);
                    st.diag_bad += !(r <= kLeafSumRel);
                }
                for (double mag : gx::remainder_magnitudes(leaf, ev_rem, ell)) {
                    any = true;
                    run_worst = std::max(run_worst, mag / bound);
                    within = within && mag <= bound;
                }
            }
            if (any) {
                ++st.runs;
                st.runs_within += within;
                st.worst_remainder_ratio = std::max(st.worst_remainder_ratio, run_worst);
            }
        }
    }
    return st;
}

Outcome expansion_outcome(const ExpansionStats& s, double secs, int ell) {
    bool ok = s.leaf_sum_bad == 0 && s.depth_bad == 0 && s.structure_bad == 0 && s.monotone_bad == 0 &&
              secs < kExpansionSeconds;
    return {ok, "ell=" + std::to_string(ell) + ": " + std::to_string(s.instances) + " instances, worst leaf-sum rel " +
                    fmt(s.worst_leaf_rel) + ", worst node rel " + fmt(s.worst_node_rel) + ", depth " +
                    std::to_string(s.max_depth) + " <= " + std::to_string(gx::depth_bound(2, ell)) + ", nodes up to " +
                    std::to_string(s.max_nodes) + ", structure failures " + std::to_string(s.structure_bad) +
                    ", d-monotonicity failures " + std::to_string(s.monotone_bad) + ", " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- C5..C9

ExperimentConfig base(const std::string& id, EntryDistribution entry, long N, double phi) {
    ExperimentConfig c;
    c.experiment = id;
    c.ensemble.entry = entry;
    c.ensemble.N = N;
    c.ensemble.M = std::lround(phi * static_cast<double>(N));
    c.seed = 2024;
    c.jobs = default_jobs();
    return c;
}

std::string describe(const ExperimentResult& r) {
    std::string s;
    for (auto& ch : r.checks) s += (s.empty() ? "" : "; ") + ch.id + (ch.pass ? " ok" : " FAILED") + " (" + ch.detail + ")";
    return s;
}

Outcome run_all(const std::vector<std::pair<std::string, ExperimentConfig>>& runs, double budget_seconds,
                const std::string& id) {
    auto t0 = Clock::now();
    bool ok = true;
    std::string detail;
    for (auto& [label, c] : runs) {
        auto r = run_experiment(c);
        ok = ok && r.all_pass();
        for (auto& f : r.fits) info(id, label + " fit " + f.name + " exponent " + fmt(f.fit.exponent) + " +- " + fmt(f.fit.stderr_));
        for (auto& [k, v] : r.summary) info(id, label + " " + k + " = " + fmt(v));
        detail += (detail.empty() ? "" : " | ") + label + ": " + describe(r);
    }
    double secs = seconds_since(t0);
    if (budget_seconds > 0 && secs >= budget_seconds) ok = false;
    return {ok, detail + " | " + fmt(secs) + " s"};
}

Outcome isotropic() {
    std::vector<std::pair<std::string, ExperimentConfig>> runs;
    for (auto [label, entry] : {std::pair{"real-gaussian", EntryDistribution::real_gaussian},
                                std::pair{"rademacher", EntryDistribution::rademacher}}) {
        auto c = base("isotropic", entry, 256, 1.0);
        c.N_ladder = {256, 512, 1024, 2048};
        c.trials = 50;
        c.eps = {0.25};
        runs.emplace_back(label, c);
    }
    return run_all(runs, kIsotropicSeconds, "C5");
}

Outcome outside() {
    auto c = base("outside", EntryDistribution::complex_gaussian, 128, 1.0);
    c.N_ladder = {128, 256, 512, 1024};
    c.trials = 50;
    return run_all({{"phi=1", c}}, 0.0, "C6");
}

Outcome rigidity() {
    auto one = base("rigidity", EntryDistribution::real_gaussian, 128, 1.0);
    one.N_ladder = {128, 256, 512, 1024};
    one.trials = 40;
    auto two = one;
    two.ensemble.M = 2 * two.ensemble.N;
    return run_all({{"phi=1", one}, {"phi=2", two}}, 0.0, "C7");
}

Outcome delocalization() {
    auto c = base("delocalization", EntryDistribution::complex_gaussian, 1024, 1.0);
    c.trials = 20;
    return run_all({{"N=1024", c}}, 0.0, "C8");
}

Outcome fluctuation_averaging() {
    auto c = base("fluctuation_averaging", EntryDistribution::complex_gaussian, 512, 1.0);
    c.trials = 40;
    return run_all({{"N=512", c}}, 0.0, "C9");
}

// ---------------------------------------------------------------- C10

DominationSamples analytic_triple(double power) {
    DominationSamples s;
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (long N : {100L, 200L, 400L, 800L})
        for (int i = 0; i < 25; ++i) {
            double zeta = u(g);
            double xi = power < 0 ? 0.0 : std::pow(static_cast<double>(N), power) * zeta;
            s[N].emplace_back(xi, zeta);
        }
    return s;
}

Outcome domination_calibration() {
    // xi = 0, xi = zeta, xi = N^0.5 zeta
    bool a = estimate_domination(analytic_triple(-1.0), {0.25}).consistent;
    bool b = estimate_domination(analytic_triple(0.0), {0.25}).consistent;
    bool c = estimate_domination(analytic_triple(0.5), {0.25}).consistent;
    auto word = [](bool v) { return v ? std::string("consistent") : std::string("inconsistent"); };
    return {a && b && !c, "verdicts (" + word(a) + ", " + word(b) + ", " + word(c) + ")"};
}

}  // namespace

int main() {
    int failed = 0;
    auto report = [&](const std::string& id, const Outcome& o) {
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << id << ": " << o.detail << std::endl;
    };
    auto guarded = [](const std::function<Outcome()>& f) {
        try {
            return f();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("error: ") + e.what()};
        }
    };

    report("C1", guarded(law_suite));
    report("C2", guarded(identity_suite));

    ExpansionStats two, three;
    double secs_two = 0.0, secs_three = 0.0;
    Outcome c3 = guarded([&] {
        auto t0 = Clock::now();
        two = expansion_runs(2);
        secs_two = seconds_since(t0);
        t0 = Clock::now();
        three = expansion_runs(3);
        secs_three = seconds_since(t0);
        Outcome a = expansion_outcome(two, secs_two, 2), b = expansion_outcome(three, secs_three, 3);
        return Outcome{a.pass && b.pass && secs_two + secs_three < kExpansionSeconds, a.detail + " | " + b.detail};
    });
    report("C3", c3);
    // at ell = 2 every p = 2 root already stops, so the diagonal runs all come from ell = 3
    Outcome c4 = guarded([&] {
        int leaves = two.diag_leaves + three.diag_leaves, bad = two.diag_bad + three.diag_bad;
        int runs = two.runs + three.runs, within = two.runs_within + three.runs_within;
        double frac = runs ? static_cast<double>(within) / runs : 0.0;
        bool ok = bad == 0 && leaves > 0 && frac >= kRemainderFraction;
        return Outcome{ok, std::to_string(leaves) + " diagonal leaves (ell=2: " + std::to_string(two.diag_leaves) +
                               ", ell=3: " + std::to_string(three.diag_leaves) + "), worst sum rel " +
                               fmt(std::max(two.worst_diag_rel, three.worst_diag_rel)) +
                               "; remainder within 10 (phi^-1/2 psi)^ell in " + std::to_string(within) + "/" +
                               std::to_string(runs) + " runs, worst ratio " +
                               fmt(std::max(two.worst_remainder_ratio, three.worst_remainder_ratio))};
    });
    report("C4", c4);

    report("C5", guarded(isotropic));
    report("C6", guarded(outside));
    report("C7", guarded(rigidity));
    report("C8", guarded(delocalization));
    report("C9", guarded(fluctuation_averaging));
    report("C10", guarded(domination_calibration));

    std::cout << (failed ? std::to_string(failed) + " of 10 criteria failed" : std::string("all 10 criteria passed"))
              << std::endl;
    return failed ? 1 : 0;
}
