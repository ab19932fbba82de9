#pragma once

// Monte Carlo experiments. Each is a pure function of its ExperimentConfig: matrices come
// from (seed, trial) substreams and test vectors from their own stream, so results do not
// depend on the number of worker threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "locallaw/harness.hpp"

namespace locallaw::harness {

struct Check {
    std::string id;
    bool pass = false;
    std::string detail;
};

struct NamedFit {
    std::string name;
    ScalingFit fit;
};

struct NamedVerdict {
    std::string name;
    DominationVerdict verdict;
};

struct ExperimentResult {
    std::string experiment;
    std::vector<Row> rows;
    std::vector<NamedFit> fits;
    std::vector<NamedVerdict> verdicts;
    std::map<std::string, double> summary;
    std::vector<Check> checks;
    std::vector<std::string> warnings;

    bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    }
    const Check* check(const std::string& id) const {
        for (auto& c : checks)
            if (c.id == id) return &c;
        return nullptr;
    }
};

struct ExperimentConfig {
    std::string experiment = "isotropic";
    EnsembleSpec ensemble;       // kind, entry, profile; N and M give the default size and phi = M/N
    std::vector<long> N_ladder;  // empty: ensemble.N only
    int trials = 20;
    std::uint64_t seed = 0;
    double omega = 0.1;
    std::vector<double> E;    // empty: per-experiment default
    std::vector<double> eta;  // empty: per-experiment default
    std::vector<double> eps{0.25};
    double tail = 0.1;
    std::vector<double> kappa{0.1, 0.2, 0.4, 0.8};
    double kappa_fixed = 0.4;
    std::vector<long> alpha;  // rigidity; empty: edge and bulk defaults
    double bulk_eps = 0.25;   // bulk index window [eps K, (1 - eps) K]
    double phi_gap = 0.5;     // |phi - 1| >= phi_gap counts as separated from 1
    std::string ld_kind = "linear";
    double lattice_spacing = 1e-3;
    int jobs = 1;
};

inline const std::vector<std::string>& experiment_ids() {
    static const std::vector<std::string> ids{"isotropic", "outside", "entrywise", "rigidity",
                                              "delocalization", "fluctuation_averaging", "large_deviation",
                                              "stability"};
    return ids;
}

namespace detail {

inline std::vector<long> ladder(const ExperimentConfig& c) {
    return c.N_ladder.empty() ? std::vector<long>{c.ensemble.N} : c.N_ladder;
}

inline EnsembleSpec at_size(const ExperimentConfig& c, long N) {
    EnsembleSpec s = c.ensemble;
    double phi = c.ensemble.phi();
    s.seed = c.seed;
    s.N = N;
    if (s.kind == EnsembleKind::generalized_wigner) {
        s.M = N;
        std::string kind = s.profile ? s.profile->kind : "flat";
        double t = s.profile ? s.profile->t : 0.0;
        std::uint64_t ps = s.profile ? s.profile->seed : 0;
        s.profile = build_profile(kind, t, N, ps);
    } else {
        s.M = std::max<long>(1, std::lround(phi * static_cast<double>(N)));
    }
    return s;
}

inline Row row(const std::string& exp, const EnsembleSpec& s, std::uint64_t trial, cplx z, std::string metric,
               double value) {
    return Row{exp, trial, s.N, s.M, s.phi(), z, std::move(metric), value};
}

inline DomainSpec domain_for(const EnsembleSpec& s, double omega, bool outside) {
    bool wig = s.kind == EnsembleKind::generalized_wigner;
    DomainKind k = wig ? (outside ? DomainKind::S_tilde_W : DomainKind::S_W) : (outside ? DomainKind::S_tilde : DomainKind::S);
    return DomainSpec(omega, std::min(s.N, s.M), k, s.phi());
}

inline std::vector<double> log_spaced(double lo, double hi, int n) {
    std::vector<double> out;
    for (int i = 0; i < n; ++i) out.push_back(lo * std::pow(hi / lo, n == 1 ? 0.0 : static_cast<double>(i) / (n - 1)));
    return out;
}

inline std::string fmt(double x) {
    std::ostringstream os;
    os.precision(4);
    os << x;
    return os.str();
}

inline void add_fit(ExperimentResult& r, const std::string& name, const std::vector<double>& x,
                    const std::vector<double>& y) {
    try {
        r.fits.push_back({name, fit_power_law(x, y)});
    } catch (const invalid_parameter& e) {
        r.warnings.push_back(name + ": fit skipped (" + e.what() + ")");
    }
}

inline const ScalingFit* find_fit(const ExperimentResult& r, const std::string& name) {
    for (auto& f : r.fits)
        if (f.name == name) return &f.fit;
    return nullptr;
}

inline void window_check(ExperimentResult& r, const std::string& id, const std::string& fit, double lo, double hi) {
    if (auto* f = find_fit(r, fit))
        r.checks.push_back({id, f->exponent >= lo && f->exponent <= hi,
                            "exponent " + fmt(f->exponent) + " (stderr " + fmt(f->stderr_) + ") in [" + fmt(lo) + ", " +
                                fmt(hi) + "]"});
}

inline void add_verdict(ExperimentResult& r, const std::string& name, const DominationSamples& s,
                        const ExperimentConfig& c, bool gating = true) {
    try {
        auto v = estimate_domination(s, c.eps, c.tail);
        std::string detail;
        for (std::size_t e = 0; e < v.eps.size(); ++e) {
            detail += "eps " + fmt(v.eps[e]) + ":";
            for (double f : v.fraction[e]) detail += " " + fmt(f);
            detail += e + 1 < v.eps.size() ? "; " : "";
        }
        if (gating) r.checks.push_back({name, v.consistent, detail});
        else r.summary[name + "_consistent"] = v.consistent ? 1.0 : 0.0;
        r.verdicts.push_back({name, std::move(v)});
    } catch (const invalid_parameter& e) {
        r.warnings.push_back(name + ": verdict skipped (" + e.what() + ")");
    }
}

inline double sqrt_real_derivative(const SpectralLaw& law, double E) {
    // Im m(E + i h) / h -> m'(E) > 0 off the support
    const double h = 1e-8;
    return std::sqrt(law.stieltjes(cplx(E, h)).imag() / h);
}

}  // namespace detail

// ---------------------------------------------------------------- isotropic law inside the spectrum

inline ExperimentResult experiment_isotropic(const ExperimentConfig& c) {
    ExperimentResult res;
    res.experiment = "isotropic";
    DominationSamples dom;
    std::map<std::pair<double, double>, std::vector<double>> med_err, psi_at;  // z -> per N
    std::vector<double> Ns;
    for (long N : detail::ladder(c)) {
        EnsembleSpec s = detail::at_size(c, N);
        SpectralLaw law = law_of(s);
        auto [lo, hi] = law.edges();
        DomainSpec domain = detail::domain_for(s, c.omega, false);
        std::vector<double> Es = c.E, etas = c.eta;
        if (Es.empty())
            for (double f : {0.05, 0.25, 0.5, 0.75, 0.95}) Es.push_back(lo + f * (hi - lo));
        if (etas.empty()) etas = {0.01, 0.03, 0.1, 0.5};
        std::vector<cplx> grid;
        for (double E : Es)
            for (double eta : etas) {
                cplx z(E, eta);
                if (domain.contains(z)) grid.push_back(z);
                else res.warnings.push_back("isotropic N=" + std::to_string(N) + ": z=" + detail::fmt(E) + "+" +
                                            detail::fmt(eta) + "i outside the domain, skipped");
            }
        auto families = vector_families(N, c.seed);
        Eigen::MatrixXcd V(N, 2 * static_cast<long>(families.size()));
        for (std::size_t j = 0; j < families.size(); ++j) {
            V.col(2 * static_cast<long>(j)) = families[j].v;
            V.col(2 * static_cast<long>(j) + 1) = families[j].w;
        }
        struct Out {
            std::vector<Row> rows;
            std::vector<double> err, ratio;
        };
        auto outs = parallel_map<Out>(static_cast<std::size_t>(c.trials), c.jobs, [&](std::size_t t) {
            Out o;
            Spectrum sp = spectrum_of(s, t, true);
            Eigen::MatrixXcd P = sp.project(V);
            for (cplx z : grid) {
                cplx m = law.stieltjes(z);
                double psi = psi_from(m.imag(), N, z.imag());
                for (std::size_t j = 0; j < families.size(); ++j) {
                    long a = 2 * static_cast<long>(j);
                    cplx val = projected_form(sp.values, P.col(a), P.col(a + 1), z);
                    double err = std::abs(val - m * families[j].v.dot(families[j].w));
                    o.err.push_back(err);
                    o.ratio.push_back(err / psi);
                    o.rows.push_back(detail::row(res.experiment, s, t, z, "error:" + families[j].family, err));
                    o.rows.push_back(detail::row(res.experiment, s, t, z, "ratio:" + families[j].family, err / psi));
                }
            }
            return o;
        });
        std::vector<double> ratios;
        std::vector<std::vector<double>> err_by_z(grid.size());
        for (auto& o : outs) {
            for (auto& r : o.rows) res.rows.push_back(std::move(r));
            std::size_t per = families.size();
            for (std::size_t k = 0; k < o.err.size(); ++k) {
                std::size_t zi = k / per;
                double psi = o.err[k] / o.ratio[k];
                dom[N].emplace_back(o.err[k], psi);
                err_by_z[zi].push_back(o.err[k]);
                ratios.push_back(o.ratio[k]);
            }
        }
        if (ratios.empty()) continue;
        Ns.push_back(static_cast<double>(N));
        double mr = median(ratios);
        res.summary["median_ratio_N" + std::to_string(N)] = mr;
        res.summary["max_ratio_N" + std::to_string(N)] = *std::max_element(ratios.begin(), ratios.end());
        for (std::size_t zi = 0; zi < grid.size(); ++zi) {
            auto key = std::make_pair(grid[zi].real(), grid[zi].imag());
            med_err[key].push_back(median(err_by_z[zi]));
            psi_at[key].push_back(psi_from(law.stieltjes(grid[zi]).imag(), N, grid[zi].imag()));
        }
    }
    double worst = 0.0;
    for (auto& [k, v] : res.summary)
        if (k.rfind("median_ratio_N", 0) == 0) worst = std::max(worst, v);
    res.summary["median_ratio_worst"] = worst;
    res.checks.push_back({"median_ratio_below_10", worst < 10.0, "worst per-N median error/psi " + detail::fmt(worst)});
    if (Ns.size() >= 4) {
        double gap = 0.0;
        for (auto& [key, errs] : med_err) {
            if (errs.size() != Ns.size()) continue;
            auto fe = fit_power_law(Ns, errs), fp = fit_power_law(Ns, psi_at[key]);
            gap = std::max(gap, std::abs(fe.exponent - fp.exponent));
        }
        res.summary["max_exponent_gap_vs_psi"] = gap;
    }
    detail::add_verdict(res, "domination", dom, c);
    return res;
}

// ---------------------------------------------------------------- outside the spectrum

inline ExperimentResult experiment_outside(const ExperimentConfig& c) {
    ExperimentResult res;
    res.experiment = "outside";
    std::vector<double> etas = c.eta.empty() ? std::vector<double>{0.0} : c.eta;
    std::map<long, std::map<double, std::vector<double>>> err;  // N -> kappa -> errors at the first eta
    double worst_err = 0.0;
    bool all_finite = true;
    for (long N : detail::ladder(c)) {
        EnsembleSpec s = detail::at_size(c, N);
        SpectralLaw law = law_of(s);
        double hi = law.edges().second;
        DomainSpec domain = detail::domain_for(s, c.omega, true);
        std::vector<cplx> grid;
        for (double k : c.kappa)
            for (double eta : etas) {
                cplx z(hi + k, eta);
                if (domain.contains(z, true)) grid.push_back(z);
                else res.warnings.push_back("outside N=" + std::to_string(N) + ": kappa=" + detail::fmt(k) + " eta=" +
                                            detail::fmt(eta) + " outside the domain, skipped");
            }
        auto families = vector_families(N, c.seed);
        Eigen::MatrixXcd V(N, 2 * static_cast<long>(families.size()));
        for (std::size_t j = 0; j < families.size(); ++j) {
            V.col(2 * static_cast<long>(j)) = families[j].v;
            V.col(2 * static_cast<long>(j) + 1) = families[j].w;
        }
        struct Out {
            std::vector<Row> rows;
            std::vector<std::pair<std::size_t, double>> err;  // grid index, error
            std::vector<std::string> warnings;
        };
        auto outs = parallel_map<Out>(static_cast<std::size_t>(c.trials), c.jobs, [&](std::size_t t) {
            Out o;
            Spectrum sp = spectrum_of(s, t, true);
            Eigen::MatrixXcd P = sp.project(V);
            double top = sp.values.maxCoeff();
            for (std::size_t zi = 0; zi < grid.size(); ++zi) {
                cplx z = grid[zi];
                if (z.imag() == 0.0 && top >= z.real()) {
                    o.warnings.push_back("outside N=" + std::to_string(N) + " trial " + std::to_string(t) +
                                         ": top eigenvalue beyond E=" + detail::fmt(z.real()) + ", point skipped");
                    continue;
                }
                cplx m = law.stieltjes(z);
                double control = z.imag() > 0.0 ? std::sqrt(m.imag() / (static_cast<double>(N) * z.imag()))
                                                : detail::sqrt_real_derivative(law, z.real()) / std::sqrt(static_cast<double>(N));
                for (std::size_t j = 0; j < families.size(); ++j) {
                    long a = 2 * static_cast<long>(j);
                    cplx val = projected_form(sp.values, P.col(a), P.col(a + 1), z);
                    double e = std::abs(val - m * families[j].v.dot(families[j].w));
                    o.err.emplace_back(zi, e);
                    o.rows.push_back(detail::row(res.experiment, s, t, z, "error:" + families[j].family, e));
                    o.rows.push_back(detail::row(res.experiment, s, t, z, "ratio:" + families[j].family, e / control));
                }
            }
            return o;
        });
        for (auto& o : outs) {
            for (auto& r : o.rows) res.rows.push_back(std::move(r));
            for (auto& w : o.warnings) res.warnings.push_back(w);
            for (auto [zi, e] : o.err) {
                all_finite = all_finite && std::isfinite(e);
                worst_err = std::max(worst_err, e);
                if (grid[zi].imag() == etas.front()) err[N][grid[zi].real() - hi].push_back(e);
            }
        }
    }
    res.summary["max_error"] = worst_err;
    res.checks.push_back({"errors_finite", all_finite, "max error " + detail::fmt(worst_err)});
    if (!err.empty()) {
        auto& top = err.rbegin()->second;
        std::vector<double> ks, med;
        for (auto& [k, v] : top) {
            ks.push_back(k);
            med.push_back(median(v));
        }
        detail::add_fit(res, "kappa", ks, med);
        detail::window_check(res, "kappa_exponent", "kappa", -0.4, -0.1);
        std::vector<double> Ks, medN;
        for (auto& [N, byk] : err) {
            for (auto& [k, v] : byk)
                if (std::abs(k - c.kappa_fixed) < 1e-9) {
                    EnsembleSpec s = detail::at_size(c, N);
                    Ks.push_back(static_cast<double>(std::min(s.N, s.M)));
                    medN.push_back(median(v));
                }
        }
        detail::add_fit(res, "K", Ks, medN);
        detail::window_check(res, "K_exponent", "K", -0.65, -0.35);
    }
    return res;
}

// ---------------------------------------------------------------- entrywise law

inline ExperimentResult experiment_entrywise(const ExperimentConfig& c) {
    ExperimentResult res;
    res.experiment = "entrywise";
    bool order_ok = true, trace_ok = true;
    double worst_trace = 0.0;
    std::vector<double> lam_ratio, theta_scaled, theta_eta1, Ns, theta_med;
    for (long N : detail::ladder(c)) {
        EnsembleSpec s = detail::at_size(c, N);
        SpectralLaw law = law_of(s);
        auto [lo, hi] = law.edges();
        DomainSpec domain = detail::domain_for(s, c.omega, false);
        std::vector<double> Es = c.E, etas = c.eta;
        if (Es.empty()) Es = {0.5 * (lo + hi), lo + 0.9 * (hi - lo)};
        if (etas.empty()) etas = {0.05, 1.0};
        std::vector<cplx> grid;
        for (double E : Es)
            for (double eta : etas) {
                cplx z(E, eta);
                if (domain.contains(z)) grid.push_back(z);
                else res.warnings.push_back("entrywise: z outside the domain, skipped");
            }
        bool cov = s.kind == EnsembleKind::sample_covariance;
        struct Out {
            std::vector<Row> rows;
            std::vector<double> lam_ratio, theta_scaled, theta_first, theta_eta1;
            bool order_ok = true, trace_ok = true;
            double worst_trace = 0.0;
        };
        auto outs = parallel_map<Out>(static_cast<std::size_t>(c.trials), c.jobs, [&](std::size_t t) {
            Out o;
            Spectrum sp = spectrum_of(s, t, true);
            Eigen::MatrixXcd X;
            if (cov) X = sample_covariance(s, t);
            for (std::size_t zi = 0; zi < grid.size(); ++zi) {
                cplx z = grid[zi];
                cplx m = law.stieltjes(z);
                double psi = psi_from(m.imag(), N, z.imag());
                Eigen::MatrixXcd R = sp.resolvent(z);
                Eigen::MatrixXcd D = R;
                D.diagonal().array() -= m;
                double Lambda = D.cwiseAbs().maxCoeff();
                double diag_max = D.diagonal().cwiseAbs().maxCoeff();
                Eigen::MatrixXcd Off = R;
                Off.diagonal().setZero();
                double Lambda_o = Off.cwiseAbs().maxCoeff();
                cplx tr_eig = sp.trace(z), tr_diag = R.trace();
                double Theta = std::abs(tr_eig / static_cast<double>(N) - m);
                double dtr = std::abs(tr_eig - tr_diag);
                o.worst_trace = std::max(o.worst_trace, dtr / std::max(1.0, std::abs(tr_eig)));
                o.trace_ok = o.trace_ok && dtr <= 1e-9 * std::max(1.0, std::abs(tr_eig));
                o.order_ok = o.order_ok && Lambda >= Lambda_o && Lambda_o >= 0.0 && Lambda >= diag_max &&
                             Theta <= Lambda + 1e-12;
                double ne = static_cast<double>(N) * z.imag();
                auto put = [&](const char* name, double v) { o.rows.push_back(detail::row(res.experiment, s, t, z, name, v)); };
                put("Lambda", Lambda);
                put("Lambda_o", Lambda_o);
                put("Theta", Theta);
                put("Lambda_over_psi", Lambda / psi);
                put("Theta_times_Neta", Theta * ne);
                put("Lambda_logN", Lambda * std::log(static_cast<double>(N)));
                o.lam_ratio.push_back(Lambda / psi);
                o.theta_scaled.push_back(Theta * ne);
                if (zi == 0) o.theta_first.push_back(Theta);
                if (z.imag() == 1.0) o.theta_eta1.push_back(Theta * static_cast<double>(N));
                if (cov) {
                    // G = (X R X* - I) / z, compared with the dual law
                    Eigen::MatrixXcd G = (X * R * X.adjoint() - Eigen::MatrixXcd::Identity(s.M, s.M)) / z;
                    G.diagonal().array() -= mp_stieltjes(z, 1.0 / s.phi());
                    put("G_error_scaled", G.cwiseAbs().maxCoeff() * s.phi() / psi);
                }
            }
            return o;
        });
        std::vector<double> th;
        for (auto& o : outs) {
            for (auto& r : o.rows) res.rows.push_back(std::move(r));
            lam_ratio.insert(lam_ratio.end(), o.lam_ratio.begin(), o.lam_ratio.end());
            theta_scaled.insert(theta_scaled.end(), o.theta_scaled.begin(), o.theta_scaled.end());
            theta_eta1.insert(theta_eta1.end(), o.theta_eta1.begin(), o.theta_eta1.end());
            th.insert(th.end(), o.theta_first.begin(), o.theta_first.end());
            order_ok = order_ok && o.order_ok;
            trace_ok = trace_ok && o.trace_ok;
            worst_trace = std::max(worst_trace, o.worst_trace);
        }
        if (!th.empty()) {
            Ns.push_back(static_cast<double>(N));
            theta_med.push_back(median(th));
        }
    }
    res.checks.push_back({"control_ordering", order_ok, "Lambda >= Lambda_o >= 0, Lambda >= max diag error, Theta <= Lambda"});
    res.checks.push_back({"trace_two_ways", trace_ok, "worst relative gap " + detail::fmt(worst_trace)});
    if (!lam_ratio.empty()) {
        res.summary["median_Lambda_over_psi"] = median(lam_ratio);
        res.summary["median_Theta_times_Neta"] = median(theta_scaled);
    }
    if (!theta_eta1.empty())
        res.summary["fraction_Theta_eta1_below_10_over_N"] =
            fraction_if(theta_eta1, [](double v) { return v <= 10.0; });
    if (Ns.size() >= 4) {
        detail::add_fit(res, "Theta_vs_N", Ns, theta_med);
        detail::window_check(res, "Theta_exponent", "Theta_vs_N", -1.2, -0.8);
    }
    return res;
}

// ---------------------------------------------------------------- rigidity

inline ExperimentResult experiment_rigidity(const ExperimentConfig& c) {
    ExperimentResult res;
    res.experiment = "rigidity";
    DominationSamples dom;
    std::vector<double> Ks, top_med, low_med;
    double bulk_worst = 0.0;
    bool ordered = true;
    bool separated = std::abs(c.ensemble.phi() - 1.0) >= c.phi_gap && c.ensemble.kind == EnsembleKind::sample_covariance;
    bool wigner = c.ensemble.kind == EnsembleKind::generalized_wigner;
    for (long N : detail::ladder(c)) {
        EnsembleSpec s = detail::at_size(c, N);
        SpectralLaw law = law_of(s);
        long K = std::min(s.N, s.M);
        std::set<long> aset;
        if (c.alpha.empty()) {
            for (long a : {1L, 2L, 3L, 5L, 10L, K / 4, K / 2, 3 * K / 4, K - 9, K - 4, K})
                if (a >= 1 && a <= K) aset.insert(a);
        } else {
            for (long a : c.alpha)
                if (a >= 1 && a <= K) aset.insert(a);
        }
        aset.insert(1);
        aset.insert(K);
        aset.insert(std::max(1L, K / 2));
        std::vector<long> alphas(aset.begin(), aset.end());
        std::vector<double> gamma = law.classical(s.N, s.M, alphas);
        for (std::size_t i = 1; i < gamma.size(); ++i) ordered = ordered && gamma[i] <= gamma[i - 1];
        auto [lo, hi] = law.edges();
        struct Out {
            std::vector<Row> rows;
            std::vector<double> stat;
            double top = 0, low = 0, bulk = 0;
            bool ordered = true;
        };
        auto outs = parallel_map<Out>(static_cast<std::size_t>(c.trials), c.jobs, [&](std::size_t t) {
            Out o;
            Spectrum sp = spectrum_of(s, t, false);
            long n = sp.dim();
            for (long k = 1; k < n; ++k) o.ordered = o.ordered && sp.values(k) >= sp.values(k - 1);
            double Kd = static_cast<double>(K);
            for (std::size_t i = 0; i < alphas.size(); ++i) {
                long a = alphas[i];
                double lam = sp.values(n - a);
                double dev = lam - gamma[i];
                double idx = static_cast<double>(a);
                if (separated || wigner) idx = std::min(idx, Kd + 1.0 - idx);
                double st = std::abs(dev) * std::cbrt(idx) * std::pow(Kd, 2.0 / 3.0);
                o.stat.push_back(st);
                cplx z = 0.0;
                o.rows.push_back(detail::row(res.experiment, s, t, z, "deviation_a" + std::to_string(a), dev));
                o.rows.push_back(detail::row(res.experiment, s, t, z, "normalized_a" + std::to_string(a), st));
                if (a == K / 2) o.bulk = st;
            }
            o.top = std::abs(sp.values(n - 1) - hi);
            o.low = std::abs(sp.values(n - K) - lo);
            o.rows.push_back(detail::row(res.experiment, s, t, 0.0, "top_minus_upper_edge", sp.values(n - 1) - hi));
            o.rows.push_back(detail::row(res.experiment, s, t, 0.0, "bottom_minus_lower_edge", sp.values(n - K) - lo));
            return o;
        });
        std::vector<double> tops, lows, bulks;
        for (auto& o : outs) {
            for (auto& r : o.rows) res.rows.push_back(std::move(r));
            for (double st : o.stat) dom[N].emplace_back(st, 1.0);
            tops.push_back(o.top);
            lows.push_back(o.low);
            bulks.push_back(o.bulk);
            ordered = ordered && o.ordered;
        }
        Ks.push_back(static_cast<double>(K));
        top_med.push_back(median(tops));
        low_med.push_back(median(lows));
        double b = median(bulks);
        res.summary["bulk_median_normalized_N" + std::to_string(N)] = b;
        bulk_worst = std::max(bulk_worst, b);
    }
    res.checks.push_back({"ordering", ordered, "eigenvalues and classical locations sorted"});
    res.checks.push_back({"bulk_median_below_10", bulk_worst < 10.0, "worst bulk median " + detail::fmt(bulk_worst)});
    if (Ks.size() >= 4) {
        detail::add_fit(res, "upper_edge", Ks, top_med);
        detail::window_check(res, "upper_edge_exponent", "upper_edge", -2.0 / 3.0 - 0.2, -2.0 / 3.0 + 0.2);
        if (separated || wigner) {
            detail::add_fit(res, "lower_edge", Ks, low_med);
            detail::window_check(res, "lower_edge_exponent", "lower_edge", -2.0 / 3.0 - 0.2, -2.0 / 3.0 + 0.2);
        }
    }
    // reported, not gating: at desk sizes the edge statistics sit near 4-5 while N^0.25 < 7
    detail::add_verdict(res, "domination", dom, c, false);
    return res;
}

// ---------------------------------------------------------------- delocalization

inline ExperimentResult experiment_delocalization(const ExperimentConfig& c) {
    ExperimentResult res;
    res.experiment = "delocalization";
    std::vector<double> overlap, l1, sums, coord_max;  // overlap, sums and coord_max divided by N^0.2
    for (long N : detail::ladder(c)) {
        EnsembleSpec s = detail::at_size(c, N);
        long K = std::min(s.N, s.M);
        bool all = std::abs(s.phi() - 1.0) >= c.phi_gap;
        long a_lo = all ? 1 : std::max(1L, static_cast<long>(std::ceil(c.bulk_eps * K)));
        long a_hi = all ? K : static_cast<long>(std::floor((1.0 - c.bulk_eps) * K));
        Eigen::VectorXcd v = vector_families(N, c.seed)[2].v;
        double thr = std::pow(static_cast<double>(N), 0.2);
        struct Out {
            std::vector<Row> rows;
            std::vector<double> overlap, l1, sums, coord_max;
        };
        auto outs = parallel_map<Out>(static_cast<std::size_t>(c.trials), c.jobs, [&](std::size_t t) {
            Out o;
            Spectrum sp = spectrum_of(s, t, true);
            long n = sp.dim();
            double Nd = static_cast<double>(N);
            for (long a = a_lo; a <= a_hi; ++a) {
                Eigen::VectorXcd u = sp.eigenvector(n - a);
                double ov_e = Nd * std::norm(u(0));
                double ov_v = Nd * std::norm(v.dot(u));
                double ov = std::max(ov_e, ov_v);
                double cm = Nd * u.cwiseAbs2().maxCoeff();
                double l = u.cwiseAbs().sum() / std::sqrt(Nd);
                double su = std::abs(u.sum());
                o.overlap.push_back(ov / thr);
                o.l1.push_back(l);
                o.sums.push_back(su / thr);
                o.coord_max.push_back(cm / thr);
                auto put = [&](const std::string& name, double val) {
                    o.rows.push_back(detail::row(res.experiment, s, t, 0.0, name + "_a" + std::to_string(a), val));
                };
                put("overlap_max", ov);
                put("coordinate_max", cm);
                put("l1_over_sqrtN", l);
                put("abs_sum", su);
            }
            return o;
        });
        for (auto& o : outs) {
            for (auto& r : o.rows) res.rows.push_back(std::move(r));
            overlap.insert(overlap.end(), o.overlap.begin(), o.overlap.end());
            l1.insert(l1.end(), o.l1.begin(), o.l1.end());
            sums.insert(sums.end(), o.sums.begin(), o.sums.end());
            coord_max.insert(coord_max.end(), o.coord_max.begin(), o.coord_max.end());
        }
    }
    if (overlap.empty()) {
        res.warnings.push_back("delocalization: empty index window");
        return res;
    }
    auto below = [](double x) { return x < 1.0; };
    double f_ov = fraction_if(overlap, below);
    double f_l1 = fraction_if(l1, [](double x) { return x >= 0.5 && x <= 1.5; });
    double f_sum = fraction_if(sums, below);
    res.summary["fraction_overlap_below_N^0.2"] = f_ov;
    res.summary["fraction_l1_in_window"] = f_l1;
    res.summary["median_l1_over_sqrtN"] = median(l1);
    res.summary["fraction_abs_sum_below_N^0.2"] = f_sum;
    res.summary["fraction_coordinate_max_below_N^0.2"] = fraction_if(coord_max, below);
    res.checks.push_back({"overlap", f_ov >= 0.95, "fraction " + detail::fmt(f_ov) + " below N^0.2"});
    res.checks.push_back({"l1_window", f_l1 >= 0.95, "fraction " + detail::fmt(f_l1) + " in [0.5, 1.5]"});
    res.checks.push_back({"abs_sum", f_sum >= 0.95, "fraction " + detail::fmt(f_sum) + " below N^0.2"});
    return res;
}

// ---------------------------------------------------------------- fluctuation averaging

// Z_mu = -1/R_mumu - z - (z~/N) tr G^[mu] for every column mu, using
// tr R^[mu] over survivors = tr R - (R^2)_mumu / R_mumu and tr G^[mu] = tr R^[mu] - 1/z + (N - M)/z.
inline Eigen::VectorXcd column_fluctuations(const Spectrum& sp, cplx z, long M) {
    long N = sp.dim();
    Eigen::VectorXcd r1 = sp.resolvent_weights(z, 1), r2 = sp.resolvent_weights(z, 2);
    Eigen::VectorXcd Rd = sp.diagonal(r1), R2d = sp.diagonal(r2);
    cplx trR = r1.sum();
    double phi = static_cast<double>(M) / static_cast<double>(N);
    cplx zt = z / std::sqrt(phi);
    Eigen::VectorXcd Z(N);
    for (long mu = 0; mu < N; ++mu) {
        cplx trG = trR - R2d(mu) / Rd(mu) - 1.0 / z + static_cast<double>(N - M) / z;
        Z(mu) = -1.0 / Rd(mu) - z - zt / static_cast<double>(N) * trG;
    }
    return Z;
}

inline ExperimentResult experiment_fluctuation_averaging(const ExperimentConfig& c) {
    ExperimentResult res;
    res.experiment = "fluctuation_averaging";
    if (c.ensemble.kind != EnsembleKind::sample_covariance)
        throw invalid_parameter("fluctuation_averaging: needs a sample-covariance ensemble");
    EnsembleSpec s = detail::at_size(c, c.ensemble.N);
    long N = s.N;
    SpectralLaw law = law_of(s);
    auto [lo, hi] = law.edges();
    double E = c.E.empty() ? 0.5 * (lo + hi) : c.E.front();
    std::vector<double> etas = c.eta;
    if (etas.empty()) etas = detail::log_spaced(std::pow(static_cast<double>(N), -0.8), 0.1, 6);
    struct Out {
        std::vector<Row> rows;
        std::vector<double> maxz, avgz;
    };
    auto outs = parallel_map<Out>(static_cast<std::size_t>(c.trials), c.jobs, [&](std::size_t t) {
        Out o;
        Spectrum sp = spectrum_of(s, t, true);
        for (double eta : etas) {
            cplx z(E, eta);
            Eigen::VectorXcd Z = column_fluctuations(sp, z, s.M);
            double mx = Z.cwiseAbs().maxCoeff();
            double av = std::abs(Z.mean());
            o.maxz.push_back(mx);
            o.avgz.push_back(av);
            o.rows.push_back(detail::row(res.experiment, s, t, z, "max_abs_Z", mx));
            o.rows.push_back(detail::row(res.experiment, s, t, z, "abs_avg_Z", av));
            o.rows.push_back(detail::row(res.experiment, s, t, z, "gain", av / mx));
        }
        return o;
    });
    std::vector<std::vector<double>> mx(etas.size()), av(etas.size());
    std::vector<double> gains;
    for (auto& o : outs) {
        for (auto& r : o.rows) res.rows.push_back(std::move(r));
        for (std::size_t i = 0; i < etas.size(); ++i) {
            mx[i].push_back(o.maxz[i]);
            av[i].push_back(o.avgz[i]);
            gains.push_back(o.avgz[i] / o.maxz[i]);
        }
    }
    std::vector<double> neta, mmx, mav;
    for (std::size_t i = 0; i < etas.size(); ++i) {
        neta.push_back(static_cast<double>(N) * etas[i]);
        mmx.push_back(median(mx[i]));
        mav.push_back(median(av[i]));
        if (etas[i] == 1.0)
            res.summary["fraction_avg_below_10_over_N_eta1"] =
                fraction_if(av[i], [&](double x) { return x < 10.0 / static_cast<double>(N); });
    }
    double fg = fraction_if(gains, [](double g) { return g < 1.0; });
    res.summary["fraction_gain_below_1"] = fg;
    res.checks.push_back({"averaging_gain", fg >= 0.9, "fraction " + detail::fmt(fg) + " with |[Z]| < max|Z_mu|"});
    detail::add_fit(res, "max_abs_Z", neta, mmx);
    detail::add_fit(res, "abs_avg_Z", neta, mav);
    auto* a = detail::find_fit(res, "abs_avg_Z");
    auto* b = detail::find_fit(res, "max_abs_Z");
    if (a && b) {
        double gap = a->exponent - b->exponent;
        res.summary["exponent_gap"] = gap;
        res.checks.push_back({"exponent_gap", gap <= -0.3,
                              "avg exponent " + detail::fmt(a->exponent) + " minus max exponent " +
                                  detail::fmt(b->exponent) + " = " + detail::fmt(gap)});
    }
    return res;
}

// ---------------------------------------------------------------- large deviation bounds

inline ExperimentResult experiment_large_deviation(const ExperimentConfig& c) {
    ExperimentResult res;
    res.experiment = "large_deviation";
    const std::string& kind = c.ld_kind;
    if (kind != "linear" && kind != "bilinear" && kind != "offdiag")
        throw invalid_parameter("large_deviation: kind must be linear, bilinear or offdiag");
    std::vector<long> sizes = c.N_ladder;
    if (sizes.empty()) sizes = kind == "linear" ? std::vector<long>{100, 400, 1600, 6400} : std::vector<long>{100, 200, 400, 800};
    DominationSamples dom;
    std::vector<double> clt;
    for (long N : sizes) {
        // deterministic coefficients
        Rng crng = make_rng(c.seed, static_cast<std::uint64_t>(N), Stream::coefficients);
        std::normal_distribution<double> g(0.0, 1.0);
        Eigen::VectorXd b;
        Eigen::MatrixXd B;
        double zeta = 0.0;
        if (kind == "linear") {
            b.resize(N);
            for (long i = 0; i < N; ++i) b(i) = g(crng);
            zeta = b.norm();
        } else if (kind == "bilinear") {
            B.resize(N, N);
            for (long i = 0; i < N; ++i)
                for (long j = 0; j < N; ++j) B(i, j) = g(crng) / static_cast<double>(N);
            zeta = B.norm();
        } else {
            double Nd = static_cast<double>(N);
            zeta = std::sqrt(Nd * (Nd - 1.0)) / Nd;  // a_ij = 1/N off the diagonal
        }
        EnsembleSpec s = c.ensemble;
        s.N = s.M = N;
        auto outs = parallel_map<std::pair<double, Row>>(static_cast<std::size_t>(c.trials), c.jobs, [&](std::size_t t) {
            Rng rng = make_rng(splitmix64(c.seed ^ static_cast<std::uint64_t>(N)), t, Stream::variables);
            EntrySampler draw(c.ensemble.entry);
            Eigen::VectorXcd x(N), y;
            for (long i = 0; i < N; ++i) x(i) = draw(rng);
            double xi = 0.0;
            if (kind == "linear") {
                xi = std::abs(b.cast<cplx>().dot(x));
            } else if (kind == "bilinear") {
                y.resize(N);
                for (long i = 0; i < N; ++i) y(i) = draw(rng);
                xi = std::abs(x.dot(B.cast<cplx>() * y));
            } else {
                cplx sum = x.sum();
                xi = std::abs((std::norm(sum) - x.squaredNorm()) / static_cast<double>(N));
            }
            return std::make_pair(xi, detail::row(res.experiment, s, t, 0.0, kind + "_xi_over_zeta", xi / zeta));
        });
        for (auto& [xi, r] : outs) {
            dom[N].emplace_back(xi, zeta);
            clt.push_back(xi / zeta);
            res.rows.push_back(std::move(r));
        }
    }
    res.summary["fraction_below_N^0.05"] =
        fraction_if(clt, [&](double v) { return v <= std::pow(static_cast<double>(sizes.back()), 0.05); });
    detail::add_verdict(res, "domination", dom, c);
    return res;
}

// ---------------------------------------------------------------- stability of the self-consistent equation

struct StabilityMargins {
    std::vector<double> margin;  // per lattice point, same order as the input
    std::vector<double> delta;   // monotone envelope after the floor
    std::size_t clipped = 0;     // points raised to the N^-2 floor
};

// delta(w) = max over lattice points above w of |D(u)|, floored at N^-2;
// margin = |u - m| sqrt(kappa + eta + delta) / delta.
inline StabilityMargins stability_margins(const std::vector<SpectralPoint>& lattice, const std::vector<cplx>& u,
                                          double phi, long N) {
    if (lattice.size() != u.size()) throw invalid_parameter("stability_margins: size mismatch");
    std::size_t n = lattice.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lattice[a].eta > lattice[b].eta; });
    StabilityMargins out;
    out.margin.assign(n, 0.0);
    out.delta.assign(n, 0.0);
    double floor = std::pow(static_cast<double>(N), -2.0);
    double env = 0.0;
    auto edges = mp_edges(phi);
    for (std::size_t i : order) {
        cplx z = lattice[i].z();
        env = std::max(env, std::abs(stability_operator(u[i], z, phi)));
        double d = env;
        if (d < floor) {
            d = floor;
            ++out.clipped;
        }
        out.delta[i] = d;
        double kappa = edge_distance(z.real(), edges);
        out.margin[i] = std::abs(u[i] - mp_stieltjes(z, phi)) * std::sqrt(kappa + z.imag() + d) / d;
    }
    return out;
}

inline ExperimentResult experiment_stability(const ExperimentConfig& c) {
    ExperimentResult res;
    res.experiment = "stability";
    if (c.ensemble.kind != EnsembleKind::sample_covariance)
        throw invalid_parameter("stability: needs a sample-covariance ensemble");
    EnsembleSpec s = detail::at_size(c, c.ensemble.N);
    auto [lo, hi] = mp_edges(s.phi());
    std::vector<double> Es = c.E.empty() ? std::vector<double>{0.5 * (lo + hi)} : c.E;
    double eta = c.eta.empty() ? 0.01 : c.eta.front();
    std::map<double, std::vector<double>> at_z;
    std::size_t clipped = 0;
    for (double E : Es) {
        auto lattice = lattice_L({E, eta}, c.lattice_spacing);
        auto outs = parallel_map<std::pair<StabilityMargins, std::vector<Row>>>(
            static_cast<std::size_t>(c.trials), c.jobs, [&](std::size_t t) {
                Spectrum sp = spectrum_of(s, t, false);
                std::vector<cplx> u;
                for (auto& w : lattice) u.push_back(sp.trace(w.z()) / static_cast<double>(s.N));
                auto m = stability_margins(lattice, u, s.phi(), s.N);
                std::vector<Row> rows;
                rows.push_back(detail::row(res.experiment, s, t, lattice[0].z(), "margin", m.margin[0]));
                rows.push_back(detail::row(res.experiment, s, t, lattice[0].z(), "margin_max_lattice",
                                           *std::max_element(m.margin.begin(), m.margin.end())));
                return std::make_pair(std::move(m), std::move(rows));
            });
        for (auto& [m, rows] : outs) {
            at_z[E].push_back(m.margin[0]);
            clipped += m.clipped;
            for (auto& r : rows) res.rows.push_back(std::move(r));
        }
    }
    if (clipped) res.warnings.push_back("stability: " + std::to_string(clipped) + " lattice points clipped to the N^-2 floor");
    bool ok = true;
    std::string msg;
    for (auto& [E, v] : at_z) {
        double f = fraction_if(v, [](double x) { return x <= 100.0; });
        res.summary["median_margin_E" + detail::fmt(E)] = median(v);
        res.summary["fraction_margin_le_100_E" + detail::fmt(E)] = f;
        ok = ok && f >= 0.9;
        msg += "E=" + detail::fmt(E) + ": " + detail::fmt(f) + " ";
    }
    res.checks.push_back({"margin_le_100", ok, msg});
    return res;
}

// ---------------------------------------------------------------- dispatch

inline ExperimentResult run_experiment(const ExperimentConfig& c) {
    if (c.trials < 1) throw invalid_parameter("trials must be at least 1");
    const std::string& id = c.experiment;
    if (id == "isotropic") return experiment_isotropic(c);
    if (id == "outside") return experiment_outside(c);
    if (id == "entrywise") return experiment_entrywise(c);
    if (id == "rigidity") return experiment_rigidity(c);
    if (id == "delocalization") return experiment_delocalization(c);
    if (id == "fluctuation_averaging") return experiment_fluctuation_averaging(c);
    if (id == "large_deviation") return experiment_large_deviation(c);
    if (id == "stability") return experiment_stability(c);
    std::string valid;
    for (auto& v : experiment_ids()) valid += (valid.empty() ? "" : ", ") + v;
    throw invalid_parameter("unknown experiment '" + id + "'; valid ids: " + valid);
}

}  // namespace locallaw::harness
