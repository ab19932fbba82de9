#pragma once

// Statistics plumbing for the Monte Carlo experiments: output rows, power-law fits,
// the exceedance-fraction test for stochastic domination, trial spectra, test vectors,
// and a deterministic parallel map.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "locallaw/ensembles.hpp"
#include "locallaw/errors.hpp"
#include "locallaw/resolvent.hpp"
#include "locallaw/spectral_laws.hpp"

namespace locallaw::harness {

// One measured value. Columns of the CSV output, in this order.
struct Row {
    std::string experiment;
    std::uint64_t seed = 0;
    long N = 0;
    long M = 0;
    double phi = 1.0;
    cplx z = 0.0;
    std::string metric;
    double value = 0.0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw invalid_parameter("median of an empty sample");
    auto mid = v.begin() + static_cast<long>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double hi = *mid;
    if (v.size() % 2) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

inline double fraction_if(const std::vector<double>& v, const std::function<bool(double)>& pred) {
    if (v.empty()) return 0.0;
    return static_cast<double>(std::count_if(v.begin(), v.end(), pred)) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------- fits

struct ScalingFit {
    double exponent = 0.0;
    double intercept = 0.0;
    double stderr_ = 0.0;
    std::vector<std::pair<double, double>> points;  // (log x, log y)
};

// OLS of log y on log x.
inline ScalingFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y, std::size_t min_points = 4) {
    if (x.size() != y.size()) throw invalid_parameter("fit_power_law: size mismatch");
    if (x.size() < min_points) throw invalid_parameter("fit_power_law: need at least " + std::to_string(min_points) + " points");
    ScalingFit f;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(x[i]) || !std::isfinite(y[i]))
            throw invalid_parameter("fit_power_law: values must be positive and finite");
        f.points.emplace_back(std::log(x[i]), std::log(y[i]));
    }
    double n = static_cast<double>(f.points.size()), mx = 0, my = 0;
    for (auto [a, b] : f.points) {
        mx += a;
        my += b;
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (auto [a, b] : f.points) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if (sxx == 0.0) throw invalid_parameter("fit_power_law: x values are all equal");
    f.exponent = sxy / sxx;
    f.intercept = my - f.exponent * mx;
    double ssr = 0;
    for (auto [a, b] : f.points) {
        double r = b - f.intercept - f.exponent * a;
        ssr += r * r;
    }
    f.stderr_ = f.points.size() > 2 ? std::sqrt(ssr / (n - 2.0) / sxx) : 0.0;
    return f;
}

// ---------------------------------------------------------------- domination

struct DominationVerdict {
    std::vector<double> eps;
    std::vector<long> Ns;
    std::vector<std::vector<double>> fraction;  // [eps][N]
    std::vector<std::vector<long>> trials;      // [eps][N]
    std::vector<bool> per_eps;
    double tail = 0.1;
    bool consistent = true;
};

using DominationSamples = std::map<long, std::vector<std::pair<double, double>>>;  // N -> (xi, zeta)

// xi < N^eps zeta with an exceedance fraction that does not grow with N (pooled two-proportion
// z-statistic <= 2 between consecutive N) and that is below `tail` at the largest N.
inline DominationVerdict estimate_domination(const DominationSamples& samples, const std::vector<double>& eps_grid,
                                             double tail = 0.1) {
    if (samples.size() < 3) throw invalid_parameter("estimate_domination: need at least 3 distinct N");
    for (auto& [N, s] : samples)
        if (s.size() < 20) throw invalid_parameter("estimate_domination: need at least 20 trials per N");
    if (eps_grid.empty()) throw invalid_parameter("estimate_domination: empty eps grid");
    DominationVerdict v;
    v.eps = eps_grid;
    v.tail = tail;
    for (auto& [N, s] : samples) v.Ns.push_back(N);
    for (double eps : eps_grid) {
        std::vector<double> fr;
        std::vector<long> ns;
        for (auto& [N, s] : samples) {
            double bound = std::pow(static_cast<double>(N), eps);
            long hits = 0;
            for (auto [xi, zeta] : s)
                if (xi > bound * zeta) ++hits;
            fr.push_back(static_cast<double>(hits) / static_cast<double>(s.size()));
            ns.push_back(static_cast<long>(s.size()));
        }
        bool ok = fr.back() <= tail;
        for (std::size_t i = 0; i + 1 < fr.size(); ++i) {
            double n1 = static_cast<double>(ns[i]), n2 = static_cast<double>(ns[i + 1]);
            double p = (fr[i] * n1 + fr[i + 1] * n2) / (n1 + n2);
            double sd = std::sqrt(p * (1.0 - p) * (1.0 / n1 + 1.0 / n2));
            double diff = fr[i + 1] - fr[i];
            if (sd == 0.0 ? diff > 0.0 : diff / sd > 2.0) ok = false;
        }
        v.fraction.push_back(fr);
        v.trials.push_back(ns);
        v.per_eps.push_back(ok);
        v.consistent = v.consistent && ok;
    }
    return v;
}

// ---------------------------------------------------------------- spectra

inline SpectralLaw law_of(const EnsembleSpec& s) {
    return s.kind == EnsembleKind::generalized_wigner ? SpectralLaw::sc() : SpectralLaw::mp(s.phi());
}

// Eigen-decomposition of X*X (sample covariance) or H (Wigner), the N x N side.
struct Spectrum {
    Eigen::VectorXd values;  // ascending
    Eigen::MatrixXd Ur;      // real eigenvectors, or
    Eigen::MatrixXcd Uc;     // complex ones
    bool real = true;

    long dim() const { return values.size(); }
    bool has_vectors() const { return real ? Ur.size() > 0 : Uc.size() > 0; }

    Eigen::MatrixXcd project(const Eigen::MatrixXcd& V) const {
        if (real) {
            Eigen::MatrixXcd out(dim(), V.cols());
            out.real() = Ur.transpose() * V.real();
            out.imag() = Ur.transpose() * V.imag();
            return out;
        }
        return Uc.adjoint() * V;
    }

    Eigen::VectorXd weights_of(long k) const {  // |u_k(i)|^2 over i
        return real ? Eigen::VectorXd(Ur.col(k).cwiseAbs2()) : Eigen::VectorXd(Uc.col(k).cwiseAbs2());
    }

    Eigen::VectorXcd eigenvector(long k) const {
        return real ? Eigen::VectorXcd(Ur.col(k).cast<cplx>()) : Eigen::VectorXcd(Uc.col(k));
    }

    // diagonal of sum_k |u_k|^2 f(lambda_k)
    Eigen::VectorXcd diagonal(const Eigen::VectorXcd& f) const {
        Eigen::VectorXcd out(dim());
        if (real) {
            Eigen::MatrixXd W = Ur.cwiseAbs2();
            out.real() = W * f.real();
            out.imag() = W * f.imag();
        } else {
            Eigen::MatrixXd W = Uc.cwiseAbs2();
            out.real() = W * f.real();
            out.imag() = W * f.imag();
        }
        return out;
    }

    Eigen::VectorXcd resolvent_weights(cplx z, int power = 1) const {
        Eigen::VectorXcd r(dim());
        for (long k = 0; k < dim(); ++k) r(k) = std::pow(1.0 / (values(k) - z), power);
        return r;
    }

    cplx trace(cplx z) const {
        cplx s = 0.0;
        for (long k = 0; k < dim(); ++k) s += 1.0 / (values(k) - z);
        return s;
    }

    Eigen::MatrixXcd resolvent(cplx z) const {
        Eigen::VectorXcd r = resolvent_weights(z);
        if (real) {
            Eigen::MatrixXcd U = Ur.cast<cplx>();
            return U * r.asDiagonal() * U.transpose();
        }
        return Uc * r.asDiagonal() * Uc.adjoint();
    }
};

inline Spectrum spectrum_of(const EnsembleSpec& s, std::uint64_t trial, bool vectors) {
    Spectrum sp;
    sp.real = is_real(s.entry);
    bool cov = s.kind == EnsembleKind::sample_covariance;
    if (sp.real) {
        Eigen::MatrixXd A = cov ? gram_right(sample_covariance_real(s, trial)) : generalized_wigner_real(s, trial);
        if (vectors) {
            auto d = decompose_trusted<double>(std::move(A));
            sp.values = std::move(d.eigenvalues);
            sp.Ur = std::move(d.eigenvectors);
        } else {
            sp.values = eigenvalues_only<double>(std::move(A));
        }
    } else {
        Eigen::MatrixXcd A = cov ? gram_right(sample_covariance(s, trial)) : generalized_wigner(s, trial);
        if (vectors) {
            auto d = decompose_trusted<cplx>(std::move(A));
            sp.values = std::move(d.eigenvalues);
            sp.Uc = std::move(d.eigenvectors);
        } else {
            sp.values = eigenvalues_only<cplx>(std::move(A));
        }
    }
    return sp;
}

// ---------------------------------------------------------------- test vectors

struct VectorPair {
    std::string family;
    Eigen::VectorXcd v, w;
};

// Fixed before any matrix is sampled; depends only on (N, seed).
inline std::vector<VectorPair> vector_families(long N, std::uint64_t seed, long sparse_k = 4) {
    if (N < 2) throw invalid_parameter("vector_families: need N >= 2");
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(N), Stream::vectors);
    std::normal_distribution<double> g(0.0, 1.0);
    auto unit = [](Eigen::VectorXcd x) { return Eigen::VectorXcd(x / x.norm()); };
    auto gaussian = [&](long n) {
        Eigen::VectorXcd x(n);
        for (long i = 0; i < n; ++i) x(i) = cplx(g(rng), g(rng));
        return x;
    };
    std::vector<VectorPair> out;
    Eigen::VectorXcd e1 = Eigen::VectorXcd::Zero(N), e2 = Eigen::VectorXcd::Zero(N);
    e1(0) = 1.0;
    e2(1) = 1.0;
    out.push_back({"coordinate-offdiag", e1, e2});
    out.push_back({"coordinate-diag", e1, e1});
    out.push_back({"random", unit(gaussian(N)), unit(gaussian(N))});
    long k = std::min(sparse_k, N);
    Eigen::VectorXcd s1 = Eigen::VectorXcd::Zero(N), s2 = Eigen::VectorXcd::Zero(N);
    s1.head(k) = gaussian(k);
    s2.segment(N - k, k) = gaussian(k);
    s2.head(1) = gaussian(1);  // supports share the first coordinate only (N >= 2k)
    out.push_back({"sparse", unit(s1), unit(s2)});
    Eigen::VectorXcd flat = Eigen::VectorXcd::Constant(N, 1.0 / std::sqrt(static_cast<double>(N)));
    out.push_back({"flat", flat, flat});
    return out;
}

// ---------------------------------------------------------------- parallel map

inline int default_jobs() {
    if (const char* env = std::getenv("LOCALLAW_JOBS")) {
        int j = std::atoi(env);
        if (j > 0) return j;
    }
    return 1;
}

// Results are stored by index, so the output does not depend on scheduling.
template <class T>
std::vector<T> parallel_map(std::size_t n, int jobs, const std::function<T(std::size_t)>& fn) {
    std::vector<T> out(n);
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto worker = [&] {
        for (std::size_t i; (i = next++) < n;) {
            try {
                out[i] = fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min<int>(jobs, static_cast<int>(n)); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace locallaw::harness
