#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "locallaw/errors.hpp"

namespace locallaw {

using cplx = std::complex<double>;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream for (master seed, trial, purpose); order of execution never matters.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t trial, std::uint64_t stream) {
    return splitmix64(splitmix64(splitmix64(master) ^ trial) + stream);
}

enum class Stream : std::uint64_t { matrix = 1, vectors = 2, profile = 3, coefficients = 4, variables = 5 };

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::uint64_t trial, Stream s) {
    return Rng(substream_seed(master, trial, static_cast<std::uint64_t>(s)));
}

enum class EntryDistribution { complex_gaussian, real_gaussian, rademacher, standardized_uniform };

inline const char* to_string(EntryDistribution d) {
    switch (d) {
        case EntryDistribution::complex_gaussian: return "complex-gaussian";
        case EntryDistribution::real_gaussian: return "real-gaussian";
        case EntryDistribution::rademacher: return "rademacher";
        case EntryDistribution::standardized_uniform: return "standardized-uniform";
    }
    return "?";
}

inline EntryDistribution entry_from_string(const std::string& s) {
    if (s == "complex-gaussian" || s == "gaussian") return EntryDistribution::complex_gaussian;
    if (s == "real-gaussian") return EntryDistribution::real_gaussian;
    if (s == "rademacher") return EntryDistribution::rademacher;
    if (s == "standardized-uniform" || s == "uniform") return EntryDistribution::standardized_uniform;
    throw invalid_parameter("unknown entry distribution '" + s +
                            "' (complex-gaussian, real-gaussian, rademacher, standardized-uniform)");
}

inline bool is_real(EntryDistribution d) { return d != EntryDistribution::complex_gaussian; }

// Analytic E|xi|^4 of the standardized law.
inline double fourth_moment(EntryDistribution d) {
    switch (d) {
        case EntryDistribution::complex_gaussian: return 2.0;
        case EntryDistribution::real_gaussian: return 3.0;
        case EntryDistribution::rademacher: return 1.0;
        case EntryDistribution::standardized_uniform: return 9.0 / 5.0;
    }
    return 0.0;
}

// Mean 0, E|xi|^2 = 1.
class EntrySampler {
public:
    explicit EntrySampler(EntryDistribution d) : dist_(d) {}

    cplx operator()(Rng& rng) {
        if (dist_ == EntryDistribution::complex_gaussian) {
            double re = normal_(rng), im = normal_(rng);
            return {re * std::numbers::sqrt2 / 2.0, im * std::numbers::sqrt2 / 2.0};
        }
        return real(rng);
    }

    // real standardized draw; complex-gaussian falls back to a real standard normal
    double real(Rng& rng) {
        switch (dist_) {
            case EntryDistribution::rademacher: return (rng() >> 63) ? 1.0 : -1.0;
            case EntryDistribution::standardized_uniform: return uniform_(rng);
            default: return normal_(rng);
        }
    }

private:
    EntryDistribution dist_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{-std::sqrt(3.0), std::sqrt(3.0)};
};

enum class ProfileMode { strict, relaxed_lower_bound };

struct VarianceProfile {
    Eigen::MatrixXd S;
    ProfileMode mode = ProfileMode::strict;
    double C = 4.0;
    std::string kind = "custom";  // flat | convex-mix | custom
    double t = 0.0;
    std::uint64_t seed = 0;

    long size() const { return S.rows(); }

    // throws invalid_parameter naming the first violated invariant
    void validate() const {
        long n = S.rows();
        if (n == 0 || S.cols() != n) throw invalid_parameter("VarianceProfile: S must be square and nonempty");
        double nd = static_cast<double>(n);
        for (long i = 0; i < n; ++i) {
            double row = 0.0;
            for (long j = 0; j < n; ++j) {
                double s = S(i, j);
                if (!(s >= 0.0)) throw invalid_parameter("VarianceProfile: negative variance");
                if (s != S(j, i)) throw invalid_parameter("VarianceProfile: S not symmetric");
                if (s > C / nd * (1.0 + 1e-12)) throw invalid_parameter("VarianceProfile: entry above C/N");
                if (mode == ProfileMode::strict && s < 1.0 / (C * nd) * (1.0 - 1e-12))
                    throw invalid_parameter("VarianceProfile: entry below 1/(C N)");
                row += s;
            }
            if (std::abs(row - 1.0) > 1e-12) {
                std::ostringstream os;
                os << "VarianceProfile: row " << i << " sums to " << row << " (need 1)";
                throw invalid_parameter(os.str());
            }
        }
    }
};

// flat: S = 1/N. convex-mix: S = ((1-t) + t P)/N with P symmetric, doubly stochastic
// up to the factor N and entries of N-scaled P in [1/2, 3/2].
inline VarianceProfile build_profile(const std::string& kind, double t, long N, std::uint64_t seed = 0) {
    if (N <= 0) throw invalid_parameter("build_profile: N must be positive");
    if (!(t >= 0.0 && t < 1.0)) throw invalid_parameter("build_profile: t must lie in [0, 1)");
    VarianceProfile p;
    p.kind = kind;
    p.t = t;
    p.seed = seed;
    double nd = static_cast<double>(N);
    if (kind == "flat") {
        p.S = Eigen::MatrixXd::Constant(N, N, 1.0 / nd);
        return p;
    }
    if (kind != "convex-mix") throw invalid_parameter("build_profile: kind must be flat or convex-mix");
    Rng rng = make_rng(seed, 0, Stream::profile);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd B(N, N);
    for (long i = 0; i < N; ++i)
        for (long j = i; j < N; ++j) B(i, j) = B(j, i) = u(rng);
    // double centring: zero row and column sums, symmetry preserved
    Eigen::VectorXd r = B.rowwise().mean();
    double g = r.mean();
    for (long i = 0; i < N; ++i)
        for (long j = 0; j < N; ++j) B(i, j) = B(i, j) - r(i) - r(j) + g;
    double mx = B.cwiseAbs().maxCoeff();
    if (mx > 0.0) B *= 0.5 / mx;
    p.S.resize(N, N);
    for (long i = 0; i < N; ++i)
        for (long j = 0; j < N; ++j) p.S(i, j) = ((1.0 - t) + t * (1.0 + B(i, j))) / nd;
    for (long i = 0; i < N; ++i)
        for (long j = i + 1; j < N; ++j) p.S(j, i) = p.S(i, j);
    // absorb rounding so rows sum to 1 at machine precision; the diagonal stays symmetric-safe
    for (long i = 0; i < N; ++i) p.S(i, i) += 1.0 - p.S.row(i).sum();
    return p;
}

enum class EnsembleKind { sample_covariance, generalized_wigner };

inline const char* to_string(EnsembleKind k) {
    return k == EnsembleKind::sample_covariance ? "sample-covariance" : "generalized-wigner";
}

struct EnsembleSpec {
    EnsembleKind kind = EnsembleKind::sample_covariance;
    long M = 1;
    long N = 1;
    EntryDistribution entry = EntryDistribution::complex_gaussian;
    std::optional<VarianceProfile> profile;
    std::uint64_t seed = 0;
    long max_entries = 1L << 26;

    double phi() const { return static_cast<double>(M) / static_cast<double>(N); }
    // standard deviation of each sample-covariance entry: (NM)^{-1/4}
    double entry_scale() const { return 1.0 / std::sqrt(std::sqrt(static_cast<double>(N) * static_cast<double>(M))); }
};

namespace detail {

inline void check_budget(const EnsembleSpec& s, long rows, long cols) {
    if (rows <= 0 || cols <= 0) throw invalid_parameter("ensemble: dimensions must be positive");
    if (static_cast<double>(rows) * static_cast<double>(cols) > static_cast<double>(s.max_entries))
        throw resource_error("ensemble: matrix exceeds the configured entry budget");
}

}  // namespace detail

// X is M x N; E|X_{i mu}|^2 = 1/sqrt(NM).
inline Eigen::MatrixXcd sample_covariance(const EnsembleSpec& spec, std::uint64_t trial = 0) {
    if (spec.kind != EnsembleKind::sample_covariance)
        throw invalid_parameter("sample_covariance: spec kind is not sample-covariance");
    detail::check_budget(spec, spec.M, spec.N);
    Rng rng = make_rng(spec.seed, trial, Stream::matrix);
    EntrySampler draw(spec.entry);
    double sc = spec.entry_scale();
    Eigen::MatrixXcd X(spec.M, spec.N);
    for (long j = 0; j < spec.N; ++j)
        for (long i = 0; i < spec.M; ++i) X(i, j) = sc * draw(rng);
    return X;
}

// Same draws as sample_covariance for real entry laws, stored as real.
inline Eigen::MatrixXd sample_covariance_real(const EnsembleSpec& spec, std::uint64_t trial = 0) {
    if (!is_real(spec.entry)) throw precondition_error("sample_covariance_real: entry law is complex");
    if (spec.kind != EnsembleKind::sample_covariance)
        throw invalid_parameter("sample_covariance: spec kind is not sample-covariance");
    detail::check_budget(spec, spec.M, spec.N);
    Rng rng = make_rng(spec.seed, trial, Stream::matrix);
    EntrySampler draw(spec.entry);
    double sc = spec.entry_scale();
    Eigen::MatrixXd X(spec.M, spec.N);
    for (long j = 0; j < spec.N; ++j)
        for (long i = 0; i < spec.M; ++i) X(i, j) = sc * draw.real(rng);
    return X;
}

namespace detail {

inline const VarianceProfile& wigner_profile(const EnsembleSpec& spec) {
    if (spec.kind != EnsembleKind::generalized_wigner)
        throw invalid_parameter("generalized_wigner: spec kind is not generalized-wigner");
    if (!spec.profile) throw invalid_parameter("generalized_wigner: missing variance profile");
    if (spec.profile->size() != spec.N) throw invalid_parameter("generalized_wigner: profile size != N");
    spec.profile->validate();
    check_budget(spec, spec.N, spec.N);
    return *spec.profile;
}

}  // namespace detail

// Hermitian H with Var(H_ij) = S_ij; diagonal entries real and centred.
inline Eigen::MatrixXcd generalized_wigner(const EnsembleSpec& spec, std::uint64_t trial = 0) {
    const auto& prof = detail::wigner_profile(spec);
    Rng rng = make_rng(spec.seed, trial, Stream::matrix);
    EntrySampler draw(spec.entry);
    long n = spec.N;
    Eigen::MatrixXcd H(n, n);
    for (long i = 0; i < n; ++i) {
        H(i, i) = std::sqrt(prof.S(i, i)) * draw.real(rng);
        for (long j = i + 1; j < n; ++j) {
            cplx h = std::sqrt(prof.S(i, j)) * draw(rng);
            H(i, j) = h;
            H(j, i) = std::conj(h);
        }
    }
    return H;
}

inline Eigen::MatrixXd generalized_wigner_real(const EnsembleSpec& spec, std::uint64_t trial = 0) {
    if (!is_real(spec.entry)) throw precondition_error("generalized_wigner_real: entry law is complex");
    const auto& prof = detail::wigner_profile(spec);
    Rng rng = make_rng(spec.seed, trial, Stream::matrix);
    EntrySampler draw(spec.entry);
    long n = spec.N;
    Eigen::MatrixXd H(n, n);
    for (long i = 0; i < n; ++i) {
        H(i, i) = std::sqrt(prof.S(i, i)) * draw.real(rng);
        for (long j = i + 1; j < n; ++j) H(i, j) = H(j, i) = std::sqrt(prof.S(i, j)) * draw.real(rng);
    }
    return H;
}

// Key set: kind, M, N, entry, profile, profile_t, profile_seed, seed.
inline std::string to_config(const EnsembleSpec& s) {
    std::ostringstream os;
    os << "kind = " << to_string(s.kind) << "\n";
    os << "M = " << s.M << "\n";
    os << "N = " << s.N << "\n";
    os << "entry = " << to_string(s.entry) << "\n";
    if (s.profile) {
        os << "profile = " << s.profile->kind << "\n";
        os << "profile_t = " << s.profile->t << "\n";
        os << "profile_seed = " << s.profile->seed << "\n";
    }
    os << "seed = " << s.seed << "\n";
    return os.str();
}

inline EnsembleSpec ensemble_from_config(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& k, const std::string& def) {
        auto it = kv.find(k);
        return it == kv.end() ? def : it->second;
    };
    EnsembleSpec s;
    std::string kind = get("kind", "sample-covariance");
    if (kind == "sample-covariance") s.kind = EnsembleKind::sample_covariance;
    else if (kind == "generalized-wigner") s.kind = EnsembleKind::generalized_wigner;
    else throw invalid_parameter("kind: expected sample-covariance or generalized-wigner, got '" + kind + "'");
    s.N = std::stol(get("N", "100"));
    s.M = std::stol(get("M", std::to_string(s.N)));
    s.entry = entry_from_string(get("entry", "complex-gaussian"));
    s.seed = std::stoull(get("seed", "0"));
    if (s.kind == EnsembleKind::generalized_wigner) {
        s.M = s.N;
        s.profile = build_profile(get("profile", "flat"), std::stod(get("profile_t", "0")), s.N,
                                  std::stoull(get("profile_seed", "0")));
    }
    return s;
}

}  // namespace locallaw
