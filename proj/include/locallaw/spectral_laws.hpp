#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "locallaw/errors.hpp"

namespace locallaw {

using cplx = std::complex<double>;

struct AspectRatio {
    long M = 1;
    long N = 1;

    AspectRatio() = default;
    AspectRatio(long m, long n) : M(m), N(n) {
        if (m <= 0 || n <= 0) throw invalid_parameter("AspectRatio: M and N must be positive");
    }

    double phi() const { return static_cast<double>(M) / static_cast<double>(N); }
    long K() const { return std::min(M, N); }

    // N^{1/C} <= M <= N^C
    bool within_polynomial_bound(double C) const {
        double lm = std::log(static_cast<double>(M)), ln = std::log(static_cast<double>(N));
        return lm <= C * ln + 1e-12 && ln <= C * lm + 1e-12;
    }
};

struct SpectralPoint {
    double E = 0.0;
    double eta = 0.0;

    cplx z() const { return {E, eta}; }
    static SpectralPoint from(cplx z) { return {z.real(), z.imag()}; }
};

inline std::pair<double, double> mp_edges(double phi) {
    if (!(phi > 0.0)) throw invalid_parameter("mp_edges: phi must be positive");
    double s = std::sqrt(phi) + 1.0 / std::sqrt(phi);
    // for phi = 1 the lower edge is 0 up to rounding; clamp so that gamma_- >= 0
    return {std::max(0.0, s - 2.0), s + 2.0};
}

inline double edge_distance(double E, std::pair<double, double> edges) {
    return std::min(std::abs(edges.second - E), std::abs(edges.first - E));
}

// (continuous density at x, atom mass at 0)
inline std::pair<double, double> mp_density(double x, double phi) {
    auto [lo, hi] = mp_edges(phi);
    double atom = std::max(0.0, 1.0 - phi);
    if (x <= lo || x >= hi || x <= 0.0) return {0.0, atom};
    double d = std::sqrt(phi) / (2.0 * std::numbers::pi) * std::sqrt((x - lo) * (hi - x)) / x;
    return {d, atom};
}

inline double sc_density(double x) {
    if (std::abs(x) >= 2.0) return 0.0;
    return std::sqrt(4.0 - x * x) / (2.0 * std::numbers::pi);
}

namespace detail {

inline void require_upper_half(cplx z, const char* who) {
    if (z.imag() < 0.0 || std::isnan(z.imag()) || std::isnan(z.real()))
        throw invalid_parameter(std::string(who) + ": need Im z >= 0");
}

// Root of a*m^2 + b*m + 1 = 0 continuing analytically off [lo, hi], computed
// without cancellation. sq = sqrt(z-lo)*sqrt(z-hi) with principal roots has its
// cut exactly on [lo, hi] and behaves like z at infinity.
inline cplx decaying_root(cplx a, cplx b, cplx sq) {
    cplx plus = -b + sq;
    cplx minus = -b - sq;
    if (std::abs(plus) >= std::abs(minus)) return plus / (2.0 * a);
    // product of the two roots is 1/a
    return 2.0 / minus;
}

}  // namespace detail

inline cplx mp_stieltjes(cplx z, double phi) {
    detail::require_upper_half(z, "mp_stieltjes");
    auto [lo, hi] = mp_edges(phi);
    if (z == cplx(0.0)) throw invalid_parameter("mp_stieltjes: z = 0");
    if (z.imag() == 0.0 && z.real() >= lo && z.real() <= hi)
        throw branch_undefined("mp_stieltjes: eta = 0 inside [gamma_-, gamma_+]");
    double sp = std::sqrt(phi);
    cplx a = z / sp;
    cplx b = z - sp + 1.0 / sp;
    cplx sq = std::sqrt(z - lo) * std::sqrt(z - hi);
    cplx m = detail::decaying_root(a, b, sq);
    // one Newton step on the quadratic cleans up rounding near the edges
    cplx f = a * m * m + b * m + 1.0;
    cplx df = 2.0 * a * m + b;
    if (std::abs(df) > 1e-8 * (std::abs(a) + std::abs(b))) m -= f / df;
    return m;
}

inline cplx mp_stieltjes(SpectralPoint p, double phi) { return mp_stieltjes(p.z(), phi); }

inline cplx mp_stieltjes_dual(cplx z, double phi) {
    if (z == cplx(0.0)) throw invalid_parameter("mp_stieltjes_dual: z = 0");
    return (mp_stieltjes(z, phi) + (1.0 - phi) / z) / phi;
}

inline cplx sc_stieltjes(cplx z) {
    detail::require_upper_half(z, "sc_stieltjes");
    if (z.imag() == 0.0 && std::abs(z.real()) <= 2.0)
        throw branch_undefined("sc_stieltjes: eta = 0 inside [-2, 2]");
    cplx sq = std::sqrt(z - 2.0) * std::sqrt(z + 2.0);
    cplx m = detail::decaying_root(cplx(1.0), z, sq);
    cplx f = m * m + z * m + 1.0;
    cplx df = 2.0 * m + z;
    if (std::abs(df) > 1e-8 * (1.0 + std::abs(z))) m -= f / df;
    return m;
}

inline double psi_from(double im_m, long N, double eta) {
    double ne = static_cast<double>(N) * eta;
    return std::sqrt(im_m / ne) + 1.0 / ne;
}

enum class DomainKind { S, S_tilde, S_W, S_tilde_W };

inline const char* to_string(DomainKind k) {
    switch (k) {
        case DomainKind::S: return "S";
        case DomainKind::S_tilde: return "S_tilde";
        case DomainKind::S_W: return "S_W";
        case DomainKind::S_tilde_W: return "S_tilde_W";
    }
    return "?";
}

struct DomainSpec {
    double omega = 0.1;
    long K = 1;
    DomainKind kind = DomainKind::S;
    double phi = 1.0;  // edges for S and S_tilde

    DomainSpec() = default;
    DomainSpec(double om, long k, DomainKind kd, double ph = 1.0) : omega(om), K(k), kind(kd), phi(ph) {
        if (!(om > 0.0 && om < 1.0)) throw invalid_parameter("DomainSpec: omega must lie in (0,1)");
        if (k <= 0) throw invalid_parameter("DomainSpec: K must be positive");
        if (!(ph > 0.0)) throw invalid_parameter("DomainSpec: phi must be positive");
    }

    std::pair<double, double> edges() const {
        if (kind == DomainKind::S_W || kind == DomainKind::S_tilde_W) return {-2.0, 2.0};
        return mp_edges(phi);
    }

    // eta = 0 is admitted for the outside domains only when asked (outside-spectrum evaluation)
    bool contains(cplx z, bool admit_real_axis = false) const {
        double E = z.real(), eta = z.imag();
        double Kd = static_cast<double>(K);
        double inv = 1.0 / omega;
        switch (kind) {
            case DomainKind::S: {
                double kappa = edge_distance(E, mp_edges(phi));
                return kappa <= inv && eta >= std::pow(Kd, -1.0 + omega) && eta <= inv && std::abs(z) >= omega;
            }
            case DomainKind::S_tilde: {
                auto e = mp_edges(phi);
                if (E >= e.first && E <= e.second) return false;
                double kappa = edge_distance(E, e);
                bool eta_ok = admit_real_axis ? eta >= 0.0 : eta > 0.0;
                return kappa >= std::pow(Kd, -2.0 / 3.0 + omega) && kappa <= inv && std::abs(z) >= omega &&
                       eta_ok && eta <= inv;
            }
            case DomainKind::S_W:
                return std::abs(E) <= inv && eta >= std::pow(Kd, -1.0 + omega) && eta <= inv;
            case DomainKind::S_tilde_W: {
                bool eta_ok = admit_real_axis ? eta >= 0.0 : eta > 0.0;
                return std::abs(E) >= 2.0 + std::pow(Kd, -2.0 / 3.0 + omega) && std::abs(E) <= inv && eta_ok &&
                       eta <= inv;
            }
        }
        return false;
    }
};

struct LawEvaluation {
    cplx m;
    double im_m = 0.0;
    double kappa = 0.0;
    double psi = 0.0;
    std::pair<double, double> edges;
};

inline LawEvaluation evaluate_mp(cplx z, double phi, long N) {
    if (!(z.imag() > 0.0)) throw invalid_parameter("evaluate_mp: need eta > 0");
    LawEvaluation r;
    r.edges = mp_edges(phi);
    r.m = mp_stieltjes(z, phi);
    r.im_m = r.m.imag();
    r.kappa = edge_distance(z.real(), r.edges);
    r.psi = psi_from(r.im_m, N, z.imag());
    return r;
}

inline double control_psi(cplx z, double phi, long N) {
    if (!(z.imag() > 0.0)) throw invalid_parameter("control_psi: need eta > 0");
    return psi_from(mp_stieltjes(z, phi).imag(), N, z.imag());
}

inline double control_psi(cplx z, double phi, long N, const DomainSpec& domain) {
    if (!domain.contains(z)) throw domain_error("control_psi: z outside the configured domain");
    return control_psi(z, phi, N);
}

struct RescaledParams {
    cplx z_tilde;
    cplx z_hat;
    cplx m_tilde;
};

inline RescaledParams rescaled(cplx z, double phi) {
    double sp = std::sqrt(phi);
    RescaledParams r;
    r.z_tilde = z / sp;
    r.z_hat = z - sp + 1.0 / sp;
    r.m_tilde = (mp_stieltjes(z, phi) + (1.0 - phi) / z) / sp;
    return r;
}

inline cplx stability_operator(cplx u, cplx z, double phi) {
    if (u == cplx(0.0)) throw invalid_parameter("stability_operator: u = 0");
    double sp = std::sqrt(phi);
    return 1.0 / u + (z / sp) * u + (z - sp + 1.0 / sp);
}

// Both solutions of 1/u + z~ u + z^ = shift.
inline std::pair<cplx, cplx> stability_roots(cplx z, double phi, cplx shift = 0.0) {
    double sp = std::sqrt(phi);
    cplx zt = z / sp;
    cplx zh = z - sp + 1.0 / sp;
    cplx lam_root = std::sqrt(1.0 + shift / sp);
    cplx lam_lo = sp + 1.0 / sp + shift - 2.0 * lam_root;
    cplx lam_hi = sp + 1.0 / sp + shift + 2.0 * lam_root;
    cplx disc = cplx(0, 1) * std::sqrt((z - lam_lo) * (lam_hi - z));
    return {(shift - zh + disc) / (2.0 * zt), (shift - zh - disc) / (2.0 * zt)};
}

inline std::vector<SpectralPoint> lattice_L(SpectralPoint z, double spacing) {
    if (!(spacing > 0.0)) throw invalid_parameter("lattice_L: spacing must be positive");
    if (spacing < 1e-6) throw invalid_parameter("lattice_L: spacing below 1e-6");
    std::vector<SpectralPoint> out{z};
    if (z.eta >= 1.0) return out;
    auto first = static_cast<std::int64_t>(std::ceil(z.eta / spacing - 1e-9));
    auto last = static_cast<std::int64_t>(std::floor(1.0 / spacing + 1e-9));
    for (std::int64_t k = std::max<std::int64_t>(first, 1); k <= last; ++k) {
        double eta = static_cast<double>(k) * spacing;
        if (std::abs(eta - z.eta) <= 1e-12 * std::max(1.0, eta)) continue;
        out.push_back({z.E, eta});
    }
    return out;
}

inline double default_lattice_spacing(long N) {
    return std::max(std::pow(static_cast<double>(N), -5.0), 1e-6);
}

namespace detail {

// Density on [lo, hi] in the coordinate x = lo + (hi - lo) sin^2(theta), times dx/dtheta.
// Smooth on [0, pi/2] even when the x-density has an inverse square root at lo.
struct ThetaDensity {
    double lo, hi, scale;
    bool semicircle;

    double operator()(double t) const {
        double s = std::sin(t), c = std::cos(t);
        double w = hi - lo;
        double base = 2.0 * w * w * s * s * c * c;  // sqrt((x-lo)(hi-x)) dx/dtheta
        if (semicircle) return base / (2.0 * std::numbers::pi);
        double x = lo + w * s * s;
        return scale * base / x;
    }

    double x_of(double t) const {
        double s = std::sin(t);
        return lo + (hi - lo) * s * s;
    }

    double mass_above(double t) const {
        if (t >= std::numbers::pi / 2) return 0.0;
        return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(*this, t, std::numbers::pi / 2, 15,
                                                                             1e-13);
    }
};

inline ThetaDensity mp_theta_density(double phi) {
    auto [lo, hi] = mp_edges(phi);
    return {lo, hi, std::sqrt(phi) / (2.0 * std::numbers::pi), false};
}

inline ThetaDensity sc_theta_density() { return {-2.0, 2.0, 1.0, true}; }

inline std::vector<double> quantiles_above(const ThetaDensity& f, double continuous_mass, long N,
                                           const std::vector<long>& alphas) {
    std::vector<double> out;
    out.reserve(alphas.size());
    for (long a : alphas) {
        double target = static_cast<double>(a) / static_cast<double>(N);
        if (target >= continuous_mass - 1e-14) {
            out.push_back(f.lo);
            continue;
        }
        auto h = [&](double t) { return f.mass_above(t) - target; };
        std::uintmax_t iters = 200;
        auto tol = [](double l, double r) { return std::abs(r - l) <= 1e-15; };
        auto [l, r] = boost::math::tools::toms748_solve(h, 0.0, std::numbers::pi / 2, h(0.0), -target, tol, iters);
        out.push_back(f.x_of(0.5 * (l + r)));
    }
    return out;
}

}  // namespace detail

// gamma_alpha with mass alpha/N above it, for the law of X*X with phi = M/N
inline std::vector<double> classical_locations(long N, long M, const std::vector<long>& alphas) {
    if (N <= 0 || M <= 0) throw invalid_parameter("classical_locations: N, M must be positive");
    long K = std::min(N, M);
    for (long a : alphas)
        if (a < 1 || a > K) throw invalid_parameter("classical_locations: alpha out of range [1, K]");
    double phi = static_cast<double>(M) / static_cast<double>(N);
    return detail::quantiles_above(detail::mp_theta_density(phi), std::min(1.0, phi), N, alphas);
}

inline std::vector<double> sc_classical_locations(long N, const std::vector<long>& alphas) {
    for (long a : alphas)
        if (a < 1 || a > N) throw invalid_parameter("sc_classical_locations: alpha out of range [1, N]");
    return detail::quantiles_above(detail::sc_theta_density(), 1.0, N, alphas);
}

inline double mp_continuous_mass(double phi) {
    return detail::mp_theta_density(phi).mass_above(0.0);
}

// Limiting law used by the harness: MP for X*X or semicircle for Wigner H.
struct SpectralLaw {
    enum class Kind { marchenko_pastur, semicircle };
    Kind kind = Kind::marchenko_pastur;
    double phi = 1.0;

    static SpectralLaw mp(double ph) { return {Kind::marchenko_pastur, ph}; }
    static SpectralLaw sc() { return {Kind::semicircle, 1.0}; }

    cplx stieltjes(cplx z) const { return kind == Kind::semicircle ? sc_stieltjes(z) : mp_stieltjes(z, phi); }
    std::pair<double, double> edges() const {
        return kind == Kind::semicircle ? std::pair<double, double>{-2.0, 2.0} : mp_edges(phi);
    }
    double kappa(double E) const { return edge_distance(E, edges()); }
    // number of nontrivial eigenvalues for an N x N matrix with this law
    std::vector<double> classical(long N, long M, const std::vector<long>& alphas) const {
        return kind == Kind::semicircle ? sc_classical_locations(N, alphas) : classical_locations(N, M, alphas);
    }
};

struct AsymptoticsReport {
    std::size_t checked = 0;
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Factor-10 windows for |m|, the stability factor |1 - z~ m^2| against sqrt(kappa+eta),
// and the two-regime size of Im m.
inline AsymptoticsReport law_asymptotics_check(const std::vector<SpectralPoint>& grid, double phi,
                                               double window = 10.0) {
    AsymptoticsReport rep;
    auto edges = mp_edges(phi);
    auto in_window = [&](double v) { return v >= 1.0 / window && v <= window; };
    for (const auto& p : grid) {
        cplx z = p.z();
        cplx m = mp_stieltjes(z, phi);
        double kappa = edge_distance(p.E, edges);
        double root = std::sqrt(kappa + p.eta);
        bool inside = p.E >= edges.first && p.E <= edges.second;
        double expected_im = inside ? root : p.eta / root;
        double stab = std::abs(1.0 - (z / std::sqrt(phi)) * m * m) / root;
        ++rep.checked;
        auto note = [&](const char* what, double v) {
            std::ostringstream os;
            os << what << " = " << v << " at z = " << p.E << "+" << p.eta << "i, phi = " << phi;
            rep.violations.push_back(os.str());
        };
        if (!in_window(std::abs(m))) note("|m|", std::abs(m));
        if (!in_window(stab)) note("|1 - z~ m^2| / sqrt(kappa+eta)", stab);
        if (!in_window(m.imag() / expected_im)) note("Im m / regime", m.imag() / expected_im);
    }
    return rep;
}

}  // namespace locallaw
