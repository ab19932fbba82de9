#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#ifndef lapack_complex_float
#define lapack_complex_float std::complex<float>
#endif
#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <cblas.h>
#include <lapacke.h>

#include "locallaw/errors.hpp"

namespace locallaw {

using cplx = std::complex<double>;

template <class Scalar>
struct SpectralDecompositionT {
    Eigen::VectorXd eigenvalues;  // ascending
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> eigenvectors;  // columns

    long dim() const { return eigenvalues.size(); }
};

using SpectralDecomposition = SpectralDecompositionT<cplx>;
using RealSpectralDecomposition = SpectralDecompositionT<double>;

namespace detail {

template <class Derived>
void require_hermitian(const Eigen::MatrixBase<Derived>& A) {
    if (A.rows() != A.cols()) throw invalid_parameter("decompose: matrix is not square");
    if (A.size() == 0) return;
    double scale = std::max(1.0, static_cast<double>(A.cwiseAbs().maxCoeff()));
    double asym = (A - A.adjoint()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * scale) throw invalid_parameter("decompose: matrix is not Hermitian");
}

inline void lapack_check(lapack_int info, const char* who) {
    if (info != 0) throw singular_error(std::string(who) + " failed with info = " + std::to_string(info));
}

inline void eigh_inplace(Eigen::MatrixXd& A, Eigen::VectorXd& w, bool vectors) {
    auto n = static_cast<lapack_int>(A.rows());
    w.resize(n);
    if (n == 0) return;
    lapack_check(LAPACKE_dsyevd(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', 'L', n, A.data(), n, w.data()), "dsyevd");
}

inline void eigh_inplace(Eigen::MatrixXcd& A, Eigen::VectorXd& w, bool vectors) {
    auto n = static_cast<lapack_int>(A.rows());
    w.resize(n);
    if (n == 0) return;
    lapack_check(LAPACKE_zheevd(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', 'L', n, A.data(), n, w.data()), "zheevd");
}

}  // namespace detail

template <class Derived>
auto decompose(const Eigen::MatrixBase<Derived>& A) {
    using Scalar = typename Derived::Scalar;
    static_assert(std::is_same_v<Scalar, double> || std::is_same_v<Scalar, cplx>, "decompose: double or complex");
    detail::require_hermitian(A);
    SpectralDecompositionT<Scalar> d;
    d.eigenvectors = A;
    detail::eigh_inplace(d.eigenvectors, d.eigenvalues, true);
    return d;
}

// Skips the Hermitian check; the caller built A as a Gram matrix.
template <class Scalar>
SpectralDecompositionT<Scalar> decompose_trusted(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> A) {
    SpectralDecompositionT<Scalar> d;
    d.eigenvectors = std::move(A);
    detail::eigh_inplace(d.eigenvectors, d.eigenvalues, true);
    return d;
}

template <class Scalar>
Eigen::VectorXd eigenvalues_only(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> A) {
    Eigen::VectorXd w;
    detail::eigh_inplace(A, w, false);
    return w;
}

// X^* X (cols x cols), full storage
inline Eigen::MatrixXd gram_right(const Eigen::MatrixXd& X) {
    auto n = static_cast<int>(X.cols()), k = static_cast<int>(X.rows());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    if (n == 0) return A;
    cblas_dsyrk(CblasColMajor, CblasLower, CblasTrans, n, k, 1.0, X.data(), std::max(1, k), 0.0, A.data(), n);
    A.triangularView<Eigen::StrictlyUpper>() = A.transpose();
    return A;
}

inline Eigen::MatrixXcd gram_right(const Eigen::MatrixXcd& X) {
    auto n = static_cast<int>(X.cols()), k = static_cast<int>(X.rows());
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(n, n);
    if (n == 0) return A;
    cblas_zherk(CblasColMajor, CblasLower, CblasConjTrans, n, k, 1.0, X.data(), std::max(1, k), 0.0, A.data(), n);
    A.triangularView<Eigen::StrictlyUpper>() = A.adjoint();
    return A;
}

// X X^* (rows x rows)
inline Eigen::MatrixXd gram_left(const Eigen::MatrixXd& X) { return gram_right(Eigen::MatrixXd(X.transpose())); }
inline Eigen::MatrixXcd gram_left(const Eigen::MatrixXcd& X) { return gram_right(Eigen::MatrixXcd(X.adjoint())); }

namespace detail {

template <class Scalar>
void require_regular(const SpectralDecompositionT<Scalar>& d, cplx z) {
    if (z.imag() > 0.0) return;
    if (z.imag() < 0.0) throw invalid_parameter("resolvent: need Im z >= 0");
    for (long k = 0; k < d.dim(); ++k)
        if (d.eigenvalues(k) == z.real()) throw singular_error("resolvent: z equals an eigenvalue with eta = 0");
}

template <class Scalar>
Eigen::VectorXcd resolvent_weights(const SpectralDecompositionT<Scalar>& d, cplx z) {
    require_regular(d, z);
    Eigen::VectorXcd r(d.dim());
    for (long k = 0; k < d.dim(); ++k) r(k) = 1.0 / (d.eigenvalues(k) - z);
    return r;
}

}  // namespace detail

// U^* v
template <class Scalar>
Eigen::VectorXcd project(const SpectralDecompositionT<Scalar>& d, const Eigen::VectorXcd& v) {
    if (v.size() != d.dim()) throw invalid_parameter("project: dimension mismatch");
    if constexpr (std::is_same_v<Scalar, double>) {
        Eigen::VectorXd re = d.eigenvectors.transpose() * v.real();
        Eigen::VectorXd im = d.eigenvectors.transpose() * v.imag();
        Eigen::VectorXcd out(d.dim());
        out.real() = re;
        out.imag() = im;
        return out;
    } else {
        return d.eigenvectors.adjoint() * v;
    }
}

// U^* V for a block of column vectors
template <class Scalar>
Eigen::MatrixXcd project(const SpectralDecompositionT<Scalar>& d, const Eigen::MatrixXcd& V) {
    if (V.rows() != d.dim()) throw invalid_parameter("project: dimension mismatch");
    if constexpr (std::is_same_v<Scalar, double>) {
        Eigen::MatrixXd re = d.eigenvectors.transpose() * V.real();
        Eigen::MatrixXd im = d.eigenvectors.transpose() * V.imag();
        Eigen::MatrixXcd out(d.dim(), V.cols());
        out.real() = re;
        out.imag() = im;
        return out;
    } else {
        return d.eigenvectors.adjoint() * V;
    }
}

// <v, R w> from projections a = U^* v, b = U^* w
inline cplx projected_form(const Eigen::VectorXd& eigenvalues, const Eigen::VectorXcd& a, const Eigen::VectorXcd& b,
                           cplx z) {
    cplx s = 0.0;
    for (long k = 0; k < eigenvalues.size(); ++k) s += std::conj(a(k)) * b(k) / (eigenvalues(k) - z);
    return s;
}

template <class Scalar>
cplx quadratic_form(const SpectralDecompositionT<Scalar>& d, cplx z, const Eigen::VectorXcd& v,
                    const Eigen::VectorXcd& w) {
    if (std::abs(v.norm() - 1.0) > 1e-12 || std::abs(w.norm() - 1.0) > 1e-12)
        throw invalid_parameter("quadratic_form: v and w must be unit vectors");
    detail::require_regular(d, z);
    return projected_form(d.eigenvalues, project(d, v), project(d, w), z);
}

template <class Scalar>
cplx trace_resolvent(const SpectralDecompositionT<Scalar>& d, cplx z) {
    detail::require_regular(d, z);
    cplx s = 0.0;
    for (long k = 0; k < d.dim(); ++k) s += 1.0 / (d.eigenvalues(k) - z);
    return s;
}

template <class Scalar>
Eigen::MatrixXcd resolvent_matrix(const SpectralDecompositionT<Scalar>& d, cplx z) {
    Eigen::VectorXcd r = detail::resolvent_weights(d, z);
    Eigen::MatrixXcd U = d.eigenvectors.template cast<cplx>();
    return U * r.asDiagonal() * U.adjoint();
}

// diagonal entries only, O(n^2)
template <class Scalar>
Eigen::VectorXcd resolvent_diagonal(const SpectralDecompositionT<Scalar>& d, cplx z) {
    Eigen::VectorXcd r = detail::resolvent_weights(d, z);
    Eigen::MatrixXd W = d.eigenvectors.cwiseAbs2();
    Eigen::VectorXcd out(d.dim());
    out.real() = W * r.real();
    out.imag() = W * r.imag();
    return out;
}

template <class Scalar>
cplx resolvent_entry(const SpectralDecompositionT<Scalar>& d, cplx z, long i, long j) {
    detail::require_regular(d, z);
    cplx s = 0.0;
    for (long k = 0; k < d.dim(); ++k) {
        cplx ui = d.eigenvectors(i, k);
        cplx uj = d.eigenvectors(j, k);
        s += ui * std::conj(uj) / (d.eigenvalues(k) - z);
    }
    return s;
}

// Rows of X indexed by {0..M-1} (removed in parentheses), columns by {0..N-1} (brackets).
struct MinorSpec {
    std::vector<long> removed_rows;
    std::vector<long> removed_cols;

    MinorSpec() = default;
    MinorSpec(std::vector<long> rows, std::vector<long> cols) : removed_rows(std::move(rows)), removed_cols(std::move(cols)) {
        normalize();
    }

    static MinorSpec rows(std::vector<long> r) { return MinorSpec(std::move(r), {}); }
    static MinorSpec cols(std::vector<long> c) { return MinorSpec({}, std::move(c)); }

    void normalize() {
        for (auto* v : {&removed_rows, &removed_cols}) {
            std::sort(v->begin(), v->end());
            v->erase(std::unique(v->begin(), v->end()), v->end());
        }
    }

    bool row_removed(long i) const { return std::binary_search(removed_rows.begin(), removed_rows.end(), i); }
    bool col_removed(long m) const { return std::binary_search(removed_cols.begin(), removed_cols.end(), m); }

    MinorSpec with_row(long i) const {
        MinorSpec s = *this;
        s.removed_rows.push_back(i);
        s.normalize();
        return s;
    }
    MinorSpec with_col(long m) const {
        MinorSpec s = *this;
        s.removed_cols.push_back(m);
        s.normalize();
        return s;
    }

    auto key() const { return std::tie(removed_rows, removed_cols); }
    bool operator<(const MinorSpec& o) const { return key() < o.key(); }
    bool operator==(const MinorSpec& o) const { return key() == o.key(); }

    void validate(long M, long N) const {
        for (long i : removed_rows)
            if (i < 0 || i >= M) throw invalid_parameter("MinorSpec: removed row out of range");
        for (long m : removed_cols)
            if (m < 0 || m >= N) throw invalid_parameter("MinorSpec: removed column out of range");
    }
};

// Both Gram resolvents of the matrix with the removed rows/columns zeroed.
struct MinorResolvent {
    MinorSpec spec;
    SpectralDecomposition left;   // X X^*, M x M: G
    SpectralDecomposition right;  // X^* X, N x N: R

    long M() const { return left.dim(); }
    long N() const { return right.dim(); }

    cplx G(cplx z, long i, long j) const {
        if (spec.row_removed(i) || spec.row_removed(j)) throw invalid_parameter("G entry: index removed");
        return resolvent_entry(left, z, i, j);
    }
    cplx R(cplx z, long m, long n) const {
        if (spec.col_removed(m) || spec.col_removed(n)) throw invalid_parameter("R entry: index removed");
        return resolvent_entry(right, z, m, n);
    }
    Eigen::MatrixXcd G_matrix(cplx z) const { return resolvent_matrix(left, z); }
    Eigen::MatrixXcd R_matrix(cplx z) const { return resolvent_matrix(right, z); }

    // traces over surviving indices
    cplx trace_G(cplx z) const {
        cplx s = 0.0;
        for (long i = 0; i < M(); ++i)
            if (!spec.row_removed(i)) s += resolvent_entry(left, z, i, i);
        return s;
    }
    cplx trace_R(cplx z) const {
        cplx s = 0.0;
        for (long m = 0; m < N(); ++m)
            if (!spec.col_removed(m)) s += resolvent_entry(right, z, m, m);
        return s;
    }
};

inline Eigen::MatrixXcd zero_removed(const Eigen::MatrixXcd& X, const MinorSpec& spec) {
    spec.validate(X.rows(), X.cols());
    Eigen::MatrixXcd Y = X;
    for (long i : spec.removed_rows) Y.row(i).setZero();
    for (long m : spec.removed_cols) Y.col(m).setZero();
    return Y;
}

inline MinorResolvent minor_resolvent(const Eigen::MatrixXcd& X, const MinorSpec& spec) {
    Eigen::MatrixXcd Y = zero_removed(X, spec);
    MinorResolvent r;
    r.spec = spec;
    r.left = decompose_trusted<cplx>(gram_left(Y));
    r.right = decompose_trusted<cplx>(gram_right(Y));
    return r;
}

// Memoizes minor decompositions by removal set. Not thread-safe; one per worker.
class MinorCache {
public:
    explicit MinorCache(Eigen::MatrixXcd X) : X_(std::move(X)) {}

    const Eigen::MatrixXcd& X() const { return X_; }
    long M() const { return X_.rows(); }
    long N() const { return X_.cols(); }

    const MinorResolvent& get(const MinorSpec& spec) {
        auto it = cache_.find(spec);
        if (it != cache_.end()) return *it->second;
        auto r = std::make_unique<MinorResolvent>(minor_resolvent(X_, spec));
        return *cache_.emplace(spec, std::move(r)).first->second;
    }

    const MinorResolvent& rows(std::vector<long> r) { return get(MinorSpec::rows(std::move(r))); }
    const MinorResolvent& cols(std::vector<long> c) { return get(MinorSpec::cols(std::move(c))); }
    std::size_t size() const { return cache_.size(); }

private:
    Eigen::MatrixXcd X_;
    std::map<MinorSpec, std::unique_ptr<MinorResolvent>> cache_;
};

struct ResidualReport {
    std::vector<std::pair<std::string, double>> residuals;
    double scale = 1.0;

    double max() const {
        double m = 0.0;
        for (auto& [name, r] : residuals) m = std::max(m, r);
        return m;
    }
    bool ok(double tol) const { return max() <= tol * scale; }
};

inline double identity_scale(cplx z) { return std::max(1.0, 1.0 / (z.imag() * z.imag())); }

namespace detail {

inline std::vector<long> with(std::vector<long> T, std::initializer_list<long> extra) {
    T.insert(T.end(), extra);
    return T;
}

inline void require_absent(const std::vector<long>& T, std::initializer_list<long> idx, const char* who) {
    for (long i : idx)
        if (std::find(T.begin(), T.end(), i) != T.end())
            throw invalid_parameter(std::string(who) + ": index lies in the removal set");
}

}  // namespace detail

// Row-removal identities for G; k is the extra index removed in the first pair.
inline ResidualReport check_identities_G(MinorCache& c, cplx z, const std::vector<long>& T, long i, long j, long k) {
    detail::require_absent(T, {i, j, k}, "check_identities_G");
    if (k == i || k == j) throw invalid_parameter("check_identities_G: k must differ from i and j");
    if (i == j) throw invalid_parameter("check_identities_G: need i != j");
    const auto& X = c.X();
    const auto& GT = c.rows(T);
    const auto& GTk = c.rows(detail::with(T, {k}));
    ResidualReport rep;
    rep.scale = identity_scale(z);
    cplx gij = GT.G(z, i, j), gik = GT.G(z, i, k), gkj = GT.G(z, k, j), gkk = GT.G(z, k, k);
    cplx gii = GT.G(z, i, i), gki = GT.G(z, k, i);
    cplx gii_k = GTk.G(z, i, i);
    rep.residuals.emplace_back("G_split", std::abs(gij - GTk.G(z, i, j) - gik * gkj / gkk));
    rep.residuals.emplace_back("G_inverse_split", std::abs(1.0 / gii - 1.0 / gii_k + gik * gki / (gii * gii_k * gkk)));

    Eigen::MatrixXcd Ri = c.rows(detail::with(T, {i})).R_matrix(z);
    Eigen::VectorXcd xi = X.row(i).transpose();
    cplx sandwich_ii = (xi.transpose() * Ri * xi.conjugate()).value();
    rep.residuals.emplace_back("G_diagonal_expansion", std::abs(1.0 / gii + z + z * sandwich_ii));

    Eigen::MatrixXcd Rij = c.rows(detail::with(T, {i, j})).R_matrix(z);
    Eigen::VectorXcd xj = X.row(j).transpose();
    cplx sandwich_ij = (xi.transpose() * Rij * xj.conjugate()).value();
    cplx gjj_i = c.rows(detail::with(T, {i})).G(z, j, j);
    rep.residuals.emplace_back("G_offdiagonal_expansion", std::abs(gij - z * gii * gjj_i * sandwich_ij));
    return rep;
}

// Column-removal identities for R; rho is the extra removed column.
inline ResidualReport check_identities_R(MinorCache& c, cplx z, const std::vector<long>& T, long mu, long nu,
                                         long rho) {
    detail::require_absent(T, {mu, nu, rho}, "check_identities_R");
    if (rho == mu || rho == nu) throw invalid_parameter("check_identities_R: rho must differ from mu and nu");
    if (mu == nu) throw invalid_parameter("check_identities_R: need mu != nu");
    const auto& X = c.X();
    const auto& RT = c.cols(T);
    const auto& RTr = c.cols(detail::with(T, {rho}));
    ResidualReport rep;
    rep.scale = identity_scale(z);
    cplx rmn = RT.R(z, mu, nu), rmr = RT.R(z, mu, rho), rrn = RT.R(z, rho, nu), rrr = RT.R(z, rho, rho);
    cplx rmm = RT.R(z, mu, mu), rrm = RT.R(z, rho, mu);
    cplx rmm_r = RTr.R(z, mu, mu);
    rep.residuals.emplace_back("R_split", std::abs(rmn - RTr.R(z, mu, nu) - rmr * rrn / rrr));
    rep.residuals.emplace_back("R_inverse_split", std::abs(1.0 / rmm - 1.0 / rmm_r + rmr * rrm / (rmm * rmm_r * rrr)));

    Eigen::MatrixXcd Gm = c.cols(detail::with(T, {mu})).G_matrix(z);
    Eigen::VectorXcd xm = X.col(mu);
    cplx sandwich_mm = (xm.adjoint() * Gm * xm).value();
    rep.residuals.emplace_back("R_diagonal_expansion", std::abs(1.0 / rmm + z + z * sandwich_mm));

    Eigen::MatrixXcd Gmn = c.cols(detail::with(T, {mu, nu})).G_matrix(z);
    Eigen::VectorXcd xn = X.col(nu);
    cplx sandwich_mn = (xm.adjoint() * Gmn * xn).value();
    cplx rnn_m = c.cols(detail::with(T, {mu})).R(z, nu, nu);
    rep.residuals.emplace_back("R_offdiagonal_expansion", std::abs(rmn - z * rmm * rnn_m * sandwich_mn));
    return rep;
}

// tr R - tr G for column and row minors, and the normalized-trace relation.
inline ResidualReport check_trace_identities(MinorCache& c, cplx z, const std::vector<long>& T,
                                             const std::vector<long>& U) {
    double M = static_cast<double>(c.M()), N = static_cast<double>(c.N());
    double phi = M / N;
    ResidualReport rep;
    rep.scale = identity_scale(z);
    const auto& cT = c.cols(T);
    rep.residuals.emplace_back("trace_columns",
                               std::abs(cT.trace_R(z) - cT.trace_G(z) - (M - (N - static_cast<double>(cT.spec.removed_cols.size()))) / z));
    const auto& rU = c.rows(U);
    rep.residuals.emplace_back("trace_rows",
                               std::abs(rU.trace_R(z) - rU.trace_G(z) - ((M - static_cast<double>(rU.spec.removed_rows.size())) - N) / z));
    const auto& full = c.rows({});
    rep.residuals.emplace_back("normalized_traces",
                               std::abs(full.trace_G(z) / M - full.trace_R(z) / N / phi - (1.0 - phi) / (phi * z)));
    return rep;
}

inline double check_ward(MinorCache& c, cplx z, const std::vector<long>& T, long i) {
    if (!(z.imag() > 0.0)) throw invalid_parameter("check_ward: need eta > 0");
    Eigen::MatrixXcd G = c.cols(T).G_matrix(z);
    double lhs = G.row(i).cwiseAbs2().sum();
    return std::abs(lhs - G(i, i).imag() / z.imag());
}

struct InterlacingMargins {
    double columns = 0.0;  // |tr R^[T] - tr R| eta
    double rows = 0.0;     // |tr R^(U) - tr R| eta
};

inline InterlacingMargins check_interlacing(MinorCache& c, cplx z, const std::vector<long>& T,
                                            const std::vector<long>& U) {
    cplx tr = c.rows({}).trace_R(z);
    InterlacingMargins m;
    m.columns = std::abs(c.cols(T).trace_R(z) - tr) * z.imag();
    m.rows = std::abs(c.rows(U).trace_R(z) - tr) * z.imag();
    return m;
}

namespace detail {

inline long spare_index(long n, const std::vector<long>& T, std::initializer_list<long> used) {
    for (long k = 0; k < n; ++k)
        if (std::find(T.begin(), T.end(), k) == T.end() && std::find(used.begin(), used.end(), k) == used.end())
            return k;
    throw invalid_parameter("identity check: no spare index left to remove");
}

}  // namespace detail

// One-shot forms on a bare X; the split identities remove the first free index.
inline ResidualReport check_identities_G(const Eigen::MatrixXcd& X, cplx z, const std::vector<long>& T, long i,
                                         long j) {
    MinorCache c(X);
    return check_identities_G(c, z, T, i, j, detail::spare_index(X.rows(), T, {i, j}));
}

inline ResidualReport check_identities_R(const Eigen::MatrixXcd& X, cplx z, const std::vector<long>& T, long mu,
                                         long nu) {
    MinorCache c(X);
    return check_identities_R(c, z, T, mu, nu, detail::spare_index(X.cols(), T, {mu, nu}));
}

inline double check_ward(const Eigen::MatrixXcd& X, cplx z, const std::vector<long>& T, long i) {
    MinorCache c(X);
    return check_ward(c, z, T, i);
}

inline InterlacingMargins check_interlacing(const Eigen::MatrixXcd& X, cplx z, const std::vector<long>& T,
                                            const std::vector<long>& U) {
    MinorCache c(X);
    return check_interlacing(c, z, T, U);
}

}  // namespace locallaw
