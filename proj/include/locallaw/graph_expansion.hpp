#pragma once

// Graph calculus for moments of the off-diagonal isotropic sum: the initial graph of a
// partition, the splitting maps tau_0/tau_1, the off-diagonal expansion rho, the binary
// tree with its stopping rule, the diagonal expansion, and numerical evaluation of the
// encoded monomials on a sampled X.
//
// Vertices 0..black-1 are black (population indices), black..black+white-1 are white
// (sample indices, always summed). Upper-index sets are bitmasks over black vertices.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "locallaw/errors.hpp"
#include "locallaw/resolvent.hpp"
#include "locallaw/spectral_laws.hpp"

namespace locallaw::graph {

constexpr int kMaxP = 4;
constexpr int kMaxEll = 3;
constexpr std::size_t kDefaultNodeBudget = 100000;

// ---------------------------------------------------------------- partitions

// Blocks listed by smallest element; element (k, r) (k = 1..p, r = 1, 2) has id 2(k-1) + (r-1).
struct PairPartition {
    int p = 0;
    std::vector<int> block_of;  // element id -> block id

    int blocks() const { return block_of.empty() ? 0 : *std::max_element(block_of.begin(), block_of.end()) + 1; }
    int block(int k, int r) const { return block_of[2 * (k - 1) + (r - 1)]; }

    void validate() const {
        if (p < 1) throw invalid_parameter("partition: p must be positive");
        if (static_cast<int>(block_of.size()) != 2 * p) throw invalid_parameter("partition: wrong element count");
        // restricted growth form keeps the block order canonical
        int next = 0;
        for (int b : block_of) {
            if (b < 0 || b > next) throw invalid_parameter("partition: blocks not in first-occurrence order");
            if (b == next) ++next;
        }
        for (int k = 1; k <= p; ++k)
            if (block(k, 1) == block(k, 2)) throw invalid_parameter("partition: (k,1) and (k,2) share a block");
    }

    std::string to_string() const {
        std::ostringstream os;
        int nb = blocks();
        for (int b = 0; b < nb; ++b) {
            os << (b ? " " : "") << "{";
            bool first = true;
            for (int e = 0; e < 2 * p; ++e)
                if (block_of[e] == b) {
                    os << (first ? "" : ",") << "(" << e / 2 + 1 << "," << e % 2 + 1 << ")";
                    first = false;
                }
            os << "}";
        }
        return os.str();
    }
};

inline std::vector<PairPartition> enumerate_partitions(int p) {
    if (p < 1) throw invalid_parameter("enumerate_partitions: p must be positive");
    if (p > kMaxP) throw resource_error("enumerate_partitions: p above the cap of 4");
    std::vector<PairPartition> out;
    PairPartition cur;
    cur.p = p;
    cur.block_of.assign(2 * p, 0);
    auto rec = [&](auto&& self, int e, int used) -> void {
        if (e == 2 * p) {
            out.push_back(cur);
            return;
        }
        for (int b = 0; b <= used; ++b) {
            if (e % 2 == 1 && cur.block_of[e - 1] == b) continue;
            cur.block_of[e] = b;
            self(self, e + 1, std::max(used, b + 1));
        }
    };
    rec(rec, 0, 0);
    return out;
}

// ---------------------------------------------------------------- prefactors

// Variables: zt, conj(zt), mt, conj(mt), q, conj(q) with zt = z/sqrt(phi),
// mt = (m + (1-phi)/z)/sqrt(phi), q = m/sqrt(phi), m the MP transform.
enum Var { kZt = 0, kZtc, kMt, kMtc, kQ, kQc, kVars };

using Exponents = std::array<int, kVars>;

struct Prefactor {
    std::map<Exponents, long long> terms;

    static Prefactor one() {
        Prefactor p;
        p.terms[Exponents{}] = 1;
        return p;
    }
    static Prefactor monomial(long long c, Exponents e) {
        Prefactor p;
        if (c != 0) p.terms[e] = c;
        return p;
    }
    static Prefactor var(Var v, int power = 1) {
        Exponents e{};
        e[v] = power;
        return monomial(1, e);
    }

    Prefactor operator*(const Prefactor& o) const {
        Prefactor r;
        for (auto& [ea, ca] : terms)
            for (auto& [eb, cb] : o.terms) {
                Exponents e;
                for (int i = 0; i < kVars; ++i) e[i] = ea[i] + eb[i];
                r.terms[e] += ca * cb;
            }
        r.prune();
        return r;
    }
    Prefactor operator+(const Prefactor& o) const {
        Prefactor r = *this;
        for (auto& [e, c] : o.terms) r.terms[e] += c;
        r.prune();
        return r;
    }
    Prefactor operator-() const {
        Prefactor r = *this;
        for (auto& [e, c] : r.terms) c = -c;
        return r;
    }
    bool operator==(const Prefactor& o) const { return terms == o.terms; }
    bool is_zero() const { return terms.empty(); }

    void prune() {
        for (auto it = terms.begin(); it != terms.end();)
            it = it->second == 0 ? terms.erase(it) : std::next(it);
    }
};

struct PrefactorValues {
    std::array<cplx, kVars> v{};

    static PrefactorValues at(cplx z, double phi) {
        double s = std::sqrt(phi);
        cplx m = mp_stieltjes(z, phi);
        PrefactorValues out;
        out.v[kZt] = z / s;
        out.v[kMt] = (m + (1.0 - phi) / z) / s;
        out.v[kQ] = m / s;
        out.v[kZtc] = std::conj(out.v[kZt]);
        out.v[kMtc] = std::conj(out.v[kMt]);
        out.v[kQc] = std::conj(out.v[kQ]);
        return out;
    }

    cplx operator()(const Prefactor& p) const {
        cplx s = 0.0;
        for (auto& [e, c] : p.terms) {
            cplx t = static_cast<double>(c);
            for (int i = 0; i < kVars; ++i)
                for (int k = 0; k < e[i]; ++k) t *= v[i];
            s += t;
        }
        return s;
    }
};

// ---------------------------------------------------------------- graphs

enum class Kind : std::uint8_t { G, Gs, R, Rs, X, Xs };

inline bool is_G(Kind k) { return k == Kind::G || k == Kind::Gs; }
inline bool is_R(Kind k) { return k == Kind::R || k == Kind::Rs; }
inline bool is_X(Kind k) { return k == Kind::X || k == Kind::Xs; }
inline bool conjugated(Kind k) { return k == Kind::Gs || k == Kind::Rs || k == Kind::Xs; }

inline const char* to_string(Kind k) {
    switch (k) {
        case Kind::G: return "G";
        case Kind::Gs: return "G*";
        case Kind::R: return "R";
        case Kind::Rs: return "R*";
        case Kind::X: return "X";
        case Kind::Xs: return "X*";
    }
    return "?";
}

using Mask = std::uint32_t;

struct Edge {
    int src = 0;
    int dst = 0;
    Kind kind = Kind::G;
    bool numerator = true;
    Mask upper = 0;

    bool loop() const { return src == dst; }
    bool operator==(const Edge&) const = default;
};

struct ExpansionGraph {
    int black = 0;
    int white = 0;
    Prefactor prefactor = Prefactor::one();
    std::vector<Edge> edges;

    int vertices() const { return black + white; }
    bool is_black(int v) const { return v < black; }
    Mask all_black() const { return black >= 32 ? ~Mask{0} : (Mask{1} << black) - 1; }

    int add_white() { return black + white++; }

    bool maximally_expanded(const Edge& e) const {
        Mask want = all_black() & ~(Mask{1} << e.src) & ~(Mask{1} << e.dst);
        return e.upper == want;
    }

    bool operator==(const ExpansionGraph& o) const {
        return black == o.black && white == o.white && prefactor == o.prefactor && edges == o.edges;
    }
};

// Degree with loops counted twice.
inline std::vector<int> degrees(const ExpansionGraph& g) {
    std::vector<int> deg(g.vertices(), 0);
    for (auto& e : g.edges) {
        ++deg[e.src];
        ++deg[e.dst];
    }
    return deg;
}

// Bit i set iff black vertex i has odd degree.
inline Mask parity_signature(const ExpansionGraph& g) {
    auto deg = degrees(g);
    Mask m = 0;
    for (int i = 0; i < g.black; ++i)
        if (deg[i] % 2) m |= Mask{1} << i;
    return m;
}

struct RGroup {
    int x_in = -1;   // X edge A -> mu
    int centre = -1; // R edge mu -> nu
    int x_out = -1;  // X* edge nu -> B
    int A = -1, B = -1;
    bool diagonal() const { return A == B; }
};

// R-groups by centre, in edge order. Throws if some R-edge has no complete group.
inline std::vector<RGroup> r_groups(const ExpansionGraph& g) {
    std::vector<int> into(g.vertices(), -1), out_of(g.vertices(), -1);
    for (int k = 0; k < static_cast<int>(g.edges.size()); ++k) {
        const auto& e = g.edges[k];
        if (e.kind == Kind::X) into[e.dst] = k;
        if (e.kind == Kind::Xs) out_of[e.src] = k;
    }
    std::vector<RGroup> out;
    for (int k = 0; k < static_cast<int>(g.edges.size()); ++k) {
        const auto& e = g.edges[k];
        if (!is_R(e.kind)) continue;
        RGroup r;
        r.centre = k;
        r.x_in = into[e.src];
        r.x_out = out_of[e.dst];
        if (r.x_in < 0 || r.x_out < 0) throw precondition_error("graph: R-edge outside an R-group");
        r.A = g.edges[r.x_in].src;
        r.B = g.edges[r.x_out].dst;
        out.push_back(r);
    }
    return out;
}

// Off-diagonal G-edges plus off-diagonal R-groups.
inline int d_count(const ExpansionGraph& g) {
    int d = 0;
    for (auto& e : g.edges)
        if (is_G(e.kind) && !e.loop()) ++d;
    for (auto& r : r_groups(g))
        if (!r.diagonal()) ++d;
    return d;
}

// Properties (i)-(vii); returns one message per violation.
inline std::vector<std::string> structure_violations(const ExpansionGraph& g) {
    std::vector<std::string> bad;
    auto say = [&](int k, const std::string& what) {
        bad.push_back("edge " + std::to_string(k) + ": " + what);
    };
    for (int k = 0; k < static_cast<int>(g.edges.size()); ++k) {
        const auto& e = g.edges[k];
        if (e.src < 0 || e.dst < 0 || e.src >= g.vertices() || e.dst >= g.vertices()) {
            say(k, "endpoint out of range");
            continue;
        }
        bool bs = g.is_black(e.src), bd = g.is_black(e.dst);
        if (is_G(e.kind) && !(bs && bd)) say(k, "G-edge must join black vertices");
        if (is_R(e.kind) && (bs || bd)) say(k, "R-edge must join white vertices");
        if (e.kind == Kind::X && !(bs && !bd)) say(k, "X-edge must run black -> white");
        if (e.kind == Kind::Xs && !(!bs && bd)) say(k, "X*-edge must run white -> black");
        if (!e.numerator && !(is_G(e.kind) && e.loop())) say(k, "denominator only on diagonal G-edges");
        if (e.upper) {
            if (!is_G(e.kind)) say(k, "upper indices only on G-edges");
            Mask ends = (Mask{1} << e.src) | (Mask{1} << e.dst);
            if ((e.upper & ~g.all_black()) || (e.upper & ends)) say(k, "upper set must avoid the endpoints");
        }
    }
    // (vii): every X/R edge sits in an R-group whose inner vertices have degree two
    auto deg = degrees(g);
    std::vector<int> used(g.edges.size(), 0);
    try {
        for (auto& r : r_groups(g)) {
            const auto& c = g.edges[r.centre];
            if (deg[c.src] != 2 || deg[c.dst] != 2) say(r.centre, "R-group inner vertex degree != 2");
            if (c.src == c.dst) say(r.centre, "R-group centre is a loop");
            ++used[r.x_in];
            ++used[r.centre];
            ++used[r.x_out];
        }
    } catch (const precondition_error&) {
        bad.push_back("R-edge outside an R-group");
    }
    for (int k = 0; k < static_cast<int>(g.edges.size()); ++k) {
        if (!is_G(g.edges[k].kind) && used[k] != 1) say(k, "X/R-edge not in exactly one R-group");
    }
    for (int w = g.black; w < g.vertices(); ++w)
        if (deg[w] != 2) bad.push_back("white vertex " + std::to_string(w) + " has degree " + std::to_string(deg[w]));
    return bad;
}

// ---------------------------------------------------------------- construction

inline ExpansionGraph build_delta(const PairPartition& P) {
    P.validate();
    ExpansionGraph g;
    g.black = P.blocks();
    if (g.black > 31) throw resource_error("build_delta: too many blocks");
    for (int k = 1; k <= P.p; ++k) {
        Edge e;
        e.src = P.block(k, 1);
        e.dst = P.block(k, 2);
        e.kind = 2 * k <= P.p ? Kind::G : Kind::Gs;
        g.edges.push_back(e);
    }
    return g;
}

// First G-edge (edge order) that is not maximally expanded, or -1.
inline int first_open_edge(const ExpansionGraph& g) {
    for (int k = 0; k < static_cast<int>(g.edges.size()); ++k)
        if (is_G(g.edges[k].kind) && !g.maximally_expanded(g.edges[k])) return k;
    return -1;
}

inline bool all_G_maximal(const ExpansionGraph& g) { return first_open_edge(g) < 0; }

// Splits the first non-maximal G-edge by adding its first missing black vertex c as an upper index:
//   G_ab = G_ab^(c) + G_ac G_cb / G_cc
//   1/G_aa = 1/G_aa^(c) - G_ac G_ca / (G_aa G_aa^(c) G_cc)
// (all with the edge's existing upper set). The edge is removed and new edges appended.
inline std::pair<ExpansionGraph, ExpansionGraph> tau_split(const ExpansionGraph& g) {
    int k = first_open_edge(g);
    if (k < 0) throw precondition_error("tau_split: every G-edge is maximally expanded");
    const Edge e = g.edges[k];
    Mask missing = g.all_black() & ~e.upper & ~(Mask{1} << e.src) & ~(Mask{1} << e.dst);
    int c = std::countr_zero(missing);
    Mask T = e.upper, Tc = e.upper | (Mask{1} << c);

    ExpansionGraph t0 = g;
    t0.edges[k].upper = Tc;

    ExpansionGraph t1 = g;
    t1.edges.erase(t1.edges.begin() + k);
    auto add = [&](int s, int d, bool num, Mask up) { t1.edges.push_back(Edge{s, d, e.kind, num, up}); };
    if (e.numerator) {
        add(e.src, c, true, T);
        add(c, e.dst, true, T);
        add(c, c, false, T);
    } else {
        int a = e.src;
        t1.prefactor = -t1.prefactor;
        add(a, c, true, T);
        add(c, a, true, T);
        add(a, a, false, T);
        add(a, a, false, Tc);
        add(c, c, false, T);
    }
    return {std::move(t0), std::move(t1)};
}

// Replaces every maximally expanded off-diagonal G-edge a -> b by
//   zt G_aa^(V\{a,b}) G_bb^(V\{b}) (X R X*)_ab   (conjugated variables for G*).
inline ExpansionGraph rho_expand(const ExpansionGraph& g) {
    ExpansionGraph out;
    out.black = g.black;
    out.white = g.white;
    out.prefactor = g.prefactor;
    std::vector<Edge> appended;
    Mask all = g.all_black();
    for (const auto& e : g.edges) {
        if (!(is_G(e.kind) && !e.loop() && g.maximally_expanded(e))) {
            out.edges.push_back(e);
            continue;
        }
        bool c = e.kind == Kind::Gs;
        out.prefactor = out.prefactor * Prefactor::var(c ? kZtc : kZt);
        int a = e.src, b = e.dst;
        Mask ab = all & ~(Mask{1} << a) & ~(Mask{1} << b);
        appended.push_back(Edge{a, a, e.kind, true, ab});
        appended.push_back(Edge{b, b, e.kind, true, all & ~(Mask{1} << b)});
        int mu = out.add_white(), nu = out.add_white();
        appended.push_back(Edge{a, mu, Kind::X, true, 0});
        appended.push_back(Edge{mu, nu, c ? Kind::Rs : Kind::R, true, 0});
        appended.push_back(Edge{nu, b, Kind::Xs, true, 0});
    }
    out.edges.insert(out.edges.end(), appended.begin(), appended.end());
    return out;
}

// ---------------------------------------------------------------- tree

struct ExpansionTree {
    int ell = 0;
    std::map<std::string, ExpansionGraph> nodes;  // key: binary string, children of s are "0"+s and "1"+s
    std::vector<std::string> trivial_leaves;      // d >= ell
    std::vector<std::string> nontrivial_leaves;   // every G-edge maximally expanded, d < ell
    int depth = 0;

    bool is_leaf(const std::string& s) const { return !nodes.count("0" + s); }
    std::size_t leaf_count() const { return trivial_leaves.size() + nontrivial_leaves.size(); }
};

struct tree_budget_exceeded : resource_error {
    std::shared_ptr<ExpansionTree> partial;
    tree_budget_exceeded(const std::string& what, std::shared_ptr<ExpansionTree> t)
        : resource_error(what), partial(std::move(t)) {}
};

inline bool stops(const ExpansionGraph& g, int ell) { return d_count(g) >= ell || all_G_maximal(g); }

inline std::size_t depth_bound(int p, int ell) { return static_cast<std::size_t>(2 * p * (p + 6 * ell)); }

inline ExpansionTree build_tree(const ExpansionGraph& delta, int ell, std::size_t max_nodes = kDefaultNodeBudget) {
    if (ell < 1) throw invalid_parameter("build_tree: ell must be at least 1");
    if (ell > kMaxEll) throw resource_error("build_tree: ell above the cap of 3");
    auto tree = std::make_shared<ExpansionTree>();
    tree->ell = ell;
    tree->nodes.emplace("", delta);
    std::vector<std::string> stack{""};
    while (!stack.empty()) {
        std::string s = std::move(stack.back());
        stack.pop_back();
        const ExpansionGraph& g = tree->nodes.at(s);
        tree->depth = std::max(tree->depth, static_cast<int>(s.size()));
        if (stops(g, ell)) {
            (d_count(g) >= ell ? tree->trivial_leaves : tree->nontrivial_leaves).push_back(s);
            continue;
        }
        if (tree->nodes.size() + 2 > max_nodes)
            throw tree_budget_exceeded("build_tree: node budget of " + std::to_string(max_nodes) + " exceeded", tree);
        auto [t0, t1] = tau_split(g);
        tree->nodes.emplace("0" + s, rho_expand(t0));
        tree->nodes.emplace("1" + s, rho_expand(t1));
        stack.push_back("1" + s);
        stack.push_back("0" + s);
    }
    std::sort(tree->trivial_leaves.begin(), tree->trivial_leaves.end());
    std::sort(tree->nontrivial_leaves.begin(), tree->nontrivial_leaves.end());
    return std::move(*tree);
}

// ---------------------------------------------------------------- diagonal expansion

struct DiagonalExpansion {
    std::vector<ExpansionGraph> main;       // no G-edges left
    std::vector<ExpansionGraph> remainder;  // each keeps exactly one factor (mt E)^ell Ghat_aa
};

namespace detail {

inline long long binomial(int n, int k) {
    long long r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// Appends a diagonal R-group at black vertex a.
inline void add_diagonal_group(ExpansionGraph& g, int a, bool conj) {
    int mu = g.add_white(), nu = g.add_white();
    g.edges.push_back(Edge{a, mu, Kind::X, true, 0});
    g.edges.push_back(Edge{mu, nu, conj ? Kind::Rs : Kind::R, true, 0});
    g.edges.push_back(Edge{nu, a, Kind::Xs, true, 0});
}

struct Option {
    Prefactor coef;
    int groups = 0;
};

}  // namespace detail

// Exact diagonal expansion of a graph whose G-edges are all diagonal and maximally expanded.
//   1/Ghat_aa = -zt - zt S_aa                     (S = X R X*, one R-group)
//   Ghat_aa   = sum_{k<ell} mt^{k+1} E^k + (mt E)^ell Ghat_aa,   E = zt S_aa - zt q
// Numerator terms are collected by the number of R-groups; the remainder is telescoped so
// that graph i carries main parts on earlier entries, its own remainder, and the untouched
// later entries.
inline DiagonalExpansion expand_diagonal(const ExpansionGraph& g, int ell, std::size_t max_graphs = 2000000) {
    if (ell < 1) throw invalid_parameter("expand_diagonal: ell must be at least 1");
    std::vector<int> num, den;
    ExpansionGraph base = g;
    base.edges.clear();
    for (int k = 0; k < static_cast<int>(g.edges.size()); ++k) {
        const auto& e = g.edges[k];
        if (!is_G(e.kind)) {
            base.edges.push_back(e);
            continue;
        }
        if (!e.loop() || !g.maximally_expanded(e))
            throw precondition_error("expand_diagonal: G-edges must be diagonal and maximally expanded");
        (e.numerator ? num : den).push_back(k);
    }
    auto main_options = [&](bool c) {
        Var z = c ? kZtc : kZt, m = c ? kMtc : kMt, q = c ? kQc : kQ;
        std::vector<detail::Option> opts(ell);
        for (int j = 0; j < ell; ++j) {
            opts[j].groups = j;
            for (int k = j; k < ell; ++k) {
                Exponents ex{};
                ex[z] = k;
                ex[m] = k + 1;
                ex[q] = k - j;
                long long sign = (k - j) % 2 ? -1 : 1;
                opts[j].coef = opts[j].coef + Prefactor::monomial(sign * detail::binomial(k, j), ex);
            }
        }
        return opts;
    };
    auto remainder_options = [&](bool c) {
        Var z = c ? kZtc : kZt, m = c ? kMtc : kMt, q = c ? kQc : kQ;
        std::vector<detail::Option> opts(ell + 1);
        for (int j = 0; j <= ell; ++j) {
            Exponents ex{};
            ex[z] = ell;
            ex[m] = ell;
            ex[q] = ell - j;
            opts[j].groups = j;
            opts[j].coef = Prefactor::monomial(((ell - j) % 2 ? -1 : 1) * detail::binomial(ell, j), ex);
        }
        return opts;
    };

    // denominators: every combination, shared by all outputs
    std::vector<ExpansionGraph> dens{base};
    for (int k : den) {
        const auto& e = g.edges[k];
        bool c = e.kind == Kind::Gs;
        std::vector<ExpansionGraph> next;
        for (auto& h : dens) {
            ExpansionGraph a = h, b = h;
            a.prefactor = a.prefactor * -Prefactor::var(c ? kZtc : kZt);
            b.prefactor = a.prefactor;
            detail::add_diagonal_group(b, e.src, c);
            next.push_back(std::move(a));
            next.push_back(std::move(b));
        }
        dens = std::move(next);
    }

    DiagonalExpansion out;
    auto budget = [&](std::size_t n) {
        if (n > max_graphs) throw resource_error("expand_diagonal: output exceeds the graph budget");
    };
    auto apply = [&](std::vector<ExpansionGraph>& cur, const Edge& e, const std::vector<detail::Option>& opts) {
        std::vector<ExpansionGraph> next;
        budget(cur.size() * opts.size());
        next.reserve(cur.size() * opts.size());
        for (auto& h : cur)
            for (auto& o : opts) {
                ExpansionGraph x = h;
                x.prefactor = x.prefactor * o.coef;
                for (int r = 0; r < o.groups; ++r) detail::add_diagonal_group(x, e.src, e.kind == Kind::Gs);
                next.push_back(std::move(x));
            }
        cur = std::move(next);
    };
    std::vector<ExpansionGraph> prefix = dens;  // main parts applied to num[0..i)
    for (std::size_t i = 0; i < num.size(); ++i) {
        const auto& e = g.edges[num[i]];
        bool c = e.kind == Kind::Gs;
        // remainder branch for entry i: keep Ghat_aa and the later entries as G-edges
        std::vector<ExpansionGraph> rem = prefix;
        apply(rem, e, remainder_options(c));
        for (auto& h : rem) {
            h.edges.push_back(e);
            for (std::size_t j = i + 1; j < num.size(); ++j) h.edges.push_back(g.edges[num[j]]);
            out.remainder.push_back(std::move(h));
        }
        budget(out.remainder.size());
        apply(prefix, e, main_options(c));
    }
    out.main = std::move(prefix);
    return out;
}

// ---------------------------------------------------------------- evaluation

// Evaluates encoded monomials for fixed distinct black indices a_b, with white indices summed.
// The sum over the two inner vertices of an R-group is (X R^(a_b) X*)_{AB}, computed once.
class Evaluator {
public:
    Evaluator(MinorCache& cache, cplx z, std::vector<long> a_b)
        : cache_(cache), z_(z), a_(std::move(a_b)) {
        long M = cache.M(), N = cache.N();
        for (std::size_t i = 0; i < a_.size(); ++i) {
            if (a_[i] < 0 || a_[i] >= M) throw invalid_parameter("Evaluator: black index out of range");
            for (std::size_t j = 0; j < i; ++j)
                if (a_[i] == a_[j]) throw invalid_parameter("Evaluator: black indices must be distinct");
        }
        phi_ = static_cast<double>(M) / static_cast<double>(N);
        vars_ = PrefactorValues::at(z, phi_);
        Eigen::MatrixXcd R = cache.rows(a_).R_matrix(z);
        Eigen::MatrixXcd Xb(static_cast<long>(a_.size()), N);
        for (std::size_t i = 0; i < a_.size(); ++i) Xb.row(static_cast<long>(i)) = cache.X().row(a_[i]);
        S_ = Xb * R * Xb.adjoint();
        Sstar_ = Xb * R.adjoint() * Xb.adjoint();
    }

    double phi() const { return phi_; }
    const PrefactorValues& vars() const { return vars_; }
    const std::vector<long>& indices() const { return a_; }
    const Eigen::MatrixXcd& sandwich() const { return S_; }

    // rescaled sqrt(phi) G^(T)_{ab}, T given as a black mask
    cplx G_tilde(Mask T, int a, int b) {
        auto key = std::make_tuple(T, a, b);
        auto it = gcache_.find(key);
        if (it != gcache_.end()) return it->second;
        std::vector<long> rows;
        for (int i = 0; i < static_cast<int>(a_.size()); ++i)
            if (T & (Mask{1} << i)) rows.push_back(a_[i]);
        cplx v = std::sqrt(phi_) * cache_.rows(rows).G(z_, a_[a], a_[b]);
        gcache_.emplace(key, v);
        return v;
    }

    cplx edge_value(const Edge& e) {
        cplx v = e.kind == Kind::G ? G_tilde(e.upper, e.src, e.dst) : std::conj(G_tilde(e.upper, e.dst, e.src));
        return e.numerator ? v : 1.0 / v;
    }

    cplx operator()(const ExpansionGraph& g) {
        if (g.black != static_cast<int>(a_.size())) throw invalid_parameter("Evaluator: black vertex count mismatch");
        cplx v = vars_(g.prefactor);
        for (const auto& e : g.edges)
            if (is_G(e.kind)) v *= edge_value(e);
        if (g.white) {
            for (auto& r : r_groups(g)) {
                bool c = g.edges[r.centre].kind == Kind::Rs;
                v *= c ? Sstar_(r.A, r.B) : S_(r.A, r.B);
            }
        }
        return v;
    }

private:
    MinorCache& cache_;
    cplx z_;
    std::vector<long> a_;
    double phi_ = 1.0;
    PrefactorValues vars_;
    Eigen::MatrixXcd S_, Sstar_;
    std::map<std::tuple<Mask, int, int>, cplx> gcache_;
};

inline cplx evaluate(const ExpansionGraph& g, MinorCache& cache, cplx z, const std::vector<long>& a_b) {
    Evaluator ev(cache, z, a_b);
    return ev(g);
}

// Weight prod_e conj(v_{a(src)}) v_{a(dst)} over the G-edges of the initial graph.
inline cplx weight(const ExpansionGraph& delta, const std::vector<long>& a_b, const Eigen::VectorXcd& v) {
    cplx w = 1.0;
    for (auto& e : delta.edges)
        if (is_G(e.kind)) w *= std::conj(v(a_b[e.src])) * v(a_b[e.dst]);
    return w;
}

// |(mt E)^ell Ghat_aa| for each numerator diagonal G-edge of g, using mt E = 1 - mt / Ghat_aa.
inline std::vector<double> remainder_magnitudes(const ExpansionGraph& g, Evaluator& ev, int ell) {
    std::vector<double> out;
    for (const auto& e : g.edges) {
        if (!is_G(e.kind) || !e.numerator || !e.loop()) continue;
        cplx gh = ev.G_tilde(e.upper, e.src, e.src);
        cplx mt = ev.vars().v[kMt];
        if (e.kind == Kind::Gs) {
            gh = std::conj(gh);
            mt = std::conj(mt);
        }
        out.push_back(std::abs(std::pow(1.0 - mt / gh, ell) * gh));
    }
    return out;
}

struct LeafSumReport {
    cplx root = 0.0;
    cplx leaf_sum = 0.0;
    double residual = 0.0;        // |root - leaf_sum|
    double worst_node_relative = 0.0;  // max over internal nodes of |parent - children| / (|parent| + 1e-300)
    std::size_t nodes = 0, leaves = 0;
    int depth = 0;

    bool ok(double rel, double abs_floor = 1e-12) const { return residual <= rel * std::abs(root) + abs_floor; }
};

inline LeafSumReport verify_leaf_sum(const ExpansionTree& tree, Evaluator& ev) {
    LeafSumReport rep;
    std::map<std::string, cplx> val;
    for (auto& [s, g] : tree.nodes) val[s] = ev(g);
    rep.root = val.at("");
    for (auto& [s, g] : tree.nodes) {
        if (tree.is_leaf(s)) {
            rep.leaf_sum += val[s];
            ++rep.leaves;
            continue;
        }
        cplx kids = val.at("0" + s) + val.at("1" + s);
        double scale = std::abs(val[s]) + 1e-12;
        rep.worst_node_relative = std::max(rep.worst_node_relative, std::abs(kids - val[s]) / scale);
    }
    rep.nodes = tree.nodes.size();
    rep.depth = tree.depth;
    rep.residual = std::abs(rep.root - rep.leaf_sum);
    return rep;
}

inline LeafSumReport verify_leaf_sum(const ExpansionGraph& delta, MinorCache& cache, cplx z,
                                     const std::vector<long>& a_b, int ell) {
    auto tree = build_tree(delta, ell);
    Evaluator ev(cache, z, a_b);
    return verify_leaf_sum(tree, ev);
}

// ---------------------------------------------------------------- text format

// graph v1
// black <n>
// white <n>
// term <coef> <zt> <zt*> <mt> <mt*> <q> <q*>      (one line per prefactor term)
// edge <src> <dst> <G|G*|R|R*|X|X*> <+|-> {i,j,...}
inline std::string serialize(const ExpansionGraph& g) {
    std::ostringstream os;
    os << "graph v1\nblack " << g.black << "\nwhite " << g.white << "\n";
    for (auto& [e, c] : g.prefactor.terms) {
        os << "term " << c;
        for (int x : e) os << " " << x;
        os << "\n";
    }
    for (auto& e : g.edges) {
        os << "edge " << e.src << " " << e.dst << " " << to_string(e.kind) << " " << (e.numerator ? "+" : "-") << " {";
        bool first = true;
        for (int i = 0; i < 32; ++i)
            if (e.upper & (Mask{1} << i)) {
                os << (first ? "" : ",") << i;
                first = false;
            }
        os << "}\n";
    }
    return os.str();
}

inline ExpansionGraph parse_graph(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    ExpansionGraph g;
    g.prefactor = Prefactor{};
    int lineno = 0;
    auto fail = [&](const std::string& why) {
        throw invalid_parameter("parse_graph line " + std::to_string(lineno) + ": " + why);
    };
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (!header) {
            std::string v;
            ls >> v;
            if (tag != "graph" || v != "v1") fail("expected 'graph v1'");
            header = true;
        } else if (tag == "black") {
            ls >> g.black;
        } else if (tag == "white") {
            ls >> g.white;
        } else if (tag == "term") {
            long long c;
            Exponents e;
            ls >> c;
            for (int& x : e) ls >> x;
            if (!ls) fail("bad term");
            g.prefactor.terms[e] += c;
        } else if (tag == "edge") {
            Edge e;
            std::string kind, sign, set;
            ls >> e.src >> e.dst >> kind >> sign >> set;
            if (!ls) fail("bad edge");
            static const std::map<std::string, Kind> kinds{{"G", Kind::G}, {"G*", Kind::Gs}, {"R", Kind::R},
                                                           {"R*", Kind::Rs}, {"X", Kind::X}, {"X*", Kind::Xs}};
            auto it = kinds.find(kind);
            if (it == kinds.end()) fail("unknown edge kind '" + kind + "'");
            e.kind = it->second;
            if (sign != "+" && sign != "-") fail("sign must be + or -");
            e.numerator = sign == "+";
            if (set.size() < 2 || set.front() != '{' || set.back() != '}') fail("upper set must be {..}");
            std::string body = set.substr(1, set.size() - 2);
            std::istringstream ss(body);
            std::string tok;
            while (std::getline(ss, tok, ','))
                if (!tok.empty()) e.upper |= Mask{1} << std::stoi(tok);
            g.edges.push_back(e);
        } else {
            fail("unknown record '" + tag + "'");
        }
    }
    if (!header) throw invalid_parameter("parse_graph: empty input");
    g.prefactor.prune();
    return g;
}

}  // namespace locallaw::graph
