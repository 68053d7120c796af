// Deterministic Gaussian expectation rules for the EP moment-matching
// integrals: a fully symmetric degree-9 sigma-point rule (node count grows
// ~quartically in the dimension) and tensor-product Gauss-Hermite as the
// high-accuracy reference.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gtfnmf/common.hpp"
#include "gtfnmf/linalg.hpp"

namespace gtfnmf {

struct QuadratureRule {
    MatrixXd nodes;   // one unit-Gaussian abscissa per row
    VectorXd weights; // sum to 1; may contain negative entries
    int degree = 0;   // total polynomial exactness under N(0, I)

    Eigen::Index size() const { return weights.size(); }
    Eigen::Index dimension() const { return nodes.cols(); }
};

namespace detail {

inline std::uint64_t binom(int n, int k) {
    if (k < 0 || k > n) return 0;
    std::uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// Orbit of the fully symmetric rule: n1 coordinates at +-r1, n2 at +-r2,
// the rest zero, over all positions and signs.
struct Orbit {
    int n1 = 0;
    int n2 = 0;
};

inline std::uint64_t orbit_size(int dim, const Orbit& o) {
    return binom(dim, o.n1) * binom(dim - o.n1, o.n2) *
           (std::uint64_t{1} << (o.n1 + o.n2));
}

// Sum over the orbit's points of prod_j x_j^{e_j} for even exponents e on
// len(pattern) distinct coordinates. Only sign-even terms survive, so the
// sum reduces to counting placements of the two radii onto the pattern.
inline double orbit_monomial_sum(int dim, const Orbit& o, double r1sq,
                                 double r2sq, const std::vector<int>& pattern) {
    const int m = static_cast<int>(pattern.size());
    double total = 0.0;
    for (int s = 0; s <= m; ++s) { // s pattern coords take r1, m-s take r2
        if (o.n1 < s || o.n2 < m - s) continue;
        const int rem1 = o.n1 - s, rem2 = o.n2 - (m - s);
        if (rem1 + rem2 > dim - m) continue;
        const double placements =
            static_cast<double>(binom(dim - m, rem1)) *
            static_cast<double>(binom(dim - m - rem1, rem2));
        if (placements == 0.0) continue;
        // sum over which s of the m pattern slots carry r1
        double subset_sum = 0.0;
        std::vector<int> pick(m, 0);
        for (int i = 0; i < s; ++i) pick[i] = 1;
        // iterate subsets of size s via prev_permutation on the mask
        std::vector<int> mask = pick;
        std::sort(mask.begin(), mask.end(), std::greater<int>());
        do {
            double v = 1.0;
            for (int j = 0; j < m; ++j) {
                const double rsq = mask[j] ? r1sq : r2sq;
                v *= std::pow(rsq, pattern[j] / 2);
            }
            subset_sum += v;
        } while (std::prev_permutation(mask.begin(), mask.end()));
        total += subset_sum * placements *
                 static_cast<double>(std::uint64_t{1} << (o.n1 + o.n2));
    }
    return total;
}

inline void append_orbit_points(int dim, const Orbit& o, double r1, double r2,
                                double weight,
                                std::vector<VectorXd>& nodes,
                                std::vector<double>& weights) {
    const int k = o.n1 + o.n2;
    std::vector<int> positions(k);
    // choose positions via odometer over strictly increasing index tuples,
    // then distribute which of them take r1 (combinations), then signs
    std::vector<int> idx(k);
    for (int i = 0; i < k; ++i) idx[i] = i;
    auto next_combination = [&](std::vector<int>& c) {
        int i = k - 1;
        while (i >= 0 && c[i] == dim - k + i) --i;
        if (i < 0) return false;
        ++c[i];
        for (int j = i + 1; j < k; ++j) c[j] = c[j - 1] + 1;
        return true;
    };
    if (k == 0) {
        nodes.push_back(VectorXd::Zero(dim));
        weights.push_back(weight);
        return;
    }
    do {
        std::vector<int> mask(k, 0);
        for (int i = 0; i < o.n1; ++i) mask[i] = 1;
        std::sort(mask.begin(), mask.end(), std::greater<int>());
        do {
            for (std::uint64_t signs = 0; signs < (std::uint64_t{1} << k);
                 ++signs) {
                VectorXd pt = VectorXd::Zero(dim);
                for (int j = 0; j < k; ++j) {
                    const double r = mask[j] ? r1 : r2;
                    pt(idx[j]) = ((signs >> j) & 1) ? -r : r;
                }
                nodes.push_back(pt);
                weights.push_back(weight);
            }
        } while (std::prev_permutation(mask.begin(), mask.end()));
    } while (next_combination(idx));
}

} // namespace detail

// Fully symmetric degree-9 rule for N(0, I_N), 1 <= N <= 6. Generator radii
// are the positive nodes of the 5-point Gauss-Hermite rule; orbit weights
// are the minimum-norm solution of the moment-matching system over all
// generators with at most four nonzero coordinates (monomials above total
// degree 9 never involve more). In one dimension this reduces exactly to
// 5-point Gauss-Hermite.
inline QuadratureRule degree9_rule(int dim) {
    if (dim < 1 || dim > 6)
        throw ConfigError("degree9_rule: dimension must be in [1, 6]");
    const double r1sq = 5.0 - std::sqrt(10.0);
    const double r2sq = 5.0 + std::sqrt(10.0);

    std::vector<detail::Orbit> orbits{{0, 0}};
    for (int tot = 1; tot <= std::min(4, dim); ++tot)
        for (int n1 = 0; n1 <= tot; ++n1)
            orbits.push_back({n1, tot - n1});

    static const std::vector<std::vector<int>> all_patterns = {
        {},     {2},       {4},    {2, 2},    {6},          {4, 2},
        {2, 2, 2}, {8},    {6, 2}, {4, 4},    {4, 2, 2},    {2, 2, 2, 2}};
    static const double moments[] = {1.0, 0.0, 1.0, 0.0, 3.0,
                                     0.0, 15.0, 0.0, 105.0};

    std::vector<std::vector<int>> patterns;
    for (const auto& p : all_patterns)
        if (static_cast<int>(p.size()) <= dim) patterns.push_back(p);

    MatrixXd a(patterns.size(), orbits.size());
    VectorXd b(patterns.size());
    for (std::size_t r = 0; r < patterns.size(); ++r) {
        double rhs = 1.0;
        for (int e : patterns[r]) rhs *= moments[e];
        b(static_cast<Eigen::Index>(r)) = rhs;
        for (std::size_t c = 0; c < orbits.size(); ++c)
            a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                detail::orbit_monomial_sum(dim, orbits[c], r1sq, r2sq,
                                           patterns[r]);
    }
    VectorXd w = a.completeOrthogonalDecomposition().solve(b);
    if ((a * w - b).cwiseAbs().maxCoeff() > 1e-9)
        throw NumericalError("degree9_rule: moment system inconsistent");

    std::vector<VectorXd> nodes;
    std::vector<double> weights;
    for (std::size_t c = 0; c < orbits.size(); ++c) {
        if (std::abs(w(static_cast<Eigen::Index>(c))) < 1e-15) continue;
        detail::append_orbit_points(dim, orbits[c], std::sqrt(r1sq),
                                    std::sqrt(r2sq),
                                    w(static_cast<Eigen::Index>(c)), nodes,
                                    weights);
    }
    QuadratureRule rule;
    rule.degree = 9;
    rule.nodes.resize(static_cast<Eigen::Index>(nodes.size()), dim);
    rule.weights.resize(static_cast<Eigen::Index>(weights.size()));
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        rule.nodes.row(static_cast<Eigen::Index>(i)) = nodes[i].transpose();
        rule.weights(static_cast<Eigen::Index>(i)) = weights[i];
    }
    return rule;
}

// Fully symmetric degree-5 rule (2N^2 + 1 nodes, radius sqrt(3)): the
// classic spherical-radial family. Used for large modulator counts, where
// the degree-9 node budget is prohibitive; weights turn negative for
// N > 4 as usual for this construction.
inline QuadratureRule degree5_rule(int dim) {
    if (dim < 1) throw ConfigError("degree5_rule: dimension must be >= 1");
    const double n = static_cast<double>(dim);
    const double w0 = 1.0 + n * (n - 7.0) / 18.0;
    const double w1 = (4.0 - n) / 18.0;
    const double w2 = 1.0 / 36.0;
    const double r = std::sqrt(3.0);

    std::vector<VectorXd> nodes;
    std::vector<double> weights;
    detail::append_orbit_points(dim, {0, 0}, r, r, w0, nodes, weights);
    detail::append_orbit_points(dim, {1, 0}, r, r, w1, nodes, weights);
    if (dim >= 2)
        detail::append_orbit_points(dim, {2, 0}, r, r, w2, nodes, weights);

    QuadratureRule rule;
    rule.degree = 5;
    rule.nodes.resize(static_cast<Eigen::Index>(nodes.size()), dim);
    rule.weights.resize(static_cast<Eigen::Index>(weights.size()));
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        rule.nodes.row(static_cast<Eigen::Index>(i)) = nodes[i].transpose();
        rule.weights(static_cast<Eigen::Index>(i)) = weights[i];
    }
    return rule;
}

// Probabilists' Gauss-Hermite nodes/weights by Golub-Welsch.
inline std::pair<VectorXd, VectorXd> gauss_hermite_1d(int order) {
    MatrixXd j = MatrixXd::Zero(order, order);
    for (int i = 1; i < order; ++i) {
        const double b = std::sqrt(static_cast<double>(i));
        j(i - 1, i) = b;
        j(i, i - 1) = b;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(j);
    VectorXd nodes = es.eigenvalues();
    VectorXd weights(order);
    for (int i = 0; i < order; ++i) {
        const double v = es.eigenvectors()(0, i);
        weights(i) = v * v;
    }
    return {nodes, weights};
}

// Tensor-product Gauss-Hermite rule, degree 2*order - 1 per dimension.
// Reference rule for validating the sigma-point method; node budget kept
// explicit because the count is order^N.
inline QuadratureRule gauss_hermite_tensor(int dim, int order) {
    if (dim < 1 || dim > 4)
        throw ConfigError("gauss_hermite_tensor: dimension must be in [1, 4]");
    if (order < 1 || order > 20)
        throw ConfigError("gauss_hermite_tensor: order must be in [1, 20]");
    auto [n1, w1] = gauss_hermite_1d(order);
    const Eigen::Index count =
        static_cast<Eigen::Index>(std::pow(static_cast<double>(order), dim));
    QuadratureRule rule;
    rule.degree = 2 * order - 1;
    rule.nodes.resize(count, dim);
    rule.weights.resize(count);
    std::vector<int> odo(dim, 0);
    for (Eigen::Index i = 0; i < count; ++i) {
        double w = 1.0;
        for (int d = 0; d < dim; ++d) {
            rule.nodes(i, d) = n1(odo[d]);
            w *= w1(odo[d]);
        }
        rule.weights(i) = w;
        for (int d = 0; d < dim; ++d) {
            if (++odo[d] < order) break;
            odo[d] = 0;
        }
    }
    return rule;
}

// E[f(x)] for x ~ N(mean, diag(var)) via the given rule.
template <typename F>
double gaussian_expectation(F&& f, const VectorXd& mean, const VectorXd& var,
                            const QuadratureRule& rule) {
    if (mean.size() != rule.dimension() || var.size() != rule.dimension())
        throw ConfigError("gaussian_expectation: dimension mismatch");
    if ((var.array() <= 0.0).any())
        throw ConfigError("gaussian_expectation: variances must be > 0");
    const VectorXd sd = var.cwiseSqrt();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < rule.size(); ++i) {
        const VectorXd x =
            mean + sd.cwiseProduct(rule.nodes.row(i).transpose());
        const double v = f(x);
        if (!std::isfinite(v))
            throw NumericalError(
                "gaussian_expectation: non-finite integrand value");
        acc += rule.weights(i) * v;
    }
    return acc;
}

} // namespace gtfnmf
