#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "mmclab/errors.hpp"

namespace mmclab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Mixes two integers into a stream id; used to derive per-(cell, trial) streams.
inline std::uint64_t stream_hash(std::uint64_t a, std::uint64_t b)
{
    return detail::splitmix64(detail::splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL));
}

/**
 * @brief Reproducible random stream identified by (root_seed, stream_id).
 *
 * The engine is seeded from a splitmix64 mix of both ids, so a given pair always
 * replays the same sequence no matter which thread consumes it. Streams are
 * cheap; give every trial or sample group its own.
 */
class RngStream {
public:
    RngStream(std::uint64_t root_seed, std::uint64_t stream_id)
        : root_seed_(root_seed), stream_id_(stream_id),
          engine_(detail::splitmix64(root_seed ^ detail::splitmix64(stream_id)))
    {}

    std::uint64_t root_seed() const noexcept { return root_seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Independent child stream; the parent is not advanced.
    RngStream child(std::uint64_t key) const { return {root_seed_, stream_hash(stream_id_, key)}; }

    double normal() { return normal_(engine_); }
    double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
    double uniform() { return std::generate_canonical<double, 53>(engine_); }
    bool bernoulli(double p) { return uniform() < p; }
    int rademacher() { return (engine_() >> 63) ? 1 : -1; }

    /// Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

    Matrix gaussian_matrix(Index rows, Index cols, double sd = 1.0)
    {
        Matrix out(rows, cols);
        for (Index j = 0; j < cols; ++j)
            for (Index i = 0; i < rows; ++i) out(i, j) = sd * normal();
        return out;
    }

private:
    std::uint64_t root_seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Standard normal CDF.
inline double phi_cdf(double x)
{
    if (!std::isfinite(x)) throw DomainError("phi_cdf: non-finite input");
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

enum class DictionaryKind { IdentityEmbed, RandomOrthonormal };

inline std::string to_string(DictionaryKind kind)
{
    return kind == DictionaryKind::IdentityEmbed ? "identity" : "random-orthonormal";
}

/// d×l matrix with orthonormal columns mapping latent features into an input space.
struct Dictionary {
    Matrix matrix;
    DictionaryKind kind = DictionaryKind::IdentityEmbed;

    Index ambient_dim() const { return matrix.rows(); }
    Index latent_dim() const { return matrix.cols(); }
};

inline Dictionary make_dictionary(Index d, Index l, DictionaryKind kind, RngStream& rng)
{
    if (l < 1 || d < l)
        throw DimensionError("make_dictionary: need d >= l >= 1, got d=" + std::to_string(d) +
                             " l=" + std::to_string(l));
    Dictionary dict;
    dict.kind = kind;
    if (kind == DictionaryKind::IdentityEmbed) {
        dict.matrix = Matrix::Identity(d, l);
        return dict;
    }
    const Matrix gauss = rng.gaussian_matrix(d, l);
    Eigen::HouseholderQR<Matrix> qr(gauss);
    Matrix q = qr.householderQ() * Matrix::Identity(d, l);
    // Fix column signs by diag(R) so the result is Haar-distributed and unique.
    const Matrix& r = qr.matrixQR();
    for (Index j = 0; j < l; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    dict.matrix = std::move(q);
    return dict;
}

/// Identity-embed dictionary without needing a stream.
inline Dictionary identity_dictionary(Index d, Index l)
{
    RngStream unused(0, 0);
    return make_dictionary(d, l, DictionaryKind::IdentityEmbed, unused);
}

/// Relative cutoff below which singular values count as numerically zero.
inline constexpr double kRankCutoff = 1e-9;

struct SvdTop {
    Vector values; ///< top-p singular values, descending
    Matrix left;   ///< columns u_1..u_p
    Matrix right;  ///< columns v_1..v_p
    Vector tail;   ///< remaining singular values
    double cutoff = 0.0;
    Index effective_rank = 0; ///< how many of the top-p values are >= cutoff

    bool below_cutoff(Index i) const { return values(i) < cutoff; }

    Matrix reconstruct() const { return left * values.asDiagonal() * right.transpose(); }
};

namespace detail {

// Largest-magnitude entry of each left vector made positive, right vector follows.
inline void canonicalize_signs(Matrix& left, Matrix& right)
{
    for (Index j = 0; j < left.cols(); ++j) {
        Index idx = 0;
        left.col(j).cwiseAbs().maxCoeff(&idx);
        if (left(idx, j) < 0) {
            left.col(j) = -left.col(j);
            right.col(j) = -right.col(j);
        }
    }
}

} // namespace detail

/// Best rank-p factorization of m (Eckart-Young), singular vectors sign-canonicalized.
inline SvdTop svd_top(const Matrix& m, Index p)
{
    const Index full = std::min(m.rows(), m.cols());
    if (p < 1 || p > full)
        throw DimensionError("svd_top: p=" + std::to_string(p) + " outside [1, " +
                             std::to_string(full) + "]");
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdTop out;
    out.values = svd.singularValues().head(p);
    out.tail = svd.singularValues().tail(full - p);
    out.left = svd.matrixU().leftCols(p);
    out.right = svd.matrixV().leftCols(p);
    detail::canonicalize_signs(out.left, out.right);
    const double top = full > 0 ? svd.singularValues()(0) : 0.0;
    out.cutoff = kRankCutoff * top;
    out.effective_rank = (out.values.array() >= out.cutoff).count();
    if (top == 0.0) out.effective_rank = 0;
    return out;
}

struct EigTop {
    Vector values;  ///< descending
    Matrix vectors; ///< matching columns
};

/// Top-p eigenpairs of a symmetric matrix.
inline EigTop eig_top_symmetric(const Matrix& m, Index p)
{
    if (m.rows() != m.cols()) throw DimensionError("eig_top_symmetric: matrix not square");
    if (p < 1 || p > m.rows())
        throw DimensionError("eig_top_symmetric: p=" + std::to_string(p) + " outside [1, " +
                             std::to_string(m.rows()) + "]");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
    const Index n = m.rows();
    EigTop out;
    out.values.resize(p);
    out.vectors.resize(n, p);
    for (Index i = 0; i < p; ++i) {
        out.values(i) = es.eigenvalues()(n - 1 - i);
        out.vectors.col(i) = es.eigenvectors().col(n - 1 - i);
    }
    Matrix dummy = out.vectors;
    detail::canonicalize_signs(out.vectors, dummy);
    return out;
}

} // namespace mmclab
