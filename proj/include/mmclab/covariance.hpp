#pragma once

#include <string>
#include <vector>

#include "mmclab/datagen.hpp"
#include "mmclab/errors.hpp"
#include "mmclab/numerics.hpp"

namespace mmclab {

enum class Provenance { Empirical, Population };

/**
 * @brief Image/text cross-covariance whose top singular subspace the MMCL minimizer spans.
 *
 * Empirical matrices live in ambient space (d_I x d_T); population matrices are
 * emitted in latent space (l x l) and lifted by the trainer. `scale` is a free
 * positive constant multiplying the matrix; it never changes an argmax.
 */
struct CrossCov {
    Matrix matrix;
    Provenance provenance = Provenance::Empirical;
    Index n_samples = 0; ///< only meaningful for empirical provenance
    double scale = 1.0;

    Matrix scaled() const { return scale * matrix; }
};

/// Which exponent on pi_core the masked model-1 covariance uses.
enum class MaskExponent { Linear, Squared };

inline std::string to_string(MaskExponent e) { return e == MaskExponent::Linear ? "linear" : "squared"; }

/// S = 1/n sum_i x_I,i x_T,i^T - 1/(n(n-1)) sum_{i!=j} x_I,i x_T,j^T, in O(n d_I d_T).
inline CrossCov empirical_cross_cov(const Matrix& images, const Matrix& texts)
{
    const Index n = images.rows();
    if (texts.rows() != n) throw DimensionError("empirical_cross_cov: row counts differ");
    if (n < 2) throw ArgumentError("empirical_cross_cov: need n >= 2 pairs");
    const double nd = static_cast<double>(n);
    const Matrix paired = images.transpose() * texts;
    const Vector sum_i = images.colwise().sum().transpose();
    const Vector sum_t = texts.colwise().sum().transpose();
    const Matrix unpaired = sum_i * sum_t.transpose() - paired;
    CrossCov out;
    out.matrix = paired / nd - unpaired / (nd * (nd - 1.0));
    out.provenance = Provenance::Empirical;
    out.n_samples = n;
    return out;
}

inline CrossCov empirical_cross_cov(const PairedDataset& data)
{
    return empirical_cross_cov(data.images, data.texts);
}

/// Latent-space population cross-covariance for data model 1 (optionally caption-masked).
inline CrossCov population_cross_cov_dm1(const DataModel1Params& params, const CaptionMask& mask,
                                         MaskExponent exponent = MaskExponent::Linear)
{
    params.validate();
    mask.validate();
    double pi_core = 1.0;
    double pi_spu = 1.0;
    if (const auto* m1 = std::get_if<Model1Mask>(&mask.variant)) {
        pi_core = m1->pi_core;
        pi_spu = m1->pi_spu;
    } else if (!mask.is_none()) {
        throw ConfigurationError("population_cross_cov_dm1: mask must be none or model1");
    }
    if (exponent == MaskExponent::Squared) {
        pi_core *= pi_core;
        pi_spu *= pi_spu;
    }
    const double rho = 2.0 * params.p_spu - 1.0;
    CrossCov out;
    out.matrix.resize(2, 2);
    out.matrix << 1.0 + pi_core * params.sigma_core * params.sigma_core, rho,
        rho, 1.0 + pi_spu * params.sigma_spu * params.sigma_spu;
    out.provenance = Provenance::Population;
    return out;
}

/// Latent-space population cross-covariance for data model 2 with caption keep-probability pi.
inline CrossCov population_cross_cov_dm2(const DataModel2Params& params, double pi)
{
    params.validate();
    if (!(pi >= 0.0 && pi <= 1.0)) throw ArgumentError("population_cross_cov_dm2: pi must lie in [0, 1]");
    const int m = params.m;
    const double md = m;
    const double a = params.alpha;
    const double b2 = params.beta * params.beta;
    const Matrix id = Matrix::Identity(m, m);
    CrossCov out;
    out.matrix.resize(2 * m, 2 * m);
    out.matrix.topLeftCorner(m, m) = (1.0 + pi * (md - 1.0) * b2) / md * id;
    out.matrix.topRightCorner(m, m) = pi * a / md * id;
    out.matrix.bottomLeftCorner(m, m) = a / md * id;
    out.matrix.bottomRightCorner(m, m) = pi * a * a * (1.0 + (md - 1.0) * b2) / md * id;
    out.provenance = Provenance::Population;
    return out;
}

/// D_I S D_T^T: latent-space matrix expressed between two ambient spaces.
inline Matrix lift(const Matrix& latent, const Dictionary& image_dict, const Dictionary& text_dict)
{
    if (latent.rows() != image_dict.latent_dim() || latent.cols() != text_dict.latent_dim())
        throw DimensionError("lift: latent matrix does not match dictionary latent dims");
    return image_dict.matrix * latent * text_dict.matrix.transpose();
}

/// SupCon statistic built from per-class image means.
struct ClassMeanCov {
    Matrix matrix;
    std::vector<Vector> class_means; ///< indexed by LatentSample::class_index()
};

namespace detail {

inline std::vector<Vector> class_means(const Matrix& images, const std::vector<LatentSample>& latents,
                                       int num_classes)
{
    if (static_cast<Index>(latents.size()) != images.rows())
        throw DimensionError("class means: latents and image rows differ");
    std::vector<Vector> sums(static_cast<std::size_t>(num_classes), Vector::Zero(images.cols()));
    std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
    for (Index i = 0; i < images.rows(); ++i) {
        const int c = latents[static_cast<std::size_t>(i)].class_index();
        if (c < 0 || c >= num_classes) throw ArgumentError("class means: class index out of range");
        sums[static_cast<std::size_t>(c)] += images.row(i).transpose();
        ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < num_classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw ArgumentError("class means: class index " + std::to_string(c) + " has no samples");
        sums[static_cast<std::size_t>(c)] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    return sums;
}

} // namespace detail

/// Model 1: 1/2 (sum_y m_y m_y^T - sum_y m_y m_{-y}^T) from the two class means.
inline ClassMeanCov supcon_cov_from_means_dm1(const Vector& mean_pos, const Vector& mean_neg)
{
    if (mean_pos.size() != mean_neg.size()) throw DimensionError("class means differ in size");
    ClassMeanCov out;
    out.matrix = 0.5 * (mean_pos * mean_pos.transpose() + mean_neg * mean_neg.transpose() -
                        mean_pos * mean_neg.transpose() - mean_neg * mean_pos.transpose());
    out.class_means = {mean_pos, mean_neg};
    return out;
}

/// Model 2: 1/(2m-1) sum_y m_y m_y^T.
inline ClassMeanCov supcon_cov_from_means_dm2(const std::vector<Vector>& means)
{
    if (means.size() < 2) throw ArgumentError("supcon_cov_from_means_dm2: need at least two classes");
    const Index d = means.front().size();
    ClassMeanCov out;
    out.matrix = Matrix::Zero(d, d);
    for (const auto& mu : means) {
        if (mu.size() != d) throw DimensionError("class means differ in size");
        out.matrix += mu * mu.transpose();
    }
    out.matrix /= static_cast<double>(means.size()) - 1.0;
    out.class_means = means;
    return out;
}

inline ClassMeanCov supcon_class_mean_cov(const Matrix& images, const std::vector<LatentSample>& latents,
                                          DataModelKind model)
{
    if (latents.empty()) throw ArgumentError("supcon_class_mean_cov: no samples");
    if (model == DataModelKind::DM1) {
        const auto means = detail::class_means(images, latents, 2);
        return supcon_cov_from_means_dm1(means[0], means[1]);
    }
    const int classes = static_cast<int>(latents.front().z.size());
    return supcon_cov_from_means_dm2(detail::class_means(images, latents, classes));
}

inline ClassMeanCov supcon_class_mean_cov(const PairedDataset& data, DataModelKind model)
{
    return supcon_class_mean_cov(data.images, data.latents, model);
}

} // namespace mmclab
