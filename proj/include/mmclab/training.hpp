#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmclab/covariance.hpp"
#include "mmclab/datagen.hpp"
#include "mmclab/errors.hpp"
#include "mmclab/numerics.hpp"

namespace mmclab {

/// Full-batch gradient descent settings.
struct GdOptions {
    double lr = 0.1;
    int epochs = 2000;
    double init_scale = 1e-3;
    double tolerance = 1e-8; ///< stop once the gradient norm falls below this
    int checkpoint_every = 0; ///< observer cadence for SL fits, 0 disables

    static GdOptions mmcl_defaults() { return {0.1, 2000, 1e-3, 1e-8, 0}; }
    static GdOptions sl_defaults() { return {0.05, 20000, 1e-3, 1e-8, 0}; }
};

struct TrainingMeta {
    std::string method;
    double lr = 0.0;
    int epochs_max = 0;
    int epochs_run = 0;
    double init_scale = 0.0;
    double final_loss = 0.0;
    double final_grad_norm = 0.0;
    bool converged = false;
};

/**
 * @brief Linear encoder pair g_I(x) = W_I x, g_T(x) = W_T x.
 *
 * Zero-shot predictions only depend on the effective matrix G = W_I^T W_T, so the
 * closed-form fit stores G alone.
 */
struct MMCLModel {
    std::optional<Matrix> image_weights; ///< p x d_I
    std::optional<Matrix> text_weights;  ///< p x d_T
    Matrix effective;                    ///< d_I x d_T
    Index p_dim = 0;
    double rho = 1.0;
    Vector singular_values; ///< closed form only: top-p singular values of S
    TrainingMeta meta;

    bool has_factors() const { return image_weights.has_value() && text_weights.has_value(); }
};

namespace detail {

inline Matrix truncated_minimizer(const Matrix& s, Index p_dim, double rho, MMCLModel& model)
{
    if (!(rho > 0.0)) throw ArgumentError("rho must be > 0");
    const SvdTop svd = svd_top(s, p_dim);
    model.singular_values = svd.values;
    // Balanced factors W_I = diag(sqrt(lambda/rho)) U^T, W_T = diag(sqrt(lambda/rho)) V^T.
    const Vector root = (svd.values / rho).cwiseSqrt();
    model.image_weights = root.asDiagonal() * svd.left.transpose();
    model.text_weights = root.asDiagonal() * svd.right.transpose();
    return svd.reconstruct() / rho;
}

} // namespace detail

/// G = (1/rho) sum_{i<=p} lambda_i u_i v_i^T from the top-p singular triplets of S.
inline MMCLModel mmcl_fit_closed_form(const CrossCov& cov, Index p_dim, double rho)
{
    MMCLModel model;
    model.effective = detail::truncated_minimizer(cov.scaled(), p_dim, rho, model);
    model.p_dim = p_dim;
    model.rho = rho;
    model.meta.method = "mmcl-closed";
    model.meta.converged = true;
    return model;
}

/// Closed form for a latent-space (population) S, lifted to D_I G D_T^T.
inline MMCLModel mmcl_fit_closed_form(const CrossCov& cov, Index p_dim, double rho,
                                      const Dictionary& image_dict, const Dictionary& text_dict)
{
    MMCLModel model = mmcl_fit_closed_form(cov, p_dim, rho);
    model.effective = lift(model.effective, image_dict, text_dict);
    model.image_weights = *model.image_weights * image_dict.matrix.transpose();
    model.text_weights = *model.text_weights * text_dict.matrix.transpose();
    return model;
}

/// -Tr(W_I S W_T^T) + rho/2 ||W_I^T W_T||_F^2.
inline double mmcl_loss_trace(const Matrix& image_weights, const Matrix& text_weights, const Matrix& s,
                              double rho)
{
    const Matrix g = image_weights.transpose() * text_weights;
    return -(g.cwiseProduct(s)).sum() + 0.5 * rho * g.squaredNorm();
}

/// Pairwise contrastive loss summed literally over ordered pairs (O(n^2 p), row-blocked).
inline double mmcl_loss(const MMCLModel& model, const PairedDataset& data)
{
    if (!model.has_factors()) throw ArgumentError("mmcl_loss: model has no encoder factors");
    const Index n = data.size();
    if (n < 2) throw ArgumentError("mmcl_loss: need n >= 2 pairs");
    const Matrix a = data.images * model.image_weights->transpose(); // n x p
    const Matrix b = data.texts * model.text_weights->transpose();   // n x p
    constexpr Index block = 512;
    double paired = 0.0;
    double row_contrast = 0.0; // sum_i sum_{j!=i} s_ij
    double col_contrast = 0.0; // sum_i sum_{j!=i} s_ji
    for (Index r0 = 0; r0 < n; r0 += block) {
        const Index rows = std::min(block, n - r0);
        const Matrix sim = a.middleRows(r0, rows) * b.transpose(); // s_ij for i in block
        for (Index i = 0; i < rows; ++i) {
            const double sii = sim(i, r0 + i);
            paired += sii;
            row_contrast += sim.row(i).sum() - sii;
        }
    }
    for (Index c0 = 0; c0 < n; c0 += block) {
        const Index cols = std::min(block, n - c0);
        const Matrix sim_t = b.middleRows(c0, cols) * a.transpose(); // s_ji for j in block
        for (Index j = 0; j < cols; ++j) col_contrast += sim_t.row(j).sum() - sim_t(j, c0 + j);
    }
    const double nd = static_cast<double>(n);
    const double norm = 2.0 * nd * (nd - 1.0);
    const double pair_terms = (row_contrast - (nd - 1.0) * paired) / norm +
                              (col_contrast - (nd - 1.0) * paired) / norm;
    const Matrix g = model.image_weights->transpose() * *model.text_weights;
    return pair_terms + 0.5 * model.rho * g.squaredNorm();
}

/// Gradient descent on the encoder factors from a small Gaussian start.
inline MMCLModel mmcl_fit_gd(const PairedDataset& data, Index p_dim, double rho, const GdOptions& opts,
                             RngStream& rng)
{
    if (data.size() < 2) throw ArgumentError("mmcl_fit_gd: need n >= 2 pairs");
    if (!(opts.lr > 0.0)) throw ArgumentError("mmcl_fit_gd: lr must be > 0");
    if (!(rho > 0.0)) throw ArgumentError("mmcl_fit_gd: rho must be > 0");
    if (p_dim < 1) throw DimensionError("mmcl_fit_gd: p_dim must be >= 1");
    const Matrix s = empirical_cross_cov(data).matrix;
    Matrix wi = rng.gaussian_matrix(p_dim, s.rows(), opts.init_scale);
    Matrix wt = rng.gaussian_matrix(p_dim, s.cols(), opts.init_scale);

    MMCLModel model;
    model.p_dim = p_dim;
    model.rho = rho;
    model.meta.method = "mmcl-gd";
    model.meta.lr = opts.lr;
    model.meta.epochs_max = opts.epochs;
    model.meta.init_scale = opts.init_scale;

    double grad_norm = 0.0;
    int epoch = 0;
    for (; epoch < opts.epochs; ++epoch) {
        const Matrix residual = rho * (wi.transpose() * wt) - s; // dL/dG
        const Matrix gi = wt * residual.transpose();
        const Matrix gt = wi * residual;
        grad_norm = std::sqrt(gi.squaredNorm() + gt.squaredNorm());
        if (!std::isfinite(grad_norm)) {
            std::ostringstream msg;
            msg << "mmcl_fit_gd diverged at epoch " << epoch << " (lr=" << opts.lr << ")";
            throw TrainingError(msg.str());
        }
        if (grad_norm < opts.tolerance) break;
        wi -= opts.lr * gi;
        wt -= opts.lr * gt;
    }
    model.meta.final_loss = mmcl_loss_trace(wi, wt, s, rho);
    if (!std::isfinite(model.meta.final_loss)) {
        std::ostringstream msg;
        msg << "mmcl_fit_gd diverged (lr=" << opts.lr << ")";
        throw TrainingError(msg.str());
    }
    model.meta.epochs_run = epoch;
    model.meta.final_grad_norm = grad_norm;
    model.meta.converged = grad_norm < opts.tolerance;
    model.effective = wi.transpose() * wt;
    model.image_weights = std::move(wi);
    model.text_weights = std::move(wt);
    return model;
}

enum class LossKind { Logistic, CrossEntropy };

/// Supervised linear model f(x) = W^T x. Logistic fits keep a single column.
struct SLModel {
    Matrix weights; ///< d x 1 (logistic) or d x q
    int num_classes = 2;
    LossKind loss = LossKind::CrossEntropy;
    TrainingMeta meta;

    /// Class index; logistic maps w^T x >= 0 to class 0. Ties go to the lowest index.
    int predict(const Eigen::Ref<const Vector>& x) const;
    std::vector<int> predict(const Matrix& x) const;
};

namespace detail {

inline int argmax_lowest(const Eigen::Ref<const Vector>& scores)
{
    int best = 0;
    for (Index j = 1; j < scores.size(); ++j)
        if (scores(j) > scores(best)) best = static_cast<int>(j);
    return best;
}

inline void validate_labels(const Matrix& x, const std::vector<int>& labels, int num_classes,
                            const char* who)
{
    if (static_cast<Index>(labels.size()) != x.rows())
        throw DimensionError(std::string(who) + ": label count does not match rows");
    if (num_classes < 2) throw ArgumentError(std::string(who) + ": need >= 2 classes");
    std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
    for (int c : labels) {
        if (c < 0 || c >= num_classes) throw ArgumentError(std::string(who) + ": label out of range");
        seen[static_cast<std::size_t>(c)] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2)
        throw ArgumentError(std::string(who) + ": labels must cover at least two classes");
    if (!x.allFinite()) throw ArgumentError(std::string(who) + ": non-finite inputs");
}

[[noreturn]] inline void diverged(const char* who, int epoch, double lr)
{
    std::ostringstream msg;
    msg << who << " diverged at epoch " << epoch << " (lr=" << lr << ")";
    throw TrainingError(msg.str());
}

inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

using WeightObserver = std::function<void(int epoch, const Matrix& weights)>;

// Binary logistic regression; targets +1 for class 0, -1 for class 1.
inline Matrix logistic_gd(const Matrix& x, const std::vector<int>& labels, const GdOptions& opts,
                          RngStream& rng, TrainingMeta& meta, const WeightObserver& observer)
{
    const Index n = x.rows();
    Vector y(n);
    for (Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)] == 0 ? 1.0 : -1.0;
    Vector w = rng.gaussian_matrix(x.cols(), 1, opts.init_scale).col(0);
    double loss = 0.0;
    double grad_norm = 0.0;
    int epoch = 0;
    Vector coeff(n);
    for (; epoch < opts.epochs; ++epoch) {
        const Vector margins = y.cwiseProduct(x * w);
        loss = 0.0;
        for (Index i = 0; i < n; ++i) {
            loss += softplus(-margins(i));
            coeff(i) = y(i) / (1.0 + std::exp(margins(i)));
        }
        loss /= static_cast<double>(n);
        if (!std::isfinite(loss)) diverged("sl_fit_gd", epoch, opts.lr);
        const Vector grad = -(x.transpose() * coeff) / static_cast<double>(n);
        grad_norm = grad.norm();
        if (!std::isfinite(grad_norm)) diverged("sl_fit_gd", epoch, opts.lr);
        if (grad_norm < opts.tolerance) break;
        w -= opts.lr * grad;
        if (observer && opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0)
            observer(epoch + 1, w);
    }
    meta.epochs_run = epoch;
    meta.final_loss = loss;
    meta.final_grad_norm = grad_norm;
    meta.converged = grad_norm < opts.tolerance;
    return w;
}

// Multiclass softmax cross-entropy; returns d x q.
inline Matrix softmax_gd(const Matrix& x, const std::vector<int>& labels, int q, const GdOptions& opts,
                         RngStream& rng, TrainingMeta& meta, const WeightObserver& observer,
                         const char* who)
{
    const Index n = x.rows();
    Matrix w = rng.gaussian_matrix(x.cols(), q, opts.init_scale);
    Matrix probs(n, q);
    double loss = 0.0;
    double grad_norm = 0.0;
    int epoch = 0;
    for (; epoch < opts.epochs; ++epoch) {
        probs = x * w;
        loss = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double top = probs.row(i).maxCoeff();
            probs.row(i).array() = (probs.row(i).array() - top).exp();
            const double z = probs.row(i).sum();
            const int y = labels[static_cast<std::size_t>(i)];
            loss += std::log(z) - std::log(probs(i, y));
            probs.row(i) /= z;
            probs(i, y) -= 1.0;
        }
        loss /= static_cast<double>(n);
        if (!std::isfinite(loss)) diverged(who, epoch, opts.lr);
        const Matrix grad = x.transpose() * probs / static_cast<double>(n);
        grad_norm = grad.norm();
        if (!std::isfinite(grad_norm)) diverged(who, epoch, opts.lr);
        if (grad_norm < opts.tolerance) break;
        w -= opts.lr * grad;
        if (observer && opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0)
            observer(epoch + 1, w);
    }
    meta.epochs_run = epoch;
    meta.final_loss = loss;
    meta.final_grad_norm = grad_norm;
    meta.converged = grad_norm < opts.tolerance;
    return w;
}

} // namespace detail

inline int SLModel::predict(const Eigen::Ref<const Vector>& x) const
{
    if (loss == LossKind::Logistic) return (weights.col(0).dot(x) >= 0.0) ? 0 : 1;
    const Vector scores = weights.transpose() * x;
    return detail::argmax_lowest(scores);
}

inline std::vector<int> SLModel::predict(const Matrix& x) const
{
    const Matrix scores = x * weights;
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Index i = 0; i < x.rows(); ++i) {
        if (!scores.row(i).allFinite()) throw NumericError("SL prediction: non-finite score");
        out[static_cast<std::size_t>(i)] = loss == LossKind::Logistic
                                               ? (scores(i, 0) >= 0.0 ? 0 : 1)
                                               : detail::argmax_lowest(scores.row(i).transpose());
    }
    return out;
}

/**
 * Logistic (binary) or cross-entropy (multiclass) regression by full-batch GD.
 * `labels` are class indices in [0, num_classes). The observer, if set, sees the
 * weights every `opts.checkpoint_every` epochs.
 */
inline SLModel sl_fit_gd(const Matrix& images, const std::vector<int>& labels, int num_classes,
                         LossKind kind, const GdOptions& opts, RngStream& rng,
                         const detail::WeightObserver& observer = {})
{
    detail::validate_labels(images, labels, num_classes, "sl_fit_gd");
    if (!(opts.lr > 0.0)) throw ArgumentError("sl_fit_gd: lr must be > 0");
    if (kind == LossKind::Logistic && num_classes != 2)
        throw ArgumentError("sl_fit_gd: logistic loss needs exactly two classes");
    SLModel model;
    model.num_classes = num_classes;
    model.loss = kind;
    model.meta.method = kind == LossKind::Logistic ? "sl-logistic" : "sl-cross-entropy";
    model.meta.lr = opts.lr;
    model.meta.epochs_max = opts.epochs;
    model.meta.init_scale = opts.init_scale;
    if (kind == LossKind::Logistic)
        model.weights = detail::logistic_gd(images, labels, opts, rng, model.meta, observer);
    else
        model.weights =
            detail::softmax_gd(images, labels, num_classes, opts, rng, model.meta, observer, "sl_fit_gd");
    return model;
}

struct HardMarginOptions {
    int max_sweeps = 50000;
    double feasibility_tol = 1e-9;
};

/**
 * @brief Minimum-norm linear separator with pairwise margins >= 1, by dual coordinate ascent.
 *
 * Binary problems return a single column (w^T x >= 1 for class 0, <= -1 for
 * class 1); multiclass problems enforce (w_y - w_y')^T x >= 1 for every y' != y.
 * Test oracle only: restricted to n, d <= 500.
 */
inline SLModel hard_margin_oracle(const Matrix& images, const std::vector<int>& labels, int num_classes,
                                  const HardMarginOptions& opts = {})
{
    detail::validate_labels(images, labels, num_classes, "hard_margin_oracle");
    const Index n = images.rows();
    const Index d = images.cols();
    if (n > 500 || d > 500) throw ArgumentError("hard_margin_oracle: instance too large (n, d <= 500)");
    Vector sq_norms = images.rowwise().squaredNorm();
    for (Index i = 0; i < n; ++i)
        if (sq_norms(i) == 0.0) throw InfeasibleError("hard_margin_oracle: zero input cannot meet a margin");

    const bool binary = num_classes == 2;
    const int q = binary ? 1 : num_classes;
    Matrix w = Matrix::Zero(d, q);
    // alpha(i, j): dual variable of constraint (i, j); binary uses column 0 only.
    Matrix alpha = Matrix::Zero(n, binary ? 1 : num_classes);
    auto margin = [&](Index i, int j) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (binary) return (y == 0 ? 1.0 : -1.0) * w.col(0).dot(images.row(i));
        return (w.col(y) - w.col(j)).dot(images.row(i));
    };

    double worst = 0.0;
    int sweep = 0;
    for (; sweep < opts.max_sweeps; ++sweep) {
        for (Index i = 0; i < n; ++i) {
            const int y = labels[static_cast<std::size_t>(i)];
            for (int j = 0; j < (binary ? 1 : num_classes); ++j) {
                if (!binary && j == y) continue;
                const double curvature = binary ? sq_norms(i) : 2.0 * sq_norms(i);
                const double step = std::max(-alpha(i, j), (1.0 - margin(i, j)) / curvature);
                if (step == 0.0) continue;
                alpha(i, j) += step;
                if (binary) {
                    w.col(0) += step * (y == 0 ? 1.0 : -1.0) * images.row(i).transpose();
                } else {
                    w.col(y) += step * images.row(i).transpose();
                    w.col(j) -= step * images.row(i).transpose();
                }
            }
        }
        // Primal feasibility plus complementary slackness.
        worst = 0.0;
        double slack = 0.0;
        for (Index i = 0; i < n; ++i) {
            const int y = labels[static_cast<std::size_t>(i)];
            for (int j = 0; j < (binary ? 1 : num_classes); ++j) {
                if (!binary && j == y) continue;
                const double g = 1.0 - margin(i, j);
                worst = std::max(worst, g);
                if (alpha(i, j) > 0.0) slack = std::max(slack, std::abs(g));
            }
        }
        if (worst <= opts.feasibility_tol && slack <= 1e-7) break;
        const double dual = alpha.sum() - 0.5 * w.squaredNorm() * (binary ? 1.0 : 1.0);
        if (!std::isfinite(dual) || dual > 1e12) break;
    }
    if (worst > 1e-6)
        throw InfeasibleError("hard_margin_oracle: no separating solution (max violation " +
                              std::to_string(worst) + ")");
    SLModel model;
    model.weights = std::move(w);
    model.num_classes = num_classes;
    model.loss = binary ? LossKind::Logistic : LossKind::CrossEntropy;
    model.meta.method = "hard-margin";
    model.meta.epochs_run = sweep;
    model.meta.converged = true;
    return model;
}

/// SupCon encoder W (p x d) whose rows are sqrt(lambda_i / rho) u_i^T.
struct SupConEncoder {
    Matrix weights;
    Vector eigenvalues;
    double rho = 1.0;

    Matrix encode(const Matrix& x) const { return x * weights.transpose(); }
};

inline SupConEncoder supcon_fit_closed_form(const ClassMeanCov& cov, Index p_dim, double rho)
{
    if (!(rho > 0.0)) throw ArgumentError("supcon_fit_closed_form: rho must be > 0");
    const EigTop eig = eig_top_symmetric(cov.matrix, p_dim);
    SupConEncoder enc;
    enc.rho = rho;
    enc.eigenvalues = eig.values;
    enc.weights.resize(p_dim, cov.matrix.rows());
    for (Index i = 0; i < p_dim; ++i)
        enc.weights.row(i) = std::sqrt(std::max(0.0, eig.values(i)) / rho) * eig.vectors.col(i).transpose();
    return enc;
}

/// Linear classifier B (q x p) on frozen representations.
struct ProbeModel {
    Matrix weights;
    TrainingMeta meta;

    int predict(const Eigen::Ref<const Vector>& rep) const
    {
        const Vector scores = weights * rep;
        return detail::argmax_lowest(scores);
    }
};

inline ProbeModel probe_fit(const Matrix& representations, const std::vector<int>& labels, int num_classes,
                            const GdOptions& opts, RngStream& rng)
{
    detail::validate_labels(representations, labels, num_classes, "probe_fit");
    if (!(opts.lr > 0.0)) throw ArgumentError("probe_fit: lr must be > 0");
    ProbeModel probe;
    probe.meta.method = "probe-cross-entropy";
    probe.meta.lr = opts.lr;
    probe.meta.epochs_max = opts.epochs;
    probe.meta.init_scale = opts.init_scale;
    probe.weights = detail::softmax_gd(representations, labels, num_classes, opts, rng, probe.meta, {},
                                       "probe_fit")
                        .transpose();
    return probe;
}

} // namespace mmclab
