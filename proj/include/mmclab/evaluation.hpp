#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmclab/datagen.hpp"
#include "mmclab/errors.hpp"
#include "mmclab/numerics.hpp"
#include "mmclab/training.hpp"

namespace mmclab {

/// One prompt per class, rows ordered by class index.
struct PromptSet {
    Matrix prompts;      ///< q x d_T, row y is p_y = D_T zbar_y
    Matrix latent_means; ///< q x l

    int num_classes() const { return static_cast<int>(prompts.rows()); }
};

inline PromptSet build_prompts(const DataModel1Params& params, const Dictionary& text_dict)
{
    params.validate();
    if (text_dict.latent_dim() != 2) throw DimensionError("build_prompts: dictionary latent dim must be 2");
    PromptSet out;
    out.latent_means = Matrix::Zero(2, 2);
    out.latent_means(0, 0) = 1.0;
    out.latent_means(1, 0) = -1.0;
    out.prompts = out.latent_means * text_dict.matrix.transpose();
    return out;
}

inline PromptSet build_prompts(const DataModel2Params& params, const Dictionary& text_dict)
{
    params.validate();
    const int m = params.m;
    if (text_dict.latent_dim() != 2 * m)
        throw DimensionError("build_prompts: dictionary latent dim must be 2m = " + std::to_string(2 * m));
    PromptSet out;
    out.latent_means = Matrix::Zero(2 * m, 2 * m);
    for (int y = 1; y <= 2 * m; ++y) {
        const LatentSample h = make_dm2_header(y);
        out.latent_means(y - 1, h.alias_k - 1) = h.alias_c;
    }
    out.prompts = out.latent_means * text_dict.matrix.transpose();
    return out;
}

inline PromptSet build_prompts(const DataModelParams& params, const Dictionary& text_dict)
{
    return std::visit([&](const auto& p) { return build_prompts(p, text_dict); }, params);
}

/// arg max_y x^T G p_y, lowest index on ties.
inline int zero_shot_predict(const MMCLModel& model, const Eigen::Ref<const Vector>& x, const PromptSet& prompts)
{
    if (x.size() != model.effective.rows() || prompts.prompts.cols() != model.effective.cols())
        throw DimensionError("zero_shot_predict: shapes do not match G");
    const Vector scores = prompts.prompts * (model.effective.transpose() * x);
    if (!scores.allFinite()) throw NumericError("zero_shot_predict: non-finite score");
    return detail::argmax_lowest(scores);
}

enum class EvalMode { Auto, Sampled, Exhaustive };

inline std::string to_string(EvalMode mode)
{
    switch (mode) {
    case EvalMode::Sampled: return "sampled";
    case EvalMode::Exhaustive: return "exhaustive";
    default: return "auto";
    }
}

/// Where evaluation inputs come from.
struct EvalSampler {
    DataModelParams params;
    Split split = Split::True;
    ModalityConfig image;
    EvalMode mode = EvalMode::Auto; ///< auto: model 2 enumerates when under the cap
};

struct GroupStat {
    Index count = 0;
    Index correct = 0;
    double accuracy = 0.0;
    double mc_radius = 0.0;
    bool minority = false;
    bool low_count = false; ///< fewer than 50 samples
};

inline double mc_radius(double acc, Index n)
{
    return n > 0 ? 1.96 * std::sqrt(acc * (1.0 - acc) / static_cast<double>(n)) : 0.0;
}

struct EvalReport {
    double overall_accuracy = 0.0;
    Index n_eval = 0;
    Index n_correct = 0;
    double mc_radius = 0.0;
    Split split = Split::True;
    EvalMode mode = EvalMode::Sampled; ///< resolved, never Auto
    std::map<std::string, GroupStat> groups;

    /// Pooled accuracy over groups with the given minority flag; NaN when none exist.
    double pooled_accuracy(bool minority) const
    {
        Index count = 0;
        Index correct = 0;
        for (const auto& [key, g] : groups)
            if (g.minority == minority) {
                count += g.count;
                correct += g.correct;
            }
        return count > 0 ? static_cast<double>(correct) / static_cast<double>(count) : std::nan("");
    }
    double minority_accuracy() const { return pooled_accuracy(true); }
    double majority_accuracy() const { return pooled_accuracy(false); }
    Index minority_count() const
    {
        Index count = 0;
        for (const auto& [key, g] : groups)
            if (g.minority) count += g.count;
        return count;
    }
};

/// Group key and minority flag: "y=+1,a=-1" for model 1, "y=3,agree" for model 2.
inline std::pair<std::string, bool> group_of(const LatentSample& s)
{
    if (s.model == DataModelKind::DM1) {
        std::string key = std::string("y=") + (s.label > 0 ? "+1" : "-1") + ",a=" + (s.spurious > 0 ? "+1" : "-1");
        return {key, s.spurious != s.label};
    }
    const bool agrees = s.spurious_agrees();
    return {"y=" + std::to_string(s.label) + (agrees ? ",agree" : ",disagree"), !agrees};
}

/// Maps a batch of image rows to predicted class indices.
using BatchPredictor = std::function<std::vector<int>(const Matrix& images)>;

namespace detail {

inline constexpr Index kEvalBatch = 4096;

inline void tally(EvalReport& report, const std::vector<LatentSample>& latents, const std::vector<int>& predicted)
{
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const auto [key, minority] = group_of(latents[i]);
        GroupStat& g = report.groups[key];
        g.minority = minority;
        ++g.count;
        if (predicted[i] == latents[i].class_index()) {
            ++g.correct;
            ++report.n_correct;
        }
        ++report.n_eval;
    }
}

inline void finalize(EvalReport& report)
{
    if (report.n_eval == 0) throw ArgumentError("evaluation produced no samples");
    report.overall_accuracy = static_cast<double>(report.n_correct) / static_cast<double>(report.n_eval);
    report.mc_radius = mc_radius(report.overall_accuracy, report.n_eval);
    for (auto& [key, g] : report.groups) {
        g.accuracy = static_cast<double>(g.correct) / static_cast<double>(g.count);
        g.mc_radius = mc_radius(g.accuracy, g.count);
        g.low_count = g.count < 50;
    }
}

inline void check_sampler(const EvalSampler& sampler)
{
    if (sampler.image.latent_dim() != latent_dim(sampler.params))
        throw ConfigurationError("evaluation sampler: image dictionary latent dim does not match the data model");
}

} // namespace detail

/// Evaluates on explicitly supplied latents; images are projected batch by batch.
inline EvalReport evaluate_latents(const BatchPredictor& predict, const std::vector<LatentSample>& latents,
                                   const ModalityConfig& image, Split split, EvalMode mode, RngStream& rng)
{
    EvalReport report;
    report.split = split;
    report.mode = mode;
    const std::size_t n = latents.size();
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(detail::kEvalBatch)) {
        const std::size_t stop = std::min(n, start + static_cast<std::size_t>(detail::kEvalBatch));
        const std::vector<LatentSample> batch(latents.begin() + static_cast<std::ptrdiff_t>(start),
                                              latents.begin() + static_cast<std::ptrdiff_t>(stop));
        const Matrix images = project_images(batch, image, rng);
        const std::vector<int> predicted = predict(images);
        if (predicted.size() != batch.size()) throw DimensionError("predictor returned the wrong count");
        detail::tally(report, batch, predicted);
    }
    detail::finalize(report);
    return report;
}

/**
 * Draws (or enumerates) evaluation latents from the sampler and scores `predict`.
 * `n_eval` is ignored in exhaustive mode.
 */
inline EvalReport evaluate(const BatchPredictor& predict, const EvalSampler& sampler, Index n_eval, RngStream& rng)
{
    detail::check_sampler(sampler);
    EvalMode mode = sampler.mode;
    const auto* p2 = std::get_if<DataModel2Params>(&sampler.params);
    if (mode == EvalMode::Auto) mode = (p2 && dm2_enumerable(p2->m, sampler.split)) ? EvalMode::Exhaustive : EvalMode::Sampled;
    if (mode == EvalMode::Exhaustive) {
        if (!p2) throw ConfigurationError("exhaustive evaluation requires data model 2");
        return evaluate_latents(predict, enumerate_latents_dm2(*p2, sampler.split), sampler.image, sampler.split, mode,
                                rng);
    }
    if (n_eval < 1) throw ArgumentError("evaluate: n_eval must be >= 1");
    // Sample in batches so large d_I never materializes n_eval x d_I at once.
    EvalReport report;
    report.split = sampler.split;
    report.mode = mode;
    for (Index done = 0; done < n_eval; done += detail::kEvalBatch) {
        const Index rows = std::min(detail::kEvalBatch, n_eval - done);
        const auto latents = sample_latents(sampler.params, rows, sampler.split, rng);
        const Matrix images = project_images(latents, sampler.image, rng);
        detail::tally(report, latents, predict(images));
    }
    detail::finalize(report);
    return report;
}

inline BatchPredictor zero_shot_predictor(const MMCLModel& model, const PromptSet& prompts)
{
    if (prompts.prompts.cols() != model.effective.cols())
        throw ConfigurationError("prompt dimension does not match the text side of G");
    const Matrix text_side = model.effective * prompts.prompts.transpose(); // d_I x q
    return [text_side](const Matrix& images) {
        if (images.cols() != text_side.rows()) throw DimensionError("zero-shot: image dimension does not match G");
        const Matrix scores = images * text_side;
        std::vector<int> out(static_cast<std::size_t>(images.rows()));
        for (Index i = 0; i < images.rows(); ++i) {
            if (!scores.row(i).allFinite()) throw NumericError("zero-shot: non-finite score");
            out[static_cast<std::size_t>(i)] = detail::argmax_lowest(scores.row(i).transpose());
        }
        return out;
    };
}

inline EvalReport evaluate_zero_shot(const MMCLModel& model, const PromptSet& prompts, const EvalSampler& sampler,
                                     Index n_eval, RngStream& rng)
{
    if (prompts.num_classes() != num_classes(sampler.params))
        throw ConfigurationError("evaluate_zero_shot: prompt count does not match the data model");
    return evaluate(zero_shot_predictor(model, prompts), sampler, n_eval, rng);
}

inline EvalReport evaluate_sl(const SLModel& model, const EvalSampler& sampler, Index n_eval, RngStream& rng)
{
    if (model.num_classes != num_classes(sampler.params))
        throw ConfigurationError("evaluate_sl: model class count does not match the data model");
    return evaluate([&model](const Matrix& images) { return model.predict(images); }, sampler, n_eval, rng);
}

inline BatchPredictor probe_predictor(const SupConEncoder& encoder, const ProbeModel& probe)
{
    const Matrix combined = probe.weights * encoder.weights; // q x d
    return [combined](const Matrix& images) {
        const Matrix scores = images * combined.transpose();
        std::vector<int> out(static_cast<std::size_t>(images.rows()));
        for (Index i = 0; i < images.rows(); ++i) {
            if (!scores.row(i).allFinite()) throw NumericError("probe: non-finite score");
            out[static_cast<std::size_t>(i)] = detail::argmax_lowest(scores.row(i).transpose());
        }
        return out;
    };
}

inline EvalReport evaluate_probe(const SupConEncoder& encoder, const ProbeModel& probe, const EvalSampler& sampler,
                                 Index n_eval, RngStream& rng)
{
    if (probe.weights.rows() != num_classes(sampler.params))
        throw ConfigurationError("evaluate_probe: probe class count does not match the data model");
    return evaluate(probe_predictor(encoder, probe), sampler, n_eval, rng);
}

/// Mean representations of the four (c, sign z_{k+m}) groups of one class pair k.
struct PairGeometry {
    int k = 0; ///< 1-based
    /// Order: (-1,-), (+1,-), (-1,+), (+1,+).
    std::array<double, 4> coefficients{};
    std::array<std::string, 4> ordering; ///< group labels sorted by ascending coefficient
    double residual = 0.0;
};

struct GroupGeometry {
    double max_residual = 0.0;
    std::vector<PairGeometry> pairs;
};

inline const std::array<std::string, 4>& geometry_group_labels()
{
    static const std::array<std::string, 4> labels{"(-1,-)", "(+1,-)", "(-1,+)", "(+1,+)"};
    return labels;
}

/**
 * @brief Collinearity of SupCon group means per class pair.
 *
 * Residual is the largest distance of a group mean to the best-fit (centered
 * PCA) line; coefficients are projections on that line, signed so (+1,+) is
 * positive.
 */
inline GroupGeometry supcon_group_geometry(const SupConEncoder& encoder, const Matrix& images,
                                           const std::vector<LatentSample>& latents)
{
    if (static_cast<Index>(latents.size()) != images.rows())
        throw DimensionError("supcon_group_geometry: latents and image rows differ");
    if (latents.empty() || latents.front().model != DataModelKind::DM2)
        throw ArgumentError("supcon_group_geometry: needs model-2 data");
    const Matrix reps = encoder.encode(images);
    const int m = static_cast<int>(latents.front().z.size() / 2);
    const Index p = reps.cols();
    auto slot = [](int c, bool spurious_positive) { return (c > 0 ? 1 : 0) + (spurious_positive ? 2 : 0); };

    GroupGeometry out;
    for (int k = 1; k <= m; ++k) {
        std::array<Vector, 4> sums;
        std::array<Index, 4> counts{};
        for (auto& s : sums) s = Vector::Zero(p);
        for (std::size_t i = 0; i < latents.size(); ++i) {
            const LatentSample& s = latents[i];
            if (s.alias_k != k) continue;
            const int g = slot(s.alias_c, s.z(k - 1 + m) > 0);
            sums[static_cast<std::size_t>(g)] += reps.row(static_cast<Index>(i)).transpose();
            ++counts[static_cast<std::size_t>(g)];
        }
        Matrix means(4, p);
        for (int g = 0; g < 4; ++g) {
            if (counts[static_cast<std::size_t>(g)] == 0)
                throw ArgumentError("supcon_group_geometry: group " + geometry_group_labels()[static_cast<std::size_t>(g)] +
                                    " of pair k=" + std::to_string(k) + " is empty");
            means.row(g) = sums[static_cast<std::size_t>(g)].transpose() / static_cast<double>(counts[static_cast<std::size_t>(g)]);
        }
        const Vector centroid = means.colwise().mean().transpose();
        const Matrix centered = means.rowwise() - centroid.transpose();
        Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinV);
        Vector dir = svd.matrixV().col(0);
        if (dir.dot(means.row(3).transpose()) < 0) dir = -dir;

        PairGeometry pg;
        pg.k = k;
        for (int g = 0; g < 4; ++g) {
            const Vector offset = centered.row(g).transpose();
            pg.residual = std::max(pg.residual, (offset - offset.dot(dir) * dir).norm());
            pg.coefficients[static_cast<std::size_t>(g)] = means.row(g).dot(dir);
        }
        std::array<int, 4> order{0, 1, 2, 3};
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return pg.coefficients[static_cast<std::size_t>(a)] < pg.coefficients[static_cast<std::size_t>(b)];
        });
        for (int g = 0; g < 4; ++g)
            pg.ordering[static_cast<std::size_t>(g)] = geometry_group_labels()[static_cast<std::size_t>(order[static_cast<std::size_t>(g)])];
        out.max_residual = std::max(out.max_residual, pg.residual);
        out.pairs.push_back(pg);
    }
    return out;
}

} // namespace mmclab
