#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "mmclab/errors.hpp"
#include "mmclab/numerics.hpp"

namespace mmclab {

enum class DataModelKind { DM1, DM2 };
enum class Split { Train, True };

inline std::string to_string(Split split) { return split == Split::Train ? "train" : "true"; }

/// Two-feature model: high-variance core feature, low-variance spurious feature.
struct DataModel1Params {
    double sigma_core = 1.0;
    double sigma_spu = 0.0;
    double p_spu = 1.0;

    static constexpr Index latent_dim() { return 2; }
    static constexpr int num_classes() { return 2; }

    void validate() const
    {
        if (!(sigma_core > 0.0)) throw ArgumentError("sigma_core must be > 0");
        if (!(sigma_spu >= 0.0)) throw ArgumentError("sigma_spu must be >= 0");
        if (!(p_spu > 0.5 && p_spu <= 1.0)) throw ArgumentError("p_spu must lie in (0.5, 1]");
    }
};

/// 2m classes; coordinate k is the core feature of class (k, c), k+m its spurious partner.
struct DataModel2Params {
    int m = 2;
    double alpha = 1.0;
    double beta = 0.0;

    Index latent_dim() const { return 2 * m; }
    int num_classes() const { return 2 * m; }

    void validate() const
    {
        if (m < 2) throw ArgumentError("m must be >= 2");
        if (!(alpha > 0.0)) throw ArgumentError("alpha must be > 0");
        if (!(beta >= 0.0 && beta < 1.0)) throw ArgumentError("beta must lie in [0, 1)");
    }
};

using DataModelParams = std::variant<DataModel1Params, DataModel2Params>;

inline Index latent_dim(const DataModelParams& params)
{
    return std::visit([](const auto& p) { return p.latent_dim(); }, params);
}

inline int num_classes(const DataModelParams& params)
{
    return std::visit([](const auto& p) { return p.num_classes(); }, params);
}

/**
 * @brief One underlying feature vector with its label metadata.
 *
 * Model 1: label y in {-1,+1}, spurious attribute a in {-1,+1}.
 * Model 2: label y in {1..2m} with alias k = (y+1)/2, c = +1 for odd y.
 */
struct LatentSample {
    Vector z;
    int label = 0;
    int spurious = 0; ///< a (model 1 only)
    int alias_k = 0;  ///< model 2 only, 1-based
    int alias_c = 0;  ///< model 2 only
    DataModelKind model = DataModelKind::DM1;

    /// 0-based class index: model 1 orders (+1, -1); model 2 uses y-1.
    int class_index() const
    {
        if (model == DataModelKind::DM1) return label == 1 ? 0 : 1;
        return label - 1;
    }

    /// Whether the spurious feature agrees with the label (a == y, or sign(z_{k+m}) == c).
    bool spurious_agrees() const
    {
        if (model == DataModelKind::DM1) return spurious == label;
        const Index m = z.size() / 2;
        const double s = z(alias_k - 1 + m);
        return (s > 0 ? 1 : -1) == alias_c;
    }
};

inline int dm1_label_from_index(int index) { return index == 0 ? 1 : -1; }

inline LatentSample make_dm2_header(int y)
{
    LatentSample s;
    s.model = DataModelKind::DM2;
    s.label = y;
    s.alias_k = (y + 1) / 2;
    s.alias_c = (y % 2 == 1) ? 1 : -1;
    return s;
}

inline std::vector<LatentSample> sample_latents_dm1(const DataModel1Params& params, Index n,
                                                    Split split, RngStream& rng)
{
    params.validate();
    if (n < 1) throw ArgumentError("sample_latents_dm1: n must be >= 1");
    std::vector<LatentSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        LatentSample s;
        s.model = DataModelKind::DM1;
        s.label = rng.rademacher();
        if (split == Split::Train)
            s.spurious = rng.bernoulli(params.p_spu) ? s.label : -s.label;
        else
            s.spurious = rng.rademacher();
        s.z.resize(2);
        s.z(0) = rng.normal(s.label, params.sigma_core);
        s.z(1) = rng.normal(s.spurious, params.sigma_spu);
        out.push_back(std::move(s));
    }
    return out;
}

/// Row cap for exhaustive model-2 enumeration.
inline constexpr std::uint64_t kEnumerationCap = std::uint64_t{1} << 22;

/// 2m * 4^(m-1) rows for the train split, twice that for the true split.
inline std::uint64_t dm2_enumeration_count(int m, Split split)
{
    if (m < 1) return 0;
    const int free_bits = 2 * (m - 1) + (split == Split::True ? 1 : 0);
    if (free_bits > 60) return UINT64_MAX;
    const std::uint64_t per_class = std::uint64_t{1} << free_bits;
    const std::uint64_t classes = 2 * static_cast<std::uint64_t>(m);
    if (per_class > UINT64_MAX / classes) return UINT64_MAX;
    return classes * per_class;
}

inline bool dm2_enumerable(int m, Split split)
{
    return dm2_enumeration_count(m, split) <= kEnumerationCap;
}

namespace detail {

// Fills z for class (k, c); `sign_of(slot)` returns +/-1 for the slot-th free coordinate.
template <typename SignSource>
void fill_dm2(LatentSample& s, const DataModel2Params& p, Split split, SignSource&& sign_of)
{
    const int m = p.m;
    const int k = s.alias_k - 1;
    s.z.setZero(2 * m);
    int slot = 0;
    for (int j = 0; j < m; ++j) {
        if (j == k)
            s.z(j) = s.alias_c;
        else
            s.z(j) = p.beta * sign_of(slot++);
    }
    for (int j = m; j < 2 * m; ++j) {
        if (j == k + m)
            s.z(j) = split == Split::Train ? s.alias_c * p.alpha : p.alpha * sign_of(slot++);
        else
            s.z(j) = p.beta * p.alpha * sign_of(slot++);
    }
}

} // namespace detail

/// Every admissible sign pattern exactly once, classes in label order.
inline std::vector<LatentSample> enumerate_latents_dm2(const DataModel2Params& params, Split split)
{
    params.validate();
    const std::uint64_t count = dm2_enumeration_count(params.m, split);
    if (count > kEnumerationCap)
        throw SizeError("enumerate_latents_dm2: " + std::to_string(count) +
                        " rows exceed the cap of " + std::to_string(kEnumerationCap));
    const std::uint64_t per_class = count / static_cast<std::uint64_t>(2 * params.m);
    std::vector<LatentSample> out;
    out.reserve(count);
    for (int y = 1; y <= 2 * params.m; ++y) {
        for (std::uint64_t bits = 0; bits < per_class; ++bits) {
            LatentSample s = make_dm2_header(y);
            detail::fill_dm2(s, params, split,
                             [bits](int slot) { return ((bits >> slot) & 1U) ? -1 : 1; });
            out.push_back(std::move(s));
        }
    }
    return out;
}

inline std::vector<LatentSample> sample_latents_dm2(const DataModel2Params& params, Index n,
                                                    Split split, RngStream& rng)
{
    params.validate();
    if (n < 1) throw ArgumentError("sample_latents_dm2: n must be >= 1");
    std::vector<LatentSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        LatentSample s = make_dm2_header(rng.uniform_int(1, 2 * params.m));
        detail::fill_dm2(s, params, split, [&rng](int) { return rng.rademacher(); });
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<LatentSample> sample_latents(const DataModelParams& params, Index n, Split split,
                                                RngStream& rng)
{
    if (const auto* p1 = std::get_if<DataModel1Params>(&params))
        return sample_latents_dm1(*p1, n, split, rng);
    return sample_latents_dm2(std::get<DataModel2Params>(params), n, split, rng);
}

/// Per-modality projection settings: x = D mu(z) + xi, xi ~ N(0, sigma^2/d I).
struct ModalityConfig {
    Dictionary dictionary;
    double noise_sigma = 0.0;

    Index ambient_dim() const { return dictionary.ambient_dim(); }
    Index latent_dim() const { return dictionary.latent_dim(); }
};

struct NoMask {};
struct Model1Mask {
    double pi_core = 1.0;
    double pi_spu = 1.0;
};
struct Model2Mask {
    double pi = 1.0;
};

/// Caption masking settings; the per-sample Bernoulli draws are never stored.
struct CaptionMask {
    std::variant<NoMask, Model1Mask, Model2Mask> variant;

    static CaptionMask none() { return {NoMask{}}; }
    static CaptionMask model1(double pi_core, double pi_spu) { return {Model1Mask{pi_core, pi_spu}}; }
    static CaptionMask model2(double pi) { return {Model2Mask{pi}}; }

    bool is_none() const { return std::holds_alternative<NoMask>(variant); }

    void validate() const
    {
        auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (const auto* m1 = std::get_if<Model1Mask>(&variant)) {
            if (!in_unit(m1->pi_core) || !in_unit(m1->pi_spu))
                throw ArgumentError("mask probabilities must lie in [0, 1]");
        } else if (const auto* m2 = std::get_if<Model2Mask>(&variant)) {
            if (!in_unit(m2->pi)) throw ArgumentError("mask probability must lie in [0, 1]");
        }
    }
};

/// Text-side features mu_T(z) with fresh Bernoulli draws.
inline Vector mask_caption_features(const LatentSample& sample, const CaptionMask& mask, RngStream& rng)
{
    mask.validate();
    if (mask.is_none()) return sample.z;
    if (const auto* m1 = std::get_if<Model1Mask>(&mask.variant)) {
        if (sample.model != DataModelKind::DM1)
            throw ConfigurationError("model-1 caption mask applied to a model-2 sample");
        const bool keep_core = rng.bernoulli(m1->pi_core);
        const bool keep_spu = rng.bernoulli(m1->pi_spu);
        Vector out(2);
        out(0) = sample.label + (keep_core ? sample.z(0) - sample.label : 0.0);
        out(1) = sample.spurious + (keep_spu ? sample.z(1) - sample.spurious : 0.0);
        return out;
    }
    const auto& m2 = std::get<Model2Mask>(mask.variant);
    if (sample.model != DataModelKind::DM2)
        throw ConfigurationError("model-2 caption mask applied to a model-1 sample");
    Vector out = sample.z;
    const Index class_coord = sample.alias_k - 1;
    for (Index j = 0; j < out.size(); ++j)
        if (j != class_coord && !rng.bernoulli(m2.pi)) out(j) = 0.0;
    return out;
}

/// Aligned image/text inputs; row i of both matrices derives from latents[i].
struct PairedDataset {
    Matrix images;
    Matrix texts;
    std::vector<LatentSample> latents;

    Index size() const { return images.rows(); }
};

namespace detail {

inline void check_latent_dim(const std::vector<LatentSample>& latents, const ModalityConfig& cfg,
                             const char* who)
{
    for (const auto& s : latents)
        if (s.z.size() != cfg.latent_dim())
            throw DimensionError(std::string(who) + ": latent dim " + std::to_string(s.z.size()) +
                                 " does not match dictionary latent dim " +
                                 std::to_string(cfg.latent_dim()));
}

inline void add_noise(Eigen::Ref<Vector> row, const ModalityConfig& cfg, RngStream& rng)
{
    if (cfg.noise_sigma == 0.0) return;
    const double sd = cfg.noise_sigma / std::sqrt(static_cast<double>(cfg.ambient_dim()));
    for (Index j = 0; j < row.size(); ++j) row(j) += sd * rng.normal();
}

} // namespace detail

/// Image-modality inputs only (mu_I is the identity).
inline Matrix project_images(const std::vector<LatentSample>& latents, const ModalityConfig& cfg,
                             RngStream& rng)
{
    detail::check_latent_dim(latents, cfg, "project_images");
    const Index n = static_cast<Index>(latents.size());
    Matrix z(n, cfg.latent_dim());
    for (Index i = 0; i < n; ++i) z.row(i) = latents[static_cast<std::size_t>(i)].z.transpose();
    Matrix x = z * cfg.dictionary.matrix.transpose();
    if (cfg.noise_sigma != 0.0) {
        Vector row(cfg.ambient_dim());
        for (Index i = 0; i < n; ++i) {
            row.setZero();
            detail::add_noise(row, cfg, rng);
            x.row(i) += row.transpose();
        }
    }
    return x;
}

inline PairedDataset make_paired_dataset(std::vector<LatentSample> latents, const ModalityConfig& image_cfg,
                                         const ModalityConfig& text_cfg, const CaptionMask& mask,
                                         RngStream& rng)
{
    detail::check_latent_dim(latents, image_cfg, "make_paired_dataset");
    detail::check_latent_dim(latents, text_cfg, "make_paired_dataset");
    mask.validate();
    const Index n = static_cast<Index>(latents.size());
    PairedDataset data;
    data.images.resize(n, image_cfg.ambient_dim());
    data.texts.resize(n, text_cfg.ambient_dim());
    Vector xi(image_cfg.ambient_dim());
    Vector xt(text_cfg.ambient_dim());
    for (Index i = 0; i < n; ++i) {
        const auto& s = latents[static_cast<std::size_t>(i)];
        xi = image_cfg.dictionary.matrix * s.z;
        detail::add_noise(xi, image_cfg, rng);
        xt = text_cfg.dictionary.matrix * mask_caption_features(s, mask, rng);
        detail::add_noise(xt, text_cfg, rng);
        data.images.row(i) = xi.transpose();
        data.texts.row(i) = xt.transpose();
    }
    data.latents = std::move(latents);
    return data;
}

inline std::vector<int> class_indices(const std::vector<LatentSample>& latents)
{
    std::vector<int> out;
    out.reserve(latents.size());
    for (const auto& s : latents) out.push_back(s.class_index());
    return out;
}

} // namespace mmclab
