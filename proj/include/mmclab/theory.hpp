#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>

#include "mmclab/covariance.hpp"
#include "mmclab/errors.hpp"
#include "mmclab/numerics.hpp"

namespace mmclab {

enum class Comparator { LowerBound, UpperBound, EqualityThreshold, BooleanCondition };

inline std::string to_string(Comparator c)
{
    switch (c) {
    case Comparator::LowerBound: return "lower-bound";
    case Comparator::UpperBound: return "upper-bound";
    case Comparator::EqualityThreshold: return "equality-threshold";
    default: return "boolean-condition";
    }
}

/// Closed-form prediction with named inputs and outputs.
struct TheoremPrediction {
    std::string theorem_id;
    std::map<std::string, double> inputs;
    std::map<std::string, double> values;
    Comparator comparator = Comparator::LowerBound;
    std::optional<bool> holds; ///< boolean-condition predictions only

    double value(const std::string& name) const
    {
        const auto it = values.find(name);
        if (it == values.end()) throw ArgumentError(theorem_id + ": no value named " + name);
        return it->second;
    }
};

/// Default Monte Carlo slack absorbed into every measured-vs-predicted comparison.
inline constexpr double kDefaultTolerance = 0.02;

/// Reference ceiling for any model on the model-1 true distribution.
inline constexpr double kDm1AccuracyCeiling = 0.85;

/// measured vs predicted under the comparator, with slack `tol`.
inline bool compare(Comparator c, double measured, double predicted, double tol = kDefaultTolerance)
{
    switch (c) {
    case Comparator::LowerBound: return measured >= predicted - tol;
    case Comparator::UpperBound: return measured <= predicted + tol;
    case Comparator::EqualityThreshold: return std::abs(measured - predicted) <= tol;
    default: return (measured != 0.0) == (predicted != 0.0);
    }
}

namespace detail {

inline void check_finite(const TheoremPrediction& pred)
{
    for (const auto& [name, v] : pred.values)
        if (!std::isfinite(v)) throw NumericError(pred.theorem_id + ": non-finite value " + name);
}

inline double dm1_denominator(double sigma_core, double sigma_spu, double p_spu, double core_weight)
{
    const double a = 1.0 + core_weight * sigma_core * sigma_core;
    const double b = 2.0 * p_spu - 1.0;
    const double den = std::sqrt(a * a * sigma_core * sigma_core + b * b * sigma_spu * sigma_spu);
    if (!(den > 0.0)) throw DomainError("degenerate denominator (sigma_core = sigma_spu = 0)");
    return den;
}

} // namespace detail

/// Supervised learner on model 1, overparameterized: overall <= 2/3, minority <= 1/3.
inline TheoremPrediction sl_dm1_bounds()
{
    TheoremPrediction pred;
    pred.theorem_id = "dm1-sl-ood";
    pred.values = {{"overall", 2.0 / 3.0}, {"minority", 1.0 / 3.0}};
    pred.comparator = Comparator::UpperBound;
    return pred;
}

/// MMCL zero-shot lower bounds on the model-1 true distribution.
inline TheoremPrediction mmcl_dm1_bound(double sigma_core, double sigma_spu, double p_spu)
{
    const double den = detail::dm1_denominator(sigma_core, sigma_spu, p_spu, 1.0);
    const double s2 = sigma_core * sigma_core;
    const double k1 = (2.0 * p_spu - 2.0 - s2) / den;
    const double k2 = (-2.0 * p_spu - s2) / den;
    TheoremPrediction pred;
    pred.theorem_id = "dm1-mmcl-ood";
    pred.inputs = {{"sigma_core", sigma_core}, {"sigma_spu", sigma_spu}, {"p_spu", p_spu}};
    pred.values = {{"kappa1", k1},
                   {"kappa2", k2},
                   {"overall", 1.0 - 0.5 * phi_cdf(k1) - 0.5 * phi_cdf(k2)},
                   {"minority", 1.0 - phi_cdf(k1)}};
    pred.comparator = Comparator::LowerBound;
    detail::check_finite(pred);
    return pred;
}

/// Supervised learner on exhaustive model-2 data: true-split accuracy upper bound.
inline TheoremPrediction sl_dm2_bound(double alpha, double beta)
{
    const double den = (1.0 + alpha * alpha) * (1.0 - beta) * (1.0 - beta) - 8.0;
    if (!(den > 0.0)) throw DomainError("sl_dm2_bound: bound vacuous ((1+a^2)(1-b)^2 <= 8)");
    TheoremPrediction pred;
    pred.theorem_id = "dm2-sl-ood";
    pred.inputs = {{"alpha", alpha}, {"beta", beta}};
    pred.values = {{"bound", 0.5 + 2.0 / den}};
    pred.comparator = Comparator::UpperBound;
    return pred;
}

/// Condition under which MMCL reaches 100% zero-shot accuracy on the model-2 true distribution.
inline TheoremPrediction mmcl_dm2_condition(int m, double alpha, double beta)
{
    if (m < 2 || !(alpha > 0.0) || !(beta >= 0.0 && beta < 1.0))
        throw ArgumentError("mmcl_dm2_condition: need m >= 2, alpha > 0, beta in [0, 1)");
    const double lhs = beta * beta * m;
    const double rhs = alpha * alpha * (1.0 + beta) / (1.0 - beta) - 1.0 + beta * beta;
    TheoremPrediction pred;
    pred.theorem_id = "dm2-mmcl-ood";
    pred.inputs = {{"m", static_cast<double>(m)}, {"alpha", alpha}, {"beta", beta}};
    pred.values = {{"lhs", lhs}, {"rhs", rhs}, {"accuracy", lhs > rhs ? 1.0 : 0.0}};
    pred.comparator = Comparator::BooleanCondition;
    pred.holds = lhs > rhs;
    return pred;
}

/// Caption-masked minority accuracy on model 1; the exponent selects pi_core or pi_core^2.
inline TheoremPrediction masked_dm1_minority(double sigma_core, double sigma_spu, double p_spu, double pi_core,
                                             MaskExponent exponent)
{
    if (!(pi_core >= 0.0 && pi_core <= 1.0)) throw ArgumentError("masked_dm1_minority: pi_core must lie in [0, 1]");
    const double e = exponent == MaskExponent::Linear ? pi_core : pi_core * pi_core;
    const double den = detail::dm1_denominator(sigma_core, sigma_spu, p_spu, e);
    const double k1 = (2.0 * p_spu - 2.0 - e * sigma_core * sigma_core) / den;
    TheoremPrediction pred;
    pred.theorem_id = "dm1-caption-minority-" + to_string(exponent);
    pred.inputs = {{"sigma_core", sigma_core}, {"sigma_spu", sigma_spu}, {"p_spu", p_spu}, {"pi_core", pi_core}};
    pred.values = {{"kappa1", k1}, {"minority", 1.0 - phi_cdf(k1)}};
    pred.comparator = Comparator::EqualityThreshold;
    detail::check_finite(pred);
    return pred;
}

/// Caption keep-probability above which MMCL is fully robust on model 2.
inline TheoremPrediction masked_dm2_threshold(int m, double alpha, double beta)
{
    if (m < 2) throw ArgumentError("masked_dm2_threshold: m must be >= 2");
    if (!(beta > 0.0 && beta < 1.0)) throw DomainError("masked_dm2_threshold: threshold undefined unless 0 < beta < 1");
    const double threshold =
        ((1.0 + beta) * alpha * alpha - 1.0 + beta) / ((1.0 - beta) * beta * beta * (m - 1.0));
    TheoremPrediction pred;
    pred.theorem_id = "dm2-caption-threshold";
    pred.inputs = {{"m", static_cast<double>(m)}, {"alpha", alpha}, {"beta", beta}};
    pred.values = {{"pi_threshold", threshold}};
    pred.comparator = Comparator::EqualityThreshold;
    detail::check_finite(pred);
    return pred;
}

/// In-distribution accuracy: SL lower bound (R > 1.51) and the MMCL value.
inline TheoremPrediction id_accuracy_predictions(double sigma_core, double sigma_spu, double p_spu)
{
    constexpr double r = 1.51;
    const double sl_den = std::sqrt(sigma_core * sigma_core + r * r * sigma_spu * sigma_spu);
    if (!(sl_den > 0.0)) throw DomainError("id_accuracy_predictions: degenerate denominator");
    const double mmcl_den = detail::dm1_denominator(sigma_core, sigma_spu, p_spu, 1.0);
    TheoremPrediction pred;
    pred.theorem_id = "dm1-id";
    pred.inputs = {{"sigma_core", sigma_core}, {"sigma_spu", sigma_spu}, {"p_spu", p_spu}};
    pred.values = {{"sl", phi_cdf((1.0 + r) / sl_den)},
                   {"mmcl", 1.0 - phi_cdf((-2.0 * p_spu - sigma_core * sigma_core) / mmcl_den)}};
    pred.comparator = Comparator::LowerBound;
    detail::check_finite(pred);
    return pred;
}

} // namespace mmclab
