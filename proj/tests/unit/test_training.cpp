#include <gtest/gtest.h>

#include "mmclab/training.hpp"

using namespace mmclab;

namespace {

ModalityConfig identity_cfg(Index d, Index l, double sigma = 0.0)
{
    return {identity_dictionary(d, l), sigma};
}

PairedDataset dm1_instance(std::uint64_t seed, Index n = 200, Index d = 32)
{
    RngStream rng(seed, 0);
    auto latents = sample_latents_dm1({1.0, 0.1, 0.9}, n, Split::Train, rng);
    return make_paired_dataset(latents, identity_cfg(d, 2, 0.5), identity_cfg(d, 2, 0.5), CaptionMask::none(), rng);
}

MMCLModel with_factors(const CrossCov& s, Index p, double rho)
{
    const SvdTop svd = svd_top(s.matrix, p);
    MMCLModel m;
    const Vector root = (svd.values / rho).cwiseSqrt();
    m.image_weights = root.asDiagonal() * svd.left.transpose();
    m.text_weights = root.asDiagonal() * svd.right.transpose();
    m.effective = m.image_weights->transpose() * *m.text_weights;
    m.p_dim = p;
    m.rho = rho;
    return m;
}

} // namespace

TEST(ClosedForm, DiagonalExamples)
{
    CrossCov s;
    s.matrix = Eigen::Vector2d(2.0, 1.0).asDiagonal();
    Matrix expected = Matrix::Zero(2, 2);
    expected(0, 0) = 4.0;
    EXPECT_LT((mmcl_fit_closed_form(s, 1, 0.5).effective - expected).norm(), 1e-14);
    EXPECT_LT((mmcl_fit_closed_form(s, 2, 1.0).effective - s.matrix).norm(), 1e-14);
    EXPECT_THROW(mmcl_fit_closed_form(s, 3, 1.0), DimensionError);
    EXPECT_THROW(mmcl_fit_closed_form(s, 1, 0.0), ArgumentError);
}

TEST(ClosedForm, PopulationDm1)
{
    const CrossCov s = population_cross_cov_dm1({1.0, 0.0, 1.0}, CaptionMask::none());
    Matrix expected(2, 2);
    expected << 2, 1, 1, 1;
    EXPECT_LT((mmcl_fit_closed_form(s, 2, 1.0).effective - expected).norm(), 1e-14);
}

TEST(ClosedForm, LiftsThroughDictionaries)
{
    RngStream rng(1, 0);
    const Dictionary di = make_dictionary(10, 2, DictionaryKind::RandomOrthonormal, rng);
    const Dictionary dt = make_dictionary(7, 2, DictionaryKind::RandomOrthonormal, rng);
    const CrossCov s = population_cross_cov_dm1({1.0, 0.0, 1.0}, CaptionMask::none());
    const MMCLModel m = mmcl_fit_closed_form(s, 2, 1.0, di, dt);
    EXPECT_EQ(m.effective.rows(), 10);
    EXPECT_EQ(m.effective.cols(), 7);
    EXPECT_LT((di.matrix.transpose() * m.effective * dt.matrix - s.matrix).norm(), 1e-12);
}

TEST(ClosedForm, FactorsReproduceEffectiveMatrix)
{
    RngStream rng(2, 0);
    const CrossCov s = empirical_cross_cov(dm1_instance(2));
    const MMCLModel m = mmcl_fit_closed_form(s, 2, 0.7);
    ASSERT_TRUE(m.has_factors());
    EXPECT_EQ(m.image_weights->rows(), 2);
    EXPECT_LT((m.image_weights->transpose() * *m.text_weights - m.effective).norm(), 1e-12 * m.effective.norm());
    const Dictionary di = make_dictionary(9, 2, DictionaryKind::RandomOrthonormal, rng);
    const Dictionary dt = make_dictionary(5, 2, DictionaryKind::RandomOrthonormal, rng);
    const MMCLModel lifted = mmcl_fit_closed_form(population_cross_cov_dm1({1.0, 0.0, 1.0}, CaptionMask::none()), 2, 1.0, di, dt);
    EXPECT_LT((lifted.image_weights->transpose() * *lifted.text_weights - lifted.effective).norm(), 1e-12);
}

TEST(ClosedForm, RhoScaling)
{
    const CrossCov s = empirical_cross_cov(dm1_instance(2));
    const Matrix g1 = mmcl_fit_closed_form(s, 2, 1.0).effective;
    const Matrix g2 = mmcl_fit_closed_form(s, 2, 2.0).effective;
    EXPECT_LT((g2 - 0.5 * g1).norm(), 1e-14 * g1.norm());
}

TEST(ClosedForm, RankAtMostP)
{
    const CrossCov s = empirical_cross_cov(dm1_instance(3));
    const Matrix g = mmcl_fit_closed_form(s, 2, 1.0).effective;
    Eigen::JacobiSVD<Matrix> svd(g);
    EXPECT_LT(svd.singularValues()(2), 1e-10 * svd.singularValues()(0));
}

TEST(Loss, ZeroWeightsGiveZero)
{
    const PairedDataset data = dm1_instance(4, 20, 6);
    MMCLModel m;
    m.image_weights = Matrix::Zero(2, 6);
    m.text_weights = Matrix::Zero(2, 6);
    EXPECT_EQ(mmcl_loss(m, data), 0.0);
}

TEST(Loss, PairwiseMatchesTraceForm)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RngStream rng(seed, 1);
        const PairedDataset data = dm1_instance(100 + seed, 60, 8);
        MMCLModel m;
        m.image_weights = rng.gaussian_matrix(3, 8);
        m.text_weights = rng.gaussian_matrix(3, 8);
        m.rho = 0.7;
        const double pairwise = mmcl_loss(m, data);
        const double trace =
            mmcl_loss_trace(*m.image_weights, *m.text_weights, empirical_cross_cov(data).matrix, m.rho);
        EXPECT_LT(std::abs(pairwise - trace), 1e-10 * std::abs(trace));
    }
}

TEST(Loss, ClosedFormIsLocallyOptimal)
{
    const PairedDataset data = dm1_instance(5, 100, 8);
    const CrossCov s = empirical_cross_cov(data);
    MMCLModel best = with_factors(s, 2, 1.0);
    const double base = mmcl_loss(best, data);
    RngStream rng(5, 1);
    for (int t = 0; t < 100; ++t) {
        MMCLModel other = best;
        *other.image_weights += rng.gaussian_matrix(2, 8, 1e-3);
        *other.text_weights += rng.gaussian_matrix(2, 8, 1e-3);
        EXPECT_LE(base, mmcl_loss(other, data) + 1e-12);
    }
}

TEST(Loss, NeedsFactorsAndPairs)
{
    MMCLModel m;
    EXPECT_THROW(mmcl_loss(m, dm1_instance(6, 10, 4)), ArgumentError);
}

TEST(Gd, MatchesClosedForm)
{
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const PairedDataset data = dm1_instance(10 + seed);
        RngStream rng(seed, 2);
        const MMCLModel gd = mmcl_fit_gd(data, 2, 1.0, GdOptions::mmcl_defaults(), rng);
        const MMCLModel cf = mmcl_fit_closed_form(empirical_cross_cov(data), 2, 1.0);
        EXPECT_LT((gd.effective - cf.effective).norm() / cf.effective.norm(), 1e-3);
        EXPECT_LT((gd.image_weights->transpose() * *gd.text_weights - gd.effective).norm() / gd.effective.norm(), 1e-8);
        EXPECT_EQ(gd.meta.method, "mmcl-gd");
    }
}

TEST(Gd, DivergenceReportsLearningRate)
{
    const PairedDataset data = dm1_instance(20);
    RngStream rng(20, 2);
    GdOptions opts = GdOptions::mmcl_defaults();
    opts.lr = 1e3;
    try {
        mmcl_fit_gd(data, 2, 1.0, opts, rng);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("lr=1000"), std::string::npos);
    }
}

TEST(Sl, OneDimensionalToy)
{
    Matrix x(2, 1);
    x << 2.0, -2.0;
    RngStream rng(1, 0);
    GdOptions opts = GdOptions::sl_defaults();
    opts.epochs = 2000;
    const SLModel m = sl_fit_gd(x, {0, 1}, 2, LossKind::Logistic, opts, rng);
    EXPECT_GT(m.weights(0, 0), 0.0);
    EXPECT_EQ(m.predict(x), (std::vector<int>{0, 1}));
}

TEST(Sl, Dm2ExhaustiveTrainIsSeparated)
{
    const DataModel2Params p{3, 10.0, 1.0 / 3.0};
    const auto latents = enumerate_latents_dm2(p, Split::Train);
    RngStream rng(2, 0);
    const Matrix x = project_images(latents, identity_cfg(6, 6), rng);
    GdOptions opts = GdOptions::sl_defaults();
    opts.epochs = 3000;
    const SLModel m = sl_fit_gd(x, class_indices(latents), 6, LossKind::CrossEntropy, opts, rng);
    EXPECT_EQ(m.predict(x), class_indices(latents));
}

TEST(Sl, DirectionApproachesHardMargin)
{
    RngStream rng(3, 0);
    const Index n = 40, d = 5;
    Matrix x(n, d);
    std::vector<int> labels(n);
    for (Index i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = i % 2;
        const double y = i % 2 == 0 ? 1.0 : -1.0;
        for (Index j = 0; j < d; ++j) x(i, j) = rng.normal(j == 0 ? 2.0 * y : 0.0, 0.5);
    }
    const Vector oracle = hard_margin_oracle(x, labels, 2).weights.col(0).normalized();
    std::vector<double> cosines;
    GdOptions opts{0.5, 200000, 1e-3, 0.0, 20000};
    const SLModel m = sl_fit_gd(x, labels, 2, LossKind::Logistic, opts, rng, [&](int, const Matrix& w) {
        cosines.push_back(w.col(0).normalized().dot(oracle));
    });
    ASSERT_FALSE(cosines.empty());
    for (std::size_t i = 1; i < cosines.size(); ++i) EXPECT_GE(cosines[i], cosines[i - 1] - 1e-12);
    EXPECT_GT(cosines.back(), 0.99);
    EXPECT_GT(m.weights.col(0).normalized().dot(oracle), 0.99);
}

TEST(Sl, RejectsBadLabels)
{
    RngStream rng(4, 0);
    const Matrix x = Matrix::Ones(3, 2);
    EXPECT_THROW(sl_fit_gd(x, {0, 0, 0}, 2, LossKind::Logistic, GdOptions::sl_defaults(), rng), ArgumentError);
    EXPECT_THROW(sl_fit_gd(x, {0, 3, 0}, 2, LossKind::Logistic, GdOptions::sl_defaults(), rng), ArgumentError);
    EXPECT_THROW(sl_fit_gd(x, {0, 1}, 2, LossKind::Logistic, GdOptions::sl_defaults(), rng), DimensionError);
}

TEST(Sl, DivergenceIsReported)
{
    Matrix x(2, 1);
    x << 1e100, 1e100; // same point, both labels: steps overshoot until overflow
    RngStream rng(5, 0);
    GdOptions opts = GdOptions::sl_defaults();
    opts.lr = 1e250;
    EXPECT_THROW(sl_fit_gd(x, {0, 1}, 2, LossKind::CrossEntropy, opts, rng), TrainingError);
}

TEST(HardMargin, OneDimensional)
{
    Matrix x(2, 1);
    x << 1.0, -1.0;
    const SLModel m = hard_margin_oracle(x, {0, 1}, 2);
    EXPECT_NEAR(m.weights(0, 0), 1.0, 1e-9);
}

TEST(HardMargin, OrthogonalPoints)
{
    const Matrix x = Matrix::Identity(2, 2);
    const SLModel m = hard_margin_oracle(x, {0, 1}, 2);
    EXPECT_NEAR(m.weights(0, 0), 1.0, 1e-9);
    EXPECT_NEAR(m.weights(1, 0), -1.0, 1e-9);
}

TEST(HardMargin, MulticlassMargins)
{
    const Matrix x = Matrix::Identity(3, 3);
    const SLModel m = hard_margin_oracle(x, {0, 1, 2}, 3);
    const Matrix scores = x * m.weights;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (i != j) {
                EXPECT_GE(scores(i, i) - scores(i, j), 1.0 - 1e-6);
            }
    // Minimum-norm solution: w_y = (2/3) e_y - (1/3) sum_{j != y} e_j.
    Matrix expected = -Matrix::Ones(3, 3) / 3.0 + Matrix::Identity(3, 3);
    EXPECT_LT((m.weights - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(HardMargin, InfeasibleInstance)
{
    Matrix x(2, 2);
    x << 1.0, 0.5, 1.0, 0.5;
    EXPECT_THROW(hard_margin_oracle(x, {0, 1}, 2), InfeasibleError);
    EXPECT_THROW(hard_margin_oracle(Matrix::Ones(501, 1), std::vector<int>(501, 0), 2), ArgumentError);
}

TEST(SupCon, Dm1RankOne)
{
    const double p = 0.9;
    const Vector mu = Eigen::Vector2d(1.0, 2 * p - 1);
    const SupConEncoder enc = supcon_fit_closed_form(supcon_cov_from_means_dm1(mu, -mu), 1, 1.0);
    const Vector u = mu.normalized();
    const double lambda = 2.0 * ((2 * p - 1) * (2 * p - 1) + 1.0);
    EXPECT_NEAR(enc.eigenvalues(0), lambda, 1e-12);
    const Matrix reps = enc.encode(Matrix(mu.transpose()));
    EXPECT_NEAR(std::abs(reps(0, 0)), std::sqrt(lambda) * u.dot(mu), 1e-12);
    const Matrix neg = enc.encode(Matrix(-mu.transpose()));
    EXPECT_NEAR(reps(0, 0), -neg(0, 0), 1e-15);
    EXPECT_THROW(supcon_fit_closed_form(supcon_cov_from_means_dm1(mu, -mu), 3, 1.0), DimensionError);
}

TEST(Probe, OneDimensional)
{
    Matrix reps(2, 1);
    reps << 1.0, -1.0;
    RngStream rng(6, 0);
    GdOptions opts = GdOptions::sl_defaults();
    opts.epochs = 2000;
    const ProbeModel probe = probe_fit(reps, {0, 1}, 2, opts, rng);
    EXPECT_EQ(probe.predict(Vector::Constant(1, 1.0)), 0);
    EXPECT_EQ(probe.predict(Vector::Constant(1, -1.0)), 1);
    EXPECT_GT(probe.weights(0, 0), probe.weights(1, 0));
}
