#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qmkl/diagnostics.hpp"

using namespace qmkl;

namespace {

Matrix with_offdiagonal(std::size_t m, double v) {
    Matrix K(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) K(i, j) = i == j ? 1.0 : v;
    return K;
}

} // namespace

TEST(ConcentrationStats, Examples) {
    const auto s = concentration_stats(with_offdiagonal(4, 0.3), 2);
    EXPECT_NEAR(s.offdiag_mean, 0.3, 1e-15);
    EXPECT_NEAR(s.offdiag_variance, 0.0, 1e-15);
    EXPECT_EQ(s.count, 6u);
    EXPECT_NEAR(s.fq_distance, 0.05, 1e-15);  // |0.3 - 1/4|

    const auto three = concentration_stats(Matrix::from_rows({{1, 0, 1}, {0, 1, 1}, {1, 1, 1}}), 1);
    EXPECT_NEAR(three.offdiag_mean, 2.0 / 3.0, 1e-15);

    const auto ones = concentration_stats(with_offdiagonal(5, 1.0), 3);
    EXPECT_EQ(ones.pq_distance, 0.0);
    EXPECT_THROW(concentration_stats(Matrix::identity(1), 1), usage_error);
}

TEST(ConcentrationStats, TwoPointMoments) {
    // six off-diagonals, half 0 and half 1
    Matrix K = Matrix::identity(4);
    const double vals[6] = {0, 1, 0, 1, 0, 1};
    int k = 0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) K(i, j) = K(j, i) = vals[k++];
    const auto s = concentration_stats(K, 2);
    EXPECT_NEAR(s.offdiag_mean, 0.5, 1e-15);
    EXPECT_NEAR(s.offdiag_variance, 0.25, 1e-15);
    EXPECT_NEAR(s.pq_distance, 0.5, 1e-15);
}

TEST(OlsCompare, ExactAffineMaps) {
    const auto R = oracle::random_psd(8, 3, 1);
    auto f = ols_compare(R, R);
    EXPECT_NEAR(f.slope, 1.0, 1e-12);
    EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
    f = ols_compare(R, 2.0 * R);
    EXPECT_NEAR(f.slope, 2.0, 1e-12);
    EXPECT_NEAR(f.intercept, 0.0, 1e-12);
    EXPECT_NEAR(f.r_squared, 1.0, 1e-10);
    Matrix shifted = -0.5 * R;
    for (double& v : shifted.data()) v += 3.0;
    f = ols_compare(R, shifted);
    EXPECT_NEAR(f.slope, -0.5, 1e-12);
    EXPECT_NEAR(f.intercept, 3.0, 1e-12);
    EXPECT_NEAR(f.r_squared, 1.0, 1e-10);
    EXPECT_EQ(f.count, 28u);
}

TEST(OlsCompare, NonAffineHasRSquaredBelowOne) {
    const auto R = oracle::random_psd(8, 3, 2);
    Matrix E = R;
    for (double& v : E.data()) v = v * v;
    EXPECT_LT(ols_compare(R, E).r_squared, 1.0 - 1e-6);
}

TEST(OlsCompare, NoiseOnNearConstantReference) {
    const std::size_t m = 30;
    Matrix R(m, m), E(m, m);
    Xoshiro256 rng(2024);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i; j < m; ++j) {
            const double r = 0.5 + 1e-3 * rng.uniform();
            // Box-Muller normal draw with σ = 0.5
            const double u1 = std::max(rng.uniform(), 1e-300), u2 = rng.uniform();
            const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
            R(i, j) = R(j, i) = r;
            E(i, j) = E(j, i) = r + 0.5 * z;
        }
    EXPECT_LT(ols_compare(R, E).r_squared, 0.2);
}

TEST(OlsCompare, Errors) {
    EXPECT_THROW(ols_compare(with_offdiagonal(4, 0.2), oracle::random_psd(4, 2, 3)), degenerate_input_error);
    EXPECT_THROW(ols_compare(Matrix::identity(3), Matrix::identity(4)), usage_error);
    EXPECT_THROW(ols_fit(std::vector<double>{1.0}, std::vector<double>{1.0}), usage_error);
}

TEST(ShotSweep, MillionShotsFitNearIdentity) {
    const auto X = oracle::random_matrix(12, 3, 4);
    const auto spec = parse_spec("Z-ZZ", 1.0, 1);
    const std::vector<std::uint64_t> shots = {1'000'000};
    const std::vector<std::uint64_t> seeds = {0, 1, 2};
    for (auto kind : {KernelKind::fidelity, KernelKind::projected}) {
        const auto rows = shot_sweep(spec, X, kind, shots, seeds);
        ASSERT_EQ(rows.size(), 1u);
        EXPECT_NEAR(rows[0].mean_fit.slope, 1.0, 0.02) << to_string(kind);
        EXPECT_GT(rows[0].mean_fit.r_squared, 0.99) << to_string(kind);
        EXPECT_EQ(rows[0].fits.size(), 3u);
    }
}

TEST(ShotSweep, SingleShotIsWorseThanTenThousand) {
    const auto X = oracle::random_matrix(14, 3, 5);
    const auto spec = parse_spec("Y-XZ", 1.0, 1);
    const std::vector<std::uint64_t> shots = {1, 10000};
    const std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
    for (auto kind : {KernelKind::fidelity, KernelKind::projected}) {
        const auto rows = shot_sweep(spec, X, kind, shots, seeds);
        EXPECT_LT(rows[0].mean_fit.r_squared, rows[1].mean_fit.r_squared) << to_string(kind);
    }
    EXPECT_THROW(shot_sweep(spec, X, KernelKind::rbf, shots, seeds), usage_error);
    EXPECT_THROW(shot_sweep(spec, X, KernelKind::fidelity, std::vector<std::uint64_t>{}, seeds), usage_error);
}

TEST(Concentration, FidelityVarianceShrinksWithQubits) {
    const auto spec = parse_spec("Z-ZZ", 2.0, 1);
    const auto small = fidelity_matrix(spec, oracle::random_matrix(50, 4, 6));
    const auto large = fidelity_matrix(spec, oracle::random_matrix(50, 12, 6));
    EXPECT_LT(concentration_stats(large.values, 12).offdiag_variance,
              concentration_stats(small.values, 4).offdiag_variance);
}

TEST(TidyCsv, HeaderAndRows) {
    std::vector<TidyRow> rows;
    TidyRow base{"german", 3, 6, "fidelity", "", 0, "", 0.0};
    append_stats(rows, base, concentration_stats(with_offdiagonal(3, 0.5), 6));
    append_fit(rows, base, RegressionFit{1.0, 0.0, 1.0, 3});
    ASSERT_EQ(rows.size(), 7u);
    const auto text = format_tidy(rows);
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "dataset,sample_id,n_qubits,kernel_kind,strategy,shots,metric,value");
    std::getline(is, line);
    EXPECT_EQ(line, "german,3,6,fidelity,-,0,offdiag_mean,0.5");
}
