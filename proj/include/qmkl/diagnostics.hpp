#pragma once

// Concentration statistics of kernel matrices, least-squares comparison of an
// estimated kernel against a reference, and the exact-vs-sampled shot sweep.
// Only upper-triangle off-diagonal entries enter any statistic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qmkl/errors.hpp"
#include "qmkl/feature_map.hpp"
#include "qmkl/kernels.hpp"
#include "qmkl/matrix.hpp"

namespace qmkl {

struct ConcentrationStats {
    int n_qubits = 0;
    double offdiag_mean = 0.0;
    double offdiag_variance = 0.0;  // population
    double fq_distance = 0.0;       // mean |K - 2^-n|
    double pq_distance = 0.0;       // mean |K - 1|
    std::size_t count = 0;
};

inline std::vector<double> upper_offdiagonal(const Matrix& K) {
    if (!K.is_square()) throw usage_error("upper_offdiagonal: matrix must be square");
    std::vector<double> v;
    v.reserve(K.rows() * (K.rows() - (K.rows() > 0)) / 2);
    for (std::size_t i = 0; i < K.rows(); ++i)
        for (std::size_t j = i + 1; j < K.cols(); ++j) v.push_back(K(i, j));
    return v;
}

inline ConcentrationStats concentration_stats(const Matrix& K, int n_qubits) {
    if (!K.is_square() || K.rows() < 2)
        throw usage_error("concentration_stats: need a square matrix with at least 2 rows");
    const auto v = upper_offdiagonal(K);
    ConcentrationStats s;
    s.n_qubits = n_qubits;
    s.count = v.size();
    const double mu = std::ldexp(1.0, -n_qubits);
    for (double x : v) {
        s.offdiag_mean += x;
        s.fq_distance += std::abs(x - mu);
        s.pq_distance += std::abs(x - 1.0);
    }
    const double n = static_cast<double>(v.size());
    s.offdiag_mean /= n;
    s.fq_distance /= n;
    s.pq_distance /= n;
    for (double x : v) s.offdiag_variance += (x - s.offdiag_mean) * (x - s.offdiag_mean);
    s.offdiag_variance /= n;
    return s;
}

struct RegressionFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t count = 0;
};

/// OLS of y on x.
inline RegressionFit ols_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw usage_error("ols_fit: length mismatch");
    if (x.size() < 2) throw usage_error("ols_fit: need at least 2 points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    double scale = 0.0;
    for (double v : x) scale = std::max(scale, std::abs(v));
    // spread at rounding level counts as constant
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() * scale;
    if (!(sxx > n * floor * floor)) throw degenerate_input_error("ols_fit: explanatory values are constant");
    RegressionFit f;
    f.count = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
    return f;
}

/// Regresses estimate (response) on reference (explanatory) over the upper
/// off-diagonal entries; rectangular inputs use every entry.
inline RegressionFit ols_compare(const Matrix& reference, const Matrix& estimate) {
    reference.require_same_shape(estimate, "ols_compare");
    if (reference.is_square()) return ols_fit(upper_offdiagonal(reference), upper_offdiagonal(estimate));
    return ols_fit(reference.data(), estimate.data());
}

struct ShotSweepRow {
    std::uint64_t shots = 0;
    std::size_t seeds = 0;
    RegressionFit mean_fit;          // slope, intercept and r² averaged over seeds
    std::vector<RegressionFit> fits; // one per seed
    ConcentrationStats stats;        // of the sampled kernel, averaged over seeds
};

/// For each shot count, samples the kernel once per seed and regresses it on
/// the exact kernel. `gamma` applies to the projected kind.
inline std::vector<ShotSweepRow> shot_sweep(const FeatureMapSpec& spec, const Matrix& X, KernelKind kind,
                                            std::span<const std::uint64_t> shots_list,
                                            std::span<const std::uint64_t> seeds, double gamma = 1.0,
                                            int workers = 1) {
    if (shots_list.empty() || seeds.empty()) throw usage_error("shot_sweep: empty shots or seed list");
    if (kind != KernelKind::fidelity && kind != KernelKind::projected)
        throw usage_error("shot_sweep: kind must be fidelity or projected");
    const int n = static_cast<int>(X.cols());
    KernelOptions exact_opt;
    exact_opt.workers = workers;

    // Exact fidelity kernels keep the states; the sampled fill reuses the exact
    // values, so sample directly from them instead of re-simulating.
    Matrix exact;
    ProjectedFeatures exact_features;
    if (kind == KernelKind::fidelity) {
        exact = fidelity_matrix(spec, X, exact_opt).values;
    } else {
        exact_features = projected_features(spec, X, exact_opt);
        exact = projected_matrix(exact_features, exact_features, gamma).values;
    }
    const auto ids = default_ids(X.rows());

    std::vector<ShotSweepRow> out;
    for (auto shots : shots_list) {
        if (shots == 0) throw usage_error("shot_sweep: shots must be >= 1");
        ShotSweepRow row;
        row.shots = shots;
        row.seeds = seeds.size();
        row.stats.n_qubits = n;
        for (auto seed : seeds) {
            Matrix sampled;
            if (kind == KernelKind::fidelity) {
                sampled = exact;
                for (std::size_t i = 0; i < X.rows(); ++i)
                    for (std::size_t j = i + 1; j < X.rows(); ++j) {
                        const double v = detail::sample_fidelity(
                            exact(i, j), shots, detail::pair_seed(seed, ids[i], ids[j]));
                        sampled(i, j) = sampled(j, i) = v;
                    }
            } else {
                KernelOptions opt;
                opt.shots = shots;
                opt.seed = seed;
                opt.workers = workers;
                const auto f = projected_features(spec, X, opt);
                sampled = projected_matrix(f, f, gamma).values;
            }
            const auto fit = ols_compare(exact, sampled);
            row.fits.push_back(fit);
            const auto st = concentration_stats(sampled, n);
            const double w = 1.0 / static_cast<double>(seeds.size());
            row.mean_fit.slope += w * fit.slope;
            row.mean_fit.intercept += w * fit.intercept;
            row.mean_fit.r_squared += w * fit.r_squared;
            row.mean_fit.count = fit.count;
            row.stats.offdiag_mean += w * st.offdiag_mean;
            row.stats.offdiag_variance += w * st.offdiag_variance;
            row.stats.fq_distance += w * st.fq_distance;
            row.stats.pq_distance += w * st.pq_distance;
            row.stats.count = st.count;
        }
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------- tidy CSV

/// One observation in the long-format results table read by the plotting scripts.
struct TidyRow {
    std::string dataset;
    int sample_id = -1;  // -1 when not tied to a split
    int n_qubits = 0;
    std::string kernel_kind;
    std::string strategy;  // "-" when not applicable
    std::uint64_t shots = 0;
    std::string metric;
    double value = 0.0;
};

inline constexpr const char* tidy_header = "dataset,sample_id,n_qubits,kernel_kind,strategy,shots,metric,value";

inline std::string format_tidy(std::span<const TidyRow> rows) {
    std::ostringstream os;
    os << tidy_header << '\n';
    for (const auto& r : rows)
        os << r.dataset << ',' << r.sample_id << ',' << r.n_qubits << ',' << r.kernel_kind << ','
           << (r.strategy.empty() ? "-" : r.strategy) << ',' << r.shots << ',' << r.metric << ','
           << format_double(r.value) << '\n';
    return os.str();
}

inline void write_tidy_csv(const std::filesystem::path& path, std::span<const TidyRow> rows) {
    write_file_atomic(path, format_tidy(rows));
}

inline void append_stats(std::vector<TidyRow>& rows, const TidyRow& base, const ConcentrationStats& s) {
    const std::pair<const char*, double> metrics[] = {
        {"offdiag_mean", s.offdiag_mean},
        {"offdiag_variance", s.offdiag_variance},
        {"fq_distance", s.fq_distance},
        {"pq_distance", s.pq_distance},
    };
    for (const auto& [name, v] : metrics) {
        TidyRow r = base;
        r.metric = name;
        r.value = v;
        rows.push_back(std::move(r));
    }
}

inline void append_fit(std::vector<TidyRow>& rows, const TidyRow& base, const RegressionFit& f) {
    const std::pair<const char*, double> metrics[] = {
        {"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}};
    for (const auto& [name, v] : metrics) {
        TidyRow r = base;
        r.metric = name;
        r.value = v;
        rows.push_back(std::move(r));
    }
}

} // namespace qmkl
