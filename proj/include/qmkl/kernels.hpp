#pragma once

// Gram matrices for fidelity and projected quantum kernels and for the
// classical RBF kernel, plus PSD repair and a lossless CSV format.
//
// Shot mode (shots > 0) draws every sampled quantity from a seed derived from
// (master seed, point ids, ...), never from a shared stream, so fills are
// identical for any worker count and any row/column ordering.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "qmkl/errors.hpp"
#include "qmkl/feature_map.hpp"
#include "qmkl/linalg.hpp"
#include "qmkl/matrix.hpp"
#include "qmkl/rng.hpp"
#include "qmkl/statevector.hpp"

namespace qmkl {

enum class KernelKind { fidelity, projected, rbf, combined };

inline std::string to_string(KernelKind k) {
    switch (k) {
    case KernelKind::fidelity: return "fidelity";
    case KernelKind::projected: return "projected";
    case KernelKind::rbf: return "rbf";
    case KernelKind::combined: return "combined";
    }
    return "?";
}

inline KernelKind parse_kernel_kind(std::string_view s) {
    if (s == "fidelity") return KernelKind::fidelity;
    if (s == "projected") return KernelKind::projected;
    if (s == "rbf") return KernelKind::rbf;
    if (s == "combined") return KernelKind::combined;
    throw usage_error("unknown kernel kind '" + std::string(s) + "'");
}

struct KernelMeta {
    std::string spec;  // canonical feature-map text, empty for rbf/combined
    int n_qubits = 0;
    double alpha = 0.0;
    double gamma = 0.0;
    std::uint64_t shots = 0;  // 0 = exact
    std::uint64_t seed = 0;
    std::string source;  // digest of the input data, empty when unknown
};

struct KernelMatrix {
    Matrix values;
    std::vector<std::int64_t> row_ids;
    std::vector<std::int64_t> col_ids;
    KernelKind kind = KernelKind::combined;
    KernelMeta meta;

    std::size_t rows() const noexcept { return values.rows(); }
    std::size_t cols() const noexcept { return values.cols(); }
    double operator()(std::size_t i, std::size_t j) const noexcept { return values(i, j); }
};

/// Runs body(i) for i in [0, n), striped over `workers` threads.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
    const auto w = static_cast<std::size_t>(std::max(1, workers));
    if (w == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(w);
    for (std::size_t t = 0; t < w; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += w) body(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::vector<std::int64_t> default_ids(std::size_t n) {
    std::vector<std::int64_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    return ids;
}

struct KernelOptions {
    std::uint64_t shots = 0;
    std::uint64_t seed = 0;
    int workers = 1;
    std::size_t state_cache_bytes = std::size_t{512} << 20;
};

/// |<encode(x)|encode(x')>|^2.
inline double fidelity_entry(const FeatureMapSpec& spec, std::span<const double> x,
                             std::span<const double> xp) {
    if (x.size() != xp.size()) throw usage_error("fidelity_entry: feature lengths differ");
    return std::norm(overlap(encode(spec, x), encode(spec, xp)));
}

namespace detail {

inline void require_sample(const Matrix& X, const char* where) {
    if (X.rows() == 0 || X.cols() == 0) throw usage_error(std::string(where) + ": empty sample");
}

inline std::uint64_t pair_seed(std::uint64_t master, std::int64_t a, std::int64_t b) {
    const auto lo = static_cast<std::uint64_t>(std::min(a, b));
    const auto hi = static_cast<std::uint64_t>(std::max(a, b));
    return derive_seed(master, {lo, hi});
}

inline double sample_fidelity(double exact, std::uint64_t shots, std::uint64_t seed) {
    Xoshiro256 rng(seed);
    const double p = std::clamp(exact, 0.0, 1.0);
    return static_cast<double>(binomial(shots, p, rng)) / static_cast<double>(shots);
}

} // namespace detail

/// Fidelity Gram matrix between two samples (rows are points).
///
/// Column states are encoded in blocks that fit `state_cache_bytes`; each row
/// state is encoded once per block. When `same_sample` is set the matrix is
/// filled from its upper triangle and the diagonal is exactly 1.
inline KernelMatrix fidelity_matrix(const FeatureMapSpec& spec, const Matrix& X1, const Matrix& X2,
                                    const KernelOptions& opt = {},
                                    std::vector<std::int64_t> row_ids = {},
                                    std::vector<std::int64_t> col_ids = {},
                                    bool same_sample = false) {
    detail::require_sample(X1, "fidelity_matrix");
    detail::require_sample(X2, "fidelity_matrix");
    if (X1.cols() != X2.cols()) throw usage_error("fidelity_matrix: feature dimensions differ");
    if (X1.cols() > static_cast<std::size_t>(max_qubits))
        throw configuration_error("fidelity_matrix: too many features for the simulator");
    if (row_ids.empty()) row_ids = default_ids(X1.rows());
    if (col_ids.empty()) col_ids = default_ids(X2.rows());
    if (row_ids.size() != X1.rows() || col_ids.size() != X2.rows())
        throw usage_error("fidelity_matrix: id count does not match sample size");
    if (same_sample && (X1.rows() != X2.rows()))
        throw usage_error("fidelity_matrix: same_sample requires equal sizes");

    const std::size_t m = X1.rows();
    const std::size_t l = X2.rows();
    const int n = static_cast<int>(X1.cols());
    KernelMatrix K;
    K.values = Matrix(m, l);
    K.kind = KernelKind::fidelity;
    K.meta = {spec.canonical(), n, spec.alpha, 0.0, opt.shots, opt.seed, {}};

    const std::size_t state_bytes = (std::size_t{1} << n) * sizeof(complex);
    const std::size_t block = std::max<std::size_t>(1, opt.state_cache_bytes / state_bytes);

    for (std::size_t c0 = 0; c0 < l; c0 += block) {
        const std::size_t c1 = std::min(l, c0 + block);
        std::vector<StateVector> cols;
        cols.reserve(c1 - c0);
        for (std::size_t j = c0; j < c1; ++j) cols.push_back(encode(spec, X2.row(j)));

        parallel_for(m, opt.workers, [&](std::size_t i) {
            const std::size_t jstart = same_sample ? std::max(c0, i + 1) : c0;
            if (jstart >= c1) return;
            const StateVector si = encode(spec, X1.row(i));
            for (std::size_t j = jstart; j < c1; ++j) {
                double v = std::norm(overlap(si, cols[j - c0]));
                if (opt.shots > 0)
                    v = detail::sample_fidelity(
                        v, opt.shots, detail::pair_seed(opt.seed, row_ids[i], col_ids[j]));
                K.values(i, j) = v;
            }
        });
    }
    if (same_sample) {
        for (std::size_t i = 0; i < m; ++i) {
            K.values(i, i) = 1.0;
            for (std::size_t j = i + 1; j < m; ++j) K.values(j, i) = K.values(i, j);
        }
    }
    K.row_ids = std::move(row_ids);
    K.col_ids = std::move(col_ids);
    return K;
}

/// Same-sample fidelity Gram matrix.
inline KernelMatrix fidelity_matrix(const FeatureMapSpec& spec, const Matrix& X,
                                    const KernelOptions& opt = {},
                                    std::vector<std::int64_t> ids = {}) {
    auto col_ids = ids;
    return fidelity_matrix(spec, X, X, opt, std::move(ids), std::move(col_ids), true);
}

/// Per-point, per-qubit Bloch vectors of the encoded state.
struct ProjectedFeatures {
    std::vector<std::vector<BlochVector>> points;
    std::vector<std::int64_t> ids;

    std::size_t size() const noexcept { return points.size(); }
    int n_qubits() const noexcept {
        return points.empty() ? 0 : static_cast<int>(points.front().size());
    }
};

/// Exact mode reads Bloch vectors from the 1-RDMs. Shot mode estimates each
/// <X>, <Y>, <Z> from `shots` ±1 outcomes: k ~ Binomial(shots, (1 + r)/2),
/// estimate 2k/shots - 1.
inline ProjectedFeatures projected_features(const FeatureMapSpec& spec, const Matrix& X,
                                            const KernelOptions& opt = {},
                                            std::vector<std::int64_t> ids = {}) {
    detail::require_sample(X, "projected_features");
    if (ids.empty()) ids = default_ids(X.rows());
    if (ids.size() != X.rows()) throw usage_error("projected_features: id count mismatch");
    const int n = static_cast<int>(X.cols());
    ProjectedFeatures out;
    out.points.resize(X.rows());
    parallel_for(X.rows(), opt.workers, [&](std::size_t p) {
        const StateVector s = encode(spec, X.row(p));
        auto& bloch = out.points[p];
        bloch.resize(n);
        for (int q = 0; q < n; ++q) {
            BlochVector r = bloch_vector(reduced_density_matrix(s, q));
            if (opt.shots > 0) {
                double est[3];
                for (int a = 0; a < 3; ++a) {
                    Xoshiro256 rng(derive_seed(
                        opt.seed, {static_cast<std::uint64_t>(ids[p]), static_cast<std::uint64_t>(q),
                                   static_cast<std::uint64_t>(a), 0x9E37ULL}));
                    const double p_plus = std::clamp((1.0 + r[a]) / 2.0, 0.0, 1.0);
                    const double k = static_cast<double>(binomial(opt.shots, p_plus, rng));
                    est[a] = std::clamp(2.0 * k / static_cast<double>(opt.shots) - 1.0, -1.0, 1.0);
                }
                r = {est[0], est[1], est[2]};
            }
            bloch[q] = r;
        }
    });
    out.ids = std::move(ids);
    return out;
}

/// Squared Frobenius distance between the 1-RDMs of two points, summed over qubits.
/// Uses ||ρ - ρ'||_F^2 = ½|r - r'|^2.
inline double rdm_distance_sq(const std::vector<BlochVector>& a, const std::vector<BlochVector>& b) {
    double d = 0.0;
    for (std::size_t q = 0; q < a.size(); ++q) {
        const double dx = a[q].x - b[q].x;
        const double dy = a[q].y - b[q].y;
        const double dz = a[q].z - b[q].z;
        d += 0.5 * (dx * dx + dy * dy + dz * dz);
    }
    return d;
}

inline KernelMatrix projected_matrix(const ProjectedFeatures& f1, const ProjectedFeatures& f2,
                                     double gamma) {
    if (!(gamma > 0.0)) throw usage_error("projected_matrix: gamma must be positive");
    if (f1.size() == 0 || f2.size() == 0) throw usage_error("projected_matrix: empty sample");
    if (f1.n_qubits() != f2.n_qubits())
        throw usage_error("projected_matrix: qubit counts differ");
    KernelMatrix K;
    K.values = Matrix(f1.size(), f2.size());
    for (std::size_t i = 0; i < f1.size(); ++i)
        for (std::size_t j = 0; j < f2.size(); ++j)
            K.values(i, j) = std::exp(-gamma * rdm_distance_sq(f1.points[i], f2.points[j]));
    K.kind = KernelKind::projected;
    K.meta.n_qubits = f1.n_qubits();
    K.meta.gamma = gamma;
    K.row_ids = f1.ids;
    K.col_ids = f2.ids;
    return K;
}

inline KernelMatrix rbf_matrix(const Matrix& X1, const Matrix& X2, double gamma) {
    if (!(gamma > 0.0)) throw usage_error("rbf_matrix: gamma must be positive");
    detail::require_sample(X1, "rbf_matrix");
    detail::require_sample(X2, "rbf_matrix");
    if (X1.cols() != X2.cols()) throw usage_error("rbf_matrix: feature dimensions differ");
    KernelMatrix K;
    K.values = Matrix(X1.rows(), X2.rows());
    for (std::size_t i = 0; i < X1.rows(); ++i) {
        auto a = X1.row(i);
        for (std::size_t j = 0; j < X2.rows(); ++j) {
            auto b = X2.row(j);
            double d = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
            K.values(i, j) = std::exp(-gamma * d);
        }
    }
    K.kind = KernelKind::rbf;
    K.meta.n_qubits = static_cast<int>(X1.cols());
    K.meta.gamma = gamma;
    K.row_ids = default_ids(X1.rows());
    K.col_ids = default_ids(X2.rows());
    return K;
}

/// Relative PSD test: min eigenvalue >= -rel_tol * max(|max eigenvalue|, tiny).
inline bool is_psd(const Matrix& a, double rel_tol = 1e-8) {
    const auto eig = jacobi_eigen(a);
    const double top = std::max(std::abs(eig.values.front()), 1e-300);
    return eig.values.back() >= -rel_tol * top;
}

/// Clamps eigenvalues below `floor` to `floor` and reassembles. Exact-mode
/// matrices that already pass the relative PSD test are returned unchanged.
inline KernelMatrix psd_project(const KernelMatrix& K, double floor = 0.0) {
    if (!K.values.is_square()) throw usage_error("psd_project: matrix must be square");
    const auto eig = jacobi_eigen(K.values);
    const double top = std::max(std::abs(eig.values.front()), 1e-300);
    const double bottom = eig.values.back();
    if (bottom >= floor) return K;
    if (K.meta.shots == 0 && K.kind != KernelKind::combined && bottom >= -1e-8 * top) return K;
    auto clamped = eig.values;
    for (double& v : clamped) v = std::max(v, floor);
    KernelMatrix out = K;
    out.values = reassemble(eig.vectors, clamped);
    // Reassembly rounding can break exact symmetry.
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = i + 1; j < out.cols(); ++j) {
            const double avg = 0.5 * (out.values(i, j) + out.values(j, i));
            out.values(i, j) = out.values(j, i) = avg;
        }
    return out;
}

// ---------------------------------------------------------------------------
// CSV persistence
//
//   # kind=<k> n=<n> alpha=<a> shots=<s> seed=<s> gamma=<g> spec=<canonical> source=<digest>
//   row_id,<col_id>,<col_id>,...
//   <row_id>,<v>,<v>,...
//
// Values are written with 17 significant digits and round-trip exactly.

inline std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    while (!s.empty() && (s.front() == ' ' || s.front() == '+')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw usage_error("not a number: '" + std::string(s) + "'");
    return v;
}

inline void write_kernel_csv(std::ostream& os, const KernelMatrix& K) {
    os << "# kind=" << to_string(K.kind) << " n=" << K.meta.n_qubits
       << " alpha=" << format_double(K.meta.alpha) << " shots=" << K.meta.shots
       << " seed=" << K.meta.seed << " gamma=" << format_double(K.meta.gamma)
       << " spec=" << (K.meta.spec.empty() ? "-" : K.meta.spec)
       << " source=" << (K.meta.source.empty() ? "-" : K.meta.source) << '\n';
    os << "row_id";
    for (auto c : K.col_ids) os << ',' << c;
    os << '\n';
    for (std::size_t i = 0; i < K.rows(); ++i) {
        os << K.row_ids[i];
        for (std::size_t j = 0; j < K.cols(); ++j) os << ',' << format_double(K.values(i, j));
        os << '\n';
    }
}

inline std::vector<std::string_view> split_view(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos
                                                                     : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::int64_t parse_int(std::string_view s) {
    while (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw usage_error("not an integer: '" + std::string(s) + "'");
    return v;
}

/// Parses the "# key=value ..." header line.
inline std::map<std::string, std::string> parse_header(std::string_view line) {
    if (line.substr(0, 2) != "# ") throw usage_error("kernel csv: missing '# ' header");
    std::map<std::string, std::string> kv;
    std::istringstream ss{std::string(line.substr(2))};
    std::string tok;
    while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw usage_error("kernel csv: bad header token " + tok);
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

inline KernelMatrix read_kernel_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw usage_error("kernel csv: empty input");
    const auto kv = parse_header(line);
    for (const char* key : {"kind", "n", "alpha", "shots", "seed"})
        if (!kv.contains(key)) throw usage_error(std::string("kernel csv: header lacks ") + key);

    KernelMatrix K;
    K.kind = parse_kernel_kind(kv.at("kind"));
    K.meta.n_qubits = static_cast<int>(parse_int(kv.at("n")));
    K.meta.alpha = parse_double(kv.at("alpha"));
    K.meta.shots = static_cast<std::uint64_t>(parse_int(kv.at("shots")));
    K.meta.seed = std::stoull(kv.at("seed"));
    if (kv.contains("gamma")) K.meta.gamma = parse_double(kv.at("gamma"));
    if (kv.contains("spec") && kv.at("spec") != "-") K.meta.spec = kv.at("spec");
    if (kv.contains("source") && kv.at("source") != "-") K.meta.source = kv.at("source");

    if (!std::getline(is, line)) throw usage_error("kernel csv: missing column header");
    auto head = split_view(line, ',');
    for (std::size_t j = 1; j < head.size(); ++j) K.col_ids.push_back(parse_int(head[j]));

    std::vector<double> flat;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_view(line, ',');
        if (cells.size() != K.col_ids.size() + 1)
            throw usage_error("kernel csv: ragged row " + std::to_string(K.row_ids.size() + 1));
        K.row_ids.push_back(parse_int(cells[0]));
        for (std::size_t j = 1; j < cells.size(); ++j) flat.push_back(parse_double(cells[j]));
    }
    K.values = Matrix(K.row_ids.size(), K.col_ids.size());
    std::copy(flat.begin(), flat.end(), K.values.data().begin());
    return K;
}

/// Writes `content` to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw io_error("cannot write " + tmp.string());
        os << content;
        if (!os) throw io_error("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("cannot rename to " + path.string() + ": " + ec.message());
}

inline void save_kernel(const std::string& path, const KernelMatrix& K) {
    std::ostringstream os;
    write_kernel_csv(os, K);
    write_file_atomic(path, os.str());
}

inline KernelMatrix load_kernel(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    return read_kernel_csv(is);
}

} // namespace qmkl
