#pragma once

// Dataset ingestion and the preprocessing protocol:
// standardize -> PCA -> scale to [0, 2], all fit on the training portion of a
// split plan (400 points, 132 test / 268 train, 4 folds).
//
// Variances use the population (divide-by-m) convention throughout.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qmkl/errors.hpp"
#include "qmkl/kernels.hpp"
#include "qmkl/linalg.hpp"
#include "qmkl/matrix.hpp"
#include "qmkl/rng.hpp"

namespace qmkl {

enum class ColumnKind { numeric, categorical, label, ignore };

struct ColumnSpec {
    ColumnSpec() = default;
    ColumnSpec(std::string n, ColumnKind k, std::vector<std::string> lv = {})
        : name(std::move(n)), kind(k), levels(std::move(lv)) {}

    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::vector<std::string> levels;  // categorical only; empty = levels seen in the file
};

struct CsvSchema {
    std::string name;
    char delimiter = ',';      // ' ' splits on runs of whitespace
    bool has_header = false;
    std::vector<ColumnSpec> columns;
    std::string positive_label;  // raw label value mapped to +1
    std::string negative_label;  // raw label value mapped to -1; empty = everything else
};

struct Dataset {
    Matrix X;
    std::vector<int> labels;  // ±1
    std::vector<std::string> feature_names;
    std::string provenance;
};

/// UCI Statlog German Credit, numeric variant (german.data-numeric):
/// 24 integer attributes, last column 1 = good, 2 = bad. Bad credit is +1.
inline CsvSchema german_numeric_schema() {
    CsvSchema s;
    s.name = "german_numeric";
    s.delimiter = ' ';
    for (int i = 0; i < 24; ++i) s.columns.push_back({"a" + std::to_string(i + 1), ColumnKind::numeric});
    s.columns.push_back({"class", ColumnKind::label});
    s.positive_label = "2";
    s.negative_label = "1";
    return s;
}

/// UCI Bank Marketing (bank-full.csv): ';'-separated, quoted, with header.
/// Subscription "yes" is +1.
inline CsvSchema bank_marketing_schema() {
    CsvSchema s;
    s.name = "bank_marketing";
    s.delimiter = ';';
    s.has_header = true;
    const std::pair<const char*, ColumnKind> cols[] = {
        {"age", ColumnKind::numeric},       {"job", ColumnKind::categorical},
        {"marital", ColumnKind::categorical}, {"education", ColumnKind::categorical},
        {"default", ColumnKind::categorical}, {"balance", ColumnKind::numeric},
        {"housing", ColumnKind::categorical}, {"loan", ColumnKind::categorical},
        {"contact", ColumnKind::categorical}, {"day", ColumnKind::numeric},
        {"month", ColumnKind::categorical},  {"duration", ColumnKind::numeric},
        {"campaign", ColumnKind::numeric},   {"pdays", ColumnKind::numeric},
        {"previous", ColumnKind::numeric},   {"poutcome", ColumnKind::categorical},
        {"y", ColumnKind::label},
    };
    for (const auto& [n, k] : cols) s.columns.push_back({n, k});
    s.positive_label = "yes";
    s.negative_label = "no";
    return s;
}

inline CsvSchema schema_by_name(std::string_view name) {
    if (name == "german_numeric") return german_numeric_schema();
    if (name == "bank_marketing") return bank_marketing_schema();
    throw configuration_error("unknown dataset schema '" + std::string(name) + "'");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::string unquote(std::string_view s) {
    s = trim(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return std::string(s);
}

inline std::vector<std::string> split_record(std::string_view line, char delim) {
    std::vector<std::string> out;
    if (delim == ' ') {
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            if (i >= line.size()) break;
            std::size_t j = i;
            while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
            out.push_back(unquote(line.substr(i, j - i)));
            i = j;
        }
        return out;
    }
    std::string field;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        else if (c == delim && !quoted) out.push_back(std::string(trim(field))), field.clear();
        else if (c != '\r') field += c;
    }
    out.push_back(std::string(trim(field)));
    return out;
}

} // namespace detail

/// Reads a delimited file into a dense matrix. Categorical columns are one-hot
/// encoded over their declared levels, or over the sorted levels present in
/// the file when none are declared. A value outside declared levels is an error.
inline Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ingestion_error("cannot open dataset file '" + path.string() + "'");
    const std::size_t ncol = schema.columns.size();
    std::size_t label_col = ncol;
    for (std::size_t c = 0; c < ncol; ++c)
        if (schema.columns[c].kind == ColumnKind::label) label_col = c;
    if (label_col == ncol) throw configuration_error("schema '" + schema.name + "' has no label column");

    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
    std::string line;
    std::size_t line_no = 0;
    bool header_pending = schema.has_header;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        if (header_pending) {
            header_pending = false;
            continue;
        }
        auto fields = detail::split_record(line, schema.delimiter);
        if (fields.size() != ncol)
            throw ingestion_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(ncol) + " fields, found " + std::to_string(fields.size()));
        rows.push_back(std::move(fields));
        line_numbers.push_back(line_no);
    }
    if (rows.empty()) throw ingestion_error("dataset file '" + path.string() + "' has no records");

    std::vector<std::vector<std::string>> levels(ncol);
    for (std::size_t c = 0; c < ncol; ++c) {
        if (schema.columns[c].kind != ColumnKind::categorical) continue;
        std::set<std::string> seen(schema.columns[c].levels.begin(), schema.columns[c].levels.end());
        if (seen.empty())
            for (const auto& r : rows) seen.insert(r[c]);
        levels[c].assign(seen.begin(), seen.end());
    }

    Dataset ds;
    for (std::size_t c = 0; c < ncol; ++c) {
        const auto& col = schema.columns[c];
        if (col.kind == ColumnKind::numeric) ds.feature_names.push_back(col.name);
        else if (col.kind == ColumnKind::categorical)
            for (const auto& lv : levels[c]) ds.feature_names.push_back(col.name + "=" + lv);
    }
    ds.X = Matrix(rows.size(), ds.feature_names.size());
    ds.labels.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto where = path.string() + ":" + std::to_string(line_numbers[r]);
        std::size_t out = 0;
        for (std::size_t c = 0; c < ncol; ++c) {
            const auto& field = rows[r][c];
            switch (schema.columns[c].kind) {
            case ColumnKind::numeric: {
                double v;
                try {
                    v = parse_double(field);
                } catch (const std::invalid_argument&) {
                    throw ingestion_error(where + ": column '" + schema.columns[c].name +
                                          "' is not numeric: '" + field + "'");
                }
                if (!std::isfinite(v))
                    throw ingestion_error(where + ": non-finite value in '" + schema.columns[c].name + "'");
                ds.X(r, out++) = v;
                break;
            }
            case ColumnKind::categorical: {
                const auto& lv = levels[c];
                const auto it = std::lower_bound(lv.begin(), lv.end(), field);
                if (it == lv.end() || *it != field)
                    throw ingestion_error(where + ": unknown category '" + field + "' in '" +
                                          schema.columns[c].name + "'");
                const auto idx = it - lv.begin();
                for (std::size_t k = 0; k < lv.size(); ++k) ds.X(r, out + k) = k == std::size_t(idx) ? 1.0 : 0.0;
                out += lv.size();
                break;
            }
            case ColumnKind::label:
                if (field == schema.positive_label) ds.labels[r] = 1;
                else if (schema.negative_label.empty() || field == schema.negative_label) ds.labels[r] = -1;
                else throw ingestion_error(where + ": unknown label value '" + field + "'");
                break;
            case ColumnKind::ignore: break;
            }
        }
    }
    ds.provenance = schema.name + " from " + path.filename().string() + " (" +
                    std::to_string(rows.size()) + " rows)";
    return ds;
}

// ---------------------------------------------------------------- transforms

struct StandardizeParams {
    std::vector<double> mean;
    std::vector<double> scale;  // population std; 1 for constant columns
};

inline StandardizeParams standardize_fit(const Matrix& X) {
    if (X.rows() == 0) throw usage_error("standardize_fit: no rows");
    const std::size_t m = X.rows(), d = X.cols();
    StandardizeParams p{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) p.mean[j] += X(i, j);
    for (auto& v : p.mean) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double t = X(i, j) - p.mean[j];
            p.scale[j] += t * t;
        }
    for (auto& v : p.scale) {
        v = std::sqrt(v / static_cast<double>(m));
        if (!(v > 0.0)) v = 1.0;
    }
    return p;
}

inline Matrix standardize_apply(const StandardizeParams& p, const Matrix& X) {
    if (X.cols() != p.mean.size()) throw usage_error("standardize_apply: column count mismatch");
    Matrix out(X.rows(), X.cols());
    for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t j = 0; j < X.cols(); ++j) out(i, j) = (X(i, j) - p.mean[j]) / p.scale[j];
    return out;
}

struct PcaTransform {
    std::vector<double> mean;
    Matrix components;  // k × d, orthonormal rows
    std::vector<double> explained_variance;
};

/// Top-k eigenvectors of the population covariance. Each component is signed
/// so that its largest-magnitude entry is positive.
inline PcaTransform pca_fit(const Matrix& X, std::size_t k) {
    const std::size_t m = X.rows(), d = X.cols();
    if (k == 0 || m < 2 || k > std::min(m - 1, d))
        throw usage_error("pca_fit: k must satisfy 1 <= k <= min(rows - 1, cols)");
    PcaTransform t;
    t.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) t.mean[j] += X(i, j);
    for (auto& v : t.mean) v /= static_cast<double>(m);
    Matrix cov(d, d);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            const double xa = X(i, a) - t.mean[a];
            if (xa == 0.0) continue;
            for (std::size_t b = a; b < d; ++b) cov(a, b) += xa * (X(i, b) - t.mean[b]);
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) cov(b, a) = cov(a, b) /= static_cast<double>(m);

    const auto eig = jacobi_eigen(cov, 1e-14);
    t.components = Matrix(k, d);
    t.explained_variance.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::abs(eig.vectors(j, c)) > std::abs(eig.vectors(arg, c))) arg = j;
        const double sign = eig.vectors(arg, c) < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < d; ++j) t.components(c, j) = sign * eig.vectors(j, c);
        t.explained_variance[c] = std::max(eig.values[c], 0.0);
    }
    return t;
}

inline Matrix pca_apply(const PcaTransform& t, const Matrix& X) {
    if (X.cols() != t.mean.size()) throw usage_error("pca_apply: column count mismatch");
    const std::size_t k = t.components.rows();
    Matrix out(X.rows(), k);
    for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < X.cols(); ++j) s += (X(i, j) - t.mean[j]) * t.components(c, j);
            out(i, c) = s;
        }
    return out;
}

struct RangeParams {
    std::vector<double> min, max;
    double lo = 0.0, hi = 2.0;
};

inline RangeParams range_fit(const Matrix& X, double lo = 0.0, double hi = 2.0) {
    if (X.rows() == 0) throw usage_error("range_fit: no rows");
    if (!(hi > lo)) throw usage_error("range_fit: hi must exceed lo");
    RangeParams p;
    p.lo = lo;
    p.hi = hi;
    p.min.assign(X.cols(), std::numeric_limits<double>::infinity());
    p.max.assign(X.cols(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t j = 0; j < X.cols(); ++j) {
            p.min[j] = std::min(p.min[j], X(i, j));
            p.max[j] = std::max(p.max[j], X(i, j));
        }
    return p;
}

/// Affine map of the fitted [min, max] onto [lo, hi], clipped; constant
/// columns map to the midpoint.
inline Matrix range_apply(const RangeParams& p, const Matrix& X) {
    if (X.cols() != p.min.size()) throw usage_error("range_apply: column count mismatch");
    Matrix out(X.rows(), X.cols());
    const double mid = (p.lo + p.hi) / 2.0;
    for (std::size_t j = 0; j < X.cols(); ++j) {
        const double span = p.max[j] - p.min[j];
        for (std::size_t i = 0; i < X.rows(); ++i) {
            if (!(span > 0.0)) {
                out(i, j) = mid;
                continue;
            }
            const double v = p.lo + (X(i, j) - p.min[j]) / span * (p.hi - p.lo);
            out(i, j) = std::clamp(v, p.lo, p.hi);
        }
    }
    return out;
}

inline Matrix scale_to_range(const Matrix& X_train, const Matrix& X_apply, double lo = 0.0, double hi = 2.0) {
    return range_apply(range_fit(X_train, lo, hi), X_apply);
}

// ---------------------------------------------------------------- splitting

struct SplitOptions {
    std::size_t n_points = 400;
    double test_frac = 0.33;
    std::size_t n_folds = 4;
    bool balanced_sample = true;
};

struct SplitPlan {
    int sample_id = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> points;  // dataset rows in the sample, in draw order
    std::vector<std::size_t> test;    // dataset rows
    std::vector<std::size_t> train;   // dataset rows
    std::vector<int> folds;           // fold of train[k]

    std::vector<std::size_t> fold_sizes(std::size_t n_folds) const {
        std::vector<std::size_t> s(n_folds, 0);
        for (int f : folds) ++s[static_cast<std::size_t>(f)];
        return s;
    }
};

/// Draws n row indices without replacement: n/2 from each class when both
/// classes are large enough and `balanced` is set, otherwise uniformly.
inline std::vector<std::size_t> draw_points(std::span<const int> labels, std::size_t n, Xoshiro256& rng,
                                            bool balanced) {
    if (labels.size() < n)
        throw usage_error("draw_points: dataset has " + std::to_string(labels.size()) + " rows, need " +
                          std::to_string(n));
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
    const std::size_t half = n / 2;
    std::vector<std::size_t> out;
    if (balanced && pos.size() >= half && neg.size() >= n - half) {
        shuffle(std::span<std::size_t>(pos), rng);
        shuffle(std::span<std::size_t>(neg), rng);
        out.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(half));
        out.insert(out.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n - half));
        shuffle(std::span<std::size_t>(out), rng);
    } else {
        std::vector<std::size_t> all(labels.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        shuffle(std::span<std::size_t>(all), rng);
        out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    }
    return out;
}

inline SplitPlan make_split_plan(std::span<const int> labels, int sample_id, std::uint64_t seed,
                                 const SplitOptions& opt = {}) {
    if (labels.size() < opt.n_points)
        throw usage_error("make_split_plan: dataset has " + std::to_string(labels.size()) +
                          " rows, need " + std::to_string(opt.n_points));
    if (opt.n_folds < 1) throw configuration_error("make_split_plan: n_folds must be >= 1");
    if (!(opt.test_frac > 0.0 && opt.test_frac < 1.0))
        throw configuration_error("make_split_plan: test_frac must lie in (0, 1)");

    Xoshiro256 rng(derive_seed(seed, {static_cast<std::uint64_t>(sample_id)}));
    SplitPlan plan;
    plan.sample_id = sample_id;
    plan.seed = seed;
    plan.points = draw_points(labels, opt.n_points, rng, opt.balanced_sample);

    const auto n_test = static_cast<std::size_t>(std::floor(opt.test_frac * double(opt.n_points) + 1e-9));
    plan.test.assign(plan.points.begin(), plan.points.begin() + static_cast<std::ptrdiff_t>(n_test));
    plan.train.assign(plan.points.begin() + static_cast<std::ptrdiff_t>(n_test), plan.points.end());
    const std::size_t n_train = plan.train.size();
    if (n_train < opt.n_folds) throw configuration_error("make_split_plan: fewer train points than folds");
    const std::size_t base = n_train / opt.n_folds, extra = n_train % opt.n_folds;
    plan.folds.reserve(n_train);
    for (std::size_t f = 0; f < opt.n_folds; ++f)
        for (std::size_t k = 0; k < base + (f < extra ? 1 : 0); ++k) plan.folds.push_back(static_cast<int>(f));
    return plan;
}

struct PreparedSplit {
    int sample_id = 0;
    std::size_t dim = 0;
    Matrix X_train, X_test;  // features in [0, 2]
    std::vector<int> y_train, y_test;
    std::vector<std::int64_t> train_ids, test_ids;  // dataset row indices
    std::vector<int> folds;                         // per train row
};

struct PreparedFits {
    StandardizeParams standardize;
    PcaTransform pca;
    RangeParams range;
};

/// Fits standardize -> PCA(dim) -> range scaling on `raw`.
inline PreparedFits fit_pipeline(const Matrix& raw, std::size_t dim) {
    PreparedFits fits;
    fits.standardize = standardize_fit(raw);
    const Matrix s = standardize_apply(fits.standardize, raw);
    fits.pca = pca_fit(s, dim);
    fits.range = range_fit(pca_apply(fits.pca, s));
    return fits;
}

inline Matrix apply_pipeline(const PreparedFits& fits, const Matrix& raw) {
    return range_apply(fits.range, pca_apply(fits.pca, standardize_apply(fits.standardize, raw)));
}

/// Runs the full pipeline for one plan and dimension. Every transform is fit
/// on the training rows only.
inline PreparedSplit prepare_split(const Dataset& ds, const SplitPlan& plan, std::size_t dim,
                                   PreparedFits* fits_out = nullptr) {
    PreparedSplit out;
    out.sample_id = plan.sample_id;
    out.dim = dim;
    const Matrix raw_train = ds.X.select_rows(plan.train);
    PreparedFits fits = fit_pipeline(raw_train, dim);
    out.X_train = apply_pipeline(fits, raw_train);
    out.X_test = apply_pipeline(fits, ds.X.select_rows(plan.test));
    for (auto i : plan.train) {
        out.y_train.push_back(ds.labels[i]);
        out.train_ids.push_back(static_cast<std::int64_t>(i));
    }
    for (auto i : plan.test) {
        out.y_test.push_back(ds.labels[i]);
        out.test_ids.push_back(static_cast<std::int64_t>(i));
    }
    out.folds = plan.folds;
    if (fits_out) *fits_out = std::move(fits);
    return out;
}

/// Columns: sample_id,dim,role,fold,point_id,label,x0..x{dim-1}. Test rows carry fold -1.
inline void write_prepared_split(const std::filesystem::path& path, const PreparedSplit& s) {
    std::ostringstream os;
    os << "sample_id,dim,role,fold,point_id,label";
    for (std::size_t j = 0; j < s.dim; ++j) os << ",x" << j;
    os << '\n';
    auto emit = [&](const char* role, const Matrix& X, const std::vector<int>& y,
                    const std::vector<std::int64_t>& ids, const std::vector<int>* folds) {
        for (std::size_t i = 0; i < X.rows(); ++i) {
            os << s.sample_id << ',' << s.dim << ',' << role << ',' << (folds ? (*folds)[i] : -1) << ','
               << ids[i] << ',' << y[i];
            for (std::size_t j = 0; j < X.cols(); ++j) os << ',' << format_double(X(i, j));
            os << '\n';
        }
    };
    emit("train", s.X_train, s.y_train, s.train_ids, &s.folds);
    emit("test", s.X_test, s.y_test, s.test_ids, nullptr);
    write_file_atomic(path, os.str());
}

inline PreparedSplit read_prepared_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open prepared split '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw io_error("empty prepared split '" + path.string() + "'");
    const auto header = split_view(line, ',');
    if (header.size() < 7 || header[0] != "sample_id" || header[2] != "role")
        throw io_error("malformed prepared split header in '" + path.string() + "'");
    const std::size_t dim = header.size() - 6;
    PreparedSplit s;
    s.dim = dim;
    std::vector<std::vector<double>> tr, te;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_view(line, ',');
        if (f.size() != header.size())
            throw io_error(path.string() + ":" + std::to_string(line_no) + ": wrong field count");
        s.sample_id = static_cast<int>(parse_int(f[0]));
        std::vector<double> x(dim);
        for (std::size_t j = 0; j < dim; ++j) x[j] = parse_double(f[6 + j]);
        if (f[2] == "train") {
            s.folds.push_back(static_cast<int>(parse_int(f[3])));
            s.train_ids.push_back(parse_int(f[4]));
            s.y_train.push_back(static_cast<int>(parse_int(f[5])));
            tr.push_back(std::move(x));
        } else if (f[2] == "test") {
            s.test_ids.push_back(parse_int(f[4]));
            s.y_test.push_back(static_cast<int>(parse_int(f[5])));
            te.push_back(std::move(x));
        } else {
            throw io_error(path.string() + ":" + std::to_string(line_no) + ": unknown role");
        }
    }
    s.X_train = tr.empty() ? Matrix(0, dim) : Matrix::from_rows(tr);
    s.X_test = te.empty() ? Matrix(0, dim) : Matrix::from_rows(te);
    return s;
}

} // namespace qmkl
