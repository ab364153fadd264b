#pragma once

// Declarative experiment pipeline behind the `qmkl` command line tool:
//
//   prepare   split plans and preprocessed features per (sample, dim)
//   kernels   train/train and test/train Gram matrices per (sample, dim, kernel)
//   run       cross-validated SVMs for single kernels and MKL families
//   diagnose  concentration statistics and exact-vs-sampled shot sweeps
//
// Output directory layout:
//
//   prepared/s<ss>_d<dd>.csv
//   kernels/s<ss>_d<dd>/<kind>-<digest>.{train,test}.csv
//   results/s<ss>_d<dd>.json, results.json, tidy.csv, best_counts.csv, timings.json
//   diagnose/concentration.csv, shot_sweep.csv, kernels/*.csv

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmkl/alignment.hpp"
#include "qmkl/dataprep.hpp"
#include "qmkl/diagnostics.hpp"
#include "qmkl/errors.hpp"
#include "qmkl/feature_map.hpp"
#include "qmkl/kernels.hpp"
#include "qmkl/svm.hpp"

namespace qmkl {

using json = nlohmann::json;

inline constexpr int config_version = 1;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Compact decimal for labels; identities and files use format_double.
inline std::string short_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------- config

struct DiagnoseConfig {
    std::string source = "dataset";  // "dataset" or "uniform"
    std::size_t n_points = 50;
    std::vector<std::size_t> dims = {4, 8, 12, 16, 20};
    std::vector<FeatureMapSpec> kernels;
    std::vector<KernelKind> kinds = {KernelKind::fidelity, KernelKind::projected};
    double gamma = 1.0;
    std::vector<std::size_t> sweep_dims;
    std::vector<std::uint64_t> sweep_shots;
    std::vector<std::uint64_t> sweep_seeds;
};

struct ExperimentConfig {
    int version = config_version;
    std::string dataset_name;
    std::filesystem::path dataset_path;
    std::string schema;

    std::vector<std::size_t> dims;
    bool balanced_sample = true;
    std::uint64_t seed = 0;

    std::size_t n_samples = 20;
    std::size_t n_points = 400;
    double test_frac = 0.33;
    std::size_t folds = 4;

    std::vector<FeatureMapSpec> quantum;
    double pq_gamma = 1.0;
    std::vector<double> pq_gamma_grid;
    std::vector<double> rbf_gamma_scales = {0.1, 0.3, 1.0, 3.0, 10.0};
    FeatureMapSpec single_q;

    std::uint64_t shots = 0;
    bool psd_project_sampled = true;

    std::vector<Strategy> strategies = {Strategy::AVE, Strategy::SDP, Strategy::CENT, Strategy::PROJ};
    bool proj_normalize_distance = true;
    double proj_threshold = -1.0;
    std::vector<std::string> models;

    std::vector<double> C_grid = {0.1, 1.0, 10.0, 100.0};

    std::filesystem::path output;
    std::optional<DiagnoseConfig> diagnose;

    json source;  // normalized document, used for hashing
};

inline const std::vector<std::string>& all_model_names() {
    static const std::vector<std::string> names = {"FQ-MKL",    "PQ-MKL",        "CQ-MKL",    "C-MKL",
                                                   "Single(Q)", "Single(Q) Opt", "Single(C)", "Single(C) Opt"};
    return names;
}

namespace detail {

inline json spec_to_json(const FeatureMapSpec& s) {
    return json{{"paulis", s.paulis()},
                {"alpha", s.alpha},
                {"reps", s.reps},
                {"entanglement", to_string(s.entanglement)},
                {"data_map", to_string(s.data_map)}};
}

class ConfigReader {
public:
    explicit ConfigReader(std::filesystem::path base) : base_(std::move(base)) {}

    [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
        throw configuration_error(path + ": " + msg);
    }

    const json& require(const json& obj, const std::string& key, const std::string& path) const {
        if (!obj.is_object() || !obj.contains(key)) fail(path + key, "required field missing");
        return obj.at(key);
    }

    template <class T>
    T get(const json& obj, const std::string& key, const std::string& path, T fallback) const {
        if (!obj.is_object() || !obj.contains(key)) return fallback;
        return as<T>(obj.at(key), path + key);
    }

    template <class T>
    T as(const json& v, const std::string& path) const {
        try {
            if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
                if (!v.is_number_integer() || v.get<std::int64_t>() < 0) fail(path, "expected a nonnegative integer");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) fail(path, "expected an integer");
            } else if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) fail(path, "expected a number");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) fail(path, "expected true or false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) fail(path, "expected a string");
            }
            return v.get<T>();
        } catch (const json::exception& e) {
            fail(path, e.what());
        }
    }

    template <class T>
    std::vector<T> list(const json& obj, const std::string& key, const std::string& path,
                        std::vector<T> fallback) const {
        if (!obj.is_object() || !obj.contains(key)) return fallback;
        const auto& arr = obj.at(key);
        if (!arr.is_array()) fail(path + key, "expected a list");
        std::vector<T> out;
        for (std::size_t i = 0; i < arr.size(); ++i)
            out.push_back(as<T>(arr[i], path + key + "[" + std::to_string(i) + "]"));
        return out;
    }

    FeatureMapSpec spec(const json& v, const std::string& path) const {
        if (!v.is_object()) fail(path, "expected a feature map object");
        try {
            return parse_spec(as<std::string>(require(v, "paulis", path + "."), path + ".paulis"),
                              as<double>(require(v, "alpha", path + "."), path + ".alpha"),
                              get<int>(v, "reps", path + ".", 1),
                              parse_entanglement(get<std::string>(v, "entanglement", path + ".", "linear")),
                              parse_data_map(get<std::string>(v, "data_map", path + ".", "product")));
        } catch (const configuration_error& e) {
            if (std::string(e.what()).starts_with(path)) throw;
            fail(path, e.what());
        } catch (const parse_error& e) {
            fail(path, e.what());
        }
    }

    std::vector<FeatureMapSpec> spec_list(const json& v, const std::string& path) const {
        if (v.is_string()) {
            if (v.get<std::string>() == "table") return default_kernel_set();
            fail(path, "expected \"table\" or a list of feature maps");
        }
        if (!v.is_array()) fail(path, "expected \"table\" or a list of feature maps");
        std::vector<FeatureMapSpec> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(spec(v[i], path + "[" + std::to_string(i) + "]"));
        return out;
    }

    std::filesystem::path resolve(const std::string& p) const {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : (base_ / path).lexically_normal();
    }

private:
    std::filesystem::path base_;
};

inline void check_dims(const ConfigReader& r, const std::vector<std::size_t>& dims, const std::string& path) {
    for (std::size_t i = 0; i < dims.size(); ++i)
        if (dims[i] < 1 || dims[i] > static_cast<std::size_t>(max_qubits))
            r.fail(path + "[" + std::to_string(i) + "]", "dimension must lie in 1.." + std::to_string(max_qubits));
}

} // namespace detail

/// Parses and validates a configuration document. Relative paths resolve
/// against `base_dir`. Errors name the offending field path.
inline ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir,
                                     bool require_dataset_file = true) {
    detail::ConfigReader r(base_dir);
    if (!doc.is_object()) r.fail("$", "configuration must be a JSON object");
    ExperimentConfig c;
    c.version = r.as<int>(r.require(doc, "version", ""), "version");
    if (c.version != config_version)
        r.fail("version", "unsupported version " + std::to_string(c.version) + " (expected " +
                              std::to_string(config_version) + ")");

    const json empty = json::object();
    const auto& ds = r.require(doc, "dataset", "");
    c.dataset_name = r.as<std::string>(r.require(ds, "name", "dataset."), "dataset.name");
    c.schema = r.get<std::string>(ds, "schema", "dataset.", c.dataset_name);
    try {
        (void)schema_by_name(c.schema);
    } catch (const configuration_error& e) {
        r.fail("dataset.schema", e.what());
    }
    const bool needs_dataset = !(doc.contains("diagnose") && doc["diagnose"].value("source", "dataset") == "uniform" &&
                                 !doc.contains("preprocessing"));
    if (ds.contains("path")) c.dataset_path = r.resolve(r.as<std::string>(ds["path"], "dataset.path"));
    else if (needs_dataset) r.fail("dataset.path", "required field missing");
    if (require_dataset_file && needs_dataset && !std::filesystem::exists(c.dataset_path))
        r.fail("dataset.path", "file not found: " + c.dataset_path.string());

    const auto& pre = doc.contains("preprocessing") ? doc["preprocessing"] : empty;
    c.dims = r.list<std::size_t>(pre, "dims", "preprocessing.", {6, 10, 14, 18});
    detail::check_dims(r, c.dims, "preprocessing.dims");
    c.balanced_sample = r.get<bool>(pre, "balanced_sample", "preprocessing.", true);
    c.seed = r.get<std::uint64_t>(pre, "seed", "preprocessing.", 0);

    const auto& ev = doc.contains("evaluation") ? doc["evaluation"] : empty;
    c.n_samples = r.get<std::size_t>(ev, "n_samples", "evaluation.", 20);
    c.n_points = r.get<std::size_t>(ev, "n_points", "evaluation.", 400);
    c.test_frac = r.get<double>(ev, "test_frac", "evaluation.", 0.33);
    c.folds = r.get<std::size_t>(ev, "folds", "evaluation.", 4);
    if (c.n_samples < 1) r.fail("evaluation.n_samples", "must be >= 1");
    if (c.folds < 2) r.fail("evaluation.folds", "must be >= 2");
    if (!(c.test_frac > 0.0 && c.test_frac < 1.0)) r.fail("evaluation.test_frac", "must lie in (0, 1)");
    if (c.n_points < 2 * c.folds + 2) r.fail("evaluation.n_points", "too small for the fold count");

    const auto& ks = doc.contains("kernels") ? doc["kernels"] : empty;
    c.quantum = ks.contains("quantum") ? r.spec_list(ks["quantum"], "kernels.quantum") : default_kernel_set();
    c.pq_gamma = r.get<double>(ks, "pq_gamma", "kernels.", 1.0);
    if (!(c.pq_gamma > 0.0)) r.fail("kernels.pq_gamma", "must be positive");
    c.pq_gamma_grid = r.list<double>(ks, "pq_gamma_grid", "kernels.", {});
    for (std::size_t i = 0; i < c.pq_gamma_grid.size(); ++i)
        if (!(c.pq_gamma_grid[i] > 0.0)) r.fail("kernels.pq_gamma_grid[" + std::to_string(i) + "]", "must be positive");
    c.rbf_gamma_scales = r.list<double>(ks, "rbf_gamma_scales", "kernels.", c.rbf_gamma_scales);
    for (std::size_t i = 0; i < c.rbf_gamma_scales.size(); ++i)
        if (!(c.rbf_gamma_scales[i] > 0.0))
            r.fail("kernels.rbf_gamma_scales[" + std::to_string(i) + "]", "must be positive");
    c.single_q = ks.contains("single_q")
                     ? r.spec(ks["single_q"], "kernels.single_q")
                     : parse_spec("Z-ZZ", 0.4, 1, Entanglement::linear, DataMap::pi_minus_product);

    const auto& mode = doc.contains("mode") ? doc["mode"] : empty;
    c.shots = r.get<std::uint64_t>(mode, "shots", "mode.", 0);
    c.psd_project_sampled = r.get<bool>(mode, "psd_project", "mode.", true);

    const auto& mkl = doc.contains("mkl") ? doc["mkl"] : empty;
    if (mkl.contains("strategies")) {
        c.strategies.clear();
        const auto names = r.list<std::string>(mkl, "strategies", "mkl.", {});
        for (std::size_t i = 0; i < names.size(); ++i) {
            try {
                c.strategies.push_back(parse_strategy(names[i]));
            } catch (const configuration_error& e) {
                r.fail("mkl.strategies[" + std::to_string(i) + "]", e.what());
            }
        }
    }
    c.proj_normalize_distance = r.get<bool>(mkl, "proj_normalize_distance", "mkl.", true);
    c.proj_threshold = r.get<double>(mkl, "proj_threshold", "mkl.", -1.0);
    c.models = r.list<std::string>(mkl, "models", "mkl.", all_model_names());
    for (std::size_t i = 0; i < c.models.size(); ++i)
        if (std::find(all_model_names().begin(), all_model_names().end(), c.models[i]) == all_model_names().end())
            r.fail("mkl.models[" + std::to_string(i) + "]", "unknown model '" + c.models[i] + "'");

    const auto& svm = doc.contains("svm") ? doc["svm"] : empty;
    c.C_grid = r.list<double>(svm, "C_grid", "svm.", c.C_grid);
    if (c.C_grid.empty()) r.fail("svm.C_grid", "must not be empty");
    for (std::size_t i = 0; i < c.C_grid.size(); ++i)
        if (!(c.C_grid[i] > 0.0)) r.fail("svm.C_grid[" + std::to_string(i) + "]", "must be positive");

    const auto& out = r.require(doc, "output", "");
    c.output = r.resolve(r.as<std::string>(r.require(out, "directory", "output."), "output.directory"));

    if (doc.contains("diagnose")) {
        const auto& d = doc["diagnose"];
        DiagnoseConfig dc;
        dc.source = r.get<std::string>(d, "source", "diagnose.", "dataset");
        if (dc.source != "dataset" && dc.source != "uniform") r.fail("diagnose.source", "expected dataset or uniform");
        dc.n_points = r.get<std::size_t>(d, "n_points", "diagnose.", 50);
        if (dc.n_points < 2) r.fail("diagnose.n_points", "must be >= 2");
        dc.dims = r.list<std::size_t>(d, "dims", "diagnose.", dc.dims);
        detail::check_dims(r, dc.dims, "diagnose.dims");
        if (!d.contains("kernels")) r.fail("diagnose.kernels", "required field missing");
        dc.kernels = r.spec_list(d["kernels"], "diagnose.kernels");
        if (dc.kernels.empty()) r.fail("diagnose.kernels", "kernel list is empty");
        if (d.contains("kinds")) {
            dc.kinds.clear();
            const auto kinds = r.list<std::string>(d, "kinds", "diagnose.", {});
            for (std::size_t i = 0; i < kinds.size(); ++i) {
                const auto path = "diagnose.kinds[" + std::to_string(i) + "]";
                if (kinds[i] == "fidelity") dc.kinds.push_back(KernelKind::fidelity);
                else if (kinds[i] == "projected") dc.kinds.push_back(KernelKind::projected);
                else r.fail(path, "expected fidelity or projected");
            }
            if (dc.kinds.empty()) r.fail("diagnose.kinds", "must not be empty");
        }
        dc.gamma = r.get<double>(d, "gamma", "diagnose.", 1.0);
        if (!(dc.gamma > 0.0)) r.fail("diagnose.gamma", "must be positive");
        const auto& sw = d.contains("sweep") ? d["sweep"] : empty;
        dc.sweep_dims = r.list<std::size_t>(sw, "dims", "diagnose.sweep.", {});
        detail::check_dims(r, dc.sweep_dims, "diagnose.sweep.dims");
        dc.sweep_shots = r.list<std::uint64_t>(sw, "shots", "diagnose.sweep.", {});
        for (std::size_t i = 0; i < dc.sweep_shots.size(); ++i)
            if (dc.sweep_shots[i] == 0) r.fail("diagnose.sweep.shots[" + std::to_string(i) + "]", "must be >= 1");
        dc.sweep_seeds = r.list<std::uint64_t>(sw, "seeds", "diagnose.sweep.", {0, 1, 2, 3, 4});
        if (!dc.sweep_dims.empty() && (dc.sweep_shots.empty() || dc.sweep_seeds.empty()))
            r.fail("diagnose.sweep", "shots and seeds must be non-empty when dims are given");
        c.diagnose = std::move(dc);
    }

    // Normalized form: every effective value, so defaults participate in the hash.
    json norm;
    norm["version"] = c.version;
    norm["dataset"] = {{"name", c.dataset_name}, {"schema", c.schema}, {"path", c.dataset_path.filename().string()}};
    norm["preprocessing"] = {{"dims", c.dims}, {"balanced_sample", c.balanced_sample}, {"seed", c.seed}};
    norm["evaluation"] = {
        {"n_samples", c.n_samples}, {"n_points", c.n_points}, {"test_frac", c.test_frac}, {"folds", c.folds}};
    json q = json::array();
    for (const auto& s : c.quantum) q.push_back(detail::spec_to_json(s));
    norm["kernels"] = {{"quantum", q},
                       {"pq_gamma", c.pq_gamma},
                       {"pq_gamma_grid", c.pq_gamma_grid},
                       {"rbf_gamma_scales", c.rbf_gamma_scales},
                       {"single_q", detail::spec_to_json(c.single_q)}};
    norm["mode"] = {{"shots", c.shots}, {"psd_project", c.psd_project_sampled}};
    json strat = json::array();
    for (auto s : c.strategies) strat.push_back(to_string(s));
    norm["mkl"] = {{"strategies", strat},
                   {"proj_normalize_distance", c.proj_normalize_distance},
                   {"proj_threshold", c.proj_threshold},
                   {"models", c.models}};
    norm["svm"] = {{"C_grid", c.C_grid}};
    if (c.diagnose) {
        const auto& d = *c.diagnose;
        json dk = json::array();
        for (const auto& s : d.kernels) dk.push_back(detail::spec_to_json(s));
        json kinds = json::array();
        for (auto k : d.kinds) kinds.push_back(to_string(k));
        norm["diagnose"] = {{"source", d.source},
                            {"n_points", d.n_points},
                            {"dims", d.dims},
                            {"kernels", dk},
                            {"kinds", kinds},
                            {"gamma", d.gamma},
                            {"sweep", {{"dims", d.sweep_dims}, {"shots", d.sweep_shots}, {"seeds", d.sweep_seeds}}}};
    }
    c.source = std::move(norm);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, bool require_dataset_file = true) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw configuration_error(path.string() + ": invalid JSON: " + e.what());
    }
    return parse_config(doc, std::filesystem::absolute(path).parent_path(), require_dataset_file);
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(c.source.dump())); }

/// Applies a seed override and refreshes the normalized document.
inline void override_seed(ExperimentConfig& c, std::uint64_t seed) {
    c.seed = seed;
    c.source["preprocessing"]["seed"] = seed;
}

// ---------------------------------------------------------------- runtime

struct RunOptions {
    bool force = false;
    int workers = 1;
    std::ostream* log = nullptr;
};

namespace detail {

inline std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

inline void log(const RunOptions& o, const std::string& msg) {
    if (!o.log) return;
    std::lock_guard lock(log_mutex());
    *o.log << msg << '\n';
}

inline std::string two_digits(std::size_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%02zu", v);
    return buf;
}

inline std::string split_tag(std::size_t sample, std::size_t dim) {
    return "s" + two_digits(sample) + "_d" + two_digits(dim);
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void ensure_dir(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw io_error("cannot create directory '" + p.string() + "': " + ec.message());
}

} // namespace detail

inline std::filesystem::path prepared_path(const ExperimentConfig& c, std::size_t sample, std::size_t dim) {
    return c.output / "prepared" / (detail::split_tag(sample, dim) + ".csv");
}

inline Dataset load_dataset(const ExperimentConfig& c) {
    if (!std::filesystem::exists(c.dataset_path))
        throw configuration_error("dataset.path: file not found: " + c.dataset_path.string());
    return load_csv(c.dataset_path, schema_by_name(c.schema));
}

inline SplitOptions split_options(const ExperimentConfig& c) {
    return {c.n_points, c.test_frac, c.folds, c.balanced_sample};
}

/// Writes prepared/s<ss>_d<dd>.csv for every sample and dimension.
inline std::vector<std::filesystem::path> cmd_prepare(const ExperimentConfig& c, const RunOptions& o = {}) {
    const Dataset ds = load_dataset(c);
    detail::log(o, "prepare: " + ds.provenance);
    detail::ensure_dir(c.output / "prepared");
    std::vector<std::filesystem::path> written(c.n_samples * c.dims.size());
    parallel_for(c.n_samples, o.workers, [&](std::size_t s) {
        const auto plan = make_split_plan(ds.labels, static_cast<int>(s), c.seed, split_options(c));
        for (std::size_t k = 0; k < c.dims.size(); ++k) {
            const auto split = prepare_split(ds, plan, c.dims[k]);
            const auto path = prepared_path(c, s, c.dims[k]);
            write_prepared_split(path, split);
            written[s * c.dims.size() + k] = path;
        }
    });
    detail::log(o, "prepare: wrote " + std::to_string(written.size()) + " split files");
    return written;
}

inline PreparedSplit load_prepared(const ExperimentConfig& c, std::size_t sample, std::size_t dim,
                                   std::string* digest = nullptr) {
    const auto path = prepared_path(c, sample, dim);
    if (!std::filesystem::exists(path))
        throw io_error("missing prepared split '" + path.string() + "'; run prepare first");
    if (digest) *digest = hex64(fnv1a64(detail::read_text(path)));
    return read_prepared_split(path);
}

// ---------------------------------------------------------------- kernels

/// One Gram matrix family member: a quantum map (fidelity or projected at γ)
/// or an RBF kernel with γ = scale / (dim · Var(X_train)).
struct KernelEntry {
    KernelKind kind = KernelKind::fidelity;
    FeatureMapSpec spec;
    double gamma = 0.0;  // projected: γ; rbf: scale factor

    std::string label() const {
        if (kind == KernelKind::rbf) return "rbf(scale=" + short_double(gamma) + ")";
        std::string s = to_string(kind) + "(" + spec.paulis() + ",a=" + short_double(spec.alpha);
        if (kind == KernelKind::projected) s += ",g=" + short_double(gamma);
        return s + ")";
    }

    std::string identity() const {
        if (kind == KernelKind::rbf) return "rbf|scale=" + format_double(gamma);
        std::string s = to_string(kind) + "|" + spec.canonical();
        if (kind == KernelKind::projected) s += "|gamma=" + format_double(gamma);
        return s;
    }
};

inline std::vector<double> pq_gammas(const ExperimentConfig& c) {
    return c.pq_gamma_grid.empty() ? std::vector<double>{c.pq_gamma} : c.pq_gamma_grid;
}

/// Every kernel the configured models use, without duplicates, in a fixed order.
inline std::vector<KernelEntry> kernel_entries(const ExperimentConfig& c) {
    std::vector<KernelEntry> out;
    std::set<std::string> seen;
    auto add = [&](KernelEntry e) {
        if (seen.insert(e.identity()).second) out.push_back(std::move(e));
    };
    auto uses = [&](const char* m) { return std::find(c.models.begin(), c.models.end(), m) != c.models.end(); };
    const bool fq = uses("FQ-MKL") || uses("CQ-MKL") || uses("Single(Q) Opt");
    const bool pq = uses("PQ-MKL") || uses("CQ-MKL");
    const bool rbf = uses("C-MKL") || uses("CQ-MKL") || uses("Single(C) Opt");
    if (fq)
        for (const auto& s : c.quantum) add({KernelKind::fidelity, s, 0.0});
    if (pq)
        for (double g : pq_gammas(c))
            for (const auto& s : c.quantum) add({KernelKind::projected, s, g});
    if (rbf)
        for (double g : c.rbf_gamma_scales) add({KernelKind::rbf, {}, g});
    if (uses("Single(Q)")) add({KernelKind::fidelity, c.single_q, 0.0});
    if (uses("Single(C)")) add({KernelKind::rbf, {}, 1.0});
    return out;
}

/// Master seed for the shot noise of one kernel at one dimension.
inline std::uint64_t kernel_seed(const ExperimentConfig& c, const KernelEntry& e, std::size_t dim) {
    return derive_seed(c.seed, {fnv1a64(e.identity()), static_cast<std::uint64_t>(dim), 0x5107ULL});
}

inline std::filesystem::path kernel_path(const ExperimentConfig& c, std::size_t sample, std::size_t dim,
                                         const KernelEntry& e, const char* part) {
    const std::string digest =
        hex64(fnv1a64(e.identity() + "|shots=" + std::to_string(c.shots) + "|seed=" + std::to_string(c.seed)));
    return c.output / "kernels" / detail::split_tag(sample, dim) /
           (to_string(e.kind) + "-" + digest + "." + part + ".csv");
}

/// Population variance over all entries.
inline double feature_variance(const Matrix& X) {
    const auto d = X.data();
    if (d.empty()) return 0.0;
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    return var / static_cast<double>(d.size());
}

inline double rbf_gamma(double scale, const Matrix& X_train) {
    const double var = feature_variance(X_train);
    const double dim = static_cast<double>(X_train.cols());
    return scale / (dim * (var > 0.0 ? var : 1.0));
}

struct KernelPair {
    KernelMatrix train;  // train × train
    KernelMatrix test;   // test × train
};

inline KernelPair compute_kernel(const ExperimentConfig& c, const PreparedSplit& s, const KernelEntry& e,
                                 int workers) {
    KernelOptions opt;
    opt.shots = c.shots;
    opt.seed = kernel_seed(c, e, s.dim);
    opt.workers = workers;
    KernelPair p;
    switch (e.kind) {
    case KernelKind::fidelity:
        p.train = fidelity_matrix(e.spec, s.X_train, opt, s.train_ids);
        p.test = fidelity_matrix(e.spec, s.X_test, s.X_train, opt, s.test_ids, s.train_ids, false);
        break;
    case KernelKind::projected: {
        const auto ftr = projected_features(e.spec, s.X_train, opt, s.train_ids);
        const auto fte = projected_features(e.spec, s.X_test, opt, s.test_ids);
        p.train = projected_matrix(ftr, ftr, e.gamma);
        p.test = projected_matrix(fte, ftr, e.gamma);
        for (auto* k : {&p.train, &p.test}) {
            k->meta.spec = e.spec.canonical();
            k->meta.alpha = e.spec.alpha;
            k->meta.shots = c.shots;
            k->meta.seed = opt.seed;
        }
        break;
    }
    case KernelKind::rbf: {
        const double g = rbf_gamma(e.gamma, s.X_train);
        p.train = rbf_matrix(s.X_train, s.X_train, g);
        p.test = rbf_matrix(s.X_test, s.X_train, g);
        p.train.row_ids = p.train.col_ids = p.test.col_ids = s.train_ids;
        p.test.row_ids = s.test_ids;
        break;
    }
    case KernelKind::combined: throw usage_error("compute_kernel: combined is not a base kernel");
    }
    return p;
}

namespace detail {

inline KernelMeta read_kernel_header(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line;
    if (!in || !std::getline(in, line)) throw io_error("cannot read '" + p.string() + "'");
    std::istringstream one(line + "\nrow_id\n");
    return read_kernel_csv(one).meta;
}

inline void check_fresh(const std::filesystem::path& p, const KernelMeta& expected) {
    KernelMeta got;
    try {
        got = read_kernel_header(p);
    } catch (const std::invalid_argument& e) {
        throw stale_artifact_error(p.string() + ": unreadable header (" + e.what() + "); rerun with --force");
    }
    if (got.source != expected.source || got.spec != expected.spec || got.shots != expected.shots ||
        got.seed != expected.seed)
        throw stale_artifact_error(p.string() + ": built from different inputs; rerun with --force");
}

} // namespace detail

/// Computes (or verifies) every kernel file of one split. Returns the number
/// of kernels computed.
inline std::size_t ensure_split_kernels(const ExperimentConfig& c, std::size_t sample, std::size_t dim,
                                        const RunOptions& o) {
    std::string digest;
    const auto split = load_prepared(c, sample, dim, &digest);
    detail::ensure_dir(c.output / "kernels" / detail::split_tag(sample, dim));
    std::size_t computed = 0;
    for (const auto& e : kernel_entries(c)) {
        const auto ptr = kernel_path(c, sample, dim, e, "train");
        const auto pte = kernel_path(c, sample, dim, e, "test");
        KernelMeta expected;
        expected.source = digest;
        expected.spec = e.kind == KernelKind::rbf ? "" : e.spec.canonical();
        expected.shots = e.kind == KernelKind::rbf ? 0 : c.shots;
        expected.seed = e.kind == KernelKind::rbf ? 0 : kernel_seed(c, e, dim);
        if (!o.force && std::filesystem::exists(ptr) && std::filesystem::exists(pte)) {
            detail::check_fresh(ptr, expected);
            detail::check_fresh(pte, expected);
            continue;
        }
        auto pair = compute_kernel(c, split, e, 1);
        for (auto* k : {&pair.train, &pair.test}) {
            k->meta.source = digest;
            if (e.kind == KernelKind::rbf) k->meta.shots = 0, k->meta.seed = 0;
        }
        save_kernel(ptr.string(), pair.train);
        save_kernel(pte.string(), pair.test);
        ++computed;
    }
    return computed;
}

inline std::size_t cmd_kernels(const ExperimentConfig& c, const RunOptions& o = {}) {
    std::vector<std::pair<std::size_t, std::size_t>> tasks;
    for (std::size_t s = 0; s < c.n_samples; ++s)
        for (auto d : c.dims) tasks.emplace_back(s, d);
    std::vector<std::size_t> counts(tasks.size(), 0);
    parallel_for(tasks.size(), o.workers, [&](std::size_t t) {
        counts[t] = ensure_split_kernels(c, tasks[t].first, tasks[t].second, o);
        detail::log(o, "kernels: " + detail::split_tag(tasks[t].first, tasks[t].second) + " computed " +
                           std::to_string(counts[t]));
    });
    std::size_t total = 0;
    for (auto n : counts) total += n;
    return total;
}

// ---------------------------------------------------------------- evaluation

/// Training-side view of one split. Test labels are deliberately absent.
struct TrainView {
    std::vector<Matrix> kernels;  // train × train, one per kernel entry
    std::vector<int> labels;
    std::vector<int> folds;
    std::size_t n_folds = 4;
};

/// A candidate kernel set for one model; CV picks among candidates and C.
struct Candidate {
    std::string label;
    std::vector<std::size_t> kernels;  // indices into TrainView::kernels
};

struct FitOptions {
    std::vector<double> C_grid = {0.1, 1.0, 10.0, 100.0};
    ProjectionOptions projection;
};

struct FittedModel {
    std::size_t candidate = 0;
    double C = 1.0;
    double cv_auc = 0.0;
    WeightVector weights;
    SvmModel svm;
    double train_auc = 0.0;
    double alignment = 0.0;
    double centered_alignment = 0.0;
    ConcentrationStats stats;
    std::size_t cv_failures = 0;
};

namespace detail {

inline std::vector<Matrix> gather(const std::vector<Matrix>& all, const std::vector<std::size_t>& idx,
                                  std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
    std::vector<Matrix> out;
    out.reserve(idx.size());
    for (auto k : idx) out.push_back(all[k].select(rows, cols));
    return out;
}

inline std::vector<int> pick(std::span<const int> v, std::span<const std::size_t> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

inline bool two_classes(std::span<const int> y) {
    return std::find(y.begin(), y.end(), 1) != y.end() && std::find(y.begin(), y.end(), -1) != y.end();
}

inline bool folds_two_class(std::span<const int> labels, std::span<const int> folds, std::size_t n_folds) {
    std::vector<int> pos(n_folds, 0), neg(n_folds, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg)[folds[i]]++;
    std::size_t total_pos = 0, total_neg = 0;
    for (std::size_t f = 0; f < n_folds; ++f) total_pos += pos[f], total_neg += neg[f];
    for (std::size_t f = 0; f < n_folds; ++f) {
        // both the held-out fold and its complement need both classes
        if (pos[f] == 0 || neg[f] == 0) return false;
        if (total_pos == static_cast<std::size_t>(pos[f]) || total_neg == static_cast<std::size_t>(neg[f]))
            return false;
    }
    return true;
}

} // namespace detail

/// Returns `folds` unchanged when every fold is usable; otherwise reshuffles the
/// assignment once (same fold sizes) and throws if that is still degenerate.
inline std::vector<int> usable_folds(std::span<const int> labels, std::vector<int> folds, std::size_t n_folds,
                                     std::uint64_t seed) {
    if (detail::folds_two_class(labels, folds, n_folds)) return folds;
    Xoshiro256 rng(derive_seed(seed, {0xF01DULL}));
    for (std::size_t i = folds.size(); i > 1; --i) std::swap(folds[i - 1], folds[rng.bounded(i)]);
    if (detail::folds_two_class(labels, folds, n_folds)) return folds;
    throw degenerate_input_error("cross validation: a fold is single-class after resampling");
}

/// Chooses the candidate and C by mean validation AUC over the folds (weights
/// refit on each fold's training part), then refits on the full training set.
inline FittedModel fit_model(const TrainView& view, const std::vector<Candidate>& candidates, Strategy strategy,
                             const FitOptions& opt) {
    if (candidates.empty()) throw usage_error("fit_model: no candidates");
    const std::size_t m = view.labels.size();
    std::vector<std::vector<std::size_t>> fold_train(view.n_folds), fold_val(view.n_folds);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t f = 0; f < view.n_folds; ++f)
            (static_cast<std::size_t>(view.folds[i]) == f ? fold_val : fold_train)[f].push_back(i);
    for (std::size_t f = 0; f < view.n_folds; ++f)
        if (!detail::two_classes(detail::pick(view.labels, fold_train[f])) ||
            !detail::two_classes(detail::pick(view.labels, fold_val[f])))
            throw degenerate_input_error("fit_model: fold " + std::to_string(f) + " is single-class");

    FittedModel best;
    double best_score = -1.0;
    bool found = false;
    std::size_t failures = 0;
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        const auto& cand = candidates[ci];
        std::vector<double> sum_auc(opt.C_grid.size(), 0.0);
        std::vector<bool> ok(opt.C_grid.size(), true);
        for (std::size_t f = 0; f < view.n_folds; ++f) {
            const auto ytr = detail::pick(view.labels, fold_train[f]);
            const auto yva = detail::pick(view.labels, fold_val[f]);
            const auto ktr = detail::gather(view.kernels, cand.kernels, fold_train[f], fold_train[f]);
            const auto kva = detail::gather(view.kernels, cand.kernels, fold_val[f], fold_train[f]);
            WeightVector w;
            try {
                w = fit_weights(strategy, ktr, target_kernel(ytr), opt.projection);
            } catch (const degenerate_input_error&) {
                std::fill(ok.begin(), ok.end(), false);
                ++failures;
                break;
            } catch (const solver_error&) {
                std::fill(ok.begin(), ok.end(), false);
                ++failures;
                break;
            }
            const Matrix Ktr = combine(ktr, w.weights);
            const Matrix Kva = combine(kva, w.weights);
            for (std::size_t k = 0; k < opt.C_grid.size(); ++k) {
                if (!ok[k]) continue;
                try {
                    SvmOptions so;
                    so.C = opt.C_grid[k];
                    const auto model = train_svm(Ktr, ytr, so);
                    sum_auc[k] += roc_auc(decision_values(model, Kva), yva).auc;
                } catch (const solver_error&) {
                    ok[k] = false;
                    ++failures;
                }
            }
        }
        for (std::size_t k = 0; k < opt.C_grid.size(); ++k) {
            if (!ok[k]) continue;
            const double score = sum_auc[k] / static_cast<double>(view.n_folds);
            if (!found || score > best_score) {
                found = true;
                best_score = score;
                best.candidate = ci;
                best.C = opt.C_grid[k];
            }
        }
    }
    if (!found) throw solver_error("fit_model: every candidate failed during cross validation", {});

    const auto& cand = candidates[best.candidate];
    std::vector<Matrix> ks;
    for (auto k : cand.kernels) ks.push_back(view.kernels[k]);
    const Matrix Ky = target_kernel(view.labels);
    best.cv_auc = best_score;
    best.cv_failures = failures;
    best.weights = fit_weights(strategy, ks, Ky, opt.projection);
    const Matrix K = combine(ks, best.weights.weights);
    SvmOptions so;
    so.C = best.C;
    best.svm = train_svm(K, view.labels, so);
    best.train_auc = roc_auc(decision_values(best.svm, K), view.labels).auc;
    best.alignment = alignment(K, Ky);
    try {
        best.centered_alignment = centered_alignment(K, Ky);
    } catch (const degenerate_input_error&) {
        best.centered_alignment = 0.0;
    }
    best.stats = concentration_stats(K, 0);
    return best;
}

/// Scores a fitted model on the test × train kernels of its chosen candidate.
inline double score_model(const FittedModel& fm, const std::vector<Matrix>& test_kernels,
                          const std::vector<Candidate>& candidates, std::span<const int> test_labels) {
    std::vector<Matrix> ks;
    for (auto k : candidates[fm.candidate].kernels) ks.push_back(test_kernels[k]);
    return roc_auc(decision_values(fm.svm, combine(ks, fm.weights.weights)), test_labels).auc;
}

struct ModelDef {
    std::string name;         // e.g. "PQ-MKL"
    std::string kernel_kind;  // fidelity, projected, mixed, rbf
    Strategy strategy = Strategy::AVE;
    bool single = false;
    std::vector<Candidate> candidates;
};

/// Expands the configured model names into concrete definitions over `entries`.
inline std::vector<ModelDef> model_defs(const ExperimentConfig& c, const std::vector<KernelEntry>& entries) {
    auto find = [&](const KernelEntry& e) {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].identity() == e.identity()) return i;
        throw usage_error("model_defs: kernel " + e.label() + " was not computed");
    };
    // resolved on first use: only the kernels of configured models exist
    auto fq_set = [&] {
        std::vector<std::size_t> v;
        for (const auto& s : c.quantum) v.push_back(find({KernelKind::fidelity, s, 0.0}));
        return v;
    };
    auto rbf_set = [&] {
        std::vector<std::size_t> v;
        for (double g : c.rbf_gamma_scales) v.push_back(find({KernelKind::rbf, {}, g}));
        return v;
    };
    auto pq_at = [&](double g) {
        std::vector<std::size_t> v;
        for (const auto& s : c.quantum) v.push_back(find({KernelKind::projected, s, g}));
        return v;
    };

    std::vector<ModelDef> out;
    auto mkl = [&](const std::string& name, const std::string& kind, std::vector<Candidate> cands) {
        for (auto s : c.strategies) out.push_back({name, kind, s, false, cands});
    };
    for (const auto& name : c.models) {
        if (name == "FQ-MKL") {
            mkl(name, "fidelity", {{"all", fq_set()}});
        } else if (name == "PQ-MKL") {
            std::vector<Candidate> cands;
            for (double g : pq_gammas(c)) cands.push_back({"gamma=" + short_double(g), pq_at(g)});
            mkl(name, "projected", cands);
        } else if (name == "CQ-MKL") {
            std::vector<Candidate> cands;
            const auto fq = fq_set();
            const auto rbf = rbf_set();
            for (double g : pq_gammas(c)) {
                Candidate cand{"gamma=" + short_double(g), fq};
                const auto pq = pq_at(g);
                cand.kernels.insert(cand.kernels.end(), pq.begin(), pq.end());
                cand.kernels.insert(cand.kernels.end(), rbf.begin(), rbf.end());
                cands.push_back(std::move(cand));
            }
            mkl(name, "mixed", cands);
        } else if (name == "C-MKL") {
            mkl(name, "rbf", {{"all", rbf_set()}});
        } else if (name == "Single(Q)") {
            out.push_back({name, "fidelity", Strategy::AVE, true,
                           {{entries[find({KernelKind::fidelity, c.single_q, 0.0})].label(),
                             {find({KernelKind::fidelity, c.single_q, 0.0})}}}});
        } else if (name == "Single(Q) Opt") {
            std::vector<Candidate> cands;
            for (auto k : fq_set()) cands.push_back({entries[k].label(), {k}});
            out.push_back({name, "fidelity", Strategy::AVE, true, cands});
        } else if (name == "Single(C)") {
            const auto k = find({KernelKind::rbf, {}, 1.0});
            out.push_back({name, "rbf", Strategy::AVE, true, {{entries[k].label(), {k}}}});
        } else if (name == "Single(C) Opt") {
            std::vector<Candidate> cands;
            for (auto k : rbf_set()) cands.push_back({entries[k].label(), {k}});
            out.push_back({name, "rbf", Strategy::AVE, true, cands});
        }
    }
    return out;
}

inline std::string model_key(const ModelDef& d) {
    return d.single ? d.name : d.name + " " + to_string(d.strategy);
}

inline json weights_json(const WeightVector& w) {
    return json{{"strategy", to_string(w.strategy)}, {"raw", w.raw},           {"normalized", w.weights},
                {"selected", w.selected},            {"objective", w.objective}, {"iterations", w.iterations}};
}

/// Evaluates every model on one split; returns the per-split record.
inline json evaluate_split(const ExperimentConfig& c, std::size_t sample, std::size_t dim, const RunOptions& o) {
    ensure_split_kernels(c, sample, dim, o);
    const auto split = load_prepared(c, sample, dim);
    const auto entries = kernel_entries(c);

    TrainView view;
    view.labels = split.y_train;
    view.n_folds = c.folds;
    view.folds = usable_folds(view.labels, split.folds, c.folds,
                              derive_seed(c.seed, {static_cast<std::uint64_t>(sample), dim}));
    std::vector<Matrix> test_kernels;
    json kernel_stats = json::array();
    const Matrix Ky = target_kernel(view.labels);
    for (const auto& e : entries) {
        auto tr = load_kernel(kernel_path(c, sample, dim, e, "train").string());
        auto te = load_kernel(kernel_path(c, sample, dim, e, "test").string());
        if (tr.rows() != split.y_train.size() || te.rows() != split.y_test.size() || te.cols() != tr.cols())
            throw stale_artifact_error("kernel shapes do not match prepared split " + detail::split_tag(sample, dim));
        if (c.shots > 0 && c.psd_project_sampled && e.kind != KernelKind::rbf) tr = psd_project(tr);
        const auto st = concentration_stats(tr.values, static_cast<int>(dim));
        kernel_stats.push_back({{"kernel", e.label()},
                                {"kind", to_string(e.kind)},
                                {"alignment", alignment(tr.values, Ky)},
                                {"offdiag_mean", st.offdiag_mean},
                                {"offdiag_variance", st.offdiag_variance},
                                {"fq_distance", st.fq_distance},
                                {"pq_distance", st.pq_distance}});
        view.kernels.push_back(std::move(tr.values));
        test_kernels.push_back(std::move(te.values));
    }

    FitOptions fo;
    fo.C_grid = c.C_grid;
    fo.projection.normalize_distance = c.proj_normalize_distance;
    fo.projection.norm_threshold = c.proj_threshold;

    json models = json::array();
    for (const auto& d : model_defs(c, entries)) {
        json rec{{"model", d.name},
                 {"key", model_key(d)},
                 {"kernel_kind", d.kernel_kind},
                 {"strategy", d.single ? "single" : to_string(d.strategy)}};
        try {
            const auto fm = fit_model(view, d.candidates, d.strategy, fo);
            rec["status"] = "ok";
            rec["candidate"] = d.candidates[fm.candidate].label;
            rec["C"] = fm.C;
            rec["cv_auc"] = fm.cv_auc;
            rec["cv_failures"] = fm.cv_failures;
            rec["train_auc"] = fm.train_auc;
            rec["test_auc"] = score_model(fm, test_kernels, d.candidates, split.y_test);
            rec["alignment"] = fm.alignment;
            rec["centered_alignment"] = fm.centered_alignment;
            rec["offdiag_mean"] = fm.stats.offdiag_mean;
            rec["offdiag_variance"] = fm.stats.offdiag_variance;
            rec["n_support"] = fm.svm.support_indices.size();
            rec["bias"] = fm.svm.bias;
            json names = json::array();
            for (auto k : d.candidates[fm.candidate].kernels) names.push_back(entries[k].label());
            rec["kernels"] = names;
            rec["weights"] = weights_json(fm.weights);
        } catch (const std::exception& e) {
            rec["status"] = "failed";
            rec["error"] = e.what();
        }
        models.push_back(std::move(rec));
    }
    return json{{"config_hash", config_hash(c)},
                {"sample_id", sample},
                {"dim", dim},
                {"n_train", split.y_train.size()},
                {"n_test", split.y_test.size()},
                {"kernels", kernel_stats},
                {"models", models}};
}

/// Count, per dimension, of samples in which each model attains the best test AUC.
inline std::map<std::size_t, std::map<std::string, int>> best_counts(const std::vector<json>& records) {
    std::map<std::size_t, std::map<std::string, int>> out;
    for (const auto& r : records) {
        const std::size_t dim = r["dim"].get<std::size_t>();
        auto& row = out[dim];
        double best = -1.0;
        for (const auto& m : r["models"]) {
            row.try_emplace(m["key"].get<std::string>(), 0);
            if (m["status"] == "ok") best = std::max(best, m["test_auc"].get<double>());
        }
        for (const auto& m : r["models"])
            if (m["status"] == "ok" && m["test_auc"].get<double>() == best) ++row[m["key"].get<std::string>()];
    }
    return out;
}

struct RunSummary {
    std::vector<json> records;
    std::filesystem::path results_json;
    std::filesystem::path tidy_csv;
    std::filesystem::path best_counts_csv;
};

inline RunSummary cmd_run(const ExperimentConfig& c, const RunOptions& o = {}) {
    const auto dir = c.output / "results";
    detail::ensure_dir(dir);
    const std::string hash = config_hash(c);
    std::vector<std::pair<std::size_t, std::size_t>> tasks;
    for (std::size_t s = 0; s < c.n_samples; ++s)
        for (auto d : c.dims) tasks.emplace_back(s, d);

    std::vector<json> records(tasks.size());
    std::vector<double> seconds(tasks.size(), 0.0);
    parallel_for(tasks.size(), o.workers, [&](std::size_t t) {
        const auto [s, d] = tasks[t];
        const auto path = dir / (detail::split_tag(s, d) + ".json");
        if (!o.force && std::filesystem::exists(path)) {
            auto existing = json::parse(detail::read_text(path));
            if (existing.value("config_hash", "") == hash) {
                records[t] = std::move(existing);
                return;
            }
        }
        const auto t0 = std::chrono::steady_clock::now();
        records[t] = evaluate_split(c, s, d, o);
        seconds[t] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_file_atomic(path, records[t].dump(1) + "\n");
        detail::log(o, "run: " + detail::split_tag(s, d) + " done");
    });

    std::vector<TidyRow> tidy;
    for (const auto& r : records) {
        for (const auto& m : r["models"]) {
            if (m["status"] != "ok") continue;
            TidyRow base{c.dataset_name, r["sample_id"].get<int>(), r["dim"].get<int>(),
                         m["kernel_kind"].get<std::string>(), m["model"].get<std::string>() + ":" +
                                                                  m["strategy"].get<std::string>(),
                         c.shots, "", 0.0};
            for (const char* metric : {"test_auc", "train_auc", "cv_auc", "alignment", "centered_alignment",
                                       "offdiag_mean", "offdiag_variance"}) {
                TidyRow row = base;
                row.metric = metric;
                row.value = m[metric].get<double>();
                tidy.push_back(std::move(row));
            }
        }
    }

    RunSummary out;
    out.records = records;
    out.results_json = dir / "results.json";
    out.tidy_csv = dir / "tidy.csv";
    out.best_counts_csv = dir / "best_counts.csv";
    json all{{"config_hash", hash}, {"config", c.source}, {"records", records}};
    write_file_atomic(out.results_json, all.dump(1) + "\n");
    write_tidy_csv(out.tidy_csv, tidy);

    std::ostringstream bc;
    bc << "n_qubits,model,best_count\n";
    for (const auto& [dim, row] : best_counts(records))
        for (const auto& [key, n] : row) bc << dim << ',' << key << ',' << n << '\n';
    write_file_atomic(out.best_counts_csv, bc.str());

    json timings = json::array();
    for (std::size_t t = 0; t < tasks.size(); ++t)
        timings.push_back({{"sample_id", tasks[t].first}, {"dim", tasks[t].second}, {"seconds", seconds[t]}});
    write_file_atomic(dir / "timings.json", json{{"config_hash", hash}, {"tasks", timings}}.dump(1) + "\n");
    return out;
}

// ---------------------------------------------------------------- diagnose

/// Feature matrix for the diagnostics: uniform in [0, 2], or n_points drawn
/// from the dataset and passed through the preprocessing pipeline (fit on
/// those same points).
inline Matrix diagnose_points(const ExperimentConfig& c, const Dataset* ds, std::size_t dim) {
    const auto& d = *c.diagnose;
    Xoshiro256 rng(derive_seed(c.seed, {0xD1A6ULL, static_cast<std::uint64_t>(dim)}));
    if (d.source == "uniform") {
        Matrix X(d.n_points, dim);
        for (double& v : X.data()) v = 2.0 * rng.uniform();
        return X;
    }
    const auto rows = draw_points(ds->labels, d.n_points, rng, c.balanced_sample);
    const Matrix raw = ds->X.select_rows(rows);
    return apply_pipeline(fit_pipeline(raw, dim), raw);
}

struct DiagnoseSummary {
    std::vector<TidyRow> concentration;
    std::vector<TidyRow> sweep;
};

inline DiagnoseSummary cmd_diagnose(const ExperimentConfig& c, const RunOptions& o = {}) {
    if (!c.diagnose) throw configuration_error("diagnose: section missing from configuration");
    const auto& d = *c.diagnose;
    std::optional<Dataset> ds;
    if (d.source == "dataset") ds = load_dataset(c);
    const auto dir = c.output / "diagnose";
    detail::ensure_dir(dir / "kernels");
    const std::string dataset = d.source == "uniform" ? std::string("uniform") : c.dataset_name;

    DiagnoseSummary out;
    KernelOptions kopt;
    kopt.workers = o.workers;
    for (auto dim : d.dims) {
        const Matrix X = diagnose_points(c, ds ? &*ds : nullptr, dim);
        for (const auto& spec : d.kernels) {
            for (auto kind : d.kinds) {
                const Matrix K = kind == KernelKind::fidelity
                                     ? fidelity_matrix(spec, X, kopt).values
                                     : [&] {
                                           const auto f = projected_features(spec, X, kopt);
                                           return projected_matrix(f, f, d.gamma).values;
                                       }();
                const std::string label = spec.paulis() + "@" + short_double(spec.alpha);
                TidyRow base{dataset, -1, static_cast<int>(dim), to_string(kind), label, 0, "", 0.0};
                append_stats(out.concentration, base, concentration_stats(K, static_cast<int>(dim)));
            }
        }
        detail::log(o, "diagnose: concentration dim " + std::to_string(dim));
    }
    write_tidy_csv(dir / "concentration.csv", out.concentration);

    for (auto dim : d.sweep_dims) {
        const Matrix X = diagnose_points(c, ds ? &*ds : nullptr, dim);
        for (const auto& spec : d.kernels) {
            for (auto kind : d.kinds) {
                const auto rows = shot_sweep(spec, X, kind, d.sweep_shots, d.sweep_seeds, d.gamma, o.workers);
                const std::string label = spec.paulis() + "@" + short_double(spec.alpha);
                for (const auto& row : rows) {
                    TidyRow base{dataset, -1, static_cast<int>(dim), to_string(kind), label, row.shots, "", 0.0};
                    append_fit(out.sweep, base, row.mean_fit);
                    append_stats(out.sweep, base, row.stats);
                }
                // Exact and first-seed sampled matrices for scatter plots.
                KernelOptions eo = kopt;
                const std::string stem = "d" + detail::two_digits(dim) + "_" + to_string(kind) + "_" +
                                         hex64(fnv1a64(spec.canonical())).substr(0, 8);
                auto build = [&](const KernelOptions& ko) {
                    if (kind == KernelKind::fidelity) return fidelity_matrix(spec, X, ko);
                    const auto f = projected_features(spec, X, ko);
                    auto k = projected_matrix(f, f, d.gamma);
                    k.meta.spec = spec.canonical();
                    k.meta.alpha = spec.alpha;
                    k.meta.shots = ko.shots;
                    k.meta.seed = ko.seed;
                    return k;
                };
                save_kernel((dir / "kernels" / (stem + "_exact.csv")).string(), build(eo));
                for (auto shots : d.sweep_shots) {
                    KernelOptions so = kopt;
                    so.shots = shots;
                    so.seed = d.sweep_seeds.front();
                    save_kernel((dir / "kernels" / (stem + "_shots" + std::to_string(shots) + ".csv")).string(),
                                build(so));
                }
            }
        }
        detail::log(o, "diagnose: shot sweep dim " + std::to_string(dim));
    }
    write_tidy_csv(dir / "shot_sweep.csv", out.sweep);
    return out;
}

} // namespace qmkl
