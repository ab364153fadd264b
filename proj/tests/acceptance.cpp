// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <fstream>
#include <map>
#include <set>
#include <tuple>
#include <sstream>

#include <CLI11.hpp>

#include "oracles.hpp"

using namespace qmkl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

fs::path data_dir, work_dir;
const std::uint64_t protocol_seed = 2023;

fs::path german_file() { return data_dir / "german.data-numeric"; }
fs::path bank_file() { return data_dir / "bank-full.csv"; }

std::string missing_reason(const fs::path& p) {
    return p.string() + " not found; see data/README.md for the download";
}

std::vector<int> random_pm(std::size_t m, std::uint64_t seed) {
    Xoshiro256 rng(seed);
    std::vector<int> y(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = i == 0 ? 1 : i == 1 ? -1 : (rng.bounded(2) ? 1 : -1);
    return y;
}

bool psd_ok(const Matrix& K, double* ratio = nullptr) {
    const auto e = jacobi_eigen(K);
    const double lo = e.values.back(), hi = e.values.front();
    if (ratio) *ratio = lo / hi;
    return lo >= -1e-8 * hi;
}

// ------------------------------------------------------------------ criteria

Outcome analytic_oracle() {
    const double alphas[] = {0.1, 0.4, 1.0, 2.0, 3.7};
    const double deltas[] = {-1.3, -0.2, 0.0, 0.7, 1.9};
    const double gammas[] = {0.1, 0.5, 1.0, 2.0};
    double worst_f = 0.0, worst_p = 0.0;
    int points = 0;
    for (double a : alphas) {
        const auto spec = parse_spec("Z", a, 1);
        for (double d : deltas) {
            const Matrix X = Matrix::from_rows({{0.3}, {0.3 + d}});
            const auto f = projected_features(spec, X);
            const double fid = fidelity_entry(spec, X.row(0), X.row(1));
            worst_f = std::max(worst_f, std::abs(fid - std::pow(std::cos(a * d), 2)));
            for (double g : gammas) {
                const double s = std::sin(a * d);
                worst_p = std::max(worst_p, std::abs(projected_matrix(f, f, g)(0, 1) - std::exp(-2.0 * g * s * s)));
                ++points;
            }
        }
    }
    return {points == 100 && worst_f < 1e-10 && worst_p < 1e-10,
            std::to_string(points) + " grid points, max err fidelity " + fmt(worst_f) + ", projected " + fmt(worst_p)};
}

Outcome simulator_equivalence() {
    Xoshiro256 rng(11);
    double worst = 0.0;
    int states = 0;
    for (const auto& spec : default_kernel_set())
        for (int n = spec.has_pair_layer() ? 2 : 1; n <= 3; ++n) {
            std::vector<double> x(n);
            for (double& v : x) v = 2.0 * rng.uniform();
            const auto got = encode(spec, x);
            const auto want = oracle::dense_encode(spec.paulis(), spec.alpha, spec.reps, to_string(spec.entanglement),
                                                   spec.data_map == DataMap::pi_minus_product, x);
            for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
            ++states;
        }
    return {worst < 1e-10, std::to_string(states) + " (map, n) states, max amplitude err " + fmt(worst)};
}

Outcome psd_guarantee() {
    bool ok = true;
    double worst = std::numeric_limits<double>::infinity();
    std::size_t checked = 0, combos = 0;
    for (std::size_t n : {4u, 8u}) {
        const auto X = oracle::random_matrix(50, n, 100 + n);
        std::vector<Matrix> ks;
        for (const auto& spec : default_kernel_set()) {
            ks.push_back(fidelity_matrix(spec, X).values);
            const auto f = projected_features(spec, X);
            ks.push_back(projected_matrix(f, f, 1.0).values);
        }
        for (double g : {0.1, 1.0, 10.0}) ks.push_back(rbf_matrix(X, X, g).values);
        for (const auto& K : ks) {
            double r = 0.0;
            ok = psd_ok(K, &r) && ok;
            worst = std::min(worst, r);
            ++checked;
        }
        const auto Ky = target_kernel(random_pm(50, n));
        for (auto s : {Strategy::AVE, Strategy::SDP, Strategy::CENT, Strategy::PROJ}) {
            const auto w = fit_weights(s, ks, Ky);
            double r = 0.0;
            ok = psd_ok(combine(ks, w.weights), &r) && ok;
            worst = std::min(worst, r);
            ++combos;
        }
    }
    return {ok, std::to_string(checked) + " kernels and " + std::to_string(combos) +
                    " combinations, worst min/max eigenvalue ratio " + fmt(worst)};
}

Outcome optimizer_oracles() {
    double qcqp_err = 0.0, cent_err = 0.0, svm_err = 0.0;
    int cent_instances = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const std::size_t nk = 1 + seed % 3;
        std::vector<Matrix> ks;
        for (std::size_t k = 0; k < nk; ++k) ks.push_back(oracle::random_psd(8, 2 + k, seed * 31 + k));
        std::vector<int> y = random_pm(8, seed);
        const auto Ky = target_kernel(y);
        const double want = oracle::qcqp_value(detail::gram_of(ks), detail::inner_with(ks, Ky));
        qcqp_err = std::max(qcqp_err, std::abs(weights_qcqp(ks, Ky).objective - want) / std::abs(want));
    }
    for (std::uint64_t seed = 1; cent_instances < 20; ++seed) {
        const std::size_t nk = 1 + seed % 3;
        std::vector<Matrix> ks, cs;
        for (std::size_t k = 0; k < nk; ++k) {
            ks.push_back(oracle::random_psd(8, 2 + k, seed * 37 + k));
            cs.push_back(center_kernel(ks.back()));
        }
        const auto Ky = target_kernel(random_pm(8, seed + 1000));
        const auto a = detail::inner_with(cs, center_kernel(Ky));
        if (std::none_of(a.begin(), a.end(), [](double v) { return v > 0; })) continue;  // no feasible direction
        const double want = oracle::cent_value(detail::gram_of(cs), a);
        cent_err = std::max(cent_err, std::abs(weights_centered(ks, Ky).objective - want) / std::abs(want));
        ++cent_instances;
    }
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const std::size_t m = 3 + seed % 6;
        // Gaussian Gram on distinct points is positive definite, so the dual optimum is unique
        const auto X = oracle::random_matrix(m, 2, seed + 500);
        const auto K = rbf_matrix(X, X, 1.0).values;
        const auto y = random_pm(m, seed + 500);
        for (double C : {0.5, 10.0}) {
            SvmOptions opt;
            opt.C = C;
            opt.tol = 1e-10;
            const auto got = train_svm(K, y, opt).alpha;
            const auto want = oracle::svm_dual(K, y, C);
            for (std::size_t i = 0; i < m; ++i) svm_err = std::max(svm_err, std::abs(got[i] - want[i]));
        }
    }
    return {qcqp_err < 1e-3 && cent_err < 1e-3 && svm_err < 1e-4,
            "QCQP max rel err " + fmt(qcqp_err) + ", CENT max rel err " + fmt(cent_err) + ", SVM max |dα| " +
                fmt(svm_err)};
}

struct AlignmentCheck {
    bool ok = true;
    std::string detail;
};

AlignmentCheck alignment_on(const fs::path& file, const std::string& schema) {
    const auto ds = load_csv(file, schema_by_name(schema));
    const auto plan = make_split_plan(ds.labels, 0, protocol_seed);
    const auto split = prepare_split(ds, plan, 6);
    const auto Ky = target_kernel(split.y_train);
    AlignmentCheck out;
    for (auto kind : {KernelKind::fidelity, KernelKind::projected}) {
        std::vector<Matrix> ks;
        std::set<std::string> seen;
        for (const auto& spec : default_kernel_set()) {
            if (!seen.insert(spec.canonical()).second) continue;
            if (kind == KernelKind::fidelity) {
                ks.push_back(fidelity_matrix(spec, split.X_train).values);
            } else {
                const auto f = projected_features(spec, split.X_train);
                ks.push_back(projected_matrix(f, f, 1.0).values);
            }
        }
        double best = 0.0;
        for (const auto& k : ks) best = std::max(best, alignment(k, Ky));
        const double sdp = alignment(combine(ks, weights_qcqp(ks, Ky).weights), Ky);
        const double cent = centered_alignment(combine(ks, weights_centered(ks, Ky).weights), Ky);
        const double uniform = centered_alignment(combine(ks, weights_average(ks.size()).weights), Ky);
        out.ok = out.ok && sdp >= best - 1e-9 && cent >= uniform;
        out.detail += " " + to_string(kind) + ": SDP " + fmt(sdp, 6) + " vs best single " + fmt(best, 6) +
                      ", CENT " + fmt(cent, 6) + " vs uniform " + fmt(uniform, 6) + ";";
    }
    return out;
}

Outcome alignment_improvement() {
    Outcome o{true, ""};
    for (const auto& [name, file, schema] :
         {std::tuple{"german", german_file(), "german_numeric"}, std::tuple{"bank", bank_file(), "bank_marketing"}}) {
        if (!fs::exists(file)) {
            o.pass = false;
            o.detail += std::string(" ") + name + ": " + missing_reason(file) + ";";
            continue;
        }
        const auto r = alignment_on(file, schema);
        o.pass = o.pass && r.ok;
        o.detail += std::string(" ") + name + " (dim 6, sample 0):" + r.detail;
    }
    return o;
}

ExperimentConfig diagnose_config(const std::string& name, const fs::path& file, const std::string& schema) {
    json doc{{"version", 1},
             {"dataset", {{"name", name}, {"path", file.string()}, {"schema", schema}}},
             {"preprocessing", {{"seed", protocol_seed}}},
             {"diagnose",
              {{"source", "dataset"},
               {"n_points", 50},
               {"dims", {4, 12}},
               {"kernels", json::array({{{"paulis", "Z-ZZ"}, {"alpha", 2.0}}})}}},
             {"output", {{"directory", (work_dir / name).string()}}}};
    return parse_config(doc, work_dir);
}

std::string concentration_summary(const ExperimentConfig& c, bool* ok) {
    const auto ds = load_csv(c.dataset_path, schema_by_name(c.schema));
    const auto spec = c.diagnose->kernels[0];
    std::map<std::size_t, ConcentrationStats> st;
    for (std::size_t dim : {4u, 12u}) {
        const auto X = diagnose_points(c, &ds, dim);
        st[dim] = concentration_stats(fidelity_matrix(spec, X).values, static_cast<int>(dim));
    }
    *ok = st[12].offdiag_variance < st[4].offdiag_variance && st[12].offdiag_mean < st[4].offdiag_mean;
    return "variance " + fmt(st[4].offdiag_variance) + " -> " + fmt(st[12].offdiag_variance) + ", mean " +
           fmt(st[4].offdiag_mean) + " -> " + fmt(st[12].offdiag_mean) + " (dim 4 -> 12)";
}

Outcome concentration_trend() {
    bool ok = false;
    if (!fs::exists(bank_file())) {
        std::string note;
        if (fs::exists(german_file()))
            note = "; german at the same settings, not a substitute: " +
                   concentration_summary(diagnose_config("german_conc", german_file(), "german_numeric"), &ok);
        return {false, "bank: " + missing_reason(bank_file()) + note};
    }
    const auto s = concentration_summary(diagnose_config("bank_conc", bank_file(), "bank_marketing"), &ok);
    return {ok, "bank, Z-ZZ a=2, 50 points: " + s};
}

std::string robustness_on(const std::string& name, const fs::path& file, const std::string& schema, bool* ok) {
    json doc{{"version", 1},
             {"dataset", {{"name", name}, {"path", file.string()}, {"schema", schema}}},
             {"preprocessing", {{"dims", {4, 8, 12}}, {"seed", protocol_seed}}},
             {"evaluation", {{"n_samples", 5}}},
             {"kernels", {{"quantum", "table"}, {"pq_gamma", 1.0}}},
             {"mkl", {{"strategies", {"AVE", "PROJ"}}, {"models", {"PQ-MKL", "Single(Q)"}}}},
             {"output", {{"directory", (work_dir / name).string()}}}};
    const auto c = parse_config(doc, work_dir);
    cmd_prepare(c);
    const auto summary = cmd_run(c);
    std::map<std::string, std::pair<double, int>> at12;
    for (const auto& r : summary.records) {
        if (r["dim"] != 12) continue;
        for (const auto& m : r["models"]) {
            if (m["status"] != "ok") continue;
            auto& acc = at12[m["key"].get<std::string>()];
            acc.first += m["test_auc"].get<double>();
            acc.second += 1;
        }
    }
    auto mean = [&](const std::string& key) {
        const auto it = at12.find(key);
        return it == at12.end() || it->second.second != 5 ? -1.0 : it->second.first / it->second.second;
    };
    const double pq = std::max(mean("PQ-MKL AVE"), mean("PQ-MKL PROJ"));
    const double single = mean("Single(Q)");
    *ok = pq >= 0.0 && single >= 0.0 && pq - single >= 0.05;
    return "dim 12 mean test AUC: PQ-MKL best of AVE/PROJ " + fmt(pq) + " (AVE " + fmt(mean("PQ-MKL AVE")) +
           ", PROJ " + fmt(mean("PQ-MKL PROJ")) + ") vs Single(Q) " + fmt(single) + ", gap " + fmt(pq - single);
}

Outcome robustness_trend() {
    bool ok = false;
    if (!fs::exists(bank_file())) {
        std::string note;
        if (fs::exists(german_file()))
            note = "; german at the same settings, not a substitute: " +
                   robustness_on("german_robust", german_file(), "german_numeric", &ok);
        return {false, "bank: " + missing_reason(bank_file()) + note};
    }
    const auto s = robustness_on("bank_robust", bank_file(), "bank_marketing", &ok);
    return {ok, "bank, 5 samples: " + s};
}

Outcome shot_sweep_methodology() {
    if (!fs::exists(german_file())) return {false, "german: " + missing_reason(german_file())};
    const auto c = diagnose_config("german_sweep", german_file(), "german_numeric");
    const auto ds = load_csv(c.dataset_path, schema_by_name(c.schema));
    const auto X = diagnose_points(c, &ds, 12);
    const auto spec = c.diagnose->kernels[0];
    const std::vector<std::uint64_t> shots = {8192, 1'000'000};
    const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    const auto fid = shot_sweep(spec, X, KernelKind::fidelity, shots, seeds);
    const auto proj = shot_sweep(spec, X, KernelKind::projected, shots, seeds);
    const bool order = proj[0].mean_fit.r_squared >= fid[0].mean_fit.r_squared;
    const bool slopes = std::abs(fid[1].mean_fit.slope - 1.0) <= 0.02 && std::abs(proj[1].mean_fit.slope - 1.0) <= 0.02;
    return {order && slopes, "german dim 12, 50 points, Z-ZZ a=2: r2 at 8192 shots projected " +
                                 fmt(proj[0].mean_fit.r_squared) + " vs fidelity " + fmt(fid[0].mean_fit.r_squared) +
                                 "; slope at 1e6 projected " + fmt(proj[1].mean_fit.slope, 6) + ", fidelity " +
                                 fmt(fid[1].mean_fit.slope, 6)};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = detail::read_text(e.path());
    return files;
}

Outcome protocol_reproduction() {
    if (!fs::exists(german_file())) return {false, "german: " + missing_reason(german_file())};
    const auto dir = work_dir / "protocol";
    fs::remove_all(dir);
    fs::create_directories(dir);
    json doc{{"version", 1},
             {"dataset", {{"name", "german"}, {"path", german_file().string()}, {"schema", "german_numeric"}}},
             {"preprocessing", {{"dims", {6, 10, 14, 18}}, {"seed", protocol_seed}}},
             {"output", {{"directory", (dir / "out").string()}}}};
    const auto cfg = dir / "german.json";
    std::ofstream(cfg) << doc.dump(2);
    const std::string cmd = std::string(QMKL_CLI) + " prepare -c " + cfg.string() + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "prepare failed"};
    const auto first = snapshot(dir / "out" / "prepared");
    if (std::system(cmd.c_str()) != 0) return {false, "second prepare failed"};
    const bool identical = snapshot(dir / "out" / "prepared") == first;

    std::set<int> samples;
    bool shapes = first.size() == 80;
    for (const auto& [rel, _] : first) {
        const auto s = read_prepared_split(dir / "out" / "prepared" / rel);
        samples.insert(s.sample_id);
        std::vector<std::size_t> fold_sizes(4, 0);
        for (int f : s.folds) ++fold_sizes[static_cast<std::size_t>(f)];
        std::set<std::int64_t> ids(s.train_ids.begin(), s.train_ids.end());
        ids.insert(s.test_ids.begin(), s.test_ids.end());
        shapes = shapes && s.y_test.size() == 132 && s.y_train.size() == 268 && ids.size() == 400 &&
                 fold_sizes == std::vector<std::size_t>(4, 67);
    }
    shapes = shapes && samples.size() == 20;
    return {identical && shapes, std::to_string(first.size()) + " files over " + std::to_string(samples.size()) +
                                     " samples, 400 points as 132 test / 268 train / 4x67 folds: " +
                                     (shapes ? "yes" : "no") + ", byte-identical rerun: " + (identical ? "yes" : "no")};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string data = "data", work = "acceptance_work";
    std::vector<std::string> only;
    app.add_option("--data-dir", data, "directory holding the downloaded datasets");
    app.add_option("--work-dir", work, "scratch directory for pipeline outputs");
    app.add_option("--only", only, "run only the named criteria");
    CLI11_PARSE(app, argc, argv);
    data_dir = fs::absolute(data);
    work_dir = fs::absolute(work);
    fs::create_directories(work_dir);

    const std::vector<Criterion> criteria = {
        {"analytic-kernel-oracle", 1, analytic_oracle},
        {"simulator-brute-force-equivalence", 10, simulator_equivalence},
        {"psd-guarantee", 60, psd_guarantee},
        {"optimizer-oracles", 60, optimizer_oracles},
        {"alignment-improvement", 600, alignment_improvement},
        {"concentration-trend", 900, concentration_trend},
        {"robustness-trend", 7200, robustness_trend},
        {"shot-sweep-methodology", 1800, shot_sweep_methodology},
        {"protocol-reproduction", 60, protocol_reproduction},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget_s;
        if (!in_time) o.detail += "; over the " + fmt(c.budget_s) + " s budget";
        const bool pass = o.pass && in_time;
        failures += pass ? 0 : 1;
        std::cout << (pass ? "PASS " : "FAIL ") << c.name << " [" << fmt(secs, 3) << " s / " << fmt(c.budget_s)
                  << " s] " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
