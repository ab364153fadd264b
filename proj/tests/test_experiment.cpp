#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "qmkl/experiment.hpp"

using namespace qmkl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "qmkl_experiment_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// German-numeric-shaped file: 24 integer columns, label 1 or 2, with the
/// label weakly visible in the first few columns.
void write_toy_dataset(const fs::path& path, std::size_t rows, std::uint64_t seed) {
    Xoshiro256 rng(seed);
    std::ofstream out(path);
    for (std::size_t i = 0; i < rows; ++i) {
        const int label = i % 3 == 0 ? 2 : 1;
        for (int j = 0; j < 24; ++j) {
            int v = static_cast<int>(rng.bounded(10));
            if (j < 4 && label == 2) v += 3;
            out << "   " << v;
        }
        out << "   " << label << "\n";
    }
}

json toy_config(const fs::path& data, const fs::path& out) {
    return json{
        {"version", 1},
        {"dataset", {{"name", "toy"}, {"path", data.string()}, {"schema", "german_numeric"}}},
        {"preprocessing", {{"dims", {2, 3}}, {"seed", 5}}},
        {"evaluation", {{"n_samples", 2}, {"n_points", 60}}},
        {"kernels",
         {{"quantum", json::array({{{"paulis", "Z"}, {"alpha", 0.4}}, {{"paulis", "Z-ZZ"}, {"alpha", 1.0}}})},
          {"rbf_gamma_scales", {0.3, 1.0}}}},
        {"svm", {{"C_grid", {0.1, 1.0, 10.0}}}},
        {"output", {{"directory", out.string()}}},
    };
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "timings.json")
            files[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return files;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(QMKL_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error(const json& doc, const fs::path& base) {
    try {
        parse_config(doc, base, false);
    } catch (const configuration_error& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Config, ReportsFieldPaths) {
    const auto dir = scratch("paths");
    auto doc = toy_config(dir / "toy.dat", dir / "out");
    doc["preprocessing"]["dims"] = {4, 30};
    EXPECT_NE(config_error(doc, dir).find("preprocessing.dims[1]"), std::string::npos);

    doc = toy_config(dir / "toy.dat", dir / "out");
    doc["mkl"]["strategies"] = {"AVE", "BEST"};
    EXPECT_NE(config_error(doc, dir).find("mkl.strategies[1]"), std::string::npos);

    doc = toy_config(dir / "toy.dat", dir / "out");
    doc["kernels"]["quantum"][1]["paulis"] = "Z-QQ";
    EXPECT_NE(config_error(doc, dir).find("kernels.quantum[1]"), std::string::npos);

    doc = toy_config(dir / "toy.dat", dir / "out");
    doc["svm"]["C_grid"] = {1.0, -2.0};
    EXPECT_NE(config_error(doc, dir).find("svm.C_grid[1]"), std::string::npos);

    doc = toy_config(dir / "toy.dat", dir / "out");
    doc.erase("output");
    EXPECT_NE(config_error(doc, dir).find("output"), std::string::npos);

    doc = toy_config(dir / "toy.dat", dir / "out");
    doc["version"] = 2;
    EXPECT_NE(config_error(doc, dir).find("version"), std::string::npos);

    doc = toy_config(dir / "toy.dat", dir / "out");
    doc["diagnose"] = {{"kernels", json::array()}};
    EXPECT_NE(config_error(doc, dir).find("diagnose.kernels"), std::string::npos);

    doc = toy_config(dir / "toy.dat", dir / "out");
    doc["mkl"]["models"] = {"FQ-MKL", "Quantum"};
    EXPECT_NE(config_error(doc, dir).find("mkl.models[1]"), std::string::npos);
}

TEST(Config, MissingDatasetNamesPath) {
    const auto dir = scratch("missing");
    const auto doc = toy_config(dir / "nowhere.dat", dir / "out");
    try {
        parse_config(doc, dir, true);
        FAIL() << "expected configuration_error";
    } catch (const configuration_error& e) {
        EXPECT_NE(std::string(e.what()).find("nowhere.dat"), std::string::npos);
    }
    std::ofstream(dir / "cfg.json") << doc.dump();
    EXPECT_EQ(run_cli("prepare -c " + (dir / "cfg.json").string()), 2);
}

TEST(Config, BadJsonAndUsage) {
    const auto dir = scratch("badjson");
    std::ofstream(dir / "cfg.json") << "{ not json";
    EXPECT_THROW(load_config(dir / "cfg.json"), configuration_error);
    EXPECT_EQ(run_cli("prepare -c " + (dir / "cfg.json").string()), 2);
    EXPECT_NE(run_cli("frobnicate"), 0);
}

TEST(Config, HashTracksEffectiveValues) {
    const auto dir = scratch("hash");
    write_toy_dataset(dir / "toy.dat", 100, 1);
    auto doc = toy_config(dir / "toy.dat", dir / "out");
    const auto a = parse_config(doc, dir);
    doc["svm"]["C_grid"] = {0.1, 1.0, 10.0};  // same values
    EXPECT_EQ(config_hash(parse_config(doc, dir)), config_hash(a));
    doc["svm"]["C_grid"] = {0.1, 1.0};
    EXPECT_NE(config_hash(parse_config(doc, dir)), config_hash(a));
    auto b = a;
    override_seed(b, 99);
    EXPECT_NE(config_hash(b), config_hash(a));
}

TEST(KernelEntries, ModelsPullOnlyWhatTheyUse) {
    const auto dir = scratch("entries");
    write_toy_dataset(dir / "toy.dat", 100, 1);
    auto doc = toy_config(dir / "toy.dat", dir / "out");
    doc["mkl"]["models"] = {"Single(C)"};
    auto entries = kernel_entries(parse_config(doc, dir));
    ASSERT_EQ(entries.size(), 1u);
    EXPECT_EQ(entries[0].kind, KernelKind::rbf);
    doc["mkl"]["models"] = {"PQ-MKL"};
    doc["kernels"]["pq_gamma_grid"] = {0.5, 2.0};
    entries = kernel_entries(parse_config(doc, dir));
    EXPECT_EQ(entries.size(), 4u);
    for (const auto& e : entries) EXPECT_EQ(e.kind, KernelKind::projected);
}

TEST(KernelEntries, DefaultSetCountsEveryMapAlphaPair) {
    const auto dir = scratch("default_set");
    write_toy_dataset(dir / "toy.dat", 100, 1);
    auto doc = toy_config(dir / "toy.dat", dir / "out");
    doc["kernels"].erase("quantum");
    doc["mkl"]["models"] = {"FQ-MKL"};
    const auto c = parse_config(doc, dir);
    EXPECT_EQ(c.quantum.size(), default_kernel_set().size());
    // the repeated (Y-YX, 1.6) row of the table collapses into one kernel
    EXPECT_EQ(kernel_entries(c).size(), default_kernel_set().size() - 1);
}

TEST(UsableFolds, ResamplesOnceThenFails) {
    std::vector<int> labels(40, -1);
    for (int i = 0; i < 10; ++i) labels[i] = 1;  // all positives sit in fold 0
    std::vector<int> folds(40);
    for (int i = 0; i < 40; ++i) folds[i] = i / 10;
    const auto fixed = usable_folds(labels, folds, 4, 3);
    EXPECT_NE(fixed, folds);
    EXPECT_TRUE(detail::folds_two_class(labels, fixed, 4));
    std::vector<int> lonely(40, -1);
    lonely[0] = 1;
    EXPECT_THROW(usable_folds(lonely, folds, 4, 3), degenerate_input_error);
}

TEST(FitModel, AverageOverOneKernelEqualsSingle) {
    const std::size_t m = 40;
    Xoshiro256 rng(4);
    Matrix X(m, 2);
    std::vector<int> y(m), folds(m);
    for (std::size_t i = 0; i < m; ++i) {
        y[i] = i % 2 ? 1 : -1;
        folds[i] = static_cast<int>((i / 2) % 4);
        X(i, 0) = rng.uniform() + (y[i] == 1 ? 0.5 : 0.0);
        X(i, 1) = rng.uniform();
    }
    TrainView view;
    view.kernels = {rbf_matrix(X, X, 1.0).values};
    view.labels = y;
    view.folds = folds;
    FitOptions fo;
    for (auto s : {Strategy::AVE, Strategy::SDP, Strategy::PROJ}) {
        const auto a = fit_model(view, {{"k", {0}}}, s, fo);
        const auto b = fit_model(view, {{"k", {0}}}, Strategy::AVE, fo);
        EXPECT_EQ(a.C, b.C);
        EXPECT_EQ(a.cv_auc, b.cv_auc);
        EXPECT_EQ(a.weights.weights, std::vector<double>{1.0});
        EXPECT_EQ(a.svm.alpha, b.svm.alpha);
    }
}

class Pipeline : public ::testing::Test {
protected:
    void SetUp() override {
        dir = scratch("pipeline");
        write_toy_dataset(dir / "toy.dat", 150, 2);
        cfg = dir / "cfg.json";
        std::ofstream(cfg) << toy_config(dir / "toy.dat", dir / "out").dump(2);
    }
    fs::path dir, cfg;
};

TEST_F(Pipeline, EndToEndIsDeterministicAndResumable) {
    const std::string c = " -c " + cfg.string();
    ASSERT_EQ(run_cli("prepare" + c), 0);
    const auto prepared = snapshot(dir / "out" / "prepared");
    EXPECT_EQ(prepared.size(), 4u);
    ASSERT_EQ(run_cli("prepare" + c), 0);
    EXPECT_EQ(snapshot(dir / "out" / "prepared"), prepared);

    ASSERT_EQ(run_cli("kernels" + c), 0);
    const auto kernels = snapshot(dir / "out" / "kernels");
    ASSERT_EQ(run_cli("run" + c + " -w 2"), 0);
    const auto results = snapshot(dir / "out" / "results");
    EXPECT_EQ(snapshot(dir / "out" / "kernels"), kernels);

    // a second run reuses everything; a forced run recomputes the same bytes
    const auto config = load_config(cfg);
    EXPECT_EQ(cmd_kernels(config), 0u);
    ASSERT_EQ(run_cli("run" + c), 0);
    EXPECT_EQ(snapshot(dir / "out" / "results"), results);
    ASSERT_EQ(run_cli("kernels" + c + " --force"), 0);
    ASSERT_EQ(run_cli("run" + c + " --force"), 0);
    EXPECT_EQ(snapshot(dir / "out" / "kernels"), kernels);
    EXPECT_EQ(snapshot(dir / "out" / "results"), results);

    const auto all = json::parse(slurp(dir / "out" / "results" / "results.json"));
    EXPECT_EQ(all["config_hash"], config_hash(config));
    ASSERT_EQ(all["records"].size(), 4u);
    for (const auto& r : all["records"]) {
        EXPECT_EQ(r["n_train"], 41);
        EXPECT_EQ(r["n_test"], 19);
        EXPECT_EQ(r["models"].size(), 4u * 4u + 4u);
        for (const auto& m : r["models"]) {
            ASSERT_EQ(m["status"], "ok") << m.dump();
            EXPECT_GE(m["test_auc"].get<double>(), 0.0);
            EXPECT_LE(m["test_auc"].get<double>(), 1.0);
            const auto w = m["weights"]["normalized"].get<std::vector<double>>();
            EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-10);
        }
    }

    // best counts: per dimension, every sample credits at least one model
    std::istringstream bc(slurp(dir / "out" / "results" / "best_counts.csv"));
    std::string line;
    std::getline(bc, line);
    EXPECT_EQ(line, "n_qubits,model,best_count");
    std::map<int, int> per_dim;
    while (std::getline(bc, line)) {
        const auto f = split_view(line, ',');
        per_dim[static_cast<int>(parse_int(f[0]))] += static_cast<int>(parse_int(f[2]));
    }
    for (int d : {2, 3}) EXPECT_GE(per_dim[d], 2);

    std::istringstream tidy(slurp(dir / "out" / "results" / "tidy.csv"));
    std::getline(tidy, line);
    EXPECT_EQ(line, tidy_header);
}

TEST_F(Pipeline, StaleKernelsAreRejected) {
    const std::string c = " -c " + cfg.string();
    ASSERT_EQ(run_cli("prepare" + c), 0);
    ASSERT_EQ(run_cli("kernels" + c), 0);
    // new data behind the same config: prepared splits change, kernels do not
    write_toy_dataset(dir / "toy.dat", 150, 3);
    ASSERT_EQ(run_cli("prepare" + c), 0);
    EXPECT_THROW(cmd_kernels(load_config(cfg)), stale_artifact_error);
    EXPECT_EQ(run_cli("kernels" + c), 4);
    EXPECT_EQ(run_cli("kernels" + c + " --force"), 0);
    EXPECT_EQ(cmd_kernels(load_config(cfg)), 0u);
}

TEST_F(Pipeline, ShotModeIsSeeded) {
    auto doc = toy_config(dir / "toy.dat", dir / "out");
    doc["mode"] = {{"shots", 256}};
    doc["preprocessing"]["dims"] = {3};
    doc["evaluation"]["n_samples"] = 1;
    doc["mkl"]["models"] = {"FQ-MKL", "PQ-MKL"};
    doc["mkl"]["strategies"] = {"AVE", "CENT"};
    std::ofstream(cfg) << doc.dump();
    const std::string c = " -c " + cfg.string();
    ASSERT_EQ(run_cli("prepare" + c), 0);
    ASSERT_EQ(run_cli("kernels" + c), 0);
    const auto first = snapshot(dir / "out" / "kernels");
    ASSERT_EQ(run_cli("kernels" + c + " --force"), 0);
    EXPECT_EQ(snapshot(dir / "out" / "kernels"), first);
    ASSERT_EQ(run_cli("run" + c), 0);
    const auto all = json::parse(slurp(dir / "out" / "results" / "results.json"));
    for (const auto& m : all["records"][0]["models"]) EXPECT_EQ(m["status"], "ok") << m.dump();
}

TEST_F(Pipeline, DiagnoseWritesConcentrationRows) {
    auto doc = toy_config(dir / "toy.dat", dir / "out");
    doc["diagnose"] = {{"source", "uniform"},
                       {"n_points", 12},
                       {"dims", {2, 4}},
                       {"kernels", json::array({{{"paulis", "Z-ZZ"}, {"alpha", 2.0}}})},
                       {"sweep", {{"dims", {3}}, {"shots", {10, 1000}}, {"seeds", {0, 1}}}}};
    std::ofstream(cfg) << doc.dump();
    ASSERT_EQ(run_cli("diagnose -c " + cfg.string()), 0);
    const auto once = snapshot(dir / "out" / "diagnose");
    std::istringstream conc(once.at("concentration.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(conc, line)) ++rows;
    EXPECT_EQ(rows, 1u + 2u * 2u * 4u);  // header + dims × kinds × metrics
    ASSERT_EQ(run_cli("diagnose -c " + cfg.string()), 0);
    EXPECT_EQ(snapshot(dir / "out" / "diagnose"), once);
}
