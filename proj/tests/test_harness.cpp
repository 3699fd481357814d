#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "sedeg/errors.hpp"
#include "sedeg/harness.hpp"

using namespace sedeg;
namespace fs = std::filesystem;

namespace {

BenchmarkSpec tiny_spec() {
    BenchmarkSpec spec;
    spec.dataset = "synthetic";
    spec.num_tasks = 2;
    spec.classes_per_task = 2;
    spec.memory_capacity = 8;
    spec.train_per_class = 8;
    spec.eval_per_class = 4;
    spec.image_size = 8;
    spec.channels = 1;
    spec.separation = 2.5;
    spec.noise = 0.3;
    return spec;
}

RunOptions tiny_options(uint64_t seed = 3) {
    RunOptions o;
    o.spec = tiny_spec();
    o.model.num_sab = 1;
    o.model.num_heads = 2;
    o.model.embed_dim = 16;
    o.model.input_size = 8;
    o.model.patch_size = 4;
    o.model.channels = 1;
    o.train.bootstrap_epochs = 3;
    o.train.stage1_epochs = 2;
    o.train.stage2_epochs = 2;
    o.train.finetune_epochs = 2;
    o.train.batch_size = 8;
    o.train.learning_rate = 5e-3;
    o.train.seed = seed;
    return o;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("build_stream partitions classes disjointly under a seeded order") {
    BenchmarkSpec spec = tiny_spec();
    spec.num_tasks = 5;
    spec.classes_per_task = 4;  // 20 classes
    spec.train_per_class = 2;
    spec.eval_per_class = 1;
    const TaskStream stream = build_stream(spec);
    CHECK(stream.tasks.size() == 5);
    CHECK(stream.total_classes == 20);

    std::set<int> seen;
    for (const TaskData& task : stream.tasks) {
        CHECK(task.num_classes == 4);
        std::set<int> classes(task.train.labels.begin(), task.train.labels.end());
        CHECK(classes.size() == 4);
        for (int c : classes) {
            CHECK(c >= task.first_class);
            CHECK(c < task.first_class + 4);
            CHECK(seen.insert(c).second);  // disjoint across tasks
        }
    }
    CHECK(seen.size() == 20);  // union covers every class

    // a different order seed moves classes between tasks but keeps sizes
    BenchmarkSpec spec2 = spec;
    spec2.class_order_seed = 1;
    const TaskStream stream2 = build_stream(spec2);
    CHECK(stream2.class_order != stream.class_order);
    for (size_t t = 0; t < 5; ++t)
        CHECK(stream2.tasks[t].train.size() == stream.tasks[t].train.size());

    BenchmarkSpec bad = tiny_spec();
    bad.dataset = "small-image-10";
    bad.num_tasks = 3;  // 3 x 2 != 10
    CHECK_THROWS_AS(build_stream(bad), ConfigError);
}

TEST_CASE("evaluate: perfect and constant classifiers") {
    // hand-built stream where image[0] encodes the label
    TaskStream stream;
    stream.total_classes = 4;
    stream.image_size = 2;
    stream.channels = 1;
    for (int t = 0; t < 2; ++t) {
        TaskData task;
        task.first_class = t * 2;
        task.num_classes = 2;
        task.train.image_size = task.eval.image_size = 2;
        task.train.channels = task.eval.channels = 1;
        for (int c = task.first_class; c < task.first_class + 2; ++c)
            for (int i = 0; i < 3; ++i)
                task.eval.add({static_cast<float>(c), 0, 0, 0}, c, t * 100 + c * 10 + i);
        stream.tasks.push_back(std::move(task));
    }

    // reads the label back out of the image
    auto perfect = [](const Tensor& images) {
        const int b = images.dim(0);
        Tensor out = Tensor::zeros({b, 4});
        for (int i = 0; i < b; ++i) {
            const int label = static_cast<int>(images.values()[static_cast<size_t>(i) * 4]);
            out.values()[static_cast<size_t>(i * 4 + label)] = 1.0;
        }
        return out;
    };
    const EvalResult full = evaluate(perfect, stream, 2, 4);
    CHECK(full.all_seen_acc == doctest::Approx(100.0));
    for (double acc : full.per_task_acc) CHECK(acc == doctest::Approx(100.0));

    // constant logits always pick class 0: accuracy = share of class 0
    auto constant = [](const Tensor& images) { return Tensor::zeros({images.dim(0), 4}); };
    const EvalResult chance = evaluate(constant, stream, 2, 4);
    CHECK(chance.all_seen_acc == doctest::Approx(100.0 / 4));

    // pooled accuracy equals the sample-weighted mean of per-task accuracies
    const EvalResult partial = evaluate(perfect, stream, 1, 4);
    CHECK(partial.per_task_acc.size() == 1);
    double weighted = 0.0;
    for (double acc : full.per_task_acc) weighted += acc * 6.0;
    CHECK(full.all_seen_acc == doctest::Approx(weighted / 12.0));

    CHECK_THROWS_AS(evaluate(perfect, stream, 3, 4), ConfigError);
}

TEST_CASE("avg_accuracy is the running mean of phase accuracies") {
    CHECK(avg_accuracy({100.0, 50.0}) == doctest::Approx(75.0));
    CHECK(avg_accuracy({96.6}) == doctest::Approx(96.6));
    // appending the current mean leaves the mean unchanged
    std::vector<double> xs = {80, 60, 70};
    const double mean = avg_accuracy(xs);
    xs.push_back(mean);
    CHECK(avg_accuracy(xs) == doctest::Approx(mean));
    CHECK_THROWS_AS(avg_accuracy({}), ConfigError);
}

TEST_CASE("run_benchmark emits deterministic files with coherent metrics") {
    TempDir dir("sedeg_harness_run");
    RunOptions o = tiny_options();
    o.out_dir = (dir.path / "a").string();
    const RunRecord record = run_benchmark(o);

    // sedeg over T tasks: 1 bootstrap + 2 rows per later task
    CHECK(record.rows.size() == 2 * (2 - 1) + 1);
    CHECK(record.rows[0].stage == "bootstrap");
    CHECK(record.rows[1].stage == "stage1");
    CHECK(record.rows[2].stage == "stage2");
    CHECK(record.rows[2].seen_classes == 4);
    CHECK(record.eval_isolation_ok);
    for (const auto& audit : record.freeze_audits) CHECK(audit.violations.empty());
    for (int64_t count : record.encoder_param_counts)
        CHECK(count == record.encoder_param_counts.front());

    // byte-identical repeat
    RunOptions o2 = tiny_options();
    o2.out_dir = (dir.path / "b").string();
    run_benchmark(o2);
    CHECK(slurp(o.out_dir + "/metrics.csv") == slurp(o2.out_dir + "/metrics.csv"));
    CHECK(slurp(o.out_dir + "/trace.csv") == slurp(o2.out_dir + "/trace.csv"));
    CHECK(slurp(o.out_dir + "/config.json") == slurp(o2.out_dir + "/config.json"));

    // a different seed changes the trace
    RunOptions o3 = tiny_options(99);
    o3.out_dir = (dir.path / "c").string();
    run_benchmark(o3);
    CHECK(slurp(o.out_dir + "/trace.csv") != slurp(o3.out_dir + "/trace.csv"));

    // metric algebra: AVG recomputed from the emitted file matches
    const std::string csv = slurp(o.out_dir + "/metrics.csv");
    std::vector<double> phase_acc;
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        std::vector<std::string> fields;
        std::string cur;
        bool quoted = false;
        for (char ch : line) {
            if (ch == '"') quoted = !quoted;
            else if (ch == ',' && !quoted) {
                fields.push_back(cur);
                cur.clear();
            } else cur.push_back(ch);
        }
        fields.push_back(cur);
        rows.push_back(fields);
    }
    for (size_t i = 0; i < rows.size(); ++i) {
        const bool last_of_task = i + 1 == rows.size() || rows[i + 1][0] != rows[i][0];
        if (last_of_task) phase_acc.push_back(std::stod(rows[i][3]));
    }
    CHECK(std::abs(avg_accuracy(phase_acc) - record.avg_accuracy()) < 1e-9);
    CHECK(record.last_accuracy() == doctest::Approx(record.rows.back().all_seen_acc));
}

TEST_CASE("run_benchmark writes checkpoints when asked") {
    TempDir dir("sedeg_harness_ckpt");
    RunOptions o = tiny_options();
    o.out_dir = (dir.path / "run").string();
    o.save_checkpoints = true;
    run_benchmark(o);
    CHECK(fs::exists(o.out_dir + "/task1_bootstrap.ckpt"));
    CHECK(fs::exists(o.out_dir + "/task2_stage1.ckpt"));
    CHECK(fs::exists(o.out_dir + "/task2_stage2.ckpt"));
    CHECK(fs::exists(o.out_dir + "/memory_task2.ckpt"));
}

TEST_CASE("model/dataset geometry mismatch is a configuration error") {
    RunOptions o = tiny_options();
    o.model.input_size = 16;  // dataset renders 8x8
    CHECK_THROWS_AS(run_benchmark(o), ConfigError);
}

TEST_CASE("apply_option mirrors the CLI surface") {
    RunOptions o = tiny_options();
    apply_option(o, "num-tasks", "7");
    CHECK(o.spec.num_tasks == 7);
    apply_option(o, "memory", "123");
    CHECK(o.spec.memory_capacity == 123);
    apply_option(o, "method", "dytox");
    CHECK(o.method == Method::dytox_baseline);
    apply_option(o, "no-ted", "true");
    CHECK_FALSE(o.train.ablation.embeddings_kd);
    apply_option(o, "no-ted", "false");
    CHECK(o.train.ablation.embeddings_kd);
    apply_option(o, "lr", "0.01");
    CHECK(o.train.learning_rate == doctest::Approx(0.01));
    apply_option(o, "image-size", "12");
    CHECK(o.spec.image_size == 12);
    CHECK(o.model.input_size == 12);
    CHECK_THROWS_AS(apply_option(o, "bogus", "1"), ConfigError);
    CHECK_THROWS_AS(apply_option(o, "num-tasks", "abc"), ConfigError);
    CHECK_THROWS_AS(apply_option(o, "no-ted", "maybe"), ConfigError);
}

TEST_CASE("grid parsing: cross products and ablation presets") {
    TempDir dir("sedeg_harness_grid");
    const std::string grid_path = (dir.path / "grid.txt").string();
    {
        std::ofstream f(grid_path);
        f << "# comment line\n";
        f << "memory=4,8\n";
        f << "seed=1,2,3\n";
    }
    const auto cells = parse_grid(tiny_options(), grid_path);
    CHECK(cells.size() == 6);
    std::set<std::string> names;
    for (const auto& [name, options] : cells) names.insert(name);
    CHECK(names.size() == 6);

    const auto t4 = table4_cells(tiny_options());
    REQUIRE(t4.size() == 4);
    CHECK(t4[0].second.train.ablation.aux_loss);
    CHECK(t4[0].second.train.ablation.embeddings_kd);
    CHECK(t4[0].second.train.ablation.balanced_classification);
    CHECK_FALSE(t4[1].second.train.ablation.balanced_classification);
    CHECK_FALSE(t4[2].second.train.ablation.embeddings_kd);
    CHECK_FALSE(t4[3].second.train.ablation.aux_loss);

    const auto t5 = table5_cells(tiny_options());
    REQUIRE(t5.size() == 4);
    CHECK(t5[0].second.train.ablation.feature_kd);
    CHECK_FALSE(t5[1].second.train.ablation.distill_encoder_only);
    CHECK_FALSE(t5[2].second.train.ablation.balanced_kd);
    CHECK_FALSE(t5[3].second.train.ablation.feature_kd);

    {
        std::ofstream f(grid_path);
        f << "preset=table4\nseed=1,2\n";
    }
    CHECK(parse_grid(tiny_options(), grid_path).size() == 8);

    {
        std::ofstream f(grid_path);
        f << "this is not a grid\n";
    }
    CHECK_THROWS_AS(parse_grid(tiny_options(), grid_path), ConfigError);
}

TEST_CASE("sweep writes one record per cell plus a summary") {
    TempDir dir("sedeg_harness_sweep");
    RunOptions base = tiny_options();
    base.train.bootstrap_epochs = 2;
    base.train.stage1_epochs = 1;
    base.train.stage2_epochs = 1;
    std::vector<std::pair<std::string, RunOptions>> cells;
    for (int memory : {4, 8}) {
        RunOptions o = base;
        o.spec.memory_capacity = memory;
        cells.emplace_back("mem" + std::to_string(memory), o);
    }
    const auto results = sweep(cells, (dir.path / "out").string());
    CHECK(results.size() == 2);
    const std::string summary = slurp((dir.path / "out" / "summary.csv").string());
    CHECK(summary.find("AVG,LAST") != std::string::npos);
    CHECK(summary.find("mem4") != std::string::npos);
    CHECK(summary.find("mem8") != std::string::npos);
    CHECK(fs::exists(dir.path / "out" / "mem4" / "metrics.csv"));
    CHECK(fs::exists(dir.path / "out" / "mem8" / "metrics.csv"));
}

TEST_CASE("report groups runs across seeds") {
    TempDir dir("sedeg_harness_report");
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        RunOptions o = tiny_options(seed);
        o.train.bootstrap_epochs = 2;
        o.train.stage1_epochs = 1;
        o.train.stage2_epochs = 1;
        o.spec.class_order_seed = seed;  // three class orders of one configuration
        o.out_dir = (dir.path / ("run" + std::to_string(seed))).string();
        run_benchmark(o);
    }
    const auto groups = report(dir.path.string(), (dir.path / "agg").string());
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].runs == 3);
    CHECK(groups[0].avg_std >= 0.0);
    CHECK(fs::exists(dir.path / "agg" / "summary.csv"));
    CHECK(fs::exists(dir.path / "agg" / "plot.csv"));

    CHECK_THROWS_AS(report((dir.path / "empty").string()), std::exception);
}

TEST_CASE("format_double round-trips exactly") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(6)));
        CHECK(std::stod(format_double(v)) == v);
    }
}
