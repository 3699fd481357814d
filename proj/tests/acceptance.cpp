// Acceptance suite: runs every release criterion end to end and prints one
// pass/fail line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "sedeg/harness.hpp"

using namespace sedeg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

struct Criterion {
    std::string name;
    bool ok = true;
    std::string detail;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    explicit Criterion(std::string n) : name(std::move(n)) {}
    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
    void finish() {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[acceptance] %-38s %s  (%.1fs)%s%s\n", name.c_str(),
                    ok ? "PASS" : "FAIL", secs, detail.empty() ? "" : "  -- ",
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) ++g_failures;
    }
};

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return {};
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

double near(double a, double b) { return std::abs(a - b); }

// shared desk-scale configuration for the behavioral criteria
RunOptions desk_options(uint64_t seed) {
    RunOptions o;
    o.spec.dataset = "synthetic";
    o.spec.image_size = 12;
    o.spec.channels = 3;
    o.spec.separation = 2.5;
    o.spec.noise = 0.5;
    o.model.input_size = 12;
    o.model.channels = 3;
    o.model.num_sab = 2;
    o.model.num_heads = 4;
    o.model.embed_dim = 48;
    o.model.patch_size = 4;
    o.train.learning_rate = 5e-3;
    o.train.batch_size = 32;
    o.train.seed = seed;
    return o;
}

// ---------------------------------------------------------------------------

void criterion_loss_oracles() {
    Criterion c("1 loss oracle suite");
    const double tol = 1e-6;
    c.expect(near(loss_aux(Tensor::from({1, 2}, {0, 0}), {0}).item(), 0.6931471805599453) < tol,
             "BCE hand value");
    c.expect(loss_aux(Tensor::from({1, 2}, {40, -40}), {0}).item() < tol, "BCE saturation");
    c.expect(near(loss_bc(Tensor::from({1, 3}, {0, 0, 0}), {0}, {1, 1, 1}, 1.0).item(),
                  std::log(3.0)) < tol,
             "balanced CE uniform-counts value log 3");
    c.expect(near(loss_bc(Tensor::from({1, 2}, {1, 0}), {0}, {1, 1}, 1.0).item(),
                  0.3132616875182228) < tol,
             "balanced CE oracle value 0.3133");
    c.expect(near(loss_bc(Tensor::from({1, 2}, {0, 0}), {0}, {1, 3}, 1.0).item(),
                  std::log(4.0)) < tol,
             "balanced CE count-shift value log 4");
    c.expect(near(loss_ted({Tensor::from({1, 2}, {1, 0})}, {Tensor::from({1, 2}, {0, 0})}, 2)
                      .item(),
                  0.5) < tol,
             "TED hand value 0.5");
    c.expect(near(loss_kd(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {0.0})).item(),
                  0.6931471805599453) < tol,
             "logits KD hand value");
    c.expect(near(loss_bld(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {0.0}), {1.0}, 1.0)
                      .item(),
                  0.34657359027997264) < tol,
             "balanced KD hand value 0.3466");
    c.expect(near(loss_fd(Tensor::from({1, 2, 2}, {3, 4, 0, 0}), Tensor::zeros({1, 2, 2})).item(),
                  5.0) < tol,
             "feature distillation Frobenius value 5");
    {
        LossConfig cfg;
        cfg.alpha = 0.5;
        Stage1Parts ones{Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1),
                         Tensor::scalar(1), Tensor::scalar(1)};
        c.expect(near(stage1_loss(ones, cfg).item(), 2.2) < tol, "stage-1 composition 2.2");
        Stage2Parts ones2{Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1)};
        c.expect(near(stage2_loss(ones2, cfg).item(), 2.1) < tol, "stage-2 composition 2.1");
    }
    {
        const auto w = per_class_weights({1, 3}, 1.0);
        c.expect(near(w[0], 1.5) < tol && near(w[1], 0.5) < tol, "per-class weights [1.5, 0.5]");
    }
    c.expect(near(loss_div(Tensor::zeros({1, 5}), {2}).item(), std::log(5.0)) < tol,
             "divergence uniform value log 5");
    c.finish();
}

void criterion_gradients() {
    Criterion c("2 gradient suite (7 losses x 20)");
    const auto suite = oracle::run_loss_gradient_suite(20, /*seed=*/2024, 1e-3, 1e-4);
    c.expect(suite.aux.ok, "aux gradients");
    c.expect(suite.bc.ok, "bc gradients");
    c.expect(suite.ted.ok, "ted gradients");
    c.expect(suite.kd.ok, "kd gradients");
    c.expect(suite.div.ok, "div gradients");
    c.expect(suite.bld.ok, "bld gradients");
    c.expect(suite.fd.ok, "fd gradients");
    std::ostringstream os;
    os << "worst deviation " << suite.worst() << "x tolerance over " << suite.aux.checked
       << "+ checks";
    if (c.ok) c.detail = os.str();
    c.finish();
}

// one 3-task desk run shared by criteria 3 and 4
RunRecord desk_run_3task(const std::string& out_dir) {
    RunOptions o = desk_options(5);
    o.spec.num_tasks = 3;
    o.spec.classes_per_task = 3;
    o.spec.train_per_class = 16;
    o.spec.eval_per_class = 8;
    o.spec.memory_capacity = 12;
    o.train.bootstrap_epochs = 8;
    o.train.stage1_epochs = 6;
    o.train.stage2_epochs = 5;
    o.out_dir = out_dir;
    return run_benchmark(o);
}

void criterion_freeze_and_compression(const RunRecord& record) {
    {
        Criterion c("3 freeze audit (3-task run)");
        int checks = 0;
        for (const auto& audit : record.freeze_audits) {
            checks += audit.checks;
            for (const auto& v : audit.violations) c.expect(false, v);
        }
        c.expect(checks > 0, "no freeze checks ran");
        if (c.ok) c.detail = std::to_string(checks) + " parameter-epoch checks, 0 violations";
        c.finish();
    }
    {
        Criterion c("4 encoder compression invariant");
        c.expect(record.encoder_param_counts.size() == 3, "expected 3 task records");
        for (size_t t = 1; t < record.encoder_param_counts.size(); ++t)
            c.expect(record.encoder_param_counts[t] == record.encoder_param_counts[t - 1],
                     "parameter count changed after stage 2 of task " + std::to_string(t + 1));
        if (c.ok)
            c.detail = "encoder holds " + std::to_string(record.encoder_param_counts.front()) +
                       " values across every task";
        c.finish();
    }
}

void criterion_forgetting() {
    Criterion c("5 forgetting benchmark (3 seeds)");
    auto run_method = [&](Method m, uint64_t seed) {
        RunOptions o = desk_options(seed);
        o.spec.num_tasks = 2;
        o.spec.classes_per_task = 10;
        o.spec.train_per_class = 24;
        o.spec.eval_per_class = 10;
        o.spec.memory_capacity = 20;
        o.train.bootstrap_epochs = 30;
        o.train.stage1_epochs = 30;
        o.train.stage2_epochs = 20;
        o.train.finetune_epochs = 10;
        o.method = m;
        return run_benchmark(o);
    };
    double sedeg_task1 = 0, finetune_task1 = 0, sedeg_last = 0, dytox_last = 0;
    const std::vector<uint64_t> seeds = {1, 2, 3};
    for (uint64_t seed : seeds) {
        const RunRecord s = run_method(Method::sedeg, seed);
        const RunRecord f = run_method(Method::finetune_baseline, seed);
        const RunRecord d = run_method(Method::dytox_baseline, seed);
        sedeg_task1 += s.rows.back().per_task_acc.at(0);
        finetune_task1 += f.rows.back().per_task_acc.at(0);
        sedeg_last += s.last_accuracy();
        dytox_last += d.last_accuracy();
    }
    const double n = static_cast<double>(seeds.size());
    sedeg_task1 /= n;
    finetune_task1 /= n;
    sedeg_last /= n;
    dytox_last /= n;

    std::ostringstream os;
    os << "task-1 acc after task 2: sedeg " << sedeg_task1 << " vs finetune " << finetune_task1
       << "; LAST: sedeg " << sedeg_last << " vs dytox " << dytox_last;
    c.detail = os.str();
    c.expect(sedeg_task1 - finetune_task1 >= 10.0,
             "forgetting margin below 10 points");
    c.expect(sedeg_last >= dytox_last - 2.0, "LAST fell more than 2 points behind dytox");
    c.finish();
}

void criterion_ablation_grids(const std::string& out_root) {
    Criterion c("6 ablation grids (stage-1 and stage-2)");
    RunOptions base = desk_options(7);
    base.spec.num_tasks = 2;
    base.spec.classes_per_task = 3;
    base.spec.train_per_class = 12;
    base.spec.eval_per_class = 6;
    base.spec.memory_capacity = 9;
    base.train.bootstrap_epochs = 4;
    base.train.stage1_epochs = 3;
    base.train.stage2_epochs = 3;

    auto cells = table4_cells(base);
    auto more = table5_cells(base);
    cells.insert(cells.end(), more.begin(), more.end());
    const auto results = sweep(cells, out_root);
    c.expect(results.size() == 8, "expected 8 grid cells");

    const std::string summary = slurp(out_root + "/summary.csv");
    c.expect(summary.find("AVG,LAST") != std::string::npos, "summary lacks AVG/LAST columns");
    c.expect(!summary.empty(), "missing summary.csv");

    // every toggle verifiably changes the logged loss composition
    auto trace_column_abs_sum = [&](const std::string& cell, int column) {
        std::istringstream is(slurp(out_root + "/" + cell + "/trace.csv"));
        std::string line;
        std::getline(is, line);
        double total = 0.0;
        while (std::getline(is, line)) {
            std::stringstream row(line);
            std::string field;
            for (int i = 0; i <= column; ++i) std::getline(row, field, ',');
            total += std::abs(std::stod(field));
        }
        return total;
    };
    // trace columns: task,stage,epoch,step,lr,alpha,total,bc,kd,div,aux,ted,bld,fd
    const int kAux = 10, kTed = 11, kFd = 13, kBld = 12;
    c.expect(trace_column_abs_sum("aux1_ted1_bce1", kAux) > 0, "aux term missing when enabled");
    c.expect(trace_column_abs_sum("aux0_ted0_bce1", kAux) == 0.0, "aux term present when off");
    c.expect(trace_column_abs_sum("aux1_ted1_bce1", kTed) > 0, "ted term missing when enabled");
    c.expect(trace_column_abs_sum("aux1_ted0_bce1", kTed) == 0.0, "ted term present when off");
    c.expect(trace_column_abs_sum("fd1_bld1_deo1", kFd) > 0, "fd term missing when enabled");
    c.expect(trace_column_abs_sum("fd0_bld0_deo0", kFd) == 0.0, "fd term present when off");
    // balanced vs plain classification and balanced vs uniform KD change the values
    c.expect(trace_column_abs_sum("aux1_ted1_bce1", 7) != trace_column_abs_sum("aux1_ted1_bce0", 7),
             "balanced CE toggle has no effect");
    c.expect(trace_column_abs_sum("fd1_bld1_deo1", kBld) != trace_column_abs_sum("fd1_bld0_deo0", kBld),
             "balanced KD toggle has no effect");
    c.finish();
}

void criterion_determinism(const std::string& out_root) {
    Criterion c("7 determinism (byte-identical reruns)");
    RunOptions o = desk_options(11);
    o.spec.num_tasks = 2;
    o.spec.classes_per_task = 3;
    o.spec.train_per_class = 12;
    o.spec.eval_per_class = 6;
    o.spec.memory_capacity = 9;
    o.train.bootstrap_epochs = 4;
    o.train.stage1_epochs = 3;
    o.train.stage2_epochs = 3;
    o.out_dir = out_root + "/a";
    run_benchmark(o);
    o.out_dir = out_root + "/b";
    run_benchmark(o);
    const std::string m1 = slurp(out_root + "/a/metrics.csv");
    c.expect(!m1.empty(), "missing metrics.csv");
    c.expect(m1 == slurp(out_root + "/b/metrics.csv"), "metrics.csv differs between reruns");
    c.expect(slurp(out_root + "/a/trace.csv") == slurp(out_root + "/b/trace.csv"),
             "trace.csv differs between reruns");
    c.finish();
}

void criterion_metric_identity() {
    Criterion c("8 metric identity (digitized curve)");
    const std::vector<double> base_stage = {96.6, 84.8, 73.5, 65.8, 57.5, 56.7, 48.5,
                                            41.8, 47.4, 35.0, 36.0, 33.5, 32.4, 32.2,
                                            25.8, 24.3, 22.6, 20.9, 19.1, 18.8};
    const std::vector<double> expected = oracle::running_means(base_stage);
    for (size_t k = 0; k < base_stage.size(); ++k) {
        const std::vector<double> prefix(base_stage.begin(), base_stage.begin() + static_cast<long>(k + 1));
        c.expect(near(avg_accuracy(prefix), expected[k]) < 1e-9,
                 "running mean mismatch at phase " + std::to_string(k));
    }
    if (c.ok) c.detail = "20 running means agree to 1e-9";
    c.finish();
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string root =
        (fs::temp_directory_path() / "sedeg_acceptance").string();
    fs::remove_all(root);
    fs::create_directories(root);

    criterion_loss_oracles();
    criterion_gradients();
    const RunRecord desk = desk_run_3task(root + "/desk3");
    criterion_freeze_and_compression(desk);
    criterion_forgetting();
    criterion_ablation_grids(root + "/ablation");
    criterion_determinism(root + "/determinism");
    criterion_metric_identity();

    const double total =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[acceptance] %d criterion(s) failed, total %.1fs\n", g_failures, total);
    return g_failures == 0 ? 0 : 1;
}
