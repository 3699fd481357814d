#pragma once

#include <map>
#include <string>
#include <vector>

#include "sedeg/trainer.hpp"

namespace sedeg {

struct BenchmarkSpec {
    std::string dataset = "synthetic";  // synthetic | small-image-10 | small-image-100
    int num_tasks = 5;
    int classes_per_task = 2;
    uint64_t class_order_seed = 0;
    int memory_capacity = 200;
    // synthetic generation knobs
    int train_per_class = 64;
    int eval_per_class = 16;
    int image_size = 32;
    int channels = 3;
    double separation = 1.0;
    double noise = 0.5;
    uint64_t data_seed = 0;
    // small-image ingestion
    std::string data_dir = ".";

    void validate() const;
    int total_classes() const { return num_tasks * classes_per_task; }
};

struct TaskData {
    Dataset train;
    Dataset eval;
    int first_class = 0;
    int num_classes = 0;
};

// Disjoint per-task class splits under a seeded class order; labels are
// remapped to class-introduction order. Eval sets never touch training.
struct TaskStream {
    std::vector<TaskData> tasks;
    int total_classes = 0;
    std::vector<int> class_order;  // class_order[g] = original label of global class g
    int image_size = 0;
    int channels = 0;
};

TaskStream build_stream(const BenchmarkSpec& spec);

struct EvalResult {
    std::vector<double> per_task_acc;  // percent, tasks 1..upto
    double all_seen_acc = 0.0;         // percent, pooled over all eval sets
};

EvalResult evaluate(const Trainer::LogitsFn& logits, const TaskStream& stream, int upto_task,
                    int batch_size);

// Mean of the per-phase all-seen accuracies (Rebuffi convention).
double avg_accuracy(const std::vector<double>& per_phase_acc);

struct StageRow {
    int task_index = 0;
    std::string stage;
    int seen_classes = 0;
    double all_seen_acc = 0.0;
    double avg_acc = 0.0;  // running mean over this stage kind (task 1 seeds every kind)
    std::vector<double> per_task_acc;
};

struct RunRecord {
    std::vector<StageRow> rows;
    std::vector<StepTrace> traces;
    std::vector<FreezeAudit> freeze_audits;
    std::vector<int64_t> encoder_param_counts;
    bool eval_isolation_ok = true;

    // all-seen accuracy at the end of each phase (last stage of each task)
    std::vector<double> end_of_phase_accuracies() const;
    double last_accuracy() const;
    double avg_accuracy() const;
};

struct RunOptions {
    BenchmarkSpec spec;
    ModelConfig model;
    TrainConfig train;
    Method method = Method::sedeg;
    std::string out_dir;  // empty: keep everything in memory
    bool save_checkpoints = false;
};

// Full protocol over the stream; emits metrics.csv / trace.csv / config.json
// (and per-stage checkpoints when asked) under out_dir.
RunRecord run_benchmark(const RunOptions& options);

// key=value application shared by the grid parser and config handling; keys
// mirror the CLI flag names (e.g. "num-tasks", "no-ted", "method").
void apply_option(RunOptions& options, const std::string& key, const std::string& value);

// Grid file: one `key=v1,v2,...` per line, '#' comments; cells are the cross
// product. `preset=table4` / `preset=table5` expands to the ablation rows.
std::vector<std::pair<std::string, RunOptions>> parse_grid(const RunOptions& base,
                                                           const std::string& grid_path);
std::vector<std::pair<std::string, RunOptions>> table4_cells(const RunOptions& base);
std::vector<std::pair<std::string, RunOptions>> table5_cells(const RunOptions& base);

struct SweepCell {
    std::string name;
    RunOptions options;
    double avg = 0.0;
    double last = 0.0;
};

// Runs every cell under out_dir/<name>/ and writes out_dir/summary.csv with
// AVG and LAST columns.
std::vector<SweepCell> sweep(const std::vector<std::pair<std::string, RunOptions>>& cells,
                             const std::string& out_dir);

struct ReportGroup {
    std::string label;
    int runs = 0;
    double avg_mean = 0.0, avg_std = 0.0;
    double last_mean = 0.0, last_std = 0.0;
};

// Aggregates every run directory below in_dir across seeds / class orders;
// writes summary.csv and a plot-ready per-stage CSV when out_path is given.
std::vector<ReportGroup> report(const std::string& in_dir, const std::string& out_dir = "");

// serialization helpers (also used by tests)
std::string metrics_csv(const RunRecord& record);
std::string trace_csv(const RunRecord& record);
std::string config_json(const RunOptions& options);
void write_file_atomic(const std::string& path, const std::string& content);
std::string format_double(double v);  // shortest round-trip decimal

}  // namespace sedeg
