#include "sedeg/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sedeg/checkpoint.hpp"
#include "sedeg/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sedeg {

void BenchmarkSpec::validate() const {
    if (dataset != "synthetic" && dataset != "small-image-10" && dataset != "small-image-100")
        throw ConfigError("BenchmarkSpec: unknown dataset '" + dataset + "'");
    if (num_tasks < 1 || classes_per_task < 1)
        throw ConfigError("BenchmarkSpec: num_tasks and classes_per_task must be >= 1");
    if (memory_capacity < 0) throw ConfigError("BenchmarkSpec: memory must be >= 0");
    if (dataset == "small-image-10" && total_classes() != 10)
        throw ConfigError("BenchmarkSpec: small-image-10 needs num_tasks x classes_per_task = 10");
    if (dataset == "small-image-100" && total_classes() != 100)
        throw ConfigError("BenchmarkSpec: small-image-100 needs num_tasks x classes_per_task = 100");
    if (train_per_class < 1 || eval_per_class < 1)
        throw ConfigError("BenchmarkSpec: per-class sample counts must be >= 1");
}

TaskStream build_stream(const BenchmarkSpec& spec) {
    spec.validate();
    SplitDataset source;
    if (spec.dataset == "synthetic") {
        SyntheticSpec synth;
        synth.num_classes = spec.total_classes();
        synth.train_per_class = spec.train_per_class;
        synth.eval_per_class = spec.eval_per_class;
        synth.image_size = spec.image_size;
        synth.channels = spec.channels;
        synth.separation = spec.separation;
        synth.noise = spec.noise;
        synth.seed = spec.data_seed;
        source = make_synthetic(synth);
    } else {
        source = load_small_image(spec.data_dir, spec.dataset == "small-image-10" ? 10 : 100);
    }

    const int C = spec.total_classes();
    TaskStream stream;
    stream.total_classes = C;
    stream.image_size = source.train.image_size;
    stream.channels = source.train.channels;

    stream.class_order.resize(static_cast<size_t>(C));
    for (int i = 0; i < C; ++i) stream.class_order[static_cast<size_t>(i)] = i;
    Rng order_rng(spec.class_order_seed);
    order_rng.shuffle(stream.class_order);
    std::vector<int> global_of(static_cast<size_t>(C));
    for (int g = 0; g < C; ++g) global_of[static_cast<size_t>(stream.class_order[static_cast<size_t>(g)])] = g;

    stream.tasks.resize(static_cast<size_t>(spec.num_tasks));
    for (int t = 0; t < spec.num_tasks; ++t) {
        TaskData& task = stream.tasks[static_cast<size_t>(t)];
        task.first_class = t * spec.classes_per_task;
        task.num_classes = spec.classes_per_task;
        task.train.image_size = task.eval.image_size = stream.image_size;
        task.train.channels = task.eval.channels = stream.channels;
    }
    auto distribute = [&](const Dataset& from, bool is_train) {
        for (size_t i = 0; i < from.size(); ++i) {
            const int orig = from.labels[i];
            if (orig < 0 || orig >= C)
                throw ConfigError("build_stream: label " + std::to_string(orig) +
                                  " outside the configured class count");
            const int g = global_of[static_cast<size_t>(orig)];
            TaskData& task = stream.tasks[static_cast<size_t>(g / spec.classes_per_task)];
            Dataset& target = is_train ? task.train : task.eval;
            target.add(from.images[i], g, from.sample_ids[i]);
        }
    };
    distribute(source.train, true);
    distribute(source.eval, false);

    for (const TaskData& task : stream.tasks)
        if (task.train.size() == 0 || task.eval.size() == 0)
            throw ConfigError("build_stream: a task received no samples");
    return stream;
}

// ---------------------------------------------------------------------------
// evaluation and metrics
// ---------------------------------------------------------------------------

EvalResult evaluate(const Trainer::LogitsFn& logits, const TaskStream& stream, int upto_task,
                    int batch_size) {
    if (upto_task < 1 || upto_task > static_cast<int>(stream.tasks.size()))
        throw ConfigError("evaluate: upto_task out of range");
    NoGradGuard ng;
    EvalResult result;
    int64_t pooled_correct = 0, pooled_total = 0;
    for (int t = 1; t <= upto_task; ++t) {
        const Dataset& eval_set = stream.tasks[static_cast<size_t>(t - 1)].eval;
        int64_t correct = 0;
        for (size_t start = 0; start < eval_set.size(); start += static_cast<size_t>(batch_size)) {
            const size_t end = std::min(eval_set.size(), start + static_cast<size_t>(batch_size));
            std::vector<int> idx(end - start);
            std::iota(idx.begin(), idx.end(), static_cast<int>(start));
            Tensor out = logits(batch_images(eval_set, idx));
            const int C = out.dim(1);
            const auto& v = out.values();
            for (size_t r = 0; r < idx.size(); ++r) {
                const double* row = &v[r * static_cast<size_t>(C)];
                int best = 0;
                for (int j = 1; j < C; ++j)
                    if (row[j] > row[best]) best = j;
                if (best == eval_set.labels[static_cast<size_t>(idx[r])]) ++correct;
            }
        }
        result.per_task_acc.push_back(100.0 * static_cast<double>(correct) /
                                      static_cast<double>(eval_set.size()));
        pooled_correct += correct;
        pooled_total += static_cast<int64_t>(eval_set.size());
    }
    result.all_seen_acc =
        100.0 * static_cast<double>(pooled_correct) / static_cast<double>(pooled_total);
    return result;
}

double avg_accuracy(const std::vector<double>& per_phase_acc) {
    if (per_phase_acc.empty()) throw ConfigError("avg_accuracy: no recorded phases");
    double sum = 0.0;
    for (double a : per_phase_acc) sum += a;
    return sum / static_cast<double>(per_phase_acc.size());
}

std::vector<double> RunRecord::end_of_phase_accuracies() const {
    std::vector<double> acc;
    for (size_t i = 0; i < rows.size(); ++i) {
        const bool last_of_task = i + 1 == rows.size() || rows[i + 1].task_index != rows[i].task_index;
        if (last_of_task) acc.push_back(rows[i].all_seen_acc);
    }
    return acc;
}

double RunRecord::last_accuracy() const {
    if (rows.empty()) throw ConfigError("RunRecord: empty record");
    return rows.back().all_seen_acc;
}

double RunRecord::avg_accuracy() const { return sedeg::avg_accuracy(end_of_phase_accuracies()); }

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp + " for writing");
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw IoError("write failed for " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename to " + path + " failed: " + ec.message());
}

std::string metrics_csv(const RunRecord& record) {
    std::ostringstream os;
    os << "task_index,stage,seen_classes,all_seen_acc,avg_acc,per_task_acc_json\n";
    for (const StageRow& row : record.rows) {
        os << row.task_index << ',' << row.stage << ',' << row.seen_classes << ','
           << format_double(row.all_seen_acc) << ',' << format_double(row.avg_acc) << ",\"[";
        for (size_t i = 0; i < row.per_task_acc.size(); ++i)
            os << (i ? "," : "") << format_double(row.per_task_acc[i]);
        os << "]\"\n";
    }
    return os.str();
}

std::string trace_csv(const RunRecord& record) {
    std::ostringstream os;
    os << "task,stage,epoch,step,lr,alpha,total,bc,kd,div,aux,ted,bld,fd\n";
    for (const StepTrace& t : record.traces) {
        os << t.task << ',' << t.stage << ',' << t.epoch << ',' << t.step << ','
           << format_double(t.lr) << ',' << format_double(t.alpha) << ','
           << format_double(t.total) << ',' << format_double(t.bc) << ',' << format_double(t.kd)
           << ',' << format_double(t.div) << ',' << format_double(t.aux) << ','
           << format_double(t.ted) << ',' << format_double(t.bld) << ',' << format_double(t.fd)
           << '\n';
    }
    return os.str();
}

std::string config_json(const RunOptions& o) {
    json j;
    j["method"] = method_name(o.method);
    j["spec"] = {{"dataset", o.spec.dataset},
                 {"num_tasks", o.spec.num_tasks},
                 {"classes_per_task", o.spec.classes_per_task},
                 {"class_order_seed", o.spec.class_order_seed},
                 {"memory", o.spec.memory_capacity},
                 {"train_per_class", o.spec.train_per_class},
                 {"eval_per_class", o.spec.eval_per_class},
                 {"image_size", o.spec.image_size},
                 {"channels", o.spec.channels},
                 {"separation", o.spec.separation},
                 {"noise", o.spec.noise},
                 {"data_seed", o.spec.data_seed},
                 {"data_dir", o.spec.data_dir}};
    j["model"] = {{"num_sab", o.model.num_sab},       {"num_tab", o.model.num_tab},
                  {"num_heads", o.model.num_heads},   {"embed_dim", o.model.embed_dim},
                  {"input_size", o.model.input_size}, {"patch_size", o.model.patch_size},
                  {"channels", o.model.channels}};
    j["train"] = {{"bootstrap_epochs", o.train.bootstrap_epochs},
                  {"stage1_epochs", o.train.stage1_epochs},
                  {"stage2_epochs", o.train.stage2_epochs},
                  {"finetune_epochs", o.train.finetune_epochs},
                  {"learning_rate", o.train.learning_rate},
                  {"weight_decay", o.train.weight_decay},
                  {"batch_size", o.train.batch_size},
                  {"optimizer", o.train.optimizer},
                  {"seed", o.train.seed},
                  {"warm_start_sup", o.train.warm_start_sup},
                  {"warm_start_new", o.train.warm_start_new}};
    j["loss"] = {{"lambda", o.train.loss.lambda}, {"mu", o.train.loss.mu},
                 {"xi", o.train.loss.xi},         {"beta", o.train.loss.beta},
                 {"tau", o.train.loss.tau},       {"gamma", o.train.loss.gamma},
                 {"bld_conventional", o.train.loss.bld_conventional}};
    j["ablation"] = {{"aux_loss", o.train.ablation.aux_loss},
                     {"embeddings_kd", o.train.ablation.embeddings_kd},
                     {"balanced_classification", o.train.ablation.balanced_classification},
                     {"feature_kd", o.train.ablation.feature_kd},
                     {"balanced_kd", o.train.ablation.balanced_kd},
                     {"distill_encoder_only", o.train.ablation.distill_encoder_only}};
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// run_benchmark
// ---------------------------------------------------------------------------

RunRecord run_benchmark(const RunOptions& options) {
    options.spec.validate();
    options.model.validate();
    options.train.validate();
    const TaskStream stream = build_stream(options.spec);
    if (options.model.input_size != stream.image_size ||
        options.model.channels != stream.channels)
        throw ConfigError("run_benchmark: model input " +
                          std::to_string(options.model.input_size) + "x" +
                          std::to_string(options.model.channels) + " does not match dataset " +
                          std::to_string(stream.image_size) + "x" +
                          std::to_string(stream.channels));

    if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

    Trainer trainer(options.model, options.train, options.method, options.spec.memory_capacity);
    RunRecord record;
    std::map<std::string, std::vector<double>> per_stage_acc;  // for the running AVG

    for (int t = 1; t <= options.spec.num_tasks; ++t) {
        const TaskData& task = stream.tasks[static_cast<size_t>(t - 1)];
        TaskInput input{&task.train, task.first_class, task.num_classes};
        trainer.run_task(t, input, [&](const Trainer::StageProduct& product) {
            const EvalResult eval = evaluate(product.logits, stream, t, options.train.batch_size);
            StageRow row;
            row.task_index = t;
            row.stage = product.stage;
            row.seen_classes = task.first_class + task.num_classes;
            row.all_seen_acc = eval.all_seen_acc;
            row.per_task_acc = eval.per_task_acc;
            auto& history = per_stage_acc[product.stage];
            if (t == 1) {
                // the bootstrap result seeds the running mean of every stage kind
                row.avg_acc = eval.all_seen_acc;
            } else {
                double sum = eval.all_seen_acc;
                int n = 1;
                if (!record.rows.empty()) {
                    sum += record.rows.front().all_seen_acc;  // task-1 row
                    ++n;
                }
                for (double a : history) {
                    sum += a;
                    ++n;
                }
                row.avg_acc = sum / n;
            }
            if (t > 1) history.push_back(eval.all_seen_acc);
            record.rows.push_back(row);

            if (!options.out_dir.empty() && options.save_checkpoints) {
                const std::string name = "task" + std::to_string(t) + "_" + product.stage;
                to_checkpoint(options.model, trainer.classes_per_task(), product.params)
                    .save(options.out_dir + "/" + name + ".ckpt");
            }
        });
        if (!options.out_dir.empty() && options.save_checkpoints &&
            options.method != Method::finetune_baseline) {
            buffer_checkpoint(trainer.buffer())
                .save(options.out_dir + "/memory_task" + std::to_string(t) + ".ckpt");
        }
    }

    record.traces = trainer.traces();
    record.freeze_audits = trainer.freeze_audits();
    record.encoder_param_counts = trainer.encoder_param_history();

    // eval isolation: no eval sample id may appear in training or the buffer
    std::set<int64_t> train_ids(trainer.training_sample_ids().begin(),
                                trainer.training_sample_ids().end());
    for (const auto& [cls, exemplars] : trainer.buffer().store)
        for (const Exemplar& e : exemplars) train_ids.insert(e.sample_id);
    record.eval_isolation_ok = true;
    for (const TaskData& task : stream.tasks)
        for (int64_t id : task.eval.sample_ids)
            if (train_ids.count(id)) record.eval_isolation_ok = false;

    if (!options.out_dir.empty()) {
        write_file_atomic(options.out_dir + "/metrics.csv", metrics_csv(record));
        write_file_atomic(options.out_dir + "/trace.csv", trace_csv(record));
        write_file_atomic(options.out_dir + "/config.json", config_json(options));
    }
    return record;
}

// ---------------------------------------------------------------------------
// options, grids, sweep
// ---------------------------------------------------------------------------

namespace {

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
    if (value == "0" || value == "false" || value == "no" || value == "off") return false;
    throw ConfigError("option " + key + ": expected a boolean, got '" + value + "'");
}

int parse_int(const std::string& value, const std::string& key) {
    try {
        return std::stoi(value);
    } catch (const std::exception&) {
        throw ConfigError("option " + key + ": expected an integer, got '" + value + "'");
    }
}

uint64_t parse_u64(const std::string& value, const std::string& key) {
    try {
        return std::stoull(value);
    } catch (const std::exception&) {
        throw ConfigError("option " + key + ": expected an unsigned integer, got '" + value + "'");
    }
}

double parse_real(const std::string& value, const std::string& key) {
    try {
        return std::stod(value);
    } catch (const std::exception&) {
        throw ConfigError("option " + key + ": expected a number, got '" + value + "'");
    }
}

}  // namespace

void apply_option(RunOptions& o, const std::string& key, const std::string& value) {
    if (key == "dataset") o.spec.dataset = value;
    else if (key == "num-tasks") o.spec.num_tasks = parse_int(value, key);
    else if (key == "classes-per-task") o.spec.classes_per_task = parse_int(value, key);
    else if (key == "class-order-seed") o.spec.class_order_seed = parse_u64(value, key);
    else if (key == "memory") o.spec.memory_capacity = parse_int(value, key);
    else if (key == "train-per-class") o.spec.train_per_class = parse_int(value, key);
    else if (key == "eval-per-class") o.spec.eval_per_class = parse_int(value, key);
    else if (key == "image-size") { o.spec.image_size = parse_int(value, key); o.model.input_size = o.spec.image_size; }
    else if (key == "channels") { o.spec.channels = parse_int(value, key); o.model.channels = o.spec.channels; }
    else if (key == "separation") o.spec.separation = parse_real(value, key);
    else if (key == "noise") o.spec.noise = parse_real(value, key);
    else if (key == "data-seed") o.spec.data_seed = parse_u64(value, key);
    else if (key == "data-dir") o.spec.data_dir = value;
    else if (key == "method") o.method = method_from_string(value);
    else if (key == "seed") o.train.seed = parse_u64(value, key);
    else if (key == "bootstrap-epochs") o.train.bootstrap_epochs = parse_int(value, key);
    else if (key == "stage1-epochs") o.train.stage1_epochs = parse_int(value, key);
    else if (key == "stage2-epochs") o.train.stage2_epochs = parse_int(value, key);
    else if (key == "finetune-epochs") o.train.finetune_epochs = parse_int(value, key);
    else if (key == "lr") o.train.learning_rate = parse_real(value, key);
    else if (key == "weight-decay") o.train.weight_decay = parse_real(value, key);
    else if (key == "batch-size") o.train.batch_size = parse_int(value, key);
    else if (key == "lambda") o.train.loss.lambda = parse_real(value, key);
    else if (key == "mu") o.train.loss.mu = parse_real(value, key);
    else if (key == "xi") o.train.loss.xi = parse_real(value, key);
    else if (key == "beta") o.train.loss.beta = parse_real(value, key);
    else if (key == "tau") o.train.loss.tau = parse_real(value, key);
    else if (key == "gamma") o.train.loss.gamma = parse_real(value, key);
    else if (key == "bld-conventional") o.train.loss.bld_conventional = parse_bool(value, key);
    else if (key == "no-aux") o.train.ablation.aux_loss = !parse_bool(value, key);
    else if (key == "no-ted") o.train.ablation.embeddings_kd = !parse_bool(value, key);
    else if (key == "no-balanced-ce") o.train.ablation.balanced_classification = !parse_bool(value, key);
    else if (key == "no-feature-kd") o.train.ablation.feature_kd = !parse_bool(value, key);
    else if (key == "no-balanced-kd") o.train.ablation.balanced_kd = !parse_bool(value, key);
    else if (key == "distill-full") o.train.ablation.distill_encoder_only = !parse_bool(value, key);
    else if (key == "random-sup-init") o.train.warm_start_sup = !parse_bool(value, key);
    else if (key == "random-new-init") o.train.warm_start_new = !parse_bool(value, key);
    else if (key == "sab") o.model.num_sab = parse_int(value, key);
    else if (key == "heads") o.model.num_heads = parse_int(value, key);
    else if (key == "embed-dim") o.model.embed_dim = parse_int(value, key);
    else if (key == "patch-size") o.model.patch_size = parse_int(value, key);
    else if (key == "save-checkpoints") o.save_checkpoints = parse_bool(value, key);
    else throw ConfigError("unknown option '" + key + "'");
}

std::vector<std::pair<std::string, RunOptions>> table4_cells(const RunOptions& base) {
    // stage-1 grid: auxiliary loss / embeddings KD / balanced classification
    const bool grid[4][3] = {
        {true, true, true}, {true, true, false}, {true, false, true}, {false, false, true}};
    std::vector<std::pair<std::string, RunOptions>> cells;
    for (const auto& row : grid) {
        RunOptions o = base;
        o.train.ablation.aux_loss = row[0];
        o.train.ablation.embeddings_kd = row[1];
        o.train.ablation.balanced_classification = row[2];
        std::string name = std::string("aux") + (row[0] ? "1" : "0") + "_ted" +
                           (row[1] ? "1" : "0") + "_bce" + (row[2] ? "1" : "0");
        cells.emplace_back(name, o);
    }
    return cells;
}

std::vector<std::pair<std::string, RunOptions>> table5_cells(const RunOptions& base) {
    // stage-2 grid: feature KD / balanced KD / distill encoder only
    const bool grid[4][3] = {
        {true, true, true}, {true, true, false}, {true, false, false}, {false, false, false}};
    std::vector<std::pair<std::string, RunOptions>> cells;
    for (const auto& row : grid) {
        RunOptions o = base;
        o.train.ablation.feature_kd = row[0];
        o.train.ablation.balanced_kd = row[1];
        o.train.ablation.distill_encoder_only = row[2];
        std::string name = std::string("fd") + (row[0] ? "1" : "0") + "_bld" +
                           (row[1] ? "1" : "0") + "_deo" + (row[2] ? "1" : "0");
        cells.emplace_back(name, o);
    }
    return cells;
}

std::vector<std::pair<std::string, RunOptions>> parse_grid(const RunOptions& base,
                                                           const std::string& grid_path) {
    std::ifstream f(grid_path);
    if (!f) throw IoError("sweep: cannot open grid file " + grid_path);
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    std::string preset;
    std::string line;
    while (std::getline(f, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
            line.pop_back();
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        line = line.substr(start);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("sweep: bad grid line '" + line + "'");
        const std::string key = line.substr(0, eq);
        std::vector<std::string> values;
        std::stringstream ss(line.substr(eq + 1));
        std::string item;
        while (std::getline(ss, item, ',')) values.push_back(item);
        if (values.empty()) throw ConfigError("sweep: no values for key '" + key + "'");
        if (key == "preset") {
            if (values.size() != 1) throw ConfigError("sweep: preset takes one value");
            preset = values[0];
        } else {
            axes.emplace_back(key, values);
        }
    }

    std::vector<std::pair<std::string, RunOptions>> cells;
    cells.emplace_back("", base);
    for (const auto& [key, values] : axes) {
        std::vector<std::pair<std::string, RunOptions>> expanded;
        for (const auto& [name, options] : cells)
            for (const std::string& value : values) {
                RunOptions o = options;
                apply_option(o, key, value);
                expanded.emplace_back(name.empty() ? key + value : name + "_" + key + value,
                                      o);
            }
        cells = std::move(expanded);
    }
    if (!preset.empty()) {
        std::vector<std::pair<std::string, RunOptions>> expanded;
        for (const auto& [name, options] : cells) {
            auto rows = preset == "table4"   ? table4_cells(options)
                        : preset == "table5" ? table5_cells(options)
                                             : throw ConfigError("sweep: unknown preset '" +
                                                                 preset + "'");
            for (auto& [rname, ropts] : rows)
                expanded.emplace_back(name.empty() ? rname : name + "_" + rname, ropts);
        }
        cells = std::move(expanded);
    }
    for (auto& [name, options] : cells)
        if (name.empty()) name = "cell";
    return cells;
}

std::vector<SweepCell> sweep(const std::vector<std::pair<std::string, RunOptions>>& cells,
                             const std::string& out_dir) {
    if (cells.empty()) throw ConfigError("sweep: empty grid");
    fs::create_directories(out_dir);
    std::vector<SweepCell> results;
    for (const auto& [name, options] : cells) {
        RunOptions cell = options;
        cell.out_dir = out_dir + "/" + name;
        const RunRecord record = run_benchmark(cell);
        results.push_back({name, cell, record.avg_accuracy(), record.last_accuracy()});
    }
    std::ostringstream os;
    os << "cell,method,dataset,num_tasks,memory,AVG,LAST\n";
    for (const SweepCell& c : results)
        os << c.name << ',' << method_name(c.options.method) << ',' << c.options.spec.dataset
           << ',' << c.options.spec.num_tasks << ',' << c.options.spec.memory_capacity << ','
           << format_double(c.avg) << ',' << format_double(c.last) << '\n';
    write_file_atomic(out_dir + "/summary.csv", os.str());
    return results;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

struct LoadedRun {
    json config;
    RunRecord record;
};

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
        } else if (c == ',' && !quoted) {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

RunRecord load_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("report: cannot open " + path);
    RunRecord record;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_row(line);
        if (fields.size() != 6) throw IoError("report: malformed row in " + path);
        StageRow row;
        row.task_index = std::stoi(fields[0]);
        row.stage = fields[1];
        row.seen_classes = std::stoi(fields[2]);
        row.all_seen_acc = std::stod(fields[3]);
        row.avg_acc = std::stod(fields[4]);
        for (const auto& v : json::parse(fields[5])) row.per_task_acc.push_back(v.get<double>());
        record.rows.push_back(std::move(row));
    }
    return record;
}

std::string group_label(const json& config) {
    json key = config;
    key["spec"].erase("class_order_seed");
    key["spec"].erase("data_seed");
    key["train"].erase("seed");
    std::ostringstream os;
    os << key["method"].get<std::string>() << '|' << key["spec"]["dataset"].get<std::string>()
       << "|tasks=" << key["spec"]["num_tasks"] << "|mem=" << key["spec"]["memory"] << '|'
       << std::hash<std::string>{}(key.dump());
    return os.str();
}

}  // namespace

std::vector<ReportGroup> report(const std::string& in_dir, const std::string& out_dir) {
    std::vector<LoadedRun> runs;
    for (const auto& entry : fs::recursive_directory_iterator(in_dir)) {
        if (!entry.is_regular_file() || entry.path().filename() != "config.json") continue;
        const fs::path dir = entry.path().parent_path();
        if (!fs::exists(dir / "metrics.csv")) continue;
        LoadedRun run;
        std::ifstream cf(dir / "config.json");
        cf >> run.config;
        run.record = load_metrics_csv((dir / "metrics.csv").string());
        runs.push_back(std::move(run));
    }
    if (runs.empty()) throw IoError("report: no runs found under " + in_dir);

    std::map<std::string, std::vector<const LoadedRun*>> groups;
    for (const LoadedRun& run : runs) groups[group_label(run.config)].push_back(&run);

    std::vector<ReportGroup> out;
    std::ostringstream plot;
    plot << "group,task_index,stage,all_seen_acc_mean\n";
    for (const auto& [label, members] : groups) {
        ReportGroup g;
        g.label = label;
        g.runs = static_cast<int>(members.size());
        std::vector<double> avgs, lasts;
        for (const LoadedRun* run : members) {
            avgs.push_back(run->record.avg_accuracy());
            lasts.push_back(run->record.last_accuracy());
        }
        auto mean_std = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var /= static_cast<double>(v.size());
            return std::pair<double, double>(mean, std::sqrt(var));
        };
        std::tie(g.avg_mean, g.avg_std) = mean_std(avgs);
        std::tie(g.last_mean, g.last_std) = mean_std(lasts);
        out.push_back(g);

        // per (task, stage) mean accuracy across the group's runs
        std::map<std::pair<int, std::string>, std::pair<double, int>> acc;
        for (const LoadedRun* run : members)
            for (const StageRow& row : run->record.rows) {
                auto& slot = acc[{row.task_index, row.stage}];
                slot.first += row.all_seen_acc;
                slot.second += 1;
            }
        for (const auto& [key, sum_count] : acc)
            plot << label << ',' << key.first << ',' << key.second << ','
                 << format_double(sum_count.first / sum_count.second) << '\n';
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ostringstream os;
        os << "group,runs,avg_mean,avg_std,last_mean,last_std\n";
        for (const ReportGroup& g : out)
            os << g.label << ',' << g.runs << ',' << format_double(g.avg_mean) << ','
               << format_double(g.avg_std) << ',' << format_double(g.last_mean) << ','
               << format_double(g.last_std) << '\n';
        write_file_atomic(out_dir + "/summary.csv", os.str());
        write_file_atomic(out_dir + "/plot.csv", plot.str());
    }
    return out;
}

}  // namespace sedeg
