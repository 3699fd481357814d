#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "sedeg/errors.hpp"
#include "sedeg/harness.hpp"

namespace {

void bind_run_options(CLI::App* app, sedeg::RunOptions& o, std::string& method) {
    app->add_option("--dataset", o.spec.dataset,
                    "synthetic | small-image-10 | small-image-100");
    app->add_option("--num-tasks", o.spec.num_tasks, "number of incremental tasks");
    app->add_option("--classes-per-task", o.spec.classes_per_task, "classes introduced per task");
    app->add_option("--class-order-seed", o.spec.class_order_seed, "class permutation seed");
    app->add_option("--memory", o.spec.memory_capacity, "exemplar budget");
    app->add_option("--seed", o.train.seed, "training seed");
    app->add_option("--method", method, "sedeg | dytox | finetune");
    app->add_option("--train-per-class", o.spec.train_per_class, "synthetic train samples/class");
    app->add_option("--eval-per-class", o.spec.eval_per_class, "synthetic eval samples/class");
    app->add_option("--image-size", o.spec.image_size, "synthetic image side")
        ->each([&o](const std::string& v) { o.model.input_size = std::stoi(v); });
    app->add_option("--channels", o.spec.channels, "synthetic image channels")
        ->each([&o](const std::string& v) { o.model.channels = std::stoi(v); });
    app->add_option("--separation", o.spec.separation, "synthetic class prototype scale");
    app->add_option("--noise", o.spec.noise, "synthetic per-sample noise");
    app->add_option("--data-seed", o.spec.data_seed, "synthetic generation seed");
    app->add_option("--data-dir", o.spec.data_dir, "directory with small-image binaries");
    app->add_option("--sab", o.model.num_sab, "encoder self-attention blocks");
    app->add_option("--heads", o.model.num_heads, "attention heads");
    app->add_option("--embed-dim", o.model.embed_dim, "embedding dimension");
    app->add_option("--patch-size", o.model.patch_size, "patch side length");
    app->add_option("--bootstrap-epochs", o.train.bootstrap_epochs, "task-1 epochs");
    app->add_option("--stage1-epochs", o.train.stage1_epochs, "stage-1 epochs per task");
    app->add_option("--stage2-epochs", o.train.stage2_epochs, "stage-2 epochs per task");
    app->add_option("--finetune-epochs", o.train.finetune_epochs,
                    "balanced fine-tuning epochs (dytox baseline)");
    app->add_option("--lr", o.train.learning_rate, "base learning rate");
    app->add_option("--weight-decay", o.train.weight_decay, "decoupled weight decay");
    app->add_option("--batch-size", o.train.batch_size, "training batch size");
    app->add_option("--lambda", o.train.loss.lambda, "divergence weight");
    app->add_option("--mu", o.train.loss.mu, "auxiliary classification weight");
    app->add_option("--xi", o.train.loss.xi, "task-embedding distillation weight");
    app->add_option("--beta", o.train.loss.beta, "feature distillation weight");
    app->add_option("--tau", o.train.loss.tau, "temperature");
    app->add_option("--gamma", o.train.loss.gamma, "per-class weight exponent");
    app->add_flag("--bld-conventional", o.train.loss.bld_conventional,
                  "swap student/teacher roles inside the balanced KD");
    app->add_flag_callback("--no-aux",
                           [&o] { o.train.ablation.aux_loss = false; },
                           "drop the auxiliary classification loss");
    app->add_flag_callback("--no-ted",
                           [&o] { o.train.ablation.embeddings_kd = false; },
                           "drop task embedding distillation");
    app->add_flag_callback("--no-balanced-ce",
                           [&o] { o.train.ablation.balanced_classification = false; },
                           "classify with plain sigmoid BCE instead of balanced softmax");
    app->add_flag_callback("--no-feature-kd",
                           [&o] { o.train.ablation.feature_kd = false; },
                           "drop feature distillation in stage 2");
    app->add_flag_callback("--no-balanced-kd",
                           [&o] { o.train.ablation.balanced_kd = false; },
                           "use uniform per-class weights in stage-2 logits KD");
    app->add_flag_callback("--distill-full",
                           [&o] { o.train.ablation.distill_encoder_only = false; },
                           "fine-tune the whole model in stage 2 instead of the encoder only");
    app->add_flag_callback("--random-sup-init",
                           [&o] { o.train.warm_start_sup = false; },
                           "initialize the supplementary encoder randomly");
    app->add_flag_callback("--random-new-init",
                           [&o] { o.train.warm_start_new = false; },
                           "initialize the stage-2 encoder randomly");
    app->add_option("--out", o.out_dir, "output directory (default: $SEDEG_OUT)");
    app->add_flag("--save-checkpoints", o.save_checkpoints, "write per-stage checkpoints");
    app->set_config("--config", "", "flat key=value config file mirroring these flags");
}

std::string default_out_dir() {
    const char* env = std::getenv("SEDEG_OUT");
    return env ? env : "";
}

int run_main(const sedeg::RunOptions& options) {
    const sedeg::RunRecord record = sedeg::run_benchmark(options);
    std::cout << "task,stage,all_seen_acc,avg_acc\n";
    for (const auto& row : record.rows)
        std::cout << row.task_index << ',' << row.stage << ',' << row.all_seen_acc << ','
                  << row.avg_acc << '\n';
    std::cout << "AVG " << record.avg_accuracy() << "  LAST " << record.last_accuracy() << '\n';
    int violations = 0;
    for (const auto& audit : record.freeze_audits)
        violations += static_cast<int>(audit.violations.size());
    if (violations > 0) {
        std::cerr << "error: " << violations << " freeze violations recorded\n";
        return 1;
    }
    if (!record.eval_isolation_ok) {
        std::cerr << "error: eval samples leaked into training\n";
        return 1;
    }
    if (!options.out_dir.empty()) std::cout << "wrote " << options.out_dir << "/metrics.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale two-stage class-incremental learning benchmark"};
    app.require_subcommand(1);

    sedeg::RunOptions options;
    options.out_dir = default_out_dir();
    std::string method = "sedeg";

    CLI::App* run = app.add_subcommand("run", "run one benchmark configuration");
    bind_run_options(run, options, method);

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a grid of configurations");
    std::string grid_file;
    std::string sweep_out = default_out_dir();
    bind_run_options(sweep_cmd, options, method);
    sweep_cmd->add_option("--grid", grid_file, "grid file (key=v1,v2 lines, preset=table4|5)")
        ->required();
    sweep_cmd->add_option("--sweep-out", sweep_out, "sweep output directory");

    CLI::App* report_cmd = app.add_subcommand("report", "aggregate finished runs");
    std::string in_dir;
    std::string report_out;
    report_cmd->add_option("--in", in_dir, "directory containing run outputs")->required();
    report_cmd->add_option("--report-out", report_out, "where to write summary/plot CSVs");

    CLI11_PARSE(app, argc, argv);

    try {
        options.method = sedeg::method_from_string(method);
        if (run->parsed()) {
            return run_main(options);
        }
        if (sweep_cmd->parsed()) {
            if (sweep_out.empty())
                throw sedeg::ConfigError("sweep: pass --sweep-out or set $SEDEG_OUT");
            const auto cells = sedeg::parse_grid(options, grid_file);
            const auto results = sedeg::sweep(cells, sweep_out);
            std::cout << "cell,AVG,LAST\n";
            for (const auto& cell : results)
                std::cout << cell.name << ',' << cell.avg << ',' << cell.last << '\n';
            std::cout << "wrote " << sweep_out << "/summary.csv\n";
            return 0;
        }
        if (report_cmd->parsed()) {
            const auto groups = sedeg::report(in_dir, report_out);
            std::cout << "group,runs,avg_mean,avg_std,last_mean,last_std\n";
            for (const auto& g : groups)
                std::cout << g.label << ',' << g.runs << ',' << g.avg_mean << ',' << g.avg_std
                          << ',' << g.last_mean << ',' << g.last_std << '\n';
            return 0;
        }
    } catch (const sedeg::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const sedeg::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
