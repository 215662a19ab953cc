// vlab: a desk-scale laboratory for LoRA finetuning under a variational
// optimizer. Subcommands cover the whole pipeline: pretrain a frozen base,
// finetune adapters with adamw or ivon, evaluate, sweep the tau trade-off,
// profile per-step cost, and aggregate runs into a comparison table.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vlab/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "runs/default";
    std::optional<uint64_t> seed;
    std::string optimizer;
    std::string precision;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (json)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "run seed override");
    cmd->add_option("--optimizer", args.optimizer, "optimizer override (adamw|ivon)")
        ->check(CLI::IsMember({"adamw", "ivon"}));
    cmd->add_option("--precision", args.precision, "precision override (f32|f64)")
        ->check(CLI::IsMember({"f32", "f64"}));
}

vlab::ExperimentConfig load_config(const CommonArgs& args) {
    std::map<std::string, std::string> overrides;
    if (args.seed) overrides["seed"] = std::to_string(*args.seed);
    if (!args.optimizer.empty()) overrides["optimizer.name"] = args.optimizer;
    if (!args.precision.empty()) overrides["precision"] = args.precision;
    return vlab::ExperimentConfig::load(args.config_path, overrides);
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) grid.push_back(std::stod(part));
    if (grid.empty()) throw CLI::ValidationError("--grid", "empty tau grid");
    return grid;
}

void dump_predictions(const vlab::PredictiveBatch& pb, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (size_t i = 0; i < pb.n; ++i) {
        json row = {{"probs", std::vector<double>(pb.probs.begin() + i * pb.k,
                                                  pb.probs.begin() + (i + 1) * pb.k)},
                    {"label", pb.labels[i]},
                    {"mode", pb.mode_tag()}};
        os << row.dump() << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"variational LoRA finetuning laboratory"};
    app.require_subcommand(1);

    CommonArgs args;

    auto* cmd_pretrain = app.add_subcommand("pretrain", "train the base model on the unshifted task");
    add_common(cmd_pretrain, args);

    auto* cmd_finetune = app.add_subcommand("finetune", "train adapters on the shifted task");
    add_common(cmd_finetune, args);
    std::string base_path, resume_path;
    uint64_t halt_at = 0;
    cmd_finetune->add_option("--base", base_path, "base checkpoint (default <out>/base.ckpt)");
    cmd_finetune->add_option("--resume", resume_path, "resume from a finetune checkpoint");
    cmd_finetune->add_option("--halt-at", halt_at, "stop after this step, saving a checkpoint");

    auto* cmd_eval = app.add_subcommand("eval", "evaluate a finetune checkpoint");
    add_common(cmd_eval, args);
    std::string eval_ckpt, eval_split = "test", dump_path;
    cmd_eval->add_option("--checkpoint", eval_ckpt, "finetune checkpoint")->required();
    cmd_eval->add_option("--split", eval_split, "split to evaluate")
        ->check(CLI::IsMember({"train", "val", "test"}));
    cmd_eval->add_option("--dump", dump_path, "write per-example predictions (jsonl)");

    auto* cmd_sweep = app.add_subcommand("tau-sweep", "accuracy/calibration trade-off over tau");
    add_common(cmd_sweep, args);
    std::string sweep_ckpt, grid_text = "0,0.25,0.5,0.75,1";
    uint64_t sweep_samples = 0;
    cmd_sweep->add_option("--checkpoint", sweep_ckpt, "finetune checkpoint (ivon)")->required();
    cmd_sweep->add_option("--grid", grid_text, "comma-separated tau values");
    cmd_sweep->add_option("--samples", sweep_samples, "ensemble size (default eval.ensemble_size)");

    auto* cmd_profile = app.add_subcommand("profile", "per-step phase timings");
    add_common(cmd_profile, args);
    uint64_t prof_iters = 200, prof_warmup = 50, prof_rank = 0;
    cmd_profile->add_option("--iters", prof_iters, "timed iterations (>= 30)");
    cmd_profile->add_option("--warmup", prof_warmup, "warmup iterations");
    cmd_profile->add_option("--rank", prof_rank, "lora rank override");

    auto* cmd_report = app.add_subcommand("report", "aggregate run records into a table");
    std::vector<std::string> report_runs;
    std::string report_out;
    cmd_report->add_option("--runs", report_runs, "run.json files or run directories")
        ->required()
        ->expected(-1);
    cmd_report->add_option("--out", report_out, "write the aggregate as json");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_report->parsed()) {
            std::vector<fs::path> paths;
            for (const std::string& r : report_runs) {
                fs::path p(r);
                if (fs::is_directory(p)) p /= "run.json";
                paths.push_back(p);
            }
            const json rep = vlab::aggregate_runs(paths);
            std::cout << vlab::format_report_table(rep);
            if (!report_out.empty()) {
                std::ofstream os(report_out);
                os << rep.dump(2) << "\n";
            }
            return 0;
        }

        vlab::ExperimentConfig cfg = load_config(args);
        const fs::path out_dir(args.out_dir);

        return vlab::with_precision(cfg.precision, [&](auto tag) -> int {
            using T = decltype(tag);

            if (cmd_pretrain->parsed()) {
                vlab::RunRecord rec = vlab::run_pretrain<T>(cfg, out_dir);
                std::cout << "pretrained " << cfg.pretrain.steps << " steps -> "
                          << rec.final_checkpoint << "\n";
                if (!rec.series.empty()) {
                    const auto& last = rec.series.back().metrics;
                    std::printf("val acc %.4f  nll %.4f\n", last.accuracy, last.nll);
                }
                return 0;
            }

            if (cmd_finetune->parsed()) {
                vlab::FinetuneOptions fopts;
                fopts.base_checkpoint = base_path.empty() ? out_dir / "base.ckpt"
                                                          : fs::path(base_path);
                fopts.out_dir = out_dir;
                if (!resume_path.empty()) fopts.resume = fs::path(resume_path);
                if (halt_at > 0) fopts.halt_at = halt_at;
                vlab::RunRecord rec = vlab::run_finetune<T>(cfg, fopts);
                std::cout << "finetuned (" << cfg.optimizer.name << ") -> "
                          << rec.final_checkpoint << "\n";
                for (auto it = rec.final_test.begin(); it != rec.final_test.end(); ++it)
                    std::printf("test %-10s acc %.4f  ece %.4f  nll %.4f  brier %.4f\n",
                                it.key().c_str(), it.value().at("acc").get<double>(),
                                it.value().at("ece").get<double>(),
                                it.value().at("nll").get<double>(),
                                it.value().at("brier").get<double>());
                return 0;
            }

            if (cmd_eval->parsed()) {
                const vlab::Checkpoint ck = vlab::Checkpoint::load(eval_ckpt);
                if (ck.kind != "finetune")
                    throw std::invalid_argument("eval: expected a finetune checkpoint");
                // The checkpoint knows which arm trained it.
                cfg.optimizer.name =
                    json::parse(ck.optimizer_json).at("name").get<std::string>();
                vlab::TaskData task = vlab::generate_task(cfg.task);
                const vlab::Dataset& data = eval_split == "train" ? task.finetune_train
                                            : eval_split == "val" ? task.finetune_val
                                                                  : task.finetune_test;
                vlab::TransformerConfig mc = cfg.model;
                mc.vocab_size = cfg.task.vocab_size;
                mc.seq_len = cfg.task.seq_len;
                mc.num_classes = cfg.task.num_classes;
                vlab::TinyTransformer<T> model(mc);
                model.freeze_base();
                vlab::RngStream lora_rng(cfg.seed, "lora_init");
                model.attach_adapters(lora_rng);
                vlab::load_model_arrays(model, ck);
                auto opt = vlab::detail::make_optimizer<T>(
                    cfg, model.trainable_count(), std::max<uint64_t>(cfg.finetune.steps, 1));
                vlab::load_optimizer_state(*opt, ck);
                auto preds = vlab::evaluate_modes(model, *opt, cfg, data,
                                                  "ens/" + eval_split + "/final",
                                                  "mcd/" + eval_split + "/final");
                for (const auto& pb : preds) {
                    const vlab::MetricsReport rep = vlab::compute_metrics(pb, cfg.eval.num_bins);
                    std::printf("%s %-10s acc %.4f  ece %.4f  nll %.4f  brier %.4f  (n=%zu)\n",
                                eval_split.c_str(), pb.mode_tag().c_str(), rep.accuracy, rep.ece,
                                rep.nll, rep.brier, rep.n);
                    if (!dump_path.empty())
                        dump_predictions(pb, dump_path + "." + pb.mode_tag() + ".jsonl");
                }
                return 0;
            }

            if (cmd_sweep->parsed()) {
                const size_t samples = sweep_samples ? sweep_samples : cfg.eval.ensemble_size;
                const auto rows =
                    vlab::tau_sweep<T>(cfg, sweep_ckpt, parse_grid(grid_text), samples);
                std::printf("%8s  %9s  %9s  %9s  %9s\n", "tau", "acc", "ece", "nll", "brier");
                json out = json::array();
                for (const auto& row : rows) {
                    std::printf("%8.3f  %9.4f  %9.4f  %9.4f  %9.4f\n", row.tau,
                                row.metrics.accuracy, row.metrics.ece, row.metrics.nll,
                                row.metrics.brier);
                    json r = row.metrics.to_json();
                    r["tau"] = row.tau;
                    out.push_back(r);
                }
                fs::create_directories(out_dir);
                std::ofstream os(out_dir / "tau_sweep.json");
                os << out.dump(2) << "\n";
                return 0;
            }

            if (cmd_profile->parsed()) {
                vlab::ExperimentConfig pcfg = cfg;
                if (prof_rank > 0) pcfg.model.lora_rank = prof_rank;
                const vlab::TimingReport rep =
                    vlab::profile_timing<T>(pcfg, prof_warmup, prof_iters);
                std::printf("optimizer %s, %zu trainable params, %zu iters\n",
                            rep.optimizer_name.c_str(), rep.trainable_params, rep.iters);
                std::printf("fwd+bwd  %8.3f ms  (sd %.3f)\n", rep.fwd_bwd_ms_mean,
                            rep.fwd_bwd_ms_std);
                std::printf("sample   %8.3f ms  (sd %.3f)\n", rep.sample_ms_mean,
                            rep.sample_ms_std);
                std::printf("opt step %8.3f ms  (sd %.3f)\n", rep.opt_step_ms_mean,
                            rep.opt_step_ms_std);
                fs::create_directories(out_dir);
                std::ofstream os(out_dir / "profile.json");
                os << rep.to_json().dump(2) << "\n";
                return 0;
            }

            return 1;
        });
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
