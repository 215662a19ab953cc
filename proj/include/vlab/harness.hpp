#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlab/checkpoint.hpp"
#include "vlab/config.hpp"
#include "vlab/data.hpp"
#include "vlab/metrics.hpp"
#include "vlab/model.hpp"
#include "vlab/optim.hpp"
#include "vlab/predict.hpp"

namespace vlab {

struct TrainingDivergedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SeriesEntry {
    uint64_t step = 0;
    double wall_ms = 0.0;
    std::string split;
    std::string mode;
    size_t samples = 1;
    double tau = 0.0;
    MetricsReport metrics;
};

struct RunRecord {
    std::string kind;  // "pretrain" | "finetune"
    std::string config_hash;
    nlohmann::json config;
    std::string optimizer_name;
    std::vector<SeriesEntry> series;
    nlohmann::json timings;
    std::string final_checkpoint;
    nlohmann::json final_test = nlohmann::json::object();  // mode -> metrics
    nlohmann::json best_val = nlohmann::json::object();
    nlohmann::json best_test = nlohmann::json::object();
    std::optional<uint64_t> halted_at;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static RunRecord load(const std::filesystem::path& path);
};

struct TauRow {
    double tau = 0.0;
    MetricsReport metrics;
};

struct TimingReport {
    double fwd_bwd_ms_mean = 0.0, fwd_bwd_ms_std = 0.0;
    double sample_ms_mean = 0.0, sample_ms_std = 0.0;
    double opt_step_ms_mean = 0.0, opt_step_ms_std = 0.0;
    size_t iters = 0;
    size_t trainable_params = 0;
    std::string optimizer_name;

    nlohmann::json to_json() const;
};

// Aggregates finetune run records into a per-method comparison (median, mean
// and standard error of the final-test metrics over seeds).
nlohmann::json aggregate_runs(const std::vector<std::filesystem::path>& run_jsons);
std::string format_report_table(const nlohmann::json& report);

// ---------------------------------------------------------------------------
// checkpoint glue
// ---------------------------------------------------------------------------

template <typename T>
CkptArray to_ckpt_array(const Tensor<T>& t) {
    CkptArray arr;
    arr.shape.assign(t.shape.begin(), t.shape.end());
    arr.data.resize(t.numel());
    for (size_t i = 0; i < t.numel(); ++i) arr.data[i] = float(t.data[i]);
    return arr;
}

template <typename T>
CkptArray to_ckpt_array(const std::vector<T>& v) {
    CkptArray arr;
    arr.shape = {v.size()};
    arr.data.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) arr.data[i] = float(v[i]);
    return arr;
}

template <typename T>
Checkpoint make_checkpoint(const std::string& kind, const ExperimentConfig& cfg,
                           TinyTransformer<T>& model, Optimizer<T>* opt,
                           const std::map<std::string, const RngStream*>& streams) {
    Checkpoint ck;
    ck.kind = kind;
    ck.config_json = cfg.to_json().dump();
    for (auto& ref : model.named_params()) ck.arrays[ref.name] = to_ckpt_array(*ref.tensor);
    if (opt) {
        for (auto& [name, vec] : opt->state_arrays())
            ck.arrays["opt/" + name] = to_ckpt_array(*vec);
        ck.optimizer_json = opt->hyper_json().dump();
    }
    for (auto& [name, rng] : streams)
        ck.rng_streams[name] = RngState{rng->key(), rng->counter()};
    return ck;
}

template <typename T>
void load_model_arrays(TinyTransformer<T>& model, const Checkpoint& ck) {
    for (auto& ref : model.named_params()) {
        std::vector<uint64_t> shape(ref.tensor->shape.begin(), ref.tensor->shape.end());
        const CkptArray& arr = ck.require(ref.name, shape);
        for (size_t i = 0; i < ref.tensor->numel(); ++i)
            ref.tensor->data[i] = T(arr.data[i]);
    }
}

template <typename T>
void load_optimizer_state(Optimizer<T>& opt, const Checkpoint& ck) {
    for (auto& [name, vec] : opt.state_arrays()) {
        const CkptArray& arr = ck.require("opt/" + name, {vec->size()});
        for (size_t i = 0; i < vec->size(); ++i) (*vec)[i] = T(arr.data[i]);
    }
    const auto oj = nlohmann::json::parse(ck.optimizer_json);
    if (oj.at("name").get<std::string>() != opt.name())
        throw CheckpointShapeError("checkpoint: optimizer '" +
                                   oj.at("name").get<std::string>() +
                                   "' does not match configured '" + std::string(opt.name()) + "'");
    opt.set_step_count(oj.at("step").get<uint64_t>());
}

// ---------------------------------------------------------------------------
// training internals
// ---------------------------------------------------------------------------

namespace detail {

inline double now_ms(std::chrono::steady_clock::time_point origin) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - origin)
        .count();
}

inline void draw_batch(const Dataset& d, size_t batch_size, RngStream& rng,
                       std::vector<int32_t>& tokens, std::vector<int32_t>& labels) {
    tokens.resize(batch_size * d.seq_len);
    labels.resize(batch_size);
    for (size_t b = 0; b < batch_size; ++b) {
        const size_t idx = size_t(rng.next_u64() % d.size());
        std::copy_n(d.tokens.data() + idx * d.seq_len, d.seq_len,
                    tokens.data() + b * d.seq_len);
        labels[b] = d.labels[idx];
    }
}

template <typename T>
std::unique_ptr<Optimizer<T>> make_optimizer(const ExperimentConfig& cfg, size_t n,
                                             uint64_t total_steps) {
    if (cfg.optimizer.name == "adamw") {
        AdamwHyper hp = cfg.optimizer.adamw;
        hp.total_steps = total_steps;
        return std::make_unique<AdamwOptimizer<T>>(n, hp);
    }
    IvonHyper hp = cfg.optimizer.ivon;
    hp.total_steps = total_steps;
    return std::make_unique<IvonOptimizer<T>>(n, hp);
}

// One optimizer step: draw a batch, evaluate the gradient at each requested
// parameter sample, apply the update. Returns the (sample-averaged) loss.
template <typename T>
double train_step(TinyTransformer<T>& model, Optimizer<T>& opt, const Dataset& data,
                  size_t batch_size, RngStream& data_rng, RngStream& noise_rng,
                  RngStream& dropout_rng, std::vector<int32_t>& tok_buf,
                  std::vector<int32_t>& lab_buf) {
    draw_batch(data, batch_size, data_rng, tok_buf, lab_buf);
    double loss_sum = 0.0;
    const size_t num_samples = opt.samples_per_step();
    for (size_t s = 0; s < num_samples; ++s) {
        std::span<const T> theta = opt.sample_parameters(s, noise_rng);
        model.set_trainable(theta);
        Tape<T> tape;
        model.register_trainable(tape);
        Tensor<T> logits = model.forward(&tape, tok_buf, RunMode::train, &dropout_rng);
        Tensor<T> loss = softmax_cross_entropy(&tape, logits, lab_buf);
        tape.backward(loss);
        std::vector<T> grads = model.gather_trainable_grads(tape);
        if (!std::isfinite(double(loss.data[0]))) {
            double max_g = 0.0;
            for (T g : grads) max_g = std::max(max_g, std::abs(double(g)));
            throw TrainingDivergedError(
                "training diverged: non-finite loss at step " +
                std::to_string(opt.step_count() + 1) + ", lr=" + std::to_string(opt.scheduled_lr()) +
                ", max|grad|=" + std::to_string(max_g));
        }
        opt.accumulate_gradient(s, grads);
        loss_sum += double(loss.data[0]);
    }
    opt.finish_step();
    return loss_sum / double(num_samples);
}

inline nlohmann::json series_entry_json(const SeriesEntry& e) {
    nlohmann::json j = e.metrics.to_json();
    j["step"] = e.step;
    j["split"] = e.split;
    j["mode"] = e.mode;
    j["samples"] = e.samples;
    j["tau"] = e.tau;
    return j;
}

class JsonlWriter {
public:
    explicit JsonlWriter(const std::filesystem::path& path, bool append) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        os_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!os_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    void line(const nlohmann::json& j) { os_ << j.dump() << "\n"; }
    void flush() { os_.flush(); }

private:
    std::ofstream os_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// All prediction modes configured for the optimizer arm: the mean (point)
// prediction always, the posterior ensemble for IVON, MC-dropout for AdamW.
template <typename T>
std::vector<PredictiveBatch> evaluate_modes(TinyTransformer<T>& model, Optimizer<T>& opt,
                                            const ExperimentConfig& cfg, const Dataset& data,
                                            const std::string& ens_tag,
                                            const std::string& mcd_tag) {
    EvalOptions opts{cfg.eval.batch_size, cfg.eval.workers};
    std::vector<PredictiveBatch> out;
    std::vector<T> mean_copy(opt.mean().begin(), opt.mean().end());
    out.push_back(predict_at_mean(model, std::span<const T>(mean_copy), data, opts));
    if (opt.has_posterior()) {
        out.push_back(predict_ensemble(model, opt.posterior_snapshot(), data,
                                       cfg.eval.ensemble_size, cfg.eval.tau, cfg.seed, ens_tag,
                                       opts));
    } else if (cfg.eval.mc_dropout_samples > 0 && model.has_adapters()) {
        out.push_back(mc_dropout_predict(model, std::span<const T>(mean_copy), data,
                                         cfg.eval.mc_dropout_samples, cfg.seed, mcd_tag, opts));
    }
    return out;
}

// ---------------------------------------------------------------------------
// pipeline stages
// ---------------------------------------------------------------------------

template <typename T>
RunRecord run_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const auto origin = std::chrono::steady_clock::now();
    TaskData task = generate_task(cfg.task);

    TransformerConfig mc = cfg.model;
    mc.vocab_size = cfg.task.vocab_size;
    mc.seq_len = cfg.task.seq_len;
    mc.num_classes = cfg.task.num_classes;
    TinyTransformer<T> model(mc);
    RngStream init_rng(cfg.seed, "base_init");
    model.init_base(init_rng);

    AdamwHyper hp;
    hp.lr = cfg.pretrain.lr;
    hp.weight_decay = cfg.pretrain.weight_decay;
    hp.total_steps = cfg.pretrain.steps;
    AdamwOptimizer<T> opt(model.trainable_count(), hp);
    opt.set_mean(model.get_trainable());

    RngStream data_rng(cfg.seed, "pretrain_data");
    RngStream noise_rng(cfg.seed, "pretrain_noise");
    RngStream dropout_rng(cfg.seed, "pretrain_dropout");

    RunRecord rec;
    rec.kind = "pretrain";
    rec.config_hash = cfg.hash_hex();
    rec.config = cfg.to_json();
    rec.optimizer_name = "adamw";

    detail::JsonlWriter jsonl(out_dir / "pretrain_metrics.jsonl", false);
    std::vector<int32_t> tok_buf, lab_buf;
    EvalOptions eopts{cfg.eval.batch_size, cfg.eval.workers};
    for (uint64_t step = 1; step <= cfg.pretrain.steps; ++step) {
        detail::train_step(model, opt, task.pretrain_train, cfg.pretrain.batch_size, data_rng,
                           noise_rng, dropout_rng, tok_buf, lab_buf);
        if (step % cfg.pretrain.eval_interval == 0 || step == cfg.pretrain.steps) {
            std::vector<T> mean_copy(opt.mean().begin(), opt.mean().end());
            PredictiveBatch pb =
                predict_at_mean(model, std::span<const T>(mean_copy), task.pretrain_val, eopts);
            SeriesEntry e{step, detail::now_ms(origin), "val", "mean", 1, 0.0,
                          compute_metrics(pb, cfg.eval.num_bins)};
            rec.series.push_back(e);
            jsonl.line(detail::series_entry_json(e));
        }
    }
    model.set_trainable(std::vector<T>(opt.mean().begin(), opt.mean().end()));

    const auto ckpt_path = out_dir / "base.ckpt";
    make_checkpoint<T>("base", cfg, model, nullptr, {}).save(ckpt_path);
    rec.final_checkpoint = ckpt_path.string();
    rec.timings = {{"total_ms", detail::now_ms(origin)}, {"steps", cfg.pretrain.steps}};
    rec.save(out_dir / "pretrain_run.json");
    return rec;
}

struct FinetuneOptions {
    std::filesystem::path base_checkpoint;
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume;
    std::optional<uint64_t> halt_at;  // stop (with a checkpoint) after this step
};

template <typename T>
RunRecord run_finetune(const ExperimentConfig& cfg, const FinetuneOptions& opts) {
    const auto origin = std::chrono::steady_clock::now();
    if (!std::filesystem::exists(opts.base_checkpoint))
        throw std::invalid_argument("finetune: missing base checkpoint " +
                                    opts.base_checkpoint.string());
    const Checkpoint base_ck = Checkpoint::load(opts.base_checkpoint);
    if (base_ck.kind != "base")
        throw std::invalid_argument("finetune: " + opts.base_checkpoint.string() +
                                    " is not a base checkpoint");

    TaskData task = generate_task(cfg.task);

    TransformerConfig mc = cfg.model;
    mc.vocab_size = cfg.task.vocab_size;
    mc.seq_len = cfg.task.seq_len;
    mc.num_classes = cfg.task.num_classes;
    TinyTransformer<T> model(mc);
    load_model_arrays(model, base_ck);
    model.freeze_base();
    RngStream lora_rng(cfg.seed, "lora_init");
    model.attach_adapters(lora_rng);

    auto opt = detail::make_optimizer<T>(cfg, model.trainable_count(), cfg.finetune.steps);
    opt->set_mean(model.get_trainable());

    RngStream data_rng(cfg.seed, "finetune_data");
    RngStream noise_rng(cfg.seed, "ivon_noise");
    RngStream dropout_rng(cfg.seed, "dropout");

    uint64_t start_step = 0;
    if (opts.resume) {
        const Checkpoint ck = Checkpoint::load(*opts.resume);
        if (ck.kind != "finetune")
            throw std::invalid_argument("finetune: " + opts.resume->string() +
                                        " is not a finetune checkpoint");
        load_model_arrays(model, ck);
        load_optimizer_state(*opt, ck);
        auto restore = [&](const char* name, RngStream& rng) {
            auto it = ck.rng_streams.find(name);
            if (it == ck.rng_streams.end())
                throw CheckpointCorruptError(std::string("checkpoint: missing rng stream '") +
                                             name + "'");
            rng.restore(it->second.key, it->second.counter);
        };
        restore("finetune_data", data_rng);
        restore("ivon_noise", noise_rng);
        restore("dropout", dropout_rng);
        start_step = opt->step_count();
    }

    RunRecord rec;
    rec.kind = "finetune";
    rec.config_hash = cfg.hash_hex();
    rec.config = cfg.to_json();
    rec.optimizer_name = cfg.optimizer.name;

    detail::JsonlWriter jsonl(opts.out_dir / "metrics.jsonl", opts.resume.has_value());
    EvalOptions eopts{cfg.eval.batch_size, cfg.eval.workers};

    double best_val_nll = std::numeric_limits<double>::infinity();
    uint64_t best_step = 0;
    std::vector<T> best_mean;
    std::optional<PosteriorSnapshot<T>> best_post;

    auto eval_at = [&](uint64_t step, const std::string& split, const Dataset& data,
                       const std::string& tag_suffix) {
        std::vector<PredictiveBatch> preds = evaluate_modes(
            model, *opt, cfg, data, "ens/" + split + "/" + tag_suffix,
            "mcd/" + split + "/" + tag_suffix);
        std::vector<SeriesEntry> entries;
        for (const PredictiveBatch& pb : preds) {
            SeriesEntry e{step, detail::now_ms(origin), split, pb.mode_tag(), pb.samples, pb.tau,
                          compute_metrics(pb, cfg.eval.num_bins)};
            entries.push_back(e);
            rec.series.push_back(e);
            jsonl.line(detail::series_entry_json(e));
        }
        return entries;
    };

    std::vector<int32_t> tok_buf, lab_buf;
    const uint64_t stop_at = opts.halt_at ? std::min(*opts.halt_at, cfg.finetune.steps)
                                          : cfg.finetune.steps;
    for (uint64_t step = start_step + 1; step <= stop_at; ++step) {
        detail::train_step(model, *opt, task.finetune_train, cfg.finetune.batch_size, data_rng,
                           noise_rng, dropout_rng, tok_buf, lab_buf);
        if (step % cfg.finetune.eval_interval == 0 || step == cfg.finetune.steps) {
            eval_at(step, "train", task.finetune_train, std::to_string(step));
            auto val_entries = eval_at(step, "val", task.finetune_val, std::to_string(step));
            // Track the best validation point under the arm's headline mode.
            const std::string head_mode = opt->has_posterior() ? "ensemble" : "mean";
            for (const SeriesEntry& e : val_entries) {
                if (e.mode != head_mode) continue;
                if (e.metrics.nll < best_val_nll) {
                    best_val_nll = e.metrics.nll;
                    best_step = step;
                    best_mean.assign(opt->mean().begin(), opt->mean().end());
                    if (opt->has_posterior()) best_post = opt->posterior_snapshot();
                    rec.best_val = detail::series_entry_json(e);
                }
            }
        }
    }

    // Leave the published weights at the mean / trained point.
    model.set_trainable(std::vector<T>(opt->mean().begin(), opt->mean().end()));

    const auto ckpt_path = opts.out_dir / "final.ckpt";
    std::map<std::string, const RngStream*> streams{{"finetune_data", &data_rng},
                                                    {"ivon_noise", &noise_rng},
                                                    {"dropout", &dropout_rng}};
    make_checkpoint<T>("finetune", cfg, model, opt.get(), streams).save(ckpt_path);
    rec.final_checkpoint = ckpt_path.string();

    if (opts.halt_at && stop_at < cfg.finetune.steps) {
        rec.halted_at = stop_at;
        rec.timings = {{"total_ms", detail::now_ms(origin)}, {"steps", stop_at - start_step}};
        rec.save(opts.out_dir / "run.json");
        return rec;
    }

    // Final-step test metrics, plus test metrics at the best-validation point.
    for (const SeriesEntry& e :
         eval_at(cfg.finetune.steps, "test", task.finetune_test, "final"))
        rec.final_test[e.mode] = detail::series_entry_json(e);
    if (!best_mean.empty() && best_step != 0) {
        std::vector<PredictiveBatch> preds;
        EvalOptions bopts = eopts;
        preds.push_back(
            predict_at_mean(model, std::span<const T>(best_mean), task.finetune_test, bopts));
        if (best_post)
            preds.push_back(predict_ensemble(model, *best_post, task.finetune_test,
                                             cfg.eval.ensemble_size, cfg.eval.tau, cfg.seed,
                                             "ens/test/best", bopts));
        else if (cfg.eval.mc_dropout_samples > 0)
            preds.push_back(mc_dropout_predict(model, std::span<const T>(best_mean),
                                               task.finetune_test, cfg.eval.mc_dropout_samples,
                                               cfg.seed, "mcd/test/best", bopts));
        for (const PredictiveBatch& pb : preds) {
            SeriesEntry e{best_step, detail::now_ms(origin), "test", pb.mode_tag(), pb.samples,
                          pb.tau, compute_metrics(pb, cfg.eval.num_bins)};
            rec.best_test[e.mode] = detail::series_entry_json(e);
        }
        // Restore the final-step weights after the detour through the best point.
        model.set_trainable(std::vector<T>(opt->mean().begin(), opt->mean().end()));
    }

    rec.timings = {{"total_ms", detail::now_ms(origin)}, {"steps", stop_at - start_step}};
    rec.save(opts.out_dir / "run.json");
    return rec;
}

// ---------------------------------------------------------------------------
// tau sweep
// ---------------------------------------------------------------------------

template <typename T>
std::vector<TauRow> tau_sweep(const ExperimentConfig& cfg,
                              const std::filesystem::path& finetune_ckpt,
                              const std::vector<double>& grid, size_t samples) {
    const Checkpoint ck = Checkpoint::load(finetune_ckpt);
    if (ck.kind != "finetune")
        throw std::invalid_argument("tau_sweep: " + finetune_ckpt.string() +
                                    " is not a finetune checkpoint");
    const auto oj = nlohmann::json::parse(ck.optimizer_json);
    if (oj.at("name").get<std::string>() != "ivon")
        throw std::invalid_argument("tau_sweep: run used optimizer '" +
                                    oj.at("name").get<std::string>() +
                                    "'; a posterior is only available for ivon");

    TaskData task = generate_task(cfg.task);
    TransformerConfig mc = cfg.model;
    mc.vocab_size = cfg.task.vocab_size;
    mc.seq_len = cfg.task.seq_len;
    mc.num_classes = cfg.task.num_classes;
    TinyTransformer<T> model(mc);
    model.freeze_base();
    RngStream lora_rng(cfg.seed, "lora_init");
    model.attach_adapters(lora_rng);
    load_model_arrays(model, ck);

    IvonHyper hyper = cfg.optimizer.ivon;
    hyper.ess = oj.at("ess").get<double>();
    hyper.weight_decay = oj.at("weight_decay").get<double>();
    hyper.total_steps = std::max<uint64_t>(1, oj.at("total_steps").get<uint64_t>());
    IvonOptimizer<T> opt(model.trainable_count(), hyper);
    load_optimizer_state(opt, ck);

    EvalOptions opts{cfg.eval.batch_size, cfg.eval.workers};
    const PosteriorSnapshot<T> post = opt.posterior_snapshot();
    std::vector<TauRow> rows;
    for (double tau : grid) {
        PredictiveBatch pb = predict_ensemble(model, post, task.finetune_test, samples, tau,
                                              cfg.seed, "ens/test/final", opts);
        rows.push_back({tau, compute_metrics(pb, cfg.eval.num_bins)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// timing profile
// ---------------------------------------------------------------------------

template <typename T>
TimingReport profile_timing(const ExperimentConfig& cfg, size_t warmup, size_t iters) {
    if (iters < 30) throw std::invalid_argument("profile_timing: need at least 30 iterations");

    TaskData task = generate_task(cfg.task);
    TransformerConfig mc = cfg.model;
    mc.vocab_size = cfg.task.vocab_size;
    mc.seq_len = cfg.task.seq_len;
    mc.num_classes = cfg.task.num_classes;
    TinyTransformer<T> model(mc);
    RngStream init_rng(cfg.seed, "profile_init");
    model.init_base(init_rng);
    model.freeze_base();
    RngStream lora_rng(cfg.seed, "lora_init");
    model.attach_adapters(lora_rng);

    auto opt = detail::make_optimizer<T>(cfg, model.trainable_count(),
                                         std::max<uint64_t>(warmup + iters, 1));
    opt->set_mean(model.get_trainable());

    RngStream data_rng(cfg.seed, "profile_data");
    RngStream noise_rng(cfg.seed, "profile_noise");
    RngStream dropout_rng(cfg.seed, "profile_dropout");
    std::vector<int32_t> tok_buf, lab_buf;
    detail::draw_batch(task.finetune_train, cfg.finetune.batch_size, data_rng, tok_buf, lab_buf);

    const bool stochastic = opt->stochastic_step();
    std::vector<double> fwd_ms, smp_ms, opt_ms;
    fwd_ms.reserve(iters);
    using clock = std::chrono::steady_clock;
    for (size_t it = 0; it < warmup + iters; ++it) {
        const auto t0 = clock::now();
        std::span<const T> theta = opt->sample_parameters(0, noise_rng);
        const auto t1 = clock::now();
        model.set_trainable(theta);
        Tape<T> tape;
        model.register_trainable(tape);
        Tensor<T> logits = model.forward(&tape, tok_buf, RunMode::train, &dropout_rng);
        Tensor<T> loss = softmax_cross_entropy(&tape, logits, lab_buf);
        tape.backward(loss);
        std::vector<T> grads = model.gather_trainable_grads(tape);
        const auto t2 = clock::now();
        opt->accumulate_gradient(0, grads);
        opt->finish_step();
        const auto t3 = clock::now();
        if (it < warmup) continue;
        auto ms = [](auto a, auto b) {
            return std::chrono::duration<double, std::milli>(b - a).count();
        };
        smp_ms.push_back(stochastic ? ms(t0, t1) : 0.0);
        fwd_ms.push_back(ms(t1, t2));
        opt_ms.push_back(ms(t2, t3));
    }

    auto mean_std = [](const std::vector<double>& xs) {
        double mean = 0;
        for (double x : xs) mean += x;
        mean /= double(xs.size());
        double var = 0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= double(xs.size());
        return std::pair<double, double>(mean, std::sqrt(var));
    };
    TimingReport rep;
    rep.iters = iters;
    rep.trainable_params = model.trainable_count();
    rep.optimizer_name = cfg.optimizer.name;
    std::tie(rep.fwd_bwd_ms_mean, rep.fwd_bwd_ms_std) = mean_std(fwd_ms);
    std::tie(rep.sample_ms_mean, rep.sample_ms_std) = mean_std(smp_ms);
    std::tie(rep.opt_step_ms_mean, rep.opt_step_ms_std) = mean_std(opt_ms);
    return rep;
}

// Runs a function under the configured precision mode.
template <typename F>
auto with_precision(const std::string& precision, F&& f) {
    if (precision == "f64") return f(double{});
    return f(float{});
}

}  // namespace vlab
