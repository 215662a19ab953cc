#pragma once

#include <string>
#include <vector>

#include "vlab/data.hpp"
#include "vlab/metrics.hpp"
#include "vlab/model.hpp"
#include "vlab/optim.hpp"
#include "vlab/threads.hpp"

namespace vlab {

struct EvalOptions {
    size_t batch_size = 64;
    int workers = 0;  // 0 = auto
};

// Convex combination of probability rows stays on the simplex; members are
// accumulated in a fixed order so results do not depend on scheduling.
inline void average_probability_rows(std::vector<double>& accum,
                                     const std::vector<double>& member, double weight) {
    for (size_t i = 0; i < accum.size(); ++i) accum[i] += weight * member[i];
}

namespace detail {

// Forward the whole dataset in eval batches and write probability rows.
// Batch b uses rng stream (seed, tag, b) when dropout is active; the chunk
// grid is fixed by batch_size, so any worker count produces the same bytes.
template <typename T>
void forward_probs(const TinyTransformer<T>& model, const Dataset& data, RunMode mode,
                   uint64_t seed, const std::string& tag, const EvalOptions& opts,
                   std::vector<double>& rows_out) {
    const size_t k = model.config().num_classes;
    const size_t bs = std::max<size_t>(1, opts.batch_size);
    const size_t num_batches = (data.size() + bs - 1) / bs;
    rows_out.assign(data.size() * k, 0.0);
    parallel_chunks(num_batches, resolve_workers(opts.workers), [&](size_t b) {
        const size_t begin = b * bs;
        const size_t end = std::min(begin + bs, data.size());
        RngStream drop_rng(seed, tag, b);
        std::span<const int32_t> tokens{data.tokens.data() + begin * data.seq_len,
                                        (end - begin) * data.seq_len};
        Tensor<T> probs = softmax_rows(
            model.forward(nullptr, tokens, mode, mode == RunMode::train ? &drop_rng : nullptr));
        for (size_t i = 0; i < end - begin; ++i)
            for (size_t j = 0; j < k; ++j)
                rows_out[(begin + i) * k + j] = double(probs.at(i, j));
    });
}

}  // namespace detail

// Deterministic prediction with the model parameters set to the given point
// (the posterior mean for IVON, the trained weights for AdamW).
template <typename T>
PredictiveBatch predict_at_mean(TinyTransformer<T>& model, std::span<const T> params,
                                const Dataset& data, const EvalOptions& opts = {}) {
    model.set_trainable(params);
    PredictiveBatch out;
    out.n = data.size();
    out.k = model.config().num_classes;
    out.labels = data.labels;
    out.mode = PredictMode::mean;
    detail::forward_probs(model, data, RunMode::eval, 0, "", opts, out.probs);
    return out;
}

// Average of softmax probabilities over S parameter draws from
// N(mean, diag(tau * var)). tau = 0 collapses every member onto the mean, so
// the result is the mean prediction for any S. Adapter dropout stays off; the
// only noise source is the parameter draw.
template <typename T>
PredictiveBatch predict_ensemble(TinyTransformer<T>& model, const PosteriorSnapshot<T>& post,
                                 const Dataset& data, size_t samples, double tau, uint64_t seed,
                                 const std::string& stream_tag, const EvalOptions& opts = {}) {
    if (samples == 0) throw std::invalid_argument("predict_ensemble: need at least one sample");
    if (tau < 0) throw std::invalid_argument("predict_ensemble: tau must be >= 0");
    if (post.mean.size() != model.trainable_count())
        throw std::invalid_argument("predict_ensemble: posterior size mismatch");

    PredictiveBatch out;
    out.n = data.size();
    out.k = model.config().num_classes;
    out.labels = data.labels;
    out.mode = PredictMode::ensemble;
    out.samples = samples;
    out.tau = tau;

    if (tau == 0.0) {
        model.set_trainable(post.mean);
        detail::forward_probs(model, data, RunMode::eval, 0, "", opts, out.probs);
        return out;
    }

    out.probs.assign(out.n * out.k, 0.0);
    std::vector<T> theta(post.mean.size());
    std::vector<double> member;
    const double w = 1.0 / double(samples);
    for (size_t s = 0; s < samples; ++s) {
        RngStream member_rng(seed, stream_tag, s);
        for (size_t i = 0; i < theta.size(); ++i)
            theta[i] = perturbed_param(post.mean[i], post.var[i], tau, member_rng.normal());
        model.set_trainable(theta);
        detail::forward_probs(model, data, RunMode::eval, 0, "", opts, member);
        average_probability_rows(out.probs, member, w);
    }
    return out;
}

// Test-time dropout ensembling: S stochastic forward passes at fixed point
// parameters with train-mode dropout, probabilities averaged.
template <typename T>
PredictiveBatch mc_dropout_predict(TinyTransformer<T>& model, std::span<const T> params,
                                   const Dataset& data, size_t samples, uint64_t seed,
                                   const std::string& stream_tag, const EvalOptions& opts = {}) {
    if (samples == 0) throw std::invalid_argument("mc_dropout_predict: need at least one sample");
    model.set_trainable(params);
    PredictiveBatch out;
    out.n = data.size();
    out.k = model.config().num_classes;
    out.labels = data.labels;
    out.mode = PredictMode::mc_dropout;
    out.samples = samples;
    out.probs.assign(out.n * out.k, 0.0);
    std::vector<double> member;
    const double w = 1.0 / double(samples);
    for (size_t s = 0; s < samples; ++s) {
        detail::forward_probs(model, data, RunMode::train, seed,
                              stream_tag + "/member" + std::to_string(s), opts, member);
        average_probability_rows(out.probs, member, w);
    }
    return out;
}

}  // namespace vlab
