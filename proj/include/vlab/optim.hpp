#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vlab/rng.hpp"

namespace vlab {

// Linear decay to zero at the end of training.
inline double linear_lr(uint64_t step, uint64_t total, double base) {
    if (total == 0) throw std::invalid_argument("linear_lr: total steps must be positive");
    if (step > total) throw std::invalid_argument("linear_lr: step " + std::to_string(step) +
                                                  " exceeds total " + std::to_string(total));
    return base * (1.0 - double(step) / double(total));
}

struct IvonHyper {
    double lr = 0.03;
    double beta1 = 0.9;           // gradient momentum
    double beta2 = 1.0 - 1e-5;    // Hessian momentum
    double ess = 1e5;             // effective sample size, lambda
    double weight_decay = 1e-4;   // prior coupling, delta
    double h0 = 0.01;             // Hessian initialization
    double clip_radius = 1e-3;    // xi
    uint64_t total_steps = 1;
    size_t mc_samples = 1;

    void validate() const {
        if (!(lr > 0)) throw std::invalid_argument("ivon: lr must be positive");
        if (!(beta1 >= 0 && beta1 < 1)) throw std::invalid_argument("ivon: beta1 must be in [0, 1)");
        if (!(beta2 > 0 && beta2 < 1)) throw std::invalid_argument("ivon: beta2 must be in (0, 1)");
        if (!(ess > 0)) throw std::invalid_argument("ivon: ess must be positive");
        if (!(weight_decay >= 0)) throw std::invalid_argument("ivon: weight_decay must be >= 0");
        if (!(h0 > 0)) throw std::invalid_argument("ivon: h0 must be positive");
        if (!(weight_decay + h0 > 0)) throw std::invalid_argument("ivon: h0 + weight_decay must be positive");
        if (!(clip_radius > 0)) throw std::invalid_argument("ivon: clip_radius must be positive");
        if (mc_samples == 0) throw std::invalid_argument("ivon: mc_samples must be >= 1");
    }

    // v0 = 1 / (lambda * delta); only defined for a proper prior.
    double prior_variance() const {
        if (!(weight_decay > 0))
            throw std::invalid_argument("ivon: prior variance needs weight_decay > 0");
        return 1.0 / (ess * weight_decay);
    }
};

struct AdamwHyper {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    uint64_t total_steps = 1;

    void validate() const {
        if (!(lr > 0)) throw std::invalid_argument("adamw: lr must be positive");
        if (!(beta1 >= 0 && beta1 < 1)) throw std::invalid_argument("adamw: beta1 must be in [0, 1)");
        if (!(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("adamw: beta2 must be in [0, 1)");
        if (!(eps > 0)) throw std::invalid_argument("adamw: eps must be positive");
        if (!(weight_decay >= 0)) throw std::invalid_argument("adamw: weight_decay must be >= 0");
    }
};

// Diagonal Gaussian over the trainable parameters: mean m, Hessian estimate h,
// gradient momentum g, with variance v = 1 / (lambda * (h + delta)).
template <typename T>
struct GaussianPosterior {
    std::vector<T> m, h, g;
    uint64_t t = 0;
    IvonHyper hyper;

    std::vector<T> variance() const {
        std::vector<T> v(h.size());
        const double lam = hyper.ess, del = hyper.weight_decay;
        for (size_t i = 0; i < h.size(); ++i) v[i] = T(1.0 / (lam * (double(h[i]) + del)));
        return v;
    }
};

// Scalar sampling kernel shared by train- and eval-time draws.
template <typename T>
T perturbed_param(T mean, T var, double tau, double eps) {
    return T(double(mean) + std::sqrt(tau * double(var)) * eps);
}

// Per-parameter stochastic diagonal Hessian estimate, ghat * (theta - m) / v.
template <typename T>
T hessian_estimate(T grad, T theta, T mean, double lambda, T h, double delta) {
    return T(double(grad) * (double(theta) - double(mean)) * lambda * (double(h) + delta));
}

// KL(q || p) between the diagonal Gaussian (m, v) and N(0, v0 I).
template <typename T>
double kl_to_prior(std::span<const T> m, std::span<const T> v, double v0) {
    if (!(v0 > 0)) throw std::invalid_argument("kl_to_prior: v0 must be positive");
    double acc = 0;
    for (size_t i = 0; i < m.size(); ++i) {
        const double vi = double(v[i]), mi = double(m[i]);
        acc += (vi + mi * mi) / v0 - 1.0 - std::log(vi / v0);
    }
    return 0.5 * acc;
}

template <typename T>
double kl_to_prior(const GaussianPosterior<T>& post, double v0) {
    const std::vector<T> v = post.variance();
    return kl_to_prior<T>(post.m, v, v0);
}

// Immutable copy of (m, v) handed to evaluation workers.
template <typename T>
struct PosteriorSnapshot {
    std::vector<T> mean;
    std::vector<T> var;
};

// The one interface the training loop sees; swapping AdamW for IVON changes the
// config field and nothing else. A step runs as:
//   for s in [0, samples_per_step): grad_s = eval(sample_parameters(s, rng));
//                                   accumulate_gradient(s, grad_s)
//   finish_step()
template <typename T>
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual std::string_view name() const = 0;
    virtual size_t size() const = 0;
    virtual uint64_t step_count() const = 0;
    virtual size_t samples_per_step() const { return 1; }
    // True when the gradient is evaluated at a random draw rather than the mean.
    virtual bool stochastic_step() const = 0;
    virtual std::span<const T> sample_parameters(size_t sample_index, RngStream& rng) = 0;
    virtual void accumulate_gradient(size_t sample_index, std::span<const T> grad) = 0;
    virtual void finish_step() = 0;
    virtual std::span<const T> mean() const = 0;
    virtual void set_mean(std::span<const T> values) = 0;
    virtual bool has_posterior() const = 0;
    virtual PosteriorSnapshot<T> posterior_snapshot() const {
        throw std::logic_error("optimizer has no posterior");
    }
    // Learning rate the next finish_step() will apply.
    virtual double scheduled_lr() const = 0;
    // Checkpoint surface: named state arrays plus hyperparameters and step.
    virtual std::vector<std::pair<std::string, std::vector<T>*>> state_arrays() = 0;
    virtual nlohmann::json hyper_json() const = 0;
    virtual void set_step_count(uint64_t t) = 0;
};

struct TrainingInstabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
class IvonOptimizer final : public Optimizer<T> {
public:
    IvonOptimizer(size_t n, IvonHyper hyper) {
        hyper.validate();
        post_.hyper = hyper;
        post_.m.assign(n, T(0));
        post_.h.assign(n, T(hyper.h0));
        post_.g.assign(n, T(0));
        theta_.assign(n, T(0));
        grad_sum_.assign(n, 0.0);
        hess_sum_.assign(n, 0.0);
    }

    std::string_view name() const override { return "ivon"; }
    size_t size() const override { return post_.m.size(); }
    uint64_t step_count() const override { return post_.t; }
    void set_step_count(uint64_t t) override { post_.t = t; }
    size_t samples_per_step() const override { return post_.hyper.mc_samples; }
    bool stochastic_step() const override { return true; }
    bool has_posterior() const override { return true; }

    const GaussianPosterior<T>& posterior() const { return post_; }
    GaussianPosterior<T>& posterior() { return post_; }

    std::vector<T> variance() const { return post_.variance(); }

    PosteriorSnapshot<T> posterior_snapshot() const override {
        return {post_.m, post_.variance()};
    }

    double scheduled_lr() const override {
        return linear_lr(std::min(post_.t + 1, post_.hyper.total_steps), post_.hyper.total_steps,
                         post_.hyper.lr);
    }

    // theta ~ N(m, diag(tau * v)); tau = 0 returns the mean bitwise.
    void sample_posterior(double tau, RngStream& rng, std::span<T> out) const {
        if (tau < 0) throw std::invalid_argument("sample_posterior: tau must be >= 0");
        if (out.size() != post_.m.size())
            throw std::invalid_argument("sample_posterior: output size mismatch");
        if (tau == 0.0) {
            std::copy(post_.m.begin(), post_.m.end(), out.begin());
            return;
        }
        const double lam = post_.hyper.ess, del = post_.hyper.weight_decay;
        for (size_t i = 0; i < out.size(); ++i) {
            const T v = T(1.0 / (lam * (double(post_.h[i]) + del)));
            out[i] = perturbed_param(post_.m[i], v, tau, rng.normal());
        }
    }

    std::span<const T> sample_parameters(size_t sample_index, RngStream& rng) override {
        if (sample_index == 0) {
            std::fill(grad_sum_.begin(), grad_sum_.end(), 0.0);
            std::fill(hess_sum_.begin(), hess_sum_.end(), 0.0);
            samples_seen_ = 0;
        }
        sample_posterior(1.0, rng, theta_);
        return theta_;
    }

    void accumulate_gradient(size_t, std::span<const T> grad) override {
        if (grad.size() != size())
            throw std::invalid_argument("accumulate_gradient: size mismatch");
        const double lam = post_.hyper.ess, del = post_.hyper.weight_decay;
        for (size_t i = 0; i < grad.size(); ++i) {
            grad_sum_[i] += double(grad[i]);
            hess_sum_[i] += double(
                hessian_estimate(grad[i], theta_[i], post_.m[i], lam, post_.h[i], del));
        }
        ++samples_seen_;
    }

    // The update recurrence, in order: gradient EMA, Hessian EMA with the
    // second-order positivity correction, bias-corrected and clipped natural
    // step on the mean under the scheduled learning rate.
    void finish_step() override {
        if (samples_seen_ == 0) throw std::logic_error("finish_step: no gradient accumulated");
        const IvonHyper& hp = post_.hyper;
        const double b1 = hp.beta1, b2 = hp.beta2, del = hp.weight_decay;
        const double one_m_b2 = 1.0 - b2;
        const double inv_s = 1.0 / double(samples_seen_);
        const size_t n = size();
        for (size_t i = 0; i < n; ++i) {
            const double ghat = grad_sum_[i] * inv_s;
            const double hhat = hess_sum_[i] * inv_s;
            post_.g[i] = T(b1 * double(post_.g[i]) + (1.0 - b1) * ghat);
            const double h_old = double(post_.h[i]);
            const double diff = hhat - h_old;
            post_.h[i] =
                T(h_old + one_m_b2 * diff + 0.5 * one_m_b2 * one_m_b2 * diff * diff / (h_old + del));
        }
        post_.t += 1;
        const double bias = 1.0 - std::pow(b1, double(post_.t));
        const double alpha_t = linear_lr(post_.t, hp.total_steps, hp.lr);
        const double xi = hp.clip_radius;
        for (size_t i = 0; i < n; ++i) {
            const double hd = double(post_.h[i]) + del;
            if (!(hd > 0))
                throw TrainingInstabilityError(
                    "ivon: h + weight_decay became non-positive at step " +
                    std::to_string(post_.t));
            const double gbar = double(post_.g[i]) / bias;
            const double dir = std::clamp((gbar + del * double(post_.m[i])) / hd, -xi, xi);
            post_.m[i] = T(double(post_.m[i]) - alpha_t * dir);
        }
        samples_seen_ = 0;
    }

    std::span<const T> mean() const override { return post_.m; }
    void set_mean(std::span<const T> values) override {
        if (values.size() != size()) throw std::invalid_argument("set_mean: size mismatch");
        std::copy(values.begin(), values.end(), post_.m.begin());
    }

    std::vector<std::pair<std::string, std::vector<T>*>> state_arrays() override {
        return {{"m", &post_.m}, {"h", &post_.h}, {"g", &post_.g}};
    }

    nlohmann::json hyper_json() const override {
        const IvonHyper& hp = post_.hyper;
        return {{"name", "ivon"},          {"lr", hp.lr},
                {"beta1", hp.beta1},       {"beta2", hp.beta2},
                {"ess", hp.ess},           {"weight_decay", hp.weight_decay},
                {"h0", hp.h0},             {"clip_radius", hp.clip_radius},
                {"total_steps", hp.total_steps}, {"mc_samples", hp.mc_samples},
                {"step", post_.t}};
    }

private:
    GaussianPosterior<T> post_;
    std::vector<T> theta_;
    std::vector<double> grad_sum_, hess_sum_;
    size_t samples_seen_ = 0;
};

template <typename T>
class AdamwOptimizer final : public Optimizer<T> {
public:
    AdamwOptimizer(size_t n, AdamwHyper hyper) : hyper_(hyper) {
        hyper_.validate();
        params_.assign(n, T(0));
        exp_avg_.assign(n, T(0));
        exp_avg_sq_.assign(n, T(0));
        grad_sum_.assign(n, 0.0);
    }

    std::string_view name() const override { return "adamw"; }
    size_t size() const override { return params_.size(); }
    uint64_t step_count() const override { return t_; }
    void set_step_count(uint64_t t) override { t_ = t; }
    bool stochastic_step() const override { return false; }
    bool has_posterior() const override { return false; }

    double scheduled_lr() const override {
        return linear_lr(std::min(t_ + 1, hyper_.total_steps), hyper_.total_steps, hyper_.lr);
    }

    std::span<const T> sample_parameters(size_t sample_index, RngStream&) override {
        if (sample_index == 0) {
            std::fill(grad_sum_.begin(), grad_sum_.end(), 0.0);
            samples_seen_ = 0;
        }
        return params_;
    }

    void accumulate_gradient(size_t, std::span<const T> grad) override {
        if (grad.size() != size())
            throw std::invalid_argument("accumulate_gradient: size mismatch");
        for (size_t i = 0; i < grad.size(); ++i) grad_sum_[i] += double(grad[i]);
        ++samples_seen_;
    }

    // Decoupled-weight-decay Adam with bias correction and the shared linear
    // schedule.
    void finish_step() override {
        if (samples_seen_ == 0) throw std::logic_error("finish_step: no gradient accumulated");
        const double b1 = hyper_.beta1, b2 = hyper_.beta2;
        const double inv_s = 1.0 / double(samples_seen_);
        t_ += 1;
        const double bias1 = 1.0 - std::pow(b1, double(t_));
        const double bias2 = 1.0 - std::pow(b2, double(t_));
        const double alpha_t = linear_lr(t_, hyper_.total_steps, hyper_.lr);
        for (size_t i = 0; i < params_.size(); ++i) {
            const double g = grad_sum_[i] * inv_s;
            exp_avg_[i] = T(b1 * double(exp_avg_[i]) + (1.0 - b1) * g);
            exp_avg_sq_[i] = T(b2 * double(exp_avg_sq_[i]) + (1.0 - b2) * g * g);
            const double mhat = double(exp_avg_[i]) / bias1;
            const double vhat = double(exp_avg_sq_[i]) / bias2;
            const double update = mhat / (std::sqrt(vhat) + hyper_.eps);
            params_[i] = T(double(params_[i]) - alpha_t * (update + hyper_.weight_decay * double(params_[i])));
        }
        samples_seen_ = 0;
    }

    std::span<const T> mean() const override { return params_; }
    void set_mean(std::span<const T> values) override {
        if (values.size() != size()) throw std::invalid_argument("set_mean: size mismatch");
        std::copy(values.begin(), values.end(), params_.begin());
    }

    std::vector<std::pair<std::string, std::vector<T>*>> state_arrays() override {
        return {{"m", &params_}, {"exp_avg", &exp_avg_}, {"exp_avg_sq", &exp_avg_sq_}};
    }

    nlohmann::json hyper_json() const override {
        return {{"name", "adamw"},   {"lr", hyper_.lr},
                {"beta1", hyper_.beta1}, {"beta2", hyper_.beta2},
                {"eps", hyper_.eps},     {"weight_decay", hyper_.weight_decay},
                {"total_steps", hyper_.total_steps}, {"step", t_}};
    }

private:
    AdamwHyper hyper_;
    std::vector<T> params_, exp_avg_, exp_avg_sq_;
    std::vector<double> grad_sum_;
    uint64_t t_ = 0;
    size_t samples_seen_ = 0;
};

}  // namespace vlab
