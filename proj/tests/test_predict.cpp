#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "vlab/predict.hpp"

using namespace vlab;

namespace {

struct Fixture {
    TransformerConfig cfg;
    TinyTransformer<float> model;
    Dataset data;

    Fixture() : cfg(make_cfg()), model(cfg) {
        RngStream init(3, "init");
        model.init_base(init);
        model.freeze_base();
        RngStream lora(4, "lora");
        model.attach_adapters(lora);
        // Nonzero adapters so the posterior actually moves the outputs.
        RngStream fill(5, "fill");
        for (auto& ref : model.trainable_params())
            for (auto& v : ref.tensor->data) v += float(fill.normal()) * 0.2f;

        data.seq_len = cfg.seq_len;
        RngStream drng(6, "data");
        const size_t n = 37;
        for (size_t i = 0; i < n; ++i) {
            for (size_t p = 0; p < cfg.seq_len; ++p)
                data.tokens.push_back(int32_t(drng.next_u64() % cfg.vocab_size));
            data.labels.push_back(int32_t(drng.next_u64() % cfg.num_classes));
        }
    }

    static TransformerConfig make_cfg() {
        TransformerConfig cfg;
        cfg.vocab_size = 12;
        cfg.seq_len = 5;
        cfg.embed_dim = 8;
        cfg.num_heads = 2;
        cfg.num_layers = 1;
        cfg.num_classes = 3;
        cfg.lora_rank = 2;
        cfg.lora_alpha = 4.0;
        cfg.lora_dropout = 0.2;
        return cfg;
    }

    PosteriorSnapshot<float> snapshot() {
        PosteriorSnapshot<float> post;
        post.mean = model.get_trainable();
        post.var.assign(post.mean.size(), 1e-3f);
        return post;
    }
};

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double out = 0;
    for (size_t i = 0; i < a.size(); ++i) out = std::max(out, std::abs(a[i] - b[i]));
    return out;
}

}  // namespace

TEST_CASE("probability averaging of one-hot members") {
    std::vector<double> accum(2, 0.0);
    average_probability_rows(accum, {1.0, 0.0}, 0.5);
    average_probability_rows(accum, {0.0, 1.0}, 0.5);
    CHECK(accum[0] == doctest::Approx(0.5));
    CHECK(accum[1] == doctest::Approx(0.5));
}

TEST_CASE("mean prediction is deterministic and bitwise repeatable") {
    Fixture fx;
    const auto params = fx.model.get_trainable();
    PredictiveBatch a = predict_at_mean(fx.model, std::span<const float>(params), fx.data);
    PredictiveBatch b = predict_at_mean(fx.model, std::span<const float>(params), fx.data);
    CHECK(a.probs == b.probs);
    CHECK(a.mode_tag() == "mean");
    for (size_t i = 0; i < a.n; ++i) {
        double sum = 0;
        for (size_t j = 0; j < a.k; ++j) sum += a.prob(i, j);
        CHECK(std::abs(sum - 1.0) < 1e-5);
    }
}

TEST_CASE("degenerate ensembles collapse onto the mean prediction") {
    Fixture fx;
    const auto post = fx.snapshot();
    PredictiveBatch at_mean =
        predict_at_mean(fx.model, std::span<const float>(post.mean), fx.data);

    SUBCASE("S=1, tau=0 is bitwise identical") {
        PredictiveBatch ens = predict_ensemble(fx.model, post, fx.data, 1, 0.0, 11, "tag");
        CHECK(ens.probs == at_mean.probs);
        CHECK(ens.mode_tag() == "ensemble");
    }
    SUBCASE("tau=0 collapses for any S") {
        PredictiveBatch ens = predict_ensemble(fx.model, post, fx.data, 7, 0.0, 11, "tag");
        CHECK(ens.probs == at_mean.probs);
    }
}

TEST_CASE("ensemble prediction contracts") {
    Fixture fx;
    const auto post = fx.snapshot();

    SUBCASE("S=0 and negative tau are rejected") {
        CHECK_THROWS_AS(predict_ensemble(fx.model, post, fx.data, 0, 1.0, 1, "t"),
                        std::invalid_argument);
        CHECK_THROWS_AS(predict_ensemble(fx.model, post, fx.data, 3, -1.0, 1, "t"),
                        std::invalid_argument);
    }
    SUBCASE("rows stay on the simplex") {
        PredictiveBatch ens = predict_ensemble(fx.model, post, fx.data, 5, 1.0, 17, "t");
        for (size_t i = 0; i < ens.n; ++i) {
            double sum = 0;
            for (size_t j = 0; j < ens.k; ++j) {
                sum += ens.prob(i, j);
                CHECK(ens.prob(i, j) >= 0.0);
                CHECK(ens.prob(i, j) <= 1.0);
            }
            CHECK(std::abs(sum - 1.0) < 1e-5);
        }
    }
    SUBCASE("reproducible for a fixed (seed, S, tau) across worker counts") {
        EvalOptions serial;
        serial.workers = 1;
        serial.batch_size = 7;
        EvalOptions threaded;
        threaded.workers = 4;
        threaded.batch_size = 7;
        PredictiveBatch a = predict_ensemble(fx.model, post, fx.data, 6, 0.8, 23, "t", serial);
        PredictiveBatch b = predict_ensemble(fx.model, post, fx.data, 6, 0.8, 23, "t", threaded);
        CHECK(a.probs == b.probs);
        PredictiveBatch c = predict_ensemble(fx.model, post, fx.data, 6, 0.8, 24, "t", serial);
        CHECK(a.probs != c.probs);  // a different seed moves the members
    }
    SUBCASE("ensemble probabilities converge to the mean as tau shrinks") {
        PredictiveBatch at_mean =
            predict_at_mean(fx.model, std::span<const float>(post.mean), fx.data);
        double prev = std::numeric_limits<double>::infinity();
        for (double tau : {1e-2, 1e-4, 1e-6}) {
            PredictiveBatch ens = predict_ensemble(fx.model, post, fx.data, 4, tau, 29, "t");
            const double dev = max_abs_diff(ens.probs, at_mean.probs);
            CHECK(dev < prev);
            prev = dev;
        }
        CHECK(prev < 1e-4);
    }
}

TEST_CASE("mc dropout prediction") {
    Fixture fx;
    const auto params = fx.model.get_trainable();

    SUBCASE("rows sum to one and runs are seed-reproducible") {
        PredictiveBatch a =
            mc_dropout_predict(fx.model, std::span<const float>(params), fx.data, 5, 31, "m");
        PredictiveBatch b =
            mc_dropout_predict(fx.model, std::span<const float>(params), fx.data, 5, 31, "m");
        CHECK(a.probs == b.probs);
        CHECK(a.mode_tag() == "mc_dropout");
        for (size_t i = 0; i < a.n; ++i) {
            double sum = 0;
            for (size_t j = 0; j < a.k; ++j) sum += a.prob(i, j);
            CHECK(std::abs(sum - 1.0) < 1e-5);
        }
        // Dropout actually perturbs members: the average differs from the point
        // prediction.
        PredictiveBatch point =
            predict_at_mean(fx.model, std::span<const float>(params), fx.data);
        CHECK(a.probs != point.probs);
    }
    SUBCASE("zero dropout probability reduces to the deterministic prediction") {
        Fixture nodrop;
        // Rebuild with dropout disabled.
        TransformerConfig cfg = Fixture::make_cfg();
        cfg.lora_dropout = 0.0;
        TinyTransformer<float> model(cfg);
        RngStream init(3, "init");
        model.init_base(init);
        model.freeze_base();
        RngStream lora(4, "lora");
        model.attach_adapters(lora);
        const auto p = model.get_trainable();
        PredictiveBatch mcd =
            mc_dropout_predict(model, std::span<const float>(p), nodrop.data, 4, 31, "m");
        PredictiveBatch point =
            predict_at_mean(model, std::span<const float>(p), nodrop.data);
        CHECK(max_abs_diff(mcd.probs, point.probs) < 1e-12);
    }
    SUBCASE("S=0 rejected") {
        CHECK_THROWS_AS(
            mc_dropout_predict(fx.model, std::span<const float>(params), fx.data, 0, 1, "m"),
            std::invalid_argument);
    }
}
