#include "vlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vlab {

namespace {

constexpr double kProbFloor = 1e-12;

void require_nonempty(const PredictiveBatch& pred) {
    if (pred.n == 0) throw std::invalid_argument("metrics: empty prediction batch");
    if (pred.probs.size() != pred.n * pred.k || pred.labels.size() != pred.n)
        throw std::invalid_argument("metrics: inconsistent batch extents");
}

size_t bin_index(double confidence, size_t num_bins) {
    const auto b = size_t(confidence * double(num_bins));
    return std::min(b, num_bins - 1);  // confidence 1.0 lands in the last bin
}

}  // namespace

std::string to_string(PredictMode mode) {
    switch (mode) {
        case PredictMode::mean: return "mean";
        case PredictMode::ensemble: return "ensemble";
        case PredictMode::mc_dropout: return "mc_dropout";
    }
    return "unknown";
}

size_t predicted_class(const PredictiveBatch& pred, size_t row) {
    size_t best = 0;
    for (size_t j = 1; j < pred.k; ++j)
        if (pred.prob(row, j) > pred.prob(row, best)) best = j;
    return best;
}

double accuracy(const PredictiveBatch& pred) {
    require_nonempty(pred);
    size_t correct = 0;
    for (size_t i = 0; i < pred.n; ++i)
        if (predicted_class(pred, i) == size_t(pred.labels[i])) ++correct;
    return double(correct) / double(pred.n);
}

double ece(const PredictiveBatch& pred, size_t num_bins) {
    require_nonempty(pred);
    if (num_bins == 0) throw std::invalid_argument("ece: num_bins must be >= 1");
    std::vector<double> conf_sum(num_bins, 0.0), acc_sum(num_bins, 0.0);
    std::vector<size_t> count(num_bins, 0);
    for (size_t i = 0; i < pred.n; ++i) {
        const size_t cls = predicted_class(pred, i);
        const double conf = pred.prob(i, cls);
        const size_t b = bin_index(conf, num_bins);
        conf_sum[b] += conf;
        acc_sum[b] += (cls == size_t(pred.labels[i])) ? 1.0 : 0.0;
        count[b] += 1;
    }
    double out = 0.0;
    for (size_t b = 0; b < num_bins; ++b) {
        if (count[b] == 0) continue;
        const double w = double(count[b]) / double(pred.n);
        out += w * std::abs(acc_sum[b] / double(count[b]) - conf_sum[b] / double(count[b]));
    }
    return out;
}

double nll(const PredictiveBatch& pred) {
    require_nonempty(pred);
    double total = 0.0;
    for (size_t i = 0; i < pred.n; ++i)
        total += -std::log(std::max(pred.prob(i, size_t(pred.labels[i])), kProbFloor));
    return total / double(pred.n);
}

double brier(const PredictiveBatch& pred) {
    require_nonempty(pred);
    double total = 0.0;
    for (size_t i = 0; i < pred.n; ++i) {
        for (size_t j = 0; j < pred.k; ++j) {
            const double y = (j == size_t(pred.labels[i])) ? 1.0 : 0.0;
            const double d = pred.prob(i, j) - y;
            total += d * d;
        }
    }
    return total / double(pred.n);
}

MetricsReport compute_metrics(const PredictiveBatch& pred, size_t num_bins) {
    require_nonempty(pred);
    if (num_bins == 0) throw std::invalid_argument("compute_metrics: num_bins must be >= 1");
    MetricsReport rep;
    rep.n = pred.n;
    rep.accuracy = accuracy(pred);
    rep.ece = ece(pred, num_bins);
    rep.nll = nll(pred);
    rep.brier = brier(pred);
    rep.bins.assign(num_bins, ReliabilityBin{});
    std::vector<double> conf_sum(num_bins, 0.0), acc_sum(num_bins, 0.0);
    for (size_t i = 0; i < pred.n; ++i) {
        const size_t cls = predicted_class(pred, i);
        const double conf = pred.prob(i, cls);
        const size_t b = bin_index(conf, num_bins);
        conf_sum[b] += conf;
        acc_sum[b] += (cls == size_t(pred.labels[i])) ? 1.0 : 0.0;
        rep.bins[b].count += 1;
    }
    for (size_t b = 0; b < num_bins; ++b) {
        if (rep.bins[b].count == 0) continue;
        rep.bins[b].mean_confidence = conf_sum[b] / double(rep.bins[b].count);
        rep.bins[b].mean_accuracy = acc_sum[b] / double(rep.bins[b].count);
    }
    return rep;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json bins_json = nlohmann::json::array();
    for (const auto& b : bins)
        bins_json.push_back(
            {{"count", b.count}, {"conf", b.mean_confidence}, {"acc", b.mean_accuracy}});
    return {{"acc", accuracy}, {"ece", ece},        {"nll", nll},
            {"brier", brier},  {"n", n},            {"bins", bins_json}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport rep;
    rep.accuracy = j.at("acc").get<double>();
    rep.ece = j.at("ece").get<double>();
    rep.nll = j.at("nll").get<double>();
    rep.brier = j.at("brier").get<double>();
    rep.n = j.at("n").get<size_t>();
    for (const auto& b : j.at("bins"))
        rep.bins.push_back({b.at("count").get<size_t>(), b.at("conf").get<double>(),
                            b.at("acc").get<double>()});
    return rep;
}

}  // namespace vlab
