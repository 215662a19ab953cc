#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace vlab {

enum class PredictMode { mean, ensemble, mc_dropout };

std::string to_string(PredictMode mode);

// Class-probability rows for one evaluation pass, tagged with how they were
// produced. Probabilities are kept in double so metric math is precision-mode
// independent.
struct PredictiveBatch {
    size_t n = 0;
    size_t k = 0;
    std::vector<double> probs;    // n * k, rows on the simplex
    std::vector<int32_t> labels;  // n
    PredictMode mode = PredictMode::mean;
    size_t samples = 1;
    double tau = 0.0;

    double prob(size_t i, size_t j) const { return probs[i * k + j]; }
    std::string mode_tag() const { return to_string(mode); }
};

struct ReliabilityBin {
    size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double ece = 0.0;
    double nll = 0.0;
    double brier = 0.0;
    size_t n = 0;
    std::vector<ReliabilityBin> bins;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

// argmax with ties broken toward the lowest class index.
size_t predicted_class(const PredictiveBatch& pred, size_t row);

double accuracy(const PredictiveBatch& pred);
double ece(const PredictiveBatch& pred, size_t num_bins = 15);
double nll(const PredictiveBatch& pred);
double brier(const PredictiveBatch& pred);

MetricsReport compute_metrics(const PredictiveBatch& pred, size_t num_bins = 15);

}  // namespace vlab
