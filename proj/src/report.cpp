#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vlab/harness.hpp"

namespace vlab {

using nlohmann::json;

json RunRecord::to_json() const {
    json series_json = json::array();
    for (const SeriesEntry& e : series) {
        json j = detail::series_entry_json(e);
        j["wall_ms"] = e.wall_ms;
        series_json.push_back(j);
    }
    json out = {{"kind", kind},
                {"config_hash", config_hash},
                {"config", config},
                {"optimizer", optimizer_name},
                {"series", series_json},
                {"timings", timings},
                {"final_checkpoint", final_checkpoint},
                {"final_test", final_test},
                {"best_val", best_val},
                {"best_test", best_test}};
    if (halted_at) out["halted_at"] = *halted_at;
    return out;
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord rec;
    rec.kind = j.at("kind").get<std::string>();
    rec.config_hash = j.at("config_hash").get<std::string>();
    rec.config = j.at("config");
    rec.optimizer_name = j.at("optimizer").get<std::string>();
    for (const json& e : j.at("series")) {
        SeriesEntry entry;
        entry.step = e.at("step").get<uint64_t>();
        entry.wall_ms = e.value("wall_ms", 0.0);
        entry.split = e.at("split").get<std::string>();
        entry.mode = e.at("mode").get<std::string>();
        entry.samples = e.at("samples").get<size_t>();
        entry.tau = e.at("tau").get<double>();
        entry.metrics = MetricsReport::from_json(e);
        rec.series.push_back(std::move(entry));
    }
    rec.timings = j.at("timings");
    rec.final_checkpoint = j.at("final_checkpoint").get<std::string>();
    rec.final_test = j.at("final_test");
    rec.best_val = j.at("best_val");
    rec.best_test = j.at("best_test");
    if (j.contains("halted_at")) rec.halted_at = j.at("halted_at").get<uint64_t>();

    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  (unsigned long long)fnv1a64(rec.config.dump()));
    if (rec.config_hash != hex)
        throw std::runtime_error("run record: config hash does not match the stored config");
    return rec;
}

void RunRecord::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << to_json().dump(2) << "\n";
}

RunRecord RunRecord::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return from_json(json::parse(is));
}

json TimingReport::to_json() const {
    return {{"optimizer", optimizer_name},
            {"iters", iters},
            {"trainable_params", trainable_params},
            {"fwd_bwd_ms", {{"mean", fwd_bwd_ms_mean}, {"std", fwd_bwd_ms_std}}},
            {"sample_ms", {{"mean", sample_ms_mean}, {"std", sample_ms_std}}},
            {"opt_step_ms", {{"mean", opt_step_ms_mean}, {"std", opt_step_ms_std}}}};
}

namespace {

// "adamw"+"mean" -> AdamW point prediction, and so on. Methods are named the
// way the comparison table reads.
std::string method_name(const std::string& optimizer, const std::string& mode) {
    if (optimizer == "adamw" && mode == "mean") return "adamw";
    if (optimizer == "adamw" && mode == "mc_dropout") return "adamw+mc_dropout";
    if (optimizer == "ivon" && mode == "mean") return "ivon@mean";
    if (optimizer == "ivon" && mode == "ensemble") return "ivon";
    return optimizer + "+" + mode;
}

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

struct Agg {
    std::map<std::string, std::vector<double>> values;  // metric -> per-run values
};

}  // namespace

json aggregate_runs(const std::vector<std::filesystem::path>& run_jsons) {
    std::map<std::string, Agg> methods;
    const char* metric_names[] = {"acc", "ece", "nll", "brier"};
    size_t runs_seen = 0;
    for (const auto& path : run_jsons) {
        const RunRecord rec = RunRecord::load(path);
        if (rec.kind != "finetune" || rec.final_test.empty()) continue;
        ++runs_seen;
        for (auto it = rec.final_test.begin(); it != rec.final_test.end(); ++it) {
            const std::string method = method_name(rec.optimizer_name, it.key());
            for (const char* m : metric_names)
                methods[method].values[m].push_back(it.value().at(m).get<double>());
        }
    }
    json out = {{"runs", runs_seen}, {"methods", json::object()}};
    for (auto& [method, agg] : methods) {
        json mj = json::object();
        for (auto& [metric, vals] : agg.values) {
            double mean = 0;
            for (double v : vals) mean += v;
            mean /= double(vals.size());
            double var = 0;
            for (double v : vals) var += (v - mean) * (v - mean);
            const double se = vals.size() > 1
                                  ? std::sqrt(var / double(vals.size() - 1) / double(vals.size()))
                                  : 0.0;
            mj[metric] = {{"median", median(vals)}, {"mean", mean}, {"se", se},
                          {"n", vals.size()}};
        }
        out["methods"][method] = mj;
    }
    return out;
}

std::string format_report_table(const json& report) {
    char buf[192];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-18s %5s  %9s  %9s  %9s  %9s\n", "method", "runs", "acc",
                  "ece", "nll", "brier");
    out += buf;
    const char* order[] = {"adamw", "adamw+mc_dropout", "ivon@mean", "ivon"};
    auto emit = [&](const std::string& name, const json& mj) {
        std::snprintf(buf, sizeof(buf), "%-18s %5zu  %9.4f  %9.4f  %9.4f  %9.4f\n", name.c_str(),
                      size_t(mj.at("acc").at("n").get<size_t>()),
                      mj.at("acc").at("median").get<double>(),
                      mj.at("ece").at("median").get<double>(),
                      mj.at("nll").at("median").get<double>(),
                      mj.at("brier").at("median").get<double>());
        out += buf;
    };
    const json& methods = report.at("methods");
    for (const char* name : order)
        if (methods.contains(name)) emit(name, methods.at(name));
    for (auto it = methods.begin(); it != methods.end(); ++it) {
        if (std::find_if(std::begin(order), std::end(order), [&](const char* n) {
                return it.key() == n;
            }) == std::end(order))
            emit(it.key(), it.value());
    }
    out += "(medians over runs)\n";
    return out;
}

}  // namespace vlab
