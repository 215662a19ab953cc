#include "vlab/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace vlab {

namespace {

using nlohmann::json;

void collect_leaf_paths(const json& node, const std::string& prefix,
                        std::vector<std::string>& out) {
    if (node.is_object()) {
        for (auto it = node.begin(); it != node.end(); ++it)
            collect_leaf_paths(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(),
                               out);
    } else {
        out.push_back(prefix);
    }
}

json* locate(json& root, const std::string& dotted) {
    json* cur = &root;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!cur->is_object() || !cur->contains(part)) return nullptr;
        cur = &(*cur)[part];
    }
    return cur;
}

// Values from env/CLI are parsed as JSON when possible so numbers and bools
// keep their type; anything unparsable is a plain string.
json parse_scalar(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);
    return v;
}

void assign_leaf(json& root, const std::string& dotted, const std::string& text,
                 const std::string& source) {
    json* slot = locate(root, dotted);
    if (!slot)
        throw std::invalid_argument("config: unknown key '" + dotted + "' from " + source);
    json v = parse_scalar(text);
    const bool both_numeric = slot->is_number() && v.is_number();
    if (!both_numeric && slot->type() != v.type())
        throw std::invalid_argument("config: value for '" + dotted + "' from " + source +
                                    " has the wrong type");
    *slot = v;
}

}  // namespace

void merge_config(json& base, const json& patch, const std::string& prefix) {
    if (!patch.is_object())
        throw std::invalid_argument("config: expected an object at '" +
                                    (prefix.empty() ? "<root>" : prefix) + "'");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key()))
            throw std::invalid_argument("config: unknown key '" + path + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_config(slot, it.value(), path);
        } else {
            const bool both_numeric = slot.is_number() && it.value().is_number();
            if (!both_numeric && slot.type() != it.value().type())
                throw std::invalid_argument("config: value for '" + path +
                                            "' has the wrong type");
            slot = it.value();
        }
    }
}

std::string env_name_for(const std::string& dotted_path) {
    std::string out = "VLAB_";
    for (char c : dotted_path) out += (c == '.') ? '_' : char(std::toupper((unsigned char)c));
    return out;
}

uint64_t fnv1a64_bytes(const std::string& bytes) { return fnv1a64(bytes); }

json ExperimentConfig::default_json() { return ExperimentConfig{}.to_json(); }

json ExperimentConfig::to_json() const {
    return json{
        {"seed", seed},
        {"precision", precision},
        {"task",
         {{"generator", task.generator},
          {"vocab_size", task.vocab_size},
          {"seq_len", task.seq_len},
          {"num_classes", task.num_classes},
          {"pretrain_train", task.pretrain_train},
          {"pretrain_val", task.pretrain_val},
          {"finetune_train", task.finetune_train},
          {"finetune_val", task.finetune_val},
          {"finetune_test", task.finetune_test},
          {"shift", task.shift},
          {"signature_prob", task.signature_prob},
          {"seed", task.seed}}},
        {"model",
         {{"embed_dim", model.embed_dim},
          {"num_heads", model.num_heads},
          {"num_layers", model.num_layers},
          {"mlp_ratio", model.mlp_ratio},
          {"lora_targets", model.lora_targets},
          {"lora_rank", model.lora_rank},
          {"lora_alpha", model.lora_alpha},
          {"lora_dropout", model.lora_dropout}}},
        {"pretrain",
         {{"steps", pretrain.steps},
          {"batch_size", pretrain.batch_size},
          {"lr", pretrain.lr},
          {"weight_decay", pretrain.weight_decay},
          {"eval_interval", pretrain.eval_interval}}},
        {"finetune",
         {{"steps", finetune.steps},
          {"batch_size", finetune.batch_size},
          {"eval_interval", finetune.eval_interval}}},
        {"optimizer",
         {{"name", optimizer.name},
          {"adamw",
           {{"lr", optimizer.adamw.lr},
            {"beta1", optimizer.adamw.beta1},
            {"beta2", optimizer.adamw.beta2},
            {"eps", optimizer.adamw.eps},
            {"weight_decay", optimizer.adamw.weight_decay}}},
          {"ivon",
           {{"lr", optimizer.ivon.lr},
            {"beta1", optimizer.ivon.beta1},
            {"beta2", optimizer.ivon.beta2},
            {"ess", optimizer.ivon.ess},
            {"weight_decay", optimizer.ivon.weight_decay},
            {"h0", optimizer.ivon.h0},
            {"clip_radius", optimizer.ivon.clip_radius},
            {"mc_samples", optimizer.ivon.mc_samples}}}}},
        {"eval",
         {{"ensemble_size", eval.ensemble_size},
          {"tau", eval.tau},
          {"num_bins", eval.num_bins},
          {"batch_size", eval.batch_size},
          {"mc_dropout_samples", eval.mc_dropout_samples},
          {"workers", eval.workers}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    c.seed = j.at("seed").get<uint64_t>();
    c.precision = j.at("precision").get<std::string>();

    const json& t = j.at("task");
    c.task.generator = t.at("generator").get<std::string>();
    c.task.vocab_size = t.at("vocab_size").get<size_t>();
    c.task.seq_len = t.at("seq_len").get<size_t>();
    c.task.num_classes = t.at("num_classes").get<size_t>();
    c.task.pretrain_train = t.at("pretrain_train").get<size_t>();
    c.task.pretrain_val = t.at("pretrain_val").get<size_t>();
    c.task.finetune_train = t.at("finetune_train").get<size_t>();
    c.task.finetune_val = t.at("finetune_val").get<size_t>();
    c.task.finetune_test = t.at("finetune_test").get<size_t>();
    c.task.shift = t.at("shift").get<double>();
    c.task.signature_prob = t.at("signature_prob").get<double>();
    c.task.seed = t.at("seed").get<uint64_t>();

    const json& m = j.at("model");
    c.model.vocab_size = c.task.vocab_size;
    c.model.seq_len = c.task.seq_len;
    c.model.num_classes = c.task.num_classes;
    c.model.embed_dim = m.at("embed_dim").get<size_t>();
    c.model.num_heads = m.at("num_heads").get<size_t>();
    c.model.num_layers = m.at("num_layers").get<size_t>();
    c.model.mlp_ratio = m.at("mlp_ratio").get<size_t>();
    c.model.lora_targets = m.at("lora_targets").get<std::vector<std::string>>();
    c.model.lora_rank = m.at("lora_rank").get<size_t>();
    c.model.lora_alpha = m.at("lora_alpha").get<double>();
    c.model.lora_dropout = m.at("lora_dropout").get<double>();

    const json& p = j.at("pretrain");
    c.pretrain.steps = p.at("steps").get<uint64_t>();
    c.pretrain.batch_size = p.at("batch_size").get<size_t>();
    c.pretrain.lr = p.at("lr").get<double>();
    c.pretrain.weight_decay = p.at("weight_decay").get<double>();
    c.pretrain.eval_interval = p.at("eval_interval").get<uint64_t>();

    const json& f = j.at("finetune");
    c.finetune.steps = f.at("steps").get<uint64_t>();
    c.finetune.batch_size = f.at("batch_size").get<size_t>();
    c.finetune.eval_interval = f.at("eval_interval").get<uint64_t>();

    const json& o = j.at("optimizer");
    c.optimizer.name = o.at("name").get<std::string>();
    const json& aw = o.at("adamw");
    c.optimizer.adamw.lr = aw.at("lr").get<double>();
    c.optimizer.adamw.beta1 = aw.at("beta1").get<double>();
    c.optimizer.adamw.beta2 = aw.at("beta2").get<double>();
    c.optimizer.adamw.eps = aw.at("eps").get<double>();
    c.optimizer.adamw.weight_decay = aw.at("weight_decay").get<double>();
    const json& iv = o.at("ivon");
    c.optimizer.ivon.lr = iv.at("lr").get<double>();
    c.optimizer.ivon.beta1 = iv.at("beta1").get<double>();
    c.optimizer.ivon.beta2 = iv.at("beta2").get<double>();
    c.optimizer.ivon.ess = iv.at("ess").get<double>();
    c.optimizer.ivon.weight_decay = iv.at("weight_decay").get<double>();
    c.optimizer.ivon.h0 = iv.at("h0").get<double>();
    c.optimizer.ivon.clip_radius = iv.at("clip_radius").get<double>();
    c.optimizer.ivon.mc_samples = iv.at("mc_samples").get<size_t>();

    const json& e = j.at("eval");
    c.eval.ensemble_size = e.at("ensemble_size").get<size_t>();
    c.eval.tau = e.at("tau").get<double>();
    c.eval.num_bins = e.at("num_bins").get<size_t>();
    c.eval.batch_size = e.at("batch_size").get<size_t>();
    c.eval.mc_dropout_samples = e.at("mc_dropout_samples").get<size_t>();
    c.eval.workers = e.at("workers").get<int>();

    c.validate();
    return c;
}

void ExperimentConfig::validate() const {
    if (precision != "f32" && precision != "f64")
        throw std::invalid_argument("config: precision must be f32 or f64");
    if (optimizer.name != "adamw" && optimizer.name != "ivon")
        throw std::invalid_argument("config: optimizer.name must be adamw or ivon");
    if (finetune.steps == 0 || pretrain.steps == 0)
        throw std::invalid_argument("config: step counts must be positive");
    if (finetune.batch_size == 0 || pretrain.batch_size == 0 || eval.batch_size == 0)
        throw std::invalid_argument("config: batch sizes must be positive");
    if (eval.ensemble_size == 0)
        throw std::invalid_argument("config: eval.ensemble_size must be >= 1");
    if (eval.tau < 0) throw std::invalid_argument("config: eval.tau must be >= 0");
    if (eval.num_bins == 0) throw std::invalid_argument("config: eval.num_bins must be >= 1");
    task.validate();
    TransformerConfig mc = model;
    mc.vocab_size = task.vocab_size;
    mc.seq_len = task.seq_len;
    mc.num_classes = task.num_classes;
    mc.validate();
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        const std::map<std::string, std::string>& cli_overrides) {
    json merged = default_json();
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw std::invalid_argument("config: cannot open " + path.string());
        json file = json::parse(is, nullptr, true, /*ignore_comments=*/true);
        merge_config(merged, file, "");
    }
    std::vector<std::string> leaves;
    collect_leaf_paths(merged, "", leaves);
    for (const std::string& leaf : leaves) {
        if (const char* v = std::getenv(env_name_for(leaf).c_str()))
            assign_leaf(merged, leaf, v, "environment");
    }
    for (const auto& [dotted, value] : cli_overrides)
        assign_leaf(merged, dotted, value, "command line");
    return from_json(merged);
}

uint64_t ExperimentConfig::hash() const { return fnv1a64(to_json().dump()); }

std::string ExperimentConfig::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)hash());
    return buf;
}

}  // namespace vlab
