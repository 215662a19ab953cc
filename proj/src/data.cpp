#include "vlab/data.hpp"

#include <stdexcept>

namespace vlab {

void TaskSpec::validate() const {
    if (generator != "clustered_tokens")
        throw std::invalid_argument("task: unknown generator '" + generator + "'");
    if (num_classes < 2) throw std::invalid_argument("task: need at least 2 classes");
    if (vocab_size < num_classes)
        throw std::invalid_argument("task: vocab_size must be >= num_classes");
    if (seq_len == 0) throw std::invalid_argument("task: seq_len must be positive");
    if (pretrain_train == 0 || pretrain_val == 0 || finetune_train == 0 || finetune_val == 0 ||
        finetune_test == 0)
        throw std::invalid_argument("task: split sizes must be >= 1");
    if (shift < 0.0 || shift > 1.0) throw std::invalid_argument("task: shift must be in [0, 1]");
    if (signature_prob < 0.0 || signature_prob >= 1.0)
        throw std::invalid_argument("task: signature_prob must be in [0, 1)");
}

void sample_example(RngStream& rng, const TaskSpec& spec, double shift,
                    std::span<int32_t> tokens_out, int32_t& label_out) {
    const size_t block = spec.vocab_size / spec.num_classes;
    const int32_t label = int32_t(rng.next_u64() % spec.num_classes);
    label_out = label;
    for (size_t p = 0; p < spec.seq_len; ++p) {
        if (rng.uniform() < spec.signature_prob) {
            size_t cls = size_t(label);
            if (shift > 0.0 && rng.uniform() < shift) cls = (cls + 1) % spec.num_classes;
            tokens_out[p] = int32_t(cls * block + rng.next_u64() % block);
        } else {
            tokens_out[p] = int32_t(rng.next_u64() % spec.vocab_size);
        }
    }
}

Dataset sample_dataset(const TaskSpec& spec, std::string_view split_name, size_t count,
                       double shift) {
    Dataset out;
    out.seq_len = spec.seq_len;
    out.tokens.resize(count * spec.seq_len);
    out.labels.resize(count);
    RngStream rng(spec.seed, std::string("task/") + std::string(split_name));
    for (size_t i = 0; i < count; ++i)
        sample_example(rng, spec, shift, {out.tokens.data() + i * spec.seq_len, spec.seq_len},
                       out.labels[i]);
    return out;
}

TaskData generate_task(const TaskSpec& spec) {
    spec.validate();
    TaskData data;
    data.pretrain_train = sample_dataset(spec, "pretrain_train", spec.pretrain_train, 0.0);
    data.pretrain_val = sample_dataset(spec, "pretrain_val", spec.pretrain_val, 0.0);
    data.finetune_train = sample_dataset(spec, "finetune_train", spec.finetune_train, spec.shift);
    data.finetune_val = sample_dataset(spec, "finetune_val", spec.finetune_val, spec.shift);
    data.finetune_test = sample_dataset(spec, "finetune_test", spec.finetune_test, spec.shift);
    return data;
}

}  // namespace vlab
