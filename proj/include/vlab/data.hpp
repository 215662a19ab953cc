#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vlab/rng.hpp"

namespace vlab {

// Synthetic sequence-classification family. Each class owns a contiguous block
// of "signature" tokens; a sequence position emits a signature token with
// probability signature_prob and a uniform token otherwise. The finetuning
// variant redirects each signature draw to the next class's block with
// probability `shift`, so shift = 0 reproduces the pretraining distribution and
// larger values move the class-conditional token distributions.
struct TaskSpec {
    std::string generator = "clustered_tokens";
    size_t vocab_size = 64;
    size_t seq_len = 32;
    size_t num_classes = 4;
    size_t pretrain_train = 50000;
    size_t pretrain_val = 2000;
    size_t finetune_train = 200;
    size_t finetune_val = 500;
    size_t finetune_test = 2000;
    double shift = 0.35;
    double signature_prob = 0.35;
    uint64_t seed = 9001;

    void validate() const;
};

struct Dataset {
    size_t seq_len = 0;
    std::vector<int32_t> tokens;  // size() * seq_len, row-major
    std::vector<int32_t> labels;

    size_t size() const { return labels.size(); }
    std::span<const int32_t> sequence(size_t i) const {
        return {tokens.data() + i * seq_len, seq_len};
    }
};

struct TaskData {
    Dataset pretrain_train;
    Dataset pretrain_val;
    Dataset finetune_train;
    Dataset finetune_val;
    Dataset finetune_test;
};

// Draws one (sequence, label) pair; consumes the stream in a fixed order.
void sample_example(RngStream& rng, const TaskSpec& spec, double shift,
                    std::span<int32_t> tokens_out, int32_t& label_out);

Dataset sample_dataset(const TaskSpec& spec, std::string_view split_name, size_t count,
                       double shift);

TaskData generate_task(const TaskSpec& spec);

}  // namespace vlab
