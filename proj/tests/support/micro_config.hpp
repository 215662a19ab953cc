#pragma once

// A configuration small enough for end-to-end pipeline tests in seconds.

#include "vlab/config.hpp"

namespace vlab::testsupport {

inline ExperimentConfig micro_config() {
    ExperimentConfig cfg;
    cfg.seed = 1;
    cfg.task.vocab_size = 16;
    cfg.task.seq_len = 8;
    cfg.task.num_classes = 3;
    cfg.task.pretrain_train = 512;
    cfg.task.pretrain_val = 96;
    cfg.task.finetune_train = 48;
    cfg.task.finetune_val = 40;
    cfg.task.finetune_test = 64;
    cfg.task.shift = 0.3;
    cfg.task.signature_prob = 0.4;
    cfg.task.seed = 123;
    cfg.model.embed_dim = 16;
    cfg.model.num_heads = 2;
    cfg.model.num_layers = 1;
    cfg.model.mlp_ratio = 2;
    cfg.model.lora_rank = 2;
    cfg.model.lora_alpha = 4.0;
    cfg.model.lora_dropout = 0.1;
    cfg.pretrain.steps = 60;
    cfg.pretrain.batch_size = 8;
    cfg.pretrain.eval_interval = 30;
    cfg.finetune.steps = 40;
    cfg.finetune.batch_size = 4;
    cfg.finetune.eval_interval = 20;
    cfg.optimizer.name = "ivon";
    cfg.optimizer.ivon.lr = 0.05;
    cfg.optimizer.ivon.ess = 2000;
    cfg.optimizer.ivon.h0 = 0.1;
    cfg.optimizer.ivon.clip_radius = 1.0;
    cfg.optimizer.adamw.lr = 2e-3;
    cfg.eval.ensemble_size = 3;
    cfg.eval.mc_dropout_samples = 3;
    cfg.eval.batch_size = 32;
    cfg.eval.workers = 1;
    return cfg;
}

}  // namespace vlab::testsupport
