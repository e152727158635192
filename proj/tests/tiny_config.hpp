#pragma once

#include "tiger/config.hpp"

namespace testing_support {

/// 32×32 toy run small enough for many steps per second.
inline tiger::RunConfig tiny_run_config(const std::string& dtype = "float64") {
  using namespace tiger;
  auto cfg = toy_config();
  cfg.generator.n_blocks = 3;
  cfg.generator.resolution = 32;
  cfg.generator.base_channels = 16;
  cfg.generator.affine_hidden = 16;
  cfg.generator.d_text = 32;
  cfg.data.resolution = 32;
  cfg.data.n_train = 40;
  cfg.data.n_test = 40;
  cfg.data.text_encoder.dim = 32;
  for (auto& s : cfg.sub_discriminators) {
    s.backbone.input_resolution = 32;
    s.assessor_channels = 16;
  }
  cfg.train.batch_size = 4;
  cfg.train.max_steps = 3;
  cfg.train.checkpoint_every = 0;
  cfg.train.eval_every = 0;
  cfg.train.dtype = dtype;
  cfg.eval.fid_samples = 40;
  cfg.eval.rprecision_samples = 20;
  cfg.eval.r = 5;
  cfg.validate();
  return cfg;
}

}  // namespace testing_support
