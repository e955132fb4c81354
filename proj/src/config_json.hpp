#pragma once

// JSON forms of the trainer and scheduler configurations, shared by the
// campaign manifest and the experiment config.

#include <string>

#include "clopa/stream.hpp"
#include "clopa/trainer.hpp"
#include "json_fields.hpp"

namespace clopa::detail {

inline json to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"epochs", c.epochs},
              {"updates_per_epoch", c.updates_per_epoch},
              {"batch_size", c.batch_size},
              {"interaction_steps", c.interaction_steps},
              {"patch_extent", c.patch_extent},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"flip_augmentation", c.flip_augmentation}};
}

/// Missing keys keep the values already in base.
inline TrainConfig train_config_from(const json& j, TrainConfig base, const std::string& ctx) {
  check_keys(j, {"lr", "epochs", "updates_per_epoch", "batch_size", "interaction_steps", "patch_extent", "beta1", "beta2",
                 "adam_eps", "flip_augmentation"},
             ctx);
  base.lr = field_or(j, "lr", base.lr, ctx);
  base.epochs = field_or(j, "epochs", base.epochs, ctx);
  base.updates_per_epoch = field_or(j, "updates_per_epoch", base.updates_per_epoch, ctx);
  base.batch_size = field_or(j, "batch_size", base.batch_size, ctx);
  base.interaction_steps = field_or(j, "interaction_steps", base.interaction_steps, ctx);
  base.patch_extent = field_or(j, "patch_extent", base.patch_extent, ctx);
  base.beta1 = field_or(j, "beta1", base.beta1, ctx);
  base.beta2 = field_or(j, "beta2", base.beta2, ctx);
  base.adam_eps = field_or(j, "adam_eps", base.adam_eps, ctx);
  base.flip_augmentation = field_or(j, "flip_augmentation", base.flip_augmentation, ctx);
  return base;
}

inline json to_json(const SchedulerConfig& c) { return json{{"k_d", c.k_d}, {"k_m", c.k_m}}; }

inline SchedulerConfig scheduler_config_from(const json& j, SchedulerConfig base, const std::string& ctx) {
  check_keys(j, {"k_d", "k_m"}, ctx);
  base.k_d = field_or(j, "k_d", base.k_d, ctx);
  base.k_m = field_or(j, "k_m", base.k_m, ctx);
  return base;
}

}  // namespace clopa::detail
