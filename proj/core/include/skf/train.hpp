#pragma once

#include <string>

#include "skf/config.hpp"
#include "skf/data.hpp"
#include "skf/vit.hpp"

namespace skf {

/// Appendix-style defaults for every run key; commands overlay file and flag
/// values on top of this.
FlatConfig default_run_config();

EncoderConfig encoder_config_from(const FlatConfig& cfg);
MAEConfig mae_config_from(const FlatConfig& cfg);

struct DataSplits {
  Dataset train;
  Dataset test;
};

/// data.source = "synthetic" generates shapes; "cifar10" reads binary batches
/// from data.dir. train_count/test_count of 0 keep the full split.
DataSplits load_data(const FlatConfig& cfg);

struct TrainResult {
  std::size_t steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  double test_accuracy = -1.0;
  std::size_t rejected_steps = 0;
  std::string checkpoint_dir;
};

/// MAE pretraining loop; writes metrics.csv, periodic checkpoints and a final
/// checkpoint under out_dir. Deterministic for a fixed seed; resuming from a
/// checkpoint reproduces the uninterrupted run's metrics exactly.
TrainResult run_pretrain(const FlatConfig& cfg, const std::string& out_dir,
                         const std::string& resume_from = "");

/// Classifier training; when checkpoint_dir is nonempty, copies the embedding
/// and the first finetune.init_layers encoder blocks from that checkpoint
/// after verifying the architecture hash.
TrainResult run_finetune(const FlatConfig& cfg,
                         const std::string& checkpoint_dir,
                         const std::string& out_dir);

/// Held-out top-1 accuracy of a classifier over a dataset split.
double evaluate_classifier(const EncoderConfig& config,
                           ClassifierParams<float>& params,
                           const Dataset& split, std::size_t batch_size);

}  // namespace skf
