#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fnri/dataset.hpp"
#include "fnri/model.hpp"
#include "fnri/objective.hpp"

#include <json.hpp>

namespace fnri::train {

enum class TrainMode { learned, supervised, truegraph };

std::string mode_name(TrainMode m);
TrainMode parse_mode(const std::string& name);

// Loss became non-finite, or another unrecoverable numeric failure.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int64_t epochs = 500;
  int64_t batch = 128;
  double lr = 5e-4;
  double lr_decay = 0.5;
  int64_t lr_decay_every = 200;
  double tau = 0.5;
  int64_t m_teacher = 10;
  double sigma2 = 5e-5;
  double dropout = 0.5;  // supervised mode only
  double l2 = 0.0;       // sfNRI only
  int64_t hidden = 256;
  bool hard_non_edge = true;
  bool straight_through = false;  // soft concrete samples by default
  uint64_t seed = 1;

  nlohmann::json to_json() const;
};

struct EpochMetrics {
  int64_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_recon_10;
  std::optional<double> val_edge_acc;
  double lr = 0.0;
};

struct TrainResult {
  double best_metric = 0.0;
  int64_t best_epoch = -1;
  std::string criterion;
  std::vector<EpochMetrics> log;
};

// --- ground-truth label plumbing -------------------------------------------

// Per ground-truth layer, the label of every ordered pair in the batch
// (row-major over batch then pair order).
std::vector<std::vector<int64_t>> batch_layer_labels(const data::Dataset& ds,
                                                     const std::vector<int64_t>& idx);

// Mixed-radix combined label per pair; first layer most significant.
std::vector<int64_t> combined_labels(const std::vector<std::vector<int64_t>>& layer_labels);

// Ground-truth edge-type vectors in the given scheme's layout: one-hot per
// layer (NRI uses the combined label; sfNRI uses the raw 0/1 labels).
Tensor true_edge_vectors(const model::FactorisationScheme& scheme,
                         const std::vector<std::vector<int64_t>>& layer_labels);

// Stacks truth states 2..T as [(T-1)*B*N, D], matching the concatenation
// order of teacher-forced / free rollout predictions.
Tensor rollout_targets(const Tensor& truth);

// --- checkpointed model -----------------------------------------------------

// An encoder/decoder pair rebuilt from (or destined for) a checkpoint.
struct TrainedModel {
  model::FactorisationScheme scheme;
  int64_t n_particles = 5;
  int64_t feat_dim = 4;
  int64_t t_enc = 50;
  int64_t hidden = 256;
  double sigma2 = 5e-5;
  double tau = 0.5;
  TrainMode mode = TrainMode::learned;
  std::string system;
  ad::ParameterStore store;
  std::unique_ptr<model::Encoder> encoder;
  std::unique_ptr<model::Decoder> decoder;

  nlohmann::json config_json(const TrainConfig& cfg) const;
  static TrainedModel from_checkpoint(const std::string& path);
};

// Runs the configured mode over the datasets, writing one JSON metrics line
// per epoch to metrics_path and the best checkpoint (per the mode's
// criterion) to ckpt_path. Datasets are normalized in place using the stats
// carried in their headers.
TrainResult train(TrainMode mode, const model::FactorisationScheme& scheme, data::Dataset& train_ds,
                  data::Dataset& val_ds, const TrainConfig& cfg, const std::string& ckpt_path,
                  const std::string& metrics_path);

}  // namespace fnri::train
