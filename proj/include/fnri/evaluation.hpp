#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fnri/dataset.hpp"
#include "fnri/model.hpp"
#include "fnri/trainer.hpp"

#include <json.hpp>

namespace fnri::eval {

// A mapping from predicted combined labels to ground-truth combined labels,
// drawn from the family the predicted scheme allows: layer assignments
// (between equal-sized layers) crossed with within-layer label permutations,
// or all K! label permutations for a single-layer (NRI) scheme.
struct PermutationMap {
  std::vector<int64_t> table;  // pred combined label -> gt combined label
  std::string key;             // canonical text form, e.g. "0>1,1>0"
};

// Per-layer hard labels from logits / edge vectors: argmax per layer segment
// for NRI/fNRI (ties -> lowest index), threshold 0.5 for sfNRI sigmoids.
// Output layout: [row][layer] flattened row-major.
std::vector<uint8_t> discretize(const Tensor& logits, const model::FactorisationScheme& s);

struct EdgeAccuracy {
  double combined = 0.0;
  std::vector<double> per_type;
  PermutationMap map;
};

// Exhaustive search over the allowed permutation family, selecting the map
// that maximizes combined accuracy over all pairs (ties -> lexicographically
// smallest table). Per-type accuracies are reported under that single map.
// pred: [num_pairs][pred_layers], gt: [num_pairs][gt_layers] flattened.
EdgeAccuracy edge_accuracy(const std::vector<uint8_t>& pred,
                           const std::vector<int64_t>& pred_layer_sizes,
                           const std::vector<uint8_t>& gt,
                           const std::vector<int64_t>& gt_layer_sizes);

// Enumerates every map in the family for the given predicted scheme against
// n_gt binary ground-truth layers.
std::vector<PermutationMap> enumerate_maps(const std::vector<int64_t>& pred_layer_sizes,
                                           const std::vector<int64_t>& gt_layer_sizes);

// Tally of which map wins per batch of examples; a settled model concentrates
// on a single bin.
std::map<std::string, int64_t> permutation_histogram(const std::vector<uint8_t>& pred,
                                                     const std::vector<int64_t>& pred_layer_sizes,
                                                     const std::vector<uint8_t>& gt,
                                                     const std::vector<int64_t>& gt_layer_sizes,
                                                     int64_t pairs_per_batch);

enum class MseMode { at_step, cumulative };

struct EvalOptions {
  std::vector<int64_t> steps{1, 10, 20};
  int64_t batch = 128;
  MseMode mse_mode = MseMode::at_step;
};

struct EvalReport {
  std::string model;  // variant / "static" / "random"
  std::string mode;
  bool has_edge_metrics = false;
  double combined_acc = 0.0;
  std::vector<std::string> type_names;
  std::vector<double> per_type_acc;
  std::string chosen_map;
  std::map<std::string, int64_t> perm_histogram;
  bool has_mse = false;
  std::vector<int64_t> steps;
  std::vector<double> mse;  // normalized units; display scale is 1e-5
  int64_t num_examples = 0;
  // Combined accuracy per example under the chosen map (not serialized;
  // backs the optional per-example CSV).
  std::vector<double> per_example_acc;

  nlohmann::json to_json() const;
};

// Full protocol: latent inferred from the first half (or ground truth for
// true-graph checkpoints), free rollout over the second half from its first
// state, MSE at the requested steps, permutation-matched edge accuracies.
EvalReport evaluate_model(train::TrainedModel& tm, data::Dataset& test, const EvalOptions& opts);

// Static decoder baseline: copies the previous state; MSE only.
EvalReport evaluate_static(data::Dataset& test, const EvalOptions& opts);

// Uniform random edge predictions in the dataset's ground-truth scheme; edge
// accuracy only.
EvalReport evaluate_random(data::Dataset& test, const EvalOptions& opts, uint64_t seed);

// Per-example CSV of predicted vs true trajectories (raw units).
void export_plot_csv(train::TrainedModel& tm, data::Dataset& test, int64_t num_examples,
                     const std::string& out_path);

}  // namespace fnri::eval
