#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fnri/sim.hpp"
#include "fnri/tensor.hpp"

#include <json.hpp>

namespace fnri::data {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetHeader {
  int64_t num_examples = 0;
  int64_t n = 5;
  int64_t t_record = 100;
  int64_t d = 4;
  std::vector<std::string> layer_names;
  std::vector<int64_t> layer_k;  // edge types per ground-truth layer (2 each)
  sim::SimConfig sim_config;
  uint64_t dataset_seed = 0;
  // Per-dimension max-abs of the raw training split; shared by val/test.
  std::array<double, 4> norm_max_abs{0.0, 0.0, 0.0, 0.0};

  nlohmann::json to_json() const;
  static DatasetHeader from_json(const nlohmann::json& j);
};

// In-memory dataset. Trajectories live as one flat f32 buffer in disk layout
// ([example][t][particle][dim]); labels as u8 ([example][layer][i*N+j]).
class Dataset {
 public:
  DatasetHeader header;
  std::vector<float> traj;
  std::vector<uint8_t> labels;
  bool normalized = false;

  int64_t num_examples() const { return header.num_examples; }
  int64_t num_layers() const { return static_cast<int64_t>(header.layer_names.size()); }
  int64_t traj_stride() const { return header.t_record * header.n * header.d; }
  int64_t label_stride() const { return num_layers() * header.n * header.n; }

  // [B, T, N, D] as f64, normalized iff the dataset has been normalized.
  Tensor batch_trajectories(const std::vector<int64_t>& idx) const;
  // Per-layer label of ordered pair p for example e, pair order row-major
  // over (i, j), i != j.
  uint8_t pair_label(int64_t example, int64_t layer, int64_t i, int64_t j) const;
};

// FNRI1 container: u32-LE length-prefixed JSON header, then per example
// T*N*D f32 little-endian samples followed by layers*N*N u8 labels.
void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<sim::TrajectoryRecord>& records);
Dataset read_dataset(const std::string& path);

// Max-abs per feature dimension over the raw trajectories.
std::array<double, 4> compute_max_abs(const std::vector<sim::TrajectoryRecord>& records);

// Scales each feature dimension by the header's max-abs into [-1, 1].
// Dimensions with zero max-abs are left untouched. Idempotent via the flag.
void normalize(Dataset& ds);
void denormalize_states(Tensor& states, const DatasetHeader& header);

// Exact time bisection: ([B,T/2,N,D] encoder input, [B,T/2,N,D] target).
std::pair<Tensor, Tensor> split_halves(const Tensor& batch);

// Seed-determined permutation of [0, num) chopped into batches; the final
// short batch is included.
std::vector<std::vector<int64_t>> epoch_batches(int64_t num, int64_t batch_size,
                                                uint64_t shuffle_seed);

}  // namespace fnri::data
