#pragma once

#include <string>

#include "fnri/autodiff.hpp"
#include "fnri/rng.hpp"
#include "fnri/tensor.hpp"

#include <json.hpp>

namespace fnri::nn {

// Where the batchnorm sits inside an MLP block. The GNN blocks normalize at
// the end; decoder MLPs skip it so each row stays a pure per-row function.
enum class BnPosition { end, none };

struct MlpConfig {
  int64_t in = 0;
  int64_t hidden = 0;
  int64_t out = 0;
  BnPosition bn_position = BnPosition::end;
  int64_t head_out = 0;  // extra dense layer after the block (0 = none)
};

Tensor xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng);

// Two dense layers with elu activations: linear-elu-linear-elu[-batchnorm],
// plus an optional dense head. Dropout (inverted) acts on the first hidden
// representation and only when the tape is in train mode.
class Mlp {
 public:
  Mlp(ad::ParameterStore& store, std::string prefix, MlpConfig cfg, Rng& init_rng);

  ad::Var apply(ad::Tape& t, ad::Var x, double dropout_p = 0.0, Rng* dropout_rng = nullptr) const;

  const MlpConfig& config() const { return cfg_; }

 private:
  ad::ParameterStore* store_;
  std::string prefix_;
  MlpConfig cfg_;
};

// Parameter checkpoint: u32-LE length-prefixed JSON header (entry names,
// shapes, config, config hash), then raw little-endian f64 payloads in header
// order. Buffers (running stats) are stored alongside trainable parameters.
void save_checkpoint(const std::string& path, const ad::ParameterStore& store,
                     const nlohmann::json& config);

// Loads values into `store`, creating entries as needed; returns the header
// config. Shape mismatches against pre-existing entries raise FormatError.
nlohmann::json load_checkpoint(const std::string& path, ad::ParameterStore& store);

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

uint64_t fnv1a_hash(const std::string& s);

}  // namespace fnri::nn
