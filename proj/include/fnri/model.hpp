#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fnri/autodiff.hpp"
#include "fnri/nn.hpp"
#include "fnri/rng.hpp"
#include "fnri/tensor.hpp"

namespace fnri::model {

enum class Variant { nri, fnri, sfnri };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

// Latent layout shared by encoder, decoder, losses and evaluation. NRI is a
// single layer of K edge types; fNRI stacks layers K_1..K_n; sfNRI is K
// independent sigmoid layers (represented as K layers of size 1).
struct FactorisationScheme {
  Variant variant = Variant::fnri;
  std::vector<int64_t> layer_sizes;
  std::vector<bool> hard_non_edge;  // per layer; ignored for sfNRI

  int64_t total_k() const;
  int64_t num_layers() const { return static_cast<int64_t>(layer_sizes.size()); }
  int64_t layer_offset(int64_t a) const;

  // Parses an edge-type string: "4" (nri), "2+2" (fnri), "3" (sfnri).
  static FactorisationScheme parse(Variant v, const std::string& edge_types, bool hard_non_edge);
  // Table-3 defaults per system ("i+c" or "i+c+f").
  static std::string default_edge_types(Variant v, const std::string& system);

  std::string edge_types_string() const;
};

// Ordered pair table for N fully connected particles. Pair p runs row-major
// over (i, j), i != j; send = i, recv = j.
struct PairTable {
  int64_t n = 0;
  int64_t pairs = 0;
  std::vector<int64_t> send, recv;

  explicit PairTable(int64_t n_particles);
  // Index arrays over a batch of B stacked node blocks ([B*N] rows).
  std::shared_ptr<std::vector<int64_t>> send_index(int64_t b) const;
  std::shared_ptr<std::vector<int64_t>> recv_index(int64_t b) const;
};

struct EncoderConfig {
  int64_t n_particles = 5;
  int64_t t_enc = 50;
  int64_t feat_dim = 4;
  int64_t hidden = 256;
  int64_t k_out = 4;
};

// GNN encoder: f_emb per node on the flattened trajectory, one v->e / e->v /
// v->e round, K-dim logits per ordered pair.
class Encoder {
 public:
  Encoder(ad::ParameterStore& store, const EncoderConfig& cfg, Rng& init_rng);

  // traj: [B, T_enc, N, D]; result: logits [B*P, K].
  ad::Var logits(ad::Tape& t, const Tensor& traj, double dropout_p = 0.0,
                 Rng* dropout_rng = nullptr) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  PairTable pair_table_;
  nn::Mlp f_emb_, f_e1_, f_v1_, f_e2_;
};

struct DecoderConfig {
  int64_t n_particles = 5;
  int64_t feat_dim = 4;
  int64_t hidden = 256;
  FactorisationScheme scheme;
};

// Markovian decoder: per-edge-type message MLPs weighted by z, receiver sum,
// residual state update. Layers flagged hard_non_edge contribute no message
// for their first type; sfNRI's non-edge is structural (z = 0).
class Decoder {
 public:
  Decoder(ad::ParameterStore& store, const DecoderConfig& cfg, Rng& init_rng);

  // x: [B*N, D], z: [B*P, K] -> mu(t+1): [B*N, D]
  ad::Var step(ad::Tape& t, ad::Var x, ad::Var z) const;

  // Predictions for steps 2..T given truth [B,T,N,D]; ground truth is fed at
  // steps 1, M+1, 2M+1, ...; the previous predicted mean otherwise.
  std::vector<ad::Var> rollout_teacher_forced(ad::Tape& t, const Tensor& truth, ad::Var z,
                                              int64_t m_period) const;

  // Free rollout from x1 [B,N,D] (or [B*N,D]) for `steps` predictions.
  std::vector<ad::Var> rollout_free(ad::Tape& t, const Tensor& x1, ad::Var z, int64_t steps) const;

  int64_t num_edge_mlps() const { return static_cast<int64_t>(edge_mlps_.size()); }
  const DecoderConfig& config() const { return cfg_; }

 private:
  static std::vector<nn::Mlp> make_edge_mlps(ad::ParameterStore& store, const DecoderConfig& cfg,
                                             Rng& init_rng, std::vector<int64_t>& z_cols);

  DecoderConfig cfg_;
  PairTable pair_table_;
  std::vector<int64_t> mlp_z_col_;  // z column weighting each edge MLP
  std::vector<nn::Mlp> edge_mlps_;
  nn::Mlp f_v_;
};

// --- latent-space helpers -------------------------------------------------

// Contiguous per-layer slices of the K logits.
std::vector<ad::Var> segment_logits(ad::Tape& t, ad::Var logits, const FactorisationScheme& s);

// Softmax posterior per layer (NRI/fNRI).
std::vector<ad::Var> posterior(ad::Tape& t, ad::Var logits, const FactorisationScheme& s);

// Concrete relaxation: z = softmax((h + g)/tau) per layer, g ~ Gumbel(0,1).
// hard: row-wise argmax one-hot with straight-through gradient.
ad::Var gumbel_sample(ad::Tape& t, ad::Var logits, const FactorisationScheme& s, double tau,
                      Rng& rng, bool hard);

// sfNRI: z = sigmoid(h), no sampling.
ad::Var sigmoid_edges(ad::Tape& t, ad::Var logits);

// Concatenation of per-layer edge-type vectors, in scheme order.
ad::Var concat_layers(ad::Tape& t, const std::vector<ad::Var>& per_layer);

// Plain elementwise logistic (no tape); used to turn sfNRI logits into
// activations outside training.
Tensor sigmoid_values(const Tensor& logits);

// Deterministic hard z for evaluation: per-layer argmax one-hot on logits
// (NRI/fNRI) or threshold at 0.5 on sigmoid activations (sfNRI).
Tensor hard_edge_vectors(const Tensor& activations, const FactorisationScheme& s);

// Flattens [B, T, N, D] into per-node rows [B*N, T*D] (encoder input).
Tensor node_features(const Tensor& traj);
// State slab t as [B*N, D].
Tensor state_at(const Tensor& traj, int64_t t);

}  // namespace fnri::model
