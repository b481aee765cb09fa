#include "fnri/model.hpp"

#include <algorithm>
#include <cmath>

namespace fnri::model {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::nri: return "nri";
    case Variant::fnri: return "fnri";
    case Variant::sfnri: return "sfnri";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "nri") return Variant::nri;
  if (name == "fnri") return Variant::fnri;
  if (name == "sfnri") return Variant::sfnri;
  throw ContractError("unknown model variant '" + name + "'");
}

int64_t FactorisationScheme::total_k() const {
  int64_t k = 0;
  for (int64_t s : layer_sizes) k += s;
  return k;
}

int64_t FactorisationScheme::layer_offset(int64_t a) const {
  int64_t off = 0;
  for (int64_t i = 0; i < a; ++i) off += layer_sizes[static_cast<size_t>(i)];
  return off;
}

FactorisationScheme FactorisationScheme::parse(Variant v, const std::string& edge_types,
                                               bool hard_non_edge) {
  std::vector<int64_t> parts;
  std::string cur;
  for (char c : edge_types + "+") {
    if (c == '+') {
      if (cur.empty()) throw ContractError("edge-types: empty component in '" + edge_types + "'");
      parts.push_back(std::stoll(cur));
      cur.clear();
    } else if (c >= '0' && c <= '9') {
      cur += c;
    } else {
      throw ContractError("edge-types: bad character in '" + edge_types + "'");
    }
  }
  for (int64_t p : parts)
    if (p < 1) throw ContractError("edge-types: sizes must be >= 1 in '" + edge_types + "'");

  FactorisationScheme s;
  s.variant = v;
  switch (v) {
    case Variant::nri:
      if (parts.size() != 1)
        throw ContractError("nri takes a single edge-type count, got '" + edge_types + "'");
      s.layer_sizes = parts;
      break;
    case Variant::fnri:
      s.layer_sizes = parts;
      break;
    case Variant::sfnri:
      if (parts.size() != 1)
        throw ContractError("sfnri takes a single K, got '" + edge_types + "'");
      s.layer_sizes.assign(static_cast<size_t>(parts[0]), 1);
      break;
  }
  s.hard_non_edge.assign(s.layer_sizes.size(), v == Variant::sfnri ? false : hard_non_edge);
  if (s.total_k() < 1) throw ContractError("edge-types: total K must be >= 1");
  return s;
}

std::string FactorisationScheme::default_edge_types(Variant v, const std::string& system) {
  const bool three = system == "i+c+f";
  switch (v) {
    case Variant::nri: return three ? "8" : "4";
    case Variant::fnri: return three ? "2+2+2" : "2+2";
    case Variant::sfnri: return three ? "3" : "2";
  }
  return "";
}

std::string FactorisationScheme::edge_types_string() const {
  if (variant == Variant::sfnri) return std::to_string(num_layers());
  std::string out;
  for (size_t i = 0; i < layer_sizes.size(); ++i) {
    if (i) out += "+";
    out += std::to_string(layer_sizes[i]);
  }
  return out;
}

PairTable::PairTable(int64_t n_particles) : n(n_particles), pairs(n_particles * (n_particles - 1)) {
  send.reserve(static_cast<size_t>(pairs));
  recv.reserve(static_cast<size_t>(pairs));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      if (i == j) continue;
      send.push_back(i);
      recv.push_back(j);
    }
}

std::shared_ptr<std::vector<int64_t>> PairTable::send_index(int64_t b) const {
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(b * pairs));
  for (int64_t e = 0; e < b; ++e)
    for (int64_t p = 0; p < pairs; ++p) idx->push_back(e * n + send[static_cast<size_t>(p)]);
  return idx;
}

std::shared_ptr<std::vector<int64_t>> PairTable::recv_index(int64_t b) const {
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(b * pairs));
  for (int64_t e = 0; e < b; ++e)
    for (int64_t p = 0; p < pairs; ++p) idx->push_back(e * n + recv[static_cast<size_t>(p)]);
  return idx;
}

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(ad::ParameterStore& store, const EncoderConfig& cfg, Rng& init_rng)
    : cfg_(cfg),
      pair_table_(cfg.n_particles),
      f_emb_(store, "encoder.f_emb",
             {cfg.t_enc * cfg.feat_dim, cfg.hidden, cfg.hidden, nn::BnPosition::end, 0}, init_rng),
      f_e1_(store, "encoder.f_e1", {2 * cfg.hidden, cfg.hidden, cfg.hidden, nn::BnPosition::end, 0},
            init_rng),
      f_v1_(store, "encoder.f_v1", {cfg.hidden, cfg.hidden, cfg.hidden, nn::BnPosition::end, 0},
            init_rng),
      f_e2_(store, "encoder.f_e2",
            {2 * cfg.hidden, cfg.hidden, cfg.hidden, nn::BnPosition::end, cfg.k_out}, init_rng) {}

ad::Var Encoder::logits(ad::Tape& t, const Tensor& traj, double dropout_p, Rng* dropout_rng) const {
  if (traj.shape.size() != 4 || traj.shape[1] != cfg_.t_enc || traj.shape[2] != cfg_.n_particles ||
      traj.shape[3] != cfg_.feat_dim)
    throw ShapeError("encoder: trajectory " + traj.shape_str() + " does not match config");
  const int64_t b = traj.shape[0];

  ad::Var x = t.input(node_features(traj));                         // [B*N, T*D]
  ad::Var h1 = f_emb_.apply(t, x, dropout_p, dropout_rng);          // [B*N, H]

  auto send = pair_table_.send_index(b);
  auto recv = pair_table_.recv_index(b);
  ad::Var pair_in = t.concat_cols({t.gather_rows(h1, send), t.gather_rows(h1, recv)});
  ad::Var h1e = f_e1_.apply(t, pair_in, dropout_p, dropout_rng);    // [B*P, H]

  ad::Var agg = t.scatter_sum_rows(h1e, recv, b * cfg_.n_particles);
  ad::Var h2 = f_v1_.apply(t, agg, dropout_p, dropout_rng);         // [B*N, H]

  ad::Var pair_in2 = t.concat_cols({t.gather_rows(h2, send), t.gather_rows(h2, recv)});
  return f_e2_.apply(t, pair_in2, dropout_p, dropout_rng);          // [B*P, K]
}

// ---------------------------------------------------------------------------
// Decoder

std::vector<nn::Mlp> Decoder::make_edge_mlps(ad::ParameterStore& store, const DecoderConfig& cfg,
                                             Rng& init_rng, std::vector<int64_t>& z_cols) {
  std::vector<nn::Mlp> mlps;
  const FactorisationScheme& s = cfg.scheme;
  for (int64_t a = 0; a < s.num_layers(); ++a) {
    const int64_t start = (s.variant != Variant::sfnri && s.hard_non_edge[static_cast<size_t>(a)]) ? 1 : 0;
    for (int64_t k = start; k < s.layer_sizes[static_cast<size_t>(a)]; ++k) {
      const int64_t col = s.layer_offset(a) + k;
      mlps.emplace_back(store, "decoder.f_e" + std::to_string(col),
                        nn::MlpConfig{2 * cfg.feat_dim, cfg.hidden, cfg.hidden,
                                      nn::BnPosition::none, 0},
                        init_rng);
      z_cols.push_back(col);
    }
  }
  if (mlps.empty()) throw ContractError("decoder: scheme leaves no edge-type networks");
  return mlps;
}

Decoder::Decoder(ad::ParameterStore& store, const DecoderConfig& cfg, Rng& init_rng)
    : cfg_(cfg),
      pair_table_(cfg.n_particles),
      edge_mlps_(make_edge_mlps(store, cfg, init_rng, mlp_z_col_)),
      f_v_(store, "decoder.f_v",
           {cfg.hidden + cfg.feat_dim, cfg.hidden, cfg.hidden, nn::BnPosition::none, cfg.feat_dim},
           init_rng) {}

ad::Var Decoder::step(ad::Tape& t, ad::Var x, ad::Var z) const {
  const int64_t n = cfg_.n_particles;
  const int64_t b = t.val(x).rows() / n;
  if (t.val(z).rows() != b * pair_table_.pairs || t.val(z).cols() != cfg_.scheme.total_k())
    throw ShapeError("decoder: z " + t.val(z).shape_str() + " does not match scheme/batch");

  auto send = pair_table_.send_index(b);
  auto recv = pair_table_.recv_index(b);
  ad::Var pair_x = t.concat_cols({t.gather_rows(x, send), t.gather_rows(x, recv)});  // [B*P, 2D]

  ad::Var msg = -1;
  for (size_t m = 0; m < edge_mlps_.size(); ++m) {
    ad::Var h = edge_mlps_[m].apply(t, pair_x);
    ad::Var w = t.slice_cols(z, mlp_z_col_[m], mlp_z_col_[m] + 1);
    ad::Var weighted = t.mul_col(h, w);
    msg = (m == 0) ? weighted : t.add(msg, weighted);
  }

  ad::Var agg = t.scatter_sum_rows(msg, recv, b * n);      // [B*N, H]
  ad::Var delta = f_v_.apply(t, t.concat_cols({agg, x}));  // [B*N, D]
  return t.add(x, delta);
}

std::vector<ad::Var> Decoder::rollout_teacher_forced(ad::Tape& t, const Tensor& truth, ad::Var z,
                                                     int64_t m_period) const {
  if (m_period < 1) throw ContractError("rollout: teacher-forcing period must be >= 1");
  if (truth.shape.size() != 4) throw ShapeError("rollout: expected truth [B,T,N,D]");
  const int64_t steps = truth.shape[1] - 1;
  std::vector<ad::Var> preds;
  preds.reserve(static_cast<size_t>(steps));
  ad::Var cur = -1;
  for (int64_t s = 0; s < steps; ++s) {
    if (s % m_period == 0) cur = t.input(state_at(truth, s));  // ground-truth injection
    cur = step(t, cur, z);
    preds.push_back(cur);
  }
  return preds;
}

std::vector<ad::Var> Decoder::rollout_free(ad::Tape& t, const Tensor& x1, ad::Var z,
                                           int64_t steps) const {
  if (steps < 1) throw ContractError("rollout: steps must be >= 1");
  Tensor x0 = x1;
  if (x0.shape.size() == 3)  // [B, N, D] -> [B*N, D]
    x0.shape = {x0.shape[0] * x0.shape[1], x0.shape[2]};
  std::vector<ad::Var> preds;
  preds.reserve(static_cast<size_t>(steps));
  ad::Var cur = t.input(std::move(x0));
  for (int64_t s = 0; s < steps; ++s) {
    cur = step(t, cur, z);
    preds.push_back(cur);
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Latent helpers

std::vector<ad::Var> segment_logits(ad::Tape& t, ad::Var logits, const FactorisationScheme& s) {
  if (t.val(logits).cols() != s.total_k())
    throw ShapeError("segment_logits: " + t.val(logits).shape_str() + " vs scheme K=" +
                     std::to_string(s.total_k()));
  std::vector<ad::Var> segs;
  segs.reserve(static_cast<size_t>(s.num_layers()));
  for (int64_t a = 0; a < s.num_layers(); ++a) {
    const int64_t off = s.layer_offset(a);
    segs.push_back(t.slice_cols(logits, off, off + s.layer_sizes[static_cast<size_t>(a)]));
  }
  return segs;
}

std::vector<ad::Var> posterior(ad::Tape& t, ad::Var logits, const FactorisationScheme& s) {
  std::vector<ad::Var> probs;
  for (ad::Var seg : segment_logits(t, logits, s)) probs.push_back(t.softmax_rows(seg));
  return probs;
}

ad::Var gumbel_sample(ad::Tape& t, ad::Var logits, const FactorisationScheme& s, double tau,
                      Rng& rng, bool hard) {
  if (tau <= 0.0) throw ContractError("gumbel_sample: tau must be > 0");
  const Tensor& lv = t.val(logits);
  Tensor noise = Tensor::zeros(lv.shape);
  for (double& g : noise.data) g = rng.gumbel();
  ad::Var noisy = t.scale(t.add(logits, t.input(std::move(noise))), 1.0 / tau);
  std::vector<ad::Var> per_layer;
  for (ad::Var seg : segment_logits(t, noisy, s)) {
    ad::Var soft = t.softmax_rows(seg);
    per_layer.push_back(hard ? t.hard_onehot_rows(soft) : soft);
  }
  return concat_layers(t, per_layer);
}

ad::Var sigmoid_edges(ad::Tape& t, ad::Var logits) { return t.sigmoid(logits); }

ad::Var concat_layers(ad::Tape& t, const std::vector<ad::Var>& per_layer) {
  if (per_layer.size() == 1) return per_layer[0];
  return t.concat_cols(per_layer);
}

Tensor sigmoid_values(const Tensor& logits) {
  Tensor out = logits;
  for (double& v : out.data)
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return out;
}

Tensor hard_edge_vectors(const Tensor& activations, const FactorisationScheme& s) {
  const int64_t rows = activations.rows(), k = activations.cols();
  if (k != s.total_k()) throw ShapeError("hard_edge_vectors: " + activations.shape_str());
  Tensor z = Tensor::zeros({rows, k});
  if (s.variant == Variant::sfnri) {
    // activations are sigmoid values; label 1 iff z > 0.5
    for (int64_t i = 0; i < rows * k; ++i)
      z.data[static_cast<size_t>(i)] = activations.data[static_cast<size_t>(i)] > 0.5 ? 1.0 : 0.0;
    return z;
  }
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t a = 0; a < s.num_layers(); ++a) {
      const int64_t off = s.layer_offset(a);
      const int64_t ka = s.layer_sizes[static_cast<size_t>(a)];
      int64_t best = 0;
      for (int64_t c = 1; c < ka; ++c)
        if (activations.at(r, off + c) > activations.at(r, off + best)) best = c;
      z.at(r, off + best) = 1.0;
    }
  return z;
}

Tensor node_features(const Tensor& traj) {
  if (traj.shape.size() != 4) throw ShapeError("node_features: expected [B,T,N,D]");
  const int64_t b = traj.shape[0], tt = traj.shape[1], n = traj.shape[2], d = traj.shape[3];
  Tensor out = Tensor::zeros({b * n, tt * d});
  for (int64_t e = 0; e < b; ++e)
    for (int64_t s = 0; s < tt; ++s)
      for (int64_t i = 0; i < n; ++i)
        for (int64_t f = 0; f < d; ++f)
          out.data[static_cast<size_t>((e * n + i) * tt * d + s * d + f)] =
              traj.data[static_cast<size_t>(((e * tt + s) * n + i) * d + f)];
  return out;
}

Tensor state_at(const Tensor& traj, int64_t t) {
  if (traj.shape.size() != 4) throw ShapeError("state_at: expected [B,T,N,D]");
  const int64_t b = traj.shape[0], tt = traj.shape[1], n = traj.shape[2], d = traj.shape[3];
  if (t < 0 || t >= tt) throw ContractError("state_at: step out of range");
  Tensor out = Tensor::zeros({b * n, d});
  for (int64_t e = 0; e < b; ++e)
    std::copy_n(traj.data.data() + ((e * tt + t) * n) * d, n * d, out.data.data() + e * n * d);
  return out;
}

}  // namespace fnri::model
