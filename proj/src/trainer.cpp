#include "fnri/trainer.hpp"

#include <cmath>
#include <fstream>

#include "fnri/evaluation.hpp"

namespace fnri::train {

using ad::Tape;
using ad::Var;
using model::FactorisationScheme;
using model::Variant;
using nlohmann::json;

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::learned: return "learned";
    case TrainMode::supervised: return "supervised";
    case TrainMode::truegraph: return "truegraph";
  }
  return "?";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "learned") return TrainMode::learned;
  if (name == "supervised") return TrainMode::supervised;
  if (name == "truegraph") return TrainMode::truegraph;
  throw ContractError("unknown training mode '" + name + "'");
}

json TrainConfig::to_json() const {
  return json{{"epochs", epochs},
              {"batch", batch},
              {"lr", lr},
              {"lr_decay", lr_decay},
              {"lr_decay_every", lr_decay_every},
              {"tau", tau},
              {"m_teacher", m_teacher},
              {"sigma2", sigma2},
              {"dropout", dropout},
              {"l2", l2},
              {"hidden", hidden},
              {"hard_non_edge", hard_non_edge},
              {"straight_through", straight_through},
              {"seed", seed}};
}

std::vector<std::vector<int64_t>> batch_layer_labels(const data::Dataset& ds,
                                                     const std::vector<int64_t>& idx) {
  const int64_t n = ds.header.n;
  const int64_t layers = ds.num_layers();
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(layers));
  for (auto& v : out) v.reserve(idx.size() * static_cast<size_t>(n * (n - 1)));
  for (int64_t a = 0; a < layers; ++a)
    for (int64_t e : idx)
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
          if (i == j) continue;
          out[static_cast<size_t>(a)].push_back(ds.pair_label(e, a, i, j));
        }
  return out;
}

std::vector<int64_t> combined_labels(const std::vector<std::vector<int64_t>>& layer_labels) {
  const size_t layers = layer_labels.size();
  const size_t rows = layer_labels[0].size();
  std::vector<int64_t> out(rows, 0);
  for (size_t a = 0; a < layers; ++a)
    for (size_t r = 0; r < rows; ++r) out[r] = out[r] * 2 + layer_labels[a][r];
  return out;
}

Tensor true_edge_vectors(const FactorisationScheme& scheme,
                         const std::vector<std::vector<int64_t>>& layer_labels) {
  const int64_t gt_layers = static_cast<int64_t>(layer_labels.size());
  const int64_t rows = static_cast<int64_t>(layer_labels[0].size());
  Tensor z = Tensor::zeros({rows, scheme.total_k()});

  switch (scheme.variant) {
    case Variant::nri: {
      if (scheme.total_k() != (int64_t{1} << gt_layers))
        throw ContractError("true_edge_vectors: nri K=" + std::to_string(scheme.total_k()) +
                            " cannot encode " + std::to_string(gt_layers) + " binary layers");
      const auto combined = combined_labels(layer_labels);
      for (int64_t r = 0; r < rows; ++r) z.at(r, combined[static_cast<size_t>(r)]) = 1.0;
      break;
    }
    case Variant::fnri: {
      if (scheme.num_layers() != gt_layers)
        throw ContractError("true_edge_vectors: fnri layer count does not match dataset");
      for (int64_t a = 0; a < gt_layers; ++a) {
        if (scheme.layer_sizes[static_cast<size_t>(a)] != 2)
          throw ContractError("true_edge_vectors: fnri needs K_a=2 per dataset layer");
        const int64_t off = scheme.layer_offset(a);
        for (int64_t r = 0; r < rows; ++r)
          z.at(r, off + layer_labels[static_cast<size_t>(a)][static_cast<size_t>(r)]) = 1.0;
      }
      break;
    }
    case Variant::sfnri: {
      if (scheme.total_k() != gt_layers)
        throw ContractError("true_edge_vectors: sfnri K does not match dataset layer count");
      for (int64_t a = 0; a < gt_layers; ++a)
        for (int64_t r = 0; r < rows; ++r)
          z.at(r, a) = static_cast<double>(layer_labels[static_cast<size_t>(a)][static_cast<size_t>(r)]);
      break;
    }
  }
  return z;
}

Tensor rollout_targets(const Tensor& truth) {
  const int64_t b = truth.shape[0], tt = truth.shape[1], n = truth.shape[2], d = truth.shape[3];
  Tensor out = Tensor::zeros({(tt - 1) * b * n, d});
  double* dst = out.data.data();
  for (int64_t s = 1; s < tt; ++s)
    for (int64_t e = 0; e < b; ++e) {
      std::copy_n(truth.data.data() + ((e * tt + s) * n) * d, n * d, dst);
      dst += n * d;
    }
  return out;
}

json TrainedModel::config_json(const TrainConfig& cfg) const {
  json j{{"variant", model::variant_name(scheme.variant)},
         {"edge_types", scheme.edge_types_string()},
         {"hard_non_edge", scheme.hard_non_edge.empty() ? false : bool(scheme.hard_non_edge[0])},
         {"n_particles", n_particles},
         {"feat_dim", feat_dim},
         {"t_enc", t_enc},
         {"hidden", hidden},
         {"sigma2", sigma2},
         {"tau", tau},
         {"mode", mode_name(mode)},
         {"system", system},
         {"has_encoder", encoder != nullptr},
         {"has_decoder", decoder != nullptr},
         {"train_config", cfg.to_json()}};
  return j;
}

TrainedModel TrainedModel::from_checkpoint(const std::string& path) {
  TrainedModel tm;
  ad::ParameterStore fresh;
  json cfg = nn::load_checkpoint(path, fresh);

  tm.scheme = FactorisationScheme::parse(model::parse_variant(cfg.at("variant").get<std::string>()),
                                         cfg.at("edge_types").get<std::string>(),
                                         cfg.at("hard_non_edge").get<bool>());
  tm.n_particles = cfg.at("n_particles").get<int64_t>();
  tm.feat_dim = cfg.at("feat_dim").get<int64_t>();
  tm.t_enc = cfg.at("t_enc").get<int64_t>();
  tm.hidden = cfg.at("hidden").get<int64_t>();
  tm.sigma2 = cfg.at("sigma2").get<double>();
  tm.tau = cfg.at("tau").get<double>();
  tm.mode = parse_mode(cfg.at("mode").get<std::string>());
  tm.system = cfg.value("system", "i+c");

  Rng init(0);  // layouts only; values come from the checkpoint
  if (cfg.at("has_encoder").get<bool>())
    tm.encoder = std::make_unique<model::Encoder>(
        tm.store,
        model::EncoderConfig{tm.n_particles, tm.t_enc, tm.feat_dim, tm.hidden, tm.scheme.total_k()},
        init);
  if (cfg.at("has_decoder").get<bool>())
    tm.decoder = std::make_unique<model::Decoder>(
        tm.store, model::DecoderConfig{tm.n_particles, tm.feat_dim, tm.hidden, tm.scheme}, init);
  nn::load_checkpoint(path, tm.store);
  return tm;
}

namespace {

struct ValMetrics {
  std::optional<double> recon_10;
  std::optional<double> edge_acc;
};

// Validation pass over the whole set in fixed order with eval-mode tapes.
ValMetrics validate(TrainMode mode, TrainedModel& tm, data::Dataset& val, const TrainConfig& cfg) {
  ValMetrics out;
  const int64_t num = val.num_examples();
  const int64_t bsz = std::min<int64_t>(cfg.batch, num);
  const int64_t pairs = tm.n_particles * (tm.n_particles - 1);

  double recon_sum = 0.0;
  std::vector<uint8_t> pred_labels, gt_labels;
  std::vector<int64_t> gt_sizes(static_cast<size_t>(val.num_layers()), 2);

  for (int64_t off = 0; off < num; off += bsz) {
    std::vector<int64_t> idx;
    for (int64_t e = off; e < std::min(off + bsz, num); ++e) idx.push_back(e);
    const Tensor batch = val.batch_trajectories(idx);
    auto [first, second] = data::split_halves(batch);
    const auto layer_labels = batch_layer_labels(val, idx);

    Tape t(ad::Mode::eval);
    Tensor z_hard;
    if (mode == TrainMode::truegraph) {
      z_hard = true_edge_vectors(tm.scheme, layer_labels);
    } else {
      Var logits = tm.encoder->logits(t, first);
      Tensor acts = t.val(logits);
      if (tm.scheme.variant == Variant::sfnri) acts = model::sigmoid_values(acts);
      z_hard = model::hard_edge_vectors(acts, tm.scheme);
      const auto labels = eval::discretize(acts, tm.scheme);
      pred_labels.insert(pred_labels.end(), labels.begin(), labels.end());
      for (size_t p = 0; p < static_cast<size_t>(idx.size()) * static_cast<size_t>(pairs); ++p)
        for (size_t a = 0; a < layer_labels.size(); ++a)
          gt_labels.push_back(static_cast<uint8_t>(layer_labels[a][p]));
    }

    if (mode != TrainMode::supervised) {
      Var z = t.input(z_hard);
      auto preds = tm.decoder->rollout_teacher_forced(t, second, z, cfg.m_teacher);
      const Tensor targets = rollout_targets(second);
      double sq = 0.0;
      int64_t row0 = 0;
      for (Var p : preds) {
        const Tensor& pv = t.val(p);
        for (int64_t i = 0; i < pv.size(); ++i) {
          const double d = pv.data[static_cast<size_t>(i)] - targets.data[static_cast<size_t>(row0 + i)];
          sq += d * d;
        }
        row0 += pv.size();
      }
      recon_sum += sq / (2.0 * cfg.sigma2);
    }
  }

  if (mode != TrainMode::supervised) recon_sum /= static_cast<double>(num);
  if (mode != TrainMode::supervised) out.recon_10 = recon_sum;
  if (mode != TrainMode::truegraph) {
    std::vector<int64_t> pred_sizes;
    if (tm.scheme.variant == Variant::sfnri)
      pred_sizes.assign(static_cast<size_t>(tm.scheme.num_layers()), 2);
    else
      pred_sizes = tm.scheme.layer_sizes;
    out.edge_acc = eval::edge_accuracy(pred_labels, pred_sizes, gt_labels, gt_sizes).combined;
  }
  return out;
}

}  // namespace

TrainResult train(TrainMode mode, const FactorisationScheme& scheme, data::Dataset& train_ds,
                  data::Dataset& val_ds, const TrainConfig& cfg, const std::string& ckpt_path,
                  const std::string& metrics_path) {
  if (cfg.epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (train_ds.header.t_record % 2 != 0)
    throw ContractError("train: trajectory length must be even for the half split");

  data::normalize(train_ds);
  data::normalize(val_ds);

  TrainedModel tm;
  tm.scheme = scheme;
  tm.n_particles = train_ds.header.n;
  tm.feat_dim = train_ds.header.d;
  tm.t_enc = train_ds.header.t_record / 2;
  tm.hidden = cfg.hidden;
  tm.sigma2 = cfg.sigma2;
  tm.tau = cfg.tau;
  tm.mode = mode;
  tm.system = sim::system_name(train_ds.header.sim_config.system);

  Rng init_rng(Rng::mix(cfg.seed, {0}));
  if (mode != TrainMode::truegraph)
    tm.encoder = std::make_unique<model::Encoder>(
        tm.store,
        model::EncoderConfig{tm.n_particles, tm.t_enc, tm.feat_dim, cfg.hidden, scheme.total_k()},
        init_rng);
  if (mode != TrainMode::supervised)
    tm.decoder = std::make_unique<model::Decoder>(
        tm.store, model::DecoderConfig{tm.n_particles, tm.feat_dim, cfg.hidden, scheme}, init_rng);

  Rng noise_rng(Rng::mix(cfg.seed, {1}));
  objective::Adam adam;

  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw ContractError("train: cannot open metrics log " + metrics_path);

  const bool maximize = mode == TrainMode::supervised;
  TrainResult result;
  result.criterion = maximize ? "val_edge_accuracy" : "val_recon_10step";
  double best = maximize ? -1.0 : std::numeric_limits<double>::infinity();

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = objective::lr_at(epoch, cfg.lr, cfg.lr_decay, cfg.lr_decay_every);
    const auto batches =
        data::epoch_batches(train_ds.num_examples(), cfg.batch, Rng::mix(cfg.seed, {2, static_cast<uint64_t>(epoch)}));

    double loss_sum = 0.0;
    int64_t batch_no = 0;
    for (const auto& idx : batches) {
      const Tensor batch = train_ds.batch_trajectories(idx);
      auto [first, second] = data::split_halves(batch);
      const double inv_b = 1.0 / static_cast<double>(idx.size());

      Tape t(ad::Mode::train);
      Var loss = -1;
      switch (mode) {
        case TrainMode::learned: {
          Var logits = tm.encoder->logits(t, first);
          Var z;
          Var recon = -1;
          if (scheme.variant == Variant::sfnri) {
            z = model::sigmoid_edges(t, logits);
            auto preds = tm.decoder->rollout_teacher_forced(t, second, z, cfg.m_teacher);
            recon = objective::gaussian_nll(t, preds, rollout_targets(second), cfg.sigma2);
            loss = (cfg.l2 > 0.0) ? t.add(recon, objective::l2_penalty(t, tm.store, cfg.l2)) : recon;
          } else {
            z = model::gumbel_sample(t, logits, scheme, cfg.tau, noise_rng, cfg.straight_through);
            auto preds = tm.decoder->rollout_teacher_forced(t, second, z, cfg.m_teacher);
            recon = objective::gaussian_nll(t, preds, rollout_targets(second), cfg.sigma2);
            loss = t.add(recon, objective::kl_factorised(t, logits, scheme));
          }
          break;
        }
        case TrainMode::supervised: {
          Var logits = tm.encoder->logits(t, first, cfg.dropout, &noise_rng);
          const auto layer_labels = batch_layer_labels(train_ds, idx);
          if (scheme.variant == Variant::sfnri) {
            Tensor targets = true_edge_vectors(scheme, layer_labels);
            loss = objective::supervised_bce(t, logits, std::move(targets));
          } else if (scheme.variant == Variant::nri) {
            loss = objective::supervised_ce(t, logits, scheme, {combined_labels(layer_labels)});
          } else {
            loss = objective::supervised_ce(t, logits, scheme, layer_labels);
          }
          if (cfg.l2 > 0.0) loss = t.add(loss, objective::l2_penalty(t, tm.store, cfg.l2));
          break;
        }
        case TrainMode::truegraph: {
          const auto layer_labels = batch_layer_labels(train_ds, idx);
          Var z = t.input(true_edge_vectors(scheme, layer_labels));
          auto preds = tm.decoder->rollout_teacher_forced(t, second, z, cfg.m_teacher);
          loss = objective::gaussian_nll(t, preds, rollout_targets(second), cfg.sigma2);
          break;
        }
      }
      loss = t.scale(loss, inv_b);  // summed per example, averaged over batch

      const double loss_val = t.scalar(loss);
      if (!std::isfinite(loss_val))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_no));
      tm.store.zero_grads();
      t.backward(loss);
      adam.step(tm.store, lr);
      loss_sum += loss_val;
      ++batch_no;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(batches.size());
    em.lr = lr;
    const ValMetrics vm = validate(mode, tm, val_ds, cfg);
    em.val_recon_10 = vm.recon_10;
    em.val_edge_acc = vm.edge_acc;

    json line{{"epoch", em.epoch}, {"train_loss", em.train_loss}, {"lr", em.lr}};
    line["val_recon_10"] = em.val_recon_10 ? json(*em.val_recon_10) : json(nullptr);
    line["val_edge_acc"] = em.val_edge_acc ? json(*em.val_edge_acc) : json(nullptr);
    metrics << line.dump() << "\n";
    metrics.flush();

    const double crit = maximize ? *em.val_edge_acc : *em.val_recon_10;
    const bool improved = maximize ? crit > best : crit < best;
    if (improved) {
      best = crit;
      result.best_metric = crit;
      result.best_epoch = epoch;
      nn::save_checkpoint(ckpt_path, tm.store, tm.config_json(cfg));
    }
    result.log.push_back(std::move(em));
  }
  return result;
}

}  // namespace fnri::train
