#include "fnri/objective.hpp"

#include <cmath>

namespace fnri::objective {

using ad::Tape;
using ad::Var;

Var kl_uniform(Tape& t, Var logits_layer) {
  const int64_t ka = t.val(logits_layer).cols();
  Var logq = t.logsoftmax_rows(logits_layer);
  Var q = t.exp(logq);
  // per-entry q * (log q + log K_a); exact 0 for uniform rows, exact
  // log K_a for saturated one-hot rows
  Var terms = t.mul(q, t.add_scalar(logq, std::log(static_cast<double>(ka))));
  return t.sum_all(terms);
}

Var kl_factorised(Tape& t, Var logits, const model::FactorisationScheme& s) {
  Var total = -1;
  for (Var seg : model::segment_logits(t, logits, s)) {
    Var kl = kl_uniform(t, seg);
    total = (total < 0) ? kl : t.add(total, kl);
  }
  return total;
}

Var gaussian_nll(Tape& t, const std::vector<Var>& preds, const Tensor& targets, double sigma2) {
  if (sigma2 <= 0.0) throw ContractError("gaussian_nll: sigma^2 must be > 0");
  Var stacked = t.concat_rows(preds);
  Var err = t.sub(stacked, t.input(targets));
  return t.scale(t.sumsq(err), 1.0 / (2.0 * sigma2));
}

double sum_squared_error(Tape& t, const std::vector<Var>& preds, const Tensor& targets) {
  double s = 0.0;
  int64_t off = 0;
  for (Var p : preds) {
    const Tensor& pv = t.val(p);
    for (int64_t i = 0; i < pv.size(); ++i) {
      const double d = pv.data[static_cast<size_t>(i)] - targets.data[static_cast<size_t>(off + i)];
      s += d * d;
    }
    off += pv.size();
  }
  return s;
}

Var supervised_ce(Tape& t, Var logits, const model::FactorisationScheme& s,
                  const std::vector<std::vector<int64_t>>& layer_labels) {
  auto segs = model::segment_logits(t, logits, s);
  if (layer_labels.size() != segs.size())
    throw ContractError("supervised_ce: label layers do not match scheme");
  Var total = -1;
  for (size_t a = 0; a < segs.size(); ++a) {
    Var logq = t.logsoftmax_rows(segs[a]);
    auto idx = std::make_shared<std::vector<int64_t>>(layer_labels[a]);
    Var picked = t.select_cols(logq, idx);
    Var nll = t.scale(t.sum_all(picked), -1.0);
    total = (total < 0) ? nll : t.add(total, nll);
  }
  return total;
}

Var supervised_bce(Tape& t, Var logits, Tensor targets) {
  return t.bce_with_logits(logits, std::move(targets));
}

Var l2_penalty(Tape& t, ad::ParameterStore& store, double l2) {
  Var total = -1;
  for (const auto& name : store.trainable_names()) {
    if (name.size() < 2 || name.substr(name.size() - 3, 2) != ".w") continue;  // weights only
    Var sq = t.sumsq(t.param(store, name));
    total = (total < 0) ? sq : t.add(total, sq);
  }
  if (total < 0) throw ContractError("l2_penalty: no weight matrices in store");
  return t.scale(total, l2);
}

double lr_at(int64_t epoch, double base_lr, double factor, int64_t every) {
  if (every < 1) return base_lr;
  double lr = base_lr;
  for (int64_t k = 0; k < epoch / every; ++k) lr *= factor;
  return lr;
}

void Adam::step(ad::ParameterStore& store, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& name : store.trainable_names()) {
    Tensor& p = store.value(name);
    const Tensor& g = store.grad(name);
    auto [it, fresh] = moments_.try_emplace(name);
    if (fresh) {
      it->second.m = Tensor::zeros(p.shape);
      it->second.v = Tensor::zeros(p.shape);
    }
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    for (int64_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[static_cast<size_t>(i)];
      m.data[static_cast<size_t>(i)] = cfg_.beta1 * m.data[static_cast<size_t>(i)] + (1.0 - cfg_.beta1) * gi;
      v.data[static_cast<size_t>(i)] = cfg_.beta2 * v.data[static_cast<size_t>(i)] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m.data[static_cast<size_t>(i)] / bc1;
      const double vhat = v.data[static_cast<size_t>(i)] / bc2;
      p.data[static_cast<size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace fnri::objective
