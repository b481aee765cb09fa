#pragma once

#include <map>
#include <vector>

#include "fnri/autodiff.hpp"
#include "fnri/model.hpp"
#include "fnri/tensor.hpp"

namespace fnri::objective {

// KL of the softmax posterior of `logits_layer` [R, K_a] against a uniform
// prior, summed over the R pairs: sum_r (sum_k q log q + log K_a).
ad::Var kl_uniform(ad::Tape& t, ad::Var logits_layer);

// Sum of per-layer KLs over the factorised scheme. With a single layer this
// is exactly kl_uniform on the full logits.
ad::Var kl_factorised(ad::Tape& t, ad::Var logits, const model::FactorisationScheme& s);

// Gaussian reconstruction error: sum ||x - mu||^2 / (2 sigma^2) over every
// prediction, particle and dimension. Constant term dropped.
ad::Var gaussian_nll(ad::Tape& t, const std::vector<ad::Var>& preds, const Tensor& targets,
                     double sigma2);

// Plain summed squared error of the same predictions (reported next to the
// rescaled NLL).
double sum_squared_error(ad::Tape& t, const std::vector<ad::Var>& preds, const Tensor& targets);

// Categorical cross-entropy per layer on softmax posteriors against the
// ground-truth layer labels [R per layer], summed over pairs and layers.
ad::Var supervised_ce(ad::Tape& t, ad::Var logits, const model::FactorisationScheme& s,
                      const std::vector<std::vector<int64_t>>& layer_labels);

// sfNRI supervised loss: element-wise binary cross-entropy on sigmoid
// outputs; targets [R, K] in {0,1}.
ad::Var supervised_bce(ad::Tape& t, ad::Var logits, Tensor targets);

// l2 * sum of squared weight-matrix entries, taped so gradients flow.
ad::Var l2_penalty(ad::Tape& t, ad::ParameterStore& store, double l2);

// Learning-rate schedule: base decayed by `factor` every `every` epochs.
double lr_at(int64_t epoch, double base_lr, double factor, int64_t every);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam over every trainable parameter in the store.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(ad::ParameterStore& store, double lr);
  int64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> moments_;
  int64_t t_ = 0;
};

}  // namespace fnri::objective
