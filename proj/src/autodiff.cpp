#include "fnri/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fnri/kernels.hpp"

namespace fnri::ad {

namespace {

#ifndef NDEBUG
void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data)
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite forward output in ") + op);
}
#define FNRI_CHECK_FINITE(t, op) check_finite(t, op)
#else
#define FNRI_CHECK_FINITE(t, op) ((void)0)
#endif

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore

Tensor& ParameterStore::create(const std::string& name, Tensor init, bool trainable) {
  auto [it, inserted] = entries_.try_emplace(name);
  if (!inserted) throw ContractError("ParameterStore: duplicate parameter " + name);
  it->second.value = std::move(init);
  it->second.trainable = trainable;
  if (trainable) it->second.grad = Tensor::zeros(it->second.value.shape);
  return it->second.value;
}

Tensor& ParameterStore::value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParameterStore: unknown parameter " + name);
  return it->second.value;
}

const Tensor& ParameterStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParameterStore: unknown parameter " + name);
  return it->second.value;
}

Tensor& ParameterStore::grad(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end() || !it->second.trainable)
    throw ContractError("ParameterStore: no gradient slot for " + name);
  return it->second.grad;
}

bool ParameterStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParameterStore: unknown parameter " + name);
  return it->second.trainable;
}

void ParameterStore::zero_grads() {
  for (auto& [name, e] : entries_)
    if (e.trainable) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (e.trainable) out.push_back(name);
  return out;
}

int64_t ParameterStore::total_trainable() const {
  int64_t n = 0;
  for (const auto& [name, e] : entries_)
    if (e.trainable) n += e.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Tape internals

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, Var)> back) {
  nodes_.push_back(Node{std::move(value), Tensor{}, needs_grad, std::move(back), nullptr, {}});
  return static_cast<Var>(nodes_.size() - 1);
}

Tensor& Tape::gbuf(Var v) {
  Node& n = node(v);
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

void Tape::add_grad(Var v, const Tensor& t) {
  if (!wants_grad(v)) return;
  Tensor& g = gbuf(v);
  kernels::axpy(1.0, t.data.data(), g.data.data(), g.size());
}

double* Tape::grad_ptr(Var v) { return gbuf(v).data.data(); }

double Tape::scalar(Var v) const {
  const Tensor& t = val(v);
  if (t.size() != 1) throw ContractError("scalar(): tensor has shape " + t.shape_str());
  return t.data[0];
}

Var Tape::input(Tensor v) { return push(std::move(v), false, nullptr); }

Var Tape::param(ParameterStore& store, const std::string& name) {
  Var v = push(store.value(name), store.trainable(name), nullptr);
  Node& n = node(v);
  n.store = &store;
  n.pname = name;
  return v;
}

void Tape::backward(Var loss) {
  const Tensor& lv = val(loss);
  if (lv.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + lv.shape_str());
  if (!wants_grad(loss)) return;  // loss does not depend on any parameter
  gbuf(loss).data[0] = 1.0;
  for (Var v = loss; v >= 0; --v) {
    Node& n = node(v);
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.back) n.back(*this, v);
    if (n.store) {
      Tensor& pg = n.store->grad(n.pname);
      kernels::axpy(1.0, n.grad.data.data(), pg.data.data(), pg.size());
    }
    n.grad = Tensor{};  // freed; every consumer has already been processed
  }
}

// ---------------------------------------------------------------------------
// Ops

Var Tape::linear(Var x, Var w, Var b) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  const Tensor& bv = val(b);
  if (xv.cols() != wv.rows())
    throw ShapeError("linear: inner dimensions disagree, x " + xv.shape_str() + " vs W " + wv.shape_str());
  if (bv.cols() != wv.cols() || bv.rows() != 1)
    throw ShapeError("linear: bias " + bv.shape_str() + " does not match W " + wv.shape_str());
  const int64_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  Tensor y = Tensor::zeros({m, n});
  kernels::matmul(xv.data.data(), wv.data.data(), y.data.data(), m, k, n, false);
  kernels::parallel_rows(m, [&](int64_t r) {
    kernels::axpy(1.0, bv.data.data(), y.data.data() + r * n, n);
  });
  FNRI_CHECK_FINITE(y, "linear");
  bool ng = wants_grad(x) || wants_grad(w) || wants_grad(b);
  return push(std::move(y), ng, [x, w, b, m, k, n](Tape& t, Var self) {
    const double* g = t.node(self).grad.data.data();
    if (t.wants_grad(x))
      kernels::matmul_nt(g, t.val(w).data.data(), t.grad_ptr(x), m, n, k, true);
    if (t.wants_grad(w))
      kernels::matmul_tn(t.val(x).data.data(), g, t.grad_ptr(w), m, k, n, true);
    if (t.wants_grad(b)) kernels::col_sums(g, t.grad_ptr(b), m, n, true);
  });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions disagree, " + av.shape_str() + " vs " + bv.shape_str());
  const int64_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor y = Tensor::zeros({m, n});
  kernels::matmul(av.data.data(), bv.data.data(), y.data.data(), m, k, n, false);
  FNRI_CHECK_FINITE(y, "matmul");
  bool ng = wants_grad(a) || wants_grad(b);
  return push(std::move(y), ng, [a, b, m, k, n](Tape& t, Var self) {
    const double* g = t.node(self).grad.data.data();
    if (t.wants_grad(a))
      kernels::matmul_nt(g, t.val(b).data.data(), t.grad_ptr(a), m, n, k, true);
    if (t.wants_grad(b))
      kernels::matmul_tn(t.val(a).data.data(), g, t.grad_ptr(b), m, k, n, true);
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "add");
  Tensor y = av;
  kernels::axpy(1.0, bv.data.data(), y.data.data(), y.size());
  bool ng = wants_grad(a) || wants_grad(b);
  return push(std::move(y), ng, [a, b](Tape& t, Var self) {
    const Tensor& g = t.node(self).grad;
    t.add_grad(a, g);
    t.add_grad(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "sub");
  Tensor y = av;
  kernels::axpy(-1.0, bv.data.data(), y.data.data(), y.size());
  bool ng = wants_grad(a) || wants_grad(b);
  return push(std::move(y), ng, [a, b](Tape& t, Var self) {
    const Tensor& g = t.node(self).grad;
    t.add_grad(a, g);
    if (t.wants_grad(b))
      kernels::axpy(-1.0, g.data.data(), t.grad_ptr(b), g.size());
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "mul");
  Tensor y = av;
  for (int64_t i = 0; i < y.size(); ++i) y.data[i] *= bv.data[i];
  FNRI_CHECK_FINITE(y, "mul");
  bool ng = wants_grad(a) || wants_grad(b);
  return push(std::move(y), ng, [a, b](Tape& t, Var self) {
    const Tensor& g = t.node(self).grad;
    if (t.wants_grad(a)) {
      double* ga = t.grad_ptr(a);
      const double* bd = t.val(b).data.data();
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g.data[i] * bd[i];
    }
    if (t.wants_grad(b)) {
      double* gb = t.grad_ptr(b);
      const double* ad = t.val(a).data.data();
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g.data[i] * ad[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor y = val(a);
  for (double& v : y.data) v *= c;
  return push(std::move(y), wants_grad(a), [a, c](Tape& t, Var self) {
    const Tensor& g = t.node(self).grad;
    if (t.wants_grad(a)) kernels::axpy(c, g.data.data(), t.grad_ptr(a), g.size());
  });
}

Var Tape::add_scalar(Var a, double c) {
  Tensor y = val(a);
  for (double& v : y.data) v += c;
  return push(std::move(y), wants_grad(a), [a](Tape& t, Var self) {
    t.add_grad(a, t.node(self).grad);
  });
}

Var Tape::mul_col(Var x, Var col) {
  const Tensor& xv = val(x);
  const Tensor& cv = val(col);
  if (cv.rows() != xv.rows() || cv.cols() != 1)
    throw ShapeError("mul_col: column " + cv.shape_str() + " does not match " + xv.shape_str());
  const int64_t rows = xv.rows(), cols = xv.cols();
  Tensor y = Tensor::zeros({rows, cols});
  kernels::parallel_rows(rows, [&](int64_t r) {
    const double s = cv.data[static_cast<size_t>(r)];
    const double* xr = xv.data.data() + r * cols;
    double* yr = y.data.data() + r * cols;
    for (int64_t c = 0; c < cols; ++c) yr[c] = xr[c] * s;
  });
  bool ng = wants_grad(x) || wants_grad(col);
  return push(std::move(y), ng, [x, col, rows, cols](Tape& t, Var self) {
    const double* g = t.node(self).grad.data.data();
    if (t.wants_grad(x)) {
      double* gx = t.grad_ptr(x);
      const double* cd = t.val(col).data.data();
      kernels::parallel_rows(rows, [&](int64_t r) {
        const double s = cd[r];
        for (int64_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * s;
      });
    }
    if (t.wants_grad(col)) {
      double* gc = t.grad_ptr(col);
      const double* xd = t.val(x).data.data();
      for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < cols; ++c) s += g[r * cols + c] * xd[r * cols + c];
        gc[r] += s;
      }
    }
  });
}

Var Tape::elu(Var x) {
  Tensor y = val(x);
  for (double& v : y.data) v = v > 0.0 ? v : std::expm1(v);
  FNRI_CHECK_FINITE(y, "elu");
  return push(std::move(y), wants_grad(x), [x](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const Tensor& g = t.node(self).grad;
    const Tensor& y = t.node(self).value;
    double* gx = t.grad_ptr(x);
    // dy/dx = 1 for x > 0, exp(x) = y + 1 otherwise
    for (int64_t i = 0; i < g.size(); ++i)
      gx[i] += g.data[i] * (y.data[i] > 0.0 ? 1.0 : y.data[i] + 1.0);
  });
}

Var Tape::sigmoid(Var x) {
  Tensor y = val(x);
  for (double& v : y.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  FNRI_CHECK_FINITE(y, "sigmoid");
  return push(std::move(y), wants_grad(x), [x](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const Tensor& g = t.node(self).grad;
    const Tensor& y = t.node(self).value;
    double* gx = t.grad_ptr(x);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

Var Tape::exp(Var x) {
  Tensor y = val(x);
  for (double& v : y.data) v = std::exp(v);
  return push(std::move(y), wants_grad(x), [x](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const Tensor& g = t.node(self).grad;
    const Tensor& y = t.node(self).value;
    double* gx = t.grad_ptr(x);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g.data[i] * y.data[i];
  });
}

Var Tape::softmax_rows(Var x) {
  const Tensor& xv = val(x);
  const int64_t rows = xv.rows(), cols = xv.cols();
  Tensor y = Tensor::zeros({rows, cols});
  kernels::parallel_rows(rows, [&](int64_t r) {
    const double* xr = xv.data.data() + r * cols;
    double* yr = y.data.data() + r * cols;
    double mx = xr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    const double inv = 1.0 / sum;
    for (int64_t c = 0; c < cols; ++c) yr[c] *= inv;
  });
  FNRI_CHECK_FINITE(y, "softmax");
  return push(std::move(y), wants_grad(x), [x, rows, cols](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double* g = t.node(self).grad.data.data();
    const double* y = t.node(self).value.data.data();
    double* gx = t.grad_ptr(x);
    kernels::parallel_rows(rows, [&](int64_t r) {
      const double* gr = g + r * cols;
      const double* yr = y + r * cols;
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      for (int64_t c = 0; c < cols; ++c) gx[r * cols + c] += yr[c] * (gr[c] - dot);
    });
  });
}

Var Tape::logsoftmax_rows(Var x) {
  const Tensor& xv = val(x);
  const int64_t rows = xv.rows(), cols = xv.cols();
  Tensor y = Tensor::zeros({rows, cols});
  kernels::parallel_rows(rows, [&](int64_t r) {
    const double* xr = xv.data.data() + r * cols;
    double* yr = y.data.data() + r * cols;
    double mx = xr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (int64_t c = 0; c < cols; ++c) sum += std::exp(xr[c] - mx);
    const double lse = mx + std::log(sum);
    for (int64_t c = 0; c < cols; ++c) yr[c] = xr[c] - lse;
  });
  return push(std::move(y), wants_grad(x), [x, rows, cols](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double* g = t.node(self).grad.data.data();
    const double* y = t.node(self).value.data.data();
    double* gx = t.grad_ptr(x);
    kernels::parallel_rows(rows, [&](int64_t r) {
      const double* gr = g + r * cols;
      const double* yr = y + r * cols;
      double gsum = 0.0;
      for (int64_t c = 0; c < cols; ++c) gsum += gr[c];
      for (int64_t c = 0; c < cols; ++c) gx[r * cols + c] += gr[c] - std::exp(yr[c]) * gsum;
    });
  });
}

Var Tape::batchnorm(Var x, Var gamma, Var beta, Tensor& run_mean, Tensor& run_var, double eps,
                    double momentum) {
  const Tensor& xv = val(x);
  const int64_t rows = xv.rows(), cols = xv.cols();
  const Tensor& gv = val(gamma);
  const Tensor& bv = val(beta);
  if (gv.size() != cols || bv.size() != cols)
    throw ShapeError("batchnorm: scale/shift do not match feature count " + xv.shape_str());

  if (mode_ == Mode::eval) {
    Tensor y = Tensor::zeros({rows, cols});
    std::vector<double> inv_std(static_cast<size_t>(cols));
    for (int64_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(run_var.data[c] + eps);
    kernels::parallel_rows(rows, [&](int64_t r) {
      for (int64_t c = 0; c < cols; ++c)
        y.data[r * cols + c] =
            gv.data[c] * (xv.data[r * cols + c] - run_mean.data[c]) * inv_std[c] + bv.data[c];
    });
    bool ng = wants_grad(x) || wants_grad(gamma) || wants_grad(beta);
    auto scale = std::make_shared<std::vector<double>>(std::move(inv_std));
    Tensor rm = run_mean;  // frozen copies for the backward pass
    return push(std::move(y), ng,
                [x, gamma, beta, rows, cols, scale, rm](Tape& t, Var self) {
                  const double* g = t.node(self).grad.data.data();
                  const double* gam = t.val(gamma).data.data();
                  const double* xd = t.val(x).data.data();
                  if (t.wants_grad(x)) {
                    double* gx = t.grad_ptr(x);
                    for (int64_t r = 0; r < rows; ++r)
                      for (int64_t c = 0; c < cols; ++c)
                        gx[r * cols + c] += g[r * cols + c] * gam[c] * (*scale)[c];
                  }
                  if (t.wants_grad(gamma)) {
                    double* gg = t.grad_ptr(gamma);
                    for (int64_t r = 0; r < rows; ++r)
                      for (int64_t c = 0; c < cols; ++c)
                        gg[c] += g[r * cols + c] * (xd[r * cols + c] - rm.data[c]) * (*scale)[c];
                  }
                  if (t.wants_grad(beta)) kernels::col_sums(g, t.grad_ptr(beta), rows, cols, true);
                });
  }

  if (rows < 2) throw ContractError("batchnorm: train mode requires batch >= 2 rows");

  std::vector<double> mean(static_cast<size_t>(cols), 0.0), var(static_cast<size_t>(cols), 0.0);
  kernels::col_sums(xv.data.data(), mean.data(), rows, cols, false);
  for (int64_t c = 0; c < cols; ++c) mean[c] /= static_cast<double>(rows);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      const double d = xv.data[r * cols + c] - mean[c];
      var[c] += d * d;
    }
  for (int64_t c = 0; c < cols; ++c) var[c] /= static_cast<double>(rows);

  // Normalize by the biased batch variance; running variance keeps the
  // unbiased estimate.
  auto xhat = std::make_shared<Tensor>(Tensor::zeros({rows, cols}));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(cols));
  for (int64_t c = 0; c < cols; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + eps);
  Tensor y = Tensor::zeros({rows, cols});
  kernels::parallel_rows(rows, [&](int64_t r) {
    for (int64_t c = 0; c < cols; ++c) {
      const double xh = (xv.data[r * cols + c] - mean[c]) * (*inv_std)[c];
      xhat->data[r * cols + c] = xh;
      y.data[r * cols + c] = gv.data[c] * xh + bv.data[c];
    }
  });
  FNRI_CHECK_FINITE(y, "batchnorm");

  const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
  for (int64_t c = 0; c < cols; ++c) {
    run_mean.data[c] = (1.0 - momentum) * run_mean.data[c] + momentum * mean[c];
    run_var.data[c] = (1.0 - momentum) * run_var.data[c] + momentum * var[c] * unbias;
  }

  bool ng = wants_grad(x) || wants_grad(gamma) || wants_grad(beta);
  return push(std::move(y), ng, [x, gamma, beta, rows, cols, xhat, inv_std](Tape& t, Var self) {
    const double* g = t.node(self).grad.data.data();
    const double* gam = t.val(gamma).data.data();
    if (t.wants_grad(gamma)) {
      double* gg = t.grad_ptr(gamma);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xhat->data[r * cols + c];
    }
    if (t.wants_grad(beta)) kernels::col_sums(g, t.grad_ptr(beta), rows, cols, true);
    if (t.wants_grad(x)) {
      std::vector<double> gmean(static_cast<size_t>(cols), 0.0), gxhat_mean(static_cast<size_t>(cols), 0.0);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
          gmean[c] += g[r * cols + c];
          gxhat_mean[c] += g[r * cols + c] * xhat->data[r * cols + c];
        }
      const double inv_r = 1.0 / static_cast<double>(rows);
      for (int64_t c = 0; c < cols; ++c) {
        gmean[c] *= inv_r;
        gxhat_mean[c] *= inv_r;
      }
      double* gx = t.grad_ptr(x);
      kernels::parallel_rows(rows, [&](int64_t r) {
        for (int64_t c = 0; c < cols; ++c)
          gx[r * cols + c] += gam[c] * (*inv_std)[c] *
                              (g[r * cols + c] - gmean[c] - xhat->data[r * cols + c] * gxhat_mean[c]);
      });
    }
  });
}

Var Tape::dropout(Var x, double p, Rng& rng) {
  if (mode_ == Mode::eval || p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout: rate must be < 1");
  const Tensor& xv = val(x);
  const double keep = 1.0 - p;
  auto mask = std::make_shared<Tensor>(Tensor::zeros(xv.shape));
  Tensor y = Tensor::zeros(xv.shape);
  for (int64_t i = 0; i < xv.size(); ++i) {
    // inverted dropout: kept activations are scaled up at train time
    const double m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    mask->data[i] = m;
    y.data[i] = xv.data[i] * m;
  }
  return push(std::move(y), wants_grad(x), [x, mask](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const Tensor& g = t.node(self).grad;
    double* gx = t.grad_ptr(x);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g.data[i] * mask->data[i];
  });
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractError("concat_cols: empty input");
  const int64_t rows = val(xs[0]).rows();
  int64_t total = 0;
  bool ng = false;
  for (Var v : xs) {
    if (val(v).rows() != rows)
      throw ShapeError("concat_cols: row mismatch " + val(v).shape_str());
    total += val(v).cols();
    ng = ng || wants_grad(v);
  }
  Tensor y = Tensor::zeros({rows, total});
  int64_t off = 0;
  for (Var v : xs) {
    const Tensor& t = val(v);
    const int64_t c = t.cols();
    kernels::parallel_rows(rows, [&](int64_t r) {
      std::memcpy(y.data.data() + r * total + off, t.data.data() + r * c,
                  static_cast<size_t>(c) * sizeof(double));
    });
    off += c;
  }
  auto parts = std::make_shared<std::vector<Var>>(xs);
  return push(std::move(y), ng, [parts, rows, total](Tape& t, Var self) {
    const double* g = t.node(self).grad.data.data();
    int64_t off = 0;
    for (Var v : *parts) {
      const int64_t c = t.val(v).cols();
      if (t.wants_grad(v)) {
        double* gv = t.grad_ptr(v);
        for (int64_t r = 0; r < rows; ++r)
          kernels::axpy(1.0, g + r * total + off, gv + r * c, c);
      }
      off += c;
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractError("concat_rows: empty input");
  const int64_t cols = val(xs[0]).cols();
  int64_t total = 0;
  bool ng = false;
  for (Var v : xs) {
    if (val(v).cols() != cols)
      throw ShapeError("concat_rows: column mismatch " + val(v).shape_str());
    total += val(v).rows();
    ng = ng || wants_grad(v);
  }
  Tensor y = Tensor::zeros({total, cols});
  int64_t off = 0;
  for (Var v : xs) {
    const Tensor& t = val(v);
    std::memcpy(y.data.data() + off * cols, t.data.data(), t.data.size() * sizeof(double));
    off += t.rows();
  }
  auto parts = std::make_shared<std::vector<Var>>(xs);
  return push(std::move(y), ng, [parts, cols](Tape& t, Var self) {
    const double* g = t.node(self).grad.data.data();
    int64_t off = 0;
    for (Var v : *parts) {
      const int64_t r = t.val(v).rows();
      if (t.wants_grad(v)) kernels::axpy(1.0, g + off * cols, t.grad_ptr(v), r * cols);
      off += r;
    }
  });
}

Var Tape::slice_cols(Var x, int64_t c0, int64_t c1) {
  const Tensor& xv = val(x);
  const int64_t rows = xv.rows(), cols = xv.cols();
  if (c0 < 0 || c1 > cols || c0 >= c1)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for " + xv.shape_str());
  const int64_t w = c1 - c0;
  Tensor y = Tensor::zeros({rows, w});
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(y.data.data() + r * w, xv.data.data() + r * cols + c0,
                static_cast<size_t>(w) * sizeof(double));
  return push(std::move(y), wants_grad(x), [x, c0, w, rows, cols](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double* g = t.node(self).grad.data.data();
    double* gx = t.grad_ptr(x);
    for (int64_t r = 0; r < rows; ++r)
      kernels::axpy(1.0, g + r * w, gx + r * cols + c0, w);
  });
}

Var Tape::gather_rows(Var x, std::shared_ptr<const std::vector<int64_t>> idx) {
  const Tensor& xv = val(x);
  const int64_t cols = xv.cols();
  const int64_t out_rows = static_cast<int64_t>(idx->size());
  Tensor y = Tensor::zeros({out_rows, cols});
  kernels::parallel_rows(out_rows, [&](int64_t r) {
    std::memcpy(y.data.data() + r * cols, xv.data.data() + (*idx)[static_cast<size_t>(r)] * cols,
                static_cast<size_t>(cols) * sizeof(double));
  });
  return push(std::move(y), wants_grad(x), [x, idx, out_rows, cols](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double* g = t.node(self).grad.data.data();
    double* gx = t.grad_ptr(x);
    // serial: indices repeat, and a fixed order keeps the sum deterministic
    for (int64_t r = 0; r < out_rows; ++r)
      kernels::axpy(1.0, g + r * cols, gx + (*idx)[static_cast<size_t>(r)] * cols, cols);
  });
}

Var Tape::scatter_sum_rows(Var x, std::shared_ptr<const std::vector<int64_t>> idx,
                           int64_t out_rows) {
  const Tensor& xv = val(x);
  const int64_t rows = xv.rows(), cols = xv.cols();
  if (static_cast<int64_t>(idx->size()) != rows)
    throw ShapeError("scatter_sum_rows: index count does not match " + xv.shape_str());
  Tensor y = Tensor::zeros({out_rows, cols});
  for (int64_t r = 0; r < rows; ++r)
    kernels::axpy(1.0, xv.data.data() + r * cols, y.data.data() + (*idx)[static_cast<size_t>(r)] * cols,
                  cols);
  return push(std::move(y), wants_grad(x), [x, idx, rows, cols](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double* g = t.node(self).grad.data.data();
    double* gx = t.grad_ptr(x);
    kernels::parallel_rows(rows, [&](int64_t r) {
      kernels::axpy(1.0, g + (*idx)[static_cast<size_t>(r)] * cols, gx + r * cols, cols);
    });
  });
}

Var Tape::select_cols(Var x, std::shared_ptr<const std::vector<int64_t>> idx) {
  const Tensor& xv = val(x);
  const int64_t rows = xv.rows(), cols = xv.cols();
  if (static_cast<int64_t>(idx->size()) != rows)
    throw ShapeError("select_cols: index count does not match " + xv.shape_str());
  Tensor y = Tensor::zeros({rows, 1});
  for (int64_t r = 0; r < rows; ++r) y.data[r] = xv.data[r * cols + (*idx)[static_cast<size_t>(r)]];
  return push(std::move(y), wants_grad(x), [x, idx, rows, cols](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double* g = t.node(self).grad.data.data();
    double* gx = t.grad_ptr(x);
    for (int64_t r = 0; r < rows; ++r) gx[r * cols + (*idx)[static_cast<size_t>(r)]] += g[r];
  });
}

Var Tape::hard_onehot_rows(Var soft) {
  const Tensor& sv = val(soft);
  const int64_t rows = sv.rows(), cols = sv.cols();
  Tensor y = Tensor::zeros({rows, cols});
  for (int64_t r = 0; r < rows; ++r) {
    int64_t best = 0;
    for (int64_t c = 1; c < cols; ++c)
      if (sv.data[r * cols + c] > sv.data[r * cols + best]) best = c;  // ties: lowest index
    y.data[r * cols + best] = 1.0;
  }
  // Straight-through: gradient of the hard sample is the soft sample's.
  return push(std::move(y), wants_grad(soft), [soft](Tape& t, Var self) {
    t.add_grad(soft, t.node(self).grad);
  });
}

Var Tape::row_sums(Var x) {
  const Tensor& xv = val(x);
  const int64_t rows = xv.rows(), cols = xv.cols();
  Tensor y = Tensor::zeros({rows, 1});
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < cols; ++c) s += xv.data[r * cols + c];
    y.data[r] = s;
  }
  return push(std::move(y), wants_grad(x), [x, rows, cols](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double* g = t.node(self).grad.data.data();
    double* gx = t.grad_ptr(x);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
  });
}

Var Tape::sum_all(Var x) {
  const Tensor& xv = val(x);
  double s = 0.0;
  for (double v : xv.data) s += v;
  return push(Tensor::scalar(s), wants_grad(x), [x](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double g = t.node(self).grad.data[0];
    double* gx = t.grad_ptr(x);
    const int64_t n = t.val(x).size();
    for (int64_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Var Tape::sumsq(Var x) {
  const Tensor& xv = val(x);
  double s = 0.0;
  for (double v : xv.data) s += v * v;
  return push(Tensor::scalar(s), wants_grad(x), [x](Tape& t, Var self) {
    if (!t.wants_grad(x)) return;
    const double g = 2.0 * t.node(self).grad.data[0];
    double* gx = t.grad_ptr(x);
    const Tensor& xv = t.val(x);
    for (int64_t i = 0; i < xv.size(); ++i) gx[i] += g * xv.data[i];
  });
}

Var Tape::bce_with_logits(Var logits, Tensor targets) {
  const Tensor& lv = val(logits);
  check_same_shape(lv, targets, "bce_with_logits");
  double s = 0.0;
  for (int64_t i = 0; i < lv.size(); ++i) {
    const double l = lv.data[i];
    // softplus(l) - t*l, computed stably for either sign of l
    s += (l > 0.0 ? l : 0.0) + std::log1p(std::exp(-std::fabs(l))) - targets.data[i] * l;
  }
  auto tgt = std::make_shared<Tensor>(std::move(targets));
  return push(Tensor::scalar(s), wants_grad(logits), [logits, tgt](Tape& t, Var self) {
    if (!t.wants_grad(logits)) return;
    const double g = t.node(self).grad.data[0];
    const Tensor& lv = t.val(logits);
    double* gx = t.grad_ptr(logits);
    for (int64_t i = 0; i < lv.size(); ++i) {
      const double l = lv.data[i];
      const double sig = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
      gx[i] += g * (sig - tgt->data[i]);
    }
  });
}

}  // namespace fnri::ad
