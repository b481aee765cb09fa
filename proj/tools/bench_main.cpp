// Timing comparison between the OpenMP kernel drivers and the serial path,
// on matmul shapes the models actually hit, plus one encoder forward/backward
// and a block of simulator examples.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "fnri/dataset.hpp"
#include "fnri/kernels.hpp"
#include "fnri/model.hpp"
#include "fnri/rng.hpp"
#include "fnri/sim.hpp"

using namespace fnri;

namespace {

double time_ms(const std::function<void()>& fn, int iters) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-34s serial %9.3f ms   omp(%d thr) %9.3f ms   speedup %5.2fx\n", name, serial_ms,
              kernels::thread_count(), parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
  Rng rng(7);
  auto randt = [&](int64_t r, int64_t c) {
    Tensor t = Tensor::zeros({r, c});
    for (double& v : t.data) v = rng.uniform() - 0.5;
    return t;
  };

  struct Case {
    const char* name;
    int64_t m, k, n;
    int iters;
  };
  const Case cases[] = {
      {"matmul 2560x200 * 200x64", 2560, 200, 64, 50},
      {"matmul 2560x64 * 64x64", 2560, 64, 64, 100},
      {"matmul 2560x8 * 8x64", 2560, 8, 64, 200},
      {"matmul 2560x64 * 64x256", 2560, 64, 256, 30},
  };
  for (const auto& c : cases) {
    Tensor a = randt(c.m, c.k), b = randt(c.k, c.n), out = Tensor::zeros({c.m, c.n});
    auto body = [&] {
      kernels::matmul(a.data.data(), b.data.data(), out.data.data(), c.m, c.k, c.n, false);
    };
    kernels::set_parallel(false);
    const double s = time_ms(body, c.iters);
    kernels::set_parallel(true);
    const double p = time_ms(body, c.iters);
    report(c.name, s, p);
  }

  {
    ad::ParameterStore store;
    Rng init(1);
    model::Encoder enc(store, {5, 50, 4, 64, 4}, init);
    Tensor traj = Tensor::zeros({128, 50, 5, 4});
    for (double& v : traj.data) v = rng.uniform() - 0.5;
    auto body = [&] {
      ad::Tape t(ad::Mode::train);
      ad::Var logits = enc.logits(t, traj);
      ad::Var loss = t.sumsq(logits);
      store.zero_grads();
      t.backward(loss);
    };
    kernels::set_parallel(false);
    const double s = time_ms(body, 5);
    kernels::set_parallel(true);
    const double p = time_ms(body, 5);
    report("encoder fwd+bwd (B=128, h=64)", s, p);
  }

  {
    sim::SimConfig cfg;
    auto body = [&] { sim::generate(11, 8, cfg); };
    kernels::set_parallel(false);
    const double s = time_ms(body, 3);
    kernels::set_parallel(true);
    const double p = time_ms(body, 3);
    report("simulate 8 examples", s, p);
  }
  return 0;
}
