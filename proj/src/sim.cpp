#include "fnri/sim.hpp"

#include <algorithm>
#include <cmath>

#include "fnri/kernels.hpp"

namespace fnri::sim {

namespace {
constexpr double kSingularSeparation = 1e-6;  // m
constexpr int64_t kMaxResampleAttempts = 100;
}  // namespace

std::string system_name(System s) { return s == System::i_c ? "i+c" : "i+c+f"; }

System parse_system(const std::string& name) {
  if (name == "i+c") return System::i_c;
  if (name == "i+c+f") return System::i_c_f;
  throw ContractError("unknown system '" + name + "' (expected i+c or i+c+f)");
}

void SimConfig::validate() const {
  if (n < 2) throw ContractError("SimConfig: need at least 2 particles");
  if (k_ideal <= 0 || k_finite <= 0 || rest_length <= 0 || coulomb <= 0 || dt <= 0 ||
      box_half <= 0 || mass <= 0 || init_pos_std <= 0 || init_speed <= 0)
    throw ContractError("SimConfig: physical constants must be positive");
  if (subsample < 1) throw ContractError("SimConfig: subsample must be >= 1");
  if (t_record < 1) throw ContractError("SimConfig: t_record must be >= 1");
}

std::vector<std::string> SimConfig::layer_names() const {
  if (system == System::i_c) return {"ispring", "charge"};
  return {"ispring", "charge", "fspring"};
}

namespace {

// n_edges ~ Uniform{0..N(N-1)/2} placed on a random subset of unordered
// pairs, then symmetrized. The marginal probability a given pair is connected
// works out to exactly 0.5.
std::vector<uint8_t> sample_spring_layer(Rng& rng, int64_t n) {
  std::vector<std::pair<int64_t, int64_t>> pairs;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  const int64_t n_edges = rng.uniform_int(static_cast<int64_t>(pairs.size()) + 1);
  // partial Fisher-Yates: the first n_edges entries are the chosen subset
  for (int64_t k = 0; k < n_edges; ++k) {
    const int64_t pick = k + rng.uniform_int(static_cast<int64_t>(pairs.size()) - k);
    std::swap(pairs[static_cast<size_t>(k)], pairs[static_cast<size_t>(pick)]);
  }
  std::vector<uint8_t> layer(static_cast<size_t>(n * n), 0);
  for (int64_t k = 0; k < n_edges; ++k) {
    const auto [i, j] = pairs[static_cast<size_t>(k)];
    layer[static_cast<size_t>(i * n + j)] = 1;
    layer[static_cast<size_t>(j * n + i)] = 1;
  }
  return layer;
}

}  // namespace

InteractionGraph sample_interaction_graph(Rng& rng, const SimConfig& cfg) {
  const int64_t n = cfg.n;
  InteractionGraph g;

  g.layers.push_back(sample_spring_layer(rng, n));

  // charges: n_c ~ Uniform{1..N} particles get q = +1
  const int64_t n_charged = 1 + rng.uniform_int(n);
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  for (int64_t k = 0; k < n_charged; ++k) {
    const int64_t pick = k + rng.uniform_int(n - k);
    std::swap(order[static_cast<size_t>(k)], order[static_cast<size_t>(pick)]);
  }
  g.charge.assign(static_cast<size_t>(n), 0);
  for (int64_t k = 0; k < n_charged; ++k) g.charge[static_cast<size_t>(order[static_cast<size_t>(k)])] = 1;
  std::vector<uint8_t> charge_layer(static_cast<size_t>(n * n), 0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      if (i != j) charge_layer[static_cast<size_t>(i * n + j)] = g.charge[static_cast<size_t>(i)] & g.charge[static_cast<size_t>(j)];
  g.layers.push_back(std::move(charge_layer));

  if (cfg.system == System::i_c_f) g.layers.push_back(sample_spring_layer(rng, n));
  return g;
}

void net_force(const std::vector<Vec2>& pos, const InteractionGraph& graph, const SimConfig& cfg,
               std::vector<Vec2>& force) {
  const int64_t n = cfg.n;
  force.assign(static_cast<size_t>(n), Vec2{});
  const std::vector<uint8_t>& ispring = graph.layers[0];
  const std::vector<uint8_t>& charge = graph.layers[1];
  const std::vector<uint8_t>* fspring = graph.layers.size() > 2 ? &graph.layers[2] : nullptr;

  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i + 1; j < n; ++j) {
      const size_t ij = static_cast<size_t>(i * n + j);
      const bool has_i = ispring[ij] != 0;
      const bool has_c = charge[ij] != 0;
      const bool has_f = fspring && (*fspring)[ij] != 0;
      if (!has_i && !has_c && !has_f) continue;

      const double dx = pos[static_cast<size_t>(i)].x - pos[static_cast<size_t>(j)].x;
      const double dy = pos[static_cast<size_t>(i)].y - pos[static_cast<size_t>(j)].y;
      double fx = 0.0, fy = 0.0;

      if (has_i) {
        fx -= cfg.k_ideal * dx;
        fy -= cfg.k_ideal * dy;
      }
      if (has_c || has_f) {
        const double r2 = dx * dx + dy * dy;
        const double r = std::sqrt(r2);
        if (r < kSingularSeparation) throw SingularityError(i, j);
        if (has_f) {
          const double stretch = 1.0 - cfg.rest_length / r;  // (r - l)/r
          fx -= cfg.k_finite * stretch * dx;
          fy -= cfg.k_finite * stretch * dy;
        }
        if (has_c) {
          const double inv_r3 = 1.0 / (r2 * r);
          fx += cfg.coulomb * dx * inv_r3;
          fy += cfg.coulomb * dy * inv_r3;
        }
      }
      force[static_cast<size_t>(i)].x += fx;
      force[static_cast<size_t>(i)].y += fy;
      force[static_cast<size_t>(j)].x -= fx;
      force[static_cast<size_t>(j)].y -= fy;
    }
  }
}

int64_t reflect_walls(Vec2& pos, Vec2& vel, double box_half) {
  int64_t bounces = 0;
  while (pos.x > box_half || pos.x < -box_half) {
    pos.x = pos.x > box_half ? 2.0 * box_half - pos.x : -2.0 * box_half - pos.x;
    vel.x = -vel.x;
    ++bounces;
  }
  while (pos.y > box_half || pos.y < -box_half) {
    pos.y = pos.y > box_half ? 2.0 * box_half - pos.y : -2.0 * box_half - pos.y;
    vel.y = -vel.y;
    ++bounces;
  }
  return bounces;
}

int64_t leapfrog_step(std::vector<Vec2>& pos, std::vector<Vec2>& vel,
                      const InteractionGraph& graph, const SimConfig& cfg) {
  const int64_t n = cfg.n;
  const double half_dt_over_m = 0.5 * cfg.dt / cfg.mass;
  static thread_local std::vector<Vec2> force;

  net_force(pos, graph, cfg, force);
  for (int64_t i = 0; i < n; ++i) {
    vel[static_cast<size_t>(i)].x += half_dt_over_m * force[static_cast<size_t>(i)].x;
    vel[static_cast<size_t>(i)].y += half_dt_over_m * force[static_cast<size_t>(i)].y;
    pos[static_cast<size_t>(i)].x += cfg.dt * vel[static_cast<size_t>(i)].x;
    pos[static_cast<size_t>(i)].y += cfg.dt * vel[static_cast<size_t>(i)].y;
  }
  net_force(pos, graph, cfg, force);
  for (int64_t i = 0; i < n; ++i) {
    vel[static_cast<size_t>(i)].x += half_dt_over_m * force[static_cast<size_t>(i)].x;
    vel[static_cast<size_t>(i)].y += half_dt_over_m * force[static_cast<size_t>(i)].y;
  }

  int64_t bounces = 0;
  for (int64_t i = 0; i < n; ++i)
    bounces += reflect_walls(pos[static_cast<size_t>(i)], vel[static_cast<size_t>(i)], cfg.box_half);
  return bounces;
}

double total_energy(const std::vector<Vec2>& pos, const std::vector<Vec2>& vel,
                    const InteractionGraph& graph, const SimConfig& cfg) {
  const int64_t n = cfg.n;
  double e = 0.0;
  for (int64_t i = 0; i < n; ++i)
    e += 0.5 * cfg.mass *
         (vel[static_cast<size_t>(i)].x * vel[static_cast<size_t>(i)].x +
          vel[static_cast<size_t>(i)].y * vel[static_cast<size_t>(i)].y);
  const std::vector<uint8_t>& ispring = graph.layers[0];
  const std::vector<uint8_t>& charge = graph.layers[1];
  const std::vector<uint8_t>* fspring = graph.layers.size() > 2 ? &graph.layers[2] : nullptr;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const size_t ij = static_cast<size_t>(i * n + j);
      const double dx = pos[static_cast<size_t>(i)].x - pos[static_cast<size_t>(j)].x;
      const double dy = pos[static_cast<size_t>(i)].y - pos[static_cast<size_t>(j)].y;
      const double r = std::sqrt(dx * dx + dy * dy);
      if (ispring[ij]) e += 0.5 * cfg.k_ideal * r * r;
      if (fspring && (*fspring)[ij])
        e += 0.5 * cfg.k_finite * (r - cfg.rest_length) * (r - cfg.rest_length);
      if (charge[ij]) e += cfg.coulomb / r;
    }
  return e;
}

TrajectoryRecord simulate_example(uint64_t dataset_seed, int64_t example_index,
                                  const SimConfig& cfg) {
  cfg.validate();
  const int64_t n = cfg.n;
  for (int64_t attempt = 0; attempt < kMaxResampleAttempts; ++attempt) {
    const uint64_t stream_seed =
        Rng::mix(dataset_seed, {static_cast<uint64_t>(example_index), static_cast<uint64_t>(attempt)});
    Rng rng(stream_seed);
    InteractionGraph graph = sample_interaction_graph(rng, cfg);

    std::vector<Vec2> pos(static_cast<size_t>(n)), vel(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      pos[static_cast<size_t>(i)].x = rng.normal() * cfg.init_pos_std;
      pos[static_cast<size_t>(i)].y = rng.normal() * cfg.init_pos_std;
    }
    for (int64_t i = 0; i < n; ++i) {
      const double theta = rng.uniform() * 2.0 * M_PI;
      vel[static_cast<size_t>(i)].x = cfg.init_speed * std::cos(theta);
      vel[static_cast<size_t>(i)].y = cfg.init_speed * std::sin(theta);
    }

    TrajectoryRecord rec;
    rec.trajectory = Tensor::zeros({cfg.t_record, n, 4});
    rec.seed = stream_seed;
    try {
      for (int64_t t = 0; t < cfg.t_record; ++t) {
        for (int64_t s = 0; s < cfg.subsample; ++s)
          rec.wall_reflections += leapfrog_step(pos, vel, graph, cfg);
        double* row = rec.trajectory.data.data() + t * n * 4;
        for (int64_t i = 0; i < n; ++i) {
          row[i * 4 + 0] = pos[static_cast<size_t>(i)].x;
          row[i * 4 + 1] = pos[static_cast<size_t>(i)].y;
          row[i * 4 + 2] = vel[static_cast<size_t>(i)].x;
          row[i * 4 + 3] = vel[static_cast<size_t>(i)].y;
        }
      }
    } catch (const SingularityError&) {
      continue;  // resample this example with the next attempt seed
    }
    rec.graph = std::move(graph);
    return rec;
  }
  throw std::runtime_error("simulate_example: exceeded " + std::to_string(kMaxResampleAttempts) +
                           " resampling attempts for example " + std::to_string(example_index));
}

std::vector<TrajectoryRecord> generate(uint64_t dataset_seed, int64_t count, const SimConfig& cfg) {
  std::vector<TrajectoryRecord> out(static_cast<size_t>(count));
  kernels::parallel_rows(count, [&](int64_t i) { out[static_cast<size_t>(i)] = simulate_example(dataset_seed, i, cfg); });
  return out;
}

}  // namespace fnri::sim
