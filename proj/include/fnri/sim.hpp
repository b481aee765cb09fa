#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnri/rng.hpp"
#include "fnri/tensor.hpp"

namespace fnri::sim {

enum class System { i_c, i_c_f };

std::string system_name(System s);
System parse_system(const std::string& name);

struct SimConfig {
  int64_t n = 5;               // particles
  double k_ideal = 0.1;        // N/m, zero-length spring
  double k_finite = 0.1;       // N/m, finite spring
  double rest_length = 1.0;    // m
  double coulomb = 0.2;        // N m^2
  double dt = 1e-3;            // s
  int64_t subsample = 100;     // integrator steps per recorded sample
  double box_half = 2.5;       // m
  double mass = 1.0;           // kg
  double init_pos_std = 0.5;   // m
  double init_speed = 0.5;     // m/s
  System system = System::i_c;
  int64_t t_record = 100;      // recorded samples per example

  void validate() const;
  int64_t num_layers() const { return system == System::i_c ? 2 : 3; }
  std::vector<std::string> layer_names() const;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// One label matrix per interaction layer, in order {I-spring, charge[,
// F-spring]}. Entries are {0,1} with zero diagonal; spring layers are
// symmetric, the charge layer is the outer product q q^T off the diagonal.
struct InteractionGraph {
  std::vector<std::vector<uint8_t>> layers;  // each N*N row-major
  std::vector<uint8_t> charge;               // q_i in {0, 1}
};

struct TrajectoryRecord {
  Tensor trajectory;  // [T, N, 4] = (x, y, vx, vy)
  InteractionGraph graph;
  uint64_t seed = 0;           // derived stream seed of the accepted attempt
  int64_t wall_reflections = 0;
};

// Interacting pair closer than the singularity threshold.
struct SingularityError : std::runtime_error {
  SingularityError(int64_t i_, int64_t j_)
      : std::runtime_error("singular separation between particles " + std::to_string(i_) +
                           " and " + std::to_string(j_)),
        i(i_),
        j(j_) {}
  int64_t i, j;
};

InteractionGraph sample_interaction_graph(Rng& rng, const SimConfig& cfg);

// F_i = sum_j [ -kI (r_i - r_j) I_ij - kF (r_i - r_j - l u_ij) F_ij
//               + q_i q_j C u_ij / |r_ij|^2 ]
void net_force(const std::vector<Vec2>& pos, const InteractionGraph& graph, const SimConfig& cfg,
               std::vector<Vec2>& force);

// Kick-drift-kick step followed by wall reflection; returns reflection count.
int64_t leapfrog_step(std::vector<Vec2>& pos, std::vector<Vec2>& vel,
                      const InteractionGraph& graph, const SimConfig& cfg);

// Mirrors a coordinate back inside [-box_half, box_half], negating the
// matching velocity component; repeats until inside. Returns bounce count.
int64_t reflect_walls(Vec2& pos, Vec2& vel, double box_half);

// Kinetic + spring + Coulomb energy; used by conservation checks.
double total_energy(const std::vector<Vec2>& pos, const std::vector<Vec2>& vel,
                    const InteractionGraph& graph, const SimConfig& cfg);

TrajectoryRecord simulate_example(uint64_t dataset_seed, int64_t example_index,
                                  const SimConfig& cfg);

// Generates count examples; parallel over examples. Every example derives its
// RNG stream from (dataset_seed, index), so the result is independent of the
// execution order.
std::vector<TrajectoryRecord> generate(uint64_t dataset_seed, int64_t count, const SimConfig& cfg);

}  // namespace fnri::sim
