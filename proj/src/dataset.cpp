#include "fnri/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fnri::data {

using nlohmann::json;

namespace {

json sim_config_to_json(const sim::SimConfig& c) {
  return json{{"n", c.n},
              {"k_ideal", c.k_ideal},
              {"k_finite", c.k_finite},
              {"rest_length", c.rest_length},
              {"coulomb", c.coulomb},
              {"dt", c.dt},
              {"subsample", c.subsample},
              {"box_half", c.box_half},
              {"mass", c.mass},
              {"init_pos_std", c.init_pos_std},
              {"init_speed", c.init_speed},
              {"system", sim::system_name(c.system)},
              {"t_record", c.t_record}};
}

sim::SimConfig sim_config_from_json(const json& j) {
  sim::SimConfig c;
  c.n = j.at("n").get<int64_t>();
  c.k_ideal = j.at("k_ideal").get<double>();
  c.k_finite = j.at("k_finite").get<double>();
  c.rest_length = j.at("rest_length").get<double>();
  c.coulomb = j.at("coulomb").get<double>();
  c.dt = j.at("dt").get<double>();
  c.subsample = j.at("subsample").get<int64_t>();
  c.box_half = j.at("box_half").get<double>();
  c.mass = j.at("mass").get<double>();
  c.init_pos_std = j.at("init_pos_std").get<double>();
  c.init_speed = j.at("init_speed").get<double>();
  c.system = sim::parse_system(j.at("system").get<std::string>());
  c.t_record = j.at("t_record").get<int64_t>();
  return c;
}

}  // namespace

json DatasetHeader::to_json() const {
  json layers = json::array();
  for (size_t a = 0; a < layer_names.size(); ++a)
    layers.push_back({{"name", layer_names[a]}, {"k", layer_k[a]}});
  return json{{"magic", "FNRI1"},      {"version", 1},
              {"num_examples", num_examples}, {"N", n},
              {"T", t_record},         {"D", d},
              {"layers", layers},      {"sim", sim_config_to_json(sim_config)},
              {"seed", dataset_seed},  {"norm_max_abs", norm_max_abs}};
}

DatasetHeader DatasetHeader::from_json(const json& j) {
  DatasetHeader h;
  if (j.value("magic", "") != "FNRI1") throw FormatError("dataset: bad magic");
  if (j.value("version", 0) != 1) throw FormatError("dataset: unsupported version");
  h.num_examples = j.at("num_examples").get<int64_t>();
  h.n = j.at("N").get<int64_t>();
  h.t_record = j.at("T").get<int64_t>();
  h.d = j.at("D").get<int64_t>();
  for (const auto& l : j.at("layers")) {
    h.layer_names.push_back(l.at("name").get<std::string>());
    h.layer_k.push_back(l.at("k").get<int64_t>());
  }
  h.sim_config = sim_config_from_json(j.at("sim"));
  h.dataset_seed = j.at("seed").get<uint64_t>();
  h.norm_max_abs = j.at("norm_max_abs").get<std::array<double, 4>>();
  return h;
}

Tensor Dataset::batch_trajectories(const std::vector<int64_t>& idx) const {
  const int64_t b = static_cast<int64_t>(idx.size());
  const int64_t stride = traj_stride();
  Tensor out = Tensor::zeros({b, header.t_record, header.n, header.d});
  for (int64_t e = 0; e < b; ++e) {
    const float* src = traj.data() + idx[static_cast<size_t>(e)] * stride;
    double* dst = out.data.data() + e * stride;
    for (int64_t i = 0; i < stride; ++i) dst[i] = static_cast<double>(src[i]);
  }
  return out;
}

uint8_t Dataset::pair_label(int64_t example, int64_t layer, int64_t i, int64_t j) const {
  return labels[static_cast<size_t>(example * label_stride() + layer * header.n * header.n +
                                    i * header.n + j)];
}

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<sim::TrajectoryRecord>& records) {
  if (static_cast<int64_t>(records.size()) != header.num_examples)
    throw ContractError("write_dataset: record count does not match header");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("dataset: cannot open " + path + " for writing");

  const std::string hs = header.to_json().dump();
  const uint32_t len = static_cast<uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  const int64_t stride = header.t_record * header.n * header.d;
  std::vector<float> fbuf(static_cast<size_t>(stride));
  for (const auto& rec : records) {
    if (rec.trajectory.size() != stride)
      throw ContractError("write_dataset: trajectory shape " + rec.trajectory.shape_str() +
                          " does not match header");
    for (int64_t i = 0; i < stride; ++i)
      fbuf[static_cast<size_t>(i)] = static_cast<float>(rec.trajectory.data[static_cast<size_t>(i)]);
    f.write(reinterpret_cast<const char*>(fbuf.data()),
            static_cast<std::streamsize>(fbuf.size() * sizeof(float)));
    for (const auto& layer : rec.graph.layers)
      f.write(reinterpret_cast<const char*>(layer.data()),
              static_cast<std::streamsize>(layer.size()));
  }
  if (!f) throw FormatError("dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("dataset: cannot open " + path);
  f.seekg(0, std::ios::end);
  const int64_t file_size = static_cast<int64_t>(f.tellg());
  f.seekg(0);

  uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || file_size < static_cast<int64_t>(sizeof(len)) + len)
    throw FormatError("dataset: truncated header at offset 0 in " + path);
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  json hj = json::parse(hs, nullptr, false);
  if (hj.is_discarded()) throw FormatError("dataset: unparsable header at offset 4 in " + path);

  Dataset ds;
  ds.header = DatasetHeader::from_json(hj);
  const int64_t payload_offset = static_cast<int64_t>(sizeof(len)) + len;
  const int64_t expect = ds.header.num_examples *
                         (ds.traj_stride() * static_cast<int64_t>(sizeof(float)) + ds.label_stride());
  if (file_size - payload_offset != expect)
    throw FormatError("dataset: payload length " + std::to_string(file_size - payload_offset) +
                      " != expected " + std::to_string(expect) + " at offset " +
                      std::to_string(payload_offset) + " in " + path);

  ds.traj.resize(static_cast<size_t>(ds.header.num_examples * ds.traj_stride()));
  ds.labels.resize(static_cast<size_t>(ds.header.num_examples * ds.label_stride()));
  float* tp = ds.traj.data();
  uint8_t* lp = ds.labels.data();
  for (int64_t e = 0; e < ds.header.num_examples; ++e) {
    f.read(reinterpret_cast<char*>(tp), ds.traj_stride() * static_cast<std::streamsize>(sizeof(float)));
    f.read(reinterpret_cast<char*>(lp), ds.label_stride());
    tp += ds.traj_stride();
    lp += ds.label_stride();
  }
  if (!f) throw FormatError("dataset: truncated payload in " + path);
  return ds;
}

std::array<double, 4> compute_max_abs(const std::vector<sim::TrajectoryRecord>& records) {
  std::array<double, 4> m{0.0, 0.0, 0.0, 0.0};
  for (const auto& rec : records) {
    const int64_t n = rec.trajectory.size() / 4;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t d = 0; d < 4; ++d)
        m[static_cast<size_t>(d)] =
            std::max(m[static_cast<size_t>(d)], std::fabs(rec.trajectory.data[static_cast<size_t>(i * 4 + d)]));
  }
  return m;
}

void normalize(Dataset& ds) {
  if (ds.normalized) return;
  std::array<float, 4> inv{1.f, 1.f, 1.f, 1.f};
  for (size_t d = 0; d < 4; ++d)
    if (ds.header.norm_max_abs[d] > 0.0) inv[d] = static_cast<float>(1.0 / ds.header.norm_max_abs[d]);
  const int64_t n = static_cast<int64_t>(ds.traj.size()) / 4;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t d = 0; d < 4; ++d) ds.traj[static_cast<size_t>(i * 4 + d)] *= inv[static_cast<size_t>(d)];
  ds.normalized = true;
}

void denormalize_states(Tensor& states, const DatasetHeader& header) {
  const int64_t n = states.size() / 4;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t d = 0; d < 4; ++d)
      if (header.norm_max_abs[static_cast<size_t>(d)] > 0.0)
        states.data[static_cast<size_t>(i * 4 + d)] *= header.norm_max_abs[static_cast<size_t>(d)];
}

std::pair<Tensor, Tensor> split_halves(const Tensor& batch) {
  if (batch.shape.size() != 4) throw ContractError("split_halves: expected [B,T,N,D]");
  const int64_t b = batch.shape[0], t = batch.shape[1], n = batch.shape[2], d = batch.shape[3];
  if (t % 2 != 0) throw ContractError("split_halves: T must be even, got " + std::to_string(t));
  const int64_t half = t / 2;
  Tensor first = Tensor::zeros({b, half, n, d});
  Tensor second = Tensor::zeros({b, half, n, d});
  const int64_t slab = n * d;
  for (int64_t e = 0; e < b; ++e)
    for (int64_t s = 0; s < half; ++s) {
      std::copy_n(batch.data.data() + (e * t + s) * slab, slab,
                  first.data.data() + (e * half + s) * slab);
      std::copy_n(batch.data.data() + (e * t + half + s) * slab, slab,
                  second.data.data() + (e * half + s) * slab);
    }
  return {std::move(first), std::move(second)};
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t num, int64_t batch_size,
                                                uint64_t shuffle_seed) {
  if (batch_size < 1 || batch_size > num)
    throw ContractError("epoch_batches: batch size " + std::to_string(batch_size) +
                        " invalid for " + std::to_string(num) + " examples");
  std::vector<int64_t> order(static_cast<size_t>(num));
  for (int64_t i = 0; i < num; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(shuffle_seed);
  for (int64_t i = num - 1; i > 0; --i) {
    const int64_t j = rng.uniform_int(i + 1);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  std::vector<std::vector<int64_t>> batches;
  for (int64_t off = 0; off < num; off += batch_size) {
    const int64_t end = std::min(off + batch_size, num);
    batches.emplace_back(order.begin() + off, order.begin() + end);
  }
  return batches;
}

}  // namespace fnri::data
