#include "fnri/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace fnri::nn {

using nlohmann::json;

Tensor xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::zeros({fan_in, fan_out});
  for (double& v : w.data) v = (2.0 * rng.uniform() - 1.0) * a;
  return w;
}

Mlp::Mlp(ad::ParameterStore& store, std::string prefix, MlpConfig cfg, Rng& init_rng)
    : store_(&store), prefix_(std::move(prefix)), cfg_(cfg) {
  if (cfg.in <= 0 || cfg.hidden <= 0 || cfg.out <= 0)
    throw ContractError("Mlp: widths must be positive for " + prefix_);
  store.create(prefix_ + ".w1", xavier_uniform(cfg.in, cfg.hidden, init_rng));
  store.create(prefix_ + ".b1", Tensor::zeros({1, cfg.hidden}));
  store.create(prefix_ + ".w2", xavier_uniform(cfg.hidden, cfg.out, init_rng));
  store.create(prefix_ + ".b2", Tensor::zeros({1, cfg.out}));
  if (cfg.bn_position == BnPosition::end) {
    store.create(prefix_ + ".bn_gamma", Tensor::full({1, cfg.out}, 1.0));
    store.create(prefix_ + ".bn_beta", Tensor::zeros({1, cfg.out}));
    store.create(prefix_ + ".bn_mean", Tensor::zeros({1, cfg.out}), /*trainable=*/false);
    store.create(prefix_ + ".bn_var", Tensor::full({1, cfg.out}, 1.0), /*trainable=*/false);
  }
  if (cfg.head_out > 0) {
    store.create(prefix_ + ".w3", xavier_uniform(cfg.out, cfg.head_out, init_rng));
    store.create(prefix_ + ".b3", Tensor::zeros({1, cfg.head_out}));
  }
}

ad::Var Mlp::apply(ad::Tape& t, ad::Var x, double dropout_p, Rng* dropout_rng) const {
  ad::ParameterStore& s = *store_;
  ad::Var h = t.elu(t.linear(x, t.param(s, prefix_ + ".w1"), t.param(s, prefix_ + ".b1")));
  if (dropout_p > 0.0 && dropout_rng) h = t.dropout(h, dropout_p, *dropout_rng);
  h = t.elu(t.linear(h, t.param(s, prefix_ + ".w2"), t.param(s, prefix_ + ".b2")));
  if (cfg_.bn_position == BnPosition::end) {
    h = t.batchnorm(h, t.param(s, prefix_ + ".bn_gamma"), t.param(s, prefix_ + ".bn_beta"),
                    s.value(prefix_ + ".bn_mean"), s.value(prefix_ + ".bn_var"));
  }
  if (cfg_.head_out > 0)
    h = t.linear(h, t.param(s, prefix_ + ".w3"), t.param(s, prefix_ + ".b3"));
  return h;
}

uint64_t fnv1a_hash(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

void save_checkpoint(const std::string& path, const ad::ParameterStore& store,
                     const json& config) {
  json header;
  header["magic"] = "FNRICKPT";
  header["version"] = 1;
  header["config"] = config;
  header["config_hash"] = fnv1a_hash(config.dump());
  json entries = json::array();
  auto names = store.names();
  for (const auto& name : names) {
    const Tensor& v = store.value(name);
    entries.push_back({{"name", name}, {"shape", v.shape}, {"trainable", store.trainable(name)}});
  }
  header["params"] = entries;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open " + path + " for writing");
  const std::string hs = header.dump();
  const uint32_t len = static_cast<uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& name : names) {
    const Tensor& v = store.value(name);
    f.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(double)));
  }
  if (!f) throw FormatError("checkpoint: write failed for " + path);
}

json load_checkpoint(const std::string& path, ad::ParameterStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path);
  uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f) throw FormatError("checkpoint: truncated header length at offset 0 in " + path);
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  if (!f) throw FormatError("checkpoint: truncated header at offset 4 in " + path);
  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded() || header.value("magic", "") != "FNRICKPT")
    throw FormatError("checkpoint: bad magic in " + path);

  for (const auto& e : header.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    const std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
    const bool trainable = e.at("trainable").get<bool>();
    Tensor t = Tensor::zeros(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f)
      throw FormatError("checkpoint: truncated payload for " + name + " in " + path);
    if (store.has(name)) {
      Tensor& dst = store.value(name);
      if (dst.shape != shape)
        throw FormatError("checkpoint: shape mismatch for " + name + ", file " + t.shape_str() +
                          " vs store " + dst.shape_str());
      dst = std::move(t);
    } else {
      store.create(name, std::move(t), trainable);
    }
  }
  return header.at("config");
}

}  // namespace fnri::nn
