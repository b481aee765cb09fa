#include "fnri/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fnri::eval {

using model::FactorisationScheme;
using model::Variant;
using nlohmann::json;

std::vector<uint8_t> discretize(const Tensor& activations, const FactorisationScheme& s) {
  const int64_t rows = activations.rows();
  const int64_t layers = s.num_layers();
  std::vector<uint8_t> out(static_cast<size_t>(rows * layers), 0);
  if (s.variant == Variant::sfnri) {
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t a = 0; a < layers; ++a)
        out[static_cast<size_t>(r * layers + a)] = activations.at(r, a) > 0.5 ? 1 : 0;
    return out;
  }
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t a = 0; a < layers; ++a) {
      const int64_t off = s.layer_offset(a);
      const int64_t ka = s.layer_sizes[static_cast<size_t>(a)];
      int64_t best = 0;
      for (int64_t c = 1; c < ka; ++c)
        if (activations.at(r, off + c) > activations.at(r, off + best)) best = c;
      out[static_cast<size_t>(r * layers + a)] = static_cast<uint8_t>(best);
    }
  return out;
}

namespace {

int64_t space_size(const std::vector<int64_t>& sizes) {
  int64_t p = 1;
  for (int64_t s : sizes) p *= s;
  return p;
}

// Combined label from per-layer labels, first layer most significant.
int64_t pack(const std::vector<int64_t>& labels, const std::vector<int64_t>& sizes) {
  int64_t c = 0;
  for (size_t a = 0; a < sizes.size(); ++a) c = c * sizes[a] + labels[a];
  return c;
}

std::vector<int64_t> unpack(int64_t combined, const std::vector<int64_t>& sizes) {
  std::vector<int64_t> labels(sizes.size());
  for (size_t a = sizes.size(); a-- > 0;) {
    labels[a] = combined % sizes[a];
    combined /= sizes[a];
  }
  return labels;
}

std::string map_key(const std::vector<int64_t>& table) {
  std::string k;
  for (size_t p = 0; p < table.size(); ++p) {
    if (p) k += ",";
    k += std::to_string(p) + ">" + std::to_string(table[p]);
  }
  return k;
}

void permutations_of(int64_t n, std::vector<std::vector<int64_t>>& out) {
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    out.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

}  // namespace

std::vector<PermutationMap> enumerate_maps(const std::vector<int64_t>& pred_layer_sizes,
                                           const std::vector<int64_t>& gt_layer_sizes) {
  for (int64_t g : gt_layer_sizes)
    if (g != 2) throw ContractError("enumerate_maps: ground-truth layers must be binary");
  const int64_t n_gt = static_cast<int64_t>(gt_layer_sizes.size());
  const int64_t gt_space = space_size(gt_layer_sizes);
  std::vector<PermutationMap> maps;

  if (pred_layer_sizes.size() == 1 && n_gt > 1) {
    // Single latent graph (NRI): every permutation of the K combined labels.
    const int64_t k = pred_layer_sizes[0];
    if (k != gt_space)
      throw ContractError("enumerate_maps: single-layer K=" + std::to_string(k) +
                          " cannot encode " + std::to_string(n_gt) + " binary layers");
    std::vector<std::vector<int64_t>> perms;
    permutations_of(k, perms);
    for (auto& p : perms) maps.push_back({p, map_key(p)});
    return maps;
  }

  if (static_cast<int64_t>(pred_layer_sizes.size()) != n_gt)
    throw ContractError("enumerate_maps: predicted layer count does not match ground truth");
  for (int64_t s : pred_layer_sizes)
    if (s != 2) throw ContractError("enumerate_maps: predicted layers must be binary here");

  // Layer assignments x within-layer label permutations. All layers have
  // K_a = 2, so every layer bijection is size-compatible and each layer
  // contributes identity-or-swap.
  std::vector<std::vector<int64_t>> assigns;
  permutations_of(n_gt, assigns);
  const int64_t pred_space = space_size(pred_layer_sizes);
  for (const auto& assign : assigns) {
    for (int64_t flip_bits = 0; flip_bits < (int64_t{1} << n_gt); ++flip_bits) {
      std::vector<int64_t> table(static_cast<size_t>(pred_space));
      for (int64_t pc = 0; pc < pred_space; ++pc) {
        const auto pred_labels = unpack(pc, pred_layer_sizes);
        std::vector<int64_t> gt_labels(static_cast<size_t>(n_gt));
        for (int64_t a = 0; a < n_gt; ++a) {
          int64_t lab = pred_labels[static_cast<size_t>(assign[static_cast<size_t>(a)])];
          if ((flip_bits >> a) & 1) lab = 1 - lab;
          gt_labels[static_cast<size_t>(a)] = lab;
        }
        table[static_cast<size_t>(pc)] = pack(gt_labels, gt_layer_sizes);
      }
      maps.push_back({table, map_key(table)});
    }
  }
  // Layer permutations can collide (e.g. symmetric schemes); deduplicate so
  // ties resolve on distinct tables only.
  std::sort(maps.begin(), maps.end(),
            [](const PermutationMap& a, const PermutationMap& b) { return a.table < b.table; });
  maps.erase(std::unique(maps.begin(), maps.end(),
                         [](const PermutationMap& a, const PermutationMap& b) {
                           return a.table == b.table;
                         }),
             maps.end());
  return maps;
}

namespace {

struct JointCounts {
  int64_t pred_space = 0, gt_space = 0, total = 0;
  std::vector<int64_t> count;  // [pred_space][gt_space]

  int64_t& at(int64_t pc, int64_t gc) { return count[static_cast<size_t>(pc * gt_space + gc)]; }
  int64_t at(int64_t pc, int64_t gc) const { return count[static_cast<size_t>(pc * gt_space + gc)]; }
};

JointCounts joint_counts(const std::vector<uint8_t>& pred,
                         const std::vector<int64_t>& pred_layer_sizes,
                         const std::vector<uint8_t>& gt, const std::vector<int64_t>& gt_layer_sizes,
                         int64_t row_begin, int64_t row_end) {
  const size_t npl = pred_layer_sizes.size();
  const size_t ngl = gt_layer_sizes.size();
  JointCounts jc;
  jc.pred_space = space_size(pred_layer_sizes);
  jc.gt_space = space_size(gt_layer_sizes);
  jc.count.assign(static_cast<size_t>(jc.pred_space * jc.gt_space), 0);
  for (int64_t r = row_begin; r < row_end; ++r) {
    int64_t pc = 0;
    for (size_t a = 0; a < npl; ++a)
      pc = pc * pred_layer_sizes[a] + pred[static_cast<size_t>(r) * npl + a];
    int64_t gc = 0;
    for (size_t a = 0; a < ngl; ++a)
      gc = gc * gt_layer_sizes[a] + gt[static_cast<size_t>(r) * ngl + a];
    ++jc.at(pc, gc);
    ++jc.total;
  }
  return jc;
}

std::vector<double> per_example_accuracy(const std::vector<uint8_t>& pred,
                                         const std::vector<int64_t>& pred_layer_sizes,
                                         const std::vector<uint8_t>& gt,
                                         const std::vector<int64_t>& gt_layer_sizes,
                                         const PermutationMap& map, int64_t pairs_per_example) {
  const size_t npl = pred_layer_sizes.size();
  const size_t ngl = gt_layer_sizes.size();
  const int64_t rows = static_cast<int64_t>(pred.size() / npl);
  std::vector<double> out;
  for (int64_t begin = 0; begin < rows; begin += pairs_per_example) {
    int64_t hits = 0;
    for (int64_t r = begin; r < begin + pairs_per_example; ++r) {
      int64_t pc = 0;
      for (size_t a = 0; a < npl; ++a)
        pc = pc * pred_layer_sizes[a] + pred[static_cast<size_t>(r) * npl + a];
      int64_t gc = 0;
      for (size_t a = 0; a < ngl; ++a)
        gc = gc * gt_layer_sizes[a] + gt[static_cast<size_t>(r) * ngl + a];
      if (map.table[static_cast<size_t>(pc)] == gc) ++hits;
    }
    out.push_back(static_cast<double>(hits) / static_cast<double>(pairs_per_example));
  }
  return out;
}

const PermutationMap* best_map(const JointCounts& jc, const std::vector<PermutationMap>& maps,
                               int64_t* best_hits_out) {
  const PermutationMap* best = nullptr;
  int64_t best_hits = -1;
  for (const auto& m : maps) {
    int64_t hits = 0;
    for (int64_t pc = 0; pc < jc.pred_space; ++pc) hits += jc.at(pc, m.table[static_cast<size_t>(pc)]);
    if (hits > best_hits || (hits == best_hits && best && m.table < best->table)) {
      best_hits = hits;
      best = &m;
    }
  }
  if (best_hits_out) *best_hits_out = best_hits;
  return best;
}

}  // namespace

EdgeAccuracy edge_accuracy(const std::vector<uint8_t>& pred,
                           const std::vector<int64_t>& pred_layer_sizes,
                           const std::vector<uint8_t>& gt,
                           const std::vector<int64_t>& gt_layer_sizes) {
  if (pred.size() % pred_layer_sizes.size() != 0 || gt.size() % gt_layer_sizes.size() != 0 ||
      pred.size() / pred_layer_sizes.size() != gt.size() / gt_layer_sizes.size())
    throw ContractError("edge_accuracy: label array sizes disagree with schemes");
  const int64_t rows = static_cast<int64_t>(pred.size() / pred_layer_sizes.size());
  const auto maps = enumerate_maps(pred_layer_sizes, gt_layer_sizes);
  const JointCounts jc = joint_counts(pred, pred_layer_sizes, gt, gt_layer_sizes, 0, rows);

  int64_t hits = 0;
  const PermutationMap* chosen = best_map(jc, maps, &hits);

  EdgeAccuracy acc;
  acc.map = *chosen;
  acc.combined = jc.total ? static_cast<double>(hits) / static_cast<double>(jc.total) : 0.0;
  const int64_t n_gt = static_cast<int64_t>(gt_layer_sizes.size());
  acc.per_type.assign(static_cast<size_t>(n_gt), 0.0);
  for (int64_t a = 0; a < n_gt; ++a) {
    int64_t type_hits = 0;
    const int64_t shift = n_gt - 1 - a;
    for (int64_t pc = 0; pc < jc.pred_space; ++pc) {
      const int64_t mapped_bit = (chosen->table[static_cast<size_t>(pc)] >> shift) & 1;
      for (int64_t gc = 0; gc < jc.gt_space; ++gc)
        if (((gc >> shift) & 1) == mapped_bit) type_hits += jc.at(pc, gc);
    }
    acc.per_type[static_cast<size_t>(a)] =
        jc.total ? static_cast<double>(type_hits) / static_cast<double>(jc.total) : 0.0;
  }
  return acc;
}

std::map<std::string, int64_t> permutation_histogram(const std::vector<uint8_t>& pred,
                                                     const std::vector<int64_t>& pred_layer_sizes,
                                                     const std::vector<uint8_t>& gt,
                                                     const std::vector<int64_t>& gt_layer_sizes,
                                                     int64_t pairs_per_batch) {
  const int64_t rows = static_cast<int64_t>(pred.size() / pred_layer_sizes.size());
  const auto maps = enumerate_maps(pred_layer_sizes, gt_layer_sizes);
  std::map<std::string, int64_t> hist;
  for (int64_t begin = 0; begin < rows; begin += pairs_per_batch) {
    const int64_t end = std::min(begin + pairs_per_batch, rows);
    const JointCounts jc = joint_counts(pred, pred_layer_sizes, gt, gt_layer_sizes, begin, end);
    ++hist[best_map(jc, maps, nullptr)->key];
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Model-driven protocol

json EvalReport::to_json() const {
  json j{{"model", model}, {"mode", mode}, {"num_examples", num_examples}};
  if (has_edge_metrics) {
    json per_type = json::object();
    for (size_t a = 0; a < type_names.size(); ++a) per_type[type_names[a]] = per_type_acc[a];
    j["edge_accuracy"] = {{"combined", combined_acc},
                          {"per_type", per_type},
                          {"chosen_map", chosen_map},
                          {"permutation_histogram", perm_histogram}};
  } else {
    j["edge_accuracy"] = nullptr;
  }
  if (has_mse) {
    json m = json::object(), ms = json::object();
    for (size_t i = 0; i < steps.size(); ++i) {
      m[std::to_string(steps[i])] = mse[i];
      ms[std::to_string(steps[i])] = mse[i] * 1e5;
    }
    j["mse"] = m;
    j["mse_times_1e5"] = ms;  // display scale used by the result tables
  } else {
    j["mse"] = nullptr;
  }
  return j;
}

namespace {

std::vector<int64_t> pred_sizes_for(const FactorisationScheme& s) {
  if (s.variant == Variant::sfnri) return std::vector<int64_t>(static_cast<size_t>(s.num_layers()), 2);
  return s.layer_sizes;
}

struct MseAccum {
  std::vector<double> sq_at_step;  // indexed by prediction step (1-based)
  int64_t entries_per_step = 0;

  void init(int64_t max_step) { sq_at_step.assign(static_cast<size_t>(max_step + 1), 0.0); }

  std::vector<double> finalize(const std::vector<int64_t>& steps, MseMode mode) const {
    std::vector<double> out;
    for (int64_t k : steps) {
      if (mode == MseMode::at_step) {
        out.push_back(sq_at_step[static_cast<size_t>(k)] / static_cast<double>(entries_per_step));
      } else {
        double s = 0.0;
        for (int64_t j = 1; j <= k; ++j) s += sq_at_step[static_cast<size_t>(j)];
        out.push_back(s / static_cast<double>(entries_per_step * k));
      }
    }
    return out;
  }
};

}  // namespace

EvalReport evaluate_model(train::TrainedModel& tm, data::Dataset& test, const EvalOptions& opts) {
  data::normalize(test);
  const int64_t num = test.num_examples();
  const int64_t bsz = std::min<int64_t>(opts.batch, num);
  const int64_t pairs = tm.n_particles * (tm.n_particles - 1);
  const int64_t max_step = *std::max_element(opts.steps.begin(), opts.steps.end());
  if (max_step >= test.header.t_record / 2)
    throw ContractError("evaluate_model: prediction step beyond the target half");

  const bool do_edges = tm.encoder != nullptr;
  const bool do_mse = tm.decoder != nullptr;

  std::vector<uint8_t> pred_labels, gt_labels;
  MseAccum mse;
  mse.init(max_step);

  for (int64_t off = 0; off < num; off += bsz) {
    std::vector<int64_t> idx;
    for (int64_t e = off; e < std::min(off + bsz, num); ++e) idx.push_back(e);
    const Tensor batch = test.batch_trajectories(idx);
    auto [first, second] = data::split_halves(batch);
    const auto layer_labels = train::batch_layer_labels(test, idx);

    ad::Tape t(ad::Mode::eval);
    Tensor z_hard;
    if (do_edges) {
      ad::Var logits = tm.encoder->logits(t, first);
      Tensor acts = t.val(logits);
      if (tm.scheme.variant == Variant::sfnri) acts = model::sigmoid_values(acts);
      z_hard = model::hard_edge_vectors(acts, tm.scheme);
      const auto labels = discretize(acts, tm.scheme);
      pred_labels.insert(pred_labels.end(), labels.begin(), labels.end());
      for (size_t p = 0; p < idx.size() * static_cast<size_t>(pairs); ++p)
        for (size_t a = 0; a < layer_labels.size(); ++a)
          gt_labels.push_back(static_cast<uint8_t>(layer_labels[a][p]));
    } else {
      z_hard = train::true_edge_vectors(tm.scheme, layer_labels);
    }

    if (do_mse) {
      ad::Var z = t.input(z_hard);
      auto preds = tm.decoder->rollout_free(t, model::state_at(second, 0), z, max_step);
      for (int64_t k = 1; k <= max_step; ++k) {
        const Tensor& mu = t.val(preds[static_cast<size_t>(k - 1)]);
        const Tensor truth = model::state_at(second, k);
        double sq = 0.0;
        for (int64_t i = 0; i < mu.size(); ++i) {
          const double d = mu.data[static_cast<size_t>(i)] - truth.data[static_cast<size_t>(i)];
          sq += d * d;
        }
        mse.sq_at_step[static_cast<size_t>(k)] += sq;
      }
      mse.entries_per_step += static_cast<int64_t>(idx.size()) * tm.n_particles * tm.feat_dim;
    }
  }

  EvalReport rep;
  rep.model = model::variant_name(tm.scheme.variant);
  rep.mode = train::mode_name(tm.mode);
  rep.num_examples = num;
  rep.steps = opts.steps;
  if (do_edges) {
    const std::vector<int64_t> gt_sizes(static_cast<size_t>(test.num_layers()), 2);
    const auto acc = edge_accuracy(pred_labels, pred_sizes_for(tm.scheme), gt_labels, gt_sizes);
    rep.has_edge_metrics = true;
    rep.combined_acc = acc.combined;
    rep.per_type_acc = acc.per_type;
    rep.type_names = test.header.layer_names;
    rep.chosen_map = acc.map.key;
    rep.perm_histogram = permutation_histogram(pred_labels, pred_sizes_for(tm.scheme), gt_labels,
                                               gt_sizes, bsz * pairs);
    rep.per_example_acc = per_example_accuracy(pred_labels, pred_sizes_for(tm.scheme), gt_labels,
                                               gt_sizes, acc.map, pairs);
  }
  if (do_mse) {
    rep.has_mse = true;
    rep.mse = mse.finalize(opts.steps, opts.mse_mode);
  }
  return rep;
}

EvalReport evaluate_static(data::Dataset& test, const EvalOptions& opts) {
  data::normalize(test);
  const int64_t num = test.num_examples();
  const int64_t max_step = *std::max_element(opts.steps.begin(), opts.steps.end());
  if (max_step >= test.header.t_record / 2)
    throw ContractError("evaluate_static: prediction step beyond the target half");

  MseAccum mse;
  mse.init(max_step);
  for (int64_t e = 0; e < num; ++e) {
    const Tensor batch = test.batch_trajectories({e});
    auto [first, second] = data::split_halves(batch);
    const Tensor x0 = model::state_at(second, 0);
    for (int64_t k = 1; k <= max_step; ++k) {
      const Tensor truth = model::state_at(second, k);
      double sq = 0.0;
      for (int64_t i = 0; i < x0.size(); ++i) {
        const double d = x0.data[static_cast<size_t>(i)] - truth.data[static_cast<size_t>(i)];
        sq += d * d;
      }
      mse.sq_at_step[static_cast<size_t>(k)] += sq;
    }
    mse.entries_per_step += test.header.n * test.header.d;
  }

  EvalReport rep;
  rep.model = "static";
  rep.mode = "baseline";
  rep.num_examples = num;
  rep.steps = opts.steps;
  rep.has_mse = true;
  rep.mse = mse.finalize(opts.steps, opts.mse_mode);
  return rep;
}

EvalReport evaluate_random(data::Dataset& test, const EvalOptions& opts, uint64_t seed) {
  const int64_t num = test.num_examples();
  const int64_t n = test.header.n;
  const int64_t pairs = n * (n - 1);
  const int64_t layers = test.num_layers();

  Rng rng(seed);
  std::vector<uint8_t> pred_labels, gt_labels;
  pred_labels.reserve(static_cast<size_t>(num * pairs * layers));
  for (int64_t e = 0; e < num; ++e)
    for (int64_t p = 0; p < pairs; ++p)
      for (int64_t a = 0; a < layers; ++a)
        pred_labels.push_back(static_cast<uint8_t>(rng.uniform_int(2)));
  const auto layer_labels = train::batch_layer_labels(test, [&] {
    std::vector<int64_t> all(static_cast<size_t>(num));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }());
  gt_labels.reserve(pred_labels.size());
  for (int64_t p = 0; p < num * pairs; ++p)
    for (int64_t a = 0; a < layers; ++a)
      gt_labels.push_back(static_cast<uint8_t>(layer_labels[static_cast<size_t>(a)][static_cast<size_t>(p)]));

  const std::vector<int64_t> sizes(static_cast<size_t>(layers), 2);
  const auto acc = edge_accuracy(pred_labels, sizes, gt_labels, sizes);

  EvalReport rep;
  rep.model = "random";
  rep.mode = "baseline";
  rep.num_examples = num;
  rep.has_edge_metrics = true;
  rep.combined_acc = acc.combined;
  rep.per_type_acc = acc.per_type;
  rep.type_names = test.header.layer_names;
  rep.chosen_map = acc.map.key;
  rep.perm_histogram = permutation_histogram(pred_labels, sizes, gt_labels, sizes,
                                             std::min<int64_t>(opts.batch, num) * pairs);
  rep.per_example_acc = per_example_accuracy(pred_labels, sizes, gt_labels, sizes, acc.map, pairs);
  return rep;
}

void export_plot_csv(train::TrainedModel& tm, data::Dataset& test, int64_t num_examples,
                     const std::string& out_path) {
  if (!tm.encoder || !tm.decoder)
    throw ContractError("export_plot_csv: checkpoint must contain encoder and decoder");
  data::normalize(test);
  const int64_t num = std::min<int64_t>(num_examples, test.num_examples());
  const int64_t n = tm.n_particles;

  std::ofstream csv(out_path, std::ios::trunc);
  if (!csv) throw ContractError("export_plot_csv: cannot open " + out_path);
  csv << "example,particle,t,x_true,y_true,x_pred,y_pred\n";
  csv.precision(10);

  std::vector<int64_t> idx(static_cast<size_t>(num));
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor batch = test.batch_trajectories(idx);
  auto [first, second] = data::split_halves(batch);
  const int64_t t_pred = second.shape[1];

  ad::Tape t(ad::Mode::eval);
  ad::Var logits = tm.encoder->logits(t, first);
  Tensor acts = t.val(logits);
  if (tm.scheme.variant == Variant::sfnri) acts = model::sigmoid_values(acts);
  ad::Var z = t.input(model::hard_edge_vectors(acts, tm.scheme));
  auto preds = tm.decoder->rollout_free(t, model::state_at(second, 0), z, t_pred - 1);

  for (int64_t e = 0; e < num; ++e)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t s = 0; s < t_pred; ++s) {
        Tensor truth = model::state_at(second, s);
        Tensor pred = s == 0 ? truth : t.val(preds[static_cast<size_t>(s - 1)]);
        data::denormalize_states(truth, test.header);
        data::denormalize_states(pred, test.header);
        const int64_t row = e * n + i;
        csv << e << "," << i << "," << s << "," << truth.at(row, 0) << "," << truth.at(row, 1)
            << "," << pred.at(row, 0) << "," << pred.at(row, 1) << "\n";
      }
}

}  // namespace fnri::eval
