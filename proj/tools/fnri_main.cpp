// fnri: batch CLI for dataset generation, training, evaluation and plot-data
// export. Every command writes a manifest first; `fnri rerun` replays one.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fnri/dataset.hpp"
#include "fnri/evaluation.hpp"
#include "fnri/manifest.hpp"
#include "fnri/model.hpp"
#include "fnri/nn.hpp"
#include "fnri/sim.hpp"
#include "fnri/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fnri;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct GenArgs {
  std::string system = "i+c";
  int64_t train = 2000, valid = 500, test = 500;
  uint64_t seed = 1;
  std::string out = "data";
  bool force = false;

  json to_json() const {
    return json{{"system", system}, {"train", train}, {"valid", valid},
                {"test", test},     {"seed", seed},   {"out", out}};
  }
  static GenArgs from_json(const json& j) {
    GenArgs a;
    a.system = j.at("system");
    a.train = j.at("train");
    a.valid = j.at("valid");
    a.test = j.at("test");
    a.seed = j.at("seed");
    a.out = j.at("out");
    return a;
  }
};

void run_gen(const GenArgs& a) {
  sim::SimConfig cfg;
  cfg.system = sim::parse_system(a.system);
  cfg.validate();

  fs::create_directories(a.out);
  const std::string train_path = (fs::path(a.out) / "train.fnri").string();
  const std::string valid_path = (fs::path(a.out) / "valid.fnri").string();
  const std::string test_path = (fs::path(a.out) / "test.fnri").string();
  if (!a.force)
    for (const auto& p : {train_path, valid_path, test_path})
      if (fs::exists(p)) throw fnri::ContractError("gen: " + p + " exists (use --force)");

  fnri::manifest::RunManifest m;
  m.command = "gen";
  m.config = a.to_json();
  m.config_hash = fnri::nn::fnv1a_hash(m.config.dump());
  m.timestamp = fnri::manifest::now_iso8601();
  m.artifacts = {{"train", train_path}, {"valid", valid_path}, {"test", test_path}};
  fnri::manifest::write_manifest((fs::path(a.out) / "manifest.json").string(), m);

  // Split seeds keep the three sets independent streams.
  const auto train_recs = sim::generate(a.seed, a.train, cfg);
  const auto valid_recs = sim::generate(a.seed + 1, a.valid, cfg);
  const auto test_recs = sim::generate(a.seed + 2, a.test, cfg);

  data::DatasetHeader h;
  h.n = cfg.n;
  h.t_record = cfg.t_record;
  h.layer_names = cfg.layer_names();
  h.layer_k.assign(h.layer_names.size(), 2);
  h.sim_config = cfg;
  h.dataset_seed = a.seed;
  h.norm_max_abs = data::compute_max_abs(train_recs);  // training split only

  h.num_examples = a.train;
  data::write_dataset(train_path, h, train_recs);
  h.num_examples = a.valid;
  data::write_dataset(valid_path, h, valid_recs);
  h.num_examples = a.test;
  data::write_dataset(test_path, h, test_recs);

  std::cout << "wrote " << a.train << "/" << a.valid << "/" << a.test << " examples to " << a.out
            << " (system " << a.system << ")\n";
}

struct TrainArgs {
  std::string model = "fnri";
  std::string mode = "learned";
  std::string edge_types;  // empty: Table-3 default for the dataset's system
  std::string data = "data";
  std::string ckpt = "model.ckpt";
  std::string metrics;  // default: <ckpt>.metrics.jsonl
  std::string profile = "desk";
  int64_t epochs = -1, batch = 128, hidden = -1, m_teacher = 10;
  double lr = 5e-4, lr_decay = 0.5;
  int64_t lr_decay_every = 200;
  double tau = 0.5, sigma2 = 5e-5, dropout = 0.5, l2 = -1.0;
  bool hard_non_edge = true;
  bool straight_through = false;
  uint64_t seed = 1;

  json to_json() const {
    return json{{"model", model},
                {"mode", mode},
                {"edge_types", edge_types},
                {"data", data},
                {"ckpt", ckpt},
                {"metrics", metrics},
                {"profile", profile},
                {"epochs", epochs},
                {"batch", batch},
                {"hidden", hidden},
                {"m_teacher", m_teacher},
                {"lr", lr},
                {"lr_decay", lr_decay},
                {"lr_decay_every", lr_decay_every},
                {"tau", tau},
                {"sigma2", sigma2},
                {"dropout", dropout},
                {"l2", l2},
                {"hard_non_edge", hard_non_edge},
                {"straight_through", straight_through},
                {"seed", seed}};
  }
  static TrainArgs from_json(const json& j) {
    TrainArgs a;
    a.model = j.at("model");
    a.mode = j.at("mode");
    a.edge_types = j.at("edge_types");
    a.data = j.at("data");
    a.ckpt = j.at("ckpt");
    a.metrics = j.at("metrics");
    a.profile = j.at("profile");
    a.epochs = j.at("epochs");
    a.batch = j.at("batch");
    a.hidden = j.at("hidden");
    a.m_teacher = j.at("m_teacher");
    a.lr = j.at("lr");
    a.lr_decay = j.at("lr_decay");
    a.lr_decay_every = j.at("lr_decay_every");
    a.tau = j.at("tau");
    a.sigma2 = j.at("sigma2");
    a.dropout = j.at("dropout");
    a.l2 = j.at("l2");
    a.hard_non_edge = j.at("hard_non_edge");
    a.straight_through = j.at("straight_through");
    a.seed = j.at("seed");
    return a;
  }
};

void run_train(TrainArgs a) {
  if (a.profile != "desk" && a.profile != "paper")
    throw fnri::ContractError("train: unknown profile '" + a.profile + "'");
  if (a.epochs < 0) a.epochs = a.profile == "paper" ? 500 : 60;
  if (a.hidden < 0) a.hidden = a.profile == "paper" ? 256 : 64;
  if (a.metrics.empty()) a.metrics = a.ckpt + ".metrics.jsonl";

  const auto variant = model::parse_variant(a.model);
  const auto mode = train::parse_mode(a.mode);

  data::Dataset train_ds = data::read_dataset((fs::path(a.data) / "train.fnri").string());
  data::Dataset val_ds = data::read_dataset((fs::path(a.data) / "valid.fnri").string());
  const std::string system = sim::system_name(train_ds.header.sim_config.system);

  if (a.edge_types.empty())
    a.edge_types = model::FactorisationScheme::default_edge_types(variant, system);
  const auto scheme = model::FactorisationScheme::parse(variant, a.edge_types, a.hard_non_edge);

  // Paper L2 defaults apply to sfNRI on I+C only; otherwise off.
  if (a.l2 < 0.0) {
    if (variant == model::Variant::sfnri && system == "i+c")
      a.l2 = mode == train::TrainMode::supervised ? 2e-5 : 5e-8;
    else
      a.l2 = 0.0;
  }

  fnri::manifest::RunManifest m;
  m.command = "train";
  m.config = a.to_json();
  m.config_hash = fnri::nn::fnv1a_hash(m.config.dump());
  m.timestamp = fnri::manifest::now_iso8601();
  m.artifacts = {{"ckpt", a.ckpt}, {"metrics", a.metrics}};
  fnri::manifest::write_manifest(a.ckpt + ".manifest.json", m);

  train::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch = a.batch;
  cfg.lr = a.lr;
  cfg.lr_decay = a.lr_decay;
  cfg.lr_decay_every = a.lr_decay_every;
  cfg.tau = a.tau;
  cfg.m_teacher = a.m_teacher;
  cfg.sigma2 = a.sigma2;
  cfg.dropout = a.dropout;
  cfg.l2 = a.l2;
  cfg.hidden = a.hidden;
  cfg.hard_non_edge = a.hard_non_edge;
  cfg.straight_through = a.straight_through;
  cfg.seed = a.seed;

  const auto result = train::train(mode, scheme, train_ds, val_ds, cfg, a.ckpt, a.metrics);
  std::cout << "best " << result.criterion << " = " << result.best_metric << " at epoch "
            << result.best_epoch << "; checkpoint " << a.ckpt << "\n";
}

struct EvalArgs {
  std::string ckpt;
  std::string baseline;  // "static" | "random" | ""
  std::string data = "data";
  std::string steps = "1,10,20";
  std::string mse_mode = "at";
  std::string out;  // report JSON; empty = stdout only
  std::string csv;  // optional per-example accuracy CSV
  uint64_t seed = 1;

  json to_json() const {
    return json{{"ckpt", ckpt}, {"baseline", baseline}, {"data", data}, {"steps", steps},
                {"mse_mode", mse_mode}, {"out", out},   {"csv", csv},  {"seed", seed}};
  }
  static EvalArgs from_json(const json& j) {
    EvalArgs a;
    a.ckpt = j.at("ckpt");
    a.baseline = j.at("baseline");
    a.data = j.at("data");
    a.steps = j.at("steps");
    a.mse_mode = j.at("mse_mode");
    a.out = j.at("out");
    a.csv = j.at("csv");
    a.seed = j.at("seed");
    return a;
  }
};

std::vector<int64_t> parse_steps(const std::string& s) {
  std::vector<int64_t> steps;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) steps.push_back(std::stoll(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (steps.empty()) throw fnri::ContractError("eval: no prediction steps given");
  for (int64_t k : steps)
    if (k < 1) throw fnri::ContractError("eval: prediction steps must be >= 1");
  return steps;
}

void run_eval(const EvalArgs& a) {
  if (a.ckpt.empty() == a.baseline.empty())
    throw fnri::ContractError("eval:给 pass exactly one of --ckpt or --baseline");
  eval::EvalOptions opts;
  opts.steps = parse_steps(a.steps);
  if (a.mse_mode == "at")
    opts.mse_mode = eval::MseMode::at_step;
  else if (a.mse_mode == "cum")
    opts.mse_mode = eval::MseMode::cumulative;
  else
    throw fnri::ContractError("eval: mse mode must be 'at' or 'cum'");

  if (!a.out.empty()) {
    fnri::manifest::RunManifest m;
    m.command = "eval";
    m.config = a.to_json();
    m.config_hash = fnri::nn::fnv1a_hash(m.config.dump());
    m.timestamp = fnri::manifest::now_iso8601();
    m.artifacts = {{"report", a.out}};
    fnri::manifest::write_manifest(a.out + ".manifest.json", m);
  }

  data::Dataset test = data::read_dataset((fs::path(a.data) / "test.fnri").string());
  eval::EvalReport rep;
  if (a.baseline == "static") {
    rep = eval::evaluate_static(test, opts);
  } else if (a.baseline == "random") {
    rep = eval::evaluate_random(test, opts, a.seed);
  } else if (!a.baseline.empty()) {
    throw fnri::ContractError("eval: unknown baseline '" + a.baseline + "'");
  } else {
    auto tm = train::TrainedModel::from_checkpoint(a.ckpt);
    rep = eval::evaluate_model(tm, test, opts);
  }

  const std::string text = rep.to_json().dump(2);
  std::cout << text << "\n";
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw fnri::ContractError("eval: cannot open " + a.out);
    f << text << "\n";
  }
  if (!a.csv.empty()) {
    std::ofstream f(a.csv, std::ios::trunc);
    if (!f) throw fnri::ContractError("eval: cannot open " + a.csv);
    f << "example,combined_accuracy\n";
    for (size_t e = 0; e < rep.per_example_acc.size(); ++e)
      f << e << "," << rep.per_example_acc[e] << "\n";
  }
}

struct ExportArgs {
  std::string ckpt;
  std::string data = "data";
  int64_t examples = 8;
  std::string out = "trajectories.csv";

  json to_json() const {
    return json{{"ckpt", ckpt}, {"data", data}, {"examples", examples}, {"out", out}};
  }
  static ExportArgs from_json(const json& j) {
    ExportArgs a;
    a.ckpt = j.at("ckpt");
    a.data = j.at("data");
    a.examples = j.at("examples");
    a.out = j.at("out");
    return a;
  }
};

void run_export(const ExportArgs& a) {
  fnri::manifest::RunManifest m;
  m.command = "export-plot";
  m.config = a.to_json();
  m.config_hash = fnri::nn::fnv1a_hash(m.config.dump());
  m.timestamp = fnri::manifest::now_iso8601();
  m.artifacts = {{"csv", a.out}};
  fnri::manifest::write_manifest(a.out + ".manifest.json", m);

  data::Dataset test = data::read_dataset((fs::path(a.data) / "test.fnri").string());
  auto tm = train::TrainedModel::from_checkpoint(a.ckpt);
  eval::export_plot_csv(tm, test, a.examples, a.out);
  std::cout << "wrote " << a.out << "\n";
}

std::string redirect(const std::string& path, const std::string& out_dir) {
  if (out_dir.empty() || path.empty()) return path;
  return (fs::path(out_dir) / fs::path(path).filename()).string();
}

void run_rerun(const std::string& manifest_path, const std::string& out_dir) {
  const auto m = fnri::manifest::read_manifest(manifest_path);
  if (!out_dir.empty()) fs::create_directories(out_dir);
  if (m.command == "gen") {
    GenArgs a = GenArgs::from_json(m.config);
    if (!out_dir.empty()) a.out = out_dir;
    a.force = true;
    run_gen(a);
  } else if (m.command == "train") {
    TrainArgs a = TrainArgs::from_json(m.config);
    a.ckpt = redirect(a.ckpt, out_dir);
    a.metrics = redirect(a.metrics, out_dir);
    run_train(a);
  } else if (m.command == "eval") {
    EvalArgs a = EvalArgs::from_json(m.config);
    a.out = redirect(a.out, out_dir);
    a.csv = redirect(a.csv, out_dir);
    run_eval(a);
  } else if (m.command == "export-plot") {
    ExportArgs a = ExportArgs::from_json(m.config);
    a.out = redirect(a.out, out_dir);
    run_export(a);
  } else {
    throw fnri::ContractError("rerun: unknown command '" + m.command + "' in manifest");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"factorised neural relational inference toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* cgen = app.add_subcommand("gen", "generate train/valid/test datasets");
  cgen->add_option("--system", gen.system, "i+c or i+c+f")->check(CLI::IsMember({"i+c", "i+c+f"}));
  cgen->add_option("--train", gen.train, "training examples");
  cgen->add_option("--valid", gen.valid, "validation examples");
  cgen->add_option("--test", gen.test, "test examples");
  cgen->add_option("--seed", gen.seed, "dataset seed");
  cgen->add_option("--out", gen.out, "output directory");
  cgen->add_flag("--force", gen.force, "overwrite existing files");
  std::string gen_profile = "desk";
  cgen->add_option("--profile", gen_profile, "desk (2000/500/500) or paper (50k/10k/10k)")
      ->check(CLI::IsMember({"desk", "paper"}));

  TrainArgs tr;
  auto* ctrain = app.add_subcommand("train", "train a model");
  ctrain->add_option("--model", tr.model, "nri, fnri or sfnri")
      ->check(CLI::IsMember({"nri", "fnri", "sfnri"}));
  ctrain->add_option("--mode", tr.mode, "learned, supervised or truegraph")
      ->check(CLI::IsMember({"learned", "supervised", "truegraph"}));
  ctrain->add_option("--edge-types", tr.edge_types, "e.g. 4 (nri), 2+2 (fnri), 2 (sfnri)");
  ctrain->add_option("--data", tr.data, "dataset directory");
  ctrain->add_option("--ckpt", tr.ckpt, "checkpoint output path");
  ctrain->add_option("--metrics", tr.metrics, "metrics JSONL path");
  ctrain->add_option("--profile", tr.profile, "desk (hidden 64, 60 epochs) or paper (256, 500)")
      ->check(CLI::IsMember({"desk", "paper"}));
  ctrain->add_option("--epochs", tr.epochs, "training epochs");
  ctrain->add_option("--batch", tr.batch, "batch size");
  ctrain->add_option("--hidden", tr.hidden, "hidden width");
  ctrain->add_option("--lr", tr.lr, "learning rate");
  ctrain->add_option("--lr-decay", tr.lr_decay, "decay factor");
  ctrain->add_option("--lr-decay-every", tr.lr_decay_every, "epochs per decay");
  ctrain->add_option("--tau", tr.tau, "softmax temperature");
  ctrain->add_option("--M", tr.m_teacher, "teacher forcing period");
  ctrain->add_option("--sigma2", tr.sigma2, "output variance");
  ctrain->add_option("--dropout", tr.dropout, "dropout (supervised mode)");
  ctrain->add_option("--l2", tr.l2, "L2 coefficient (sfnri)");
  ctrain->add_option("--hard-non-edge", tr.hard_non_edge, "hard-code first type as non-edge");
  ctrain->add_flag("--straight-through", tr.straight_through, "hard samples w/ ST gradient");
  ctrain->add_option("--seed", tr.seed, "training seed");

  EvalArgs ev;
  auto* ceval = app.add_subcommand("eval", "evaluate a checkpoint or baseline");
  ceval->add_option("--ckpt", ev.ckpt, "checkpoint path");
  ceval->add_option("--baseline", ev.baseline, "static or random");
  ceval->add_option("--data", ev.data, "dataset directory");
  ceval->add_option("--steps", ev.steps, "comma-separated prediction steps");
  ceval->add_option("--mse-mode", ev.mse_mode, "at (step k) or cum (mean over 1..k)");
  ceval->add_option("--out", ev.out, "report JSON path");
  ceval->add_option("--csv", ev.csv, "per-example accuracy CSV");
  ceval->add_option("--seed", ev.seed, "random-baseline seed");

  ExportArgs ex;
  auto* cexport = app.add_subcommand("export-plot", "predicted vs true trajectory CSV");
  cexport->add_option("--ckpt", ex.ckpt, "checkpoint path")->required();
  cexport->add_option("--data", ex.data, "dataset directory");
  cexport->add_option("--examples", ex.examples, "examples to export");
  cexport->add_option("--out", ex.out, "CSV path");

  std::string rr_manifest, rr_out;
  auto* crerun = app.add_subcommand("rerun", "replay a command from its manifest");
  crerun->add_option("--manifest", rr_manifest, "manifest path")->required();
  crerun->add_option("--out-dir", rr_out, "redirect artifacts into this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (cgen->parsed()) {
      if (gen_profile == "paper" && cgen->count("--train") == 0) gen.train = 50000;
      if (gen_profile == "paper" && cgen->count("--valid") == 0) gen.valid = 10000;
      if (gen_profile == "paper" && cgen->count("--test") == 0) gen.test = 10000;
      run_gen(gen);
    } else if (ctrain->parsed()) {
      run_train(tr);
    } else if (ceval->parsed()) {
      run_eval(ev);
    } else if (cexport->parsed()) {
      run_export(ex);
    } else if (crerun->parsed()) {
      run_rerun(rr_manifest, rr_out);
    }
  } catch (const fnri::ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fnri::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fnri::data::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fnri::nn::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fnri::train::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
