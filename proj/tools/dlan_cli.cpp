// Command-line front end: dataset generation, training, evaluation,
// gradient checking, ablation runs, and transform traces.
//
// Config files are line-oriented `key = value` text; every model/training
// field is addressable by the same name as its CLI flag. Flags override
// file values. Exit codes: 0 success, 1 validation/config error, 2 numeric
// divergence.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dlan/errors.hpp"
#include "dlan/synthdata.hpp"
#include "dlan/train.hpp"

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw dlan::ConfigError("bad integer list entry: '" + item + "'");
    }
  }
  if (out.empty()) throw dlan::ConfigError("empty integer list: '" + s + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw dlan::ConfigError(key + ": expected a boolean, got '" + v + "'");
}

dlan::Aggregation parse_aggregation(const std::string& v) {
  if (v == "max") return dlan::Aggregation::Maximum;
  if (v == "avg") return dlan::Aggregation::Average;
  throw dlan::ConfigError("aggregation: expected max or avg, got '" + v + "'");
}

// Shared model + training settings, assembled from file then flag layers.
struct Settings {
  dlan::ModelConfig model;
  dlan::TrainConfig train;

  void apply(const std::string& key, const std::string& value) {
    try {
      if (key == "extent") model.extent = std::stoi(value);
      else if (key == "channels") model.channels = parse_int_list(value);
      else if (key == "landmarks") model.landmarks = std::stoi(value);
      else if (key == "steps") model.steps = std::stoi(value);
      else if (key == "dilations") model.dilations = parse_int_list(value);
      else if (key == "aggregation") model.aggregation = parse_aggregation(value);
      else if (key == "lambda") model.lambda = std::stod(value);
      else if (key == "scale_mask_invisible") model.scale_mask_invisible = parse_bool(key, value);
      else if (key == "use_stn") model.use_stn = parse_bool(key, value);
      else if (key == "use_selective") model.use_selective = parse_bool(key, value);
      else if (key == "use_hrst") model.use_hrst = parse_bool(key, value);
      else if (key == "use_scale_reg") model.use_scale_reg = parse_bool(key, value);
      else if (key == "lr") train.lr = std::stod(value);
      else if (key == "momentum") train.momentum = std::stod(value);
      else if (key == "batch") train.batch = std::stoi(value);
      else if (key == "epochs") train.epochs = std::stoi(value);
      else if (key == "seed") train.seed = std::stoull(value);
      else if (key == "checkpoint_interval") train.checkpoint_interval = std::stoi(value);
      else if (key == "checkpoint_path") train.checkpoint_path = value;
      else if (key == "resume") train.resume_path = value;
      else throw dlan::ConfigError("unknown config key: '" + key + "'");
    } catch (const dlan::ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw dlan::ConfigError(key + ": cannot parse value '" + value + "'");
    }
  }

  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw dlan::ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto strip = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      if (strip(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw dlan::ConfigError(path + ":" + std::to_string(lineno) +
                                ": expected 'key = value'");
      apply(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
  }
};

// Flag values arrive as strings so "unset" is distinguishable and the same
// parser handles file and flag layers.
struct Overrides {
  std::map<std::string, std::string> kv;

  void bind(CLI::App* app, const std::set<std::string>& skip = {}) {
    static const char* keys[] = {"extent",  "channels", "landmarks", "steps",
                                 "dilations", "aggregation", "lambda",
                                 "scale_mask_invisible", "use_stn", "use_selective",
                                 "use_hrst", "use_scale_reg", "lr", "momentum",
                                 "batch", "epochs", "seed", "checkpoint_interval",
                                 "checkpoint_path", "resume"};
    for (const char* k : keys) {
      if (skip.count(k)) continue;
      app->add_option_function<std::string>(
          std::string("--") + k, [this, k](const std::string& v) { kv[k] = v; });
    }
  }

  void apply(Settings& s) const {
    for (const auto& [k, v] : kv) s.apply(k, v);
  }
};

Settings resolve(const std::string& config_path, const Overrides& ov) {
  Settings s;
  if (!config_path.empty()) s.load_file(config_path);
  ov.apply(s);
  return s;
}

int split_index(const std::string& name) {
  for (int i = 0; i < 3; ++i)
    if (name == dlan::kSplitNames[i]) return i;
  throw dlan::ConfigError("unknown split: '" + name + "'");
}

std::vector<dlan::SampleRecord> load_split(const std::string& dir, const std::string& name) {
  const dlan::DatasetManifest m = dlan::read_manifest(dir);
  return dlan::read_split(dir, m, split_index(name));
}

int run(int argc, char** argv) {
  CLI::App app{"Garment landmark detector: recurrent spatial-transformer pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "key = value settings file");
  Overrides ov;

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string gen_out = "data";
  uint64_t gen_seed = 7;
  std::array<int, 3> gen_counts = {2000, 500, 500};
  dlan::GenConfig gen_cfg;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--train", gen_counts[0], "training sample count");
  gen->add_option("--val", gen_counts[1], "validation sample count");
  gen->add_option("--test", gen_counts[2], "test sample count");
  gen->add_option("--extent", gen_cfg.extent, "square image extent");
  gen->add_option("--noise-amp", gen_cfg.noise_amp);
  gen->add_option("--pose-jitter", gen_cfg.pose_jitter);
  gen->add_option("--clutter-max", gen_cfg.clutter_max);

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_data, tr_out = ".";
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "report directory");
  ov.bind(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_data, ev_split = "test", ev_ckpt, ev_out = "eval.csv", ev_samples;
  double ev_threshold = 0;
  int ev_timing = 1;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--threshold", ev_threshold, "hit threshold in pixels (default scales with extent)");
  ev->add_option("--timing", ev_timing, "measure per-step inference time (0|1)");
  ev->add_option("--out", ev_out, "metrics CSV path");
  ev->add_option("--samples", ev_samples, "optional per-sample CSV path");
  ov.bind(ev);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  uint64_t gc_seed = 3;
  double gc_step = 1e-5;
  gc->add_option("--seed", gc_seed);
  gc->add_option("--fd-step", gc_step);
  ov.bind(gc, {"seed"});  // --seed here is the probe seed, not the train seed

  // ablate
  auto* ab = app.add_subcommand("ablate", "Component chain, lambda sweep, aggregation study");
  std::string ab_data, ab_out = "ablate";
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--out", ab_out, "output directory for CSVs");
  ov.bind(ab);

  // trace
  auto* tc = app.add_subcommand("trace", "Dump per-step transforms for sample ids");
  std::string tc_data, tc_split = "test", tc_ckpt, tc_out;
  std::vector<int> tc_ids;
  tc->add_option("--data", tc_data, "dataset directory")->required();
  tc->add_option("--split", tc_split, "train|val|test");
  tc->add_option("--checkpoint", tc_ckpt, "checkpoint file")->required();
  tc->add_option("--ids", tc_ids, "sample indices")->required();
  tc->add_option("--out", tc_out, "output file (default stdout)");
  ov.bind(tc);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    const dlan::DatasetManifest m = dlan::write_dataset(gen_cfg, gen_seed, gen_counts, gen_out);
    std::cout << "wrote " << m.split_count(0) << "/" << m.split_count(1) << "/"
              << m.split_count(2) << " train/val/test samples to " << gen_out << "\n";
    return 0;
  }

  if (tr->parsed()) {
    Settings s = resolve(config_path, ov);
    const auto train_data = load_split(tr_data, "train");
    const auto val_data = load_split(tr_data, "val");
    std::filesystem::create_directories(tr_out);
    if (!s.train.checkpoint_path.empty()) {
      const auto parent = std::filesystem::path(s.train.checkpoint_path).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent);
    }
    const dlan::TrainResult res = dlan::train(s.model, s.train, train_data, val_data);
    dlan::write_epoch_csv(tr_out + "/epochs.csv", res.report.epochs);
    if (s.train.checkpoint_interval == 0 && !s.train.checkpoint_path.empty())
      dlan::save_checkpoint(s.train.checkpoint_path, res.params,
                            dlan::zeros_like(res.params), s.train.epochs,
                            dlan::Rng(s.train.seed));
    if (!res.report.epochs.empty()) {
      const dlan::EpochRow& last = res.report.epochs.back();
      std::cout << "epoch " << last.epoch << ": train " << last.train_total << " val "
                << last.val_total << "\n";
    }
    std::cout << "wrote " << tr_out << "/epochs.csv\n";
    return 0;
  }

  if (ev->parsed()) {
    Settings s = resolve(config_path, ov);
    const auto data = load_split(ev_data, ev_split);
    const dlan::Checkpoint ck = dlan::load_checkpoint(ev_ckpt, s.model);
    const double threshold =
        ev_threshold > 0 ? ev_threshold : dlan::pdl_threshold_px(s.model.extent);
    const dlan::EvalReport rep =
        dlan::evaluate(s.model, ck.params, data, threshold, ev_timing != 0);
    dlan::write_eval_csv(ev_out, rep);
    if (!ev_samples.empty())
      dlan::write_sample_csv(ev_samples, s.model, ck.params, data, threshold);
    std::cout << "pdl " << rep.pdl_overall << " over " << rep.visible_total
              << " visible landmarks; wrote " << ev_out << "\n";
    return 0;
  }

  if (gc->parsed()) {
    Settings s = resolve(config_path, ov);
    if (config_path.empty() && ov.kv.empty()) {
      // Default to a tiny model so the sweep finishes in seconds.
      s.model.extent = 8;
      s.model.channels = {2, 2};
      s.model.landmarks = 2;
      s.model.steps = 2;
      s.model.dilations = {1, 2};
    }
    const dlan::GradCheckReport rep = dlan::gradcheck(s.model, gc_seed, gc_step);
    std::cout << std::setprecision(6);
    for (const dlan::GradCheckRow& row : rep.rows)
      std::cout << row.layer << ": worst rel err " << row.worst_rel << "\n";
    std::cout << "worst overall: " << rep.worst << "\n";
    return 0;
  }

  if (ab->parsed()) {
    Settings s = resolve(config_path, ov);
    const auto train_data = load_split(ab_data, "train");
    const auto val_data = load_split(ab_data, "val");
    const auto test_data = load_split(ab_data, "test");
    const dlan::AblateReport rep = dlan::ablate(s.model, s.train, train_data, val_data, test_data);
    dlan::write_ablate_csvs(ab_out, rep);
    for (const dlan::AblateVariant& v : rep.chain)
      std::cout << v.name << ": " << v.test_pdl << "\n";
    std::cout << "wrote " << ab_out << "/{chain,lambda_sweep,aggregation}.csv\n";
    return 0;
  }

  if (tc->parsed()) {
    Settings s = resolve(config_path, ov);
    const auto data = load_split(tc_data, tc_split);
    const dlan::Checkpoint ck = dlan::load_checkpoint(tc_ckpt, s.model);
    if (tc_out.empty()) {
      dlan::write_trace(std::cout, s.model, ck.params, data, tc_ids);
    } else {
      std::ofstream os(tc_out);
      if (!os) throw dlan::ConfigError("cannot open " + tc_out + " for writing");
      dlan::write_trace(os, s.model, ck.params, data, tc_ids);
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dlan::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
