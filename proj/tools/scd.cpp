// Command-line driver: synthetic dataset generation, fold planning, training,
// evaluation and report assembly, glued from the library modules. Every
// command is reproducible from (config, seed, SCD_THREADS).

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "scd/config.hpp"
#include "scd/data.hpp"
#include "scd/infer.hpp"
#include "scd/metrics.hpp"
#include "scd/model.hpp"
#include "scd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scd;

namespace {

int env_threads() {
  const char* v = std::getenv("SCD_THREADS");
  if (!v) return 1;
  int n = std::atoi(v);
  return n > 0 ? n : 1;
}

void write_text_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + p.string());
}

std::string read_text_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open " + p.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  return ExperimentConfig::parse_file(path);
}

// one JSON line per logged iteration
std::string log_to_jsonl(const std::vector<TrainLogEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    json j;
    j["iter"] = e.iter;
    j["loss"] = e.loss;
    j["lr"] = e.lr;
    if (e.val_scs) j["val_scs"] = *e.val_scs;
    if (e.val_miou) j["val_miou"] = *e.val_miou;
    out += j.dump() + "\n";
  }
  return out;
}

SplitScheme scheme_from_config(const InferConfig& icfg, int64_t T) {
  if (icfg.scheme == "full") return make_scheme(T, T, "contiguous");
  if (icfg.scheme == "contiguous" || icfg.scheme == "strided") {
    if (icfg.group_len <= 0) throw ConfigError("scheme '" + icfg.scheme + "' needs group_len");
    return make_scheme(T, icfg.group_len, icfg.scheme);
  }
  if (icfg.scheme == "custom") {
    if (icfg.assignment.empty()) throw ConfigError("custom scheme needs an assignment");
    std::vector<int> a;
    std::stringstream ss(icfg.assignment);
    std::string item;
    while (std::getline(ss, item, ',')) a.push_back(std::atoi(item.c_str()));
    return custom_scheme(a);
  }
  throw ConfigError("unknown scheme '" + icfg.scheme + "'");
}

FoldPlan load_plan(const std::string& path) { return FoldPlan::from_json(read_text_file(path)); }

struct DayRange {
  int lo = 0, hi = 0;
};

DayRange dataset_day_range(const std::vector<SitsSample>& samples) {
  DayRange r;
  bool first = true;
  for (const auto& s : samples)
    for (int d : s.days) {
      if (first || d < r.lo) r.lo = d;
      if (first || d > r.hi) r.hi = d;
      first = false;
    }
  if (first) throw InputError("dataset has no dates");
  return r;
}

// ----------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, const std::string& out_dir, int64_t seed_override) {
  ExperimentConfig cfg = load_config(config_path);
  if (seed_override >= 0) cfg.data.seed = static_cast<uint64_t>(seed_override);
  auto samples = synth_generate(cfg.data);
  write_dataset(out_dir, samples, &cfg.data);
  double frac = cfg.data.T >= 2 ? measured_change_fraction(samples) : 0.0;
  std::cout << "wrote " << samples.size() << " AoIs to " << out_dir
            << " (monthly change fraction " << frac << ", content hash " << std::hex
            << dataset_content_hash(out_dir) << std::dec << ")\n";
  return 0;
}

void print_fold_table(const FoldPlan& plan) {
  static const char* roman[] = {"I", "II", "III", "IV", "V"};
  std::cout << "fold | train | val | test\n";
  for (size_t f = 0; f < plan.folds.size(); ++f) {
    auto label = [&](const std::vector<FoldUnit>& units) -> std::string {
      if (plan.setting == "no_shift") {
        std::set<int> qs;
        for (const auto& u : units) qs.insert(*u.quarter);
        std::string s;
        for (int q : qs) s += (s.empty() ? "" : ",") + std::to_string(q);
        return "q" + s;
      }
      return std::to_string(units.size()) + " units";
    };
    std::string name = f < 5 ? roman[f] : std::to_string(f + 1);
    std::cout << name << " | " << label(plan.folds[f].train) << " | " << label(plan.folds[f].val)
              << " | " << label(plan.folds[f].test) << "\n";
  }
}

int cmd_split(const std::string& data_dir, const std::string& setting, const std::string& out,
              int split_day, const std::string& subsets_file) {
  auto ids = dataset_aoi_ids(data_dir);
  FoldPlan plan;
  if (setting == "no_shift") {
    plan = plan_no_shift(ids);
  } else if (setting == "temporal") {
    auto samples = load_dataset(data_dir);
    auto range = dataset_day_range(samples);
    int day = split_day >= 0 ? split_day : (range.lo + range.hi + 1) / 2;
    plan = plan_temporal(ids, range.lo, range.hi, day);
  } else if (setting == "spatial") {
    if (!subsets_file.empty()) {
      json j = json::parse(read_text_file(subsets_file));
      auto subsets = j.get<std::vector<std::vector<std::string>>>();
      plan = plan_spatial(ids, &subsets);
    } else {
      // balance subsets by class distribution when labels are available
      std::map<std::string, std::vector<double>> hist;
      auto samples = load_dataset(data_dir);
      for (const auto& s : samples) hist[s.aoi_id] = class_distribution({&s.labels}, s.labels.K);
      plan = plan_spatial(ids, nullptr, &hist);
    }
  } else {
    throw ConfigError("unknown setting '" + setting + "' (no_shift, temporal or spatial)");
  }
  print_fold_table(plan);
  if (!out.empty()) {
    write_text_file(out, plan.to_json());
    std::cout << "wrote plan to " << out << "\n";
  }
  return 0;
}

void train_one_fold(const ExperimentConfig& cfg, const std::vector<SitsSample>& dataset,
                    const FoldPlan& plan, int fold_index, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const Fold& fold = plan.folds.at(static_cast<size_t>(fold_index));
  auto result = train(cfg.model, cfg.train, dataset, fold);
  if (result.aborted_nan) {
    write_text_file(out_dir / "log.jsonl", log_to_jsonl(result.log));
    throw NumericError("training diverged (non-finite loss); log kept in " + out_dir.string());
  }
  save_checkpoint(out_dir / "checkpoint.scdw", cfg.model, result.best_params);
  write_text_file(out_dir / "log.jsonl", log_to_jsonl(result.log));
  json meta;
  meta["fold"] = fold_index;
  meta["best_iter"] = result.best_iter;
  meta["best_val_metric"] = result.best_val_metric;
  meta["param_count"] = param_count(cfg.model);
  meta["feature_dim"] = cfg.model.feature_dim;
  meta["variant"] = variant_to_string(cfg.model.variant);
  write_text_file(out_dir / "run_meta.json", meta.dump(2));
  write_text_file(out_dir / "config.ini", cfg.serialize());
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& plan_path, const std::string& fold_arg,
              const std::string& out_dir, const std::string& variant_override,
              int64_t iters_override, int64_t seed_override, int jobs) {
  ExperimentConfig cfg = load_config(config_path);
  if (!variant_override.empty()) cfg.model.variant = variant_from_string(variant_override);
  if (iters_override >= 0) cfg.train.max_iters = iters_override;
  if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
  auto dataset = load_dataset(data_dir);
  if (!dataset.empty()) {
    cfg.model.num_classes = dataset[0].labels.K;
    cfg.model.in_channels = static_cast<int>(dataset[0].C);
  }
  cfg.model.validate();
  auto plan = load_plan(plan_path);

  std::vector<int> folds;
  if (fold_arg == "all")
    for (size_t i = 0; i < plan.folds.size(); ++i) folds.push_back(static_cast<int>(i));
  else
    folds.push_back(std::atoi(fold_arg.c_str()));

  if (folds.size() == 1 && fold_arg != "all") {
    train_one_fold(cfg, dataset, plan, folds[0], out_dir);
    std::cout << "trained fold " << folds[0] << " into " << out_dir << "\n";
    return 0;
  }
  // fold-level parallelism; each fold is isolated in its own directory
  std::vector<std::thread> workers;
  std::atomic<size_t> next{0};
  std::vector<std::string> errors(folds.size());
  int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(folds.size())));
  for (int w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      while (true) {
        size_t i = next.fetch_add(1);
        if (i >= folds.size()) return;
        try {
          train_one_fold(cfg, dataset, plan, folds[i],
                         fs::path(out_dir) / ("fold" + std::to_string(folds[i])));
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  for (size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw NumericError("fold " + std::to_string(folds[i]) + ": " + errors[i]);
  std::cout << "trained " << folds.size() << " folds into " << out_dir << "\n";
  return 0;
}

MetricsReport eval_fold(const ExperimentConfig& cfg, const std::vector<SitsSample>& dataset,
                        const Fold& fold, const ModelConfig& mcfg, const ParamSet<float>& params,
                        const SplitScheme* scheme, const fs::path& maps_dir = {}) {
  const auto& units = cfg.eval.split == "val" ? fold.val : fold.test;
  BcAggregation bc =
      cfg.eval.bc_aggregation == "per_tile" ? BcAggregation::kPerTile : BcAggregation::kGlobal;
  InferOptions opts;
  opts.max_tile = cfg.infer.max_tile;
  if (maps_dir.empty())
    return evaluate_units(mcfg, params, dataset, units, scheme, opts, bc).finalize();
  // same accumulation, exporting the predicted label maps along the way
  fs::create_directories(maps_dir);
  MetricsAccumulator acc(mcfg.num_classes, bc);
  for (const auto& unit : units) {
    SitsSample view = extract_unit(find_sample(dataset, unit.aoi_id), unit);
    SplitScheme s = scheme ? *scheme : default_scheme(mcfg, view.T);
    LabelSeries pred = predict_labels(mcfg, params, view, s, opts);
    acc.add(pred, view.labels);
    Raster r;
    r.dtype = 1;
    r.dims = {pred.T, pred.H, pred.W};
    r.u8 = pred.labels;
    std::string name = "pred_" + unit.aoi_id;
    if (unit.quarter) name += "_q" + std::to_string(*unit.quarter);
    save_raster(maps_dir / (name + ".sits"), r);
  }
  return acc.finalize();
}

// Baselines: uniform random labels, or the ground truth as a perfect oracle.
MetricsReport eval_baseline(const ExperimentConfig& cfg, const std::vector<SitsSample>& dataset,
                            const Fold& fold, const std::string& kind, uint64_t seed) {
  const auto& units = cfg.eval.split == "val" ? fold.val : fold.test;
  BcAggregation bc =
      cfg.eval.bc_aggregation == "per_tile" ? BcAggregation::kPerTile : BcAggregation::kGlobal;
  int K = dataset.at(0).labels.K;
  MetricsAccumulator acc(K, bc);
  Rng rng(seed);
  for (const auto& u : units) {
    auto view = extract_unit(find_sample(dataset, u.aoi_id), u);
    if (kind == "random") {
      auto pred = random_baseline(view.T, view.H, view.W, K, rng);
      pred.ignore = view.labels.ignore;
      acc.add(pred, view.labels);
    } else if (kind == "oracle") {
      acc.add(view.labels, view.labels);
    } else {
      throw ConfigError("unknown baseline '" + kind + "'");
    }
  }
  return acc.finalize();
}

int cmd_eval(const std::string& config_path, const std::string& data_dir,
             const std::string& plan_path, const std::string& fold_arg,
             const std::string& run_dir, const std::string& out_dir, const std::string& baseline,
             const std::string& sweep_arg, int64_t seed_override,
             const std::string& scheme_file, bool save_maps) {
  ExperimentConfig cfg = load_config(config_path);
  auto dataset = load_dataset(data_dir);
  auto plan = load_plan(plan_path);
  fs::create_directories(out_dir);

  std::vector<int> folds;
  if (fold_arg == "all")
    for (size_t i = 0; i < plan.folds.size(); ++i) folds.push_back(static_cast<int>(i));
  else
    folds.push_back(std::atoi(fold_arg.c_str()));

  // sweep entries: "full", "contiguous:6", "strided:6", "custom:0,1,0,1,..."
  std::vector<std::pair<std::string, InferConfig>> schemes;
  auto parse_entry = [&](const std::string& entry) {
    InferConfig ic = cfg.infer;
    auto colon = entry.find(':');
    ic.scheme = entry.substr(0, colon);
    if (colon != std::string::npos) {
      std::string rest = entry.substr(colon + 1);
      if (ic.scheme == "custom")
        ic.assignment = rest;
      else
        ic.group_len = std::atoll(rest.c_str());
    }
    schemes.emplace_back(entry, ic);
  };
  if (!sweep_arg.empty()) {
    std::stringstream ss(sweep_arg);
    std::string entry;
    while (std::getline(ss, entry, ';')) parse_entry(entry);
  } else {
    std::string name = cfg.infer.scheme;
    if (cfg.infer.group_len > 0) name += ":" + std::to_string(cfg.infer.group_len);
    schemes.emplace_back(name, cfg.infer);
  }

  std::string csv = "scheme,fold," + MetricsReport::csv_header() + "\n";
  for (const auto& [name, icfg] : schemes) {
    std::vector<MetricsReport> reports;
    for (int f : folds) {
      MetricsReport rep;
      if (!baseline.empty()) {
        rep = eval_baseline(cfg, dataset, plan.folds[static_cast<size_t>(f)], baseline,
                            seed_override >= 0 ? static_cast<uint64_t>(seed_override) : 0);
      } else {
        if (run_dir.empty()) throw ConfigError("eval needs --run or --baseline");
        fs::path ckpt = fs::path(run_dir);
        if (fs::exists(ckpt / ("fold" + std::to_string(f)))) ckpt /= "fold" + std::to_string(f);
        ckpt /= "checkpoint.scdw";
        auto [mcfg, params] = load_checkpoint(ckpt);
        if (mcfg.num_classes != dataset.at(0).labels.K)
          throw FormatError("checkpoint classes do not match the dataset");
        const auto& fold = plan.folds.at(static_cast<size_t>(f));
        const auto& units = cfg.eval.split == "val" ? fold.val : fold.test;
        int64_t t_units = 0;
        if (!units.empty())
          t_units = extract_unit(find_sample(dataset, units[0].aoi_id), units[0]).T;
        ExperimentConfig ecfg = cfg;
        ecfg.infer = icfg;
        SplitScheme scheme = scheme_file.empty()
                                 ? scheme_from_config(icfg, t_units)
                                 : scheme_from_json(read_text_file(scheme_file));
        fs::path maps_dir =
            save_maps ? fs::path(out_dir) / ("maps_fold" + std::to_string(f)) : fs::path();
        rep = eval_fold(ecfg, dataset, fold, mcfg, params, &scheme, maps_dir);
      }
      write_text_file(
          fs::path(out_dir) / ("report_" + name + "_fold" + std::to_string(f) + ".json"),
          rep.to_json());
      csv += name + "," + std::to_string(f) + "," + rep.csv_row() + "\n";
      reports.push_back(rep);
    }
    // equal-weight mean across folds
    if (reports.size() > 1) {
      double miou = 0, bcv = 0, sc = 0, scs = 0;
      int n_sc = 0;
      for (const auto& r : reports) {
        miou += r.miou;
        bcv += r.bc;
        if (r.sc) {
          sc += *r.sc;
          scs += *r.scs;
          ++n_sc;
        }
      }
      MetricsReport mean;
      mean.miou = miou / static_cast<double>(reports.size());
      mean.bc = bcv / static_cast<double>(reports.size());
      if (n_sc == static_cast<int>(reports.size())) {
        mean.sc = sc / n_sc;
        mean.scs = scs / n_sc;
      }
      csv += name + ",mean," + mean.csv_row() + "\n";
    }
  }
  write_text_file(fs::path(out_dir) / "report.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_path) {
  struct Row {
    int64_t feature_dim;
    int64_t params;
    std::string scs, miou;
  };
  std::vector<Row> rows;
  for (const auto& dir : run_dirs) {
    try {
      json meta = json::parse(read_text_file(fs::path(dir) / "run_meta.json"));
      std::string csv = read_text_file(fs::path(dir) / "eval" / "report.csv");
      auto nl = csv.find('\n');
      auto second = csv.find('\n', nl + 1);
      std::string row = csv.substr(nl + 1, second - nl - 1);
      std::vector<std::string> cells;  // scheme,fold,SCS,SC,BC,mIoU
      std::stringstream ss(row);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      rows.push_back({meta.at("feature_dim").get<int64_t>(),
                      meta.at("param_count").get<int64_t>(), cells.at(2), cells.at(5)});
    } catch (const std::exception& e) {
      std::cerr << "skipping " << dir << ": " << e.what() << "\n";
    }
  }
  std::sort(rows.begin(), rows.end(),
            [](const Row& a, const Row& b) { return a.feature_dim < b.feature_dim; });
  std::string tsv = "feature_dim\tparams\tSCS\tmIoU\n";
  for (const auto& r : rows)
    tsv += std::to_string(r.feature_dim) + "\t" + std::to_string(r.params) + "\t" + r.scs +
           "\t" + r.miou + "\n";
  if (!out_path.empty()) write_text_file(out_path, tsv);
  std::cout << tsv;
  return 0;
}

int cmd_selftest() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
    if (!ok) ++failures;
  };
  check("scs arithmetic", std::abs(scs(0.410, 0.224) - 0.317) < 5e-4 &&
                              std::abs(scs(0.257, 0.017) - 0.137) < 5e-4);
  {
    Rng rng(1);
    LabelSeries gt;
    gt.T = 3;
    gt.H = gt.W = 4;
    gt.K = 3;
    gt.labels.resize(48);
    gt.ignore.assign(48, 0);
    for (auto& v : gt.labels) v = static_cast<uint8_t>(rng.uniform_int(0, 2));
    MetricsAccumulator acc(3);
    acc.add(gt, gt);
    auto rep = acc.finalize();
    check("perfect prediction scores 1.0",
          rep.miou == 1.0 && rep.bc == 1.0 && (!rep.sc || *rep.sc == 1.0));
  }
  {
    Rng rng(2);
    std::vector<double> xv(2 * 3 * 5 * 5);
    for (auto& v : xv) v = rng.uniform(-1, 1);
    Tensor<double> x({2, 3, 5, 5}, xv);
    std::vector<double> kv(4 * 3 * 3 * 3);
    for (auto& v : kv) v = rng.uniform(-1, 1);
    Tensor<double> k({4, 3, 3, 3}, kv);
    Tensor<double> b = Tensor<double>::zeros({4});
    auto res = grad_check<double>(
        [&](Tape<double>&, Tensor<double> leaf) {
          return sum_all(relu(conv2d(leaf, k, b, 1, 1)));
        },
        x, 1e-5);
    check("conv2d gradient", res.max_rel_error < 1e-4);
  }
  {
    bool ok = true;
    try {
      plan_no_shift({"a", "b", "c"}).check_invariants();
      std::vector<std::string> ids;
      for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
      plan_spatial(ids).check_invariants();
    } catch (const std::exception&) {
      ok = false;
    }
    check("fold plan invariants", ok);
  }
  {
    SyntheticWorldConfig c;
    c.n_aoi = 1;
    c.H = c.W = 16;
    c.T = 3;
    c.seed = 3;
    auto a = synth_generate(c);
    auto b = synth_generate(c);
    check("synthetic generation determinism", a[0].images == b[0].images);
  }
  std::cout << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
  return failures == 0 ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"satellite image time series semantic change detection workbench"};
  app.require_subcommand(1);

  std::string config_path, data_dir, plan_path, out, fold = "0", setting, subsets_file;
  std::string run_dir, variant, baseline, sweep, scheme_file;
  bool save_maps = false;
  std::vector<std::string> run_dirs;
  int64_t seed = -1, iters = -1;
  int split_day = -1;
  int jobs = env_threads();

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", config_path, "experiment config file");
  synth->add_option("--out", out, "output dataset directory")->required();
  synth->add_option("--seed", seed, "seed override");

  auto* split = app.add_subcommand("split", "plan folds for a domain-shift setting");
  split->add_option("--data", data_dir, "dataset directory")->required();
  split->add_option("--setting", setting, "no_shift | temporal | spatial")->required();
  split->add_option("--out", out, "plan output path");
  split->add_option("--split-day", split_day, "temporal split day offset");
  split->add_option("--subsets", subsets_file, "json file with 5 explicit AoI subsets");

  auto* tr = app.add_subcommand("train", "train a model on one or all folds");
  tr->add_option("--config", config_path, "experiment config file");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--plan", plan_path, "fold plan json")->required();
  tr->add_option("--fold", fold, "fold index or 'all'");
  tr->add_option("--out", out, "run output directory")->required();
  tr->add_option("--variant", variant, "ours | tae | ltae");
  tr->add_option("--iters", iters, "max iterations override");
  tr->add_option("--seed", seed, "training seed override");
  tr->add_option("--jobs", jobs, "parallel folds (default from SCD_THREADS)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or baseline");
  ev->add_option("--config", config_path, "experiment config file");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--plan", plan_path, "fold plan json")->required();
  ev->add_option("--fold", fold, "fold index or 'all'");
  ev->add_option("--run", run_dir, "run directory with checkpoint.scdw");
  ev->add_option("--out", out, "report output directory")->required();
  ev->add_option("--baseline", baseline, "random | oracle");
  ev->add_option("--sweep", sweep, "semicolon list of schemes, e.g. full;contiguous:6;strided:6");
  ev->add_option("--seed", seed, "baseline seed");
  ev->add_option("--scheme-file", scheme_file, "json scheme (assignment vector)");
  ev->add_flag("--save-maps", save_maps, "export predicted label maps as u8 rasters");

  auto* rep = app.add_subcommand("report", "assemble a comparison table from runs");
  rep->add_option("--runs", run_dirs, "run directories")->required();
  rep->add_option("--out", out, "tsv output path");

  app.add_subcommand("selftest", "quick internal consistency checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("synth")) return cmd_synth(config_path, out, seed);
    if (app.got_subcommand("split"))
      return cmd_split(data_dir, setting, out, split_day, subsets_file);
    if (app.got_subcommand("train"))
      return cmd_train(config_path, data_dir, plan_path, fold, out, variant, iters, seed, jobs);
    if (app.got_subcommand("eval"))
      return cmd_eval(config_path, data_dir, plan_path, fold, run_dir, out, baseline, sweep,
                      seed, scheme_file, save_maps);
    if (app.got_subcommand("report")) return cmd_report(run_dirs, out);
    if (app.got_subcommand("selftest")) return cmd_selftest();
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
