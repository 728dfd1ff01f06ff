// mqc: synthetic motion corruption, dataset management, probe training,
// and evaluation as one subcommand-style binary.
//
// Exit codes: 0 ok, 1 usage/input error, 2 data or audit failure.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mqc/config.hpp"
#include "mqc/dataset.hpp"
#include "mqc/metrics.hpp"
#include "mqc/probe.hpp"

namespace fs = std::filesystem;
using namespace mqc;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDataFailure = 2;

std::vector<double> read_value_column(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = csv::split_line(line);
    const std::string& cell = fields.front();
    try {
      values.push_back(std::stod(cell));
    } catch (...) {
      if (values.empty()) continue;  // header line
      throw FormatError(path + ": cannot parse value '" + cell + "'");
    }
  }
  return values;
}

struct FeatureTable {
  std::vector<std::string> paths;
  std::vector<Split> splits;
  std::vector<double> targets;
  Eigen::MatrixXd x;
};

FeatureTable read_feature_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty");
  const auto header = csv::split_line(line);
  if (header.size() < 4 || header[0] != "path" || header[1] != "split" ||
      header[2] != "target")
    throw FormatError(path + ": expected header path,split,target,f0,...");
  const int n_feat = static_cast<int>(header.size()) - 3;

  FeatureTable t;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv::split_line(line);
    if (static_cast<int>(f.size()) != n_feat + 3)
      throw FormatError(path + ": ragged row");
    t.paths.push_back(f[0]);
    t.splits.push_back(split_from_string(f[1]));
    t.targets.push_back(std::stod(f[2]));
    std::vector<double> feats;
    for (int c = 0; c < n_feat; ++c) feats.push_back(std::stod(f[3 + c]));
    rows.push_back(std::move(feats));
  }
  t.x.resize(rows.size(), n_feat);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < n_feat; ++c) t.x(r, c) = rows[r][c];
  return t;
}

PretrainData select_regression(const FeatureTable& t, Split split) {
  PretrainData d;
  std::vector<int> idx;
  for (std::size_t i = 0; i < t.splits.size(); ++i)
    if (t.splits[i] == split) idx.push_back(static_cast<int>(i));
  d.x.resize(idx.size(), t.x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    d.x.row(i) = t.x.row(idx[i]);
    d.scores.push_back(t.targets[idx[i]]);
  }
  return d;
}

ClassifyData select_classify(const FeatureTable& t, Split split) {
  ClassifyData d;
  std::vector<int> idx;
  for (std::size_t i = 0; i < t.splits.size(); ++i)
    if (t.splits[i] == split) idx.push_back(static_cast<int>(i));
  d.x.resize(idx.size(), t.x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    d.x.row(i) = t.x.row(idx[i]);
    d.labels.push_back(static_cast<int>(t.targets[idx[i]]));
  }
  return d;
}

std::vector<LayerSpec> trunk_arch(const RunConfig& cfg) {
  std::vector<LayerSpec> arch;
  int in = feature_count();
  for (int h : cfg.trunk_hidden) {
    arch.push_back(LayerSpec{in, h, true, false, 0.0});
    in = h;
  }
  arch.push_back(LayerSpec{in, cfg.bins.n_bins, false, false, 0.0});
  return arch;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path);
}

void write_history(const std::string& path,
                   const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,val_r2,lr\n";
  for (const auto& h : history)
    out << h.epoch << "," << h.train_loss << "," << h.val_loss << ","
        << h.val_r2 << "," << h.lr << "\n";
  write_text(path, out.str());
}

nlohmann::json classify_json(const TransferResult& r) {
  auto j = nlohmann::json::parse(classification_report_json(r.val_confusion));
  j["best_val_balanced_accuracy"] = r.best_val_balanced_accuracy;
  j["warnings"] = r.warnings;
  return j;
}

int cmd_generate(const std::string& config_path,
                 const std::string& manifest_path, const std::string& out_dir,
                 int passes, std::int64_t seed, int workers) {
  RunConfig cfg = config_path.empty() ? RunConfig{}
                                      : RunConfig::load(config_path);
  if (passes > 0) cfg.passes = passes;
  if (seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(seed);
  if (workers > 0) cfg.workers = workers;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (cfg.out_dir.empty())
    throw ArgumentError("generate: --out (or run.out_dir) is required");

  const Manifest manifest = read_manifest(manifest_path);

  GenerationOptions opts;
  opts.augment = cfg.augment;
  opts.motion = cfg.motion;
  opts.rms = cfg.rms;
  opts.bins = cfg.bins;
  opts.passes = cfg.passes;
  opts.master_seed = cfg.master_seed;
  opts.workers = cfg.workers;
  opts.out_dir = cfg.out_dir;

  GenerationReport report;
  try {
    report = run_generation(manifest, opts);
  } catch (const IoError& e) {
    std::cerr << "generation failed: " << e.what() << "\n";
    return kDataFailure;
  }
  const std::string report_path =
      (fs::path(cfg.out_dir) / "generation_report.json").string();
  write_text(report_path, report.to_json() + "\n");
  std::cout << report_path << "\n";
  return kOk;
}

int cmd_eval_regression(const std::string& pred_path,
                        const std::string& truth_path,
                        const std::string& out_json,
                        const std::string& out_calibration, int n_points) {
  const auto pred = read_value_column(pred_path);
  const auto truth = read_value_column(truth_path);
  if (pred.size() != truth.size())
    throw ArgumentError("eval: pred/truth length mismatch");
  nlohmann::json j;
  j["r2"] = r_squared(truth, pred);
  const auto curve = calibration_curve(truth, pred, n_points);
  const std::string csv_text = calibration_to_csv(curve);
  if (!out_json.empty()) write_text(out_json, j.dump(2) + "\n");
  if (!out_calibration.empty()) write_text(out_calibration, csv_text);
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int cmd_eval_classification(const std::string& pred_path,
                            const std::string& truth_path, int n_classes,
                            const std::string& out_json) {
  const auto pred_d = read_value_column(pred_path);
  const auto truth_d = read_value_column(truth_path);
  if (pred_d.size() != truth_d.size())
    throw ArgumentError("eval: pred/truth length mismatch");
  std::vector<int> pred(pred_d.begin(), pred_d.end());
  std::vector<int> truth(truth_d.begin(), truth_d.end());
  const auto cm = ConfusionMatrix::from_labels(truth, pred, n_classes);
  const std::string text = classification_report_json(cm);
  if (!out_json.empty()) write_text(out_json, text + "\n");
  std::cout << text << "\n";
  return kOk;
}

int cmd_features(const std::string& labels_manifest, const std::string& out,
                 int phase_axis) {
  std::ifstream in(labels_manifest);
  if (!in) throw IoError("cannot open " + labels_manifest);
  std::string line;
  if (!std::getline(in, line) ||
      csv::split_line(line) !=
          std::vector<std::string>{"path", "sidecar", "rms_score", "split"})
    throw FormatError(labels_manifest + ": expected path,sidecar,rms_score,split");

  std::ostringstream out_csv;
  out_csv << "path,split,target";
  for (const auto& name : feature_names()) out_csv << "," << name;
  out_csv << "\n";
  int count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv::split_line(line);
    if (f.size() != 4) throw FormatError(labels_manifest + ": ragged row");
    const Volume3D v = read_volume(f[0]);
    const auto feats = extract_features(v, phase_axis);
    out_csv << csv::quote(f[0]) << "," << f[3] << "," << f[2];
    char buf[32];
    for (double x : feats) {
      std::snprintf(buf, sizeof(buf), ",%.12g", x);
      out_csv << buf;
    }
    out_csv << "\n";
    ++count;
  }
  write_text(out, out_csv.str());
  std::cerr << "extracted features for " << count << " volumes\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic MRI motion QC pipeline"};
  app.require_subcommand(1);

  // ---- generate
  std::string g_config, g_manifest, g_out;
  int g_passes = 0, g_workers = 0;
  std::int64_t g_seed = -1;
  auto* generate = app.add_subcommand("generate", "run the corruption pipeline");
  generate->add_option("--config", g_config, "TOML run config");
  generate->add_option("--manifest", g_manifest, "source manifest CSV")
      ->required();
  generate->add_option("--out", g_out, "output directory");
  generate->add_option("--passes", g_passes, "passes per volume");
  generate->add_option("--seed", g_seed, "master seed");
  generate->add_option("--workers", g_workers, "worker threads");

  // ---- split
  std::string s_manifest, s_out, s_synth_sites, s_qc_sites, s_fractions;
  std::int64_t s_seed = 0;
  auto* split = app.add_subcommand("split", "assign pools and splits");
  split->add_option("--manifest", s_manifest)->required();
  split->add_option("--out", s_out)->required();
  split->add_option("--synth-sites", s_synth_sites, "comma-separated sites");
  split->add_option("--qc-sites", s_qc_sites, "comma-separated sites");
  split->add_option("--subjects", s_fractions,
                    "train,val,test fractions for a subject-level split");
  split->add_option("--seed", s_seed);

  // ---- filter
  std::string f_manifest, f_out, f_keywords = "motion,movement,ringing";
  auto* filter =
      app.add_subcommand("filter", "keep clean QC-4 volumes for synthesis");
  filter->add_option("--manifest", f_manifest)->required();
  filter->add_option("--out", f_out)->required();
  filter->add_option("--keywords", f_keywords, "comment keywords to reject");

  // ---- audit
  std::string a_manifest;
  auto* audit = app.add_subcommand("audit", "check split/pool leakage");
  audit->add_option("--manifest", a_manifest)->required();

  // ---- eval
  std::string e_pred, e_truth, e_task = "regression", e_json, e_calibration;
  int e_classes = 3, e_points = 20;
  auto* eval = app.add_subcommand("eval", "metrics from prediction CSVs");
  eval->add_option("--pred", e_pred)->required();
  eval->add_option("--truth", e_truth)->required();
  eval->add_option("--task", e_task)
      ->check(CLI::IsMember({"regression", "classification"}));
  eval->add_option("--classes", e_classes);
  eval->add_option("--points", e_points, "calibration curve bins");
  eval->add_option("--out-json", e_json);
  eval->add_option("--out-calibration", e_calibration);

  // ---- features
  std::string x_labels, x_out;
  int x_phase_axis = 1;
  auto* features =
      app.add_subcommand("features", "extract probe features per volume");
  features->add_option("--labels-manifest", x_labels)->required();
  features->add_option("--out", x_out)->required();
  features->add_option("--phase-axis", x_phase_axis);

  // ---- probe
  std::string p_config, p_features, p_trunk, p_model_out = "model",
              p_history, p_report, p_compare_out;
  int p_seeds = 5;
  auto* probe = app.add_subcommand("probe", "train/evaluate the probe");
  probe->require_subcommand(1);
  auto add_common = [&](CLI::App* sub, bool needs_trunk) {
    sub->add_option("--config", p_config, "TOML run config");
    sub->add_option("--features", p_features, "feature CSV")->required();
    if (needs_trunk)
      sub->add_option("--trunk", p_trunk, "pretrained model path prefix")
          ->required();
  };
  auto* pretrain_cmd = probe->add_subcommand("pretrain");
  add_common(pretrain_cmd, false);
  pretrain_cmd->add_option("--out-model", p_model_out, "output model prefix");
  pretrain_cmd->add_option("--history", p_history, "history CSV path");
  auto* transfer_cmd = probe->add_subcommand("transfer");
  add_common(transfer_cmd, true);
  transfer_cmd->add_option("--report", p_report);
  auto* scratch_cmd = probe->add_subcommand("scratch");
  add_common(scratch_cmd, false);
  scratch_cmd->add_option("--report", p_report);
  auto* compare_cmd = probe->add_subcommand("compare");
  add_common(compare_cmd, true);
  compare_cmd->add_option("--seeds", p_seeds);
  compare_cmd->add_option("--out", p_compare_out, "comparison CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return kUsage;
  }

  try {
    if (generate->parsed())
      return cmd_generate(g_config, g_manifest, g_out, g_passes, g_seed,
                          g_workers);

    if (split->parsed()) {
      Manifest m = read_manifest(s_manifest);
      auto parse_list = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ','))
          if (!item.empty()) out.push_back(item);
        return out;
      };
      if (!s_synth_sites.empty() || !s_qc_sites.empty())
        split_by_site(m, parse_list(s_synth_sites), parse_list(s_qc_sites));
      if (!s_fractions.empty()) {
        const auto f = parse_list(s_fractions);
        if (f.size() != 3)
          throw ArgumentError("--subjects needs train,val,test fractions");
        split_subjects(m, std::stod(f[0]), std::stod(f[1]), std::stod(f[2]),
                       static_cast<std::uint64_t>(s_seed));
      }
      const auto violations = audit_manifest(m);
      if (!violations.empty()) {
        for (const auto& v : violations) std::cerr << v << "\n";
        return kDataFailure;
      }
      write_manifest(m, s_out);
      return kOk;
    }

    if (filter->parsed()) {
      Manifest m = read_manifest(f_manifest);
      std::vector<std::string> kw;
      std::stringstream ss(f_keywords);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) kw.push_back(item);
      write_manifest(filter_for_synthesis(m, kw), f_out);
      return kOk;
    }

    if (audit->parsed()) {
      const auto violations = audit_manifest(read_manifest(a_manifest));
      for (const auto& v : violations) std::cerr << v << "\n";
      return violations.empty() ? kOk : kDataFailure;
    }

    if (eval->parsed()) {
      if (e_task == "regression")
        return cmd_eval_regression(e_pred, e_truth, e_json, e_calibration,
                                   e_points);
      return cmd_eval_classification(e_pred, e_truth, e_classes, e_json);
    }

    if (features->parsed()) return cmd_features(x_labels, x_out, x_phase_axis);

    if (probe->parsed()) {
      RunConfig cfg = p_config.empty() ? RunConfig{}
                                       : RunConfig::load(p_config);
      const FeatureTable table = read_feature_table(p_features);

      if (pretrain_cmd->parsed()) {
        const PretrainData train = select_regression(table, Split::Train);
        const PretrainData val = select_regression(table, Split::Val);
        const PretrainResult res =
            pretrain(train, val, trunk_arch(cfg), cfg.bins, cfg.pretrain_cfg);
        save_model(res.best_model, p_model_out + ".bin", p_model_out + ".json");
        if (!p_history.empty()) write_history(p_history, res.history);
        std::cout << "best_val_r2 " << res.best_val_r2 << " at epoch "
                  << res.best_epoch << "\n";
        return kOk;
      }

      const ClassifyData train = select_classify(table, Split::Train);
      const ClassifyData val = select_classify(table, Split::Val);

      if (transfer_cmd->parsed() || compare_cmd->parsed()) {
        const MlpModel trunk =
            load_model(p_trunk + ".bin", p_trunk + ".json");
        if (trunk.feature_version != kFeatureVersion)
          throw ArgumentError("trunk feature version mismatch");
        if (transfer_cmd->parsed()) {
          const TransferResult r =
              transfer_train(trunk, train, val, e_classes, cfg.transfer_cfg,
                             cfg.transfer_dropout, cfg.head_hidden);
          for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
          const auto j = classify_json(r);
          if (!p_report.empty()) write_text(p_report, j.dump(2) + "\n");
          std::cout << j.dump(2) << "\n";
          return kOk;
        }
        std::vector<std::uint64_t> seeds;
        for (int s = 0; s < p_seeds; ++s) seeds.push_back(1000 + s);
        const ComparisonReport report = compare_transfer_vs_scratch(
            trunk, trunk_arch(cfg), train, val, e_classes, cfg.transfer_cfg,
            cfg.scratch_cfg, seeds);
        const std::string csv_text = report.to_csv();
        if (!p_compare_out.empty()) write_text(p_compare_out, csv_text);
        std::cout << csv_text;
        return kOk;
      }

      if (scratch_cmd->parsed()) {
        const TransferResult r =
            scratch_train(trunk_arch(cfg), train, val, e_classes,
                          cfg.scratch_cfg, cfg.scratch_dropout, cfg.head_hidden);
        const auto j = classify_json(r);
        if (!p_report.empty()) write_text(p_report, j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
        return kOk;
      }
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataFailure;
  }
  return kUsage;
}
