#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "mqc/probe.hpp"

namespace mqc {

namespace {

Eigen::MatrixXd soft_targets(const std::vector<double>& scores,
                             const BinSpec& bins) {
  Eigen::MatrixXd t(scores.size(), bins.n_bins);
  for (std::size_t r = 0; r < scores.size(); ++r) {
    const SoftLabel p = encode_soft(scores[r], bins);
    for (int c = 0; c < bins.n_bins; ++c) t(r, c) = p[c];
  }
  return t;
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int k) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(labels.size(), k);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= k)
      throw ArgumentError("one_hot: label out of range");
    t(r, labels[r]) = 1.0;
  }
  return t;
}

double mean_kl(const Eigen::MatrixXd& targets, const Eigen::MatrixXd& probs) {
  double loss = 0.0;
  for (Eigen::Index r = 0; r < targets.rows(); ++r)
    for (Eigen::Index c = 0; c < targets.cols(); ++c) {
      const double t = targets(r, c);
      if (t <= 0.0) continue;
      loss += t * (std::log(t) - std::log(std::max(probs(r, c), 1e-12)));
    }
  return loss / static_cast<double>(targets.rows());
}

void fit_input_norm(MlpModel& m, const Eigen::MatrixXd& x) {
  m.input_mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - m.input_mean.transpose();
  m.input_std =
      centered.array().square().colwise().mean().sqrt().transpose().matrix();
  for (Eigen::Index i = 0; i < m.input_std.size(); ++i)
    if (m.input_std[i] < 1e-8) m.input_std[i] = 1.0;
}

std::vector<double> decode_batch(const Eigen::MatrixXd& probs,
                                 const BinSpec& bins) {
  std::vector<double> out(probs.rows());
  SoftLabel p(bins.n_bins);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    for (int c = 0; c < bins.n_bins; ++c) p[c] = probs(r, c);
    out[r] = decode_expected(p, bins);
  }
  return out;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& probs) {
  std::vector<int> out(probs.rows());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index best;
    probs.row(r).maxCoeff(&best);
    out[r] = static_cast<int>(best);
  }
  return out;
}

// Selection-time variant that ignores classes with no validation samples.
double safe_balanced_accuracy(const ConfusionMatrix& cm) {
  double acc = 0.0;
  int classes = 0;
  for (int t = 0; t < cm.k(); ++t) {
    const long long row = cm.row_sum(t);
    if (row == 0) continue;
    acc += static_cast<double>(cm.at(t, t)) / static_cast<double>(row);
    ++classes;
  }
  return classes ? acc / classes : 0.0;
}

// One full supervised run over (x, targets); shared by every arm.
struct FitResult {
  MlpModel best_model{};
  double best_metric = -std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<EpochStats> history;
};

template <typename MetricFn>
FitResult fit(MlpModel model, const Eigen::MatrixXd& x_train,
              const Eigen::MatrixXd& t_train, const Eigen::MatrixXd& x_val,
              const Eigen::MatrixXd& t_val, const TrainConfig& cfg,
              MetricFn&& val_metric) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(x_train.rows());

  AdamW opt(model, cfg.learning_rate, cfg.weight_decay);
  Rng shuffle_rng(hash_combine(cfg.seed, 0xA1));
  Rng dropout_rng(hash_combine(cfg.seed, 0xB2));

  FitResult res;
  res.best_model = model;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int plateau = 0, stale = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, i - 1)]);

    double train_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const auto bs = stop - start;
      // batch norm cannot run on a single sample; fold it into nothing
      if (bs < 2 && n > 1) continue;
      Eigen::MatrixXd xb(bs, x_train.cols());
      Eigen::MatrixXd tb(bs, t_train.cols());
      for (std::size_t i = 0; i < bs; ++i) {
        xb.row(i) = x_train.row(order[start + i]);
        tb.row(i) = t_train.row(order[start + i]);
      }
      Gradients g;
      const double loss = mlp_loss_and_gradients(model, xb, tb, g, Mode::Train,
                                                 &dropout_rng);
      if (cfg.learning_rate > 0.0) opt.step(model, g);
      train_loss += loss * bs;
      seen += bs;
    }
    if (seen) train_loss /= seen;

    const Eigen::MatrixXd val_probs = mlp_forward(model, x_val, Mode::Eval);
    const double val_loss = mean_kl(t_val, val_probs);
    const double metric = val_metric(val_probs);

    res.history.push_back(
        {epoch, train_loss, val_loss, metric, opt.lr()});

    if (metric > res.best_metric) {
      res.best_metric = metric;
      res.best_model = model;
      res.best_epoch = epoch;
    }
    if (val_loss < best_val_loss - cfg.improvement_eps) {
      best_val_loss = val_loss;
      plateau = 0;
      stale = 0;
    } else {
      ++plateau;
      ++stale;
    }
    if (plateau >= cfg.scheduler_patience) {
      opt.set_lr(opt.lr() * cfg.scheduler_factor);
      plateau = 0;
    }
    if (stale >= cfg.early_stop_patience) break;
  }
  return res;
}

TransferResult classify_result(MlpModel model, const Eigen::MatrixXd& x_val,
                               const std::vector<int>& val_labels,
                               int n_classes, double best_metric,
                               std::vector<std::string> warnings) {
  const Eigen::MatrixXd probs = mlp_forward(model, x_val, Mode::Eval);
  const auto preds = argmax_rows(probs);
  ConfusionMatrix cm =
      ConfusionMatrix::from_labels(val_labels, preds, n_classes);
  return TransferResult{std::move(model), best_metric, cm, f1_per_class(cm),
                        std::move(warnings)};
}

}  // namespace

PretrainResult pretrain(const PretrainData& train, const PretrainData& val,
                        const std::vector<LayerSpec>& arch,
                        const BinSpec& bins, const TrainConfig& cfg) {
  if (train.x.rows() == 0 || val.x.rows() == 0)
    throw ArgumentError("pretrain: empty split");
  if (static_cast<std::size_t>(train.x.rows()) != train.scores.size() ||
      static_cast<std::size_t>(val.x.rows()) != val.scores.size())
    throw ArgumentError("pretrain: feature/score count mismatch");
  if (arch.back().out != bins.n_bins)
    throw ArgumentError("pretrain: output layer must match bin count");

  MlpModel model = MlpModel::make(arch, hash_combine(cfg.seed, 0x11));
  model.bins = bins;
  fit_input_norm(model, train.x);

  const Eigen::MatrixXd t_train = soft_targets(train.scores, bins);
  const Eigen::MatrixXd t_val = soft_targets(val.scores, bins);

  const bool constant_truth =
      *std::max_element(val.scores.begin(), val.scores.end()) -
          *std::min_element(val.scores.begin(), val.scores.end()) <
      1e-12;
  auto metric = [&](const Eigen::MatrixXd& probs) {
    if (constant_truth) return 0.0;
    return r_squared(val.scores, decode_batch(probs, bins));
  };

  FitResult res =
      fit(std::move(model), train.x, t_train, val.x, t_val, cfg, metric);
  return PretrainResult{std::move(res.best_model), std::move(res.history),
                        res.best_metric, res.best_epoch};
}

TransferResult transfer_train(const MlpModel& trunk, const ClassifyData& train,
                              const ClassifyData& val, int n_classes,
                              const TrainConfig& cfg, double dropout,
                              int hidden) {
  if (train.x.rows() == 0 || val.x.rows() == 0)
    throw ArgumentError("transfer_train: empty split");

  std::vector<std::string> warnings;
  for (int c = 0; c < n_classes; ++c)
    if (std::count(train.labels.begin(), train.labels.end(), c) == 0)
      warnings.push_back("class " + std::to_string(c) +
                         " absent from the training split");

  const std::uint64_t trunk_hash_before = param_hash(trunk);
  MlpModel trunk_copy = trunk;  // embeddings in eval mode leave it untouched
  const Eigen::MatrixXd emb_train = mlp_embed(trunk_copy, train.x);
  const Eigen::MatrixXd emb_val = mlp_embed(trunk_copy, val.x);
  if (param_hash(trunk_copy) != trunk_hash_before)
    throw std::runtime_error("transfer_train: trunk parameters changed");

  // two linear layers, batch norm + ReLU on the first
  const int emb_dim = static_cast<int>(emb_train.cols());
  std::vector<LayerSpec> head_arch = {
      LayerSpec{emb_dim, hidden, true, true, dropout},
      LayerSpec{hidden, n_classes, false, false, 0.0}};
  MlpModel head = MlpModel::make(head_arch, hash_combine(cfg.seed, 0x22));
  fit_input_norm(head, emb_train);

  const Eigen::MatrixXd t_train = one_hot(train.labels, n_classes);
  const Eigen::MatrixXd t_val = one_hot(val.labels, n_classes);

  auto metric = [&](const Eigen::MatrixXd& probs) {
    return safe_balanced_accuracy(ConfusionMatrix::from_labels(
        val.labels, argmax_rows(probs), n_classes));
  };
  FitResult res =
      fit(std::move(head), emb_train, t_train, emb_val, t_val, cfg, metric);
  return classify_result(std::move(res.best_model), emb_val, val.labels,
                         n_classes, res.best_metric, std::move(warnings));
}

TransferResult scratch_train(const std::vector<LayerSpec>& trunk_arch,
                             const ClassifyData& train, const ClassifyData& val,
                             int n_classes, const TrainConfig& cfg,
                             double dropout, int hidden) {
  if (train.x.rows() == 0 || val.x.rows() == 0)
    throw ArgumentError("scratch_train: empty split");

  std::vector<LayerSpec> arch(trunk_arch.begin(), trunk_arch.end() - 1);
  const int emb_dim = arch.empty() ? trunk_arch.front().in : arch.back().out;
  arch.push_back(LayerSpec{emb_dim, hidden, true, true, dropout});
  arch.push_back(LayerSpec{hidden, n_classes, false, false, 0.0});

  MlpModel model = MlpModel::make(arch, hash_combine(cfg.seed, 0x33));
  fit_input_norm(model, train.x);

  const Eigen::MatrixXd t_train = one_hot(train.labels, n_classes);
  const Eigen::MatrixXd t_val = one_hot(val.labels, n_classes);
  auto metric = [&](const Eigen::MatrixXd& probs) {
    return safe_balanced_accuracy(ConfusionMatrix::from_labels(
        val.labels, argmax_rows(probs), n_classes));
  };
  FitResult res =
      fit(std::move(model), train.x, t_train, val.x, t_val, cfg, metric);
  return classify_result(std::move(res.best_model), val.x, val.labels,
                         n_classes, res.best_metric, {});
}

std::string ComparisonReport::to_csv() const {
  std::string out = "arm,seed,balanced_accuracy";
  const std::size_t k = rows.empty() ? 0 : rows.front().f1.size();
  for (std::size_t c = 0; c < k; ++c)
    out += ",f1_class" + std::to_string(c);
  out += "\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.arm;
    std::snprintf(buf, sizeof(buf), ",%llu,%.6f",
                  static_cast<unsigned long long>(r.seed),
                  r.balanced_accuracy);
    out += buf;
    for (double f : r.f1) {
      std::snprintf(buf, sizeof(buf), ",%.6f", f);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

ComparisonReport compare_transfer_vs_scratch(
    const MlpModel& trunk, const std::vector<LayerSpec>& scratch_arch,
    const ClassifyData& train, const ClassifyData& val, int n_classes,
    const TrainConfig& transfer_cfg, const TrainConfig& scratch_cfg,
    const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ArgumentError("compare: need at least one seed");

  ComparisonReport report;
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  for (const std::string arm : {"transfer", "scratch"}) {
    std::vector<double> ba;
    std::vector<std::vector<double>> f1s;
    for (const auto seed : seeds) {
      TransferResult r = [&] {
        if (arm == "transfer") {
          TrainConfig cfg = transfer_cfg;
          cfg.seed = seed;
          return transfer_train(trunk, train, val, n_classes, cfg);
        }
        TrainConfig cfg = scratch_cfg;
        cfg.seed = seed;
        return scratch_train(scratch_arch, train, val, n_classes, cfg, 0.68);
      }();
      const double b = safe_balanced_accuracy(r.val_confusion);
      report.rows.push_back({arm, seed, b, r.val_f1});
      ba.push_back(b);
      f1s.push_back(r.val_f1);
    }
    std::vector<double> f1_median(n_classes, 0.0);
    for (int c = 0; c < n_classes; ++c) {
      std::vector<double> col;
      for (const auto& f : f1s) col.push_back(f[c]);
      f1_median[c] = median(col);
    }
    report.rows.push_back({arm + "_median", 0, median(ba), f1_median});
  }
  return report;
}

}  // namespace mqc
