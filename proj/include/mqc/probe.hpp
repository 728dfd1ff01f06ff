#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mqc/labels.hpp"
#include "mqc/metrics.hpp"
#include "mqc/rng.hpp"
#include "mqc/volume.hpp"

namespace mqc {

// ---------------------------------------------------------------- features

inline constexpr const char* kFeatureVersion = "fv1";
int feature_count();
std::vector<std::string> feature_names();

/// Hand-crafted motion-sensitive descriptor of a [0,1]-normalized volume:
/// per-axis high-frequency k-space energy ratios, gradient stats, intensity
/// entropy, a focus measure, and a phase-axis autocorrelation ghost score.
std::vector<double> extract_features(const Volume3D& v, int phase_axis = 1);

// --------------------------------------------------------------------- mlp

enum class Mode { Train, Eval };

struct LayerSpec {
  int in = 0;
  int out = 0;
  bool relu = false;
  bool batch_norm = false;
  double dropout = 0.0;  // applied to the layer input in train mode
};

struct Layer {
  LayerSpec spec;
  Eigen::MatrixXd w;  // in x out
  Eigen::VectorXd b;
  Eigen::VectorXd bn_gamma, bn_beta, bn_run_mean, bn_run_var;
};

struct MlpModel {
  std::vector<Layer> layers;
  // input standardization fitted on the training set
  Eigen::VectorXd input_mean, input_std;
  std::string feature_version = kFeatureVersion;
  BinSpec bins;

  static MlpModel make(const std::vector<LayerSpec>& specs,
                       std::uint64_t seed);
  int input_dim() const { return layers.front().spec.in; }
  int output_dim() const { return layers.back().spec.out; }
  void validate() const;
};

/// FNV-style hash over every parameter byte; used for freeze checks.
std::uint64_t param_hash(const MlpModel& m);

void save_model(const MlpModel& m, const std::string& bin_path,
                const std::string& json_path);
MlpModel load_model(const std::string& bin_path, const std::string& json_path);

/// Softmax class/bin probabilities for a batch (rows = samples). Train mode
/// uses batch statistics and updates running ones.
Eigen::MatrixXd mlp_forward(MlpModel& m, const Eigen::MatrixXd& x, Mode mode,
                            Rng* dropout_rng = nullptr);

/// Activations feeding the final linear layer (the embedding).
Eigen::MatrixXd mlp_embed(MlpModel& m, const Eigen::MatrixXd& x);

/// Per-layer parameter gradients, same shapes as the model.
struct Gradients {
  struct LayerGrad {
    Eigen::MatrixXd w;
    Eigen::VectorXd b, bn_gamma, bn_beta;
  };
  std::vector<LayerGrad> layers;
};

/// Mean KL(target || softmax(logits)) over the batch plus its gradients.
/// One-hot targets make this cross-entropy.
double mlp_loss_and_gradients(MlpModel& m, const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& targets, Gradients& out,
                              Mode mode = Mode::Train,
                              Rng* dropout_rng = nullptr);

struct TrainConfig {
  double learning_rate = 2e-5;
  double weight_decay = 0.05;
  double scheduler_factor = 0.6;
  int scheduler_patience = 5;
  int early_stop_patience = 15;
  int batch_size = 24;
  int max_epochs = 200;
  double improvement_eps = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

class AdamW {
 public:
  AdamW(const MlpModel& m, double lr, double weight_decay);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step(MlpModel& m, const Gradients& g);

 private:
  double lr_, wd_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
  Gradients m1_, m2_;
};

struct EpochStats {
  int epoch;
  double train_loss;
  double val_loss;
  double val_r2;
  double lr;
};

struct PretrainData {
  Eigen::MatrixXd x;            // rows = samples
  std::vector<double> scores;   // rms motion scores
};

struct PretrainResult {
  MlpModel best_model;
  std::vector<EpochStats> history;
  double best_val_r2;
  int best_epoch;
};

/// KL bin-regression training with reduce-on-plateau and early stop;
/// returns the model with the best validation R^2.
PretrainResult pretrain(const PretrainData& train, const PretrainData& val,
                        const std::vector<LayerSpec>& arch,
                        const BinSpec& bins, const TrainConfig& cfg);

struct ClassifyData {
  Eigen::MatrixXd x;
  std::vector<int> labels;  // merged 3-class
};

struct TransferResult {
  MlpModel head;
  double best_val_balanced_accuracy;
  ConfusionMatrix val_confusion;
  std::vector<double> val_f1;
  std::vector<std::string> warnings;
};

/// Train the two-layer batch-norm head on frozen trunk embeddings with
/// cross-entropy; selects the best validation balanced accuracy.
TransferResult transfer_train(const MlpModel& trunk, const ClassifyData& train,
                              const ClassifyData& val, int n_classes,
                              const TrainConfig& cfg, double dropout = 0.7,
                              int hidden = 16);

/// Same head architecture stacked on a fresh trunk, all trained from scratch.
TransferResult scratch_train(const std::vector<LayerSpec>& trunk_arch,
                             const ClassifyData& train, const ClassifyData& val,
                             int n_classes, const TrainConfig& cfg,
                             double dropout = 0.68, int hidden = 16);

struct ComparisonRow {
  std::string arm;  // "transfer" | "scratch" | "transfer_median" | ...
  std::uint64_t seed;
  double balanced_accuracy;
  std::vector<double> f1;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::string to_csv() const;
};

ComparisonReport compare_transfer_vs_scratch(
    const MlpModel& trunk, const std::vector<LayerSpec>& scratch_arch,
    const ClassifyData& train, const ClassifyData& val, int n_classes,
    const TrainConfig& transfer_cfg, const TrainConfig& scratch_cfg,
    const std::vector<std::uint64_t>& seeds);

}  // namespace mqc
