#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "mqc/probe.hpp"

namespace mqc {

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kLogClamp = 1e-12;

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

struct LayerCache {
  Eigen::MatrixXd input;      // after dropout
  Eigen::MatrixXd mask;       // dropout mask (empty if none)
  Eigen::MatrixXd z;          // pre-BN linear output
  Eigen::MatrixXd zc;         // BN-normalized (empty if no BN)
  Eigen::VectorXd mu, var;    // batch stats used
  Eigen::MatrixXd pre_act;    // post-BN, pre-activation
};

// Shared by inference and training; caches are filled only when wanted.
Eigen::MatrixXd forward_impl(MlpModel& m, const Eigen::MatrixXd& x, Mode mode,
                             Rng* dropout_rng, std::vector<LayerCache>* caches,
                             int stop_after_layer = -1) {
  m.validate();
  if (x.cols() != m.input_dim())
    throw ArgumentError("mlp: input width mismatch");

  Eigen::MatrixXd a = x;
  if (m.input_mean.size() == m.input_dim()) {
    a.rowwise() -= m.input_mean.transpose();
    a.array().rowwise() /= m.input_std.transpose().array();
  }

  if (caches) caches->resize(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Layer& layer = m.layers[l];
    LayerCache local;
    LayerCache& cache = caches ? (*caches)[l] : local;

    if (mode == Mode::Train && layer.spec.dropout > 0.0 && dropout_rng) {
      const double keep = 1.0 - layer.spec.dropout;
      cache.mask.resize(a.rows(), a.cols());
      for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < a.cols(); ++c)
          cache.mask(r, c) = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
      a = a.cwiseProduct(cache.mask);
    }
    cache.input = a;

    Eigen::MatrixXd z = (a * layer.w).rowwise() + layer.b.transpose();
    cache.z = z;

    if (layer.spec.batch_norm) {
      if (mode == Mode::Train) {
        if (z.rows() < 2)
          throw ArgumentError("mlp: batch norm needs batch size >= 2 in train mode");
        const Eigen::VectorXd mu = z.colwise().mean();
        const Eigen::VectorXd var =
            (z.rowwise() - mu.transpose()).array().square().colwise().mean();
        layer.bn_run_mean =
            (1.0 - kBnMomentum) * layer.bn_run_mean + kBnMomentum * mu;
        layer.bn_run_var =
            (1.0 - kBnMomentum) * layer.bn_run_var + kBnMomentum * var;
        cache.mu = mu;
        cache.var = var;
      } else {
        cache.mu = layer.bn_run_mean;
        cache.var = layer.bn_run_var;
      }
      Eigen::MatrixXd zc = z.rowwise() - cache.mu.transpose();
      const Eigen::ArrayXd inv_std = (cache.var.array() + kBnEps).sqrt().inverse();
      zc.array().rowwise() *= inv_std.transpose();
      cache.zc = zc;
      z = zc;
      z.array().rowwise() *= layer.bn_gamma.transpose().array();
      z.rowwise() += layer.bn_beta.transpose();
    }
    cache.pre_act = z;

    a = layer.spec.relu ? z.cwiseMax(0.0) : z;
    if (static_cast<int>(l) == stop_after_layer) return a;
  }
  return a;  // logits
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ArgumentError("TrainConfig: bad lr");
  if (weight_decay < 0.0) throw ArgumentError("TrainConfig: bad weight decay");
  if (scheduler_patience < 1 || early_stop_patience < 1)
    throw ArgumentError("TrainConfig: patience must be >= 1");
  if (batch_size < 1 || max_epochs < 1)
    throw ArgumentError("TrainConfig: bad batch size or epochs");
}

MlpModel MlpModel::make(const std::vector<LayerSpec>& specs,
                        std::uint64_t seed) {
  if (specs.empty()) throw ArgumentError("MlpModel: no layers");
  Rng rng(seed);
  MlpModel m;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto& s = specs[l];
    if (s.in < 1 || s.out < 1) throw ArgumentError("MlpModel: bad layer size");
    if (l > 0 && s.in != specs[l - 1].out)
      throw ArgumentError("MlpModel: layer shapes do not chain");
    Layer layer;
    layer.spec = s;
    // He init for ReLU layers, Xavier-ish otherwise
    const double scale = s.relu ? std::sqrt(2.0 / s.in)
                                : std::sqrt(1.0 / s.in);
    layer.w.resize(s.in, s.out);
    for (Eigen::Index i = 0; i < layer.w.size(); ++i)
      layer.w.data()[i] = scale * rng.normal();
    layer.b = Eigen::VectorXd::Zero(s.out);
    if (s.batch_norm) {
      layer.bn_gamma = Eigen::VectorXd::Ones(s.out);
      layer.bn_beta = Eigen::VectorXd::Zero(s.out);
      layer.bn_run_mean = Eigen::VectorXd::Zero(s.out);
      layer.bn_run_var = Eigen::VectorXd::Ones(s.out);
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

void MlpModel::validate() const {
  if (layers.empty()) throw ArgumentError("MlpModel: no layers");
  for (std::size_t l = 1; l < layers.size(); ++l)
    if (layers[l].spec.in != layers[l - 1].spec.out)
      throw ArgumentError("MlpModel: layer shapes do not chain");
  for (const auto& layer : layers)
    if (layer.spec.batch_norm && (layer.bn_run_var.array() <= 0.0).any())
      throw ArgumentError("MlpModel: non-positive running variance");
}

std::uint64_t param_hash(const MlpModel& m) {
  std::uint64_t h = 14695981039346656037ULL;
  auto feed = [&h](const double* p, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (Eigen::Index i = 0; i < n * static_cast<Eigen::Index>(sizeof(double));
         ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& layer : m.layers) {
    feed(layer.w.data(), layer.w.size());
    feed(layer.b.data(), layer.b.size());
    if (layer.spec.batch_norm) {
      feed(layer.bn_gamma.data(), layer.bn_gamma.size());
      feed(layer.bn_beta.data(), layer.bn_beta.size());
      feed(layer.bn_run_mean.data(), layer.bn_run_mean.size());
      feed(layer.bn_run_var.data(), layer.bn_run_var.size());
    }
  }
  return h;
}

Eigen::MatrixXd mlp_forward(MlpModel& m, const Eigen::MatrixXd& x, Mode mode,
                            Rng* dropout_rng) {
  return softmax_rows(forward_impl(m, x, mode, dropout_rng, nullptr));
}

Eigen::MatrixXd mlp_embed(MlpModel& m, const Eigen::MatrixXd& x) {
  const int last_hidden = static_cast<int>(m.layers.size()) - 2;
  if (last_hidden < 0) throw ArgumentError("mlp_embed: model has one layer");
  return forward_impl(m, x, Mode::Eval, nullptr, nullptr, last_hidden);
}

double mlp_loss_and_gradients(MlpModel& m, const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& targets, Gradients& out,
                              Mode mode, Rng* dropout_rng) {
  if (targets.rows() != x.rows() || targets.cols() != m.output_dim())
    throw ArgumentError("mlp: target shape mismatch");

  std::vector<LayerCache> caches;
  const Eigen::MatrixXd logits = forward_impl(m, x, mode, dropout_rng, &caches);
  const Eigen::MatrixXd probs = softmax_rows(logits);
  const double n = static_cast<double>(x.rows());

  double loss = 0.0;
  for (Eigen::Index r = 0; r < targets.rows(); ++r)
    for (Eigen::Index c = 0; c < targets.cols(); ++c) {
      const double t = targets(r, c);
      if (t <= 0.0) continue;
      loss += t * (std::log(t) - std::log(std::max(probs(r, c), kLogClamp)));
    }
  loss /= n;
  if (!std::isfinite(loss))
    throw std::runtime_error("mlp: non-finite training loss");

  // softmax + KL collapses to (p - t) at the logits
  Eigen::MatrixXd d = (probs - targets) / n;

  out.layers.resize(m.layers.size());
  for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
    Layer& layer = m.layers[l];
    LayerCache& cache = caches[l];
    auto& grad = out.layers[l];

    if (layer.spec.relu)
      d = d.cwiseProduct(
          (cache.pre_act.array() > 0.0).cast<double>().matrix());

    if (layer.spec.batch_norm) {
      grad.bn_gamma = d.cwiseProduct(cache.zc).colwise().sum().transpose();
      grad.bn_beta = d.colwise().sum().transpose();
      Eigen::MatrixXd dzc = d;
      dzc.array().rowwise() *= layer.bn_gamma.transpose().array();

      const double nb = static_cast<double>(d.rows());
      const Eigen::ArrayXd inv_std = (cache.var.array() + kBnEps).sqrt().inverse();
      // d z = (1/n) inv_std (n dzc - sum(dzc) - zc * sum(dzc .* zc))
      const Eigen::RowVectorXd sum_dzc = dzc.colwise().sum();
      const Eigen::RowVectorXd sum_dzc_zc =
          dzc.cwiseProduct(cache.zc).colwise().sum();
      Eigen::MatrixXd dz = nb * dzc;
      dz.rowwise() -= sum_dzc;
      dz -= cache.zc * sum_dzc_zc.asDiagonal();
      dz.array().rowwise() *= inv_std.transpose() / nb;
      d = dz;
    } else {
      grad.bn_gamma.resize(0);
      grad.bn_beta.resize(0);
    }

    grad.w = cache.input.transpose() * d;
    grad.b = d.colwise().sum().transpose();
    if (l > 0) {
      d = d * layer.w.transpose();
      if (cache.mask.size() > 0) d = d.cwiseProduct(cache.mask);
    }
  }
  return loss;
}

AdamW::AdamW(const MlpModel& m, double lr, double weight_decay)
    : lr_(lr), wd_(weight_decay) {
  auto zero_like = [](const MlpModel& model, Gradients& g) {
    g.layers.resize(model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const auto& layer = model.layers[l];
      g.layers[l].w = Eigen::MatrixXd::Zero(layer.w.rows(), layer.w.cols());
      g.layers[l].b = Eigen::VectorXd::Zero(layer.b.size());
      if (layer.spec.batch_norm) {
        g.layers[l].bn_gamma = Eigen::VectorXd::Zero(layer.bn_gamma.size());
        g.layers[l].bn_beta = Eigen::VectorXd::Zero(layer.bn_beta.size());
      }
    }
  };
  zero_like(m, m1_);
  zero_like(m, m2_);
}

void AdamW::step(MlpModel& m, const Gradients& g) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

  auto update = [&](auto& param, const auto& grad, auto& m1, auto& m2,
                    bool decay) {
    m1 = beta1_ * m1 + (1.0 - beta1_) * grad;
    m2.array() = beta2_ * m2.array() + (1.0 - beta2_) * grad.array().square();
    const auto mhat = (m1.array() / bc1).eval();
    const auto vhat = (m2.array() / bc2).eval();
    param.array() -= lr_ * mhat / (vhat.sqrt() + eps_);
    if (decay) param.array() -= lr_ * wd_ * param.array();
  };

  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    auto& s1 = m1_.layers[l];
    auto& s2 = m2_.layers[l];
    update(layer.w, g.layers[l].w, s1.w, s2.w, true);
    update(layer.b, g.layers[l].b, s1.b, s2.b, false);
    if (layer.spec.batch_norm) {
      update(layer.bn_gamma, g.layers[l].bn_gamma, s1.bn_gamma, s2.bn_gamma,
             false);
      update(layer.bn_beta, g.layers[l].bn_beta, s1.bn_beta, s2.bn_beta,
             false);
    }
  }
}

void save_model(const MlpModel& m, const std::string& bin_path,
                const std::string& json_path) {
  nlohmann::json desc;
  desc["format_version"] = 1;
  desc["feature_version"] = m.feature_version;
  desc["bins"] = {{"n_bins", m.bins.n_bins},
                  {"lo", m.bins.lo},
                  {"hi", m.bins.hi},
                  {"soft_sigma", m.bins.soft_sigma}};
  auto specs = nlohmann::json::array();
  for (const auto& layer : m.layers)
    specs.push_back({{"in", layer.spec.in},
                     {"out", layer.spec.out},
                     {"relu", layer.spec.relu},
                     {"batch_norm", layer.spec.batch_norm},
                     {"dropout", layer.spec.dropout}});
  desc["layers"] = specs;
  desc["has_input_norm"] = m.input_mean.size() > 0;
  std::ofstream jf(json_path);
  jf << desc.dump(2) << "\n";
  if (!jf) throw IoError("cannot write " + json_path);

  std::ofstream bf(bin_path, std::ios::binary);
  if (!bf) throw IoError("cannot write " + bin_path);
  const char magic[4] = {'M', 'Q', 'C', 'M'};
  const std::uint32_t version = 1;
  bf.write(magic, 4);
  bf.write(reinterpret_cast<const char*>(&version), 4);
  auto dump = [&bf](const double* p, Eigen::Index n) {
    bf.write(reinterpret_cast<const char*>(p), n * sizeof(double));
  };
  if (m.input_mean.size() > 0) {
    dump(m.input_mean.data(), m.input_mean.size());
    dump(m.input_std.data(), m.input_std.size());
  }
  for (const auto& layer : m.layers) {
    dump(layer.w.data(), layer.w.size());
    dump(layer.b.data(), layer.b.size());
    if (layer.spec.batch_norm) {
      dump(layer.bn_gamma.data(), layer.bn_gamma.size());
      dump(layer.bn_beta.data(), layer.bn_beta.size());
      dump(layer.bn_run_mean.data(), layer.bn_run_mean.size());
      dump(layer.bn_run_var.data(), layer.bn_run_var.size());
    }
  }
  if (!bf) throw IoError("write failed: " + bin_path);
}

MlpModel load_model(const std::string& bin_path, const std::string& json_path) {
  std::ifstream jf(json_path);
  if (!jf) throw IoError("cannot open " + json_path);
  nlohmann::json desc;
  jf >> desc;
  if (desc.at("format_version").get<int>() != 1)
    throw FormatError(json_path + ": unsupported model format version");

  std::vector<LayerSpec> specs;
  for (const auto& s : desc.at("layers"))
    specs.push_back(LayerSpec{s.at("in").get<int>(), s.at("out").get<int>(),
                              s.at("relu").get<bool>(),
                              s.at("batch_norm").get<bool>(),
                              s.at("dropout").get<double>()});
  MlpModel m = MlpModel::make(specs, 0);
  m.feature_version = desc.at("feature_version").get<std::string>();
  m.bins.n_bins = desc.at("bins").at("n_bins").get<int>();
  m.bins.lo = desc.at("bins").at("lo").get<double>();
  m.bins.hi = desc.at("bins").at("hi").get<double>();
  m.bins.soft_sigma = desc.at("bins").at("soft_sigma").get<double>();

  std::ifstream bf(bin_path, std::ios::binary);
  if (!bf) throw IoError("cannot open " + bin_path);
  char magic[4];
  std::uint32_t version = 0;
  bf.read(magic, 4);
  bf.read(reinterpret_cast<char*>(&version), 4);
  if (std::memcmp(magic, "MQCM", 4) != 0 || version != 1)
    throw CorruptFileError(bin_path + ": bad model file header");
  auto slurp = [&bf, &bin_path](double* p, Eigen::Index n) {
    bf.read(reinterpret_cast<char*>(p), n * sizeof(double));
    if (!bf) throw CorruptFileError(bin_path + ": truncated model file");
  };
  if (desc.at("has_input_norm").get<bool>()) {
    m.input_mean.resize(m.input_dim());
    m.input_std.resize(m.input_dim());
    slurp(m.input_mean.data(), m.input_mean.size());
    slurp(m.input_std.data(), m.input_std.size());
  }
  for (auto& layer : m.layers) {
    slurp(layer.w.data(), layer.w.size());
    slurp(layer.b.data(), layer.b.size());
    if (layer.spec.batch_norm) {
      slurp(layer.bn_gamma.data(), layer.bn_gamma.size());
      slurp(layer.bn_beta.data(), layer.bn_beta.size());
      slurp(layer.bn_run_mean.data(), layer.bn_run_mean.size());
      slurp(layer.bn_run_var.data(), layer.bn_run_var.size());
    }
  }
  return m;
}

}  // namespace mqc
