#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cine/config.hpp"
#include "cine/metrics.hpp"
#include "cine/model.hpp"
#include "cine/param_store.hpp"

namespace cine {

/// Mean squared difference over every pixel of every frame.
double loss_mse(const RealSequence& prediction, const RealSequence& target);
nn::Var loss_mse(const std::vector<nn::Var>& prediction, const RealSequence& target);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<nn::NamedParameter> params, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<nn::NamedParameter>& params() const { return params_; }

 private:
  std::vector<nn::NamedParameter> params_;
  std::vector<Eigen::VectorXd> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
};

/// Multiplies the rate by `factor` once the monitored loss has gone
/// `patience` consecutive epochs without a relative improvement of 1e-4.
class PlateauScheduler {
 public:
  PlateauScheduler(const PlateauConfig& config, double initial_lr);
  /// Feeds one validation loss; returns the rate for the next epoch.
  double step(double loss);
  double lr() const { return lr_; }

 private:
  PlateauConfig config_;
  double lr_;
  double best_;
  int bad_ = 0;
};

/// Thrown when training hits a non-finite value; the message names the
/// first offending tensor.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  int epoch = 0;
  int steps = 0;  // cumulative
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double lr = 0.0;  // rate used during the epoch
  double seconds = 0.0;
};

struct RunRecord {
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::vector<double> lr_trace;  // rate after each scheduler update
  int steps = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::string best_checkpoint;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

struct TrainOptions {
  std::string config_hash;
  std::filesystem::path out_dir;  // empty: nothing written
  bool restore_best = true;
  std::function<void(const std::string&)> log;
  // Asked after every validation; returning true ends training there.
  std::function<bool(const nn::CineReconNet&, const RunRecord&)> should_stop;
};

RunRecord train(nn::CineReconNet& model, const std::vector<NetInput>& train_set, const std::vector<NetInput>& val_set,
                const TrainConfig& config, const TrainOptions& options = {});

/// Mean loss_mse of the model over a set, no gradients.
double mean_loss(const nn::CineReconNet& model, const std::vector<NetInput>& set);

using Reconstructor = std::function<RealSequence(const NetInput&)>;

struct Evaluation {
  std::vector<MetricsRecord> model;
  std::vector<MetricsRecord> baseline;  // zero-filled, same measurements
  AggregateReport model_report;
  AggregateReport baseline_report;
};

Evaluation evaluate(const Reconstructor& reconstruct, const std::vector<NetInput>& set);
Evaluation evaluate(const nn::CineReconNet& model, const std::vector<NetInput>& set);

}  // namespace cine
