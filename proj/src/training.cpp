#include "cine/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "cine/random.hpp"

namespace cine {

double loss_mse(const RealSequence& prediction, const RealSequence& target) {
  if (prediction.size() != target.size()) throw std::invalid_argument("loss_mse: frame count mismatch");
  double sum = 0.0;
  double n = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    if (prediction[t].rows() != target[t].rows() || prediction[t].cols() != target[t].cols())
      throw std::invalid_argument("loss_mse: frame shape mismatch");
    sum += (prediction[t] - target[t]).squaredNorm();
    n += static_cast<double>(target[t].size());
  }
  if (n == 0) throw std::invalid_argument("loss_mse: empty input");
  return sum / n;
}

nn::Var loss_mse(const std::vector<nn::Var>& prediction, const RealSequence& target) {
  if (prediction.size() != target.size()) throw std::invalid_argument("loss_mse: frame count mismatch");
  if (target.empty()) throw std::invalid_argument("loss_mse: empty input");
  std::vector<nn::Var> terms;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const nn::Tensor ref = nn::Tensor::from_image(target[t]);
    if (!prediction[t].value().same_shape(ref))
      throw std::invalid_argument("loss_mse: frame shape mismatch, " + nn::shape_string(prediction[t].shape()) + " vs " +
                                  nn::shape_string(ref.shape()));
    terms.push_back(nn::mse_loss(prediction[t], nn::Var(ref)));
  }
  // Frames share a size, so the mean of per-frame means is the global mean.
  return nn::scale(terms.size() == 1 ? terms.front() : nn::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

AdamW::AdamW(std::vector<nn::NamedParameter> params, double lr, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_.push_back(Eigen::VectorXd::Zero(p.value().size()));
    v_.push_back(Eigen::VectorXd::Zero(p.value().size()));
  }
}

void AdamW::zero_grad() {
  for (const auto& [name, p] : params_) p.zero_grad();
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Var p = params_[i].second;
    if (!p.has_grad()) continue;
    const Eigen::VectorXd& g = p.grad().vec();
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseAbs2();
    Eigen::VectorXd& w = p.mutable_value().vec();
    const Eigen::VectorXd update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_) + (wd_ * w).array();
    w -= lr_ * update;
  }
}

PlateauScheduler::PlateauScheduler(const PlateauConfig& config, double initial_lr)
    : config_(config), lr_(initial_lr), best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::step(double loss) {
  if (loss < best_ * (1.0 - 1e-4) || !std::isfinite(best_)) {
    best_ = loss;
    bad_ = 0;
    return lr_;
  }
  if (++bad_ >= config_.patience) {
    lr_ = std::max(config_.min_lr, lr_ * config_.factor);
    bad_ = 0;
  }
  return lr_;
}

std::string RunRecord::to_json() const {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash;
  j["steps"] = steps;
  j["best_epoch"] = best_epoch;
  j["best_val_loss"] = best_val_loss;
  j["best_checkpoint"] = best_checkpoint;
  j["wall_seconds"] = wall_seconds;
  j["lr_trace"] = lr_trace;
  j["step_losses"] = step_losses;
  auto& eps = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    nlohmann::ordered_json r;
    r["epoch"] = e.epoch;
    r["steps"] = e.steps;
    r["train_loss"] = e.train_loss;
    r["val_loss"] = e.val_loss ? nlohmann::ordered_json(*e.val_loss) : nlohmann::ordered_json(nullptr);
    r["lr"] = e.lr;
    r["seconds"] = e.seconds;
    eps.push_back(r);
  }
  return j.dump(2);
}

double mean_loss(const nn::CineReconNet& model, const std::vector<NetInput>& set) {
  if (set.empty()) throw std::invalid_argument("mean_loss: empty set");
  double sum = 0.0;
  for (const auto& in : set) sum += loss_mse(model.reconstruct(in), in.target);
  return sum / static_cast<double>(set.size());
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void check_params(const std::vector<nn::NamedParameter>& params, bool grads) {
  for (const auto& [name, p] : params) {
    if (!p.value().all_finite()) throw NonFiniteError("non-finite parameter '" + name + "'");
    if (grads && p.has_grad() && !p.grad().all_finite()) throw NonFiniteError("non-finite gradient of '" + name + "'");
  }
}

void check_outputs(const std::vector<nn::Var>& out, const std::string& id) {
  for (std::size_t t = 0; t < out.size(); ++t)
    if (!out[t].value().all_finite())
      throw NonFiniteError("non-finite network output '" + id + "/frame" + std::to_string(t) + "'");
}

float round_to_float(double x) { return static_cast<float>(x); }

}  // namespace

RunRecord train(nn::CineReconNet& model, const std::vector<NetInput>& train_set, const std::vector<NetInput>& val_set,
                const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training split");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation split");
  const auto t_start = Clock::now();
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };

  RunRecord record;
  record.config_hash = options.config_hash;
  const auto params = model.parameters();
  AdamW opt(params, config.learning_rate, config.weight_decay);
  PlateauScheduler sched(config.plateau, config.learning_rate);
  std::optional<nn::ParameterStore> best;
  double best_loss = std::numeric_limits<double>::infinity();
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  check_params(params, false);
  std::vector<Eigen::VectorXd> master;
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.max_steps > 0 && record.steps >= config.max_steps) break;
    const auto t_epoch = Clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochRecord er;
    er.epoch = epoch;
    er.lr = opt.lr();
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      if (config.max_steps > 0 && record.steps >= config.max_steps) break;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (config.mixed_precision) {
        // Forward and backward see float-rounded weights; the update is applied to the double master copy.
        master.clear();
        for (const auto& [name, p] : params) {
          master.push_back(p.value().vec());
          nn::Var v = p;
          v.mutable_value().vec() = v.value().vec().unaryExpr([](double x) { return static_cast<double>(round_to_float(x)); });
        }
      }
      opt.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const NetInput& in = train_set[order[b]];
        std::vector<nn::Var> pred;
        try {
          pred = model.forward(in);
        } catch (const std::invalid_argument& e) {
          if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
          check_params(params, false);
          throw NonFiniteError("non-finite activation on '" + in.id + "': " + e.what());
        }
        check_outputs(pred, in.id);
        const nn::Var loss = loss_mse(pred, in.target);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) throw NonFiniteError("non-finite loss on '" + in.id + "'");
        nn::scale(loss, 1.0 / static_cast<double>(end - start)).backward();
        batch_loss += value / static_cast<double>(end - start);
      }
      if (config.mixed_precision) {
        for (std::size_t i = 0; i < params.size(); ++i) {
          nn::Var v = params[i].second;
          v.mutable_value().vec() = master[i];
          if (v.has_grad()) {
            auto& g = v.node()->grad.vec();
            g = g.unaryExpr([](double x) { return static_cast<double>(round_to_float(x)); });
          }
        }
      }
      check_params(params, true);
      opt.step();
      check_params(params, false);
      record.step_losses.push_back(batch_loss);
      epoch_loss += batch_loss;
      ++epoch_steps;
      ++record.steps;
    }
    opt.zero_grad();
    er.steps = record.steps;
    er.train_loss = epoch_steps > 0 ? epoch_loss / epoch_steps : 0.0;

    const bool last = epoch + 1 == config.epochs || (config.max_steps > 0 && record.steps >= config.max_steps);
    if ((epoch + 1) % config.val_every == 0 || last) {
      const double vl = mean_loss(model, val_set);
      if (!std::isfinite(vl)) throw NonFiniteError("non-finite validation loss");
      er.val_loss = vl;
      opt.set_lr(sched.step(vl));
      record.lr_trace.push_back(opt.lr());
      if (vl < best_loss) {
        best_loss = vl;
        best = nn::snapshot(model);
        record.best_epoch = epoch;
        record.best_val_loss = vl;
        if (!options.out_dir.empty()) {
          const auto path = options.out_dir / "best.ckpt";
          nn::save_params(path, *best);
          record.best_checkpoint = path.string();
        }
      }
    }
    er.seconds = seconds_since(t_epoch);
    record.epochs.push_back(er);
    log("epoch " + std::to_string(epoch) + " steps " + std::to_string(record.steps) + " train " + std::to_string(er.train_loss) +
        (er.val_loss ? " val " + std::to_string(*er.val_loss) : std::string()) + " lr " + std::to_string(er.lr));
    if (er.val_loss && options.should_stop && options.should_stop(model, record)) break;
  }
  if (options.restore_best && best) nn::restore(model, *best);
  record.wall_seconds = seconds_since(t_start);
  if (!options.out_dir.empty()) std::ofstream(options.out_dir / "run_record.json") << record.to_json() << "\n";
  return record;
}

Evaluation evaluate(const Reconstructor& reconstruct, const std::vector<NetInput>& set) {
  if (set.empty()) throw std::invalid_argument("evaluate: empty split");
  Evaluation ev;
  for (const auto& in : set) {
    ev.model.push_back(compute_metrics(in.id, in.target, reconstruct(in)));
    ev.baseline.push_back(compute_metrics(in.id, in.target, in.zero_filled));
  }
  ev.model_report = aggregate(ev.model);
  ev.baseline_report = aggregate(ev.baseline);
  return ev;
}

Evaluation evaluate(const nn::CineReconNet& model, const std::vector<NetInput>& set) {
  return evaluate([&model](const NetInput& in) { return model.reconstruct(in); }, set);
}

}  // namespace cine
