#include "locodec/trainer.hpp"

#include "locodec/error.hpp"
#include "locodec/io.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

namespace locodec {

std::string_view to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw ArgumentError("unknown optimizer '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ArgumentError(std::string("train config: ") + what);
  };
  need(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must be in [0, 1)");
  need(epsilon > 0.0, "epsilon must be positive");
  need(batch_size > 0, "batch_size must be positive");
  need(patience >= 1, "patience must be at least 1");
}

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"train_mse", e.train_mse}, {"val_mse", e.val_mse},
                        {"seconds", e.seconds}};
    out += j.dump() + "\n";
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(checksum));
  nlohmann::json s = {{"summary", true},         {"epochs_run", epochs.size()},
                      {"best_epoch", best_epoch}, {"best_val_mse", best_val_mse},
                      {"wall_time_s", wall_time_s}, {"stopped_early", stopped_early},
                      {"checksum", hex}};
  if (!epochs.empty()) s["train_val_gap"] = epochs[best_epoch - 1].val_mse - epochs[best_epoch - 1].train_mse;
  out += s.dump() + "\n";
  return out;
}

double evaluate_mse(const Decoder& d, const WindowSet& ws) {
  if (ws.size() == 0) throw ArgumentError("evaluate_mse: empty window set");
  const auto p = d.predict(ws);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - ws.views[i].target;
    s += e * e;
  }
  return s / static_cast<double>(p.size());
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class Stepper {
 public:
  Stepper(std::vector<ad::Parameter*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double lr = cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      ad::Parameter& p = *params_[k];
      if (p.grad.size() != p.value.size()) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        if (cfg_.optimizer == Optimizer::sgd) {
          p.value[i] -= lr * g;
          continue;
        }
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        p.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
      }
    }
  }

 private:
  std::vector<ad::Parameter*> params_;
  const TrainConfig& cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

ad::Tensor gather_rows(const ad::Tensor& src, std::span<const std::size_t> idx) {
  ad::Shape s = src.shape();
  const std::size_t row = src.size() / s[0];
  s[0] = idx.size();
  ad::Tensor out(s);
  for (std::size_t b = 0; b < idx.size(); ++b)
    std::copy(src.data() + idx[b] * row, src.data() + (idx[b] + 1) * row, out.data() + b * row);
  return out;
}

ad::Tensor body_features_all(const Decoder& d, const WindowSet& ws) {
  constexpr std::size_t kChunk = 256;
  std::vector<double> data;
  ad::Shape shape;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < ws.size(); s += kChunk) {
    idx.resize(std::min(kChunk, ws.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const ad::Tensor f = d.body_features(ws.batch(idx));
    shape = f.shape();
    data.insert(data.end(), f.values().begin(), f.values().end());
  }
  shape[0] = ws.size();
  return ad::Tensor(shape, std::move(data));
}

TrainResult run(Decoder d, const WindowSet& tr, const WindowSet& va, const TrainConfig& cfg, bool set_affine) {
  cfg.validate();
  if (!is_trainable(d.family())) throw ArgumentError("train: random_forest is fitted with Forest::fit");
  if (tr.size() == 0 || va.size() == 0) throw ArgumentError("train: empty training or validation windows");
  const auto t0 = Clock::now();
  if (set_affine) d.standardize_targets_from(tr);

  const bool head_only = cfg.freeze_body;
  d.freeze_body(head_only);
  std::vector<ad::Parameter*> trainable;
  for (auto& p : d.parameters())
    if (p.trainable) trainable.push_back(&p);

  ad::Tensor train_feat, val_feat;
  if (head_only) {
    train_feat = body_features_all(d, tr);
    val_feat = body_features_all(d, va);
  }
  const auto train_y = tr.targets();
  const auto val_y = va.targets();

  auto val_mse = [&]() {
    if (!head_only) return evaluate_mse(d, va);
    const ad::Tensor out = d.head_output(val_feat);
    double s = 0.0;
    for (std::size_t i = 0; i < val_y.size(); ++i) {
      const double e = out[i] * d.target_scale + d.target_mean - val_y[i];
      s += e * e;
    }
    return s / static_cast<double>(val_y.size());
  };

  Stepper opt(trainable, cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(tr.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult res;
  TrainReport& rep = res.report;
  std::vector<ad::Tensor> best;
  const double scale2 = d.target_scale * d.target_scale;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto te = Clock::now();
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(cfg.batch_size, order.size() - s));
      ad::Tensor y({idx.size()});
      for (std::size_t b = 0; b < idx.size(); ++b) y[b] = (train_y[idx[b]] - d.target_mean) / d.target_scale;
      ad::Graph g;
      ad::Var out = head_only ? d.head(g, g.constant(gather_rows(train_feat, idx)), &rng)
                              : d.forward(g, g.constant(tr.batch(idx)), &rng);
      ad::Var loss = ad::mse(out, g.constant(std::move(y)));
      const double l = loss.value().item();
      if (!std::isfinite(l)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (learning rate " +
                              format_double(cfg.learning_rate) + "): non-finite loss");
      }
      g.backward(loss);
      opt.step();
      loss_sum += l * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = loss_sum / static_cast<double>(order.size()) * scale2;
    rec.val_mse = val_mse();
    if (!std::isfinite(rec.val_mse)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (learning rate " +
                            format_double(cfg.learning_rate) + "): non-finite validation loss");
    }
    rec.seconds = seconds_since(te);
    rep.epochs.push_back(rec);
    if (rep.best_epoch == 0 || rec.val_mse < rep.best_val_mse) {
      rep.best_epoch = epoch;
      rep.best_val_mse = rec.val_mse;
      best.clear();
      for (const auto& p : d.parameters()) best.push_back(p.value);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      rep.stopped_early = true;
      break;
    }
  }
  if (!best.empty())
    for (std::size_t i = 0; i < best.size(); ++i) d.parameters()[i].value = std::move(best[i]);
  d.freeze_body(false);
  d.round_to_float();
  for (auto& p : d.parameters()) p.grad = ad::Tensor(p.value.shape(), 0.0);
  rep.checksum = d.checksum_body() ^ (d.checksum_head() * 0x9e3779b97f4a7c15ULL);
  rep.wall_time_s = seconds_since(t0);
  res.decoder = std::move(d);
  return res;
}

}  // namespace

TrainResult train(const Decoder& init, const WindowSet& train_set, const WindowSet& val_set,
                  const TrainConfig& cfg) {
  return run(init, train_set, val_set, cfg, cfg.standardize_target);
}

TrainResult fine_tune(const Decoder& pretrained, const WindowSet& train_set, const WindowSet& val_set,
                      const TrainConfig& cfg, std::optional<Family> expect) {
  if (expect && *expect != pretrained.family())
    throw SpecMismatchError("fine_tune: pretrained decoder is " + std::string(to_string(pretrained.family())) +
                            ", expected " + std::string(to_string(*expect)));
  if (cfg.max_epochs == 0) {
    TrainResult r;
    r.decoder = pretrained;
    r.report.checksum = pretrained.checksum_body() ^ (pretrained.checksum_head() * 0x9e3779b97f4a7c15ULL);
    return r;
  }
  TrainConfig c = cfg;
  c.freeze_body = true;
  return run(pretrained, train_set, val_set, c, false);
}

}  // namespace locodec
