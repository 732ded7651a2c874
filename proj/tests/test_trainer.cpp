#include "helpers.hpp"

#include "locodec/error.hpp"
#include "locodec/numeric.hpp"
#include "locodec/stats.hpp"
#include "locodec/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace locodec;

namespace {

// Session whose speed at sample e is a fixed linear map of the z-scored EEG
// window ending at e, times `gain`.
Session planted_linear(std::size_t T, std::uint64_t seed, double gain, std::vector<double>& w) {
  Session s = test::random_session(1, T, seed);
  if (w.empty()) {
    std::mt19937_64 rng(1234);
    std::normal_distribution<double> n01;
    w.resize(kWindowLength);
    for (auto& v : w) v = n01(rng) / std::sqrt(20.0);
  }
  const Normalizer norm = Normalizer::fit(s.eeg, {0, T});
  const Matrix z = norm.apply(s.eeg);
  for (std::size_t e = 0; e < T; ++e) {
    double v = 0.0;
    if (e + 1 >= kWindowLength)
      for (std::size_t t = 0; t < kWindowLength; ++t) v += w[t] * z(0, e + 1 - kWindowLength + t);
    s.speed[e] = gain * v;
  }
  return s;
}

WindowSet full_windows(const Session& s, InputSource src = InputSource::eeg) {
  const IndexRange all{0, s.samples()};
  return make_window_set(s, fit_input_normalizer(s, all, src), all, 0, TargetBounds::session, src);
}

DecoderSpec small(Family f, std::size_t channels, std::uint64_t seed = 3) {
  DecoderSpec s = default_spec(f, channels);
  s.ffnn_hidden = {16, 8};
  s.lstm_hidden = 8;
  s.head_hidden = 8;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("linear decoder converges on exactly linear data") {
  std::vector<double> w;
  const Session a = planted_linear(1500, 1, 1.0, w), b = planted_linear(500, 2, 1.0, w);
  const WindowSet tr = full_windows(a), va = full_windows(b);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 50;
  cfg.patience = 50;
  cfg.batch_size = 32;
  const auto res = train(Decoder(default_spec(Family::linear, 1)), tr, va, cfg);
  CHECK(res.report.epochs.size() <= 50);
  CHECK(res.report.best_val_mse <= 1e-4 * variance(va.targets()));
}

TEST_CASE("patience stops after the validation minimum and restores it") {
  // Train targets use the planted map, validation targets half of it. Full
  // batch gradient descent from zero weights passes the validation optimum
  // between epochs 3 and 4.
  std::vector<double> w;
  const Session a = planted_linear(4000, 5, 1.0, w), b = planted_linear(2000, 6, 0.5, w);
  const WindowSet tr = full_windows(a), va = full_windows(b);
  Decoder init(default_spec(Family::linear, 1));
  init.parameter("head.fc.w").value.fill(0.0);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 0.1;
  cfg.batch_size = tr.size();
  cfg.max_epochs = 40;
  cfg.patience = 2;
  cfg.standardize_target = false;
  const auto res = train(init, tr, va, cfg);
  const auto& ep = res.report.epochs;
  REQUIRE(ep.size() >= 4);
  for (std::size_t i = 1; i < 3; ++i) CHECK(ep[i].val_mse < ep[i - 1].val_mse);
  for (std::size_t i = 3; i < ep.size(); ++i) CHECK(ep[i].val_mse > ep[i - 1].val_mse);
  CHECK(ep.size() == 5);
  CHECK(res.report.stopped_early);
  CHECK(res.report.best_epoch == 3);

  TrainConfig three = cfg;
  three.max_epochs = 3;
  const auto ref = train(init, tr, va, three);
  CHECK(res.decoder.parameter("head.fc.w").value == ref.decoder.parameter("head.fc.w").value);
  CHECK(res.decoder.parameter("head.fc.b").value == ref.decoder.parameter("head.fc.b").value);
}

TEST_CASE("returned checkpoint has the minimum validation error") {
  Session s = test::random_session(3, 1200, 9);
  for (std::size_t t = 1; t < s.samples(); ++t) s.speed[t] = 0.9 * s.speed[t - 1] + 0.3 * s.eeg(0, t) + 0.5;
  const WindowSet tr = make_window_set(s, Normalizer::fit(s.eeg, {0, 900}), {0, 900}, 0);
  const WindowSet va = make_window_set(s, Normalizer::fit(s.eeg, {0, 900}), {900, 1200}, 0);
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.patience = 3;
  const auto res = train(Decoder(small(Family::ffnn, 3)), tr, va, cfg);
  double lo = 1e300;
  for (const auto& e : res.report.epochs) lo = std::min(lo, e.val_mse);
  CHECK(res.report.best_val_mse == lo);
  // Parameters are stored at float precision after training.
  CHECK(evaluate_mse(res.decoder, va) == doctest::Approx(lo).epsilon(1e-3));
}

TEST_CASE("frozen body stays bitwise identical") {
  Session s = test::random_session(3, 800, 4);
  const WindowSet ws = full_windows(s);
  Decoder d(small(Family::lstm_rnn, 3));
  const auto body = d.checksum_body(), head = d.checksum_head();
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.freeze_body = true;
  const auto res = train(d, ws, ws, cfg);
  CHECK(res.decoder.checksum_body() == body);
  CHECK(res.decoder.checksum_head() != head);

  const auto ft = fine_tune(d, ws, ws, cfg);
  CHECK(ft.decoder.checksum_body() == body);
  for (const auto& p : ft.decoder.parameters()) CHECK(p.trainable);
}

TEST_CASE("fine-tune with zero epochs is the identity") {
  Session s = test::random_session(3, 400, 8);
  const WindowSet ws = full_windows(s);
  Decoder d(small(Family::lstm_rnn, 3));
  d.target_mean = 2.0;
  d.target_scale = 0.5;
  TrainConfig cfg;
  cfg.max_epochs = 0;
  const auto ft = fine_tune(d, ws, ws, cfg);
  CHECK(ft.decoder.checksum_body() == d.checksum_body());
  CHECK(ft.decoder.checksum_head() == d.checksum_head());
  CHECK(ft.decoder.predict(ws) == d.predict(ws));
  CHECK(ft.report.epochs.empty());
  CHECK_THROWS_AS(fine_tune(d, ws, ws, cfg, Family::transformer_encoder), SpecMismatchError);
}

TEST_CASE("fine-tune keeps the pretrained target affine") {
  Session s = test::random_session(3, 600, 2);
  const WindowSet ws = full_windows(s);
  Decoder d(small(Family::ffnn, 3));
  d.target_mean = 7.0;
  d.target_scale = 3.0;
  TrainConfig cfg;
  cfg.max_epochs = 2;
  const auto ft = fine_tune(d, ws, ws, cfg);
  CHECK(ft.decoder.target_mean == 7.0);
  CHECK(ft.decoder.target_scale == 3.0);
}

TEST_CASE("fine-tuning on the pretraining data is stable") {
  Session s = test::random_session(4, 3000, 12);
  for (std::size_t t = 1; t < s.samples(); ++t) s.speed[t] = 2.0 + std::tanh(s.eeg(0, t) + 0.5 * s.eeg(1, t - 1));
  const Normalizer norm = Normalizer::fit(s.eeg, {0, 2400});
  const WindowSet tr = make_window_set(s, norm, {0, 2400}, 0), va = make_window_set(s, norm, {2400, 3000}, 0);
  TrainConfig cfg;
  cfg.max_epochs = 15;
  const auto pre = train(Decoder(small(Family::lstm_rnn, 4)), tr, va, cfg);
  const double base = evaluate_mse(pre.decoder, va);
  TrainConfig ft_cfg = cfg;
  ft_cfg.max_epochs = 10;
  const auto ft = fine_tune(pre.decoder, tr, va, ft_cfg);
  CHECK(evaluate_mse(ft.decoder, va) <= 1.05 * base);
}

TEST_CASE("training is reproducible") {
  Session s = test::random_session(3, 700, 5);
  const WindowSet tr = make_window_set(s, Normalizer::fit(s.eeg, {0, 500}), {0, 500}, 0);
  const WindowSet va = make_window_set(s, Normalizer::fit(s.eeg, {0, 500}), {500, 700}, 0);
  for (Family f : {Family::ffnn, Family::lstm_rnn, Family::transformer_encoder}) {
    DecoderSpec spec = small(f, 3);
    spec.embed_dim = 8;
    spec.heads = 2;
    spec.ffn_dim = 8;
    spec.conv_channels = 4;
    spec.dropout = 0.1;
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.seed = 44;
    const auto a = train(Decoder(spec), tr, va, cfg), b = train(Decoder(spec), tr, va, cfg);
    REQUIRE(a.report.epochs.size() == b.report.epochs.size());
    for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
      CHECK(a.report.epochs[i].train_mse == b.report.epochs[i].train_mse);
      CHECK(a.report.epochs[i].val_mse == b.report.epochs[i].val_mse);
    }
    CHECK(a.report.checksum == b.report.checksum);
  }
}

TEST_CASE("overfitting a single batch decreases the loss monotonically") {
  Session s = test::random_session(3, 83, 6);
  const WindowSet ws = full_windows(s);
  REQUIRE(ws.size() == 64);
  for (Family f : {Family::linear, Family::ffnn, Family::lstm_rnn}) {
    TrainConfig cfg;
    cfg.batch_size = 64;
    cfg.max_epochs = 40;
    cfg.patience = 40;
    cfg.learning_rate = 1e-3;
    const auto res = train(Decoder(small(f, 3)), ws, ws, cfg);
    const auto& ep = res.report.epochs;
    for (std::size_t i = 2; i < ep.size(); ++i) CHECK(ep[i].train_mse < ep[i - 1].train_mse);
  }
}

TEST_CASE("divergence is reported") {
  Session s = test::random_session(3, 400, 7);
  const WindowSet ws = full_windows(s);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 1e12;
  cfg.max_epochs = 5;
  try {
    train(Decoder(small(Family::linear, 3)), ws, ws, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    const std::string m = e.what();
    CHECK(m.find("epoch") != std::string::npos);
    CHECK(m.find("1e+12") != std::string::npos);
  }
}

TEST_CASE("train argument errors") {
  Session s = test::random_session(3, 400, 7);
  const WindowSet ws = full_windows(s);
  CHECK_THROWS_AS(train(Decoder(default_spec(Family::random_forest, 3)), ws, ws, TrainConfig{}), ArgumentError);
  CHECK_THROWS_AS(train(Decoder(small(Family::linear, 3)), ws, ws.subset(std::vector<std::size_t>{}), TrainConfig{}),
                  ArgumentError);
  TrainConfig bad;
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  CHECK(parse_optimizer("sgd") == Optimizer::sgd);
}

TEST_CASE("speed rnn learns a constant history") {
  Session s = test::random_session(1, 600, 3);
  std::fill(s.speed.begin(), s.speed.end(), 2.75);
  const WindowSet ws = full_windows(s, InputSource::speed);
  TrainConfig cfg;
  cfg.max_epochs = 60;
  cfg.patience = 60;
  cfg.learning_rate = 1e-2;
  const auto res = train(Decoder(small(Family::speed_rnn, 1)), ws, ws, cfg);
  for (double v : res.decoder.predict(ws)) CHECK(std::abs(v - 2.75) < 1e-3);
}

TEST_CASE("speed rnn predicts an AR(1) trace better one step ahead than 100") {
  Session s = test::random_session(1, 6000, 4);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n01;
  double v = 0.0;
  for (auto& x : s.speed) {
    v = 0.97 * v + n01(rng);
    x = v;
  }
  auto score = [&](int offset_ms) {
    const IndexRange tr{0, 4800}, te{4800, 6000};
    const Normalizer norm = fit_input_normalizer(s, tr, InputSource::speed);
    const WindowSet a = make_window_set(s, norm, tr, offset_ms, TargetBounds::segment, InputSource::speed);
    const WindowSet b = make_window_set(s, norm, te, offset_ms, TargetBounds::segment, InputSource::speed);
    TrainConfig cfg;
    cfg.max_epochs = 8;
    cfg.learning_rate = 3e-3;
    const auto res = train(Decoder(small(Family::speed_rnn, 1)), a, b, cfg);
    return pearson_r(res.decoder.predict(b), b.targets());
  };
  const double near = score(10), far = score(1000);
  CHECK(near > far);
  CHECK(near > 0.9);
}

TEST_CASE("a trained lstm depends on time order") {
  Session s = test::random_session(2, 2000, 13);
  const Normalizer norm = Normalizer::fit(s.eeg, {0, 2000});
  const Matrix z = norm.apply(s.eeg);
  // Target is the newest sample of channel 0 minus the oldest.
  for (std::size_t e = 19; e < 2000; ++e) s.speed[e] = z(0, e) - z(0, e - 19);
  const WindowSet ws = make_window_set(s, norm, {0, 2000}, 0);
  TrainConfig cfg;
  cfg.max_epochs = 15;
  cfg.learning_rate = 5e-3;
  const auto res = train(Decoder(small(Family::lstm_rnn, 2)), ws, ws, cfg);
  const auto x = ws.all();
  ad::Tensor rev(x.shape());
  const std::size_t B = x.dim(0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < 20; ++t)
      for (std::size_t c = 0; c < 2; ++c) rev[(b * 20 + t) * 2 + c] = x[(b * 20 + 19 - t) * 2 + c];
  const auto p = res.decoder.predict(x), pr = res.decoder.predict(rev);
  const auto y = ws.targets();
  CHECK(pearson_r(p, y) > 0.8);
  CHECK(pearson_r(pr, y) < 0.0);
}

TEST_CASE("train report jsonl") {
  Session s = test::random_session(3, 300, 2);
  const WindowSet ws = full_windows(s);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  const auto res = train(Decoder(small(Family::linear, 3)), ws, ws, cfg);
  const std::string j = res.report.to_jsonl();
  CHECK(std::count(j.begin(), j.end(), '\n') == 3);
  CHECK(j.find("\"epoch\":1") != std::string::npos);
}
