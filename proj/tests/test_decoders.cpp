#include "helpers.hpp"

#include "locodec/decoders.hpp"
#include "locodec/error.hpp"
#include "locodec/forest.hpp"
#include "locodec/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

using namespace locodec;

namespace {

ad::Tensor randn(ad::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  ad::Tensor t(std::move(s));
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

DecoderSpec small_spec(Family f, std::size_t channels) {
  DecoderSpec s = default_spec(f, channels);
  s.ffnn_hidden = {16, 8};
  s.lstm_hidden = 8;
  s.head_hidden = 6;
  s.embed_dim = 8;
  s.heads = 2;
  s.ffn_dim = 8;
  s.conv_channels = 4;
  s.seed = 5;
  return s;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("featurize layouts") {
  Matrix w32(20, 32), w8(20, 8);
  for (std::size_t i = 0; i < w32.data.size(); ++i) w32.data[i] = static_cast<double>(i);
  CHECK(featurize(w32, Family::linear).size() == 640);
  CHECK(featurize(w32, Family::ffnn).shape() == ad::Shape{640});
  CHECK(featurize(w8, Family::random_forest).size() == 160);
  const auto seq = featurize(w32, Family::lstm_rnn);
  CHECK(seq.shape() == ad::Shape{20, 32});
  const auto tok = featurize(w32, Family::transformer_encoder);
  CHECK(tok.shape() == ad::Shape{20, 32});
  const auto flat = featurize(w32, Family::linear);
  for (std::size_t c = 0; c < 32; ++c) {
    CHECK(flat[c] == w32(0, c));
    CHECK(seq[c] == w32(0, c));
    CHECK(flat[19 * 32 + c] == w32(19, c));
  }
}

TEST_CASE("window sets follow the session") {
  Session s = test::random_session(4, 300, 3);
  const Normalizer norm = Normalizer::fit(s.eeg, {0, 300});
  const WindowSet ws = make_window_set(s, norm, {0, 100}, 0);
  CHECK(ws.size() == 81);
  CHECK(ws.channels() == 4);
  const auto b = ws.all();
  CHECK(b.shape() == ad::Shape{81, 20, 4});
  const Matrix z = norm.apply(s.eeg);
  // Row t of window 5 is sample 5 + t.
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t c = 0; c < 4; ++c) CHECK(b[(5 * 20 + t) * 4 + c] == z(c, 5 + t));
  CHECK(ws.targets()[5] == s.speed[24]);
  const auto touched = ws.touched_indices();
  CHECK(touched.front() == 0);
  CHECK(touched.back() == 99);

  const WindowSet sp = make_window_set(s, fit_input_normalizer(s, {0, 300}, InputSource::speed), {0, 100}, 0,
                                       TargetBounds::session, InputSource::speed);
  CHECK(sp.channels() == 1);
}

TEST_CASE("linear decoder with zero weights returns the bias") {
  DecoderSpec spec = default_spec(Family::linear, 3);
  Decoder d(spec);
  d.parameter("head.fc.w").value.fill(0.0);
  d.parameter("head.fc.b").value[0] = 0.625;
  const auto out = d.predict(randn({5, 20, 3}, 1));
  for (double v : out) CHECK(v == 0.625);
  CHECK(d.predict_one(featurize(Matrix(20, 3, 7.0), Family::linear)) == 0.625);
}

TEST_CASE("zero input through an lstm gives the head bias") {
  Decoder d(small_spec(Family::lstm_rnn, 4));
  d.parameter("body.lstm.b").value.fill(0.0);
  d.parameter("head.fc1.b").value.fill(0.0);
  d.parameter("head.fc2.b").value[0] = -0.375;
  for (double v : d.predict(ad::Tensor({3, 20, 4}))) CHECK(v == -0.375);
}

TEST_CASE("untrained predictions are deterministic") {
  for (Family f : {Family::linear, Family::ffnn, Family::lstm_rnn, Family::transformer_encoder}) {
    const Decoder a(small_spec(f, 4)), b(small_spec(f, 4));
    const auto x = randn({2, 20, 4}, 9);
    ad::Tensor twice({2, 20, 4});
    for (std::size_t i = 0; i < 80; ++i) twice[i] = twice[80 + i] = x[i];
    const auto p = a.predict(twice);
    CHECK(p[0] == p[1]);
    CHECK(a.predict(x) == b.predict(x));
    for (double v : a.predict(x)) CHECK(std::isfinite(v));
  }
}

TEST_CASE("input shape mismatch") {
  const Decoder d(small_spec(Family::lstm_rnn, 4));
  CHECK_THROWS_AS(d.predict(ad::Tensor({2, 20, 5})), ShapeError);
  CHECK_THROWS_AS(d.predict(ad::Tensor({2, 19, 4})), ShapeError);
}

TEST_CASE("spec validation") {
  DecoderSpec s = small_spec(Family::transformer_encoder, 4);
  s.heads = 3;
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s = small_spec(Family::ffnn, 4);
  CHECK(DecoderSpec::parse(s.serialize()) == s);
  CHECK(default_spec(Family::speed_rnn, 32).input_channels == 1);
  CHECK(default_spec(Family::ffnn, 32).ffnn_hidden == std::vector<std::size_t>{256, 64});
  CHECK(default_spec(Family::lstm_rnn, 32).lstm_hidden == 64);
  CHECK(default_spec(Family::random_forest, 32).forest.trees == 100);
  CHECK(default_spec(Family::random_forest, 32).forest.max_depth == 12);
  CHECK(parse_family("transformer_encoder") == Family::transformer_encoder);
  CHECK_THROWS_AS(parse_family("svm"), ArgumentError);
}

TEST_CASE("forest stump") {
  Matrix x(4, 1);
  x.data = {-2, -1, 1, 2};
  const std::vector<double> y{1, 1, 3, 3};
  ForestParams p;
  p.trees = 1;
  p.max_depth = 1;
  p.bootstrap = false;
  const Forest f = Forest::fit(x, y, p, 1);
  CHECK(f.predict(std::vector<double>{-1.0}) == 1.0);
  CHECK(f.predict(std::vector<double>{1.5}) == 3.0);
  CHECK(f.trees()[0].nodes.size() == 3);
}

TEST_CASE("unbagged deep tree memorizes its training rows") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  Matrix x(200, 5);
  for (auto& v : x.data) v = n01(rng);
  std::vector<double> y(200);
  for (auto& v : y) v = n01(rng);
  ForestParams p;
  p.trees = 1;
  p.max_depth = 0;
  p.bootstrap = false;
  p.mtry = 5;
  const Forest f = Forest::fit(x, y, p, 3);
  for (std::size_t i = 0; i < 200; ++i) CHECK(f.predict(x.row(i)) == y[i]);
}

TEST_CASE("forest on constant targets") {
  Matrix x(50, 3);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  for (auto& v : x.data) v = u(rng);
  const std::vector<double> y(50, 2.5);
  const Forest f = Forest::fit(x, y, ForestParams{}, 9);
  for (int i = 0; i < 20; ++i) CHECK(f.predict(std::vector<double>{u(rng), u(rng), u(rng)}) == 2.5);
  CHECK_THROWS_AS(Forest::fit(Matrix(0, 3), std::vector<double>{}, ForestParams{}, 1), ArgumentError);
}

TEST_CASE("forest fits an xor step that defeats a linear model") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto make = [&](std::size_t n, Matrix& x, std::vector<double>& y) {
    x = Matrix(n, 2);
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) = u(rng);
      x(i, 1) = u(rng);
      y[i] = (x(i, 0) > 0) != (x(i, 1) > 0) ? 1.0 : 0.0;
    }
  };
  Matrix xtr, xte;
  std::vector<double> ytr, yte;
  make(600, xtr, ytr);
  make(400, xte, yte);
  ForestParams p;
  p.trees = 50;
  const Forest f = Forest::fit(xtr, ytr, p, 4);
  std::vector<double> pred;
  for (std::size_t i = 0; i < xte.rows; ++i) pred.push_back(f.predict(xte.row(i)));
  CHECK(pearson_r(pred, yte) >= 0.9);

  // Ordinary least squares on (1, x1, x2) via the centered 2x2 system.
  double m0 = 0, m1 = 0, my = 0;
  for (std::size_t i = 0; i < xtr.rows; ++i) {
    m0 += xtr(i, 0);
    m1 += xtr(i, 1);
    my += ytr[i];
  }
  const double n = static_cast<double>(xtr.rows);
  m0 /= n, m1 /= n, my /= n;
  double s00 = 0, s01 = 0, s11 = 0, s0y = 0, s1y = 0;
  for (std::size_t i = 0; i < xtr.rows; ++i) {
    const double a = xtr(i, 0) - m0, b = xtr(i, 1) - m1, c = ytr[i] - my;
    s00 += a * a, s01 += a * b, s11 += b * b, s0y += a * c, s1y += b * c;
  }
  const double det = s00 * s11 - s01 * s01;
  const double b0 = (s0y * s11 - s1y * s01) / det, b1 = (s1y * s00 - s0y * s01) / det;
  std::vector<double> lin;
  for (std::size_t i = 0; i < xte.rows; ++i) lin.push_back(my + b0 * (xte(i, 0) - m0) + b1 * (xte(i, 1) - m1));
  CHECK(std::abs(pearson_r(lin, yte)) <= 0.3);
}

TEST_CASE("forest determinism and serialization") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  Matrix x(80, 4);
  for (auto& v : x.data) v = n01(rng);
  std::vector<double> y(80);
  for (std::size_t i = 0; i < 80; ++i) y[i] = x(i, 0) * x(i, 1);
  ForestParams p;
  p.trees = 10;
  const Forest a = Forest::fit(x, y, p, 77), b = Forest::fit(x, y, p, 77);
  CHECK(a == b);
  std::string bytes;
  a.serialize(bytes);
  ByteReader in(bytes, "forest");
  CHECK(Forest::deserialize(in) == a);
}

TEST_CASE("attention rows are stochastic") {
  const Decoder d(small_spec(Family::transformer_encoder, 4));
  const auto att = d.attention_weights(randn({3, 20, 4}, 2));
  CHECK(att.size() == 2);
  for (const auto& a : att) {
    CHECK(a.shape() == ad::Shape{3, 20, 20});
    for (std::size_t r = 0; r < 60; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 20; ++c) s += a[r * 20 + c];
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("transformer tokens are permutation equivariant without positions") {
  DecoderSpec s = small_spec(Family::transformer_encoder, 4);
  s.positional_encoding = false;
  s.conv_kernel = 1;
  const Decoder d(s);
  const auto x = randn({2, 20, 4}, 6);
  std::vector<std::size_t> perm(20);
  for (std::size_t i = 0; i < 20; ++i) perm[i] = (7 * i + 3) % 20;
  ad::Tensor xp({2, 20, 4});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 20; ++t)
      for (std::size_t c = 0; c < 4; ++c) xp[(b * 20 + t) * 4 + c] = x[(b * 20 + perm[t]) * 4 + c];
  const auto f = d.token_features(x), fp = d.token_features(xp);
  const std::size_t e = f.dim(2);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 20; ++t)
      for (std::size_t k = 0; k < e; ++k)
        CHECK(std::abs(fp[(b * 20 + t) * e + k] - f[(b * 20 + perm[t]) * e + k]) <= 1e-12);

  // Per-token conv features follow the same permutation.
  const auto bf = d.body_features(x), bfp = d.body_features(xp);
  const std::size_t cc = s.conv_channels;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 20; ++t)
      for (std::size_t k = 0; k < cc; ++k)
        CHECK(std::abs(bfp[b * 20 * cc + t * cc + k] - bf[b * 20 * cc + perm[t] * cc + k]) <= 1e-12);
}

TEST_CASE("positional encoding breaks permutation equivariance") {
  DecoderSpec s = small_spec(Family::transformer_encoder, 4);
  s.conv_kernel = 1;
  const Decoder d(s);
  const auto x = randn({1, 20, 4}, 6);
  ad::Tensor xp({1, 20, 4});
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t c = 0; c < 4; ++c) xp[t * 4 + c] = x[(19 - t) * 4 + c];
  const auto f = d.token_features(x), fp = d.token_features(xp);
  double diff = 0.0;
  for (std::size_t k = 0; k < f.dim(2); ++k) diff += std::abs(fp[k] - f[19 * f.dim(2) + k]);
  CHECK(diff > 1e-6);
}

TEST_CASE("body and head partition every parameter") {
  for (Family f : {Family::linear, Family::ffnn, Family::lstm_rnn, Family::transformer_encoder, Family::speed_rnn}) {
    Decoder d(small_spec(f, f == Family::speed_rnn ? 1 : 4));
    std::set<std::string> names;
    for (const auto& p : d.parameters()) names.insert(p.name);
    CHECK(names.size() == d.parameters().size());
    CHECK(d.head_parameters().size() + d.body_parameters().size() == d.parameters().size());
    CHECK(!d.head_parameters().empty());
    for (auto* p : d.head_parameters()) CHECK(Decoder::is_head(*p));
    for (auto* p : d.body_parameters()) CHECK(!Decoder::is_head(*p));
    d.freeze_body(true);
    for (auto* p : d.body_parameters()) CHECK(!p->trainable);
    for (auto* p : d.head_parameters()) CHECK(p->trainable);
  }
}

TEST_CASE("gradcheck of every trainable family") {
  ad::GradcheckOptions opt;
  opt.samples = 64;
  opt.seed = 11;
  for (Family f : {Family::linear, Family::ffnn, Family::lstm_rnn, Family::transformer_encoder, Family::speed_rnn}) {
    CAPTURE(to_string(f));
    const auto rep = gradcheck_decoder(small_spec(f, f == Family::speed_rnn ? 1 : 4), 3, opt);
    CHECK(rep.passed);
    CHECK(rep.worst <= 1e-4);
    CHECK(rep.entries.size() >= 50);
  }
  CHECK_THROWS_AS(gradcheck_decoder(default_spec(Family::random_forest, 4)), ArgumentError);
}

TEST_CASE("model files round trip bitwise") {
  const auto dir = test::scratch_dir("decoders");
  const auto x = randn({4, 20, 4}, 12);
  for (Family f : {Family::linear, Family::ffnn, Family::lstm_rnn, Family::transformer_encoder}) {
    Decoder d(small_spec(f, 4));
    d.normalizer = Normalizer({1, 2, 3, 4}, {1, 1, 2, 2}).rounded_to_float();
    d.target_mean = 1.5;
    d.target_scale = 0.75;
    const auto path = dir / (std::string(to_string(f)) + ".lcm");
    d.save(path);
    const Decoder back = Decoder::load(path, f);
    CHECK(back.predict(x) == d.predict(x));
    CHECK(back.spec() == d.spec());
    CHECK(back.normalizer.mean() == d.normalizer.mean());
    CHECK(back.checksum_body() == d.checksum_body());
    CHECK(back.checksum_head() == d.checksum_head());
  }

  Matrix fx(30, 80);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (auto& v : fx.data) v = n01(rng);
  std::vector<double> fy(30);
  for (auto& v : fy) v = n01(rng);
  Decoder forest(small_spec(Family::random_forest, 4));
  ForestParams fp;
  fp.trees = 5;
  forest.set_forest(Forest::fit(fx, fy, fp, 1));
  forest.save(dir / "forest.lcm");
  CHECK(Decoder::load(dir / "forest.lcm").predict(x) == forest.predict(x));
}

TEST_CASE("model file errors") {
  const auto dir = test::scratch_dir("decoders_err");
  Decoder d(small_spec(Family::lstm_rnn, 4));
  d.normalizer = Normalizer({0, 0, 0, 0}, {1, 1, 1, 1});
  d.save(dir / "m.lcm");
  const std::string bytes = read_bytes(dir / "m.lcm");
  {
    std::ofstream out(dir / "short.lcm", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(Decoder::load(dir / "short.lcm"), LoadError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Decoder::deserialize(bad, "bad"), LoadError);
  CHECK_THROWS_AS(Decoder::load(dir / "m.lcm", Family::transformer_encoder), SpecMismatchError);
  CHECK_THROWS_AS(Decoder::load(dir / "missing.lcm"), LoadError);
}

TEST_CASE("closed-form linear fit recovers a planted map") {
  Session s = test::random_session(2, 600, 21);
  const Normalizer norm = Normalizer::fit(s.eeg, {0, 600});
  const Matrix z = norm.apply(s.eeg);
  // Target = 0.5 * channel 0 at the window's last sample + 2.
  for (std::size_t t = 0; t < 600; ++t) s.speed[t] = 2.0 + 0.5 * z(0, t);
  const WindowSet ws = make_window_set(s, norm, {0, 600}, 0);
  Decoder d(default_spec(Family::linear, 2));
  d.standardize_targets_from(ws);
  fit_linear_closed_form(d, ws);
  const auto pred = d.predict(ws);
  const auto tgt = ws.targets();
  for (std::size_t i = 0; i < pred.size(); ++i) CHECK(std::abs(pred[i] - tgt[i]) < 1e-4);
}
