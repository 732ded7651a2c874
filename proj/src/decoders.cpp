#include "locodec/decoders.hpp"

#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/numeric.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace locodec {

namespace {

constexpr std::string_view kFamilyNames[] = {"linear",      "random_forest",       "ffnn",
                                             "lstm_rnn",    "transformer_encoder", "speed_rnn"};
constexpr char kModelMagic[] = "LCMD1";

std::size_t parse_size(std::string_view key, std::string_view v) {
  const long long x = parse_int(v);
  if (x < 0) throw ArgumentError("decoder spec: " + std::string(key) + " must be non-negative");
  return static_cast<std::size_t>(x);
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError("decoder spec: " + std::string(key) + " expects true or false, got '" + std::string(v) + "'");
}

std::uint64_t fnv_params(const std::vector<ad::Parameter>& ps, bool head) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : ps) {
    if (Decoder::is_head(p) != head) continue;
    eat(p.name.data(), p.name.size());
    eat(p.value.data(), p.value.size() * sizeof(double));
  }
  return h;
}

ad::Tensor positional_encoding(std::size_t len, std::size_t dim) {
  ad::Tensor pe({len, dim});
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe[t * dim + i] = i % 2 == 0 ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  return pe;
}

}  // namespace

std::string_view to_string(Family f) { return kFamilyNames[static_cast<int>(f)]; }

Family parse_family(std::string_view s) {
  for (int i = 0; i < 6; ++i)
    if (kFamilyNames[i] == s) return static_cast<Family>(i);
  if (s == "lstm") return Family::lstm_rnn;
  if (s == "transformer") return Family::transformer_encoder;
  throw ArgumentError("unknown decoder family '" + std::string(s) + "'");
}

bool is_trainable(Family f) { return f != Family::random_forest; }

bool uses_flat_input(Family f) {
  return f == Family::linear || f == Family::random_forest || f == Family::ffnn;
}

// ---------------------------------------------------------------------------
// DecoderSpec

void DecoderSpec::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ArgumentError(std::string("decoder spec: ") + what);
  };
  need(input_channels > 0, "input_channels must be positive");
  need(window > 0, "window must be positive");
  need(family != Family::speed_rnn || input_channels == 1, "speed_rnn takes exactly one input channel");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  switch (family) {
    case Family::ffnn:
      need(!ffnn_hidden.empty(), "ffnn_hidden must list at least one layer");
      for (auto h : ffnn_hidden) need(h > 0, "ffnn_hidden sizes must be positive");
      break;
    case Family::lstm_rnn:
    case Family::speed_rnn:
      need(lstm_hidden > 0 && head_hidden > 0, "lstm_hidden and head_hidden must be positive");
      break;
    case Family::transformer_encoder:
      need(embed_dim > 0 && heads > 0 && blocks > 0 && ffn_dim > 0, "transformer sizes must be positive");
      need(embed_dim % heads == 0, "heads must divide embed_dim");
      need(conv_kernel > 0 && conv_kernel <= window, "conv_kernel must be in [1, window]");
      need(conv_channels > 0 && head_hidden > 0, "conv_channels and head_hidden must be positive");
      break;
    case Family::random_forest:
      need(forest.trees > 0, "forest.trees must be positive");
      need(forest.min_samples_leaf > 0, "forest.min_samples_leaf must be positive");
      break;
    case Family::linear:
      break;
  }
}

bool set_spec_field(DecoderSpec& s, std::string_view key, std::string_view v) {
  if (key == "family") {
    s.family = parse_family(v);
  } else if (key == "input_channels") {
    s.input_channels = parse_size(key, v);
  } else if (key == "window") {
    s.window = parse_size(key, v);
  } else if (key == "ffnn_hidden") {
    s.ffnn_hidden.clear();
    for (auto part : split_csv_row(v)) s.ffnn_hidden.push_back(parse_size(key, trim(part)));
  } else if (key == "lstm_hidden") {
    s.lstm_hidden = parse_size(key, v);
  } else if (key == "head_hidden") {
    s.head_hidden = parse_size(key, v);
  } else if (key == "embed_dim") {
    s.embed_dim = parse_size(key, v);
  } else if (key == "heads") {
    s.heads = parse_size(key, v);
  } else if (key == "blocks") {
    s.blocks = parse_size(key, v);
  } else if (key == "ffn_dim") {
    s.ffn_dim = parse_size(key, v);
  } else if (key == "conv_kernel") {
    s.conv_kernel = parse_size(key, v);
  } else if (key == "conv_channels") {
    s.conv_channels = parse_size(key, v);
  } else if (key == "positional_encoding") {
    s.positional_encoding = parse_bool(key, v);
  } else if (key == "dropout") {
    s.dropout = parse_double(v);
  } else if (key == "forest.trees") {
    s.forest.trees = parse_size(key, v);
  } else if (key == "forest.max_depth") {
    s.forest.max_depth = parse_size(key, v);
  } else if (key == "forest.min_samples_leaf") {
    s.forest.min_samples_leaf = parse_size(key, v);
  } else if (key == "forest.mtry") {
    s.forest.mtry = parse_size(key, v);
  } else if (key == "forest.bootstrap") {
    s.forest.bootstrap = parse_bool(key, v);
  } else if (key == "seed") {
    s.seed = parse_u64(v);
  } else {
    return false;
  }
  return true;
}

std::string DecoderSpec::serialize() const {
  std::string hidden;
  for (std::size_t i = 0; i < ffnn_hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(ffnn_hidden[i]);
  std::string out;
  auto kv = [&](const char* k, const std::string& v) { out += std::string(k) + "=" + v + "\n"; };
  kv("family", std::string(to_string(family)));
  kv("input_channels", std::to_string(input_channels));
  kv("window", std::to_string(window));
  kv("ffnn_hidden", hidden);
  kv("lstm_hidden", std::to_string(lstm_hidden));
  kv("head_hidden", std::to_string(head_hidden));
  kv("embed_dim", std::to_string(embed_dim));
  kv("heads", std::to_string(heads));
  kv("blocks", std::to_string(blocks));
  kv("ffn_dim", std::to_string(ffn_dim));
  kv("conv_kernel", std::to_string(conv_kernel));
  kv("conv_channels", std::to_string(conv_channels));
  kv("positional_encoding", positional_encoding ? "true" : "false");
  kv("dropout", format_double(dropout));
  kv("forest.trees", std::to_string(forest.trees));
  kv("forest.max_depth", std::to_string(forest.max_depth));
  kv("forest.min_samples_leaf", std::to_string(forest.min_samples_leaf));
  kv("forest.mtry", std::to_string(forest.mtry));
  kv("forest.bootstrap", forest.bootstrap ? "true" : "false");
  kv("seed", std::to_string(seed));
  return out;
}

DecoderSpec DecoderSpec::parse(std::string_view text) {
  DecoderSpec s;
  for (const auto& [k, v] : parse_dotted_lines(text))
    if (!set_spec_field(s, k, v)) throw ArgumentError("decoder spec: unknown key '" + k + "'");
  s.validate();
  return s;
}

DecoderSpec default_spec(Family f, std::size_t channels) {
  DecoderSpec s;
  s.family = f;
  s.input_channels = f == Family::speed_rnn ? 1 : channels;
  return s;
}

// ---------------------------------------------------------------------------
// Featurization and window sets

ad::Tensor featurize(const Matrix& window, Family f) {
  if (uses_flat_input(f)) return ad::Tensor({window.rows * window.cols}, window.data);
  return ad::Tensor({window.rows, window.cols}, window.data);
}

ad::Tensor WindowSet::batch(std::span<const std::size_t> idx) const {
  if (views.empty() && !idx.empty()) throw ArgumentError("WindowSet::batch: empty window set");
  const std::size_t c = channels();
  const std::size_t w = views.empty() ? kWindowLength : views.front().length;
  ad::Tensor out({idx.size(), w, c});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const WindowView& v = views.at(idx[b]);
    const double* src = series->data.data() + v.start_index * c;
    std::copy(src, src + w * c, out.data() + b * w * c);
  }
  return out;
}

ad::Tensor WindowSet::all() const {
  std::vector<std::size_t> idx(views.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return batch(idx);
}

std::vector<double> WindowSet::targets(std::span<const std::size_t> idx) const {
  std::vector<double> y;
  y.reserve(idx.size());
  for (std::size_t i : idx) y.push_back(views.at(i).target);
  return y;
}

std::vector<double> WindowSet::targets() const {
  std::vector<double> y;
  y.reserve(views.size());
  for (const auto& v : views) y.push_back(v.target);
  return y;
}

std::vector<std::size_t> WindowSet::touched_indices() const {
  std::vector<std::size_t> out;
  for (const auto& v : views) {
    for (std::size_t i = v.start_index; i < v.start_index + v.length; ++i) out.push_back(i);
    out.push_back(v.target_index);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

WindowSet WindowSet::subset(std::span<const std::size_t> idx) const {
  WindowSet s;
  s.series = series;
  for (std::size_t i : idx) s.views.push_back(views.at(i));
  return s;
}

Normalizer fit_input_normalizer(const Session& s, IndexRange range, InputSource src) {
  if (src == InputSource::eeg) return Normalizer::fit(s.eeg, range);
  Matrix sp(1, s.speed.size());
  sp.data = s.speed;
  return Normalizer::fit(sp, range);
}

WindowSet make_window_set(const Session& s, const Normalizer& norm, IndexRange range, int offset_ms,
                          TargetBounds bounds, InputSource src) {
  const std::size_t c = src == InputSource::eeg ? s.channels() : 1;
  if (norm.channels() != c)
    throw ShapeError("make_window_set: normalizer has " + std::to_string(norm.channels()) +
                     " channels, input has " + std::to_string(c));
  auto series = std::make_shared<Matrix>(s.samples(), c);
  for (std::size_t t = 0; t < s.samples(); ++t)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double raw = src == InputSource::eeg ? s.eeg(ch, t) : s.speed[t];
      (*series)(t, ch) = (raw - norm.mean()[ch]) / norm.std()[ch];
    }
  WindowSet ws;
  ws.series = std::move(series);
  ws.views = windows(s, range, offset_ms, bounds);
  return ws;
}

// ---------------------------------------------------------------------------
// Decoder

struct Decoder::Leaves {
  const std::vector<ad::Parameter>* params;
  std::vector<ad::Parameter>* mutable_params;  // null: parameters enter as constants
  std::vector<ad::Var> cache;

  ad::Var get(ad::Graph& g, std::string_view name) {
    if (cache.size() != params->size()) cache.resize(params->size());
    for (std::size_t i = 0; i < params->size(); ++i) {
      if ((*params)[i].name != name) continue;
      if (!cache[i].valid())
        cache[i] = mutable_params ? g.parameter((*mutable_params)[i]) : g.constant((*params)[i].value);
      return cache[i];
    }
    throw ArgumentError("decoder: missing parameter '" + std::string(name) + "'");
  }
};

ad::Parameter& Decoder::add_param(std::string name, ad::Shape shape, std::mt19937_64& rng, double fill,
                                  bool glorot) {
  ad::Parameter p;
  p.name = std::move(name);
  p.value = ad::Tensor(shape, fill);
  if (glorot) {
    std::size_t fan_in = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    const std::size_t fan_out = shape.back() * (shape.size() == 3 ? shape[0] : 1);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    for (double& v : p.value.values()) v = u(rng);
  }
  p.grad = ad::Tensor(shape, 0.0);
  params_.push_back(std::move(p));
  return params_.back();
}

Decoder::Decoder(DecoderSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  const std::size_t flat = spec_.window * spec_.input_channels;
  auto bias = [&](const std::string& n, std::size_t d, double v = 0.0) { add_param(n, {d}, rng, v, false); };
  switch (spec_.family) {
    case Family::linear:
      add_param("head.fc.w", {flat, 1}, rng);
      bias("head.fc.b", 1);
      break;
    case Family::ffnn: {
      std::size_t in = flat;
      for (std::size_t i = 0; i < spec_.ffnn_hidden.size(); ++i) {
        const std::string n = "body.fc" + std::to_string(i + 1);
        add_param(n + ".w", {in, spec_.ffnn_hidden[i]}, rng);
        bias(n + ".b", spec_.ffnn_hidden[i]);
        in = spec_.ffnn_hidden[i];
      }
      add_param("head.fc.w", {in, 1}, rng);
      bias("head.fc.b", 1);
      break;
    }
    case Family::lstm_rnn:
    case Family::speed_rnn: {
      const std::size_t h = spec_.lstm_hidden;
      add_param("body.lstm.w_ih", {spec_.input_channels, 4 * h}, rng);
      add_param("body.lstm.w_hh", {h, 4 * h}, rng);
      auto& b = add_param("body.lstm.b", {4 * h}, rng, 0.0, false);
      for (std::size_t i = h; i < 2 * h; ++i) b.value[i] = 1.0;
      add_param("head.fc1.w", {h, spec_.head_hidden}, rng);
      bias("head.fc1.b", spec_.head_hidden);
      add_param("head.fc2.w", {spec_.head_hidden, 1}, rng);
      bias("head.fc2.b", 1);
      break;
    }
    case Family::transformer_encoder: {
      const std::size_t e = spec_.embed_dim;
      add_param("body.embed.w", {spec_.input_channels, e}, rng);
      bias("body.embed.b", e);
      for (std::size_t k = 0; k < spec_.blocks; ++k) {
        const std::string n = "body.block" + std::to_string(k + 1);
        add_param(n + ".wq", {e, e}, rng);
        add_param(n + ".wk", {e, e}, rng);
        add_param(n + ".wv", {e, e}, rng);
        add_param(n + ".wo", {e, e}, rng);
        bias(n + ".bo", e);
        add_param(n + ".ff1.w", {e, spec_.ffn_dim}, rng);
        bias(n + ".ff1.b", spec_.ffn_dim);
        add_param(n + ".ff2.w", {spec_.ffn_dim, e}, rng);
        bias(n + ".ff2.b", e);
      }
      add_param("body.conv.w", {spec_.conv_kernel, e, spec_.conv_channels}, rng);
      bias("body.conv.b", spec_.conv_channels);
      const std::size_t tout = spec_.window - spec_.conv_kernel + 1;
      add_param("head.fc1.w", {tout * spec_.conv_channels, spec_.head_hidden}, rng);
      bias("head.fc1.b", spec_.head_hidden);
      add_param("head.fc2.w", {spec_.head_hidden, 1}, rng);
      bias("head.fc2.b", 1);
      break;
    }
    case Family::random_forest:
      break;
  }
  round_to_float();
}

ad::Parameter& Decoder::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ArgumentError("decoder: no parameter named '" + std::string(name) + "'");
}

const ad::Parameter& Decoder::parameter(std::string_view name) const {
  return const_cast<Decoder*>(this)->parameter(name);
}

bool Decoder::is_head(const ad::Parameter& p) { return p.name.rfind("head.", 0) == 0; }

std::vector<ad::Parameter*> Decoder::head_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_)
    if (is_head(p)) out.push_back(&p);
  return out;
}

std::vector<ad::Parameter*> Decoder::body_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_)
    if (!is_head(p)) out.push_back(&p);
  return out;
}

std::vector<ad::Parameter*> Decoder::all_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

void Decoder::freeze_body(bool frozen) {
  for (auto& p : params_)
    if (!is_head(p)) p.trainable = !frozen;
}

std::uint64_t Decoder::checksum_body() const { return fnv_params(params_, false); }
std::uint64_t Decoder::checksum_head() const { return fnv_params(params_, true); }

void Decoder::check_input(const ad::Shape& s) const {
  if (s.size() != 3 || s[1] != spec_.window || s[2] != spec_.input_channels || s[0] == 0)
    throw ShapeError("decoder " + std::string(to_string(spec_.family)) + ": expected input [B," +
                     std::to_string(spec_.window) + "," + std::to_string(spec_.input_channels) + "], got " +
                     ad::shape_str(s));
}

ad::Var Decoder::forward_impl(ad::Graph& g, ad::Var x, Leaves& L, std::mt19937_64* rng, bool stop_at_body,
                              std::vector<ad::Var>* attention, bool tokens_only) const {
  using namespace ad;
  check_input(x.shape());
  if (spec_.family == Family::random_forest) throw ArgumentError("random_forest has no differentiable forward pass");
  const std::size_t B = x.shape()[0], W = spec_.window, C = spec_.input_channels;
  auto P = [&](const std::string& n) { return L.get(g, n); };
  auto drop = [&](Var v) { return rng && spec_.dropout > 0.0 ? dropout(v, spec_.dropout, *rng) : v; };

  Var f;
  switch (spec_.family) {
    case Family::linear:
      f = reshape(x, {B, W * C});
      break;
    case Family::ffnn: {
      Var h = reshape(x, {B, W * C});
      for (std::size_t i = 0; i < spec_.ffnn_hidden.size(); ++i) {
        const std::string n = "body.fc" + std::to_string(i + 1);
        h = drop(relu(add(matmul(h, P(n + ".w")), P(n + ".b"))));
      }
      f = h;
      break;
    }
    case Family::lstm_rnn:
    case Family::speed_rnn: {
      Var xw = add(matmul(x, P("body.lstm.w_ih")), P("body.lstm.b"));
      Var h = lstm_sequence(xw, P("body.lstm.w_hh"));
      f = drop(h);
      break;
    }
    case Family::transformer_encoder: {
      const std::size_t E = spec_.embed_dim, nh = spec_.heads, dh = E / nh;
      Var h = add(matmul(x, P("body.embed.w")), P("body.embed.b"));
      if (spec_.positional_encoding) h = add(h, g.constant(positional_encoding(W, E)));
      for (std::size_t k = 0; k < spec_.blocks; ++k) {
        const std::string n = "body.block" + std::to_string(k + 1);
        Var q = matmul(h, P(n + ".wq"));
        Var kk = matmul(h, P(n + ".wk"));
        Var v = matmul(h, P(n + ".wv"));
        std::vector<Var> outs;
        for (std::size_t j = 0; j < nh; ++j) {
          Var s = scale(bmm(slice(q, 2, j * dh, dh), slice(kk, 2, j * dh, dh), true),
                        1.0 / std::sqrt(static_cast<double>(dh)));
          Var a = softmax(s);
          if (attention && k == 0) attention->push_back(a);
          outs.push_back(bmm(a, slice(v, 2, j * dh, dh)));
        }
        Var att = outs.size() == 1 ? outs.front() : concat(outs, 2);
        h = add(h, drop(add(matmul(att, P(n + ".wo")), P(n + ".bo"))));
        Var ff = add(matmul(relu(add(matmul(h, P(n + ".ff1.w")), P(n + ".ff1.b"))), P(n + ".ff2.w")),
                     P(n + ".ff2.b"));
        h = add(h, drop(ff));
      }
      if (tokens_only) return h;
      f = relu(conv1d(h, P("body.conv.w"), P("body.conv.b")));
      break;
    }
    case Family::random_forest:
      break;
  }
  if (stop_at_body) return f;
  return head_impl(g, f, L, rng);
}

ad::Var Decoder::head_impl(ad::Graph& g, ad::Var f, Leaves& L, std::mt19937_64* rng) const {
  using namespace ad;
  auto P = [&](const std::string& n) { return L.get(g, n); };
  const std::size_t B = f.shape().at(0);
  switch (spec_.family) {
    case Family::linear:
    case Family::ffnn:
      return add(matmul(f, P("head.fc.w")), P("head.fc.b"));
    case Family::transformer_encoder:
      f = reshape(f, {B, f.value().size() / B});
      [[fallthrough]];
    case Family::lstm_rnn:
    case Family::speed_rnn: {
      Var h = relu(add(matmul(f, P("head.fc1.w")), P("head.fc1.b")));
      if (rng && spec_.dropout > 0.0) h = dropout(h, spec_.dropout, *rng);
      return add(matmul(h, P("head.fc2.w")), P("head.fc2.b"));
    }
    case Family::random_forest:
      break;
  }
  throw ArgumentError("random_forest has no differentiable head");
}

ad::Var Decoder::forward(ad::Graph& g, ad::Var x, std::mt19937_64* rng) {
  Leaves L{&params_, &params_, {}};
  return forward_impl(g, x, L, rng, false, nullptr, false);
}

ad::Var Decoder::body(ad::Graph& g, ad::Var x, std::mt19937_64* rng) {
  Leaves L{&params_, &params_, {}};
  return forward_impl(g, x, L, rng, true, nullptr, false);
}

ad::Var Decoder::head(ad::Graph& g, ad::Var features, std::mt19937_64* rng) {
  Leaves L{&params_, &params_, {}};
  return head_impl(g, features, L, rng);
}

ad::Tensor Decoder::body_features(const ad::Tensor& x) const {
  ad::Graph g;
  Leaves L{&params_, nullptr, {}};
  return forward_impl(g, g.constant(x), L, nullptr, true, nullptr, false).value();
}

ad::Tensor Decoder::head_output(const ad::Tensor& features) const {
  ad::Graph g;
  Leaves L{&params_, nullptr, {}};
  return head_impl(g, g.constant(features), L, nullptr).value();
}

std::vector<double> Decoder::predict(const ad::Tensor& x) const {
  check_input(x.shape());
  std::vector<double> out;
  const std::size_t B = x.shape()[0];
  if (spec_.family == Family::random_forest) {
    if (!forest_) throw ArgumentError("random_forest decoder has not been fitted");
    const std::size_t d = x.size() / B;
    for (std::size_t b = 0; b < B; ++b)
      out.push_back(forest_->predict(std::span<const double>(x.data() + b * d, d)) * target_scale + target_mean);
    return out;
  }
  ad::Graph g;
  Leaves L{&params_, nullptr, {}};
  const ad::Tensor& y = forward_impl(g, g.constant(x), L, nullptr, false, nullptr, false).value();
  for (std::size_t b = 0; b < B; ++b) out.push_back(y[b] * target_scale + target_mean);
  return out;
}

std::vector<double> Decoder::predict(const WindowSet& ws) const {
  constexpr std::size_t kChunk = 256;
  std::vector<double> out;
  out.reserve(ws.size());
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < ws.size(); s += kChunk) {
    idx.resize(std::min(kChunk, ws.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    auto part = predict(ws.batch(idx));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

double Decoder::predict_one(const ad::Tensor& input) const {
  const std::size_t W = spec_.window, C = spec_.input_channels;
  const bool flat_ok = input.shape() == ad::Shape{W * C};
  const bool seq_ok = input.shape() == ad::Shape{W, C};
  if (uses_flat_input(spec_.family) ? !flat_ok : !seq_ok)
    throw ShapeError("decoder " + std::string(to_string(spec_.family)) + ": unexpected input shape " +
                     ad::shape_str(input.shape()));
  return predict(input.reshaped({1, W, C}))[0];
}

std::vector<ad::Tensor> Decoder::attention_weights(const ad::Tensor& x) const {
  if (spec_.family != Family::transformer_encoder) throw ArgumentError("attention_weights: not a transformer");
  ad::Graph g;
  Leaves L{&params_, nullptr, {}};
  std::vector<ad::Var> att;
  forward_impl(g, g.constant(x), L, nullptr, false, &att, true);
  std::vector<ad::Tensor> out;
  for (auto& a : att) out.push_back(a.value());
  return out;
}

ad::Tensor Decoder::token_features(const ad::Tensor& x) const {
  if (spec_.family != Family::transformer_encoder) throw ArgumentError("token_features: not a transformer");
  ad::Graph g;
  Leaves L{&params_, nullptr, {}};
  return forward_impl(g, g.constant(x), L, nullptr, false, nullptr, true).value();
}

void Decoder::set_forest(Forest f) {
  if (spec_.family != Family::random_forest) throw ArgumentError("set_forest: not a random_forest decoder");
  if (f.features() != spec_.window * spec_.input_channels)
    throw ShapeError("set_forest: forest expects " + std::to_string(f.features()) + " features");
  forest_ = std::move(f);
}

void Decoder::standardize_targets_from(const WindowSet& ws) {
  const auto y = ws.targets();
  if (y.empty()) throw ArgumentError("standardize_targets_from: no windows");
  target_mean = mean(y);
  target_scale = std::sqrt(variance(y));
  if (!(target_scale > 1e-12)) target_scale = 1.0;
}

void Decoder::round_to_float() {
  for (auto& p : params_)
    for (double& v : p.value.values()) v = static_cast<float>(v);
}

// ---------------------------------------------------------------------------
// Model files

std::string Decoder::serialize() const {
  std::string out(kModelMagic, 5);
  put_le<std::uint32_t>(out, kModelFileVersion);
  const std::string spec = spec_.serialize();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.size()));
  out += spec;
  put_le<double>(out, target_mean);
  put_le<double>(out, target_scale);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(normalizer.channels()));
  for (double v : normalizer.mean()) put_le<double>(out, v);
  for (double v : normalizer.std()) put_le<double>(out, v);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put_le<std::uint64_t>(out, d);
    for (double v : p.value.values()) put_le<float>(out, static_cast<float>(v));
  }
  out.push_back(forest_ ? 1 : 0);
  if (forest_) forest_->serialize(out);
  return out;
}

void Decoder::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Decoder Decoder::deserialize(std::string_view bytes, const std::string& source, std::optional<Family> expect) {
  try {
    ByteReader in(bytes, source);
    if (in.take_bytes(5) != std::string_view(kModelMagic, 5)) throw LoadError(source + ": not a model file");
    const auto version = in.take<std::uint32_t>();
    if (version != kModelFileVersion)
      throw LoadError(source + ": model file version " + std::to_string(version) + ", expected " +
                      std::to_string(kModelFileVersion));
    const auto spec_len = in.take<std::uint32_t>();
    DecoderSpec spec;
    try {
      spec = DecoderSpec::parse(in.take_bytes(spec_len));
    } catch (const Error& e) {
      throw LoadError(source + ": bad spec blob: " + e.what());
    }
    if (expect && *expect != spec.family)
      throw SpecMismatchError(source + ": file holds a " + std::string(to_string(spec.family)) +
                              " decoder, expected " + std::string(to_string(*expect)));
    Decoder d(spec);
    d.target_mean = in.take<double>();
    d.target_scale = in.take<double>();
    const auto nc = in.take<std::uint32_t>();
    std::vector<double> m(nc), s(nc);
    for (auto& v : m) v = in.take<double>();
    for (auto& v : s) v = in.take<double>();
    if (nc) d.normalizer = Normalizer(std::move(m), std::move(s));
    const auto np = in.take<std::uint32_t>();
    if (np != d.params_.size())
      throw SpecMismatchError(source + ": " + std::to_string(np) + " tensors, spec requires " +
                              std::to_string(d.params_.size()));
    for (std::uint32_t i = 0; i < np; ++i) {
      const std::string name(in.take_bytes(in.take<std::uint32_t>()));
      ad::Shape shape(in.take<std::uint32_t>());
      for (auto& dim : shape) dim = in.take<std::uint64_t>();
      ad::Parameter& p = d.parameter(name);
      if (shape != p.value.shape())
        throw SpecMismatchError(source + ": tensor " + name + " has shape " + ad::shape_str(shape) + ", expected " +
                                ad::shape_str(p.value.shape()));
      for (double& v : p.value.values()) v = in.take<float>();
    }
    const auto has_forest = in.take<std::uint8_t>();
    if (has_forest) d.set_forest(Forest::deserialize(in));
    if (in.remaining() != 0) throw LoadError(source + ": trailing bytes after model");
    return d;
  } catch (const IntegrityError& e) {
    throw LoadError(e.what());
  } catch (const ShapeError& e) {
    throw LoadError(source + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw LoadError(source + ": " + e.what());
  }
}

Decoder Decoder::load(const std::filesystem::path& path, std::optional<Family> expect) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error& e) {
    throw LoadError(e.what());
  }
  return deserialize(bytes, path.string(), expect);
}

// ---------------------------------------------------------------------------

ad::GradcheckReport gradcheck_decoder(const DecoderSpec& spec, std::size_t batch, const ad::GradcheckOptions& opt) {
  if (!is_trainable(spec.family)) throw ArgumentError("gradcheck: random_forest has no gradients");
  DecoderSpec s = spec;
  s.dropout = 0.0;
  Decoder d(s);
  std::mt19937_64 rng(mix_seed(opt.seed, "gradcheck-inputs"));
  std::normal_distribution<double> n01(0.0, 1.0);
  ad::Tensor x({batch, s.window, s.input_channels});
  for (double& v : x.values()) v = n01(rng);
  ad::Tensor y({batch});
  for (double& v : y.values()) v = n01(rng);
  auto build = [&](ad::Graph& g) {
    ad::Var out = d.forward(g, g.constant(x));
    return ad::mse(out, g.constant(y));
  };
  return ad::gradcheck(build, d.all_parameters(), opt);
}

void fit_linear_closed_form(Decoder& d, const WindowSet& train, double ridge) {
  if (d.family() != Family::linear) throw ArgumentError("fit_linear_closed_form: not a linear decoder");
  if (train.size() < 2) throw ArgumentError("fit_linear_closed_form: need at least two windows");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const ad::Tensor x = train.all();
  const std::size_t n = train.size(), p = x.size() / n;
  Eigen::Map<const Mat> X(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Eigen::VectorXd y(n);
  const auto t = train.targets();
  for (std::size_t i = 0; i < n; ++i) y[i] = (t[i] - d.target_mean) / d.target_scale;
  const Eigen::RowVectorXd mx = X.colwise().mean();
  const double my = y.mean();
  const Mat Xc = X.rowwise() - mx;
  Eigen::MatrixXd A = Xc.transpose() * Xc;
  A.diagonal().array() += ridge * static_cast<double>(n);
  const Eigen::VectorXd w = A.ldlt().solve(Xc.transpose() * (y.array() - my).matrix());
  if (!w.allFinite()) throw FitError("fit_linear_closed_form: singular system");
  auto& W = d.parameter("head.fc.w");
  for (std::size_t i = 0; i < p; ++i) W.value[i] = w[static_cast<Eigen::Index>(i)];
  d.parameter("head.fc.b").value[0] = my - mx.dot(w);
  d.round_to_float();
}

}  // namespace locodec
