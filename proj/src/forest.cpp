#include "locodec/forest.hpp"

#include "locodec/error.hpp"
#include "locodec/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

namespace locodec {

double Tree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const TreeNode& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

namespace {

struct Split {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double score = -1.0;  // sumL^2/nL + sumR^2/nR
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, std::span<const double> y, const ForestParams& p, std::mt19937_64& rng)
      : x_(x), y_(y), p_(p), rng_(rng) {
    mtry_ = p.mtry ? std::min(p.mtry, x.cols) : (x.cols + 2) / 3;
    order_.resize(x.cols);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  Tree build(std::vector<std::size_t> rows) {
    Tree t;
    struct Item {
      std::size_t node;
      std::size_t depth;
      std::vector<std::size_t> rows;
    };
    std::vector<Item> stack;
    t.nodes.emplace_back();
    stack.push_back({0, 0, std::move(rows)});
    while (!stack.empty()) {
      Item it = std::move(stack.back());
      stack.pop_back();
      double s = 0.0;
      for (std::size_t r : it.rows) s += y_[r];
      t.nodes[it.node].value = s / static_cast<double>(it.rows.size());
      if (p_.max_depth && it.depth >= p_.max_depth) continue;
      if (it.rows.size() < 2 * std::max<std::size_t>(p_.min_samples_leaf, 1)) continue;
      const double y0 = y_[it.rows.front()];
      if (std::all_of(it.rows.begin(), it.rows.end(), [&](std::size_t r) { return y_[r] == y0; })) continue;

      const Split sp = best_split(it.rows, s);
      if (!sp.found) continue;
      std::vector<std::size_t> left, right;
      for (std::size_t r : it.rows) (x_(r, sp.feature) <= sp.threshold ? left : right).push_back(r);
      const auto li = static_cast<std::int32_t>(t.nodes.size());
      t.nodes.emplace_back();
      t.nodes.emplace_back();
      TreeNode& n = t.nodes[it.node];
      n.feature = static_cast<std::int32_t>(sp.feature);
      n.threshold = sp.threshold;
      n.left = li;
      n.right = li + 1;
      stack.push_back({static_cast<std::size_t>(li + 1), it.depth + 1, std::move(right)});
      stack.push_back({static_cast<std::size_t>(li), it.depth + 1, std::move(left)});
    }
    return t;
  }

 private:
  Split best_split(const std::vector<std::size_t>& rows, double total) {
    // Random feature order; the first mtry are the sampled subset and the
    // rest are only consulted when none of those admits a split.
    for (std::size_t i = 0; i + 1 < order_.size(); ++i) {
      std::uniform_int_distribution<std::size_t> d(i, order_.size() - 1);
      std::swap(order_[i], order_[d(rng_)]);
    }
    Split best;
    for (std::size_t k = 0; k < order_.size(); ++k) {
      if (k >= mtry_ && best.found) break;
      scan_feature(order_[k], rows, total, best);
    }
    return best;
  }

  void scan_feature(std::size_t f, const std::vector<std::size_t>& rows, double total, Split& best) {
    buf_.clear();
    for (std::size_t r : rows) buf_.emplace_back(x_(r, f), y_[r]);
    std::sort(buf_.begin(), buf_.end());
    const std::size_t n = buf_.size();
    const std::size_t min_leaf = std::max<std::size_t>(p_.min_samples_leaf, 1);
    double left = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      left += buf_[i].second;
      const std::size_t nl = i + 1;
      if (nl < min_leaf || n - nl < min_leaf) continue;
      if (buf_[i].first == buf_[i + 1].first) continue;
      const double right = total - left;
      const double score = left * left / static_cast<double>(nl) + right * right / static_cast<double>(n - nl);
      if (!best.found || score > best.score) {
        double thr = 0.5 * (buf_[i].first + buf_[i + 1].first);
        if (!(thr < buf_[i + 1].first)) thr = buf_[i].first;
        best = {true, f, thr, score};
      }
    }
  }

  const Matrix& x_;
  std::span<const double> y_;
  const ForestParams& p_;
  std::mt19937_64& rng_;
  std::size_t mtry_ = 1;
  std::vector<std::size_t> order_;
  std::vector<std::pair<double, double>> buf_;
};

}  // namespace

Forest Forest::fit(const Matrix& x, std::span<const double> y, const ForestParams& params,
                   std::uint64_t seed) {
  if (x.rows == 0 || x.cols == 0) throw ArgumentError("forest_fit: empty training data");
  if (y.size() != x.rows) throw ShapeError("forest_fit: " + std::to_string(x.rows) + " rows but " +
                                           std::to_string(y.size()) + " targets");
  if (params.trees == 0) throw ArgumentError("forest_fit: tree count must be positive");
  Forest f;
  f.features_ = x.cols;
  for (std::size_t t = 0; t < params.trees; ++t) {
    std::mt19937_64 rng(splitmix64(seed + 0x9e3779b97f4a7c15ULL * (t + 1)));
    std::vector<std::size_t> rows(x.rows);
    if (params.bootstrap) {
      std::uniform_int_distribution<std::size_t> d(0, x.rows - 1);
      for (auto& r : rows) r = d(rng);
    } else {
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    TreeBuilder b(x, y, params, rng);
    f.trees_.push_back(b.build(std::move(rows)));
  }
  return f;
}

double Forest::predict(std::span<const double> x) const {
  if (x.size() != features_)
    throw ShapeError("forest_predict: expected " + std::to_string(features_) + " features, got " +
                     std::to_string(x.size()));
  double s = 0.0;
  for (const Tree& t : trees_) s += t.predict(x);
  return s / static_cast<double>(trees_.size());
}

void Forest::serialize(std::string& out) const {
  put_le<std::uint64_t>(out, features_);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(trees_.size()));
  for (const Tree& t : trees_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.nodes.size()));
    for (const TreeNode& n : t.nodes) {
      put_le<std::int32_t>(out, n.feature);
      put_le<double>(out, n.threshold);
      put_le<double>(out, n.value);
      put_le<std::int32_t>(out, n.left);
      put_le<std::int32_t>(out, n.right);
    }
  }
}

Forest Forest::deserialize(ByteReader& in) {
  Forest f;
  f.features_ = in.take<std::uint64_t>();
  const auto nt = in.take<std::uint32_t>();
  for (std::uint32_t i = 0; i < nt; ++i) {
    Tree t;
    const auto nn = in.take<std::uint32_t>();
    for (std::uint32_t j = 0; j < nn; ++j) {
      TreeNode n;
      n.feature = in.take<std::int32_t>();
      n.threshold = in.take<double>();
      n.value = in.take<double>();
      n.left = in.take<std::int32_t>();
      n.right = in.take<std::int32_t>();
      const auto bad = [&](std::int32_t c) {
        return c <= static_cast<std::int32_t>(j) || static_cast<std::uint32_t>(c) >= nn;
      };
      if (n.feature >= 0 && (static_cast<std::uint64_t>(n.feature) >= f.features_ || bad(n.left) || bad(n.right)))
        throw IntegrityError("forest: corrupt tree node");
      t.nodes.push_back(n);
    }
    if (t.nodes.empty()) throw IntegrityError("forest: empty tree");
    f.trees_.push_back(std::move(t));
  }
  return f;
}

bool Forest::operator==(const Forest& o) const {
  if (features_ != o.features_ || trees_.size() != o.trees_.size()) return false;
  for (std::size_t i = 0; i < trees_.size(); ++i) {
    const auto& a = trees_[i].nodes;
    const auto& b = o.trees_[i].nodes;
    if (a.size() != b.size()) return false;
    for (std::size_t j = 0; j < a.size(); ++j)
      if (a[j].feature != b[j].feature || a[j].threshold != b[j].threshold || a[j].value != b[j].value ||
          a[j].left != b[j].left || a[j].right != b[j].right)
        return false;
  }
  return true;
}

}  // namespace locodec
