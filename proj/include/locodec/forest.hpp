#pragma once

// Bagged CART regression trees.

#include "locodec/io.hpp"
#include "locodec/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace locodec {

struct ForestParams {
  std::size_t trees = 100;
  std::size_t max_depth = 12;  // 0 = grow until leaves are pure
  std::size_t min_samples_leaf = 1;
  std::size_t mtry = 0;  // features tried per split; 0 = ceil(d / 3)
  bool bootstrap = true;
  bool operator==(const ForestParams&) const = default;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x[feature] <= threshold goes left
  double value = 0.0;         // leaf mean
  std::int32_t left = -1;
  std::int32_t right = -1;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double predict(std::span<const double> x) const;
};

class Forest {
 public:
  // Rows of `x` are samples. Throws ArgumentError on empty data.
  static Forest fit(const Matrix& x, std::span<const double> y, const ForestParams& params,
                    std::uint64_t seed);

  double predict(std::span<const double> x) const;
  std::size_t features() const { return features_; }
  const std::vector<Tree>& trees() const { return trees_; }

  // Flat little-endian encoding used inside model files.
  void serialize(std::string& out) const;
  static Forest deserialize(ByteReader& in);

  bool operator==(const Forest& o) const;

 private:
  std::size_t features_ = 0;
  std::vector<Tree> trees_;
};

}  // namespace locodec
