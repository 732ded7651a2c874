#pragma once

// Summaries of a results table: per-variant medians, paired comparisons and
// offset curves.

#include "locodec/protocols.hpp"
#include "locodec/stats.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace locodec {

// Everything but the session identifies a variant.
std::string variant_label(const EvalResult& e);

struct VariantSummary {
  std::string variant;
  std::string model;
  Strategy strategy = Strategy::single_80;
  std::string region_set;
  std::string band;
  int offset_ms = 0;
  std::size_t n_sessions = 0;
  double median_r = 0.0;
  double median_r2 = 0.0;
};

// One row per variant in first-appearance order.
std::vector<VariantSummary> variant_medians(const ResultsTable& t);
std::string variant_medians_csv(std::span<const VariantSummary> rows);

// Sessions x variants for "r" or "r2"; sessions missing any variant are dropped.
PairedScores paired_scores(const ResultsTable& t, std::string_view metric);

// compare_variants on r and on r2. Empty with fewer than two variants.
std::vector<ComparisonRow> compare_table(const ResultsTable& t, double alpha = 0.05);

// Bootstrapped median r per (model, offset) for tables with several offsets;
// empty otherwise.
std::vector<OffsetPoint> offset_curve(const ResultsTable& t, std::size_t n_boot, std::uint64_t seed);
std::string offset_points_csv(std::span<const OffsetPoint> points);

}  // namespace locodec
