#include "locodec/report.hpp"

#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/numeric.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace locodec {

std::string variant_label(const EvalResult& e) {
  return e.model + "|" + std::string(to_string(e.strategy)) + "|" + e.region_set + "|" + e.band + "|" +
         std::to_string(e.offset_ms);
}

std::vector<VariantSummary> variant_medians(const ResultsTable& t) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalResult*>> groups;
  for (const auto& e : t.rows) {
    const auto key = variant_label(e);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&e);
  }
  std::vector<VariantSummary> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> r, r2;
    for (const auto* e : g) {
      r.push_back(e->r);
      r2.push_back(e->r2);
    }
    const EvalResult& f = *g.front();
    out.push_back({key, f.model, f.strategy, f.region_set, f.band, f.offset_ms, g.size(), median(r), median(r2)});
  }
  return out;
}

std::string variant_medians_csv(std::span<const VariantSummary> rows) {
  std::string out = "model,strategy,region_set,band,offset_ms,n_sessions,median_r,median_r2\n";
  for (const auto& v : rows)
    out += v.model + "," + std::string(to_string(v.strategy)) + "," + v.region_set + "," + v.band + "," +
           std::to_string(v.offset_ms) + "," + std::to_string(v.n_sessions) + "," + format_double(v.median_r) + "," +
           format_double(v.median_r2) + "\n";
  return out;
}

PairedScores paired_scores(const ResultsTable& t, std::string_view metric) {
  if (metric != "r" && metric != "r2") throw ArgumentError("paired_scores: metric must be r or r2");
  PairedScores ps;
  ps.metric = std::string(metric);
  std::map<std::string, std::size_t> column;
  std::vector<std::string> sessions;
  std::map<std::string, std::map<std::size_t, double>> cells;
  for (const auto& e : t.rows) {
    const auto key = variant_label(e);
    if (!column.count(key)) {
      column[key] = ps.variants.size();
      ps.variants.push_back(key);
    }
    if (!cells.count(e.session_id)) sessions.push_back(e.session_id);
    cells[e.session_id][column[key]] = metric == "r" ? e.r : e.r2;
  }
  for (const auto& s : sessions) {
    const auto& c = cells[s];
    if (c.size() != ps.variants.size()) continue;
    std::vector<double> row;
    for (const auto& [j, v] : c) row.push_back(v);
    ps.rows.push_back(std::move(row));
  }
  return ps;
}

std::vector<ComparisonRow> compare_table(const ResultsTable& t, double alpha) {
  std::vector<ComparisonRow> out;
  for (const char* metric : {"r", "r2"}) {
    const auto rows = compare_variants(paired_scores(t, metric), alpha);
    out.insert(out.end(), rows.begin(), rows.end());
  }
  return out;
}

std::vector<OffsetPoint> offset_curve(const ResultsTable& t, std::size_t n_boot, std::uint64_t seed) {
  std::set<int> offsets;
  for (const auto& e : t.rows) offsets.insert(e.offset_ms);
  std::vector<OffsetPoint> out;
  if (offsets.size() < 2) return out;
  std::vector<std::string> models;
  std::map<std::pair<std::string, int>, std::vector<double>> groups;
  for (const auto& e : t.rows) {
    if (std::find(models.begin(), models.end(), e.model) == models.end()) models.push_back(e.model);
    groups[{e.model, e.offset_ms}].push_back(e.r);
  }
  for (const auto& m : models)
    for (int off : offsets) {
      auto it = groups.find({m, off});
      if (it == groups.end()) continue;
      OffsetPoint p;
      p.model = m;
      p.offset_ms = off;
      p.n_sessions = it->second.size();
      if (p.n_sessions >= 3)
        p.r = bootstrap_median_ci(it->second, n_boot, 0.95, mix_seed(seed, m + "/" + std::to_string(off)));
      else
        p.r.median = p.r.lo = p.r.hi = median(it->second);
      out.push_back(p);
    }
  return out;
}

std::string offset_points_csv(std::span<const OffsetPoint> points) {
  std::string out = "model,offset_ms,median_r,ci_lo,ci_hi,n_sessions\n";
  for (const auto& p : points)
    out += p.model + "," + std::to_string(p.offset_ms) + "," + format_double(p.r.median) + "," +
           format_double(p.r.lo) + "," + format_double(p.r.hi) + "," + std::to_string(p.n_sessions) + "\n";
  return out;
}

}  // namespace locodec
