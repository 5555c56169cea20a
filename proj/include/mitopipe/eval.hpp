// Copyright 2026 The mitopipe Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// @file eval.hpp
/// @brief Point matching, precision / recall / F1, soft Jaccard, and the
/// detection CSV formats.
///
/// Two matchers are provided. `Matcher::optimal` (default) returns a matching
/// with the most pairs and, among those, the least total distance.
/// `Matcher::greedy` accepts pairs in ascending distance order (ties: lower
/// prediction index, then lower ground-truth index); it can return fewer
/// pairs than possible when one prediction sits closest to a ground truth
/// that a second prediction also needed.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mitopipe/core.hpp"

namespace mitopipe::eval {

inline constexpr double kDefaultRadius = 30.0;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct MatchPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double distance = 0.0;
};

struct MatchResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<MatchPair> pairs;  // sorted by prediction index

  double total_distance() const {
    double s = 0.0;
    for (const auto& p : pairs) s += p.distance;
    return s;
  }
};

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

enum class Matcher { optimal, greedy };

inline std::string_view to_string(Matcher m) { return m == Matcher::optimal ? "optimal" : "greedy"; }

inline Matcher parse_matcher(std::string_view s) {
  if (s == "optimal") return Matcher::optimal;
  if (s == "greedy") return Matcher::greedy;
  throw Error(ErrorKind::invalid_config, "unknown matcher '" + std::string(s) + "' (optimal | greedy)");
}

namespace detail {

inline double distance(const Detection& p, const Point& g) { return std::hypot(p.x - g.x, p.y - g.y); }

struct Edge {
  double d;
  std::size_t pred;
  std::size_t gt;
};

inline std::vector<Edge> edges_within(const std::vector<Detection>& preds, const std::vector<Point>& gts,
                                      double radius) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double d = distance(preds[i], gts[j]);
      if (d <= radius) edges.push_back({d, i, j});
    }
  }
  return edges;
}

/// Minimum-cost assignment of every row to a distinct column (rows <= cols),
/// shortest augmenting paths with potentials. Returns the column of each row.
inline std::vector<std::size_t> assign_rows(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size(), m = cost.empty() ? 0 : cost[0].size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

inline std::size_t find_root(std::vector<std::size_t>& parent, std::size_t a) {
  while (parent[a] != a) a = parent[a] = parent[parent[a]];
  return a;
}

inline std::vector<MatchPair> optimal_pairs(const std::vector<Detection>& preds, const std::vector<Point>& gts,
                                            double radius) {
  const auto edges = edges_within(preds, gts, radius);
  // Independent subproblems: connected components of the candidate-pair graph.
  const std::size_t n = preds.size();
  std::vector<std::size_t> parent(n + gts.size());
  std::iota(parent.begin(), parent.end(), 0);
  for (const auto& e : edges) parent[find_root(parent, e.pred)] = find_root(parent, n + e.gt);
  std::map<std::size_t, std::vector<const Edge*>> groups;
  for (const auto& e : edges) groups[find_root(parent, e.pred)].push_back(&e);

  std::vector<MatchPair> out;
  for (const auto& [root, group] : groups) {
    std::vector<std::size_t> rows, cols;
    for (const Edge* e : group) {
      rows.push_back(e->pred);
      cols.push_back(e->gt);
    }
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    const bool transpose = rows.size() > cols.size();
    const auto& r = transpose ? cols : rows;
    const auto& c = transpose ? rows : cols;
    // Cost d - big for a usable pair, 0 for "left unmatched". big exceeds any
    // achievable total distance, so more pairs always wins over shorter ones.
    const double big = (static_cast<double>(r.size()) + 1.0) * (radius + 1.0);
    std::vector<std::vector<double>> cost(r.size(), std::vector<double>(c.size(), 0.0));
    std::vector<std::vector<double>> dist(r.size(), std::vector<double>(c.size(), -1.0));
    for (const Edge* e : group) {
      const auto pi = static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), e->pred) - rows.begin());
      const auto gi = static_cast<std::size_t>(std::lower_bound(cols.begin(), cols.end(), e->gt) - cols.begin());
      const auto a = transpose ? gi : pi, b = transpose ? pi : gi;
      cost[a][b] = e->d - big;
      dist[a][b] = e->d;
    }
    const auto assignment = assign_rows(cost);
    for (std::size_t a = 0; a < r.size(); ++a) {
      const auto b = assignment[a];
      if (dist[a][b] < 0.0) continue;
      out.push_back(transpose ? MatchPair{c[b], r[a], dist[a][b]} : MatchPair{r[a], c[b], dist[a][b]});
    }
  }
  return out;
}

inline std::vector<MatchPair> greedy_pairs(const std::vector<Detection>& preds, const std::vector<Point>& gts,
                                           double radius) {
  auto edges = edges_within(preds, gts, radius);
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });
  std::vector<char> pred_used(preds.size(), 0), gt_used(gts.size(), 0);
  std::vector<MatchPair> out;
  for (const auto& e : edges) {
    if (pred_used[e.pred] || gt_used[e.gt]) continue;
    pred_used[e.pred] = gt_used[e.gt] = 1;
    out.push_back({e.pred, e.gt, e.d});
  }
  return out;
}

}  // namespace detail

inline MatchResult match_detections(const std::vector<Detection>& preds, const std::vector<Point>& gts,
                                    double radius = kDefaultRadius, Matcher matcher = Matcher::optimal) {
  if (!(radius > 0.0)) throw Error(ErrorKind::invalid_config, "matching radius must be positive");
  MatchResult r;
  r.pairs = matcher == Matcher::optimal ? detail::optimal_pairs(preds, gts, radius)
                                        : detail::greedy_pairs(preds, gts, radius);
  std::sort(r.pairs.begin(), r.pairs.end(), [](const MatchPair& a, const MatchPair& b) { return a.pred < b.pred; });
  r.tp = r.pairs.size();
  r.fp = preds.size() - r.tp;
  r.fn = gts.size() - r.tp;
  return r;
}

inline Metrics prf1(std::size_t tp, std::size_t fp, std::size_t fn) {
  Metrics m;
  const auto t = static_cast<double>(tp);
  m.precision = tp + fp ? t / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? t / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

inline Metrics prf1(const MatchResult& m) { return prf1(m.tp, m.fp, m.fn); }

/// 1 - (sum p*g + eps) / (sum p + sum g - sum p*g + eps).
inline double soft_jaccard(const ProbabilityMap& pred, const BinaryMask& gt, double epsilon = 1.0) {
  if (!same_size(pred, gt)) {
    throw Error(ErrorKind::invalid_input, "soft Jaccard needs equal sizes, got " + std::to_string(pred.width()) +
                                              "x" + std::to_string(pred.height()) + " and " +
                                              std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
  }
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
    const double p = pred.data()[i];
    const double g = gt.data()[i] ? 1.0 : 0.0;
    inter += p * g;
    sp += p;
    sg += g;
  }
  return 1.0 - (inter + epsilon) / (sp + sg - inter + epsilon);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

using DetectionSet = std::map<std::string, std::vector<Detection>>;
using PointSet = std::map<std::string, std::vector<Point>>;

struct ImageCounts {
  std::string image_id;
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct DatasetReport {
  std::size_t tp = 0, fp = 0, fn = 0;
  Metrics metrics;
  std::vector<ImageCounts> images;  // sorted by image id
};

/// Micro-averaged: counts are summed over images, metrics computed once.
/// Images present in only one of the two sets still count.
inline DatasetReport evaluate(const DetectionSet& preds, const PointSet& gts, double radius = kDefaultRadius,
                              Matcher matcher = Matcher::optimal) {
  std::map<std::string, int> ids;
  for (const auto& [id, _] : preds) ids[id];
  for (const auto& [id, _] : gts) ids[id];
  DatasetReport rep;
  static const std::vector<Detection> no_preds;
  static const std::vector<Point> no_gts;
  for (const auto& [id, _] : ids) {
    const auto pi = preds.find(id);
    const auto gi = gts.find(id);
    const auto m = match_detections(pi == preds.end() ? no_preds : pi->second,
                                    gi == gts.end() ? no_gts : gi->second, radius, matcher);
    rep.images.push_back({id, m.tp, m.fp, m.fn});
    rep.tp += m.tp;
    rep.fp += m.fp;
    rep.fn += m.fn;
  }
  rep.metrics = prf1(rep.tp, rep.fp, rep.fn);
  return rep;
}

/// Candidate with both stage scores, the input of a threshold sweep.
struct ScoredCandidate {
  double x = 0.0, y = 0.0;
  double seg_score = 0.0;
  double cls_score = 0.0;
};

using ScoredSet = std::map<std::string, std::vector<ScoredCandidate>>;

struct SweepCell {
  double t_seg = 0.0;
  double t_cls = 0.0;
  DatasetReport report;
};

/// F1 over a (t_seg, t_cls) grid: a candidate survives when its segmentation
/// score is >= t_seg and its classifier score is >= t_cls.
inline std::vector<SweepCell> sweep_thresholds(const ScoredSet& scored, const PointSet& gts,
                                               const std::vector<double>& t_seg, const std::vector<double>& t_cls,
                                               double radius = kDefaultRadius, Matcher matcher = Matcher::optimal) {
  std::vector<SweepCell> out;
  for (double ts : t_seg) {
    for (double tc : t_cls) {
      DetectionSet kept;
      for (const auto& [id, cands] : scored) {
        auto& v = kept[id];
        for (const auto& c : cands) {
          if (c.seg_score >= ts && c.cls_score >= tc) v.push_back({c.x, c.y, c.cls_score});
        }
      }
      out.push_back({ts, tc, evaluate(kept, gts, radius, matcher)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Fixed-point text with round-half-away-from-zero at `decimals` places.
inline std::string format_fixed(double v, int decimals) {
  double scale = 1.0;
  for (int i = 0; i < decimals; ++i) scale *= 10.0;
  const double scaled = std::round(v * scale);
  const bool negative = scaled < 0.0;
  const auto units = static_cast<std::uint64_t>(std::fabs(scaled));
  const auto div = static_cast<std::uint64_t>(scale);
  std::string frac = std::to_string(units % div);
  if (decimals > 0) frac.insert(0, static_cast<std::size_t>(decimals) - frac.size(), '0');
  std::string s = (negative ? "-" : "") + std::to_string(units / div);
  if (decimals > 0) s += "." + frac;
  return s;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto* b = s.data();
  const auto* e = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v)) {
    throw Error(ErrorKind::invalid_input, where + ": '" + s + "' is not a number");
  }
  return v;
}

/// Reads a CSV with the exact `header`; calls row(fields, where) per line.
template <typename Fn>
void read_csv(std::istream& in, const std::vector<std::string>& header, const std::string& source, Fn&& row) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::invalid_input, source + ": empty file, expected a header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (split_csv_line(line) != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    throw Error(ErrorKind::invalid_input, source + ": header must be '" + want + "'");
  }
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const std::string where = source + ":" + std::to_string(n);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::invalid_input, where + ": expected " + std::to_string(header.size()) + " fields, got " +
                                                std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw Error(ErrorKind::invalid_input, where + ": empty image_id");
    row(fields, where);
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  return in;
}

}  // namespace detail

inline DetectionSet read_detections(std::istream& in, const std::string& source = "<predictions>") {
  DetectionSet out;
  detail::read_csv(in, {"image_id", "x", "y", "score"}, source, [&](const auto& f, const std::string& where) {
    const double s = detail::parse_number(f[3], where);
    if (s < 0.0 || s > 1.0) throw Error(ErrorKind::invalid_input, where + ": score outside [0,1]");
    out[f[0]].push_back({detail::parse_number(f[1], where), detail::parse_number(f[2], where), s});
  });
  return out;
}

inline PointSet read_points(std::istream& in, const std::string& source = "<ground truth>") {
  PointSet out;
  detail::read_csv(in, {"image_id", "x", "y"}, source, [&](const auto& f, const std::string& where) {
    out[f[0]].push_back({detail::parse_number(f[1], where), detail::parse_number(f[2], where)});
  });
  return out;
}

inline ScoredSet read_scored(std::istream& in, const std::string& source = "<candidates>") {
  ScoredSet out;
  detail::read_csv(in, {"image_id", "x", "y", "seg_score", "cls_score"}, source,
                   [&](const auto& f, const std::string& where) {
                     out[f[0]].push_back({detail::parse_number(f[1], where), detail::parse_number(f[2], where),
                                          detail::parse_number(f[3], where), detail::parse_number(f[4], where)});
                   });
  return out;
}

inline DetectionSet read_detections_file(const std::string& path) {
  auto in = detail::open_input(path);
  return read_detections(in, path);
}
inline PointSet read_points_file(const std::string& path) {
  auto in = detail::open_input(path);
  return read_points(in, path);
}
inline ScoredSet read_scored_file(const std::string& path) {
  auto in = detail::open_input(path);
  return read_scored(in, path);
}

/// Rows in image-id order, detections in list order.
inline void write_detections(std::ostream& out, const DetectionSet& dets) {
  out << "image_id,x,y,score\n";
  for (const auto& [id, list] : dets) {
    for (const auto& d : list) {
      out << id << ',' << format_fixed(d.x, 2) << ',' << format_fixed(d.y, 2) << ',' << format_fixed(d.score, 4)
          << '\n';
    }
  }
}

inline void write_points(std::ostream& out, const PointSet& pts) {
  out << "image_id,x,y\n";
  for (const auto& [id, list] : pts) {
    for (const auto& p : list) out << id << ',' << format_fixed(p.x, 2) << ',' << format_fixed(p.y, 2) << '\n';
  }
}

inline void write_scored(std::ostream& out, const ScoredSet& set) {
  out << "image_id,x,y,seg_score,cls_score\n";
  for (const auto& [id, list] : set) {
    for (const auto& c : list) {
      out << id << ',' << format_fixed(c.x, 2) << ',' << format_fixed(c.y, 2) << ',' << format_fixed(c.seg_score, 4)
          << ',' << format_fixed(c.cls_score, 4) << '\n';
    }
  }
}

}  // namespace mitopipe::eval
