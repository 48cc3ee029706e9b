#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "seqvis/geometry.hpp"

namespace seqvis {

/// Per-image matching outcome: (score, hit) per prediction plus the image's
/// ground-truth count.
struct MatchResult {
  std::vector<std::pair<double, bool>> scored;
  std::size_t num_gt = 0;
};

/// Greedy matching: predictions sorted by descending score (ties keep input
/// order) each claim the most similar unmatched ground truth with similarity
/// at or above the threshold.
inline MatchResult match_greedy(
    std::span<const double> scores, std::size_t num_gt,
    const std::function<double(std::size_t, std::size_t)>& similarity,
    double threshold) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<bool> taken(num_gt, false);
  MatchResult result;
  result.num_gt = num_gt;
  for (std::size_t pi : order) {
    double best = -1.0;
    std::size_t best_gt = 0;
    for (std::size_t gi = 0; gi < num_gt; ++gi) {
      if (taken[gi]) continue;
      double s = similarity(pi, gi);
      if (s > best) {
        best = s;
        best_gt = gi;
      }
    }
    bool hit = best >= threshold && num_gt > 0;
    if (hit) taken[best_gt] = true;
    result.scored.emplace_back(scores[pi], hit);
  }
  return result;
}

/// Area under the precision-recall curve (all-point interpolation) over the
/// pooled predictions of many images. With no ground truths the score is 1
/// when there are no predictions and 0 otherwise.
inline double average_precision(std::span<const MatchResult> per_image) {
  std::vector<std::pair<double, bool>> pooled;
  std::size_t total_gt = 0;
  for (const MatchResult& m : per_image) {
    total_gt += m.num_gt;
    pooled.insert(pooled.end(), m.scored.begin(), m.scored.end());
  }
  if (total_gt == 0) return pooled.empty() ? 1.0 : 0.0;
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (pooled[i].second) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  // Monotone envelope, then sum rectangle areas at recall steps.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

struct OksConfig {
  std::vector<double> kappas;  // per-keypoint falloff constants

  static OksConfig uniform(std::size_t count, double kappa = 0.1) {
    OksConfig cfg;
    cfg.kappas.assign(count, kappa);
    return cfg;
  }
};

/// Object keypoint similarity: mean over ground-truth-visible keypoints of
/// exp(-d^2 / (2 s^2 kappa^2)) with s^2 the ground-truth box area. A visible
/// ground truth with an occluded prediction scores 0 for that keypoint; an
/// all-occluded ground truth scores 0 overall.
inline double oks(const KeypointSet& pred, const KeypointSet& gt, const BBox& gt_box,
                  const OksConfig& cfg) {
  if (pred.points.size() != gt.points.size())
    throw std::invalid_argument("oks: keypoint count mismatch");
  if (cfg.kappas.size() != gt.points.size())
    throw std::invalid_argument("oks: kappa count mismatch");
  double s2 = gt_box.area();
  double sum = 0.0;
  std::size_t visible = 0;
  for (std::size_t i = 0; i < gt.points.size(); ++i) {
    if (gt.points[i].occluded) continue;
    ++visible;
    if (pred.points[i].occluded) continue;
    double kappa = cfg.kappas[i];
    if (!(kappa > 0.0)) throw std::invalid_argument("oks: kappa must be > 0");
    double dy = pred.points[i].y - gt.points[i].y;
    double dx = pred.points[i].x - gt.points[i].x;
    double d2 = dy * dy + dx * dx;
    if (s2 <= 0.0) continue;  // degenerate box: no credit
    sum += std::exp(-d2 / (2.0 * s2 * kappa * kappa));
  }
  if (visible == 0) return 0.0;
  return sum / static_cast<double>(visible);
}

namespace detail {

inline std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline std::map<std::string, std::size_t> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::string, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      key += tokens[i + j];
      key += '\x1f';
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

/// Sentence BLEU: geometric mean of clipped n-gram precisions times the
/// brevity penalty, lowercased whitespace tokens. Orders with no candidate
/// n-grams are skipped so a short candidate identical to a reference still
/// scores 1.
inline double bleu(std::string_view candidate,
                   std::span<const std::string> references, int max_n = 4) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
  std::vector<std::string> cand = detail::bleu_tokenize(candidate);
  if (cand.empty()) return 0.0;
  std::vector<std::vector<std::string>> refs;
  for (const std::string& r : references) refs.push_back(detail::bleu_tokenize(r));
  if (refs.empty()) throw std::invalid_argument("bleu: no references");

  double log_sum = 0.0;
  int used_orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    auto cand_counts = detail::ngram_counts(cand, static_cast<std::size_t>(n));
    std::size_t total = 0, matched = 0;
    for (const auto& [gram, count] : cand_counts) {
      total += count;
      std::size_t best_ref = 0;
      for (const auto& ref : refs) {
        auto rc = detail::ngram_counts(ref, static_cast<std::size_t>(n));
        auto it = rc.find(gram);
        if (it != rc.end()) best_ref = std::max(best_ref, it->second);
      }
      matched += std::min(count, best_ref);
    }
    if (total == 0) continue;  // candidate shorter than n
    if (matched == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    ++used_orders;
  }
  if (used_orders == 0) return 0.0;
  double geo = std::exp(log_sum / used_orders);

  // Closest reference length; ties go to the shorter reference.
  std::size_t c = cand.size();
  std::size_t r = refs[0].size();
  for (const auto& ref : refs) {
    std::size_t len = ref.size();
    auto dist = [&](std::size_t l) {
      return l > c ? l - c : c - l;
    };
    if (dist(len) < dist(r) || (dist(len) == dist(r) && len < r)) r = len;
  }
  double bp = c >= r ? 1.0
                     : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return geo * bp;
}

/// One JSON object per task/metric, e.g.
/// {"task":"detect","metric":"ap","value":0.5,"thresholds":[0.5]}
struct MetricReport {
  std::string task;
  std::string metric;
  double value = 0.0;
  std::vector<double> thresholds;

  std::string to_json() const {
    std::ostringstream out;
    auto num = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    out << "{\"task\":\"" << task << "\",\"metric\":\"" << metric
        << "\",\"value\":" << num(value) << ",\"thresholds\":[";
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      out << (i ? "," : "") << num(thresholds[i]);
    }
    out << "]}";
    return out.str();
  }
};

}  // namespace seqvis
