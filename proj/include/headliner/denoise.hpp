#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "headliner/corpus.hpp"
#include "headliner/error.hpp"

namespace headliner {

struct BreakingSet {
  std::set<std::string> article_ids;
  double threshold_percent = 0.0;

  bool contains(const std::string& id) const { return article_ids.count(id) > 0; }
};

// Aligned view of one user's history after news-level filtering. Masked
// positions keep the headline but carry dwell exactly 0, so every list stays
// index-aligned with the original sequence.
struct FilteredHistory {
  std::vector<std::vector<std::string>> headlines;
  std::vector<double> dwells;
  std::vector<std::int64_t> click_times;
  std::vector<bool> outlier;  // excluded from the SIM mean, still in sequence
  std::size_t original_length = 0;

  std::size_t size() const { return dwells.size(); }
};

// Top CTR percentile, sorted by CTR descending with article_id breaking ties.
// Selecting a prefix of one fixed order makes the set monotone in M.
inline BreakingSet build_breaking_set(const Corpus& corpus, double m_percent) {
  if (corpus.articles.empty()) throw ValidationError("build_breaking_set: empty corpus");
  if (!(m_percent > 0.0 && m_percent <= 100.0)) {
    throw ConfigError("build_breaking_set: M must be in (0, 100]");
  }
  const auto ctr = compute_ctr(corpus.articles, corpus.impressions);
  std::vector<std::pair<double, std::string>> order;
  order.reserve(corpus.articles.size());
  for (const auto& a : corpus.articles) order.emplace_back(ctr.at(a.article_id), a.article_id);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const double n = static_cast<double>(corpus.articles.size());
  auto k = static_cast<std::size_t>(std::ceil(m_percent / 100.0 * n - 1e-9));
  k = std::clamp<std::size_t>(k, 1, corpus.articles.size());
  BreakingSet out;
  out.threshold_percent = m_percent;
  for (std::size_t i = 0; i < k; ++i) out.article_ids.insert(order[i].second);
  return out;
}

// Masks dwell to 0 for breaking clicks; order and length are preserved.
// With hard_drop the breaking clicks are deleted instead (the alternative
// reading of the filtering step), which shortens the sequence.
inline FilteredHistory news_level_filter(const Corpus& corpus, const UserHistory& history,
                                         const BreakingSet& breaking, bool hard_drop = false) {
  FilteredHistory out;
  out.original_length = history.events.size();
  for (const auto& e : history.events) {
    const bool masked = breaking.contains(e.article_id);
    if (masked && hard_drop) continue;
    out.headlines.push_back(corpus.article(e.article_id).headline);
    out.dwells.push_back(masked ? 0.0 : e.dwell_seconds);
    out.click_times.push_back(e.click_time);
    out.outlier.push_back(e.dwell_outlier);
  }
  return out;
}

// The rule-based baseline: keep clicks with dwell >= min_dwell whose article
// is not breaking. Output is a subsequence of the input.
inline UserHistory rule_based_filter(const UserHistory& history, double min_dwell,
                                     const BreakingSet& breaking) {
  if (min_dwell < 0.0) throw ConfigError("rule_based_filter: min_dwell must be >= 0");
  UserHistory out;
  out.user_id = history.user_id;
  out.ground_truth_topics = history.ground_truth_topics;
  for (const auto& e : history.events) {
    if (e.dwell_seconds >= min_dwell && !breaking.contains(e.article_id)) {
      out.events.push_back(e);
    }
  }
  return out;
}

// Flags dwell-time outliers for exclusion from the SIM mean. Events stay in
// the sequence.
inline UserHistory cap_outliers(const UserHistory& history, double cap) {
  if (!(cap > 0.0)) throw ConfigError("cap_outliers: cap must be positive");
  UserHistory out = history;
  for (auto& e : out.events) e.dwell_outlier = e.dwell_seconds > cap;
  return out;
}

inline void export_breaking_set(const BreakingSet& breaking, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& id : breaking.article_ids) out << id << '\n';
}

}  // namespace headliner
