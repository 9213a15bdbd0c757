#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "headliner/error.hpp"
#include "headliner/rng.hpp"

namespace headliner {

struct NewsArticle {
  std::string article_id;
  std::vector<std::string> headline;
  std::vector<std::string> body;
  int topic_id = 0;
  std::int64_t publish_time = 0;
};

struct ClickEvent {
  std::string article_id;
  double dwell_seconds = 0.0;
  std::int64_t click_time = 0;
  // provenance, set by the synthetic generator only; never a model input
  bool is_noise = false;
  bool is_burst = false;
  bool has_provenance = false;
  // runtime flag set by cap_outliers; not serialized
  bool dwell_outlier = false;
};

struct UserHistory {
  std::string user_id;
  std::vector<ClickEvent> events;  // chronological
  std::optional<std::set<int>> ground_truth_topics;
};

struct Exposure {
  std::string article_id;
  bool clicked = false;
  std::int64_t exposure_time = 0;
};

struct ImpressionLog {
  std::string user_id;
  std::vector<Exposure> exposed;
};

struct Corpus {
  std::vector<NewsArticle> articles;
  std::vector<UserHistory> histories;
  std::vector<ImpressionLog> impressions;

  std::map<std::string, std::size_t> article_index;

  void reindex() {
    article_index.clear();
    for (std::size_t i = 0; i < articles.size(); ++i) {
      if (!article_index.emplace(articles[i].article_id, i).second) {
        throw ValidationError("duplicate article_id: " + articles[i].article_id);
      }
    }
  }

  const NewsArticle& article(const std::string& id) const {
    auto it = article_index.find(id);
    if (it == article_index.end()) throw ValidationError("unknown article_id: " + id);
    return articles[it->second];
  }

  bool has_article(const std::string& id) const { return article_index.count(id) > 0; }
};

// ---- token helpers -----------------------------------------------------------

inline std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline std::string zpad(const std::string& prefix, std::size_t n, int width) {
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << n;
  return os.str();
}

// ---- serialization -----------------------------------------------------------
// Line-delimited JSON, one entity per line, three files per corpus directory.

namespace detail {

inline nlohmann::json parse_line(const std::string& line, std::size_t lineno,
                                 const std::string& file) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file + ": malformed record: " + e.what(), lineno);
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* name, std::size_t lineno, const std::string& file) {
  if (!j.contains(name)) {
    throw ParseError(file + ": missing field '" + name + "'", lineno);
  }
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file + ": bad field '" + name + "': " + e.what(), lineno);
  }
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace detail

inline Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  const auto articles_path = dir / "articles.jsonl";
  const auto histories_path = dir / "histories.jsonl";
  const auto impressions_path = dir / "impressions.jsonl";

  std::size_t lineno = 0;
  for (const auto& line : detail::read_lines(articles_path)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = detail::parse_line(line, lineno, "articles.jsonl");
    NewsArticle a;
    a.article_id = detail::field<std::string>(j, "article_id", lineno, "articles.jsonl");
    a.headline = split_tokens(detail::field<std::string>(j, "headline", lineno, "articles.jsonl"));
    a.body = split_tokens(detail::field<std::string>(j, "body", lineno, "articles.jsonl"));
    a.topic_id = detail::field<int>(j, "topic_id", lineno, "articles.jsonl");
    a.publish_time = detail::field<std::int64_t>(j, "publish_time", lineno, "articles.jsonl");
    if (a.headline.empty()) throw ValidationError("empty headline in " + a.article_id);
    if (a.body.empty()) throw ValidationError("empty body in " + a.article_id);
    corpus.articles.push_back(std::move(a));
  }
  corpus.reindex();

  lineno = 0;
  for (const auto& line : detail::read_lines(histories_path)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = detail::parse_line(line, lineno, "histories.jsonl");
    UserHistory h;
    h.user_id = detail::field<std::string>(j, "user_id", lineno, "histories.jsonl");
    for (const auto& je : detail::field<nlohmann::json>(j, "events", lineno, "histories.jsonl")) {
      ClickEvent e;
      e.article_id = detail::field<std::string>(je, "article_id", lineno, "histories.jsonl");
      e.dwell_seconds = detail::field<double>(je, "dwell_seconds", lineno, "histories.jsonl");
      e.click_time = detail::field<std::int64_t>(je, "click_time", lineno, "histories.jsonl");
      if (je.contains("is_noise") || je.contains("is_burst")) {
        e.is_noise = je.value("is_noise", false);
        e.is_burst = je.value("is_burst", false);
        e.has_provenance = true;
      }
      if (e.dwell_seconds < 0.0) {
        throw ValidationError("negative dwell_seconds for user " + h.user_id + " on " +
                              e.article_id);
      }
      if (!corpus.has_article(e.article_id)) {
        throw ValidationError("referential integrity: user " + h.user_id +
                              " clicks unknown article " + e.article_id);
      }
      h.events.push_back(std::move(e));
    }
    if (j.contains("ground_truth_topics")) {
      std::set<int> topics;
      for (const auto& t : j.at("ground_truth_topics")) topics.insert(t.get<int>());
      h.ground_truth_topics = std::move(topics);
    }
    std::stable_sort(h.events.begin(), h.events.end(),
                     [](const ClickEvent& a, const ClickEvent& b) {
                       return a.click_time < b.click_time;
                     });
    corpus.histories.push_back(std::move(h));
  }

  std::map<std::string, std::set<std::string>> clicked_by_user;
  for (const auto& h : corpus.histories) {
    auto& s = clicked_by_user[h.user_id];
    for (const auto& e : h.events) s.insert(e.article_id);
  }

  lineno = 0;
  for (const auto& line : detail::read_lines(impressions_path)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = detail::parse_line(line, lineno, "impressions.jsonl");
    ImpressionLog imp;
    imp.user_id = detail::field<std::string>(j, "user_id", lineno, "impressions.jsonl");
    for (const auto& je : detail::field<nlohmann::json>(j, "exposed", lineno, "impressions.jsonl")) {
      Exposure x;
      x.article_id = detail::field<std::string>(je, "article_id", lineno, "impressions.jsonl");
      x.clicked = detail::field<bool>(je, "clicked", lineno, "impressions.jsonl");
      x.exposure_time = detail::field<std::int64_t>(je, "exposure_time", lineno, "impressions.jsonl");
      if (!corpus.has_article(x.article_id)) {
        throw ValidationError("referential integrity: impression on unknown article " +
                              x.article_id);
      }
      if (x.clicked) {
        auto it = clicked_by_user.find(imp.user_id);
        if (it == clicked_by_user.end() || it->second.count(x.article_id) == 0) {
          throw ValidationError("impression marks " + x.article_id + " clicked but user " +
                                imp.user_id + " has no matching click event");
        }
      }
      imp.exposed.push_back(std::move(x));
    }
    corpus.impressions.push_back(std::move(imp));
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "articles.jsonl");
    if (!out) throw IoError("cannot write " + (dir / "articles.jsonl").string());
    for (const auto& a : corpus.articles) {
      nlohmann::json j{{"article_id", a.article_id},
                       {"headline", join_tokens(a.headline)},
                       {"body", join_tokens(a.body)},
                       {"topic_id", a.topic_id},
                       {"publish_time", a.publish_time}};
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "histories.jsonl");
    if (!out) throw IoError("cannot write " + (dir / "histories.jsonl").string());
    for (const auto& h : corpus.histories) {
      nlohmann::json events = nlohmann::json::array();
      for (const auto& e : h.events) {
        nlohmann::json je{{"article_id", e.article_id},
                          {"dwell_seconds", e.dwell_seconds},
                          {"click_time", e.click_time}};
        if (e.has_provenance) {
          je["is_noise"] = e.is_noise;
          je["is_burst"] = e.is_burst;
        }
        events.push_back(std::move(je));
      }
      nlohmann::json j{{"user_id", h.user_id}, {"events", std::move(events)}};
      if (h.ground_truth_topics) {
        j["ground_truth_topics"] = *h.ground_truth_topics;
      }
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "impressions.jsonl");
    if (!out) throw IoError("cannot write " + (dir / "impressions.jsonl").string());
    for (const auto& imp : corpus.impressions) {
      nlohmann::json exposed = nlohmann::json::array();
      for (const auto& x : imp.exposed) {
        exposed.push_back(nlohmann::json{{"article_id", x.article_id},
                                         {"clicked", x.clicked},
                                         {"exposure_time", x.exposure_time}});
      }
      out << nlohmann::json{{"user_id", imp.user_id}, {"exposed", std::move(exposed)}}.dump()
          << '\n';
    }
  }
}

// ---- click-through rates -------------------------------------------------------

// CTR = clicks / exposures per article; articles with zero exposures get 0.
inline std::map<std::string, double> compute_ctr(const std::vector<NewsArticle>& articles,
                                                 const std::vector<ImpressionLog>& impressions) {
  std::map<std::string, double> ctr;
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> counts;  // clicks, exposures
  for (const auto& a : articles) counts[a.article_id] = {0, 0};
  for (const auto& imp : impressions) {
    for (const auto& x : imp.exposed) {
      auto it = counts.find(x.article_id);
      if (it == counts.end()) continue;
      it->second.second += 1;
      if (x.clicked) it->second.first += 1;
    }
  }
  for (const auto& [id, c] : counts) {
    ctr[id] = c.second == 0 ? 0.0 : static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  return ctr;
}

// ---- synthetic generation -------------------------------------------------------

struct SynthConfig {
  int num_users = 100;
  int num_articles = 500;
  int num_topics = 10;
  int topics_per_user = 2;
  double short_dwell_noise_rate = 0.2808;
  int burst_article_count = 1;
  int clicks_per_user = 40;
  int unclicked_per_user = 20;
  // dwell model: genuine reads lognormal about the median, resampled into
  // [10, dwell_cap]; noise reads uniform below 10 s
  double interested_dwell_median = 120.0;
  double interested_dwell_sigma = 0.8;
  double dwell_cap = 3600.0;
  double noise_dwell_min = 1.0;
  double noise_dwell_max = 9.0;
  double burst_click_fraction = 0.6;
  int headline_tokens = 6;
  int body_tokens = 20;
  std::uint64_t random_seed = 1;
};

inline void validate(const SynthConfig& c) {
  if (c.num_users <= 0 || c.num_articles <= 0 || c.num_topics <= 0 || c.clicks_per_user <= 0) {
    throw ConfigError("synth: all counts must be positive");
  }
  if (c.topics_per_user <= 0 || c.topics_per_user > c.num_topics) {
    throw ConfigError("synth: topics_per_user must be in [1, num_topics]");
  }
  if (c.short_dwell_noise_rate < 0.0 || c.short_dwell_noise_rate > 1.0) {
    throw ConfigError("synth: short_dwell_noise_rate must be in [0,1]");
  }
  if (c.burst_article_count < 0 || c.burst_article_count >= c.num_articles) {
    throw ConfigError("synth: burst_article_count must be in [0, num_articles)");
  }
  if (!(c.noise_dwell_min >= 0.0 && c.noise_dwell_max < 10.0 &&
        c.noise_dwell_min <= c.noise_dwell_max)) {
    throw ConfigError("synth: noise dwell range must sit inside [0, 10)");
  }
}

namespace detail {

inline constexpr std::int64_t kSynthEpoch = 1600000000;  // fixed base timestamp
inline constexpr std::int64_t kClickSpanSeconds = 30LL * 86400;
inline constexpr int kTopicWords = 4;
inline constexpr int kFillerWords = 40;
inline constexpr int kBurstWords = 6;

inline std::string topic_word(int topic, int j) {
  return "topic" + std::to_string(topic) + "w" + std::to_string(j);
}
inline std::string filler_word(int j) { return "common" + std::to_string(j); }
inline std::string burst_word(int j) { return "breaking" + std::to_string(j); }

inline double interested_dwell(const SynthConfig& cfg, Rng& rng) {
  // resample until inside [10, cap]; keeps noise labels exact
  for (;;) {
    const double d = rng.lognormal(cfg.interested_dwell_median, cfg.interested_dwell_sigma);
    if (d >= 10.0 && d <= cfg.dwell_cap) return d;
  }
}

inline std::vector<std::string> sample_tokens(const std::vector<std::string>& topical,
                                              std::size_t topical_count,
                                              std::size_t filler_count, Rng& rng) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < topical_count; ++i) {
    out.push_back(topical[rng.integer(topical.size())]);
  }
  for (std::size_t i = 0; i < filler_count; ++i) {
    out.push_back(filler_word(static_cast<int>(rng.integer(kFillerWords))));
  }
  rng.shuffle(out);
  return out;
}

}  // namespace detail

// Generates a corpus with planted per-user interests, short-dwell noise at the
// configured rate, and burst articles clicked by a majority of users. Pure
// function of the config (seed included).
inline Corpus synth_generate(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(derive_seed(cfg.random_seed, 0xC0FFEE));
  Corpus corpus;

  const int id_width = 5;
  std::set<std::string> burst_ids;

  // articles; the first burst_article_count ids are burst articles whose text
  // mixes a dedicated keyword pool in, so breaking-ness is content-detectable
  for (int i = 0; i < cfg.num_articles; ++i) {
    NewsArticle a;
    a.article_id = zpad("a", static_cast<std::size_t>(i), id_width);
    a.topic_id = i % cfg.num_topics;
    a.publish_time = detail::kSynthEpoch + i;
    std::vector<std::string> pool;
    const bool burst = i < cfg.burst_article_count;
    if (burst) {
      burst_ids.insert(a.article_id);
      for (int j = 0; j < detail::kBurstWords; ++j) pool.push_back(detail::burst_word(j));
    } else {
      for (int j = 0; j < detail::kTopicWords; ++j) pool.push_back(detail::topic_word(a.topic_id, j));
    }
    const std::size_t h_topical = static_cast<std::size_t>(cfg.headline_tokens + 1) / 2;
    a.headline = detail::sample_tokens(pool, h_topical,
                                       static_cast<std::size_t>(cfg.headline_tokens) - h_topical,
                                       rng);
    // body embeds the headline so copy targets are always present
    const std::size_t extra = static_cast<std::size_t>(
        std::max(0, cfg.body_tokens - cfg.headline_tokens));
    a.body = a.headline;
    const auto tail = detail::sample_tokens(pool, extra / 2, extra - extra / 2, rng);
    a.body.insert(a.body.end(), tail.begin(), tail.end());
    corpus.articles.push_back(std::move(a));
  }
  corpus.reindex();

  // per-topic pools of regular article indices
  std::vector<std::vector<std::size_t>> by_topic(static_cast<std::size_t>(cfg.num_topics));
  for (std::size_t i = 0; i < corpus.articles.size(); ++i) {
    if (burst_ids.count(corpus.articles[i].article_id)) continue;
    by_topic[static_cast<std::size_t>(corpus.articles[i].topic_id)].push_back(i);
  }
  for (int t = 0; t < cfg.num_topics; ++t) {
    if (by_topic[static_cast<std::size_t>(t)].empty()) {
      throw ConfigError("synth: topic " + std::to_string(t) + " has no regular articles");
    }
  }

  const std::int64_t click_lo = detail::kSynthEpoch + cfg.num_articles + 1;
  const std::int64_t click_hi = click_lo + detail::kClickSpanSeconds;

  for (int u = 0; u < cfg.num_users; ++u) {
    UserHistory h;
    h.user_id = zpad("u", static_cast<std::size_t>(u), 4);
    const auto topic_pick = rng.sample_without_replacement(
        static_cast<std::size_t>(cfg.num_topics), static_cast<std::size_t>(cfg.topics_per_user));
    std::set<int> topics(topic_pick.begin(), topic_pick.end());
    std::vector<int> topic_list(topics.begin(), topics.end());
    h.ground_truth_topics = topics;

    for (int i = 0; i < cfg.clicks_per_user; ++i) {
      ClickEvent e;
      e.has_provenance = true;
      e.click_time = click_lo + static_cast<std::int64_t>(rng.integer(
                                    static_cast<std::uint64_t>(click_hi - click_lo)));
      if (rng.bernoulli(cfg.short_dwell_noise_rate)) {
        const std::size_t ai = rng.integer(corpus.articles.size());
        e.article_id = corpus.articles[ai].article_id;
        e.dwell_seconds = rng.uniform(cfg.noise_dwell_min, cfg.noise_dwell_max);
        e.is_noise = true;
        e.is_burst = burst_ids.count(e.article_id) > 0;
      } else {
        const int topic = topic_list[rng.integer(topic_list.size())];
        const auto& pool = by_topic[static_cast<std::size_t>(topic)];
        e.article_id = corpus.articles[pool[rng.integer(pool.size())]].article_id;
        e.dwell_seconds = detail::interested_dwell(cfg, rng);
      }
      h.events.push_back(std::move(e));
    }
    corpus.histories.push_back(std::move(h));
  }

  // burst articles: a majority of users click them inside a short surge window
  for (const auto& burst_id : burst_ids) {
    auto users = rng.sample_without_replacement(
        static_cast<std::size_t>(cfg.num_users),
        static_cast<std::size_t>(std::ceil(cfg.burst_click_fraction * cfg.num_users)));
    std::sort(users.begin(), users.end());
    for (std::size_t ui : users) {
      ClickEvent e;
      e.article_id = burst_id;
      e.has_provenance = true;
      e.is_burst = true;
      e.dwell_seconds = detail::interested_dwell(cfg, rng);
      e.click_time = click_hi - static_cast<std::int64_t>(rng.integer(2 * 86400));
      corpus.histories[ui].events.push_back(std::move(e));
    }
  }

  for (auto& h : corpus.histories) {
    std::stable_sort(h.events.begin(), h.events.end(),
                     [](const ClickEvent& a, const ClickEvent& b) {
                       return a.click_time < b.click_time;
                     });
  }

  // impressions: every click is an exposure; plus unclicked exposures
  for (auto& h : corpus.histories) {
    ImpressionLog imp;
    imp.user_id = h.user_id;
    std::set<std::string> clicked;
    for (const auto& e : h.events) {
      imp.exposed.push_back({e.article_id, true, e.click_time});
      clicked.insert(e.article_id);
    }
    int added = 0;
    while (added < cfg.unclicked_per_user && clicked.size() < corpus.articles.size()) {
      const std::size_t ai = rng.integer(corpus.articles.size());
      const auto& id = corpus.articles[ai].article_id;
      if (clicked.count(id)) continue;
      clicked.insert(id);  // at most one unclicked exposure per article per user
      imp.exposed.push_back({id, false,
                             click_lo + static_cast<std::int64_t>(rng.integer(
                                            static_cast<std::uint64_t>(click_hi - click_lo)))});
      ++added;
    }
    corpus.impressions.push_back(std::move(imp));
  }

  return corpus;
}

// burst article ids recovered from provenance flags
inline std::set<std::string> planted_burst_articles(const Corpus& corpus) {
  std::set<std::string> out;
  for (const auto& h : corpus.histories) {
    for (const auto& e : h.events) {
      if (e.has_provenance && e.is_burst) out.insert(e.article_id);
    }
  }
  return out;
}

}  // namespace headliner
