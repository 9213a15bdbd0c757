#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "headliner/corpus.hpp"
#include "test_helpers.hpp"

using namespace headliner;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("headliner_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("empty corpus files load without error") {
  auto dir = temp_dir("empty");
  std::ofstream(dir / "articles.jsonl");
  std::ofstream(dir / "histories.jsonl");
  std::ofstream(dir / "impressions.jsonl");
  const Corpus c = load_corpus(dir);
  CHECK(c.articles.empty());
  CHECK(c.histories.empty());
  CHECK(c.impressions.empty());
}

TEST_CASE("negative dwell is a validation error") {
  auto dir = temp_dir("negdwell");
  auto c = testing::tiny_corpus({5.0});
  c.histories[0].events[0].dwell_seconds = -1.0;
  save_corpus(c, dir);
  CHECK_THROWS_AS(load_corpus(dir), ValidationError);
}

TEST_CASE("malformed record reports the line number") {
  auto dir = temp_dir("badline");
  save_corpus(testing::tiny_corpus({5.0, 7.0}), dir);
  std::ofstream(dir / "articles.jsonl", std::ios::app) << "{not json\n";
  try {
    load_corpus(dir);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("dangling article reference is a referential-integrity error") {
  auto dir = temp_dir("dangling");
  auto c = testing::tiny_corpus({5.0});
  save_corpus(c, dir);
  std::ofstream(dir / "histories.jsonl", std::ios::app)
      << R"({"user_id":"u0001","events":[{"article_id":"zzz","dwell_seconds":2.0,"click_time":1600000000}]})"
      << "\n";
  CHECK_THROWS_AS(load_corpus(dir), ValidationError);
}

TEST_CASE("save then load is the identity on valid corpora") {
  SynthConfig cfg;
  cfg.num_users = 12;
  cfg.num_articles = 30;
  cfg.num_topics = 5;
  cfg.clicks_per_user = 15;
  cfg.unclicked_per_user = 5;
  cfg.random_seed = 42;
  const Corpus c = synth_generate(cfg);

  auto d1 = temp_dir("rt1");
  auto d2 = temp_dir("rt2");
  save_corpus(c, d1);
  const Corpus back = load_corpus(d1);
  save_corpus(back, d2);
  for (const char* f : {"articles.jsonl", "histories.jsonl", "impressions.jsonl"}) {
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  REQUIRE(back.histories.size() == c.histories.size());
  CHECK(back.histories[3].events.size() == c.histories[3].events.size());
  CHECK(back.histories[3].ground_truth_topics == c.histories[3].ground_truth_topics);
}

TEST_CASE("synth generation is a pure function of the config") {
  SynthConfig cfg;
  cfg.num_users = 10;
  cfg.num_articles = 25;
  cfg.num_topics = 5;
  cfg.clicks_per_user = 12;
  cfg.random_seed = 7;
  auto d1 = temp_dir("det1");
  auto d2 = temp_dir("det2");
  save_corpus(synth_generate(cfg), d1);
  save_corpus(synth_generate(cfg), d2);
  for (const char* f : {"articles.jsonl", "histories.jsonl", "impressions.jsonl"}) {
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
}

TEST_CASE("zero noise rate means every click dwells at least 10 s") {
  SynthConfig cfg;
  cfg.num_users = 20;
  cfg.num_articles = 40;
  cfg.num_topics = 4;
  cfg.clicks_per_user = 20;
  cfg.short_dwell_noise_rate = 0.0;
  cfg.random_seed = 3;
  const Corpus c = synth_generate(cfg);
  for (const auto& h : c.histories) {
    for (const auto& e : h.events) CHECK(e.dwell_seconds >= 10.0);
  }
}

TEST_CASE("planted short-dwell fraction concentrates near the configured rate") {
  SynthConfig cfg;
  cfg.num_users = 250;
  cfg.num_articles = 200;
  cfg.num_topics = 10;
  cfg.clicks_per_user = 40;  // 10,000 clicks total
  cfg.burst_article_count = 0;
  cfg.short_dwell_noise_rate = 0.2808;
  cfg.random_seed = 11;
  const Corpus c = synth_generate(cfg);
  std::size_t total = 0, shortd = 0;
  for (const auto& h : c.histories) {
    for (const auto& e : h.events) {
      ++total;
      if (e.dwell_seconds < 10.0) ++shortd;
    }
  }
  CHECK(total == 10000);
  const double frac = static_cast<double>(shortd) / static_cast<double>(total);
  CHECK(frac == Catch::Approx(0.2808).margin(0.02));
}

TEST_CASE("noise provenance flags match the dwell and burst definition exactly") {
  SynthConfig cfg;
  cfg.num_users = 30;
  cfg.num_articles = 50;
  cfg.num_topics = 5;
  cfg.clicks_per_user = 25;
  cfg.burst_article_count = 2;
  cfg.random_seed = 19;
  const Corpus c = synth_generate(cfg);
  const auto burst = planted_burst_articles(c);
  CHECK(burst.size() == 2);
  for (const auto& h : c.histories) {
    for (const auto& e : h.events) {
      REQUIRE(e.has_provenance);
      const bool is_noise_click = e.is_noise || e.is_burst;
      const bool short_or_burst = e.dwell_seconds < 10.0 || burst.count(e.article_id) > 0;
      CHECK(is_noise_click == short_or_burst);
      CHECK(e.is_noise == (e.dwell_seconds < 10.0));
    }
  }
}

TEST_CASE("histories come out chronologically sorted") {
  SynthConfig cfg;
  cfg.num_users = 8;
  cfg.num_articles = 30;
  cfg.num_topics = 3;
  cfg.random_seed = 23;
  const Corpus c = synth_generate(cfg);
  for (const auto& h : c.histories) {
    for (std::size_t i = 1; i < h.events.size(); ++i) {
      CHECK(h.events[i - 1].click_time <= h.events[i].click_time);
    }
  }
}

TEST_CASE("topics_per_user beyond the topic count is a config error") {
  SynthConfig cfg;
  cfg.num_topics = 3;
  cfg.topics_per_user = 4;
  CHECK_THROWS_AS(synth_generate(cfg), ConfigError);
}

TEST_CASE("compute_ctr follows the clicks-over-exposures definition") {
  Corpus c = testing::tiny_corpus({20.0}, 2);
  // a00000: exposed 10x, clicked 3x (2 extra clicks from new events)
  auto& imp = c.impressions[0];
  auto& h = c.histories[0];
  for (int i = 0; i < 2; ++i) {
    ClickEvent e;
    e.article_id = "a00000";
    e.dwell_seconds = 30.0;
    e.click_time = 1600000100 + i;
    h.events.push_back(e);
    imp.exposed.push_back({"a00000", true, e.click_time});
  }
  for (int i = 0; i < 7; ++i) imp.exposed.push_back({"a00000", false, 1600000200 + i});
  const auto ctr = compute_ctr(c.articles, c.impressions);
  CHECK(ctr.at("a00000") == Catch::Approx(0.3));
  // a00001 never exposed
  CHECK(ctr.at("a00001") == 0.0);
}

TEST_CASE("planted burst article tops the CTR ranking") {
  SynthConfig cfg;
  cfg.num_users = 120;
  cfg.num_articles = 100;
  cfg.num_topics = 10;
  cfg.clicks_per_user = 30;
  cfg.burst_article_count = 1;
  cfg.random_seed = 31;
  const Corpus c = synth_generate(cfg);
  const auto burst = planted_burst_articles(c);
  REQUIRE(burst.size() == 1);
  const std::string burst_id = *burst.begin();

  // oracle: recount clicks and exposures directly from the impression log
  std::map<std::string, std::pair<int, int>> counts;
  for (const auto& imp : c.impressions) {
    for (const auto& x : imp.exposed) {
      counts[x.article_id].second += 1;
      if (x.clicked) counts[x.article_id].first += 1;
    }
  }
  const auto ctr = compute_ctr(c.articles, c.impressions);
  double best = -1.0;
  std::string best_id;
  for (const auto& a : c.articles) {
    const auto it = counts.find(a.article_id);
    const double oracle =
        it == counts.end() || it->second.second == 0
            ? 0.0
            : static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
    CHECK(ctr.at(a.article_id) == Catch::Approx(oracle));
    if (oracle > best) {
      best = oracle;
      best_id = a.article_id;
    }
  }
  CHECK(best_id == burst_id);
}
