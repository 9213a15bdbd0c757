#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "headliner/denoise.hpp"
#include "test_helpers.hpp"

using namespace headliner;

TEST_CASE("breaking set size follows ceil(M/100 * N)") {
  SynthConfig cfg;
  cfg.num_users = 40;
  cfg.num_articles = 1000;
  cfg.num_topics = 10;
  cfg.clicks_per_user = 20;
  cfg.random_seed = 5;
  const Corpus c = synth_generate(cfg);
  CHECK(build_breaking_set(c, 0.1).article_ids.size() == 1);
  CHECK(build_breaking_set(c, 1.0).article_ids.size() == 10);
  CHECK(build_breaking_set(c, 100.0).article_ids.size() == 1000);
}

TEST_CASE("ties break toward the smallest article id") {
  // all CTRs equal: every article exposed once, clicked once
  Corpus c = testing::tiny_corpus({20.0}, 1000);
  auto& h = c.histories[0];
  auto& imp = c.impressions[0];
  h.events.clear();
  imp.exposed.clear();
  for (const auto& a : c.articles) {
    ClickEvent e;
    e.article_id = a.article_id;
    e.dwell_seconds = 60.0;
    e.click_time = 1600001000;
    h.events.push_back(e);
    imp.exposed.push_back({a.article_id, true, e.click_time});
  }
  const auto b = build_breaking_set(c, 0.1);
  REQUIRE(b.article_ids.size() == 1);
  CHECK(*b.article_ids.begin() == "a00000");
}

TEST_CASE("breaking set is monotone in M") {
  SynthConfig cfg;
  cfg.num_users = 50;
  cfg.num_articles = 200;
  cfg.num_topics = 10;
  cfg.random_seed = 13;
  const Corpus c = synth_generate(cfg);
  const auto small = build_breaking_set(c, 0.5);
  const auto mid = build_breaking_set(c, 2.0);
  const auto large = build_breaking_set(c, 10.0);
  for (const auto& id : small.article_ids) CHECK(mid.contains(id));
  for (const auto& id : mid.article_ids) CHECK(large.contains(id));
}

TEST_CASE("empty corpus cannot produce a breaking set") {
  Corpus c;
  CHECK_THROWS_AS(build_breaking_set(c, 0.1), ValidationError);
}

TEST_CASE("planted burst article is recovered at M=0.1") {
  SynthConfig cfg;
  cfg.num_users = 1000;
  cfg.num_articles = 1000;
  cfg.num_topics = 10;
  cfg.clicks_per_user = 30;
  cfg.burst_article_count = 1;
  cfg.random_seed = 17;
  const Corpus c = synth_generate(cfg);
  const auto b = build_breaking_set(c, 0.1);
  REQUIRE(b.article_ids.size() == 1);
  CHECK(b.article_ids == planted_burst_articles(c));
}

TEST_CASE("news-level filter masks dwell but preserves order and length") {
  const Corpus c = testing::tiny_corpus(testing::case_study_dwells());
  const auto& h = c.histories[0];

  SECTION("empty breaking set is the identity on dwells") {
    BreakingSet none;
    const auto f = news_level_filter(c, h, none);
    REQUIRE(f.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(f.dwells[i] == testing::case_study_dwells()[i]);
    }
  }

  SECTION("all articles breaking zeroes every dwell, length unchanged") {
    BreakingSet all;
    for (const auto& a : c.articles) all.article_ids.insert(a.article_id);
    const auto f = news_level_filter(c, h, all);
    REQUIRE(f.size() == 7);
    for (double d : f.dwells) CHECK(d == 0.0);
  }

  SECTION("exactly one breaking article masks only that position") {
    BreakingSet one;
    one.article_ids.insert(h.events[2].article_id);
    const auto f = news_level_filter(c, h, one);
    for (std::size_t i = 0; i < 7; ++i) {
      const bool masked = h.events[i].article_id == *one.article_ids.begin();
      CHECK(f.dwells[i] == (masked ? 0.0 : testing::case_study_dwells()[i]));
    }
  }

  SECTION("masked positions are exactly the breaking positions; filter idempotent") {
    SynthConfig cfg;
    cfg.num_users = 20;
    cfg.num_articles = 60;
    cfg.num_topics = 6;
    cfg.burst_article_count = 3;
    cfg.random_seed = 29;
    const Corpus sc = synth_generate(cfg);
    const auto b = build_breaking_set(sc, 5.0);
    for (const auto& uh : sc.histories) {
      const auto f = news_level_filter(sc, uh, b);
      REQUIRE(f.size() == uh.events.size());
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (b.contains(uh.events[i].article_id)) {
          CHECK(f.dwells[i] == 0.0);
        } else {
          CHECK(f.dwells[i] == uh.events[i].dwell_seconds);
        }
      }
      // idempotence: rebuilding a history from the filtered dwells and
      // filtering again changes nothing
      UserHistory again = uh;
      for (std::size_t i = 0; i < f.size(); ++i) again.events[i].dwell_seconds = f.dwells[i];
      const auto f2 = news_level_filter(sc, again, b);
      CHECK(f2.dwells == f.dwells);
    }
  }

  SECTION("hard drop removes breaking events instead of masking") {
    BreakingSet one;
    one.article_ids.insert(h.events[2].article_id);
    const auto f = news_level_filter(c, h, one, /*hard_drop=*/true);
    CHECK(f.size() == 6);
    CHECK(f.original_length == 7);
  }
}

TEST_CASE("rule-based filter keeps the long-dwell non-breaking subsequence") {
  const Corpus c = testing::tiny_corpus(testing::case_study_dwells());
  const auto& h = c.histories[0];

  SECTION("min_dwell 0 with empty breaking set is the identity") {
    const auto out = rule_based_filter(h, 0.0, BreakingSet{});
    REQUIRE(out.events.size() == h.events.size());
    for (std::size_t i = 0; i < h.events.size(); ++i) {
      CHECK(out.events[i].article_id == h.events[i].article_id);
    }
  }

  SECTION("dwell threshold 10 keeps events 1,2,5,7 of the case-study history") {
    const auto out = rule_based_filter(h, 10.0, BreakingSet{});
    REQUIRE(out.events.size() == 4);
    CHECK(out.events[0].dwell_seconds == 366.0);
    CHECK(out.events[1].dwell_seconds == 115.0);
    CHECK(out.events[2].dwell_seconds == 249.0);
    CHECK(out.events[3].dwell_seconds == 486.0);
  }

  SECTION("output is always a subsequence of the input") {
    SynthConfig cfg;
    cfg.num_users = 15;
    cfg.num_articles = 40;
    cfg.num_topics = 4;
    cfg.random_seed = 37;
    const Corpus sc = synth_generate(cfg);
    const auto b = build_breaking_set(sc, 2.0);
    for (const auto& uh : sc.histories) {
      const auto out = rule_based_filter(uh, 10.0, b);
      std::size_t j = 0;
      for (const auto& e : uh.events) {
        if (j < out.events.size() && out.events[j].article_id == e.article_id &&
            out.events[j].click_time == e.click_time) {
          ++j;
        }
      }
      CHECK(j == out.events.size());
    }
  }
}

TEST_CASE("rule-based filter recovers planted genuine clicks") {
  SynthConfig cfg;
  cfg.num_users = 200;
  cfg.num_articles = 400;
  cfg.num_topics = 10;
  cfg.clicks_per_user = 30;
  cfg.burst_article_count = 1;
  cfg.short_dwell_noise_rate = 0.2808;
  cfg.random_seed = 41;
  const Corpus c = synth_generate(cfg);
  const auto b = build_breaking_set(c, 0.1);

  std::size_t kept_good = 0, kept_total = 0, good_total = 0;
  for (const auto& h : c.histories) {
    const auto out = rule_based_filter(h, 10.0, b);
    kept_total += out.events.size();
    for (const auto& e : h.events) {
      if (!e.is_noise && !e.is_burst) ++good_total;
    }
    for (const auto& e : out.events) {
      if (!e.is_noise && !e.is_burst) ++kept_good;
    }
  }
  const double precision = static_cast<double>(kept_good) / static_cast<double>(kept_total);
  const double recall = static_cast<double>(kept_good) / static_cast<double>(good_total);
  CHECK(precision >= 0.9);
  CHECK(recall >= 0.9);
}

TEST_CASE("outlier capping flags only dwells above the cap") {
  const Corpus c = testing::tiny_corpus(testing::case_study_dwells());

  SECTION("no case-study dwell exceeds 3000 s") {
    const auto h = cap_outliers(c.histories[0], 3000.0);
    for (const auto& e : h.events) CHECK_FALSE(e.dwell_outlier);
    // mean over the non-flagged dwells is unchanged
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& e : h.events) {
      if (!e.dwell_outlier) {
        sum += e.dwell_seconds;
        ++n;
      }
    }
    CHECK(sum / static_cast<double>(n) == Catch::Approx(1231.0 / 7.0).epsilon(1e-12));
  }

  SECTION("a 5000 s dwell gets flagged and stays in the sequence") {
    auto mod = c.histories[0];
    mod.events[3].dwell_seconds = 5000.0;
    const auto h = cap_outliers(mod, 3000.0);
    CHECK(h.events.size() == mod.events.size());
    for (std::size_t i = 0; i < h.events.size(); ++i) {
      CHECK(h.events[i].dwell_outlier == (i == 3));
    }
  }
}
