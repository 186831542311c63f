#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "star/error.hpp"
#include "star/uttfilter.hpp"
#include "test_util.hpp"

using namespace star;

namespace {

HypothesisSet make_set(const std::vector<int>& base,
                       const std::vector<std::vector<int>>& alts,
                       bool truncated = false) {
  HypothesisSet hs;
  hs.base.prompt_len = 1;
  hs.base.truncated = truncated;
  hs.base.tokens = {0};
  hs.base.tokens.insert(hs.base.tokens.end(), base.begin(), base.end());
  if (!truncated) hs.base.tokens.push_back(1);
  hs.alts = alts;
  return hs;
}

}  // namespace

TEST_CASE("identical hypotheses have zero uncertainty") {
  HypothesisSet hs = make_set({3, 4, 5}, {{3, 4, 5}, {3, 4, 5}});
  CHECK(utterance_uncertainty(hs) == 0.0);
  CHECK(dedup_factor(hs) == 1);
  UtteranceQuality q = assess_quality("u0", hs);
  CHECK(q.score == 0.0);
}

TEST_CASE("uncertainty is the mean normalized edit distance") {
  // base {3,4,5}; alts: identical (0), one substitution (1/3)
  HypothesisSet hs = make_set({3, 4, 5}, {{3, 4, 5}, {3, 9, 5}});
  CHECK(utterance_uncertainty(hs) ==
        doctest::Approx((0.0 + 1.0 / 3.0) / 2.0).epsilon(1e-12));
  // raw distances instead
  CHECK(utterance_uncertainty(hs, false) == doctest::Approx(0.5));
  // normalization uses the longer side
  HypothesisSet longer = make_set({3}, {{3, 4, 5, 6}});
  CHECK(utterance_uncertainty(longer) == doctest::Approx(3.0 / 4.0));
  // bounded by 1 for nonempty sequences
  HypothesisSet disjoint = make_set({3, 4}, {{5, 6, 7}});
  CHECK(utterance_uncertainty(disjoint) <= 1.0);
  CHECK_THROWS_AS(utterance_uncertainty(make_set({3}, {})), InputError);
}

TEST_CASE("truncated base decode gets infinite uncertainty") {
  HypothesisSet hs = make_set({3, 4}, {{3, 4}}, true);
  CHECK(std::isinf(utterance_uncertainty(hs)));
}

TEST_CASE("dedup counts distinct alternative hypotheses") {
  HypothesisSet hs =
      make_set({3}, {{3}, {4}, {3}, {4, 5}, {4}});
  CHECK(dedup_factor(hs) == 3);
  UtteranceQuality q = assess_quality("u1", hs);
  CHECK(q.dedup == 3);
  CHECK(q.score == doctest::Approx(3.0 * q.uncertainty));
}

TEST_CASE("rank_and_filter drops the noisiest ceil(alpha% N)") {
  auto make_q = [](const std::string& id, double score) {
    UtteranceQuality q;
    q.utterance_id = id;
    q.uncertainty = score;
    q.dedup = 1;
    q.score = score;
    return q;
  };
  std::vector<UtteranceQuality> qs;
  for (int i = 0; i < 10; ++i)
    qs.push_back(make_q("u" + std::to_string(i), static_cast<double>(i)));
  std::set<std::string> kept = rank_and_filter(qs, 20.0);
  // scores 0..9: the two highest (u9, u8) go
  CHECK(kept.size() == 8);
  CHECK_FALSE(kept.count("u9"));
  CHECK_FALSE(kept.count("u8"));
  for (const UtteranceQuality& q : qs) {
    CHECK(q.rank >= 0);
    CHECK(q.kept == (kept.count(q.utterance_id) > 0));
  }

  // ceil: 25% of 10 drops 3
  std::vector<UtteranceQuality> qs2 = qs;
  CHECK(rank_and_filter(qs2, 25.0).size() == 7);

  // alpha 0 keeps everything finite
  std::vector<UtteranceQuality> qs3 = qs;
  CHECK(rank_and_filter(qs3, 0.0).size() == 10);

  CHECK_THROWS_AS(rank_and_filter(qs3, 100.0), ConfigError);
  CHECK_THROWS_AS(rank_and_filter(qs3, -1.0), ConfigError);
}

TEST_CASE("filter tie break is by id and order is permutation invariant") {
  auto make_q = [](const std::string& id, double score) {
    UtteranceQuality q;
    q.utterance_id = id;
    q.score = score;
    q.uncertainty = score;
    return q;
  };
  std::vector<UtteranceQuality> qs{make_q("b", 1.0), make_q("a", 1.0),
                                   make_q("c", 1.0), make_q("d", 0.0)};
  std::set<std::string> kept = rank_and_filter(qs, 30.0);  // drop 2
  // ties broken by ascending id: a then b are dropped
  CHECK(kept == std::set<std::string>{"c", "d"});

  std::vector<UtteranceQuality> rev(qs.rbegin(), qs.rend());
  CHECK(rank_and_filter(rev, 30.0) == kept);
}

TEST_CASE("truncated utterances are dropped even below the alpha cut") {
  UtteranceQuality fin;
  fin.utterance_id = "ok";
  fin.score = 5.0;
  fin.uncertainty = 5.0;
  UtteranceQuality inf;
  inf.utterance_id = "bad";
  inf.uncertainty = std::numeric_limits<double>::infinity();
  inf.score = std::numeric_limits<double>::infinity();
  std::vector<UtteranceQuality> qs{fin, inf};
  std::set<std::string> kept = rank_and_filter(qs, 0.0);
  CHECK(kept == std::set<std::string>{"ok"});
}

TEST_CASE("hypothesis generators on a trained model") {
  Corpus corpus = testutil::tiny_corpus(4, 3, 5, 11);
  Model model = testutil::overfit_model(corpus);
  const Utterance& u = corpus.utterances[0];

  HypothesisSet g = gaussian_hypotheses(model, u, 3, 0.0, 7);
  CHECK(g.origin == HypothesisOrigin::gaussian);
  CHECK(g.alts.size() == 3);
  CHECK(utterance_uncertainty(g) == 0.0);

  HypothesisSet b = beam_hypotheses(model, u, 3);
  CHECK(b.origin == HypothesisOrigin::beam);
  CHECK(b.alts.size() <= 3);
  REQUIRE(!b.alts.empty());
  // best alt is the base decode itself
  CHECK(b.alts.front() == b.base.content_tokens());
  CHECK_THROWS_AS(beam_hypotheses(model, u, 1), ConfigError);

  HypothesisSet c = consensus_hypotheses(model, u, 3);
  CHECK(c.origin == HypothesisOrigin::consensus);
  // on an overfit model the vote agrees with the reference
  CHECK(c.base.content_tokens() == *u.reference);
  CHECK_THROWS_AS(consensus_hypotheses(model, u, 1), ConfigError);
}

TEST_CASE("filter report format") {
  UtteranceQuality q;
  q.utterance_id = "src-0";
  q.uncertainty = 0.25;
  q.dedup = 2;
  q.score = 0.5;
  q.kept = false;
  std::string path = "/tmp/star_test_filter.csv";
  save_filter_report({q}, HypothesisOrigin::gaussian, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "id,U,l,score,kept,origin");
  CHECK(row == "src-0,0.25,2,0.5,0,gaussian");
  std::remove(path.c_str());
}
