#include <algorithm>
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "star/decoding.hpp"
#include "star/error.hpp"
#include "test_util.hpp"

using namespace star;

namespace {

struct Fixture {
  Corpus corpus;
  Model model;
  Fixture()
      : corpus(testutil::tiny_corpus(4, 3, 5, 11)),
        model(testutil::overfit_model(corpus)) {}
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("greedy decode recovers references on an overfit model") {
  Fixture& f = fixture();
  for (const Utterance& u : f.corpus.utterances) {
    DecodeTrace t = greedy_decode(f.model, u);
    CHECK_FALSE(t.truncated);
    CHECK(t.content_tokens() == *u.reference);
    CHECK(t.tokens.front() == f.model.config.vocab.bos);
    CHECK(t.tokens.back() == f.model.config.vocab.eos);
  }
}

TEST_CASE("greedy trace internals are consistent") {
  Fixture& f = fixture();
  const Utterance& u = f.corpus.utterances[0];
  DecodeTrace t = greedy_decode(f.model, u);
  size_t steps = t.tokens.size() - static_cast<size_t>(t.prompt_len);
  REQUIRE(t.step_max_prob.size() == steps);
  REQUIRE(t.step_token_prob.size() == steps);
  double ll = 0.0;
  for (size_t s = 0; s < steps; ++s) {
    // greedy emits the argmax, so the emitted-token posterior is the max
    CHECK(t.step_token_prob[s] == doctest::Approx(t.step_max_prob[s]));
    CHECK(t.step_token_prob[s] > 0.0);
    CHECK(t.step_token_prob[s] <= 1.0);
    ll += std::log(t.step_token_prob[s]);
  }
  CHECK(t.log_likelihood == doctest::Approx(ll).epsilon(1e-9));
  double p = std::exp(t.log_likelihood);
  CHECK(p > 0.0);
  CHECK(p <= 1.0);
}

TEST_CASE("attention matrix is causal and row stochastic") {
  Fixture& f = fixture();
  DecodeTrace t = greedy_decode(f.model, f.corpus.utterances[1]);
  const Eigen::MatrixXd& w = t.attention;
  REQUIRE(w.rows() == t.length());
  REQUIRE(w.cols() == t.length());
  // fed-in rows sum to 1; masked entries are exact zeros
  long Lin = w.rows() - 1;  // eos row duplicates the last input row
  for (long i = 0; i < Lin; ++i) {
    CHECK(std::abs(w.row(i).sum() - 1.0) <= 1e-5);
    for (long j = i + 1; j < w.cols(); ++j) CHECK(w(i, j) == 0.0);
  }
  CHECK(std::abs(w.row(Lin).sum() - 1.0) <= 1e-5);
}

TEST_CASE("forced trace over the greedy tokens reproduces the greedy trace") {
  Fixture& f = fixture();
  const Utterance& u = f.corpus.utterances[2];
  DecodeTrace g = greedy_decode(f.model, u);
  DecodeTrace forced = forced_trace(f.model, u, g.tokens, g.truncated);
  CHECK(forced.tokens == g.tokens);
  CHECK(forced.log_likelihood == doctest::Approx(g.log_likelihood));
  for (size_t s = 0; s < g.step_token_prob.size(); ++s)
    CHECK(forced.step_token_prob[s] ==
          doctest::Approx(g.step_token_prob[s]).epsilon(1e-12));
  CHECK((forced.attention - g.attention).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("decode honors the length limit and flags truncation") {
  Fixture& f = fixture();
  const Utterance& u = f.corpus.utterances[0];
  REQUIRE(u.reference->size() >= 2);
  DecodeTrace t = greedy_decode(f.model, u, 2);  // prompt + one token
  CHECK(t.truncated);
  CHECK(t.length() == 2);
  CHECK(t.content_tokens().size() == 1);
}

TEST_CASE("beam with width 1 equals greedy") {
  Fixture& f = fixture();
  for (const Utterance& u : f.corpus.utterances) {
    DecodeTrace g = greedy_decode(f.model, u);
    BeamResult b = beam_decode(f.model, u, 1);
    REQUIRE(b.hypotheses.size() >= 1);
    CHECK(b.hypotheses.front().tokens == g.tokens);
    CHECK(b.hypotheses.front().log_likelihood ==
          doctest::Approx(g.log_likelihood).epsilon(1e-9));
    CHECK(b.best_trace.tokens == g.tokens);
  }
}

TEST_CASE("beam hypotheses are sorted by normalized log likelihood") {
  Fixture& f = fixture();
  const int P = f.model.config.vocab.prompt_len;
  BeamResult b = beam_decode(f.model, f.corpus.utterances[1], 5);
  CHECK(b.hypotheses.size() <= 5);
  auto norm = [P](const BeamHypothesis& h) {
    return h.log_likelihood /
           std::max<int>(static_cast<int>(h.tokens.size()) - P, 1);
  };
  for (size_t i = 1; i < b.hypotheses.size(); ++i)
    CHECK(norm(b.hypotheses[i - 1]) >= norm(b.hypotheses[i]) - 1e-12);
  CHECK(b.best_trace.tokens == b.hypotheses.front().tokens);
  CHECK_THROWS_AS(beam_decode(f.model, f.corpus.utterances[0], 0), ConfigError);
}

TEST_CASE("wide beam finds the exhaustive-search optimum") {
  // Untrained tiny model, hard length cap of 3 decoder positions past the
  // prompt: the search space is small enough to enumerate fully.
  ModelConfig cfg = testutil::tiny_model_config();
  cfg.init_seed = 77;
  Model model = init_model(cfg);
  Corpus corpus = testutil::tiny_corpus(1, 3, 3, 21);
  const Utterance& u = corpus.utterances[0];
  const Vocab& v = cfg.vocab;
  const int P = v.prompt_len;
  const int limit = 4;  // prompt + at most 3 emissions

  std::vector<int> regular;
  for (int r = 0; r < v.num_regular(); ++r) regular.push_back(v.regular_token(r));

  // enumerate every sequence the decoder can finish with under the cap
  std::vector<std::pair<std::vector<int>, bool>> all;  // tokens, truncated
  std::vector<int> prompt = prompt_tokens(cfg);
  {
    std::vector<int> seq = prompt;
    seq.push_back(v.eos);
    all.emplace_back(seq, false);
  }
  for (int a : regular) {
    std::vector<int> s1 = prompt;
    s1.push_back(a);
    std::vector<int> s1e = s1;
    s1e.push_back(v.eos);
    all.emplace_back(s1e, false);
    for (int b : regular) {
      std::vector<int> s2 = s1;
      s2.push_back(b);
      std::vector<int> s2e = s2;
      s2e.push_back(v.eos);
      all.emplace_back(s2e, false);
      for (int c : regular) {
        std::vector<int> s3 = s2;
        s3.push_back(c);
        all.emplace_back(s3, true);
      }
    }
  }

  double best_norm = -1e300;
  std::vector<int> best_tokens;
  for (const auto& [tokens, truncated] : all) {
    DecodeTrace t = forced_trace(model, u, tokens, truncated);
    double n = t.log_likelihood /
               std::max<int>(static_cast<int>(tokens.size()) - P, 1);
    if (n > best_norm) {
      best_norm = n;
      best_tokens = tokens;
    }
  }

  BeamResult b = beam_decode(model, u, 64, limit);
  CHECK(b.hypotheses.front().tokens == best_tokens);
  double got_norm =
      b.hypotheses.front().log_likelihood /
      std::max<int>(static_cast<int>(b.hypotheses.front().tokens.size()) - P,
                    1);
  CHECK(got_norm == doctest::Approx(best_norm).epsilon(1e-9));
}

TEST_CASE("perturbed decodes: zero rho collapses to the base hypothesis") {
  Fixture& f = fixture();
  const Utterance& u = f.corpus.utterances[0];
  HypothesisSet hs = perturbed_decodes(f.model, u, 3, 0.0, 5);
  CHECK(hs.alts.size() == 3);
  for (const auto& alt : hs.alts) CHECK(alt == hs.base.content_tokens());
}

TEST_CASE("perturbed decodes are deterministic per seed") {
  Fixture& f = fixture();
  const Utterance& u = f.corpus.utterances[1];
  HypothesisSet a = perturbed_decodes(f.model, u, 4, 0.3, 5);
  HypothesisSet b = perturbed_decodes(f.model, u, 4, 0.3, 5);
  CHECK(a.alts == b.alts);
  CHECK(a.base.tokens == b.base.tokens);
  // strong perturbation on a tiny model should shake at least one alt loose
  HypothesisSet big = perturbed_decodes(f.model, u, 8, 1.5, 5);
  bool diverged = false;
  for (const auto& alt : big.alts)
    if (alt != big.base.content_tokens()) diverged = true;
  CHECK(diverged);
}

TEST_CASE("trace dump round trip") {
  Fixture& f = fixture();
  std::vector<DecodeTrace> traces;
  std::vector<std::string> ids;
  for (const Utterance& u : f.corpus.utterances) {
    traces.push_back(greedy_decode(f.model, u));
    ids.push_back(u.id);
  }
  std::string path = "/tmp/star_test_traces.jsonl";
  save_traces(traces, ids, path);
  auto loaded = load_traces(path);
  REQUIRE(loaded.size() == traces.size());
  for (size_t i = 0; i < traces.size(); ++i) {
    CHECK(loaded[i].first == ids[i]);
    const DecodeTrace& a = traces[i];
    const DecodeTrace& b = loaded[i].second;
    CHECK(a.tokens == b.tokens);
    CHECK(a.step_max_prob == b.step_max_prob);
    CHECK(a.step_token_prob == b.step_token_prob);
    CHECK(a.log_likelihood == b.log_likelihood);
    CHECK(a.truncated == b.truncated);
    CHECK(a.prompt_len == b.prompt_len);
    CHECK(a.attention == b.attention);
  }
  std::remove(path.c_str());
}
