#include "star/uttfilter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "star/error.hpp"
#include "star/metrics.hpp"

namespace star {

double utterance_uncertainty(const HypothesisSet& hyps, bool normalize_ed) {
  if (hyps.alts.empty()) throw InputError("hypothesis set has no alts");
  if (hyps.base.truncated) return std::numeric_limits<double>::infinity();
  std::vector<int> base = hyps.base.content_tokens();
  double total = 0.0;
  for (const auto& alt : hyps.alts) {
    double ed = edit_distance(alt, base).distance;
    if (normalize_ed) {
      double denom = std::max<double>(
          {static_cast<double>(base.size()), static_cast<double>(alt.size()),
           1.0});
      ed /= denom;
    }
    total += ed;
  }
  return total / static_cast<double>(hyps.alts.size());
}

int dedup_factor(const HypothesisSet& hyps) {
  if (hyps.alts.empty()) throw InputError("hypothesis set has no alts");
  std::set<std::vector<int>> distinct(hyps.alts.begin(), hyps.alts.end());
  return static_cast<int>(distinct.size());
}

UtteranceQuality assess_quality(const std::string& id,
                                const HypothesisSet& hyps, bool normalize_ed) {
  UtteranceQuality q;
  q.utterance_id = id;
  q.uncertainty = utterance_uncertainty(hyps, normalize_ed);
  q.dedup = dedup_factor(hyps);
  q.score = q.dedup * q.uncertainty;
  return q;
}

std::set<std::string> rank_and_filter(std::vector<UtteranceQuality>& qualities,
                                      double alpha) {
  if (alpha < 0.0 || alpha >= 100.0)
    throw ConfigError("alpha must be in [0, 100)");
  const size_t n = qualities.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (qualities[a].score != qualities[b].score)
      return qualities[a].score > qualities[b].score;
    return qualities[a].utterance_id < qualities[b].utterance_id;
  });
  const size_t drop =
      static_cast<size_t>(std::ceil(alpha / 100.0 * static_cast<double>(n)));
  std::set<std::string> kept;
  for (size_t r = 0; r < n; ++r) {
    UtteranceQuality& q = qualities[order[r]];
    q.rank = static_cast<int>(r);
    // truncated decodes (infinite uncertainty) are dropped regardless
    q.kept = r >= drop && std::isfinite(q.uncertainty);
    if (q.kept) kept.insert(q.utterance_id);
  }
  return kept;
}

HypothesisSet gaussian_hypotheses(const Model& model,
                                  const Utterance& utterance, int K,
                                  double rho, std::int64_t seed) {
  return perturbed_decodes(model, utterance, K, rho, seed);
}

HypothesisSet beam_hypotheses(const Model& model, const Utterance& utterance,
                              int beam_n) {
  if (beam_n < 2) throw ConfigError("beam filtering needs beam_n >= 2");
  BeamResult res = beam_decode(model, utterance, beam_n);
  HypothesisSet hs;
  hs.origin = HypothesisOrigin::beam;
  hs.base = res.best_trace;
  const int P = model.config.vocab.prompt_len;
  for (const BeamHypothesis& h : res.hypotheses) {
    std::vector<int> content(h.tokens.begin() + P, h.tokens.end());
    if (!h.truncated && !content.empty()) content.pop_back();  // eos
    hs.alts.push_back(std::move(content));
  }
  return hs;
}

namespace {

// Majority vote over the best hypothesis's slots after Levenshtein
// alignment of each N-best entry to it; ties go to the best hypothesis.
std::vector<int> consensus_vote(const std::vector<std::vector<int>>& alts) {
  const std::vector<int>& best = alts.front();
  // slot votes: per best position, plus one pseudo-slot after each
  // position for insertions (majority rarely sustains those; we count
  // per-position votes only, which keeps consensus length <= |best|)
  std::vector<std::map<int, int>> votes(best.size());
  for (const auto& alt : alts) {
    Alignment a = edit_distance(alt, best);
    for (const AlignmentStep& s : a.ops) {
      if (s.op == EditOp::match || s.op == EditOp::substitute)
        votes[static_cast<size_t>(s.ref_index)][alt[static_cast<size_t>(
            s.hyp_index)]] += 1;
      else if (s.op == EditOp::del)
        votes[static_cast<size_t>(s.ref_index)][-1] += 1;  // -1 = absent
    }
  }
  std::vector<int> consensus;
  for (size_t i = 0; i < best.size(); ++i) {
    int best_tok = best[i];
    int best_count = votes[i][best[i]];
    for (const auto& [tok, count] : votes[i]) {
      if (count > best_count) {
        best_count = count;
        best_tok = tok;
      }
    }
    if (best_tok >= 0) consensus.push_back(best_tok);
  }
  return consensus;
}

}  // namespace

HypothesisSet consensus_hypotheses(const Model& model,
                                   const Utterance& utterance, int beam_n) {
  if (beam_n < 2) throw ConfigError("consensus filtering needs beam_n >= 2");
  BeamResult res = beam_decode(model, utterance, beam_n);
  const int P = model.config.vocab.prompt_len;
  std::vector<std::vector<int>> contents;
  for (const BeamHypothesis& h : res.hypotheses) {
    std::vector<int> content(h.tokens.begin() + P, h.tokens.end());
    if (!h.truncated && !content.empty()) content.pop_back();
    contents.push_back(std::move(content));
  }
  std::vector<int> voted = consensus_vote(contents);

  HypothesisSet hs;
  hs.origin = HypothesisOrigin::consensus;
  // base trace carries the consensus sequence; probabilities and
  // attention come from a forced pass over it
  std::vector<int> full = prompt_tokens(model.config);
  full.insert(full.end(), voted.begin(), voted.end());
  full.push_back(model.config.vocab.eos);
  if (!voted.empty()) {
    hs.base = forced_trace(model, utterance, full, false);
  } else {
    hs.base = res.best_trace;
  }
  hs.alts = std::move(contents);
  return hs;
}

void save_filter_report(const std::vector<UtteranceQuality>& qualities,
                        HypothesisOrigin origin, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open filter report for writing: " + path);
  const char* origin_name = origin == HypothesisOrigin::gaussian ? "gaussian"
                            : origin == HypothesisOrigin::beam   ? "beam"
                                                                 : "consensus";
  out << "id,U,l,score,kept,origin\n";
  for (const UtteranceQuality& q : qualities) {
    out << q.utterance_id << "," << q.uncertainty << "," << q.dedup << ","
        << q.score << "," << (q.kept ? 1 : 0) << "," << origin_name << "\n";
  }
}

}  // namespace star
