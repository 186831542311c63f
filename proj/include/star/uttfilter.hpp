#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "star/decoding.hpp"

namespace star {

struct UtteranceQuality {
  std::string utterance_id;
  double uncertainty = 0.0;  // U of the perturbation ensemble
  int dedup = 1;             // distinct alt hypotheses
  double score = 0.0;        // dedup * uncertainty
  int rank = -1;
  bool kept = true;
};

struct FilterConfig {
  int K = 5;
  double rho = 0.05;
  int beam_n = 5;
  bool normalize_ed = true;  // NED instead of raw ED
};

// Mean (normalized) edit distance between base and alt hypotheses;
// +inf when the base decode was truncated.
double utterance_uncertainty(const HypothesisSet& hyps,
                             bool normalize_ed = true);

int dedup_factor(const HypothesisSet& hyps);

UtteranceQuality assess_quality(const std::string& id,
                                const HypothesisSet& hyps,
                                bool normalize_ed = true);

// Sort by score descending (ties by id ascending), drop the top
// ceil(alpha/100 * N); fills rank/kept in place and returns kept ids.
std::set<std::string> rank_and_filter(std::vector<UtteranceQuality>& qualities,
                                      double alpha);

HypothesisSet gaussian_hypotheses(const Model& model,
                                  const Utterance& utterance, int K,
                                  double rho, std::int64_t seed);

HypothesisSet beam_hypotheses(const Model& model, const Utterance& utterance,
                              int beam_n);

HypothesisSet consensus_hypotheses(const Model& model,
                                   const Utterance& utterance, int beam_n);

void save_filter_report(const std::vector<UtteranceQuality>& qualities,
                        HypothesisOrigin origin, const std::string& path);

}  // namespace star
