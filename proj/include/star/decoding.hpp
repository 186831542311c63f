#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "star/model.hpp"

namespace star {

struct DecodeTrace {
  std::vector<int> tokens;  // prompt tokens, emitted tokens, eos (if any)
  std::vector<double> step_max_prob;    // per emitted step, incl. eos
  std::vector<double> step_token_prob;  // posterior of the emitted token
  Eigen::MatrixXd attention;  // L x L, mean over decoder layers and heads
  double log_likelihood = 0.0;
  bool truncated = false;
  int prompt_len = 1;

  int length() const { return static_cast<int>(tokens.size()); }
  // Emitted tokens without prompt and eos.
  std::vector<int> content_tokens() const;
};

enum class HypothesisOrigin { gaussian, beam, consensus };

struct HypothesisSet {
  DecodeTrace base;
  std::vector<std::vector<int>> alts;  // content-token sequences
  HypothesisOrigin origin = HypothesisOrigin::gaussian;
};

struct BeamHypothesis {
  std::vector<int> tokens;  // incl. prompt and eos (if finished)
  double log_likelihood = 0.0;
  bool truncated = false;
};

struct BeamResult {
  std::vector<BeamHypothesis> hypotheses;  // sorted, best first
  DecodeTrace best_trace;
};

// Forced pass over a complete token sequence, capturing per-step
// posteriors and the averaged decoder self-attention matrix.
DecodeTrace forced_trace(const Model& model, const Utterance& utterance,
                         const std::vector<int>& tokens, bool truncated);

DecodeTrace greedy_decode(const Model& model, const Utterance& utterance,
                          int max_len = 0);

BeamResult beam_decode(const Model& model, const Utterance& utterance,
                       int beam_n, int max_len = 0);

HypothesisSet perturbed_decodes(const Model& model, const Utterance& utterance,
                                int K, double rho, std::int64_t seed,
                                int max_len = 0);

// Trace dump interface (one JSON record per line), readable standalone.
void save_traces(const std::vector<DecodeTrace>& traces,
                 const std::vector<std::string>& ids, const std::string& path);
std::vector<std::pair<std::string, DecodeTrace>> load_traces(
    const std::string& path);

}  // namespace star
