#pragma once

#include <vector>

#include "star/decoding.hpp"

namespace star {

enum class AttentiveVariant { history, future, both };

struct IndicatorConfig {
  double lambda = 2.0;
  double tau = 10.0;
  double epsilon = 1e-8;
  bool renorm_star = true;

  void validate() const;
};

struct TokenScores {
  std::vector<int> positions;     // 1-based token positions P+1..L
  std::vector<double> raw_conf;   // c_l
  std::vector<double> raw_attn;   // a_l
  std::vector<double> conf;       // C_l, mean-normalized
  std::vector<double> attn;       // A_l, mean-normalized
  std::vector<double> star;       // S_l
  AttentiveVariant variant = AttentiveVariant::both;
};

// Raw per-token confidence: max posterior at each scored step.
std::vector<double> confidence_scores(const DecodeTrace& trace);

// Raw attentive scores over the trace's attention matrix; P is the
// prompt length, scored positions are P+1..L (1-based).
std::vector<double> attentive_scores(const Eigen::MatrixXd& attention, int P,
                                     AttentiveVariant variant);

std::vector<double> mean_normalize(const std::vector<double>& scores,
                                   double epsilon = 1e-8);

// Combined score for one token from mean-normalized C and A.
double star_combine_scalar(double conf, double attn,
                           const IndicatorConfig& config);

std::vector<double> star_combine(const std::vector<double>& conf,
                                 const std::vector<double>& attn,
                                 const IndicatorConfig& config);

TokenScores score_trace(const DecodeTrace& trace,
                        const IndicatorConfig& config,
                        AttentiveVariant variant = AttentiveVariant::both);

const char* variant_name(AttentiveVariant v);
AttentiveVariant variant_from_name(const std::string& name);

}  // namespace star
