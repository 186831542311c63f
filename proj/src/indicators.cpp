#include "star/indicators.hpp"

#include <cmath>

#include "star/error.hpp"

namespace star {

void IndicatorConfig::validate() const {
  if (lambda <= 0.0) throw ConfigError("lambda must be > 0");
  if (tau <= 0.0) throw ConfigError("tau must be > 0");
  if (epsilon <= 0.0) throw ConfigError("epsilon must be > 0");
}

std::vector<double> confidence_scores(const DecodeTrace& trace) {
  if (trace.step_max_prob.empty())
    throw InputError("trace has no scored positions");
  return trace.step_max_prob;
}

std::vector<double> attentive_scores(const Eigen::MatrixXd& attention, int P,
                                     AttentiveVariant variant) {
  const int L = static_cast<int>(attention.rows());
  if (L <= P) throw InputError("no scored positions: L <= P");
  std::vector<double> out;
  out.reserve(static_cast<size_t>(L - P));
  // 1-based l in P+1..L; 0-based row l-1
  for (int l = P + 1; l <= L; ++l) {
    double history = 0.0;
    for (int j = P + 1; j <= l; ++j) history += attention(l - 1, j - 1);
    double future = 0.0;
    for (int i = l + 1; i <= L; ++i) future += attention(i - 1, l - 1);
    double a = 0.0;
    switch (variant) {
      case AttentiveVariant::both:
        a = history + future;
        break;
      case AttentiveVariant::history:
        a = history;
        break;
      case AttentiveVariant::future:
        a = attention(l - 1, l - 1) + future;
        break;
    }
    out.push_back(a);
  }
  return out;
}

std::vector<double> mean_normalize(const std::vector<double>& scores,
                                   double epsilon) {
  if (scores.empty()) throw InputError("mean_normalize: empty input");
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  if (mean <= epsilon)
    throw InputError("mean_normalize: degenerate input, mean <= epsilon");
  std::vector<double> out(scores);
  for (double& s : out) s /= mean;
  return out;
}

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

double star_combine_scalar(double conf, double attn,
                           const IndicatorConfig& config) {
  if (!std::isfinite(conf) || !std::isfinite(attn))
    throw InputError("star_combine: non-finite input");
  if (conf <= 0.0) throw InputError("star_combine: confidence must be > 0");
  if (attn < 0.0) throw InputError("star_combine: attentive must be >= 0");
  double a = std::max(attn, config.epsilon);  // guard ratios only
  double ratio_ac = attn * attn / conf;
  double ratio_ca = conf * conf / a;
  double conflict = (sigmoid(ratio_ac - config.lambda) +
                     sigmoid(ratio_ca - config.lambda)) *
                    attn;
  double consensus = sigmoid(config.lambda - ratio_ac) *
                     sigmoid(config.lambda - ratio_ca) * attn *
                     std::exp((conf - attn) / config.tau);
  return conflict + consensus;
}

std::vector<double> star_combine(const std::vector<double>& conf,
                                 const std::vector<double>& attn,
                                 const IndicatorConfig& config) {
  config.validate();
  if (conf.size() != attn.size())
    throw InputError("star_combine: length mismatch");
  std::vector<double> out;
  out.reserve(conf.size());
  for (size_t i = 0; i < conf.size(); ++i)
    out.push_back(star_combine_scalar(conf[i], attn[i], config));
  return out;
}

TokenScores score_trace(const DecodeTrace& trace,
                        const IndicatorConfig& config,
                        AttentiveVariant variant) {
  config.validate();
  TokenScores ts;
  ts.variant = variant;
  ts.raw_conf = confidence_scores(trace);
  ts.raw_attn = attentive_scores(trace.attention, trace.prompt_len, variant);
  ts.conf = mean_normalize(ts.raw_conf, config.epsilon);
  ts.attn = mean_normalize(ts.raw_attn, config.epsilon);
  ts.star = star_combine(ts.conf, ts.attn, config);
  if (config.renorm_star) ts.star = mean_normalize(ts.star, config.epsilon);
  for (int l = trace.prompt_len + 1; l <= trace.length(); ++l)
    ts.positions.push_back(l);
  return ts;
}

const char* variant_name(AttentiveVariant v) {
  switch (v) {
    case AttentiveVariant::history: return "history";
    case AttentiveVariant::future: return "future";
    case AttentiveVariant::both: return "both";
  }
  return "both";
}

AttentiveVariant variant_from_name(const std::string& name) {
  if (name == "history") return AttentiveVariant::history;
  if (name == "future") return AttentiveVariant::future;
  if (name == "both") return AttentiveVariant::both;
  throw ConfigError("unknown attentive variant: " + name);
}

}  // namespace star
