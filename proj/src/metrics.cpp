#include "star/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "star/error.hpp"

namespace star {

Alignment edit_distance(const std::vector<int>& hyp,
                        const std::vector<int>& ref) {
  const int n = static_cast<int>(hyp.size());
  const int m = static_cast<int>(ref.size());
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (int i = 0; i <= n; ++i) d[i][0] = i;
  for (int j = 0; j <= m; ++j) d[0][j] = j;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      int sub = d[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      int del = d[i][j - 1] + 1;  // ref token absent from hyp
      int ins = d[i - 1][j] + 1;  // hyp token absent from ref
      d[i][j] = std::min({sub, del, ins});
    }
  }
  Alignment a;
  a.distance = d[n][m];
  // backtrace; preference match > substitute > delete > insert
  int i = n, j = m;
  std::vector<AlignmentStep> rev;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && hyp[i - 1] == ref[j - 1] &&
        d[i][j] == d[i - 1][j - 1]) {
      rev.push_back({EditOp::match, i - 1, j - 1});
      --i; --j;
    } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
      rev.push_back({EditOp::substitute, i - 1, j - 1});
      ++a.substitutions;
      --i; --j;
    } else if (j > 0 && d[i][j] == d[i][j - 1] + 1) {
      rev.push_back({EditOp::del, -1, j - 1});
      ++a.deletions;
      --j;
    } else {
      rev.push_back({EditOp::insert, i - 1, -1});
      ++a.insertions;
      --i;
    }
  }
  a.ops.assign(rev.rbegin(), rev.rend());
  return a;
}

double ter(const std::vector<std::vector<int>>& hyps,
           const std::vector<std::vector<int>>& refs) {
  if (hyps.size() != refs.size())
    throw InputError("ter: hyps/refs length mismatch");
  long long errors = 0;
  long long ref_tokens = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    Alignment a = edit_distance(hyps[i], refs[i]);
    errors += a.distance;
    ref_tokens += static_cast<long long>(refs[i].size());
  }
  if (ref_tokens == 0) return errors == 0 ? 0.0 : 1.0;
  return static_cast<double>(errors) / static_cast<double>(ref_tokens);
}

std::vector<bool> token_correctness(const std::vector<int>& hyp,
                                    const std::vector<int>& ref) {
  Alignment a = edit_distance(hyp, ref);
  std::vector<bool> labels(hyp.size(), false);
  for (const AlignmentStep& s : a.ops) {
    if (s.op == EditOp::match) labels[static_cast<size_t>(s.hyp_index)] = true;
    // substitute and insert leave the hyp token marked wrong;
    // deletions carry no hypothesis label
  }
  return labels;
}

ConfusionMatrix confusion_matrix(const std::vector<double>& scores,
                                 const std::vector<bool>& labels,
                                 double threshold) {
  if (scores.size() != labels.size())
    throw InputError("confusion_matrix: length mismatch");
  double chigh = 0, clow = 0, whigh = 0, wlow = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    bool high = scores[i] >= threshold;
    if (labels[i]) (high ? chigh : clow) += 1;
    else (high ? whigh : wlow) += 1;
  }
  ConfusionMatrix cm;
  if (chigh + clow > 0)
    cm.correct_row = {chigh / (chigh + clow), clow / (chigh + clow)};
  if (whigh + wlow > 0)
    cm.wrong_row = {whigh / (whigh + wlow), wlow / (whigh + wlow)};
  return cm;
}

ClassVariance score_variance(const std::vector<double>& scores,
                             const std::vector<bool>& labels) {
  if (scores.size() != labels.size())
    throw InputError("score_variance: length mismatch");
  auto population_var = [](const std::vector<double>& xs) {
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return var / static_cast<double>(xs.size());
  };
  std::vector<double> correct, wrong;
  for (size_t i = 0; i < scores.size(); ++i)
    (labels[i] ? correct : wrong).push_back(scores[i]);
  ClassVariance cv;
  if (!correct.empty()) cv.var_correct = population_var(correct);
  if (!wrong.empty()) cv.var_wrong = population_var(wrong);
  return cv;
}

std::optional<double> nce(const std::vector<double>& scores,
                          const std::vector<bool>& labels, double clip_lo,
                          double clip_hi) {
  if (scores.size() != labels.size()) throw InputError("nce: length mismatch");
  if (scores.empty()) return std::nullopt;
  for (double s : scores)
    if (!(s >= 0.0)) throw InputError("nce: scores must be >= 0");
  size_t n_correct = 0;
  for (bool b : labels) n_correct += b ? 1 : 0;
  if (n_correct == 0 || n_correct == labels.size()) return std::nullopt;
  double n = static_cast<double>(labels.size());
  double p = static_cast<double>(n_correct) / n;
  double h_base = -(p * std::log(p) + (1 - p) * std::log(1 - p));
  double h_s = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    double s = std::clamp(scores[i], clip_lo, clip_hi);
    h_s += labels[i] ? -std::log(s) : -std::log(1.0 - s);
  }
  h_s /= n;
  return (h_base - h_s) / h_base;
}

}  // namespace star
