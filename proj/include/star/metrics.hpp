#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace star {

enum class EditOp { match, substitute, insert, del };

struct AlignmentStep {
  EditOp op;
  int hyp_index;  // -1 for deletions
  int ref_index;  // -1 for insertions
};

struct Alignment {
  std::vector<AlignmentStep> ops;
  int distance = 0;
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
};

// Levenshtein with unit costs; deterministic tie-break
// match > substitute > delete > insert, resolved leftmost.
Alignment edit_distance(const std::vector<int>& hyp,
                        const std::vector<int>& ref);

// Token error rate over a corpus: (S + I + D) / total reference tokens.
double ter(const std::vector<std::vector<int>>& hyps,
           const std::vector<std::vector<int>>& refs);

// Per-hypothesis-token labels: true = match, false = substitute/insert.
std::vector<bool> token_correctness(const std::vector<int>& hyp,
                                    const std::vector<int>& ref);

// Rows {correct, wrong} x columns {high, low}; row-normalized. A row
// with no members is left unset.
struct ConfusionMatrix {
  std::optional<std::array<double, 2>> correct_row;
  std::optional<std::array<double, 2>> wrong_row;
};

ConfusionMatrix confusion_matrix(const std::vector<double>& scores,
                                 const std::vector<bool>& labels,
                                 double threshold = 1.0);

struct ClassVariance {
  std::optional<double> var_correct;
  std::optional<double> var_wrong;
};

ClassVariance score_variance(const std::vector<double>& scores,
                             const std::vector<bool>& labels);

// Normalized cross-entropy of a mean-normalized score as a correctness
// predictor; scores are clipped into [clip_lo, clip_hi] as
// pseudo-probabilities. Undefined when all labels agree.
std::optional<double> nce(const std::vector<double>& scores,
                          const std::vector<bool>& labels,
                          double clip_lo = 0.01, double clip_hi = 0.99);

}  // namespace star
