#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace star {

// Token id space with reserved control ids and a fixed decoder prompt
// of `prompt_len` tokens (bos first, optional tag tokens after).
struct Vocab {
  int size = 50;
  int bos = 0;
  int eos = 1;
  int pad = 2;
  int prompt_len = 1;

  void validate() const;
  int num_regular() const { return size - 3; }
  bool is_reserved(int tok) const {
    return tok == bos || tok == eos || tok == pad;
  }
  // Regular (content) token ids are the non-reserved ids in increasing
  // order; rank r maps to the r-th of those.
  int regular_token(int rank) const;

  bool operator==(const Vocab&) const = default;
};

struct DomainSpec {
  std::string name = "source";
  double noise_sigma = 0.0;
  std::int64_t channel_seed = 0;  // 0 means identity transform
  double channel_strength = 1.0;
  double token_prior_skew = 1.0;  // Zipf exponent
  int frames_per_token = 3;

  bool is_identity() const { return noise_sigma == 0.0 && channel_seed == 0; }
  bool operator==(const DomainSpec&) const = default;
};

struct Utterance {
  std::string id;
  Eigen::MatrixXd features;  // T x F
  std::optional<std::vector<int>> reference;  // excludes bos/eos
  std::string domain;
};

// Fixed token -> feature-frame codebook, one unit-norm row per token id.
using Codebook = Eigen::MatrixXd;  // vocab.size x F

struct Corpus {
  Vocab vocab;
  DomainSpec domain;
  std::int64_t codebook_seed = 0;
  std::vector<Utterance> utterances;
};

Codebook make_codebook(const Vocab& vocab, int feature_dim,
                       std::int64_t seed);

// F x F linear transform for a domain ("accent/channel"); identity when
// channel_seed == 0, otherwise a seeded rotation blended by strength.
Eigen::MatrixXd channel_transform(const DomainSpec& domain, int feature_dim);

Utterance synth_utterance(const Vocab& vocab, const DomainSpec& domain,
                          const Codebook& codebook, int length,
                          std::int64_t seed, int max_len = 64);

Corpus synth_corpus(const Vocab& vocab, const DomainSpec& domain,
                    const Codebook& codebook, int count, int min_len,
                    int max_len, std::int64_t seed);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

bool corpus_equal(const Corpus& a, const Corpus& b);

}  // namespace star
