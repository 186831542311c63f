#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "star/decoding.hpp"
#include "star/indicators.hpp"
#include "star/uttfilter.hpp"

namespace star {

enum class FilterOrigin { gaussian, beam, consensus, none };
enum class WeightMode { star, conf, attn, uniform };

struct AdaptConfig {
  IndicatorConfig indicator;
  double alpha = 20.0;
  int K = 5;
  double rho = 0.05;
  int beam_n = 5;
  double lr = 1e-5;
  int epochs = 2;
  int grad_accum = 16;
  int rounds = 1;
  FilterOrigin filter_origin = FilterOrigin::gaussian;
  WeightMode weight_mode = WeightMode::star;
  AttentiveVariant variant = AttentiveVariant::both;
  std::int64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

struct PseudoSample {
  size_t utterance_index = 0;
  DecodeTrace trace;
  std::optional<TokenScores> scores;
  std::optional<UtteranceQuality> quality;
};

struct RoundReport {
  int round = 0;
  size_t total = 0;
  size_t kept = 0;
  std::optional<double> pseudo_ter;  // only when references exist
  std::vector<double> losses;        // per finetune step (per sample)
};

struct RunReport {
  std::vector<RoundReport> rounds;
  std::vector<std::string> kept_ids;
  std::vector<std::string> dropped_ids;
};

std::vector<PseudoSample> pseudo_label(const Model& model,
                                       const Corpus& corpus, int threads = 0);

// Finetunes on the kept samples with per-token weights selected by
// weight_mode; the input model is untouched.
Model informed_finetune(const Model& model,
                        const Corpus& corpus,
                        const std::vector<PseudoSample>& samples,
                        const AdaptConfig& config,
                        std::vector<double>* losses = nullptr);

std::pair<Model, RunReport> run_star(const Model& model, const Corpus& corpus,
                                     const AdaptConfig& config);

Model run_supervised(const Model& model, const Corpus& corpus,
                     const AdaptConfig& config,
                     std::vector<double>* losses = nullptr);

const char* filter_origin_name(FilterOrigin o);
FilterOrigin filter_origin_from_name(const std::string& name);
const char* weight_mode_name(WeightMode m);
WeightMode weight_mode_from_name(const std::string& name);

void save_run_report(const RunReport& report, const std::string& config_echo,
                     const std::string& path);

}  // namespace star
