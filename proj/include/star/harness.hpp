#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "star/adaptation.hpp"

namespace star {

// Flat key=value configuration with section prefixes (corpus., model.,
// train., adapt., paths., eval.). Unknown keys are rejected.
class KVConfig {
 public:
  KVConfig();  // defaults

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  std::string get_str(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::int64_t get_i64(const std::string& key) const;
  double get_double(const std::string& key) const;

  // Canonical serialized form (sorted keys), echoed into reports.
  std::string echo() const;

  static const std::map<std::string, std::string>& defaults();

 private:
  std::map<std::string, std::string> values_;
};

Vocab vocab_from_config(const KVConfig& cfg);
ModelConfig model_from_config(const KVConfig& cfg);
AdaptConfig adapt_from_config(const KVConfig& cfg, std::int64_t seed);
std::vector<DomainSpec> preset_domains(const KVConfig& cfg);

// Exit codes shared by all commands.
enum ExitCode {
  kExitOk = 0,
  kExitUsage = 2,
  kExitInput = 3,
  kExitConvergenceWarning = 4,
};

int cmd_gen_corpus(const KVConfig& cfg, std::int64_t seed,
                   const std::string& out_dir, bool force);
int cmd_train_source(const KVConfig& cfg, std::int64_t seed,
                     const std::string& out_dir);
int cmd_adapt(const KVConfig& cfg, std::int64_t seed, const std::string& arm,
              const std::string& out_dir);
int cmd_evaluate(const KVConfig& cfg,
                 const std::vector<std::string>& checkpoints,
                 const std::string& out_dir);
int cmd_sweep(const KVConfig& cfg, std::int64_t seed, const std::string& axis,
              const std::string& out_dir);
int cmd_report(const std::string& input_path);

// Shared helpers (also used by tests and the acceptance suite).
double corpus_ter(const Model& model, const Corpus& corpus, int threads = 0);

struct IndicatorEval {
  // pooled over all test utterances of one domain
  std::vector<double> conf, attn, star;
  std::vector<bool> labels;
};
IndicatorEval collect_indicator_eval(const Model& model, const Corpus& corpus,
                                     const IndicatorConfig& icfg,
                                     AttentiveVariant variant, int threads = 0);

}  // namespace star
