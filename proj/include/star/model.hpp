#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "star/autograd.hpp"
#include "star/corpus.hpp"

namespace star {

struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ff_dim = 128;
  int feature_dim = 16;
  Vocab vocab;
  int max_len = 32;  // decoder positions incl. prompt and eos
  std::int64_t init_seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Named parameter tensors; map keeps a stable iteration order.
using ParamMap = std::map<std::string, Eigen::MatrixXd>;

struct Model {
  ModelConfig config;
  ParamMap params;
  std::int64_t step_count = 0;

  std::int64_t param_count() const;
};

struct OptimState {
  double learning_rate = 1e-5;
  int grad_accum_steps = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  ParamMap m;           // first moments
  ParamMap v;           // second moments
  ParamMap grad_accum;  // summed gradients since last step
  int accum_count = 0;
  std::int64_t adam_t = 0;
};

Model init_model(const ModelConfig& config);
OptimState init_optim(const Model& model, double learning_rate,
                      int grad_accum_steps);

// One teacher-forced forward pass, kept alive so gradients can flow.
struct LossGraph {
  std::unique_ptr<ag::Tape> tape;
  ag::Var loss;
  double loss_value = 0.0;
  std::vector<double> step_log_probs;  // per scored position (incl. eos)
  std::map<std::string, ag::Var> param_vars;
};

// Full forward with trace capture, usable without gradients.
struct ForwardResult {
  Eigen::MatrixXd logits;          // L x vocab (prediction at each position)
  Eigen::MatrixXd self_attention;  // L x L, mean over decoder layers/heads
};

// Decoder input = prompt tokens followed by `target`; scored positions
// predict target[0..n-1] then eos. Weights has length n + 1.
LossGraph weighted_loss(const Model& model, const Utterance& utterance,
                        const std::vector<int>& target,
                        const std::vector<double>& weights);

LossGraph teacher_forced_loss(const Model& model, const Utterance& utterance,
                              const std::vector<int>& target);

// Inference pass over an explicit decoder token prefix (prompt included).
ForwardResult forward_inference(const Model& model,
                                const Utterance& utterance,
                                const std::vector<int>& decoder_tokens);

// Encoder output for one utterance; reusable across decode steps.
Eigen::MatrixXd encode_features(const Model& model,
                                const Eigen::MatrixXd& features);

ForwardResult decode_with_memory(const Model& model,
                                 const Eigen::MatrixXd& memory,
                                 const std::vector<int>& decoder_tokens);

// Prompt token ids for a model (bos then tag tokens, all bos here).
std::vector<int> prompt_tokens(const ModelConfig& config);

void backward_and_step(Model& model, OptimState& optim, LossGraph& graph);

Model perturb_params(const Model& model, double rho, std::int64_t seed);

void save_checkpoint(const Model& model, const OptimState& optim,
                     const std::string& path);
void load_checkpoint(const std::string& path, Model& model, OptimState& optim);

}  // namespace star
