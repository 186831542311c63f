#include "star/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "star/error.hpp"
#include "star/rng.hpp"

namespace star {

using ag::Mat;
using ag::Var;

void ModelConfig::validate() const {
  vocab.validate();
  if (enc_layers < 1 || dec_layers < 1) throw ConfigError("layers must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (model_dim < 1 || ff_dim < 1) throw ConfigError("dims must be >= 1");
  if (model_dim % heads != 0)
    throw ConfigError("model_dim " + std::to_string(model_dim) +
                      " not divisible by heads " + std::to_string(heads));
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (max_len <= vocab.prompt_len + 1) throw ConfigError("max_len too small");
}

std::int64_t Model::param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, m] : params) n += m.size();
  return n;
}

namespace {

void add_attn_params(ParamMap& p, const std::string& prefix, int d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) p[prefix + w] = Mat(d, d);
  for (const char* b : {"bq", "bk", "bv", "bo"}) p[prefix + b] = Mat(1, d);
}

void add_ln_params(ParamMap& p, const std::string& prefix, int d) {
  p[prefix + "g"] = Mat(1, d);
  p[prefix + "b"] = Mat(1, d);
}

void add_ff_params(ParamMap& p, const std::string& prefix, int d, int ff) {
  p[prefix + "w1"] = Mat(d, ff);
  p[prefix + "b1"] = Mat(1, ff);
  p[prefix + "w2"] = Mat(ff, d);
  p[prefix + "b2"] = Mat(1, d);
}

bool is_ln_gain(const std::string& name) {
  return name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0 &&
         name.find(".ln") != std::string::npos;
}

bool is_bias(const std::string& name) {
  auto pos = name.rfind('.');
  if (pos == std::string::npos) return false;
  std::string leaf = name.substr(pos + 1);
  return leaf.size() >= 1 && leaf[0] == 'b';
}

Mat positional_encoding(int len, int d) {
  Mat pe(len, d);
  for (int p = 0; p < len; ++p) {
    for (int i = 0; i < d; ++i) {
      double angle = p / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

}  // namespace

Model init_model(const ModelConfig& config) {
  config.validate();
  Model model;
  model.config = config;
  ParamMap& p = model.params;
  const int d = config.model_dim;
  p["embed.tok"] = Mat(config.vocab.size, d);
  p["enc.in.w"] = Mat(config.feature_dim, d);
  p["enc.in.b"] = Mat(1, d);
  for (int i = 0; i < config.enc_layers; ++i) {
    std::string pre = "enc.L" + std::to_string(i) + ".";
    add_ln_params(p, pre + "ln1.", d);
    add_attn_params(p, pre + "attn.", d);
    add_ln_params(p, pre + "ln2.", d);
    add_ff_params(p, pre + "ff.", d, config.ff_dim);
  }
  add_ln_params(p, "enc.lnf.", d);
  for (int i = 0; i < config.dec_layers; ++i) {
    std::string pre = "dec.L" + std::to_string(i) + ".";
    add_ln_params(p, pre + "ln1.", d);
    add_attn_params(p, pre + "self.", d);
    add_ln_params(p, pre + "ln2.", d);
    add_attn_params(p, pre + "cross.", d);
    add_ln_params(p, pre + "ln3.", d);
    add_ff_params(p, pre + "ff.", d, config.ff_dim);
  }
  add_ln_params(p, "dec.lnf.", d);
  p["out.w"] = Mat(d, config.vocab.size);
  p["out.b"] = Mat(1, config.vocab.size);

  Rng rng(static_cast<std::uint64_t>(config.init_seed));
  for (auto& [name, m] : p) {
    if (is_ln_gain(name)) {
      m.setOnes();
    } else if (is_bias(name)) {
      m.setZero();
    } else {
      double a = std::sqrt(6.0 / (m.rows() + m.cols()));
      for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
    }
  }
  return model;
}

OptimState init_optim(const Model& model, double learning_rate,
                      int grad_accum_steps) {
  if (grad_accum_steps < 1) throw ConfigError("grad_accum_steps must be >= 1");
  OptimState o;
  o.learning_rate = learning_rate;
  o.grad_accum_steps = grad_accum_steps;
  for (const auto& [name, m] : model.params) {
    o.m[name] = Mat::Zero(m.rows(), m.cols());
    o.v[name] = Mat::Zero(m.rows(), m.cols());
    o.grad_accum[name] = Mat::Zero(m.rows(), m.cols());
  }
  return o;
}

std::vector<int> prompt_tokens(const ModelConfig& config) {
  std::vector<int> toks(static_cast<size_t>(config.vocab.prompt_len),
                        config.vocab.bos);
  return toks;
}

namespace {

struct BuiltForward {
  Var logits;
  // decoder self-attention probability matrices, one per (layer, head)
  std::vector<Mat> self_attn;
};

Var get(std::map<std::string, Var>& pv, const std::string& name) {
  auto it = pv.find(name);
  if (it == pv.end()) throw InputError("missing parameter " + name);
  return it->second;
}

Var multi_head_attention(ag::Tape& tape, std::map<std::string, Var>& pv,
                         const std::string& prefix, Var q_src, Var kv_src,
                         int heads, bool causal,
                         std::vector<Mat>* attn_out) {
  const int d = static_cast<int>(q_src.value().cols());
  const int dk = d / heads;
  Var q = ag::add_rowvec(ag::matmul(q_src, get(pv, prefix + "wq")),
                         get(pv, prefix + "bq"));
  Var k = ag::add_rowvec(ag::matmul(kv_src, get(pv, prefix + "wk")),
                         get(pv, prefix + "bk"));
  Var v = ag::add_rowvec(ag::matmul(kv_src, get(pv, prefix + "wv")),
                         get(pv, prefix + "bv"));
  const long lq = q.value().rows();
  const long lk = k.value().rows();
  Mat mask;
  if (causal) {
    mask = Mat::Zero(lq, lk);
    for (long i = 0; i < lq; ++i)
      for (long j = i + 1; j < lk; ++j) mask(i, j) = -1e30;
  }
  std::vector<Var> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = ag::slice_cols(q, h * dk, dk);
    Var kh = ag::slice_cols(k, h * dk, dk);
    Var vh = ag::slice_cols(v, h * dk, dk);
    Var scores = ag::scale(ag::matmul_nt(qh, kh), 1.0 / std::sqrt(dk));
    if (causal) scores = ag::add_const(scores, mask);
    Var probs = ag::softmax_rows(scores);
    if (attn_out) attn_out->push_back(probs.value());
    head_outs.push_back(ag::matmul(probs, vh));
  }
  Var concat = ag::concat_cols(head_outs);
  return ag::add_rowvec(ag::matmul(concat, get(pv, prefix + "wo")),
                        get(pv, prefix + "bo"));
}

Var feed_forward(ag::Tape& tape, std::map<std::string, Var>& pv,
                 const std::string& prefix, Var x) {
  Var h = ag::relu(ag::add_rowvec(ag::matmul(x, get(pv, prefix + "w1")),
                                  get(pv, prefix + "b1")));
  return ag::add_rowvec(ag::matmul(h, get(pv, prefix + "w2")),
                        get(pv, prefix + "b2"));
}

Var layer_norm(std::map<std::string, Var>& pv, const std::string& prefix,
               Var x) {
  return ag::layer_norm_rows(x, get(pv, prefix + "g"), get(pv, prefix + "b"));
}

Var build_encoder(ag::Tape& tape, std::map<std::string, Var>& pv,
                  const Model& model, const Eigen::MatrixXd& features) {
  const ModelConfig& cfg = model.config;
  if (!features.allFinite()) throw InputError("utterance features not finite");
  if (features.cols() != cfg.feature_dim)
    throw InputError("feature dim mismatch");
  Var x = ag::add_rowvec(ag::matmul(tape.constant(features), get(pv, "enc.in.w")),
                         get(pv, "enc.in.b"));
  x = ag::add_const(x, positional_encoding(static_cast<int>(features.rows()),
                                           cfg.model_dim));
  for (int i = 0; i < cfg.enc_layers; ++i) {
    std::string pre = "enc.L" + std::to_string(i) + ".";
    Var ln1 = layer_norm(pv, pre + "ln1.", x);
    Var a = multi_head_attention(tape, pv, pre + "attn.", ln1, ln1, cfg.heads,
                                 false, nullptr);
    x = ag::add(x, a);
    Var f = feed_forward(tape, pv, pre + "ff.",
                         layer_norm(pv, pre + "ln2.", x));
    x = ag::add(x, f);
  }
  return layer_norm(pv, "enc.lnf.", x);
}

BuiltForward build_decoder(ag::Tape& tape, std::map<std::string, Var>& pv,
                           const Model& model, Var memory,
                           const std::vector<int>& dec_tokens) {
  const ModelConfig& cfg = model.config;
  Var y = ag::gather_rows(get(pv, "embed.tok"), dec_tokens);
  y = ag::add_const(y, positional_encoding(static_cast<int>(dec_tokens.size()),
                                           cfg.model_dim));
  BuiltForward out;
  for (int i = 0; i < cfg.dec_layers; ++i) {
    std::string pre = "dec.L" + std::to_string(i) + ".";
    Var ln1 = layer_norm(pv, pre + "ln1.", y);
    Var sa = multi_head_attention(tape, pv, pre + "self.", ln1, ln1, cfg.heads,
                                  true, &out.self_attn);
    y = ag::add(y, sa);
    Var ln2 = layer_norm(pv, pre + "ln2.", y);
    Var ca = multi_head_attention(tape, pv, pre + "cross.", ln2, memory,
                                  cfg.heads, false, nullptr);
    y = ag::add(y, ca);
    Var f = feed_forward(tape, pv, pre + "ff.",
                         layer_norm(pv, pre + "ln3.", y));
    y = ag::add(y, f);
  }
  Var yf = layer_norm(pv, "dec.lnf.", y);
  out.logits = ag::add_rowvec(ag::matmul(yf, get(pv, "out.w")),
                              get(pv, "out.b"));
  return out;
}

void make_param_leaves(ag::Tape& tape, std::map<std::string, Var>& pv,
                       const Model& model, bool requires_grad) {
  for (const auto& [name, m] : model.params)
    pv.emplace(name, tape.leaf(m, requires_grad));
}

BuiltForward build_forward(ag::Tape& tape, std::map<std::string, Var>& pv,
                           const Model& model, const Eigen::MatrixXd& features,
                           const std::vector<int>& dec_tokens,
                           bool requires_grad) {
  make_param_leaves(tape, pv, model, requires_grad);
  Var memory = build_encoder(tape, pv, model, features);
  return build_decoder(tape, pv, model, memory, dec_tokens);
}

ForwardResult result_from_built(const BuiltForward& fwd, size_t n_tokens) {
  ForwardResult r;
  r.logits = fwd.logits.value();
  const long L = static_cast<long>(n_tokens);
  r.self_attention = Mat::Zero(L, L);
  for (const Mat& a : fwd.self_attn) r.self_attention += a;
  r.self_attention /= static_cast<double>(fwd.self_attn.size());
  return r;
}

}  // namespace

LossGraph weighted_loss(const Model& model, const Utterance& utterance,
                        const std::vector<int>& target,
                        const std::vector<double>& weights) {
  const ModelConfig& cfg = model.config;
  const int P = cfg.vocab.prompt_len;
  const int n = static_cast<int>(target.size());
  if (n + P > cfg.max_len)
    throw InputError("target length + prompt exceeds max_len");
  if (static_cast<int>(weights.size()) != n + 1)
    throw InputError("weights length must equal target length + 1 (eos)");
  for (int t : target) {
    if (t == cfg.vocab.pad) throw InputError("target contains pad token");
    if (t < 0 || t >= cfg.vocab.size) throw InputError("target token out of range");
  }
  for (double w : weights)
    if (!(w >= 0.0)) throw InputError("negative or non-finite loss weight");

  std::vector<int> prompt = prompt_tokens(cfg);
  std::vector<int> dec_in = prompt;
  dec_in.insert(dec_in.end(), target.begin(), target.end());

  // row j predicts dec_in[j+1]; last row predicts eos. Prompt-interior
  // rows get weight 0.
  std::vector<int> full_targets;
  std::vector<double> full_weights;
  for (size_t j = 1; j < dec_in.size(); ++j) full_targets.push_back(dec_in[j]);
  full_targets.push_back(cfg.vocab.eos);
  for (int j = 0; j < P - 1; ++j) full_weights.push_back(0.0);
  full_weights.insert(full_weights.end(), weights.begin(), weights.end());

  LossGraph g;
  g.tape = std::make_unique<ag::Tape>();
  std::map<std::string, Var> pv;
  BuiltForward fwd =
      build_forward(*g.tape, pv, model, utterance.features, dec_in, true);
  std::vector<double> all_lp;
  g.loss = ag::weighted_cross_entropy(fwd.logits, full_targets, full_weights,
                                      &all_lp);
  g.loss_value = g.loss.value()(0, 0);
  g.step_log_probs.assign(all_lp.begin() + (P - 1), all_lp.end());
  g.param_vars = std::move(pv);
  return g;
}

LossGraph teacher_forced_loss(const Model& model, const Utterance& utterance,
                              const std::vector<int>& target) {
  std::vector<double> ones(target.size() + 1, 1.0);
  return weighted_loss(model, utterance, target, ones);
}

ForwardResult forward_inference(const Model& model, const Utterance& utterance,
                                const std::vector<int>& decoder_tokens) {
  ag::Tape tape;
  std::map<std::string, Var> pv;
  BuiltForward fwd =
      build_forward(tape, pv, model, utterance.features, decoder_tokens, false);
  return result_from_built(fwd, decoder_tokens.size());
}

Eigen::MatrixXd encode_features(const Model& model,
                                const Eigen::MatrixXd& features) {
  ag::Tape tape;
  std::map<std::string, Var> pv;
  make_param_leaves(tape, pv, model, false);
  return build_encoder(tape, pv, model, features).value();
}

ForwardResult decode_with_memory(const Model& model,
                                 const Eigen::MatrixXd& memory,
                                 const std::vector<int>& decoder_tokens) {
  ag::Tape tape;
  std::map<std::string, Var> pv;
  make_param_leaves(tape, pv, model, false);
  Var mem = tape.constant(memory);
  BuiltForward fwd = build_decoder(tape, pv, model, mem, decoder_tokens);
  return result_from_built(fwd, decoder_tokens.size());
}

void backward_and_step(Model& model, OptimState& optim, LossGraph& graph) {
  if (!graph.tape) throw InputError("loss graph already consumed");
  graph.tape->backward(graph.loss);
  for (auto& [name, var] : graph.param_vars) {
    const Mat& g = var.grad();
    if (g.size() == 0) continue;  // parameter unused in this graph
    if (!g.allFinite())
      throw InputError("non-finite gradient in tensor " + name);
    optim.grad_accum[name] += g;
  }
  graph.tape.reset();
  ++optim.accum_count;
  if (optim.accum_count < optim.grad_accum_steps) return;

  ++optim.adam_t;
  double bc1 = 1.0 - std::pow(optim.beta1, static_cast<double>(optim.adam_t));
  double bc2 = 1.0 - std::pow(optim.beta2, static_cast<double>(optim.adam_t));
  for (auto& [name, p] : model.params) {
    Mat g = optim.grad_accum[name] / static_cast<double>(optim.grad_accum_steps);
    Mat& m = optim.m[name];
    Mat& v = optim.v[name];
    m = optim.beta1 * m + (1.0 - optim.beta1) * g;
    v = optim.beta2 * v + (1.0 - optim.beta2) * g.cwiseProduct(g);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    p -= optim.learning_rate *
         mhat.cwiseQuotient((vhat.cwiseSqrt().array() + optim.epsilon).matrix());
    if (!p.allFinite())
      throw InputError("non-finite parameter after update in tensor " + name);
    optim.grad_accum[name].setZero();
  }
  optim.accum_count = 0;
  ++model.step_count;
}

Model perturb_params(const Model& model, double rho, std::int64_t seed) {
  if (rho < 0.0) throw InputError("rho must be >= 0");
  Model copy = model;
  if (rho == 0.0) return copy;
  std::uint64_t stream = 0;
  for (auto& [name, p] : copy.params) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed), stream++));
    double mean = p.mean();
    double var = (p.array() - mean).square().mean();
    double std = std::sqrt(var);
    if (std == 0.0) continue;
    for (long i = 0; i < p.rows(); ++i)
      for (long j = 0; j < p.cols(); ++j)
        p(i, j) += rng.normal(0.0, rho * std);
  }
  return copy;
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[8] = {'S', 'T', 'A', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& o, std::uint32_t v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_i64(std::ostream& o, std::int64_t v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64(std::ostream& o, double v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_str(std::ostream& o, const std::string& s) {
  write_u32(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_mat(std::ostream& o, const Mat& m) {
  write_i64(o, m.rows());
  write_i64(o, m.cols());
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) write_f64(o, m(i, j));
}
void write_params(std::ostream& o, const ParamMap& p) {
  write_u32(o, static_cast<std::uint32_t>(p.size()));
  for (const auto& [name, m] : p) {
    write_str(o, name);
    write_mat(o, m);
  }
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated checkpoint");
  return v;
}
std::int64_t read_i64(std::istream& in) {
  std::int64_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated checkpoint");
  return v;
}
double read_f64(std::istream& in) {
  double v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated checkpoint");
  return v;
}
std::string read_str(std::istream& in) {
  std::uint32_t n = read_u32(in);
  if (n > (1u << 20)) throw IoError("corrupt checkpoint: oversized string");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("truncated checkpoint");
  return s;
}
Mat read_mat(std::istream& in) {
  std::int64_t r = read_i64(in);
  std::int64_t c = read_i64(in);
  if (r < 0 || c < 0 || r * c > (1LL << 28))
    throw IoError("corrupt checkpoint: bad tensor shape");
  Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = read_f64(in);
  return m;
}
ParamMap read_params(std::istream& in) {
  std::uint32_t n = read_u32(in);
  if (n > 100000) throw IoError("corrupt checkpoint: too many tensors");
  ParamMap p;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = read_str(in);
    p[name] = read_mat(in);
  }
  return p;
}

}  // namespace

void save_checkpoint(const Model& model, const OptimState& optim,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kVersion);
  const ModelConfig& c = model.config;
  write_u32(out, static_cast<std::uint32_t>(c.enc_layers));
  write_u32(out, static_cast<std::uint32_t>(c.dec_layers));
  write_u32(out, static_cast<std::uint32_t>(c.heads));
  write_u32(out, static_cast<std::uint32_t>(c.model_dim));
  write_u32(out, static_cast<std::uint32_t>(c.ff_dim));
  write_u32(out, static_cast<std::uint32_t>(c.feature_dim));
  write_u32(out, static_cast<std::uint32_t>(c.vocab.size));
  write_u32(out, static_cast<std::uint32_t>(c.vocab.bos));
  write_u32(out, static_cast<std::uint32_t>(c.vocab.eos));
  write_u32(out, static_cast<std::uint32_t>(c.vocab.pad));
  write_u32(out, static_cast<std::uint32_t>(c.vocab.prompt_len));
  write_u32(out, static_cast<std::uint32_t>(c.max_len));
  write_i64(out, c.init_seed);
  write_i64(out, model.step_count);
  write_params(out, model.params);
  write_f64(out, optim.learning_rate);
  write_u32(out, static_cast<std::uint32_t>(optim.grad_accum_steps));
  write_f64(out, optim.beta1);
  write_f64(out, optim.beta2);
  write_f64(out, optim.epsilon);
  write_i64(out, optim.adam_t);
  write_u32(out, static_cast<std::uint32_t>(optim.accum_count));
  write_params(out, optim.m);
  write_params(out, optim.v);
  write_params(out, optim.grad_accum);
  if (!out) throw IoError("write failure on checkpoint: " + path);
}

void load_checkpoint(const std::string& path, Model& model, OptimState& optim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw IoError("not a star checkpoint: " + path);
  std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  Model m;
  m.config.enc_layers = static_cast<int>(read_u32(in));
  m.config.dec_layers = static_cast<int>(read_u32(in));
  m.config.heads = static_cast<int>(read_u32(in));
  m.config.model_dim = static_cast<int>(read_u32(in));
  m.config.ff_dim = static_cast<int>(read_u32(in));
  m.config.feature_dim = static_cast<int>(read_u32(in));
  m.config.vocab.size = static_cast<int>(read_u32(in));
  m.config.vocab.bos = static_cast<int>(read_u32(in));
  m.config.vocab.eos = static_cast<int>(read_u32(in));
  m.config.vocab.pad = static_cast<int>(read_u32(in));
  m.config.vocab.prompt_len = static_cast<int>(read_u32(in));
  m.config.max_len = static_cast<int>(read_u32(in));
  m.config.init_seed = read_i64(in);
  m.step_count = read_i64(in);
  m.params = read_params(in);
  m.config.validate();
  // shape consistency against the declared config
  auto expect = init_model(m.config);
  if (expect.params.size() != m.params.size())
    throw IoError("checkpoint tensor set does not match config");
  for (const auto& [name, t] : expect.params) {
    auto it = m.params.find(name);
    if (it == m.params.end())
      throw IoError("checkpoint missing tensor " + name);
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
      throw IoError("checkpoint tensor " + name +
                    " shape mismatch for declared config (vocab size " +
                    std::to_string(m.config.vocab.size) + ")");
  }
  OptimState o;
  o.learning_rate = read_f64(in);
  o.grad_accum_steps = static_cast<int>(read_u32(in));
  o.beta1 = read_f64(in);
  o.beta2 = read_f64(in);
  o.epsilon = read_f64(in);
  o.adam_t = read_i64(in);
  o.accum_count = static_cast<int>(read_u32(in));
  o.m = read_params(in);
  o.v = read_params(in);
  o.grad_accum = read_params(in);
  model = std::move(m);
  optim = std::move(o);
}

}  // namespace star
