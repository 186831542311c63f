#include "star/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "star/error.hpp"
#include "star/rng.hpp"

using nlohmann::json;

namespace star {

std::vector<int> DecodeTrace::content_tokens() const {
  std::vector<int> out;
  int end = length();
  if (!truncated) end -= 1;  // drop eos
  for (int i = prompt_len; i < end; ++i) out.push_back(tokens[i]);
  return out;
}

namespace {

// Control tokens are suppressed at emission so pseudo labels stay in the
// content vocabulary (eos stays allowed).
Eigen::RowVectorXd emission_probs(const ModelConfig& cfg,
                                  const Eigen::RowVectorXd& logits) {
  Eigen::RowVectorXd z = logits;
  z(cfg.vocab.bos) = -1e30;
  z(cfg.vocab.pad) = -1e30;
  double m = z.maxCoeff();
  Eigen::ArrayXd e = (z.array() - m).exp();
  return (e / e.sum()).matrix().transpose();
}

int effective_max_len(const Model& model, int max_len) {
  if (max_len <= 0) return model.config.max_len + 1;  // room for eos
  return std::min(max_len, model.config.max_len + 1);
}

}  // namespace

namespace {

DecodeTrace forced_trace_mem(const Model& model, const Eigen::MatrixXd& memory,
                             const std::vector<int>& tokens, bool truncated) {
  const ModelConfig& cfg = model.config;
  const int P = cfg.vocab.prompt_len;
  const int L = static_cast<int>(tokens.size());
  if (L <= P) throw InputError("forced_trace: no emitted tokens");
  // run the decoder over everything that conditions an emission
  std::vector<int> dec_in(tokens.begin(), tokens.end());
  if (!truncated) dec_in.pop_back();  // eos is predicted, never fed back
  ForwardResult fwd = decode_with_memory(model, memory, dec_in);

  DecodeTrace tr;
  tr.tokens = tokens;
  tr.truncated = truncated;
  tr.prompt_len = P;
  tr.log_likelihood = 0.0;
  const int emitted = L - P;  // number of predictions, eos included
  for (int s = 0; s < emitted; ++s) {
    int row = P - 1 + s;
    Eigen::RowVectorXd probs = emission_probs(cfg, fwd.logits.row(row));
    int tok = tokens[P + s];
    tr.step_max_prob.push_back(probs.maxCoeff());
    tr.step_token_prob.push_back(probs(tok));
    tr.log_likelihood += std::log(std::max(probs(tok), 1e-300));
  }
  // attention over the fed-in sequence, padded to L x L for the eos row:
  // the eos position is never an input, so its row/column come from the
  // last forward state row (prediction row of eos).
  const int Lin = static_cast<int>(dec_in.size());
  tr.attention = Eigen::MatrixXd::Zero(L, L);
  tr.attention.topLeftCorner(Lin, Lin) = fwd.self_attention;
  if (!truncated) {
    // eos row: copy the final input row's attention (the state that
    // produced eos); eos attends over positions 1..Lin and itself with 0.
    tr.attention.row(L - 1).head(Lin) = fwd.self_attention.row(Lin - 1);
  }
  return tr;
}

}  // namespace

DecodeTrace forced_trace(const Model& model, const Utterance& utterance,
                         const std::vector<int>& tokens, bool truncated) {
  return forced_trace_mem(model, encode_features(model, utterance.features),
                          tokens, truncated);
}

DecodeTrace greedy_decode(const Model& model, const Utterance& utterance,
                          int max_len) {
  const ModelConfig& cfg = model.config;
  if (!utterance.features.allFinite())
    throw InputError("utterance features not finite");
  const int limit = effective_max_len(model, max_len);
  Eigen::MatrixXd memory = encode_features(model, utterance.features);
  std::vector<int> toks = prompt_tokens(cfg);
  bool got_eos = false;
  while (static_cast<int>(toks.size()) < limit) {
    ForwardResult fwd = decode_with_memory(model, memory, toks);
    Eigen::RowVectorXd probs =
        emission_probs(cfg, fwd.logits.row(fwd.logits.rows() - 1));
    int best = 0;
    probs.maxCoeff(&best);
    toks.push_back(best);
    if (best == cfg.vocab.eos) {
      got_eos = true;
      break;
    }
  }
  return forced_trace_mem(model, memory, toks, !got_eos);
}

BeamResult beam_decode(const Model& model, const Utterance& utterance,
                       int beam_n, int max_len) {
  if (beam_n < 1) throw ConfigError("beam_n must be >= 1");
  const ModelConfig& cfg = model.config;
  const int limit = effective_max_len(model, max_len);
  const int P = cfg.vocab.prompt_len;

  struct Partial {
    std::vector<int> tokens;
    double lp = 0.0;
  };
  Eigen::MatrixXd memory = encode_features(model, utterance.features);
  std::vector<Partial> active{{prompt_tokens(cfg), 0.0}};
  std::vector<BeamHypothesis> finished;

  while (!active.empty()) {
    std::vector<Partial> expanded;
    for (const Partial& h : active) {
      ForwardResult fwd = decode_with_memory(model, memory, h.tokens);
      Eigen::RowVectorXd probs =
          emission_probs(cfg, fwd.logits.row(fwd.logits.rows() - 1));
      // top beam_n continuations are enough per hypothesis
      std::vector<int> order(probs.size());
      for (int i = 0; i < probs.size(); ++i) order[i] = i;
      std::partial_sort(order.begin(),
                        order.begin() + std::min<size_t>(beam_n, order.size()),
                        order.end(),
                        [&](int a, int b) { return probs(a) > probs(b); });
      for (int k = 0; k < std::min<int>(beam_n, static_cast<int>(order.size()));
           ++k) {
        int tok = order[k];
        double p = probs(tok);
        if (p <= 0.0) continue;
        Partial nh = h;
        nh.tokens.push_back(tok);
        nh.lp += std::log(p);
        if (tok == cfg.vocab.eos) {
          finished.push_back({nh.tokens, nh.lp, false});
        } else if (static_cast<int>(nh.tokens.size()) >= limit) {
          finished.push_back({nh.tokens, nh.lp, true});
        } else {
          expanded.push_back(std::move(nh));
        }
      }
    }
    std::sort(expanded.begin(), expanded.end(),
              [](const Partial& a, const Partial& b) { return a.lp > b.lp; });
    if (static_cast<int>(expanded.size()) > beam_n) expanded.resize(beam_n);
    active = std::move(expanded);
  }

  auto norm = [P](const BeamHypothesis& h) {
    int emitted = static_cast<int>(h.tokens.size()) - P;
    return h.log_likelihood / std::max(emitted, 1);
  };
  std::stable_sort(finished.begin(), finished.end(),
                   [&](const BeamHypothesis& a, const BeamHypothesis& b) {
                     return norm(a) > norm(b);
                   });
  if (static_cast<int>(finished.size()) > beam_n) finished.resize(beam_n);
  if (finished.empty()) throw InputError("beam search produced no hypotheses");

  BeamResult res;
  res.best_trace = forced_trace_mem(model, memory, finished.front().tokens,
                                    finished.front().truncated);
  res.hypotheses = std::move(finished);
  return res;
}

HypothesisSet perturbed_decodes(const Model& model, const Utterance& utterance,
                                int K, double rho, std::int64_t seed,
                                int max_len) {
  if (K < 1) throw InputError("K must be >= 1");
  HypothesisSet hs;
  hs.origin = HypothesisOrigin::gaussian;
  hs.base = greedy_decode(model, utterance, max_len);
  for (int k = 0; k < K; ++k) {
    Model pert = perturb_params(
        model, rho,
        static_cast<std::int64_t>(derive_seed(static_cast<std::uint64_t>(seed),
                                              static_cast<std::uint64_t>(k))));
    DecodeTrace tr = greedy_decode(pert, utterance, max_len);
    hs.alts.push_back(tr.content_tokens());
  }
  return hs;
}

void save_traces(const std::vector<DecodeTrace>& traces,
                 const std::vector<std::string>& ids, const std::string& path) {
  if (traces.size() != ids.size())
    throw InputError("save_traces: ids/traces length mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open trace file for writing: " + path);
  json header{{"format", "star-traces"}, {"version", 1}};
  out << header.dump() << "\n";
  for (size_t i = 0; i < traces.size(); ++i) {
    const DecodeTrace& t = traces[i];
    json rec{{"id", ids[i]},
             {"tokens", t.tokens},
             {"step_max_prob", t.step_max_prob},
             {"step_token_prob", t.step_token_prob},
             {"log_likelihood", t.log_likelihood},
             {"truncated", t.truncated},
             {"prompt_len", t.prompt_len}};
    std::vector<double> flat;
    for (long r = 0; r < t.attention.rows(); ++r)
      for (long c = 0; c < t.attention.cols(); ++c)
        flat.push_back(t.attention(r, c));
    rec["attention_dim"] = t.attention.rows();
    rec["attention"] = flat;
    out << rec.dump() << "\n";
  }
}

std::vector<std::pair<std::string, DecodeTrace>> load_traces(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file: " + path);
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw ParseError("missing header line", 1);
  ++line_no;
  try {
    json header = json::parse(line);
    if (header.at("format").get<std::string>() != "star-traces" ||
        header.at("version").get<int>() != 1)
      throw ParseError("not a star-traces v1 file", line_no);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed header: ") + e.what(), line_no);
  }
  std::vector<std::pair<std::string, DecodeTrace>> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      DecodeTrace t;
      t.tokens = rec.at("tokens").get<std::vector<int>>();
      t.step_max_prob = rec.at("step_max_prob").get<std::vector<double>>();
      t.step_token_prob = rec.at("step_token_prob").get<std::vector<double>>();
      t.log_likelihood = rec.at("log_likelihood").get<double>();
      t.truncated = rec.at("truncated").get<bool>();
      t.prompt_len = rec.at("prompt_len").get<int>();
      long dim = rec.at("attention_dim").get<long>();
      auto flat = rec.at("attention").get<std::vector<double>>();
      if (static_cast<long>(flat.size()) != dim * dim)
        throw ParseError("attention size mismatch", line_no);
      t.attention.resize(dim, dim);
      size_t k = 0;
      for (long r = 0; r < dim; ++r)
        for (long c = 0; c < dim; ++c) t.attention(r, c) = flat[k++];
      out.emplace_back(rec.at("id").get<std::string>(), std::move(t));
    } catch (const ParseError&) {
      throw;
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed trace record: ") + e.what(),
                       line_no);
    }
  }
  return out;
}

}  // namespace star
