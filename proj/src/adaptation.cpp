#include "star/adaptation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "star/error.hpp"
#include "star/metrics.hpp"
#include "star/rng.hpp"

using nlohmann::json;

namespace star {

void AdaptConfig::validate() const {
  indicator.validate();
  if (alpha < 0.0 || alpha >= 100.0) throw ConfigError("alpha must be in [0, 100)");
  if (K < 1) throw ConfigError("K must be >= 1");
  if (rho < 0.0) throw ConfigError("rho must be >= 0");
  if (beam_n < 2) throw ConfigError("beam_n must be >= 2");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (grad_accum < 1) throw ConfigError("grad_accum must be >= 1");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
}

namespace {

int thread_count(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Parallel map over [0, n); results written by index, so output order is
// deterministic regardless of scheduling.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
  int t = thread_count(threads);
  if (t <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&] {
      try {
        for (;;) {
          size_t i = next.fetch_add(1);
          if (i >= n) break;
          fn(i);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        next.store(n);  // stop the other workers
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<PseudoSample> pseudo_label(const Model& model,
                                       const Corpus& corpus, int threads) {
  std::vector<PseudoSample> samples(corpus.utterances.size());
  parallel_for(corpus.utterances.size(), threads, [&](size_t i) {
    samples[i].utterance_index = i;
    samples[i].trace = greedy_decode(model, corpus.utterances[i]);
  });
  return samples;
}

namespace {

std::vector<double> weights_for(const PseudoSample& s, WeightMode mode,
                                size_t n_scored) {
  switch (mode) {
    case WeightMode::uniform:
      return std::vector<double>(n_scored, 1.0);
    case WeightMode::conf:
      return s.scores->conf;
    case WeightMode::attn:
      return s.scores->attn;
    case WeightMode::star:
      return s.scores->star;
  }
  return std::vector<double>(n_scored, 1.0);
}

}  // namespace

Model informed_finetune(const Model& model, const Corpus& corpus,
                        const std::vector<PseudoSample>& samples,
                        const AdaptConfig& config,
                        std::vector<double>* losses) {
  config.validate();
  // validate weight/length agreement before any update
  std::vector<size_t> usable;
  for (size_t i = 0; i < samples.size(); ++i) {
    const PseudoSample& s = samples[i];
    std::vector<int> target = s.trace.content_tokens();
    size_t n_scored = target.size() + 1;  // + eos
    if (s.trace.truncated) continue;
    if (n_scored < 2) continue;  // attentive score undefined
    if (config.weight_mode != WeightMode::uniform) {
      if (!s.scores)
        throw InputError("informed_finetune: sample missing token scores");
      if (s.scores->star.size() != n_scored)
        throw InputError("informed_finetune: weight/length mismatch on " +
                         corpus.utterances[s.utterance_index].id);
    }
    usable.push_back(i);
  }

  Model adapted = model;
  OptimState optim = init_optim(adapted, config.lr, config.grad_accum);
  Rng shuffle_rng(derive_seed(static_cast<std::uint64_t>(config.seed), 0x5eed));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<size_t> order = usable;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
    for (size_t idx : order) {
      const PseudoSample& s = samples[idx];
      std::vector<int> target = s.trace.content_tokens();
      std::vector<double> w =
          weights_for(s, config.weight_mode, target.size() + 1);
      LossGraph g = weighted_loss(adapted,
                                  corpus.utterances[s.utterance_index], target,
                                  w);
      if (losses) losses->push_back(g.loss_value);
      backward_and_step(adapted, optim, g);
    }
  }
  return adapted;
}

std::pair<Model, RunReport> run_star(const Model& model, const Corpus& corpus,
                                     const AdaptConfig& config) {
  config.validate();
  if (corpus.utterances.empty()) throw InputError("run_star: empty corpus");
  Model current = model;
  RunReport report;
  for (int round = 0; round < config.rounds; ++round) {
    std::uint64_t round_seed =
        derive_seed(static_cast<std::uint64_t>(config.seed),
                    0x1000 + static_cast<std::uint64_t>(round));
    std::vector<PseudoSample> samples =
        pseudo_label(current, corpus, config.threads);

    // utterance-level filtering
    std::vector<UtteranceQuality> qualities(samples.size());
    if (config.filter_origin != FilterOrigin::none) {
      parallel_for(samples.size(), config.threads, [&](size_t i) {
        const Utterance& utt = corpus.utterances[i];
        HypothesisSet hyps;
        switch (config.filter_origin) {
          case FilterOrigin::gaussian:
            hyps = gaussian_hypotheses(
                current, utt, config.K, config.rho,
                static_cast<std::int64_t>(derive_seed(round_seed, i)));
            break;
          case FilterOrigin::beam:
            hyps = beam_hypotheses(current, utt, config.beam_n);
            break;
          case FilterOrigin::consensus:
            hyps = consensus_hypotheses(current, utt, config.beam_n);
            break;
          case FilterOrigin::none:
            break;
        }
        qualities[i] = assess_quality(utt.id, hyps);
      });
      std::set<std::string> kept_ids = rank_and_filter(qualities, config.alpha);
      std::vector<PseudoSample> kept;
      for (size_t i = 0; i < samples.size(); ++i) {
        samples[i].quality = qualities[i];
        if (kept_ids.count(corpus.utterances[i].id))
          kept.push_back(std::move(samples[i]));
      }
      samples = std::move(kept);
    }

    // token-level scoring on the kept pseudo labels; traces that cannot
    // be scored (degenerate normalization) are dropped from the round
    if (config.weight_mode != WeightMode::uniform) {
      parallel_for(samples.size(), config.threads, [&](size_t i) {
        if (samples[i].trace.truncated) return;
        if (samples[i].trace.length() - samples[i].trace.prompt_len < 1) return;
        try {
          samples[i].scores =
              score_trace(samples[i].trace, config.indicator, config.variant);
        } catch (const InputError&) {
        }
      });
      std::erase_if(samples, [&](const PseudoSample& s) {
        return !s.trace.truncated &&
               s.trace.content_tokens().size() + 1 >= 2 && !s.scores;
      });
    }

    RoundReport rr;
    rr.round = round + 1;
    rr.total = corpus.utterances.size();
    rr.kept = samples.size();
    // analysis-only TER of pseudo labels against references, if present
    {
      std::vector<std::vector<int>> hyps, refs;
      for (const PseudoSample& s : samples) {
        const Utterance& u = corpus.utterances[s.utterance_index];
        if (!u.reference) continue;
        hyps.push_back(s.trace.content_tokens());
        refs.push_back(*u.reference);
      }
      if (!refs.empty()) rr.pseudo_ter = ter(hyps, refs);
    }

    AdaptConfig round_cfg = config;
    round_cfg.seed = static_cast<std::int64_t>(round_seed);
    Model next =
        informed_finetune(current, corpus, samples, round_cfg, &rr.losses);
    current = std::move(next);

    if (round == config.rounds - 1) {
      std::set<std::string> kept_set;
      for (const PseudoSample& s : samples)
        kept_set.insert(corpus.utterances[s.utterance_index].id);
      for (const Utterance& u : corpus.utterances) {
        if (kept_set.count(u.id))
          report.kept_ids.push_back(u.id);
        else
          report.dropped_ids.push_back(u.id);
      }
    }
    report.rounds.push_back(std::move(rr));
  }
  return {std::move(current), std::move(report)};
}

Model run_supervised(const Model& model, const Corpus& corpus,
                     const AdaptConfig& config, std::vector<double>* losses) {
  config.validate();
  for (const Utterance& u : corpus.utterances)
    if (!u.reference)
      throw InputError("run_supervised: utterance " + u.id +
                       " has no reference");
  // reuse the finetune loop with references as targets
  std::vector<PseudoSample> samples(corpus.utterances.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].utterance_index = i;
    DecodeTrace& t = samples[i].trace;
    t.prompt_len = model.config.vocab.prompt_len;
    t.truncated = false;
    t.tokens = prompt_tokens(model.config);
    t.tokens.insert(t.tokens.end(), corpus.utterances[i].reference->begin(),
                    corpus.utterances[i].reference->end());
    t.tokens.push_back(model.config.vocab.eos);
  }
  AdaptConfig sup = config;
  sup.weight_mode = WeightMode::uniform;
  sup.filter_origin = FilterOrigin::none;
  return informed_finetune(model, corpus, samples, sup, losses);
}

const char* filter_origin_name(FilterOrigin o) {
  switch (o) {
    case FilterOrigin::gaussian: return "gaussian";
    case FilterOrigin::beam: return "beam";
    case FilterOrigin::consensus: return "consensus";
    case FilterOrigin::none: return "none";
  }
  return "none";
}

FilterOrigin filter_origin_from_name(const std::string& name) {
  if (name == "gaussian") return FilterOrigin::gaussian;
  if (name == "beam") return FilterOrigin::beam;
  if (name == "consensus") return FilterOrigin::consensus;
  if (name == "none") return FilterOrigin::none;
  throw ConfigError("unknown filter origin: " + name);
}

const char* weight_mode_name(WeightMode m) {
  switch (m) {
    case WeightMode::star: return "star";
    case WeightMode::conf: return "conf";
    case WeightMode::attn: return "attn";
    case WeightMode::uniform: return "uniform";
  }
  return "uniform";
}

WeightMode weight_mode_from_name(const std::string& name) {
  if (name == "star") return WeightMode::star;
  if (name == "conf") return WeightMode::conf;
  if (name == "attn") return WeightMode::attn;
  if (name == "uniform") return WeightMode::uniform;
  throw ConfigError("unknown weight mode: " + name);
}

void save_run_report(const RunReport& report, const std::string& config_echo,
                     const std::string& path) {
  json j;
  j["format"] = "star-run-report";
  j["version"] = 1;
  j["config"] = config_echo;
  j["rounds"] = json::array();
  for (const RoundReport& r : report.rounds) {
    json jr{{"round", r.round}, {"total", r.total}, {"kept", r.kept}};
    if (r.pseudo_ter) jr["pseudo_ter"] = *r.pseudo_ter;
    jr["losses"] = r.losses;
    j["rounds"].push_back(jr);
  }
  j["kept_ids"] = report.kept_ids;
  j["dropped_ids"] = report.dropped_ids;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open run report for writing: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace star
