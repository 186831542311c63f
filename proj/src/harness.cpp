#include "star/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "star/error.hpp"
#include "star/metrics.hpp"
#include "star/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace star {

const std::map<std::string, std::string>& KVConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      // corpus generation
      {"corpus.vocab_size", "50"},
      {"corpus.prompt_len", "1"},
      {"corpus.feature_dim", "16"},
      {"corpus.frames_per_token", "3"},
      {"corpus.codebook_seed", "7"},
      {"corpus.train_count", "2000"},
      {"corpus.val_count", "60"},
      {"corpus.test_count", "200"},
      {"corpus.min_len", "4"},
      {"corpus.max_len", "14"},
      {"corpus.skew", "1.0"},
      {"corpus.target_noise", "0.3"},
      {"corpus.accent_seed", "11"},
      {"corpus.accent_strength", "0.5"},
      {"corpus.shifted_noise", "0.3"},
      {"corpus.shifted_seed", "13"},
      {"corpus.shifted_strength", "0.25"},
      // model
      {"model.enc_layers", "2"},
      {"model.dec_layers", "2"},
      {"model.heads", "4"},
      {"model.dim", "64"},
      {"model.ff_dim", "128"},
      {"model.max_len", "24"},
      {"model.init_seed", "1"},
      // source training
      {"train.lr", "3e-4"},
      {"train.grad_accum", "16"},
      {"train.max_epochs", "30"},
      {"train.target_ter", "0.03"},
      // adaptation
      {"adapt.lambda", "2.0"},
      {"adapt.tau", "10.0"},
      {"adapt.epsilon", "1e-8"},
      {"adapt.renorm_star", "1"},
      {"adapt.alpha", "20.0"},
      {"adapt.K", "5"},
      {"adapt.rho", "0.05"},
      {"adapt.beam_n", "5"},
      {"adapt.lr", "1e-4"},
      {"adapt.epochs", "2"},
      {"adapt.grad_accum", "16"},
      {"adapt.rounds", "1"},
      {"adapt.filter", "gaussian"},
      {"adapt.weights", "star"},
      {"adapt.variant", "both"},
      {"adapt.domain", "accent"},
      {"adapt.threads", "0"},
      // evaluation
      {"eval.threshold", "1.0"},
      // paths
      {"paths.data_dir", "data"},
      {"paths.checkpoint", "source.ckpt"},
  };
  return d;
}

KVConfig::KVConfig() : values_(defaults()) {}

void KVConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().count(key)) throw ConfigError("unknown config key: " + key);
  values_[key] = value;
}

void KVConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("expected key=value in config", line_no);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string s) {
      auto b2 = s.find_first_not_of(" \t");
      auto e2 = s.find_last_not_of(" \t");
      if (b2 == std::string::npos) return std::string();
      return s.substr(b2, e2 - b2 + 1);
    };
    try {
      set(strip(key), strip(val));
    } catch (const ConfigError& err) {
      throw ParseError(err.what(), line_no);
    }
  }
}

std::string KVConfig::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

int KVConfig::get_int(const std::string& key) const {
  try {
    return std::stoi(get_str(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer");
  }
}

std::int64_t KVConfig::get_i64(const std::string& key) const {
  try {
    return std::stoll(get_str(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer");
  }
}

double KVConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get_str(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number");
  }
}

std::string KVConfig::echo() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << "=" << v << "\n";
  return out.str();
}

Vocab vocab_from_config(const KVConfig& cfg) {
  Vocab v;
  v.size = cfg.get_int("corpus.vocab_size");
  v.prompt_len = cfg.get_int("corpus.prompt_len");
  v.validate();
  return v;
}

ModelConfig model_from_config(const KVConfig& cfg) {
  ModelConfig m;
  m.enc_layers = cfg.get_int("model.enc_layers");
  m.dec_layers = cfg.get_int("model.dec_layers");
  m.heads = cfg.get_int("model.heads");
  m.model_dim = cfg.get_int("model.dim");
  m.ff_dim = cfg.get_int("model.ff_dim");
  m.feature_dim = cfg.get_int("corpus.feature_dim");
  m.vocab = vocab_from_config(cfg);
  m.max_len = cfg.get_int("model.max_len");
  m.init_seed = cfg.get_i64("model.init_seed");
  m.validate();
  return m;
}

AdaptConfig adapt_from_config(const KVConfig& cfg, std::int64_t seed) {
  AdaptConfig a;
  a.indicator.lambda = cfg.get_double("adapt.lambda");
  a.indicator.tau = cfg.get_double("adapt.tau");
  a.indicator.epsilon = cfg.get_double("adapt.epsilon");
  a.indicator.renorm_star = cfg.get_int("adapt.renorm_star") != 0;
  a.alpha = cfg.get_double("adapt.alpha");
  a.K = cfg.get_int("adapt.K");
  a.rho = cfg.get_double("adapt.rho");
  a.beam_n = cfg.get_int("adapt.beam_n");
  a.lr = cfg.get_double("adapt.lr");
  a.epochs = cfg.get_int("adapt.epochs");
  a.grad_accum = cfg.get_int("adapt.grad_accum");
  a.rounds = cfg.get_int("adapt.rounds");
  a.filter_origin = filter_origin_from_name(cfg.get_str("adapt.filter"));
  a.weight_mode = weight_mode_from_name(cfg.get_str("adapt.weights"));
  a.variant = variant_from_name(cfg.get_str("adapt.variant"));
  a.seed = seed;
  a.threads = cfg.get_int("adapt.threads");
  a.validate();
  return a;
}

std::vector<DomainSpec> preset_domains(const KVConfig& cfg) {
  int fpt = cfg.get_int("corpus.frames_per_token");
  double skew = cfg.get_double("corpus.skew");
  DomainSpec source;
  source.name = "source";
  source.frames_per_token = fpt;
  source.token_prior_skew = skew;
  DomainSpec noise = source;
  noise.name = "noise";
  noise.noise_sigma = cfg.get_double("corpus.target_noise");
  DomainSpec accent = source;
  accent.name = "accent";
  accent.channel_seed = cfg.get_i64("corpus.accent_seed");
  accent.channel_strength = cfg.get_double("corpus.accent_strength");
  DomainSpec shifted = source;
  shifted.name = "shifted";
  shifted.noise_sigma = cfg.get_double("corpus.shifted_noise");
  shifted.channel_seed = cfg.get_i64("corpus.shifted_seed");
  shifted.channel_strength = cfg.get_double("corpus.shifted_strength");
  return {source, noise, accent, shifted};
}

namespace {

// Threaded loop over [0, n) with results written by index; worker
// exceptions are rethrown on the calling thread.
void for_each_index(size_t n, int threads,
                    const std::function<void(size_t)>& fn) {
  int t = threads > 0 ? threads
                      : std::max(1u, std::thread::hardware_concurrency());
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
        next.store(n);
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

double corpus_ter(const Model& model, const Corpus& corpus, int threads) {
  std::vector<std::vector<int>> hyps(corpus.utterances.size());
  std::vector<std::vector<int>> refs(corpus.utterances.size());
  for_each_index(corpus.utterances.size(), threads, [&](size_t i) {
    const Utterance& u = corpus.utterances[i];
    if (!u.reference) throw InputError("corpus_ter needs references");
    hyps[i] = greedy_decode(model, u).content_tokens();
    refs[i] = *u.reference;
  });
  return ter(hyps, refs);
}

IndicatorEval collect_indicator_eval(const Model& model, const Corpus& corpus,
                                     const IndicatorConfig& icfg,
                                     AttentiveVariant variant, int threads) {
  struct PerUtt {
    std::vector<double> conf, attn, star;
    std::vector<bool> labels;
  };
  std::vector<PerUtt> per(corpus.utterances.size());
  for_each_index(corpus.utterances.size(), threads, [&](size_t i) {
    const Utterance& u = corpus.utterances[i];
    if (!u.reference) return;
    DecodeTrace tr = greedy_decode(model, u);
    if (tr.truncated) return;
    if (tr.length() - tr.prompt_len < 2) return;
    TokenScores ts = score_trace(tr, icfg, variant);
    // labels over content tokens + eos (eos labeled against ref + eos)
    std::vector<int> hyp = tr.content_tokens();
    std::vector<bool> labels = token_correctness(hyp, *u.reference);
    labels.push_back(true);  // the terminating eos counts as correct
    if (labels.size() != ts.star.size()) return;
    per[i] = {ts.conf, ts.attn, ts.star, labels};
  });
  IndicatorEval ev;
  for (const PerUtt& p : per) {
    ev.conf.insert(ev.conf.end(), p.conf.begin(), p.conf.end());
    ev.attn.insert(ev.attn.end(), p.attn.begin(), p.attn.end());
    ev.star.insert(ev.star.end(), p.star.begin(), p.star.end());
    ev.labels.insert(ev.labels.end(), p.labels.begin(), p.labels.end());
  }
  return ev;
}

namespace {

std::string corpus_path(const std::string& dir, const std::string& domain,
                        const std::string& split) {
  return dir + "/" + domain + "_" + split + ".jsonl";
}

Corpus load_corpus_checked(const std::string& path) {
  if (!fs::exists(path)) throw InputError("missing corpus file: " + path);
  return load_corpus(path);
}

void strip_references(Corpus& c) {
  for (Utterance& u : c.utterances) u.reference.reset();
}

}  // namespace

int cmd_gen_corpus(const KVConfig& cfg, std::int64_t seed,
                   const std::string& out_dir, bool force) {
  Vocab vocab = vocab_from_config(cfg);
  Codebook cb = make_codebook(vocab, cfg.get_int("corpus.feature_dim"),
                              cfg.get_i64("corpus.codebook_seed"));
  std::vector<DomainSpec> domains = preset_domains(cfg);
  fs::create_directories(out_dir);
  // refuse to clobber existing outputs without --force
  std::vector<std::pair<std::string, std::string>> outputs;
  for (const DomainSpec& d : domains) {
    outputs.push_back({d.name, "train"});
    outputs.push_back({d.name, "test"});
  }
  outputs.push_back({"source", "val"});
  if (!force) {
    for (const auto& [dom, split] : outputs) {
      std::string p = corpus_path(out_dir, dom, split);
      if (fs::exists(p)) {
        std::cerr << "refusing to overwrite " << p << " (use --force)\n";
        return kExitInput;
      }
    }
  }
  int min_len = cfg.get_int("corpus.min_len");
  int max_len = cfg.get_int("corpus.max_len");
  std::uint64_t stream = 0;
  for (const DomainSpec& d : domains) {
    for (const char* split : {"train", "test"}) {
      int count = std::string(split) == "train"
                      ? cfg.get_int("corpus.train_count")
                      : cfg.get_int("corpus.test_count");
      Corpus c = synth_corpus(
          vocab, d, cb, count, min_len, max_len,
          static_cast<std::int64_t>(
              derive_seed(static_cast<std::uint64_t>(seed), stream++)));
      c.codebook_seed = cfg.get_i64("corpus.codebook_seed");
      // ids carry the split to stay unique across files
      for (size_t i = 0; i < c.utterances.size(); ++i)
        c.utterances[i].id = d.name + "-" + split + "-" + std::to_string(i);
      save_corpus(c, corpus_path(out_dir, d.name, split));
    }
  }
  {
    Corpus val = synth_corpus(
        vocab, domains[0], cb, cfg.get_int("corpus.val_count"), min_len,
        max_len,
        static_cast<std::int64_t>(
            derive_seed(static_cast<std::uint64_t>(seed), stream++)));
    val.codebook_seed = cfg.get_i64("corpus.codebook_seed");
    for (size_t i = 0; i < val.utterances.size(); ++i)
      val.utterances[i].id = "source-val-" + std::to_string(i);
    save_corpus(val, corpus_path(out_dir, "source", "val"));
  }
  std::cout << "wrote " << outputs.size() << " corpora to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train_source(const KVConfig& cfg, std::int64_t seed,
                     const std::string& out_dir) {
  std::string data_dir = cfg.get_str("paths.data_dir");
  Corpus train = load_corpus_checked(corpus_path(data_dir, "source", "train"));
  Corpus val = load_corpus_checked(corpus_path(data_dir, "source", "val"));
  ModelConfig mc = model_from_config(cfg);
  mc.init_seed = seed;
  Model model = init_model(mc);
  OptimState optim = init_optim(model, cfg.get_double("train.lr"),
                                cfg.get_int("train.grad_accum"));
  double target_ter = cfg.get_double("train.target_ter");
  int max_epochs = cfg.get_int("train.max_epochs");
  int threads = cfg.get_int("adapt.threads");

  fs::create_directories(out_dir);
  std::ofstream curve(out_dir + "/train_curve.csv");
  curve << "epoch,mean_loss,val_ter\n";
  Rng shuffle_rng(derive_seed(static_cast<std::uint64_t>(seed), 0xabc));
  double val_ter = 1.0;
  bool converged = false;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    std::vector<size_t> order(train.utterances.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
    double loss_sum = 0.0;
    for (size_t idx : order) {
      const Utterance& u = train.utterances[idx];
      LossGraph g = teacher_forced_loss(model, u, *u.reference);
      loss_sum += g.loss_value;
      backward_and_step(model, optim, g);
    }
    val_ter = corpus_ter(model, val, threads);
    curve << epoch << "," << loss_sum / order.size() << "," << val_ter << "\n";
    curve.flush();
    std::cerr << "epoch " << epoch << " loss "
              << loss_sum / order.size() << " val_ter " << val_ter << "\n";
    if (val_ter <= target_ter) {
      converged = true;
      break;
    }
  }
  save_checkpoint(model, optim, out_dir + "/source.ckpt");
  if (!converged) {
    std::cerr << "warning: source training did not reach target TER "
              << target_ter << " (val TER " << val_ter << ")\n";
    return kExitConvergenceWarning;
  }
  std::cout << "source checkpoint written, val TER " << val_ter << "\n";
  return kExitOk;
}

namespace {

// Maps a study arm name onto the pipeline configuration.
AdaptConfig arm_config(const KVConfig& cfg, std::int64_t seed,
                       const std::string& arm) {
  AdaptConfig a = adapt_from_config(cfg, seed);
  if (arm == "star") {
    // as configured
  } else if (arm == "self-train") {
    a.filter_origin = FilterOrigin::none;
    a.weight_mode = WeightMode::uniform;
  } else if (arm == "utt-only") {
    a.weight_mode = WeightMode::uniform;
  } else if (arm == "conf-only") {
    a.weight_mode = WeightMode::conf;
  } else if (arm == "attn-only") {
    a.weight_mode = WeightMode::attn;
  } else if (arm == "supervised") {
    a.filter_origin = FilterOrigin::none;
    a.weight_mode = WeightMode::uniform;
  } else {
    throw ConfigError("unknown arm: " + arm);
  }
  return a;
}

}  // namespace

int cmd_adapt(const KVConfig& cfg, std::int64_t seed, const std::string& arm,
              const std::string& out_dir) {
  std::string data_dir = cfg.get_str("paths.data_dir");
  std::string domain = cfg.get_str("adapt.domain");
  Corpus target = load_corpus_checked(corpus_path(data_dir, domain, "train"));
  Model model;
  OptimState optim;
  load_checkpoint(cfg.get_str("paths.checkpoint"), model, optim);
  if (model.config.vocab.size != target.vocab.size)
    throw InputError("checkpoint/corpus vocab size mismatch");
  AdaptConfig a = arm_config(cfg, seed, arm);
  fs::create_directories(out_dir);

  if (arm == "supervised") {
    for (const Utterance& u : target.utterances)
      if (!u.reference)
        throw InputError("supervised arm needs a labeled corpus");
    std::vector<double> losses;
    Model adapted = run_supervised(model, target, a, &losses);
    save_checkpoint(adapted, init_optim(adapted, a.lr, a.grad_accum),
                    out_dir + "/" + arm + ".ckpt");
    RunReport rep;
    RoundReport rr;
    rr.round = 1;
    rr.total = target.utterances.size();
    rr.kept = target.utterances.size();
    rr.losses = std::move(losses);
    rep.rounds.push_back(std::move(rr));
    save_run_report(rep, cfg.echo() + "arm=" + arm + "\nseed=" +
                             std::to_string(seed) + "\n",
                    out_dir + "/" + arm + "_report.json");
    return kExitOk;
  }

  auto [adapted, report] = run_star(model, target, a);
  save_checkpoint(adapted, init_optim(adapted, a.lr, a.grad_accum),
                  out_dir + "/" + arm + ".ckpt");
  save_run_report(report, cfg.echo() + "arm=" + arm + "\nseed=" +
                           std::to_string(seed) + "\n",
                  out_dir + "/" + arm + "_report.json");
  std::cout << "arm " << arm << " kept "
            << (report.rounds.empty() ? 0 : report.rounds.back().kept) << "/"
            << target.utterances.size() << "\n";
  return kExitOk;
}

int cmd_evaluate(const KVConfig& cfg,
                 const std::vector<std::string>& checkpoints,
                 const std::string& out_dir) {
  if (checkpoints.empty()) {
    std::cerr << "evaluate: no checkpoints given\n";
    return kExitUsage;
  }
  std::string data_dir = cfg.get_str("paths.data_dir");
  std::vector<DomainSpec> domains = preset_domains(cfg);
  int threads = cfg.get_int("adapt.threads");
  fs::create_directories(out_dir);

  // TER grid: every checkpoint on every domain test set
  std::ofstream grid(out_dir + "/ter_grid.csv");
  grid << "checkpoint,domain,ter,rel_reduction_vs_first\n";
  std::map<std::string, double> first_ter;
  for (size_t ci = 0; ci < checkpoints.size(); ++ci) {
    Model model;
    OptimState optim;
    load_checkpoint(checkpoints[ci], model, optim);
    for (const DomainSpec& d : domains) {
      Corpus test = load_corpus_checked(corpus_path(data_dir, d.name, "test"));
      if (test.vocab.size != model.config.vocab.size)
        throw InputError("vocab mismatch between checkpoint and corpus " +
                         d.name);
      double t = corpus_ter(model, test, threads);
      double rel = 0.0;
      if (ci == 0)
        first_ter[d.name] = t;
      else if (first_ter[d.name] > 0.0)
        rel = (first_ter[d.name] - t) / first_ter[d.name];
      grid << fs::path(checkpoints[ci]).filename().string() << "," << d.name
           << "," << t << "," << rel << "\n";
    }
  }

  // indicator metrics on the adaptation domain, frozen-model protocol
  {
    std::string domain = cfg.get_str("adapt.domain");
    Corpus test = load_corpus_checked(corpus_path(data_dir, domain, "test"));
    Model model;
    OptimState optim;
    load_checkpoint(checkpoints.front(), model, optim);
    IndicatorConfig icfg;
    icfg.lambda = cfg.get_double("adapt.lambda");
    icfg.tau = cfg.get_double("adapt.tau");
    IndicatorEval ev = collect_indicator_eval(
        model, test, icfg, variant_from_name(cfg.get_str("adapt.variant")),
        threads);
    double threshold = cfg.get_double("eval.threshold");
    std::ofstream ind(out_dir + "/indicator_metrics.csv");
    ind << "indicator,nce,var_correct,var_wrong,conf_high_correct,conf_high_"
           "wrong\n";
    auto emit = [&](const char* name, const std::vector<double>& s) {
      auto n = nce(s, ev.labels);
      auto v = score_variance(s, ev.labels);
      auto cm = confusion_matrix(s, ev.labels, threshold);
      ind << name << "," << (n ? std::to_string(*n) : "undefined") << ","
          << (v.var_correct ? std::to_string(*v.var_correct) : "undefined")
          << ","
          << (v.var_wrong ? std::to_string(*v.var_wrong) : "undefined") << ","
          << (cm.correct_row ? std::to_string((*cm.correct_row)[0])
                             : "undefined")
          << ","
          << (cm.wrong_row ? std::to_string((*cm.wrong_row)[0]) : "undefined")
          << "\n";
    };
    emit("conf", ev.conf);
    emit("attn", ev.attn);
    emit("star", ev.star);
  }
  std::cout << "evaluation written to " << out_dir << "\n";
  return kExitOk;
}

int cmd_sweep(const KVConfig& cfg, std::int64_t seed, const std::string& axis,
              const std::string& out_dir) {
  std::string data_dir = cfg.get_str("paths.data_dir");
  std::string domain = cfg.get_str("adapt.domain");
  fs::create_directories(out_dir);
  Model model;
  OptimState optim;
  load_checkpoint(cfg.get_str("paths.checkpoint"), model, optim);
  Corpus target = load_corpus_checked(corpus_path(data_dir, domain, "train"));
  Corpus test = load_corpus_checked(corpus_path(data_dir, domain, "test"));
  int threads = cfg.get_int("adapt.threads");

  std::ofstream out(out_dir + "/sweep_" + axis + ".csv");
  if (axis == "train_size") {
    out << "train_size,ter\n";
    for (int n : {50, 100, 200, 500, 1000}) {
      if (n > static_cast<int>(target.utterances.size())) break;
      Corpus sub = target;
      sub.utterances.resize(static_cast<size_t>(n));
      AdaptConfig a = adapt_from_config(cfg, seed);
      auto [adapted, rep] = run_star(model, sub, a);
      out << n << "," << corpus_ter(adapted, test, threads) << "\n";
    }
  } else if (axis == "rounds") {
    out << "round,ter\n";
    out << 0 << "," << corpus_ter(model, test, threads) << "\n";
    int max_rounds = cfg.get_int("adapt.rounds");
    AdaptConfig a = adapt_from_config(cfg, seed);
    Model current = model;
    for (int r = 1; r <= std::max(max_rounds, 2); ++r) {
      AdaptConfig one = a;
      one.rounds = 1;
      one.seed = static_cast<std::int64_t>(
          derive_seed(static_cast<std::uint64_t>(seed),
                      static_cast<std::uint64_t>(r)));
      auto [adapted, rep] = run_star(current, target, one);
      current = std::move(adapted);
      out << r << "," << corpus_ter(current, test, threads) << "\n";
    }
  } else if (axis == "threshold") {
    out << "threshold,indicator,correct_high,wrong_high\n";
    IndicatorConfig icfg;
    icfg.lambda = cfg.get_double("adapt.lambda");
    icfg.tau = cfg.get_double("adapt.tau");
    IndicatorEval ev = collect_indicator_eval(
        model, test, icfg, variant_from_name(cfg.get_str("adapt.variant")),
        threads);
    for (double th : {0.5, 0.75, 1.0, 1.25, 1.5}) {
      auto emit = [&](const char* name, const std::vector<double>& s) {
        auto cm = confusion_matrix(s, ev.labels, th);
        out << th << "," << name << ","
            << (cm.correct_row ? std::to_string((*cm.correct_row)[0])
                               : "undefined")
            << ","
            << (cm.wrong_row ? std::to_string((*cm.wrong_row)[0])
                             : "undefined")
            << "\n";
      };
      emit("conf", ev.conf);
      emit("attn", ev.attn);
      emit("star", ev.star);
    }
  } else if (axis == "alpha" || axis == "lambda" || axis == "tau") {
    out << axis << ",ter\n";
    std::vector<double> grid = axis == "alpha"
                                   ? std::vector<double>{0, 10, 20, 30}
                               : axis == "lambda"
                                   ? std::vector<double>{1, 2, 4}
                                   : std::vector<double>{5, 10, 20};
    for (double v : grid) {
      AdaptConfig a = adapt_from_config(cfg, seed);
      if (axis == "alpha") a.alpha = v;
      if (axis == "lambda") a.indicator.lambda = v;
      if (axis == "tau") a.indicator.tau = v;
      auto [adapted, rep] = run_star(model, target, a);
      out << v << "," << corpus_ter(adapted, test, threads) << "\n";
    }
  } else {
    std::cerr << "unknown sweep axis: " << axis
              << " (expected train_size|threshold|rounds|alpha|lambda|tau)\n";
    return kExitUsage;
  }
  std::cout << "sweep written to " << out_dir << "\n";
  return kExitOk;
}

int cmd_report(const std::string& input_path) {
  std::ifstream in(input_path);
  if (!in) {
    std::cerr << "cannot open " << input_path << "\n";
    return kExitInput;
  }
  if (input_path.size() > 5 &&
      input_path.substr(input_path.size() - 5) == ".json") {
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
      std::cerr << "not valid JSON: " << input_path << "\n";
      return kExitInput;
    }
    std::cout << "run report (" << input_path << ")\n";
    for (const auto& r : j.value("rounds", json::array())) {
      std::cout << "  round " << r.value("round", 0) << ": kept "
                << r.value("kept", 0) << "/" << r.value("total", 0);
      if (r.contains("pseudo_ter"))
        std::cout << ", pseudo TER " << r["pseudo_ter"].get<double>();
      const auto& losses = r["losses"];
      if (!losses.empty()) {
        double first = losses.front().get<double>();
        double last = losses.back().get<double>();
        std::cout << ", loss " << first << " -> " << last;
      }
      std::cout << "\n";
    }
    return kExitOk;
  }
  // CSV: pretty-print aligned
  std::string line;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', '\t');
    std::cout << line << "\n";
  }
  return kExitOk;
}

}  // namespace star
