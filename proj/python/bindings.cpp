#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "star/adaptation.hpp"
#include "star/corpus.hpp"
#include "star/decoding.hpp"
#include "star/error.hpp"
#include "star/harness.hpp"
#include "star/indicators.hpp"
#include "star/metrics.hpp"
#include "star/model.hpp"
#include "star/uttfilter.hpp"

namespace py = pybind11;
using namespace star;

PYBIND11_MODULE(_core, m) {
  m.doc() = "self-taught sequence recognizer laboratory core";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<InputError>(m, "InputError");
  py::register_exception<ParseError>(m, "ParseError");
  py::register_exception<IoError>(m, "IoError");

  py::class_<Vocab>(m, "Vocab")
      .def(py::init<>())
      .def_readwrite("size", &Vocab::size)
      .def_readwrite("bos", &Vocab::bos)
      .def_readwrite("eos", &Vocab::eos)
      .def_readwrite("pad", &Vocab::pad)
      .def_readwrite("prompt_len", &Vocab::prompt_len)
      .def("num_regular", &Vocab::num_regular)
      .def("regular_token", &Vocab::regular_token);

  py::class_<DomainSpec>(m, "DomainSpec")
      .def(py::init<>())
      .def_readwrite("name", &DomainSpec::name)
      .def_readwrite("noise_sigma", &DomainSpec::noise_sigma)
      .def_readwrite("channel_seed", &DomainSpec::channel_seed)
      .def_readwrite("channel_strength", &DomainSpec::channel_strength)
      .def_readwrite("token_prior_skew", &DomainSpec::token_prior_skew)
      .def_readwrite("frames_per_token", &DomainSpec::frames_per_token);

  py::class_<Utterance>(m, "Utterance")
      .def(py::init<>())
      .def_readwrite("id", &Utterance::id)
      .def_readwrite("features", &Utterance::features)
      .def_readwrite("reference", &Utterance::reference)
      .def_readwrite("domain", &Utterance::domain);

  py::class_<Corpus>(m, "Corpus")
      .def(py::init<>())
      .def_readwrite("vocab", &Corpus::vocab)
      .def_readwrite("domain", &Corpus::domain)
      .def_readwrite("codebook_seed", &Corpus::codebook_seed)
      .def_readwrite("utterances", &Corpus::utterances);

  m.def("make_codebook", &make_codebook, py::arg("vocab"),
        py::arg("feature_dim"), py::arg("seed"));
  m.def("synth_corpus", &synth_corpus, py::arg("vocab"), py::arg("domain"),
        py::arg("codebook"), py::arg("count"), py::arg("min_len"),
        py::arg("max_len"), py::arg("seed"));
  m.def("save_corpus", &save_corpus, py::arg("corpus"), py::arg("path"));
  m.def("load_corpus", &load_corpus, py::arg("path"));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("enc_layers", &ModelConfig::enc_layers)
      .def_readwrite("dec_layers", &ModelConfig::dec_layers)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("model_dim", &ModelConfig::model_dim)
      .def_readwrite("ff_dim", &ModelConfig::ff_dim)
      .def_readwrite("feature_dim", &ModelConfig::feature_dim)
      .def_readwrite("vocab", &ModelConfig::vocab)
      .def_readwrite("max_len", &ModelConfig::max_len)
      .def_readwrite("init_seed", &ModelConfig::init_seed);

  py::class_<Model>(m, "Model")
      .def(py::init<>())
      .def_readonly("config", &Model::config)
      .def_readonly("step_count", &Model::step_count)
      .def("param_count", &Model::param_count);

  m.def("init_model", &init_model, py::arg("config"));
  m.def(
      "load_model",
      [](const std::string& path) {
        Model model;
        OptimState optim;
        load_checkpoint(path, model, optim);
        return model;
      },
      py::arg("path"));
  m.def(
      "save_model",
      [](const Model& model, const std::string& path) {
        save_checkpoint(model, init_optim(model, 1e-5, 1), path);
      },
      py::arg("model"), py::arg("path"));

  py::class_<DecodeTrace>(m, "DecodeTrace")
      .def_readonly("tokens", &DecodeTrace::tokens)
      .def_readonly("step_max_prob", &DecodeTrace::step_max_prob)
      .def_readonly("step_token_prob", &DecodeTrace::step_token_prob)
      .def_readonly("attention", &DecodeTrace::attention)
      .def_readonly("log_likelihood", &DecodeTrace::log_likelihood)
      .def_readonly("truncated", &DecodeTrace::truncated)
      .def_readonly("prompt_len", &DecodeTrace::prompt_len)
      .def("content_tokens", &DecodeTrace::content_tokens);

  m.def("greedy_decode", &greedy_decode, py::arg("model"), py::arg("utterance"),
        py::arg("max_len") = 0);

  py::class_<TokenScores>(m, "TokenScores")
      .def_readonly("positions", &TokenScores::positions)
      .def_readonly("raw_conf", &TokenScores::raw_conf)
      .def_readonly("raw_attn", &TokenScores::raw_attn)
      .def_readonly("conf", &TokenScores::conf)
      .def_readonly("attn", &TokenScores::attn)
      .def_readonly("star", &TokenScores::star);

  py::class_<IndicatorConfig>(m, "IndicatorConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &IndicatorConfig::lambda)
      .def_readwrite("tau", &IndicatorConfig::tau)
      .def_readwrite("epsilon", &IndicatorConfig::epsilon)
      .def_readwrite("renorm_star", &IndicatorConfig::renorm_star);

  m.def(
      "score_trace",
      [](const DecodeTrace& t, const IndicatorConfig& cfg) {
        return score_trace(t, cfg);
      },
      py::arg("trace"), py::arg("config") = IndicatorConfig());
  m.def(
      "star_combine",
      [](double conf, double attn, const IndicatorConfig& cfg) {
        return star_combine_scalar(conf, attn, cfg);
      },
      py::arg("conf"), py::arg("attn"), py::arg("config") = IndicatorConfig());

  m.def(
      "edit_distance",
      [](const std::vector<int>& hyp, const std::vector<int>& ref) {
        return edit_distance(hyp, ref).distance;
      },
      py::arg("hyp"), py::arg("ref"));
  m.def("ter", &ter, py::arg("hyps"), py::arg("refs"));

  py::class_<AdaptConfig>(m, "AdaptConfig")
      .def(py::init<>())
      .def_readwrite("indicator", &AdaptConfig::indicator)
      .def_readwrite("alpha", &AdaptConfig::alpha)
      .def_readwrite("K", &AdaptConfig::K)
      .def_readwrite("rho", &AdaptConfig::rho)
      .def_readwrite("beam_n", &AdaptConfig::beam_n)
      .def_readwrite("lr", &AdaptConfig::lr)
      .def_readwrite("epochs", &AdaptConfig::epochs)
      .def_readwrite("grad_accum", &AdaptConfig::grad_accum)
      .def_readwrite("rounds", &AdaptConfig::rounds)
      .def_readwrite("seed", &AdaptConfig::seed)
      .def_readwrite("threads", &AdaptConfig::threads)
      .def_property(
          "filter",
          [](const AdaptConfig& a) {
            return std::string(filter_origin_name(a.filter_origin));
          },
          [](AdaptConfig& a, const std::string& s) {
            a.filter_origin = filter_origin_from_name(s);
          })
      .def_property(
          "weights",
          [](const AdaptConfig& a) {
            return std::string(weight_mode_name(a.weight_mode));
          },
          [](AdaptConfig& a, const std::string& s) {
            a.weight_mode = weight_mode_from_name(s);
          });

  m.def(
      "run_star",
      [](const Model& model, const Corpus& corpus, const AdaptConfig& cfg) {
        auto [adapted, report] = run_star(model, corpus, cfg);
        py::dict rep;
        py::list rounds;
        for (const RoundReport& r : report.rounds) {
          py::dict jr;
          jr["round"] = r.round;
          jr["total"] = r.total;
          jr["kept"] = r.kept;
          if (r.pseudo_ter) jr["pseudo_ter"] = *r.pseudo_ter;
          jr["losses"] = r.losses;
          rounds.append(jr);
        }
        rep["rounds"] = rounds;
        rep["kept_ids"] = report.kept_ids;
        rep["dropped_ids"] = report.dropped_ids;
        return py::make_tuple(adapted, rep);
      },
      py::arg("model"), py::arg("corpus"), py::arg("config"));

  m.def("corpus_ter", &corpus_ter, py::arg("model"), py::arg("corpus"),
        py::arg("threads") = 0);
}
