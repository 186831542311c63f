#include <iostream>

#include "CLI11.hpp"
#include "star/error.hpp"
#include "star/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"STAR self-taught sequence recognizer laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::int64_t seed = 0;
  std::string out = "out";
  bool force = false;
  std::string arm = "star";
  std::string axis;
  std::vector<std::string> checkpoints;
  std::string report_input;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key=value config file");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--out", out, "output directory");
  };

  CLI::App* gen = app.add_subcommand("gen-corpus", "synthesize corpora");
  add_common(gen);
  gen->add_flag("--force", force, "overwrite existing outputs");

  CLI::App* train = app.add_subcommand("train-source", "train the source model");
  add_common(train);

  CLI::App* adapt = app.add_subcommand("adapt", "adapt to a target domain");
  add_common(adapt);
  adapt->add_option("--arm", arm,
                    "star|self-train|utt-only|conf-only|attn-only|supervised");

  CLI::App* eval = app.add_subcommand("evaluate", "evaluate checkpoints");
  add_common(eval);
  eval->add_option("checkpoints", checkpoints, "checkpoint files")
      ->required();

  CLI::App* sweep = app.add_subcommand("sweep", "run a hyperparameter sweep");
  add_common(sweep);
  sweep->add_option("--axis", axis,
                    "train_size|threshold|rounds|alpha|lambda|tau")
      ->required();

  CLI::App* report = app.add_subcommand("report", "pretty-print a report file");
  report->add_option("input", report_input, "report file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : star::kExitUsage;
  }

  try {
    star::KVConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    if (gen->parsed()) return star::cmd_gen_corpus(cfg, seed, out, force);
    if (train->parsed()) return star::cmd_train_source(cfg, seed, out);
    if (adapt->parsed()) return star::cmd_adapt(cfg, seed, arm, out);
    if (eval->parsed()) return star::cmd_evaluate(cfg, checkpoints, out);
    if (sweep->parsed()) return star::cmd_sweep(cfg, seed, axis, out);
    if (report->parsed()) return star::cmd_report(report_input);
  } catch (const star::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return star::kExitUsage;
  } catch (const star::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return star::kExitInput;
  } catch (const star::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return star::kExitInput;
  } catch (const star::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return star::kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return star::kExitUsage;
}
