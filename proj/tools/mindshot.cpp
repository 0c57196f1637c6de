#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "mindshot/pipeline.hpp"

namespace {

using namespace mindshot;

// Exit codes: 0 success, 2 config error, 3 missing or inconsistent artifact,
// 4 numeric failure.
int dispatch(const std::string& command, const std::string& config_path, const StageOptions& opt,
             const AdaptVariant& variant, const std::string& eval_tag,
             const std::string& strategy, const std::string& axis) {
  const ExperimentConfig cfg = ExperimentConfig::load(config_path);
  if (command == "gen-data") {
    run_gen_data(cfg, opt);
  } else if (command == "pretrain") {
    run_pretrain(cfg, opt);
  } else if (command == "adapt") {
    run_adapt(cfg, variant, opt);
  } else if (command == "select") {
    const SelectionStrategy s =
        strategy.empty() ? cfg.selection_strategy : strategy_from_string(strategy);
    run_select(cfg, s, opt);
  } else if (command == "eval") {
    run_eval(cfg, eval_tag, opt);
  } else if (command == "report") {
    run_report(cfg, opt);
  } else if (command == "ablate") {
    run_ablate(cfg, axis, opt);
  } else if (command == "verify") {
    verify_run_dir(cfg);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mindshot: synthetic few-shot brain-decoding lab"};
  app.require_subcommand(1);

  std::string config_path;
  StageOptions opt;
  AdaptVariant variant;
  std::string eval_tag = "default";
  std::string strategy;
  std::string axis;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_flag("--force", opt.force, "run even when inputs disagree with the manifest");
  };

  add_common(app.add_subcommand("gen-data", "build and serialize the synthetic dataset"));
  add_common(app.add_subcommand("pretrain", "train the shared encoder on the source subjects"));

  CLI::App* adapt = app.add_subcommand("adapt", "train the new subject's adapter");
  add_common(adapt);
  adapt->add_option("--tag", variant.tag, "name for this adaptation run");
  adapt->add_option("--supervision", variant.supervision, "none | mse | amp | fourier");
  adapt->add_option("--shots", variant.shots, "train stimuli kept per class");
  adapt->add_flag("--use-selection", variant.use_selection,
                  "take the one-shot stimulus from the selection stage");
  adapt->add_option("--strategy", variant.selection_strategy,
                    "selection strategy to read (with --use-selection)");

  CLI::App* select = app.add_subcommand("select", "pick one stimulus per class by density");
  add_common(select);
  select->add_option("--strategy", strategy, "kda_max | kda_min | random");

  CLI::App* eval = app.add_subcommand("eval", "score an adapted subject on its test split");
  add_common(eval);
  eval->add_option("--tag", eval_tag, "adaptation run to score");

  add_common(app.add_subcommand("report", "aggregate eval runs into CSV tables"));

  CLI::App* ablate = app.add_subcommand("ablate", "sweep one axis and tabulate it");
  add_common(ablate);
  ablate->add_option("--axis", axis, "supervision | adapter_depth | shots | selection")
      ->required();

  add_common(app.add_subcommand("verify", "check artifacts against the manifest"));

  CLI11_PARSE(app, argc, argv);

  try {
    return dispatch(app.get_subcommands().front()->get_name(), config_path, opt, variant,
                    eval_tag, strategy, axis);
  } catch (const mindshot::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const mindshot::ArtifactError& e) {
    std::fprintf(stderr, "artifact error: %s\n", e.what());
    return 3;
  } catch (const mindshot::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
