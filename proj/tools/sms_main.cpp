#include <CLI11.hpp>

#include <iostream>

#include "sms/pipeline.hpp"
#include "sms/rng.hpp"

namespace {

int run_gradcheck(int configs, int seeds, double tolerance, double step, int frames, int dim,
                  bool quiet) {
  sms::Rng rng(0x9e3779b9);
  bool ok = true;
  for (int c = 0; c < configs; ++c) {
    sms::MapperConfig config;
    config.variant = sms::MapperVariant::kTransformer;
    config.model_dim = dim;
    config.layers = 1 + (c % 2);
    config.heads = 2;
    config.ffn_dim = 8 + 8 * (c % 3);
    for (int s = 0; s < seeds; ++s) {
      const sms::MapperParams params = sms::MapperParams::init(config, rng.next_u64(), 0.5);
      sms::TrainingExample example;
      example.inputs.video_id = "gradcheck";
      example.inputs.rows.resize(frames, dim);
      for (int i = 0; i < frames; ++i)
        for (int j = 0; j < dim; ++j) example.inputs.rows(i, j) = rng.gaussian();
      example.target.resize(dim);
      do {
        for (int j = 0; j < dim; ++j) example.target(j) = rng.gaussian();
      } while (example.target.norm() == 0.0);

      const sms::GradCheckResult result = sms::gradient_check(params, example, step);
      const bool pass = result.max_rel_error <= tolerance;
      ok = ok && pass;
      if (!quiet) {
        std::cout << (pass ? "PASS" : "FAIL") << " layers=" << config.layers
                  << " ffn=" << config.ffn_dim << " seed#" << s << " max rel error "
                  << result.max_rel_error << '\n';
      }
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frame-selection engine: search, feature mapping, and evaluation"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  int workers = 0;
  bool quiet = false;
  app.add_option("--seed", seed, "run seed")->capture_default_str();
  app.add_option("--workers", workers, "worker threads (0 = logical cores)")
      ->capture_default_str();
  app.add_flag("--quiet", quiet, "suppress progress output");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic feature dataset");
  gen->fallthrough();
  sms::SynthConfig synth;
  std::string gen_out;
  gen->add_option("--videos", synth.num_videos)->capture_default_str();
  gen->add_option("--classes", synth.classes)->capture_default_str();
  gen->add_option("--frames", synth.frames_per_video)->capture_default_str();
  gen->add_option("--dim", synth.dim)->capture_default_str();
  gen->add_option("--informative", synth.informative_per_video)->capture_default_str();
  gen->add_option("--sigma", synth.noise_sigma)->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // fit-probe (loss-oracle training; kept separate so the probe can be reused)
  auto* fit = app.add_subcommand("fit-probe", "fit the linear softmax probe oracle");
  fit->fallthrough();
  std::string fit_manifest, fit_out;
  int fit_epochs = 500;
  double fit_lr = 1.0;
  fit->add_option("--manifest", fit_manifest)->required();
  fit->add_option("--out", fit_out, "probe JSON path")->required();
  fit->add_option("--epochs", fit_epochs)->capture_default_str();
  fit->add_option("--lr", fit_lr)->capture_default_str();

  // search-labels
  auto* labels = app.add_subcommand("search-labels",
                                    "stage 1: search best combinations per training video");
  labels->fallthrough();
  sms::SearchLabelsOptions labels_options;
  std::string labels_manifest, labels_probe, labels_out;
  labels->add_option("--manifest", labels_manifest)->required();
  labels->add_option("--probe", labels_probe, "probe JSON (built-in oracle)");
  labels->add_option("--oracle-cmd", labels_options.oracle_command,
                     "remote oracle child command");
  labels->add_option("--n", labels_options.n, "combination length")->capture_default_str();
  labels->add_option("--clip-len", labels_options.clip_len)->capture_default_str();
  labels->add_option("--budget", labels_options.budget)->capture_default_str();
  labels->add_option("--lambda-alpha", labels_options.lambda_alpha)->capture_default_str();
  labels->add_option("--clip-budget-fraction", labels_options.clip_budget_fraction)
      ->capture_default_str();
  labels->add_option("--out", labels_out)->required();

  // train-mapper
  auto* train = app.add_subcommand("train-mapper", "stage 2: train the feature mapper");
  train->fallthrough();
  sms::TrainMapperOptions train_options;
  std::string train_manifest, train_labels, train_model, train_report;
  std::string train_arch = "transformer";
  std::string train_optimizer = "adam";
  train_options.arch.model_dim = 0;  // resolved from the dataset
  train->add_option("--manifest", train_manifest)->required();
  train->add_option("--labels", train_labels)->required();
  train->add_option("--out", train_model, "model output path")->required();
  train->add_option("--report", train_report, "JSON loss-curve report path");
  train->add_option("--arch", train_arch, "transformer | mlp")->capture_default_str();
  train->add_option("--layers", train_options.arch.layers)->capture_default_str();
  train->add_option("--heads", train_options.arch.heads)->capture_default_str();
  train->add_option("--ffn-dim", train_options.arch.ffn_dim)->capture_default_str();
  train->add_option("--hidden-dim", train_options.arch.hidden_dim)->capture_default_str();
  train->add_option("--epochs", train_options.train.epochs)->capture_default_str();
  train->add_option("--lr", train_options.train.learning_rate)->capture_default_str();
  train->add_option("--batch", train_options.train.batch_size)->capture_default_str();
  train->add_option("--optimizer", train_optimizer, "adam | sgd")->capture_default_str();
  train->add_option("--init-scale", train_options.train.weight_init_scale)
      ->capture_default_str();
  train->add_option("--holdout", train_options.holdout_fraction)->capture_default_str();
  train->add_option("--split-seed", train_options.split_seed)->capture_default_str();

  // select
  auto* select = app.add_subcommand("select", "stage 3: select frames for each video");
  select->fallthrough();
  sms::SelectOptions select_options;
  std::string select_manifest, select_model, select_probe, select_out;
  select->add_option("--manifest", select_manifest)->required();
  select->add_option("--model", select_model, "mapper model (sms strategy)");
  select->add_option("--probe", select_probe, "probe JSON (brute strategy)");
  select->add_option("--out", select_out)->required();
  select->add_option("--strategy", select_options.strategy, "sms | base | random | brute")
      ->capture_default_str();
  select->add_option("--split", select_options.split, "all | train | eval")
      ->capture_default_str();
  select->add_option("--n", select_options.n)->capture_default_str();
  select->add_option("--budget", select_options.budget)->capture_default_str();
  select->add_option("--lambda-alpha", select_options.lambda_alpha)->capture_default_str();
  select->add_option("--brute-cap", select_options.brute_cap)->capture_default_str();
  select->add_option("--holdout", select_options.holdout_fraction)->capture_default_str();
  select->add_option("--split-seed", select_options.split_seed)->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "score selection strategies with the probe");
  eval->fallthrough();
  sms::EvalOptions eval_options;
  std::string eval_manifest, eval_probe, eval_json, eval_csv;
  std::vector<std::string> eval_selections;
  eval->add_option("--manifest", eval_manifest)->required();
  eval->add_option("--probe", eval_probe)->required();
  eval->add_option("--select", eval_selections,
                   "selections file, or name=path to relabel its strategy")
      ->required();
  eval->add_option("--out-json", eval_json);
  eval->add_option("--out-csv", eval_csv);
  eval->add_option("--split", eval_options.split, "all | train | eval")
      ->capture_default_str();
  eval->add_option("--holdout", eval_options.holdout_fraction)->capture_default_str();
  eval->add_option("--split-seed", eval_options.split_seed)->capture_default_str();

  // compare-search
  auto* compare = app.add_subcommand("compare-search",
                                     "evaluations-vs-loss curves for search algorithms");
  compare->fallthrough();
  sms::CompareSearchOptions compare_options;
  std::string compare_manifest, compare_probe, compare_out;
  compare_options.algorithms = {"hier", "flat"};
  compare->add_option("--manifest", compare_manifest)->required();
  compare->add_option("--probe", compare_probe)->required();
  compare->add_option("--algorithms", compare_options.algorithms, "hier flat brute")
      ->capture_default_str();
  compare->add_option("--budgets", compare_options.budgets)->required();
  compare->add_option("--out", compare_out, "CSV output path")->required();
  compare->add_option("--n", compare_options.n)->capture_default_str();
  compare->add_option("--clip-len", compare_options.clip_len)->capture_default_str();
  compare->add_option("--limit", compare_options.limit, "use only the first N videos")
      ->capture_default_str();
  compare->add_option("--lambda-alpha", compare_options.lambda_alpha)->capture_default_str();
  compare->add_option("--brute-cap", compare_options.brute_cap)->capture_default_str();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "finite-difference check of the mapper gradients");
  gradcheck->fallthrough();
  int gc_configs = 5;
  int gc_seeds = 3;
  double gc_tol = 1e-6;
  double gc_step = 1e-6;
  int gc_frames = 6;
  int gc_dim = 8;
  gradcheck->add_option("--configs", gc_configs)->capture_default_str();
  gradcheck->add_option("--seeds", gc_seeds)->capture_default_str();
  gradcheck->add_option("--tol", gc_tol)->capture_default_str();
  gradcheck->add_option("--step", gc_step)->capture_default_str();
  gradcheck->add_option("--frames", gc_frames)->capture_default_str();
  gradcheck->add_option("--dim", gc_dim)->capture_default_str();

  // serve-probe
  auto* serve = app.add_subcommand(
      "serve-probe", "serve probe losses over the stdio oracle protocol");
  serve->fallthrough();
  std::string serve_manifest, serve_probe_path;
  serve->add_option("--manifest", serve_manifest)->required();
  serve->add_option("--probe", serve_probe_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      synth.seed = seed;
      const auto manifest = sms::generate_synthetic(synth, gen_out);
      if (!quiet) std::cout << manifest.string() << '\n';
      return 0;
    }
    if (*fit) {
      const sms::Dataset dataset = sms::Dataset::load(fit_manifest);
      const sms::LinearProbe probe =
          sms::fit_linear_probe(dataset, fit_epochs, fit_lr, seed);
      sms::save_probe(fit_out, probe);
      if (!quiet) std::cout << "fit-probe: wrote " << fit_out << '\n';
      return 0;
    }
    if (*labels) {
      labels_options.manifest = labels_manifest;
      labels_options.probe = labels_probe;
      labels_options.out = labels_out;
      labels_options.seed = seed;
      labels_options.workers = workers;
      labels_options.quiet = quiet;
      const auto summary = sms::run_search_labels(labels_options);
      return summary.failures > 0 ? 1 : 0;
    }
    if (*train) {
      train_options.manifest = train_manifest;
      train_options.labels = train_labels;
      train_options.out_model = train_model;
      train_options.out_report = train_report;
      train_options.arch.variant = sms::mapper_variant_from_string(train_arch);
      train_options.train.optimizer = train_optimizer == "sgd"
                                          ? sms::OptimizerKind::kSgd
                                          : sms::OptimizerKind::kAdam;
      train_options.train.seed = seed;
      train_options.quiet = quiet;
      sms::run_train_mapper(train_options);
      return 0;
    }
    if (*select) {
      select_options.manifest = select_manifest;
      select_options.model = select_model;
      select_options.probe = select_probe;
      select_options.out = select_out;
      select_options.seed = seed;
      select_options.workers = workers;
      select_options.quiet = quiet;
      const auto summary = sms::run_select(select_options);
      return summary.failures > 0 ? 1 : 0;
    }
    if (*eval) {
      eval_options.manifest = eval_manifest;
      eval_options.probe = eval_probe;
      for (const std::string& s : eval_selections) eval_options.selections.emplace_back(s);
      eval_options.out_json = eval_json;
      eval_options.out_csv = eval_csv;
      eval_options.quiet = quiet;
      sms::run_eval(eval_options);
      return 0;
    }
    if (*compare) {
      compare_options.manifest = compare_manifest;
      compare_options.probe = compare_probe;
      compare_options.out_csv = compare_out;
      compare_options.seed = seed;
      compare_options.workers = workers;
      compare_options.quiet = quiet;
      sms::run_compare_search(compare_options);
      return 0;
    }
    if (*gradcheck) {
      return run_gradcheck(gc_configs, gc_seeds, gc_tol, gc_step, gc_frames, gc_dim, quiet);
    }
    if (*serve) {
      return sms::serve_probe(serve_manifest, serve_probe_path);
    }
  } catch (const sms::ArgumentError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}
