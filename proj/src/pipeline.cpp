#include "sms/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "sms/rng.hpp"

namespace sms {

namespace {

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  int n = workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency());
  n = std::max(1, std::min<int>(n, static_cast<int>(count)));
  if (n == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (int t = 0; t < n; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

std::vector<std::string> sorted_ids(const Dataset& dataset) {
  std::vector<std::string> ids = dataset.video_ids();
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::string> apply_split(const std::vector<std::string>& ids,
                                     const std::string& split, double holdout_fraction,
                                     std::uint64_t split_seed) {
  if (split == "all") return ids;
  DatasetSplit parts = split_train_eval(ids, holdout_fraction, split_seed);
  if (split == "train") return parts.train;
  if (split == "eval") return parts.eval;
  throw ArgumentError("unknown split: " + split);
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

}  // namespace

std::vector<SelectionRecord> read_selections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open selections file: " + path.string());
  std::vector<SelectionRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      SelectionRecord record;
      record.video_id = j.at("video_id").get<std::string>();
      record.strategy = j.value("strategy", "sms");
      record.frames = FrameCombination(j.at("frames").get<std::vector<int>>());
      record.objective = j.at("objective").get<double>();
      record.evaluations = j.value("evaluations", 0LL);
      records.push_back(std::move(record));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("bad selections line: " + std::string(ex.what()));
    }
  }
  return records;
}

void write_selections(const std::filesystem::path& path,
                      const std::vector<SelectionRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const SelectionRecord& record : records) {
    nlohmann::json j{{"video_id", record.video_id},
                     {"strategy", record.strategy},
                     {"frames", record.frames.indices()},
                     {"objective", record.objective},
                     {"evaluations", record.evaluations}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetSplit split_train_eval(std::vector<std::string> ids, double holdout_fraction,
                              std::uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
    throw ArgumentError("holdout fraction must be in [0, 1)");
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_int(i);
    std::swap(ids[i - 1], ids[j]);
  }
  const std::size_t holdout =
      static_cast<std::size_t>(holdout_fraction * static_cast<double>(ids.size()));
  DatasetSplit split;
  split.train.assign(ids.begin(), ids.end() - holdout);
  split.eval.assign(ids.end() - holdout, ids.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

SearchLabelsSummary run_search_labels(const SearchLabelsOptions& options) {
  if (options.probe.empty() == options.oracle_command.empty())
    throw ArgumentError("search-labels: provide exactly one of --probe and --oracle-cmd");

  const Dataset dataset = Dataset::load(options.manifest);
  std::unique_ptr<LossOracle> oracle;
  if (!options.probe.empty()) {
    oracle = std::make_unique<ProbeOracle>(load_probe(options.probe), dataset);
  } else {
    oracle = make_remote_oracle(options.oracle_command);
  }

  const std::vector<std::string> ids = sorted_ids(dataset);
  std::vector<SelectionRecord> records(ids.size());
  std::vector<std::string> errors(ids.size());

  parallel_for(ids.size(), options.workers, [&](std::size_t i) {
    try {
      const VideoSample& sample = dataset.at(ids[i]);
      CountingOracle counter(*oracle);
      GlsConfig config{.lambda_alpha = options.lambda_alpha,
                       .max_evaluations = options.budget,
                       .seed = derive_seed(options.seed, ids[i]),
                       .clip_budget_fraction = options.clip_budget_fraction};
      const SearchResult result =
          hierarchical_search(sample.features, counter, options.clip_len, options.n, config);
      if (counter.eval_count() > options.budget)
        throw BudgetError("search exceeded its evaluation budget");
      records[i] = {ids[i], "sms", result.best, result.objective, counter.eval_count()};
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });

  SearchLabelsSummary summary;
  std::vector<SelectionRecord> completed;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!errors[i].empty()) {
      ++summary.failures;
      if (!options.quiet)
        std::cerr << "search-labels: " << ids[i] << " failed: " << errors[i] << '\n';
      continue;
    }
    summary.mean_objective += records[i].objective;
    summary.mean_evaluations += static_cast<double>(records[i].evaluations);
    completed.push_back(std::move(records[i]));
  }
  summary.videos = static_cast<int>(ids.size());
  if (!completed.empty()) {
    summary.mean_objective /= static_cast<double>(completed.size());
    summary.mean_evaluations /= static_cast<double>(completed.size());
  }
  write_selections(options.out, completed);
  if (!options.quiet) {
    std::cout << "search-labels: " << completed.size() << "/" << ids.size()
              << " videos, mean objective " << summary.mean_objective
              << ", mean evaluations " << summary.mean_evaluations << '\n';
  }
  return summary;
}

TrainMapperSummary run_train_mapper(const TrainMapperOptions& options) {
  const Dataset dataset = Dataset::load(options.manifest);
  const std::vector<SelectionRecord> labels = read_selections(options.labels);
  if (labels.empty()) throw ArgumentError("train-mapper: empty labels file");

  MapperConfig arch = options.arch;
  if (arch.model_dim == 0) arch.model_dim = dataset.dim();
  if (arch.model_dim != dataset.dim())
    throw ArgumentError("train-mapper: model_dim does not match dataset dimension");

  std::map<std::string, TrainingExample> examples;
  for (const SelectionRecord& record : labels) {
    if (!dataset.contains(record.video_id))
      throw DataError("train-mapper: labels reference unknown video " + record.video_id);
    const VideoSample& sample = dataset.at(record.video_id);
    TrainingExample example;
    example.inputs = sample.features;
    example.target = mean_pool_rows(sample.features.rows, record.frames.indices());
    if (example.target.norm() == 0.0)
      throw DataError("train-mapper: zero-norm target for " + record.video_id);
    examples.emplace(record.video_id, std::move(example));
  }

  std::vector<std::string> ids;
  ids.reserve(examples.size());
  for (const auto& [id, example] : examples) ids.push_back(id);
  const DatasetSplit split =
      split_train_eval(ids, options.holdout_fraction, options.split_seed);
  if (split.train.empty()) throw ArgumentError("train-mapper: empty training split");

  std::vector<TrainingExample> train_set;
  for (const std::string& id : split.train) train_set.push_back(examples.at(id));
  std::vector<TrainingExample> eval_set;
  for (const std::string& id : split.eval) eval_set.push_back(examples.at(id));

  MapperParams params =
      MapperParams::init(arch, options.train.seed, options.train.weight_init_scale);
  TrainMapperSummary summary;
  summary.train_examples = static_cast<int>(train_set.size());
  summary.eval_examples = static_cast<int>(eval_set.size());
  summary.report = train(train_set, params, options.train,
                         eval_set.empty() ? nullptr : &eval_set);

  save_params(options.out_model, params);
  if (!options.out_report.empty()) {
    nlohmann::json j{{"variant", to_string(arch.variant)},
                     {"train_examples", summary.train_examples},
                     {"eval_examples", summary.eval_examples},
                     {"train_loss", summary.report.train_loss},
                     {"validation_loss", summary.report.validation_loss}};
    std::ofstream out(options.out_report, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + options.out_report.string());
    out << j.dump(2) << '\n';
  }
  if (!options.quiet) {
    std::cout << "train-mapper: " << summary.train_examples << " train / "
              << summary.eval_examples << " held-out examples, final train loss "
              << summary.report.train_loss.back();
    if (!summary.report.validation_loss.empty())
      std::cout << ", final held-out loss " << summary.report.validation_loss.back();
    std::cout << '\n';
  }
  return summary;
}

SelectSummary run_select(const SelectOptions& options) {
  const Dataset dataset = Dataset::load(options.manifest);
  const std::vector<std::string> ids = apply_split(
      sorted_ids(dataset), options.split, options.holdout_fraction, options.split_seed);
  if (ids.empty()) throw ArgumentError("select: empty video split");

  std::optional<MapperParams> model;
  std::optional<LinearProbe> probe;
  if (options.strategy == "sms") {
    model = load_params(options.model);
    if (model->config.model_dim != dataset.dim())
      throw FormatError("select: model dimension does not match dataset");
  } else if (options.strategy == "brute") {
    probe = load_probe(options.probe);
  } else if (options.strategy != "base" && options.strategy != "random") {
    throw ArgumentError("select: unknown strategy " + options.strategy);
  }

  std::vector<SelectionRecord> records(ids.size());
  std::vector<std::string> errors(ids.size());
  parallel_for(ids.size(), options.workers, [&](std::size_t i) {
    try {
      const VideoSample& sample = dataset.at(ids[i]);
      const int m = sample.features.frame_count();
      SelectionRecord record;
      record.video_id = ids[i];
      record.strategy = options.strategy;
      if (options.strategy == "base") {
        record.frames = uniform_baseline(m, options.n);
      } else if (options.strategy == "random") {
        record.frames =
            uniform_baseline_random(m, options.n, derive_seed(options.seed, ids[i]));
      } else if (options.strategy == "brute") {
        const Objective objective = [&](const FrameCombination& combination) {
          return probe_loss(*probe, sample.features, combination, sample.label);
        };
        const BruteResult result =
            brute_force(m, options.n, objective, options.brute_cap);
        record.frames = result.best;
        record.objective = result.objective;
        record.evaluations = result.evaluated;
      } else {
        const Vector predicted = forward(*model, sample.features);
        GlsConfig config{.lambda_alpha = options.lambda_alpha,
                         .max_evaluations = options.budget,
                         .seed = derive_seed(options.seed, ids[i])};
        const SearchResult result =
            stage3_search(sample.features, predicted, options.n, config);
        record.frames = result.best;
        record.objective = result.objective;
        record.evaluations = result.trace.evaluations;
      }
      records[i] = std::move(record);
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });

  SelectSummary summary;
  std::vector<SelectionRecord> completed;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!errors[i].empty()) {
      ++summary.failures;
      if (!options.quiet)
        std::cerr << "select: " << ids[i] << " failed: " << errors[i] << '\n';
      continue;
    }
    summary.mean_objective += records[i].objective;
    completed.push_back(std::move(records[i]));
  }
  summary.videos = static_cast<int>(ids.size());
  if (!completed.empty()) summary.mean_objective /= static_cast<double>(completed.size());
  write_selections(options.out, completed);
  if (!options.quiet) {
    std::cout << "select (" << options.strategy << "): " << completed.size() << "/"
              << ids.size() << " videos, mean objective " << summary.mean_objective << '\n';
  }
  return summary;
}

EvalReport run_eval(const EvalOptions& options) {
  const Dataset dataset = Dataset::load(options.manifest);
  const LinearProbe probe = load_probe(options.probe);
  const std::vector<std::string> split_ids = apply_split(
      sorted_ids(dataset), options.split, options.holdout_fraction, options.split_seed);
  const std::set<std::string> allowed(split_ids.begin(), split_ids.end());

  // Ground-truth sidecar next to the manifest, when present.
  std::map<std::string, std::set<int>> planted;
  const std::filesystem::path sidecar =
      options.manifest.parent_path() / "ground_truth.jsonl";
  if (std::filesystem::exists(sidecar)) {
    for (auto& [id, frames] : read_ground_truth(sidecar))
      planted.emplace(id, std::set<int>(frames.begin(), frames.end()));
  }

  // A selections argument may be "name=path" to override the records'
  // strategy labels, or a bare path.
  std::map<std::string, std::vector<SelectionRecord>> by_strategy;
  for (const std::filesystem::path& argument : options.selections) {
    std::string spec = argument.string();
    std::string override_name;
    if (const auto eq = spec.find('='); eq != std::string::npos &&
                                        !std::filesystem::exists(spec)) {
      override_name = spec.substr(0, eq);
      spec = spec.substr(eq + 1);
    }
    if (!std::filesystem::exists(spec))
      throw ArgumentError("eval: missing selections file: " + spec);
    for (SelectionRecord& record : read_selections(spec)) {
      if (!allowed.count(record.video_id)) continue;
      const std::string strategy =
          override_name.empty() ? record.strategy : override_name;
      by_strategy[strategy].push_back(std::move(record));
    }
  }
  if (by_strategy.empty()) throw ArgumentError("eval: no selection records in split");

  EvalReport report;
  for (auto& [strategy, records] : by_strategy) {
    std::set<std::string> covered;
    for (const SelectionRecord& record : records) covered.insert(record.video_id);
    for (const std::string& id : split_ids)
      if (!covered.count(id))
        throw DataError("eval: strategy " + strategy + " does not cover video " + id);

    StrategyMetrics metrics;
    int planted_videos = 0;
    for (const SelectionRecord& record : records) {
      const VideoSample& sample = dataset.at(record.video_id);
      const Vector aggregate =
          mean_pool_rows(sample.features.rows, record.frames.indices());
      metrics.mean_loss +=
          probe_loss(probe, sample.features, record.frames, sample.label);
      metrics.top1_accuracy += probe_predict(probe, aggregate) == sample.label ? 1.0 : 0.0;
      metrics.mean_evaluations += static_cast<double>(record.evaluations);
      if (auto it = planted.find(record.video_id); it != planted.end()) {
        const std::set<int> distinct(record.frames.indices().begin(),
                                     record.frames.indices().end());
        int hits = 0;
        for (int f : distinct) hits += it->second.count(f) ? 1 : 0;
        metrics.planted_precision += static_cast<double>(hits) / distinct.size();
        metrics.planted_recall += static_cast<double>(hits) / it->second.size();
        ++planted_videos;
      }
    }
    const double count = static_cast<double>(records.size());
    metrics.videos = static_cast<int>(records.size());
    metrics.mean_loss /= count;
    metrics.top1_accuracy /= count;
    metrics.mean_evaluations /= count;
    if (planted_videos > 0) {
      metrics.has_planted = true;
      metrics.planted_precision /= planted_videos;
      metrics.planted_recall /= planted_videos;
    }
    report.per_strategy.emplace(strategy, metrics);
  }

  if (!options.out_json.empty()) {
    nlohmann::json j;
    for (const auto& [strategy, metrics] : report.per_strategy) {
      nlohmann::json entry{{"videos", metrics.videos},
                           {"mean_loss", metrics.mean_loss},
                           {"top1_accuracy", metrics.top1_accuracy},
                           {"mean_evaluations", metrics.mean_evaluations}};
      if (metrics.has_planted) {
        entry["planted_precision"] = metrics.planted_precision;
        entry["planted_recall"] = metrics.planted_recall;
      }
      j[strategy] = std::move(entry);
    }
    std::ofstream out(options.out_json, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + options.out_json.string());
    out << j.dump(2) << '\n';
  }
  if (!options.out_csv.empty()) {
    std::ofstream out(options.out_csv, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + options.out_csv.string());
    out << "strategy,videos,mean_loss,top1_accuracy,planted_precision,planted_recall,"
           "mean_evaluations\n";
    for (const auto& [strategy, metrics] : report.per_strategy) {
      out << strategy << ',' << metrics.videos << ',' << format_double(metrics.mean_loss)
          << ',' << format_double(metrics.top1_accuracy) << ','
          << (metrics.has_planted ? format_double(metrics.planted_precision) : "") << ','
          << (metrics.has_planted ? format_double(metrics.planted_recall) : "") << ','
          << format_double(metrics.mean_evaluations) << '\n';
    }
  }
  if (!options.quiet) {
    for (const auto& [strategy, metrics] : report.per_strategy) {
      std::cout << "eval " << strategy << ": mean loss " << metrics.mean_loss
                << ", top-1 " << metrics.top1_accuracy;
      if (metrics.has_planted)
        std::cout << ", planted precision " << metrics.planted_precision << ", recall "
                  << metrics.planted_recall;
      std::cout << '\n';
    }
  }
  return report;
}

std::vector<CompareRow> run_compare_search(const CompareSearchOptions& options) {
  if (options.algorithms.empty()) throw ArgumentError("compare-search: no algorithms");
  if (options.budgets.empty()) throw ArgumentError("compare-search: no budgets");
  for (const std::string& algorithm : options.algorithms)
    if (algorithm != "hier" && algorithm != "flat" && algorithm != "brute")
      throw ArgumentError("compare-search: unknown algorithm " + algorithm);

  const Dataset dataset = Dataset::load(options.manifest);
  const LinearProbe probe = load_probe(options.probe);
  ProbeOracle oracle(probe, dataset);

  std::vector<std::string> ids = sorted_ids(dataset);
  if (options.limit > 0 && static_cast<int>(ids.size()) > options.limit)
    ids.resize(options.limit);

  std::vector<CompareRow> rows;
  for (const std::string& algorithm : options.algorithms) {
    // Brute force ignores the budget; its row is repeated per budget so
    // every algorithm contributes one row per budget.
    if (algorithm == "brute") {
      std::vector<double> objectives(ids.size());
      std::vector<double> evals(ids.size());
      std::vector<int> failed(ids.size(), 0);
      parallel_for(ids.size(), options.workers, [&](std::size_t i) {
        const VideoSample& sample = dataset.at(ids[i]);
        const Objective objective = [&](const FrameCombination& combination) {
          return probe_loss(probe, sample.features, combination, sample.label);
        };
        try {
          const BruteResult result = brute_force(sample.features.frame_count(), options.n,
                                                 objective, options.brute_cap);
          objectives[i] = result.objective;
          evals[i] = static_cast<double>(result.evaluated);
        } catch (const CapacityError&) {
          failed[i] = 1;
        }
      });
      double sum_objective = 0.0;
      double sum_evals = 0.0;
      int ok = 0;
      int skipped = 0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (failed[i]) {
          ++skipped;
          continue;
        }
        sum_objective += objectives[i];
        sum_evals += evals[i];
        ++ok;
      }
      CompareRow row;
      row.algorithm = "brute";
      row.video_id = "ALL";
      if (ok > 0) {
        row.eval_count = sum_evals / ok;
        row.best_objective = sum_objective / ok;
      } else {
        row.best_objective = std::numeric_limits<double>::quiet_NaN();
      }
      if (skipped > 0)
        row.note = "CapacityError:" + std::to_string(skipped) + "videos";
      for (std::size_t b = 0; b < options.budgets.size(); ++b) rows.push_back(row);
      continue;
    }

    for (const int budget : options.budgets) {
      std::vector<double> objectives(ids.size());
      std::vector<double> evals(ids.size());
      std::vector<std::string> errors(ids.size());
      parallel_for(ids.size(), options.workers, [&](std::size_t i) {
        try {
          const VideoSample& sample = dataset.at(ids[i]);
          CountingOracle counter(oracle);
          GlsConfig config{.lambda_alpha = options.lambda_alpha,
                           .max_evaluations = budget,
                           .seed = derive_seed(options.seed, ids[i])};
          const int clip_len = algorithm == "flat" ? sample.features.frame_count()
                                                   : options.clip_len;
          const SearchResult result =
              hierarchical_search(sample.features, counter, clip_len, options.n, config);
          objectives[i] = result.objective;
          evals[i] = static_cast<double>(counter.eval_count());
        } catch (const std::exception& ex) {
          errors[i] = ex.what();
        }
      });
      CompareRow row;
      row.algorithm = algorithm;
      row.video_id = "ALL";
      int ok = 0;
      int failed = 0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!errors[i].empty()) {
          ++failed;
          continue;
        }
        row.eval_count += evals[i];
        row.best_objective += objectives[i];
        ++ok;
      }
      if (ok > 0) {
        row.eval_count /= ok;
        row.best_objective /= ok;
      } else {
        row.best_objective = std::numeric_limits<double>::quiet_NaN();
      }
      if (failed > 0) row.note = "Error:" + std::to_string(failed) + "videos";
      rows.push_back(std::move(row));
    }
  }

  if (!options.out_csv.empty()) {
    std::ofstream out(options.out_csv, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + options.out_csv.string());
    out << "algorithm,video_id,eval_count,best_objective,note\n";
    for (const CompareRow& row : rows) {
      out << row.algorithm << ',' << row.video_id << ',' << format_double(row.eval_count)
          << ',' << format_double(row.best_objective) << ',' << row.note << '\n';
    }
  }
  if (!options.quiet) {
    for (const CompareRow& row : rows) {
      std::cout << "compare-search " << row.algorithm << ": mean evals " << row.eval_count
                << ", mean best objective " << row.best_objective
                << (row.note.empty() ? "" : " (" + row.note + ")") << '\n';
    }
  }
  return rows;
}

int serve_probe(const std::filesystem::path& manifest, const std::filesystem::path& probe_path) {
  const Dataset dataset = Dataset::load(manifest);
  ProbeOracle oracle(load_probe(probe_path), dataset);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    try {
      const nlohmann::json request = nlohmann::json::parse(line);
      const std::uint64_t id = request.at("id").get<std::uint64_t>();
      const double loss =
          oracle.loss(request.at("video_id").get<std::string>(),
                      FrameCombination(request.at("frames").get<std::vector<int>>()));
      const nlohmann::json response{{"id", id}, {"loss", loss}};
      std::cout << response.dump() << '\n' << std::flush;
    } catch (const std::exception& ex) {
      std::cerr << "serve-probe: " << ex.what() << '\n';
      return 1;
    }
  }
  return 0;
}

}  // namespace sms
