#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sms/feature_store.hpp"
#include "sms/mapper.hpp"
#include "sms/oracle.hpp"
#include "sms/search.hpp"

namespace sms {

// One selected combination for one video.
struct SelectionRecord {
  std::string video_id;
  std::string strategy;  // base | sms | random | brute
  FrameCombination frames;
  double objective = 0.0;   // oracle loss or cosine distance, per producer
  long long evaluations = 0;
};

// JSON-lines {"video_id","strategy","frames","objective","evaluations"};
// the strategy field is optional on read and defaults to "sms".
std::vector<SelectionRecord> read_selections(const std::filesystem::path& path);
void write_selections(const std::filesystem::path& path,
                      const std::vector<SelectionRecord>& records);

// Deterministic 80/20-style split of video ids (ids are sorted before the
// seeded shuffle so the split depends only on the id set and the seed).
struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> eval;
};
DatasetSplit split_train_eval(std::vector<std::string> ids, double holdout_fraction,
                              std::uint64_t seed);

struct StrategyMetrics {
  int videos = 0;
  double mean_loss = 0.0;
  double top1_accuracy = 0.0;
  double mean_evaluations = 0.0;
  bool has_planted = false;
  double planted_precision = 0.0;
  double planted_recall = 0.0;
};

struct EvalReport {
  std::map<std::string, StrategyMetrics> per_strategy;
};

// ---- command implementations (the CLI front-end maps flags onto these) ----

struct SearchLabelsOptions {
  std::filesystem::path manifest;
  std::filesystem::path probe;    // built-in probe oracle, or
  std::string oracle_command;     // remote oracle command (exactly one of the two)
  std::filesystem::path out;
  int n = 8;
  int clip_len = 30;
  int budget = 400;
  int workers = 0;  // 0 = hardware concurrency
  std::uint64_t seed = 1;
  double lambda_alpha = 0.3;
  double clip_budget_fraction = 0.5;
  bool quiet = false;
};

struct SearchLabelsSummary {
  int videos = 0;
  int failures = 0;
  double mean_objective = 0.0;
  double mean_evaluations = 0.0;
};

SearchLabelsSummary run_search_labels(const SearchLabelsOptions& options);

struct TrainMapperOptions {
  std::filesystem::path manifest;
  std::filesystem::path labels;
  std::filesystem::path out_model;
  std::filesystem::path out_report;  // optional; empty = skip
  MapperConfig arch;
  TrainConfig train;
  double holdout_fraction = 0.2;
  std::uint64_t split_seed = 1;
  bool quiet = false;
};

struct TrainMapperSummary {
  int train_examples = 0;
  int eval_examples = 0;
  TrainReport report;
};

TrainMapperSummary run_train_mapper(const TrainMapperOptions& options);

struct SelectOptions {
  std::filesystem::path manifest;
  std::filesystem::path model;  // sms strategy
  std::filesystem::path probe;  // brute strategy
  std::filesystem::path out;
  std::string strategy = "sms";  // sms | base | random | brute
  std::string split = "all";     // all | train | eval
  int n = 8;
  int budget = 150;
  int workers = 0;
  std::uint64_t seed = 1;
  double lambda_alpha = 0.3;
  long long brute_cap = 1'000'000;
  double holdout_fraction = 0.2;
  std::uint64_t split_seed = 1;
  bool quiet = false;
};

struct SelectSummary {
  int videos = 0;
  int failures = 0;
  double mean_objective = 0.0;
};

SelectSummary run_select(const SelectOptions& options);

struct EvalOptions {
  std::filesystem::path manifest;
  std::filesystem::path probe;
  std::vector<std::filesystem::path> selections;
  std::filesystem::path out_json;  // optional; empty = skip
  std::filesystem::path out_csv;   // optional; empty = skip
  std::string split = "all";
  double holdout_fraction = 0.2;
  std::uint64_t split_seed = 1;
  bool quiet = false;
};

EvalReport run_eval(const EvalOptions& options);

struct CompareSearchOptions {
  std::filesystem::path manifest;
  std::filesystem::path probe;
  std::vector<std::string> algorithms;  // subset of {hier, flat, brute}
  std::vector<int> budgets;
  std::filesystem::path out_csv;
  int n = 8;
  int clip_len = 30;
  int workers = 0;
  int limit = 0;  // 0 = all videos
  std::uint64_t seed = 1;
  double lambda_alpha = 0.3;
  long long brute_cap = 1'000'000;
  bool quiet = false;
};

struct CompareRow {
  std::string algorithm;
  std::string video_id;  // "ALL" for aggregate rows
  double eval_count = 0.0;
  double best_objective = 0.0;
  std::string note;
};

std::vector<CompareRow> run_compare_search(const CompareSearchOptions& options);

// Serves the remote-oracle stdio protocol over stdin/stdout using the
// built-in probe. Returns a process exit code.
int serve_probe(const std::filesystem::path& manifest, const std::filesystem::path& probe);

}  // namespace sms
