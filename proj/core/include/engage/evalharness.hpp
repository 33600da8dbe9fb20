#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "engage/config.hpp"
#include "engage/models.hpp"
#include "engage/preprocess.hpp"
#include "engage/stats.hpp"

namespace engage::eval {

/// All labeled windows of a corpus in training layout (columns = windows).
struct WindowDataset {
  std::vector<std::string> participants;  // sorted, unique
  Eigen::MatrixXd gamepad;                // 31 x N
  Eigen::MatrixXd frames;                 // C x N (pooled)
  std::vector<int> labels;                // 0 = LOW, 1 = HIGH
  std::vector<int> levels;                // t_L
  std::vector<int> participant;           // index into participants
  std::vector<double> t_start;

  static WindowDataset from_windows(const std::vector<preprocess::LabeledWindow>& windows);

  std::size_t size() const { return labels.size(); }
  /// Window indices belonging to the given participants, in dataset order.
  std::vector<std::size_t> indices_for(const std::vector<std::string>& ids) const;
  models::Batch batch(std::span<const std::size_t> indices) const;
};

struct FoldPlan {
  int repeat = 0;
  int fold = 0;
  std::uint64_t seed = 0;  // repeat seed
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  /// "repeat/fold/test ids/validation ids", the pairing key across configurations.
  std::string key() const;
};

inline constexpr std::uint64_t kDefaultExperimentSeed = 20240917;

/// Repeat seeds derived from one base seed (one per repeat).
std::vector<std::uint64_t> default_repeat_seeds(std::size_t repeats = 4, std::uint64_t base = kDefaultExperimentSeed);

/// Per repeat: shuffle ids with the repeat seed, cut into consecutive pairs;
/// fold k tests pair k, validates on pair k+1 (mod folds) and trains on the
/// rest. `expected_participants` (20 for the real corpus) must match.
std::vector<FoldPlan> make_folds(std::vector<std::string> ids, std::span<const std::uint64_t> repeat_seeds,
                                 std::size_t expected_participants = 20);

/// Throws DataError when train/validation/test participants or windows overlap.
void check_no_leakage(const FoldPlan& plan, const WindowDataset& data);

struct TrainOptions {
  int max_epochs = 50;
  int patience = 5;
  double learning_rate = 0.005;
  std::size_t batch_size = 256;
};

/// Patience rule on validation accuracy; improvement must be strict.
class EarlyStopping {
 public:
  EarlyStopping(int patience, int max_epochs) : patience_(patience), max_epochs_(max_epochs) {}

  /// Records one epoch; returns true when it set a new best.
  bool update(double validation_accuracy);
  bool should_stop() const { return epochs_ >= max_epochs_ || epochs_ - best_epoch_ >= patience_; }
  int epochs_run() const { return epochs_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int max_epochs_;
  int epochs_ = 0;
  int best_epoch_ = 0;
  double best_ = -1.0;
};

struct FoldResult {
  double test_accuracy = 0.0;
  double baseline_accuracy = 0.0;
  double best_validation = 0.0;
  int epochs_run = 0;
  int best_epoch = 0;
  std::vector<double> validation_history;
  std::vector<std::size_t> test_indices;
  std::vector<int> predictions;  // aligned with test_indices
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  std::size_t n_test = 0;
};

/// Majority class of the plan's training windows (ties go to HIGH).
int majority_class(const FoldPlan& plan, const WindowDataset& data);
/// Accuracy of predicting the training majority class on the test windows.
double majority_baseline(const FoldPlan& plan, const WindowDataset& data);

/// Accuracy of argmax predictions, evaluated in chunks.
double accuracy(const models::Network& net, const WindowDataset& data, std::span<const std::size_t> indices,
                std::vector<int>* predictions = nullptr);

/// Trains `config` (weights seeded from config.seed) on the plan's training
/// participants with Adam and early stopping, restores the best-validation
/// weights and scores the test participants.
FoldResult train_fold(const FoldPlan& plan, const models::ModelConfig& config, const WindowDataset& data,
                      const TrainOptions& options, models::Network* trained = nullptr);

/// Weight-init seed for a plan; identical for every configuration.
std::uint64_t fold_seed(const FoldPlan& plan);

struct Configuration {
  models::Modality modality = models::Modality::kFusion;
  timecond::Strategy strategy = timecond::Strategy::kNone;

  std::string name() const;  // e.g. "fusion/M_SSAL"
  static Configuration parse(const std::string& name);
  bool operator==(const Configuration&) const = default;
};

struct ExperimentConfig {
  std::vector<models::Modality> modalities{models::Modality::kGamepad, models::Modality::kFrames,
                                           models::Modality::kFusion};
  std::vector<timecond::Strategy> strategies{timecond::Strategy::kNone, timecond::Strategy::kSll,
                                             timecond::Strategy::kSsll, timecond::Strategy::kSsal};
  std::vector<std::uint64_t> repeat_seeds = default_repeat_seeds(4);
  std::size_t folds = 0;  // folds run per repeat; 0 = all
  std::size_t participants = 20;
  TrainOptions train;
  double dropout = 0.1;
  timecond::EmbeddingSpec embedding;
  unsigned jobs = 1;

  std::vector<Configuration> configurations() const;

  static std::vector<std::string> known_keys();
  static ExperimentConfig from_kv(const KeyValueConfig& kv);
  KeyValueConfig to_kv() const;
};

/// One row of the per-fold records file.
struct FoldRecord {
  std::string configuration;
  int repeat = 0;
  int fold = 0;
  std::string test_ids;        // "+"-joined
  std::string validation_ids;  // "+"-joined
  double test_accuracy = 0.0;
  double baseline_accuracy = 0.0;
  double best_validation = 0.0;
  int epochs_run = 0;
  int best_epoch = 0;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  std::size_t n_test = 0;

  std::string plan_key() const;
};

using ProgressFn = std::function<void(const FoldRecord&, std::size_t done, std::size_t total)>;

/// Runs every configuration on every fold plan. Folds execute on
/// `config.jobs` worker threads; records come back in (configuration,
/// repeat, fold) order regardless of scheduling.
std::vector<FoldRecord> run_experiment(const ExperimentConfig& config, const WindowDataset& data,
                                       const ProgressFn& progress = {});

void write_records(const std::vector<FoldRecord>& records, const std::filesystem::path& path);
std::string format_records(const std::vector<FoldRecord>& records);
std::vector<FoldRecord> read_records(const std::filesystem::path& path);

// ---------------------------------------------------------------- reporting

struct ConfigurationSummary {
  std::string configuration;
  stats::Summary accuracy;
};

struct PairComparison {
  std::string first;
  std::string second;
  double mean_difference = 0.0;  // first - second
  stats::WilcoxonResult test;
  double adjusted_p = 1.0;
  bool significant = false;
};

struct EvalReport {
  std::vector<ConfigurationSummary> configurations;
  ConfigurationSummary baseline;
  std::vector<PairComparison> comparisons;  // all pairs incl. baseline, Bonferroni over all
};

inline constexpr const char* kBaselineName = "baseline/majority";

/// Throws DataError when configurations were not evaluated on identical fold plans.
EvalReport aggregate(const std::vector<FoldRecord>& records);

/// Accuracy grid (modalities x strategies) with mean, 95% CI and best fold.
std::string render_table(const EvalReport& report);
std::string render_significance(const EvalReport& report);
/// Tab-separated summary rows (one per configuration plus the baseline).
std::string format_summary(const EvalReport& report);

}  // namespace engage::eval
