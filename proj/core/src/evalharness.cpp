#include "engage/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include "engage/error.hpp"
#include "engage/text.hpp"

namespace engage::eval {

using models::Matrix;

// ---------------------------------------------------------------- dataset

WindowDataset WindowDataset::from_windows(const std::vector<preprocess::LabeledWindow>& windows) {
  WindowDataset d;
  std::set<std::string> ids;
  for (const auto& w : windows) ids.insert(w.participant_id);
  d.participants.assign(ids.begin(), ids.end());

  const auto n = static_cast<Eigen::Index>(windows.size());
  const Eigen::Index channels = windows.empty() ? models::kFrameChannels : windows.front().pooled_frames.size();
  d.gamepad.resize(models::kGamepadInputs, n);
  d.frames.resize(channels, n);
  d.labels.reserve(windows.size());
  d.levels.reserve(windows.size());
  d.participant.reserve(windows.size());
  d.t_start.reserve(windows.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& w = windows[static_cast<std::size_t>(j)];
    if (w.pooled_frames.size() != channels) throw DataError("windows disagree on frame feature width");
    for (std::size_t k = 0; k < preprocess::kGamepadFeatureCount; ++k) d.gamepad(static_cast<Eigen::Index>(k), j) = w.gamepad[k];
    d.frames.col(j) = w.pooled_frames;
    d.labels.push_back(static_cast<int>(w.label));
    d.levels.push_back(w.t_level);
    d.participant.push_back(static_cast<int>(
        std::lower_bound(d.participants.begin(), d.participants.end(), w.participant_id) - d.participants.begin()));
    d.t_start.push_back(w.t_start);
  }
  return d;
}

std::vector<std::size_t> WindowDataset::indices_for(const std::vector<std::string>& ids) const {
  std::vector<bool> wanted(participants.size(), false);
  for (const auto& id : ids) {
    auto it = std::lower_bound(participants.begin(), participants.end(), id);
    if (it != participants.end() && *it == id) wanted[static_cast<std::size_t>(it - participants.begin())] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (wanted[static_cast<std::size_t>(participant[i])]) out.push_back(i);
  }
  return out;
}

models::Batch WindowDataset::batch(std::span<const std::size_t> indices) const {
  models::Batch b;
  const auto n = static_cast<Eigen::Index>(indices.size());
  b.gamepad.resize(gamepad.rows(), n);
  b.frames.resize(frames.rows(), n);
  b.levels.resize(indices.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto i = indices[static_cast<std::size_t>(j)];
    b.gamepad.col(j) = gamepad.col(static_cast<Eigen::Index>(i));
    b.frames.col(j) = frames.col(static_cast<Eigen::Index>(i));
    b.levels[static_cast<std::size_t>(j)] = levels[i];
  }
  return b;
}

// ---------------------------------------------------------------- folds

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += '+';
    out += id;
  }
  return out;
}

// Fisher-Yates driven by Rng::below, so the order depends only on the seed.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::string FoldPlan::key() const {
  return std::to_string(repeat) + "/" + std::to_string(fold) + "/" + join_ids(test) + "/" + join_ids(validation);
}

std::vector<std::uint64_t> default_repeat_seeds(std::size_t repeats, std::uint64_t base) {
  std::vector<std::uint64_t> out;
  Rng root(base);
  for (std::size_t r = 0; r < repeats; ++r) out.push_back(root.split(r).next());
  return out;
}

std::vector<FoldPlan> make_folds(std::vector<std::string> ids, std::span<const std::uint64_t> repeat_seeds,
                                 std::size_t expected_participants) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DataError("duplicate participant id");
  if (ids.size() != expected_participants) {
    throw DataError("expected " + std::to_string(expected_participants) + " participants, found " +
                    std::to_string(ids.size()));
  }
  if (ids.size() < 6 || ids.size() % 2 != 0) {
    throw DataError("leave-2-out folds need an even participant count of at least 6");
  }
  const std::size_t folds = ids.size() / 2;
  std::vector<FoldPlan> plans;
  for (std::size_t r = 0; r < repeat_seeds.size(); ++r) {
    auto order = ids;
    Rng rng(repeat_seeds[r]);
    shuffle(order, rng);
    for (std::size_t k = 0; k < folds; ++k) {
      FoldPlan p;
      p.repeat = static_cast<int>(r);
      p.fold = static_cast<int>(k);
      p.seed = repeat_seeds[r];
      const std::size_t v = (k + 1) % folds;
      for (std::size_t pair = 0; pair < folds; ++pair) {
        auto& dst = pair == k ? p.test : pair == v ? p.validation : p.train;
        dst.push_back(order[2 * pair]);
        dst.push_back(order[2 * pair + 1]);
      }
      plans.push_back(std::move(p));
    }
  }
  return plans;
}

void check_no_leakage(const FoldPlan& plan, const WindowDataset& data) {
  std::set<std::string> seen;
  for (const auto* group : {&plan.train, &plan.validation, &plan.test}) {
    for (const auto& id : *group) {
      if (!seen.insert(id).second) throw DataError("fold leakage: participant " + id + " appears in two sets");
    }
  }
  const auto tr = data.indices_for(plan.train);
  const auto va = data.indices_for(plan.validation);
  const auto te = data.indices_for(plan.test);
  std::vector<int> owner(data.size(), -1);
  int tag = 0;
  for (const auto* idx : {&tr, &va, &te}) {
    for (auto i : *idx) {
      if (owner[i] != -1) throw DataError("fold leakage: window " + std::to_string(i) + " in two sets");
      owner[i] = tag;
    }
    ++tag;
  }
}

// ---------------------------------------------------------------- training

bool EarlyStopping::update(double validation_accuracy) {
  ++epochs_;
  if (validation_accuracy > best_) {
    best_ = validation_accuracy;
    best_epoch_ = epochs_;
    return true;
  }
  return false;
}

int majority_class(const FoldPlan& plan, const WindowDataset& data) {
  std::size_t high = 0, total = 0;
  for (auto i : data.indices_for(plan.train)) {
    high += data.labels[i] == 1 ? 1 : 0;
    ++total;
  }
  if (total == 0) throw DataError("fold has no training windows");
  return 2 * high >= total ? 1 : 0;
}

double majority_baseline(const FoldPlan& plan, const WindowDataset& data) {
  const int cls = majority_class(plan, data);
  const auto te = data.indices_for(plan.test);
  if (te.empty()) throw DataError("fold has no test windows");
  std::size_t hit = 0;
  for (auto i : te) hit += data.labels[i] == cls ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(te.size());
}

double accuracy(const models::Network& net, const WindowDataset& data, std::span<const std::size_t> indices,
                std::vector<int>* predictions) {
  if (indices.empty()) throw DataError("accuracy over an empty window set");
  constexpr std::size_t kChunk = 1024;
  std::size_t hit = 0;
  if (predictions) predictions->clear();
  for (std::size_t s = 0; s < indices.size(); s += kChunk) {
    const auto part = indices.subspan(s, std::min(kChunk, indices.size() - s));
    const Matrix p = models::predict(net, data.batch(part));
    for (std::size_t j = 0; j < part.size(); ++j) {
      const int pred = p(1, static_cast<Eigen::Index>(j)) > p(0, static_cast<Eigen::Index>(j)) ? 1 : 0;
      hit += pred == data.labels[part[j]] ? 1 : 0;
      if (predictions) predictions->push_back(pred);
    }
  }
  return static_cast<double>(hit) / static_cast<double>(indices.size());
}

std::uint64_t fold_seed(const FoldPlan& plan) {
  return Rng(plan.seed).split(0x1000u + static_cast<std::uint64_t>(plan.fold)).next();
}

FoldResult train_fold(const FoldPlan& plan, const models::ModelConfig& config, const WindowDataset& data,
                      const TrainOptions& options, models::Network* trained) {
  if (options.batch_size == 0 || options.max_epochs <= 0 || options.patience <= 0) {
    throw UsageError("training options must be positive");
  }
  check_no_leakage(plan, data);
  const auto train_idx = data.indices_for(plan.train);
  const auto val_idx = data.indices_for(plan.validation);
  const auto test_idx = data.indices_for(plan.test);
  if (train_idx.empty() || val_idx.empty() || test_idx.empty()) {
    throw DataError("fold " + plan.key() + ": empty train, validation or test set");
  }
  std::size_t high = 0;
  for (auto i : train_idx) high += data.labels[i] == 1 ? 1 : 0;
  if (high == 0 || high == train_idx.size()) {
    throw DataError("fold " + plan.key() + ": training set holds a single class (" + std::to_string(high) + " HIGH of " +
                    std::to_string(train_idx.size()) + ")");
  }

  FoldResult res;
  res.n_train = train_idx.size();
  res.n_validation = val_idx.size();
  res.n_test = test_idx.size();
  res.baseline_accuracy = majority_baseline(plan, data);

  models::Network net = models::build_model(config);
  models::Network best = net;
  nn::Adam adam(nn::Adam::Options{.learning_rate = options.learning_rate});
  Rng rng = Rng(config.seed).split(0x7a11);
  EarlyStopping stopper(options.patience, options.max_epochs);

  auto order = train_idx;
  std::vector<int> labels;
  while (!stopper.should_stop()) {
    shuffle(order, rng);
    for (std::size_t s = 0; s < order.size(); s += options.batch_size) {
      const auto part = std::span<const std::size_t>(order).subspan(s, std::min(options.batch_size, order.size() - s));
      labels.clear();
      for (auto i : part) labels.push_back(data.labels[i]);
      const auto cache = models::forward(net, data.batch(part), models::Mode::kTrain, &rng);
      const auto g = models::backward(net, cache, labels);
      if (!std::isfinite(g.loss)) {
        throw NumericError("fold " + plan.key() + ": non-finite loss at epoch " +
                           std::to_string(stopper.epochs_run() + 1));
      }
      try {
        adam.step(net.parameters(), std::as_const(g.grads).parameters());
      } catch (const NumericError& e) {
        throw NumericError("fold " + plan.key() + ", epoch " + std::to_string(stopper.epochs_run() + 1) + ": " +
                           e.what());
      }
      models::touch(net);
    }
    const double val = accuracy(net, data, val_idx);
    res.validation_history.push_back(val);
    if (stopper.update(val)) best = net;
  }

  res.epochs_run = stopper.epochs_run();
  res.best_epoch = stopper.best_epoch();
  res.best_validation = stopper.best();
  res.test_indices = test_idx;
  res.test_accuracy = accuracy(best, data, test_idx, &res.predictions);
  if (trained) *trained = std::move(best);
  return res;
}

// ---------------------------------------------------------------- experiments

std::string Configuration::name() const {
  return std::string(models::to_string(modality)) + "/" + std::string(timecond::report_label(strategy));
}

Configuration Configuration::parse(const std::string& name) {
  const auto slash = name.find('/');
  if (slash == std::string::npos) throw DataError("bad configuration name '" + name + "'");
  Configuration c;
  try {
    c.modality = models::parse_modality(name.substr(0, slash));
    c.strategy = timecond::parse_strategy(name.substr(slash + 1));
  } catch (const UsageError& e) {
    throw DataError("bad configuration name '" + name + "': " + e.what());
  }
  return c;
}

std::vector<Configuration> ExperimentConfig::configurations() const {
  std::vector<Configuration> out;
  for (auto m : modalities) {
    for (auto s : strategies) out.push_back({m, s});
  }
  return out;
}

std::vector<std::string> ExperimentConfig::known_keys() {
  return {"modality", "conditioning", "seed",   "seeds",   "repeats",       "folds",       "participants",
          "epochs",   "patience",     "lr",     "batch",   "dropout",       "embedding_dim", "embedding_c",
          "jobs"};
}

namespace {

std::size_t positive_count(const KeyValueConfig& kv, const std::string& key, long long fallback, long long min) {
  const auto v = kv.get_int(key, fallback);
  if (v < min) throw UsageError("config key '" + key + "' must be >= " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

template <typename T>
std::string join_list(const std::vector<T>& items, auto&& fmt) {
  std::string out;
  for (const auto& x : items) {
    if (!out.empty()) out += ",";
    out += fmt(x);
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& kv) {
  const auto unknown = kv.unknown_keys(known_keys());
  if (!unknown.empty()) throw UsageError("unknown experiment config key '" + unknown.front() + "'");

  ExperimentConfig c;
  try {
    if (auto mods = kv.get_list("modality"); !mods.empty() && !(mods.size() == 1 && mods[0] == "all")) {
      c.modalities.clear();
      for (const auto& m : mods) c.modalities.push_back(models::parse_modality(m));
    }
    if (auto strats = kv.get_list("conditioning"); !strats.empty() && !(strats.size() == 1 && strats[0] == "all")) {
      c.strategies.clear();
      for (const auto& s : strats) c.strategies.push_back(timecond::parse_strategy(s));
    }
    if (kv.has("seeds")) {
      c.repeat_seeds.clear();
      for (const auto& s : kv.get_list("seeds")) {
        const auto v = text::parse_int(s, "repeat seed");
        if (v < 0) throw UsageError("repeat seeds must be non-negative");
        c.repeat_seeds.push_back(static_cast<std::uint64_t>(v));
      }
      if (c.repeat_seeds.empty()) throw UsageError("config key 'seeds' is empty");
      if (kv.has("repeats") && positive_count(kv, "repeats", 4, 1) != c.repeat_seeds.size()) {
        throw UsageError("'repeats' disagrees with the number of 'seeds'");
      }
    } else {
      const auto base = kv.get_int("seed", static_cast<long long>(kDefaultExperimentSeed));
      if (base < 0) throw UsageError("seed must be non-negative");
      c.repeat_seeds = default_repeat_seeds(positive_count(kv, "repeats", 4, 1), static_cast<std::uint64_t>(base));
    }
    c.folds = positive_count(kv, "folds", 0, 0);
    c.participants = positive_count(kv, "participants", 20, 6);
    c.train.max_epochs = static_cast<int>(positive_count(kv, "epochs", 50, 1));
    c.train.patience = static_cast<int>(positive_count(kv, "patience", 5, 1));
    c.train.batch_size = positive_count(kv, "batch", 256, 1);
    c.train.learning_rate = kv.get_double("lr", 0.005);
    if (!(c.train.learning_rate > 0.0)) throw UsageError("lr must be positive");
    c.dropout = kv.get_double("dropout", 0.1);
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw UsageError("dropout must lie in [0, 1)");
    c.embedding.dim = static_cast<int>(positive_count(kv, "embedding_dim", 512, 2));
    if (c.embedding.dim % 2 != 0) throw UsageError("embedding_dim must be even");
    c.embedding.base = kv.get_double("embedding_c", 10000.0);
    if (!(c.embedding.base > 0.0)) throw UsageError("embedding_c must be positive");
    c.jobs = static_cast<unsigned>(positive_count(kv, "jobs", 1, 1));
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return c;
}

KeyValueConfig ExperimentConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set("modality", join_list(modalities, [](models::Modality m) { return std::string(models::to_string(m)); }));
  kv.set("conditioning",
         join_list(strategies, [](timecond::Strategy s) { return std::string(timecond::to_string(s)); }));
  kv.set("seeds", join_list(repeat_seeds, [](std::uint64_t s) { return std::to_string(s); }));
  kv.set("repeats", std::to_string(repeat_seeds.size()));
  kv.set("folds", std::to_string(folds));
  kv.set("participants", std::to_string(participants));
  kv.set("epochs", std::to_string(train.max_epochs));
  kv.set("patience", std::to_string(train.patience));
  kv.set("lr", text::format_double(train.learning_rate));
  kv.set("batch", std::to_string(train.batch_size));
  kv.set("dropout", text::format_double(dropout));
  kv.set("embedding_dim", std::to_string(embedding.dim));
  kv.set("embedding_c", text::format_double(embedding.base));
  kv.set("jobs", std::to_string(jobs));
  return kv;
}

std::string FoldRecord::plan_key() const {
  return std::to_string(repeat) + "/" + std::to_string(fold) + "/" + test_ids + "/" + validation_ids;
}

std::vector<FoldRecord> run_experiment(const ExperimentConfig& config, const WindowDataset& data,
                                       const ProgressFn& progress) {
  auto plans = make_folds(data.participants, config.repeat_seeds, config.participants);
  if (config.folds > 0) {
    std::erase_if(plans, [&](const FoldPlan& p) { return static_cast<std::size_t>(p.fold) >= config.folds; });
  }
  const auto configs = config.configurations();
  if (configs.empty()) throw UsageError("experiment has no configurations");
  for (const auto& p : plans) check_no_leakage(p, data);

  const std::size_t total = configs.size() * plans.size();
  std::vector<FoldRecord> records(total);
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mu;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= total) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      const auto& cfg = configs[job / plans.size()];
      const auto& plan = plans[job % plans.size()];
      try {
        models::ModelConfig mc;
        mc.modality = cfg.modality;
        mc.conditioning = cfg.strategy;
        mc.seed = fold_seed(plan);
        mc.dropout = config.dropout;
        mc.embedding = config.embedding;
        const auto r = train_fold(plan, mc, data, config.train);
        FoldRecord rec;
        rec.configuration = cfg.name();
        rec.repeat = plan.repeat;
        rec.fold = plan.fold;
        rec.test_ids = join_ids(plan.test);
        rec.validation_ids = join_ids(plan.validation);
        rec.test_accuracy = r.test_accuracy;
        rec.baseline_accuracy = r.baseline_accuracy;
        rec.best_validation = r.best_validation;
        rec.epochs_run = r.epochs_run;
        rec.best_epoch = r.best_epoch;
        rec.n_train = r.n_train;
        rec.n_validation = r.n_validation;
        rec.n_test = r.n_test;
        std::lock_guard lock(mu);
        records[job] = rec;
        ++done;
        if (progress) progress(rec, done, total);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(total)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return records;
}

// ---------------------------------------------------------------- records file

namespace {

constexpr const char* kRecordsHeader =
    "configuration\trepeat\tfold\ttest_ids\tvalidation_ids\ttest_accuracy\tbaseline_accuracy\tbest_validation\t"
    "epochs_run\tbest_epoch\tn_train\tn_validation\tn_test";

}  // namespace

std::string format_records(const std::vector<FoldRecord>& records) {
  std::ostringstream os;
  os << kRecordsHeader << '\n';
  for (const auto& r : records) {
    os << r.configuration << '\t' << r.repeat << '\t' << r.fold << '\t' << r.test_ids << '\t' << r.validation_ids
       << '\t' << text::format_double(r.test_accuracy) << '\t' << text::format_double(r.baseline_accuracy) << '\t'
       << text::format_double(r.best_validation) << '\t' << r.epochs_run << '\t' << r.best_epoch << '\t' << r.n_train
       << '\t' << r.n_validation << '\t' << r.n_test << '\n';
  }
  return os.str();
}

void write_records(const std::vector<FoldRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_records(records);
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<FoldRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRecordsHeader) {
    throw DataError(path.string() + ": not a fold-records file (bad header)");
  }
  std::vector<FoldRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = text::split(line, '\t');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 13) throw DataError(where + ": expected 13 fields, got " + std::to_string(f.size()));
    FoldRecord r;
    r.configuration = std::string(f[0]);
    Configuration::parse(r.configuration);
    r.repeat = static_cast<int>(text::parse_int(f[1], where + " repeat"));
    r.fold = static_cast<int>(text::parse_int(f[2], where + " fold"));
    r.test_ids = std::string(f[3]);
    r.validation_ids = std::string(f[4]);
    r.test_accuracy = text::parse_double(f[5], where + " test_accuracy");
    r.baseline_accuracy = text::parse_double(f[6], where + " baseline_accuracy");
    r.best_validation = text::parse_double(f[7], where + " best_validation");
    r.epochs_run = static_cast<int>(text::parse_int(f[8], where + " epochs_run"));
    r.best_epoch = static_cast<int>(text::parse_int(f[9], where + " best_epoch"));
    r.n_train = static_cast<std::size_t>(text::parse_int(f[10], where + " n_train"));
    r.n_validation = static_cast<std::size_t>(text::parse_int(f[11], where + " n_validation"));
    r.n_test = static_cast<std::size_t>(text::parse_int(f[12], where + " n_test"));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace engage::eval
