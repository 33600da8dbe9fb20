#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "engage/checkpoint.hpp"
#include "engage/corpus.hpp"
#include "engage/error.hpp"
#include "engage/evalharness.hpp"
#include "engage/preprocess.hpp"
#include "engage/synth.hpp"
#include "engage/text.hpp"
#include "engage/windows_io.hpp"

namespace engage::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string corpus;
  std::string out;
  std::string windows;
  std::string records;
  std::optional<long long> seed;
  unsigned jobs = 0;
  bool force = false;
  int repeat = 0;
  int fold = 0;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

KeyValueConfig load_config(const Options& o) {
  if (o.config.empty()) return {};
  if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
  return KeyValueConfig::load(o.config);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

// Output directory must be empty or absent unless --force.
void prepare_out_dir(const fs::path& dir, bool force, const std::vector<std::string>& products) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (!force) {
    for (const auto& p : products) {
      if (fs::exists(dir / p)) {
        throw UsageError("refusing to overwrite " + (dir / p).string() + " (pass --force)");
      }
    }
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

void write_manifest(const fs::path& out_dir, const std::string& command, const Options& o,
                    const KeyValueConfig& resolved) {
  KeyValueConfig m;
  m.set("command", command);
  m.set("config_path", o.config.empty() ? "-" : fs::absolute(o.config).string());
  m.set("corpus", o.corpus.empty() ? "-" : fs::absolute(o.corpus).string());
  m.set("out", fs::absolute(out_dir).string());
  m.set("timestamp", utc_now());
  for (const auto& [k, v] : resolved.entries()) m.set("config." + k, v);
  m.save(out_dir / "run.manifest");
}

preprocess::WindowSpec window_spec_from(const KeyValueConfig& kv) {
  const auto unknown =
      kv.unknown_keys({"window_s", "stride_s", "stimulus_shift_s", "frame_fps", "trace_hz", "epsilon"});
  if (!unknown.empty()) throw UsageError("unknown window config key '" + unknown.front() + "'");
  preprocess::WindowSpec s;
  try {
    s.window_s = kv.get_double("window_s", s.window_s);
    s.stride_s = kv.get_double("stride_s", s.stride_s);
    s.stimulus_shift_s = kv.get_double("stimulus_shift_s", s.stimulus_shift_s);
    s.frame_fps = kv.get_double("frame_fps", s.frame_fps);
    s.trace_hz = kv.get_double("trace_hz", s.trace_hz);
    s.epsilon = kv.get_double("epsilon", s.epsilon);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  s.validate();
  return s;
}

KeyValueConfig window_spec_kv(const preprocess::WindowSpec& s) {
  KeyValueConfig kv;
  kv.set("window_s", text::format_double(s.window_s));
  kv.set("stride_s", text::format_double(s.stride_s));
  kv.set("stimulus_shift_s", text::format_double(s.stimulus_shift_s));
  kv.set("frame_fps", text::format_double(s.frame_fps));
  kv.set("trace_hz", text::format_double(s.trace_hz));
  kv.set("epsilon", text::format_double(s.epsilon));
  return kv;
}

eval::ExperimentConfig experiment_from(const Options& o) {
  auto kv = load_config(o);
  if (o.seed) {
    if (kv.has("seeds")) throw UsageError("--seed conflicts with explicit 'seeds' in the config");
    kv.set("seed", std::to_string(*o.seed));
  }
  auto c = eval::ExperimentConfig::from_kv(kv);
  if (o.jobs > 0) c.jobs = o.jobs;
  return c;
}

eval::WindowDataset load_dataset(const Options& o, std::ostream& err) {
  require(o.windows, "--windows");
  auto file = preprocess::read_windows(o.windows);
  const fs::path corpus = o.corpus.empty() ? file.corpus : fs::path(o.corpus);
  preprocess::attach_pooled_frames(file.windows, corpus);
  auto data = eval::WindowDataset::from_windows(file.windows);
  err << "loaded " << data.size() << " windows from " << data.participants.size() << " participants\n";
  return data;
}

// ---------------------------------------------------------------- subcommands

int cmd_synth(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.out, "--out");
  auto kv = load_config(o);
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  const auto cfg = synth::SynthConfig::from_kv(kv);
  const fs::path dir = o.out;
  if (fs::exists(dir) && !fs::is_empty(dir) && !o.force) {
    throw UsageError("refusing to overwrite non-empty " + dir.string() + " (pass --force)");
  }
  fs::create_directories(dir);
  for (std::size_t i = 0; i < cfg.n_participants; ++i) {
    const auto g = synth::generate_session(cfg, i);
    corpus::write_session(g.session, dir / g.session.participant_id);
    err << "wrote " << g.session.participant_id << " (combat fraction "
        << text::format_double(g.timeline.combat_fraction(cfg.duration_s)) << ")\n";
  }
  cfg.to_kv().save(dir / "synth.cfg");
  write_manifest(dir, "synth", o, cfg.to_kv());
  out << "synthesized " << cfg.n_participants << " sessions into " << dir.string() << '\n';
  return 0;
}

int cmd_ingest(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.corpus, "--corpus");
  const auto manifests = corpus::list_sessions(o.corpus);
  if (manifests.empty()) throw DataError("no sessions found under " + o.corpus);
  std::ostringstream table;
  table << "participant_id\tduration_s\tevents\tframes\ttrace_samples\twarnings\n";
  std::size_t warnings = 0;
  for (const auto& m : manifests) {
    const auto loaded = corpus::read_session(m);
    const auto& s = loaded.session;
    table << s.participant_id << '\t' << text::format_double(s.duration_s) << '\t' << s.events.size() << '\t'
          << s.features.frame_count << '\t' << s.trace.size() << '\t' << loaded.warnings.size() << '\n';
    for (const auto& w : loaded.warnings) err << "warning: " << w << '\n';
    warnings += loaded.warnings.size();
  }
  out << table.str();
  out << manifests.size() << " sessions valid, " << warnings << " warnings\n";
  if (!o.out.empty()) {
    prepare_out_dir(o.out, o.force, {"ingest.tsv"});
    write_text(fs::path(o.out) / "ingest.tsv", table.str());
    write_manifest(o.out, "ingest", o, {});
  }
  return 0;
}

int cmd_window(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.corpus, "--corpus");
  require(o.out, "--out");
  const auto spec = window_spec_from(load_config(o));
  const auto manifests = corpus::list_sessions(o.corpus);
  if (manifests.empty()) throw DataError("no sessions found under " + o.corpus);
  prepare_out_dir(o.out, o.force, {"windows.tsv", "summary.tsv"});

  preprocess::WindowsFile file;
  file.corpus = fs::absolute(o.corpus);
  file.spec = spec;
  std::ostringstream summary;
  summary << "participant_id\tmu\tsegmented\thigh\tlow\tambiguous\n";
  std::size_t segmented = 0, kept = 0, ambiguous = 0, high = 0, low = 0;
  std::vector<std::string> skipped;
  for (const auto& m : manifests) {
    std::string id = m.parent_path().filename().string();
    try {
      const auto loaded = corpus::read_session(m);
      id = loaded.session.participant_id;
      for (const auto& w : loaded.warnings) err << "warning: " << w << '\n';
      auto sw = preprocess::build_windows(loaded.session, spec);
      for (const auto& w : sw.warnings) err << "warning: " << w << '\n';
      summary << sw.participant_id << '\t' << text::format_double(sw.mu) << '\t' << sw.segmented << '\t' << sw.high
              << '\t' << sw.low << '\t' << sw.ambiguous << '\n';
      segmented += sw.segmented;
      ambiguous += sw.ambiguous;
      high += sw.high;
      low += sw.low;
      kept += sw.windows.size();
      for (auto& w : sw.windows) file.windows.push_back(std::move(w));
    } catch (const DataError& e) {
      if (std::string(e.what()).find("flat trace") == std::string::npos) throw;
      skipped.push_back(id);
      err << "skipping " << id << ": " << e.what() << '\n';
    }
  }
  preprocess::write_windows(file, fs::path(o.out) / "windows.tsv");
  write_text(fs::path(o.out) / "summary.tsv", summary.str());
  write_manifest(o.out, "window", o, window_spec_kv(spec));

  out << summary.str();
  out << "total: " << segmented << " segmented, " << high << " HIGH, " << low << " LOW, " << ambiguous
      << " ambiguous dropped\n";
  if (!skipped.empty()) {
    out << "skipped (flat trace):";
    for (const auto& s : skipped) out << ' ' << s;
    out << '\n';
  }
  if (segmented > 0 && 2 * kept < segmented) {
    err << "warning: near-empty dataset: only " << kept << " of " << segmented
        << " windows survive the ambiguity band (epsilon = " << text::format_double(spec.epsilon) << ")\n";
  }
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.out, "--out");
  const auto cfg = experiment_from(o);
  const auto configs = cfg.configurations();
  if (configs.size() != 1) {
    throw UsageError("train runs exactly one configuration; set a single 'modality' and 'conditioning'");
  }
  const auto data = load_dataset(o, err);
  const auto plans = eval::make_folds(data.participants, cfg.repeat_seeds, cfg.participants);
  const eval::FoldPlan* plan = nullptr;
  for (const auto& p : plans) {
    if (p.repeat == o.repeat && p.fold == o.fold) plan = &p;
  }
  if (!plan) throw UsageError("no fold " + std::to_string(o.fold) + " in repeat " + std::to_string(o.repeat));
  prepare_out_dir(o.out, o.force, {"model.ckpt", "history.tsv"});

  models::ModelConfig mc;
  mc.modality = configs[0].modality;
  mc.conditioning = configs[0].strategy;
  mc.seed = eval::fold_seed(*plan);
  mc.dropout = cfg.dropout;
  mc.embedding = cfg.embedding;
  models::Network net;
  const auto r = eval::train_fold(*plan, mc, data, cfg.train, &net);
  models::save_checkpoint(net, fs::path(o.out) / "model.ckpt");
  std::ostringstream hist;
  hist << "epoch\tvalidation_accuracy\n";
  for (std::size_t e = 0; e < r.validation_history.size(); ++e) {
    hist << e + 1 << '\t' << text::format_double(r.validation_history[e]) << '\n';
  }
  write_text(fs::path(o.out) / "history.tsv", hist.str());
  write_manifest(o.out, "train", o, cfg.to_kv());
  out << configs[0].name() << " fold " << plan->key() << ": test accuracy " << text::format_double(r.test_accuracy)
      << ", baseline " << text::format_double(r.baseline_accuracy) << ", epochs " << r.epochs_run << " (best "
      << r.best_epoch << ")\n";
  return 0;
}

void emit_report(const eval::EvalReport& rep, const fs::path& dir, std::ostream& out) {
  const auto table = eval::render_table(rep);
  const auto sig = eval::render_significance(rep);
  write_text(dir / "report.txt", table + "\n" + sig);
  write_text(dir / "summary.tsv", eval::format_summary(rep));
  out << table;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  require(o.out, "--out");
  const auto cfg = experiment_from(o);
  const auto data = load_dataset(o, err);
  prepare_out_dir(o.out, o.force, {"records.tsv", "report.txt", "summary.tsv"});
  const auto records = eval::run_experiment(cfg, data, [&](const eval::FoldRecord& r, std::size_t done, std::size_t total) {
    err << "[" << done << "/" << total << "] " << r.configuration << " repeat " << r.repeat << " fold " << r.fold
        << ": " << text::format_double(r.test_accuracy) << '\n';
  });
  eval::write_records(records, fs::path(o.out) / "records.tsv");
  write_manifest(o.out, "evaluate", o, cfg.to_kv());
  emit_report(eval::aggregate(records), o.out, out);
  return 0;
}

int cmd_report(const Options& o, std::ostream& out, std::ostream&) {
  require(o.records, "--records");
  const auto rep = eval::aggregate(eval::read_records(o.records));
  if (o.out.empty()) {
    out << eval::render_table(rep) << '\n' << eval::render_significance(rep);
    return 0;
  }
  prepare_out_dir(o.out, o.force, {"report.txt", "summary.tsv"});
  emit_report(rep, o.out, out);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Engagement modelling pipeline: synthetic corpora, windowing, training and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value configuration file");
    sub->add_flag("--force", o.force, "overwrite existing outputs");
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  add_common(synth);
  synth->add_option("--out", o.out, "corpus directory to create");
  synth->add_option("--seed", o.seed, "generator seed (overrides the config)");

  auto* ingest = app.add_subcommand("ingest", "validate a corpus and list its sessions");
  ingest->add_option("--corpus", o.corpus, "corpus directory");
  ingest->add_option("--out", o.out, "optional directory for ingest.tsv");
  ingest->add_flag("--force", o.force, "overwrite existing outputs");

  auto* window = app.add_subcommand("window", "cut labeled windows from a corpus");
  add_common(window);
  window->add_option("--corpus", o.corpus, "corpus directory");
  window->add_option("--out", o.out, "output directory");

  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--windows", o.windows, "windows.tsv produced by 'window'");
    sub->add_option("--corpus", o.corpus, "corpus directory (default: the one recorded in the windows file)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "base seed for the repeat shuffles and weight init");
  };
  auto* train = app.add_subcommand("train", "train one configuration on one fold");
  add_common(train);
  add_data(train);
  train->add_option("--repeat", o.repeat, "repeat index");
  train->add_option("--fold", o.fold, "fold index");

  auto* evaluate = app.add_subcommand("evaluate", "cross-validated sweep over configurations");
  add_common(evaluate);
  add_data(evaluate);
  evaluate->add_option("--jobs", o.jobs, "worker threads");

  auto* report = app.add_subcommand("report", "re-render a report from fold records");
  report->add_option("--records", o.records, "records.tsv produced by 'evaluate'");
  report->add_option("--out", o.out, "output directory");
  report->add_flag("--force", o.force, "overwrite existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "usage error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*synth) return cmd_synth(o, out, err);
    if (*ingest) return cmd_ingest(o, out, err);
    if (*window) return cmd_window(o, out, err);
    if (*train) return cmd_train(o, out, err);
    if (*evaluate) return cmd_evaluate(o, out, err);
    if (*report) return cmd_report(o, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int run(int argc, char** argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace engage::cli
