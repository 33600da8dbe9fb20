#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "engage/error.hpp"
#include "engage/evalharness.hpp"
#include "engage/text.hpp"

namespace engage::eval {

namespace {

int modality_rank(models::Modality m) { return static_cast<int>(m); }
int strategy_rank(timecond::Strategy s) { return static_cast<int>(s); }

bool config_less(const std::string& a, const std::string& b) {
  const auto ca = Configuration::parse(a), cb = Configuration::parse(b);
  if (ca.modality != cb.modality) return modality_rank(ca.modality) < modality_rank(cb.modality);
  return strategy_rank(ca.strategy) < strategy_rank(cb.strategy);
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

std::string pvalue(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, p < 1e-4 ? "%.2e" : "%.4f", p);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

EvalReport aggregate(const std::vector<FoldRecord>& records) {
  if (records.empty()) throw DataError("no fold records to aggregate");

  std::map<std::string, std::map<std::string, const FoldRecord*>> by_config;
  for (const auto& r : records) {
    auto& slot = by_config[r.configuration][r.plan_key()];
    if (slot) throw DataError("duplicate record for " + r.configuration + " on fold " + r.plan_key());
    slot = &r;
  }

  std::vector<std::string> names;
  for (const auto& [name, _] : by_config) names.push_back(name);
  std::sort(names.begin(), names.end(), config_less);

  const auto& reference = by_config.at(names.front());
  std::vector<std::string> keys;
  for (const auto& [key, _] : reference) keys.push_back(key);

  for (const auto& name : names) {
    const auto& folds = by_config.at(name);
    bool same = folds.size() == reference.size();
    for (auto it = folds.begin(), jt = reference.begin(); same && it != folds.end(); ++it, ++jt) {
      same = it->first == jt->first;
    }
    if (!same) {
      throw DataError("configurations " + names.front() + " and " + name +
                      " were evaluated on different fold plans; pairing impossible");
    }
    for (const auto& key : keys) {
      if (folds.at(key)->baseline_accuracy != reference.at(key)->baseline_accuracy) {
        throw DataError("baseline accuracy differs between configurations on fold " + key);
      }
    }
  }

  EvalReport rep;
  std::vector<std::vector<double>> series;
  for (const auto& name : names) {
    std::vector<double> acc;
    for (const auto& key : keys) acc.push_back(by_config.at(name).at(key)->test_accuracy);
    rep.configurations.push_back({name, stats::summarize(acc)});
    series.push_back(std::move(acc));
  }
  std::vector<double> base;
  for (const auto& key : keys) base.push_back(reference.at(key)->baseline_accuracy);
  rep.baseline = {kBaselineName, stats::summarize(base)};

  std::vector<std::string> all_names = names;
  all_names.push_back(kBaselineName);
  series.push_back(std::move(base));

  std::vector<double> pvals;
  for (std::size_t i = 0; i < series.size(); ++i) {
    for (std::size_t j = i + 1; j < series.size(); ++j) {
      PairComparison c;
      c.first = all_names[i];
      c.second = all_names[j];
      double diff = 0.0;
      for (std::size_t k = 0; k < keys.size(); ++k) diff += series[i][k] - series[j][k];
      c.mean_difference = diff / static_cast<double>(keys.size());
      c.test = stats::wilcoxon_signed_rank(series[i], series[j]);
      pvals.push_back(c.test.p_value);
      rep.comparisons.push_back(std::move(c));
    }
  }
  const auto adjusted = stats::bonferroni_adjust(pvals);
  const auto flags = stats::bonferroni_significant(pvals);
  for (std::size_t i = 0; i < rep.comparisons.size(); ++i) {
    rep.comparisons[i].adjusted_p = adjusted[i];
    rep.comparisons[i].significant = flags[i];
  }
  return rep;
}

std::string render_table(const EvalReport& report) {
  std::vector<models::Modality> mods;
  std::vector<timecond::Strategy> strats;
  std::map<std::pair<int, int>, const ConfigurationSummary*> cells;
  for (const auto& c : report.configurations) {
    const auto cfg = Configuration::parse(c.configuration);
    if (std::find(mods.begin(), mods.end(), cfg.modality) == mods.end()) mods.push_back(cfg.modality);
    if (std::find(strats.begin(), strats.end(), cfg.strategy) == strats.end()) strats.push_back(cfg.strategy);
    cells[{modality_rank(cfg.modality), strategy_rank(cfg.strategy)}] = &c;
  }
  std::sort(mods.begin(), mods.end(), [](auto a, auto b) { return modality_rank(a) < modality_rank(b); });
  std::sort(strats.begin(), strats.end(), [](auto a, auto b) { return strategy_rank(a) < strategy_rank(b); });

  constexpr std::size_t kFirst = 10, kCell = 24;
  std::ostringstream os;
  const std::size_t folds = report.baseline.accuracy.n;
  os << "Test accuracy (%) over " << folds << " folds: mean +/- 95% CI [best fold]\n";
  os << pad("", kFirst);
  for (auto s : strats) os << pad(std::string(timecond::report_label(s)), kCell);
  os << '\n';
  for (auto m : mods) {
    os << pad(std::string(models::to_string(m)), kFirst);
    for (auto s : strats) {
      auto it = cells.find({modality_rank(m), strategy_rank(s)});
      std::string cell = "-";
      if (it != cells.end()) {
        const auto& a = it->second->accuracy;
        cell = percent(a.mean) + " +/- " + percent(a.ci_half_width) + " [" + percent(a.best) + "]";
      }
      os << pad(cell, kCell);
    }
    os << '\n';
  }
  const auto& b = report.baseline.accuracy;
  os << pad("baseline", kFirst) << percent(b.mean) << " +/- " << percent(b.ci_half_width) << " [" << percent(b.best)
     << "]  (majority class of the training set)\n";
  return os.str();
}

std::string render_significance(const EvalReport& report) {
  std::ostringstream os;
  const std::size_t m = report.comparisons.size();
  os << "Paired two-tailed Wilcoxon signed-rank tests, " << m << " comparisons, Bonferroni alpha = 0.05/" << m
     << "\n";
  os << pad("first", 20) << pad("second", 20) << pad("mean diff", 11) << pad("n", 4) << pad("p", 11)
     << pad("p adj", 11) << "significant\n";
  for (const auto& c : report.comparisons) {
    char diff[32];
    std::snprintf(diff, sizeof diff, "%+.2f", 100.0 * c.mean_difference);
    os << pad(c.first, 20) << pad(c.second, 20) << pad(diff, 11) << pad(std::to_string(c.test.n), 4)
       << pad(pvalue(c.test.p_value), 11) << pad(pvalue(c.adjusted_p), 11) << (c.significant ? "yes" : "no") << '\n';
  }
  return os.str();
}

std::string format_summary(const EvalReport& report) {
  std::ostringstream os;
  os << "configuration\tn\tmean\tsd\tci_half_width\tbest\n";
  auto row = [&](const ConfigurationSummary& s) {
    os << s.configuration << '\t' << s.accuracy.n << '\t' << text::format_double(s.accuracy.mean) << '\t'
       << text::format_double(s.accuracy.sd) << '\t' << text::format_double(s.accuracy.ci_half_width) << '\t'
       << text::format_double(s.accuracy.best) << '\n';
  };
  for (const auto& c : report.configurations) row(c);
  row(report.baseline);
  return os.str();
}

}  // namespace engage::eval
