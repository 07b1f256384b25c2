#include "cbe/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cbe/error.hpp"
#include "cbe/hash.hpp"
#include "cbe/mixup.hpp"

namespace cbe {

using nlohmann::json;

// --- metrics ---------------------------------------------------------------------

ScorePair classification_scores(std::span<const int> predicted, std::span<const int> gold, int num_classes) {
  if (predicted.size() != gold.size()) throw ValidationError("prediction and gold counts differ");
  if (gold.empty()) throw ValidationError("cannot score an empty split");
  const auto m = static_cast<std::size_t>(num_classes);
  std::vector<std::size_t> tp(m, 0), fp(m, 0), fn(m, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto p = static_cast<std::size_t>(predicted[i]);
    const auto g = static_cast<std::size_t>(gold[i]);
    if (p >= m || g >= m) throw ValidationError("class index out of range");
    if (p == g) {
      ++correct;
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    if (denom > 0) f1_sum += 2.0 * static_cast<double>(tp[c]) / denom;
  }
  return {static_cast<double>(correct) / static_cast<double>(gold.size()), f1_sum / static_cast<double>(m)};
}

Metrics evaluate(const ConceptModel& model, std::span<const Example> rows) {
  if (rows.empty()) throw ValidationError("cannot evaluate an empty split");
  const std::size_t k = model.schema().size();
  Metrics out;
  out.rows = rows.size();
  out.k = k;
  std::vector<int> pred, gold;
  std::vector<std::vector<int>> c_pred(k), c_gold(k);
  for (const auto& ex : rows) {
    const auto fw = model.forward(ex.text);
    pred.push_back(fw.label.label);
    gold.push_back(ex.label);
    if (!fw.concepts) continue;
    const auto values = concept_values(ex, model.schema());
    for (std::size_t j = 0; j < k; ++j) {
      if (!values[j]) continue;
      c_pred[j].push_back(static_cast<int>(fw.concepts->predicted(j)));
      c_gold[j].push_back(static_cast<int>(*values[j]));
    }
  }
  out.task = classification_scores(pred, gold, model.num_classes());
  if (!model.interpretable()) return out;
  ScorePair sum;
  for (std::size_t j = 0; j < k; ++j) {
    if (c_gold[j].empty()) continue;
    ConceptMetric cm{model.schema().at(j).name, classification_scores(c_pred[j], c_gold[j], 3), c_gold[j].size()};
    sum.accuracy += cm.score.accuracy;
    sum.macro_f1 += cm.score.macro_f1;
    out.concepts.push_back(std::move(cm));
  }
  if (!out.concepts.empty()) {
    const double n = static_cast<double>(out.concepts.size());
    out.concept_mean = ScorePair{sum.accuracy / n, sum.macro_f1 / n};
  }
  return out;
}

json to_json(const Metrics& m) {
  json concepts = json::array();
  for (const auto& c : m.concepts) {
    concepts.push_back(
        {{"name", c.name}, {"accuracy", c.score.accuracy}, {"macro_f1", c.score.macro_f1}, {"support", c.support}});
  }
  json j = {{"rows", m.rows},
            {"k", m.k},
            {"task", {{"accuracy", m.task.accuracy}, {"macro_f1", m.task.macro_f1}}},
            {"concepts", concepts}};
  j["concept_mean"] = m.concept_mean
                          ? json{{"accuracy", m.concept_mean->accuracy}, {"macro_f1", m.concept_mean->macro_f1}}
                          : json(nullptr);
  return j;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman inputs differ in length");
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// --- synthetic ---------------------------------------------------------------------

std::vector<std::string> synthetic_concept_names(std::size_t k) {
  static const char* base[] = {"Food", "Service", "Ambiance", "Noise"};
  std::vector<std::string> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back(j < 4 ? base[j] : fmt::format("Aspect{}", j + 1));
  return out;
}

Lexicon default_lexicon(std::size_t k) {
  using V = ConceptValue;
  Lexicon lex;
  lex["Food"] = {{V::Positive, {"the food was delicious", "tasty dishes", "the meal was flavorful"}},
                 {V::Negative, {"the food was bland", "stale bread", "the meal was greasy"}},
                 {V::Unknown, {"we skipped the menu", "nobody mentioned dinner"}}};
  lex["Service"] = {{V::Positive, {"the waiter was attentive", "friendly staff", "prompt service"}},
                    {V::Negative, {"the waiter was rude", "careless staff", "sluggish service"}},
                    {V::Unknown, {"we ordered at the counter", "no table service to judge"}}};
  lex["Ambiance"] = {{V::Positive, {"the decor was cozy", "charming interior", "lovely lighting"}},
                     {V::Negative, {"the decor was dreary", "gloomy interior", "harsh lighting"}},
                     {V::Unknown, {"we sat outside in the car", "took it to go"}}};
  lex["Noise"] = {{V::Positive, {"the room was quiet", "peaceful atmosphere", "calm dining room"}},
                  {V::Negative, {"the room was deafening", "blaring music", "a noisy crowd"}},
                  {V::Unknown, {"wore headphones the whole time", "could not tell the volume"}}};
  const auto names = synthetic_concept_names(k);
  for (std::size_t j = 4; j < k; ++j) {
    const std::string w = fmt::format("aspect{}", j + 1);
    lex[names[j]] = {{V::Positive, {fmt::format("{} superb", w), fmt::format("fine {} overall", w)}},
                     {V::Negative, {fmt::format("{} dismal", w), fmt::format("shoddy {} overall", w)}},
                     {V::Unknown, {fmt::format("{} unmentioned", w), fmt::format("no {} details", w)}}};
  }
  for (auto it = lex.begin(); it != lex.end();) {
    it = std::find(names.begin(), names.end(), it->first) == names.end() ? lex.erase(it) : std::next(it);
  }
  return lex;
}

std::map<std::string, std::string> default_hidden_phrases(std::size_t k) {
  std::map<std::string, std::string> out = {{"Food", "the food arrived"},
                                            {"Service", "a waiter came by"},
                                            {"Ambiance", "the decor was there"},
                                            {"Noise", "the room had people"}};
  const auto names = synthetic_concept_names(k);
  for (std::size_t j = 4; j < k; ++j) out[names[j]] = fmt::format("aspect{} existed", j + 1);
  for (auto it = out.begin(); it != out.end();) {
    it = std::find(names.begin(), names.end(), it->first) == names.end() ? out.erase(it) : std::next(it);
  }
  return out;
}

int synthetic_label(std::span<const std::optional<ConceptValue>> values, int m) {
  int score = 0;
  for (const auto& v : values) {
    if (v == ConceptValue::Positive) ++score;
    if (v == ConceptValue::Negative) --score;
  }
  if (m == 2) return score > 0 ? 1 : 0;
  const double k = static_cast<double>(values.size());
  const double t = (static_cast<double>(score) + k) / (2.0 * k);
  return std::min(m - 1, static_cast<int>(std::floor(t * m)));
}

DatasetBundle gen_synthetic(const SyntheticSpec& spec) {
  if (spec.k == 0) throw ConfigError("synthetic spec needs k >= 1");
  if (spec.m < 2) throw ConfigError("synthetic spec needs m >= 2");
  if (!(spec.hidden_rate >= 0.0 && spec.hidden_rate <= 1.0)) throw ConfigError("hidden_rate must lie in [0, 1]");
  const std::size_t num_human = spec.num_human.value_or(spec.k);
  if (num_human == 0 || num_human > spec.k) throw ConfigError("num_human must lie in [1, k]");
  const double prior_sum = spec.value_prior[0] + spec.value_prior[1] + spec.value_prior[2];
  if (!(prior_sum > 0.0) || *std::min_element(spec.value_prior.begin(), spec.value_prior.end()) < 0.0)
    throw ConfigError("value prior must be nonnegative with a positive sum");

  const auto names = synthetic_concept_names(spec.k);
  const Lexicon lex = spec.lexicon.empty() ? default_lexicon(spec.k) : spec.lexicon;
  const auto hidden = spec.hidden_phrases.empty() ? default_hidden_phrases(spec.k) : spec.hidden_phrases;
  for (const auto& n : names) {
    for (ConceptValue v : kConceptValues) {
      const auto c = lex.find(n);
      if (c == lex.end() || !c->second.count(v) || c->second.at(v).empty())
        throw ConfigError(fmt::format("lexicon lacks phrases for {} = {}", n, to_string(v)));
    }
    if (spec.hidden_rate > 0.0 && !hidden.count(n)) throw ConfigError("no hidden phrase for " + n);
  }

  std::vector<ConceptSpec> specs;
  for (std::size_t j = 0; j < spec.k; ++j)
    specs.push_back({names[j], j < num_human ? ConceptOrigin::Human : ConceptOrigin::Generated});
  ConceptSchema schema(specs);

  Rng rng(derive_seed(spec.seed, "synthetic"));
  std::discrete_distribution<int> value_dist(spec.value_prior.begin(), spec.value_prior.end());
  std::bernoulli_distribution hide(spec.hidden_rate);

  auto make_rows = [&](std::size_t n, const std::string& prefix, bool labeled) {
    std::vector<Example> rows;
    for (std::size_t i = 0; i < n; ++i) {
      Example ex;
      ex.id = fmt::format("{}-{:06d}", prefix, i);
      std::vector<std::optional<ConceptValue>> values(spec.k);
      std::vector<std::string> phrases;
      for (std::size_t j = 0; j < spec.k; ++j) {
        const auto v = static_cast<ConceptValue>(value_dist(rng));
        values[j] = v;
        const auto& options = lex.at(names[j]).at(v);
        const std::string& phrase = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
        phrases.push_back(spec.hidden_rate > 0.0 && hide(rng) ? hidden.at(names[j]) : phrase);
        if (labeled && j < num_human) ex.concepts[names[j]] = {v, LabelSource::Human};
      }
      std::shuffle(phrases.begin(), phrases.end(), rng);
      ex.text = fmt::format("{}.", fmt::join(phrases, ". "));
      ex.label = synthetic_label(values, spec.m);
      rows.push_back(std::move(ex));
    }
    return rows;
  };

  std::array<SplitSet, 4> parts;
  for (Split s : kSplits) {
    const auto si = static_cast<std::size_t>(s);
    parts[0][si] = make_rows(spec.source_sizes[si], fmt::format("s-{}", to_string(s)), true);
    parts[1][si] = make_rows(spec.unlabeled_sizes[si], fmt::format("u-{}", to_string(s)), false);
  }
  return DatasetBundle(spec.name, std::move(schema), spec.m, std::move(parts));
}

json to_json(const SyntheticSpec& s) {
  json j = {{"k", s.k},
            {"m", s.m},
            {"source_sizes", s.source_sizes},
            {"unlabeled_sizes", s.unlabeled_sizes},
            {"value_prior", s.value_prior},
            {"hidden_rate", s.hidden_rate},
            {"seed", s.seed},
            {"name", s.name}};
  j["num_human"] = s.num_human ? json(*s.num_human) : json(nullptr);
  return j;
}

SyntheticSpec synthetic_spec_from_json(const json& j, SyntheticSpec s) {
  try {
    s.k = j.value("k", s.k);
    s.m = j.value("m", s.m);
    if (j.contains("num_human"))
      s.num_human = j["num_human"].is_null() ? std::nullopt : std::optional<std::size_t>(j["num_human"].get<std::size_t>());
    if (j.contains("source_sizes")) s.source_sizes = j["source_sizes"].get<std::array<std::size_t, 3>>();
    if (j.contains("unlabeled_sizes")) s.unlabeled_sizes = j["unlabeled_sizes"].get<std::array<std::size_t, 3>>();
    if (j.contains("value_prior")) s.value_prior = j["value_prior"].get<Simplex3>();
    s.hidden_rate = j.value("hidden_rate", s.hidden_rate);
    s.seed = j.value("seed", s.seed);
    s.name = j.value("name", s.name);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synthetic spec: ") + e.what());
  }
  return s;
}

KeywordRules rules_from_lexicon(const Lexicon& lexicon) {
  KeywordRules rules;
  for (const auto& [name, by_value] : lexicon)
    for (const auto& [v, phrases] : by_value) rules[name][v] = phrases;
  return rules;
}

// --- benchmark -----------------------------------------------------------------------

namespace {

const std::vector<Example>& eval_rows(const DatasetBundle& bundle, DataSetting setting, Split split) {
  if (setting == DataSetting::Augmented && !bundle.split(Partition::SourceAug, split).empty())
    return bundle.split(Partition::SourceAug, split);
  return bundle.split(Partition::Source, split);
}

}  // namespace

BenchmarkReport run_benchmark(const DatasetBundle& bundle, const BenchmarkConfig& config) {
  BenchmarkReport report;
  report.dataset = bundle.name();
  const bool has_aug = bundle.has_partition(Partition::SourceAug) || bundle.has_partition(Partition::UnlabeledAug);
  for (DataSetting setting : config.settings) {
    for (Strategy strategy : config.strategies) {
      BenchmarkCell cell;
      cell.strategy = strategy;
      cell.setting = setting;
      cell.applicable = (setting != DataSetting::Augmented || has_aug) &&
                        (strategy != Strategy::JointMixup || setting == DataSetting::Augmented);
      if (cell.applicable) {
        for (std::uint64_t seed : config.seeds) {
          BenchmarkRun run;
          run.seed = seed;
          try {
            TrainConfig tc = config.base;
            tc.strategy = strategy;
            tc.data = setting;
            tc.seed = seed;
            tc.log_steps = false;
            const auto result = train(bundle, tc);
            cell.k = result.model.schema().size();
            run.metrics = evaluate(result.model, eval_rows(bundle, setting, config.eval_split));
          } catch (const std::exception& e) {
            run.error = e.what();
            spdlog::error("benchmark cell {}/{} seed {} failed: {}", to_string(strategy), to_string(setting), seed,
                          e.what());
          }
          cell.runs.push_back(std::move(run));
        }
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  r.n = xs.size();
  if (xs.empty()) return r;
  r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

namespace {

struct CellSummary {
  MeanStd task_acc, task_f1;
  std::optional<MeanStd> concept_acc, concept_f1;
  std::size_t failed = 0;
};

CellSummary summarize(const BenchmarkCell& cell) {
  std::vector<double> ta, tf, ca, cf;
  CellSummary s;
  for (const auto& run : cell.runs) {
    if (!run.metrics) {
      ++s.failed;
      continue;
    }
    ta.push_back(run.metrics->task.accuracy);
    tf.push_back(run.metrics->task.macro_f1);
    if (run.metrics->concept_mean) {
      ca.push_back(run.metrics->concept_mean->accuracy);
      cf.push_back(run.metrics->concept_mean->macro_f1);
    }
  }
  s.task_acc = mean_std(ta);
  s.task_f1 = mean_std(tf);
  if (!ca.empty()) {
    s.concept_acc = mean_std(ca);
    s.concept_f1 = mean_std(cf);
  }
  return s;
}

json ms_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}}; }

}  // namespace

json to_json(const BenchmarkReport& r) {
  json cells = json::array();
  for (const auto& cell : r.cells) {
    json runs = json::array();
    for (const auto& run : cell.runs) {
      json jr = {{"seed", run.seed}};
      if (run.metrics) jr["metrics"] = to_json(*run.metrics);
      else jr["error"] = run.error;
      runs.push_back(jr);
    }
    json c = {{"strategy", to_string(cell.strategy)},
              {"data", to_string(cell.setting)},
              {"applicable", cell.applicable},
              {"k", cell.k},
              {"runs", runs}};
    if (cell.applicable) {
      const auto s = summarize(cell);
      c["failed"] = s.failed;
      c["task_accuracy"] = ms_json(s.task_acc);
      c["task_macro_f1"] = ms_json(s.task_f1);
      c["concept_accuracy"] = s.concept_acc ? ms_json(*s.concept_acc) : json("-");
      c["concept_macro_f1"] = s.concept_f1 ? ms_json(*s.concept_f1) : json("-");
    }
    cells.push_back(c);
  }
  return {{"dataset", r.dataset}, {"cells", cells}};
}

std::string tradeoff_csv(const BenchmarkReport& r) {
  std::string out = "strategy,seed,task_acc,task_f1,concept_acc,concept_f1,data,k\n";
  for (const auto& cell : r.cells) {
    for (const auto& run : cell.runs) {
      if (!run.metrics) continue;
      const auto& m = *run.metrics;
      const std::string ca = m.concept_mean ? fmt::format("{:.6f}", m.concept_mean->accuracy) : "";
      const std::string cf = m.concept_mean ? fmt::format("{:.6f}", m.concept_mean->macro_f1) : "";
      out += fmt::format("{},{},{:.6f},{:.6f},{},{},{},{}\n", to_string(cell.strategy), run.seed, m.task.accuracy,
                         m.task.macro_f1, ca, cf, to_string(cell.setting), cell.k);
    }
  }
  return out;
}

std::string format_benchmark(const BenchmarkReport& r) {
  std::vector<DataSetting> settings;
  std::vector<Strategy> strategies;
  for (const auto& c : r.cells) {
    if (std::find(settings.begin(), settings.end(), c.setting) == settings.end()) settings.push_back(c.setting);
    if (std::find(strategies.begin(), strategies.end(), c.strategy) == strategies.end())
      strategies.push_back(c.strategy);
  }
  auto pct = [](const MeanStd& a, const MeanStd& f) {
    return fmt::format("{:.2f}/{:.2f} ±{:.2f}", 100 * a.mean, 100 * f.mean, 100 * a.std);
  };
  std::string out = fmt::format("{:<14}", "strategy");
  for (DataSetting s : settings) out += fmt::format(" | {:<24} {:<24}", fmt::format("task ({})", to_string(s)), "concept");
  out += "\n";
  for (Strategy st : strategies) {
    out += fmt::format("{:<14}", to_string(st));
    for (DataSetting s : settings) {
      const auto it = std::find_if(r.cells.begin(), r.cells.end(),
                                   [&](const BenchmarkCell& c) { return c.strategy == st && c.setting == s; });
      if (it == r.cells.end() || !it->applicable) {
        out += fmt::format(" | {:<24} {:<24}", "n/a", "n/a");
        continue;
      }
      const auto sum = summarize(*it);
      if (sum.task_acc.n == 0) {
        out += fmt::format(" | {:<24} {:<24}", "failed", "failed");
        continue;
      }
      const std::string concept_cell =
          sum.concept_acc ? fmt::format("{} k={}", pct(*sum.concept_acc, *sum.concept_f1), it->k) : "-";
      out += fmt::format(" | {:<24} {:<24}", pct(sum.task_acc, sum.task_f1), concept_cell);
    }
    out += "\n";
  }
  return out;
}

void write_benchmark(const BenchmarkReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "benchmark.json") << to_json(r).dump(2) << "\n";
  std::ofstream(dir / "tradeoff.csv") << tradeoff_csv(r);
}

}  // namespace cbe
