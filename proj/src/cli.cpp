#include "cbe/cli.hpp"

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "cbe/error.hpp"
#include "cbe/harness.hpp"
#include "cbe/intervene.hpp"
#include "cbe/llm_augment.hpp"
#include "cbe/mixup.hpp"
#include "cbe/service.hpp"
#include "cbe/training.hpp"

namespace cbe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Flattens a `--config` JSON object into option-name -> string values.
/// Keys may use dashes or underscores.
std::vector<std::pair<std::string, std::vector<std::string>>> read_config_items(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": config file must hold a JSON object");
  auto scalar = [&](const std::string& key, const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
    if (v.is_number()) return v.dump();
    throw ConfigError(fmt::format("{}: value of \"{}\" must be a scalar or an array of scalars", path, key));
  };
  std::vector<std::pair<std::string, std::vector<std::string>>> items;
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    std::vector<std::string> inputs;
    if (value.is_array()) {
      for (const auto& v : value) inputs.push_back(scalar(key, v));
    } else {
      inputs.push_back(scalar(key, value));
    }
    items.emplace_back(std::move(name), std::move(inputs));
  }
  return items;
}

/// Fills options of `sub` that were not given on the command line.
void apply_config(CLI::App* sub, const std::string& path) {
  for (auto& [name, inputs] : read_config_items(path)) {
    CLI::Option* opt = sub->get_option_no_throw("--" + name);
    if (opt == nullptr || name == "config")
      throw ConfigError(fmt::format("{}: unknown option \"{}\" for {}", path, name, sub->get_name()));
    if (opt->count() > 0) continue;
    opt->add_result(inputs);
    opt->run_callback();
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Options shared by every command that builds an annotator client.
struct ClientOptions {
  std::string kind = "mock";
  std::string rules;
  double rho = 0.0;
  std::uint64_t mock_seed = 0;
  std::string discovery;
  std::string llm_url = LiveConfig{}.base_url;
  std::string llm_model = LiveConfig{}.model;
  std::string llm_key_env = LiveConfig{}.api_key_env;
  double rps = 0.0;
  std::string cache;
  std::size_t parallelism = 4;
  std::size_t retries = 2;
  std::string subject = "movie";

  void add_to(CLI::App* app) {
    app->add_option("--client", kind, "Annotator: mock or live")->check(CLI::IsMember({"mock", "live"}));
    app->add_option("--rules", rules, "Mock keyword rules (JSON); default: <dataset>/mock_rules.json");
    app->add_option("--rho", rho, "Mock noise rate")->check(CLI::Range(0.0, 1.0));
    app->add_option("--mock-seed", mock_seed, "Mock noise seed");
    app->add_option("--discovery", discovery, "Mock concept-discovery answers (JSON array of strings)");
    app->add_option("--llm-url", llm_url, "Live chat-completion base URL");
    app->add_option("--llm-model", llm_model, "Live model name");
    app->add_option("--llm-key-env", llm_key_env, "Environment variable holding the API key");
    app->add_option("--rps", rps, "Live requests per second (0: unlimited)");
    app->add_option("--cache", cache, "Annotation cache file (JSON lines)");
    app->add_option("--parallelism", parallelism, "Concurrent annotation requests")->check(CLI::PositiveNumber);
    app->add_option("--retries", retries, "Extra attempts per annotation");
    app->add_option("--subject", subject, "Subject noun used in prompts");
  }

  std::unique_ptr<LlmClient> make(const fs::path& dataset_dir) const {
    if (kind == "live") {
      LiveConfig lc;
      lc.base_url = llm_url;
      lc.model = llm_model;
      lc.api_key_env = llm_key_env;
      lc.requests_per_second = rps;
      return std::make_unique<LiveClient>(lc);
    }
    MockConfig mc;
    mc.rho = rho;
    mc.seed = mock_seed;
    const fs::path rules_path = rules.empty() ? dataset_dir / "mock_rules.json" : fs::path(rules);
    if (fs::exists(rules_path)) mc.rules = rules_from_json(read_json_file(rules_path));
    else if (!rules.empty()) throw ValidationError("cannot open " + rules_path.string());
    if (!discovery.empty()) mc.discovery_responses = read_json_file(discovery).get<std::vector<std::string>>();
    return std::make_unique<MockClient>(mc);
  }

  fs::path cache_path(const fs::path& dataset_dir) const {
    return cache.empty() ? dataset_dir / "annotation_cache.jsonl" : fs::path(cache);
  }
};

/// Training hyperparameters bound to flags.
struct TrainOptions {
  TrainConfig config;
  std::string strategy = "joint";
  std::string data = "auto";
  double fixed_lambda = -1.0;
  std::size_t epochs = 0;

  void add_to(CLI::App* app) {
    app->add_option("--strategy", strategy, "vanilla, independent, sequential, joint or joint_mixup");
    app->add_option("--data", data, "Training data: auto, source or augmented");
    app->add_option("--gamma", config.gamma, "Concept-loss weight");
    app->add_option("--tau", config.tau, "Weight of the unlabeled-side mixup loss");
    app->add_option("--alpha", config.alpha, "Beta parameter of the mixup weight");
    app->add_option("--fixed-lambda", fixed_lambda, "Pin every mixup weight to this value");
    app->add_option("--lr", config.learning_rate, "Learning rate");
    app->add_option("--epochs", epochs, "Epochs for every stage (overrides the per-stage values)");
    app->add_option("--encoder-epochs", config.encoder_epochs, "Epochs of the encoder/projector stage");
    app->add_option("--classifier-epochs", config.classifier_epochs, "Epochs of the label-predictor stage");
    app->add_option("--batch-size", config.batch_size, "Mini-batch size");
    app->add_option("--embedding-dim", config.embedding_dim, "Latent size of the embedding-bag encoder");
    app->add_option("--hidden-dim", config.hidden_dim, "Hidden size of recurrent backends");
    app->add_option("--max-len", config.max_len, "Token limit per text");
    app->add_option("--seed", config.seed, "Random seed");
    app->add_option("--patience", config.patience, "Early-stopping patience (0: off)");
    app->add_flag("--freeze-encoder", config.freeze_encoder, "Keep the encoder fixed");
  }

  TrainConfig resolve() const {
    TrainConfig c = config;
    c.strategy = parse_strategy(strategy);
    c.data = parse_data_setting(data);
    if (fixed_lambda >= 0.0) c.fixed_lambda = fixed_lambda;
    if (epochs > 0) c.encoder_epochs = c.classifier_epochs = epochs;
    c.validate();
    return c;
  }
};

Partition default_eval_partition(const DatasetBundle& bundle, const ConceptModel& model) {
  if (model.schema().num_generated() > 0 && bundle.has_partition(Partition::SourceAug)) return Partition::SourceAug;
  return Partition::Source;
}

Edits parse_set_flags(const std::vector<std::string>& sets) {
  Edits edits;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError(fmt::format("--set expects Concept=Value, got \"{}\"", s));
    edits.emplace_back(s.substr(0, eq), parse_concept_value(s.substr(eq + 1)));
  }
  return edits;
}

Service* g_service = nullptr;
extern "C" void handle_stop_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept bottleneck text classifiers: training, LLM concept augmentation, intervention"};
  app.name("cbe");
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  // CLI11 reads config files only for the top-level app, so subcommand
  // configs are applied after parsing, and required options checked after that.
  std::vector<std::pair<CLI::App*, std::string>> configs;
  configs.reserve(16);
  auto with_config = [&configs](CLI::App* sub) {
    configs.emplace_back(sub, std::string());
    sub->add_option("--config", configs.back().second, "JSON file with option values; flags override it");
  };
  std::vector<std::pair<CLI::App*, CLI::Option*>> required;
  auto need = [&required](CLI::App* sub, CLI::Option* opt) { required.emplace_back(sub, opt); };

  std::function<void()> action;

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic benchmark dataset");
  with_config(gen);
  SyntheticSpec spec;
  std::string gen_out;
  std::vector<std::size_t> source_sizes, unlabeled_sizes;
  std::size_t num_human = 0;
  need(gen, gen->add_option("--out", gen_out, "Dataset directory"));
  gen->add_option("--k", spec.k, "Number of concepts");
  gen->add_option("--m", spec.m, "Number of classes");
  gen->add_option("--num-human", num_human, "Human concepts (default: all)");
  gen->add_option("--source-sizes", source_sizes, "train dev test sizes of the labeled source portion")->expected(3);
  gen->add_option("--unlabeled-sizes", unlabeled_sizes, "train dev test sizes of the unlabeled portion")->expected(3);
  gen->add_option("--hidden-rate", spec.hidden_rate, "Chance a concept phrase hides its value");
  gen->add_option("--seed", spec.seed, "Generator seed");
  gen->add_option("--name", spec.name, "Dataset name");
  gen->callback([&] {
    action = [&] {
      if (!source_sizes.empty()) std::copy(source_sizes.begin(), source_sizes.end(), spec.source_sizes.begin());
      if (!unlabeled_sizes.empty()) std::copy(unlabeled_sizes.begin(), unlabeled_sizes.end(), spec.unlabeled_sizes.begin());
      if (num_human > 0) spec.num_human = num_human;
      const auto bundle = gen_synthetic(spec);
      save_dataset(bundle, gen_out);
      write_json_file(fs::path(gen_out) / "mock_rules.json", to_json(rules_from_lexicon(default_lexicon(spec.k))));
      write_json_file(fs::path(gen_out) / "synthetic_spec.json", to_json(spec));
      out << json{{"dataset", gen_out}, {"k", spec.k}, {"m", spec.m}}.dump() << "\n";
    };
  });

  // stats
  auto* stats = app.add_subcommand("stats", "Per-concept label distribution of a dataset");
  std::string stats_dataset;
  bool stats_json = false;
  need(stats, stats->add_option("--dataset", stats_dataset, "Dataset directory"));
  stats->add_flag("--json", stats_json, "Print JSON instead of a table");
  stats->callback([&] {
    action = [&] {
      const auto s = dataset_stats(load_dataset(stats_dataset));
      if (stats_json) out << to_json(s).dump(2) << "\n";
      else out << format_stats_table(s);
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  with_config(train_cmd);
  TrainOptions topt;
  std::string train_dataset, train_out;
  need(train_cmd, train_cmd->add_option("--dataset", train_dataset, "Dataset directory"));
  need(train_cmd, train_cmd->add_option("--out", train_out, "Model directory"));
  topt.add_to(train_cmd);
  train_cmd->callback([&] {
    action = [&] {
      const TrainConfig cfg = topt.resolve();
      const auto bundle = load_dataset(train_dataset);
      auto result = train(bundle, cfg);
      save_model(result.model, train_out);
      json summary = {{"model", train_out},
                      {"strategy", to_string(cfg.strategy)},
                      {"seed", cfg.seed},
                      {"epochs_run", result.report.epochs.size()}};
      if (result.model.interpretable()) {
        const auto data = select_training_data(bundle, cfg);
        std::vector<Example> rows;
        for (const Example* ex : data.train_all()) rows.push_back(*ex);
        save_intervention_table(fit_intervention_table(result.model, rows), fs::path(train_out) / "intervention.json");
      }
      const auto part = default_eval_partition(bundle, result.model);
      if (!bundle.split(part, Split::Dev).empty())
        summary["dev"] = to_json(evaluate(result.model, bundle.split(part, Split::Dev)));
      write_json_file(fs::path(train_out) / "report.json",
                      {{"config", to_json(cfg)},
                       {"seed", cfg.seed},
                       {"config_hash", config_hash(cfg)},
                       {"data", to_string(select_training_data(bundle, cfg).setting)},
                       {"dataset", fs::absolute(train_dataset).string()},
                       {"training", to_json(result.report)},
                       {"dev", summary.value("dev", json(nullptr))}});
      out << summary.dump(2) << "\n";
    };
  });

  // augment-concepts
  auto* augment = app.add_subcommand("augment-concepts", "Discover additional concepts with the annotator");
  with_config(augment);
  ClientOptions aug_client;
  std::string aug_dataset, aug_out;
  DiscoveryOptions dopt;
  need(augment, augment->add_option("--dataset", aug_dataset, "Dataset directory"));
  augment->add_option("--out", aug_out, "Result file (default: <dataset>/augmentation.json)");
  augment->add_option("--queries", dopt.queries, "Repeated discovery queries");
  augment->add_option("--probe-size", dopt.probe_size, "Source train rows annotated per candidate");
  augment->add_option("--max-unknown-share", dopt.filter.max_unknown_share, "Discard above this Unknown share");
  augment->add_option("--min-votes", dopt.filter.min_votes, "Minimum discovery answers naming a candidate");
  aug_client.add_to(augment);
  augment->callback([&] {
    action = [&] {
      const auto bundle = load_dataset(aug_dataset);
      auto client = aug_client.make(aug_dataset);
      AnnotationCache cache(aug_client.cache_path(aug_dataset));
      dopt.subject_noun = aug_client.subject;
      dopt.annotation.parallelism = aug_client.parallelism;
      dopt.annotation.retries = aug_client.retries;
      const auto result = discover_concepts(bundle, *client, cache, dopt);
      const fs::path path = aug_out.empty() ? fs::path(aug_dataset) / "augmentation.json" : fs::path(aug_out);
      write_json_file(path, to_json(result));
      out << to_json(result).dump(2) << "\n";
    };
  });

  // annotate
  auto* annotate_cmd = app.add_subcommand("annotate", "Build the augmented portions with annotator labels");
  with_config(annotate_cmd);
  ClientOptions ann_client;
  std::string ann_dataset, ann_out, ann_concepts, ann_augmentation;
  need(annotate_cmd, annotate_cmd->add_option("--dataset", ann_dataset, "Dataset directory"));
  need(annotate_cmd, annotate_cmd->add_option("--out", ann_out, "Output dataset directory"));
  annotate_cmd->add_option("--concepts", ann_concepts, "Comma-separated generated concepts");
  annotate_cmd->add_option("--augmentation", ann_augmentation, "augment-concepts result whose kept set is used");
  ann_client.add_to(annotate_cmd);
  annotate_cmd->callback([&] {
    action = [&] {
      const auto bundle = load_dataset(ann_dataset);
      std::vector<std::string> generated = split_list(ann_concepts);
      if (!ann_augmentation.empty()) {
        for (const auto& n : read_json_file(ann_augmentation).at("kept")) generated.push_back(n.get<std::string>());
      }
      auto client = ann_client.make(ann_dataset);
      AnnotationCache cache(ann_client.cache_path(ann_dataset));
      TransformOptions opt;
      opt.subject_noun = ann_client.subject;
      opt.parallelism = ann_client.parallelism;
      opt.retries = ann_client.retries;
      const auto result = transform_dataset(bundle, *client, generated, cache, opt);
      save_dataset(result.bundle, ann_out);
      const fs::path rules = fs::path(ann_dataset) / "mock_rules.json";
      if (fs::exists(rules) && fs::path(ann_out) != fs::path(ann_dataset))
        fs::copy_file(rules, fs::path(ann_out) / "mock_rules.json", fs::copy_options::overwrite_existing);
      out << json{{"dataset", ann_out},
                  {"k", result.bundle.schema().size()},
                  {"requested", result.stats.requested},
                  {"cache_hits", result.stats.cache_hits},
                  {"client_calls", result.stats.client_calls},
                  {"fallbacks", result.stats.fallbacks}}
                 .dump(2)
          << "\n";
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a dataset split");
  std::string eval_model, eval_dataset, eval_split = "test", eval_partition, eval_curve;
  std::uint64_t curve_seed = 0;
  need(eval, eval->add_option("--model", eval_model, "Model directory"));
  eval->add_option("--dataset", eval_dataset, "Dataset directory (default: the one the model was trained on)");
  eval->add_option("--split", eval_split, "train, dev or test");
  eval->add_option("--partition", eval_partition, "Partition (default: source, or source_aug for augmented models)");
  eval->add_option("--curve", eval_curve, "Also report an intervention curve: oracle or random_wrong");
  eval->add_option("--curve-seed", curve_seed, "Seed of the intervention curve");
  eval->callback([&] {
    action = [&] {
      const auto model = load_model(eval_model);
      if (eval_dataset.empty()) {
        const fs::path report = fs::path(eval_model) / "report.json";
        if (!fs::exists(report)) throw ConfigError("--dataset is required: the model has no report.json");
        eval_dataset = read_json_file(report).at("dataset").get<std::string>();
      }
      const auto bundle = load_dataset(eval_dataset);
      const Partition part = eval_partition.empty() ? default_eval_partition(bundle, model) : parse_partition(eval_partition);
      const auto& rows = bundle.split(part, parse_split(eval_split));
      json j = to_json(evaluate(model, rows));
      j["partition"] = to_string(part);
      j["split"] = eval_split;
      if (!eval_curve.empty()) {
        const auto table = load_intervention_table(fs::path(eval_model) / "intervention.json");
        Rng rng(curve_seed);
        j["curve"] = {{"policy", eval_curve},
                      {"accuracy", intervention_curve(model, table, rows, parse_intervention_policy(eval_curve), rng)}};
      }
      out << j.dump(2) << "\n";
    };
  });

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Train and evaluate a strategy x data x seed grid");
  with_config(bench);
  TrainOptions bopt;
  std::string bench_dataset, bench_out, bench_strategies, bench_settings = "source,augmented", bench_seeds = "0";
  need(bench, bench->add_option("--dataset", bench_dataset, "Dataset directory"));
  need(bench, bench->add_option("--out", bench_out, "Report directory"));
  bench->add_option("--strategies", bench_strategies, "Comma-separated strategies (default: all)");
  bench->add_option("--settings", bench_settings, "Comma-separated data settings");
  bench->add_option("--seeds", bench_seeds, "Comma-separated seeds");
  bopt.add_to(bench);
  bench->callback([&] {
    action = [&] {
      const auto bundle = load_dataset(bench_dataset);
      BenchmarkConfig bc;
      bc.base = bopt.resolve();
      if (!bench_strategies.empty()) {
        bc.strategies.clear();
        for (const auto& s : split_list(bench_strategies)) bc.strategies.push_back(parse_strategy(s));
      }
      bc.settings.clear();
      for (const auto& s : split_list(bench_settings)) bc.settings.push_back(parse_data_setting(s));
      bc.seeds.clear();
      for (const auto& s : split_list(bench_seeds)) bc.seeds.push_back(std::stoull(s));
      const auto report = run_benchmark(bundle, bc);
      write_benchmark(report, bench_out);
      out << format_benchmark(report);
    };
  });

  // explain
  auto* explain_cmd = app.add_subcommand("explain", "Explain a prediction");
  std::string ex_model, ex_text;
  int ex_class = -1;
  need(explain_cmd, explain_cmd->add_option("--model", ex_model, "Model directory"));
  need(explain_cmd, explain_cmd->add_option("--text", ex_text, "Input text"));
  explain_cmd->add_option("--class", ex_class, "Class to explain (default: predicted)");
  explain_cmd->callback([&] {
    action = [&] {
      const auto model = load_model(ex_model);
      out << to_json(explain(model, ex_text, ex_class >= 0 ? std::optional<int>(ex_class) : std::nullopt)).dump(2)
          << "\n";
    };
  });

  // intervene
  auto* intervene_cmd = app.add_subcommand("intervene", "Predict with concept edits");
  std::string iv_model, iv_text;
  std::vector<std::string> iv_sets;
  need(intervene_cmd, intervene_cmd->add_option("--model", iv_model, "Model directory"));
  need(intervene_cmd, intervene_cmd->add_option("--text", iv_text, "Input text"));
  intervene_cmd->add_option("--set", iv_sets, "Concept=Value edit (repeatable)");
  intervene_cmd->callback([&] {
    action = [&] {
      const auto model = load_model(iv_model);
      const auto table = load_intervention_table(fs::path(iv_model) / "intervention.json");
      const auto o = predict_with_intervention(model, table, iv_text, parse_set_flags(iv_sets));
      out << fmt::format("before: class {} (p={:.4f})\nafter:  class {} (p={:.4f})\n", o.before.label,
                         o.before.probs[o.before.label], o.after.label, o.after.probs[o.after.label]);
      out << to_json(o).dump(2) << "\n";
    };
  });

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve predict/explain/intervene over HTTP");
  with_config(serve_cmd);
  ServiceConfig scfg;
  std::string sv_model, sv_table, sv_cors;
  if (const char* env = std::getenv("CBE_MODEL_DIR")) sv_model = env;
  if (const char* env = std::getenv("CBE_PORT")) scfg.port = std::atoi(env);
  serve_cmd->add_option("--model", sv_model, "Model directory (env CBE_MODEL_DIR)");
  serve_cmd->add_option("--table", sv_table, "Intervention table (default: <model>/intervention.json)");
  serve_cmd->add_option("--host", scfg.host, "Bind address");
  serve_cmd->add_option("--port", scfg.port, "Port (env CBE_PORT; 0 picks a free one)");
  serve_cmd->add_option("--max-body", scfg.max_body_bytes, "Maximum request body in bytes");
  serve_cmd->add_option("--cors", sv_cors, "Comma-separated allowed origins");
  serve_cmd->callback([&] {
    action = [&] {
      scfg.model_dir = sv_model;
      scfg.table_path = sv_table;
      scfg.cors_origins = split_list(sv_cors);
      Service service = Service::load(scfg);
      g_service = &service;
      std::signal(SIGINT, handle_stop_signal);
      std::signal(SIGTERM, handle_stop_signal);
      service.serve();
      g_service = nullptr;
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    for (auto& [sub, path] : configs) {
      if (sub->parsed() && !path.empty()) apply_config(sub, path);
    }
    for (auto& [sub, opt] : required) {
      if (sub->parsed() && opt->count() == 0) throw CLI::RequiredError(opt->get_name());
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (action) action();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInvalid;
}

}  // namespace cbe
