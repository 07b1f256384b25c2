#include "cbe/llm_augment.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cbe/encoder.hpp"
#include "cbe/error.hpp"
#include "cbe/hash.hpp"

// After Eigen: the OpenSSL headers pulled in here define macros that clash
// with Eigen internals.
#include <httplib.h>

namespace cbe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto* b = s.begin();
  const auto* e = s.end();
  while (b < e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(e[-1]))) --e;
  return std::string(b, e);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string escape_quotes(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

// --- prompts -------------------------------------------------------------------

std::string build_concept_prompt(const ConceptSchema& source, std::string_view subject_noun) {
  std::vector<std::string> human;
  for (const auto& c : source.concepts())
    if (c.origin == ConceptOrigin::Human) human.push_back(c.name);
  if (human.empty()) throw SchemaError("concept prompt needs at least one human concept");
  const std::string subject = trim(subject_noun);
  if (subject.empty()) throw ConfigError("subject noun is empty");
  return fmt::format("Besides {{{}}}, what are the additional important features to judge if a {{{}}} is good or not?",
                     fmt::join(human, ", "), subject);
}

std::string title_case(std::string_view s) {
  std::string out;
  bool start = true;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    out += static_cast<char>(start ? std::toupper(c) : std::tolower(c));
    start = ch == ' ' || ch == '-';
  }
  return out;
}

std::vector<std::string> parse_concept_response(std::string_view text, const ConceptSchema& source) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    lines.push_back(trim(text.substr(pos, end - pos)));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }

  // List markers: "1." "1)" "-" "*" "•".
  auto strip_marker = [](const std::string& line) -> std::optional<std::string> {
    std::size_t i = 0;
    if (line.rfind("\xE2\x80\xA2", 0) == 0) return trim(line.substr(3));
    if (!line.empty() && (line[0] == '-' || line[0] == '*')) return trim(line.substr(1));
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) return trim(line.substr(i + 1));
    return std::nullopt;
  };

  std::vector<std::string> raw;
  for (const auto& line : lines) {
    if (auto item = strip_marker(line)) raw.push_back(*item);
  }
  if (raw.empty()) {
    // No list structure: treat the answer as a comma-separated enumeration.
    std::string all(text);
    std::size_t p = 0;
    while (p <= all.size()) {
      const auto c = all.find_first_of(",\n", p);
      const auto e = c == std::string::npos ? all.size() : c;
      raw.push_back(trim(std::string_view(all).substr(p, e - p)));
      if (c == std::string::npos) break;
      p = c + 1;
    }
  }

  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& n : source.names()) seen.insert(lower(n));
  for (std::string item : raw) {
    std::string cleaned;
    for (char c : item)
      if (c != '*') cleaned += c;
    item = cleaned;
    for (const std::string_view sep : {":", " - ", " \xE2\x80\x93 ", " ("}) {
      const auto at = item.find(sep);
      if (at != std::string::npos) item.erase(at);
    }
    item = trim(item);
    while (!item.empty() && (item.back() == '.' || item.back() == ',' || item.back() == ';')) item.pop_back();
    item = trim(item);
    if (item.empty()) continue;
    std::string name = title_case(item);
    if (seen.insert(lower(name)).second) out.push_back(std::move(name));
  }
  return out;
}

std::string build_annotation_prompt(std::string_view subject_noun, std::string_view text,
                                    std::string_view concept_name, std::span<const Exemplar> exemplars) {
  const Exemplar* by_value[3] = {nullptr, nullptr, nullptr};
  for (const auto& e : exemplars) {
    auto& slot = by_value[static_cast<std::size_t>(e.value)];
    if (slot) throw ConfigError(fmt::format("two exemplars for value {}", to_string(e.value)));
    slot = &e;
  }
  for (ConceptValue v : kConceptValues) {
    if (!by_value[static_cast<std::size_t>(v)])
      throw ConfigError(fmt::format("annotation exemplars lack a {} example", to_string(v)));
  }
  const std::string subject = trim(subject_noun);
  std::string out;
  const std::pair<char, ConceptValue> order[] = {
      {'a', ConceptValue::Positive}, {'b', ConceptValue::Negative}, {'c', ConceptValue::Unknown}};
  for (const auto& [letter, v] : order) {
    const Exemplar& e = *by_value[static_cast<std::size_t>(v)];
    out += fmt::format("{}. According to the review \"{}\", the \"{}\" of the {} is \"{}\".\n", letter,
                       escape_quotes(e.text), escape_quotes(e.concept_name), subject, lower(to_string(v)));
  }
  out += fmt::format(
      "d. According to the review \"{}\", how is the \"{}\" of the {}? Please answer with one option in "
      "\"positive, negative, or unknown\".",
      escape_quotes(text), escape_quotes(concept_name), subject);
  return out;
}

std::optional<ConceptValue> parse_annotation_response(std::string_view response) {
  std::set<ConceptValue> found;
  for (const auto& w : split_words(response)) {
    if (w == "positive") found.insert(ConceptValue::Positive);
    else if (w == "negative") found.insert(ConceptValue::Negative);
    else if (w == "unknown") found.insert(ConceptValue::Unknown);
  }
  if (found.size() != 1) return std::nullopt;
  return *found.begin();
}

// --- rules ---------------------------------------------------------------------

json to_json(const KeywordRules& rules) {
  json j = json::object();
  for (const auto& [concept_name, by_value] : rules) {
    json c = json::object();
    for (const auto& [v, phrases] : by_value) c[std::string(to_string(v))] = phrases;
    j[concept_name] = c;
  }
  return j;
}

KeywordRules rules_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("keyword rules must be a JSON object");
  KeywordRules rules;
  for (const auto& [concept_name, by_value] : j.items()) {
    for (const auto& [v, phrases] : by_value.items())
      rules[concept_name][parse_concept_value(v)] = phrases.get<std::vector<std::string>>();
  }
  return rules;
}

// --- mock ----------------------------------------------------------------------

namespace {

bool contains_phrase(const std::vector<std::string>& words, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > words.size()) return false;
  return std::search(words.begin(), words.end(), phrase.begin(), phrase.end()) != words.end();
}

/// Two independent uniforms in [0, 1) from a stable hash.
std::pair<double, double> hash_uniforms(std::string_view text, std::string_view concept_name, std::uint64_t seed) {
  const std::string digest = sha256_hex(fmt::format("{}\x1f{}\x1f{}", seed, concept_name, text));
  auto take = [&](std::size_t off) {
    const std::uint64_t x = std::stoull(digest.substr(off, 16), nullptr, 16);
    return static_cast<double>(x >> 11) * 0x1.0p-53;
  };
  return {take(0), take(16)};
}

}  // namespace

MockClient::MockClient(MockConfig config) : config_(std::move(config)) {
  if (!(config_.rho >= 0.0 && config_.rho <= 1.0))
    throw ConfigError(fmt::format("noise rate must lie in [0, 1], got {}", config_.rho));
}

ConceptValue MockClient::rule_value(std::string_view text, std::string_view concept_name) const {
  const auto it = config_.rules.find(std::string(concept_name));
  if (it == config_.rules.end()) return ConceptValue::Unknown;
  const auto words = split_words(text);
  for (ConceptValue v : {ConceptValue::Positive, ConceptValue::Negative, ConceptValue::Unknown}) {
    const auto pv = it->second.find(v);
    if (pv == it->second.end()) continue;
    for (const auto& phrase : pv->second)
      if (contains_phrase(words, split_words(phrase))) return v;
  }
  return ConceptValue::Unknown;
}

ConceptValue MockClient::noisy_value(std::string_view text, std::string_view concept_name) const {
  const ConceptValue v = rule_value(text, concept_name);
  const auto [u_flip, u_pick] = hash_uniforms(text, concept_name, config_.seed);
  if (u_flip >= config_.rho) return v;
  ConceptValue others[2];
  int n = 0;
  for (ConceptValue o : kConceptValues)
    if (o != v) others[n++] = o;
  return others[u_pick < 0.5 ? 0 : 1];
}

std::string MockClient::complete(const LlmQuery& query) {
  ++calls_;
  if (query.concept_name.empty()) {
    if (config_.discovery_responses.empty()) return "";
    const std::size_t i = discovery_calls_++;
    return config_.discovery_responses[i % config_.discovery_responses.size()];
  }
  return fmt::format("{}", lower(to_string(noisy_value(query.text, query.concept_name))));
}

std::string MockClient::config_hash() const {
  json j = {{"kind", "mock"}, {"rules", to_json(config_.rules)}, {"rho", config_.rho}, {"seed", config_.seed}};
  return sha256_hex(j.dump());
}

// --- live ----------------------------------------------------------------------

LiveClient::LiveClient(LiveConfig config) : config_(std::move(config)) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (!key || !*key) throw ConfigError(fmt::format("environment variable {} is not set", config_.api_key_env));
  api_key_ = key;
}

std::string LiveClient::complete(const LlmQuery& query) {
  ++calls_;
  if (config_.requests_per_second > 0.0) {
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(rate_mutex_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_slot_);
      next_slot_ = slot + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(1.0 / config_.requests_per_second));
    }
    std::this_thread::sleep_until(slot);
  }
  httplib::Client http(config_.base_url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
  http.set_connection_timeout(secs);
  http.set_read_timeout(secs);
  const json body = {{"model", config_.model},
                     {"temperature", config_.temperature},
                     {"messages", json::array({{{"role", "user"}, {"content", query.prompt}}})}};
  const httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
  const auto res = http.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) throw TransportError(fmt::format("request to {} failed: {}", config_.base_url, httplib::to_string(res.error())));
  if (res->status != 200) throw TransportError(fmt::format("HTTP {} from {}", res->status, config_.base_url));
  try {
    const json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed completion response: ") + e.what());
  }
}

std::string LiveClient::config_hash() const {
  json j = {{"kind", "live"},
            {"base_url", config_.base_url},
            {"path", config_.path},
            {"model", config_.model},
            {"temperature", config_.temperature}};
  return sha256_hex(j.dump());
}

// --- annotation ------------------------------------------------------------------

Annotation annotate(LlmClient& client, std::string_view text, std::string_view concept_name,
                    const AnnotateOptions& options) {
  LlmQuery q{build_annotation_prompt(options.subject_noun, text, concept_name, options.exemplars), std::string(text),
             std::string(concept_name)};
  Annotation out;
  std::string last_error;
  bool got_reply = false;
  for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
    ++out.attempts;
    try {
      out.raw = client.complete(q);
    } catch (const TransportError& e) {
      last_error = e.what();
      continue;
    }
    got_reply = true;
    if (auto v = parse_annotation_response(out.raw)) {
      out.value = *v;
      return out;
    }
  }
  if (!got_reply)
    throw AnnotationError(fmt::format("annotating \"{}\" failed after {} attempts: {}", concept_name, out.attempts,
                                      last_error));
  spdlog::warn("unparseable annotation for \"{}\" after {} attempts; using Unknown", concept_name, out.attempts);
  out.value = ConceptValue::Unknown;
  out.fallback = true;
  return out;
}

AnnotationCache::AnnotationCache(fs::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ifstream in(path_);
  std::string line;
  std::size_t lineno = 0;
  bool torn = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (torn) throw ParseError("corrupt annotation cache " + path_.string(), lineno - 1);
    try {
      const json j = json::parse(line);
      entries_[{j.at("text_sha256").get<std::string>(), j.at("concept").get<std::string>(),
                j.at("client_hash").get<std::string>()}] = {parse_concept_value(j.at("value").get<std::string>()),
                                                             j.value("raw", std::string{})};
    } catch (const std::exception&) {
      torn = true;  // only acceptable as the last line
    }
  }
  if (torn) spdlog::warn("ignoring torn last line of annotation cache {}", path_.string());
}

std::optional<CacheEntry> AnnotationCache::lookup(std::string_view text, std::string_view concept_name,
                                                  std::string_view client_hash) const {
  std::lock_guard lock(mutex_);
  const auto it = entries_.find({sha256_hex(text), std::string(concept_name), std::string(client_hash)});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void AnnotationCache::insert(std::string_view text, std::string_view concept_name, std::string_view client_hash,
                             const CacheEntry& entry) {
  const std::string digest = sha256_hex(text);
  std::lock_guard lock(mutex_);
  entries_[{digest, std::string(concept_name), std::string(client_hash)}] = entry;
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ValidationError("cannot append to annotation cache " + path_.string());
  const json j = {{"text_sha256", digest},
                  {"concept", concept_name},
                  {"client_hash", client_hash},
                  {"value", to_string(entry.value)},
                  {"raw", entry.raw}};
  out << j.dump() << '\n';
  out.flush();
}

std::size_t AnnotationCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

Annotation cached_annotate(LlmClient& client, AnnotationCache& cache, std::string_view text,
                           std::string_view concept_name, const AnnotateOptions& options) {
  const std::string key = client.config_hash();
  if (auto hit = cache.lookup(text, concept_name, key)) return {hit->value, hit->raw, false, 0};
  Annotation a = annotate(client, text, concept_name, options);
  // Fallbacks are not cached so that a rerun asks again.
  if (!a.fallback) cache.insert(text, concept_name, key, {a.value, a.raw});
  return a;
}

std::vector<Exemplar> default_exemplars(const DatasetBundle& bundle) {
  std::vector<Exemplar> out;
  for (ConceptValue v : {ConceptValue::Positive, ConceptValue::Negative, ConceptValue::Unknown}) {
    bool found = false;
    for (const auto& ex : bundle.split(Partition::Source, Split::Train)) {
      for (const auto& spec : bundle.schema().concepts()) {
        if (spec.origin != ConceptOrigin::Human) continue;
        const auto it = ex.concepts.find(spec.name);
        if (it != ex.concepts.end() && it->second.value == v) {
          out.push_back({ex.text, spec.name, v});
          found = true;
          break;
        }
      }
      if (found) break;
    }
    if (!found)
      throw ValidationError(fmt::format("no human-labeled {} example in source train for the prompt", to_string(v)));
  }
  return out;
}

namespace {

/// Runs `n` jobs on up to `parallelism` threads. `job(i)` must be thread-safe.
/// The first exception stops further jobs and is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t parallelism, Fn&& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(parallelism, 1), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

TransformResult transform_dataset(const DatasetBundle& bundle, LlmClient& client,
                                  const std::vector<std::string>& generated, AnnotationCache& cache,
                                  const TransformOptions& options) {
  const ConceptSchema human = bundle.schema().num_generated() ? bundle.schema().human_only() : bundle.schema();
  const ConceptSchema schema = generated.empty() ? human : human.with_generated(generated);
  AnnotateOptions aopt;
  aopt.subject_noun = options.subject_noun;
  aopt.retries = options.retries;
  aopt.exemplars = options.exemplars.empty() ? default_exemplars(bundle) : options.exemplars;

  struct Job {
    Partition target;
    std::size_t split, row;
    std::string concept_name;
  };
  std::array<SplitSet, 4> parts;
  parts[0] = bundle.partition(Partition::Source);
  parts[1] = bundle.partition(Partition::Unlabeled);
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < 3; ++s) {
    auto& sa = parts[static_cast<std::size_t>(Partition::SourceAug)][s];
    sa = parts[0][s];
    for (std::size_t r = 0; r < sa.size(); ++r) {
      for (auto it = sa[r].concepts.begin(); it != sa[r].concepts.end();) {
        // Drop labels of concepts outside the new schema (stale generated ones).
        it = schema.index_of(it->first) ? std::next(it) : sa[r].concepts.erase(it);
      }
      for (const auto& g : generated) jobs.push_back({Partition::SourceAug, s, r, g});
    }
    auto& ua = parts[static_cast<std::size_t>(Partition::UnlabeledAug)][s];
    ua = parts[1][s];
    for (std::size_t r = 0; r < ua.size(); ++r)
      for (const auto& spec : schema.concepts()) jobs.push_back({Partition::UnlabeledAug, s, r, spec.name});
  }

  std::vector<std::optional<Annotation>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  const std::size_t calls_before = client.calls();
  parallel_for(jobs.size(), options.parallelism, [&](std::size_t i) {
    const Job& job = jobs[i];
    const Example& ex = parts[static_cast<std::size_t>(job.target)][job.split][job.row];
    try {
      results[i] = cached_annotate(client, cache, ex.text, job.concept_name, aopt);
    } catch (const AnnotationError& e) {
      errors[i] = fmt::format("{}/{}: {}", ex.id, job.concept_name, e.what());
    }
  });

  TransformStats stats;
  stats.requested = jobs.size();
  stats.client_calls = client.calls() - calls_before;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!results[i]) {
      stats.failures.push_back(errors[i]);
      continue;
    }
    stats.cache_hits += results[i]->attempts == 0;
    stats.fallbacks += results[i]->fallback;
    const Job& job = jobs[i];
    auto& ex = parts[static_cast<std::size_t>(job.target)][job.split][job.row];
    ex.concepts[job.concept_name] = {results[i]->value, LabelSource::Llm};
  }
  if (stats.fallbacks) spdlog::warn("{} annotations fell back to Unknown", stats.fallbacks);
  if (!stats.failures.empty()) {
    for (const auto& f : stats.failures) spdlog::error("annotation failed: {}", f);
    throw AnnotationError(fmt::format("{} of {} annotations failed; completed ones are cached, rerun to resume",
                                      stats.failures.size(), stats.requested));
  }
  return {DatasetBundle(bundle.name(), schema, bundle.num_classes(), std::move(parts)), std::move(stats)};
}

// --- discovery -------------------------------------------------------------------

json to_json(const AugmentationResult& r) {
  json cands = json::array();
  for (const auto& c : r.candidates) {
    json probe = nullptr;
    if (c.probe.present()) {
      probe = {{"negative", c.probe.counts[0]}, {"positive", c.probe.counts[1]}, {"unknown", c.probe.counts[2]},
               {"unknown_share", (*c.probe.shares())[2]}};
    }
    cands.push_back({{"name", c.name}, {"votes", c.votes}, {"probe", probe}});
  }
  json discarded = json::array();
  for (const auto& d : r.discarded) discarded.push_back({{"name", d.name}, {"reason", d.reason}});
  return {{"candidates", cands}, {"kept", r.kept}, {"discarded", discarded}};
}

AugmentationResult filter_concepts(std::span<const CandidateStats> candidates, const FilterConfig& config,
                                   const ConceptSchema& source) {
  AugmentationResult r;
  r.candidates.assign(candidates.begin(), candidates.end());
  std::set<std::string> taken;
  for (const auto& n : source.names()) taken.insert(lower(n));
  for (const auto& c : candidates) {
    if (taken.count(lower(c.name))) {
      r.discarded.push_back({c.name, "duplicate of an existing concept"});
      continue;
    }
    if (c.votes < config.min_votes) {
      r.discarded.push_back({c.name, fmt::format("named in {} discovery answers, fewer than {}", c.votes,
                                                 config.min_votes)});
      continue;
    }
    const auto shares = c.probe.shares();
    if (!shares) {
      r.discarded.push_back({c.name, "no probe annotations"});
      continue;
    }
    if ((*shares)[2] > config.max_unknown_share) {
      r.discarded.push_back({c.name, fmt::format("Unknown share {:.1f}% above {:.1f}%", 100.0 * (*shares)[2],
                                                 100.0 * config.max_unknown_share)});
      continue;
    }
    taken.insert(lower(c.name));
    r.kept.push_back(c.name);
  }
  return r;
}

AugmentationResult discover_concepts(const DatasetBundle& bundle, LlmClient& client, AnnotationCache& cache,
                                     const DiscoveryOptions& options) {
  const std::string prompt = build_concept_prompt(bundle.schema(), options.subject_noun);
  std::vector<CandidateStats> candidates;
  for (std::size_t q = 0; q < options.queries; ++q) {
    std::string answer;
    try {
      answer = client.complete({prompt, "", ""});
    } catch (const TransportError& e) {
      throw AnnotationError(std::string("concept discovery query failed: ") + e.what());
    }
    for (const auto& name : parse_concept_response(answer, bundle.schema())) {
      auto it = std::find_if(candidates.begin(), candidates.end(),
                             [&](const CandidateStats& c) { return lower(c.name) == lower(name); });
      if (it == candidates.end()) candidates.push_back({name, 1, {}});
      else ++it->votes;
    }
  }

  AnnotateOptions aopt;
  aopt.subject_noun = options.subject_noun;
  aopt.retries = options.annotation.retries;
  aopt.exemplars = options.annotation.exemplars.empty() ? default_exemplars(bundle) : options.annotation.exemplars;
  const auto& train = bundle.split(Partition::Source, Split::Train);
  const std::size_t n = std::min(options.probe_size, train.size());
  for (auto& c : candidates) {
    if (c.votes < options.filter.min_votes) continue;
    std::vector<ConceptValue> values(n);
    parallel_for(n, options.annotation.parallelism, [&](std::size_t i) {
      values[i] = cached_annotate(client, cache, train[i].text, c.name, aopt).value;
    });
    for (ConceptValue v : values) ++c.probe.counts[static_cast<std::size_t>(v)];
  }
  return filter_concepts(candidates, options.filter, bundle.schema());
}

}  // namespace cbe
