#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cbe/schema.hpp"

namespace cbe {

// ---------------------------------------------------------------------------
// Prompts and response parsing
// ---------------------------------------------------------------------------

/// "Besides {A, B}, what are the additional important features to judge if a
/// {movie} is good or not?" over the human concepts of `source`.
/// Throws SchemaError when `source` has no human concept, ConfigError on an
/// empty subject.
std::string build_concept_prompt(const ConceptSchema& source, std::string_view subject_noun);

/// Candidate concept names from a free-form list answer: one per enumerated or
/// bulleted line (comma-separated if there are no list lines), trailing
/// descriptions stripped, title-cased, deduplicated case-insensitively, and
/// names already in `source` dropped.
std::vector<std::string> parse_concept_response(std::string_view text, const ConceptSchema& source);

/// Title case with word boundaries at spaces and hyphens ("wi-fi" -> "Wi-Fi").
std::string title_case(std::string_view s);

/// A labeled in-context example for the annotation prompt.
struct Exemplar {
  std::string text;
  std::string concept_name;
  ConceptValue value = ConceptValue::Unknown;
};

/// Renders the four-line annotation prompt: three exemplar lines, always in
/// the order positive, negative, unknown, then the query line.
/// Double quotes inside texts are backslash-escaped. Throws ConfigError if
/// the exemplars do not cover each value exactly once.
std::string build_annotation_prompt(std::string_view subject_noun, std::string_view text,
                                    std::string_view concept_name, std::span<const Exemplar> exemplars);

/// The single ternary option named in a response (case-insensitive, whole
/// words); nullopt when none or more than one distinct option appears.
std::optional<ConceptValue> parse_annotation_response(std::string_view response);

// ---------------------------------------------------------------------------
// Clients
// ---------------------------------------------------------------------------

struct LlmQuery {
  std::string prompt;
  /// Set for annotation queries; empty for concept-discovery queries.
  std::string text;
  std::string concept_name;
};

/// Chat-completion style text in, text out. Implementations must be safe to
/// call from several threads. Throws TransportError on request failure.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const LlmQuery& query) = 0;
  /// Identifies the client configuration in annotation cache keys.
  virtual std::string config_hash() const = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  std::atomic<std::size_t> calls_{0};
};

/// Keyword phrases per concept and value; a rule fires when every word of the
/// phrase appears consecutively in the text.
using KeywordRules = std::map<std::string, std::map<ConceptValue, std::vector<std::string>>>;

nlohmann::json to_json(const KeywordRules& rules);
KeywordRules rules_from_json(const nlohmann::json& j);

struct MockConfig {
  KeywordRules rules;
  double rho = 0.0;  // probability of replacing the rule's value by another one
  std::uint64_t seed = 0;
  /// Answers to concept-discovery queries, used in rotation.
  std::vector<std::string> discovery_responses;
};

/// Deterministic offline annotator. The rule value is the first of
/// Positive, Negative, Unknown whose phrase matches (Unknown if none); with
/// probability rho, decided by a hash of (text, concept, seed), it is replaced
/// by one of the two other values chosen uniformly.
class MockClient : public LlmClient {
 public:
  explicit MockClient(MockConfig config);
  std::string complete(const LlmQuery& query) override;
  std::string config_hash() const override;

  /// The noiseless rule value.
  ConceptValue rule_value(std::string_view text, std::string_view concept_name) const;
  /// Rule value after the seeded noise.
  ConceptValue noisy_value(std::string_view text, std::string_view concept_name) const;

 private:
  MockConfig config_;
  std::atomic<std::size_t> discovery_calls_{0};
};

struct LiveConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "CBE_LLM_API_KEY";
  double temperature = 0.0;
  std::chrono::milliseconds timeout{30000};
  double requests_per_second = 0.0;  // 0: unlimited
};

/// OpenAI-compatible chat-completion client. The credential is read from the
/// environment variable named in the config at construction; a missing
/// variable is a ConfigError.
class LiveClient : public LlmClient {
 public:
  explicit LiveClient(LiveConfig config);
  std::string complete(const LlmQuery& query) override;
  std::string config_hash() const override;

 private:
  LiveConfig config_;
  std::string api_key_;
  std::mutex rate_mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

// ---------------------------------------------------------------------------
// Annotation
// ---------------------------------------------------------------------------

struct AnnotateOptions {
  std::string subject_noun = "movie";
  std::vector<Exemplar> exemplars;  // one per value
  std::size_t retries = 2;          // extra attempts after the first
};

struct Annotation {
  ConceptValue value = ConceptValue::Unknown;
  std::string raw;
  bool fallback = false;  // unparseable after every attempt; value is Unknown
  std::size_t attempts = 0;
};

/// Asks `client` for the value of `concept_name` in `text`. Unparseable answers
/// are retried and finally fall back to Unknown with a warning; transport
/// failures are retried and finally raise AnnotationError.
Annotation annotate(LlmClient& client, std::string_view text, std::string_view concept_name,
                    const AnnotateOptions& options);

struct CacheEntry {
  ConceptValue value = ConceptValue::Unknown;
  std::string raw;
};

/// Append-only JSON-lines cache keyed by (sha256 of text, concept, client
/// hash). Loading tolerates a torn final line left by an interrupted run.
class AnnotationCache {
 public:
  /// Opens (creating if needed) the file at `path`; an empty path keeps the
  /// cache in memory only.
  explicit AnnotationCache(std::filesystem::path path = {});

  std::optional<CacheEntry> lookup(std::string_view text, std::string_view concept_name,
                                   std::string_view client_hash) const;
  void insert(std::string_view text, std::string_view concept_name, std::string_view client_hash,
              const CacheEntry& entry);
  std::size_t size() const;

 private:
  using Key = std::tuple<std::string, std::string, std::string>;
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<Key, CacheEntry> entries_;
};

/// Annotates through the cache; a cache hit makes no client call.
Annotation cached_annotate(LlmClient& client, AnnotationCache& cache, std::string_view text,
                           std::string_view concept_name, const AnnotateOptions& options);

/// First human-labeled exemplar per value from the source train split
/// (any human concept). Throws ValidationError if a value never occurs.
std::vector<Exemplar> default_exemplars(const DatasetBundle& bundle);

struct TransformOptions {
  std::string subject_noun = "movie";
  std::size_t parallelism = 4;
  std::size_t retries = 2;
  std::vector<Exemplar> exemplars;  // empty: default_exemplars(bundle)
};

struct TransformStats {
  std::size_t requested = 0;  // annotations needed
  std::size_t cache_hits = 0;
  std::size_t client_calls = 0;
  std::size_t fallbacks = 0;
  std::vector<std::string> failures;  // "<id>/<concept>: message"
};

struct TransformResult {
  DatasetBundle bundle;
  TransformStats stats;
};

/// Builds source_aug (source rows plus llm labels on `generated`) and
/// unlabeled_aug (unlabeled rows with llm labels on every concept) for all
/// splits. Human labels are copied, never re-annotated. Completed annotations
/// land in the cache as they finish; if any fail, AnnotationError is raised
/// after all others are done so a rerun resumes from the cache.
TransformResult transform_dataset(const DatasetBundle& bundle, LlmClient& client, const std::vector<std::string>& generated,
                                  AnnotationCache& cache, const TransformOptions& options = {});

// ---------------------------------------------------------------------------
// Concept discovery
// ---------------------------------------------------------------------------

struct CandidateStats {
  std::string name;
  std::size_t votes = 0;  // discovery answers that mentioned it
  ValueCounts probe;      // annotations on the probe sample (empty if not probed)
};

struct DiscardedConcept {
  std::string name;
  std::string reason;
};

struct AugmentationResult {
  std::vector<CandidateStats> candidates;
  std::vector<std::string> kept;
  std::vector<DiscardedConcept> discarded;
};

nlohmann::json to_json(const AugmentationResult& r);

struct FilterConfig {
  double max_unknown_share = 0.92;
  std::size_t min_votes = 3;
};

/// Keeps candidates with enough votes and an Unknown share on the probe at or
/// below the threshold; names in `source` are discarded as duplicates.
AugmentationResult filter_concepts(std::span<const CandidateStats> candidates, const FilterConfig& config,
                                   const ConceptSchema& source);

struct DiscoveryOptions {
  std::string subject_noun = "movie";
  std::size_t queries = 5;
  std::size_t probe_size = 200;  // source train rows annotated per candidate
  FilterConfig filter;
  TransformOptions annotation;
};

/// Repeats the concept prompt, tallies candidate votes, probes candidates with
/// enough votes on the source train rows and filters.
AugmentationResult discover_concepts(const DatasetBundle& bundle, LlmClient& client, AnnotationCache& cache,
                                     const DiscoveryOptions& options);

}  // namespace cbe
