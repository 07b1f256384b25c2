#include <gtest/gtest.h>

#include <deque>
#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cbe/error.hpp"
#include "cbe/harness.hpp"
#include "cbe/llm_augment.hpp"
#include "test_util.hpp"

namespace cbe {
namespace {

using testing::TempDir;

ConceptSchema imdb_schema() {
  return ConceptSchema({{"Acting", ConceptOrigin::Human},
                        {"Storyline", ConceptOrigin::Human},
                        {"Emotional Arousal", ConceptOrigin::Human},
                        {"Cinematography", ConceptOrigin::Human}});
}

std::vector<Exemplar> exemplars() {
  return {{"great acting", "Acting", ConceptValue::Positive},
          {"dull plot", "Storyline", ConceptValue::Negative},
          {"it was long", "Acting", ConceptValue::Unknown}};
}

/// Replies from a script; "!" entries raise a transport failure.
class ScriptedClient : public LlmClient {
 public:
  explicit ScriptedClient(std::deque<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const LlmQuery& q) override {
    ++calls_;
    last_prompt = q.prompt;
    if (replies_.empty()) throw TransportError("script exhausted");
    std::string r = replies_.front();
    replies_.pop_front();
    if (r == "!") throw TransportError("connection reset");
    return r;
  }
  std::string config_hash() const override { return "scripted"; }
  std::string last_prompt;

 private:
  std::deque<std::string> replies_;
};

TEST(ConceptPrompt, ImdbTemplate) {
  const auto p = build_concept_prompt(imdb_schema(), "movie");
  EXPECT_EQ(p,
            "Besides {Acting, Storyline, Emotional Arousal, Cinematography}, what are the additional important "
            "features to judge if a {movie} is good or not?");
}

TEST(ConceptPrompt, SingleConceptAndTrimmedSubject) {
  const ConceptSchema food({{"Food", ConceptOrigin::Human}});
  EXPECT_EQ(build_concept_prompt(food, "restaurant"),
            "Besides {Food}, what are the additional important features to judge if a {restaurant} is good or not?");
  EXPECT_EQ(build_concept_prompt(food, "  restaurant\t"), build_concept_prompt(food, "restaurant"));
  EXPECT_THROW(build_concept_prompt(food, "   "), ConfigError);
  const ConceptSchema gen({{"Price", ConceptOrigin::Generated}});
  EXPECT_THROW(build_concept_prompt(gen, "movie"), SchemaError);
  // Only human concepts are listed.
  EXPECT_EQ(build_concept_prompt(food.with_generated({"Price"}), "restaurant"), build_concept_prompt(food, "restaurant"));
}

TEST(ParseConceptResponse, Examples) {
  EXPECT_EQ(parse_concept_response("1. Soundtrack\n2. Directing\n3. Acting", imdb_schema()),
            (std::vector<std::string>{"Soundtrack", "Directing"}));
  EXPECT_TRUE(parse_concept_response("", imdb_schema()).empty());
  EXPECT_EQ(parse_concept_response("- price\n- Price", imdb_schema()), (std::vector<std::string>{"Price"}));
}

TEST(ParseConceptResponse, DescriptionsBulletsAndCommaLists) {
  const auto a = parse_concept_response(
      "Here are some:\n1) sound design: the music and effects\n* wi-fi - availability\n\xE2\x80\xA2 PACING\n", imdb_schema());
  EXPECT_EQ(a, (std::vector<std::string>{"Sound Design", "Wi-Fi", "Pacing"}));
  EXPECT_EQ(parse_concept_response("pacing, editing, acting", imdb_schema()),
            (std::vector<std::string>{"Pacing", "Editing"}));
  EXPECT_EQ(title_case("emotional arousal"), "Emotional Arousal");
  EXPECT_EQ(title_case("wi-fi"), "Wi-Fi");
}

TEST(AnnotationPrompt, FourLineStructure) {
  const auto p = build_annotation_prompt("movie", "the score soars", "Soundtrack", exemplars());
  const std::string expect =
      "a. According to the review \"great acting\", the \"Acting\" of the movie is \"positive\".\n"
      "b. According to the review \"dull plot\", the \"Storyline\" of the movie is \"negative\".\n"
      "c. According to the review \"it was long\", the \"Acting\" of the movie is \"unknown\".\n"
      "d. According to the review \"the score soars\", how is the \"Soundtrack\" of the movie? Please answer with "
      "one option in \"positive, negative, or unknown\".";
  EXPECT_EQ(p, expect);
  const std::string tail = "\"positive, negative, or unknown\".";
  EXPECT_EQ(p.substr(p.size() - tail.size()), tail);
}

TEST(AnnotationPrompt, ExemplarOrderIsCanonical) {
  auto ex = exemplars();
  std::reverse(ex.begin(), ex.end());
  EXPECT_EQ(build_annotation_prompt("movie", "x", "Acting", ex), build_annotation_prompt("movie", "x", "Acting", exemplars()));
}

TEST(AnnotationPrompt, QuotesEscaped) {
  const auto p = build_annotation_prompt("movie", "he said \"wow\"", "Acting", exemplars());
  EXPECT_NE(p.find("review \"he said \\\"wow\\\"\", how"), std::string::npos) << p;
  // Every line has an even number of unescaped quotes.
  std::size_t start = 0;
  while (start < p.size()) {
    const auto end = std::min(p.find('\n', start), p.size());
    int q = 0;
    for (std::size_t i = start; i < end; ++i)
      if (p[i] == '"' && (i == 0 || p[i - 1] != '\\')) ++q;
    EXPECT_EQ(q % 2, 0);
    start = end + 1;
  }
}

TEST(AnnotationPrompt, ExemplarsMustCoverEachValueOnce) {
  auto ex = exemplars();
  ex.pop_back();
  EXPECT_THROW(build_annotation_prompt("movie", "x", "Acting", ex), ConfigError);
  ex.push_back({"again", "Acting", ConceptValue::Positive});
  EXPECT_THROW(build_annotation_prompt("movie", "x", "Acting", ex), ConfigError);
}

TEST(ParseAnnotationResponse, ClosedOverTernarySet) {
  EXPECT_EQ(parse_annotation_response("Positive"), ConceptValue::Positive);
  EXPECT_EQ(parse_annotation_response("The answer is \"negative\"."), ConceptValue::Negative);
  EXPECT_EQ(parse_annotation_response("UNKNOWN"), ConceptValue::Unknown);
  EXPECT_FALSE(parse_annotation_response("").has_value());
  EXPECT_FALSE(parse_annotation_response("positive or negative").has_value());
  EXPECT_FALSE(parse_annotation_response("mixed").has_value());
  EXPECT_FALSE(parse_annotation_response("unpositive").has_value());
  EXPECT_EQ(parse_annotation_response("positive, definitely positive"), ConceptValue::Positive);
}

TEST(FilterConcepts, UnknownShareAndVotes) {
  const ConceptSchema cebab({{"Food", ConceptOrigin::Human}, {"Service", ConceptOrigin::Human}});
  auto probe = [](std::size_t pos, std::size_t neg, std::size_t unk) {
    ValueCounts v;
    v.counts = {neg, pos, unk};
    return v;
  };
  // Wi-Fi 99.4% Unknown, Location 64.2% Unknown (per 1000 probe rows).
  const std::vector<CandidateStats> cands{{"Wi-Fi", 5, probe(3, 3, 994)},
                                          {"Location", 5, probe(200, 158, 642)},
                                          {"Parking", 1, probe(500, 400, 100)},
                                          {"food", 5, probe(500, 400, 100)}};
  const auto r = filter_concepts(cands, FilterConfig{}, cebab);
  EXPECT_EQ(r.kept, (std::vector<std::string>{"Location"}));
  ASSERT_EQ(r.discarded.size(), 3u);
  EXPECT_EQ(r.discarded[0].name, "Wi-Fi");
  EXPECT_NE(r.discarded[0].reason.find("99.4%"), std::string::npos) << r.discarded[0].reason;
  EXPECT_EQ(r.discarded[1].name, "Parking");
  EXPECT_NE(r.discarded[1].reason.find("fewer than 3"), std::string::npos);
  EXPECT_EQ(r.discarded[2].name, "food");
  for (const auto& k : r.kept)
    for (const auto& d : r.discarded) EXPECT_NE(k, d.name);
}

TEST(FilterConcepts, EditingAndSoundtrackNeedDifferentThresholds) {
  // Unknown 83.0% vs 86.8%: any threshold keeping the second keeps the first.
  const ConceptSchema imdb = imdb_schema();
  ValueCounts editing, soundtrack;
  editing.counts = {85, 85, 830};
  soundtrack.counts = {66, 66, 868};
  const std::vector<CandidateStats> c{{"Editing", 5, editing}, {"Soundtrack", 5, soundtrack}};
  for (double t : {0.80, 0.85, 0.92}) {
    const auto r = filter_concepts(c, FilterConfig{t, 3}, imdb);
    const bool keeps_soundtrack = std::find(r.kept.begin(), r.kept.end(), "Soundtrack") != r.kept.end();
    const bool keeps_editing = std::find(r.kept.begin(), r.kept.end(), "Editing") != r.kept.end();
    if (keeps_soundtrack) EXPECT_TRUE(keeps_editing);
  }
}

KeywordRules food_rules() {
  return {{"Food", {{ConceptValue::Positive, {"wonderful", "tasty"}}, {ConceptValue::Negative, {"bland"}}}}};
}

TEST(MockClient, RuleValue) {
  MockClient client({food_rules(), 0.0, 0, {}});
  AnnotateOptions opt;
  opt.exemplars = exemplars();
  const auto a = annotate(client, "the food was wonderful", "Food", opt);
  EXPECT_EQ(a.value, ConceptValue::Positive);
  EXPECT_EQ(a.raw, "positive");
  EXPECT_EQ(annotate(client, "so bland", "Food", opt).value, ConceptValue::Negative);
  EXPECT_EQ(annotate(client, "no opinion", "Food", opt).value, ConceptValue::Unknown);
  EXPECT_EQ(annotate(client, "wonderful", "Service", opt).value, ConceptValue::Unknown);
  EXPECT_THROW(MockClient({food_rules(), 1.5, 0, {}}), ConfigError);
}

TEST(MockClient, FullNoiseAlwaysFlips) {
  MockClient client({food_rules(), 1.0, 3, {}});
  for (int i = 0; i < 500; ++i) {
    const std::string text = fmt::format("row {} the food was {}", i, i % 3 ? "wonderful" : "bland");
    EXPECT_NE(client.noisy_value(text, "Food"), client.rule_value(text, "Food"));
  }
}

TEST(MockClient, NoiseRateMatchesBinomial) {
  // Agreement ~ Binomial(1e4, 0.75): sd = 0.0043, so +-0.02 is > 4 sd.
  MockClient client({food_rules(), 0.25, 11, {}});
  const int n = 10000;
  int agree = 0;
  std::array<int, 3> flips_to{};
  for (int i = 0; i < n; ++i) {
    const std::string text = fmt::format("review {} the food was tasty", i);
    const auto v = client.noisy_value(text, "Food");
    if (v == ConceptValue::Positive) ++agree;
    else ++flips_to[static_cast<std::size_t>(v)];
  }
  EXPECT_NEAR(static_cast<double>(agree) / n, 0.75, 0.02);
  // Flips split evenly between the two other values.
  EXPECT_NEAR(static_cast<double>(flips_to[0]) / (n - agree), 0.5, 0.05);
  // Seeded: the same (text, concept, seed) gives the same value.
  MockClient again({food_rules(), 0.25, 11, {}});
  for (int i = 0; i < 100; ++i) {
    const std::string text = fmt::format("review {} the food was tasty", i);
    EXPECT_EQ(client.noisy_value(text, "Food"), again.noisy_value(text, "Food"));
  }
}

TEST(Annotate, RetriesThenFallsBackToUnknown) {
  AnnotateOptions opt;
  opt.exemplars = exemplars();
  opt.retries = 2;
  ScriptedClient ok({"hmm", "Negative."});
  const auto a = annotate(ok, "t", "Acting", opt);
  EXPECT_EQ(a.value, ConceptValue::Negative);
  EXPECT_EQ(a.attempts, 2u);
  EXPECT_FALSE(a.fallback);

  ScriptedClient vague({"maybe", "positive and negative", ""});
  const auto b = annotate(vague, "t", "Acting", opt);
  EXPECT_TRUE(b.fallback);
  EXPECT_EQ(b.value, ConceptValue::Unknown);
  EXPECT_EQ(b.attempts, 3u);
  EXPECT_EQ(vague.calls(), 3u);

  ScriptedClient flaky({"!", "positive"});
  EXPECT_EQ(annotate(flaky, "t", "Acting", opt).value, ConceptValue::Positive);

  ScriptedClient down({"!", "!", "!"});
  EXPECT_THROW(annotate(down, "t", "Acting", opt), AnnotationError);
}

TEST(AnnotationCache, HitsSkipTheClientAndFallbacksAreNotStored) {
  TempDir dir;
  AnnotateOptions opt;
  opt.exemplars = exemplars();
  opt.retries = 0;
  {
    AnnotationCache cache(dir / "cache.jsonl");
    ScriptedClient c({"positive", "???"});
    EXPECT_EQ(cached_annotate(c, cache, "t1", "Acting", opt).value, ConceptValue::Positive);
    EXPECT_TRUE(cached_annotate(c, cache, "t2", "Acting", opt).fallback);
    EXPECT_EQ(cache.size(), 1u);
  }
  AnnotationCache reopened(dir / "cache.jsonl");
  EXPECT_EQ(reopened.size(), 1u);
  ScriptedClient none({});
  const auto hit = cached_annotate(none, reopened, "t1", "Acting", opt);
  EXPECT_EQ(hit.value, ConceptValue::Positive);
  EXPECT_EQ(hit.attempts, 0u);
  EXPECT_EQ(none.calls(), 0u);
  EXPECT_FALSE(reopened.lookup("t1", "Acting", "other-client").has_value());
}

TEST(AnnotationCache, TornLastLineToleratedButNotMidFile) {
  TempDir dir;
  {
    AnnotationCache cache(dir / "c.jsonl");
    cache.insert("a", "Food", "h", {ConceptValue::Negative, "negative"});
    cache.insert("b", "Food", "h", {ConceptValue::Positive, "positive"});
  }
  const std::string good = testing::slurp(dir / "c.jsonl");
  std::ofstream(dir / "torn.jsonl") << good << "{\"text_sha256\": \"ab";
  AnnotationCache torn(dir / "torn.jsonl");
  EXPECT_EQ(torn.size(), 2u);
  EXPECT_EQ(torn.lookup("b", "Food", "h")->value, ConceptValue::Positive);

  const auto nl = good.find('\n');
  std::ofstream(dir / "bad.jsonl") << good.substr(0, nl + 1) << "garbage\n" << good.substr(nl + 1);
  EXPECT_THROW(AnnotationCache(dir / "bad.jsonl"), ParseError);
}

class Transform : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticSpec s = testing::small_spec(40, 10, 10, 5);
    s.num_human = 2;
    s.unlabeled_sizes = {30, 8, 8};
    spec = s;
    base = gen_synthetic(s);
  }
  SyntheticSpec spec;
  DatasetBundle base;
  std::vector<std::string> generated{"Ambiance", "Noise"};
};

TEST_F(Transform, HumanLabelsKeptAndAugmentedRowsComplete) {
  MockClient client({rules_from_lexicon(default_lexicon(4)), 0.3, 1, {}});
  AnnotationCache cache;
  const auto r = transform_dataset(base, client, generated, cache);
  const auto& out = r.bundle;
  EXPECT_EQ(out.schema().size(), 4u);
  EXPECT_EQ(out.schema().num_generated(), 2u);
  for (Split s : kSplits) {
    const auto& src = base.split(Partition::Source, s);
    const auto& sa = out.split(Partition::SourceAug, s);
    ASSERT_EQ(src.size(), sa.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (const char* h : {"Food", "Service"}) EXPECT_EQ(sa[i].concepts.at(h), src[i].concepts.at(h));
      for (const auto& g : generated) EXPECT_EQ(sa[i].concepts.at(g).source, LabelSource::Llm);
    }
    for (const auto& ex : out.split(Partition::UnlabeledAug, s)) {
      EXPECT_EQ(ex.concepts.size(), 4u);
      for (const auto& [name, lab] : ex.concepts) EXPECT_EQ(lab.source, LabelSource::Llm);
    }
  }
  EXPECT_EQ(r.stats.requested, (40 + 10 + 10) * 2 + (30 + 8 + 8) * 4u);
  EXPECT_EQ(r.stats.fallbacks, 0u);
}

TEST_F(Transform, RerunIsIdenticalWithZeroNewCalls) {
  TempDir dir;
  MockClient client({rules_from_lexicon(default_lexicon(4)), 0.3, 1, {}});
  DatasetBundle first;
  {
    AnnotationCache cache(dir / "cache.jsonl");
    first = transform_dataset(base, client, generated, cache).bundle;
  }
  AnnotationCache cache(dir / "cache.jsonl");
  MockClient fresh({rules_from_lexicon(default_lexicon(4)), 0.3, 1, {}});
  const auto second = transform_dataset(base, fresh, generated, cache);
  EXPECT_EQ(second.stats.client_calls, 0u);
  EXPECT_EQ(second.stats.cache_hits, second.stats.requested);
  for (Partition p : kPartitions)
    for (Split s : kSplits) EXPECT_EQ(first.split(p, s), second.bundle.split(p, s));
}

TEST_F(Transform, PartialFailureIsResumable) {
  // A client that drops every 7th call: the run fails, the rerun resumes.
  class Flaky : public LlmClient {
   public:
    explicit Flaky(MockClient& inner) : inner_(inner) {}
    std::string complete(const LlmQuery& q) override {
      if (++calls_ % 7 == 0) throw TransportError("dropped");
      return inner_.complete(q);
    }
    std::string config_hash() const override { return inner_.config_hash(); }

   private:
    MockClient& inner_;
  };
  MockClient mock({rules_from_lexicon(default_lexicon(4)), 0.0, 1, {}});
  Flaky flaky(mock);
  spdlog::set_level(spdlog::level::off);
  AnnotationCache cache;
  TransformOptions opt;
  opt.retries = 0;
  opt.parallelism = 1;
  EXPECT_THROW(transform_dataset(base, flaky, generated, cache, opt), AnnotationError);
  spdlog::set_level(spdlog::level::info);
  const std::size_t cached = cache.size();
  EXPECT_GT(cached, 0u);
  const auto done = transform_dataset(base, mock, generated, cache, opt);
  EXPECT_EQ(done.stats.cache_hits, cached);
  EXPECT_TRUE(done.stats.failures.empty());
}

TEST(TransformCebabShape, TenConceptsAfterAugmentation) {
  SyntheticSpec s = testing::small_spec(30, 5, 5);
  s.k = 10;
  s.m = 5;
  s.num_human = 4;
  s.unlabeled_sizes = {10, 2, 2};
  const auto base = gen_synthetic(s);
  MockClient client({rules_from_lexicon(default_lexicon(10)), 0.0, 0, {}});
  AnnotationCache cache;
  std::vector<std::string> gen;
  for (std::size_t j = 4; j < 10; ++j) gen.push_back(base.schema().at(j).name);
  const auto out = transform_dataset(base, client, gen, cache).bundle;
  EXPECT_EQ(out.schema().size(), 10u);
  for (const auto& ex : out.split(Partition::SourceAug, Split::Train)) EXPECT_EQ(ex.concepts.size(), 10u);
}

TEST(DiscoverConcepts, VotesProbeAndFilter) {
  SyntheticSpec s = testing::small_spec(60, 5, 5);
  s.num_human = 2;
  const auto full = gen_synthetic(s);
  // Start from the two human concepts only; the texts still mention all four.
  std::array<SplitSet, 4> parts;
  parts[0] = full.partition(Partition::Source);
  const DatasetBundle base(full.name(), full.schema().human_only(), 2, parts);
  MockConfig mc{rules_from_lexicon(default_lexicon(4)), 0.0, 0, {}};
  mc.discovery_responses = {"1. Ambiance\n2. Noise\n3. Parking", "- ambiance\n- noise\n- food", "Ambiance, Noise, Decor"};
  MockClient client(mc);
  AnnotationCache cache;
  DiscoveryOptions opt;
  opt.subject_noun = "restaurant";
  opt.queries = 5;
  opt.probe_size = 40;
  const auto r = discover_concepts(base, client, cache, opt);
  EXPECT_EQ(r.kept, (std::vector<std::string>{"Ambiance", "Noise"}));
  std::vector<std::string> dropped;
  for (const auto& d : r.discarded) dropped.push_back(d.name);
  EXPECT_EQ(dropped, (std::vector<std::string>{"Parking", "Decor"}));
  const auto j = to_json(r);
  EXPECT_EQ(j["kept"].size(), 2u);
  EXPECT_EQ(j["candidates"][0]["votes"], 5);
}

}  // namespace
}  // namespace cbe
