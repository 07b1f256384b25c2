#include "cbe/schema.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "cbe/error.hpp"

namespace cbe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
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

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << content;
}

std::string split_file_name(Partition p, Split s) {
  return fmt::format("{}.{}.jsonl", to_string(p), to_string(s));
}

}  // namespace

// --- values ----------------------------------------------------------------

std::string_view to_string(ConceptValue v) {
  switch (v) {
    case ConceptValue::Negative: return "Negative";
    case ConceptValue::Positive: return "Positive";
    case ConceptValue::Unknown: return "Unknown";
  }
  return "Unknown";
}

ConceptValue parse_concept_value(std::string_view s) {
  for (ConceptValue v : kConceptValues) {
    if (iequals(s, to_string(v))) return v;
  }
  throw SchemaError(fmt::format("invalid concept value \"{}\" (expected Negative, Positive or Unknown)", s));
}

std::optional<Simplex3> encode_concept_target(std::optional<ConceptValue> v) {
  if (!v) return std::nullopt;
  Simplex3 t{0.0, 0.0, 0.0};
  t[static_cast<std::size_t>(*v)] = 1.0;
  return t;
}

std::string_view to_string(ConceptOrigin o) { return o == ConceptOrigin::Human ? "human" : "generated"; }
std::string_view to_string(LabelSource s) { return s == LabelSource::Human ? "human" : "llm"; }

ConceptOrigin parse_concept_origin(std::string_view s) {
  if (s == "human") return ConceptOrigin::Human;
  if (s == "generated") return ConceptOrigin::Generated;
  throw SchemaError(fmt::format("invalid concept origin \"{}\"", s));
}

LabelSource parse_label_source(std::string_view s) {
  if (s == "human") return LabelSource::Human;
  if (s == "llm") return LabelSource::Llm;
  throw SchemaError(fmt::format("invalid label source \"{}\"", s));
}

// --- schema ----------------------------------------------------------------

ConceptSchema::ConceptSchema(std::vector<ConceptSpec> concepts) : concepts_(std::move(concepts)) {
  if (concepts_.empty()) throw SchemaError("concept schema must contain at least one concept");
  std::set<std::string> seen;
  for (const auto& c : concepts_) {
    if (c.name.empty()) throw SchemaError("concept names must be non-empty");
    if (!seen.insert(c.name).second) throw SchemaError("duplicate concept name \"" + c.name + "\"");
  }
}

std::size_t ConceptSchema::num_human() const {
  return static_cast<std::size_t>(std::count_if(concepts_.begin(), concepts_.end(), [](const ConceptSpec& c) {
    return c.origin == ConceptOrigin::Human;
  }));
}

std::size_t ConceptSchema::num_generated() const { return size() - num_human(); }

std::vector<std::string> ConceptSchema::names() const {
  std::vector<std::string> out;
  out.reserve(concepts_.size());
  for (const auto& c : concepts_) out.push_back(c.name);
  return out;
}

std::optional<std::size_t> ConceptSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    if (concepts_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ConceptSchema::require_index(std::string_view name) const {
  if (auto i = index_of(name)) return *i;
  throw SchemaError(fmt::format("unknown concept \"{}\"", name));
}

ConceptSchema ConceptSchema::human_only() const {
  std::vector<ConceptSpec> out;
  for (const auto& c : concepts_) {
    if (c.origin == ConceptOrigin::Human) out.push_back(c);
  }
  return ConceptSchema(std::move(out));
}

ConceptSchema ConceptSchema::with_generated(const std::vector<std::string>& generated) const {
  auto out = concepts_;
  for (const auto& name : generated) out.push_back({name, ConceptOrigin::Generated});
  return ConceptSchema(std::move(out));
}

json to_json(const ConceptSchema& schema) {
  json arr = json::array();
  for (const auto& c : schema.concepts()) arr.push_back({{"name", c.name}, {"origin", to_string(c.origin)}});
  return arr;
}

ConceptSchema schema_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("concept schema must be a JSON array");
  std::vector<ConceptSpec> specs;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("name") || !item["name"].is_string())
      throw ParseError("concept schema entries need a string \"name\"");
    ConceptSpec spec{item["name"].get<std::string>(), ConceptOrigin::Human};
    if (item.contains("origin")) spec.origin = parse_concept_origin(item["origin"].get<std::string>());
    specs.push_back(std::move(spec));
  }
  return ConceptSchema(std::move(specs));
}

ConceptSchema load_schema(const fs::path& path) { return schema_from_json(read_json_file(path)); }

// --- examples ----------------------------------------------------------------

std::vector<std::optional<ConceptValue>> concept_values(const Example& ex, const ConceptSchema& schema) {
  std::vector<std::optional<ConceptValue>> out(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j) {
    auto it = ex.concepts.find(schema.at(j).name);
    if (it != ex.concepts.end()) out[j] = it->second.value;
  }
  return out;
}

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::Source: return "source";
    case Partition::Unlabeled: return "unlabeled";
    case Partition::SourceAug: return "source_aug";
    case Partition::UnlabeledAug: return "unlabeled_aug";
  }
  return "source";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "train";
}

Partition parse_partition(std::string_view s) {
  for (Partition p : kPartitions) {
    if (s == to_string(p)) return p;
  }
  throw ConfigError(fmt::format("unknown partition \"{}\"", s));
}

Split parse_split(std::string_view s) {
  for (Split sp : kSplits) {
    if (s == to_string(sp)) return sp;
  }
  throw ConfigError(fmt::format("unknown split \"{}\"", s));
}

json to_json(const Example& ex) {
  json concepts = json::object();
  for (const auto& [name, lab] : ex.concepts) {
    concepts[name] = {{"value", to_string(lab.value)}, {"source", to_string(lab.source)}};
  }
  return {{"id", ex.id}, {"text", ex.text}, {"label", ex.label}, {"concepts", concepts}};
}

Example example_from_json(const json& j, const ConceptSchema& schema, LabelSource default_source) {
  if (!j.is_object()) throw ParseError("record must be a JSON object");
  Example ex;
  try {
    ex.id = j.at("id").get<std::string>();
    ex.text = j.at("text").get<std::string>();
    ex.label = j.at("label").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad record field: ") + e.what());
  }
  if (!j.contains("concepts")) return ex;
  const auto& cs = j["concepts"];
  if (!cs.is_object()) throw ParseError("\"concepts\" must be an object");
  for (const auto& [name, val] : cs.items()) {
    if (!schema.index_of(name)) throw SchemaError(fmt::format("unknown concept \"{}\"", name));
    ConceptLabel lab;
    lab.source = default_source;
    if (val.is_string()) {
      lab.value = parse_concept_value(val.get<std::string>());
    } else if (val.is_object() && val.contains("value") && val["value"].is_string()) {
      lab.value = parse_concept_value(val["value"].get<std::string>());
      if (val.contains("source")) lab.source = parse_label_source(val["source"].get<std::string>());
    } else {
      throw ParseError(fmt::format("concept \"{}\" needs a string value", name));
    }
    ex.concepts.emplace(name, lab);
  }
  return ex;
}

// --- bundle ------------------------------------------------------------------

namespace {

void validate_example(const Example& ex, Partition p, const ConceptSchema& schema, int m) {
  auto where = [&] { return fmt::format("{} example \"{}\"", to_string(p), ex.id); };
  if (ex.label < 0 || ex.label >= m)
    throw ValidationError(fmt::format("{}: label {} outside [0, {})", where(), ex.label, m));
  for (const auto& [name, lab] : ex.concepts) {
    if (!schema.index_of(name)) throw SchemaError(fmt::format("{}: unknown concept \"{}\"", where(), name));
  }
  for (const auto& spec : schema.concepts()) {
    auto it = ex.concepts.find(spec.name);
    const bool human = spec.origin == ConceptOrigin::Human;
    std::optional<LabelSource> required;
    switch (p) {
      case Partition::Source:
        if (human) required = LabelSource::Human;
        break;
      case Partition::Unlabeled:
        break;
      case Partition::SourceAug:
        required = human ? LabelSource::Human : LabelSource::Llm;
        break;
      case Partition::UnlabeledAug:
        required = LabelSource::Llm;
        break;
    }
    if (!required) {
      if (it != ex.concepts.end())
        throw ValidationError(fmt::format("{}: concept \"{}\" must be unlabeled here", where(), spec.name));
      continue;
    }
    if (it == ex.concepts.end())
      throw ValidationError(fmt::format("{}: missing label for concept \"{}\"", where(), spec.name));
    if (it->second.source != *required)
      throw ValidationError(fmt::format("{}: concept \"{}\" must carry a {} label", where(), spec.name,
                                        to_string(*required)));
  }
}

}  // namespace

DatasetBundle::DatasetBundle(std::string name, ConceptSchema schema, int num_classes,
                             std::array<SplitSet, 4> partitions)
    : name_(std::move(name)), schema_(std::move(schema)), num_classes_(num_classes),
      partitions_(std::move(partitions)) {
  if (num_classes_ < 2) throw ValidationError("task cardinality must be at least 2");
  for (Partition p : kPartitions) {
    std::set<std::string> ids;
    for (Split s : kSplits) {
      for (const auto& ex : split(p, s)) {
        validate_example(ex, p, schema_, num_classes_);
        if (!ids.insert(ex.id).second)
          throw ValidationError(fmt::format("duplicate id \"{}\" in partition {}", ex.id, to_string(p)));
      }
    }
  }
}

bool DatasetBundle::has_partition(Partition p) const {
  const auto& ps = partition(p);
  return std::any_of(ps.begin(), ps.end(), [](const auto& v) { return !v.empty(); });
}

namespace {

std::vector<Example> read_split_file(const fs::path& path, const ConceptSchema& schema, LabelSource default_source) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.filename().string() + ": malformed record: " + e.what(), lineno);
    }
    try {
      out.push_back(example_from_json(j, schema, default_source));
    } catch (const ParseError& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), lineno);
    } catch (const SchemaError& e) {
      throw SchemaError(fmt::format("{}: {} (line {})", path.filename().string(), e.what(), lineno));
    }
  }
  return out;
}

}  // namespace

DatasetBundle load_dataset(const fs::path& dir) {
  json manifest = read_json_file(dir / "manifest.json");
  if (!manifest.contains("schema")) throw ValidationError("manifest.json has no schema; pass one explicitly");
  return load_dataset(dir, schema_from_json(manifest["schema"]));
}

DatasetBundle load_dataset(const fs::path& dir, const ConceptSchema& schema) {
  json manifest = read_json_file(dir / "manifest.json");
  if (!manifest.contains("num_classes") || !manifest["num_classes"].is_number_integer())
    throw ValidationError("manifest.json needs an integer num_classes");
  const int m = manifest["num_classes"].get<int>();
  const std::string name = manifest.value("name", dir.filename().string());
  const json parts = manifest.value("partitions", json::object());

  std::array<SplitSet, 4> data;
  for (Partition p : kPartitions) {
    const std::string pname(to_string(p));
    if (!parts.contains(pname)) continue;
    const LabelSource default_source = p == Partition::Source ? LabelSource::Human : LabelSource::Llm;
    for (Split s : kSplits) {
      const std::string sname(to_string(s));
      if (!parts[pname].contains(sname)) continue;
      const json& entry = parts[pname][sname];
      std::string file = split_file_name(p, s);
      std::optional<std::size_t> expected;
      if (entry.is_object()) {
        file = entry.value("file", file);
        if (entry.contains("size")) expected = entry["size"].get<std::size_t>();
      } else if (entry.is_number_unsigned() || entry.is_number_integer()) {
        expected = entry.get<std::size_t>();
      }
      const fs::path path = dir / file;
      std::vector<Example> rows;
      if (fs::exists(path)) {
        rows = read_split_file(path, schema, default_source);
      } else if (expected.value_or(0) != 0) {
        throw ValidationError("missing split file " + path.string());
      }
      if (expected && *expected != rows.size())
        throw ValidationError(fmt::format("{}: manifest says {} records, found {}", file, *expected, rows.size()));
      data[static_cast<std::size_t>(p)][static_cast<std::size_t>(s)] = std::move(rows);
    }
  }
  return DatasetBundle(name, schema, m, std::move(data));
}

void save_dataset(const DatasetBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  json parts = json::object();
  for (Partition p : kPartitions) {
    json splits = json::object();
    for (Split s : kSplits) {
      const std::string file = split_file_name(p, s);
      splits[std::string(to_string(s))] = {{"file", file}, {"size", bundle.size(p, s)}};
      std::string content;
      for (const auto& ex : bundle.split(p, s)) content += to_json(ex).dump() + "\n";
      write_text_file(dir / file, content);
    }
    parts[std::string(to_string(p))] = splits;
  }
  json manifest = {{"name", bundle.name()},
                   {"num_classes", bundle.num_classes()},
                   {"schema", to_json(bundle.schema())},
                   {"partitions", parts}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

// --- statistics --------------------------------------------------------------

std::optional<Simplex3> ValueCounts::shares() const {
  const auto n = present();
  if (n == 0) return std::nullopt;
  const double d = static_cast<double>(n);
  return Simplex3{counts[0] / d, counts[1] / d, counts[2] / d};
}

std::vector<ConceptStats> dataset_stats(const DatasetBundle& bundle) {
  std::vector<ConceptStats> out;
  for (Partition p : kPartitions) {
    if (!bundle.has_partition(p)) continue;
    for (const auto& spec : bundle.schema().concepts()) {
      ConceptStats st{p, spec.name, {}};
      for (Split s : kSplits) {
        for (const auto& ex : bundle.split(p, s)) {
          auto it = ex.concepts.find(spec.name);
          if (it == ex.concepts.end()) {
            ++st.counts.absent;
          } else {
            ++st.counts.counts[static_cast<std::size_t>(it->second.value)];
          }
        }
      }
      out.push_back(std::move(st));
    }
  }
  return out;
}

json to_json(const std::vector<ConceptStats>& stats) {
  json arr = json::array();
  for (const auto& st : stats) {
    json row = {{"partition", to_string(st.partition)},
                {"concept", st.concept_name},
                {"absent", st.counts.absent},
                {"total", st.counts.present()}};
    const auto shares = st.counts.shares();
    for (ConceptValue v : kConceptValues) {
      const auto i = static_cast<std::size_t>(v);
      json cell = {{"count", st.counts.counts[i]}};
      cell["share"] = shares ? json((*shares)[i]) : json(nullptr);
      row[std::string(to_string(v))] = cell;
    }
    arr.push_back(std::move(row));
  }
  return arr;
}

std::string format_stats_table(const std::vector<ConceptStats>& stats) {
  std::ostringstream os;
  os << fmt::format("{:<14} {:<20} {:>16} {:>16} {:>16} {:>7}\n", "Partition", "Concept", "Negative", "Positive",
                    "Unknown", "Total");
  for (const auto& st : stats) {
    const auto shares = st.counts.shares();
    auto cell = [&](ConceptValue v) {
      const auto i = static_cast<std::size_t>(v);
      if (!shares) return fmt::format("{} (-)", st.counts.counts[i]);
      return fmt::format("{} ({:.1f}%)", st.counts.counts[i], 100.0 * (*shares)[i]);
    };
    os << fmt::format("{:<14} {:<20} {:>16} {:>16} {:>16} {:>7}\n", to_string(st.partition), st.concept_name,
                      cell(ConceptValue::Negative), cell(ConceptValue::Positive), cell(ConceptValue::Unknown),
                      st.counts.present());
  }
  return os.str();
}

}  // namespace cbe
