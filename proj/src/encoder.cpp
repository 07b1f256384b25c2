#include "cbe/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "cbe/error.hpp"

namespace cbe {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// --- vocabulary --------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> id_to_token) : id_to_token_(std::move(id_to_token)) {
  if (id_to_token_.size() < 2) throw ConfigError("vocabulary needs the two reserved slots");
  for (std::size_t i = 2; i < id_to_token_.size(); ++i) {
    if (!index_.emplace(id_to_token_[i], static_cast<TokenId>(i)).second)
      throw ConfigError("duplicate vocabulary entry \"" + id_to_token_[i] + "\"");
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t min_freq) {
  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) ++freq[std::move(w)];
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  for (auto& [w, n] : items) {
    if (n >= min_freq) tokens.push_back(w);
  }
  return Vocabulary(std::move(tokens));
}

TokenId Vocabulary::lookup(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

// --- base --------------------------------------------------------------------

Vector TextEncoder::encode(std::string_view text) const {
  ++encode_calls_;
  return encode_prepared(prepare(text));
}

std::vector<Vector> TextEncoder::encode_batch(std::span<const std::string> texts) const {
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode(t));
  return out;
}

// --- embedding bag -------------------------------------------------------------

EmbeddingBagEncoder::EmbeddingBagEncoder(Vocabulary vocab, std::size_t dim, std::size_t max_len)
    : EmbeddingBagEncoder(vocab, Matrix::Zero(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim)),
                          max_len) {}

EmbeddingBagEncoder::EmbeddingBagEncoder(Vocabulary vocab, Matrix embeddings, std::size_t max_len)
    : vocab_(std::move(vocab)), embeddings_(std::move(embeddings)), max_len_(max_len) {
  if (static_cast<std::size_t>(embeddings_.rows()) != vocab_.size())
    throw DimensionError(fmt::format("embedding table has {} rows for a vocabulary of {}", embeddings_.rows(),
                                     vocab_.size()));
  if (embeddings_.cols() == 0) throw DimensionError("embedding dimension must be positive");
}

EmbeddingBagEncoder EmbeddingBagEncoder::random(Vocabulary vocab, std::size_t dim, Rng& rng, std::size_t max_len) {
  Matrix emb(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
  fill_uniform(emb, 0.1, rng);
  return EmbeddingBagEncoder(std::move(vocab), std::move(emb), max_len);
}

std::unique_ptr<TextEncoder> EmbeddingBagEncoder::clone() const { return std::make_unique<EmbeddingBagEncoder>(*this); }

std::vector<TokenId> EmbeddingBagEncoder::tokenize(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    if (ids.size() >= max_len_) break;
    ids.push_back(vocab_.lookup(w));
  }
  return ids;
}

EncoderInput EmbeddingBagEncoder::prepare(std::string_view text) const { return {tokenize(text), {}}; }

Vector EmbeddingBagEncoder::encode_prepared(const EncoderInput& input) const {
  Vector z = Vector::Zero(embeddings_.cols());
  if (input.tokens.empty()) return z;
  for (TokenId t : input.tokens) z += embeddings_.row(t).transpose();
  return z / static_cast<double>(input.tokens.size());
}

void EmbeddingBagEncoder::backward(const EncoderInput& input, const Vector& grad_z, std::span<Matrix> grads) const {
  if (input.tokens.empty()) return;
  const double scale = 1.0 / static_cast<double>(input.tokens.size());
  for (TokenId t : input.tokens) grads[0].row(t) += scale * grad_z.transpose();
}

json EmbeddingBagEncoder::config() const {
  return {{"kind", kind()}, {"dim", dim()}, {"max_len", max_len_}, {"vocab", vocab_.tokens()}};
}

// --- dense features ------------------------------------------------------------

std::unique_ptr<TextEncoder> DenseFeatureEncoder::clone() const { return std::make_unique<DenseFeatureEncoder>(*this); }

EncoderInput DenseFeatureEncoder::prepare(std::string_view text) const {
  std::vector<double> vals;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p == end) break;
    double v = 0.0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) throw ParseError("dense feature text must be whitespace-separated numbers");
    vals.push_back(v);
    p = next;
  }
  if (vals.size() != dim_)
    throw DimensionError(fmt::format("expected {} features, got {}", dim_, vals.size()));
  EncoderInput in;
  in.features = Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return in;
}

json DenseFeatureEncoder::config() const { return {{"kind", kind()}, {"dim", dim_}}; }

std::string DenseFeatureEncoder::format_features(const Vector& z) {
  std::string out;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (i) out += ' ';
    out += fmt::format("{:.17g}", z[i]);
  }
  return out;
}

// --- factory / persistence -------------------------------------------------------

std::unique_ptr<TextEncoder> make_encoder(const json& config, std::vector<Matrix> tensors) {
  const std::string kind = config.at("kind").get<std::string>();
  if (kind == "embedding_bag") {
    if (tensors.size() != 1) throw ParseError("embedding_bag encoder expects one tensor");
    Vocabulary vocab(config.at("vocab").get<std::vector<std::string>>());
    auto enc = std::make_unique<EmbeddingBagEncoder>(std::move(vocab), std::move(tensors[0]),
                                                     config.value("max_len", kDefaultMaxLen));
    if (enc->dim() != config.at("dim").get<std::size_t>()) throw DimensionError("encoder dim disagrees with weights");
    return enc;
  }
  if (kind == "dense_features") {
    if (!tensors.empty()) throw ParseError("dense_features encoder has no tensors");
    return std::make_unique<DenseFeatureEncoder>(config.at("dim").get<std::size_t>());
  }
  throw ConfigError("unknown encoder kind \"" + kind + "\"");
}

void save_encoder(const TextEncoder& encoder, const fs::path& dir) {
  fs::create_directories(dir);
  json cfg = encoder.config();
  cfg["tensors"] = write_tensors(dir / "weights.bin", encoder.named_parameters());
  std::ofstream(dir / "encoder.json") << cfg.dump(2) << "\n";
}

std::unique_ptr<TextEncoder> load_encoder(const fs::path& dir) {
  std::ifstream in(dir / "encoder.json");
  if (!in) throw ValidationError("cannot open " + (dir / "encoder.json").string());
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("encoder.json: ") + e.what());
  }
  return make_encoder(cfg, read_tensors(dir / "weights.bin", cfg.at("tensors")));
}

}  // namespace cbe
