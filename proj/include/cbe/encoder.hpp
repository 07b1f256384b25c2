#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cbe/linalg.hpp"
#include "cbe/tensor_io.hpp"

namespace cbe {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr std::size_t kDefaultMaxLen = 512;

/// Lowercased runs of alphanumeric characters; everything else separates
/// tokens and is dropped. Bytes >= 0x80 count as alphanumeric so UTF-8 words
/// stay whole.
std::vector<std::string> split_words(std::string_view text);

/// Token <-> id table. Ids 0 and 1 are reserved for padding and unknown words.
class Vocabulary {
 public:
  Vocabulary();
  /// `id_to_token[i]` is the token with id i. Entries 0 and 1 are the reserved
  /// slots and are never matched by lookup.
  explicit Vocabulary(std::vector<std::string> id_to_token);

  /// Vocabulary of every word seen at least `min_freq` times, ordered by
  /// descending frequency then lexicographically.
  static Vocabulary build(std::span<const std::string> texts, std::size_t min_freq = 1);

  TokenId lookup(std::string_view word) const;
  const std::string& token(TokenId id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Backend-specific cached form of a text. The bag encoder fills `tokens`,
/// the dense-feature encoder fills `features`.
struct EncoderInput {
  std::vector<TokenId> tokens;
  Vector features;
};

/// Text encoder interface: text -> latent vector z in R^e.
///
/// Implementations are deterministic and read-only during inference, so a
/// const encoder may be shared across threads. Training goes through
/// `prepare` / `encode_prepared` / `backward` on a private copy.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual std::unique_ptr<TextEncoder> clone() const = 0;
  virtual std::string kind() const = 0;
  virtual std::size_t dim() const = 0;

  virtual EncoderInput prepare(std::string_view text) const = 0;
  virtual Vector encode_prepared(const EncoderInput& input) const = 0;

  /// Accumulates dLoss/dtheta into `grads` (one matrix per parameter, same
  /// order and shape as `parameters()`) given dLoss/dz.
  virtual void backward(const EncoderInput& input, const Vector& grad_z, std::span<Matrix> grads) const = 0;

  virtual std::vector<Matrix*> parameters() = 0;
  virtual std::vector<NamedTensor> named_parameters() const = 0;
  bool trainable() const { return !named_parameters().empty(); }

  /// Config for encoder.json (kind, dim, max_len, vocab, ...).
  virtual nlohmann::json config() const = 0;

  Vector encode(std::string_view text) const;
  std::vector<Vector> encode_batch(std::span<const std::string> texts) const;

  /// Number of encode()/encode_batch() texts processed since construction.
  std::size_t encode_calls() const { return encode_calls_.load(); }

 protected:
  TextEncoder() = default;
  TextEncoder(const TextEncoder&) : encode_calls_(0) {}
  TextEncoder& operator=(const TextEncoder&) { return *this; }

 private:
  mutable std::atomic<std::size_t> encode_calls_{0};
};

/// Trainable embedding bag: z = mean of the token embedding rows (zero vector
/// for an empty text).
class EmbeddingBagEncoder final : public TextEncoder {
 public:
  EmbeddingBagEncoder(Vocabulary vocab, std::size_t dim, std::size_t max_len = kDefaultMaxLen);
  EmbeddingBagEncoder(Vocabulary vocab, Matrix embeddings, std::size_t max_len = kDefaultMaxLen);

  /// Random init, entries ~ Uniform(-0.1, 0.1).
  static EmbeddingBagEncoder random(Vocabulary vocab, std::size_t dim, Rng& rng,
                                    std::size_t max_len = kDefaultMaxLen);

  std::unique_ptr<TextEncoder> clone() const override;
  std::string kind() const override { return "embedding_bag"; }
  std::size_t dim() const override { return static_cast<std::size_t>(embeddings_.cols()); }
  std::size_t max_len() const { return max_len_; }

  /// Token ids, truncated to max_len; unknown words map to kUnkId.
  std::vector<TokenId> tokenize(std::string_view text) const;

  EncoderInput prepare(std::string_view text) const override;
  Vector encode_prepared(const EncoderInput& input) const override;
  void backward(const EncoderInput& input, const Vector& grad_z, std::span<Matrix> grads) const override;
  std::vector<Matrix*> parameters() override { return {&embeddings_}; }
  std::vector<NamedTensor> named_parameters() const override { return {{"encoder.embeddings", &embeddings_}}; }
  nlohmann::json config() const override;

  const Vocabulary& vocabulary() const { return vocab_; }
  const Matrix& embeddings() const { return embeddings_; }
  Matrix& embeddings() { return embeddings_; }

 private:
  Vocabulary vocab_;
  Matrix embeddings_;
  std::size_t max_len_;
};

/// Parameter-free encoder whose input text is a whitespace-separated list of
/// exactly `dim` numbers, used as z verbatim. Lets a concept head be trained
/// on precomputed features.
class DenseFeatureEncoder final : public TextEncoder {
 public:
  explicit DenseFeatureEncoder(std::size_t dim) : dim_(dim) {}

  std::unique_ptr<TextEncoder> clone() const override;
  std::string kind() const override { return "dense_features"; }
  std::size_t dim() const override { return dim_; }
  EncoderInput prepare(std::string_view text) const override;
  Vector encode_prepared(const EncoderInput& input) const override { return input.features; }
  void backward(const EncoderInput&, const Vector&, std::span<Matrix>) const override {}
  std::vector<Matrix*> parameters() override { return {}; }
  std::vector<NamedTensor> named_parameters() const override { return {}; }
  nlohmann::json config() const override;

  /// Inverse of prepare: renders a feature vector as encoder input text.
  static std::string format_features(const Vector& z);

 private:
  std::size_t dim_;
};

/// Rebuilds an encoder from its config and its tensors (in named_parameters order).
std::unique_ptr<TextEncoder> make_encoder(const nlohmann::json& config, std::vector<Matrix> tensors);

/// Encoder-only persistence: `encoder.json` + `weights.bin`.
void save_encoder(const TextEncoder& encoder, const std::filesystem::path& dir);
std::unique_ptr<TextEncoder> load_encoder(const std::filesystem::path& dir);

}  // namespace cbe
