#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tokerase {

using Token = std::int32_t;      // image token id, < V
using CondToken = std::int32_t;  // condition token id, < C

/// Vocabulary sizes of a token world. C includes the two reserved condition
/// tokens (`<empty>` for the unconditional slot, `<drop>` for dropped-out
/// prompt positions).
struct Vocab {
  int image_vocab_size = 0;  // V
  int cond_vocab_size = 0;   // C
  int seq_len = 0;           // L, tokens per grid image
  int prompt_len = 0;        // fixed prompt length
  CondToken empty_token = 0;
  CondToken drop_token = 1;

  void validate() const;  // throws std::invalid_argument naming the field
};

/// A toy concept: a condition token tied to a disjoint set of image tokens
/// that act as its exactly-detectable signature.
struct ConceptSpec {
  CondToken concept_id = -1;
  std::vector<Token> signature_tokens;  // kept sorted and unique
  double base_rate = 0.0;     // per-position emission rate when absent
  double boosted_rate = 0.0;  // per-position emission rate when prompted
};

/// Sequence of condition tokens, length vocab.prompt_len.
struct Prompt {
  std::vector<CondToken> tokens;

  bool operator==(const Prompt&) const = default;
};

/// Generated "image": a fixed-length sequence of image tokens.
struct GridImage {
  std::vector<Token> tokens;

  bool operator==(const GridImage&) const = default;
};

struct World {
  Vocab vocab;
  std::vector<ConceptSpec> concepts;  // sorted by concept_id

  void validate() const;  // vocab + concept invariants, throws on violation

  const ConceptSpec* find_concept(CondToken id) const;
  bool is_concept(CondToken id) const { return find_concept(id) != nullptr; }

  /// Prompt of prompt_len `<empty>` tokens (the unconditional case).
  Prompt empty_prompt() const;

  /// Every prompt token must be < C; length must equal prompt_len.
  void validate_prompt(const Prompt& p) const;
  void validate_image(const GridImage& img) const;

  /// V=8, C=6 (4 concepts + reserved), L=16: big enough that V^L is not
  /// enumerable but per-position analytics stay exact.
  static World default_world();

  /// V=4, C=4 (2 concepts + reserved), L=3: all 64 sequences enumerable,
  /// for exhaustive oracles.
  static World micro_world();
};

/// Structured-text (JSON) world config, keys matching the field names above.
World world_from_json_text(const std::string& text);
World load_world(const std::filesystem::path& path);
std::string world_to_json_text(const World& w);
void save_world(const World& w, const std::filesystem::path& path);

}  // namespace tokerase
