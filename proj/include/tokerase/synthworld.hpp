#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "tokerase/armodel.hpp"
#include "tokerase/world.hpp"

namespace tokerase {

/// One preference example: the unsafe prompt, a decoupled positive rendered
/// from its refined prompt, and a negative sampled from the base model.
struct PreferencePair {
  Prompt prompt;
  GridImage positive;
  GridImage negative;
  CondToken target_concept = -1;

  bool operator==(const PreferencePair&) const = default;
};

struct PairSet {
  World world;
  std::uint64_t world_seed = 0;
  std::vector<PreferencePair> pairs;
  std::map<CondToken, int> manifest;  // pair count per target concept
};

/// Oracle renderer: stands in for an external image generator. Per position,
/// independently: concepts present in the prompt fire at boosted_rate, absent
/// ones at base_rate (scanned in ascending concept id, first hit emits one of
/// its signature tokens uniformly); otherwise a uniform non-signature filler.
/// Bit-deterministic given (prompt, seed).
GridImage render_oracle(const Prompt& prompt, const World& world, std::uint64_t seed);

/// Replaces every occurrence of target_concept with `<empty>`. Idempotent,
/// preserves all other tokens in order.
Prompt refine_prompt(const Prompt& prompt, CondToken target_concept, const World& world);

/// Fraction of image positions holding one of the concept's signature tokens.
double concept_frequency(const GridImage& image, const ConceptSpec& spec);

/// Unsafe prompt for pair construction: target concept, one other concept,
/// remaining slots uniform over {empty} + non-target concepts, order shuffled.
Prompt sample_unsafe_prompt(const World& world, CondToken target, std::uint64_t seed);

/// Preference pair construction: negatives sampled from the base model under
/// the unsafe prompt, positives rendered from the refined prompt.
/// Pair i depends only on (seed, i).
PairSet build_pairs(const ModelParams& base_model, const World& world,
                    CondToken target_concept, int n, std::uint64_t seed);

/// Line-delimited pair-set file: one JSON header line (world + seed +
/// manifest), then one JSON record per pair.
void save_pairs(const PairSet& set, const std::filesystem::path& path);
PairSet load_pairs(const std::filesystem::path& path);

/// (prompt, image) example for pretraining.
struct TrainExample {
  Prompt prompt;
  GridImage image;
};

/// Pretraining corpus rendered across all concepts: single-concept prompts,
/// two-concept prompts and all-empty prompts, i.i.d. given the seed.
std::vector<TrainExample> build_pretrain_dataset(const World& world, int n,
                                                 std::uint64_t seed);

}  // namespace tokerase
