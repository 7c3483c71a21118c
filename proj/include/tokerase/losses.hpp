#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tokerase/armodel.hpp"
#include "tokerase/synthworld.hpp"
#include "tokerase/world.hpp"

namespace tokerase {

struct DpoConfig {
  double beta = 0.1;      // preference temperature
  double drop_prob = 0.1; // per-token probability of replacing by `<drop>`

  void validate() const;
};

/// Loss evaluation: value, the pre-sigmoid margin (0 for plain CE losses)
/// and the full parameter gradient.
struct LossValue {
  double value = 0.0;
  double margin = 0.0;
  ModelParams grad;
};

/// Each prompt token is independently replaced by `<drop>` with probability
/// drop_prob. The decision at position i depends only on (seed, i).
Prompt token_drop(const Prompt& prompt, double drop_prob, std::uint64_t seed,
                  const Vocab& vocab);

/// -log p(image | prompt) / L, with matching gradient.
LossValue ce_loss(const ModelParams& params, const GridImage& image,
                  const Prompt& prompt, const Vocab& vocab);

/// Preference loss on summed sequence log-ratios:
///   margin = beta*[d(y+) - d(y-)],  d(y) = log p_theta(y|x_drop) - log p_ref(y|x_drop)
///   value  = -ln sigmoid(margin)
/// One token-drop realization (from `seed`) is shared by all four terms.
LossValue dpo_loss(const ModelParams& params, const ModelParams& ref_params,
                   const PreferencePair& pair, const DpoConfig& cfg,
                   std::uint64_t seed, const Vocab& vocab);

/// Token-level average variant: each sequence's log-ratio is scaled by
/// beta / |y| instead of beta.
LossValue dpo_avg_loss(const ModelParams& params, const ModelParams& ref_params,
                       const PreferencePair& pair, const DpoConfig& cfg,
                       std::uint64_t seed, const Vocab& vocab);

/// Finetuning baseline: cross-entropy of an empty-prompt base sample under
/// the unsafe prompt.
LossValue ft_align_loss(const ModelParams& params, const Prompt& prompt_unsafe,
                        const GridImage& target_image, const Vocab& vocab);

/// Inference-time guidance baseline:
///   logits(prompt) - scale * (logits(unsafe_prompt) - logits(empty_prompt))
std::vector<double> guided_logits(const ModelParams& params, std::optional<Token> prev,
                                  const Prompt& prompt, const Prompt& unsafe_prompt,
                                  double scale, const World& world);

/// Exact signature expectation of the guided sampler (same forward DP as the
/// plain model, with guided logits).
double guided_concept_expectation(const ModelParams& params, const Prompt& prompt,
                                  const Prompt& unsafe_prompt, double scale,
                                  const ConceptSpec& spec, const World& world);

/// -ln sigmoid(x), computed without overflow for any x.
double neg_log_sigmoid(double x);
double sigmoid(double x);

}  // namespace tokerase
