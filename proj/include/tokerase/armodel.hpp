#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tokerase/world.hpp"

namespace tokerase {

/// Log-linear next-token model. Parameters live in one flat buffer laid out
/// as [W_prev (V x V)][W_cond (C x V)][b (V)][bos_row (V)] so the optimizer
/// and the gradient kernels can treat the whole model as a dense vector.
/// The same type doubles as gradient storage.
struct ModelParams {
  int V = 0;
  int C = 0;
  std::vector<double> data;

  static ModelParams zeros(int V, int C);
  static ModelParams zeros_like(const ModelParams& other) {
    return zeros(other.V, other.C);
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const ModelParams& o) const { return V == o.V && C == o.C; }
  bool all_finite() const;
  void fill_zero();

  std::span<double> w_prev_row(Token prev) {
    return {data.data() + static_cast<std::size_t>(prev) * V, static_cast<std::size_t>(V)};
  }
  std::span<const double> w_prev_row(Token prev) const {
    return {data.data() + static_cast<std::size_t>(prev) * V, static_cast<std::size_t>(V)};
  }
  std::span<double> w_cond_row(CondToken c) {
    return {data.data() + (static_cast<std::size_t>(V) + c) * V, static_cast<std::size_t>(V)};
  }
  std::span<const double> w_cond_row(CondToken c) const {
    return {data.data() + (static_cast<std::size_t>(V) + c) * V, static_cast<std::size_t>(V)};
  }
  std::span<double> bias() {
    return {data.data() + (static_cast<std::size_t>(V) + C) * V, static_cast<std::size_t>(V)};
  }
  std::span<const double> bias() const {
    return {data.data() + (static_cast<std::size_t>(V) + C) * V, static_cast<std::size_t>(V)};
  }
  std::span<double> bos_row() {
    return {data.data() + (static_cast<std::size_t>(V) + C + 1) * V,
            static_cast<std::size_t>(V)};
  }
  std::span<const double> bos_row() const {
    return {data.data() + (static_cast<std::size_t>(V) + C + 1) * V,
            static_cast<std::size_t>(V)};
  }
};

struct GenerationConfig {
  double temperature = 1.0;  // > 0 softmax sampling; exactly 0 means greedy
  std::uint64_t seed = 0;
};

/// logit[v] = (prev ? W_prev[prev][v] : bos_row[v]) + sum_j W_cond[x_j][v] + b[v].
/// `<drop>` prompt tokens contribute a zero row by definition.
void logits_into(const ModelParams& params, std::optional<Token> prev,
                 const Prompt& prompt, const Vocab& vocab, std::span<double> out);
std::vector<double> logits(const ModelParams& params, std::optional<Token> prev,
                           const Prompt& prompt, const Vocab& vocab);

/// Max-shifted log(sum(exp(x))).
double log_sum_exp(std::span<const double> x);

/// Writes softmax(x / temperature) into probs (temperature 1 for plain softmax).
void softmax_into(std::span<const double> x, double temperature, std::span<double> probs);

/// log p(image | prompt) under the autoregressive factorization; always <= 0.
double seq_log_prob(const ModelParams& params, const GridImage& image,
                    const Prompt& prompt, const Vocab& vocab);

/// Accumulates weight * d/dtheta log p(image | prompt) into grad.
void grad_seq_log_prob_into(const ModelParams& params, const GridImage& image,
                            const Prompt& prompt, const Vocab& vocab, double weight,
                            ModelParams& grad);
ModelParams grad_seq_log_prob(const ModelParams& params, const GridImage& image,
                              const Prompt& prompt, const Vocab& vocab);

/// Left-to-right ancestral sampling, deterministic given cfg.seed.
GridImage sample(const ModelParams& params, const Prompt& prompt, const Vocab& vocab,
                 const GenerationConfig& cfg);

/// Next-token logits provider for one fixed prompt context; lets the exact
/// expectation run over plain and guided samplers alike.
using LogitsFn = std::function<void(std::optional<Token> prev, std::span<double> out)>;

/// Expected per-position signature frequency under the model distribution,
/// computed exactly by forward DP over the previous-token marginal
/// (the model is first-order Markov given the prompt). O(L * V^2).
double exact_concept_expectation(const ModelParams& params, const Prompt& prompt,
                                 const ConceptSpec& spec, const Vocab& vocab);
double exact_concept_expectation_fn(const LogitsFn& fn, const ConceptSpec& spec,
                                    const Vocab& vocab);

/// Text checkpoint: header (V, C, L, format version) then row-major blocks,
/// 17 significant digits per value so doubles round-trip exactly.
void save_checkpoint(const ModelParams& params, int seq_len,
                     const std::filesystem::path& path);
struct Checkpoint {
  ModelParams params;
  int seq_len = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tokerase
