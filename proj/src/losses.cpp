#include "tokerase/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "tokerase/kernels.hpp"
#include "tokerase/rng.hpp"

namespace tokerase {

void DpoConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("DpoConfig: beta must be > 0");
  if (drop_prob < 0.0 || drop_prob > 1.0)
    throw std::invalid_argument("DpoConfig: drop_prob outside [0,1]");
}

double neg_log_sigmoid(double x) {
  // -ln sigmoid(x) = softplus(-x)
  if (x > 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Prompt token_drop(const Prompt& prompt, double drop_prob, std::uint64_t seed,
                  const Vocab& vocab) {
  if (drop_prob < 0.0 || drop_prob > 1.0)
    throw std::invalid_argument("token_drop: drop_prob outside [0,1]");
  Prompt out = prompt;
  for (std::size_t i = 0; i < out.tokens.size(); ++i)
    if (hashed_unit(seed, i) < drop_prob) out.tokens[i] = vocab.drop_token;
  return out;
}

LossValue ce_loss(const ModelParams& params, const GridImage& image,
                  const Prompt& prompt, const Vocab& vocab) {
  LossValue lv;
  lv.grad = ModelParams::zeros_like(params);
  const double L = static_cast<double>(image.tokens.size());
  lv.value = -seq_log_prob(params, image, prompt, vocab) / L;
  grad_seq_log_prob_into(params, image, prompt, vocab, -1.0 / L, lv.grad);
  return lv;
}

namespace {

// Shared core: margin = w_pos * d(y+) - w_neg * d(y-), where
// d(y) = log p_theta(y | x_drop) - log p_ref(y | x_drop).
LossValue dpo_core(const ModelParams& params, const ModelParams& ref_params,
                   const PreferencePair& pair, const DpoConfig& cfg, std::uint64_t seed,
                   const Vocab& vocab, bool token_level_average) {
  cfg.validate();
  if (!params.same_shape(ref_params))
    throw std::invalid_argument("dpo loss: params and ref_params dimensions differ");

  const Prompt x_drop = token_drop(pair.prompt, cfg.drop_prob, seed, vocab);
  const double w_pos =
      token_level_average ? cfg.beta / static_cast<double>(pair.positive.tokens.size())
                          : cfg.beta;
  const double w_neg =
      token_level_average ? cfg.beta / static_cast<double>(pair.negative.tokens.size())
                          : cfg.beta;

  const double d_pos = seq_log_prob(params, pair.positive, x_drop, vocab) -
                       seq_log_prob(ref_params, pair.positive, x_drop, vocab);
  const double d_neg = seq_log_prob(params, pair.negative, x_drop, vocab) -
                       seq_log_prob(ref_params, pair.negative, x_drop, vocab);

  LossValue lv;
  lv.margin = w_pos * d_pos - w_neg * d_neg;
  lv.value = neg_log_sigmoid(lv.margin);
  lv.grad = ModelParams::zeros_like(params);
  const double sig = sigmoid(-lv.margin);
  grad_seq_log_prob_into(params, pair.positive, x_drop, vocab, -sig * w_pos, lv.grad);
  grad_seq_log_prob_into(params, pair.negative, x_drop, vocab, sig * w_neg, lv.grad);
  return lv;
}

}  // namespace

LossValue dpo_loss(const ModelParams& params, const ModelParams& ref_params,
                   const PreferencePair& pair, const DpoConfig& cfg, std::uint64_t seed,
                   const Vocab& vocab) {
  return dpo_core(params, ref_params, pair, cfg, seed, vocab, false);
}

LossValue dpo_avg_loss(const ModelParams& params, const ModelParams& ref_params,
                       const PreferencePair& pair, const DpoConfig& cfg,
                       std::uint64_t seed, const Vocab& vocab) {
  return dpo_core(params, ref_params, pair, cfg, seed, vocab, true);
}

LossValue ft_align_loss(const ModelParams& params, const Prompt& prompt_unsafe,
                        const GridImage& target_image, const Vocab& vocab) {
  return ce_loss(params, target_image, prompt_unsafe, vocab);
}

std::vector<double> guided_logits(const ModelParams& params, std::optional<Token> prev,
                                  const Prompt& prompt, const Prompt& unsafe_prompt,
                                  double scale, const World& world) {
  if (scale < 0.0) throw std::invalid_argument("guided_logits: scale must be >= 0");
  const std::size_t V = static_cast<std::size_t>(params.V);
  const Prompt empty = world.empty_prompt();
  std::vector<double> out(V), unsafe(V), base(V);
  logits_into(params, prev, prompt, world.vocab, out);
  logits_into(params, prev, unsafe_prompt, world.vocab, unsafe);
  logits_into(params, prev, empty, world.vocab, base);
  kernels::axpy(unsafe.data(), -1.0, base.data(), V);   // unsafe - empty
  kernels::axpy(out.data(), -scale, unsafe.data(), V);  // out - scale * correction
  return out;
}

double guided_concept_expectation(const ModelParams& params, const Prompt& prompt,
                                  const Prompt& unsafe_prompt, double scale,
                                  const ConceptSpec& spec, const World& world) {
  return exact_concept_expectation_fn(
      [&](std::optional<Token> prev, std::span<double> out) {
        const auto l = guided_logits(params, prev, prompt, unsafe_prompt, scale, world);
        std::copy(l.begin(), l.end(), out.begin());
      },
      spec, world.vocab);
}

}  // namespace tokerase
