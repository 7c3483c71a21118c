#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "tokerase/kernels.hpp"
#include "tokerase/losses.hpp"
#include "tokerase/rng.hpp"
#include "tokerase/trainer.hpp"

using namespace tokerase;

namespace {

PreferencePair random_pair(const World& w, std::uint64_t seed) {
  PreferencePair pair;
  pair.prompt = oracles::random_prompt(w.vocab, mix_seed(seed, 0));
  pair.positive = oracles::random_image(w.vocab, mix_seed(seed, 1));
  pair.negative = oracles::random_image(w.vocab, mix_seed(seed, 2));
  if (pair.negative == pair.positive)
    pair.negative.tokens[0] = (pair.negative.tokens[0] + 1) % w.vocab.image_vocab_size;
  pair.target_concept = w.concepts.front().concept_id;
  return pair;
}

}  // namespace

TEST_CASE("token_drop: p=0 is the identity, p=1 drops everything") {
  const World w = World::default_world();
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const Prompt p = oracles::random_prompt(w.vocab, i);
    CHECK(token_drop(p, 0.0, i, w.vocab) == p);
    const Prompt dropped = token_drop(p, 1.0, i, w.vocab);
    for (CondToken t : dropped.tokens) CHECK(t == w.vocab.drop_token);
  }
}

TEST_CASE("token_drop empirical rate over 1e5 tokens is 0.3 within 0.005") {
  const World w = World::default_world();
  Prompt longp;
  longp.tokens.assign(100000, w.vocab.empty_token);
  const Prompt dropped = token_drop(longp, 0.3, 20260810, w.vocab);
  const auto n_dropped = std::count(dropped.tokens.begin(), dropped.tokens.end(),
                                    w.vocab.drop_token);
  CHECK(std::fabs(static_cast<double>(n_dropped) / 100000.0 - 0.3) <= 0.005);
}

TEST_CASE("token_drop decisions depend only on (seed, position)") {
  const World w = World::default_world();
  const Prompt a{{2, 3, 4}};
  const Prompt b{{5, 3, 2}};
  const Prompt da = token_drop(a, 0.5, 77, w.vocab);
  const Prompt db = token_drop(b, 0.5, 77, w.vocab);
  for (std::size_t i = 0; i < da.tokens.size(); ++i)
    CHECK((da.tokens[i] == w.vocab.drop_token) == (db.tokens[i] == w.vocab.drop_token));
  CHECK(token_drop(a, 0.5, 77, w.vocab) == da);
}

TEST_CASE("ce_loss at zero params equals ln V with finite-difference gradient") {
  const World w = World::micro_world();
  const ModelParams zero = ModelParams::zeros(w.vocab.image_vocab_size, w.vocab.cond_vocab_size);
  const GridImage img = oracles::random_image(w.vocab, 1);
  const Prompt prompt = oracles::random_prompt(w.vocab, 2);
  CHECK(ce_loss(zero, img, prompt, w.vocab).value ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 0.5, 30 + trial);
    const LossValue lv = ce_loss(p, img, prompt, w.vocab);
    CHECK(lv.value >= 0.0);
    const ModelParams fd = oracles::fd_grad(
        p, [&](const ModelParams& q) { return ce_loss(q, img, prompt, w.vocab).value; });
    CHECK(oracles::max_rel_err(lv.grad, fd) <= 1e-6);
  }
}

TEST_CASE("a small gradient step strictly decreases ce_loss") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 0.5, 3);
  const GridImage img = oracles::random_image(w.vocab, 4);
  const Prompt prompt = oracles::random_prompt(w.vocab, 5);
  const LossValue lv = ce_loss(p, img, prompt, w.vocab);
  ModelParams stepped = p;
  kernels::axpy(stepped.data.data(), -1e-3, lv.grad.data.data(), stepped.size());
  CHECK(ce_loss(stepped, img, prompt, w.vocab).value < lv.value);
}

TEST_CASE("both DPO losses equal ln 2 with zero margin at theta = theta_ref") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 1.0, 6);
  const PreferencePair pair = random_pair(w, 7);
  const DpoConfig cfg{0.1, 0.1};
  for (const LossValue& lv : {dpo_loss(p, p, pair, cfg, 8, w.vocab),
                              dpo_avg_loss(p, p, pair, cfg, 8, w.vocab)}) {
    CHECK(lv.margin == 0.0);
    CHECK(lv.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("doubling beta doubles the margin exactly") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 0.7, 9);
  const ModelParams ref = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 0.7, 10);
  const PreferencePair pair = random_pair(w, 11);
  const double m1 = dpo_loss(p, ref, pair, {0.2, 0.0}, 12, w.vocab).margin;
  const double m2 = dpo_loss(p, ref, pair, {0.4, 0.0}, 12, w.vocab).margin;
  CHECK(m2 == doctest::Approx(2.0 * m1).epsilon(1e-12));
}

TEST_CASE("DPO losses are strictly decreasing in the margin with value ln 2 at zero") {
  CHECK(neg_log_sigmoid(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  double prev = neg_log_sigmoid(-30.0);
  for (double m = -29.5; m <= 30.0; m += 0.5) {
    const double v = neg_log_sigmoid(m);
    CHECK(v < prev);
    CHECK(v > 0.0);
    prev = v;
  }
  CHECK(std::isfinite(neg_log_sigmoid(-800.0)));
  CHECK(std::isfinite(neg_log_sigmoid(800.0)));
}

TEST_CASE("DPO gradients match central finite differences") {
  const World w = World::micro_world();
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 0.5, 100 + trial);
    const ModelParams ref = oracles::random_params(w.vocab.image_vocab_size,
                                                   w.vocab.cond_vocab_size, 0.5, 200 + trial);
    const PreferencePair pair = random_pair(w, 300 + trial);
    const DpoConfig cfg{0.6, trial % 2 == 0 ? 0.0 : 0.4};
    const std::uint64_t seed = 400 + trial;

    const LossValue plain = dpo_loss(p, ref, pair, cfg, seed, w.vocab);
    CHECK(oracles::max_rel_err(
              plain.grad,
              oracles::fd_grad(p, [&](const ModelParams& q) {
                return dpo_loss(q, ref, pair, cfg, seed, w.vocab).value;
              })) <= 1e-6);

    const LossValue avg = dpo_avg_loss(p, ref, pair, cfg, seed, w.vocab);
    CHECK(oracles::max_rel_err(
              avg.grad,
              oracles::fd_grad(p, [&](const ModelParams& q) {
                return dpo_avg_loss(q, ref, pair, cfg, seed, w.vocab).value;
              })) <= 1e-6);
  }
}

TEST_CASE("token-level average equals the plain loss at beta/L, gradients included") {
  const World w = World::micro_world();
  const double L = w.vocab.seq_len;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 0.6, 500 + trial);
    const ModelParams ref = oracles::random_params(w.vocab.image_vocab_size,
                                                   w.vocab.cond_vocab_size, 0.6, 600 + trial);
    const PreferencePair pair = random_pair(w, 700 + trial);
    const double beta = 0.05 + 0.01 * static_cast<double>(trial);
    const std::uint64_t seed = 800 + trial;
    const LossValue avg = dpo_avg_loss(p, ref, pair, {beta, 0.2}, seed, w.vocab);
    const LossValue scaled = dpo_loss(p, ref, pair, {beta / L, 0.2}, seed, w.vocab);
    CHECK(std::fabs(avg.value - scaled.value) <= 1e-12);
    CHECK(std::fabs(avg.margin - scaled.margin) <= 1e-12);
    for (std::size_t i = 0; i < avg.grad.size(); ++i)
      CHECK(std::fabs(avg.grad.data[i] - scaled.grad.data[i]) <= 1e-12);
  }
}

TEST_CASE("with drop_prob 1 the loss ignores the prompt content") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 0.8, 13);
  const ModelParams ref = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 0.8, 14);
  PreferencePair pair = random_pair(w, 15);
  const DpoConfig cfg{0.3, 1.0};
  const LossValue base = dpo_loss(p, ref, pair, cfg, 16, w.vocab);
  PreferencePair permuted = pair;
  std::reverse(permuted.prompt.tokens.begin(), permuted.prompt.tokens.end());
  CHECK(dpo_loss(p, ref, permuted, cfg, 16, w.vocab).value == base.value);
  PreferencePair rewritten = pair;
  rewritten.prompt = oracles::random_prompt(w.vocab, 17);
  CHECK(dpo_loss(p, ref, rewritten, cfg, 16, w.vocab).value == base.value);
}

TEST_CASE("one small descent step from theta_ref makes the margin positive") {
  const World w = World::micro_world();
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const ModelParams ref = oracles::random_params(w.vocab.image_vocab_size,
                                                   w.vocab.cond_vocab_size, 0.6, 900 + trial);
    const PreferencePair pair = random_pair(w, 950 + trial);
    const DpoConfig cfg{0.1, 0.0};
    const LossValue at_ref = dpo_avg_loss(ref, ref, pair, cfg, 1, w.vocab);
    REQUIRE(at_ref.margin == 0.0);
    ModelParams stepped = ref;
    kernels::axpy(stepped.data.data(), -1e-4, at_ref.grad.data.data(), stepped.size());
    CHECK(dpo_avg_loss(stepped, ref, pair, cfg, 1, w.vocab).margin > 0.0);
  }
}

TEST_CASE("dimension mismatch between params and reference is rejected") {
  const World w = World::micro_world();
  const ModelParams p = ModelParams::zeros(w.vocab.image_vocab_size, w.vocab.cond_vocab_size);
  const ModelParams ref = ModelParams::zeros(w.vocab.image_vocab_size + 1,
                                             w.vocab.cond_vocab_size);
  const PreferencePair pair = random_pair(w, 18);
  CHECK_THROWS_AS(dpo_loss(p, ref, pair, {0.1, 0.0}, 1, w.vocab), std::invalid_argument);
}

TEST_CASE("ft_align_loss reduces to empty-prompt ce_loss when conditioning is inert") {
  const World w = World::micro_world();
  ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                         w.vocab.cond_vocab_size, 0.8, 19);
  for (CondToken c = 0; c < w.vocab.cond_vocab_size; ++c)
    for (double& x : p.w_cond_row(c)) x = 0.0;
  const GridImage target = sample(p, w.empty_prompt(), w.vocab, {0.0, 0});
  Prompt unsafe = w.empty_prompt();
  unsafe.tokens[0] = w.concepts[0].concept_id;
  CHECK(ft_align_loss(p, unsafe, target, w.vocab).value ==
        doctest::Approx(ce_loss(p, target, w.empty_prompt(), w.vocab).value).epsilon(1e-12));
}

TEST_CASE("ft_align_loss gradient matches finite differences") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 0.5, 20);
  const Prompt unsafe = oracles::random_prompt(w.vocab, 21);
  const GridImage target = oracles::random_image(w.vocab, 22);
  const LossValue lv = ft_align_loss(p, unsafe, target, w.vocab);
  CHECK(oracles::max_rel_err(lv.grad, oracles::fd_grad(p, [&](const ModelParams& q) {
          return ft_align_loss(q, unsafe, target, w.vocab).value;
        })) <= 1e-6);
}

TEST_CASE("ft_align_loss decreases over 50 Adam steps on a fixed batch") {
  const World w = World::micro_world();
  ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                         w.vocab.cond_vocab_size, 0.3, 23);
  std::vector<std::pair<Prompt, GridImage>> batch;
  for (std::uint64_t i = 0; i < 8; ++i)
    batch.push_back({oracles::random_prompt(w.vocab, 24 + i),
                     oracles::random_image(w.vocab, 32 + i)});
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  AdamState state = AdamState::zeros(p.size());
  auto batch_loss = [&](const ModelParams& q, ModelParams* grad) {
    double total = 0.0;
    for (const auto& [prompt, img] : batch) {
      const LossValue lv = ft_align_loss(q, prompt, img, w.vocab);
      total += lv.value;
      if (grad) kernels::add(grad->data.data(), lv.grad.data.data(), grad->size());
    }
    return total / batch.size();
  };
  const double before = batch_loss(p, nullptr);
  for (int it = 0; it < 50; ++it) {
    ModelParams g = ModelParams::zeros_like(p);
    batch_loss(p, &g);
    kernels::scale(g.data.data(), 1.0 / batch.size(), g.size());
    adam_step(p, g, state, cfg);
  }
  CHECK(batch_loss(p, nullptr) < before);
}

TEST_CASE("guided_logits trivial identities") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 1.0, 44);
  Prompt unsafe = w.empty_prompt();
  unsafe.tokens[0] = w.concepts[0].concept_id;
  const Prompt plain = oracles::random_prompt(w.vocab, 45);
  const auto base = logits(p, Token{1}, plain, w.vocab);

  const auto zero_scale = guided_logits(p, Token{1}, plain, unsafe, 0.0, w);
  for (std::size_t v = 0; v < base.size(); ++v) CHECK(zero_scale[v] == base[v]);

  const auto empty_unsafe = guided_logits(p, Token{1}, plain, w.empty_prompt(), 1.0, w);
  for (std::size_t v = 0; v < base.size(); ++v) CHECK(empty_unsafe[v] == base[v]);
}

TEST_CASE("guidance scale monotonically suppresses the target concept") {
  const World w = World::default_world();
  // concept structure by hand: each concept boosts its signature token
  ModelParams p = ModelParams::zeros(w.vocab.image_vocab_size, w.vocab.cond_vocab_size);
  for (const auto& c : w.concepts)
    for (Token s : c.signature_tokens)
      p.w_cond_row(c.concept_id)[static_cast<std::size_t>(s)] = 3.0;
  Prompt unsafe = w.empty_prompt();
  unsafe.tokens[0] = w.concepts[0].concept_id;
  unsafe.tokens[1] = w.concepts[1].concept_id;

  double prev = 1.0;
  for (double scale : {0.0, 0.5, 1.0, 2.0}) {
    const double e =
        guided_concept_expectation(p, unsafe, unsafe, scale, w.concepts[0], w);
    if (scale > 0.0) CHECK(e < prev);
    prev = e;
  }
}
