#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "oracles.hpp"
#include "tokerase/armodel.hpp"
#include "tokerase/rng.hpp"
#include "tokerase/synthworld.hpp"

using namespace tokerase;
namespace fs = std::filesystem;

namespace {

// independent recomputation of the logit rule, plain triple loop
std::vector<double> naive_logits(const ModelParams& p, std::optional<Token> prev,
                                 const Prompt& prompt, const Vocab& vocab) {
  std::vector<double> out(static_cast<std::size_t>(p.V), 0.0);
  for (int v = 0; v < p.V; ++v) {
    double acc = prev ? p.w_prev_row(*prev)[static_cast<std::size_t>(v)]
                      : p.bos_row()[static_cast<std::size_t>(v)];
    for (CondToken c : prompt.tokens)
      if (c != vocab.drop_token) acc += p.w_cond_row(c)[static_cast<std::size_t>(v)];
    acc += p.bias()[static_cast<std::size_t>(v)];
    out[static_cast<std::size_t>(v)] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("all-zero params give a zero logit vector") {
  const World w = World::micro_world();
  const ModelParams p = ModelParams::zeros(w.vocab.image_vocab_size, w.vocab.cond_vocab_size);
  for (double l : logits(p, std::nullopt, w.empty_prompt(), w.vocab)) CHECK(l == 0.0);
  for (double l : logits(p, Token{1}, w.empty_prompt(), w.vocab)) CHECK(l == 0.0);
}

TEST_CASE("an all-drop prompt with zero W_prev and zero b leaves bos_row exactly") {
  const World w = World::micro_world();
  ModelParams p = ModelParams::zeros(w.vocab.image_vocab_size, w.vocab.cond_vocab_size);
  Rng rng(7);
  for (double& x : p.bos_row()) x = rng.next_symmetric(1.0);
  // a filled drop row must not leak in
  for (double& x : p.w_cond_row(w.vocab.drop_token)) x = 99.0;
  Prompt all_drop{std::vector<CondToken>(static_cast<std::size_t>(w.vocab.prompt_len),
                                         w.vocab.drop_token)};
  const auto l = logits(p, std::nullopt, all_drop, w.vocab);
  for (int v = 0; v < p.V; ++v)
    CHECK(l[static_cast<std::size_t>(v)] == p.bos_row()[static_cast<std::size_t>(v)]);
}

TEST_CASE("logits match the naive triple-loop recomputation") {
  const World w = World::micro_world();
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 1.0, 50 + trial);
    const Prompt prompt = oracles::random_prompt(w.vocab, 90 + trial);
    const std::optional<Token> prev =
        trial % 3 == 0 ? std::nullopt
                       : std::optional<Token>(static_cast<Token>(trial % w.vocab.image_vocab_size));
    const auto got = logits(p, prev, prompt, w.vocab);
    const auto want = naive_logits(p, prev, prompt, w.vocab);
    for (std::size_t v = 0; v < got.size(); ++v)
      CHECK(got[v] == doctest::Approx(want[v]).epsilon(1e-12));
  }
}

TEST_CASE("zero params give the uniform sequence likelihood") {
  const World w = World::micro_world();
  const ModelParams p = ModelParams::zeros(w.vocab.image_vocab_size, w.vocab.cond_vocab_size);
  const GridImage img = oracles::random_image(w.vocab, 3);
  const double expect = w.vocab.seq_len * std::log(1.0 / w.vocab.image_vocab_size);
  CHECK(seq_log_prob(p, img, w.empty_prompt(), w.vocab) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("exp(seq_log_prob) sums to one over all sequences") {
  const World w = World::micro_world();
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 1.0, 1000 + draw);
    const Prompt prompt = oracles::random_prompt(w.vocab, 2000 + draw);
    double total = 0.0;
    oracles::for_each_sequence(w.vocab.image_vocab_size, w.vocab.seq_len,
                               [&](const GridImage& img) {
                                 total += std::exp(seq_log_prob(p, img, prompt, w.vocab));
                               });
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(seq_log_prob(p, oracles::random_image(w.vocab, draw), prompt, w.vocab) <= 0.0);
  }
}

TEST_CASE("boosting b[q1] strictly increases the likelihood where the bias helps every step") {
  // The bias is shared across steps, so inflating b[q1] raises the logsumexp
  // of later steps too; the strict increase holds per step that emits q1 and
  // hence for one-step sequences and all-q1 sequences.
  Vocab one{4, 4, 1, 2, 0, 1};
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    ModelParams p = oracles::random_params(4, 4, 0.8, 77 + trial);
    const Prompt prompt = oracles::random_prompt(one, 178 + trial);
    GridImage img;
    img.tokens = {static_cast<Token>(trial % 4)};
    const double before = seq_log_prob(p, img, prompt, one);
    ModelParams boosted = p;
    boosted.bias()[static_cast<std::size_t>(img.tokens[0])] += 10.0;
    CHECK(seq_log_prob(boosted, img, prompt, one) > before);
  }

  const World w = World::micro_world();
  ModelParams p = oracles::random_params(w.vocab.image_vocab_size, w.vocab.cond_vocab_size,
                                         0.8, 79);
  const Prompt prompt = oracles::random_prompt(w.vocab, 80);
  GridImage all_q1;
  all_q1.tokens.assign(static_cast<std::size_t>(w.vocab.seq_len), 2);
  const double before = seq_log_prob(p, all_q1, prompt, w.vocab);
  ModelParams boosted = p;
  boosted.bias()[2] += 10.0;
  CHECK(seq_log_prob(boosted, all_q1, prompt, w.vocab) > before);
}

TEST_CASE("adding one constant to the whole bias leaves all probabilities unchanged") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 1.0, 42);
  ModelParams shifted = p;
  for (double& x : shifted.bias()) x += 3.75;
  const Prompt prompt = oracles::random_prompt(w.vocab, 43);
  for (std::uint64_t i = 0; i < 10; ++i) {
    const GridImage img = oracles::random_image(w.vocab, 100 + i);
    CHECK(seq_log_prob(p, img, prompt, w.vocab) ==
          doctest::Approx(seq_log_prob(shifted, img, prompt, w.vocab)).epsilon(1e-12));
  }
}

TEST_CASE("closed-form gradient of b at the uniform model") {
  const World w = World::micro_world();
  const int V = w.vocab.image_vocab_size;
  const ModelParams p = ModelParams::zeros(V, w.vocab.cond_vocab_size);
  const GridImage img = oracles::random_image(w.vocab, 5);
  const Prompt prompt = oracles::random_prompt(w.vocab, 6);
  const ModelParams g = grad_seq_log_prob(p, img, prompt, w.vocab);
  for (int v = 0; v < V; ++v) {
    double count = 0.0;
    for (Token q : img.tokens) count += q == v ? 1.0 : 0.0;
    const double expect = count - static_cast<double>(w.vocab.seq_len) / V;
    CHECK(g.bias()[static_cast<std::size_t>(v)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  const World w = World::micro_world();
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 0.5, 300 + trial);
    const GridImage img = oracles::random_image(w.vocab, 400 + trial);
    const Prompt prompt = oracles::random_prompt(w.vocab, 500 + trial);
    const ModelParams analytic = grad_seq_log_prob(p, img, prompt, w.vocab);
    const ModelParams fd = oracles::fd_grad(
        p, [&](const ModelParams& q) { return seq_log_prob(q, img, prompt, w.vocab); });
    CHECK(oracles::max_rel_err(analytic, fd) <= 1e-6);
  }
}

TEST_CASE("gradient is zero in every W_cond row absent from the prompt") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 1.0, 9);
  Prompt prompt = w.empty_prompt();  // only the empty token appears
  const GridImage img = oracles::random_image(w.vocab, 10);
  const ModelParams g = grad_seq_log_prob(p, img, prompt, w.vocab);
  for (CondToken c = 0; c < w.vocab.cond_vocab_size; ++c) {
    if (c == w.vocab.empty_token) continue;
    for (double x : g.w_cond_row(c)) CHECK(x == 0.0);
  }
}

TEST_CASE("sampling: fixed seed reproduces, temperature 0 is greedy") {
  const World w = World::micro_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 1.0, 11);
  const Prompt prompt = oracles::random_prompt(w.vocab, 12);
  const GridImage a = sample(p, prompt, w.vocab, {1.0, 999});
  const GridImage b = sample(p, prompt, w.vocab, {1.0, 999});
  CHECK(a == b);

  const GridImage greedy = sample(p, prompt, w.vocab, {0.0, 999});
  std::optional<Token> prev;
  for (Token q : greedy.tokens) {
    const auto l = logits(p, prev, prompt, w.vocab);
    Token best = 0;
    for (std::size_t v = 1; v < l.size(); ++v)
      if (l[v] > l[static_cast<std::size_t>(best)]) best = static_cast<Token>(v);
    CHECK(q == best);
    prev = q;
  }
}

TEST_CASE("uniform model sampling frequencies are binomially consistent") {
  Vocab vocab{4, 3, 1, 1, 0, 1};  // L = 1
  const ModelParams p = ModelParams::zeros(vocab.image_vocab_size, vocab.cond_vocab_size);
  const Prompt prompt{{0}};
  const int n = 100000;
  std::map<Token, int> counts;
  for (int i = 0; i < n; ++i)
    counts[sample(p, prompt, vocab, {1.0, mix_seed(31337, static_cast<std::uint64_t>(i))})
               .tokens[0]] += 1;
  const double expect = n / 4.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (const auto& [token, count] : counts) CHECK(std::fabs(count - expect) <= 3.0 * sigma);
  CHECK(counts.size() == 4);
}

TEST_CASE("empirical next-token frequencies match softmax for a fixed context") {
  const World w = World::micro_world();
  Vocab vocab = w.vocab;
  vocab.seq_len = 1;
  const ModelParams p = oracles::random_params(vocab.image_vocab_size,
                                               vocab.cond_vocab_size, 1.0, 21);
  const Prompt prompt = oracles::random_prompt(vocab, 22);
  const auto l = logits(p, std::nullopt, prompt, vocab);
  std::vector<double> probs(l.size());
  softmax_into(l, 1.0, probs);
  const int n = 100000;
  std::vector<int> counts(l.size(), 0);
  for (int i = 0; i < n; ++i)
    counts[static_cast<std::size_t>(
        sample(p, prompt, vocab, {1.0, mix_seed(99, static_cast<std::uint64_t>(i))})
            .tokens[0])] += 1;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    const double sigma = std::sqrt(n * probs[v] * (1.0 - probs[v]));
    CHECK(std::fabs(counts[v] - n * probs[v]) <= 3.0 * sigma + 1.0);
  }
}

TEST_CASE("exact expectation agrees with exhaustive enumeration") {
  const World w = World::micro_world();
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                                 w.vocab.cond_vocab_size, 1.0, 600 + draw);
    const Prompt prompt = oracles::random_prompt(w.vocab, 700 + draw);
    const ConceptSpec& spec = w.concepts[draw % w.concepts.size()];
    double brute = 0.0;
    oracles::for_each_sequence(
        w.vocab.image_vocab_size, w.vocab.seq_len, [&](const GridImage& img) {
          brute += std::exp(seq_log_prob(p, img, prompt, w.vocab)) *
                   concept_frequency(img, spec);
        });
    const double dp = exact_concept_expectation(p, prompt, spec, w.vocab);
    CHECK(dp == doctest::Approx(brute).epsilon(1e-9));
  }
}

TEST_CASE("exact expectation agrees with Monte-Carlo within three sigma") {
  const World w = World::default_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 1.0, 800);
  const Prompt prompt = oracles::random_prompt(w.vocab, 801);
  const ConceptSpec& spec = w.concepts[0];
  const double exact = exact_concept_expectation(p, prompt, spec, w.vocab);
  const int n = 100000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    acc += concept_frequency(
        sample(p, prompt, w.vocab, {1.0, mix_seed(802, static_cast<std::uint64_t>(i))}),
        spec);
  const double mc = acc / n;
  // image-level variance bound: per-image frequency lies in [0,1]
  const double sigma = std::sqrt(std::max(exact * (1.0 - exact), 1e-12) / n);
  CHECK(std::fabs(mc - exact) <= 3.0 * sigma);
}

TEST_CASE("a large negative signature bias drives the expectation to zero") {
  const World w = World::default_world();
  ModelParams p = ModelParams::zeros(w.vocab.image_vocab_size, w.vocab.cond_vocab_size);
  const ConceptSpec& spec = w.concepts[0];
  for (Token s : spec.signature_tokens)
    p.bias()[static_cast<std::size_t>(s)] = -1e4;
  Prompt prompt = w.empty_prompt();
  prompt.tokens[0] = spec.concept_id;
  CHECK(exact_concept_expectation(p, prompt, spec, w.vocab) <= 1e-9);
}

TEST_CASE("checkpoint round-trips bit-exactly and validates dimensions") {
  const World w = World::default_world();
  const ModelParams p = oracles::random_params(w.vocab.image_vocab_size,
                                               w.vocab.cond_vocab_size, 2.0, 5150);
  const fs::path tmp = fs::temp_directory_path() / "tokerase_ckpt_test.ckpt";
  save_checkpoint(p, w.vocab.seq_len, tmp);
  const Checkpoint back = load_checkpoint(tmp);
  CHECK(back.seq_len == w.vocab.seq_len);
  REQUIRE(back.params.same_shape(p));
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(back.params.data[i] == p.data[i]);

  std::ofstream(tmp) << "tokerase-checkpoint v1\nV 1 C 3 L 4\n";
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp), doctest::Contains("bad dimensions"),
                       std::runtime_error);
  fs::remove(tmp);
}
