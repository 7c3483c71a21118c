#include "tokerase/armodel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tokerase/kernels.hpp"
#include "tokerase/rng.hpp"

namespace tokerase {

ModelParams ModelParams::zeros(int V, int C) {
  ModelParams p;
  p.V = V;
  p.C = C;
  p.data.assign(static_cast<std::size_t>(V) * (V + C + 2), 0.0);
  return p;
}

bool ModelParams::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

void ModelParams::fill_zero() { data.assign(data.size(), 0.0); }

void logits_into(const ModelParams& params, std::optional<Token> prev,
                 const Prompt& prompt, const Vocab& vocab, std::span<double> out) {
  const std::size_t V = static_cast<std::size_t>(params.V);
  const auto base = prev ? params.w_prev_row(*prev) : params.bos_row();
  std::copy(base.begin(), base.end(), out.begin());
  for (CondToken c : prompt.tokens) {
    if (c == vocab.drop_token) continue;  // dropped tokens contribute a zero row
    kernels::add(out.data(), params.w_cond_row(c).data(), V);
  }
  kernels::add(out.data(), params.bias().data(), V);
}

std::vector<double> logits(const ModelParams& params, std::optional<Token> prev,
                           const Prompt& prompt, const Vocab& vocab) {
  if (prev && (*prev < 0 || *prev >= params.V))
    throw std::invalid_argument("logits: prev token out of range");
  for (CondToken c : prompt.tokens)
    if (c < 0 || c >= params.C) throw std::invalid_argument("logits: prompt token out of range");
  std::vector<double> out(static_cast<std::size_t>(params.V));
  logits_into(params, prev, prompt, vocab, out);
  return out;
}

double log_sum_exp(std::span<const double> x) {
  const double m = kernels::max_value(x.data(), x.size());
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) acc[i & 3] += std::exp(x[i] - m);
  return m + std::log((acc[0] + acc[1]) + (acc[2] + acc[3]));
}

void softmax_into(std::span<const double> x, double temperature, std::span<double> probs) {
  const std::size_t n = x.size();
  const double inv_t = 1.0 / temperature;
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp((x[i] - m) * inv_t);
    acc[i & 3] += probs[i];
  }
  const double z = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  kernels::scale(probs.data(), 1.0 / z, n);
}

double seq_log_prob(const ModelParams& params, const GridImage& image,
                    const Prompt& prompt, const Vocab& vocab) {
  const std::size_t V = static_cast<std::size_t>(params.V);
  std::vector<double> l(V);
  double total = 0.0;
  std::optional<Token> prev;
  for (Token q : image.tokens) {
    logits_into(params, prev, prompt, vocab, l);
    total += l[static_cast<std::size_t>(q)] - log_sum_exp(l);
    prev = q;
  }
  return total;
}

void grad_seq_log_prob_into(const ModelParams& params, const GridImage& image,
                            const Prompt& prompt, const Vocab& vocab, double weight,
                            ModelParams& grad) {
  const std::size_t V = static_cast<std::size_t>(params.V);
  std::vector<double> l(V);
  std::vector<double> p(V);
  std::optional<Token> prev;
  for (Token q : image.tokens) {
    logits_into(params, prev, prompt, vocab, l);
    softmax_into(l, 1.0, p);
    // d logit / addend rows each receive weight * (e_q - softmax)
    p[static_cast<std::size_t>(q)] -= 1.0;
    auto ctx_row = prev ? grad.w_prev_row(*prev) : grad.bos_row();
    kernels::axpy(ctx_row.data(), -weight, p.data(), V);
    for (CondToken c : prompt.tokens) {
      if (c == vocab.drop_token) continue;
      kernels::axpy(grad.w_cond_row(c).data(), -weight, p.data(), V);
    }
    kernels::axpy(grad.bias().data(), -weight, p.data(), V);
    prev = q;
  }
}

ModelParams grad_seq_log_prob(const ModelParams& params, const GridImage& image,
                              const Prompt& prompt, const Vocab& vocab) {
  ModelParams g = ModelParams::zeros_like(params);
  grad_seq_log_prob_into(params, image, prompt, vocab, 1.0, g);
  return g;
}

GridImage sample(const ModelParams& params, const Prompt& prompt, const Vocab& vocab,
                 const GenerationConfig& cfg) {
  if (cfg.temperature < 0.0)
    throw std::invalid_argument("GenerationConfig: temperature must be >= 0");
  const std::size_t V = static_cast<std::size_t>(params.V);
  std::vector<double> l(V);
  std::vector<double> p(V);
  GridImage img;
  img.tokens.reserve(static_cast<std::size_t>(vocab.seq_len));
  Rng rng(cfg.seed);
  std::optional<Token> prev;
  for (int t = 0; t < vocab.seq_len; ++t) {
    logits_into(params, prev, prompt, vocab, l);
    Token pick = 0;
    if (cfg.temperature == 0.0) {
      for (std::size_t v = 1; v < V; ++v)
        if (l[v] > l[static_cast<std::size_t>(pick)]) pick = static_cast<Token>(v);
    } else {
      softmax_into(l, cfg.temperature, p);
      const double u = rng.next_double();
      double cdf = 0.0;
      pick = static_cast<Token>(V - 1);
      for (std::size_t v = 0; v < V; ++v) {
        cdf += p[v];
        if (u < cdf) {
          pick = static_cast<Token>(v);
          break;
        }
      }
    }
    img.tokens.push_back(pick);
    prev = pick;
  }
  return img;
}

double exact_concept_expectation_fn(const LogitsFn& fn, const ConceptSpec& spec,
                                    const Vocab& vocab) {
  const std::size_t V = static_cast<std::size_t>(vocab.image_vocab_size);
  std::vector<double> l(V);
  std::vector<double> row(V);
  // transition[u] = softmax of next-token logits given prev = u
  std::vector<std::vector<double>> transition(V, std::vector<double>(V));
  for (std::size_t u = 0; u < V; ++u) {
    fn(static_cast<Token>(u), l);
    softmax_into(l, 1.0, transition[u]);
  }
  fn(std::nullopt, l);
  std::vector<double> marginal(V);
  softmax_into(l, 1.0, marginal);

  std::vector<double> indicator(V, 0.0);
  for (Token s : spec.signature_tokens) indicator[static_cast<std::size_t>(s)] = 1.0;

  double expected = kernels::dot(marginal.data(), indicator.data(), V);
  std::vector<double> next(V);
  for (int t = 1; t < vocab.seq_len; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t u = 0; u < V; ++u)
      kernels::axpy(next.data(), marginal[u], transition[u].data(), V);
    marginal.swap(next);
    expected += kernels::dot(marginal.data(), indicator.data(), V);
  }
  return expected / vocab.seq_len;
}

double exact_concept_expectation(const ModelParams& params, const Prompt& prompt,
                                 const ConceptSpec& spec, const Vocab& vocab) {
  return exact_concept_expectation_fn(
      [&](std::optional<Token> prev, std::span<double> out) {
        logits_into(params, prev, prompt, vocab, out);
      },
      spec, vocab);
}

namespace {

void write_block(std::FILE* f, const char* name, const double* x, std::size_t n,
                 std::size_t row) {
  std::fprintf(f, "%s\n", name);
  for (std::size_t i = 0; i < n; ++i)
    std::fprintf(f, "%.17g%c", x[i], (i % row == row - 1 || i == n - 1) ? '\n' : ' ');
}

}  // namespace

void save_checkpoint(const ModelParams& params, int seq_len,
                     const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path.string());
  const std::size_t V = static_cast<std::size_t>(params.V);
  const std::size_t C = static_cast<std::size_t>(params.C);
  std::fprintf(f, "tokerase-checkpoint v1\n");
  std::fprintf(f, "V %d C %d L %d\n", params.V, params.C, seq_len);
  write_block(f, "w_prev", params.data.data(), V * V, V);
  write_block(f, "w_cond", params.data.data() + V * V, C * V, V);
  write_block(f, "b", params.bias().data(), V, V);
  write_block(f, "bos_row", params.bos_row().data(), V, V);
  std::fclose(f);
}

namespace {

void read_block(std::istream& in, const std::string& name, double* x, std::size_t n) {
  std::string label;
  in >> label;
  if (label != name)
    throw std::runtime_error("checkpoint: expected block '" + name + "', got '" + label + "'");
  for (std::size_t i = 0; i < n; ++i)
    if (!(in >> x[i]))
      throw std::runtime_error("checkpoint: truncated block '" + name + "'");
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::string magic, version;
  in >> magic >> version;
  if (magic != "tokerase-checkpoint" || version != "v1")
    throw std::runtime_error("checkpoint: bad header in " + path.string());
  std::string kv, kc, kl;
  int V = 0, C = 0, L = 0;
  in >> kv >> V >> kc >> C >> kl >> L;
  if (kv != "V" || kc != "C" || kl != "L" || V < 2 || C < 3 || L < 1)
    throw std::runtime_error("checkpoint: bad dimensions in " + path.string());
  Checkpoint ck;
  ck.seq_len = L;
  ck.params = ModelParams::zeros(V, C);
  const std::size_t Vz = static_cast<std::size_t>(V);
  const std::size_t Cz = static_cast<std::size_t>(C);
  read_block(in, "w_prev", ck.params.data.data(), Vz * Vz);
  read_block(in, "w_cond", ck.params.data.data() + Vz * Vz, Cz * Vz);
  read_block(in, "b", ck.params.bias().data(), Vz);
  read_block(in, "bos_row", ck.params.bos_row().data(), Vz);
  return ck;
}

}  // namespace tokerase
