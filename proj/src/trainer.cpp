#include "tokerase/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tokerase/kernels.hpp"
#include "tokerase/rng.hpp"

namespace tokerase {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x73687566666c6531ULL;
constexpr std::uint64_t kDropSalt = 0x746f6b64726f7031ULL;
constexpr std::uint64_t kFtTargetSalt = 0x667474617267731fULL;

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size() - 1; i > 0; --i) {
    const std::size_t j = rng.next_below(static_cast<std::uint32_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::pretrain: return "pretrain";
    case Method::vce: return "vce";
    case Method::dpo_vanilla: return "dpo_vanilla";
    case Method::dpo_drop: return "dpo_drop";
    case Method::ft: return "ft";
  }
  return "unknown";
}

Method method_from_name(const std::string& name) {
  if (name == "pretrain") return Method::pretrain;
  if (name == "vce") return Method::vce;
  if (name == "dpo_vanilla") return Method::dpo_vanilla;
  if (name == "dpo_drop") return Method::dpo_drop;
  if (name == "ft") return Method::ft;
  throw std::invalid_argument("unknown method '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0)
    throw std::invalid_argument("TrainConfig: adam_beta1 outside [0,1)");
  if (adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw std::invalid_argument("TrainConfig: adam_beta2 outside [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
}

void adam_step(ModelParams& params, const ModelParams& grad, AdamState& state,
               const TrainConfig& cfg) {
  const std::size_t n = params.size();
  if (grad.size() != n || state.m.size() != n)
    throw std::invalid_argument("adam_step: shape mismatch");
  if (!grad.all_finite()) throw DivergenceError("adam_step: non-finite gradient");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  kernels::adam_update(params.data.data(), state.m.data(), state.v.data(),
                       grad.data.data(), n, cfg.learning_rate, cfg.adam_beta1,
                       cfg.adam_beta2, kAdamEpsilon, 1.0 / bc1, 1.0 / bc2);
  if (cfg.weight_decay > 0.0)
    kernels::scale(params.data.data(), 1.0 - cfg.learning_rate * cfg.weight_decay, n);
}

ModelParams pretrain(const World& world, const std::vector<TrainExample>& dataset,
                     const TrainConfig& cfg, LossCurve* curve) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("pretrain: empty dataset");
  ModelParams params =
      ModelParams::zeros(world.vocab.image_vocab_size, world.vocab.cond_vocab_size);
  AdamState state = AdamState::zeros(params.size());
  ModelParams batch_grad = ModelParams::zeros_like(params);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t per_epoch =
      (dataset.size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size);

  for (int it = 0; it < cfg.iterations; ++it) {
    const std::size_t epoch = static_cast<std::size_t>(it) / per_epoch;
    const std::size_t slot = static_cast<std::size_t>(it) % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(mix_seed(cfg.seed ^ kShuffleSalt, epoch));
      shuffle_indices(order, rng);
    }
    const std::size_t begin = slot * static_cast<std::size_t>(cfg.batch_size);
    const std::size_t end = std::min(begin + cfg.batch_size, dataset.size());

    batch_grad.fill_zero();
    double loss_sum = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const TrainExample& ex = dataset[order[k]];
      const LossValue lv = ce_loss(params, ex.image, ex.prompt, world.vocab);
      loss_sum += lv.value;
      kernels::add(batch_grad.data.data(), lv.grad.data.data(), batch_grad.size());
    }
    const double inv_n = 1.0 / static_cast<double>(end - begin);
    kernels::scale(batch_grad.data.data(), inv_n, batch_grad.size());

    adam_step(params, batch_grad, state, cfg);
    if (curve)
      curve->points.push_back(CurvePoint{
          it, loss_sum * inv_n,
          kernels::max_abs(batch_grad.data.data(), batch_grad.size()), 0.0});
  }
  return params;
}

EraseResult erase(const ModelParams& base, const PairSet& pairs, const TrainConfig& cfg,
                  const DpoConfig& dpo_cfg) {
  cfg.validate();
  dpo_cfg.validate();
  if (cfg.method == Method::pretrain)
    throw std::invalid_argument("erase: method must be an erasure method");
  if (pairs.pairs.empty()) throw std::invalid_argument("erase: empty pair set");
  const Vocab& vocab = pairs.world.vocab;

  const ModelParams ref = base;  // frozen reference
  EraseResult result{base, LossCurve{}};
  AdamState state = AdamState::zeros(base.size());
  ModelParams batch_grad = ModelParams::zeros_like(base);

  // dpo_vanilla is the summed loss with no token drop by definition
  DpoConfig effective = dpo_cfg;
  if (cfg.method == Method::dpo_vanilla) effective.drop_prob = 0.0;

  // ft ignores negatives; its targets are empty-prompt base samples
  std::vector<GridImage> ft_targets;
  if (cfg.method == Method::ft) {
    const Prompt empty = pairs.world.empty_prompt();
    ft_targets.reserve(pairs.pairs.size());
    for (std::size_t i = 0; i < pairs.pairs.size(); ++i)
      ft_targets.push_back(
          sample(base, empty, vocab, GenerationConfig{1.0, mix_seed(cfg.seed ^ kFtTargetSalt, i)}));
  }

  std::vector<std::size_t> order(pairs.pairs.size());
  const std::size_t per_epoch =
      (pairs.pairs.size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size);

  for (int it = 0; it < cfg.iterations; ++it) {
    const std::size_t epoch = static_cast<std::size_t>(it) / per_epoch;
    const std::size_t slot = static_cast<std::size_t>(it) % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(mix_seed(cfg.seed ^ kShuffleSalt, epoch));
      shuffle_indices(order, rng);
    }
    const std::size_t begin = slot * static_cast<std::size_t>(cfg.batch_size);
    const std::size_t end = std::min(begin + cfg.batch_size, pairs.pairs.size());

    batch_grad.fill_zero();
    double loss_sum = 0.0;
    double margin_sum = 0.0;
    bool finite = true;
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t idx = order[k];
      const PreferencePair& pair = pairs.pairs[idx];
      LossValue lv;
      switch (cfg.method) {
        case Method::vce:
          lv = dpo_avg_loss(result.params, ref, pair, effective,
                            mix_seed(mix_seed(cfg.seed ^ kDropSalt, static_cast<std::uint64_t>(it)), idx),
                            vocab);
          break;
        case Method::dpo_vanilla:
        case Method::dpo_drop:
          lv = dpo_loss(result.params, ref, pair, effective,
                        mix_seed(mix_seed(cfg.seed ^ kDropSalt, static_cast<std::uint64_t>(it)), idx),
                        vocab);
          break;
        case Method::ft:
          lv = ft_align_loss(result.params, pair.prompt, ft_targets[idx], vocab);
          break;
        default:
          break;
      }
      if (!std::isfinite(lv.value)) finite = false;
      loss_sum += lv.value;
      margin_sum += lv.margin;
      kernels::add(batch_grad.data.data(), lv.grad.data.data(), batch_grad.size());
    }
    const double inv_n = 1.0 / static_cast<double>(end - begin);
    kernels::scale(batch_grad.data.data(), inv_n, batch_grad.size());

    const CurvePoint point{it, loss_sum * inv_n,
                           kernels::max_abs(batch_grad.data.data(), batch_grad.size()),
                           margin_sum * inv_n};
    if (!finite || !std::isfinite(point.loss)) {
      result.curve.points.push_back(point);
      result.curve.diverged = true;
      result.curve.diverged_at = it;
      return result;
    }
    try {
      adam_step(result.params, batch_grad, state, cfg);
    } catch (const DivergenceError&) {
      result.curve.points.push_back(point);
      result.curve.diverged = true;
      result.curve.diverged_at = it;
      return result;
    }
    result.curve.points.push_back(point);
  }
  return result;
}

GradCheckReport grad_check(LossKind kind, int trials, double tolerance) {
  const World world = World::micro_world();
  const Vocab& vocab = world.vocab;
  const int V = vocab.image_vocab_size;
  const int C = vocab.cond_vocab_size;
  constexpr double h = 1e-5;

  GradCheckReport report;
  report.kind = kind;
  report.trials = trials;
  report.tolerance = tolerance;
  report.blocks = {{"w_prev", 0.0}, {"w_cond", 0.0}, {"b", 0.0}, {"bos_row", 0.0}};

  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(mix_seed(0xc0ffee, static_cast<std::uint64_t>(trial)));
    ModelParams params = ModelParams::zeros(V, C);
    for (double& x : params.data) x = rng.next_symmetric(0.5);
    ModelParams ref = ModelParams::zeros(V, C);
    for (double& x : ref.data) x = rng.next_symmetric(0.5);

    PreferencePair pair;
    pair.target_concept = world.concepts.front().concept_id;
    pair.prompt.tokens.resize(static_cast<std::size_t>(vocab.prompt_len));
    for (auto& t : pair.prompt.tokens) t = static_cast<CondToken>(rng.next_below(C));
    auto random_image = [&] {
      GridImage img;
      img.tokens.resize(static_cast<std::size_t>(vocab.seq_len));
      for (auto& t : img.tokens) t = static_cast<Token>(rng.next_below(V));
      return img;
    };
    pair.positive = random_image();
    pair.negative = random_image();
    const std::uint64_t drop_seed = rng.next_u64();
    // odd trials exercise the token-drop path (the dropped prompt is part of
    // the objective, not of the differentiation, so FD still applies)
    const DpoConfig dcfg{0.25 + 0.5 * rng.next_double(), trial % 2 == 0 ? 0.0 : 0.35};

    auto loss_at = [&](const ModelParams& p) -> LossValue {
      switch (kind) {
        case LossKind::ce: return ce_loss(p, pair.positive, pair.prompt, vocab);
        case LossKind::dpo: return dpo_loss(p, ref, pair, dcfg, drop_seed, vocab);
        case LossKind::dpo_avg: return dpo_avg_loss(p, ref, pair, dcfg, drop_seed, vocab);
        case LossKind::ft: return ft_align_loss(p, pair.prompt, pair.negative, vocab);
      }
      throw std::invalid_argument("grad_check: unknown loss kind");
    };

    const LossValue lv = loss_at(params);
    ModelParams probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
      probe.data[i] = params.data[i] + h;
      const double up = loss_at(probe).value;
      probe.data[i] = params.data[i] - h;
      const double down = loss_at(probe).value;
      probe.data[i] = params.data[i];
      const double fd = (up - down) / (2.0 * h);
      const double analytic = lv.grad.data[i];
      const double denom = std::max(std::fabs(analytic), std::fabs(fd));
      const double rel = denom < 1e-6 ? 0.0 : std::fabs(analytic - fd) / denom;

      const std::size_t vz = static_cast<std::size_t>(V);
      std::size_t block = 3;
      if (i < vz * vz)
        block = 0;
      else if (i < vz * (vz + static_cast<std::size_t>(C)))
        block = 1;
      else if (i < vz * (vz + static_cast<std::size_t>(C) + 1))
        block = 2;
      report.blocks[block].max_rel_err = std::max(report.blocks[block].max_rel_err, rel);
    }
  }
  for (const auto& b : report.blocks)
    report.max_rel_err = std::max(report.max_rel_err, b.max_rel_err);
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

void record_curves(const std::vector<std::pair<std::string, LossCurve>>& runs,
                   const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw std::runtime_error("curve file: cannot write " + path.string());
  std::fprintf(f, "label,iteration,loss,grad_maxnorm,margin_mean\n");
  for (const auto& [label, curve] : runs)
    for (const auto& p : curve.points)
      std::fprintf(f, "%s,%d,%.17g,%.17g,%.17g\n", label.c_str(), p.iteration, p.loss,
                   p.grad_maxnorm, p.margin_mean);
  std::fclose(f);
}

std::vector<std::pair<std::string, LossCurve>> read_curves(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("curve file: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "label,iteration,loss,grad_maxnorm,margin_mean")
    throw std::runtime_error("curve file: bad header");
  std::vector<std::pair<std::string, LossCurve>> runs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string label, field;
    std::getline(ss, label, ',');
    CurvePoint p;
    std::getline(ss, field, ',');
    p.iteration = std::stoi(field);
    std::getline(ss, field, ',');
    p.loss = std::stod(field);
    std::getline(ss, field, ',');
    p.grad_maxnorm = std::stod(field);
    std::getline(ss, field, ',');
    p.margin_mean = std::stod(field);
    if (runs.empty() || runs.back().first != label)
      runs.push_back({label, LossCurve{}});
    runs.back().second.points.push_back(p);
  }
  return runs;
}

ErasePreset preset_by_name(const std::string& name) {
  if (name == "style") return ErasePreset{"style", 0.035, 30};
  if (name == "explicit") return ErasePreset{"explicit", 0.035, 500};
  if (name == "object") return ErasePreset{"object", 0.0175, 50};
  throw std::invalid_argument("unknown preset '" + name + "'");
}

}  // namespace tokerase
