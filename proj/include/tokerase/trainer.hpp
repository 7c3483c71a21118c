#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tokerase/armodel.hpp"
#include "tokerase/losses.hpp"
#include "tokerase/synthworld.hpp"

namespace tokerase {

enum class Method { pretrain, vce, dpo_vanilla, dpo_drop, ft };

const char* method_name(Method m);
Method method_from_name(const std::string& name);  // throws on unknown label

struct TrainConfig {
  double learning_rate = 0.15;
  int iterations = 0;
  int batch_size = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double weight_decay = 0.0;
  std::uint64_t seed = 42;
  Method method = Method::pretrain;

  void validate() const;
};

/// Raised when a non-finite loss or gradient shows up; the training loop
/// catches it, marks the curve and preserves partial results.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct CurvePoint {
  int iteration = 0;
  double loss = 0.0;
  double grad_maxnorm = 0.0;
  double margin_mean = 0.0;
};

struct LossCurve {
  std::vector<CurvePoint> points;
  bool diverged = false;
  int diverged_at = -1;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  static AdamState zeros(std::size_t n) {
    return AdamState{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
  }
};

inline constexpr double kAdamEpsilon = 1e-8;

/// Bias-corrected Adam step (epsilon 1e-8, decoupled weight decay). Throws
/// DivergenceError on a non-finite gradient.
void adam_step(ModelParams& params, const ModelParams& grad, AdamState& state,
               const TrainConfig& cfg);

/// Minimizes mean ce_loss over the dataset from zero initialization.
/// Bit-deterministic given cfg.seed.
ModelParams pretrain(const World& world, const std::vector<TrainExample>& dataset,
                     const TrainConfig& cfg, LossCurve* curve = nullptr);

struct EraseResult {
  ModelParams params;
  LossCurve curve;
};

/// Erasure finetuning from `base` with the objective selected by cfg.method
/// (vce = token drop + token-level average, dpo_vanilla = summed loss and
/// drop 0, dpo_drop = summed loss with drop, ft = align unsafe prompts to
/// empty-prompt base samples). The reference model is a frozen copy of base.
/// On divergence the partial curve is preserved and marked.
EraseResult erase(const ModelParams& base, const PairSet& pairs, const TrainConfig& cfg,
                  const DpoConfig& dpo_cfg);

enum class LossKind { ce, dpo, dpo_avg, ft };

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  LossKind kind;
  int trials = 0;
  double tolerance = 0.0;
  std::vector<GradCheckBlock> blocks;  // w_prev, w_cond, b, bos_row
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Central finite differences (h = 1e-5) vs the analytic gradient on random
/// micro-world inputs, reported per parameter block.
GradCheckReport grad_check(LossKind kind, int trials, double tolerance);

/// Curve CSV: header then one `label,iteration,loss,grad_maxnorm,margin_mean`
/// row per recorded point, 17 significant digits.
void record_curves(const std::vector<std::pair<std::string, LossCurve>>& runs,
                   const std::filesystem::path& path);
std::vector<std::pair<std::string, LossCurve>> read_curves(
    const std::filesystem::path& path);

struct ErasePreset {
  std::string name;
  double learning_rate = 0.0;
  int iterations = 0;
};

/// Task presets. Iteration counts per task: style 30, explicit 500,
/// object 50; object runs at half the style learning rate.
ErasePreset preset_by_name(const std::string& name);  // style | explicit | object

}  // namespace tokerase
