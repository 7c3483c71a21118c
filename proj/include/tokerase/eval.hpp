#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tokerase/armodel.hpp"
#include "tokerase/world.hpp"

namespace tokerase {

enum class ScoreMode { sampled, exact };

const char* score_mode_name(ScoreMode m);

/// One row of the object-removal table, percentages in [0, 100].
struct AccuracyRow {
  CondToken concept_id = -1;  // the erased class
  double erased_acc = 0.0;    // its-class prompts still classified as it
  double other_acc = 0.0;     // mean over the remaining classes
  double acc_diff = 0.0;      // other - erased
  long ties = 0;              // argmax ties, broken toward the lowest id

  bool operator==(const AccuracyRow&) const = default;
};

struct EvalReport {
  std::string method;
  std::string mode;
  CondToken target_concept = -1;
  double erase_score = 0.0;     // E: target frequency under target prompts
  double preserve_score = 0.0;  // U: non-target frequency under own prompts
  double decouple_score = 0.0;  // D = U - E
  std::map<CondToken, long> per_concept_counts;
  std::vector<AccuracyRow> accuracy_table;
  int sample_count = 0;
  std::uint64_t seed = 0;
  double temperature = 1.0;

  bool operator==(const EvalReport&) const = default;
};

/// Prompts containing the target: [t,e,..] plus [t,o,e,..] per non-target o.
std::vector<Prompt> erase_battery(const World& world, CondToken target);

/// Prompt(s) for one non-target concept on its own, target absent: [o,e,..].
std::vector<Prompt> preserve_battery(const World& world, CondToken target,
                                     CondToken concept_id);

struct Scores {
  double E = 0.0;
  double U = 0.0;
  double D = 0.0;
};

/// E/U/D scores. `sampled` draws n_samples images per prompt (per-image
/// derived seeds); `exact` uses the closed-form expectation and ignores
/// n_samples. Throws if the world has no non-target concept.
Scores score_erasure(const ModelParams& model, const World& world, CondToken target,
                     int n_samples, std::uint64_t seed, ScoreMode mode);

/// Per-concept count of generated images whose signature frequency reaches
/// the threshold, over n_samples images per prompt.
std::map<CondToken, long> count_occurrences(const ModelParams& model, const World& world,
                                            const std::vector<Prompt>& prompts,
                                            double threshold, int n_samples,
                                            std::uint64_t seed);

/// Object-removal table: one erased model per class, n_per_class images per
/// (model, class prompt), classifier = argmax of signature frequency.
/// When log_path is given, writes the per-image classification log CSV.
std::vector<AccuracyRow> removal_accuracy(
    const std::vector<std::pair<CondToken, const ModelParams*>>& models,
    const World& world, int n_per_class, std::uint64_t seed,
    const std::filesystem::path* log_path = nullptr);

/// Deterministic JSON serialization; unreadable or incomplete files are
/// rejected with the offending field named.
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace tokerase
