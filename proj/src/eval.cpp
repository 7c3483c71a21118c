#include "tokerase/eval.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tokerase/rng.hpp"
#include "tokerase/synthworld.hpp"

namespace tokerase {

namespace {

constexpr std::uint64_t kEraseSalt = 0x6572617365626174ULL;
constexpr std::uint64_t kPreserveSalt = 0x70726573657276ULL;
constexpr std::uint64_t kCountSalt = 0x636f756e74730badULL;
constexpr std::uint64_t kAccSalt = 0x6163637572616379ULL;

double mean_frequency(const ModelParams& model, const World& world, const Prompt& prompt,
                      const ConceptSpec& spec, int n_samples, std::uint64_t seed,
                      ScoreMode mode) {
  if (mode == ScoreMode::exact)
    return exact_concept_expectation(model, prompt, spec, world.vocab);
  double acc = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const GridImage img = sample(model, prompt, world.vocab,
                                 GenerationConfig{1.0, mix_seed(seed, static_cast<std::uint64_t>(i))});
    acc += concept_frequency(img, spec);
  }
  return acc / n_samples;
}

}  // namespace

const char* score_mode_name(ScoreMode m) {
  return m == ScoreMode::exact ? "exact" : "sampled";
}

std::vector<Prompt> erase_battery(const World& world, CondToken target) {
  std::vector<Prompt> prompts;
  Prompt solo = world.empty_prompt();
  solo.tokens[0] = target;
  prompts.push_back(solo);
  if (world.vocab.prompt_len >= 2) {
    for (const auto& c : world.concepts) {
      if (c.concept_id == target) continue;
      Prompt p = world.empty_prompt();
      p.tokens[0] = target;
      p.tokens[1] = c.concept_id;
      prompts.push_back(std::move(p));
    }
  }
  return prompts;
}

std::vector<Prompt> preserve_battery(const World& world, CondToken target,
                                     CondToken concept_id) {
  (void)target;
  std::vector<Prompt> prompts;
  Prompt solo = world.empty_prompt();
  solo.tokens[0] = concept_id;
  prompts.push_back(std::move(solo));
  return prompts;
}

Scores score_erasure(const ModelParams& model, const World& world, CondToken target,
                     int n_samples, std::uint64_t seed, ScoreMode mode) {
  const ConceptSpec* target_spec = world.find_concept(target);
  if (!target_spec) throw std::invalid_argument("score_erasure: unknown concept");
  if (world.concepts.size() < 2)
    throw std::invalid_argument("score_erasure: no non-target concepts");
  if (mode == ScoreMode::sampled && n_samples < 1)
    throw std::invalid_argument("score_erasure: n_samples must be >= 1");

  Scores s;
  const auto targets = erase_battery(world, target);
  for (std::size_t i = 0; i < targets.size(); ++i)
    s.E += mean_frequency(model, world, targets[i], *target_spec, n_samples,
                          mix_seed(seed ^ kEraseSalt, i), mode);
  s.E /= static_cast<double>(targets.size());

  std::size_t n_concepts = 0;
  for (const auto& c : world.concepts) {
    if (c.concept_id == target) continue;
    const auto prompts = preserve_battery(world, target, c.concept_id);
    double u = 0.0;
    for (std::size_t i = 0; i < prompts.size(); ++i)
      u += mean_frequency(model, world, prompts[i], c, n_samples,
                          mix_seed(seed ^ kPreserveSalt,
                                   static_cast<std::uint64_t>(c.concept_id) * 1000 + i),
                          mode);
    s.U += u / static_cast<double>(prompts.size());
    ++n_concepts;
  }
  s.U /= static_cast<double>(n_concepts);
  s.D = s.U - s.E;
  return s;
}

std::map<CondToken, long> count_occurrences(const ModelParams& model, const World& world,
                                            const std::vector<Prompt>& prompts,
                                            double threshold, int n_samples,
                                            std::uint64_t seed) {
  if (threshold < 0.0 || threshold > 1.0)
    throw std::invalid_argument("count_occurrences: threshold outside [0,1]");
  std::map<CondToken, long> counts;
  for (const auto& c : world.concepts) counts[c.concept_id] = 0;
  std::uint64_t image_index = 0;
  for (const auto& prompt : prompts) {
    for (int i = 0; i < n_samples; ++i, ++image_index) {
      const GridImage img = sample(model, prompt, world.vocab,
                                   GenerationConfig{1.0, mix_seed(seed ^ kCountSalt, image_index)});
      for (const auto& c : world.concepts)
        if (concept_frequency(img, c) >= threshold) counts[c.concept_id] += 1;
    }
  }
  return counts;
}

namespace {

CondToken classify(const GridImage& img, const World& world, bool* tie) {
  CondToken best = -1;
  double best_freq = -1.0;
  bool tied = false;
  for (const auto& c : world.concepts) {  // ascending concept id
    const double f = concept_frequency(img, c);
    if (f > best_freq) {
      best_freq = f;
      best = c.concept_id;
      tied = false;
    } else if (f == best_freq) {
      tied = true;  // kept the lower id
    }
  }
  if (tie) *tie = tied;
  return best;
}

}  // namespace

std::vector<AccuracyRow> removal_accuracy(
    const std::vector<std::pair<CondToken, const ModelParams*>>& models,
    const World& world, int n_per_class, std::uint64_t seed,
    const std::filesystem::path* log_path) {
  if (n_per_class < 1)
    throw std::invalid_argument("removal_accuracy: n_per_class must be >= 1");
  std::FILE* log = nullptr;
  if (log_path) {
    log = std::fopen(log_path->string().c_str(), "wb");
    if (!log) throw std::runtime_error("removal_accuracy: cannot write " + log_path->string());
    std::fprintf(log, "image_index,erased_model,prompt_concept,assigned_class,tie");
    for (const auto& c : world.concepts) std::fprintf(log, ",freq_%d", c.concept_id);
    std::fprintf(log, "\n");
  }

  std::vector<AccuracyRow> table;
  std::uint64_t image_index = 0;
  for (const auto& [erased_id, model] : models) {
    AccuracyRow row;
    row.concept_id = erased_id;
    double other_sum = 0.0;
    int other_classes = 0;
    for (const auto& cls : world.concepts) {
      Prompt prompt = world.empty_prompt();
      prompt.tokens[0] = cls.concept_id;
      long correct = 0;
      for (int i = 0; i < n_per_class; ++i, ++image_index) {
        const GridImage img = sample(*model, prompt, world.vocab,
                                     GenerationConfig{1.0, mix_seed(seed ^ kAccSalt, image_index)});
        bool tie = false;
        const CondToken assigned = classify(img, world, &tie);
        if (tie) row.ties += 1;
        if (assigned == cls.concept_id) correct += 1;
        if (log) {
          std::fprintf(log, "%llu,%d,%d,%d,%d",
                       static_cast<unsigned long long>(image_index), erased_id,
                       cls.concept_id, assigned, tie ? 1 : 0);
          for (const auto& c : world.concepts)
            std::fprintf(log, ",%.17g", concept_frequency(img, c));
          std::fprintf(log, "\n");
        }
      }
      const double acc = 100.0 * static_cast<double>(correct) / n_per_class;
      if (cls.concept_id == erased_id) {
        row.erased_acc = acc;
      } else {
        other_sum += acc;
        ++other_classes;
      }
    }
    row.other_acc = other_classes > 0 ? other_sum / other_classes : 0.0;
    row.acc_diff = row.other_acc - row.erased_acc;
    table.push_back(row);
  }
  if (log) std::fclose(log);
  return table;
}

namespace {

const nlohmann::json& require(const nlohmann::json& j, const char* field) {
  if (!j.contains(field))
    throw std::runtime_error(std::string("report: missing field '") + field + "'");
  return j.at(field);
}

}  // namespace

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["method"] = report.method;
  j["mode"] = report.mode;
  j["target_concept"] = report.target_concept;
  j["erase_score"] = report.erase_score;
  j["preserve_score"] = report.preserve_score;
  j["decouple_score"] = report.decouple_score;
  nlohmann::json counts;
  for (const auto& [concept_id, n] : report.per_concept_counts)
    counts[std::to_string(concept_id)] = n;
  j["per_concept_counts"] = counts;
  j["accuracy_table"] = nlohmann::json::array();
  for (const auto& row : report.accuracy_table)
    j["accuracy_table"].push_back({{"concept_id", row.concept_id},
                                   {"erased_acc", row.erased_acc},
                                   {"other_acc", row.other_acc},
                                   {"acc_diff", row.acc_diff},
                                   {"ties", row.ties}});
  j["sample_count"] = report.sample_count;
  j["seed"] = report.seed;
  j["temperature"] = report.temperature;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("report: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("report: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("report: ") + e.what());
  }
  EvalReport r;
  r.method = require(j, "method").get<std::string>();
  r.mode = require(j, "mode").get<std::string>();
  r.target_concept = require(j, "target_concept").get<CondToken>();
  r.erase_score = require(j, "erase_score").get<double>();
  r.preserve_score = require(j, "preserve_score").get<double>();
  r.decouple_score = require(j, "decouple_score").get<double>();
  for (const auto& [key, value] : require(j, "per_concept_counts").items())
    r.per_concept_counts[static_cast<CondToken>(std::stoi(key))] = value.get<long>();
  for (const auto& jr : require(j, "accuracy_table")) {
    AccuracyRow row;
    row.concept_id = require(jr, "concept_id").get<CondToken>();
    row.erased_acc = require(jr, "erased_acc").get<double>();
    row.other_acc = require(jr, "other_acc").get<double>();
    row.acc_diff = require(jr, "acc_diff").get<double>();
    row.ties = require(jr, "ties").get<long>();
    r.accuracy_table.push_back(row);
  }
  r.sample_count = require(j, "sample_count").get<int>();
  r.seed = require(j, "seed").get<std::uint64_t>();
  r.temperature = require(j, "temperature").get<double>();
  return r;
}

}  // namespace tokerase
