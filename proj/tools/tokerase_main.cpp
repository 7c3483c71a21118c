#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tokerase/armodel.hpp"
#include "tokerase/eval.hpp"
#include "tokerase/kernels.hpp"
#include "tokerase/losses.hpp"
#include "tokerase/manifest.hpp"
#include "tokerase/rng.hpp"
#include "tokerase/synthworld.hpp"
#include "tokerase/trainer.hpp"
#include "tokerase/world.hpp"

namespace fs = std::filesystem;
using namespace tokerase;

namespace {

constexpr std::uint64_t kWoDataSalt = 0x776f5f64617461ULL;

void ensure_dir(const fs::path& dir) { fs::create_directories(dir); }

World world_from_run(const RunManifest& m, const fs::path& run_dir) {
  return load_world(m.artifact_path(run_dir, "world"));
}

/// Accepts a pretrain or erase run and returns its checkpoint plus metadata.
struct ModelRun {
  RunManifest manifest;
  fs::path dir;
  Checkpoint checkpoint;
  World world;
  std::string method;
  std::optional<CondToken> target;
};

ModelRun load_model_run(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "manifest.json"))
    throw std::runtime_error("missing upstream stage 'pretrain' or 'erase': no manifest at " +
                             run_dir.string());
  RunManifest m = load_manifest(run_dir);
  if (m.stage != "pretrain" && m.stage != "erase")
    throw std::runtime_error("run at " + run_dir.string() + " is a '" + m.stage +
                             "' stage, expected 'pretrain' or 'erase'");
  ModelRun out{m, run_dir, load_checkpoint(m.artifact_path(run_dir, "checkpoint")),
               world_from_run(m, run_dir), m.stage, std::nullopt};
  if (m.stage == "erase") {
    out.method = m.config.at("method").get<std::string>();
    out.target = m.config.at("target").get<CondToken>();
  } else {
    out.method = "pretrain";
  }
  return out;
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["learning_rate"] = cfg.learning_rate;
  j["iterations"] = cfg.iterations;
  j["batch_size"] = cfg.batch_size;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["weight_decay"] = cfg.weight_decay;
  j["method"] = method_name(cfg.method);
  return j;
}

// ---------------------------------------------------------------------------
// world

struct WorldOpts {
  std::string config;
  std::string out;
};

int cmd_world(const WorldOpts& o) {
  const World world = load_world(o.config);
  ensure_dir(o.out);
  save_world(world, fs::path(o.out) / "world.json");

  RunManifest m;
  m.stage = "world";
  m.config["source_config"] = o.config;
  m.artifacts["world"] = "world.json";
  save_manifest(m, o.out);
  std::printf("world: V=%d C=%d L=%d prompt_len=%d concepts=%zu -> %s\n",
              world.vocab.image_vocab_size, world.vocab.cond_vocab_size,
              world.vocab.seq_len, world.vocab.prompt_len, world.concepts.size(),
              o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOpts {
  std::string world_run;
  std::string out;
  std::uint64_t seed = 42;
  int iterations = 400;
  double lr = 0.15;
  int batch_size = 64;
  int examples = 2048;
};

int cmd_pretrain(const PretrainOpts& o) {
  const RunManifest upstream = require_stage(o.world_run, "world");
  const World world = world_from_run(upstream, o.world_run);

  const auto dataset = build_pretrain_dataset(world, o.examples, mix_seed(o.seed, 0));
  TrainConfig cfg;
  cfg.learning_rate = o.lr;
  cfg.iterations = o.iterations;
  cfg.batch_size = o.batch_size;
  cfg.seed = o.seed;
  cfg.method = Method::pretrain;

  LossCurve curve;
  const ModelParams params = pretrain(world, dataset, cfg, &curve);

  ensure_dir(o.out);
  save_checkpoint(params, world.vocab.seq_len, fs::path(o.out) / "base.ckpt");
  save_world(world, fs::path(o.out) / "world.json");
  record_curves({{"pretrain", curve}}, fs::path(o.out) / "curve.csv");

  RunManifest m;
  m.stage = "pretrain";
  m.seed = o.seed;
  m.config = train_config_json(cfg);
  m.config["examples"] = o.examples;
  m.inputs["world"] = o.world_run;
  m.artifacts["checkpoint"] = "base.ckpt";
  m.artifacts["world"] = "world.json";
  m.artifacts["curve"] = "curve.csv";
  save_manifest(m, o.out);
  std::printf("pretrain: %d iterations on %d examples -> %s\n", o.iterations, o.examples,
              o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// build-pairs

struct BuildPairsOpts {
  std::string base_run;
  std::string out;
  CondToken target = -1;
  int count = 800;
  std::uint64_t seed = 42;
};

int cmd_build_pairs(const BuildPairsOpts& o) {
  const RunManifest upstream = require_stage(o.base_run, "pretrain");
  const World world = world_from_run(upstream, o.base_run);
  const Checkpoint base = load_checkpoint(upstream.artifact_path(o.base_run, "checkpoint"));

  const PairSet set = build_pairs(base.params, world, o.target, o.count, o.seed);

  ensure_dir(o.out);
  save_pairs(set, fs::path(o.out) / "pairs.jsonl");
  save_world(world, fs::path(o.out) / "world.json");

  RunManifest m;
  m.stage = "build_pairs";
  m.seed = o.seed;
  m.config["target"] = o.target;
  m.config["count"] = o.count;
  m.config["negative_sampling_temperature"] = 1.0;
  m.inputs["pretrain"] = o.base_run;
  m.artifacts["pairs"] = "pairs.jsonl";
  m.artifacts["world"] = "world.json";
  save_manifest(m, o.out);
  std::printf("build-pairs: %d pairs for concept %d -> %s\n", o.count, o.target,
              o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// erase

struct EraseOpts {
  std::string pairs_run;
  std::string out;
  std::string method = "vce";
  std::string preset = "style";
  std::uint64_t seed = 42;
  double beta = 0.1;
  double drop_prob = 0.1;
  int batch_size = 64;
  std::optional<double> lr_override;
  std::optional<int> iterations_override;
};

struct EraseInputs {
  PairSet pairs;
  Checkpoint base;
  fs::path base_run;
};

EraseInputs load_erase_inputs(const std::string& pairs_run) {
  const RunManifest pm = require_stage(pairs_run, "build_pairs");
  const auto it = pm.inputs.find("pretrain");
  if (it == pm.inputs.end())
    throw std::runtime_error("missing upstream stage 'pretrain': pair run " + pairs_run +
                             " records no pretrain input");
  const RunManifest bm = require_stage(it->second, "pretrain");
  return EraseInputs{
      load_pairs(pm.artifact_path(pairs_run, "pairs")),
      load_checkpoint(bm.artifact_path(it->second, "checkpoint")),
      it->second,
  };
}

int cmd_erase(const EraseOpts& o) {
  EraseInputs in = load_erase_inputs(o.pairs_run);
  const World& world = in.pairs.world;

  const ErasePreset preset = preset_by_name(o.preset);
  TrainConfig cfg;
  cfg.learning_rate = o.lr_override.value_or(preset.learning_rate);
  cfg.iterations = o.iterations_override.value_or(preset.iterations);
  cfg.batch_size = o.batch_size;
  cfg.seed = o.seed;
  cfg.method = method_from_name(o.method);
  if (cfg.method == Method::pretrain)
    throw std::invalid_argument("erase: method must be one of vce, dpo_vanilla, dpo_drop, ft");
  const DpoConfig dpo_cfg{o.beta, o.drop_prob};

  const EraseResult result = erase(in.base.params, in.pairs, cfg, dpo_cfg);

  ensure_dir(o.out);
  save_checkpoint(result.params, world.vocab.seq_len, fs::path(o.out) / "erased.ckpt");
  save_world(world, fs::path(o.out) / "world.json");
  record_curves({{o.method, result.curve}}, fs::path(o.out) / "curve.csv");

  RunManifest m;
  m.stage = "erase";
  m.seed = o.seed;
  m.config = train_config_json(cfg);
  m.config["preset"] = preset.name;
  m.config["beta"] = o.beta;
  m.config["drop_prob"] = cfg.method == Method::dpo_vanilla ? 0.0 : o.drop_prob;
  m.config["target"] = in.pairs.pairs.front().target_concept;
  m.config["notes"] = {
      "beta and drop_prob are free hyperparameters (defaults 0.1)",
      "preset iteration counts are fixed per task; learning rates are calibrated "
      "for this model family",
  };
  if (result.curve.diverged) m.config["diverged_at"] = result.curve.diverged_at;
  m.inputs["build_pairs"] = o.pairs_run;
  m.inputs["pretrain"] = in.base_run.string();
  m.artifacts["checkpoint"] = "erased.ckpt";
  m.artifacts["world"] = "world.json";
  m.artifacts["curve"] = "curve.csv";
  save_manifest(m, o.out);

  if (result.curve.diverged) {
    std::fprintf(stderr, "erase: divergence event at iteration %d, partial results in %s\n",
                 result.curve.diverged_at, o.out.c_str());
    return 3;
  }
  std::printf("erase: method=%s preset=%s %d iterations -> %s\n", o.method.c_str(),
              preset.name.c_str(), cfg.iterations, o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string model_run;
  std::string out;
  std::optional<CondToken> target;
  bool exact = false;
  int samples = 10;
  double threshold = 0.6;
  std::uint64_t seed = 42;
  std::vector<std::string> removal_runs;
  int removal_per_class = 200;
};

int cmd_eval(const EvalOpts& o) {
  const ModelRun run = load_model_run(o.model_run);
  CondToken target = -1;
  if (o.target) {
    target = *o.target;
  } else if (run.target) {
    target = *run.target;
  } else {
    throw std::invalid_argument("eval: --target is required for a pretrain-stage model");
  }
  const ScoreMode mode = o.exact ? ScoreMode::exact : ScoreMode::sampled;

  EvalReport report;
  report.method = run.method;
  report.mode = score_mode_name(mode);
  report.target_concept = target;
  report.sample_count = o.samples;
  report.seed = o.seed;
  report.temperature = 1.0;

  const Scores s =
      score_erasure(run.checkpoint.params, run.world, target, o.samples, o.seed, mode);
  report.erase_score = s.E;
  report.preserve_score = s.U;
  report.decouple_score = s.D;
  report.per_concept_counts =
      count_occurrences(run.checkpoint.params, run.world, erase_battery(run.world, target),
                        o.threshold, o.samples, o.seed);

  ensure_dir(o.out);
  RunManifest m;
  m.stage = "eval";
  m.seed = o.seed;
  m.config["target"] = target;
  m.config["mode"] = report.mode;
  m.config["samples"] = o.samples;
  m.config["threshold"] = o.threshold;
  m.config["temperature"] = 1.0;
  m.inputs["model"] = o.model_run;

  if (!o.removal_runs.empty()) {
    std::vector<ModelRun> runs;
    std::vector<std::pair<CondToken, const ModelParams*>> models;
    for (std::size_t i = 0; i < o.removal_runs.size(); ++i) {
      const std::string& dir = o.removal_runs[i];
      runs.push_back(load_model_run(dir));
      if (!runs.back().target)
        throw std::invalid_argument("eval: removal model " + dir + " has no erased concept");
      m.inputs["removal_model_" + std::to_string(i)] = dir;
    }
    for (const auto& r : runs) models.push_back({*r.target, &r.checkpoint.params});
    const fs::path log_path = fs::path(o.out) / "classification_log.csv";
    report.accuracy_table =
        removal_accuracy(models, run.world, o.removal_per_class, o.seed, &log_path);
    m.artifacts["classification_log"] = "classification_log.csv";
    m.config["removal_per_class"] = o.removal_per_class;
  }

  write_report(report, fs::path(o.out) / "report.json");
  m.artifacts["report"] = "report.json";
  save_manifest(m, o.out);
  std::printf("eval: method=%s mode=%s E=%.4f U=%.4f D=%.4f -> %s\n", report.method.c_str(),
              report.mode.c_str(), s.E, s.U, s.D, o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// curves (stability comparison: vanilla DPO vs token-level average)

struct CurvesOpts {
  std::string pairs_run;
  std::string out;
  std::string preset = "explicit";
  std::uint64_t seed = 42;
  double beta = 0.1;
  double drop_prob = 0.1;
};

int cmd_curves(const CurvesOpts& o) {
  EraseInputs in = load_erase_inputs(o.pairs_run);
  const ErasePreset preset = preset_by_name(o.preset);

  TrainConfig cfg;
  cfg.learning_rate = preset.learning_rate;
  cfg.iterations = preset.iterations;
  cfg.seed = o.seed;

  cfg.method = Method::dpo_vanilla;
  const EraseResult vanilla = erase(in.base.params, in.pairs, cfg, DpoConfig{o.beta, 0.0});
  cfg.method = Method::vce;
  const EraseResult avg = erase(in.base.params, in.pairs, cfg, DpoConfig{o.beta, o.drop_prob});

  ensure_dir(o.out);
  record_curves({{"dpo_vanilla", vanilla.curve}, {"dpo_avg", avg.curve}},
                fs::path(o.out) / "curves.csv");

  RunManifest m;
  m.stage = "curves";
  m.seed = o.seed;
  m.config["preset"] = preset.name;
  m.config["beta"] = o.beta;
  m.config["drop_prob"] = o.drop_prob;
  m.config["vanilla_diverged"] = vanilla.curve.diverged;
  m.config["avg_diverged"] = avg.curve.diverged;
  m.inputs["build_pairs"] = o.pairs_run;
  m.artifacts["curves"] = "curves.csv";
  save_manifest(m, o.out);
  std::printf("curves: vanilla %s, token-level average %s -> %s\n",
              vanilla.curve.diverged ? "diverged" : "completed",
              avg.curve.diverged ? "diverged" : "completed", o.out.c_str());
  return avg.curve.diverged ? 3 : 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateOpts {
  std::string pairs_run;
  std::string out;
  std::string preset = "style";
  std::uint64_t seed = 42;
  double beta = 0.1;
  double drop_prob = 0.1;
};

PairSet replace_positives_with_empty_prompt_samples(const PairSet& pairs,
                                                    const ModelParams& base,
                                                    std::uint64_t seed) {
  PairSet out = pairs;
  const Prompt empty = out.world.empty_prompt();
  for (std::size_t i = 0; i < out.pairs.size(); ++i)
    out.pairs[i].positive = sample(base, empty, out.world.vocab,
                                   GenerationConfig{1.0, mix_seed(seed ^ kWoDataSalt, i)});
  return out;
}

int cmd_ablate(const AblateOpts& o) {
  EraseInputs in = load_erase_inputs(o.pairs_run);
  const World& world = in.pairs.world;
  const CondToken target = in.pairs.pairs.front().target_concept;
  const ErasePreset preset = preset_by_name(o.preset);

  const PairSet wo_data_pairs =
      replace_positives_with_empty_prompt_samples(in.pairs, in.base.params, o.seed);

  struct Row {
    std::string label;
    Method method;
    const PairSet* data;
  };
  const std::vector<Row> rows = {
      {"ft", Method::ft, &in.pairs},
      {"dpo_vanilla", Method::dpo_vanilla, &in.pairs},
      {"dpo_drop", Method::dpo_drop, &in.pairs},
      {"vce", Method::vce, &in.pairs},
      {"wo_data", Method::vce, &wo_data_pairs},
  };

  ensure_dir(o.out);
  nlohmann::json jrows = nlohmann::json::array();
  std::FILE* csv = std::fopen((fs::path(o.out) / "ablation.csv").string().c_str(), "wb");
  if (!csv) throw std::runtime_error("ablate: cannot write ablation.csv");
  std::fprintf(csv, "method,erase_score,preserve_score,decouple_score\n");
  for (const auto& row : rows) {
    TrainConfig cfg;
    cfg.learning_rate = preset.learning_rate;
    cfg.iterations = preset.iterations;
    cfg.seed = o.seed;
    cfg.method = row.method;
    const EraseResult result = erase(in.base.params, *row.data, cfg, DpoConfig{o.beta, o.drop_prob});
    const Scores s = score_erasure(result.params, world, target, 1, o.seed, ScoreMode::exact);
    std::fprintf(csv, "%s,%.17g,%.17g,%.17g\n", row.label.c_str(), s.E, s.U, s.D);
    jrows.push_back({{"method", row.label},
                     {"erase_score", s.E},
                     {"preserve_score", s.U},
                     {"decouple_score", s.D},
                     {"diverged", result.curve.diverged}});
    std::printf("ablate: %-12s E=%.4f U=%.4f D=%.4f%s\n", row.label.c_str(), s.E, s.U, s.D,
                result.curve.diverged ? " (diverged)" : "");
  }
  std::fclose(csv);

  nlohmann::json jtable;
  jtable["target"] = target;
  jtable["preset"] = preset.name;
  jtable["rows"] = jrows;
  std::ofstream jout(fs::path(o.out) / "ablation.json", std::ios::binary);
  jout << jtable.dump(2) << "\n";

  RunManifest m;
  m.stage = "ablate";
  m.seed = o.seed;
  m.config["preset"] = preset.name;
  m.config["beta"] = o.beta;
  m.config["drop_prob"] = o.drop_prob;
  m.config["target"] = target;
  m.config["score_mode"] = "exact";
  m.inputs["build_pairs"] = o.pairs_run;
  m.artifacts["table"] = "ablation.csv";
  m.artifacts["report"] = "ablation.json";
  save_manifest(m, o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"concept-erasure lab for token-grid autoregressive models"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  WorldOpts wo;
  auto* world_cmd = app.add_subcommand("world", "validate and freeze a world definition");
  world_cmd->add_option("--config", wo.config, "world config (JSON)")->required();
  world_cmd->add_option("--out", wo.out, "output run directory")->required();

  PretrainOpts po;
  auto* pre_cmd = app.add_subcommand("pretrain", "train the base model on rendered data");
  pre_cmd->add_option("--world", po.world_run, "world run directory")->required();
  pre_cmd->add_option("--out", po.out, "output run directory")->required();
  pre_cmd->add_option("--seed", po.seed, "run seed");
  pre_cmd->add_option("--iterations", po.iterations, "Adam iterations");
  pre_cmd->add_option("--lr", po.lr, "learning rate");
  pre_cmd->add_option("--batch-size", po.batch_size, "minibatch size");
  pre_cmd->add_option("--examples", po.examples, "rendered training examples");

  BuildPairsOpts bo;
  auto* pairs_cmd = app.add_subcommand("build-pairs", "construct preference pairs");
  pairs_cmd->add_option("--base", bo.base_run, "pretrain run directory")->required();
  pairs_cmd->add_option("--target", bo.target, "concept id to erase")->required();
  pairs_cmd->add_option("--count", bo.count, "number of pairs");
  pairs_cmd->add_option("--seed", bo.seed, "run seed");
  pairs_cmd->add_option("--out", bo.out, "output run directory")->required();

  EraseOpts eo;
  auto* erase_cmd = app.add_subcommand("erase", "finetune the base model to erase a concept");
  erase_cmd->add_option("--pairs", eo.pairs_run, "build-pairs run directory")->required();
  erase_cmd->add_option("--method", eo.method, "vce | dpo_vanilla | dpo_drop | ft");
  erase_cmd->add_option("--preset", eo.preset, "style | explicit | object");
  erase_cmd->add_option("--seed", eo.seed, "run seed");
  erase_cmd->add_option("--beta", eo.beta, "preference temperature");
  erase_cmd->add_option("--drop-prob", eo.drop_prob, "token drop probability");
  erase_cmd->add_option("--batch-size", eo.batch_size, "minibatch size");
  double eo_lr = 0.0;
  int eo_iters = 0;
  erase_cmd->add_option("--lr", eo_lr, "override preset learning rate");
  erase_cmd->add_option("--iterations", eo_iters, "override preset iteration count");
  erase_cmd->add_option("--out", eo.out, "output run directory")->required();

  EvalOpts vo;
  CondToken vo_target = -1;
  auto* eval_cmd = app.add_subcommand("eval", "score a model (erase/preserve/decouple)");
  eval_cmd->add_option("--model", vo.model_run, "pretrain or erase run directory")->required();
  eval_cmd->add_option("--target", vo_target, "target concept id");
  eval_cmd->add_flag("--exact", vo.exact, "closed-form expectations instead of sampling");
  eval_cmd->add_option("--samples", vo.samples, "images per prompt in sampled mode");
  eval_cmd->add_option("--threshold", vo.threshold, "occurrence threshold");
  eval_cmd->add_option("--seed", vo.seed, "run seed");
  eval_cmd->add_option("--removal-models", vo.removal_runs,
                       "erase runs (one per class) for the removal accuracy table");
  eval_cmd->add_option("--removal-per-class", vo.removal_per_class,
                       "images per class for the accuracy table");
  eval_cmd->add_option("--out", vo.out, "output run directory")->required();

  CurvesOpts co;
  auto* curves_cmd =
      app.add_subcommand("curves", "record vanilla vs token-level-average loss curves");
  curves_cmd->add_option("--pairs", co.pairs_run, "build-pairs run directory")->required();
  curves_cmd->add_option("--preset", co.preset, "style | explicit | object");
  curves_cmd->add_option("--seed", co.seed, "run seed");
  curves_cmd->add_option("--beta", co.beta, "preference temperature");
  curves_cmd->add_option("--drop-prob", co.drop_prob, "token drop probability");
  curves_cmd->add_option("--out", co.out, "output run directory")->required();

  AblateOpts ao;
  auto* ablate_cmd = app.add_subcommand("ablate", "method ablation table (E/U/D per method)");
  ablate_cmd->add_option("--pairs", ao.pairs_run, "build-pairs run directory")->required();
  ablate_cmd->add_option("--preset", ao.preset, "style | explicit | object");
  ablate_cmd->add_option("--seed", ao.seed, "run seed");
  ablate_cmd->add_option("--beta", ao.beta, "preference temperature");
  ablate_cmd->add_option("--drop-prob", ao.drop_prob, "token drop probability");
  ablate_cmd->add_option("--out", ao.out, "output run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*world_cmd) return cmd_world(wo);
    if (*pre_cmd) return cmd_pretrain(po);
    if (*pairs_cmd) return cmd_build_pairs(bo);
    if (*erase_cmd) {
      if (erase_cmd->count("--lr") > 0) eo.lr_override = eo_lr;
      if (erase_cmd->count("--iterations") > 0) eo.iterations_override = eo_iters;
      return cmd_erase(eo);
    }
    if (*eval_cmd) {
      if (eval_cmd->count("--target") > 0) vo.target = vo_target;
      return cmd_eval(vo);
    }
    if (*curves_cmd) return cmd_curves(co);
    if (*ablate_cmd) return cmd_ablate(ao);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence event: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
