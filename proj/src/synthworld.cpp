#include "tokerase/synthworld.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "tokerase/rng.hpp"

namespace tokerase {

namespace {

std::vector<Token> non_signature_tokens(const World& world) {
  std::vector<bool> is_sig(static_cast<std::size_t>(world.vocab.image_vocab_size), false);
  for (const auto& c : world.concepts)
    for (Token t : c.signature_tokens) is_sig[static_cast<std::size_t>(t)] = true;
  std::vector<Token> filler;
  for (int t = 0; t < world.vocab.image_vocab_size; ++t)
    if (!is_sig[static_cast<std::size_t>(t)]) filler.push_back(t);
  return filler;
}

}  // namespace

GridImage render_oracle(const Prompt& prompt, const World& world, std::uint64_t seed) {
  world.validate_prompt(prompt);
  std::vector<bool> present(world.concepts.size(), false);
  for (CondToken t : prompt.tokens) {
    if (t == world.vocab.empty_token) continue;
    bool known = false;
    for (std::size_t k = 0; k < world.concepts.size(); ++k) {
      if (world.concepts[k].concept_id == t) {
        present[k] = true;
        known = true;
        break;
      }
    }
    if (!known) throw std::invalid_argument("render_oracle: unknown concept");
  }

  const std::vector<Token> filler = non_signature_tokens(world);
  GridImage img;
  img.tokens.reserve(static_cast<std::size_t>(world.vocab.seq_len));
  for (int pos = 0; pos < world.vocab.seq_len; ++pos) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(pos)));
    Token picked = -1;
    // present concepts first, then absent, both in ascending concept id
    for (int phase = 0; phase < 2 && picked < 0; ++phase) {
      for (std::size_t k = 0; k < world.concepts.size(); ++k) {
        if (present[k] != (phase == 0)) continue;
        const auto& c = world.concepts[k];
        const double rate = present[k] ? c.boosted_rate : c.base_rate;
        if (rng.next_double() < rate) {
          const auto& sig = c.signature_tokens;
          picked = sig[rng.next_below(static_cast<std::uint32_t>(sig.size()))];
          break;
        }
      }
    }
    if (picked < 0)
      picked = filler[rng.next_below(static_cast<std::uint32_t>(filler.size()))];
    img.tokens.push_back(picked);
  }
  return img;
}

Prompt refine_prompt(const Prompt& prompt, CondToken target_concept, const World& world) {
  Prompt out = prompt;
  for (CondToken& t : out.tokens)
    if (t == target_concept) t = world.vocab.empty_token;
  return out;
}

double concept_frequency(const GridImage& image, const ConceptSpec& spec) {
  if (image.tokens.empty()) return 0.0;
  std::size_t count = 0;
  for (Token t : image.tokens)
    count += std::binary_search(spec.signature_tokens.begin(),
                                spec.signature_tokens.end(), t)
                 ? 1
                 : 0;
  return static_cast<double>(count) / static_cast<double>(image.tokens.size());
}

Prompt sample_unsafe_prompt(const World& world, CondToken target, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CondToken> others;
  for (const auto& c : world.concepts)
    if (c.concept_id != target) others.push_back(c.concept_id);
  if (others.empty())
    throw std::invalid_argument("sample_unsafe_prompt: world has no non-target concepts");

  std::vector<CondToken> slots;
  slots.push_back(target);
  slots.push_back(others[rng.next_below(static_cast<std::uint32_t>(others.size()))]);
  while (static_cast<int>(slots.size()) < world.vocab.prompt_len) {
    const std::uint32_t pick = rng.next_below(static_cast<std::uint32_t>(others.size()) + 1);
    slots.push_back(pick == 0 ? world.vocab.empty_token : others[pick - 1]);
  }
  // Fisher-Yates over the slot order
  for (std::size_t i = slots.size() - 1; i > 0; --i) {
    const std::size_t j = rng.next_below(static_cast<std::uint32_t>(i + 1));
    std::swap(slots[i], slots[j]);
  }
  return Prompt{std::move(slots)};
}

PairSet build_pairs(const ModelParams& base_model, const World& world,
                    CondToken target_concept, int n, std::uint64_t seed) {
  if (!world.is_concept(target_concept))
    throw std::invalid_argument("build_pairs: unknown concept");
  if (n < 1) throw std::invalid_argument("build_pairs: n must be >= 1");

  PairSet set;
  set.world = world;
  set.world_seed = seed;
  set.pairs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed_i = mix_seed(seed, static_cast<std::uint64_t>(i));
    PreferencePair pair;
    pair.target_concept = target_concept;
    pair.prompt = sample_unsafe_prompt(world, target_concept, mix_seed(seed_i, 0));
    pair.negative = sample(base_model, pair.prompt, world.vocab,
                           GenerationConfig{1.0, mix_seed(seed_i, 1)});
    pair.positive = render_oracle(refine_prompt(pair.prompt, target_concept, world), world,
                                  mix_seed(seed_i, 2));
    set.pairs.push_back(std::move(pair));
  }
  set.manifest[target_concept] = n;
  return set;
}

namespace {

nlohmann::json tokens_json(const std::vector<std::int32_t>& v) {
  return nlohmann::json(v);
}

std::vector<std::int32_t> tokens_from(const nlohmann::json& j, const char* field,
                                      int line_no, int upper) {
  if (!j.contains(field))
    throw std::runtime_error("pair file line " + std::to_string(line_no) +
                             ": missing field '" + field + "'");
  std::vector<std::int32_t> out;
  for (const auto& e : j.at(field)) {
    const std::int32_t t = e.get<std::int32_t>();
    if (t < 0 || t >= upper)
      throw std::runtime_error("pair file line " + std::to_string(line_no) + ": field '" +
                               field + "' token " + std::to_string(t) + " out of range");
    out.push_back(t);
  }
  return out;
}

}  // namespace

void save_pairs(const PairSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pair file: cannot write " + path.string());
  nlohmann::json header;
  header["world"] = nlohmann::json::parse(world_to_json_text(set.world));
  header["world_seed"] = set.world_seed;
  nlohmann::json manifest;
  for (const auto& [concept_id, count] : set.manifest)
    manifest[std::to_string(concept_id)] = count;
  header["manifest"] = manifest;
  out << header.dump() << "\n";
  for (const auto& p : set.pairs) {
    nlohmann::json j;
    j["prompt"] = tokens_json(p.prompt.tokens);
    j["positive"] = tokens_json(p.positive.tokens);
    j["negative"] = tokens_json(p.negative.tokens);
    j["target"] = p.target_concept;
    out << j.dump() << "\n";
  }
}

PairSet load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("pair file: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw std::runtime_error("pair file: empty pair set");

  PairSet set;
  try {
    nlohmann::json header = nlohmann::json::parse(line);
    set.world = world_from_json_text(header.at("world").dump());
    set.world_seed = header.at("world_seed").get<std::uint64_t>();
    for (const auto& [key, value] : header.at("manifest").items())
      set.manifest[static_cast<CondToken>(std::stoi(key))] = value.get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("pair file line 1: ") + e.what());
  }

  const int V = set.world.vocab.image_vocab_size;
  const int C = set.world.vocab.cond_vocab_size;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("pair file line " + std::to_string(line_no) + ": " + e.what());
    }
    PreferencePair p;
    p.prompt.tokens = tokens_from(j, "prompt", line_no, C);
    p.positive.tokens = tokens_from(j, "positive", line_no, V);
    p.negative.tokens = tokens_from(j, "negative", line_no, V);
    if (!j.contains("target"))
      throw std::runtime_error("pair file line " + std::to_string(line_no) +
                               ": missing field 'target'");
    p.target_concept = j.at("target").get<CondToken>();
    set.pairs.push_back(std::move(p));
  }
  if (set.pairs.empty()) throw std::runtime_error("pair file: empty pair set");
  return set;
}

std::vector<TrainExample> build_pretrain_dataset(const World& world, int n,
                                                 std::uint64_t seed) {
  const auto& concepts = world.concepts;
  std::vector<TrainExample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed_i = mix_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(mix_seed(seed_i, 0));
    Prompt prompt = world.empty_prompt();
    const double kind = rng.next_double();
    if (kind < 0.4) {  // one concept
      prompt.tokens[0] =
          concepts[rng.next_below(static_cast<std::uint32_t>(concepts.size()))].concept_id;
    } else if (kind < 0.8 && concepts.size() >= 2 && world.vocab.prompt_len >= 2) {
      // two distinct concepts
      const std::uint32_t a = rng.next_below(static_cast<std::uint32_t>(concepts.size()));
      std::uint32_t b = rng.next_below(static_cast<std::uint32_t>(concepts.size() - 1));
      if (b >= a) ++b;
      prompt.tokens[0] = concepts[a].concept_id;
      prompt.tokens[1] = concepts[b].concept_id;
    }  // else: all-empty prompt
    for (std::size_t i2 = prompt.tokens.size() - 1; i2 > 0; --i2) {
      const std::size_t j = rng.next_below(static_cast<std::uint32_t>(i2 + 1));
      std::swap(prompt.tokens[i2], prompt.tokens[j]);
    }
    GridImage img = render_oracle(prompt, world, mix_seed(seed_i, 1));
    out.push_back(TrainExample{std::move(prompt), std::move(img)});
  }
  return out;
}

}  // namespace tokerase
