#include "tokerase/world.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace tokerase {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

void Vocab::validate() const {
  if (image_vocab_size < 2) fail("image_vocab_size: must be >= 2");
  if (cond_vocab_size < 3) fail("cond_vocab_size: must be >= 3");
  if (seq_len < 1) fail("seq_len: must be >= 1");
  if (prompt_len < 1) fail("prompt_len: must be >= 1");
  if (empty_token < 0 || empty_token >= cond_vocab_size)
    fail("empty_token: out of range");
  if (drop_token < 0 || drop_token >= cond_vocab_size)
    fail("drop_token: out of range");
  if (empty_token == drop_token) fail("drop_token: must differ from empty_token");
}

void World::validate() const {
  vocab.validate();
  std::set<Token> seen_sig;
  std::set<CondToken> seen_ids;
  for (const auto& c : concepts) {
    const std::string tag = "ConceptSpec(concept_id=" + std::to_string(c.concept_id) + ")";
    if (c.concept_id < 0 || c.concept_id >= vocab.cond_vocab_size)
      fail(tag + ": concept_id out of range");
    if (c.concept_id == vocab.empty_token || c.concept_id == vocab.drop_token)
      fail(tag + ": concept_id collides with a reserved token");
    if (!seen_ids.insert(c.concept_id).second) fail(tag + ": duplicate concept_id");
    if (c.signature_tokens.empty()) fail(tag + ": signature_tokens must be nonempty");
    for (Token t : c.signature_tokens) {
      if (t < 0 || t >= vocab.image_vocab_size)
        fail(tag + ": signature_tokens entry out of range");
      if (!seen_sig.insert(t).second)
        fail(tag + ": signature_tokens overlap another concept");
    }
    if (c.base_rate < 0.0 || c.base_rate > 1.0) fail(tag + ": base_rate outside [0,1]");
    if (c.boosted_rate < 0.0 || c.boosted_rate > 1.0)
      fail(tag + ": boosted_rate outside [0,1]");
    if (!(c.boosted_rate > c.base_rate)) fail(tag + ": boosted_rate must exceed base_rate");
  }
  if (static_cast<int>(seen_sig.size()) >= vocab.image_vocab_size)
    fail("signature_tokens: at least one non-signature image token is required");
}

const ConceptSpec* World::find_concept(CondToken id) const {
  for (const auto& c : concepts)
    if (c.concept_id == id) return &c;
  return nullptr;
}

Prompt World::empty_prompt() const {
  return Prompt{std::vector<CondToken>(static_cast<std::size_t>(vocab.prompt_len),
                                       vocab.empty_token)};
}

void World::validate_prompt(const Prompt& p) const {
  if (static_cast<int>(p.tokens.size()) != vocab.prompt_len)
    fail("prompt: length must equal prompt_len");
  for (CondToken t : p.tokens)
    if (t < 0 || t >= vocab.cond_vocab_size) fail("prompt: token id out of range");
}

void World::validate_image(const GridImage& img) const {
  if (static_cast<int>(img.tokens.size()) != vocab.seq_len)
    fail("image: length must equal seq_len");
  for (Token t : img.tokens)
    if (t < 0 || t >= vocab.image_vocab_size) fail("image: token id out of range");
}

World World::default_world() {
  World w;
  w.vocab = Vocab{8, 6, 16, 3, 0, 1};
  w.concepts = {
      {2, {0}, 0.05, 0.8},
      {3, {1}, 0.05, 0.8},
      {4, {2}, 0.05, 0.8},
      {5, {3}, 0.05, 0.8},
  };
  w.validate();
  return w;
}

World World::micro_world() {
  World w;
  w.vocab = Vocab{4, 4, 3, 2, 0, 1};
  w.concepts = {
      {2, {0}, 0.05, 0.8},
      {3, {1}, 0.05, 0.8},
  };
  w.validate();
  return w;
}

World world_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(std::string("world config: ") + e.what());
  }
  World w;
  try {
    w.vocab.image_vocab_size = j.at("image_vocab_size").get<int>();
    w.vocab.cond_vocab_size = j.at("cond_vocab_size").get<int>();
    w.vocab.seq_len = j.at("seq_len").get<int>();
    w.vocab.prompt_len = j.at("prompt_len").get<int>();
    w.vocab.empty_token = j.at("empty_token").get<CondToken>();
    w.vocab.drop_token = j.at("drop_token").get<CondToken>();
    for (const auto& jc : j.at("concepts")) {
      ConceptSpec c;
      c.concept_id = jc.at("concept_id").get<CondToken>();
      c.signature_tokens = jc.at("signature_tokens").get<std::vector<Token>>();
      c.base_rate = jc.at("base_rate").get<double>();
      c.boosted_rate = jc.at("boosted_rate").get<double>();
      std::sort(c.signature_tokens.begin(), c.signature_tokens.end());
      c.signature_tokens.erase(
          std::unique(c.signature_tokens.begin(), c.signature_tokens.end()),
          c.signature_tokens.end());
      w.concepts.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("world config: ") + e.what());
  }
  std::sort(w.concepts.begin(), w.concepts.end(),
            [](const ConceptSpec& a, const ConceptSpec& b) {
              return a.concept_id < b.concept_id;
            });
  w.validate();
  return w;
}

World load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("world config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return world_from_json_text(ss.str());
}

std::string world_to_json_text(const World& w) {
  nlohmann::json j;
  j["image_vocab_size"] = w.vocab.image_vocab_size;
  j["cond_vocab_size"] = w.vocab.cond_vocab_size;
  j["seq_len"] = w.vocab.seq_len;
  j["prompt_len"] = w.vocab.prompt_len;
  j["empty_token"] = w.vocab.empty_token;
  j["drop_token"] = w.vocab.drop_token;
  j["concepts"] = nlohmann::json::array();
  for (const auto& c : w.concepts) {
    nlohmann::json jc;
    jc["concept_id"] = c.concept_id;
    jc["signature_tokens"] = c.signature_tokens;
    jc["base_rate"] = c.base_rate;
    jc["boosted_rate"] = c.boosted_rate;
    j["concepts"].push_back(jc);
  }
  return j.dump(2) + "\n";
}

void save_world(const World& w, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("world config: cannot write " + path.string());
  out << world_to_json_text(w);
}

}  // namespace tokerase
