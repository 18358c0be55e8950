#include "vhm/data.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace vhm {

const char* to_string(Task task) {
  switch (task) {
    case Task::kMt:
      return "mt";
    case Task::kMs:
      return "ms";
    case Task::kCls:
      break;
  }
  return "cls";
}

Task parse_task(const std::string& name) {
  if (name == "mt") return Task::kMt;
  if (name == "ms") return Task::kMs;
  if (name == "cls") return Task::kCls;
  throw DataError("unknown task \"" + name + "\" (expected mt, ms or cls)");
}

TokenId decoder_start(Task task) {
  return task == Task::kMs ? Vocabulary::kBosSource : Vocabulary::kBosTarget;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos:src>", "<bos:tgt>", "<eos>", "<unk>"}) add(t);
}

Vocabulary Vocabulary::bilingual(Index block_size) {
  if (block_size <= 0) throw ConfigError("vocabulary block size must be positive");
  Vocabulary v;
  for (Index i = 1; i <= block_size; ++i) v.add("s" + std::to_string(i));
  for (Index i = 1; i <= block_size; ++i) v.add("t" + std::to_string(i));
  v.detect_blocks();
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  if (tokens.size() < std::size_t(kReserved)) {
    throw DataError("vocabulary lists fewer than the reserved tokens");
  }
  for (std::size_t i = 0; i < std::size_t(kReserved); ++i) {
    if (tokens[i] != v.tokens_[i]) {
      throw DataError("vocabulary line " + std::to_string(i + 1) + ": expected " +
                      v.tokens_[i] + ", found " + tokens[i]);
    }
  }
  for (std::size_t i = std::size_t(kReserved); i < tokens.size(); ++i) {
    if (v.find(tokens[i])) throw DataError("duplicate vocabulary token " + tokens[i]);
    v.add(tokens[i]);
  }
  v.detect_blocks();
  return v;
}

void Vocabulary::detect_blocks() {
  block_size_ = 0;
  const Index content = size() - kReserved;
  if (content <= 0 || content % 2 != 0) return;
  const Index half = content / 2;
  for (Index i = 1; i <= half; ++i) {
    if (tokens_[std::size_t(kReserved + i - 1)] != "s" + std::to_string(i) ||
        tokens_[std::size_t(kReserved + half + i - 1)] != "t" + std::to_string(i)) {
      return;
    }
  }
  block_size_ = half;
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto existing = find(token)) return *existing;
  const TokenId id = TokenId(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(const std::string& token) const {
  return find(token).value_or(kUnk);
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[std::size_t(id)];
}

TokenId Vocabulary::source_token(Index i) const {
  if (i < 1 || i > block_size_) {
    throw VocabularyError("source block index " + std::to_string(i) + " out of range");
  }
  return TokenId(kReserved + i - 1);
}

TokenId Vocabulary::target_token(Index i) const {
  if (i < 1 || i > block_size_) {
    throw VocabularyError("target block index " + std::to_string(i) + " out of range");
  }
  return TokenId(kReserved + block_size_ + i - 1);
}

bool Vocabulary::is_source(TokenId id) const {
  return id >= kReserved && id < kReserved + block_size_;
}

bool Vocabulary::is_target(TokenId id) const {
  return id >= kReserved + block_size_ && id < kReserved + 2 * block_size_;
}

Index Vocabulary::block_index(TokenId id) const {
  if (is_source(id)) return id - kReserved + 1;
  if (is_target(id)) return id - kReserved - block_size_ + 1;
  throw VocabularyError("token id " + std::to_string(id) + " is not a content token");
}

TokenSeq Vocabulary::encode(const std::string& text, VocabPolicy policy) {
  std::istringstream in(text);
  TokenSeq out;
  for (std::string tok; in >> tok;) {
    out.push_back(policy == VocabPolicy::kExtend ? add(tok) : id(tok));
  }
  return out;
}

TokenSeq Vocabulary::encode(const std::string& text) const {
  std::istringstream in(text);
  TokenSeq out;
  for (std::string tok; in >> tok;) out.push_back(id(tok));
  return out;
}

std::string Vocabulary::decode(const TokenSeq& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing vocabulary file " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary file " + path);
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(tokens);
}

// ---------------------------------------------------------------------------
// Oracles

TokenSeq translate_oracle(const Vocabulary& vocab, const TokenSeq& source) {
  TokenSeq out;
  out.reserve(source.size());
  for (TokenId id : source) {
    if (!vocab.is_source(id)) {
      throw DataError("translate_oracle: token " + vocab.token(id) +
                      " is not in the source block");
    }
    out.push_back(vocab.target_token(vocab.block_index(id)));
  }
  return out;
}

TokenSeq inverse_translate(const Vocabulary& vocab, const TokenSeq& target) {
  TokenSeq out;
  out.reserve(target.size());
  for (TokenId id : target) {
    if (!vocab.is_target(id)) {
      throw DataError("inverse_translate: token " + vocab.token(id) +
                      " is not in the target block");
    }
    out.push_back(vocab.source_token(vocab.block_index(id)));
  }
  return out;
}

TokenSeq summarize_oracle(const Vocabulary& vocab, const DocumentLayout& layout,
                          const TokenSeq& document) {
  if (Index(document.size()) != layout.length()) {
    throw DataError("summarize_oracle: document of length " +
                    std::to_string(document.size()) + ", expected " +
                    std::to_string(layout.length()));
  }
  TokenSeq keys;
  const Index stride = 1 + layout.noise;
  for (Index i = 0; i < Index(document.size()); ++i) {
    const TokenId id = document[std::size_t(i)];
    if (!vocab.is_source(id)) {
      throw DataError("summarize_oracle: position " + std::to_string(i) +
                      " holds a non-source token");
    }
    const bool salient = vocab.block_index(id) <= layout.salient;
    if (i % stride == 0) {
      if (!salient) {
        throw DataError("summarize_oracle: sentence start " + std::to_string(i) +
                        " is not a salient key");
      }
      keys.push_back(id);
    } else if (salient) {
      throw DataError("summarize_oracle: salient token at noise position " +
                      std::to_string(i));
    }
  }
  return keys;
}

TokenSeq oracle_cls(const Vocabulary& vocab, const DocumentLayout& layout,
                    const TokenSeq& document) {
  return translate_oracle(vocab, summarize_oracle(vocab, layout, document));
}

TokenSeq random_document(const Vocabulary& vocab, const DocumentLayout& layout,
                         Rng& rng) {
  std::uniform_int_distribution<Index> key(1, layout.salient);
  std::uniform_int_distribution<Index> noise(layout.salient + 1, vocab.block_size());
  TokenSeq doc;
  doc.reserve(std::size_t(layout.length()));
  for (Index s = 0; s < layout.sentences; ++s) {
    doc.push_back(vocab.source_token(key(rng)));
    for (Index j = 0; j < layout.noise; ++j) doc.push_back(vocab.source_token(noise(rng)));
  }
  return doc;
}

void SyntheticConfig::validate() const {
  if (vocab_size <= 0 || layout.sentences <= 0 || layout.noise < 0 ||
      n_mt <= 0 || n_ms <= 0 || n_cls <= 0 || n_valid <= 0 || n_test <= 0) {
    throw ConfigError("data sizes must be positive");
  }
  if (vocab_size < layout.sentences + layout.noise) {
    throw ConfigError("data.vocab_size must be >= data.sentences + data.noise");
  }
  if (layout.salient < 1 || layout.salient > vocab_size ||
      (layout.noise > 0 && layout.salient >= vocab_size)) {
    throw ConfigError("data.salient must leave at least one noise token");
  }
}

SyntheticCorpus gen_corpus(const SyntheticConfig& config) {
  config.validate();
  SyntheticCorpus corpus;
  corpus.vocab = Vocabulary::bilingual(config.vocab_size);
  corpus.layout = config.layout;
  const Vocabulary& vocab = corpus.vocab;
  const DocumentLayout& layout = corpus.layout;

  Rng rng(config.seed);
  std::set<TokenSeq> used;
  auto fresh_document = [&]() {
    for (;;) {
      TokenSeq doc = random_document(vocab, layout, rng);
      if (used.insert(doc).second) return doc;
    }
  };

  std::uniform_int_distribution<Index> length(1, layout.length());
  std::uniform_int_distribution<Index> any(1, vocab.block_size());
  for (Index i = 0; i < config.n_mt; ++i) {
    TokenSeq src;
    do {
      src.assign(std::size_t(length(rng)), 0);
      for (auto& t : src) t = vocab.source_token(any(rng));
    } while (!used.insert(src).second);
    corpus.mt.push_back({Task::kMt, src, translate_oracle(vocab, src)});
  }
  for (Index i = 0; i < config.n_ms; ++i) {
    TokenSeq doc = fresh_document();
    corpus.ms.push_back({Task::kMs, doc, summarize_oracle(vocab, layout, doc)});
  }
  auto cls_split = [&](Index n, std::vector<TaskExample>& out) {
    for (Index i = 0; i < n; ++i) {
      TokenSeq doc = fresh_document();
      out.push_back({Task::kCls, doc, oracle_cls(vocab, layout, doc)});
    }
  };
  cls_split(config.n_cls, corpus.cls);
  cls_split(config.n_valid, corpus.valid);
  cls_split(config.n_test, corpus.test);
  return corpus;
}

// ---------------------------------------------------------------------------
// JSONL

std::vector<TaskExample> load_jsonl(const std::string& path, Vocabulary& vocab,
                                    VocabPolicy policy) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<TaskExample> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + " line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": not valid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
    for (const char* field : {"task", "source", "target"}) {
      if (!obj.contains(field)) {
        throw DataError(where + ": missing field \"" + field + "\"");
      }
      if (!obj[field].is_string()) {
        throw DataError(where + ": field \"" + field + "\" must be a string");
      }
    }
    TaskExample ex;
    try {
      ex.task = parse_task(obj["task"].get<std::string>());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    ex.source = vocab.encode(obj["source"].get<std::string>(), policy);
    ex.target = vocab.encode(obj["target"].get<std::string>(), policy);
    if (ex.source.empty() || ex.target.empty()) {
      throw DataError(where + ": empty source or target");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void save_jsonl(const std::string& path, const std::vector<TaskExample>& examples,
                const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& ex : examples) {
    nlohmann::json obj;
    obj["task"] = to_string(ex.task);
    obj["source"] = vocab.decode(ex.source);
    obj["target"] = vocab.decode(ex.target);
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace vhm

namespace vhm {

namespace {

const char* const kSplits[] = {"mt", "ms", "cls", "valid", "test"};

std::string split_path(const std::string& dir, const char* split) {
  return (std::filesystem::path(dir) / (std::string(split) + ".jsonl")).string();
}

}  // namespace

void save_corpus(const std::string& dir, const SyntheticCorpus& corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir + ": " + ec.message());
  corpus.vocab.save((std::filesystem::path(dir) / "vocab.txt").string());
  const std::vector<TaskExample>* parts[] = {&corpus.mt, &corpus.ms, &corpus.cls,
                                             &corpus.valid, &corpus.test};
  for (int i = 0; i < 5; ++i) save_jsonl(split_path(dir, kSplits[i]), *parts[i], corpus.vocab);
}

SyntheticCorpus load_corpus(const std::string& dir, const DocumentLayout& layout) {
  SyntheticCorpus corpus;
  corpus.vocab = Vocabulary::load((std::filesystem::path(dir) / "vocab.txt").string());
  corpus.layout = layout;
  std::vector<TaskExample>* parts[] = {&corpus.mt, &corpus.ms, &corpus.cls,
                                       &corpus.valid, &corpus.test};
  for (int i = 0; i < 5; ++i) {
    *parts[i] = load_jsonl(split_path(dir, kSplits[i]), corpus.vocab, VocabPolicy::kFixed);
  }
  return corpus;
}

}  // namespace vhm
