#pragma once

// A toy cross-lingual summarization universe with an exact oracle.
//
// Translation maps source token s_i to target token t_i. A document is k
// sentences, each one salient KEY token followed by m NOISE tokens; its
// summary is the k keys in order. Cross-lingual summarization is the
// translation of that summary.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vhm/random.hpp"
#include "vhm/transformer.hpp"

namespace vhm {

enum class Task { kMt, kMs, kCls };

const char* to_string(Task task);
Task parse_task(const std::string& name);

struct TaskExample {
  Task task = Task::kCls;
  TokenSeq source;
  TokenSeq target;

  bool operator==(const TaskExample&) const = default;
};

enum class VocabPolicy {
  kFixed,   // unknown tokens map to <unk>
  kExtend,  // unknown tokens are appended
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBosSource = 1;  // decoder start, source language
  static constexpr TokenId kBosTarget = 2;  // decoder start, target language
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kUnk = 4;
  static constexpr Index kReserved = 5;

  Vocabulary();

  // Reserved ids, then s1..sV, then t1..tV.
  static Vocabulary bilingual(Index block_size);
  // Rebuilds from an id-ordered token list (the sidecar file format).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  TokenId add(const std::string& token);
  std::optional<TokenId> find(const std::string& token) const;
  TokenId id(const std::string& token) const;  // <unk> when absent
  const std::string& token(TokenId id) const;
  Index size() const { return Index(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  Index block_size() const { return block_size_; }
  // 1-based index within the block.
  TokenId source_token(Index i) const;
  TokenId target_token(Index i) const;
  bool is_source(TokenId id) const;
  bool is_target(TokenId id) const;
  Index block_index(TokenId id) const;  // 1-based, for either block

  TokenSeq encode(const std::string& text, VocabPolicy policy);
  TokenSeq encode(const std::string& text) const;
  std::string decode(const TokenSeq& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void detect_blocks();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  Index block_size_ = 0;
};

// Decoder start symbol for a task's output language.
TokenId decoder_start(Task task);

struct DocumentLayout {
  Index sentences = 3;  // k
  Index noise = 4;      // m
  Index salient = 25;   // keys are s1..s_salient, noise the rest

  Index length() const { return sentences * (1 + noise); }
};

struct SyntheticConfig {
  Index vocab_size = 50;  // tokens per language block
  DocumentLayout layout;
  Index n_mt = 8000;
  Index n_ms = 8000;
  Index n_cls = 8000;
  Index n_valid = 100;
  Index n_test = 500;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  Vocabulary vocab;
  DocumentLayout layout;
  std::vector<TaskExample> mt, ms, cls, valid, test;
};

TokenSeq translate_oracle(const Vocabulary& vocab, const TokenSeq& source);
TokenSeq inverse_translate(const Vocabulary& vocab, const TokenSeq& target);
TokenSeq summarize_oracle(const Vocabulary& vocab, const DocumentLayout& layout,
                          const TokenSeq& document);
TokenSeq oracle_cls(const Vocabulary& vocab, const DocumentLayout& layout,
                    const TokenSeq& document);

TokenSeq random_document(const Vocabulary& vocab, const DocumentLayout& layout,
                         Rng& rng);

// Deterministic in the seed. Every source sequence across the five splits is
// distinct, so no CLS document reappears as MT or MS input.
SyntheticCorpus gen_corpus(const SyntheticConfig& config);

// One JSON object per line: {"task": "mt|ms|cls", "source": "...",
// "target": "..."} with whitespace-separated tokens.
std::vector<TaskExample> load_jsonl(const std::string& path, Vocabulary& vocab,
                                    VocabPolicy policy);
void save_jsonl(const std::string& path, const std::vector<TaskExample>& examples,
                const Vocabulary& vocab);

// A corpus directory holds vocab.txt plus mt/ms/cls/valid/test.jsonl.
void save_corpus(const std::string& dir, const SyntheticCorpus& corpus);
SyntheticCorpus load_corpus(const std::string& dir, const DocumentLayout& layout);

}  // namespace vhm
