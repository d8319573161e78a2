// Deterministic desk-scale corpora: an order-2 Markov "general language",
// synthetic instruction->answer classification tasks, and byte-level JSONL
// ingestion for external replay text.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gere/distill.hpp"

namespace gere {

// vocab layout (default V = 128)
namespace vocab {
constexpr int64_t kPad = 0;
constexpr int64_t kBos = 1;
constexpr int64_t kSep = 2;
constexpr int64_t kAns = 3;
constexpr int64_t kTaskMarkerBase = 4;   // 4..15, one per task
constexpr int64_t kLabelBase = 16;       // 16..31
constexpr int64_t kContentBase = 32;     // 32..127, Markov/byte alphabet
constexpr int64_t kContentCount = 96;
}  // namespace vocab

struct GeneralCorpus {
  std::vector<std::vector<int64_t>> pretrain;
  std::vector<std::vector<int64_t>> replay_pool;
  std::vector<std::vector<int64_t>> heldout;
  uint64_t seed = 0;

  uint64_t content_hash() const;
};

struct CorpusSizes {
  int64_t pretrain = 6000;
  int64_t replay_pool = 1000;  // mirrors the 1K general pool
  int64_t heldout = 500;
  int64_t seq_len = 32;
};

// Order-2 Markov source; the transition structure is a pure function of the
// seed so corpora hash identically across runs and platforms.
class MarkovSource {
 public:
  explicit MarkovSource(uint64_t seed) : seed_(seed) {}
  // the four candidate successors of state (a, b) and their fixed probs
  std::vector<int64_t> successors(int64_t a, int64_t b) const;
  int64_t argmax_next(int64_t a, int64_t b) const;
  std::vector<int64_t> sample_sequence(Rng& rng, int64_t len) const;

 private:
  uint64_t seed_;
};

GeneralCorpus gen_general_corpus(uint64_t seed, const CorpusSizes& sizes = {});

enum class TaskRule : int {
  MarkerPresence = 0,  // does the input contain token X
  TokenMajority = 1,   // more X than Y
  ParityOfCount = 2,   // odd vs even count of X (counts kept small)
  PairOrder = 3,       // first X before first Y
};

struct TaskSample {
  std::vector<int64_t> tokens;  // [BOS, marker, instr, SEP, input..., ANS, label]
  int64_t answer_pos = 0;       // index of the label token
};

struct TaskSpec {
  int64_t task_id = 0;
  TaskRule rule = TaskRule::MarkerPresence;
  int64_t x_token = 0;
  int64_t y_token = 0;
  int64_t label0 = 0;  // rule false
  int64_t label1 = 0;  // rule true
  int64_t train_size = 2000;
  int64_t test_size = 500;
  int64_t input_len = 12;
};

struct TaskData {
  TaskSpec spec;
  std::vector<TaskSample> train;
  std::vector<TaskSample> test;
};

std::vector<TaskData> gen_tasks(uint64_t seed, int64_t k, int64_t train_size = 2000,
                                int64_t test_size = 500);

// One JSON object per line with field "text"; bytes map to the content
// alphabet (byte b -> 32 + b mod 96), truncated to max_len tokens.
ReplayPool load_jsonl_replay(const std::string& path, int64_t max_len = 562);

// JSONL emit/ingest for generated data
void save_token_corpus(const std::vector<std::vector<int64_t>>& seqs, const std::string& path);
std::vector<std::vector<int64_t>> load_token_corpus(const std::string& path);
void save_task_data(const TaskData& td, const std::string& train_path,
                    const std::string& test_path);
TaskData load_task_data(const TaskSpec& spec, const std::string& train_path,
                        const std::string& test_path);

uint64_t hash_sequences(const std::vector<std::vector<int64_t>>& seqs);

}  // namespace gere
