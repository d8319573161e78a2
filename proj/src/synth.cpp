#include "gere/synth.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace gere {

using json = nlohmann::json;

uint64_t hash_sequences(const std::vector<std::vector<int64_t>>& seqs) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : seqs) {
    const uint64_t n = s.size();
    h = fnv1a(&n, sizeof(n), h);
    h = fnv1a(s.data(), s.size() * sizeof(int64_t), h);
  }
  return h;
}

uint64_t GeneralCorpus::content_hash() const {
  uint64_t h = hash_sequences(pretrain);
  h = fnv1a(&h, sizeof(h), hash_sequences(replay_pool));
  h = fnv1a(&h, sizeof(h), hash_sequences(heldout));
  return h;
}

std::vector<int64_t> MarkovSource::successors(int64_t a, int64_t b) const {
  std::vector<int64_t> out(4);
  for (int i = 0; i < 4; ++i) {
    uint64_t h = Rng::mix(seed_ ^ (static_cast<uint64_t>(a) * 96 + static_cast<uint64_t>(b)) ^
                          (0x9e3779b97f4a7c15ULL * (i + 1)));
    out[i] = vocab::kContentBase + static_cast<int64_t>(h % vocab::kContentCount);
  }
  return out;
}

namespace {
// fixed successor probabilities; index 0 is the mode
constexpr double kSuccProbs[4] = {0.45, 0.25, 0.20, 0.10};
}  // namespace

int64_t MarkovSource::argmax_next(int64_t a, int64_t b) const { return successors(a, b)[0]; }

std::vector<int64_t> MarkovSource::sample_sequence(Rng& rng, int64_t len) const {
  std::vector<int64_t> s;
  s.reserve(len);
  s.push_back(vocab::kBos);
  int64_t a = vocab::kContentBase + rng.below(vocab::kContentCount);
  int64_t b = vocab::kContentBase + rng.below(vocab::kContentCount);
  s.push_back(a);
  if (len > 2) s.push_back(b);
  while (static_cast<int64_t>(s.size()) < len) {
    auto cand = successors(a - vocab::kContentBase, b - vocab::kContentBase);
    double u = rng.uniform();
    int64_t next = cand[3];
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
      acc += kSuccProbs[i];
      if (u < acc) {
        next = cand[i];
        break;
      }
    }
    s.push_back(next);
    a = b;
    b = next;
  }
  return s;
}

GeneralCorpus gen_general_corpus(uint64_t seed, const CorpusSizes& sizes) {
  if (sizes.pretrain < 1 || sizes.replay_pool < 1 || sizes.heldout < 1 || sizes.seq_len < 3)
    throw std::invalid_argument("gen_general_corpus: bad sizes");
  GeneralCorpus c;
  c.seed = seed;
  MarkovSource src(seed);
  Rng rng(seed);
  // one stream, partitioned by index: splits disjoint by construction
  for (int64_t i = 0; i < sizes.pretrain; ++i)
    c.pretrain.push_back(src.sample_sequence(rng, sizes.seq_len));
  for (int64_t i = 0; i < sizes.replay_pool; ++i)
    c.replay_pool.push_back(src.sample_sequence(rng, sizes.seq_len));
  for (int64_t i = 0; i < sizes.heldout; ++i)
    c.heldout.push_back(src.sample_sequence(rng, sizes.seq_len));
  return c;
}

namespace {

bool rule_holds(const TaskSpec& spec, const std::vector<int64_t>& input) {
  switch (spec.rule) {
    case TaskRule::MarkerPresence:
      return std::find(input.begin(), input.end(), spec.x_token) != input.end();
    case TaskRule::TokenMajority: {
      const auto cx = std::count(input.begin(), input.end(), spec.x_token);
      const auto cy = std::count(input.begin(), input.end(), spec.y_token);
      return cx > cy;
    }
    case TaskRule::ParityOfCount:
      return std::count(input.begin(), input.end(), spec.x_token) % 2 == 1;
    case TaskRule::PairOrder: {
      const auto px = std::find(input.begin(), input.end(), spec.x_token);
      const auto py = std::find(input.begin(), input.end(), spec.y_token);
      if (px == input.end() || py == input.end()) return false;
      return px < py;
    }
  }
  return false;
}

// Draw an input whose rule outcome equals want. Occurrence counts of the
// special tokens are kept in {0,1,2} so every rule stays learnable by a
// shallow model (and linearly separable on token counts).
std::vector<int64_t> gen_input(Rng& rng, const TaskSpec& spec, bool want) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<int64_t> input(spec.input_len);
    for (auto& t : input) {
      // filler avoids the special pair
      do {
        t = vocab::kContentBase + rng.below(vocab::kContentCount);
      } while (t == spec.x_token || t == spec.y_token);
    }
    auto place = [&](int64_t tok, int count) {
      for (int c = 0; c < count; ++c) {
        int64_t p = rng.below(spec.input_len);
        while (input[p] == spec.x_token || input[p] == spec.y_token)
          p = (p + 1) % spec.input_len;
        input[p] = tok;
      }
    };
    switch (spec.rule) {
      case TaskRule::MarkerPresence:
        if (want) place(spec.x_token, 1 + static_cast<int>(rng.below(2)));
        break;
      case TaskRule::TokenMajority:
        place(spec.x_token, want ? 2 : static_cast<int>(rng.below(2)));
        place(spec.y_token, want ? static_cast<int>(rng.below(2)) : 2);
        break;
      case TaskRule::ParityOfCount:
        place(spec.x_token, want ? 1 : 2);
        break;
      case TaskRule::PairOrder:
        place(spec.x_token, 1);
        place(spec.y_token, 1);
        break;
    }
    if (rule_holds(spec, input) == want) return input;
  }
  throw std::runtime_error("gen_input: could not satisfy rule");
}

TaskSample make_sample(const TaskSpec& spec, const std::vector<int64_t>& input, bool label) {
  TaskSample s;
  s.tokens.push_back(vocab::kBos);
  s.tokens.push_back(vocab::kTaskMarkerBase + spec.task_id);
  s.tokens.push_back(vocab::kSep);
  s.tokens.insert(s.tokens.end(), input.begin(), input.end());
  s.tokens.push_back(vocab::kAns);
  s.tokens.push_back(label ? spec.label1 : spec.label0);
  s.answer_pos = static_cast<int64_t>(s.tokens.size()) - 1;
  return s;
}

uint64_t sample_key(const TaskSample& s) {
  return fnv1a(s.tokens.data(), s.tokens.size() * sizeof(int64_t));
}

}  // namespace

std::vector<TaskData> gen_tasks(uint64_t seed, int64_t k, int64_t train_size,
                                int64_t test_size) {
  if (k < 1) throw std::invalid_argument("gen_tasks: k must be >= 1");
  if (k > 12) throw std::invalid_argument("gen_tasks: at most 12 tasks (marker range)");
  std::vector<TaskData> out;
  Rng top(seed);
  for (int64_t t = 0; t < k; ++t) {
    TaskSpec spec;
    spec.task_id = t;
    spec.rule = static_cast<TaskRule>(t % 4);
    spec.train_size = train_size;
    spec.test_size = test_size;
    spec.x_token = vocab::kContentBase + top.below(vocab::kContentCount);
    do {
      spec.y_token = vocab::kContentBase + top.below(vocab::kContentCount);
    } while (spec.y_token == spec.x_token);
    spec.label0 = vocab::kLabelBase + 2 * (t % 8);
    spec.label1 = spec.label0 + 1;

    TaskData td;
    td.spec = spec;
    Rng rng = top.fork(0x7a5f + t);
    std::set<uint64_t> seen;
    auto fill = [&](std::vector<TaskSample>& dst, int64_t n) {
      for (int64_t i = 0; i < n; ++i) {
        const bool want = i % 2 == 1;  // exactly balanced labels
        for (;;) {
          auto s = make_sample(spec, gen_input(rng, spec, want), want);
          if (seen.insert(sample_key(s)).second) {
            dst.push_back(std::move(s));
            break;
          }
        }
      }
    };
    fill(td.train, train_size);
    fill(td.test, test_size);  // dedup against train keeps splits disjoint
    out.push_back(std::move(td));
  }
  return out;
}

ReplayPool load_jsonl_replay(const std::string& path, int64_t max_len) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_jsonl_replay: cannot open " + path);
  ReplayPool pool;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.contains("text") || !doc["text"].is_string())
      throw std::runtime_error("load_jsonl_replay: malformed line " + std::to_string(lineno));
    const std::string text = doc["text"];
    if (text.empty()) continue;  // skipped, pool shrinks
    ReplaySample s;
    s.tokens.push_back(vocab::kBos);
    for (unsigned char b : text) {
      if (static_cast<int64_t>(s.tokens.size()) >= max_len) break;
      s.tokens.push_back(vocab::kContentBase + b % vocab::kContentCount);
    }
    pool.samples.push_back(std::move(s));
  }
  return pool;
}

void save_token_corpus(const std::vector<std::vector<int64_t>>& seqs, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_token_corpus: cannot open " + path);
  for (const auto& s : seqs) f << json{{"tokens", s}}.dump() << "\n";
}

std::vector<std::vector<int64_t>> load_token_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_token_corpus: cannot open " + path);
  std::vector<std::vector<int64_t>> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.contains("tokens"))
      throw std::runtime_error("load_token_corpus: malformed line " + std::to_string(lineno));
    out.push_back(doc["tokens"].get<std::vector<int64_t>>());
  }
  return out;
}

void save_task_data(const TaskData& td, const std::string& train_path,
                    const std::string& test_path) {
  auto dump = [](const std::vector<TaskSample>& v, const std::string& p) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("save_task_data: cannot open " + p);
    for (const auto& s : v)
      f << json{{"tokens", s.tokens}, {"answer_pos", s.answer_pos}}.dump() << "\n";
  };
  dump(td.train, train_path);
  dump(td.test, test_path);
}

TaskData load_task_data(const TaskSpec& spec, const std::string& train_path,
                        const std::string& test_path) {
  auto slurp = [](const std::string& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("load_task_data: cannot open " + p);
    std::vector<TaskSample> out;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json doc = json::parse(line);
      TaskSample s;
      s.tokens = doc.at("tokens").get<std::vector<int64_t>>();
      s.answer_pos = doc.at("answer_pos");
      out.push_back(std::move(s));
    }
    return out;
  };
  TaskData td;
  td.spec = spec;
  td.train = slurp(train_path);
  td.test = slurp(test_path);
  return td;
}

}  // namespace gere
