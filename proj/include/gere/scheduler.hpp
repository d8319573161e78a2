// Batch construction: vanilla random mixing of the replay pool into task data,
// and Batch Insertion with a fixed replay count per batch and non-repetitive
// pool cycling.
#pragma once

#include <cstdint>
#include <vector>

#include "gere/rng.hpp"

namespace gere {

enum class SampleSource : uint8_t { Task, Replay };

struct BatchEntry {
  SampleSource source;
  int64_t index;
};

struct BatchPlan {
  std::vector<std::vector<BatchEntry>> batches;
  int64_t batch_size = 0;
  double replay_ratio = 0.0;
};

// max(1, round(rho * B)); BI never silently disables replay on small batches
int64_t replay_count(double rho, int64_t batch_size);

// Seeded permutation of the pool consumed sequentially; reshuffles on
// exhaustion so no index repeats within a cycle.
class ReplayCycler {
 public:
  ReplayCycler(int64_t pool_size, uint64_t seed);
  int64_t next();

 private:
  void reshuffle();
  std::vector<int64_t> order_;
  size_t pos_ = 0;
  Rng rng_;
};

// One epoch: concatenate task data with the full pool, shuffle, slice.
BatchPlan plan_vanilla_mix(int64_t task_size, int64_t pool_size, int64_t batch_size,
                           uint64_t seed);

// One epoch of Batch Insertion; the cycler carries pool state across epochs.
BatchPlan plan_bi(int64_t task_size, int64_t pool_size, int64_t batch_size, double rho,
                  ReplayCycler& cycler, uint64_t seed);

}  // namespace gere
