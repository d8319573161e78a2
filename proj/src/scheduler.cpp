#include "gere/scheduler.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gere {

int64_t replay_count(double rho, int64_t batch_size) {
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("replay_count: need 0 < rho < 1");
  if (batch_size < 1) throw std::invalid_argument("replay_count: batch size must be >= 1");
  return std::max<int64_t>(1, std::llround(rho * static_cast<double>(batch_size)));
}

ReplayCycler::ReplayCycler(int64_t pool_size, uint64_t seed) : rng_(seed) {
  if (pool_size < 1) throw std::invalid_argument("replay cycler: empty pool");
  order_.resize(pool_size);
  std::iota(order_.begin(), order_.end(), 0);
  reshuffle();
}

void ReplayCycler::reshuffle() {
  rng_.shuffle(order_);
  pos_ = 0;
}

int64_t ReplayCycler::next() {
  if (pos_ >= order_.size()) reshuffle();
  return order_[pos_++];
}

BatchPlan plan_vanilla_mix(int64_t task_size, int64_t pool_size, int64_t batch_size,
                           uint64_t seed) {
  if (task_size < 1 || pool_size < 0 || batch_size < 1)
    throw std::invalid_argument("plan_vanilla_mix: bad sizes");
  std::vector<BatchEntry> entries;
  entries.reserve(task_size + pool_size);
  for (int64_t i = 0; i < task_size; ++i) entries.push_back({SampleSource::Task, i});
  for (int64_t i = 0; i < pool_size; ++i) entries.push_back({SampleSource::Replay, i});
  Rng rng(seed);
  rng.shuffle(entries);
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.replay_ratio = pool_size > 0
                          ? static_cast<double>(pool_size) / static_cast<double>(task_size + pool_size)
                          : 0.0;
  for (size_t i = 0; i < entries.size(); i += batch_size) {
    const size_t end = std::min(entries.size(), i + batch_size);
    plan.batches.emplace_back(entries.begin() + i, entries.begin() + end);
  }
  return plan;
}

BatchPlan plan_bi(int64_t task_size, int64_t pool_size, int64_t batch_size, double rho,
                  ReplayCycler& cycler, uint64_t seed) {
  const int64_t r = replay_count(rho, batch_size);
  if (r > pool_size) throw std::invalid_argument("plan_bi: replay count exceeds pool size");
  std::vector<int64_t> task_order(task_size);
  std::iota(task_order.begin(), task_order.end(), 0);
  Rng rng(seed);
  rng.shuffle(task_order);
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.replay_ratio = rho;
  size_t ti = 0;
  while (ti < task_order.size()) {
    std::vector<BatchEntry> batch;
    // final ragged batch shrinks only the task portion, keeps r replay entries
    const size_t ntask = std::min<size_t>(batch_size - r, task_order.size() - ti);
    for (size_t j = 0; j < ntask; ++j) batch.push_back({SampleSource::Task, task_order[ti++]});
    for (int64_t j = 0; j < r; ++j) batch.push_back({SampleSource::Replay, cycler.next()});
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

}  // namespace gere
