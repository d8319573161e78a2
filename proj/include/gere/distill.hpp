// Fixed general-sample replay pool and the distilled last-layer hidden
// targets: statistics, activation thresholds, state classification, and
// packed 2-bit state storage.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gere/model.hpp"

namespace gere {

struct ReplaySample {
  std::vector<int64_t> tokens;  // no padding; length = n^t
};

struct ReplayPool {
  std::vector<ReplaySample> samples;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
};

struct HiddenTargetArchive {
  int64_t n_dims = 0;
  uint64_t model_fingerprint = 0;
  // per sample: n^t x n_d row-major
  std::vector<std::vector<float>> targets;
  std::vector<int64_t> token_counts;

  int64_t size() const { return static_cast<int64_t>(targets.size()); }
};

struct ActivationStats {
  std::vector<float> mean;
  std::vector<float> stddev;
  int64_t count = 0;  // total token positions
};

struct Thresholds {
  std::vector<float> tau_minus;
  std::vector<float> tau_plus;
  std::vector<float> mean;
  std::vector<float> stddev;

  int64_t dims() const { return static_cast<int64_t>(tau_minus.size()); }
};

enum class ActivationState : uint8_t {
  NonActivated = 0,
  PositivelyActivated = 1,
  NegativelyActivated = 2,
};

HiddenTargetArchive distill(Model& model, const ReplayPool& pool);

ActivationStats compute_stats(const HiddenTargetArchive& archive);

Thresholds thresholds(const ActivationStats& stats);

ActivationState classify_state(double value, double tau_minus, double tau_plus);

// 2 bits per state, first state in the least-significant bit pair of each byte
std::vector<uint8_t> pack_states(const std::vector<ActivationState>& states);
std::vector<ActivationState> unpack_states(const std::vector<uint8_t>& bytes, int64_t count);

void save_archive(const HiddenTargetArchive& a, const std::string& path);
HiddenTargetArchive load_archive(const std::string& path);

void save_thresholds(const Thresholds& t, const std::string& path);
Thresholds load_thresholds(const std::string& path);

void save_packed_states(const HiddenTargetArchive& a, const Thresholds& t,
                        const std::string& path);

}  // namespace gere
