// Tiny pre-norm decoder-only transformer exposing last-layer hidden states,
// with optional low-rank adapters on the query/key projections.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gere/rng.hpp"
#include "gere/tensor.hpp"

namespace gere {

struct ModelConfig {
  int64_t n_layers = 2;
  int64_t hidden_dim = 64;
  int64_t n_heads = 4;
  int64_t vocab_size = 128;
  int64_t max_seq = 64;
  uint64_t seed = 1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LoraConfig {
  int64_t rank = 8;
  float alpha = 32.0f;
  float dropout = 0.1f;
  std::vector<std::string> targets = {"query", "key"};

  bool operator==(const LoraConfig&) const = default;
};

struct ManifestEntry {
  std::string name;
  std::vector<int64_t> shape;
  int64_t offset = 0;
};

// Flattened trainable weights plus the manifest fixing their order.
struct WeightVector {
  std::vector<ManifestEntry> manifest;
  std::vector<float> data;

  bool manifest_matches(const WeightVector& other) const;
};

struct ForwardResult {
  TensorF logits;       // (B, T, V)
  TensorF last_hidden;  // (B, T, n_d)
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::optional<LoraConfig>& lora() const { return lora_; }

  // tokens: B*T ids row-major; mask is advisory (losses consume it; causal
  // attention keeps padded tails from leaking backwards).
  ForwardResult forward(const std::vector<int64_t>& tokens, int64_t batch, int64_t time);

  void attach_lora(const LoraConfig& cfg);

  // Trainable parameters (adapters only when LoRA is attached).
  std::vector<TensorF> trainable_params() const;
  // Every parameter including frozen base weights.
  std::vector<TensorF> all_params() const;

  WeightVector flatten_weights() const;
  void load_weights(const WeightVector& wv);

  // lm_head weight (n_d x V); the KL baseline recomputes teacher logits
  // from archived hidden states with the frozen base head.
  TensorF lm_head() const;

  void set_train(bool on) { train_mode_ = on; }
  bool train_mode() const { return train_mode_; }

  uint64_t fingerprint() const;
  int64_t param_count(bool trainable_only = false) const;

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

  Model clone() const;

 private:
  struct Param {
    std::string name;
    TensorF t;
    bool trainable = true;
  };

  TensorF& find(const std::string& name);
  const TensorF& find(const std::string& name) const;
  TensorF project(const TensorF& x, int layer, const std::string& role);

  ModelConfig cfg_;
  std::optional<LoraConfig> lora_;
  std::vector<Param> params_;  // canonical manifest order
  bool train_mode_ = true;
  Rng dropout_rng_{0};
};

}  // namespace gere
