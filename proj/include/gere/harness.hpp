// Sequential-task continual training: all method variants, MTL joint
// training, evaluation, and metric aggregation.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gere/distill.hpp"
#include "gere/losses.hpp"
#include "gere/model.hpp"
#include "gere/scheduler.hpp"
#include "gere/synth.hpp"

namespace gere {

enum class Method {
  Baseline,       // no replay
  BaselineR,      // vanilla replay, CE only
  BaselineR_KL,   // + temperature-softened logit imitation
  BaselineR_L1,   // + L1 feature imitation
  BaselineR_L2,   // + L2 feature imitation
  BaselineR_TM,   // + threshold-based margin loss
};

Method parse_method(const std::string& s);
std::string method_name(Method m);
bool method_uses_replay(Method m);
bool method_has_aux(Method m);

struct TrainConfig {
  Method method = Method::BaselineR_TM;
  WeightStrategy weight = WeightStrategy::fixed(1.0);
  std::optional<double> bi_ratio;  // unset: vanilla mixing
  float lr = 3e-4f;
  int64_t epochs = 3;
  int64_t batch_size = 64;
  bool use_lora = false;
  LoraConfig lora;
  uint64_t seed = 1;
  bool joint_ce = true;  // replay LM targets included in the CE term
  float kl_temperature = 2.0f;
  float kl_weight = 4.0f;  // temperature squared

  uint64_t hash() const;
};

TrainConfig config_from_json_file(const std::string& path);
std::string config_to_json(const TrainConfig& cfg);

struct ReplayAssets {
  ReplayPool pool;
  HiddenTargetArchive archive;
  Thresholds thr;
  std::vector<float> base_lm_head;  // frozen head for KL teacher logits
  int64_t vocab = 0;
};

struct Metrics {
  double general_score = 0.0;
  double ap = 0.0;
  double f1 = 0.0;
};

struct RunRecordRow {
  int64_t step = 0;  // 1-based task index
  Metrics metrics;
  std::vector<double> task_acc;  // accuracy of every task seen so far
  double wall_seconds = 0.0;
};

struct RunRecord {
  uint64_t config_hash = 0;
  double orig_general = 0.0;  // pre-finetune ceiling
  std::vector<RunRecordRow> rows;

  void save_jsonl(const std::string& path) const;
  void save_csv(const std::string& path) const;
};

// harmonic mean of the general score and AP, in percent
double f1_avg(double general, double ap);

double evaluate_general(Model& model, const std::vector<std::vector<int64_t>>& heldout);
double evaluate_task(Model& model, const TaskData& task);
// per-task accuracies plus their unweighted mean
std::pair<std::vector<double>, double> evaluate_tasks(Model& model,
                                                      const std::vector<TaskData>& tasks);

// mean next-token CE of the model over the replay pool (landscape metric)
double evaluate_replay_ce(Model& model, const ReplayPool& pool, int64_t batch_size = 64);

void train_task(Model& model, const std::vector<TaskSample>& train, const ReplayAssets* assets,
                const TrainConfig& cfg, uint64_t task_salt);

RunRecord run_continual(Model& model, const std::vector<TaskData>& tasks,
                        const std::vector<std::vector<int64_t>>& heldout,
                        const ReplayAssets* assets, const TrainConfig& cfg);

RunRecord run_mtl(Model& model, const std::vector<TaskData>& tasks,
                  const std::vector<std::vector<int64_t>>& heldout, const ReplayAssets* assets,
                  const TrainConfig& cfg);

}  // namespace gere
