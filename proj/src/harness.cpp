#include "gere/harness.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "gere/optim.hpp"

namespace gere {

using json = nlohmann::json;

Method parse_method(const std::string& s) {
  if (s == "baseline") return Method::Baseline;
  if (s == "baseline_r") return Method::BaselineR;
  if (s == "baseline_r_kl") return Method::BaselineR_KL;
  if (s == "baseline_r_l1") return Method::BaselineR_L1;
  if (s == "baseline_r_l2") return Method::BaselineR_L2;
  if (s == "baseline_r_tm") return Method::BaselineR_TM;
  throw std::invalid_argument("unknown method: " + s);
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Baseline: return "baseline";
    case Method::BaselineR: return "baseline_r";
    case Method::BaselineR_KL: return "baseline_r_kl";
    case Method::BaselineR_L1: return "baseline_r_l1";
    case Method::BaselineR_L2: return "baseline_r_l2";
    case Method::BaselineR_TM: return "baseline_r_tm";
  }
  return "?";
}

bool method_uses_replay(Method m) { return m != Method::Baseline; }
bool method_has_aux(Method m) {
  return m == Method::BaselineR_KL || m == Method::BaselineR_L1 || m == Method::BaselineR_L2 ||
         m == Method::BaselineR_TM;
}

uint64_t TrainConfig::hash() const {
  const std::string s = config_to_json(*this);
  return fnv1a(s.data(), s.size());
}

std::string config_to_json(const TrainConfig& cfg) {
  json j = {{"method", method_name(cfg.method)},
            {"weight", cfg.weight.str()},
            {"lr", cfg.lr},
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"use_lora", cfg.use_lora},
            {"seed", cfg.seed},
            {"joint_ce", cfg.joint_ce},
            {"kl_temperature", cfg.kl_temperature},
            {"kl_weight", cfg.kl_weight}};
  if (cfg.bi_ratio) j["bi"] = *cfg.bi_ratio;
  if (cfg.use_lora)
    j["lora"] = {{"rank", cfg.lora.rank}, {"alpha", cfg.lora.alpha},
                 {"dropout", cfg.lora.dropout}, {"targets", cfg.lora.targets}};
  return j.dump();
}

TrainConfig config_from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  json j = json::parse(f);
  TrainConfig cfg;
  if (j.contains("method")) cfg.method = parse_method(j["method"]);
  if (j.contains("weight")) cfg.weight = WeightStrategy::parse(j["weight"]);
  if (j.contains("bi")) cfg.bi_ratio = j["bi"].get<double>();
  if (j.contains("lr")) cfg.lr = j["lr"];
  if (j.contains("epochs")) cfg.epochs = j["epochs"];
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"];
  if (j.contains("use_lora")) cfg.use_lora = j["use_lora"];
  if (j.contains("seed")) cfg.seed = j["seed"];
  if (j.contains("joint_ce")) cfg.joint_ce = j["joint_ce"];
  if (j.contains("kl_temperature")) cfg.kl_temperature = j["kl_temperature"];
  if (j.contains("kl_weight")) cfg.kl_weight = j["kl_weight"];
  if (j.contains("lora")) {
    const auto& jl = j["lora"];
    if (jl.contains("rank")) cfg.lora.rank = jl["rank"];
    if (jl.contains("alpha")) cfg.lora.alpha = jl["alpha"];
    if (jl.contains("dropout")) cfg.lora.dropout = jl["dropout"];
    if (jl.contains("targets")) cfg.lora.targets = jl["targets"].get<std::vector<std::string>>();
  }
  return cfg;
}

double f1_avg(double general, double ap) {
  if (general + ap == 0.0) throw std::invalid_argument("f1_avg: zero denominator");
  return 2.0 * general * ap / (general + ap);
}

namespace {

// One training micro-batch laid out as padded (B, T) next-token LM data.
struct Batch {
  int64_t b = 0, t = 0;
  std::vector<int64_t> inputs;    // B*T ids, pad-filled
  std::vector<int64_t> targets;   // next tokens per position
  std::vector<float> ce_mask;     // rows contributing to the CE term
  std::vector<float> replay_mask; // non-pad rows of replay samples
  std::vector<float> target_hidden;  // archive rows aligned with positions
  std::vector<ActivationState> target_states;  // TM targets, per entry
  bool has_replay = false;
};

Batch assemble_batch(const std::vector<BatchEntry>& entries,
                     const std::vector<TaskSample>& task_data, const ReplayAssets* assets,
                     const TrainConfig& cfg, int64_t n_dims, int64_t max_seq) {
  Batch out;
  out.b = static_cast<int64_t>(entries.size());
  int64_t t = 1;
  for (const auto& e : entries) {
    const int64_t len = e.source == SampleSource::Task
                            ? static_cast<int64_t>(task_data[e.index].tokens.size())
                            : static_cast<int64_t>(assets->pool.samples[e.index].tokens.size());
    t = std::max(t, len - 1);
  }
  out.t = std::min(t, max_seq);
  const int64_t rows = out.b * out.t;
  out.inputs.assign(rows, vocab::kPad);
  out.targets.assign(rows, vocab::kPad);
  out.ce_mask.assign(rows, 0.0f);
  out.replay_mask.assign(rows, 0.0f);
  if (assets) {
    out.target_hidden.assign(rows * n_dims, 0.0f);
    out.target_states.assign(rows * n_dims, ActivationState::NonActivated);
  }
  for (int64_t i = 0; i < out.b; ++i) {
    const auto& e = entries[i];
    if (e.source == SampleSource::Task) {
      const auto& s = task_data[e.index];
      const int64_t n = std::min<int64_t>(s.tokens.size(), out.t + 1);
      for (int64_t j = 0; j + 1 < n; ++j) {
        out.inputs[i * out.t + j] = s.tokens[j];
        out.targets[i * out.t + j] = s.tokens[j + 1];
      }
      // answer token only: instruction/input positions are masked out
      if (s.answer_pos - 1 < out.t) out.ce_mask[i * out.t + s.answer_pos - 1] = 1.0f;
    } else {
      const auto& s = assets->pool.samples[e.index];
      const int64_t n = std::min<int64_t>(s.tokens.size(), out.t + 1);
      for (int64_t j = 0; j + 1 < n; ++j) {
        const int64_t row = i * out.t + j;
        out.inputs[row] = s.tokens[j];
        out.targets[row] = s.tokens[j + 1];
        if (cfg.joint_ce) out.ce_mask[row] = 1.0f;
        out.replay_mask[row] = 1.0f;
        const auto& h = assets->archive.targets[e.index];
        std::copy(h.begin() + j * n_dims, h.begin() + (j + 1) * n_dims,
                  out.target_hidden.begin() + row * n_dims);
        for (int64_t k = 0; k < n_dims; ++k)
          out.target_states[row * n_dims + k] = classify_state(
              h[j * n_dims + k], assets->thr.tau_minus[k], assets->thr.tau_plus[k]);
      }
      out.has_replay = true;
    }
  }
  return out;
}

LossBundle<float> batch_loss(Model& model, const Batch& batch, const ReplayAssets* assets,
                             const TrainConfig& cfg) {
  auto fw = model.forward(batch.inputs, batch.b, batch.t);
  auto ce = ce_loss(fw.logits, batch.targets, batch.ce_mask);
  const bool want_aux = method_has_aux(cfg.method) && batch.has_replay;
  if (!want_aux) {
    LossBundle<float> bundle;
    bundle.total = ce;
    bundle.ce = ce.item();
    return bundle;
  }
  TensorF aux;
  switch (cfg.method) {
    case Method::BaselineR_TM:
      aux = tm_loss_from_states(fw.last_hidden, batch.target_states, assets->thr,
                                batch.replay_mask);
      break;
    case Method::BaselineR_L1:
      aux = l1_feature_loss(fw.last_hidden, batch.target_hidden, batch.replay_mask);
      break;
    case Method::BaselineR_L2:
      aux = l2_feature_loss(fw.last_hidden, batch.target_hidden, batch.replay_mask);
      break;
    case Method::BaselineR_KL: {
      auto head = TensorF::leaf({assets->archive.n_dims, assets->vocab}, assets->base_lm_head);
      auto targets = kl_targets_from_hidden(batch.target_hidden, batch.b * batch.t, head);
      aux = kl_logit_loss(fw.logits, targets, cfg.kl_temperature, batch.replay_mask);
      break;
    }
    default:
      throw std::logic_error("batch_loss: variant without aux");
  }
  // KL carries its paper-fixed weight (T^2); others follow the strategy
  const WeightStrategy strat = cfg.method == Method::BaselineR_KL
                                   ? WeightStrategy::fixed(cfg.kl_weight / (cfg.kl_temperature *
                                                                            cfg.kl_temperature))
                                   : cfg.weight;
  return combine_losses(ce, aux, strat);
}

std::vector<double> greedy_argmax(const TensorF& logits) {
  std::vector<double> out(logits.view_rows());
  auto M = logits.mat();
  for (int64_t i = 0; i < M.rows(); ++i) {
    Eigen::Index best;
    M.row(i).maxCoeff(&best);
    out[i] = static_cast<double>(best);
  }
  return out;
}

}  // namespace

double evaluate_general(Model& model, const std::vector<std::vector<int64_t>>& heldout) {
  if (heldout.empty()) throw std::invalid_argument("evaluate_general: empty corpus");
  const bool was = model.train_mode();
  model.set_train(false);
  int64_t correct = 0, total = 0;
  const int64_t bs = 64;
  for (size_t start = 0; start < heldout.size(); start += bs) {
    const size_t end = std::min(heldout.size(), start + bs);
    int64_t t = 1;
    for (size_t i = start; i < end; ++i)
      t = std::max<int64_t>(t, static_cast<int64_t>(heldout[i].size()) - 1);
    t = std::min<int64_t>(t, model.config().max_seq);
    const int64_t b = static_cast<int64_t>(end - start);
    std::vector<int64_t> inputs(b * t, vocab::kPad), targets(b * t, vocab::kPad);
    std::vector<char> live(b * t, 0);
    for (int64_t i = 0; i < b; ++i) {
      const auto& s = heldout[start + i];
      for (int64_t j = 0; j + 1 < static_cast<int64_t>(s.size()) && j < t; ++j) {
        inputs[i * t + j] = s[j];
        targets[i * t + j] = s[j + 1];
        live[i * t + j] = 1;
      }
    }
    auto fw = model.forward(inputs, b, t);
    auto pred = greedy_argmax(fw.logits);
    for (int64_t r = 0; r < b * t; ++r)
      if (live[r]) {
        ++total;
        if (static_cast<int64_t>(pred[r]) == targets[r]) ++correct;
      }
  }
  model.set_train(was);
  return static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate_task(Model& model, const TaskData& task) {
  const bool was = model.train_mode();
  model.set_train(false);
  int64_t correct = 0;
  const int64_t bs = 64;
  const auto& samples = task.test;
  for (size_t start = 0; start < samples.size(); start += bs) {
    const size_t end = std::min(samples.size(), start + bs);
    int64_t t = 1;
    for (size_t i = start; i < end; ++i)
      t = std::max<int64_t>(t, samples[i].answer_pos);
    const int64_t b = static_cast<int64_t>(end - start);
    std::vector<int64_t> inputs(b * t, vocab::kPad);
    for (int64_t i = 0; i < b; ++i) {
      const auto& s = samples[start + i];
      for (int64_t j = 0; j < s.answer_pos && j < t; ++j) inputs[i * t + j] = s.tokens[j];
    }
    auto fw = model.forward(inputs, b, t);
    auto pred = greedy_argmax(fw.logits);
    for (int64_t i = 0; i < b; ++i) {
      const auto& s = samples[start + i];
      // exact match of the greedy answer token
      if (static_cast<int64_t>(pred[i * t + s.answer_pos - 1]) ==
          s.tokens[s.answer_pos])
        ++correct;
    }
  }
  model.set_train(was);
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

std::pair<std::vector<double>, double> evaluate_tasks(Model& model,
                                                      const std::vector<TaskData>& tasks) {
  std::vector<double> acc;
  for (const auto& t : tasks) acc.push_back(evaluate_task(model, t));
  double ap = 0.0;
  for (double a : acc) ap += a;
  ap /= static_cast<double>(acc.empty() ? 1 : acc.size());
  return {acc, ap};
}

double evaluate_replay_ce(Model& model, const ReplayPool& pool, int64_t batch_size) {
  const bool was = model.train_mode();
  model.set_train(false);
  double loss_sum = 0.0;
  int64_t count = 0;
  for (size_t start = 0; start < pool.samples.size(); start += batch_size) {
    const size_t end = std::min(pool.samples.size(), start + batch_size);
    int64_t t = 1;
    for (size_t i = start; i < end; ++i)
      t = std::max<int64_t>(t, static_cast<int64_t>(pool.samples[i].tokens.size()) - 1);
    t = std::min<int64_t>(t, model.config().max_seq);
    const int64_t b = static_cast<int64_t>(end - start);
    std::vector<int64_t> inputs(b * t, vocab::kPad), targets(b * t, vocab::kPad);
    std::vector<float> mask(b * t, 0.0f);
    for (int64_t i = 0; i < b; ++i) {
      const auto& s = pool.samples[start + i].tokens;
      for (int64_t j = 0; j + 1 < static_cast<int64_t>(s.size()) && j < t; ++j) {
        inputs[i * t + j] = s[j];
        targets[i * t + j] = s[j + 1];
        mask[i * t + j] = 1.0f;
      }
    }
    auto fw = model.forward(inputs, b, t);
    int64_t live = 0;
    for (float m : mask) live += m != 0.0f;
    loss_sum += static_cast<double>(ce_loss(fw.logits, targets, mask).item()) *
                static_cast<double>(live);
    count += live;
  }
  model.set_train(was);
  return loss_sum / static_cast<double>(count);
}

void train_task(Model& model, const std::vector<TaskSample>& train, const ReplayAssets* assets,
                const TrainConfig& cfg, uint64_t task_salt) {
  if (method_uses_replay(cfg.method) && assets == nullptr)
    throw std::invalid_argument("train_task: replay variant needs replay assets");
  const int64_t task_size = static_cast<int64_t>(train.size());
  const int64_t nd = model.config().hidden_dim;

  // optimizer state is fresh for every task
  AdamW opt(model.trainable_params(), {cfg.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
  const uint64_t seed = Rng::mix(cfg.seed ^ task_salt);

  int64_t steps_per_epoch;
  if (!method_uses_replay(cfg.method))
    steps_per_epoch = (task_size + cfg.batch_size - 1) / cfg.batch_size;
  else if (cfg.bi_ratio) {
    const int64_t r = replay_count(*cfg.bi_ratio, cfg.batch_size);
    steps_per_epoch = (task_size + (cfg.batch_size - r) - 1) / (cfg.batch_size - r);
  } else {
    steps_per_epoch =
        (task_size + assets->pool.size() + cfg.batch_size - 1) / cfg.batch_size;
  }
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  const int64_t warmup = std::min<int64_t>(20, total_steps / 10);

  ReplayCycler cycler(assets ? std::max<int64_t>(assets->pool.size(), 1) : 1, seed ^ 0xb1);
  int64_t step = 0;
  model.set_train(true);
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchPlan plan;
    if (!method_uses_replay(cfg.method))
      plan = plan_vanilla_mix(task_size, 0, cfg.batch_size, seed + epoch);
    else if (cfg.bi_ratio)
      plan = plan_bi(task_size, assets->pool.size(), cfg.batch_size, *cfg.bi_ratio, cycler,
                     seed + epoch);
    else
      plan = plan_vanilla_mix(task_size, assets->pool.size(), cfg.batch_size, seed + epoch);
    for (const auto& entries : plan.batches) {
      auto batch = assemble_batch(entries, train, method_uses_replay(cfg.method) ? assets : nullptr,
                                  cfg, nd, model.config().max_seq);
      TapeF tape;
      {
        TapeF::Scope scope(tape);
        auto bundle = batch_loss(model, batch, assets, cfg);
        tape.backward(bundle.total);
      }
      opt.step(warmup_cosine(step, warmup, total_steps));
      opt.zero_grad();
      ++step;
    }
  }
}

namespace {

RunRecordRow make_row(Model& model, const std::vector<TaskData>& seen,
                      const std::vector<std::vector<int64_t>>& heldout, int64_t step,
                      double secs) {
  RunRecordRow row;
  row.step = step;
  auto [acc, ap] = evaluate_tasks(model, seen);
  row.task_acc = acc;
  row.metrics.ap = ap;
  row.metrics.general_score = evaluate_general(model, heldout);
  const double g = row.metrics.general_score * 100.0;
  const double a = ap * 100.0;
  row.metrics.f1 = (g + a) > 0.0 ? f1_avg(g, a) / 100.0 : 0.0;
  row.wall_seconds = secs;
  return row;
}

}  // namespace

RunRecord run_continual(Model& model, const std::vector<TaskData>& tasks,
                        const std::vector<std::vector<int64_t>>& heldout,
                        const ReplayAssets* assets, const TrainConfig& cfg) {
  if (tasks.empty()) throw std::invalid_argument("run_continual: no tasks");
  if (cfg.use_lora && !model.lora()) model.attach_lora(cfg.lora);
  RunRecord record;
  record.config_hash = cfg.hash();
  record.orig_general = evaluate_general(model, heldout);
  std::vector<TaskData> seen;
  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    const auto t0 = std::chrono::steady_clock::now();
    train_task(model, tasks[ti].train, assets, cfg, 0x1000 + ti);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    seen.push_back(tasks[ti]);
    record.rows.push_back(make_row(model, seen, heldout, static_cast<int64_t>(ti) + 1, secs));
  }
  return record;
}

RunRecord run_mtl(Model& model, const std::vector<TaskData>& tasks,
                  const std::vector<std::vector<int64_t>>& heldout, const ReplayAssets* assets,
                  const TrainConfig& cfg) {
  if (tasks.empty()) throw std::invalid_argument("run_mtl: no tasks");
  if (cfg.use_lora && !model.lora()) model.attach_lora(cfg.lora);
  RunRecord record;
  record.config_hash = cfg.hash();
  record.orig_general = evaluate_general(model, heldout);
  std::vector<TaskSample> combined;
  for (const auto& t : tasks) combined.insert(combined.end(), t.train.begin(), t.train.end());
  const auto t0 = std::chrono::steady_clock::now();
  train_task(model, combined, assets, cfg, 0x3117);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  record.rows.push_back(make_row(model, tasks, heldout, 1, secs));
  return record;
}

void RunRecord::save_jsonl(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("run record: cannot open " + path);
  for (const auto& row : rows) {
    json j = {{"step", row.step},
              {"f1", row.metrics.f1},
              {"general", row.metrics.general_score},
              {"ap", row.metrics.ap},
              {"task_acc", row.task_acc},
              {"wall_seconds", row.wall_seconds},
              {"config_hash", config_hash},
              {"orig_general", orig_general}};
    f << j.dump() << "\n";
  }
}

void RunRecord::save_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("run record: cannot open " + path);
  size_t max_tasks = 0;
  for (const auto& r : rows) max_tasks = std::max(max_tasks, r.task_acc.size());
  f << "step,f1,general,ap";
  for (size_t i = 0; i < max_tasks; ++i) f << ",task" << i;
  f << "\n" << std::setprecision(10);
  for (const auto& r : rows) {
    f << r.step << "," << r.metrics.f1 << "," << r.metrics.general_score << ","
      << r.metrics.ap;
    for (size_t i = 0; i < max_tasks; ++i)
      f << "," << (i < r.task_acc.size() ? std::to_string(r.task_acc[i]) : "");
    f << "\n";
  }
}

}  // namespace gere
