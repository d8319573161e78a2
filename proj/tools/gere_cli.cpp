// gere: continual-learning lab driver.
// Subcommands: synth-data, pretrain, distill, train, eval, landscape, report.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gere/distill.hpp"
#include "gere/harness.hpp"
#include "gere/landscape.hpp"
#include "gere/model.hpp"
#include "gere/optim.hpp"
#include "gere/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gere;

namespace {

void write_manifest(const std::string& out, const std::string& command, const json& flags) {
  fs::create_directories(out);
  json m = {{"tool", "gere"}, {"version", 1}, {"command", command}, {"flags", flags}};
  std::ofstream f(fs::path(out) / "run_manifest.json");
  f << m.dump(2) << "\n";
}

double parse_ratio(const std::string& s) {
  const auto slash = s.find('/');
  if (slash != std::string::npos)
    return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
  return std::stod(s);
}

ReplayPool pool_from_corpus(const std::vector<std::vector<int64_t>>& seqs) {
  ReplayPool pool;
  for (const auto& s : seqs) pool.samples.push_back({s});
  return pool;
}

void pretrain_lm(Model& model, const std::vector<std::vector<int64_t>>& corpus, float lr,
                 int64_t epochs, int64_t batch_size, uint64_t seed) {
  AdamW opt(model.trainable_params(), {lr, 0.9f, 0.999f, 1e-8f, 0.0f});
  const int64_t n = static_cast<int64_t>(corpus.size());
  const int64_t steps_per_epoch = (n + batch_size - 1) / batch_size;
  const int64_t total = steps_per_epoch * epochs;
  const int64_t warmup = std::min<int64_t>(50, total / 10);
  int64_t step = 0;
  model.set_train(true);
  Rng rng(seed);
  std::vector<int64_t> order(n);
  for (int64_t i = 0; i < n; ++i) order[i] = i;
  for (int64_t e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (int64_t start = 0; start < n; start += batch_size) {
      const int64_t end = std::min(n, start + batch_size);
      int64_t t = 1;
      for (int64_t i = start; i < end; ++i)
        t = std::max<int64_t>(t, static_cast<int64_t>(corpus[order[i]].size()) - 1);
      t = std::min(t, model.config().max_seq);
      const int64_t b = end - start;
      std::vector<int64_t> inputs(b * t, vocab::kPad), targets(b * t, vocab::kPad);
      std::vector<float> mask(b * t, 0.0f);
      for (int64_t i = 0; i < b; ++i) {
        const auto& s = corpus[order[start + i]];
        for (int64_t j = 0; j + 1 < static_cast<int64_t>(s.size()) && j < t; ++j) {
          inputs[i * t + j] = s[j];
          targets[i * t + j] = s[j + 1];
          mask[i * t + j] = 1.0f;
        }
      }
      TapeF tape;
      {
        TapeF::Scope scope(tape);
        auto fw = model.forward(inputs, b, t);
        tape.backward(ce_loss(fw.logits, targets, mask));
      }
      opt.step(warmup_cosine(step, warmup, total));
      opt.zero_grad();
      ++step;
    }
  }
}

std::vector<TaskData> load_tasks_dir(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "tasks_manifest.json");
  if (!mf) throw std::runtime_error("tasks: cannot open manifest in " + dir);
  json m = json::parse(mf);
  std::vector<TaskData> out;
  for (const auto& jt : m.at("tasks")) {
    TaskSpec spec;
    spec.task_id = jt.at("task_id");
    spec.rule = static_cast<TaskRule>(jt.at("rule").get<int>());
    spec.x_token = jt.at("x_token");
    spec.y_token = jt.at("y_token");
    spec.label0 = jt.at("label0");
    spec.label1 = jt.at("label1");
    const std::string base = (fs::path(dir) / ("task" + std::to_string(spec.task_id))).string();
    out.push_back(load_task_data(spec, base + ".train.jsonl", base + ".test.jsonl"));
  }
  return out;
}

ReplayAssets load_assets(const std::string& corpus_dir, const std::string& archive_path,
                         const std::string& thresholds_path, const Model& model) {
  ReplayAssets assets;
  assets.pool =
      pool_from_corpus(load_token_corpus((fs::path(corpus_dir) / "replay_pool.jsonl").string()));
  assets.archive = load_archive(archive_path);
  assets.thr = load_thresholds(thresholds_path);
  if (assets.archive.model_fingerprint != model.fingerprint())
    throw std::runtime_error("fingerprint mismatch between checkpoint and archive");
  if (assets.archive.size() != assets.pool.size())
    throw std::runtime_error("replay pool size disagrees with archive");
  assets.base_lm_head = model.lm_head().values();
  assets.vocab = model.config().vocab_size;
  return assets;
}

int run(int argc, char** argv) {
  CLI::App app{"GeRe continual-learning laboratory"};
  app.require_subcommand(1);

  // ---- synth-data ----
  auto* synth = app.add_subcommand("synth-data", "generate corpora and tasks");
  uint64_t sd_seed = 1;
  std::string sd_out = "out";
  int64_t sd_tasks = 4, sd_train = 2000, sd_test = 500;
  CorpusSizes sd_sizes;
  synth->add_option("--seed", sd_seed);
  synth->add_option("--out", sd_out)->required();
  synth->add_option("--tasks", sd_tasks);
  synth->add_option("--train-size", sd_train);
  synth->add_option("--test-size", sd_test);
  synth->add_option("--pretrain-size", sd_sizes.pretrain);
  synth->add_option("--pool-size", sd_sizes.replay_pool);
  synth->add_option("--heldout-size", sd_sizes.heldout);
  synth->add_option("--seq-len", sd_sizes.seq_len);

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "train the base LM on the general corpus");
  std::string pt_data, pt_out = "out";
  uint64_t pt_seed = 1;
  float pt_lr = 1e-3f;
  int64_t pt_epochs = 3, pt_batch = 64;
  ModelConfig pt_cfg;
  pre->add_option("--data", pt_data)->required();
  pre->add_option("--out", pt_out)->required();
  pre->add_option("--seed", pt_seed);
  pre->add_option("--lr", pt_lr);
  pre->add_option("--epochs", pt_epochs);
  pre->add_option("--batch", pt_batch);
  pre->add_option("--layers", pt_cfg.n_layers);
  pre->add_option("--hidden", pt_cfg.hidden_dim);
  pre->add_option("--heads", pt_cfg.n_heads);
  pre->add_option("--vocab", pt_cfg.vocab_size);
  pre->add_option("--max-seq", pt_cfg.max_seq);

  // ---- distill ----
  auto* dst = app.add_subcommand("distill", "capture hidden targets and thresholds");
  std::string ds_model, ds_data, ds_out = "out", ds_jsonl;
  dst->add_option("--model", ds_model)->required();
  dst->add_option("--data", ds_data);
  dst->add_option("--replay-jsonl", ds_jsonl);
  dst->add_option("--out", ds_out)->required();

  // ---- train ----
  auto* trn = app.add_subcommand("train", "continual or MTL training");
  std::string tr_config, tr_method = "baseline_r_tm", tr_weight = "dynamic", tr_bi;
  std::string tr_tasks, tr_model, tr_archive, tr_thr, tr_out = "out", tr_data, tr_lora;
  float tr_lr = 3e-4f;
  int64_t tr_epochs = 3, tr_batch = 64;
  uint64_t tr_seed = 1;
  bool tr_mtl = false, tr_task_only_ce = false;
  trn->add_option("--config", tr_config);
  trn->add_option("--method", tr_method);
  trn->add_option("--weight", tr_weight);
  trn->add_option("--bi", tr_bi);
  trn->add_option("--lr", tr_lr);
  trn->add_option("--epochs", tr_epochs);
  trn->add_option("--batch", tr_batch);
  trn->add_option("--lora", tr_lora, "r,alpha,dropout");
  trn->add_option("--seed", tr_seed);
  trn->add_option("--tasks", tr_tasks)->required();
  trn->add_option("--data", tr_data)->required();
  trn->add_option("--model", tr_model)->required();
  trn->add_option("--replay-archive", tr_archive);
  trn->add_option("--thresholds", tr_thr);
  trn->add_option("--out", tr_out)->required();
  trn->add_flag("--mtl", tr_mtl, "joint multi-task run instead of sequential");
  trn->add_flag("--task-only-ce", tr_task_only_ce, "exclude replay LM targets from the CE term");

  // ---- eval ----
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_model, ev_data, ev_tasks, ev_jsonl, ev_out = "out";
  evl->add_option("--model", ev_model)->required();
  evl->add_option("--data", ev_data);
  evl->add_option("--tasks", ev_tasks);
  evl->add_option("--eval-jsonl", ev_jsonl);
  evl->add_option("--out", ev_out)->required();

  // ---- landscape ----
  auto* lnd = app.add_subcommand("landscape", "evaluate a weight-space grid");
  std::string ls_base, ls_x, ls_y, ls_metric = "replay_ce", ls_data, ls_out = "out";
  GridSpec ls_spec;
  lnd->add_option("--base", ls_base)->required();
  lnd->add_option("--x-model", ls_x)->required();
  lnd->add_option("--y-model", ls_y)->required();
  lnd->add_option("--metric", ls_metric);
  lnd->add_option("--data", ls_data)->required();
  lnd->add_option("--x0", ls_spec.x0);
  lnd->add_option("--x1", ls_spec.x1);
  lnd->add_option("--y0", ls_spec.y0);
  lnd->add_option("--y1", ls_spec.y1);
  lnd->add_option("--nx", ls_spec.nx);
  lnd->add_option("--ny", ls_spec.ny);
  lnd->add_option("--out", ls_out)->required();

  // ---- report ----
  auto* rpt = app.add_subcommand("report", "aggregate run directories into one CSV");
  std::vector<std::string> rp_runs;
  std::string rp_out = "out";
  rpt->add_option("--runs", rp_runs)->required()->expected(-1);
  rpt->add_option("--out", rp_out)->required();

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    auto corpus = gen_general_corpus(sd_seed, sd_sizes);
    auto tasks = gen_tasks(sd_seed ^ 0x7a5c, sd_tasks, sd_train, sd_test);
    fs::create_directories(fs::path(sd_out) / "corpus");
    fs::create_directories(fs::path(sd_out) / "tasks");
    save_token_corpus(corpus.pretrain, (fs::path(sd_out) / "corpus/pretrain.jsonl").string());
    save_token_corpus(corpus.replay_pool,
                      (fs::path(sd_out) / "corpus/replay_pool.jsonl").string());
    save_token_corpus(corpus.heldout, (fs::path(sd_out) / "corpus/heldout.jsonl").string());
    json tm = {{"seed", sd_seed}, {"tasks", json::array()}};
    for (const auto& td : tasks) {
      const std::string base =
          (fs::path(sd_out) / "tasks" / ("task" + std::to_string(td.spec.task_id))).string();
      save_task_data(td, base + ".train.jsonl", base + ".test.jsonl");
      tm["tasks"].push_back({{"task_id", td.spec.task_id},
                             {"rule", static_cast<int>(td.spec.rule)},
                             {"x_token", td.spec.x_token},
                             {"y_token", td.spec.y_token},
                             {"label0", td.spec.label0},
                             {"label1", td.spec.label1}});
    }
    std::ofstream tmf(fs::path(sd_out) / "tasks/tasks_manifest.json");
    tmf << tm.dump(2) << "\n";
    json cm = {{"seed", sd_seed}, {"corpus_hash", corpus.content_hash()}};
    std::ofstream cmf(fs::path(sd_out) / "corpus/manifest.json");
    cmf << cm.dump(2) << "\n";
    write_manifest(sd_out, "synth-data",
                   {{"seed", sd_seed}, {"tasks", sd_tasks}, {"corpus_hash", corpus.content_hash()}});
    return 0;
  }

  if (pre->parsed()) {
    pt_cfg.seed = pt_seed;
    Model model(pt_cfg);
    auto corpus = load_token_corpus((fs::path(pt_data) / "pretrain.jsonl").string());
    pretrain_lm(model, corpus, pt_lr, pt_epochs, pt_batch, pt_seed ^ 0x9e37);
    fs::create_directories(pt_out);
    model.save_checkpoint((fs::path(pt_out) / "base.ckpt").string());
    auto heldout = load_token_corpus((fs::path(pt_data) / "heldout.jsonl").string());
    const double g = evaluate_general(model, heldout);
    std::cout << "pretrained general_score " << g << "\n";
    write_manifest(pt_out, "pretrain",
                   {{"seed", pt_seed}, {"epochs", pt_epochs}, {"general_score", g}});
    return 0;
  }

  if (dst->parsed()) {
    Model model = Model::load_checkpoint(ds_model);
    ReplayPool pool;
    if (!ds_jsonl.empty())
      pool = load_jsonl_replay(ds_jsonl, std::min<int64_t>(562, model.config().max_seq));
    else if (!ds_data.empty())
      pool = pool_from_corpus(
          load_token_corpus((fs::path(ds_data) / "replay_pool.jsonl").string()));
    else
      throw std::runtime_error("distill: need --data or --replay-jsonl");
    auto archive = distill(model, pool);
    auto stats = compute_stats(archive);
    auto thr = thresholds(stats);
    fs::create_directories(ds_out);
    save_archive(archive, (fs::path(ds_out) / "archive.hta").string());
    save_thresholds(thr, (fs::path(ds_out) / "thresholds.json").string());
    save_packed_states(archive, thr, (fs::path(ds_out) / "states.pst").string());
    write_manifest(ds_out, "distill",
                   {{"model", ds_model}, {"n_samples", archive.size()},
                    {"fingerprint", archive.model_fingerprint}});
    return 0;
  }

  if (trn->parsed()) {
    TrainConfig cfg;
    if (!tr_config.empty()) cfg = config_from_json_file(tr_config);
    if (tr_config.empty()) {
      cfg.method = parse_method(tr_method);
      cfg.weight = WeightStrategy::parse(tr_weight);
      if (!tr_bi.empty()) cfg.bi_ratio = parse_ratio(tr_bi);
      cfg.lr = tr_lr;
      cfg.epochs = tr_epochs;
      cfg.batch_size = tr_batch;
      cfg.seed = tr_seed;
      cfg.joint_ce = !tr_task_only_ce;
      if (!tr_lora.empty()) {
        cfg.use_lora = true;
        std::stringstream ss(tr_lora);
        std::string part;
        std::getline(ss, part, ',');
        cfg.lora.rank = std::stoll(part);
        std::getline(ss, part, ',');
        cfg.lora.alpha = std::stof(part);
        if (std::getline(ss, part, ',')) cfg.lora.dropout = std::stof(part);
      }
    }
    Model model = Model::load_checkpoint(tr_model);
    if (cfg.use_lora) model.attach_lora(cfg.lora);
    auto tasks = load_tasks_dir(tr_tasks);
    auto heldout = load_token_corpus((fs::path(tr_data) / "heldout.jsonl").string());
    ReplayAssets assets;
    const ReplayAssets* assets_ptr = nullptr;
    if (method_uses_replay(cfg.method)) {
      if (tr_archive.empty() || tr_thr.empty())
        throw std::runtime_error("train: replay method needs --replay-archive and --thresholds");
      assets = load_assets(tr_data, tr_archive, tr_thr, model);
      assets_ptr = &assets;
    } else if (!tr_archive.empty()) {
      std::cerr << "warning: --replay-archive ignored by method baseline\n";
    }
    fs::create_directories(tr_out);
    RunRecord record = tr_mtl ? run_mtl(model, tasks, heldout, assets_ptr, cfg)
                              : run_continual(model, tasks, heldout, assets_ptr, cfg);
    record.save_jsonl((fs::path(tr_out) / "record.jsonl").string());
    record.save_csv((fs::path(tr_out) / "record.csv").string());
    model.save_checkpoint((fs::path(tr_out) / "final.ckpt").string());
    write_manifest(tr_out, "train",
                   {{"config", json::parse(config_to_json(cfg))},
                    {"config_hash", record.config_hash},
                    {"mtl", tr_mtl}});
    const auto& last = record.rows.back();
    std::cout << "final f1 " << last.metrics.f1 << " general " << last.metrics.general_score
              << " ap " << last.metrics.ap << "\n";
    return 0;
  }

  if (evl->parsed()) {
    Model model = Model::load_checkpoint(ev_model);
    json result;
    if (!ev_jsonl.empty()) {
      auto pool = load_jsonl_replay(ev_jsonl, std::min<int64_t>(562, model.config().max_seq));
      std::vector<std::vector<int64_t>> seqs;
      for (auto& s : pool.samples) seqs.push_back(s.tokens);
      result["general_score"] = evaluate_general(model, seqs);
    } else if (!ev_data.empty()) {
      auto heldout = load_token_corpus((fs::path(ev_data) / "heldout.jsonl").string());
      result["general_score"] = evaluate_general(model, heldout);
    }
    if (!ev_tasks.empty()) {
      auto tasks = load_tasks_dir(ev_tasks);
      auto [acc, ap] = evaluate_tasks(model, tasks);
      result["task_acc"] = acc;
      result["ap"] = ap;
      if (result.contains("general_score"))
        result["f1"] = f1_avg(result["general_score"].get<double>() * 100.0, ap * 100.0) / 100.0;
    }
    fs::create_directories(ev_out);
    std::ofstream rf(fs::path(ev_out) / "eval.json");
    rf << result.dump(2) << "\n";
    std::cout << result.dump() << "\n";
    write_manifest(ev_out, "eval", {{"model", ev_model}});
    return 0;
  }

  if (lnd->parsed()) {
    Model base = Model::load_checkpoint(ls_base);
    Model mx = Model::load_checkpoint(ls_x);
    Model my = Model::load_checkpoint(ls_y);
    auto frame = basis_frame(base.flatten_weights(), mx.flatten_weights(), my.flatten_weights());
    ls_spec.metric = parse_grid_metric(ls_metric);
    EvalInputs inputs;
    ReplayPool pool;
    std::vector<std::vector<int64_t>> heldout;
    if (ls_spec.metric == GridMetric::ReplayCE) {
      pool = pool_from_corpus(
          load_token_corpus((fs::path(ls_data) / "replay_pool.jsonl").string()));
      inputs.pool = &pool;
    } else {
      heldout = load_token_corpus((fs::path(ls_data) / "heldout.jsonl").string());
      inputs.heldout = &heldout;
    }
    Model scratch = base.clone();
    auto grid = eval_grid(frame, ls_spec, scratch, inputs);
    fs::create_directories(ls_out);
    save_grid_csv(grid, ls_spec.metric, (fs::path(ls_out) / "grid.csv").string());
    write_manifest(ls_out, "landscape",
                   {{"metric", ls_metric}, {"nx", ls_spec.nx}, {"ny", ls_spec.ny}});
    return 0;
  }

  if (rpt->parsed()) {
    fs::create_directories(rp_out);
    std::ofstream f(fs::path(rp_out) / "report.csv");
    f << "run,f1,general,ap\n";
    for (const auto& run_dir : rp_runs) {
      std::ifstream rf(fs::path(run_dir) / "record.jsonl");
      if (!rf) throw std::runtime_error("report: no record.jsonl in " + run_dir);
      std::string line, last;
      while (std::getline(rf, line))
        if (!line.empty()) last = line;
      json j = json::parse(last);
      f << fs::path(run_dir).filename().string() << "," << j["f1"].get<double>() << ","
        << j["general"].get<double>() << "," << j["ap"].get<double>() << "\n";
    }
    write_manifest(rp_out, "report", {{"runs", rp_runs}});
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
