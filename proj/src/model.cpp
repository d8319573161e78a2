#include "gere/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace gere {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (n_layers < 1 || hidden_dim < 1 || n_heads < 1 || vocab_size < 1 || max_seq < 1)
    throw std::invalid_argument("model config: all dims must be >= 1");
  if (hidden_dim % n_heads != 0)
    throw std::invalid_argument("model config: n_heads must divide hidden_dim");
}

bool WeightVector::manifest_matches(const WeightVector& other) const {
  if (manifest.size() != other.manifest.size()) return false;
  for (size_t i = 0; i < manifest.size(); ++i) {
    const auto& a = manifest[i];
    const auto& b = other.manifest[i];
    if (a.name != b.name || a.shape != b.shape || a.offset != b.offset) return false;
  }
  return true;
}

namespace {

TensorF init_matrix(Rng& rng, int64_t rows, int64_t cols) {
  std::vector<float> v(rows * cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-s, s));
  return TensorF::leaf({rows, cols}, std::move(v), true);
}

TensorF init_zeros(std::vector<int64_t> shape) { return TensorF::zeros(std::move(shape), true); }

TensorF init_ones(int64_t n) {
  return TensorF::leaf({n}, std::vector<float>(n, 1.0f), true);
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg), dropout_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const int64_t nd = cfg_.hidden_dim;
  auto push = [&](const std::string& name, TensorF t) {
    params_.push_back({name, std::move(t), true});
  };
  push("tok_emb", init_matrix(rng, cfg_.vocab_size, nd));
  push("pos_emb", init_matrix(rng, cfg_.max_seq, nd));
  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    push(p + "ln1.gain", init_ones(nd));
    push(p + "ln1.bias", init_zeros({nd}));
    push(p + "attn.wq", init_matrix(rng, nd, nd));
    push(p + "attn.bq", init_zeros({nd}));
    push(p + "attn.wk", init_matrix(rng, nd, nd));
    push(p + "attn.bk", init_zeros({nd}));
    push(p + "attn.wv", init_matrix(rng, nd, nd));
    push(p + "attn.bv", init_zeros({nd}));
    push(p + "attn.wo", init_matrix(rng, nd, nd));
    push(p + "attn.bo", init_zeros({nd}));
    push(p + "ln2.gain", init_ones(nd));
    push(p + "ln2.bias", init_zeros({nd}));
    push(p + "ffn.w1", init_matrix(rng, nd, 4 * nd));
    push(p + "ffn.b1", init_zeros({4 * nd}));
    push(p + "ffn.w2", init_matrix(rng, 4 * nd, nd));
    push(p + "ffn.b2", init_zeros({nd}));
  }
  push("final_ln.gain", init_ones(nd));
  push("final_ln.bias", init_zeros({nd}));
  push("lm_head", init_matrix(rng, nd, cfg_.vocab_size));
}

TensorF& Model::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.t;
  throw std::logic_error("model: unknown parameter " + name);
}

const TensorF& Model::find(const std::string& name) const {
  return const_cast<Model*>(this)->find(name);
}

void Model::attach_lora(const LoraConfig& lc) {
  if (lora_) throw std::logic_error("attach_lora: adapters already attached");
  const int64_t nd = cfg_.hidden_dim;
  if (lc.rank < 1 || lc.rank > nd) throw std::invalid_argument("lora: rank out of range");
  if (lc.dropout < 0.0f || lc.dropout >= 1.0f)
    throw std::invalid_argument("lora: dropout out of range");
  for (auto& p : params_) {
    p.trainable = false;
    p.t.impl()->requires_grad = false;  // the tape skips frozen base weights
  }
  Rng rng(cfg_.seed ^ 0x517cc1b727220a95ULL);
  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    for (const auto& tgt : lc.targets) {
      const std::string p = "layer" + std::to_string(l) + ".lora." + tgt + ".";
      // B starts at zero so adapters are identity deltas at attach time
      params_.push_back({p + "A", init_matrix(rng, nd, lc.rank), true});
      params_.push_back({p + "B", init_zeros({lc.rank, nd}), true});
    }
  }
  lora_ = lc;
}

TensorF Model::project(const TensorF& x, int layer, const std::string& role) {
  const std::string p = "layer" + std::to_string(layer) + ".";
  const std::string wname = p + "attn.w" + role.substr(0, 1);
  auto out = add_row(matmul(x, find(wname)), find(p + "attn.b" + role.substr(0, 1)));
  if (lora_ && std::find(lora_->targets.begin(), lora_->targets.end(), role) !=
                   lora_->targets.end()) {
    const std::string lp = p + "lora." + role + ".";
    TensorF in = x;
    if (train_mode_ && lora_->dropout > 0.0f) {
      auto mask = TensorF::zeros(x.shape());
      const float keep = 1.0f - lora_->dropout;
      for (auto& m : mask.values())
        m = dropout_rng_.uniform() < keep ? 1.0f / keep : 0.0f;
      in = mul(x, mask);
    }
    const float s = lora_->alpha / static_cast<float>(lora_->rank);
    out = add(out, scale(matmul(matmul(in, find(lp + "A")), find(lp + "B")), s));
  }
  return out;
}

ForwardResult Model::forward(const std::vector<int64_t>& tokens, int64_t batch, int64_t time) {
  if (static_cast<int64_t>(tokens.size()) != batch * time)
    throw std::invalid_argument("forward: token count != batch*time");
  if (time > cfg_.max_seq) throw std::invalid_argument("forward: sequence too long");
  for (int64_t t : tokens)
    if (t < 0 || t >= cfg_.vocab_size) throw std::out_of_range("forward: token id out of range");

  std::vector<int64_t> pos(batch * time);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t t = 0; t < time; ++t) pos[b * time + t] = t;

  auto h = add(embedding(find("tok_emb"), tokens), embedding(find("pos_emb"), pos));
  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto x = layer_norm_rows(h, find(p + "ln1.gain"), find(p + "ln1.bias"));
    auto q = project(x, l, "query");
    auto k = project(x, l, "key");
    auto v = project(x, l, "value");
    auto attn = causal_self_attention(q, k, v, batch, time, cfg_.n_heads);
    h = add(h, add_row(matmul(attn, find(p + "attn.wo")), find(p + "attn.bo")));
    auto y = layer_norm_rows(h, find(p + "ln2.gain"), find(p + "ln2.bias"));
    auto ff = add_row(matmul(gelu(add_row(matmul(y, find(p + "ffn.w1")), find(p + "ffn.b1"))),
                             find(p + "ffn.w2")),
                      find(p + "ffn.b2"));
    h = add(h, ff);
  }
  auto hidden = layer_norm_rows(h, find("final_ln.gain"), find("final_ln.bias"));
  auto logits = matmul(hidden, find("lm_head"));
  // present the (B, T, ...) view
  hidden.impl()->shape = {batch, time, cfg_.hidden_dim};
  logits.impl()->shape = {batch, time, cfg_.vocab_size};
  return {logits, hidden};
}

std::vector<TensorF> Model::trainable_params() const {
  std::vector<TensorF> out;
  for (const auto& p : params_)
    if (p.trainable) out.push_back(p.t);
  return out;
}

std::vector<TensorF> Model::all_params() const {
  std::vector<TensorF> out;
  for (const auto& p : params_) out.push_back(p.t);
  return out;
}

int64_t Model::param_count(bool trainable_only) const {
  int64_t n = 0;
  for (const auto& p : params_)
    if (!trainable_only || p.trainable) n += p.t.numel();
  return n;
}

WeightVector Model::flatten_weights() const {
  WeightVector wv;
  int64_t off = 0;
  for (const auto& p : params_) {
    if (!p.trainable) continue;
    wv.manifest.push_back({p.name, p.t.shape(), off});
    wv.data.insert(wv.data.end(), p.t.values().begin(), p.t.values().end());
    off += p.t.numel();
  }
  return wv;
}

void Model::load_weights(const WeightVector& wv) {
  auto mine = flatten_weights();
  if (!mine.manifest_matches(wv))
    throw std::invalid_argument("load_weights: manifest mismatch");
  if (wv.data.size() != mine.data.size())
    throw std::invalid_argument("load_weights: payload length mismatch");
  for (auto& p : params_) {
    if (!p.trainable) continue;
    for (const auto& e : wv.manifest) {
      if (e.name == p.name) {
        std::copy(wv.data.begin() + e.offset, wv.data.begin() + e.offset + p.t.numel(),
                  p.t.values().begin());
        break;
      }
    }
  }
}

TensorF Model::lm_head() const { return find("lm_head"); }

uint64_t Model::fingerprint() const {
  uint64_t h = fnv1a(&cfg_.n_layers, sizeof(cfg_.n_layers));
  h = fnv1a(&cfg_.hidden_dim, sizeof(cfg_.hidden_dim), h);
  h = fnv1a(&cfg_.vocab_size, sizeof(cfg_.vocab_size), h);
  for (const auto& p : params_)
    h = fnv1a(p.t.values().data(), p.t.values().size() * sizeof(float), h);
  return h;
}

Model Model::clone() const {
  Model m(cfg_);
  if (lora_) m.attach_lora(*lora_);
  for (size_t i = 0; i < params_.size(); ++i) m.params_[i].t.values() = params_[i].t.values();
  return m;
}

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  json header;
  header["magic"] = "GERE-CKPT";
  header["version"] = 1;
  header["dtype"] = "f32le";
  header["config"] = {{"n_layers", cfg_.n_layers}, {"hidden_dim", cfg_.hidden_dim},
                      {"n_heads", cfg_.n_heads},   {"vocab_size", cfg_.vocab_size},
                      {"max_seq", cfg_.max_seq},   {"seed", cfg_.seed}};
  if (lora_)
    header["lora"] = {{"rank", lora_->rank},
                      {"alpha", lora_->alpha},
                      {"dropout", lora_->dropout},
                      {"targets", lora_->targets}};
  json manifest = json::array();
  int64_t total = 0;
  for (const auto& p : params_) {
    manifest.push_back({{"name", p.name}, {"shape", p.t.shape()}, {"offset", total},
                        {"trainable", p.trainable}});
    total += p.t.numel();
  }
  header["params"] = manifest;
  header["total"] = total;
  f << header.dump() << "\n";
  for (const auto& p : params_)
    f.write(reinterpret_cast<const char*>(p.t.values().data()),
            static_cast<std::streamsize>(p.t.values().size() * sizeof(float)));
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_checkpoint: missing header");
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("magic", "") != "GERE-CKPT")
    throw std::runtime_error("load_checkpoint: bad header in " + path);
  if (header.value("version", 0) != 1)
    throw std::runtime_error("load_checkpoint: unsupported version");
  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.n_layers = jc.at("n_layers");
  cfg.hidden_dim = jc.at("hidden_dim");
  cfg.n_heads = jc.at("n_heads");
  cfg.vocab_size = jc.at("vocab_size");
  cfg.max_seq = jc.at("max_seq");
  cfg.seed = jc.at("seed");
  Model m(cfg);
  if (header.contains("lora")) {
    LoraConfig lc;
    const auto& jl = header["lora"];
    lc.rank = jl.at("rank");
    lc.alpha = jl.at("alpha");
    lc.dropout = jl.at("dropout");
    lc.targets = jl.at("targets").get<std::vector<std::string>>();
    m.attach_lora(lc);
  }
  for (auto& p : m.params_) {
    f.read(reinterpret_cast<char*>(p.t.values().data()),
           static_cast<std::streamsize>(p.t.values().size() * sizeof(float)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated payload");
  }
  return m;
}

}  // namespace gere
