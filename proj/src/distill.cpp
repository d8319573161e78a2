#include "gere/distill.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace gere {

using json = nlohmann::json;

HiddenTargetArchive distill(Model& model, const ReplayPool& pool) {
  HiddenTargetArchive archive;
  archive.n_dims = model.config().hidden_dim;
  archive.model_fingerprint = model.fingerprint();
  const bool was_training = model.train_mode();
  model.set_train(false);
  for (const auto& s : pool.samples) {
    for (int64_t t : s.tokens)
      if (t < 0 || t >= model.config().vocab_size)
        throw std::invalid_argument("distill: sample token outside model vocab");
    const int64_t nt = static_cast<int64_t>(s.tokens.size());
    auto out = model.forward(s.tokens, 1, nt);  // no tape: forward only
    archive.targets.push_back(out.last_hidden.values());
    archive.token_counts.push_back(nt);
  }
  model.set_train(was_training);
  return archive;
}

ActivationStats compute_stats(const HiddenTargetArchive& archive) {
  if (archive.size() == 0) throw std::invalid_argument("compute_stats: empty archive");
  const int64_t nd = archive.n_dims;
  // two-pass, 64-bit accumulation, fixed left-to-right order
  std::vector<double> sum(nd, 0.0), sq(nd, 0.0);
  int64_t count = 0;
  for (size_t i = 0; i < archive.targets.size(); ++i) {
    const auto& m = archive.targets[i];
    const int64_t nt = archive.token_counts[i];
    for (int64_t j = 0; j < nt; ++j)
      for (int64_t k = 0; k < nd; ++k) sum[k] += static_cast<double>(m[j * nd + k]);
    count += nt;
  }
  std::vector<double> mean(nd);
  for (int64_t k = 0; k < nd; ++k) mean[k] = sum[k] / static_cast<double>(count);
  for (size_t i = 0; i < archive.targets.size(); ++i) {
    const auto& m = archive.targets[i];
    const int64_t nt = archive.token_counts[i];
    for (int64_t j = 0; j < nt; ++j)
      for (int64_t k = 0; k < nd; ++k) {
        const double d = static_cast<double>(m[j * nd + k]) - mean[k];
        sq[k] += d * d;
      }
  }
  ActivationStats stats;
  stats.count = count;
  stats.mean.resize(nd);
  stats.stddev.resize(nd);
  for (int64_t k = 0; k < nd; ++k) {
    stats.mean[k] = static_cast<float>(mean[k]);
    // population variance: divide by the full count
    stats.stddev[k] = static_cast<float>(std::sqrt(sq[k] / static_cast<double>(count)));
  }
  return stats;
}

Thresholds thresholds(const ActivationStats& stats) {
  Thresholds t;
  const size_t nd = stats.mean.size();
  t.mean = stats.mean;
  t.stddev = stats.stddev;
  t.tau_minus.resize(nd);
  t.tau_plus.resize(nd);
  for (size_t k = 0; k < nd; ++k) {
    t.tau_minus[k] = stats.mean[k] - stats.stddev[k];
    t.tau_plus[k] = stats.mean[k] + stats.stddev[k];
  }
  return t;
}

ActivationState classify_state(double value, double tau_minus, double tau_plus) {
  if (std::isnan(value)) throw std::invalid_argument("classify_state: NaN value");
  if (value < tau_minus) return ActivationState::NegativelyActivated;
  if (value > tau_plus) return ActivationState::PositivelyActivated;
  return ActivationState::NonActivated;  // boundaries inclusive
}

std::vector<uint8_t> pack_states(const std::vector<ActivationState>& states) {
  std::vector<uint8_t> bytes((states.size() + 3) / 4, 0);
  for (size_t i = 0; i < states.size(); ++i)
    bytes[i / 4] |= static_cast<uint8_t>(states[i]) << (2 * (i % 4));
  return bytes;
}

std::vector<ActivationState> unpack_states(const std::vector<uint8_t>& bytes, int64_t count) {
  if (static_cast<int64_t>(bytes.size()) < (count + 3) / 4)
    throw std::invalid_argument("unpack_states: byte buffer too short");
  std::vector<ActivationState> states(count);
  for (int64_t i = 0; i < count; ++i) {
    const uint8_t code = (bytes[i / 4] >> (2 * (i % 4))) & 0x3;
    if (code == 3) throw std::invalid_argument("unpack_states: reserved code 3");
    states[i] = static_cast<ActivationState>(code);
  }
  return states;
}

void save_archive(const HiddenTargetArchive& a, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_archive: cannot open " + path);
  json header = {{"magic", "GERE-HTA"},
                 {"version", 1},
                 {"n_dims", a.n_dims},
                 {"n_samples", a.size()},
                 {"dtype", "f32le"},
                 {"model_fingerprint", a.model_fingerprint}};
  f << header.dump() << "\n";
  for (size_t i = 0; i < a.targets.size(); ++i) {
    const uint32_t nt = static_cast<uint32_t>(a.token_counts[i]);
    f.write(reinterpret_cast<const char*>(&nt), 4);
    f.write(reinterpret_cast<const char*>(a.targets[i].data()),
            static_cast<std::streamsize>(a.targets[i].size() * sizeof(float)));
  }
}

HiddenTargetArchive load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_archive: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_archive: missing header");
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("magic", "") != "GERE-HTA")
    throw std::runtime_error("load_archive: bad header in " + path);
  if (header.value("version", 0) != 1)
    throw std::runtime_error("load_archive: unsupported version");
  HiddenTargetArchive a;
  a.n_dims = header.at("n_dims");
  a.model_fingerprint = header.at("model_fingerprint");
  const int64_t n = header.at("n_samples");
  for (int64_t i = 0; i < n; ++i) {
    uint32_t nt = 0;
    f.read(reinterpret_cast<char*>(&nt), 4);
    if (!f) throw std::runtime_error("load_archive: truncated sample header");
    std::vector<float> m(static_cast<size_t>(nt) * a.n_dims);
    f.read(reinterpret_cast<char*>(m.data()),
           static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!f) throw std::runtime_error("load_archive: truncated payload");
    a.targets.push_back(std::move(m));
    a.token_counts.push_back(nt);
  }
  return a;
}

void save_thresholds(const Thresholds& t, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_thresholds: cannot open " + path);
  json doc = {{"magic", "GERE-THR"}, {"version", 1},         {"n_dims", t.dims()},
              {"tau_minus", t.tau_minus}, {"tau_plus", t.tau_plus}, {"mean", t.mean},
              {"std", t.stddev}};
  f << doc.dump() << "\n";
}

Thresholds load_thresholds(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_thresholds: cannot open " + path);
  json doc = json::parse(f, nullptr, false);
  if (doc.is_discarded() || doc.value("magic", "") != "GERE-THR")
    throw std::runtime_error("load_thresholds: bad header in " + path);
  if (doc.value("version", 0) != 1)
    throw std::runtime_error("load_thresholds: unsupported version");
  Thresholds t;
  t.tau_minus = doc.at("tau_minus").get<std::vector<float>>();
  t.tau_plus = doc.at("tau_plus").get<std::vector<float>>();
  t.mean = doc.at("mean").get<std::vector<float>>();
  t.stddev = doc.at("std").get<std::vector<float>>();
  if (t.dims() != doc.at("n_dims").get<int64_t>())
    throw std::runtime_error("load_thresholds: n_dims disagrees with payload");
  return t;
}

void save_packed_states(const HiddenTargetArchive& a, const Thresholds& t,
                        const std::string& path) {
  if (t.dims() != a.n_dims)
    throw std::invalid_argument("save_packed_states: dimension mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_packed_states: cannot open " + path);
  std::vector<int64_t> counts;
  std::vector<uint8_t> payload;
  for (size_t i = 0; i < a.targets.size(); ++i) {
    const auto& m = a.targets[i];
    std::vector<ActivationState> states(m.size());
    for (size_t j = 0; j < m.size(); ++j) {
      const int64_t k = static_cast<int64_t>(j) % a.n_dims;
      states[j] = classify_state(m[j], t.tau_minus[k], t.tau_plus[k]);
    }
    counts.push_back(static_cast<int64_t>(states.size()));
    auto b = pack_states(states);
    payload.insert(payload.end(), b.begin(), b.end());
  }
  json header = {{"magic", "GERE-PST"}, {"version", 1}, {"counts", counts}};
  f << header.dump() << "\n";
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
}

}  // namespace gere
