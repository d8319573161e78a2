// Python bindings for the main numeric operations.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>

#include "gere/distill.hpp"
#include "gere/harness.hpp"
#include "gere/losses.hpp"
#include "gere/scheduler.hpp"

namespace py = pybind11;
using namespace gere;

namespace {

Thresholds make_thresholds(std::vector<float> tau_minus, std::vector<float> tau_plus) {
  if (tau_minus.size() != tau_plus.size())
    throw std::invalid_argument("threshold arrays must have equal length");
  Thresholds t;
  t.tau_minus = std::move(tau_minus);
  t.tau_plus = std::move(tau_plus);
  t.mean.assign(t.tau_minus.size(), 0.0f);
  t.stddev.assign(t.tau_minus.size(), 0.0f);
  for (size_t k = 0; k < t.tau_minus.size(); ++k) {
    t.mean[k] = 0.5f * (t.tau_minus[k] + t.tau_plus[k]);
    t.stddev[k] = 0.5f * (t.tau_plus[k] - t.tau_minus[k]);
  }
  return t;
}

double tm_loss_py(const std::vector<double>& pred, const std::vector<double>& target,
                  const std::vector<float>& tau_minus, const std::vector<float>& tau_plus) {
  const auto nd = static_cast<int64_t>(tau_minus.size());
  if (pred.size() != target.size() || pred.size() % nd != 0)
    throw std::invalid_argument("pred/target must be rows x dims");
  const int64_t rows = static_cast<int64_t>(pred.size()) / nd;
  auto p = Tensor<double>::leaf({rows, nd}, pred);
  return tm_loss(p, target, make_thresholds(tau_minus, tau_plus),
                 std::vector<double>(rows, 1.0))
      .item();
}

double feature_loss_py(const std::vector<double>& pred, const std::vector<double>& target,
                       int64_t dims, bool l2) {
  if (pred.size() != target.size() || dims < 1 || pred.size() % dims != 0)
    throw std::invalid_argument("pred/target must be rows x dims");
  const int64_t rows = static_cast<int64_t>(pred.size()) / dims;
  auto p = Tensor<double>::leaf({rows, dims}, pred);
  std::vector<double> mask(rows, 1.0);
  return l2 ? l2_feature_loss(p, target, mask).item()
            : l1_feature_loss(p, target, mask).item();
}

double kl_loss_py(const std::vector<double>& pred_logits,
                  const std::vector<double>& target_logits, int64_t vocab, double temperature) {
  if (pred_logits.size() != target_logits.size() || pred_logits.size() % vocab != 0)
    throw std::invalid_argument("logits must be rows x vocab");
  const int64_t rows = static_cast<int64_t>(pred_logits.size()) / vocab;
  auto p = Tensor<double>::leaf({rows, vocab}, pred_logits);
  return kl_logit_loss(p, target_logits, temperature, std::vector<double>(rows, 1.0)).item();
}

py::tuple combine_py(double ce, double aux, const std::string& strategy) {
  auto bundle = combine_losses(Tensor<double>::scalar(ce), Tensor<double>::scalar(aux),
                               WeightStrategy::parse(strategy));
  return py::make_tuple(bundle.total.item(), bundle.weight_used);
}

py::list plan_to_list(const BatchPlan& plan) {
  py::list batches;
  for (const auto& b : plan.batches) {
    py::list entries;
    for (const auto& e : b)
      entries.append(py::make_tuple(e.source == SampleSource::Replay ? "replay" : "task",
                                    e.index));
    batches.append(entries);
  }
  return batches;
}

}  // namespace

PYBIND11_MODULE(_gere, m) {
  m.doc() = "GeRe continual-learning core operations";

  py::enum_<ActivationState>(m, "ActivationState")
      .value("NonActivated", ActivationState::NonActivated)
      .value("PositivelyActivated", ActivationState::PositivelyActivated)
      .value("NegativelyActivated", ActivationState::NegativelyActivated);

  m.def("f1_avg", &f1_avg, py::arg("general"), py::arg("ap"));
  m.def("replay_count", &replay_count, py::arg("rho"), py::arg("batch_size"));
  m.def("classify_state", &classify_state, py::arg("value"), py::arg("tau_minus"),
        py::arg("tau_plus"));
  m.def("pack_states",
        [](const std::vector<ActivationState>& s) { return py::bytes(
              reinterpret_cast<const char*>(pack_states(s).data()), (s.size() + 3) / 4); },
        py::arg("states"));
  m.def("unpack_states",
        [](const py::bytes& b, int64_t count) {
          const std::string s = b;
          return unpack_states(std::vector<uint8_t>(s.begin(), s.end()), count);
        },
        py::arg("data"), py::arg("count"));
  m.def("tm_loss", &tm_loss_py, py::arg("pred"), py::arg("target"), py::arg("tau_minus"),
        py::arg("tau_plus"));
  m.def("l1_feature_loss",
        [](const std::vector<double>& p, const std::vector<double>& t, int64_t d) {
          return feature_loss_py(p, t, d, false);
        },
        py::arg("pred"), py::arg("target"), py::arg("dims"));
  m.def("l2_feature_loss",
        [](const std::vector<double>& p, const std::vector<double>& t, int64_t d) {
          return feature_loss_py(p, t, d, true);
        },
        py::arg("pred"), py::arg("target"), py::arg("dims"));
  m.def("kl_logit_loss", &kl_loss_py, py::arg("pred_logits"), py::arg("target_logits"),
        py::arg("vocab"), py::arg("temperature"));
  m.def("combine_losses", &combine_py, py::arg("ce"), py::arg("aux"), py::arg("strategy"));
  m.def("plan_bi",
        [](int64_t task, int64_t pool, int64_t batch, double rho, uint64_t seed,
           int64_t epochs) {
          ReplayCycler cycler(pool, seed);
          py::list out;
          for (int64_t e = 0; e < epochs; ++e)
            for (auto b : plan_to_list(plan_bi(task, pool, batch, rho, cycler, seed + e)))
              out.append(b);
          return out;
        },
        py::arg("task_size"), py::arg("pool_size"), py::arg("batch_size"), py::arg("rho"),
        py::arg("seed"), py::arg("epochs") = 1);
  m.def("plan_vanilla_mix",
        [](int64_t task, int64_t pool, int64_t batch, uint64_t seed) {
          return plan_to_list(plan_vanilla_mix(task, pool, batch, seed));
        },
        py::arg("task_size"), py::arg("pool_size"), py::arg("batch_size"), py::arg("seed"));
}
