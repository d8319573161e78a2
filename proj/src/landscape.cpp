#include "gere/landscape.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace gere {

GridMetric parse_grid_metric(const std::string& s) {
  if (s == "replay_ce") return GridMetric::ReplayCE;
  if (s == "general_score") return GridMetric::GeneralScore;
  throw std::invalid_argument("unknown grid metric: " + s);
}

void GridSpec::validate() const {
  if (!(x0 < x1) || !(y0 < y1)) throw std::invalid_argument("grid: empty range");
  if (nx < 2 || ny < 2) throw std::invalid_argument("grid: resolution must be >= 2");
}

BasisFrame basis_frame(const WeightVector& base, const WeightVector& model_x,
                       const WeightVector& model_y) {
  if (!base.manifest_matches(model_x) || !base.manifest_matches(model_y))
    throw std::invalid_argument("basis_frame: checkpoint manifests differ");
  BasisFrame f;
  f.base = base;
  f.wx = model_x;
  f.wy = model_y;
  f.u.resize(base.data.size());
  f.v.resize(base.data.size());
  for (size_t i = 0; i < base.data.size(); ++i) {
    f.u[i] = model_x.data[i] - base.data[i];
    f.v[i] = model_y.data[i] - base.data[i];
  }
  return f;
}

WeightVector weights_at(const BasisFrame& frame, double a, double b) {
  // frame contract: the three defining corners reconstruct bit-exactly
  if (a == 0.0 && b == 0.0) return frame.base;
  if (a == 1.0 && b == 0.0) return frame.wx;
  if (a == 0.0 && b == 1.0) return frame.wy;
  WeightVector w = frame.base;
  for (size_t i = 0; i < w.data.size(); ++i)
    w.data[i] = static_cast<float>(static_cast<double>(frame.base.data[i]) +
                                   a * static_cast<double>(frame.u[i]) +
                                   b * static_cast<double>(frame.v[i]));
  return w;
}

void model_at(const BasisFrame& frame, double a, double b, Model& scratch) {
  scratch.load_weights(weights_at(frame, a, b));
}

std::vector<GridPoint> eval_grid(const BasisFrame& frame, const GridSpec& spec, Model& scratch,
                                 const EvalInputs& inputs) {
  spec.validate();
  if (spec.metric == GridMetric::ReplayCE && inputs.pool == nullptr)
    throw std::invalid_argument("eval_grid: replay_ce needs a replay pool");
  if (spec.metric == GridMetric::GeneralScore && inputs.heldout == nullptr)
    throw std::invalid_argument("eval_grid: general_score needs a heldout corpus");
  std::vector<GridPoint> out;
  out.reserve(spec.nx * spec.ny);
  for (int64_t iy = 0; iy < spec.ny; ++iy) {
    const double b = spec.y0 + (spec.y1 - spec.y0) * static_cast<double>(iy) /
                                   static_cast<double>(spec.ny - 1);
    for (int64_t ix = 0; ix < spec.nx; ++ix) {
      const double a = spec.x0 + (spec.x1 - spec.x0) * static_cast<double>(ix) /
                                     static_cast<double>(spec.nx - 1);
      model_at(frame, a, b, scratch);
      GridPoint p;
      p.a = a;
      p.b = b;
      try {
        p.value = spec.metric == GridMetric::ReplayCE
                      ? evaluate_replay_ce(scratch, *inputs.pool)
                      : evaluate_general(scratch, *inputs.heldout);
        p.finite = std::isfinite(p.value);
      } catch (const std::exception&) {
        p.finite = false;  // recorded, not fatal
      }
      out.push_back(p);
    }
  }
  return out;
}

void save_grid_csv(const std::vector<GridPoint>& grid, GridMetric metric,
                   const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_grid_csv: cannot open " + path);
  const char* name = metric == GridMetric::ReplayCE ? "replay_ce" : "general_score";
  f << "a,b,metric,value\n";
  for (const auto& p : grid) {
    f << std::fixed << std::setprecision(6) << p.a << "," << p.b << "," << name << ",";
    if (p.finite)
      f << std::setprecision(10) << std::defaultfloat << p.value;
    else
      f << "nan";
    f << "\n";
  }
}

}  // namespace gere
