// Weight-space forgetting landscape: basis vectors from three checkpoints,
// models materialized at linear-combination grid points, contour metrics.
#pragma once

#include <string>
#include <vector>

#include "gere/harness.hpp"
#include "gere/model.hpp"

namespace gere {

enum class GridMetric { ReplayCE, GeneralScore };

GridMetric parse_grid_metric(const std::string& s);

struct GridSpec {
  double x0 = -0.25, x1 = 1.5;
  double y0 = -0.25, y1 = 1.5;
  int64_t nx = 25, ny = 25;
  GridMetric metric = GridMetric::ReplayCE;

  void validate() const;
};

struct BasisFrame {
  WeightVector base;
  std::vector<float> u;  // w_x - w_base
  std::vector<float> v;  // w_y - w_base
  WeightVector wx, wy;   // kept for bit-exact corner reconstruction
};

BasisFrame basis_frame(const WeightVector& base, const WeightVector& model_x,
                       const WeightVector& model_y);

// weights = base + a*u + b*v; integer corners reproduce the source
// checkpoints bit-exactly.
WeightVector weights_at(const BasisFrame& frame, double a, double b);

void model_at(const BasisFrame& frame, double a, double b, Model& scratch);

struct GridPoint {
  double a = 0.0, b = 0.0;
  double value = 0.0;
  bool finite = true;
};

struct EvalInputs {
  const ReplayPool* pool = nullptr;                       // ReplayCE
  const std::vector<std::vector<int64_t>>* heldout = nullptr;  // GeneralScore
};

std::vector<GridPoint> eval_grid(const BasisFrame& frame, const GridSpec& spec, Model& scratch,
                                 const EvalInputs& inputs);

void save_grid_csv(const std::vector<GridPoint>& grid, GridMetric metric,
                   const std::string& path);

}  // namespace gere
