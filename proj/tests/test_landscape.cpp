#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "gere/landscape.hpp"

using namespace gere;

namespace {

ModelConfig land_cfg() {
  ModelConfig c;
  c.n_layers = 1;
  c.hidden_dim = 16;
  c.n_heads = 2;
  c.vocab_size = 32;
  c.max_seq = 12;
  c.seed = 3;
  return c;
}

WeightVector filled(const Model& proto, float v) {
  auto wv = proto.flatten_weights();
  for (auto& x : wv.data) x = v;
  return wv;
}

}  // namespace

TEST_CASE("basis frame arithmetic") {
  Model proto(land_cfg());
  auto base = filled(proto, 0.0f);
  auto x = filled(proto, 1.0f);
  auto y = filled(proto, 2.0f);
  auto frame = basis_frame(base, x, y);
  for (float u : frame.u) CHECK(u == 1.0f);
  for (float v : frame.v) CHECK(v == 2.0f);

  auto mid = weights_at(frame, 0.6, 0.4);
  for (float w : mid.data) CHECK(w == doctest::Approx(1.4f).epsilon(1e-6));
  auto corner11 = weights_at(frame, 1.0, 1.0);
  for (size_t i = 0; i < corner11.data.size(); ++i)
    CHECK(corner11.data[i] == doctest::Approx(x.data[i] + y.data[i] - base.data[i]));

  auto bad = base;
  std::swap(bad.manifest[0], bad.manifest[1]);
  CHECK_THROWS(basis_frame(bad, x, y));
}

TEST_CASE("integer corners reconstruct the checkpoints bit-exactly") {
  Model a(land_cfg());
  auto cfg_b = land_cfg();
  cfg_b.seed = 4;
  auto cfg_c = land_cfg();
  cfg_c.seed = 5;
  Model b(cfg_b), c(cfg_c);
  auto frame = basis_frame(a.flatten_weights(), b.flatten_weights(), c.flatten_weights());
  CHECK(weights_at(frame, 0.0, 0.0).data == a.flatten_weights().data);
  CHECK(weights_at(frame, 1.0, 0.0).data == b.flatten_weights().data);
  CHECK(weights_at(frame, 0.0, 1.0).data == c.flatten_weights().data);
}

TEST_CASE("grid evaluation: shape, corner metrics, transpose symmetry") {
  Model a(land_cfg());
  auto cfg_b = land_cfg();
  cfg_b.seed = 4;
  auto cfg_c = land_cfg();
  cfg_c.seed = 5;
  Model b(cfg_b), c(cfg_c);

  ReplayPool pool;
  Rng rng(8);
  for (int i = 0; i < 6; ++i) {
    std::vector<int64_t> toks(10);
    for (auto& t : toks) t = 1 + rng.below(30);
    pool.samples.push_back({toks});
  }
  EvalInputs inputs;
  inputs.pool = &pool;

  GridSpec spec;
  spec.x0 = 0.0;
  spec.x1 = 1.0;
  spec.y0 = 0.0;
  spec.y1 = 1.0;
  spec.nx = 3;
  spec.ny = 3;
  auto frame = basis_frame(a.flatten_weights(), b.flatten_weights(), c.flatten_weights());
  Model scratch(land_cfg());
  auto grid = eval_grid(frame, spec, scratch, inputs);
  REQUIRE(grid.size() == 9);

  // corners match direct evaluation of the source models exactly
  auto direct = [&](Model& m) { return evaluate_replay_ce(m, pool); };
  CHECK(grid[0].a == 0.0);
  CHECK(grid[0].b == 0.0);
  CHECK(grid[0].value == direct(a));
  // row-major over y then x: (1,0) is the last column of the first row
  CHECK(grid[2].a == 1.0);
  CHECK(grid[2].b == 0.0);
  CHECK(grid[2].value == direct(b));
  CHECK(grid[6].a == 0.0);
  CHECK(grid[6].b == 1.0);
  CHECK(grid[6].value == direct(c));
  for (const auto& p : grid) CHECK(p.finite);

  // swapping the axis models transposes the surface
  auto framed = basis_frame(a.flatten_weights(), c.flatten_weights(), b.flatten_weights());
  auto grid_t = eval_grid(framed, spec, scratch, inputs);
  for (int64_t iy = 0; iy < 3; ++iy)
    for (int64_t ix = 0; ix < 3; ++ix)
      CHECK(grid[iy * 3 + ix].value == doctest::Approx(grid_t[ix * 3 + iy].value).epsilon(1e-6));
}

TEST_CASE("grid csv output format") {
  namespace fs = std::filesystem;
  std::vector<GridPoint> grid = {{0.0, 0.0, 1.5, true}, {0.25, 0.0, 2.0, true}};
  auto dir = fs::temp_directory_path() / "gere_land_test";
  fs::create_directories(dir);
  auto path = (dir / "g.csv").string();
  save_grid_csv(grid, GridMetric::ReplayCE, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "a,b,metric,value");
  std::getline(f, line);
  CHECK(line.rfind("0.000000,0.000000,replay_ce,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("grid spec validation and metric parsing") {
  GridSpec s;
  s.x1 = s.x0;
  CHECK_THROWS(s.validate());
  s = {};
  s.nx = 1;
  CHECK_THROWS(s.validate());
  CHECK(parse_grid_metric("replay_ce") == GridMetric::ReplayCE);
  CHECK(parse_grid_metric("general_score") == GridMetric::GeneralScore);
  CHECK_THROWS(parse_grid_metric("nope"));
}
