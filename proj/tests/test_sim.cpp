#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <deque>
#include <set>

#include "cali/sim.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cali;

namespace {

constexpr double kPi = 3.14159265358979323846;

// 4-connected reachability oracle over navigable cells, independent of the
// generator's internal check.
bool bfs_connected(const World& w, const Pose2& a, const Pose2& b) {
  int r0, c0, r1, c1;
  if (!cell_of(w, a.x, a.y, r0, c0) || !cell_of(w, b.x, b.y, r1, c1)) return false;
  auto open = [&](int r, int c) { return w.navigable[w.grid.at(r, c)] != 0; };
  if (!open(r0, c0) || !open(r1, c1)) return false;
  BoolMap seen(w.grid.rows, w.grid.cols, 0);
  std::deque<std::pair<int, int>> q{{r0, c0}};
  seen.at(r0, c0) = 1;
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop_front();
    if (r == r1 && c == c1) return true;
    const int dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
    for (int i = 0; i < 4; ++i) {
      int rr = r + dr[i], cc = c + dc[i];
      if (!w.grid.in_bounds(rr, cc) || seen.at(rr, cc) || !open(rr, cc)) continue;
      seen.at(rr, cc) = 1;
      q.emplace_back(rr, cc);
    }
  }
  return false;
}

// Flat-floor world with an obstacle rim, start/goal placed by the caller.
World hand_world(int rows, int cols) {
  World w;
  w.k = 3;
  w.resolution = 0.1;
  w.navigable = {1, 0, 1};
  w.grid = ClassMap(rows, cols, 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (r < 2 || r >= rows - 2 || c < 2 || c >= cols - 2) w.grid.at(r, c) = 1;
  return w;
}

std::vector<double> pose_gaps(const World& w, const EpisodeLog& log) {
  std::vector<double> gaps;
  Pose2 prev = w.start;
  for (const EpisodeStep& s : log.steps) {
    gaps.push_back(std::hypot(s.pose.x - prev.x, s.pose.y - prev.y));
    prev = s.pose;
  }
  return gaps;
}

}  // namespace

TEST_CASE("world: cell lookup and validation") {
  World w = hand_world(20, 30);
  w.start = make_pose(0.5, 0.5, 0.0);
  w.goal = make_pose(2.5, 1.5, 0.0);

  int r = -1, c = -1;
  CHECK(cell_of(w, 0.05, 0.05, r, c));
  CHECK(r == 0);
  CHECK(c == 0);
  CHECK(cell_of(w, 2.95, 1.95, r, c));
  CHECK(r == 19);
  CHECK(c == 29);
  CHECK_FALSE(cell_of(w, 3.05, 1.0, r, c));
  CHECK_FALSE(cell_of(w, 1.0, -0.01, r, c));

  CHECK(is_navigable_at(w, 0.5, 0.5));
  CHECK_FALSE(is_navigable_at(w, 0.05, 0.05));  // border rim
  CHECK_FALSE(is_navigable_at(w, -1.0, 0.5));   // off-grid

  CHECK_NOTHROW(validate_world(w));
  SUBCASE("table size must match k") {
    w.navigable = {1, 0};
    CHECK_THROWS_AS(validate_world(w), ConfigError);
  }
  SUBCASE("grid classes must stay below k") {
    w.grid.at(5, 5) = 7;
    CHECK_THROWS_AS(validate_world(w), ValidationError);
  }
  SUBCASE("start must be navigable") {
    w.start = make_pose(0.05, 0.05, 0.0);
    CHECK_THROWS_AS(validate_world(w), ConfigError);
  }
  SUBCASE("goal must be navigable") {
    w.goal = make_pose(0.05, 0.05, 0.0);
    CHECK_THROWS_AS(validate_world(w), ConfigError);
  }
}

TEST_CASE("world generators: structure, determinism, variety") {
  SUBCASE("open world is floor inside an obstacle rim") {
    WorldSpec spec;
    World w = make_open_world(spec);
    CHECK(w.grid.rows == 40);
    CHECK(w.grid.cols == 40);
    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 40; ++c) {
        bool rim = r < 2 || r >= 38 || c < 2 || c >= 38;
        CHECK(w.grid.at(r, c) == (rim ? 1 : 0));
      }
    CHECK(is_navigable_at(w, w.start.x, w.start.y));
    CHECK(is_navigable_at(w, w.goal.x, w.goal.y));
  }

  SUBCASE("corridor world has one gap in a middle band") {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
      WorldSpec spec;
      spec.seed = seed;
      World w = make_corridor_world(spec);
      int band_lo = 40 / 2 - 1;
      // Per band row: a contiguous run of open columns (the gap), rest wall.
      for (int r = band_lo; r < band_lo + 3; ++r) {
        std::vector<int> open_cols;
        for (int c = 2; c < 38; ++c)
          if (w.grid.at(r, c) != 1) open_cols.push_back(c);
        REQUIRE(open_cols.size() >= 7);
        REQUIRE(open_cols.size() <= 9);
        CHECK(open_cols.back() - open_cols.front() + 1 == static_cast<int>(open_cols.size()));
      }
      CHECK(w.start.y < band_lo * spec.resolution);
      CHECK(w.goal.y > (band_lo + 3) * spec.resolution);
      CHECK(bfs_connected(w, w.start, w.goal));
    }
  }

  SUBCASE("same seed reproduces, different seeds vary") {
    WorldSpec spec;
    spec.seed = 11;
    World a = make_corridor_world(spec);
    World b = make_corridor_world(spec);
    CHECK(a.grid.cells == b.grid.cells);
    CHECK(a.start.x == b.start.x);
    CHECK(a.goal.y == b.goal.y);

    std::set<std::vector<uint8_t>> layouts;
    for (uint64_t s = 1; s <= 6; ++s) {
      spec.seed = s;
      layouts.insert(make_corridor_world(spec).grid.cells);
    }
    CHECK(layouts.size() >= 3);
  }

  SUBCASE("random worlds are connected and valid") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      WorldSpec spec;
      spec.seed = seed;
      World w = make_random_world(spec);
      CHECK_NOTHROW(validate_world(w));
      CHECK(bfs_connected(w, w.start, w.goal));
    }
    WorldSpec spec;
    spec.seed = 5;
    CHECK(make_random_world(spec).grid.cells == make_random_world(spec).grid.cells);
  }
}

TEST_CASE("render_camera: horizon split and ground sampling") {
  SUBCASE("uniform world: one class below the horizon, sky above") {
    World w = hand_world(80, 80);  // big enough that the rim stays out of view
    for (auto& cls : w.grid.cells) cls = 0;
    w.start = make_pose(4.0, 4.0, 0.0);
    w.goal = make_pose(4.5, 4.0, 0.0);
    CameraModel cam = nav_camera();
    RenderView view = render_camera(w, w.start, cam, ShiftSpec{}, 9);

    // Horizon row for this camera: rows 0..2 have no ground intersection.
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        if (r <= 2)
          CHECK(view.seg.at(r, c) == 3);  // sky = k
        else
          CHECK(view.seg.at(r, c) == 0);
      }
    CHECK(view.image.shape() == std::vector<int>{3, 32, 32});
    for (float v : view.image.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  SUBCASE("projecting a visible cell centre lands on that cell's class") {
    WorldSpec spec;
    spec.seed = 3;
    World w = make_random_world(spec);
    Pose2 robot = make_pose(2.0, 2.0, 0.6);
    CameraModel cam;
    cam.fx = cam.fy = 64.0;
    cam.cx = 64.0;
    cam.cy = 32.0;
    cam.h = 0.5;
    cam.pitch = 0.35;
    cam.img_h = cam.img_w = 128;
    RenderView view = render_camera(w, robot, cam, ShiftSpec{}, 5);

    double cpsi = std::cos(robot.psi), spsi = std::sin(robot.psi);
    int tested = 0, matched = 0;
    for (int gr = 0; gr < w.grid.rows; ++gr)
      for (int gc = 0; gc < w.grid.cols; ++gc) {
        double wx = (gc + 0.5) * w.resolution, wy = (gr + 0.5) * w.resolution;
        double dx = wx - robot.x, dy = wy - robot.y;
        double fwd = cpsi * dx + spsi * dy, left = -spsi * dx + cpsi * dy;
        // Close range only: one pixel must cover less than one cell.
        if (fwd < 0.4 || fwd > 1.4) continue;
        PixelPoint px = project_ground_point(cam, fwd, left);
        if (!px.ok) continue;
        int u = static_cast<int>(std::lround(px.u)), v = static_cast<int>(std::lround(px.v));
        if (u < 1 || u > 126 || v < 1 || v > 126) continue;
        ++tested;
        bool hit = false;
        for (int dv = -1; dv <= 1 && !hit; ++dv)
          for (int du = -1; du <= 1 && !hit; ++du)
            if (view.seg.at(v + dv, u + du) == w.grid.at(gr, gc)) hit = true;
        if (hit) ++matched;
      }
    REQUIRE(tested >= 25);
    CHECK(matched == tested);
  }

  SUBCASE("approaching a wall moves its image boundary downward") {
    World w = hand_world(40, 40);
    for (int r = 28; r < 31; ++r)
      for (int c = 2; c < 38; ++c) w.grid.at(r, c) = 1;
    w.start = make_pose(2.0, 1.0, kPi / 2);
    w.goal = make_pose(2.0, 2.5, 0.0);
    CameraModel cam = nav_camera();

    std::vector<int> first_wall_row;
    for (int i = 0; i < 9; ++i) {
      Pose2 robot = make_pose(2.0, 1.0 + 0.1 * i, kPi / 2);
      RenderView view = render_camera(w, robot, cam, ShiftSpec{}, 1);
      int row = -1;
      for (int r = 31; r >= 0 && row < 0; --r)
        if (view.seg.at(r, 16) == 1) row = r;
      REQUIRE(row >= 0);
      first_wall_row.push_back(row);
    }
    for (size_t i = 1; i < first_wall_row.size(); ++i)
      CHECK(first_wall_row[i] >= first_wall_row[i - 1]);
    CHECK(first_wall_row.back() >= first_wall_row.front() + 3);
  }
}

TEST_CASE("capture_dataset: shapes, sky class, determinism") {
  WorldSpec spec;
  spec.seed = 4;
  World w = make_random_world(spec);
  CaptureConfig cfg;
  cfg.n = 8;
  cfg.cam = nav_camera();
  cfg.seed = 21;

  Dataset ds = capture_dataset(w, cfg);
  CHECK(ds.n == 8);
  CHECK(ds.h == 32);
  CHECK(ds.w == 32);
  CHECK(ds.k == 4);  // three terrain classes plus sky
  CHECK(ds.labeled);
  CHECK(ds.navigable == std::vector<uint8_t>{1, 0, 1, 1});
  REQUIRE(ds.samples.size() == 8);

  int with_sky = 0;
  for (const SegSample& s : ds.samples) {
    REQUIRE(s.has_label);
    CHECK(s.image.shape() == std::vector<int>{3, 32, 32});
    bool sky = false;
    for (uint8_t cls : s.label.cells) {
      CHECK(cls <= 3);
      if (cls == 3) sky = true;
    }
    if (sky) ++with_sky;
  }
  CHECK(with_sky >= 6);  // level camera: the horizon is in nearly every frame

  SUBCASE("same config is bitwise identical, prefix stable under growth") {
    Dataset again = capture_dataset(w, cfg);
    CaptureConfig bigger = cfg;
    bigger.n = 12;
    Dataset grown = capture_dataset(w, bigger);
    for (int i = 0; i < 8; ++i) {
      CHECK(testutil::tensor_bits(ds.samples[i].image) == testutil::tensor_bits(again.samples[i].image));
      CHECK(testutil::tensor_bits(ds.samples[i].image) == testutil::tensor_bits(grown.samples[i].image));
      CHECK(ds.samples[i].label.cells == grown.samples[i].label.cells);
    }
  }
  SUBCASE("unlabeled capture stores no labels") {
    CaptureConfig unl = cfg;
    unl.store_labels = false;
    unl.domain = Domain::Target;
    Dataset t = capture_dataset(w, unl);
    CHECK_FALSE(t.labeled);
    CHECK_FALSE(t.samples[0].has_label);
    CHECK(t.samples[0].label.cells.empty());
  }
}

TEST_CASE("run_episode: open world, goal dead ahead") {
  // Truly boundless floor (the rim would repel the straight primitive from
  // afar): every visible pixel is navigable, so the field stays zero and the
  // selection is pure goal chase.
  World w = hand_world(80, 80);
  for (auto& cls : w.grid.cells) cls = 0;
  double mid = 4.0;
  w.start = make_pose(3.0, mid, 0.0);
  w.goal = make_pose(4.0, mid, 0.0);
  EpisodeConfig cfg;
  EpisodeLog log = run_episode(w, nav_camera(), nullptr, cfg);

  CHECK(log.reached);
  CHECK_FALSE(log.violated);
  REQUIRE(log.steps.size() == 5);  // 0.15 m per step, stop within 0.3 m of the goal
  for (const EpisodeStep& s : log.steps) CHECK(s.prim_index == 3);  // omega = 0
  CHECK(log.path_length == doctest::Approx(5 * 0.15).epsilon(1e-9));
  CHECK(log.steps.back().done);
  CHECK_FALSE(log.steps.back().violation);
  for (double gap : pose_gaps(w, log)) CHECK(gap <= cfg.v * cfg.exec_fraction * cfg.t_horizon + 1e-9);
}

TEST_CASE("run_episode: boundary cases") {
  World w = hand_world(40, 40);
  w.start = make_pose(2.0, 2.0, 0.0);
  w.goal = make_pose(2.1, 2.0, 0.0);

  SUBCASE("start inside the goal radius: immediate success, empty trace") {
    EpisodeLog log = run_episode(w, nav_camera(), nullptr, EpisodeConfig{});
    CHECK(log.reached);
    CHECK(log.steps.empty());
    CHECK(log.path_length == 0.0);
  }
  SUBCASE("non-navigable start is a configuration error") {
    w.start = make_pose(0.05, 0.05, 0.0);
    CHECK_THROWS_AS(run_episode(w, nav_camera(), nullptr, EpisodeConfig{}), ConfigError);
  }
  SUBCASE("blinded camera drives into the wall and latches the violation") {
    // Solid wall across the path; cy pushed far down so every ray misses the
    // ground and the whole frame is sky: zero field, pure goal chase.
    for (int r = 2; r < 38; ++r)
      for (int c = 30; c < 33; ++c) w.grid.at(r, c) = 1;
    w.goal = make_pose(3.7, 2.0, 0.0);
    CameraModel blind = nav_camera();
    blind.cy = 500.0;
    EpisodeLog log = run_episode(w, blind, nullptr, EpisodeConfig{});

    CHECK(log.violated);
    CHECK_FALSE(log.reached);
    REQUIRE(!log.steps.empty());
    CHECK(log.steps.back().violation);
    CHECK_FALSE(log.steps.back().done);
    // Safety accounting: exactly the logged poses decide the flag.
    int off_count = 0;
    for (const EpisodeStep& s : log.steps)
      if (!is_navigable_at(w, s.pose.x, s.pose.y)) ++off_count;
    CHECK(off_count == 1);
    CHECK_FALSE(is_navigable_at(w, log.steps.back().pose.x, log.steps.back().pose.y));
  }
}

TEST_CASE("run_episode: corridor worlds, oracle segmentation") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    WorldSpec spec;
    spec.seed = seed;
    World w = make_corridor_world(spec);
    EpisodeConfig cfg;
    cfg.seed = seed;
    EpisodeLog log = run_episode(w, nav_camera(), nullptr, cfg);

    INFO("corridor seed ", seed, ": steps=", log.steps.size(), " reached=", log.reached,
         " violated=", log.violated);
    CHECK(log.reached);
    CHECK_FALSE(log.violated);

    // Invariants: contiguity, safety accounting, path-length bookkeeping.
    double dt = cfg.exec_fraction * cfg.t_horizon, total = 0.0;
    for (double gap : pose_gaps(w, log)) {
      CHECK(gap <= cfg.v * dt + 1e-9);
      total += gap;
    }
    CHECK(total == doctest::Approx(log.path_length).epsilon(1e-6));
    for (const EpisodeStep& s : log.steps) CHECK(is_navigable_at(w, s.pose.x, s.pose.y));
  }
  SUBCASE("fixed seed reproduces the episode bitwise") {
    WorldSpec spec;
    spec.seed = 2;
    World w = make_corridor_world(spec);
    EpisodeLog a = run_episode(w, nav_camera(), nullptr, EpisodeConfig{});
    EpisodeLog b = run_episode(w, nav_camera(), nullptr, EpisodeConfig{});
    CHECK(episode_csv(a) == episode_csv(b));
    CHECK(a.path_length == b.path_length);
  }
}

TEST_CASE("episode_csv: golden formatting") {
  EpisodeLog log;
  EpisodeStep s0;
  s0.step = 0;
  s0.pose = Pose2{0.15, 0.0, 0.0};
  s0.prim_index = 3;
  s0.coll_cost = 0.5;
  s0.targ_cost = 9.875;
  EpisodeStep s1;
  s1.step = 1;
  s1.pose = Pose2{0.3, 0.0375, 0.1};
  s1.prim_index = 4;
  s1.coll_cost = 0.0;
  s1.targ_cost = 1.5;
  s1.done = true;
  log.steps = {s0, s1};

  CHECK(episode_csv(log) ==
        "step,x,y,psi,prim_index,coll_cost,targ_cost,violation,done\n"
        "0,0.15,0,0,3,0.5,9.875,0,0\n"
        "1,0.3,0.0375,0.1,4,0,1.5,0,1\n");
}

TEST_CASE("snapshots: PPM headers, sizes, determinism") {
  WorldSpec spec;
  spec.seed = 6;
  World w = make_random_world(spec);
  RenderView view = render_camera(w, w.start, nav_camera(), ShiftSpec{}, 2);

  write_view_ppm("tmp_sim_view.ppm", view.image);
  auto bytes = read_file_bytes("tmp_sim_view.ppm");
  CHECK(std::string(bytes.begin(), bytes.begin() + 13) == "P6\n32 32\n255\n");
  REQUIRE(bytes.size() == 13 + 3u * 32 * 32);

  EpisodeConfig cfg;
  cfg.max_steps = 5;
  EpisodeLog log = run_episode(w, nav_camera(), nullptr, cfg);
  write_topdown_ppm("tmp_sim_top.ppm", w, log, 4);
  auto top = read_file_bytes("tmp_sim_top.ppm");
  CHECK(std::string(top.begin(), top.begin() + 15) == "P6\n160 160\n255\n");
  REQUIRE(top.size() == 15 + 3u * 160 * 160);

  write_view_ppm("tmp_sim_view2.ppm", view.image);
  CHECK(read_file_bytes("tmp_sim_view2.ppm") == bytes);

  CHECK_THROWS_AS(write_view_ppm("tmp_bad.ppm", Tensor::zeros({2, 4, 4})), DimensionError);
  CHECK_THROWS_AS(write_topdown_ppm("tmp_bad.ppm", w, log, 0), ConfigError);
}
