#include "cali/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <utility>

namespace cali {

// ------------------------------------------------------------------ world ---

bool cell_of(const World& w, double x, double y, int& r, int& c) {
  r = static_cast<int>(std::floor(y / w.resolution));
  c = static_cast<int>(std::floor(x / w.resolution));
  return w.grid.in_bounds(r, c);
}

bool is_navigable_at(const World& w, double x, double y) {
  int r = 0, c = 0;
  if (!cell_of(w, x, y, r, c)) return false;
  return w.navigable[w.grid.at(r, c)] != 0;
}

void validate_world(const World& w) {
  if (w.grid.rows <= 0 || w.grid.cols <= 0) throw DimensionError("world: empty grid");
  if (w.k < 2 || w.k > 255) throw ConfigError("world: class count must be in [2,255]");
  if (static_cast<int>(w.navigable.size()) != w.k)
    throw ConfigError("world: navigability table size " + std::to_string(w.navigable.size()) +
                      " != k " + std::to_string(w.k));
  if (w.resolution <= 0) throw ConfigError("world: resolution must be positive");
  for (uint8_t cls : w.grid.cells)
    if (cls >= w.k) throw ValidationError("world: grid class out of range");
  if (!is_navigable_at(w, w.start.x, w.start.y))
    throw ConfigError("world: start is not on a navigable cell");
  if (!is_navigable_at(w, w.goal.x, w.goal.y))
    throw ConfigError("world: goal is not on a navigable cell");
}

namespace {

constexpr int kBorder = 2;        // obstacle rim thickness, cells
constexpr uint8_t kFloor = 0;
constexpr uint8_t kObstacle = 1;
constexpr uint8_t kDecor = 2;

World blank_world(const WorldSpec& spec) {
  if (spec.rows < 12 || spec.cols < 12) throw ConfigError("world: need at least 12x12 cells");
  World w;
  w.k = 3;
  w.resolution = spec.resolution;
  w.navigable = {1, 0, 1};
  w.grid = ClassMap(spec.rows, spec.cols, kFloor);
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c)
      if (r < kBorder || r >= spec.rows - kBorder || c < kBorder || c >= spec.cols - kBorder)
        w.grid.at(r, c) = kObstacle;
  return w;
}

// Paints an ellipse of `cls` over floor cells only, so obstacles stay intact.
void paint_patch(World& w, double cy, double cx, double ry, double rx, double phi, uint8_t cls) {
  double cphi = std::cos(phi), sphi = std::sin(phi);
  for (int r = 0; r < w.grid.rows; ++r) {
    for (int c = 0; c < w.grid.cols; ++c) {
      double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
      double u = (dx * cphi + dy * sphi) / rx;
      double v = (-dx * sphi + dy * cphi) / ry;
      if (u * u + v * v <= 1.0 && w.grid.at(r, c) == kFloor) w.grid.at(r, c) = cls;
    }
  }
}

void scatter_decor(World& w, Rng& rng, int count) {
  for (int i = 0; i < count; ++i)
    paint_patch(w, rng.uniform(0.0, w.grid.rows), rng.uniform(0.0, w.grid.cols),
                rng.uniform(0.08 * w.grid.rows, 0.2 * w.grid.rows),
                rng.uniform(0.08 * w.grid.cols, 0.2 * w.grid.cols), rng.uniform(0.0, M_PI),
                kDecor);
}

bool cells_connected(const World& w, int r0, int c0, int r1, int c1) {
  if (!w.grid.in_bounds(r0, c0) || !w.grid.in_bounds(r1, c1)) return false;
  auto open = [&](int r, int c) { return w.navigable[w.grid.at(r, c)] != 0; };
  if (!open(r0, c0) || !open(r1, c1)) return false;
  BoolMap seen(w.grid.rows, w.grid.cols, 0);
  std::deque<std::pair<int, int>> frontier{{r0, c0}};
  seen.at(r0, c0) = 1;
  while (!frontier.empty()) {
    auto [r, c] = frontier.front();
    frontier.pop_front();
    if (r == r1 && c == c1) return true;
    const int dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
    for (int i = 0; i < 4; ++i) {
      int rr = r + dr[i], cc = c + dc[i];
      if (!w.grid.in_bounds(rr, cc) || seen.at(rr, cc) || !open(rr, cc)) continue;
      seen.at(rr, cc) = 1;
      frontier.emplace_back(rr, cc);
    }
  }
  return false;
}

}  // namespace

World make_open_world(const WorldSpec& spec) {
  World w = blank_world(spec);
  double mid_y = 0.5 * spec.rows * spec.resolution;
  w.start = make_pose(0.6, mid_y, 0.0);
  w.goal = make_pose(spec.cols * spec.resolution - 0.6, mid_y, 0.0);
  validate_world(w);
  return w;
}

World make_corridor_world(const WorldSpec& spec) {
  World w = blank_world(spec);
  Rng rng(derive_seed(spec.seed, 7));

  int wall_lo = spec.rows / 2 - 1;             // 3-cell band, thicker than one step
  int gap_c = rng.uniform_int(spec.cols / 3, 2 * spec.cols / 3);
  int gap_half = rng.uniform_int(3, 4);
  for (int r = wall_lo; r < wall_lo + 3; ++r)
    for (int c = kBorder; c < spec.cols - kBorder; ++c)
      if (std::abs(c - gap_c) > gap_half) w.grid.at(r, c) = kObstacle;
  scatter_decor(w, rng, rng.uniform_int(2, 4));

  double res = spec.resolution;
  double width = spec.cols * res;
  double gap_x = (gap_c + 0.5) * res;
  double sx = std::clamp(gap_x + rng.uniform(-0.6, 0.6), 0.5, width - 0.5);
  double sy = rng.uniform(0.5, 0.9);
  double gx = std::clamp(gap_x + rng.uniform(-0.4, 0.4), 0.5, width - 0.5);
  double gy = spec.rows * res - rng.uniform(0.5, 0.9);
  w.start = make_pose(sx, sy, std::atan2(gy - sy, gx - sx));
  w.goal = make_pose(gx, gy, 0.0);
  validate_world(w);

  int sr, sc, gr, gc;
  cell_of(w, sx, sy, sr, sc);
  cell_of(w, gx, gy, gr, gc);
  if (!cells_connected(w, sr, sc, gr, gc))
    throw ConfigError("corridor world: gap construction failed");  // unreachable by design
  return w;
}

World make_random_world(const WorldSpec& spec) {
  Rng rng(derive_seed(spec.seed, 7));
  for (int attempt = 0; attempt < 50; ++attempt) {
    World w = blank_world(spec);
    int blobs = rng.uniform_int(3, 6);
    for (int i = 0; i < blobs; ++i)
      paint_patch(w, rng.uniform(0.0, spec.rows), rng.uniform(0.0, spec.cols),
                  rng.uniform(0.06 * spec.rows, 0.16 * spec.rows),
                  rng.uniform(0.06 * spec.cols, 0.16 * spec.cols), rng.uniform(0.0, M_PI),
                  kObstacle);
    scatter_decor(w, rng, rng.uniform_int(2, 4));

    double res = spec.resolution;
    auto sample_open = [&](double x_lo, double x_hi, double y_lo, double y_hi, Pose2& out) {
      for (int tries = 0; tries < 200; ++tries) {
        double x = rng.uniform(x_lo, x_hi), y = rng.uniform(y_lo, y_hi);
        if (is_navigable_at(w, x, y)) {
          out = make_pose(x, y, 0.0);
          return true;
        }
      }
      return false;
    };
    double width = spec.cols * res, height = spec.rows * res;
    Pose2 start, goal;
    if (!sample_open(0.3, 0.45 * width, 0.3, 0.45 * height, start) ||
        !sample_open(0.55 * width, width - 0.3, 0.55 * height, height - 0.3, goal))
      continue;
    start.psi = std::atan2(goal.y - start.y, goal.x - start.x);
    w.start = start;
    w.goal = goal;

    int sr, sc, gr, gc;
    cell_of(w, start.x, start.y, sr, sc);
    cell_of(w, goal.x, goal.y, gr, gc);
    if (!cells_connected(w, sr, sc, gr, gc)) continue;
    validate_world(w);
    return w;
  }
  throw ConfigError("random world: no connected layout found for seed " +
                    std::to_string(spec.seed));
}

// --------------------------------------------------------------- rendering ---

RenderView render_camera(const World& w, const Pose2& robot, const CameraModel& cam,
                         const ShiftSpec& shift, uint64_t sample_seed) {
  validate_world(w);
  validate_camera(cam);

  const double st = std::sin(cam.pitch), ct = std::cos(cam.pitch);
  const double cpsi = std::cos(robot.psi), spsi = std::sin(robot.psi);
  const uint8_t sky = static_cast<uint8_t>(w.k);

  ClassMap seg(cam.img_h, cam.img_w, sky);
  for (int r = 0; r < cam.img_h; ++r) {
    double yc = (r - cam.cy) / cam.fy;
    double denom = yc * ct + st;       // > 0 strictly below the horizon
    if (denom <= 1e-9) continue;       // sky row
    double t = cam.h / denom;
    double fx_fwd = t * (ct - yc * st);  // forward distance of the ground hit
    for (int c = 0; c < cam.img_w; ++c) {
      double xc = (c - cam.cx) / cam.fx;
      double left = -t * xc;           // left offset of the ground hit
      double wx = robot.x + cpsi * fx_fwd - spsi * left;
      double wy = robot.y + spsi * fx_fwd + cpsi * left;
      int gr = static_cast<int>(std::floor(wy / w.resolution));
      int gc = static_cast<int>(std::floor(wx / w.resolution));
      gr = std::clamp(gr, 0, w.grid.rows - 1);  // border rim extends past the map edge
      gc = std::clamp(gc, 0, w.grid.cols - 1);
      seg.at(r, c) = w.grid.at(gr, gc);
    }
  }

  RenderView view;
  view.image = render_label_map(seg, sample_seed, shift, w.k);
  view.seg = std::move(seg);
  return view;
}

// ----------------------------------------------------------------- capture ---

std::vector<uint8_t> mask_table_with_sky(const World& w) {
  std::vector<uint8_t> table = w.navigable;
  table.push_back(1);
  return table;
}

Dataset capture_dataset(const World& w, const CaptureConfig& cfg) {
  validate_world(w);
  if (cfg.n <= 0) throw ConfigError("capture: sample count must be positive");

  Dataset ds;
  ds.n = cfg.n;
  ds.h = cfg.cam.img_h;
  ds.w = cfg.cam.img_w;
  ds.k = w.k + 1;  // terrain classes plus sky
  ds.domain = cfg.domain;
  ds.labeled = cfg.store_labels;
  ds.navigable = mask_table_with_sky(w);

  double width = w.grid.cols * w.resolution, height = w.grid.rows * w.resolution;
  for (int i = 0; i < cfg.n; ++i) {
    uint64_t sample_seed = derive_seed(cfg.seed, static_cast<uint64_t>(i));
    Rng pose_rng(derive_seed(sample_seed, 1));
    Pose2 pose;
    bool placed = false;
    for (int tries = 0; tries < 1000 && !placed; ++tries) {
      double x = pose_rng.uniform(0.0, width), y = pose_rng.uniform(0.0, height);
      if (is_navigable_at(w, x, y)) {
        pose = make_pose(x, y, pose_rng.uniform(-M_PI, M_PI));
        placed = true;
      }
    }
    if (!placed) throw ConfigError("capture: no navigable pose found");

    RenderView view = render_camera(w, pose, cfg.cam, cfg.shift, sample_seed);
    SegSample s;
    s.image = std::move(view.image);
    if (cfg.store_labels) {
      s.label = std::move(view.seg);
      s.has_label = true;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ----------------------------------------------------------------- episode ---

CameraModel nav_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 16.0;
  cam.cx = 16.0;
  cam.cy = 8.0;        // horizon near the top: rows 0-2 sky, the rest ground
  cam.h = 0.5;
  cam.pitch = 0.35;
  cam.img_h = cam.img_w = 32;
  return cam;
}

EpisodeLog run_episode(const World& w, const CameraModel& cam, const CaliModel* model,
                       const EpisodeConfig& cfg) {
  validate_world(w);
  validate_camera(cam);
  validate_weights(cfg.weights);
  if (cfg.exec_fraction <= 0 || cfg.exec_fraction > 1)
    throw ConfigError("episode: exec_fraction must be in (0,1]");
  if (cfg.max_steps <= 0) throw ConfigError("episode: max_steps must be positive");

  PrimitiveLibrary lib = generate_primitives(cfg.v, cfg.omegas, cfg.t_horizon, cfg.samples);
  std::vector<uint8_t> table = mask_table_with_sky(w);
  const double dt = cfg.exec_fraction * cfg.t_horizon;

  EpisodeLog log;
  Pose2 pose = w.start;
  if (std::hypot(w.goal.x - pose.x, w.goal.y - pose.y) <= cfg.weights.goal_radius) {
    log.reached = true;  // started inside the goal radius: empty trace
    return log;
  }

  for (int step = 0; step < cfg.max_steps; ++step) {
    RenderView view = render_camera(w, pose, cam, cfg.shift, derive_seed(cfg.seed, step));
    ClassMap seg = model ? predict_classes(*model, view.image) : std::move(view.seg);
    BoolMap mask = navigability_mask(seg, table);
    SedfImage field = sedf(obstacle_boundary(mask), cfg.alpha, cam.img_h, cam.img_w);
    Pose2 goal = goal_with_bearing(pose, w.goal.x, w.goal.y);
    PlanResult res = select_primitive(lib, field, cam, pose, goal, cfg.weights);

    const Primitive& chosen = lib[static_cast<size_t>(res.best_index)];
    Pose2 next = compose(pose, unicycle_pose(chosen.v, chosen.omega, dt));
    log.path_length += std::hypot(next.x - pose.x, next.y - pose.y);
    pose = next;

    if (!is_navigable_at(w, pose.x, pose.y)) log.violated = true;
    if (!log.violated &&
        std::hypot(w.goal.x - pose.x, w.goal.y - pose.y) <= cfg.weights.goal_radius)
      log.reached = true;

    EpisodeStep row;
    row.step = step;
    row.pose = pose;
    row.prim_index = res.best_index;
    row.coll_cost = res.table[static_cast<size_t>(res.best_index)].collision;
    row.targ_cost = res.table[static_cast<size_t>(res.best_index)].target;
    row.violation = log.violated;
    row.done = log.reached;
    log.steps.push_back(row);
    if (log.violated || log.reached) break;
  }
  return log;
}

std::string episode_csv(const EpisodeLog& log) {
  std::string out = "step,x,y,psi,prim_index,coll_cost,targ_cost,violation,done\n";
  for (const EpisodeStep& s : log.steps) {
    out += std::to_string(s.step) + ',' + format_g6(s.pose.x) + ',' + format_g6(s.pose.y) + ',' +
           format_g6(s.pose.psi) + ',' + std::to_string(s.prim_index) + ',' +
           format_g6(s.coll_cost) + ',' + format_g6(s.targ_cost) + ',' +
           (s.violation ? "1" : "0") + ',' + (s.done ? "1" : "0") + '\n';
  }
  return out;
}

// --------------------------------------------------------------- snapshots ---

void write_view_ppm(const std::string& path, const Tensor& image) {
  const auto& shape = image.shape();
  if (shape.size() != 3 || shape[0] != 3) throw DimensionError("view ppm: image must be [3,H,W]");
  int h = shape[1], w = shape[2];
  ImageRgb img;
  img.rows = h;
  img.cols = w;
  img.pixels.resize(static_cast<size_t>(h) * w);
  const auto& data = image.data();
  auto byte = [](float v) {
    return static_cast<uint8_t>(std::lround(255.0 * std::clamp(v, 0.0f, 1.0f)));
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      size_t i = static_cast<size_t>(r) * w + c;
      img.pixels[i] = Rgb{byte(data[i]), byte(data[static_cast<size_t>(h) * w + i]),
                          byte(data[2 * static_cast<size_t>(h) * w + i])};
    }
  write_ppm(path, img);
}

namespace {

Rgb to_rgb(const std::array<float, 3>& c) {
  auto byte = [](float v) {
    return static_cast<uint8_t>(std::lround(255.0 * std::clamp(v, 0.0f, 1.0f)));
  };
  return Rgb{byte(c[0]), byte(c[1]), byte(c[2])};
}

}  // namespace

void write_topdown_ppm(const std::string& path, const World& w, const EpisodeLog& log,
                       int scale) {
  if (scale < 1) throw ConfigError("topdown ppm: scale must be >= 1");
  int rows = w.grid.rows * scale, cols = w.grid.cols * scale;
  ImageRgb img;
  img.rows = rows;
  img.cols = cols;
  img.pixels.resize(static_cast<size_t>(rows) * cols);

  // World row 0 (y = 0) is drawn at the bottom of the image.
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int wr = w.grid.rows - 1 - r / scale;
      img.pixels[static_cast<size_t>(r) * cols + c] = to_rgb(class_color(w.grid.at(wr, c / scale)));
    }

  auto blot = [&](double x, double y, Rgb color) {
    int cc = static_cast<int>(std::floor(x / w.resolution * scale));
    int rr = rows - 1 - static_cast<int>(std::floor(y / w.resolution * scale));
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        int r = rr + dr, c = cc + dc;
        if (r >= 0 && r < rows && c >= 0 && c < cols)
          img.pixels[static_cast<size_t>(r) * cols + c] = color;
      }
  };

  for (const EpisodeStep& s : log.steps) blot(s.pose.x, s.pose.y, Rgb{230, 40, 40});
  blot(w.start.x, w.start.y, Rgb{40, 200, 40});
  blot(w.goal.x, w.goal.y, Rgb{40, 90, 230});
  write_ppm(path, img);
}

}  // namespace cali
