#include "cali/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cali {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kStraightOmega = 1e-12;  // below this the rollout is a line
}  // namespace

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

Pose2 make_pose(double x, double y, double psi) { return Pose2{x, y, wrap_angle(psi)}; }

Pose2 compose(const Pose2& base, const Pose2& rel) {
  double c = std::cos(base.psi), s = std::sin(base.psi);
  return make_pose(base.x + c * rel.x - s * rel.y, base.y + s * rel.x + c * rel.y,
                   base.psi + rel.psi);
}

Pose2 goal_with_bearing(const Pose2& from, double gx, double gy) {
  return make_pose(gx, gy, std::atan2(gy - from.y, gx - from.x));
}

Pose2 unicycle_pose(double v, double omega, double t) {
  if (std::abs(omega) < kStraightOmega) return make_pose(v * t, 0.0, 0.0);
  return make_pose(v / omega * std::sin(omega * t), v / omega * (1.0 - std::cos(omega * t)),
                   omega * t);
}

PrimitiveLibrary generate_primitives(double v, const std::vector<double>& omegas, double t_total,
                                     int samples) {
  if (v <= 0) throw ConfigError("primitives: velocity must be positive, got " + format_g6(v));
  if (t_total <= 0) throw ConfigError("primitives: duration must be positive");
  if (samples < 2)
    throw ConfigError("primitives: need at least 2 samples, got " + std::to_string(samples));
  if (omegas.empty()) throw ConfigError("primitives: empty turn-rate list");

  PrimitiveLibrary lib;
  for (double w : omegas) {
    Primitive p;
    p.v = v;
    p.omega = w;
    p.duration = t_total;
    for (int i = 0; i < samples; ++i) {
      double t = t_total * static_cast<double>(i) / static_cast<double>(samples - 1);
      p.poses.push_back(unicycle_pose(v, w, t));
    }
    lib.push_back(std::move(p));
  }
  return lib;
}

void validate_camera(const CameraModel& cam) {
  if (cam.fx <= 0 || cam.fy <= 0) throw ConfigError("camera: focal lengths must be positive");
  if (cam.h <= 0) throw ConfigError("camera: mount height must be positive");
  if (cam.img_h < 1 || cam.img_w < 1) throw ConfigError("camera: image size must be positive");
}

PixelPoint project_ground_point(const CameraModel& cam, double x_forward, double y_left) {
  validate_camera(cam);
  // camera axes in the robot frame (x fwd, y left, z up), pitched down:
  //   x_cam (image right)  = (0, -1, 0)
  //   y_cam (image down)   = (-sin p, 0, -cos p)
  //   z_cam (optical axis) = (cos p, 0, -sin p)
  double sp = std::sin(cam.pitch), cp = std::cos(cam.pitch);
  // point relative to the camera centre (0, 0, h):
  double px = x_forward, py = y_left, pz = -cam.h;
  double xc = -py;
  double yc = -sp * px - cp * pz;  // = -sp*px + cp*h
  double zc = cp * px - sp * pz;   // =  cp*px + sp*h

  PixelPoint out;
  if (zc <= 1e-9) return out;  // behind the camera plane
  out.ok = true;
  out.u = cam.cx + cam.fx * xc / zc;
  out.v = cam.cy + cam.fy * yc / zc;
  return out;
}

BoolMap navigability_mask(const ClassMap& seg, const std::vector<uint8_t>& table) {
  BoolMap mask(seg.rows, seg.cols);
  for (size_t i = 0; i < seg.cells.size(); ++i) {
    uint8_t c = seg.cells[i];
    if (c >= table.size())
      throw ValidationError("navigability: class " + std::to_string(c) +
                            " missing from a table of size " + std::to_string(table.size()));
    mask.cells[i] = table[c] ? 1 : 0;
  }
  return mask;
}

std::vector<std::pair<int, int>> obstacle_boundary(const BoolMap& navigable) {
  std::vector<std::pair<int, int>> boundary;
  for (int c = 0; c < navigable.cols; ++c) {
    for (int r = navigable.rows - 1; r >= 0; --r) {
      if (!navigable.at(r, c)) {
        boundary.emplace_back(r, c);
        break;  // first blocked pixel going up; lower rows were navigable
      }
    }
  }
  return boundary;
}

namespace {

// 1-D squared Euclidean distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  int n = static_cast<int>(f.size());
  d.assign(static_cast<size_t>(n), 0.0);
  std::vector<int> v(static_cast<size_t>(n), 0);
  std::vector<double> z(static_cast<size_t>(n) + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      int p = v[static_cast<size_t>(k)];
      s = ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) /
          (2.0 * q - 2.0 * p);
      if (s <= z[static_cast<size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < q) ++k;
    int p = v[static_cast<size_t>(k)];
    double dq = static_cast<double>(q - p);
    d[static_cast<size_t>(q)] = dq * dq + f[static_cast<size_t>(p)];
  }
}

}  // namespace

SedfImage sedf(const std::vector<std::pair<int, int>>& boundary, double alpha, int rows,
               int cols) {
  if (alpha <= 0) throw ConfigError("sedf: scale factor must be positive, got " + format_g6(alpha));
  if (rows < 1 || cols < 1) throw ConfigError("sedf: image size must be positive");

  SedfImage out;
  out.alpha = alpha;
  out.field = Grid<float>(rows, cols, 0.0f);
  if (boundary.empty()) return out;

  // large finite sentinel: true infinity would turn the parabola
  // intersections in empty columns into NaNs
  const double far = 1e15;
  std::vector<double> sq(static_cast<size_t>(rows) * cols, far);
  for (auto [r, c] : boundary) {
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      throw ValidationError("sedf: boundary pixel out of range");
    sq[static_cast<size_t>(r) * cols + c] = 0.0;
  }

  // columns, then rows
  std::vector<double> line, dist;
  for (int c = 0; c < cols; ++c) {
    line.resize(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) line[static_cast<size_t>(r)] = sq[static_cast<size_t>(r) * cols + c];
    edt_1d(line, dist);
    for (int r = 0; r < rows; ++r) sq[static_cast<size_t>(r) * cols + c] = dist[static_cast<size_t>(r)];
  }
  for (int r = 0; r < rows; ++r) {
    line.assign(sq.begin() + static_cast<int64_t>(r) * cols,
                sq.begin() + static_cast<int64_t>(r + 1) * cols);
    edt_1d(line, dist);
    for (int c = 0; c < cols; ++c) sq[static_cast<size_t>(r) * cols + c] = dist[static_cast<size_t>(c)];
  }

  double diag = std::sqrt(static_cast<double>(rows) * rows + static_cast<double>(cols) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double d = std::sqrt(sq[static_cast<size_t>(r) * cols + c]);
      out.field.at(r, c) = static_cast<float>(std::max(0.0, 1.0 - d / (alpha * diag)));
    }
  return out;
}

void validate_weights(const PlannerWeights& w) {
  if (w.w1 < 0 || w.w2 < 0) throw ConfigError("planner weights: w1 and w2 must be non-negative");
  if (w.a <= 0 || w.b <= 0)
    throw ConfigError("planner weights: scaling factors a and b must be strictly positive");
  if (w.p < 1) throw ConfigError("planner weights: exponent must be at least 1");
}

double collision_cost(const Primitive& prim, const SedfImage& field, const CameraModel& cam) {
  double cost = 0.0;
  for (const Pose2& pose : prim.poses) {
    PixelPoint px = project_ground_point(cam, pose.x, pose.y);
    if (!px.ok) {
      cost += 1.0;
      continue;
    }
    // Nearest-pixel lookup; projections outside the image clamp to the border.
    int r = static_cast<int>(std::lround(px.v));
    int c = static_cast<int>(std::lround(px.u));
    r = std::clamp(r, 0, field.field.rows - 1);
    c = std::clamp(c, 0, field.field.cols - 1);
    cost += static_cast<double>(field.field.at(r, c));
  }
  return cost;
}

double target_cost(const Pose2& pose, const Pose2& goal, const PlannerWeights& w) {
  validate_weights(w);
  double dpsi = std::abs(wrap_angle(goal.psi - pose.psi));
  double dist = std::hypot(goal.x - pose.x, goal.y - pose.y);
  return std::pow(w.a * std::pow(dpsi, w.p) + w.b * std::pow(dist, w.p), 1.0 / w.p);
}

PlanResult select_primitive(const PrimitiveLibrary& lib, const SedfImage& field,
                            const CameraModel& cam, const Pose2& robot, const Pose2& goal,
                            const PlannerWeights& w) {
  if (lib.empty()) throw UsageError("select_primitive: empty primitive library");
  validate_weights(w);

  PlanResult result;
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < lib.size(); ++i) {
    PlanRow row;
    row.index = static_cast<int>(i);
    row.v = lib[i].v;
    row.omega = lib[i].omega;
    row.collision = collision_cost(lib[i], field, cam);
    for (const Pose2& rel : lib[i].poses)
      row.target += target_cost(compose(robot, rel), goal, w);
    row.total = w.w1 * row.collision + w.w2 * row.target;
    if (row.total < best) {
      best = row.total;
      result.best_index = row.index;
    }
    result.table.push_back(row);
  }
  result.table[static_cast<size_t>(result.best_index)].selected = true;
  return result;
}

std::string plan_table_csv(const PlanResult& result) {
  std::ostringstream out;
  out << "index,v,omega,collision,target,total,selected\n";
  for (const PlanRow& r : result.table) {
    out << r.index << ',' << format_g6(r.v) << ',' << format_g6(r.omega) << ','
        << format_g6(r.collision) << ',' << format_g6(r.target) << ',' << format_g6(r.total)
        << ',' << (r.selected ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace cali
