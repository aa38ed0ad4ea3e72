#pragma once

// Visual receding-horizon planner: a fan of constant-control motion
// primitives is projected into the camera image, scored against a scaled
// Euclidean distance field (SEDF) built from the obstacle boundary of a
// navigability mask, combined with a pose-target cost, and the cheapest
// primitive wins.

#include <string>
#include <utility>
#include <vector>

#include "cali/common.hpp"

namespace cali {

// ------------------------------------------------------------------ poses ---

// Planar pose; psi wrapped to (-pi, pi].
struct Pose2 {
  double x = 0.0, y = 0.0, psi = 0.0;
};

double wrap_angle(double a);
Pose2 make_pose(double x, double y, double psi);

// rel expressed in base's frame -> world frame
Pose2 compose(const Pose2& base, const Pose2& rel);

// Goal pose from a bare position: yaw points from `from` toward (gx, gy).
Pose2 goal_with_bearing(const Pose2& from, double gx, double gy);

// ------------------------------------------------------------- primitives ---

struct Primitive {
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s
  double duration = 0.0;
  std::vector<Pose2> poses;  // m samples, poses[0] = identity (robot frame)
};

using PrimitiveLibrary = std::vector<Primitive>;

// Robot-frame pose after driving controls (v, omega) for time t from identity.
Pose2 unicycle_pose(double v, double omega, double t);

// Constant-control unicycle rollouts, one primitive per omega.  Arc formula
// x = (v/w) sin(wt), y = (v/w)(1 - cos(wt)), psi = wt; straight line in the
// small-omega limit.
PrimitiveLibrary generate_primitives(double v, const std::vector<double>& omegas, double t_total,
                                     int samples);

// ----------------------------------------------------------------- camera ---

// Pinhole camera at height `h` above the ground plane, pitched down by
// `pitch` radians, looking along the robot's forward axis.
struct CameraModel {
  double fx = 100.0, fy = 100.0;
  double cx = 50.0, cy = 50.0;
  double h = 1.0;
  double pitch = 0.3;
  int img_h = 100, img_w = 100;
};

void validate_camera(const CameraModel& cam);

struct PixelPoint {
  bool ok = false;  // false: point behind the camera plane
  double u = 0.0, v = 0.0;
};

// Projects the ground point (x_forward, y_left, 0) in the robot frame.
// Ground points in front always land strictly below the horizon row; points
// behind the camera come back flagged instead of projected.
PixelPoint project_ground_point(const CameraModel& cam, double x_forward, double y_left);

// ----------------------------------------------------- masks and the SEDF ---

// Per-pixel lookup of table[class]; table must cover every class id.
BoolMap navigability_mask(const ClassMap& seg, const std::vector<uint8_t>& table);

// Per column, scanning upward from the bottom row through navigable pixels,
// the first non-navigable pixel; fully navigable columns contribute nothing.
std::vector<std::pair<int, int>> obstacle_boundary(const BoolMap& navigable);

struct SedfImage {
  Grid<float> field;  // values in [0, 1]
  double alpha = 0.25;
};

// E(p) = max(0, 1 - dist(p) / (alpha * diagonal)) with the exact Euclidean
// distance to the nearest boundary pixel; empty boundary -> all zeros.
SedfImage sedf(const std::vector<std::pair<int, int>>& boundary, double alpha, int rows,
               int cols);

// ------------------------------------------------------------------ costs ---

struct PlannerWeights {
  double w1 = 1.0, w2 = 1.0;  // collision / target mix
  double a = 0.25, b = 1.0;   // yaw / translation scaling, both > 0
  double p = 2.0;             // cost exponent
  double goal_radius = 0.3;   // metres (used by the closed-loop executive)
};

void validate_weights(const PlannerWeights& w);

// Sum over the primitive's poses of the SEDF risk at their projections
// (nearest pixel, clamped to the image border); poses behind the camera
// count the maximal risk 1.
double collision_cost(const Primitive& prim, const SedfImage& field, const CameraModel& cam);

// [a |wrap(dpsi)|^p + b dist^p]^(1/p) for one pose pair.
double target_cost(const Pose2& pose, const Pose2& goal, const PlannerWeights& w);

// ------------------------------------------------------------- selection ---

struct PlanRow {
  int index = 0;
  double v = 0.0, omega = 0.0;
  double collision = 0.0, target = 0.0, total = 0.0;
  bool selected = false;
};

struct PlanResult {
  int best_index = 0;
  std::vector<PlanRow> table;
};

// Exhaustive argmin of w1*C_c + w2*C_t; C_t sums target_cost over every
// world-transformed pose.  Ties break toward the lowest index.
PlanResult select_primitive(const PrimitiveLibrary& lib, const SedfImage& field,
                            const CameraModel& cam, const Pose2& robot, const Pose2& goal,
                            const PlannerWeights& w);

// Header: index,v,omega,collision,target,total,selected
std::string plan_table_csv(const PlanResult& result);

}  // namespace cali
