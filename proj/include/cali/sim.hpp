#pragma once
// Closed-loop 2-D navigation: terrain-class grid worlds, a synthetic
// perspective camera renderer that shares the dataset appearance pipeline,
// dataset capture from rendered views, and receding-horizon execution of
// planner-selected primitives with per-step episode logs.

#include <cstdint>
#include <string>
#include <vector>

#include "cali/common.hpp"
#include "cali/data.hpp"
#include "cali/models.hpp"
#include "cali/planner.hpp"

namespace cali {

// ------------------------------------------------------------------ world ---

// Grid world in a metric frame: x runs along columns, y along rows, so cell
// (r, c) covers x in [c*res, (c+1)*res) and y in [r*res, (r+1)*res).
struct World {
  ClassMap grid;                   // terrain classes 0..k-1
  int k = 3;
  double resolution = 0.1;         // meters per cell
  std::vector<uint8_t> navigable;  // per terrain class, size k
  Pose2 start;
  Pose2 goal;                      // goal yaw unused; bearing is used instead
};

// False when (x, y) falls outside the grid.
bool cell_of(const World& w, double x, double y, int& r, int& c);

// Off-grid positions count as non-navigable.
bool is_navigable_at(const World& w, double x, double y);

// Shape/range checks plus navigable start and goal.
void validate_world(const World& w);

struct WorldSpec {
  int rows = 40, cols = 40;
  double resolution = 0.1;
  uint64_t seed = 1;
};

// All three generators use k = 3 with table {1, 0, 1}: class 0 floor, class 1
// obstacle, class 2 navigable decor patches.  Every world is rimmed by a
// 2-cell obstacle border so the camera never sees past the map edge.
World make_open_world(const WorldSpec& spec);
// Horizontal obstacle band across the middle with one gap; start below the
// band, goal above it, gap column and jitters drawn from the seed.
World make_corridor_world(const WorldSpec& spec);
// Random obstacle blobs and decor patches; resamples until start and goal are
// connected through navigable cells (ConfigError if no layout is found).
World make_random_world(const WorldSpec& spec);

// --------------------------------------------------------------- rendering ---

struct RenderView {
  Tensor image;  // [3,H,W] float in [0,1]
  ClassMap seg;  // per-pixel true class; sky pixels carry class world.k
};

// Casts the pinhole ray of every pixel onto the ground plane and samples the
// world class there (rays past the grid edge sample the nearest border cell);
// pixels at or above the horizon get the sky class world.k.  The image is the
// dataset renderer applied to that class map, so captured and episode frames
// match the training distribution exactly.
RenderView render_camera(const World& w, const Pose2& robot, const CameraModel& cam,
                         const ShiftSpec& shift, uint64_t sample_seed);

// ----------------------------------------------------------------- capture ---

struct CaptureConfig {
  int n = 100;
  CameraModel cam;
  ShiftSpec shift;
  Domain domain = Domain::Source;
  bool store_labels = true;
  uint64_t seed = 1;
};

// Dataset of rendered views from uniformly sampled navigable poses.  Labels
// include the sky class, so the dataset advertises k = world.k + 1 classes and
// appends a navigable entry for sky (boundary extraction must not treat open
// horizon columns as obstacles).  Sample i depends only on (seed, i).
Dataset capture_dataset(const World& w, const CaptureConfig& cfg);

// Navigability table matching captured datasets: world table plus sky = 1.
std::vector<uint8_t> mask_table_with_sky(const World& w);

// ----------------------------------------------------------------- episode ---

struct EpisodeConfig {
  double v = 0.3;                  // m/s
  std::vector<double> omegas = {-1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2};
  double t_horizon = 2.0;          // s per primitive
  int samples = 6;                 // poses per primitive
  double exec_fraction = 0.25;     // fraction of t_horizon executed per replan
  // SEDF decay length must stay below the image width of a corridor gap,
  // otherwise lateral risk bleed from the walls poisons the passage.
  double alpha = 0.2;
  int max_steps = 200;
  PlannerWeights weights{1.0, 0.1, 0.25, 1.0, 2.0, 0.3};  // w2 low: risk dominates near walls
  ShiftSpec shift;                 // appearance of every rendered frame
  uint64_t seed = 1;
};

// Camera used by the navigation defaults: 32x32, wide FOV, low mount, horizon
// near the top of the frame so the ground is visible from ~0.15 m outward.
CameraModel nav_camera();

struct EpisodeStep {
  int step = 0;
  Pose2 pose;            // after executing the selected primitive slice
  int prim_index = -1;
  double coll_cost = 0.0;
  double targ_cost = 0.0;
  bool violation = false;  // latched: some logged pose on a non-navigable cell
  bool done = false;       // latched: goal radius reached
};

struct EpisodeLog {
  std::vector<EpisodeStep> steps;
  bool reached = false;
  bool violated = false;
  double path_length = 0.0;  // sum of pose-to-pose Euclidean steps
};

// Receding-horizon loop: render -> segment -> mask -> boundary -> SEDF ->
// select -> execute exec_fraction of the chosen primitive -> re-plan, until
// the goal radius is reached, the robot center enters a non-navigable cell,
// or max_steps.  `model` == nullptr uses the true segmentation (oracle mode);
// otherwise the model's fused prediction segments each frame (learned mode).
// Deterministic given cfg.seed.
EpisodeLog run_episode(const World& w, const CameraModel& cam, const CaliModel* model,
                       const EpisodeConfig& cfg);

// CSV with header step,x,y,psi,prim_index,coll_cost,targ_cost,violation,done.
std::string episode_csv(const EpisodeLog& log);

// --------------------------------------------------------------- snapshots ---

// Binary PPM (P6) of a rendered [3,H,W] image in [0,1].
void write_view_ppm(const std::string& path, const Tensor& image);

// Top-down map with the logged trajectory: terrain in class colors, start
// green, goal blue, logged poses red; row 0 of the world drawn at the bottom.
void write_topdown_ppm(const std::string& path, const World& w, const EpisodeLog& log,
                       int scale = 8);

}  // namespace cali
