#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "drf/box.hpp"
#include "drf/parallel.hpp"
#include "drf/tensor.hpp"

namespace drf {

// Generation ranges for procedural scenes. Extents mimic street-scale
// objects so residual normalization runs in a realistic regime.
struct SceneSpec {
    int objects_min = 1;
    int objects_max = 5;
    double half_extent = 20.0;  // scene spans [-half_extent, half_extent]^2
    double wh_min = 0.5, wh_max = 4.5;
    double l_min = 0.5, l_max = 4.5;
    double z_min = 0.5, z_max = 2.5;  // box center height
    int points_per_box_min = 60;
    int points_per_box_max = 140;
    double sigma_pts = 0.03;  // surface noise, clamped to +-3 sigma
    int clutter_min = 20;
    int clutter_max = 60;

    void validate() const;
};

struct Scene {
    std::vector<std::array<double, 3>> points;
    std::vector<Box3D> gt_boxes;
    std::int64_t scene_id = 0;
    bool rejection_exhausted = false;  // placement gave up before reaching the count
};

struct ProposalJitter {
    int per_gt = 3;                 // jittered copies per GT box
    double sigma_xy = 0.25;         // meters
    double sigma_z = 0.15;          // meters
    double sigma_log_extent = 0.08;
    double sigma_yaw = 0.08;        // radians
};

struct ProposalBatch {
    std::vector<Box3D> proposals;
    std::vector<int> matched_gt;  // index into gt_boxes, -1 when nothing overlaps
    std::vector<double> ious;     // max IoU against any GT (0 when none)
};

// Tokens fed to the attention stack: a 3x3x3 grid over the box interior,
// raw per-cell features (log1p(count), mean offset from cell center in the
// box frame), then a learned 4 -> d affine shared across cells.
struct RoiFeature {
    TensorD raw;     // [27 x 4]
    TensorD tokens;  // [27 x d]
};

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec);

// Corpus generation, parallel across scene ids; scenes[i] uses
// derive_seed(master_seed, i) so the result is policy- and thread-agnostic.
std::vector<Scene> generate_scenes(std::uint64_t master_seed, int count, const SceneSpec& spec,
                                   ExecPolicy policy);

ProposalBatch generate_proposals(const Scene& scene, std::uint64_t seed,
                                 const ProposalJitter& jitter, int negatives_per_scene);

TensorD roi_pool_raw(const Scene& scene, const Box3D& box);
RoiFeature roi_pool(const Scene& scene, const Box3D& box, const ParamStore& params);
// d(loss)/d(roi.proj.{w,b}) given the raw features and token gradient.
void roi_project_backward(const TensorD& raw, const TensorD& d_tokens, GradMap& grads);

// JSON-lines corpus: {"scene_id", "points", "boxes"} per line, floats with
// 17 significant digits so reload is bit-exact. Throws std::runtime_error on
// I/O failure.
void write_corpus(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_corpus(const std::string& path);

}  // namespace drf
