#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "drf/box.hpp"
#include "drf/diffusion.hpp"
#include "drf/losses.hpp"
#include "drf/network.hpp"
#include "drf/parallel.hpp"
#include "drf/scene.hpp"

namespace drf {

struct TrainConfig {
    int epochs = 10;
    int batch_scenes = 16;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    DiffusionConfig diffusion;
    LossConfig loss;
    HamConfig ham;
    bool enable_ham = true;
    bool enable_diffusion = true;
    bool enable_tt = true;
    ProposalJitter jitter;
    int negatives_per_scene = 2;

    void validate() const;
};

enum class Ensemble { None, Mean, Nms };

struct InferConfig {
    int steps = 1;
    Ensemble ensemble = Ensemble::None;
    std::uint64_t seed = 1;

    void validate() const;  // steps >= 1
};

// Trained state plus everything inference needs to reproduce it.
struct Model {
    HamConfig ham;
    DiffusionConfig diffusion;
    LossConfig loss;
    ProposalJitter jitter;
    int negatives_per_scene = 2;
    bool enable_ham = true;
    bool enable_diffusion = true;
    bool enable_tt = true;
    ParamStore params;
    NoiseSchedule schedule;
};

Model make_model(const TrainConfig& cfg);

struct StepLosses {
    double reg = 0.0;
    double cls = 0.0;
    std::size_t positives = 0;
};

// One optimizer step over a batch of scenes. All RNG draws happen serially
// up front and gradients accumulate into fixed-size blocks merged in block
// order, so the result is bit-identical for every ExecPolicy.
StepLosses train_step(Model& model, const std::vector<const Scene*>& batch,
                      const std::vector<const ProposalBatch*>& proposals,
                      std::uint64_t step_seed, double lr, ExecPolicy policy);

struct TrainEpochRow {
    int epoch = 0;
    double reg = 0.0;
    double cls = 0.0;
};

struct TrainStats {
    std::vector<TrainEpochRow> epochs;
    std::uint64_t zero_positive_steps = 0;
};

TrainStats train(Model& model, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                 ExecPolicy policy);

// Deterministic per-scene proposal seed used by both training and eval.
std::uint64_t proposal_seed(std::uint64_t master, std::int64_t scene_id);

struct InferResult {
    std::vector<Box3D> boxes;                    // post-ensemble, one per proposal
    std::vector<double> confidences;             // last-step score
    std::vector<std::vector<Box3D>> step_boxes;  // [proposal][step]
};

InferResult infer(const Model& model, const Scene& scene, const ProposalBatch& batch,
                  const InferConfig& cfg);

std::vector<InferResult> infer_corpus(const Model& model, const std::vector<Scene>& scenes,
                                      const std::vector<ProposalBatch>& batches,
                                      const InferConfig& cfg, ExecPolicy policy);

struct EvalReport {
    double mean_iou_proposals = 0.0;
    double mean_iou_predictions = 0.0;
    std::map<double, double> recall_at;  // threshold -> fraction of GT recovered
    double ap_r40 = -1.0;                // -1 when undefined (zero GT)
    std::vector<double> per_step_mean_iou;
    double latency_ms_per_scene = -1.0;  // -1 unless the caller timed inference
};

EvalReport evaluate(const std::vector<Scene>& scenes,
                    const std::vector<ProposalBatch>& batches,
                    const std::vector<InferResult>& results, double iou_threshold = 0.5);

// (t, |W_t|) rows for the temporal-transformation norm curve.
std::vector<std::pair<int, double>> export_tt_norms(const Model& model,
                                                    const std::vector<int>& timesteps);

// Binary checkpoint; doubles stored as raw bytes so reload is bit-exact.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace drf
