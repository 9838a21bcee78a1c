// Compares the serial reference path against the OpenMP path for the three
// batch kernels (scene generation, gradient accumulation, corpus inference)
// and checks the results are bit-identical.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "drf/pipeline.hpp"
#include "drf/scene.hpp"

using namespace drf;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

bool scenes_equal(const std::vector<Scene>& a, const std::vector<Scene>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].points.size() != b[i].points.size() ||
            a[i].gt_boxes.size() != b[i].gt_boxes.size()) {
            return false;
        }
        if (std::memcmp(a[i].points.data(), b[i].points.data(),
                        a[i].points.size() * sizeof(a[i].points[0])) != 0) {
            return false;
        }
        for (std::size_t j = 0; j < a[i].gt_boxes.size(); ++j) {
            const Box3D &x = a[i].gt_boxes[j], &y = b[i].gt_boxes[j];
            if (std::memcmp(&x, &y, sizeof(Box3D)) != 0) return false;
        }
    }
    return true;
}

bool params_equal(const ParamStore& a, const ParamStore& b) {
    if (a.params.size() != b.params.size()) return false;
    auto it_b = b.params.begin();
    for (const auto& [name, p] : a.params) {
        if (it_b->first != name || it_b->second.value.data != p.value.data) return false;
        ++it_b;
    }
    return true;
}

bool results_equal(const std::vector<InferResult>& a, const std::vector<InferResult>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].confidences != b[i].confidences) return false;
        if (a[i].boxes.size() != b[i].boxes.size()) return false;
        for (std::size_t j = 0; j < a[i].boxes.size(); ++j) {
            if (std::memcmp(&a[i].boxes[j], &b[i].boxes[j], sizeof(Box3D)) != 0) return false;
        }
    }
    return true;
}

void report(const char* name, double serial_ms, double omp_ms, bool match) {
    std::printf("%-22s %10.1f ms %10.1f ms %8.2fx   %s\n", name, serial_ms, omp_ms,
                serial_ms / omp_ms, match ? "bit-exact" : "MISMATCH");
}

}  // namespace

int main() {
    std::printf("%-22s %13s %13s %9s   %s\n", "kernel", "serial", "openmp", "speedup", "check");

    const SceneSpec spec;
    bool all_match = true;

    // scene generation
    auto t0 = std::chrono::steady_clock::now();
    const std::vector<Scene> scenes_s = generate_scenes(7, 300, spec, ExecPolicy::Serial);
    const double gen_serial = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    const std::vector<Scene> scenes_p = generate_scenes(7, 300, spec, ExecPolicy::OpenMP);
    const double gen_omp = ms_since(t0);
    const bool gen_match = scenes_equal(scenes_s, scenes_p);
    report("scene generation", gen_serial, gen_omp, gen_match);
    all_match = all_match && gen_match;

    // gradient accumulation: identical models stepped once per policy
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_scenes = 32;
    const std::vector<Scene> train_scenes(scenes_s.begin(), scenes_s.begin() + 32);
    std::vector<const Scene*> batch;
    std::vector<ProposalBatch> props;
    for (const Scene& s : train_scenes) {
        props.push_back(generate_proposals(s, proposal_seed(cfg.seed, s.scene_id), cfg.jitter,
                                           cfg.negatives_per_scene));
    }
    std::vector<const ProposalBatch*> prop_ptrs;
    for (std::size_t i = 0; i < train_scenes.size(); ++i) {
        batch.push_back(&train_scenes[i]);
        prop_ptrs.push_back(&props[i]);
    }
    Model model_s = make_model(cfg);
    Model model_p = make_model(cfg);
    t0 = std::chrono::steady_clock::now();
    train_step(model_s, batch, prop_ptrs, 99, cfg.lr, ExecPolicy::Serial);
    const double step_serial = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    train_step(model_p, batch, prop_ptrs, 99, cfg.lr, ExecPolicy::OpenMP);
    const double step_omp = ms_since(t0);
    const bool step_match = params_equal(model_s.params, model_p.params);
    report("gradient accumulation", step_serial, step_omp, step_match);
    all_match = all_match && step_match;

    // corpus inference
    const std::vector<Scene> eval_scenes(scenes_s.begin(), scenes_s.begin() + 64);
    std::vector<ProposalBatch> eval_batches;
    for (const Scene& s : eval_scenes) {
        eval_batches.push_back(generate_proposals(s, proposal_seed(11, s.scene_id),
                                                  model_s.jitter, model_s.negatives_per_scene));
    }
    InferConfig icfg;
    icfg.steps = 3;
    t0 = std::chrono::steady_clock::now();
    const auto res_s = infer_corpus(model_s, eval_scenes, eval_batches, icfg, ExecPolicy::Serial);
    const double inf_serial = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    const auto res_p = infer_corpus(model_s, eval_scenes, eval_batches, icfg, ExecPolicy::OpenMP);
    const double inf_omp = ms_since(t0);
    const bool inf_match = results_equal(res_s, res_p);
    report("corpus inference", inf_serial, inf_omp, inf_match);
    all_match = all_match && inf_match;

    return all_match ? 0 : 1;
}
