#include <atomic>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "drf/io.hpp"
#include "drf/pipeline.hpp"
#include "drf/scene.hpp"

namespace {

using namespace drf;

std::string resolve_data(const std::string& data) {
    if (!data.empty()) return data;
    const char* env = std::getenv("DRF3D_DATA_DIR");
    if (!env || !*env) {
        throw std::invalid_argument("--data not given and DRF3D_DATA_DIR is unset");
    }
    return std::string(env) + "/corpus.jsonl";
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::map<std::string, std::string> config_snapshot(const std::string& config_path) {
    if (config_path.empty()) return {};
    return parse_kv_file(config_path);
}

TrainConfig load_train_config(const std::string& config_path) {
    if (config_path.empty()) return TrainConfig{};
    return make_train_config(parse_kv_file(config_path));
}

// proposal generation for evaluation, seeded independently of training
std::vector<ProposalBatch> eval_proposals(const Model& model, const std::vector<Scene>& scenes,
                                          std::uint64_t seed) {
    std::vector<ProposalBatch> batches(scenes.size());
    parallel_for(scenes.size(), ExecPolicy::OpenMP, [&](std::size_t i) {
        batches[i] = generate_proposals(scenes[i], proposal_seed(seed, scenes[i].scene_id),
                                        model.jitter, model.negatives_per_scene);
    });
    return batches;
}

struct TimedEval {
    EvalReport report;
    double ms_per_scene = -1.0;
};

TimedEval run_eval(const Model& model, const std::vector<Scene>& scenes,
                   const std::vector<ProposalBatch>& batches, const InferConfig& cfg,
                   bool timing, ExecPolicy policy) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<InferResult> results = infer_corpus(model, scenes, batches, cfg, policy);
    const auto t1 = std::chrono::steady_clock::now();
    TimedEval out;
    out.report = evaluate(scenes, batches, results);
    if (timing && !scenes.empty()) {
        out.ms_per_scene = std::chrono::duration<double, std::milli>(t1 - t0).count() /
                           static_cast<double>(scenes.size());
    }
    out.report.latency_ms_per_scene = out.ms_per_scene;
    return out;
}

int cmd_gen_data(std::uint64_t seed, int scenes, const std::string& out_path) {
    if (scenes < 0) throw std::invalid_argument("--scenes must be >= 0");
    const SceneSpec spec;
    const std::vector<Scene> corpus = generate_scenes(seed, scenes, spec, ExecPolicy::OpenMP);
    write_corpus(out_path, corpus);

    RunManifest manifest;
    manifest.command = "gen-data";
    manifest.seed = seed;
    manifest.config["scenes"] = std::to_string(scenes);
    manifest.corpus_path = out_path;
    manifest.input_hash = hash_hex(
        fnv1a64("gen-data seed=" + std::to_string(seed) + " scenes=" + std::to_string(scenes)));
    write_manifest(out_path + ".manifest.json", manifest);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out_ckpt) {
    const TrainConfig cfg = load_train_config(config_path);
    const std::string data_path = resolve_data(data);
    const std::vector<Scene> scenes = read_corpus(data_path);

    Model model = make_model(cfg);
    const TrainStats stats = train(model, scenes, cfg, ExecPolicy::OpenMP);
    save_checkpoint(out_ckpt, model);

    std::uint64_t h = fnv1a64_file(data_path);
    if (!config_path.empty()) h ^= fnv1a64_file(config_path);
    RunManifest manifest;
    manifest.command = "train";
    manifest.seed = cfg.seed;
    manifest.config = config_snapshot(config_path);
    manifest.corpus_path = data_path;
    manifest.checkpoint_path = out_ckpt;
    manifest.metrics_path = out_ckpt + ".log.csv";
    manifest.input_hash = hash_hex(h);
    write_manifest(out_ckpt + ".manifest.json", manifest);
    write_train_log(out_ckpt + ".log.csv", manifest.input_hash, stats);

    std::cout << "trained " << cfg.epochs << " epochs on " << scenes.size()
              << " scenes; checkpoint: " << out_ckpt << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, int steps,
             const std::string& ensemble, std::uint64_t seed, const std::string& out_path,
             bool timing, double iou_thr) {
    const Model model = load_checkpoint(ckpt);
    const std::string data_path = resolve_data(data);
    const std::vector<Scene> scenes = read_corpus(data_path);

    InferConfig icfg;
    icfg.steps = steps;
    icfg.ensemble = parse_ensemble(ensemble);
    icfg.seed = seed;
    icfg.validate();

    const std::vector<ProposalBatch> batches = eval_proposals(model, scenes, seed);
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<InferResult> results =
        infer_corpus(model, scenes, batches, icfg, ExecPolicy::OpenMP);
    const auto t1 = std::chrono::steady_clock::now();
    EvalReport report = evaluate(scenes, batches, results, iou_thr);
    if (timing && !scenes.empty()) {
        report.latency_ms_per_scene = std::chrono::duration<double, std::milli>(t1 - t0).count() /
                                      static_cast<double>(scenes.size());
    }

    RunManifest manifest;
    manifest.command = "eval";
    manifest.seed = seed;
    manifest.config["steps"] = std::to_string(steps);
    manifest.config["ensemble"] = ensemble;
    manifest.config["iou_thr"] = fmt_g17(iou_thr);
    manifest.corpus_path = data_path;
    manifest.checkpoint_path = ckpt;
    manifest.metrics_path = out_path;
    manifest.input_hash = hash_hex(fnv1a64_file(data_path) ^ fnv1a64_file(ckpt) ^
                                   fnv1a64("steps=" + std::to_string(steps) +
                                           " ensemble=" + ensemble + " seed=" +
                                           std::to_string(seed)));
    write_manifest(out_path + ".manifest.json", manifest);
    write_eval_csv(out_path, manifest.input_hash, report, steps, ensemble);

    std::cout << "eval: mean IoU " << report.mean_iou_proposals << " -> "
              << report.mean_iou_predictions << ", AP(R40) " << report.ap_r40 << "\n";
    return 0;
}

int cmd_sweep(const std::string& axis, std::string values_arg, int jobs,
              const std::string& config_path, const std::string& data,
              const std::string& out_path) {
    if (jobs < 1) throw std::invalid_argument("--jobs must be >= 1");
    const TrainConfig base = load_train_config(config_path);
    const std::string data_path = resolve_data(data);
    const std::vector<Scene> scenes = read_corpus(data_path);

    if (values_arg.empty()) {
        if (axis == "snr") values_arg = "1,2,4";
        else if (axis == "steps") values_arg = "1,2,3,4,5";
        else if (axis == "tt") values_arg = "on,off";
        else if (axis == "ensemble") values_arg = "none,mean,nms";
    }
    const std::vector<std::string> values = split_csv(values_arg);
    if (values.empty()) throw std::invalid_argument("--values is empty");

    const std::uint64_t eval_seed = base.seed ^ 0x65766cULL;
    std::vector<SweepRow> rows(values.size());

    if (axis == "snr" || axis == "tt") {
        // one training run per cell; validate cell configs before any worker
        // thread starts so failures surface as exit codes, not terminate()
        std::vector<TrainConfig> cell_cfgs(values.size(), base);
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (axis == "snr") {
                cell_cfgs[i].diffusion.snr = std::stod(values[i]);
            } else {
                if (values[i] != "on" && values[i] != "off") {
                    throw std::invalid_argument("tt axis values must be on/off, got: " + values[i]);
                }
                cell_cfgs[i].enable_tt = values[i] == "on";
            }
            cell_cfgs[i].validate();
        }
        std::atomic<std::size_t> next{0};
        auto worker = [&](ExecPolicy policy) {
            for (std::size_t i = next.fetch_add(1); i < values.size(); i = next.fetch_add(1)) {
                const TrainConfig& cfg = cell_cfgs[i];
                Model model = make_model(cfg);
                train(model, scenes, cfg, policy);
                InferConfig icfg;
                icfg.steps = 1;
                icfg.seed = eval_seed;
                const TimedEval te = run_eval(model, scenes,
                                              eval_proposals(model, scenes, eval_seed), icfg,
                                              false, policy);
                rows[i] = {axis, values[i], te.report};
            }
        };
        if (jobs == 1) {
            worker(ExecPolicy::OpenMP);
        } else {
            std::vector<std::thread> pool;
            for (int j = 0; j < jobs; ++j) pool.emplace_back(worker, ExecPolicy::Serial);
            for (std::thread& th : pool) th.join();
        }
    } else if (axis == "steps" || axis == "ensemble") {
        // one shared training run; steps cells run serially so the latency
        // column is measured without contention
        Model model = make_model(base);
        train(model, scenes, base, ExecPolicy::OpenMP);
        const std::vector<ProposalBatch> batches = eval_proposals(model, scenes, eval_seed);
        for (std::size_t i = 0; i < values.size(); ++i) {
            InferConfig icfg;
            icfg.seed = eval_seed;
            if (axis == "steps") {
                icfg.steps = std::stoi(values[i]);
            } else {
                icfg.steps = 3;
                icfg.ensemble = parse_ensemble(values[i]);
            }
            const TimedEval te =
                run_eval(model, scenes, batches, icfg, axis == "steps", ExecPolicy::OpenMP);
            rows[i] = {axis, values[i], te.report};
        }
    } else {
        throw std::invalid_argument("unknown sweep axis: " + axis);
    }

    std::uint64_t h = fnv1a64_file(data_path) ^ fnv1a64("axis=" + axis + " values=" + values_arg);
    if (!config_path.empty()) h ^= fnv1a64_file(config_path);
    RunManifest manifest;
    manifest.command = "sweep";
    manifest.seed = base.seed;
    manifest.config = config_snapshot(config_path);
    manifest.config["axis"] = axis;
    manifest.config["values"] = values_arg;
    manifest.corpus_path = data_path;
    manifest.metrics_path = out_path;
    manifest.input_hash = hash_hex(h);
    write_manifest(out_path + ".manifest.json", manifest);
    write_sweep_csv(out_path, manifest.input_hash, rows);
    return 0;
}

int cmd_export_tt(const std::string& ckpt, const std::string& out_path) {
    const Model model = load_checkpoint(ckpt);
    std::vector<int> timesteps(model.diffusion.T);
    for (int t = 1; t <= model.diffusion.T; ++t) timesteps[t - 1] = t;
    const auto rows = export_tt_norms(model, timesteps);

    RunManifest manifest;
    manifest.command = "export-tt";
    manifest.checkpoint_path = ckpt;
    manifest.metrics_path = out_path;
    manifest.input_hash = hash_hex(fnv1a64_file(ckpt));
    write_manifest(out_path + ".manifest.json", manifest);
    write_tt_csv(out_path, manifest.input_hash, rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion-style 3D proposal refinement: data, training, ablations"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    int scenes = 100;
    std::string out_path, config_path, data_path, ckpt_path, ensemble = "none", axis, values;
    int steps = 1, jobs = 1;
    bool timing = false;
    double iou_thr = 0.5;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic scene corpus");
    gen->add_option("--seed", seed);
    gen->add_option("--scenes", scenes);
    gen->add_option("--out", out_path)->required();

    CLI::App* tr = app.add_subcommand("train", "train a refinement model");
    tr->add_option("--config", config_path);
    tr->add_option("--data", data_path);
    tr->add_option("--out-ckpt", ckpt_path)->required();

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--ckpt", ckpt_path)->required();
    ev->add_option("--data", data_path);
    ev->add_option("--steps", steps);
    ev->add_option("--ensemble", ensemble);
    ev->add_option("--seed", seed);
    ev->add_option("--out", out_path)->required();
    ev->add_flag("--timing", timing, "measure per-scene latency (breaks rerun hash stability)");
    ev->add_option("--iou-thr", iou_thr);

    CLI::App* sw = app.add_subcommand("sweep", "run an ablation axis and emit one table");
    sw->add_option("--axis", axis)->required();
    sw->add_option("--values", values);
    sw->add_option("--jobs", jobs);
    sw->add_option("--config", config_path);
    sw->add_option("--data", data_path);
    sw->add_option("--out", out_path)->required();

    CLI::App* ex = app.add_subcommand("export-tt", "export the temporal scale norm curve");
    ex->add_option("--ckpt", ckpt_path)->required();
    ex->add_option("--out", out_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(seed, scenes, out_path);
        if (tr->parsed()) return cmd_train(config_path, data_path, ckpt_path);
        if (ev->parsed())
            return cmd_eval(ckpt_path, data_path, steps, ensemble, seed, out_path, timing, iou_thr);
        if (sw->parsed()) return cmd_sweep(axis, values, jobs, config_path, data_path, out_path);
        if (ex->parsed()) return cmd_export_tt(ckpt_path, out_path);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
