#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drf/pipeline.hpp"

namespace drf {

// Flat key=value config file: one pair per line, '#' comments, blank lines
// ignored. Duplicate keys are an error.
std::map<std::string, std::string> parse_kv_file(const std::string& path);

// Builds a TrainConfig from parsed keys; every key must be known, unknown
// keys raise std::invalid_argument naming the offender.
TrainConfig make_train_config(const std::map<std::string, std::string>& kv);

// FNV-1a over raw bytes; the content hash used by run manifests.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;
    std::string corpus_path;
    std::string checkpoint_path;
    std::string metrics_path;
    std::string input_hash;
};

// JSON sidecar written next to every command's outputs.
void write_manifest(const std::string& path, const RunManifest& m);

// 17-significant-digit float formatting shared by all CSV emitters.
std::string fmt_g17(double v);

void write_train_log(const std::string& path, const std::string& manifest_hex,
                     const TrainStats& stats);

void write_eval_csv(const std::string& path, const std::string& manifest_hex,
                    const EvalReport& report, int steps, const std::string& ensemble);

struct SweepRow {
    std::string axis;
    std::string value;
    EvalReport report;
};

void write_sweep_csv(const std::string& path, const std::string& manifest_hex,
                     const std::vector<SweepRow>& rows);

void write_tt_csv(const std::string& path, const std::string& manifest_hex,
                  const std::vector<std::pair<int, double>>& rows);

Ensemble parse_ensemble(const std::string& name);  // none|mean|nms
std::string ensemble_name(Ensemble e);

}  // namespace drf
