#include "drf/io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace drf {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    int out;
    try {
        out = std::stoi(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": not an integer: " + v);
    }
    if (pos != v.size()) throw std::invalid_argument("config key " + key + ": not an integer: " + v);
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": not a number: " + v);
    }
    if (pos != v.size()) throw std::invalid_argument("config key " + key + ": not a number: " + v);
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long out;
    try {
        out = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + ": not an unsigned integer: " + v);
    }
    if (pos != v.size()) {
        throw std::invalid_argument("config key " + key + ": not an unsigned integer: " + v);
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key " + key + ": not a boolean: " + v);
}

}  // namespace

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key=value, got: " + t);
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": empty key");
        }
        if (!kv.emplace(key, value).second) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": duplicate key: " + key);
        }
    }
    return kv;
}

TrainConfig make_train_config(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    for (const auto& [key, v] : kv) {
        if (key == "epochs") cfg.epochs = to_int(key, v);
        else if (key == "batch_scenes") cfg.batch_scenes = to_int(key, v);
        else if (key == "lr") cfg.lr = to_double(key, v);
        else if (key == "seed") cfg.seed = to_u64(key, v);
        else if (key == "T") cfg.diffusion.T = to_int(key, v);
        else if (key == "schedule_s") cfg.diffusion.s = to_double(key, v);
        else if (key == "snr") cfg.diffusion.snr = to_double(key, v);
        else if (key == "clamp_bound") cfg.diffusion.clamp_bound = to_double(key, v);
        else if (key == "d") cfg.ham.d = to_int(key, v);
        else if (key == "heads") cfg.ham.heads = to_int(key, v);
        else if (key == "g_hidden") cfg.ham.g_hidden = to_int(key, v);
        else if (key == "s_hidden") cfg.ham.s_hidden = to_int(key, v);
        else if (key == "time_width") cfg.ham.time_width = to_int(key, v);
        else if (key == "theta_reg") cfg.loss.theta_reg = to_double(key, v);
        else if (key == "theta_L") cfg.loss.theta_L = to_double(key, v);
        else if (key == "theta_H") cfg.loss.theta_H = to_double(key, v);
        else if (key == "smooth_l1_beta") cfg.loss.smooth_l1_beta = to_double(key, v);
        else if (key == "corner_weight") cfg.loss.corner_weight = to_double(key, v);
        else if (key == "focal_alpha") cfg.loss.focal_alpha = to_double(key, v);
        else if (key == "focal_gamma") cfg.loss.focal_gamma = to_double(key, v);
        else if (key == "enable_ham") cfg.enable_ham = to_bool(key, v);
        else if (key == "enable_diffusion") cfg.enable_diffusion = to_bool(key, v);
        else if (key == "enable_tt") cfg.enable_tt = to_bool(key, v);
        else if (key == "proposals_per_gt") cfg.jitter.per_gt = to_int(key, v);
        else if (key == "negatives_per_scene") cfg.negatives_per_scene = to_int(key, v);
        else if (key == "sigma_xy") cfg.jitter.sigma_xy = to_double(key, v);
        else if (key == "sigma_z") cfg.jitter.sigma_z = to_double(key, v);
        else if (key == "sigma_log_extent") cfg.jitter.sigma_log_extent = to_double(key, v);
        else if (key == "sigma_yaw") cfg.jitter.sigma_yaw = to_double(key, v);
        else throw std::invalid_argument("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string s = buf.str();
    return fnv1a64(s);
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_manifest(const std::string& path, const RunManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["seed"] = m.seed;
    j["config"] = m.config;
    j["corpus"] = m.corpus_path;
    j["checkpoint"] = m.checkpoint_path;
    j["metrics"] = m.metrics_path;
    j["input_hash"] = m.input_hash;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_train_log(const std::string& path, const std::string& manifest_hex,
                     const TrainStats& stats) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# schema drf3d.train.v1\n# manifest " << manifest_hex << "\n";
    out << "epoch,reg_loss,cls_loss\n";
    for (const TrainEpochRow& row : stats.epochs) {
        out << row.epoch << ',' << fmt_g17(row.reg) << ',' << fmt_g17(row.cls) << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

std::string opt_field(double v) { return v < 0.0 ? std::string() : fmt_g17(v); }

void eval_row(std::ofstream& out, const EvalReport& r, int steps, const std::string& ensemble) {
    out << "final," << steps << ',' << ensemble << ",," << fmt_g17(r.mean_iou_proposals) << ','
        << fmt_g17(r.mean_iou_predictions) << ',' << opt_field(r.ap_r40) << ','
        << fmt_g17(r.recall_at.count(0.3) ? r.recall_at.at(0.3) : 0.0) << ','
        << fmt_g17(r.recall_at.count(0.5) ? r.recall_at.at(0.5) : 0.0) << ','
        << fmt_g17(r.recall_at.count(0.7) ? r.recall_at.at(0.7) : 0.0) << ','
        << fmt_g17(r.latency_ms_per_scene) << "\n";
}

}  // namespace

void write_eval_csv(const std::string& path, const std::string& manifest_hex,
                    const EvalReport& report, int steps, const std::string& ensemble) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# schema drf3d.eval.v1\n# manifest " << manifest_hex << "\n";
    out << "row,steps,ensemble,step,mean_iou_proposals,mean_iou_predictions,ap_r40,"
           "recall_0.30,recall_0.50,recall_0.70,latency_ms\n";
    for (std::size_t k = 0; k < report.per_step_mean_iou.size(); ++k) {
        out << "step," << steps << ',' << ensemble << ',' << (k + 1) << ",,"
            << fmt_g17(report.per_step_mean_iou[k]) << ",,,,,\n";
    }
    eval_row(out, report, steps, ensemble);
    if (!out) throw std::runtime_error("write failed: " + path);
}

void write_sweep_csv(const std::string& path, const std::string& manifest_hex,
                     const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# schema drf3d.sweep.v1\n# manifest " << manifest_hex << "\n";
    out << "axis,value,mean_iou_proposals,mean_iou_predictions,ap_r40,latency_ms\n";
    for (const SweepRow& row : rows) {
        out << row.axis << ',' << row.value << ',' << fmt_g17(row.report.mean_iou_proposals)
            << ',' << fmt_g17(row.report.mean_iou_predictions) << ','
            << opt_field(row.report.ap_r40) << ',' << fmt_g17(row.report.latency_ms_per_scene)
            << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void write_tt_csv(const std::string& path, const std::string& manifest_hex,
                  const std::vector<std::pair<int, double>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# schema drf3d.tt.v1\n# manifest " << manifest_hex << "\n";
    out << "t,w_norm\n";
    for (const auto& [t, norm] : rows) out << t << ',' << fmt_g17(norm) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

Ensemble parse_ensemble(const std::string& name) {
    if (name == "none") return Ensemble::None;
    if (name == "mean") return Ensemble::Mean;
    if (name == "nms") return Ensemble::Nms;
    throw std::invalid_argument("unknown ensemble mode: " + name);
}

std::string ensemble_name(Ensemble e) {
    switch (e) {
        case Ensemble::None: return "none";
        case Ensemble::Mean: return "mean";
        case Ensemble::Nms: return "nms";
    }
    return "none";
}

}  // namespace drf
