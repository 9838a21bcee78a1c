#include "drf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace drf {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamped_normal(std::mt19937_64& rng, double sigma, double bound_sigmas) {
    if (sigma == 0.0) return 0.0;
    std::normal_distribution<double> dist(0.0, sigma);
    const double bound = bound_sigmas * sigma;
    return std::clamp(dist(rng), -bound, bound);
}

}  // namespace

void SceneSpec::validate() const {
    if (objects_min < 0 || objects_max < objects_min) {
        throw std::invalid_argument("SceneSpec: bad object count range");
    }
    if (!(wh_min > 0.0 && wh_max >= wh_min && l_min > 0.0 && l_max >= l_min)) {
        throw std::invalid_argument("SceneSpec: bad extent ranges");
    }
    if (points_per_box_min < 1 || points_per_box_max < points_per_box_min) {
        throw std::invalid_argument("SceneSpec: bad point count range");
    }
    if (clutter_min < 0 || clutter_max < clutter_min) {
        throw std::invalid_argument("SceneSpec: bad clutter range");
    }
    if (!(sigma_pts >= 0.0) || !(half_extent > 0.0)) {
        throw std::invalid_argument("SceneSpec: bad noise or extent");
    }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    // splitmix64 over master + stream index
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> count_dist(spec.objects_min, spec.objects_max);
    std::uniform_real_distribution<double> xy_dist(-spec.half_extent, spec.half_extent);
    std::uniform_real_distribution<double> wh_dist(spec.wh_min, spec.wh_max);
    std::uniform_real_distribution<double> l_dist(spec.l_min, spec.l_max);
    std::uniform_real_distribution<double> z_dist(spec.z_min, spec.z_max);
    std::uniform_real_distribution<double> yaw_dist(-kPi, kPi);

    Scene scene;
    const int want = count_dist(rng);
    for (int i = 0; i < want; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 100; ++attempt) {
            Box3D cand(xy_dist(rng), xy_dist(rng), z_dist(rng), wh_dist(rng), wh_dist(rng),
                       l_dist(rng), yaw_dist(rng));
            bool overlaps = false;
            for (const Box3D& b : scene.gt_boxes) {
                if (iou_3d(cand, b) > 0.0) {
                    overlaps = true;
                    break;
                }
            }
            if (!overlaps) {
                scene.gt_boxes.push_back(cand);
                placed = true;
                break;
            }
        }
        if (!placed) {
            scene.rejection_exhausted = true;
            break;
        }
    }

    // surface points: face chosen by area, uniform on the face, Gaussian
    // noise clamped to +-3 sigma applied in the box frame
    std::uniform_int_distribution<int> pts_dist(spec.points_per_box_min, spec.points_per_box_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (const Box3D& b : scene.gt_boxes) {
        const int npts = pts_dist(rng);
        const double area_wh = b.w * b.h;  // top/bottom
        const double area_wl = b.w * b.l;
        const double area_hl = b.h * b.l;
        const double total = 2.0 * (area_wh + area_wl + area_hl);
        const double ct = std::cos(b.theta), st = std::sin(b.theta);
        for (int k = 0; k < npts; ++k) {
            const double pick = unit(rng) * total;
            double u, v, w3;  // box frame
            const double ru = unit(rng), rv = unit(rng);
            if (pick < 2.0 * area_wh) {
                u = (ru - 0.5) * b.w;
                v = (rv - 0.5) * b.h;
                w3 = (pick < area_wh ? -0.5 : 0.5) * b.l;
            } else if (pick < 2.0 * area_wh + 2.0 * area_wl) {
                u = (ru - 0.5) * b.w;
                v = (pick < 2.0 * area_wh + area_wl ? -0.5 : 0.5) * b.h;
                w3 = (rv - 0.5) * b.l;
            } else {
                u = (pick < 2.0 * (area_wh + area_wl) + area_hl ? -0.5 : 0.5) * b.w;
                v = (ru - 0.5) * b.h;
                w3 = (rv - 0.5) * b.l;
            }
            u += clamped_normal(rng, spec.sigma_pts, 3.0);
            v += clamped_normal(rng, spec.sigma_pts, 3.0);
            w3 += clamped_normal(rng, spec.sigma_pts, 3.0);
            scene.points.push_back({b.x + ct * u - st * v, b.y + st * u + ct * v, b.z + w3});
        }
    }

    std::uniform_int_distribution<int> clutter_dist(spec.clutter_min, spec.clutter_max);
    std::uniform_real_distribution<double> clutter_z(0.0, spec.z_max + 0.5 * spec.l_max);
    const int nclutter = clutter_dist(rng);
    for (int k = 0; k < nclutter; ++k) {
        scene.points.push_back({xy_dist(rng), xy_dist(rng), clutter_z(rng)});
    }
    return scene;
}

std::vector<Scene> generate_scenes(std::uint64_t master_seed, int count, const SceneSpec& spec,
                                   ExecPolicy policy) {
    if (count < 0) throw std::invalid_argument("generate_scenes: negative count");
    std::vector<Scene> scenes(static_cast<std::size_t>(count));
    parallel_for(scenes.size(), policy, [&](std::size_t i) {
        scenes[i] = generate_scene(derive_seed(master_seed, i), spec);
        scenes[i].scene_id = static_cast<std::int64_t>(i);
    });
    return scenes;
}

ProposalBatch generate_proposals(const Scene& scene, std::uint64_t seed,
                                 const ProposalJitter& jitter, int negatives_per_scene) {
    if (jitter.per_gt < 0 || negatives_per_scene < 0) {
        throw std::invalid_argument("generate_proposals: negative counts");
    }
    std::mt19937_64 rng(seed);
    ProposalBatch batch;

    for (const Box3D& g : scene.gt_boxes) {
        for (int k = 0; k < jitter.per_gt; ++k) {
            const double dx = clamped_normal(rng, jitter.sigma_xy, 3.0);
            const double dy = clamped_normal(rng, jitter.sigma_xy, 3.0);
            const double dz = clamped_normal(rng, jitter.sigma_z, 3.0);
            const double lw = clamped_normal(rng, jitter.sigma_log_extent, 3.0);
            const double lh = clamped_normal(rng, jitter.sigma_log_extent, 3.0);
            const double ll = clamped_normal(rng, jitter.sigma_log_extent, 3.0);
            const double dth = clamped_normal(rng, jitter.sigma_yaw, 3.0);
            batch.proposals.emplace_back(g.x + dx, g.y + dy, g.z + dz, g.w * std::exp(lw),
                                         g.h * std::exp(lh), g.l * std::exp(ll), g.theta + dth);
        }
    }

    std::uniform_real_distribution<double> xy_dist(-20.0, 20.0);
    std::uniform_real_distribution<double> wh_dist(0.5, 4.5);
    std::uniform_real_distribution<double> z_dist(0.5, 2.5);
    std::uniform_real_distribution<double> yaw_dist(-kPi, kPi);
    for (int k = 0; k < negatives_per_scene; ++k) {
        batch.proposals.emplace_back(xy_dist(rng), xy_dist(rng), z_dist(rng), wh_dist(rng),
                                     wh_dist(rng), wh_dist(rng), yaw_dist(rng));
    }

    batch.matched_gt.resize(batch.proposals.size(), -1);
    batch.ious.resize(batch.proposals.size(), 0.0);
    for (std::size_t i = 0; i < batch.proposals.size(); ++i) {
        double best = 0.0;
        int best_j = -1;
        for (std::size_t j = 0; j < scene.gt_boxes.size(); ++j) {
            const double iou = iou_3d(batch.proposals[i], scene.gt_boxes[j]);
            if (iou > best) {
                best = iou;
                best_j = static_cast<int>(j);
            }
        }
        batch.matched_gt[i] = best_j;
        batch.ious[i] = best;
    }
    return batch;
}

TensorD roi_pool_raw(const Scene& scene, const Box3D& box) {
    TensorD raw = TensorD::zeros({27, 4});
    int counts[27] = {};
    double sums[27][3] = {};

    const double ct = std::cos(box.theta), st = std::sin(box.theta);
    const double half[3] = {box.w * 0.5, box.h * 0.5, box.l * 0.5};
    const double cell[3] = {box.w / 3.0, box.h / 3.0, box.l / 3.0};
    for (const auto& p : scene.points) {
        const double rx = p[0] - box.x, ry = p[1] - box.y;
        const double u[3] = {ct * rx + st * ry, -st * rx + ct * ry, p[2] - box.z};
        if (std::fabs(u[0]) > half[0] || std::fabs(u[1]) > half[1] || std::fabs(u[2]) > half[2]) {
            continue;
        }
        int idx[3];
        for (int a = 0; a < 3; ++a) {
            idx[a] = std::min(2, static_cast<int>((u[a] + half[a]) / cell[a]));
        }
        const int c = (idx[0] * 3 + idx[1]) * 3 + idx[2];
        counts[c] += 1;
        for (int a = 0; a < 3; ++a) {
            const double center = (idx[a] + 0.5) * cell[a] - half[a];
            sums[c][a] += u[a] - center;
        }
    }
    for (int c = 0; c < 27; ++c) {
        raw.at(c, 0) = std::log1p(static_cast<double>(counts[c]));
        if (counts[c] > 0) {
            for (int a = 0; a < 3; ++a) raw.at(c, a + 1) = sums[c][a] / counts[c];
        }
    }
    return raw;
}

RoiFeature roi_pool(const Scene& scene, const Box3D& box, const ParamStore& params) {
    RoiFeature f;
    f.raw = roi_pool_raw(scene, box);
    const TensorD& w = params.value("roi.proj.w");
    const TensorD& b = params.value("roi.proj.b");
    const std::size_t d = w.cols();
    f.tokens = TensorD::zeros({27, d});
    for (std::size_t i = 0; i < 27; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < 4; ++k) acc += f.raw.at(i, k) * w.at(k, j);
            f.tokens.at(i, j) = acc;
        }
    }
    return f;
}

void roi_project_backward(const TensorD& raw, const TensorD& d_tokens, GradMap& grads) {
    TensorD& dw = grad_slot(grads, "roi.proj.w");
    TensorD& db = grad_slot(grads, "roi.proj.b");
    const std::size_t d = d_tokens.cols();
    for (std::size_t i = 0; i < 27; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double g = d_tokens.at(i, j);
            db[j] += g;
            for (std::size_t k = 0; k < 4; ++k) dw.at(k, j) += raw.at(i, k) * g;
        }
    }
}

void write_corpus(const std::string& path, const std::vector<Scene>& scenes) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf;
    };
    for (const Scene& s : scenes) {
        out << "{\"scene_id\":" << s.scene_id << ",\"points\":[";
        for (std::size_t i = 0; i < s.points.size(); ++i) {
            if (i) out << ',';
            out << '[';
            put(s.points[i][0]);
            out << ',';
            put(s.points[i][1]);
            out << ',';
            put(s.points[i][2]);
            out << ']';
        }
        out << "],\"boxes\":[";
        for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
            const Box3D& b = s.gt_boxes[i];
            if (i) out << ',';
            out << '[';
            const double vals[7] = {b.x, b.y, b.z, b.w, b.h, b.l, b.theta};
            for (int k = 0; k < 7; ++k) {
                if (k) out << ',';
                put(vals[k]);
            }
            out << ']';
        }
        out << "]}\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Scene> read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<Scene> scenes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        Scene s;
        s.scene_id = j.at("scene_id").get<std::int64_t>();
        for (const auto& p : j.at("points")) {
            s.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(),
                                p.at(2).get<double>()});
        }
        for (const auto& b : j.at("boxes")) {
            s.gt_boxes.emplace_back(b.at(0).get<double>(), b.at(1).get<double>(),
                                    b.at(2).get<double>(), b.at(3).get<double>(),
                                    b.at(4).get<double>(), b.at(5).get<double>(),
                                    b.at(6).get<double>());
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace drf
