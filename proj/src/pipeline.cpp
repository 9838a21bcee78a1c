#include "drf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace drf {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double softplus(double z) {
    if (z > 0.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

TensorD mean_pool_tokens(const TensorD& tokens) {
    const std::size_t n = tokens.rows(), d = tokens.cols();
    TensorD out = TensorD::zeros({1, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[j] += tokens.at(i, j);
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
    return out;
}

NormalizedResidual7 prior_draw(const std::array<double, 7>& eps, const DiffusionConfig& cfg) {
    NormalizedResidual7 x;
    std::array<double, 7> a;
    for (int k = 0; k < 7; ++k) a[k] = eps[k] / cfg.snr;
    x = NormalizedResidual7::from_array(a);
    return clamp_residual(x, cfg.clamp_bound);
}

constexpr std::uint64_t kProposalStream = 0x70726f70ULL;  // rng stream tags
constexpr std::uint64_t kStepStream = 0x73746570ULL;

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1 || batch_scenes < 1) throw std::invalid_argument("TrainConfig: counts must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (diffusion.T < 1) throw std::invalid_argument("TrainConfig: diffusion.T must be >= 1");
    if (!(diffusion.snr > 0.0)) throw std::invalid_argument("TrainConfig: snr must be > 0");
    if (!(diffusion.clamp_bound > 0.0)) throw std::invalid_argument("TrainConfig: clamp_bound must be > 0");
    if (jitter.per_gt < 0 || negatives_per_scene < 0) {
        throw std::invalid_argument("TrainConfig: proposal counts must be >= 0");
    }
    ham.validate();
    loss.validate();
}

void InferConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("InferConfig: steps must be >= 1");
}

Model make_model(const TrainConfig& cfg) {
    cfg.validate();
    Model m;
    m.ham = cfg.ham;
    m.diffusion = cfg.diffusion;
    m.loss = cfg.loss;
    m.jitter = cfg.jitter;
    m.negatives_per_scene = cfg.negatives_per_scene;
    m.enable_ham = cfg.enable_ham;
    m.enable_diffusion = cfg.enable_diffusion;
    m.enable_tt = cfg.enable_tt;
    init_refinement_params(m.params, m.ham, cfg.seed);
    m.schedule = build_cosine_schedule(m.diffusion.T, m.diffusion.s);
    return m;
}

std::uint64_t proposal_seed(std::uint64_t master, std::int64_t scene_id) {
    return derive_seed(master ^ kProposalStream, static_cast<std::uint64_t>(scene_id));
}

namespace {

struct TrainItem {
    const Scene* scene;
    Box3D proposal;
    int matched_gt;
    double iou;
    int t;
    std::array<double, 7> eps;
};

// forward + backward for one proposal; returns (reg raw, cls raw)
void train_item(const Model& model, const TrainItem& it, double inv_n_reg, double inv_n_cls,
                GradMap& grads, double& reg_out, double& cls_out) {
    const ParamStore& params = model.params;
    const Box3D& P = it.proposal;
    const bool positive = it.matched_gt >= 0;

    NormalizedResidual7 x0{};
    if (positive) x0 = normalize(encode(P, it.scene->gt_boxes[it.matched_gt]), P);
    NormalizedResidual7 x_t;
    if (model.enable_diffusion && positive) {
        x_t = q_sample(x0, it.t, it.eps, model.schedule, model.diffusion);
    } else {
        x_t = prior_draw(it.eps, model.diffusion);
    }

    const Box3D hyp = decode(P, denormalize(x_t, P));
    const RoiFeature f_p = roi_pool(*it.scene, P, params);
    const RoiFeature f_h = roi_pool(*it.scene, hyp, params);
    const TensorD pooled_p = mean_pool_tokens(f_p.tokens);

    HamCache ham_cache;
    TensorD h_t = TensorD::zeros({1, static_cast<std::size_t>(model.ham.d)});
    if (model.enable_ham) {
        h_t = ham_forward(params, model.ham, f_h.tokens, x_t, it.t, model.enable_tt, &ham_cache);
    }

    HeadCache head_cache;
    const HeadOut out = detection_head(params, pooled_p, h_t, &head_cache);

    // classification against the IoU-ramp target
    const double y = classification_target(it.iou, model.loss.theta_L, model.loss.theta_H);
    cls_out += softplus(out.logit) - y * out.logit;
    const double d_logit = (sigmoid(out.logit) - y) * inv_n_cls;

    // regression on matched proposals only
    std::array<double, 7> d_x0{};
    if (positive) {
        std::vector<std::array<double, 7>> d_preds;
        const double v = regression_loss_grad(
            {out.x0_hat}, {x0}, {P}, {it.scene->gt_boxes[it.matched_gt]}, {it.iou}, model.loss,
            d_preds);
        reg_out += v;
        for (int k = 0; k < 7; ++k) d_x0[k] = d_preds[0][k] * inv_n_reg;
    }

    TensorD d_pooled, d_h;
    detection_head_backward(params, head_cache, d_x0, d_logit, d_pooled, d_h, grads);

    if (model.enable_ham) {
        const TensorD d_h_tokens = ham_backward(params, model.ham, ham_cache, d_h, grads);
        roi_project_backward(f_h.raw, d_h_tokens, grads);
    }

    // mean pool spreads the gradient evenly over tokens
    const std::size_t ntok = f_p.tokens.rows();
    TensorD d_p_tokens = TensorD::zeros({ntok, d_pooled.cols()});
    const double inv_tok = 1.0 / static_cast<double>(ntok);
    for (std::size_t i = 0; i < ntok; ++i) {
        for (std::size_t j = 0; j < d_pooled.cols(); ++j) {
            d_p_tokens.at(i, j) = d_pooled[j] * inv_tok;
        }
    }
    roi_project_backward(f_p.raw, d_p_tokens, grads);
}

}  // namespace

StepLosses train_step(Model& model, const std::vector<const Scene*>& batch,
                      const std::vector<const ProposalBatch*>& proposals,
                      std::uint64_t step_seed, double lr, ExecPolicy policy) {
    if (batch.size() != proposals.size()) {
        throw std::invalid_argument("train_step: batch/proposal lists differ");
    }

    std::vector<TrainItem> items;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const ProposalBatch& pb = *proposals[s];
        for (std::size_t i = 0; i < pb.proposals.size(); ++i) {
            items.push_back({batch[s], pb.proposals[i], pb.matched_gt[i], pb.ious[i], 0, {}});
        }
    }

    // serial pre-draw keeps the stream independent of the execution policy;
    // with diffusion off the timestep conditioning is fixed at T
    std::mt19937_64 rng(step_seed);
    std::uniform_int_distribution<int> t_dist(1, model.diffusion.T);
    std::normal_distribution<double> norm01(0.0, 1.0);
    for (TrainItem& it : items) {
        it.t = model.enable_diffusion ? t_dist(rng) : model.diffusion.T;
        for (int k = 0; k < 7; ++k) it.eps[k] = norm01(rng);
    }

    std::size_t n_reg = 0;
    for (const TrainItem& it : items) {
        if (it.matched_gt >= 0) ++n_reg;
    }
    const std::size_t n_cls = items.size();
    const double inv_n_reg = n_reg ? 1.0 / static_cast<double>(n_reg) : 0.0;
    const double inv_n_cls = n_cls ? 1.0 / static_cast<double>(n_cls) : 0.0;

    const std::size_t nblocks = items.empty() ? 0 : (items.size() + kGradBlock - 1) / kGradBlock;
    std::vector<GradMap> block_grads;
    block_grads.reserve(nblocks);
    for (std::size_t b = 0; b < nblocks; ++b) block_grads.push_back(grads_like(model.params));
    std::vector<double> block_reg(nblocks, 0.0), block_cls(nblocks, 0.0);

    for_blocks(items.size(), kGradBlock, policy, [&](std::size_t b, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            train_item(model, items[i], inv_n_reg, inv_n_cls, block_grads[b], block_reg[b],
                       block_cls[b]);
        }
    });

    model.params.zero_grad();
    for (std::size_t b = 0; b < nblocks; ++b) accumulate_into_store(model.params, block_grads[b]);
    adam_step(model.params, lr, 0.9, 0.999, 1e-8);

    StepLosses losses;
    losses.positives = n_reg;
    double reg_sum = 0.0, cls_sum = 0.0;
    for (std::size_t b = 0; b < nblocks; ++b) {
        reg_sum += block_reg[b];
        cls_sum += block_cls[b];
    }
    losses.reg = reg_sum * inv_n_reg;
    losses.cls = cls_sum * inv_n_cls;
    return losses;
}

TrainStats train(Model& model, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                 ExecPolicy policy) {
    cfg.validate();
    if (scenes.empty()) throw std::invalid_argument("train: empty corpus");

    std::vector<ProposalBatch> proposal_batches(scenes.size());
    parallel_for(scenes.size(), policy, [&](std::size_t i) {
        proposal_batches[i] = generate_proposals(scenes[i], proposal_seed(cfg.seed, scenes[i].scene_id),
                                                 cfg.jitter, cfg.negatives_per_scene);
    });

    TrainStats stats;
    std::uint64_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double reg_sum = 0.0, cls_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < scenes.size(); start += cfg.batch_scenes) {
            const std::size_t stop = std::min(scenes.size(), start + cfg.batch_scenes);
            std::vector<const Scene*> batch;
            std::vector<const ProposalBatch*> props;
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(&scenes[i]);
                props.push_back(&proposal_batches[i]);
            }
            const StepLosses sl = train_step(model, batch, props,
                                             derive_seed(cfg.seed ^ kStepStream, global_step),
                                             cfg.lr, policy);
            if (sl.positives == 0) ++stats.zero_positive_steps;
            reg_sum += sl.reg;
            cls_sum += sl.cls;
            ++global_step;
            ++steps;
        }
        stats.epochs.push_back({epoch, reg_sum / steps, cls_sum / steps});
    }
    return stats;
}

namespace {

// regression-delta clipping for inference decodes: a junk estimate on an
// empty RoI must not push the decoded box beyond exp/scene range
Residual7 clip_delta(Residual7 r, const Box3D& frame) {
    const double d = std::hypot(frame.w, frame.h);
    const double cx = 100.0 / d, cz = 100.0 / frame.h, ce = 4.0;
    r.dx = std::clamp(r.dx, -cx, cx);
    r.dy = std::clamp(r.dy, -cx, cx);
    r.dz = std::clamp(r.dz, -cz, cz);
    r.dw = std::clamp(r.dw, -ce, ce);
    r.dh = std::clamp(r.dh, -ce, ce);
    r.dl = std::clamp(r.dl, -ce, ce);
    return r;
}

Box3D predict_box(const Model& model, const Scene& scene, const Box3D& proposal,
                  const NormalizedResidual7& x_t, int t, double* c_hat,
                  NormalizedResidual7* x0_hat) {
    const RoiFeature f_p = roi_pool(scene, proposal, model.params);
    const Box3D hyp = decode(proposal, clip_delta(denormalize(x_t, proposal), proposal));
    const RoiFeature f_h = roi_pool(scene, hyp, model.params);
    const TensorD pooled_p = mean_pool_tokens(f_p.tokens);
    TensorD h_t = TensorD::zeros({1, static_cast<std::size_t>(model.ham.d)});
    if (model.enable_ham) {
        h_t = ham_forward(model.params, model.ham, f_h.tokens, x_t, t, model.enable_tt);
    }
    const HeadOut out = detection_head(model.params, pooled_p, h_t);
    if (c_hat) *c_hat = out.c_hat;
    // the head's estimate re-enters the bounded signal space
    const NormalizedResidual7 x0_est =
        clamp_residual(out.x0_hat, model.diffusion.clamp_bound);
    if (x0_hat) *x0_hat = x0_est;
    return decode(proposal, clip_delta(denormalize(x0_est, proposal), proposal));
}

// renewal feeds predictions back in as frames; a degenerate box would have
// its diagonal amplify the next denormalization without bound
bool renewable(const Box3D& b) {
    const double ext_lo = 1e-3, ext_hi = 1e3, center_hi = 1e3;
    return std::fabs(b.x) <= center_hi && std::fabs(b.y) <= center_hi &&
           std::fabs(b.z) <= center_hi && b.w >= ext_lo && b.w <= ext_hi && b.h >= ext_lo &&
           b.h <= ext_hi && b.l >= ext_lo && b.l <= ext_hi;
}

Box3D mean_box(const std::vector<Box3D>& boxes) {
    double sx = 0, sy = 0, sz = 0, sw = 0, sh = 0, sl = 0, ss = 0, sc = 0;
    for (const Box3D& b : boxes) {
        sx += b.x;
        sy += b.y;
        sz += b.z;
        sw += b.w;
        sh += b.h;
        sl += b.l;
        ss += std::sin(b.theta);
        sc += std::cos(b.theta);
    }
    const double n = static_cast<double>(boxes.size());
    return Box3D(sx / n, sy / n, sz / n, sw / n, sh / n, sl / n, std::atan2(ss / n, sc / n));
}

}  // namespace

InferResult infer(const Model& model, const Scene& scene, const ProposalBatch& batch,
                  const InferConfig& cfg) {
    cfg.validate();
    const std::vector<int> ts = make_timestep_sequence(model.diffusion.T, cfg.steps);

    InferResult result;
    result.boxes.reserve(batch.proposals.size());
    result.confidences.reserve(batch.proposals.size());
    result.step_boxes.resize(batch.proposals.size());

    for (std::size_t track = 0; track < batch.proposals.size(); ++track) {
        std::mt19937_64 rng(
            derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(scene.scene_id)), track));
        std::normal_distribution<double> norm01(0.0, 1.0);
        auto draw7 = [&]() {
            std::array<double, 7> e;
            for (int k = 0; k < 7; ++k) e[k] = norm01(rng);
            return e;
        };

        Box3D proposal = batch.proposals[track];
        NormalizedResidual7 x = prior_draw(draw7(), model.diffusion);
        std::vector<double> confidences(cfg.steps, 0.0);
        std::vector<Box3D>& trace = result.step_boxes[track];
        trace.reserve(cfg.steps);

        for (int k = 0; k < cfg.steps; ++k) {
            const int t = ts[k];
            const int t_prev = (k + 1 < cfg.steps) ? ts[k + 1] : 0;
            if (!model.enable_diffusion && k > 0) x = prior_draw(draw7(), model.diffusion);

            NormalizedResidual7 x0_hat;
            const Box3D pred = predict_box(model, scene, proposal, x, t, &confidences[k], &x0_hat);
            trace.push_back(pred);

            if (k + 1 < cfg.steps) {
                const Box3D next_prop = renewable(pred) ? pred : proposal;
                if (model.enable_diffusion) {
                    // the reverse-process noise lives in the same snr-scaled
                    // space as the prior and q_sample's forward noise
                    std::array<double, 7> eps_new = draw7();
                    for (double& v : eps_new) v /= model.diffusion.snr;
                    NormalizedResidual7 x_prev = ddim_step(x, x0_hat, t, t_prev, eps_new, model.schedule);
                    x_prev = clamp_residual(x_prev, model.diffusion.clamp_bound);
                    // the state is "the hypothesis box": carry it into the
                    // renewed proposal's frame by decode + re-encode
                    const Box3D hyp_prev =
                        decode(proposal, clip_delta(denormalize(x_prev, proposal), proposal));
                    x = clamp_residual(normalize(encode(next_prop, hyp_prev), next_prop),
                                       model.diffusion.clamp_bound);
                }
                proposal = next_prop;
            }
        }

        Box3D final_box = trace.back();
        if (cfg.ensemble == Ensemble::Mean) {
            final_box = mean_box(trace);
        } else if (cfg.ensemble == Ensemble::Nms) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < confidences.size(); ++k) {
                if (confidences[k] > confidences[best]) best = k;
            }
            final_box = trace[best];
        }
        result.boxes.push_back(final_box);
        result.confidences.push_back(confidences.back());
    }
    return result;
}

std::vector<InferResult> infer_corpus(const Model& model, const std::vector<Scene>& scenes,
                                      const std::vector<ProposalBatch>& batches,
                                      const InferConfig& cfg, ExecPolicy policy) {
    if (scenes.size() != batches.size()) {
        throw std::invalid_argument("infer_corpus: scene/proposal lists differ");
    }
    std::vector<InferResult> results(scenes.size());
    parallel_for(scenes.size(), policy, [&](std::size_t i) {
        results[i] = infer(model, scenes[i], batches[i], cfg);
    });
    return results;
}

namespace {

double greedy_recall(const std::vector<Scene>& scenes,
                     const std::vector<InferResult>& results,
                     const std::vector<std::size_t>& order,
                     const std::vector<std::pair<std::size_t, std::size_t>>& preds,
                     std::size_t total_gt, double thr) {
    if (total_gt == 0) return 0.0;
    std::vector<std::vector<char>> used(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) used[s].assign(scenes[s].gt_boxes.size(), 0);
    std::size_t matched = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const auto [s, i] = preds[order[rank]];
        const Box3D& box = results[s].boxes[i];
        double best = 0.0;
        int best_j = -1;
        for (std::size_t j = 0; j < scenes[s].gt_boxes.size(); ++j) {
            if (used[s][j]) continue;
            const double iou = iou_3d(box, scenes[s].gt_boxes[j]);
            if (iou > best) {
                best = iou;
                best_j = static_cast<int>(j);
            }
        }
        if (best_j >= 0 && best >= thr) {
            used[s][best_j] = 1;
            ++matched;
        }
    }
    return static_cast<double>(matched) / static_cast<double>(total_gt);
}

}  // namespace

EvalReport evaluate(const std::vector<Scene>& scenes,
                    const std::vector<ProposalBatch>& batches,
                    const std::vector<InferResult>& results, double iou_threshold) {
    if (scenes.size() != batches.size() || scenes.size() != results.size()) {
        throw std::invalid_argument("evaluate: list lengths differ");
    }
    EvalReport report;

    // proposal-track IoU before and after refinement, against the track's GT
    double prop_sum = 0.0, pred_sum = 0.0;
    std::size_t tracks = 0;
    std::size_t steps = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (std::size_t i = 0; i < batches[s].proposals.size(); ++i) {
            if (!results[s].step_boxes.empty()) {
                steps = std::max(steps, results[s].step_boxes[i].size());
            }
            const int g = batches[s].matched_gt[i];
            if (g < 0) continue;
            prop_sum += batches[s].ious[i];
            pred_sum += iou_3d(results[s].boxes[i], scenes[s].gt_boxes[g]);
            ++tracks;
        }
    }
    if (tracks) {
        report.mean_iou_proposals = prop_sum / static_cast<double>(tracks);
        report.mean_iou_predictions = pred_sum / static_cast<double>(tracks);
    }

    report.per_step_mean_iou.assign(steps, 0.0);
    for (std::size_t k = 0; k < steps; ++k) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t s = 0; s < scenes.size(); ++s) {
            for (std::size_t i = 0; i < batches[s].proposals.size(); ++i) {
                const int g = batches[s].matched_gt[i];
                if (g < 0 || results[s].step_boxes[i].size() <= k) continue;
                sum += iou_3d(results[s].step_boxes[i][k], scenes[s].gt_boxes[g]);
                ++cnt;
            }
        }
        if (cnt) report.per_step_mean_iou[k] = sum / static_cast<double>(cnt);
    }

    // confidence-ordered greedy matching for AP and recall
    std::vector<std::pair<std::size_t, std::size_t>> preds;
    std::size_t total_gt = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        total_gt += scenes[s].gt_boxes.size();
        for (std::size_t i = 0; i < results[s].boxes.size(); ++i) preds.push_back({s, i});
    }
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ca = results[preds[a].first].confidences[preds[a].second];
        const double cb = results[preds[b].first].confidences[preds[b].second];
        if (ca != cb) return ca > cb;
        return preds[a] < preds[b];
    });

    if (total_gt == 0) {
        report.ap_r40 = -1.0;
    } else {
        std::vector<std::vector<char>> used(scenes.size());
        for (std::size_t s = 0; s < scenes.size(); ++s) used[s].assign(scenes[s].gt_boxes.size(), 0);
        std::vector<double> precision, recall;
        std::size_t tp = 0;
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            const auto [s, i] = preds[order[rank]];
            const Box3D& box = results[s].boxes[i];
            double best = 0.0;
            int best_j = -1;
            for (std::size_t j = 0; j < scenes[s].gt_boxes.size(); ++j) {
                if (used[s][j]) continue;
                const double iou = iou_3d(box, scenes[s].gt_boxes[j]);
                if (iou > best) {
                    best = iou;
                    best_j = static_cast<int>(j);
                }
            }
            if (best_j >= 0 && best >= iou_threshold) {
                used[s][best_j] = 1;
                ++tp;
            }
            precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
            recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
        }
        double ap = 0.0;
        for (int k = 1; k <= 40; ++k) {
            const double r = static_cast<double>(k) / 40.0;
            double best_p = 0.0;
            for (std::size_t m = 0; m < recall.size(); ++m) {
                if (recall[m] >= r) best_p = std::max(best_p, precision[m]);
            }
            ap += best_p;
        }
        report.ap_r40 = ap / 40.0;
    }

    for (double thr : {0.3, 0.5, 0.7}) {
        report.recall_at[thr] = greedy_recall(scenes, results, order, preds, total_gt, thr);
    }
    return report;
}

std::vector<std::pair<int, double>> export_tt_norms(const Model& model,
                                                    const std::vector<int>& timesteps) {
    std::vector<std::pair<int, double>> rows;
    rows.reserve(timesteps.size());
    for (int t : timesteps) {
        rows.push_back({t, temporal_scale_norm(model.params, model.ham, t)});
    }
    return rows;
}

// ---- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'R', 'F', '3'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(kMagic, 4);
    put(out, kVersion);
    put<std::int32_t>(out, model.ham.d);
    put<std::int32_t>(out, model.ham.heads);
    put<std::int32_t>(out, model.ham.g_hidden);
    put<std::int32_t>(out, model.ham.s_hidden);
    put<std::int32_t>(out, model.ham.tokens);
    put<std::int32_t>(out, model.ham.time_width);
    put<std::int32_t>(out, model.diffusion.T);
    put(out, model.diffusion.s);
    put(out, model.diffusion.snr);
    put(out, model.diffusion.clamp_bound);
    put(out, model.loss.theta_reg);
    put(out, model.loss.theta_H);
    put(out, model.loss.theta_L);
    put(out, model.loss.smooth_l1_beta);
    put(out, model.loss.focal_alpha);
    put(out, model.loss.focal_gamma);
    put(out, model.loss.corner_weight);
    put<std::int32_t>(out, model.jitter.per_gt);
    put(out, model.jitter.sigma_xy);
    put(out, model.jitter.sigma_z);
    put(out, model.jitter.sigma_log_extent);
    put(out, model.jitter.sigma_yaw);
    put<std::int32_t>(out, model.negatives_per_scene);
    put<std::uint8_t>(out, model.enable_ham ? 1 : 0);
    put<std::uint8_t>(out, model.enable_diffusion ? 1 : 0);
    put<std::uint8_t>(out, model.enable_tt ? 1 : 0);

    put<std::uint64_t>(out, model.params.params.size());
    for (const auto& [name, param] : model.params.params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(param.value.rank()));
        for (std::size_t dim : param.value.shape) put<std::uint64_t>(out, dim);
        out.write(reinterpret_cast<const char*>(param.value.data.data()),
                  static_cast<std::streamsize>(param.value.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    if (get<std::uint32_t>(in) != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    }
    Model m;
    m.ham.d = get<std::int32_t>(in);
    m.ham.heads = get<std::int32_t>(in);
    m.ham.g_hidden = get<std::int32_t>(in);
    m.ham.s_hidden = get<std::int32_t>(in);
    m.ham.tokens = get<std::int32_t>(in);
    m.ham.time_width = get<std::int32_t>(in);
    m.diffusion.T = get<std::int32_t>(in);
    m.diffusion.s = get<double>(in);
    m.diffusion.snr = get<double>(in);
    m.diffusion.clamp_bound = get<double>(in);
    m.loss.theta_reg = get<double>(in);
    m.loss.theta_H = get<double>(in);
    m.loss.theta_L = get<double>(in);
    m.loss.smooth_l1_beta = get<double>(in);
    m.loss.focal_alpha = get<double>(in);
    m.loss.focal_gamma = get<double>(in);
    m.loss.corner_weight = get<double>(in);
    m.jitter.per_gt = get<std::int32_t>(in);
    m.jitter.sigma_xy = get<double>(in);
    m.jitter.sigma_z = get<double>(in);
    m.jitter.sigma_log_extent = get<double>(in);
    m.jitter.sigma_yaw = get<double>(in);
    m.negatives_per_scene = get<std::int32_t>(in);
    m.enable_ham = get<std::uint8_t>(in) != 0;
    m.enable_diffusion = get<std::uint8_t>(in) != 0;
    m.enable_tt = get<std::uint8_t>(in) != 0;

    const std::uint64_t count = get<std::uint64_t>(in);
    for (std::uint64_t p = 0; p < count; ++p) {
        const std::uint32_t name_len = get<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = get<std::uint32_t>(in);
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r) shape[r] = get<std::uint64_t>(in);
        Param& param = m.params.add(name, shape);
        in.read(reinterpret_cast<char*>(param.value.data.data()),
                static_cast<std::streamsize>(param.value.data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated file");
    }
    m.schedule = build_cosine_schedule(m.diffusion.T, m.diffusion.s);
    return m;
}

}  // namespace drf
