#include "drf/losses.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace drf {

void LossConfig::validate() const {
    if (!(theta_L >= 0.0 && theta_L < theta_H && theta_H <= 1.0)) {
        throw std::invalid_argument("LossConfig: need 0 <= theta_L < theta_H <= 1");
    }
    if (!(smooth_l1_beta > 0.0)) throw std::invalid_argument("LossConfig: beta must be > 0");
    if (!(focal_gamma >= 0.0)) throw std::invalid_argument("LossConfig: gamma must be >= 0");
}

double smooth_l1(double pred, double target, double beta) {
    const double e = pred - target;
    const double a = std::fabs(e);
    if (a < beta) return 0.5 * e * e / beta;
    return a - 0.5 * beta;
}

double smooth_l1_grad(double pred, double target, double beta) {
    const double e = pred - target;
    if (std::fabs(e) < beta) return e / beta;
    return e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
}

namespace {

// per-proposal loss contribution (residual + weighted corner term)
double item_loss(const NormalizedResidual7& pred, const NormalizedResidual7& target,
                 const Box3D& pred_box, const Box3D& target_box, const LossConfig& cfg) {
    const std::array<double, 7> pa = pred.to_array();
    const std::array<double, 7> ta = target.to_array();
    double loss = 0.0;
    for (int k = 0; k < 7; ++k) loss += smooth_l1(pa[k], ta[k], cfg.smooth_l1_beta);

    const Corners8 pc = corners(pred_box);
    const Corners8 tc = corners(target_box);
    double corner = 0.0;
    for (int j = 0; j < 8; ++j) {
        for (int c = 0; c < 3; ++c) {
            corner += smooth_l1(pc.pts[j][c], tc.pts[j][c], cfg.smooth_l1_beta);
        }
    }
    return loss + cfg.corner_weight * corner;
}

}  // namespace

double regression_loss(const std::vector<NormalizedResidual7>& preds,
                       const std::vector<NormalizedResidual7>& targets,
                       const std::vector<Box3D>& pred_boxes,
                       const std::vector<Box3D>& target_boxes,
                       const std::vector<double>& ious,
                       const LossConfig& cfg,
                       bool* empty_flag) {
    cfg.validate();
    const std::size_t n = preds.size();
    if (targets.size() != n || pred_boxes.size() != n || target_boxes.size() != n ||
        ious.size() != n) {
        throw std::invalid_argument("regression_loss: list lengths differ");
    }
    if (empty_flag) *empty_flag = (n == 0);
    if (n == 0) return 0.0;

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (ious[i] < cfg.theta_reg) continue;
        total += item_loss(preds[i], targets[i], pred_boxes[i], target_boxes[i], cfg);
    }
    return total / static_cast<double>(n);
}

double regression_loss_grad(const std::vector<NormalizedResidual7>& preds,
                            const std::vector<NormalizedResidual7>& targets,
                            const std::vector<Box3D>& proposals,
                            const std::vector<Box3D>& target_boxes,
                            const std::vector<double>& ious,
                            const LossConfig& cfg,
                            std::vector<std::array<double, 7>>& d_preds) {
    cfg.validate();
    const std::size_t n = preds.size();
    if (targets.size() != n || proposals.size() != n || target_boxes.size() != n ||
        ious.size() != n) {
        throw std::invalid_argument("regression_loss_grad: list lengths differ");
    }
    d_preds.assign(n, {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    if (n == 0) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (ious[i] < cfg.theta_reg) continue;
        const Box3D& p = proposals[i];
        const Box3D pred_box = decode(p, denormalize(preds[i], p));
        total += item_loss(preds[i], targets[i], pred_box, target_boxes[i], cfg);

        std::array<double, 7>& g = d_preds[i];
        const std::array<double, 7> pa = preds[i].to_array();
        const std::array<double, 7> ta = targets[i].to_array();
        for (int k = 0; k < 7; ++k) {
            g[k] += smooth_l1_grad(pa[k], ta[k], cfg.smooth_l1_beta) * inv_n;
        }

        // corner term: accumulate d/d(box fields), then chain through
        // decode(denormalize(.)) back to the normalized residual
        const Corners8 pc = corners(pred_box);
        const Corners8 tc = corners(target_boxes[i]);
        const double cth = std::cos(pred_box.theta), sth = std::sin(pred_box.theta);
        static constexpr int sx[8] = {-1, +1, +1, -1, -1, +1, +1, -1};
        static constexpr int sy[8] = {-1, -1, +1, +1, -1, -1, +1, +1};
        static constexpr int sz[8] = {-1, -1, -1, -1, +1, +1, +1, +1};
        double db[7] = {0, 0, 0, 0, 0, 0, 0};  // d/d(x,y,z,w,h,l,theta)
        for (int j = 0; j < 8; ++j) {
            const double ox = sx[j] * pred_box.w * 0.5;
            const double oy = sy[j] * pred_box.h * 0.5;
            const double gx = smooth_l1_grad(pc.pts[j][0], tc.pts[j][0], cfg.smooth_l1_beta);
            const double gy = smooth_l1_grad(pc.pts[j][1], tc.pts[j][1], cfg.smooth_l1_beta);
            const double gz = smooth_l1_grad(pc.pts[j][2], tc.pts[j][2], cfg.smooth_l1_beta);
            db[0] += gx;
            db[1] += gy;
            db[2] += gz;
            db[3] += gx * cth * sx[j] * 0.5 + gy * sth * sx[j] * 0.5;
            db[4] += gx * (-sth) * sy[j] * 0.5 + gy * cth * sy[j] * 0.5;
            db[5] += gz * sz[j] * 0.5;
            db[6] += gx * (-sth * ox - cth * oy) + gy * (cth * ox - sth * oy);
        }
        // box fields vs normalized residual: x,y scale by d^2; z by h*l;
        // extents multiplicative; theta by the aspect ratio
        const double d = p.base_diagonal();
        const double rp = p.aspect_ratio();
        const double w = cfg.corner_weight * inv_n;
        g[0] += w * db[0] * d * d;
        g[1] += w * db[1] * d * d;
        g[2] += w * db[2] * p.h * p.l;
        g[3] += w * db[3] * pred_box.w * d;
        g[4] += w * db[4] * pred_box.h * d;
        g[5] += w * db[5] * pred_box.l * p.l;
        g[6] += w * db[6] * rp;
    }
    return total * inv_n;
}

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double softplus(double z) {
    if (z > 0.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

double bce_logit(double z, double y) { return softplus(z) - y * z; }

double prob_to_logit(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("losses: probability must lie in (0,1)");
    }
    return std::log(p / (1.0 - p));
}

}  // namespace

double classification_loss(const std::vector<double>& c_hats,
                           const std::vector<double>& ious,
                           const LossConfig& cfg) {
    std::vector<double> logits(c_hats.size());
    for (std::size_t i = 0; i < c_hats.size(); ++i) logits[i] = prob_to_logit(c_hats[i]);
    return classification_loss_logits(logits, ious, cfg, nullptr);
}

double classification_loss_logits(const std::vector<double>& logits,
                                  const std::vector<double>& ious,
                                  const LossConfig& cfg,
                                  std::vector<double>* d_logits) {
    cfg.validate();
    const std::size_t n = logits.size();
    if (ious.size() != n) {
        throw std::invalid_argument("classification_loss: list lengths differ");
    }
    if (d_logits) d_logits->assign(n, 0.0);
    if (n == 0) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = classification_target(ious[i], cfg.theta_L, cfg.theta_H);
        total += bce_logit(logits[i], y);
        if (d_logits) (*d_logits)[i] = (sigmoid(logits[i]) - y) * inv_n;
    }
    return total * inv_n;
}

double focal_loss(const std::vector<double>& s_hats,
                  const std::vector<int>& labels,
                  const LossConfig& cfg) {
    std::vector<double> logits(s_hats.size());
    for (std::size_t i = 0; i < s_hats.size(); ++i) logits[i] = prob_to_logit(s_hats[i]);
    return focal_loss_logits(logits, labels, cfg, nullptr);
}

double focal_loss_logits(const std::vector<double>& logits,
                         const std::vector<int>& labels,
                         const LossConfig& cfg,
                         std::vector<double>* d_logits) {
    cfg.validate();
    const std::size_t n = logits.size();
    if (labels.size() != n) throw std::invalid_argument("focal_loss: list lengths differ");
    if (d_logits) d_logits->assign(n, 0.0);
    if (n == 0) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = labels[i] ? logits[i] : -logits[i];
        const double pt = sigmoid(z);           // probability of the true label
        const double log_pt = -softplus(-z);
        const double one_m = 1.0 - pt;
        const double pow_g = std::pow(one_m, cfg.focal_gamma);
        total += -cfg.focal_alpha * pow_g * log_pt;
        if (d_logits) {
            // d/dz of -alpha (1-pt)^g log(pt), pt = sigmoid(z)
            const double dpt_dz = pt * one_m;
            double dl_dpt = -cfg.focal_alpha * pow_g / pt;
            if (cfg.focal_gamma > 0.0) {
                dl_dpt += cfg.focal_alpha * cfg.focal_gamma *
                          std::pow(one_m, cfg.focal_gamma - 1.0) * log_pt;
            }
            const double dz_dlogit = labels[i] ? 1.0 : -1.0;
            (*d_logits)[i] = dl_dpt * dpt_dz * dz_dlogit * inv_n;
        }
    }
    return total * inv_n;
}

}  // namespace drf
