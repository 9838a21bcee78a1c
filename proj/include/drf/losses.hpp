#pragma once

#include <array>
#include <vector>

#include "drf/box.hpp"

namespace drf {

struct LossConfig {
    double theta_reg = 0.55;      // IoU gate for the regression term
    double theta_H = 0.75;        // classification ramp, upper knee
    double theta_L = 0.25;        // classification ramp, lower knee
    double smooth_l1_beta = 1.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double corner_weight = 1.0;

    void validate() const;
};

double smooth_l1(double pred, double target, double beta);
double smooth_l1_grad(double pred, double target, double beta);  // d/dpred

// IoU-gated smooth-L1 over the 7 residual components plus a corner term
// between the decoded predicted box and the target box, averaged over the
// whole list. pred_boxes are supplied by the caller (decode(proposal, pred)).
// empty_flag, when non-null, is set if the batch is empty.
double regression_loss(const std::vector<NormalizedResidual7>& preds,
                       const std::vector<NormalizedResidual7>& targets,
                       const std::vector<Box3D>& pred_boxes,
                       const std::vector<Box3D>& target_boxes,
                       const std::vector<double>& ious,
                       const LossConfig& cfg,
                       bool* empty_flag = nullptr);

// Training variant: decodes the predicted box from (proposal, pred) itself and
// accumulates d(loss)/d(pred) per proposal, chaining the corner term through
// denormalize -> decode -> corners. Returns the same value as regression_loss
// evaluated on the decoded boxes.
double regression_loss_grad(const std::vector<NormalizedResidual7>& preds,
                            const std::vector<NormalizedResidual7>& targets,
                            const std::vector<Box3D>& proposals,
                            const std::vector<Box3D>& target_boxes,
                            const std::vector<double>& ious,
                            const LossConfig& cfg,
                            std::vector<std::array<double, 7>>& d_preds);

// Mean binary cross-entropy of confidences against the IoU-ramp soft target.
// Probabilities are converted to logits internally so log(0) never occurs.
double classification_loss(const std::vector<double>& c_hats,
                           const std::vector<double>& ious,
                           const LossConfig& cfg);

// Logit-space form used by training; if d_logits is non-null it receives
// d(loss)/d(logit) per element.
double classification_loss_logits(const std::vector<double>& logits,
                                  const std::vector<double>& ious,
                                  const LossConfig& cfg,
                                  std::vector<double>* d_logits = nullptr);

// Mean binary focal loss on hard 0/1 labels.
double focal_loss(const std::vector<double>& s_hats,
                  const std::vector<int>& labels,
                  const LossConfig& cfg);

double focal_loss_logits(const std::vector<double>& logits,
                         const std::vector<int>& labels,
                         const LossConfig& cfg,
                         std::vector<double>* d_logits = nullptr);

}  // namespace drf
