#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "drf/box.hpp"
#include "drf/tensor.hpp"

namespace drf {

struct HamConfig {
    int d = 32;           // feature width
    int heads = 8;        // attention heads, must divide d
    int g_hidden = 32;    // residual-embedding MLP hidden width (= d)
    int s_hidden = 128;   // temporal MLP hidden width (= 4d)
    int tokens = 27;      // RoI grid cells
    int time_width = 32;  // sinusoidal timestep embedding width, even

    void validate() const;
};

// ---- two-layer MLP building block: affine -> ReLU -> affine -------------
// Parameters live at {prefix}.fc1.{w,b} and {prefix}.fc2.{w,b};
// weights are [in x out], inputs are [n x in] row-major.

struct MlpCache {
    TensorD x;   // input
    TensorD z1;  // first affine output (pre-ReLU)
    TensorD a1;  // ReLU(z1)
};

TensorD mlp_forward(const ParamStore& params, const TensorD& x, const std::string& prefix,
                    MlpCache* cache = nullptr);
// Accumulates parameter grads into `grads`, returns d(loss)/d(input).
TensorD mlp_backward(const ParamStore& params, const MlpCache& cache, const std::string& prefix,
                     const TensorD& d_out, GradMap& grads);

// ---- residual embedding g_phi: 7 -> d -> d ------------------------------

TensorD embed_residual(const ParamStore& params, const NormalizedResidual7& x_t,
                       MlpCache* cache = nullptr);

// ---- sinusoidal timestep features ---------------------------------------
// [sin(t*f_0).. sin(t*f_{w/2-1}), cos(t*f_0).. cos(t*f_{w/2-1})],
// f_k = 10000^(-2k/width). Norm is sqrt(width/2) for every t.
TensorD time_embedding(int t, int width);

// ---- multi-head self-attention -------------------------------------------
// query = tokens + q_bias (broadcast), key = value = tokens.

struct AttentionCache {
    TensorD x;     // input tokens [n x d]
    TensorD q_in;  // x + q_bias
    TensorD Q, K, V;
    std::vector<TensorD> A;  // per-head softmax weights [n x n]
    TensorD O;               // concatenated head outputs before output proj
};

TensorD self_attention_forward(const ParamStore& params, const HamConfig& cfg,
                               const TensorD& tokens, const TensorD& q_bias,
                               AttentionCache* cache = nullptr);
void self_attention_backward(const ParamStore& params, const HamConfig& cfg,
                             const AttentionCache& cache, const TensorD& d_out,
                             TensorD& d_tokens, TensorD& d_q_bias, GradMap& grads);

// ---- temporal transformation ---------------------------------------------
// [W_t; b_t] = s_psi(time_embedding(t)), h = W_t (*) a + b_t elementwise.

struct TemporalCache {
    TensorD emb;  // time embedding [1 x time_width]
    MlpCache mlp;
    TensorD w_t, b_t;  // [1 x d] each
    TensorD a;         // input feature [1 x d]
};

TensorD temporal_transform(const ParamStore& params, const HamConfig& cfg, const TensorD& a_h,
                           int t, TemporalCache* cache = nullptr, double* w_norm = nullptr);
TensorD temporal_backward(const ParamStore& params, const HamConfig& cfg,
                          const TemporalCache& cache, const TensorD& d_out, GradMap& grads);

// Euclidean norm of the scaling factor W_t at timestep t.
double temporal_scale_norm(const ParamStore& params, const HamConfig& cfg, int t);

// ---- hypothesis attention module ------------------------------------------
// self-attention with q_bias = g_phi(x_t), mean pool over tokens, then
// temporal transformation (skipped when enable_tt is false).

struct HamCache {
    MlpCache embed;
    AttentionCache attn;
    TensorD attn_out;  // [tokens x d]
    TensorD pooled;    // [1 x d]
    TemporalCache tt;
    bool used_tt = false;
};

TensorD ham_forward(const ParamStore& params, const HamConfig& cfg, const TensorD& tokens,
                    const NormalizedResidual7& x_t, int t, bool enable_tt,
                    HamCache* cache = nullptr);
// Returns d(loss)/d(tokens); x_t enters only through g_phi whose parameter
// grads are accumulated (no gradient is propagated to x_t itself).
TensorD ham_backward(const ParamStore& params, const HamConfig& cfg, const HamCache& cache,
                     const TensorD& d_out, GradMap& grads);

// ---- detection head --------------------------------------------------------
// two independent two-layer MLP branches on (f_p + h_t): regression -> 7,
// classification -> 1 logit -> logistic.

struct HeadCache {
    TensorD u;  // f_p + h_t
    MlpCache reg, cls;
};

struct HeadOut {
    NormalizedResidual7 x0_hat;
    double c_hat = 0.5;
    double logit = 0.0;
};

HeadOut detection_head(const ParamStore& params, const TensorD& f_p, const TensorD& h_t,
                       HeadCache* cache = nullptr);
void detection_head_backward(const ParamStore& params, const HeadCache& cache,
                             const std::array<double, 7>& d_x0, double d_logit, TensorD& d_f_p,
                             TensorD& d_h_t, GradMap& grads);

// ---- parameter initialization ----------------------------------------------
// Creates every parameter of the refinement network (RoI projection, g_phi,
// attention, s_psi, detection head). Weights ~ uniform(+-1/sqrt(fan_in)),
// biases zero, drawn in a fixed creation order from the seed.
void init_refinement_params(ParamStore& store, const HamConfig& cfg, std::uint64_t seed);

}  // namespace drf
