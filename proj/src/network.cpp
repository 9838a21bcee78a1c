#include "drf/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace drf {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

// y = x * W + b, x [n x in], W [in x out], b [out]
TensorD affine(const TensorD& x, const TensorD& W, const TensorD& b, const std::string& layer) {
    require(x.rank() == 2 && W.rank() == 2 && x.cols() == W.rows(),
            "affine(" + layer + "): input width " + std::to_string(x.rank() == 2 ? x.cols() : 0) +
                " does not match weight rows " + std::to_string(W.rows()));
    const std::size_t n = x.rows(), in = x.cols(), out = W.cols();
    TensorD y = TensorD::zeros({n, out});
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = &x.data[i * in];
        double* yi = &y.data[i * out];
        for (std::size_t j = 0; j < out; ++j) yi[j] = b.data[j];
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = xi[k];
            const double* wk = &W.data[k * out];
            for (std::size_t j = 0; j < out; ++j) yi[j] += xv * wk[j];
        }
    }
    return y;
}

// accumulates dW += x^T * dy, db += sum_rows(dy); returns dx = dy * W^T
TensorD affine_backward(const TensorD& x, const TensorD& W, const TensorD& dy, TensorD& dW,
                        TensorD& db) {
    const std::size_t n = x.rows(), in = x.cols(), out = W.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = &x.data[i * in];
        const double* di = &dy.data[i * out];
        for (std::size_t j = 0; j < out; ++j) db.data[j] += di[j];
        for (std::size_t k = 0; k < in; ++k) {
            double* dwk = &dW.data[k * out];
            const double xv = xi[k];
            for (std::size_t j = 0; j < out; ++j) dwk[j] += xv * di[j];
        }
    }
    TensorD dx = TensorD::zeros({n, in});
    for (std::size_t i = 0; i < n; ++i) {
        const double* di = &dy.data[i * out];
        double* dxi = &dx.data[i * in];
        for (std::size_t k = 0; k < in; ++k) {
            const double* wk = &W.data[k * out];
            double acc = 0.0;
            for (std::size_t j = 0; j < out; ++j) acc += wk[j] * di[j];
            dxi[k] = acc;
        }
    }
    return dx;
}

}  // namespace

void HamConfig::validate() const {
    require(d > 0 && heads > 0 && g_hidden > 0 && s_hidden > 0 && tokens > 0,
            "HamConfig: all dimensions must be positive");
    require(d % heads == 0, "HamConfig: d must be divisible by heads");
    require(time_width > 0 && time_width % 2 == 0, "HamConfig: time_width must be positive even");
}

TensorD mlp_forward(const ParamStore& params, const TensorD& x, const std::string& prefix,
                    MlpCache* cache) {
    const TensorD& w1 = params.value(prefix + ".fc1.w");
    const TensorD& b1 = params.value(prefix + ".fc1.b");
    const TensorD& w2 = params.value(prefix + ".fc2.w");
    const TensorD& b2 = params.value(prefix + ".fc2.b");
    TensorD z1 = affine(x, w1, b1, prefix + ".fc1");
    TensorD a1 = z1;
    for (double& v : a1.data) v = v > 0.0 ? v : 0.0;
    TensorD y = affine(a1, w2, b2, prefix + ".fc2");
    if (cache) {
        cache->x = x;
        cache->z1 = std::move(z1);
        cache->a1 = std::move(a1);
    }
    return y;
}

TensorD mlp_backward(const ParamStore& params, const MlpCache& cache, const std::string& prefix,
                     const TensorD& d_out, GradMap& grads) {
    const TensorD& w1 = params.value(prefix + ".fc1.w");
    const TensorD& w2 = params.value(prefix + ".fc2.w");
    TensorD da1 = affine_backward(cache.a1, w2, d_out, grad_slot(grads, prefix + ".fc2.w"),
                                  grad_slot(grads, prefix + ".fc2.b"));
    for (std::size_t i = 0; i < da1.data.size(); ++i) {
        if (cache.z1.data[i] <= 0.0) da1.data[i] = 0.0;
    }
    return affine_backward(cache.x, w1, da1, grad_slot(grads, prefix + ".fc1.w"),
                           grad_slot(grads, prefix + ".fc1.b"));
}

TensorD embed_residual(const ParamStore& params, const NormalizedResidual7& x_t, MlpCache* cache) {
    TensorD x = TensorD::zeros({1, 7});
    const auto a = x_t.to_array();
    for (int i = 0; i < 7; ++i) x.data[i] = a[i];
    return mlp_forward(params, x, "gphi", cache);
}

TensorD time_embedding(int t, int width) {
    require(width > 0 && width % 2 == 0, "time_embedding: width must be positive even");
    const int half = width / 2;
    TensorD e = TensorD::zeros({1, static_cast<std::size_t>(width)});
    for (int k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -2.0 * k / width);
        e.data[k] = std::sin(t * freq);
        e.data[half + k] = std::cos(t * freq);
    }
    return e;
}

TensorD self_attention_forward(const ParamStore& params, const HamConfig& cfg,
                               const TensorD& tokens, const TensorD& q_bias,
                               AttentionCache* cache) {
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    require(tokens.rank() == 2 && tokens.cols() == d,
            "self_attention: tokens must be [n x " + std::to_string(cfg.d) + "]");
    require(q_bias.numel() == d, "self_attention: q_bias width mismatch");
    const std::size_t n = tokens.rows();
    const std::size_t H = static_cast<std::size_t>(cfg.heads);
    const std::size_t dh = d / H;

    TensorD q_in = tokens;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) q_in.data[i * d + j] += q_bias.data[j];
    }
    TensorD Q = affine(q_in, params.value("attn.wq"), params.value("attn.bq"), "attn.wq");
    TensorD K = affine(tokens, params.value("attn.wk"), params.value("attn.bk"), "attn.wk");
    TensorD V = affine(tokens, params.value("attn.wv"), params.value("attn.bv"), "attn.wv");

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    TensorD O = TensorD::zeros({n, d});
    std::vector<TensorD> A(H);
    for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = h * dh;
        TensorD& Ah = A[h];
        Ah = TensorD::zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < dh; ++k) {
                    s += Q.data[i * d + off + k] * K.data[j * d + off + k];
                }
                s *= scale;
                Ah.data[i * n + j] = s;
                if (s > mx) mx = s;
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(Ah.data[i * n + j] - mx);
                Ah.data[i * n + j] = e;
                denom += e;
            }
            for (std::size_t j = 0; j < n; ++j) Ah.data[i * n + j] /= denom;
            for (std::size_t j = 0; j < n; ++j) {
                const double a = Ah.data[i * n + j];
                for (std::size_t k = 0; k < dh; ++k) {
                    O.data[i * d + off + k] += a * V.data[j * d + off + k];
                }
            }
        }
    }
    TensorD Y = affine(O, params.value("attn.wo"), params.value("attn.bo"), "attn.wo");
    if (cache) {
        cache->x = tokens;
        cache->q_in = std::move(q_in);
        cache->Q = std::move(Q);
        cache->K = std::move(K);
        cache->V = std::move(V);
        cache->A = std::move(A);
        cache->O = std::move(O);
    }
    return Y;
}

void self_attention_backward(const ParamStore& params, const HamConfig& cfg,
                             const AttentionCache& cache, const TensorD& d_out,
                             TensorD& d_tokens, TensorD& d_q_bias, GradMap& grads) {
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    const std::size_t n = cache.x.rows();
    const std::size_t H = static_cast<std::size_t>(cfg.heads);
    const std::size_t dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    TensorD dO = affine_backward(cache.O, params.value("attn.wo"), d_out,
                                 grad_slot(grads, "attn.wo"), grad_slot(grads, "attn.bo"));

    TensorD dQ = TensorD::zeros({n, d});
    TensorD dK = TensorD::zeros({n, d});
    TensorD dV = TensorD::zeros({n, d});
    for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = h * dh;
        const TensorD& Ah = cache.A[h];
        // dA = dO_h V_h^T ; dV_h = A_h^T dO_h
        TensorD dA = TensorD::zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < dh; ++k) {
                    acc += dO.data[i * d + off + k] * cache.V.data[j * d + off + k];
                }
                dA.data[i * n + j] = acc;
                const double a = Ah.data[i * n + j];
                for (std::size_t k = 0; k < dh; ++k) {
                    dV.data[j * d + off + k] += a * dO.data[i * d + off + k];
                }
            }
        }
        // softmax backward: dS = A (*) (dA - rowsum(dA (*) A))
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += dA.data[i * n + j] * Ah.data[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                const double ds = Ah.data[i * n + j] * (dA.data[i * n + j] - dot) * scale;
                for (std::size_t k = 0; k < dh; ++k) {
                    dQ.data[i * d + off + k] += ds * cache.K.data[j * d + off + k];
                    dK.data[j * d + off + k] += ds * cache.Q.data[i * d + off + k];
                }
            }
        }
    }

    TensorD dq_in = affine_backward(cache.q_in, params.value("attn.wq"), dQ,
                                    grad_slot(grads, "attn.wq"), grad_slot(grads, "attn.bq"));
    TensorD dxk = affine_backward(cache.x, params.value("attn.wk"), dK,
                                  grad_slot(grads, "attn.wk"), grad_slot(grads, "attn.bk"));
    TensorD dxv = affine_backward(cache.x, params.value("attn.wv"), dV,
                                  grad_slot(grads, "attn.wv"), grad_slot(grads, "attn.bv"));

    d_tokens = TensorD::zeros({n, d});
    d_q_bias = TensorD::zeros({1, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            d_tokens.data[i * d + j] = dq_in.data[i * d + j] + dxk.data[i * d + j] + dxv.data[i * d + j];
            d_q_bias.data[j] += dq_in.data[i * d + j];
        }
    }
}

TensorD temporal_transform(const ParamStore& params, const HamConfig& cfg, const TensorD& a_h,
                           int t, TemporalCache* cache, double* w_norm) {
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    require(a_h.numel() == d, "temporal_transform: feature width mismatch");
    TensorD emb = time_embedding(t, cfg.time_width);
    MlpCache mlp;
    TensorD z = mlp_forward(params, emb, "spsi", &mlp);  // [1 x 2d]
    require(z.numel() == 2 * d, "temporal_transform: s_psi output must be 2d wide");
    TensorD w_t = TensorD::zeros({1, d});
    TensorD b_t = TensorD::zeros({1, d});
    for (std::size_t j = 0; j < d; ++j) {
        w_t.data[j] = z.data[j];
        b_t.data[j] = z.data[d + j];
    }
    TensorD h = TensorD::zeros({1, d});
    for (std::size_t j = 0; j < d; ++j) h.data[j] = w_t.data[j] * a_h.data[j] + b_t.data[j];
    if (w_norm) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += w_t.data[j] * w_t.data[j];
        *w_norm = std::sqrt(acc);
    }
    if (cache) {
        cache->emb = std::move(emb);
        cache->mlp = std::move(mlp);
        cache->w_t = std::move(w_t);
        cache->b_t = std::move(b_t);
        cache->a = a_h;
    }
    return h;
}

TensorD temporal_backward(const ParamStore& params, const HamConfig& cfg,
                          const TemporalCache& cache, const TensorD& d_out, GradMap& grads) {
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    TensorD dz = TensorD::zeros({1, 2 * d});
    TensorD da = TensorD::zeros({1, d});
    for (std::size_t j = 0; j < d; ++j) {
        dz.data[j] = d_out.data[j] * cache.a.data[j];  // dW_t
        dz.data[d + j] = d_out.data[j];                // db_t
        da.data[j] = d_out.data[j] * cache.w_t.data[j];
    }
    mlp_backward(params, cache.mlp, "spsi", dz, grads);  // input is a constant embedding
    return da;
}

double temporal_scale_norm(const ParamStore& params, const HamConfig& cfg, int t) {
    TensorD probe = TensorD::zeros({1, static_cast<std::size_t>(cfg.d)});
    double norm = 0.0;
    temporal_transform(params, cfg, probe, t, nullptr, &norm);
    return norm;
}

TensorD ham_forward(const ParamStore& params, const HamConfig& cfg, const TensorD& tokens,
                    const NormalizedResidual7& x_t, int t, bool enable_tt, HamCache* cache) {
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    HamCache local;
    HamCache& c = cache ? *cache : local;
    TensorD q_bias = embed_residual(params, x_t, &c.embed);
    c.attn_out = self_attention_forward(params, cfg, tokens, q_bias, &c.attn);
    const std::size_t n = tokens.rows();
    c.pooled = TensorD::zeros({1, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) c.pooled.data[j] += c.attn_out.data[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) c.pooled.data[j] /= static_cast<double>(n);
    c.used_tt = enable_tt;
    if (!enable_tt) return c.pooled;
    return temporal_transform(params, cfg, c.pooled, t, &c.tt);
}

TensorD ham_backward(const ParamStore& params, const HamConfig& cfg, const HamCache& cache,
                     const TensorD& d_out, GradMap& grads) {
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    TensorD d_pooled =
        cache.used_tt ? temporal_backward(params, cfg, cache.tt, d_out, grads) : d_out;
    const std::size_t n = cache.attn.x.rows();
    TensorD d_attn = TensorD::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            d_attn.data[i * d + j] = d_pooled.data[j] / static_cast<double>(n);
        }
    }
    TensorD d_tokens, d_q_bias;
    self_attention_backward(params, cfg, cache.attn, d_attn, d_tokens, d_q_bias, grads);
    mlp_backward(params, cache.embed, "gphi", d_q_bias, grads);
    return d_tokens;
}

HeadOut detection_head(const ParamStore& params, const TensorD& f_p, const TensorD& h_t,
                       HeadCache* cache) {
    require(f_p.numel() == h_t.numel(), "detection_head: f_p / h_t width mismatch");
    HeadCache local;
    HeadCache& c = cache ? *cache : local;
    c.u = TensorD::zeros({1, f_p.numel()});
    for (std::size_t j = 0; j < f_p.numel(); ++j) c.u.data[j] = f_p.data[j] + h_t.data[j];
    TensorD reg = mlp_forward(params, c.u, "head.reg", &c.reg);
    TensorD cls = mlp_forward(params, c.u, "head.cls", &c.cls);
    HeadOut out;
    std::array<double, 7> r{};
    for (int i = 0; i < 7; ++i) r[i] = reg.data[i];
    out.x0_hat = NormalizedResidual7::from_array(r);
    out.logit = cls.data[0];
    out.c_hat = 1.0 / (1.0 + std::exp(-out.logit));
    if (!reg.all_finite() || !std::isfinite(out.logit)) {
        throw std::runtime_error("detection_head: non-finite output");
    }
    return out;
}

void detection_head_backward(const ParamStore& params, const HeadCache& cache,
                             const std::array<double, 7>& d_x0, double d_logit, TensorD& d_f_p,
                             TensorD& d_h_t, GradMap& grads) {
    TensorD dreg = TensorD::zeros({1, 7});
    for (int i = 0; i < 7; ++i) dreg.data[i] = d_x0[i];
    TensorD dcls = TensorD::zeros({1, 1});
    dcls.data[0] = d_logit;
    TensorD du_reg = mlp_backward(params, cache.reg, "head.reg", dreg, grads);
    TensorD du_cls = mlp_backward(params, cache.cls, "head.cls", dcls, grads);
    const std::size_t w = cache.u.numel();
    d_f_p = TensorD::zeros({1, w});
    for (std::size_t j = 0; j < w; ++j) d_f_p.data[j] = du_reg.data[j] + du_cls.data[j];
    d_h_t = d_f_p;
}

namespace {

void add_weight_bias(ParamStore& store, std::mt19937_64& rng, const std::string& w_name,
                     const std::string& b_name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Param& w = store.add(w_name, {in, out});
    for (double& v : w.value.data) v = dist(rng);
    store.add(b_name, {out});
}

void add_mlp_params(ParamStore& store, std::mt19937_64& rng, const std::string& prefix,
                    std::size_t in, std::size_t hidden, std::size_t out) {
    add_weight_bias(store, rng, prefix + ".fc1.w", prefix + ".fc1.b", in, hidden);
    add_weight_bias(store, rng, prefix + ".fc2.w", prefix + ".fc2.b", hidden, out);
}

}  // namespace

void init_refinement_params(ParamStore& store, const HamConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    add_weight_bias(store, rng, "roi.proj.w", "roi.proj.b", 4, d);
    add_mlp_params(store, rng, "gphi", 7, static_cast<std::size_t>(cfg.g_hidden), d);
    add_weight_bias(store, rng, "attn.wq", "attn.bq", d, d);
    add_weight_bias(store, rng, "attn.wk", "attn.bk", d, d);
    add_weight_bias(store, rng, "attn.wv", "attn.bv", d, d);
    add_weight_bias(store, rng, "attn.wo", "attn.bo", d, d);
    add_mlp_params(store, rng, "spsi", static_cast<std::size_t>(cfg.time_width),
                   static_cast<std::size_t>(cfg.s_hidden), 2 * d);
    add_mlp_params(store, rng, "head.reg", d, d, 7);
    add_mlp_params(store, rng, "head.cls", d, d, 1);
}

}  // namespace drf
