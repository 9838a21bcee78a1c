#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "drf/network.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace drf;

namespace {

HamConfig tiny_config() {
    HamConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.g_hidden = 6;
    cfg.s_hidden = 10;
    cfg.tokens = 5;
    cfg.time_width = 8;
    return cfg;
}

void randomize_all(ParamStore& store, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& [name, p] : store.params) {
        (void)name;
        for (double& v : p.value.data) v = u(rng);
    }
}

TensorD random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
    TensorD t = TensorD::zeros(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (double& v : t.data) v = u(rng);
    return t;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1e-3, std::abs(a), std::abs(b)});
}

// central-difference check of every parameter entry whose name starts with
// one of the prefixes; returns the worst relative error
double fd_params(ParamStore& params, const std::function<double()>& loss,
                 const GradMap& analytic, const std::vector<std::string>& prefixes,
                 double h = 1e-5) {
    double worst = 0.0;
    for (auto& [name, p] : params.params) {
        bool checked = prefixes.empty();
        for (const auto& pre : prefixes) {
            if (name.rfind(pre, 0) == 0) checked = true;
        }
        if (!checked) continue;
        const auto it = analytic.find(name);
        REQUIRE(it != analytic.end());
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double keep = p.value[i];
            p.value.data[i] = keep + h;
            const double lp = loss();
            p.value.data[i] = keep - h;
            const double lm = loss();
            p.value.data[i] = keep;
            worst = std::max(worst, rel_err(it->second[i], (lp - lm) / (2.0 * h)));
        }
    }
    return worst;
}

// same, for an input tensor against its analytic gradient
double fd_input(TensorD& x, const std::function<double()>& loss, const TensorD& d_x,
                double h = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x.data[i];
        x.data[i] = keep + h;
        const double lp = loss();
        x.data[i] = keep - h;
        const double lm = loss();
        x.data[i] = keep;
        worst = std::max(worst, rel_err(d_x[i], (lp - lm) / (2.0 * h)));
    }
    return worst;
}

double weighted_sum(const TensorD& out, const TensorD& r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += out[i] * r[i];
    return acc;
}

}  // namespace

TEST_CASE("config validation") {
    HamConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.heads = 3;  // does not divide d = 8
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.time_width = 7;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.tokens = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("init is deterministic in the seed") {
    const HamConfig cfg = tiny_config();
    ParamStore a, b, c;
    init_refinement_params(a, cfg, 42);
    init_refinement_params(b, cfg, 42);
    init_refinement_params(c, cfg, 43);
    REQUIRE(a.params.size() == b.params.size());
    bool all_equal = true, any_diff_c = false;
    for (const auto& [name, p] : a.params) {
        const TensorD& vb = b.value(name);
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            if (p.value[i] != vb[i]) all_equal = false;
            if (p.value[i] != c.value(name)[i]) any_diff_c = true;
        }
    }
    CHECK(all_equal);
    CHECK(any_diff_c);
    // biases start at zero, weights within the fan-in bound
    for (const auto& [name, p] : a.params) {
        if (p.value.rank() == 1) {
            for (double v : p.value.data) CHECK(v == 0.0);
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.shape[0]));
            for (double v : p.value.data) {
                CHECK(v >= -bound);
                CHECK(v <= bound);
            }
        }
    }
}

TEST_CASE("mlp forward shape and gradient") {
    ParamStore store;
    store.add("m.fc1.w", {4, 6});
    store.add("m.fc1.b", {6});
    store.add("m.fc2.w", {6, 3});
    store.add("m.fc2.b", {3});
    randomize_all(store, 101);

    TensorD x = random_tensor({2, 4}, 102);
    const TensorD r = random_tensor({2, 3}, 103);

    MlpCache cache;
    TensorD out = mlp_forward(store, x, "m", &cache);
    REQUIRE(out.shape == std::vector<std::size_t>({2, 3}));

    auto loss = [&]() { return weighted_sum(mlp_forward(store, x, "m"), r); };
    GradMap grads = grads_like(store);
    const TensorD d_x = mlp_backward(store, cache, "m", r, grads);

    CHECK(fd_params(store, loss, grads, {"m."}) < 1e-4);
    CHECK(fd_input(x, loss, d_x) < 1e-4);

    TensorD bad = random_tensor({2, 5}, 104);
    CHECK_THROWS_AS(mlp_forward(store, bad, "m"), std::invalid_argument);
}

TEST_CASE("mlp with zero parameters maps everything to zero") {
    ParamStore store;
    store.add("m.fc1.w", {4, 6});
    store.add("m.fc1.b", {6});
    store.add("m.fc2.w", {6, 3});
    store.add("m.fc2.b", {3});
    const TensorD x = random_tensor({3, 4}, 105);
    const TensorD out = mlp_forward(store, x, "m");
    for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("residual embedding gradient") {
    const HamConfig cfg = tiny_config();
    ParamStore store;
    init_refinement_params(store, cfg, 7);
    randomize_all(store, 106);

    NormalizedResidual7 xt;
    xt.dx = 0.3;
    xt.dy = -0.2;
    xt.dz = 0.1;
    xt.dw = -0.4;
    xt.dh = 0.25;
    xt.dl = -0.15;
    xt.dtheta = 0.05;
    const TensorD r = random_tensor({1, static_cast<std::size_t>(cfg.d)}, 107);

    MlpCache cache;
    TensorD out = embed_residual(store, xt, &cache);
    REQUIRE(out.shape == std::vector<std::size_t>({1, static_cast<std::size_t>(cfg.d)}));

    auto loss = [&]() { return weighted_sum(embed_residual(store, xt), r); };
    GradMap grads = grads_like(store);
    mlp_backward(store, cache, "gphi", r, grads);
    CHECK(fd_params(store, loss, grads, {"gphi."}) < 1e-4);
}

TEST_CASE("time embedding basics") {
    const int width = 32;
    const TensorD e0 = time_embedding(0, width);
    REQUIRE(e0.numel() == static_cast<std::size_t>(width));
    for (int k = 0; k < width / 2; ++k) {
        CHECK(e0[k] == 0.0);               // sin half
        CHECK(e0[width / 2 + k] == 1.0);   // cos half
    }
    const double expect_norm = std::sqrt(width / 2.0);
    std::vector<TensorD> all;
    for (int t = 1; t <= 1000; ++t) {
        all.push_back(time_embedding(t, width));
        double nrm = 0.0;
        for (double v : all.back().data) nrm += v * v;
        CHECK(std::sqrt(nrm) == doctest::Approx(expect_norm).epsilon(1e-9));
    }
    // embeddings separate every pair of timesteps
    double min_gap = 1e300;
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            double gap = 0.0;
            for (int k = 0; k < width; ++k) gap = std::max(gap, std::abs(all[i][k] - all[j][k]));
            min_gap = std::min(min_gap, gap);
        }
    }
    CHECK(min_gap > 1e-6);
    CHECK_THROWS_AS(time_embedding(1, 7), std::invalid_argument);
}

TEST_CASE("attention weights are row-stochastic") {
    const HamConfig cfg = tiny_config();
    ParamStore store;
    init_refinement_params(store, cfg, 9);
    randomize_all(store, 108);

    const std::size_t n = static_cast<std::size_t>(cfg.tokens);
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    TensorD tokens = random_tensor({n, d}, 109);
    TensorD q_bias = random_tensor({1, d}, 110);

    AttentionCache cache;
    self_attention_forward(store, cfg, tokens, q_bias, &cache);
    REQUIRE(cache.A.size() == static_cast<std::size_t>(cfg.heads));
    for (const TensorD& a : cache.A) {
        REQUIRE(a.shape == std::vector<std::size_t>({n, n}));
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                s += a.at(i, j);
                CHECK(a.at(i, j) >= 0.0);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("identical tokens attend uniformly; a single token attends to itself") {
    HamConfig cfg = tiny_config();
    ParamStore store;
    init_refinement_params(store, cfg, 10);
    randomize_all(store, 111);

    const std::size_t d = static_cast<std::size_t>(cfg.d);
    TensorD row = random_tensor({1, d}, 112);
    TensorD tokens = TensorD::zeros({4, d});
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < d; ++j) tokens.at(i, j) = row[j];
    }
    TensorD q_bias = random_tensor({1, d}, 113);
    AttentionCache cache;
    self_attention_forward(store, cfg, tokens, q_bias, &cache);
    for (const TensorD& a : cache.A) {
        for (double v : a.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }

    AttentionCache single;
    self_attention_forward(store, cfg, row, q_bias, &single);
    for (const TensorD& a : single.A) {
        REQUIRE(a.numel() == 1);
        CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("attention gradients") {
    const HamConfig cfg = tiny_config();
    ParamStore store;
    init_refinement_params(store, cfg, 11);
    randomize_all(store, 114);

    const std::size_t n = static_cast<std::size_t>(cfg.tokens);
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    TensorD tokens = random_tensor({n, d}, 115);
    TensorD q_bias = random_tensor({1, d}, 116);
    const TensorD r = random_tensor({n, d}, 117);

    AttentionCache cache;
    self_attention_forward(store, cfg, tokens, q_bias, &cache);

    auto loss = [&]() {
        return weighted_sum(self_attention_forward(store, cfg, tokens, q_bias), r);
    };
    GradMap grads = grads_like(store);
    TensorD d_tokens, d_q_bias;
    self_attention_backward(store, cfg, cache, r, d_tokens, d_q_bias, grads);

    CHECK(fd_params(store, loss, grads, {"attn."}) < 1e-4);
    CHECK(fd_input(tokens, loss, d_tokens) < 1e-4);
    CHECK(fd_input(q_bias, loss, d_q_bias) < 1e-4);
}

TEST_CASE("temporal transform can be forced to identity or constant") {
    const HamConfig cfg = tiny_config();
    ParamStore store;
    init_refinement_params(store, cfg, 12);
    randomize_all(store, 118);
    const std::size_t d = static_cast<std::size_t>(cfg.d);

    // zero the second layer, then pick its bias: out = [W_t; b_t]
    TensorD& w2 = store.value("spsi.fc2.w");
    TensorD& b2 = store.value("spsi.fc2.b");
    for (double& v : w2.data) v = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        b2[j] = 1.0;      // W_t = 1
        b2[d + j] = 0.0;  // b_t = 0
    }
    TensorD a_h = random_tensor({1, d}, 119);
    const TensorD out = temporal_transform(store, cfg, a_h, 500);
    for (std::size_t j = 0; j < d; ++j) CHECK(out[j] == doctest::Approx(a_h[j]).epsilon(1e-12));
    CHECK(temporal_scale_norm(store, cfg, 123) == doctest::Approx(std::sqrt(double(d))));

    for (std::size_t j = 0; j < d; ++j) {
        b2[j] = 0.0;
        b2[d + j] = 0.5 + 0.1 * static_cast<double>(j);  // constant output b_t
    }
    const TensorD out2 = temporal_transform(store, cfg, a_h, 17);
    for (std::size_t j = 0; j < d; ++j) {
        CHECK(out2[j] == doctest::Approx(0.5 + 0.1 * static_cast<double>(j)).epsilon(1e-12));
    }
    CHECK(temporal_scale_norm(store, cfg, 17) == doctest::Approx(0.0));
}

TEST_CASE("temporal transform gradients") {
    const HamConfig cfg = tiny_config();
    ParamStore store;
    init_refinement_params(store, cfg, 13);
    randomize_all(store, 120);
    const std::size_t d = static_cast<std::size_t>(cfg.d);

    TensorD a_h = random_tensor({1, d}, 121);
    const TensorD r = random_tensor({1, d}, 122);
    const int t = 321;

    TemporalCache cache;
    temporal_transform(store, cfg, a_h, t, &cache);
    auto loss = [&]() { return weighted_sum(temporal_transform(store, cfg, a_h, t), r); };
    GradMap grads = grads_like(store);
    const TensorD d_a = temporal_backward(store, cfg, cache, r, grads);

    CHECK(fd_params(store, loss, grads, {"spsi."}) < 1e-4);
    CHECK(fd_input(a_h, loss, d_a) < 1e-4);
}

TEST_CASE("module composition collapses as forced") {
    const HamConfig cfg = tiny_config();
    const std::size_t n = static_cast<std::size_t>(cfg.tokens);
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    NormalizedResidual7 xt;
    xt.dx = 0.2;
    xt.dw = -0.3;

    // zero attention output projection: pooled features vanish and the module
    // reduces to the temporal offset b_t
    {
        ParamStore store;
        init_refinement_params(store, cfg, 14);
        randomize_all(store, 123);
        for (double& v : store.value("attn.wo").data) v = 0.0;
        for (double& v : store.value("attn.bo").data) v = 0.0;
        TensorD& w2 = store.value("spsi.fc2.w");
        for (double& v : w2.data) v = 0.0;
        TensorD& b2 = store.value("spsi.fc2.b");
        for (std::size_t j = 0; j < d; ++j) {
            b2[j] = 2.0;
            b2[d + j] = 0.25 * static_cast<double>(j);
        }
        const TensorD tokens = random_tensor({n, d}, 124);
        const TensorD out = ham_forward(store, cfg, tokens, xt, 400, true);
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(out[j] == doctest::Approx(0.25 * static_cast<double>(j)).epsilon(1e-12));
        }
    }

    // zero g_phi and disabled temporal transform: plain pooled self-attention
    {
        ParamStore store;
        init_refinement_params(store, cfg, 15);
        randomize_all(store, 125);
        for (double& v : store.value("gphi.fc2.w").data) v = 0.0;
        for (double& v : store.value("gphi.fc2.b").data) v = 0.0;
        const TensorD tokens = random_tensor({n, d}, 126);
        const TensorD out = ham_forward(store, cfg, tokens, xt, 400, false);

        const TensorD zero_bias = TensorD::zeros({1, d});
        const TensorD attn = self_attention_forward(store, cfg, tokens, zero_bias);
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += attn.at(i, j);
            mean /= static_cast<double>(n);
            CHECK(out[j] == doctest::Approx(mean).epsilon(1e-12));
        }
    }
}

TEST_CASE("full module gradient, with and without the temporal branch") {
    for (const bool enable_tt : {true, false}) {
        const HamConfig cfg = tiny_config();
        ParamStore store;
        init_refinement_params(store, cfg, 16);
        randomize_all(store, 127);
        const std::size_t n = static_cast<std::size_t>(cfg.tokens);
        const std::size_t d = static_cast<std::size_t>(cfg.d);

        NormalizedResidual7 xt;
        xt.dx = -0.2;
        xt.dy = 0.4;
        xt.dtheta = 0.1;
        TensorD tokens = random_tensor({n, d}, 128);
        const TensorD r = random_tensor({1, d}, 129);
        const int t = 640;

        HamCache cache;
        ham_forward(store, cfg, tokens, xt, t, enable_tt, &cache);
        auto loss = [&]() {
            return weighted_sum(ham_forward(store, cfg, tokens, xt, t, enable_tt), r);
        };
        GradMap grads = grads_like(store);
        const TensorD d_tokens = ham_backward(store, cfg, cache, r, grads);

        const std::vector<std::string> prefixes =
            enable_tt ? std::vector<std::string>{"gphi.", "attn.", "spsi."}
                      : std::vector<std::string>{"gphi.", "attn."};
        CHECK(fd_params(store, loss, grads, prefixes) < 1e-4);
        CHECK(fd_input(tokens, loss, d_tokens) < 1e-4);
    }
}

TEST_CASE("detection head outputs and gradients") {
    const HamConfig cfg = tiny_config();
    ParamStore store;
    init_refinement_params(store, cfg, 17);
    randomize_all(store, 130);
    const std::size_t d = static_cast<std::size_t>(cfg.d);

    TensorD f_p = random_tensor({1, d}, 131);
    TensorD h_t = random_tensor({1, d}, 132);

    HeadCache cache;
    const HeadOut out = detection_head(store, f_p, h_t, &cache);
    CHECK(out.c_hat == doctest::Approx(1.0 / (1.0 + std::exp(-out.logit))).epsilon(1e-12));
    CHECK(out.c_hat > 0.0);
    CHECK(out.c_hat < 1.0);

    std::array<double, 7> r7{};
    std::mt19937_64 rng(133);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : r7) v = u(rng);
    const double rl = u(rng);

    auto loss = [&]() {
        const HeadOut o = detection_head(store, f_p, h_t);
        const auto a = o.x0_hat.to_array();
        double acc = rl * o.logit;
        for (int k = 0; k < 7; ++k) acc += r7[k] * a[k];
        return acc;
    };
    GradMap grads = grads_like(store);
    TensorD d_f_p, d_h_t;
    detection_head_backward(store, cache, r7, rl, d_f_p, d_h_t, grads);

    CHECK(fd_params(store, loss, grads, {"head."}) < 1e-4);
    CHECK(fd_input(f_p, loss, d_f_p) < 1e-4);
    CHECK(fd_input(h_t, loss, d_h_t) < 1e-4);
}

TEST_CASE("zeroed regression branch emits its bias") {
    const HamConfig cfg = tiny_config();
    ParamStore store;
    init_refinement_params(store, cfg, 18);
    const std::size_t d = static_cast<std::size_t>(cfg.d);
    // all weights zero after init keeps biases zero: logit 0 -> c_hat 0.5
    for (auto& [name, p] : store.params) {
        (void)name;
        for (double& v : p.value.data) v = 0.0;
    }
    store.value("head.reg.fc2.b")[3] = 0.75;
    const TensorD f_p = random_tensor({1, d}, 134);
    const TensorD h_t = random_tensor({1, d}, 135);
    const HeadOut out = detection_head(store, f_p, h_t);
    CHECK(out.logit == 0.0);
    CHECK(out.c_hat == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out.x0_hat.dw == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(out.x0_hat.dx == 0.0);
}

TEST_CASE("adam leaves untouched parameters alone and takes lr-sized first steps") {
    ParamStore store;
    store.add("p.w", {2, 2});
    store.add("q.w", {3});
    randomize_all(store, 136);
    const std::vector<double> p_before = store.value("p.w").data;
    const std::vector<double> q_before = store.value("q.w").data;

    // constant gradient on q only
    for (double& v : store.grad("q.w").data) v = 0.7;
    adam_step(store, 1e-3, 0.9, 0.999, 1e-8);

    CHECK(store.value("p.w").data == p_before);
    for (std::size_t i = 0; i < q_before.size(); ++i) {
        const double delta = store.value("q.w")[i] - q_before[i];
        // bias-corrected first step is -lr * g / (|g| + eps) ~ -lr
        CHECK(delta == doctest::Approx(-1e-3).epsilon(1e-6));
    }
    CHECK(store.adam_steps == 1);
}
