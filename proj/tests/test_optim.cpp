#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xis2/checkpoint.hpp"
#include "xis2/optim.hpp"

using namespace xis2;

TEST_CASE("warmup schedule: peak, linear ramp, inverse-sqrt decay") {
    const int64_t warmup = 200, d_model = 384;
    const double base = 0.01;

    const double peak = lr_schedule(warmup, warmup, d_model, base);
    CHECK(peak == doctest::Approx(base * std::pow(double(d_model), -0.5) *
                                  std::pow(double(warmup), -0.5))
                      .epsilon(1e-12));

    CHECK(lr_schedule(warmup / 4, warmup, d_model, base) == doctest::Approx(peak / 4).epsilon(1e-12));
    CHECK(lr_schedule(2 * warmup, warmup, d_model, base) ==
          doctest::Approx(peak / std::sqrt(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(lr_schedule(0, warmup, d_model, base), ContractError);

    // continuous at the peak, strictly increasing before, decreasing after
    const double just_before = lr_schedule(warmup - 1, warmup, d_model, base);
    const double just_after = lr_schedule(warmup + 1, warmup, d_model, base);
    CHECK(just_before < peak);
    CHECK(just_after < peak);
    for (int64_t s = 2; s <= warmup; ++s)
        CHECK(lr_schedule(s, warmup, d_model, base) > lr_schedule(s - 1, warmup, d_model, base));
    for (int64_t s = warmup + 1; s < warmup + 50; ++s)
        CHECK(lr_schedule(s + 1, warmup, d_model, base) < lr_schedule(s, warmup, d_model, base));
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    ParamStoreT<double> store;
    Tensor p = store.add("p", Tensor::from({3}, {1, 2, 3}));
    AdamT<double> opt(store);
    p.zero_grad();
    opt.step(store, 0.1);
    CHECK(p.data() == std::remove_cvref_t<decltype(p.data())>{1, 2, 3});
}

TEST_CASE("adam first step matches the closed-form bias-corrected update") {
    ParamStoreT<double> store;
    Tensor p = store.add("p", Tensor::from({1}, {0.5}));
    AdamT<double> opt(store);
    // gradient 1: m_hat = 1, v_hat = 1, delta = lr / (1 + eps)
    p.node()->ensure_grad();
    p.node()->grad[0] = 1.0;
    const double lr = 0.01;
    opt.step(store, lr);
    const double expect = 0.5 - lr * 1.0 / (1.0 + 1e-9);
    CHECK(p.data()[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam hyperparameters default to the published constants") {
    AdamT<double> opt;
    CHECK(opt.hyper().beta1 == 0.9);
    CHECK(opt.hyper().beta2 == 0.98);
    CHECK(opt.hyper().eps == 1e-9);
}

TEST_CASE("adam: two identical runs are bit-identical after 100 steps") {
    auto run = [] {
        ParamStoreT<double> store;
        Tensor p = store.add("p", Tensor::from({4}, {0.1, -0.2, 0.3, -0.4}));
        AdamT<double> opt(store);
        Rng rng(77);
        for (int s = 1; s <= 100; ++s) {
            p.zero_grad();
            Tensor probe = Tensor::randn({4}, rng);
            sum(mul(square(p), probe)).backward();
            opt.step(store, lr_schedule(s, 20, 64, 0.01));
        }
        return std::vector<double>(p.data().begin(), p.data().end());
    };
    CHECK(run() == run());
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
    ParamStoreT<double> store;
    Tensor p = store.add("layer.weight", Tensor::from({1}, {0.5}));
    AdamT<double> opt(store);
    p.node()->ensure_grad();
    p.node()->grad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(opt.step(store, 0.1), doctest::Contains("layer.weight"),
                         DivergenceError);
}

TEST_CASE("gradient clipping rescales to the target norm") {
    ParamStoreT<double> store;
    Tensor p = store.add("p", Tensor::zeros({2}));
    p.node()->ensure_grad();
    p.node()->grad[0] = 3.0;
    p.node()->grad[1] = 4.0;
    const double pre = clip_grad_norm(store, 1.0);
    CHECK(pre == doctest::Approx(5.0));
    double post = 0.0;
    for (double g : p.grad()) post += g * g;
    CHECK(std::sqrt(post) == doctest::Approx(1.0).epsilon(1e-12));

    // below the limit nothing changes
    p.node()->grad[0] = 0.3;
    p.node()->grad[1] = 0.4;
    clip_grad_norm(store, 1.0);
    CHECK(p.grad()[0] == doctest::Approx(0.3));
}

TEST_CASE("optimizer state round-trips through its checkpoint file") {
    ParamStoreT<float> store;
    TensorF p = store.add("w", TensorF::from({2, 2}, {1, 2, 3, 4}));
    AdamT<float> opt(store);
    p.node()->ensure_grad();
    for (auto& g : p.node()->grad) g = 0.25f;
    opt.step(store, 0.05);
    opt.step(store, 0.05);

    const std::string path = "/tmp/xis2_opt_state.ckpt";
    save_adam(path, opt, store);
    AdamT<float> restored(store);
    load_adam(path, restored, store);
    CHECK(restored.step_count() == 2);
    CHECK(restored.slots()[0].m == opt.slots()[0].m);
    CHECK(restored.slots()[0].v == opt.slots()[0].v);
}
