#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adaspan/span.hpp"
#include "gradcheck.hpp"

using namespace adaspan;
using D = Tensor<double>;

TEST_CASE("soft_mask hand values") {
    MaskConfig cfg{32, 4096, 2e-6, 8};
    CHECK(soft_mask(0.0, 0.0, cfg) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(soft_mask(42.0, 10.0, cfg) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(soft_mask(26.0, 10.0, cfg) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(soft_mask_dz(26.0, 10.0, cfg) == doctest::Approx(1.0 / 32).epsilon(1e-12));
    // plateaus carry no z gradient
    CHECK(soft_mask_dz(2.0, 10.0, cfg) == 0.0);
    CHECK(soft_mask_dz(80.0, 10.0, cfg) == 0.0);
    CHECK_THROWS(soft_mask(1.0, -0.5, cfg));
    CHECK_THROWS(soft_mask(1.0, 4097.0, cfg));
    CHECK_THROWS(soft_mask(-1.0, 1.0, cfg));
}

TEST_CASE("soft_mask monotonicity over random grids") {
    MaskConfig cfg{16, 256, 2e-6, 8};
    Rng rng(5);
    std::uniform_real_distribution<double> zdist(0.0, 256.0);
    std::uniform_real_distribution<double> xdist(0.0, 300.0);
    for (int it = 0; it < 200; ++it) {
        const double z = zdist(rng);
        double prev = 1.0;
        for (double x = 0.0; x <= 300.0; x += 1.7) {  // non-increasing in x
            const double m = soft_mask(x, z, cfg);
            CHECK(m <= prev + 1e-15);
            CHECK(m >= 0.0);
            CHECK(m <= 1.0);
            prev = m;
        }
        const double x = xdist(rng);                  // non-decreasing in z
        double prevz = 0.0;
        for (double zz = 0.0; zz <= 256.0; zz += 8.3) {
            const double m = soft_mask(x, zz, cfg);
            CHECK(m >= prevz - 1e-15);
            prevz = m;
        }
    }
}

TEST_CASE("effective_span") {
    MaskConfig cfg{32, 4096, 2e-6, 8};
    CHECK(effective_span(0.0, cfg) == 32);
    CHECK(effective_span(100.5, cfg) == 133);
    CHECK(effective_span(4096.0, cfg) == 4096);
    // the mask is exactly zero outside the effective span
    for (double z : {0.0, 3.25, 100.5, 4000.0}) {
        const int w = effective_span(z, cfg);
        CHECK(soft_mask(static_cast<double>(w), z, cfg) == 0.0);
    }
}

TEST_CASE("masked_attention_weights hand values") {
    Tape<double> tape;
    auto w = masked_attention_weights(tape, D::from({3}, {0, 0, 0}), D::from({3}, {1.0, 0.5, 0.0}));
    CHECK(w.vec()[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(w.vec()[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(w.vec()[2] == 0.0);

    auto w2 = masked_attention_weights(tape, D::from({2}, {5, 1}), D::from({2}, {0.0, 1.0}));
    CHECK(w2.vec()[0] == 0.0);
    CHECK(w2.vec()[1] == 1.0);
}

TEST_CASE("mask of all ones reduces bitwise to plain softmax") {
    Rng rng(11);
    for (int it = 0; it < 100; ++it) {
        D scores({4, 7});
        fill_normal(scores, 0.0, 3.0, rng);
        auto ones = D::full({4, 7}, 1.0);
        Tape<double> tape;
        auto masked = masked_softmax(tape, scores, ones);
        auto plain = softmax_lastdim(tape, scores);
        for (int64_t i = 0; i < masked.numel(); ++i)
            CHECK(masked.vec()[static_cast<size_t>(i)] == plain.vec()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("masked softmax zeroes gradient into masked scores") {
    auto scores = D::from({3}, {1.0, 2.0, 3.0}, true);
    auto mask = D::from({3}, {1.0, 0.0, 0.5});
    Tape<double> tape;
    auto w = masked_softmax(tape, scores, mask);
    auto loss = sum(tape, mul(tape, w, D::from({3}, {0.3, 0.9, -0.2})));
    tape.backward(loss);
    CHECK(scores.grad_vec()[1] == 0.0);
    CHECK(scores.grad_vec()[0] != 0.0);

    // and the weights/scores gradients match finite differences
    auto loss_fn = [&]() {
        Tape<double> t2;
        auto w2 = masked_softmax(t2, scores, mask);
        return sum(t2, mul(t2, w2, D::from({3}, {0.3, 0.9, -0.2}))).item();
    };
    std::vector<double> analytic(scores.grad_vec());
    CHECK(gradcheck::max_rel_err_all(loss_fn, scores, analytic) < 1e-7);
}

TEST_CASE("masked softmax denominator fallback is uniform over argmax-mask positions") {
    Tape<double> tape;
    auto scores = D::from({4}, {0.0, 0.0, 0.0, 0.0});
    auto mask = D::from({4}, {1e-12, 1e-12, 0.0, 1e-13});
    auto w = masked_softmax(tape, scores, mask);
    CHECK(w.vec()[0] == doctest::Approx(0.5));
    CHECK(w.vec()[1] == doctest::Approx(0.5));
    CHECK(w.vec()[2] == 0.0);
    CHECK(w.vec()[3] == 0.0);

    // fully masked row: no attendable position, all-zero weights
    auto w0 = masked_softmax(tape, scores, D::full({4}, 0.0));
    for (auto v : w0.vec()) CHECK(v == 0.0);
}

TEST_CASE("span_penalty values and exact gradient") {
    MaskConfig cfg{32, 4096, 2e-6, 8};
    Tape<double> tape;
    // sum of spans = 1000 -> (lambda/M) * 1000
    std::vector<D> spans{D::scalar(400.0), D::scalar(600.0)};
    CHECK(span_penalty(tape, spans, cfg).item() == doctest::Approx(2.5e-4).epsilon(1e-12));

    MaskConfig zero = cfg;
    zero.lambda = 0.0;
    CHECK(span_penalty(tape, spans, zero).item() == 0.0);

    // d penalty / d z' = lambda * S / M through z = S z'
    auto zp = D::scalar(0.37, true);
    Tape<double> t2;
    auto z = scale(t2, zp, 4096.0);
    auto pen = span_penalty(t2, {z}, cfg);
    t2.backward(pen);
    CHECK(std::abs(zp.grad_vec()[0] - 1.024e-3) < 1e-9);

    // finite-difference agreement to 1e-9
    auto loss_fn = [&]() {
        Tape<double> t3;
        return span_penalty(t3, {scale(t3, zp, 4096.0)}, cfg).item();
    };
    const double fd = gradcheck::fd_entry(loss_fn, zp, 0, 1e-4);
    CHECK(std::abs(zp.grad_vec()[0] - fd) < 1e-9);
}

TEST_CASE("span_penalty uses the time-mean for dynamic spans") {
    MaskConfig cfg{32, 64, 1e-3, 2};
    Tape<double> tape;
    auto ztrace = D::from({4}, {10.0, 20.0, 30.0, 40.0});
    const double pen = span_penalty(tape, {ztrace}, cfg).item();
    CHECK(pen == doctest::Approx(1e-3 / 2 * 25.0));
}

TEST_CASE("dynamic_span formula") {
    Tape<double> tape;
    const int d = 6;
    auto x = D::full({1, d}, 0.7);
    auto v0 = D({d, 1});
    auto b0 = D::scalar(0.0);
    CHECK(dynamic_span(tape, x, v0, b0, 1024).vec()[0] == doctest::Approx(512.0));

    auto bm4 = D::scalar(-4.0);
    const double z = dynamic_span(tape, x, v0, bm4, 1024).vec()[0];
    CHECK(z == doctest::Approx(1024.0 / (1.0 + std::exp(4.0))).epsilon(1e-9));
    CHECK(z == doctest::Approx(18.4179).epsilon(1e-4));

    double prev = -1.0;
    for (double b = -6.0; b <= 6.0; b += 0.5) {  // strictly increasing in b
        const double zb = dynamic_span(tape, x, v0, D::scalar(b), 1024).vec()[0];
        CHECK(zb > prev);
        prev = zb;
    }
}

TEST_CASE("span_mask_band values, validity cutoff and z gradient") {
    MaskConfig cfg{8, 64, 2e-6, 2};
    auto z = D::scalar(10.0, true);
    Tape<double> tape;
    const int64_t n = 4, w = 20, n_cache = 2;
    auto m = span_mask_band(tape, z, n, w, n_cache, cfg);
    // row t has min(w, n_cache + t) valid slots
    for (int64_t t = 0; t < n; ++t)
        for (int64_t j = 0; j < w; ++j) {
            const double expect = (j < n_cache + t) ? soft_mask(static_cast<double>(j + 1), 10.0, cfg) : 0.0;
            CHECK(m.vec()[static_cast<size_t>(t * w + j)] == doctest::Approx(expect).epsilon(1e-12));
        }

    Rng rng(3);
    D weight({n, w});
    fill_normal(weight, 0.0, 1.0, rng);
    Tape<double> t2;
    auto loss = sum(t2, mul(t2, span_mask_band(t2, z, n, w, n_cache, cfg), weight));
    t2.backward(loss);
    auto loss_fn = [&]() {
        Tape<double> t3;
        return sum(t3, mul(t3, span_mask_band(t3, z, n, w, n_cache, cfg), weight)).item();
    };
    const double fd = gradcheck::fd_entry(loss_fn, z, 0);
    CHECK(gradcheck::rel_err(z.grad_vec()[0], fd) < 1e-8);

    CHECK_THROWS(span_mask_band(tape, D::scalar(65.0), n, w, n_cache, cfg));
}

TEST_CASE("span_mask_band_dynamic per-row spans and gradients") {
    MaskConfig cfg{8, 64, 2e-6, 2};
    // spans off integer kinks so central differences see the one-sided slope
    auto z = D::from({3}, {2.3, 9.5, 30.7}, true);
    Rng rng(9);
    D weight({3, 40});
    fill_normal(weight, 0.0, 1.0, rng);
    Tape<double> tape;
    auto loss = sum(tape, mul(tape, span_mask_band_dynamic(tape, z, 3, 40, 5, cfg), weight));
    tape.backward(loss);
    auto loss_fn = [&]() {
        Tape<double> t2;
        return sum(t2, mul(t2, span_mask_band_dynamic(t2, z, 3, 40, 5, cfg), weight)).item();
    };
    std::vector<double> analytic(z.grad_vec());
    CHECK(gradcheck::max_rel_err_all(loss_fn, z, analytic, 1e-7) < 1e-6);
}

TEST_CASE("gradient flows through the mask whenever a position lies on the ramp") {
    MaskConfig cfg{8, 64, 2e-6, 2};
    Rng rng(17);
    std::uniform_real_distribution<double> zdist(1.0, 40.0);
    for (int it = 0; it < 50; ++it) {
        auto zp = D::scalar(zdist(rng) / 64.0, true);
        const int64_t w = 50;
        D scores({1, w});
        fill_normal(scores, 0.0, 1.0, rng);
        D target({1, w});
        fill_normal(target, 0.0, 1.0, rng);
        Tape<double> tape;
        auto zspan = scale(tape, zp, 64.0);
        auto mask = span_mask_band(tape, zspan, 1, w, w, cfg);
        auto weights = masked_softmax(tape, scores, mask);
        auto loss = sum(tape, mul(tape, weights, target));
        tape.backward(loss);
        CHECK(zp.grad_vec()[0] != 0.0);
    }
}
