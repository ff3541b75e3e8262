#include <doctest.h>

#include "casnet/grad_check.hpp"
#include "casnet/rng.hpp"
#include "grad_scenarios.hpp"

using namespace casnet;

TEST_CASE("finite differences agree with tape gradients for every op") {
    const double eps = 1e-5;
    for (const auto& sc : gradcases::scenarios()) {
        CAPTURE(sc.name);
        auto res = gradcases::run_scenario(sc, 4, eps, 0x5eedULL);
        CHECK(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("gradients accumulate over reuse: d/dp sum(p*p + p) = 2p + 1") {
    Rng rng(7);
    Param p("p", Tensor::uniform({1, 2, 2, 3}, -1, 1, rng));
    Tape tape;
    Tensor pin = tape.use(p);
    Tensor y = tape.sum_all(tape.add(tape.broadcast_mul(pin, pin), pin));
    p.zero_grad();
    tape.backward(y);
    for (std::int64_t i = 0; i < p.numel(); ++i)
        CHECK(p.grad[i] == doctest::Approx(2.0 * p.value[i] + 1.0).epsilon(1e-14));
}

TEST_CASE("grads accumulate across tapes until zeroed") {
    Rng rng(9);
    Param p("p", Tensor::uniform({1, 1, 1, 4}, -1, 1, rng));
    p.zero_grad();
    for (int pass = 0; pass < 2; ++pass) {
        Tape tape;
        tape.backward(tape.sum_all(tape.use(p)));
    }
    for (std::int64_t i = 0; i < 4; ++i) CHECK(p.grad[i] == 2.0);
    p.zero_grad();
    CHECK(max_abs(p.grad) == 0.0);
}

TEST_CASE("backward misuse is rejected") {
    Rng rng(13);
    Param p("p", Tensor::uniform({1, 1, 1, 2}, -1, 1, rng));

    Tape tape;
    Tensor y = tape.sum_all(tape.use(p));
    tape.backward(y);
    CHECK_THROWS_AS(tape.backward(y), ConfigError);

    Tape frozen(false);
    Tensor z = frozen.sum_all(frozen.use(p));
    CHECK_THROWS_AS(frozen.backward(z), ConfigError);

    Tape t2;
    Tensor vec = t2.use(p);
    CHECK_THROWS_AS(t2.backward(vec), ShapeError);

    Tape t3;
    Tensor untracked = Tensor::full({1, 1, 1, 1}, 1.0);
    CHECK_THROWS_AS(t3.backward(untracked), ConfigError);
}

TEST_CASE("grad_check rejects eps outside [1e-7, 1e-4]") {
    Rng rng(17);
    Param p("p", Tensor::uniform({1, 1, 1, 2}, -1, 1, rng));
    auto f = [&p](Tape& t) { return t.sum_all(t.use(p)); };
    CHECK_THROWS_AS(grad_check(f, {&p}, 1e-8), ConfigError);
    CHECK_THROWS_AS(grad_check(f, {&p}, 1e-3), ConfigError);
    CHECK_NOTHROW(grad_check(f, {&p}, 1e-7));
    CHECK_NOTHROW(grad_check(f, {&p}, 1e-4));
}

TEST_CASE("channel max routes ties to the lowest channel index") {
    Param p("p", Tensor(Shape{1, 1, 1, 3}, {0.5, 2.0, 2.0}));
    Tape tape;
    auto [avg, mx] = tape.channel_stats(tape.use(p));
    CHECK(mx[0] == 2.0);
    p.zero_grad();
    tape.backward(tape.sum_all(mx));
    CHECK(p.grad[0] == 0.0);
    CHECK(p.grad[1] == 1.0);
    CHECK(p.grad[2] == 0.0);
    CHECK(tape.smooth_margin() == 0.0);  // exact tie: top-two gap is zero
}

TEST_CASE("smooth_margin reports distance to the nearest kink") {
    Param p("p", Tensor(Shape{1, 1, 1, 4}, {-0.5, 0.003, 1.0, -2.0}));
    Tape tape;
    tape.relu(tape.use(p));
    CHECK(tape.smooth_margin() == doctest::Approx(0.003).epsilon(1e-15));

    Param q("q", Tensor(Shape{1, 1, 1, 3}, {0.1, 0.9, 1.0}));
    Tape t2;
    t2.channel_stats(t2.use(q));
    CHECK(t2.smooth_margin() == doctest::Approx(0.1).epsilon(1e-12));

    Tape t3;
    t3.sigmoid(t3.use(p));  // no kinks anywhere
    CHECK(t3.smooth_margin() == std::numeric_limits<double>::infinity());
}

TEST_CASE("untracked tape records no nodes and leaves grads untouched") {
    Rng rng(19);
    Param p("p", Tensor::uniform({1, 2, 2, 2}, -1, 1, rng));
    p.zero_grad();
    Tape tape(false);
    Tensor y = tape.sum_all(tape.relu(tape.use(p)));
    CHECK(tape.num_nodes() == 0);
    CHECK(max_abs(p.grad) == 0.0);
    CHECK(std::isfinite(y[0]));
}
