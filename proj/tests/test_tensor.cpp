#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "mbsl/errors.hpp"
#include "mbsl/rng.hpp"
#include "mbsl/tensor.hpp"

using namespace mbsl;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

// Independent nested-loop convolution oracle.
std::vector<double> conv_oracle(const std::vector<double>& x, int c_in, int len,
                                const std::vector<double>& w, int c_out, int kernel,
                                const std::vector<double>& b, int dilation) {
    std::vector<double> y(static_cast<std::size_t>(c_out) * len, 0.0);
    for (int o = 0; o < c_out; ++o) {
        for (int t = 0; t < len; ++t) {
            double s = b[o];
            for (int i = 0; i < c_in; ++i) {
                for (int k = 0; k < kernel; ++k) {
                    const int src = t - (kernel - 1 - k) * dilation;
                    if (src < 0) continue;
                    s += w[(static_cast<std::size_t>(o) * c_in + i) * kernel + k] *
                         x[static_cast<std::size_t>(i) * len + src];
                }
            }
            y[static_cast<std::size_t>(o) * len + t] = s;
        }
    }
    return y;
}

}  // namespace

TEST_CASE("conv1d_causal matches the forced examples") {
    Tape tape(false);
    Tensor x = Tensor::from_data({1, 4}, {1, 2, 3, 4});
    Tensor w = Tensor::from_data({1, 1, 2}, {1, 1});
    Tensor b = Tensor::zeros({1});

    Tensor y1 = conv1d_causal(tape, x, w, b, 1);
    CHECK(y1.data() == std::vector<double>{1, 3, 5, 7});

    Tensor y2 = conv1d_causal(tape, x, w, b, 2);
    CHECK(y2.data() == std::vector<double>{1, 2, 4, 6});
}

TEST_CASE("conv1d_causal matches the nested-loop oracle on random input") {
    Rng rng(7);
    Tensor x = random_tensor({2, 8}, rng, false);
    Tensor w = random_tensor({3, 2, 3}, rng, false);
    Tensor b = random_tensor({3}, rng, false);
    Tape tape(false);
    for (int dilation : {1, 2, 3}) {
        Tensor y = conv1d_causal(tape, x, w, b, dilation);
        auto expect = conv_oracle(x.data(), 2, 8, w.data(), 3, 3, b.data(), dilation);
        REQUIRE(y.size() == static_cast<std::int64_t>(expect.size()));
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(std::fabs(y.data()[i] - expect[i]) <= 1e-12);
        }
    }
}

TEST_CASE("conv1d_causal is causal") {
    Rng rng(11);
    Tensor x = random_tensor({2, 16}, rng, false);
    Tensor w = random_tensor({2, 2, 3}, rng, false);
    Tensor b = random_tensor({2}, rng, false);
    Tape tape(false);
    Tensor base = conv1d_causal(tape, x, w, b, 2);
    for (int t = 0; t < 16; ++t) {
        Tensor xp = Tensor::from_data(x.shape(), x.data());
        xp.data()[static_cast<std::size_t>(1) * 16 + t] += 0.5;
        Tensor yp = conv1d_causal(tape, xp, w, b, 2);
        for (int o = 0; o < 2; ++o) {
            for (int s = 0; s < t; ++s) {
                CHECK(yp.data()[static_cast<std::size_t>(o) * 16 + s] ==
                      base.data()[static_cast<std::size_t>(o) * 16 + s]);
            }
        }
    }
}

TEST_CASE("conv1d_causal rejects channel mismatch") {
    Tape tape(false);
    Tensor x = Tensor::zeros({2, 4});
    Tensor w = Tensor::zeros({1, 3, 2});
    Tensor b = Tensor::zeros({1});
    CHECK_THROWS_AS(conv1d_causal(tape, x, w, b, 1), DimensionError);
    Tensor w2 = Tensor::zeros({1, 2, 2});
    CHECK_THROWS_AS(conv1d_causal(tape, x, w2, b, 0), ParameterError);
}

TEST_CASE("linear identity and hand case") {
    Tape tape(false);
    Tensor x = Tensor::from_data({2}, {1, 2});
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor zero = Tensor::zeros({2});
    CHECK(linear(tape, x, eye, zero).data() == x.data());

    Tensor w = Tensor::from_data({2, 2}, {1, 1, 1, -1});
    Tensor y = linear(tape, x, w, zero);
    CHECK(y.data() == std::vector<double>{3, -1});
}

TEST_CASE("linear matches a nested-loop matmul oracle") {
    Rng rng(13);
    Tensor x = random_tensor({3, 5}, rng, false);
    Tensor w = random_tensor({4, 5}, rng, false);
    Tensor b = random_tensor({4}, rng, false);
    Tape tape(false);
    Tensor y = linear(tape, x, w, b);
    REQUIRE(y.shape() == std::vector<int>{3, 4});
    for (int r = 0; r < 3; ++r) {
        for (int o = 0; o < 4; ++o) {
            double s = b.data()[o];
            for (int i = 0; i < 5; ++i) {
                s += x.data()[static_cast<std::size_t>(r) * 5 + i] *
                     w.data()[static_cast<std::size_t>(o) * 5 + i];
            }
            CHECK(std::fabs(y.data()[static_cast<std::size_t>(r) * 4 + o] - s) <= 1e-12);
        }
    }
    Tensor bad = Tensor::zeros({3, 4});
    CHECK_THROWS_AS(linear(tape, bad, w, b), DimensionError);
}

TEST_CASE("relu forward cases") {
    Tape tape(false);
    Tensor x = Tensor::from_data({3}, {-1, 0, 2});
    CHECK(relu(tape, x).data() == std::vector<double>{0, 0, 2});
    Tensor neg = Tensor::from_data({4}, {-3, -2, -1, -0.5});
    Tensor y = relu(tape, neg);
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("mean_pool windows and partial tail") {
    Tape tape(false);
    Tensor x = Tensor::from_data({1, 4}, {2, 4, 6, 8});
    CHECK(mean_pool(tape, x, 2).data() == std::vector<double>{3, 7});
    CHECK(mean_pool(tape, x, 1).data() == x.data());
    Tensor odd = Tensor::from_data({1, 3}, {1, 2, 3});
    CHECK(mean_pool(tape, odd, 2).data() == std::vector<double>{1.5, 3});
    CHECK_THROWS_AS(mean_pool(tape, x, 0), ParameterError);
}

TEST_CASE("mean_pool_to aligns exactly and agrees with mean_pool when divisible") {
    Tape tape(false);
    Rng rng(17);
    Tensor x = random_tensor({2, 12}, rng, false);
    Tensor a = mean_pool_to(tape, x, 3);
    Tensor b = mean_pool(tape, x, 4);
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        CHECK(std::fabs(a.data()[i] - b.data()[i]) <= 1e-15);
    }
    Tensor odd = random_tensor({1, 7}, rng, false);
    CHECK(mean_pool_to(tape, odd, 3).shape() == std::vector<int>{1, 3});
}

TEST_CASE("concat stacks along the chosen axis and preserves order") {
    Tape tape(false);
    Tensor a = Tensor::from_data({2, 1}, {1, 2});
    Tensor b = Tensor::from_data({2, 1}, {3, 4});
    Tensor y = concat(tape, {a, b}, 0);
    CHECK(y.shape() == std::vector<int>{4, 1});
    CHECK(y.data() == std::vector<double>{1, 2, 3, 4});

    Tensor z = concat(tape, {a, b}, 1);
    CHECK(z.shape() == std::vector<int>{2, 2});
    CHECK(z.data() == std::vector<double>{1, 3, 2, 4});

    Tensor single = concat(tape, {a}, 0);
    CHECK(single.data() == a.data());

    Tensor bad = Tensor::zeros({3, 1});
    CHECK_THROWS_AS(concat(tape, {a, bad}, 1), DimensionError);
}

TEST_CASE("l2_normalize basics") {
    Tape tape(false);
    Tensor x = Tensor::from_data({2}, {3, 4});
    Tensor y = l2_normalize(tape, x);
    CHECK(y.data()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(0.8).epsilon(1e-12));

    Tensor unit = Tensor::from_data({2}, {0, 1});
    CHECK(l2_normalize(tape, unit).data() == unit.data());

    Tensor scaled = Tensor::from_data({2}, {3 * 7.3, 4 * 7.3});
    Tensor ys = l2_normalize(tape, scaled);
    CHECK(std::fabs(ys.data()[0] - y.data()[0]) <= 1e-15);
    CHECK(std::fabs(ys.data()[1] - y.data()[1]) <= 1e-15);

    Tensor tiny = Tensor::from_data({2}, {1e-13, 0});
    CHECK_THROWS_AS(l2_normalize(tape, tiny), DegenerateInputError);
}

TEST_CASE("backward populates leaf gradients") {
    SUBCASE("sum gives all-ones") {
        Tensor x = Tensor::from_data({2, 3}, {1, -2, 3, 4, -5, 6}, true);
        Tape tape;
        Tensor loss = sum_all(tape, x);
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    SUBCASE("sum of squares at [1,2] gives [2,4]") {
        Tensor x = Tensor::from_data({2}, {1, 2}, true);
        Tape tape;
        Tensor loss = sum_all(tape, mul(tape, x, x));
        tape.backward(loss);
        CHECK(x.grad() == std::vector<double>{2, 4});
    }
    SUBCASE("non-scalar loss is rejected") {
        Tensor x = Tensor::from_data({2}, {1, 2}, true);
        Tape tape;
        Tensor y = mul(tape, x, x);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
    SUBCASE("second backward without reset is rejected") {
        Tensor x = Tensor::from_data({2}, {1, 2}, true);
        Tape tape;
        Tensor loss = sum_all(tape, x);
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), ContractError);
        tape.reset();
    }
}

TEST_CASE("finite differences confirm every op gradient") {
    Rng rng(23);
    const double tol = 1e-4;

    SUBCASE("relu") {
        Tensor x = random_tensor({6}, rng);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) { return sum_all(t, mul(t, relu(t, x), relu(t, x))); }, {x});
        CHECK(res.all_ok());
    }
    SUBCASE("conv1d_causal") {
        Tensor x = random_tensor({2, 8}, rng);
        Tensor w = random_tensor({3, 2, 3}, rng);
        Tensor b = random_tensor({3}, rng);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor y = conv1d_causal(t, x, w, b, 2);
                return sum_all(t, mul(t, y, y));
            },
            {x, w, b}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("linear") {
        Tensor x = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({2, 4}, rng);
        Tensor b = random_tensor({2}, rng);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor y = linear(t, x, w, b);
                return sum_all(t, mul(t, y, y));
            },
            {x, w, b}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("mean_pool and mean_pool_to") {
        Tensor x = random_tensor({2, 7}, rng);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor y = mean_pool(t, x, 2);
                Tensor z = mean_pool_to(t, x, 3);
                return add(t, sum_all(t, mul(t, y, y)), sum_all(t, mul(t, z, z)));
            },
            {x}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("concat splits gradients back to sources") {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({2, 2}, rng);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor y = concat(t, {a, b}, 1);
                return sum_all(t, mul(t, y, y));
            },
            {a, b}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("l2_normalize") {
        Tensor x = random_tensor({5}, rng);
        x.data()[0] += 2.0;  // keep away from zero norm
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor y = l2_normalize(t, x);
                Tensor w = Tensor::from_data({5}, {0.3, -0.7, 1.1, 0.2, 0.5});
                return sum_all(t, mul(t, y, w));
            },
            {x}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("matmul family, diag, logsumexp") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor s = matmul_nt(t, a, b);              // [3x3]
                Tensor s2 = matmul(t, s, transpose2d(t, s));  // [3x3]
                Tensor lse = row_logsumexp(t, s2);
                Tensor d = diag(t, s2);
                return add(t, mean_all(t, lse), mean_all(t, d));
            },
            {a, b}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("masked logsumexp") {
        Tensor a = random_tensor({2, 4}, rng);
        Tensor mask = Tensor::from_data({2, 4}, {1, 0, 1, 1, 1, 1, 0, 1});
        auto res = testing::gradcheck_loss(
            [&](Tape& t) { return mean_all(t, row_logsumexp_masked(t, a, mask)); }, {a}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("tokens round trip") {
        Tensor x = random_tensor({2, 9}, rng);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor tok = as_tokens(t, x, 2);
                Tensor flat = flatten_tokens(t, tok);
                return sum_all(t, mul(t, flat, flat));
            },
            {x}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("center_columns") {
        Tensor x = random_tensor({4, 3}, rng);
        Tensor w = random_tensor({4, 3}, rng, false);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor y = center_columns(t, x);
                return sum_all(t, mul(t, mul(t, y, y), w));
            },
            {x}, 1e-5, tol);
        CHECK(res.all_ok());
    }
    SUBCASE("stack_rows") {
        Tensor a = random_tensor({3}, rng);
        Tensor b = random_tensor({3}, rng);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) {
                Tensor s = stack_rows(t, {a, b});
                return sum_all(t, mul(t, s, s));
            },
            {a, b}, 1e-5, tol);
        CHECK(res.all_ok());
    }
}

TEST_CASE("adam follows the recurrence") {
    SUBCASE("first step is about -lr for unit gradient") {
        std::vector<double> p{0.0};
        std::vector<double> g{1.0};
        AdamState st;
        AdamConfig cfg;
        cfg.lr = 0.1;
        adam_step(p, g, st, cfg);
        CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<double> p{0.7, -0.3};
        std::vector<double> g{0.0, 0.0};
        AdamState st;
        adam_step(p, g, st, AdamConfig{});
        CHECK(p == std::vector<double>{0.7, -0.3});
    }
    SUBCASE("two steps match a scripted recurrence") {
        const double lr = 0.002, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double g = 0.37;
        std::vector<double> p{0.5};
        AdamState st;
        AdamConfig cfg{lr, b1, b2, eps};
        adam_step(p, {g}, st, cfg);
        adam_step(p, {g}, st, cfg);

        // Independent scripted evaluation of the same recurrence.
        double m = 0.0, v = 0.0, x = 0.5;
        for (int t = 1; t <= 2; ++t) {
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            const double mh = m / (1 - std::pow(b1, t));
            const double vh = v / (1 - std::pow(b2, t));
            x -= lr * mh / (std::sqrt(vh) + eps);
        }
        CHECK(std::fabs(p[0] - x) <= 1e-12);
    }
    SUBCASE("shape mismatch is rejected") {
        std::vector<double> p{0.0, 1.0};
        std::vector<double> g{1.0};
        AdamState st;
        CHECK_THROWS_AS(adam_step(p, g, st, AdamConfig{}), DimensionError);
    }
}

TEST_CASE("identical seeds give bit-identical op outputs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 10}, rng, false);
        Tensor w = random_tensor({2, 2, 3}, rng, false);
        Tensor b = random_tensor({2}, rng, false);
        Tape tape(false);
        Tensor y = conv1d_causal(tape, x, w, b, 2);
        Tensor pooled = mean_pool(tape, y, 3);
        return pooled.data();
    };
    CHECK(run(99) == run(99));
}
