#include <doctest.h>

#include "starmt/core/autodiff.hpp"
#include "starmt/core/kernels.hpp"
#include "starmt/core/parallel.hpp"
#include "starmt/core/rng.hpp"
#include "starmt/core/tensor.hpp"

#include <cmath>
#include <functional>

using namespace starmt;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, real scale = 1.0) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

// Central finite differences against the autodiff gradient of a scalar loss
// built from a set of leaf tensors.
void check_gradients(const std::vector<Tensor>& inputs,
                     const std::function<ad::Var(const std::vector<ad::Var>&)>& build,
                     int probes_per_input = 6, real tol = 1e-6) {
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(ad::leaf(t));
    ad::Var loss = build(leaves);
    ad::backward(loss);

    Rng rng(1234);
    for (size_t li = 0; li < inputs.size(); ++li) {
        REQUIRE(leaves[li]->grad.numel() == inputs[li].numel());
        for (int p = 0; p < probes_per_input; ++p) {
            const long idx = static_cast<long>(rng.uniform_int(static_cast<uint64_t>(inputs[li].numel())));
            const real eps = 1e-6 * std::max<real>(1.0, std::abs(inputs[li][idx]));

            auto eval_at = [&](real delta) {
                std::vector<ad::Var> vars;
                for (size_t j = 0; j < inputs.size(); ++j) {
                    Tensor t = inputs[j];
                    if (j == li) t[idx] += delta;
                    vars.push_back(ad::constant(std::move(t)));
                }
                return build(vars)->val[0];
            };
            const real fd = (eval_at(eps) - eval_at(-eps)) / (2 * eps);
            const real got = leaves[li]->grad[idx];
            const real denom = std::max<real>(std::abs(fd), 1e-8);
            INFO("input ", li, " idx ", idx, " fd=", fd, " ad=", got);
            CHECK(std::abs(got - fd) / denom < tol);
        }
    }
}

} // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    t.at(1, 2) = 5.0;
    CHECK(t[5] == 5.0);
    CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    Tensor s = Tensor::scalar(3.5);
    CHECK(s.numel() == 1);
    CHECK(s[0] == 3.5);
}

TEST_CASE("rng determinism and moments") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(7);
    real sum = 0, sum2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const real v = r.normal();
        sum += v;
        sum2 += v * v;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sum2 / n - 1.0) < 0.02);

    Rng u(9);
    int counts[10] = {};
    for (int i = 0; i < 100000; ++i) ++counts[u.uniform_int(static_cast<uint64_t>(10))];
    for (int c : counts) CHECK(std::abs(c - 10000) < 800);
}

TEST_CASE("derive_seed produces distinct child streams") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}

TEST_CASE("parallel_for covers every index once regardless of thread count") {
    std::vector<int> hits(1000, 0);
    parallel_for(1000, [&](long i) { hits[static_cast<size_t>(i)] += 1; });
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("conv2d forward matches a direct computation") {
    Rng rng(3);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y = kernels::conv2d_fwd(x, w, b, 2, 1);
    CHECK(y.shape() == std::vector<int>{1, 3, 3, 3});

    // One output element by hand.
    real acc = b[1];
    const int oy = 1, ox = 2;
    for (int ci = 0; ci < 2; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                acc += x.at(0, ci, iy, ix) * w.at(1, ci, ky, kx);
            }
    CHECK(y.at(0, 1, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("autodiff: conv2d gradients match finite differences") {
    Rng rng(11);
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5);
    Tensor b = random_tensor({3}, rng, 0.1);
    check_gradients({x, w, b}, [](const std::vector<ad::Var>& v) {
        return ad::mean_all(ad::silu(ad::conv2d(v[0], v[1], v[2], 2, 1)));
    });
}

TEST_CASE("autodiff: elementwise and reduction gradients") {
    Rng rng(12);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    check_gradients({a, b}, [](const std::vector<ad::Var>& v) {
        return ad::mean_all(ad::mul(ad::sigmoid(v[0]), ad::add(v[0], ad::scale(v[1], 0.5))));
    });
    check_gradients({a, b}, [](const std::vector<ad::Var>& v) { return ad::mse(v[0], v[1]); });
    check_gradients({a}, [](const std::vector<ad::Var>& v) {
        return ad::mean_all(ad::log_clamped(ad::sigmoid(v[0]), 1e-7));
    });
}

TEST_CASE("autodiff: matmul family gradients") {
    Rng rng(13);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor w = random_tensor({6, 4}, rng);
    Tensor bias = random_tensor({6}, rng);
    check_gradients({a, b}, [](const std::vector<ad::Var>& v) {
        return ad::mean_all(ad::matmul(v[0], v[1]));
    });
    check_gradients({a, w, bias}, [](const std::vector<ad::Var>& v) {
        return ad::mean_all(ad::sigmoid(ad::linear(v[0], v[1], v[2])));
    });
    // Same node on both sides (self-similarity), as the affinity path uses.
    check_gradients({a}, [](const std::vector<ad::Var>& v) {
        ad::Var unit = ad::rows_unit(v[0], 1e-12);
        return ad::mean_all(ad::matmul_nt(unit, unit));
    });
}

TEST_CASE("autodiff: softmax rows and gather gradients") {
    Rng rng(14);
    Tensor a = random_tensor({4, 4}, rng);
    check_gradients({a}, [](const std::vector<ad::Var>& v) {
        Tensor weights({4, 4});
        for (long i = 0; i < 16; ++i) weights[i] = 0.1 * static_cast<real>(i);
        return ad::mean_all(ad::mul(ad::softmax_rows(v[0], 2.0), ad::constant(weights)));
    });

    Tensor maps = random_tensor({2, 3, 4, 4}, rng);
    const std::vector<ad::Cell> cells = {{0, 1, 2}, {1, 3, 0}, {0, 1, 2}};
    check_gradients({maps}, [&cells](const std::vector<ad::Var>& v) {
        return ad::mean_all(ad::sigmoid(ad::gather_cells(v[0], cells)));
    });
}

TEST_CASE("autodiff: bce against constant target") {
    Rng rng(15);
    Tensor logits = random_tensor({3, 4}, rng);
    Tensor target({3, 4});
    for (long i = 0; i < 12; ++i) target[i] = (i % 3 == 0) ? 1.0 : 0.25;
    check_gradients({logits}, [&target](const std::vector<ad::Var>& v) {
        return ad::bce_mean(ad::sigmoid(v[0]), target, 1e-7);
    });

    // ln(2) at scores == targets == 0.5
    Tensor half({2, 2});
    half.fill(0.5);
    ad::Var l = ad::bce_mean(ad::constant(half), half, 1e-7);
    CHECK(l->val[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("autodiff: l1 gradients") {
    Rng rng(16);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    check_gradients({a, b}, [](const std::vector<ad::Var>& v) { return ad::l1(v[0], v[1]); });
}

TEST_CASE("constants receive no gradient and teacher-style graphs stay isolated") {
    Tensor t({2, 2});
    t.fill(0.3);
    ad::Var c = ad::constant(t);
    ad::Var leaf = ad::leaf(t);
    ad::Var loss = ad::mean_all(ad::mul(c, leaf));
    ad::backward(loss);
    CHECK(leaf->grad.numel() == 4);
    CHECK(c->grad.numel() == 0); // never allocated
}

TEST_CASE("gaussian blur preserves mean and kernel sq sum is exact") {
    Rng rng(17);
    const int H = 32, W = 32;
    std::vector<real> src(H * W), dst(H * W);
    real mean = 0;
    for (auto& v : src) {
        v = rng.uniform();
        mean += v;
    }
    mean /= src.size();
    kernels::gaussian_blur_circular(src.data(), dst.data(), H, W, 2.0);
    real mean2 = 0;
    for (real v : dst) mean2 += v;
    mean2 /= dst.size();
    CHECK(mean2 == doctest::Approx(mean).epsilon(1e-9)); // circular conv preserves the mean

    const real s = kernels::gaussian_kernel_sq_sum(2.0);
    CHECK(s > 0);
    CHECK(s < 1);
}

TEST_CASE("normal cdf endpoints") {
    CHECK(kernels::normal_cdf(0) == doctest::Approx(0.5));
    CHECK(kernels::normal_cdf(10) == doctest::Approx(1.0));
    CHECK(kernels::normal_cdf(-10) == doctest::Approx(0.0));
}
