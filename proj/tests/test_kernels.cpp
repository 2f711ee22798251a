#include <doctest.h>

#include <cmath>
#include <random>

#include "mcae/kernels.hpp"
#include "test_support.hpp"

using namespace mcae;
using namespace mcae::testing;

namespace {

Real max_abs_diff(const Mat& a, const Mat& b) {
    REQUIRE(a.same_shape(b));
    Real m = 0;
    for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

Mat transpose(const Mat& a) {
    Mat t(a.cols(), a.rows());
    for (Index r = 0; r < a.rows(); ++r)
        for (Index c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

}  // namespace

TEST_CASE("matmul variants agree with the serial reference") {
    std::mt19937_64 rng(1);
    for (auto [m, k, n] : {std::array<Index, 3>{1, 1, 1}, {3, 5, 7}, {17, 9, 4}, {64, 33, 48}}) {
        const Mat a = random_mat(m, k, rng);
        const Mat b = random_mat(k, n, rng);
        CHECK(max_abs_diff(kernels::matmul(a, b), kernels::reference::matmul(a, b)) < 1e-12);
        const Mat bt = transpose(b);
        CHECK(max_abs_diff(kernels::matmul_nt(a, bt), kernels::reference::matmul_nt(a, bt)) < 1e-12);
        CHECK(max_abs_diff(kernels::matmul_nt(a, bt), kernels::matmul(a, b)) < 1e-12);
        const Mat at = transpose(a);
        CHECK(max_abs_diff(kernels::matmul_tn(at, b), kernels::reference::matmul_tn(at, b)) < 1e-12);
        Mat acc(m, n, 1.0);
        kernels::matmul_tn_acc(at, b, acc);
        Mat expected = kernels::reference::matmul_tn(at, b);
        for (Real& v : expected.values()) v += 1.0;
        CHECK(max_abs_diff(acc, expected) < 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched shapes") {
    CHECK_THROWS(kernels::matmul(Mat(2, 3), Mat(4, 2)));
    CHECK_THROWS(kernels::matmul_nt(Mat(2, 3), Mat(4, 2)));
    CHECK_THROWS(kernels::matmul_tn(Mat(2, 3), Mat(4, 2)));
}

TEST_CASE("softmax rows match the reference and sum to one") {
    std::mt19937_64 rng(2);
    Mat x = random_mat(13, 21, rng, -30, 30);
    Mat y = x;
    kernels::softmax_rows(x);
    kernels::reference::softmax_rows(y);
    CHECK(max_abs_diff(x, y) < 1e-14);
    for (Index r = 0; r < x.rows(); ++r) {
        Real s = 0;
        for (Real v : x.row(r)) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("layer norm matches the reference") {
    std::mt19937_64 rng(3);
    const Mat x = random_mat(11, 16, rng, -3, 3);
    const Mat gain = random_mat(1, 16, rng);
    const Mat shift = random_mat(1, 16, rng);
    kernels::LayerNormCache cache;
    const Mat y = kernels::layer_norm(x, gain, shift, &cache);
    CHECK(max_abs_diff(y, kernels::reference::layer_norm(x, gain, shift)) < 1e-12);
    for (Index r = 0; r < x.rows(); ++r) {
        Real mean = 0, var = 0;
        for (Real v : cache.normalized.row(r)) mean += v;
        mean /= 16;
        for (Real v : cache.normalized.row(r)) var += (v - mean) * (v - mean);
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var / 16 == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("layer norm backward matches finite differences") {
    std::mt19937_64 rng(4);
    Mat x = random_mat(4, 6, rng, -2, 2);
    const Mat gain = random_mat(1, 6, rng);
    const Mat shift = random_mat(1, 6, rng);
    const Mat w = random_mat(4, 6, rng);
    const auto objective = [&](const Mat& in) {
        const Mat y = kernels::layer_norm(in, gain, shift, nullptr);
        Real s = 0;
        for (Index i = 0; i < y.size(); ++i) s += y.values()[i] * w.values()[i];
        return s;
    };
    kernels::LayerNormCache cache;
    kernels::layer_norm(x, gain, shift, &cache);
    Mat dgain(1, 6), dshift(1, 6);
    const Mat dx = kernels::layer_norm_backward(w, gain, cache, dgain, dshift);
    std::vector<Real> numeric;
    for (Index k = 0; k < x.size(); ++k) {
        const Real saved = x.values()[k];
        x.values()[k] = saved + 1e-6;
        const Real up = objective(x);
        x.values()[k] = saved - 1e-6;
        const Real down = objective(x);
        x.values()[k] = saved;
        numeric.push_back((up - down) / 2e-6);
    }
    CHECK(relative_error(dx.values(), numeric) < 1e-7);
    Mat colsum(1, 6);
    kernels::accumulate_col_sums(w, colsum);
    CHECK(max_abs_diff(dshift, colsum) < 1e-14);
}

TEST_CASE("gelu derivative matches finite differences") {
    for (Real x : {-4.0, -1.3, -0.2, 0.0, 0.7, 2.5}) {
        const Real numeric = (kernels::gelu(x + 1e-6) - kernels::gelu(x - 1e-6)) / 2e-6;
        CHECK(kernels::gelu_grad(x) == doctest::Approx(numeric).epsilon(1e-7));
    }
    CHECK(kernels::gelu(0.0) == 0.0);
    CHECK(kernels::gelu(1.0) == doctest::Approx(0.8413447460685429));
}

TEST_CASE("row bias broadcast") {
    Mat x(3, 2, 1.0);
    Mat b(1, 2);
    b(0, 0) = 2;
    b(0, 1) = -1;
    kernels::add_row_bias(x, b);
    for (Index r = 0; r < 3; ++r) {
        CHECK(x(r, 0) == 3.0);
        CHECK(x(r, 1) == 0.0);
    }
}
