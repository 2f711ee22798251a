#include "mcae/kernels.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mcae::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr long parallel_work_floor = 1L << 15;

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Mat matmul(const Mat& a, const Mat& b) {
    check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
    const long n = static_cast<long>(a.rows());
    const Index k = a.cols();
    const Index m = b.cols();
    Mat c(a.rows(), m);
    const long work = n * static_cast<long>(k * m);
#pragma omp parallel for schedule(static) if (work > parallel_work_floor)
    for (long i = 0; i < n; ++i) {
        Real* ci = c.row(static_cast<Index>(i)).data();
        const Real* ai = a.row(static_cast<Index>(i)).data();
        for (Index p = 0; p < k; ++p) {
            const Real aip = ai[p];
            const Real* bp = b.row(p).data();
            for (Index j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
    const long n = static_cast<long>(a.rows());
    const Index k = a.cols();
    const Index m = b.rows();
    Mat c(a.rows(), m);
    const long work = n * static_cast<long>(k * m);
#pragma omp parallel for schedule(static) if (work > parallel_work_floor)
    for (long i = 0; i < n; ++i) {
        const Real* ai = a.row(static_cast<Index>(i)).data();
        for (Index j = 0; j < m; ++j) {
            const Real* bj = b.row(j).data();
            Real s = 0;
            for (Index p = 0; p < k; ++p) s += ai[p] * bj[p];
            c(static_cast<Index>(i), j) = s;
        }
    }
    return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    Mat c(a.cols(), b.cols());
    matmul_tn_acc(a, b, c);
    return c;
}

void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
    check(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
    check(c.rows() == a.cols() && c.cols() == b.cols(), "matmul_tn: output shape mismatch");
    const long n = static_cast<long>(a.cols());
    const Index k = a.rows();
    const Index m = b.cols();
    const long work = n * static_cast<long>(k * m);
#pragma omp parallel for schedule(static) if (work > parallel_work_floor)
    for (long i = 0; i < n; ++i) {
        Real* ci = c.row(static_cast<Index>(i)).data();
        for (Index p = 0; p < k; ++p) {
            const Real api = a(p, static_cast<Index>(i));
            if (api == 0) continue;
            const Real* bp = b.row(p).data();
            for (Index j = 0; j < m; ++j) ci[j] += api * bp[j];
        }
    }
}

void add_row_bias(Mat& x, const Mat& bias) {
    check(bias.rows() == 1 && bias.cols() == x.cols(), "add_row_bias: shape mismatch");
    for (Index r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (Index c = 0; c < x.cols(); ++c) row[c] += bias(0, c);
    }
}

void accumulate_col_sums(const Mat& dy, Mat& bias_grad) {
    check(bias_grad.rows() == 1 && bias_grad.cols() == dy.cols(), "accumulate_col_sums: shape mismatch");
    for (Index r = 0; r < dy.rows(); ++r) {
        auto row = dy.row(r);
        for (Index c = 0; c < dy.cols(); ++c) bias_grad(0, c) += row[c];
    }
}

void softmax_rows(Mat& x) {
    const long n = static_cast<long>(x.rows());
    const long work = n * static_cast<long>(x.cols());
#pragma omp parallel for schedule(static) if (work > parallel_work_floor)
    for (long r = 0; r < n; ++r) {
        auto row = x.row(static_cast<Index>(r));
        Real mx = row[0];
        for (Real v : row) mx = std::max(mx, v);
        Real sum = 0;
        for (Real& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (Real& v : row) v /= sum;
    }
}

Real gelu(Real x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

Real gelu_grad(Real x) {
    const Real cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const Real pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& shift, LayerNormCache* cache) {
    const Index d = x.cols();
    check(gain.cols() == d && shift.cols() == d, "layer_norm: parameter shape mismatch");
    Mat y(x.rows(), d);
    Mat norm(x.rows(), d);
    std::vector<Real> inv_std(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        Real mean = 0;
        for (Real v : xr) mean += v;
        mean /= static_cast<Real>(d);
        Real var = 0;
        for (Real v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<Real>(d);
        const Real is = 1.0 / std::sqrt(var + layer_norm_eps);
        inv_std[r] = is;
        for (Index c = 0; c < d; ++c) {
            const Real nv = (xr[c] - mean) * is;
            norm(r, c) = nv;
            y(r, c) = nv * gain(0, c) + shift(0, c);
        }
    }
    if (cache) {
        cache->normalized = std::move(norm);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Mat layer_norm_backward(const Mat& dy, const Mat& gain, const LayerNormCache& cache, Mat& dgain,
                        Mat& dshift) {
    const Index d = dy.cols();
    const Real inv_d = 1.0 / static_cast<Real>(d);
    Mat dx(dy.rows(), d);
    std::vector<Real> dn(d);
    for (Index r = 0; r < dy.rows(); ++r) {
        Real sum_dn = 0;
        Real sum_dn_n = 0;
        for (Index c = 0; c < d; ++c) {
            const Real n = cache.normalized(r, c);
            dgain(0, c) += dy(r, c) * n;
            dshift(0, c) += dy(r, c);
            dn[c] = dy(r, c) * gain(0, c);
            sum_dn += dn[c];
            sum_dn_n += dn[c] * n;
        }
        for (Index c = 0; c < d; ++c) {
            const Real n = cache.normalized(r, c);
            dx(r, c) = cache.inv_std[r] * (dn[c] - inv_d * sum_dn - n * inv_d * sum_dn_n);
        }
    }
    return dx;
}

namespace reference {

Mat matmul(const Mat& a, const Mat& b) {
    check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
    Mat c(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j) {
            Real s = 0;
            for (Index p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
            c(i, j) = s;
        }
    return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
    Mat c(a.rows(), b.rows());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.rows(); ++j) {
            Real s = 0;
            for (Index p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
            c(i, j) = s;
        }
    return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    check(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
    Mat c(a.cols(), b.cols());
    for (Index i = 0; i < a.cols(); ++i)
        for (Index j = 0; j < b.cols(); ++j) {
            Real s = 0;
            for (Index p = 0; p < a.rows(); ++p) s += a(p, i) * b(p, j);
            c(i, j) = s;
        }
    return c;
}

void softmax_rows(Mat& x) {
    for (Index r = 0; r < x.rows(); ++r) {
        Real mx = x(r, 0);
        for (Index c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
        Real sum = 0;
        for (Index c = 0; c < x.cols(); ++c) sum += std::exp(x(r, c) - mx);
        for (Index c = 0; c < x.cols(); ++c) x(r, c) = std::exp(x(r, c) - mx) / sum;
    }
}

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& shift) {
    Mat y(x.rows(), x.cols());
    const auto d = static_cast<Real>(x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        Real mean = 0, var = 0;
        for (Index c = 0; c < x.cols(); ++c) mean += x(r, c) / d;
        for (Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean) / d;
        for (Index c = 0; c < x.cols(); ++c)
            y(r, c) = (x(r, c) - mean) / std::sqrt(var + layer_norm_eps) * gain(0, c) + shift(0, c);
    }
    return y;
}

}  // namespace reference

}  // namespace mcae::kernels
