#pragma once

#include "mcae/mat.hpp"

// Dense kernels used by the transformer forward/backward passes.
//
// The functions in `mcae::kernels` split work across OpenMP threads by output
// row; every output element is produced by a single thread with a fixed
// summation order, so results do not depend on the thread count.
// `mcae::kernels::reference` holds straightforward serial versions that the
// tests and the benchmark compare against.
namespace mcae::kernels {

// C = A * B
Mat matmul(const Mat& a, const Mat& b);
// C = A * B^T
Mat matmul_nt(const Mat& a, const Mat& b);
// C = A^T * B
Mat matmul_tn(const Mat& a, const Mat& b);
// C += A^T * B   (weight-gradient accumulation)
void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c);

// Adds the 1×cols row vector `bias` to every row of `x`.
void add_row_bias(Mat& x, const Mat& bias);
// bias_grad += column sums of dy
void accumulate_col_sums(const Mat& dy, Mat& bias_grad);

// Row-wise softmax in place.
void softmax_rows(Mat& x);

Real gelu(Real x);
Real gelu_grad(Real x);

struct LayerNormCache {
    Mat normalized;              // (x - mean) / std, before gain/shift
    std::vector<Real> inv_std;   // per row
};

inline constexpr Real layer_norm_eps = 1e-6;

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& shift, LayerNormCache* cache);
// Returns dx; accumulates into gain/shift gradients.
Mat layer_norm_backward(const Mat& dy, const Mat& gain, const LayerNormCache& cache, Mat& dgain,
                        Mat& dshift);

namespace reference {
Mat matmul(const Mat& a, const Mat& b);
Mat matmul_nt(const Mat& a, const Mat& b);
Mat matmul_tn(const Mat& a, const Mat& b);
void softmax_rows(Mat& x);
Mat layer_norm(const Mat& x, const Mat& gain, const Mat& shift);
}  // namespace reference

}  // namespace mcae::kernels
