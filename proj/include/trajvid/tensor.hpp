#pragma once

#include <Eigen/Dense>

namespace trajvid {

// Token-major activations: one row per token, one column per channel.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatF = Mat<float>;
using MatD = Mat<double>;

}  // namespace trajvid
