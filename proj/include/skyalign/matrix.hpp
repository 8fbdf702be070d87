#pragma once

#include <Eigen/Core>

namespace skyalign {

// Row-major so that one sample is one contiguous row.
using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace skyalign
