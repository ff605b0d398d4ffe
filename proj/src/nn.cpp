#include "ldct/nn.hpp"

#include <Eigen/Dense>

#include "ldct/rng.hpp"

namespace ldct {

void orthogonal_matrix(int out_dim, int in_dim, uint64_t seed, std::vector<double>& w) {
  const int big = std::max(out_dim, in_dim);
  const int small = std::min(out_dim, in_dim);
  Rng rng(Rng::mix(seed, 0x6f727468ULL));
  Eigen::MatrixXd g(big, small);
  for (int r = 0; r < big; ++r)
    for (int c = 0; c < small; ++c) g(r, c) = rng.gaussian();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // fix the signs so the factorization is unique given the Gaussian draw
  Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int c = 0; c < small; ++c)
    if (r(c, c) < 0) q.col(c) *= -1.0;

  w.assign(static_cast<size_t>(out_dim) * in_dim, 0.0);
  if (out_dim <= in_dim) {
    // rows of W = columns of Q, so W W^T = I
    for (int o = 0; o < out_dim; ++o)
      for (int i = 0; i < in_dim; ++i) w[static_cast<size_t>(o) * in_dim + i] = q(i, o);
  } else {
    for (int o = 0; o < out_dim; ++o)
      for (int i = 0; i < in_dim; ++i) w[static_cast<size_t>(o) * in_dim + i] = q(o, i);
  }
}

}  // namespace ldct
