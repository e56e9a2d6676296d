#ifndef ATRADIFF_QFUNCTION_HPP_
#define ATRADIFF_QFUNCTION_HPP_

#include <Eigen/Core>

#include "atradiff/env.hpp"

namespace atradiff {

// Read-only action-value view over a discrete action space.
class QFunction {
 public:
  virtual ~QFunction() = default;
  virtual Eigen::VectorXd q_values(const State& s) const = 0;
  // States as columns; returns action_count x batch.
  virtual Eigen::MatrixXd q_values_batch(const Eigen::MatrixXd& states) const = 0;
};

}  // namespace atradiff

#endif  // ATRADIFF_QFUNCTION_HPP_
