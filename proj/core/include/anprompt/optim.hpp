#pragma once

#include <vector>

#include "anprompt/autograd.hpp"

namespace anprompt {

/// Adaptive-moment optimiser with bias correction and no weight decay.
/// Frozen parameters in the list are skipped.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(double lr);
  void zero_grad();
  [[nodiscard]] long steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace anprompt
