#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "latcert/model.hpp"
#include "latcert/tape.hpp"

namespace latcert {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates per trainable parameter.
struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Tensor> first;
  std::map<std::string, Tensor> second;
};

/// One bias-corrected Adam update of every trainable parameter. Missing
/// gradients count as zero; frozen parameters are never touched.
void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, const AdamHyper& hyper);

}  // namespace latcert
