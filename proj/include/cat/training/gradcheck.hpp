#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cat/model/model.hpp"

namespace cat::training {

struct GradcheckOptions {
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  double step = 1e-4;        // central difference step
  double floor = 1e-6;       // denominator floor of the relative error
  double tolerance = 1e-3;
  std::size_t max_halvings = 5;  // step reductions for probes that straddle a kink
};

struct GroupCheck {
  std::string name;
  double worst = 0.0;             // worst relative error over the probes
  double directional_error = 0.0;  // along a random +-1 direction
  double max_entry_error = 0.0;    // at the largest-magnitude gradient entry
  double random_entry_error = 0.0;
  std::size_t step_halvings = 0;
  std::size_t kinked_probes = 0;  // still straddling a kink at the smallest step
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;
  double worst = 0.0;
  std::string worst_group;
  std::size_t step_halvings = 0;
  std::size_t kinked_probes = 0;
  bool passed = false;
  double seconds = 0.0;
};

// Finite-difference check of the full model under the training loss on a
// seeded synthetic batch, one group per parameter tensor.
GradcheckReport run_gradcheck(const model::ModelConfig& config, const GradcheckOptions& options);

std::string format_gradcheck(const GradcheckReport& report);

}  // namespace cat::training
