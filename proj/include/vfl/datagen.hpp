#pragma once

#include <map>
#include <string>

#include "vfl/dataset.hpp"
#include "vfl/model.hpp"
#include "vfl/rng.hpp"

namespace vfl {

struct GeneratorSpec {
  Family family = Family::Logistic;
  std::size_t n = 500;
  int p = 20;
  std::vector<int> block_sizes;  // empty: p split as evenly as possible over num_clients
  int num_clients = 2;
  std::uint64_t seed = 1;
  double noise_sd = 1.0;   // predictor noise (logistic) or response sigma (linear)
  double beta_scale = 1.0;
  int levels = 5;          // poisson-multilevel
  int pop_min = 250;
  int pop_max = 350;
  double eta_clip = 30.0;  // overflow guard for the Poisson rate
  double margin = 1.0;     // splitnn synthetic: decision-boundary sharpness

  std::vector<int> resolved_blocks() const;
};

struct GeneratedData {
  Dataset data;
  // Ground-truth values keyed by exported parameter names ("client0.beta[1]",
  // "b", ...), persisted for density overlays.
  std::map<std::string, double> truth;
  int clipped_rows = 0;  // Poisson eta-clip events
};

GeneratedData gen_logistic(const GeneratorSpec& spec);
GeneratedData gen_linear(const GeneratorSpec& spec);
GeneratedData gen_multilevel_poisson(const GeneratorSpec& spec);
// Separable binary task with heart-like dimensions; the CI stand-in when the
// real dataset is absent.
GeneratedData gen_splitnn_synthetic(const GeneratorSpec& spec);

GeneratedData generate(const GeneratorSpec& spec);

// Deterministic Poisson sampler (inversion for small rates, PTRS for large).
std::uint64_t poisson_draw(RngStream& stream, double rate);

}  // namespace vfl
