#pragma once

#include <string>

#include "vfl/adam.hpp"
#include "vfl/gradients.hpp"
#include "vfl/model.hpp"
#include "vfl/transport.hpp"

namespace vfl {

struct RunConfig {
  std::uint64_t run_id = 1;
  std::uint64_t seed = 1;
  int iterations = 1000;
  AdamConfig adam;
  // Geometric learning-rate decay toward this value across the run; 0 keeps
  // the rate constant.
  double lr_decay_to = 0.0;
  // Iteration fraction at which tail averaging of the variational parameters
  // starts; 1.0 disables it.
  double average_start_frac = 1.0;
  bool shared_y = true;  // response visible to clients (scenario 1) or server-only
  // Variational family.
  bool amortized = false;
  MlpSpec amortized_spec;  // head net; input width is filled in per family
  bool theta_diagonal = false;
  double theta_init_scale = 0.1;
  double z_init_scale = 0.1;
  int mc_samples = 1;
  // Keep every theta draw in the result (privacy-surface tests).
  bool record_samples = false;
};

struct TraceRow {
  std::uint64_t iteration = 0;
  double server_term = 0.0;
  double client_term = 0.0;
  double total = 0.0;
};

struct FitResult {
  std::vector<TraceRow> trace;
  VariationalState state;
  VariationalState averaged;            // tail-averaged parameters (== state when off)
  std::vector<MlpParams> rep_nets;      // splitnn feature nets, final
  std::vector<Vec> final_z;
  std::vector<std::vector<Vec>> theta_draws;  // per client, when record_samples is on
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  std::uint64_t seed = 0;
  std::string algorithm;
  double wall_ms = 0.0;
  bool aborted = false;
  std::string abort_reason;
  std::uint64_t abort_iteration = 0;

  // Mean of the tail ELBO trace; a stable "final ELBO" readout.
  double tail_elbo(std::size_t tail_rows = 100) const;
};

// Initial factors as the protocols construct them; exposed so oracles and
// tests can reproduce the exact starting point.
VariationalState init_variational_state(const ModelSpec& spec, const Dataset& data,
                                        const std::vector<ClientModel>& models,
                                        const RunConfig& cfg);

// Federated executions. A null network runs over a private in-process star.
FitResult run_algorithm1(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg,
                         TransportNetwork* net = nullptr);
FitResult run_algorithm2(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg,
                         TransportNetwork* net = nullptr);

// Identical mathematical updates in one process, no messages; the equivalence
// oracle for the federated paths.
FitResult monolithic_reference(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg);

// Non-federated fits.
FitResult fit_true_model(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg);
FitResult fit_splitnn_map(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg);

// Point estimates of the splitnn weights from the MAP trainer live in
// FitResult.state.clients[j].theta's mean slot; rep nets in rep_nets.

}  // namespace vfl
