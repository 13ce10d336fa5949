#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cpflow/checkpoint.hpp"
#include "cpflow/config.hpp"
#include "cpflow/datasets.hpp"
#include "cpflow/flow.hpp"

namespace cpflow {

// Everything that determines a training trajectory besides the data itself.
// Two runs with equal config and equal splits produce bit-identical parameter
// trajectories; all stochastic streams (shuffles, probes, validation) derive
// from `seed` and the absolute step counter, never from mutable state.
struct TrainConfig {
  long dim = 2;
  long n_flows = 1;
  long depth = 2;   // hidden layers per potential
  long width = 16;  // hidden units per layer
  bool augmented = false;
  bool interleave_actnorm = false;
  // Gains stay at 1 in trained models; the swept axes are base and variant.
  ActivationKind activation_first{SoftplusBase::kGaussian,
                                  SoftplusVariant::kSymmetrized, 1.0};
  ActivationKind activation_rest{SoftplusBase::kGaussian, SoftplusVariant::kPlain,
                                 1.0};
  double learning_rate = 0.005;
  // Per-step multiplicative factor on the learning rate, indexed by the
  // absolute step counter so resumed runs continue the same schedule. 1 = off.
  double lr_decay = 1.0;
  long batch_size = 128;
  long epochs = 10;
  double cg_atol = 1e-3;
  long slq_steps = 20;
  long slq_probes = 32;
  uint64_t seed = 0;
  double grad_clip_norm = 0.0;  // global-norm cap; 0 disables clipping
  long val_interval = 50;       // steps between history rows
  long checkpoint_interval = 0;  // steps between snapshots; 0 = final only
  // Early stop once a validation NLL reaches this value; NaN disables.
  double target_val_nll = std::numeric_limits<double>::quiet_NaN();

  void validate() const;  // throws ContractError
  ICNNConfig layer_config() const;
};

// Flat key=value view of TrainConfig; the round trip is lossless. Activations
// use the canonical "base+variant@gain=G" text form from activations.hpp.
Config train_config_to_config(const TrainConfig& tc);
TrainConfig train_config_from_config(const Config& cfg);
const std::vector<std::string>& train_config_keys();

// Adam first/second moments, one slot per named parameter array, plus the
// bias-correction step counter.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long t = 0;
};
AdamState make_adam_state(const std::vector<NamedParam>& params);

// One bias-corrected Adam update in place. Any non-finite gradient entry
// rejects the whole step: parameters, moments, and the counter stay untouched
// and `diagnostic` (when given) names the offending array. Returns whether
// the step was applied.
bool adam_step(std::vector<NamedParam>& params, const std::vector<ArrayValue>& grads,
               AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8, std::string* diagnostic = nullptr);

struct HistoryRow {
  long step = 0;
  double loss_proxy = 0;      // batch-mean training objective at this step
  double val_nll = 0;         // exact log-det when dim <= 256, SLQ above
  double transport_cost = 0;  // mean squared displacement on the val split
  double kl_diag = 0;         // KL of moment-fitted pushforward to N(0, I)
  double cg_iters_mean = 0;
};
const std::vector<std::string>& history_header();
void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows);

struct TrainState {
  FlowStack stack;
  AdamState adam;
  long step = 0;
};

// Fresh stack for the config with ActNorm initialized on what will be the
// first batch of epoch 0, so training starts from the same bits the first
// step sees.
TrainState init_train_state(const TrainConfig& config, const ArrayValue& train_rows);

struct TrainResult {
  std::vector<HistoryRow> history;
  long steps_run = 0;
  bool reached_target = false;
  long cg_nonconverged_steps = 0;  // warning count, not an error
  long rejected_steps = 0;         // Adam refusals on non-finite gradients
};

// Runs config.epochs epochs on splits.train starting from state.step (epoch
// boundaries are derived from the absolute counter, so resuming a loaded
// state continues the exact shuffle and probe streams). Writes a checkpoint
// at the configured cadence and once more after the last step when
// checkpoint_path is non-empty; a non-finite loss aborts with NumericalError
// and leaves the last written checkpoint in place.
TrainResult train(TrainState& state, const TrainConfig& config, const Splits& splits,
                  const std::string& checkpoint_path = "");

// Mean negative log-likelihood, chunked so large splits stay in memory
// bounds. Exact log-det when dim <= 256, SLQ with the config options above.
double validation_nll(const FlowStack& stack, const ArrayValue& rows,
                      const TrainConfig& config, uint64_t eval_seed);

// KL(N(moments of f(rows)) || N(0, I)); NaN when the sample covariance is not
// SPD (tiny batches) rather than an error, since this is a diagnostic.
double pushforward_gaussian_kl(const FlowStack& stack, const ArrayValue& rows);

// Checkpoint bridges. pack emits the stack arrays in stack_named_params
// order, then Adam moments as "adam.m.NAME"/"adam.v.NAME", then "adam.t".
CheckpointData pack_checkpoint(const TrainConfig& config, TrainState& state);
struct LoadedCheckpoint {
  TrainConfig config;
  TrainState state;
};
// Rebuilds the stack from the embedded config and fills every array by name;
// missing names or shape mismatches raise ParseError.
LoadedCheckpoint unpack_checkpoint(const CheckpointData& data);

}  // namespace cpflow
