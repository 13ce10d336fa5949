#include "cpflow/training.hpp"

#include <cmath>
#include <cstring>

#include "cpflow/csv.hpp"
#include "cpflow/errors.hpp"
#include "cpflow/rng.hpp"

namespace cpflow {

namespace {

// Stream tags: every stochastic consumer mixes a distinct constant so shuffle,
// probe, and validation draws never share a splitmix64 seed.
constexpr uint64_t kStreamInit = 0xA11;
constexpr uint64_t kStreamShuffle = 1;
constexpr uint64_t kStreamProbes = 2;
constexpr uint64_t kStreamVal = 3;

ArrayValue slice_rows(const ArrayValue& rows, long begin, long end) {
  const long d = rows.cols();
  std::vector<double> out(static_cast<size_t>(end - begin) * d);
  std::memcpy(out.data(), rows.data() + begin * d,
              sizeof(double) * static_cast<size_t>(end - begin) * d);
  return ArrayValue::from({end - begin, d}, std::move(out));
}

ArrayValue gather_rows(const ArrayValue& rows, const std::vector<long>& perm, long begin,
                       long end) {
  const long d = rows.cols();
  std::vector<double> out(static_cast<size_t>(end - begin) * d);
  for (long i = begin; i < end; ++i) {
    std::memcpy(out.data() + static_cast<size_t>(i - begin) * d,
                rows.data() + perm[static_cast<size_t>(i)] * d,
                sizeof(double) * static_cast<size_t>(d));
  }
  return ArrayValue::from({end - begin, d}, std::move(out));
}

}  // namespace

void TrainConfig::validate() const {
  if (dim < 1) throw ContractError("TrainConfig: dim must be positive");
  if (n_flows < 1) throw ContractError("TrainConfig: n_flows must be positive");
  if (!(learning_rate > 0.0)) throw ContractError("TrainConfig: learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw ContractError("TrainConfig: lr_decay must be in (0, 1]");
  }
  if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be positive");
  if (epochs < 0) throw ContractError("TrainConfig: epochs must be non-negative");
  if (!(cg_atol > 0.0)) throw ContractError("TrainConfig: cg_atol must be positive");
  if (slq_steps < 1) throw ContractError("TrainConfig: slq_steps must be positive");
  if (slq_probes < 1) throw ContractError("TrainConfig: slq_probes must be positive");
  if (val_interval < 1) throw ContractError("TrainConfig: val_interval must be positive");
  if (checkpoint_interval < 0) {
    throw ContractError("TrainConfig: checkpoint_interval must be non-negative");
  }
  if (!(grad_clip_norm >= 0.0)) {
    throw ContractError("TrainConfig: grad_clip_norm must be non-negative");
  }
  layer_config().validate();
}

ICNNConfig TrainConfig::layer_config() const {
  ICNNConfig cfg;
  cfg.input_dim = dim;
  cfg.depth = depth;
  cfg.width = width;
  cfg.augmented = augmented;
  cfg.activation_first = activation_first;
  cfg.activation_rest = activation_rest;
  return cfg;
}

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = {
      "dim",           "n_flows",      "depth",
      "width",         "augmented",    "interleave_actnorm",
      "activation_first", "activation_rest", "learning_rate",
      "lr_decay",      "batch_size",   "epochs",       "cg_atol",
      "slq_steps",     "slq_probes",   "seed",
      "grad_clip_norm", "val_interval", "checkpoint_interval",
      "target_val_nll"};
  return keys;
}

Config train_config_to_config(const TrainConfig& tc) {
  Config cfg;
  cfg.set_long("dim", tc.dim);
  cfg.set_long("n_flows", tc.n_flows);
  cfg.set_long("depth", tc.depth);
  cfg.set_long("width", tc.width);
  cfg.set_bool("augmented", tc.augmented);
  cfg.set_bool("interleave_actnorm", tc.interleave_actnorm);
  cfg.set("activation_first", activation_to_string(tc.activation_first));
  cfg.set("activation_rest", activation_to_string(tc.activation_rest));
  cfg.set_double("learning_rate", tc.learning_rate);
  cfg.set_double("lr_decay", tc.lr_decay);
  cfg.set_long("batch_size", tc.batch_size);
  cfg.set_long("epochs", tc.epochs);
  cfg.set_double("cg_atol", tc.cg_atol);
  cfg.set_long("slq_steps", tc.slq_steps);
  cfg.set_long("slq_probes", tc.slq_probes);
  cfg.set_u64("seed", tc.seed);
  cfg.set_double("grad_clip_norm", tc.grad_clip_norm);
  cfg.set_long("val_interval", tc.val_interval);
  cfg.set_long("checkpoint_interval", tc.checkpoint_interval);
  cfg.set_double("target_val_nll", tc.target_val_nll);
  return cfg;
}

TrainConfig train_config_from_config(const Config& cfg) {
  TrainConfig tc;
  tc.dim = cfg.get_long("dim", tc.dim);
  tc.n_flows = cfg.get_long("n_flows", tc.n_flows);
  tc.depth = cfg.get_long("depth", tc.depth);
  tc.width = cfg.get_long("width", tc.width);
  tc.augmented = cfg.get_bool("augmented", tc.augmented);
  tc.interleave_actnorm = cfg.get_bool("interleave_actnorm", tc.interleave_actnorm);
  if (cfg.has("activation_first")) {
    tc.activation_first = activation_from_string(cfg.get_string_required("activation_first"));
  }
  if (cfg.has("activation_rest")) {
    tc.activation_rest = activation_from_string(cfg.get_string_required("activation_rest"));
  }
  tc.learning_rate = cfg.get_double("learning_rate", tc.learning_rate);
  tc.lr_decay = cfg.get_double("lr_decay", tc.lr_decay);
  tc.batch_size = cfg.get_long("batch_size", tc.batch_size);
  tc.epochs = cfg.get_long("epochs", tc.epochs);
  tc.cg_atol = cfg.get_double("cg_atol", tc.cg_atol);
  tc.slq_steps = cfg.get_long("slq_steps", tc.slq_steps);
  tc.slq_probes = cfg.get_long("slq_probes", tc.slq_probes);
  tc.seed = cfg.get_u64("seed", tc.seed);
  tc.grad_clip_norm = cfg.get_double("grad_clip_norm", tc.grad_clip_norm);
  tc.val_interval = cfg.get_long("val_interval", tc.val_interval);
  tc.checkpoint_interval = cfg.get_long("checkpoint_interval", tc.checkpoint_interval);
  tc.target_val_nll = cfg.get_double("target_val_nll", tc.target_val_nll);
  return tc;
}

AdamState make_adam_state(const std::vector<NamedParam>& params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const NamedParam& p : params) {
    st.m.emplace_back(static_cast<size_t>(p.array->size()), 0.0);
    st.v.emplace_back(static_cast<size_t>(p.array->size()), 0.0);
  }
  return st;
}

bool adam_step(std::vector<NamedParam>& params, const std::vector<ArrayValue>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps,
               std::string* diagnostic) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw ContractError("adam_step: params, grads, and state sizes disagree");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].array->size()) {
      throw ContractError("adam_step: gradient size mismatch for '" + params[i].name + "'");
    }
    for (long j = 0; j < grads[i].size(); ++j) {
      if (!std::isfinite(grads[i].data()[j])) {
        if (diagnostic) {
          *diagnostic = "non-finite gradient in '" + params[i].name + "'";
        }
        return false;  // whole step rejected, moments and counter untouched
      }
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const ArrayValue& p = *params[i].array;
    std::vector<double> next(p.data(), p.data() + p.size());
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    const double* g = grads[i].data();
    for (long j = 0; j < p.size(); ++j) {
      size_t u = static_cast<size_t>(j);
      m[u] = beta1 * m[u] + (1.0 - beta1) * g[j];
      v[u] = beta2 * v[u] + (1.0 - beta2) * g[j] * g[j];
      next[u] -= lr * (m[u] / bc1) / (std::sqrt(v[u] / bc2) + eps);
    }
    *params[i].array = ArrayValue::from(p.shape(), std::move(next));
  }
  return true;
}

const std::vector<std::string>& history_header() {
  static const std::vector<std::string> header = {"step",           "loss_proxy",
                                                  "val_nll",        "transport_cost",
                                                  "kl_diag",        "cg_iters_mean"};
  return header;
}

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::vector<double> flat;
  flat.reserve(rows.size() * 6);
  for (const HistoryRow& r : rows) {
    flat.push_back(static_cast<double>(r.step));
    flat.push_back(r.loss_proxy);
    flat.push_back(r.val_nll);
    flat.push_back(r.transport_cost);
    flat.push_back(r.kl_diag);
    flat.push_back(r.cg_iters_mean);
  }
  write_csv(path, history_header(),
            ArrayValue::from({static_cast<long>(rows.size()), 6}, std::move(flat)));
}

TrainState init_train_state(const TrainConfig& config, const ArrayValue& train_rows) {
  config.validate();
  if (train_rows.rank() != 2 || train_rows.rows() < 1) {
    throw ContractError("init_train_state: need a non-empty rank-2 train split");
  }
  if (train_rows.cols() != config.dim) {
    throw ContractError("init_train_state: data dim " + std::to_string(train_rows.cols()) +
                        " does not match config dim " + std::to_string(config.dim));
  }
  TrainState state;
  state.stack = make_stack(config.dim, config.n_flows, config.layer_config(),
                           config.interleave_actnorm, mix_seed(config.seed, kStreamInit));
  const long n = train_rows.rows();
  const long b = std::min(config.batch_size, n);
  std::vector<long> perm = Rng(mix_seed(config.seed, kStreamShuffle, 0)).permutation(n);
  stack_actnorm_data_init(state.stack, gather_rows(train_rows, perm, 0, b));
  state.adam = make_adam_state(stack_named_params(state.stack));
  return state;
}

double validation_nll(const FlowStack& stack, const ArrayValue& rows,
                      const TrainConfig& config, uint64_t eval_seed) {
  if (rows.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
  const long n = rows.rows();
  const long chunk = 2048;
  const LogDetMode mode = stack.dim <= 256 ? LogDetMode::kExact : LogDetMode::kSlq;
  SlqOptions slq{config.slq_steps, config.slq_probes};
  double total = 0.0;
  long idx = 0;
  for (long begin = 0; begin < n; begin += chunk, ++idx) {
    const long end = std::min(n, begin + chunk);
    LogDensityResult r =
        log_density(stack, slice_rows(rows, begin, end), mode, mix_seed(eval_seed, idx), slq);
    for (double lp : r.logp) total -= lp;
  }
  return total / static_cast<double>(n);
}

double pushforward_gaussian_kl(const FlowStack& stack, const ArrayValue& rows) {
  const long n = rows.rows();
  const long d = rows.cols();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  ArrayValue y = flow_forward(stack, rows);
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += y.data()[i * d + j];
  for (long j = 0; j < d; ++j) mean[static_cast<size_t>(j)] /= static_cast<double>(n);
  std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
  for (long i = 0; i < n; ++i) {
    for (long r = 0; r < d; ++r) {
      const double cr = y.data()[i * d + r] - mean[static_cast<size_t>(r)];
      for (long c = 0; c <= r; ++c) {
        cov[static_cast<size_t>(r * d + c)] +=
            cr * (y.data()[i * d + c] - mean[static_cast<size_t>(c)]);
      }
    }
  }
  for (long r = 0; r < d; ++r) {
    for (long c = 0; c <= r; ++c) {
      double v = cov[static_cast<size_t>(r * d + c)] / static_cast<double>(n);
      cov[static_cast<size_t>(r * d + c)] = v;
      cov[static_cast<size_t>(c * d + r)] = v;
    }
  }
  try {
    return gaussian_kl_to_standard(mean, cov, d);
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

TrainResult train(TrainState& state, const TrainConfig& config, const Splits& splits,
                  const std::string& checkpoint_path) {
  config.validate();
  state.stack.validate();
  if (splits.train.rank() != 2 || splits.train.rows() < 1) {
    throw ContractError("train: need a non-empty train split");
  }
  if (splits.train.cols() != config.dim) {
    throw ContractError("train: data dim does not match config dim");
  }
  const long n = splits.train.rows();
  const long b = std::min(config.batch_size, n);
  const long steps_per_epoch = (n + b - 1) / b;
  const long total = config.epochs * steps_per_epoch;

  std::vector<NamedParam> params = stack_named_params(state.stack);
  if (state.adam.m.empty() && !params.empty()) {
    state.adam = make_adam_state(params);
  }
  if (state.adam.m.size() != params.size()) {
    throw ContractError("train: optimizer state does not match the stack");
  }

  TrainResult result;
  long cached_epoch = -1;
  std::vector<long> perm;
  std::string diag;
  for (long s = 0; s < total; ++s) {
    const long step = state.step;
    const long epoch = step / steps_per_epoch;
    const long pos = step % steps_per_epoch;
    if (epoch != cached_epoch) {
      perm = Rng(mix_seed(config.seed, kStreamShuffle, static_cast<uint64_t>(epoch)))
                 .permutation(n);
      cached_epoch = epoch;
    }
    const long begin = pos * b;
    const long end = std::min(n, begin + b);
    ArrayValue batch = gather_rows(splits.train, perm, begin, end);
    const long bn = end - begin;

    Graph g;
    NllResult res = nll_training_loss(g, state.stack, batch, config.cg_atol,
                                      mix_seed(config.seed, kStreamProbes,
                                               static_cast<uint64_t>(step)));
    const double loss = g.value(res.loss).at(0);
    if (!std::isfinite(loss)) {
      throw NumericalError("train: non-finite loss at step " + std::to_string(step + 1));
    }
    if (!res.cg_converged) ++result.cg_nonconverged_steps;

    std::vector<NodeId> grad_nodes = g.gradient(res.loss, res.param_leaves, false);
    std::vector<ArrayValue> grads;
    grads.reserve(grad_nodes.size());
    const double inv_bn = 1.0 / static_cast<double>(bn);
    double sq_norm = 0.0;
    for (NodeId id : grad_nodes) {
      const ArrayValue& gv = g.value(id);
      std::vector<double> data(gv.data(), gv.data() + gv.size());
      for (double& x : data) {
        x *= inv_bn;
        sq_norm += x * x;
      }
      grads.push_back(ArrayValue::from(gv.shape(), std::move(data)));
    }
    if (config.grad_clip_norm > 0.0 && std::isfinite(sq_norm)) {
      const double norm = std::sqrt(sq_norm);
      if (norm > config.grad_clip_norm) {
        const double scale = config.grad_clip_norm / norm;
        for (ArrayValue& a : grads) {
          std::vector<double> data(a.data(), a.data() + a.size());
          for (double& x : data) x *= scale;
          a = ArrayValue::from(a.shape(), std::move(data));
        }
      }
    }
    // pow(1, s) is exactly 1, so the default schedule leaves lr untouched.
    const double lr = config.learning_rate *
                      std::pow(config.lr_decay, static_cast<double>(state.step));
    if (!adam_step(params, grads, state.adam, lr, 0.9, 0.999, 1e-8, &diag)) {
      ++result.rejected_steps;
    }
    ++state.step;
    ++result.steps_run;

    const bool last = s == total - 1;
    if (state.step % config.val_interval == 0 || last) {
      HistoryRow row;
      row.step = state.step;
      row.loss_proxy = loss * inv_bn;
      row.val_nll = validation_nll(state.stack, splits.val, config,
                                   mix_seed(config.seed, kStreamVal,
                                            static_cast<uint64_t>(state.step)));
      row.transport_cost = splits.val.rows() > 0
                               ? transport_cost(state.stack, splits.val)
                               : std::numeric_limits<double>::quiet_NaN();
      row.kl_diag = pushforward_gaussian_kl(state.stack, splits.val);
      row.cg_iters_mean = res.cg_iters_mean;
      result.history.push_back(row);
      if (std::isfinite(config.target_val_nll) && row.val_nll <= config.target_val_nll) {
        result.reached_target = true;
        break;
      }
    }
    if (!checkpoint_path.empty() && config.checkpoint_interval > 0 &&
        state.step % config.checkpoint_interval == 0) {
      CheckpointData ck = pack_checkpoint(config, state);
      save_checkpoint(checkpoint_path, ck);
    }
  }
  if (!checkpoint_path.empty()) {
    CheckpointData ck = pack_checkpoint(config, state);
    save_checkpoint(checkpoint_path, ck);
  }
  return result;
}

CheckpointData pack_checkpoint(const TrainConfig& config, TrainState& state) {
  CheckpointData data;
  data.version = 1;
  data.config_text = train_config_to_config(config).serialize();
  data.step = static_cast<uint64_t>(state.step);
  data.rng_state = config.seed;
  std::vector<NamedParam> params = stack_named_params(state.stack);
  if (state.adam.m.size() != params.size()) {
    throw ContractError("pack_checkpoint: optimizer state does not match the stack");
  }
  for (const NamedParam& p : params) data.arrays.emplace_back(p.name, *p.array);
  for (size_t i = 0; i < params.size(); ++i) {
    data.arrays.emplace_back(
        "adam.m." + params[i].name,
        ArrayValue::from({static_cast<long>(state.adam.m[i].size())}, state.adam.m[i]));
    data.arrays.emplace_back(
        "adam.v." + params[i].name,
        ArrayValue::from({static_cast<long>(state.adam.v[i].size())}, state.adam.v[i]));
  }
  data.arrays.emplace_back("adam.t", ArrayValue::scalar(static_cast<double>(state.adam.t)));
  return data;
}

LoadedCheckpoint unpack_checkpoint(const CheckpointData& data) {
  LoadedCheckpoint out;
  Config cfg = Config::from_text(data.config_text, "checkpoint config");
  cfg.require_known(train_config_keys());
  out.config = train_config_from_config(cfg);
  out.config.validate();

  out.state.stack = make_stack(out.config.dim, out.config.n_flows, out.config.layer_config(),
                               out.config.interleave_actnorm, 0);
  for (FlowLayer& l : out.state.stack.layers) l.params.actnorm_initialized = true;
  std::vector<NamedParam> params = stack_named_params(out.state.stack);
  for (NamedParam& p : params) {
    const ArrayValue* stored = data.find(p.name);
    if (!stored) {
      throw ParseError("checkpoint: missing array '" + p.name + "'");
    }
    if (!same_shape(*stored, *p.array)) {
      throw ParseError("checkpoint: array '" + p.name + "' has shape " +
                       shape_str(stored->shape()) + ", expected " +
                       shape_str(p.array->shape()));
    }
    *p.array = *stored;
  }
  out.state.adam.m.resize(params.size());
  out.state.adam.v.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    for (const char* half : {"m", "v"}) {
      const std::string name = std::string("adam.") + half + "." + params[i].name;
      const ArrayValue* stored = data.find(name);
      if (!stored) {
        throw ParseError("checkpoint: missing array '" + name + "'");
      }
      if (stored->size() != params[i].array->size()) {
        throw ParseError("checkpoint: array '" + name + "' has wrong length");
      }
      std::vector<double>& dst = half[0] == 'm' ? out.state.adam.m[i] : out.state.adam.v[i];
      dst.assign(stored->data(), stored->data() + stored->size());
    }
  }
  const ArrayValue* t = data.find("adam.t");
  if (!t) {
    throw ParseError("checkpoint: missing array 'adam.t'");
  }
  out.state.adam.t = static_cast<long>(t->at(0));
  out.state.step = static_cast<long>(data.step);
  return out;
}

}  // namespace cpflow
