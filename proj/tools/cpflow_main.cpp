// Command-line front end: train, evaluate, sample, invert, density-grid, and
// ot-experiment over one flat key=value configuration surface. Exit codes:
// 0 success, 1 usage/config/parse problems, 2 numerical failures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpflow/checkpoint.hpp"
#include "cpflow/config.hpp"
#include "cpflow/csv.hpp"
#include "cpflow/datasets.hpp"
#include "cpflow/errors.hpp"
#include "cpflow/flow.hpp"
#include "cpflow/icnn.hpp"
#include "cpflow/rng.hpp"
#include "cpflow/training.hpp"

namespace {

using namespace cpflow;

// Every key the config surface accepts; anything else is rejected by name.
std::vector<std::string> all_config_keys() {
  std::vector<std::string> keys = train_config_keys();
  for (const char* k : {"data", "data_n", "data_dim", "train_frac", "val_frac",
                        "csv_has_header", "out", "checkpoint", "grid_bounds", "grid_res",
                        "n"}) {
    keys.push_back(k);
  }
  return keys;
}

void merge_into(Config& base, const Config& add) {
  for (const auto& kv : add.entries()) base.set(kv.first, kv.second);
}

// Flag values collected per subcommand; only flags the user actually passed
// are layered onto the config file.
struct FlagOpts {
  std::string config_path, data, out, checkpoint, grid_bounds;
  uint64_t seed = 0;
  long epochs = 0, batch_size = 0, grid_res = 0, n = 0, data_n = 0, data_dim = 0;
  double lr = 0, cg_atol = 0;
  std::vector<std::string> sets;

  CLI::Option* o_data = nullptr;
  CLI::Option* o_out = nullptr;
  CLI::Option* o_checkpoint = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_epochs = nullptr;
  CLI::Option* o_batch = nullptr;
  CLI::Option* o_lr = nullptr;
  CLI::Option* o_cg_atol = nullptr;
  CLI::Option* o_grid_bounds = nullptr;
  CLI::Option* o_grid_res = nullptr;
  CLI::Option* o_n = nullptr;
  CLI::Option* o_data_n = nullptr;
  CLI::Option* o_data_dim = nullptr;

  // File first, then --set pairs, then named flags, so flags win.
  Config explicit_config() const {
    Config cfg;
    if (!config_path.empty()) merge_into(cfg, Config::from_file(config_path));
    for (const std::string& kv : sets) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ParseError("--set expects key=value, got '" + kv + "'");
      }
      Config one = Config::from_text(kv, "--set");
      merge_into(cfg, one);
    }
    if (o_data->count()) cfg.set("data", data);
    if (o_out->count()) cfg.set("out", out);
    if (o_checkpoint->count()) cfg.set("checkpoint", checkpoint);
    if (o_seed->count()) cfg.set_u64("seed", seed);
    if (o_epochs->count()) cfg.set_long("epochs", epochs);
    if (o_batch->count()) cfg.set_long("batch_size", batch_size);
    if (o_lr->count()) cfg.set_double("learning_rate", lr);
    if (o_cg_atol->count()) cfg.set_double("cg_atol", cg_atol);
    if (o_grid_bounds->count()) cfg.set("grid_bounds", grid_bounds);
    if (o_grid_res->count()) cfg.set_long("grid_res", grid_res);
    if (o_n->count()) cfg.set_long("n", n);
    if (o_data_n->count()) cfg.set_long("data_n", data_n);
    if (o_data_dim->count()) cfg.set_long("data_dim", data_dim);
    cfg.require_known(all_config_keys());
    return cfg;
  }
};

void add_common_flags(CLI::App* cmd, FlagOpts& f) {
  cmd->add_option("--config", f.config_path, "key = value config file; flags override it");
  f.o_data = cmd->add_option("--data", f.data, "toy:NAME, csv:PATH, or gaussian_ot");
  f.o_out = cmd->add_option("--out", f.out, "output directory");
  f.o_checkpoint = cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");
  f.o_seed = cmd->add_option("--seed", f.seed, "run seed");
  f.o_epochs = cmd->add_option("--epochs", f.epochs, "training epochs");
  f.o_batch = cmd->add_option("--batch-size", f.batch_size, "minibatch size");
  f.o_lr = cmd->add_option("--lr", f.lr, "Adam learning rate");
  f.o_cg_atol = cmd->add_option("--cg-atol", f.cg_atol, "CG residual tolerance");
  f.o_grid_bounds =
      cmd->add_option("--grid-bounds", f.grid_bounds, "x1min,x1max,x2min,x2max");
  f.o_grid_res = cmd->add_option("--grid-res", f.grid_res, "grid points per axis");
  f.o_n = cmd->add_option("--n", f.n, "sample count");
  f.o_data_n = cmd->add_option("--data-n", f.data_n, "generated dataset size");
  f.o_data_dim = cmd->add_option("--data-dim", f.data_dim, "generated dataset dimension");
  cmd->add_option("--set", f.sets, "extra key=value overrides")->take_all();
}

DatasetSpec dataset_spec_from(const Config& cfg) {
  DatasetSpec spec;
  spec.source = cfg.get_string("data", spec.source);
  spec.n = cfg.get_long("data_n", spec.n);
  spec.dim = cfg.get_long("data_dim", spec.dim);
  spec.train_frac = cfg.get_double("train_frac", spec.train_frac);
  spec.val_frac = cfg.get_double("val_frac", spec.val_frac);
  spec.csv_has_header = cfg.get_bool("csv_has_header", spec.csv_has_header);
  spec.seed = cfg.get_u64("seed", spec.seed);
  return spec;
}

std::string require_out_dir(const Config& cfg) {
  std::string out = cfg.get_string("out", "");
  if (out.empty()) {
    throw ParseError("missing output directory (--out or out = ...)");
  }
  std::filesystem::create_directories(out);
  return out;
}

std::vector<std::string> coord_header(long d) {
  std::vector<std::string> h;
  for (long j = 1; j <= d; ++j) h.push_back("x" + std::to_string(j));
  return h;
}

void print_kv(const std::string& key, const std::string& value) {
  std::cout << key << " = " << value << "\n";
}
void print_kv(const std::string& key, double value) { print_kv(key, format_double(value)); }
void print_kv(const std::string& key, long value) { print_kv(key, std::to_string(value)); }

void log_history(const std::vector<HistoryRow>& rows) {
  for (const HistoryRow& r : rows) {
    std::fprintf(stderr,
                 "[step %ld] loss_proxy=%.6g val_nll=%.6g transport=%.6g kl=%.6g "
                 "cg_iters_mean=%.3g\n",
                 r.step, r.loss_proxy, r.val_nll, r.transport_cost, r.kl_diag,
                 r.cg_iters_mean);
  }
}

// Shared by train and ot-experiment. Returns the trained state plus the
// history of this call.
struct RunOutcome {
  TrainConfig config;
  TrainState state;
  TrainResult result;
  Dataset dataset;
  std::string checkpoint_path;
};

RunOutcome run_training(const Config& defaults, const Config& explicit_cfg) {
  Config merged = defaults;
  merge_into(merged, explicit_cfg);

  Dataset dataset = build_dataset(dataset_spec_from(merged));
  std::string out = require_out_dir(merged);
  std::string ck = merged.get_string("checkpoint", out + "/checkpoint.bin");

  RunOutcome run;
  run.dataset = std::move(dataset);
  run.checkpoint_path = ck;
  const bool resume =
      merged.has("checkpoint") && std::filesystem::exists(std::filesystem::path(ck));
  if (resume) {
    LoadedCheckpoint lc = unpack_checkpoint(load_checkpoint(ck));
    // Explicit keys (file + flags) override the stored run settings; defaults
    // do not, or they would silently reset the resumed configuration.
    Config cfg = train_config_to_config(lc.config);
    for (const auto& kv : explicit_cfg.entries()) {
      for (const std::string& k : train_config_keys()) {
        if (kv.first == k) {
          cfg.set(kv.first, kv.second);
          break;
        }
      }
    }
    run.config = train_config_from_config(cfg);
    if (run.config.dim != run.dataset.dim) {
      throw ParseError("checkpoint dim " + std::to_string(run.config.dim) +
                       " does not match data dim " + std::to_string(run.dataset.dim));
    }
    run.state = std::move(lc.state);
  } else {
    run.config = train_config_from_config(merged);
    if (explicit_cfg.has("dim") && run.config.dim != run.dataset.dim) {
      throw ParseError("configured dim " + std::to_string(run.config.dim) +
                       " does not match data dim " + std::to_string(run.dataset.dim));
    }
    run.config.dim = run.dataset.dim;
    run.state = init_train_state(run.config, run.dataset.splits.train);
  }

  run.result = train(run.state, run.config, run.dataset.splits, ck);
  log_history(run.result.history);
  write_history_csv(out + "/history.csv", run.result.history);
  return run;
}

int cmd_train(const Config& explicit_cfg) {
  Config defaults = train_config_to_config(TrainConfig{});
  RunOutcome run = run_training(defaults, explicit_cfg);
  print_kv("final_step", run.state.step);
  print_kv("steps_run", run.result.steps_run);
  print_kv("checkpoint", run.checkpoint_path);
  if (!run.result.history.empty()) {
    print_kv("val_nll", run.result.history.back().val_nll);
    print_kv("transport_cost", run.result.history.back().transport_cost);
  }
  print_kv("cg_nonconverged_steps", run.result.cg_nonconverged_steps);
  print_kv("rejected_steps", run.result.rejected_steps);
  return 0;
}

int cmd_ot_experiment(const Config& explicit_cfg) {
  TrainConfig tc;
  tc.dim = 8;
  tc.n_flows = 1;
  tc.depth = 5;
  tc.width = 64;
  // Zero-offset gaussian softplus throughout for the coupling experiment.
  tc.activation_first = {SoftplusBase::kGaussian, SoftplusVariant::kOffset, 1.0};
  tc.activation_rest = {SoftplusBase::kGaussian, SoftplusVariant::kOffset, 1.0};
  // Decaying schedule: fast early progress, then a low late-stage noise
  // floor so the diagnostic KL settles instead of bouncing on minibatch noise.
  tc.learning_rate = 0.03;
  tc.lr_decay = 0.998;
  tc.batch_size = 128;
  tc.epochs = 2;
  tc.val_interval = 20;
  Config defaults = train_config_to_config(tc);
  defaults.set("data", "gaussian_ot");
  defaults.set_long("data_n", 50000);
  defaults.set_long("data_dim", 8);

  RunOutcome run = run_training(defaults, explicit_cfg);
  if (!run.dataset.has_gaussian_reference) {
    throw ParseError("ot-experiment needs the gaussian_ot data source");
  }
  const double w2sq = gaussian_w2_sq_to_standard(run.dataset.ref_mean, run.dataset.ref_cov,
                                                 run.dataset.dim);
  Config merged = defaults;
  merge_into(merged, explicit_cfg);
  std::string out = merged.get_string("out", ".");

  std::vector<double> flat;
  for (const HistoryRow& r : run.result.history) {
    flat.push_back(static_cast<double>(r.step));
    flat.push_back(r.kl_diag);
    flat.push_back(r.transport_cost);
    flat.push_back(w2sq);
  }
  write_csv(out + "/ot_curve.csv", {"step", "kl", "transport_cost", "w2sq_reference"},
            ArrayValue::from({static_cast<long>(run.result.history.size()), 4},
                             std::move(flat)));

  print_kv("w2sq_reference", w2sq);
  if (!run.result.history.empty()) {
    print_kv("final_kl", run.result.history.back().kl_diag);
    print_kv("final_transport_cost", run.result.history.back().transport_cost);
    print_kv("final_val_nll", run.result.history.back().val_nll);
  }
  print_kv("final_step", run.state.step);
  print_kv("ot_curve", out + "/ot_curve.csv");
  return 0;
}

LoadedCheckpoint load_required_checkpoint(const Config& cfg) {
  std::string ck = cfg.get_string("checkpoint", "");
  if (ck.empty()) {
    throw ParseError("missing checkpoint path (--checkpoint or checkpoint = ...)");
  }
  return unpack_checkpoint(load_checkpoint(ck));
}

int cmd_evaluate(const Config& explicit_cfg) {
  Config merged;
  merge_into(merged, explicit_cfg);
  LoadedCheckpoint lc = load_required_checkpoint(merged);
  DatasetSpec spec = dataset_spec_from(merged);
  spec.dim = lc.config.dim;  // gaussian_ot defaults to the model's dim
  Dataset dataset = build_dataset(spec);
  if (dataset.dim != lc.config.dim) {
    throw ParseError("data dim " + std::to_string(dataset.dim) +
                     " does not match checkpoint dim " + std::to_string(lc.config.dim));
  }
  const ArrayValue& test = dataset.splits.test;
  if (test.rows() == 0) {
    throw ParseError("evaluate: test split is empty");
  }
  double nll = validation_nll(lc.state.stack, test, lc.config,
                              mix_seed(lc.config.seed, 0xE7A1));
  print_kv("test_nll", nll);
  print_kv("transport_cost", transport_cost(lc.state.stack, test));
  print_kv("kl_diag", pushforward_gaussian_kl(lc.state.stack, test));
  print_kv("n_test", test.rows());
  if (dataset.has_gaussian_reference) {
    print_kv("w2sq_reference",
             gaussian_w2_sq_to_standard(dataset.ref_mean, dataset.ref_cov, dataset.dim));
    print_kv("kl_reference",
             gaussian_kl_to_standard(dataset.ref_mean, dataset.ref_cov, dataset.dim));
  }
  return 0;
}

int cmd_sample(const Config& explicit_cfg) {
  Config merged;
  merged.set_long("n", 16);
  merge_into(merged, explicit_cfg);
  LoadedCheckpoint lc = load_required_checkpoint(merged);
  const long n = merged.get_long("n", 16);
  if (n < 0) {
    throw ParseError("sample: n must be non-negative");
  }
  std::string out = require_out_dir(merged);
  ArrayValue rows = sample(lc.state.stack, n, merged.get_u64("seed", lc.config.seed));
  write_csv(out + "/samples.csv", coord_header(lc.config.dim), rows);
  print_kv("samples", out + "/samples.csv");
  print_kv("n", n);
  return 0;
}

int cmd_invert(const Config& explicit_cfg) {
  Config merged;
  merge_into(merged, explicit_cfg);
  LoadedCheckpoint lc = load_required_checkpoint(merged);
  std::string data = merged.get_string("data", "");
  if (data.rfind("csv:", 0) != 0) {
    throw ParseError("invert needs --data csv:PATH with the points to invert");
  }
  ArrayValue y = load_csv(data.substr(4), merged.get_bool("csv_has_header", false));
  if (y.cols() != lc.config.dim) {
    throw ParseError("invert: input dim " + std::to_string(y.cols()) +
                     " does not match checkpoint dim " + std::to_string(lc.config.dim));
  }
  std::string out = require_out_dir(merged);

  const long n = y.rows();
  const long d = y.cols();
  const double tol = 1e-3;
  std::vector<double> rows(static_cast<size_t>(n) * (d + 1));
  long failed = 0;
  double worst = 0.0;
  // Whole-batch solve first; rows that break the batched solve fall back to
  // per-row inversion so every row still reports an achieved residual.
  auto residual_inf = [&](const ArrayValue& x, long i) {
    ArrayValue fx = flow_forward(lc.state.stack, x);
    double r = 0.0;
    for (long j = 0; j < d; ++j) {
      r = std::max(r, std::abs(fx.data()[j] - y.data()[i * d + j]));
    }
    return r;
  };
  auto slice_row = [&](long i) {
    std::vector<double> v(y.data() + i * d, y.data() + (i + 1) * d);
    return ArrayValue::from({1, d}, std::move(v));
  };
  ArrayValue all;
  bool batch_ok = true;
  try {
    all = flow_inverse(lc.state.stack, y, 1e-6);
  } catch (const NumericalError&) {
    batch_ok = false;
  }
  for (long i = 0; i < n; ++i) {
    ArrayValue xi;
    double res = std::numeric_limits<double>::infinity();
    if (batch_ok) {
      std::vector<double> v(all.data() + i * d, all.data() + (i + 1) * d);
      xi = ArrayValue::from({1, d}, std::move(v));
      res = residual_inf(xi, i);
    } else {
      try {
        xi = flow_inverse(lc.state.stack, slice_row(i), 1e-6);
        res = residual_inf(xi, i);
      } catch (const NumericalError&) {
        xi = ArrayValue::full({1, d}, std::numeric_limits<double>::quiet_NaN());
      }
    }
    for (long j = 0; j < d; ++j) rows[static_cast<size_t>(i * (d + 1) + j)] = xi.at(j);
    rows[static_cast<size_t>(i * (d + 1) + d)] = res;
    worst = std::max(worst, res);
    if (!(res <= tol)) ++failed;
  }
  std::vector<std::string> header = coord_header(d);
  header.push_back("residual");
  write_csv(out + "/inverted.csv", header,
            ArrayValue::from({n, d + 1}, std::move(rows)));
  print_kv("inverted", out + "/inverted.csv");
  print_kv("n", n);
  print_kv("max_residual", worst);
  print_kv("failed_rows", failed);
  if (failed > 0) {
    std::fprintf(stderr, "invert: %ld of %ld rows above residual %g\n", failed, n, tol);
    return 2;
  }
  return 0;
}

int cmd_density_grid(const Config& explicit_cfg) {
  Config merged;
  merged.set("grid_bounds", "-4,4,-4,4");
  merged.set_long("grid_res", 100);
  merge_into(merged, explicit_cfg);
  LoadedCheckpoint lc = load_required_checkpoint(merged);
  if (lc.config.dim != 2) {
    throw ParseError("density-grid supports 2-d models only, checkpoint has dim " +
                     std::to_string(lc.config.dim));
  }
  std::string bounds_text = merged.get_string("grid_bounds", "");
  std::vector<double> bounds;
  {
    ArrayValue parsed = parse_csv_text(bounds_text, false, "grid_bounds");
    if (parsed.size() != 4) {
      throw ParseError("grid_bounds expects 4 comma-separated numbers, got '" +
                       bounds_text + "'");
    }
    bounds.assign(parsed.data(), parsed.data() + 4);
  }
  if (!(bounds[0] < bounds[1]) || !(bounds[2] < bounds[3])) {
    throw ParseError("grid_bounds must satisfy x1min < x1max and x2min < x2max");
  }
  const long res = merged.get_long("grid_res", 100);
  if (res < 2) {
    throw ParseError("grid_res must be at least 2");
  }
  std::string out = require_out_dir(merged);

  auto coord = [&](int axis, long i) {
    double a = bounds[axis * 2], b = bounds[axis * 2 + 1];
    return a + (b - a) * static_cast<double>(i) / static_cast<double>(res - 1);
  };

  // Row-major over (x2 descending, x1 ascending) so the PGM reads like a plot.
  const long total = res * res;
  std::vector<double> grid_rows(static_cast<size_t>(total) * 3);
  std::vector<double> logp(static_cast<size_t>(total));
  const long chunk = 4096;
  for (long begin = 0; begin < total; begin += chunk) {
    const long end = std::min(total, begin + chunk);
    std::vector<double> pts(static_cast<size_t>(end - begin) * 2);
    for (long k = begin; k < end; ++k) {
      const long row = k / res, col = k % res;
      pts[static_cast<size_t>(k - begin) * 2] = coord(0, col);
      pts[static_cast<size_t>(k - begin) * 2 + 1] = coord(1, res - 1 - row);
    }
    ArrayValue batch = ArrayValue::from({end - begin, 2}, std::move(pts));
    LogDensityResult r = log_density(lc.state.stack, batch, LogDetMode::kExact);
    for (long k = begin; k < end; ++k) {
      logp[static_cast<size_t>(k)] = r.logp[static_cast<size_t>(k - begin)];
      grid_rows[static_cast<size_t>(k) * 3] = batch.data()[(k - begin) * 2];
      grid_rows[static_cast<size_t>(k) * 3 + 1] = batch.data()[(k - begin) * 2 + 1];
      grid_rows[static_cast<size_t>(k) * 3 + 2] = logp[static_cast<size_t>(k)];
    }
  }
  write_csv(out + "/grid.csv", {"x1", "x2", "logp"},
            ArrayValue::from({total, 3}, std::move(grid_rows)));

  double max_logp = logp[0];
  for (double v : logp) max_logp = std::max(max_logp, v);
  std::string pgm = "P5\n" + std::to_string(res) + " " + std::to_string(res) + "\n255\n";
  for (long k = 0; k < total; ++k) {
    double v = std::exp(logp[static_cast<size_t>(k)] - max_logp);
    pgm.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
  }
  {
    std::ofstream f(out + "/density.pgm", std::ios::binary | std::ios::trunc);
    f.write(pgm.data(), static_cast<std::streamsize>(pgm.size()));
    if (!f) {
      throw ParseError(out + "/density.pgm: write failed");
    }
  }

  // Warped mesh: a coarse lattice and its forward image, for transport plots.
  {
    const long m = 21;
    std::vector<double> pts(static_cast<size_t>(m) * m * 2);
    for (long i = 0; i < m; ++i) {
      for (long j = 0; j < m; ++j) {
        double fx = static_cast<double>(j) / static_cast<double>(m - 1);
        double fy = static_cast<double>(i) / static_cast<double>(m - 1);
        pts[static_cast<size_t>(i * m + j) * 2] = bounds[0] + (bounds[1] - bounds[0]) * fx;
        pts[static_cast<size_t>(i * m + j) * 2 + 1] =
            bounds[2] + (bounds[3] - bounds[2]) * fy;
      }
    }
    ArrayValue mesh = ArrayValue::from({m * m, 2}, std::move(pts));
    ArrayValue warped = flow_forward(lc.state.stack, mesh);
    std::vector<double> rows(static_cast<size_t>(m) * m * 4);
    for (long k = 0; k < m * m; ++k) {
      rows[static_cast<size_t>(k) * 4] = mesh.data()[k * 2];
      rows[static_cast<size_t>(k) * 4 + 1] = mesh.data()[k * 2 + 1];
      rows[static_cast<size_t>(k) * 4 + 2] = warped.data()[k * 2];
      rows[static_cast<size_t>(k) * 4 + 3] = warped.data()[k * 2 + 1];
    }
    write_csv(out + "/mesh.csv", {"x1", "x2", "y1", "y2"},
              ArrayValue::from({m * m, 4}, std::move(rows)));
  }

  // For a single bare potential the Brenier surface itself is meaningful.
  if (lc.state.stack.layers.size() == 1 && !lc.state.stack.interleaved()) {
    std::vector<double> rows(static_cast<size_t>(total) * 3);
    for (long begin = 0; begin < total; begin += chunk) {
      const long end = std::min(total, begin + chunk);
      std::vector<double> pts(static_cast<size_t>(end - begin) * 2);
      for (long k = begin; k < end; ++k) {
        const long row = k / res, col = k % res;
        pts[static_cast<size_t>(k - begin) * 2] = coord(0, col);
        pts[static_cast<size_t>(k - begin) * 2 + 1] = coord(1, res - 1 - row);
      }
      ArrayValue batch = ArrayValue::from({end - begin, 2}, std::move(pts));
      ArrayValue val = potential(lc.state.stack.layers[0].config,
                                 lc.state.stack.layers[0].params, batch);
      for (long k = begin; k < end; ++k) {
        rows[static_cast<size_t>(k) * 3] = batch.data()[(k - begin) * 2];
        rows[static_cast<size_t>(k) * 3 + 1] = batch.data()[(k - begin) * 2 + 1];
        rows[static_cast<size_t>(k) * 3 + 2] = val.at(k - begin);
      }
    }
    write_csv(out + "/potential.csv", {"x1", "x2", "potential"},
              ArrayValue::from({total, 3}, std::move(rows)));
  }

  print_kv("grid", out + "/grid.csv");
  print_kv("pgm", out + "/density.pgm");
  print_kv("rows", total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"convex potential flows: gradient-map normalizing flows"};
  app.require_subcommand(1);

  FlagOpts f_train, f_eval, f_sample, f_invert, f_grid, f_ot;
  CLI::App* c_train = app.add_subcommand("train", "fit a flow by maximum likelihood");
  CLI::App* c_eval = app.add_subcommand("evaluate", "test metrics for a checkpoint");
  CLI::App* c_sample = app.add_subcommand("sample", "draw model samples to csv");
  CLI::App* c_invert = app.add_subcommand("invert", "invert the flow on csv points");
  CLI::App* c_grid = app.add_subcommand("density-grid", "2-d log-density grid and image");
  CLI::App* c_ot =
      app.add_subcommand("ot-experiment", "gaussian optimal-transport benchmark run");
  add_common_flags(c_train, f_train);
  add_common_flags(c_eval, f_eval);
  add_common_flags(c_sample, f_sample);
  add_common_flags(c_invert, f_invert);
  add_common_flags(c_grid, f_grid);
  add_common_flags(c_ot, f_ot);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(c_train)) return cmd_train(f_train.explicit_config());
    if (app.got_subcommand(c_eval)) return cmd_evaluate(f_eval.explicit_config());
    if (app.got_subcommand(c_sample)) return cmd_sample(f_sample.explicit_config());
    if (app.got_subcommand(c_invert)) return cmd_invert(f_invert.explicit_config());
    if (app.got_subcommand(c_grid)) return cmd_density_grid(f_grid.explicit_config());
    if (app.got_subcommand(c_ot)) return cmd_ot_experiment(f_ot.explicit_config());
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  }
  return 1;
}
