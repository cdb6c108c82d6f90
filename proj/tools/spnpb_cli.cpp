// spnpb: data collection, training, PB analysis, online adaptation and
// controlled-task runs, with CSV output for every series.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <future>
#include <limits>
#include <memory>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "spnpb/csv.hpp"
#include "spnpb/harness.hpp"
#include "spnpb/serialize.hpp"

using namespace spnpb;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitAcceptance = 4;

struct Common {
  std::uint64_t seed = 1;
  std::string out = "out";
};

/// Flat key = value files: every key belongs to the subcommand being run.
class SubcommandConfig : public CLI::ConfigINI {
 public:
  explicit SubcommandConfig(const CLI::App* app) : app_(app) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::vector<CLI::ConfigItem> items = CLI::ConfigINI::from_config(input);
    const auto subs = app_->get_subcommands();
    if (!subs.empty())
      for (auto& item : items)
        if (item.parents.empty()) item.parents = {subs.front()->get_name()};
    return items;
  }

 private:
  const CLI::App* app_;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->fallthrough();
  cmd->add_option("--seed", c.seed, "Base seed")->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

fs::path prepare_out(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

/// Runs f(0..n-1) concurrently and returns results in index order.
template <class F>
auto run_batch(int n, F f) {
  using R = decltype(f(0));
  std::vector<std::future<R>> jobs;
  for (int i = 0; i < n; ++i) jobs.push_back(std::async(std::launch::async, f, i));
  std::vector<R> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

std::vector<sim::SimConfig> make_grid(const std::vector<double>& alphas, const std::vector<double>& betas) {
  std::vector<sim::SimConfig> grid;
  for (double a : alphas)
    for (double b : betas) grid.push_back(sim::SimConfig{a, b, 0, 0.2});
  return grid;
}

// ---------------------------------------------------------------------------

struct CollectArgs {
  Common common;
  std::vector<double> alphas{0.4, 0.5, 0.6};
  std::vector<double> betas{0.1, 1.0};
  int steps = 200;
  int trials_per_config = 3;
};

int run_collect(const CollectArgs& a) {
  const auto trials = sim::collect_trials(make_grid(a.alphas, a.betas), a.steps, a.trials_per_config, a.common.seed);
  const fs::path out = prepare_out(a.common.out);
  save_dataset(out / "dataset.csv", trials);
  std::printf("wrote %zu trials to %s\n", trials.size(), (out / "dataset.csv").c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string dataset;
  int epochs = 1500;
  double weight_lr = 3e-3;
  double pb_lr = 3e-2;
  double final_lr_fraction = 0.01;
  double clip_norm = 10.0;
};

int run_train(const TrainArgs& a) {
  const auto trials = load_dataset(a.dataset);
  TrainConfig cfg = harness::study_train_config(a.common.seed);
  cfg.epochs = a.epochs;
  cfg.weight_learning_rate = a.weight_lr;
  cfg.pb_learning_rate = a.pb_lr;
  cfg.final_lr_fraction = a.final_lr_fraction;
  cfg.clip_norm = a.clip_norm;
  const fs::path out = prepare_out(a.common.out);
  CsvWriter log(out / "training_loss.csv", "training_loss", 1, {"epoch", "loss", "lr_scale"});
  const ModelParams model = train(trials, cfg, [&](const EpochReport& r) {
    log.row({static_cast<double>(r.epoch), r.loss, r.lr_scale});
    if (r.epoch % 100 == 0 || r.epoch == cfg.epochs) std::printf("epoch %d loss %.6g\n", r.epoch, r.loss);
  });
  save_model(out / "model.txt", model);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ModelArgs {
  Common common;
  std::string model;
};

int run_analyze_pb(const ModelArgs& a) {
  const ModelParams model = load_model(a.model);
  const harness::PbStudy s = harness::study_pb(model);
  const fs::path out = prepare_out(a.common.out);
  CsvWriter pts(out / "pb_pca.csv", "pb_pca", 1, {"trial", "alpha", "beta", "pc1", "pc2"});
  for (std::size_t k = 0; k < model.pb_table.size(); ++k) {
    double alpha = std::nan(""), beta = std::nan("");
    analysis::parse_env_label(model.pb_labels[k], alpha, beta);
    pts.row({static_cast<double>(k), alpha, beta, s.pca.projected[k].x(), s.pca.projected[k].y()});
  }
  CsvWriter sum(out / "pb_summary.csv", "pb_summary", 1,
                {"explained_pc1", "explained_pc2", "beta_margin", "intra_distance", "inter_distance", "alpha_monotone"});
  sum.row({s.pca.explained[0], s.pca.explained[1], s.beta_margin, s.distances.intra, s.distances.inter,
           s.alpha_monotone ? 1.0 : 0.0});
  std::printf("beta margin %.6g, intra %.6g, inter %.6g\n", s.beta_margin, s.distances.intra, s.distances.inter);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AdaptArgs {
  Common common;
  std::string model;
  double alpha = 0.4;
  double beta = 0.1;
  int ticks = 200;
  int seeds = 10;
  int switch_tick = -1;
  double switch_alpha = 0.6;
  double switch_beta = 1.0;
  double learning_rate = AdaptConfig{}.learning_rate;
  double momentum = AdaptConfig{}.momentum;
};

int run_adapt(const AdaptArgs& a) {
  const ModelParams model = load_model(a.model);
  AdaptConfig cfg;
  cfg.learning_rate = a.learning_rate;
  cfg.momentum = a.momentum;
  cfg.validate();
  if (a.ticks < 0 || a.seeds < 1) throw ArgumentError("adapt: ticks must be >= 0 and seeds >= 1");
  std::optional<harness::EnvSwitch> change;
  if (a.switch_tick >= 0) change = harness::EnvSwitch{a.switch_tick, a.switch_alpha, a.switch_beta};
  const sim::SimConfig env{a.alpha, a.beta};
  env.validate();
  if (change) sim::SimConfig{change->alpha, change->beta}.validate();

  const auto episodes = run_batch(a.seeds, [&](int i) {
    return harness::run_adaptation_episode(model, env, a.ticks, a.common.seed + static_cast<std::uint64_t>(i), cfg, change);
  });

  const fs::path out = prepare_out(a.common.out);
  const auto pb_dim = model.config.pb_dim;
  std::vector<std::string> cols{"tick"};
  for (int j = 0; j < pb_dim; ++j) cols.push_back("p" + std::to_string(j));
  cols.push_back("loss");
  for (int i = 0; i < a.seeds; ++i) {
    CsvWriter w(out / ("adapt_seed" + std::to_string(i) + ".csv"), "adapt_trajectory", 1, cols);
    for (const auto& r : episodes[static_cast<std::size_t>(i)].rows) {
      std::vector<double> row{static_cast<double>(r.tick)};
      for (int j = 0; j < pb_dim; ++j) row.push_back(r.p[j]);
      row.push_back(r.loss);
      w.row(row);
    }
  }

  // Trained PB vectors for reference, with the label of each run's nearest one.
  std::vector<std::string> ref_cols{"trial", "alpha", "beta"};
  for (int j = 0; j < pb_dim; ++j) ref_cols.push_back("p" + std::to_string(j));
  CsvWriter ref(out / "adapt_trained_pb.csv", "trained_pb", 1, ref_cols);
  for (std::size_t k = 0; k < model.pb_table.size(); ++k) {
    double al = std::nan(""), be = std::nan("");
    analysis::parse_env_label(model.pb_labels[k], al, be);
    std::vector<double> row{static_cast<double>(k), al, be};
    for (int j = 0; j < pb_dim; ++j) row.push_back(model.pb_table[k][j]);
    ref.row(row);
  }
  CsvWriter fin(out / "adapt_summary.csv", "adapt_summary", 1, {"seed", "nearest_trial", "nearest_alpha", "nearest_beta"});
  for (int i = 0; i < a.seeds; ++i) {
    const Vector& p = episodes[static_cast<std::size_t>(i)].final_p;
    std::size_t best = 0;
    for (std::size_t k = 1; k < model.pb_table.size(); ++k)
      if ((model.pb_table[k] - p).norm() < (model.pb_table[best] - p).norm()) best = k;
    double al = std::nan(""), be = std::nan("");
    analysis::parse_env_label(model.pb_labels[best], al, be);
    fin.row({static_cast<double>(a.common.seed + static_cast<std::uint64_t>(i)), static_cast<double>(best), al, be});
    std::printf("seed %llu: nearest %s\n", static_cast<unsigned long long>(a.common.seed + static_cast<std::uint64_t>(i)),
                model.pb_labels[best].c_str());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ControlArgs {
  Common common;
  std::string model;
  double alpha = 0.5;
  double beta = 1.0;
  double c_variance = 0.0;
  double c_orig = 0.0;
  bool per_state = false;
  int horizon = 10;
  int batch = 10;
  int epochs = 3;
  double gamma_max = 3.0;
  int ticks = 40;
  int seeds = 10;
  bool live_pb = false;
  double ramp_seconds = 2.0;
  double goal_trans = 3.0;
  double start_trans = -1.0;
};

int run_control(const ControlArgs& a) {
  const ModelParams model = load_model(a.model);
  ControlConfig cfg;
  cfg.horizon = a.horizon;
  cfg.batch = a.batch;
  cfg.epochs = a.epochs;
  cfg.gamma_max = a.gamma_max;
  cfg.c_variance = a.c_variance;
  cfg.c_orig = a.c_orig;
  cfg.scaling = a.per_state ? VarianceScaling::PerState : VarianceScaling::Absolute;
  cfg.validate();
  const sim::SimConfig env{a.alpha, a.beta};
  env.validate();
  if (a.ticks < 1 || a.seeds < 1) throw ArgumentError("control: ticks and seeds must be >= 1");
  harness::TargetProfile profile;
  profile.initial_state = Vector{{a.start_trans, 0.0}};
  profile.goal = Vector{{a.goal_trans, 0.0}};
  profile.ramp_seconds = a.ramp_seconds;
  harness::ControlEpisodeOptions opt;
  opt.ticks = a.ticks;
  opt.live_pb = a.live_pb;
  const Vector pb = a.live_pb ? Vector::Zero(model.config.pb_dim) : harness::pb_for_label(model, env.label());

  const auto episodes = run_batch(a.seeds, [&](int i) {
    return harness::run_control_episode(model, env, cfg, profile, pb, a.common.seed + static_cast<std::uint64_t>(i), opt);
  });

  const fs::path out = prepare_out(a.common.out);
  const std::vector<std::string> cols{"tick", "time", "target_trans", "target_rot", "command_trans", "command_rot",
                                      "measured_trans", "measured_rot", "sigma_trans", "sigma_rot", "loss", "initial_loss"};
  for (int i = 0; i < a.seeds; ++i) {
    CsvWriter w(out / ("control_seed" + std::to_string(i) + ".csv"), "control_episode", 1, cols);
    for (const auto& r : episodes[static_cast<std::size_t>(i)].rows)
      w.row({static_cast<double>(r.tick), r.tick * env.tick_period, r.target[0], r.target[1], r.command[0], r.command[1],
             r.measured[0], r.measured[1], r.sigma[0], r.sigma[1], r.loss, r.initial_loss});
  }
  CsvWriter mean(out / "control_mean.csv", "control_mean", 1,
                 {"tick", "time", "target_trans", "mean_measured_trans", "mean_command_trans", "mean_sigma_trans"});
  for (int t = 0; t < a.ticks; ++t) {
    double w = 0.0, u = 0.0, s = 0.0;
    for (const auto& ep : episodes) {
      w += ep.rows[static_cast<std::size_t>(t)].measured[0];
      u += ep.rows[static_cast<std::size_t>(t)].command[0];
      s += ep.rows[static_cast<std::size_t>(t)].sigma[0];
    }
    const double n = static_cast<double>(a.seeds);
    mean.row({static_cast<double>(t), t * env.tick_period, episodes[0].rows[static_cast<std::size_t>(t)].target[0],
              w / n, u / n, s / n});
  }
  CsvWriter sum(out / "control_summary.csv", "control_summary", 1,
                {"seed", "mean_sigma_trans_early", "mean_sigma_trans", "tracking_rmse", "controller_errors", "monotone"});
  double early = 0.0;
  for (int i = 0; i < a.seeds; ++i) {
    const auto& s = episodes[static_cast<std::size_t>(i)].summary;
    sum.row({static_cast<double>(a.common.seed + static_cast<std::uint64_t>(i)), s.mean_sigma_trans_early,
             s.mean_sigma_trans, s.tracking_rmse, static_cast<double>(s.controller_errors), s.monotone ? 1.0 : 0.0});
    early += s.mean_sigma_trans_early / a.seeds;
  }
  std::printf("C_variance %g: mean sigma_trans over first 4 s = %.6g (%d seeds)\n", a.c_variance, early, a.seeds);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  Common common;
  std::string model;
  int seeds = 10;
};

int run_evaluate(const EvaluateArgs& a) {
  const ModelParams model = load_model(a.model);
  if (a.seeds < 1) throw ArgumentError("evaluate: seeds must be >= 1");
  const fs::path out = prepare_out(a.common.out);
  CsvWriter csv(out / "evaluate.csv", "evaluate", 1, {"check", "value", "lower", "upper", "pass"});
  bool all = true;
  int check = 0;
  auto record = [&](const char* name, double value, double lo, double hi, bool strict_lo = false) {
    const bool pass = (strict_lo ? value > lo : value >= lo) && value <= hi;
    all = all && pass;
    csv.row({static_cast<double>(++check), value, lo, hi, pass ? 1.0 : 0.0});
    std::printf("%s %d %s = %.6g\n", pass ? "PASS" : "FAIL", check, name, value);
  };
  const double inf = std::numeric_limits<double>::infinity();

  const auto h = harness::study_heteroscedasticity(model, a.common.seed);
  record("speed_sigma_ratio", h.speed_ratio, 2.0, inf);
  record("beta_sigma_ratio", h.beta_ratio, 5.0, 20.0);

  const auto pb = harness::study_pb(model);
  record("beta_separation_margin", pb.beta_margin, 0.0, inf, true);
  record("inter_minus_intra_distance", pb.distances.inter - pb.distances.intra, 0.0, inf, true);

  for (const sim::SimConfig env : {sim::SimConfig{0.4, 0.1}, sim::SimConfig{0.6, 1.0}}) {
    const auto hits = run_batch(a.seeds, [&](int i) {
      const auto ep = harness::run_adaptation_episode(model, env, 200, a.common.seed + 1000 + static_cast<std::uint64_t>(i));
      std::size_t best = 0;
      for (std::size_t k = 1; k < model.pb_table.size(); ++k)
        if ((model.pb_table[k] - ep.final_p).norm() < (model.pb_table[best] - ep.final_p).norm()) best = k;
      return model.pb_labels[best] == env.label() ? 1 : 0;
    });
    int n = 0;
    for (int x : hits) n += x;
    record(env.beta < 0.5 ? "adapt_hits_quiet_env" : "adapt_hits_noisy_env", n, 0.8 * a.seeds, a.seeds);
  }

  const sim::SimConfig env{0.5, 1.0};
  const Vector p = harness::pb_for_label(model, env.label());
  double sigma[2] = {0.0, 0.0};
  int not_monotone = 0;
  for (int c = 0; c < 2; ++c) {
    ControlConfig cfg;
    cfg.c_variance = c == 0 ? 0.0 : 30.0;
    const auto eps = run_batch(a.seeds, [&](int i) {
      return harness::run_control_episode(model, env, cfg, {}, p, a.common.seed + 100 + static_cast<std::uint64_t>(i));
    });
    for (const auto& ep : eps) {
      sigma[c] += ep.summary.mean_sigma_trans_early / a.seeds;
      if (!ep.summary.monotone || ep.summary.controller_errors) ++not_monotone;
    }
  }
  record("non_monotone_episodes", not_monotone, 0.0, 0.0);
  record("sigma_early_c0_minus_c30", sigma[0] - sigma[1], 0.0, inf, true);
  record("sigma_early_c0", sigma[0], 0.5, 2.0);

  const fs::path tmp = out / "evaluate_roundtrip_model.txt";
  save_model(tmp, model);
  const ModelParams back = load_model(tmp);
  fs::remove(tmp);
  record("model_roundtrip_max_abs_diff", (back.flat_weights() - model.flat_weights()).cwiseAbs().maxCoeff(), 0.0, 0.0);
  return all ? kExitOk : kExitAcceptance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic predictive network with parametric bias: experiments"};
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "Flat key = value file; keys are option names without dashes");
  app.config_formatter(std::make_shared<SubcommandConfig>(&app));

  CollectArgs collect;
  auto* c = app.add_subcommand("collect", "Simulate random-walk trials over an (alpha, beta) grid");
  add_common(c, collect.common);
  c->add_option("--alphas", collect.alphas, "Feedback rates")->delimiter(',')->capture_default_str();
  c->add_option("--betas", collect.betas, "Noise magnitudes")->delimiter(',')->capture_default_str();
  c->add_option("--steps", collect.steps, "Ticks per trial")->capture_default_str();
  c->add_option("--trials_per_config", collect.trials_per_config, "Trials per grid point")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train weights and per-trial PB vectors");
  add_common(t, tr.common);
  t->add_option("--dataset", tr.dataset, "Dataset CSV from collect")->required()->check(CLI::ExistingFile);
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--weight_lr", tr.weight_lr)->capture_default_str();
  t->add_option("--pb_lr", tr.pb_lr)->capture_default_str();
  t->add_option("--final_lr_fraction", tr.final_lr_fraction)->capture_default_str();
  t->add_option("--clip_norm", tr.clip_norm)->capture_default_str();

  ModelArgs an;
  auto* p = app.add_subcommand("analyze-pb", "PCA of the trained PB vectors");
  add_common(p, an.common);
  p->add_option("--model", an.model)->required()->check(CLI::ExistingFile);

  AdaptArgs ad;
  auto* d = app.add_subcommand("adapt", "Online PB adaptation from p = 0 under random-walk driving");
  add_common(d, ad.common);
  d->add_option("--model", ad.model)->required()->check(CLI::ExistingFile);
  d->add_option("--alpha", ad.alpha)->capture_default_str();
  d->add_option("--beta", ad.beta)->capture_default_str();
  d->add_option("--ticks", ad.ticks)->capture_default_str();
  d->add_option("--seeds", ad.seeds, "Number of runs; run i uses seed + i")->capture_default_str();
  d->add_option("--switch_tick", ad.switch_tick, "Change environment at this tick (-1: never)")->capture_default_str();
  d->add_option("--switch_alpha", ad.switch_alpha)->capture_default_str();
  d->add_option("--switch_beta", ad.switch_beta)->capture_default_str();
  d->add_option("--learning_rate", ad.learning_rate)->capture_default_str();
  d->add_option("--momentum", ad.momentum)->capture_default_str();

  ControlArgs co;
  auto* k = app.add_subcommand("control", "Receding-horizon control toward a ramped target");
  add_common(k, co.common);
  k->add_option("--model", co.model)->required()->check(CLI::ExistingFile);
  k->add_option("--alpha", co.alpha)->capture_default_str();
  k->add_option("--beta", co.beta)->capture_default_str();
  k->add_option("--c_variance", co.c_variance)->capture_default_str();
  k->add_option("--c_orig", co.c_orig)->capture_default_str();
  k->add_flag("--per_state", co.per_state, "Scale predicted variance by the predicted state");
  k->add_option("--horizon", co.horizon)->capture_default_str();
  k->add_option("--batch", co.batch, "Step sizes tried per epoch")->capture_default_str();
  k->add_option("--epochs", co.epochs)->capture_default_str();
  k->add_option("--gamma_max", co.gamma_max)->capture_default_str();
  k->add_option("--ticks", co.ticks)->capture_default_str();
  k->add_option("--seeds", co.seeds, "Number of runs; run i uses seed + i")->capture_default_str();
  k->add_flag("--live_pb", co.live_pb, "Adapt p online from zero instead of the trained PB");
  k->add_option("--ramp_seconds", co.ramp_seconds)->capture_default_str();
  k->add_option("--start_trans", co.start_trans, "Initial translational velocity")->capture_default_str();
  k->add_option("--goal_trans", co.goal_trans)->capture_default_str();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Check a trained model against the study thresholds");
  add_common(e, ev.common);
  e->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  e->add_option("--seeds", ev.seeds)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (c->parsed()) return run_collect(collect);
    if (t->parsed()) return run_train(tr);
    if (p->parsed()) return run_analyze_pb(an);
    if (d->parsed()) return run_adapt(ad);
    if (k->parsed()) return run_control(co);
    if (e->parsed()) return run_evaluate(ev);
  } catch (const TrainingDiverged& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitDiverged;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitValidation;
  } catch (const FormatError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitValidation;
  } catch (const PreconditionError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}
