#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "foogd/toy.hpp"
#include "foogd/workbench.hpp"

namespace fs = std::filesystem;
using namespace foogd;

namespace {

ExperimentConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) return config_from_json_text("{}");
  return load_config(config_path);
}

void apply_overrides(ExperimentConfig& cfg, bool seed_set, std::uint64_t seed,
                     const std::string& out_dir, double lambda_m,
                     double lambda_a) {
  if (seed_set) {
    cfg.seed = seed;
    cfg.federation.seed = seed;
  }
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (lambda_m >= 0.0) cfg.federation.smd.lambda_m = lambda_m;
  if (lambda_a >= 0.0) cfg.federation.sag.lambda_a = lambda_a;
  if (const char* env = std::getenv("FOOGD_THREADS"))
    cfg.federation.threads = std::max(1, std::atoi(env));
}

// Small built-in gradient-integrity suite; returns failures.
int run_gradcheck();

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FOOGD desk-scale laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double lambda_m = -1.0, lambda_a = -1.0;
  std::vector<double> lambda_list = {0.0, 0.1, 0.5, 1.0};

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (JSON)");
    sub->add_option("--seed", seed, "seed override")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--lambda-m", lambda_m, "override lambda_m");
    sub->add_option("--lambda-a", lambda_a, "override lambda_a");
  };

  CLI::App* partition_cmd =
      app.add_subcommand("partition", "emit the non-IID partition summary");
  add_common(partition_cmd);

  CLI::App* train_cmd = app.add_subcommand("train", "run the experiment");
  add_common(train_cmd);

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "metrics from a saved checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")
      ->required();

  CLI::App* toy_cmd =
      app.add_subcommand("toy2d", "2-D lambda_m sweep on the toy target");
  add_common(toy_cmd);
  toy_cmd->add_option("--lambdas", lambda_list, "lambda_m values to sweep");

  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "run the finite-difference suites");

  CLI::App* export_cmd =
      app.add_subcommand("export", "plot data from a checkpoint");
  add_common(export_cmd);
  export_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*grad_cmd) return run_gradcheck();

    ExperimentConfig cfg = load_or_default(config_path);
    apply_overrides(cfg, seed_set, seed, out_dir, lambda_m, lambda_a);

    if (*partition_cmd) {
      RngStream data_stream(cfg.seed, "dataset");
      DatasetBundle data = generate_dataset(cfg.dataset, data_stream);
      RngStream part_stream(cfg.seed, "partition");
      Partition part = dirichlet_partition(
          data.train_y, cfg.federation.clients, cfg.partition_alpha,
          part_stream);
      nlohmann::json j;
      j["alpha"] = part.alpha;
      j["clients"] = nlohmann::json::array();
      for (std::size_t k = 0; k < part.clients(); ++k) {
        std::vector<std::size_t> per_class(data.classes, 0);
        for (auto i : part.client_indices[k]) ++per_class[data.train_y[i]];
        j["clients"].push_back({{"client", k},
                                {"samples", part.client_indices[k].size()},
                                {"per_class", per_class}});
      }
      std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (*train_cmd) {
      ExperimentResult res = run_experiment(cfg);
      write_artifacts(cfg, res);
      std::cout << metrics_json(cfg, res) << "\n";
      return 0;
    }

    if (*eval_cmd || *export_cmd) {
      ModelBundle model = load_checkpoint(checkpoint_path);
      RngStream data_stream(cfg.seed, "dataset");
      DatasetBundle data = generate_dataset(cfg.dataset, data_stream);
      if (*export_cmd) {
        export_plot_data(data, model, 25, 3.0 * cfg.dataset.radius,
                         cfg.federation.sag.sigma_eval, cfg.out_dir, true);
        std::cout << "wrote plot data to " << cfg.out_dir << "\n";
        return 0;
      }
      EvalSplit in_s{data.test_X, data.test_y};
      EvalSplit inc_s{data.inc_X, data.inc_y};
      WeightedEval ev =
          evaluate_weighted(model, {in_s}, {inc_s}, data.out_X,
                            cfg.federation.sag.sigma_eval, true);
      nlohmann::json j = {{"acc_in", ev.acc_in},     {"acc_inc", ev.acc_inc},
                          {"auroc", ev.auroc},       {"fpr95", ev.fpr95},
                          {"msp_auroc", ev.msp_auroc},
                          {"msp_fpr95", ev.msp_fpr95}};
      std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (*toy_cmd) {
      RngStream data_stream(cfg.seed, "dataset");
      DatasetBundle data = generate_dataset(cfg.dataset, data_stream);
      ToyTrainConfig tcfg;
      nlohmann::json j = nlohmann::json::array();
      for (double lm : lambda_list) {
        ToyTrainResult r =
            train_toy_score(data.train_X, data.test_X, lm, tcfg, cfg.seed);
        j.push_back({{"lambda_m", lm}, {"mmd", r.holdout_mmd}});
        std::cerr << "lambda_m=" << lm << " mmd=" << r.holdout_mmd << "\n";
        if (!out_dir.empty()) {
          std::string dir = out_dir + "/lambda_" + std::to_string(lm);
          export_plot_data(data, r.model, 25, 3.0 * cfg.dataset.radius,
                           tcfg.sigmas.front(), dir, true);
        }
      }
      std::cout << j.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

namespace {

double fd_scalar(const std::function<double(const std::vector<double>&)>& f,
                 std::vector<double>& x, std::size_t i, double step) {
  double orig = x[i];
  x[i] = orig + step;
  double hi = f(x);
  x[i] = orig - step;
  double lo = f(x);
  x[i] = orig;
  return (hi - lo) / (2.0 * step);
}

int run_gradcheck() {
  int failures = 0;
  auto report = [&](const char* name, double err, double tol) {
    bool ok = err < tol;
    std::cout << (ok ? "PASS " : "FAIL ") << name << "  max-rel-err=" << err
              << " tol=" << tol << "\n";
    if (!ok) ++failures;
  };

  RngStream rng(99, "gradcheck");
  // DSM + MMD + full-chain Langevin through the combined objective
  {
    ModelBundle b = identity_feature_bundle(2, {8, 8}, 7);
    Tensor Z = rng.gaussian({6, 2});
    Sm3dConfig smd;
    smd.lambda_m = 0.5;
    LangevinConfig lcfg{4, 0.05, 0.1, true};
    auto eval = [&](const std::vector<double>& theta) {
      ModelBundle m = b;
      Tensor flat = flatten_params(m);
      std::size_t off = flat.size() - m.spec_s.param_count();
      for (std::size_t i = 0; i < theta.size(); ++i) flat[off + i] = theta[i];
      m = unflatten_params(flat, m);
      Tape tape;
      MlpVars s = mlp_leaves(tape, m.s, true);
      RngStream st(3, "gradcheck-smd");
      return sm3d_loss(m.spec_s, s, tape, Z, smd, lcfg, st, nullptr)
          .value()
          .item();
    };
    Tensor flat0 = flatten_params(b);
    std::size_t np = b.spec_s.param_count();
    std::vector<double> theta(flat0.data().end() - np, flat0.data().end());
    Tape tape;
    MlpVars s = mlp_leaves(tape, b.s, true);
    RngStream st(3, "gradcheck-smd");
    Var loss = sm3d_loss(b.spec_s, s, tape, Z, smd, lcfg, st, nullptr);
    tape.backward(loss);
    std::vector<double> got;
    for (std::size_t l = 0; l < s.weights.size(); ++l) {
      Tensor gw = tape.grad(s.weights[l]);
      Tensor gb = tape.grad(s.biases[l]);
      for (double g : gw.data()) got.push_back(g);
      for (double g : gb.data()) got.push_back(g);
    }
    // flat order is weight,bias per layer, matching collection order
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double want = fd_scalar(eval, theta, i, 1e-5);
      double denom = std::max({std::fabs(want), std::fabs(got[i]), 1e-5});
      if (std::fabs(want - got[i]) > 1e-8)
        worst = std::max(worst, std::fabs(want - got[i]) / denom);
    }
    report("sm3d objective (dsm + langevin + mmd)", worst, 1e-4);
  }
  // SAG objective through the KSD custom primitive
  {
    RngStream init(5, "gradcheck-sag-init");
    MlpSpec f{{2, 8, 2}, Activation::kTanh};
    MlpSpec g{{2, 3}, Activation::kTanh};
    MlpSpec s{{3, 8, 2}, Activation::kTanh};
    ModelBundle b = init_bundle(f, g, s, init);
    Tensor X = rng.gaussian({5, 2});
    std::vector<std::size_t> Y = {0, 1, 2, 0, 1};
    SagConfig cfg;
    cfg.lambda_a = 0.05;
    cfg.augment.family = AugmentFamily::kGaussianJitter;
    cfg.augment.magnitude = 0.1;
    auto eval = [&](const std::vector<double>& theta) {
      ModelBundle m = b;
      Tensor flat = flatten_params(m);
      for (std::size_t i = 0; i < theta.size(); ++i) flat[i] = theta[i];
      m = unflatten_params(flat, m);
      Tape tape;
      MlpVars fv = mlp_leaves(tape, m.f, true);
      MlpVars gv = mlp_leaves(tape, m.g, true);
      MlpVars sv = mlp_leaves(tape, m.s, false);
      RngStream st(11, "gradcheck-sag");
      return sag_loss(m, fv, gv, sv, tape, X, Y, cfg, st, nullptr)
          .value()
          .item();
    };
    Tensor flat0 = flatten_params(b);
    std::size_t np = b.spec_f.param_count() + b.spec_g.param_count();
    std::vector<double> theta(flat0.data().begin(),
                              flat0.data().begin() + np);
    Tape tape;
    MlpVars fv = mlp_leaves(tape, b.f, true);
    MlpVars gv = mlp_leaves(tape, b.g, true);
    MlpVars sv = mlp_leaves(tape, b.s, false);
    RngStream st(11, "gradcheck-sag");
    Var loss = sag_loss(b, fv, gv, sv, tape, X, Y, cfg, st, nullptr);
    tape.backward(loss);
    std::vector<double> got;
    auto push = [&](const MlpVars& mv) {
      for (std::size_t l = 0; l < mv.weights.size(); ++l) {
        Tensor gw = tape.grad(mv.weights[l]);
        Tensor gb = tape.grad(mv.biases[l]);
        for (double v : gw.data()) got.push_back(v);
        for (double v : gb.data()) got.push_back(v);
      }
    };
    push(fv);
    push(gv);
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double want = fd_scalar(eval, theta, i, 1e-5);
      double denom = std::max({std::fabs(want), std::fabs(got[i]), 1e-5});
      if (std::fabs(want - got[i]) > 1e-8)
        worst = std::max(worst, std::fabs(want - got[i]) / denom);
    }
    report("sag objective (cross-entropy + ksd)", worst, 1e-4);
  }
  std::cout << (failures == 0 ? "all gradient checks passed\n"
                              : "gradient checks FAILED\n");
  return failures == 0 ? 0 : 1;
}

}  // namespace
