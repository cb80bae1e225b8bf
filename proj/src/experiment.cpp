#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "foogd/workbench.hpp"

namespace foogd {

using nlohmann::json;

namespace {

Tensor gather_rows(const Tensor& X, const std::vector<std::size_t>& idx) {
  std::size_t d = X.cols();
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) = X.at(idx[i], c);
  return out;
}

// Splits `labels` across clients reusing the train partition's per-class
// proportions so the test distribution mirrors the train heterogeneity.
std::vector<std::vector<std::size_t>> partition_like(
    const std::vector<std::size_t>& labels, const Partition& train_part,
    RngStream& stream) {
  std::size_t K = train_part.clients();
  std::vector<std::vector<std::size_t>> out(K);
  std::size_t classes = train_part.class_proportions.size();
  for (std::size_t j = 0; j < classes; ++j) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == j) members.push_back(i);
    if (members.empty()) continue;
    RngStream class_stream = stream.child("test-class/" + std::to_string(j));
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[class_stream.next_below(i)]);
    const auto& p = train_part.class_proportions[j];
    std::size_t n = members.size();
    std::vector<std::size_t> counts(K);
    std::vector<std::pair<double, std::size_t>> rema(K);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
      double exact = (p.empty() ? 1.0 / K : p[k]) * static_cast<double>(n);
      counts[k] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[k];
      rema[k] = {exact - std::floor(exact), k};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned)
      ++counts[rema[r % K].second];
    std::size_t at = 0;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t c = 0; c < counts[k]; ++c)
        out[k].push_back(members[at++]);
  }
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult res;
  RngStream data_stream(cfg.seed, "dataset");
  res.dataset = generate_dataset(cfg.dataset, data_stream);

  RngStream part_stream(cfg.seed, "partition");
  res.partition = dirichlet_partition(res.dataset.train_y, cfg.federation.clients,
                                      cfg.partition_alpha, part_stream);

  RngStream init_stream(cfg.seed, "model-init");
  ModelBundle init = init_bundle(feature_spec(cfg, res.dataset.input_dim),
                                 head_spec(cfg, res.dataset.classes),
                                 score_spec(cfg), init_stream);

  TrainData data{res.dataset.train_X, res.dataset.train_y};
  RunResult run = run_rounds(cfg.federation, res.partition, data, init);
  res.global = std::move(run.global);
  res.history = std::move(run.history);

  // per-client eval splits mirroring the train heterogeneity
  RngStream eval_stream(cfg.seed, "eval-partition");
  auto test_idx =
      partition_like(res.dataset.test_y, res.partition, eval_stream);
  std::vector<EvalSplit> in_splits, inc_splits;
  for (const auto& idx : test_idx) {
    EvalSplit in_s, inc_s;
    in_s.X = gather_rows(res.dataset.test_X, idx);
    inc_s.X = gather_rows(res.dataset.inc_X, idx);
    for (auto i : idx) {
      in_s.labels.push_back(res.dataset.test_y[i]);
      inc_s.labels.push_back(res.dataset.inc_y[i]);
    }
    in_splits.push_back(std::move(in_s));
    inc_splits.push_back(std::move(inc_s));
  }
  double sigma_eval = cfg.federation.sag.sigma_eval;
  res.eval = evaluate_weighted(res.global, in_splits, inc_splits,
                               res.dataset.out_X, sigma_eval,
                               cfg.pooled_detection);

  // the report compares the score against the unit Gaussian reference, so it
  // is evaluated at the coarsest noise level the score was trained on
  double sigma_bound = *std::max_element(cfg.federation.smd.sigmas.begin(),
                                         cfg.federation.smd.sigmas.end());
  RngStream bound_stream(cfg.seed, "bound-report");
  res.bound = dsm_bound_report(res.global, sigma_bound,
                               cfg.federation.batch_size,
                               res.dataset.train_X.rows(), run.initial_mmd,
                               bound_stream);
  return res;
}

std::string metrics_json(const ExperimentConfig& cfg,
                         const ExperimentResult& res) {
  json j;
  j["schema_version"] = 1;
  j["config_echo"] = json::parse(config_to_json(cfg));
  j["rounds"] = res.history.size();
  j["acc_in"] = res.eval.acc_in;
  j["acc_inc"] = res.eval.acc_inc;
  j["auroc"] = res.eval.auroc;
  j["fpr95"] = res.eval.fpr95;
  j["msp_auroc"] = res.eval.msp_auroc;
  j["msp_fpr95"] = res.eval.msp_fpr95;
  json div = json::array();
  for (const auto& r : res.history)
    div.push_back({{"round", r.round},
                   {"lhs", r.divergence_lhs},
                   {"rhs", r.divergence_rhs}});
  j["divergence"] = div;
  j["bound_report"] = {{"lhs", res.bound.lhs},
                       {"rhs", res.bound.rhs},
                       {"sigma", res.bound.sigma},
                       {"mmd_bound_c", res.bound.mmd_bound_c}};
  return j.dump(2);
}

void write_artifacts(const ExperimentConfig& cfg,
                     const ExperimentResult& res) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "metrics.json");
    out << metrics_json(cfg, res);
  }
  {
    json hist = json::array();
    for (const auto& r : res.history) {
      json clients = json::array();
      for (const auto& c : r.clients)
        clients.push_back({{"client", c.client_id},
                           {"dsm", c.dsm},
                           {"mmd", c.mmd},
                           {"smd_total", c.smd_total},
                           {"cross_entropy", c.cross_entropy},
                           {"ksd", c.ksd},
                           {"sag_total", c.sag_total},
                           {"steps", c.steps},
                           {"max_grad_norm", c.max_grad_norm}});
      hist.push_back({{"round", r.round},
                      {"clients", clients},
                      {"divergence_lhs", r.divergence_lhs},
                      {"divergence_rhs", r.divergence_rhs},
                      {"checksum", r.model_checksum}});
    }
    std::ofstream out(fs::path(cfg.out_dir) / "history.json");
    out << hist.dump(2);
  }
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.json").string(),
                  res.global);
  export_plot_data(res.dataset, res.global, 25, 3.0 * cfg.dataset.radius,
                   cfg.federation.sag.sigma_eval, cfg.out_dir);
}

void export_plot_data(const DatasetBundle& data, const ModelBundle& model,
                      std::size_t grid_n, double grid_extent,
                      double sigma_eval, const std::string& out_dir,
                      bool svg) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (model.latent_dim != 2)
    throw std::invalid_argument(
        "export_plot_data: score-field export requires latent_dim == 2");

  Tensor target = forward_features_value(model, data.train_X);
  Tensor in_z = forward_features_value(model, data.test_X);
  Tensor inc_z = forward_features_value(model, data.inc_X);
  Tensor out_z = forward_features_value(model, data.out_X);
  RngStream gen_stream(0, "export-generated");
  LangevinConfig lcfg;
  lcfg.sigma = sigma_eval;
  lcfg.steps = 200;
  Tensor gen = langevin_sample_value(model, 1024, lcfg, gen_stream);

  {
    std::ofstream out(fs::path(out_dir) / "points.csv");
    out << "x,y,kind\n";
    auto dump = [&](const Tensor& Z, const char* kind) {
      for (std::size_t i = 0; i < Z.rows(); ++i)
        out << Z.at(i, 0) << "," << Z.at(i, 1) << "," << kind << "\n";
    };
    dump(target, "target");
    dump(gen, "generated");
    dump(in_z, "in");
    dump(inc_z, "inc");
    dump(out_z, "out");
  }
  {
    Tensor grid({grid_n * grid_n, 2});
    for (std::size_t i = 0; i < grid_n; ++i)
      for (std::size_t j = 0; j < grid_n; ++j) {
        double x = -grid_extent +
                   2.0 * grid_extent * static_cast<double>(i) /
                       static_cast<double>(grid_n - 1);
        double y = -grid_extent +
                   2.0 * grid_extent * static_cast<double>(j) /
                       static_cast<double>(grid_n - 1);
        grid.at(i * grid_n + j, 0) = x;
        grid.at(i * grid_n + j, 1) = y;
      }
    Tensor S = forward_score_value(model, grid, sigma_eval);
    std::ofstream out(fs::path(out_dir) / "field.csv");
    out << "x,y,sx,sy\n";
    for (std::size_t i = 0; i < grid.rows(); ++i)
      out << grid.at(i, 0) << "," << grid.at(i, 1) << "," << S.at(i, 0) << ","
          << S.at(i, 1) << "\n";
  }
  {
    std::ofstream out(fs::path(out_dir) / "norms.csv");
    out << "kind,norm\n";
    auto dump = [&](const Tensor& Z, const char* kind) {
      auto norms = score_norm_latent(model, Z, sigma_eval);
      for (double n : norms) out << kind << "," << n << "\n";
    };
    dump(in_z, "in");
    dump(inc_z, "inc");
    dump(out_z, "out");
  }
  if (svg) {
    std::ofstream out(fs::path(out_dir) / "points.svg");
    double s = 400.0 / (2.0 * grid_extent);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='400' height='400' "
           "viewBox='0 0 400 400'>\n";
    auto dump = [&](const Tensor& Z, const char* color) {
      for (std::size_t i = 0; i < Z.rows(); ++i) {
        double x = 200.0 + s * Z.at(i, 0);
        double y = 200.0 - s * Z.at(i, 1);
        if (x < 0 || x > 400 || y < 0 || y > 400) continue;
        out << "<circle cx='" << x << "' cy='" << y << "' r='1.5' fill='"
            << color << "'/>\n";
      }
    };
    dump(target, "#d62728");
    dump(gen, "#1f77b4");
    out << "</svg>\n";
  }
}

}  // namespace foogd
