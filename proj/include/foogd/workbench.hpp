#pragma once

#include <string>
#include <vector>

#include "foogd/federation.hpp"

namespace foogd {

enum class DatasetKind { kGaussianRing, kTwoMoons, kGridMixture };
enum class ShiftKind { kRotate, kJitter, kScale };

struct DatasetParams {
  DatasetKind kind = DatasetKind::kGaussianRing;
  std::size_t modes = 8;          // ring modes / grid cells per side
  std::size_t per_mode = 125;     // train samples per mode
  std::size_t test_per_mode = 25;
  std::size_t out_samples = 500;
  double radius = 4.0;
  double mode_std = 0.3;
  std::size_t classes = 0;        // 0 -> one class per mode
  ShiftKind shift = ShiftKind::kRotate;
  int shift_severity = 3;

  void validate() const;
};

struct DatasetBundle {
  Tensor train_X;
  std::vector<std::size_t> train_y;
  Tensor test_X;
  std::vector<std::size_t> test_y;
  Tensor inc_X;                  // covariate-shifted copy of test_X
  std::vector<std::size_t> inc_y;
  Tensor out_X;                  // semantic-shift samples, unlabeled
  Tensor mode_means;             // generator provenance (ring / grid kinds)
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  ShiftKind shift = ShiftKind::kRotate;
  int shift_severity = 0;
};

DatasetBundle generate_dataset(const DatasetParams& params, RngStream& stream);

/// Severity tables: rotate 5 deg * severity; jitter 0.05 * severity * data
/// std; scale 1 + 0.05 * severity. Labels unchanged.
Tensor covariate_shift(const Tensor& X, ShiftKind kind, int severity,
                       RngStream& stream);

// ---- CSV ----
/// Header `x0,...,x{d-1},label`; the label column is optional (OUT files).
struct CsvTable {
  Tensor X;
  std::vector<std::size_t> labels;
  bool has_labels = false;
};

CsvTable load_csv(const std::string& path, bool require_labels);
void save_csv(const std::string& path, const Tensor& X,
              const std::vector<std::size_t>* labels);

// ---- configuration ----
struct ExperimentConfig {
  DatasetParams dataset;
  FederationConfig federation;
  std::vector<std::size_t> hidden_f = {64, 64};
  std::vector<std::size_t> hidden_s = {128, 128};
  Activation activation = Activation::kTanh;
  std::size_t latent_dim = 2;
  double partition_alpha = 0.5;
  bool pooled_detection = false;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0 = final round only

  void validate() const;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

MlpSpec feature_spec(const ExperimentConfig& cfg, std::size_t input_dim);
MlpSpec head_spec(const ExperimentConfig& cfg, std::size_t classes);
MlpSpec score_spec(const ExperimentConfig& cfg);

// ---- checkpoints ----
void save_checkpoint(const std::string& path, const ModelBundle& b);
ModelBundle load_checkpoint(const std::string& path);

// ---- experiment driver ----
struct ExperimentResult {
  ModelBundle global;
  RoundHistory history;
  WeightedEval eval;
  BoundReport bound;
  DatasetBundle dataset;
  Partition partition;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Writes metrics.json, history.json, plot CSVs, and a checkpoint under
/// cfg.out_dir.
void write_artifacts(const ExperimentConfig& cfg, const ExperimentResult& res);

std::string metrics_json(const ExperimentConfig& cfg,
                         const ExperimentResult& res);

/// points.csv (x, y, kind), field.csv (x, y, sx, sy on an n x n grid) and
/// norms.csv (kind, norm); optional SVG scatter.
void export_plot_data(const DatasetBundle& data, const ModelBundle& model,
                      std::size_t grid_n, double grid_extent,
                      double sigma_eval, const std::string& out_dir,
                      bool svg = false);

}  // namespace foogd
