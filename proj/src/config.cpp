#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "foogd/workbench.hpp"

namespace foogd {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw std::invalid_argument("config: " + path + ": " + why);
}

template <typename T>
T get_or(const json& j, const std::string& section, const std::string& key,
         T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(section + "." + key, "wrong type");
  }
}

DatasetKind dataset_kind_from(const std::string& s) {
  if (s == "gaussian-ring") return DatasetKind::kGaussianRing;
  if (s == "two-moons") return DatasetKind::kTwoMoons;
  if (s == "grid-mixture") return DatasetKind::kGridMixture;
  fail("dataset.kind", "unknown kind '" + s + "'");
}

std::string dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kGaussianRing: return "gaussian-ring";
    case DatasetKind::kTwoMoons: return "two-moons";
    case DatasetKind::kGridMixture: return "grid-mixture";
  }
  return "?";
}

ShiftKind shift_kind_from(const std::string& s) {
  if (s == "rotate") return ShiftKind::kRotate;
  if (s == "jitter") return ShiftKind::kJitter;
  if (s == "scale") return ShiftKind::kScale;
  fail("dataset.shift", "unknown shift '" + s + "'");
}

std::string shift_kind_name(ShiftKind k) {
  switch (k) {
    case ShiftKind::kRotate: return "rotate";
    case ShiftKind::kJitter: return "jitter";
    case ShiftKind::kScale: return "scale";
  }
  return "?";
}

AugmentFamily augment_family_from(const std::string& s) {
  if (s == "rotation") return AugmentFamily::kRotation;
  if (s == "gaussian-jitter") return AugmentFamily::kGaussianJitter;
  if (s == "scale") return AugmentFamily::kScale;
  if (s == "compose") return AugmentFamily::kCompose;
  fail("sag.augment_family", "unknown family '" + s + "'");
}

std::string augment_family_name(AugmentFamily f) {
  switch (f) {
    case AugmentFamily::kRotation: return "rotation";
    case AugmentFamily::kGaussianJitter: return "gaussian-jitter";
    case AugmentFamily::kScale: return "scale";
    case AugmentFamily::kCompose: return "compose";
  }
  return "?";
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.validate();
  federation.validate();
  if (latent_dim < 1) fail("models.latent_dim", "must be >= 1");
  if (hidden_f.empty()) fail("models.hidden_f", "needs at least one layer");
  if (hidden_s.empty()) fail("models.hidden_s", "needs at least one layer");
  if (partition_alpha <= 0.0) fail("federation.alpha", "must be > 0");
  if (out_dir.empty()) fail("output.dir", "must not be empty");
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") +
                                e.what());
  }
  ExperimentConfig cfg;
  const json empty = json::object();

  const json& ds = j.contains("dataset") ? j.at("dataset") : empty;
  cfg.dataset.kind = dataset_kind_from(
      get_or<std::string>(ds, "dataset", "kind", "gaussian-ring"));
  cfg.dataset.modes = get_or<std::size_t>(ds, "dataset", "modes", 8);
  cfg.dataset.per_mode = get_or<std::size_t>(ds, "dataset", "per_mode", 125);
  cfg.dataset.test_per_mode =
      get_or<std::size_t>(ds, "dataset", "test_per_mode", 25);
  cfg.dataset.out_samples =
      get_or<std::size_t>(ds, "dataset", "out_samples", 500);
  cfg.dataset.radius = get_or<double>(ds, "dataset", "radius", 4.0);
  cfg.dataset.mode_std = get_or<double>(ds, "dataset", "mode_std", 0.3);
  cfg.dataset.classes = get_or<std::size_t>(ds, "dataset", "classes", 0);
  cfg.dataset.shift =
      shift_kind_from(get_or<std::string>(ds, "dataset", "shift", "rotate"));
  cfg.dataset.shift_severity = get_or<int>(ds, "dataset", "shift_severity", 3);

  const json& fed = j.contains("federation") ? j.at("federation") : empty;
  cfg.federation.clients = get_or<std::size_t>(fed, "federation", "clients", 10);
  cfg.federation.rounds = get_or<std::size_t>(fed, "federation", "rounds", 30);
  cfg.federation.local_epochs =
      get_or<std::size_t>(fed, "federation", "local_epochs", 5);
  cfg.federation.batch_size =
      get_or<std::size_t>(fed, "federation", "batch_size", 64);
  cfg.federation.participation =
      get_or<double>(fed, "federation", "participation", 1.0);
  cfg.federation.optimizer.lr = get_or<double>(fed, "federation", "lr", 0.1);
  cfg.federation.optimizer.momentum =
      get_or<double>(fed, "federation", "momentum", 0.9);
  cfg.federation.optimizer.weight_decay =
      get_or<double>(fed, "federation", "weight_decay", 5e-4);
  cfg.partition_alpha = get_or<double>(fed, "federation", "alpha", 0.5);
  cfg.federation.threads = get_or<std::size_t>(fed, "federation", "threads", 1);

  const json& models = j.contains("models") ? j.at("models") : empty;
  cfg.hidden_f = get_or<std::vector<std::size_t>>(
      models, "models", "hidden_f", {64, 64});
  cfg.hidden_s = get_or<std::vector<std::size_t>>(
      models, "models", "hidden_s", {128, 128});
  cfg.latent_dim = get_or<std::size_t>(models, "models", "latent_dim", 2);
  cfg.activation = activation_from_string(
      get_or<std::string>(models, "models", "activation", "tanh"));

  const json& smd = j.contains("smd") ? j.at("smd") : empty;
  cfg.federation.smd.lambda_m = get_or<double>(smd, "smd", "lambda_m", 0.5);
  cfg.federation.smd.sigmas =
      get_or<std::vector<double>>(smd, "smd", "sigmas", {0.1});
  std::string bw = get_or<std::string>(smd, "smd", "bandwidth", "median");
  if (bw == "median") {
    cfg.federation.smd.bandwidth = BandwidthPolicy::kMedian;
  } else {
    cfg.federation.smd.bandwidth = BandwidthPolicy::kFixed;
    cfg.federation.smd.fixed_bandwidth = std::stod(bw);
  }
  cfg.federation.smd.mmd_unbiased =
      get_or<bool>(smd, "smd", "mmd_unbiased", false);
  cfg.federation.langevin.steps = get_or<int>(smd, "smd", "langevin_steps", 20);
  cfg.federation.langevin.step_size =
      get_or<double>(smd, "smd", "langevin_step_size", 0.01);
  cfg.federation.langevin.backprop_full_chain =
      get_or<bool>(smd, "smd", "langevin_backprop", true);

  const json& sag = j.contains("sag") ? j.at("sag") : empty;
  cfg.federation.sag.lambda_a = get_or<double>(sag, "sag", "lambda_a", 0.05);
  cfg.federation.sag.augment.family = augment_family_from(
      get_or<std::string>(sag, "sag", "augment_family", "rotation"));
  cfg.federation.sag.augment.magnitude =
      get_or<double>(sag, "sag", "augment_magnitude", 15.0);
  cfg.federation.sag.augment.jitter_magnitude =
      get_or<double>(sag, "sag", "augment_jitter_magnitude", 0.0);
  cfg.federation.sag.ksd_v_statistic =
      get_or<bool>(sag, "sag", "ksd_v_statistic", false);

  // sigma for score evaluation: smallest configured sigma
  double min_sigma = cfg.federation.smd.sigmas.front();
  for (double s : cfg.federation.smd.sigmas) min_sigma = std::min(min_sigma, s);
  cfg.federation.sag.sigma_eval = min_sigma;
  cfg.federation.langevin.sigma = min_sigma;

  const json& det = j.contains("detection") ? j.at("detection") : empty;
  cfg.pooled_detection = get_or<bool>(det, "detection", "pooled", false);

  const json& output = j.contains("output") ? j.at("output") : empty;
  cfg.out_dir = get_or<std::string>(output, "output", "dir", "out");
  cfg.eval_every = get_or<std::size_t>(output, "output", "eval_every", 0);

  cfg.seed = get_or<std::uint64_t>(j, "", "seed", 0);
  cfg.federation.seed = cfg.seed;

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["dataset"] = {{"kind", dataset_kind_name(cfg.dataset.kind)},
                  {"modes", cfg.dataset.modes},
                  {"per_mode", cfg.dataset.per_mode},
                  {"test_per_mode", cfg.dataset.test_per_mode},
                  {"out_samples", cfg.dataset.out_samples},
                  {"radius", cfg.dataset.radius},
                  {"mode_std", cfg.dataset.mode_std},
                  {"classes", cfg.dataset.classes},
                  {"shift", shift_kind_name(cfg.dataset.shift)},
                  {"shift_severity", cfg.dataset.shift_severity}};
  j["federation"] = {{"clients", cfg.federation.clients},
                     {"rounds", cfg.federation.rounds},
                     {"local_epochs", cfg.federation.local_epochs},
                     {"batch_size", cfg.federation.batch_size},
                     {"participation", cfg.federation.participation},
                     {"lr", cfg.federation.optimizer.lr},
                     {"momentum", cfg.federation.optimizer.momentum},
                     {"weight_decay", cfg.federation.optimizer.weight_decay},
                     {"alpha", cfg.partition_alpha},
                     {"threads", cfg.federation.threads}};
  j["models"] = {{"hidden_f", cfg.hidden_f},
                 {"hidden_s", cfg.hidden_s},
                 {"latent_dim", cfg.latent_dim},
                 {"activation", activation_to_string(cfg.activation)}};
  j["smd"] = {{"lambda_m", cfg.federation.smd.lambda_m},
              {"sigmas", cfg.federation.smd.sigmas},
              {"mmd_unbiased", cfg.federation.smd.mmd_unbiased},
              {"langevin_steps", cfg.federation.langevin.steps},
              {"langevin_step_size", cfg.federation.langevin.step_size},
              {"langevin_backprop",
               cfg.federation.langevin.backprop_full_chain}};
  j["sag"] = {{"lambda_a", cfg.federation.sag.lambda_a},
              {"augment_family",
               augment_family_name(cfg.federation.sag.augment.family)},
              {"augment_magnitude", cfg.federation.sag.augment.magnitude},
              {"augment_jitter_magnitude",
               cfg.federation.sag.augment.jitter_magnitude},
              {"ksd_v_statistic", cfg.federation.sag.ksd_v_statistic}};
  j["detection"] = {{"pooled", cfg.pooled_detection}};
  j["output"] = {{"dir", cfg.out_dir}, {"eval_every", cfg.eval_every}};
  return j.dump(2);
}

MlpSpec feature_spec(const ExperimentConfig& cfg, std::size_t input_dim) {
  MlpSpec s;
  s.widths.push_back(input_dim);
  for (auto h : cfg.hidden_f) s.widths.push_back(h);
  s.widths.push_back(cfg.latent_dim);
  s.activation = cfg.activation;
  return s;
}

MlpSpec head_spec(const ExperimentConfig& cfg, std::size_t classes) {
  return MlpSpec{{cfg.latent_dim, classes}, cfg.activation};
}

MlpSpec score_spec(const ExperimentConfig& cfg) {
  MlpSpec s;
  s.widths.push_back(cfg.latent_dim + 1);
  for (auto h : cfg.hidden_s) s.widths.push_back(h);
  s.widths.push_back(cfg.latent_dim);
  s.activation = cfg.activation;
  return s;
}

namespace {

json spec_to_json(const MlpSpec& s) {
  return {{"widths", s.widths},
          {"activation", activation_to_string(s.activation)}};
}

MlpSpec spec_from_json(const json& j) {
  MlpSpec s;
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle& b) {
  json j;
  j["format"] = "foogd-checkpoint";
  j["version"] = 1;
  j["spec_f"] = spec_to_json(b.spec_f);
  j["spec_g"] = spec_to_json(b.spec_g);
  j["spec_s"] = spec_to_json(b.spec_s);
  j["latent_dim"] = b.latent_dim;
  j["classes"] = b.classes;
  j["params"] = flatten_params(b).data();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << j.dump();
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_checkpoint: invalid JSON in " + path +
                             ": " + e.what());
  }
  if (j.value("format", "") != "foogd-checkpoint")
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
  ModelBundle tmpl;
  tmpl.spec_f = spec_from_json(j.at("spec_f"));
  tmpl.spec_g = spec_from_json(j.at("spec_g"));
  tmpl.spec_s = spec_from_json(j.at("spec_s"));
  tmpl.latent_dim = j.at("latent_dim").get<std::size_t>();
  tmpl.classes = j.at("classes").get<std::size_t>();
  RngStream dummy(0, "checkpoint-template");
  tmpl.f = init_mlp(tmpl.spec_f, dummy);
  tmpl.g = init_mlp(tmpl.spec_g, dummy);
  tmpl.s = init_mlp(tmpl.spec_s, dummy);
  tmpl.validate();
  std::vector<double> flat = j.at("params").get<std::vector<double>>();
  std::size_t n = flat.size();
  return unflatten_params(Tensor({n}, std::move(flat)), tmpl);
}

}  // namespace foogd
