#include "dkd/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "dkd/checkpoint.hpp"
#include "dkd/data.hpp"
#include "dkd/errors.hpp"
#include "dkd/explain.hpp"
#include "dkd/metrics.hpp"
#include "dkd/sweep.hpp"
#include "dkd/train.hpp"

namespace dkd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

[[noreturn]] void config_error(const std::string& what) { throw CliError(kExitConfig, what); }

// ---- JSON config keys -------------------------------------------------------

template <typename V>
V json_as(const json& j, const std::string& key) {
  auto bad = [&](const char* want) { config_error("config key '" + key + "' must be " + want); };
  if constexpr (std::is_same_v<V, bool>) {
    if (!j.is_boolean()) bad("a boolean");
    return j.get<bool>();
  } else if constexpr (std::is_same_v<V, std::string>) {
    if (!j.is_string()) bad("a string");
    return j.get<std::string>();
  } else if constexpr (std::is_same_v<V, double>) {
    if (!j.is_number()) bad("a number");
    return j.get<double>();
  } else if constexpr (std::is_integral_v<V>) {
    if (!j.is_number_unsigned()) bad("a non-negative integer");
    return j.get<V>();
  } else if constexpr (std::is_same_v<V, std::optional<std::size_t>>) {
    if (j.is_null()) return std::nullopt;
    return json_as<std::size_t>(j, key);
  } else if constexpr (std::is_same_v<V, std::vector<double>>) {
    if (!j.is_array()) bad("an array of numbers");
    std::vector<double> out;
    for (const auto& e : j) out.push_back(json_as<double>(e, key));
    return out;
  } else {
    static_assert(std::is_same_v<V, std::vector<std::string>>);
    if (!j.is_array()) bad("an array of strings");
    std::vector<std::string> out;
    for (const auto& e : j) out.push_back(json_as<std::string>(e, key));
    return out;
  }
}

struct ConfigKey {
  std::string key;
  std::string flag;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <typename V>
ConfigKey config_key(std::string key, std::string flag, V RunConfig::*member) {
  auto set = [member, key](RunConfig& c, const json& j) { c.*member = json_as<V>(j, key); };
  auto get = [member](const RunConfig& c) -> json {
    if constexpr (std::is_same_v<V, std::optional<std::size_t>>) {
      return (c.*member) ? json(*(c.*member)) : json(nullptr);
    } else {
      return c.*member;
    }
  };
  return {std::move(key), std::move(flag), set, get};
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      config_key("data.synth", "--synth", &RunConfig::synth),
      config_key("data.dir", "--data", &RunConfig::data_dir),
      config_key("data.image_size", "--image-size", &RunConfig::image_size),
      config_key("data.seed", "--data-seed", &RunConfig::data_seed),
      config_key("data.split", "--split", &RunConfig::split),
      config_key("data.augment", "--augment", &RunConfig::augment),
      config_key("synth.classes", "--synth-classes", &RunConfig::synth_classes),
      config_key("synth.size", "--synth-size", &RunConfig::synth_size),
      config_key("synth.count", "--synth-count", &RunConfig::synth_count),
      config_key("synth.noise", "--synth-noise", &RunConfig::synth_noise),
      config_key("train.epochs", "--epochs", &RunConfig::epochs),
      config_key("train.batch_size", "--batch-size", &RunConfig::batch_size),
      config_key("train.lr", "--lr", &RunConfig::learning_rate),
      config_key("train.precision", "--precision", &RunConfig::precision),
      config_key("train.seed", "--seed", &RunConfig::seed),
      config_key("teacher.archetype", "--archetype", &RunConfig::archetype),
      config_key("teacher.width", "--width", &RunConfig::teacher_width),
      config_key("teacher.depth", "--depth", &RunConfig::teacher_depth),
      config_key("teacher.checkpoint", "--teacher", &RunConfig::teacher_path),
      config_key("distill.alpha", "--alpha", &RunConfig::alpha),
      config_key("distill.temperature", "--temperature", &RunConfig::temperature),
      config_key("distill.variant", "--variant", &RunConfig::variant),
      config_key("distill.t_squared", "--t-squared", &RunConfig::t_squared),
      config_key("sweep.coarse", "--coarse", &RunConfig::coarse),
      config_key("sweep.fine", "--fine", &RunConfig::fine),
      config_key("sweep.alphas", "--alphas", &RunConfig::alphas),
      config_key("sweep.save_checkpoints", "--save-checkpoints", &RunConfig::save_checkpoints),
      config_key("eval.checkpoint", "--checkpoint", &RunConfig::checkpoint),
      config_key("eval.split", "--split-name", &RunConfig::split_name),
      config_key("eval.averaging", "--averaging", &RunConfig::averaging),
      config_key("explain.inputs", "--input", &RunConfig::inputs),
      config_key("explain.limit", "--limit", &RunConfig::limit),
      config_key("explain.layer", "--layer", &RunConfig::layer),
      config_key("explain.target", "--target", &RunConfig::target),
      config_key("explain.cam_target", "--cam-target", &RunConfig::cam_target),
      config_key("output.dir", "--out", &RunConfig::out_dir),
  };
  return keys;
}

void apply_config_file(RunConfig& cfg, const CLI::App& sub) {
  std::ifstream in(cfg.config_path);
  if (!in) config_error("cannot read config file '" + cfg.config_path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    config_error("config file '" + cfg.config_path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) config_error("config file must hold a JSON object of dotted keys");
  for (const auto& [key, value] : j.items()) {
    const auto& keys = config_keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.key == key; });
    if (it == keys.end()) config_error("unknown config key '" + key + "'");
    const CLI::Option* opt = sub.get_option_no_throw(it->flag);
    if (opt == nullptr || opt->count() > 0) continue;
    it->set(cfg, value);
  }
}

json resolved_config(const RunConfig& cfg, const CLI::App& sub) {
  json j = json::object();
  for (const auto& k : config_keys()) {
    if (sub.get_option_no_throw(k.flag) != nullptr) j[k.key] = k.get(cfg);
  }
  return j;
}

// ---- validation -------------------------------------------------------------

bool uses_data(const std::string& cmd) { return cmd != "report"; }

std::size_t default_epochs(const std::string& cmd) { return cmd == "train-teacher" ? 20 : 30; }

SplitRatios split_ratios(const RunConfig& cfg) {
  if (cfg.split.empty()) return cfg.synth ? SplitRatios{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0} : SplitRatios{};
  return {cfg.split[0], cfg.split[1], cfg.split[2]};
}

void validate(RunConfig& cfg) {
  const std::string& cmd = cfg.command;
  auto wrap = [](auto&& fn) {
    try {
      fn();
    } catch (const ContractError& e) {
      config_error(e.what());
    }
  };
  const bool needs_data = uses_data(cmd) && !(cmd == "explain" && !cfg.inputs.empty());
  if (needs_data) {
    if (cfg.synth == !cfg.data_dir.empty()) config_error("choose exactly one data source: --synth or --data DIR");
    if (cfg.synth) {
      if (cfg.synth_classes < 2) config_error("--synth-classes must be at least 2");
      if (cfg.synth_size < 16) config_error("--synth-size must be at least 16");
      if (cfg.synth_count < 3) config_error("--synth-count must be at least 3");
      if (!(cfg.synth_noise >= 0.0) || !std::isfinite(cfg.synth_noise)) config_error("--synth-noise must be >= 0");
    } else if (cfg.image_size < 16) {
      config_error("--image-size must be at least 16");
    }
    if (!cfg.split.empty()) {
      if (cfg.split.size() != 3) config_error("--split takes three ratios: train,validation,test");
      const auto r = split_ratios(cfg);
      if (r.train < 0 || r.validation < 0 || r.test < 0 || std::abs(r.train + r.validation + r.test - 1.0) > 1e-6) {
        config_error("--split ratios must be non-negative and sum to 1");
      }
    }
    if (cfg.augment != "auto" && cfg.augment != "on" && cfg.augment != "off") {
      config_error("--augment must be auto, on or off");
    }
  }
  if (cmd == "train-teacher" || cmd == "distill" || cmd == "sweep") {
    if (!cfg.epochs) cfg.epochs = default_epochs(cmd);
    if (*cfg.epochs == 0) config_error("--epochs must be at least 1");
    if (cfg.batch_size == 0) config_error("--batch-size must be at least 1");
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) config_error("--lr must be positive");
    wrap([&] { precision_from_string(cfg.precision); });
  }
  if (cmd == "train-teacher") {
    wrap([&] { teacher_archetype_from_string(cfg.archetype); });
    if (cfg.teacher_width && *cfg.teacher_width == 0) config_error("--width must be at least 1");
    if (cfg.teacher_depth && *cfg.teacher_depth == 0) config_error("--depth must be at least 1");
  }
  if (cmd == "distill" || cmd == "sweep") {
    if (cfg.teacher_path.empty()) config_error("--teacher CHECKPOINT is required");
    wrap([&] { soft_variant_from_string(cfg.variant); });
  }
  if (cmd == "distill") {
    wrap([&] { DistillConfig{cfg.temperature, cfg.alpha, SoftVariant::kl_divergence, false}.validate(); });
  }
  if (cmd == "sweep") {
    SweepPlan plan;
    plan.alphas = cfg.alphas;
    plan.coarse = cfg.coarse;
    plan.fine = cfg.fine;
    wrap([&] { plan.validate(); });
  }
  if (cmd == "eval" || cmd == "explain") {
    if (cfg.checkpoint.empty()) config_error("--checkpoint PATH is required");
    if (cfg.split_name != "train" && cfg.split_name != "validation" && cfg.split_name != "test" &&
        cfg.split_name != "all") {
      config_error("--split-name must be train, validation, test or all");
    }
  }
  if (cmd == "eval") wrap([&] { averaging_from_string(cfg.averaging); });
  if (cmd == "explain" && cfg.target != "predicted" && cfg.target != "true") {
    const char* s = cfg.target.c_str();
    char* end = nullptr;
    std::strtoul(s, &end, 10);
    if (cfg.target.empty() || *end != '\0' || cfg.target[0] == '-') {
      config_error("--target must be 'predicted', 'true' or a class index");
    }
  }
  if (cmd == "explain") {
    if (cfg.target == "true" && !cfg.inputs.empty()) config_error("--target true needs labelled dataset samples");
    wrap([&] { cam_target_from_string(cfg.cam_target); });
  }
  if (cmd == "report" && cfg.inputs.empty()) config_error("report needs at least one results CSV");
}

// ---- shared helpers ---------------------------------------------------------

class Log {
 public:
  Log(std::ostream& err, bool quiet) : err_(err), quiet_(quiet) {}
  void operator()(const std::string& line) const {
    if (!quiet_) err_ << line << '\n';
  }

 private:
  std::ostream& err_;
  bool quiet_;
};

fs::path output_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  const char* root = std::getenv("DKD_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / cfg.command;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError(kExitData, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DatasetSplit load_data(const RunConfig& cfg, const Log& log) {
  std::vector<Sample> samples;
  std::vector<std::string> names;
  try {
    if (cfg.synth) {
      SynthSpec spec;
      spec.classes = cfg.synth_classes;
      spec.size = {cfg.synth_size, cfg.synth_size};
      spec.count_per_class = cfg.synth_count;
      spec.noise = cfg.synth_noise;
      spec.seed = cfg.data_seed;
      samples = synth_generate(spec);
      names = synth_class_names(spec.classes);
    } else {
      auto loaded = load_image_dir(cfg.data_dir, {cfg.image_size, cfg.image_size});
      for (const auto& w : loaded.warnings) log("warning: " + w);
      samples = std::move(loaded.samples);
      names = std::move(loaded.class_names);
    }
    return split(samples, names, split_ratios(cfg), cfg.data_seed);
  } catch (const ContractError& e) {
    throw CliError(kExitData, e.what());
  } catch (const IoError& e) {
    throw CliError(kExitData, e.what());
  }
}

std::optional<AugmentPolicy> augment_policy(const RunConfig& cfg) {
  const bool on = cfg.augment == "on" || (cfg.augment == "auto" && !cfg.synth);
  return on ? std::optional<AugmentPolicy>(AugmentPolicy{}) : std::nullopt;
}

TrainConfig train_config(const RunConfig& cfg, const Log& log, const std::string& tag) {
  TrainConfig t;
  t.epochs = *cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.seed = cfg.seed;
  t.learning_rate = cfg.learning_rate;
  t.precision = precision_from_string(cfg.precision);
  t.augment = augment_policy(cfg);
  const std::size_t total = t.epochs;
  t.on_epoch = [&log, tag, total](const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "[%s] epoch %zu/%zu train_loss=%.4f val_loss=%.4f val_acc=%.4f", tag.c_str(),
                  e.epoch, total, e.train_loss, e.val_loss, e.val_accuracy);
    log(buf);
  };
  return t;
}

Checkpoint load_model(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const IoError& e) {
    throw CliError(kExitFormat, e.what());
  } catch (const FormatError& e) {
    throw CliError(kExitFormat, "checkpoint '" + path + "': " + e.what());
  } catch (const BuildError& e) {
    throw CliError(kExitFormat, "checkpoint '" + path + "': " + e.what());
  }
}

void check_model_fits(const ModelGraph<float>& model, const DatasetSplit& data, const std::string& what) {
  if (model.num_classes() != data.num_classes()) {
    throw CliError(kExitData, what + " predicts " + std::to_string(model.num_classes()) + " classes but the dataset has " +
                        std::to_string(data.num_classes()));
  }
  const InputShape in = model.input_shape();
  const auto& s = data.train.empty() ? data.test.front() : data.train.front();
  if (s.image.shape() != Shape{in.channels, in.height, in.width}) {
    throw CliError(kExitData, what + " expects " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                        " images, the dataset has " + shape_string(s.image.shape()));
  }
}

struct Evaluation {
  ConfusionMatrix cm;
  MetricsReport report;
  json document;
};

Evaluation evaluate(const ModelGraph<float>& model, const std::vector<Sample>& samples,
                    const std::vector<std::string>& names, Averaging averaging, const std::string& split_name) {
  const auto pred = predict(model, samples);
  const auto truth = labels_of(samples);
  ConfusionMatrix cm = confusion(truth, pred.labels, names.size(), names);
  MetricsReport report = metrics(cm, averaging);
  json matrix = json::array();
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < cm.classes(); ++j) row.push_back(cm.at(i, j));
    matrix.push_back(row);
  }
  json doc = {{"model", model.architecture()},
              {"parameters", model.param_count()},
              {"split", split_name},
              {"samples", samples.size()},
              {"class_names", names},
              {"confusion", matrix},
              {"metrics", report.to_json()}};
  return {std::move(cm), std::move(report), std::move(doc)};
}

CheckpointMetadata metadata_for(const TrainHistory& h, const RunConfig& cfg, const Evaluation& ev,
                                const std::vector<std::string>& names) {
  CheckpointMetadata m;
  m.epoch = h.selected_epoch;
  m.seed = cfg.seed;
  m.metrics = {{"class_names", names},
               {"test_accuracy", ev.report.accuracy},
               {"test_f1", ev.report.f1},
               {"val_accuracy", h.has_validation ? h.epochs.at(h.selected_epoch - 1).val_accuracy : 0.0}};
  return m;
}

ResultRow result_row(const ModelGraph<float>& student, const std::string& teacher_arch, double alpha, double t,
                     const MetricsReport& r) {
  return {student.architecture() + "/" + teacher_arch,
          student.param_count(),
          alpha,
          t,
          r.accuracy,
          r.precision,
          r.recall,
          r.f1};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

const std::vector<Sample>& pick_split(const DatasetSplit& d, const std::string& name, std::vector<Sample>& all) {
  if (name == "train") return d.train;
  if (name == "validation") return d.validation;
  if (name == "test") return d.test;
  all = d.train;
  all.insert(all.end(), d.validation.begin(), d.validation.end());
  all.insert(all.end(), d.test.begin(), d.test.end());
  return all;
}

// ---- commands ---------------------------------------------------------------

int cmd_train_teacher(const RunConfig& cfg, const json& resolved, std::ostream& out, const Log& log) {
  const DatasetSplit data = load_data(cfg, log);
  const InputShape input{3, data.train.front().image.dim(1), data.train.front().image.dim(2)};
  TeacherConfig tc = TeacherConfig::defaults(teacher_archetype_from_string(cfg.archetype));
  if (cfg.teacher_width) tc.width = *cfg.teacher_width;
  if (cfg.teacher_depth) tc.depth = *cfg.teacher_depth;
  ModelGraph<float> model = build_teacher<float>(input, data.num_classes(), tc, cfg.seed);
  log("[teacher] " + model.architecture() + " with " + std::to_string(model.param_count()) + " parameters");

  const fs::path dir = output_dir(cfg);
  fs::create_directories(dir);
  const TrainHistory history = train_teacher(model, data, train_config(cfg, log, "teacher"));
  const Evaluation ev = evaluate(model, data.test, data.class_names, Averaging::macro, "test");

  save_checkpoint(model, metadata_for(history, cfg, ev, data.class_names), dir / "teacher.dkdc");
  write_text(dir / "history.csv", history.to_csv());
  write_text(dir / "metrics.json", dump(ev.document));
  write_text(dir / "confusion.csv", confusion_csv(ev.cm));
  write_text(dir / "config.json", dump(resolved));
  char buf[160];
  std::snprintf(buf, sizeof buf, "teacher %s: test accuracy %.4f (epoch %zu)\n", model.architecture().c_str(),
                ev.report.accuracy, history.selected_epoch);
  out << buf << "wrote " << (dir / "teacher.dkdc").string() << '\n';
  return kExitOk;
}

int cmd_distill(const RunConfig& cfg, const json& resolved, std::ostream& out, const Log& log) {
  const Checkpoint teacher = load_model(cfg.teacher_path);
  const DatasetSplit data = load_data(cfg, log);
  check_model_fits(teacher.model, data, "teacher");
  const DistillConfig dc{cfg.temperature, cfg.alpha, soft_variant_from_string(cfg.variant), cfg.t_squared};
  ModelGraph<float> student = build_dcsnet<float>(teacher.model.input_shape(), data.num_classes(), cfg.seed);

  const fs::path dir = output_dir(cfg);
  fs::create_directories(dir);
  const TrainHistory history = distill_student(teacher.model, student, data, dc, train_config(cfg, log, "student"));
  const Evaluation ev = evaluate(student, data.test, data.class_names, Averaging::macro, "test");

  CheckpointMetadata meta = metadata_for(history, cfg, ev, data.class_names);
  meta.metrics["alpha"] = dc.alpha;
  meta.metrics["temperature"] = dc.temperature;
  meta.metrics["teacher"] = teacher.model.architecture();
  save_checkpoint(student, meta, dir / "student.dkdc");
  write_text(dir / "history.csv", history.to_csv());
  write_text(dir / "metrics.json", dump(ev.document));
  write_text(dir / "confusion.csv", confusion_csv(ev.cm));
  const ResultRow row = result_row(student, teacher.model.architecture(), dc.alpha, dc.temperature, ev.report);
  write_text(dir / "results.csv", results_csv(std::span<const ResultRow>(&row, 1)));
  write_text(dir / "config.json", dump(resolved));
  out << kResultHeader << '\n' << format_result_row(row) << '\n';
  return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, const json& resolved, std::ostream& out, const Log& log) {
  const Checkpoint teacher = load_model(cfg.teacher_path);
  const DatasetSplit data = load_data(cfg, log);
  check_model_fits(teacher.model, data, "teacher");
  SweepPlan plan;
  plan.alphas = cfg.alphas;
  plan.coarse = cfg.coarse;
  plan.fine = cfg.fine;
  plan.seed = cfg.seed;
  const SoftVariant variant = soft_variant_from_string(cfg.variant);

  const fs::path dir = output_dir(cfg);
  fs::create_directories(dir);
  if (cfg.save_checkpoints) fs::create_directories(dir / "trials");
  const Log quiet_log(std::cerr, true);
  TrainConfig tc = train_config(cfg, quiet_log, "");
  tc.on_epoch = nullptr;

  const auto trials = run_sweep(plan, [&](double alpha, int t, std::size_t index) {
    ModelGraph<float> student = build_dcsnet<float>(teacher.model.input_shape(), data.num_classes(), cfg.seed);
    const DistillConfig dc{static_cast<double>(t), alpha, variant, cfg.t_squared};
    const TrainHistory history = distill_student(teacher.model, student, data, dc, tc);
    const Evaluation ev = evaluate(student, data.test, data.class_names, Averaging::macro, "test");
    SweepTrial trial;
    trial.index = index;
    trial.row = result_row(student, teacher.model.architecture(), alpha, t, ev.report);
    if (cfg.save_checkpoints) {
      char name[64];
      std::snprintf(name, sizeof name, "trials/trial_%03zu.dkdc", index);
      CheckpointMetadata meta = metadata_for(history, cfg, ev, data.class_names);
      meta.metrics["alpha"] = alpha;
      meta.metrics["temperature"] = t;
      save_checkpoint(student, meta, dir / name);
      trial.checkpoint = name;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "[sweep] trial %zu/%zu alpha=%.2f T=%d accuracy=%.4f", index + 1,
                  plan.trial_count(), alpha, t, ev.report.accuracy);
    log(buf);
    return trial;
  });

  std::vector<ResultRow> rows;
  std::ostringstream trial_log;
  trial_log << "trial,phase,alpha,temperature,seed,accuracy,f1,checkpoint\n";
  for (const auto& t : trials) {
    rows.push_back(t.row);
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.4g,%.6g,%llu,%.6f,%.6f,%s\n", t.index, t.phase.c_str(), t.row.alpha,
                  t.row.temperature, static_cast<unsigned long long>(cfg.seed), t.row.accuracy, t.row.f1,
                  t.checkpoint.c_str());
    trial_log << buf;
  }
  const SweepTrial& best = trials[best_row(rows)];
  std::vector<ResultRow> sorted = rows;
  sort_report(sorted);
  write_text(dir / "sweep.csv", results_csv(sorted));
  write_text(dir / "trials.csv", trial_log.str());
  const json best_json = {{"model", best.row.model},
                          {"teacher", teacher.model.architecture()},
                          {"student", build_dcsnet<float>(teacher.model.input_shape(), data.num_classes(), 0)
                                          .architecture()},
                          {"alpha", best.row.alpha},
                          {"temperature", best.row.temperature},
                          {"accuracy", best.row.accuracy},
                          {"precision", best.row.precision},
                          {"recall", best.row.recall},
                          {"f1", best.row.f1},
                          {"trial", best.index},
                          {"seed", cfg.seed},
                          {"checkpoint", best.checkpoint}};
  write_text(dir / "best_config.json", dump(best_json));
  write_text(dir / "config.json", dump(resolved));
  char buf[160];
  std::snprintf(buf, sizeof buf, "best: alpha=%.2f T=%g accuracy=%.4f over %zu trials\n", best.row.alpha,
                best.row.temperature, best.row.accuracy, trials.size());
  out << buf;
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const json& resolved, std::ostream& out, const Log& log) {
  const Checkpoint ck = load_model(cfg.checkpoint);
  const DatasetSplit data = load_data(cfg, log);
  check_model_fits(ck.model, data, "checkpoint");
  std::vector<Sample> all;
  const auto& samples = pick_split(data, cfg.split_name, all);
  if (samples.empty()) throw CliError(kExitData, "split '" + cfg.split_name + "' is empty");
  const Evaluation ev = evaluate(ck.model, samples, data.class_names, averaging_from_string(cfg.averaging),
                                 cfg.split_name);
  const fs::path dir = output_dir(cfg);
  fs::create_directories(dir);
  write_text(dir / "metrics.json", dump(ev.document));
  write_text(dir / "confusion.csv", confusion_csv(ev.cm));
  write_text(dir / "config.json", dump(resolved));
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s on %s (%zu samples): accuracy %.4f precision %.4f recall %.4f f1 %.4f\n",
                ck.model.architecture().c_str(), cfg.split_name.c_str(), samples.size(), ev.report.accuracy,
                ev.report.precision, ev.report.recall, ev.report.f1);
  out << buf;
  for (std::size_t c = 0; c < data.num_classes(); ++c) {
    out << "  FN[" << data.class_names[c] << "] = " << ev.report.false_negatives[c] << '\n';
  }
  return kExitOk;
}

std::string overlay_name(std::size_t i, std::string stem) {
  for (char& ch : stem) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  char prefix[32];
  std::snprintf(prefix, sizeof prefix, "%04zu_", i);
  return prefix + stem + ".ppm";
}

int cmd_explain(const RunConfig& cfg, const json& resolved, std::ostream& out, const Log& log) {
  const Checkpoint ck = load_model(cfg.checkpoint);
  const ModelGraph<float>& model = ck.model;
  model.capture_layer(cfg.layer);
  const CamTarget cam_kind = cam_target_from_string(cfg.cam_target);
  const InputShape in = model.input_shape();
  std::optional<std::size_t> fixed_target;
  if (cfg.target != "predicted" && cfg.target != "true") {
    fixed_target = std::stoul(cfg.target);
    if (*fixed_target >= model.num_classes()) config_error("--target exceeds the model's class count");
  }

  struct Item {
    std::string input;
    Tensor<float> original;  // overlay background
    Tensor<float> model_input;
    std::optional<int> label;
    std::optional<Quadrant> region;
  };
  std::vector<Item> items;
  std::vector<std::string> names;
  if (!cfg.inputs.empty()) {
    for (const auto& p : cfg.inputs) {
      Tensor<float> img;
      try {
        img = to_tensor(read_image(p));
      } catch (const Error& e) {
        throw CliError(kExitData, e.what());
      }
      Tensor<float> resized = resize_bilinear(img, {in.height, in.width});
      items.push_back({p, std::move(img), std::move(resized), std::nullopt, std::nullopt});
    }
  } else {
    const DatasetSplit data = load_data(cfg, log);
    check_model_fits(model, data, "checkpoint");
    names = data.class_names;
    std::vector<Sample> all;
    const auto& samples = pick_split(data, cfg.split_name, all);
    const std::size_t n = cfg.limit == 0 ? samples.size() : std::min(cfg.limit, samples.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = samples[i];
      items.push_back({s.source_id, s.image, s.image, s.label, s.signal_region});
    }
  }
  if (items.empty()) throw CliError(kExitData, "no images to explain");

  const fs::path dir = output_dir(cfg);
  fs::create_directories(dir / "overlays");
  json entries = json::array();
  std::size_t correct = 0, hits = 0, labelled = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Item& it = items[i];
    const Tensor<float> probs =
        softmax(forward_logits(model, it.model_input.reshaped({1, in.channels, in.height, in.width})));
    const int predicted = argmax_rows(probs)[0];
    std::size_t target = static_cast<std::size_t>(predicted);
    if (fixed_target) target = *fixed_target;
    if (cfg.target == "true") target = static_cast<std::size_t>(*it.label);
    const Heatmap cam = grad_cam(model, it.model_input, target, cfg.layer, cam_kind);
    const Heatmap up = upsample(cam, {it.original.dim(1), it.original.dim(2)});
    const std::string stem = cfg.inputs.empty() ? it.input : fs::path(it.input).stem().string();
    const std::string file = "overlays/" + overlay_name(i, stem);
    render_overlay(up, it.original, dir / file);
    json e = {{"input", it.input},
              {"heatmap", file},
              {"predicted_class", predicted},
              {"target_class", target},
              {"layer", cfg.layer},
              {"heatmap_size", {cam.height(), cam.width()}}};
    if (!names.empty()) e["predicted_name"] = names.at(static_cast<std::size_t>(predicted));
    if (it.label) {
      ++labelled;
      const bool ok = *it.label == predicted;
      correct += ok;
      e["true_class"] = *it.label;
      e["correct"] = ok;
      if (it.region) {
        const double mass = mass_in_quadrant(up, *it.region);
        const bool hit = mass >= 0.5;
        if (ok && hit) ++hits;
        e["signal_quadrant"] = static_cast<int>(*it.region);
        e["mass_in_signal"] = mass;
        e["localization_hit"] = hit;
      }
    }
    entries.push_back(std::move(e));
  }
  json summary = {{"images", items.size()}};
  if (labelled > 0) {
    summary["correct"] = correct;
    summary["localization_hits"] = hits;
    summary["hit_rate"] = correct > 0 ? static_cast<double>(hits) / static_cast<double>(correct) : 0.0;
  }
  write_text(dir / "index.json",
             dump({{"checkpoint", cfg.checkpoint}, {"layer", cfg.layer}, {"entries", entries}, {"summary", summary}}));
  write_text(dir / "config.json", dump(resolved));
  out << "wrote " << items.size() << " overlays to " << (dir / "overlays").string() << '\n';
  if (labelled > 0 && correct > 0) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "localization hit rate %.4f over %zu correctly classified images\n",
                  static_cast<double>(hits) / static_cast<double>(correct), correct);
    out << buf;
  }
  return kExitOk;
}

int cmd_report(const RunConfig& cfg, const json& resolved, std::ostream& out, const Log&) {
  std::vector<ResultRow> rows;
  for (const auto& p : cfg.inputs) {
    const std::string text = read_text(p);
    try {
      auto part = parse_result_csv(text);
      rows.insert(rows.end(), part.begin(), part.end());
    } catch (const FormatError& e) {
      throw CliError(kExitFormat, "'" + p + "': " + e.what());
    }
  }
  if (rows.empty()) throw CliError(kExitData, "the results files hold no rows");
  const ResultRow best = rows[best_row(rows)];
  sort_report(rows);

  const fs::path dir = output_dir(cfg);
  fs::create_directories(dir);
  write_text(dir / "report.csv", results_csv(rows));
  const auto slash = best.model.find('/');
  const std::string student = best.model.substr(0, slash);
  const std::string teacher = slash == std::string::npos ? "" : best.model.substr(slash + 1);
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "rows: %zu\nbest: teacher=%s student=%s alpha=%g temperature=%g accuracy=%.6f precision=%.6f "
                "recall=%.6f f1=%.6f\n",
                rows.size(), teacher.c_str(), student.c_str(), best.alpha, best.temperature, best.accuracy,
                best.precision, best.recall, best.f1);
  write_text(dir / "summary.txt", buf);
  write_text(dir / "best_config.json", dump({{"model", best.model},
                                              {"teacher", teacher},
                                              {"student", student},
                                              {"alpha", best.alpha},
                                              {"temperature", best.temperature},
                                              {"accuracy", best.accuracy},
                                              {"precision", best.precision},
                                              {"recall", best.recall},
                                              {"f1", best.f1}}));
  write_text(dir / "config.json", dump(resolved));
  out << buf;
  return kExitOk;
}

// ---- flag wiring ------------------------------------------------------------

void add_common(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--config", cfg.config_path, "JSON file of dotted keys; flags override it");
  sub->add_option("--out", cfg.out_dir, "Output directory (default $DKD_OUTPUT_ROOT/<command>, root 'runs')");
  sub->add_flag("--quiet", cfg.quiet, "Suppress progress lines");
}

void add_data(CLI::App* sub, RunConfig& cfg) {
  sub->add_flag("--synth", cfg.synth, "Use the generated dataset");
  sub->add_option("--data", cfg.data_dir, "Image directory with one sub-directory per class");
  sub->add_option("--image-size", cfg.image_size, "Resize side for --data images");
  sub->add_option("--data-seed", cfg.data_seed, "Seed for data generation and splitting");
  sub->add_option("--split", cfg.split, "train,validation,test ratios")->delimiter(',')->expected(3);
  sub->add_option("--augment", cfg.augment, "auto (off for --synth), on or off");
  sub->add_option("--synth-classes", cfg.synth_classes, "Generated classes");
  sub->add_option("--synth-size", cfg.synth_size, "Generated image side");
  sub->add_option("--synth-count", cfg.synth_count, "Generated images per class");
  sub->add_option("--synth-noise", cfg.synth_noise, "Gaussian noise level");
}

void add_train(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--epochs", cfg.epochs, "Training epochs");
  sub->add_option("--batch-size", cfg.batch_size, "Minibatch size");
  sub->add_option("--lr", cfg.learning_rate, "Adam learning rate");
  sub->add_option("--precision", cfg.precision, "f32 or f64");
  sub->add_option("--seed", cfg.seed, "Seed for initialization, shuffling and dropout");
}

void add_distill(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--teacher", cfg.teacher_path, "Trained teacher checkpoint");
  sub->add_option("--variant", cfg.variant, "Soft loss: kl or ce");
  sub->add_flag("--t-squared", cfg.t_squared, "Scale the soft loss by T^2");
}

int dispatch(RunConfig& cfg, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  if (!cfg.config_path.empty()) apply_config_file(cfg, sub);
  validate(cfg);
  const json resolved = resolved_config(cfg, sub);
  const Log log(err, cfg.quiet);
  if (cfg.command == "train-teacher") return cmd_train_teacher(cfg, resolved, out, log);
  if (cfg.command == "distill") return cmd_distill(cfg, resolved, out, log);
  if (cfg.command == "sweep") return cmd_sweep(cfg, resolved, out, log);
  if (cfg.command == "eval") return cmd_eval(cfg, resolved, out, log);
  if (cfg.command == "explain") return cmd_explain(cfg, resolved, out, log);
  return cmd_report(cfg, resolved, out, log);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Knowledge distillation toolkit: teachers, distilled students, sweeps and Grad-CAM", "dkd"};
  app.require_subcommand(1);

  auto* tt = app.add_subcommand("train-teacher", "Train a teacher network");
  add_common(tt, cfg);
  add_data(tt, cfg);
  add_train(tt, cfg);
  tt->add_option("--archetype", cfg.archetype, "residual or silu_net");
  tt->add_option("--width", cfg.teacher_width, "Channel width");
  tt->add_option("--depth", cfg.teacher_depth, "Block count");

  auto* ds = app.add_subcommand("distill", "Distill a teacher into the compact student");
  add_common(ds, cfg);
  add_data(ds, cfg);
  add_train(ds, cfg);
  add_distill(ds, cfg);
  ds->add_option("--alpha", cfg.alpha, "Weight of the hard loss");
  ds->add_option("--temperature", cfg.temperature, "Softmax temperature");

  auto* sw = app.add_subcommand("sweep", "Random search over temperature for several alphas");
  add_common(sw, cfg);
  add_data(sw, cfg);
  add_train(sw, cfg);
  add_distill(sw, cfg);
  sw->add_option("--coarse", cfg.coarse, "Coarse temperature draws per alpha");
  sw->add_option("--fine", cfg.fine, "Refinement draws per alpha");
  sw->add_option("--alphas", cfg.alphas, "Alpha values")->delimiter(',');
  sw->add_option("--save-checkpoints", cfg.save_checkpoints, "Keep one checkpoint per trial (true/false)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, cfg);
  add_data(ev, cfg);
  ev->add_option("--checkpoint", cfg.checkpoint, "Model checkpoint");
  ev->add_option("--split-name", cfg.split_name, "train, validation, test or all");
  ev->add_option("--averaging", cfg.averaging, "macro or weighted");

  auto* ex = app.add_subcommand("explain", "Grad-CAM overlays");
  add_common(ex, cfg);
  add_data(ex, cfg);
  ex->add_option("--checkpoint", cfg.checkpoint, "Model checkpoint");
  ex->add_option("--split-name", cfg.split_name, "Dataset split to explain");
  ex->add_option("--input", cfg.inputs, "Image files (.ppm/.png) instead of a dataset");
  ex->add_option("--limit", cfg.limit, "Explain at most this many samples (0: all)");
  ex->add_option("--layer", cfg.layer, "Capture point");
  ex->add_option("--target", cfg.target, "predicted, true or a class index");
  ex->add_option("--cam-target", cfg.cam_target, "Score to differentiate: logit or log_odds");

  auto* rp = app.add_subcommand("report", "Merge results CSVs");
  add_common(rp, cfg);
  rp->add_option("inputs", cfg.inputs, "Results CSV files");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const CLI::App* sub = app.get_subcommands().front();
  cfg.command = sub->get_name();
  try {
    return dispatch(cfg, *sub, out, err);
  } catch (const CliError& e) {
    err << "error: " << e.what() << '\n';
    return e.code;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace dkd
