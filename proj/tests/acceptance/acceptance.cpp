// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// writes the measured numbers to <work>/acceptance.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dkd/checkpoint.hpp"
#include "dkd/cli.hpp"
#include "dkd/distill.hpp"
#include "dkd/explain.hpp"
#include "dkd/grad_check.hpp"
#include "dkd/metrics.hpp"
#include "dkd/train.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace dkd;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
  json numbers = json::object();
};

struct Context {
  fs::path work;
  json report = json::object();
};

// ---- CLI plumbing -----------------------------------------------------------

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void require_ok(const CliRun& r, const std::string& what) {
  if (r.code != 0) throw std::runtime_error(what + " exited " + std::to_string(r.code) + ": " + r.err);
}

json read_json(const fs::path& p) { return json::parse(dkd::testing::read_file(p)); }

double test_accuracy(const fs::path& run_dir) { return read_json(run_dir / "metrics.json")["metrics"]["accuracy"]; }

const std::vector<std::string> kData = {"--synth", "--data-seed", "0", "--quiet"};

std::vector<std::string> args(std::vector<std::string> head, const std::vector<std::string>& tail = kData) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

// Teacher then student with the desk-scale recipe, into `dir`.
std::pair<double, double> desk_run(const fs::path& dir) {
  require_ok(cli(args({"train-teacher", "--epochs", "20", "--seed", "0", "--out", (dir / "teacher").string()})),
             "train-teacher");
  require_ok(cli(args({"distill", "--teacher", (dir / "teacher" / "teacher.dkdc").string(), "--alpha", "0.3",
                       "--temperature", "10", "--epochs", "20", "--seed", "0", "--out", (dir / "student").string()})),
             "distill");
  return {test_accuracy(dir / "teacher"), test_accuracy(dir / "student")};
}

DatasetSplit default_split() {
  SynthSpec spec;
  return split(synth_generate(spec), synth_class_names(spec.classes), {2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0}, 0);
}

// ---- gradient helpers -------------------------------------------------------

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, lo, hi));
  return t;
}

// Keeps every value at least `margin` away from the kink at zero.
template <typename T>
Tensor<T> away_from_zero(Tensor<T> t, double margin) {
  for (auto& v : t.values()) {
    if (std::abs(v) < margin) v = static_cast<T>(v < 0 ? v - margin : v + margin);
  }
  return t;
}

// Distinct values `step` apart in random order, so no pooling window ties.
template <typename T>
Tensor<T> spaced_values(Shape shape, Rng& rng, double step) {
  Tensor<T> t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_range(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) {
    t[i] = static_cast<T>(step * (static_cast<double>(order[i]) - 0.5 * static_cast<double>(order.size())));
  }
  return t;
}

// Weights for a linear probe, |w| in [0.5, 1] with random sign.
template <typename T>
Tensor<T> probe_weights(Shape shape, Rng& rng) {
  Tensor<T> t = random_tensor<T>(std::move(shape), rng, 0.5, 1.0);
  for (auto& v : t.values()) {
    if (uniform01(rng) < 0.5) v = -v;
  }
  return t;
}

template <typename T>
Var<T> probe(Tape<T>& tape, const Var<T>& y, const Tensor<T>& w) {
  return sum(mul(y, tape.constant(w)));
}

template <typename T>
struct OpCase {
  std::string name;
  ScalarFn<T> fn;
  std::vector<Tensor<T>> inputs;
};

// Every draw happens in double, so op_cases<float> and op_cases<double> for
// one seed describe the same functions at (rounded) the same points.
template <typename T>
std::vector<OpCase<T>> op_cases(std::uint64_t seed) {
  Rng rng = make_rng({seed, 0x67726164});
  using In = std::span<const Var<T>>;
  std::vector<OpCase<T>> cases;
  {
    const auto w = probe_weights<T>({2, 4, 3, 3}, rng);
    const std::vector<Tensor<T>> in = {random_tensor<T>({2, 3, 5, 5}, rng), random_tensor<T>({4, 3, 3, 3}, rng),
                                       random_tensor<T>({4}, rng)};
    cases.push_back(
        {"conv2d", [w](Tape<T>& t, In x) { return probe(t, conv2d(x[0], x[1], x[2], {2, 2}, Padding::same), w); }, in});
    cases.push_back(
        {"conv2d", [w](Tape<T>& t, In x) { return probe(t, conv2d(x[0], x[1], x[2], {1, 1}, Padding::valid), w); },
         in});
  }
  {
    const auto x = spaced_values<T>({1, 2, 5, 5}, rng, 0.05);
    const auto w1 = probe_weights<T>({1, 2, 5, 5}, rng), w2 = probe_weights<T>({1, 2, 2, 2}, rng);
    cases.push_back(
        {"maxpool2d", [w1](Tape<T>& t, In v) { return probe(t, maxpool2d(v[0], {2, 2}, {1, 1}, Padding::same), w1); },
         {x}});
    cases.push_back(
        {"maxpool2d", [w2](Tape<T>& t, In v) { return probe(t, maxpool2d(v[0], {2, 2}, {2, 2}, Padding::valid), w2); },
         {x}});
  }
  {
    const auto w = probe_weights<T>({3, 4}, rng);
    cases.push_back({"dense", [w](Tape<T>& t, In x) { return probe(t, dense(x[0], x[1], x[2]), w); },
                     {random_tensor<T>({3, 6}, rng), random_tensor<T>({6, 4}, rng), random_tensor<T>({4}, rng)}});
  }
  const auto w35 = probe_weights<T>({3, 5}, rng);
  cases.push_back({"leaky_relu", [w35](Tape<T>& t, In x) { return probe(t, leaky_relu(x[0], T(0.2)), w35); },
                   {away_from_zero(random_tensor<T>({3, 5}, rng, -2, 2), 0.05)}});
  cases.push_back({"silu", [w35](Tape<T>& t, In x) { return probe(t, silu(x[0]), w35); },
                   {random_tensor<T>({3, 5}, rng, -3, 3)}});
  cases.push_back({"softmax", [w35](Tape<T>& t, In x) { return probe(t, softmax(x[0]), w35); },
                   {random_tensor<T>({3, 5}, rng, -3, 3)}});
  const std::vector<int> labels = {0, 2, 1, 2};
  cases.push_back({"hard_loss",
                   [labels](Tape<T>&, In x) { return hard_loss(softmax(x[0]), std::span<const int>(labels)); },
                   {random_tensor<T>({4, 3}, rng, -3, 3)}});
  cases.push_back({"hard_loss",
                   [labels](Tape<T>&, In x) { return hard_loss_from_logits(x[0], std::span<const int>(labels)); },
                   {random_tensor<T>({4, 3}, rng, -3, 3)}});
  const auto teacher = random_tensor<T>({4, 3}, rng, -4, 4);
  cases.push_back({"soft_loss_kl",
                   [teacher](Tape<T>&, In x) { return soft_loss(teacher, x[0], T(4), SoftVariant::kl_divergence); },
                   {random_tensor<T>({4, 3}, rng, -3, 3)}});
  return cases;
}

// The student's inference path written out op by op over explicit inputs
// {images, conv1.w, conv1.b, ..., dense.w, dense.b}. Dropout is the identity
// at inference and is left out.
template <typename T>
Var<T> dcsnet_logits(std::span<const Var<T>> in) {
  Var<T> h = in[0];
  for (std::size_t s = 0; s < 4; ++s) {
    h = conv2d(h, in[1 + 2 * s], in[2 + 2 * s], {2, 2}, Padding::same);
    h = maxpool2d(leaky_relu(h, T(0.2)), {2, 2}, {1, 1}, Padding::same);
  }
  return dense(flatten(h), in[9], in[10]);
}

// ---- criteria ---------------------------------------------------------------

Outcome c1_architecture(Context&) {
  const auto t0 = Clock::now();
  const std::size_t n = build_dcsnet<float>({3, 224, 224}, 3).param_count();
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = n == 668931 && secs < 1.0;
  o.detail = fmt("DCSNet 3x224x224 -> 3 has %zu parameters (expected 668931) in %.3f s", n, secs);
  o.numbers = {{"parameters", n}, {"seconds", secs}};
  return o;
}

template <typename T>
ScalarFn<T> composite_loss(const Tensor<T>& teacher, const std::vector<int>& labels) {
  return [teacher, labels](Tape<T>&, std::span<const Var<T>> in) {
    const Var<T> z = dcsnet_logits<T>(in);
    return total_loss(hard_loss(softmax(z), std::span<const int>(labels)),
                      soft_loss(teacher, z, T(10), SoftVariant::kl_divergence), T(0.3));
  };
}

Outcome c2_gradients(Context&) {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst64, worst32;
  GradCheckOptions opt;
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    const auto c64 = op_cases<double>(seed);
    const auto c32 = op_cases<float>(seed);
    opt.seed = seed;
    for (std::size_t i = 0; i < c64.size(); ++i) {
      auto& w64 = worst64[c64[i].name];
      w64 = std::max(w64, grad_check<double>(c64[i].fn, c64[i].inputs, opt).max_rel_error);
      auto& w32 = worst32[c32[i].name];
      w32 = std::max(w32, grad_check(c32[i].fn, c64[i].fn, c32[i].inputs, opt).max_rel_error);
    }
  }

  // Composite: the 32x32 student with a mixed hard/soft objective, on a
  // sample of coordinates per tensor.
  double logit_gap = 0.0;
  for (std::uint64_t seed : {11u, 12u}) {
    const auto model = build_dcsnet<double>({3, 32, 32}, 3, seed);
    Rng rng = make_rng({seed, 0x636f6d70});
    std::vector<Tensor<double>> inputs = {random_tensor<double>({2, 3, 32, 32}, rng, 0.0, 1.0)};
    for (const auto& p : model.params()) inputs.push_back(p.tensor);
    if (inputs.size() != 11) throw std::runtime_error("unexpected student parameter layout");
    {
      Tape<double> tape;
      std::vector<Var<double>> vars;
      for (const auto& t : inputs) vars.push_back(tape.constant(t));
      const auto mine = dcsnet_logits<double>(vars).value();
      const auto ref = forward_logits(model, inputs[0]);
      for (std::size_t i = 0; i < ref.size(); ++i) logit_gap = std::max(logit_gap, std::abs(mine[i] - ref[i]));
    }
    const auto teacher = random_tensor<double>({2, 3}, rng, -4, 4);
    const std::vector<int> labels = {1, 2};
    std::vector<Tensor<float>> inputs32;
    for (const auto& t : inputs) inputs32.push_back(t.cast<float>());
    GradCheckOptions sampled;
    sampled.samples_per_input = 6;
    sampled.seed = seed;
    const auto f64 = composite_loss<double>(teacher, labels);
    worst64["dcsnet_composite"] =
        std::max(worst64["dcsnet_composite"], grad_check<double>(f64, inputs, sampled).max_rel_error);
    worst32["dcsnet_composite"] =
        std::max(worst32["dcsnet_composite"],
                 grad_check(composite_loss<float>(teacher.cast<float>(), labels), f64, inputs32, sampled).max_rel_error);
  }
  const double secs = seconds_since(t0);

  auto worst = [](const std::map<std::string, double>& m) {
    std::pair<std::string, double> w{"", 0.0};
    for (const auto& [k, v] : m) {
      if (v >= w.second) w = {k, v};
    }
    return w;
  };
  const auto [name64, max64] = worst(worst64);
  const auto [name32, max32] = worst(worst32);
  Outcome o;
  o.pass = max64 < 1e-5 && max32 < 1e-3 && logit_gap < 1e-12 && secs < 60.0;
  o.detail = fmt("%zu ops incl. the DCSNet composite, 3 seeds; max rel error f64 %.2e (%s), f32 %.2e (%s); "
                 "composite matches the model forward to %.1e; %.1f s",
                 worst64.size(), max64, name64.c_str(), max32, name32.c_str(), logit_gap, secs);
  o.numbers = {{"f64", worst64}, {"f32", worst32}, {"composite_logit_gap", logit_gap}, {"seconds", secs}};
  return o;
}

Outcome c3_distillation_math(Context&) {
  const auto t0 = Clock::now();
  Rng rng = make_rng({7, 0x6d617468});
  std::vector<double> grid;
  for (int i = 0; i < 20; ++i) grid.push_back(0.5 * std::pow(200.0, i / 19.0));

  double sum_gap = 0.0;
  bool argmax_ok = true, entropy_ok = true;
  const auto logits = random_tensor<double>({50, 5}, rng, -8, 8);
  const auto logits32 = logits.cast<float>();
  const auto base = argmax_rows(logits);
  std::vector<double> prev(50, -1.0);
  for (double t : grid) {
    const auto p = soften(logits, t);
    const auto p32 = soften(logits32, static_cast<float>(t));
    if (argmax_rows(p) != base) argmax_ok = false;
    for (std::size_t r = 0; r < 50; ++r) {
      double s = 0.0, s32 = 0.0, h = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        const double v = p[r * 5 + c];
        s += v;
        s32 += p32[r * 5 + c];
        if (v > 0.0) h -= v * std::log(v);
      }
      sum_gap = std::max({sum_gap, std::abs(s - 1.0), std::abs(s32 - 1.0)});
      if (h < prev[r] - 1e-12) entropy_ok = false;
      prev[r] = h;
    }
  }

  double min_kl = 1e300, self_kl = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto a = random_tensor<double>({1, 4}, rng, -5, 5), b = random_tensor<double>({1, 4}, rng, -5, 5);
    const double t = grid[static_cast<std::size_t>(i) % grid.size()];
    min_kl = std::min(min_kl, soft_loss(a, b, t, SoftVariant::kl_divergence));
    self_kl = std::max(self_kl, std::abs(soft_loss(a, a, t, SoftVariant::kl_divergence)));
  }

  double grad_gap = 0.0;
  for (double t : {1.0, 2.0, 5.0, 10.0, 50.0}) {
    const auto teacher = random_tensor<double>({4, 5}, rng, -5, 5);
    const auto student = random_tensor<double>({4, 5}, rng, -5, 5);
    auto grad = [&](SoftVariant v) {
      Tape<double> tape;
      const auto s = tape.parameter(student);
      return tape.backward(soft_loss(teacher, s, t, v))[s];
    };
    const auto gk = grad(SoftVariant::kl_divergence), gc = grad(SoftVariant::cross_entropy);
    for (std::size_t i = 0; i < gk.size(); ++i) grad_gap = std::max(grad_gap, std::abs(gk[i] - gc[i]));
  }

  bool endpoints = true;
  for (int i = 0; i < 100; ++i) {
    const double h = uniform(rng, 0, 5), s = uniform(rng, 0, 5);
    endpoints = endpoints && total_loss(h, s, 0.0) == s && total_loss(h, s, 1.0) == h;
    Tape<double> tape;
    const auto hv = tape.constant(Tensor<double>::scalar(h)), sv = tape.constant(Tensor<double>::scalar(s));
    endpoints = endpoints && total_loss(hv, sv, 0.0).value()[0] == s && total_loss(hv, sv, 1.0).value()[0] == h;
  }
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = sum_gap <= 1e-6 && argmax_ok && entropy_ok && min_kl >= 0.0 && self_kl <= 1e-7 && grad_gap <= 1e-6 &&
           endpoints && secs < 10.0;
  o.detail = fmt("row sums within %.1e, argmax %s, entropy monotone %s, min KL %.2e, KL(z||z) %.1e, CE/KL grad gap "
                 "%.1e, endpoints %s; %.2f s",
                 sum_gap, argmax_ok ? "invariant" : "CHANGED", entropy_ok ? "yes" : "NO", min_kl, self_kl, grad_gap,
                 endpoints ? "exact" : "INEXACT", secs);
  o.numbers = {{"sum_gap", sum_gap}, {"min_kl", min_kl}, {"self_kl", self_kl}, {"grad_gap", grad_gap}};
  return o;
}

Outcome c4_metrics(Context&) {
  const auto t0 = Clock::now();
  std::size_t mismatches = 0;
  for (std::uint64_t c = 0; c < 100; ++c) {
    Rng rng = make_rng({c, 0x636f756e74});
    const auto k = static_cast<std::size_t>(uniform_int(rng, 2, 6));
    const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 200));
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(k) - 1));
      pred[i] = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(k) - 1));
    }
    const auto r = metrics(confusion(truth, pred, k));
    const auto ref = dkd::testing::ref_counts(truth, pred, k);
    std::size_t right = 0;
    for (std::size_t i = 0; i < n; ++i) right += truth[i] == pred[i];
    bool ok = r.accuracy == static_cast<double>(right) / static_cast<double>(n);
    for (std::size_t j = 0; j < k; ++j) {
      const auto& m = r.per_class[j];
      const auto& e = ref[j];
      const double p = e.tp + e.fp ? double(e.tp) / double(e.tp + e.fp) : 0.0;
      const double rc = e.tp + e.fn ? double(e.tp) / double(e.tp + e.fn) : 0.0;
      const double f1 = p + rc > 0.0 ? 2.0 * p * rc / (p + rc) : 0.0;
      ok = ok && m.tp == e.tp && m.fp == e.fp && m.fn == e.fn && m.tn == e.tn && m.precision == p && m.recall == rc &&
           m.f1 == f1;
    }
    mismatches += !ok;
  }

  ConfusionMatrix cm(3, {"ACA", "BN", "SCC"});
  const std::uint64_t rows[3][3] = {{429, 7, 64}, {0, 499, 1}, {51, 0, 449}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) cm.at(i, j) = rows[i][j];
  const auto r = metrics(cm);
  const double rounded = std::round(r.accuracy * 100.0) / 100.0;
  const auto& fn = r.false_negatives;
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = mismatches == 0 && r.accuracy == 0.918 && rounded == 0.92 && fn[0] == 71 && fn[2] == 51 && fn[1] == 1 &&
           secs < 5.0;
  o.detail = fmt("%zu/100 random cases differ from the brute-force counter; lung matrix accuracy %.3f (%.2f), "
                 "FN ACA=%llu SCC=%llu BN=%llu",
                 mismatches, r.accuracy, rounded, static_cast<unsigned long long>(fn[0]),
                 static_cast<unsigned long long>(fn[2]), static_cast<unsigned long long>(fn[1]));
  o.numbers = {{"mismatches", mismatches}, {"accuracy", r.accuracy}, {"fn", fn}};
  return o;
}

Outcome c5_desk_scale(Context& ctx) {
  const auto t0 = Clock::now();
  const auto data = default_split();
  const bool sizes = data.train.size() == 600 && data.validation.size() == 150 && data.test.size() == 150;
  const auto [teacher, student] = desk_run(ctx.work / "c5");
  const std::size_t test_n = read_json(ctx.work / "c5" / "student" / "metrics.json")["samples"];
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = sizes && test_n == 150 && teacher >= 0.95 && student >= 0.90 && secs < 600.0;
  o.detail = fmt("split %zu/%zu/%zu; teacher test accuracy %.4f (>= 0.95, 20 epochs), student alpha=0.3 T=10 %.4f "
                 "(>= 0.90); %.0f s",
                 data.train.size(), data.validation.size(), data.test.size(), teacher, student, secs);
  o.numbers = {{"teacher_accuracy", teacher}, {"student_accuracy", student}, {"seconds", secs}};
  return o;
}

fs::path teacher_checkpoint(Context& ctx) {
  const fs::path p = ctx.work / "c5" / "teacher" / "teacher.dkdc";
  if (!fs::exists(p)) desk_run(ctx.work / "c5");
  return p;
}

Outcome c6_distillation_benefit(Context& ctx) {
  const auto t0 = Clock::now();
  const std::string teacher = teacher_checkpoint(ctx).string();
  std::vector<double> diffs;
  json pairs = json::array();
  for (int seed = 1; seed <= 5; ++seed) {
    double acc[2];
    for (int arm = 0; arm < 2; ++arm) {
      const fs::path dir = ctx.work / "c6" / fmt("seed%d_%s", seed, arm == 0 ? "distilled" : "hard");
      require_ok(cli(args({"distill", "--teacher", teacher, "--alpha", arm == 0 ? "0.3" : "1", "--temperature", "10",
                           "--epochs", "20", "--seed", std::to_string(seed), "--out", dir.string()})),
                 "distill");
      acc[arm] = test_accuracy(dir);
    }
    diffs.push_back(acc[0] - acc[1]);
    pairs.push_back({{"seed", seed}, {"distilled", acc[0]}, {"hard", acc[1]}});
  }
  const auto wins = std::count_if(diffs.begin(), diffs.end(), [](double d) { return d >= 0.0; });
  std::vector<double> sorted = diffs;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[2];
  const double secs = seconds_since(t0);
  std::string list;
  for (const auto& p : pairs) list += fmt(" %.3f/%.3f", p["distilled"].get<double>(), p["hard"].get<double>());
  Outcome o;
  o.pass = wins >= 3 && median >= 0.0 && secs < 1800.0;
  o.detail = fmt("distilled >= hard-only in %d/5 seeds, median difference %+.4f (distilled/hard:%s); %.0f s",
                 static_cast<int>(wins), median, list.c_str(), secs);
  o.numbers = {{"pairs", pairs}, {"median_difference", median}, {"seconds", secs}};
  return o;
}

Outcome c7_determinism(Context& ctx) {
  const auto t0 = Clock::now();
  teacher_checkpoint(ctx);
  desk_run(ctx.work / "c7");
  const std::vector<std::string> files = {
      "teacher/teacher.dkdc",   "teacher/history.csv",   "teacher/metrics.json", "teacher/confusion.csv",
      "student/student.dkdc",   "student/history.csv",   "student/metrics.json", "student/confusion.csv",
      "student/results.csv"};
  std::vector<std::string> differ;
  for (const auto& f : files) {
    if (dkd::testing::read_file(ctx.work / "c5" / f) != dkd::testing::read_file(ctx.work / "c7" / f)) {
      differ.push_back(f);
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = differ.empty();
  o.detail = fmt("%zu/%zu checkpoint and metrics files byte-identical across repeated seeded runs%s; %.0f s",
                 files.size() - differ.size(), files.size(), differ.empty() ? "" : (" (differ: " + differ[0] + ")").c_str(),
                 secs);
  o.numbers = {{"differing", differ}, {"seconds", secs}};
  return o;
}

Outcome c8_grad_cam(Context& ctx) {
  const auto t0 = Clock::now();
  teacher_checkpoint(ctx);
  const fs::path student = ctx.work / "c5" / "student" / "student.dkdc";
  const fs::path dir = ctx.work / "c8";
  require_ok(cli(args({"explain", "--checkpoint", student.string(), "--out", dir.string()})), "explain");
  const json index = read_json(dir / "index.json");
  const double hit_rate = index["summary"]["hit_rate"];
  const std::size_t correct = index["summary"]["correct"];
  std::map<int, std::pair<int, int>> per_class;
  for (const auto& e : index["entries"]) {
    if (!e["correct"].get<bool>()) continue;
    auto& [hits, n] = per_class[e["true_class"].get<int>()];
    hits += e["localization_hit"].get<bool>();
    ++n;
  }
  std::string classes;
  for (const auto& [c, hn] : per_class) classes += fmt(" %d:%.2f", c, double(hn.first) / hn.second);

  // A class whose dense column is zero has no gradient at any capture point.
  const auto ck = load_checkpoint(student);
  const auto data = default_split();
  bool zero_maps = true;
  std::size_t checked = 0;
  for (std::size_t k = 0; k < ck.model.num_classes(); ++k) {
    ModelGraph<float> m = ck.model;
    Tensor<float>& w = m.params()[m.params().size() - 2].tensor;
    for (std::size_t i = 0; i < w.dim(0); ++i) w[i * w.dim(1) + k] = 0.0f;
    for (std::size_t i = 0; i < data.test.size(); i += 5) {
      const auto hm = grad_cam(m, data.test[i].image, k);
      zero_maps = zero_maps && std::all_of(hm.values.values().begin(), hm.values.values().end(),
                                           [](float v) { return v == 0.0f; });
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = hit_rate >= 0.8 && zero_maps && secs < 120.0;
  o.detail = fmt("localization hit rate %.3f over %zu correct test images (need >= 0.80; per class%s); "
                 "zero-gradient targets give all-zero maps: %s (%zu maps); %.0f s",
                 hit_rate, correct, classes.c_str(), zero_maps ? "yes" : "NO", checked, secs);
  o.numbers = {{"hit_rate", hit_rate}, {"correct", correct}, {"zero_maps", zero_maps}, {"seconds", secs}};
  return o;
}

Outcome c9_sweep(Context& ctx) {
  const auto t0 = Clock::now();
  const std::string teacher = teacher_checkpoint(ctx).string();
  for (const char* run : {"a", "b"}) {
    require_ok(cli(args({"sweep", "--teacher", teacher, "--epochs", "1", "--seed", "0", "--save-checkpoints", "false",
                         "--out", (ctx.work / "c9" / run).string()})),
               "sweep");
  }
  const std::string csv = dkd::testing::read_file(ctx.work / "c9" / "a" / "sweep.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  const bool header = line == kResultHeader;
  std::size_t rows = 0, well_formed = 0;
  while (std::getline(lines, line)) {
    ++rows;
    try {
      const auto parsed = parse_result_csv(std::string(kResultHeader) + "\n" + line + "\n");
      well_formed += parsed.size() == 1 && format_result_row(parsed[0]) == line;
    } catch (const Error&) {
    }
  }
  bool same = true;
  for (const char* f : {"sweep.csv", "trials.csv", "best_config.json"}) {
    same = same && dkd::testing::read_file(ctx.work / "c9" / "a" / f) ==
                       dkd::testing::read_file(ctx.work / "c9" / "b" / f);
  }
  const json best = read_json(ctx.work / "c9" / "a" / "best_config.json");
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = header && rows == 65 && well_formed == 65 && same && secs < 1800.0;
  o.detail = fmt("%zu rows (%zu well-formed) under the results header, repeat run %s; best alpha=%.1f T=%g "
                 "accuracy %.4f at 1 epoch per trial; %.0f s",
                 rows, well_formed, same ? "byte-identical" : "DIFFERS", best["alpha"].get<double>(),
                 best["temperature"].get<double>(), best["accuracy"].get<double>(), secs);
  o.numbers = {{"rows", rows}, {"well_formed", well_formed}, {"identical", same}, {"seconds", secs}};
  return o;
}

Outcome c10_alpha_one(Context& ctx) {
  const auto t0 = Clock::now();
  const auto teacher = load_checkpoint(teacher_checkpoint(ctx)).model;
  const auto data = default_split();
  TrainConfig tc;
  tc.epochs = 5;
  std::vector<std::string> trace_a, trace_b;
  auto distilled = build_dcsnet<float>({3, 32, 32}, 3, 0), plain = distilled;
  tc.on_epoch = [&](const EpochRecord& r) { trace_a.push_back(fmt("%.17g,%.17g", r.train_loss, r.val_loss)); };
  const auto ha = distill_student(teacher, distilled, data, DistillConfig{10.0, 1.0}, tc);
  tc.on_epoch = [&](const EpochRecord& r) { trace_b.push_back(fmt("%.17g,%.17g", r.train_loss, r.val_loss)); };
  const auto hb = train_supervised(plain, data, tc);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < plain.params().size(); ++i) {
    const auto a = distilled.params()[i].tensor.values(), b = plain.params()[i].tensor.values();
    differing += std::memcmp(a.data(), b.data(), a.size_bytes()) != 0;
  }
  const bool trace = trace_a == trace_b && ha.to_csv() == hb.to_csv() && ha.selected_epoch == hb.selected_epoch;
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = trace && differing == 0;
  o.detail = fmt("%zu epochs: loss trace %s, %zu/%zu parameter tensors differ bitwise; %.0f s", tc.epochs,
                 trace ? "identical" : "DIFFERS", differing, plain.params().size(), secs);
  o.numbers = {{"epochs", tc.epochs}, {"trace_identical", trace}, {"differing_tensors", differing}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria run"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  std::vector<int> known_red;
  app.add_option("--work", work, "Scratch directory for runs and the report");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--known-red", known_red, "Criteria whose failure is documented and does not fail the run")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Context ctx{fs::absolute(work)};
  for (const char* sub : {"c5", "c6", "c7", "c8", "c9"}) fs::remove_all(ctx.work / sub);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria = {
      {"architecture oracle", c1_architecture},
      {"gradient suite", c2_gradients},
      {"distillation math", c3_distillation_math},
      {"metrics oracle", c4_metrics},
      {"desk-scale end-to-end", c5_desk_scale},
      {"distillation benefit", c6_distillation_benefit},
      {"determinism", c7_determinism},
      {"grad-cam localization", c8_grad_cam},
      {"sweep harness", c9_sweep},
      {"alpha=1 equivalence", c10_alpha_one},
  };

  const std::set<int> red(known_red.begin(), known_red.end());
  int failed = 0, unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << ' ' << id << ' ' << criteria[i].first << ": " << o.detail << std::endl;
    ctx.report[std::to_string(id)] = {{"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail},
                                      {"numbers", o.numbers}};
    if (!o.pass) {
      ++failed;
      if (!red.contains(id)) ++unexpected;
    }
  }
  std::ofstream(ctx.work / "acceptance.json") << ctx.report.dump(2) << '\n';
  std::cout << "summary: " << failed << " failing";
  if (!red.empty()) {
    std::cout << " (documented known-red:";
    for (int id : red) std::cout << ' ' << id;
    std::cout << ")";
  }
  std::cout << ", " << unexpected << " unexpected" << std::endl;
  return unexpected == 0 ? 0 : 1;
}
