#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dkd {

// k x k counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k, std::vector<std::string> class_names = {});

  std::size_t classes() const noexcept { return k_; }
  const std::vector<std::string>& class_names() const noexcept { return names_; }

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * k_ + predicted); }
  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts_.at(truth * k_ + predicted); }

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t predicted) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::string> names_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t k,
                          std::vector<std::string> class_names = {});

enum class Averaging { macro, weighted };

std::string_view to_string(Averaging a);
Averaging averaging_from_string(std::string_view s);

struct ClassMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the denominator was zero and the value defaulted to 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  // Averages over classes, unweighted (macro) or weighted by class support.
  Averaging averaging = Averaging::macro;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<std::uint64_t> false_negatives;
  std::vector<std::string> class_names;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
};

// One-vs-rest counts per class. Throws ContractError on an empty matrix.
MetricsReport metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::macro);

// Row sum minus diagonal, per class.
std::vector<std::uint64_t> per_class_fn(const ConfusionMatrix& cm);

// Header row "true\\pred,<names...>", then one row per true class.
std::string confusion_csv(const ConfusionMatrix& cm);
ConfusionMatrix parse_confusion_csv(std::string_view text);

// The results-table layout shared by distill, sweep and report outputs.
struct ResultRow {
  std::string model;
  std::uint64_t parameters = 0;
  double alpha = 0.0;
  double temperature = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline constexpr std::string_view kResultHeader = "Model,Parameters,Alpha,Temperature,Accuracy,Precision,Recall,F1";

std::string format_result_row(const ResultRow& row);
// Parses CSV text with the header above. Throws FormatError carrying the
// 1-based line number.
std::vector<ResultRow> parse_result_csv(std::string_view text);

}  // namespace dkd
