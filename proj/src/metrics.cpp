#include "dkd/metrics.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "dkd/errors.hpp"

namespace dkd {

ConfusionMatrix::ConfusionMatrix(std::size_t k, std::vector<std::string> class_names)
    : k_(k), names_(std::move(class_names)), counts_(k * k, 0) {
  if (k == 0) throw ContractError("confusion matrix needs at least one class");
  if (names_.empty()) {
    for (std::size_t c = 0; c < k; ++c) names_.push_back("class" + std::to_string(c));
  }
  if (names_.size() != k) throw ContractError("class name count does not match k");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto v : counts_) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t c = 0; c < k_; ++c) n += at(c, c);
  return n;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t n = 0;
  for (std::size_t j = 0; j < k_; ++j) n += at(truth, j);
  return n;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < k_; ++i) n += at(i, predicted);
  return n;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t k,
                          std::vector<std::string> class_names) {
  if (truth.size() != predicted.size()) {
    throw ContractError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                        std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm(k, std::move(class_names));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k) {
      throw ContractError("confusion: label outside [0, " + std::to_string(k) + ") at position " + std::to_string(i));
    }
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

std::string_view to_string(Averaging a) { return a == Averaging::macro ? "macro" : "weighted"; }

Averaging averaging_from_string(std::string_view s) {
  if (s == "macro") return Averaging::macro;
  if (s == "weighted") return Averaging::weighted;
  throw ContractError("unknown averaging '" + std::string(s) + "'");
}

std::vector<std::uint64_t> per_class_fn(const ConfusionMatrix& cm) {
  std::vector<std::uint64_t> fn(cm.classes());
  for (std::size_t c = 0; c < cm.classes(); ++c) fn[c] = cm.row_sum(c) - cm.at(c, c);
  return fn;
}

MetricsReport metrics(const ConfusionMatrix& cm, Averaging averaging) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw ContractError("metrics: confusion matrix is empty");
  const std::size_t k = cm.classes();
  MetricsReport r;
  r.averaging = averaging;
  r.class_names = cm.class_names();
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  r.false_negatives = per_class_fn(cm);
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.tp = cm.at(c, c);
    m.fn = cm.row_sum(c) - m.tp;
    m.fp = cm.col_sum(c) - m.tp;
    m.tn = total - m.tp - m.fn - m.fp;
    if (m.tp + m.fp == 0) {
      m.precision_undefined = true;
      r.notes.push_back("class '" + r.class_names[c] + "' has no predicted positives; precision set to 0");
    } else {
      m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    }
    if (m.tp + m.fn == 0) {
      m.recall_undefined = true;
      r.notes.push_back("class '" + r.class_names[c] + "' has no true samples; recall set to 0");
    } else {
      m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    }
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.per_class.push_back(m);
  }
  for (std::size_t c = 0; c < k; ++c) {
    const double w = averaging == Averaging::macro
                         ? 1.0 / static_cast<double>(k)
                         : static_cast<double>(cm.row_sum(c)) / static_cast<double>(total);
    r.precision += w * r.per_class[c].precision;
    r.recall += w * r.per_class[c].recall;
    r.f1 += w * r.per_class[c].f1;
  }
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    classes.push_back({{"name", class_names[c]},
                       {"tp", m.tp},
                       {"fp", m.fp},
                       {"fn", m.fn},
                       {"tn", m.tn},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"precision_undefined", m.precision_undefined},
                       {"recall_undefined", m.recall_undefined}});
  }
  return {{"accuracy", accuracy},
          {"averaging", std::string(to_string(averaging))},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"false_negatives", false_negatives},
          {"per_class", classes},
          {"notes", notes}};
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\pred";
  for (const auto& n : cm.class_names()) os << ',' << n;
  os << '\n';
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    os << cm.class_names()[i];
    for (std::size_t j = 0; j < cm.classes(); ++j) os << ',' << cm.at(i, j);
    os << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

double parse_double(const std::string& s, std::uint64_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("not a number: '" + s + "'", line, "line");
  return v;
}

std::uint64_t parse_uint(const std::string& s, std::uint64_t line) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || s[0] == '-' || end != s.c_str() + s.size()) throw FormatError("not a count: '" + s + "'", line, "line");
  return v;
}

}  // namespace

ConfusionMatrix parse_confusion_csv(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw FormatError("empty confusion CSV", 1, "line");
  auto header = split_csv_line(lines[0]);
  if (header.size() < 2) throw FormatError("confusion header needs class names", 1, "line");
  std::vector<std::string> names(header.begin() + 1, header.end());
  const std::size_t k = names.size();
  ConfusionMatrix cm(k, names);
  std::size_t row = 0;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    auto cells = split_csv_line(lines[ln]);
    if (cells.size() != k + 1 || row >= k) throw FormatError("malformed confusion row", ln + 1, "line");
    for (std::size_t j = 0; j < k; ++j) cm.at(row, j) = parse_uint(cells[j + 1], ln + 1);
    ++row;
  }
  if (row != k) throw FormatError("confusion CSV has " + std::to_string(row) + " rows, expected " + std::to_string(k), lines.size(), "line");
  return cm;
}

std::string format_result_row(const ResultRow& row) {
  if (row.model.find_first_of(",\n") != std::string::npos) throw ContractError("model name may not contain ',' or newlines");
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%llu,%.4g,%.6g,%.6f,%.6f,%.6f,%.6f", static_cast<unsigned long long>(row.parameters),
                row.alpha, row.temperature, row.accuracy, row.precision, row.recall, row.f1);
  return row.model + buf;
}

std::vector<ResultRow> parse_result_csv(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw FormatError("empty results CSV", 1, "line");
  std::string header(lines[0]);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  if (header != kResultHeader) throw FormatError("unexpected results header '" + header + "'", 1, "line");
  std::vector<ResultRow> rows;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto cells = split_csv_line(lines[ln]);
    const std::uint64_t line_no = ln + 1;
    if (cells.size() != 8) {
      throw FormatError("expected 8 columns, found " + std::to_string(cells.size()), line_no, "line");
    }
    if (cells[0].empty()) throw FormatError("empty model name", line_no, "line");
    ResultRow r{cells[0],
                parse_uint(cells[1], line_no),
                parse_double(cells[2], line_no),
                parse_double(cells[3], line_no),
                parse_double(cells[4], line_no),
                parse_double(cells[5], line_no),
                parse_double(cells[6], line_no),
                parse_double(cells[7], line_no)};
    rows.push_back(r);
  }
  return rows;
}

}  // namespace dkd
