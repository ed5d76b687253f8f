// SPDX-License-Identifier: Apache-2.0
//
// Survey-style tabular data: ingestion, group splits, k-fold plans,
// standardization and a planted-importance synthetic generator.
//
// Labels are 1-based (1..C) in files and at every public boundary that talks
// about "levels"; SurveyTable stores them 0-based in `labels`.
#ifndef DKG_DATA_HPP
#define DKG_DATA_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "dkg/error.hpp"

namespace dkg {

struct SurveyTable {
  std::vector<std::string> factor_names;
  std::vector<double> values;  // row-major, rows() x cols()
  std::vector<int> labels;     // 0-based class index
  int num_levels = 0;

  std::size_t rows() const noexcept { return labels.size(); }
  std::size_t cols() const noexcept { return factor_names.size(); }

  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols(), cols()};
  }
  std::span<double> row(std::size_t i) {
    return {values.data() + i * cols(), cols()};
  }
  double at(std::size_t i, std::size_t j) const {
    return values[i * cols() + j];
  }
  int level(std::size_t i) const { return labels[i] + 1; }

  std::optional<std::size_t> factor_index(std::string_view name) const {
    auto it = std::find(factor_names.begin(), factor_names.end(), name);
    if (it == factor_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - factor_names.begin());
  }

  // Same schema, no rows.
  SurveyTable empty_like() const {
    SurveyTable t;
    t.factor_names = factor_names;
    t.num_levels = num_levels;
    return t;
  }

  void push_row(std::span<const double> x, int label) {
    values.insert(values.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  SurveyTable select(std::span<const std::size_t> indices) const {
    SurveyTable t = empty_like();
    t.values.reserve(indices.size() * cols());
    t.labels.reserve(indices.size());
    for (std::size_t i : indices) t.push_row(row(i), labels[i]);
    return t;
  }

  bool operator==(const SurveyTable&) const = default;
};

// Throws InvalidConfig when the table breaks a structural invariant.
inline void validate(const SurveyTable& t) {
  require(!t.factor_names.empty(), ErrorKind::InvalidConfig,
          "table has no factors");
  require(t.num_levels >= 2, ErrorKind::InvalidConfig,
          "num_levels must be >= 2");
  require(t.values.size() == t.rows() * t.cols(), ErrorKind::InvalidConfig,
          "value matrix is not rows x cols");
  std::unordered_set<std::string> seen;
  for (const auto& name : t.factor_names) {
    require(seen.insert(name).second, ErrorKind::InvalidConfig,
            "duplicate factor name '" + name + "'");
  }
  for (double v : t.values) {
    require(std::isfinite(v), ErrorKind::InvalidConfig,
            "non-finite factor value");
  }
  for (int y : t.labels) {
    require(y >= 0 && y < t.num_levels, ErrorKind::LabelOutOfRange,
            "label " + std::to_string(y + 1) + " outside 1.." +
                std::to_string(t.num_levels));
  }
}

// Per-level counts, index 0 is level 1.
inline std::vector<std::size_t> label_histogram(const SurveyTable& t) {
  std::vector<std::size_t> h(static_cast<std::size_t>(t.num_levels), 0);
  for (int y : t.labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

// FNV-1a over names, values and labels; used for provenance records.
inline std::uint64_t table_hash(const SurveyTable& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& name : t.factor_names) mix(name.data(), name.size() + 1);
  mix(t.values.data(), t.values.size() * sizeof(double));
  mix(t.labels.data(), t.labels.size() * sizeof(int));
  mix(&t.num_levels, sizeof(int));
  return h;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') {
    out = out.substr(1, out.size() - 2);
  }
  return out;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

inline bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" ||
         cell == "?";
}

inline std::optional<double> parse_double(std::string_view cell) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

struct CsvLoad {
  SurveyTable table;
  std::size_t dropped_rows = 0;  // rows with a missing cell
};

// Reads a header-first CSV. Lines starting with '#' are provenance comments.
// `num_levels` is C; labels in the file must be integers in 1..C.
inline CsvLoad read_csv(std::istream& in, std::string_view label_column,
                        int num_levels, const std::string& source = "<stream>") {
  require(num_levels >= 2, ErrorKind::InvalidConfig, "num_levels must be >= 2");
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = detail::split_csv_line(line);
    break;
  }
  require(!header.empty(), ErrorKind::MissingColumn,
          source + ": no header row");
  auto label_it = std::find(header.begin(), header.end(), label_column);
  require(label_it != header.end(), ErrorKind::MissingColumn,
          source + ": label column '" + std::string(label_column) +
              "' not found");
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());

  CsvLoad out;
  out.table.num_levels = num_levels;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_col) out.table.factor_names.push_back(header[c]);
  }
  require(!out.table.factor_names.empty(), ErrorKind::MissingColumn,
          source + ": no factor columns");

  std::vector<double> row(out.table.factor_names.size());
  std::size_t line_no = 0;  // 1-based data row
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (detail::trim(line).empty()) continue;
    ++line_no;
    auto cells = detail::split_csv_line(line);
    require(cells.size() == header.size(), ErrorKind::NonNumericCell,
            source + ": row " + std::to_string(line_no) + " has " +
                std::to_string(cells.size()) + " cells, expected " +
                std::to_string(header.size()));
    bool missing = false;
    int label = 0;
    std::size_t j = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& cell = cells[c];
      if (detail::is_missing(cell)) {
        missing = true;
        if (c != label_col) ++j;
        continue;
      }
      auto v = detail::parse_double(cell);
      if (!v) {
        fail(ErrorKind::NonNumericCell,
             source + ": non-numeric cell at row " + std::to_string(line_no) +
                 ", column '" + header[c] + "': '" + cell + "'");
      }
      if (c == label_col) {
        if (*v != std::floor(*v)) {
          fail(ErrorKind::NonNumericCell,
               source + ": non-integer label at row " +
                   std::to_string(line_no));
        }
        if (*v < 1 || *v > num_levels) {
          fail(ErrorKind::LabelOutOfRange,
               source + ": label " + cell + " at row " +
                   std::to_string(line_no) + " outside 1.." +
                   std::to_string(num_levels));
        }
        label = static_cast<int>(*v) - 1;
      } else {
        row[j++] = *v;
      }
    }
    if (missing) {
      ++out.dropped_rows;
      continue;
    }
    out.table.push_row(row, label);
  }
  require(out.table.rows() > 0, ErrorKind::EmptyAfterCleaning,
          source + ": no complete rows (" +
              std::to_string(out.dropped_rows) + " dropped)");
  validate(out.table);
  return out;
}

inline CsvLoad load_csv(const std::string& path, std::string_view label_column,
                        int num_levels) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingFile,
          "cannot open '" + path + "'");
  return read_csv(in, label_column, num_levels, path);
}

inline void write_csv(std::ostream& out, const SurveyTable& t,
                      std::string_view label_column,
                      std::string_view provenance = {}) {
  if (!provenance.empty()) out << "# " << provenance << '\n';
  for (const auto& name : t.factor_names) out << name << ',';
  out << label_column << '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (double v : t.row(i)) out << detail::format_double(v) << ',';
    out << t.level(i) << '\n';
  }
}

inline void save_csv(const std::string& path, const SurveyTable& t,
                     std::string_view label_column,
                     std::string_view provenance = {}) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError,
          "cannot write '" + path + "'");
  write_csv(out, t, label_column, provenance);
  require(static_cast<bool>(out), ErrorKind::IoError,
          "write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Group splits

enum class Side { LessEqual, Greater };

struct ThresholdRule {
  double value = 0.0;
  Side side = Side::LessEqual;  // which side forms the in-group
  bool operator==(const ThresholdRule&) const = default;
};

struct LevelSetRule {
  std::set<double> levels;  // in-group values
  bool operator==(const LevelSetRule&) const = default;
};

struct GroupSpec {
  std::string factor;
  std::variant<ThresholdRule, LevelSetRule> rule;
  std::string in_name = "in";
  std::string out_name = "out";

  bool contains(double v) const {
    if (const auto* t = std::get_if<ThresholdRule>(&rule)) {
      return t->side == Side::LessEqual ? v <= t->value : v > t->value;
    }
    return std::get<LevelSetRule>(rule).levels.count(v) > 0;
  }
  bool operator==(const GroupSpec&) const = default;
};

struct GroupSplit {
  SurveyTable in_group;
  SurveyTable out_group;
  // One side empty is reported, not thrown.
  bool has_empty_side() const {
    return in_group.rows() == 0 || out_group.rows() == 0;
  }
};

inline GroupSplit split_group(const SurveyTable& table, const GroupSpec& spec) {
  auto col = table.factor_index(spec.factor);
  require(col.has_value(), ErrorKind::UnknownFactor,
          "group factor '" + spec.factor + "' not in table");
  if (const auto* t = std::get_if<ThresholdRule>(&spec.rule)) {
    require(std::isfinite(t->value), ErrorKind::InvalidConfig,
            "group threshold must be finite");
  } else {
    require(!std::get<LevelSetRule>(spec.rule).levels.empty(),
            ErrorKind::InvalidConfig, "group level set is empty");
  }
  GroupSplit out{table.empty_like(), table.empty_like()};
  for (std::size_t i = 0; i < table.rows(); ++i) {
    auto& dst = spec.contains(table.at(i, *col)) ? out.in_group : out.out_group;
    dst.push_row(table.row(i), table.labels[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-fold

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> assignments;  // fold index per row

  std::vector<std::size_t> test_indices(std::size_t fold) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (assignments[i] == fold) idx.push_back(i);
    }
    return idx;
  }
  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (assignments[i] != fold) idx.push_back(i);
    }
    return idx;
  }
  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(k, 0);
    for (auto a : assignments) ++sizes[a];
    return sizes;
  }
};

inline FoldPlan kfold_split(std::size_t num_rows, std::size_t k,
                            std::uint64_t seed) {
  require(k >= 2, ErrorKind::InvalidConfig, "k must be >= 2");
  require(num_rows >= k, ErrorKind::TooFewRows,
          std::to_string(num_rows) + " rows cannot fill " + std::to_string(k) +
              " folds");
  std::vector<std::size_t> order(num_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan{k, seed, std::vector<std::size_t>(num_rows)};
  for (std::size_t pos = 0; pos < num_rows; ++pos) {
    plan.assignments[order[pos]] = pos % k;
  }
  return plan;
}

inline FoldPlan kfold_split(const SurveyTable& table, std::size_t k,
                            std::uint64_t seed) {
  return kfold_split(table.rows(), k, seed);
}

// ---------------------------------------------------------------------------
// Standardization

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> stddev;      // population stddev
  std::vector<bool> constant;      // stddev == 0, column mapped to 0
  bool operator==(const ColumnStats&) const = default;
};

inline ColumnStats column_stats(const SurveyTable& t) {
  const std::size_t n = t.rows(), J = t.cols();
  ColumnStats s{std::vector<double>(J, 0.0), std::vector<double>(J, 0.0),
                std::vector<bool>(J, false)};
  if (n == 0) return s;
  for (std::size_t j = 0; j < J; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += t.at(i, j);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = t.at(i, j) - mean;
      ss += d * d;
    }
    s.mean[j] = mean;
    s.stddev[j] = std::sqrt(ss / static_cast<double>(n));
    s.constant[j] = !(s.stddev[j] > 1e-12 * std::max(1.0, std::abs(mean)));
  }
  return s;
}

inline SurveyTable apply_standardization(const SurveyTable& t,
                                         const ColumnStats& s) {
  require(s.mean.size() == t.cols(), ErrorKind::DimensionMismatch,
          "standardization stats do not match table width");
  SurveyTable out = t;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = s.constant[j] ? 0.0 : (r[j] - s.mean[j]) / s.stddev[j];
    }
  }
  return out;
}

inline std::vector<double> apply_standardization(std::span<const double> x,
                                                 const ColumnStats& s) {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = s.constant[j] ? 0.0 : (out[j] - s.mean[j]) / s.stddev[j];
  }
  return out;
}

struct Standardized {
  SurveyTable table;
  ColumnStats stats;
};

inline Standardized standardize(const SurveyTable& t) {
  auto stats = column_stats(t);
  return {apply_standardization(t, stats), std::move(stats)};
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthConfig {
  std::size_t rows = 1000;
  std::size_t factors = 8;
  int levels = 5;
  std::vector<double> weights;  // planted importance, non-negative, sums to 1
  double noise = 0.0;
  std::uint64_t seed = 101;
};

inline void validate(const SynthConfig& c) {
  require(c.factors >= 1, ErrorKind::InvalidConfig, "factors must be >= 1");
  require(c.levels >= 2, ErrorKind::InvalidConfig, "levels must be >= 2");
  require(c.rows >= static_cast<std::size_t>(c.levels),
          ErrorKind::InvalidConfig, "rows must be >= levels");
  require(c.weights.size() == c.factors, ErrorKind::InvalidConfig,
          "weights must have one entry per factor");
  double sum = 0.0;
  for (std::size_t j = 0; j < c.weights.size(); ++j) {
    require(std::isfinite(c.weights[j]) && c.weights[j] >= 0.0,
            ErrorKind::InvalidConfig,
            "weights[" + std::to_string(j) + "] must be non-negative");
    sum += c.weights[j];
  }
  require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::InvalidConfig,
          "weights must sum to 1");
  require(std::isfinite(c.noise) && c.noise >= 0.0, ErrorKind::InvalidConfig,
          "noise must be >= 0");
}

struct SynthResult {
  SurveyTable table;
  std::vector<double> latent;                 // s per row
  std::vector<std::size_t> planted_ranking;   // by descending weight
};

// Factors ~ N(0,1); s = w.x + noise*eps; labels by quantile-binning s into
// `levels` equally populated classes.
inline SynthResult synth_generate(const SynthConfig& config) {
  validate(config);
  const std::size_t n = config.rows, J = config.factors;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SynthResult out;
  out.table.num_levels = config.levels;
  for (std::size_t j = 0; j < J; ++j) {
    out.table.factor_names.push_back("x" + std::to_string(j + 1));
  }
  out.table.values.resize(n * J);
  out.latent.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      const double x = normal(rng);
      out.table.values[i * J + j] = x;
      s += config.weights[j] * x;
    }
    out.latent[i] = s + config.noise * normal(rng);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.latent[a] < out.latent[b];
  });
  out.table.labels.resize(n);
  const auto C = static_cast<std::size_t>(config.levels);
  for (std::size_t r = 0; r < n; ++r) {
    out.table.labels[order[r]] = static_cast<int>(r * C / n);
  }

  out.planted_ranking.resize(J);
  std::iota(out.planted_ranking.begin(), out.planted_ranking.end(),
            std::size_t{0});
  std::stable_sort(out.planted_ranking.begin(), out.planted_ranking.end(),
                   [&](std::size_t a, std::size_t b) {
                     return config.weights[a] > config.weights[b];
                   });
  return out;
}

}  // namespace dkg

#endif  // DKG_DATA_HPP
