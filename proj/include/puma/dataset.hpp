#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "puma/error.hpp"
#include "puma/rng.hpp"

namespace puma {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LabeledData {
  Matrix X;
  Vector Y;
  std::vector<std::string> column_names;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }
};

struct UnlabeledData {
  Matrix Xtilde;
  std::vector<std::string> column_names;

  Eigen::Index rows() const { return Xtilde.rows(); }
  Eigen::Index cols() const { return Xtilde.cols(); }
};

struct SplitSpec {
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline void check_finite(const Matrix& X, std::string_view what) {
  if (!X.allFinite()) throw Error(std::string(what) + " contains non-finite entries");
}

}  // namespace detail

// Shortest text that reads back as the same double; at most 17 significant digits.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error("failed to format double");
  return std::string(buf, ptr);
}

inline void validate(const LabeledData& d) {
  if (d.X.rows() < 1) throw Error("labeled data has no rows");
  if (d.Y.size() != d.X.rows()) throw Error("labeled data: Y length does not match X rows");
  if (static_cast<Eigen::Index>(d.column_names.size()) != d.X.cols())
    throw Error("labeled data: column_names length does not match X columns");
  detail::check_finite(d.X, "labeled X");
  if (!d.Y.allFinite()) throw Error("labeled Y contains non-finite entries");
}

inline void validate(const UnlabeledData& d) {
  if (d.Xtilde.rows() < 1) throw Error("unlabeled data has no rows");
  if (static_cast<Eigen::Index>(d.column_names.size()) != d.Xtilde.cols())
    throw Error("unlabeled data: column_names length does not match X columns");
  detail::check_finite(d.Xtilde, "unlabeled X");
}

inline void validate_pair(const LabeledData& l, const UnlabeledData& u) {
  validate(l);
  validate(u);
  if (l.column_names != u.column_names)
    throw Error("labeled and unlabeled data have different covariate columns");
}

// Raw numeric table keyed by header names. Only the requested columns are parsed.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;  // parallel to `requested`
  std::vector<std::string> requested;
  std::size_t rows = 0;

  const std::vector<double>& column(std::string_view name) const {
    for (std::size_t i = 0; i < requested.size(); ++i)
      if (requested[i] == name) return columns[i];
    throw Error("column '" + std::string(name) + "' was not loaded");
  }
};

inline CsvTable read_csv_columns(const std::filesystem::path& path,
                                 const std::vector<std::string>& wanted) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw Error("CSV file '" + path.string() + "' has no header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
    line.erase(0, 3);

  CsvTable table;
  for (auto f : detail::split_fields(line)) table.header.emplace_back(f);

  std::vector<std::size_t> idx;
  for (const auto& name : wanted) {
    const auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end())
      throw Error("CSV file '" + path.string() + "' has no column '" + name + "'");
    idx.push_back(static_cast<std::size_t>(it - table.header.begin()));
  }
  table.requested = wanted;
  table.columns.assign(wanted.size(), {});

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != table.header.size())
      throw Error("CSV file '" + path.string() + "' line " + std::to_string(line_no) + ": expected " +
                  std::to_string(table.header.size()) + " fields, found " +
                  std::to_string(fields.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const auto v = detail::parse_double(fields[idx[c]]);
      if (!v || !std::isfinite(*v))
        throw Error("CSV file '" + path.string() + "' row " + std::to_string(table.rows + 1) +
                    " (line " + std::to_string(line_no) + "), column '" + wanted[c] +
                    "': cannot parse '" + std::string(fields[idx[c]]) + "' as a finite number");
      table.columns[c].push_back(*v);
    }
    ++table.rows;
  }
  if (table.rows == 0) throw Error("CSV file '" + path.string() + "' has no data rows");
  return table;
}

inline std::vector<std::string> read_csv_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error("CSV file '" + path.string() + "' has no header row");
  std::vector<std::string> out;
  for (auto f : detail::split_fields(line)) out.emplace_back(f);
  return out;
}

// LabeledData when outcome_col is given, UnlabeledData otherwise. An empty
// covariate list selects every column except the outcome.
inline std::variant<LabeledData, UnlabeledData> load_csv(
    const std::filesystem::path& path, const std::optional<std::string>& outcome_col,
    std::vector<std::string> covariate_cols) {
  if (covariate_cols.empty()) {
    for (auto& h : read_csv_header(path))
      if (!outcome_col || h != *outcome_col) covariate_cols.push_back(h);
  }
  auto wanted = covariate_cols;
  if (outcome_col) wanted.push_back(*outcome_col);
  const auto table = read_csv_columns(path, wanted);

  const auto n = static_cast<Eigen::Index>(table.rows);
  const auto q = static_cast<Eigen::Index>(covariate_cols.size());
  Matrix X(n, q);
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index i = 0; i < n; ++i) X(i, j) = table.columns[j][i];

  if (outcome_col) {
    Vector Y(n);
    for (Eigen::Index i = 0; i < n; ++i) Y(i) = table.columns.back()[i];
    return LabeledData{std::move(X), std::move(Y), std::move(covariate_cols)};
  }
  return UnlabeledData{std::move(X), std::move(covariate_cols)};
}

inline LabeledData load_labeled_csv(const std::filesystem::path& path, const std::string& outcome,
                                    std::vector<std::string> covariates) {
  return std::get<LabeledData>(load_csv(path, outcome, std::move(covariates)));
}

inline UnlabeledData load_unlabeled_csv(const std::filesystem::path& path,
                                        std::vector<std::string> covariates) {
  return std::get<UnlabeledData>(load_csv(path, std::nullopt, std::move(covariates)));
}

// Writes `content` to a sibling temp file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string to_csv(const Matrix& X, const std::vector<std::string>& names,
                          const Vector* Y = nullptr, const std::string& outcome = "y") {
  std::ostringstream os;
  for (std::size_t j = 0; j < names.size(); ++j) os << (j ? "," : "") << names[j];
  if (Y) os << (names.empty() ? "" : ",") << outcome;
  os << '\n';
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) os << (j ? "," : "") << format_double(X(i, j));
    if (Y) os << (X.cols() ? "," : "") << format_double((*Y)(i));
    os << '\n';
  }
  return os.str();
}

inline void write_csv(const std::filesystem::path& path, const LabeledData& d,
                      const std::string& outcome = "y") {
  write_file_atomic(path, to_csv(d.X, d.column_names, &d.Y, outcome));
}

inline void write_csv(const std::filesystem::path& path, const UnlabeledData& d) {
  write_file_atomic(path, to_csv(d.Xtilde, d.column_names));
}

inline LabeledData take_rows(const LabeledData& d, const std::vector<Eigen::Index>& rows) {
  LabeledData out{Matrix(static_cast<Eigen::Index>(rows.size()), d.X.cols()),
                  Vector(static_cast<Eigen::Index>(rows.size())), d.column_names};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = d.X.row(rows[i]);
    out.Y(static_cast<Eigen::Index>(i)) = d.Y(rows[i]);
  }
  return out;
}

// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  CounterRng rng(derive_seed(seed, 0x5350'4C49'54ULL));
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

// Train gets floor(n * train_fraction) rows. Both parts keep the original row order.
inline std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_indices(
    Eigen::Index n, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw Error("split: train_fraction must lie in (0, 1)");
  const auto n_train = static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * spec.train_fraction));
  if (n_train < 1 || n - n_train < 1)
    throw Error("split: degenerate sizes (n=" + std::to_string(n) + ", train=" +
                std::to_string(n_train) + ", test=" + std::to_string(n - n_train) + ")");

  auto perm = shuffled_indices(n, spec.seed);
  std::vector<Eigen::Index> train(perm.begin(), perm.begin() + n_train);
  std::vector<Eigen::Index> test(perm.begin() + n_train, perm.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

inline std::pair<LabeledData, LabeledData> split(const LabeledData& data, const SplitSpec& spec) {
  const auto [train, test] = split_indices(data.rows(), spec);
  return {take_rows(data, train), take_rows(data, test)};
}

inline Vector take_rows(const Vector& v, const std::vector<Eigen::Index>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
  return out;
}

}  // namespace puma
