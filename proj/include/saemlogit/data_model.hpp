#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "saemlogit/errors.hpp"

namespace saemlogit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

/// Payload stored at masked cells. Consumers go through the mask and never read it.
inline constexpr double kMissingValue = std::numeric_limits<double>::quiet_NaN();

/// Binary responses, covariates and the missingness mask (true = missing).
///
/// Immutable once constructed. The constructor validates shapes, the response
/// support, finiteness of observed entries and that every column has at least
/// one observed value. Masked cells are overwritten with quiet NaN so that a
/// stale imputation can never leak into an estimate.
///
/// A dataset without a response (test files for prediction) has an empty `y`.
class MaskedDataset {
 public:
  MaskedDataset() = default;

  MaskedDataset(Vector y, Matrix x, Mask mask, std::vector<std::string> names = {},
                std::vector<std::uint64_t> row_ids = {})
      : y_(std::move(y)), x_(std::move(x)), mask_(std::move(mask)), names_(std::move(names)),
        row_ids_(std::move(row_ids)) {
    validate();
  }

  Index n() const { return x_.rows(); }
  Index p() const { return x_.cols(); }
  bool has_response() const { return y_.size() > 0 || n() == 0; }

  const Vector& y() const { return y_; }
  int y(Index i) const { return y_[i] > 0.5 ? 1 : 0; }
  const Matrix& x() const { return x_; }
  const Mask& mask() const { return mask_; }
  bool missing(Index i, Index j) const { return mask_(i, j); }
  bool row_has_missing(Index i) const { return mask_.row(i).any(); }
  const std::vector<std::string>& names() const { return names_; }

  /// Stable identity of a row, used to derive per-row random streams. Survives row subsetting.
  std::uint64_t row_id(Index i) const { return row_ids_[static_cast<std::size_t>(i)]; }
  const std::vector<std::uint64_t>& row_ids() const { return row_ids_; }

  Index missing_count() const { return mask_.count(); }
  bool has_missing() const { return mask_.any(); }

  /// Response column name and its position among the file's columns (for faithful re-writing).
  const std::string& response_name() const { return response_name_; }
  Index response_position() const { return response_position_; }
  void set_response_layout(std::string name, Index position) {
    response_name_ = std::move(name);
    response_position_ = std::clamp<Index>(position, 0, p());
  }

  /// Subset (and possibly reorder) rows; row identities travel with the rows.
  MaskedDataset select_rows(const std::vector<Index>& rows) const {
    const auto m = static_cast<Index>(rows.size());
    Vector y(has_response() && n() > 0 ? m : 0);
    Matrix x(m, p());
    Mask mask(m, p());
    std::vector<std::uint64_t> ids(rows.size());
    for (Index r = 0; r < m; ++r) {
      const Index i = rows[static_cast<std::size_t>(r)];
      if (i < 0 || i >= n()) throw std::out_of_range("select_rows: row index out of range");
      if (y.size() > 0) y[r] = y_[i];
      x.row(r) = x_.row(i);
      mask.row(r) = mask_.row(i);
      ids[static_cast<std::size_t>(r)] = row_ids_[static_cast<std::size_t>(i)];
    }
    MaskedDataset out(std::move(y), std::move(x), std::move(mask), names_, std::move(ids));
    out.set_response_layout(response_name_, response_position_);
    return out;
  }

  /// Copy of the covariates with masked cells replaced by `fill[j]`.
  Matrix filled(const Vector& fill) const {
    Matrix out = x_;
    for (Index j = 0; j < p(); ++j)
      for (Index i = 0; i < n(); ++i)
        if (mask_(i, j)) out(i, j) = fill[j];
    return out;
  }

  /// Column means over observed entries.
  Vector observed_means() const {
    Vector mean = Vector::Zero(p());
    for (Index j = 0; j < p(); ++j) {
      double sum = 0.0;
      Index count = 0;
      for (Index i = 0; i < n(); ++i) {
        if (!mask_(i, j)) {
          sum += x_(i, j);
          ++count;
        }
      }
      mean[j] = sum / static_cast<double>(count);
    }
    return mean;
  }

 private:
  void validate() {
    if (mask_.rows() != x_.rows() || mask_.cols() != x_.cols())
      throw DimensionError("mask and covariate matrix must have the same shape");
    if (y_.size() != 0 && y_.size() != x_.rows())
      throw DimensionError("response length must equal the number of rows");
    if (names_.empty()) {
      names_.reserve(static_cast<std::size_t>(p()));
      for (Index j = 0; j < p(); ++j) names_.push_back("x" + std::to_string(j + 1));
    }
    if (static_cast<Index>(names_.size()) != p())
      throw DimensionError("one name per covariate column is required");
    if (row_ids_.empty()) {
      row_ids_.resize(static_cast<std::size_t>(n()));
      std::iota(row_ids_.begin(), row_ids_.end(), std::uint64_t{0});
    }
    if (static_cast<Index>(row_ids_.size()) != n()) throw DimensionError("one id per row is required");
    for (Index i = 0; i < y_.size(); ++i)
      if (y_[i] != 0.0 && y_[i] != 1.0)
        throw DomainError("response at row " + std::to_string(i + 1) + " is not 0 or 1");
    for (Index j = 0; j < p(); ++j) {
      Index observed = 0;
      for (Index i = 0; i < n(); ++i) {
        if (mask_(i, j)) {
          x_(i, j) = kMissingValue;
        } else {
          if (!std::isfinite(x_(i, j)))
            throw DomainError("non-finite observed value at row " + std::to_string(i + 1) +
                              ", column " + names_[static_cast<std::size_t>(j)]);
          ++observed;
        }
      }
      if (n() > 0 && observed == 0)
        throw IdentifiabilityError("column '" + names_[static_cast<std::size_t>(j)] +
                                   "' has no observed value");
    }
  }

  Vector y_;
  Matrix x_;
  Mask mask_;
  std::vector<std::string> names_;
  std::vector<std::uint64_t> row_ids_;
  std::string response_name_ = "y";
  Index response_position_ = 0;
};

/// Model parameters: regression coefficients (intercept first), covariate mean and covariance.
struct Theta {
  Vector beta;
  Vector mu;
  Matrix sigma;

  Index p() const { return mu.size(); }

  /// Throws unless shapes agree, sigma is symmetric within 1e-10 and Cholesky succeeds.
  void validate() const {
    if (beta.size() != mu.size() + 1) throw DimensionError("beta must have length p+1");
    if (sigma.rows() != mu.size() || sigma.cols() != mu.size())
      throw DimensionError("sigma must be p x p");
    if (!sigma.allFinite() || !beta.allFinite() || !mu.allFinite())
      throw NumericalError("non-finite parameter");
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw NumericalError("sigma is not symmetric");
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw SingularityError("sigma is not positive definite");
  }
};

/// Observed/missing partition of one row. Index lists are 0-based and sorted.
struct RowView {
  Index row = 0;
  std::vector<Index> obs_idx;
  std::vector<Index> mis_idx;
  Vector x_obs;
};

inline RowView row_view(const MaskedDataset& d, Index i) {
  if (i < 0 || i >= d.n())
    throw std::out_of_range("row index " + std::to_string(i) + " out of range [0, " +
                            std::to_string(d.n()) + ")");
  RowView rv;
  rv.row = i;
  for (Index j = 0; j < d.p(); ++j) (d.missing(i, j) ? rv.mis_idx : rv.obs_idx).push_back(j);
  rv.x_obs.resize(static_cast<Index>(rv.obs_idx.size()));
  for (std::size_t k = 0; k < rv.obs_idx.size(); ++k)
    rv.x_obs[static_cast<Index>(k)] = d.x()(i, rv.obs_idx[k]);
  return rv;
}

// ---------------------------------------------------------------------------
// Delimited text I/O

struct CsvOptions {
  std::string response = "y";
  std::vector<std::string> missing_tokens = {"", "NA"};
  /// When false, a file lacking the response column loads with an empty response.
  bool require_response = true;
  char delimiter = ',';
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace detail

inline MaskedDataset read_csv(std::istream& in, const CsvOptions& opts = {}) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty input, header expected", 1);
  ++line_no;
  std::vector<std::string> header;
  for (auto cell : detail::split(line, opts.delimiter)) header.emplace_back(cell);

  const auto response_it = std::find(header.begin(), header.end(), opts.response);
  const bool has_response = response_it != header.end();
  if (!has_response && opts.require_response)
    throw ParseError("response column '" + opts.response + "' not found in header", 1);
  const auto response_col = has_response ? static_cast<std::size_t>(response_it - header.begin())
                                         : header.size();

  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != response_col) names.push_back(header[c]);
  const auto p = names.size();

  auto is_missing = [&](std::string_view cell) {
    return std::find(opts.missing_tokens.begin(), opts.missing_tokens.end(), cell) !=
           opts.missing_tokens.end();
  };

  std::vector<double> values;
  std::vector<char> missing;
  std::vector<double> response;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, opts.delimiter);
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(cells.size()),
                       line_no);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto cell = cells[c];
      if (c == response_col) {
        double v = 0.0;
        if (is_missing(cell))
          throw DomainError("line " + std::to_string(line_no) + ": missing response");
        if (!detail::parse_double(cell, v))
          throw ParseError("response '" + std::string(cell) + "' is not numeric", line_no);
        if (v != 0.0 && v != 1.0)
          throw DomainError("line " + std::to_string(line_no) + ": response '" +
                            std::string(cell) + "' is not 0 or 1");
        response.push_back(v);
        continue;
      }
      if (is_missing(cell)) {
        values.push_back(kMissingValue);
        missing.push_back(1);
        continue;
      }
      double v = 0.0;
      if (!detail::parse_double(cell, v) || !std::isfinite(v))
        throw ParseError("value '" + std::string(cell) + "' in column '" + header[c] +
                             "' is not a finite number",
                         line_no);
      values.push_back(v);
      missing.push_back(0);
    }
    ++rows;
  }

  const auto n = static_cast<Index>(rows);
  Matrix x(n, static_cast<Index>(p));
  Mask mask(n, static_cast<Index>(p));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < static_cast<Index>(p); ++j) {
      const auto k = static_cast<std::size_t>(i) * p + static_cast<std::size_t>(j);
      x(i, j) = values[k];
      mask(i, j) = missing[k] != 0;
    }
  Vector y = has_response ? Eigen::Map<Vector>(response.data(), n) : Vector();
  MaskedDataset d(std::move(y), std::move(x), std::move(mask), std::move(names));
  d.set_response_layout(opts.response, has_response ? static_cast<Index>(response_col) : 0);
  return d;
}

inline MaskedDataset load_csv(const std::string& path, const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_csv(in, opts);
}

/// Writes the dataset back in its original column layout. Missing cells become `missing_token`;
/// numbers use 17 significant digits so they re-parse to the same doubles.
inline void write_csv(std::ostream& out, const MaskedDataset& d, const std::string& missing_token = "NA",
                      char delimiter = ',') {
  const bool with_y = d.has_response() && d.y().size() == d.n();
  const Index cols = d.p() + (with_y ? 1 : 0);
  auto column_name = [&](Index c) -> std::string {
    if (with_y) {
      if (c == d.response_position()) return d.response_name();
      if (c > d.response_position()) --c;
    }
    return d.names()[static_cast<std::size_t>(c)];
  };
  for (Index c = 0; c < cols; ++c) out << (c ? std::string(1, delimiter) : "") << column_name(c);
  out << '\n';
  std::ostringstream cell;
  cell << std::setprecision(17);
  for (Index i = 0; i < d.n(); ++i) {
    for (Index c = 0; c < cols; ++c) {
      if (c) out << delimiter;
      if (with_y && c == d.response_position()) {
        out << d.y(i);
        continue;
      }
      const Index j = (with_y && c > d.response_position()) ? c - 1 : c;
      if (d.missing(i, j)) {
        out << missing_token;
      } else {
        cell.str({});
        cell << d.x()(i, j);
        out << cell.str();
      }
    }
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const MaskedDataset& d, const std::string& missing_token = "NA") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_csv(out, d, missing_token);
}

}  // namespace saemlogit
