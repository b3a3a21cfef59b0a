#pragma once

// Augmented Tolles-Lawson compensation.
//
// The scalar reading is modelled as
//   B_t = B_e + B_perm + B_induced + B_eddy + B_bias + B_vel
// with all interference terms linear in a 20-vector of coefficients:
//
//   col  1..3   permanent    cX, cY, cZ
//   col  4..9   induced      B_t * (cX^2, cY^2, cZ^2, cX cY, cX cZ, cY cZ)
//   col 10..18  eddy         B_t * (cX, cY, cZ) (x) (dcX, dcY, dcZ), row-major
//   col 19      bias         1
//   col 20      velocity     V
//
// where (cX, cY, cZ) = (B_x, B_y, B_z) / B_t and dc* are their time rates.
//
// Log format (maglog v1): a "maglog v1" header line followed by CSV rows
//   timestamp,bx,by,bz,btotal,speed[,be_truth]
// Coefficient format (tlcoef v1): a "tlcoef v1" header then 20 "index,value"
// rows with index 1..20.

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "magnav/error.hpp"
#include "magnav/magmap.hpp"

namespace magnav::tl {

inline constexpr std::size_t kTerms = 20;

using Row = Eigen::Matrix<double, 1, static_cast<int>(kTerms)>;
using Coefficients = Eigen::Matrix<double, static_cast<int>(kTerms), 1>;

struct MagSample {
  double timestamp = 0.0;              // s
  Eigen::Vector3d b_vec = Eigen::Vector3d::Zero();  // nT
  double b_total = 0.0;                // nT
  double speed = 0.0;                  // m/s
};

struct DirectionCosines {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  std::optional<Eigen::Vector3d> rate;  // 1/s; unset until differenced
};

inline DirectionCosines direction_cosines(const MagSample& s) {
  if (!(s.b_total > 0.0) || !std::isfinite(s.b_total))
    throw InvalidArgument("invalid sample: b_total must be > 0");
  return {s.b_vec / s.b_total, std::nullopt};
}

// First-order backward difference.
inline DirectionCosines cosine_rates(const DirectionCosines& prev, const DirectionCosines& cur,
                                     double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("cosine_rates: dt must be > 0");
  return {cur.c, (cur.c - prev.c) / dt};
}

inline Row build_regressor_row(const DirectionCosines& dc, double b_total, double speed) {
  if (!dc.rate) throw InvalidArgument("regressor row needs direction-cosine rates");
  const Eigen::Vector3d& c = dc.c;
  const Eigen::Vector3d& r = *dc.rate;
  Row row;
  row(0) = c.x();
  row(1) = c.y();
  row(2) = c.z();
  row(3) = b_total * c.x() * c.x();
  row(4) = b_total * c.y() * c.y();
  row(5) = b_total * c.z() * c.z();
  row(6) = b_total * c.x() * c.y();
  row(7) = b_total * c.x() * c.z();
  row(8) = b_total * c.y() * c.z();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) row(9 + 3 * a + b) = b_total * c(a) * r(b);
  row(18) = 1.0;
  row(19) = speed;
  return row;
}

inline double compensate(const MagSample& s, const DirectionCosines& dc, const Coefficients& eps) {
  return s.b_total - (build_regressor_row(dc, s.b_total, s.speed) * eps).value();
}

// Regressor matrix for a log. The first sample has no backward difference and
// is dropped, so the matrix has log.size() - 1 rows aligned with log[1..].
inline Eigen::MatrixXd build_regressor(std::span<const MagSample> log) {
  if (log.size() < 2) throw InvalidArgument("calibration log needs at least two samples");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(log.size() - 1), static_cast<Eigen::Index>(kTerms));
  DirectionCosines prev = direction_cosines(log[0]);
  for (std::size_t k = 1; k < log.size(); ++k) {
    const double dt = log[k].timestamp - log[k - 1].timestamp;
    if (!(dt > 0.0))
      throw InvalidArgument("timestamps must be strictly increasing (sample " + std::to_string(k) +
                            ")");
    const DirectionCosines cur = cosine_rates(prev, direction_cosines(log[k]), dt);
    a.row(static_cast<Eigen::Index>(k - 1)) = build_regressor_row(cur, log[k].b_total, log[k].speed);
    prev = cur;
  }
  return a;
}

struct FitResult {
  Coefficients eps = Coefficients::Zero();
  std::size_t rows = 0;
  double residual_rms = 0.0;  // nT
  // 1-based coefficient indices whose regressor column is (nearly) constant.
  std::vector<std::size_t> unexcited;
};

// Columns whose variance falls below 1e-12 of the largest column variance.
// The bias column is constant by construction and is not checked.
inline std::vector<std::size_t> excitation_warnings(const Eigen::MatrixXd& a) {
  std::vector<std::size_t> weak;
  const Eigen::RowVectorXd mean = a.colwise().mean();
  const Eigen::RowVectorXd var =
      (a.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(a.rows());
  double largest = 0.0;
  for (Eigen::Index j = 0; j < var.size(); ++j)
    if (j != 18) largest = std::max(largest, var(j));
  for (Eigen::Index j = 0; j < var.size(); ++j)
    if (j != 18 && var(j) <= 1e-12 * largest) weak.push_back(static_cast<std::size_t>(j) + 1);
  return weak;
}

// Least-squares coefficients for B_t - B_e = A eps, via column-pivoted QR.
// b_earth is aligned 1:1 with log.
inline FitResult fit(std::span<const MagSample> log, std::span<const double> b_earth) {
  if (b_earth.size() != log.size())
    throw InvalidArgument("b_earth must have one entry per log sample");
  if (log.size() < kTerms + 1)
    throw InvalidArgument("insufficient rows: need at least " + std::to_string(kTerms) +
                          " usable rows, have " +
                          std::to_string(log.empty() ? 0 : log.size() - 1));
  const Eigen::MatrixXd a = build_regressor(log);
  Eigen::VectorXd rhs(a.rows());
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    const auto src = static_cast<std::size_t>(k) + 1;
    rhs(k) = log[src].b_total - b_earth[src];
  }

  // Scale columns to unit norm so the rank threshold is not dominated by the
  // nT-sized induced and eddy columns.
  Eigen::VectorXd scale = a.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (scale(j) == 0.0) scale(j) = 1.0;
  const Eigen::MatrixXd scaled = a * scale.cwiseInverse().asDiagonal();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(kTerms))
    throw RankDeficientError(static_cast<std::size_t>(qr.rank()), kTerms);

  FitResult result;
  result.eps = qr.solve(rhs).cwiseQuotient(scale);
  result.rows = static_cast<std::size_t>(a.rows());
  result.residual_rms = std::sqrt((a * result.eps - rhs).squaredNorm() / static_cast<double>(a.rows()));
  result.unexcited = excitation_warnings(a);
  return result;
}

// Compensated earth-field estimates, aligned with log[1..].
inline std::vector<double> compensate_log(std::span<const MagSample> log, const Coefficients& eps) {
  const Eigen::MatrixXd a = build_regressor(log);
  const Eigen::VectorXd interference = a * eps;
  std::vector<double> out(static_cast<std::size_t>(a.rows()));
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = log[k + 1].b_total - interference(static_cast<Eigen::Index>(k));
  return out;
}

struct CalibrationLog {
  std::vector<MagSample> samples;
  std::optional<std::vector<double>> be_truth;
};

inline CalibrationLog read_log(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw ParseError(0, "empty calibration log");
  ++line_no;
  if (detail::split_ws(line) != std::vector<std::string_view>{"maglog", "v1"})
    throw ParseError(line_no, "expected header 'maglog v1'");

  CalibrationLog log;
  std::optional<bool> has_truth;
  std::vector<double> truth;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::split_ws(line).empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      auto field = rest.substr(0, comma);
      while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front()))) field.remove_prefix(1);
      while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back()))) field.remove_suffix(1);
      fields.push_back(field);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 6 && fields.size() != 7)
      throw ParseError(line_no, "expected 6 or 7 comma-separated fields, found " +
                                    std::to_string(fields.size()));
    const bool row_truth = fields.size() == 7;
    if (has_truth && *has_truth != row_truth)
      throw ParseError(line_no, "be_truth column present on some rows only");
    has_truth = row_truth;

    std::array<double, 7> v{};
    for (std::size_t f = 0; f < fields.size(); ++f)
      if (!detail::parse_double(fields[f], v[f]) || !std::isfinite(v[f]))
        throw ParseError(line_no, "bad number '" + std::string(fields[f]) + "'");
    MagSample s{v[0], Eigen::Vector3d(v[1], v[2], v[3]), v[4], v[5]};
    if (!(s.b_total > 0.0)) throw ParseError(line_no, "btotal must be > 0");
    if (!log.samples.empty() && !(s.timestamp > log.samples.back().timestamp))
      throw ParseError(line_no, "timestamps must be strictly increasing");
    log.samples.push_back(s);
    if (row_truth) truth.push_back(v[6]);
  }
  if (has_truth.value_or(false)) log.be_truth = std::move(truth);
  return log;
}

inline CalibrationLog load_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  return read_log(is);
}

inline void write_coefficients(std::ostream& os, const Coefficients& eps) {
  os << "tlcoef v1\n";
  for (std::size_t k = 0; k < kTerms; ++k)
    os << (k + 1) << ',' << detail::format_double(eps(static_cast<Eigen::Index>(k))) << '\n';
}

inline Coefficients read_coefficients(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line) || detail::split_ws(line) != std::vector<std::string_view>{"tlcoef", "v1"})
    throw ParseError(1, "expected header 'tlcoef v1'");
  ++line_no;
  Coefficients eps = Coefficients::Zero();
  std::array<bool, kTerms> seen{};
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::split_ws(line).empty()) continue;
    const auto comma = line.find(',');
    std::size_t index = 0;
    double value = 0.0;
    if (comma == std::string::npos ||
        !detail::parse_size(std::string_view(line).substr(0, comma), index) ||
        !detail::parse_double(std::string_view(line).substr(comma + 1), value) || index < 1 ||
        index > kTerms || seen[index - 1])
      throw ParseError(line_no, "expected 'index,value' with a unique index in 1..20");
    seen[index - 1] = true;
    eps(static_cast<Eigen::Index>(index - 1)) = value;
  }
  for (bool s : seen)
    if (!s) throw ParseError(line_no, "coefficient file must list all 20 indices");
  return eps;
}

}  // namespace magnav::tl
