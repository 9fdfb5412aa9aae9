#include "selfcal/observability.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include <Eigen/SVD>

namespace selfcal {

ObservabilityReport observability_indices(const Eigen::MatrixXd& J, int m,
                                          double rank_tol) {
  if (J.size() == 0 || J.cols() < 1) throw std::invalid_argument("empty Jacobian");
  if (!J.allFinite()) throw std::invalid_argument("non-finite Jacobian");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinV);
  ObservabilityReport rep;
  rep.singular_values = svd.singularValues();
  rep.measurement_rows = m;
  rep.rank_tol = rank_tol;

  const int n = static_cast<int>(rep.singular_values.size());
  double s1 = rep.singular_values(0);
  double sN = rep.singular_values(n - 1);
  if (!(s1 > 0.0)) {
    rep.degenerate = true;  // rank 0: all indices zero
    return rep;
  }
  double log_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = rep.singular_values(i);
    if (s <= 0.0) {
      log_sum = -std::numeric_limits<double>::infinity();
      break;
    }
    log_sum += std::log(s);
  }
  rep.O1 = std::isfinite(log_sum) ? std::exp(log_sum / n) / std::sqrt(double(m)) : 0.0;
  rep.O2 = sN / s1;
  rep.O3 = sN;
  rep.O4 = sN * sN / s1;
  rep.unidentifiable = find_unidentifiable(J, rank_tol);
  return rep;
}

std::vector<NullDirection> find_unidentifiable(const Eigen::MatrixXd& J,
                                               double rank_tol) {
  if (J.size() == 0) return {};
  if (!J.allFinite()) throw std::invalid_argument("non-finite Jacobian");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  double s1 = s.size() > 0 ? s(0) : 0.0;

  std::vector<NullDirection> out;
  const int n = static_cast<int>(J.cols());
  for (int k = 0; k < n; ++k) {
    // columns of V beyond the row rank have singular value zero
    double sk = k < s.size() ? s(k) : 0.0;
    if (sk > rank_tol * s1) continue;
    NullDirection dir;
    dir.singular_value = sk;
    dir.direction = svd.matrixV().col(k);
    double vmax = dir.direction.cwiseAbs().maxCoeff();
    for (int i = 0; i < n; ++i)
      if (std::abs(dir.direction(i)) > 0.1 * vmax) dir.parameter_indices.push_back(i);
    out.push_back(std::move(dir));
  }
  return out;
}

CampaignRanking compare_campaigns(const std::vector<CampaignRow>& reports) {
  CampaignRanking ranking;
  ranking.rows = reports;
  if (!reports.empty()) {
    auto dim = reports.front().report.singular_values.size();
    for (const auto& row : reports)
      if (row.report.singular_values.size() != dim)
        throw std::invalid_argument("campaign reports have mismatched parameter dimensions");
  }
  std::stable_sort(ranking.rows.begin(), ranking.rows.end(),
                   [](const CampaignRow& a, const CampaignRow& b) {
                     if (a.report.O1 != b.report.O1) return a.report.O1 > b.report.O1;
                     return a.report.O3 > b.report.O3;
                   });
  ranking.multi_dominates_single = true;
  for (const auto& m : ranking.rows) {
    if (!m.multi_kind) continue;
    for (const auto& s : ranking.rows) {
      if (s.multi_kind) continue;
      if (!(m.report.O1 > s.report.O1 && m.report.O3 > s.report.O3))
        ranking.multi_dominates_single = false;
    }
  }
  return ranking;
}

std::string ranking_to_csv(const CampaignRanking& ranking) {
  std::ostringstream oss;
  oss << "kinds,multi_kind,O1,O2,O3,O4,sigma_min,sigma_max,rows,unidentifiable\n";
  oss.precision(12);
  for (const auto& row : ranking.rows) {
    const auto& r = row.report;
    const auto& s = r.singular_values;
    oss << row.kinds << "," << (row.multi_kind ? 1 : 0) << "," << r.O1 << "," << r.O2
        << "," << r.O3 << "," << r.O4 << "," << (s.size() ? s(s.size() - 1) : 0.0)
        << "," << (s.size() ? s(0) : 0.0) << "," << r.measurement_rows << ","
        << r.unidentifiable.size() << "\n";
  }
  return oss.str();
}

}  // namespace selfcal
