#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace selfcal {

struct NullDirection {
  std::vector<int> parameter_indices;  // dominant components, |v_i| > 0.1 max|v|
  Eigen::VectorXd direction;           // right singular vector
  double singular_value = 0.0;
};

/// Singular-value summary of the identification Jacobian.
/// O1 = (s1...sN)^(1/N)/sqrt(m), O2 = sN/s1, O3 = sN, O4 = sN^2/s1.
struct ObservabilityReport {
  Eigen::VectorXd singular_values;  // descending
  double O1 = 0.0, O2 = 0.0, O3 = 0.0, O4 = 0.0;
  int measurement_rows = 0;
  std::vector<NullDirection> unidentifiable;
  double rank_tol = 1e-8;
  bool degenerate = false;  // rank-0 Jacobian
};

/// Indices from the SVD of the weighted Jacobian; m is the measurement row count.
ObservabilityReport observability_indices(const Eigen::MatrixXd& J, int m,
                                          double rank_tol = 1e-8);

/// Right singular vectors with sigma <= rank_tol * sigma_max, each annotated
/// with the parameter indices it entangles.
std::vector<NullDirection> find_unidentifiable(const Eigen::MatrixXd& J,
                                               double rank_tol = 1e-8);

struct CampaignRow {
  std::string kinds;  // e.g. "sc+so"
  bool multi_kind = false;
  ObservabilityReport report;
};

struct CampaignRanking {
  std::vector<CampaignRow> rows;        // ordered by O1 desc, then O3 desc (stable)
  bool multi_dominates_single = false;  // every multi-kind beats every single-kind on O1 and O3
};

/// Rank closure-kind campaigns computed on the same model and mask.
/// Throws std::invalid_argument on mismatched parameter dimensions.
CampaignRanking compare_campaigns(const std::vector<CampaignRow>& reports);

std::string ranking_to_csv(const CampaignRanking& ranking);

}  // namespace selfcal
