#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "kao/kalman.hpp"
#include "kao/model.hpp"

namespace kao {

/// Per-dimension parameters used to instantiate an expert's model:
/// K = k I, Q = q I, theta0 = theta0 * 1, P0 = p0 I.
struct ExpertTemplate {
  double k = 1.0;
  double q = 1.0;
  double sigma2 = 1.0;
  double theta0 = 0.0;
  double p0 = 1e6;

  [[nodiscard]] StateSpaceModel instantiate(Eigen::Index d) const {
    const Matrix I = Matrix::Identity(d, d);
    return {k * I, q * I, sigma2, Vector::Constant(d, theta0), p0 * I};
  }
};

/// One expert: a model in absolute units and the columns of the global
/// design row it reads.
struct Expert {
  std::string name;
  StateSpaceModel model;
  std::vector<Eigen::Index> columns;

  [[nodiscard]] Vector features(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    Vector x(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) x(static_cast<Eigen::Index>(i)) = row(columns[i]);
    return x;
  }
};

class ExpertBank {
 public:
  ExpertBank() = default;
  explicit ExpertBank(std::vector<Expert> experts, Eigen::Index global_dim) : experts_(std::move(experts)), dim_(global_dim) {
    require(!experts_.empty(), "ExpertBank: need at least one expert");
    for (const auto& e : experts_) {
      require(!e.columns.empty(), "ExpertBank: expert '" + e.name + "' selects no columns");
      require_dim(static_cast<Eigen::Index>(e.columns.size()), e.model.dim(), "ExpertBank expert '" + e.name + "'");
      for (auto c : e.columns) {
        require(c >= 0 && c < dim_, "ExpertBank: column index out of range for expert '" + e.name + "'");
      }
    }
  }

  [[nodiscard]] Eigen::Index size() const { return static_cast<Eigen::Index>(experts_.size()); }
  [[nodiscard]] Eigen::Index global_dim() const { return dim_; }
  [[nodiscard]] const Expert& operator[](Eigen::Index m) const { return experts_[static_cast<std::size_t>(m)]; }
  [[nodiscard]] Expert& operator[](Eigen::Index m) { return experts_[static_cast<std::size_t>(m)]; }
  [[nodiscard]] const std::vector<Expert>& experts() const { return experts_; }

  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : experts_) out.push_back(e.name);
    return out;
  }

 private:
  std::vector<Expert> experts_;
  Eigen::Index dim_ = 0;
};

inline std::string subset_name(const std::vector<std::string>& covariates, const std::vector<Eigen::Index>& subset) {
  std::string out;
  for (auto i : subset) {
    if (!out.empty()) out += '+';
    out += covariates[static_cast<std::size_t>(i)];
  }
  return out;
}

/// One expert per covariate subset, each with d_m = |subset| and parameters
/// from the template.
inline ExpertBank build_subset_bank(const std::vector<std::string>& covariates,
                                    const std::vector<std::vector<Eigen::Index>>& subsets,
                                    const ExpertTemplate& tmpl) {
  require(!subsets.empty(), "build_subset_bank: no subsets");
  const auto p = static_cast<Eigen::Index>(covariates.size());
  std::set<std::vector<Eigen::Index>> seen;
  std::vector<Expert> experts;
  for (const auto& raw : subsets) {
    require(!raw.empty(), "build_subset_bank: empty subset");
    auto s = raw;
    std::sort(s.begin(), s.end());
    require(std::adjacent_find(s.begin(), s.end()) == s.end(), "build_subset_bank: repeated index in subset");
    for (auto i : s) require(i >= 0 && i < p, "build_subset_bank: covariate index out of range");
    require(seen.insert(s).second, "build_subset_bank: duplicate subset " + subset_name(covariates, s));
    experts.push_back({subset_name(covariates, s), tmpl.instantiate(static_cast<Eigen::Index>(s.size())), s});
  }
  return ExpertBank(std::move(experts), p);
}

/// All non-empty subsets of {0..p-1} ordered by size, then lexicographically.
inline std::vector<std::vector<Eigen::Index>> all_subsets(Eigen::Index p) {
  require(p >= 1 && p <= 20, "all_subsets: need 1 <= p <= 20");
  std::vector<std::vector<Eigen::Index>> out;
  for (unsigned mask = 1; mask < (1U << p); ++mask) {
    std::vector<Eigen::Index> s;
    for (Eigen::Index i = 0; i < p; ++i)
      if (mask & (1U << i)) s.push_back(i);
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return out;
}

/// The true subset first, followed by the first (m - 1) other subsets in
/// all_subsets order.
inline std::vector<std::vector<Eigen::Index>> study_subsets(Eigen::Index p, std::vector<Eigen::Index> truth,
                                                             std::size_t m) {
  std::sort(truth.begin(), truth.end());
  std::vector<std::vector<Eigen::Index>> out{truth};
  for (auto& s : all_subsets(p)) {
    if (out.size() >= m) break;
    if (s != truth) out.push_back(std::move(s));
  }
  require(out.size() == m, "study_subsets: not enough subsets for the requested bank size");
  return out;
}

/// Global design for the expert setting: row t is
/// [1, f_1t..f_Mt, e_1,t-1..e_M,t-1] with e_m,t-1 = y_{t-1} - f_m,t-1 and e_m,0 = 0.
inline Design expert_setting_design(const Design& forecasts, const Vector& y) {
  require_dim(forecasts.rows(), y.size(), "expert_setting_design rows");
  const auto T = forecasts.rows();
  const auto M = forecasts.cols();
  Design x = Design::Zero(T, 1 + 2 * M);
  x.col(0).setOnes();
  x.middleCols(1, M) = forecasts;
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index m = 0; m < M; ++m) x(t, 1 + M + m) = y(t - 1) - forecasts(t - 1, m);
  }
  return x;
}

/// Expert m reads (1, f_m,t, e_m,t-1) from expert_setting_design.
inline ExpertBank build_expert_setting_bank(const std::vector<std::string>& names, const ExpertTemplate& tmpl) {
  const auto M = static_cast<Eigen::Index>(names.size());
  require(M >= 1, "build_expert_setting_bank: need at least one expert");
  std::vector<Expert> experts;
  for (Eigen::Index m = 0; m < M; ++m) {
    experts.push_back({names[static_cast<std::size_t>(m)], tmpl.instantiate(3), {0, 1 + m, 1 + M + m}});
  }
  return ExpertBank(std::move(experts), 1 + 2 * M);
}

/// Filter model used to step an expert: Q and P0 divided by sigma2 so that
/// the unit-normalised recursion reproduces the exact posterior mean.
inline StateSpaceModel normalized_filter_model(const StateSpaceModel& m) {
  const double s2 = m.sigma2();
  return {m.K(), m.Q() / s2, s2, m.theta0(), m.P0() / s2};
}

}  // namespace kao
