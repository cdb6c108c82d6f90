#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "spnpb/model.hpp"

namespace spnpb::analysis {

struct PcaResult {
  Matrix basis;  // dim x 2, orthonormal columns (PC1, PC2)
  Vector center;
  std::vector<Eigen::Vector2d> projected;
  Eigen::Vector2d explained;  // fraction of total variance per component
};

/// Projects points onto their two leading principal components. Components
/// are ordered by decreasing eigenvalue; each is signed so that its
/// largest-magnitude entry is positive. For 1-D inputs PC2 is zero.
inline PcaResult pca_project(const std::vector<Vector>& points) {
  if (points.size() < 2) throw ArgumentError("pca_project: need at least 2 points");
  const Eigen::Index dim = points.front().size();
  for (const Vector& p : points)
    detail::require_shape(p.size() == dim, "pca_project: points differ in dimension");

  PcaResult out;
  out.center = Vector::Zero(dim);
  for (const Vector& p : points) out.center += p;
  out.center /= static_cast<double>(points.size());
  Matrix cov = Matrix::Zero(dim, dim);
  for (const Vector& p : points) {
    const Vector d = p - out.center;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  // Eigen returns ascending eigenvalues.
  const Vector values = eig.eigenvalues().reverse().cwiseMax(0.0);
  const Matrix vectors = eig.eigenvectors().rowwise().reverse();
  const double total = values.sum();

  out.basis = Matrix::Zero(dim, 2);
  out.explained.setZero();
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, dim); ++k) {
    Vector v = vectors.col(k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    out.basis.col(k) = v;
    out.explained[k] = total > 0.0 ? values[k] / total : 0.0;
  }
  for (const Vector& p : points) out.projected.push_back(out.basis.transpose() * (p - out.center));
  return out;
}

/// Largest margin found over candidate directions (segment directions and
/// their normals) between two 2-D point sets; positive means a separating
/// line exists.
inline double separation_margin(const std::vector<Eigen::Vector2d>& a,
                                const std::vector<Eigen::Vector2d>& b) {
  if (a.empty() || b.empty()) throw ArgumentError("separation_margin: empty set");
  std::vector<Eigen::Vector2d> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::vector<Eigen::Vector2d> dirs;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      const Eigen::Vector2d d = all[j] - all[i];
      if (d.norm() == 0.0) continue;
      dirs.push_back(d.normalized());
      dirs.push_back(Eigen::Vector2d(-d.y(), d.x()).normalized());
    }
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Vector2d d : dirs) {
    for (int sign : {1, -1}) {
      const Eigen::Vector2d n = sign * d;
      double max_a = -std::numeric_limits<double>::infinity();
      double min_b = std::numeric_limits<double>::infinity();
      for (const auto& p : a) max_a = std::max(max_a, n.dot(p));
      for (const auto& p : b) min_b = std::min(min_b, n.dot(p));
      best = std::max(best, min_b - max_a);
    }
  }
  return best;
}

inline bool linearly_separable(const std::vector<Eigen::Vector2d>& a,
                               const std::vector<Eigen::Vector2d>& b) {
  return separation_margin(a, b) > 0.0;
}

struct ClusterDistances {
  double intra = 0.0;  // mean pairwise distance within a label
  double inter = 0.0;  // mean pairwise distance across labels
};

inline ClusterDistances cluster_distances(const std::vector<Vector>& points,
                                          const std::vector<std::string>& labels) {
  detail::require_shape(points.size() == labels.size(), "cluster_distances: label count");
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const double d = (points[i] - points[j]).norm();
      if (labels[i] == labels[j]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  if (n_intra == 0 || n_inter == 0)
    throw ArgumentError("cluster_distances: need repeated labels and at least two labels");
  return {intra / static_cast<double>(n_intra), inter / static_cast<double>(n_inter)};
}

/// Mean PB per label, in first-appearance order.
struct Centroid {
  std::string label;
  Vector p;
};

inline std::vector<Centroid> label_centroids(const std::vector<Vector>& points,
                                             const std::vector<std::string>& labels) {
  detail::require_shape(points.size() == labels.size(), "label_centroids: label count");
  std::vector<Centroid> out;
  std::vector<int> counts;
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Centroid& c) { return c.label == labels[i]; });
    if (it == out.end()) {
      out.push_back(Centroid{labels[i], points[i]});
      counts.push_back(1);
    } else {
      it->p += points[i];
      ++counts[static_cast<std::size_t>(it - out.begin())];
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].p /= static_cast<double>(counts[k]);
  return out;
}

inline std::size_t nearest(const std::vector<Centroid>& centroids, const Vector& p) {
  if (centroids.empty()) throw ArgumentError("nearest: no centroids");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    const double d = (centroids[k].p - p).norm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

/// Parses "alpha=<a>,beta=<b>" labels; returns false when the label has another form.
inline bool parse_env_label(const std::string& label, double& alpha, double& beta) {
  return std::sscanf(label.c_str(), "alpha=%lf,beta=%lf", &alpha, &beta) == 2;
}

}  // namespace spnpb::analysis
