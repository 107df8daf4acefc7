#pragma once

// Edge vectors, projection, cosine similarity and PCA for reporting.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "polar_probe/error.hpp"
#include "polar_probe/linear_probe.hpp"

namespace polar {

using Vector = Eigen::VectorXd;

enum class Orientation {
    canonical,   // h_head - h_dep
    positional,  // h_lower - h_higher
};

struct EdgeSample {
    std::string sentence_id;
    int head_index = 0;  // 1-based word positions
    int dep_index = 0;
    Vector vector;
    std::optional<std::string> gold_label;
    Orientation orientation = Orientation::canonical;
};

/// h_a - h_b.
inline Vector edge_embedding(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    if (a.size() != b.size())
        throw DimensionError("edge_embedding: lengths " + std::to_string(a.size()) + " and " +
                             std::to_string(b.size()));
    return a - b;
}

inline Vector project(const LinearProbe& probe, const Eigen::Ref<const Vector>& s) {
    if (s.size() != probe.input_dim())
        throw DimensionError("project: vector length " + std::to_string(s.size()) +
                             " does not match probe input " + std::to_string(probe.input_dim()));
    return probe.matrix * s;
}

/// x.y / (|x| |y|), clamped to [-1, 1].
inline double cosine(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
    if (x.size() != y.size())
        throw DimensionError("cosine: lengths " + std::to_string(x.size()) + " and " +
                             std::to_string(y.size()));
    const double nx = x.norm();
    const double ny = y.norm();
    if (nx == 0.0 || ny == 0.0) throw DegenerateVectorError("cosine of a zero-norm vector");
    return std::clamp(x.dot(y) / (nx * ny), -1.0, 1.0);
}

struct PcaResult {
    Eigen::MatrixXd coordinates;     // points x dims
    Eigen::VectorXd explained_ratio;  // dims, non-increasing
    Eigen::MatrixXd components;      // features x dims
    Eigen::RowVectorXd mean;
};

/// Mean-centred projection onto the top `dims` right singular vectors.
inline PcaResult pca_project(const Eigen::MatrixXd& points, int dims) {
    if (dims < 1) throw DimensionError("pca_project: dims must be positive");
    if (points.rows() < dims)
        throw DimensionError("pca_project: " + std::to_string(points.rows()) +
                             " points is fewer than " + std::to_string(dims) + " dims");
    if (points.cols() < dims)
        throw DimensionError("pca_project: " + std::to_string(points.cols()) +
                             " features is fewer than " + std::to_string(dims) + " dims");
    PcaResult r;
    r.mean = points.colwise().mean();
    const Eigen::MatrixXd centred = points.rowwise() - r.mean;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const double total = sv.squaredNorm();
    r.components = svd.matrixV().leftCols(dims);
    // sign convention: largest-magnitude loading of each component is positive
    for (int c = 0; c < dims; ++c) {
        Eigen::Index arg;
        r.components.col(c).cwiseAbs().maxCoeff(&arg);
        if (r.components(arg, c) < 0) r.components.col(c) *= -1.0;
    }
    r.coordinates = centred * r.components;
    r.explained_ratio = Eigen::VectorXd::Zero(dims);
    if (total > 0.0)
        for (int c = 0; c < dims && c < sv.size(); ++c) r.explained_ratio[c] = sv[c] * sv[c] / total;
    return r;
}

}  // namespace polar
