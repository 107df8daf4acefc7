#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "polar_probe/error.hpp"

namespace polar {

enum class ProbeKind { structural, angular, polar, identity };

inline std::string_view to_string(ProbeKind k) {
    switch (k) {
        case ProbeKind::structural: return "structural";
        case ProbeKind::angular: return "angular";
        case ProbeKind::polar: return "polar";
        case ProbeKind::identity: return "identity";
    }
    return "?";
}

inline ProbeKind parse_probe_kind(std::string_view s) {
    if (s == "structural") return ProbeKind::structural;
    if (s == "angular") return ProbeKind::angular;
    if (s == "polar") return ProbeKind::polar;
    if (s == "identity" || s == "none") return ProbeKind::identity;
    throw ConfigError("unknown probe kind '" + std::string(s) + "'");
}

/// Linear map applied as s -> B s, with B of shape k'' x k.
struct LinearProbe {
    Eigen::MatrixXd matrix;
    ProbeKind kind = ProbeKind::polar;
    double lambda = 0.0;
    int layer = 0;
    std::uint64_t seed = 0;
    int selected_epoch = -1;

    Eigen::Index input_dim() const { return matrix.cols(); }   // k
    Eigen::Index output_dim() const { return matrix.rows(); }  // k''

    /// The "no probe" baseline: raw activations.
    static LinearProbe identity(Eigen::Index k, int layer = 0) {
        LinearProbe p;
        p.matrix = Eigen::MatrixXd::Identity(k, k);
        p.kind = ProbeKind::identity;
        p.layer = layer;
        return p;
    }
};

inline void check_probe(const LinearProbe& p) {
    if (p.matrix.rows() > p.matrix.cols())
        throw DimensionError("probe output dimension " + std::to_string(p.matrix.rows()) +
                             " exceeds input dimension " + std::to_string(p.matrix.cols()));
    if (!p.matrix.allFinite()) throw NumericError("probe matrix has non-finite entries");
    if (p.lambda < 0.0) throw ConfigError("probe lambda must be non-negative");
}

}  // namespace polar
