#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numeric>
#include <vector>

#include "adpsplit/child_init.hpp"

namespace adpsplit {

struct MergeGroup {
    std::vector<std::size_t> members;  // indices into the proposal list, ascending
    Vec3 merged_mu = Vec3::Zero();
    Mat3 merged_cov = Mat3::Identity();
    Vec3 merged_rgb = Vec3::Zero();
    double merged_opacity = 0.0;
    /// Frame and per-axis standard deviations with merged_cov = rot diag(scale^2) rot^T.
    Mat3 rot = Mat3::Identity();
    Vec3 scale = Vec3::Ones();
    int parent = -1;
    /// Longest shortest path between two members in the merge graph.
    int graph_depth = 0;

    double extent() const { return scale.cwiseAbs2().maxCoeff(); }
};

namespace merge_detail {
inline double mahalanobis(const Mat3& cov, const Vec3& d) { return std::sqrt(std::max(0.0, d.dot(cov.ldlt().solve(d)))); }
} // namespace merge_detail

inline bool mergeable(const ChildProposal& a, const ChildProposal& b, double gamma_d, double gamma_c) {
    if (a.parent != b.parent) throw InvariantError("mergeable: proposals belong to different parents");
    if ((a.rgb - b.rgb).cwiseAbs().maxCoeff() > gamma_c) return false;
    const Vec3 delta = b.mu - a.mu;
    return merge_detail::mahalanobis(a.covariance(), delta) + merge_detail::mahalanobis(b.covariance(), delta) <= gamma_d;
}

/// Merged Gaussian of the given members. A single member is reproduced
/// exactly.
inline MergeGroup merge_params(const std::vector<ChildProposal>& proposals, std::vector<std::size_t> members) {
    if (members.empty()) throw InvariantError("merge_params: empty group");
    std::sort(members.begin(), members.end());
    MergeGroup g;
    g.members = members;
    g.parent = proposals[members.front()].parent;
    if (members.size() == 1) {
        const ChildProposal& c = proposals[members.front()];
        g.merged_mu = c.mu;
        g.merged_cov = c.covariance();
        g.merged_rgb = c.rgb;
        g.merged_opacity = c.opacity;
        g.rot = c.rot;
        g.scale = c.scale;
        return g;
    }
    const double m = static_cast<double>(members.size());
    Mat3 mean_cov = Mat3::Zero();
    for (std::size_t i : members) {
        const ChildProposal& c = proposals[i];
        if (c.parent != g.parent) throw InvariantError("merge_params: members belong to different parents");
        g.merged_mu += c.mu;
        g.merged_rgb += c.rgb;
        g.merged_opacity += c.opacity - proposals[members.front()].opacity;
        mean_cov += c.covariance();
    }
    g.merged_mu /= m;
    g.merged_rgb /= m;
    // offset form keeps the shared parent opacity exact
    g.merged_opacity = proposals[members.front()].opacity + g.merged_opacity / m;
    mean_cov /= m;

    const Eigen::SelfAdjointEigenSolver<Mat3> eig(0.5 * (mean_cov + mean_cov.transpose()));
    Mat3 e = eig.eigenvectors();
    if (e.determinant() < 0.0) e.col(0) = -e.col(0);
    Vec3 reach = Vec3::Zero();
    for (std::size_t i : members) {
        const ChildProposal& c = proposals[i];
        const Mat3 cov = c.covariance();
        for (int r = 0; r < 3; ++r) {
            const Vec3 er = e.col(r);
            const double span = std::abs(er.dot(c.mu - g.merged_mu)) + std::sqrt(std::max(0.0, er.dot(cov * er)));
            reach[r] = std::max(reach[r], span);
        }
    }
    g.rot = e;
    g.scale = reach;
    g.merged_cov = e * reach.cwiseAbs2().asDiagonal() * e.transpose();
    return g;
}

struct MergeGraphStats {
    std::size_t edges = 0;
    std::size_t groups = 0;
    int max_depth = 0;
};

/// Connected components of the mergeable graph over one parent's proposals,
/// ordered by smallest member index.
inline std::vector<MergeGroup> merge_groups(const std::vector<ChildProposal>& proposals, double gamma_d,
                                            double gamma_c, MergeGraphStats* stats = nullptr) {
    const std::size_t n = proposals.size();
    std::vector<std::vector<std::size_t>> adj(n);
    std::size_t edges = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (mergeable(proposals[i], proposals[j], gamma_d, gamma_c)) {
                adj[i].push_back(j);
                adj[j].push_back(i);
                ++edges;
            }

    std::vector<int> label(n, -1);
    std::vector<std::vector<std::size_t>> comps;
    for (std::size_t s = 0; s < n; ++s) {
        if (label[s] >= 0) continue;
        const int id = static_cast<int>(comps.size());
        comps.emplace_back();
        std::deque<std::size_t> q{s};
        label[s] = id;
        while (!q.empty()) {
            const std::size_t a = q.front();
            q.pop_front();
            comps.back().push_back(a);
            for (std::size_t b : adj[a])
                if (label[b] < 0) {
                    label[b] = id;
                    q.push_back(b);
                }
        }
    }

    auto eccentricity = [&](std::size_t s) {
        std::vector<int> dist(n, -1);
        std::deque<std::size_t> q{s};
        dist[s] = 0;
        int far = 0;
        while (!q.empty()) {
            const std::size_t a = q.front();
            q.pop_front();
            far = std::max(far, dist[a]);
            for (std::size_t b : adj[a])
                if (dist[b] < 0) {
                    dist[b] = dist[a] + 1;
                    q.push_back(b);
                }
        }
        return far;
    };

    std::vector<MergeGroup> groups;
    groups.reserve(comps.size());
    int max_depth = 0;
    for (const auto& c : comps) {
        MergeGroup g = merge_params(proposals, c);
        for (std::size_t s : c) g.graph_depth = std::max(g.graph_depth, eccentricity(s));
        max_depth = std::max(max_depth, g.graph_depth);
        groups.push_back(std::move(g));
    }
    if (stats) *stats = {edges, groups.size(), max_depth};
    return groups;
}

/// Keeps the n_max groups with the largest extent. Sort is stable, so equal
/// extents keep construction order.
inline std::vector<MergeGroup> cap_children(std::vector<MergeGroup> groups, int n_max) {
    std::stable_sort(groups.begin(), groups.end(),
                     [](const MergeGroup& a, const MergeGroup& b) { return a.extent() > b.extent(); });
    if (n_max >= 0 && groups.size() > static_cast<std::size_t>(n_max)) groups.resize(static_cast<std::size_t>(n_max));
    return groups;
}

} // namespace adpsplit
