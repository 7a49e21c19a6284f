#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "adpsplit/child_init.hpp"
#include "adpsplit/cross_view_merge.hpp"
#include "adpsplit/error_partition.hpp"
#include "adpsplit/rasterizer.hpp"
#include "adpsplit/scene_model.hpp"

namespace adpsplit {

struct DensifyStats {
    std::vector<double> grad_accum;
    std::vector<double> denom;

    DensifyStats() = default;
    explicit DensifyStats(std::size_t n) : grad_accum(n, 0.0), denom(n, 0.0) {}

    std::size_t size() const { return grad_accum.size(); }
    /// Average viewspace gradient norm; 0 where the Gaussian was never visible.
    double g(std::size_t i) const { return denom[i] > 0.0 ? grad_accum[i] / denom[i] : 0.0; }
    void clear(std::size_t i) { grad_accum[i] = denom[i] = 0.0; }
};

inline void accumulate_stats(DensifyStats& stats, const GradOutput& grads) {
    if (stats.size() != grads.viewspace_grad.size() || grads.visible.size() != stats.size())
        throw DimensionMismatch("accumulate_stats: stats and gradients cover different scenes");
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (!grads.visible[i]) continue;
        stats.grad_accum[i] += grads.viewspace_grad[i].norm();
        stats.denom[i] += 1.0;
    }
}

struct Selection {
    std::vector<std::size_t> split;
    std::vector<std::size_t> clone;
};

inline Selection select(const DensifyStats& stats, const Scene& scene, double tau_g, double tau_s_abs) {
    if (stats.size() != scene.size()) throw DimensionMismatch("select: stats do not cover the scene");
    Selection sel;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!(stats.denom[i] > 0.0) || !(stats.g(i) >= tau_g)) continue;
        (scene.gaussians[i].scale.maxCoeff() > tau_s_abs ? sel.split : sel.clone).push_back(i);
    }
    return sel;
}

/// n children with means drawn from the parent distribution and scale
/// s / (eta n). Offsets use three standard-normal draws per child in x, y, z
/// order, scaled by s and rotated by R.
template <class Rng>
std::vector<Gaussian3D> vanilla_split(const Gaussian3D& parent, int n, double eta, Rng& rng) {
    if (n < 1 || !(eta > 0.0)) throw InvariantError("vanilla_split: need n >= 1 and eta > 0");
    std::normal_distribution<double> normal(0.0, 1.0);
    const Mat3 r = rotation_matrix(parent.rot);
    std::vector<Gaussian3D> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Vec3 z;
        z.x() = normal(rng);
        z.y() = normal(rng);
        z.z() = normal(rng);
        Gaussian3D c = parent;
        c.mu = parent.mu + r * parent.scale.cwiseProduct(z);
        c.scale = parent.scale / (eta * n);
        out.push_back(std::move(c));
    }
    return out;
}

inline Gaussian3D clone(const Gaussian3D& parent) { return parent; }

enum class SplitCase { Children = 4, VanillaFallback = 5, Reset = 6 };

struct CandidateReport {
    std::size_t index = 0;
    SplitCase outcome = SplitCase::Reset;
    std::vector<int> regions_per_view;
    std::size_t proposals = 0;
    std::size_t dropped_proposals = 0;
    std::size_t merged = 0;
    std::size_t merge_edges = 0;
    int merge_depth = 0;
    std::size_t children = 0;
    std::size_t inserted = 0;
    bool dominant = false;
    double parent_opacity = 0.0;
    double copy_opacity = 0.0;
};

struct SplitReport {
    std::size_t count_before = 0;
    std::size_t count_after = 0;
    std::vector<std::size_t> views;
    std::size_t clones = 0;
    std::vector<CandidateReport> candidates;

    std::size_t count(SplitCase c) const {
        return static_cast<std::size_t>(std::count_if(candidates.begin(), candidates.end(),
                                                      [c](const CandidateReport& r) { return r.outcome == c; }));
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["count_before"] = count_before;
        j["count_after"] = count_after;
        j["views"] = views;
        j["clones"] = clones;
        j["children_case"] = count(SplitCase::Children);
        j["fallback_case"] = count(SplitCase::VanillaFallback);
        j["reset_case"] = count(SplitCase::Reset);
        auto& arr = j["candidates"] = nlohmann::json::array();
        for (const auto& c : candidates) {
            arr.push_back({{"index", c.index},
                           {"case", static_cast<int>(c.outcome)},
                           {"fallback", c.outcome == SplitCase::VanillaFallback},
                           {"reset", c.outcome == SplitCase::Reset},
                           {"dominant", c.dominant},
                           {"regions_per_view", c.regions_per_view},
                           {"proposals", c.proposals},
                           {"dropped_proposals", c.dropped_proposals},
                           {"merged_groups", c.merged},
                           {"merge_edges", c.merge_edges},
                           {"merge_depth", c.merge_depth},
                           {"children", c.children},
                           {"inserted", c.inserted},
                           {"parent_opacity", c.parent_opacity},
                           {"copy_opacity", c.copy_opacity}});
        }
        return j;
    }
};

/// Outcome of one densification step. `source[i]` is the old index that new
/// Gaussian i continues (it keeps that Gaussian's optimizer state), or -1 for
/// a newly inserted Gaussian. `reset` lists new indices whose optimizer state
/// must be zeroed.
struct DensifyResult {
    Scene scene;
    DensifyStats stats;
    SplitReport report;
    std::vector<long> source;
    std::vector<std::size_t> reset;
};

namespace adc_detail {

inline Gaussian3D child_gaussian(const MergeGroup& g, const Gaussian3D& parent) {
    Gaussian3D c;
    c.mu = g.merged_mu;
    c.rot = quat_from_rotation(g.rot);
    c.scale = g.scale;
    c.opacity = g.merged_opacity;
    c.sh_dc = rgb_to_dc(g.merged_rgb);
    c.sh_rest.assign(parent.sh_rest.size(), Vec3::Zero());
    return c;
}

/// Kept originals in order (minus removed ones), then the insertions in the
/// order given. Stats survive for kept Gaussians that were not touched.
inline DensifyResult assemble(const Scene& scene, const DensifyStats& stats, const std::vector<char>& removed,
                              const std::vector<char>& touched, const std::vector<std::size_t>& reset_old,
                              std::vector<Gaussian3D> inserted) {
    DensifyResult out;
    out.scene.extent = scene.extent;
    std::vector<long> new_index(scene.size(), -1);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (removed[i]) continue;
        new_index[i] = static_cast<long>(out.scene.gaussians.size());
        out.scene.gaussians.push_back(scene.gaussians[i]);
        out.source.push_back(static_cast<long>(i));
    }
    for (auto& g : inserted) {
        out.scene.gaussians.push_back(std::move(g));
        out.source.push_back(-1);
    }
    out.stats = DensifyStats(out.scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (new_index[i] < 0 || touched[i]) continue;
        const auto k = static_cast<std::size_t>(new_index[i]);
        out.stats.grad_accum[k] = stats.grad_accum[i];
        out.stats.denom[k] = stats.denom[i];
    }
    for (std::size_t i : reset_old) out.reset.push_back(static_cast<std::size_t>(new_index[i]));
    return out;
}

} // namespace adc_detail

/// V distinct camera indices, in draw order.
template <class Rng>
std::vector<std::size_t> sample_views(std::size_t n_cameras, int v, Rng& rng) {
    std::vector<std::size_t> idx(n_cameras);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t take = std::min(n_cameras, static_cast<std::size_t>(std::max(v, 0)));
    for (std::size_t k = 0; k < take; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n_cameras - 1);
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(take);
    return idx;
}

/// Per-candidate intermediate data of the error-guided split, exposed for
/// inspection and dumping.
struct CandidatePlan {
    std::size_t index = 0;
    bool dominant = false;
    std::vector<int> regions_per_view;
    std::vector<ErrorRegion> regions;
    std::vector<ChildProposal> proposals;
    std::size_t dropped = 0;
    MergeGraphStats graph;
    std::vector<MergeGroup> children;  // merged and capped
};

struct ViewMaps {
    std::size_t camera = 0;
    RenderOutput render;
    ErrorMaps maps;
};

/// Stages 1 to 3 of the error-guided split for every split candidate.
inline std::vector<CandidatePlan> plan_splits(const Scene& scene, const std::vector<Camera>& cameras,
                                              const std::vector<Image>& gt_images,
                                              const std::vector<std::size_t>& split,
                                              const std::vector<std::size_t>& views, const AdpSplitConfig& cfg,
                                              const Vec3& background, std::vector<ViewMaps>* dump = nullptr) {
    std::vector<char> is_candidate(scene.size(), 0);
    std::map<std::size_t, std::size_t> slot;
    std::vector<CandidatePlan> plans(split.size());
    for (std::size_t k = 0; k < split.size(); ++k) {
        is_candidate[split[k]] = 1;
        slot[split[k]] = k;
        plans[k].index = split[k];
        plans[k].regions_per_view.assign(views.size(), 0);
    }
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
        const std::size_t cam_idx = views[vi];
        const Camera& cam = cameras.at(cam_idx);
        RenderOutput out = render(scene, cam, background);
        for (std::int32_t d : out.dominant_map.values)
            if (d >= 0 && is_candidate[static_cast<std::size_t>(d)]) plans[slot[static_cast<std::size_t>(d)]].dominant = true;
        ErrorMaps maps = build_error_maps(out.image, gt_images.at(cam_idx), cfg);
        for (ErrorRegion& r : partition(maps, out.dominant_map, is_candidate, cfg.m_min, static_cast<int>(cam_idx))) {
            CandidatePlan& plan = plans[slot[static_cast<std::size_t>(r.candidate)]];
            ++plan.regions_per_view[vi];
            plan.regions.push_back(region_stats(std::move(r), gt_images[cam_idx]));
        }
        if (dump) dump->push_back({cam_idx, std::move(out), std::move(maps)});
    }
    for (CandidatePlan& plan : plans) {
        const Gaussian3D& parent = scene.gaussians[plan.index];
        for (const ErrorRegion& r : plan.regions) {
            auto child = init_child(parent, r, cameras[static_cast<std::size_t>(r.view)], cfg,
                                    static_cast<int>(plan.index), r.view);
            if (child)
                plan.proposals.push_back(*child);
            else
                ++plan.dropped;
        }
        plan.children = cap_children(merge_groups(plan.proposals, cfg.gamma_d, cfg.gamma_c, &plan.graph), cfg.n_max);
    }
    return plans;
}

/// One error-guided densification step. `gt_images[i]` belongs to
/// `cameras[i]`. The rng drives view sampling and the vanilla fallback.
template <class Rng>
DensifyResult adpsplit_step(const Scene& scene, const std::vector<Camera>& cameras, const std::vector<Image>& gt_images,
                            const DensifyStats& stats, const AdpSplitConfig& cfg, Rng& rng,
                            const Vec3& background = Vec3::Zero(), std::vector<CandidatePlan>* plans_out = nullptr,
                            std::vector<ViewMaps>* maps_out = nullptr) {
    if (cameras.size() != gt_images.size()) throw DimensionMismatch("adpsplit_step: one gt image per camera");
    const std::vector<std::size_t> views = sample_views(cameras.size(), cfg.v_views, rng);
    const Selection sel = select(stats, scene, cfg.tau_g, cfg.tau_s * scene.extent);
    std::vector<CandidatePlan> plans = plan_splits(scene, cameras, gt_images, sel.split, views, cfg, background, maps_out);

    SplitReport report;
    report.count_before = scene.size();
    report.views = views;
    report.clones = sel.clone.size();
    std::vector<char> removed(scene.size(), 0), touched(scene.size(), 0);
    std::vector<std::size_t> reset_old;
    std::vector<Gaussian3D> inserted;
    for (std::size_t i : sel.clone) {
        touched[i] = 1;
        inserted.push_back(clone(scene.gaussians[i]));
    }
    for (const CandidatePlan& plan : plans) {
        const Gaussian3D& parent = scene.gaussians[plan.index];
        touched[plan.index] = 1;
        CandidateReport cr;
        cr.index = plan.index;
        cr.dominant = plan.dominant;
        cr.regions_per_view = plan.regions_per_view;
        cr.proposals = plan.proposals.size();
        cr.dropped_proposals = plan.dropped;
        cr.merged = plan.graph.groups;
        cr.merge_edges = plan.graph.edges;
        cr.merge_depth = plan.graph.max_depth;
        cr.children = plan.children.size();
        cr.parent_opacity = parent.opacity;
        if (!plan.children.empty()) {
            cr.outcome = SplitCase::Children;
            Gaussian3D copy = parent;
            copy.opacity = parent.opacity / static_cast<double>(plan.children.size() + 1);
            cr.copy_opacity = copy.opacity;
            inserted.push_back(copy);
            for (const MergeGroup& g : plan.children) inserted.push_back(adc_detail::child_gaussian(g, parent));
            cr.inserted = plan.children.size() + 1;
            removed[plan.index] = 1;
        } else if (!plan.dominant) {
            cr.outcome = SplitCase::VanillaFallback;
            for (auto& c : vanilla_split(parent, 2, cfg.eta, rng)) inserted.push_back(std::move(c));
            cr.inserted = 2;
            removed[plan.index] = 1;
        } else {
            cr.outcome = SplitCase::Reset;
            reset_old.push_back(plan.index);
        }
        report.candidates.push_back(std::move(cr));
    }
    DensifyResult out = adc_detail::assemble(scene, stats, removed, touched, reset_old, std::move(inserted));
    report.count_after = out.scene.size();
    out.report = std::move(report);
    if (plans_out) *plans_out = std::move(plans);
    return out;
}

/// Gradient-driven densification with the vanilla operator: clones small
/// candidates and replaces every large candidate by n sampled children.
template <class Rng>
DensifyResult vanilla_densify_step(const Scene& scene, const DensifyStats& stats, const AdpSplitConfig& cfg, int n,
                                   Rng& rng) {
    const Selection sel = select(stats, scene, cfg.tau_g, cfg.tau_s * scene.extent);
    SplitReport report;
    report.count_before = scene.size();
    report.clones = sel.clone.size();
    std::vector<char> removed(scene.size(), 0), touched(scene.size(), 0);
    std::vector<Gaussian3D> inserted;
    for (std::size_t i : sel.clone) {
        touched[i] = 1;
        inserted.push_back(clone(scene.gaussians[i]));
    }
    for (std::size_t i : sel.split) {
        touched[i] = 1;
        removed[i] = 1;
        for (auto& c : vanilla_split(scene.gaussians[i], n, cfg.eta, rng)) inserted.push_back(std::move(c));
        CandidateReport cr;
        cr.index = i;
        cr.outcome = SplitCase::VanillaFallback;
        cr.inserted = static_cast<std::size_t>(n);
        cr.parent_opacity = scene.gaussians[i].opacity;
        report.candidates.push_back(std::move(cr));
    }
    DensifyResult out = adc_detail::assemble(scene, stats, removed, touched, {}, std::move(inserted));
    report.count_after = out.scene.size();
    out.report = std::move(report);
    return out;
}

} // namespace adpsplit
