#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "adpsplit/adc_controller.hpp"
#include "adpsplit/image_io.hpp"
#include "adpsplit/rasterizer.hpp"
#include "adpsplit/scene_model.hpp"

namespace adpsplit {

// ---------------------------------------------------------------------------
// Synthetic data

struct Dataset {
    Scene gt_scene;
    std::vector<Camera> cameras;
    std::vector<Image> images;
    std::vector<std::size_t> train_views;
    std::vector<std::size_t> test_views;
    Vec3 background = Vec3::Zero();
};

/// Camera at `eye` looking at `target` with world +z as the up hint (+y when
/// looking straight along z).
inline Camera look_at(const Vec3& eye, const Vec3& target, int width, int height, double focal) {
    const Vec3 fwd = (target - eye).normalized();
    Vec3 up(0, 0, 1);
    if (std::abs(fwd.dot(up)) > 0.99) up = Vec3(0, 1, 0);
    const Vec3 right = fwd.cross(up).normalized();
    const Vec3 down = fwd.cross(right);
    Camera cam;
    cam.r_c2w.col(0) = right;
    cam.r_c2w.col(1) = down;
    cam.r_c2w.col(2) = fwd;
    cam.center = eye;
    cam.fx = cam.fy = focal;
    cam.px = 0.5 * (width - 1);
    cam.py = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    return cam;
}

/// Every 4th camera is held out.
inline void split_views(Dataset& d) {
    d.train_views.clear();
    d.test_views.clear();
    for (std::size_t i = 0; i < d.cameras.size(); ++i) (i % 4 == 3 ? d.test_views : d.train_views).push_back(i);
}

inline void render_ground_truth(Dataset& d) {
    d.images.clear();
    for (const Camera& cam : d.cameras) d.images.push_back(render(d.gt_scene, cam, d.background).image);
}

/// k random Gaussians inside the unit ball, seen by cameras on two rings of a
/// hemisphere around the origin. Images come from the library renderer.
inline Dataset synth_scene(std::uint64_t seed, int k, int cam_count = 12, int image_size = 48) {
    if (k < 1 || cam_count < 1 || image_size < 1) throw InvariantError("synth_scene: k, cam_count and size must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0), log_scale(std::log(0.04), std::log(0.16)), op(0.6, 0.95),
        col(0.05, 0.95);
    Dataset d;
    d.gt_scene.extent = 1.0;
    for (int i = 0; i < k; ++i) {
        Gaussian3D g;
        Vec3 p;
        do p = Vec3(unit(rng), unit(rng), unit(rng));
        while (p.norm() > 1.0);
        g.mu = 0.6 * p;
        g.scale = Vec3(std::exp(log_scale(rng)), std::exp(log_scale(rng)), std::exp(log_scale(rng)));
        g.rot = Quat(unit(rng), unit(rng), unit(rng), unit(rng)).normalized();
        if (g.rot.w() < 0) g.rot.coeffs() *= -1.0;
        g.opacity = op(rng);
        g.sh_dc = rgb_to_dc(Vec3(col(rng), col(rng), col(rng)));
        d.gt_scene.gaussians.push_back(g);
    }
    const double focal = image_size / (2.0 * std::tan(0.5 * 0.75));  // 0.75 rad field of view
    for (int c = 0; c < cam_count; ++c) {
        const double azimuth = 2.0 * M_PI * c / cam_count;
        const double elevation = c % 2 == 0 ? 0.25 : 0.6;
        const Vec3 eye = 3.0 * Vec3(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                                    std::sin(elevation));
        d.cameras.push_back(look_at(eye, Vec3::Zero(), image_size, image_size, focal));
    }
    render_ground_truth(d);
    split_views(d);
    return d;
}

/// Coarse starting point: `count` ground-truth Gaussians chosen at random,
/// inflated to isotropic blobs at jittered positions with jittered colors.
inline Scene init_scene(const Dataset& d, std::uint64_t seed, int count) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> idx(d.gt_scene.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::max(count, 1))));
    std::sort(idx.begin(), idx.end());
    std::normal_distribution<double> jitter(0.0, 0.05);
    Scene s;
    s.extent = d.gt_scene.extent;
    for (std::size_t i : idx) {
        Gaussian3D g = d.gt_scene.gaussians[i];
        g.mu += Vec3(jitter(rng), jitter(rng), jitter(rng));
        g.scale = Vec3::Constant(0.25 * s.extent);
        g.rot = Quat::Identity();
        g.opacity = 0.5;
        g.sh_dc += Vec3(jitter(rng), jitter(rng), jitter(rng));
        s.gaussians.push_back(g);
    }
    return s;
}

/// A dataset on disk is its ground-truth scene and cameras; images are
/// re-rendered on load.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_scene(d.gt_scene, dir / "gt_scene.txt");
    save_cameras(d.cameras, dir / "cameras.txt");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset d;
    d.gt_scene = load_scene(dir / "gt_scene.txt");
    d.cameras = load_cameras(dir / "cameras.txt");
    render_ground_truth(d);
    split_views(d);
    return d;
}

// ---------------------------------------------------------------------------
// Training

enum class SplitMode { VanillaBinary, VanillaN, AdpSplit };

inline std::string to_string(SplitMode m) {
    switch (m) {
    case SplitMode::VanillaBinary: return "vanilla-binary";
    case SplitMode::VanillaN: return "vanilla-n";
    case SplitMode::AdpSplit: return "adpsplit";
    }
    return "?";
}

inline SplitMode parse_split_mode(const std::string& s) {
    if (s == "vanilla-binary") return SplitMode::VanillaBinary;
    if (s == "vanilla-n") return SplitMode::VanillaN;
    if (s == "adpsplit") return SplitMode::AdpSplit;
    throw InvariantError("unknown split mode '" + s + "'");
}

struct Schedule {
    int total_iters = 3000;
    int densify_from = 0;
    int densify_until = 1200;
    int t_interval = 100;
    SplitMode split_mode = SplitMode::AdpSplit;
    int vanilla_n = 5;
    std::uint64_t seed = 0;
    int log_every = 50;

    void validate() const {
        if (!(0 <= densify_from && densify_from <= densify_until && densify_until <= total_iters))
            throw InvariantError("Schedule: need 0 <= densify_from <= densify_until <= total_iters");
        if (t_interval < 1 || log_every < 1) throw InvariantError("Schedule: intervals must be >= 1");
        if (vanilla_n < 1) throw InvariantError("Schedule: vanilla_n must be >= 1");
    }
};

/// Per-field Adam step sizes. Position rates are multiplied by the scene
/// extent and decay log-linearly from mu to mu_final over the run.
struct LearningRates {
    double mu = 2e-3;
    double mu_final = 2e-5;
    double log_scale = 1e-2;
    double rot = 2e-3;
    double logit_opacity = 5e-2;
    double sh_dc = 1e-2;
    double sh_rest = 5e-4;
};

struct MetricsRow {
    int iteration = 0;
    double loss = 0.0;
    double psnr = 0.0;
    std::size_t count = 0;
    int rounds = 0;
    double seconds = 0.0;
};

struct DensifyRow {
    int iteration = 0;
    int round = 0;
    std::size_t before = 0;
    std::size_t after = 0;
    std::size_t clones = 0;
    std::size_t children_case = 0;
    std::size_t fallback_case = 0;
    std::size_t reset_case = 0;
    std::size_t inserted_children = 0;
};

namespace csv_detail {
inline std::string num(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, end);
}
} // namespace csv_detail

/// Log rows. The CSV forms carry no wall-clock values, so equal runs give
/// equal files; timings go to a separate CSV.
struct MetricsLog {
    std::vector<MetricsRow> rows;
    std::vector<DensifyRow> densify;

    std::string metrics_csv() const {
        std::ostringstream out;
        out << "iteration,loss,psnr,gaussians,rounds\n";
        for (const auto& r : rows)
            out << r.iteration << ',' << csv_detail::num(r.loss) << ',' << csv_detail::num(r.psnr) << ',' << r.count
                << ',' << r.rounds << '\n';
        return out.str();
    }
    std::string densify_csv() const {
        std::ostringstream out;
        out << "iteration,round,before,after,clones,children_case,fallback_case,reset_case,inserted_children\n";
        for (const auto& r : densify)
            out << r.iteration << ',' << r.round << ',' << r.before << ',' << r.after << ',' << r.clones << ','
                << r.children_case << ',' << r.fallback_case << ',' << r.reset_case << ',' << r.inserted_children
                << '\n';
        return out.str();
    }
    std::string timing_csv() const {
        std::ostringstream out;
        out << "iteration,seconds\n";
        for (const auto& r : rows) out << r.iteration << ',' << csv_detail::num(r.seconds) << '\n';
        return out.str();
    }
};

struct TrainResult {
    Scene scene;
    MetricsLog log;
    int rounds = 0;
    std::vector<SplitReport> reports;
};

namespace train_detail {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;
constexpr double kOpacityClamp = 1e-6;

struct AdamState {
    std::vector<double> m, v;
    int step = 0;
};

inline double logit(double o) {
    o = std::clamp(o, kOpacityClamp, 1.0 - kOpacityClamp);
    return std::log(o / (1.0 - o));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// L1 loss averaged over pixels and channels, with its image cotangent.
inline double l1_loss(const Image& img, const Image& gt, Image& dl) {
    require_same_size(img, gt, "l1_loss");
    dl = Image(img.width, img.height, Vec3::Zero());
    const double norm = 1.0 / (3.0 * static_cast<double>(img.size()));
    double sum = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        const Vec3 d = img.values[i] - gt.values[i];
        sum += d.cwiseAbs().sum();
        for (int c = 0; c < 3; ++c) dl.values[i][c] = d[c] > 0 ? norm : (d[c] < 0 ? -norm : 0.0);
    }
    return sum * norm;
}

/// One Adam update of every Gaussian in place.
inline void adam_step(Scene& scene, std::vector<AdamState>& state, const GradOutput& g, const LearningRates& lr,
                      double mu_lr) {
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!g.visible[i]) continue;
        Gaussian3D& p = scene.gaussians[i];
        const std::size_t k = p.sh_rest.size();
        AdamState& st = state[i];
        const std::size_t dims = 14 + 3 * k;
        if (st.m.size() != dims) {
            st.m.assign(dims, 0.0);
            st.v.assign(dims, 0.0);
            st.step = 0;
        }
        ++st.step;
        const double c1 = 1.0 - std::pow(kBeta1, st.step), c2 = 1.0 - std::pow(kBeta2, st.step);
        auto update = [&](std::size_t j, double grad, double rate) {
            st.m[j] = kBeta1 * st.m[j] + (1.0 - kBeta1) * grad;
            st.v[j] = kBeta2 * st.v[j] + (1.0 - kBeta2) * grad * grad;
            return -rate * (st.m[j] / c1) / (std::sqrt(st.v[j] / c2) + kAdamEps);
        };
        for (int a = 0; a < 3; ++a) p.mu[a] += update(static_cast<std::size_t>(a), g.mu[i][a], mu_lr);
        for (int a = 0; a < 3; ++a) {
            const double ls = std::log(p.scale[a]) + update(3 + a, g.scale[i][a] * p.scale[a], lr.log_scale);
            p.scale[a] = std::exp(ls);
        }
        Eigen::Vector4d q(p.rot.w(), p.rot.x(), p.rot.y(), p.rot.z());
        for (int a = 0; a < 4; ++a) q[a] += update(6 + a, g.rot[i][a], lr.rot);
        q.normalize();
        p.rot = Quat(q[0], q[1], q[2], q[3]);
        const double o = p.opacity;
        p.opacity = sigmoid(logit(o) + update(10, g.opacity[i] * o * (1.0 - o), lr.logit_opacity));
        p.opacity = std::clamp(p.opacity, kOpacityClamp, 1.0);
        for (int a = 0; a < 3; ++a) p.sh_dc[a] += update(11 + a, g.sh_dc[i][a], lr.sh_dc);
        for (std::size_t r = 0; r < k; ++r)
            for (int a = 0; a < 3; ++a) p.sh_rest[r][a] += update(14 + 3 * r + a, g.sh_rest[i][r][a], lr.sh_rest);
    }
}

inline double held_out_psnr(const Scene& scene, const Dataset& d) {
    const auto& views = d.test_views.empty() ? d.train_views : d.test_views;
    double sum = 0.0;
    for (std::size_t v : views) sum += psnr(render(scene, d.cameras[v], d.background).image, d.images[v]);
    return views.empty() ? 0.0 : sum / static_cast<double>(views.size());
}

inline std::mt19937_64 step_rng(std::uint64_t seed, int iteration) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(iteration)};
    return std::mt19937_64(seq);
}

} // namespace train_detail

/// Viewspace gradients in normalized device units: pixels scaled by half
/// the image size.
inline void to_ndc_units(GradOutput& grads, const Camera& cam) {
    for (auto& vg : grads.viewspace_grad) vg = vg.cwiseProduct(Vec2(0.5 * cam.width, 0.5 * cam.height));
}

/// Densification statistics from one L1 backward pass per training view.
inline DensifyStats collect_stats(const Scene& scene, const Dataset& d) {
    DensifyStats stats(scene.size());
    Image dl;
    for (std::size_t v : d.train_views) {
        const Camera& cam = d.cameras[v];
        train_detail::l1_loss(render(scene, cam, d.background).image, d.images[v], dl);
        GradOutput g = render_backward(scene, cam, d.background, dl);
        to_ndc_units(g, cam);
        accumulate_stats(stats, g);
    }
    return stats;
}

/// Adam on an L1 loss, one training camera per iteration in round-robin
/// order, with densification every t_interval iterations in
/// (densify_from, densify_until]. Viewspace gradients are accumulated in
/// normalized device units.
inline TrainResult train(const Scene& init, const Dataset& data, const Schedule& sched, const AdpSplitConfig& cfg,
                         const LearningRates& lr = {}) {
    using namespace train_detail;
    sched.validate();
    cfg.validate();
    if (init.gaussians.empty()) throw InvariantError("train: initial scene is empty");
    if (data.train_views.empty()) throw InvariantError("train: no training views");
    validate(init);

    std::vector<Camera> train_cams;
    std::vector<Image> train_imgs;
    for (std::size_t v : data.train_views) {
        train_cams.push_back(data.cameras[v]);
        train_imgs.push_back(data.images[v]);
    }

    TrainResult res;
    res.scene = init;
    std::vector<AdamState> adam(init.size());
    DensifyStats stats(init.size());
    const auto t0 = std::chrono::steady_clock::now();
    auto seconds = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    double loss_window = 0.0;
    int loss_count = 0;
    auto log_row = [&](int it) {
        MetricsRow row;
        row.iteration = it;
        row.loss = loss_count ? loss_window / loss_count : 0.0;
        row.psnr = held_out_psnr(res.scene, data);
        row.count = res.scene.size();
        row.rounds = res.rounds;
        row.seconds = seconds();
        res.log.rows.push_back(row);
        loss_window = 0.0;
        loss_count = 0;
    };
    {
        // row 0 reports the loss of the initialization over all training views
        Image scratch;
        for (std::size_t v = 0; v < train_cams.size(); ++v)
            loss_window += l1_loss(render(res.scene, train_cams[v], data.background).image, train_imgs[v], scratch);
        loss_count = static_cast<int>(train_cams.size());
    }
    log_row(0);

    const double log_mu0 = std::log(lr.mu * init.extent), log_mu1 = std::log(lr.mu_final * init.extent);
    Image dl;
    for (int it = 1; it <= sched.total_iters; ++it) {
        const std::size_t v = static_cast<std::size_t>(it - 1) % train_cams.size();
        const Camera& cam = train_cams[v];
        const RenderOutput out = render(res.scene, cam, data.background);
        const double loss = l1_loss(out.image, train_imgs[v], dl);
        if (!std::isfinite(loss))
            throw Divergence("train: non-finite loss at iteration " + std::to_string(it) + " with " +
                             std::to_string(res.scene.size()) + " gaussians");
        loss_window += loss;
        ++loss_count;
        GradOutput grads = render_backward(res.scene, cam, data.background, dl);

        if (it <= sched.densify_until) {
            to_ndc_units(grads, cam);
            accumulate_stats(stats, grads);
        }
        const double frac = sched.total_iters > 1 ? double(it - 1) / double(sched.total_iters - 1) : 0.0;
        adam_step(res.scene, adam, grads, lr, std::exp(log_mu0 + frac * (log_mu1 - log_mu0)));
        for (std::size_t i = 0; i < res.scene.size(); ++i)
            if (!res.scene.gaussians[i].mu.allFinite() || !res.scene.gaussians[i].scale.allFinite())
                throw Divergence("train: gaussian " + std::to_string(i) + " diverged at iteration " +
                                 std::to_string(it));

        if (it > sched.densify_from && it <= sched.densify_until && it % sched.t_interval == 0) {
            std::mt19937_64 rng = step_rng(sched.seed, it);
            DensifyResult d;
            switch (sched.split_mode) {
            case SplitMode::AdpSplit:
                d = adpsplit_step(res.scene, train_cams, train_imgs, stats, cfg, rng, data.background);
                break;
            case SplitMode::VanillaBinary: d = vanilla_densify_step(res.scene, stats, cfg, 2, rng); break;
            case SplitMode::VanillaN: d = vanilla_densify_step(res.scene, stats, cfg, sched.vanilla_n, rng); break;
            }
            std::vector<AdamState> moved(d.scene.size());
            for (std::size_t k = 0; k < d.scene.size(); ++k)
                if (d.source[k] >= 0) moved[k] = std::move(adam[static_cast<std::size_t>(d.source[k])]);
            for (std::size_t k : d.reset) moved[k] = AdamState{};
            adam = std::move(moved);
            stats = std::move(d.stats);
            res.scene = std::move(d.scene);
            ++res.rounds;

            DensifyRow row;
            row.iteration = it;
            row.round = res.rounds;
            row.before = d.report.count_before;
            row.after = d.report.count_after;
            row.clones = d.report.clones;
            row.children_case = d.report.count(SplitCase::Children);
            row.fallback_case = d.report.count(SplitCase::VanillaFallback);
            row.reset_case = d.report.count(SplitCase::Reset);
            for (const auto& c : d.report.candidates)
                if (c.outcome == SplitCase::Children) row.inserted_children += c.children;
            res.log.densify.push_back(row);
            res.reports.push_back(std::move(d.report));
        }
        if (it % sched.log_every == 0 || it == sched.total_iters) log_row(it);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Comparison

struct ExperimentSettings {
    int k = 32;
    int cam_count = 12;
    int image_size = 48;
    int init_count = 4;
    Schedule schedule;
    LearningRates lr;
    AdpSplitConfig cfg;
    /// Target = gt-scene PSNR minus this margin.
    double target_margin_db = 3.0;

    ExperimentSettings() { cfg.v_views = 6; }
};

struct ComparisonRow {
    std::uint64_t seed = 0;
    SplitMode mode = SplitMode::AdpSplit;
    double final_psnr = 0.0;
    std::size_t final_count = 0;
    int rounds = 0;
    /// Densification rounds done when held-out PSNR first reached the target, -1 if never.
    int rounds_to_target = -1;
    double target_psnr = 0.0;
};

inline int rounds_to_reach(const MetricsLog& log, double target) {
    for (const auto& r : log.rows)
        if (r.psnr >= target) return r.rounds;
    return -1;
}

/// PSNR of the ground-truth scene against its own held-out images.
inline double gt_scene_psnr(const Dataset& d) { return train_detail::held_out_psnr(d.gt_scene, d); }

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::ostringstream out;
    out << "seed,mode,final_psnr,final_gaussians,rounds,rounds_to_target,target_psnr\n";
    for (const auto& r : rows)
        out << r.seed << ',' << to_string(r.mode) << ',' << csv_detail::num(r.final_psnr) << ',' << r.final_count << ','
            << r.rounds << ',' << r.rounds_to_target << ',' << csv_detail::num(r.target_psnr) << '\n';
    return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
}

/// Runs the three split modes per seed from a shared initialization. When
/// `out_dir` is non-empty, each run writes its metrics, final scene and a
/// held-out rendering under out_dir/seed_<s>/<mode>/.
inline std::vector<ComparisonRow> compare_experiment(const std::vector<std::uint64_t>& seeds,
                                                     const ExperimentSettings& settings,
                                                     const std::filesystem::path& out_dir = {},
                                                     const std::vector<SplitMode>& modes = {SplitMode::VanillaBinary,
                                                                                            SplitMode::VanillaN,
                                                                                            SplitMode::AdpSplit}) {
    std::vector<ComparisonRow> rows;
    for (std::uint64_t seed : seeds) {
        const Dataset data = synth_scene(seed, settings.k, settings.cam_count, settings.image_size);
        const Scene init = init_scene(data, seed, settings.init_count);
        const double target = gt_scene_psnr(data) - settings.target_margin_db;
        for (SplitMode mode : modes) {
            Schedule sched = settings.schedule;
            sched.split_mode = mode;
            sched.seed = seed;
            const TrainResult res = train(init, data, sched, settings.cfg, settings.lr);
            ComparisonRow row;
            row.seed = seed;
            row.mode = mode;
            row.final_psnr = res.log.rows.back().psnr;
            row.final_count = res.scene.size();
            row.rounds = res.rounds;
            row.rounds_to_target = rounds_to_reach(res.log, target);
            row.target_psnr = target;
            rows.push_back(row);
            if (!out_dir.empty()) {
                const auto dir = out_dir / ("seed_" + std::to_string(seed)) / to_string(mode);
                write_text(dir / "metrics.csv", res.log.metrics_csv());
                write_text(dir / "densify.csv", res.log.densify_csv());
                write_text(dir / "timing.csv", res.log.timing_csv());
                save_scene(res.scene, dir / "scene.txt");
                const std::size_t v = data.test_views.empty() ? 0 : data.test_views.front();
                write_png(render(res.scene, data.cameras[v], data.background).image, dir / "test_view.png");
            }
        }
    }
    if (!out_dir.empty()) write_text(out_dir / "comparison.csv", comparison_csv(rows));
    return rows;
}

} // namespace adpsplit
