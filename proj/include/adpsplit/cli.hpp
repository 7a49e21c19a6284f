#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "adpsplit/adc_controller.hpp"
#include "adpsplit/experiment.hpp"
#include "adpsplit/image_io.hpp"

namespace adpsplit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Everything a run can be configured with. `--config` files are flat JSON
/// objects keyed by these field names.
struct Settings {
    AdpSplitConfig cfg;
    Schedule schedule;
    LearningRates lr;
    int k = 32;
    int cam_count = 12;
    int image_size = 48;
    int init_count = 4;
    double target_margin_db = 3.0;

    Settings() { cfg.v_views = 6; }

    json to_json() const {
        return {{"tau_l1", cfg.tau_l1},
                {"r_erode", cfg.r_erode},
                {"m_min", cfg.m_min},
                {"l_bands", cfg.l_bands},
                {"n_max", cfg.n_max},
                {"v_views", cfg.v_views},
                {"gamma_d", cfg.gamma_d},
                {"gamma_c", cfg.gamma_c},
                {"tau_g", cfg.tau_g},
                {"tau_s", cfg.tau_s},
                {"eta", cfg.eta},
                {"t_interval", cfg.t_interval},
                {"eps", cfg.eps},
                {"total_iters", schedule.total_iters},
                {"densify_from", schedule.densify_from},
                {"densify_until", schedule.densify_until},
                {"split_mode", to_string(schedule.split_mode)},
                {"vanilla_n", schedule.vanilla_n},
                {"log_every", schedule.log_every},
                {"lr_mu", lr.mu},
                {"lr_mu_final", lr.mu_final},
                {"lr_log_scale", lr.log_scale},
                {"lr_rot", lr.rot},
                {"lr_logit_opacity", lr.logit_opacity},
                {"lr_sh_dc", lr.sh_dc},
                {"lr_sh_rest", lr.sh_rest},
                {"k", k},
                {"cam_count", cam_count},
                {"image_size", image_size},
                {"init_count", init_count},
                {"target_margin_db", target_margin_db}};
    }

    /// Overrides fields named in `j`. Unknown names are an error.
    void apply(const json& j) {
        if (!j.is_object()) throw Error("config: top level must be a JSON object");
        for (const auto& [key, v] : j.items()) {
            if (key == "tau_l1") cfg.tau_l1 = v.get<double>();
            else if (key == "r_erode") cfg.r_erode = v.get<int>();
            else if (key == "m_min") cfg.m_min = v.get<int>();
            else if (key == "l_bands") cfg.l_bands = v.get<int>();
            else if (key == "n_max") cfg.n_max = v.get<int>();
            else if (key == "v_views") cfg.v_views = v.get<int>();
            else if (key == "gamma_d") cfg.gamma_d = v.get<double>();
            else if (key == "gamma_c") cfg.gamma_c = v.get<double>();
            else if (key == "tau_g") cfg.tau_g = v.get<double>();
            else if (key == "tau_s") cfg.tau_s = v.get<double>();
            else if (key == "eta") cfg.eta = v.get<double>();
            else if (key == "t_interval") cfg.t_interval = v.get<int>();
            else if (key == "eps") cfg.eps = v.get<double>();
            else if (key == "total_iters") schedule.total_iters = v.get<int>();
            else if (key == "densify_from") schedule.densify_from = v.get<int>();
            else if (key == "densify_until") schedule.densify_until = v.get<int>();
            else if (key == "split_mode") schedule.split_mode = parse_split_mode(v.get<std::string>());
            else if (key == "vanilla_n") schedule.vanilla_n = v.get<int>();
            else if (key == "log_every") schedule.log_every = v.get<int>();
            else if (key == "lr_mu") lr.mu = v.get<double>();
            else if (key == "lr_mu_final") lr.mu_final = v.get<double>();
            else if (key == "lr_log_scale") lr.log_scale = v.get<double>();
            else if (key == "lr_rot") lr.rot = v.get<double>();
            else if (key == "lr_logit_opacity") lr.logit_opacity = v.get<double>();
            else if (key == "lr_sh_dc") lr.sh_dc = v.get<double>();
            else if (key == "lr_sh_rest") lr.sh_rest = v.get<double>();
            else if (key == "k") k = v.get<int>();
            else if (key == "cam_count") cam_count = v.get<int>();
            else if (key == "image_size") image_size = v.get<int>();
            else if (key == "init_count") init_count = v.get<int>();
            else if (key == "target_margin_db") target_margin_db = v.get<double>();
            else throw Error("config: unknown field '" + key + "'");
        }
        schedule.t_interval = cfg.t_interval;
    }

    ExperimentSettings experiment() const {
        ExperimentSettings e;
        e.k = k;
        e.cam_count = cam_count;
        e.image_size = image_size;
        e.init_count = init_count;
        e.schedule = schedule;
        e.lr = lr;
        e.cfg = cfg;
        e.target_margin_db = target_margin_db;
        return e;
    }
};

inline json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot read " + path.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    }
}

/// "1..10", "3", or "1,4,7".
inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    const auto dots = text.find("..");
    try {
        if (dots != std::string::npos) {
            const std::uint64_t lo = std::stoull(text.substr(0, dots)), hi = std::stoull(text.substr(dots + 2));
            if (hi < lo) throw Error("seed range '" + text + "' is empty");
            for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
            return out;
        }
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
    } catch (const std::logic_error&) {
        throw Error("cannot parse seeds '" + text + "'");
    }
    if (out.empty()) throw Error("no seeds given");
    return out;
}

/// "r,g,b" with components in [0,1].
inline Vec3 parse_rgb(const std::string& text) {
    Vec3 c;
    std::stringstream ss(text);
    std::string item;
    int n = 0;
    try {
        while (std::getline(ss, item, ',')) {
            if (n == 3) throw Error("");
            c[n++] = std::stod(item);
        }
    } catch (const std::exception&) {
        n = -1;
    }
    if (n != 3 || (c.array() < 0.0).any() || (c.array() > 1.0).any())
        throw Error("cannot parse color '" + text + "', expected r,g,b in [0,1]");
    return c;
}

inline std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
    std::ostringstream s;
    s << stem << '_' << std::setw(2) << std::setfill('0') << i << ext;
    return s.str();
}

inline void write_config_echo(const fs::path& dir, const std::string& command, std::uint64_t seed,
                              const Settings& settings, json extra = json::object()) {
    json j = {{"command", command}, {"seed", seed}, {"settings", settings.to_json()}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_text(dir / "config.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Subcommands

struct Options {
    std::uint64_t seed = 0;
    std::string config;
    std::string out = "out";
    // synth
    int k = -1;
    int cams = -1;
    int size = -1;
    // render / train / split-step
    std::string data;
    std::string scene;
    std::string cameras;
    std::string mode;
    int view = -1;
    std::string background = "0,0,0";
    int iters = -1;
    bool dump_maps = false;
    bool dump_children = false;
    bool report = false;
    // experiment
    std::string seeds = "1..10";
};

inline void cmd_synth(const Options& o, Settings& s, std::ostream& out) {
    if (o.k > 0) s.k = o.k;
    if (o.cams > 0) s.cam_count = o.cams;
    if (o.size > 0) s.image_size = o.size;
    const Dataset d = synth_scene(o.seed, s.k, s.cam_count, s.image_size);
    const fs::path dir = o.out;
    fs::create_directories(dir / "images");
    save_dataset(d, dir);
    for (std::size_t i = 0; i < d.images.size(); ++i) write_png(d.images[i], dir / "images" / indexed("gt", i, ".png"));
    write_config_echo(dir, "synth", o.seed, s);
    out << "wrote " << d.gt_scene.size() << " gaussians and " << d.cameras.size() << " cameras to " << dir.string()
        << "\n";
}

inline void cmd_render(const Options& o, Settings& s, std::ostream& out) {
    Scene scene;
    std::vector<Camera> cams;
    if (!o.data.empty()) {
        const Dataset d = load_dataset(o.data);
        scene = o.scene.empty() ? d.gt_scene : load_scene(o.scene);
        cams = d.cameras;
    } else {
        if (o.scene.empty() || o.cameras.empty()) throw Error("render: need --data or both --scene and --cameras");
        scene = load_scene(o.scene);
        cams = load_cameras(o.cameras);
    }
    if (!o.cameras.empty()) cams = load_cameras(o.cameras);
    if (o.view >= static_cast<int>(cams.size()))
        throw Error("render: view " + std::to_string(o.view) + " out of range (" + std::to_string(cams.size()) +
                    " cameras)");
    const Vec3 bg = parse_rgb(o.background);
    const fs::path dir = o.out;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        if (o.view >= 0 && i != static_cast<std::size_t>(o.view)) continue;
        const RenderOutput r = render(scene, cams[i], bg);
        write_png(r.image, dir / indexed("render", i, ".png"));
        write_ppm(r.image, dir / indexed("render", i, ".ppm"));
        write_index_png(r.dominant_map, dir / indexed("dominant", i, ".png"));
    }
    write_config_echo(dir, "render", o.seed, s,
                      {{"scene", o.scene},
                       {"cameras", o.cameras},
                       {"data", o.data},
                       {"view", o.view},
                       {"background", {bg.x(), bg.y(), bg.z()}}});
    out << "rendered " << (o.view >= 0 ? 1 : cams.size()) << " view(s) to " << dir.string() << "\n";
}

inline Dataset require_dataset(const Options& o, const char* cmd) {
    if (o.data.empty()) throw Error(std::string(cmd) + ": --data <dir> is required (see `synth`)");
    return load_dataset(o.data);
}

inline void cmd_train(const Options& o, Settings& s, std::ostream& out) {
    const Dataset d = require_dataset(o, "train");
    if (!o.mode.empty()) s.schedule.split_mode = parse_split_mode(o.mode);
    if (o.iters >= 0) {
        s.schedule.total_iters = o.iters;
        s.schedule.densify_until = std::min(s.schedule.densify_until, o.iters);
    }
    s.schedule.seed = o.seed;
    const Scene init = o.scene.empty() ? init_scene(d, o.seed, s.init_count) : load_scene(o.scene);
    const TrainResult r = train(init, d, s.schedule, s.cfg, s.lr);
    const fs::path dir = o.out;
    fs::create_directories(dir);
    save_scene(r.scene, dir / "scene.txt");
    write_text(dir / "metrics.csv", r.log.metrics_csv());
    write_text(dir / "densify.csv", r.log.densify_csv());
    write_text(dir / "timing.csv", r.log.timing_csv());
    json reports = json::array();
    for (const auto& rep : r.reports) reports.push_back(rep.to_json());
    write_text(dir / "reports.json", reports.dump(1) + "\n");
    for (std::size_t k = 0; k < d.test_views.size(); ++k)
        write_png(render(r.scene, d.cameras[d.test_views[k]], d.background).image,
                  dir / indexed("test", d.test_views[k], ".png"));
    write_config_echo(dir, "train", o.seed, s, {{"data", o.data}, {"init_scene", o.scene}});
    out << "final psnr " << r.log.rows.back().psnr << " dB with " << r.scene.size() << " gaussians after "
        << r.rounds << " densification rounds\n";
}

inline void cmd_split_step(const Options& o, Settings& s, std::ostream& out) {
    const Dataset d = require_dataset(o, "split-step");
    const Scene scene = o.scene.empty() ? init_scene(d, o.seed, s.init_count) : load_scene(o.scene);
    const DensifyStats stats = collect_stats(scene, d);
    std::vector<Camera> cams;
    std::vector<Image> imgs;
    for (std::size_t v : d.train_views) {
        cams.push_back(d.cameras[v]);
        imgs.push_back(d.images[v]);
    }
    std::mt19937_64 rng = train_detail::step_rng(o.seed, 0);
    std::vector<CandidatePlan> plans;
    std::vector<ViewMaps> maps;
    const DensifyResult r = adpsplit_step(scene, cams, imgs, stats, s.cfg, rng, d.background, &plans,
                                          o.dump_maps ? &maps : nullptr);
    const fs::path dir = o.out;
    fs::create_directories(o.dump_maps ? dir / "maps" : dir);
    save_scene(r.scene, dir / "scene.txt");
    const json report = r.report.to_json();
    write_text(dir / "report.json", report.dump(2) + "\n");
    if (o.dump_maps) {
        for (const ViewMaps& m : maps) {
            // report views index the training subset
            const std::size_t cam = d.train_views[m.camera];
            write_png(m.render.image, dir / "maps" / indexed("render", cam, ".png"));
            write_gray_png(m.maps.e, dir / "maps" / indexed("error", cam, ".png"), 1.0);
            write_gray_png(m.maps.m, dir / "maps" / indexed("mask", cam, ".png"), 1.0);
            Grid<std::int32_t> band(m.maps.b.width, m.maps.b.height, kNoGaussian);
            for (std::size_t i = 0; i < band.size(); ++i) band.values[i] = m.maps.b.values[i];
            write_index_png(band, dir / "maps" / indexed("band", cam, ".png"));
            write_index_png(m.render.dominant_map, dir / "maps" / indexed("dominant", cam, ".png"));
        }
    }
    if (o.dump_children) {
        json arr = json::array();
        auto vec = [](const auto& v) {
            json a = json::array();
            for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
            return a;
        };
        for (const CandidatePlan& p : plans) {
            json c = {{"parent", p.index}, {"dominant", p.dominant}};
            json regions = json::array();
            for (const ErrorRegion& e : p.regions)
                regions.push_back({{"view", d.train_views[static_cast<std::size_t>(e.view)]},
                                   {"area", e.area},
                                   {"band", e.band},
                                   {"centroid", vec(e.centroid)},
                                   {"sigma", {e.sigma1, e.sigma2}},
                                   {"e1", vec(e.e1)}});
            c["regions"] = regions;
            json props = json::array();
            for (const ChildProposal& cp : p.proposals)
                props.push_back({{"view", d.train_views[static_cast<std::size_t>(cp.view)]},
                                 {"mu", vec(cp.mu)},
                                 {"scale", vec(cp.scale)},
                                 {"rgb", vec(cp.rgb)},
                                 {"opacity", cp.opacity},
                                 {"clamped_components", cp.clamped_components}});
            c["proposals"] = props;
            json kids = json::array();
            for (const MergeGroup& g : p.children)
                kids.push_back({{"members", g.members},
                                {"mu", vec(g.merged_mu)},
                                {"scale", vec(g.scale)},
                                {"rgb", vec(g.merged_rgb)},
                                {"opacity", g.merged_opacity},
                                {"graph_depth", g.graph_depth}});
            c["children"] = kids;
            arr.push_back(c);
        }
        write_text(dir / "children.json", arr.dump(1) + "\n");
    }
    write_config_echo(dir, "split-step", o.seed, s, {{"data", o.data}, {"scene", o.scene}});
    if (o.report) out << report.dump(2) << "\n";
    out << "split-step: " << r.report.count_before << " -> " << r.report.count_after << " gaussians\n";
}

inline void cmd_experiment(const Options& o, Settings& s, std::ostream& out) {
    if (o.k > 0) s.k = o.k;
    if (o.iters >= 0) {
        s.schedule.total_iters = o.iters;
        s.schedule.densify_until = std::min(s.schedule.densify_until, o.iters);
    }
    const auto seeds = parse_seeds(o.seeds);
    const fs::path dir = o.out;
    const auto rows = compare_experiment(seeds, s.experiment(), dir);
    write_config_echo(dir, "experiment", o.seed, s, {{"seeds", seeds}});
    out << comparison_csv(rows);
}

/// Parses argv and runs one subcommand. Returns the process exit code: 0 on
/// success, 2 on usage errors, 1 on any other failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Error-guided Gaussian splatting densification toolkit", "adpsplit"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--seed", o.seed, "Random seed");
        sub->add_option("--config", o.config, "JSON file overriding settings by field name");
        sub->add_option("--out", o.out, "Output directory");
    };
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    common(synth);
    synth->add_option("--k", o.k, "Ground-truth Gaussian count");
    synth->add_option("--cams", o.cams, "Camera count");
    synth->add_option("--size", o.size, "Image width and height");

    CLI::App* rend = app.add_subcommand("render", "Render a scene from every camera");
    common(rend);
    rend->add_option("--data", o.data, "Dataset directory");
    rend->add_option("--scene", o.scene, "Scene file");
    rend->add_option("--cameras", o.cameras, "Camera file");
    rend->add_option("--view", o.view, "Render only this camera index");
    rend->add_option("--background", o.background, "Background color r,g,b");

    CLI::App* tr = app.add_subcommand("train", "Train from a coarse initialization");
    common(tr);
    tr->add_option("--data", o.data, "Dataset directory")->required();
    tr->add_option("--scene", o.scene, "Initial scene file");
    tr->add_option("--mode", o.mode, "vanilla-binary, vanilla-n or adpsplit");
    tr->add_option("--iters", o.iters, "Iteration budget");

    CLI::App* split = app.add_subcommand("split-step", "Run one error-guided densification step");
    common(split);
    split->add_option("--data", o.data, "Dataset directory")->required();
    split->add_option("--scene", o.scene, "Scene to densify");
    split->add_flag("--dump-maps", o.dump_maps, "Write error, mask, band and dominant maps");
    split->add_flag("--dump-children", o.dump_children, "Write regions, proposals and merged children");
    split->add_flag("--report", o.report, "Print the split report");

    CLI::App* exp = app.add_subcommand("experiment", "Compare split modes over seeds");
    common(exp);
    exp->add_option("--seeds", o.seeds, "Seeds as a..b or a,b,c");
    exp->add_option("--k", o.k, "Ground-truth Gaussian count");
    exp->add_option("--iters", o.iters, "Iteration budget");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        Settings s;
        if (!o.config.empty()) s.apply(read_json(o.config));
        s.cfg.validate();
        if (*synth) cmd_synth(o, s, out);
        else if (*rend) cmd_render(o, s, out);
        else if (*tr) cmd_train(o, s, out);
        else if (*split) cmd_split_step(o, s, out);
        else if (*exp) cmd_experiment(o, s, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace adpsplit::cli
