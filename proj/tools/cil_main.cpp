// cil: learn motion-planning constraints from driving demonstrations and
// evaluate them in a sample-based Frenet planner.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "cil/config.hpp"
#include "cil/evaluate.hpp"
#include "cil/manifest.hpp"

namespace fs = std::filesystem;
using namespace cil;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir = "run";
    std::int64_t seed_flag = -1;
    int threads_flag = -1;
    bool seed_given = false;
    bool threads_given = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "flat key=value config file");
    cmd->add_option("--set", c.sets, "override a config key, key=value (repeatable)");
    cmd->add_option("--out", c.out_dir, "run directory for outputs");
    cmd->add_option("--seed", c.seed_flag, "random seed")->each([&c](const std::string&) {
        c.seed_given = true;
    });
    cmd->add_option("--threads", c.threads_flag, "worker thread cap")->each([&c](const std::string&) {
        c.threads_given = true;
    });
}

/// Precedence: defaults < config file < CF_SEED (seed only) < --set < flags.
config::RunConfig resolve(const Common& c) {
    auto cfg = config::RunConfig::defaults();
    if (!c.config_path.empty()) cfg.load_file(c.config_path);
    if (!c.seed_given && !cfg.set_by_file("seed")) {
        if (const char* env = std::getenv("CF_SEED")) cfg.set("seed", env);
    }
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed_given) cfg.set("seed", std::to_string(c.seed_flag));
    if (c.threads_given) cfg.set("threads", std::to_string(c.threads_flag));
    return cfg;
}

int require_file(const std::string& path) {
    if (!fs::exists(path)) {
        std::cerr << "missing prerequisite: " << path << "\n";
        return 2;
    }
    return 0;
}

manifest::Writer make_manifest(const std::string& command, const config::RunConfig& cfg) {
    return manifest::Writer(command, fnv1a64(cfg.canonical()), cfg.getu("seed"));
}

void write_resolved_config(const config::RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    cfg.write_file(out_dir + "/config.cfg");
}

std::vector<dataset::DemonstrationInstance> load_data(const std::string& path) {
    return dataset::load_cache(path);
}

density::DensityThreshold load_threshold(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string k1, k2;
    density::DensityThreshold th;
    is >> k1 >> th.e_th >> k2 >> th.calibration_quantile;
    if (k1 != "e_th" || k2 != "quantile" || !is) throw FormatError("bad threshold file " + path);
    return th;
}

void save_threshold(const density::DensityThreshold& th, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "e_th " << format_double(th.e_th) << "\nquantile " << format_double(th.calibration_quantile)
       << "\n";
}

/// Enumerates (instance, t) window slots, shuffles them with the given seed,
/// encodes the first n as images.
std::vector<neural::Tensor> sample_windows(const std::vector<dataset::DemonstrationInstance>& instances,
                                           const ogm::GridSpec& grid, const pairing::PairingSpec& pair,
                                           std::size_t n, std::uint64_t seed) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> slots;
    for (std::uint32_t i = 0; i < instances.size(); ++i) {
        const int k = pairing::examples_per_instance(instances[i], pair);
        for (int t = 0; t < k; ++t) slots.emplace_back(i, static_cast<std::uint32_t>(t));
    }
    Rng rng(seed);
    for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.below(i)]);
    if (n > 0 && slots.size() > n) slots.resize(n);
    // group by instance so the replay world and velocities are built once
    std::sort(slots.begin(), slots.end());
    std::vector<neural::Tensor> images;
    images.reserve(slots.size());
    std::size_t i = 0;
    while (i < slots.size()) {
        const auto inst_idx = slots[i].first;
        const auto& inst = instances[inst_idx];
        const auto world = dataset::make_replay(inst);
        const auto vel = scene::track_velocities(inst.ego_track);
        const int w_steps = pairing::window_steps(pair, inst.dt);
        for (; i < slots.size() && slots[i].first == inst_idx; ++i)
            images.push_back(pairing::demo_window_image(inst, world, vel, static_cast<int>(slots[i].second),
                                                        grid, w_steps));
    }
    return images;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& common) {
    const auto cfg = resolve(common);
    const auto synth = config::synth_config(cfg);
    const auto instances = dataset::generate_synthetic(synth);
    write_resolved_config(cfg, common.out_dir);
    dataset::save_cache(instances, common.out_dir + "/dataset.cil");
    auto man = make_manifest("gen-data", cfg);
    man.add_output(common.out_dir, "config.cfg");
    man.add_output(common.out_dir, "dataset.cil");
    man.write(common.out_dir);
    std::size_t train = 0, calib = 0, eval = 0;
    for (const auto& inst : instances) {
        if (inst.split == dataset::Split::Train) ++train;
        else if (inst.split == dataset::Split::Calib) ++calib;
        else ++eval;
    }
    std::cout << "instances: " << instances.size() << " (train " << train << ", calib " << calib
              << ", eval " << eval << ")\n";
    return 0;
}

int cmd_ingest(const Common& common, const std::string& csv_path) {
    if (int rc = require_file(csv_path)) return rc;
    const auto cfg = resolve(common);
    scene::RoadSpec road;
    road.lane_count = static_cast<int>(cfg.geti("lanes"));
    road.lane_width = cfg.getf("lane_width");
    road.length = cfg.getf("road_length") > 0 ? cfg.getf("road_length") : 2000.0;
    road.speed_limit = cfg.getf("speed_limit");
    dataset::IngestOptions opt;
    opt.dt = cfg.getf("dt_s");
    opt.neighbor_window_s = cfg.getf("neighbor_window_s");
    opt.neighbor_window_d = cfg.getf("neighbor_window_d");
    opt.split_seed = cfg.getu("seed");
    opt.train_frac = cfg.getf("train_frac");
    opt.calib_frac = cfg.getf("calib_frac");
    const auto instances = dataset::ingest_ngsim(csv_path, road, static_cast<int>(cfg.geti("t_steps")),
                                                 static_cast<int>(cfg.geti("stride")), opt);
    write_resolved_config(cfg, common.out_dir);
    dataset::save_cache(instances, common.out_dir + "/dataset.cil");
    auto man = make_manifest("ingest", cfg);
    man.add_input("csv", csv_path);
    man.add_output(common.out_dir, "config.cfg");
    man.add_output(common.out_dir, "dataset.cil");
    man.write(common.out_dir);
    std::cout << "instances: " << instances.size() << "\n";
    return 0;
}

int cmd_train_vae(const Common& common, const std::string& data_path) {
    if (int rc = require_file(data_path)) return rc;
    const auto cfg = resolve(common);
    const auto grid = config::grid_spec(cfg);
    const auto pair = config::pairing_spec(cfg);
    const auto all = load_data(data_path);
    const auto train = dataset::filter_split(all, dataset::Split::Train);
    const auto calib = dataset::filter_split(all, dataset::Split::Calib);
    if (train.empty() || calib.empty())
        throw DataError("train-vae: dataset lacks train or calib instances");

    const std::uint64_t seed = cfg.getu("seed");
    const auto train_images = sample_windows(train, grid, pair,
                                             static_cast<std::size_t>(cfg.geti("vae_train_pairs")),
                                             Rng::derive(seed, 42));
    const auto calib_images = sample_windows(calib, grid, pair,
                                             static_cast<std::size_t>(cfg.geti("calib_pairs")),
                                             Rng::derive(seed, 43));
    std::cout << "train pairs: " << train_images.size() << ", calib pairs: " << calib_images.size()
              << "\n";

    const auto backbone = cfg.gets("backbone") == "conv" ? density::Backbone::Conv : density::Backbone::Mlp;
    auto vae = density::make_vae(backbone, 7, grid.height_cells, grid.width_cells, cfg.geti("hidden"),
                                 cfg.geti("latent_dim"), seed);
    const auto log = density::train_vae(vae, train_images, static_cast<int>(cfg.geti("vae_epochs")),
                                        config::beta_schedule(cfg), cfg.getf("vae_lr"),
                                        static_cast<int>(cfg.geti("vae_batch")), seed);
    const auto threshold = density::calibrate_threshold(vae, calib_images, cfg.getf("calib_quantile"));

    write_resolved_config(cfg, common.out_dir);
    density::save_vae_file(common.out_dir + "/vae.ckpt", vae);
    save_threshold(threshold, common.out_dir + "/threshold.txt");
    {
        std::ofstream os(common.out_dir + "/vae_train_log.csv");
        os << "epoch,rmse,kl,beta\n";
        for (const auto& row : log)
            os << row.epoch << ',' << format_double(row.rmse) << ',' << format_double(row.kl) << ','
               << format_double(row.beta) << '\n';
    }
    auto man = make_manifest("train-vae", cfg);
    man.add_input("dataset", data_path);
    man.add_output(common.out_dir, "config.cfg");
    man.add_output(common.out_dir, "vae.ckpt");
    man.add_output(common.out_dir, "threshold.txt");
    man.add_output(common.out_dir, "vae_train_log.csv");
    man.write(common.out_dir);
    if (!log.empty())
        std::cout << "final rmse: " << log.back().rmse << ", e_th: " << threshold.e_th << "\n";
    return 0;
}

int cmd_train_constraint(const Common& common, const std::string& data_path,
                         const std::string& vae_path) {
    if (int rc = require_file(data_path)) return rc;
    if (int rc = require_file(vae_path)) return rc;
    const std::string threshold_path = fs::path(vae_path).parent_path() / "threshold.txt";
    if (int rc = require_file(threshold_path)) return rc;
    const auto cfg = resolve(common);
    const auto grid = config::grid_spec(cfg);
    const auto pair = config::pairing_spec(cfg);
    const auto sampling = config::sampling_spec(cfg);
    const auto vae = density::load_vae_file(vae_path);
    const auto threshold = load_threshold(threshold_path);
    const auto train = dataset::filter_split(load_data(data_path), dataset::Split::Train);
    if (train.empty()) throw DataError("train-constraint: no train instances");

    write_resolved_config(cfg, common.out_dir);
    const auto icfg = config::inference_config(cfg);
    std::vector<std::string> epoch_files;
    const auto on_epoch = [&](const inference::EpochReport& rep,
                              const constraint::ConstraintModel& model) {
        char name[64];
        std::snprintf(name, sizeof(name), "ckpt_epoch_%03d.ckpt", rep.epoch);
        constraint::save_constraint_file(common.out_dir + "/" + name, model);
        epoch_files.emplace_back(name);
        std::cout << "epoch " << rep.epoch << ": planner_pairs " << rep.planner_pairs_total
                  << ", constrained " << rep.labeled_constrained << ", no_solution "
                  << rep.no_solution_count << ", frac " << rep.new_constrained_frac << "\n";
    };
    auto [model, reports] =
        inference::run_inference(train, vae, threshold, icfg, sampling, grid, pair, on_epoch);

    constraint::save_constraint_file(common.out_dir + "/constraint.ckpt", model);
    {
        std::ofstream os(common.out_dir + "/epochs.csv");
        inference::write_reports_csv(reports, os);
    }
    auto man = make_manifest("train-constraint", cfg);
    man.add_input("dataset", data_path);
    man.add_input("vae", vae_path);
    man.add_input("threshold", threshold_path);
    man.add_output(common.out_dir, "config.cfg");
    man.add_output(common.out_dir, "constraint.ckpt");
    man.add_output(common.out_dir, "epochs.csv");
    for (const auto& f : epoch_files) man.add_output(common.out_dir, f);
    man.write(common.out_dir);
    return 0;
}

const dataset::DemonstrationInstance& find_instance(const std::vector<dataset::DemonstrationInstance>& all,
                                                    const std::string& id) {
    for (const auto& inst : all)
        if (inst.id == id) return inst;
    throw DataError("no instance with id '" + id + "' in dataset");
}

int cmd_plan(const Common& common, const std::string& data_path, const std::string& instance_id,
             const std::string& ckpt_path, bool no_constraint, const std::string& trace_path) {
    if (int rc = require_file(data_path)) return rc;
    std::optional<constraint::ConstraintModel> model;
    if (!no_constraint) {
        if (int rc = require_file(ckpt_path)) return rc;
        model = constraint::load_constraint_file(ckpt_path);
    }
    const auto cfg = resolve(common);
    const auto inst = find_instance(load_data(data_path), instance_id);
    const auto result = planner::plan(inst, model ? &*model : nullptr, config::sampling_spec(cfg),
                                      config::grid_spec(cfg), config::pairing_spec(cfg));
    if (!trace_path.empty()) {
        std::ofstream os(trace_path);
        planner::dump_trace_csv(result, os);
    }
    if (result.no_solution()) {
        std::cout << "no solution (feasible 0 of " << result.records.size() << ")\n";
    } else {
        const auto& c = result.chosen();
        std::cout << "chosen target_lateral=" << format_double(c.target_lateral)
                  << " target_speed=" << format_double(c.target_speed)
                  << " cost=" << format_double(result.chosen_cost) << " feasible="
                  << result.feasible_count << "\n";
    }
    return 0;
}

int cmd_evaluate(const Common& common, const std::string& data_path, const std::string& ckpt_path) {
    if (int rc = require_file(data_path)) return rc;
    if (int rc = require_file(ckpt_path)) return rc;
    const auto cfg = resolve(common);
    const auto grid = config::grid_spec(cfg);
    const auto pair = config::pairing_spec(cfg);
    const auto sampling = config::sampling_spec(cfg);
    const auto model = constraint::load_constraint_file(ckpt_path);
    auto eval_set = dataset::filter_split(load_data(data_path), dataset::Split::Eval);
    if (eval_set.empty()) throw DataError("evaluate: no eval instances");
    const auto cap = static_cast<std::size_t>(cfg.geti("eval_max_instances"));
    if (cap > 0 && eval_set.size() > cap) {
        Rng rng(Rng::derive(cfg.getu("seed"), 77));
        for (std::size_t i = eval_set.size(); i > 1; --i)
            std::swap(eval_set[i - 1], eval_set[rng.below(i)]);
        eval_set.resize(cap);
    }
    const int threads = static_cast<int>(cfg.geti("threads"));
    auto report = evaluate::evaluate(eval_set, &model, sampling, grid, pair, threads);
    report.baseline = std::make_shared<evaluate::EvalReport>(
        evaluate::evaluate(eval_set, nullptr, sampling, grid, pair, threads));
    write_resolved_config(cfg, common.out_dir);
    evaluate::render_report(report, common.out_dir);

    // drivable-region renderings for the first render_k eval instances
    std::vector<std::string> pgms;
    const auto k = std::min<std::size_t>(eval_set.size(), static_cast<std::size_t>(cfg.geti("render_k")));
    for (std::size_t i = 0; i < k; ++i) {
        const auto& inst = eval_set[i];
        const auto anchor =
            scene::ego_state_at(inst.ego_track, 0, inst.ego_length, inst.ego_width, inst.road);
        const auto world = dataset::make_replay(inst);
        constraint::OffsetGrid offsets;
        offsets.s_min = -0.4 * grid.height_cells * grid.resolution;
        offsets.s_max = 0.4 * grid.height_cells * grid.resolution;
        offsets.d_min = -0.4 * grid.width_cells * grid.resolution;
        offsets.d_max = 0.4 * grid.width_cells * grid.resolution;
        const auto mask = constraint::drivable_region(model, dataset::replay_step(world, 0), inst.road,
                                                      anchor, grid, offsets, pair.action_window_s,
                                                      sampling.dt);
        const std::string stem = "drivable_" + inst.id;
        constraint::render_mask_pgm(mask, common.out_dir + "/" + stem);
        pgms.push_back(stem + "_plane0.pgm");
    }

    auto man = make_manifest("evaluate", cfg);
    man.add_input("dataset", data_path);
    man.add_input("constraint", ckpt_path);
    man.add_output(common.out_dir, "config.cfg");
    man.add_output(common.out_dir, "eval_report.txt");
    man.add_output(common.out_dir, "eval_report.csv");
    for (const auto& f : pgms) man.add_output(common.out_dir, f);
    man.write(common.out_dir);

    std::cout << "n=" << report.n_instances << " collision%=" << report.collision_pct
              << " out_of_road%=" << report.out_of_road_pct << " no_solution%=" << report.no_solution_pct
              << " | baseline collision%=" << report.baseline->collision_pct
              << " out_of_road%=" << report.baseline->out_of_road_pct
              << " no_solution%=" << report.baseline->no_solution_pct << "\n";
    return 0;
}

int cmd_render(const Common& common, const std::string& data_path, const std::string& instance_id,
               const std::string& ckpt_path) {
    if (int rc = require_file(data_path)) return rc;
    const auto cfg = resolve(common);
    const auto grid = config::grid_spec(cfg);
    const auto pair = config::pairing_spec(cfg);
    const auto inst = find_instance(load_data(data_path), instance_id);
    fs::create_directories(common.out_dir);
    const auto world = dataset::make_replay(inst);
    const auto vel = scene::track_velocities(inst.ego_track);
    const int w_steps = pairing::window_steps(pair, inst.dt);
    const auto image = pairing::demo_window_image(inst, world, vel, 0, grid, w_steps);
    const std::string stem = "instance_" + inst.id;
    ogm::render_pgm(image, common.out_dir + "/" + stem);
    auto man = make_manifest("render", cfg);
    man.add_input("dataset", data_path);
    for (int p = 0; p < 7; ++p)
        man.add_output(common.out_dir, stem + "_plane" + std::to_string(p) + ".pgm");
    if (!ckpt_path.empty()) {
        if (int rc = require_file(ckpt_path)) return rc;
        const auto model = constraint::load_constraint_file(ckpt_path);
        const auto anchor =
            scene::ego_state_at(inst.ego_track, 0, inst.ego_length, inst.ego_width, inst.road);
        const auto mask = constraint::drivable_region(model, dataset::replay_step(world, 0), inst.road,
                                                      anchor, grid, {}, pair.action_window_s, inst.dt);
        constraint::render_mask_pgm(mask, common.out_dir + "/drivable_" + inst.id);
        man.add_input("constraint", ckpt_path);
        man.add_output(common.out_dir, "drivable_" + inst.id + "_plane0.pgm");
    }
    man.write(common.out_dir);
    std::cout << "rendered " << stem << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"constraint inference from driving demonstrations"};
    app.require_subcommand(1);

    Common common;
    std::string csv_path, data_path, vae_path, ckpt_path, instance_id, trace_path;
    bool no_constraint = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic demonstration dataset");
    add_common(gen, common);
    std::int64_t lanes = -1, vehicles = -1;
    double duration = -1;
    gen->add_option("--lanes", lanes, "lane count");
    gen->add_option("--vehicles", vehicles, "vehicle count");
    gen->add_option("--duration", duration, "simulation length, seconds");

    auto* ingest = app.add_subcommand("ingest", "ingest an NGSIM-format CSV");
    add_common(ingest, common);
    ingest->add_option("--csv", csv_path, "NGSIM-format CSV path")->required();

    auto* tv = app.add_subcommand("train-vae", "train the demonstration density model");
    add_common(tv, common);
    tv->add_option("--data", data_path, "dataset cache path")->required();

    auto* tc = app.add_subcommand("train-constraint", "run the constraint-inference loop");
    add_common(tc, common);
    tc->add_option("--data", data_path, "dataset cache path")->required();
    tc->add_option("--vae", vae_path, "VAE checkpoint path")->required();

    auto* pl = app.add_subcommand("plan", "plan a single instance");
    add_common(pl, common);
    pl->add_option("--data", data_path, "dataset cache path")->required();
    pl->add_option("--instance", instance_id, "instance id")->required();
    pl->add_option("--checkpoint", ckpt_path, "constraint checkpoint");
    pl->add_flag("--no-constraint", no_constraint, "plan without a constraint model");
    pl->add_option("--trace", trace_path, "write per-candidate trace CSV here");

    auto* ev = app.add_subcommand("evaluate", "evaluate planner with a learned constraint");
    add_common(ev, common);
    ev->add_option("--data", data_path, "dataset cache path")->required();
    ev->add_option("--checkpoint", ckpt_path, "constraint checkpoint")->required();

    auto* rd = app.add_subcommand("render", "render instance planes (and drivable region)");
    add_common(rd, common);
    rd->add_option("--data", data_path, "dataset cache path")->required();
    rd->add_option("--instance", instance_id, "instance id")->required();
    rd->add_option("--checkpoint", ckpt_path, "constraint checkpoint (optional)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            if (lanes >= 0) common.sets.push_back("lanes=" + std::to_string(lanes));
            if (vehicles >= 0) common.sets.push_back("vehicles=" + std::to_string(vehicles));
            if (duration >= 0) common.sets.push_back("duration_s=" + std::to_string(duration));
            return cmd_gen_data(common);
        }
        if (ingest->parsed()) return cmd_ingest(common, csv_path);
        if (tv->parsed()) return cmd_train_vae(common, data_path);
        if (tc->parsed()) return cmd_train_constraint(common, data_path, vae_path);
        if (pl->parsed()) {
            if (!no_constraint && ckpt_path.empty()) {
                std::cerr << "plan: pass --checkpoint or --no-constraint\n";
                return 1;
            }
            return cmd_plan(common, data_path, instance_id, ckpt_path, no_constraint, trace_path);
        }
        if (ev->parsed()) return cmd_evaluate(common, data_path, ckpt_path);
        if (rd->parsed()) return cmd_render(common, data_path, instance_id, ckpt_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
