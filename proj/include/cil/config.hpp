#pragma once

#include <filesystem>
#include <map>
#include <set>

#include "cil/dataset.hpp"
#include "cil/density.hpp"
#include "cil/inference.hpp"
#include "cil/ogm.hpp"
#include "cil/planner.hpp"

namespace cil::config {

enum class KeyType { Int, Real, Bool, Str };

struct KeySpec {
    KeyType type = KeyType::Real;
    const char* default_value = "";
};

/// Every consumed key, with its type and default. Unknown keys are rejected.
inline const std::map<std::string, KeySpec>& schema() {
    static const std::map<std::string, KeySpec> s = {
        // run
        {"seed", {KeyType::Int, "1"}},
        {"threads", {KeyType::Int, "2"}},
        // synthetic data
        {"lanes", {KeyType::Int, "3"}},
        {"lane_width", {KeyType::Real, "3.7"}},
        {"vehicles", {KeyType::Int, "12"}},
        {"duration_s", {KeyType::Real, "120"}},
        {"dt_s", {KeyType::Real, "0.1"}},
        {"gap_m", {KeyType::Real, "8"}},
        {"headway_s", {KeyType::Real, "0.8"}},
        {"stride", {KeyType::Int, "10"}},
        {"speed_limit", {KeyType::Real, "14"}},
        {"road_length", {KeyType::Real, "0"}},
        {"veh_length", {KeyType::Real, "4.5"}},
        {"veh_width", {KeyType::Real, "1.8"}},
        {"v_des_min_frac", {KeyType::Real, "0.55"}},
        {"v_des_max_frac", {KeyType::Real, "0.95"}},
        {"accel_max", {KeyType::Real, "1.5"}},
        {"lc_duration_s", {KeyType::Real, "2.2"}},
        {"lc_rate_hz", {KeyType::Real, "0.04"}},
        {"t_steps", {KeyType::Int, "50"}},
        {"neighbor_window_s", {KeyType::Real, "32"}},
        {"neighbor_window_d", {KeyType::Real, "8"}},
        {"train_frac", {KeyType::Real, "0.7"}},
        {"calib_frac", {KeyType::Real, "0.1"}},
        // grid / pairing
        {"grid_resolution", {KeyType::Real, "0.5"}},
        {"grid_width", {KeyType::Int, "32"}},
        {"grid_height", {KeyType::Int, "128"}},
        {"v_norm", {KeyType::Real, "24"}},
        {"action_window_s", {KeyType::Real, "1.0"}},
        // network
        {"backbone", {KeyType::Str, "mlp"}},
        {"hidden", {KeyType::Int, "128"}},
        {"latent_dim", {KeyType::Int, "16"}},
        // vae training
        {"vae_epochs", {KeyType::Int, "30"}},
        {"vae_batch", {KeyType::Int, "32"}},
        {"vae_lr", {KeyType::Real, "0.001"}},
        {"beta_max", {KeyType::Real, "0.4"}},
        {"beta_cycle", {KeyType::Int, "500"}},
        {"beta_ramp", {KeyType::Real, "0.5"}},
        {"vae_train_pairs", {KeyType::Int, "2500"}},
        {"calib_pairs", {KeyType::Int, "2000"}},
        {"calib_quantile", {KeyType::Real, "0.95"}},
        // constraint model
        {"bias_prior", {KeyType::Real, "0.1"}},
        {"decision_threshold", {KeyType::Real, "0.5"}},
        {"head_hidden", {KeyType::Int, "0"}},
        {"freeze_backbone", {KeyType::Bool, "0"}},
        // planner
        {"lateral_count", {KeyType::Int, "7"}},
        {"speed_count", {KeyType::Int, "13"}},
        {"speed_min", {KeyType::Real, "0"}},
        {"speed_max", {KeyType::Real, "24"}},
        {"horizon_s", {KeyType::Real, "5.0"}},
        {"w_jerk", {KeyType::Real, "1"}},
        {"w_speed", {KeyType::Real, "1"}},
        {"w_lane", {KeyType::Real, "1"}},
        // inference loop
        {"max_epochs", {KeyType::Int, "8"}},
        {"planner_batch", {KeyType::Int, "64"}},
        {"steps_per_epoch", {KeyType::Int, "200"}},
        {"convergence_frac", {KeyType::Real, "0.02"}},
        {"train_batch", {KeyType::Int, "32"}},
        {"constraint_lr", {KeyType::Real, "0.001"}},
        // evaluation
        {"eval_max_instances", {KeyType::Int, "0"}},  // 0 = all
        {"render_k", {KeyType::Int, "2"}},
        {"perturb_shift_m", {KeyType::Real, "2.0"}},
    };
    return s;
}

/// Flat key=value configuration: defaults, overridden by a config file,
/// overridden by command-line sets.
class RunConfig {
public:
    static RunConfig defaults() {
        RunConfig c;
        for (const auto& [k, spec] : schema()) c.values_[k] = spec.default_value;
        return c;
    }

    void set(const std::string& key, const std::string& value) {
        const auto it = schema().find(key);
        if (it == schema().end()) throw ConfigError("unknown config key: " + key);
        switch (it->second.type) {
            case KeyType::Int:
            case KeyType::Bool: {
                try {
                    (void)std::stoll(value);
                } catch (...) {
                    throw ConfigError("config key " + key + ": expected integer, got '" + value + "'");
                }
                break;
            }
            case KeyType::Real: {
                try {
                    std::size_t used = 0;
                    (void)std::stod(value, &used);
                    if (used != value.size()) throw std::invalid_argument("");
                } catch (...) {
                    throw ConfigError("config key " + key + ": expected number, got '" + value + "'");
                }
                break;
            }
            case KeyType::Str:
                break;
        }
        values_[key] = value;
    }

    /// '#' starts a comment; blank lines allowed; each other line is key=value.
    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("config: cannot open " + path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            // trim
            const auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            const auto e = line.find_last_not_of(" \t\r");
            line = line.substr(b, e - b + 1);
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
            std::string key = line.substr(0, eq);
            std::string value = line.substr(eq + 1);
            const auto kb = key.find_last_not_of(" \t");
            key = key.substr(0, kb + 1);
            const auto vb = value.find_first_not_of(" \t");
            value = vb == std::string::npos ? "" : value.substr(vb);
            set(key, value);
            file_keys_.insert(key);
        }
    }

    bool set_by_file(const std::string& key) const { return file_keys_.count(key) > 0; }

    std::int64_t geti(const std::string& key) const { return std::stoll(raw(key)); }
    double getf(const std::string& key) const { return std::stod(raw(key)); }
    bool getb(const std::string& key) const { return std::stoll(raw(key)) != 0; }
    const std::string& gets(const std::string& key) const { return raw(key); }
    std::uint64_t getu(const std::string& key) const {
        return static_cast<std::uint64_t>(std::stoll(raw(key)));
    }

    /// Sorted key=value dump; the manifest hashes this.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += '=';
            out += v;
            out += '\n';
        }
        return out;
    }

    void write_file(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw IoError("config: cannot write " + path);
        os << canonical();
    }

private:
    const std::string& raw(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key: " + key);
        return it->second;
    }

    std::map<std::string, std::string> values_;
    std::set<std::string> file_keys_;
};

// ---------------------------------------------------------------------------
// typed views

inline dataset::SynthConfig synth_config(const RunConfig& c) {
    dataset::SynthConfig s;
    s.lanes = static_cast<int>(c.geti("lanes"));
    s.lane_width = c.getf("lane_width");
    s.vehicles = static_cast<int>(c.geti("vehicles"));
    s.duration_s = c.getf("duration_s");
    s.dt_s = c.getf("dt_s");
    s.gap_m = c.getf("gap_m");
    s.headway_s = c.getf("headway_s");
    s.seed = c.getu("seed");
    s.stride = static_cast<int>(c.geti("stride"));
    s.speed_limit = c.getf("speed_limit");
    s.road_length = c.getf("road_length");
    s.veh_length = c.getf("veh_length");
    s.veh_width = c.getf("veh_width");
    s.v_des_min_frac = c.getf("v_des_min_frac");
    s.v_des_max_frac = c.getf("v_des_max_frac");
    s.accel_max = c.getf("accel_max");
    s.lc_duration_s = c.getf("lc_duration_s");
    s.lc_rate_hz = c.getf("lc_rate_hz");
    s.t_steps = static_cast<int>(c.geti("t_steps"));
    s.neighbor_window_s = c.getf("neighbor_window_s");
    s.neighbor_window_d = c.getf("neighbor_window_d");
    s.train_frac = c.getf("train_frac");
    s.calib_frac = c.getf("calib_frac");
    return s;
}

inline ogm::GridSpec grid_spec(const RunConfig& c) {
    ogm::GridSpec g;
    g.resolution = c.getf("grid_resolution");
    g.width_cells = static_cast<int>(c.geti("grid_width"));
    g.height_cells = static_cast<int>(c.geti("grid_height"));
    g.v_norm = c.getf("v_norm");
    g.validate();
    return g;
}

inline pairing::PairingSpec pairing_spec(const RunConfig& c) {
    return pairing::PairingSpec{c.getf("action_window_s")};
}

inline planner::SamplingSpec sampling_spec(const RunConfig& c) {
    planner::SamplingSpec s;
    s.lateral_count = static_cast<int>(c.geti("lateral_count"));
    s.speed_count = static_cast<int>(c.geti("speed_count"));
    s.speed_min = c.getf("speed_min");
    s.speed_max = c.getf("speed_max");
    s.horizon = c.getf("horizon_s");
    s.dt = c.getf("dt_s");
    return s;
}

inline density::BetaSchedule beta_schedule(const RunConfig& c) {
    return density::BetaSchedule{c.geti("beta_cycle"), c.getf("beta_ramp"), c.getf("beta_max")};
}

inline inference::InferenceConfig inference_config(const RunConfig& c) {
    inference::InferenceConfig i;
    i.max_epochs = static_cast<int>(c.geti("max_epochs"));
    i.planner_batch = static_cast<int>(c.geti("planner_batch"));
    i.steps_per_epoch = static_cast<int>(c.geti("steps_per_epoch"));
    i.convergence_new_constrained_frac = c.getf("convergence_frac");
    i.seed = c.getu("seed");
    i.train_batch = static_cast<int>(c.geti("train_batch"));
    i.learning_rate = c.getf("constraint_lr");
    i.beta_schedule = beta_schedule(c);
    i.bias_prior = c.getf("bias_prior");
    i.decision_threshold = c.getf("decision_threshold");
    i.head_hidden = c.geti("head_hidden");
    i.freeze_backbone = c.getb("freeze_backbone");
    i.threads = static_cast<int>(c.geti("threads"));
    i.gt_gap = c.getf("gap_m");
    return i;
}

}  // namespace cil::config
