#pragma once

// JSON (de)serialization of environment definitions, so physical constants
// and system-description texts ship as a versioned data file.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rewardlab/env.hpp"

namespace rewardlab::envs {

inline constexpr int kEnvFileVersion = 1;

namespace detail {

inline std::string gt_formula_name(GtFormula f) {
    switch (f) {
        case GtFormula::MseAngle: return "mse_angle";
        case GtFormula::MeanDistanceToOrigin: return "mean_distance_to_origin";
        case GtFormula::MeanForwardVelocity: return "mean_forward_velocity";
        case GtFormula::OpenSuccessRate: return "open_success_rate";
    }
    return "?";
}

inline GtFormula gt_formula_from_name(const std::string& s) {
    if (s == "mse_angle") return GtFormula::MseAngle;
    if (s == "mean_distance_to_origin") return GtFormula::MeanDistanceToOrigin;
    if (s == "mean_forward_velocity") return GtFormula::MeanForwardVelocity;
    if (s == "open_success_rate") return GtFormula::OpenSuccessRate;
    throw std::invalid_argument("unknown ground-truth formula: " + s);
}

inline EnvId env_id_from_name(const std::string& s) {
    if (s == "cartpole") return EnvId::Cartpole;
    if (s == "hover3d") return EnvId::Hover3d;
    if (s == "runner1d") return EnvId::Runner1d;
    if (s == "drawer1d") return EnvId::Drawer1d;
    throw std::invalid_argument("unknown environment id: " + s);
}

inline nlohmann::json ranges_to_json(const std::vector<std::pair<double, double>>& ranges) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [lo, hi] : ranges) out.push_back({lo, hi});
    return out;
}

inline std::vector<std::pair<double, double>> ranges_from_json(const nlohmann::json& j) {
    std::vector<std::pair<double, double>> out;
    for (const auto& pair : j) out.emplace_back(pair.at(0).get<double>(), pair.at(1).get<double>());
    return out;
}

}  // namespace detail

inline nlohmann::json env_to_json(const EnvSpec& env) {
    nlohmann::json j;
    j["name"] = env.name;
    j["state_names"] = env.schema.state_names;
    j["action_names"] = env.schema.action_names;
    j["horizon"] = env.horizon;
    j["dt"] = env.dt;
    j["init_ranges"] = detail::ranges_to_json(env.init_ranges);
    j["action_bounds"] = detail::ranges_to_json(env.action_bounds);
    j["state_scales"] = env.state_scales;
    j["constants"] = env.constants;
    j["ground_truth"] = {{"formula", detail::gt_formula_name(env.ground_truth_metric.formula)},
                         {"direction", std::string(dsl::to_string(env.ground_truth_metric.direction))}};
    j["baseline_reward"] = env.baseline_reward_text;
    j["objective"] = env.objective_text;
    j["system_description"] = env.system_description_text;
    return j;
}

inline EnvSpec env_from_json(const nlohmann::json& j) {
    EnvSpec env;
    env.name = j.at("name").get<std::string>();
    env.id = detail::env_id_from_name(env.name);
    env.schema.state_names = j.at("state_names").get<std::vector<std::string>>();
    env.schema.action_names = j.at("action_names").get<std::vector<std::string>>();
    env.horizon = j.at("horizon").get<int>();
    env.dt = j.at("dt").get<double>();
    env.init_ranges = detail::ranges_from_json(j.at("init_ranges"));
    env.action_bounds = detail::ranges_from_json(j.at("action_bounds"));
    env.state_scales = j.at("state_scales").get<std::vector<double>>();
    env.constants = j.at("constants").get<std::map<std::string, double>>();
    env.ground_truth_metric.formula =
        detail::gt_formula_from_name(j.at("ground_truth").at("formula").get<std::string>());
    dsl::Direction dir;
    if (!dsl::parse_direction(j.at("ground_truth").at("direction").get<std::string>(), dir))
        throw std::invalid_argument("bad ground-truth direction for env " + env.name);
    env.ground_truth_metric.direction = dir;
    env.baseline_reward_text = j.at("baseline_reward").get<std::string>();
    env.objective_text = j.at("objective").get<std::string>();
    env.system_description_text = j.at("system_description").get<std::string>();
    return env;
}

inline void save_env_file(const std::filesystem::path& path) {
    nlohmann::json j;
    j["version"] = kEnvFileVersion;
    nlohmann::json list = nlohmann::json::array();
    for (const auto& name : env_names()) list.push_back(env_to_json(make_env(name)));
    j["environments"] = list;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write env file: " + path.string());
    out << j.dump(2) << '\n';
}

inline std::vector<EnvSpec> load_env_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read env file: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() != kEnvFileVersion)
        throw std::runtime_error("unsupported env file version in " + path.string());
    std::vector<EnvSpec> envs;
    for (const auto& entry : j.at("environments")) envs.push_back(env_from_json(entry));
    return envs;
}

inline EnvSpec make_env_from_file(const std::filesystem::path& path, const std::string& name) {
    for (auto& env : load_env_file(path))
        if (env.name == name) return env;
    throw std::invalid_argument("environment '" + name + "' not found in " + path.string());
}

}  // namespace rewardlab::envs
