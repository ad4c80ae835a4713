#pragma once

#include <array>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rewardlab/dsl.hpp"
#include "rewardlab/metric.hpp"
#include "rewardlab/rng.hpp"
#include "rewardlab/table.hpp"

namespace rewardlab::envs {

enum class EnvId { Cartpole, Hover3d, Runner1d, Drawer1d };

enum class GtFormula {
    MseAngle,             // mean of (pole angle)^2, target angle 0
    MeanDistanceToOrigin, // mean Euclidean distance of (x, y, z) to the origin
    MeanForwardVelocity,  // mean velocity along x
    OpenSuccessRate,      // mean of indicator(drawer position >= threshold)
};

struct GroundTruthMetric {
    GtFormula formula;
    dsl::Direction direction;
};

struct EnvSpec {
    EnvId id;
    std::string name;
    dsl::Schema schema;
    int horizon = 1;
    double dt = 0.02;
    std::vector<std::pair<double, double>> init_ranges;    // per state
    std::vector<std::pair<double, double>> action_bounds;  // per action
    std::vector<double> state_scales;                      // characteristic magnitudes
    std::map<std::string, double> constants;               // dynamics parameters
    GroundTruthMetric ground_truth_metric{GtFormula::MseAngle, dsl::Direction::Minimize};
    std::string baseline_reward_text;  // declared baseline, as a DSL program
    std::string objective_text;
    std::string system_description_text;

    int state_dim() const { return static_cast<int>(schema.state_names.size()); }
    int action_dim() const { return static_cast<int>(schema.action_names.size()); }
    double constant(const std::string& key) const {
        auto it = constants.find(key);
        if (it == constants.end()) throw std::out_of_range("missing env constant: " + key);
        return it->second;
    }
};

// ---------------------------------------------------------------------------
// Built-in environments
// ---------------------------------------------------------------------------

inline EnvSpec make_cartpole() {
    EnvSpec e;
    e.id = EnvId::Cartpole;
    e.name = "cartpole";
    e.schema.state_names = {"cart_pos", "cart_vel", "pole_angle", "pole_ang_vel"};
    e.schema.action_names = {"cart_force"};
    e.horizon = 300;
    e.dt = 0.02;
    e.init_ranges = {{-0.05, 0.05}, {-0.05, 0.05}, {-0.1, 0.1}, {-0.05, 0.05}};
    e.action_bounds = {{-10.0, 10.0}};
    e.state_scales = {1.0, 2.0, 0.05, 0.2};
    e.constants = {{"cart_mass", 1.0}, {"pole_mass", 0.1}, {"pole_half_length", 0.5},
                   {"gravity", 9.81}};
    e.ground_truth_metric = {GtFormula::MseAngle, dsl::Direction::Minimize};
    e.baseline_reward_text = "1 - s.pole_angle^2 - 0.01 * abs(a.cart_force)";
    e.objective_text = "Balance a pole on a cart so that the pole stays upright";
    e.system_description_text =
        "The system is a cart moving along a frictionless one-dimensional track with a rigid\n"
        "pole attached to it by an unactuated hinge. A horizontal force applied to the cart\n"
        "indirectly controls the pole.\n"
        "\n"
        "State vector (4 dimensions, in order):\n"
        "  0. cart position along the track, meters; episodes start near 0 (range -0.05..0.05).\n"
        "  1. cart velocity, meters per second; starts in -0.05..0.05.\n"
        "  2. pole angle from the upright vertical, radians, positive clockwise;\n"
        "     starts in -0.1..0.1.\n"
        "  3. pole angular velocity, radians per second; starts in -0.05..0.05.\n"
        "\n"
        "Action vector (1 dimension):\n"
        "  0. horizontal force applied to the cart, newtons, bounded to [-10, 10].\n"
        "\n"
        "Episode semantics: 300 control steps of 0.02 s each. Episodes never terminate\n"
        "early; the pole may swing past the horizontal. Cart mass 1.0 kg, pole mass 0.1 kg,\n"
        "pole half-length 0.5 m, gravity 9.81 m/s^2.";
    return e;
}

inline EnvSpec make_hover3d() {
    EnvSpec e;
    e.id = EnvId::Hover3d;
    e.name = "hover3d";
    e.schema.state_names = {"x", "y", "z", "vx", "vy", "vz"};
    e.schema.action_names = {"fx", "fy", "fz"};
    e.horizon = 500;
    e.dt = 0.02;
    e.init_ranges = {{-1.0, 1.0}, {-1.0, 1.0}, {-1.0, 1.0},
                     {-0.1, 0.1}, {-0.1, 0.1}, {-0.1, 0.1}};
    e.action_bounds = {{-15.0, 15.0}, {-15.0, 15.0}, {-15.0, 15.0}};
    e.state_scales = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    e.constants = {{"mass", 1.0}, {"gravity", 9.81}};
    e.ground_truth_metric = {GtFormula::MeanDistanceToOrigin, dsl::Direction::Minimize};
    e.baseline_reward_text =
        "-sqrt(s.x^2 + s.y^2 + s.z^2) - 0.01 * sqrt(a.fx^2 + a.fy^2 + a.fz^2)";
    e.objective_text = "Reach and hover near a fixed position";
    e.system_description_text =
        "The system is a thrust-controlled point-mass platform moving freely in three\n"
        "dimensions under gravity. The hover target is fixed at the origin (0, 0, 0).\n"
        "\n"
        "State vector (6 dimensions, in order):\n"
        "  0. x position, meters; starts in -1..1.\n"
        "  1. y position, meters; starts in -1..1.\n"
        "  2. z position (height), meters; starts in -1..1.\n"
        "  3. x velocity, meters per second; starts in -0.1..0.1.\n"
        "  4. y velocity, meters per second; starts in -0.1..0.1.\n"
        "  5. z velocity, meters per second; starts in -0.1..0.1.\n"
        "\n"
        "Action vector (3 dimensions):\n"
        "  0. thrust along x, newtons, bounded to [-15, 15].\n"
        "  1. thrust along y, newtons, bounded to [-15, 15].\n"
        "  2. thrust along z, newtons, bounded to [-15, 15].\n"
        "\n"
        "Episode semantics: 500 control steps of 0.02 s each, no early termination.\n"
        "Platform mass 1.0 kg; gravity 9.81 m/s^2 acts along -z, so a z thrust of about\n"
        "9.81 N is needed to hover.";
    return e;
}

inline EnvSpec make_runner1d() {
    EnvSpec e;
    e.id = EnvId::Runner1d;
    e.name = "runner1d";
    e.schema.state_names = {"x", "vx", "energy_used"};
    e.schema.action_names = {"drive_force"};
    e.horizon = 900;
    e.dt = 0.02;
    e.init_ranges = {{-0.1, 0.1}, {-0.1, 0.1}, {0.0, 0.0}};
    e.action_bounds = {{-10.0, 10.0}};
    e.state_scales = {100.0, 10.0, 1000.0};
    e.constants = {{"mass", 1.0}, {"drag", 0.5}};
    e.ground_truth_metric = {GtFormula::MeanForwardVelocity, dsl::Direction::Maximize};
    e.baseline_reward_text = "s.vx - 0.005 * a.drive_force^2";
    e.objective_text = "Run forward along the track as fast as possible";
    e.system_description_text =
        "The system is a powered runner on an infinite one-dimensional track, modeled as a\n"
        "point mass with velocity-proportional drag. Forward is the positive x direction.\n"
        "\n"
        "State vector (3 dimensions, in order):\n"
        "  0. position along the track, meters; starts in -0.1..0.1.\n"
        "  1. velocity along the track, meters per second; starts in -0.1..0.1.\n"
        "  2. cumulative actuation energy, newton-squared-seconds; starts at 0 and\n"
        "     accumulates force^2 * dt every step.\n"
        "\n"
        "Action vector (1 dimension):\n"
        "  0. drive force, newtons, bounded to [-10, 10].\n"
        "\n"
        "Episode semantics: 900 control steps of 0.02 s each, no early termination.\n"
        "Mass 1.0 kg, drag coefficient 0.5 N s/m, so sustained maximum drive approaches a\n"
        "terminal velocity of 20 m/s.";
    return e;
}

inline EnvSpec make_drawer1d() {
    EnvSpec e;
    e.id = EnvId::Drawer1d;
    e.name = "drawer1d";
    e.schema.state_names = {"gripper_pos", "gripper_vel", "drawer_pos"};
    e.schema.action_names = {"gripper_force"};
    e.horizon = 500;
    e.dt = 0.02;
    e.init_ranges = {{0.35, 0.45}, {-0.05, 0.05}, {0.0, 0.0}};
    e.action_bounds = {{-10.0, 10.0}};
    e.state_scales = {0.5, 0.5, 0.35};
    e.constants = {{"gripper_mass", 0.5},
                   {"gripper_damping", 2.0},
                   {"handle_origin", 0.5},
                   {"engage_radius", 0.05},
                   {"static_friction", 1.0},
                   {"drawer_travel", 0.6},
                   {"success_threshold", 0.35}};
    e.ground_truth_metric = {GtFormula::OpenSuccessRate, dsl::Direction::Maximize};
    e.baseline_reward_text = "s.drawer_pos + 2 * (s.drawer_pos >= 0.35)";
    e.objective_text = "Open the cabinet drawer";
    e.system_description_text =
        "The system is a one-dimensional gripper in front of a cabinet drawer. The gripper\n"
        "slides along the drawer's opening axis; the drawer handle sits at 0.5 m when the\n"
        "drawer is closed and moves outward with the drawer as it opens.\n"
        "\n"
        "State vector (3 dimensions, in order):\n"
        "  0. gripper position along the opening axis, meters; starts in 0.35..0.45.\n"
        "  1. gripper velocity, meters per second; starts in -0.05..0.05.\n"
        "  2. drawer opening distance, meters; 0 when closed, mechanical stop at 0.6;\n"
        "     starts at 0.\n"
        "\n"
        "Action vector (1 dimension):\n"
        "  0. force applied to the gripper, newtons, bounded to [-10, 10].\n"
        "\n"
        "Episode semantics: 500 control steps of 0.02 s each, no early termination.\n"
        "Gripper mass 0.5 kg with 2.0 N s/m damping. The gripper engages the handle when\n"
        "within 0.05 m of it; while engaged and pushing or pulling with at least 1.0 N\n"
        "(the drawer's static friction), the drawer follows the gripper's motion. The\n"
        "drawer counts as open at an opening distance of 0.35 m or more.";
    return e;
}

inline const std::vector<std::string>& env_names() {
    static const std::vector<std::string> names = {"cartpole", "hover3d", "runner1d", "drawer1d"};
    return names;
}

inline EnvSpec make_env(const std::string& name) {
    if (name == "cartpole") return make_cartpole();
    if (name == "hover3d") return make_hover3d();
    if (name == "runner1d") return make_runner1d();
    if (name == "drawer1d") return make_drawer1d();
    throw std::invalid_argument("unknown environment: " + name);
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

// Constants resolved out of the definition's map once, for the rollout hot loop.
class Dynamics {
public:
    explicit Dynamics(const EnvSpec& env) : id_(env.id), dt_(env.dt), bounds_(env.action_bounds) {
        switch (id_) {
            case EnvId::Cartpole:
                c_ = {env.constant("cart_mass"), env.constant("pole_mass"),
                      env.constant("pole_half_length"), env.constant("gravity")};
                break;
            case EnvId::Hover3d:
                c_ = {env.constant("mass"), env.constant("gravity")};
                break;
            case EnvId::Runner1d:
                c_ = {env.constant("mass"), env.constant("drag")};
                break;
            case EnvId::Drawer1d:
                c_ = {env.constant("gripper_mass"), env.constant("gripper_damping"),
                      env.constant("handle_origin"), env.constant("engage_radius"),
                      env.constant("static_friction"), env.constant("drawer_travel")};
                break;
        }
    }

    // Semi-implicit Euler throughout: velocities first, then positions.
    // Actions are clipped to the declared bounds.
    void step(std::span<const double> state, std::span<const double> action,
              std::span<double> next) const {
        switch (id_) {
            case EnvId::Cartpole: {
                const double mc = c_[0], mp = c_[1], l = c_[2], g = c_[3];
                const double total = mc + mp;
                double force = clip_action(action[0], 0);
                double x = state[0], v = state[1], theta = state[2], omega = state[3];
                double sin_t = std::sin(theta), cos_t = std::cos(theta);
                double temp = (force + mp * l * omega * omega * sin_t) / total;
                double theta_acc =
                    (g * sin_t - cos_t * temp) / (l * (4.0 / 3.0 - mp * cos_t * cos_t / total));
                double x_acc = temp - mp * l * theta_acc * cos_t / total;
                omega += theta_acc * dt_;
                theta += omega * dt_;
                v += x_acc * dt_;
                x += v * dt_;
                next[0] = x;
                next[1] = v;
                next[2] = theta;
                next[3] = omega;
                break;
            }
            case EnvId::Hover3d: {
                const double m = c_[0], g = c_[1];
                for (int i = 0; i < 3; ++i) {
                    double f = clip_action(action[static_cast<std::size_t>(i)], i);
                    double acc = f / m - (i == 2 ? g : 0.0);
                    double vel = state[static_cast<std::size_t>(3 + i)] + acc * dt_;
                    next[static_cast<std::size_t>(3 + i)] = vel;
                    next[static_cast<std::size_t>(i)] =
                        state[static_cast<std::size_t>(i)] + vel * dt_;
                }
                break;
            }
            case EnvId::Runner1d: {
                const double m = c_[0], drag = c_[1];
                double f = clip_action(action[0], 0);
                double vx = state[1] + (f - drag * state[1]) / m * dt_;
                next[1] = vx;
                next[0] = state[0] + vx * dt_;
                next[2] = state[2] + f * f * dt_;
                break;
            }
            case EnvId::Drawer1d: {
                const double mg = c_[0], damping = c_[1], handle_origin = c_[2];
                const double engage_radius = c_[3], static_friction = c_[4], travel = c_[5];
                double f = clip_action(action[0], 0);
                double gp = state[0], gv = state[1], dp = state[2];
                bool engaged = std::fabs(gp - (handle_origin + dp)) < engage_radius;
                gv += (f - damping * gv) / mg * dt_;
                gp += gv * dt_;
                if (engaged && std::fabs(f) >= static_friction) {
                    dp = std::min(std::max(dp + gv * dt_, 0.0), travel);
                }
                next[0] = gp;
                next[1] = gv;
                next[2] = dp;
                break;
            }
        }
    }

private:
    double clip_action(double value, int index) const {
        const auto& [lo, hi] = bounds_[static_cast<std::size_t>(index)];
        return std::min(std::max(value, lo), hi);
    }

    EnvId id_;
    double dt_;
    std::array<double, 6> c_{};
    std::vector<std::pair<double, double>> bounds_;
};

// Initial state sampled from the per-dimension uniform ranges; identical
// (env, seed) pairs give identical states.
inline std::vector<double> reset(const EnvSpec& env, std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, "reset"));
    std::vector<double> state(env.init_ranges.size());
    for (std::size_t i = 0; i < state.size(); ++i)
        state[i] = rng.uniform(env.init_ranges[i].first, env.init_ranges[i].second);
    return state;
}

inline std::vector<double> step(const EnvSpec& env, std::span<const double> state,
                                std::span<const double> action) {
    std::vector<double> next(state.size());
    Dynamics(env).step(state, action, next);
    return next;
}

// ---------------------------------------------------------------------------
// Ground truth and baseline reward
// ---------------------------------------------------------------------------

// Ground-truth metrics read the s.* block positionally, so they stay correct
// whatever names the mapping agent assigned to the columns.
inline double ground_truth(const EnvSpec& env, const TrajectoryTable& table) {
    if (table.empty()) throw EmptyTable("ground_truth: empty trajectory table");
    const std::size_t n = table.rows();
    switch (env.ground_truth_metric.formula) {
        case GtFormula::MseAngle: {
            double sum = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                double theta = table.at(r, 2);
                sum += theta * theta;
            }
            return sum / static_cast<double>(n);
        }
        case GtFormula::MeanDistanceToOrigin: {
            double sum = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                double x = table.at(r, 0), y = table.at(r, 1), z = table.at(r, 2);
                sum += std::sqrt(x * x + y * y + z * z);
            }
            return sum / static_cast<double>(n);
        }
        case GtFormula::MeanForwardVelocity: {
            double sum = 0.0;
            for (std::size_t r = 0; r < n; ++r) sum += table.at(r, 1);
            return sum / static_cast<double>(n);
        }
        case GtFormula::OpenSuccessRate: {
            const double threshold = env.constant("success_threshold");
            double sum = 0.0;
            for (std::size_t r = 0; r < n; ++r) sum += table.at(r, 2) >= threshold ? 1.0 : 0.0;
            return sum / static_cast<double>(n);
        }
    }
    return 0.0;
}

// Declared baseline reward on one transition row [s..., a..., sn...].
// A DSL rendering of the same formula lives in EnvSpec::baseline_reward_text.
inline double baseline_reward(const EnvSpec& env, std::span<const double> transition_row) {
    const auto s = transition_row;
    const std::size_t sd = static_cast<std::size_t>(env.state_dim());
    switch (env.id) {
        case EnvId::Cartpole:
            return 1.0 - s[2] * s[2] - 0.01 * std::fabs(s[sd + 0]);
        case EnvId::Hover3d: {
            double dist = std::sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2]);
            double thrust = std::sqrt(s[sd + 0] * s[sd + 0] + s[sd + 1] * s[sd + 1] +
                                      s[sd + 2] * s[sd + 2]);
            return -dist - 0.01 * thrust;
        }
        case EnvId::Runner1d:
            return s[1] - 0.005 * s[sd + 0] * s[sd + 0];
        case EnvId::Drawer1d:
            return s[2] + 2.0 * (s[2] >= 0.35 ? 1.0 : 0.0);
    }
    return 0.0;
}

}  // namespace rewardlab::envs
