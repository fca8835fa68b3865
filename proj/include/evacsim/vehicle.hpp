#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evacsim/rng.hpp"

namespace evacsim {

struct VehicleClassSpec {
    std::string name;
    double accel = 0.0;           // m/s^2
    double decel = 0.0;           // m/s^2
    double emergency_decel = 0.0; // m/s^2
    double sigma = 0.0;           // driver imperfection, [0,1]
    double min_gap = 0.0;         // m, standstill gap to the leader
    double lc_assertive = 1.0;    // gap-acceptance scaling for lane changes
    double length = 0.0;          // m
    double width = 0.0;           // m
    double height = 0.0;          // m
    int capacity = 1;             // persons
    double tau = 1.0;             // reaction/headway time, s
    double speed_factor_mean = 1.0;
    double speed_factor_sd = 0.0;
    std::optional<double> reroute_period;  // s; absent = no rerouting device
    double reroute_pre_period = 0.0;       // s
    double reroute_threshold = 0.0;        // required relative improvement
    std::optional<double> speed_factor_cap;

    bool reroutes() const { return reroute_period.has_value(); }

    void validate() const {
        auto fail = [&](const std::string& what) {
            throw std::invalid_argument("vehicle class \"" + name + "\": " + what);
        };
        if (!(accel > 0 && decel > 0 && emergency_decel > 0))
            fail("accel, decel, emergency_decel must be > 0");
        if (emergency_decel < decel) fail("emergency_decel must be >= decel");
        if (sigma < 0 || sigma > 1) fail("sigma must be in [0,1]");
        if (!(min_gap > 0)) fail("min_gap must be > 0");
        if (capacity < 1) fail("capacity must be >= 1");
        if (reroute_threshold < 0 || reroute_threshold >= 1)
            fail("reroute_threshold must be in [0,1)");
        if (!(tau > 0)) fail("tau must be > 0");
    }
};

// Presets from the car-following table plus the rerouting-device settings
// for pre/post disaster operation and the conventional-bus comparison.
inline VehicleClassSpec builtin_class(const std::string& name) {
    VehicleClassSpec c;
    c.name = name;
    if (name == "sav_pre" || name == "sav_post") {
        c.accel = 3.5;
        c.decel = 4.5;
        c.emergency_decel = 8.0;
        c.sigma = 0.0;
        c.min_gap = 1.5;
        c.lc_assertive = 0.7;
        c.length = 8.0;
        c.width = 2.5;
        c.height = 3.4;
        c.capacity = 25;
        c.tau = 1.0;
        c.reroute_pre_period = 300.0;
        if (name == "sav_pre") {
            c.reroute_period = 60.0;
            c.reroute_threshold = 0.0;
        } else {
            c.reroute_period = 180.0;
            c.reroute_threshold = 0.1;
            c.speed_factor_cap = 0.9;
        }
    } else if (name == "hdv_pre" || name == "hdv_post") {
        c.accel = 2.6;
        c.decel = 4.5;
        c.emergency_decel = 8.0;
        c.sigma = 0.5;
        c.min_gap = 2.5;
        c.lc_assertive = 1.3;
        c.length = 5.0;
        c.width = 1.8;
        c.height = 1.5;
        c.capacity = 5;
        c.tau = 1.0;
        c.speed_factor_mean = 1.0;
        c.speed_factor_sd = 0.1;
        if (name == "hdv_post") c.speed_factor_cap = 0.9;
    } else if (name == "bus") {
        c.accel = 1.0;
        c.decel = 2.5;
        c.emergency_decel = 5.0;
        c.sigma = 0.8;
        c.min_gap = 5.0;
        c.lc_assertive = 1.3;
        c.length = 8.0;
        c.width = 2.5;
        c.height = 3.4;
        c.capacity = 25;
        c.tau = 2.0;
    } else {
        throw std::invalid_argument("unknown vehicle class \"" + name + "\"");
    }
    c.validate();
    return c;
}

struct VehicleState {
    long long id = -1;
    std::string class_name;
    std::vector<int> route; // edge indices, ends at the assigned exit edge
    int route_cursor = 0;
    double position_on_edge = 0.0; // front bumper, m
    double speed = 0.0;            // m/s
    double depart_time = 0.0;      // scheduled, s
    double insert_time = -1.0;     // actual network entry, s; -1 while pending
    double waiting_time = 0.0;     // contiguous time at speed < 0.1 m/s
    double speed_factor = 1.0;
    double last_reroute_time = 0.0;
    double distance_traveled = 0.0;
    bool arrived = false;
    double arrival_time = -1.0;
    int teleport_count = 0;
    int reroute_count = 0;

    int current_edge() const { return route[route_cursor]; }
    bool on_last_edge() const { return route_cursor + 1 >= static_cast<int>(route.size()); }
};

// Largest follower speed that still allows stopping behind a leader braking
// at decel: v_safe = -b*tau + sqrt(b^2 tau^2 + v_leader^2 + 2 b gap).
inline double krauss_safe_speed(double v_leader, double gap, double decel, double tau) {
    if (gap < 0.0)
        throw std::domain_error("krauss_safe_speed: negative gap (collision state)");
    const double bt = decel * tau;
    double v = -bt + std::sqrt(bt * bt + v_leader * v_leader + 2.0 * decel * gap);
    return std::max(0.0, v);
}

struct LeaderInfo {
    double speed = 0.0; // m/s
    double gap = 0.0;   // bumper-to-bumper, m
};

// One longitudinal update. The noise argument is a uniform [0,1] draw; with
// sigma = 0 the result is a pure function of its inputs.
inline double krauss_step(const VehicleState& state, const std::optional<LeaderInfo>& leader,
                          const VehicleClassSpec& spec, double v_limit, double dt,
                          double noise) {
    double v_max = v_limit;
    if (spec.speed_factor_cap) v_max = std::min(v_max, *spec.speed_factor_cap * v_limit);
    v_max *= state.speed_factor;

    double v_des = std::min(state.speed + spec.accel * dt, v_max);
    if (leader) {
        double g = leader->gap;
        if (g < 0.0) throw std::domain_error("krauss_step: negative gap");
        g = std::max(0.0, g - spec.min_gap); // min_gap is kept in reserve
        v_des = std::min(v_des, krauss_safe_speed(leader->speed, g, spec.decel, spec.tau));
    }
    double v = v_des - spec.sigma * spec.accel * dt * noise;
    return std::max(0.0, v);
}

// Gaussian speed factor clipped to [0.7, 1.3]; always consumes one draw so
// the stream stays aligned regardless of sd.
inline double sample_speed_factor(const VehicleClassSpec& spec, Rng& rng) {
    double f = rng.gaussian(spec.speed_factor_mean, spec.speed_factor_sd);
    return std::clamp(f, 0.7, 1.3);
}

// Gap acceptance for a lane change: worthwhile (leader slower by > 1 m/s)
// and the adjacent gap clears required_gap / lc_assertive.
inline bool overtake_decision(double follower_speed, double leader_speed, double adjacent_gap,
                              const VehicleClassSpec& spec) {
    if (leader_speed >= follower_speed - 1.0) return false;
    double required = (spec.min_gap + follower_speed * spec.tau) / spec.lc_assertive;
    return adjacent_gap >= required;
}

} // namespace evacsim
