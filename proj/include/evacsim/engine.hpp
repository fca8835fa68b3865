#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "evacsim/demand.hpp"
#include "evacsim/network.hpp"
#include "evacsim/routing.hpp"
#include "evacsim/rng.hpp"
#include "evacsim/vehicle.hpp"

namespace evacsim {

struct EngineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EngineParams {
    double dt = 1.0;                  // s per step
    double teleport_threshold = 300.0; // s of contiguous waiting before relocation
    double stats_period = 60.0;       // travel-time adaptation interval, s
    int stats_window = 5;             // moving-average window, in periods
    double kappa = 0.5;               // variance-penalty weight for SAV weights
    bool record_trajectories = false; // per-vehicle per-step samples (tests)
};

enum class EventKind { insert, edge_enter, edge_leave, reroute, teleport, arrive, stranded_warning };

inline const char* to_string(EventKind k) {
    switch (k) {
    case EventKind::insert: return "insert";
    case EventKind::edge_enter: return "edge_enter";
    case EventKind::edge_leave: return "edge_leave";
    case EventKind::reroute: return "reroute";
    case EventKind::teleport: return "teleport";
    case EventKind::arrive: return "arrive";
    case EventKind::stranded_warning: return "stranded_warning";
    }
    return "?";
}

struct EventRecord {
    double time = 0.0;
    EventKind kind = EventKind::insert;
    long long vehicle = -1;
    int edge = -1;
    std::string payload;

    bool operator==(const EventRecord&) const = default;
};

// Network-wide aggregates sampled at the end of each step.
struct StepSample {
    double t = 0.0;
    int present = 0;        // active vehicles
    int moving = 0;         // active vehicles with speed >= 0.1 m/s
    double speed_sum = 0.0; // over moving vehicles
    double tt_sum = 0.0;    // time since scheduled depart, over active vehicles
    double dist_sum = 0.0;  // distance traveled, over active vehicles
};

struct VehicleSummary {
    long long id = -1;
    std::string class_name;
    double depart = 0.0;
    double insert = -1.0;
    double arrival = -1.0;
    bool arrived = false;
    double distance = 0.0;
    int reroutes = 0;
    int teleports = 0;

    double travel_time() const { return arrived ? arrival - depart : -1.0; }
};

struct RouterDiagRow {
    long period = 0;
    int edge = -1;
    double mean_tt = 0.0;
    double variance = 0.0;
    double weight = 0.0;
    double r = 0.0;         // rerouting fraction among SAVs touching the edge
    double p = 0.0;         // proportion of active SAVs using the edge
    double x = 0.0;         // SAV traversals completed this period
    double predicted = 0.0; // r*x + (1-r)*p
    int reroutes = 0;
};

struct TrajectorySample {
    double t = 0.0;
    long long vehicle = -1;
    double speed = 0.0;
    double travel_time = 0.0;
    double distance = 0.0;
};

struct SimTrace {
    std::vector<EventRecord> events;
    std::vector<StepSample> steps;
    std::vector<VehicleSummary> vehicles;
    std::vector<RouterDiagRow> router_diag;
    std::vector<TrajectorySample> trajectories;
    double dt = 1.0;
    double makespan = 0.0;
    double end_time = 0.0;
    bool complete = false;
    long long total_reroutes = 0;
    long long total_teleports = 0;
    long long stranded = 0;
    double total_lane_length = 0.0;
    // completed traversals per edge, split passenger-car / shuttle side
    std::vector<long long> traversals_pv;
    std::vector<long long> traversals_sav;
    std::vector<double> edge_free_flow;
    std::vector<double> edge_capacity;
};

// Initial routes per flow; each entry holds either one shared route or one
// route per vehicle. Routes exclude the origin edge and end at the exit.
struct RoutePlan {
    std::vector<std::vector<std::vector<int>>> by_flow;
};

using ClassRegistry = std::map<std::string, VehicleClassSpec>;

inline ClassRegistry default_classes() {
    ClassRegistry reg;
    for (const char* name : {"sav_pre", "sav_post", "hdv_pre", "hdv_post", "bus"})
        reg.emplace(name, builtin_class(name));
    return reg;
}

class World {
public:
    World(const RoadNetwork& net, const DemandPlan& plan, const ClassRegistry& classes,
          const RoutePlan& routes, const EngineParams& params, std::uint64_t seed)
        : net_(&net), params_(params), rng_(seed) {
        if (params_.dt <= 0) throw EngineError("dt must be > 0");
        build_vehicles(plan, classes, routes);
        lanes_.resize(net.edges.size());
        for (std::size_t e = 0; e < net.edges.size(); ++e)
            lanes_[e].resize(net.edges[e].lanes);
        stats_ = EdgeTravelStats(net.edges.size(), params_.stats_window, free_flow_times());
        traversals_pv_.assign(net.edges.size(), 0);
        traversals_sav_.assign(net.edges.size(), 0);
        diag_users_.assign(net.edges.size(), {});
        diag_reroutes_.assign(net.edges.size(), 0);
        diag_traversals_.assign(net.edges.size(), 0);
    }

    double clock() const { return clock_; }
    bool finished() const {
        return pending_cursor_ >= pending_.size() && insertion_queue_.empty() &&
               active_count_ == 0 && transit_count_ == 0;
    }

    long long pending_count() const {
        return static_cast<long long>(pending_.size() - pending_cursor_) +
               static_cast<long long>(insertion_queue_.size());
    }
    long long active_count() const { return active_count_; }
    long long transit_count() const { return transit_count_; }
    long long arrived_count() const { return arrived_count_; }
    long long vehicle_count() const { return static_cast<long long>(vehicles_.size()); }

    const VehicleState& vehicle(long long id) const { return vehicles_[id].st; }
    const EdgeTravelStats& stats() const { return stats_; }
    const std::vector<EventRecord>& events() const { return events_; }

    // One dt advance; runs the full insert/move/observe/reroute/teleport
    // cycle and returns the events it produced.
    std::vector<EventRecord> step() {
        const std::size_t first_event = events_.size();
        const double t = clock_;
        const long period = static_cast<long>(std::floor(t / params_.stats_period));
        if (period != diag_period_) {
            flush_diag(diag_period_);
            diag_period_ = period;
        }
        stats_.advance_to(period);
        active_mask_ = apply_closures(*net_, t);

        insert_due(t);
        reinsert_transits(t);
        lane_changes();
        compute_speeds(t, period);
        move_vehicles(t, period);
        run_reroutes(t);
        run_teleports(t, period);
        check_gaps(t);
        sample_step(t);

        clock_ = t + params_.dt;
        ++step_counter_;
        return {events_.begin() + first_event, events_.end()};
    }

    SimTrace run_to_completion(double max_sim_time) {
        while (!finished() && clock_ < max_sim_time) step();
        flush_diag(diag_period_);

        SimTrace trace;
        trace.events = std::move(events_);
        trace.steps = std::move(samples_);
        trace.router_diag = std::move(diag_rows_);
        trace.trajectories = std::move(trajectories_);
        trace.dt = params_.dt;
        trace.end_time = clock_;
        trace.complete = finished();
        trace.total_lane_length = net_->total_lane_length();
        trace.traversals_pv = traversals_pv_;
        trace.traversals_sav = traversals_sav_;
        trace.edge_free_flow = free_flow_times();
        trace.edge_capacity.reserve(net_->edges.size());
        for (const auto& e : net_->edges) trace.edge_capacity.push_back(e.capacity);
        for (const auto& v : vehicles_) {
            VehicleSummary s;
            s.id = v.st.id;
            s.class_name = v.st.class_name;
            s.depart = v.st.depart_time;
            s.insert = v.st.insert_time;
            s.arrival = v.st.arrival_time;
            s.arrived = v.st.arrived;
            s.distance = v.st.distance_traveled;
            s.reroutes = v.st.reroute_count;
            s.teleports = v.st.teleport_count;
            trace.vehicles.push_back(std::move(s));
            if (v.st.arrived) trace.makespan = std::max(trace.makespan, v.st.arrival_time);
            trace.total_reroutes += v.st.reroute_count;
            trace.total_teleports += v.st.teleport_count;
        }
        trace.stranded = vehicle_count() - arrived_count_;
        return trace;
    }

private:
    enum class VehPhase { pending, active, transit, arrived };

    struct Veh {
        VehicleState st;
        int class_idx = 0;
        int lane = 0;
        VehPhase phase = VehPhase::pending;
        double entered_edge_at = 0.0;
        double next_reroute_check = std::numeric_limits<double>::infinity();
        double transit_ready = 0.0;
        int transit_cursor = 0;
        bool shuttle_side = false; // bus-stop origin (SAV or bus comparison)
        double new_speed = 0.0;
        long last_move_step = -1;
    };

    std::vector<double> free_flow_times() const {
        std::vector<double> ff;
        ff.reserve(net_->edges.size());
        for (const auto& e : net_->edges) ff.push_back(e.free_flow_time());
        return ff;
    }

    void build_vehicles(const DemandPlan& plan, const ClassRegistry& registry,
                        const RoutePlan& routes) {
        if (routes.by_flow.size() != plan.flows.size())
            throw EngineError("route plan does not match demand plan flows");
        std::map<std::string, int> class_idx;
        for (std::size_t f = 0; f < plan.flows.size(); ++f) {
            const DispatchFlow& flow = plan.flows[f];
            auto cit = class_idx.find(flow.vehicle_class);
            if (cit == class_idx.end()) {
                auto rit = registry.find(flow.vehicle_class);
                if (rit == registry.end())
                    throw EngineError("unknown vehicle class \"" + flow.vehicle_class + "\"");
                rit->second.validate();
                classes_.push_back(rit->second);
                cit = class_idx.emplace(flow.vehicle_class, classes_.size() - 1).first;
            }
            const bool shuttle = flow.from_bus_stop;
            int origin_edge;
            if (shuttle) {
                if (flow.origin >= static_cast<int>(net_->bus_stops.size()))
                    throw EngineError("flow references missing bus stop");
                origin_edge = net_->bus_stops[flow.origin].edge;
            } else {
                if (flow.origin >= static_cast<int>(net_->start_edges.size()))
                    throw EngineError("flow references missing start edge");
                origin_edge = net_->start_edges[flow.origin];
            }
            if (flow.exit >= static_cast<int>(net_->exit_points.size()))
                throw EngineError("flow references missing exit point");
            const int exit_edge = net_->exit_points[flow.exit];
            const auto& flow_routes = routes.by_flow[f];
            if (flow_routes.size() != 1 &&
                flow_routes.size() != static_cast<std::size_t>(flow.count))
                throw EngineError("route plan entry count mismatch for flow " +
                                  std::to_string(f));
            for (long long k = 0; k < flow.count; ++k) {
                Veh v;
                v.st.id = static_cast<long long>(vehicles_.size());
                v.st.class_name = flow.vehicle_class;
                v.class_idx = cit->second;
                v.st.depart_time = flow.departures[k];
                v.shuttle_side = shuttle;
                const auto& tail = flow_routes.size() == 1 ? flow_routes[0] : flow_routes[k];
                v.st.route.reserve(tail.size() + 1);
                v.st.route.push_back(origin_edge);
                v.st.route.insert(v.st.route.end(), tail.begin(), tail.end());
                if (v.st.route.back() != exit_edge)
                    throw EngineError("route for flow " + std::to_string(f) +
                                      " does not end at its exit edge");
                v.st.speed_factor = sample_speed_factor(classes_[v.class_idx], rng_);
                vehicles_.push_back(std::move(v));
            }
        }
        pending_.resize(vehicles_.size());
        for (std::size_t i = 0; i < vehicles_.size(); ++i) pending_[i] = i;
        std::stable_sort(pending_.begin(), pending_.end(), [&](std::size_t a, std::size_t b) {
            return vehicles_[a].st.depart_time < vehicles_[b].st.depart_time;
        });
    }

    // --- insertion ---------------------------------------------------------

    // Entry headroom on a lane: distance from the edge start to the rear
    // bumper of the rearmost vehicle.
    double entry_space(int edge, int lane) const {
        const auto& q = lanes_[edge][lane];
        if (q.empty()) return net_->edges[edge].length;
        const Veh& rear = vehicles_[q.back()];
        return rear.st.position_on_edge - spec_of(rear).length;
    }

    int best_entry_lane(int edge) const {
        int best = 0;
        double best_space = -std::numeric_limits<double>::infinity();
        for (int l = 0; l < net_->edges[edge].lanes; ++l) {
            double s = entry_space(edge, l);
            if (s > best_space + 1e-12) {
                best_space = s;
                best = l;
            }
        }
        return best;
    }

    bool try_insert(std::size_t vi, double t) {
        Veh& v = vehicles_[vi];
        const int edge = v.st.route.front();
        if (!active_mask_[edge]) return false;
        const VehicleClassSpec& spec = spec_of(v);
        int lane = best_entry_lane(edge);
        if (entry_space(edge, lane) < spec.length + spec.min_gap) return false;
        v.phase = VehPhase::active;
        v.lane = lane;
        v.st.route_cursor = 0;
        v.st.position_on_edge = spec.length;
        v.st.speed = 0.0;
        v.st.insert_time = t;
        v.st.last_reroute_time = t;
        v.entered_edge_at = t;
        if (classes_[v.class_idx].reroutes())
            v.next_reroute_check = t + classes_[v.class_idx].reroute_pre_period;
        lanes_[edge][lane].push_back(vi);
        ++active_count_;
        push_event(t, EventKind::insert, v.st.id, edge, "");
        push_event(t, EventKind::edge_enter, v.st.id, edge, "");
        return true;
    }

    void insert_due(double t) {
        std::vector<std::size_t> still_waiting;
        for (std::size_t vi : insertion_queue_)
            if (!try_insert(vi, t)) still_waiting.push_back(vi);
        insertion_queue_ = std::move(still_waiting);
        while (pending_cursor_ < pending_.size() &&
               vehicles_[pending_[pending_cursor_]].st.depart_time <= t) {
            std::size_t vi = pending_[pending_cursor_++];
            if (!try_insert(vi, t)) insertion_queue_.push_back(vi);
        }
    }

    void reinsert_transits(double t) {
        for (std::size_t vi = 0; vi < vehicles_.size(); ++vi) {
            Veh& v = vehicles_[vi];
            if (v.phase != VehPhase::transit || t < v.transit_ready) continue;
            const VehicleClassSpec& spec = spec_of(v);
            // first route edge from the transit target with room and open
            for (int c = v.transit_cursor; c < static_cast<int>(v.st.route.size()); ++c) {
                int edge = v.st.route[c];
                if (!active_mask_[edge]) continue;
                int lane = best_entry_lane(edge);
                if (entry_space(edge, lane) < spec.length + spec.min_gap) continue;
                for (int skipped = v.transit_cursor; skipped < c; ++skipped)
                    v.st.distance_traveled += net_->edges[v.st.route[skipped]].length;
                v.phase = VehPhase::active;
                --transit_count_;
                ++active_count_;
                v.lane = lane;
                v.st.route_cursor = c;
                v.st.position_on_edge = spec.length;
                v.st.speed = 0.0;
                v.st.waiting_time = 0.0;
                v.entered_edge_at = t;
                lanes_[edge][lane].push_back(vi);
                push_event(t, EventKind::edge_enter, v.st.id, edge, "teleport_reinsert");
                break;
            }
        }
    }

    // --- lateral dynamics --------------------------------------------------

    struct Neighbor {
        double gap_ahead = std::numeric_limits<double>::infinity();
        double gap_behind = std::numeric_limits<double>::infinity();
        std::size_t insert_pos = 0; // queue slot in the target lane
        long behind = -1;
    };

    Neighbor lane_neighbors(int edge, int lane, const Veh& v) const {
        Neighbor n;
        const auto& q = lanes_[edge][lane];
        const VehicleClassSpec& spec = spec_of(v);
        std::size_t i = 0;
        while (i < q.size() && vehicles_[q[i]].st.position_on_edge > v.st.position_on_edge) ++i;
        n.insert_pos = i;
        if (i > 0) {
            const Veh& lead = vehicles_[q[i - 1]];
            n.gap_ahead = lead.st.position_on_edge - spec_of(lead).length -
                          v.st.position_on_edge;
        }
        if (i < q.size()) {
            const Veh& behind = vehicles_[q[i]];
            n.gap_behind = v.st.position_on_edge - spec.length - behind.st.position_on_edge;
            n.behind = static_cast<long>(q[i]);
        }
        return n;
    }

    void lane_changes() {
        for (std::size_t vi = 0; vi < vehicles_.size(); ++vi) {
            Veh& v = vehicles_[vi];
            if (v.phase != VehPhase::active) continue;
            if (v.st.position_on_edge < spec_of(v).length) continue; // straddling
            const int edge = v.st.current_edge();
            if (net_->edges[edge].lanes < 2) continue;
            auto& q = lanes_[edge][v.lane];
            auto it = std::find(q.begin(), q.end(), vi);
            if (it == q.end() || it == q.begin()) continue; // lane leader stays
            const Veh& lead = vehicles_[*(it - 1)];
            for (int cand : {v.lane + 1, v.lane - 1}) {
                if (cand < 0 || cand >= net_->edges[edge].lanes) continue;
                Neighbor n = lane_neighbors(edge, cand, v);
                if (n.gap_ahead < 0.0 || n.gap_behind < 0.0) continue;
                // never cut in closer than the trailing vehicle's headway
                if (n.behind >= 0) {
                    const Veh& behind = vehicles_[n.behind];
                    const VehicleClassSpec& bs = spec_of(behind);
                    if (n.gap_behind < bs.min_gap + behind.st.speed * bs.tau) continue;
                }
                double gap = std::min(n.gap_ahead, n.gap_behind);
                if (!overtake_decision(v.st.speed, lead.st.speed, gap, spec_of(v))) continue;
                q.erase(it);
                auto& tq = lanes_[edge][cand];
                tq.insert(tq.begin() + n.insert_pos, vi);
                v.lane = cand;
                break;
            }
        }
    }

    // --- longitudinal dynamics ---------------------------------------------

    void compute_speeds(double t, long /*period*/) {
        for (std::size_t e = 0; e < lanes_.size(); ++e) {
            for (std::size_t l = 0; l < lanes_[e].size(); ++l) {
                const auto& q = lanes_[e][l];
                for (std::size_t i = 0; i < q.size(); ++i) {
                    Veh& v = vehicles_[q[i]];
                    const VehicleClassSpec& spec = spec_of(v);
                    const Edge& edge = net_->edges[e];
                    std::optional<LeaderInfo> leader;
                    if (i > 0) {
                        const Veh& lead = vehicles_[q[i - 1]];
                        leader = LeaderInfo{lead.st.speed,
                                            lead.st.position_on_edge - spec_of(lead).length -
                                                v.st.position_on_edge};
                    } else if (!v.st.on_last_edge()) {
                        const int next = v.st.route[v.st.route_cursor + 1];
                        const double to_end = edge.length - v.st.position_on_edge;
                        if (!active_mask_[next]) {
                            leader = LeaderInfo{0.0, to_end};
                        } else {
                            const auto& nq = lanes_[next][best_entry_lane(next)];
                            if (!nq.empty()) {
                                // a rear overhang past the boundary occupies the
                                // straddler's own predecessor lane, not ours: the
                                // obstacle starts at the boundary
                                const Veh& rear = vehicles_[nq.back()];
                                double rear_rear = rear.st.position_on_edge -
                                                   spec_of(rear).length;
                                leader = LeaderInfo{rear.st.speed,
                                                    to_end + std::max(rear_rear, 0.0)};
                            }
                        }
                    }
                    double noise = spec.sigma > 0.0 ? rng_.uniform() : 0.0;
                    double nv = 0.0;
                    try {
                        nv = krauss_step(v.st, leader, spec, edge.speed_limit, params_.dt,
                                         noise);
                    } catch (const std::domain_error& err) {
                        abort_with_dump(t, q[i], err.what());
                    }
                    nv = std::max(nv, v.st.speed - spec.emergency_decel * params_.dt);
                    v.new_speed = std::max(0.0, nv);
                }
            }
        }
    }

    void move_vehicles(double t, long period) {
        for (std::size_t e = 0; e < lanes_.size(); ++e) {
            for (std::size_t l = 0; l < lanes_[e].size(); ++l) {
                auto snapshot = lanes_[e][l]; // front first; queues mutate below
                for (std::size_t vi : snapshot) {
                    Veh& v = vehicles_[vi];
                    if (v.phase != VehPhase::active || v.last_move_step == step_counter_)
                        continue;
                    advance_vehicle(vi, t, period);
                }
            }
        }
    }

    void advance_vehicle(std::size_t vi, double t, long period) {
        Veh& v = vehicles_[vi];
        v.last_move_step = step_counter_;
        const VehicleClassSpec& spec = spec_of(v);
        const int edge = v.st.current_edge();
        const Edge& cur = net_->edges[edge];
        v.st.speed = v.new_speed;
        double new_pos = v.st.position_on_edge + v.st.speed * params_.dt;

        // hard position clamp at the live leader's rear bumper: leaders move
        // first, and a leader emergency-braking harder than the deceleration
        // followers plan around (merge conflicts) must not cause overlap
        {
            const auto& q = lanes_[edge][v.lane];
            auto it = std::find(q.begin(), q.end(), vi);
            if (it != q.end() && it != q.begin()) {
                const Veh& lead = vehicles_[*(it - 1)];
                double limit = lead.st.position_on_edge - spec_of(lead).length;
                if (new_pos > limit) {
                    new_pos = std::max(limit, v.st.position_on_edge);
                    v.st.speed = (new_pos - v.st.position_on_edge) / params_.dt;
                }
                double moved = new_pos - v.st.position_on_edge;
                v.st.distance_traveled += moved;
                v.st.position_on_edge = new_pos;
                if (v.st.speed < 0.1) v.st.waiting_time += params_.dt;
                else v.st.waiting_time = 0.0;
                note_presence(vi);
                return;
            }
        }

        if (new_pos < cur.length) {
            v.st.distance_traveled += v.st.speed * params_.dt;
            v.st.position_on_edge = new_pos;
        } else if (v.st.on_last_edge()) {
            v.st.distance_traveled += cur.length - v.st.position_on_edge;
            v.st.position_on_edge = cur.length;
            record_traversal(vi, edge, t, period);
            remove_from_lane(vi);
            v.phase = VehPhase::arrived;
            --active_count_;
            ++arrived_count_;
            v.st.arrived = true;
            v.st.arrival_time = t;
            v.st.speed = 0.0;
            push_event(t, EventKind::arrive, v.st.id, edge, "");
            return;
        } else {
            const int next = v.st.route[v.st.route_cursor + 1];
            // furthest admissible front position along the path: the edge
            // end when the next edge is closed, otherwise min_gap behind
            // the rear bumper of the entry lane's last vehicle (which may
            // still straddle the boundary)
            double limit_front = cur.length;
            int lane = -1;
            if (active_mask_[next]) {
                const Edge& ne = net_->edges[next];
                lane = best_entry_lane(next);
                const auto& nq = lanes_[next][lane];
                if (nq.empty()) {
                    limit_front = cur.length + ne.length;
                } else {
                    const Veh& rear = vehicles_[nq.back()];
                    double rear_rear =
                        rear.st.position_on_edge - spec_of(rear).length;
                    limit_front = cur.length + std::max(rear_rear, 0.0) - spec.min_gap;
                }
            }
            double target = std::min(new_pos, limit_front);
            if (lane >= 0 && target >= cur.length) {
                const Edge& ne = net_->edges[next];
                double entry_pos = std::min(target - cur.length, ne.length);
                double moved = (cur.length - v.st.position_on_edge) + entry_pos;
                v.st.distance_traveled += moved;
                record_traversal(vi, edge, t, period);
                remove_from_lane(vi);
                v.st.route_cursor += 1;
                v.lane = lane;
                v.st.position_on_edge = entry_pos;
                v.entered_edge_at = t;
                lanes_[next][lane].push_back(vi);
                push_event(t, EventKind::edge_leave, v.st.id, edge, "");
                push_event(t, EventKind::edge_enter, v.st.id, next, "");
            } else {
                // hold short of the boundary; waiting_time accumulates below
                target = std::clamp(target, v.st.position_on_edge, cur.length);
                double moved = target - v.st.position_on_edge;
                v.st.distance_traveled += moved;
                v.st.position_on_edge = target;
                v.st.speed = moved / params_.dt;
            }
        }

        if (v.st.speed < 0.1) v.st.waiting_time += params_.dt;
        else v.st.waiting_time = 0.0;
        note_presence(vi);
    }

    void note_presence(std::size_t vi) {
        Veh& v = vehicles_[vi];
        if (v.shuttle_side && v.phase == VehPhase::active) {
            diag_users_[v.st.current_edge()].insert(v.st.id);
            diag_active_shuttles_.insert(v.st.id);
        }
    }

    void record_traversal(std::size_t vi, int edge, double t, long period) {
        Veh& v = vehicles_[vi];
        double tt = std::max(t - v.entered_edge_at, params_.dt);
        stats_.record(edge, tt, period);
        if (v.shuttle_side) {
            traversals_sav_[edge] += 1;
            diag_traversals_[edge] += 1;
        } else {
            traversals_pv_[edge] += 1;
        }
    }

    void remove_from_lane(std::size_t vi) {
        Veh& v = vehicles_[vi];
        auto& q = lanes_[v.st.current_edge()][v.lane];
        q.erase(std::find(q.begin(), q.end(), vi));
    }

    // --- rerouting -----------------------------------------------------------

    void run_reroutes(double t) {
        std::optional<std::vector<double>> weights;
        for (std::size_t vi = 0; vi < vehicles_.size(); ++vi) {
            Veh& v = vehicles_[vi];
            if (v.phase != VehPhase::active) continue;
            const VehicleClassSpec& spec = spec_of(v);
            if (!spec.reroutes() || t < v.next_reroute_check) continue;
            while (v.next_reroute_check <= t) v.next_reroute_check += *spec.reroute_period;
            RerouteParams rp{*spec.reroute_period, spec.reroute_pre_period,
                             spec.reroute_threshold, params_.kappa, params_.stats_window};
            if (!weights) weights = stats_.weights(params_.kappa);
            RerouteOutcome out = maybe_reroute(v.st, *net_, *weights, active_mask_, rp, t);
            if (out == RerouteOutcome::switched) {
                push_event(t, EventKind::reroute, v.st.id, v.st.current_edge(), "");
                diag_reroutes_[v.st.current_edge()] += 1;
            } else if (out == RerouteOutcome::stranded) {
                push_event(t, EventKind::stranded_warning, v.st.id, v.st.current_edge(), "");
                ++stranded_events_;
            }
        }
    }

    // --- teleporting ---------------------------------------------------------

    void run_teleports(double t, long /*period*/) {
        for (std::size_t vi = 0; vi < vehicles_.size(); ++vi) {
            Veh& v = vehicles_[vi];
            if (v.phase != VehPhase::active || v.st.waiting_time <= params_.teleport_threshold)
                continue;
            const int edge = v.st.current_edge();
            const Edge& cur = net_->edges[edge];
            remove_from_lane(vi);
            --active_count_;
            double remaining = cur.length - v.st.position_on_edge;
            double elapsed = remaining / cur.speed_limit;
            v.st.distance_traveled += remaining;

            if (v.st.on_last_edge()) {
                // nothing left to skip over; escort straight to the exit end
                v.phase = VehPhase::arrived;
                ++arrived_count_;
                v.st.arrived = true;
                v.st.arrival_time = t;
                v.st.teleport_count += 1;
                push_event(t, EventKind::teleport, v.st.id, edge, "to_exit");
                push_event(t, EventKind::arrive, v.st.id, edge, "teleport");
                continue;
            }
            const int blocked = v.st.route[v.st.route_cursor + 1];
            elapsed += net_->edges[blocked].length / net_->edges[blocked].speed_limit;
            v.st.distance_traveled += net_->edges[blocked].length;
            v.phase = VehPhase::transit;
            ++transit_count_;
            v.transit_cursor = v.st.route_cursor + 2;
            v.transit_ready = t + elapsed;
            v.st.teleport_count += 1;
            v.st.waiting_time = 0.0;
            v.st.speed = 0.0;
            push_event(t, EventKind::teleport, v.st.id, edge,
                       "past=" + net_->edges[blocked].id);
            if (v.transit_cursor >= static_cast<int>(v.st.route.size())) {
                // blocked edge was the exit; arrival happens at free-flow time
                v.phase = VehPhase::arrived;
                --transit_count_;
                ++arrived_count_;
                v.st.arrived = true;
                v.st.arrival_time = t;
                push_event(t, EventKind::arrive, v.st.id, blocked, "teleport");
            }
        }
    }

    // --- bookkeeping ---------------------------------------------------------

    void check_gaps(double t) {
        for (std::size_t e = 0; e < lanes_.size(); ++e)
            for (const auto& q : lanes_[e])
                for (std::size_t i = 1; i < q.size(); ++i) {
                    const Veh& lead = vehicles_[q[i - 1]];
                    const Veh& follower = vehicles_[q[i]];
                    double gap = lead.st.position_on_edge - spec_of(lead).length -
                                 follower.st.position_on_edge;
                    if (gap < -1e-9) abort_with_dump(t, q[i], "negative bumper gap");
                }
    }

    void sample_step(double t) {
        StepSample s;
        s.t = t;
        for (const auto& v : vehicles_) {
            if (v.phase != VehPhase::active) continue;
            s.present += 1;
            s.tt_sum += t - v.st.depart_time;
            s.dist_sum += v.st.distance_traveled;
            if (v.st.speed >= 0.1) {
                s.moving += 1;
                s.speed_sum += v.st.speed;
            }
            if (params_.record_trajectories)
                trajectories_.push_back(
                    {t, v.st.id, v.st.speed, t - v.st.depart_time, v.st.distance_traveled});
        }
        samples_.push_back(s);
    }

    void flush_diag(long period) {
        // proportions denominate over the shuttles seen anywhere this
        // period, so users-per-edge is a subset by construction
        const double shuttles = static_cast<double>(diag_active_shuttles_.size());
        for (std::size_t e = 0; e < diag_users_.size(); ++e) {
            if (diag_users_[e].empty() && diag_reroutes_[e] == 0 && diag_traversals_[e] == 0)
                continue;
            RouterDiagRow row;
            row.period = period;
            row.edge = static_cast<int>(e);
            row.mean_tt = stats_.mean_tt(static_cast<int>(e));
            row.variance = stats_.variance_tt(static_cast<int>(e));
            row.weight = stats_.penalized_weight(static_cast<int>(e), params_.kappa);
            double users = static_cast<double>(diag_users_[e].size());
            row.r = users > 0 ? std::min(1.0, diag_reroutes_[e] / users) : 0.0;
            row.p = shuttles > 0 ? users / shuttles : 0.0;
            row.x = static_cast<double>(diag_traversals_[e]);
            row.predicted = flow_update_diag(row.x, row.r, row.p);
            row.reroutes = diag_reroutes_[e];
            diag_rows_.push_back(row);
            diag_users_[e].clear();
            diag_reroutes_[e] = 0;
            diag_traversals_[e] = 0;
        }
        diag_active_shuttles_.clear();
    }

    [[noreturn]] void abort_with_dump(double t, std::size_t vi, const std::string& why) {
        const Veh& v = vehicles_[vi];
        std::ostringstream out;
        out << "engine invariant breach at t=" << t << ": " << why << "\n"
            << "vehicle " << v.st.id << " class " << v.st.class_name << " edge "
            << net_->edges[v.st.current_edge()].id << " lane " << v.lane << " pos "
            << v.st.position_on_edge << " speed " << v.st.speed << "\n"
            << "lane occupancy:";
        for (std::size_t o : lanes_[v.st.current_edge()][v.lane])
            out << " [" << vehicles_[o].st.id << " pos " << vehicles_[o].st.position_on_edge
                << " v " << vehicles_[o].st.speed << "]";
        throw EngineError(out.str());
    }

    void push_event(double t, EventKind kind, long long vehicle, int edge,
                    const std::string& payload) {
        events_.push_back({t, kind, vehicle, edge, payload});
    }

    const VehicleClassSpec& spec_of(const Veh& v) const { return classes_[v.class_idx]; }

    const RoadNetwork* net_;
    EngineParams params_;
    Rng rng_;
    double clock_ = 0.0;
    long step_counter_ = 0;
    long diag_period_ = 0;

    std::vector<Veh> vehicles_;
    std::vector<VehicleClassSpec> classes_;
    std::vector<std::size_t> pending_;
    std::size_t pending_cursor_ = 0;
    std::vector<std::size_t> insertion_queue_;
    std::vector<std::vector<std::vector<std::size_t>>> lanes_; // edge -> lane -> queue
    std::vector<bool> active_mask_;
    EdgeTravelStats stats_;

    long long active_count_ = 0;
    long long transit_count_ = 0;
    long long arrived_count_ = 0;
    long long stranded_events_ = 0;

    std::vector<EventRecord> events_;
    std::vector<StepSample> samples_;
    std::vector<TrajectorySample> trajectories_;
    std::vector<long long> traversals_pv_, traversals_sav_;
    std::vector<std::unordered_set<long long>> diag_users_;
    std::unordered_set<long long> diag_active_shuttles_;
    std::vector<int> diag_reroutes_;
    std::vector<long long> diag_traversals_;
    std::vector<RouterDiagRow> diag_rows_;
};

inline World new_world(const RoadNetwork& net, const DemandPlan& plan,
                       const ClassRegistry& classes, const RoutePlan& routes,
                       const EngineParams& params, std::uint64_t seed) {
    return World(net, plan, classes, routes, params, seed);
}

// --- trace output ------------------------------------------------------------

inline void write_events_csv(const SimTrace& trace, const RoadNetwork& net, std::ostream& out) {
    out << "time,kind,vehicle,edge,payload\n";
    for (const auto& ev : trace.events)
        out << ev.time << "," << to_string(ev.kind) << "," << ev.vehicle << ","
            << (ev.edge >= 0 ? net.edges[ev.edge].id : "") << "," << ev.payload << "\n";
}

inline void write_vehicles_csv(const SimTrace& trace, std::ostream& out) {
    out << "vehicle,class,depart,insert,arrival,travel_time,distance,reroutes,teleports,arrived\n";
    for (const auto& v : trace.vehicles)
        out << v.id << "," << v.class_name << "," << v.depart << "," << v.insert << ","
            << v.arrival << "," << v.travel_time() << "," << v.distance << "," << v.reroutes
            << "," << v.teleports << "," << (v.arrived ? 1 : 0) << "\n";
}

inline void write_router_diag_csv(const SimTrace& trace, const RoadNetwork& net,
                                  std::ostream& out) {
    out << "period,edge,mean_tt,variance,weight,r,p,x,predicted,reroutes\n";
    for (const auto& row : trace.router_diag)
        out << row.period << "," << net.edges[row.edge].id << "," << row.mean_tt << ","
            << row.variance << "," << row.weight << "," << row.r << "," << row.p << ","
            << row.x << "," << row.predicted << "," << row.reroutes << "\n";
}

} // namespace evacsim
