#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "evacsim/assignment.hpp"
#include "evacsim/network.hpp"
#include "evacsim/vehicle.hpp"

namespace evacsim {

struct RerouteParams {
    double period = 60.0;     // s between recalculations per vehicle
    double pre_period = 300.0; // s after insertion before the device may act
    double threshold = 0.0;   // required relative travel-time improvement
    double kappa = 0.5;       // variance-penalty weight
    int window = 5;           // moving-average window, in periods
};

// Per-edge ring buffer of completed-period mean travel times. Edges without
// any observation fall back to their free-flow time.
class EdgeTravelStats {
public:
    EdgeTravelStats() = default;
    EdgeTravelStats(std::size_t n_edges, int window, std::vector<double> fallback)
        : window_(window), fallback_(std::move(fallback)), ring_(n_edges),
          period_sum_(n_edges, 0.0), period_count_(n_edges, 0) {
        if (window_ < 1) throw std::invalid_argument("EdgeTravelStats: window must be >= 1");
        if (fallback_.size() != n_edges)
            throw std::invalid_argument("EdgeTravelStats: fallback size mismatch");
    }

    long current_period() const { return current_period_; }

    // Accumulates a completed traversal into the period's running mean.
    // A period index past the current one first rolls the buffer over.
    void record(int edge, double travel_time, long period_index) {
        if (!(travel_time > 0.0))
            throw std::domain_error("record_edge_traversal: travel time must be > 0");
        advance_to(period_index);
        period_sum_[edge] += travel_time;
        period_count_[edge] += 1;
    }

    // Pushes finished period means into the rings; periods without
    // observations contribute nothing.
    void advance_to(long period_index) {
        if (period_index <= current_period_) return;
        for (std::size_t e = 0; e < ring_.size(); ++e) {
            if (period_count_[e] == 0) continue;
            auto& ring = ring_[e];
            ring.push_back(period_sum_[e] / period_count_[e]);
            if (static_cast<int>(ring.size()) > window_) ring.erase(ring.begin());
            period_sum_[e] = 0.0;
            period_count_[e] = 0;
        }
        current_period_ = period_index;
    }

    int stored(int edge) const { return static_cast<int>(ring_[edge].size()); }
    const std::vector<double>& ring(int edge) const { return ring_[edge]; }

    double mean_tt(int edge) const {
        const auto& ring = ring_[edge];
        if (ring.empty()) return fallback_[edge];
        double s = 0.0;
        for (double v : ring) s += v;
        return s / ring.size();
    }

    // Population variance over the stored periods.
    double variance_tt(int edge) const {
        const auto& ring = ring_[edge];
        if (ring.empty()) return 0.0;
        double m = mean_tt(edge);
        double s = 0.0;
        for (double v : ring) s += (v - m) * (v - m);
        return s / ring.size();
    }

    // Routing weight: moving-average time plus kappa standard deviations,
    // discouraging edges with volatile travel times.
    double penalized_weight(int edge, double kappa) const {
        if (kappa < 0.0) throw std::domain_error("penalized_weight: kappa must be >= 0");
        return mean_tt(edge) + kappa * std::sqrt(variance_tt(edge));
    }

    std::vector<double> weights(double kappa) const {
        std::vector<double> w(ring_.size());
        for (std::size_t e = 0; e < w.size(); ++e)
            w[e] = penalized_weight(static_cast<int>(e), kappa);
        return w;
    }

private:
    int window_ = 5;
    long current_period_ = 0;
    std::vector<double> fallback_;
    std::vector<std::vector<double>> ring_;
    std::vector<double> period_sum_;
    std::vector<int> period_count_;
};

enum class RerouteOutcome {
    gated,    // pre-period or period not elapsed; nothing computed
    kept,     // evaluated, improvement below threshold
    switched, // route replaced from the current position forward
    stranded, // destination unreachable over active edges
};

// Periodic threshold-gated recalculation. Candidate and current routes are
// costed with the same penalized weights so the comparison is like-for-like;
// a remaining route through an inactive edge counts as infinite.
inline RerouteOutcome maybe_reroute(VehicleState& vehicle, const RoadNetwork& net,
                                    const std::vector<double>& w,
                                    const std::vector<bool>& active,
                                    const RerouteParams& params, double now) {
    if (vehicle.insert_time < 0.0 || now - vehicle.insert_time < params.pre_period)
        return RerouteOutcome::gated;
    if (now - vehicle.last_reroute_time < params.period) return RerouteOutcome::gated;
    if (vehicle.on_last_edge()) return RerouteOutcome::gated;

    const int dest = vehicle.route.back();
    PathResult candidate =
        shortest_path(net, w, vehicle.current_edge(), dest, &active);
    if (!candidate.found) return RerouteOutcome::stranded;

    double current_cost = 0.0;
    for (std::size_t i = vehicle.route_cursor + 1; i < vehicle.route.size(); ++i) {
        int e = vehicle.route[i];
        if (!active[e]) {
            current_cost = std::numeric_limits<double>::infinity();
            break;
        }
        current_cost += w[e];
    }

    if (!(candidate.cost < (1.0 - params.threshold) * current_cost))
        return RerouteOutcome::kept;

    vehicle.route.resize(vehicle.route_cursor + 1);
    vehicle.route.insert(vehicle.route.end(), candidate.edges.begin(), candidate.edges.end());
    vehicle.last_reroute_time = now;
    vehicle.reroute_count += 1;
    return RerouteOutcome::switched;
}

inline RerouteOutcome maybe_reroute(VehicleState& vehicle, const RoadNetwork& net,
                                    const EdgeTravelStats& stats,
                                    const std::vector<bool>& active,
                                    const RerouteParams& params, double now) {
    if (vehicle.insert_time < 0.0 || now - vehicle.insert_time < params.pre_period)
        return RerouteOutcome::gated;
    if (now - vehicle.last_reroute_time < params.period) return RerouteOutcome::gated;
    return maybe_reroute(vehicle, net, stats.weights(params.kappa), active, params, now);
}

// Literal per-edge flow-update diagnostic: r*x + (1-r)*p. Logged per period,
// never fed back into the simulation state.
inline double flow_update_diag(double x_t, double r_t, double p_t) {
    if (r_t < 0.0 || r_t > 1.0) throw std::domain_error("flow_update_diag: r_t outside [0,1]");
    if (p_t < 0.0 || p_t > 1.0) throw std::domain_error("flow_update_diag: p_t outside [0,1]");
    return r_t * x_t + (1.0 - r_t) * p_t;
}

} // namespace evacsim
