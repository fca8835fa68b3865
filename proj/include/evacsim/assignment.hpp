#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evacsim/network.hpp"
#include "evacsim/rng.hpp"

namespace evacsim {

struct LinkCostParams {
    double alpha = 0.15;
    double beta = 4.0;
};

// BPR volume-delay: t = t0 * (1 + alpha * (flow/capacity)^beta).
inline double bpr_time(double free_flow, double flow, double capacity, double alpha,
                       double beta) {
    return free_flow * (1.0 + alpha * std::pow(flow / capacity, beta));
}

// Beckmann integrand: integral of the BPR latency from 0 to flow.
inline double bpr_integral(double free_flow, double flow, double capacity, double alpha,
                           double beta) {
    return free_flow * flow *
           (1.0 + alpha / (beta + 1.0) * std::pow(flow / capacity, beta));
}

struct PathResult {
    std::vector<int> edges; // edges to traverse after the origin edge, dest inclusive
    double cost = 0.0;
    bool found = false;
};

// Edge-to-edge shortest path over nonnegative per-edge weights. The origin
// edge itself is not part of the result; origin == dest yields an empty
// path of cost 0. Exit edges are sinks and never appear as intermediates.
// Ties resolve toward the smaller incoming edge index, so results are
// reproducible across runs.
inline PathResult shortest_path(const RoadNetwork& net, const std::vector<double>& weights,
                                int origin_edge, int dest_edge,
                                const std::vector<bool>* active = nullptr) {
    PathResult result;
    if (origin_edge == dest_edge) {
        result.found = true;
        return result;
    }
    const int n = static_cast<int>(net.nodes.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(n, inf);
    std::vector<int> parent_edge(n, -1);

    using QItem = std::pair<double, int>; // (dist, node)
    std::priority_queue<QItem, std::vector<QItem>, std::greater<>> queue;

    const int source = net.edges[origin_edge].to;
    const int target = net.edges[dest_edge].from;
    dist[source] = 0.0;
    queue.push({0.0, source});
    while (!queue.empty()) {
        auto [d, u] = queue.top();
        queue.pop();
        if (d > dist[u]) continue;
        if (u == target) break;
        for (int e : net.outgoing(u)) {
            if (active && !(*active)[e]) continue;
            if (net.is_exit(e)) continue;
            if (e == dest_edge) continue; // entering dest ends the journey
            double nd = d + weights[e];
            int v = net.edges[e].to;
            if (nd < dist[v] || (nd == dist[v] && parent_edge[v] >= 0 && e < parent_edge[v])) {
                if (nd < dist[v]) queue.push({nd, v});
                dist[v] = nd;
                parent_edge[v] = e;
            }
        }
    }
    if (active && !(*active)[dest_edge]) return result;
    if (source == target) {
        result.found = true;
        result.edges = {dest_edge};
        result.cost = weights[dest_edge];
        return result;
    }
    if (dist[target] == inf) return result;

    std::vector<int> rev;
    for (int node = target; node != source;) {
        int e = parent_edge[node];
        rev.push_back(e);
        node = net.edges[e].from;
    }
    result.edges.assign(rev.rbegin(), rev.rend());
    result.edges.push_back(dest_edge);
    result.found = true;
    result.cost = dist[target] + weights[dest_edge];
    return result;
}

struct ODPair {
    int origin_edge = -1;
    int dest_edge = -1;
    double demand = 0.0; // veh/h
};

struct UEPath {
    std::vector<int> edges; // excluding the origin edge, dest inclusive
    double flow = 0.0;      // veh/h
};

struct UESolution {
    std::vector<double> link_flow;          // veh/h per edge
    std::vector<std::vector<UEPath>> paths; // per OD pair
    std::vector<double> objective_history;  // Beckmann value per iteration
    double relative_gap = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

// Method of successive averages for the user-equilibrium program: iterate
// all-or-nothing assignment on BPR travel times, blending flows with step
// 1/k. Convergence requires the relative gap to close AND every used path
// (>1% of its OD demand) to cost within (1 + 5*gap_tol) of its OD minimum;
// the gap alone does not bound stale per-path flows left by early
// iterations. Link-path consistency and per-OD demand satisfaction hold
// exactly at every iterate by construction.
inline UESolution solve_ue(const RoadNetwork& net, const std::vector<ODPair>& od,
                           const LinkCostParams& params, int max_iter = 500,
                           double gap_tol = 1e-3) {
    const int n_edges = static_cast<int>(net.edges.size());
    UESolution sol;
    sol.link_flow.assign(n_edges, 0.0);
    sol.paths.resize(od.size());

    std::vector<double> times(n_edges);
    auto update_times = [&] {
        for (int e = 0; e < n_edges; ++e)
            times[e] = bpr_time(net.edges[e].free_flow_time(), sol.link_flow[e],
                                net.edges[e].capacity, params.alpha, params.beta);
    };

    // per-OD path registry keyed by edge sequence
    std::vector<std::map<std::vector<int>, int>> registry(od.size());

    for (int k = 1; k <= max_iter; ++k) {
        update_times();

        double total_cost = 0.0;    // sum x_e * t_e
        double shortest_cost = 0.0; // sum d_c * sp_cost_c
        for (int e = 0; e < n_edges; ++e) total_cost += sol.link_flow[e] * times[e];

        const double step = 1.0 / k;
        std::vector<double> aux_flow(n_edges, 0.0);
        std::vector<int> aon_path(od.size(), -1);
        std::vector<double> min_cost(od.size(), 0.0);
        for (std::size_t c = 0; c < od.size(); ++c) {
            PathResult sp = shortest_path(net, times, od[c].origin_edge, od[c].dest_edge);
            if (!sp.found)
                throw std::runtime_error("solve_ue: OD pair " + std::to_string(c) +
                                         " is disconnected");
            min_cost[c] = sp.cost;
            shortest_cost += od[c].demand * sp.cost;
            for (int e : sp.edges) aux_flow[e] += od[c].demand;
            auto [it, inserted] = registry[c].try_emplace(sp.edges, -1);
            if (inserted) {
                it->second = static_cast<int>(sol.paths[c].size());
                sol.paths[c].push_back({sp.edges, 0.0});
            }
            aon_path[c] = it->second;
        }

        if (k > 1 && total_cost > 0.0) {
            sol.relative_gap = (total_cost - shortest_cost) / total_cost;
            bool wardrop_ok = sol.relative_gap <= gap_tol;
            for (std::size_t c = 0; c < od.size() && wardrop_ok; ++c) {
                for (const auto& path : sol.paths[c]) {
                    if (path.flow <= 0.01 * od[c].demand) continue;
                    double cost = 0.0;
                    for (int e : path.edges) cost += times[e];
                    if (cost > (1.0 + 5.0 * gap_tol) * min_cost[c]) {
                        wardrop_ok = false;
                        break;
                    }
                }
            }
            if (wardrop_ok) {
                sol.iterations = k - 1;
                sol.converged = true;
                return sol;
            }
        }

        for (int e = 0; e < n_edges; ++e)
            sol.link_flow[e] = (1.0 - step) * sol.link_flow[e] + step * aux_flow[e];
        for (std::size_t c = 0; c < od.size(); ++c) {
            for (auto& path : sol.paths[c]) path.flow *= (1.0 - step);
            sol.paths[c][aon_path[c]].flow += step * od[c].demand;
        }

        double objective = 0.0;
        for (int e = 0; e < n_edges; ++e)
            objective += bpr_integral(net.edges[e].free_flow_time(), sol.link_flow[e],
                                      net.edges[e].capacity, params.alpha, params.beta);
        sol.objective_history.push_back(objective);
        sol.iterations = k;
    }
    // tolerance unmet at max_iter: flagged, not an error
    update_times();
    double total_cost = 0.0, shortest_cost = 0.0;
    for (int e = 0; e < n_edges; ++e) total_cost += sol.link_flow[e] * times[e];
    bool wardrop_ok = true;
    for (std::size_t c = 0; c < od.size(); ++c) {
        PathResult sp = shortest_path(net, times, od[c].origin_edge, od[c].dest_edge);
        shortest_cost += od[c].demand * sp.cost;
        for (const auto& path : sol.paths[c]) {
            if (path.flow <= 0.01 * od[c].demand) continue;
            double cost = 0.0;
            for (int e : path.edges) cost += times[e];
            if (cost > (1.0 + 5.0 * gap_tol) * sp.cost) wardrop_ok = false;
        }
    }
    if (total_cost > 0.0) sol.relative_gap = (total_cost - shortest_cost) / total_cost;
    sol.converged = sol.relative_gap <= gap_tol && wardrop_ok;
    return sol;
}

// Draws one fixed route per vehicle, with per-path probability proportional
// to its equilibrium flow. Human-driven vehicles never change these routes.
inline std::vector<std::vector<std::vector<int>>>
sample_routes(const UESolution& sol, const std::vector<long long>& vehicles_per_od, Rng& rng) {
    if (vehicles_per_od.size() != sol.paths.size())
        throw std::invalid_argument("sample_routes: OD count mismatch");
    std::vector<std::vector<std::vector<int>>> routes(sol.paths.size());
    for (std::size_t c = 0; c < sol.paths.size(); ++c) {
        long long n = vehicles_per_od[c];
        if (n <= 0) continue;
        const auto& paths = sol.paths[c];
        if (paths.empty())
            throw std::runtime_error("sample_routes: no paths for demanded OD " +
                                     std::to_string(c));
        double total = 0.0;
        for (const auto& p : paths) total += p.flow;
        routes[c].reserve(n);
        for (long long v = 0; v < n; ++v) {
            std::size_t pick = 0;
            if (paths.size() > 1 && total > 0.0) {
                double r = rng.uniform() * total;
                double acc = 0.0;
                pick = paths.size() - 1;
                for (std::size_t i = 0; i < paths.size(); ++i) {
                    acc += paths[i].flow;
                    if (r < acc) {
                        pick = i;
                        break;
                    }
                }
            }
            routes[c].push_back(paths[pick].edges);
        }
    }
    return routes;
}

inline std::string dump_ue_solution(const UESolution& sol, const RoadNetwork& net,
                                    const std::vector<ODPair>& od) {
    std::ostringstream out;
    out << "user-equilibrium solution\n"
        << "iterations: " << sol.iterations << "\n"
        << "relative_gap: " << sol.relative_gap << "\n"
        << "converged: " << (sol.converged ? "yes" : "no") << "\n";
    for (std::size_t c = 0; c < sol.paths.size(); ++c) {
        out << "od " << c << " " << net.edges[od[c].origin_edge].id << " -> "
            << net.edges[od[c].dest_edge].id << " demand " << od[c].demand << "\n";
        for (const auto& p : sol.paths[c]) {
            if (p.flow <= 0.0) continue;
            out << "  flow " << p.flow << " :";
            for (int e : p.edges) out << " " << net.edges[e].id;
            out << "\n";
        }
    }
    return out.str();
}

} // namespace evacsim
