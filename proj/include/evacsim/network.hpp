#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacsim/rng.hpp"

namespace evacsim {

struct NetworkError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Node {
    std::string id;
    double x = 0.0;
    double y = 0.0;
};

struct Edge {
    std::string id;
    int from = -1;
    int to = -1;
    double length = 0.0;      // m
    int lanes = 1;
    double speed_limit = 0.0; // m/s
    double capacity = 0.0;    // veh/h
    int priority = 0;

    double free_flow_time() const { return length / speed_limit; }
};

struct BusStop {
    std::string id;
    int edge = -1;
    double position = 0.0; // m from edge start
};

// Half-open interval [start_time, end_time); unbounded end = +inf.
struct Closure {
    int edge = -1;
    double start_time = 0.0;
    double end_time = std::numeric_limits<double>::infinity();

    bool active_at(double t) const { return t >= start_time && t < end_time; }
};

// Minimum stop spacing from the 800 ft guideline.
inline constexpr double kMinStopSpacingMeters = 243.84;

// Default per-lane saturation flow used when an edge omits capacity.
inline constexpr double kDefaultLaneCapacity = 1800.0;

class RoadNetwork {
public:
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    std::vector<int> start_edges;  // PV origins, order-sensitive
    std::vector<BusStop> bus_stops; // SAV origins, order-sensitive
    std::vector<int> exit_points;  // sink edges, order-sensitive
    std::vector<Closure> closures;

    int node_index(const std::string& id) const {
        auto it = node_by_id_.find(id);
        return it == node_by_id_.end() ? -1 : it->second;
    }
    int edge_index(const std::string& id) const {
        auto it = edge_by_id_.find(id);
        return it == edge_by_id_.end() ? -1 : it->second;
    }

    const std::vector<int>& outgoing(int node) const { return out_edges_[node]; }
    const std::vector<int>& incoming(int node) const { return in_edges_[node]; }
    bool is_exit(int edge) const { return is_exit_[edge]; }

    double total_lane_length() const {
        double s = 0.0;
        for (const auto& e : edges) s += e.length * e.lanes;
        return s;
    }

    // Rebuilds indices and checks every structural invariant. Throws
    // NetworkError naming the offending field/id.
    void finalize() {
        node_by_id_.clear();
        edge_by_id_.clear();
        for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
            if (!node_by_id_.emplace(nodes[i].id, i).second)
                throw NetworkError("duplicate node id \"" + nodes[i].id + "\"");
        }
        for (int i = 0; i < static_cast<int>(edges.size()); ++i) {
            Edge& e = edges[i];
            if (!edge_by_id_.emplace(e.id, i).second)
                throw NetworkError("duplicate edge id \"" + e.id + "\"");
            if (e.from < 0 || e.from >= static_cast<int>(nodes.size()) ||
                e.to < 0 || e.to >= static_cast<int>(nodes.size()))
                throw NetworkError("edge \"" + e.id + "\" references an unknown node");
            if (!(e.length > 0.0))
                throw NetworkError("edge \"" + e.id + "\": length must be > 0");
            if (e.lanes < 1)
                throw NetworkError("edge \"" + e.id + "\": lanes must be >= 1");
            if (!(e.speed_limit > 0.0))
                throw NetworkError("edge \"" + e.id + "\": speed_limit must be > 0");
            if (e.capacity <= 0.0) e.capacity = e.lanes * kDefaultLaneCapacity;
        }
        out_edges_.assign(nodes.size(), {});
        in_edges_.assign(nodes.size(), {});
        for (int i = 0; i < static_cast<int>(edges.size()); ++i) {
            out_edges_[edges[i].from].push_back(i);
            in_edges_[edges[i].to].push_back(i);
        }
        is_exit_.assign(edges.size(), 0);
        for (int e : exit_points) {
            require_edge(e, "exit_points");
            is_exit_[e] = 1;
        }
        for (int e : start_edges) require_edge(e, "start_edges");
        for (const auto& s : bus_stops) {
            require_edge(s.edge, "bus_stops");
            if (s.position < 0.0 || s.position > edges[s.edge].length)
                throw NetworkError("bus stop \"" + s.id + "\": position outside edge");
        }
        for (const auto& c : closures) {
            require_edge(c.edge, "closures");
            if (c.start_time > c.end_time)
                throw NetworkError("closure on \"" + edges[c.edge].id +
                                   "\": start_time > end_time");
        }
    }

private:
    void require_edge(int e, const char* where) const {
        if (e < 0 || e >= static_cast<int>(edges.size()))
            throw NetworkError(std::string(where) + " references an unknown edge");
    }

    std::unordered_map<std::string, int> node_by_id_;
    std::unordered_map<std::string, int> edge_by_id_;
    std::vector<std::vector<int>> out_edges_;
    std::vector<std::vector<int>> in_edges_;
    std::vector<char> is_exit_;
};

namespace detail {

inline int resolve_node(const RoadNetwork& net, const nlohmann::json& j, const char* ctx) {
    const std::string id = j.get<std::string>();
    int n = net.node_index(id);
    if (n < 0) throw NetworkError(std::string(ctx) + ": unknown node \"" + id + "\"");
    return n;
}

inline int resolve_edge(const RoadNetwork& net, const std::string& id, const char* ctx) {
    int e = net.edge_index(id);
    if (e < 0) throw NetworkError(std::string(ctx) + ": unknown edge \"" + id + "\"");
    return e;
}

} // namespace detail

// Parses the JSON network document. Ordering of start_edges, bus_stops and
// exit_points is preserved exactly; demand allocation is order-sensitive.
inline RoadNetwork load_network(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw NetworkError(std::string("network parse failure: ") + e.what());
    }
    if (!doc.is_object()) throw NetworkError("network document must be a JSON object");

    RoadNetwork net;
    try {
        for (const auto& jn : doc.value("nodes", nlohmann::json::array())) {
            Node n;
            n.id = jn.at("id").get<std::string>();
            n.x = jn.at("x").get<double>();
            n.y = jn.at("y").get<double>();
            net.nodes.push_back(std::move(n));
        }
        // First pass registers node ids so edge references can be resolved.
        {
            std::unordered_map<std::string, int> node_ids;
            for (int i = 0; i < static_cast<int>(net.nodes.size()); ++i)
                node_ids.emplace(net.nodes[i].id, i);
            for (const auto& je : doc.value("edges", nlohmann::json::array())) {
                Edge e;
                e.id = je.at("id").get<std::string>();
                auto from = je.at("from").get<std::string>();
                auto to = je.at("to").get<std::string>();
                auto fit = node_ids.find(from);
                auto tit = node_ids.find(to);
                if (fit == node_ids.end())
                    throw NetworkError("edge \"" + e.id + "\": unknown node \"" + from + "\"");
                if (tit == node_ids.end())
                    throw NetworkError("edge \"" + e.id + "\": unknown node \"" + to + "\"");
                e.from = fit->second;
                e.to = tit->second;
                e.length = je.at("length").get<double>();
                e.lanes = je.value("lanes", 1);
                e.speed_limit = je.at("speed_limit").get<double>();
                e.capacity = je.value("capacity", 0.0);
                e.priority = je.value("priority", 0);
                net.edges.push_back(std::move(e));
            }
        }
        std::unordered_map<std::string, int> edge_ids;
        for (int i = 0; i < static_cast<int>(net.edges.size()); ++i)
            edge_ids.emplace(net.edges[i].id, i);
        auto edge_ref = [&](const std::string& id, const char* ctx) {
            auto it = edge_ids.find(id);
            if (it == edge_ids.end())
                throw NetworkError(std::string(ctx) + ": unknown edge \"" + id + "\"");
            return it->second;
        };
        for (const auto& js : doc.value("start_edges", nlohmann::json::array()))
            net.start_edges.push_back(edge_ref(js.get<std::string>(), "start_edges"));
        for (const auto& js : doc.value("bus_stops", nlohmann::json::array())) {
            BusStop s;
            s.id = js.at("id").get<std::string>();
            s.edge = edge_ref(js.at("edge").get<std::string>(), "bus_stops");
            s.position = js.at("position").get<double>();
            net.bus_stops.push_back(std::move(s));
        }
        for (const auto& js : doc.value("exit_points", nlohmann::json::array()))
            net.exit_points.push_back(edge_ref(js.get<std::string>(), "exit_points"));
        for (const auto& jc : doc.value("closures", nlohmann::json::array())) {
            Closure c;
            c.edge = edge_ref(jc.at("edge_id").get<std::string>(), "closures");
            c.start_time = jc.at("start_time").get<double>();
            if (jc.contains("end_time") && !jc["end_time"].is_null())
                c.end_time = jc["end_time"].get<double>();
            net.closures.push_back(c);
        }
    } catch (const nlohmann::json::exception& e) {
        throw NetworkError(std::string("network schema error: ") + e.what());
    }
    net.finalize();
    return net;
}

inline std::string save_network(const RoadNetwork& net) {
    nlohmann::json doc;
    doc["nodes"] = nlohmann::json::array();
    for (const auto& n : net.nodes)
        doc["nodes"].push_back({{"id", n.id}, {"x", n.x}, {"y", n.y}});
    doc["edges"] = nlohmann::json::array();
    for (const auto& e : net.edges)
        doc["edges"].push_back({{"id", e.id},
                                {"from", net.nodes[e.from].id},
                                {"to", net.nodes[e.to].id},
                                {"length", e.length},
                                {"lanes", e.lanes},
                                {"speed_limit", e.speed_limit},
                                {"capacity", e.capacity},
                                {"priority", e.priority}});
    doc["start_edges"] = nlohmann::json::array();
    for (int e : net.start_edges) doc["start_edges"].push_back(net.edges[e].id);
    doc["bus_stops"] = nlohmann::json::array();
    for (const auto& s : net.bus_stops)
        doc["bus_stops"].push_back(
            {{"id", s.id}, {"edge", net.edges[s.edge].id}, {"position", s.position}});
    doc["exit_points"] = nlohmann::json::array();
    for (int e : net.exit_points) doc["exit_points"].push_back(net.edges[e].id);
    doc["closures"] = nlohmann::json::array();
    for (const auto& c : net.closures) {
        nlohmann::json jc = {{"edge_id", net.edges[c.edge].id}, {"start_time", c.start_time}};
        if (std::isfinite(c.end_time)) jc["end_time"] = c.end_time;
        else jc["end_time"] = nullptr;
        doc["closures"].push_back(jc);
    }
    return doc.dump(2);
}

struct GridParams {
    int rows = 2;
    int cols = 2;
    double edge_length = 100.0;
    double speed_limit = 13.9;
    int lanes = 1;
    int n_start_edges = 1;
    int n_bus_stops = 1;
    int n_exits = 1;
    std::uint64_t seed = 0;
};

// Bidirectional grid network; deterministic for a fixed seed. Exits sit on
// boundary edges (pointing at a perimeter node), origins and stops are
// spread with a seeded shuffle; stops prefer the 800 ft spacing guideline.
inline RoadNetwork generate_grid(const GridParams& p) {
    if (p.rows < 2 || p.cols < 2) throw NetworkError("grid: rows and cols must be >= 2");
    if (p.edge_length <= 0 || p.speed_limit <= 0 || p.lanes < 1)
        throw NetworkError("grid: invalid edge parameters");

    RoadNetwork net;
    auto node_id = [&](int r, int c) {
        return "n" + std::to_string(r) + "x" + std::to_string(c);
    };
    for (int r = 0; r < p.rows; ++r)
        for (int c = 0; c < p.cols; ++c)
            net.nodes.push_back({node_id(r, c), c * p.edge_length, r * p.edge_length});

    auto add_pair = [&](int r1, int c1, int r2, int c2) {
        int a = r1 * p.cols + c1;
        int b = r2 * p.cols + c2;
        for (auto [from, to] : {std::pair{a, b}, std::pair{b, a}}) {
            Edge e;
            e.id = net.nodes[from].id + "-" + net.nodes[to].id;
            e.from = from;
            e.to = to;
            e.length = p.edge_length;
            e.lanes = p.lanes;
            e.speed_limit = p.speed_limit;
            e.capacity = p.lanes * kDefaultLaneCapacity;
            e.priority = 1;
            net.edges.push_back(std::move(e));
        }
    };
    for (int r = 0; r < p.rows; ++r)
        for (int c = 0; c < p.cols; ++c) {
            if (c + 1 < p.cols) add_pair(r, c, r, c + 1);
            if (r + 1 < p.rows) add_pair(r, c, r + 1, c);
        }

    auto on_perimeter = [&](int node) {
        int r = node / p.cols, c = node % p.cols;
        return r == 0 || c == 0 || r == p.rows - 1 || c == p.cols - 1;
    };

    Rng rng(p.seed);
    std::vector<int> boundary;
    for (int i = 0; i < static_cast<int>(net.edges.size()); ++i)
        if (on_perimeter(net.edges[i].to)) boundary.push_back(i);
    if (p.n_exits > static_cast<int>(boundary.size()))
        throw NetworkError("grid: not enough boundary edges for requested exits");
    rng.shuffle(boundary);
    net.exit_points.assign(boundary.begin(), boundary.begin() + p.n_exits);

    std::vector<char> taken(net.edges.size(), 0);
    for (int e : net.exit_points) taken[e] = 1;

    std::vector<int> interior;
    for (int i = 0; i < static_cast<int>(net.edges.size()); ++i)
        if (!taken[i]) interior.push_back(i);
    if (p.n_start_edges > static_cast<int>(interior.size()))
        throw NetworkError("grid: not enough edges for requested start edges");
    rng.shuffle(interior);
    net.start_edges.assign(interior.begin(), interior.begin() + p.n_start_edges);

    std::vector<int> stop_candidates;
    for (int i = 0; i < static_cast<int>(net.edges.size()); ++i)
        if (!taken[i]) stop_candidates.push_back(i);
    if (p.n_bus_stops > static_cast<int>(stop_candidates.size()))
        throw NetworkError("grid: not enough edges for requested bus stops");
    rng.shuffle(stop_candidates);

    auto stop_xy = [&](int edge) {
        const Edge& e = net.edges[edge];
        const Node& a = net.nodes[e.from];
        const Node& b = net.nodes[e.to];
        return std::pair{(a.x + b.x) / 2.0, (a.y + b.y) / 2.0};
    };
    std::vector<int> chosen;
    std::vector<char> used(net.edges.size(), 0);
    for (int pass = 0; pass < 2 && static_cast<int>(chosen.size()) < p.n_bus_stops; ++pass) {
        for (int cand : stop_candidates) {
            if (static_cast<int>(chosen.size()) >= p.n_bus_stops) break;
            if (used[cand]) continue;
            if (pass == 0) {
                auto [cx, cy] = stop_xy(cand);
                bool ok = true;
                for (int c2 : chosen) {
                    auto [x2, y2] = stop_xy(c2);
                    if (std::hypot(cx - x2, cy - y2) < kMinStopSpacingMeters) {
                        ok = false;
                        break;
                    }
                }
                if (!ok) continue;
            }
            used[cand] = 1;
            chosen.push_back(cand);
        }
    }
    for (int i = 0; i < static_cast<int>(chosen.size()); ++i)
        net.bus_stops.push_back(
            {"s" + std::to_string(i), chosen[i], net.edges[chosen[i]].length / 2.0});

    net.finalize();
    return net;
}

// Set of traversable edges at time t, as a mask over edge indices.
inline std::vector<bool> apply_closures(const RoadNetwork& net, double t) {
    std::vector<bool> active(net.edges.size(), true);
    for (const auto& c : net.closures)
        if (c.active_at(t)) active[c.edge] = false;
    return active;
}

// Worst-case mask: an edge with any closure counts as closed.
inline std::vector<bool> closure_union_mask(const RoadNetwork& net) {
    std::vector<bool> active(net.edges.size(), true);
    for (const auto& c : net.closures) active[c.edge] = false;
    return active;
}

struct OriginRef {
    enum Kind { StartEdge, BusStop } kind;
    int index; // into start_edges / bus_stops
    int edge;
};

struct ReachabilityReport {
    struct UnreachablePair {
        OriginRef origin;
        int exit_index;
    };
    struct SpacingWarning {
        int stop_a, stop_b;
        double distance;
    };
    std::vector<UnreachablePair> unreachable;
    std::vector<OriginRef> dead_origins; // origins with no reachable exit at all
    std::vector<SpacingWarning> spacing_warnings;

    bool ok() const { return dead_origins.empty(); }
};

// Checks that every origin can reach at least one exit over active edges,
// and flags stop pairs closer than the 800 ft guideline (warning only).
inline ReachabilityReport validate_reachability(const RoadNetwork& net, bool closures_active) {
    ReachabilityReport report;
    std::vector<bool> active =
        closures_active ? closure_union_mask(net) : std::vector<bool>(net.edges.size(), true);

    // reach[x][e] = edge e can reach exit x. One reverse BFS per exit over
    // the edge adjacency graph (a->b when a.to == b.from, both active).
    const int n_exits = static_cast<int>(net.exit_points.size());
    std::vector<std::vector<char>> reach(n_exits, std::vector<char>(net.edges.size(), 0));
    for (int x = 0; x < n_exits; ++x) {
        int sink = net.exit_points[x];
        if (!active[sink]) continue;
        std::vector<int> stack{sink};
        reach[x][sink] = 1;
        while (!stack.empty()) {
            int e = stack.back();
            stack.pop_back();
            for (int prev : net.incoming(net.edges[e].from)) {
                // exit edges are sinks; they never forward traffic
                if (!active[prev] || reach[x][prev] || net.is_exit(prev)) continue;
                reach[x][prev] = 1;
                stack.push_back(prev);
            }
        }
    }

    auto check_origin = [&](OriginRef o) {
        bool any = false;
        for (int x = 0; x < n_exits; ++x) {
            if (active[o.edge] && reach[x][o.edge]) any = true;
            else report.unreachable.push_back({o, x});
        }
        if (!any) report.dead_origins.push_back(o);
    };
    for (int i = 0; i < static_cast<int>(net.start_edges.size()); ++i)
        check_origin({OriginRef::StartEdge, i, net.start_edges[i]});
    for (int i = 0; i < static_cast<int>(net.bus_stops.size()); ++i)
        check_origin({OriginRef::BusStop, i, net.bus_stops[i].edge});

    auto stop_xy = [&](const BusStop& s) {
        const Edge& e = net.edges[s.edge];
        const Node& a = net.nodes[e.from];
        const Node& b = net.nodes[e.to];
        double f = e.length > 0 ? s.position / e.length : 0.0;
        return std::pair{a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
    };
    for (int i = 0; i < static_cast<int>(net.bus_stops.size()); ++i)
        for (int j = i + 1; j < static_cast<int>(net.bus_stops.size()); ++j) {
            auto [xi, yi] = stop_xy(net.bus_stops[i]);
            auto [xj, yj] = stop_xy(net.bus_stops[j]);
            double d = std::hypot(xi - xj, yi - yj);
            if (d < kMinStopSpacingMeters) report.spacing_warnings.push_back({i, j, d});
        }
    return report;
}

} // namespace evacsim
