#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "evacsim/network.hpp"
#include "evacsim/rng.hpp"
#include "test_support.hpp"

using namespace evacsim;

TEST_CASE("minimal network loads") {
    RoadNetwork net = load_network(test_support::minimal_network_doc());
    CHECK(net.nodes.size() == 2);
    CHECK(net.edges.size() == 1);
    CHECK(net.start_edges.size() == 1);
    CHECK(net.exit_points.size() == 1);
    CHECK(net.edges[0].capacity == Catch::Approx(1800.0)); // default lanes x 1800
}

TEST_CASE("dangling node reference is reported by id") {
    std::string doc = R"({
      "nodes": [{"id": "a", "x": 0, "y": 0}],
      "edges": [{"id": "e", "from": "a", "to": "n9", "length": 10, "speed_limit": 10}]
    })";
    try {
        load_network(doc);
        FAIL("expected NetworkError");
    } catch (const NetworkError& e) {
        CHECK(std::string(e.what()).find("n9") != std::string::npos);
    }
}

TEST_CASE("invariant violations name the field") {
    std::string doc = R"({
      "nodes": [{"id": "a", "x": 0, "y": 0}, {"id": "b", "x": 1, "y": 0}],
      "edges": [{"id": "e", "from": "a", "to": "b", "length": -5, "speed_limit": 10}]
    })";
    CHECK_THROWS_WITH(load_network(doc), Catch::Matchers::ContainsSubstring("length"));
}

TEST_CASE("load-serialize-load round trip is identity") {
    RoadNetwork net = generate_grid({5, 4, 150.0, 13.9, 2, 4, 3, 3, 11});
    std::string first = save_network(net);
    RoadNetwork reloaded = load_network(first);
    CHECK(save_network(reloaded) == first);
    CHECK(reloaded.start_edges == net.start_edges);
    CHECK(reloaded.exit_points == net.exit_points);
}

TEST_CASE("2x2 grid has 4 nodes and 8 directed edges") {
    RoadNetwork net = generate_grid({2, 2, 100.0, 13.9, 1, 2, 1, 1, 7});
    CHECK(net.nodes.size() == 4);
    CHECK(net.edges.size() == 8);
}

TEST_CASE("grid generation is deterministic for a fixed seed") {
    GridParams p{6, 6, 120.0, 13.9, 1, 8, 5, 4, 42};
    CHECK(save_network(generate_grid(p)) == save_network(generate_grid(p)));
    GridParams other = p;
    other.seed = 43;
    CHECK(save_network(generate_grid(other)) != save_network(generate_grid(p)));
}

TEST_CASE("10x10 grid places 13 distinct boundary exits") {
    GridParams p{10, 10, 200.0, 13.9, 1, 15, 8, 13, 3};
    RoadNetwork net = generate_grid(p);
    REQUIRE(net.exit_points.size() == 13);

    // independent boundary enumeration: an exit edge must point at a node
    // on the grid perimeter
    std::set<int> boundary;
    for (int e = 0; e < static_cast<int>(net.edges.size()); ++e) {
        int to = net.edges[e].to;
        int r = to / p.cols, c = to % p.cols;
        if (r == 0 || c == 0 || r == p.rows - 1 || c == p.cols - 1) boundary.insert(e);
    }
    std::set<int> exits(net.exit_points.begin(), net.exit_points.end());
    CHECK(exits.size() == 13);
    for (int e : exits) CHECK(boundary.count(e) == 1);
}

TEST_CASE("grid rejects infeasible counts") {
    CHECK_THROWS_AS(generate_grid({2, 2, 100.0, 13.9, 1, 2, 1, 100, 7}), NetworkError);
}

TEST_CASE("apply_closures half-open interval boundaries") {
    RoadNetwork net = load_network(test_support::minimal_network_doc());
    SECTION("no closures keeps all edges") {
        auto active = apply_closures(net, 12345.0);
        CHECK(active[0]);
    }
    SECTION("unbounded closure") {
        net.closures.push_back({0, 0.0, std::numeric_limits<double>::infinity()});
        CHECK_FALSE(apply_closures(net, 100.0)[0]);
    }
    SECTION("bounded closure [600, 1200)") {
        net.closures.push_back({0, 600.0, 1200.0});
        CHECK(apply_closures(net, 599.0)[0]);
        CHECK_FALSE(apply_closures(net, 600.0)[0]);
        CHECK_FALSE(apply_closures(net, 1199.0)[0]);
        CHECK(apply_closures(net, 1200.0)[0]);
    }
}

TEST_CASE("apply_closures is monotone under added closures") {
    RoadNetwork net = generate_grid({4, 4, 100.0, 13.9, 1, 4, 2, 2, 5});
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        net.closures.clear();
        int n = static_cast<int>(rng.index(6));
        for (int i = 0; i < n; ++i) {
            double start = rng.uniform(0, 1000);
            net.closures.push_back({static_cast<int>(rng.index(net.edges.size())), start,
                                    start + rng.uniform(0, 1000)});
        }
        double t = rng.uniform(0, 2000);
        auto before = apply_closures(net, t);
        net.closures.push_back({static_cast<int>(rng.index(net.edges.size())), 0.0,
                                std::numeric_limits<double>::infinity()});
        auto after = apply_closures(net, t);
        for (std::size_t e = 0; e < before.size(); ++e) {
            if (after[e]) CHECK(before[e]); // adding a closure never activates an edge
        }
    }
}

TEST_CASE("reachability on a connected grid is clean") {
    RoadNetwork net = generate_grid({5, 5, 300.0, 13.9, 1, 6, 3, 3, 21});
    auto report = validate_reachability(net, false);
    CHECK(report.ok());
    CHECK(report.unreachable.empty());
}

TEST_CASE("closing the only bridge strands the far origin") {
    // two 2-node islands joined by one bridge; origin on the left, exit on
    // the right
    std::string doc = R"({
      "nodes": [{"id": "a", "x": 0, "y": 0}, {"id": "b", "x": 100, "y": 0},
                {"id": "c", "x": 200, "y": 0}, {"id": "d", "x": 300, "y": 0}],
      "edges": [
        {"id": "ab", "from": "a", "to": "b", "length": 100, "speed_limit": 10},
        {"id": "bc", "from": "b", "to": "c", "length": 100, "speed_limit": 10},
        {"id": "cd", "from": "c", "to": "d", "length": 100, "speed_limit": 10}
      ],
      "start_edges": ["ab"],
      "exit_points": ["cd"],
      "closures": [{"edge_id": "bc", "start_time": 0}]
    })";
    RoadNetwork net = load_network(doc);
    CHECK(validate_reachability(net, false).ok());
    auto report = validate_reachability(net, true);
    REQUIRE_FALSE(report.ok());
    REQUIRE(report.dead_origins.size() == 1);
    CHECK(net.edges[report.dead_origins[0].edge].id == "ab");
}

TEST_CASE("stop spacing below 800 ft warns") {
    std::string doc = R"({
      "nodes": [{"id": "a", "x": 0, "y": 0}, {"id": "b", "x": 400, "y": 0}],
      "edges": [{"id": "ab", "from": "a", "to": "b", "length": 400, "speed_limit": 10}],
      "start_edges": ["ab"],
      "bus_stops": [{"id": "s0", "edge": "ab", "position": 100},
                    {"id": "s1", "edge": "ab", "position": 200}],
      "exit_points": ["ab"],
      "closures": []
    })";
    RoadNetwork net = load_network(doc);
    auto report = validate_reachability(net, false);
    CHECK(report.ok()); // warning, not an error
    REQUIRE(report.spacing_warnings.size() == 1);
    CHECK(report.spacing_warnings[0].distance == Catch::Approx(100.0));
}

TEST_CASE("county-scale document loads", "[slow]") {
    // synthetic stand-in at the published node/edge counts: a long chain
    // plus extra parallel links up to 66,546 edges
    const int n_nodes = 27148;
    const int n_edges = 66546;
    std::ostringstream doc;
    doc << R"({"nodes":[)";
    for (int i = 0; i < n_nodes; ++i) {
        if (i) doc << ",";
        doc << R"({"id":"n)" << i << R"(","x":)" << (i % 200) * 50 << R"(,"y":)"
            << (i / 200) * 50 << "}";
    }
    doc << R"(],"edges":[)";
    int e = 0;
    for (int i = 0; i + 1 < n_nodes && e < n_edges; ++i, ++e) {
        if (e) doc << ",";
        doc << R"({"id":"e)" << e << R"(","from":"n)" << i << R"(","to":"n)" << (i + 1)
            << R"(","length":50,"speed_limit":13.9})";
    }
    Rng rng(1);
    while (e < n_edges) {
        int a = static_cast<int>(rng.index(n_nodes));
        int b = static_cast<int>(rng.index(n_nodes));
        if (a == b) continue;
        doc << R"(,{"id":"e)" << e << R"(","from":"n)" << a << R"(","to":"n)" << b
            << R"(","length":80,"speed_limit":13.9})";
        ++e;
    }
    doc << R"(],"start_edges":["e0"],"exit_points":["e100"],"closures":[]})";
    RoadNetwork net = load_network(doc.str());
    CHECK(net.nodes.size() == 27148);
    CHECK(net.edges.size() == 66546);
}
