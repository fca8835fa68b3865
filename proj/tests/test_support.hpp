#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacsim/demand.hpp"
#include "evacsim/network.hpp"

namespace test_support {

// Two nodes, one edge; start and exit on the same edge.
inline std::string minimal_network_doc() {
    return R"({
      "nodes": [{"id": "a", "x": 0, "y": 0}, {"id": "b", "x": 1000, "y": 0}],
      "edges": [{"id": "ab", "from": "a", "to": "b", "length": 1000, "lanes": 1,
                 "speed_limit": 13.89}],
      "start_edges": ["ab"],
      "bus_stops": [],
      "exit_points": ["ab"],
      "closures": []
    })";
}

// a ->(top: 100 s)-> b and a ->(bottom: 120 s)-> b, shared entry and exit
// legs so both routes serve the same OD.
inline evacsim::RoadNetwork parallel_pair_network(double top_len = 1000.0,
                                                  double bottom_len = 1200.0,
                                                  double speed = 10.0) {
    nlohmann::json doc;
    doc["nodes"] = {{{"id", "s"}, {"x", -100}, {"y", 0}},
                    {{"id", "a"}, {"x", 0}, {"y", 0}},
                    {{"id", "b"}, {"x", 1000}, {"y", 0}},
                    {{"id", "t"}, {"x", 1100}, {"y", 0}}};
    auto edge = [&](const char* id, const char* from, const char* to, double len) {
        return nlohmann::json{{"id", id}, {"from", from}, {"to", to},
                              {"length", len},  {"lanes", 1},    {"speed_limit", speed}};
    };
    doc["edges"] = {edge("in", "s", "a", 100.0), edge("top", "a", "b", top_len),
                    edge("bottom", "a", "b", bottom_len), edge("out", "b", "t", 100.0)};
    doc["start_edges"] = {"in"};
    doc["bus_stops"] = nlohmann::json::array();
    doc["exit_points"] = {"out"};
    doc["closures"] = nlohmann::json::array();
    return evacsim::load_network(doc.dump());
}

// Desk-scale stand-in population (county proportions at ~1500 persons).
inline evacsim::PopulationTable desk_population() {
    return evacsim::PopulationTable{1500,
                                    {{"elderly_85_plus", 75}, {"disability", 305}, {"lep", 22}},
                                    1098};
}

} // namespace test_support
