#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "evacsim/experiment.hpp"
#include "evacsim/metrics.hpp"
#include "test_support.hpp"

using namespace evacsim;
using Catch::Approx;

namespace {

SimTrace synthetic_trace() {
    SimTrace trace;
    trace.dt = 1.0;
    trace.total_lane_length = 10000.0;
    trace.makespan = 100.0;
    trace.end_time = 100.0;
    trace.complete = true;
    return trace;
}

SimTrace simulated_trace(bool record_trajectories = false) {
    RoadNetwork net = generate_grid({6, 6, 180.0, 13.9, 1, 8, 4, 3, 91});
    ScenarioSpec sc = builtin_scenario(4);
    sc.served_override.reset();
    sc.min_sav_per_category = 1;
    sc.window = 900.0;
    Rng plan_rng(13);
    DemandPlan plan =
        build_demand_plan(test_support::desk_population(), sc, net, plan_rng);
    Rng route_rng(14);
    RoutePlan routes = build_route_plan(net, plan, SolverConfig{}, route_rng);
    EngineParams ep;
    ep.record_trajectories = record_trajectories;
    World world(net, plan, default_classes(), routes, ep, 13);
    return world.run_to_completion(7200.0);
}

} // namespace

TEST_CASE("interval metrics from constant motion") {
    SimTrace trace = synthetic_trace();
    for (int t = 0; t < 120; ++t) {
        StepSample s;
        s.t = t;
        s.present = 1;
        s.moving = 1;
        s.speed_sum = 10.0;
        s.tt_sum = t;
        s.dist_sum = 10.0 * t;
        trace.steps.push_back(s);
    }
    auto series = interval_metrics(trace, 60.0);
    REQUIRE(series.size() == 2);
    CHECK(series[0].speed == Approx(10.0));
    CHECK(series[0].volume == Approx(1.0));
    CHECK(series[0].density == Approx(1.0 / 10000.0));
    CHECK(series[1].speed == Approx(10.0));
}

TEST_CASE("published scenario-7 interval row satisfies the ratio identity") {
    SimTrace trace = synthetic_trace();
    StepSample s;
    s.t = 0.0;
    s.present = 1;
    s.moving = 1;
    s.speed_sum = 22.23;
    s.tt_sum = 115.34;
    s.dist_sum = 20602.0;
    trace.steps.push_back(s);
    auto series = interval_metrics(trace, 60.0);
    REQUIRE(!series.empty());
    CHECK(series[0].congestion_index == Approx(5.19).margin(0.01));
    CHECK(series[0].efficiency == Approx(1.079e-3).epsilon(0.01));
}

TEST_CASE("ratio identities hold exactly on every simulated interval") {
    SimTrace trace = simulated_trace();
    auto series = interval_metrics(trace, 60.0);
    REQUIRE(!series.empty());
    bool any_occupied = false;
    for (const auto& m : series) {
        if (m.speed > 0.0) {
            any_occupied = true;
            CHECK(m.congestion_index == m.mean_tt / m.speed);
        } else {
            CHECK(m.congestion_index == 0.0);
        }
        if (m.distance > 0.0) CHECK(m.efficiency == m.speed / m.distance);
    }
    CHECK(any_occupied);
}

TEST_CASE("summary totals follow the per-vehicle records") {
    SimTrace trace = synthetic_trace();
    StepSample s;
    s.t = 0;
    trace.steps.push_back(s);

    SECTION("single vehicle") {
        trace.vehicles.push_back({0, "hdv_pre", 0.0, 0.0, 100.0, true, 900.0, 0, 0});
        auto report = summarize(interval_metrics(trace, 60.0), trace);
        CHECK(report.summary.total_travel_time == Approx(100.0));
        CHECK(report.summary.mean_travel_time == Approx(100.0));
        CHECK(report.summary.normalized_travel_time == Approx(100.0));
        CHECK(report.summary.mean_travel_time * report.summary.arrived ==
              Approx(report.summary.total_travel_time));
    }
    SECTION("two vehicles average") {
        trace.vehicles.push_back({0, "hdv_pre", 0.0, 0.0, 100.0, true, 900.0, 0, 0});
        trace.vehicles.push_back({1, "hdv_pre", 0.0, 0.0, 300.0, true, 1100.0, 0, 0});
        auto report = summarize(interval_metrics(trace, 60.0), trace);
        CHECK(report.summary.total_travel_time == Approx(400.0));
        CHECK(report.summary.mean_travel_time == Approx(200.0));
    }
}

TEST_CASE("combined-objective diagnostic is zero on zero flow") {
    SimTrace trace = synthetic_trace();
    trace.edge_free_flow = {10.0, 20.0};
    trace.edge_capacity = {1000.0, 1000.0};
    trace.traversals_pv = {0, 0};
    trace.traversals_sav = {0, 0};
    CHECK(beckmann_diagnostic(trace, {}) == 0.0);

    trace.traversals_pv = {100, 0};
    CHECK(beckmann_diagnostic(trace, {}) > 0.0);
}

TEST_CASE("comparison table") {
    MetricsReport a, b;
    a.summary.mean_congestion_index = 5.19;
    b.summary.mean_congestion_index = 143.4;
    a.summary.avg_speed = 22.23;
    b.summary.avg_speed = 9.0;

    SECTION("identical reports are all zero") {
        auto rows = compare(b, b);
        for (const auto& row : rows) {
            if (row.baseline != 0.0) {
                REQUIRE(row.delta_pct.has_value());
                CHECK(*row.delta_pct == 0.0);
            }
        }
    }
    SECTION("published scenario-7 deltas") {
        auto rows = compare(a, b);
        std::map<std::string, ComparisonRow> by_name;
        for (const auto& row : rows) by_name[row.metric] = row;
        REQUIRE(by_name.at("congestion_index").delta_pct.has_value());
        CHECK(*by_name.at("congestion_index").delta_pct == Approx(-96.4).margin(0.1));
        REQUIRE(by_name.at("average_speed").delta_pct.has_value());
        CHECK(*by_name.at("average_speed").delta_pct == Approx(147.0).margin(1.0));
    }
    SECTION("zero baseline reports no percentage") {
        auto rows = compare(a, MetricsReport{});
        for (const auto& row : rows)
            if (row.baseline == 0.0) CHECK_FALSE(row.delta_pct.has_value());
    }
}

TEST_CASE("table row order matches the published metric order") {
    auto rows = compare(MetricsReport{}, MetricsReport{});
    const std::vector<std::string> expected{
        "total_travel_time", "average_distance",  "mean_travel_time",
        "travel_density",    "congestion_index",  "normalized_travel_time",
        "average_speed",     "traffic_volume",    "travel_efficiency"};
    REQUIRE(rows.size() == expected.size());
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].metric == expected[i]);
}

TEST_CASE("streamed interval metrics match a brute-force trajectory recount") {
    SimTrace trace = simulated_trace(true);
    REQUIRE(!trace.trajectories.empty());
    const double interval = 60.0;
    auto series = interval_metrics(trace, interval);

    struct Acc {
        long present = 0, moving = 0, steps = 0;
        double speed = 0, tt = 0, dist = 0;
    };
    std::map<long, Acc> acc;
    std::map<double, long> steps_at; // distinct step times per interval
    for (const auto& ts : trace.trajectories) {
        long k = static_cast<long>(std::floor(ts.t / interval));
        Acc& a = acc[k];
        a.present += 1;
        a.tt += ts.travel_time;
        a.dist += ts.distance;
        if (ts.speed >= 0.1) {
            a.moving += 1;
            a.speed += ts.speed;
        }
    }
    std::map<long, long> interval_steps;
    for (const auto& s : trace.steps)
        interval_steps[static_cast<long>(std::floor(s.t / interval))] += 1;

    for (const auto& [k, a] : acc) {
        REQUIRE(k < static_cast<long>(series.size()));
        const auto& m = series[k];
        CHECK(m.volume ==
              Approx(static_cast<double>(a.present) / interval_steps[k]).epsilon(1e-12));
        if (a.moving > 0) CHECK(m.speed == Approx(a.speed / a.moving).epsilon(1e-12));
        if (a.present > 0) {
            CHECK(m.mean_tt == Approx(a.tt / a.present).epsilon(1e-12));
            CHECK(m.distance == Approx(a.dist / a.present).epsilon(1e-12));
        }
    }
}
