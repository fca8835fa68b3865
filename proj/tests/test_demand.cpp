#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "evacsim/demand.hpp"
#include "evacsim/metrics.hpp"
#include "evacsim/network.hpp"
#include "test_support.hpp"

using namespace evacsim;
using Catch::Approx;

namespace {

VehicleCounts county_counts(int scenario) {
    return vehicle_counts(county_population(), builtin_scenario(scenario));
}

} // namespace

TEST_CASE("published scenario table aggregates reproduce exactly") {
    struct Row {
        int id;
        long long sav, pv;
    };
    // scenario 6 PV is the computed 20,099; the published 20,100 is off by
    // one from ceil(100491/5)
    const Row rows[] = {{1, 0, 27453},    {2, 424, 25982}, {3, 657, 24512}, {4, 936, 23040},
                        {5, 1214, 21569}, {6, 1492, 20099}, {7, 5491, 0}};
    for (const Row& row : rows) {
        auto counts = county_counts(row.id);
        INFO("scenario " << row.id);
        CHECK(counts.n_sav == row.sav);
        CHECK(counts.n_pv == row.pv);
    }
}

TEST_CASE("scenario 2 category breakdown") {
    auto counts = county_counts(2);
    REQUIRE(counts.served == std::vector<long long>{1367, 5588, 400});
    // ceil to 25 seats: 55, 224, 16 -> coverage floor lifts 55 and 16 to 100
    CHECK(counts.sav_per_category == std::vector<long long>{100, 224, 100});
}

TEST_CASE("scenario 4 category breakdown") {
    auto counts = county_counts(4);
    REQUIRE(counts.served == std::vector<long long>{4102, 16763, 1200});
    CHECK(counts.sav_per_category == std::vector<long long>{165, 671, 100});
}

TEST_CASE("fraction rounding drives custom populations") {
    PopulationTable pop = test_support::desk_population();
    ScenarioSpec sc = builtin_scenario(2);
    sc.served_override.reset();
    sc.min_sav_per_category = 1;
    auto counts = vehicle_counts(pop, sc);
    CHECK(counts.served == std::vector<long long>{15, 61, 4}); // round(0.2 * subgroup)
    CHECK(counts.n_sav == 1 + 3 + 1);
    CHECK(counts.n_pv == ceil_div(1500 - 80, 5));
}

TEST_CASE("allocation spreads evenly with remainder first") {
    CHECK(allocate_to_sources(10, 10) == std::vector<long long>(10, 1));
    CHECK(allocate_to_sources(7, 3) == std::vector<long long>{3, 2, 2});

    auto alloc = allocate_to_sources(27453, 150);
    long long sum = 0, n184 = 0, n183 = 0;
    for (long long a : alloc) {
        sum += a;
        if (a == 184) ++n184;
        if (a == 183) ++n183;
    }
    CHECK(sum == 27453);
    CHECK(n184 == 3);
    CHECK(n183 == 147);
}

TEST_CASE("allocation conservation and balance properties") {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        long long count = static_cast<long long>(rng.index(100000));
        int sources = 1 + static_cast<int>(rng.index(200));
        auto alloc = allocate_to_sources(count, sources);
        long long sum = std::accumulate(alloc.begin(), alloc.end(), 0ll);
        auto [lo, hi] = std::minmax_element(alloc.begin(), alloc.end());
        REQUIRE(sum == count);
        REQUIRE(*hi - *lo <= 1);
    }
}

TEST_CASE("od rows split evenly with round-robin remainders") {
    SECTION("13 over 13 exits") {
        auto od = build_od({13}, 13);
        CHECK(od[0] == std::vector<long long>(13, 1));
    }
    SECTION("183 over 13 exits") {
        auto od = build_od({183}, 13);
        long long sum = 0, n14 = 0, n15 = 0;
        for (long long x : od[0]) {
            sum += x;
            if (x == 14) ++n14;
            if (x == 15) ++n15;
        }
        CHECK(sum == 183);
        CHECK(n14 == 12);
        CHECK(n15 == 1);
    }
    SECTION("zero row stays zero") {
        auto od = build_od({0}, 5);
        CHECK(od[0] == std::vector<long long>(5, 0));
    }
    SECTION("remainder start offset rotates by source index") {
        auto od = build_od({5, 5, 5}, 4); // base 1, remainder 1
        CHECK(od[0][0] == 2);
        CHECK(od[1][1] == 2);
        CHECK(od[2][2] == 2);
    }
}

TEST_CASE("od row sums equal allocations on random instances") {
    Rng rng(29);
    for (int trial = 0; trial < 1000; ++trial) {
        int sources = 1 + static_cast<int>(rng.index(40));
        int exits = 1 + static_cast<int>(rng.index(20));
        std::vector<long long> alloc(sources);
        for (auto& a : alloc) a = static_cast<long long>(rng.index(5000));
        auto od = build_od(alloc, exits);
        for (int i = 0; i < sources; ++i) {
            long long sum = std::accumulate(od[i].begin(), od[i].end(), 0ll);
            REQUIRE(sum == alloc[i]);
            auto [lo, hi] = std::minmax_element(od[i].begin(), od[i].end());
            REQUIRE(*hi - *lo <= 1);
        }
    }
}

TEST_CASE("uniform schedule spans the window exactly") {
    auto intervals = schedule_uniform(150, 0.0, 21600.0);
    REQUIRE(intervals.size() == 150);
    CHECK(intervals[0].begin == 0.0);
    CHECK(intervals[0].end == Approx(144.0));
    CHECK(intervals[149].end == 21600.0);

    auto single = schedule_uniform(1, 100.0, 600.0);
    CHECK(single[0].begin == 100.0);
    CHECK(single[0].end == 700.0);

    CHECK_THROWS_WITH(schedule_uniform(0, 0.0, 100.0),
                      Catch::Matchers::ContainsSubstring("no flows"));
}

TEST_CASE("s-curve schedule matches the truncated normal oracle") {
    Rng rng(31);
    const double mu = 5400.0, sigma = 1800.0, window = 21600.0;
    auto times = schedule_scurve(10000, mu, sigma, window, rng);
    REQUIRE(times.size() == 10000);
    CHECK(std::is_sorted(times.begin(), times.end()));
    CHECK(times.front() >= 0.0);
    CHECK(times.back() <= window);

    // oracle: truncated-normal CDF via erf
    auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
    double lo = phi((0.0 - mu) / sigma), hi = phi((window - mu) / sigma);
    double expect_before_1800 = (phi((1800.0 - mu) / sigma) - lo) / (hi - lo);
    double got = static_cast<double>(std::lower_bound(times.begin(), times.end(), 1800.0) -
                                     times.begin()) /
                 times.size();
    CHECK(got == Approx(expect_before_1800).margin(0.01));

    // empirical density peak near mu
    const double bin = 600.0;
    std::vector<int> hist(static_cast<std::size_t>(window / bin), 0);
    for (double t : times) hist[std::min(hist.size() - 1, static_cast<std::size_t>(t / bin))]++;
    std::size_t peak = std::max_element(hist.begin(), hist.end()) - hist.begin();
    double peak_center = peak * bin + bin / 2;
    CHECK(peak_center >= mu - sigma / 2);
    CHECK(peak_center <= mu + sigma / 2);
}

TEST_CASE("demand plan assembles counts, allocations and schedules") {
    RoadNetwork net = generate_grid({10, 10, 200.0, 13.9, 1, 15, 8, 4, 3});
    PopulationTable pop = test_support::desk_population();

    SECTION("pre-disaster baseline") {
        ScenarioSpec sc = builtin_scenario(1);
        sc.window = 3600.0;
        Rng rng(1);
        DemandPlan plan = build_demand_plan(pop, sc, net, rng);
        CHECK(plan.counts.n_pv == 300);
        CHECK(plan.counts.n_sav == 0);
        long long scheduled = 0;
        double max_depart = 0.0;
        for (const auto& f : plan.flows) {
            scheduled += f.count;
            REQUIRE(static_cast<long long>(f.departures.size()) == f.count);
            for (double t : f.departures) max_depart = std::max(max_depart, t);
        }
        CHECK(scheduled == 300);
        CHECK(max_depart <= sc.window);
    }

    SECTION("mode bus mirrors the sav plan except the class") {
        ScenarioSpec sav = builtin_scenario(6);
        sav.served_override.reset();
        sav.min_sav_per_category = 1;
        sav.window = 3600.0;
        ScenarioSpec bus = sav;
        bus.mode = Mode::bus;
        Rng r1(5), r2(5);
        DemandPlan plan_sav = build_demand_plan(pop, sav, net, r1);
        DemandPlan plan_bus = build_demand_plan(pop, bus, net, r2);
        REQUIRE(plan_sav.flows.size() == plan_bus.flows.size());
        CHECK(plan_sav.counts.n_sav == plan_bus.counts.n_sav);
        for (std::size_t i = 0; i < plan_sav.flows.size(); ++i) {
            const auto& a = plan_sav.flows[i];
            const auto& b = plan_bus.flows[i];
            CHECK(a.origin == b.origin);
            CHECK(a.exit == b.exit);
            CHECK(a.count == b.count);
            CHECK(a.departures == b.departures);
            if (a.from_bus_stop) {
                CHECK(a.vehicle_class == "sav_pre");
                CHECK(b.vehicle_class == "bus");
            } else {
                CHECK(a.vehicle_class == b.vehicle_class);
            }
        }
    }

    SECTION("post-disaster draws sorted s-curve departures") {
        ScenarioSpec sc = builtin_scenario(7);
        sc.phase = Phase::post;
        sc.window = 21600.0;
        Rng rng(9);
        DemandPlan plan = build_demand_plan(pop, sc, net, rng);
        CHECK(plan.counts.n_sav == 60);
        for (const auto& f : plan.flows) {
            CHECK(std::is_sorted(f.departures.begin(), f.departures.end()));
            for (double t : f.departures) {
                CHECK(t >= 0.0);
                CHECK(t <= sc.window);
            }
        }
    }
}

TEST_CASE("plan conservation holds on randomized scenarios") {
    Rng rng(41);
    RoadNetwork net = generate_grid({6, 6, 150.0, 13.9, 1, 8, 5, 3, 13});
    for (int trial = 0; trial < 200; ++trial) {
        PopulationTable pop;
        pop.vulnerable = {{"a", static_cast<long long>(rng.index(4000))},
                          {"b", static_cast<long long>(rng.index(4000))},
                          {"c", static_cast<long long>(rng.index(1000))}};
        pop.remaining = static_cast<long long>(rng.index(20000));
        pop.total = pop.remaining;
        for (const auto& g : pop.vulnerable) pop.total += g.persons;

        ScenarioSpec sc;
        sc.id = 99;
        sc.fraction = rng.uniform();
        sc.min_sav_per_category = 1 + static_cast<int>(rng.index(4));
        sc.window = 600.0 + rng.uniform(0, 7200);
        sc.phase = rng.uniform() < 0.5 ? Phase::pre : Phase::post;

        DemandPlan plan = build_demand_plan(pop, sc, net, rng,
                                            {sc.window / 4, sc.window / 8});

        long long alloc_sav = std::accumulate(plan.alloc_sav.begin(), plan.alloc_sav.end(), 0ll);
        long long alloc_pv = std::accumulate(plan.alloc_pv.begin(), plan.alloc_pv.end(), 0ll);
        REQUIRE(alloc_sav == plan.counts.n_sav);
        REQUIRE(alloc_pv == plan.counts.n_pv);
        for (std::size_t i = 0; i < plan.od_sav.size(); ++i)
            REQUIRE(std::accumulate(plan.od_sav[i].begin(), plan.od_sav[i].end(), 0ll) ==
                    plan.alloc_sav[i]);
        for (std::size_t i = 0; i < plan.od_pv.size(); ++i)
            REQUIRE(std::accumulate(plan.od_pv[i].begin(), plan.od_pv[i].end(), 0ll) ==
                    plan.alloc_pv[i]);
        long long dispatched = 0;
        for (const auto& f : plan.flows) {
            dispatched += f.count;
            for (double t : f.departures) {
                REQUIRE(t >= 0.0);
                REQUIRE(t <= sc.window);
            }
        }
        REQUIRE(dispatched == plan.counts.n_sav + plan.counts.n_pv);
    }
}

TEST_CASE("window loss forms") {
    MetricsReport report;
    report.summary.complete = true;
    report.summary.mean_congestion_index = 42.0;
    CHECK(window_loss(report, 21600.0, 1.0, 0.0, 21600.0) == Approx(42.0));
    CHECK(window_loss(report, 21600.0, 0.0, 1.0, 21600.0) == Approx(1.0));
    CHECK(window_loss(report, 43200.0, 0.0, 1.0, 21600.0) == Approx(2.0));

    report.summary.complete = false;
    CHECK_THROWS_AS(window_loss(report, 21600.0, 1.0, 1.0, 21600.0), DemandError);
}

TEST_CASE("window loss argmin matches the calculus oracle on a synthetic sweep") {
    // congestion(T) = c / T  =>  loss = alpha*c/T + beta*T/T_ref, minimized at
    // T* = sqrt(alpha*c*T_ref/beta)
    const double c = 4.0e5, alpha = 1.0, beta = 2.0, t_ref = 21600.0;
    const double t_star = std::sqrt(alpha * c * t_ref / beta);
    double best_window = 0.0, best_loss = 1e300;
    for (double w = 10000.0; w <= 140000.0; w += 200.0) {
        MetricsReport report;
        report.summary.complete = true;
        report.summary.mean_congestion_index = c / w;
        double loss = window_loss(report, w, alpha, beta, t_ref);
        if (loss < best_loss) {
            best_loss = loss;
            best_window = w;
        }
    }
    CHECK(best_window == Approx(t_star).margin(200.0));
}
