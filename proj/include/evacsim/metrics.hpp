#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacsim/assignment.hpp"
#include "evacsim/engine.hpp"

namespace evacsim {

struct IntervalMetrics {
    double t = 0.0;        // interval start
    double volume = 0.0;   // mean vehicles present (traffic volume)
    double speed = 0.0;    // mean speed over moving vehicles, m/s
    double mean_tt = 0.0;  // mean travel time so far over active vehicles, s
    double distance = 0.0; // mean distance traveled, m
    double density = 0.0;  // vehicles per meter of lane
    double congestion_index = 0.0; // mean_tt / speed, 0 with no vehicles
    double efficiency = 0.0;       // speed / distance
};

struct SummaryMetrics {
    long long vehicles = 0;
    long long arrived = 0;
    double total_travel_time = 0.0;      // sum over arrived vehicles, s
    double mean_travel_time = 0.0;       // s
    double normalized_travel_time = 0.0; // emitted equal to the mean
    double avg_distance = 0.0;           // m, per arrived vehicle
    double avg_speed = 0.0;              // time-average of interval speeds
    double mean_density = 0.0;
    double mean_congestion_index = 0.0;
    double mean_travel_efficiency = 0.0;
    double traffic_volume = 0.0; // time-average vehicles present
    double makespan = 0.0;
    long long teleports = 0;
    long long reroutes = 0;
    double beckmann = 0.0; // combined-objective diagnostic on realized flows
    bool complete = false;
};

struct MetricsReport {
    std::vector<IntervalMetrics> series;
    SummaryMetrics summary;
};

// Aggregates the per-step samples into fixed intervals covering
// [0, makespan]. Ratio metrics are literally the ratios of the stored
// fields, so the defining identities hold by construction.
inline std::vector<IntervalMetrics> interval_metrics(const SimTrace& trace,
                                                     double interval_length) {
    std::vector<IntervalMetrics> series;
    if (trace.steps.empty() || !(interval_length > 0.0)) return series;
    double horizon = std::max(trace.makespan, trace.steps.back().t);
    std::size_t n = static_cast<std::size_t>(std::floor(horizon / interval_length)) + 1;

    struct Acc {
        long steps = 0;
        long long present = 0;
        long long moving = 0;
        double speed = 0.0, tt = 0.0, dist = 0.0;
    };
    std::vector<Acc> acc(n);
    for (const auto& s : trace.steps) {
        std::size_t k = static_cast<std::size_t>(std::floor(s.t / interval_length));
        if (k >= n) continue;
        Acc& a = acc[k];
        a.steps += 1;
        a.present += s.present;
        a.moving += s.moving;
        a.speed += s.speed_sum;
        a.tt += s.tt_sum;
        a.dist += s.dist_sum;
    }
    series.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const Acc& a = acc[k];
        IntervalMetrics m;
        m.t = k * interval_length;
        if (a.steps > 0) m.volume = static_cast<double>(a.present) / a.steps;
        m.speed = a.moving > 0 ? a.speed / a.moving : 0.0;
        m.mean_tt = a.present > 0 ? a.tt / a.present : 0.0;
        m.distance = a.present > 0 ? a.dist / a.present : 0.0;
        m.density = trace.total_lane_length > 0 ? m.volume / trace.total_lane_length : 0.0;
        m.congestion_index = m.speed > 0.0 ? m.mean_tt / m.speed : 0.0;
        m.efficiency = m.distance > 0.0 ? m.speed / m.distance : 0.0;
        series.push_back(m);
    }
    return series;
}

// Realized-flow value of the combined assignment objective: the Beckmann
// integral of the BPR latency at each class's time-averaged flow. Reported
// as a diagnostic, never optimized.
inline double beckmann_diagnostic(const SimTrace& trace, const LinkCostParams& params) {
    double hours = trace.end_time / 3600.0;
    if (!(hours > 0.0)) return 0.0;
    double value = 0.0;
    for (std::size_t e = 0; e < trace.edge_free_flow.size(); ++e) {
        for (double count : {static_cast<double>(trace.traversals_pv[e]),
                             static_cast<double>(trace.traversals_sav[e])}) {
            if (count <= 0.0) continue;
            value += bpr_integral(trace.edge_free_flow[e], count / hours,
                                  trace.edge_capacity[e], params.alpha, params.beta);
        }
    }
    return value;
}

inline MetricsReport summarize(const std::vector<IntervalMetrics>& series,
                               const SimTrace& trace, const LinkCostParams& bpr = {}) {
    MetricsReport report;
    report.series = series;
    SummaryMetrics& s = report.summary;
    s.vehicles = static_cast<long long>(trace.vehicles.size());
    s.makespan = trace.makespan;
    s.teleports = trace.total_teleports;
    s.reroutes = trace.total_reroutes;
    s.complete = trace.complete;

    for (const auto& v : trace.vehicles) {
        if (!v.arrived) continue;
        s.arrived += 1;
        s.total_travel_time += v.travel_time();
        s.avg_distance += v.distance;
    }
    if (s.arrived > 0) {
        s.mean_travel_time = s.total_travel_time / s.arrived;
        s.avg_distance /= s.arrived;
    }
    s.normalized_travel_time = s.mean_travel_time;

    long occupied = 0;
    for (const auto& m : series) {
        s.traffic_volume += m.volume;
        s.mean_density += m.density;
        if (m.volume > 0.0) {
            occupied += 1;
            s.avg_speed += m.speed;
            s.mean_congestion_index += m.congestion_index;
            s.mean_travel_efficiency += m.efficiency;
        }
    }
    if (!series.empty()) {
        s.traffic_volume /= series.size();
        s.mean_density /= series.size();
    }
    if (occupied > 0) {
        s.avg_speed /= occupied;
        s.mean_congestion_index /= occupied;
        s.mean_travel_efficiency /= occupied;
    }
    s.beckmann = beckmann_diagnostic(trace, bpr);
    return report;
}

struct ComparisonRow {
    std::string metric;
    double value = 0.0;
    double baseline = 0.0;
    std::optional<double> delta_pct; // absent when the baseline is zero
};

// Percentage change against the baseline report, in the published table's
// row order. Negative means reduction.
inline std::vector<ComparisonRow> compare(const MetricsReport& report,
                                          const MetricsReport& baseline) {
    auto row = [](const std::string& name, double v, double b) {
        ComparisonRow r{name, v, b, std::nullopt};
        if (b != 0.0) r.delta_pct = 100.0 * (v - b) / b;
        return r;
    };
    const SummaryMetrics& a = report.summary;
    const SummaryMetrics& b = baseline.summary;
    return {
        row("total_travel_time", a.total_travel_time, b.total_travel_time),
        row("average_distance", a.avg_distance, b.avg_distance),
        row("mean_travel_time", a.mean_travel_time, b.mean_travel_time),
        row("travel_density", a.mean_density, b.mean_density),
        row("congestion_index", a.mean_congestion_index, b.mean_congestion_index),
        row("normalized_travel_time", a.normalized_travel_time, b.normalized_travel_time),
        row("average_speed", a.avg_speed, b.avg_speed),
        row("traffic_volume", a.traffic_volume, b.traffic_volume),
        row("travel_efficiency", a.mean_travel_efficiency, b.mean_travel_efficiency),
    };
}

inline void write_intervals_csv(const std::vector<IntervalMetrics>& series, std::ostream& out) {
    out << "t,volume,speed,mean_tt,distance,density,congestion_index,efficiency\n";
    for (const auto& m : series)
        out << m.t << "," << m.volume << "," << m.speed << "," << m.mean_tt << ","
            << m.distance << "," << m.density << "," << m.congestion_index << ","
            << m.efficiency << "\n";
}

inline nlohmann::json summary_to_json(const MetricsReport& report) {
    const SummaryMetrics& s = report.summary;
    return {{"vehicles", s.vehicles},
            {"arrived", s.arrived},
            {"total_travel_time", s.total_travel_time},
            {"mean_travel_time", s.mean_travel_time},
            {"normalized_travel_time", s.normalized_travel_time},
            {"average_distance", s.avg_distance},
            {"average_speed", s.avg_speed},
            {"mean_density", s.mean_density},
            {"mean_congestion_index", s.mean_congestion_index},
            {"mean_travel_efficiency", s.mean_travel_efficiency},
            {"traffic_volume", s.traffic_volume},
            {"makespan", s.makespan},
            {"teleports", s.teleports},
            {"reroutes", s.reroutes},
            {"beckmann", s.beckmann},
            {"complete", s.complete}};
}

} // namespace evacsim
