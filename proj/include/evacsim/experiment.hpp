#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "evacsim/assignment.hpp"
#include "evacsim/demand.hpp"
#include "evacsim/engine.hpp"
#include "evacsim/metrics.hpp"
#include "evacsim/network.hpp"

namespace evacsim {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SolverConfig {
    LinkCostParams bpr;
    double gap_tol = 1e-3;
    int max_iter = 500;
};

struct LossConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double t_ref = 21600.0;
};

struct ExtraClosure {
    std::string edge_id;
    double start_time = 0.0;
    double end_time = std::numeric_limits<double>::infinity();
};

struct ExperimentConfig {
    std::string network_path;
    PopulationTable population = county_population();
    std::vector<ScenarioSpec> scenarios{builtin_scenario(1)};
    Phase phase = Phase::pre;
    Mode mode = Mode::sav;
    std::vector<std::uint64_t> seeds{1};
    double window = 21600.0;
    std::vector<double> windows; // sweep candidates
    SCurveParams scurve;
    double interval_length = 60.0;
    int min_sav_per_category = 100;
    double max_sim_time = 0.0; // 0 = 4 x window
    std::string output_dir;
    EngineParams engine;
    SolverConfig solver;
    LossConfig loss;
    ClassRegistry classes = default_classes();
    std::vector<ExtraClosure> extra_closures;
    bool dump_ue = false;
    int workers = 0; // 0 = auto

    double sim_horizon() const { return max_sim_time > 0.0 ? max_sim_time : 4.0 * window; }
};

namespace detail {

inline void apply_class_overrides(VehicleClassSpec& spec, const nlohmann::json& j) {
    if (j.contains("accel")) spec.accel = j["accel"].get<double>();
    if (j.contains("decel")) spec.decel = j["decel"].get<double>();
    if (j.contains("emergency_decel")) spec.emergency_decel = j["emergency_decel"].get<double>();
    if (j.contains("sigma")) spec.sigma = j["sigma"].get<double>();
    if (j.contains("min_gap")) spec.min_gap = j["min_gap"].get<double>();
    if (j.contains("lc_assertive")) spec.lc_assertive = j["lc_assertive"].get<double>();
    if (j.contains("length")) spec.length = j["length"].get<double>();
    if (j.contains("width")) spec.width = j["width"].get<double>();
    if (j.contains("height")) spec.height = j["height"].get<double>();
    if (j.contains("capacity")) spec.capacity = j["capacity"].get<int>();
    if (j.contains("tau")) spec.tau = j["tau"].get<double>();
    if (j.contains("speed_factor_mean")) spec.speed_factor_mean = j["speed_factor_mean"].get<double>();
    if (j.contains("speed_factor_sd")) spec.speed_factor_sd = j["speed_factor_sd"].get<double>();
    if (j.contains("reroute_period")) {
        if (j["reroute_period"].is_null()) spec.reroute_period.reset();
        else spec.reroute_period = j["reroute_period"].get<double>();
    }
    if (j.contains("reroute_pre_period")) spec.reroute_pre_period = j["reroute_pre_period"].get<double>();
    if (j.contains("reroute_threshold")) spec.reroute_threshold = j["reroute_threshold"].get<double>();
    if (j.contains("speed_factor_cap")) {
        if (j["speed_factor_cap"].is_null()) spec.speed_factor_cap.reset();
        else spec.speed_factor_cap = j["speed_factor_cap"].get<double>();
    }
    spec.validate();
}

} // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j,
                                                const std::filesystem::path& base_dir = {}) {
    ExperimentConfig cfg;
    try {
        if (!j.contains("network")) throw ConfigError("config: missing \"network\"");
        std::filesystem::path p = j["network"].get<std::string>();
        cfg.network_path = (p.is_absolute() ? p : base_dir / p).string();

        if (j.contains("population")) {
            const auto& jp = j["population"];
            PopulationTable pop;
            pop.total = jp.at("total").get<long long>();
            for (const auto& g : jp.at("subgroups"))
                pop.vulnerable.push_back(
                    {g.at("name").get<std::string>(), g.at("persons").get<long long>()});
            if (jp.contains("remaining")) pop.remaining = jp["remaining"].get<long long>();
            else {
                long long s = 0;
                for (const auto& g : pop.vulnerable) s += g.persons;
                pop.remaining = pop.total - s;
            }
            pop.validate();
            cfg.population = pop;
        }
        if (j.contains("scenarios")) {
            cfg.scenarios.clear();
            for (const auto& s : j["scenarios"]) {
                if (s.is_number_integer()) {
                    cfg.scenarios.push_back(builtin_scenario(s.get<int>()));
                } else if (s.is_object()) {
                    // custom scenario: a served fraction (or all_sav) instead
                    // of a published table row
                    ScenarioSpec sc;
                    sc.id = s.value("id", 100 + static_cast<int>(cfg.scenarios.size()));
                    sc.all_sav = s.value("all_sav", false);
                    sc.fraction = s.value("fraction", sc.all_sav ? 1.0 : 0.0);
                    sc.label = s.value("label", "custom_" + std::to_string(sc.id));
                    cfg.scenarios.push_back(std::move(sc));
                } else {
                    throw ConfigError("config: scenarios entries must be ids or objects");
                }
            }
            if (cfg.scenarios.empty()) throw ConfigError("config: empty scenario list");
        }
        if (j.contains("phase")) {
            std::string s = j["phase"].get<std::string>();
            if (s == "pre") cfg.phase = Phase::pre;
            else if (s == "post") cfg.phase = Phase::post;
            else throw ConfigError("config: phase must be \"pre\" or \"post\"");
        }
        if (j.contains("mode")) {
            std::string s = j["mode"].get<std::string>();
            if (s == "sav") cfg.mode = Mode::sav;
            else if (s == "bus") cfg.mode = Mode::bus;
            else throw ConfigError("config: mode must be \"sav\" or \"bus\"");
        }
        if (j.contains("seeds")) {
            cfg.seeds.clear();
            for (const auto& s : j["seeds"]) cfg.seeds.push_back(s.get<std::uint64_t>());
            if (cfg.seeds.empty()) throw ConfigError("config: empty seed list");
        }
        if (j.contains("window")) cfg.window = j["window"].get<double>();
        if (j.contains("windows"))
            for (const auto& w : j["windows"]) cfg.windows.push_back(w.get<double>());
        if (j.contains("scurve")) {
            cfg.scurve.mu = j["scurve"].value("mu", cfg.scurve.mu);
            cfg.scurve.sigma = j["scurve"].value("sigma", cfg.scurve.sigma);
        }
        if (j.contains("interval_length")) cfg.interval_length = j["interval_length"].get<double>();
        if (j.contains("min_sav_per_category"))
            cfg.min_sav_per_category = j["min_sav_per_category"].get<int>();
        if (j.contains("max_sim_time")) cfg.max_sim_time = j["max_sim_time"].get<double>();
        if (j.contains("output")) {
            std::filesystem::path out = j["output"].get<std::string>();
            cfg.output_dir = (out.is_absolute() ? out : base_dir / out).string();
        }
        if (j.contains("engine")) {
            const auto& je = j["engine"];
            cfg.engine.dt = je.value("dt", cfg.engine.dt);
            cfg.engine.teleport_threshold =
                je.value("teleport_threshold", cfg.engine.teleport_threshold);
            cfg.engine.kappa = je.value("kappa", cfg.engine.kappa);
            cfg.engine.stats_window = je.value("stats_window", cfg.engine.stats_window);
        }
        if (j.contains("solver")) {
            const auto& js = j["solver"];
            cfg.solver.bpr.alpha = js.value("alpha", cfg.solver.bpr.alpha);
            cfg.solver.bpr.beta = js.value("beta", cfg.solver.bpr.beta);
            cfg.solver.gap_tol = js.value("gap_tol", cfg.solver.gap_tol);
            cfg.solver.max_iter = js.value("max_iter", cfg.solver.max_iter);
        }
        if (j.contains("loss")) {
            const auto& jl = j["loss"];
            cfg.loss.alpha = jl.value("alpha", cfg.loss.alpha);
            cfg.loss.beta = jl.value("beta", cfg.loss.beta);
            cfg.loss.t_ref = jl.value("t_ref", cfg.loss.t_ref);
        }
        if (j.contains("classes")) {
            for (auto it = j["classes"].begin(); it != j["classes"].end(); ++it) {
                auto found = cfg.classes.find(it.key());
                if (found == cfg.classes.end())
                    throw ConfigError("config: unknown vehicle class \"" + it.key() + "\"");
                detail::apply_class_overrides(found->second, it.value());
            }
        }
        if (j.contains("closures")) {
            for (const auto& jc : j["closures"]) {
                ExtraClosure c;
                c.edge_id = jc.at("edge_id").get<std::string>();
                c.start_time = jc.at("start_time").get<double>();
                if (jc.contains("end_time") && !jc["end_time"].is_null())
                    c.end_time = jc["end_time"].get<double>();
                cfg.extra_closures.push_back(std::move(c));
            }
        }
        if (j.contains("dump_ue")) cfg.dump_ue = j["dump_ue"].get<bool>();
        if (j.contains("workers")) cfg.workers = j["workers"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!(cfg.window > 0.0)) throw ConfigError("config: window must be > 0");
    if (!(cfg.interval_length > 0.0)) throw ConfigError("config: interval_length must be > 0");
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file \"" + path + "\"");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    return parse_experiment_config(j, std::filesystem::path(path).parent_path());
}

inline RoadNetwork load_network_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open network file \"" + path + "\"");
    std::stringstream buf;
    buf << in.rdbuf();
    return load_network(buf.str());
}

inline RoadNetwork load_configured_network(const ExperimentConfig& cfg) {
    RoadNetwork net = load_network_file(cfg.network_path);
    for (const auto& c : cfg.extra_closures) {
        int e = net.edge_index(c.edge_id);
        if (e < 0)
            throw ConfigError("closure references unknown edge \"" + c.edge_id + "\"");
        net.closures.push_back({e, c.start_time, c.end_time});
    }
    net.finalize();
    return net;
}

// Scenario spec for one run: published table rows apply only to the county
// population; custom populations fall back to the fraction rule.
inline ScenarioSpec make_scenario(const ExperimentConfig& cfg, const ScenarioSpec& proto) {
    ScenarioSpec sc = proto;
    if (!(cfg.population == county_population())) sc.served_override.reset();
    sc.mode = cfg.mode;
    sc.phase = cfg.phase;
    sc.window = cfg.window;
    sc.min_sav_per_category = cfg.min_sav_per_category;
    return sc;
}

// Initial routes: free-flow shortest paths for shuttles/buses (their route
// evolves online), equilibrium-sampled fixed paths for passenger cars.
inline RoutePlan build_route_plan(const RoadNetwork& net, const DemandPlan& plan,
                                  const SolverConfig& solver, Rng& rng,
                                  std::string* ue_dump = nullptr) {
    RoutePlan routes;
    routes.by_flow.resize(plan.flows.size());

    std::vector<double> free_flow;
    free_flow.reserve(net.edges.size());
    for (const auto& e : net.edges) free_flow.push_back(e.free_flow_time());

    // passenger-car OD list in flow order
    std::vector<ODPair> od;
    std::vector<long long> od_count;
    std::vector<std::size_t> od_flow;
    const double hours = plan.scenario.window / 3600.0;
    std::map<std::pair<int, int>, PathResult> sp_cache;

    for (std::size_t f = 0; f < plan.flows.size(); ++f) {
        const DispatchFlow& flow = plan.flows[f];
        if (flow.from_bus_stop) {
            int origin = net.bus_stops[flow.origin].edge;
            int dest = net.exit_points[flow.exit];
            auto key = std::make_pair(origin, dest);
            auto it = sp_cache.find(key);
            if (it == sp_cache.end()) {
                PathResult sp = shortest_path(net, free_flow, origin, dest);
                if (!sp.found)
                    throw std::runtime_error("no route from bus stop edge " +
                                             net.edges[origin].id + " to exit " +
                                             net.edges[dest].id);
                it = sp_cache.emplace(key, std::move(sp)).first;
            }
            routes.by_flow[f] = {it->second.edges};
        } else {
            od.push_back({net.start_edges[flow.origin], net.exit_points[flow.exit],
                          flow.count / hours});
            od_count.push_back(flow.count);
            od_flow.push_back(f);
        }
    }

    if (!od.empty()) {
        UESolution sol = solve_ue(net, od, solver.bpr, solver.max_iter, solver.gap_tol);
        auto sampled = sample_routes(sol, od_count, rng);
        for (std::size_t c = 0; c < od.size(); ++c)
            routes.by_flow[od_flow[c]] = std::move(sampled[c]);
        if (ue_dump) *ue_dump = dump_ue_solution(sol, net, od);
    }
    return routes;
}

struct RunResult {
    int scenario_id = 0;
    std::string scenario_label;
    Mode mode = Mode::sav;
    std::uint64_t seed = 0;
    bool ok = false;
    bool complete = false;
    std::string error;
    MetricsReport report;
};

struct RunArtifacts {
    DemandPlan plan;
    SimTrace trace;
    MetricsReport report;
};

// One (scenario, seed) simulation: plan -> routes -> microsimulation ->
// metrics. Never writes files; callers persist what they need.
inline RunArtifacts run_single(const RoadNetwork& net, const PopulationTable& pop,
                               const ScenarioSpec& sc, const ExperimentConfig& cfg,
                               std::uint64_t seed, std::string* ue_dump = nullptr) {
    RunArtifacts art;
    Rng plan_rng(seed);
    art.plan = build_demand_plan(pop, sc, net, plan_rng, cfg.scurve);

    Rng route_rng(seed ^ 0x9e3779b97f4a7c15ull);
    RoutePlan routes = build_route_plan(net, art.plan, cfg.solver, route_rng, ue_dump);

    EngineParams ep = cfg.engine;
    ep.stats_period = sc.phase == Phase::pre ? 60.0 : 180.0;
    World world(net, art.plan, cfg.classes, routes, ep, seed);
    art.trace = world.run_to_completion(cfg.sim_horizon());
    auto series = interval_metrics(art.trace, cfg.interval_length);
    art.report = summarize(series, art.trace, cfg.solver.bpr);
    return art;
}

inline void write_run_outputs(const std::filesystem::path& dir, const RoadNetwork& net,
                              const RunArtifacts& art, const std::string& ue_dump = {}) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "events.csv");
        write_events_csv(art.trace, net, out);
    }
    {
        std::ofstream out(dir / "vehicles.csv");
        write_vehicles_csv(art.trace, out);
    }
    {
        std::ofstream out(dir / "intervals.csv");
        write_intervals_csv(art.report.series, out);
    }
    {
        std::ofstream out(dir / "router_diag.csv");
        write_router_diag_csv(art.trace, net, out);
    }
    {
        std::ofstream out(dir / "summary.json");
        out << summary_to_json(art.report).dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "plan.json");
        out << plan_to_json(art.plan).dump(2) << "\n";
    }
    if (!ue_dump.empty()) {
        std::ofstream out(dir / "ue_solution.txt");
        out << ue_dump;
    }
}

namespace detail {

inline int worker_count(const ExperimentConfig& cfg, std::size_t jobs) {
    int n = cfg.workers;
    if (n <= 0) {
        if (const char* env = std::getenv("EVACSIM_WORKERS")) n = std::atoi(env);
    }
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    return std::min<int>(n, static_cast<int>(jobs));
}

template <typename Job, typename Fn>
void run_pool(const ExperimentConfig& cfg, const std::vector<Job>& jobs, Fn&& fn) {
    const int workers = worker_count(cfg, jobs.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
                fn(i);
        });
    for (auto& th : pool) th.join();
}

inline MetricsReport mean_report(const std::vector<const MetricsReport*>& reports) {
    MetricsReport mean;
    if (reports.empty()) return mean;
    auto& s = mean.summary;
    for (const auto* r : reports) {
        const auto& v = r->summary;
        s.vehicles += v.vehicles;
        s.arrived += v.arrived;
        s.total_travel_time += v.total_travel_time;
        s.mean_travel_time += v.mean_travel_time;
        s.normalized_travel_time += v.normalized_travel_time;
        s.avg_distance += v.avg_distance;
        s.avg_speed += v.avg_speed;
        s.mean_density += v.mean_density;
        s.mean_congestion_index += v.mean_congestion_index;
        s.mean_travel_efficiency += v.mean_travel_efficiency;
        s.traffic_volume += v.traffic_volume;
        s.makespan += v.makespan;
        s.teleports += v.teleports;
        s.reroutes += v.reroutes;
        s.beckmann += v.beckmann;
    }
    const double n = static_cast<double>(reports.size());
    s.total_travel_time /= n;
    s.mean_travel_time /= n;
    s.normalized_travel_time /= n;
    s.avg_distance /= n;
    s.avg_speed /= n;
    s.mean_density /= n;
    s.mean_congestion_index /= n;
    s.mean_travel_efficiency /= n;
    s.traffic_volume /= n;
    s.makespan /= n;
    s.beckmann /= n;
    s.complete = true;
    for (const auto* r : reports) s.complete = s.complete && r->summary.complete;
    return mean;
}

} // namespace detail

struct ScenarioAggregate {
    int id = 0;
    std::string label;
    MetricsReport mean;
    std::vector<ComparisonRow> delta;     // vs the batch's first scenario
    std::map<std::string, double> sd;     // across seeds, per delta metric
};

struct ExperimentResult {
    std::vector<RunResult> runs;
    std::vector<ScenarioAggregate> scenarios;

    bool all_ok() const {
        for (const auto& r : runs)
            if (!r.ok) return false;
        return true;
    }
    bool all_complete() const {
        for (const auto& r : runs)
            if (!r.complete) return false;
        return true;
    }
};

// Batch execution: every (scenario, seed) pair, metrics per run, and a
// baseline-relative percentage table with the first scenario as baseline.
// Multi-seed batches report mean and across-seed standard deviation.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    RoadNetwork net = load_configured_network(cfg);
    ExperimentResult result;

    struct Job {
        std::size_t scenario_pos;
        ScenarioSpec sc;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t p = 0; p < cfg.scenarios.size(); ++p) {
        ScenarioSpec sc = make_scenario(cfg, cfg.scenarios[p]);
        for (auto seed : cfg.seeds) jobs.push_back({p, sc, seed});
    }
    result.runs.resize(jobs.size());

    detail::run_pool(cfg, jobs, [&](std::size_t i) {
        const Job& job = jobs[i];
        RunResult& run = result.runs[i];
        run.scenario_id = job.sc.id;
        run.scenario_label = job.sc.label;
        run.mode = job.sc.mode;
        run.seed = job.seed;
        try {
            std::string ue_dump;
            RunArtifacts art = run_single(net, cfg.population, job.sc, cfg, job.seed,
                                          cfg.dump_ue ? &ue_dump : nullptr);
            run.report = std::move(art.report);
            run.complete = run.report.summary.complete;
            run.ok = true;
            if (!cfg.output_dir.empty()) {
                std::filesystem::path dir = std::filesystem::path(cfg.output_dir) /
                                            ("scenario_" + std::to_string(job.sc.id)) /
                                            ("seed_" + std::to_string(job.seed));
                write_run_outputs(dir, net, art, ue_dump);
            }
        } catch (const std::exception& e) {
            run.ok = false;
            run.error = e.what();
        }
    });

    // per-scenario aggregate, baseline = first configured scenario
    std::vector<const MetricsReport*> baseline_reports;
    for (std::size_t p = 0; p < cfg.scenarios.size(); ++p) {
        ScenarioAggregate agg;
        agg.id = cfg.scenarios[p].id;
        std::vector<const MetricsReport*> reports;
        for (std::size_t i = 0; i < jobs.size(); ++i)
            if (jobs[i].scenario_pos == p && result.runs[i].ok) {
                reports.push_back(&result.runs[i].report);
                agg.label = result.runs[i].scenario_label;
            }
        agg.mean = detail::mean_report(reports);
        if (baseline_reports.empty()) baseline_reports = reports;
        MetricsReport baseline_mean = detail::mean_report(baseline_reports);
        agg.delta = compare(agg.mean, baseline_mean);
        for (const auto& row : agg.delta) {
            double sum2 = 0.0;
            for (const auto* r : reports) {
                double v = 0.0;
                for (const auto& seed_row : compare(*r, baseline_mean))
                    if (seed_row.metric == row.metric) v = seed_row.value;
                sum2 += (v - row.value) * (v - row.value);
            }
            agg.sd[row.metric] = reports.empty() ? 0.0 : std::sqrt(sum2 / reports.size());
        }
        result.scenarios.push_back(std::move(agg));
    }

    if (!cfg.output_dir.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        std::ofstream out(std::filesystem::path(cfg.output_dir) / "comparison.csv");
        out << "scenario,metric,mean,sd,baseline,delta_pct\n";
        for (const auto& agg : result.scenarios)
            for (const auto& row : agg.delta) {
                out << agg.id << "," << row.metric << "," << row.value << ","
                    << agg.sd.at(row.metric) << "," << row.baseline << ",";
                if (row.delta_pct) out << *row.delta_pct;
                else out << "na";
                out << "\n";
            }
    }
    return result;
}

struct SweepCandidate {
    double window = 0.0;
    double loss = std::numeric_limits<double>::infinity();
    bool ok = false;
};

struct SweepResult {
    std::vector<SweepCandidate> candidates;
    double best_window = 0.0;
};

// Evacuation-window sweep: run the first configured scenario per candidate
// window, score with the congestion/length loss, return the argmin
// (ties to the smaller window). Failed candidates score infinite loss.
inline SweepResult sweep_window(const ExperimentConfig& cfg, std::vector<double> windows) {
    if (windows.empty()) windows = cfg.windows;
    if (windows.size() < 2)
        throw ConfigError("sweep: need at least two candidate windows");
    RoadNetwork net = load_configured_network(cfg);

    SweepResult result;
    result.candidates.resize(windows.size());
    detail::run_pool(cfg, windows, [&](std::size_t i) {
        SweepCandidate& cand = result.candidates[i];
        cand.window = windows[i];
        try {
            ExperimentConfig local = cfg;
            local.window = windows[i];
            ScenarioSpec sc = make_scenario(local, cfg.scenarios.front());
            RunArtifacts art = run_single(net, cfg.population, sc, local, cfg.seeds.front());
            cand.loss = window_loss(art.report, windows[i], cfg.loss.alpha, cfg.loss.beta,
                                    cfg.loss.t_ref);
            cand.ok = true;
        } catch (const std::exception&) {
            cand.ok = false;
        }
    });

    const SweepCandidate* best = nullptr;
    for (const auto& c : result.candidates) {
        if (!best || c.loss < best->loss ||
            (c.loss == best->loss && c.window < best->window))
            best = &c;
    }
    result.best_window = best ? best->window : 0.0;

    if (!cfg.output_dir.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        std::ofstream out(std::filesystem::path(cfg.output_dir) / "sweep.csv");
        out << "window,loss,ok\n";
        for (const auto& c : result.candidates)
            out << c.window << "," << c.loss << "," << (c.ok ? 1 : 0) << "\n";
    }
    return result;
}

struct ModePairResult {
    int scenario_id = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricsReport sav;
    MetricsReport bus;
};

struct ModeComparisonResult {
    std::vector<ModePairResult> pairs;

    bool all_ok() const {
        for (const auto& p : pairs)
            if (!p.ok) return false;
        return true;
    }
};

// Shuttle-vs-bus what-if: each configured scenario runs twice per seed with
// identical plans and networks; only the vehicle class (and with it the
// rerouting device) differs.
inline ModeComparisonResult compare_modes(const ExperimentConfig& cfg) {
    RoadNetwork net = load_configured_network(cfg);
    struct Job {
        ScenarioSpec proto;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& proto : cfg.scenarios)
        for (auto seed : cfg.seeds) jobs.push_back({proto, seed});

    ModeComparisonResult result;
    result.pairs.resize(jobs.size());
    detail::run_pool(cfg, jobs, [&](std::size_t i) {
        ModePairResult& pair = result.pairs[i];
        pair.scenario_id = jobs[i].proto.id;
        pair.seed = jobs[i].seed;
        try {
            for (Mode mode : {Mode::sav, Mode::bus}) {
                ExperimentConfig local = cfg;
                local.mode = mode;
                ScenarioSpec sc = make_scenario(local, jobs[i].proto);
                RunArtifacts art = run_single(net, cfg.population, sc, local, jobs[i].seed);
                if (!cfg.output_dir.empty()) {
                    std::filesystem::path dir =
                        std::filesystem::path(cfg.output_dir) /
                        ("scenario_" + std::to_string(jobs[i].proto.id)) /
                        ("seed_" + std::to_string(jobs[i].seed)) /
                        (mode == Mode::sav ? "sav" : "bus");
                    write_run_outputs(dir, net, art);
                }
                (mode == Mode::sav ? pair.sav : pair.bus) = std::move(art.report);
            }
            pair.ok = true;
        } catch (const std::exception& e) {
            pair.ok = false;
            pair.error = e.what();
        }
    });

    if (!cfg.output_dir.empty()) {
        std::filesystem::create_directories(cfg.output_dir);
        std::ofstream out(std::filesystem::path(cfg.output_dir) / "modes.csv");
        out << "scenario,seed,metric,sav,bus\n";
        for (const auto& p : result.pairs) {
            if (!p.ok) continue;
            auto emit = [&](const std::string& name, double a, double b) {
                out << p.scenario_id << "," << p.seed << "," << name << "," << a << "," << b
                    << "\n";
            };
            emit("mean_travel_time", p.sav.summary.mean_travel_time,
                 p.bus.summary.mean_travel_time);
            emit("total_travel_time", p.sav.summary.total_travel_time,
                 p.bus.summary.total_travel_time);
            emit("average_distance", p.sav.summary.avg_distance, p.bus.summary.avg_distance);
            emit("traffic_volume", p.sav.summary.traffic_volume, p.bus.summary.traffic_volume);
            emit("average_speed", p.sav.summary.avg_speed, p.bus.summary.avg_speed);
            emit("congestion_index", p.sav.summary.mean_congestion_index,
                 p.bus.summary.mean_congestion_index);
        }
    }
    return result;
}

} // namespace evacsim
