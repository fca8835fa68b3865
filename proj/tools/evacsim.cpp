#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evacsim/experiment.hpp"
#include "evacsim/metrics.hpp"
#include "evacsim/network.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitIncomplete = 3;

void print_error_record(const std::string& stage, const std::string& message) {
    nlohmann::json j = {{"error", message}, {"stage", stage}};
    std::cerr << j.dump() << "\n";
}

void write_error_file(const std::string& out_dir, const nlohmann::json& record) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    std::ofstream out(std::filesystem::path(out_dir) / "error.json");
    out << record.dump(2) << "\n";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) seeds.push_back(std::stoull(item));
    return seeds;
}

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string seeds;
    std::string scenarios;
    std::string phase;
    std::string mode;
    double window = 0.0;
    int workers = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("-c,--config", flags.config_path, "experiment config file")->required();
    cmd->add_option("-o,--out", flags.out_dir, "output directory (overrides config)");
    cmd->add_option("--seeds", flags.seeds, "comma-separated seed list");
    cmd->add_option("--scenarios", flags.scenarios, "comma-separated scenario ids");
    cmd->add_option("--phase", flags.phase, "pre or post");
    cmd->add_option("--mode", flags.mode, "sav or bus");
    cmd->add_option("--window", flags.window, "evacuation window T_w in seconds");
    cmd->add_option("--workers", flags.workers, "parallel run limit");
}

evacsim::ExperimentConfig load_with_overrides(const CommonFlags& flags) {
    auto cfg = evacsim::load_experiment_config(flags.config_path);
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    if (!flags.seeds.empty()) cfg.seeds = parse_seed_list(flags.seeds);
    if (!flags.scenarios.empty()) {
        cfg.scenarios.clear();
        std::stringstream ss(flags.scenarios);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) cfg.scenarios.push_back(evacsim::builtin_scenario(std::stoi(item)));
    }
    if (!flags.phase.empty())
        cfg.phase = flags.phase == "post" ? evacsim::Phase::post : evacsim::Phase::pre;
    if (!flags.mode.empty())
        cfg.mode = flags.mode == "bus" ? evacsim::Mode::bus : evacsim::Mode::sav;
    if (flags.window > 0.0) cfg.window = flags.window;
    if (flags.workers >= 0) cfg.workers = flags.workers;
    if (cfg.seeds.empty() || cfg.scenarios.empty())
        throw evacsim::ConfigError("need at least one scenario and one seed");
    return cfg;
}

int cmd_net_validate(const std::string& path) {
    evacsim::RoadNetwork net;
    try {
        net = evacsim::load_network_file(path);
    } catch (const std::exception& e) {
        print_error_record("net_validate", e.what());
        return kExitConfig;
    }
    std::cout << "network: " << net.nodes.size() << " nodes, " << net.edges.size()
              << " edges, " << net.start_edges.size() << " start edges, "
              << net.bus_stops.size() << " bus stops, " << net.exit_points.size()
              << " exit points, " << net.closures.size() << " closures\n";
    bool ok = true;
    for (bool with_closures : {false, true}) {
        auto report = evacsim::validate_reachability(net, with_closures);
        std::cout << (with_closures ? "with closures: " : "open network: ");
        if (report.ok()) {
            std::cout << "every origin reaches an exit\n";
        } else {
            ok = false;
            std::cout << report.dead_origins.size() << " origin(s) cannot reach any exit\n";
            for (const auto& o : report.dead_origins)
                std::cout << "  dead origin: "
                          << (o.kind == evacsim::OriginRef::BusStop ? "bus stop " : "start edge ")
                          << net.edges[o.edge].id << "\n";
        }
        if (!with_closures)
            for (const auto& w : report.spacing_warnings)
                std::cout << "  warning: stops " << net.bus_stops[w.stop_a].id << " and "
                          << net.bus_stops[w.stop_b].id << " are " << w.distance
                          << " m apart (< " << evacsim::kMinStopSpacingMeters << ")\n";
    }
    return ok ? kExitOk : kExitRuntime;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"evacuation traffic simulator"};
    app.require_subcommand(1);

    // net validate / net grid
    auto* net_cmd = app.add_subcommand("net", "network utilities");
    net_cmd->require_subcommand(1);
    std::string validate_path;
    auto* validate_cmd = net_cmd->add_subcommand("validate", "load and check a network file");
    validate_cmd->add_option("file", validate_path, "network file")->required();

    evacsim::GridParams grid;
    std::string grid_out;
    auto* grid_cmd = net_cmd->add_subcommand("grid", "generate a synthetic grid network");
    grid_cmd->add_option("--rows", grid.rows, "grid rows")->required();
    grid_cmd->add_option("--cols", grid.cols, "grid cols")->required();
    grid_cmd->add_option("--edge-length", grid.edge_length, "edge length (m)");
    grid_cmd->add_option("--speed-limit", grid.speed_limit, "speed limit (m/s)");
    grid_cmd->add_option("--lanes", grid.lanes, "lanes per edge");
    grid_cmd->add_option("--start-edges", grid.n_start_edges, "number of start edges");
    grid_cmd->add_option("--bus-stops", grid.n_bus_stops, "number of bus stops");
    grid_cmd->add_option("--exits", grid.n_exits, "number of exit points");
    grid_cmd->add_option("--seed", grid.seed, "placement seed");
    grid_cmd->add_option("--out", grid_out, "output file")->required();

    CommonFlags run_flags, sweep_flags, compare_flags;
    auto* run_cmd = app.add_subcommand("run", "run the configured scenario batch");
    add_common(run_cmd, run_flags);
    auto* sweep_cmd = app.add_subcommand("sweep", "select T_w over candidate windows");
    add_common(sweep_cmd, sweep_flags);
    std::string windows_csv;
    sweep_cmd->add_option("--windows", windows_csv, "comma-separated window candidates (s)");
    auto* compare_cmd = app.add_subcommand("compare", "paired SAV-vs-bus comparison");
    add_common(compare_cmd, compare_flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate_cmd->parsed()) return cmd_net_validate(validate_path);

        if (grid_cmd->parsed()) {
            evacsim::RoadNetwork net = evacsim::generate_grid(grid);
            std::ofstream out(grid_out);
            if (!out) throw evacsim::ConfigError("cannot write \"" + grid_out + "\"");
            out << evacsim::save_network(net) << "\n";
            std::cout << "wrote " << grid_out << " (" << net.nodes.size() << " nodes, "
                      << net.edges.size() << " edges)\n";
            return kExitOk;
        }

        if (run_cmd->parsed()) {
            auto cfg = load_with_overrides(run_flags);
            auto result = evacsim::run_experiment(cfg);
            for (const auto& run : result.runs) {
                std::cout << "scenario " << run.scenario_id << " seed " << run.seed << ": ";
                if (!run.ok) {
                    std::cout << "FAILED (" << run.error << ")\n";
                    continue;
                }
                std::cout << (run.complete ? "complete" : "incomplete (gridlock)")
                          << ", makespan " << run.report.summary.makespan << " s, mean tt "
                          << run.report.summary.mean_travel_time << " s\n";
            }
            if (!result.all_ok()) {
                nlohmann::json errors = nlohmann::json::array();
                for (const auto& run : result.runs)
                    if (!run.ok)
                        errors.push_back({{"scenario", run.scenario_id},
                                          {"seed", run.seed},
                                          {"message", run.error}});
                write_error_file(cfg.output_dir, {{"stage", "run"}, {"errors", errors}});
                print_error_record("run", "one or more runs failed");
                return kExitRuntime;
            }
            return result.all_complete() ? kExitOk : kExitIncomplete;
        }

        if (sweep_cmd->parsed()) {
            auto cfg = load_with_overrides(sweep_flags);
            std::vector<double> windows;
            if (!windows_csv.empty()) {
                std::stringstream ss(windows_csv);
                std::string item;
                while (std::getline(ss, item, ','))
                    if (!item.empty()) windows.push_back(std::stod(item));
            }
            auto result = evacsim::sweep_window(cfg, windows);
            for (const auto& c : result.candidates)
                std::cout << "window " << c.window << " s: loss "
                          << (c.ok ? std::to_string(c.loss) : std::string("failed")) << "\n";
            std::cout << "selected window: " << result.best_window << " s\n";
            return kExitOk;
        }

        if (compare_cmd->parsed()) {
            auto cfg = load_with_overrides(compare_flags);
            auto result = evacsim::compare_modes(cfg);
            for (const auto& p : result.pairs) {
                std::cout << "scenario " << p.scenario_id << " seed " << p.seed << ": ";
                if (!p.ok) {
                    std::cout << "FAILED (" << p.error << ")\n";
                    continue;
                }
                std::cout << "sav mean tt " << p.sav.summary.mean_travel_time << " s, bus mean tt "
                          << p.bus.summary.mean_travel_time << " s\n";
            }
            if (!result.all_ok()) {
                print_error_record("compare", "one or more paired runs failed");
                return kExitRuntime;
            }
            return kExitOk;
        }
    } catch (const evacsim::ConfigError& e) {
        print_error_record("config", e.what());
        return kExitConfig;
    } catch (const evacsim::NetworkError& e) {
        print_error_record("config", e.what());
        return kExitConfig;
    } catch (const evacsim::DemandError& e) {
        print_error_record("config", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        print_error_record("runtime", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
