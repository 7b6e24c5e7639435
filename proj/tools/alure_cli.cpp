#include <atomic>
#include <csignal>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "alure/log.hpp"
#include "alure/parallel.hpp"
#include "alure/pipeline.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct PathFlags {
  std::optional<std::string> data_dir, checkpoint, snapshots, graph, candidates, report_dir;

  void apply(alure::PathsConfig& p) const {
    if (data_dir) p.data_dir = *data_dir;
    if (checkpoint) p.checkpoint = *checkpoint;
    if (snapshots) p.snapshot_dir = *snapshots;
    if (graph) p.graph = *graph;
    if (candidates) p.candidates = *candidates;
    if (report_dir) p.report_dir = *report_dir;
  }
};

void print_summary(const alure::StageSummary& s) {
  nlohmann::ordered_json j;
  j["stage"] = s.stage;
  j["outputs"] = s.outputs;
  j["info"] = s.info;
  std::cout << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  alure::init_logging();

  CLI::App app{"Offline user-embedding pipeline: synthetic data, training, snapshots, similarity graph, retrieval "
               "and evaluation."};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool desk_scale = false;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON config file (unknown keys are rejected)");
  app.add_option("--seed", seed, "Seed for every random stage (overrides the config)");
  app.add_option("--threads", threads, "Worker threads, 0 = available cores");
  app.add_flag("--desk-scale", desk_scale, "Preset: 10k users, k1=40, k1'=5, k2=15");
  app.add_flag("--print-config", print_config, "Print the effective config as JSON and exit");

  PathFlags paths;
  auto data_flag = [&](CLI::App* c) { c->add_option("--data-dir", paths.data_dir, "Data directory"); };
  auto ckpt_flag = [&](CLI::App* c) { c->add_option("--checkpoint", paths.checkpoint, "Checkpoint file"); };
  auto snap_flag = [&](CLI::App* c) { c->add_option("--snapshots", paths.snapshots, "Snapshot store directory"); };
  auto graph_flag = [&](CLI::App* c) { c->add_option("--graph", paths.graph, "Similarity graph file"); };
  auto cand_flag = [&](CLI::App* c) { c->add_option("--candidates", paths.candidates, "Candidate file"); };
  auto report_flag = [&](CLI::App* c) { c->add_option("--report-dir", paths.report_dir, "Report directory"); };

  auto* synth = app.add_subcommand("synth", "Generate synthetic users and write the temporal split");
  data_flag(synth);

  auto* train = app.add_subcommand("train", "Train the encoder and write a checkpoint");
  data_flag(train);
  ckpt_flag(train);

  auto* embed = app.add_subcommand("embed", "Embed every user and publish a snapshot");
  data_flag(embed);
  ckpt_flag(embed);
  snap_flag(embed);

  auto* build_graph = app.add_subcommand("build-graph", "Cluster the current snapshot and write the k-NN graph");
  snap_flag(build_graph);
  graph_flag(build_graph);

  auto* retrieve = app.add_subcommand("retrieve", "Generate candidates from the similarity graph");
  data_flag(retrieve);
  graph_flag(retrieve);
  cand_flag(retrieve);

  bool experiment = false;
  std::vector<std::uint64_t> seeds;
  auto* eval = app.add_subcommand("eval", "Compute metrics and write the report");
  data_flag(eval);
  snap_flag(eval);
  graph_flag(eval);
  cand_flag(eval);
  report_flag(eval);
  eval->add_flag("--experiment", experiment, "Run the in-memory multi-seed experiment instead");
  eval->add_option("--seeds", seeds, "Seeds for --experiment (overrides experiment_seeds)");

  std::size_t max_ticks = 0;
  std::optional<alure::Timestamp> simulated_start;
  auto* serve = app.add_subcommand("serve-refresh", "Refresh snapshots periodically until interrupted");
  data_flag(serve);
  ckpt_flag(serve);
  snap_flag(serve);
  serve->add_option("--max-ticks", max_ticks, "Stop after this many scheduler ticks (0 = run until signalled)");
  serve->add_option("--simulated-start", simulated_start,
                    "Drive a simulated clock from this unix time instead of the wall clock");

  auto* version = app.add_subcommand("version", "Print version information");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*version) {
      std::cout << alure::version_string() << std::endl;
      return 0;
    }

    alure::RunConfig rc = config_path.empty() ? alure::RunConfig::defaults() : alure::RunConfig::load(config_path);
    if (desk_scale) rc.apply_desk_scale();
    if (seed) rc.seed = *seed;
    if (threads) rc.threads = *threads;
    if (!seeds.empty()) rc.experiment_seeds = seeds;
    paths.apply(rc.paths);
    rc.apply_seed();
    rc.validate();
    alure::set_thread_count(rc.threads);

    if (print_config) {
      std::cout << rc.to_json().dump(2) << std::endl;
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return 1;
    }

    if (*synth) print_summary(alure::synth_stage(rc));
    if (*train) print_summary(alure::train_stage(rc));
    if (*embed) print_summary(alure::embed_stage(rc));
    if (*build_graph) print_summary(alure::build_graph_stage(rc));
    if (*retrieve) print_summary(alure::retrieve_stage(rc));
    if (*eval) print_summary(experiment ? alure::experiment_stage(rc) : alure::eval_stage(rc));
    if (*serve) {
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto sink = [](const alure::SchedulerEvent& e) {
        nlohmann::ordered_json j;
        j["event"] = std::string(alure::to_string(e.kind));
        j["at"] = e.at;
        if (e.kind == alure::SchedulerEvent::Kind::refresh_succeeded) j["snapshot_version"] = e.snapshot_version;
        if (e.kind == alure::SchedulerEvent::Kind::staleness_alarm) j["staleness"] = e.staleness;
        if (!e.message.empty()) j["message"] = e.message;
        std::cout << j.dump() << std::endl;
      };
      if (simulated_start) {
        alure::SimulatedClock clock(*simulated_start);
        alure::serve_refresh(rc, clock, g_stop, max_ticks, sink);
      } else {
        alure::SystemClock clock;
        alure::serve_refresh(rc, clock, g_stop, max_ticks, sink);
      }
    }
    return 0;
  } catch (const alure::ConfigError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}
