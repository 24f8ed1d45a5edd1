// apex: command-line front end (serve, replay, synth, bench, validate).

#include <csignal>
#include <pthread.h>
#include <thread>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "apex/common.hpp"
#include "apex/harness.hpp"
#include "apex/perception.hpp"
#include "apex/planner.hpp"
#include "apex/remote.hpp"
#include "apex/server.hpp"
#include "apex/session.hpp"
#include "apex/sop.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_atlas_dir() {
  if (const char* env = std::getenv("APEX_SOP_DIR")) return env;
  return "sops";
}

apex::PlannerConfig planner_for(const std::string& explicit_path, const fs::path& atlas_dir) {
  if (!explicit_path.empty()) return apex::load_planner_config(explicit_path);
  const auto guess = atlas_dir.parent_path() / "config" / "planner.json";
  if (fs::exists(guess)) return apex::load_planner_config(guess);
  return {};
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw apex::Error(apex::ErrorCode::InvalidConfig, "cannot write " + path.string());
  out << content;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Procedure step tracking engine"};
  app.require_subcommand(1);

  std::string atlas_dir = default_atlas_dir();
  std::string planner_path;
  app.add_option("--atlas-dir", atlas_dir, "Directory of .sop files")->capture_default_str();
  app.add_option("--planner-config", planner_path, "Planner configuration (JSON)");

  auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
  int port = 8600;
  std::string host = "127.0.0.1";
  std::string backend = "scripted";
  std::string log_dir;
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--backend", backend)->check(CLI::IsMember({"scripted", "remote"}))->capture_default_str();
  serve->add_option("--log-dir", log_dir, "Append each session's events to <dir>/<id>.jsonl");
  serve->add_option("--atlas-dir", atlas_dir, "Directory of .sop files");

  auto* replay = app.add_subcommand("replay", "Replay a recording and score it");
  std::string recording_path, truth_path, config_path, answer = "oracle", out_dir;
  replay->add_option("--recording", recording_path)->required()->check(CLI::ExistingFile);
  replay->add_option("--truth", truth_path)->required()->check(CLI::ExistingFile);
  replay->add_option("--config", config_path)->check(CLI::ExistingFile);
  replay->add_option("--answer", answer, "oracle | refuse | fixed:K")->capture_default_str();
  replay->add_option("--out", out_dir, "Write metrics.json and log.json here");
  replay->add_option("--atlas-dir", atlas_dir, "Directory of .sop files");

  auto* synth = app.add_subcommand("synth", "Generate a noisy synthetic session");
  std::string sop_id;
  int frames_per_step = 10;
  double flip = 0.0;
  std::uint64_t seed = 1;
  std::string synth_out;
  synth->add_option("--sop", sop_id)->required();
  synth->add_option("--frames-per-step", frames_per_step)->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--flip", flip)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--out", synth_out, "Write recording.rec and truth.json here (default: recording to stdout)");
  synth->add_option("--atlas-dir", atlas_dir, "Directory of .sop files");

  auto* bench = app.add_subcommand("bench", "Run a replay suite and check its thresholds");
  std::string suite_dir, bench_json_path;
  bench->add_option("--suite", suite_dir)->required()->check(CLI::ExistingDirectory);
  bench->add_option("--json", bench_json_path, "Also write machine-readable results here");
  bench->add_option("--atlas-dir", atlas_dir, "Directory of .sop files");

  auto* validate = app.add_subcommand("validate", "Check SOP files");
  std::vector<std::string> sop_files;
  validate->add_option("files", sop_files)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) {
      int bad = 0;
      for (const auto& f : sop_files) {
        try {
          const auto doc = apex::load_sop_file(f);
          const auto report = apex::validate_sop(doc);
          if (report.empty()) {
            std::cout << f << ": ok (" << doc.step_count() << " steps)\n";
          } else {
            ++bad;
            for (const auto& v : report) std::cout << f << ": " << v.where << ": " << v.what << "\n";
          }
        } catch (const apex::Error& e) {
          ++bad;
          std::cout << f << ": " << e.what() << "\n";
        }
      }
      return bad == 0 ? 0 : 1;
    }

    const auto atlas = apex::load_atlas_dir(atlas_dir);
    const auto planner = planner_for(planner_path, atlas_dir);

    if (*serve) {
      apex::Engine::Options opts;
      opts.planner = planner;
      opts.log_dir = log_dir;
      apex::ServerOptions server_opts;
      if (backend == "remote") {
        auto remote = std::make_shared<apex::RemoteBackend>(apex::RemoteConfig::from_env());
        server_opts.planner = remote;
        opts.factory = [remote](const apex::SessionConfig&) {
          return apex::Backends{remote, remote, remote};
        };
      }
      // Signals are taken by a waiter thread so stop() runs outside a handler.
      sigset_t stop_signals;
      sigemptyset(&stop_signals);
      sigaddset(&stop_signals, SIGINT);
      sigaddset(&stop_signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

      apex::Engine engine(atlas, opts);
      apex::Server server(engine, server_opts);
      std::thread waiter([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        server.stop();
      });
      std::cerr << "apex: serving " << atlas.ids().size() << " SOPs on " << host << ":" << port << "\n";
      const bool ok = server.listen(host, port);
      if (!ok) std::cerr << "apex: cannot listen on " << host << ":" << port << "\n";
      // Wake the waiter if listen returned on its own.
      pthread_kill(waiter.native_handle(), SIGTERM);
      waiter.join();
      return ok ? 0 : 1;
    }

    if (*replay) {
      const auto rec = apex::load_recording(recording_path, &atlas);
      const auto truth = apex::load_truth(truth_path);
      auto config = apex::replay_config(atlas, rec, planner);
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        apex::FallbackReasoningBackend fallback(planner);
        config = apex::session_config_from_json(json::parse(in), atlas, fallback, planner.defaults);
      }
      const auto result = apex::replay(atlas, rec, truth, config, apex::AnswerPolicy::parse(answer), planner);
      const auto metrics = json(result.metrics).dump(2) + "\n";
      std::cout << metrics;
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file(fs::path(out_dir) / "metrics.json", metrics);
        write_file(fs::path(out_dir) / "log.json", result.log);
      }
      return 0;
    }

    if (*synth) {
      const auto doc = atlas.lookup(sop_id);
      const auto s = apex::synth_session(doc, frames_per_step, flip, seed);
      const auto rec = apex::serialize_recording(s.recording);
      if (synth_out.empty()) {
        std::cout << rec;
      } else {
        fs::create_directories(synth_out);
        write_file(fs::path(synth_out) / "recording.rec", rec);
        write_file(fs::path(synth_out) / "truth.json", json(s.truth).dump(2) + "\n");
        std::cout << "raw top-1 accuracy " << apex::raw_accuracy(s) << "\n";
      }
      return 0;
    }

    if (*bench) {
      const auto cases = apex::load_bench_suite(suite_dir);
      const auto results = apex::run_bench(atlas, cases, planner);
      std::cout << apex::bench_table(results);
      const auto machine = apex::bench_json(results).dump(2) + "\n";
      if (bench_json_path.empty()) {
        std::cout << machine;
      } else {
        write_file(bench_json_path, machine);
      }
      const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
      return ok ? 0 : 1;
    }
  } catch (const apex::Error& e) {
    std::cerr << "apex: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "apex: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
