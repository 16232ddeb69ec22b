// Command-line pipeline driver: each stage is a subcommand sharing one
// configuration file; stages skip themselves when their manifest is
// up to date.

#include <cstdio>
#include <functional>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "intentrl/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitUpstream = 3;
constexpr int kExitRuntime = 4;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"intention-space reward aggregation pipeline"};
  app.require_subcommand(0, 1);

  std::string config_path;
  std::string out_dir;
  std::string embedder_kind;
  uint64_t seed = 0;
  double gamma = -1.0, epsilon = -1.0;
  int tau = -1, k_max = -1;
  bool has_seed = false;

  app.add_option("--config", config_path, "configuration file (JSON)");
  app.add_option("--out", out_dir, "output directory override");
  app.add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
    has_seed = true;
  });
  app.add_option("--gamma", gamma, "discount factor override");
  app.add_option("--epsilon", epsilon, "stopping threshold override");
  app.add_option("--tau", tau, "stopping window override");
  app.add_option("--k-max", k_max, "maximum granularity override");
  app.add_option("--embedder", embedder_kind, "embedder kind override (hash|remote)");

  std::map<std::string, std::function<intentrl::StageStatus(const intentrl::PipelineConfig&)>>
      stages = {
          {"collect", intentrl::run_collect},
          {"embed", intentrl::run_embed},
          {"cluster", intentrl::run_cluster},
          {"select-k", intentrl::run_select_k},
          {"aggregate", intentrl::run_aggregate},
          {"train", intentrl::run_train},
          {"train-online", intentrl::run_train_online},
          {"eval", intentrl::run_eval},
          {"report", intentrl::run_report},
      };

  for (auto& [name, fn] : stages) {
    app.add_subcommand(name, "run the " + name + " stage")->fallthrough();
  }
  app.add_subcommand("pipeline", "run every stage in order")->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (app.get_subcommands().empty()) {
    std::puts(app.help().c_str());
    return kExitOk;
  }

  try {
    intentrl::PipelineConfig cfg;
    if (!config_path.empty()) cfg = intentrl::load_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (has_seed) cfg.seed = seed;
    if (gamma >= 0.0) cfg.gamma = gamma;
    if (epsilon >= 0.0) cfg.epsilon = epsilon;
    if (tau >= 0) cfg.tau = tau;
    if (k_max >= 0) cfg.k_max = k_max;
    if (!embedder_kind.empty()) {
      if (embedder_kind == "hash") {
        cfg.embedder.kind = intentrl::EmbedderKind::kHashFeaturizer;
      } else if (embedder_kind == "remote") {
        cfg.embedder.kind = intentrl::EmbedderKind::kRemoteService;
      } else {
        throw intentrl::ValidationError("unknown embedder kind: " + embedder_kind);
      }
    }
    auto problems = cfg.validate();
    if (!problems.empty()) throw intentrl::ValidationError(problems.front());

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "pipeline") {
      intentrl::run_pipeline(cfg);
      std::printf("pipeline complete: %s\n", cfg.out_dir.c_str());
      return kExitOk;
    }
    auto status = stages.at(name)(cfg);
    if (status == intentrl::StageStatus::kSkipped) {
      std::printf("%s: up to date, skipped\n", name.c_str());
    } else {
      std::printf("%s: done\n", name.c_str());
    }
    return kExitOk;
  } catch (const intentrl::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kExitValidation;
  } catch (const intentrl::UpstreamError& e) {
    std::fprintf(stderr, "upstream error: %s\n", e.what());
    return kExitUpstream;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}
