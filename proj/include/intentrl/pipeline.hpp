#ifndef INTENTRL_PIPELINE_HPP_
#define INTENTRL_PIPELINE_HPP_

#include <memory>
#include <string>
#include <vector>

#include "intentrl/envs.hpp"
#include "intentrl/granularity.hpp"
#include "intentrl/train.hpp"

namespace intentrl {

// One configuration drives every stage. All randomness flows from `seed`.
struct PipelineConfig {
  std::string out_dir = "out";
  uint64_t seed = 7;
  double gamma = 0.9;
  double epsilon = kDefaultEpsilon;
  int tau = kDefaultTau;
  int k_max = kDefaultKMax;
  EmbedderConfig embedder;

  // Environment selection.
  std::string task = "guess";  // guess | bargain | negotiate
  int guess_items = 157;
  int guess_decoys = 4;
  int max_turns = 20;  // guess turns; adversarial proposal rounds
  int noise_level = 1;
  std::string opponent = "self";     // self | threshold | greedy | titfortat
  std::string agent_role = "alice";  // role of the learning agent vs scripted
  double money = 100.0;
  double delta_a = 0.95;
  double delta_b = 0.95;
  double true_value = 100.0;
  double value_alice = 100.0;
  double value_bob = 120.0;

  // Stage knobs.
  int games = 1000;
  int epochs = 10;
  int batch = 64;
  double learning_rate = 0.5;
  int window = 2;
  std::string train_player = "agent";  // agent | both
  int online_iterations = 150;
  int online_batch = 32;
  double online_learning_rate = 0.2;
  int refresh_every = 25;
  int buffer_capacity = 2000;
  int eval_games = 200;
  bool eval_grid = false;  // adversarial: also sweep the config grid, N=25 each

  std::vector<std::string> validate() const;
  std::string fingerprint() const;

  std::string logs_path() const { return out_dir + "/games.traj.jsonl"; }
  std::string cache_path() const { return out_dir + "/embed.cache"; }
  std::string matrix_path() const { return out_dir + "/embeddings.f32"; }
  std::string dendrogram_path() const { return out_dir + "/dendrogram.json"; }
  std::string sweep_path() const { return out_dir + "/split_scores.csv"; }
  std::string metrics_path() const { return out_dir + "/cluster_metrics.csv"; }
  std::string selection_path() const { return out_dir + "/selection.json"; }
  std::string assignment_path() const { return out_dir + "/assignment.json"; }
  std::string table_path() const { return out_dir + "/reward_table.json"; }
  std::string checkpoint_path() const { return out_dir + "/checkpoint.json"; }
  std::string loss_path() const { return out_dir + "/loss.csv"; }
  std::string online_checkpoint_path() const {
    return out_dir + "/checkpoint_online.json";
  }
  std::string online_table_path() const {
    return out_dir + "/reward_table_online.json";
  }
  std::string reward_curve_path() const { return out_dir + "/reward_curve.csv"; }
  std::string eval_path() const { return out_dir + "/eval.csv"; }
  std::string report_dir() const { return out_dir + "/report"; }
};

PipelineConfig load_config(const std::string& path);
void save_config(const PipelineConfig& cfg, const std::string& path);

enum class StageStatus { kRan, kSkipped };

StageStatus run_collect(const PipelineConfig& cfg);
StageStatus run_embed(const PipelineConfig& cfg);
StageStatus run_cluster(const PipelineConfig& cfg);
StageStatus run_select_k(const PipelineConfig& cfg);
StageStatus run_aggregate(const PipelineConfig& cfg);
StageStatus run_train(const PipelineConfig& cfg);
StageStatus run_train_online(const PipelineConfig& cfg);
StageStatus run_eval(const PipelineConfig& cfg);
StageStatus run_report(const PipelineConfig& cfg);
void run_pipeline(const PipelineConfig& cfg);

// Agent that samples from the policy after projecting its visible text
// history through the embedder and nearest-centroid assignment. Unknown
// contexts fall back to a uniform draw.
AgentFn make_policy_agent(const PolicyParams& policy, const EmbedderConfig& embed_cfg,
                          const ClusterAssignment& ca);

// Environment access for tools and tests that mirror pipeline behavior.
struct EnvBundle {
  std::unique_ptr<GuessGame> guess;
  std::unique_ptr<BargainGame> bargain;
  std::unique_ptr<NegotiationGame> negotiation;

  const IntentTemplateBank& action_bank() const;
  ActionResolver resolver() const;
  int num_actions() const;
};
EnvBundle make_env(const PipelineConfig& cfg);

// Rolls one batch of games with the given agent policy (and the configured
// opponent for adversarial tasks). Returns all logged trajectories, two
// per adversarial game.
std::vector<Trajectory> collect_games(const PipelineConfig& cfg, const EnvBundle& env,
                                      const AgentFn& agent, int games,
                                      uint64_t seed, const std::string& id_prefix,
                                      std::vector<AdversarialOutcome>* outcomes);

}  // namespace intentrl

#endif  // INTENTRL_PIPELINE_HPP_
