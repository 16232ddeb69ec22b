#ifndef INTENTRL_TRAIN_HPP_
#define INTENTRL_TRAIN_HPP_

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "intentrl/aggregate.hpp"
#include "intentrl/embed.hpp"

namespace intentrl {

// A policy context: the last W projected (action, observation) label pairs,
// flattened oldest-first. Shorter at the start of an episode.
struct ContextKey {
  std::vector<int32_t> labels;

  bool operator==(const ContextKey&) const = default;
};

struct ContextKeyHash {
  size_t operator()(const ContextKey& k) const {
    return static_cast<size_t>(
        fnv1a64_bytes(k.labels.data(), k.labels.size() * sizeof(int32_t)));
  }
};

// Contextual softmax over a finite action-template set. Parameters are the
// per-context logits, flattened in context registration order.
class PolicyParams {
 public:
  PolicyParams(int num_actions, int window, double learning_rate, uint64_t seed);

  int num_actions() const { return num_actions_; }
  int window() const { return window_; }
  double learning_rate() const { return learning_rate_; }
  uint64_t seed() const { return seed_; }
  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }

  int num_contexts() const { return static_cast<int>(contexts_.size()); }
  int64_t num_params() const {
    return static_cast<int64_t>(contexts_.size()) * num_actions_;
  }
  const std::vector<ContextKey>& contexts() const { return contexts_; }
  const std::vector<double>& logits() const { return logits_; }

  // Returns the context id, registering it with zero logits if new.
  int ensure_context(const ContextKey& key);
  // Strict lookup; empty when the context is unknown.
  std::optional<int> find_context(const ContextKey& key) const;

  std::vector<double> probs(int context_id) const;
  int sample_action(int context_id, Rng& rng) const;

  // log pi(action | context) and its gradient block over that context's
  // logits: d/d logit_b = 1[b = action] - pi(b).
  std::pair<double, std::vector<double>> log_prob_and_grad(int context_id,
                                                           int action) const;

  void apply_update(const std::vector<double>& direction, double scale);

  void save(const std::string& path) const;
  static PolicyParams load(const std::string& path);

 private:
  int num_actions_;
  int window_;
  double learning_rate_;
  uint64_t seed_;
  int64_t step_ = 0;
  std::vector<ContextKey> contexts_;
  std::unordered_map<ContextKey, int, ContextKeyHash> context_index_;
  std::vector<double> logits_;
};

// A trajectory corpus resolved to (context id, action id) pairs the policy
// understands.
struct ResolvedStep {
  int context_id = -1;
  int action_id = -1;
};
struct ResolvedCorpus {
  std::vector<std::vector<ResolvedStep>> per_trajectory;
};

using ActionResolver = std::function<std::optional<int>(const Utterance&)>;

// Builds policy contexts from projected labels and resolves logged action
// utterances to template ids. Registers every context in the policy.
// Throws on an unresolvable step.
ResolvedCorpus resolve_corpus(const TrajectorySet& set,
                              const ClusterAssignment& ca, PolicyParams& policy,
                              const ActionResolver& resolver);

// Context of step t (1-based) given the projected labels: the last
// `window` (action, observation) pairs from steps before t.
ContextKey context_for_step(const ProjectedTrajectory& pt, int t, int window);

struct GradEstimate {
  std::vector<double> gradient;  // over all parameters
  int n_trajectories = 0;
};

// Sample mean over trajectories of per-trajectory gradient sums, using the
// aggregated advantages. Deterministic summation order.
GradEstimate estimate_policy_gradient(const PolicyParams& policy,
                                      const ResolvedCorpus& corpus,
                                      const AdvantageSet& adv);

struct TrainResult {
  std::vector<double> loss_curve;  // negative objective per epoch
};

// Offline REINFORCE ascent on the aggregated-advantage objective.
// Deterministic given the seed.
TrainResult train_offline(PolicyParams& policy, const ResolvedCorpus& corpus,
                          const AdvantageSet& adv, int epochs, int batch,
                          uint64_t seed);

struct AdvantageVarianceReport {
  double var_raw = 0.0;         // Var(A)
  double var_aggregated = 0.0;  // Var(A~)
  double expected_within = 0.0; // E[Var(A | key)]
  double residual = 0.0;        // |Var(A) - Var(A~) - E[Var(A|key)]|
};

AdvantageVarianceReport advantage_variance_report(const AdvantageSet& adv);

struct GradientVarianceReport {
  double trace_raw = 0.0;
  double trace_aggregated = 0.0;
  double ratio = 0.0;  // aggregated / raw; 1 when raw is 0
};

// Trace of the empirical covariance of per-trajectory gradients under the
// raw and the aggregated advantages.
GradientVarianceReport gradient_variance_report(const PolicyParams& policy,
                                                const ResolvedCorpus& corpus,
                                                const AdvantageSet& adv);

struct SlopeReport {
  std::vector<std::pair<int, double>> mean_errors;  // (N, mean ||g_hat - g||)
  std::optional<double> slope;                      // absent when degenerate
};

// Single-context softmax bandit with a computable true gradient: action a
// has deterministic advantage values[a] plus optional zero-mean noise.
// For each N, draws `replicates` estimates and reports the mean L2 error.
SlopeReport convergence_slope_check(const PolicyParams& policy, int context_id,
                                    const std::vector<double>& values,
                                    double noise_sd, const std::vector<int>& n_grid,
                                    int replicates, uint64_t seed);

// A finite MDP with a known action clustering, used to certify the
// aggregation bias bound. States stand in for truncated histories.
struct TabularMdpSpec {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> reward;      // num_states * num_actions
  std::vector<double> transition;  // (num_states * num_actions) * num_states
  std::vector<double> initial;     // num_states
  double discount = 0.9;
  std::vector<int> action_cluster;  // action -> cluster id
  double epsilon = 0.0;             // certified per-cluster epsilon

  double r(int s, int a) const {
    return reward[static_cast<size_t>(s) * num_actions + a];
  }
  const double* row(int s, int a) const {
    return transition.data() +
           (static_cast<size_t>(s) * num_actions + a) * num_states;
  }
  // Empty iff rows are stochastic and each cluster is epsilon-bisimilar.
  std::vector<std::string> validate() const;
};

struct BiasReport {
  std::vector<double> bias;      // exact E[grad log pi * (A - A~)]
  double bias_norm = 0.0;
  double epsilon = 0.0;
  double max_q_spread = 0.0;         // max within-cluster |Q(s,a)-Q(s,a')|
  double q_spread_bound = 0.0;       // 2 eps / (1 - gamma)
  double theoretical_c = 0.0;        // 2 max||grad log pi|| / (1 - gamma)
};

// Exact gradient bias by enumeration over the finite MDP, with Q^pi from
// fixed-point policy evaluation to 1e-12. Throws naming the offending pair
// when the spec is not epsilon-bisimilar.
BiasReport measure_gradient_bias(const TabularMdpSpec& spec,
                                 const PolicyParams& policy);

// Exact Q^pi for the policy (states indexed as single-label contexts).
std::vector<double> policy_q_values(const TabularMdpSpec& spec,
                                    const PolicyParams& policy,
                                    double tol = 1e-12);

// One batch of environment rollouts for the online loop. The callable owns
// the environment and plays the given policy for a full batch.
using RolloutBatchFn =
    std::function<std::vector<Trajectory>(const PolicyParams&, uint64_t seed)>;

struct OnlineConfig {
  int iterations = 150;
  int batch = 32;
  double learning_rate = 0.2;
  int refresh_every = 25;       // <= 0 disables table refreshes
  int buffer_capacity = 2000;   // freshest-window size for refreshes
};

struct OnlineResult {
  std::vector<double> reward_curve;  // mean terminal reward per iteration
};

// Online REINFORCE: rolls out with the current policy, scores new steps by
// table lookup after nearest-centroid projection (unseen keys fall back to
// the table's global mean), updates, and periodically rebuilds the table
// from the freshest window of trajectories.
OnlineResult train_online(PolicyParams& policy, const RolloutBatchFn& rollout_batch,
                          const EmbedderConfig& embed_cfg,
                          const ClusterAssignment& ca, RewardTable& table,
                          const ActionResolver& resolver, const OnlineConfig& cfg,
                          uint64_t seed);

void write_curve_csv(const std::vector<double>& values, const std::string& column,
                     const std::string& path);

}  // namespace intentrl

#endif  // INTENTRL_TRAIN_HPP_
