#ifndef INTENTRL_ENVS_HPP_
#define INTENTRL_ENVS_HPP_

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "intentrl/traj.hpp"

namespace intentrl {

// A finite intention space with surface paraphrases. Rendering applies
// bounded lexical noise (filler phrases, synonym swaps) that classify()
// strips, so ground truth stays recoverable while the embedding path sees
// genuinely distinct strings.
struct IntentTemplateBank {
  struct Intent {
    std::string name;
    std::vector<std::string> templates;  // canonical wording, no punctuation
  };
  std::vector<Intent> intents;
  int noise_level = 1;  // 0 none, 1 fillers, 2 fillers + synonym swaps

  int size() const { return static_cast<int>(intents.size()); }
  std::string render(int intent, Rng& rng) const;
  std::optional<int> classify(const std::string& text) const;
  std::vector<std::string> validate() const;

  // All canonical template strings with their intent ids, for ground-truth
  // partition checks.
  std::vector<std::pair<std::string, int>> labelled_templates() const;
};

// What an agent sees when choosing its next intent. Policy-backed agents
// condition only on their completed (action, observation) turns; scripted
// environment-side opponents may also read the pending utterance they are
// responding to.
struct TextTurn {
  std::string action_text;
  std::optional<std::string> observation_text;
};
struct AgentView {
  std::vector<TextTurn> history;
  std::optional<std::string> pending_text;
  int turn = 0;  // 1-based move index for this agent
};
using AgentFn = std::function<int(const AgentView&, Rng&)>;

AgentFn random_agent(int num_intents);

// ---------------------------------------------------------------------------
// Single-agent guessing game. The agent narrows a hidden item by asking
// attribute questions; the oracle answers yes/no (or flags a repeated
// question as invalid, with no reward effect). The episode ends with
// success as soon as the consistent candidate set shrinks to one item, or
// when an explicit guess drawn from the candidates matches the hidden item.

struct GuessGameSpec {
  int num_items = 157;
  int max_turns = 20;
  int noise_level = 1;
  // Off-topic intents that burn a turn and draw the invalid observation.
  int num_decoys = 4;
};

struct GuessOutcome {
  Trajectory trajectory;
  bool success = false;
};

class GuessGame {
 public:
  explicit GuessGame(GuessGameSpec spec);

  const GuessGameSpec& spec() const { return spec_; }
  int num_attributes() const { return num_attributes_; }
  const IntentTemplateBank& actions() const { return actions_; }
  const IntentTemplateBank& observations() const { return observations_; }
  int guess_intent() const { return num_attributes_; }
  bool is_decoy(int intent) const { return intent > num_attributes_; }

  // Deterministic yes/no oracle, total over (item, attribute).
  bool oracle_answer(int item, int attribute) const;

  GuessOutcome rollout(const AgentFn& agent, const std::string& game_id,
                       uint64_t seed) const;

 private:
  GuessGameSpec spec_;
  int num_attributes_;
  IntentTemplateBank actions_;
  IntentTemplateBank observations_;
};

// Reference agent that asks attributes in order; wins within
// ceil(log2(num_items)) turns.
AgentFn scripted_guess_agent(const GuessGame& game);

// ---------------------------------------------------------------------------
// Adversarial games. Moves alternate starting with Alice; each offer is the
// proposal of its round, and an accept ends the game on the previous
// proposal. Both players' trajectories are emitted per game.

struct AdversarialOutcome {
  Trajectory alice;
  Trajectory bob;
  double payoff_a = 0.0;  // discounted payoff (bargain) or utility (negotiation)
  double payoff_b = 0.0;
  int t_ev = -1;          // accepting round; -1 encodes no deal
  double p_ev = 0.0;      // bargain: Alice's share; negotiation: accepted price
};

struct BargainSpec {
  double money = 100.0;
  int max_rounds = 20;
  double delta_a = 0.95;
  double delta_b = 0.95;
  int noise_level = 1;
};

class BargainGame {
 public:
  explicit BargainGame(BargainSpec spec);

  const BargainSpec& spec() const { return spec_; }
  const IntentTemplateBank& actions() const { return actions_; }
  int accept_intent() const;
  const std::vector<int>& share_levels() const { return share_levels_; }
  // Proposer's own share for an offer intent; empty for accept.
  std::optional<double> share_of_intent(int intent) const;
  int intent_for_share(int percent) const;

  AdversarialOutcome rollout(const AgentFn& alice, const AgentFn& bob,
                             const std::string& game_id, uint64_t seed) const;

 private:
  BargainSpec spec_;
  IntentTemplateBank actions_;
  std::vector<int> share_levels_;  // own-share percents
};

struct NegotiationSpec {
  double true_value = 100.0;
  double value_alice = 100.0;  // seller's valuation
  double value_bob = 120.0;    // buyer's valuation
  int max_rounds = 20;
  int noise_level = 1;
};

class NegotiationGame {
 public:
  explicit NegotiationGame(NegotiationSpec spec);

  const NegotiationSpec& spec() const { return spec_; }
  const IntentTemplateBank& actions() const { return actions_; }
  int accept_intent() const;
  const std::vector<double>& price_fractions() const { return price_fractions_; }
  std::optional<double> price_of_intent(int intent) const;  // absolute price
  int intent_for_fraction(double fraction) const;

  AdversarialOutcome rollout(const AgentFn& alice, const AgentFn& bob,
                             const std::string& game_id, uint64_t seed) const;

 private:
  NegotiationSpec spec_;
  IntentTemplateBank actions_;
  std::vector<double> price_fractions_;  // of true_value
};

// Scripted opponents by style name: "threshold" (fixed-threshold
// acceptor), "greedy", "titfortat" (conceding). Deterministic given the
// rollout seed. Throws on an unknown style.
AgentFn scripted_bargain_opponent(const BargainGame& game, const std::string& style,
                                  Player role);
AgentFn scripted_negotiation_opponent(const NegotiationGame& game,
                                      const std::string& style, Player role);

std::vector<std::string> opponent_styles();

// ---------------------------------------------------------------------------
// Evaluation formulas.

// Fraction of successes over guess-task trajectories; rewards must be
// binary.
double eval_average_final_reward(const std::vector<Trajectory>& trajs);

// Win fraction by strict payoff comparison; ties are non-wins.
double eval_win_rate_bargain(const std::vector<AdversarialOutcome>& games,
                             Player role);
double eval_win_rate_negotiation(const std::vector<AdversarialOutcome>& games,
                                 Player role);

// Stand-in evaluation grids over (delta_a, delta_b, T) and (V_A, V_B, T);
// 6 configurations each.
std::vector<BargainSpec> bargain_config_grid();
std::vector<NegotiationSpec> negotiation_config_grid();

}  // namespace intentrl

#endif  // INTENTRL_ENVS_HPP_
