#ifndef INTENTRL_TRAJ_HPP_
#define INTENTRL_TRAJ_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "intentrl/common.hpp"

namespace intentrl {

enum class Speaker { kAgent, kEnvironment };
enum class Task { kGuess, kBargain, kNegotiate, kCustom };
enum class Player { kSolo, kAlice, kBob };

std::string to_string(Task t);
std::string to_string(Player p);
Task task_from_string(const std::string& s);
Player player_from_string(const std::string& s);

// A single utterance. Text is stored whitespace-trimmed; uid is unique
// within a TrajectorySet and shared by all occurrences of the same
// (text, speaker) pair.
struct Utterance {
  std::string text;
  Speaker speaker = Speaker::kAgent;
  uint32_t uid = 0;

  bool operator==(const Utterance&) const = default;
};

// One turn: the agent's action and the environment's response. Only the
// final step of a trajectory may omit the observation.
struct Step {
  int t = 0;  // 1-based turn index
  Utterance action;
  std::optional<Utterance> observation;

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::string game_id;
  Task task = Task::kCustom;
  Player player = Player::kSolo;
  std::vector<Step> steps;
  double terminal_reward = 0.0;

  int horizon() const { return static_cast<int>(steps.size()); }

  bool operator==(const Trajectory&) const = default;
};

// A validated collection of trajectories plus the deduplicated utterance
// corpus they reference. Immutable after construction; safe to share.
struct TrajectorySet {
  std::vector<Trajectory> trajectories;
  std::vector<Utterance> corpus;  // corpus[uid].uid == uid

  int64_t total_steps() const;

  bool operator==(const TrajectorySet&) const = default;
};

// Builds a TrajectorySet from raw trajectories: trims texts, assigns uids
// by first appearance of each (text, speaker) pair, validates.
TrajectorySet assemble_set(std::vector<Trajectory> raw);

// Reads a .traj.jsonl log. Throws ValidationError naming the offending
// line on malformed input.
TrajectorySet parse_trajectories(const std::string& path);

// Writes the set in the line-per-record log format. Output is byte-stable
// for a given set.
void write_trajectories(const TrajectorySet& set, const std::string& path);

// Returns human-readable invariant violations; empty iff the trajectory
// is well-formed. Violations are data, not failures.
std::vector<std::string> validate_trajectory(const Trajectory& traj);

// Set-level validation: per-trajectory invariants plus corpus coverage
// and uniqueness.
std::vector<std::string> validate_set(const TrajectorySet& set);

}  // namespace intentrl

#endif  // INTENTRL_TRAJ_HPP_
