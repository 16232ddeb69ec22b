#include "intentrl/traj.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace intentrl {

using nlohmann::json;

std::string to_string(Task t) {
  switch (t) {
    case Task::kGuess: return "guess";
    case Task::kBargain: return "bargain";
    case Task::kNegotiate: return "negotiate";
    case Task::kCustom: return "custom";
  }
  return "custom";
}

std::string to_string(Player p) {
  switch (p) {
    case Player::kSolo: return "solo";
    case Player::kAlice: return "alice";
    case Player::kBob: return "bob";
  }
  return "solo";
}

Task task_from_string(const std::string& s) {
  if (s == "guess") return Task::kGuess;
  if (s == "bargain") return Task::kBargain;
  if (s == "negotiate") return Task::kNegotiate;
  if (s == "custom") return Task::kCustom;
  throw ValidationError("unknown task: " + s);
}

Player player_from_string(const std::string& s) {
  if (s == "solo") return Player::kSolo;
  if (s == "alice") return Player::kAlice;
  if (s == "bob") return Player::kBob;
  throw ValidationError("unknown player: " + s);
}

int64_t TrajectorySet::total_steps() const {
  int64_t n = 0;
  for (const auto& t : trajectories) n += t.horizon();
  return n;
}

namespace {

struct CorpusBuilder {
  std::vector<Utterance> corpus;
  std::map<std::pair<std::string, int>, uint32_t> index;

  uint32_t intern(const std::string& text, Speaker speaker) {
    auto key = std::make_pair(text, static_cast<int>(speaker));
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    uint32_t uid = static_cast<uint32_t>(corpus.size());
    corpus.push_back(Utterance{text, speaker, uid});
    index.emplace(std::move(key), uid);
    return uid;
  }
};

}  // namespace

TrajectorySet assemble_set(std::vector<Trajectory> raw) {
  CorpusBuilder cb;
  TrajectorySet set;
  for (auto& traj : raw) {
    for (auto& step : traj.steps) {
      step.action.text = trim(step.action.text);
      step.action.speaker = Speaker::kAgent;
      step.action.uid = cb.intern(step.action.text, Speaker::kAgent);
      if (step.observation) {
        step.observation->text = trim(step.observation->text);
        step.observation->speaker = Speaker::kEnvironment;
        step.observation->uid =
            cb.intern(step.observation->text, Speaker::kEnvironment);
      }
    }
    set.trajectories.push_back(std::move(traj));
  }
  set.corpus = std::move(cb.corpus);
  auto violations = validate_set(set);
  if (!violations.empty()) {
    throw ValidationError("assemble_set: " + violations.front());
  }
  return set;
}

TrajectorySet parse_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open trajectory log: " + path);

  std::vector<Trajectory> raw;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fail = [&](const std::string& msg) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + msg);
    };
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    if (!rec.is_object()) fail("record is not an object");
    Trajectory traj;
    try {
      traj.game_id = rec.at("game_id").get<std::string>();
      traj.task = task_from_string(rec.at("task").get<std::string>());
      traj.player = player_from_string(rec.at("player").get<std::string>());
      traj.terminal_reward = rec.at("reward").get<double>();
      if (!rec.at("steps").is_array()) fail("steps is not an array");
      for (const auto& s : rec.at("steps")) {
        Step step;
        if (!s.contains("t")) fail("step missing field \"t\"");
        step.t = s.at("t").get<int>();
        if (!s.contains("action")) fail("step missing field \"action\"");
        step.action.text = trim(s.at("action").get<std::string>());
        step.action.speaker = Speaker::kAgent;
        if (step.action.text.empty()) fail("empty action text");
        if (s.contains("observation")) {
          Utterance obs;
          obs.text = trim(s.at("observation").get<std::string>());
          obs.speaker = Speaker::kEnvironment;
          if (obs.text.empty()) fail("empty observation text");
          step.observation = std::move(obs);
        }
        traj.steps.push_back(std::move(step));
      }
    } catch (const json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    if (!std::isfinite(traj.terminal_reward)) fail("non-finite reward");
    for (size_t i = 0; i < traj.steps.size(); ++i) {
      if (traj.steps[i].t != static_cast<int>(i) + 1) {
        fail("step indices must be 1..T without gaps (found t=" +
             std::to_string(traj.steps[i].t) + " at position " +
             std::to_string(i + 1) + ")");
      }
      if (traj.steps[i].observation == std::nullopt &&
          i + 1 != traj.steps.size()) {
        fail("only the final step may omit the observation");
      }
    }
    raw.push_back(std::move(traj));
  }
  return assemble_set(std::move(raw));
}

void write_trajectories(const TrajectorySet& set, const std::string& path) {
  std::ostringstream out;
  for (const auto& traj : set.trajectories) {
    json rec;
    rec["game_id"] = traj.game_id;
    rec["task"] = to_string(traj.task);
    rec["player"] = to_string(traj.player);
    rec["reward"] = traj.terminal_reward;
    json steps = json::array();
    for (const auto& step : traj.steps) {
      json s;
      s["t"] = step.t;
      s["action"] = step.action.text;
      if (step.observation) s["observation"] = step.observation->text;
      steps.push_back(std::move(s));
    }
    rec["steps"] = std::move(steps);
    out << rec.dump() << "\n";
  }
  write_file(path, out.str());
}

std::vector<std::string> validate_trajectory(const Trajectory& traj) {
  std::vector<std::string> v;
  for (size_t i = 0; i < traj.steps.size(); ++i) {
    const Step& s = traj.steps[i];
    if (s.t != static_cast<int>(i) + 1) {
      v.push_back("step indices must be exactly 1..T with no gaps (position " +
                  std::to_string(i + 1) + " has t=" + std::to_string(s.t) + ")");
    }
    if (trim(s.action.text).empty()) {
      v.push_back("step " + std::to_string(s.t) + ": empty action text");
    }
    if (s.action.speaker != Speaker::kAgent) {
      v.push_back("step " + std::to_string(s.t) + ": action speaker must be agent");
    }
    if (s.observation) {
      if (s.observation->speaker != Speaker::kEnvironment) {
        v.push_back("step " + std::to_string(s.t) +
                    ": observation speaker must be environment");
      }
      if (trim(s.observation->text).empty()) {
        v.push_back("step " + std::to_string(s.t) + ": empty observation text");
      }
    } else if (i + 1 != traj.steps.size()) {
      v.push_back("step " + std::to_string(s.t) +
                  ": only the final step may omit the observation");
    }
  }
  if (!std::isfinite(traj.terminal_reward)) {
    v.push_back("terminal reward is not finite");
  }
  if (traj.task == Task::kGuess && traj.terminal_reward != 0.0 &&
      traj.terminal_reward != 1.0) {
    v.push_back("guess-task terminal reward must be 0 or 1 (got " +
                format_double(traj.terminal_reward) + ")");
  }
  return v;
}

std::vector<std::string> validate_set(const TrajectorySet& set) {
  std::vector<std::string> v;
  for (size_t i = 0; i < set.trajectories.size(); ++i) {
    for (auto& msg : validate_trajectory(set.trajectories[i])) {
      v.push_back("trajectory " + std::to_string(i) + ": " + msg);
    }
  }
  for (size_t i = 0; i < set.corpus.size(); ++i) {
    if (set.corpus[i].uid != static_cast<uint32_t>(i)) {
      v.push_back("corpus entry " + std::to_string(i) + " has uid " +
                  std::to_string(set.corpus[i].uid));
    }
  }
  std::map<std::pair<std::string, int>, int> seen;
  for (const auto& u : set.corpus) {
    if (++seen[{u.text, static_cast<int>(u.speaker)}] > 1) {
      v.push_back("duplicate corpus entry: \"" + u.text + "\"");
    }
  }
  auto check_ref = [&](const Utterance& u, const std::string& where) {
    if (u.uid >= set.corpus.size()) {
      v.push_back(where + ": uid " + std::to_string(u.uid) + " out of range");
      return;
    }
    const Utterance& c = set.corpus[u.uid];
    if (c.text != u.text || c.speaker != u.speaker) {
      v.push_back(where + ": uid " + std::to_string(u.uid) +
                  " does not resolve to its corpus entry");
    }
  };
  for (size_t i = 0; i < set.trajectories.size(); ++i) {
    const auto& traj = set.trajectories[i];
    for (const auto& step : traj.steps) {
      std::string where = "trajectory " + std::to_string(i) + " step " +
                          std::to_string(step.t);
      check_ref(step.action, where + " action");
      if (step.observation) check_ref(*step.observation, where + " observation");
    }
  }
  return v;
}

}  // namespace intentrl
