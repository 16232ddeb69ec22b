#include "intentrl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include <json.hpp>

#include "intentrl/cluster_metrics.hpp"

namespace intentrl {

using nlohmann::json;

namespace {

json config_to_json(const PipelineConfig& c) {
  json j;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["gamma"] = c.gamma;
  j["epsilon"] = c.epsilon;
  j["tau"] = c.tau;
  j["k_max"] = c.k_max;
  j["embedder"] = {
      {"kind", c.embedder.kind == EmbedderKind::kHashFeaturizer ? "hash" : "remote"},
      {"dim", c.embedder.dim},
      {"normalize", c.embedder.normalize},
      {"ngram_min", c.embedder.ngram_min},
      {"ngram_max", c.embedder.ngram_max},
      {"seed", c.embedder.seed},
      {"endpoint", c.embedder.endpoint},
      {"api_key_env", c.embedder.api_key_env},
      {"model", c.embedder.model}};
  j["env"] = {{"task", c.task},
              {"guess_items", c.guess_items},
              {"guess_decoys", c.guess_decoys},
              {"max_turns", c.max_turns},
              {"noise_level", c.noise_level},
              {"opponent", c.opponent},
              {"agent_role", c.agent_role},
              {"money", c.money},
              {"delta_a", c.delta_a},
              {"delta_b", c.delta_b},
              {"true_value", c.true_value},
              {"value_alice", c.value_alice},
              {"value_bob", c.value_bob}};
  j["collect"] = {{"games", c.games}};
  j["train"] = {{"epochs", c.epochs},
                {"batch", c.batch},
                {"learning_rate", c.learning_rate},
                {"window", c.window},
                {"player", c.train_player}};
  j["online"] = {{"iterations", c.online_iterations},
                 {"batch", c.online_batch},
                 {"learning_rate", c.online_learning_rate},
                 {"refresh_every", c.refresh_every},
                 {"buffer_capacity", c.buffer_capacity}};
  j["eval"] = {{"games", c.eval_games}, {"grid", c.eval_grid}};
  return j;
}

void config_from_json(const json& j, PipelineConfig* c) {
  if (j.contains("out_dir")) c->out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("seed")) c->seed = j.at("seed").get<uint64_t>();
  if (j.contains("gamma")) c->gamma = j.at("gamma").get<double>();
  if (j.contains("epsilon")) c->epsilon = j.at("epsilon").get<double>();
  if (j.contains("tau")) c->tau = j.at("tau").get<int>();
  if (j.contains("k_max")) c->k_max = j.at("k_max").get<int>();
  if (j.contains("embedder")) {
    const json& e = j.at("embedder");
    if (e.contains("kind")) {
      std::string kind = e.at("kind").get<std::string>();
      if (kind == "hash") {
        c->embedder.kind = EmbedderKind::kHashFeaturizer;
      } else if (kind == "remote") {
        c->embedder.kind = EmbedderKind::kRemoteService;
      } else {
        throw ValidationError("unknown embedder kind: " + kind);
      }
    }
    if (e.contains("dim")) c->embedder.dim = e.at("dim").get<int>();
    if (e.contains("normalize")) c->embedder.normalize = e.at("normalize").get<bool>();
    if (e.contains("ngram_min")) c->embedder.ngram_min = e.at("ngram_min").get<int>();
    if (e.contains("ngram_max")) c->embedder.ngram_max = e.at("ngram_max").get<int>();
    if (e.contains("seed")) c->embedder.seed = e.at("seed").get<uint64_t>();
    if (e.contains("endpoint")) c->embedder.endpoint = e.at("endpoint").get<std::string>();
    if (e.contains("api_key_env")) {
      c->embedder.api_key_env = e.at("api_key_env").get<std::string>();
    }
    if (e.contains("model")) c->embedder.model = e.at("model").get<std::string>();
  }
  if (j.contains("env")) {
    const json& e = j.at("env");
    if (e.contains("task")) c->task = e.at("task").get<std::string>();
    if (e.contains("guess_items")) c->guess_items = e.at("guess_items").get<int>();
    if (e.contains("guess_decoys")) c->guess_decoys = e.at("guess_decoys").get<int>();
    if (e.contains("max_turns")) c->max_turns = e.at("max_turns").get<int>();
    if (e.contains("noise_level")) c->noise_level = e.at("noise_level").get<int>();
    if (e.contains("opponent")) c->opponent = e.at("opponent").get<std::string>();
    if (e.contains("agent_role")) c->agent_role = e.at("agent_role").get<std::string>();
    if (e.contains("money")) c->money = e.at("money").get<double>();
    if (e.contains("delta_a")) c->delta_a = e.at("delta_a").get<double>();
    if (e.contains("delta_b")) c->delta_b = e.at("delta_b").get<double>();
    if (e.contains("true_value")) c->true_value = e.at("true_value").get<double>();
    if (e.contains("value_alice")) c->value_alice = e.at("value_alice").get<double>();
    if (e.contains("value_bob")) c->value_bob = e.at("value_bob").get<double>();
  }
  if (j.contains("collect") && j.at("collect").contains("games")) {
    c->games = j.at("collect").at("games").get<int>();
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    if (t.contains("epochs")) c->epochs = t.at("epochs").get<int>();
    if (t.contains("batch")) c->batch = t.at("batch").get<int>();
    if (t.contains("learning_rate")) c->learning_rate = t.at("learning_rate").get<double>();
    if (t.contains("window")) c->window = t.at("window").get<int>();
    if (t.contains("player")) c->train_player = t.at("player").get<std::string>();
  }
  if (j.contains("online")) {
    const json& o = j.at("online");
    if (o.contains("iterations")) c->online_iterations = o.at("iterations").get<int>();
    if (o.contains("batch")) c->online_batch = o.at("batch").get<int>();
    if (o.contains("learning_rate")) {
      c->online_learning_rate = o.at("learning_rate").get<double>();
    }
    if (o.contains("refresh_every")) c->refresh_every = o.at("refresh_every").get<int>();
    if (o.contains("buffer_capacity")) {
      c->buffer_capacity = o.at("buffer_capacity").get<int>();
    }
  }
  if (j.contains("eval")) {
    if (j.at("eval").contains("games")) c->eval_games = j.at("eval").at("games").get<int>();
    if (j.at("eval").contains("grid")) c->eval_grid = j.at("eval").at("grid").get<bool>();
  }
}

}  // namespace

std::vector<std::string> PipelineConfig::validate() const {
  std::vector<std::string> v;
  if (!(gamma > 0.0 && gamma <= 1.0)) v.push_back("gamma must lie in (0, 1]");
  if (!(epsilon > 0.0)) v.push_back("epsilon must be > 0");
  if (tau < 0) v.push_back("tau must be >= 0");
  if (k_max < 2) v.push_back("k_max must be >= 2");
  if (games < 1) v.push_back("collect.games must be >= 1");
  if (task != "guess" && task != "bargain" && task != "negotiate") {
    v.push_back("unknown task: " + task);
  }
  if (opponent != "self") {
    auto styles = opponent_styles();
    if (std::find(styles.begin(), styles.end(), opponent) == styles.end()) {
      v.push_back("unknown opponent: " + opponent);
    }
  }
  if (agent_role != "alice" && agent_role != "bob") {
    v.push_back("agent_role must be alice or bob");
  }
  if (train_player != "agent" && train_player != "both") {
    v.push_back("train.player must be agent or both");
  }
  auto embed_problems = embedder.validate();
  v.insert(v.end(), embed_problems.begin(), embed_problems.end());
  return v;
}

std::string PipelineConfig::fingerprint() const {
  json j = config_to_json(*this);
  j.erase("out_dir");  // relocating outputs does not invalidate artifacts
  return hex64(fnv1a64(j.dump()));
}

PipelineConfig load_config(const std::string& path) {
  PipelineConfig cfg;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  config_from_json(j, &cfg);
  auto problems = cfg.validate();
  if (!problems.empty()) {
    throw ValidationError("config " + path + ": " + problems.front());
  }
  return cfg;
}

void save_config(const PipelineConfig& cfg, const std::string& path) {
  write_file(path, config_to_json(cfg).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Manifests.

namespace {

std::string manifest_path(const PipelineConfig& cfg, const std::string& stage) {
  return cfg.out_dir + "/manifests/" + stage + ".manifest.json";
}

// Stage names that produce each artifact, for tamper reports.
struct StageIo {
  std::string stage;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

bool manifest_matches(const PipelineConfig& cfg, const StageIo& io) {
  std::string path = manifest_path(cfg, io.stage);
  if (!file_exists(path)) return false;
  json m;
  try {
    m = json::parse(read_file(path));
  } catch (const json::exception&) {
    return false;
  }
  if (m.value("config_fingerprint", "") != cfg.fingerprint()) return false;
  for (const auto& f : io.inputs) {
    if (!file_exists(f)) return false;
    if (m.at("inputs").value(f, "") != hex64(file_checksum(f))) return false;
  }
  for (const auto& f : io.outputs) {
    if (!file_exists(f)) return false;
    if (m.at("outputs").value(f, "") != hex64(file_checksum(f))) return false;
  }
  return true;
}

void check_upstream(const PipelineConfig& cfg, const StageIo& io,
                    const std::map<std::string, std::string>& producer_of) {
  for (const auto& f : io.inputs) {
    if (!file_exists(f)) {
      throw UpstreamError("stage " + io.stage + ": missing upstream artifact " + f);
    }
    auto it = producer_of.find(f);
    if (it == producer_of.end()) continue;
    std::string mpath = manifest_path(cfg, it->second);
    if (!file_exists(mpath)) {
      throw UpstreamError("stage " + io.stage + ": upstream stage " + it->second +
                          " has no manifest for " + f);
    }
    json m = json::parse(read_file(mpath));
    std::string recorded = m.at("outputs").value(f, "");
    if (recorded != hex64(file_checksum(f))) {
      throw UpstreamError("stage " + io.stage + ": checksum mismatch for " + f);
    }
  }
}

void write_manifest(const PipelineConfig& cfg, const StageIo& io) {
  json m;
  m["stage"] = io.stage;
  m["config_fingerprint"] = cfg.fingerprint();
  json inputs = json::object();
  for (const auto& f : io.inputs) inputs[f] = hex64(file_checksum(f));
  m["inputs"] = std::move(inputs);
  json outputs = json::object();
  for (const auto& f : io.outputs) outputs[f] = hex64(file_checksum(f));
  m["outputs"] = std::move(outputs);
  m["created_at"] = static_cast<int64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  write_file(manifest_path(cfg, io.stage), m.dump(2) + "\n");
}

// Maps each artifact to the stage that writes it.
std::map<std::string, std::string> producer_map(const PipelineConfig& cfg) {
  std::map<std::string, std::string> p;
  p[cfg.logs_path()] = "collect";
  p[cfg.matrix_path()] = "embed";
  p[cfg.matrix_path() + ".meta.json"] = "embed";
  p[cfg.dendrogram_path()] = "cluster";
  p[cfg.sweep_path()] = "select_k";
  p[cfg.selection_path()] = "select_k";
  p[cfg.metrics_path()] = "select_k";
  p[cfg.assignment_path()] = "aggregate";
  p[cfg.assignment_path() + ".centroids"] = "aggregate";
  p[cfg.table_path()] = "aggregate";
  p[cfg.checkpoint_path()] = "train";
  p[cfg.checkpoint_path() + ".bin"] = "train";
  p[cfg.loss_path()] = "train";
  p[cfg.online_checkpoint_path()] = "train_online";
  p[cfg.online_checkpoint_path() + ".bin"] = "train_online";
  p[cfg.online_table_path()] = "train_online";
  p[cfg.reward_curve_path()] = "train_online";
  p[cfg.eval_path()] = "eval";
  return p;
}

template <typename Fn>
StageStatus run_stage(const PipelineConfig& cfg, const StageIo& io, Fn&& body) {
  auto problems = cfg.validate();
  if (!problems.empty()) throw ValidationError(problems.front());
  if (manifest_matches(cfg, io)) return StageStatus::kSkipped;
  check_upstream(cfg, io, producer_map(cfg));
  std::filesystem::create_directories(cfg.out_dir);
  body();
  write_manifest(cfg, io);
  return StageStatus::kRan;
}

}  // namespace

// ---------------------------------------------------------------------------
// Environment wiring.

const IntentTemplateBank& EnvBundle::action_bank() const {
  if (guess) return guess->actions();
  if (bargain) return bargain->actions();
  return negotiation->actions();
}

ActionResolver EnvBundle::resolver() const {
  const IntentTemplateBank* bank = &action_bank();
  return [bank](const Utterance& u) { return bank->classify(u.text); };
}

int EnvBundle::num_actions() const { return action_bank().size(); }

EnvBundle make_env(const PipelineConfig& cfg) {
  EnvBundle env;
  if (cfg.task == "guess") {
    GuessGameSpec spec;
    spec.num_items = cfg.guess_items;
    spec.max_turns = cfg.max_turns;
    spec.noise_level = cfg.noise_level;
    spec.num_decoys = cfg.guess_decoys;
    env.guess = std::make_unique<GuessGame>(spec);
  } else if (cfg.task == "bargain") {
    BargainSpec spec;
    spec.money = cfg.money;
    spec.max_rounds = cfg.max_turns;
    spec.delta_a = cfg.delta_a;
    spec.delta_b = cfg.delta_b;
    spec.noise_level = cfg.noise_level;
    env.bargain = std::make_unique<BargainGame>(spec);
  } else if (cfg.task == "negotiate") {
    NegotiationSpec spec;
    spec.true_value = cfg.true_value;
    spec.value_alice = cfg.value_alice;
    spec.value_bob = cfg.value_bob;
    spec.max_rounds = cfg.max_turns;
    spec.noise_level = cfg.noise_level;
    env.negotiation = std::make_unique<NegotiationGame>(spec);
  } else {
    throw ValidationError("unknown task: " + cfg.task);
  }
  return env;
}

namespace {

AgentFn opponent_for(const PipelineConfig& cfg, const EnvBundle& env, Player role) {
  if (env.bargain) return scripted_bargain_opponent(*env.bargain, cfg.opponent, role);
  return scripted_negotiation_opponent(*env.negotiation, cfg.opponent, role);
}

}  // namespace

std::vector<Trajectory> collect_games(const PipelineConfig& cfg, const EnvBundle& env,
                                      const AgentFn& agent, int games,
                                      uint64_t seed, const std::string& id_prefix,
                                      std::vector<AdversarialOutcome>* outcomes) {
  std::vector<Trajectory> logs;
  Player agent_player = cfg.agent_role == "bob" ? Player::kBob : Player::kAlice;
  for (int i = 0; i < games; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%06d", id_prefix.c_str(), i);
    uint64_t game_seed = Rng::derive(seed, std::string(id));
    if (env.guess) {
      auto outcome = env.guess->rollout(agent, id, game_seed);
      logs.push_back(std::move(outcome.trajectory));
      continue;
    }
    AgentFn alice, bob;
    if (cfg.opponent == "self") {
      alice = agent;
      bob = agent;
    } else if (agent_player == Player::kAlice) {
      alice = agent;
      bob = opponent_for(cfg, env, Player::kBob);
    } else {
      alice = opponent_for(cfg, env, Player::kAlice);
      bob = agent;
    }
    AdversarialOutcome outcome =
        env.bargain ? env.bargain->rollout(alice, bob, id, game_seed)
                    : env.negotiation->rollout(alice, bob, id, game_seed);
    if (outcomes != nullptr) outcomes->push_back(outcome);
    logs.push_back(std::move(outcome.alice));
    logs.push_back(std::move(outcome.bob));
  }
  return logs;
}

AgentFn make_policy_agent(const PolicyParams& policy, const EmbedderConfig& embed_cfg,
                          const ClusterAssignment& ca) {
  auto cache = std::make_shared<std::unordered_map<std::string, int32_t>>();
  const PolicyParams* p = &policy;
  return [p, embed_cfg, &ca, cache](const AgentView& view, Rng& rng) {
    auto label_of = [&](const std::string& text) {
      auto it = cache->find(text);
      if (it != cache->end()) return it->second;
      auto vec = embed_texts(embed_cfg, {text});
      int32_t label = nearest_centroid_assign(ca, vec.front());
      cache->emplace(text, label);
      return label;
    };
    ContextKey key;
    size_t first = view.history.size() > static_cast<size_t>(p->window())
                       ? view.history.size() - static_cast<size_t>(p->window())
                       : 0;
    for (size_t i = first; i < view.history.size(); ++i) {
      const TextTurn& turn = view.history[i];
      if (!turn.observation_text) continue;  // incomplete turns carry no pair
      key.labels.push_back(label_of(turn.action_text));
      key.labels.push_back(label_of(*turn.observation_text));
    }
    auto ctx = p->find_context(key);
    if (!ctx) {
      return static_cast<int>(rng.uniform_int(0, p->num_actions() - 1));
    }
    return p->sample_action(*ctx, rng);
  };
}

// ---------------------------------------------------------------------------
// Stages.

StageStatus run_collect(const PipelineConfig& cfg) {
  StageIo io{"collect", {}, {cfg.logs_path()}};
  return run_stage(cfg, io, [&] {
    EnvBundle env = make_env(cfg);
    AgentFn behavior = random_agent(env.num_actions());
    auto logs = collect_games(cfg, env, behavior, cfg.games,
                              Rng::derive(cfg.seed, "collect"), cfg.task, nullptr);
    auto set = assemble_set(std::move(logs));
    write_trajectories(set, cfg.logs_path());
  });
}

StageStatus run_embed(const PipelineConfig& cfg) {
  StageIo io{"embed",
             {cfg.logs_path()},
             {cfg.matrix_path(), cfg.matrix_path() + ".meta.json"}};
  return run_stage(cfg, io, [&] {
    auto set = parse_trajectories(cfg.logs_path());
    auto matrix = embed_corpus(cfg.embedder, set, cfg.cache_path());
    save_matrix(matrix, cfg.matrix_path());
  });
}

StageStatus run_cluster(const PipelineConfig& cfg) {
  StageIo io{"cluster", {cfg.matrix_path()}, {cfg.dendrogram_path()}};
  return run_stage(cfg, io, [&] {
    auto matrix = load_matrix(cfg.matrix_path());
    auto dg = build_dendrogram(matrix);
    save_dendrogram(dg, cfg.dendrogram_path());
  });
}

StageStatus run_select_k(const PipelineConfig& cfg) {
  StageIo io{"select_k",
             {cfg.logs_path(), cfg.matrix_path(), cfg.dendrogram_path()},
             {cfg.sweep_path(), cfg.selection_path(), cfg.metrics_path()}};
  return run_stage(cfg, io, [&] {
    auto set = parse_trajectories(cfg.logs_path());
    auto matrix = load_matrix(cfg.matrix_path());
    auto dg = load_dendrogram(cfg.dendrogram_path());
    auto normalized = normalize_terminal_rewards(set);
    auto curve = sweep_split_scores(normalized, dg, matrix, cfg.k_max, cfg.gamma,
                                    cfg.epsilon, cfg.tau);
    write_sweep_csv(curve, cfg.sweep_path());
    write_selection_summary(curve, cfg.selection_path());
    // Geometric-metric baseline over a small k range for comparison plots.
    int k_hi = std::min<int>(20, static_cast<int>(matrix.n) - 1);
    if (k_hi >= 2) {
      auto reports = metric_sweep(matrix, dg, 2, k_hi);
      write_metric_csv(reports, cfg.metrics_path());
    } else {
      write_metric_csv({}, cfg.metrics_path());
    }
  });
}

namespace {

int selected_k(const PipelineConfig& cfg) {
  json sel = json::parse(read_file(cfg.selection_path()));
  if (sel.at("k_star").is_null()) {
    throw UpstreamError(
        "selection has no k_star (stopping rule never fired); raise epsilon or "
        "k_max");
  }
  return sel.at("k_star").get<int>();
}

TrajectorySet training_subset(const PipelineConfig& cfg, const TrajectorySet& set) {
  if (cfg.task == "guess" || cfg.train_player == "both") return set;
  Player role = cfg.agent_role == "bob" ? Player::kBob : Player::kAlice;
  TrajectorySet out;
  out.corpus = set.corpus;
  for (const auto& traj : set.trajectories) {
    if (cfg.opponent == "self" || traj.player == role) out.trajectories.push_back(traj);
  }
  return out;
}

}  // namespace

StageStatus run_aggregate(const PipelineConfig& cfg) {
  StageIo io{"aggregate",
             {cfg.logs_path(), cfg.matrix_path(), cfg.dendrogram_path(),
              cfg.selection_path()},
             {cfg.assignment_path(), cfg.assignment_path() + ".centroids",
              cfg.table_path()}};
  return run_stage(cfg, io, [&] {
    auto set = parse_trajectories(cfg.logs_path());
    auto matrix = load_matrix(cfg.matrix_path());
    auto dg = load_dendrogram(cfg.dendrogram_path());
    int k = selected_k(cfg);
    auto ca = cut_dendrogram(dg, k, matrix);
    save_assignment(ca, cfg.assignment_path());
    // The unnormalized table at k*, for training and the online oracle.
    auto table = build_reward_table(set, ca, cfg.gamma);
    save_reward_table(table, cfg.table_path());
  });
}

StageStatus run_train(const PipelineConfig& cfg) {
  StageIo io{"train",
             {cfg.logs_path(), cfg.assignment_path(),
              cfg.assignment_path() + ".centroids", cfg.table_path()},
             {cfg.checkpoint_path(), cfg.checkpoint_path() + ".bin", cfg.loss_path()}};
  return run_stage(cfg, io, [&] {
    auto set = parse_trajectories(cfg.logs_path());
    auto ca = load_assignment(cfg.assignment_path());
    auto table = load_reward_table(cfg.table_path());
    EnvBundle env = make_env(cfg);

    auto subset = training_subset(cfg, set);
    auto adv = assign_advantages(subset, ca, table);
    PolicyParams policy(env.num_actions(), cfg.window, cfg.learning_rate, cfg.seed);
    auto corpus = resolve_corpus(subset, ca, policy, env.resolver());
    auto result = train_offline(policy, corpus, adv, cfg.epochs, cfg.batch, cfg.seed);
    policy.save(cfg.checkpoint_path());
    write_curve_csv(result.loss_curve, "loss", cfg.loss_path());
  });
}

StageStatus run_train_online(const PipelineConfig& cfg) {
  StageIo io{"train_online",
             {cfg.checkpoint_path(), cfg.checkpoint_path() + ".bin",
              cfg.assignment_path(), cfg.assignment_path() + ".centroids",
              cfg.table_path()},
             {cfg.online_checkpoint_path(), cfg.online_checkpoint_path() + ".bin",
              cfg.online_table_path(), cfg.reward_curve_path()}};
  return run_stage(cfg, io, [&] {
    auto ca = load_assignment(cfg.assignment_path());
    auto table = load_reward_table(cfg.table_path());
    auto policy = PolicyParams::load(cfg.checkpoint_path());
    EnvBundle env = make_env(cfg);
    Player role = cfg.agent_role == "bob" ? Player::kBob : Player::kAlice;

    RolloutBatchFn batch_fn = [&](const PolicyParams& p, uint64_t seed) {
      AgentFn agent = make_policy_agent(p, cfg.embedder, ca);
      auto logs = collect_games(cfg, env, agent, cfg.online_batch, seed, "online",
                                nullptr);
      if (cfg.task == "guess" || cfg.train_player == "both" || cfg.opponent == "self") {
        return logs;
      }
      std::vector<Trajectory> own;
      for (auto& t : logs) {
        if (t.player == role) own.push_back(std::move(t));
      }
      return own;
    };

    OnlineConfig ocfg;
    ocfg.iterations = cfg.online_iterations;
    ocfg.batch = cfg.online_batch;
    ocfg.learning_rate = cfg.online_learning_rate;
    ocfg.refresh_every = cfg.refresh_every;
    ocfg.buffer_capacity = cfg.buffer_capacity;
    auto result = train_online(policy, batch_fn, cfg.embedder, ca, table,
                               env.resolver(), ocfg, Rng::derive(cfg.seed, "online"));
    policy.save(cfg.online_checkpoint_path());
    save_reward_table(table, cfg.online_table_path());
    write_curve_csv(result.reward_curve, "mean_reward", cfg.reward_curve_path());
  });
}

namespace {

struct EvalRow {
  std::string task;
  std::string role;
  std::string metric;
  double value;
  int n;
};

void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "task,role,metric,value,N\n";
  for (const auto& r : rows) {
    out << r.task << "," << r.role << "," << r.metric << ","
        << format_double(r.value) << "," << r.n << "\n";
  }
  write_file(path, out.str());
}

}  // namespace

StageStatus run_eval(const PipelineConfig& cfg) {
  StageIo io{"eval",
             {cfg.checkpoint_path(), cfg.checkpoint_path() + ".bin",
              cfg.assignment_path(), cfg.assignment_path() + ".centroids"},
             {cfg.eval_path()}};
  return run_stage(cfg, io, [&] {
    auto ca = load_assignment(cfg.assignment_path());
    auto policy = PolicyParams::load(cfg.checkpoint_path());
    AgentFn agent = make_policy_agent(policy, cfg.embedder, ca);
    std::vector<EvalRow> rows;
    uint64_t seed = Rng::derive(cfg.seed, "eval");

    if (cfg.task == "guess") {
      EnvBundle env = make_env(cfg);
      auto logs = collect_games(cfg, env, agent, cfg.eval_games, seed, "eval", nullptr);
      rows.push_back({cfg.task, "solo", "average_final_reward",
                      eval_average_final_reward(logs), cfg.eval_games});
    } else {
      EnvBundle env = make_env(cfg);
      std::vector<AdversarialOutcome> outcomes;
      collect_games(cfg, env, agent, cfg.eval_games, seed, "eval", &outcomes);
      bool bargain = cfg.task == "bargain";
      double wr_a = bargain ? eval_win_rate_bargain(outcomes, Player::kAlice)
                            : eval_win_rate_negotiation(outcomes, Player::kAlice);
      double wr_b = bargain ? eval_win_rate_bargain(outcomes, Player::kBob)
                            : eval_win_rate_negotiation(outcomes, Player::kBob);
      rows.push_back({cfg.task, "alice", "win_rate", wr_a, cfg.eval_games});
      rows.push_back({cfg.task, "bob", "win_rate", wr_b, cfg.eval_games});

      if (cfg.eval_grid) {
        // Stand-in for the full benchmark grid: 6 configurations per task,
        // N = 25 games each, agent in its configured role.
        int grid_n = 25;
        int idx = 0;
        if (bargain) {
          for (const auto& spec : bargain_config_grid()) {
            PipelineConfig sub = cfg;
            sub.delta_a = spec.delta_a;
            sub.delta_b = spec.delta_b;
            sub.max_turns = spec.max_rounds;
            EnvBundle genv = make_env(sub);
            std::vector<AdversarialOutcome> gout;
            collect_games(sub, genv, agent, grid_n,
                          Rng::derive(seed, "grid-" + std::to_string(idx)), "grid",
                          &gout);
            rows.push_back({cfg.task, cfg.agent_role,
                            "win_rate_grid_" + std::to_string(idx),
                            eval_win_rate_bargain(gout, cfg.agent_role == "bob"
                                                            ? Player::kBob
                                                            : Player::kAlice),
                            grid_n});
            ++idx;
          }
        } else {
          for (const auto& spec : negotiation_config_grid()) {
            PipelineConfig sub = cfg;
            sub.value_alice = spec.value_alice;
            sub.value_bob = spec.value_bob;
            sub.max_turns = spec.max_rounds;
            EnvBundle genv = make_env(sub);
            std::vector<AdversarialOutcome> gout;
            collect_games(sub, genv, agent, grid_n,
                          Rng::derive(seed, "grid-" + std::to_string(idx)), "grid",
                          &gout);
            rows.push_back({cfg.task, cfg.agent_role,
                            "win_rate_grid_" + std::to_string(idx),
                            eval_win_rate_negotiation(gout, cfg.agent_role == "bob"
                                                                ? Player::kBob
                                                                : Player::kAlice),
                            grid_n});
            ++idx;
          }
        }
      }
    }
    write_eval_csv(rows, cfg.eval_path());
  });
}

StageStatus run_report(const PipelineConfig& cfg) {
  StageIo io{"report",
             {cfg.logs_path(), cfg.assignment_path(), cfg.table_path(),
              cfg.selection_path(), cfg.eval_path()},
             {cfg.report_dir() + "/summary.txt"}};
  return run_stage(cfg, io, [&] {
    auto set = parse_trajectories(cfg.logs_path());
    auto ca = load_assignment(cfg.assignment_path());
    auto table = load_reward_table(cfg.table_path());
    EnvBundle env = make_env(cfg);

    auto subset = training_subset(cfg, set);
    auto adv = assign_advantages(subset, ca, table);
    auto var_report = advantage_variance_report(adv);

    // Gradient-variance comparison under the fresh (uniform) policy.
    PolicyParams probe(env.num_actions(), cfg.window, cfg.learning_rate, cfg.seed);
    auto corpus = resolve_corpus(subset, ca, probe, env.resolver());
    auto grad_report = gradient_variance_report(probe, corpus, adv);

    // Convergence-slope estimate on the action-marginal bandit implied by
    // the logged corpus.
    std::vector<double> action_values(static_cast<size_t>(env.num_actions()), 0.0);
    std::vector<int64_t> action_counts(static_cast<size_t>(env.num_actions()), 0);
    for (size_t i = 0; i < corpus.per_trajectory.size(); ++i) {
      for (size_t t = 0; t < corpus.per_trajectory[i].size(); ++t) {
        int a = corpus.per_trajectory[i][t].action_id;
        action_values[static_cast<size_t>(a)] += adv.per_trajectory[i][t].aggregated;
        action_counts[static_cast<size_t>(a)] += 1;
      }
    }
    for (size_t a = 0; a < action_values.size(); ++a) {
      if (action_counts[a] > 0) action_values[a] /= static_cast<double>(action_counts[a]);
    }
    PolicyParams bandit(env.num_actions(), 0, 1.0, cfg.seed);
    int ctx = bandit.ensure_context(ContextKey{});
    auto slope_report = convergence_slope_check(bandit, ctx, action_values, 0.0,
                                                {64, 256, 1024, 4096}, 50,
                                                Rng::derive(cfg.seed, "report-slope"));

    json sel = json::parse(read_file(cfg.selection_path()));
    std::ostringstream summary;
    summary << "pipeline summary\n";
    summary << "task: " << cfg.task << "\n";
    summary << "k_star: " << sel.at("k_star").get<int>() << "\n";
    summary << "var_raw: " << format_double(var_report.var_raw) << "\n";
    summary << "var_aggregated: " << format_double(var_report.var_aggregated) << "\n";
    summary << "variance_ratio: "
            << format_double(var_report.var_raw > 0.0
                                 ? var_report.var_aggregated / var_report.var_raw
                                 : 1.0)
            << "\n";
    summary << "variance_identity_residual: " << format_double(var_report.residual)
            << "\n";
    summary << "grad_trace_raw: " << format_double(grad_report.trace_raw) << "\n";
    summary << "grad_trace_aggregated: " << format_double(grad_report.trace_aggregated)
            << "\n";
    summary << "grad_trace_ratio: " << format_double(grad_report.ratio) << "\n";
    summary << "slope_estimate: "
            << (slope_report.slope ? format_double(*slope_report.slope) : "degenerate")
            << "\n";
    summary << "eval:\n" << read_file(cfg.eval_path());
    write_file(cfg.report_dir() + "/summary.txt", summary.str());
  });
}

void run_pipeline(const PipelineConfig& cfg) {
  run_collect(cfg);
  run_embed(cfg);
  run_cluster(cfg);
  run_select_k(cfg);
  run_aggregate(cfg);
  run_train(cfg);
  run_train_online(cfg);
  run_eval(cfg);
  run_report(cfg);
}

}  // namespace intentrl
