#include "intentrl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "intentrl/hac.hpp"

namespace intentrl {

using nlohmann::json;

PolicyParams::PolicyParams(int num_actions, int window, double learning_rate,
                           uint64_t seed)
    : num_actions_(num_actions),
      window_(window),
      learning_rate_(learning_rate),
      seed_(seed) {
  if (num_actions < 1) throw ValidationError("policy needs at least one action");
  if (window < 0) throw ValidationError("context window must be >= 0");
}

int PolicyParams::ensure_context(const ContextKey& key) {
  auto it = context_index_.find(key);
  if (it != context_index_.end()) return it->second;
  int id = static_cast<int>(contexts_.size());
  contexts_.push_back(key);
  context_index_.emplace(key, id);
  logits_.resize(logits_.size() + static_cast<size_t>(num_actions_), 0.0);
  return id;
}

std::optional<int> PolicyParams::find_context(const ContextKey& key) const {
  auto it = context_index_.find(key);
  if (it == context_index_.end()) return std::nullopt;
  return it->second;
}

std::vector<double> PolicyParams::probs(int context_id) const {
  if (context_id < 0 || context_id >= num_contexts()) {
    throw ValidationError("unknown context id " + std::to_string(context_id));
  }
  const double* block = logits_.data() + static_cast<size_t>(context_id) * num_actions_;
  double mx = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < num_actions_; ++a) mx = std::max(mx, block[a]);
  std::vector<double> p(static_cast<size_t>(num_actions_));
  double z = 0.0;
  for (int a = 0; a < num_actions_; ++a) {
    p[static_cast<size_t>(a)] = std::exp(block[a] - mx);
    z += p[static_cast<size_t>(a)];
  }
  for (auto& x : p) x /= z;
  return p;
}

int PolicyParams::sample_action(int context_id, Rng& rng) const {
  auto p = probs(context_id);
  double u = rng.uniform();
  double acc = 0.0;
  for (int a = 0; a < num_actions_; ++a) {
    acc += p[static_cast<size_t>(a)];
    if (u < acc) return a;
  }
  return num_actions_ - 1;
}

std::pair<double, std::vector<double>> PolicyParams::log_prob_and_grad(
    int context_id, int action) const {
  if (action < 0 || action >= num_actions_) {
    throw ValidationError("unknown action id " + std::to_string(action));
  }
  auto p = probs(context_id);
  std::vector<double> grad(static_cast<size_t>(num_actions_));
  for (int b = 0; b < num_actions_; ++b) {
    grad[static_cast<size_t>(b)] = (b == action ? 1.0 : 0.0) - p[static_cast<size_t>(b)];
  }
  return {std::log(p[static_cast<size_t>(action)]), std::move(grad)};
}

void PolicyParams::apply_update(const std::vector<double>& direction, double scale) {
  if (direction.size() != logits_.size()) {
    throw std::logic_error("update length does not match parameter count");
  }
  for (size_t i = 0; i < logits_.size(); ++i) logits_[i] += scale * direction[i];
  ++step_;
}

void PolicyParams::save(const std::string& path) const {
  std::string block(reinterpret_cast<const char*>(logits_.data()),
                    logits_.size() * sizeof(double));
  write_file(path + ".bin", block);
  json rec;
  rec["num_actions"] = num_actions_;
  rec["window"] = window_;
  rec["learning_rate"] = learning_rate_;
  rec["seed"] = seed_;
  rec["step"] = step_;
  json ctxs = json::array();
  for (const auto& c : contexts_) ctxs.push_back(c.labels);
  rec["contexts"] = std::move(ctxs);
  rec["logits_checksum"] = hex64(fnv1a64(block));
  write_file(path, rec.dump(2) + "\n");
}

PolicyParams PolicyParams::load(const std::string& path) {
  json rec = json::parse(read_file(path));
  PolicyParams p(rec.at("num_actions").get<int>(), rec.at("window").get<int>(),
                 rec.at("learning_rate").get<double>(),
                 rec.at("seed").get<uint64_t>());
  p.step_ = rec.at("step").get<int64_t>();
  for (const auto& c : rec.at("contexts")) {
    ContextKey key{c.get<std::vector<int32_t>>()};
    p.contexts_.push_back(key);
    p.context_index_.emplace(std::move(key), static_cast<int>(p.contexts_.size()) - 1);
  }
  std::string block = read_file(path + ".bin");
  if (rec.at("logits_checksum").get<std::string>() != hex64(fnv1a64(block))) {
    throw ValidationError("checkpoint logits checksum failure: " + path);
  }
  if (block.size() != p.contexts_.size() * static_cast<size_t>(p.num_actions_) *
                          sizeof(double)) {
    throw ValidationError("checkpoint logits length mismatch: " + path);
  }
  p.logits_.resize(block.size() / sizeof(double));
  std::memcpy(p.logits_.data(), block.data(), block.size());
  return p;
}

ContextKey context_for_step(const ProjectedTrajectory& pt, int t, int window) {
  ContextKey key;
  int first = std::max(1, t - window);
  for (int s = first; s < t; ++s) {
    const StepLabels& sl = pt.labels[static_cast<size_t>(s - 1)];
    key.labels.push_back(sl.action);
    key.labels.push_back(sl.observation.value());
  }
  return key;
}

ResolvedCorpus resolve_corpus(const TrajectorySet& set,
                              const ClusterAssignment& ca, PolicyParams& policy,
                              const ActionResolver& resolver) {
  ResolvedCorpus corpus;
  for (size_t i = 0; i < set.trajectories.size(); ++i) {
    const Trajectory& traj = set.trajectories[i];
    auto pt = project_trajectory(traj, ca, static_cast<int>(i));
    std::vector<ResolvedStep> steps;
    steps.reserve(traj.steps.size());
    for (int t = 1; t <= traj.horizon(); ++t) {
      ResolvedStep rs;
      rs.context_id = policy.ensure_context(context_for_step(pt, t, policy.window()));
      auto action = resolver(traj.steps[static_cast<size_t>(t - 1)].action);
      if (!action) {
        throw ValidationError("unresolvable action in trajectory " +
                              std::to_string(i) + " step " + std::to_string(t) +
                              ": \"" + traj.steps[static_cast<size_t>(t - 1)].action.text +
                              "\"");
      }
      rs.action_id = *action;
      steps.push_back(rs);
    }
    corpus.per_trajectory.push_back(std::move(steps));
  }
  return corpus;
}

namespace {

// Per-trajectory gradient as a sparse (parameter index, value) list in a
// fixed order. Blocks from repeated contexts are merged by index.
std::vector<std::pair<int64_t, double>> trajectory_gradient(
    const PolicyParams& policy, const std::vector<ResolvedStep>& steps,
    const std::vector<AdvantageSet::StepAdv>& advs, bool aggregated) {
  std::unordered_map<int64_t, double> acc;
  std::vector<int64_t> order;
  for (size_t t = 0; t < steps.size(); ++t) {
    auto [logp, grad] = policy.log_prob_and_grad(steps[t].context_id, steps[t].action_id);
    (void)logp;
    double adv = aggregated ? advs[t].aggregated : advs[t].raw;
    int64_t base = static_cast<int64_t>(steps[t].context_id) * policy.num_actions();
    for (int b = 0; b < policy.num_actions(); ++b) {
      auto [it, inserted] = acc.try_emplace(base + b, 0.0);
      if (inserted) order.push_back(base + b);
      it->second += grad[static_cast<size_t>(b)] * adv;
    }
  }
  std::vector<std::pair<int64_t, double>> out;
  out.reserve(order.size());
  for (int64_t idx : order) out.emplace_back(idx, acc.at(idx));
  return out;
}

void check_corpus_shapes(const ResolvedCorpus& corpus, const AdvantageSet& adv) {
  if (corpus.per_trajectory.size() != adv.per_trajectory.size()) {
    throw ValidationError("resolved corpus and advantage set differ in size");
  }
  for (size_t i = 0; i < corpus.per_trajectory.size(); ++i) {
    if (corpus.per_trajectory[i].size() != adv.per_trajectory[i].size()) {
      throw ValidationError("trajectory " + std::to_string(i) +
                            " differs in step count between corpus and advantages");
    }
  }
}

}  // namespace

GradEstimate estimate_policy_gradient(const PolicyParams& policy,
                                      const ResolvedCorpus& corpus,
                                      const AdvantageSet& adv) {
  check_corpus_shapes(corpus, adv);
  GradEstimate est;
  est.n_trajectories = static_cast<int>(corpus.per_trajectory.size());
  est.gradient.assign(static_cast<size_t>(policy.num_params()), 0.0);
  for (size_t i = 0; i < corpus.per_trajectory.size(); ++i) {
    auto tg = trajectory_gradient(policy, corpus.per_trajectory[i],
                                  adv.per_trajectory[i], /*aggregated=*/true);
    for (const auto& [idx, v] : tg) est.gradient[static_cast<size_t>(idx)] += v;
  }
  if (est.n_trajectories > 0) {
    for (auto& g : est.gradient) g /= static_cast<double>(est.n_trajectories);
  }
  for (double g : est.gradient) {
    if (!std::isfinite(g)) throw ValidationError("non-finite policy gradient");
  }
  return est;
}

namespace {

double objective(const PolicyParams& policy, const ResolvedCorpus& corpus,
                 const AdvantageSet& adv) {
  double j = 0.0;
  for (size_t i = 0; i < corpus.per_trajectory.size(); ++i) {
    for (size_t t = 0; t < corpus.per_trajectory[i].size(); ++t) {
      const ResolvedStep& rs = corpus.per_trajectory[i][t];
      auto p = policy.probs(rs.context_id);
      j += std::log(p[static_cast<size_t>(rs.action_id)]) *
           adv.per_trajectory[i][t].aggregated;
    }
  }
  return corpus.per_trajectory.empty()
             ? 0.0
             : j / static_cast<double>(corpus.per_trajectory.size());
}

}  // namespace

TrainResult train_offline(PolicyParams& policy, const ResolvedCorpus& corpus,
                          const AdvantageSet& adv, int epochs, int batch,
                          uint64_t seed) {
  check_corpus_shapes(corpus, adv);
  if (batch < 1) throw ValidationError("train_offline: batch must be >= 1");
  const int n = static_cast<int>(corpus.per_trajectory.size());
  TrainResult result;
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  std::vector<double> grad(static_cast<size_t>(policy.num_params()));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(Rng::derive(seed, "epoch-" + std::to_string(epoch)));
    rng.shuffle(order);
    for (int start = 0; start < n; start += batch) {
      int end = std::min(n, start + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (int idx = start; idx < end; ++idx) {
        int i = order[static_cast<size_t>(idx)];
        auto tg = trajectory_gradient(policy, corpus.per_trajectory[static_cast<size_t>(i)],
                                      adv.per_trajectory[static_cast<size_t>(i)],
                                      /*aggregated=*/true);
        for (const auto& [pidx, v] : tg) grad[static_cast<size_t>(pidx)] += v;
      }
      double scale = policy.learning_rate() / static_cast<double>(end - start);
      policy.apply_update(grad, scale);
    }
    double loss = -objective(policy, corpus, adv);
    if (!std::isfinite(loss)) {
      throw ValidationError("train_offline: non-finite loss at epoch " +
                            std::to_string(epoch) + " (lr=" +
                            format_double(policy.learning_rate()) + ")");
    }
    result.loss_curve.push_back(loss);
  }
  return result;
}

namespace {

struct VarianceAccumulator {
  double mean = 0.0;
  double m2 = 0.0;
  int64_t count = 0;

  void add(double x) {
    ++count;
    double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }
  double population_variance() const {
    return count > 0 ? m2 / static_cast<double>(count) : 0.0;
  }
};

}  // namespace

AdvantageVarianceReport advantage_variance_report(const AdvantageSet& adv) {
  AdvantageVarianceReport report;
  VarianceAccumulator raw, agg;
  std::unordered_map<int, VarianceAccumulator> per_key;
  int64_t total = 0;
  for (const auto& traj : adv.per_trajectory) {
    for (const auto& s : traj) {
      raw.add(s.raw);
      agg.add(s.aggregated);
      per_key[s.key_id].add(s.raw);
      ++total;
    }
  }
  report.var_raw = raw.population_variance();
  report.var_aggregated = agg.population_variance();
  double within = 0.0;
  for (int key_id = 0; key_id < static_cast<int>(adv.keys.size()); ++key_id) {
    auto it = per_key.find(key_id);
    if (it == per_key.end()) continue;
    within += static_cast<double>(it->second.count) * it->second.population_variance();
  }
  report.expected_within = total > 0 ? within / static_cast<double>(total) : 0.0;
  report.residual = std::abs(report.var_raw - report.var_aggregated -
                             report.expected_within);
  return report;
}

GradientVarianceReport gradient_variance_report(const PolicyParams& policy,
                                                const ResolvedCorpus& corpus,
                                                const AdvantageSet& adv) {
  check_corpus_shapes(corpus, adv);
  const int n = static_cast<int>(corpus.per_trajectory.size());
  if (n == 0) throw ValidationError("gradient_variance_report: empty corpus");

  auto trace_for = [&](bool aggregated) {
    std::vector<std::vector<std::pair<int64_t, double>>> grads;
    grads.reserve(static_cast<size_t>(n));
    std::vector<double> mean(static_cast<size_t>(policy.num_params()), 0.0);
    for (int i = 0; i < n; ++i) {
      grads.push_back(trajectory_gradient(policy, corpus.per_trajectory[static_cast<size_t>(i)],
                                          adv.per_trajectory[static_cast<size_t>(i)],
                                          aggregated));
      for (const auto& [idx, v] : grads.back()) mean[static_cast<size_t>(idx)] += v;
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    // trace of the population covariance: (1/n) sum ||g_i - mean||^2.
    double trace = 0.0;
    std::vector<double> scratch(mean.size());
    for (const auto& g : grads) {
      std::copy(mean.begin(), mean.end(), scratch.begin());
      for (const auto& [idx, v] : g) scratch[static_cast<size_t>(idx)] -= v;
      double s = 0.0;
      for (double x : scratch) s += x * x;
      trace += s;
    }
    return trace / static_cast<double>(n);
  };

  GradientVarianceReport report;
  report.trace_raw = trace_for(false);
  report.trace_aggregated = trace_for(true);
  report.ratio = report.trace_raw > 0.0 ? report.trace_aggregated / report.trace_raw : 1.0;
  return report;
}

SlopeReport convergence_slope_check(const PolicyParams& policy, int context_id,
                                    const std::vector<double>& values,
                                    double noise_sd, const std::vector<int>& n_grid,
                                    int replicates, uint64_t seed) {
  if (static_cast<int>(values.size()) != policy.num_actions()) {
    throw ValidationError("convergence_slope_check: one value per action required");
  }
  auto p = policy.probs(context_id);
  const int na = policy.num_actions();

  // Exact gradient of the single-context objective.
  std::vector<double> true_grad(static_cast<size_t>(na), 0.0);
  for (int a = 0; a < na; ++a) {
    auto [logp, grad] = policy.log_prob_and_grad(context_id, a);
    (void)logp;
    for (int b = 0; b < na; ++b) {
      true_grad[static_cast<size_t>(b)] +=
          p[static_cast<size_t>(a)] * grad[static_cast<size_t>(b)] * values[static_cast<size_t>(a)];
    }
  }

  SlopeReport report;
  for (int n : n_grid) {
    double err_sum = 0.0;
    for (int rep = 0; rep < replicates; ++rep) {
      Rng rng(Rng::derive(seed, "slope-" + std::to_string(n) + "-" + std::to_string(rep)));
      std::vector<double> est(static_cast<size_t>(na), 0.0);
      for (int i = 0; i < n; ++i) {
        int a = policy.sample_action(context_id, rng);
        double value = values[static_cast<size_t>(a)];
        if (noise_sd > 0.0) value += noise_sd * rng.normal();
        auto [logp, grad] = policy.log_prob_and_grad(context_id, a);
        (void)logp;
        for (int b = 0; b < na; ++b) est[static_cast<size_t>(b)] += grad[static_cast<size_t>(b)] * value;
      }
      double s = 0.0;
      for (int b = 0; b < na; ++b) {
        double diff = est[static_cast<size_t>(b)] / static_cast<double>(n) -
                      true_grad[static_cast<size_t>(b)];
        s += diff * diff;
      }
      err_sum += std::sqrt(s);
    }
    report.mean_errors.emplace_back(n, err_sum / static_cast<double>(replicates));
  }

  bool degenerate = true;
  for (const auto& [_, err] : report.mean_errors) {
    if (err > 1e-14) degenerate = false;
  }
  if (!degenerate && report.mean_errors.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    double m = static_cast<double>(report.mean_errors.size());
    for (const auto& [n, err] : report.mean_errors) {
      double x = std::log(static_cast<double>(n));
      double y = std::log(err);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    report.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  }
  return report;
}

std::vector<std::string> TabularMdpSpec::validate() const {
  std::vector<std::string> v;
  if (num_states < 1 || num_actions < 1) {
    v.push_back("spec needs at least one state and one action");
    return v;
  }
  if (static_cast<int>(action_cluster.size()) != num_actions) {
    v.push_back("action_cluster must map every action");
    return v;
  }
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      const double* p = row(s, a);
      double sum = 0.0;
      for (int t = 0; t < num_states; ++t) sum += p[t];
      if (std::abs(sum - 1.0) > 1e-12) {
        v.push_back("transition row (s=" + std::to_string(s) + ", a=" +
                    std::to_string(a) + ") sums to " + format_double(sum));
      }
    }
  }
  for (int a = 0; a < num_actions; ++a) {
    for (int b = a + 1; b < num_actions; ++b) {
      if (action_cluster[static_cast<size_t>(a)] != action_cluster[static_cast<size_t>(b)]) {
        continue;
      }
      for (int s = 0; s < num_states; ++s) {
        double rdiff = std::abs(r(s, a) - r(s, b));
        if (rdiff > epsilon + 1e-12) {
          v.push_back("actions " + std::to_string(a) + " and " + std::to_string(b) +
                      " in one cluster have reward spread " + format_double(rdiff) +
                      " > epsilon at state " + std::to_string(s));
        }
        double tv = 0.0;
        const double* pa = row(s, a);
        const double* pb = row(s, b);
        for (int t = 0; t < num_states; ++t) tv += std::abs(pa[t] - pb[t]);
        tv *= 0.5;
        if (tv > epsilon + 1e-12) {
          v.push_back("actions " + std::to_string(a) + " and " + std::to_string(b) +
                      " in one cluster have transition TV " + format_double(tv) +
                      " > epsilon at state " + std::to_string(s));
        }
      }
    }
  }
  return v;
}

namespace {

std::vector<std::vector<double>> state_policies(const TabularMdpSpec& spec,
                                                const PolicyParams& policy) {
  std::vector<std::vector<double>> pi;
  pi.reserve(static_cast<size_t>(spec.num_states));
  if (policy.num_actions() != spec.num_actions) {
    throw ValidationError("policy action count does not match the MDP spec");
  }
  for (int s = 0; s < spec.num_states; ++s) {
    ContextKey key{{s}};
    auto id = policy.find_context(key);
    if (!id) {
      throw ValidationError("policy missing context for state " + std::to_string(s));
    }
    pi.push_back(policy.probs(*id));
  }
  return pi;
}

}  // namespace

std::vector<double> policy_q_values(const TabularMdpSpec& spec,
                                    const PolicyParams& policy, double tol) {
  auto pi = state_policies(spec, policy);
  const int S = spec.num_states, A = spec.num_actions;
  std::vector<double> q(static_cast<size_t>(S) * A, 0.0);
  std::vector<double> value(static_cast<size_t>(S), 0.0);
  for (int iter = 0; iter < 1000000; ++iter) {
    for (int s = 0; s < S; ++s) {
      double v = 0.0;
      for (int a = 0; a < A; ++a) {
        v += pi[static_cast<size_t>(s)][static_cast<size_t>(a)] *
             q[static_cast<size_t>(s) * A + a];
      }
      value[static_cast<size_t>(s)] = v;
    }
    double max_delta = 0.0;
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        const double* p = spec.row(s, a);
        double next = 0.0;
        for (int t = 0; t < S; ++t) next += p[t] * value[static_cast<size_t>(t)];
        double updated = spec.r(s, a) + spec.discount * next;
        max_delta = std::max(max_delta, std::abs(updated - q[static_cast<size_t>(s) * A + a]));
        q[static_cast<size_t>(s) * A + a] = updated;
      }
    }
    if (max_delta <= tol) break;
  }
  return q;
}

BiasReport measure_gradient_bias(const TabularMdpSpec& spec,
                                 const PolicyParams& policy) {
  auto violations = spec.validate();
  if (!violations.empty()) {
    throw ValidationError("MDP spec violates epsilon-bisimilarity: " +
                          violations.front());
  }
  if (!(spec.discount < 1.0)) {
    throw ValidationError("measure_gradient_bias requires discount < 1");
  }
  auto pi = state_policies(spec, policy);
  auto q = policy_q_values(spec, policy);
  const int S = spec.num_states, A = spec.num_actions;

  // Discounted state occupancy from the initial distribution.
  std::vector<double> occupancy(spec.initial.begin(), spec.initial.end());
  std::vector<double> layer(spec.initial.begin(), spec.initial.end());
  std::vector<double> next(static_cast<size_t>(S));
  for (int iter = 0; iter < 1000000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < S; ++s) {
      if (layer[static_cast<size_t>(s)] == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        double w = layer[static_cast<size_t>(s)] *
                   pi[static_cast<size_t>(s)][static_cast<size_t>(a)] * spec.discount;
        const double* p = spec.row(s, a);
        for (int t = 0; t < S; ++t) next[static_cast<size_t>(t)] += w * p[t];
      }
    }
    double total = 0.0;
    for (int t = 0; t < S; ++t) {
      occupancy[static_cast<size_t>(t)] += next[static_cast<size_t>(t)];
      total += next[static_cast<size_t>(t)];
    }
    layer = next;
    if (total <= 1e-14) break;
  }
  double occ_total = 0.0;
  for (double o : occupancy) occ_total += o;
  for (auto& o : occupancy) o /= occ_total;

  // Cluster-averaged Q per state, weighted by the policy. When all values
  // in a cluster are identical the mean is taken exactly.
  std::vector<int> clusters;
  for (int c : spec.action_cluster) {
    if (std::find(clusters.begin(), clusters.end(), c) == clusters.end()) {
      clusters.push_back(c);
    }
  }

  BiasReport report;
  report.epsilon = spec.epsilon;
  report.q_spread_bound = 2.0 * spec.epsilon / (1.0 - spec.discount);
  report.bias.assign(static_cast<size_t>(policy.num_params()), 0.0);

  double max_grad_norm = 0.0;
  for (int s = 0; s < S; ++s) {
    std::unordered_map<int, double> cluster_mean;
    for (int c : clusters) {
      double wsum = 0.0, vsum = 0.0;
      bool first = true, all_equal = true;
      double first_q = 0.0;
      for (int a = 0; a < A; ++a) {
        if (spec.action_cluster[static_cast<size_t>(a)] != c) continue;
        double qa = q[static_cast<size_t>(s) * A + a];
        if (first) {
          first_q = qa;
          first = false;
        } else if (qa != first_q) {
          all_equal = false;
        }
        wsum += pi[static_cast<size_t>(s)][static_cast<size_t>(a)];
        vsum += pi[static_cast<size_t>(s)][static_cast<size_t>(a)] * qa;
      }
      cluster_mean[c] = all_equal ? first_q : (wsum > 0.0 ? vsum / wsum : 0.0);
    }
    for (int c : clusters) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < A; ++a) {
        if (spec.action_cluster[static_cast<size_t>(a)] != c) continue;
        lo = std::min(lo, q[static_cast<size_t>(s) * A + a]);
        hi = std::max(hi, q[static_cast<size_t>(s) * A + a]);
      }
      if (hi > lo) report.max_q_spread = std::max(report.max_q_spread, hi - lo);
    }

    ContextKey key{{s}};
    int ctx = *policy.find_context(key);
    int64_t base = static_cast<int64_t>(ctx) * A;
    for (int a = 0; a < A; ++a) {
      auto [logp, grad] = policy.log_prob_and_grad(ctx, a);
      (void)logp;
      double gnorm = 0.0;
      for (double g : grad) gnorm += g * g;
      max_grad_norm = std::max(max_grad_norm, std::sqrt(gnorm));
      double qa = q[static_cast<size_t>(s) * A + a];
      double diff = qa - cluster_mean.at(spec.action_cluster[static_cast<size_t>(a)]);
      double w = occupancy[static_cast<size_t>(s)] *
                 pi[static_cast<size_t>(s)][static_cast<size_t>(a)];
      if (diff != 0.0) {
        for (int b = 0; b < A; ++b) {
          report.bias[static_cast<size_t>(base + b)] += w * grad[static_cast<size_t>(b)] * diff;
        }
      }
    }
  }
  double norm = 0.0;
  for (double b : report.bias) norm += b * b;
  report.bias_norm = std::sqrt(norm);
  report.theoretical_c = 2.0 * max_grad_norm / (1.0 - spec.discount);
  return report;
}

OnlineResult train_online(PolicyParams& policy, const RolloutBatchFn& rollout_batch,
                          const EmbedderConfig& embed_cfg,
                          const ClusterAssignment& ca, RewardTable& table,
                          const ActionResolver& resolver, const OnlineConfig& cfg,
                          uint64_t seed) {
  OnlineResult result;
  std::unordered_map<std::string, int> label_cache;
  auto label_of = [&](const std::string& text) {
    auto it = label_cache.find(text);
    if (it != label_cache.end()) return it->second;
    auto vec = embed_texts(embed_cfg, {text});
    int label = nearest_centroid_assign(ca, vec.front());
    label_cache.emplace(text, label);
    return label;
  };
  auto project_by_centroid = [&](const Trajectory& traj) {
    ProjectedTrajectory pt;
    pt.horizon = traj.horizon();
    pt.terminal_reward = traj.terminal_reward;
    for (const auto& step : traj.steps) {
      StepLabels sl;
      sl.action = label_of(step.action.text);
      if (step.observation) sl.observation = label_of(step.observation->text);
      pt.labels.push_back(sl);
    }
    return pt;
  };

  std::deque<Trajectory> buffer;
  std::vector<double> grad(static_cast<size_t>(policy.num_params()));

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    auto batch = rollout_batch(policy, Rng::derive(seed, "online-" + std::to_string(iter)));
    if (batch.empty()) throw ValidationError("train_online: empty rollout batch");

    double reward_sum = 0.0;
    grad.assign(static_cast<size_t>(policy.num_params()), 0.0);
    for (const auto& traj : batch) {
      reward_sum += traj.terminal_reward;
      auto pt = project_by_centroid(traj);
      std::unordered_map<int64_t, double> acc;
      std::vector<int64_t> touched;
      for (int t = 1; t <= pt.horizon; ++t) {
        IntentionKey key = intention_key(pt, t);
        const RewardStats* st = table.find(key);
        double advantage = st != nullptr ? st->mean : table.global_mean;
        int ctx = policy.ensure_context(context_for_step(pt, t, policy.window()));
        auto action = resolver(traj.steps[static_cast<size_t>(t - 1)].action);
        if (!action) {
          throw ValidationError("train_online: unresolvable action \"" +
                                traj.steps[static_cast<size_t>(t - 1)].action.text + "\"");
        }
        auto [logp, g] = policy.log_prob_and_grad(ctx, *action);
        (void)logp;
        int64_t base = static_cast<int64_t>(ctx) * policy.num_actions();
        for (int b = 0; b < policy.num_actions(); ++b) {
          auto [it, inserted] = acc.try_emplace(base + b, 0.0);
          if (inserted) touched.push_back(base + b);
          it->second += g[static_cast<size_t>(b)] * advantage;
        }
      }
      if (grad.size() < static_cast<size_t>(policy.num_params())) {
        grad.resize(static_cast<size_t>(policy.num_params()), 0.0);
      }
      for (int64_t idx : touched) grad[static_cast<size_t>(idx)] += acc.at(idx);
    }
    grad.resize(static_cast<size_t>(policy.num_params()), 0.0);
    policy.apply_update(grad, cfg.learning_rate / static_cast<double>(batch.size()));
    result.reward_curve.push_back(reward_sum / static_cast<double>(batch.size()));

    for (const auto& traj : batch) {
      buffer.push_back(traj);
      if (static_cast<int>(buffer.size()) > cfg.buffer_capacity) buffer.pop_front();
    }
    if (cfg.refresh_every > 0 && (iter + 1) % cfg.refresh_every == 0) {
      std::vector<std::pair<IntentionKey, double>> pairs;
      for (const auto& traj : buffer) {
        auto pt = project_by_centroid(traj);
        auto rewards = discount_rewards(traj, table.gamma);
        for (int t = 1; t <= pt.horizon; ++t) {
          pairs.emplace_back(intention_key(pt, t), rewards[static_cast<size_t>(t - 1)]);
        }
      }
      table = build_reward_table_from_pairs(pairs, table.k, table.gamma);
    }
  }
  return result;
}

void write_curve_csv(const std::vector<double>& values, const std::string& column,
                     const std::string& path) {
  std::ostringstream out;
  out << "index," << column << "\n";
  for (size_t i = 0; i < values.size(); ++i) {
    out << i << "," << format_double(values[i]) << "\n";
  }
  write_file(path, out.str());
}

}  // namespace intentrl
