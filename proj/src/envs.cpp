#include "intentrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace intentrl {

namespace {

const std::vector<std::string>& filler_prefixes() {
  static const std::vector<std::string> v = {"well, ", "hmm, ", "okay, ",
                                             "right, "};
  return v;
}

const std::vector<std::string>& filler_suffixes() {
  static const std::vector<std::string> v = {", if you please", ", i suppose",
                                             ", to be clear"};
  return v;
}

// variant -> canonical word
const std::map<std::string, std::string>& synonym_canonical() {
  static const std::map<std::string, std::string> v = {
      {"object", "item"},   {"thing", "item"},    {"cash", "money"},
      {"funds", "money"},   {"division", "split"}, {"share-out", "split"},
      {"proposal", "offer"}, {"bid", "offer"},     {"figure", "price"},
      {"sum", "price"},      {"bargain", "deal"},  {"pact", "deal"},
  };
  return v;
}

// canonical -> variants
const std::map<std::string, std::vector<std::string>>& synonym_variants() {
  static const std::map<std::string, std::vector<std::string>> v = [] {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [variant, canon] : synonym_canonical()) {
      out[canon].push_back(variant);
    }
    return out;
  }();
  return v;
}

std::string canonicalize_words(const std::string& text) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string word;
  bool first = true;
  while (in >> word) {
    auto it = synonym_canonical().find(word);
    if (!first) out << ' ';
    out << (it == synonym_canonical().end() ? word : it->second);
    first = false;
  }
  return out.str();
}

std::string strip_fillers(const std::string& text) {
  std::string s = text;
  for (const auto& p : filler_prefixes()) {
    if (s.rfind(p, 0) == 0) {
      s = s.substr(p.size());
      break;
    }
  }
  for (const auto& p : filler_suffixes()) {
    if (s.size() >= p.size() && s.compare(s.size() - p.size(), p.size(), p) == 0) {
      s = s.substr(0, s.size() - p.size());
      break;
    }
  }
  return s;
}

}  // namespace

std::string IntentTemplateBank::render(int intent, Rng& rng) const {
  if (intent < 0 || intent >= size()) {
    throw ValidationError("render: intent " + std::to_string(intent) +
                          " outside the template bank");
  }
  const auto& templates = intents[static_cast<size_t>(intent)].templates;
  std::string text = templates[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int64_t>(templates.size()) - 1))];

  if (noise_level >= 2) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string word;
    bool first = true;
    while (in >> word) {
      auto it = synonym_variants().find(word);
      if (it != synonym_variants().end() && rng.uniform() < 0.35) {
        word = it->second[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(it->second.size()) - 1))];
      }
      if (!first) out << ' ';
      out << word;
      first = false;
    }
    text = out.str();
  }
  if (noise_level >= 1 && rng.uniform() < 0.5) {
    text = rng.choice(filler_prefixes()) + text;
  }
  if (noise_level >= 2 && rng.uniform() < 0.3) {
    text += rng.choice(filler_suffixes());
  }
  return text;
}

std::optional<int> IntentTemplateBank::classify(const std::string& text) const {
  std::string normalized = canonicalize_words(strip_fillers(trim(text)));
  for (int i = 0; i < size(); ++i) {
    for (const auto& tmpl : intents[static_cast<size_t>(i)].templates) {
      if (canonicalize_words(tmpl) == normalized) return i;
    }
  }
  return std::nullopt;
}

std::vector<std::string> IntentTemplateBank::validate() const {
  std::vector<std::string> v;
  std::map<std::string, std::string> seen;  // normalized template -> intent name
  for (const auto& intent : intents) {
    if (intent.templates.size() < 2) {
      v.push_back("intent \"" + intent.name + "\" needs at least 2 templates");
    }
    for (const auto& tmpl : intent.templates) {
      std::string normalized = canonicalize_words(tmpl);
      auto [it, inserted] = seen.emplace(normalized, intent.name);
      if (!inserted && it->second != intent.name) {
        v.push_back("template \"" + tmpl + "\" appears under both \"" +
                    it->second + "\" and \"" + intent.name + "\"");
      }
      for (const auto& p : filler_prefixes()) {
        if (tmpl.rfind(p, 0) == 0) {
          v.push_back("template \"" + tmpl + "\" starts with a filler prefix");
        }
      }
    }
  }
  return v;
}

std::vector<std::pair<std::string, int>> IntentTemplateBank::labelled_templates()
    const {
  std::vector<std::pair<std::string, int>> out;
  for (int i = 0; i < size(); ++i) {
    for (const auto& tmpl : intents[static_cast<size_t>(i)].templates) {
      out.emplace_back(tmpl, i);
    }
  }
  return out;
}

AgentFn random_agent(int num_intents) {
  return [num_intents](const AgentView&, Rng& rng) {
    return static_cast<int>(rng.uniform_int(0, num_intents - 1));
  };
}

// ---------------------------------------------------------------------------
// Guess game.

namespace {

// Attribute phrases carry the bulk of each question's character n-grams,
// so paraphrases of one attribute land near each other in embedding space
// while different attributes stay apart.
const std::vector<std::string>& attribute_phrases() {
  static const std::vector<std::string> v = {
      "polished metal",        "brittle china",        "ancient weathered stone",
      "faint glowing light",   "hollow empty shell",   "bold painted stripes",
      "hefty bulky weight",    "foldable flat square", "strong magnet pull",
      "sharp prickly spines",  "sweet perfume scent",  "constant rattling clamor",
      "slippery oily surface", "clear window glass",   "soft fuzzy fleece",
      "jagged angular corners"};
  return v;
}

const std::vector<std::string>& decoy_phrases() {
  static const std::vector<std::string> v = {
      "weather chatter", "lunch gossip",    "sports banter",
      "highway complaints", "garden musings", "holiday daydreams"};
  return v;
}

IntentTemplateBank make_guess_action_bank(int num_attributes, int num_decoys,
                                          int noise_level) {
  // Framings stay much shorter than the attribute phrases so the anchor
  // dominates each question's n-gram profile.
  static const std::vector<std::string> prefixes = {"is it", "i ask", "say",
                                                    "so"};
  static const std::vector<std::string> suffixes = {"yes or no", "right",
                                                    "maybe", "truly"};
  IntentTemplateBank bank;
  bank.noise_level = noise_level;
  for (int q = 0; q < num_attributes; ++q) {
    const std::string& w = attribute_phrases()[static_cast<size_t>(q)];
    IntentTemplateBank::Intent intent;
    intent.name = "ask:" + w;
    intent.templates = {
        prefixes[static_cast<size_t>(q % 4)] + " " + w,
        w + " " + suffixes[static_cast<size_t>(q % 4)],
        prefixes[static_cast<size_t>((q + 2) % 4)] + " " + w,
        w + " " + suffixes[static_cast<size_t>((q + 1) % 4)],
    };
    bank.intents.push_back(std::move(intent));
  }
  IntentTemplateBank::Intent guess;
  guess.name = "guess";
  guess.templates = {
      "the final guess",
      "here is the final guess",
      "the final guess arrives",
      "making the final guess",
  };
  bank.intents.push_back(std::move(guess));
  static const std::vector<std::string> decoy_frames = {
      "just some", "pardon the", "excuse my", "now for some"};
  for (int i = 0; i < num_decoys; ++i) {
    const std::string& w = decoy_phrases()[static_cast<size_t>(i)];
    IntentTemplateBank::Intent decoy;
    decoy.name = "decoy:" + w;
    for (const auto& frame : decoy_frames) {
      decoy.templates.push_back(frame + " " + w);
    }
    bank.intents.push_back(std::move(decoy));
  }
  return bank;
}

IntentTemplateBank make_guess_observation_bank(int noise_level) {
  IntentTemplateBank bank;
  bank.noise_level = noise_level;
  bank.intents.push_back(
      {"yes", {"yes truly yes", "yes indeed yes", "yes certainly yes",
               "yes assuredly yes"}});
  bank.intents.push_back(
      {"no", {"no never no", "no surely no", "no decidedly no",
              "no absolutely no"}});
  bank.intents.push_back(
      {"invalid", {"invalid question i am afraid", "invalid that was settled",
                   "invalid ask another way", "invalid cannot answer twice"}});
  return bank;
}

}  // namespace

GuessGame::GuessGame(GuessGameSpec spec) : spec_(spec) {
  if (spec_.num_items < 2) throw ValidationError("guess game needs >= 2 items");
  num_attributes_ = 1;
  while ((1 << num_attributes_) < spec_.num_items) ++num_attributes_;
  if (num_attributes_ > static_cast<int>(attribute_phrases().size())) {
    throw ValidationError("guess game item set too large for the attribute bank");
  }
  if (spec_.num_decoys < 0 ||
      spec_.num_decoys > static_cast<int>(decoy_phrases().size())) {
    throw ValidationError("guess game supports at most " +
                          std::to_string(decoy_phrases().size()) + " decoys");
  }
  actions_ = make_guess_action_bank(num_attributes_, spec_.num_decoys,
                                    spec_.noise_level);
  observations_ = make_guess_observation_bank(spec_.noise_level);
}

bool GuessGame::oracle_answer(int item, int attribute) const {
  return ((item >> attribute) & 1) != 0;
}

GuessOutcome GuessGame::rollout(const AgentFn& agent, const std::string& game_id,
                                uint64_t seed) const {
  Rng rng(seed);
  const int hidden = static_cast<int>(rng.uniform_int(0, spec_.num_items - 1));

  std::vector<int> candidates(static_cast<size_t>(spec_.num_items));
  for (int i = 0; i < spec_.num_items; ++i) candidates[static_cast<size_t>(i)] = i;
  std::set<int> asked;

  Trajectory traj;
  traj.game_id = game_id;
  traj.task = Task::kGuess;
  traj.player = Player::kSolo;

  AgentView view;
  bool success = false;
  for (int t = 1; t <= spec_.max_turns; ++t) {
    view.turn = t;
    int intent = agent(view, rng);
    if (intent < 0 || intent >= actions_.size()) {
      throw ValidationError("game " + game_id + ": agent emitted intent " +
                            std::to_string(intent) + " outside the template bank");
    }
    Step step;
    step.t = t;
    step.action = Utterance{actions_.render(intent, rng), Speaker::kAgent, 0};

    std::optional<int> obs_intent;
    if (is_decoy(intent)) {
      obs_intent = 2;  // off-topic: invalid, a wasted turn
    } else if (intent < num_attributes_) {
      if (asked.count(intent) > 0) {
        obs_intent = 2;  // invalid: already answered, no reward effect
      } else {
        asked.insert(intent);
        bool answer = oracle_answer(hidden, intent);
        obs_intent = answer ? 0 : 1;
        std::vector<int> kept;
        for (int c : candidates) {
          if (oracle_answer(c, intent) == answer) kept.push_back(c);
        }
        candidates = std::move(kept);
        if (candidates.size() == 1) success = true;  // uniquely determined
      }
    } else {
      int pick = candidates[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(candidates.size()) - 1))];
      if (pick == hidden) {
        success = true;  // terminal, no observation on the final step
      } else {
        candidates.erase(std::find(candidates.begin(), candidates.end(), pick));
        obs_intent = 1;
      }
    }

    if (success) {
      if (intent < num_attributes_ && obs_intent) {
        step.observation =
            Utterance{observations_.render(*obs_intent, rng), Speaker::kEnvironment, 0};
      }
      traj.steps.push_back(std::move(step));
      break;
    }
    step.observation =
        Utterance{observations_.render(*obs_intent, rng), Speaker::kEnvironment, 0};
    view.history.push_back(TextTurn{step.action.text, step.observation->text});
    traj.steps.push_back(std::move(step));
  }
  traj.terminal_reward = success ? 1.0 : 0.0;
  return GuessOutcome{std::move(traj), success};
}

AgentFn scripted_guess_agent(const GuessGame& game) {
  const IntentTemplateBank& obs_bank = game.observations();
  int num_attributes = game.num_attributes();
  int guess = game.guess_intent();
  return [&obs_bank, num_attributes, guess](const AgentView& view, Rng&) {
    // Count informative answers; re-asks are classified as invalid.
    int next = 0;
    for (const auto& turn : view.history) {
      if (!turn.observation_text) continue;
      auto intent = obs_bank.classify(*turn.observation_text);
      if (intent && *intent != 2) ++next;
    }
    return next < num_attributes ? next : guess;
  };
}

// ---------------------------------------------------------------------------
// Bargain game.

namespace {

// Offer levels use fully distinct number wordings and per-level phrasings;
// the number word is the lexical anchor that keeps paraphrases of one
// offer level together under clustering.
struct ShareLevel {
  int percent;
  std::vector<std::string> templates;
};

const std::vector<ShareLevel>& share_level_bank() {
  // Every level carries a long distinctive anchor phrase; framings around
  // it stay short so the anchor dominates the n-gram profile.
  static const std::vector<ShareLevel> v = {
      {30,
       {"a skinny thirty slice for me", "i claim a skinny thirty slice",
        "a skinny thirty slice then", "grant me a skinny thirty slice"}},
      {40,
       {"a frugal forty wedge for me", "i claim a frugal forty wedge",
        "a frugal forty wedge then", "grant me a frugal forty wedge"}},
      {50,
       {"the even merry halves", "i claim the even merry halves",
        "the even merry halves then", "make it the even merry halves"}},
      {55,
       {"fifty five plus whisker for me", "i claim fifty five plus whisker",
        "fifty five plus whisker then", "grant me fifty five plus whisker"}},
      {60,
       {"a solid sixty chunk for me", "i claim a solid sixty chunk",
        "a solid sixty chunk then", "grant me a solid sixty chunk"}},
      {70,
       {"the mighty seventy heap for me", "i claim the mighty seventy heap",
        "the mighty seventy heap then", "grant me the mighty seventy heap"}},
  };
  return v;
}

IntentTemplateBank make_bargain_action_bank(int noise_level) {
  IntentTemplateBank bank;
  bank.noise_level = noise_level;
  for (const auto& level : share_level_bank()) {
    IntentTemplateBank::Intent intent;
    intent.name = "offer:" + std::to_string(level.percent);
    intent.templates = level.templates;
    bank.intents.push_back(std::move(intent));
  }
  IntentTemplateBank::Intent accept;
  accept.name = "accept";
  accept.templates = {
      "i accept the terms in full",
      "accept the terms in full gladly",
      "accept the terms in full and close",
      "fine accept the terms in full",
  };
  bank.intents.push_back(std::move(accept));
  return bank;
}

struct Move {
  Player player;
  int intent;
  std::string text;
};

// Assembles each player's trajectory from the alternating move list: a
// step's observation is the opponent's following move.
void split_moves(const std::vector<Move>& moves, Task task, const std::string& game_id,
                 double reward_a, double reward_b, Trajectory* alice,
                 Trajectory* bob) {
  alice->game_id = game_id;
  alice->task = task;
  alice->player = Player::kAlice;
  alice->terminal_reward = reward_a;
  bob->game_id = game_id;
  bob->task = task;
  bob->player = Player::kBob;
  bob->terminal_reward = reward_b;
  for (size_t i = 0; i < moves.size(); ++i) {
    Trajectory* own = moves[i].player == Player::kAlice ? alice : bob;
    Step step;
    step.t = own->horizon() + 1;
    step.action = Utterance{moves[i].text, Speaker::kAgent, 0};
    if (i + 1 < moves.size()) {
      step.observation =
          Utterance{moves[i + 1].text, Speaker::kEnvironment, 0};
    }
    own->steps.push_back(std::move(step));
  }
}

AgentView view_for(const std::vector<Move>& moves, Player player) {
  AgentView view;
  std::optional<size_t> last_own;
  for (size_t i = 0; i < moves.size(); ++i) {
    if (moves[i].player != player) continue;
    TextTurn turn;
    turn.action_text = moves[i].text;
    if (i + 1 < moves.size()) turn.observation_text = moves[i + 1].text;
    view.history.push_back(std::move(turn));
    last_own = i;
  }
  if (!moves.empty() && moves.back().player != player) {
    view.pending_text = moves.back().text;
  }
  view.turn = static_cast<int>(view.history.size()) + 1;
  (void)last_own;
  return view;
}

}  // namespace

BargainGame::BargainGame(BargainSpec spec) : spec_(spec) {
  if (spec_.max_rounds < 1) throw ValidationError("bargain needs max_rounds >= 1");
  if (!(spec_.delta_a > 0.0 && spec_.delta_a <= 1.0) ||
      !(spec_.delta_b > 0.0 && spec_.delta_b <= 1.0)) {
    throw ValidationError("bargain discount factors must lie in (0, 1]");
  }
  actions_ = make_bargain_action_bank(spec_.noise_level);
  for (const auto& level : share_level_bank()) share_levels_.push_back(level.percent);
}

int BargainGame::accept_intent() const { return actions_.size() - 1; }

std::optional<double> BargainGame::share_of_intent(int intent) const {
  if (intent < 0 || intent >= static_cast<int>(share_levels_.size())) {
    return std::nullopt;
  }
  return share_levels_[static_cast<size_t>(intent)] / 100.0;
}

int BargainGame::intent_for_share(int percent) const {
  for (size_t i = 0; i < share_levels_.size(); ++i) {
    if (share_levels_[i] == percent) return static_cast<int>(i);
  }
  throw ValidationError("no offer level for " + std::to_string(percent) + " percent");
}

AdversarialOutcome BargainGame::rollout(const AgentFn& alice, const AgentFn& bob,
                                        const std::string& game_id,
                                        uint64_t seed) const {
  Rng rng(seed);
  std::vector<Move> moves;
  AdversarialOutcome out;

  // Pending proposal state: proposer's own share plus the round it opened.
  std::optional<double> pending_share;
  Player pending_by = Player::kAlice;
  int rounds_proposed = 0;
  bool deal = false;

  Player current = Player::kAlice;
  while (true) {
    const AgentFn& actor = current == Player::kAlice ? alice : bob;
    AgentView view = view_for(moves, current);
    int intent = actor(view, rng);
    if (intent < 0 || intent >= actions_.size()) {
      throw ValidationError("game " + game_id + ": agent emitted intent " +
                            std::to_string(intent) + " outside the template bank");
    }
    if (intent == accept_intent() && !pending_share) {
      intent = intent_for_share(50);  // nothing to accept yet: neutral opener
    }
    moves.push_back({current, intent, actions_.render(intent, rng)});

    if (intent == accept_intent()) {
      deal = true;
      out.t_ev = rounds_proposed;
      double proposer_share = *pending_share;
      out.p_ev = pending_by == Player::kAlice ? proposer_share : 1.0 - proposer_share;
      break;
    }
    if (rounds_proposed == spec_.max_rounds) break;  // counter past the horizon
    ++rounds_proposed;
    pending_share = *share_of_intent(intent);
    pending_by = current;
    current = current == Player::kAlice ? Player::kBob : Player::kAlice;
    if (rounds_proposed == spec_.max_rounds) {
      // The responder may still accept the final proposal; one more move.
      continue;
    }
  }

  if (deal) {
    out.payoff_a = std::pow(spec_.delta_a, out.t_ev - 1) * out.p_ev * spec_.money;
    out.payoff_b =
        std::pow(spec_.delta_b, out.t_ev - 1) * (1.0 - out.p_ev) * spec_.money;
  }
  split_moves(moves, Task::kBargain, game_id, out.payoff_a, out.payoff_b,
              &out.alice, &out.bob);
  return out;
}

// ---------------------------------------------------------------------------
// Negotiation game.

namespace {

// Price levels as fractions of the true value, each with a distinctive
// wording that anchors its paraphrases in embedding space.
struct PriceLevel {
  double fraction;
  std::vector<std::string> templates;
};

const std::vector<PriceLevel>& price_level_bank() {
  // Long distinctive anchors per price level, short shared framings.
  static const std::vector<PriceLevel> v = {
      {0.95,
       {"ninety five on the sticker", "i offer ninety five on the sticker",
        "ninety five on the sticker then", "take ninety five on the sticker"}},
      {1.00,
       {"a round hundred flat", "i offer a round hundred flat",
        "a round hundred flat then", "take a round hundred flat"}},
      {1.05,
       {"a nudge over par one oh five", "i offer a nudge over par one oh five",
        "a nudge over par one oh five then", "take a nudge over par one oh five"}},
      {1.10,
       {"one ten the modest markup", "i offer one ten the modest markup",
        "one ten the modest markup then", "take one ten the modest markup"}},
      {1.15,
       {"one fifteen the steady climb", "i offer one fifteen the steady climb",
        "one fifteen the steady climb then", "take one fifteen the steady climb"}},
      {1.20,
       {"one twenty the tall ask", "i offer one twenty the tall ask",
        "one twenty the tall ask then", "take one twenty the tall ask"}},
      {1.25,
       {"one and a quarter the summit", "i offer one and a quarter the summit",
        "one and a quarter the summit then", "take one and a quarter the summit"}},
  };
  return v;
}

IntentTemplateBank make_negotiation_action_bank(int noise_level) {
  IntentTemplateBank bank;
  bank.noise_level = noise_level;
  for (const auto& level : price_level_bank()) {
    IntentTemplateBank::Intent intent;
    intent.name = "price:" + format_double(level.fraction);
    intent.templates = level.templates;
    bank.intents.push_back(std::move(intent));
  }
  IntentTemplateBank::Intent accept;
  accept.name = "accept";
  accept.templates = {
      "sold and settled",
      "sold and settled i say",
      "call it sold and settled",
      "sold and settled shake on it",
  };
  bank.intents.push_back(std::move(accept));
  return bank;
}

}  // namespace

NegotiationGame::NegotiationGame(NegotiationSpec spec) : spec_(spec) {
  if (spec_.max_rounds < 1) {
    throw ValidationError("negotiation needs max_rounds >= 1");
  }
  actions_ = make_negotiation_action_bank(spec_.noise_level);
  for (const auto& level : price_level_bank()) {
    price_fractions_.push_back(level.fraction);
  }
}

int NegotiationGame::accept_intent() const { return actions_.size() - 1; }

std::optional<double> NegotiationGame::price_of_intent(int intent) const {
  if (intent < 0 || intent >= static_cast<int>(price_fractions_.size())) {
    return std::nullopt;
  }
  return price_fractions_[static_cast<size_t>(intent)] * spec_.true_value;
}

int NegotiationGame::intent_for_fraction(double fraction) const {
  for (size_t i = 0; i < price_fractions_.size(); ++i) {
    if (std::abs(price_fractions_[i] - fraction) < 1e-9) return static_cast<int>(i);
  }
  throw ValidationError("no price level for fraction " + format_double(fraction));
}

AdversarialOutcome NegotiationGame::rollout(const AgentFn& alice, const AgentFn& bob,
                                            const std::string& game_id,
                                            uint64_t seed) const {
  Rng rng(seed);
  std::vector<Move> moves;
  AdversarialOutcome out;

  std::optional<double> pending_price;
  int rounds_proposed = 0;
  bool deal = false;

  Player current = Player::kAlice;
  while (true) {
    const AgentFn& actor = current == Player::kAlice ? alice : bob;
    AgentView view = view_for(moves, current);
    int intent = actor(view, rng);
    if (intent < 0 || intent >= actions_.size()) {
      throw ValidationError("game " + game_id + ": agent emitted intent " +
                            std::to_string(intent) + " outside the template bank");
    }
    if (intent == accept_intent() && !pending_price) {
      // Nothing to accept yet: open at the mid price level.
      intent = static_cast<int>(price_fractions_.size() / 2);
    }
    moves.push_back({current, intent, actions_.render(intent, rng)});

    if (intent == accept_intent()) {
      deal = true;
      out.t_ev = rounds_proposed;
      out.p_ev = *pending_price;
      break;
    }
    if (rounds_proposed == spec_.max_rounds) break;
    ++rounds_proposed;
    pending_price = *price_of_intent(intent);
    current = current == Player::kAlice ? Player::kBob : Player::kAlice;
    if (rounds_proposed == spec_.max_rounds) continue;
  }

  if (deal) {
    out.payoff_a = out.p_ev - spec_.value_alice;  // u_A = p - V_A
    out.payoff_b = spec_.value_bob - out.p_ev;    // u_B = V_B - p
  }
  split_moves(moves, Task::kNegotiate, game_id, out.payoff_a, out.payoff_b,
              &out.alice, &out.bob);
  return out;
}

// ---------------------------------------------------------------------------
// Scripted opponents.

std::vector<std::string> opponent_styles() {
  return {"threshold", "greedy", "titfortat"};
}

namespace {

[[noreturn]] void unknown_style(const std::string& style) {
  std::string known;
  for (const auto& s : opponent_styles()) known += (known.empty() ? "" : ", ") + s;
  throw ValidationError("unknown opponent style \"" + style + "\" (known: " +
                        known + ")");
}

}  // namespace

AgentFn scripted_bargain_opponent(const BargainGame& game, const std::string& style,
                                  Player role) {
  (void)role;
  const IntentTemplateBank& bank = game.actions();
  int accept = game.accept_intent();

  // Integer percents from the level grid sidestep float comparisons.
  auto offered_percent = [&bank, &game](const AgentView& view) -> std::optional<int> {
    if (!view.pending_text) return std::nullopt;
    auto intent = bank.classify(*view.pending_text);
    if (!intent || *intent >= static_cast<int>(game.share_levels().size())) {
      return std::nullopt;
    }
    return 100 - game.share_levels()[static_cast<size_t>(*intent)];
  };

  if (style == "threshold") {
    // Fixed-threshold acceptor: takes any offer worth >= 0.45 of the pot,
    // otherwise counters at 55 for itself.
    int counter = game.intent_for_share(55);
    return [offered_percent, accept, counter](const AgentView& view, Rng&) {
      auto mine = offered_percent(view);
      if (mine && *mine >= 45) return accept;
      return counter;
    };
  }
  if (style == "greedy") {
    int counter = game.intent_for_share(70);
    return [offered_percent, accept, counter](const AgentView& view, Rng&) {
      auto mine = offered_percent(view);
      if (mine && *mine >= 70) return accept;
      return counter;
    };
  }
  if (style == "titfortat") {
    // Opens at 60 for itself and concedes one step per own proposal, down
    // to an even split; accepts anything at least as good as its next offer.
    return [offered_percent, accept, &game](const AgentView& view, Rng&) {
      int own_offers = 0;
      for (const auto& turn : view.history) {
        auto intent = game.actions().classify(turn.action_text);
        if (intent && *intent != game.accept_intent() &&
            game.share_of_intent(*intent)) {
          ++own_offers;
        }
      }
      int plan = std::max(50, 60 - 5 * own_offers);
      auto mine = offered_percent(view);
      if (mine && *mine >= plan) return accept;
      return game.intent_for_share(plan);
    };
  }
  unknown_style(style);
}

AgentFn scripted_negotiation_opponent(const NegotiationGame& game,
                                      const std::string& style, Player role) {
  const IntentTemplateBank& bank = game.actions();
  int accept = game.accept_intent();
  bool is_seller = role == Player::kAlice;
  double v_own = is_seller ? game.spec().value_alice : game.spec().value_bob;

  auto pending_price = [&bank, &game](const AgentView& view) -> std::optional<double> {
    if (!view.pending_text) return std::nullopt;
    auto intent = bank.classify(*view.pending_text);
    if (!intent) return std::nullopt;
    return game.price_of_intent(*intent);
  };

  if (style == "threshold") {
    // Accepts any price no worse than its valuation plus/minus one level.
    double margin = 0.05 * game.spec().true_value;
    int counter = is_seller ? game.intent_for_fraction(1.15)
                            : game.intent_for_fraction(1.00);
    return [pending_price, accept, counter, is_seller, v_own, margin](
               const AgentView& view, Rng&) {
      auto p = pending_price(view);
      if (p) {
        if (is_seller && *p >= v_own + margin - 1e-9) return accept;
        if (!is_seller && *p <= v_own - margin + 1e-9) return accept;
      }
      return counter;
    };
  }
  if (style == "greedy") {
    int counter = is_seller ? game.intent_for_fraction(1.25)
                            : game.intent_for_fraction(0.95);
    double target = is_seller ? v_own + 0.2 * game.spec().true_value
                              : v_own - 0.2 * game.spec().true_value;
    return [pending_price, accept, counter, is_seller, target](const AgentView& view,
                                                               Rng&) {
      auto p = pending_price(view);
      if (p) {
        if (is_seller && *p >= target - 1e-9) return accept;
        if (!is_seller && *p <= target + 1e-9) return accept;
      }
      return counter;
    };
  }
  if (style == "titfortat") {
    return [pending_price, accept, is_seller, &game](const AgentView& view, Rng&) {
      int own_offers = 0;
      for (const auto& turn : view.history) {
        auto intent = game.actions().classify(turn.action_text);
        if (intent && *intent != game.accept_intent()) ++own_offers;
      }
      const auto& fractions = game.price_fractions();
      int last = static_cast<int>(fractions.size()) - 1;
      int mid = last / 2;
      int level = is_seller ? std::max(mid, last - own_offers)
                            : std::min(mid, own_offers);
      double plan = fractions[static_cast<size_t>(level)] * game.spec().true_value;
      auto p = pending_price(view);
      if (p) {
        if (is_seller && *p >= plan - 1e-9) return accept;
        if (!is_seller && *p <= plan + 1e-9) return accept;
      }
      return level;
    };
  }
  unknown_style(style);
}

// ---------------------------------------------------------------------------
// Evaluation.

double eval_average_final_reward(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw ValidationError("eval_average_final_reward: empty input");
  int64_t wins = 0;
  for (const auto& t : trajs) {
    if (t.terminal_reward != 0.0 && t.terminal_reward != 1.0) {
      throw ValidationError("eval_average_final_reward: non-binary reward " +
                            format_double(t.terminal_reward));
    }
    if (t.terminal_reward == 1.0) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(trajs.size());
}

double eval_win_rate_bargain(const std::vector<AdversarialOutcome>& games,
                             Player role) {
  if (games.empty()) throw ValidationError("eval_win_rate_bargain: empty input");
  int64_t wins = 0;
  for (const auto& g : games) {
    double own = role == Player::kAlice ? g.payoff_a : g.payoff_b;
    double other = role == Player::kAlice ? g.payoff_b : g.payoff_a;
    if (own > other) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(games.size());
}

double eval_win_rate_negotiation(const std::vector<AdversarialOutcome>& games,
                                 Player role) {
  if (games.empty()) throw ValidationError("eval_win_rate_negotiation: empty input");
  int64_t wins = 0;
  for (const auto& g : games) {
    double own = role == Player::kAlice ? g.payoff_a : g.payoff_b;
    double other = role == Player::kAlice ? g.payoff_b : g.payoff_a;
    if (own > other) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(games.size());
}

std::vector<BargainSpec> bargain_config_grid() {
  std::vector<BargainSpec> grid;
  const std::vector<std::pair<double, double>> deltas = {
      {0.9, 0.9}, {0.95, 0.9}, {0.9, 0.95}};
  for (int rounds : {10, 20}) {
    for (const auto& [da, db] : deltas) {
      BargainSpec spec;
      spec.delta_a = da;
      spec.delta_b = db;
      spec.max_rounds = rounds;
      grid.push_back(spec);
    }
  }
  return grid;
}

std::vector<NegotiationSpec> negotiation_config_grid() {
  std::vector<NegotiationSpec> grid;
  const std::vector<std::pair<double, double>> values = {
      {100.0, 120.0}, {90.0, 110.0}, {100.0, 110.0}};
  for (int rounds : {10, 20}) {
    for (const auto& [va, vb] : values) {
      NegotiationSpec spec;
      spec.value_alice = va;
      spec.value_bob = vb;
      spec.max_rounds = rounds;
      grid.push_back(spec);
    }
  }
  return grid;
}

}  // namespace intentrl
