#include "turnwise/judge.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "turnwise/errors.hpp"
#include "turnwise/json_extract.hpp"

namespace turnwise {

using nlohmann::json;

VerdictKind kind_of(JudgeTemplate id) {
  switch (id) {
    case JudgeTemplate::C1Accuracy: return VerdictKind::Correctness;
    case JudgeTemplate::C2Repetition: return VerdictKind::Repetition;
    case JudgeTemplate::C3CrrIntention:
    case JudgeTemplate::C4SsrRecIntention: return VerdictKind::Intention;
    case JudgeTemplate::C5FarCrr:
    case JudgeTemplate::C6FarSsr:
    case JudgeTemplate::C7FarRec: return VerdictKind::Consistency;
  }
  return VerdictKind::Correctness;
}

const std::vector<double>& rubric_points(JudgeTemplate id) {
  static const std::vector<double> kCrr{0.0, 0.3, 0.5};
  static const std::vector<double> kSsr{0.0, 0.2, 0.5};
  static const std::vector<double> kRec{0.0, 0.3, 0.5};
  static const std::vector<double> kNone{};
  switch (id) {
    case JudgeTemplate::C5FarCrr: return kCrr;
    case JudgeTemplate::C6FarSsr: return kSsr;
    case JudgeTemplate::C7FarRec: return kRec;
    default: return kNone;
  }
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

void parse_boolean_object(JudgeVerdict& v, std::string_view raw, const char* key) {
  auto doc = find_json_object(raw, [key](const json& j) { return j.contains(key) && j.at(key).is_boolean(); });
  if (!doc) return;
  v.flag = doc->at(key).get<bool>();
  if (doc->contains("reasoning") && (*doc)["reasoning"].is_string()) v.reasoning = (*doc)["reasoning"];
  v.status = ParseStatus::Ok;
}

void parse_yes_no(JudgeVerdict& v, std::string_view raw) {
  std::size_t i = 0;
  while (i < raw.size()) {
    if (!is_alpha(raw[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw.size() && is_alpha(raw[j])) ++j;
    const std::string word = lower(raw.substr(i, j - i));
    if (word == "yes" || word == "no") {
      v.flag = word == "yes";
      v.status = ParseStatus::Ok;
      return;
    }
    i = j;
  }
}

void parse_score(JudgeVerdict& v, std::string_view raw, const std::vector<double>& rubric) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const bool starts_number = is_digit(raw[i]) || (raw[i] == '.' && i + 1 < raw.size() && is_digit(raw[i + 1]));
    if (!starts_number) continue;
    // A digit glued to letters ("Q1", "C5") is an identifier, not a score.
    if (i > 0 && is_alpha(raw[i - 1])) {
      while (i + 1 < raw.size() && (is_digit(raw[i + 1]) || raw[i + 1] == '.')) ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw.size() && is_digit(raw[j])) ++j;
    if (j < raw.size() && raw[j] == '.') {
      ++j;
      while (j < raw.size() && is_digit(raw[j])) ++j;
    }
    const std::string literal(raw.substr(i, j - i));
    double x = std::strtod(literal.c_str(), nullptr);
    if (i > 0 && raw[i - 1] == '-') x = -x;
    x = std::clamp(x, 0.0, 0.5);
    double best = rubric.front();
    for (double p : rubric) {
      // Exact midpoints such as 0.4 between 0.3 and 0.5 are ties, which go
      // to the lower point; the slack absorbs binary rounding of the inputs.
      if (std::abs(p - x) < std::abs(best - x) - 1e-9) best = p;
    }
    v.score = best;
    v.status = ParseStatus::Ok;
    return;
  }
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string judge_question(const StreamTimeline& tl, int turn) {
  if (!tl.ground_truth.question.empty()) return tl.ground_truth.question;
  if (auto q = tl.latest_query_at(turn)) return *q;
  if (!tl.queries.empty()) return tl.queries.begin()->second;
  return "";
}

}  // namespace

JudgeVerdict parse_verdict(JudgeTemplate id, std::string_view raw) {
  JudgeVerdict v;
  v.source = id;
  v.kind = kind_of(id);
  v.raw = std::string(raw);
  switch (v.kind) {
    case VerdictKind::Correctness: parse_boolean_object(v, raw, "correct"); break;
    case VerdictKind::Repetition: parse_boolean_object(v, raw, "is_repeated"); break;
    case VerdictKind::Intention: parse_yes_no(v, raw); break;
    case VerdictKind::Consistency: parse_score(v, raw, rubric_points(id)); break;
  }
  return v;
}

JudgeClient::JudgeClient(JudgeConfig config, std::shared_ptr<Transport> transport, std::shared_ptr<ContentCache> cache,
                         const PromptLibrary& prompts)
    : config_(std::move(config)),
      prompts_(prompts),
      chat_(std::make_unique<CachedChat>(config_.endpoint, std::move(transport), std::move(cache),
                                         config_.concurrency)) {}

JudgeClient::JudgeClient(JudgeConfig config, JudgeResponder responder, const PromptLibrary& prompts)
    : config_(std::move(config)), prompts_(prompts), responder_(std::move(responder)) {
  if (!responder_) throw InvalidInput("offline judge needs a responder");
}

JudgeVerdict JudgeClient::judge(JudgeTemplate id, const Slots& slots) {
  if (responder_) {
    JudgeVerdict v = parse_verdict(id, responder_(id, slots));
    if (!v.ok()) parse_failures_.fetch_add(1);
    return v;
  }
  return judge(id, render(id, slots));
}

JudgeVerdict JudgeClient::judge(JudgeTemplate id, const std::string& prompt) {
  if (!chat_) throw std::logic_error("offline judge client needs slots, not a rendered prompt");
  if (auto hit = chat_->lookup(prompt)) {
    JudgeVerdict v = parse_verdict(id, hit->text);
    v.from_cache = true;
    if (!v.ok()) parse_failures_.fetch_add(1);
    return v;
  }

  ChatRequest request;
  request.model = chat_->model();
  request.messages.push_back({"user", prompt});
  request.max_tokens = config_.max_tokens;
  request.temperature = 0.0;

  CallResult last;
  JudgeVerdict v;
  for (int attempt = 0; attempt <= std::max(0, config_.max_parse_retries); ++attempt) {
    try {
      last = chat_->call(request);
    } catch (const TransportError& e) {
      JudgeVerdict failed;
      failed.source = id;
      failed.kind = kind_of(id);
      failed.reasoning = e.what();
      return failed;
    }
    v = parse_verdict(id, last.text);
    if (v.ok()) break;
  }
  if (!v.ok()) parse_failures_.fetch_add(1);
  chat_->store(prompt, last);
  return v;
}

JudgeStats JudgeClient::stats() const {
  const CallStats s = chat_ ? chat_->stats() : CallStats{};
  return JudgeStats{s.cache_hits, s.requests, s.transport_failures, parse_failures_.load()};
}

Slots accuracy_slots(const StreamTimeline& tl, int gt_turn, const Action& action, int turn) {
  const auto& gt = tl.ground_truth;
  return Slots{{"task_name", std::string(full_name(gt.subtask))},
               {"task", std::string(to_string(gt.subtask))},
               {"question", judge_question(tl, std::max(turn, gt_turn))},
               {"options", gt.options.empty() ? "N/A" : join(gt.options, "; ")},
               {"ground_truth", gt.references.at(gt_turn).answer},
               {"model_answer", action.text}};
}

Slots repetition_slots(const StreamTimeline& tl, const Trajectory& traj, std::size_t max_turns) {
  const std::vector<int> responses = response_turns(traj);
  const std::size_t keep = std::min(max_turns, responses.size());
  std::string context;
  if (keep > 0) {
    const int first = responses[responses.size() - keep];
    // Carry the question that was open when the kept window starts.
    int from = first;
    for (const auto& [t, q] : tl.queries) {
      if (t <= first) from = t;
    }
    std::vector<std::string> lines;
    for (int t = from; t <= traj.length(); ++t) {
      if (auto q = tl.queries.find(t); q != tl.queries.end()) lines.push_back("User: " + q->second);
      const Action& a = traj.turns[static_cast<std::size_t>(t - 1)];
      if (t >= first && a.is_respond()) lines.push_back("Model: " + a.text);
    }
    context = join(lines, "\n");
  }
  std::vector<std::string> answers;
  for (const auto& [t, ref] : tl.ground_truth.references) {
    if (std::find(answers.begin(), answers.end(), ref.answer) == answers.end()) answers.push_back(ref.answer);
  }
  return Slots{{"context_text", context}, {"ground_truth", join(answers, "; ")}};
}

JudgeTemplate intention_template(Subtask subtask) {
  switch (subtask) {
    case Subtask::CRR: return JudgeTemplate::C3CrrIntention;
    case Subtask::SSR:
    case Subtask::REC: return JudgeTemplate::C4SsrRecIntention;
    default: throw ModeMismatch("intention gate applies to ForwardActive subtasks only");
  }
}

JudgeTemplate consistency_template(Subtask subtask) {
  switch (subtask) {
    case Subtask::CRR: return JudgeTemplate::C5FarCrr;
    case Subtask::SSR: return JudgeTemplate::C6FarSsr;
    case Subtask::REC: return JudgeTemplate::C7FarRec;
    default: throw ModeMismatch("consistency judge applies to ForwardActive subtasks only");
  }
}

Slots intention_slots(const StreamTimeline& tl, const Action& action, int turn) {
  return Slots{{"question", judge_question(tl, turn)}, {"content", action.text}};
}

Slots consistency_slots(const StreamTimeline& tl, int gt_turn, const Action& action, int turn) {
  const auto& gt = tl.ground_truth;
  const Reference& ref = gt.references.at(gt_turn);
  Slots s{{"prediction", action.text}};
  switch (gt.subtask) {
    case Subtask::CRR:
      s["question"] = judge_question(tl, std::max(turn, gt_turn));
      s["answer"] = ref.answer;
      break;
    case Subtask::SSR:
      s["reference"] = ref.expected_stage ? *ref.expected_stage : ref.answer;
      break;
    case Subtask::REC:
      s["activity"] = gt.activity.empty() ? judge_question(tl, std::max(turn, gt_turn)) : gt.activity;
      s["expected_count"] = ref.expected_count ? std::to_string(*ref.expected_count) : ref.answer;
      break;
    default: throw ModeMismatch("consistency judge applies to ForwardActive subtasks only");
  }
  return s;
}

namespace {

struct Job {
  JudgeTemplate id;
  int gt_turn = 0;
  int turn = 0;
  Slots slots;
};

std::vector<JudgeVerdict> run_jobs(const std::vector<Job>& jobs, JudgeClient& client) {
  std::vector<JudgeVerdict> out(jobs.size());
  parallel_for(jobs.size(), client.config().concurrency,
               [&](std::size_t i) { out[i] = client.judge(jobs[i].id, jobs[i].slots); });
  return out;
}

}  // namespace

SampleJudgement judge_sample(const StreamTimeline& tl, const Trajectory& traj, JudgeClient& client) {
  SampleJudgement result;
  const auto& gt = tl.ground_truth;
  auto record = [&](const Job& job, const JudgeVerdict& v, double value) {
    result.calls.push_back({job.id, job.gt_turn, job.turn, v.ok(), v.from_cache, value});
    if (!v.ok()) ++result.failed_calls;
  };

  if (gt.mode != TaskMode::ForwardActive) {
    std::vector<Job> jobs;
    for (const auto& [gt_turn, turn] : eligible_pairs(tl, traj)) {
      const Action& a = traj.turns[static_cast<std::size_t>(turn - 1)];
      jobs.push_back({JudgeTemplate::C1Accuracy, gt_turn, turn, accuracy_slots(tl, gt_turn, a, turn)});
    }
    const bool any_response = !response_turns(traj).empty();
    if (any_response) {
      jobs.push_back({JudgeTemplate::C2Repetition, 0, 0, repetition_slots(tl, traj)});
    }
    const auto verdicts = run_jobs(jobs, client);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const bool flag = verdicts[i].conservative_flag();
      if (jobs[i].id == JudgeTemplate::C2Repetition) {
        result.bundle.repeated = flag;
      } else {
        result.bundle.quality[{jobs[i].gt_turn, jobs[i].turn}] = flag ? 1.0 : 0.0;
      }
      record(jobs[i], verdicts[i], flag ? 1.0 : 0.0);
    }
    return result;
  }

  // Intention gate, only for responses some window could match.
  std::vector<Job> gates;
  const JudgeTemplate gate_id = intention_template(gt.subtask);
  for (int t : response_turns(traj)) {
    bool in_window = false;
    for (int gt_turn : gt.gt_turns) in_window = in_window || std::abs(t - gt_turn) <= gt.delta;
    if (!in_window) continue;
    const Action& a = traj.turns[static_cast<std::size_t>(t - 1)];
    gates.push_back({gate_id, 0, t, intention_slots(tl, a, t)});
  }
  const auto gate_verdicts = run_jobs(gates, client);
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const bool pass = gate_verdicts[i].conservative_flag();
    if (!pass) result.bundle.gated_turns.insert(gates[i].turn);
    record(gates[i], gate_verdicts[i], pass ? 1.0 : 0.0);
  }

  std::vector<Job> jobs;
  const JudgeTemplate judge_id = consistency_template(gt.subtask);
  for (const auto& [gt_turn, turn] : eligible_pairs(tl, traj, result.bundle.gated_turns)) {
    const Action& a = traj.turns[static_cast<std::size_t>(turn - 1)];
    jobs.push_back({judge_id, gt_turn, turn, consistency_slots(tl, gt_turn, a, turn)});
  }
  const auto verdicts = run_jobs(jobs, client);
  const double scale = client.config().far_scale == FarScale::Doubled ? 2.0 : 1.0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const double value = std::min(1.0, verdicts[i].conservative_score() * scale);
    result.bundle.quality[{jobs[i].gt_turn, jobs[i].turn}] = value;
    record(jobs[i], verdicts[i], value);
  }
  return result;
}

namespace {

// Lowercase words separated by single spaces; punctuation dropped.
std::string normalize(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      pending_space = true;
    }
  }
  return out;
}

bool contains_words(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return false;
  const std::string h = " " + haystack + " ";
  return h.find(" " + needle + " ") != std::string::npos;
}

std::optional<long> first_integer(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!is_digit(text[i])) continue;
    std::size_t j = i;
    while (j < text.size() && is_digit(text[j])) ++j;
    return std::strtol(std::string(text.substr(i, j - i)).c_str(), nullptr, 10);
  }
  return std::nullopt;
}

bool refusal(const std::string& norm) {
  static const char* kPhrases[] = {"i don t know", "not sure", "cannot tell", "can t tell", "unable to"};
  for (const char* p : kPhrases) {
    if (norm.find(p) != std::string::npos) return true;
  }
  return false;
}

std::string slot(const Slots& s, const char* key) {
  auto it = s.find(key);
  return it == s.end() ? std::string() : it->second;
}

}  // namespace

JudgeResponder reference_match_responder() {
  return [](JudgeTemplate id, const Slots& s) -> std::string {
    switch (id) {
      case JudgeTemplate::C1Accuracy: {
        const bool ok = contains_words(normalize(slot(s, "model_answer")), normalize(slot(s, "ground_truth")));
        return json{{"correct", ok}, {"reasoning", "reference match"}}.dump();
      }
      case JudgeTemplate::C2Repetition: {
        std::set<std::string> seen;
        bool repeated = false;
        std::istringstream in(slot(s, "context_text"));
        std::string line;
        while (std::getline(in, line)) {
          if (line.rfind("Model: ", 0) != 0) continue;
          repeated = repeated || !seen.insert(normalize(line.substr(7))).second;
        }
        return json{{"is_repeated", repeated}, {"reasoning", "identical model turns"}}.dump();
      }
      case JudgeTemplate::C3CrrIntention:
      case JudgeTemplate::C4SsrRecIntention: {
        const std::string norm = normalize(slot(s, "content"));
        return !norm.empty() && !refusal(norm) ? "yes" : "no";
      }
      case JudgeTemplate::C5FarCrr:
        return contains_words(normalize(slot(s, "prediction")), normalize(slot(s, "answer"))) ? "0.5" : "0.0";
      case JudgeTemplate::C6FarSsr:
        return contains_words(normalize(slot(s, "prediction")), normalize(slot(s, "reference"))) ? "0.5" : "0.0";
      case JudgeTemplate::C7FarRec: {
        const auto expected = first_integer(slot(s, "expected_count"));
        const auto said = first_integer(slot(s, "prediction"));
        if (!expected || !said) return "0.0";
        if (*said == *expected) return "0.5";
        return std::labs(*said - *expected) == 1 ? "0.3" : "0.0";
      }
    }
    return "";
  };
}

}  // namespace turnwise
