#include "turnwise/evo.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "turnwise/errors.hpp"
#include "turnwise/json_extract.hpp"
#include "turnwise/judge.hpp"
#include "turnwise/parallel.hpp"
#include "turnwise/timeline.hpp"

namespace turnwise::evo {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

const std::string kSilent(kSilentMarker);

}  // namespace

// --- taxonomy ---------------------------------------------------------------

std::string_view code(TaskCategory c) {
  switch (c) {
    case TaskCategory::ImmediateVisual: return "IV";
    case TaskCategory::MemoryDependent: return "MD";
    case TaskCategory::TemporalAggregation: return "TA";
    case TaskCategory::AnticipatoryMonitoring: return "AM";
    case TaskCategory::DynamicEventDescription: return "DED";
  }
  return "";
}

std::string_view name(TaskCategory c) {
  switch (c) {
    case TaskCategory::ImmediateVisual: return "Immediate Visual";
    case TaskCategory::MemoryDependent: return "Memory-Dependent";
    case TaskCategory::TemporalAggregation: return "Temporal Aggregation";
    case TaskCategory::AnticipatoryMonitoring: return "Anticipatory Monitoring";
    case TaskCategory::DynamicEventDescription: return "Dynamic Event Description";
  }
  return "";
}

TaskCategory category_from_code(std::string_view text) {
  for (TaskCategory c : kAllCategories) {
    if (code(c) == text) return c;
  }
  throw InvalidInput("unknown task category '" + std::string(text) + "'");
}

std::optional<TaskCategory> parse_category(std::string_view reply) {
  auto fold = [](std::string_view s) {
    std::string out = lower(s);
    std::replace(out.begin(), out.end(), '-', ' ');
    return out;
  };
  const std::string text = fold(reply);
  std::optional<TaskCategory> best;
  std::size_t best_pos = std::string::npos;
  for (TaskCategory c : kAllCategories) {
    const std::size_t pos = text.find(fold(name(c)));
    if (pos < best_pos) {
      best = c;
      best_pos = pos;
    }
  }
  if (best) return best;

  for (TaskCategory c : kAllCategories) {
    const std::string_view k = code(c);
    for (std::size_t pos = reply.find(k); pos != std::string_view::npos; pos = reply.find(k, pos + 1)) {
      const bool left = pos == 0 || !is_word_char(reply[pos - 1]);
      const bool right = pos + k.size() >= reply.size() || !is_word_char(reply[pos + k.size()]);
      if (left && right) {
        if (pos < best_pos) {
          best = c;
          best_pos = pos;
        }
        break;
      }
    }
  }
  return best;
}

CategoryClauses clauses(TaskCategory c, const PromptLibrary& prompts) {
  const auto s = prompts.sections("category_" + lower(code(c)));
  auto get = [&](const char* key) {
    auto it = s.find(key);
    if (it == s.end()) throw TemplateError("category_" + lower(code(c)) + ": missing section [" + key + "]");
    return it->second;
  };
  return CategoryClauses{get("skill"), get("question_instruction"), get("annotation_target"), get("response_rule")};
}

// --- videos and segments ------------------------------------------------------

namespace {

std::string format_seconds(double s) {
  std::ostringstream out;
  out << s;
  return out.str();
}

Video video_from_json(const json& doc, const std::string& where) {
  if (!doc.is_object()) throw InvalidInput(where + ": expected an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() != "id" && it.key() != "uri" && it.key() != "duration_s") {
      throw InvalidInput(where + ": unknown key '" + it.key() + "'");
    }
  }
  Video v;
  try {
    v.id = doc.at("id").get<std::string>();
    v.uri = doc.value("uri", v.id);
    v.duration_s = doc.at("duration_s").get<double>();
  } catch (const json::exception& e) {
    throw InvalidInput(where + ": " + e.what());
  }
  if (v.id.empty()) throw InvalidInput(where + ": empty video id");
  if (!(v.duration_s > 0.0)) throw InvalidInput(where + ": duration_s must be positive");
  return v;
}

}  // namespace

std::vector<Segment> make_segments(const Video& video, double segment_seconds) {
  if (!(segment_seconds > 0.0)) throw InvalidInput("segment length must be positive");
  if (!(video.duration_s > 0.0)) throw InvalidInput(video.id + ": duration must be positive");
  const int count = static_cast<int>(std::ceil(video.duration_s / segment_seconds));
  std::vector<Segment> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Segment s;
    s.index = i;
    s.start_s = i * segment_seconds;
    s.end_s = std::min(video.duration_s, (i + 1) * segment_seconds);
    s.ref = video.uri + "#t=" + format_seconds(s.start_s) + "," + format_seconds(s.end_s);
    out.push_back(std::move(s));
  }
  return out;
}

std::string format_clock(double seconds) {
  const long total = static_cast<long>(std::floor(std::max(0.0, seconds)));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%ld:%02ld", total / 60, total % 60);
  return buf;
}

std::vector<Video> load_videos(const fs::path& path) {
  std::vector<Video> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      const json doc = json::parse(in, nullptr, false);
      if (doc.is_discarded()) throw InvalidInput(f.string() + ": not valid JSON");
      out.push_back(video_from_json(doc, f.string()));
    }
  } else {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open video list " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const json doc = json::parse(text, nullptr, false);
    if (!doc.is_discarded() && doc.is_array()) {
      for (std::size_t i = 0; i < doc.size(); ++i) {
        out.push_back(video_from_json(doc[i], path.string() + "[" + std::to_string(i) + "]"));
      }
    } else {
      std::istringstream lines(text);
      std::string line;
      int n = 0;
      while (std::getline(lines, line)) {
        ++n;
        if (trim(line).empty()) continue;
        const json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded()) throw InvalidInput(path.string() + ":" + std::to_string(n) + ": not valid JSON");
        out.push_back(video_from_json(rec, path.string() + ":" + std::to_string(n)));
      }
    }
  }
  std::set<std::string> seen;
  for (const auto& v : out) {
    if (!seen.insert(v.id).second) throw InvalidInput("duplicate video id '" + v.id + "'");
  }
  return out;
}

// --- generator backends ---------------------------------------------------------

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Classify: return "classify";
    case Stage::Questions: return "questions";
    case Stage::Relevance: return "relevance";
    case Stage::Select: return "select";
    case Stage::Decide: return "decide";
  }
  return "";
}

HttpGenerator::HttpGenerator(EndpointConfig endpoint, std::shared_ptr<Transport> transport,
                             std::shared_ptr<ContentCache> cache, std::size_t max_in_flight, int max_tokens)
    : chat_(std::move(endpoint), std::move(transport), std::move(cache), max_in_flight), max_tokens_(max_tokens) {}

std::string HttpGenerator::generate(const GenerationCall& call) {
  std::string payload = call.prompt;
  for (const auto& m : call.media) payload += "\n" + m;

  if (call.attempt == 0) {
    if (auto hit = chat_.lookup(payload)) return hit->text;
  }
  ChatRequest req;
  req.model = chat_.model();
  req.max_tokens = max_tokens_;
  req.temperature = 0.0;
  if (call.media.empty()) {
    req.messages.push_back({"user", call.prompt});
  } else {
    json parts = json::array();
    for (const auto& m : call.media) parts.push_back({{"type", "video_url"}, {"video_url", {{"url", m}}}});
    parts.push_back({{"type", "text"}, {"text", call.prompt}});
    req.messages.push_back({"user", std::move(parts)});
  }
  CallResult res = chat_.call(req);
  chat_.store(payload, res);
  return res.text;
}

std::unique_ptr<ScriptedGenerator> ScriptedGenerator::from_json(const json& program, std::string id) {
  if (!program.is_object()) throw ConfigError("generator program: expected an object");
  for (auto it = program.begin(); it != program.end(); ++it) {
    if (it.key() != "videos") throw ConfigError("generator program: unknown key '" + it.key() + "'");
  }
  const json videos = program.value("videos", json::object());
  for (auto it = videos.begin(); it != videos.end(); ++it) {
    for (auto f = it->begin(); f != it->end(); ++f) {
      static const std::set<std::string> kKeys{"category", "questions", "segments", "select", "decide"};
      if (!kKeys.count(f.key())) {
        throw ConfigError("generator program.videos." + it.key() + ": unknown key '" + f.key() + "'");
      }
    }
  }
  auto fn = [videos](const GenerationCall& call) -> std::string {
    auto v = videos.find(call.video_id);
    if (v == videos.end()) return "";
    auto str = [&](const char* key) { return v->contains(key) ? (*v)[key].get<std::string>() : std::string(); };
    switch (call.stage) {
      case Stage::Classify: return str("category");
      case Stage::Questions: return str("questions");
      case Stage::Relevance: {
        const json segs = v->value("segments", json::array());
        const auto s = call.context.value("segment", -1);
        if (s < 0 || static_cast<std::size_t>(s) >= segs.size()) return "";
        return segs[static_cast<std::size_t>(s)].get<std::string>();
      }
      case Stage::Select: return str("select");
      case Stage::Decide: {
        if (v->contains("decide")) return str("decide");
        if (!call.context.value("tracked_relevant", false)) {
          return json{{"should_respond", false}, {"reason", "no new evidence"}}.dump();
        }
        return json{{"should_respond", true},
                    {"reason", "new evidence"},
                    {"response", call.context.value("latest_evidence", std::string())}}
            .dump();
      }
    }
    return "";
  };
  return std::make_unique<ScriptedGenerator>(fn, std::move(id));
}

// --- stage parsers --------------------------------------------------------------

std::vector<std::string> parse_questions(std::string_view reply, std::size_t max_questions) {
  static const std::regex kLine(R"(^[\s*#-]*Q(\d+)\s*[:.)]\s*(.*\S)\s*$)", std::regex::icase);
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::istringstream in{std::string(reply)};
  std::string line;
  while (std::getline(in, line) && out.size() < max_questions) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (!std::regex_match(line, m, kLine)) continue;
    std::string q = trim(m[2].str());
    while (!q.empty() && q.front() == '*') q.erase(q.begin());
    while (!q.empty() && q.back() == '*') q.pop_back();
    q = trim(q);
    if (q.empty()) continue;
    if (seen.insert(lower(q)).second) out.push_back(q);
  }
  return out;
}

RelevanceMatrix::RelevanceMatrix(int segments, int questions)
    : segments_(segments), questions_(questions),
      cells_(static_cast<std::size_t>(std::max(0, segments) * std::max(0, questions))) {
  if (segments < 0 || questions < 0) throw InvalidInput("negative matrix dimension");
}

Cell& RelevanceMatrix::at(int s, int k) {
  if (s < 0 || s >= segments_ || k < 0 || k >= questions_) throw InvalidInput("matrix index out of range");
  return cells_[static_cast<std::size_t>(s * questions_ + k)];
}

const Cell& RelevanceMatrix::at(int s, int k) const { return const_cast<RelevanceMatrix*>(this)->at(s, k); }

bool RelevanceMatrix::row_all_irrelevant(int s) const {
  for (int k = 0; k < questions_; ++k) {
    if (relevant(s, k)) return false;
  }
  return true;
}

int RelevanceMatrix::relevant_count(int k) const {
  int n = 0;
  for (int s = 0; s < segments_; ++s) n += relevant(s, k) ? 1 : 0;
  return n;
}

std::optional<int> RelevanceMatrix::first_relevant(int k) const {
  for (int s = 0; s < segments_; ++s) {
    if (relevant(s, k)) return s;
  }
  return std::nullopt;
}

RelevanceMatrix RelevanceMatrix::select_columns(const std::vector<int>& keep) const {
  RelevanceMatrix out(segments_, static_cast<int>(keep.size()));
  for (int s = 0; s < segments_; ++s) {
    for (std::size_t j = 0; j < keep.size(); ++j) out.at(s, static_cast<int>(j)) = at(s, keep[j]);
  }
  return out;
}

std::string RelevanceMatrix::row_string(int s) const {
  std::string out;
  for (int k = 0; k < questions_; ++k) out += relevant(s, k) ? 'R' : 'I';
  return out;
}

std::optional<std::vector<Cell>> parse_relevance_reply(std::string_view reply, int questions) {
  struct Label {
    const char* text;
    const char* canonical;
    Relevance value;
  };
  // Longest first so "post-reveal" is not read as "post" + "reveal".
  static const Label kLabels[] = {
      {"post-reveal", "Post-Reveal", Relevance::Relevant}, {"post reveal", "Post-Reveal", Relevance::Relevant},
      {"setup", "Setup", Relevance::Relevant},             {"reveal", "Reveal", Relevance::Relevant},
      {"yes", "Yes", Relevance::Relevant},                 {"n/a", "N/A", Relevance::Irrelevant},
      {"no", "No", Relevance::Irrelevant},
  };
  static const std::regex kHead(R"(^[\s*\-]*question\s*(\d+)\s*[:.]\s*(.*)$)", std::regex::icase);

  std::vector<Cell> cells(static_cast<std::size_t>(std::max(0, questions)));
  std::vector<bool> filled(cells.size(), false);
  bool any = false;
  std::istringstream in{std::string(reply)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (!std::regex_match(line, m, kHead)) continue;
    const long k = std::strtol(m[1].str().c_str(), nullptr, 10);
    if (k < 1 || k > questions || filled[static_cast<std::size_t>(k - 1)]) continue;

    std::string rest = trim(m[2].str());
    if (!rest.empty() && rest.front() == '[') rest = trim(rest.substr(1));
    const std::string folded = lower(rest);
    const Label* hit = nullptr;
    for (const auto& l : kLabels) {
      const std::size_t n = std::char_traits<char>::length(l.text);
      if (folded.compare(0, n, l.text) == 0 && (folded.size() == n || !is_word_char(folded[n]))) {
        hit = &l;
        rest = rest.substr(n);
        break;
      }
    }
    if (!hit) continue;
    std::size_t i = 0;
    while (i < rest.size() && (rest[i] == ']' || rest[i] == ' ' || rest[i] == '\t')) ++i;
    if (i < rest.size() && (rest[i] == '-' || rest[i] == ':')) ++i;
    std::string evidence = trim(rest.substr(i));
    if (evidence.size() >= 2 && evidence.front() == '[' && evidence.back() == ']') {
      evidence = trim(evidence.substr(1, evidence.size() - 2));
    }
    Cell& c = cells[static_cast<std::size_t>(k - 1)];
    c.value = hit->value;
    c.label = hit->canonical;
    c.evidence = evidence;
    filled[static_cast<std::size_t>(k - 1)] = true;
    any = true;
  }
  if (!any) return std::nullopt;
  return cells;
}

Selection parse_selection(std::string_view reply, const RelevanceMatrix& matrix) {
  const int q = matrix.questions();
  if (q <= 0) throw InvalidInput("question selection needs at least one question");
  auto doc = find_json_object(reply, [](const json& j) { return j.contains("selected_question_idx"); });
  Selection sel;
  if (doc) {
    const json& idx = (*doc)["selected_question_idx"];
    long value = 0;
    if (idx.is_number_integer()) {
      value = idx.get<long>();
    } else if (idx.is_string()) {
      value = std::strtol(idx.get<std::string>().c_str(), nullptr, 10);
    }
    if (doc->contains("task_prompt") && (*doc)["task_prompt"].is_string()) sel.task_prompt = (*doc)["task_prompt"];
    if (doc->contains("reasoning") && (*doc)["reasoning"].is_string()) sel.reasoning = (*doc)["reasoning"];
    if (value >= 1 && value <= q) {
      sel.index = static_cast<int>(value - 1);
      return sel;
    }
  }
  sel.fallback = true;
  int best = 0;
  for (int k = 1; k < q; ++k) {
    if (matrix.relevant_count(k) > matrix.relevant_count(best)) best = k;
  }
  sel.index = best;
  return sel;
}

Decision parse_decision(std::string_view reply) {
  Decision d;
  auto doc = find_json_object(reply, [](const json& j) { return j.contains("should_respond"); });
  if (!doc || !(*doc)["should_respond"].is_boolean()) {
    d.malformed = true;
    return d;
  }
  d.should_respond = (*doc)["should_respond"].get<bool>();
  if (doc->contains("reason") && (*doc)["reason"].is_string()) d.reason = (*doc)["reason"];
  if (doc->contains("response") && (*doc)["response"].is_string()) d.response = trim((*doc)["response"].get<std::string>());
  if (d.should_respond && (d.response.empty() || lower(d.response) == kSilent)) {
    d.should_respond = false;
    d.response.clear();
  }
  return d;
}

// --- conversations ---------------------------------------------------------------

json to_json(const TrainingConversation& c) {
  json turns = json::array();
  for (const auto& t : c.turns) {
    json rec{{"segment_refs", t.segment_refs}};
    if (t.user) rec["user"] = *t.user;
    rec["assistant"] = t.assistant;
    turns.push_back(std::move(rec));
  }
  const Provenance& p = c.provenance;
  json prov{{"iteration", p.iteration},
            {"backend_id", p.backend_id},
            {"duration_s", p.duration_s},
            {"generated_questions", p.generated_questions},
            {"questions", p.questions},
            {"relevance", p.relevance},
            {"evidence", p.evidence},
            {"task_prompt", p.task_prompt},
            {"selection_fallback", p.selection_fallback},
            {"prompt_sha256", p.prompt_sha256}};
  return json{{"format_version", 1},
              {"video_id", c.video_id},
              {"category", code(c.category)},
              {"question", c.question},
              {"tracked_index", c.tracked_index},
              {"system", c.system},
              {"turns", std::move(turns)},
              {"provenance", std::move(prov)}};
}

TrainingConversation conversation_from_json(const json& doc) {
  try {
    if (doc.at("format_version") != 1) throw InvalidInput("unsupported dataset format_version");
    TrainingConversation c;
    c.video_id = doc.at("video_id").get<std::string>();
    c.category = category_from_code(doc.at("category").get<std::string>());
    c.question = doc.at("question").get<std::string>();
    c.tracked_index = doc.at("tracked_index").get<int>();
    c.system = doc.at("system").get<std::string>();
    for (const auto& t : doc.at("turns")) {
      ConversationTurn turn;
      turn.segment_refs = t.at("segment_refs").get<std::vector<std::string>>();
      if (t.contains("user")) turn.user = t.at("user").get<std::string>();
      turn.assistant = t.at("assistant").get<std::string>();
      c.turns.push_back(std::move(turn));
    }
    const json& p = doc.at("provenance");
    Provenance& prov = c.provenance;
    prov.iteration = p.at("iteration").get<int>();
    prov.backend_id = p.at("backend_id").get<std::string>();
    prov.duration_s = p.at("duration_s").get<double>();
    prov.generated_questions = p.at("generated_questions").get<std::vector<std::string>>();
    prov.questions = p.at("questions").get<std::vector<std::string>>();
    prov.relevance = p.at("relevance").get<std::vector<std::string>>();
    prov.evidence = p.at("evidence").get<std::vector<std::string>>();
    prov.task_prompt = p.at("task_prompt").get<std::string>();
    prov.selection_fallback = p.at("selection_fallback").get<bool>();
    prov.prompt_sha256 = p.at("prompt_sha256").get<std::map<std::string, std::string>>();
    return c;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed dataset record: ") + e.what());
  }
}

std::vector<TrainingConversation> load_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset " + path.string());
  std::vector<TrainingConversation> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) throw InvalidInput(path.string() + ":" + std::to_string(n) + ": not valid JSON");
    out.push_back(conversation_from_json(doc));
  }
  return out;
}

// --- per-video pipeline ------------------------------------------------------------

namespace {

std::string questions_text(const std::vector<std::string>& questions) {
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < questions.size(); ++i) lines.push_back("Q" + std::to_string(i + 1) + ": " + questions[i]);
  return join(lines, "\n");
}

std::string segment_range(const Segment& s) { return format_clock(s.start_s) + "-" + format_clock(s.end_s); }

// Annotation lines for one segment, as fed back to later stages.
std::string caption_lines(const Segment& seg, const RelevanceMatrix& m) {
  std::vector<std::string> lines;
  for (int k = 0; k < m.questions(); ++k) {
    const Cell& c = m.at(seg.index, k);
    std::string line = "[" + segment_range(seg) + "] Question " + std::to_string(k + 1) + ": " +
                       (c.label.empty() ? "N/A" : c.label);
    if (!c.evidence.empty()) line += " - " + c.evidence;
    lines.push_back(std::move(line));
  }
  return join(lines, "\n");
}

std::map<std::string, std::string> prompt_hashes(TaskCategory c, const PromptLibrary& prompts) {
  std::map<std::string, std::string> out;
  for (const char* stem : {"b0_classify", "b1_questions", "b2_relevance", "b3_select", "b4_decide"}) {
    out[stem] = sha256_hex(prompts.raw(stem));
  }
  const std::string cat = "category_" + lower(code(c));
  out[cat] = sha256_hex(prompts.raw(cat));
  return out;
}

bool query_at_evidence(TaskCategory c) {
  return c == TaskCategory::ImmediateVisual || c == TaskCategory::MemoryDependent;
}

}  // namespace

TrainingConversation rollout(const Video& video, const std::vector<Segment>& segments, TaskCategory category,
                             const std::vector<std::string>& questions, const RelevanceMatrix& matrix,
                             const Selection& selection, GeneratorBackend& backend, const PipelineOptions& options,
                             long* decision_calls, const PromptLibrary& prompts) {
  const int k = selection.index;
  if (k < 0 || k >= matrix.questions() || static_cast<int>(questions.size()) != matrix.questions()) {
    throw InvalidInput(video.id + ": tracked question out of range");
  }
  if (static_cast<int>(segments.size()) != matrix.segments()) {
    throw InvalidInput(video.id + ": segment count does not match the relevance matrix");
  }
  const CategoryClauses cl = clauses(category, prompts);

  TrainingConversation conv;
  conv.video_id = video.id;
  conv.category = category;
  conv.tracked_index = k;
  conv.question = questions[static_cast<std::size_t>(k)];
  conv.system = prompts.render("s0_stream_system", {{"fps", format_seconds(options.fps)}});
  conv.provenance.iteration = options.iteration;
  conv.provenance.backend_id = backend.id();
  conv.provenance.duration_s = video.duration_s;
  conv.provenance.questions = questions;
  conv.provenance.task_prompt = selection.task_prompt;
  conv.provenance.selection_fallback = selection.fallback;
  conv.provenance.prompt_sha256 = prompt_hashes(category, prompts);

  // Recall and visual-detail questions are asked once their evidence is on
  // screen; the other categories set up the tracking task from the start.
  const int query_turn = query_at_evidence(category) ? matrix.first_relevant(k).value_or(0) : 0;

  std::vector<std::string> history;
  std::string last_response = "None";
  for (const Segment& seg : segments) {
    const int s = seg.index;
    ConversationTurn turn;
    turn.segment_refs = {seg.ref};
    if (s == query_turn) turn.user = conv.question;
    conv.provenance.relevance.push_back(matrix.row_string(s));
    conv.provenance.evidence.push_back(matrix.at(s, k).evidence);

    if (matrix.row_all_irrelevant(s) || s < query_turn) {
      turn.assistant = kSilent;
      conv.turns.push_back(std::move(turn));
      continue;
    }

    std::vector<std::string> captions;
    const std::size_t first = static_cast<std::size_t>(s) + 1 > options.caption_cap
                                  ? static_cast<std::size_t>(s) + 1 - options.caption_cap
                                  : 0;
    for (std::size_t j = first; j <= static_cast<std::size_t>(s); ++j) captions.push_back(caption_lines(segments[j], matrix));

    GenerationCall call;
    call.stage = Stage::Decide;
    call.video_id = video.id;
    call.prompt = prompts.render("b4_decide", {{"task_type", std::string(name(category))},
                                               {"question_number", std::to_string(k + 1)},
                                               {"question_text", conv.question},
                                               {"timestamp", format_clock(seg.end_s)},
                                               {"captions", join(captions, "\n")},
                                               {"last_response", last_response},
                                               {"history", history.empty() ? "None" : join(history, "\n")},
                                               {"response_rule", cl.response_rule}});
    call.context = json{{"segment", s},
                        {"question", k},
                        {"tracked_relevant", matrix.relevant(s, k)},
                        {"latest_evidence", matrix.at(s, k).evidence}};
    if (decision_calls) ++*decision_calls;
    const Decision d = parse_decision(backend.generate(call));
    if (d.should_respond) {
      turn.assistant = d.response;
      last_response = d.response;
      history.push_back("[" + format_clock(seg.end_s) + "] " + d.response);
    } else {
      turn.assistant = kSilent;
    }
    conv.turns.push_back(std::move(turn));
  }
  return conv;
}

VideoOutcome process_video(const Video& video, GeneratorBackend& backend, const PipelineOptions& options,
                           const PromptLibrary& prompts) {
  VideoOutcome out;
  out.video_id = video.id;
  try {
    // Stage 1: taxonomy, one retry on an unreadable reply.
    std::optional<TaskCategory> category;
    for (int attempt = 0; attempt < 2 && !category; ++attempt) {
      GenerationCall call{Stage::Classify, video.id, prompts.raw("b0_classify"), {video.uri}, json::object(), attempt};
      category = parse_category(backend.generate(call));
    }
    if (!category) {
      out.skip_reason = "unclassified";
      return out;
    }
    const CategoryClauses cl = clauses(*category, prompts);

    // Stage 2: self-questioning.
    GenerationCall qcall{Stage::Questions, video.id,
                         prompts.render("b1_questions", {{"video_skill", cl.skill},
                                                         {"task_type", std::string(name(*category))},
                                                         {"question_instruction", cl.question_instruction}}),
                         {video.uri}, json::object(), 0};
    const std::vector<std::string> generated = parse_questions(backend.generate(qcall), options.max_questions);
    if (generated.empty()) {
      out.skip_reason = "no questions";
      return out;
    }

    // Stage 3: per-segment relevance.
    const std::vector<Segment> segments = make_segments(video, options.segment_seconds);
    RelevanceMatrix full(static_cast<int>(segments.size()), static_cast<int>(generated.size()));
    const std::string qtext = questions_text(generated);
    for (const Segment& seg : segments) {
      GenerationCall call{Stage::Relevance, video.id,
                          prompts.render("b2_relevance", {{"segment_index", std::to_string(seg.index + 1)},
                                                          {"segment_count", std::to_string(segments.size())},
                                                          {"segment_range", segment_range(seg)},
                                                          {"questions_text", qtext},
                                                          {"task_type", std::string(name(*category))},
                                                          {"annotation_target", cl.annotation_target}}),
                          {seg.ref}, json{{"segment", seg.index}}, 0};
      auto cells = parse_relevance_reply(backend.generate(call), full.questions());
      if (!cells) {
        out.warnings.push_back("segment " + std::to_string(seg.index + 1) + ": unparseable annotation");
        continue;
      }
      for (int k = 0; k < full.questions(); ++k) full.at(seg.index, k) = (*cells)[static_cast<std::size_t>(k)];
    }
    std::vector<int> keep;
    for (int k = 0; k < full.questions(); ++k) {
      if (full.relevant_count(k) > 0) keep.push_back(k);
    }
    if (keep.empty()) {
      out.skip_reason = "no relevant evidence";
      return out;
    }
    const RelevanceMatrix matrix = full.select_columns(keep);
    std::vector<std::string> questions;
    for (int k : keep) questions.push_back(generated[static_cast<std::size_t>(k)]);

    // Stage 4a: pick the tracked question.
    std::vector<std::string> samples;
    for (std::size_t j = 0; j < segments.size() && j < options.sample_segments; ++j) {
      samples.push_back(caption_lines(segments[j], matrix));
    }
    GenerationCall scall{Stage::Select, video.id,
                         prompts.render("b3_select", {{"task_type", std::string(name(*category))},
                                                      {"questions_text", questions_text(questions)},
                                                      {"sample_captions", join(samples, "\n")}}),
                         {}, json::object(), 0};
    const Selection selection = parse_selection(backend.generate(scall), matrix);
    if (selection.fallback) out.warnings.push_back("question selection fell back to the most relevant column");

    // Stage 4b: causal roll-out.
    TrainingConversation conv = rollout(video, segments, *category, questions, matrix, selection, backend, options,
                                        &out.decision_calls, prompts);
    conv.provenance.generated_questions = generated;
    out.conversation = std::move(conv);
  } catch (const TransportError& e) {
    out.transport_failure = true;
    out.skip_reason = std::string("transport: ") + e.what();
  }
  return out;
}

// --- validity, export and stats ---------------------------------------------------

std::optional<std::string> validity_issue(const TrainingConversation& c) {
  const Provenance& p = c.provenance;
  if (c.turns.empty()) return "empty";
  if (p.relevance.size() != c.turns.size()) return "malformed";
  if (c.tracked_index < 0 || static_cast<std::size_t>(c.tracked_index) >= p.questions.size()) return "malformed";
  if (p.questions[static_cast<std::size_t>(c.tracked_index)] != c.question || c.question.empty()) return "malformed";
  bool tracked_relevant = false;
  for (std::size_t t = 0; t < c.turns.size(); ++t) {
    const std::string& row = p.relevance[t];
    if (row.size() != p.questions.size()) return "malformed";
    if (trim(c.turns[t].assistant).empty()) return "malformed";
    tracked_relevant = tracked_relevant || row[static_cast<std::size_t>(c.tracked_index)] == 'R';
    if (row.find('R') == std::string::npos && c.turns[t].assistant != kSilent) return "response without evidence";
  }
  if (!tracked_relevant) return "no relevant evidence";
  return std::nullopt;
}

std::string duplicate_key(const TrainingConversation& c) {
  std::string pattern;
  for (const auto& t : c.turns) pattern += t.assistant == kSilent ? 'S' : 'R';
  return c.video_id + '\x1f' + c.question + '\x1f' + pattern;
}

FilterResult apply_filters(std::vector<TrainingConversation> conversations) {
  FilterResult out;
  std::set<std::string> seen;
  for (auto& c : conversations) {
    if (auto issue = validity_issue(c)) {
      ++out.dropped[*issue];
      continue;
    }
    if (!seen.insert(duplicate_key(c)).second) {
      ++out.dropped["duplicate"];
      continue;
    }
    out.kept.push_back(std::move(c));
  }
  return out;
}

json dataset_stats(const std::vector<TrainingConversation>& kept, const FilterResult& filtered, int skipped_videos) {
  json categories = json::object();
  for (TaskCategory c : kAllCategories) categories[std::string(code(c))] = 0;
  json durations{{"<1min", 0}, {"1-3min", 0}, {"3-5min", 0}, {"5-10min", 0}, {">=10min", 0}};
  double questions = 0.0;
  double generated = 0.0;
  long responses = 0;
  long turns = 0;
  for (const auto& c : kept) {
    categories[std::string(code(c.category))] = categories[std::string(code(c.category))].get<int>() + 1;
    const double d = c.provenance.duration_s;
    const char* bucket = d < 60 ? "<1min" : d < 180 ? "1-3min" : d < 300 ? "3-5min" : d < 600 ? "5-10min" : ">=10min";
    durations[bucket] = durations[bucket].get<int>() + 1;
    questions += static_cast<double>(c.provenance.questions.size());
    generated += static_cast<double>(c.provenance.generated_questions.size());
    for (const auto& t : c.turns) responses += t.assistant == kSilent ? 0 : 1;
    turns += static_cast<long>(c.turns.size());
  }
  const double n = static_cast<double>(kept.size());
  return json{{"format_version", 1},
              {"record_count", kept.size()},
              {"category_histogram", categories},
              {"duration_histogram", durations},
              {"mean_questions_per_video", n > 0 ? questions / n : 0.0},
              {"mean_generated_questions_per_video", n > 0 ? generated / n : 0.0},
              {"turns", turns},
              {"responses", responses},
              {"dropped", filtered.dropped},
              {"skipped_videos", skipped_videos}};
}

namespace {

void write_file_atomic(const fs::path& dest, const std::string& content, std::vector<fs::path>& temps) {
  const fs::path tmp = dest.string() + ".tmp";
  temps.push_back(tmp);
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw std::runtime_error("write failed: " + tmp.string());
}

}  // namespace

ExportResult standardize_and_export(std::vector<TrainingConversation> conversations, const fs::path& dataset_path,
                                    const fs::path& stats_path, int skipped_videos,
                                    std::optional<std::size_t> max_records) {
  FilterResult filtered = apply_filters(std::move(conversations));
  if (max_records && filtered.kept.size() > *max_records) {
    filtered.dropped["over max_records"] += static_cast<int>(filtered.kept.size() - *max_records);
    filtered.kept.resize(*max_records);
  }

  std::string body;
  for (const auto& c : filtered.kept) body += to_json(c).dump() + "\n";

  ExportResult result;
  result.dataset_path = dataset_path;
  result.stats_path = stats_path;
  result.record_count = static_cast<long>(filtered.kept.size());
  result.content_hash = sha256_hex(body);
  result.stats = dataset_stats(filtered.kept, filtered, skipped_videos);
  result.stats["content_hash"] = result.content_hash;

  std::vector<fs::path> temps;
  bool dataset_moved = false;
  try {
    if (dataset_path.has_parent_path()) fs::create_directories(dataset_path.parent_path());
    if (stats_path.has_parent_path()) fs::create_directories(stats_path.parent_path());
    write_file_atomic(dataset_path, body, temps);
    write_file_atomic(stats_path, result.stats.dump(2) + "\n", temps);
    fs::rename(temps[0], dataset_path);
    dataset_moved = true;
    fs::rename(temps[1], stats_path);
  } catch (...) {
    std::error_code ec;
    for (const auto& t : temps) fs::remove(t, ec);
    if (dataset_moved) fs::remove(dataset_path, ec);
    throw;
  }
  return result;
}

// --- iterations ---------------------------------------------------------------------

json to_json(const HandoffManifest& m) {
  return json{{"format_version", 1},
              {"iteration", m.iteration},
              {"iterations", m.iterations},
              {"dataset_path", m.dataset_path},
              {"stats_path", m.stats_path},
              {"record_count", m.record_count},
              {"content_hash", m.content_hash},
              {"backend_id", m.backend_id},
              {"awaiting_endpoint", m.awaiting_endpoint}};
}

HandoffManifest manifest_from_json(const json& doc) {
  try {
    HandoffManifest m;
    m.iteration = doc.at("iteration").get<int>();
    m.iterations = doc.at("iterations").get<int>();
    m.dataset_path = doc.at("dataset_path").get<std::string>();
    m.stats_path = doc.value("stats_path", std::string());
    m.record_count = doc.at("record_count").get<long>();
    m.content_hash = doc.at("content_hash").get<std::string>();
    m.backend_id = doc.value("backend_id", std::string());
    m.awaiting_endpoint = doc.value("awaiting_endpoint", false);
    return m;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed handoff manifest: ") + e.what());
  }
}

HandoffManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open manifest " + path.string());
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw InvalidInput(path.string() + ": not valid JSON");
  return manifest_from_json(doc);
}

IterationReport run_iterations(const IterationPlan& plan, const BackendFactory& factory, int start) {
  if (plan.iterations < 1) throw InvalidInput("iterations must be >= 1");
  if (start < 0 || start >= plan.iterations) throw InvalidInput("start iteration out of range");
  IterationReport report;
  report.next_iteration = start;
  report.videos_total = static_cast<int>(plan.videos.size());

  std::shared_ptr<GeneratorBackend> backend = factory(start);
  for (int i = start; i < plan.iterations; ++i) {
    if (!backend) {
      report.paused = true;
      report.next_iteration = i;
      return report;
    }
    PipelineOptions options = plan.options;
    options.iteration = i;
    std::vector<VideoOutcome> outcomes(plan.videos.size());
    parallel_for(plan.videos.size(), plan.parallelism,
                 [&](std::size_t v) { outcomes[v] = process_video(plan.videos[v], *backend, options); });

    std::vector<TrainingConversation> conversations;
    int skipped = 0;
    int transport_failed = 0;
    for (auto& o : outcomes) {
      if (o.conversation) {
        conversations.push_back(std::move(*o.conversation));
      } else {
        ++skipped;
        transport_failed += o.transport_failure ? 1 : 0;
      }
    }
    report.videos_failed_transport = transport_failed;
    if (transport_failed > 0 && transport_failed == report.videos_total) {
      // Nothing reached the generator. Leave iteration i unexported so a
      // rerun picks it up again; replies cached so far are reused.
      report.paused = true;
      report.next_iteration = i;
      return report;
    }

    const fs::path dir = plan.out_dir / ("iter_" + std::to_string(i));
    ExportResult exported = standardize_and_export(std::move(conversations), dir / "dataset.jsonl",
                                                   dir / "stats.json", skipped, plan.max_records);

    HandoffManifest m;
    m.iteration = i;
    m.iterations = plan.iterations;
    m.dataset_path = exported.dataset_path.string();
    m.stats_path = exported.stats_path.string();
    m.record_count = exported.record_count;
    m.content_hash = exported.content_hash;
    m.backend_id = backend->id();

    backend = i + 1 < plan.iterations ? factory(i + 1) : nullptr;
    m.awaiting_endpoint = i + 1 < plan.iterations && !backend;
    const std::string text = to_json(m).dump(2) + "\n";
    for (const fs::path& p : {dir / "handoff.json", plan.out_dir / "handoff.json"}) {
      std::ofstream out(p, std::ios::trunc);
      out << text;
      if (!out) throw std::runtime_error("cannot write " + p.string());
    }
    report.manifests.push_back(m);
    report.next_iteration = i + 1;
  }
  return report;
}

// --- audit --------------------------------------------------------------------------

const AuditDimension& AuditReport::dimension(const std::string& dim) const {
  for (const auto& d : dimensions) {
    if (d.name == dim) return d;
  }
  throw InvalidInput("unknown audit dimension '" + dim + "'");
}

namespace {

bool trajectory_consistent(const TrainingConversation& c) {
  const Provenance& p = c.provenance;
  if (p.relevance.size() != c.turns.size()) return false;
  for (std::size_t t = 0; t < c.turns.size(); ++t) {
    const bool any_relevant = p.relevance[t].find('R') != std::string::npos;
    const bool silent = c.turns[t].assistant == kSilent;
    if (!any_relevant && !silent) return false;
    if (!silent && trim(c.turns[t].assistant).empty()) return false;
  }
  return true;
}

void finish(AuditDimension& d, int passed) {
  if (d.checked > 0) d.pass_rate = static_cast<double>(passed) / d.checked;
}

}  // namespace

AuditReport audit(const std::vector<TrainingConversation>& dataset, std::size_t n, std::uint64_t seed,
                  GeneratorBackend* judge, const PromptLibrary& prompts) {
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(n, order.size()));
  std::sort(order.begin(), order.end());

  std::map<std::string, int> key_counts;
  for (const auto& c : dataset) ++key_counts[duplicate_key(c)];

  AuditReport report;
  report.sampled = static_cast<int>(order.size());
  AuditDimension task, answerable, relevance, trajectory, validity;
  task.name = "task_type_consistency";
  answerable.name = "question_answerability";
  relevance.name = "temporal_relevance_quality";
  trajectory.name = "trajectory_consistency";
  validity.name = "sample_validity";
  int task_ok = 0, answer_ok = 0, relevance_ok = 0, trajectory_ok = 0, validity_ok = 0;

  auto yes = [&](Stage stage, const std::string& video, const std::string& prompt, std::optional<bool>& out) {
    try {
      const JudgeVerdict v = parse_verdict(JudgeTemplate::C4SsrRecIntention,
                                           judge->generate({stage, video, prompt, {}, json{{"audit", true}}, 0}));
      if (v.ok()) out = v.flag;
    } catch (const TransportError&) {
    }
  };

  for (std::size_t idx : order) {
    const TrainingConversation& c = dataset[idx];
    ++trajectory.checked;
    if (trajectory_consistent(c)) {
      ++trajectory_ok;
    } else {
      trajectory.failures.push_back(c.video_id);
    }
    ++validity.checked;
    if (!validity_issue(c) && key_counts[duplicate_key(c)] == 1) {
      ++validity_ok;
    } else {
      validity.failures.push_back(c.video_id);
    }
    if (!judge) continue;

    std::optional<bool> r;
    yes(Stage::Classify, c.video_id,
        prompts.render("a1_task_type", {{"task_type", std::string(name(c.category))}, {"question", c.question}}), r);
    if (r) {
      ++task.checked;
      if (*r) {
        ++task_ok;
      } else {
        task.failures.push_back(c.video_id);
      }
    }

    std::vector<std::string> notes;
    for (const auto& e : c.provenance.evidence) {
      if (!e.empty()) notes.push_back(e);
    }
    r.reset();
    yes(Stage::Questions, c.video_id,
        prompts.render("a2_answerable", {{"question", c.question}, {"captions", join(notes, "\n")}}), r);
    if (r) {
      ++answerable.checked;
      if (*r) {
        ++answer_ok;
      } else {
        answerable.failures.push_back(c.video_id);
      }
    }

    if (!c.turns.empty() && c.provenance.evidence.size() == c.turns.size() &&
        c.provenance.relevance.size() == c.turns.size()) {
      std::uniform_int_distribution<std::size_t> pick(0, c.turns.size() - 1);
      const std::size_t t = pick(rng);
      const std::string& row = c.provenance.relevance[t];
      const bool rel = static_cast<std::size_t>(c.tracked_index) < row.size() &&
                       row[static_cast<std::size_t>(c.tracked_index)] == 'R';
      const std::string& ev = c.provenance.evidence[t];
      r.reset();
      yes(Stage::Relevance, c.video_id,
          prompts.render("a3_relevance", {{"question", c.question},
                                          {"segment_index", std::to_string(t + 1)},
                                          {"label", rel ? "Relevant" : "Irrelevant"},
                                          {"evidence", ev.empty() ? "N/A" : ev}}),
          r);
      if (r) {
        ++relevance.checked;
        if (*r) {
          ++relevance_ok;
        } else {
          relevance.failures.push_back(c.video_id);
        }
      }
    }
  }
  finish(task, task_ok);
  finish(answerable, answer_ok);
  finish(relevance, relevance_ok);
  finish(trajectory, trajectory_ok);
  finish(validity, validity_ok);
  report.dimensions = {task, answerable, relevance, trajectory, validity};
  return report;
}

json to_json(const AuditReport& r) {
  json dims = json::array();
  for (const auto& d : r.dimensions) {
    dims.push_back({{"name", d.name},
                    {"pass_rate", d.pass_rate ? json(*d.pass_rate) : json(nullptr)},
                    {"checked", d.checked},
                    {"failures", d.failures}});
  }
  return json{{"sampled", r.sampled}, {"dimensions", dims}};
}

}  // namespace turnwise::evo
