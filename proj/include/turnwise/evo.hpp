#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnwise/model_call.hpp"
#include "turnwise/prompts.hpp"

namespace turnwise::evo {

// --- taxonomy ---------------------------------------------------------------

enum class TaskCategory { ImmediateVisual, MemoryDependent, TemporalAggregation, AnticipatoryMonitoring,
                          DynamicEventDescription };

inline constexpr TaskCategory kAllCategories[] = {
    TaskCategory::ImmediateVisual, TaskCategory::MemoryDependent, TaskCategory::TemporalAggregation,
    TaskCategory::AnticipatoryMonitoring, TaskCategory::DynamicEventDescription};

std::string_view code(TaskCategory c);  // "IV", "MD", "TA", "AM", "DED"
std::string_view name(TaskCategory c);  // "Immediate Visual", ...
// Throws InvalidInput.
TaskCategory category_from_code(std::string_view code);

// Finds a category in free text. Full names win over codes; codes must stand
// alone as words (case-sensitive, so "am" in prose is not Anticipatory
// Monitoring). Among matches of the same kind the earliest one wins.
std::optional<TaskCategory> parse_category(std::string_view reply);

// Prompt clauses that differ per category.
struct CategoryClauses {
  std::string skill;
  std::string question_instruction;
  std::string annotation_target;
  std::string response_rule;
};
CategoryClauses clauses(TaskCategory c, const PromptLibrary& prompts = PromptLibrary::builtin());

// --- videos and segments ------------------------------------------------------

struct Video {
  std::string id;
  std::string uri;
  double duration_s = 0.0;
};

struct Segment {
  int index = 0;  // 0-based
  double start_s = 0.0;
  double end_s = 0.0;
  std::string ref;  // "<uri>#t=<start>,<end>"
};

// ceil(duration / segment_seconds) uniform segments; the last one is clipped
// to the video end. Throws InvalidInput for a nonpositive duration or length.
std::vector<Segment> make_segments(const Video& video, double segment_seconds = 30.0);

std::string format_clock(double seconds);  // "m:ss"

// Video pool: a JSON array or JSON-Lines file of {id, uri, duration_s}, or a
// directory of such *.json descriptors (read in name order).
std::vector<Video> load_videos(const std::filesystem::path& path);

// --- generator backend ----------------------------------------------------------

enum class Stage { Classify, Questions, Relevance, Select, Decide };
std::string_view to_string(Stage s);

struct GenerationCall {
  Stage stage = Stage::Classify;
  std::string video_id;
  std::string prompt;
  std::vector<std::string> media;  // video or segment refs attached to the prompt
  nlohmann::json context = nlohmann::json::object();  // stage-specific indices
  int attempt = 0;  // > 0 on a retry; bypasses cached replies
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  // Throws TransportError when unreachable.
  virtual std::string generate(const GenerationCall& call) = 0;
  virtual std::string id() const = 0;
};

// Chat-completions generator. Media refs are sent as video_url parts. Replies
// are cached on (model, prompt + media).
class HttpGenerator : public GeneratorBackend {
 public:
  HttpGenerator(EndpointConfig endpoint, std::shared_ptr<Transport> transport, std::shared_ptr<ContentCache> cache,
                std::size_t max_in_flight = 8, int max_tokens = 1024);

  std::string generate(const GenerationCall& call) override;
  std::string id() const override { return chat_.model(); }
  CallStats stats() const { return chat_.stats(); }

 private:
  CachedChat chat_;
  int max_tokens_;
};

// Replies computed by a function; used for tests and offline runs.
class ScriptedGenerator : public GeneratorBackend {
 public:
  using Fn = std::function<std::string(const GenerationCall&)>;
  explicit ScriptedGenerator(Fn fn, std::string id = "scripted") : fn_(std::move(fn)), id_(std::move(id)) {}

  // Program keyed by video id:
  //   {"videos": {"<id>": {"category": "...", "questions": "...",
  //                        "segments": ["<B.2 reply>", ...], "select": "...",
  //                        "decide": "<reply>" (optional)}}}
  // Without "decide" the generator answers every decision call with
  // should_respond=true and the newest evidence note for the tracked
  // question. Missing entries produce an empty reply.
  static std::unique_ptr<ScriptedGenerator> from_json(const nlohmann::json& program, std::string id = "scripted");

  std::string generate(const GenerationCall& call) override { return fn_(call); }
  std::string id() const override { return id_; }

 private:
  Fn fn_;
  std::string id_;
};

// --- stage outputs --------------------------------------------------------------

// "Q<n>: text" lines in order, deduplicated case-insensitively, at most
// max_questions. Anything else (such as a preamble) is ignored.
std::vector<std::string> parse_questions(std::string_view reply, std::size_t max_questions);

enum class Relevance { Irrelevant, Relevant };

struct Cell {
  Relevance value = Relevance::Irrelevant;
  std::string label;     // as written by the annotator, e.g. "Yes", "Reveal"
  std::string evidence;  // note after the label, "" when absent
};

// Segments x questions grid, 0-based indices.
class RelevanceMatrix {
 public:
  RelevanceMatrix() = default;
  RelevanceMatrix(int segments, int questions);

  int segments() const { return segments_; }
  int questions() const { return questions_; }
  Cell& at(int s, int k);
  const Cell& at(int s, int k) const;

  bool relevant(int s, int k) const { return at(s, k).value == Relevance::Relevant; }
  bool row_all_irrelevant(int s) const;
  int relevant_count(int k) const;
  std::optional<int> first_relevant(int k) const;
  // Same matrix restricted to the listed question columns, in that order.
  RelevanceMatrix select_columns(const std::vector<int>& keep) const;
  // Row as a string of 'R' / 'I', one character per question.
  std::string row_string(int s) const;

 private:
  int segments_ = 0;
  int questions_ = 0;
  std::vector<Cell> cells_;
};

// Parses "- Question k: <label> - <evidence>" lines of one segment reply.
// Labels: Yes, Setup, Reveal, Post-Reveal (relevant); No, N/A (irrelevant).
// Returns nullopt when no line parses; questions without a line stay
// Irrelevant.
std::optional<std::vector<Cell>> parse_relevance_reply(std::string_view reply, int questions);

struct Selection {
  int index = 0;  // 0-based column
  std::string task_prompt;
  std::string reasoning;
  bool fallback = false;
};

// Reads selected_question_idx (1-based, as shown to the model). Falls back to
// the column with the most Relevant cells, lowest index on ties.
Selection parse_selection(std::string_view reply, const RelevanceMatrix& matrix);

struct Decision {
  bool should_respond = false;
  std::string reason;
  std::string response;
  bool malformed = false;
};

// Malformed replies, and should_respond=true with a blank response, decide
// silence.
Decision parse_decision(std::string_view reply);

// --- conversations ----------------------------------------------------------------

struct ConversationTurn {
  std::vector<std::string> segment_refs;
  std::optional<std::string> user;
  std::string assistant;  // "<silent>" or response text

  bool operator==(const ConversationTurn&) const = default;
};

struct Provenance {
  int iteration = 0;
  std::string backend_id;
  double duration_s = 0.0;
  std::vector<std::string> generated_questions;  // parsed stage-2 output
  std::vector<std::string> questions;            // columns that survived annotation
  std::vector<std::string> relevance;            // one 'R'/'I' row per turn
  std::vector<std::string> evidence;             // tracked-question note per turn
  std::string task_prompt;
  bool selection_fallback = false;
  std::map<std::string, std::string> prompt_sha256;  // stage -> template hash

  bool operator==(const Provenance&) const = default;
};

struct TrainingConversation {
  std::string video_id;
  TaskCategory category = TaskCategory::ImmediateVisual;
  int tracked_index = 0;  // 0-based into provenance.questions
  std::string question;
  std::string system;
  std::vector<ConversationTurn> turns;
  Provenance provenance;

  bool operator==(const TrainingConversation&) const = default;
};

nlohmann::json to_json(const TrainingConversation& c);
// Throws InvalidInput on a malformed record.
TrainingConversation conversation_from_json(const nlohmann::json& doc);
std::vector<TrainingConversation> load_dataset(const std::filesystem::path& path);

// --- per-video pipeline ------------------------------------------------------------

struct PipelineOptions {
  std::size_t max_questions = 5;
  double segment_seconds = 30.0;
  std::size_t caption_cap = 40;      // most recent segments fed to a decision
  std::size_t sample_segments = 5;   // annotated segments shown to the selector
  double fps = 0.5;                  // for the system prompt of exported chats
  int iteration = 0;
};

struct VideoOutcome {
  std::string video_id;
  std::optional<TrainingConversation> conversation;
  std::string skip_reason;  // set when no conversation was produced
  std::vector<std::string> warnings;
  long decision_calls = 0;
  bool transport_failure = false;
};

// Runs classification, question generation, relevance annotation, question
// selection and the causal roll-out for one video. Never throws for backend
// trouble; the outcome records why a video was skipped.
VideoOutcome process_video(const Video& video, GeneratorBackend& backend, const PipelineOptions& options,
                           const PromptLibrary& prompts = PromptLibrary::builtin());

// Roll-out on an already annotated video. Exposed for tests.
TrainingConversation rollout(const Video& video, const std::vector<Segment>& segments, TaskCategory category,
                             const std::vector<std::string>& questions, const RelevanceMatrix& matrix,
                             const Selection& selection, GeneratorBackend& backend, const PipelineOptions& options,
                             long* decision_calls = nullptr, const PromptLibrary& prompts = PromptLibrary::builtin());

// --- validity, export and stats ---------------------------------------------------

// Reason a conversation is unusable, or nullopt: empty/malformed, tracked
// question without Relevant evidence, a response on a turn with no Relevant
// cell, or turn/row count mismatch.
std::optional<std::string> validity_issue(const TrainingConversation& c);

// Key identifying duplicate trajectories: video, question and action sequence.
std::string duplicate_key(const TrainingConversation& c);

struct FilterResult {
  std::vector<TrainingConversation> kept;
  std::map<std::string, int> dropped;  // reason -> count
};

FilterResult apply_filters(std::vector<TrainingConversation> conversations);

nlohmann::json dataset_stats(const std::vector<TrainingConversation>& kept, const FilterResult& filtered,
                             int skipped_videos);

struct ExportResult {
  std::filesystem::path dataset_path;
  std::filesystem::path stats_path;
  long record_count = 0;
  std::string content_hash;
  nlohmann::json stats;
};

// Filters, optionally truncates to `max_records`, and writes the dataset and
// stats atomically. On a write failure nothing is left behind.
ExportResult standardize_and_export(std::vector<TrainingConversation> conversations,
                                    const std::filesystem::path& dataset_path,
                                    const std::filesystem::path& stats_path, int skipped_videos = 0,
                                    std::optional<std::size_t> max_records = std::nullopt);

// --- iterations ---------------------------------------------------------------------

struct HandoffManifest {
  int iteration = 0;
  int iterations = 1;
  std::string dataset_path;
  std::string stats_path;
  long record_count = 0;
  std::string content_hash;
  std::string backend_id;
  bool awaiting_endpoint = false;  // true: iteration + 1 needs a new model
};

nlohmann::json to_json(const HandoffManifest& m);
HandoffManifest manifest_from_json(const nlohmann::json& doc);
HandoffManifest load_manifest(const std::filesystem::path& path);

// Returns the generator for an iteration, or nullptr when no endpoint has
// been supplied for it yet.
using BackendFactory = std::function<std::shared_ptr<GeneratorBackend>(int iteration)>;

struct IterationPlan {
  std::vector<Video> videos;
  PipelineOptions options;
  int iterations = 1;
  std::filesystem::path out_dir;
  std::size_t parallelism = 4;
  std::optional<std::size_t> max_records;
};

struct IterationReport {
  std::vector<HandoffManifest> manifests;
  bool paused = false;
  int next_iteration = 0;
  int videos_total = 0;
  int videos_failed_transport = 0;
};

// Runs iterations start..I-1, writing <out>/iter_<i>/{dataset.jsonl,
// stats.json, handoff.json}. Stops with paused=true when the factory has no
// backend for the next iteration; resuming means calling again with
// start = manifest.iteration + 1.
IterationReport run_iterations(const IterationPlan& plan, const BackendFactory& factory, int start = 0);

// --- audit --------------------------------------------------------------------------

struct AuditDimension {
  std::string name;
  std::optional<double> pass_rate;  // nullopt when not evaluated
  int checked = 0;
  std::vector<std::string> failures;  // video ids
};

struct AuditReport {
  int sampled = 0;
  std::vector<AuditDimension> dimensions;  // five, in a fixed order
  const AuditDimension& dimension(const std::string& name) const;
};

// Samples n conversations with `seed`. Trajectory consistency and sample
// validity are mechanical; task-type consistency, answerability and
// relevance quality need `judge` and are left unevaluated without it.
AuditReport audit(const std::vector<TrainingConversation>& dataset, std::size_t n, std::uint64_t seed,
                  GeneratorBackend* judge = nullptr, const PromptLibrary& prompts = PromptLibrary::builtin());

nlohmann::json to_json(const AuditReport& r);

}  // namespace turnwise::evo
