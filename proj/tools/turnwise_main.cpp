#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "turnwise/analysis.hpp"
#include "turnwise/config.hpp"
#include "turnwise/errors.hpp"
#include "turnwise/runner.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace turnwise;

namespace {

// Token for endpoints given on the command line.
constexpr const char* kApiKeyEnv = "TURNWISE_API_KEY";

std::string env_api_key() {
  const char* v = std::getenv(kApiKeyEnv);
  return v ? v : "";
}

RunConfig config_or_default(const std::string& path) {
  if (!path.empty()) return load_config(path);
  return parse_config(json::object(), fs::current_path());
}

fs::path absolute_path(const std::string& p) { return fs::absolute(p).lexically_normal(); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw InvalidInput(path.string() + ": not valid JSON");
  return doc;
}

void print_json(const json& doc) { std::cout << doc.dump(2) << "\n"; }

struct SynthFlags {
  std::string config;
  std::string videos;
  int iterations = 0;
  std::vector<std::string> backends;
  std::string backend_model = "generator";
  std::string resume;
  std::string out;
};

void add_synth_flags(CLI::App* cmd, SynthFlags& f) {
  cmd->add_option("--config", f.config, "run configuration (JSON)");
  cmd->add_option("--videos", f.videos, "video directory, JSON list or JSONL");
  cmd->add_option("--iterations", f.iterations, "number of self-evolution iterations")->check(CLI::PositiveNumber);
  cmd->add_option("--backend", f.backends,
                  "generator endpoint URL; repeat for later iterations (token from " + std::string(kApiKeyEnv) + ")");
  cmd->add_option("--backend-model", f.backend_model, "model name sent with --backend endpoints");
  cmd->add_option("--resume", f.resume, "handoff manifest of the last finished iteration");
  cmd->add_option("--out", f.out, "output directory");
}

int run_synth_command(const SynthFlags& f) {
  RunConfig config = config_or_default(f.config);
  if (!f.videos.empty()) config.synth.videos = absolute_path(f.videos);
  if (f.iterations > 0) config.synth.iterations = f.iterations;
  if (!f.out.empty()) config.output_dir = absolute_path(f.out);
  SynthOptions options;
  if (!f.resume.empty()) options.resume = absolute_path(f.resume);
  for (const auto& url : f.backends) {
    EndpointConfig e;
    e.url = url;
    e.model = f.backend_model;
    e.api_key = env_api_key();
    options.endpoints.push_back(e);
  }
  config.validate();
  SynthResult r = run_synth(config, nullptr, options);
  json out{{"exit_code", r.exit_code}, {"next_iteration", r.report.next_iteration}, {"paused", r.report.paused}};
  json manifests = json::array();
  for (const auto& m : r.report.manifests) manifests.push_back(evo::to_json(m));
  out["iterations"] = manifests;
  if (!r.message.empty()) out["message"] = r.message;
  print_json(out);
  if (r.exit_code != kExitOk && !r.message.empty()) std::cerr << "turnwise: " << r.message << "\n";
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"turnwise: streaming dialogue evaluation and self-generated training data"};
  app.require_subcommand(1);

  // eval
  auto* eval = app.add_subcommand("eval", "run sessions, judge, score and aggregate");
  std::string eval_config, from_logs, eval_out, judge_endpoint, judge_model, report_format;
  std::size_t judge_concurrency = 0;
  eval->add_option("--config", eval_config, "run configuration (JSON)")->required();
  eval->add_option("--from-logs", from_logs, "score pre-recorded trajectory JSONL instead of running sessions");
  eval->add_option("--out", eval_out, "output directory");
  eval->add_option("--judge-endpoint", judge_endpoint,
                   "judge base URL; token from " + std::string(kApiKeyEnv));
  eval->add_option("--judge-model", judge_model, "judge model name");
  eval->add_option("--judge-concurrency", judge_concurrency, "concurrent judge calls")->check(CLI::PositiveNumber);
  eval->add_option("--report-format", report_format, "json, table or both")
      ->check(CLI::IsMember({"json", "table", "both"}));

  // synth, and the same workflow as `evo run`
  SynthFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "generate a streaming dialogue dataset");
  add_synth_flags(synth, synth_flags);
  auto* evo_cmd = app.add_subcommand("evo", "self-evolution iterations");
  evo_cmd->require_subcommand(1);
  SynthFlags evo_flags;
  auto* evo_run = evo_cmd->add_subcommand("run", "run or resume generation iterations");
  add_synth_flags(evo_run, evo_flags);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "closed-form analyses, printed as JSON");
  analyze->require_subcommand(1);
  auto* eta = analyze->add_subcommand("eta", "per-token score");
  double eta_overall = -1, eta_tokens = -1;
  std::string eta_report;
  eta->add_option("--overall", eta_overall, "overall score in percent");
  eta->add_option("--tokens", eta_tokens, "average tokens per turn");
  eta->add_option("--report", eta_report, "report.json written by eval");
  auto* spearman_cmd = analyze->add_subcommand("spearman", "rank agreement between judges");
  std::string ranks_path;
  spearman_cmd->add_option("--ranks", ranks_path, "rank file")->required();
  auto* noise = analyze->add_subcommand("noise", "noise-corrected loss and effective sample size");
  double rho_minus = 0, rho_plus = 0, loss_r = 0.8, loss_i = 0.2, n_samples = 1000, eps_v = -1;
  noise->add_option("--rho-minus", rho_minus, "P(label R | truth I)")->required();
  noise->add_option("--rho-plus", rho_plus, "P(label I | truth R)")->required();
  noise->add_option("--loss-relevant", loss_r, "loss against label R");
  noise->add_option("--loss-irrelevant", loss_i, "loss against label I");
  noise->add_option("--eps-v", eps_v, "annotator error rate for the effective sample size");
  noise->add_option("--n", n_samples, "self-generated sample count");

  // audit
  auto* audit_cmd = app.add_subcommand("audit", "quality audit of a generated dataset");
  std::string audit_config, audit_dataset, audit_out;
  std::size_t audit_samples = 0;
  std::uint64_t audit_seed = 0;
  bool audit_seed_set = false;
  audit_cmd->add_option("--config", audit_config, "run configuration (JSON)");
  audit_cmd->add_option("--dataset", audit_dataset, "dataset JSONL");
  audit_cmd->add_option("--samples", audit_samples, "conversations to sample");
  audit_cmd->add_option("--seed", audit_seed, "sampling seed")->each([&](const std::string&) { audit_seed_set = true; });
  audit_cmd->add_option("--out", audit_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*eval) {
      RunConfig config = load_config(eval_config);
      if (!eval_out.empty()) config.output_dir = absolute_path(eval_out);
      if (!judge_endpoint.empty()) {
        config.judge.kind = JudgeSettings::Kind::Http;
        config.judge.config.endpoint.url = judge_endpoint;
        if (config.judge.config.endpoint.api_key.empty()) config.judge.config.endpoint.api_key = env_api_key();
      }
      if (!judge_model.empty()) config.judge.config.endpoint.model = judge_model;
      if (judge_concurrency > 0) config.judge.config.concurrency = judge_concurrency;
      if (!report_format.empty()) config.report_format = parse_report_format(report_format);
      config.validate();
      EvalOptions options;
      if (!from_logs.empty()) options.from_logs = absolute_path(from_logs);
      EvalResult r = run_eval(config, nullptr, nullptr, options);
      if (r.report) {
        if (config.report_format != ReportFormat::Table) print_json(read_json(config.output_dir / "report.json"));
        if (config.report_format != ReportFormat::Json) std::cout << format_table({*r.report});
      }
      if (!r.message.empty()) std::cerr << "turnwise: " << r.message << "\n";
      return r.exit_code;
    }
    if (*synth) return run_synth_command(synth_flags);
    if (*evo_run) return run_synth_command(evo_flags);
    if (*eta) {
      double overall = eta_overall, tokens = eta_tokens;
      if (!eta_report.empty()) {
        const json doc = read_json(eta_report);
        const json& rep = doc.contains("report") ? doc.at("report") : doc;
        if (overall < 0) overall = rep.at("overall").get<double>();
        if (tokens < 0) tokens = rep.at("avg_tokens_per_turn").get<double>();
      }
      if (overall < 0 || tokens < 0) throw ConfigError("analyze eta needs --overall and --tokens, or --report");
      print_json({{"overall", overall}, {"avg_tokens_per_turn", tokens}, {"eta", analysis::per_token_score(overall, tokens)}});
      return 0;
    }
    if (*spearman_cmd) {
      const json doc = read_json(ranks_path);
      const std::string reference = doc.at("reference").get<std::string>();
      std::vector<std::pair<std::string, analysis::RankVector>> judges;
      for (const json& j : doc.at("judges")) {
        judges.emplace_back(j.at("name").get<std::string>(), analysis::RankVector(j.at("ranks").get<std::vector<int>>()));
      }
      const analysis::RankVector* ref = nullptr;
      for (const auto& [name, ranks] : judges) {
        if (name == reference) ref = &ranks;
      }
      if (!ref) throw InvalidInput("reference judge '" + reference + "' is not in the rank file");
      json against = json::object();
      std::vector<analysis::RankVector> others;
      double min_pair = 1.0;
      for (std::size_t a = 0; a < judges.size(); ++a) {
        for (std::size_t b = a + 1; b < judges.size(); ++b) {
          min_pair = std::min(min_pair, analysis::spearman(judges[a].second, judges[b].second));
        }
        if (judges[a].first == reference) continue;
        const double rho = analysis::spearman(*ref, judges[a].second);
        against[judges[a].first] = rho;
        others.push_back(judges[a].second);
      }
      print_json({{"reference", reference},
                  {"spearman_vs_reference", against},
                  {"mean_vs_reference", others.empty() ? json(nullptr) : json(analysis::mean_spearman(*ref, others))},
                  {"min_pairwise", min_pair}});
      return 0;
    }
    if (*noise) {
      const analysis::NoiseModel model(rho_minus, rho_plus);
      const double if_r = analysis::corrected_loss(loss_r, loss_i, analysis::NoisyLabel::Relevant, model);
      const double if_i = analysis::corrected_loss(loss_i, loss_r, analysis::NoisyLabel::Irrelevant, model);
      json out{{"rho_minus", rho_minus},
               {"rho_plus", rho_plus},
               {"loss_relevant", loss_r},
               {"loss_irrelevant", loss_i},
               {"corrected_if_labeled_relevant", if_r},
               {"corrected_if_labeled_irrelevant", if_i},
               {"expected_given_truth_relevant", (1 - rho_plus) * if_r + rho_plus * if_i},
               {"expected_given_truth_irrelevant", (1 - rho_minus) * if_i + rho_minus * if_r}};
      if (eps_v >= 0) {
        out["eps_v"] = eps_v;
        out["n"] = n_samples;
        out["effective_samples"] = analysis::effective_samples(n_samples, eps_v);
      }
      print_json(out);
      return 0;
    }
    if (*audit_cmd) {
      RunConfig config = config_or_default(audit_config);
      if (!audit_dataset.empty()) config.audit.dataset = absolute_path(audit_dataset);
      if (audit_samples > 0) config.audit.samples = audit_samples;
      if (audit_seed_set) config.seed = audit_seed;
      if (!audit_out.empty()) config.output_dir = absolute_path(audit_out);
      AuditResult r = run_audit(config, nullptr);
      if (r.exit_code == kExitOk) print_json(evo::to_json(r.report));
      if (!r.message.empty()) std::cerr << "turnwise: " << r.message << "\n";
      return r.exit_code;
    }
  } catch (const ConfigError& e) {
    std::cerr << "turnwise: config: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "turnwise: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
