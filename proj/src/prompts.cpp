#include "turnwise/prompts.hpp"

#include <fstream>
#include <sstream>

#include "turnwise/errors.hpp"

namespace turnwise {

namespace detail {
const std::map<std::string, std::string>& embedded_prompts();
}

namespace {

bool slot_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool slot_char(char c) { return slot_start(c) || (c >= '0' && c <= '9'); }

// Length of the slot name starting at text[pos] (just after '{') when it is
// closed by '}', else 0.
std::size_t slot_length(std::string_view text, std::size_t pos) {
  if (pos >= text.size() || !slot_start(text[pos])) return 0;
  std::size_t end = pos + 1;
  while (end < text.size() && slot_char(text[end])) ++end;
  if (end >= text.size() || text[end] != '}') return 0;
  return end - pos;
}

}  // namespace

std::string_view template_name(JudgeTemplate id) {
  switch (id) {
    case JudgeTemplate::C1Accuracy: return "c1_accuracy";
    case JudgeTemplate::C2Repetition: return "c2_repetition";
    case JudgeTemplate::C3CrrIntention: return "c3_crr_intention";
    case JudgeTemplate::C4SsrRecIntention: return "c4_ssr_rec_intention";
    case JudgeTemplate::C5FarCrr: return "c5_far_crr";
    case JudgeTemplate::C6FarSsr: return "c6_far_ssr";
    case JudgeTemplate::C7FarRec: return "c7_far_rec";
  }
  return "";
}

std::string_view template_label(JudgeTemplate id) {
  switch (id) {
    case JudgeTemplate::C1Accuracy: return "C1-accuracy";
    case JudgeTemplate::C2Repetition: return "C2-repetition";
    case JudgeTemplate::C3CrrIntention: return "C3-crr-intention";
    case JudgeTemplate::C4SsrRecIntention: return "C4-ssr-rec-intention";
    case JudgeTemplate::C5FarCrr: return "C5-far-crr";
    case JudgeTemplate::C6FarSsr: return "C6-far-ssr";
    case JudgeTemplate::C7FarRec: return "C7-far-rec";
  }
  return "";
}

std::string render_template(std::string_view text, const Slots& slots) {
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const std::size_t len = slot_length(text, i + 1);
      if (len > 0) {
        const std::string name(text.substr(i + 1, len));
        auto it = slots.find(name);
        if (it == slots.end()) throw TemplateError("missing value for slot '" + name + "'");
        out += it->second;
        i += len + 2;
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

std::set<std::string> template_slots(std::string_view text) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{') continue;
    const std::size_t len = slot_length(text, i + 1);
    if (len > 0) {
      names.emplace(text.substr(i + 1, len));
      i += len + 1;
    }
  }
  return names;
}

const PromptLibrary& PromptLibrary::builtin() {
  static const PromptLibrary lib = [] {
    PromptLibrary l;
    l.templates_ = detail::embedded_prompts();
    return l;
  }();
  return lib;
}

PromptLibrary PromptLibrary::from_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw TemplateError("prompt directory not found: " + dir.string());
  PromptLibrary l;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    l.templates_[entry.path().stem().string()] = buf.str();
  }
  return l;
}

const std::string& PromptLibrary::raw(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw TemplateError("unknown prompt template '" + name + "'");
  return it->second;
}

std::string PromptLibrary::render(const std::string& name, const Slots& slots) const {
  try {
    return render_template(raw(name), slots);
  } catch (const TemplateError& e) {
    throw TemplateError(name + ": " + e.what());
  }
}

std::string PromptLibrary::render(JudgeTemplate id, const Slots& slots) const {
  return render(std::string(template_name(id)), slots);
}

std::map<std::string, std::string> PromptLibrary::sections(const std::string& name) const {
  std::map<std::string, std::string> out;
  std::istringstream in(raw(name));
  std::string line;
  std::string current;
  while (std::getline(in, line)) {
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      out[current];
      continue;
    }
    if (current.empty()) continue;
    auto& value = out[current];
    if (!value.empty()) value += '\n';
    value += line;
  }
  return out;
}

}  // namespace turnwise
