#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace turnwise {

// Slot values keyed by slot name.
using Slots = std::map<std::string, std::string>;

// Judge templates, one per rubric.
enum class JudgeTemplate { C1Accuracy, C2Repetition, C3CrrIntention, C4SsrRecIntention, C5FarCrr, C6FarSsr, C7FarRec };

std::string_view template_name(JudgeTemplate id);   // data file stem, e.g. "c1_accuracy"
std::string_view template_label(JudgeTemplate id);  // short id, e.g. "C1-accuracy"

// Replaces each {slot} (slot names are [a-z_][a-z0-9_]*) with its value.
// Braces that do not form a slot name are copied through, so JSON examples
// inside templates survive. Throws TemplateError naming the first slot
// without a value. Values are inserted verbatim and never re-scanned.
std::string render_template(std::string_view text, const Slots& slots);

// Slot names referenced by a template, sorted.
std::set<std::string> template_slots(std::string_view text);

// Named prompt templates. builtin() serves the copies compiled into the
// binary; from_directory() reads *.txt from disk so templates can be
// overridden without rebuilding.
class PromptLibrary {
 public:
  static const PromptLibrary& builtin();
  static PromptLibrary from_directory(const std::filesystem::path& dir);

  bool contains(const std::string& name) const { return templates_.count(name) > 0; }
  // Throws TemplateError for an unknown name.
  const std::string& raw(const std::string& name) const;
  std::string render(const std::string& name, const Slots& slots) const;
  std::string render(JudgeTemplate id, const Slots& slots) const;

  // Sections of a "[key]\nvalue" file such as the category clause files.
  std::map<std::string, std::string> sections(const std::string& name) const;

  const std::map<std::string, std::string>& all() const { return templates_; }

 private:
  std::map<std::string, std::string> templates_;
};

}  // namespace turnwise
