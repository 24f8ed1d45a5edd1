#include "apex/sop.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "apex/common.hpp"

namespace apex {

using nlohmann::json;

std::string_view to_string(ParamMode mode) {
  switch (mode) {
    case ParamMode::Numeric: return "numeric";
    case ParamMode::Enum: return "enum";
    case ParamMode::Indicator: return "indicator";
  }
  return "numeric";
}

ParamMode param_mode_from_string(std::string_view s) {
  const auto folded = text::casefold(text::trim(s));
  if (folded == "numeric") return ParamMode::Numeric;
  if (folded == "enum") return ParamMode::Enum;
  if (folded == "indicator") return ParamMode::Indicator;
  throw Error(ErrorCode::SchemaViolation, "unknown parameter mode '" + std::string{s} + "'");
}

std::string ParameterSpec::expected_text() const {
  if (const auto* v = std::get_if<double>(&expected)) {
    std::string out = text::format_number(*v);
    if (!unit.empty()) out += " " + unit;
    return out;
  }
  return std::get<std::string>(expected);
}

const SopStep& SopDoc::step(int index) const {
  if (index < 1 || index > step_count()) {
    throw Error(ErrorCode::StepOutOfRange,
                "step " + std::to_string(index) + " not in 1.." + std::to_string(step_count()),
                id);
  }
  return steps[static_cast<size_t>(index - 1)];
}

void to_json(json& j, const ParameterSpec& p) {
  j = json::object();
  j["name"] = p.name;
  j["mode"] = std::string{to_string(p.mode)};
  if (const auto* v = std::get_if<double>(&p.expected)) {
    j["expected"] = *v;
  } else {
    j["expected"] = std::get<std::string>(p.expected);
  }
  j["unit"] = p.unit;
  if (p.is_numeric()) j["tolerance"] = p.tolerance;
}

void from_json(const json& j, ParameterSpec& p) {
  p.name = j.at("name").get<std::string>();
  p.mode = param_mode_from_string(j.at("mode").get<std::string>());
  const auto& e = j.at("expected");
  if (e.is_number()) {
    p.expected = e.get<double>();
  } else {
    p.expected = e.get<std::string>();
  }
  p.unit = j.value("unit", std::string{});
  p.tolerance = j.value("tolerance", 0.0);
}

void to_json(json& j, const SopStep& s) {
  j = json{{"index", s.index},
           {"instruction", s.instruction},
           {"expected_equipment", s.expected_equipment},
           {"params", s.params}};
}

void to_json(json& j, const SopDoc& d) {
  j = json{{"id", d.id},
           {"title", d.title},
           {"version", d.version},
           {"equipment", d.equipment},
           {"steps", d.steps}};
}

namespace {

[[noreturn]] void schema(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::SchemaViolation, what, path);
}

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) schema(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) schema(path + "." + key, "missing required field");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_string()) schema(path + "." + key, "expected a string");
  return v.get<std::string>();
}

int require_int(const json& obj, const char* key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_number_integer()) schema(path + "." + key, "expected an integer");
  return v.get<int>();
}

std::vector<std::string> require_strings(const json& obj, const char* key,
                                         const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_array()) schema(path + "." + key, "expected an array of strings");
  std::vector<std::string> out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) {
      schema(path + "." + key + "[" + std::to_string(i) + "]", "expected a string");
    }
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

ParameterSpec parse_param(const json& j, const std::string& path) {
  ParameterSpec p;
  p.name = require_string(j, "name", path);
  try {
    p.mode = param_mode_from_string(require_string(j, "mode", path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaViolation && e.location().empty()) {
      schema(path + ".mode", e.what());
    }
    throw;
  }
  const auto& expected = require(j, "expected", path);
  if (p.mode == ParamMode::Numeric) {
    if (!expected.is_number()) schema(path + ".expected", "numeric parameter needs a number");
    p.expected = expected.get<double>();
    p.unit = require_string(j, "unit", path);
    if (text::trim(p.unit).empty()) schema(path + ".unit", "numeric parameter needs a unit");
    if (auto it = j.find("tolerance"); it != j.end()) {
      if (!it->is_number()) schema(path + ".tolerance", "expected a number");
      p.tolerance = it->get<double>();
      if (p.tolerance < 0.0) schema(path + ".tolerance", "tolerance must be >= 0");
    }
  } else {
    if (!expected.is_string()) schema(path + ".expected", "enum parameter needs a token");
    p.expected = expected.get<std::string>();
    if (auto it = j.find("unit"); it != j.end() && it->is_string()) p.unit = it->get<std::string>();
    if (auto it = j.find("tolerance"); it != j.end() && !(it->is_number() && it->get<double>() == 0.0)) {
      schema(path + ".tolerance", "tolerance only allowed on numeric parameters");
    }
  }
  return p;
}

SopDoc parse_doc(const json& j) {
  SopDoc d;
  d.id = require_string(j, "id", "$");
  d.title = require_string(j, "title", "$");
  d.version = require_int(j, "version", "$");
  d.equipment = require_strings(j, "equipment", "$");
  const auto& steps = require(j, "steps", "$");
  if (!steps.is_array()) schema("$.steps", "expected an array");
  std::set<int> seen;
  for (size_t i = 0; i < steps.size(); ++i) {
    const std::string path = "$.steps[" + std::to_string(i) + "]";
    SopStep s;
    s.index = require_int(steps[i], "index", path);
    if (!seen.insert(s.index).second) {
      schema(path + ".index", "duplicate step index " + std::to_string(s.index));
    }
    s.instruction = require_string(steps[i], "instruction", path);
    s.expected_equipment = require_strings(steps[i], "expected_equipment", path);
    const auto& params = require(steps[i], "params", path);
    if (!params.is_array()) schema(path + ".params", "expected an array");
    for (size_t k = 0; k < params.size(); ++k) {
      s.params.push_back(parse_param(params[k], path + ".params[" + std::to_string(k) + "]"));
    }
    d.steps.push_back(std::move(s));
  }
  std::stable_sort(d.steps.begin(), d.steps.end(),
                   [](const SopStep& a, const SopStep& b) { return a.index < b.index; });
  return d;
}

std::string line_col(std::string_view bytes, size_t byte_offset) {
  size_t line = 1;
  size_t col = 1;
  for (size_t i = 0; i < byte_offset && i < bytes.size(); ++i) {
    if (bytes[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ":" + std::to_string(col);
}

}  // namespace

void from_json(const json& j, SopDoc& d) { d = parse_doc(j); }

SopDoc parse_sop(std::string_view bytes) {
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedDocument, e.what(), line_col(bytes, e.byte > 0 ? e.byte - 1 : 0));
  }
  return parse_doc(j);
}

SopDoc load_sop_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MalformedDocument, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_sop(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.filename().string() + ": " + e.message(), e.location());
  }
}

std::string serialize_sop(const SopDoc& doc) { return json(doc).dump(2) + "\n"; }

ValidationReport validate_sop(const SopDoc& doc) {
  ValidationReport report;
  if (doc.steps.empty()) report.push_back({"steps", "steps non-empty"});

  std::set<std::string> folded_equipment;
  for (const auto& name : doc.equipment) {
    if (!folded_equipment.insert(text::casefold(text::trim(name))).second) {
      report.push_back({"equipment", "duplicate equipment name '" + name + "'"});
    }
  }

  std::set<int> seen;
  for (size_t i = 0; i < doc.steps.size(); ++i) {
    const auto& s = doc.steps[i];
    const std::string where = "step " + std::to_string(s.index);
    if (!seen.insert(s.index).second) {
      report.push_back({where, "duplicate step index"});
    } else if (s.index != static_cast<int>(i) + 1) {
      report.push_back({where, "step indices must be contiguous 1..N (expected " +
                                   std::to_string(i + 1) + ")"});
    }
    for (const auto& eq : s.expected_equipment) {
      if (!folded_equipment.contains(text::casefold(text::trim(eq)))) {
        report.push_back({where, "equipment '" + eq + "' not in document equipment list"});
      }
    }
    for (const auto& p : s.params) {
      const std::string pw = where + " param " + p.name;
      if (p.tolerance < 0.0) report.push_back({pw, "tolerance must be >= 0"});
      if (p.is_numeric()) {
        if (text::trim(p.unit).empty()) report.push_back({pw, "numeric parameter needs a unit"});
        if (!std::holds_alternative<double>(p.expected)) {
          report.push_back({pw, "numeric parameter needs a numeric expected value"});
        }
      } else {
        if (p.tolerance != 0.0) report.push_back({pw, "tolerance only allowed on numeric parameters"});
        if (!std::holds_alternative<std::string>(p.expected)) {
          report.push_back({pw, "enum parameter needs a token expected value"});
        }
      }
    }
  }
  return report;
}

SopAtlas::SopAtlas(const SopAtlas& other) {
  std::shared_lock lock(other.mutex_);
  entries_ = other.entries_;
  revision_ = other.revision_;
}

SopAtlas& SopAtlas::operator=(const SopAtlas& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_);
  std::shared_lock other_lock(other.mutex_);
  entries_ = other.entries_;
  revision_ = other.revision_;
  return *this;
}

void SopAtlas::put(SopDoc doc) {
  auto ptr = std::make_shared<const SopDoc>(std::move(doc));
  std::unique_lock lock(mutex_);
  entries_.insert_or_assign(ptr->id, std::move(ptr));
  ++revision_;
}

SopDoc SopAtlas::lookup(std::string_view id) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorCode::UnknownSop, std::string{id});
  return *it->second;
}

bool SopAtlas::contains(std::string_view id) const {
  std::shared_lock lock(mutex_);
  return entries_.find(id) != entries_.end();
}

std::vector<std::string> SopAtlas::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

std::vector<SopDoc> SopAtlas::docs() const {
  std::shared_lock lock(mutex_);
  std::vector<SopDoc> out;
  for (const auto& [_, doc] : entries_) out.push_back(*doc);
  return out;
}

std::uint64_t SopAtlas::revision() const {
  std::shared_lock lock(mutex_);
  return revision_;
}

bool SopAtlas::empty() const {
  std::shared_lock lock(mutex_);
  return entries_.empty();
}

SopDoc atlas_lookup(const SopAtlas& atlas, std::string_view id) { return atlas.lookup(id); }

SopAtlas load_atlas_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".sop") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  SopAtlas atlas;
  for (const auto& f : files) atlas.put(load_sop_file(f));
  return atlas;
}

}  // namespace apex
