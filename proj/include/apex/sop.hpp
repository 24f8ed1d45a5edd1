#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace apex {

enum class ParamMode { Numeric, Enum, Indicator };

std::string_view to_string(ParamMode mode);
ParamMode param_mode_from_string(std::string_view s);

/// A machine-checkable setpoint. Numeric specs carry a value, a unit and an
/// absolute tolerance in that unit; enum and indicator specs carry a token.
struct ParameterSpec {
  std::string name;
  ParamMode mode = ParamMode::Numeric;
  std::variant<double, std::string> expected = 0.0;
  std::string unit;
  double tolerance = 0.0;

  [[nodiscard]] bool is_numeric() const { return mode == ParamMode::Numeric; }
  [[nodiscard]] std::string expected_text() const;

  bool operator==(const ParameterSpec&) const = default;
};

struct SopStep {
  int index = 0;
  std::string instruction;
  std::vector<ParameterSpec> params;
  std::vector<std::string> expected_equipment;

  bool operator==(const SopStep&) const = default;
};

struct SopDoc {
  std::string id;
  std::string title;
  int version = 1;
  std::vector<std::string> equipment;
  std::vector<SopStep> steps;

  [[nodiscard]] int step_count() const { return static_cast<int>(steps.size()); }
  /// Step by 1-based index; throws StepOutOfRange.
  [[nodiscard]] const SopStep& step(int index) const;

  bool operator==(const SopDoc&) const = default;
};

void to_json(nlohmann::json& j, const ParameterSpec& p);
void from_json(const nlohmann::json& j, ParameterSpec& p);
void to_json(nlohmann::json& j, const SopStep& s);
void to_json(nlohmann::json& j, const SopDoc& d);
void from_json(const nlohmann::json& j, SopDoc& d);

/// Parses one SOP document. Throws MalformedDocument (with line:column) on
/// syntax errors and SchemaViolation (with a field path) on missing or
/// ill-typed fields and duplicate step indices.
SopDoc parse_sop(std::string_view bytes);
SopDoc load_sop_file(const std::filesystem::path& path);
std::string serialize_sop(const SopDoc& doc);

struct Violation {
  std::string where;
  std::string what;

  bool operator==(const Violation&) const = default;
};

using ValidationReport = std::vector<Violation>;

ValidationReport validate_sop(const SopDoc& doc);

/// Versioned SOP store. Reads may run concurrently; writers are serialized.
class SopAtlas {
 public:
  SopAtlas() = default;
  SopAtlas(const SopAtlas& other);
  SopAtlas& operator=(const SopAtlas& other);

  /// Inserts or replaces; bumps the revision by exactly one.
  void put(SopDoc doc);

  /// Throws UnknownSop.
  [[nodiscard]] SopDoc lookup(std::string_view id) const;
  [[nodiscard]] bool contains(std::string_view id) const;
  [[nodiscard]] std::vector<std::string> ids() const;
  [[nodiscard]] std::vector<SopDoc> docs() const;
  [[nodiscard]] std::uint64_t revision() const;
  [[nodiscard]] bool empty() const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const SopDoc>, std::less<>> entries_;
  std::uint64_t revision_ = 0;
};

SopDoc atlas_lookup(const SopAtlas& atlas, std::string_view id);

/// Loads every `*.sop` file in `dir` (sorted by file name).
SopAtlas load_atlas_dir(const std::filesystem::path& dir);

}  // namespace apex
