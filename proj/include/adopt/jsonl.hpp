#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace adopt {

/// Parse a JSON Lines file. Blank lines are skipped; a malformed line raises
/// ConfigError naming the 1-based line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Write one compact JSON document per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace adopt
