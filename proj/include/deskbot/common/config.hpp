#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

namespace deskbot {

using Json = nlohmann::json;

// Directory holding the shipped configuration files.
std::filesystem::path DataDir();

// Resolves a config reference: an existing path is returned as-is, otherwise
// `<data>/<category>/<name>` and `<data>/<category>/<name><ext>` are tried.
std::filesystem::path ResolveConfig(std::string_view name,
                                    std::string_view category,
                                    std::string_view ext = ".json");

Json LoadJsonFile(const std::filesystem::path& path);
std::string ReadTextFile(const std::filesystem::path& path);
void WriteTextFile(const std::filesystem::path& path, std::string_view text);

}  // namespace deskbot
