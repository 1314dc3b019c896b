#include "deskbot/common/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "deskbot/common/error.hpp"

namespace deskbot {

namespace fs = std::filesystem;

fs::path DataDir() {
  if (const char* env = std::getenv("DESKBOT_DATA")) return fs::path(env);
  return fs::path(DESKBOT_DATA_DIR);
}

fs::path ResolveConfig(std::string_view name, std::string_view category,
                       std::string_view ext) {
  fs::path direct{std::string(name)};
  if (fs::exists(direct)) return direct;
  fs::path base = DataDir() / std::string(category);
  fs::path candidate = base / std::string(name);
  if (fs::exists(candidate)) return candidate;
  candidate = base / (std::string(name) + std::string(ext));
  if (fs::exists(candidate)) return candidate;
  throw Error(ErrorCode::kConfig,
              "cannot resolve " + std::string(category) + " config '" +
                  std::string(name) + "'");
}

std::string ReadTextFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteTextFile(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

Json LoadJsonFile(const fs::path& path) {
  try {
    return Json::parse(ReadTextFile(path));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

}  // namespace deskbot
