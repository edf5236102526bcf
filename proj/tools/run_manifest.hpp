#pragma once

#include <chrono>
#include <filesystem>
#include <string>

#include "json.hpp"

namespace spot::cli {

/// Record of one CLI invocation, written as JSON next to the outputs. It is
/// written once when the run starts (status "running") and rewritten when
/// it ends, so an interrupted run leaves evidence behind.
class RunManifest {
 public:
  RunManifest(std::string command, std::filesystem::path path);

  nlohmann::ordered_json& config() { return doc_["config"]; }
  nlohmann::ordered_json& seeds() { return doc_["seeds"]; }

  /// Digest of a file (or of every regular file below a directory, in path order).
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);

  void begin();
  void finish();
  void fail(const std::string& kind, const std::string& message);

  const std::filesystem::path& path() const { return path_; }

 private:
  void write() const;

  std::filesystem::path path_;
  nlohmann::ordered_json doc_;
  std::chrono::steady_clock::time_point start_;
};

std::string digest_path(const std::filesystem::path& path);

}  // namespace spot::cli
