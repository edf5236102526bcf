#include "run_manifest.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <vector>

#include "spot/errors.hpp"
#include "spot/imagery.hpp"

namespace spot::cli {

namespace fs = std::filesystem;

std::string digest_path(const fs::path& path) {
  if (fs::is_regular_file(path)) return hex64(fnv1a(read_file_bytes(path)));
  if (!fs::is_directory(path)) throw DataError("no such file or directory: " + path.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, path).generic_string();
    h = fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(rel.data()), rel.size()), h);
    h = fnv1a(read_file_bytes(f), h);
  }
  return hex64(h);
}

RunManifest::RunManifest(std::string command, fs::path path) : path_(std::move(path)) {
  doc_["command"] = std::move(command);
  doc_["status"] = "running";
  doc_["config"] = nlohmann::ordered_json::object();
  doc_["seeds"] = nlohmann::ordered_json::object();
  doc_["inputs"] = nlohmann::ordered_json::object();
  doc_["outputs"] = nlohmann::ordered_json::object();
  doc_["timings"] = nlohmann::ordered_json::object();
}

void RunManifest::add_input(const fs::path& path) { doc_["inputs"][path.string()] = digest_path(path); }

void RunManifest::add_output(const fs::path& path) { doc_["outputs"][path.string()] = digest_path(path); }

void RunManifest::begin() {
  start_ = std::chrono::steady_clock::now();
  doc_["timings"]["started_unix"] = static_cast<long long>(std::time(nullptr));
  write();
}

void RunManifest::finish() {
  doc_["status"] = "ok";
  doc_["timings"]["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  write();
}

void RunManifest::fail(const std::string& kind, const std::string& message) {
  doc_["status"] = "error";
  doc_["error"] = {{"kind", kind}, {"message", message}};
  doc_["timings"]["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  write();
}

void RunManifest::write() const {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path_.string());
  out << doc_.dump(2) << '\n';
}

}  // namespace spot::cli
