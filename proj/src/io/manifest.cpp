#include "mvgen/io/manifest.hpp"

#include "mvgen/io/binary.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>

namespace mvgen::io {

DatasetManifest build_manifest(const std::filesystem::path& root, int image_size, int patch_size) {
  const auto images = root / "images";
  if (!std::filesystem::is_directory(images)) throw std::runtime_error("no images/ directory under " + root.string());
  std::vector<std::string> stems;
  for (const auto& entry : std::filesystem::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") stems.push_back(entry.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  const bool has_features = std::filesystem::exists(root / "features.mrgf");
  DatasetManifest m;
  m.root = root;
  m.image_size = image_size;
  m.patch_size = patch_size;
  for (auto& s : stems) {
    m.entries.push_back({s, "images/" + s + ".png", has_features ? "features.mrgf" : ""});
  }
  return m;
}

std::string manifest_json(const DatasetManifest& manifest) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    nlohmann::json j{{"id", e.id}, {"image", e.image}};
    if (!e.features.empty()) j["features"] = e.features;
    entries.push_back(std::move(j));
  }
  nlohmann::json j{{"image_size", manifest.image_size}, {"patch_size", manifest.patch_size}, {"images", entries}};
  return j.dump(1) + "\n";
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  write_file(path, manifest_json(manifest));
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = path.parent_path();
  m.image_size = j.at("image_size").get<int>();
  m.patch_size = j.at("patch_size").get<int>();
  std::set<std::string> seen;
  for (const auto& e : j.at("images")) {
    ManifestEntry entry{e.at("id").get<std::string>(), e.at("image").get<std::string>(), e.value("features", "")};
    if (!seen.insert(entry.id).second) throw FormatError(path.string() + ": duplicate image_id " + entry.id);
    m.entries.push_back(std::move(entry));
  }
  return m;
}

}  // namespace mvgen::io
