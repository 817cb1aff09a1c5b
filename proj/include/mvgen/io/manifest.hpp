#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mvgen::io {

struct ManifestEntry {
  std::string id;
  std::string image;     // relative to the manifest root
  std::string features;  // feature file holding this id, empty when none
  bool operator==(const ManifestEntry&) const = default;
};

/// Ordered image list of a dataset directory; ids are file stems sorted
/// lexicographically.
struct DatasetManifest {
  std::filesystem::path root;
  int image_size = 0;
  int patch_size = 0;
  std::vector<ManifestEntry> entries;

  std::filesystem::path image_path(const ManifestEntry& e) const { return root / e.image; }
};

// Scans root/images/*.png. A root/features.mrgf, when present, is attached
// to every entry.
DatasetManifest build_manifest(const std::filesystem::path& root, int image_size, int patch_size);

std::string manifest_json(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
// The root becomes the manifest file's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace mvgen::io
