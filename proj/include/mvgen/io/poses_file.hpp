#pragma once

#include "mvgen/pose_clustering.hpp"

#include <filesystem>

namespace mvgen::io {

// JSON with k, labels {id: label}, centroids [k][3][h][w], pca1, pca2,
// rejected, plus what is needed to classify new grids. Doubles are written
// with round-trip precision, so read(write(m)) reproduces m exactly.
std::string poses_json(const PoseModel& model);
PoseModel parse_poses(std::string_view json);

void write_poses(const std::filesystem::path& path, const PoseModel& model);
PoseModel read_poses(const std::filesystem::path& path);

}  // namespace mvgen::io
