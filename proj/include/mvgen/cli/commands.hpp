#pragma once

#include "mvgen/config.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvgen::cli {

namespace fs = std::filesystem;

/// Bad flags or inputs; the CLI exits with status 1 (other failures exit 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Maps an exception to the CLI exit status.
int exit_code_for(const std::exception& e);

// Every command writes its fully resolved config to out/config.json.
void echo_config(const fs::path& dir, const RunConfig& config);

// Dataset directory: manifest.json, images/, features.mrgf, truth.json.
void cmd_synth(const RunConfig& config, const fs::path& out);

// Copies a directory of PNGs and an extractor feature file into the dataset
// layout, checking that every image has a feature record.
void cmd_extract_ingest(const fs::path& images, const fs::path& features, const fs::path& out);

struct ClusterReport {
  int clustered = 0;
  int rejected = 0;
  double inertia = 0;
  std::optional<double> purity;  // when truth.json sits next to the features
};

ClusterReport cmd_cluster(const RunConfig& config, const fs::path& features, const fs::path& out);

// Fraction of items whose cluster's majority truth label equals their own.
double cluster_purity(const std::vector<int>& clusters, const std::vector<int>& truth);

struct TrainOptions {
  fs::path data;   // dataset directory (manifest.json)
  fs::path poses;  // poses.json
  fs::path out;
  bool resume = false;
  std::vector<std::string> exclude;  // ids withheld from training
};

// Writes out/checkpoint.mrgc, out/checkpoints/step_NNNNNN.mrgc and
// out/loss.csv (step,loss,smoothed).
Checkpoint cmd_train(const RunConfig& config, const TrainOptions& options);

struct SampleOptions {
  fs::path checkpoint;
  int pose = 0;
  fs::path out;  // PNG
};

void cmd_sample(const RunConfig& config, const SampleOptions& options);

struct InvertOptions {
  fs::path checkpoint;
  fs::path image;
  std::optional<int> pose;  // inferred from poses when absent
  fs::path poses;
  fs::path out;  // directory: noise.f32, reconstruction.png, inversion.json
};

// Returns the reconstruction MAE.
double cmd_invert(const RunConfig& config, const InvertOptions& options);

struct NovelViewOptions {
  fs::path checkpoint;
  std::optional<fs::path> reference_image;
  std::optional<int> reference_pose;  // required for a noise reference
  fs::path poses;                     // needed to infer the pose of an image reference
  std::vector<int> targets;           // empty means all poses
  fs::path out;
};

// Writes reference.png, view_pNN.png per target and metadata.json.
NovelViews cmd_novel_views(const RunConfig& config, const NovelViewOptions& options);

struct EvalReport {
  int views = 0;
  int pose_agreement = 0;
  double histogram_divergence = 0;
  std::vector<int> requested;
  std::vector<int> classified;  // -1 when the view has no segmentable object
};

// Reads metadata.json and the view PNGs of a novel-views directory.
EvalReport cmd_eval(const fs::path& views_dir, const fs::path& poses, const fs::path& out);

// Mean pairwise Jensen-Shannon divergence between foreground color histograms.
double histogram_divergence(const std::vector<Tensor<float>>& images);

// Pose label of an image of the synthetic object, via palette features.
int classify_image(const Tensor<float>& image, const PoseModel& poses);

}  // namespace mvgen::cli
