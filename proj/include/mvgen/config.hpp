#pragma once

#include "mvgen/io/synthetic.hpp"
#include "mvgen/pose_clustering.hpp"
#include "mvgen/sampling.hpp"
#include "mvgen/training.hpp"

#include <filesystem>

namespace mvgen {

struct ScheduleSettings {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  bool operator==(const ScheduleSettings&) const = default;
};

/// Settings of every pipeline stage. Stage seeds are derived from `seed`:
/// synthetic data uses it directly, the others go through derive_seed with
/// the stream ids below.
struct RunConfig {
  std::uint64_t seed = 0;
  io::SyntheticSpec synthetic;
  ClusteringConfig clustering;
  UNetConfig model;
  ScheduleSettings schedule;
  TrainSettings training;
  SamplerConfig sampler;

  static constexpr std::uint64_t kClusterStream = 1;
  static constexpr std::uint64_t kInitStream = 2;
  static constexpr std::uint64_t kTrainStream = 3;
  static constexpr std::uint64_t kSampleStream = 4;

  std::uint64_t cluster_seed() const { return derive_seed(seed, kClusterStream); }
  std::uint64_t init_seed() const { return derive_seed(seed, kInitStream); }
  std::uint64_t train_seed() const { return derive_seed(seed, kTrainStream); }
  std::uint64_t sample_seed() const { return derive_seed(seed, kSampleStream); }

  NoiseSchedule make_noise_schedule() const;
};

// Fields missing from the JSON keep their defaults; unknown keys are errors.
RunConfig parse_run_config(std::string_view json);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully resolved config, deterministic key order.
std::string run_config_json(const RunConfig& config);

}  // namespace mvgen
