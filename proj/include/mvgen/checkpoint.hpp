#pragma once

#include "mvgen/adam.hpp"
#include "mvgen/schedule.hpp"
#include "mvgen/unet.hpp"

#include <filesystem>
#include <optional>

namespace mvgen {

/// Everything needed to run or resume a denoiser.
struct Checkpoint {
  UNetConfig config;
  NoiseSchedule schedule;
  std::int64_t step = 0;
  ParameterSet<float> params;
  std::optional<AdamState<float>> optimizer;
  std::string run_json = "{}";  // opaque run settings, echoed for reproducibility
};

Checkpoint make_checkpoint(const UNetConfig& config, const NoiseSchedule& schedule, std::uint64_t seed);

// "MRGC" + u32 version + u32 header length + JSON header + little-endian
// float32 parameters in directory order (then Adam moments, if present).
std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws io::FormatError on a bad magic/version/length, or when the
// parameter directory disagrees with the config.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// JSON (de)serialization of the architecture, shared with run configs.
std::string unet_config_json(const UNetConfig& config);
UNetConfig parse_unet_config(std::string_view json);

}  // namespace mvgen
