#pragma once

#include "mvgen/unet.hpp"

namespace testing {

// Smallest architecture that still has two levels, attention and skips.
inline mvgen::UNetConfig tiny_unet() {
  mvgen::UNetConfig c;
  c.image_size = 8;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.res_blocks_per_level = 1;
  c.attention_resolutions = {4};
  c.groupnorm_groups = 2;
  c.embed_dim = 8;
  c.pose_count = 3;
  return c;
}

}  // namespace testing
