#pragma once

#include "mvgen/tensor.hpp"

#include <string>

namespace mvgen {

/// Dense per-patch features of one image; tokens are stored row-major in
/// (row, col) order, one token per matrix row.
struct FeatureGrid {
  std::string image_id;
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  int patch_size = 1;
  RowMatrix<float> tokens;  // (height * width) x channels

  FeatureGrid() = default;
  FeatureGrid(std::string id, Index h, Index w, Index c, int patch)
      : image_id(std::move(id)), height(h), width(w), channels(c), patch_size(patch),
        tokens(RowMatrix<float>::Zero(h * w, c)) {}

  Index token_index(Index row, Index col) const { return row * width + col; }
  auto token(Index row, Index col) { return tokens.row(token_index(row, col)); }
  auto token(Index row, Index col) const { return tokens.row(token_index(row, col)); }
};

}  // namespace mvgen
