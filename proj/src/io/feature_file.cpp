#include "mvgen/io/feature_file.hpp"

#include <limits>
#include <set>

namespace mvgen::io {

namespace {
constexpr std::string_view kMagic = "MRGF";
}

std::string encode_features(const std::vector<FeatureGrid>& grids) {
  if (grids.empty()) throw std::invalid_argument("encode_features: no grids");
  const FeatureGrid& first = grids.front();
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(grids.size()));
  w.u32(static_cast<std::uint32_t>(first.height));
  w.u32(static_cast<std::uint32_t>(first.width));
  w.u32(static_cast<std::uint32_t>(first.channels));
  w.u32(static_cast<std::uint32_t>(first.patch_size));
  std::set<std::string> seen;
  for (const auto& g : grids) {
    if (g.height != first.height || g.width != first.width || g.channels != first.channels ||
        g.patch_size != first.patch_size) {
      throw std::invalid_argument("encode_features: grid " + g.image_id + " has different dimensions");
    }
    if (g.tokens.rows() != g.height * g.width || g.tokens.cols() != g.channels) {
      throw std::invalid_argument("encode_features: grid " + g.image_id + " token matrix has the wrong size");
    }
    if (g.image_id.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("encode_features: image_id too long");
    }
    if (!seen.insert(g.image_id).second) throw std::invalid_argument("duplicate image_id " + g.image_id);
    w.u16(static_cast<std::uint16_t>(g.image_id.size()));
    w.bytes(g.image_id);
    w.f32s({g.tokens.data(), static_cast<std::size_t>(g.tokens.size())});
  }
  return w.take();
}

std::vector<FeatureGrid> decode_features(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) throw FormatError("bad magic");
  ByteReader r(bytes.substr(kMagic.size()));
  const std::uint32_t version = r.u32();
  if (version != kFeatureFileVersion) throw FormatError("unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32(), patch = r.u32();
  if (h == 0 || w == 0 || c == 0 || patch == 0) throw FormatError("zero grid dimension in header");
  const std::uint64_t values = std::uint64_t{h} * w * c;
  std::vector<FeatureGrid> grids;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string id(r.bytes(len));
    if (!seen.insert(id).second) throw FormatError("duplicate image_id " + id);
    if (r.remaining() < values * 4) throw FormatError("truncated payload");
    FeatureGrid g(std::move(id), h, w, c, static_cast<int>(patch));
    r.f32s({g.tokens.data(), static_cast<std::size_t>(g.tokens.size())});
    grids.push_back(std::move(g));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after " + std::to_string(count) + " records");
  return grids;
}

void write_features(const std::filesystem::path& path, const std::vector<FeatureGrid>& grids) {
  write_file(path, encode_features(grids));
}

std::vector<FeatureGrid> read_features(const std::filesystem::path& path) {
  return decode_features(read_file(path));
}

}  // namespace mvgen::io
