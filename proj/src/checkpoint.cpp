#include "mvgen/checkpoint.hpp"

#include "mvgen/io/binary.hpp"

#include <json.hpp>

namespace mvgen {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "MRGC";
constexpr std::uint32_t kVersion = 1;

json config_to_json(const UNetConfig& c) {
  return {{"image_size", c.image_size},
          {"in_channels", c.in_channels},
          {"base_channels", c.base_channels},
          {"channel_multipliers", c.channel_multipliers},
          {"res_blocks_per_level", c.res_blocks_per_level},
          {"attention_resolutions", c.attention_resolutions},
          {"groupnorm_groups", c.groupnorm_groups},
          {"embed_dim", c.embed_dim},
          {"pose_count", c.pose_count}};
}

UNetConfig config_from_json(const json& j) {
  UNetConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.channel_multipliers = j.value("channel_multipliers", c.channel_multipliers);
  c.res_blocks_per_level = j.value("res_blocks_per_level", c.res_blocks_per_level);
  c.attention_resolutions = j.value("attention_resolutions", c.attention_resolutions);
  c.groupnorm_groups = j.value("groupnorm_groups", c.groupnorm_groups);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.pose_count = j.value("pose_count", c.pose_count);
  return c;
}

void write_tensors(io::ByteWriter& w, const std::vector<Tensor<float>>& ts) {
  for (const auto& t : ts) w.f32s({t.data(), static_cast<std::size_t>(t.size())});
}

}  // namespace

std::string unet_config_json(const UNetConfig& config) { return config_to_json(config).dump(); }

UNetConfig parse_unet_config(std::string_view text) { return config_from_json(json::parse(text)); }

Checkpoint make_checkpoint(const UNetConfig& config, const NoiseSchedule& schedule, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.schedule = schedule;
  ckpt.params = init_unet_parameters(config, seed);
  return ckpt;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : ckpt.params.entries()) {
    dir.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.value.size()) * 4;
  }
  json header{{"config", config_to_json(ckpt.config)},
              {"schedule",
               {{"steps", ckpt.schedule.steps},
                {"beta_start", ckpt.schedule.beta_start},
                {"beta_end", ckpt.schedule.beta_end}}},
              {"step", ckpt.step},
              {"parameters", dir},
              {"run", json::parse(ckpt.run_json)}};
  if (ckpt.optimizer) {
    const auto& s = ckpt.optimizer->settings;
    header["optimizer_state"] = {{"step", ckpt.optimizer->step},
                                 {"lr", s.lr},
                                 {"beta1", s.beta1},
                                 {"beta2", s.beta2},
                                 {"eps", s.eps},
                                 {"offset", offset}};
  }
  const std::string text = header.dump();
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (const auto& e : ckpt.params.entries()) w.f32s({e.value.data(), static_cast<std::size_t>(e.value.size())});
  if (ckpt.optimizer) {
    write_tensors(w, ckpt.optimizer->first_moment);
    write_tensors(w, ckpt.optimizer->second_moment);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) throw io::FormatError("bad magic");
  io::ByteReader r(bytes.substr(kMagic.size()));
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw io::FormatError("unsupported version " + std::to_string(version));
  const std::uint32_t len = r.u32();
  json header;
  try {
    header = json::parse(r.bytes(len));
  } catch (const json::exception& e) {
    throw io::FormatError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    const json& s = header.at("schedule");
    ckpt.schedule = make_schedule(s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                                  s.at("beta_end").get<double>());
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.run_json = header.value("run", json::object()).dump();
  } catch (const json::exception& e) {
    throw io::FormatError(std::string("checkpoint header: ") + e.what());
  }
  const auto specs = unet_parameter_specs(ckpt.config);
  const json& dir = header.at("parameters");
  if (dir.size() != specs.size()) {
    throw io::FormatError("checkpoint has " + std::to_string(dir.size()) + " parameters, config implies " +
                          std::to_string(specs.size()));
  }
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::string name = dir[i].at("name").get<std::string>();
    const Shape shape = dir[i].at("shape").get<Shape>();
    if (name != specs[i].name || shape != specs[i].shape) {
      throw io::FormatError("checkpoint parameter " + std::to_string(i) + " is " + name + " " + shape_string(shape) +
                            ", config implies " + specs[i].name + " " + shape_string(specs[i].shape));
    }
    if (dir[i].at("offset").get<std::uint64_t>() != offset) throw io::FormatError("checkpoint offset mismatch at " + name);
    Tensor<float> value(shape);
    r.f32s({value.data(), static_cast<std::size_t>(value.size())});
    offset += static_cast<std::uint64_t>(value.size()) * 4;
    ckpt.params.add(name, std::move(value));
  }
  if (header.contains("optimizer_state")) {
    const json& o = header.at("optimizer_state");
    AdamState<float> st;
    st.step = o.at("step").get<std::int64_t>();
    st.settings = {o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                   o.at("eps").get<double>()};
    for (auto* moments : {&st.first_moment, &st.second_moment}) {
      for (const auto& e : ckpt.params.entries()) {
        Tensor<float> m(e.value.shape());
        r.f32s({m.data(), static_cast<std::size_t>(m.size())});
        moments->push_back(std::move(m));
      }
    }
    ckpt.optimizer = std::move(st);
  }
  if (r.remaining() != 0) throw io::FormatError("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const io::FormatError& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mvgen
