#include "mvgen/config.hpp"

#include "mvgen/checkpoint.hpp"
#include "mvgen/io/binary.hpp"

#include <json.hpp>

#include <set>

namespace mvgen {

using nlohmann::json;

namespace {

// Reads known keys into their targets and rejects anything else.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config: [" + name_ + "] must be an object");
  }
  template <typename T>
  Section& get(const char* key, T& target) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        target = j_.at(key).get<T>();
      } catch (const json::exception&) {
        throw std::invalid_argument("config: " + name_ + "." + key + " has the wrong type");
      }
    }
    return *this;
  }
  Section& allow(const char* key) {
    seen_.insert(key);
    return *this;
  }
  void done() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw std::invalid_argument("config: unknown key " + name_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

const json& section(const json& root, const char* key) {
  static const json empty = json::object();
  return root.contains(key) ? root.at(key) : empty;
}

}  // namespace

NoiseSchedule RunConfig::make_noise_schedule() const {
  return make_schedule(schedule.steps, schedule.beta_start, schedule.beta_end);
}

RunConfig parse_run_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  RunConfig c;
  Section top(root, "config");
  top.get("seed", c.seed);
  for (const char* key : {"synthetic", "clustering", "model", "schedule", "training", "sampler"}) top.allow(key);
  top.done();

  auto& s = c.synthetic;
  Section(section(root, "synthetic"), "synthetic")
      .get("yaw_bins", s.yaw_bins)
      .get("samples_per_bin", s.samples_per_bin)
      .get("image_size", s.image_size)
      .get("patch_size", s.patch_size)
      .get("elevation_deg", s.elevation_deg)
      .get("box_size", s.box_size)
      .get("object_scale", s.object_scale)
      .get("translation_jitter", s.translation_jitter)
      .get("scale_jitter", s.scale_jitter)
      .get("color_jitter", s.color_jitter)
      .get("feature_noise", s.feature_noise)
      .done();

  auto& k = c.clustering;
  Section(section(root, "clustering"), "clustering")
      .get("k", k.k)
      .get("max_iters", k.max_iters)
      .get("tol", k.tol)
      .get("restarts", k.restarts)
      .get("pca_batch", k.pca_batch)
      .get("box_fraction", k.box_fraction)
      .done();

  auto& m = c.model;
  Section(section(root, "model"), "model")
      .get("image_size", m.image_size)
      .get("in_channels", m.in_channels)
      .get("base_channels", m.base_channels)
      .get("channel_multipliers", m.channel_multipliers)
      .get("res_blocks_per_level", m.res_blocks_per_level)
      .get("attention_resolutions", m.attention_resolutions)
      .get("groupnorm_groups", m.groupnorm_groups)
      .get("embed_dim", m.embed_dim)
      .get("pose_count", m.pose_count)
      .done();

  Section(section(root, "schedule"), "schedule")
      .get("steps", c.schedule.steps)
      .get("beta_start", c.schedule.beta_start)
      .get("beta_end", c.schedule.beta_end)
      .done();

  auto& t = c.training;
  Section(section(root, "training"), "training")
      .get("iterations", t.iterations)
      .get("batch_size", t.batch_size)
      .get("lr", t.adam.lr)
      .get("beta1", t.adam.beta1)
      .get("beta2", t.adam.beta2)
      .get("eps", t.adam.eps)
      .get("grad_clip", t.grad_clip)
      .get("checkpoint_every", t.checkpoint_every)
      .done();

  auto& p = c.sampler;
  Section(section(root, "sampler"), "sampler")
      .get("steps", p.steps)
      .get("gamma", p.gamma)
      .get("timesteps", p.timesteps)
      .get("share_initial_noise", p.share_initial_noise)
      .done();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(io::read_file(path)); }

std::string run_config_json(const RunConfig& c) {
  const auto& s = c.synthetic;
  const auto& k = c.clustering;
  const auto& t = c.training;
  const json j{
      {"seed", c.seed},
      {"synthetic",
       {{"yaw_bins", s.yaw_bins},
        {"samples_per_bin", s.samples_per_bin},
        {"image_size", s.image_size},
        {"patch_size", s.patch_size},
        {"elevation_deg", s.elevation_deg},
        {"box_size", s.box_size},
        {"object_scale", s.object_scale},
        {"translation_jitter", s.translation_jitter},
        {"scale_jitter", s.scale_jitter},
        {"color_jitter", s.color_jitter},
        {"feature_noise", s.feature_noise}}},
      {"clustering",
       {{"k", k.k},
        {"max_iters", k.max_iters},
        {"tol", k.tol},
        {"restarts", k.restarts},
        {"pca_batch", k.pca_batch},
        {"box_fraction", k.box_fraction}}},
      {"model", json::parse(unet_config_json(c.model))},
      {"schedule", {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
      {"training",
       {{"iterations", t.iterations},
        {"batch_size", t.batch_size},
        {"lr", t.adam.lr},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps},
        {"grad_clip", t.grad_clip},
        {"checkpoint_every", t.checkpoint_every}}},
      {"sampler",
       {{"steps", c.sampler.steps},
        {"gamma", c.sampler.gamma},
        {"timesteps", c.sampler.timesteps},
        {"share_initial_noise", c.sampler.share_initial_noise}}}};
  return j.dump(2) + "\n";
}

}  // namespace mvgen
