#include "mvgen/cli/commands.hpp"

#include "mvgen/io/binary.hpp"
#include "mvgen/io/feature_file.hpp"
#include "mvgen/io/manifest.hpp"
#include "mvgen/io/png_image.hpp"
#include "mvgen/io/poses_file.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace mvgen::cli {

using nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const std::invalid_argument*>(&e) ||
      dynamic_cast<const std::out_of_range*>(&e) || dynamic_cast<const io::FormatError*>(&e)) {
    return 1;
  }
  return 2;
}

void echo_config(const fs::path& dir, const RunConfig& config) {
  io::write_file(dir / "config.json", run_config_json(config));
}

void cmd_synth(const RunConfig& config, const fs::path& out) {
  io::SyntheticSpec spec = config.synthetic;
  spec.seed = config.seed;
  spec.validate();
  const auto samples = io::generate_samples(spec);
  io::write_synthetic(spec, samples, out);
  echo_config(out, config);
  std::cerr << "synth: wrote " << samples.size() << " images to " << out.string() << "\n";
}

void cmd_extract_ingest(const fs::path& images, const fs::path& features, const fs::path& out) {
  if (!fs::is_directory(images)) throw ValidationError("not a directory: " + images.string());
  const auto grids = io::read_features(features);
  std::set<std::string> ids;
  for (const auto& g : grids) ids.insert(g.image_id);
  std::vector<fs::path> pngs;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_regular_file() && e.path().extension() == ".png") pngs.push_back(e.path());
  }
  std::sort(pngs.begin(), pngs.end());
  if (pngs.empty()) throw ValidationError("no PNG images in " + images.string());
  std::vector<std::string> missing;
  int size = 0;
  for (const auto& p : pngs) {
    if (!ids.count(p.stem().string())) missing.push_back(p.stem().string());
    const Tensor<float> img = io::read_image(p);
    if (img.dim(0) != img.dim(1)) throw ValidationError(p.string() + " is not square");
    if (size == 0) size = static_cast<int>(img.dim(0));
    if (img.dim(0) != size) throw ValidationError(p.string() + " differs in size from the other images");
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += " " + m;
    throw ValidationError("images without feature records:" + list);
  }
  fs::create_directories(out / "images");
  for (const auto& p : pngs) fs::copy_file(p, out / "images" / p.filename(), fs::copy_options::overwrite_existing);
  io::write_features(out / "features.mrgf", grids);
  io::write_manifest(out / "manifest.json", io::build_manifest(out, size, grids.front().patch_size));
  std::cerr << "extract-ingest: " << pngs.size() << " images\n";
}

double cluster_purity(const std::vector<int>& clusters, const std::vector<int>& truth) {
  if (clusters.size() != truth.size() || clusters.empty()) throw std::invalid_argument("cluster_purity: size mismatch");
  std::map<int, std::map<int, int>> counts;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++counts[clusters[i]][truth[i]];
  int majority = 0;
  for (const auto& [cluster, hist] : counts) {
    int best = 0;
    for (const auto& [label, n] : hist) best = std::max(best, n);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(clusters.size());
}

ClusterReport cmd_cluster(const RunConfig& config, const fs::path& features, const fs::path& out) {
  const auto grids = io::read_features(features);
  if (config.clustering.k < 1) throw ValidationError("--k must be positive");
  if (static_cast<std::size_t>(config.clustering.k) > grids.size()) {
    throw ValidationError("--k " + std::to_string(config.clustering.k) + " exceeds the number of images (" +
                          std::to_string(grids.size()) + ")");
  }
  ClusteringConfig cc = config.clustering;
  cc.seed = config.cluster_seed();
  const PoseModel model = cluster_poses(grids, cc);
  io::write_poses(out / "poses.json", model);
  echo_config(out, config);

  ClusterReport report;
  report.clustered = static_cast<int>(model.image_ids.size());
  report.rejected = static_cast<int>(model.rejected.size());
  report.inertia = model.inertia;
  const fs::path truth_path = features.parent_path() / "truth.json";
  if (fs::exists(truth_path)) {
    const io::SyntheticTruth truth = io::read_truth(truth_path);
    std::map<std::string, int> bins;
    for (std::size_t i = 0; i < truth.ids.size(); ++i) bins[truth.ids[i]] = truth.yaw_bins[i];
    std::vector<int> t;
    for (const auto& id : model.image_ids) t.push_back(bins.at(id));
    report.purity = cluster_purity(model.labels, t);
  }
  std::cerr << "cluster: " << report.clustered << " images, " << report.rejected << " rejected, inertia "
            << report.inertia;
  if (report.purity) std::cerr << ", purity " << *report.purity;
  std::cerr << "\n";
  return report;
}

namespace {

std::string format_step(std::int64_t step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "step_%06lld.mrgc", static_cast<long long>(step));
  return buf;
}

std::string loss_csv(const std::vector<double>& losses) {
  const auto smooth = smoothed(losses, 100);
  std::string out = "step,loss,smoothed\n";
  char buf[96];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i + 1, losses[i], smooth[i]);
    out += buf;
  }
  return out;
}

std::vector<double> read_losses(const fs::path& path, std::int64_t up_to) {
  std::vector<double> losses;
  if (!fs::exists(path)) return losses;
  std::istringstream in(io::read_file(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line) && static_cast<std::int64_t>(losses.size()) < up_to) {
    const auto comma = line.find(',');
    // Losses are float32 values; reading them back as floats restores them exactly.
    losses.push_back(std::stof(line.substr(comma + 1)));
  }
  return losses;
}

Checkpoint load_model(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("checkpoint not found: " + path.string());
  return load_checkpoint(path);
}

}  // namespace

Checkpoint cmd_train(const RunConfig& config_in, const TrainOptions& options) {
  const io::DatasetManifest manifest = io::read_manifest(options.data / "manifest.json");
  const PoseModel poses = io::read_poses(options.poses);
  RunConfig config = config_in;
  config.model.pose_count = poses.k;
  config.model.validate();

  const auto labels = poses.label_map();
  const std::set<std::string> rejected(poses.rejected.begin(), poses.rejected.end());
  const std::set<std::string> excluded(options.exclude.begin(), options.exclude.end());
  TrainingData data;
  std::vector<std::string> unlabeled;
  for (const auto& e : manifest.entries) {
    if (excluded.count(e.id) || rejected.count(e.id)) continue;
    auto it = labels.find(e.id);
    if (it == labels.end()) {
      unlabeled.push_back(e.id);
      continue;
    }
    data.ids.push_back(e.id);
    data.poses.push_back(it->second);
  }
  if (!unlabeled.empty()) {
    std::string list;
    for (std::size_t i = 0; i < unlabeled.size() && i < 20; ++i) list += " " + unlabeled[i];
    if (unlabeled.size() > 20) list += " ...";
    throw ValidationError("pose file does not label " + std::to_string(unlabeled.size()) + " images:" + list);
  }
  if (data.ids.empty()) throw ValidationError("no labeled training images");
  for (const auto& id : data.ids) {
    Tensor<float> img = io::read_image(options.data / "images" / (id + ".png"));
    if (img.dim(0) != config.model.image_size || img.dim(1) != config.model.image_size) {
      throw ValidationError("image " + id + " is " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(0)) +
                            ", model.image_size is " + std::to_string(config.model.image_size));
    }
    data.images.push_back(std::move(img));
  }

  fs::create_directories(options.out / "checkpoints");
  const fs::path final_path = options.out / "checkpoint.mrgc";
  const NoiseSchedule schedule = config.make_noise_schedule();
  Checkpoint ckpt;
  std::vector<double> losses;
  if (options.resume && fs::exists(final_path)) {
    ckpt = load_checkpoint(final_path);
    if (!(ckpt.config == config.model) || ckpt.schedule.steps != schedule.steps ||
        ckpt.schedule.beta_start != schedule.beta_start || ckpt.schedule.beta_end != schedule.beta_end) {
      throw ValidationError("cannot resume: " + final_path.string() + " was trained with a different model or schedule");
    }
    losses = read_losses(options.out / "loss.csv", ckpt.step);
    if (static_cast<std::int64_t>(losses.size()) != ckpt.step) {
      throw ValidationError("cannot resume: loss.csv has fewer rows than the checkpoint's step count");
    }
    std::cerr << "train: resuming at step " << ckpt.step << "\n";
  } else {
    ckpt = make_checkpoint(config.model, schedule, config.init_seed());
  }
  ckpt.run_json = run_config_json(config);
  echo_config(options.out, config);

  TrainSettings settings = config.training;
  settings.seed = config.train_seed();
  TrainCallbacks callbacks;
  callbacks.on_step = [&](std::int64_t step, double loss) {
    losses.push_back(loss);
    if (step % 100 == 0) {
      std::cerr << "train: step " << step << " loss " << smoothed(losses, 100).back() << "\n";
    }
  };
  callbacks.on_checkpoint = [&](const Checkpoint& c) {
    const std::string bytes = encode_checkpoint(c);
    io::write_file(options.out / "checkpoints" / format_step(c.step), bytes);
    io::write_file(final_path, bytes);
    io::write_file(options.out / "loss.csv", loss_csv(losses));
  };
  try {
    train(ckpt, data, settings, callbacks);
  } catch (const NumericError& e) {
    io::write_file(options.out / "loss.csv", loss_csv(losses));
    throw;
  }
  save_checkpoint(final_path, ckpt);
  io::write_file(options.out / "loss.csv", loss_csv(losses));
  return ckpt;
}

void cmd_sample(const RunConfig& config, const SampleOptions& options) {
  const Checkpoint ckpt = load_model(options.checkpoint);
  if (options.pose < 0 || options.pose >= ckpt.config.pose_count) {
    throw ValidationError("--pose " + std::to_string(options.pose) + " outside [0, " +
                          std::to_string(ckpt.config.pose_count) + ")");
  }
  const auto timesteps = config.sampler.subsequence(ckpt.schedule.steps);
  const auto eps = unet_denoiser(ckpt.config, ckpt.params);
  const Tensor<float> noise = reference_noise(ckpt.config, config.sample_seed());
  const auto result = ddim_sample(eps, ckpt.schedule, noise, options.pose, timesteps);
  io::write_image(options.out / "sample.png", result.image);
  echo_config(options.out, config);
}

int classify_image(const Tensor<float>& image, const PoseModel& poses) {
  const FeatureGrid grid = io::features_from_image(image, poses.patch_size, "image");
  if (grid.channels != poses.channels || grid.height != poses.grid_height || grid.width != poses.grid_width) {
    throw ValidationError("image features do not match the pose model's grid");
  }
  return classify_pose(grid, poses);
}

namespace {

int resolve_pose(const std::optional<int>& pose, const Tensor<float>& image, const fs::path& poses_path, int count) {
  int p;
  if (pose) {
    p = *pose;
  } else {
    if (poses_path.empty()) throw ValidationError("give a pose or a poses file to infer it from");
    p = classify_image(image, io::read_poses(poses_path));
  }
  if (p < 0 || p >= count) throw ValidationError("pose " + std::to_string(p) + " outside [0, " + std::to_string(count) + ")");
  return p;
}

}  // namespace

double cmd_invert(const RunConfig& config, const InvertOptions& options) {
  const Checkpoint ckpt = load_model(options.checkpoint);
  const Tensor<float> image = io::read_image(options.image);
  if (image.shape() != Shape{ckpt.config.image_size, ckpt.config.image_size, ckpt.config.in_channels}) {
    throw ValidationError("image " + shape_string(image.shape()) + " does not match the model");
  }
  const int pose = resolve_pose(options.pose, image, options.poses, ckpt.config.pose_count);
  const auto timesteps = config.sampler.subsequence(ckpt.schedule.steps);
  const auto eps = unet_denoiser(ckpt.config, ckpt.params);
  const auto inv = ddim_invert(eps, ckpt.schedule, image, pose, timesteps);
  const auto rec = ddim_sample(eps, ckpt.schedule, inv.noise, pose, timesteps);
  const double mae = (rec.image.array() - image.array()).abs().template cast<double>().mean();

  io::ByteWriter w;
  w.f32s({inv.noise.data(), static_cast<std::size_t>(inv.noise.size())});
  io::write_file(options.out / "noise.f32", w.buffer());
  io::write_image(options.out / "reconstruction.png", rec.image);
  const json meta{{"pose", pose},
                  {"steps", timesteps.size()},
                  {"noise_shape", inv.noise.shape()},
                  {"reconstruction_mae", mae}};
  io::write_file(options.out / "inversion.json", meta.dump(1) + "\n");
  echo_config(options.out, config);
  std::cerr << "invert: pose " << pose << ", reconstruction MAE " << mae << "\n";
  return mae;
}

NovelViews cmd_novel_views(const RunConfig& config, const NovelViewOptions& options) {
  const Checkpoint ckpt = load_model(options.checkpoint);
  ViewRequest request;
  request.seed = config.sample_seed();
  if (options.reference_image) {
    Tensor<float> image = io::read_image(*options.reference_image);
    if (image.shape() != Shape{ckpt.config.image_size, ckpt.config.image_size, ckpt.config.in_channels}) {
      throw ValidationError("reference image " + shape_string(image.shape()) + " does not match the model");
    }
    request.reference_pose = resolve_pose(options.reference_pose, image, options.poses, ckpt.config.pose_count);
    request.reference_image = std::move(image);
  } else {
    if (!options.reference_pose) throw ValidationError("a noise reference needs --ref-pose");
    request.reference_pose = *options.reference_pose;
  }
  request.targets = options.targets;
  if (request.targets.empty()) {
    for (int p = 0; p < ckpt.config.pose_count; ++p) request.targets.push_back(p);
  }
  for (int p : request.targets) {
    if (p < 0 || p >= ckpt.config.pose_count) {
      throw ValidationError("target pose " + std::to_string(p) + " outside [0, " +
                            std::to_string(ckpt.config.pose_count) + ")");
    }
  }
  const NovelViews views = generate_novel_views(ckpt.config, ckpt.params, ckpt.schedule, request, config.sampler);

  io::write_image(options.out / "reference.png", views.reference);
  json entries = json::array();
  for (std::size_t i = 0; i < request.targets.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "view_p%02d.png", request.targets[i]);
    io::write_image(options.out / name, views.views[i]);
    entries.push_back({{"file", name}, {"pose", request.targets[i]}});
  }
  const json meta{{"gamma", config.sampler.gamma},
                  {"effective_gamma", std::clamp(config.sampler.gamma, 0.0, 4.0)},
                  {"steps", config.sampler.subsequence(ckpt.schedule.steps).size()},
                  {"share_initial_noise", config.sampler.share_initial_noise},
                  {"seed", request.seed},
                  {"reference",
                   {{"kind", options.reference_image ? "image" : "noise"},
                    {"pose", request.reference_pose},
                    {"file", "reference.png"}}},
                  {"views", entries}};
  io::write_file(options.out / "metadata.json", meta.dump(1) + "\n");
  echo_config(options.out, config);
  return views;
}

double histogram_divergence(const std::vector<Tensor<float>>& images) {
  constexpr int kBins = 4;
  const io::Rgb& bg = io::background_color();
  std::vector<std::vector<double>> hists;
  for (const auto& img : images) {
    std::vector<double> h(kBins * kBins * kBins, 0.0);
    double total = 0;
    for (Index i = 0; i + 2 < img.size(); i += 3) {
      double d = 0;
      for (int c = 0; c < 3; ++c) d += (img[i + c] - bg[static_cast<std::size_t>(c)]) * (img[i + c] - bg[static_cast<std::size_t>(c)]);
      if (d < 0.3 * 0.3) continue;  // background
      int bin = 0;
      for (int c = 0; c < 3; ++c) {
        const int b = std::clamp(static_cast<int>((img[i + c] + 1.0f) / 2.0f * kBins), 0, kBins - 1);
        bin = bin * kBins + b;
      }
      h[static_cast<std::size_t>(bin)] += 1;
      total += 1;
    }
    if (total > 0) {
      for (double& v : h) v /= total;
    }
    hists.push_back(std::move(h));
  }
  auto kl = [](const std::vector<double>& p, const std::vector<double>& m) {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] > 0) s += p[i] * std::log(p[i] / m[i]);
    }
    return s;
  };
  double sum = 0;
  int pairs = 0;
  for (std::size_t a = 0; a < hists.size(); ++a) {
    for (std::size_t b = a + 1; b < hists.size(); ++b) {
      std::vector<double> m(hists[a].size());
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (hists[a][i] + hists[b][i]);
      sum += 0.5 * kl(hists[a], m) + 0.5 * kl(hists[b], m);
      ++pairs;
    }
  }
  return pairs ? sum / pairs : 0.0;
}

EvalReport cmd_eval(const fs::path& views_dir, const fs::path& poses_path, const fs::path& out) {
  const fs::path meta_path = views_dir / "metadata.json";
  if (!fs::exists(meta_path)) throw ValidationError("no metadata.json in " + views_dir.string());
  const json meta = json::parse(io::read_file(meta_path));
  if (!meta.contains("views") || meta.at("views").empty()) throw ValidationError("no views listed in " + meta_path.string());
  const PoseModel poses = io::read_poses(poses_path);
  EvalReport report;
  std::vector<Tensor<float>> images;
  json rows = json::array();
  for (const auto& v : meta.at("views")) {
    const auto file = v.at("file").get<std::string>();
    const int requested = v.at("pose").get<int>();
    Tensor<float> img = io::read_image(views_dir / file);
    int got = -1;  // no segmentable object
    try {
      got = classify_image(img, poses);
    } catch (const RejectedImage&) {
    }
    report.requested.push_back(requested);
    report.classified.push_back(got);
    report.pose_agreement += got == requested;
    rows.push_back({{"file", file}, {"requested", requested}, {"classified", got}});
    images.push_back(std::move(img));
  }
  report.views = static_cast<int>(images.size());
  report.histogram_divergence = histogram_divergence(images);
  const json j{{"views", rows},
               {"pose_agreement", report.pose_agreement},
               {"view_count", report.views},
               {"histogram_divergence", report.histogram_divergence}};
  io::write_file(out / "report.json", j.dump(1) + "\n");
  std::cerr << "eval: pose agreement " << report.pose_agreement << "/" << report.views << ", histogram divergence "
            << report.histogram_divergence << "\n";
  return report;
}

}  // namespace mvgen::cli
