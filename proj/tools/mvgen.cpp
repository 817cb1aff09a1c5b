#include "mvgen/cli/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace mvgen;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  fs::path config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<std::int64_t> iterations;
  std::optional<int> batch_size;
  std::optional<double> gamma;
  std::optional<int> steps;
  bool independent_noise = false;

  RunConfig resolve() const {
    RunConfig c = config_file.empty() ? RunConfig{} : load_run_config(config_file);
    if (seed) c.seed = *seed;
    if (k) c.clustering.k = *k;
    if (iterations) c.training.iterations = *iterations;
    if (batch_size) c.training.batch_size = *batch_size;
    if (gamma) c.sampler.gamma = *gamma;
    if (steps) {
      c.sampler.steps = *steps;
      c.sampler.timesteps.clear();
    }
    if (independent_noise) c.sampler.share_initial_noise = false;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised multi-view generation: pose clustering, pose-conditioned diffusion, novel views"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config_file, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Root seed for every stage");

  fs::path out;
  auto* synth = app.add_subcommand("synth", "Render the synthetic cuboid dataset");
  synth->add_option("--out", out, "Dataset directory")->required();
  fs::path spec;
  synth->add_option("--spec", spec, "JSON config whose [synthetic] section is the dataset spec")->check(CLI::ExistingFile);

  fs::path images, features;
  auto* ingest = app.add_subcommand("extract-ingest", "Build a dataset from PNGs and an extractor feature file");
  ingest->add_option("--images", images, "Directory of PNG images")->required();
  ingest->add_option("--features", features, "MRGF feature file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", out, "Dataset directory")->required();

  auto* cluster = app.add_subcommand("cluster", "Discover poses from feature grids");
  cluster->add_option("--features", features, "MRGF feature file")->required()->check(CLI::ExistingFile);
  cluster->add_option("--k", o.k, "Number of poses");
  cluster->add_option("--out", out, "Output directory (poses.json)")->required();

  cli::TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train the pose-conditioned denoiser");
  train->add_option("--data", train_opts.data, "Dataset directory")->required();
  train->add_option("--poses", train_opts.poses, "poses.json")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_opts.out, "Run directory")->required();
  train->add_option("--iterations", o.iterations, "Total optimizer steps");
  train->add_option("--batch-size", o.batch_size, "Images per step");
  train->add_flag("--resume", train_opts.resume, "Continue from out/checkpoint.mrgc");
  train->add_option("--exclude", train_opts.exclude, "Image ids to withhold");

  fs::path ckpt;
  int pose = 0;
  auto* sample = app.add_subcommand("sample", "DDIM sample one image");
  sample->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sample->add_option("--pose", pose, "Pose label")->required();
  sample->add_option("--steps", o.steps, "DDIM steps");
  sample->add_option("--out", out, "Output directory")->required();

  fs::path image, poses;
  std::optional<int> opt_pose;
  auto* invert = app.add_subcommand("invert", "DDIM-invert an image and reconstruct it");
  invert->add_option("--ckpt", ckpt, "Checkpoint")->required();
  invert->add_option("--image", image, "PNG image")->required()->check(CLI::ExistingFile);
  invert->add_option("--pose", opt_pose, "Pose label (inferred from --poses when absent)");
  invert->add_option("--poses", poses, "poses.json");
  invert->add_option("--steps", o.steps, "DDIM steps");
  invert->add_option("--out", out, "Output directory")->required();

  std::string targets = "all";
  auto* novel = app.add_subcommand("novel-views", "Generate consistent views at other poses");
  novel->add_option("--ckpt", ckpt, "Checkpoint")->required();
  auto* ref_image = novel->add_option("--ref-image", image, "Reference PNG (image reference)");
  novel->add_option("--ref-pose", opt_pose, "Reference pose (required for a noise reference)");
  novel->add_option("--poses", poses, "poses.json, to infer the reference image's pose");
  novel->add_option("--targets", targets, "Comma-separated pose labels or 'all'");
  novel->add_option("--gamma", o.gamma, "Hard-attention guidance strength (1 disables)");
  novel->add_option("--steps", o.steps, "DDIM steps");
  novel->add_flag("--independent-noise", o.independent_noise, "Do not share the reference's initial noise");
  novel->add_option("--out", out, "Output directory")->required();

  fs::path views;
  auto* eval = app.add_subcommand("eval", "Pose agreement and color consistency of generated views");
  eval->add_option("--views-dir", views, "novel-views output directory")->required();
  eval->add_option("--poses", poses, "poses.json")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed() && !spec.empty() && o.config_file.empty()) o.config_file = spec;
    const RunConfig config = o.resolve();
    if (synth->parsed()) {
      cli::cmd_synth(config, out);
    } else if (ingest->parsed()) {
      cli::cmd_extract_ingest(images, features, out);
    } else if (cluster->parsed()) {
      cli::cmd_cluster(config, features, out);
    } else if (train->parsed()) {
      cli::cmd_train(config, train_opts);
    } else if (sample->parsed()) {
      cli::cmd_sample(config, {ckpt, pose, out});
    } else if (invert->parsed()) {
      cli::cmd_invert(config, {ckpt, image, opt_pose, poses, out});
    } else if (novel->parsed()) {
      cli::NovelViewOptions nv;
      nv.checkpoint = ckpt;
      if (ref_image->count()) nv.reference_image = image;
      nv.reference_pose = opt_pose;
      nv.poses = poses;
      if (targets != "all") {
        std::stringstream ss(targets);
        std::string item;
        while (std::getline(ss, item, ',')) {
          try {
            nv.targets.push_back(std::stoi(item));
          } catch (const std::exception&) {
            throw cli::ValidationError("--targets: not a pose label: '" + item + "'");
          }
        }
      }
      nv.out = out;
      cli::cmd_novel_views(config, nv);
    } else if (eval->parsed()) {
      cli::cmd_eval(views, poses, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
  return 0;
}
