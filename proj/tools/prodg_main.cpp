#include "prodg/commands.hpp"
#include "prodg/image_io.hpp"
#include "prodg/toy_backends.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"prodg: orthogonal concept bases and generated concept prototypes"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> overrides;
  std::string workdir;
  std::optional<std::int64_t> seed;
  app.add_option("-c,--config", config_file, "JSON config file");
  app.add_option("-s,--set", overrides, "override a config key, e.g. train.batch=8")->allow_extra_args(false);
  app.add_option("-w,--workdir", workdir, "run directory (paths.workdir)");
  app.add_option("--seed", seed, "global seed (overrides PRODG_SEED and the config file)");

  auto* discover = app.add_subcommand("discover", "assign an anchor class to every channel");
  std::string class_file;
  discover->add_option("--class-file", class_file, "class names, one per line");

  auto* train = app.add_subcommand("train", "alternate basis and prompt-bank optimization");
  prodg::TrainCommandOptions train_opts;
  std::optional<std::int64_t> iterations, warmup;
  bool no_purity = false, no_reg = false, no_div = false;
  std::string resume;
  train->add_option("--class-file", class_file, "class names, one per line");
  train->add_option("--iterations", iterations, "total steps");
  train->add_option("--warmup", warmup, "basis-only warmup steps");
  train->add_flag("--no-purity", no_purity, "drop the purity term from the prompt objective");
  train->add_flag("--no-reg", no_reg, "drop the delta penalty");
  train->add_flag("--no-div", no_div, "drop the variance bonus");
  train->add_flag("--skip-discovery", train_opts.skip_discovery, "start from zero anchors");
  train->add_option("--resume", resume, "checkpoint directory to continue from");

  auto* explain = app.add_subcommand("explain", "explain predictions for PPM images");
  std::string checkpoint;
  std::vector<std::string> images;
  explain->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  explain->add_option("images", images, "input images (binary PPM)")->required();

  auto* diversity = app.add_subcommand("eval-diversity", "mean pairwise distance between prototypes");
  prodg::DiversityCommandOptions div_opts;
  diversity->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  diversity->add_option("-n,--samples", div_opts.samples, "prototypes per channel");
  diversity->add_flag("--fixed-seed", div_opts.fixed_seed, "reuse one noise draw for every sample");

  auto* verify = app.add_subcommand("verify", "check head fusion and basis orthogonality");
  prodg::Index verify_samples = 256;
  verify->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  verify->add_option("-n,--samples", verify_samples, "random inputs (at least 256)");

  auto* toy_image = app.add_subcommand("make-toy-image", "render a planted concept as a PPM image");
  prodg::Index concept_index = 0;
  double amplitude = 1.0;
  std::string out_path;
  toy_image->add_option("--concept", concept_index, "concept index")->required();
  toy_image->add_option("--amplitude", amplitude, "concept strength");
  toy_image->add_option("-o,--out", out_path, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : prodg::kExitUsage;
  }

  if (!workdir.empty()) overrides.push_back("paths.workdir=\"" + workdir + "\"");
  if (seed) overrides.push_back("seed=" + std::to_string(*seed));
  if (!class_file.empty()) overrides.push_back("discovery.class_file=\"" + class_file + "\"");
  if (iterations) overrides.push_back("train.iterations=" + std::to_string(*iterations));
  if (warmup) overrides.push_back("train.warmup=" + std::to_string(*warmup));
  if (no_purity) overrides.push_back("loss.enable_U=false");
  if (no_reg) overrides.push_back("loss.enable_reg=false");
  if (no_div) overrides.push_back("loss.enable_div=false");
  if (!resume.empty()) train_opts.resume = fs::path(resume);

  prodg::RunConfig config;
  try {
    std::optional<fs::path> file;
    if (!config_file.empty()) file = config_file;
    config = prodg::resolve_config(file, overrides, std::getenv("PRODG_SEED"));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return prodg::kExitUsage;
  }

  const prodg::CommandIo io{std::cout, std::cerr};
  if (*discover) return prodg::cmd_discover(config, io);
  if (*train) return prodg::cmd_train(config, train_opts, io);
  if (*explain) return prodg::cmd_explain(config, checkpoint, {images.begin(), images.end()}, io);
  if (*diversity) return prodg::cmd_eval_diversity(config, checkpoint, div_opts, io);
  if (*verify) return prodg::cmd_verify(config, checkpoint, verify_samples, io);
  if (*toy_image) {
    try {
      prodg::toy::ToyConfig toy = config.toy;
      toy.class_names = prodg::load_class_names(config);
      const auto world = prodg::toy::make_world(toy);
      prodg::write_netpbm(out_path, world->concept_image(concept_index, amplitude));
      return prodg::kExitOk;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return prodg::kExitUsage;
    }
  }
  return prodg::kExitUsage;
}
