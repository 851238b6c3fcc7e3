#include "prodg/commands.hpp"

#include "prodg/checkpoint.hpp"
#include "prodg/evaluation.hpp"
#include "prodg/image_io.hpp"
#include "prodg/rng.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>

#include <unistd.h>

namespace prodg {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

int run_guarded(CommandIo io, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericalFailure& e) {
    io.err << "error: numerical failure at step " << e.step << ": " << e.what() << "\n";
    if (!e.last_checkpoint.empty()) io.err << "last checkpoint: " << e.last_checkpoint << "\n";
    return kExitNumerical;
  } catch (const InvalidConfiguration& e) {
    io.err << "error: " << e.what() << "\n";
  } catch (const LoadError& e) {
    io.err << "error: cannot load: " << e.what() << "\n";
  } catch (const BackendError& e) {
    io.err << "error: " << e.what() << "\n";
  } catch (const InvalidArgument& e) {
    io.err << "error: " << e.what() << "\n";
  } catch (const InvalidState& e) {
    io.err << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
}

CheckpointMeta meta_for(const Backends& backends, const std::vector<std::string>& class_names,
                        const std::string& hash) {
  return {backends.extractor->feature_height(), backends.extractor->feature_width(), class_names, hash};
}

// Loads a checkpoint and the backends it was made with. Class names come from
// the manifest so the generator's class keys match the training run.
struct OpenedRun {
  std::vector<std::string> class_names;
  Backends backends;
  LoadedCheckpoint checkpoint;
};

OpenedRun open_checkpoint(const RunConfig& config, const fs::path& dir) {
  OpenedRun run;
  run.checkpoint = load_checkpoint(dir);
  run.class_names = run.checkpoint.manifest.class_names;
  run.backends = build_backends(config, run.class_names);
  check_compatible(run.checkpoint.manifest, run.backends, architecture_hash(config, run.class_names));
  return run;
}

// [row_min, row_max, col_min, col_max], or null for an empty box.
ordered_json bbox_json(const BoundingBox& box) {
  if (box.empty) return nullptr;
  return ordered_json::array({box.row_min, box.row_max, box.col_min, box.col_max});
}

std::string report_stem(const fs::path& input, std::set<std::string>& used) {
  std::string stem = input.stem().string();
  if (stem.empty()) stem = "input";
  std::string name = stem;
  for (int i = 2; used.count(name); ++i) name = stem + "-" + std::to_string(i);
  used.insert(name);
  return name;
}

}  // namespace

WorkdirLock::WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
  fs::create_directories(workdir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f)
    throw InvalidState("workdir " + workdir.string() + " is in use (remove " + path_.string() +
                       " if no other prodg process is running)");
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

WorkdirLock::~WorkdirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string checkpoint_dir_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step-%07lld", static_cast<long long>(step));
  return buf;
}

int cmd_discover(const RunConfig& config, CommandIo io) {
  return run_guarded(io, [&] {
    const auto class_names = load_class_names(config);
    const Backends backends = build_backends(config, class_names);
    const auto hash = architecture_hash(config, class_names);
    WorkdirLock lock(config.workdir);

    const auto& enc = *backends.encoder;
    PromptBank bank = init_bank(backends.extractor->channels(),
                                {enc.token_count(), enc.embed_dim(), enc.pooled_dim()}, config.bank);
    const auto result =
        discover_anchors(bank, class_names, backends, {config.images_per_class, config.seed});

    const TrainState state = make_initial_state(std::move(bank));
    fs::create_directories(config.checkpoints_dir());
    fs::create_directories(config.reports_dir());
    save_checkpoint(config.checkpoints_dir() / "discovery", state, meta_for(backends, class_names, hash));

    ordered_json channels = ordered_json::array();
    for (std::size_t c = 0; c < result.assigned_class.size(); ++c) {
      const auto cls = result.assigned_class[c];
      channels.push_back({{"channel", c},
                          {"class_index", cls},
                          {"class", class_names[static_cast<std::size_t>(cls)]},
                          {"mean_purity", result.best_mean_purity[c]}});
    }
    const ordered_json report{{"seed", config.seed},
                              {"images_per_class", config.images_per_class},
                              {"channels", channels}};
    const auto text = report.dump(2) + "\n";
    write_text(config.reports_dir() / "discovery.json", text);
    io.out << text;
    return kExitOk;
  });
}

int cmd_train(const RunConfig& config, const TrainCommandOptions& options, CommandIo io) {
  return run_guarded(io, [&] {
    const auto class_names = load_class_names(config);
    const Backends backends = build_backends(config, class_names);
    const auto hash = architecture_hash(config, class_names);
    const auto meta = meta_for(backends, class_names, hash);
    config.train.validate(backends.extractor->channels());
    WorkdirLock lock(config.workdir);
    fs::create_directories(config.checkpoints_dir());

    write_text(config.workdir / "config.json", config.resolved.dump(2) + "\n");
    const auto& t = config.train;
    io.out << "config: B=" << t.batch << " K=" << t.variations << " r=" << config.bank.rank
           << " lambda_reg=" << t.loss.lambda_reg << " lambda_div=" << t.loss.lambda_div
           << " iterations=" << t.iterations << " warmup=" << t.warmup << "\n";

    std::ofstream metrics(config.workdir / "metrics.jsonl",
                          options.resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw InvalidArgument("cannot write metrics log in " + config.workdir.string());

    TrainHooks hooks;
    hooks.checkpoint = [&](const TrainState& s) {
      const auto dir = config.checkpoints_dir() / checkpoint_dir_name(s.step);
      save_checkpoint(dir, s, meta);
      return dir.string();
    };
    hooks.metrics = [&](const StepMetrics& m) { metrics << to_json_line(m) << "\n" << std::flush; };

    TrainState state;
    if (options.resume) {
      state = resume(*options.resume, t, backends, hash, hooks);
    } else {
      const auto& enc = *backends.encoder;
      PromptBank bank;
      const auto discovered = config.checkpoints_dir() / "discovery";
      if (options.skip_discovery) {
        bank = init_bank(backends.extractor->channels(),
                         {enc.token_count(), enc.embed_dim(), enc.pooled_dim()}, config.bank);
      } else if (fs::exists(discovered / "manifest.json")) {
        auto loaded = load_checkpoint(discovered);
        check_compatible(loaded.manifest, backends, hash);
        bank = std::move(loaded.state.bank);
      } else {
        bank = init_bank(backends.extractor->channels(),
                         {enc.token_count(), enc.embed_dim(), enc.pooled_dim()}, config.bank);
        discover_anchors(bank, class_names, backends, {config.images_per_class, config.seed});
      }
      state = make_initial_state(std::move(bank));
      train(state, t, backends, hooks);
    }
    save_checkpoint(config.checkpoints_dir() / "final", state, meta);
    const double last = state.history.empty() ? 0.0 : state.history.back().mean_purity;
    io.out << "trained to step " << state.step << ", last mean purity " << last
           << ", residual " << state.basis.orthogonality_residual() << "\n";
    return kExitOk;
  });
}

ordered_json explanation_json(const RunConfig& config, const std::string& input, const ExplanationReport& report,
                              const std::vector<std::string>& class_names,
                              const std::vector<std::vector<std::string>>& image_files,
                              const std::vector<std::vector<std::string>>& heatmap_files) {
  ordered_json channels = ordered_json::array();
  for (std::size_t i = 0; i < report.channels.size(); ++i) {
    const auto& ch = report.channels[i];
    ordered_json protos = ordered_json::array();
    for (std::size_t n = 0; n < ch.prototypes.size(); ++n) {
      const auto& p = ch.prototypes[n];
      protos.push_back({{"image", image_files.at(i).at(n)},
                        {"seed", p.seed},
                        {"bbox", bbox_json(p.bbox)},
                        {"heatmap", heatmap_files.at(i).at(n)}});
    }
    ordered_json entry{{"channel", ch.channel},
                       {"score", ch.score},
                       {"anchor_label", ch.anchor_label},
                       {"prototypes", protos}};
    if (ch.input_bbox) entry["input_bbox"] = bbox_json(*ch.input_bbox);
    channels.push_back(std::move(entry));
  }
  const auto cls = static_cast<std::size_t>(report.predicted_class);
  return ordered_json{{"input", input},
                      {"predicted_class", report.predicted_class},
                      {"label", cls < class_names.size() ? class_names[cls] : std::string()},
                      {"k", report.k},
                      {"k_clamped", report.k_clamped},
                      {"channels", channels},
                      {"config_echo", config.resolved},
                      {"version", kToolVersion}};
}

int cmd_explain(const RunConfig& config, const fs::path& checkpoint, const std::vector<fs::path>& images,
                CommandIo io) {
  int failures = 0;
  const int code = run_guarded(io, [&] {
    if (images.empty()) throw InvalidArgument("explain: no input images");
    WorkdirLock lock(config.workdir);
    const auto run = open_checkpoint(config, checkpoint);
    const auto& state = run.checkpoint.state;
    const auto root = config.reports_dir() / "explain";
    std::set<std::string> used;

    for (const auto& input : images) {
      try {
        const Image image = read_netpbm(input);
        const auto report = explain(image, state.basis, state.bank, run.backends, config.explain);
        const auto dir = root / report_stem(input, used);
        fs::create_directories(dir);

        std::vector<std::vector<std::string>> image_files, heatmap_files;
        for (const auto& ch : report.channels) {
          auto& imgs = image_files.emplace_back();
          auto& maps = heatmap_files.emplace_back();
          for (std::size_t n = 0; n < ch.prototypes.size(); ++n) {
            const auto tag = "c" + std::to_string(ch.channel) + "_s" + std::to_string(n);
            imgs.push_back("prototype_" + tag + ".ppm");
            maps.push_back("heatmap_" + tag + ".pgm");
            write_netpbm(dir / imgs.back(), ch.prototypes[n].image);
            write_heatmap(dir / maps.back(), ch.prototypes[n].heatmap.upsampled);
          }
          if (ch.input_heatmap)
            write_heatmap(dir / ("input_heatmap_c" + std::to_string(ch.channel) + ".pgm"),
                          ch.input_heatmap->upsampled);
        }
        const auto json = explanation_json(config, input.string(), report, run.class_names, image_files, heatmap_files);
        write_text(dir / "report.json", json.dump(2) + "\n");
        io.out << (dir / "report.json").string() << "\n";
      } catch (const std::exception& e) {
        ++failures;
        io.err << "error: " << input.string() << ": " << e.what() << "\n";
      }
    }
    return failures == static_cast<int>(images.size()) ? kExitUsage : kExitOk;
  });
  return code;
}

int cmd_eval_diversity(const RunConfig& config, const fs::path& checkpoint, const DiversityCommandOptions& options,
                       CommandIo io) {
  return run_guarded(io, [&] {
    if (options.samples < 2) throw InvalidArgument("eval-diversity: need at least 2 samples per channel");
    WorkdirLock lock(config.workdir);
    const auto run = open_checkpoint(config, checkpoint);
    const auto& bank = run.checkpoint.state.bank;
    std::vector<Index> channels(static_cast<std::size_t>(bank.channels()));
    for (std::size_t c = 0; c < channels.size(); ++c) channels[c] = static_cast<Index>(c);
    const SampleOptions sample{options.samples, config.seed, options.fixed_seed};
    const auto report = evaluate_diversity(bank, run.backends, channels, sample);

    ordered_json per_channel = ordered_json::array();
    for (std::size_t i = 0; i < report.channels.size(); ++i)
      per_channel.push_back({{"channel", report.channels[i]}, {"mean_distance", report.per_channel[i]}});
    const ordered_json json{{"metric", run.backends.metric->name()},
                            {"samples_per_channel", options.samples},
                            {"fixed_seed", options.fixed_seed},
                            {"channels", per_channel},
                            {"global_mean", report.global_mean}};
    const auto text = json.dump(2) + "\n";
    fs::create_directories(config.reports_dir());
    write_text(config.reports_dir() / "diversity.json", text);
    io.out << text;
    return kExitOk;
  });
}

VerifyResult verify_basis(const OrthogonalBasis& basis, const FeatureExtractor& extractor, Index samples,
                          std::uint64_t seed) {
  if (samples <= 0) throw InvalidArgument("verify: samples must be positive");
  const auto& head = extractor.head();
  const FusedHead fused = fuse_head(head.weights, head.bias, basis);
  const ImageShape shape = extractor.input_shape();
  std::mt19937_64 rng(derive_seed({static_cast<std::uint64_t>(Stream::kVerify), seed}));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  VerifyResult r;
  r.samples = samples;
  r.orthogonality_residual = basis.orthogonality_residual();
  for (Index s = 0; s < samples; ++s) {
    Image img = Image::zeros(shape);
    for (Index i = 0; i < img.pixels.size(); ++i) img.pixels(i) = uniform(rng);
    const FeatureMap feat = extract_features(extractor, img);
    const Vector original = head_logits(head.weights, head.bias, feat);
    const Vector rotated = head_logits(fused.weights, fused.bias, apply_basis(basis, feat));
    Index a = 0, b = 0;
    original.maxCoeff(&a);
    rotated.maxCoeff(&b);
    if (a != b) ++r.argmax_mismatches;
    r.max_logit_diff = std::max(r.max_logit_diff, (original - rotated).cwiseAbs().maxCoeff());
  }
  if (!std::isfinite(r.max_logit_diff) || !std::isfinite(r.orthogonality_residual)) {
    r.passed = false;
  } else {
    r.passed = r.max_logit_diff < kVerifyLogitTolerance && r.orthogonality_residual < kVerifyResidualTolerance;
  }
  return r;
}

int cmd_verify(const RunConfig& config, const fs::path& checkpoint, Index samples, CommandIo io) {
  return run_guarded(io, [&] {
    if (samples < 256) throw InvalidArgument("verify: at least 256 samples are required");
    WorkdirLock lock(config.workdir);
    const auto run = open_checkpoint(config, checkpoint);
    const auto r = verify_basis(run.checkpoint.state.basis, *run.backends.extractor, samples, config.seed);
    const ordered_json json{{"checkpoint_step", run.checkpoint.manifest.step},
                            {"samples", r.samples},
                            {"max_logit_diff", r.max_logit_diff},
                            {"argmax_mismatches", r.argmax_mismatches},
                            {"orthogonality_residual", r.orthogonality_residual},
                            {"logit_tolerance", kVerifyLogitTolerance},
                            {"residual_tolerance", kVerifyResidualTolerance},
                            {"passed", r.passed}};
    const auto text = json.dump(2) + "\n";
    fs::create_directories(config.reports_dir());
    write_text(config.reports_dir() / "verify.json", text);
    io.out << text;
    if (r.passed) return kExitOk;
    if (!(r.max_logit_diff < kVerifyLogitTolerance))
      io.err << "verification failed: max_logit_diff " << r.max_logit_diff << " >= " << kVerifyLogitTolerance << "\n";
    if (!(r.orthogonality_residual < kVerifyResidualTolerance))
      io.err << "verification failed: orthogonality_residual " << r.orthogonality_residual
             << " >= " << kVerifyResidualTolerance << "\n";
    return kExitVerification;
  });
}

}  // namespace prodg
