// Command-line front end: dataset generation, mix previews, training,
// evaluation and prediction dumps.
#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gtseg/checkpoint.hpp"
#include "gtseg/data_synth.hpp"
#include "gtseg/evaluation.hpp"
#include "gtseg/image_io.hpp"
#include "gtseg/mixing.hpp"
#include "gtseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace gtseg;

namespace {

struct DatagenArgs {
  std::uint64_t seed = 0;
  int count = 200;
  int size = 64;
  int first = 0;
  double hue = 0.0, brightness = 1.0, noise = 0.0;
  std::string split = "train";
  std::string domain;
  fs::path out;
};

int run_datagen(const DatagenArgs &a) {
  synth::DatasetMeta meta;
  meta.spec.rng_seed = a.seed;
  meta.spec.image_size = a.size;
  meta.shift = {a.hue, a.brightness, a.noise};
  meta.domain = a.domain.empty() ? (meta.shift.is_identity() ? "source" : "target") : a.domain;
  const auto items = synth::generate_domain(meta.spec, meta.shift, a.first, a.count);
  synth::write_dataset(a.out, meta, a.split, items);
  std::cout << "wrote " << items.size() << " " << meta.domain << " images to " << (a.out / "images" / a.split)
            << '\n';
  return 0;
}

struct MixPreviewArgs {
  fs::path source, target;
  std::string split = "train";
  int count = 4;
  std::uint64_t seed = 0;
  fs::path out;
};

int run_mix_preview(const MixPreviewArgs &a) {
  const auto src = synth::read_dataset(a.source, a.split);
  const auto tgt = synth::read_dataset(a.target, a.split);
  if (src.empty() || tgt.empty())
    throw std::invalid_argument("mix-preview: datasets must be non-empty");
  fs::create_directories(a.out);
  const int h = src[0].labels.height, w = src[0].labels.width;
  for (int i = 0; i < a.count; ++i) {
    const auto &s = src[i % src.size()];
    const auto &t = tgt[i % tgt.size()];
    Rng rng(mix_seed(a.seed, static_cast<std::uint64_t>(i)));
    const auto mask = mixing::build_mask(s.labels, mixing::sample_classes(s.labels, rng));
    // Target ground truth stands in for teacher pseudo-labels in the preview.
    const auto mixed = mixing::mix(s.image, s.labels, t.image, t.labels, mask);
    const int panels = 5;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * panels * 3);
    auto put = [&](int slot, int y, int x, std::array<std::uint8_t, 3> c) {
      std::uint8_t *p = &rgb[(static_cast<std::size_t>(y) * w * panels + slot * w + x) * 3];
      p[0] = c[0], p[1] = c[1], p[2] = c[2];
    };
    auto color = [](const Image &img, int y, int x) {
      return std::array<std::uint8_t, 3>{quantize_unit(img.at(y, x, 0)), quantize_unit(img.at(y, x, 1)),
                                         quantize_unit(img.at(y, x, 2))};
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        put(0, y, x, color(s.image, y, x));
        put(1, y, x, color(t.image, y, x));
        put(2, y, x, color(mixed.mixed_image, y, x));
        put(3, y, x, eval::palette_color(mixed.mixed_labels.at(y, x)));
        const std::uint8_t m = mask.mask.at(y, x) ? 255 : 0;
        put(4, y, x, {m, m, m});
      }
    char name[64];
    std::snprintf(name, sizeof name, "mix_%04d.png", i);
    write_png_rgb8(a.out / name, h, w * panels, rgb);
  }
  std::cout << "wrote " << a.count << " previews (source | target | mixed | mixed labels | mask) to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  fs::path config;
  std::string method;
  fs::path out;
  fs::path source, target;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool quiet = false;
  // Ablation switches.
  std::optional<int> embed_dim, blocks;
  std::optional<double> lambda_gt, d;
  bool no_zero_init = false, no_skip = false, no_uncertainty = false, per_pixel_q = false, freeze_guider = false;
};

std::vector<LabeledImage> load_split(const fs::path &dir, const std::string &split) {
  const auto splits = synth::dataset_splits(dir);
  if (std::find(splits.begin(), splits.end(), split) == splits.end())
    return {};
  return synth::read_dataset(dir, split);
}

int run_train(const TrainArgs &a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_config(a.config);
  if (!a.method.empty())
    cfg.method = parse_method(a.method);
  if (a.steps)
    cfg.total_steps = *a.steps;
  if (a.seed)
    cfg.seed = *a.seed;
  if (a.embed_dim)
    cfg.guider.embed_dim = *a.embed_dim;
  if (a.blocks)
    cfg.guider.num_blocks = *a.blocks;
  if (a.lambda_gt)
    cfg.loss.lambda_gt = *a.lambda_gt;
  if (a.d)
    cfg.loss.d = *a.d;
  if (a.no_zero_init)
    cfg.guider.zero_init_input = cfg.guider.zero_init_output = false;
  if (a.no_skip)
    cfg.guider.skip_connection = false;
  if (a.no_uncertainty)
    cfg.loss.uncertainty = false;
  if (a.per_pixel_q)
    cfg.loss.quality = losses::QualityMode::per_pixel;
  if (a.freeze_guider)
    cfg.train_guider = false;
  if (cfg.warmup_steps > cfg.total_steps)
    cfg.warmup_steps = -1;
  cfg.validate();

  const auto source = synth::read_dataset(a.source, "train");
  const auto target = synth::read_dataset(a.target, "train");
  const auto target_val = load_split(a.target, "val");

  fs::create_directories(a.out);
  {
    std::ofstream f(a.out / "config.json");
    f << config_to_json(cfg) << '\n';
  }
  Trainer trainer(cfg);
  FitOptions opts;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  opts.target_val = target_val;
  opts.verbose = !a.quiet;
  const auto t0 = std::chrono::steady_clock::now();
  const FitResult r = fit(trainer, source, target, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << method_name(cfg.method) << ": " << r.steps_run << " steps in " << secs << " s";
  if (r.final_miou)
    std::cout << ", target val mIoU " << *r.final_miou * 100.0;
  std::cout << '\n';
  return 0;
}

struct EvalArgs {
  fs::path checkpoint, data, out;
  std::string split = "val";
};

int run_eval(const EvalArgs &a) {
  SegModel model = load_student(read_archive(a.checkpoint));
  const auto data = synth::read_dataset(a.data, a.split);
  const eval::IoUReport report = eval::evaluate(model, data);
  std::vector<std::string> names;
  for (int c = 0; c < report.num_classes(); ++c)
    names.push_back(synth::class_name(c));
  const std::string json = report.to_json(names);
  if (a.out.empty()) {
    std::cout << json << '\n';
  } else {
    std::ofstream f(a.out);
    if (!f)
      throw IoError("cannot write " + a.out.string());
    f << json << '\n';
    std::cout << "mIoU " << report.miou() * 100.0 << " written to " << a.out << '\n';
  }
  return 0;
}

struct DumpArgs {
  fs::path checkpoint, data, out;
  std::string split = "val";
  int count = 5;
};

int run_dump(const DumpArgs &a) {
  const Archive archive = read_archive(a.checkpoint);
  SegModel model = load_student(archive);
  const auto guider = load_guider(archive);
  auto data = synth::read_dataset(a.data, a.split);
  if (static_cast<int>(data.size()) > a.count)
    data.resize(a.count);
  const auto summary = eval::dump_predictions(model, guider.get(), data, a.out);
  std::cout << "wrote " << summary.prediction_panels << " prediction panels and " << summary.guider_panels
            << " mixed-feature panels to " << a.out << '\n';
  if (!summary.notice.empty())
    std::cout << "note: " << summary.notice << '\n';
  return 0;
}

int run_export(const fs::path &checkpoint, const fs::path &out) {
  const Archive full = read_archive(checkpoint);
  const TrainConfig cfg = config_from_json(full.get_text("meta/config"));
  Archive slim;
  slim.put_text("meta/kind", "inference");
  slim.put_text("meta/config", config_to_json(cfg));
  for (const auto &[name, entry] : full.entries())
    if (name.rfind("student/", 0) == 0)
      slim.entries()[name] = entry;
  write_archive(out, slim);
  std::cout << "exported " << slim.count_prefix("student/") << " student tensors to " << out << '\n';
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Domain-adaptive segmentation with guidance training on synthetic scenes"};
  app.require_subcommand(1);

  DatagenArgs dg;
  auto *datagen = app.add_subcommand("datagen", "Render a synthetic dataset split");
  datagen->add_option("--seed", dg.seed, "Scene seed");
  datagen->add_option("--count", dg.count, "Number of images")->check(CLI::PositiveNumber);
  datagen->add_option("--first", dg.first, "Index of the first scene")->check(CLI::NonNegativeNumber);
  datagen->add_option("--size", dg.size, "Image side length (multiple of 8)");
  datagen->add_option("--shift-hue", dg.hue, "Hue rotation in turns");
  datagen->add_option("--shift-brightness", dg.brightness, "Brightness multiplier");
  datagen->add_option("--shift-noise", dg.noise, "Texture noise standard deviation");
  datagen->add_option("--split", dg.split, "Split name");
  datagen->add_option("--domain", dg.domain, "Domain tag stored in meta.json");
  datagen->add_option("--out", dg.out, "Output directory")->required();

  MixPreviewArgs mp;
  auto *preview = app.add_subcommand("mix-preview", "Write ClassMix audit panels");
  preview->add_option("--source", mp.source, "Source dataset directory")->required();
  preview->add_option("--target", mp.target, "Target dataset directory")->required();
  preview->add_option("--split", mp.split, "Split to read");
  preview->add_option("--count", mp.count, "Number of previews")->check(CLI::PositiveNumber);
  preview->add_option("--seed", mp.seed, "Mixing seed");
  preview->add_option("--out", mp.out, "Output directory")->required();

  TrainArgs tr;
  auto *train = app.add_subcommand("train", "Train a segmentation model");
  train->add_option("--config", tr.config, "JSON training config")->check(CLI::ExistingFile);
  train->add_option("--method", tr.method, "source_only | dacs | dacs_guidance");
  train->add_option("--out", tr.out, "Run directory")->required();
  train->add_option("--source", tr.source, "Source dataset directory (train split)")->required();
  train->add_option("--target", tr.target, "Target dataset directory (train, optional val split)")->required();
  train->add_option("--steps", tr.steps, "Override total_steps");
  train->add_option("--seed", tr.seed, "Override seed");
  train->add_flag("--resume", tr.resume, "Continue from RUN/checkpoint.gtar");
  train->add_flag("--quiet", tr.quiet, "No progress output");
  train->add_option("--guider-dim", tr.embed_dim, "Guider embedding width");
  train->add_option("--guider-blocks", tr.blocks, "Guider transformer blocks");
  train->add_option("--lambda-gt", tr.lambda_gt, "Guidance loss weight");
  train->add_option("--d", tr.d, "Uncertainty sharpness");
  train->add_flag("--no-zero-init", tr.no_zero_init, "Random init for the guider input/output convs");
  train->add_flag("--no-skip", tr.no_skip, "Drop the guider skip connection");
  train->add_flag("--no-uncertainty", tr.no_uncertainty, "Constant 1 instead of the mask-ratio factor");
  train->add_flag("--per-pixel-q", tr.per_pixel_q, "Per-pixel confidence indicator instead of scalar q");
  train->add_flag("--freeze-guider", tr.freeze_guider, "Keep the guider out of the optimizer");

  EvalArgs ev;
  auto *evaluate = app.add_subcommand("eval", "Compute per-class IoU and mIoU");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint or exported model")->required();
  evaluate->add_option("--data", ev.data, "Dataset directory")->required();
  evaluate->add_option("--split", ev.split, "Split to evaluate");
  evaluate->add_option("--out", ev.out, "Report path (stdout when omitted)");

  DumpArgs du;
  auto *dump = app.add_subcommand("dump", "Write color-mapped prediction panels");
  dump->add_option("--checkpoint", du.checkpoint, "Checkpoint path")->required();
  dump->add_option("--data", du.data, "Dataset directory")->required();
  dump->add_option("--split", du.split, "Split to read");
  dump->add_option("--count", du.count, "Number of images")->check(CLI::PositiveNumber);
  dump->add_option("--out", du.out, "Output directory")->required();

  fs::path export_in, export_out;
  auto *exporter = app.add_subcommand("export", "Strip a training checkpoint down to the student");
  exporter->add_option("--checkpoint", export_in, "Training checkpoint")->required();
  exporter->add_option("--out", export_out, "Output archive")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*datagen)
      return run_datagen(dg);
    if (*preview)
      return run_mix_preview(mp);
    if (*train)
      return run_train(tr);
    if (*evaluate)
      return run_eval(ev);
    if (*dump)
      return run_dump(du);
    if (*exporter)
      return run_export(export_in, export_out);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
