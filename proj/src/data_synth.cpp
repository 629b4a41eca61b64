#include "gtseg/data_synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "gtseg/image_io.hpp"
#include "gtseg/rng.hpp"

namespace gtseg::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  s = std::clamp(s, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
  case 0: return {v, t, p};
  case 1: return {q, v, p};
  case 2: return {p, v, t};
  case 3: return {p, q, v};
  case 4: return {t, p, v};
  default: return {v, p, q};
  }
}

Rgb rgb_to_hsv(const Rgb &c) {
  const double mx = std::max({c[0], c[1], c[2]});
  const double mn = std::min({c[0], c[1], c[2]});
  const double d = mx - mn;
  double h = 0.0;
  if (d > 0.0) {
    if (mx == c[0])
      h = std::fmod((c[1] - c[2]) / d, 6.0);
    else if (mx == c[1])
      h = (c[2] - c[0]) / d + 2.0;
    else
      h = (c[0] - c[1]) / d + 4.0;
    h /= 6.0;
    h -= std::floor(h);
  }
  const double s = mx > 0.0 ? d / mx : 0.0;
  return {h, s, mx};
}

struct Appearance {
  double hue, sat, val;
};

// Source-domain colors; jittered per scene and per object.
Appearance jittered(Rng &rng, double hue, double sat, double val, double dh, double ds, double dv) {
  return {hue + rng.uniform(-dh, dh), sat + rng.uniform(-ds, ds), val + rng.uniform(-dv, dv)};
}

std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", i);
  return buf;
}

} // namespace

const char *class_name(int id) {
  static constexpr const char *kNames[kMaxClasses] = {"background", "sky", "road", "box", "disk", "pole"};
  return (id >= 0 && id < kMaxClasses) ? kNames[id] : "unknown";
}

void SceneSpec::validate() const {
  if (num_classes < 2 || num_classes > kMaxClasses)
    throw std::invalid_argument("SceneSpec: num_classes must be in [2, " + std::to_string(kMaxClasses) + "]");
  if (image_size < 16 || image_size % 8 != 0)
    throw std::invalid_argument("SceneSpec: image_size " + std::to_string(image_size) +
                                " must be a multiple of the output stride 8 and at least 16");
  if (min_objects < 0 || max_objects < min_objects)
    throw std::invalid_argument("SceneSpec: invalid object count range");
}

void DomainShift::validate() const {
  if (!(hue_shift >= 0.0 && hue_shift <= 1.0))
    throw std::invalid_argument("DomainShift: hue_shift must be in [0,1]");
  if (!(brightness_scale > 0.0) || !std::isfinite(brightness_scale))
    throw std::invalid_argument("DomainShift: brightness_scale must be positive");
  if (!(texture_noise_std >= 0.0) || !std::isfinite(texture_noise_std))
    throw std::invalid_argument("DomainShift: texture_noise_std must be non-negative");
}

SceneLayout generate_scene(const SceneSpec &spec, int index) {
  spec.validate();
  if (index < 0)
    throw std::invalid_argument("generate_scene: negative index");
  const int s = spec.image_size;
  const double u = s / 64.0; // geometry unit
  Rng rng(mix_seed(spec.rng_seed, static_cast<std::uint64_t>(index)));
  auto enabled = [&](ClassId c) { return static_cast<int>(c) < spec.num_classes; };

  SceneLayout layout;
  layout.labels = LabelMap(s, s, kBackground);
  layout.base = Image(s, s);
  layout.noise_seed = rng.next();
  LabelMap &lab = layout.labels;

  // Per-scene palette.
  const Appearance bg = jittered(rng, 0.10, 0.40, 0.50, 0.25, 0.08, 0.08);
  const Appearance sky = jittered(rng, 0.15, 0.20, 0.80, 0.25, 0.06, 0.05);
  const Appearance road = jittered(rng, 0.05, 0.08, 0.30, 0.25, 0.04, 0.05);
  const double bg_fx = rng.uniform(0.15, 0.45), bg_fy = rng.uniform(0.15, 0.45);
  const double bg_px = rng.uniform(0.0, 6.28), bg_py = rng.uniform(0.0, 6.28);

  // Background texture first; bands and objects overwrite it.
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double v = bg.val + 0.06 * std::sin(x * bg_fx / u + bg_px) * std::sin(y * bg_fy / u + bg_py);
      const Rgb c = hsv_to_rgb(bg.hue, bg.sat, v);
      for (int ch = 0; ch < 3; ++ch)
        layout.base.at(y, x, ch) = c[ch];
    }
  auto paint = [&](int y, int x, ClassId cls, const Rgb &c) {
    lab.at(y, x) = cls;
    for (int ch = 0; ch < 3; ++ch)
      layout.base.at(y, x, ch) = c[ch];
  };

  const double horizon = rng.uniform(8.0, 18.0) * u;
  const double slope = rng.uniform(-0.12, 0.12);
  if (enabled(kSky)) {
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double edge = horizon + slope * (x - s / 2.0);
        if (y < edge) {
          const double v = sky.val + 0.12 * (1.0 - y / std::max(edge, 1.0));
          paint(y, x, kSky, hsv_to_rgb(sky.hue, sky.sat, v));
        }
      }
  }

  const double road_top = s - rng.uniform(12.0, 22.0) * u;
  const double road_cx = rng.uniform(0.35, 0.65) * s;
  const double half_top = rng.uniform(0.05, 0.10) * s;
  const double half_bottom = rng.uniform(0.22, 0.36) * s;
  if (enabled(kRoad)) {
    Rng grain(mix_seed(layout.noise_seed, 1));
    for (int y = 0; y < s; ++y) {
      if (y < road_top)
        continue;
      const double t = (y - road_top) / std::max(1.0, s - road_top);
      const double half = half_top + (half_bottom - half_top) * t;
      for (int x = 0; x < s; ++x)
        if (std::abs(x + 0.5 - road_cx) <= half)
          paint(y, x, kRoad, hsv_to_rgb(road.hue, road.sat, road.val + grain.uniform(-0.04, 0.04)));
    }
  }

  const int count = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int o = 0; o < count; ++o) {
    const double kind = rng.uniform();
    if (kind < 0.45 && enabled(kBox)) {
      const Appearance a = jittered(rng, 0.0, 0.75, 0.70, 0.25, 0.10, 0.10);
      const int w = static_cast<int>(rng.uniform(6.0, 18.0) * u);
      const int h = static_cast<int>(rng.uniform(6.0, 18.0) * u);
      const int x0 = rng.uniform_int(0, s - w);
      const int bottom = static_cast<int>(rng.uniform(horizon + 0.15 * s, s - 1.0));
      const int y0 = std::max(0, bottom - h);
      for (int y = y0; y < std::min(s, y0 + h); ++y)
        for (int x = x0; x < x0 + w; ++x) {
          const double stripe = ((y - y0) / std::max(1, static_cast<int>(2 * u))) % 2 ? 0.85 : 1.0;
          paint(y, x, kBox, hsv_to_rgb(a.hue, a.sat, a.val * stripe));
        }
    } else if (kind < 0.85 && enabled(kDisk)) {
      const Appearance a = jittered(rng, 0.19, 0.85, 0.90, 0.25, 0.10, 0.08);
      const double r = rng.uniform(4.0, 9.0) * u;
      const double cx = rng.uniform(r, s - r);
      const double cy = rng.uniform(r, 0.7 * s);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double d2 = ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy)) / (r * r);
          if (d2 <= 1.0)
            paint(y, x, kDisk, hsv_to_rgb(a.hue, a.sat, a.val * (1.0 - 0.3 * d2)));
        }
    } else if (enabled(kPole)) {
      const Appearance a = jittered(rng, 0.06, 0.55, 0.35, 0.25, 0.10, 0.08);
      const int w = std::max(2, static_cast<int>(rng.uniform(2.0, 4.0) * u));
      const int h = static_cast<int>(rng.uniform(16.0, 34.0) * u);
      const int x0 = rng.uniform_int(0, s - w);
      const int bottom = static_cast<int>(rng.uniform(0.55 * s, s - 1.0));
      const int y0 = std::max(0, bottom - h);
      for (int y = y0; y <= bottom; ++y)
        for (int x = x0; x < x0 + w; ++x)
          paint(y, x, kPole, hsv_to_rgb(a.hue, a.sat, a.val));
    }
  }

  // Every scene keeps at least one background pixel.
  if (std::find(lab.values.begin(), lab.values.end(), kBackground) == lab.values.end()) {
    const int y = s / 2, x = 0;
    paint(y, x, kBackground, hsv_to_rgb(bg.hue, bg.sat, bg.val));
  }
  return layout;
}

LabeledImage render_domain(const SceneLayout &layout, const DomainShift &shift) {
  shift.validate();
  LabeledImage out;
  out.labels = layout.labels;
  out.image = layout.base;
  Image &img = out.image;
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  Rng noise(mix_seed(layout.noise_seed, 2));
  for (std::size_t p = 0; p < n; ++p) {
    Rgb c{img.pixels[3 * p], img.pixels[3 * p + 1], img.pixels[3 * p + 2]};
    if (shift.hue_shift != 0.0) {
      Rgb hsv = rgb_to_hsv(c);
      c = hsv_to_rgb(hsv[0] + shift.hue_shift, hsv[1], hsv[2]);
    }
    for (int ch = 0; ch < 3; ++ch) {
      double v = c[ch] * shift.brightness_scale;
      if (shift.texture_noise_std > 0.0)
        v += shift.texture_noise_std * noise.normal();
      img.pixels[3 * p + ch] = dequantize_unit(quantize_unit(v));
    }
  }
  return out;
}

std::vector<LabeledImage> generate_domain(const SceneSpec &spec, const DomainShift &shift, int first, int count) {
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(render_domain(generate_scene(spec, first + i), shift));
  return out;
}

namespace {

json meta_to_json(const DatasetMeta &meta) {
  return json{{"format", "gtseg-shapeworld"},
              {"version", 1},
              {"domain", meta.domain},
              {"spec",
               {{"rng_seed", meta.spec.rng_seed},
                {"num_classes", meta.spec.num_classes},
                {"image_size", meta.spec.image_size},
                {"min_objects", meta.spec.min_objects},
                {"max_objects", meta.spec.max_objects}}},
              {"shift",
               {{"hue_shift", meta.shift.hue_shift},
                {"brightness_scale", meta.shift.brightness_scale},
                {"texture_noise_std", meta.shift.texture_noise_std}}},
              {"splits", json::object()}};
}

json load_meta_json(const fs::path &dir) {
  const fs::path path = dir / "meta.json";
  std::ifstream in(path);
  if (!in)
    throw IoError("missing dataset metadata " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw IoError("corrupt dataset metadata " + path.string() + ": " + e.what());
  }
}

} // namespace

void write_dataset(const fs::path &dir, const DatasetMeta &meta, const std::string &split,
                   const std::vector<LabeledImage> &images) {
  meta.spec.validate();
  meta.shift.validate();
  fs::create_directories(dir / "images" / split);
  fs::create_directories(dir / "labels" / split);
  for (std::size_t i = 0; i < images.size(); ++i) {
    validate_labeled_image(images[i], meta.spec.num_classes);
    write_png_image(dir / "images" / split / index_name(static_cast<int>(i)), images[i].image);
    write_png_labels(dir / "labels" / split / index_name(static_cast<int>(i)), images[i].labels);
  }
  json j = meta_to_json(meta);
  if (fs::exists(dir / "meta.json")) {
    json old = load_meta_json(dir);
    if (old.contains("splits"))
      j["splits"] = old["splits"];
  }
  j["splits"][split] = images.size();
  const fs::path path = dir / "meta.json";
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

DatasetMeta read_dataset_meta(const fs::path &dir) {
  const json j = load_meta_json(dir);
  try {
    DatasetMeta meta;
    meta.domain = j.value("domain", "source");
    const json &s = j.at("spec");
    meta.spec.rng_seed = s.at("rng_seed").get<std::uint64_t>();
    meta.spec.num_classes = s.at("num_classes").get<int>();
    meta.spec.image_size = s.at("image_size").get<int>();
    meta.spec.min_objects = s.value("min_objects", 2);
    meta.spec.max_objects = s.value("max_objects", 6);
    const json &sh = j.at("shift");
    meta.shift.hue_shift = sh.at("hue_shift").get<double>();
    meta.shift.brightness_scale = sh.at("brightness_scale").get<double>();
    meta.shift.texture_noise_std = sh.at("texture_noise_std").get<double>();
    return meta;
  } catch (const json::exception &e) {
    throw IoError("invalid dataset metadata " + (dir / "meta.json").string() + ": " + e.what());
  }
}

std::vector<std::string> dataset_splits(const fs::path &dir) {
  const json j = load_meta_json(dir);
  std::vector<std::string> out;
  if (j.contains("splits"))
    for (const auto &[name, _] : j["splits"].items())
      out.push_back(name);
  return out;
}

std::vector<LabeledImage> read_dataset(const fs::path &dir, const std::string &split) {
  const DatasetMeta meta = read_dataset_meta(dir);
  const json j = load_meta_json(dir);
  if (!j.contains("splits") || !j["splits"].contains(split))
    throw IoError("dataset " + dir.string() + " has no split '" + split + "'");
  const int count = j["splits"][split].get<int>();
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const fs::path img_path = dir / "images" / split / index_name(i);
    const fs::path lab_path = dir / "labels" / split / index_name(i);
    LabeledImage item;
    item.image = read_png_image(img_path);
    item.labels = read_png_labels(lab_path);
    if (!item.labels.same_size(item.image.height, item.image.width))
      throw IoError("label map " + lab_path.string() + " does not match image size");
    for (std::uint8_t y : item.labels.values)
      if (y != kIgnore && y >= meta.spec.num_classes)
        throw IoError("label value " + std::to_string(y) + " in " + lab_path.string() + " outside 0.." +
                      std::to_string(meta.spec.num_classes - 1));
    out.push_back(std::move(item));
  }
  return out;
}

} // namespace gtseg::synth
