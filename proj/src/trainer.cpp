#include "gtseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "gtseg/evaluation.hpp"
#include "gtseg/image_io.hpp"
#include "gtseg/mixing.hpp"

namespace gtseg {

namespace {

using nlohmann::json;

// Independent random streams derived from the run seed.
constexpr std::uint64_t kStudentInit = 1;
constexpr std::uint64_t kGuiderInit = 2;
constexpr std::uint64_t kMixStream = 3;
constexpr std::uint64_t kSourceOrder = 4;
constexpr std::uint64_t kTargetOrder = 5;

GuiderConfig guider_for(const TrainConfig &c) {
  GuiderConfig g = c.guider;
  g.feature_dim = c.model.feature_dim();
  return g;
}

SegModel make_student(const TrainConfig &c) { return SegModel(c.model, mix_seed(c.seed, kStudentInit)); }

void reject_unknown(const json &j, std::initializer_list<const char *> known, const std::string &where) {
  std::set<std::string> allowed(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + where);
}

template <typename T> void read_opt(const json &j, const char *key, T &field) {
  if (j.contains(key))
    field = j.at(key).get<T>();
}

const char *quality_name(losses::QualityMode q) { return q == losses::QualityMode::scalar ? "scalar" : "per_pixel"; }

const char *pe_name(PositionalEncoding p) {
  return p == PositionalEncoding::factorized_2d ? "factorized_2d" : "raster_1d";
}

} // namespace

const char *method_name(Method m) {
  switch (m) {
  case Method::source_only:
    return "source_only";
  case Method::dacs:
    return "dacs";
  case Method::dacs_guidance:
    return "dacs_guidance";
  }
  return "?";
}

Method parse_method(const std::string &name) {
  for (Method m : {Method::source_only, Method::dacs, Method::dacs_guidance})
    if (name == method_name(m))
      return m;
  throw std::invalid_argument("unknown method \"" + name + "\" (expected source_only, dacs or dacs_guidance)");
}

void TrainConfig::validate() const {
  if (!(lr_encoder > 0.0) || !(lr_decoder > 0.0) || !(lr_guider > 0.0))
    throw std::invalid_argument("TrainConfig: learning rates must be positive");
  if (batch_size < 1)
    throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (total_steps < 0)
    throw std::invalid_argument("TrainConfig: total_steps must be non-negative");
  if (resolved_warmup() > total_steps)
    throw std::invalid_argument("TrainConfig: warmup_steps " + std::to_string(warmup_steps) + " exceeds total_steps " +
                                std::to_string(total_steps));
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("TrainConfig: alpha must be in [0,1]");
  if (!(weight_decay >= 0.0))
    throw std::invalid_argument("TrainConfig: weight_decay must be non-negative");
  if (checkpoint_interval < 0 || eval_interval < 0)
    throw std::invalid_argument("TrainConfig: intervals must be non-negative");
  model.validate();
  guider_for(*this).validate();
  loss.validate();
}

std::string config_to_json(const TrainConfig &c) {
  json j;
  j["lr_encoder"] = c.lr_encoder;
  j["lr_decoder"] = c.lr_decoder;
  j["lr_guider"] = c.lr_guider;
  j["batch_size"] = c.batch_size;
  j["total_steps"] = c.total_steps;
  j["warmup_steps"] = c.resolved_warmup();
  j["alpha"] = c.alpha;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["method"] = method_name(c.method);
  j["train_guider"] = c.train_guider;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["eval_interval"] = c.eval_interval;
  j["model"] = {{"in_channels", c.model.in_channels},
                {"num_classes", c.model.num_classes},
                {"encoder_channels", c.model.encoder_channels},
                {"output_stride", c.model.output_stride},
                {"norm_group_size", c.model.norm_group_size},
                {"context_conv", c.model.context_conv}};
  j["guider"] = {{"embed_dim", c.guider.embed_dim},
                 {"num_blocks", c.guider.num_blocks},
                 {"patch_size", c.guider.patch_size},
                 {"num_heads", c.guider.num_heads},
                 {"mlp_ratio", c.guider.mlp_ratio},
                 {"zero_init_input", c.guider.zero_init_input},
                 {"zero_init_output", c.guider.zero_init_output},
                 {"skip_connection", c.guider.skip_connection},
                 {"positional_encoding", pe_name(c.guider.positional_encoding)}};
  j["loss"] = {{"lambda_gt", c.loss.lambda_gt},
               {"d", c.loss.d},
               {"tau", c.loss.tau},
               {"uncertainty", c.loss.uncertainty},
               {"quality", quality_name(c.loss.quality)}};
  return j.dump(2);
}

TrainConfig config_from_json(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!j.is_object())
    throw std::invalid_argument("config: top level must be an object");
  reject_unknown(j,
                 {"lr_encoder", "lr_decoder", "lr_guider", "batch_size", "total_steps", "warmup_steps", "alpha",
                  "weight_decay", "seed", "method", "train_guider", "checkpoint_interval", "eval_interval", "model",
                  "guider", "loss"},
                 "top level");
  TrainConfig c;
  try {
    read_opt(j, "lr_encoder", c.lr_encoder);
    read_opt(j, "lr_decoder", c.lr_decoder);
    read_opt(j, "lr_guider", c.lr_guider);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "total_steps", c.total_steps);
    read_opt(j, "warmup_steps", c.warmup_steps);
    read_opt(j, "alpha", c.alpha);
    read_opt(j, "weight_decay", c.weight_decay);
    read_opt(j, "seed", c.seed);
    if (j.contains("method"))
      c.method = parse_method(j.at("method").get<std::string>());
    read_opt(j, "train_guider", c.train_guider);
    read_opt(j, "checkpoint_interval", c.checkpoint_interval);
    read_opt(j, "eval_interval", c.eval_interval);
    if (j.contains("model")) {
      const json &m = j.at("model");
      reject_unknown(m, {"in_channels", "num_classes", "encoder_channels", "output_stride", "norm_group_size",
                         "context_conv"},
                     "model");
      read_opt(m, "in_channels", c.model.in_channels);
      read_opt(m, "num_classes", c.model.num_classes);
      read_opt(m, "encoder_channels", c.model.encoder_channels);
      read_opt(m, "output_stride", c.model.output_stride);
      read_opt(m, "norm_group_size", c.model.norm_group_size);
      read_opt(m, "context_conv", c.model.context_conv);
    }
    if (j.contains("guider")) {
      const json &g = j.at("guider");
      reject_unknown(g, {"embed_dim", "num_blocks", "patch_size", "num_heads", "mlp_ratio", "zero_init_input",
                         "zero_init_output", "skip_connection", "positional_encoding"},
                     "guider");
      read_opt(g, "embed_dim", c.guider.embed_dim);
      read_opt(g, "num_blocks", c.guider.num_blocks);
      read_opt(g, "patch_size", c.guider.patch_size);
      read_opt(g, "num_heads", c.guider.num_heads);
      read_opt(g, "mlp_ratio", c.guider.mlp_ratio);
      read_opt(g, "zero_init_input", c.guider.zero_init_input);
      read_opt(g, "zero_init_output", c.guider.zero_init_output);
      read_opt(g, "skip_connection", c.guider.skip_connection);
      if (g.contains("positional_encoding")) {
        const std::string pe = g.at("positional_encoding").get<std::string>();
        if (pe == "factorized_2d")
          c.guider.positional_encoding = PositionalEncoding::factorized_2d;
        else if (pe == "raster_1d")
          c.guider.positional_encoding = PositionalEncoding::raster_1d;
        else
          throw std::invalid_argument("config: unknown positional_encoding \"" + pe + "\"");
      }
    }
    if (j.contains("loss")) {
      const json &l = j.at("loss");
      reject_unknown(l, {"lambda_gt", "d", "tau", "uncertainty", "quality"}, "loss");
      read_opt(l, "lambda_gt", c.loss.lambda_gt);
      read_opt(l, "d", c.loss.d);
      read_opt(l, "tau", c.loss.tau);
      read_opt(l, "uncertainty", c.loss.uncertainty);
      if (l.contains("quality")) {
        const std::string q = l.at("quality").get<std::string>();
        if (q == "scalar")
          c.loss.quality = losses::QualityMode::scalar;
        else if (q == "per_pixel")
          c.loss.quality = losses::QualityMode::per_pixel;
        else
          throw std::invalid_argument("config: unknown quality mode \"" + q + "\"");
      }
    }
  } catch (const json::exception &e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return config_from_json(ss.str());
  } catch (const std::invalid_argument &e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

Trainer::Trainer(TrainConfig config)
    : config_((config.validate(), std::move(config))), student_(make_student(config_)),
      teacher_(student_, config_.alpha) {
  const ParamGroups groups = student_.parameter_groups();
  std::vector<ParamGroup> opt_groups{{"encoder", groups.encoder, config_.lr_encoder, config_.weight_decay},
                                     {"decoder", groups.decoder, config_.lr_decoder, config_.weight_decay}};
  if (config_.method == Method::dacs_guidance) {
    guider_ = std::make_unique<Guider>(guider_for(config_), mix_seed(config_.seed, kGuiderInit));
    if (config_.train_guider)
      opt_groups.push_back({"guider", guider_->parameters(), config_.lr_guider, config_.weight_decay});
  }
  optimizer_ = std::make_unique<AdamW>(std::move(opt_groups));
}

losses::LossBreakdown Trainer::train_step(std::span<const LabeledImage> source, std::span<const Image> target) {
  const std::size_t n = source.size();
  if (n == 0 || target.size() != n)
    throw std::invalid_argument("train_step: need equal, non-empty source and target batches (got " +
                                std::to_string(n) + " and " + std::to_string(target.size()) + ")");
  const losses::LossConfig &lc = config_.loss;
  const int stride = config_.model.output_stride;

  optimizer_->zero_grad();
  if (guider_)
    zero_grads(guider_->parameters());

  // Supervised source pass.
  std::vector<LabelMap> source_labels;
  for (const auto &item : source)
    source_labels.push_back(item.labels);
  const ag::Var source_logits = student_.forward(ag::Var(images_to_batch(source)));
  const ag::Var l_sup = losses::ce_loss(source_logits, labels_to_batch(source_labels));

  ag::Var l_mix, l_gt;
  losses::LossBreakdown out;
  if (config_.method != Method::source_only) {
    const std::vector<selftrain::PseudoLabel> pseudo =
        teacher_.pseudo_label(images_to_batch(target), lc.tau);

    Rng rng(mix_seed(mix_seed(config_.seed, kMixStream), static_cast<std::uint64_t>(step_)));
    std::vector<Image> mixed_images;
    std::vector<LabelMap> mixed_labels;
    std::vector<double> weights, ratios;
    std::vector<std::uint8_t> mask_scale;
    for (std::size_t b = 0; b < n; ++b) {
      const mixing::ClassMask mask =
          mixing::build_mask(source[b].labels, mixing::sample_classes(source[b].labels, rng));
      mixing::ClassMixBatch mb =
          mixing::mix(source[b].image, source[b].labels, target[b], pseudo[b].labels, mask, stride);
      const std::vector<double> w = selftrain::pixel_weights(mask.mask, pseudo[b].q);
      weights.insert(weights.end(), w.begin(), w.end());
      mask_scale.insert(mask_scale.end(), mb.mask_scale.values.begin(), mb.mask_scale.values.end());
      ratios.push_back(mb.source_ratio);
      out.q += pseudo[b].q / static_cast<double>(n);
      out.r += mb.source_ratio / static_cast<double>(n);
      mixed_images.push_back(std::move(mb.mixed_image));
      mixed_labels.push_back(std::move(mb.mixed_labels));
    }

    // One encoding of the mixed batch feeds both the mixed and guided passes.
    const ag::Var mixed_features = student_.encode(ag::Var(images_to_batch(mixed_images)));
    l_mix = losses::ce_loss(student_.decode(mixed_features), labels_to_batch(mixed_labels), weights);

    if (config_.method == Method::dacs_guidance) {
      const ag::Var guided = guider_->reconstruct(mixed_features, mask_scale);
      const losses::GuidanceTerm term = losses::guidance_loss(student_.decode(guided), pseudo, ratios, lc);
      l_gt = term.loss;
      out.beta = term.mean_beta;
    }
  }

  losses::Objective objective;
  try {
    objective = losses::total_loss(l_sup, l_mix, l_gt, lc);
  } catch (const std::domain_error &e) {
    auto value = [](const ag::Var &v) { return v.defined() ? std::to_string(v.value()[0]) : std::string("0"); };
    throw std::runtime_error("training diverged at step " + std::to_string(step_) + ": " + e.what() +
                             " (L_sup=" + value(l_sup) + ", L_mix=" + value(l_mix) + ", L_gt=" + value(l_gt) +
                             ", q=" + std::to_string(out.q) + ", r=" + std::to_string(out.r) + ")");
  }
  ag::backward(objective.total);
  optimizer_->step(warmup_factor(step_, config_.resolved_warmup()));
  teacher_.update(student_);
  ++step_;

  out.l_sup = objective.breakdown.l_sup;
  out.l_mix = objective.breakdown.l_mix;
  out.l_gt = objective.breakdown.l_gt;
  out.total = objective.breakdown.total;
  return out;
}

Archive Trainer::checkpoint() const {
  Archive a;
  a.put_text("meta/kind", "training");
  a.put_text("meta/config", config_to_json(config_));
  a.put_tensor("meta/step", Tensor(Shape{1}, static_cast<double>(step_)));
  a.put_params("student/", student_.parameters());
  a.put_params("teacher/", teacher_.model().parameters());
  if (guider_)
    a.put_params("", guider_->parameters());
  optimizer_->save(a, "optim/");
  return a;
}

void Trainer::restore(const Archive &a) {
  const TrainConfig saved = config_from_json(a.get_text("meta/config"));
  if (saved.method != config_.method || saved.model.encoder_channels != config_.model.encoder_channels ||
      saved.model.num_classes != config_.model.num_classes)
    throw std::invalid_argument("restore: checkpoint was written for a different model or method");
  a.get_params("student/", student_.parameters());
  a.get_params("teacher/", teacher_.model().parameters());
  if (guider_)
    a.get_params("", guider_->parameters());
  optimizer_->load(a, "optim/");
  step_ = static_cast<int>(a.get_tensor("meta/step")[0]);
}

Archive Trainer::inference_export() const {
  Archive a;
  a.put_text("meta/kind", "inference");
  a.put_text("meta/config", config_to_json(config_));
  a.put_params("student/", student_.parameters());
  return a;
}

SegModel load_student(const Archive &archive) {
  const TrainConfig c = config_from_json(archive.get_text("meta/config"));
  SegModel model(c.model, 0);
  archive.get_params("student/", model.parameters());
  return model;
}

std::unique_ptr<Guider> load_guider(const Archive &archive) {
  if (!archive.has_prefix("guider/"))
    return nullptr;
  const TrainConfig c = config_from_json(archive.get_text("meta/config"));
  auto g = std::make_unique<Guider>(guider_for(c), 0);
  archive.get_params("", g->parameters());
  return g;
}

std::size_t sample_index(std::uint64_t seed, std::uint64_t stream, int step, int batch_size, int slot, std::size_t n) {
  if (n == 0)
    throw std::invalid_argument("sample_index: empty dataset");
  const std::uint64_t position = static_cast<std::uint64_t>(step) * batch_size + slot;
  const std::uint64_t epoch = position / n;
  Rng rng(mix_seed(mix_seed(seed, stream), epoch));
  return static_cast<std::size_t>(rng.permutation(static_cast<int>(n))[position % n]);
}

namespace {

std::string format_row(int step, const losses::LossBreakdown &b) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", step, b.l_sup, b.l_mix, b.l_gt, b.q,
                b.r, b.beta, b.total);
  return buf;
}

// Keeps the header and rows whose leading step is <= last_step.
void truncate_csv(const std::filesystem::path &path, int last_step, const std::string &header) {
  std::vector<std::string> kept{header};
  std::ifstream in(path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= last_step)
      kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  for (const auto &l : kept)
    out << l << '\n';
}

std::ofstream open_csv(const std::filesystem::path &path, bool resume, int last_step, const std::string &header) {
  if (resume && std::filesystem::exists(path)) {
    truncate_csv(path, last_step, header);
  } else {
    std::ofstream fresh(path, std::ios::trunc);
    if (!fresh)
      throw IoError("cannot write " + path.string());
    fresh << header << '\n';
  }
  std::ofstream out(path, std::ios::app);
  if (!out)
    throw IoError("cannot write " + path.string());
  return out;
}

} // namespace

FitResult fit(Trainer &trainer, std::span<const LabeledImage> source, std::span<const LabeledImage> target,
              const FitOptions &options) {
  if (source.empty())
    throw std::invalid_argument("fit: source dataset is empty");
  if (target.empty())
    throw std::invalid_argument("fit: target dataset is empty");
  const TrainConfig &cfg = trainer.config();
  std::error_code ec;
  std::filesystem::create_directories(options.out_dir, ec);
  if (ec)
    throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());

  const auto ckpt_path = options.out_dir / "checkpoint.gtar";
  const bool resumed = options.resume && std::filesystem::exists(ckpt_path);
  if (resumed)
    trainer.restore(read_archive(ckpt_path));

  std::ofstream metrics = open_csv(options.out_dir / "metrics.csv", resumed, trainer.step(),
                                   "step,L_sup,L_mix,L_gt,q,r,beta,total");
  std::ofstream evals = open_csv(options.out_dir / "eval.csv", resumed, trainer.step(), "step,miou");

  auto run_eval = [&](int step) {
    const double m = eval::evaluate(trainer.student(), options.target_val).miou();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d,%.10g", step, m);
    evals << buf << '\n' << std::flush;
    if (options.verbose)
      std::cerr << "step " << step << " target mIoU " << m << '\n';
    return m;
  };

  FitResult result;
  const int b = cfg.batch_size;
  std::vector<LabeledImage> src_batch(b);
  std::vector<Image> tgt_batch(b);
  while (trainer.step() < cfg.total_steps && (!options.stop_after || result.steps_run < *options.stop_after)) {
    const int s = trainer.step();
    for (int i = 0; i < b; ++i) {
      src_batch[i] = source[sample_index(cfg.seed, kSourceOrder, s, b, i, source.size())];
      tgt_batch[i] = target[sample_index(cfg.seed, kTargetOrder, s, b, i, target.size())].image;
    }
    const losses::LossBreakdown row = trainer.train_step(src_batch, tgt_batch);
    metrics << format_row(trainer.step(), row) << '\n';
    result.history.push_back(row);
    ++result.steps_run;
    const int done = trainer.step();
    if (options.verbose && done % 100 == 0)
      std::cerr << "step " << done << " " << format_row(done, row) << '\n';
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.total_steps) {
      metrics.flush();
      write_archive(ckpt_path, trainer.checkpoint());
    }
    if (cfg.eval_interval > 0 && !options.target_val.empty() && done % cfg.eval_interval == 0 &&
        done < cfg.total_steps)
      run_eval(done);
  }
  metrics.flush();
  write_archive(ckpt_path, trainer.checkpoint());
  write_archive(options.out_dir / "model.gtar", trainer.inference_export());
  if (trainer.step() >= cfg.total_steps && !options.target_val.empty())
    result.final_miou = run_eval(trainer.step());
  return result;
}

} // namespace gtseg
