// Command-line front end: degrade, train, infer, eval, bench, analyze.

#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mdbn/checkpoint.hpp"
#include "mdbn/data.hpp"
#include "mdbn/evaluator.hpp"
#include "mdbn/image.hpp"
#include "mdbn/spectral.hpp"
#include "mdbn/trainer.hpp"
#include "mdbn/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct Shared {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int threads = 0;
  std::vector<std::string> argv;
  std::string started;
};

void write_manifest_json(const Shared& s, const std::string& command, json effective) {
  json j;
  j["command"] = command;
  j["argv"] = s.argv;
  j["git_describe"] = mdbn::git_describe();
  j["seed"] = s.seed ? json(*s.seed) : json();
  j["threads"] = s.threads;
  j["started"] = s.started;
  j["finished"] = utc_now();
  j["effective"] = std::move(effective);
  fs::create_directories(s.out);
  std::ofstream out(fs::path(s.out) / ("run_" + command + ".json"));
  out << j.dump(2) << "\n";
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      for (const fs::path& p : mdbn::build_manifest(in)) out.push_back(p);
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

mdbn::ImageBuffer read_rgb(const fs::path& path) {
  mdbn::ImageBuffer img = mdbn::png_read(path);
  if (img.planes == 1) {
    std::cerr << "warning: " << path.string() << " is grayscale; expanding to 3 channels\n";
    img = mdbn::gray_to_rgb(img);
  }
  return img;
}

mdbn::Model<float> load_model(const std::string& path) {
  return mdbn::model_from_checkpoint(mdbn::read_checkpoint(path));
}

// Set data locations by name: $MDBN_DATA_DIR/<name>, then data/<name>.
fs::path resolve_set(const std::string& name) {
  if (const char* root = std::getenv("MDBN_DATA_DIR")) {
    if (fs::is_directory(fs::path(root) / name)) return fs::path(root) / name;
  }
  return fs::path("data") / name;
}

// --- degrade --------------------------------------------------------------------

struct DegradeArgs {
  std::string hr_dir;
  std::size_t scale = 2;
};

int run_degrade(const Shared& s, const DegradeArgs& a) {
  const auto files = mdbn::build_manifest(a.hr_dir);
  if (files.empty()) throw std::runtime_error("no PNG images in " + a.hr_dir);
  fs::create_directories(s.out);
  std::size_t ok = 0;
  json failed = json::array();
  for (const fs::path& f : files) {
    try {
      const mdbn::ImageBuffer hr = read_rgb(f);
      if (hr.width % a.scale != 0 || hr.height % a.scale != 0) {
        const mdbn::ImageBuffer c = mdbn::crop_to_multiple(hr, a.scale);
        std::cerr << "note: " << f.filename().string() << " cropped " << hr.width << "x" << hr.height
                  << " -> " << c.width << "x" << c.height << "\n";
      }
      mdbn::png_write(fs::path(s.out) / f.filename(), mdbn::degrade(hr, a.scale));
      ++ok;
    } catch (const std::exception& e) {
      std::cerr << "error: " << f.string() << ": " << e.what() << "\n";
      failed.push_back({{"file", f.string()}, {"error", e.what()}});
    }
  }
  write_manifest_json(s, "degrade", {{"hr_dir", a.hr_dir}, {"scale", a.scale}, {"written", ok},
                                     {"failed", failed}});
  std::cout << "wrote " << ok << " LR images to " << s.out << "\n";
  if (ok == 0) return 1;
  return failed.empty() ? 0 : 2;
}

// --- train ----------------------------------------------------------------------

struct TrainArgs {
  std::map<std::string, std::string> overrides;
  std::vector<std::string> set;
  std::string resume;
  std::optional<std::uint64_t> stop_at;
};

int run_train(const Shared& s, TrainArgs a) {
  std::map<std::string, std::string> values;
  if (!s.config.empty()) values = mdbn::read_key_value_file(s.config);
  for (const std::string& kv : a.set) {
    const auto parsed = mdbn::parse_key_values(kv, "--set");
    for (const auto& [k, v] : parsed) values[k] = v;
  }
  for (const auto& [k, v] : a.overrides) values[k] = v;
  if (s.seed) values["seed"] = std::to_string(*s.seed);

  mdbn::TrainConfig cfg;
  mdbn::apply_config(cfg, values);
  std::vector<fs::path> manifest;
  if (!cfg.manifest.empty()) {
    manifest = mdbn::read_manifest(cfg.manifest);
  } else if (!cfg.train_dir.empty()) {
    manifest = mdbn::build_manifest(cfg.train_dir);
  } else {
    throw mdbn::ConfigError("set train_dir or manifest");
  }
  const auto pairs = mdbn::load_pairs(manifest, cfg.model.scale);
  fs::create_directories(s.out);
  mdbn::write_manifest(fs::path(s.out) / "manifest.txt", manifest);

  mdbn::Model<float> model(cfg.model);
  mdbn::TrainOptions opts;
  opts.out_dir = s.out;
  if (!a.resume.empty()) opts.resume = a.resume;
  opts.stop_at = a.stop_at;
  const std::uint64_t every = std::max<std::uint64_t>(1, cfg.schedule.total_iters / 20);
  opts.on_step = [&](const mdbn::LossRecord& r) {
    if ((r.iter + 1) % every == 0) {
      std::cout << "iter " << r.iter + 1 << "/" << cfg.schedule.total_iters << " lr " << r.lr
                << " loss " << r.loss << std::endl;
    }
  };
  std::cout << "training " << mdbn::param_count(cfg.model) << " parameters on " << pairs.size()
            << " images\n";
  const mdbn::TrainResult res = mdbn::train_loop(model, pairs, cfg, opts);

  json effective;
  for (const auto& [k, v] : mdbn::to_key_values(cfg)) effective[k] = v;
  effective["param_count"] = mdbn::param_count(cfg.model);
  effective["start_iter"] = res.start_iter;
  effective["end_iter"] = res.end_iter;
  effective["resume"] = a.resume;
  effective["final_checkpoint"] = res.final_checkpoint.string();
  write_manifest_json(s, "train", effective);
  std::cout << "checkpoint " << res.final_checkpoint.string() << "\n";
  return 0;
}

// --- infer ----------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::optional<std::size_t> scale;
};

int run_infer(const Shared& s, const InferArgs& a) {
  const mdbn::Model<float> model = load_model(a.checkpoint);
  const std::size_t r = model.config().scale;
  if (a.scale && *a.scale != r) {
    throw std::invalid_argument("checkpoint is x" + std::to_string(r) + " but x" +
                                std::to_string(*a.scale) + " output was requested");
  }
  fs::create_directories(s.out);
  json written = json::array();
  for (const fs::path& in : expand_inputs(a.inputs)) {
    const mdbn::ImageBuffer sr = mdbn::super_resolve(model, read_rgb(in));
    const fs::path out = fs::path(s.out) / (in.stem().string() + "_x" + std::to_string(r) + ".png");
    mdbn::png_write(out, sr);
    written.push_back(out.string());
  }
  if (written.empty()) throw std::runtime_error("no input images");
  write_manifest_json(s, "infer", {{"checkpoint", a.checkpoint}, {"scale", r}, {"outputs", written}});
  return 0;
}

// --- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string mode = "bicubic";
  std::string set;
  std::string hr_dir;
  std::string lr_dir;
  std::string checkpoint;
  std::size_t scale = 2;
  std::optional<std::size_t> crop;
  bool sweep = false;
  bool save_sr = false;
};

int run_eval(const Shared& s, const EvalArgs& a) {
  mdbn::BenchOptions o;
  o.mode = mdbn::eval_mode_from_string(a.mode);
  o.scale = a.scale;
  o.crop = a.crop;
  o.hr_dir = !a.hr_dir.empty() ? fs::path(a.hr_dir) : resolve_set(a.set);
  if (!a.lr_dir.empty()) o.lr_dir = a.lr_dir;
  if (a.save_sr) o.sr_out_dir = fs::path(s.out) / "sr";
  std::optional<mdbn::Model<float>> model;
  if (o.mode == mdbn::EvalMode::model) {
    if (a.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required in model mode");
    model = load_model(a.checkpoint);
    o.model = &*model;
  }
  const mdbn::EvalReport report = mdbn::bench_dir(o);
  fs::create_directories(s.out);
  mdbn::write_report_csv(fs::path(s.out) / "report.csv", report);
  std::cout << mdbn::report_csv(report);
  json effective = {{"mode", a.mode}, {"hr_dir", o.hr_dir.string()}, {"lr_dir", a.lr_dir},
                    {"scale", a.scale}, {"crop", report.protocol.crop},
                    {"checkpoint", a.checkpoint}, {"mean_psnr", report.mean_psnr()},
                    {"mean_ssim", report.mean_ssim()}};
  if (a.sweep) {
    json rows = json::array();
    for (const auto& row : mdbn::crop_sweep(o, {a.scale, a.scale + 2})) {
      std::cout << "crop " << row.crop << ": psnr " << row.mean_psnr << " ssim " << row.mean_ssim << "\n";
      rows.push_back({{"crop", row.crop}, {"mean_psnr", row.mean_psnr}, {"mean_ssim", row.mean_ssim}});
    }
    effective["crop_sweep"] = rows;
  }
  write_manifest_json(s, "eval", effective);
  return report.skipped.empty() ? 0 : 2;
}

// --- bench ----------------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint;
  std::size_t width = 320;
  std::size_t height = 180;
  std::size_t count = 50;
  std::size_t warmup = 3;
  std::size_t scale = 4;
  std::size_t channels = 64;
  std::size_t n_rmdb = 6;
  std::string variant = "two_3x3";
};

int run_bench(const Shared& s, const BenchArgs& a) {
  mdbn::Model<float> model;
  if (!a.checkpoint.empty()) {
    model = load_model(a.checkpoint);
  } else {
    mdbn::ModelConfig c;
    c.scale = static_cast<std::uint32_t>(a.scale);
    c.channels = static_cast<std::uint32_t>(a.channels);
    c.n_rmdb = static_cast<std::uint32_t>(a.n_rmdb);
    c.hf_branch = mdbn::hf_branch_from_string(a.variant);
    c.seed = s.seed.value_or(0);
    model = mdbn::Model<float>(c);
  }
  mdbn::TimingOptions t;
  t.width = a.width;
  t.height = a.height;
  t.count = a.count;
  t.warmup = a.warmup;
  t.seed = s.seed.value_or(0);
  const mdbn::TimingResult r = mdbn::time_inference(model, t);
  const std::string text = mdbn::timing_json(r);
  fs::create_directories(s.out);
  std::ofstream(fs::path(s.out) / "timing.json") << text;
  std::cout << text;
  write_manifest_json(s, "bench", {{"checkpoint", a.checkpoint},
                                   {"channels", model.config().channels},
                                   {"n_rmdb", model.config().n_rmdb},
                                   {"timing", json::parse(text)}});
  return 0;
}

// --- analyze --------------------------------------------------------------------

struct AnalyzeArgs {
  std::string checkpoint;
  std::string compare;
  std::string image;
  std::string tap = "2:1";
};

int run_analyze(const Shared& s, const AnalyzeArgs& a) {
  const mdbn::Model<float> model = load_model(a.checkpoint);
  std::optional<mdbn::Model<float>> variant;
  if (!a.compare.empty()) variant = load_model(a.compare);
  mdbn::SpectrumReportOptions o;
  o.site = mdbn::parse_tap_site(a.tap);
  o.out_dir = s.out;
  o.image_id = fs::path(a.image).filename().string();
  o.model_id = fs::path(a.checkpoint).filename().string();
  if (variant) o.variant_id = fs::path(a.compare).filename().string();
  const std::string summary =
      mdbn::branch_spectrum_report(model, read_rgb(a.image), o, variant ? &*variant : nullptr);
  std::cout << summary;
  write_manifest_json(s, "analyze", {{"checkpoint", a.checkpoint}, {"compare", a.compare},
                                     {"image", a.image}, {"tap", a.tap},
                                     {"summary", json::parse(summary)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MDBN super-resolution toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Shared shared;
  shared.argv.assign(argv, argv + argc);
  shared.started = utc_now();
  app.add_option("--config", shared.config, "key=value configuration file");
  app.add_option("--seed", shared.seed, "seed for all randomness");
  app.add_option("--out", shared.out, "output directory")->capture_default_str();
  app.add_option("--threads", shared.threads, "OpenMP threads (0: runtime default)");

  DegradeArgs degrade;
  auto* c_degrade = app.add_subcommand("degrade", "bicubic-downscale a directory of HR PNGs");
  c_degrade->add_option("--hr-dir,hr_dir", degrade.hr_dir)->required();
  c_degrade->add_option("--scale", degrade.scale)->check(CLI::Range(1, 4));

  TrainArgs train;
  std::map<std::string, std::string>& ov = train.overrides;
  auto* c_train = app.add_subcommand("train", "train a model");
  auto flag_to_key = [&](const char* flag, const char* key, const char* help) {
    c_train->add_option_function<std::string>(flag, [&ov, key](const std::string& v) { ov[key] = v; }, help);
  };
  flag_to_key("--iters", "iters", "total iterations (schedule length)");
  flag_to_key("--variant", "hf_branch", "two_3x3 | single_5x5");
  flag_to_key("--activation", "activation", "gelu | leaky_relu");
  flag_to_key("--train-dir", "train_dir", "directory of HR PNGs");
  flag_to_key("--manifest", "manifest", "file listing HR PNG paths");
  flag_to_key("--scale", "scale", "upscaling factor");
  flag_to_key("--channels", "channels", "feature channels");
  flag_to_key("--n-rmdb", "n_rmdb", "number of residual blocks");
  flag_to_key("--patch", "patch", "LR patch size");
  flag_to_key("--batch", "batch", "batch size");
  flag_to_key("--workers", "workers", "background batch workers");
  flag_to_key("--checkpoint-interval", "checkpoint_interval", "iterations between checkpoints");
  c_train->add_option("--set", train.set, "extra key=value overrides");
  c_train->add_option("--resume", train.resume, "checkpoint to resume from");
  c_train->add_option("--stop-at", train.stop_at, "stop before this iteration");

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "super-resolve LR images");
  c_infer->add_option("--checkpoint", infer.checkpoint)->required();
  c_infer->add_option("--input,inputs", infer.inputs, "LR PNG files or directories")->required();
  c_infer->add_option("--scale", infer.scale, "expected scale; must match the checkpoint");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM on the Y channel");
  c_eval->add_option("--mode", eval.mode)->check(CLI::IsMember({"bicubic", "model"}));
  auto* set_opt = c_eval->add_option("--set", eval.set, "dataset name under $MDBN_DATA_DIR or data/");
  c_eval->add_option("--hr-dir", eval.hr_dir)->excludes(set_opt);
  c_eval->add_option("--lr-dir", eval.lr_dir, "pre-made LR images (default: synthesize)");
  c_eval->add_option("--checkpoint", eval.checkpoint);
  c_eval->add_option("--scale", eval.scale)->check(CLI::Range(1, 4));
  c_eval->add_option("--crop", eval.crop, "border crop in pixels (default: scale)");
  c_eval->add_flag("--sweep", eval.sweep, "also report crop in {scale, scale+2}");
  c_eval->add_flag("--save-sr", eval.save_sr, "write SR PNGs under <out>/sr");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "single-threaded inference timing");
  c_bench->add_option("--checkpoint", bench.checkpoint, "model to time (default: fresh model)");
  c_bench->add_option("--width", bench.width);
  c_bench->add_option("--height", bench.height);
  c_bench->add_option("--count", bench.count);
  c_bench->add_option("--warmup", bench.warmup);
  c_bench->add_option("--scale", bench.scale);
  c_bench->add_option("--channels", bench.channels);
  c_bench->add_option("--n-rmdb", bench.n_rmdb);
  c_bench->add_option("--variant", bench.variant);

  AnalyzeArgs analyze;
  auto* c_analyze = app.add_subcommand("analyze", "branch feature spectra");
  c_analyze->add_option("--checkpoint", analyze.checkpoint)->required();
  c_analyze->add_option("--image", analyze.image, "LR PNG")->required();
  c_analyze->add_option("--tap", analyze.tap, "RMDB:MDBM site")->capture_default_str();
  c_analyze->add_option("--compare", analyze.compare, "second checkpoint (branch variant)");

  CLI11_PARSE(app, argc, argv);
  if (shared.threads > 0) omp_set_num_threads(shared.threads);
  try {
    if (*c_degrade) return run_degrade(shared, degrade);
    if (*c_train) return run_train(shared, train);
    if (*c_infer) return run_infer(shared, infer);
    if (*c_eval) {
      if (eval.set.empty() && eval.hr_dir.empty()) throw std::invalid_argument("give --set or --hr-dir");
      return run_eval(shared, eval);
    }
    if (*c_bench) return run_bench(shared, bench);
    if (*c_analyze) return run_analyze(shared, analyze);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
