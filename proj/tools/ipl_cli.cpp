#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ipl/bench.hpp"
#include "ipl/cache.hpp"
#include "ipl/image_io.hpp"
#include "ipl/metrics.hpp"
#include "ipl/model.hpp"
#include "ipl/synth.hpp"
#include "ipl/train.hpp"
#include "ipl/weights_io.hpp"

namespace {

namespace fs = std::filesystem;

struct FuseArgs {
  std::string low, mid, high, weights, out;
  bool no_cache = false;
  std::uint64_t cache_bytes = 512ull << 20;
  int q_bits = 8;
  int chunk_w = 0, chunk_h = 0, chunk_c = 0;  // 0 = keep trained value
  bool stats = false;
};

int run_fuse(const FuseArgs& a) {
  ipl::LoadedWeights lw = ipl::load_weights(a.weights);
  ipl::ModelConfig cfg = lw.config;
  cfg.cache_enabled = !a.no_cache;
  cfg.cache_bytes = a.cache_bytes;
  cfg.q_bits = a.q_bits;
  if (a.chunk_w > 0) cfg.chunk_w = a.chunk_w;
  if (a.chunk_h > 0) cfg.chunk_h = a.chunk_h;
  if (a.chunk_c > 0) {
    const int trained_block = lw.config.channel_block();
    cfg.chunk_c = a.chunk_c;
    if (cfg.channel_block() != trained_block) {
      throw ipl::IncompatibilityError(
          "--chunk-c " + std::to_string(a.chunk_c) +
          " is incompatible with the trained channel block size " +
          std::to_string(trained_block) +
          " (channel-branch weights are shaped to the block)");
    }
  }
  cfg.validate();

  ipl::ExposureTriplet triplet;
  triplet.x1 = ipl::load_image(a.low);
  triplet.x2 = ipl::load_image(a.mid);
  triplet.x3 = ipl::load_image(a.high);

  ipl::AttentionCache cache(cfg.cache_enabled ? cfg.cache_bytes : 0, cfg.q_min(),
                            cfg.q_max());
  ipl::ForwardStats fstats;
  ipl::Tensor3 fused = ipl::fuse_triplet(triplet, lw.weights, cfg, &cache, &fstats);
  ipl::save_image(a.out, fused);
  if (a.stats) {
    std::printf("%s\n", cache.stats().line().c_str());
    std::printf("lfe_evals=%llu\n",
                static_cast<unsigned long long>(fstats.lfe_evals));
  }
  return 0;
}

struct SynthArgs {
  std::string out_dir;
  int count = 1;
  std::string size = "256x256";
  std::uint32_t seed = 0;
  std::string ev;
};

int run_synth(const SynthArgs& a) {
  int w = 0, h = 0;
  if (std::sscanf(a.size.c_str(), "%dx%d", &w, &h) != 2) {
    throw ipl::ValueError("--size must look like 256x256, got " + a.size);
  }
  ipl::SceneSpec spec;
  spec.w = w;
  spec.h = h;
  if (!a.ev.empty()) {
    float e0, e1, e2;
    if (std::sscanf(a.ev.c_str(), "%f,%f,%f", &e0, &e1, &e2) != 3) {
      throw ipl::ValueError("--ev must be three comma-separated stops");
    }
    spec.ev_offsets = {e0, e1, e2};
  }
  fs::create_directories(a.out_dir);
  for (int n = 0; n < a.count; ++n) {
    spec.seed = a.seed + static_cast<std::uint32_t>(n);
    const ipl::LabeledTriplet t = ipl::synth_triplet(spec);
    const std::string base = a.out_dir + "/scene_" + std::to_string(n) + "_";
    ipl::save_image(base + "low.ppm", t.input.x1);
    ipl::save_image(base + "mid.ppm", t.input.x2);
    ipl::save_image(base + "high.ppm", t.input.x3);
    ipl::save_image(base + "gt.ppm", t.gt);
  }
  return 0;
}

std::vector<ipl::LabeledTriplet> load_scene_dir(const std::string& dir,
                                                bool need_gt) {
  std::vector<ipl::LabeledTriplet> scenes;
  for (int n = 0;; ++n) {
    const std::string base = dir + "/scene_" + std::to_string(n) + "_";
    if (!fs::exists(base + "low.ppm")) break;
    ipl::LabeledTriplet t;
    t.input.x1 = ipl::load_image(base + "low.ppm");
    t.input.x2 = ipl::load_image(base + "mid.ppm");
    t.input.x3 = ipl::load_image(base + "high.ppm");
    if (need_gt || fs::exists(base + "gt.ppm")) {
      t.gt = ipl::load_image(base + "gt.ppm");
    }
    scenes.push_back(std::move(t));
  }
  if (scenes.empty()) {
    throw ipl::IoError("no scene_<n>_low.ppm files under " + dir);
  }
  return scenes;
}

struct TrainArgs {
  std::string data_dir, out_weights, loss_csv;
  int steps = 200;
  float lr = 2e-4f;
  std::uint32_t seed = 0;
  int fibs = 1;
  int channels = 8;
  int batch = 4;
};

int run_train(const TrainArgs& a) {
  const std::vector<ipl::LabeledTriplet> dataset = load_scene_dir(a.data_dir, true);
  ipl::ModelConfig mcfg;
  mcfg.num_fibs = a.fibs;
  mcfg.channels = a.channels;
  mcfg.cache_enabled = false;
  mcfg.validate();
  ipl::TrainConfig tcfg;
  tcfg.steps = a.steps;
  tcfg.learning_rate = a.lr;
  tcfg.seed = a.seed;
  tcfg.batch_size = a.batch;
  const ipl::TrainResult result = ipl::train_loop(dataset, mcfg, tcfg);
  ipl::save_weights(a.out_weights, result.weights, mcfg);
  if (!a.loss_csv.empty()) {
    std::string csv = "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < result.losses.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.8f\n", i, result.losses[i]);
      csv += buf;
    }
    ipl::detail::atomic_write_file(a.loss_csv,
                                   reinterpret_cast<const std::uint8_t*>(csv.data()),
                                   csv.size());
  }
  std::printf("trained %d steps, final_loss=%.6f, weights=%s\n", a.steps,
              result.losses.empty() ? 0.f : result.losses.back(),
              a.out_weights.c_str());
  return 0;
}

int run_metrics(const std::string& ref, const std::string& test) {
  const ipl::Tensor3 a = ipl::load_image(ref);
  const ipl::Tensor3 b = ipl::load_image(test);
  std::printf("psnr=%.4f ssim=%.6f\n", ipl::psnr(a, b), ipl::ssim(a, b));
  return 0;
}

struct BenchArgs {
  std::string data_dir, weights, csv;
  int repeats = 5;
  std::uint64_t cache_bytes = 512ull << 20;
};

int run_bench(const BenchArgs& a) {
  const ipl::LoadedWeights lw = ipl::load_weights(a.weights);
  const std::vector<ipl::LabeledTriplet> scenes = load_scene_dir(a.data_dir, false);
  std::vector<ipl::ExposureTriplet> inputs;
  inputs.reserve(scenes.size());
  for (const auto& s : scenes) inputs.push_back(s.input);
  ipl::BenchSettings settings;
  settings.repeats = a.repeats;
  settings.cache_bytes = a.cache_bytes;
  const ipl::BenchReport report = ipl::bench_run(lw.weights, lw.config, inputs,
                                                 settings);
  std::printf("%s", report.text().c_str());
  if (!a.csv.empty()) {
    const std::string csv = report.csv();
    ipl::detail::atomic_write_file(a.csv,
                                   reinterpret_cast<const std::uint8_t*>(csv.data()),
                                   csv.size());
  }
  return 0;
}

int run_gradcheck(std::uint32_t seed) {
  const double err = ipl::grad_check_model(seed);
  std::printf("max_rel_error=%.6e\n", err);
  return err <= 1e-3 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IPL multi-exposure fusion engine"};
  app.require_subcommand(1);

  FuseArgs fuse;
  CLI::App* cmd_fuse = app.add_subcommand("fuse", "fuse one exposure triplet");
  cmd_fuse->add_option("--low", fuse.low, "low-exposure frame")->required();
  cmd_fuse->add_option("--mid", fuse.mid, "mid-exposure (reference) frame")->required();
  cmd_fuse->add_option("--high", fuse.high, "high-exposure frame")->required();
  cmd_fuse->add_option("--weights", fuse.weights, "weights file")->required();
  cmd_fuse->add_option("--out", fuse.out, "output image")->required();
  cmd_fuse->add_flag("--no-cache", fuse.no_cache, "disable the attention cache");
  cmd_fuse->add_option("--cache-bytes", fuse.cache_bytes, "cache byte budget");
  cmd_fuse->add_option("--q-bits", fuse.q_bits, "quantization bit width (1..8)");
  cmd_fuse->add_option("--chunk-w", fuse.chunk_w, "width chunk override");
  cmd_fuse->add_option("--chunk-h", fuse.chunk_h, "height chunk override");
  cmd_fuse->add_option("--chunk-c", fuse.chunk_c, "channel chunk override");
  cmd_fuse->add_flag("--stats", fuse.stats, "print cache stats");

  SynthArgs synth;
  CLI::App* cmd_synth = app.add_subcommand("synth", "generate synthetic scenes");
  cmd_synth->add_option("--out-dir", synth.out_dir, "output directory")->required();
  cmd_synth->add_option("--count", synth.count, "number of scenes")->required();
  cmd_synth->add_option("--size", synth.size, "scene size WxH")->required();
  cmd_synth->add_option("--seed", synth.seed, "base seed")->required();
  cmd_synth->add_option("--ev", synth.ev, "ev offsets a,b,c");

  TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand("train", "train on a scene directory");
  cmd_train->add_option("--data-dir", train.data_dir, "scene directory")->required();
  cmd_train->add_option("--out-weights", train.out_weights, "weights output")->required();
  cmd_train->add_option("--steps", train.steps, "optimizer steps");
  cmd_train->add_option("--lr", train.lr, "learning rate");
  cmd_train->add_option("--seed", train.seed, "seed");
  cmd_train->add_option("--fibs", train.fibs, "number of FIBs");
  cmd_train->add_option("--channels", train.channels, "feature channels");
  cmd_train->add_option("--batch", train.batch, "batch size");
  cmd_train->add_option("--loss-csv", train.loss_csv, "loss curve CSV path");

  std::string metrics_ref, metrics_test;
  CLI::App* cmd_metrics = app.add_subcommand("metrics", "psnr/ssim of two images");
  cmd_metrics->add_option("--ref", metrics_ref, "reference image")->required();
  cmd_metrics->add_option("--test", metrics_test, "test image")->required();

  BenchArgs bench;
  CLI::App* cmd_bench = app.add_subcommand("bench", "cache speedup benchmark");
  cmd_bench->add_option("--data-dir", bench.data_dir, "scene directory")->required();
  cmd_bench->add_option("--weights", bench.weights, "weights file")->required();
  cmd_bench->add_option("--repeats", bench.repeats, "measured repeats per mode");
  cmd_bench->add_option("--cache-bytes", bench.cache_bytes, "cache byte budget");
  cmd_bench->add_option("--csv", bench.csv, "CSV output path");

  std::uint32_t gradcheck_seed = 0;
  CLI::App* cmd_gradcheck =
      app.add_subcommand("gradcheck", "verify model gradients");
  cmd_gradcheck->add_option("--seed", gradcheck_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "%s\n", app.help().c_str());
    return 1;
  }

  try {
    if (cmd_fuse->parsed()) return run_fuse(fuse);
    if (cmd_synth->parsed()) return run_synth(synth);
    if (cmd_train->parsed()) return run_train(train);
    if (cmd_metrics->parsed()) return run_metrics(metrics_ref, metrics_test);
    if (cmd_bench->parsed()) return run_bench(bench);
    if (cmd_gradcheck->parsed()) return run_gradcheck(gradcheck_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
