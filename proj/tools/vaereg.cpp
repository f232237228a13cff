// Command-line front end: training and the latent-space studies.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vaereg/config.hpp"
#include "vaereg/experiments.hpp"
#include "vaereg/render.hpp"
#include "vaereg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vaereg;

namespace {

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> resume;
  std::optional<std::string> mode;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::size_t> steps;
  std::size_t log_every = 100;
};

struct CommonArgs {
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& c) {
  cmd->add_option("--checkpoint", c.checkpoint, "training checkpoint")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed of the experiment sampling stream");
  cmd->add_option("--out", c.out, "output directory")->required();
}

json common_json(const CommonArgs& c) {
  return {{"checkpoint", fs::absolute(c.checkpoint).string()}, {"seed", c.seed}};
}

int run_train(const TrainArgs& a) {
  // CLI flags are folded into the document before parsing so that --mode
  // picks that mode's default weights unless the file sets them.
  json doc = json::object();
  if (!a.config.empty()) doc = TrainConfig::read_json(a.config);
  if (!doc.is_object()) throw ConfigError("config must be a flat JSON object");
  if (a.mode) doc["mode"] = *a.mode;
  if (a.seed) doc["seed"] = *a.seed;
  if (a.data) doc["data"] = *a.data;
  if (a.out) doc["out_dir"] = *a.out;
  if (a.steps) doc["max_steps"] = *a.steps;
  const auto cfg = TrainConfig::from_json(doc);

  TrainOptions opts;
  if (a.resume) {
    opts.resume = *a.resume;
    if (a.mode || a.seed || a.data)
      std::cerr << "note: --resume restores mode, seed and data from the checkpoint\n";
  }
  opts.on_step = [&a](const StepMetrics& m) {
    if (a.log_every == 0 || m.step % a.log_every != 0) return;
    std::printf("step %zu  total %.4f  l1 %.4f  kl_g %.4f  kl_i %.4f  adv %.4f  disc %.4f  active %zu\n",
                m.step, m.terms.total, m.terms.l1, m.terms.kl_global, m.terms.kl_individual,
                m.terms.adversarial, m.discriminator, m.latent.active_units);
    std::fflush(stdout);
  };
  const auto result = train(cfg, opts);
  std::printf("finished at step %zu; checkpoint %s\n", result.state->step(),
              (fs::path(result.state->config().out_dir) / "latest.ckpt").string().c_str());
  return 0;
}

int run_vary(const CommonArgs& c, VariationSpec spec) {
  auto model = load_model(c.checkpoint);
  const auto grid = vary(model, spec, c.seed);
  write_png(fs::path(c.out) / "grid.png", tile_images(grid.cells, grid.size, grid.size));
  json params = common_json(c);
  params.update({{"index", spec.index}, {"axis_a", spec.axis_a}, {"axis_b", spec.axis_b},
                 {"deltas", spec.deltas}, {"layout", "rows vary axis_b, columns vary axis_a"}});
  write_manifest(c.out, "vary", params, {"grid.png"});
  std::printf("wrote %s\n", (fs::path(c.out) / "grid.png").string().c_str());
  return 0;
}

int run_interpolate(const CommonArgs& c, InterpolationSpec spec) {
  auto model = load_model(c.checkpoint);
  const auto strip = interpolate(model, spec, c.seed);
  write_png(fs::path(c.out) / "strip.png", tile_images(strip.frames, 1, strip.frames.size()));
  json params = common_json(c);
  params.update({{"first", spec.first}, {"second", spec.second}, {"steps", spec.steps},
                 {"alphas", strip.alphas}});
  write_manifest(c.out, "interpolate", params, {"strip.png"});
  std::printf("wrote %s\n", (fs::path(c.out) / "strip.png").string().c_str());
  return 0;
}

int run_histogram(const CommonArgs& c, HistogramSpec spec) {
  auto model = load_model(c.checkpoint);
  const auto h = latent_histograms(model, spec, c.seed);
  const fs::path out = c.out;
  write_histogram_csv(out, h.counts);
  write_png(out / "histogram.png", render_histogram(h.counts, "z" + std::to_string(spec.dim_p),
                                                     "z" + std::to_string(spec.dim_q)));
  {
    std::ofstream raw(out / "samples.csv");
    raw << "z_p,z_q\n";
    for (std::size_t i = 0; i < h.zp.size(); ++i) raw << h.zp[i] << ',' << h.zq[i] << '\n';
  }
  std::uint64_t total = 0;
  for (auto v : h.counts.joint) total += v;
  json params = common_json(c);
  params.update({{"dim_p", spec.dim_p}, {"dim_q", spec.dim_q}, {"samples", spec.samples},
                 {"range", {spec.lo, spec.hi}}, {"bins", spec.bins}});
  write_manifest(out, "histogram", params,
                 {"histogram.png", "joint_counts.csv", "marginal_counts.csv", "samples.csv"},
                 {{"total_count", total}});
  std::printf("binned %llu points into %s\n", static_cast<unsigned long long>(total),
              (out / "histogram.png").string().c_str());
  return 0;
}

int run_collapse(const CommonArgs& c, std::size_t images, double threshold) {
  auto model = load_model(c.checkpoint);
  const auto r = collapse_report(model, images, c.seed, threshold);
  const fs::path out = c.out;
  fs::create_directories(out);
  std::ofstream csv(out / "collapse_report.csv");
  csv << "dim,mixture_mean,mixture_var,means_var,individual_var,active,bimodal\n";
  for (const auto& d : r.dims)
    csv << d.dim << ',' << d.mixture_mean << ',' << d.mixture_var << ',' << d.means_var << ','
        << d.individual_var << ',' << d.active << ',' << d.bimodal << '\n';
  csv.close();
  json summary{{"images", r.images},
               {"latent_dim", r.dims.size()},
               {"active_units", r.active_units},
               {"bimodal_units", r.bimodal_units},
               {"individual_var_below_threshold", r.individual_below_threshold},
               {"individual_var_min", r.individual_var_min}};
  json params = common_json(c);
  params.update({{"images", r.images}, {"threshold", threshold}});
  write_manifest(out, "collapse-report", params, {"collapse_report.csv"}, summary);
  std::printf("%zu images, d=%zu: %zu active, %zu bimodal, min mean sigma^2 %.4g\n", r.images,
              r.dims.size(), r.active_units, r.bimodal_units, r.individual_var_min);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vaereg: regularized VAE with a patch discriminator"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", ta.config, "flat JSON config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", ta.seed, "master seed");
  train_cmd->add_option("--resume", ta.resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--mode", ta.mode, "proposed | standard_vae | beta_vae");
  train_cmd->add_option("--data", ta.data, "image directory or 'synthetic'");
  train_cmd->add_option("--out", ta.out, "output directory");
  train_cmd->add_option("--steps", ta.steps, "max_steps override");
  train_cmd->add_option("--log-every", ta.log_every, "print every N steps (0 = quiet)");

  CommonArgs vc;
  VariationSpec vs;
  auto* vary_cmd = app.add_subcommand("vary", "latent variation grid");
  add_common(vary_cmd, vc);
  vary_cmd->add_option("--index", vs.index, "test image index");
  vary_cmd->add_option("--axis-a", vs.axis_a, "first latent entry");
  vary_cmd->add_option("--axis-b", vs.axis_b, "second latent entry");
  vary_cmd->add_option("--deltas", vs.deltas, "offsets in posterior standard deviations")->delimiter(',');

  CommonArgs ic;
  InterpolationSpec is;
  auto* interp_cmd = app.add_subcommand("interpolate", "convex interpolation strip");
  add_common(interp_cmd, ic);
  interp_cmd->add_option("--first", is.first, "first test image index");
  interp_cmd->add_option("--second", is.second, "second test image index");
  interp_cmd->add_option("--steps", is.steps, "number of frames (>= 2)");

  CommonArgs hc;
  HistogramSpec hs;
  std::vector<double> range;
  auto* hist_cmd = app.add_subcommand("histogram", "joint and marginal latent histograms");
  add_common(hist_cmd, hc);
  hist_cmd->add_option("--dim-p", hs.dim_p, "first latent entry");
  hist_cmd->add_option("--dim-q", hs.dim_q, "second latent entry");
  hist_cmd->add_option("--samples", hs.samples, "test points (>= 100)");
  hist_cmd->add_option("--bins", hs.bins, "bins per axis");
  hist_cmd->add_option("--range", range, "lo,hi")->delimiter(',')->expected(2);

  CommonArgs cc;
  std::size_t images = 0;
  double threshold = kActiveUnitThreshold;
  auto* collapse_cmd = app.add_subcommand("collapse-report", "per-dimension collapse diagnostics");
  add_common(collapse_cmd, cc);
  collapse_cmd->add_option("--images", images, "test images to encode (0 = all)");
  collapse_cmd->add_option("--threshold", threshold, "active-unit variance threshold");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(ta);
    if (*vary_cmd) return run_vary(vc, vs);
    if (*interp_cmd) return run_interpolate(ic, is);
    if (*hist_cmd) {
      if (range.size() == 2) {
        hs.lo = range[0];
        hs.hi = range[1];
      }
      return run_histogram(hc, hs);
    }
    if (*collapse_cmd) return run_collapse(cc, images, threshold);
  } catch (const vaereg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
