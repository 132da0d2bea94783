// cloak: command-line driver for the cloak design pipeline.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
// Errors are printed to stderr as one JSON object per line.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "cloak/feedback_loop.hpp"

namespace {

using namespace cloak;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log_line(const std::string& s) { std::cerr << s << std::endl; }

RunConfig config_from(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

/// `spec` is either a dataset file (record `record`) or an index into the
/// seeded initial-design sequence.
QuadrantImage resolve_image(const std::string& spec, std::size_t record, const RunConfig& cfg) {
  if (fs::exists(spec)) {
    const auto data = load_dataset(spec);
    if (record >= data.size())
      throw UsageError(spec + " holds " + std::to_string(data.size()) + " records; --record out of range");
    return data[record].image;
  }
  std::size_t pos = 0;
  unsigned long long index = 0;
  try {
    index = std::stoull(spec, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != spec.size()) throw UsageError("--image: no such file and not an index: " + spec);
  return initial_design(cfg, index);
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

int cmd_gen_dataset(const RunConfig& cfg, const std::string& out, std::optional<std::size_t> count) {
  RunConfig c = cfg;
  if (count) c.loop.initial_dataset_size = *count;
  const auto data = build_initial_dataset(c, out, log_line);
  const double baseline = baseline_psi(c.domain, c.source, c.grid_resolution).psi;
  double lo = data.front().psi_r;
  for (const auto& r : data) lo = std::min(lo, r.psi_r);
  print_json({{"dataset", out}, {"records", data.size()}, {"baseline_psi", baseline}, {"min_ratio", lo / baseline}});
  return 0;
}

int cmd_simulate(const RunConfig& cfg, const std::string& image, std::size_t record, const std::string& fields) {
  const auto q = resolve_image(image, record, cfg);
  const auto sol = solve_scattered(rasterize(mirror_expand(q), cfg.domain, cfg.grid_resolution), cfg.source, cfg.solver);
  const auto res = compute_psi(sol, default_integration_radius(cfg.domain));
  const double baseline = baseline_psi(cfg.domain, cfg.source, cfg.grid_resolution).psi;
  if (!fields.empty()) plot::write_png(fields, plot::field_maps(sol, cfg.domain.r_shell * 2.0));
  print_json({{"psi_r", res.psi},
              {"baseline_psi", baseline},
              {"cloaking_ratio", res.psi / baseline},
              {"filled_pixels", q.count()},
              {"residual", sol.residual}});
  return 0;
}

int cmd_baseline(const RunConfig& cfg) {
  const auto res = baseline_psi(cfg.domain, cfg.source, cfg.grid_resolution);
  const double ref = analytic_pec_reference(cfg.domain, cfg.source, default_series_terms(cfg.domain));
  print_json({{"psi_fdfd", res.psi},
              {"psi_analytic", ref},
              {"relative_deviation", std::abs(res.psi - ref) / ref},
              {"grid_resolution", cfg.grid_resolution}});
  return 0;
}

int cmd_train_forward(const RunConfig& cfg, const std::string& dataset, const std::string& out,
                      const std::string& history, std::optional<int> epochs) {
  const auto data = load_dataset(dataset);
  std::vector<LabeledSample> samples;
  for (const auto& r : data)
    if (std::isfinite(r.psi_r) && r.psi_r > 0.0) samples.push_back({r.image, r.psi_r});
  if (samples.size() < 2) throw ConfigError("train-forward: need at least two simulated records in " + dataset);
  ForwardNet<float> net(cfg.forward, mix_seed(cfg.seed, 0xf0));
  auto tc = forward_train_config(cfg, epochs.value_or(cfg.loop.initial_forward_epochs), mix_seed(cfg.seed, 0x5e));
  const auto hist = train_forward(net, samples, tc);
  save_forward_net(out, net);
  if (!history.empty()) write_forward_history_csv(history, hist);
  json j{{"checkpoint", out}, {"samples", samples.size()}, {"epochs", hist.size()}};
  if (!hist.empty()) {
    j["train_mse"] = hist.back().train_mse;
    j["val_mse"] = hist.back().val_mse;
  }
  print_json(j);
  return 0;
}

int cmd_loop(const std::string& config, const std::string& resume, const std::optional<std::uint64_t>& seed) {
  LoopResult res;
  if (!resume.empty()) {
    if (!config.empty() || seed) throw UsageError("loop: --resume reads the run's own config.toml");
    res = resume_loop(resume, log_line);
  } else {
    res = run_loop(config_from(config, seed), log_line);
  }
  print_json({{"run_dir", res.run_dir.string()},
              {"generations", res.history.size()},
              {"baseline_psi", res.baseline_psi},
              {"best_psi_r", res.best_psi_r},
              {"best_ratio", res.best_psi_r / res.baseline_psi},
              {"stop_reason", res.stop_reason}});
  return 0;
}

std::vector<GenerationRecord> run_records(const fs::path& run) {
  std::vector<GenerationRecord> out;
  for (int k = 1; fs::exists(run / generation_dir_name(k) / "record.json"); ++k)
    out.push_back(record_from_json(read_json(run / generation_dir_name(k) / "record.json")));
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(is, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

int cmd_plot(const fs::path& run, const std::string& kind, const std::string& out, int generation,
             const std::string& image, std::size_t record) {
  if (!fs::is_directory(run)) throw UsageError("plot: no run directory " + run.string());
  const auto records = run_records(run);
  const int gen = generation > 0 ? generation : static_cast<int>(records.size());
  const fs::path gdir = run / generation_dir_name(gen);
  const std::string palette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  if (kind == "fields") {
    const RunConfig cfg = load_run_config(run / "config.toml");
    QuadrantImage q;
    if (!image.empty()) {
      q = resolve_image(image, record, cfg);
    } else if (fs::exists(run / "best.clk")) {
      q = load_dataset(run / "best.clk").front().image;
    } else {
      throw UsageError("plot fields: run has no best.clk yet; pass --image");
    }
    const auto sol =
        solve_scattered(rasterize(mirror_expand(q), cfg.domain, cfg.grid_resolution), cfg.source, cfg.solver);
    plot::write_png(out, plot::field_maps(sol, cfg.domain.r_shell * 2.0));
  } else if (kind == "losses") {
    if (gen < 1) throw UsageError("plot losses: run has no finished generation");
    const auto rows = read_csv(gdir / "gan_losses.csv");
    plot::LineChart chart{"GAN losses, generation " + std::to_string(gen), "epoch", "loss", false, {}};
    const char* names[] = {"L_d", "L_g", "L_f", "L_t"};
    for (int s = 0; s < 4; ++s) {
      plot::Series series{names[s], palette[s], {}, {}};
      for (std::size_t i = 1; i < rows.size(); ++i) {
        series.x.push_back(std::stod(rows[i][0]));
        series.y.push_back(std::stod(rows[i][s + 1]));
      }
      chart.series.push_back(std::move(series));
    }
    plot::write_svg(out, chart);
  } else if (kind == "progress") {
    if (records.empty()) throw UsageError("plot progress: run has no finished generation");
    plot::LineChart chart{"Scattering per generation", "generation", "psi_r (W/m)", true, {}};
    plot::Series lo{"min psi_r", palette[0], {}, {}}, mean{"mean psi_r", palette[1], {}, {}},
        best{"best so far", palette[2], {}, {}}, base{"bare object", "#7f7f7f", {}, {}};
    for (const auto& r : records) {
      const double x = r.generation;
      lo.x.push_back(x), lo.y.push_back(r.min_psi_r);
      mean.x.push_back(x), mean.y.push_back(r.mean_psi_r);
      best.x.push_back(x), best.y.push_back(r.best_psi_r);
      base.x.push_back(x), base.y.push_back(r.baseline_psi);
    }
    chart.series = {lo, mean, best, base};
    plot::write_svg(out, chart);
  } else if (kind == "montage") {
    if (gen < 1) throw UsageError("plot montage: run has no finished generation");
    const auto harvest = load_dataset(gdir / "harvest.clk");
    std::vector<QuadrantImage> tiles;
    for (auto it = harvest.rbegin(); it != harvest.rend() && tiles.size() < 32; ++it) tiles.push_back(it->image);
    plot::write_png(out, plot::montage(tiles, 8, 2));
  } else {
    throw UsageError("plot: unknown --kind " + kind);
  }
  print_json({{"plot", out}, {"kind", kind}});
  return 0;
}

int report(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloak design pipeline: FDFD oracle, surrogate network and GAN feedback loop"};
  app.require_subcommand(1);

  std::string config, out, image, dataset, history, resume, kind, run;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count;
  std::optional<int> epochs;
  std::size_t record = 0;
  int generation = 0;
  std::string fields;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "TOML run configuration (defaults if omitted)");
    sub->add_option("--seed", seed, "Override the configured seed");
  };

  auto* gen = app.add_subcommand("gen-dataset", "Simulate the initial random-shell dataset");
  add_common(gen);
  gen->add_option("--out", out, "Dataset file (resumed if present)")->required();
  gen->add_option("--count", count, "Number of designs (default: loop.initial_dataset_size)");

  auto* sim = app.add_subcommand("simulate", "Solve one design and report its scattering");
  add_common(sim);
  sim->add_option("--image", image, "Dataset file or initial-design index")->required();
  sim->add_option("--record", record, "Record index when --image is a dataset file");
  sim->add_option("--fields", fields, "Also write |H_z| and Re(H_z) maps to this PNG");

  auto* base = app.add_subcommand("baseline", "Bare-object scattering: FDFD vs analytic series");
  add_common(base);

  auto* train = app.add_subcommand("train-forward", "Train the surrogate on a dataset");
  add_common(train);
  train->add_option("--dataset", dataset, "Dataset file")->required();
  train->add_option("--out", out, "Checkpoint file")->default_val("forward.ckpt");
  train->add_option("--history", history, "Per-epoch CSV");
  train->add_option("--epochs", epochs, "Override the initial epoch budget");

  auto* loop = app.add_subcommand("loop", "Run the generational feedback loop");
  add_common(loop);
  loop->add_option("--resume", resume, "Continue an interrupted run directory");

  auto* plt = app.add_subcommand("plot", "Render figures from a run directory");
  plt->add_option("--run", run, "Run directory")->required();
  plt->add_option("--kind", kind, "fields | losses | progress | montage")
      ->required()
      ->check(CLI::IsMember({"fields", "losses", "progress", "montage"}));
  plt->add_option("--out", out, "Output file (.png for fields/montage, .svg for losses/progress)")->required();
  plt->add_option("--generation", generation, "Generation for losses/montage (default: last)");
  plt->add_option("--image", image, "Design for fields (default: best design of the run)");
  plt->add_option("--record", record, "Record index when --image is a dataset file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(1, "usage", e.what());
  }

  try {
    if (*gen) return cmd_gen_dataset(config_from(config, seed), out, count);
    if (*sim) return cmd_simulate(config_from(config, seed), image, record, fields);
    if (*base) return cmd_baseline(config_from(config, seed));
    if (*train) return cmd_train_forward(config_from(config, seed), dataset, out, history, epochs);
    if (*loop) return cmd_loop(config, resume, seed);
    if (*plt) return cmd_plot(run, kind, out, generation, image, record);
  } catch (const UsageError& e) {
    return report(1, "usage", e.what());
  } catch (const ConfigError& e) {
    return report(1, "config", e.what());
  } catch (const SolverError& e) {
    return report(2, "solver", e.what());
  } catch (const NumericalError& e) {
    return report(2, "numerical", e.what());
  } catch (const FormatError& e) {
    return report(2, "format", e.what());
  } catch (const std::exception& e) {
    return report(2, "runtime", e.what());
  }
  return report(1, "usage", "no subcommand");
}
