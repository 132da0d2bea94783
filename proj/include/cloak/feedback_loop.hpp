#pragma once

// Generational search: train the GAN against the frozen surrogate, harvest
// candidates after every epoch, simulate the best predicted ones, grow the
// dataset, retrain the surrogate, repeat.
//
// Run directory layout (one per `loop` invocation):
//
//   <run_root>/<timestamp>/
//     config.toml              configuration used
//     dataset.clk              full dataset, append-only
//     initial/dataset.clk      simulated random shells, record 0 is the empty shell
//     initial/forward.ckpt     surrogate trained on the initial dataset
//     initial/forward_history.csv
//     gen_<k>/record.json      GenerationRecord, written last
//     gen_<k>/candidates.clk   selected top-k with psi_p and psi_r (NaN on failure)
//     gen_<k>/dataset_delta.clk
//     gen_<k>/harvest.clk      every harvested design with psi_p, psi_r = NaN
//     gen_<k>/{forward,generator,discriminator}.ckpt
//     gen_<k>/{gan_losses,forward_history}.csv
//     gen_<k>/montage.png      last-epoch samples
//     summary.json             history and best design after the loop ends
//     best.clk                 the best design found, with its psi_r

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "cloak/config.hpp"
#include "cloak/dataset.hpp"
#include "cloak/plot.hpp"

namespace cloak {

namespace fs = std::filesystem;
using Logger = std::function<void(const std::string&)>;

/// splitmix64 step; derives independent stream seeds from the run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (a + 1) + 0xbf58476d1ce4e5b9ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Runs fn(i) for i in [0, n) on `workers` threads. Results must be written
/// to per-index slots, so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct GenerationRecord {
  int generation = 0;
  double min_psi_r = 0.0;    // over the selected candidates with a known psi_r
  double mean_psi_r = 0.0;
  double best_psi_r = 0.0;   // best-so-far over the whole run, dataset included
  double best_ratio = 0.0;   // best_psi_r / baseline
  double min_ratio = 0.0;
  double baseline_psi = 0.0;
  double mean_psi_dataset = 0.0;  // <psi> that set alpha_f for this generation
  double alpha_f = 0.0;
  std::size_t harvest_size = 0;
  std::size_t unique_candidates = 0;
  std::size_t selected = 0;
  std::size_t lookups = 0;    // selected designs already in the dataset
  std::size_t simulated = 0;
  std::size_t failures = 0;
  std::size_t appended = 0;
  std::size_t dataset_size = 0;  // after augmentation
  double surrogate_log_rmse = 0.0;  // log10(psi_p / psi_r) RMS over the simulated candidates
  TargetTransform transform;        // surrogate transform after retraining
  std::uint64_t best_image_hash = 0;
  double wall_time_s = 0.0;
  std::string forward_checkpoint, generator_checkpoint, discriminator_checkpoint;
};

/// Equality of everything except wall time.
inline bool same_outcome(const GenerationRecord& a, const GenerationRecord& b) {
  auto key = [](const GenerationRecord& r) {
    return std::tie(r.generation, r.min_psi_r, r.mean_psi_r, r.best_psi_r, r.best_ratio, r.min_ratio, r.baseline_psi,
                    r.mean_psi_dataset, r.alpha_f, r.harvest_size, r.unique_candidates, r.selected, r.lookups,
                    r.simulated, r.failures, r.appended, r.dataset_size, r.surrogate_log_rmse, r.transform.mean,
                    r.transform.std, r.best_image_hash, r.forward_checkpoint, r.generator_checkpoint,
                    r.discriminator_checkpoint);
  };
  return key(a) == key(b);
}

inline nlohmann::json to_json(const GenerationRecord& r) {
  return {{"generation", r.generation},
          {"min_psi_r", r.min_psi_r},
          {"mean_psi_r", r.mean_psi_r},
          {"best_psi_r", r.best_psi_r},
          {"best_ratio", r.best_ratio},
          {"min_ratio", r.min_ratio},
          {"baseline_psi", r.baseline_psi},
          {"mean_psi_dataset", r.mean_psi_dataset},
          {"alpha_f", r.alpha_f},
          {"harvest_size", r.harvest_size},
          {"unique_candidates", r.unique_candidates},
          {"selected", r.selected},
          {"lookups", r.lookups},
          {"simulated", r.simulated},
          {"failures", r.failures},
          {"appended", r.appended},
          {"dataset_size", r.dataset_size},
          {"surrogate_log_rmse", r.surrogate_log_rmse},
          {"transform", {{"mean", r.transform.mean}, {"std", r.transform.std}}},
          {"best_image_hash", r.best_image_hash},
          {"wall_time_s", r.wall_time_s},
          {"checkpoints",
           {{"forward", r.forward_checkpoint},
            {"generator", r.generator_checkpoint},
            {"discriminator", r.discriminator_checkpoint}}}};
}

inline GenerationRecord record_from_json(const nlohmann::json& j) {
  try {
    GenerationRecord r;
    r.generation = j.at("generation");
    r.min_psi_r = j.at("min_psi_r");
    r.mean_psi_r = j.at("mean_psi_r");
    r.best_psi_r = j.at("best_psi_r");
    r.best_ratio = j.at("best_ratio");
    r.min_ratio = j.at("min_ratio");
    r.baseline_psi = j.at("baseline_psi");
    r.mean_psi_dataset = j.at("mean_psi_dataset");
    r.alpha_f = j.at("alpha_f");
    r.harvest_size = j.at("harvest_size");
    r.unique_candidates = j.at("unique_candidates");
    r.selected = j.at("selected");
    r.lookups = j.at("lookups");
    r.simulated = j.at("simulated");
    r.failures = j.at("failures");
    r.appended = j.at("appended");
    r.dataset_size = j.at("dataset_size");
    r.surrogate_log_rmse = j.at("surrogate_log_rmse");
    r.transform = {j.at("transform").at("mean"), j.at("transform").at("std")};
    r.best_image_hash = j.at("best_image_hash");
    r.wall_time_s = j.at("wall_time_s");
    r.forward_checkpoint = j.at("checkpoints").at("forward");
    r.generator_checkpoint = j.at("checkpoints").at("generator");
    r.discriminator_checkpoint = j.at("checkpoints").at("discriminator");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("generation record: ") + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw FormatError("cannot write " + tmp);
    os << std::setprecision(17) << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Designs with known psi_r plus a hash index for lookups.
class DesignDatabase {
 public:
  void add(DatasetRecord r) {
    index_.emplace(r.image.hash(), records_.size());
    records_.push_back(std::move(r));
  }

  std::optional<double> lookup(const QuadrantImage& q) const {
    auto [lo, hi] = index_.equal_range(q.hash());
    for (auto it = lo; it != hi; ++it)
      if (records_[it->second].image == q) return records_[it->second].psi_r;
    return std::nullopt;
  }

  const std::vector<DatasetRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  double mean_psi() const {
    double s = 0.0;
    for (const auto& r : records_) s += r.psi_r;
    return s / static_cast<double>(records_.size());
  }

  std::vector<LabeledSample> samples() const {
    std::vector<LabeledSample> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back({r.image, r.psi_r});
    return out;
  }

  std::vector<QuadrantImage> images() const {
    std::vector<QuadrantImage> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.image);
    return out;
  }

 private:
  std::vector<DatasetRecord> records_;
  std::unordered_multimap<std::uint64_t, std::size_t> index_;
};

/// Oracle evaluation of one design; psi_r must come out finite and positive.
inline double simulate_psi(const QuadrantImage& q, const RunConfig& cfg) {
  const double psi = simulate_design(q, cfg.domain, cfg.source, cfg.grid_resolution, cfg.solver).psi;
  if (!std::isfinite(psi) || !(psi > 0.0)) throw NumericalError("non-positive scattering coefficient");
  return psi;
}

/// Design `index` of the initial dataset. Index 0 is the empty shell, kept
/// as a ratio-1 anchor.
inline QuadrantImage initial_design(const RunConfig& cfg, std::size_t index) {
  if (index == 0) return QuadrantImage(cfg.domain.image_size);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x1d, index));
  std::uniform_int_distribution<int> count(cfg.loop.curve_count_min, cfg.loop.curve_count_max);
  const int n = count(rng);
  return random_shell(cfg.domain, rng(), n, cfg.loop.curve_scale);
}

/// Simulates the initial random shells into `path`, resuming after any
/// records already present. Records are appended in chunks.
inline std::vector<DatasetRecord> build_initial_dataset(const RunConfig& cfg, const fs::path& path,
                                                        const Logger& log = {}) {
  std::vector<DatasetRecord> have;
  if (fs::exists(path)) have = load_dataset(path);
  const std::size_t target = cfg.loop.initial_dataset_size;
  if (have.size() > target) have.resize(target);
  for (std::size_t i = 0; i < have.size(); ++i)
    if (have[i].image != initial_design(cfg, i))
      throw FormatError("initial dataset: record " + std::to_string(i) + " does not match the configured seed");
  const std::size_t workers = cfg.loop.worker_count();
  const std::size_t chunk = std::max<std::size_t>(16, 8 * workers);
  while (have.size() < target) {
    const std::size_t start = have.size(), m = std::min(chunk, target - start);
    std::vector<DatasetRecord> part(m);
    parallel_for(m, workers, [&](std::size_t k) {
      part[k].image = initial_design(cfg, start + k);
      part[k].psi_r = simulate_psi(part[k].image, cfg);
    });
    append_dataset(path, part);
    for (auto& r : part) have.push_back(std::move(r));
    if (log) log("initial dataset: " + std::to_string(have.size()) + "/" + std::to_string(target));
  }
  return have;
}

struct LoopState {
  RunConfig cfg;
  fs::path run_dir;
  DesignDatabase db;
  ForwardNet<float> forward;
  std::vector<GenerationRecord> history;
  double baseline = 0.0;
  double best_psi = std::numeric_limits<double>::infinity();
  QuadrantImage best_image{64};

  LoopState(RunConfig c, fs::path dir)
      : cfg(std::move(c)), run_dir(std::move(dir)), forward(cfg.forward, mix_seed(cfg.seed, 0xf0)) {}

  void note_best(const DatasetRecord& r) {
    if (r.psi_r < best_psi) {
      best_psi = r.psi_r;
      best_image = r.image;
    }
  }
};

inline ForwardTrainConfig forward_train_config(const RunConfig& cfg, int epochs, std::uint64_t seed) {
  ForwardTrainConfig t = cfg.forward_train;
  t.epochs = epochs;
  t.seed = seed;
  t.refit_transform = true;
  return t;
}

inline std::string generation_dir_name(int k) { return "gen_" + std::to_string(k); }

/// One generation; everything is on disk before the record is returned.
inline GenerationRecord run_generation(LoopState& st, int k, const Logger& log = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig& cfg = st.cfg;
  const fs::path dir = st.run_dir / generation_dir_name(k);
  fs::create_directories(dir);

  GenerationRecord rec;
  rec.generation = k;
  rec.baseline_psi = st.baseline;
  rec.mean_psi_dataset = st.db.mean_psi();
  rec.alpha_f = cfg.gan.alpha_f(rec.mean_psi_dataset);

  // GAN training and harvest.
  const std::uint64_t gseed = mix_seed(cfg.seed, 0x6a, static_cast<std::uint64_t>(k));
  Generator<float> gen(cfg.generator, cfg.domain, mix_seed(gseed, 1));
  Discriminator<float> disc(cfg.discriminator, mix_seed(gseed, 2));
  if (!cfg.loop.reinit_gan && k > 1) {
    const fs::path prev = st.run_dir / generation_dir_name(k - 1);
    nn::restore(nn::load_checkpoint_file(prev / "generator.ckpt"), gen.params());
    nn::restore(nn::load_checkpoint_file(prev / "discriminator.ckpt"), disc.params());
  }
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7b, static_cast<std::uint64_t>(k)));
  GanConfig gc = cfg.gan;
  gc.epochs = cfg.loop.epochs_per_generation;
  const auto real = st.db.images();
  const auto gan = train_gan(gen, disc, st.forward, real, gc, rec.alpha_f, rng, [&](const GanEpoch& e) {
    if (log) {
      std::ostringstream os;
      os << "gen " << k << " epoch " << e.epoch << ": L_d=" << e.l_d << " L_g=" << e.l_g << " L_f=" << e.l_f
         << " L_t=" << e.l_t;
      log(os.str());
    }
  });
  for (const auto& w : gan.warnings)
    if (log) log("warning: " + w);
  rec.harvest_size = gan.harvest.size();

  // Deduplicate (first occurrence wins) and rank by predicted psi.
  std::vector<const HarvestItem*> unique;
  {
    std::unordered_multimap<std::uint64_t, const HarvestItem*> seen;
    for (const auto& h : gan.harvest) {
      const auto hash = h.image.hash();
      auto [lo, hi] = seen.equal_range(hash);
      bool dup = false;
      for (auto it = lo; it != hi && !dup; ++it) dup = it->second->image == h.image;
      if (dup) continue;
      seen.emplace(hash, &h);
      unique.push_back(&h);
    }
  }
  rec.unique_candidates = unique.size();
  std::stable_sort(unique.begin(), unique.end(), [](const auto* a, const auto* b) { return a->psi_p < b->psi_p; });
  if (unique.size() > cfg.loop.top_k) unique.resize(cfg.loop.top_k);
  rec.selected = unique.size();

  // Oracle: look up known designs, simulate the rest in parallel.
  std::vector<DatasetRecord> cand(unique.size());
  std::vector<char> known(unique.size(), 0), failed(unique.size(), 0);
  std::vector<std::size_t> to_sim;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    cand[i].image = unique[i]->image;
    cand[i].psi_p = unique[i]->psi_p;
    if (auto v = st.db.lookup(cand[i].image)) {
      cand[i].psi_r = *v;
      known[i] = 1;
    } else {
      to_sim.push_back(i);
    }
  }
  rec.lookups = unique.size() - to_sim.size();
  std::vector<std::string> errors(to_sim.size());
  parallel_for(to_sim.size(), cfg.loop.worker_count(), [&](std::size_t j) {
    const std::size_t i = to_sim[j];
    try {
      cand[i].psi_r = simulate_psi(cand[i].image, cfg);
    } catch (const std::exception& e) {
      failed[i] = 1;
      errors[j] = e.what();
    }
  });
  for (std::size_t j = 0; j < to_sim.size(); ++j)
    if (failed[to_sim[j]]) {
      ++rec.failures;
      if (log) log("warning: candidate " + std::to_string(to_sim[j]) + " dropped: " + errors[j]);
    }
  rec.simulated = to_sim.size() - rec.failures;
  if (!to_sim.empty() && 2 * rec.failures > to_sim.size())
    throw SolverError("generation " + std::to_string(k) + " aborted: " + std::to_string(rec.failures) + " of " +
                          std::to_string(to_sim.size()) + " simulations failed",
                      std::numeric_limits<double>::quiet_NaN());

  // Augment the dataset.
  std::vector<DatasetRecord> delta;
  double sum = 0.0, lerr = 0.0;
  rec.min_psi_r = std::numeric_limits<double>::infinity();
  std::size_t counted = 0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (failed[i]) continue;
    rec.min_psi_r = std::min(rec.min_psi_r, cand[i].psi_r);
    sum += cand[i].psi_r;
    ++counted;
    if (!known[i]) {
      lerr += std::pow(std::log10(cand[i].psi_p / cand[i].psi_r), 2);
      delta.push_back(cand[i]);
    }
  }
  rec.mean_psi_r = counted ? sum / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
  rec.surrogate_log_rmse = delta.empty() ? 0.0 : std::sqrt(lerr / static_cast<double>(delta.size()));
  rec.appended = delta.size();
  save_dataset(dir / "candidates.clk", cand);
  save_dataset(dir / "dataset_delta.clk", delta);
  append_dataset(st.run_dir / "dataset.clk", delta);
  for (const auto& r : delta) {
    st.note_best(r);
    st.db.add(r);
  }
  rec.dataset_size = st.db.size();
  rec.best_psi_r = st.best_psi;
  rec.best_ratio = st.best_psi / st.baseline;
  rec.min_ratio = rec.min_psi_r / st.baseline;
  rec.best_image_hash = st.best_image.hash();

  // Surrogate retraining.
  if (!cfg.loop.warm_start) st.forward = ForwardNet<float>(cfg.forward, mix_seed(cfg.seed, 0xf0, static_cast<std::uint64_t>(k)));
  const int epochs = cfg.loop.warm_start ? cfg.loop.retrain_epochs : cfg.loop.initial_forward_epochs;
  const auto samples = st.db.samples();
  const auto hist =
      train_forward(st.forward, samples, forward_train_config(cfg, epochs, mix_seed(cfg.seed, 0x5e, static_cast<std::uint64_t>(k))));
  rec.transform = st.forward.transform();

  // Persist.
  save_forward_net(dir / "forward.ckpt", st.forward);
  nn::save_checkpoint_file(dir / "generator.ckpt", nn::capture(gen.params()));
  nn::save_checkpoint_file(dir / "discriminator.ckpt", nn::capture(disc.params()));
  rec.forward_checkpoint = generation_dir_name(k) + "/forward.ckpt";
  rec.generator_checkpoint = generation_dir_name(k) + "/generator.ckpt";
  rec.discriminator_checkpoint = generation_dir_name(k) + "/discriminator.ckpt";
  write_forward_history_csv(dir / "forward_history.csv", hist);
  write_gan_losses_csv(dir / "gan_losses.csv", gan.losses);
  {
    std::vector<DatasetRecord> harvest;
    harvest.reserve(gan.harvest.size());
    for (const auto& h : gan.harvest) {
      DatasetRecord r;
      r.image = h.image;
      r.psi_p = h.psi_p;
      harvest.push_back(std::move(r));
    }
    save_dataset(dir / "harvest.clk", harvest);
    std::vector<QuadrantImage> last;
    for (auto it = gan.harvest.rbegin(); it != gan.harvest.rend() && last.size() < 32; ++it) last.push_back(it->image);
    plot::write_png(dir / "montage.png", plot::montage(last, 8, 1));
  }
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(dir / "record.json", to_json(rec));
  st.history.push_back(rec);
  if (log) {
    std::ostringstream os;
    os << "gen " << k << ": min psi_r " << rec.min_psi_r << " (ratio " << rec.min_ratio << "), mean "
       << rec.mean_psi_r << ", best ratio " << rec.best_ratio << ", dataset " << rec.dataset_size;
    log(os.str());
  }
  return rec;
}

struct LoopResult {
  fs::path run_dir;
  std::vector<GenerationRecord> history;
  QuadrantImage best_image{64};
  double best_psi_r = 0.0;
  double baseline_psi = 0.0;
  std::string stop_reason;
};

inline std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return os.str();
}

namespace detail {

/// True when the loop should stop after `history` (stagnation rule).
inline bool stagnated(const std::vector<GenerationRecord>& history, double initial_best, int patience, double tol) {
  double reference = initial_best;
  int flat = 0;
  for (const auto& r : history) {
    if (r.best_psi_r < reference * (1.0 - tol)) {
      reference = r.best_psi_r;
      flat = 0;
    } else {
      ++flat;
    }
  }
  return flat >= patience;
}

inline void write_summary(const LoopState& st, double initial_best, const std::string& reason) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : st.history) hist.push_back(to_json(r));
  DatasetRecord best;
  best.image = st.best_image;
  best.psi_r = st.best_psi;
  save_dataset(st.run_dir / "best.clk", {best});
  write_json(st.run_dir / "summary.json", {{"baseline_psi", st.baseline},
                                           {"initial_best_psi_r", initial_best},
                                           {"best_psi_r", st.best_psi},
                                           {"best_ratio", st.best_psi / st.baseline},
                                           {"best_image_hash", st.best_image.hash()},
                                           {"stop_reason", reason},
                                           {"history", hist}});
}

}  // namespace detail

/// Runs (or resumes) the loop inside `run_dir`. A generation counts as done
/// once its record.json exists; anything after the last complete generation
/// is discarded and recomputed.
inline LoopResult run_loop_in(const RunConfig& cfg, const fs::path& run_dir, const Logger& log = {}) {
  cfg.validate();
  fs::create_directories(run_dir / "initial");
  {
    std::ofstream os(run_dir / "config.toml");
    os << to_toml(cfg);
  }
  LoopState st(cfg, run_dir);
  st.baseline = baseline_psi(cfg.domain, cfg.source, cfg.grid_resolution).psi;
  if (log) {
    std::ostringstream os;
    os << "baseline psi " << st.baseline;
    log(os.str());
  }

  // Initial dataset (resumable) and surrogate.
  const auto initial = build_initial_dataset(cfg, run_dir / "initial" / "dataset.clk", log);
  for (const auto& r : initial) {
    st.db.add(r);
    st.note_best(r);
  }
  const double initial_best = st.best_psi;

  // Completed generations.
  int done = 0;
  while (fs::exists(run_dir / generation_dir_name(done + 1) / "record.json")) ++done;

  // dataset.clk = initial + every completed delta; rebuild it so a crash
  // between append and record leaves no stray records.
  std::vector<DatasetRecord> all = initial;
  for (int k = 1; k <= done; ++k) {
    const auto delta = load_dataset(run_dir / generation_dir_name(k) / "dataset_delta.clk");
    for (const auto& r : delta) {
      st.db.add(r);
      st.note_best(r);
      all.push_back(r);
    }
    st.history.push_back(record_from_json(read_json(run_dir / generation_dir_name(k) / "record.json")));
  }
  save_dataset(run_dir / "dataset.clk", all);

  if (done == 0) {
    const fs::path ck = run_dir / "initial" / "forward.ckpt";
    if (fs::exists(ck)) {
      load_forward_net(ck, st.forward);
    } else {
      const auto samples = st.db.samples();
      const auto hist = train_forward(st.forward, samples,
                                      forward_train_config(cfg, cfg.loop.initial_forward_epochs, mix_seed(cfg.seed, 0x5e)));
      write_forward_history_csv(run_dir / "initial" / "forward_history.csv", hist);
      save_forward_net(ck, st.forward);
      if (log && !hist.empty())
        log("initial surrogate: train mse " + std::to_string(hist.back().train_mse) + ", val mse " +
            std::to_string(hist.back().val_mse));
    }
  } else {
    load_forward_net(run_dir / st.history.back().forward_checkpoint, st.forward);
    if (log) log("resuming after generation " + std::to_string(done));
  }

  std::string reason = "max_generations";
  for (int k = done + 1; k <= cfg.loop.max_generations; ++k) {
    if (detail::stagnated(st.history, initial_best, cfg.loop.stagnation_patience, cfg.loop.stagnation_tolerance)) {
      reason = "stagnation";
      break;
    }
    run_generation(st, k, log);
  }
  if (reason != "stagnation" &&
      detail::stagnated(st.history, initial_best, cfg.loop.stagnation_patience, cfg.loop.stagnation_tolerance) &&
      static_cast<int>(st.history.size()) < cfg.loop.max_generations)
    reason = "stagnation";
  detail::write_summary(st, initial_best, reason);
  return {run_dir, st.history, st.best_image, st.best_psi, st.baseline, reason};
}

/// Fresh run under <run_root>/<timestamp>.
inline LoopResult run_loop(const RunConfig& cfg, const Logger& log = {}) {
  fs::path dir = fs::path(cfg.run_root) / timestamp_now();
  for (int s = 1; fs::exists(dir); ++s) dir = fs::path(cfg.run_root) / (timestamp_now() + "-" + std::to_string(s));
  return run_loop_in(cfg, dir, log);
}

/// Resumes using the configuration stored in the run directory.
inline LoopResult resume_loop(const fs::path& run_dir, const Logger& log = {}) {
  if (!fs::exists(run_dir / "config.toml")) throw ConfigError("resume: no config.toml in " + run_dir.string());
  return run_loop_in(load_run_config(run_dir / "config.toml"), run_dir, log);
}

}  // namespace cloak
