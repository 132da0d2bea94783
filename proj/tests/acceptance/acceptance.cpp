// End-to-end acceptance checks. One PASS/FAIL line per criterion; the exit
// status is nonzero if any criterion fails. Expensive artifacts (datasets,
// loop runs) are cached under --workdir so a rerun resumes instead of
// starting over.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "cloak/feedback_loop.hpp"

using namespace cloak;
using nn::Tensor;
using nn::Var;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

// ---------------------------------------------------------------------------
// Solver

// Scattered power of a PEC cylinder under TE illumination, summed over
// orders -N..N with derivatives from the two-neighbour recurrence.
double pec_series_power(double radius_um, double wavelength_um, double amplitude) {
  const double k = 2.0 * std::numbers::pi / wavelength_um;
  const double x = k * radius_um;
  const int order = static_cast<int>(x) + 40;
  auto jn = [](int m, double v) { return m < 0 ? ((m & 1) ? -1.0 : 1.0) * std::cyl_bessel_j(-m, v) : std::cyl_bessel_j(m, v); };
  auto yn = [](int m, double v) { return m < 0 ? ((m & 1) ? -1.0 : 1.0) * std::cyl_neumann(-m, v) : std::cyl_neumann(m, v); };
  double total = 0.0;
  for (int m = -order; m <= order; ++m) {
    const double dj = 0.5 * (jn(m - 1, x) - jn(m + 1, x));
    const double dy = 0.5 * (yn(m - 1, x) - yn(m + 1, x));
    total += dj * dj / (dj * dj + dy * dy);
  }
  const double eta = 299792458.0 * 1.25663706212e-6;
  return amplitude * amplitude / (2.0 * eta) * 4.0 / (k * 1e6) * total;
}

Outcome solver_validation() {
  const DomainSpec spec;  // R1 = 1 um, lambda = 1.2 um, 12 um domain
  const SourceSpec src;
  const double exact = pec_series_power(spec.r_object, spec.wavelength, src.amplitude);
  std::string detail = "analytic " + fmt(exact, 8);
  bool ok = true;
  for (auto [res, tol] : {std::pair{20.0, 0.05}, std::pair{40.0, 0.02}}) {
    progress("bare cylinder at " + fmt(res) + " cells/wavelength");
    const auto sol = solve_scattered(bare_object_map(spec, res), src);
    const double psi = compute_psi(sol, default_integration_radius(spec)).psi;
    const double dev = std::abs(psi - exact) / exact;
    ok = ok && dev < tol;
    detail += "; " + fmt(res) + " cells/lambda: " + fmt(psi, 8) + " (dev " + fmt(100 * dev, 3) + "% < " +
              fmt(100 * tol) + "%)";
  }
  return {ok, detail};
}

Outcome flux_surface_independence(const RunConfig& desk) {
  RunConfig cfg = desk;
  cfg.domain.r_domain = DomainSpec{}.r_domain;  // both radii must fit inside the PML
  double worst = 0.0;
  for (std::size_t i = 1; i <= 10; ++i) {
    const auto q = initial_design(cfg, i);
    const auto sol = solve_scattered(rasterize(mirror_expand(q), cfg.domain, cfg.grid_resolution), cfg.source);
    const double a = compute_psi(sol, 8.0).psi, b = compute_psi(sol, 10.0).psi;
    worst = std::max(worst, std::abs(a - b) / std::max(a, b));
  }
  return {worst < 0.01, "10 random shells, worst |psi(8um) - psi(10um)| / psi = " + fmt(100 * worst, 3) + "% (< 1%)"};
}

// ---------------------------------------------------------------------------
// Autodiff

using V = Var<double>;
using Tn = Tensor<double>;
using Rng = std::mt19937_64;

Tn random_tensor(nn::Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tn t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

Tn signed_away_from_zero(nn::Shape s, Rng& rng) {
  Tn t = random_tensor(std::move(s), rng, 0.05, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.vec()) v = flip(rng) ? -v : v;
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }

nn::Shape random_shape(Rng& rng) {
  nn::Shape s(pick(rng, 1, 4));
  for (auto& d : s) d = pick(rng, 1, 5);
  return s;
}

using Builder = std::function<V(std::vector<V>&)>;

// Norm-wise relative error between the reverse-mode gradient and central
// differences of a random projection of the op output.
double gradient_error(const Builder& build, const std::vector<Tn>& inputs, Rng& rng) {
  std::vector<V> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  const Tn weights = random_tensor(build(vars).shape(), rng);
  auto scalar = [&](std::vector<V>& vs) { return nn::mean(nn::mul_const(build(vs), weights)); };
  nn::backward(scalar(vars));

  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tn analytic = vars[a].grad().empty() ? Tn(inputs[a].shape()) : vars[a].grad();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<V> vs;
        for (std::size_t b = 0; b < inputs.size(); ++b) {
          Tn t = inputs[b];
          if (b == a) t[i] += delta;
          vs.emplace_back(t, false);
        }
        return scalar(vs).value()[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      num += (analytic[i] - numeric) * (analytic[i] - numeric);
      den += analytic[i] * analytic[i] + numeric * numeric;
    }
    if (den > 0) worst = std::max(worst, std::sqrt(num / den));
  }
  return worst;
}

struct ConvCase {
  std::size_t n, c, h, w, f, k, stride, pad;
};

ConvCase random_conv(Rng& rng) {
  ConvCase cc{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 3, 7), pick(rng, 3, 7),
              pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 2), pick(rng, 0, 1)};
  cc.k = std::min(cc.k, std::min(cc.h, cc.w) + 2 * cc.pad);
  return cc;
}

double dot(const Tn& a, const Tn& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Outcome gradient_integrity() {
  constexpr int kShapes = 50;
  constexpr double kTol = 1e-4;
  using Case = std::function<std::pair<Builder, std::vector<Tn>>(Rng&)>;
  const std::vector<std::pair<std::string, Case>> kernels{
      {"conv2d",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         const auto cc = random_conv(r);
         return {[cc](std::vector<V>& v) { return nn::conv2d(v[0], v[1], cc.stride, cc.pad); },
                 {random_tensor({cc.n, cc.c, cc.h, cc.w}, r), random_tensor({cc.f, cc.c, cc.k, cc.k}, r)}};
       }},
      {"conv_transpose2d",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         for (;;) {
           const auto cc = random_conv(r);
           const std::size_t h = 1 + cc.h / 2, w = 1 + cc.w / 2;
           if ((h - 1) * cc.stride + cc.k <= 2 * cc.pad || (w - 1) * cc.stride + cc.k <= 2 * cc.pad) continue;
           return {[cc](std::vector<V>& v) { return nn::conv_transpose2d(v[0], v[1], cc.stride, cc.pad); },
                   {random_tensor({cc.n, cc.f, h, w}, r), random_tensor({cc.f, cc.c, cc.k, cc.k}, r)}};
         }
       }},
      {"dense",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         const std::size_t n = pick(r, 1, 6), d = pick(r, 1, 8), k = pick(r, 1, 8);
         return {[](std::vector<V>& v) { return nn::dense(v[0], v[1], v[2]); },
                 {random_tensor({n, d}, r), random_tensor({d, k}, r), random_tensor({k}, r)}};
       }},
      {"add_channel_bias",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         const std::size_t n = pick(r, 1, 3), c = pick(r, 1, 4), h = pick(r, 1, 5), w = pick(r, 1, 5);
         return {[](std::vector<V>& v) { return nn::add_channel_bias(v[0], v[1]); },
                 {random_tensor({n, c, h, w}, r), random_tensor({c}, r)}};
       }},
      {"reshape",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         const auto s = random_shape(r);
         Tn x = random_tensor(s, r);
         const std::size_t n = x.size();
         return {[n](std::vector<V>& v) { return nn::reshape(v[0], {1, n}); }, {x}};
       }},
      {"relu",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         return {[](std::vector<V>& v) { return nn::relu(v[0]); }, {signed_away_from_zero(random_shape(r), r)}};
       }},
      {"leaky_relu",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         return {[](std::vector<V>& v) { return nn::leaky_relu(v[0], 0.2); }, {signed_away_from_zero(random_shape(r), r)}};
       }},
      {"sigmoid",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         return {[](std::vector<V>& v) { return nn::sigmoid(v[0]); }, {random_tensor(random_shape(r), r, -4, 4)}};
       }},
      {"tanh",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         return {[](std::vector<V>& v) { return nn::tanh(v[0]); }, {random_tensor(random_shape(r), r, -3, 3)}};
       }},
      {"exp_affine",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         std::uniform_real_distribution<double> d(-1, 1);
         const double a = d(r), b = d(r);
         return {[a, b](std::vector<V>& v) { return nn::exp_affine(v[0], a, b); }, {random_tensor(random_shape(r), r)}};
       }},
      {"mul_const",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         const std::size_t lead = pick(r, 1, 4);
         const auto tail = random_shape(r);
         nn::Shape s{lead};
         s.insert(s.end(), tail.begin(), tail.end());
         const Tn mask = random_tensor(tail, r);
         return {[mask](std::vector<V>& v) { return nn::mul_const(v[0], mask); }, {random_tensor(s, r)}};
       }},
      {"mean",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         return {[](std::vector<V>& v) { return nn::mean(v[0]); }, {random_tensor(random_shape(r), r)}};
       }},
      {"weighted_sum",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         const auto s = random_shape(r);
         std::uniform_real_distribution<double> d(-2, 2);
         const double ca = d(r), cb = d(r);
         return {[ca, cb](std::vector<V>& v) { return nn::weighted_sum(v[0], ca, v[1], cb); },
                 {random_tensor(s, r), random_tensor(s, r)}};
       }},
      {"bce_loss",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         const auto s = random_shape(r);
         const Tn y = random_tensor(s, r, 0.0, 1.0);
         return {[y](std::vector<V>& v) { return nn::bce_loss(v[0], y); }, {random_tensor(s, r, 0.05, 0.95)}};
       }},
      {"mse_loss",
       [](Rng& r) -> std::pair<Builder, std::vector<Tn>> {
         const auto s = random_shape(r);
         const Tn target = random_tensor(s, r);
         return {[target](std::vector<V>& v) { return nn::mse_loss(v[0], target); }, {random_tensor(s, r)}};
       }},
  };

  Rng rng(20240611);
  bool ok = true;
  double overall = 0.0;
  std::string failures;
  for (const auto& [name, make] : kernels) {
    double worst = 0.0;
    for (int t = 0; t < kShapes; ++t) {
      auto [build, inputs] = make(rng);
      worst = std::max(worst, gradient_error(build, inputs, rng));
    }
    overall = std::max(overall, worst);
    if (!(worst < kTol)) {
      ok = false;
      failures += " " + name + "=" + fmt(worst, 3);
    }
  }

  // <A x, y> = <x, A^T y> for conv2d and its transpose.
  double adjoint = 0.0;
  for (int checked = 0; checked < kShapes;) {
    const auto cc = random_conv(rng);
    const Tn k = random_tensor({cc.f, cc.c, cc.k, cc.k}, rng);
    const Tn x = random_tensor({cc.n, cc.c, cc.h, cc.w}, rng);
    const V ax = nn::conv2d(V(x), V(k), cc.stride, cc.pad);
    if (nn::conv_transpose_size(ax.shape()[2], cc.k, cc.stride, cc.pad) != cc.h ||
        nn::conv_transpose_size(ax.shape()[3], cc.k, cc.stride, cc.pad) != cc.w)
      continue;
    const Tn y = random_tensor(ax.shape(), rng);
    const V aty = nn::conv_transpose2d(V(y), V(k), cc.stride, cc.pad);
    const double lhs = dot(ax.value(), y), rhs = dot(x, aty.value());
    adjoint = std::max(adjoint, std::abs(lhs - rhs) / std::abs(lhs));
    ++checked;
  }
  ok = ok && adjoint < 1e-10;
  return {ok, std::to_string(kernels.size()) + " kernels x " + std::to_string(kShapes) +
                  " shapes, worst FD error " + fmt(overall, 3) + " (< 1e-4)" +
                  (failures.empty() ? "" : ", failing:" + failures) + "; adjoint error " + fmt(adjoint, 3) +
                  " (< 1e-10)"};
}

Outcome rounding_unit() {
  bool binary = true;
  for (int i = 0; i <= 1000; ++i) {
    const double x = i / 1000.0;
    const double y = nn::st_round(V(Tn({1}, {x}))).value()[0];
    binary = binary && (y == 0.0 || y == 1.0) && y == (x >= 0.5 ? 1.0 : 0.0);
  }
  // Backward factors as seen through the graph.
  auto factor = [](double x) {
    V probe(Tn({1}, {x}), true);
    nn::backward(nn::mean(nn::st_round(probe)));
    return probe.grad()[0];
  };
  const double at_half = factor(0.5), at_zero = factor(0.0);
  const double s = 1.0 / (1.0 + std::exp(5.0));
  const double expected_zero = s * (1.0 - s);
  const bool ok = binary && at_half == 0.25 && std::abs(at_zero - expected_zero) < 1e-12;
  return {ok, std::string("forward binary on [0,1]: ") + (binary ? "yes" : "no") + "; factor(0.5) = " +
                  fmt(at_half, 17) + "; factor(0) = " + fmt(at_zero, 17) + " vs " + fmt(expected_zero, 17)};
}

Outcome loss_unit(const RunConfig& desk) {
  const double bce = nn::bce_loss(V(Tn({2}, {0.5, 0.5})), Tn({2}, {1.0, 0.0})).value()[0];

  // Zero dense head: the discriminator outputs sigmoid(0) = 0.5 for any input.
  Discriminator<double> disc(desk.discriminator, 7);
  for (auto& p : disc.params().items())
    if (p.name.rfind("disc.dense", 0) == 0) p.var.mutable_value().fill(0.0);
  nn::Adam<double> adam(nn::AdamConfig{});
  std::vector<QuadrantImage> real, fake;
  for (std::uint64_t i = 0; i < 4; ++i) {
    real.push_back(random_shell(desk.domain, 100 + i, 5, 1.0));
    fake.push_back(random_shell(desk.domain, 200 + i, 3, 1.0));
  }
  const double d_out = disc.forward(V(images_to_tensor<double>(std::span<const QuadrantImage>(real)))).value()[0];
  const double l_d = discriminator_step(disc, adam, images_to_tensor<double>(std::span<const QuadrantImage>(real)),
                                        images_to_tensor<double>(std::span<const QuadrantImage>(fake)));
  const double ln2 = std::log(2.0);
  const bool ok = std::abs(bce - ln2) < 1e-12 && d_out == 0.5 && std::abs(l_d - 2 * ln2) < 1e-12;
  return {ok, "bce([0.5,0.5],[1,0]) - ln2 = " + fmt(bce - ln2, 3) + "; D = " + fmt(d_out) + ", L_d - 2 ln2 = " +
                  fmt(l_d - 2 * ln2, 3)};
}

// ---------------------------------------------------------------------------
// Surrogate and loop

constexpr std::size_t kTrainShells = 1000, kHeldOut = 200;

std::vector<DatasetRecord> shell_corpus(const RunConfig& desk, const fs::path& workdir) {
  RunConfig cfg = desk;
  cfg.loop.initial_dataset_size = kTrainShells + kHeldOut;
  return build_initial_dataset(cfg, workdir / "shells.clk", [](const std::string& m) {
    if (m.find("00/") != std::string::npos && std::stoul(m.substr(m.find(':') + 2)) % 400 == 0) progress(m);
  });
}

Outcome surrogate_rank(const RunConfig& desk, const fs::path& workdir) {
  const auto corpus = shell_corpus(desk, workdir);
  std::vector<LabeledSample> train;
  for (std::size_t i = 0; i < kTrainShells; ++i) train.push_back({corpus[i].image, corpus[i].psi_r});
  ForwardNet<float> net(desk.forward, mix_seed(desk.seed, 0xf0));
  progress("training surrogate on " + std::to_string(train.size()) + " shells");
  const auto hist = train_forward(net, train, forward_train_config(desk, desk.loop.initial_forward_epochs,
                                                                   mix_seed(desk.seed, 0x5e)));
  std::vector<QuadrantImage> imgs;
  std::vector<double> truth;
  for (std::size_t i = kTrainShells; i < corpus.size(); ++i) imgs.push_back(corpus[i].image), truth.push_back(corpus[i].psi_r);
  const double rho = spearman(net.predict(imgs), truth);
  return {rho > 0.7, "Spearman on " + std::to_string(imgs.size()) + " held-out shells = " + fmt(rho) +
                         " (> 0.7); final val mse " + fmt(hist.back().val_mse)};
}

Outcome loop_improvement(const RunConfig& desk, const fs::path& workdir) {
  const fs::path run = workdir / "desk_run";
  // The initial designs are the first records of the shell corpus.
  if (!fs::exists(run / "initial" / "dataset.clk")) {
    auto corpus = shell_corpus(desk, workdir);
    corpus.resize(desk.loop.initial_dataset_size);
    fs::create_directories(run / "initial");
    save_dataset(run / "initial" / "dataset.clk", corpus);
  }
  const auto res = run_loop_in(desk, run, [](const std::string& m) {
    if (m.rfind("gen ", 0) == 0 && m.find("epoch") != std::string::npos) return;
    progress(m);
  });

  double initial_best = std::numeric_limits<double>::infinity();
  for (const auto& r : load_dataset(run / "initial" / "dataset.clk")) initial_best = std::min(initial_best, r.psi_r);

  bool monotone = true;
  double proposed_best = std::numeric_limits<double>::infinity();
  std::string trace;
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    const auto& r = res.history[i];
    if (i > 0 && r.best_psi_r > res.history[i - 1].best_psi_r) monotone = false;
    if (r.best_psi_r > initial_best) monotone = false;
    proposed_best = std::min(proposed_best, r.min_ratio);
    trace += " g" + std::to_string(r.generation) + "(min " + fmt(r.min_ratio, 3) + ", mean " +
             fmt(r.mean_psi_r / r.baseline_psi, 3) + ", best " + fmt(r.best_ratio, 3) + ")";
  }
  // Qualitative shape of the progress curve: do per-generation min and mean fall?
  const bool falling = res.history.size() > 1 && res.history.back().min_psi_r < res.history.front().min_psi_r &&
                       res.history.back().mean_psi_r < res.history.front().mean_psi_r;
  trace += "; per-generation min and mean falling: " + std::string(falling ? "yes" : "no");
  const bool four = res.history.size() == 4;
  const bool ok = four && monotone && res.best_psi_r / res.baseline_psi < 0.5;
  return {ok, std::to_string(res.history.size()) + " generations; best-so-far ratio " +
                  fmt(res.best_psi_r / res.baseline_psi) + " (< 0.5), initial-dataset best " +
                  fmt(initial_best / res.baseline_psi) + ", best proposed by the loop " + fmt(proposed_best) +
                  "; non-increasing: " + (monotone ? "yes" : "no") + ";" + trace};
}

Outcome determinism(const RunConfig& desk, const fs::path& workdir) {
  RunConfig cfg = desk;
  cfg.loop.initial_dataset_size = 64;
  cfg.loop.max_generations = 2;
  cfg.loop.epochs_per_generation = 2;
  cfg.gan.epochs = 2;
  cfg.gan.candidates_per_epoch = 64;
  cfg.loop.top_k = 16;
  cfg.loop.initial_forward_epochs = 10;
  cfg.loop.retrain_epochs = 5;
  std::vector<LoopResult> runs;
  for (const char* name : {"det_a", "det_b"}) {
    fs::remove_all(workdir / name);
    progress(std::string("determinism run ") + name);
    runs.push_back(run_loop_in(cfg, workdir / name));
  }
  const auto& a = runs[0].history;
  const auto& b = runs[1].history;
  bool same = a.size() == b.size() && !a.empty();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = same_outcome(a[i], b[i]);
  same = same && runs[0].best_image == runs[1].best_image;
  const bool files = slurp(workdir / "det_a" / "dataset.clk") == slurp(workdir / "det_b" / "dataset.clk");
  return {same && files, std::to_string(a.size()) + " generation records identical: " + (same ? "yes" : "no") +
                             "; dataset files identical: " + (files ? "yes" : "no")};
}

Outcome format_round_trips(const RunConfig& desk, const fs::path& workdir) {
  const fs::path dir = workdir / "roundtrip";
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto records = shell_corpus(desk, workdir);
  DatasetRecord odd;
  odd.image = random_shell(desk.domain, 5, 7, 1.0);
  odd.psi_r = std::numeric_limits<double>::denorm_min();
  odd.psi_p = std::numeric_limits<double>::quiet_NaN();
  records.push_back(odd);
  save_dataset(dir / "a.clk", records);
  const auto back = load_dataset(dir / "a.clk");
  bool data_ok = back.size() == records.size();
  for (std::size_t i = 0; data_ok && i < back.size(); ++i) data_ok = bit_equal(back[i], records[i]);
  save_dataset(dir / "b.clk", back);
  data_ok = data_ok && slurp(dir / "a.clk") == slurp(dir / "b.clk");

  // A forward net with Adam state, and a generator checkpoint.
  ForwardNet<float> net(desk.forward, 3);
  std::vector<LabeledSample> few;
  for (std::size_t i = 1; i < 33; ++i) few.push_back({records[i].image, records[i].psi_r});
  auto tc = forward_train_config(desk, 1, 4);
  tc.val_fraction = 0.0;
  train_forward(net, few, tc);
  save_forward_net(dir / "f.ckpt", net);
  ForwardNet<float> restored(desk.forward, 99);
  load_forward_net(dir / "f.ckpt", restored);
  save_forward_net(dir / "g.ckpt", restored);
  std::vector<QuadrantImage> imgs;
  for (const auto& s : few) imgs.push_back(s.image);
  bool ckpt_ok = slurp(dir / "f.ckpt") == slurp(dir / "g.ckpt") && net.predict(imgs) == restored.predict(imgs) &&
                 restored.transform().mean == net.transform().mean && restored.transform().std == net.transform().std;

  Generator<float> gen(desk.generator, desk.domain, 11);
  const auto snap = nn::capture(gen.params());
  nn::save_checkpoint_file(dir / "gen.ckpt", snap);
  const auto loaded = nn::load_checkpoint_file(dir / "gen.ckpt");
  ckpt_ok = ckpt_ok && loaded.records == snap.records;
  nn::save_checkpoint_file(dir / "gen2.ckpt", loaded);
  ckpt_ok = ckpt_ok && slurp(dir / "gen.ckpt") == slurp(dir / "gen2.ckpt");

  return {data_ok && ckpt_ok, std::to_string(records.size()) + "-record dataset bit-exact: " +
                                  (data_ok ? "yes" : "no") + "; checkpoints bit-exact: " + (ckpt_ok ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  fs::path workdir = "acceptance_work";
  fs::path config_path = CLOAK_DESK_CONFIG;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "cache for datasets and runs");
  app.add_option("--config", config_path, "desk-scale run configuration")->check(CLI::ExistingFile);
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(workdir);
  const RunConfig desk = load_run_config(config_path);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"solver validation", [] { return solver_validation(); }},
      {"flux-surface independence", [&] { return flux_surface_independence(desk); }},
      {"gradient integrity", [] { return gradient_integrity(); }},
      {"rounding unit behaviour", [] { return rounding_unit(); }},
      {"loss units", [&] { return loss_unit(desk); }},
      {"surrogate rank quality", [&] { return surrogate_rank(desk, workdir); }},
      {"feedback-loop improvement", [&] { return loop_improvement(desk, workdir); }},
      {"determinism", [&] { return determinism(desk, workdir); }},
      {"format round trips", [&] { return format_round_trips(desk, workdir); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail << " ("
              << fmt(secs, 3) << " s)" << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
