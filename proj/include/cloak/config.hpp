#pragma once

// Run configuration: one TOML document covering every tunable. Unknown keys
// and tables are rejected so that typos fail loudly.

#include <toml.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cloak/dcgan.hpp"
#include "cloak/em_solver.hpp"

namespace cloak {

struct LoopConfig {
  int max_generations = 11;
  int epochs_per_generation = 60;
  std::size_t top_k = 50;
  std::size_t initial_dataset_size = 1000;
  int stagnation_patience = 2;
  double stagnation_tolerance = 0.01;  // relative improvement that resets patience
  int curve_count_min = 3;
  int curve_count_max = 10;
  double curve_scale = 1.0;
  bool reinit_gan = true;
  bool warm_start = true;    // surrogate retraining continues from the previous weights
  int initial_forward_epochs = 100;
  int retrain_epochs = 50;   // per generation; half the initial budget by default
  std::size_t workers = 0;   // simulation threads, 0 = all cores

  void validate(const GanConfig& gan) const {
    if (max_generations <= 0 || epochs_per_generation <= 0 || top_k == 0 || initial_dataset_size == 0 ||
        stagnation_patience <= 0 || initial_forward_epochs < 0 || retrain_epochs < 0)
      throw ConfigError("loop: counts must be positive");
    if (!(stagnation_tolerance >= 0.0 && stagnation_tolerance < 1.0))
      throw ConfigError("loop: stagnation_tolerance must lie in [0, 1)");
    if (curve_count_min < 0 || curve_count_max < curve_count_min)
      throw ConfigError("loop: need 0 <= curve_count_min <= curve_count_max");
    if (!(curve_scale > 0.0)) throw ConfigError("loop: curve_scale must be positive");
    if (top_k > static_cast<std::size_t>(epochs_per_generation) * gan.candidates_per_epoch)
      throw ConfigError("loop: top_k exceeds the harvest size (epochs_per_generation x candidates_per_epoch)");
  }

  std::size_t worker_count() const {
    if (workers > 0) return workers;
    return std::max(1u, std::thread::hardware_concurrency());
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  DomainSpec domain;
  SourceSpec source;
  SolverOptions solver;
  double grid_resolution = 20.0;
  ForwardNetConfig forward;
  ForwardTrainConfig forward_train;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  GanConfig gan;
  LoopConfig loop;
  std::string run_root = "run";

  void validate() const {
    domain.validate();
    source.validate();
    if (!(grid_resolution >= 10.0)) throw ConfigError("solver: grid_resolution must be >= 10 cells per wavelength");
    if (solver.pml_cells < 0 || !(solver.pml_reflection > 0.0 && solver.pml_reflection < 1.0) ||
        !(solver.residual_tol > 0.0))
      throw ConfigError("solver: invalid PML or tolerance settings");
    if (domain.image_size != 64) throw ConfigError("domain: the dataset format fixes image_size at 64");
    auto fwd = forward;
    fwd.image_size = domain.image_size;
    fwd.validate();
    if (forward_train.batch_size == 0 || !(forward_train.lr > 0.0) ||
        !(forward_train.val_fraction >= 0.0 && forward_train.val_fraction < 1.0))
      throw ConfigError("forward_train: invalid batch_size, lr or val_fraction");
    generator.validate();
    discriminator.validate();
    gan.validate();
    loop.validate(gan);
  }
};

namespace detail {

/// Reads typed keys from one table and remembers which were consumed.
class TableReader {
 public:
  TableReader(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!t_) return;
    const toml::node* n = t_->get(key);
    if (!n) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = n->value_exact<bool>();
      if (!v) fail(key, "boolean");
      out = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = n->value<double>();
      if (!v || !(n->is_floating_point() || n->is_integer())) fail(key, "number");
      out = static_cast<T>(*v);
    } else if constexpr (std::is_integral_v<T>) {
      auto v = n->value_exact<std::int64_t>();
      if (!v) fail(key, "integer");
      if (std::is_unsigned_v<T> && *v < 0) fail(key, "non-negative integer");
      out = static_cast<T>(*v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = n->value_exact<std::string>();
      if (!v) fail(key, "string");
      out = *v;
    } else {
      const auto* arr = n->as_array();
      if (!arr) fail(key, "array of integers");
      out.clear();
      for (const auto& e : *arr) {
        auto v = e.value_exact<std::int64_t>();
        if (!v || *v <= 0) fail(key, "array of positive integers");
        out.push_back(static_cast<typename T::value_type>(*v));
      }
    }
  }

  void mark(const char* key) { seen_.insert(key); }

  void reject_unknown() const {
    if (!t_) return;
    for (const auto& [k, v] : *t_)
      if (!seen_.count(std::string(k.str())))
        throw ConfigError("config: unknown key '" + (name_.empty() ? "" : name_ + ".") + std::string(k.str()) + "'");
  }

 private:
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("config: '" + (name_.empty() ? "" : name_ + ".") + key + "' must be a " + what);
  }

  const toml::table* t_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text, const std::string& source_name = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config: " << e.description() << " at " << e.source().begin;
    throw ConfigError(os.str());
  }

  RunConfig c;
  detail::TableReader top(&root, "");
  top.get("seed", c.seed);
  auto section = [&](const char* name) {
    top.mark(name);
    const toml::node* n = root.get(name);
    if (n && !n->is_table()) throw ConfigError(std::string("config: '") + name + "' must be a table");
    return detail::TableReader(n ? n->as_table() : nullptr, name);
  };

  {
    auto t = section("domain");
    t.get("r_object", c.domain.r_object);
    t.get("r_shell", c.domain.r_shell);
    t.get("r_domain", c.domain.r_domain);
    t.get("wavelength", c.domain.wavelength);
    t.get("eps_shell", c.domain.eps_shell);
    t.get("eps_background", c.domain.eps_background);
    t.get("image_size", c.domain.image_size);
    t.reject_unknown();
  }
  {
    auto t = section("source");
    t.get("amplitude", c.source.amplitude);
    t.reject_unknown();
  }
  {
    auto t = section("solver");
    t.get("grid_resolution", c.grid_resolution);
    t.get("pml_cells", c.solver.pml_cells);
    t.get("pml_reflection", c.solver.pml_reflection);
    t.get("residual_tol", c.solver.residual_tol);
    t.get("workers", c.loop.workers);
    t.reject_unknown();
  }
  {
    auto t = section("forward");
    t.get("conv_channels", c.forward.conv_channels);
    t.get("kernel", c.forward.kernel);
    t.get("stride", c.forward.stride);
    t.get("padding", c.forward.padding);
    t.get("leaky_slope", c.forward.leaky_slope);
    t.get("hidden", c.forward.hidden);
    t.reject_unknown();
  }
  {
    auto t = section("forward_train");
    t.get("epochs", c.loop.initial_forward_epochs);
    t.get("retrain_epochs", c.loop.retrain_epochs);
    t.get("warm_start", c.loop.warm_start);
    t.get("batch_size", c.forward_train.batch_size);
    t.get("lr", c.forward_train.lr);
    t.get("val_fraction", c.forward_train.val_fraction);
    t.reject_unknown();
  }
  {
    auto t = section("generator");
    t.get("noise_dim", c.generator.noise_dim);
    t.get("base_side", c.generator.base_side);
    t.get("projection_channels", c.generator.projection_channels);
    t.get("channels", c.generator.channels);
    t.get("kernel", c.generator.kernel);
    t.get("stride", c.generator.stride);
    t.get("padding", c.generator.padding);
    t.get("leaky_slope", c.generator.leaky_slope);
    t.reject_unknown();
  }
  {
    auto t = section("discriminator");
    t.get("channels", c.discriminator.channels);
    t.get("kernel", c.discriminator.kernel);
    t.get("stride", c.discriminator.stride);
    t.get("padding", c.discriminator.padding);
    t.get("leaky_slope", c.discriminator.leaky_slope);
    t.reject_unknown();
  }
  {
    auto t = section("gan");
    t.get("alpha_g", c.gan.alpha_g);
    t.get("alpha_d", c.gan.alpha_d);
    t.get("alpha_f_numerator", c.gan.alpha_f_numerator);
    std::string space = "raw";
    t.get("lf_space", space);
    if (space == "raw")
      c.gan.lf_space = ForwardLossSpace::raw;
    else if (space == "transformed")
      c.gan.lf_space = ForwardLossSpace::transformed;
    else
      throw ConfigError("config: 'gan.lf_space' must be \"raw\" or \"transformed\"");
    t.get("batch_size", c.gan.batch_size);
    t.get("candidates_per_epoch", c.gan.candidates_per_epoch);
    t.get("gen_lr", c.gan.gen_adam.lr);
    t.get("gen_beta1", c.gan.gen_adam.beta1);
    t.get("gen_beta2", c.gan.gen_adam.beta2);
    t.get("disc_lr", c.gan.disc_adam.lr);
    t.get("disc_beta1", c.gan.disc_adam.beta1);
    t.get("disc_beta2", c.gan.disc_adam.beta2);
    t.reject_unknown();
  }
  {
    auto t = section("loop");
    t.get("max_generations", c.loop.max_generations);
    t.get("epochs_per_generation", c.loop.epochs_per_generation);
    t.get("top_k", c.loop.top_k);
    t.get("initial_dataset_size", c.loop.initial_dataset_size);
    t.get("stagnation_patience", c.loop.stagnation_patience);
    t.get("stagnation_tolerance", c.loop.stagnation_tolerance);
    t.get("curve_count_min", c.loop.curve_count_min);
    t.get("curve_count_max", c.loop.curve_count_max);
    t.get("curve_scale", c.loop.curve_scale);
    t.get("reinit_gan", c.loop.reinit_gan);
    t.reject_unknown();
  }
  {
    auto t = section("output");
    t.get("run_root", c.run_root);
    t.reject_unknown();
  }
  top.reject_unknown();

  c.forward.image_size = c.domain.image_size;
  c.generator.image_size = c.domain.image_size;
  c.discriminator.image_size = c.domain.image_size;
  c.gan.epochs = c.loop.epochs_per_generation;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

/// TOML text that parses back to the same configuration.
inline std::string to_toml(const RunConfig& c) {
  auto ints = [](const std::vector<std::size_t>& v) {
    toml::array a;
    for (auto x : v) a.push_back(static_cast<std::int64_t>(x));
    return a;
  };
  auto i64 = [](auto v) { return static_cast<std::int64_t>(v); };
  toml::table root{
      {"seed", i64(c.seed)},
      {"domain", toml::table{{"r_object", c.domain.r_object},
                             {"r_shell", c.domain.r_shell},
                             {"r_domain", c.domain.r_domain},
                             {"wavelength", c.domain.wavelength},
                             {"eps_shell", c.domain.eps_shell},
                             {"eps_background", c.domain.eps_background},
                             {"image_size", i64(c.domain.image_size)}}},
      {"source", toml::table{{"amplitude", c.source.amplitude}}},
      {"solver", toml::table{{"grid_resolution", c.grid_resolution},
                             {"pml_cells", i64(c.solver.pml_cells)},
                             {"pml_reflection", c.solver.pml_reflection},
                             {"residual_tol", c.solver.residual_tol},
                             {"workers", i64(c.loop.workers)}}},
      {"forward", toml::table{{"conv_channels", ints(c.forward.conv_channels)},
                              {"kernel", i64(c.forward.kernel)},
                              {"stride", i64(c.forward.stride)},
                              {"padding", i64(c.forward.padding)},
                              {"leaky_slope", c.forward.leaky_slope},
                              {"hidden", i64(c.forward.hidden)}}},
      {"forward_train", toml::table{{"epochs", i64(c.loop.initial_forward_epochs)},
                                    {"retrain_epochs", i64(c.loop.retrain_epochs)},
                                    {"warm_start", c.loop.warm_start},
                                    {"batch_size", i64(c.forward_train.batch_size)},
                                    {"lr", c.forward_train.lr},
                                    {"val_fraction", c.forward_train.val_fraction}}},
      {"generator", toml::table{{"noise_dim", i64(c.generator.noise_dim)},
                                {"base_side", i64(c.generator.base_side)},
                                {"projection_channels", i64(c.generator.projection_channels)},
                                {"channels", ints(c.generator.channels)},
                                {"kernel", i64(c.generator.kernel)},
                                {"stride", i64(c.generator.stride)},
                                {"padding", i64(c.generator.padding)},
                                {"leaky_slope", c.generator.leaky_slope}}},
      {"discriminator", toml::table{{"channels", ints(c.discriminator.channels)},
                                    {"kernel", i64(c.discriminator.kernel)},
                                    {"stride", i64(c.discriminator.stride)},
                                    {"padding", i64(c.discriminator.padding)},
                                    {"leaky_slope", c.discriminator.leaky_slope}}},
      {"gan", toml::table{{"alpha_g", c.gan.alpha_g},
                          {"alpha_d", c.gan.alpha_d},
                          {"alpha_f_numerator", c.gan.alpha_f_numerator},
                          {"lf_space", c.gan.lf_space == ForwardLossSpace::raw ? "raw" : "transformed"},
                          {"batch_size", i64(c.gan.batch_size)},
                          {"candidates_per_epoch", i64(c.gan.candidates_per_epoch)},
                          {"gen_lr", c.gan.gen_adam.lr},
                          {"gen_beta1", c.gan.gen_adam.beta1},
                          {"gen_beta2", c.gan.gen_adam.beta2},
                          {"disc_lr", c.gan.disc_adam.lr},
                          {"disc_beta1", c.gan.disc_adam.beta1},
                          {"disc_beta2", c.gan.disc_adam.beta2}}},
      {"loop", toml::table{{"max_generations", i64(c.loop.max_generations)},
                           {"epochs_per_generation", i64(c.loop.epochs_per_generation)},
                           {"top_k", i64(c.loop.top_k)},
                           {"initial_dataset_size", i64(c.loop.initial_dataset_size)},
                           {"stagnation_patience", i64(c.loop.stagnation_patience)},
                           {"stagnation_tolerance", c.loop.stagnation_tolerance},
                           {"curve_count_min", i64(c.loop.curve_count_min)},
                           {"curve_count_max", i64(c.loop.curve_count_max)},
                           {"curve_scale", c.loop.curve_scale},
                           {"reinit_gan", c.loop.reinit_gan}}},
      {"output", toml::table{{"run_root", c.run_root}}},
  };
  std::ostringstream os;
  os << root << '\n';
  return os.str();
}

}  // namespace cloak
