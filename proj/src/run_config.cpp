#include "nopf/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"

#include "nopf/errors.hpp"

namespace nopf {

namespace {

struct Key {
  std::string section;
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item));
  return out;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

std::string fmt_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, item));
  return out;
}

Interval parse_interval(const std::string& key, const std::string& text) {
  const std::vector<double> v = parse_list(key, text);
  if (v.size() != 2) throw ConfigError(key + ": expected 'lo, hi'");
  return {v[0], v[1]};
}

std::string fmt_interval(Interval r) { return fmt(r.lo) + ", " + fmt(r.hi); }

// x0_box is written as "lo1, hi1; lo2, hi2".
std::vector<Interval> parse_box(const std::string& key, const std::string& text) {
  std::vector<Interval> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) out.push_back(parse_interval(key, item));
  return out;
}

std::string fmt_box(const std::vector<Interval>& box) {
  std::string s;
  for (std::size_t i = 0; i < box.size(); ++i) s += (i ? "; " : "") + fmt_interval(box[i]);
  return s;
}

template <class T>
Key number(std::string section, std::string name, T RunConfig::*group, double T::*field) {
  const std::string full = section + "." + name;
  return {section, name, [=](const RunConfig& c) { return fmt(c.*group.*field); },
          [=](RunConfig& c, const std::string& v) { c.*group.*field = parse_double(full, v); }};
}

template <class T, class U>
Key count(std::string section, std::string name, T RunConfig::*group, U T::*field) {
  const std::string full = section + "." + name;
  return {section, name, [=](const RunConfig& c) { return std::to_string(c.*group.*field); },
          [=](RunConfig& c, const std::string& v) { c.*group.*field = static_cast<U>(parse_u64(full, v)); }};
}

template <class T>
Key flag(std::string section, std::string name, T RunConfig::*group, bool T::*field) {
  const std::string full = section + "." + name;
  return {section, name, [=](const RunConfig& c) { return std::string(c.*group.*field ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { c.*group.*field = parse_bool(full, v); }};
}

template <class T>
Key text(std::string section, std::string name, T RunConfig::*group, std::string T::*field) {
  return {section, name, [=](const RunConfig& c) { return c.*group.*field; },
          [=](RunConfig& c, const std::string& v) { c.*group.*field = trim(v); }};
}

const std::vector<Key>& keys() {
  using R = RunConfig;
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    // plant
    k.push_back({"plant", "name", [](const R& c) { return c.sim.plant.name; },
                 [](R& c, const std::string& v) { c.sim.plant.name = trim(v); }});
    k.push_back({"plant", "k1", [](const R& c) { return fmt(c.sim.plant.constants.k1); },
                 [](R& c, const std::string& v) { c.sim.plant.constants.k1 = parse_double("plant.k1", v); }});
    k.push_back({"plant", "k2", [](const R& c) { return fmt(c.sim.plant.constants.k2); },
                 [](R& c, const std::string& v) { c.sim.plant.constants.k2 = parse_double("plant.k2", v); }});
    k.push_back({"plant", "ka", [](const R& c) { return fmt(c.sim.plant.constants.ka); },
                 [](R& c, const std::string& v) { c.sim.plant.constants.ka = parse_double("plant.ka", v); }});
    k.push_back({"plant", "kb", [](const R& c) { return fmt(c.sim.plant.constants.kb); },
                 [](R& c, const std::string& v) { c.sim.plant.constants.kb = parse_double("plant.kb", v); }});
    k.push_back({"plant", "x_star", [](const R& c) { return fmt_list(c.sim.plant.constants.x_star); },
                 [](R& c, const std::string& v) { c.sim.plant.constants.x_star = parse_list("plant.x_star", v); }});
    k.push_back({"plant", "linear_a", [](const R& c) { return fmt(c.sim.plant.linear_a); },
                 [](R& c, const std::string& v) { c.sim.plant.linear_a = parse_double("plant.linear_a", v); }});
    k.push_back({"plant", "linear_gain", [](const R& c) { return fmt(c.sim.plant.linear_gain); },
                 [](R& c, const std::string& v) { c.sim.plant.linear_gain = parse_double("plant.linear_gain", v); }});
    k.push_back({"plant", "zero_dim", [](const R& c) { return std::to_string(c.sim.plant.zero_dim); },
                 [](R& c, const std::string& v) { c.sim.plant.zero_dim = parse_u64("plant.zero_dim", v); }});
    // sim
    k.push_back(number("sim", "true_delay", &R::sim, &SimConfig::true_delay));
    k.push_back(number("sim", "d_hat0", &R::sim, &SimConfig::d_hat0));
    k.push_back(number("sim", "d_min", &R::sim, &SimConfig::d_min));
    k.push_back(number("sim", "d_max", &R::sim, &SimConfig::d_max));
    k.push_back(number("sim", "gamma", &R::sim, &SimConfig::gamma));
    k.push_back(number("sim", "b", &R::sim, &SimConfig::b));
    k.push_back(number("sim", "dt", &R::sim, &SimConfig::dt));
    k.push_back(number("sim", "t_final", &R::sim, &SimConfig::t_final));
    k.push_back(number("sim", "dx", &R::sim, &SimConfig::dx));
    k.push_back({"sim", "backend", [](const R& c) { return std::string(to_string(c.sim.backend)); },
                 [](R& c, const std::string& v) { c.sim.backend = backend_from_string(trim(v)); }});
    k.push_back(flag("sim", "open_loop", &R::sim, &SimConfig::open_loop));
    k.push_back({"sim", "x0", [](const R& c) { return fmt_list(c.sim.x0); },
                 [](R& c, const std::string& v) { c.sim.x0 = parse_list("sim.x0", v); }});
    k.push_back(number("sim", "initial_input", &R::sim, &SimConfig::initial_input));
    k.push_back({"sim", "scheme", [](const R& c) { return std::string(to_string(c.sim.scheme)); },
                 [](R& c, const std::string& v) { c.sim.scheme = scheme_from_string(trim(v)); }});
    k.push_back({"sim", "plant_integrator", [](const R& c) { return std::string(to_string(c.sim.plant_integrator)); },
                 [](R& c, const std::string& v) { c.sim.plant_integrator = scheme_from_string(trim(v)); }});
    k.push_back(flag("sim", "exact_adaptation_signals", &R::sim, &SimConfig::exact_adaptation_signals));
    k.push_back(count("sim", "seed", &R::sim, &SimConfig::seed));
    // sampling
    k.push_back(count("sampling", "trajectories", &R::sampling, &SamplingConfig::trajectories));
    k.push_back(count("sampling", "samples_per_trajectory", &R::sampling, &SamplingConfig::samples_per_trajectory));
    k.push_back(number("sampling", "horizon", &R::sampling, &SamplingConfig::horizon));
    k.push_back({"sampling", "x0_box", [](const R& c) { return fmt_box(c.sampling.x0_box); },
                 [](R& c, const std::string& v) { c.sampling.x0_box = parse_box("sampling.x0_box", v); }});
    k.push_back({"sampling", "true_delay", [](const R& c) { return fmt_interval(c.sampling.true_delay); },
                 [](R& c, const std::string& v) { c.sampling.true_delay = parse_interval("sampling.true_delay", v); }});
    k.push_back({"sampling", "d_hat0", [](const R& c) { return fmt_interval(c.sampling.d_hat0); },
                 [](R& c, const std::string& v) { c.sampling.d_hat0 = parse_interval("sampling.d_hat0", v); }});
    k.push_back(count("sampling", "grid_size", &R::sampling, &SamplingConfig::grid_size));
    k.push_back(count("sampling", "label_intervals", &R::sampling, &SamplingConfig::label_intervals));
    k.push_back(count("sampling", "seed", &R::sampling, &SamplingConfig::seed));
    k.push_back(count("sampling", "threads", &R::sampling, &SamplingConfig::threads));
    k.push_back(number("sampling", "max_discard_fraction", &R::sampling, &SamplingConfig::max_discard_fraction));
    // surrogate
    k.push_back(count("surrogate", "state_dim", &R::surrogate, &SurrogateArchitecture::state_dim));
    k.push_back(count("surrogate", "input_grid_size", &R::surrogate, &SurrogateArchitecture::input_grid_size));
    k.push_back({"surrogate", "branch_layers", [](const R& c) { return fmt_sizes(c.surrogate.branch_layers); },
                 [](R& c, const std::string& v) { c.surrogate.branch_layers = parse_sizes("surrogate.branch_layers", v); }});
    k.push_back({"surrogate", "trunk_layers", [](const R& c) { return fmt_sizes(c.surrogate.trunk_layers); },
                 [](R& c, const std::string& v) { c.surrogate.trunk_layers = parse_sizes("surrogate.trunk_layers", v); }});
    k.push_back(count("surrogate", "latent_dim", &R::surrogate, &SurrogateArchitecture::latent_dim));
    k.push_back({"surrogate", "activation", [](const R& c) { return std::string(to_string(c.surrogate.activation)); },
                 [](R& c, const std::string& v) { c.surrogate.activation = activation_from_string(trim(v)); }});
    k.push_back(flag("surrogate", "residual", &R::surrogate, &SurrogateArchitecture::residual));
    // train
    k.push_back(number("train", "learning_rate", &R::train, &TrainConfig::learning_rate));
    k.push_back(count("train", "batch_size", &R::train, &TrainConfig::batch_size));
    k.push_back(count("train", "epochs", &R::train, &TrainConfig::epochs));
    k.push_back(number("train", "adam_beta1", &R::train, &TrainConfig::adam_beta1));
    k.push_back(number("train", "adam_beta2", &R::train, &TrainConfig::adam_beta2));
    k.push_back(number("train", "adam_eps", &R::train, &TrainConfig::adam_eps));
    k.push_back(count("train", "seed", &R::train, &TrainConfig::seed));
    k.push_back(count("train", "patience", &R::train, &TrainConfig::patience));
    k.push_back(number("train", "validation_fraction", &R::train, &TrainConfig::validation_fraction));
    k.push_back(number("train", "target_epsilon", &R::train, &TrainConfig::target_epsilon));
    k.push_back(flag("train", "parallel", &R::train, &TrainConfig::parallel));
    k.push_back(count("train", "threads", &R::train, &TrainConfig::threads));
    // bench
    k.push_back({"bench", "dx_list", [](const R& c) { return fmt_list(c.bench.dx_list); },
                 [](R& c, const std::string& v) { c.bench.dx_list = parse_list("bench.dx_list", v); }});
    k.push_back(count("bench", "repetitions", &R::bench, &BenchConfig::repetitions));
    k.push_back(count("bench", "pool_size", &R::bench, &BenchConfig::pool_size));
    // output
    k.push_back(text("output", "dataset", &R::output, &OutputConfig::dataset));
    k.push_back(text("output", "weights", &R::output, &OutputConfig::weights));
    k.push_back(text("output", "trajectory", &R::output, &OutputConfig::trajectory));
    k.push_back(text("output", "bench", &R::output, &OutputConfig::bench));
    k.push_back(text("output", "report", &R::output, &OutputConfig::report));
    return k;
  }();
  return table;
}

const Key* find_key(const std::string& section, const std::string& name) {
  for (const Key& k : keys()) {
    if (k.section == section && k.name == name) return &k;
  }
  return nullptr;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  sim.seed = seed;
  sampling.seed = seed;
  train.seed = seed;
}

void RunConfig::validate() const {
  sim.validate();
  train.validate();
  surrogate.validate();
  if (bench.dx_list.empty()) throw ConfigError("bench.dx_list must not be empty");
  for (double dx : bench.dx_list) {
    if (!(dx > 0.0 && dx <= 0.5)) throw ConfigError("bench.dx_list entries must lie in (0, 0.5]");
  }
  if (bench.repetitions < 100) throw ConfigError("bench.repetitions must be >= 100");
}

RunConfig parse_run_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' must sit inside a section");
    }
    for (const auto& [name, value] : body) {
      const Key* k = find_key(section, name);
      if (k == nullptr) throw ConfigError("unknown config key '" + section + "." + name + "'");
      k->set(config, value.data());
    }
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const Key& k : keys()) {
    if (k.section != section) {
      if (!section.empty()) out += '\n';
      section = k.section;
      out += "[" + section + "]\n";
    }
    out += k.name + " = " + k.get(config) + '\n';
  }
  return out;
}

std::string run_config_json(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const Key& k : keys()) j[k.section][k.name] = k.get(config);
  return j.dump();
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string name = trim(assignment.substr(dot + 1, eq - dot - 1));
  const Key* k = find_key(section, name);
  if (k == nullptr) throw ConfigError("unknown config key '" + section + "." + name + "'");
  k->set(config, assignment.substr(eq + 1));
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.section + "." + k.name);
  return out;
}

}  // namespace nopf
