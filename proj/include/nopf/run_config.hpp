#pragma once

#include <string>
#include <vector>

#include "nopf/simulator.hpp"
#include "nopf/surrogate.hpp"
#include "nopf/training.hpp"

namespace nopf {

struct BenchConfig {
  std::vector<double> dx_list{0.01, 0.005, 0.001};
  std::size_t repetitions = 1000;
  std::size_t pool_size = 50;
};

struct OutputConfig {
  std::string dataset = "dataset.nods";
  std::string weights = "weights.nopf";
  std::string trajectory = "trajectory.csv";
  std::string bench = "bench.csv";
  std::string report = "train_report.txt";
};

// Everything a CLI invocation needs. Sections: plant, sim, sampling,
// surrogate, train, bench, output.
struct RunConfig {
  SimConfig sim;  // sim.plant selects the plant
  SamplingConfig sampling;
  SurrogateArchitecture surrogate;
  TrainConfig train;
  BenchConfig bench;
  OutputConfig output;

  // Sets the sampling, training and simulation seeds together.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

// INI text. Every key is optional; unknown sections or keys are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Full effective configuration, every key present, 17 significant digits.
std::string serialize_run_config(const RunConfig& config);

// JSON object of the same keys, for embedding in output metadata.
std::string run_config_json(const RunConfig& config);

// "section.key=value".
void apply_override(RunConfig& config, const std::string& assignment);

// All "section.key" names in serialization order.
std::vector<std::string> run_config_keys();

}  // namespace nopf
