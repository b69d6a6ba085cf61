#include <string>

#include "doctest.h"
#include "json.hpp"
#include "nopf/errors.hpp"
#include "nopf/run_config.hpp"

using namespace nopf;

TEST_CASE("defaults round-trip through the INI text") {
  const RunConfig c;
  const std::string text = serialize_run_config(c);
  const RunConfig back = parse_run_config(text);
  CHECK(serialize_run_config(back) == text);
  CHECK(back.sim.x0 == c.sim.x0);
  CHECK(back.sampling.x0_box.size() == 2);
  CHECK(back.bench.dx_list == c.bench.dx_list);
}

TEST_CASE("overrides change exactly their key and survive a round trip") {
  RunConfig c;
  apply_override(c, "sim.gamma=250");
  apply_override(c, "sampling.x0_box=0, 0.5; 1, 2");
  apply_override(c, "bench.dx_list=0.02,0.01");
  apply_override(c, "surrogate.branch_layers=16,16");
  CHECK(c.sim.gamma == 250.0);
  CHECK(c.sampling.x0_box[0].hi == 0.5);
  CHECK(c.sampling.x0_box[1].lo == 1.0);
  CHECK(c.bench.dx_list.size() == 2);
  const RunConfig back = parse_run_config(serialize_run_config(c));
  CHECK(serialize_run_config(back) == serialize_run_config(c));
  CHECK(back.surrogate.branch_layers == std::vector<std::size_t>{16, 16});

  c.sim.dt = 0.1 + 0.2;  // not representable in fewer than 17 digits
  CHECK(parse_run_config(serialize_run_config(c)).sim.dt == c.sim.dt);
}

TEST_CASE("unknown keys and sections are rejected") {
  CHECK_THROWS_AS(parse_run_config("[sim]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[nowhere]\ndt = 1\n"), ConfigError);
  RunConfig c;
  try {
    apply_override(c, "sim.bogus=1");
    FAIL("accepted unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("sim.bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_override(c, "no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "sim.dt=fast"), ConfigError);
}

TEST_CASE("partial files keep the remaining defaults") {
  const RunConfig c = parse_run_config("[sim]\ntrue_delay = 1.5\n[train]\nepochs = 7\n");
  CHECK(c.sim.true_delay == 1.5);
  CHECK(c.train.epochs == 7);
  CHECK(c.sim.gamma == 1000.0);
}

TEST_CASE("seed and validation") {
  RunConfig c;
  c.set_seed(99);
  CHECK(c.sim.seed == 99);
  CHECK(c.sampling.seed == 99);
  CHECK(c.train.seed == 99);
  c.bench.repetitions = 50;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.bench.repetitions = 100;
  c.validate();
  c.sim.d_min = 3.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("json echo carries every key") {
  const RunConfig c;
  const nlohmann::json j = nlohmann::json::parse(run_config_json(c));
  for (const std::string& key : run_config_keys()) {
    const auto dot = key.find('.');
    CHECK(j.at(key.substr(0, dot)).contains(key.substr(dot + 1)));
  }
}
