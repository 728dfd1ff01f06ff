#include <doctest.h>

#include <fstream>

#include "mqc/config.hpp"
#include "test_helpers.hpp"

using namespace mqc;

TEST_CASE("toml parser covers the schema subset") {
  const std::string text = R"(
# top-level comment
schema_version = 1
name = "demo run"   # trailing comment
ratio = 0.75
count = 42
flag = true
off = false

[motion]
rotation_range_deg = 8.5
n_transforms_max = 4

[sites]
synth = ["siteA", "siteB"]
fracs = [0.7, 0.1, 0.2]
)";
  const TomlDoc doc = TomlDoc::parse(text);
  CHECK(doc.get_int("schema_version") == 1);
  CHECK(doc.get_string("name") == "demo run");
  CHECK(doc.get_double("ratio") == doctest::Approx(0.75));
  CHECK(doc.get_int("count") == 42);
  CHECK(doc.get_double("count") == doctest::Approx(42.0));  // int promotes
  CHECK(doc.get_bool("flag"));
  CHECK(!doc.get_bool("off"));
  CHECK(doc.get_double("motion.rotation_range_deg") == doctest::Approx(8.5));
  CHECK(doc.get_int("motion.n_transforms_max") == 4);
  CHECK(doc.get_string_array("sites.synth") ==
        std::vector<std::string>{"siteA", "siteB"});
  const auto fracs = doc.get_double_array("sites.fracs");
  REQUIRE(fracs.size() == 3);
  CHECK(fracs[0] == doctest::Approx(0.7));
  CHECK(!doc.has("missing"));
  CHECK_THROWS_AS(doc.get_string("missing"), ArgumentError);
  CHECK_THROWS_AS(doc.get_int("name"), ArgumentError);  // type mismatch
}

TEST_CASE("toml parser rejects malformed input") {
  CHECK_THROWS_AS(TomlDoc::parse("key"), FormatError);
  CHECK_THROWS_AS(TomlDoc::parse("key = "), FormatError);
  CHECK_THROWS_AS(TomlDoc::parse("[unclosed\nk = 1"), FormatError);
  CHECK_THROWS_AS(TomlDoc::parse("s = \"unterminated"), FormatError);
}

TEST_CASE("run config loads defaults and overrides") {
  mqc::testing::TempDir tmp("config");
  {
    std::ofstream out(tmp.str("run.toml"));
    out << "schema_version = 1\n"
           "passes = 25\n"
           "master_seed = 99\n"
           "workers = 2\n"
           "out_dir = \"/tmp/x\"\n"
           "\n"
           "[motion]\n"
           "rotation_range_deg = 7.0\n"
           "n_transforms_max = 5\n"
           "\n"
           "[augment]\n"
           "bias_order = 2\n"
           "enable_flip = false\n"
           "\n"
           "[bins]\n"
           "n_bins = 40\n"
           "\n"
           "[pretrain]\n"
           "learning_rate = 1e-4\n";
  }
  const RunConfig cfg = RunConfig::load(tmp.str("run.toml"));
  CHECK(cfg.passes == 25);
  CHECK(cfg.master_seed == 99);
  CHECK(cfg.workers == 2);
  CHECK(cfg.out_dir == "/tmp/x");
  CHECK(cfg.motion.rotation_range_deg == doctest::Approx(7.0));
  CHECK(cfg.motion.n_transforms_max == 5);
  CHECK(cfg.augment.bias_order == 2);
  CHECK(!cfg.augment.enable_flip);
  CHECK(cfg.bins.n_bins == 40);
  CHECK(cfg.pretrain_cfg.learning_rate == doctest::Approx(1e-4));

  // untouched values keep their defaults
  CHECK(cfg.motion.translation_range_mm == doctest::Approx(10.0));
  CHECK(cfg.augment.roi == std::array<int, 3>{160, 192, 160});
  CHECK(cfg.transfer_cfg.learning_rate == doctest::Approx(5e-4));
  CHECK(cfg.transfer_cfg.batch_size == 12);
  CHECK(cfg.scratch_cfg.learning_rate == doctest::Approx(3e-6));
  CHECK(cfg.transfer_dropout == doctest::Approx(0.7));
  CHECK(cfg.scratch_dropout == doctest::Approx(0.68));
  CHECK(cfg.trunk_hidden == std::vector<int>{64, 32});
}

TEST_CASE("run config rejects unknown keys and bad versions") {
  SUBCASE("unknown key") {
    const TomlDoc doc =
        TomlDoc::parse("schema_version = 1\nmystery_knob = 3\n");
    CHECK_THROWS_AS(RunConfig::from_toml(doc), FormatError);
  }
  SUBCASE("unknown table key") {
    const TomlDoc doc =
        TomlDoc::parse("schema_version = 1\n[motion]\nwobble = 1.0\n");
    CHECK_THROWS_AS(RunConfig::from_toml(doc), FormatError);
  }
  SUBCASE("wrong schema version") {
    const TomlDoc doc = TomlDoc::parse("schema_version = 2\n");
    CHECK_THROWS_AS(RunConfig::from_toml(doc), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(RunConfig::load("/nonexistent/run.toml"), IoError);
  }
}
