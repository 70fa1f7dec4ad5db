#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cosplace/binary_io.hpp"
#include "cosplace/cli/commands.hpp"
#include "cosplace/cli/run_config.hpp"
#include "cosplace/error.hpp"
#include "cosplace/ingest.hpp"
#include "cosplace/partition.hpp"
#include "cosplace/retrieval.hpp"

namespace cosplace::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int status;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

double report_recall(const nlohmann::json& j) { return report_from_json(j).recall_at(1); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cosplace_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const char* name) const { return (dir_ / name).string(); }

  // A small city and a config tuned so training finishes quickly.
  void make_city() {
    io::write_file(path("cfg.json"), R"({
      "seed": 3,
      "partition": {"N": 1, "L": 2, "min_images_per_class": 5},
      "train": {"groups_used": 2, "iterations_per_epoch": 20, "total_epochs": 2,
                "batch_size": 8, "learning_rate": 0.01, "val_fraction": 0.1},
      "model": {"output_dim": 8},
      "city": {"extent_m": 120, "latent_dim": 8, "feature_map_shape": [8, 2, 2]}
    })");
    const Result r = run({"--config", path("cfg.json"), "synth", "--out-dir", path("city")});
    ASSERT_EQ(r.status, 0) << r.err;
  }

  fs::path dir_;
};

TEST(RunConfig, DefaultsFollowTheProtocol) {
  const RunConfig c = run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.partition.cell_size_m, 10.0);
  EXPECT_EQ(c.partition.heading_bin_deg, 30);
  EXPECT_EQ(c.partition.translation_separation, 5);
  EXPECT_EQ(c.partition.heading_separation, 2);
  EXPECT_EQ(c.partition.min_images_per_class, 10);
  EXPECT_EQ(c.train.loss.margin, 0.40);
  EXPECT_EQ(c.train.adam.learning_rate, 1e-5);
  EXPECT_EQ(c.train.batch_size, 32);
  EXPECT_EQ(c.train.groups_used, 8);
  EXPECT_EQ(c.eval.threshold_m, 25.0);
  EXPECT_EQ(c.eval.ks, (std::vector<int>{1, 5, 10, 20}));
}

TEST(RunConfig, RoundTripAndUnknownKeys) {
  RunConfig c;
  c.seed = 99;
  c.partition.translation_separation = 3;
  c.model.pooling.kind = PoolingKind::kMax;
  c.city.channels = 5;
  c.propagate();
  const nlohmann::json j = run_config_to_json(c);
  EXPECT_EQ(run_config_to_json(run_config_from_json(j)), j);

  nlohmann::json bad = j;
  bad["train"]["learning_rat"] = 1.0;
  try {
    run_config_from_json(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
    EXPECT_NE(std::string(e.what()).find("train.learning_rat"), std::string::npos);
  }
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"bogus", 1}}), Error);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"partition", {{"alpha", 7}}}}), Error);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"model", {{"pooling", "median"}}}}), Error);
}

TEST_F(CliTest, UsageAndErrorLines) {
  Result r = run({});
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error: E_USAGE: ", 0), 0u);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  r = run({"partition", "--manifest", path("missing.csv"), "--out", path("p.json")});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error: E_IO: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  EXPECT_EQ(run({"--help"}).status, 0);
}

TEST_F(CliTest, ConvertIsIdempotent) {
  io::write_file(path("in.csv"), "id,lat,lon,heading\na,37.7749,-122.4194,10\nb,37.775,-122.419,350\n");
  Result r = run({"convert", "--in", path("in.csv"), "--out", path("once.csv")});
  ASSERT_EQ(r.status, 0) << r.err;
  const std::string once = io::read_file(path("once.csv"));
  EXPECT_NE(once.find("east"), std::string::npos);
  EXPECT_EQ(once.rfind("# {", 0), 0u);
  r = run({"convert", "--in", path("once.csv"), "--out", path("twice.csv")});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(io::read_file(path("twice.csv")), once);
}

TEST_F(CliTest, ConvertRejectsMixedZones) {
  io::write_file(path("in.csv"), "id,lat,lon,heading\na,37.7,-122.4,0\nb,37.7,-116.0,0\n");
  const Result r = run({"convert", "--in", path("in.csv"), "--out", path("o.csv")});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error: E_ZONE_MISMATCH: ", 0), 0u) << r.err;
}

TEST_F(CliTest, PartitionStatsAndDeterminism) {
  make_city();
  const std::string manifest = path("city/database.csv");
  Result r = run({"partition", "--manifest", manifest, "--out", path("p1.json")});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("groups: 50"), std::string::npos) << r.out;
  ASSERT_EQ(run({"partition", "--manifest", manifest, "--out", path("p2.json")}).status, 0);
  EXPECT_EQ(io::read_file(path("p1.json")), io::read_file(path("p2.json")));

  r = run({"partition", "--manifest", manifest, "--out", path("p0.json"), "--min-images", "0"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto doc = nlohmann::json::parse(io::read_file(path("p0.json")));
  EXPECT_EQ(doc.at("discarded_count"), 0);
  EXPECT_EQ(doc.at("run_config").at("partition").at("min_images_per_class"), 0);
  EXPECT_NO_THROW(partition_from_json(doc));
}

TEST_F(CliTest, TrainEvalPipeline) {
  make_city();
  const std::string cfg = path("cfg.json");
  Result r = run({"--config", cfg, "partition", "--manifest", path("city/database.csv"), "--out",
                  path("p.json")});
  ASSERT_EQ(r.status, 0) << r.err;
  r = run({"--config", cfg, "train", "--manifest", path("city/database.csv"), "--features",
           path("city/features.bin"), "--partition", path("p.json"), "--out-dir", path("run")});
  ASSERT_EQ(r.status, 0) << r.err;
  for (const char* f : {"run/model.ckpt", "run/state.ckpt", "run/history.csv"}) {
    EXPECT_TRUE(fs::exists(path(f))) << f;
  }
  const std::string history = io::read_file(path("run/history.csv"));
  EXPECT_EQ(history.rfind("# {", 0), 0u);

  // Same seed, same history.
  r = run({"--config", cfg, "train", "--manifest", path("city/database.csv"), "--features",
           path("city/features.bin"), "--out-dir", path("run2")});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(io::read_file(path("run2/history.csv")), history);
  EXPECT_EQ(io::read_file(path("run2/model.ckpt")), io::read_file(path("run/model.ckpt")));

  r = run({"--config", cfg, "eval", "--model", path("run/model.ckpt"), "--baseline", "--oracle-features",
           path("city/oracle_features.bin"), "--db", path("city/database.csv"), "--db-features",
           path("city/features.bin"), "--queries", path("city/queries.csv"), "--json", path("eval.json")});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("random-init"), std::string::npos);
  const auto doc = nlohmann::json::parse(io::read_file(path("eval.json")));
  ASSERT_EQ(doc.at("reports").size(), 3u);
  EXPECT_EQ(doc.at("reports")[2].at("label"), "oracle");
  EXPECT_EQ(report_recall(doc.at("reports")[2]), 1.0);
  EXPECT_TRUE(doc.contains("run_config"));
}

TEST_F(CliTest, ThresholdMonotoneAtCliLevel) {
  make_city();
  double previous = -1.0;
  for (const char* t : {"1", "5", "25", "100"}) {
    const Result r = run({"--config", path("cfg.json"), "eval", "--baseline", "--db", path("city/database.csv"),
                          "--db-features", path("city/features.bin"), "--queries", path("city/queries.csv"),
                          "--threshold", t, "--json", path("e.json")});
    ASSERT_EQ(r.status, 0) << r.err;
    const double r1 = report_recall(nlohmann::json::parse(io::read_file(path("e.json"))).at("reports")[0]);
    EXPECT_GE(r1, previous);
    previous = r1;
  }
}

TEST_F(CliTest, SweepRowsAndEmptyValues) {
  make_city();
  const std::vector<std::string> base{"--config", path("cfg.json"), "sweep", "--dimension", "groups_used",
                                      "--manifest", path("city/database.csv"), "--features",
                                      path("city/features.bin"), "--queries", path("city/queries.csv"),
                                      "--out", path("sweep.csv"), "--values"};
  auto with = [&](const char* values) {
    auto args = base;
    args.push_back(values);
    return run(args);
  };
  Result r = with("");
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error: E_USAGE: ", 0), 0u) << r.err;
  r = with("1,2");
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream csv(io::read_file(path("sweep.csv")));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(csv, line)) {
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  }
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].rfind("groups_used,1,1,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("groups_used,2,2,", 0), 0u);
}

}  // namespace
}  // namespace cosplace::cli
