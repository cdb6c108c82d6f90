#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "spnpb/csv.hpp"
#include "spnpb/serialize.hpp"
#include "spnpb/sim.hpp"
#include "support/oracles.hpp"

using namespace spnpb;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("spnpb_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& body) const {
    std::ofstream(path(name)) << body;
  }

  fs::path dir_;
};

std::string read_all(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

using ModelFile = TempDir;
using DatasetFile = TempDir;
using Csv = TempDir;

TEST_F(ModelFile, RoundTripIsBitExact) {
  ModelParams m = oracle::random_model(17, 3);
  m.pb_labels[1] = "alpha=0.5,beta=0.1";
  save_model(path("m.txt"), m);
  const ModelParams back = load_model(path("m.txt"));
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.norm, m.norm);
  EXPECT_EQ(back.flat_weights(), m.flat_weights());
  ASSERT_EQ(back.pb_table.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(back.pb_table[k], m.pb_table[k]);
  EXPECT_EQ(back.pb_labels, m.pb_labels);

  const RecurrentState rs = RecurrentState::zeros();
  const Vector s{{0.3, -0.1}}, u{{1.0, 0.5}};
  const auto a = forward(m, rs, s, u, m.pb_table[2]);
  const auto b = forward(back, rs, s, u, back.pb_table[2]);
  EXPECT_EQ(a.prediction.mean, b.prediction.mean);
  EXPECT_EQ(a.prediction.variance, b.prediction.variance);

  save_model(path("m2.txt"), back);
  EXPECT_EQ(read_all(path("m.txt")), read_all(path("m2.txt")));
}

TEST_F(ModelFile, RejectsMalformed) {
  const ModelParams m = oracle::random_model(3);
  save_model(path("m.txt"), m);
  const std::string good = read_all(path("m.txt"));

  write("trunc.txt", good.substr(0, good.size() / 2));
  EXPECT_THROW(load_model(path("trunc.txt")), FormatError);

  write("magic.txt", "not-a-model 1\n");
  EXPECT_THROW(load_model(path("magic.txt")), FormatError);

  std::string bad_version = good;
  bad_version.replace(bad_version.find(" 1\n"), 3, " 9\n");
  write("version.txt", bad_version);
  EXPECT_THROW(load_model(path("version.txt")), FormatError);

  std::string bad_number = good;
  const auto pos = bad_number.find("s_std") + 6;
  bad_number.replace(pos, 1, "x");
  write("number.txt", bad_number);
  EXPECT_THROW(load_model(path("number.txt")), FormatError);

  EXPECT_THROW(load_model(path("missing.txt")), FormatError);
}

TEST_F(DatasetFile, RoundTripKeepsLossAndLabels) {
  const auto trials = sim::collect_trials(sim::default_grid(), 30, 2, 5);
  save_dataset(path("d.csv"), trials);
  const auto back = load_dataset(path("d.csv"));
  ASSERT_EQ(back.size(), trials.size());
  for (std::size_t k = 0; k < trials.size(); ++k) {
    EXPECT_EQ(back[k].id, trials[k].id);
    EXPECT_EQ(back[k].label, trials[k].label);
    ASSERT_EQ(back[k].samples.size(), trials[k].samples.size());
    for (std::size_t i = 0; i < trials[k].samples.size(); ++i) {
      EXPECT_EQ(back[k].samples[i].s, trials[k].samples[i].s);
      EXPECT_EQ(back[k].samples[i].u, trials[k].samples[i].u);
      EXPECT_EQ(back[k].samples[i].tick, trials[k].samples[i].tick);
    }
  }
  ModelParams m = oracle::random_model(9, static_cast<int>(trials.size()));
  m.norm = compute_norm_stats(trials);
  EXPECT_NEAR(total_nll(m, back), total_nll(m, trials), 1e-12);
}

TEST_F(DatasetFile, RejectsMalformed) {
  write("empty.csv", "");
  EXPECT_THROW(load_dataset(path("empty.csv")), FormatError);
  write("header.csv", "trial_id,tick,s0\n");
  EXPECT_THROW(load_dataset(path("header.csv")), FormatError);
  const std::string head = "# spnpb-dataset 1 state_dim=1 command_dim=1\ntrial_id,tick,s0,u0\n";
  write("fields.csv", head + "0,0,1.0\n");
  EXPECT_THROW(load_dataset(path("fields.csv")), FormatError);
  write("number.csv", head + "0,0,1.0,abc\n0,1,1,1\n");
  EXPECT_THROW(load_dataset(path("number.csv")), FormatError);
  write("ticks.csv", head + "0,1,1,1\n0,1,1,1\n");
  EXPECT_THROW(load_dataset(path("ticks.csv")), FormatError);
  write("manifest.csv", head + "0,0,1,1\n0,1,1,1\n");
  write("manifest.csv.manifest", "# spnpb-manifest 1\n7,alpha=0.4,beta=1\n");
  EXPECT_THROW(load_dataset(path("manifest.csv")), FormatError);
  EXPECT_THROW(load_dataset(path("missing.csv")), FormatError);
}

TEST_F(Csv, WritesSchemaAndChecksWidth) {
  {
    CsvWriter w(path("x.csv"), "demo", 2, {"a", "b"});
    w.row({1.0, 0.1});
    EXPECT_THROW(w.row({1.0}), ShapeError);
  }
  EXPECT_EQ(read_all(path("x.csv")), "# spnpb-csv demo 2\na,b\n1,0.10000000000000001\n");
  EXPECT_THROW(CsvWriter(path("y.csv"), "demo", 1, {}), ArgumentError);
}

TEST(Text, SeventeenDigitsRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal(0.0, 1e3) * std::pow(10.0, rng.uniform(-20, 20));
    EXPECT_EQ(text::parse_double(text::format_double(x)), x);
  }
  EXPECT_THROW(text::parse_double("1.0x"), FormatError);
  EXPECT_THROW(text::parse_int("3.5"), FormatError);
}
