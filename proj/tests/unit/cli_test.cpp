#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "fringe/cli.hpp"

using namespace fringe;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("fringe_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) +
           "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    cfg = (dir / "small.cfg").string();
    write_file(cfg, "synth.width = 160\nsynth.height = 128\nsynth.a_min = 20\nsynth.a_max = 30\n"
                    "synth.rings_max = 3\nsynth.min_antinodes = 1\nsynth.max_antinodes = 2\n");
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string p(const std::string& rel) const { return (dir / rel).string(); }

  // Bytes of every file under a directory, keyed by relative path.
  static std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
    return files;
  }

  fs::path dir;
  std::string cfg;
};

std::string truth_as_predictions(const std::string& annotations_csv) {
  std::vector<FramePredictions> rows;
  for (const auto& r : parse_annotations(annotations_csv)) rows.emplace_back(r.frame_id, as_detections(r.annotations));
  return write_predictions(rows);
}

}  // namespace

TEST(PredictionsCsv, RoundTripIsExact) {
  const EllipseAnnotation e{12.345678912, 40.1, 30.000001, 20.5, 33.3, 4.123456789};
  const std::vector<FramePredictions> rows = {{"a.png", {{ellipse_to_bbox(e), 0.123456789123, e}}},
                                              {"b.png", {}}};
  const auto text = write_predictions(rows);
  const auto back = parse_predictions(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].first, "a.png");
  EXPECT_EQ(back[0].second[0].bbox, rows[0].second[0].bbox);
  EXPECT_EQ(back[0].second[0].score, rows[0].second[0].score);
  EXPECT_EQ(back[0].second[0].ellipse, e);
  EXPECT_EQ(back[1].first, "b.png");
  EXPECT_TRUE(back[1].second.empty());
  EXPECT_EQ(write_predictions(back), text);
}

TEST(PredictionsCsv, Errors) {
  EXPECT_THROW(parse_predictions(""), DataError);
  EXPECT_THROW(parse_predictions("filename,cx\n"), DataError);
  const std::string h = std::string(kPredictionHeader) + "\n";
  try {
    parse_predictions(h + "a.png,1,2,3,4,0.5,2,3,1,1,0,x\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "line 2, column 12 (rings): not a number: 'x'");
  }
  EXPECT_THROW(parse_predictions(h + "a.png,1,2,3\n"), DataError);
  EXPECT_THROW(parse_predictions(h + "a.png,1,2,3,4,0.5,2,3,1,2,0,1\n"), DataError);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"synth", "--count", "many", "--out", p("d")}).code, 1);
  EXPECT_EQ(run_cli({"eval", p("only_one.csv")}).code, 1);
  EXPECT_EQ(run_cli({"serve", "--predictor", "magic", p("d")}).code, 1);
  const auto bad_cfg = p("bad.cfg");
  write_file(bad_cfg, "detector.colour = red\n");
  const auto r = run_cli({"synth", "--config", bad_cfg, "--out", p("d")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown config key"), std::string::npos);
  EXPECT_EQ(run_cli({"synth", "--config", p("missing.cfg"), "--out", p("d")}).code, 1);
}

TEST_F(CliTest, HelpListsFormats) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("predictions.csv  filename,x_min"), std::string::npos);
  EXPECT_NE(r.out.find("FRINGE_DATA_DIR"), std::string::npos);
}

TEST_F(CliTest, SynthCountZeroAndDeterminism) {
  ASSERT_EQ(run_cli({"synth", "--count", "0", "--out", p("zero")}).code, 0);
  EXPECT_EQ(read_file(p("zero/annotations.csv")), std::string(kAnnotationHeader) + "\n");

  ASSERT_EQ(run_cli({"synth", "--config", cfg, "--count", "5", "--seed", "3", "--out", p("a")}).code, 0);
  ASSERT_EQ(run_cli({"synth", "--config", cfg, "--count", "5", "--seed", "3", "--out", p("b")}).code, 0);
  ASSERT_EQ(run_cli({"synth", "--config", cfg, "--count", "5", "--seed", "4", "--out", p("c")}).code, 0);
  const auto a = snapshot(p("a"));
  EXPECT_EQ(a.size(), 7u);  // 5 images, annotations, manifest
  EXPECT_EQ(a, snapshot(p("b")));
  EXPECT_NE(a, snapshot(p("c")));
  const auto manifest = nlohmann::json::parse(a.at("manifest.json"));
  EXPECT_EQ(manifest["seed"], 3);
  EXPECT_EQ(manifest["count"], 5);
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  write_file(p("seeded.cfg"), read_file(cfg) + "run.seed = 3\n");
  ASSERT_EQ(run_cli({"synth", "--config", p("seeded.cfg"), "--count", "2", "--out", p("a")}).code, 0);
  ASSERT_EQ(run_cli({"synth", "--config", p("seeded.cfg"), "--count", "2", "--seed", "9", "--out", p("b")}).code, 0);
  ASSERT_EQ(run_cli({"synth", "--config", cfg, "--count", "2", "--seed", "3", "--out", p("c")}).code, 0);
  EXPECT_EQ(snapshot(p("a")), snapshot(p("c")));
  EXPECT_NE(snapshot(p("a")), snapshot(p("b")));
}

TEST_F(CliTest, DataDirFromEnvironment) {
  ::setenv("FRINGE_DATA_DIR", p("env").c_str(), 1);
  const auto r = run_cli({"synth", "--config", cfg, "--count", "2"});
  ::unsetenv("FRINGE_DATA_DIR");
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(p("env/images/frame_00001.png")));
  EXPECT_EQ(run_cli({"synth", "--count", "2"}).code, 1);
}

TEST_F(CliTest, PredictEvalRankPipeline) {
  ASSERT_EQ(run_cli({"synth", "--config", cfg, "--count", "6", "--seed", "1", "--out", p("d")}).code, 0);
  auto r = run_cli({"predict", p("d")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto preds = parse_predictions(read_file(p("d/predictions.csv")));
  EXPECT_EQ(preds.size(), 6u);
  EXPECT_TRUE(fs::exists(p("d/maps/frame_00000.png")));
  EXPECT_EQ(read_file(p("d/maps/frame_00000.json")), "{\"scale\":5000.0,\"bin\":0.7}\n");
  const auto first = read_file(p("d/predictions.csv"));
  ASSERT_EQ(run_cli({"predict", p("d"), "--out", p("again")}).code, 0);
  EXPECT_EQ(read_file(p("again/predictions.csv")), first);

  r = run_cli({"eval", p("d/predictions.csv"), p("d/annotations.csv"), "--out", p("report")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind(std::string(kReportHeader) + "\nboxes,", 0), 0u);
  const auto report = nlohmann::json::parse(read_file(p("report/eval.json")));
  EXPECT_TRUE(report["boxes"]["map_coco"].is_number());
  EXPECT_TRUE(report["pixels"]["support_px"].is_number());

  const auto r1 = run_cli({"rank", p("d/predictions.csv"), p("d/annotations.csv")});
  const auto r2 = run_cli({"rank", p("d/predictions.csv"), p("d/annotations.csv")});
  ASSERT_EQ(r1.code, 0);
  EXPECT_EQ(r1.out, r2.out);
  EXPECT_EQ(r1.out.rfind("frame_id,loss\n", 0), 0u);
}

TEST_F(CliTest, PerfectPredictions) {
  ASSERT_EQ(run_cli({"synth", "--config", cfg, "--count", "5", "--seed", "2", "--out", p("d")}).code, 0);
  write_file(p("perfect.csv"), truth_as_predictions(read_file(p("d/annotations.csv"))));
  auto r = run_cli({"eval", p("perfect.csv"), p("d/annotations.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\nboxes,1,0,1,1,1,1,1\n"), std::string::npos) << r.out;
  // Pixel scores see the prediction map quantized to the 0.7 bin.
  const auto j = nlohmann::json::parse(r.out.substr(0, r.out.find(kReportHeader)));
  EXPECT_LE(j["pixels"]["mae"].get<double>(), 0.35);
  EXPECT_EQ(j["pixels"]["acc"]["0.5"].get<double>(), 1.0);
  r = run_cli({"rank", p("perfect.csv"), p("d/annotations.csv"), "--out", p("ranking.csv")});
  ASSERT_EQ(r.code, 0);
  const auto ranking = read_file(p("ranking.csv"));
  std::istringstream lines(ranking);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) EXPECT_EQ(line.substr(line.find(',')), ",0");
}

TEST_F(CliTest, EvalListsMissingFrames) {
  const std::string truth = std::string(kAnnotationHeader) + "\nx.png,50,50,20,10,0,3\ny.png,90,90,20,10,0,2\n";
  write_file(p("truth.csv"), truth);
  write_file(p("preds.csv"), std::string(kPredictionHeader) + "\n");
  const auto r = run_cli({"eval", p("preds.csv"), p("truth.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("x.png y.png"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({"eval", p("nope.csv"), p("truth.csv")}).code, 2);
}

TEST_F(CliTest, PredictEmptyDirAndCorruptFile) {
  fs::create_directories(p("empty"));
  ASSERT_EQ(run_cli({"predict", p("empty")}).code, 0);
  EXPECT_EQ(read_file(p("empty/predictions.csv")), std::string(kPredictionHeader) + "\n");

  ASSERT_EQ(run_cli({"synth", "--config", cfg, "--count", "3", "--out", p("d")}).code, 0);
  write_file(p("d/images/frame_00001.png"), "garbage");
  const auto r = run_cli({"predict", p("d")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("frame_00001.png"), std::string::npos);
  const auto rows = parse_predictions(read_file(p("d/predictions.csv")));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].first, "frame_00000.png");
  EXPECT_EQ(rows[1].first, "frame_00002.png");
  EXPECT_EQ(run_cli({"predict", p("no_such_dir")}).code, 2);
}

TEST_F(CliTest, TrackCommand) {
  // One frame: no track can be fitted.
  const EllipseAnnotation e{100, 100, 40, 30, 0, 3};
  write_file(p("one.csv"), write_predictions({{"f0.png", as_detections({e})}}));
  EXPECT_EQ(run_cli({"track", p("one.csv")}).code, 2);

  // Two antinodes whose rings follow the rise model.
  const RiseParams rise{5.0, 1.2e-3, 0.3e-3};
  std::vector<FramePredictions> rows;
  const auto series = forward_model(rise, 15037, 120, 0);
  for (std::size_t f = 0; f < series.size(); ++f) {
    auto a = e, b = e;
    a.rings = series[f].second;
    b.cx = 300;
    b.rings = 2 + 0.001 * static_cast<double>(f);
    char name[32];
    std::snprintf(name, sizeof name, "f%03zu.png", f);
    rows.emplace_back(name, as_detections({a, b}));
  }
  write_file(p("video.csv"), write_predictions(rows));
  const auto r = run_cli({"track", p("video.csv"), "--out", p("tracks")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "2 tracks\n");
  const auto rise_csv = read_file(p("tracks/rise.csv"));
  std::istringstream lines(rise_csv);
  std::string header, row;
  std::getline(lines, header);
  EXPECT_EQ(header, kRiseHeader);
  std::getline(lines, row);  // track 0 is the rising antinode (processed first on ties by cx)
  double vals[9];
  std::istringstream cells(row);
  for (double& v : vals) {
    std::string c;
    std::getline(cells, c, ',');
    v = std::stod(c);
  }
  EXPECT_EQ(vals[0], 0);
  EXPECT_EQ(vals[1], 120);
  EXPECT_NEAR(vals[3] / rise.tau, 1.0, 0.05);
  EXPECT_EQ(read_file(p("tracks/tracks.csv")).substr(0, kTrackHeader.size()), kTrackHeader);
}
