#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kSource = LOCSEQ_SOURCE_DIR;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("locseq_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& content) const {
    std::ofstream(path(name), std::ios::binary) << content;
  }

  static std::string read(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::vector<json> read_jsonl(const std::string& p) {
    std::vector<json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) out.push_back(json::parse(line));
    return out;
  }

  // Runs the CLI with stdout to `out` (inside the temp dir) and stderr
  // discarded. Returns the exit code.
  int run(const std::string& args, const std::string& out = "stdout.txt") const {
    const std::string cmd = std::string("\"") + LOCSEQ_CLI + "\" " + args + " > \"" + path(out) +
                            "\" 2> \"" + path("stderr.txt") + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path dir_;
};

TEST_F(Cli, DecodeEmitsOneDetectionRecord) {
  write("seq.jsonl", R"({"image_id":"img1","sequence":"person-[0.001,0.345,0.111,0.678]"})" "\n");
  ASSERT_EQ(run("decode " + path("seq.jsonl") + " -o " + path("dec.jsonl")), 0);
  const auto recs = read_jsonl(path("dec.jsonl"));
  ASSERT_EQ(recs.size(), 1u);
  ASSERT_EQ(recs[0]["detections"].size(), 1u);
  EXPECT_EQ(recs[0]["detections"][0]["label"], "person");
  EXPECT_EQ(recs[0]["detections"][0]["bbox_norm"], json::parse("[0.001,0.345,0.111,0.678]"));
}

TEST_F(Cli, EncodeOfDecodeIsByteIdentical) {
  for (const std::string order : {"label_first", "coord_first"}) {
    std::string text;
    const std::vector<std::string> seqs =
        order == "label_first"
            ? std::vector<std::string>{"person-[0.001,0.345,0.111,0.678]", "None",
                                       "t-shirt-[0.100,0.200,0.300,0.400]&dog-[0.000,0.000,1.000,1.000]"}
            : std::vector<std::string>{"[0.001,0.345,0.111,0.678]-person", "None",
                                       "[0.100,0.200,0.300,0.400]-traffic light"};
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      text += json{{"image_id", "im" + std::to_string(i)}, {"order", order}, {"sequence", seqs[i]}}.dump() + "\n";
    }
    write("in.jsonl", text);
    ASSERT_EQ(run("decode --order " + order + " " + path("in.jsonl") + " -o " + path("dec.jsonl")), 0);
    ASSERT_EQ(run("encode --order " + order + " " + path("dec.jsonl") + " -o " + path("enc.jsonl")), 0);
    EXPECT_EQ(read(path("enc.jsonl")), text) << order;
  }
}

TEST_F(Cli, LenientDecodeSkipsMalformedLines) {
  write("in.jsonl", "not json\n"
                    R"({"image_id":"b","sequence":"cat-[0.1,0.2]&dog-[0.1,0.1,0.2,0.2]"})" "\n");
  ASSERT_EQ(run("decode --mode lenient " + path("in.jsonl") + " -o " + path("out.jsonl")), 0);
  const auto out = read_jsonl(path("out.jsonl"));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0]["detections"].size(), 1u);
  const auto diags = read_jsonl(path("out.jsonl.diag.jsonl"));
  ASSERT_EQ(diags.size(), 2u);
  EXPECT_EQ(diags[0]["line"], 1);
  EXPECT_EQ(diags[1]["segment"], "cat-[0.1,0.2]");
}

TEST_F(Cli, StrictDecodeFailureExitsOne) {
  write("in.jsonl", R"({"image_id":"b","sequence":"cat-[0.1,0.2]"})" "\n");
  EXPECT_EQ(run("decode " + path("in.jsonl")), 1);
}

TEST_F(Cli, ScoreWorkedTrace) {
  write("tr.jsonl", R"({"image_id":"a","tokens":[{"text":"ca","prob":0.9},{"text":"t","prob":0.9},)"
                    R"({"text":"-[","prob":1.0},{"text":"0.5","prob":0.8},{"text":",","prob":1.0},)"
                    R"({"text":"0.5","prob":0.8},{"text":",0.9,0.9]","prob":1.0}]})" "\n");
  ASSERT_EQ(run("score --q 0.5 " + path("tr.jsonl"), "out.jsonl"), 0);
  const auto out = read_jsonl(path("out.jsonl"));
  EXPECT_NEAR(out[0]["detections"][0]["score"].get<double>(), 0.72, 1e-12);

  ASSERT_EQ(run("score --use-label false --use-loc false " + path("tr.jsonl"), "off.jsonl"), 0);
  EXPECT_EQ(read_jsonl(path("off.jsonl"))[0]["detections"][0]["score"].get<double>(), 0.99);
}

TEST_F(Cli, TogglesOffGiveDefaultScoreEverywhere) {
  write("cfg.json", R"({"seed":2,"images":30})");
  ASSERT_EQ(run("synth --config " + path("cfg.json") + " --out-dir " + path("syn")), 0);
  ASSERT_EQ(run("score --use-label false --use-loc false " + path("syn/traces.jsonl"), "out.jsonl"), 0);
  std::size_t n = 0;
  for (const auto& r : read_jsonl(path("out.jsonl"))) {
    for (const auto& d : r.value("detections", json::array())) {
      EXPECT_EQ(d["score"].get<double>(), 0.99);
      ++n;
    }
  }
  EXPECT_GT(n, 30u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  write("tr.jsonl", "\n");
  EXPECT_EQ(run("score --q 1.5 " + path("tr.jsonl")), 2);
  EXPECT_EQ(run("score --default-score 0 " + path("tr.jsonl")), 2);
  EXPECT_EQ(run("decode --order sideways " + path("tr.jsonl")), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("build " + kSource + "/tests/fixtures/sources_100.jsonl --templates " + path("missing")), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, EvalDetOnPerfectSynthData) {
  write("cfg.json", R"({"seed":4,"images":40,"box_noise":0,"drop_rate":0,"spurious_rate":0})");
  ASSERT_EQ(run("synth --config " + path("cfg.json") + " --out-dir " + path("syn")), 0);
  ASSERT_EQ(run("score " + path("syn/traces.jsonl") + " -o " + path("pred.jsonl")), 0);
  ASSERT_EQ(run("eval --task det " + path("pred.jsonl") + " " + path("syn/ground_truth.jsonl") + " --report " +
                path("r.json"), "table.txt"),
            0);
  const std::string table = read(path("table.txt"));
  EXPECT_NE(table.find("mAP"), std::string::npos);
  std::istringstream rows(table);
  std::string header, row, first;
  std::getline(rows, header);
  std::getline(rows, row);
  std::istringstream(row) >> first;
  EXPECT_EQ(first, "100.0");
  EXPECT_EQ(json::parse(read(path("r.json")))["mAP"].get<double>(), 1.0);
}

TEST_F(Cli, EvalRecBelowThreshold) {
  // Prediction [0,0,49,100] against ground truth [0,0,100,100]: IoU 0.49.
  write("gt.jsonl", R"({"image_id":"r1","width":100,"height":100,"annotations":[{"label":"x","bbox":[0,0,100,100]}]})" "\n");
  write("pred.jsonl", R"({"image_id":"r1","sequence":"x-[0.000,0.000,0.490,1.000]"})" "\n");
  ASSERT_EQ(run("eval --task rec " + path("pred.jsonl") + " " + path("gt.jsonl") + " --report " + path("r.json")), 0);
  EXPECT_EQ(json::parse(read(path("r.json")))["rec_accuracy"].get<double>(), 0.0);

  write("pred.jsonl", R"({"image_id":"r1","sequence":"x-[0.000,0.000,0.500,1.000]"})" "\n");
  ASSERT_EQ(run("eval --task rec " + path("pred.jsonl") + " " + path("gt.jsonl") + " --report " + path("r.json")), 0);
  EXPECT_EQ(json::parse(read(path("r.json")))["rec_accuracy"].get<double>(), 1.0);
}

TEST_F(Cli, EvalGroundReportsBothProtocols) {
  write("gt.jsonl", R"({"image_id":"g1","width":100,"height":100,"phrases":[)"
                    R"({"phrase":"two dogs","boxes":[[0,0,10,10],[20,0,30,10]]}]})" "\n");
  write("pred.jsonl", R"({"image_id":"g1","detections":[)"
                      R"({"label":"two dogs","bbox_norm":[0,0,0.1,0.1],"score":0.9},)"
                      R"({"label":"two dogs","bbox_norm":[0.2,0,0.3,0.1],"score":0.8}]})" "\n");
  ASSERT_EQ(run("eval --task ground " + path("pred.jsonl") + " " + path("gt.jsonl") + " --report " +
                path("r.json"), "table.txt"),
            0);
  const std::string table = read(path("table.txt"));
  EXPECT_NE(table.find("ANY"), std::string::npos);
  EXPECT_NE(table.find("MERGED"), std::string::npos);
  const auto r = json::parse(read(path("r.json")));
  EXPECT_EQ(r["grounding_any_recall"].get<double>(), 1.0);
  EXPECT_EQ(r["grounding_merged_recall"].get<double>(), 0.0);
}

TEST_F(Cli, BuildIsDeterministicAndWorkerInvariant) {
  const std::string src = kSource + "/tests/fixtures/sources_100.jsonl";
  const std::string tmpl = " --templates " + kSource + "/data/templates";
  ASSERT_EQ(run("build " + src + tmpl + " --seed 11", "a.jsonl"), 0);
  ASSERT_EQ(run("--workers 3 build " + src + tmpl + " --seed 11", "b.jsonl"), 0);
  ASSERT_EQ(run("build " + src + tmpl + " --seed 12", "c.jsonl"), 0);
  const std::string a = read(path("a.jsonl"));
  EXPECT_EQ(a, read(path("b.jsonl")));
  EXPECT_NE(a, read(path("c.jsonl")));
  const auto recs = read_jsonl(path("a.jsonl"));
  ASSERT_TRUE(recs[0].contains("manifest"));
  EXPECT_EQ(recs[0]["manifest"]["seed"], 11);
}

TEST_F(Cli, ScenarioNoneGivesNoneTargets) {
  write("lvis.jsonl",
        R"({"image_id":"l1","width":640,"height":480,"source":"lvis","annotations":[{"label":"cup","bbox":[1,1,50,50]}],"negatives":["zebra","kite"]})" "\n"
        R"({"image_id":"l2","width":500,"height":500,"source":"lvis","annotations":[{"label":"dog","bbox":[1,1,50,50]}],"negatives":["toaster"]})" "\n");
  ASSERT_EQ(run("build " + path("lvis.jsonl") + " --templates " + kSource + "/data/templates --scenario none",
                "out.jsonl"),
            0);
  const auto recs = read_jsonl(path("out.jsonl"));
  ASSERT_EQ(recs.size(), 4u);
  for (std::size_t i = 1; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i]["target"], "None");
    EXPECT_EQ(recs[i]["scenario"], "non_existing");
  }
}

TEST_F(Cli, ManifestRecordsRun) {
  write("seq.jsonl", R"({"image_id":"a","sequence":"None"})" "\n");
  ASSERT_EQ(run("--manifest " + path("m.json") + " decode " + path("seq.jsonl")), 0);
  const auto m = json::parse(read(path("m.json")))["run_manifest"];
  EXPECT_EQ(m["command"], "decode");
  EXPECT_EQ(m["flags"]["--mode"], "strict");
  EXPECT_TRUE(m["inputs"].contains(path("seq.jsonl")));
  EXPECT_TRUE(m.contains("version"));
  EXPECT_TRUE(m.contains("duration_s"));
}

TEST_F(Cli, ScoreIsWorkerInvariant) {
  write("cfg.json", R"({"seed":7,"images":300})");
  ASSERT_EQ(run("synth --config " + path("cfg.json") + " --out-dir " + path("syn")), 0);
  ASSERT_EQ(run("--workers 1 score " + path("syn/traces.jsonl"), "a.jsonl"), 0);
  ASSERT_EQ(run("--workers 4 score " + path("syn/traces.jsonl"), "b.jsonl"), 0);
  EXPECT_EQ(read(path("a.jsonl")), read(path("b.jsonl")));
}

}  // namespace
