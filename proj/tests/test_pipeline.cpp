#include <doctest.h>

#include <fstream>

#include "stochdet/config.hpp"
#include "stochdet/container.hpp"
#include "stochdet/pipeline.hpp"
#include "stochdet/report.hpp"
#include "support.hpp"

using namespace stochdet;
using namespace stochdet::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {
std::string config_error(const json& j) {
  try {
    validate(config_from_json(j));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}
}  // namespace

TEST_CASE("config: defaults validate and round trip") {
  const auto cfg = default_config();
  CHECK_NOTHROW(validate(cfg));
  const auto back = config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(config_hash(cfg).size() == 64);
}

TEST_CASE("config: hash ignores the output dir and tracks everything else") {
  auto a = default_config(), b = default_config();
  b.output_dir = "/elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.base_seed = 8;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.noise.gamma = 3.0;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("config: rejected inputs") {
  json j = to_json(default_config());
  j["bogus"] = 1;
  CHECK(config_error(j).find("bogus") != std::string::npos);
  j = to_json(default_config());
  j["noise"]["mode"] = "loud";
  CHECK(config_error(j) != "");
  j = to_json(default_config());
  j["image_size"] = 16;
  CHECK(config_error(j) != "");
  j = to_json(default_config());
  j["splits"]["calibration"] = 50;
  CHECK(config_error(j) != "");
  j = to_json(default_config());
  j["noise"]["sr_hi"] = 1.0;
  CHECK(config_error(j) != "");
  j = to_json(default_config());
  j["attacks"][1]["name"] = j["attacks"][0]["name"];
  CHECK(config_error(j) != "");
  j = to_json(default_config());
  j["model_path"] = "/nonexistent/model.bin";
  CHECK(config_error(j).find("model_path") != std::string::npos);
  j = to_json(default_config());
  j["train"]["epochs"] = "ten";
  CHECK(config_error(j) != "");
}

TEST_CASE("config: dataset specs") {
  const auto s = parse_dataset_spec("synth:42");
  CHECK(s.kind == DatasetSpec::Kind::synth);
  CHECK(s.seed == 42);
  CHECK(s.to_string() == "synth:42");
  const auto i = parse_dataset_spec("idx:a.idx:b.idx");
  CHECK(i.kind == DatasetSpec::Kind::idx);
  CHECK(i.images == "a.idx");
  CHECK(i.labels == "b.idx");
  CHECK_THROWS_AS(parse_dataset_spec("synth:x"), ConfigError);
  CHECK_THROWS_AS(parse_dataset_spec("mnist"), ConfigError);
  CHECK_THROWS_AS(parse_dataset_spec("idx:only"), ConfigError);
}

TEST_CASE("provenance: sealed artifacts detect tampering") {
  const auto dir = temp_dir("seal");
  const Provenance p{"abc", 7, "0.1.0"};
  write_text(dir / "a.json", seal_json({{"x", 1}}, p));
  write_text(dir / "b.csv", seal_csv("h\n1\n", p));
  Container c;
  c.manifest = {{"format", "t"}};
  c.blob = {1.0, 2.0};
  write_bytes(dir / "c.bin", seal_container(encode_container(c), p));
  for (const char* name : {"a.json", "b.csv", "c.bin"}) {
    const auto r = check_artifact(dir / name);
    CAPTURE(name);
    CHECK(r.problem == "");
    REQUIRE(r.provenance.has_value());
    CHECK(*r.provenance == p);
  }
  CHECK(open_json(read_text(dir / "a.json")) == json{{"x", 1}});
  CHECK(open_csv(read_text(dir / "b.csv")) == "h\n1\n");

  write_text(dir / "a.json", [&] {
    auto j = json::parse(read_text(dir / "a.json"));
    j["x"] = 2;
    return j.dump();
  }());
  CHECK(check_artifact(dir / "a.json").problem == "content digest mismatch");
  write_text(dir / "b.csv", read_text(dir / "b.csv") + "2\n");
  CHECK(check_artifact(dir / "b.csv").problem == "content digest mismatch");
  auto bytes = read_file_bytes(dir / "c.bin");
  bytes.back() ^= 1;
  write_bytes(dir / "c.bin", bytes);
  CHECK(check_artifact(dir / "c.bin").problem == "content digest mismatch");
  write_text(dir / "d.csv", "h\n1\n");
  CHECK(check_artifact(dir / "d.csv").problem == "no provenance");
  fs::remove_all(dir);
}

TEST_CASE("sha256 known answer") {
  CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("report: empty tables keep their header") {
  CHECK(detection_csv({}) ==
        "set,kind,k,c,beta,attempted,samples,detection_rate,fpr,mean_runs,mean_l2,mean_l1_to_target,mean_confidence\n");
  CHECK(k_sweep_csv({}) == "k,set,samples,success_rate,mean_l2,mean_confidence,detection_rate\n");
  CHECK(beta_sweep_csv({}) == "beta,set,samples,mean_l1_to_target,mean_l2,detection_rate\n");
  CHECK(histogram_csv({}) == "set,mode,bin_lo,bin_hi,count\n");
  CHECK(noise_study_csv({}) == "set,mode,level,samples,mean_l1,std_l1\n");
}

TEST_CASE("report: statistics and histograms") {
  const auto s = sample_stats(std::vector<double>{1, 2, 3, 4});
  CHECK(s.count == 4);
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(1.2909944487358056));
  CHECK(separation({10, 0.1, 0.05}, {10, 0.6, 0.2}) == doctest::Approx(10.0));
  const std::vector<double> v{0.0, 0.049, 0.05, 1.0, 2.0, 1.99};
  const auto h = l1_histogram(v);
  CHECK(h.total() == v.size());
  CHECK(h.counts[0] == 2);
  CHECK(h.counts[1] == 1);
  CHECK(h.counts[20] == 1);
  CHECK(h.counts[39] == 2);
  CHECK_THROWS(l1_histogram(std::vector<double>{2.5}));
}

TEST_CASE("report: benign row first, then attacks by kind and strength") {
  DetectionRow benign, k5, k0;
  benign.set = "benign";
  k5.set = "cw_k5";
  k5.kind = AttackKind::cw_l2;
  k5.k = 5;
  k0.set = "cw_k0";
  k0.kind = AttackKind::cw_l2;
  const auto rows = sorted_rows({k5, benign, k0});
  CHECK(rows[0].set == "benign");
  CHECK(rows[1].set == "cw_k0");
  CHECK(rows[2].set == "cw_k5");
}

TEST_CASE("pipeline: small end-to-end run, verification, determinism") {
  const auto dir_a = temp_dir("pipe-a"), dir_b = temp_dir("pipe-b");
  const auto cfg_a = small_config(dir_a), cfg_b = small_config(dir_b);
  run_pipeline(cfg_a);
  run_pipeline(cfg_b);
  for (const char* f : {"config.json", "model.bin", "thresholds.json", "attacks.json", "calibration.json",
                        "metrics.json", "metrics.csv", "cycles.json", "cycles.csv", "detection.csv", "k_sweep.csv",
                        "beta_sweep.csv", "histograms.csv", "noise_study.csv", "report.json", "verdicts/benign.json"})
    CHECK_MESSAGE(fs::exists(dir_a / f), f);
  CHECK(verify_outputs(cfg_a).empty());
  for (const char* f : {"metrics.csv", "detection.csv", "noise_study.csv", "cycles.csv"})
    CHECK_MESSAGE(read_text(dir_a / f) == read_text(dir_b / f), f);

  auto other = cfg_a;
  other.base_seed = 8;
  CHECK_FALSE(verify_outputs(other).empty());

  write_text(dir_a / "metrics.csv", read_text(dir_a / "metrics.csv") + "x\n");
  const auto issues = verify_outputs(cfg_a);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].path.filename() == "metrics.csv");

  const auto verdicts = json::parse(read_text(dir_a / "verdicts/benign.json"));
  for (const auto& r : verdicts.at("records")) {
    const auto v = verdict_from_record(r);
    CHECK(v.runs_used == v.l1_history.size());
    CHECK(verdict_record(r.at("input_id").get<std::string>(), v) == r);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("pipeline: stages need their inputs") {
  const auto dir = temp_dir("pipe-missing");
  const auto cfg = small_config(dir);
  try {
    run_stage(cfg, Stage::detect);
    FAIL("detect ran without a model");
  } catch (const StageError& e) {
    CHECK(e.stage() == Stage::detect);
    CHECK(std::string(e.what()).find("model.bin") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("pipeline: stage names") {
  for (Stage s : kAllStages) CHECK(parse_stage(to_string(s)) == s);
  CHECK_FALSE(parse_stage("deploy").has_value());
}
