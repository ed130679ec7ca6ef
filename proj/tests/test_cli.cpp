#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <json.hpp>

#include "pillar_rcnn/io.hpp"
#include "pillar_rcnn/scene.hpp"
#include "pillar_rcnn/verify.hpp"

using namespace pillar_rcnn;
namespace fs = std::filesystem;

namespace {

// Small grid keeps detection runs fast.
constexpr const char* kSmallConfig = R"({
  "grid": {"x_min": -12.8, "x_max": 12.8, "y_min": -12.8, "y_max": 12.8},
  "scene": {"counts": [3, 2, 2]}
})";

struct Sandbox {
  fs::path root;
  explicit Sandbox(const std::string& name) : root(fs::temp_directory_path() / ("pillar_rcnn_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
    io::write_file_atomic(root / "small.json", kSmallConfig);
  }
  ~Sandbox() { fs::remove_all(root); }
  std::string path(const std::string& rel) const { return (root / rel).string(); }
};

int run(const std::string& args, const Sandbox& box) {
  const std::string cmd = std::string(PILLAR_RCNN_CLI) + " " + args + " > " + box.path("stdout.txt") + " 2> " +
                          box.path("stderr.txt");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("no subcommand prints help") {
    Sandbox box("help");
    CHECK(run("", box) == 0);
    CHECK(io::read_file(box.path("stdout.txt")).find("synth") != std::string::npos);
    CHECK(run("frobnicate", box) == 1);
  }

  TEST_CASE("synth with zero scenes writes nothing") {
    Sandbox box("synth0");
    CHECK(run("synth -n 0 --out " + box.path("scenes"), box) == 0);
    CHECK(count_files(box.root / "scenes") == 0);
  }

  TEST_CASE("synth is byte-identical across runs and job counts") {
    Sandbox box("synth_repeat");
    REQUIRE(run("synth -n 2 --seed 5 --out " + box.path("a"), box) == 0);
    REQUIRE(run("synth -n 2 --seed 5 --jobs 2 --out " + box.path("b"), box) == 0);
    CHECK(count_files(box.root / "a") == 4);
    for (const char* f : {"scene_0000.pbk", "scene_0000.gt.txt", "scene_0001.pbk", "scene_0001.gt.txt"}) {
      CHECK(io::read_file(box.root / "a" / f) == io::read_file(box.root / "b" / f));
    }
    REQUIRE(run("synth -n 1 --seed 6 --out " + box.path("c"), box) == 0);
    CHECK(io::read_file(box.root / "c" / "scene_0000.pbk") != io::read_file(box.root / "a" / "scene_0000.pbk"));
  }

  TEST_CASE("an invalid config exits 1 and names the field") {
    Sandbox box("badcfg");
    io::write_file_atomic(box.root / "bad.json", R"({"neck": {"pool_stride": 3}})");
    CHECK(run("synth -n 1 --config " + box.path("bad.json") + " --out " + box.path("s"), box) == 1);
    CHECK(io::read_file(box.path("stderr.txt")).find("neck.pool_stride") != std::string::npos);
    io::write_file_atomic(box.root / "typo.json", R"({"grid": {"pilar_size": 0.1}})");
    CHECK(run("synth -n 1 --config " + box.path("typo.json"), box) == 1);
    CHECK(io::read_file(box.path("stderr.txt")).find("grid.pilar_size") != std::string::npos);
    CHECK(run("synth -n 1 --config " + box.path("absent.json"), box) == 2);
  }

  TEST_CASE("a corrupt scene file exits 2") {
    Sandbox box("corrupt");
    io::write_file_atomic(box.root / "broken.pbk", "PBK1\x05\x00\x00\x00garbage");
    CHECK(run("detect --config " + box.path("small.json") + " --out " + box.path("d") + " " + box.path("broken.pbk"),
              box) == 2);
    CHECK(run("detect --config " + box.path("small.json") + " --out " + box.path("d") + " " + box.path("nope.pbk"), box) ==
          2);
  }

  TEST_CASE("an empty cloud produces an empty detection file") {
    Sandbox box("empty");
    PointCloud{}.save(box.root / "empty.pbk");
    REQUIRE(run("detect --config " + box.path("small.json") + " --out " + box.path("d") + " " + box.path("empty.pbk"),
                box) == 0);
    REQUIRE(fs::exists(box.root / "d" / "empty.det.txt"));
    CHECK(io::read_file(box.root / "d" / "empty.det.txt").empty());
  }

  TEST_CASE("detect runs on a synthetic scene and reports stage dims") {
    Sandbox box("detect");
    const std::string cfg = " --config " + box.path("small.json");
    REQUIRE(run("synth -n 1" + cfg + " --out " + box.path("s"), box) == 0);
    REQUIRE(run("detect" + cfg + " --out " + box.path("d") + " " + box.path("s/scene_0000.pbk"), box) == 0);
    const std::string out = io::read_file(box.path("stdout.txt"));
    CHECK(out.find("C5=16x16x256") != std::string::npos);
    CHECK(out.find("pool=64x64x128") != std::string::npos);
    CHECK_NOTHROW(parse_detections(io::read_file(box.root / "d" / "scene_0000.det.txt")));
  }

  TEST_CASE("eval against the ground truth itself scores 1") {
    Sandbox box("eval_self");
    const std::string cfg = " --config " + box.path("small.json");
    REQUIRE(run("synth -n 2 --seed 3" + cfg + " --out " + box.path("s"), box) == 0);
    fs::create_directories(box.root / "d");
    fs::create_directories(box.root / "e");
    for (const char* stem : {"scene_0000", "scene_0001"}) {
      const auto gt = parse_boxes(io::read_file(box.root / "s" / (std::string(stem) + ".gt.txt")));
      std::vector<Detection> dets;
      for (const auto& g : gt) {
        Detection d;
        d.box = g;
        d.score = d.iou_score = d.rectified_score = 1.0;
        dets.push_back(d);
      }
      io::write_file_atomic(box.root / "d" / (std::string(stem) + ".det.txt"), format_detections(dets));
      io::write_file_atomic(box.root / "e" / (std::string(stem) + ".det.txt"), "");
    }
    const std::string dets = " --det " + box.path("d/scene_0000.det.txt") + " " + box.path("d/scene_0001.det.txt");
    const std::string gts = " --gt " + box.path("s/scene_0000.gt.txt") + " " + box.path("s/scene_0001.gt.txt");
    REQUIRE(run("eval" + dets + gts + " --out " + box.path("m.json"), box) == 0);
    const auto j = nlohmann::json::parse(io::read_file(box.path("m.json")));
    CHECK(j["LEVEL_2"]["all"]["ap"].get<double>() == doctest::Approx(1.0));
    CHECK(j["LEVEL_2"]["all"]["aph"].get<double>() == doctest::Approx(1.0));
    CHECK(io::read_file(box.path("stdout.txt")).find("LEVEL_1") != std::string::npos);

    const std::string empty = " --det " + box.path("e/scene_0000.det.txt") + " " + box.path("e/scene_0001.det.txt");
    REQUIRE(run("eval" + empty + gts + " --out " + box.path("z.json"), box) == 0);
    const auto z = nlohmann::json::parse(io::read_file(box.path("z.json")));
    CHECK(z["LEVEL_2"]["all"]["ap"].get<double>() == 0.0);

    // Mismatched stems and counts are validation errors.
    CHECK(run("eval --det " + box.path("d/scene_0001.det.txt") + " " + box.path("d/scene_0000.det.txt") + gts, box) ==
          1);
    CHECK(run("eval --det " + box.path("d/scene_0000.det.txt") + gts, box) == 1);
  }

  TEST_CASE("corrupting one kernel weight fails the sparse suite") {
    VerifyOptions opts;
    opts.budget.sparse_volumes = 5;
    CHECK(verify_sparse_dense(opts).passed());
    opts.corrupt_kernel = true;
    const auto bad = verify_sparse_dense(opts);
    CHECK_FALSE(bad.passed());
  }
}
