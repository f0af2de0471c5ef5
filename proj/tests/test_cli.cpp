#include "bionet/checkpoint.hpp"
#include "bionet/dataset_io.hpp"
#include "bionet/report.hpp"
#include "bionet/training.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace bionet;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(BIONET_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string last_line(const std::string& s) {
  std::string trimmed = s;
  while (!trimmed.empty() && trimmed.back() == '\n') trimmed.pop_back();
  return trimmed.substr(trimmed.rfind('\n') + 1);
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "bionet_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "tiny.cfg") << "epochs = 1\nbatch_size = 2\nbase_lr = 0.001\nlr_decay_epochs =\n"
                                  << "base_width = 4\ndepth = 2\nbio_head_width = 8\nnorm_groups = 2\n";
    return d;
  }();
  return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("cli: phantom generation") {
  const fs::path d = workdir();
  auto r = run("phantom --out " + q(d / "ds") + " --train 4 --test 2 --height 80 --width 32 --seed 5");
  REQUIRE(r.exit_code == 0);
  const auto m = DatasetManifest::load(d / "ds");
  CHECK(m.entries.size() == 6);
  CHECK(m.count(Split::train) == 4);

  REQUIRE(run("phantom --out " + q(d / "ds2") + " --train 4 --test 2 --height 80 --width 32 --seed 5").exit_code == 0);
  for (const auto& e : m.entries) {
    CHECK(slurp(d / "ds" / e.image) == slurp(d / "ds2" / e.image));
    CHECK(slurp(d / "ds" / e.layers) == slurp(d / "ds2" / e.layers));
  }
  CHECK(slurp(d / "ds" / "manifest.json") == slurp(d / "ds2" / "manifest.json"));

  r = run("phantom --out " + q(d / "bad") + " --height 15");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("height >= 16") != std::string::npos);
}

TEST_CASE("cli: training, evaluation, prediction and report") {
  const fs::path d = workdir();
  REQUIRE(run("phantom --out " + q(d / "data") + " --train 4 --test 2 --height 80 --width 32 --seed 9").exit_code == 0);
  const std::string data = " --data " + q(d / "data");
  const std::string cfg = " --config " + q(d / "tiny.cfg");

  auto r = run("train" + data + cfg + " --mode bionet --out " + q(d / "nobio"));
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("--bio") != std::string::npos);

  r = run("train --data " + q(d / "missing") + cfg + " --mode unet --out " + q(d / "x"));
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("does not exist") != std::string::npos);

  r = run("train" + data + cfg + " --mode unet --out " + q(d / "run_unet"));
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(d / "run_unet" / "model.json"));
  CHECK(fs::exists(d / "run_unet" / "train_log.csv"));

  // An unfrozen checkpoint is refused.
  BioRegressor<float> unfrozen(bio_config(4, 8, 1));
  save_checkpoint(d / "unfrozen.ckpt", unfrozen, NetworkKind::bio, "stage1");
  r = run("train" + data + cfg + " --mode bionet --bio " + q(d / "unfrozen.ckpt") + " --out " + q(d / "x"));
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("not frozen") != std::string::npos);

  REQUIRE(run("train-bio" + data + cfg + " --out " + q(d / "bio.ckpt")).exit_code == 0);
  CHECK(fs::exists(d / "bio_log.csv"));
  r = run("train" + data + cfg + " --mode bionet --bio " + q(d / "bio.ckpt") + " --out " + q(d / "run_bionet"));
  REQUIRE(r.exit_code == 0);

  r = run("eval" + data + " --oracle --split test");
  REQUIRE(r.exit_code == 0);
  CHECK(last_line(r.output) == "oracle,100.00,0.00,100.00,100.00,100.00");

  r = run("eval" + data + " --model " + q(d / "run_bionet") + " --split test");
  REQUIRE(r.exit_code == 0);
  const std::string model_row = last_line(r.output);
  CHECK(model_row.rfind("bionet,", 0) == 0);

  REQUIRE(run("predict" + data + " --model " + q(d / "run_bionet") + " --split test --out " + q(d / "pred")).exit_code == 0);
  r = run("eval" + data + " --masks " + q(d / "pred") + " --split test");
  REQUIRE(r.exit_code == 0);
  CHECK(last_line(r.output).substr(last_line(r.output).find(',')) == model_row.substr(model_row.find(',')));

  auto model = ModelBundle::load(d / "run_bionet");
  const auto test = DatasetReader(d / "data").load_split(Split::test);
  CHECK(metrics_row(evaluate_model(model, test)) == model_row.substr(model_row.find(',') + 1));

  r = run("report" + data + " --runs " + q(d / "run_unet") + " " + q(d / "run_bionet") + " --out " +
          q(d / "report") + " --overlays 1");
  REQUIRE(r.exit_code == 0);
  const std::string table = slurp(d / "report" / "table.csv");
  CHECK(table.find("Method,IOU,AUSDE,DI,Acc,Sen\nunet,") != std::string::npos);
  CHECK(table.find("\nbionet,") != std::string::npos);
  CHECK(fs::exists(d / "report" / "loss_curves.png"));
  CHECK(fs::exists(d / "report" / "overlays" / "bionet" / (test[0].id + ".png")));

  r = run("eval" + data + " --oracle --model " + q(d / "run_unet"));
  CHECK(r.exit_code != 0);
}
