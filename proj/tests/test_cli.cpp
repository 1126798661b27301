#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#ifndef NPX_BINARY
#error "NPX_BINARY must point at the CLI executable"
#endif

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("npx_cli_" + std::to_string(counter++) + "_" +
            std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(out);
  out << content;
}

struct RunResult {
  int code = -1;
  std::string output;  // stdout + stderr
};

RunResult run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path log = fs::temp_directory_path() /
                       ("npx_cli_log_" + std::to_string(counter++) + ".txt");
  std::string cmd = env + (env.empty() ? "" : " ") + std::string(NPX_BINARY) + " " + args +
                    " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log, std::ios::binary);
  r.output.assign(std::istreambuf_iterator<char>(in), {});
  in.close();
  fs::remove(log);
  return r;
}

// tiny cohort every train test can share
const char* kTinySynth =
    "n_subjects = 24\n"
    "n_snps = 60\n"
    "n_genes = 12\n"
    "n_pathways = 6\n"
    "n_rois = 5\n"
    "d = 3\n"
    "n_causal_pathways = 2\n"
    "n_causal_rois = 2\n"
    "effect_strength = 2\n"
    "noise_sd = 1\n"
    "seed = 19\n";

std::string train_config(const fs::path& cohort, const fs::path& out) {
  std::string c;
  c += "genotypes = " + (cohort / "genotypes.tsv").string() + "\n";
  c += "gwas = " + (cohort / "gwas.tsv").string() + "\n";
  c += "genes = " + (cohort / "genes.tsv").string() + "\n";
  c += "gmt = " + (cohort / "pathways.gmt").string() + "\n";
  c += "imaging = " + (cohort / "imaging.csv").string() + "\n";
  c += "labels = " + (cohort / "labels.csv").string() + "\n";
  c += "out = " + out.string() + "\n";
  c += "folds = 2\nepochs = 1\nbatch_size = 8\nseed = 4\nhidden_classifier = 8\n";
  return c;
}

}  // namespace

TEST_CASE("help exits zero and names the subcommands") {
  auto r = run("--help");
  CHECK(r.code == 0);
  CHECK(r.output.find("synth") != std::string::npos);
  CHECK(r.output.find("train") != std::string::npos);
  CHECK(r.output.find("gradcheck") != std::string::npos);
}

TEST_CASE("missing input file exits 2 and names the path") {
  auto r = run("build-features --genotypes /nonexistent/geno.tsv --gwas g --genes g "
               "--gmt g --out /tmp/npx_never");
  CHECK(r.code == 2);
  CHECK(r.output.find("/nonexistent/geno.tsv") != std::string::npos);
}

TEST_CASE("unknown flag is a usage error") {
  auto r = run("synth --no-such-flag --out /tmp/npx_never");
  CHECK(r.code == 2);
}

TEST_CASE("synth: same seed writes identical bytes, NPX_SEED env is honored") {
  TempDir spec_dir, d1, d2, d3, d4;
  spit(spec_dir.path / "spec.cfg", kTinySynth);
  const std::string spec = " --spec " + (spec_dir.path / "spec.cfg").string();

  CHECK(run("synth" + spec + " --out " + d1.str() + " --seed 42").code == 0);
  CHECK(run("synth" + spec + " --out " + d2.str() + " --seed 42").code == 0);
  CHECK(run("synth" + spec + " --out " + d3.str(), "NPX_SEED=42").code == 0);
  CHECK(run("synth" + spec + " --out " + d4.str() + " --seed 43").code == 0);

  for (const char* f : {"genotypes.tsv", "imaging.csv", "labels.csv", "ground_truth.json"}) {
    CHECK(slurp(d1.path / f) == slurp(d2.path / f));
    CHECK(slurp(d1.path / f) == slurp(d3.path / f));  // env seed == flag seed
  }
  CHECK(slurp(d1.path / "labels.csv") != slurp(d4.path / "labels.csv"));
  CHECK(fs::exists(d1.path / "config.resolved"));
}

TEST_CASE("build-features: pathway matrix and drop report, full exclusion fails") {
  TempDir spec_dir, cohort, feat;
  spit(spec_dir.path / "spec.cfg", kTinySynth);
  REQUIRE(run("synth --spec " + (spec_dir.path / "spec.cfg").string() + " --out " +
              cohort.str())
              .code == 0);

  const std::string inputs = " --genotypes " + (cohort.path / "genotypes.tsv").string() +
                             " --gwas " + (cohort.path / "gwas.tsv").string() + " --genes " +
                             (cohort.path / "genes.tsv").string() + " --gmt " +
                             (cohort.path / "pathways.gmt").string();
  CHECK(run("build-features" + inputs + " --out " + feat.str()).code == 0);
  CHECK(fs::exists(feat.path / "pathway_matrix.tsv"));
  CHECK(fs::exists(feat.path / "drop_report.json"));

  // excluding every pathway must fail loudly
  std::string all;
  for (int k = 1; k <= 6; ++k) all += "PW00" + std::to_string(k) + "\n";
  spit(cohort.path / "exclude_all.txt", all);
  auto r = run("build-features" + inputs + " --exclude " +
               (cohort.path / "exclude_all.txt").string() + " --out " + feat.str());
  CHECK(r.code == 2);
  CHECK(r.output.find("no pathways retained") != std::string::npos);
}

TEST_CASE("train: zero epochs still writes a complete output tree") {
  TempDir spec_dir, cohort, out;
  spit(spec_dir.path / "spec.cfg", kTinySynth);
  REQUIRE(run("synth --spec " + (spec_dir.path / "spec.cfg").string() + " --out " +
              cohort.str())
              .code == 0);
  spit(spec_dir.path / "train.cfg", train_config(cohort.path, out.path));

  auto r = run("train --config " + (spec_dir.path / "train.cfg").string() + " --epochs 0");
  CHECK(r.code == 0);
  for (const char* f : {"metrics.json", "history.csv", "config.resolved",
                        "drop_report.json", "attn/pathway_ids.txt"})
    CHECK(fs::exists(out.path / f));
  // zero epochs -> header-only history
  CHECK(slurp(out.path / "history.csv") == "fold,epoch,L_total,L_bce,L_sp,L_path\n");
}

TEST_CASE("train + interpret: deterministic end to end, svg on request") {
  TempDir spec_dir, cohort, o1, o2, a1;
  spit(spec_dir.path / "spec.cfg", kTinySynth);
  REQUIRE(run("synth --spec " + (spec_dir.path / "spec.cfg").string() + " --out " +
              cohort.str())
              .code == 0);
  spit(spec_dir.path / "t1.cfg", train_config(cohort.path, o1.path));
  spit(spec_dir.path / "t2.cfg", train_config(cohort.path, o2.path));

  REQUIRE(run("train --config " + (spec_dir.path / "t1.cfg").string()).code == 0);
  REQUIRE(run("train --config " + (spec_dir.path / "t2.cfg").string()).code == 0);
  CHECK(slurp(o1.path / "metrics.json") == slurp(o2.path / "metrics.json"));
  CHECK(slurp(o1.path / "history.csv") == slurp(o2.path / "history.csv"));

  const std::string base = "interpret --attn-dir " + (o1.path / "attn").string() +
                           " --labels " + (cohort.path / "labels.csv").string();
  CHECK(run(base + " --k-path 3 --k-roi 2 --out " + a1.str()).code == 0);
  CHECK(fs::exists(a1.path / "associations.json"));
  CHECK(fs::exists(a1.path / "associations.csv"));
  CHECK_FALSE(fs::exists(a1.path / "associations.svg"));
  CHECK(run(base + " --k-path 3 --k-roi 2 --svg --out " + a1.str()).code == 0);
  CHECK(fs::exists(a1.path / "associations.svg"));

  // k_path beyond the pathway count is a config error
  CHECK(run(base + " --k-path 99 --out " + a1.str()).code == 2);
}

TEST_CASE("gradcheck passes clean and fails with the broken backward rule") {
  auto clean = run("gradcheck");
  CHECK(clean.code == 0);
  CHECK(clean.output.find("PASS") != std::string::npos);
  CHECK(clean.output.find("max relative error") != std::string::npos);

  auto broken = run("gradcheck --break-backward");
  CHECK(broken.code == 3);
  CHECK(broken.output.find("FAIL") != std::string::npos);
}
