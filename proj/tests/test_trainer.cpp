#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "npx/synthgen.hpp"
#include "npx/trainer.hpp"

namespace fs = std::filesystem;
using namespace npx;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("npx_trainer_" + std::to_string(counter++) + "_" +
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

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.n_pathways = 3;
  cfg.n_rois = 2;
  cfg.d = 2;
  cfg.hidden_classifier = 8;
  cfg.dropout_p = 0.0;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 4;
  tc.epochs = 2;
  tc.folds = 2;
  tc.seed = 5;
  return tc;
}

FoldData tiny_fold_data(int n, std::uint64_t seed, const ModelConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FoldData d;
  d.pathway_scores.resize(n, cfg.n_pathways);
  for (int s = 0; s < n; ++s) {
    for (int k = 0; k < cfg.n_pathways; ++k) d.pathway_scores(s, k) = g(rng);
    Eigen::MatrixXd img(cfg.n_rois, cfg.d);
    for (Eigen::Index i = 0; i < img.size(); ++i) img(i) = g(rng);
    d.imaging.push_back(img);
    d.labels.push_back(s % 2);
  }
  return d;
}

}  // namespace

TEST_CASE("adamw: zero gradient with zero decay is a fixed point") {
  TrainConfig tc = tiny_train();
  tc.weight_decay = 0.0;
  auto w = ad::leaf((Eigen::MatrixXd(2, 1) << 1.5, -0.25).finished());
  w->grad = Eigen::MatrixXd::Zero(2, 1);
  std::vector<std::pair<std::string, ad::Var>> params = {{"w", w}};
  AdamState st;
  const Eigen::MatrixXd before = w->value;
  adamw_step(params, st, tc, 1);
  CHECK(w->value == before);
}

TEST_CASE("adamw: decoupled decay shrinks weights independently of the gradient") {
  TrainConfig tc = tiny_train();
  tc.lr = 1.0;
  tc.weight_decay = 0.1;
  auto w = ad::leaf((Eigen::MatrixXd(1, 1) << 2.0).finished());
  w->grad = Eigen::MatrixXd::Zero(1, 1);
  std::vector<std::pair<std::string, ad::Var>> params = {{"w", w}};
  AdamState st;
  adamw_step(params, st, tc, 1);
  CHECK(w->value(0, 0) == doctest::Approx(0.9 * 2.0).epsilon(1e-15));
}

TEST_CASE("adamw: repeated steps on a quadratic walk toward the minimum") {
  TrainConfig tc = tiny_train();
  tc.lr = 0.05;
  tc.weight_decay = 0.0;
  auto w = ad::leaf((Eigen::MatrixXd(1, 1) << 3.0).finished());
  std::vector<std::pair<std::string, ad::Var>> params = {{"w", w}};
  AdamState st;
  for (long t = 1; t <= 200; ++t) {
    w->grad = 2.0 * w->value;  // d/dw of w^2
    adamw_step(params, st, tc, t);
  }
  CHECK(std::abs(w->value(0, 0)) < 0.5);
}

TEST_CASE("adamw: guards on step index and non-finite gradients") {
  TrainConfig tc = tiny_train();
  auto w = ad::leaf(Eigen::MatrixXd::Ones(1, 1));
  w->grad = Eigen::MatrixXd::Constant(1, 1, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::pair<std::string, ad::Var>> params = {{"w", w}};
  AdamState st;
  CHECK_THROWS_AS(adamw_step(params, st, tc, 0), ConfigError);
  CHECK_THROWS_AS(adamw_step(params, st, tc, 1), NumericError);
}

TEST_CASE("stratified_kfold: balanced classes deal one of each per fold") {
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) labels.push_back(1);
  for (int i = 0; i < 10; ++i) labels.push_back(0);
  auto split = stratified_kfold(labels, 10, 3);
  REQUIRE(split.folds.size() == 10);
  std::set<int> seen;
  for (const auto& f : split.folds) {
    REQUIRE(f.test_idx.size() == 2);
    int pos = 0;
    for (int i : f.test_idx) {
      pos += labels[i];
      CHECK(seen.insert(i).second);  // folds are disjoint
    }
    CHECK(pos == 1);
    CHECK(std::is_sorted(f.test_idx.begin(), f.test_idx.end()));
    CHECK(f.train_idx.size() == 18);
  }
  CHECK(seen.size() == 20);

  auto again = stratified_kfold(labels, 10, 3);
  for (int f = 0; f < 10; ++f) CHECK(again.folds[f].test_idx == split.folds[f].test_idx);

  CHECK_THROWS_AS(stratified_kfold(labels, 1, 0), ConfigError);
  CHECK_THROWS_AS(stratified_kfold(labels, 21, 0), ConfigError);
}

TEST_CASE("normalize_imaging: hand z-scores, held-out reuse, constant cells") {
  ImagingTable t;
  t.subject_ids = {"a", "b", "c"};
  t.roi_labels = {"R1"};
  t.feature_names = {"f1", "f2"};
  t.features = {(Eigen::MatrixXd(1, 2) << 2.0, 9.0).finished(),
                (Eigen::MatrixXd(1, 2) << 4.0, 9.0).finished(),
                (Eigen::MatrixXd(1, 2) << 3.0, 1.0).finished()};
  auto norm = normalize_imaging(t, {0, 1});
  CHECK(norm.features[0](0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(norm.features[1](0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(norm.features[2](0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  // training-constant feature is zeroed everywhere, including held-out
  CHECK(norm.features[0](0, 1) == 0.0);
  CHECK(norm.features[2](0, 1) == 0.0);
  CHECK(norm.stats.mean(0, 0) == 3.0);
  CHECK_THROWS_AS(normalize_imaging(t, {}), ConfigError);
}

TEST_CASE("rank_auc: hand cases, ties, monotone invariance") {
  CHECK(*rank_auc({0.9, 0.8, 0.3}, {1, 0, 0}) == doctest::Approx(1.0));
  CHECK(*rank_auc({0.1, 0.8}, {1, 0}) == doctest::Approx(0.0));
  CHECK(*rank_auc({0.4, 0.4, 0.4}, {1, 0, 0}) == doctest::Approx(0.5));
  CHECK_FALSE(rank_auc({0.2, 0.7}, {1, 1}).has_value());

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores, warped;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    double s = u(rng);
    scores.push_back(s);
    warped.push_back(std::exp(3.0 * s));  // strictly increasing transform
    labels.push_back(u(rng) < 0.5);
  }
  if (rank_auc(scores, labels))
    CHECK(*rank_auc(scores, labels) == doctest::Approx(*rank_auc(warped, labels)));
}

TEST_CASE("compute_metrics: threshold ties classify positive") {
  auto m = compute_metrics({0.9, 0.8, 0.3}, {1, 0, 0});
  CHECK(*m.accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(*m.sensitivity == doctest::Approx(1.0));
  CHECK(*m.specificity == doctest::Approx(0.5));
  CHECK(*m.auc == doctest::Approx(1.0));

  auto tie = compute_metrics({0.5}, {1});
  CHECK(*tie.accuracy == 1.0);  // score exactly at threshold counts positive
  CHECK_FALSE(tie.auc.has_value());
  CHECK_THROWS_AS(compute_metrics({0.5}, {1, 0}), ShapeError);
}

TEST_CASE("train_fold: zero epochs leaves the seeded initialization untouched") {
  auto cfg = tiny_model();
  TrainConfig tc = tiny_train();
  tc.epochs = 0;
  auto data = tiny_fold_data(6, 1, cfg);
  auto trained = train_fold(data, cfg, tc, 99);
  CHECK(trained.history.empty());

  std::mt19937_64 rng(99);
  auto fresh = ModelParams::init(cfg, rng);
  for (std::size_t i = 0; i < fresh.named().size(); ++i)
    CHECK(trained.params.named()[i].second->value == fresh.named()[i].second->value);
}

TEST_CASE("train_fold: fixed seed reproduces the loss history bitwise") {
  auto cfg = tiny_model();
  auto tc = tiny_train();
  auto data = tiny_fold_data(9, 4, cfg);
  auto a = train_fold(data, cfg, tc, 7);
  auto b = train_fold(data, cfg, tc, 7);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].total == b.history[e].total);
    CHECK(a.history[e].bce == b.history[e].bce);
    CHECK(a.history[e].sparsity == b.history[e].sparsity);
    CHECK(a.history[e].path_sim == b.history[e].path_sim);
  }
  auto c = train_fold(data, cfg, tc, 8);
  CHECK(a.history[0].total != c.history[0].total);
}

TEST_CASE("train_fold: single-class training set is rejected") {
  auto cfg = tiny_model();
  auto data = tiny_fold_data(6, 1, cfg);
  for (auto& y : data.labels) y = 1;
  CHECK_THROWS_AS(train_fold(data, cfg, tiny_train(), 0), ConfigError);
}

TEST_CASE("train_fold: with both lambdas zero the loss is exactly the BCE sum") {
  auto cfg = tiny_model();
  cfg.lambda_sp = 0.0;
  cfg.lambda_path = 0.0;
  auto tc = tiny_train();
  auto data = tiny_fold_data(10, 6, cfg);
  auto trained = train_fold(data, cfg, tc, 12);
  for (const auto& r : trained.history) {
    CHECK(r.total == r.bce);
    CHECK(r.sparsity == 0.0);
    CHECK(r.path_sim == 0.0);
  }

  // independent mirror: plain BCE training loop with the same seed discipline
  const int n = static_cast<int>(data.labels.size());
  std::mt19937_64 rng(12);
  ModelParams params = ModelParams::init(cfg, rng);
  auto named = params.named();
  AdamState adam;
  long t = 0;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> mirror_bce;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_bce = 0.0;
    const int n_batches = (n + tc.batch_size - 1) / tc.batch_size;
    for (int b = 0; b < n_batches; ++b) {
      const int lo = b * tc.batch_size, hi = std::min(n, lo + tc.batch_size);
      ad::Var loss;
      for (int i = lo; i < hi; ++i) {
        const int s = order[i];
        auto fwd = forward_subject(data.pathway_scores.row(s).transpose(), data.imaging[s],
                                   params, cfg, true, rng);
        auto term = ad::weighted_bce(fwd.logit, data.labels[s], cfg.delta);
        loss = loss ? ad::add(loss, term) : term;
      }
      epoch_bce += loss->value(0, 0);
      ad::backward(loss);
      adamw_step(named, adam, tc, ++t);
    }
    mirror_bce.push_back(epoch_bce);
  }
  for (std::size_t e = 0; e < mirror_bce.size(); ++e)
    CHECK(trained.history[e].bce == mirror_bce[e]);
  for (std::size_t i = 0; i < named.size(); ++i)
    CHECK(trained.params.named()[i].second->value == named[i].second->value);
}

TEST_CASE("evaluate: scores are sigmoids and metrics match compute_metrics") {
  auto cfg = tiny_model();
  auto data = tiny_fold_data(5, 3, cfg);
  std::mt19937_64 rng(20);
  ModelParams params = ModelParams::init(cfg, rng);
  auto res = evaluate(params, data, cfg);
  REQUIRE(res.scores.size() == 5);
  REQUIRE(res.attention.size() == 5);
  for (double s : res.scores) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  for (const auto& a : res.attention) {
    CHECK(a.rows() == cfg.n_pathways);
    CHECK(a.cols() == cfg.n_rois);
  }
  auto m = compute_metrics(res.scores, data.labels);
  CHECK(m.accuracy == res.metrics.accuracy);
  CHECK(m.auc == res.metrics.auc);

  // eval mode: calling twice gives identical scores
  auto res2 = evaluate(params, data, cfg);
  CHECK(res.scores == res2.scores);

  // single-class test fold yields no AUC
  for (auto& y : data.labels) y = 0;
  auto nc_only = evaluate(params, data, cfg);
  CHECK_FALSE(nc_only.metrics.auc.has_value());
  CHECK(nc_only.metrics.specificity.has_value());
}

TEST_CASE("run_cv: deterministic outputs, parallel folds identical, files complete") {
  SynthSpec spec;
  spec.n_subjects = 16;
  spec.n_snps = 30;
  spec.n_genes = 10;
  spec.n_pathways = 5;
  spec.n_rois = 4;
  spec.d = 3;
  spec.n_causal_pathways = 2;
  spec.n_causal_rois = 2;
  spec.effect_strength = 2.0;
  spec.noise_sd = 1.0;
  spec.seed = 9;
  auto cohort = generate(spec);

  CvInputs inputs;
  inputs.genotypes = cohort.genotypes;
  inputs.gwas = cohort.gwas;
  inputs.genes = cohort.genes;
  inputs.pathways = cohort.pathways;
  inputs.imaging = cohort.imaging;
  inputs.labels = cohort.labels;

  ModelConfig cfg;
  cfg.hidden_classifier = 8;
  TrainConfig tc = tiny_train();
  tc.epochs = 1;
  tc.folds = 2;
  tc.seed = 33;

  TempDir d1, d2, d3;
  auto r1 = run_cv(inputs, cfg, tc, d1.str());
  auto r2 = run_cv(inputs, cfg, tc, d2.str());
  CHECK(slurp(d1.path / "metrics.json") == slurp(d2.path / "metrics.json"));
  CHECK(slurp(d1.path / "history.csv") == slurp(d2.path / "history.csv"));

  TrainConfig par = tc;
  par.jobs = 2;
  run_cv(inputs, cfg, par, d3.str());
  CHECK(slurp(d1.path / "metrics.json") == slurp(d3.path / "metrics.json"));
  CHECK(slurp(d1.path / "history.csv") == slurp(d3.path / "history.csv"));

  // every aligned subject appears in exactly one test fold
  std::set<std::string> seen(r1.subject_ids.begin(), r1.subject_ids.end());
  CHECK(seen.size() == 16);
  CHECK(r1.attention.size() == 16);
  for (const auto& a : r1.attention) {
    CHECK(a.rows() == static_cast<Eigen::Index>(r1.pathway_ids.size()));
    CHECK(a.cols() == 4);
  }

  // aggregate mean is the mean of the per-fold values
  double sum = 0.0;
  for (const auto& f : r1.report.per_fold) sum += *f.accuracy;
  CHECK(*r1.report.mean.accuracy ==
        doctest::Approx(sum / static_cast<double>(r1.report.per_fold.size())).epsilon(1e-15));

  for (const char* f :
       {"metrics.json", "history.csv", "drop_report.json", "attn/pathway_ids.txt",
        "attn/roi_labels.txt", "checkpoints/fold_0.npxw", "checkpoints/fold_1.npxw"})
    CHECK(fs::exists(d1.path / f));
  for (const auto& sid : r1.subject_ids) {
    const bool in0 = fs::exists(d1.path / "attn" / "fold_0" / (sid + ".tsv"));
    const bool in1 = fs::exists(d1.path / "attn" / "fold_1" / (sid + ".tsv"));
    CHECK(in0 != in1);
  }
}

TEST_CASE("run_cv: fold-local statistics differ from whole-cohort statistics") {
  // imputation means computed on fold training subjects must exclude the
  // held-out fold; verify directly on a genotype table with missing entries
  GenotypeTable t;
  t.subject_ids = {"s1", "s2", "s3", "s4"};
  t.snps = {{"rs1", "1", 100}};
  t.dosages.resize(4, 1);
  t.dosages << 0.0, 2.0, kMissingDosage, 2.0;
  auto fold0 = impute_means(t, {0, 1});  // mean 1.0
  auto fold1 = impute_means(t, {1, 3});  // mean 2.0
  CHECK(fold0(0) == 1.0);
  CHECK(fold1(0) == 2.0);
  CHECK(fold0(0) != fold1(0));
}

TEST_CASE("TrainConfig::validate rejects bad settings") {
  auto tc = tiny_train();
  tc.batch_size = 1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = tiny_train();
  tc.lr = 0.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = tiny_train();
  tc.folds = 1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = tiny_train();
  tc.jobs = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  CHECK_NOTHROW(tiny_train().validate());
}
