#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "npx/genio.hpp"

namespace fs = std::filesystem;
using namespace npx;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("npx_genio_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    auto p = (path / name).string();
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("genotypes: two subjects, one SNP") {
  TempDir t;
  auto p = t.file("g.tsv", "snp_id\tchrom\tpos\ts1\ts2\nrs1\t1\t100\t0\t2\n");
  auto g = parse_genotypes(p);
  REQUIRE(g.subject_ids == std::vector<std::string>{"s1", "s2"});
  REQUIRE(g.snps.size() == 1);
  CHECK(g.snps[0].snp_id == "rs1");
  CHECK(g.snps[0].chrom == "1");
  CHECK(g.snps[0].pos == 100);
  CHECK(g.dosages(0, 0) == 0.0);
  CHECK(g.dosages(1, 0) == 2.0);
}

TEST_CASE("genotypes: out-of-alphabet dosage token") {
  TempDir t;
  auto p = t.file("g.tsv", "snp_id\tchrom\tpos\ts1\nrs1\t1\t100\t3\n");
  CHECK_THROWS_AS(parse_genotypes(p), MalformedValue);
  try {
    parse_genotypes(p);
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(e.path() == p);
  }
}

TEST_CASE("genotypes: NA and . parse to the missing sentinel") {
  TempDir t;
  auto p = t.file("g.tsv", "snp_id\tchrom\tpos\ts1\ts2\nrs1\t1\t100\tNA\t.\n");
  auto g = parse_genotypes(p);
  CHECK(is_missing(g.dosages(0, 0)));
  CHECK(is_missing(g.dosages(1, 0)));
}

TEST_CASE("genotypes: duplicate snp_id") {
  TempDir t;
  auto p = t.file("g.tsv",
                  "snp_id\tchrom\tpos\ts1\nrs1\t1\t100\t0\nrs1\t1\t200\t1\n");
  CHECK_THROWS_AS(parse_genotypes(p), DuplicateKey);
}

TEST_CASE("genotypes: CRLF line endings accepted") {
  TempDir t;
  auto p = t.file("g.tsv", "snp_id\tchrom\tpos\ts1\r\nrs1\t1\t100\t1\r\n");
  auto g = parse_genotypes(p);
  CHECK(g.dosages(0, 0) == 1.0);
}

TEST_CASE("gwas: direct parse") {
  TempDir t;
  auto p = t.file("w.tsv", "snp_id\tchrom\tpos\tbeta\nrs1\t1\t1000\t0.5\n");
  auto w = parse_gwas(p);
  REQUIRE(w.size() == 1);
  CHECK(w[0].snp_id == "rs1");
  CHECK(w[0].chrom == "1");
  CHECK(w[0].pos == 1000);
  CHECK(w[0].effect_size == 0.5);
}

TEST_CASE("gwas: non-finite beta rejected") {
  TempDir t;
  auto p = t.file("w.tsv", "snp_id\tchrom\tpos\tbeta\nrs1\t1\t1000\tinf\n");
  CHECK_THROWS_AS(parse_gwas(p), MalformedValue);
}

TEST_CASE("gwas: duplicate snp_id") {
  TempDir t;
  auto p = t.file("w.tsv",
                  "snp_id\tchrom\tpos\tbeta\nrs1\t1\t1\t0.5\nrs1\t1\t2\t0.1\n");
  CHECK_THROWS_AS(parse_gwas(p), DuplicateKey);
}

TEST_CASE("genes: direct parse") {
  TempDir t;
  auto p = t.file("g.tsv", "gene_symbol\tchrom\tstart\tend\nGENE1\t1\t500\t1500\n");
  auto g = parse_gene_annotations(p);
  REQUIRE(g.size() == 1);
  CHECK(g[0].gene_symbol == "GENE1");
  CHECK(g[0].start == 500);
  CHECK(g[0].end == 1500);
}

TEST_CASE("genes: reversed interval") {
  TempDir t;
  auto p = t.file("g.tsv", "gene_symbol\tchrom\tstart\tend\nGENE2\t1\t9\t3\n");
  CHECK_THROWS_AS(parse_gene_annotations(p), InvalidInterval);
}

TEST_CASE("genes: header-only file yields empty list") {
  TempDir t;
  auto p = t.file("g.tsv", "gene_symbol\tchrom\tstart\tend\n");
  CHECK(parse_gene_annotations(p).empty());
}

TEST_CASE("gmt: parse, exclusion, dedup") {
  TempDir t;
  auto p = t.file("p.gmt", "P1\tdesc\tG1\tG2\nP2\tdesc\tG1\tG1\n");
  auto all = parse_gmt(p);
  REQUIRE(all.size() == 2);
  CHECK(all[0].pathway_id == "P1");
  CHECK(all[0].gene_symbols == std::vector<std::string>{"G1", "G2"});
  CHECK(all[1].gene_symbols == std::vector<std::string>{"G1"});

  auto filtered = parse_gmt(p, {"P1"});
  REQUIRE(filtered.size() == 1);
  CHECK(filtered[0].pathway_id == "P2");

  CHECK(parse_gmt(p, {"P1", "P2"}).empty());
}

TEST_CASE("gmt: line with fewer than 3 fields") {
  TempDir t;
  auto p = t.file("p.gmt", "P1\tdesc\n");
  CHECK_THROWS_AS(parse_gmt(p), MalformedLine);
}

TEST_CASE("imaging: 1 subject, 2 ROIs, 4 features") {
  TempDir t;
  auto p = t.file("i.csv",
                  "subject_id,roi_label,f1,f2,f3,f4\n"
                  "s1,roiA,1,2,3,4\n"
                  "s1,roiB,5,6,7,8\n");
  auto img = parse_imaging(p);
  REQUIRE(img.subject_ids == std::vector<std::string>{"s1"});
  REQUIRE(img.n_rois() == 2);
  REQUIRE(img.n_features() == 4);
  CHECK(img.features[0](0, 0) == 1.0);
  CHECK(img.features[0](1, 3) == 8.0);
}

TEST_CASE("imaging: non-finite feature rejected") {
  TempDir t;
  auto p = t.file("i.csv", "subject_id,roi_label,f1\ns1,roiA,nan\n");
  CHECK_THROWS_AS(parse_imaging(p), MalformedValue);
}

TEST_CASE("imaging: missing ROI row for a subject") {
  TempDir t;
  auto p = t.file("i.csv",
                  "subject_id,roi_label,f1\ns1,roiA,1\ns1,roiB,2\ns2,roiA,3\n");
  CHECK_THROWS_AS(parse_imaging(p), MalformedValue);
}

TEST_CASE("labels: direct parse and rejection") {
  TempDir t;
  auto p = t.file("l.csv", "subject_id,label\ns1,1\ns2,0\n");
  auto l = parse_labels(p);
  CHECK(l.subject_ids == std::vector<std::string>{"s1", "s2"});
  CHECK(l.labels == std::vector<int>{1, 0});

  auto bad = t.file("bad.csv", "subject_id,label\ns1,2\n");
  CHECK_THROWS_AS(parse_labels(bad), MalformedValue);
}

TEST_CASE("align_cohort: intersection, identity, disjoint") {
  GenotypeTable g;
  g.subject_ids = {"s1", "s2"};
  g.snps = {{"rs1", "1", 100}};
  g.dosages.resize(2, 1);
  g.dosages << 0, 2;
  ImagingTable im;
  im.subject_ids = {"s2", "s3"};
  im.roi_labels = {"roiA"};
  im.feature_names = {"f1"};
  im.features = {Eigen::MatrixXd::Constant(1, 1, 7.0),
                 Eigen::MatrixXd::Constant(1, 1, 9.0)};
  LabelTable lb;
  lb.subject_ids = {"s2"};
  lb.labels = {1};

  auto a = align_cohort(g, im, lb);
  CHECK(a.genotypes.subject_ids == std::vector<std::string>{"s2"});
  CHECK(a.genotypes.dosages(0, 0) == 2.0);
  CHECK(a.imaging.features[0](0, 0) == 7.0);
  CHECK(a.labels.labels == std::vector<int>{1});
  CHECK(a.dropped_subjects == std::vector<std::string>{"s1", "s3"});

  LabelTable lb2;
  lb2.subject_ids = {"s1", "s2"};
  lb2.labels = {0, 1};
  ImagingTable im2 = im;
  im2.subject_ids = {"s1", "s2"};
  auto b = align_cohort(g, im2, lb2);
  CHECK(b.genotypes.subject_ids == std::vector<std::string>{"s1", "s2"});
  CHECK(b.dropped_subjects.empty());

  LabelTable lb3;
  lb3.subject_ids = {"zz"};
  lb3.labels = {0};
  CHECK_THROWS_AS(align_cohort(g, im, lb3), EmptyCohort);
}

TEST_CASE("round-trip: every table re-parses identically") {
  TempDir t;
  auto gp = t.file("g.tsv",
                   "snp_id\tchrom\tpos\ts1\ts2\nrs1\t1\t100\t0\tNA\nrs2\tX\t5\t2\t1\n");
  auto g = parse_genotypes(gp);
  auto gp2 = (t.path / "g2.tsv").string();
  write_genotypes(g, gp2);
  CHECK(slurp(gp) == slurp(gp2));

  auto wp = t.file("w.tsv", "snp_id\tchrom\tpos\tbeta\nrs1\t1\t1000\t0.5\n");
  auto w = parse_gwas(wp);
  auto wp2 = (t.path / "w2.tsv").string();
  write_gwas(w, wp2);
  auto w2 = parse_gwas(wp2);
  REQUIRE(w2.size() == w.size());
  CHECK(w2[0].effect_size == w[0].effect_size);

  auto ip = t.file("i.csv", "subject_id,roi_label,f1,f2\ns1,roiA,0.25,-3\n");
  auto im = parse_imaging(ip);
  auto ip2 = (t.path / "i2.csv").string();
  write_imaging(im, ip2);
  auto im2 = parse_imaging(ip2);
  CHECK(im2.features[0] == im.features[0]);
  CHECK(im2.roi_labels == im.roi_labels);

  auto lp = t.file("l.csv", "subject_id,label\ns1,1\n");
  auto lb = parse_labels(lp);
  auto lp2 = (t.path / "l2.csv").string();
  write_labels(lb, lp2);
  CHECK(slurp(lp) == slurp(lp2));

  auto pp = t.file("p.gmt", "P1\tdesc\tG1\tG2\n");
  auto pw = parse_gmt(pp);
  auto pp2 = (t.path / "p2.gmt").string();
  write_gmt(pw, pp2);
  CHECK(slurp(pp) == slurp(pp2));

  auto ap = t.file("a.tsv", "gene_symbol\tchrom\tstart\tend\nGENE1\t1\t500\t1500\n");
  auto an = parse_gene_annotations(ap);
  auto ap2 = (t.path / "a2.tsv").string();
  write_gene_annotations(an, ap2);
  CHECK(slurp(ap) == slurp(ap2));
}

TEST_CASE("missing file carries the path in the message") {
  try {
    parse_genotypes("/nonexistent/file.tsv");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/file.tsv") != std::string::npos);
  }
}

TEST_CASE("exclusions: one pathway id per line") {
  TempDir t;
  auto p = t.file("x.txt", "P1\n\nP2\n");
  CHECK(parse_exclusions(p) == std::vector<std::string>{"P1", "P2"});
}
