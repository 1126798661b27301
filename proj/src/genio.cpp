#include "npx/genio.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace npx {

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t p = s.find(sep, start);
    if (p == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
  return out;
}

std::int64_t parse_int(const std::string& tok, const std::string& path, long line,
                       const std::string& what) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || p != tok.data() + tok.size())
    throw MalformedValue(path, line, "bad " + what + ": '" + tok + "'");
  return v;
}

double parse_finite_real(const std::string& tok, const std::string& path, long line,
                         const std::string& what) {
  if (tok.empty()) throw MalformedValue(path, line, "empty " + what);
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || !std::isfinite(v))
    throw MalformedValue(path, line, "bad " + what + ": '" + tok + "'");
  return v;
}

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

GenotypeTable parse_genotypes(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw MalformedLine(path, 1, "missing header");
  auto header = split(lines[0], '\t');
  if (header.size() < 4 || header[0] != "snp_id" || header[1] != "chrom" || header[2] != "pos")
    throw MalformedLine(path, 1, "expected header snp_id<TAB>chrom<TAB>pos<TAB><subjects...>");

  GenotypeTable t;
  t.subject_ids.assign(header.begin() + 3, header.end());
  const std::size_t n_subj = t.subject_ids.size();

  std::unordered_set<std::string> seen;
  std::vector<std::vector<double>> rows;  // per SNP
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    long ln = static_cast<long>(i + 1);
    auto tok = split(lines[i], '\t');
    if (tok.size() != 3 + n_subj)
      throw MalformedLine(path, ln, "expected " + std::to_string(3 + n_subj) + " fields, got " +
                                        std::to_string(tok.size()));
    SnpRecord snp{tok[0], tok[1], parse_int(tok[2], path, ln, "pos")};
    if (snp.snp_id.empty()) throw MalformedValue(path, ln, "empty snp_id");
    if (snp.chrom.empty()) throw MalformedValue(path, ln, "empty chrom");
    if (snp.pos < 1) throw MalformedValue(path, ln, "pos must be >= 1");
    if (!seen.insert(snp.snp_id).second)
      throw DuplicateKey(path, ln, "duplicate snp_id '" + snp.snp_id + "'");
    std::vector<double> row(n_subj);
    for (std::size_t j = 0; j < n_subj; ++j) {
      const std::string& d = tok[3 + j];
      if (d == "NA" || d == ".")
        row[j] = kMissingDosage;
      else if (d == "0" || d == "1" || d == "2")
        row[j] = static_cast<double>(d[0] - '0');
      else
        throw MalformedValue(path, ln, "dosage token '" + d + "' not in {0,1,2,NA,.}");
    }
    t.snps.push_back(std::move(snp));
    rows.push_back(std::move(row));
  }
  t.dosages.resize(static_cast<Eigen::Index>(n_subj), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t s = 0; s < rows.size(); ++s)
    for (std::size_t j = 0; j < n_subj; ++j)
      t.dosages(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(s)) = rows[s][j];
  return t;
}

std::vector<GwasRecord> parse_gwas(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw MalformedLine(path, 1, "missing header");
  std::vector<GwasRecord> recs;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    long ln = static_cast<long>(i + 1);
    auto tok = split(lines[i], '\t');
    if (tok.size() != 4) throw MalformedLine(path, ln, "expected 4 fields");
    GwasRecord r;
    r.snp_id = tok[0];
    r.chrom = tok[1];
    r.pos = parse_int(tok[2], path, ln, "pos");
    r.effect_size = parse_finite_real(tok[3], path, ln, "beta");
    if (!seen.insert(r.snp_id).second)
      throw DuplicateKey(path, ln, "duplicate snp_id '" + r.snp_id + "'");
    recs.push_back(std::move(r));
  }
  return recs;
}

std::vector<GeneRecord> parse_gene_annotations(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw MalformedLine(path, 1, "missing header");
  std::vector<GeneRecord> recs;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    long ln = static_cast<long>(i + 1);
    auto tok = split(lines[i], '\t');
    if (tok.size() != 4) throw MalformedLine(path, ln, "expected 4 fields");
    GeneRecord r;
    r.gene_symbol = tok[0];
    r.chrom = tok[1];
    r.start = parse_int(tok[2], path, ln, "start");
    r.end = parse_int(tok[3], path, ln, "end");
    if (r.start > r.end)
      throw InvalidInterval(path, ln, "gene '" + r.gene_symbol + "' has start > end");
    if (!seen.insert(r.gene_symbol).second)
      throw DuplicateKey(path, ln, "duplicate gene_symbol '" + r.gene_symbol + "'");
    recs.push_back(std::move(r));
  }
  if (recs.empty())
    std::cerr << "warning: " << path << " contains no gene records\n";
  return recs;
}

std::vector<PathwayDef> parse_gmt(const std::string& path,
                                  const std::vector<std::string>& exclusion_list) {
  auto lines = read_lines(path);
  std::unordered_set<std::string> excluded(exclusion_list.begin(), exclusion_list.end());
  std::vector<PathwayDef> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    long ln = static_cast<long>(i + 1);
    auto tok = split(lines[i], '\t');
    if (tok.size() < 3) throw MalformedLine(path, ln, "GMT line needs name, description, genes");
    PathwayDef p;
    p.pathway_id = tok[0];
    p.description = tok[1];
    std::unordered_set<std::string> seen;
    for (std::size_t j = 2; j < tok.size(); ++j) {
      if (tok[j].empty()) continue;
      if (seen.insert(tok[j]).second) p.gene_symbols.push_back(tok[j]);
    }
    if (p.gene_symbols.empty())
      throw MalformedLine(path, ln, "pathway '" + p.pathway_id + "' has no genes");
    if (excluded.count(p.pathway_id)) continue;
    out.push_back(std::move(p));
  }
  return out;
}

ImagingTable parse_imaging(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw MalformedLine(path, 1, "missing header");
  auto header = split(lines[0], ',');
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "roi_label")
    throw MalformedLine(path, 1, "expected header subject_id,roi_label,feat_1,...");
  ImagingTable t;
  t.feature_names.assign(header.begin() + 2, header.end());
  const int d = t.n_features();

  std::unordered_map<std::string, int> subj_idx, roi_idx;
  // (subject, roi) -> feature row; ROI set fixed by the first subject
  std::vector<std::vector<std::vector<double>>> feat;  // subject -> roi -> d
  std::vector<std::vector<bool>> filled;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    long ln = static_cast<long>(i + 1);
    auto tok = split(lines[i], ',');
    if (tok.size() != 2 + static_cast<std::size_t>(d))
      throw MalformedLine(path, ln, "expected " + std::to_string(2 + d) + " fields");
    const std::string& sid = tok[0];
    const std::string& roi = tok[1];
    if (!subj_idx.count(sid)) {
      subj_idx.emplace(sid, static_cast<int>(t.subject_ids.size()));
      t.subject_ids.push_back(sid);
      feat.emplace_back();
      filled.emplace_back();
    }
    int si = subj_idx[sid];
    if (!roi_idx.count(roi)) {
      roi_idx.emplace(roi, static_cast<int>(t.roi_labels.size()));
      t.roi_labels.push_back(roi);
    }
    int ri = roi_idx[roi];
    if (feat[si].size() <= static_cast<std::size_t>(ri)) {
      feat[si].resize(ri + 1);
      filled[si].resize(ri + 1, false);
    }
    if (filled[si][ri])
      throw DuplicateKey(path, ln, "duplicate (subject, roi) = (" + sid + ", " + roi + ")");
    std::vector<double> row(d);
    for (int j = 0; j < d; ++j)
      row[j] = parse_finite_real(tok[2 + j], path, ln, "feature " + t.feature_names[j]);
    feat[si][ri] = std::move(row);
    filled[si][ri] = true;
  }
  const int n_roi = t.n_rois();
  for (std::size_t s = 0; s < t.subject_ids.size(); ++s) {
    if (static_cast<int>(feat[s].size()) != n_roi ||
        std::count(filled[s].begin(), filled[s].end(), true) != n_roi)
      throw MalformedValue(path, 0,
                           "subject '" + t.subject_ids[s] + "' is missing ROI rows");
    Eigen::MatrixXd m(n_roi, d);
    for (int r = 0; r < n_roi; ++r)
      for (int j = 0; j < d; ++j) m(r, j) = feat[s][r][j];
    t.features.push_back(std::move(m));
  }
  return t;
}

LabelTable parse_labels(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw MalformedLine(path, 1, "missing header");
  LabelTable t;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    long ln = static_cast<long>(i + 1);
    auto tok = split(lines[i], ',');
    if (tok.size() != 2) throw MalformedLine(path, ln, "expected subject_id,label");
    if (!seen.insert(tok[0]).second)
      throw DuplicateKey(path, ln, "duplicate subject_id '" + tok[0] + "'");
    if (tok[1] != "0" && tok[1] != "1")
      throw MalformedValue(path, ln, "label '" + tok[1] + "' not in {0,1}");
    t.subject_ids.push_back(tok[0]);
    t.labels.push_back(tok[1][0] - '0');
  }
  return t;
}

std::vector<std::string> parse_exclusions(const std::string& path) {
  auto lines = read_lines(path);
  std::vector<std::string> out;
  for (auto& l : lines)
    if (!l.empty()) out.push_back(l);
  return out;
}

void write_genotypes(const GenotypeTable& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << "snp_id\tchrom\tpos";
  for (const auto& s : t.subject_ids) out << '\t' << s;
  out << '\n';
  for (std::size_t j = 0; j < t.snps.size(); ++j) {
    const auto& snp = t.snps[j];
    out << snp.snp_id << '\t' << snp.chrom << '\t' << snp.pos;
    for (Eigen::Index s = 0; s < t.dosages.rows(); ++s) {
      double v = t.dosages(s, static_cast<Eigen::Index>(j));
      if (is_missing(v))
        out << "\tNA";
      else
        out << '\t' << static_cast<int>(v);
    }
    out << '\n';
  }
}

void write_gwas(const std::vector<GwasRecord>& recs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << "snp_id\tchrom\tpos\tbeta\n";
  for (const auto& r : recs)
    out << r.snp_id << '\t' << r.chrom << '\t' << r.pos << '\t' << fmt_real(r.effect_size)
        << '\n';
}

void write_gene_annotations(const std::vector<GeneRecord>& recs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << "gene_symbol\tchrom\tstart\tend\n";
  for (const auto& r : recs)
    out << r.gene_symbol << '\t' << r.chrom << '\t' << r.start << '\t' << r.end << '\n';
}

void write_gmt(const std::vector<PathwayDef>& pathways, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  for (const auto& p : pathways) {
    out << p.pathway_id << '\t' << p.description;
    for (const auto& g : p.gene_symbols) out << '\t' << g;
    out << '\n';
  }
}

void write_imaging(const ImagingTable& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << "subject_id,roi_label";
  for (const auto& f : t.feature_names) out << ',' << f;
  out << '\n';
  for (std::size_t s = 0; s < t.subject_ids.size(); ++s)
    for (int r = 0; r < t.n_rois(); ++r) {
      out << t.subject_ids[s] << ',' << t.roi_labels[r];
      for (int j = 0; j < t.n_features(); ++j) out << ',' << fmt_real(t.features[s](r, j));
      out << '\n';
    }
}

void write_labels(const LabelTable& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << "subject_id,label\n";
  for (std::size_t s = 0; s < t.subject_ids.size(); ++s)
    out << t.subject_ids[s] << ',' << t.labels[s] << '\n';
}

AlignedCohort align_cohort(const GenotypeTable& genotypes, const ImagingTable& imaging,
                           const LabelTable& labels) {
  std::set<std::string> g(genotypes.subject_ids.begin(), genotypes.subject_ids.end());
  std::set<std::string> im(imaging.subject_ids.begin(), imaging.subject_ids.end());
  std::set<std::string> lb(labels.subject_ids.begin(), labels.subject_ids.end());

  std::vector<std::string> common;
  for (const auto& s : g)
    if (im.count(s) && lb.count(s)) common.push_back(s);  // already sorted
  if (common.empty()) throw EmptyCohort("no subject appears in all three tables");

  AlignedCohort out;
  std::set<std::string> keep(common.begin(), common.end());
  for (const auto& sets : {g, im, lb})
    for (const auto& s : sets)
      if (!keep.count(s)) out.dropped_subjects.push_back(s);
  std::sort(out.dropped_subjects.begin(), out.dropped_subjects.end());
  out.dropped_subjects.erase(
      std::unique(out.dropped_subjects.begin(), out.dropped_subjects.end()),
      out.dropped_subjects.end());

  std::unordered_map<std::string, int> gi, ii, li;
  for (std::size_t i = 0; i < genotypes.subject_ids.size(); ++i)
    gi[genotypes.subject_ids[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < imaging.subject_ids.size(); ++i)
    ii[imaging.subject_ids[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < labels.subject_ids.size(); ++i)
    li[labels.subject_ids[i]] = static_cast<int>(i);

  out.genotypes.subject_ids = common;
  out.genotypes.snps = genotypes.snps;
  out.genotypes.dosages.resize(static_cast<Eigen::Index>(common.size()), genotypes.dosages.cols());
  out.imaging.subject_ids = common;
  out.imaging.roi_labels = imaging.roi_labels;
  out.imaging.feature_names = imaging.feature_names;
  out.labels.subject_ids = common;
  for (std::size_t i = 0; i < common.size(); ++i) {
    out.genotypes.dosages.row(static_cast<Eigen::Index>(i)) =
        genotypes.dosages.row(gi[common[i]]);
    out.imaging.features.push_back(imaging.features[ii[common[i]]]);
    out.labels.labels.push_back(labels.labels[li[common[i]]]);
  }
  return out;
}

}  // namespace npx
