#include "npx/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "npx/genio.hpp"

namespace npx {

namespace fs = std::filesystem;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> read_id_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

Eigen::MatrixXd read_matrix_tsv(const std::string& path, Eigen::Index rows,
                                Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Eigen::MatrixXd m(rows, cols);
  std::string line;
  Eigen::Index r = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (r >= rows) throw MalformedLine(path, r + 2, "too many rows");
    std::size_t start = 0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::size_t p = line.find('\t', start);
      std::string tok =
          p == std::string::npos ? line.substr(start) : line.substr(start, p - start);
      char* end = nullptr;
      m(r, c) = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size())
        throw MalformedValue(path, r + 1, "bad entry '" + tok + "'");
      start = p == std::string::npos ? line.size() : p + 1;
    }
    ++r;
  }
  if (r != rows) throw MalformedLine(path, r + 1, "too few rows");
  return m;
}

// descending by value, lexicographic id on ties
std::vector<int> ranked_indices(const Eigen::VectorXd& values,
                                const std::vector<std::string>& ids) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (values(a) != values(b)) return values(a) > values(b);
    return ids[a] < ids[b];
  });
  return idx;
}

}  // namespace

GroupAttention mean_attention(const std::vector<Eigen::MatrixXd>& attention,
                              const std::vector<int>& labels,
                              const std::vector<std::string>& pathway_ids,
                              const std::vector<std::string>& roi_labels) {
  if (attention.size() != labels.size())
    throw ShapeError("mean_attention: attention/labels size mismatch");
  GroupAttention g;
  g.pathway_ids = pathway_ids;
  g.roi_labels = roi_labels;
  const Eigen::Index np = static_cast<Eigen::Index>(pathway_ids.size());
  const Eigen::Index ni = static_cast<Eigen::Index>(roi_labels.size());
  g.mean_pat = Eigen::MatrixXd::Zero(np, ni);
  g.mean_nc = Eigen::MatrixXd::Zero(np, ni);
  for (std::size_t s = 0; s < attention.size(); ++s) {
    if (attention[s].rows() != np || attention[s].cols() != ni)
      throw ShapeError("mean_attention: matrix shape mismatch");
    if (labels[s] == 1) {
      g.mean_pat += attention[s];
      ++g.n_pat;
    } else {
      g.mean_nc += attention[s];
      ++g.n_nc;
    }
  }
  if (g.n_pat == 0) throw GroupEmpty("no PAT subject in attention set");
  if (g.n_nc == 0) throw GroupEmpty("no NC subject in attention set");
  g.mean_pat /= g.n_pat;
  g.mean_nc /= g.n_nc;
  return g;
}

GroupAttention load_group_attention(const std::string& attn_dir,
                                    const std::string& labels_path) {
  auto pathway_ids = read_id_file((fs::path(attn_dir) / "pathway_ids.txt").string());
  auto roi_labels = read_id_file((fs::path(attn_dir) / "roi_labels.txt").string());
  auto label_table = parse_labels(labels_path);
  std::unordered_map<std::string, int> label_of;
  for (std::size_t i = 0; i < label_table.subject_ids.size(); ++i)
    label_of[label_table.subject_ids[i]] = label_table.labels[i];

  std::vector<std::string> fold_dirs;
  for (const auto& e : fs::directory_iterator(attn_dir))
    if (e.is_directory()) fold_dirs.push_back(e.path().string());
  std::sort(fold_dirs.begin(), fold_dirs.end());

  std::vector<Eigen::MatrixXd> attention;
  std::vector<int> labels;
  for (const auto& dir : fold_dirs) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".tsv") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::string sid = fs::path(f).stem().string();
      auto it = label_of.find(sid);
      if (it == label_of.end())
        throw ConfigError("subject '" + sid + "' has no label in " + labels_path);
      attention.push_back(read_matrix_tsv(f, static_cast<Eigen::Index>(pathway_ids.size()),
                                          static_cast<Eigen::Index>(roi_labels.size())));
      labels.push_back(it->second);
    }
  }
  if (attention.empty()) throw ConfigError("no attention matrices found in " + attn_dir);
  return mean_attention(attention, labels, pathway_ids, roi_labels);
}

Eigen::VectorXd pathway_influence(const Eigen::MatrixXd& mean_attention) {
  return mean_attention.rowwise().sum();
}

AssociationSet top_associations(const GroupAttention& g, int k_path, int k_roi) {
  const int np = static_cast<int>(g.pathway_ids.size());
  const int ni = static_cast<int>(g.roi_labels.size());
  if (k_path < 1 || k_path > np) throw ConfigError("k_path must be in [1, N_P]");
  if (k_roi < 1 || k_roi > ni) throw ConfigError("k_roi must be in [1, N_I]");

  AssociationSet s;
  s.groups = {"PAT", "NC"};
  s.pathway_ids = g.pathway_ids;
  s.roi_labels = g.roi_labels;
  s.influence_pat = pathway_influence(g.mean_pat);
  s.influence_nc = pathway_influence(g.mean_nc);

  auto top_paths = [&](const Eigen::VectorXd& infl) {
    auto idx = ranked_indices(infl, g.pathway_ids);
    std::vector<std::string> out;
    for (int i = 0; i < k_path; ++i) out.push_back(g.pathway_ids[idx[i]]);
    return out;
  };
  s.top_pathways_pat = top_paths(s.influence_pat);
  s.top_pathways_nc = top_paths(s.influence_nc);

  std::vector<std::string> a = s.top_pathways_pat, b = s.top_pathways_nc;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                        std::back_inserter(s.intersection));

  auto top_rois = [&](const Eigen::MatrixXd& mean) {
    Eigen::VectorXd col_max = mean.colwise().maxCoeff();
    auto idx = ranked_indices(col_max, g.roi_labels);
    std::vector<std::string> out;
    for (int i = 0; i < k_roi; ++i) out.push_back(g.roi_labels[idx[i]]);
    return out;
  };
  s.top_rois_pat = top_rois(g.mean_pat);
  s.top_rois_nc = top_rois(g.mean_nc);

  std::unordered_map<std::string, int> path_idx, roi_idx;
  for (int i = 0; i < np; ++i) path_idx[g.pathway_ids[i]] = i;
  for (int i = 0; i < ni; ++i) roi_idx[g.roi_labels[i]] = i;
  auto add_edges = [&](const std::vector<std::string>& paths,
                       const std::vector<std::string>& rois, const std::string& group,
                       const Eigen::MatrixXd& mean) {
    for (const auto& p : paths)
      for (const auto& r : rois)
        s.edges.push_back({p, r, group, mean(path_idx[p], roi_idx[r])});
  };
  add_edges(s.top_pathways_pat, s.top_rois_pat, "PAT", g.mean_pat);
  add_edges(s.top_pathways_nc, s.top_rois_nc, "NC", g.mean_nc);
  return s;
}

namespace {

void write_svg(const AssociationSet& s, const std::string& path) {
  // static two-column layout; pathways left, ROIs right
  std::vector<std::string> paths = s.top_pathways_pat;
  for (const auto& p : s.top_pathways_nc)
    if (std::find(paths.begin(), paths.end(), p) == paths.end()) paths.push_back(p);
  std::vector<std::string> rois = s.top_rois_pat;
  for (const auto& r : s.top_rois_nc)
    if (std::find(rois.begin(), rois.end(), r) == rois.end()) rois.push_back(r);

  const double height =
      40.0 * static_cast<double>(std::max(paths.size(), rois.size())) + 40.0;
  std::unordered_map<std::string, double> py, ry;
  for (std::size_t i = 0; i < paths.size(); ++i) py[paths[i]] = 40.0 * (i + 1);
  for (std::size_t i = 0; i < rois.size(); ++i) ry[rois[i]] = 40.0 * (i + 1);

  double wmax = 0.0;
  for (const auto& e : s.edges) wmax = std::max(wmax, e.weight);
  if (wmax <= 0.0) wmax = 1.0;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\""
      << fmt17(height) << "\">\n";
  for (const auto& e : s.edges) {
    const char* color = e.group == "PAT" ? "#7b3fa0" : "#d4a017";
    out << "  <line x1=\"180\" y1=\"" << fmt17(py[e.pathway]) << "\" x2=\"460\" y2=\""
        << fmt17(ry[e.roi]) << "\" stroke=\"" << color << "\" stroke-width=\""
        << fmt17(0.5 + 3.0 * e.weight / wmax) << "\" stroke-opacity=\"0.6\"/>\n";
  }
  for (const auto& p : paths)
    out << "  <text x=\"170\" y=\"" << fmt17(py[p] + 4)
        << "\" text-anchor=\"end\" font-size=\"12\">" << p << "</text>\n";
  for (const auto& r : rois)
    out << "  <text x=\"470\" y=\"" << fmt17(ry[r] + 4) << "\" font-size=\"12\">" << r
        << "</text>\n";
  out << "</svg>\n";
}

}  // namespace

void export_associations(const AssociationSet& s, const std::string& out_dir, bool svg) {
  fs::create_directories(out_dir);

  nlohmann::ordered_json j;
  j["groups"] = s.groups;
  nlohmann::ordered_json infl_pat = nlohmann::ordered_json::object();
  nlohmann::ordered_json infl_nc = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < s.pathway_ids.size(); ++i) {
    infl_pat[s.pathway_ids[i]] = s.influence_pat(static_cast<Eigen::Index>(i));
    infl_nc[s.pathway_ids[i]] = s.influence_nc(static_cast<Eigen::Index>(i));
  }
  j["pathway_influence"] = {{"PAT", infl_pat}, {"NC", infl_nc}};
  j["top_pathways"] = {{"PAT", s.top_pathways_pat}, {"NC", s.top_pathways_nc}};
  j["intersection"] = s.intersection;
  j["top_rois"] = {{"PAT", s.top_rois_pat}, {"NC", s.top_rois_nc}};
  j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : s.edges)
    j["edges"].push_back(
        {{"pathway", e.pathway}, {"roi", e.roi}, {"group", e.group}, {"weight", e.weight}});
  {
    std::ofstream out((fs::path(out_dir) / "associations.json").string(), std::ios::binary);
    if (!out) throw IoError("cannot write associations.json in " + out_dir);
    out << j.dump(2) << '\n';
  }
  {
    std::ofstream out((fs::path(out_dir) / "associations.csv").string(), std::ios::binary);
    if (!out) throw IoError("cannot write associations.csv in " + out_dir);
    out << "pathway_id,roi_label,group,weight\n";
    for (const auto& e : s.edges)
      out << e.pathway << ',' << e.roi << ',' << e.group << ',' << fmt17(e.weight) << '\n';
  }
  if (svg) write_svg(s, (fs::path(out_dir) / "associations.svg").string());
}

AssociationSet parse_associations_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::ordered_json j;
  in >> j;
  AssociationSet s;
  s.groups = j.at("groups").get<std::vector<std::string>>();
  const auto& pat = j.at("pathway_influence").at("PAT");
  const auto& nc = j.at("pathway_influence").at("NC");
  for (auto it = pat.begin(); it != pat.end(); ++it) s.pathway_ids.push_back(it.key());
  s.influence_pat.resize(static_cast<Eigen::Index>(s.pathway_ids.size()));
  s.influence_nc.resize(static_cast<Eigen::Index>(s.pathway_ids.size()));
  for (std::size_t i = 0; i < s.pathway_ids.size(); ++i) {
    s.influence_pat(static_cast<Eigen::Index>(i)) =
        pat.at(s.pathway_ids[i]).get<double>();
    s.influence_nc(static_cast<Eigen::Index>(i)) = nc.at(s.pathway_ids[i]).get<double>();
  }
  s.top_pathways_pat = j.at("top_pathways").at("PAT").get<std::vector<std::string>>();
  s.top_pathways_nc = j.at("top_pathways").at("NC").get<std::vector<std::string>>();
  s.intersection = j.at("intersection").get<std::vector<std::string>>();
  s.top_rois_pat = j.at("top_rois").at("PAT").get<std::vector<std::string>>();
  s.top_rois_nc = j.at("top_rois").at("NC").get<std::vector<std::string>>();
  for (const auto& e : j.at("edges"))
    s.edges.push_back({e.at("pathway").get<std::string>(), e.at("roi").get<std::string>(),
                       e.at("group").get<std::string>(), e.at("weight").get<double>()});
  return s;
}

}  // namespace npx
