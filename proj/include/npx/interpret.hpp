#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "npx/errors.hpp"

namespace npx {

struct GroupAttention {
  std::vector<std::string> pathway_ids;
  std::vector<std::string> roi_labels;
  Eigen::MatrixXd mean_pat;  // N_P x N_I
  Eigen::MatrixXd mean_nc;
  int n_pat = 0;
  int n_nc = 0;
};

struct AssociationEdge {
  std::string pathway;
  std::string roi;
  std::string group;  // "PAT" or "NC"
  double weight = 0.0;
};

struct AssociationSet {
  std::vector<std::string> groups;  // fixed: {"PAT", "NC"}
  Eigen::VectorXd influence_pat;    // length N_P
  Eigen::VectorXd influence_nc;
  std::vector<std::string> pathway_ids;
  std::vector<std::string> roi_labels;
  std::vector<std::string> top_pathways_pat;
  std::vector<std::string> top_pathways_nc;
  std::vector<std::string> intersection;
  std::vector<std::string> top_rois_pat;
  std::vector<std::string> top_rois_nc;
  std::vector<AssociationEdge> edges;
};

// Elementwise mean within each label group over per-subject test-fold
// attention matrices.
GroupAttention mean_attention(const std::vector<Eigen::MatrixXd>& attention,
                              const std::vector<int>& labels,
                              const std::vector<std::string>& pathway_ids,
                              const std::vector<std::string>& roi_labels);

// Reads attn/<fold>/<subject_id>.tsv dumps plus the pathway_ids.txt /
// roi_labels.txt sidecars written by the trainer.
GroupAttention load_group_attention(const std::string& attn_dir,
                                    const std::string& labels_path);

// Row sums over ROI columns.
Eigen::VectorXd pathway_influence(const Eigen::MatrixXd& mean_attention);

// Top pathways by influence and top ROIs by maximum group-mean entry; ties
// break lexicographically by identifier.
AssociationSet top_associations(const GroupAttention& group_attention, int k_path = 7,
                                int k_roi = 4);

// associations.json + associations.csv; byte-deterministic output.
void export_associations(const AssociationSet& set, const std::string& out_dir,
                         bool svg = false);

AssociationSet parse_associations_json(const std::string& path);

}  // namespace npx
