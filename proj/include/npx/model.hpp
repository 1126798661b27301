#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "npx/autodiff.hpp"

namespace npx {

struct ModelConfig {
  int n_pathways = 0;  // N_P
  int n_rois = 0;      // N_I
  int d = 4;           // imaging features per ROI
  int d_q = 32;
  int d_k = 4;
  int d_v = 8;
  int d_qk = 32;
  double gamma = 1.0;          // factor in the attention scaling constant
  double q_sparsity = 1e-2;    // Bernoulli sparsity target
  double lambda_sp = 1e-6;
  double lambda_path = 1e-3;
  double delta = 0.5;          // positive-class weight in the BCE term
  int m_pairs = 10;
  double dropout_p = 0.5;
  double clamp_eps = 1e-6;
  int hidden_classifier = 64;

  double scaling_constant() const { return gamma * std::sqrt(n_pathways / 2.0); }
  void validate() const;
};

// All learnable weights plus the batchnorm running statistics.
struct ModelParams {
  ad::Var embed;       // E: N_P x d_q
  ad::Var embed_bias;  // B: N_P x d_q
  ad::Var key_w, key_b;        // d_k x d, d_k x 1
  ad::Var key_gamma, key_beta; // d_k x 1
  ad::Var val_w, val_b;        // d_v x d, d_v x 1
  ad::Var val_gamma, val_beta; // d_v x 1
  ad::Var proj_q;  // d_q x d_qk
  ad::Var proj_k;  // d_k x d_qk
  ad::Var proj_v;  // d_v x d, applied as I_v * proj_v
  ad::Var fc1_w, fc1_b;  // hidden x (N_P*d), hidden x 1
  ad::Var fc2_w, fc2_b;  // 1 x hidden, 1 x 1
  ad::BatchNormState key_bn, val_bn;

  static ModelParams init(const ModelConfig& cfg, std::mt19937_64& rng);

  std::vector<std::pair<std::string, ad::Var>> named();
  std::vector<std::pair<std::string, ad::Var>> named() const;

  void save(const std::string& path) const;
  static ModelParams load(const std::string& path, const ModelConfig& cfg);
};

struct ForwardOutput {
  ad::Var logit;      // 1 x 1
  ad::Var attention;  // N_P x N_I, entries in [0, 1)
  ad::Var igc;        // N_P x d
};

// P[k,:] = p_k * E[k,:] + B[k,:]
ad::Var encode_pathways(const ad::Var& p, ModelParams& params);

// Shared-across-ROI linear map + batchnorm over ROI rows + ReLU, with
// independent key and value parameters.
std::pair<ad::Var, ad::Var> encode_imaging(const ad::Var& imaging, ModelParams& params,
                                           bool train);

// S = (P Wq)(Ik Wk)^T / C; A = softsign_half(relu(S)); X_IGC = A (Iv Wv)
std::pair<ad::Var, ad::Var> path_attn(const ad::Var& i_k, const ad::Var& i_v,
                                      const ad::Var& p_enc, ModelParams& params,
                                      const ModelConfig& cfg);

ad::Var classify(const ad::Var& igc, ModelParams& params, const ModelConfig& cfg,
                 bool train, std::mt19937_64& rng);

ForwardOutput forward_subject(const Eigen::VectorXd& pathway_scores,
                              const Eigen::MatrixXd& imaging, ModelParams& params,
                              const ModelConfig& cfg, bool train, std::mt19937_64& rng);

// Bernoulli-KL sparsity penalty over two subjects sampled uniformly without
// replacement from the batch (one if the batch has a single subject).
ad::Var loss_sparsity(const std::vector<ad::Var>& attn_batch, const ModelConfig& cfg,
                      std::mt19937_64& rng);

// Mean L1 distance between pathway-sum vectors of the sampled PAT/NC pairs.
ad::Var loss_path_similarity(const std::vector<ad::Var>& attn_pat,
                             const std::vector<ad::Var>& attn_nc);

// lambda_sp * L_sp + lambda_path * L_path + weighted-BCE sum. pair_loss may
// be null when no pairs were sampled this step; when lambda_sp is zero the
// sparsity term is skipped entirely and the rng is not consumed.
ad::Var loss_total(const std::vector<ad::Var>& logits, const std::vector<int>& labels,
                   const std::vector<ad::Var>& attn_batch, const ad::Var& pair_loss,
                   const ModelConfig& cfg, std::mt19937_64& rng);

}  // namespace npx
