#include "npx/model.hpp"

#include <iostream>
#include <map>

namespace npx {

namespace {

ad::Var glorot(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
               Eigen::Index fan_out, std::mt19937_64& rng, const std::string& name) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return ad::leaf(std::move(m), true, name);
}

ad::Var zeros(Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  return ad::leaf(Eigen::MatrixXd::Zero(rows, cols), true, name);
}

ad::Var ones(Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  return ad::leaf(Eigen::MatrixXd::Ones(rows, cols), true, name);
}

}  // namespace

void ModelConfig::validate() const {
  if (n_pathways < 1 || n_rois < 1 || d < 1 || d_q < 1 || d_k < 1 || d_v < 1 ||
      d_qk < 1 || hidden_classifier < 1)
    throw ConfigError("model dimensions must be >= 1");
  if (!(q_sparsity > 0.0 && q_sparsity < 1.0))
    throw ConfigError("q_sparsity must be in (0, 1)");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5))
    throw ConfigError("clamp_eps must be in (0, 0.5)");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw ConfigError("dropout_p must be in [0, 1)");
  if (!(scaling_constant() > 0.0))
    throw ConfigError("attention scaling constant must be positive");
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ModelParams p;
  // per-pathway embedding maps a scalar score to d_q features
  p.embed = glorot(cfg.n_pathways, cfg.d_q, 1, cfg.d_q, rng, "embed");
  p.embed_bias = zeros(cfg.n_pathways, cfg.d_q, "embed_bias");
  p.key_w = glorot(cfg.d_k, cfg.d, cfg.d, cfg.d_k, rng, "key_w");
  p.key_b = zeros(cfg.d_k, 1, "key_b");
  p.key_gamma = ones(cfg.d_k, 1, "key_gamma");
  p.key_beta = zeros(cfg.d_k, 1, "key_beta");
  p.val_w = glorot(cfg.d_v, cfg.d, cfg.d, cfg.d_v, rng, "val_w");
  p.val_b = zeros(cfg.d_v, 1, "val_b");
  p.val_gamma = ones(cfg.d_v, 1, "val_gamma");
  p.val_beta = zeros(cfg.d_v, 1, "val_beta");
  p.proj_q = glorot(cfg.d_q, cfg.d_qk, cfg.d_q, cfg.d_qk, rng, "proj_q");
  p.proj_k = glorot(cfg.d_k, cfg.d_qk, cfg.d_k, cfg.d_qk, rng, "proj_k");
  p.proj_v = glorot(cfg.d_v, cfg.d, cfg.d_v, cfg.d, rng, "proj_v");
  const Eigen::Index flat = static_cast<Eigen::Index>(cfg.n_pathways) * cfg.d;
  p.fc1_w = glorot(cfg.hidden_classifier, flat, flat, cfg.hidden_classifier, rng, "fc1_w");
  p.fc1_b = zeros(cfg.hidden_classifier, 1, "fc1_b");
  p.fc2_w = glorot(1, cfg.hidden_classifier, cfg.hidden_classifier, 1, rng, "fc2_w");
  p.fc2_b = zeros(1, 1, "fc2_b");
  p.key_bn.init(cfg.d_k);
  p.val_bn.init(cfg.d_v);
  return p;
}

std::vector<std::pair<std::string, ad::Var>> ModelParams::named() {
  return {{"embed", embed},         {"embed_bias", embed_bias},
          {"key_w", key_w},         {"key_b", key_b},
          {"key_gamma", key_gamma}, {"key_beta", key_beta},
          {"val_w", val_w},         {"val_b", val_b},
          {"val_gamma", val_gamma}, {"val_beta", val_beta},
          {"proj_q", proj_q},       {"proj_k", proj_k},
          {"proj_v", proj_v},       {"fc1_w", fc1_w},
          {"fc1_b", fc1_b},         {"fc2_w", fc2_w},
          {"fc2_b", fc2_b}};
}

std::vector<std::pair<std::string, ad::Var>> ModelParams::named() const {
  return const_cast<ModelParams*>(this)->named();
}

void ModelParams::save(const std::string& path) const {
  std::vector<std::pair<std::string, Eigen::MatrixXd>> entries;
  for (const auto& [name, v] : named()) entries.emplace_back(name, v->value);
  entries.emplace_back("key_bn.running_mean", key_bn.running_mean);
  entries.emplace_back("key_bn.running_var", key_bn.running_var);
  entries.emplace_back("val_bn.running_mean", val_bn.running_mean);
  entries.emplace_back("val_bn.running_var", val_bn.running_var);
  ad::save_checkpoint(entries, path);
}

ModelParams ModelParams::load(const std::string& path, const ModelConfig& cfg) {
  std::mt19937_64 rng(0);
  ModelParams p = init(cfg, rng);
  std::map<std::string, Eigen::MatrixXd> by_name;
  for (auto& [name, m] : ad::load_checkpoint(path)) by_name.emplace(name, std::move(m));
  for (auto& [name, v] : p.named()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint missing parameter '" + name + "'");
    if (it->second.rows() != v->rows() || it->second.cols() != v->cols())
      throw ShapeError("checkpoint parameter '" + name + "' has wrong shape");
    v->value = it->second;
  }
  auto stat = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint missing '" + name + "'");
    return Eigen::VectorXd(it->second.col(0));
  };
  p.key_bn.running_mean = stat("key_bn.running_mean");
  p.key_bn.running_var = stat("key_bn.running_var");
  p.val_bn.running_mean = stat("val_bn.running_mean");
  p.val_bn.running_var = stat("val_bn.running_var");
  return p;
}

ad::Var encode_pathways(const ad::Var& p, ModelParams& params) {
  return ad::row_scale_add(params.embed, p, params.embed_bias);
}

std::pair<ad::Var, ad::Var> encode_imaging(const ad::Var& imaging, ModelParams& params,
                                           bool train) {
  auto key = ad::relu(ad::batchnorm(ad::linear(imaging, params.key_w, params.key_b),
                                    params.key_gamma, params.key_beta, train,
                                    params.key_bn));
  auto val = ad::relu(ad::batchnorm(ad::linear(imaging, params.val_w, params.val_b),
                                    params.val_gamma, params.val_beta, train,
                                    params.val_bn));
  return {key, val};
}

std::pair<ad::Var, ad::Var> path_attn(const ad::Var& i_k, const ad::Var& i_v,
                                      const ad::Var& p_enc, ModelParams& params,
                                      const ModelConfig& cfg) {
  auto q = ad::matmul(p_enc, params.proj_q);               // N_P x d_qk
  auto k = ad::matmul(i_k, params.proj_k);                 // N_I x d_qk
  auto s = ad::scale(ad::matmul(q, ad::transpose(k)),      // N_P x N_I
                     1.0 / cfg.scaling_constant());
  auto attn = ad::softsign_half(ad::relu(s));
  auto igc = ad::matmul(attn, ad::matmul(i_v, params.proj_v));  // N_P x d
  return {attn, igc};
}

ad::Var classify(const ad::Var& igc, ModelParams& params, const ModelConfig& cfg,
                 bool train, std::mt19937_64& rng) {
  auto h = ad::relu(ad::linear(ad::flatten(igc), params.fc1_w, params.fc1_b));
  h = ad::dropout(h, cfg.dropout_p, train, rng);
  return ad::linear(h, params.fc2_w, params.fc2_b);  // raw logit
}

ForwardOutput forward_subject(const Eigen::VectorXd& pathway_scores,
                              const Eigen::MatrixXd& imaging, ModelParams& params,
                              const ModelConfig& cfg, bool train, std::mt19937_64& rng) {
  if (pathway_scores.size() != cfg.n_pathways)
    throw ShapeError("forward: pathway vector has " + std::to_string(pathway_scores.size()) +
                     " entries, expected " + std::to_string(cfg.n_pathways));
  if (imaging.rows() != cfg.n_rois || imaging.cols() != cfg.d)
    throw ShapeError("forward: imaging block is " + std::to_string(imaging.rows()) + "x" +
                     std::to_string(imaging.cols()));
  auto p = ad::constant(Eigen::MatrixXd(pathway_scores));
  auto i = ad::constant(imaging);
  auto p_enc = encode_pathways(p, params);
  auto [i_k, i_v] = encode_imaging(i, params, train);
  auto [attn, igc] = path_attn(i_k, i_v, p_enc, params, cfg);
  ForwardOutput out;
  out.attention = attn;
  out.igc = igc;
  out.logit = classify(igc, params, cfg, train, rng);
  return out;
}

ad::Var loss_sparsity(const std::vector<ad::Var>& attn_batch, const ModelConfig& cfg,
                      std::mt19937_64& rng) {
  if (attn_batch.empty()) throw DomainError("loss_sparsity: empty batch");
  std::vector<std::size_t> pick;
  if (attn_batch.size() == 1) {
    pick = {0};
  } else {
    std::uniform_int_distribution<std::size_t> u1(0, attn_batch.size() - 1);
    std::size_t a = u1(rng);
    std::uniform_int_distribution<std::size_t> u2(0, attn_batch.size() - 2);
    std::size_t b = u2(rng);
    if (b >= a) ++b;
    pick = {a, b};
  }
  ad::Var total;
  for (std::size_t idx : pick) {
    auto kl = ad::bernoulli_kl_sum(attn_batch[idx], cfg.q_sparsity, cfg.clamp_eps);
    total = total ? ad::add(total, kl) : kl;
  }
  return total;
}

ad::Var loss_path_similarity(const std::vector<ad::Var>& attn_pat,
                             const std::vector<ad::Var>& attn_nc) {
  if (attn_pat.size() != attn_nc.size())
    throw ShapeError("loss_path_similarity: pair lists differ in length");
  if (attn_pat.empty()) {
    std::cerr << "warning: loss_path_similarity with zero pairs\n";
    return ad::constant(0.0);
  }
  ad::Var total;
  for (std::size_t m = 0; m < attn_pat.size(); ++m) {
    auto s_pat = ad::row_sum(attn_pat[m]);
    auto s_nc = ad::row_sum(attn_nc[m]);
    auto l1 = ad::sum_all(ad::abs_elem(ad::sub(s_nc, s_pat)));
    total = total ? ad::add(total, l1) : l1;
  }
  return ad::scale(total, 1.0 / static_cast<double>(attn_pat.size()));
}

ad::Var loss_total(const std::vector<ad::Var>& logits, const std::vector<int>& labels,
                   const std::vector<ad::Var>& attn_batch, const ad::Var& pair_loss,
                   const ModelConfig& cfg, std::mt19937_64& rng) {
  if (logits.size() != labels.size())
    throw ShapeError("loss_total: logits/labels size mismatch");
  if (logits.empty()) throw DomainError("loss_total: empty batch");
  ad::Var total;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    auto bce = ad::weighted_bce(logits[n], labels[n], cfg.delta);
    total = total ? ad::add(total, bce) : bce;
  }
  if (cfg.lambda_sp != 0.0)
    total = ad::add(total, ad::scale(loss_sparsity(attn_batch, cfg, rng), cfg.lambda_sp));
  if (pair_loss && cfg.lambda_path != 0.0)
    total = ad::add(total, ad::scale(pair_loss, cfg.lambda_path));
  return total;
}

}  // namespace npx
