#include "npx/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace npx {

namespace {

double to_real(const std::string& v, const std::string& key) {
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(x))
    throw ConfigError("config key '" + key + "': bad real value '" + v + "'");
  return x;
}

long to_int(const std::string& v, const std::string& key) {
  char* end = nullptr;
  long x = std::strtol(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size())
    throw ConfigError("config key '" + key + "': bad integer value '" + v + "'");
  return x;
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': bad boolean value '" + v + "'");
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value,
                    const std::string& context) {
  if (key == "genotypes") genotypes = value;
  else if (key == "gwas") gwas = value;
  else if (key == "genes") genes = value;
  else if (key == "gmt") gmt = value;
  else if (key == "exclude") exclude = value;
  else if (key == "imaging") imaging = value;
  else if (key == "labels") labels = value;
  else if (key == "out") out = value;
  else if (key == "d_q") model.d_q = static_cast<int>(to_int(value, key));
  else if (key == "d_k") model.d_k = static_cast<int>(to_int(value, key));
  else if (key == "d_v") model.d_v = static_cast<int>(to_int(value, key));
  else if (key == "d_qk") model.d_qk = static_cast<int>(to_int(value, key));
  else if (key == "gamma") model.gamma = to_real(value, key);
  else if (key == "q_sparsity") model.q_sparsity = to_real(value, key);
  else if (key == "lambda_sp") model.lambda_sp = to_real(value, key);
  else if (key == "lambda_path") model.lambda_path = to_real(value, key);
  else if (key == "delta") {
    model.delta = to_real(value, key);
    delta_auto = false;
  } else if (key == "m_pairs") model.m_pairs = static_cast<int>(to_int(value, key));
  else if (key == "dropout_p") model.dropout_p = to_real(value, key);
  else if (key == "clamp_eps") model.clamp_eps = to_real(value, key);
  else if (key == "hidden_classifier")
    model.hidden_classifier = static_cast<int>(to_int(value, key));
  else if (key == "lr") train.lr = to_real(value, key);
  else if (key == "weight_decay") train.weight_decay = to_real(value, key);
  else if (key == "beta1") train.beta1 = to_real(value, key);
  else if (key == "beta2") train.beta2 = to_real(value, key);
  else if (key == "batch_size") train.batch_size = static_cast<int>(to_int(value, key));
  else if (key == "epochs") train.epochs = static_cast<int>(to_int(value, key));
  else if (key == "folds") train.folds = static_cast<int>(to_int(value, key));
  else if (key == "seed") {
    train.seed = static_cast<std::uint64_t>(to_int(value, key));
    synth.seed = train.seed;
  } else if (key == "jobs") train.jobs = static_cast<int>(to_int(value, key));
  else if (key == "pair_per_batch") train.pair_per_batch = to_bool(value, key);
  else if (key == "window_kb") window_kb = static_cast<int>(to_int(value, key));
  else if (key == "normalize_pathways") normalize_pathways = to_bool(value, key);
  else if (key == "n_subjects") synth.n_subjects = static_cast<int>(to_int(value, key));
  else if (key == "n_snps") synth.n_snps = static_cast<int>(to_int(value, key));
  else if (key == "n_genes") synth.n_genes = static_cast<int>(to_int(value, key));
  else if (key == "n_pathways") synth.n_pathways = static_cast<int>(to_int(value, key));
  else if (key == "n_rois") synth.n_rois = static_cast<int>(to_int(value, key));
  else if (key == "d") synth.d = static_cast<int>(to_int(value, key));
  else if (key == "n_causal_pathways")
    synth.n_causal_pathways = static_cast<int>(to_int(value, key));
  else if (key == "n_causal_rois")
    synth.n_causal_rois = static_cast<int>(to_int(value, key));
  else if (key == "effect_strength") synth.effect_strength = to_real(value, key);
  else if (key == "noise_sd") synth.noise_sd = to_real(value, key);
  else
    throw ConfigError(context + ": unknown config key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  long ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(ln) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)),
            path + ":" + std::to_string(ln));
  }
  return cfg;
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw IoError("cannot write resolved config: " + path);
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  o << "genotypes = " << genotypes << '\n';
  o << "gwas = " << gwas << '\n';
  o << "genes = " << genes << '\n';
  o << "gmt = " << gmt << '\n';
  o << "exclude = " << exclude << '\n';
  o << "imaging = " << imaging << '\n';
  o << "labels = " << labels << '\n';
  o << "out = " << out << '\n';
  o << "d_q = " << model.d_q << '\n';
  o << "d_k = " << model.d_k << '\n';
  o << "d_v = " << model.d_v << '\n';
  o << "d_qk = " << model.d_qk << '\n';
  o << "gamma = " << real(model.gamma) << '\n';
  o << "q_sparsity = " << real(model.q_sparsity) << '\n';
  o << "lambda_sp = " << real(model.lambda_sp) << '\n';
  o << "lambda_path = " << real(model.lambda_path) << '\n';
  if (!delta_auto) o << "delta = " << real(model.delta) << '\n';
  o << "m_pairs = " << model.m_pairs << '\n';
  o << "dropout_p = " << real(model.dropout_p) << '\n';
  o << "clamp_eps = " << real(model.clamp_eps) << '\n';
  o << "hidden_classifier = " << model.hidden_classifier << '\n';
  o << "lr = " << real(train.lr) << '\n';
  o << "weight_decay = " << real(train.weight_decay) << '\n';
  o << "beta1 = " << real(train.beta1) << '\n';
  o << "beta2 = " << real(train.beta2) << '\n';
  o << "batch_size = " << train.batch_size << '\n';
  o << "epochs = " << train.epochs << '\n';
  o << "folds = " << train.folds << '\n';
  o << "seed = " << train.seed << '\n';
  o << "jobs = " << train.jobs << '\n';
  o << "pair_per_batch = " << (train.pair_per_batch ? "true" : "false") << '\n';
  o << "window_kb = " << window_kb << '\n';
  o << "normalize_pathways = " << (normalize_pathways ? "true" : "false") << '\n';
  o << "n_subjects = " << synth.n_subjects << '\n';
  o << "n_snps = " << synth.n_snps << '\n';
  o << "n_genes = " << synth.n_genes << '\n';
  o << "n_pathways = " << synth.n_pathways << '\n';
  o << "n_rois = " << synth.n_rois << '\n';
  o << "d = " << synth.d << '\n';
  o << "n_causal_pathways = " << synth.n_causal_pathways << '\n';
  o << "n_causal_rois = " << synth.n_causal_rois << '\n';
  o << "effect_strength = " << real(synth.effect_strength) << '\n';
  o << "noise_sd = " << real(synth.noise_sd) << '\n';
}

}  // namespace npx
