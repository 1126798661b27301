#include "npx/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace npx {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("beta1/beta2 must lie in [0, 1)");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

void adamw_step(std::vector<std::pair<std::string, ad::Var>>& params, AdamState& state,
                const TrainConfig& cfg, long t) {
  if (t < 1) throw ConfigError("adamw_step: t must be >= 1");
  if (state.m.empty()) {
    for (auto& [name, p] : params) {
      state.m.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      state.v.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
  }
  constexpr double eps = 1e-8;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].second;
    if (!p->grad.allFinite())
      throw NumericError("non-finite gradient for parameter '" + params[k].first + "'");
    // decoupled decay, separate from the Adam update
    p->value *= (1.0 - cfg.lr * cfg.weight_decay);
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * p->grad;
    state.v[k] =
        (cfg.beta2 * state.v[k].array() + (1.0 - cfg.beta2) * p->grad.array().square())
            .matrix();
    Eigen::ArrayXXd mhat = state.m[k].array() / bc1;
    Eigen::ArrayXXd vhat = state.v[k].array() / bc2;
    p->value -= (cfg.lr * mhat / (vhat.sqrt() + eps)).matrix();
  }
}

CohortSplit stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  if (k < 2) throw ConfigError("stratified_kfold: k must be >= 2");
  if (k > n) throw ConfigError("stratified_kfold: k exceeds the number of subjects");
  std::vector<int> pos, neg;
  for (int i = 0; i < n; ++i) (labels[i] == 1 ? pos : neg).push_back(i);

  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  CohortSplit split;
  split.folds.resize(k);
  std::vector<std::vector<int>> test(k);
  for (std::size_t i = 0; i < pos.size(); ++i) test[i % k].push_back(pos[i]);
  for (std::size_t i = 0; i < neg.size(); ++i) test[i % k].push_back(neg[i]);
  for (int f = 0; f < k; ++f) {
    std::sort(test[f].begin(), test[f].end());
    split.folds[f].test_idx = test[f];
    for (int i = 0; i < n; ++i)
      if (!std::binary_search(test[f].begin(), test[f].end(), i))
        split.folds[f].train_idx.push_back(i);
  }
  return split;
}

NormalizedImaging normalize_imaging(const ImagingTable& imaging,
                                    const std::vector<int>& train_idx) {
  if (train_idx.empty()) throw ConfigError("normalize_imaging: empty training index set");
  const int n_roi = imaging.n_rois();
  const int d = imaging.n_features();
  NormalizedImaging out;
  out.stats.mean = Eigen::MatrixXd::Zero(n_roi, d);
  out.stats.std = Eigen::MatrixXd::Zero(n_roi, d);
  const double n = static_cast<double>(train_idx.size());
  for (int s : train_idx) out.stats.mean += imaging.features[s];
  out.stats.mean /= n;
  for (int s : train_idx)
    out.stats.std += (imaging.features[s] - out.stats.mean).cwiseAbs2();
  out.stats.std = (out.stats.std / n).cwiseSqrt();

  for (const auto& block : imaging.features) {
    Eigen::MatrixXd z(n_roi, d);
    for (int r = 0; r < n_roi; ++r)
      for (int c = 0; c < d; ++c)
        z(r, c) = out.stats.std(r, c) < 1e-8
                      ? 0.0
                      : (block(r, c) - out.stats.mean(r, c)) / out.stats.std(r, c);
    out.features.push_back(std::move(z));
  }
  return out;
}

std::optional<double> rank_auc(const std::vector<double>& scores,
                               const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += (y == 1);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
    i = j;
  }
  double pos_rank_sum = 0.0;
  for (std::size_t s = 0; s < n; ++s)
    if (labels[s] == 1) pos_rank_sum += rank[s];
  return (pos_rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                        double threshold) {
  if (scores.size() != labels.size())
    throw ShapeError("compute_metrics: scores/labels size mismatch");
  long tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;  // ties classify positive
    if (labels[i] == 1)
      pred ? ++tp : ++fn;
    else
      pred ? ++fp : ++tn;
  }
  Metrics m;
  const long total = tp + tn + fp + fn;
  if (total > 0) m.accuracy = static_cast<double>(tp + tn) / total;
  if (tp + fn > 0) m.sensitivity = static_cast<double>(tp) / (tp + fn);
  if (tn + fp > 0) m.specificity = static_cast<double>(tn) / (tn + fp);
  m.auc = rank_auc(scores, labels);
  return m;
}

namespace {

// attention-only forward for the similarity pairs
ad::Var forward_attention(const Eigen::VectorXd& p_vec, const Eigen::MatrixXd& img,
                          ModelParams& params, const ModelConfig& cfg, bool train) {
  auto p = ad::constant(Eigen::MatrixXd(p_vec));
  auto i = ad::constant(img);
  auto p_enc = encode_pathways(p, params);
  auto [i_k, i_v] = encode_imaging(i, params, train);
  auto [attn, igc] = path_attn(i_k, i_v, p_enc, params, cfg);
  (void)igc;
  return attn;
}

}  // namespace

TrainedFold train_fold(const FoldData& train_data, const ModelConfig& cfg,
                       const TrainConfig& tc, std::uint64_t fold_seed) {
  tc.validate();
  cfg.validate();
  const int n = static_cast<int>(train_data.labels.size());
  std::vector<int> pat_idx, nc_idx;
  for (int i = 0; i < n; ++i)
    (train_data.labels[i] == 1 ? pat_idx : nc_idx).push_back(i);
  if (pat_idx.empty() || nc_idx.empty())
    throw ConfigError("train_fold: training set must contain both classes");

  std::mt19937_64 rng(fold_seed);
  TrainedFold out{ModelParams::init(cfg, rng), {}};
  auto params = out.params.named();
  AdamState adam;
  long t = 0;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    const int n_batches = (n + tc.batch_size - 1) / tc.batch_size;
    for (int b = 0; b < n_batches; ++b) {
      const int lo = b * tc.batch_size;
      const int hi = std::min(n, lo + tc.batch_size);
      std::vector<ad::Var> logits, attn;
      std::vector<int> labels;
      std::vector<int> batch_pat, batch_nc;  // positions in attn
      for (int i = lo; i < hi; ++i) {
        const int s = order[i];
        auto fwd = forward_subject(train_data.pathway_scores.row(s).transpose(),
                                   train_data.imaging[s], out.params, cfg, true, rng);
        (train_data.labels[s] == 1 ? batch_pat : batch_nc)
            .push_back(static_cast<int>(attn.size()));
        logits.push_back(fwd.logit);
        attn.push_back(fwd.attention);
        labels.push_back(train_data.labels[s]);
      }

      ad::Var bce;
      for (std::size_t i = 0; i < logits.size(); ++i) {
        auto term = ad::weighted_bce(logits[i], labels[i], cfg.delta);
        bce = bce ? ad::add(bce, term) : term;
      }
      ad::Var total = bce;
      rec.bce += bce->value(0, 0);

      if (cfg.lambda_sp != 0.0) {
        auto sp = loss_sparsity(attn, cfg, rng);
        rec.sparsity += sp->value(0, 0);
        total = ad::add(total, ad::scale(sp, cfg.lambda_sp));
      }

      if (cfg.lambda_path != 0.0) {
        ad::Var path_loss;
        if (tc.pair_per_batch) {
          if (!batch_pat.empty() && !batch_nc.empty()) {
            std::vector<ad::Var> a_pat, a_nc;
            std::uniform_int_distribution<std::size_t> up(0, batch_pat.size() - 1);
            std::uniform_int_distribution<std::size_t> un(0, batch_nc.size() - 1);
            for (int m = 0; m < cfg.m_pairs; ++m) {
              a_pat.push_back(attn[batch_pat[up(rng)]]);
              a_nc.push_back(attn[batch_nc[un(rng)]]);
            }
            path_loss = loss_path_similarity(a_pat, a_nc);
          }
        } else if (b == n_batches - 1) {
          // one dedicated pass per epoch, attached to the final batch
          std::vector<ad::Var> a_pat, a_nc;
          std::uniform_int_distribution<std::size_t> up(0, pat_idx.size() - 1);
          std::uniform_int_distribution<std::size_t> un(0, nc_idx.size() - 1);
          for (int m = 0; m < cfg.m_pairs; ++m) {
            const int sp_ = pat_idx[up(rng)];
            const int sn = nc_idx[un(rng)];
            a_pat.push_back(forward_attention(
                train_data.pathway_scores.row(sp_).transpose(), train_data.imaging[sp_],
                out.params, cfg, true));
            a_nc.push_back(forward_attention(train_data.pathway_scores.row(sn).transpose(),
                                             train_data.imaging[sn], out.params, cfg,
                                             true));
          }
          path_loss = loss_path_similarity(a_pat, a_nc);
        }
        if (path_loss) {
          rec.path_sim += path_loss->value(0, 0);
          total = ad::add(total, ad::scale(path_loss, cfg.lambda_path));
        }
      }

      rec.total += total->value(0, 0);
      ad::backward(total);
      adamw_step(params, adam, tc, ++t);
    }
    out.history.push_back(rec);
  }
  return out;
}

EvalResult evaluate(ModelParams& params, const FoldData& test_data, const ModelConfig& cfg,
                    double threshold) {
  std::mt19937_64 rng(0);  // unused in eval mode
  EvalResult out;
  for (std::size_t s = 0; s < test_data.labels.size(); ++s) {
    auto fwd = forward_subject(test_data.pathway_scores.row(static_cast<Eigen::Index>(s))
                                   .transpose(),
                               test_data.imaging[s], params, cfg, false, rng);
    out.scores.push_back(1.0 / (1.0 + std::exp(-fwd.logit->value(0, 0))));
    out.attention.push_back(fwd.attention->value);
  }
  out.metrics = compute_metrics(out.scores, test_data.labels, threshold);
  return out;
}

namespace {

nlohmann::ordered_json metric_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

Metrics aggregate_mean(const std::vector<Metrics>& folds) {
  Metrics m;
  auto agg = [&](auto getter) -> std::optional<double> {
    double sum = 0.0;
    int cnt = 0;
    for (const auto& f : folds)
      if (getter(f)) {
        sum += *getter(f);
        ++cnt;
      }
    if (cnt == 0) return std::nullopt;
    return sum / cnt;
  };
  m.accuracy = agg([](const Metrics& f) { return f.accuracy; });
  m.sensitivity = agg([](const Metrics& f) { return f.sensitivity; });
  m.specificity = agg([](const Metrics& f) { return f.specificity; });
  m.auc = agg([](const Metrics& f) { return f.auc; });
  return m;
}

Metrics aggregate_std(const std::vector<Metrics>& folds, const Metrics& mean) {
  Metrics m;
  auto agg = [&](auto getter, const std::optional<double>& mu) -> std::optional<double> {
    if (!mu) return std::nullopt;
    double sum = 0.0;
    int cnt = 0;
    for (const auto& f : folds)
      if (getter(f)) {
        sum += (*getter(f) - *mu) * (*getter(f) - *mu);
        ++cnt;
      }
    if (cnt == 0) return std::nullopt;
    return std::sqrt(sum / cnt);
  };
  m.accuracy = agg([](const Metrics& f) { return f.accuracy; }, mean.accuracy);
  m.sensitivity = agg([](const Metrics& f) { return f.sensitivity; }, mean.sensitivity);
  m.specificity = agg([](const Metrics& f) { return f.specificity; }, mean.specificity);
  m.auc = agg([](const Metrics& f) { return f.auc; }, mean.auc);
  return m;
}

void write_attention_tsv(const Eigen::MatrixXd& attn, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  char buf[40];
  for (Eigen::Index r = 0; r < attn.rows(); ++r) {
    for (Eigen::Index c = 0; c < attn.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", attn(r, c));
      if (c) out << '\t';
      out << buf;
    }
    out << '\n';
  }
}

void write_id_list(const std::vector<std::string>& ids, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  for (const auto& id : ids) out << id << '\n';
}

}  // namespace

void write_metrics_json(const MetricsReport& report, const std::string& path) {
  nlohmann::ordered_json j;
  j["folds"] = nlohmann::ordered_json::array();
  for (std::size_t f = 0; f < report.per_fold.size(); ++f) {
    const auto& m = report.per_fold[f];
    j["folds"].push_back({{"fold", f},
                          {"accuracy", metric_json(m.accuracy)},
                          {"sensitivity", metric_json(m.sensitivity)},
                          {"specificity", metric_json(m.specificity)},
                          {"auc", metric_json(m.auc)}});
  }
  auto block = [](const Metrics& m) {
    return nlohmann::ordered_json{{"accuracy", metric_json(m.accuracy)},
                                  {"sensitivity", metric_json(m.sensitivity)},
                                  {"specificity", metric_json(m.specificity)},
                                  {"auc", metric_json(m.auc)}};
  };
  j["aggregate"] = {{"mean", block(report.mean)}, {"std", block(report.stddev)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << j.dump(2) << '\n';
}

CvResult run_cv(const CvInputs& inputs, ModelConfig cfg, const TrainConfig& tc,
                const std::string& out_dir) {
  tc.validate();
  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "attn");
  fs::create_directories(fs::path(out_dir) / "checkpoints");

  auto cohort = align_cohort(inputs.genotypes, inputs.imaging, inputs.labels);
  const auto& labels = cohort.labels.labels;
  const int n = static_cast<int>(labels.size());

  // pathway structure is split-independent; only imputation and z-scoring
  // use fold-train subjects
  auto sg_map = build_snp_gene_map(cohort.genotypes.snps, inputs.genes, inputs.window_kb);
  DropReport drops;
  auto gp_map = build_gene_pathway_map(inputs.pathways, inputs.genes, sg_map, &drops);
  {
    // drop reasons are split-independent; record them once
    std::vector<int> all_idx(n);
    std::iota(all_idx.begin(), all_idx.end(), 0);
    auto gm_all = gene_scores(cohort.genotypes, inputs.gwas, inputs.genes, sg_map,
                              impute_means(cohort.genotypes, all_idx), &drops);
    pathway_scores(gm_all, gp_map, cohort.genotypes.subject_ids, &drops);
  }

  auto split = stratified_kfold(labels, tc.folds, tc.seed);
  const int k = tc.folds;

  cfg.n_rois = cohort.imaging.n_rois();
  cfg.d = cohort.imaging.n_features();

  struct FoldOutput {
    Metrics metrics;
    std::vector<EpochRecord> history;
    std::vector<Eigen::MatrixXd> attention;
    std::vector<std::string> subject_ids;
    std::vector<int> labels;
  };
  std::vector<FoldOutput> outputs(k);
  std::vector<std::string> pathway_ids;
  std::mutex meta_mutex;

  auto run_fold = [&](int f) {
    const auto& fold = split.folds[f];

    auto means = impute_means(cohort.genotypes, fold.train_idx);
    auto gm = gene_scores(cohort.genotypes, inputs.gwas, inputs.genes, sg_map, means);
    auto pm = pathway_scores(gm, gp_map, cohort.genotypes.subject_ids);
    if (pm.pathway_ids.empty()) throw ConfigError("no pathways retained");
    if (inputs.normalize_pathway_scores) pm = normalize_pathways(pm, fold.train_idx);
    auto img = normalize_imaging(cohort.imaging, fold.train_idx);

    {
      std::lock_guard<std::mutex> lock(meta_mutex);
      if (pathway_ids.empty()) pathway_ids = pm.pathway_ids;
    }

    ModelConfig fold_cfg = cfg;
    fold_cfg.n_pathways = static_cast<int>(pm.pathway_ids.size());
    if (inputs.fixed_delta) {
      fold_cfg.delta = *inputs.fixed_delta;
    } else {
      int nc = 0;
      for (int s : fold.train_idx) nc += (labels[s] == 0);
      fold_cfg.delta = static_cast<double>(nc) / static_cast<double>(fold.train_idx.size());
    }

    auto slice = [&](const std::vector<int>& idx) {
      FoldData d;
      d.pathway_scores.resize(static_cast<Eigen::Index>(idx.size()), pm.scores.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        d.pathway_scores.row(static_cast<Eigen::Index>(i)) = pm.scores.row(idx[i]);
        d.imaging.push_back(img.features[idx[i]]);
        d.labels.push_back(labels[idx[i]]);
      }
      return d;
    };

    auto trained = train_fold(slice(fold.train_idx), fold_cfg, tc,
                              tc.seed + static_cast<std::uint64_t>(f));
    auto eval = evaluate(trained.params, slice(fold.test_idx), fold_cfg);

    trained.params.save((fs::path(out_dir) / "checkpoints" /
                         ("fold_" + std::to_string(f) + ".npxw"))
                            .string());
    fs::path attn_dir = fs::path(out_dir) / "attn" / ("fold_" + std::to_string(f));
    fs::create_directories(attn_dir);
    for (std::size_t i = 0; i < fold.test_idx.size(); ++i) {
      const std::string& sid = cohort.labels.subject_ids[fold.test_idx[i]];
      write_attention_tsv(eval.attention[i], (attn_dir / (sid + ".tsv")).string());
      outputs[f].subject_ids.push_back(sid);
      outputs[f].labels.push_back(labels[fold.test_idx[i]]);
    }
    outputs[f].metrics = eval.metrics;
    outputs[f].history = std::move(trained.history);
    outputs[f].attention = std::move(eval.attention);
  };

  if (tc.jobs <= 1) {
    for (int f = 0; f < k; ++f) run_fold(f);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
      while (true) {
        int f = next.fetch_add(1);
        if (f >= k) return;
        try {
          run_fold(f);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> threads;
    for (int i = 0; i < std::min(tc.jobs, k); ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
    if (error) std::rethrow_exception(error);
  }

  CvResult result;
  result.pathway_ids = pathway_ids;
  result.roi_labels = cohort.imaging.roi_labels;
  for (int f = 0; f < k; ++f) {
    result.report.per_fold.push_back(outputs[f].metrics);
    for (std::size_t i = 0; i < outputs[f].subject_ids.size(); ++i) {
      result.subject_ids.push_back(outputs[f].subject_ids[i]);
      result.labels.push_back(outputs[f].labels[i]);
      result.attention.push_back(outputs[f].attention[i]);
    }
  }
  result.report.mean = aggregate_mean(result.report.per_fold);
  result.report.stddev = aggregate_std(result.report.per_fold, result.report.mean);

  write_metrics_json(result.report, (fs::path(out_dir) / "metrics.json").string());
  {
    std::ofstream hist((fs::path(out_dir) / "history.csv").string(), std::ios::binary);
    if (!hist) throw IoError("cannot write history.csv");
    hist << "fold,epoch,L_total,L_bce,L_sp,L_path\n";
    char buf[160];
    for (int f = 0; f < k; ++f)
      for (const auto& r : outputs[f].history) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g\n", f, r.epoch,
                      r.total, r.bce, r.sparsity, r.path_sim);
        hist << buf;
      }
  }
  write_id_list(pathway_ids, (fs::path(out_dir) / "attn" / "pathway_ids.txt").string());
  write_id_list(result.roi_labels, (fs::path(out_dir) / "attn" / "roi_labels.txt").string());
  write_drop_report(drops, (fs::path(out_dir) / "drop_report.json").string());

  return result;
}

}  // namespace npx
