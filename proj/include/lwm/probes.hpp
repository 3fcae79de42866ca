#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "lwm/backbone.hpp"
#include "lwm/dataset.hpp"

namespace lwm {

/// Pooled (time-averaged) encoder embeddings. Probes accept only this type:
/// the terminal state token is never exposed to evaluation.
struct PooledEmbeddings {
  Tensorf values;  // [N,d]
  Index count() const { return values.numel() ? values.dim(0) : 0; }
  Index dim() const { return values.numel() ? values.last_dim() : 0; }
};

/// Frozen-encoder embedding pass over a window tensor [N,512,6].
template <typename S>
PooledEmbeddings embed_pooled(Encoder<S>& enc, const Tensorf& windows,
                              Index batch = 32) {
  const Index n = windows.dim(0), L = windows.dim(1), C = windows.dim(2);
  const Index d = enc.config().embed_dim;
  PooledEmbeddings out;
  out.values = Tensorf({n, d});
  for (Index b0 = 0; b0 < n; b0 += batch) {
    const Index B = std::min(batch, n - b0);
    Tensor<S> x({B, L, C});
    for (Index i = 0; i < B * L * C; ++i)
      x[i] = static_cast<S>(windows[b0 * L * C + i]);
    Graph<S> g;
    auto res = enc.encode(g, g.input(std::move(x)));
    const Tensor<S>& pooled = g.val(res.pooled);
    for (Index i = 0; i < B * d; ++i)
      out.values[b0 * d + i] = static_cast<float>(pooled[i]);
  }
  return out;
}

// ---- logistic-regression probe ---------------------------------------------

struct ProbeHp {
  double l2 = 1e-3;
  int max_iters = 500;
  std::uint64_t seed = 0;
};

struct ProbeModel {
  Eigen::MatrixXd weight;  // K x d
  Eigen::VectorXd bias;    // K
};

namespace detail {

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    p.row(r).array() -= p.row(r).maxCoeff();
    p.row(r) = p.row(r).array().exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace detail

inline Eigen::MatrixXd probe_proba(const ProbeModel& m, const Eigen::MatrixXd& x) {
  return detail::softmax_rows((x * m.weight.transpose()).rowwise() +
                              m.bias.transpose());
}

/// Multinomial logistic regression: full-batch gradient descent with Armijo
/// backtracking line search on cross-entropy + L2 (bias excluded).
inline ProbeModel fit_probe(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                            int k, const ProbeHp& hp = {}) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (n < k) throw std::invalid_argument("fit_probe: fewer samples than classes");
  std::vector<int> counts(static_cast<size_t>(k), 0);
  for (int y : labels) {
    if (y < 0 || y >= k) throw std::invalid_argument("fit_probe: label out of range");
    ++counts[static_cast<size_t>(y)];
  }
  if (std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) < 2)
    throw std::invalid_argument("fit_probe: need at least two classes present");

  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) y(i, labels[static_cast<size_t>(i)]) = 1.0;

  ProbeModel m;
  m.weight = Eigen::MatrixXd::Zero(k, d);
  m.bias = Eigen::VectorXd::Zero(k);

  auto loss_at = [&](const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    Eigen::MatrixXd p = detail::softmax_rows((x * w.transpose()).rowwise() + b.transpose());
    double ce = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      ce -= std::log(std::max(p(i, labels[static_cast<size_t>(i)]), 1e-300));
    return ce / static_cast<double>(n) + 0.5 * hp.l2 * w.squaredNorm();
  };

  double alpha = 1.0;
  double f = loss_at(m.weight, m.bias);
  for (int it = 0; it < hp.max_iters; ++it) {
    Eigen::MatrixXd p = probe_proba(m, x);
    Eigen::MatrixXd diff = (p - y) / static_cast<double>(n);
    Eigen::MatrixXd gw = diff.transpose() * x + hp.l2 * m.weight;
    Eigen::VectorXd gb = diff.colwise().sum().transpose();
    const double gnorm2 = gw.squaredNorm() + gb.squaredNorm();
    if (gnorm2 < 1e-14) break;
    alpha = std::min(alpha * 2.0, 1e4);
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      Eigen::MatrixXd w2 = m.weight - alpha * gw;
      Eigen::VectorXd b2 = m.bias - alpha * gb;
      const double f2 = loss_at(w2, b2);
      if (f2 <= f - 1e-4 * alpha * gnorm2) {
        m.weight = std::move(w2);
        m.bias = std::move(b2);
        f = f2;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  return m;
}

// ---- metrics ---------------------------------------------------------------

/// Rank-based AUC with midrank tie handling (equivalent to the pair-counting
/// definition with ties scoring 1/2).
inline double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const size_t n = scores.size();
  if (labels.size() != n) throw std::invalid_argument("auc_roc: length mismatch");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // midrank, 1-based
    for (size_t t = i; t <= j; ++t) rank[idx[t]] = r;
    i = j + 1;
  }
  double pos_ranks = 0;
  long npos = 0;
  for (size_t t = 0; t < n; ++t)
    if (labels[t]) {
      pos_ranks += rank[t];
      ++npos;
    }
  const long nneg = static_cast<long>(n) - npos;
  if (npos == 0 || nneg == 0)
    throw std::invalid_argument("auc_roc: need both classes");
  return (pos_ranks - 0.5 * static_cast<double>(npos) * (npos + 1)) /
         (static_cast<double>(npos) * static_cast<double>(nneg));
}

/// Macro-averaged F1; a class with undefined F1 contributes 0.
inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& labels,
                       int k) {
  if (pred.size() != labels.size()) throw std::invalid_argument("macro_f1: length mismatch");
  std::vector<long> tp(static_cast<size_t>(k), 0), fp(static_cast<size_t>(k), 0),
      fn(static_cast<size_t>(k), 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == labels[i]) ++tp[static_cast<size_t>(pred[i])];
    else {
      ++fp[static_cast<size_t>(pred[i])];
      ++fn[static_cast<size_t>(labels[i])];
    }
  }
  double sum = 0;
  for (int c = 0; c < k; ++c) {
    const double denom = 2.0 * tp[static_cast<size_t>(c)] + fp[static_cast<size_t>(c)] +
                         fn[static_cast<size_t>(c)];
    sum += denom > 0 ? 2.0 * tp[static_cast<size_t>(c)] / denom : 0.0;
  }
  return sum / static_cast<double>(k);
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  long ok = 0;
  for (size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

/// Exponential of the Shannon entropy of the normalized singular values.
inline double effective_rank(const Eigen::MatrixXd& a) {
  if (a.rows() < 2 || a.cols() < 2)
    throw std::invalid_argument("effective_rank: need at least 2x2");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  const double total = sv.sum();
  if (total <= 0) throw std::invalid_argument("effective_rank: all-zero matrix");
  double h = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    const double p = sv[i] / total;
    if (p > 0) h -= p * std::log(p);
  }
  return std::exp(h);
}

/// Mean cosine similarity of consecutive displacement vectors of a latent
/// trajectory; zero-norm displacements are skipped.
inline double latent_straightness(const Eigen::MatrixXd& z) {
  if (z.rows() < 3) throw std::invalid_argument("latent_straightness: need T >= 3");
  double sum = 0;
  long cnt = 0;
  for (Eigen::Index t = 0; t + 2 < z.rows(); ++t) {
    Eigen::VectorXd d1 = z.row(t + 1) - z.row(t);
    Eigen::VectorXd d2 = z.row(t + 2) - z.row(t + 1);
    const double n1 = d1.norm(), n2 = d2.norm();
    if (n1 < 1e-12 || n2 < 1e-12) continue;
    sum += d1.dot(d2) / (n1 * n2);
    ++cnt;
  }
  return cnt ? sum / static_cast<double>(cnt) : 0.0;
}

/// Test-time additive white Gaussian noise at the given per-channel SNR.
inline Tensorf awgn(const Tensorf& windows, double snr_db, RngStream rng) {
  if (std::isinf(snr_db) && snr_db > 0) return windows;
  Tensorf out = windows;
  const Index n = windows.dim(0), L = windows.dim(1), C = windows.dim(2);
  const double factor = std::pow(10.0, snr_db / 10.0);
  for (Index w = 0; w < n; ++w)
    for (Index c = 0; c < C; ++c) {
      double mean = 0, pw = 0;
      for (Index t = 0; t < L; ++t) mean += windows[(w * L + t) * C + c];
      mean /= static_cast<double>(L);
      for (Index t = 0; t < L; ++t) {
        const double v = windows[(w * L + t) * C + c] - mean;
        pw += v * v;
      }
      pw /= static_cast<double>(L);
      const double std = std::sqrt(pw / factor);
      for (Index t = 0; t < L; ++t)
        out[(w * L + t) * C + c] +=
            static_cast<float>(rng.normal(0.0, std));
    }
  return out;
}

// ---- protocols -------------------------------------------------------------

struct ProbeReport {
  std::string protocol;
  std::map<std::string, double> aggregate;
  std::vector<std::map<std::string, double>> per_fold;
  std::vector<std::uint64_t> seeds;

  nlohmann::json to_json() const {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : per_fold) folds.push_back(f);
    return {{"protocol", protocol},
            {"aggregate", aggregate},
            {"per_fold", folds},
            {"seeds", seeds}};
  }

  void write_csv(const fs::path& path) const {
    std::ofstream out(path);
    out << "protocol,metric,fold,seed,value\n";
    for (size_t f = 0; f < per_fold.size(); ++f)
      for (const auto& [name, value] : per_fold[f])
        out << protocol << "," << name << "," << f << ","
            << (f < seeds.size() ? seeds[f] : 0) << "," << value << "\n";
    for (const auto& [name, value] : aggregate)
      out << protocol << "," << name << ",aggregate,," << value << "\n";
  }
};

namespace detail {

inline Eigen::MatrixXd to_matrix(const PooledEmbeddings& e) {
  Eigen::MatrixXd x(e.count(), e.dim());
  for (Index i = 0; i < e.count(); ++i)
    for (Index j = 0; j < e.dim(); ++j)
      x(i, j) = static_cast<double>(e.values[i * e.dim() + j]);
  return x;
}

inline std::map<std::string, double> eval_fold(const ProbeModel& m,
                                               const Eigen::MatrixXd& xte,
                                               const std::vector<int>& yte, int k) {
  Eigen::MatrixXd p = probe_proba(m, xte);
  std::vector<int> pred(static_cast<size_t>(xte.rows()));
  for (Eigen::Index i = 0; i < xte.rows(); ++i) {
    Eigen::Index arg;
    p.row(i).maxCoeff(&arg);
    pred[static_cast<size_t>(i)] = static_cast<int>(arg);
  }
  std::map<std::string, double> metrics;
  metrics["accuracy"] = accuracy(pred, yte);
  metrics["macro_f1"] = macro_f1(pred, yte, k);
  if (k == 2) {
    std::vector<double> scores(static_cast<size_t>(xte.rows()));
    for (Eigen::Index i = 0; i < xte.rows(); ++i)
      scores[static_cast<size_t>(i)] = p(i, 1);
    bool both = false;
    for (size_t i = 1; i < yte.size(); ++i)
      if (yte[i] != yte[0]) both = true;
    if (both) metrics["auc"] = auc_roc(scores, yte);
  }
  return metrics;
}

}  // namespace detail

/// Subject-held-out cross-validation. Protocols: "loocv_subject" (one fold
/// per subject) or "kfold5_subject" (5 folds, subjects assigned whole;
/// stratified by each subject's majority label). No subject ever spans train
/// and test within a fold.
inline ProbeReport cross_validate(const PooledEmbeddings& emb,
                                  const std::vector<int>& labels,
                                  const std::vector<int>& subjects, int k,
                                  const std::string& protocol,
                                  const ProbeHp& hp = {}) {
  const Index n = emb.count();
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(subjects.size()) != n)
    throw std::invalid_argument("cross_validate: length mismatch");
  Eigen::MatrixXd x = detail::to_matrix(emb);

  std::map<int, std::vector<Index>> by_subject;
  for (Index i = 0; i < n; ++i) by_subject[subjects[static_cast<size_t>(i)]].push_back(i);

  std::vector<std::vector<int>> fold_subjects;
  if (protocol == "loocv_subject") {
    for (const auto& [sid, rows] : by_subject) fold_subjects.push_back({sid});
  } else if (protocol == "kfold5_subject") {
    // order subjects by majority label, then deal round-robin into 5 folds
    std::vector<std::pair<int, int>> order;  // (majority label, subject)
    for (const auto& [sid, rows] : by_subject) {
      std::map<int, int> cnt;
      for (Index r : rows) ++cnt[labels[static_cast<size_t>(r)]];
      int maj = 0, best = -1;
      for (const auto& [lab, c] : cnt)
        if (c > best) { best = c; maj = lab; }
      order.emplace_back(maj, sid);
    }
    std::sort(order.begin(), order.end());
    fold_subjects.resize(std::min<size_t>(5, order.size()));
    for (size_t i = 0; i < order.size(); ++i)
      fold_subjects[i % fold_subjects.size()].push_back(order[i].second);
  } else {
    throw std::invalid_argument("cross_validate: unknown protocol " + protocol);
  }

  ProbeReport rep;
  rep.protocol = protocol;
  std::map<std::string, double> sums;
  std::map<std::string, long> counts;
  for (const auto& test_sids : fold_subjects) {
    std::vector<Index> tr, te;
    for (Index i = 0; i < n; ++i) {
      const bool held = std::find(test_sids.begin(), test_sids.end(),
                                  subjects[static_cast<size_t>(i)]) != test_sids.end();
      (held ? te : tr).push_back(i);
    }
    if (te.empty() || tr.empty()) continue;
    auto slice = [&](const std::vector<Index>& rows, Eigen::MatrixXd& xs,
                     std::vector<int>& ys) {
      xs.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
      ys.resize(rows.size());
      for (size_t r = 0; r < rows.size(); ++r) {
        xs.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
        ys[r] = labels[static_cast<size_t>(rows[r])];
      }
    };
    Eigen::MatrixXd xtr, xte;
    std::vector<int> ytr, yte;
    slice(tr, xtr, ytr);
    slice(te, xte, yte);
    ProbeModel m = fit_probe(xtr, ytr, k, hp);
    rep.per_fold.push_back(detail::eval_fold(m, xte, yte, k));
    rep.seeds.push_back(hp.seed);
    for (const auto& [name, v] : rep.per_fold.back()) {
      sums[name] += v;
      ++counts[name];
    }
  }
  // a metric may be absent from some folds (e.g. auc on a one-class test
  // fold); average over the folds that report it
  for (const auto& [name, s] : sums)
    rep.aggregate[name] = s / static_cast<double>(counts[name]);
  return rep;
}

struct LabelEfficiencyPoint {
  double fraction = 0;
  std::vector<double> accuracies;  // one per seed
  double mean = 0, stddev = 0;
};

/// Stratified label-efficiency sweep on a fixed train/test split.
inline std::vector<LabelEfficiencyPoint> label_efficiency(
    const PooledEmbeddings& emb, const std::vector<int>& labels, int k,
    const std::vector<Index>& train_rows, const std::vector<Index>& test_rows,
    const std::vector<double>& fractions = {0.01, 0.05, 0.10, 0.20, 0.50},
    int seeds = 5, const ProbeHp& hp = {}) {
  Eigen::MatrixXd x = detail::to_matrix(emb);
  Eigen::MatrixXd xte(static_cast<Eigen::Index>(test_rows.size()), x.cols());
  std::vector<int> yte(test_rows.size());
  for (size_t r = 0; r < test_rows.size(); ++r) {
    xte.row(static_cast<Eigen::Index>(r)) = x.row(test_rows[r]);
    yte[r] = labels[static_cast<size_t>(test_rows[r])];
  }
  std::vector<LabelEfficiencyPoint> curve;
  for (double frac : fractions) {
    LabelEfficiencyPoint pt;
    pt.fraction = frac;
    for (int s = 0; s < seeds; ++s) {
      RngStream rng(static_cast<std::uint64_t>(hp.seed), 0xeff);
      rng = rng.split(static_cast<std::uint64_t>(s * 1000 + std::lround(frac * 100)));
      // per-class subsample with at least one sample kept
      std::map<int, std::vector<Index>> by_class;
      for (Index r : train_rows) by_class[labels[static_cast<size_t>(r)]].push_back(r);
      std::vector<Index> pick;
      for (auto& [lab, rows] : by_class) {
        for (size_t i = rows.size(); i > 1; --i)
          std::swap(rows[i - 1], rows[rng.uniform_index(i)]);
        const size_t m = std::max<size_t>(
            1, static_cast<size_t>(std::llround(frac * static_cast<double>(rows.size()))));
        pick.insert(pick.end(), rows.begin(), rows.begin() + static_cast<long>(m));
      }
      Eigen::MatrixXd xtr(static_cast<Eigen::Index>(pick.size()), x.cols());
      std::vector<int> ytr(pick.size());
      for (size_t r = 0; r < pick.size(); ++r) {
        xtr.row(static_cast<Eigen::Index>(r)) = x.row(pick[r]);
        ytr[r] = labels[static_cast<size_t>(pick[r])];
      }
      ProbeModel m = fit_probe(xtr, ytr, k, hp);
      Eigen::MatrixXd p = probe_proba(m, xte);
      std::vector<int> pred(yte.size());
      for (Eigen::Index i = 0; i < xte.rows(); ++i) {
        Eigen::Index arg;
        p.row(i).maxCoeff(&arg);
        pred[static_cast<size_t>(i)] = static_cast<int>(arg);
      }
      pt.accuracies.push_back(accuracy(pred, yte));
    }
    for (double a : pt.accuracies) pt.mean += a;
    pt.mean /= static_cast<double>(pt.accuracies.size());
    for (double a : pt.accuracies) pt.stddev += (a - pt.mean) * (a - pt.mean);
    pt.stddev = std::sqrt(pt.stddev / static_cast<double>(pt.accuracies.size()));
    curve.push_back(std::move(pt));
  }
  return curve;
}

}  // namespace lwm
