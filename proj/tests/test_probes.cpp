#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "lwm/probes.hpp"

using namespace lwm;

namespace {

// two well-separated Gaussian blobs in d dimensions
void make_blobs(Index n_per, Index d, Eigen::MatrixXd& x, std::vector<int>& y,
                std::uint64_t seed, double sep = 6.0) {
  RngStream rng(seed);
  x.resize(2 * n_per, d);
  y.assign(static_cast<size_t>(2 * n_per), 0);
  for (Index i = 0; i < 2 * n_per; ++i) {
    const int lab = i < n_per ? 0 : 1;
    y[static_cast<size_t>(i)] = lab;
    for (Index j = 0; j < d; ++j)
      x(i, j) = rng.normal() + (lab ? sep : 0.0) * (j == 0 ? 1.0 : 0.0);
  }
}

double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (size_t i = 0; i < s.size(); ++i)
    for (size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        if (s[i] > s[j]) wins += 1;
        else if (s[i] == s[j]) wins += 0.5;
      }
  return wins / pairs;
}

PooledEmbeddings to_emb(const Eigen::MatrixXd& x) {
  PooledEmbeddings e;
  e.values = Tensorf({static_cast<Index>(x.rows()), static_cast<Index>(x.cols())});
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      e.values[i * x.cols() + j] = static_cast<float>(x(i, j));
  return e;
}

}  // namespace

TEST_CASE("probe separates blobs and outputs probabilities") {
  Eigen::MatrixXd x;
  std::vector<int> y;
  make_blobs(40, 8, x, y, 1);
  ProbeModel m = fit_probe(x, y, 2);
  Eigen::MatrixXd p = probe_proba(m, x);
  int correct = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p.minCoeff() >= 0.0);
    correct += (p(i, 1) > 0.5) == (y[static_cast<size_t>(i)] == 1);
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(x.rows()) >= 0.99);

  // zero-init + deterministic solver: duplicating every row changes nothing
  Eigen::MatrixXd x2(2 * x.rows(), x.cols());
  std::vector<int> y2;
  x2 << x, x;
  y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  ProbeModel m2 = fit_probe(x2, y2, 2);
  CHECK((m.weight - m2.weight).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((m.bias - m2.bias).cwiseAbs().maxCoeff() < 1e-9);

  CHECK_THROWS(fit_probe(x, std::vector<int>(y.size(), 0), 2));  // one class
  std::vector<int> bad = y;
  bad[0] = 5;
  CHECK_THROWS(fit_probe(x, bad, 2));
}

TEST_CASE("auc_roc fixtures and oracle") {
  // hand fixture: perfect ranking
  CHECK(auc_roc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  // perfect inversion
  CHECK(auc_roc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == doctest::Approx(0.0));
  // one discordant pair out of four: 0.75
  CHECK(auc_roc({0.1, 0.8, 0.4, 0.9}, {0, 0, 1, 1}) == doctest::Approx(0.75));
  // all-tied scores: 0.5
  CHECK(auc_roc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  // partial ties against the midrank definition
  CHECK(auc_roc({0.2, 0.5, 0.5, 0.7}, {0, 0, 1, 1}) == doctest::Approx(0.875));

  // 20-sample random fixture against the O(N^2) pair count
  RngStream rng(3);
  std::vector<double> s(20);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) {
    s[static_cast<size_t>(i)] = std::round(rng.uniform() * 10.0) / 10.0;  // force ties
    y[static_cast<size_t>(i)] = rng.uniform() < 0.4 ? 1 : 0;
  }
  y[0] = 1;
  y[1] = 0;
  CHECK(auc_roc(s, y) == doctest::Approx(brute_force_auc(s, y)).epsilon(1e-12));

  // invariance under strictly monotone score transforms
  std::vector<double> st = s;
  for (auto& v : st) v = std::exp(3.0 * v);
  CHECK(auc_roc(st, y) == doctest::Approx(auc_roc(s, y)).epsilon(1e-12));

  CHECK_THROWS(auc_roc({0.1, 0.2}, {1, 1}));
  CHECK_THROWS(auc_roc({0.1}, {1, 0}));
}

TEST_CASE("macro F1 fixtures") {
  // perfect prediction
  CHECK(macro_f1({0, 1, 2, 0}, {0, 1, 2, 0}, 3) == doctest::Approx(1.0));
  // binary fixture: tp0=2 fp0=1 fn0=0 -> f1_0=0.8; tp1=1 fp1=0 fn1=1 -> f1_1=2/3
  CHECK(macro_f1({0, 0, 0, 1}, {0, 0, 1, 1}, 2) ==
        doctest::Approx(0.5 * (0.8 + 2.0 / 3.0)));
  // absent class contributes zero
  CHECK(macro_f1({0, 0, 1, 1}, {0, 0, 1, 1}, 3) == doctest::Approx(2.0 / 3.0));
  // everything wrong
  CHECK(macro_f1({1, 0}, {0, 1}, 2) == doctest::Approx(0.0));
  CHECK_THROWS(macro_f1({0}, {0, 1}, 2));
}

TEST_CASE("effective rank") {
  // diag(1,1,1,0): three equal directions -> 3
  Eigen::MatrixXd d4 = Eigen::MatrixXd::Zero(4, 4);
  d4(0, 0) = d4(1, 1) = d4(2, 2) = 1.0;
  CHECK(effective_rank(d4) == doctest::Approx(3.0).epsilon(1e-9));

  // rank-1 matrix -> 1
  Eigen::MatrixXd r1 = Eigen::VectorXd::LinSpaced(6, 1.0, 6.0) *
                       Eigen::RowVectorXd::LinSpaced(5, 1.0, 2.0);
  CHECK(effective_rank(r1) == doctest::Approx(1.0).epsilon(1e-9));

  // matches the entropy-of-singular-values formula on a random matrix
  RngStream rng(4);
  Eigen::MatrixXd a(12, 7);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  double h = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    const double p = sv[i] / sv.sum();
    h -= p * std::log(p);
  }
  CHECK(effective_rank(a) == doctest::Approx(std::exp(h)).epsilon(1e-6));

  // invariant to orthogonal transforms and positive scaling
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(
                          Eigen::MatrixXd::Random(7, 7)).householderQ();
  CHECK(effective_rank(a * q) == doctest::Approx(effective_rank(a)).epsilon(1e-9));
  CHECK(effective_rank(3.7 * a) == doctest::Approx(effective_rank(a)).epsilon(1e-9));

  CHECK_THROWS(effective_rank(Eigen::MatrixXd::Zero(3, 3)));
  CHECK_THROWS(effective_rank(Eigen::MatrixXd::Ones(1, 5)));
}

TEST_CASE("latent straightness") {
  // collinear trajectory -> 1
  Eigen::MatrixXd line(5, 3);
  for (int t = 0; t < 5; ++t) line.row(t) = t * Eigen::RowVector3d(1.0, -2.0, 0.5);
  CHECK(latent_straightness(line) == doctest::Approx(1.0));

  // zigzag -> -1
  Eigen::MatrixXd zig(6, 2);
  for (int t = 0; t < 6; ++t) zig.row(t) = Eigen::RowVector2d(t % 2, 0.0);
  CHECK(latent_straightness(zig) == doctest::Approx(-1.0));

  // long random walk in high dimension -> near 0
  RngStream rng(5);
  Eigen::MatrixXd walk(2000, 64);
  walk.row(0).setZero();
  for (Eigen::Index t = 1; t < walk.rows(); ++t)
    for (Eigen::Index j = 0; j < walk.cols(); ++j)
      walk(t, j) = walk(t - 1, j) + rng.normal();
  CHECK(std::abs(latent_straightness(walk)) < 0.05);

  // invariant to rotation, scaling and translation
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(
                          Eigen::MatrixXd::Random(3, 3)).householderQ();
  Eigen::MatrixXd moved = (2.0 * line * q).rowwise() + Eigen::RowVector3d(5, -1, 2);
  CHECK(latent_straightness(moved) == doctest::Approx(1.0).epsilon(1e-9));

  // repeated points are skipped, not NaN
  Eigen::MatrixXd rep(4, 2);
  rep << 0, 0, 0, 0, 1, 0, 2, 0;
  CHECK(std::isfinite(latent_straightness(rep)));

  CHECK_THROWS(latent_straightness(Eigen::MatrixXd::Zero(2, 3)));
}

TEST_CASE("awgn") {
  Tensorf w({4, kWindowLen, kChannels});
  RngStream rng(6);
  rng.fill_normal(w, 0.0, 0.2);

  // +inf SNR is the identity
  Tensorf same = awgn(w, std::numeric_limits<double>::infinity(), RngStream(7));
  for (Index i = 0; i < w.numel(); ++i) CHECK(same[i] == w[i]);

  // realized SNR within 0.5 dB of the request
  for (double snr : {10.0, 0.0}) {
    Tensorf noisy = awgn(w, snr, RngStream(8));
    double sig = 0, noise = 0;
    for (Index wi = 0; wi < 4; ++wi)
      for (Index c = 0; c < kChannels; ++c) {
        double mean = 0;
        for (Index t = 0; t < kWindowLen; ++t)
          mean += w[(wi * kWindowLen + t) * kChannels + c];
        mean /= kWindowLen;
        for (Index t = 0; t < kWindowLen; ++t) {
          const Index i = (wi * kWindowLen + t) * kChannels + c;
          const double s = w[i] - mean;
          const double e = noisy[i] - w[i];
          sig += s * s;
          noise += e * e;
        }
      }
    const double realized = 10.0 * std::log10(sig / noise);
    CHECK(std::abs(realized - snr) < 0.5);
  }
}

TEST_CASE("cross validation protocols") {
  const Index n_per = 6;  // windows per subject
  const int n_subj = 10;
  Eigen::MatrixXd x(n_per * n_subj, 8);
  std::vector<int> labels, subjects;
  RngStream rng(9);
  for (int s = 0; s < n_subj; ++s) {
    const int lab = s % 2;
    for (Index i = 0; i < n_per; ++i) {
      const Eigen::Index r = s * n_per + i;
      for (Index j = 0; j < 8; ++j)
        x(r, j) = rng.normal() + (lab ? 4.0 : 0.0) * (j < 2 ? 1.0 : 0.0);
      labels.push_back(lab);
      subjects.push_back(s);
    }
  }
  PooledEmbeddings emb = to_emb(x);

  auto loo = cross_validate(emb, labels, subjects, 2, "loocv_subject");
  CHECK(loo.per_fold.size() == static_cast<size_t>(n_subj));
  CHECK(loo.aggregate.at("accuracy") > 0.95);

  auto kf = cross_validate(emb, labels, subjects, 2, "kfold5_subject");
  CHECK(kf.per_fold.size() == 5);
  CHECK(kf.aggregate.at("accuracy") > 0.95);
  CHECK(kf.aggregate.count("auc") == 1);
  // aggregate is the mean of the folds
  double s_acc = 0;
  for (const auto& f : kf.per_fold) s_acc += f.at("accuracy");
  CHECK(kf.aggregate.at("accuracy") == doctest::Approx(s_acc / 5.0));

  CHECK_THROWS(cross_validate(emb, labels, subjects, 2, "bogus"));
}

TEST_CASE("label efficiency curve") {
  Eigen::MatrixXd x;
  std::vector<int> y;
  make_blobs(60, 6, x, y, 10, 5.0);
  PooledEmbeddings emb = to_emb(x);
  std::vector<Index> train_rows, test_rows;
  for (Index i = 0; i < 120; ++i) (i % 3 == 0 ? test_rows : train_rows).push_back(i);

  auto curve = label_efficiency(emb, y, 2, train_rows, test_rows,
                                {0.05, 0.20, 0.50}, 3);
  REQUIRE(curve.size() == 3);
  for (const auto& pt : curve) {
    CHECK(pt.accuracies.size() == 3);
    CHECK(pt.mean >= 0.0);
    CHECK(pt.mean <= 1.0);
  }
  // well-separated blobs: even tiny label budgets should do well, and the
  // largest budget should not be worse than the smallest
  CHECK(curve.back().mean >= curve.front().mean - 0.05);
  CHECK(curve.back().mean > 0.95);
}

TEST_CASE("embed_pooled is batch-size independent") {
  ModelConfig cfg = ModelConfig::tiny();
  Encoder<float> enc(cfg);
  enc.init(RngStream(11));
  Tensorf windows({7, cfg.context_len, cfg.in_channels});
  RngStream rng(12);
  rng.fill_normal(windows, 0.0, 0.3);

  PooledEmbeddings a = embed_pooled(enc, windows, 3);
  PooledEmbeddings b = embed_pooled(enc, windows, 7);
  PooledEmbeddings c = embed_pooled(enc, windows, 1);
  REQUIRE(a.count() == 7);
  REQUIRE(a.dim() == cfg.embed_dim);
  for (Index i = 0; i < a.values.numel(); ++i) {
    CHECK(a.values[i] == b.values[i]);
    CHECK(a.values[i] == c.values[i]);
  }
}
