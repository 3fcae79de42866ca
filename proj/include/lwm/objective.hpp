#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lwm/backbone.hpp"

namespace lwm {

// ---- Gauss-Hermite quadrature ----------------------------------------------

struct Quadrature {
  std::vector<double> nodes;    // x_k
  std::vector<double> weights;  // w_k, sum = sqrt(pi)
};

/// Golub-Welsch: eigen-decomposition of the Jacobi matrix for the Hermite
/// weight exp(-x^2). Off-diagonals are sqrt(i/2).
inline Quadrature gauss_hermite(Index k) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(k, k);
  for (Index i = 1; i < k; ++i) {
    const double b = std::sqrt(static_cast<double>(i) / 2.0);
    J(i, i - 1) = b;
    J(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  const double sqrt_pi = std::sqrt(3.14159265358979323846);
  Quadrature q;
  q.nodes.resize(k);
  q.weights.resize(k);
  for (Index i = 0; i < k; ++i) {
    q.nodes[i] = es.eigenvalues()[i];
    const double v0 = es.eigenvectors()(0, i);
    q.weights[i] = sqrt_pi * v0 * v0;
  }
  return q;
}

// ---- SIGReg (Epps-Pulley) --------------------------------------------------

/// Sketched isotropic-Gaussian regulariser. Projects the embedding batch onto
/// M random unit directions and scores each 1-D marginal against N(0,1) with
/// the Epps-Pulley statistic
///   T_m = N * int |ecf_y(t) - exp(-t^2/2)|^2 phi(t) dt
/// evaluated by K-knot Gauss-Hermite quadrature; returns the mean over m.
template <typename S>
int sigreg(Graph<S>& g, int z, RngStream rng, Index M = 1024, Index K = 17) {
  const Tensor<S>& zv = g.val(z);
  const Index N = zv.rows(), d = zv.last_dim();
  if (N < 2) throw std::invalid_argument("sigreg: need at least 2 rows");

  auto U = std::make_shared<Tensor<S>>(Shape{M, d});
  for (Index m = 0; m < M; ++m) {
    double nrm2 = 0;
    for (Index j = 0; j < d; ++j) {
      const double v = rng.normal();
      (*U)[m * d + j] = static_cast<S>(v);
      nrm2 += v * v;
    }
    const S inv = static_cast<S>(1.0 / std::sqrt(std::max(nrm2, 1e-300)));
    for (Index j = 0; j < d; ++j) (*U)[m * d + j] *= inv;
  }

  const Quadrature q = gauss_hermite(K);
  auto knots = std::make_shared<std::vector<std::array<double, 3>>>();  // t, w, E
  const double sqrt_pi = std::sqrt(3.14159265358979323846);
  for (Index i = 0; i < K; ++i) {
    const double t = std::sqrt(2.0) * q.nodes[i];
    const double w = q.weights[i] / sqrt_pi;
    knots->push_back({t, w, std::exp(-0.5 * t * t)});
  }

  auto ep_stat = [N](const Eigen::Matrix<S, Eigen::Dynamic, 1>& y,
                     const std::array<double, 3>& kn, double& C, double& Ssin) {
    C = 0;
    Ssin = 0;
    const double t = kn[0];
    for (Index n = 0; n < y.size(); ++n) {
      const double ty = t * static_cast<double>(y[n]);
      C += std::cos(ty);
      Ssin += std::sin(ty);
    }
    C /= static_cast<double>(N);
    Ssin /= static_cast<double>(N);
  };

  Tensor<S> out({1});
  {
    double acc = 0;
    Eigen::Matrix<S, Eigen::Dynamic, 1> y(N);
    for (Index m = 0; m < M; ++m) {
      typename Tensor<S>::ConstMatrixMap u(U->data() + m * d, 1, d);
      y.noalias() = zv.mat() * u.transpose();
      double tm = 0;
      for (const auto& kn : *knots) {
        double C, Ss;
        ep_stat(y, kn, C, Ss);
        tm += kn[1] * ((C - kn[2]) * (C - kn[2]) + Ss * Ss);
      }
      acc += static_cast<double>(N) * tm;
    }
    out[0] = static_cast<S>(acc / static_cast<double>(M));
  }

  return g.make(std::move(out), {z},
                [z, U, knots, M, N, d, ep_stat](Graph<S>& gg, int self) {
    const S up = gg.grad(self)[0];
    const Tensor<S>& zv = gg.val(z);
    Tensor<S>& dz = gg.grad(z);
    Eigen::Matrix<S, Eigen::Dynamic, 1> y(N), dy(N);
    for (Index m = 0; m < M; ++m) {
      typename Tensor<S>::ConstMatrixMap u(U->data() + m * d, 1, d);
      y.noalias() = zv.mat() * u.transpose();
      dy.setZero();
      for (const auto& kn : *knots) {
        double C, Ss;
        ep_stat(y, kn, C, Ss);
        const double t = kn[0], w = kn[1];
        // d T_m / d y_n = 2 w t (-(C - E) sin(t y_n) + S cos(t y_n))
        for (Index n = 0; n < N; ++n) {
          const double ty = t * static_cast<double>(y[n]);
          dy[n] += static_cast<S>(2.0 * w * t *
                                  (-(C - kn[2]) * std::sin(ty) + Ss * std::cos(ty)));
        }
      }
      const S c = up / static_cast<S>(M);
      dz.mat().noalias() += c * dy * u;
    }
  });
}

// ---- predictor heads -------------------------------------------------------

enum class PredictorKind { linear, mlp, transformer, gdn };

inline std::string to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::linear: return "linear";
    case PredictorKind::mlp: return "mlp";
    case PredictorKind::transformer: return "transformer";
    case PredictorKind::gdn: return "gdn";
  }
  return "linear";
}
inline PredictorKind predictor_from_string(const std::string& s) {
  if (s == "linear") return PredictorKind::linear;
  if (s == "mlp") return PredictorKind::mlp;
  if (s == "transformer") return PredictorKind::transformer;
  if (s == "gdn") return PredictorKind::gdn;
  throw std::invalid_argument("unknown predictor: " + s);
}

/// Bidirectional multi-head self-attention, no masking.
template <typename S>
int mha(Graph<S>& g, int x, int wq, int wk, int wv, int wo, int wo_b, Index H) {
  const Index B = g.val(x).dim(0), L = g.val(x).dim(1), d = g.val(x).dim(2);
  const Index dh = d / H;
  auto heads = [&](int n) {
    n = reshape(g, n, {B, L, H, dh});
    return permute_12(g, n);  // [B,H,L,dh]
  };
  int q = heads(matmul(g, x, wq));
  int k = heads(matmul(g, x, wk));
  int v = heads(matmul(g, x, wv));
  int scores = bmm(g, q, k, false, true);
  scores = scale(g, scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
  int attn = softmax_lastdim(g, scores);
  int ctx = bmm(g, attn, v);
  ctx = reshape(g, permute_12(g, ctx), {B, L, d});
  return bias_add(g, matmul(g, ctx, wo), wo_b);
}

/// Single gated delta-rule block with its own parameters (predictor use).
template <typename S>
int gdn_block_standalone(Graph<S>& g, ParamStore<S>& ps, const std::string& p,
                         int h, Index H, Index dk, Index dv, Index chunk,
                         EigMode mode, S eps) {
  const Index B = g.val(h).dim(0), L = g.val(h).dim(1);
  int q = matmul(g, h, ps.use(g, p + ".wq"));
  int k = matmul(g, h, ps.use(g, p + ".wk"));
  k = reshape(g, k, {B, L, H, dk});
  k = l2_normalize(g, k);
  k = reshape(g, k, {B, L, H * dk});
  int v = matmul(g, h, ps.use(g, p + ".wv"));
  int a = sigmoid(g, matmul(g, h, ps.use(g, p + ".wbeta")));
  if (mode == EigMode::extended) a = scale(g, a, S(2));
  int gate = sigmoid(g, matmul(g, h, ps.use(g, p + ".wgate")));
  auto scan = gdn_scan(g, q, k, v, a, gate, H, chunk, true);
  int o = rms_norm(g, scan.out, ps.use(g, p + ".rms_g"), dv / H, eps);
  int zg = matmul(g, h, ps.use(g, p + ".wz"));
  o = silu_gate(g, zg, o);
  o = matmul(g, o, ps.use(g, p + ".wo"));
  o = bias_add(g, o, ps.use(g, p + ".wo_b"));
  o = add(g, h, o);
  return layer_norm(g, o, ps.use(g, p + ".ln_g"), ps.use(g, p + ".ln_b"), eps);
}

/// Projector plus one of four predictor variants. Token-scope heads (linear,
/// mlp) consume the projected terminal token; sequence-scope heads
/// (transformer, gdn) are applied position-wise to the projected hidden
/// sequence. Discarded after pretraining.
template <typename S>
class LwmHeads {
 public:
  LwmHeads(PredictorKind kind, const ModelConfig& cfg, Index proj_hidden = 512)
      : kind_(kind), d_(cfg.embed_dim), hidden_(proj_hidden),
        context_len_(cfg.context_len), chunk_(cfg.chunk),
        eig_mode_(cfg.eig_mode), eps_(static_cast<S>(cfg.ln_eps)) {
    const Index d = d_, f = hidden_;
    params_.add("proj.w1", {d, f});
    params_.add("proj.b1", {f});
    params_.add("proj.ln_g", {f});
    params_.add("proj.ln_b", {f});
    params_.add("proj.w2", {f, d});
    params_.add("proj.b2", {d});
    switch (kind_) {
      case PredictorKind::linear:
        params_.add("pred.w", {d, d});
        break;
      case PredictorKind::mlp:
        params_.add("pred.w1", {d, f});
        params_.add("pred.b1", {f});
        params_.add("pred.ln_g", {f});
        params_.add("pred.ln_b", {f});
        params_.add("pred.w2", {f, d});
        params_.add("pred.b2", {d});
        break;
      case PredictorKind::transformer: {
        params_.add("pred.pos", {context_len_, d});
        for (int l = 0; l < 2; ++l) {
          const std::string p = "pred.l" + std::to_string(l);
          params_.add(p + ".ln1_g", {d});
          params_.add(p + ".ln1_b", {d});
          params_.add(p + ".wq", {d, d});
          params_.add(p + ".wk", {d, d});
          params_.add(p + ".wv", {d, d});
          params_.add(p + ".wo", {d, d});
          params_.add(p + ".wo_b", {d});
          params_.add(p + ".ln2_g", {d});
          params_.add(p + ".ln2_b", {d});
          params_.add(p + ".ff_w1", {d, 512});
          params_.add(p + ".ff_b1", {512});
          params_.add(p + ".ff_w2", {512, d});
          params_.add(p + ".ff_b2", {d});
        }
        break;
      }
      case PredictorKind::gdn: {
        const Index H = 4, dk = d / H, dv = 2 * d;
        const std::string p = "pred.gdn";
        params_.add(p + ".wq", {d, H * dk});
        params_.add(p + ".wk", {d, H * dk});
        params_.add(p + ".wv", {d, dv});
        params_.add(p + ".wbeta", {d, H});
        params_.add(p + ".wgate", {d, H});
        params_.add(p + ".wz", {d, dv});
        params_.add(p + ".rms_g", {dv});
        params_.add(p + ".wo", {dv, d});
        params_.add(p + ".wo_b", {d});
        params_.add(p + ".ln_g", {d});
        params_.add(p + ".ln_b", {d});
        break;
      }
    }
  }

  PredictorKind kind() const { return kind_; }
  bool sequence_scope() const {
    return kind_ == PredictorKind::transformer || kind_ == PredictorKind::gdn;
  }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  void init(RngStream rng) {
    std::uint64_t salt = 0x4ead5;
    for (auto& e : params_.entries()) {
      RngStream r = rng.split(salt++);
      const std::string& n = e.name;
      auto ends_with = [&](const char* suf) {
        const std::string s(suf);
        return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
      };
      if (ends_with("ln_g") || ends_with("rms_g"))
        e.value.array().setConstant(S(1));
      else if (n == "pred.pos")
        init_normal(e.value, r, 0.02);
      else if (e.value.rank() == 2)
        init_orthogonal(e.value, r);
      else
        e.value.array().setZero();
    }
  }

  /// Expand-compress projector; accepts [B,d] or [B,L,d].
  int project(Graph<S>& g, int s) {
    int y = bias_add(g, matmul(g, s, params_.use(g, "proj.w1")),
                     params_.use(g, "proj.b1"));
    y = layer_norm(g, y, params_.use(g, "proj.ln_g"), params_.use(g, "proj.ln_b"), eps_);
    y = gelu(g, y);
    return bias_add(g, matmul(g, y, params_.use(g, "proj.w2")),
                    params_.use(g, "proj.b2"));
  }

  int predict(Graph<S>& g, int z) {
    const Index rank = g.val(z).rank();
    if (sequence_scope() ? rank != 3 : rank != 2)
      throw std::invalid_argument("predict: scope/shape mismatch");
    switch (kind_) {
      case PredictorKind::linear:
        return matmul(g, z, params_.use(g, "pred.w"));
      case PredictorKind::mlp: {
        int y = bias_add(g, matmul(g, z, params_.use(g, "pred.w1")),
                         params_.use(g, "pred.b1"));
        y = layer_norm(g, y, params_.use(g, "pred.ln_g"),
                       params_.use(g, "pred.ln_b"), eps_);
        y = gelu(g, y);
        return bias_add(g, matmul(g, y, params_.use(g, "pred.w2")),
                        params_.use(g, "pred.b2"));
      }
      case PredictorKind::transformer: {
        int h = broadcast_add_time(g, z, params_.use(g, "pred.pos"));
        for (int l = 0; l < 2; ++l) {
          const std::string p = "pred.l" + std::to_string(l);
          int hn = layer_norm(g, h, params_.use(g, p + ".ln1_g"),
                              params_.use(g, p + ".ln1_b"), eps_);
          int att = mha(g, hn, params_.use(g, p + ".wq"), params_.use(g, p + ".wk"),
                        params_.use(g, p + ".wv"), params_.use(g, p + ".wo"),
                        params_.use(g, p + ".wo_b"), 4);
          h = add(g, h, att);
          hn = layer_norm(g, h, params_.use(g, p + ".ln2_g"),
                          params_.use(g, p + ".ln2_b"), eps_);
          int ff = bias_add(g, matmul(g, hn, params_.use(g, p + ".ff_w1")),
                            params_.use(g, p + ".ff_b1"));
          ff = gelu(g, ff);
          ff = bias_add(g, matmul(g, ff, params_.use(g, p + ".ff_w2")),
                        params_.use(g, p + ".ff_b2"));
          h = add(g, h, ff);
        }
        return h;
      }
      case PredictorKind::gdn:
        return gdn_block_standalone(g, params_, "pred.gdn", z, 4, d_ / 4, 2 * d_,
                                    chunk_, eig_mode_, eps_);
    }
    throw std::logic_error("unreachable");
  }

 private:
  PredictorKind kind_;
  Index d_, hidden_, context_len_, chunk_;
  EigMode eig_mode_;
  S eps_;
  ParamStore<S> params_;
};

// ---- LWM loss --------------------------------------------------------------

template <typename S>
struct LwmLossNodes {
  int total = -1;
  int pred = -1;    // -1 when skipped (lambda == 1)
  int sig = -1;     // -1 when skipped (lambda == 0)
};

/// One latent world-model step on a batch of consecutive window pairs.
/// Both branches flow gradients; there is no stop-gradient or EMA target.
template <typename S>
LwmLossNodes<S> lwm_loss(Graph<S>& g, Encoder<S>& enc, LwmHeads<S>& heads,
                         int x_ctx, int x_tgt, S lambda, RngStream sig_rng,
                         Index sig_dirs = 1024, Index sig_knots = 17) {
  if (lambda < S(0) || lambda > S(1))
    throw std::invalid_argument("lwm_loss: lambda out of [0,1]");
  auto enc_c = enc.encode(g, x_ctx);
  auto enc_t = enc.encode(g, x_tgt);
  const bool seq = heads.sequence_scope();
  int sc = -1, st = -1;  // position-wise projected sequences
  if (seq || lambda > S(0)) {
    sc = heads.project(g, enc_c.final_hidden);
    st = heads.project(g, enc_t.final_hidden);
  }
  LwmLossNodes<S> out;
  if (lambda < S(1)) {
    const int zc = seq ? sc : heads.project(g, enc_c.terminal_token);
    const int zt = seq ? st : heads.project(g, enc_t.terminal_token);
    int zhat = heads.predict(g, zc);
    out.pred = mse_loss(g, zhat, zt);
  }
  if (lambda > S(0)) {
    // the regularizer sees every projected position in the batch, not just
    // the tokens being predicted: with O(B*L) rows its collapse penalty
    // (which grows linearly in the row count) outweighs the prediction
    // term's preference for a constant embedding at any practical batch size
    const Index B = g.val(sc).dim(0), L = g.val(sc).dim(1), d = g.val(sc).dim(2);
    const int rc = reshape(g, sc, {B * L, d});
    const int rt = reshape(g, st, {B * L, d});
    out.sig = sigreg(g, concat0(g, rc, rt), sig_rng, sig_dirs, sig_knots);
  }
  if (out.sig < 0) out.total = out.pred;
  else if (out.pred < 0) out.total = out.sig;
  else out.total = add(g, scale(g, out.pred, S(1) - lambda), scale(g, out.sig, lambda));
  return out;
}

// ---- MAE forecasting head --------------------------------------------------

/// 48 learned queries cross-attend over the encoder hidden states and emit a
/// 48x6 raw-signal forecast.
template <typename S>
class MaeHead {
 public:
  static constexpr Index kHorizon = 48;

  explicit MaeHead(const ModelConfig& cfg)
      : d_(cfg.embed_dim), prefix_(cfg.context_len - kHorizon),
        channels_(cfg.in_channels) {
    params_.add("mae.q", {kHorizon, d_});
    params_.add("mae.wk", {d_, d_});
    params_.add("mae.wv", {d_, d_});
    params_.add("mae.wo", {d_, channels_});
    params_.add("mae.wo_b", {channels_});
  }

  Index prefix() const { return prefix_; }
  ParamStore<S>& params() { return params_; }

  void init(RngStream rng) {
    std::uint64_t salt = 0x3ae;
    for (auto& e : params_.entries()) {
      RngStream r = rng.split(salt++);
      if (e.value.rank() == 2) init_orthogonal(e.value, r);
      else e.value.array().setZero();
    }
  }

  /// states: encoder final hidden [B,L,d]. Returns [B,48,channels].
  int decode(Graph<S>& g, int states) {
    const Index B = g.val(states).dim(0);
    int q = tile0(g, params_.use(g, "mae.q"), B);
    int k = matmul(g, states, params_.use(g, "mae.wk"));
    int v = matmul(g, states, params_.use(g, "mae.wv"));
    int scores = bmm(g, q, k, false, true);
    scores = scale(g, scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_))));
    int ctx = bmm(g, softmax_lastdim(g, scores), v);
    return bias_add(g, matmul(g, ctx, params_.use(g, "mae.wo")),
                    params_.use(g, "mae.wo_b"));
  }

 private:
  Index d_, prefix_, channels_;
  ParamStore<S> params_;
};

template <typename S>
struct MaeForecast {
  int prediction = -1;  // [B,48,C]
  int loss = -1;        // L1
  Tensor<S> encoder_input;  // prefix kept, tail bit-zero
  Tensor<S> target;         // [B,48,C]
};

/// Splits each window into a 464-sample context (zero-padded to full length)
/// and a 48-sample forecasting target.
template <typename S>
MaeForecast<S> mae_forecast(Graph<S>& g, Encoder<S>& enc, MaeHead<S>& head,
                            const Tensor<S>& windows) {
  const Index B = windows.dim(0), L = windows.dim(1), C = windows.dim(2);
  const Index P = head.prefix(), H = MaeHead<S>::kHorizon;
  if (P + H != L) throw std::invalid_argument("mae_forecast: window length mismatch");
  MaeForecast<S> out;
  out.encoder_input = Tensor<S>({B, L, C});
  out.target = Tensor<S>({B, H, C});
  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t < P; ++t)
      for (Index c = 0; c < C; ++c)
        out.encoder_input[(b * L + t) * C + c] = windows[(b * L + t) * C + c];
    for (Index t = 0; t < H; ++t)
      for (Index c = 0; c < C; ++c)
        out.target[(b * H + t) * C + c] = windows[(b * L + P + t) * C + c];
  }
  int x = g.input(out.encoder_input);
  auto encoded = enc.encode(g, x);
  out.prediction = head.decode(g, encoded.final_hidden);
  out.loss = l1_loss(g, out.prediction, g.input(out.target));
  return out;
}

// ---- training loop ---------------------------------------------------------

enum class Objective { lin, mae };

inline std::string to_string(Objective o) { return o == Objective::lin ? "lin" : "mae"; }
inline Objective objective_from_string(const std::string& s) {
  if (s == "lin") return Objective::lin;
  if (s == "mae") return Objective::mae;
  throw std::invalid_argument("unknown objective: " + s);
}

struct TrainConfig {
  Objective objective = Objective::lin;
  PredictorKind predictor = PredictorKind::linear;
  double lambda = 0.2;
  long epochs = 30;
  double peak_lr = 1e-3;
  Index batch_size = 256;
  std::uint64_t seed = 0;
  Index sigreg_dirs = 1024;
  Index sigreg_knots = 17;
  double weight_decay = 0.01;

  nlohmann::json to_json() const {
    return {{"objective", to_string(objective)},
            {"predictor", to_string(predictor)},
            {"lambda", lambda},
            {"epochs", epochs},
            {"peak_lr", peak_lr},
            {"batch_size", batch_size},
            {"seed", seed},
            {"sigreg_dirs", sigreg_dirs},
            {"sigreg_knots", sigreg_knots},
            {"weight_decay", weight_decay}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.objective = objective_from_string(j.value("objective", "lin"));
    c.predictor = predictor_from_string(j.value("predictor", "linear"));
    c.lambda = j.value("lambda", 0.2);
    c.epochs = j.value("epochs", 30L);
    c.peak_lr = j.value("peak_lr", 1e-3);
    c.batch_size = j.value("batch_size", Index(256));
    c.seed = j.value("seed", std::uint64_t(0));
    c.sigreg_dirs = j.value("sigreg_dirs", Index(1024));
    c.sigreg_knots = j.value("sigreg_knots", Index(17));
    c.weight_decay = j.value("weight_decay", 0.01);
    if (c.lambda < 0 || c.lambda > 1) throw std::invalid_argument("lambda out of [0,1]");
    return c;
  }
};

struct TraceRow {
  long step = 0;
  long epoch = 0;
  double total = 0, pred = 0, sigreg = 0, lr = 0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  bool diverged = false;
  long diverged_step = -1;
};

inline void write_trace_csv(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  out << "step,epoch,total,pred,sigreg,lr\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%ld,%ld,%.9g,%.9g,%.9g,%.9g\n", r.step, r.epoch,
                  r.total, r.pred, r.sigreg, r.lr);
    out << buf;
  }
}

namespace detail {

template <typename S>
Tensor<S> gather_windows(const Tensor<S>& windows, const std::vector<Index>& ids) {
  const Index L = windows.dim(1), C = windows.dim(2);
  const Index B = static_cast<Index>(ids.size());
  Tensor<S> out({B, L, C});
  for (Index b = 0; b < B; ++b)
    std::copy(windows.data() + ids[b] * L * C, windows.data() + (ids[b] + 1) * L * C,
              out.data() + b * L * C);
  return out;
}

inline void shuffle_in_place(std::vector<Index>& v, RngStream& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

}  // namespace detail

/// Latent world-model pretraining. `pairs` lists (context, target) window
/// indices; pairs must come from consecutive, non-overlapping segments of one
/// recording (the dataset layer enforces this).
template <typename S>
TrainResult train_lwm(Encoder<S>& enc, LwmHeads<S>& heads, const Tensor<S>& windows,
                      const std::vector<std::pair<Index, Index>>& pairs,
                      const TrainConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("train_lwm: no window pairs");
  const Index B = std::min<Index>(cfg.batch_size, static_cast<Index>(pairs.size()));
  const long steps_per_epoch = std::max<long>(1, static_cast<long>(pairs.size()) / B);
  const long total_steps = cfg.epochs * steps_per_epoch;

  AdamW<S> opt_enc(enc.params(), cfg.peak_lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
  AdamW<S> opt_heads(heads.params(), cfg.peak_lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
  RngStream order_rng(cfg.seed, 0x0d7);
  RngStream sig_root(cfg.seed, 0x51c);

  std::vector<Index> order(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) order[i] = static_cast<Index>(i);

  TrainResult res;
  long step = 0;
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream er = order_rng.split(static_cast<std::uint64_t>(epoch));
    detail::shuffle_in_place(order, er);
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<Index> ctx_ids(B), tgt_ids(B);
      for (Index b = 0; b < B; ++b) {
        const auto& pr = pairs[order[s * B + b]];
        ctx_ids[b] = pr.first;
        tgt_ids[b] = pr.second;
      }
      Graph<S> g;
      int xc = g.input(detail::gather_windows(windows, ctx_ids));
      int xt = g.input(detail::gather_windows(windows, tgt_ids));
      auto nodes = lwm_loss(g, enc, heads, xc, xt, static_cast<S>(cfg.lambda),
                            sig_root.split(static_cast<std::uint64_t>(step)),
                            cfg.sigreg_dirs, cfg.sigreg_knots);
      const double total = g.val(nodes.total)[0];
      TraceRow row;
      row.step = step;
      row.epoch = epoch;
      row.total = total;
      row.pred = nodes.pred >= 0 ? static_cast<double>(g.val(nodes.pred)[0]) : 0.0;
      row.sigreg = nodes.sig >= 0 ? static_cast<double>(g.val(nodes.sig)[0]) : 0.0;
      row.lr = lr_schedule(cfg.peak_lr, step, total_steps);
      res.trace.push_back(row);
      if (!std::isfinite(total)) {
        res.diverged = true;
        res.diverged_step = step;
        return res;
      }
      enc.params().zero_grad();
      heads.params().zero_grad();
      g.backward(nodes.total);
      opt_enc.set_lr(row.lr);
      opt_heads.set_lr(row.lr);
      opt_enc.step();
      opt_heads.step();
    }
  }
  return res;
}

/// Raw-signal forecasting baseline: L1 loss on the 48-sample horizon.
template <typename S>
TrainResult train_mae(Encoder<S>& enc, MaeHead<S>& head, const Tensor<S>& windows,
                      const std::vector<Index>& window_ids, const TrainConfig& cfg) {
  if (window_ids.empty()) throw std::invalid_argument("train_mae: no windows");
  const Index B = std::min<Index>(cfg.batch_size, static_cast<Index>(window_ids.size()));
  const long steps_per_epoch =
      std::max<long>(1, static_cast<long>(window_ids.size()) / B);
  const long total_steps = cfg.epochs * steps_per_epoch;

  AdamW<S> opt_enc(enc.params(), cfg.peak_lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
  AdamW<S> opt_head(head.params(), cfg.peak_lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
  RngStream order_rng(cfg.seed, 0x0d7);

  std::vector<Index> order = window_ids;
  TrainResult res;
  long step = 0;
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream er = order_rng.split(static_cast<std::uint64_t>(epoch));
    detail::shuffle_in_place(order, er);
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<Index> ids(order.begin() + s * B, order.begin() + (s + 1) * B);
      Graph<S> g;
      auto fc = mae_forecast(g, enc, head, detail::gather_windows(windows, ids));
      const double total = g.val(fc.loss)[0];
      TraceRow row;
      row.step = step;
      row.epoch = epoch;
      row.total = total;
      row.pred = total;
      row.lr = lr_schedule(cfg.peak_lr, step, total_steps);
      res.trace.push_back(row);
      if (!std::isfinite(total)) {
        res.diverged = true;
        res.diverged_step = step;
        return res;
      }
      enc.params().zero_grad();
      head.params().zero_grad();
      g.backward(fc.loss);
      opt_enc.set_lr(row.lr);
      opt_head.set_lr(row.lr);
      opt_enc.step();
      opt_head.step();
    }
  }
  return res;
}

}  // namespace lwm
