#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "lwm/autodiff.hpp"

namespace lwm {

/// Gated delta-rule linear recurrence over per-head associative states.
///
/// Per head, with unit-norm keys k_t, values v_t, update rates a_t and decay
/// gates g_t, the state evolves as
///   S_t = g_t * S_{t-1} (I - a_t k_t k_t^T) + a_t v_t k_t^T
/// and the op emits o_t = S_t q_t.
///
/// The forward pass is chunk-parallel (UT/WY transform within each chunk,
/// decay ratios kept relative so no tiny gate products are inverted); the
/// backward pass replays the recurrence from chunk-boundary checkpoints.

template <typename S>
struct GdnScanResult {
  int out = -1;  // [B,L,H*dvh]
  /// Terminal per-head states, [B,H,dvh,dk]; value-only (not differentiated).
  std::shared_ptr<Tensor<S>> terminal_state;
};

namespace detail {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Naive per-timestep recurrence; also used by the backward pass to replay
/// states inside a chunk.
template <typename S>
void gdn_sequential_head(const S* q, const S* k, const S* v, const S* a,
                         const S* g, Index L, Index dk, Index dvh, Index stride_qk,
                         Index stride_v, Index stride_s, Mat<S>& state, S* out,
                         Mat<S>* states_log = nullptr) {
  Eigen::Matrix<S, Eigen::Dynamic, 1> kv(dk), qv(dk), vv(dvh), sk(dvh);
  for (Index t = 0; t < L; ++t) {
    for (Index i = 0; i < dk; ++i) {
      kv[i] = k[t * stride_qk + i];
      qv[i] = q[t * stride_qk + i];
    }
    for (Index i = 0; i < dvh; ++i) vv[i] = v[t * stride_v + i];
    const S at = a[t * stride_s];
    const S gt = g[t * stride_s];
    // S <- g (S - a (S k) k^T) + a v k^T
    sk.noalias() = state * kv;
    state = gt * (state - at * sk * kv.transpose());
    state.noalias() += at * vv * kv.transpose();
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> ov(out + t * stride_v, dvh);
    ov.noalias() = state * qv;
    if (states_log) states_log->row(t) = Eigen::Map<Mat<S>>(state.data(), 1, dvh * dk);
  }
}

/// Chunk-parallel evaluation of one head.
template <typename S>
void gdn_chunkwise_head(const S* q, const S* k, const S* v, const S* a,
                        const S* g, Index L, Index dk, Index dvh, Index chunk,
                        Index stride_qk, Index stride_v, Index stride_s,
                        Mat<S>& state, S* out,
                        std::vector<Mat<S>>* checkpoints = nullptr) {
  for (Index t0 = 0; t0 < L; t0 += chunk) {
    const Index C = std::min(chunk, L - t0);
    if (checkpoints) checkpoints->push_back(state);
    Mat<S> K(C, dk), Q(C, dk), V(C, dvh);
    Eigen::Array<S, Eigen::Dynamic, 1> av(C), lg(C);
    for (Index i = 0; i < C; ++i) {
      for (Index j = 0; j < dk; ++j) {
        K(i, j) = k[(t0 + i) * stride_qk + j];
        Q(i, j) = q[(t0 + i) * stride_qk + j];
      }
      for (Index j = 0; j < dvh; ++j) V(i, j) = v[(t0 + i) * stride_v + j];
      av[i] = a[(t0 + i) * stride_s];
      const S gt = g[(t0 + i) * stride_s];
      lg[i] = std::log(std::max(gt, S(1e-30))) + (i ? lg[i - 1] : S(0));
    }
    Mat<S> KK = K * K.transpose();
    // UT transform: c_i = a_i (k_i - sum_{l<i} (k_l.k_i) c_l)   (no decay)
    //               u_i = a_i (v_i - sum_{j<i} (gam_i/gam_j)(k_j.k_i) u_j)
    Mat<S> Crows(C, dk), U(C, dvh);
    for (Index i = 0; i < C; ++i) {
      Crows.row(i) = K.row(i);
      U.row(i) = V.row(i);
      for (Index j = 0; j < i; ++j) {
        Crows.row(i) -= KK(j, i) * Crows.row(j);
        U.row(i) -= std::exp(lg[i] - lg[j]) * KK(j, i) * U.row(j);
      }
      Crows.row(i) *= av[i];
      U.row(i) *= av[i];
    }
    Mat<S> SQ = Q * state.transpose();       // C x dvh
    Mat<S> SC = Crows * state.transpose();   // C x dvh
    Mat<S> attn = Q * K.transpose();         // (i,j) = q_i . k_j
    Mat<S> attn_d = attn;
    for (Index i = 0; i < C; ++i)
      for (Index j = 0; j < C; ++j) {
        if (j > i) {
          attn(i, j) = S(0);
          attn_d(i, j) = S(0);
        } else {
          attn_d(i, j) *= std::exp(lg[i] - lg[j]);
        }
      }
    Mat<S> O = SQ - attn * SC;
    for (Index i = 0; i < C; ++i) O.row(i) *= std::exp(lg[i]);
    O.noalias() += attn_d * U;
    for (Index i = 0; i < C; ++i)
      for (Index j = 0; j < dvh; ++j) out[(t0 + i) * stride_v + j] = O(i, j);
    // chunk-end state
    Mat<S> Ut = U;
    for (Index j = 0; j < C; ++j) Ut.row(j) *= std::exp(lg[C - 1] - lg[j]);
    Mat<S> next = std::exp(lg[C - 1]) * (state - SC.transpose() * K);
    next.noalias() += Ut.transpose() * K;
    state = next;
  }
}

}  // namespace detail

/// Graph op. q,k: [B,L,H*dk] (k rows must already be unit-normalised per
/// head); v: [B,L,H*dvh]; a,g: [B,L,H]. Returns o: [B,L,H*dvh].
template <typename S>
GdnScanResult<S> gdn_scan(Graph<S>& g, int q, int k, int v, int a, int gate,
                          Index H, Index chunk = 64, bool chunkwise = true) {
  using detail::Mat;
  const Tensor<S>& qv = g.val(q);
  const Tensor<S>& vv = g.val(v);
  if (qv.rank() != 3 || vv.rank() != 3) throw std::invalid_argument("gdn_scan: rank");
  const Index B = qv.dim(0), L = qv.dim(1);
  const Index dk = qv.dim(2) / H, dvh = vv.dim(2) / H;
  if (qv.dim(2) != H * dk || vv.dim(2) != H * dvh || g.val(a).dim(2) != H)
    throw std::invalid_argument("gdn_scan: head dims mismatch");

  Tensor<S> out(vv.shape());
  auto terminal = std::make_shared<Tensor<S>>(Shape{B, H, dvh, dk});
  auto ckpts = std::make_shared<std::vector<std::vector<Mat<S>>>>(B * H);

  const Index sqk = H * dk, sv = H * dvh, ss = H;
  for (Index b = 0; b < B; ++b)
    for (Index h = 0; h < H; ++h) {
      Mat<S> state = Mat<S>::Zero(dvh, dk);
      const S* qp = g.val(q).data() + b * L * sqk + h * dk;
      const S* kp = g.val(k).data() + b * L * sqk + h * dk;
      const S* vp = g.val(v).data() + b * L * sv + h * dvh;
      const S* ap = g.val(a).data() + b * L * ss + h;
      const S* gp = g.val(gate).data() + b * L * ss + h;
      S* op = out.data() + b * L * sv + h * dvh;
      if (chunkwise)
        detail::gdn_chunkwise_head(qp, kp, vp, ap, gp, L, dk, dvh, chunk, sqk, sv,
                                   ss, state, op, &(*ckpts)[b * H + h]);
      else {
        // still record chunk starts so the backward path is shared
        auto& cps = (*ckpts)[b * H + h];
        for (Index t0 = 0; t0 < L; t0 += chunk) {
          cps.push_back(state);
          const Index C = std::min(chunk, L - t0);
          detail::gdn_sequential_head(qp + t0 * sqk, kp + t0 * sqk, vp + t0 * sv,
                                      ap + t0 * ss, gp + t0 * ss, C, dk, dvh, sqk,
                                      sv, ss, state, op + t0 * sv);
        }
      }
      for (Index i = 0; i < dvh; ++i)
        for (Index j = 0; j < dk; ++j)
          (*terminal)[((b * H + h) * dvh + i) * dk + j] = state(i, j);
    }

  int out_id = g.make(
      std::move(out), {q, k, v, a, gate},
      [q, k, v, a, gate, H, chunk, B, L, dk, dvh, ckpts](Graph<S>& gg, int self) {
        const Index sqk = H * dk, sv = H * dvh, ss = H;
        Eigen::Matrix<S, Eigen::Dynamic, 1> kv(dk), qvv(dk), vvv(dvh), dsk(dvh),
            sk(dvh);
        for (Index b = 0; b < B; ++b)
          for (Index h = 0; h < H; ++h) {
            const S* qp = gg.val(q).data() + b * L * sqk + h * dk;
            const S* kp = gg.val(k).data() + b * L * sqk + h * dk;
            const S* vp = gg.val(v).data() + b * L * sv + h * dvh;
            const S* ap = gg.val(a).data() + b * L * ss + h;
            const S* gp = gg.val(gate).data() + b * L * ss + h;
            const S* dop = gg.grad(self).data() + b * L * sv + h * dvh;
            S* dqp = gg.grad(q).data() + b * L * sqk + h * dk;
            S* dkp = gg.grad(k).data() + b * L * sqk + h * dk;
            S* dvp = gg.grad(v).data() + b * L * sv + h * dvh;
            S* dap = gg.grad(a).data() + b * L * ss + h;
            S* dgp = gg.grad(gate).data() + b * L * ss + h;

            const auto& cps = (*ckpts)[b * H + h];
            Mat<S> dS = Mat<S>::Zero(dvh, dk);
            const Index nchunks = static_cast<Index>(cps.size());
            std::vector<S> scratch_out(static_cast<size_t>(chunk) * sv);
            for (Index ci = nchunks - 1; ci >= 0; --ci) {
              const Index t0 = ci * chunk;
              const Index C = std::min(chunk, L - t0);
              // replay states within the chunk
              Mat<S> states_log(C, dvh * dk);
              Mat<S> state = cps[ci];
              detail::gdn_sequential_head(qp + t0 * sqk, kp + t0 * sqk,
                                          vp + t0 * sv, ap + t0 * ss, gp + t0 * ss,
                                          C, dk, dvh, sqk, sv, ss, state,
                                          scratch_out.data(), &states_log);
              for (Index i = C - 1; i >= 0; --i) {
                const Index t = t0 + i;
                Eigen::Map<const Mat<S>> St(states_log.row(i).data(), dvh, dk);
                Mat<S> Sprev =
                    (i == 0) ? cps[ci]
                             : Eigen::Map<const Mat<S>>(states_log.row(i - 1).data(),
                                                        dvh, dk)
                                   .eval();
                for (Index j = 0; j < dk; ++j) {
                  kv[j] = kp[t * sqk + j];
                  qvv[j] = qp[t * sqk + j];
                }
                for (Index j = 0; j < dvh; ++j) vvv[j] = vp[t * sv + j];
                const S at = ap[t * ss];
                const S gt = gp[t * ss];
                Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> dov(
                    dop + t * sv, dvh);
                // o_t = S_t q_t
                for (Index j = 0; j < dk; ++j)
                  dqp[t * sqk + j] += St.col(j).dot(dov);
                dS.noalias() += dov * qvv.transpose();
                // recurrence pieces
                sk.noalias() = Sprev * kv;
                dsk.noalias() = dS * kv;
                // M_t = S_{t-1}(I - a k k^T);  dg = <dS, M_t>
                Mat<S> M = Sprev - at * sk * kv.transpose();
                dgp[t * ss] += (dS.array() * M.array()).sum();
                dap[t * ss] += dsk.dot(vvv) - gt * dsk.dot(sk);
                for (Index j = 0; j < dvh; ++j) dvp[t * sv + j] += at * dsk[j];
                // dk: -g a (P + P^T) k + a dS^T v, with P = S_{t-1}^T dS
                Eigen::Matrix<S, Eigen::Dynamic, 1> pk =
                    Sprev.transpose() * dsk + dS.transpose() * sk;
                Eigen::Matrix<S, Eigen::Dynamic, 1> dkvec =
                    -gt * at * pk + at * dS.transpose() * vvv;
                for (Index j = 0; j < dk; ++j) dkp[t * sqk + j] += dkvec[j];
                // dS_{t-1} = g (dS - a (dS k) k^T)
                dS = gt * (dS - at * dsk * kv.transpose());
              }
            }
          }
      });

  GdnScanResult<S> res;
  res.out = out_id;
  res.terminal_state = terminal;
  return res;
}

}  // namespace lwm
