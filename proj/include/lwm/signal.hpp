#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lwm/rng.hpp"
#include "lwm/tensor.hpp"

namespace lwm {

// Canonical channel order after harmonization:
//   0 acc vertical, 1 acc anterior, 2 acc medial (g)
//   3 gyro vertical, 4 gyro anterior, 5 gyro medial (deg/s)
constexpr Index kWindowLen = 512;
constexpr Index kChannels = 6;
constexpr double kCanonicalHz = 100.0;
constexpr double kAccFullScaleG = 16.0;
constexpr double kGyroFullScaleDps = 2000.0;

enum class FallDirection : int { forward = 0, backward = 1, lateral = 2, near_fall = 3 };

struct FallInterval {
  double start = 0, end = 0;  // seconds
  FallDirection direction = FallDirection::forward;
};

struct RawRecording {
  Tensord samples;  // [N,6], acc in g, gyro in deg/s, source frame
  double source_hz = 100.0;
  std::string placement = "lower_back";
  std::string subject_id, dataset_id, cohort_label;
  std::vector<FallInterval> fall_intervals;
};

struct CanonicalWindow {
  Tensorf values;  // [512,6] in [-1,1]
  bool fall_mask = false;
  int fall_direction = -1;  // FallDirection or -1
  std::string cohort_label, subject_id, dataset_id;
  double start_time = 0;  // seconds
};

struct AugmentationConfig {
  double tilt_sigma_deg = 8.0;
  double drift_step_sigma = 0.001;   // scaled gyro units per step
  double censor_percentile = 99.5;
  bool enable_parity = true, enable_tilt = true, enable_drift = true,
       enable_censor = true;
  double apply_prob = 0.5;
};

// ---- resampling ------------------------------------------------------------

namespace detail {

inline void reduce_rate_ratio(double src_hz, double dst_hz, long& up, long& down) {
  // express dst/src as a reduced integer ratio (rates given to millihertz)
  long p = std::lround(dst_hz * 1000.0);
  long q = std::lround(src_hz * 1000.0);
  if (p <= 0 || q <= 0) throw std::invalid_argument("resample: rates must be positive");
  const long g = std::gcd(p, q);
  up = p / g;
  down = q / g;
  if (up > 10000 || down > 10000)
    throw std::invalid_argument("resample: rate ratio is ill-posed (reduced terms > 10000)");
}

inline double reflect_index_value(const Tensord& x, Index n, Index c, Index N) {
  // mirror without repeating the edge sample
  while (n < 0 || n >= N) {
    if (n < 0) n = -n;
    if (n >= N) n = 2 * N - 2 - n;
  }
  return x[n * x.last_dim() + c];
}

}  // namespace detail

/// Rational-ratio windowed-sinc resampler with anti-aliasing low-pass when
/// downsampling. Edges are reflect-padded; taps are renormalised per output
/// sample so constants survive exactly.
inline Tensord resample_polyphase(const Tensord& signal, double src_hz,
                                  double dst_hz = kCanonicalHz) {
  if (signal.rank() != 2) throw std::invalid_argument("resample: expected [N,C]");
  const Index N = signal.dim(0), C = signal.dim(1);
  if (N < 8) throw std::invalid_argument("resample: need at least 8 samples");
  long up, down;
  detail::reduce_rate_ratio(src_hz, dst_hz, up, down);
  const Index M = static_cast<Index>(std::llround(static_cast<double>(N) * dst_hz / src_hz));
  Tensord out({M, C});
  if (up == down) {
    for (Index i = 0; i < std::min(N, M) * C; ++i) out[i] = signal[i];
    return out;
  }
  // cutoff as a fraction of the input Nyquist rate
  const double cutoff = std::min(1.0, static_cast<double>(up) / down);
  const int zero_crossings = 10;
  const double half = zero_crossings / cutoff;
  const Index ihalf = static_cast<Index>(std::ceil(half));
  const double pi = 3.14159265358979323846;
  for (Index m = 0; m < M; ++m) {
    const double u = static_cast<double>(m) * down / up;  // position in input units
    const Index n0 = static_cast<Index>(std::floor(u)) - ihalf;
    const Index n1 = static_cast<Index>(std::floor(u)) + ihalf + 1;
    double wsum = 0;
    std::vector<double> acc(C, 0.0);
    for (Index n = n0; n <= n1; ++n) {
      const double t = static_cast<double>(n) - u;
      if (std::abs(t) > half) continue;
      const double a = pi * cutoff * t;
      const double sinc = std::abs(a) < 1e-12 ? 1.0 : std::sin(a) / a;
      const double win = 0.5 * (1.0 + std::cos(pi * t / half));  // Hann
      const double w = sinc * win;
      wsum += w;
      for (Index c = 0; c < C; ++c)
        acc[c] += w * detail::reflect_index_value(signal, n, c, N);
    }
    for (Index c = 0; c < C; ++c) out[m * C + c] = acc[c] / wsum;
  }
  return out;
}

// ---- frame alignment and scaling -------------------------------------------

inline void check_rotation(const Eigen::Matrix3d& r, double tol = 1e-6) {
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol ||
      std::abs(r.determinant() - 1.0) > tol)
    throw std::invalid_argument("rotate_to_frame: matrix is not a rotation");
}

/// Applies R to the acc triplet and the gyro triplet of every sample.
inline Tensord rotate_to_frame(const Tensord& signal, const Eigen::Matrix3d& r) {
  check_rotation(r);
  const Index N = signal.dim(0);
  Tensord out(signal.shape());
  for (Index n = 0; n < N; ++n)
    for (int tri = 0; tri < 2; ++tri) {
      Eigen::Vector3d v(signal[n * 6 + tri * 3], signal[n * 6 + tri * 3 + 1],
                        signal[n * 6 + tri * 3 + 2]);
      Eigen::Vector3d w = r * v;
      for (int i = 0; i < 3; ++i) out[n * 6 + tri * 3 + i] = w[i];
    }
  return out;
}

/// Fixed-range scaling: acc / 16 g, gyro / 2000 deg/s, clamp to [-1,1].
inline Tensord scale_fixed_range(const Tensord& signal) {
  Tensord out(signal.shape());
  const Index N = signal.dim(0);
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < 6; ++c) {
      const double s = c < 3 ? kAccFullScaleG : kGyroFullScaleDps;
      out[n * 6 + c] = std::clamp(signal[n * 6 + c] / s, -1.0, 1.0);
    }
  return out;
}

// ---- windowing -------------------------------------------------------------

struct SegmentResult {
  std::vector<CanonicalWindow> windows;
  bool too_short = false;
};

/// Fixed-stride 512-sample windowing of a scaled canonical-rate signal.
/// stride = floor(512 * stride_fraction); a window is fall-positive iff its
/// time span intersects any fall interval.
inline SegmentResult segment_windows(const Tensord& scaled, double stride_fraction,
                                     const RawRecording& meta) {
  SegmentResult res;
  const Index M = scaled.dim(0);
  if (M < kWindowLen) {
    res.too_short = true;
    return res;
  }
  const Index stride = static_cast<Index>(kWindowLen * stride_fraction);
  if (stride < 1) throw std::invalid_argument("segment_windows: stride must be >= 1");
  for (Index start = 0; start + kWindowLen <= M; start += stride) {
    CanonicalWindow w;
    w.values = Tensorf({kWindowLen, kChannels});
    for (Index i = 0; i < kWindowLen * kChannels; ++i)
      w.values[i] = static_cast<float>(scaled[start * kChannels + i]);
    w.start_time = static_cast<double>(start) / kCanonicalHz;
    const double t0 = w.start_time, t1 = t0 + kWindowLen / kCanonicalHz;
    for (const auto& fi : meta.fall_intervals)
      if (fi.start < t1 && fi.end > t0) {
        w.fall_mask = true;
        if (w.fall_direction < 0) w.fall_direction = static_cast<int>(fi.direction);
      }
    w.cohort_label = meta.cohort_label;
    w.subject_id = meta.subject_id;
    w.dataset_id = meta.dataset_id;
    res.windows.push_back(std::move(w));
  }
  return res;
}

// ---- augmentations ---------------------------------------------------------

/// Sagittal mirror: medial acceleration flips, and the angular rates about
/// the in-plane axes (vertical, anterior) reverse sense.
inline void augment_parity(Tensorf& w) {
  const Index L = w.dim(0);
  for (Index t = 0; t < L; ++t) {
    w[t * 6 + 2] = -w[t * 6 + 2];
    w[t * 6 + 3] = -w[t * 6 + 3];
    w[t * 6 + 4] = -w[t * 6 + 4];
  }
}

inline Eigen::Matrix3d random_tilt_rotation(double sigma_deg, RngStream& rng) {
  const double angle = std::abs(rng.normal(0.0, sigma_deg * 3.14159265358979323846 / 180.0));
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  const double n = axis.norm();
  if (n < 1e-12) axis = Eigen::Vector3d::UnitZ();
  else axis /= n;
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

/// Small random sensor-placement rotation, same matrix for acc and gyro.
inline void augment_tilt(Tensorf& w, double sigma_deg, RngStream& rng) {
  const Eigen::Matrix3d r = random_tilt_rotation(sigma_deg, rng);
  const Index L = w.dim(0);
  for (Index t = 0; t < L; ++t)
    for (int tri = 0; tri < 2; ++tri) {
      Eigen::Vector3d v(w[t * 6 + tri * 3], w[t * 6 + tri * 3 + 1],
                        w[t * 6 + tri * 3 + 2]);
      Eigen::Vector3d u = r * v;
      for (int i = 0; i < 3; ++i)
        w[t * 6 + tri * 3 + i] =
            static_cast<float>(std::clamp(u[i], -1.0, 1.0));
    }
}

/// Brownian gyro bias: cumulative sum of Gaussian steps per gyro channel.
inline void augment_gyro_drift(Tensorf& w, double step_sigma, RngStream& rng) {
  const Index L = w.dim(0);
  double bias[3] = {0, 0, 0};
  for (Index t = 0; t < L; ++t)
    for (int c = 0; c < 3; ++c) {
      bias[c] += rng.normal(0.0, step_sigma);
      w[t * 6 + 3 + c] = static_cast<float>(
          std::clamp(static_cast<double>(w[t * 6 + 3 + c]) + bias[c], -1.0, 1.0));
    }
}

/// Per-channel magnitude clamp at the p-th percentile of |values|.
inline void augment_percentile_censor(Tensorf& w, double p) {
  const Index L = w.dim(0);
  std::vector<double> mags(static_cast<size_t>(L));
  for (Index c = 0; c < 6; ++c) {
    for (Index t = 0; t < L; ++t) mags[t] = std::abs(static_cast<double>(w[t * 6 + c]));
    std::sort(mags.begin(), mags.end());
    const double rank = p / 100.0 * static_cast<double>(L - 1);
    const Index lo = static_cast<Index>(std::floor(rank));
    const Index hi = std::min(lo + 1, L - 1);
    const double frac = rank - static_cast<double>(lo);
    const double thr = mags[lo] * (1.0 - frac) + mags[hi] * frac;
    for (Index t = 0; t < L; ++t) {
      const double v = w[t * 6 + c];
      if (std::abs(v) > thr) w[t * 6 + c] = static_cast<float>(v < 0 ? -thr : thr);
    }
  }
}

/// Stochastic augmentation pipeline: parity -> tilt -> drift -> censor, each
/// applied independently with apply_prob.
inline void apply_augmentations(Tensorf& w, const AugmentationConfig& cfg,
                                RngStream& rng) {
  if (cfg.enable_parity && rng.uniform() < cfg.apply_prob) augment_parity(w);
  if (cfg.enable_tilt && rng.uniform() < cfg.apply_prob)
    augment_tilt(w, cfg.tilt_sigma_deg, rng);
  if (cfg.enable_drift && rng.uniform() < cfg.apply_prob)
    augment_gyro_drift(w, cfg.drift_step_sigma, rng);
  if (cfg.enable_censor && rng.uniform() < cfg.apply_prob)
    augment_percentile_censor(w, cfg.censor_percentile);
}

// ---- full harmonization ----------------------------------------------------

/// resample -> rotate -> scale -> segment. Uses the dense-fall stride when
/// the recording contains fall intervals.
inline SegmentResult harmonize_recording(const RawRecording& rec,
                                         const Eigen::Matrix3d& rotation,
                                         double stride_fraction = 0.5,
                                         double fall_stride_fraction = 0.1) {
  Tensord x = resample_polyphase(rec.samples, rec.source_hz, kCanonicalHz);
  x = rotate_to_frame(x, rotation);
  x = scale_fixed_range(x);
  const double frac = rec.fall_intervals.empty() ? stride_fraction : fall_stride_fraction;
  return segment_windows(x, frac, rec);
}

}  // namespace lwm
