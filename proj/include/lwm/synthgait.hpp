#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "lwm/dataset.hpp"
#include "lwm/signal.hpp"

namespace lwm {

// Generation frame: x anterior, y medial, z vertical (gravity +z at rest).
// The harmonization rotation below maps it onto the canonical channel order.
inline Eigen::Matrix3d synth_frame_rotation() {
  Eigen::Matrix3d r;
  r << 0, 0, 1,   // vertical  <- z
       1, 0, 0,   // anterior  <- x
       0, 1, 0;   // medial    <- y
  return r;
}

struct GaitParams {
  double stride_hz = 1.8;          // 0.5 - 2.5
  double vertical_amp_g = 0.35;
  double ap_amp_g = 0.25;
  double ml_amp_g = 0.15;
  double asymmetry = 0.1;          // [0,1] left/right amplitude imbalance
  double cadence_jitter_std = 0.02;
  double tremor_hz = 0.0;          // 0 disables the 3-8 Hz component
  double tremor_amp_g = 0.0;
  double trunk_tilt_deg = 5.0;
  double sensor_noise_std_g = 0.02;
};

/// Gravity-consistent periodic gait at 100 Hz: stride fundamental plus two
/// harmonics per axis, asymmetry as a half-frequency amplitude modulation,
/// phase-locked pitch/roll/yaw rates, optional tremor band, white noise.
inline RawRecording generate_recording(const GaitParams& p, double duration_s,
                                       RngStream rng) {
  if (duration_s < 10.0)
    throw std::invalid_argument("generate_recording: duration must be >= 10 s");
  const Index n = static_cast<Index>(std::llround(duration_s * kCanonicalHz));
  RawRecording rec;
  rec.samples = Tensord({n, kChannels});
  rec.source_hz = kCanonicalHz;

  const double deg = 3.14159265358979323846 / 180.0;
  const double tilt = p.trunk_tilt_deg * deg;
  const double gx = std::sin(tilt), gz = std::cos(tilt);  // tilted gravity
  const double tremor_phase = rng.uniform(0.0, 6.283185307179586);
  const double dt = 1.0 / kCanonicalHz;

  double phase = rng.uniform(0.0, 6.283185307179586);
  double jitter = 0.0;
  for (Index t = 0; t < n; ++t) {
    // slowly-varying cadence jitter (mean-reverting random walk)
    jitter += 0.05 * (-jitter + rng.normal(0.0, p.cadence_jitter_std));
    const double f = p.stride_hz * (1.0 + jitter);
    phase += 6.283185307179586 * f * dt;
    const double lr = 1.0 + 0.5 * p.asymmetry * std::cos(0.5 * phase);

    double ax = gx + lr * p.ap_amp_g *
                         (std::sin(phase + 0.6) + 0.3 * std::sin(2 * phase) +
                          0.1 * std::sin(3 * phase));
    double ay = lr * p.ml_amp_g *
                (std::sin(phase + 2.1) + 0.25 * std::sin(2 * phase + 0.4));
    double az = gz + lr * p.vertical_amp_g *
                         (std::sin(phase) + 0.35 * std::sin(2 * phase + 0.8) +
                          0.15 * std::sin(3 * phase));
    if (p.tremor_amp_g > 0 && p.tremor_hz > 0) {
      const double tr =
          p.tremor_amp_g * std::sin(6.283185307179586 * p.tremor_hz * t * dt + tremor_phase);
      ax += tr;
      az += 0.7 * tr;
    }
    // angular rates (deg/s) phase-locked to the stride
    double wy = 60.0 * p.ap_amp_g * std::cos(phase);             // pitch about medial
    double wx = 45.0 * p.ml_amp_g * std::cos(0.5 * phase + 1.0); // roll about anterior
    double wz = 25.0 * p.ml_amp_g * std::sin(phase + 0.3);       // yaw about vertical

    const double ns = p.sensor_noise_std_g;
    rec.samples[t * 6 + 0] = ax + rng.normal(0.0, ns);
    rec.samples[t * 6 + 1] = ay + rng.normal(0.0, ns);
    rec.samples[t * 6 + 2] = az + rng.normal(0.0, ns);
    rec.samples[t * 6 + 3] = wx + rng.normal(0.0, 50.0 * ns);
    rec.samples[t * 6 + 4] = wy + rng.normal(0.0, 50.0 * ns);
    rec.samples[t * 6 + 5] = wz + rng.normal(0.0, 50.0 * ns);
  }
  return rec;
}

/// Template fall: 0.5 s instability swell, a directional impulse peaking
/// above 2.5 g, gravity re-orientation consistent with the direction, and
/// 1.5 s of post-impact rest. Appends the labelled interval.
inline void inject_fall(RawRecording& rec, double t, FallDirection dir, RngStream rng) {
  const double hz = rec.source_hz;
  const Index n = rec.samples.dim(0);
  const double dur = 3.0;
  if ((t + dur) * hz > static_cast<double>(n))
    throw std::invalid_argument("inject_fall: fall must end within the recording");
  for (const auto& fi : rec.fall_intervals)
    if (fi.start < t + dur && fi.end > t)
      throw std::invalid_argument("inject_fall: overlapping fall intervals");

  // direction axis in the generation frame (x anterior, y medial, z vertical)
  double dx = 0, dy = 0;
  switch (dir) {
    case FallDirection::forward: dx = 1; break;
    case FallDirection::backward: dx = -1; break;
    case FallDirection::lateral: dy = rng.uniform() < 0.5 ? 1.0 : -1.0; break;
    case FallDirection::near_fall: dx = rng.uniform() < 0.5 ? 1.0 : -1.0; break;
  }
  const bool completes = dir != FallDirection::near_fall;
  const Index i0 = static_cast<Index>(std::llround(t * hz));
  const double swell_end = 0.5, impact_end = 0.8, settle_end = 1.5;
  for (Index i = i0; i < i0 + static_cast<Index>(dur * hz) && i < n; ++i) {
    const double u = (static_cast<double>(i) - static_cast<double>(i0)) / hz;
    double ax, ay, az, wx, wy, wz;
    if (u < swell_end) {
      // instability: growing oscillation on top of near-static gravity
      const double s = 0.4 * (u / swell_end) * std::sin(6.283185307179586 * 4.0 * u);
      ax = s * dx + 0.2 * s * dy;
      ay = s * dy;
      az = 1.0 + 0.5 * s;
      wx = 40.0 * s * dy;
      wy = 40.0 * s * dx;
      wz = 10.0 * s;
    } else if (u < impact_end) {
      // impact: half-sine impulse along the fall direction plus vertical jolt
      const double v = (u - swell_end) / (impact_end - swell_end);
      const double imp = 3.5 * std::sin(3.14159265358979323846 * v);
      ax = imp * dx;
      ay = imp * dy;
      az = 1.0 - (completes ? 1.8 : 0.6) * std::sin(3.14159265358979323846 * v);
      wx = 250.0 * std::sin(3.14159265358979323846 * v) * dy;
      wy = 250.0 * std::sin(3.14159265358979323846 * v) * dx;
      wz = 30.0 * std::sin(3.14159265358979323846 * v);
    } else if (u < settle_end && completes) {
      // gravity rotates onto the fall axis
      const double v = (u - impact_end) / (settle_end - impact_end);
      const double ang = v * 3.14159265358979323846 / 2.0;
      ax = std::sin(ang) * dx;
      ay = std::sin(ang) * dy;
      az = std::cos(ang);
      wx = 90.0 * dy * (1.0 - v);
      wy = 90.0 * dx * (1.0 - v);
      wz = 0;
    } else if (completes) {
      // lying still
      ax = dx;
      ay = dy;
      az = 0.0;
      wx = wy = wz = 0;
    } else {
      // recovered near-fall: back to standing
      ax = ay = 0;
      az = 1.0;
      wx = wy = wz = 0;
    }
    const double ns = 0.02;
    rec.samples[i * 6 + 0] = ax + rng.normal(0.0, ns);
    rec.samples[i * 6 + 1] = ay + rng.normal(0.0, ns);
    rec.samples[i * 6 + 2] = az + rng.normal(0.0, ns);
    rec.samples[i * 6 + 3] = wx + rng.normal(0.0, 1.0);
    rec.samples[i * 6 + 4] = wy + rng.normal(0.0, 1.0);
    rec.samples[i * 6 + 5] = wz + rng.normal(0.0, 1.0);
  }
  rec.fall_intervals.push_back({t, t + dur, dir});
}

// ---- cohort specifications -------------------------------------------------

struct ParamDist {
  double mean = 0, std = 0;
  double sample(RngStream& rng, double lo, double hi) const {
    return std::clamp(rng.normal(mean, std), lo, hi);
  }
};

struct SynthCohortSpec {
  std::string name;
  ParamDist stride_hz{1.8, 0.08};
  ParamDist vertical_amp_g{0.35, 0.03};
  ParamDist ap_amp_g{0.25, 0.02};
  ParamDist ml_amp_g{0.15, 0.02};
  ParamDist asymmetry{0.1, 0.05};
  ParamDist cadence_jitter_std{0.02, 0.005};
  ParamDist tremor_hz{0.0, 0.0};
  ParamDist tremor_amp_g{0.0, 0.0};
  ParamDist trunk_tilt_deg{5.0, 2.0};
  ParamDist sensor_noise_std_g{0.02, 0.003};
  int subjects = 10;
  int recordings_per_subject = 2;
  double duration_s = 60.0;
  double fall_rate = 0.0;                       // expected falls per recording
  std::vector<double> direction_mix{0.3, 0.3, 0.2, 0.2};

  GaitParams sample(RngStream& rng) const {
    GaitParams p;
    p.stride_hz = stride_hz.sample(rng, 0.5, 2.5);
    p.vertical_amp_g = vertical_amp_g.sample(rng, 0.0, 2.0);
    p.ap_amp_g = ap_amp_g.sample(rng, 0.0, 2.0);
    p.ml_amp_g = ml_amp_g.sample(rng, 0.0, 2.0);
    p.asymmetry = asymmetry.sample(rng, 0.0, 1.0);
    p.cadence_jitter_std = cadence_jitter_std.sample(rng, 0.0, 0.5);
    p.tremor_hz = tremor_hz.sample(rng, 0.0, 8.0);
    p.tremor_amp_g = tremor_amp_g.sample(rng, 0.0, 1.0);
    p.trunk_tilt_deg = trunk_tilt_deg.sample(rng, 0.0, 45.0);
    p.sensor_noise_std_g = sensor_noise_std_g.sample(rng, 0.0, 0.5);
    return p;
  }
};

inline void to_json(nlohmann::json& j, const ParamDist& d) {
  j = {{"mean", d.mean}, {"std", d.std}};
}
inline void from_json(const nlohmann::json& j, ParamDist& d) {
  d.mean = j.at("mean");
  d.std = j.at("std");
}

inline void to_json(nlohmann::json& j, const SynthCohortSpec& s) {
  j = {{"name", s.name},
       {"stride_hz", s.stride_hz},
       {"vertical_amp_g", s.vertical_amp_g},
       {"ap_amp_g", s.ap_amp_g},
       {"ml_amp_g", s.ml_amp_g},
       {"asymmetry", s.asymmetry},
       {"cadence_jitter_std", s.cadence_jitter_std},
       {"tremor_hz", s.tremor_hz},
       {"tremor_amp_g", s.tremor_amp_g},
       {"trunk_tilt_deg", s.trunk_tilt_deg},
       {"sensor_noise_std_g", s.sensor_noise_std_g},
       {"subjects", s.subjects},
       {"recordings_per_subject", s.recordings_per_subject},
       {"duration_s", s.duration_s},
       {"fall_rate", s.fall_rate},
       {"direction_mix", s.direction_mix}};
}
inline void from_json(const nlohmann::json& j, SynthCohortSpec& s) {
  SynthCohortSpec def;
  s = def;
  s.name = j.at("name");
  auto get = [&](const char* k, ParamDist& d) {
    if (j.contains(k)) d = j.at(k).get<ParamDist>();
  };
  get("stride_hz", s.stride_hz);
  get("vertical_amp_g", s.vertical_amp_g);
  get("ap_amp_g", s.ap_amp_g);
  get("ml_amp_g", s.ml_amp_g);
  get("asymmetry", s.asymmetry);
  get("cadence_jitter_std", s.cadence_jitter_std);
  get("tremor_hz", s.tremor_hz);
  get("tremor_amp_g", s.tremor_amp_g);
  get("trunk_tilt_deg", s.trunk_tilt_deg);
  get("sensor_noise_std_g", s.sensor_noise_std_g);
  s.subjects = j.value("subjects", def.subjects);
  s.recordings_per_subject = j.value("recordings_per_subject", def.recordings_per_subject);
  s.duration_s = j.value("duration_s", def.duration_s);
  s.fall_rate = j.value("fall_rate", def.fall_rate);
  s.direction_mix = j.value("direction_mix", def.direction_mix);
}

/// Healthy-gait preset.
inline SynthCohortSpec control_cohort() {
  SynthCohortSpec s;
  s.name = "control";
  return s;
}

/// Impaired preset: slower stride, 20% lower amplitudes, 50% more cadence
/// jitter, and an added 5 Hz tremor component.
inline SynthCohortSpec impaired_cohort() {
  SynthCohortSpec s;
  s.name = "impaired";
  s.stride_hz = {0.9, 0.08};
  s.vertical_amp_g = {0.28, 0.03};
  s.ap_amp_g = {0.20, 0.02};
  s.ml_amp_g = {0.12, 0.02};
  s.asymmetry = {0.25, 0.08};
  s.cadence_jitter_std = {0.03, 0.007};
  s.tremor_hz = {5.0, 0.3};
  s.tremor_amp_g = {0.05, 0.01};
  s.trunk_tilt_deg = {12.0, 3.0};
  return s;
}

/// Generates every cohort, harmonizes through the signal pipeline, and packs
/// the result into a window container.
inline Dataset generate_corpus(const std::vector<SynthCohortSpec>& specs,
                               RngStream rng, const std::string& dataset_id = "synth") {
  DatasetBuilder builder(dataset_id);
  const Eigen::Matrix3d rot = synth_frame_rotation();
  Index recording_id = 0;
  std::uint64_t salt = 0;
  for (const auto& spec : specs) {
    for (int subj = 0; subj < spec.subjects; ++subj) {
      for (int r = 0; r < spec.recordings_per_subject; ++r) {
        RngStream rr = rng.split(salt++);
        GaitParams p = spec.sample(rr);
        RawRecording rec = generate_recording(p, spec.duration_s, rr.split(1));
        rec.dataset_id = dataset_id;
        rec.cohort_label = spec.name;
        rec.subject_id = spec.name + "_s" + std::to_string(subj);
        // expected fall_rate falls per recording, at least 1.5 s from the ends
        RngStream fr = rr.split(2);
        int nfalls = static_cast<int>(spec.fall_rate);
        if (fr.uniform() < spec.fall_rate - nfalls) ++nfalls;
        double t_min = 1.0;
        for (int f = 0; f < nfalls; ++f) {
          const double t_max = spec.duration_s - 4.0;
          if (t_min >= t_max) break;
          const double t = fr.uniform(t_min, t_max);
          double pick = fr.uniform(), cum = 0;
          FallDirection dir = FallDirection::forward;
          for (int d = 0; d < 4; ++d) {
            cum += spec.direction_mix[static_cast<size_t>(d)];
            if (pick <= cum) { dir = static_cast<FallDirection>(d); break; }
          }
          inject_fall(rec, t, dir, fr.split(static_cast<std::uint64_t>(f)));
          t_min = t + 3.5;
        }
        auto seg = harmonize_recording(rec, rot);
        builder.add_recording(seg.windows, recording_id++);
      }
    }
  }
  return builder.finish();
}

}  // namespace lwm
