#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "lwm/dataset.hpp"
#include "lwm/signal.hpp"

using namespace lwm;

namespace {

Tensord make_sine(Index n, double hz, double rate, double amp = 1.0,
                  Index channels = kChannels) {
  Tensord x({n, channels});
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < channels; ++c)
      x[i * channels + c] = amp * std::sin(2 * 3.14159265358979323846 * hz * i / rate +
                                           0.3 * static_cast<double>(c));
  return x;
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("lwm_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("resample: constants survive exactly") {
  Tensord x({64, kChannels});
  for (Index i = 0; i < 64; ++i)
    for (Index c = 0; c < kChannels; ++c) x[i * kChannels + c] = 0.25 * (c + 1);
  Tensord y = resample_polyphase(x, 200.0, 100.0);
  CHECK(y.dim(0) == 32);
  for (Index i = 0; i < y.dim(0); ++i)
    for (Index c = 0; c < kChannels; ++c)
      CHECK(y[i * kChannels + c] == doctest::Approx(0.25 * (c + 1)).epsilon(1e-12));
}

TEST_CASE("resample: output length arithmetic") {
  Tensord x = make_sine(1000, 2.0, 50.0);
  CHECK(resample_polyphase(x, 50.0, 100.0).dim(0) == 2000);
  CHECK(resample_polyphase(x, 50.0, 50.0).dim(0) == 1000);
  CHECK(resample_polyphase(make_sine(333, 1.0, 128.0), 128.0, 100.0).dim(0) == 260);
}

TEST_CASE("resample: tone amplitude and RMS") {
  const double rate = 200.0, hz = 3.0;
  const Index n = 2000;
  Tensord x = make_sine(n, hz, rate, 0.8);
  Tensord y = resample_polyphase(x, rate, 100.0);
  REQUIRE(y.dim(0) == 1000);
  // compare against the analytic tone away from the edges
  const Index guard = 40;
  double err2 = 0, ref2 = 0, peak = 0;
  for (Index i = guard; i < y.dim(0) - guard; ++i) {
    const double truth =
        0.8 * std::sin(2 * 3.14159265358979323846 * hz * i / 100.0);
    const double v = y[i * kChannels];
    err2 += (v - truth) * (v - truth);
    ref2 += truth * truth;
    peak = std::max(peak, std::abs(v));
  }
  CHECK(std::sqrt(err2 / ref2) < 0.02);
  CHECK(peak == doctest::Approx(0.8).epsilon(0.01));
}

TEST_CASE("resample: band-limited round trip") {
  const Index n = 1500;
  Tensord x({n, kChannels});
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < kChannels; ++c) {
      const double t = i / 100.0;
      x[i * kChannels + c] = 0.5 * std::sin(2 * 3.14159265358979323846 * 2.0 * t) +
                             0.3 * std::sin(2 * 3.14159265358979323846 * 7.0 * t + c);
    }
  Tensord up = resample_polyphase(x, 100.0, 200.0);
  Tensord back = resample_polyphase(up, 200.0, 100.0);
  REQUIRE(back.dim(0) == n);
  const Index guard = 60;
  double err2 = 0, ref2 = 0;
  for (Index i = guard; i < n - guard; ++i)
    for (Index c = 0; c < kChannels; ++c) {
      const double d = back[i * kChannels + c] - x[i * kChannels + c];
      err2 += d * d;
      ref2 += x[i * kChannels + c] * x[i * kChannels + c];
    }
  CHECK(std::sqrt(err2 / ref2) < 0.05);
}

TEST_CASE("resample: ill-posed ratios are rejected") {
  Tensord x = make_sine(64, 1.0, 100.0);
  CHECK_THROWS(resample_polyphase(x, 100.001, 100.0));
  CHECK_THROWS(resample_polyphase(x, 0.0, 100.0));
  CHECK_THROWS(resample_polyphase(make_sine(4, 1.0, 100.0), 100.0, 50.0));
}

TEST_CASE("rotation: identity, quarter turn, norms, rejection") {
  Tensord x = make_sine(32, 2.0, 100.0);
  Tensord same = rotate_to_frame(x, Eigen::Matrix3d::Identity());
  for (Index i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);

  // quarter turn about the third axis maps e1 -> e2
  Eigen::Matrix3d r = Eigen::AngleAxisd(3.14159265358979323846 / 2,
                                        Eigen::Vector3d::UnitZ()).toRotationMatrix();
  Tensord v({1, 6});
  v[0] = 1.0;  // acc x
  v[3] = 2.0;  // gyro x
  Tensord w = rotate_to_frame(v, r);
  CHECK(w[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(1.0));
  CHECK(w[3] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(w[4] == doctest::Approx(2.0));

  Tensord y = rotate_to_frame(x, r);
  for (Index i = 0; i < x.dim(0); ++i)
    for (int tri = 0; tri < 2; ++tri) {
      double n0 = 0, n1 = 0;
      for (int c = 0; c < 3; ++c) {
        n0 += x[i * 6 + tri * 3 + c] * x[i * 6 + tri * 3 + c];
        n1 += y[i * 6 + tri * 3 + c] * y[i * 6 + tri * 3 + c];
      }
      CHECK(n1 == doctest::Approx(n0).epsilon(1e-10));
    }

  CHECK_THROWS(rotate_to_frame(x, 2.0 * Eigen::Matrix3d::Identity()));
  Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
  reflect(2, 2) = -1.0;  // det = -1
  CHECK_THROWS(rotate_to_frame(x, reflect));
}

TEST_CASE("fixed-range scaling") {
  Tensord x({2, 6});
  double vals[12] = {16.0, -8.0, 32.0, 2000.0, -1000.0, 4000.0,
                     0.0, 1.6, -16.0, 0.0, 200.0, -2000.0};
  for (Index i = 0; i < 12; ++i) x[i] = vals[i];
  Tensord y = scale_fixed_range(x);
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(-0.5));
  CHECK(y[2] == doctest::Approx(1.0));  // clamped
  CHECK(y[3] == doctest::Approx(1.0));
  CHECK(y[4] == doctest::Approx(-0.5));
  CHECK(y[5] == doctest::Approx(1.0));  // clamped
  CHECK(y[6] == doctest::Approx(0.0));
  CHECK(y[7] == doctest::Approx(0.1));
  CHECK(y[8] == doctest::Approx(-1.0));
  CHECK(y[10] == doctest::Approx(0.1));
  CHECK(y[11] == doctest::Approx(-1.0));
}

TEST_CASE("window segmentation") {
  RawRecording meta;
  meta.cohort_label = "ctrl";
  meta.subject_id = "s1";
  meta.dataset_id = "d";

  auto flat = [](Index n) {
    Tensord x({n, kChannels});
    for (Index i = 0; i < x.numel(); ++i) x[i] = 0.01 * (i % 7);
    return x;
  };

  auto r1 = segment_windows(flat(1024), 0.5, meta);
  REQUIRE(r1.windows.size() == 3);  // starts 0, 256, 512
  CHECK(r1.windows[1].start_time == doctest::Approx(2.56));
  CHECK(!r1.too_short);

  auto r2 = segment_windows(flat(614), 0.1, meta);
  REQUIRE(r2.windows.size() == 3);  // stride 51: starts 0, 51, 102
  CHECK(r2.windows[2].start_time == doctest::Approx(1.02));

  auto r3 = segment_windows(flat(512), 0.5, meta);
  CHECK(r3.windows.size() == 1);

  auto r4 = segment_windows(flat(511), 0.5, meta);
  CHECK(r4.too_short);
  CHECK(r4.windows.empty());

  // fall flag iff the window span intersects an interval
  meta.fall_intervals = {{6.0, 6.4, FallDirection::lateral}};
  auto r5 = segment_windows(flat(1024), 0.5, meta);
  REQUIRE(r5.windows.size() == 3);
  CHECK(!r5.windows[0].fall_mask);          // [0, 5.12)
  CHECK(r5.windows[1].fall_mask);           // [2.56, 7.68)
  CHECK(r5.windows[2].fall_mask);           // [5.12, 10.24)
  CHECK(r5.windows[1].fall_direction == static_cast<int>(FallDirection::lateral));
  CHECK(r5.windows[0].fall_direction == -1);
}

TEST_CASE("parity augmentation") {
  Tensorf w({kWindowLen, kChannels});
  RngStream rng(7);
  rng.fill_normal(w, 0.0, 0.1);
  Tensorf orig = w;
  augment_parity(w);
  for (Index t = 0; t < kWindowLen; ++t) {
    CHECK(w[t * 6 + 0] == orig[t * 6 + 0]);
    CHECK(w[t * 6 + 1] == orig[t * 6 + 1]);
    CHECK(w[t * 6 + 2] == -orig[t * 6 + 2]);
    CHECK(w[t * 6 + 3] == -orig[t * 6 + 3]);
    CHECK(w[t * 6 + 4] == -orig[t * 6 + 4]);
    CHECK(w[t * 6 + 5] == orig[t * 6 + 5]);
  }
  augment_parity(w);  // involution
  for (Index i = 0; i < w.numel(); ++i) CHECK(w[i] == orig[i]);
}

TEST_CASE("tilt augmentation") {
  Tensorf w({kWindowLen, kChannels});
  RngStream rng(8);
  rng.fill_normal(w, 0.0, 0.1);
  Tensorf orig = w;

  // sigma = 0 is the identity rotation
  RngStream r0(1);
  Tensorf w0 = w;
  augment_tilt(w0, 0.0, r0);
  for (Index i = 0; i < w.numel(); ++i)
    CHECK(w0[i] == doctest::Approx(orig[i]).epsilon(1e-6));

  // deterministic under the same stream, norm-preserving per triplet
  RngStream ra(42), rb(42);
  Tensorf wa = w, wb = w;
  augment_tilt(wa, 8.0, ra);
  augment_tilt(wb, 8.0, rb);
  for (Index i = 0; i < w.numel(); ++i) CHECK(wa[i] == wb[i]);
  bool changed = false;
  for (Index i = 0; i < w.numel(); ++i) changed |= wa[i] != orig[i];
  CHECK(changed);
  for (Index t = 0; t < kWindowLen; ++t)
    for (int tri = 0; tri < 2; ++tri) {
      double n0 = 0, n1 = 0;
      for (int c = 0; c < 3; ++c) {
        n0 += static_cast<double>(orig[t * 6 + tri * 3 + c]) * orig[t * 6 + tri * 3 + c];
        n1 += static_cast<double>(wa[t * 6 + tri * 3 + c]) * wa[t * 6 + tri * 3 + c];
      }
      CHECK(n1 == doctest::Approx(n0).epsilon(1e-4));
    }
}

TEST_CASE("gyro drift augmentation") {
  // acc channels are untouched, gyro picks up a random walk whose variance
  // grows linearly in time
  const double sigma = 0.001;
  const int reps = 300;
  const Index t_probe = kWindowLen - 1;
  double mean_sq = 0;
  for (int rep = 0; rep < reps; ++rep) {
    Tensorf w = Tensorf::zeros({kWindowLen, kChannels});
    for (Index t = 0; t < kWindowLen; ++t)
      for (int c = 0; c < 3; ++c) w[t * 6 + c] = 0.3f;
    RngStream rng(1000 + rep);
    augment_gyro_drift(w, sigma, rng);
    for (Index t = 0; t < kWindowLen; ++t)
      for (int c = 0; c < 3; ++c) CHECK(w[t * 6 + c] == 0.3f);
    mean_sq += static_cast<double>(w[t_probe * 6 + 3]) * w[t_probe * 6 + 3];
  }
  mean_sq /= reps;
  const double expected = (t_probe + 1) * sigma * sigma;
  CHECK(mean_sq / expected > 0.8);
  CHECK(mean_sq / expected < 1.2);
}

TEST_CASE("percentile censor") {
  Tensorf w({kWindowLen, kChannels});
  RngStream rng(9);
  rng.fill_normal(w, 0.0, 0.05);
  Tensorf orig = w;

  // p = 100 is the identity
  Tensorf w100 = w;
  augment_percentile_censor(w100, 100.0);
  for (Index i = 0; i < w.numel(); ++i) CHECK(w100[i] == orig[i]);

  // an injected outlier is clamped toward the bulk
  Tensorf wo = w;
  wo[100 * 6 + 2] = 0.9f;
  augment_percentile_censor(wo, 99.5);
  CHECK(std::abs(wo[100 * 6 + 2]) < 0.5f);

  // magnitudes never grow
  Tensorf wc = w;
  augment_percentile_censor(wc, 99.5);
  for (Index i = 0; i < w.numel(); ++i)
    CHECK(std::abs(wc[i]) <= std::abs(orig[i]) + 1e-7f);
}

TEST_CASE("augmentation pipeline determinism") {
  Tensorf w({kWindowLen, kChannels});
  RngStream rng(11);
  rng.fill_normal(w, 0.0, 0.1);
  AugmentationConfig cfg;
  Tensorf a = w, b = w;
  RngStream ra(5), rb(5), rc(6);
  apply_augmentations(a, cfg, ra);
  apply_augmentations(b, cfg, rb);
  for (Index i = 0; i < w.numel(); ++i) CHECK(a[i] == b[i]);
  Tensorf c = w;
  apply_augmentations(c, cfg, rc);
  bool differs = false;
  for (Index i = 0; i < w.numel(); ++i) differs |= a[i] != c[i];
  CHECK(differs);
}

TEST_CASE("harmonize: stride selection and end-to-end invariants") {
  RawRecording rec;
  rec.source_hz = 200.0;
  rec.subject_id = "s9";
  rec.dataset_id = "dd";
  rec.cohort_label = "ctrl";
  const Index n = 4096;  // 20.48 s -> 2048 canonical samples
  rec.samples = Tensord({n, kChannels});
  RngStream rng(12);
  for (Index i = 0; i < n; ++i) {
    const double t = i / 200.0;
    rec.samples[i * 6 + 0] = 1.0 + 0.2 * std::sin(2 * 3.14159265358979323846 * 1.8 * t);
    rec.samples[i * 6 + 1] = 0.1 * rng.normal();
    rec.samples[i * 6 + 2] = 0.1 * rng.normal();
    for (int c = 3; c < 6; ++c) rec.samples[i * 6 + c] = 30.0 * rng.normal();
  }
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();

  auto clean = harmonize_recording(rec, rot);
  // 2048 canonical samples, stride 256 -> starts 0..1536
  CHECK(clean.windows.size() == 7);
  for (const auto& w : clean.windows) {
    CHECK(!w.fall_mask);
    CHECK(w.subject_id == "s9");
    for (Index i = 0; i < w.values.numel(); ++i) {
      CHECK(std::abs(w.values[i]) <= 1.0f);
      CHECK(std::isfinite(w.values[i]));
    }
  }

  rec.fall_intervals = {{10.0, 10.5, FallDirection::forward}};
  auto dense = harmonize_recording(rec, rot);
  // dense stride 51 applies when falls are present
  CHECK(dense.windows.size() == (2048 - 512) / 51 + 1);
  bool any_fall = false;
  for (const auto& w : dense.windows) any_fall |= w.fall_mask;
  CHECK(any_fall);
}

TEST_CASE("dataset container round trip is bit exact") {
  DatasetBuilder b("unit");
  RngStream rng(13);
  std::vector<CanonicalWindow> rec0(3), rec1(2);
  double start = 0;
  for (auto* group : {&rec0, &rec1}) {
    start = 0;
    for (auto& w : *group) {
      w.values = Tensorf({kWindowLen, kChannels});
      rng.fill_normal(w.values, 0.0, 0.3);
      w.cohort_label = group == &rec0 ? "ctrl" : "imp";
      w.subject_id = group == &rec0 ? "a" : "b";
      w.start_time = start;
      start += 5.12;
    }
  }
  rec0[1].fall_mask = true;
  rec0[1].fall_direction = static_cast<int>(FallDirection::backward);
  b.add_recording(rec0, 0);
  b.add_recording(rec1, 1);
  Dataset ds = b.finish();
  CHECK(ds.size() == 5);
  CHECK(ds.cohorts == std::vector<std::string>{"ctrl", "imp"});
  CHECK(ds.subjects == std::vector<std::string>{"a", "b"});

  fs::path dir = temp_dir("container");
  save_dataset(dir, ds);
  Dataset back = load_dataset(dir);
  CHECK(back.dataset_id == "unit");
  CHECK(back.size() == 5);
  CHECK(std::memcmp(back.windows.data(), ds.windows.data(),
                    sizeof(float) * static_cast<size_t>(ds.windows.numel())) == 0);
  CHECK(back.fall_mask == ds.fall_mask);
  CHECK(back.fall_direction == ds.fall_direction);
  CHECK(back.cohort_ids == ds.cohort_ids);
  CHECK(back.subject_ids == ds.subject_ids);
  CHECK(back.recording_ids == ds.recording_ids);
  CHECK(back.start_samples == ds.start_samples);
  fs::remove_all(dir);

  // invalid containers are rejected
  Dataset broken = ds;
  broken.fall_mask.pop_back();
  CHECK_THROWS(broken.validate());
  Dataset bad_dir = ds;
  bad_dir.fall_mask[3] = 0.0f;
  bad_dir.fall_direction[3] = 1.0f;
  CHECK_THROWS(bad_dir.validate());
}

TEST_CASE("consecutive pairs") {
  DatasetBuilder b("pairs");
  auto mk = [&](double start_time) {
    CanonicalWindow w;
    w.values = Tensorf::zeros({kWindowLen, kChannels});
    w.cohort_label = "c";
    w.subject_id = "s";
    w.start_time = start_time;
    return w;
  };
  // rec 0: starts 0, 512, 1024 samples -> pairs (0,1), (1,2)
  b.add_recording({mk(0.0), mk(5.12), mk(10.24)}, 0);
  // rec 1: starts 0, 256 -> no pair (not 512 apart)
  b.add_recording({mk(0.0), mk(2.56)}, 1);
  // rec 2: start 512 only -> no pair with rec 0
  b.add_recording({mk(5.12)}, 2);
  Dataset ds = b.finish();
  auto pairs = consecutive_pairs(ds);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == std::pair<Index, Index>{0, 1});
  CHECK(pairs[1] == std::pair<Index, Index>{1, 2});
}

TEST_CASE("raw store round trip") {
  std::vector<RawRecording> recs(2);
  for (int r = 0; r < 2; ++r) {
    recs[r].samples = Tensord({64, kChannels});
    for (Index i = 0; i < recs[r].samples.numel(); ++i)
      recs[r].samples[i] = 0.25 * ((i + r) % 9);  // f32-exact values
    recs[r].source_hz = r == 0 ? 128.0 : 50.0;
    recs[r].subject_id = "s" + std::to_string(r);
    recs[r].dataset_id = "raw";
    recs[r].cohort_label = "c";
  }
  recs[1].fall_intervals = {{1.0, 1.5, FallDirection::lateral}};
  Eigen::Matrix3d rot;
  rot << 0, 0, 1, 1, 0, 0, 0, 1, 0;

  fs::path dir = temp_dir("rawstore");
  save_raw_store(dir, recs, rot);
  Eigen::Matrix3d rot_back;
  auto back = load_raw_store(dir, rot_back);
  CHECK((rot_back - rot).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.size() == 2);
  for (int r = 0; r < 2; ++r) {
    CHECK(back[r].source_hz == recs[r].source_hz);
    CHECK(back[r].subject_id == recs[r].subject_id);
    for (Index i = 0; i < recs[r].samples.numel(); ++i)
      CHECK(back[r].samples[i] == recs[r].samples[i]);
  }
  REQUIRE(back[1].fall_intervals.size() == 1);
  CHECK(back[1].fall_intervals[0].start == 1.0);
  CHECK(back[1].fall_intervals[0].direction == FallDirection::lateral);
  fs::remove_all(dir);
}
