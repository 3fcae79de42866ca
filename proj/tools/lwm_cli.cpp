// Command-line front end: synth, harmonize, pretrain, embed, probe, diagnose.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.
// LWM_THREADS sets the Eigen thread count for all commands.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <unistd.h>

#include "lwm/objective.hpp"
#include "lwm/probes.hpp"
#include "lwm/synthgait.hpp"

using namespace lwm;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError(where + ": unknown key \"" + key + "\"");
}

/// One command owns a run directory at a time.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / "lock") {
    fs::create_directories(dir);
    if (fs::exists(path_))
      throw DataError("run directory is locked: " + path_.string());
    std::ofstream(path_) << "owner pid " << ::getpid() << "\n";
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

// ---- pretrain config ---------------------------------------------------------

struct RunConfig {
  ModelConfig model = ModelConfig::production();
  TrainConfig train;
  AugmentationConfig augment;
  bool augment_enabled = false;

  static RunConfig from_json(const json& j) {
    check_keys(j, {"model", "train", "augment", "seed"}, "config");
    RunConfig c;
    if (j.contains("model")) {
      check_keys(j.at("model"),
                 {"context_len", "in_channels", "embed_dim", "ffn_dim", "heads",
                  "key_dim", "value_dim", "units", "convs_per_unit", "chunk",
                  "eig_mode", "ln_eps"},
                 "config.model");
      json m = ModelConfig::production().to_json();
      m.update(j.at("model"));
      c.model = ModelConfig::from_json(m);
    }
    if (j.contains("train")) {
      check_keys(j.at("train"),
                 {"objective", "predictor", "lambda", "epochs", "peak_lr",
                  "batch_size", "seed", "sigreg_dirs", "sigreg_knots",
                  "weight_decay"},
                 "config.train");
      c.train = TrainConfig::from_json(j.at("train"));
    }
    if (j.contains("augment")) {
      check_keys(j.at("augment"),
                 {"enabled", "tilt_sigma_deg", "drift_step_sigma",
                  "censor_percentile", "apply_prob"},
                 "config.augment");
      const json& a = j.at("augment");
      c.augment_enabled = a.value("enabled", false);
      c.augment.tilt_sigma_deg = a.value("tilt_sigma_deg", c.augment.tilt_sigma_deg);
      c.augment.drift_step_sigma = a.value("drift_step_sigma", c.augment.drift_step_sigma);
      c.augment.censor_percentile = a.value("censor_percentile", c.augment.censor_percentile);
      c.augment.apply_prob = a.value("apply_prob", c.augment.apply_prob);
    }
    if (j.contains("seed")) c.train.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }

  json to_json() const {
    json a = {{"enabled", augment_enabled},
              {"tilt_sigma_deg", augment.tilt_sigma_deg},
              {"drift_step_sigma", augment.drift_step_sigma},
              {"censor_percentile", augment.censor_percentile},
              {"apply_prob", augment.apply_prob}};
    return {{"model", model.to_json()}, {"train", train.to_json()}, {"augment", a}};
  }
};

// ---- shared helpers ----------------------------------------------------------

Encoder<float> load_encoder(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint / "manifest.json"))
    throw DataError("no checkpoint at " + checkpoint.string());
  json manifest = load_json_file(checkpoint / "manifest.json");
  ModelConfig cfg = ModelConfig::from_json(manifest.at("config").at("model"));
  Encoder<float> enc(cfg);
  load_checkpoint(checkpoint, enc.params());
  return enc;
}

Dataset load_container(const fs::path& dir) {
  try {
    return load_dataset(dir);
  } catch (const json::exception& e) {
    throw DataError(dir.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

std::vector<int> container_labels(const Dataset& ds, const std::string& field,
                                  int& k, std::vector<Index>& rows) {
  rows.clear();
  std::vector<int> labels;
  if (field == "cohort") {
    k = static_cast<int>(ds.cohorts.size());
    for (Index i = 0; i < ds.size(); ++i) {
      rows.push_back(i);
      labels.push_back(static_cast<int>(std::lround(ds.cohort_ids[static_cast<size_t>(i)])));
    }
  } else if (field == "fall") {
    k = 2;
    for (Index i = 0; i < ds.size(); ++i) {
      rows.push_back(i);
      labels.push_back(ds.fall_mask[static_cast<size_t>(i)] != 0.0f ? 1 : 0);
    }
  } else if (field == "fall_direction") {
    k = 4;
    for (Index i = 0; i < ds.size(); ++i)
      if (ds.fall_direction[static_cast<size_t>(i)] >= 0.0f) {
        rows.push_back(i);
        labels.push_back(static_cast<int>(std::lround(ds.fall_direction[static_cast<size_t>(i)])));
      }
  } else {
    throw ConfigError("unknown label field \"" + field +
                      "\"; available: cohort, fall, fall_direction");
  }
  if (labels.empty()) throw DataError("no rows carry the label \"" + field + "\"");
  return labels;
}

Tensorf gather_rows(const Tensorf& windows, const std::vector<Index>& rows) {
  const Index L = windows.dim(1), C = windows.dim(2);
  Tensorf out({static_cast<Index>(rows.size()), L, C});
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy(windows.data() + rows[r] * L * C, windows.data() + (rows[r] + 1) * L * C,
              out.data() + static_cast<Index>(r) * L * C);
  return out;
}

void save_embeddings(const fs::path& dir, const PooledEmbeddings& emb,
                     const json& provenance) {
  fs::create_directories(dir);
  json manifest = {{"format", "lwm-embeddings-v1"},
                   {"count", emb.count()},
                   {"dim", emb.dim()},
                   {"provenance", provenance}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  write_f32_blob(dir / "embeddings.f32", emb.values.data(),
                 static_cast<size_t>(emb.values.numel()));
}

PooledEmbeddings load_embeddings(const fs::path& dir) {
  json manifest = load_json_file(dir / "manifest.json");
  if (manifest.value("format", "") != "lwm-embeddings-v1")
    throw DataError("not an embedding directory: " + dir.string());
  const Index n = manifest.at("count"), d = manifest.at("dim");
  PooledEmbeddings emb;
  emb.values = Tensorf({n, d});
  auto buf = read_f32_blob(dir / "embeddings.f32", static_cast<size_t>(n * d));
  std::copy(buf.begin(), buf.end(), emb.values.data());
  return emb;
}

// ---- commands ----------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& out,
              std::uint64_t seed, const std::string& dataset_id) {
  std::vector<SynthCohortSpec> specs;
  if (spec_path.empty()) {
    specs = {control_cohort(), impaired_cohort()};
  } else {
    json j = load_json_file(spec_path);
    const json& list = j.is_array() ? j : j.at("cohorts");
    for (const auto& c : list) specs.push_back(c.get<SynthCohortSpec>());
  }
  if (specs.empty()) throw ConfigError("synth: no cohorts in spec");
  Dataset ds = generate_corpus(specs, RngStream(seed), dataset_id);
  save_dataset(out, ds);
  std::cout << "wrote " << ds.size() << " windows to " << out << "\n";
  return kExitOk;
}

int cmd_harmonize(const std::string& raw, const std::string& out, double stride,
                  double fall_stride) {
  Eigen::Matrix3d rotation;
  std::vector<RawRecording> recs;
  try {
    recs = load_raw_store(raw, rotation);
  } catch (const json::exception& e) {
    throw DataError(std::string("raw store manifest: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  if (recs.empty()) throw DataError("harmonize: raw store is empty");
  DatasetBuilder builder(recs.front().dataset_id);
  Index skipped = 0;
  for (size_t r = 0; r < recs.size(); ++r) {
    auto seg = harmonize_recording(recs[r], rotation, stride, fall_stride);
    if (seg.too_short) {
      std::cerr << "warning: recording " << r << " shorter than one window, skipped\n";
      ++skipped;
      continue;
    }
    builder.add_recording(seg.windows, static_cast<Index>(r));
  }
  Dataset ds = builder.finish();
  if (ds.size() == 0) throw DataError("harmonize: no windows produced");
  save_dataset(out, ds);
  std::cout << "wrote " << ds.size() << " windows (" << skipped
            << " recordings skipped) to " << out << "\n";
  return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& data,
                 const std::string& out, const json& overrides) {
  RunConfig rc = config_path.empty()
                     ? RunConfig{}
                     : RunConfig::from_json(load_json_file(config_path));
  if (overrides.contains("objective"))
    rc.train.objective = objective_from_string(overrides.at("objective"));
  if (overrides.contains("lambda")) {
    if (rc.train.objective == Objective::mae)
      throw ConfigError("--lambda has no effect with the mae objective");
    rc.train.lambda = overrides.at("lambda");
    if (rc.train.lambda < 0 || rc.train.lambda > 1)
      throw ConfigError("--lambda out of [0,1]");
  }
  if (overrides.contains("predictor"))
    rc.train.predictor = predictor_from_string(overrides.at("predictor"));
  if (overrides.contains("eig"))
    rc.model.eig_mode = eig_mode_from_string(overrides.at("eig"));
  if (overrides.contains("epochs")) rc.train.epochs = overrides.at("epochs");
  if (overrides.contains("batch_size")) rc.train.batch_size = overrides.at("batch_size");
  if (overrides.contains("peak_lr")) rc.train.peak_lr = overrides.at("peak_lr");
  if (overrides.contains("seed")) rc.train.seed = overrides.at("seed");
  rc.model.validate();

  Dataset ds = load_container(data);
  if (ds.windows.dim(1) != rc.model.context_len)
    throw DataError("container window length does not match model context_len");

  Tensorf windows = ds.windows;
  if (rc.augment_enabled) {
    RngStream aug_root(rc.train.seed, 0xa96);
    const Index L = windows.dim(1), C = windows.dim(2);
    for (Index i = 0; i < windows.dim(0); ++i) {
      Tensorf w({L, C});
      std::copy(windows.data() + i * L * C, windows.data() + (i + 1) * L * C, w.data());
      RngStream rw = aug_root.split(static_cast<std::uint64_t>(i));
      apply_augmentations(w, rc.augment, rw);
      std::copy(w.data(), w.data() + L * C, windows.data() + i * L * C);
    }
  }

  RunLock lock(out);
  Encoder<float> enc(rc.model);
  enc.init(RngStream(rc.train.seed, 0xe2c));

  TrainResult result;
  if (rc.train.objective == Objective::lin) {
    auto pairs = consecutive_pairs(ds);
    if (pairs.empty()) throw DataError("no consecutive window pairs in container");
    LwmHeads<float> heads(rc.train.predictor, rc.model);
    heads.init(RngStream(rc.train.seed, 0x4ea));
    result = train_lwm(enc, heads, windows, pairs, rc.train);
  } else {
    std::vector<Index> ids(static_cast<size_t>(windows.dim(0)));
    std::iota(ids.begin(), ids.end(), Index{0});
    MaeHead<float> head(rc.model);
    head.init(RngStream(rc.train.seed, 0x3ae));
    result = train_mae(enc, head, windows, ids, rc.train);
  }

  write_trace_csv(fs::path(out) / "trace.csv", result.trace);
  json manifest = {{"resolved_config", rc.to_json()},
                   {"overrides", overrides},
                   {"data", data},
                   {"steps", result.trace.size()},
                   {"diverged", result.diverged},
                   {"timestamp", iso_now()}};
  if (result.diverged) manifest["diverged_step"] = result.diverged_step;
  std::ofstream(fs::path(out) / "run_manifest.json") << manifest.dump(2) << "\n";

  if (result.diverged) {
    std::cerr << "training diverged at step " << result.diverged_step << "\n";
    return kExitDiverged;
  }
  save_checkpoint(fs::path(out) / "checkpoint", rc.to_json(), enc.params());
  std::cout << "trained " << result.trace.size() << " steps; final loss "
            << result.trace.back().total << "\n";
  return kExitOk;
}

int cmd_embed(const std::string& checkpoint, const std::string& data,
              const std::string& out, Index batch) {
  Encoder<float> enc = load_encoder(checkpoint);
  Dataset ds = load_container(data);
  if (ds.windows.dim(1) != enc.config().context_len)
    throw DataError("container window length does not match model context_len");
  PooledEmbeddings emb = embed_pooled(enc, ds.windows, batch);
  save_embeddings(out, emb, {{"checkpoint", checkpoint}, {"data", data}});
  std::cout << "wrote " << emb.count() << "x" << emb.dim() << " embeddings to "
            << out << "\n";
  return kExitOk;
}

int cmd_probe(const std::string& data, const std::string& embeddings,
              const std::string& checkpoint, const std::string& out,
              const std::string& label_field, const std::string& protocol,
              std::optional<double> noise_db, const ProbeHp& hp) {
  Dataset ds = load_container(data);
  int k = 0;
  std::vector<Index> rows;
  std::vector<int> labels = container_labels(ds, label_field, k, rows);

  PooledEmbeddings emb;
  if (!checkpoint.empty()) {
    Encoder<float> enc = load_encoder(checkpoint);
    Tensorf windows = gather_rows(ds.windows, rows);
    if (noise_db) windows = awgn(windows, *noise_db, RngStream(hp.seed, 0xa39));
    emb = embed_pooled(enc, windows);
  } else if (!embeddings.empty()) {
    if (noise_db)
      throw ConfigError("--noise perturbs raw windows; use --checkpoint, not --embeddings");
    PooledEmbeddings all = load_embeddings(embeddings);
    if (all.count() != ds.size())
      throw DataError("embedding count does not match container");
    emb.values = Tensorf({static_cast<Index>(rows.size()), all.dim()});
    for (size_t r = 0; r < rows.size(); ++r)
      std::copy(all.values.data() + rows[r] * all.dim(),
                all.values.data() + (rows[r] + 1) * all.dim(),
                emb.values.data() + static_cast<Index>(r) * all.dim());
  } else {
    throw ConfigError("probe needs --embeddings or --checkpoint");
  }

  std::vector<int> subjects;
  for (Index r : rows)
    subjects.push_back(static_cast<int>(std::lround(ds.subject_ids[static_cast<size_t>(r)])));

  const std::string proto = protocol == "kfold5" ? "kfold5_subject"
                            : protocol == "loocv" ? "loocv_subject"
                                                  : protocol;
  ProbeReport report = cross_validate(emb, labels, subjects, k, proto, hp);
  fs::create_directories(out);
  json j = report.to_json();
  j["labels"] = label_field;
  if (noise_db) j["noise_snr_db"] = *noise_db;
  std::ofstream(fs::path(out) / "report.json") << j.dump(2) << "\n";
  report.write_csv(fs::path(out) / "report.csv");
  for (const auto& [name, v] : report.aggregate)
    std::cout << name << " " << v << "\n";
  return kExitOk;
}

int cmd_diagnose(const std::string& checkpoint, const std::string& data,
                 const std::string& out, Index max_windows) {
  Encoder<float> enc = load_encoder(checkpoint);
  Dataset ds = load_container(data);
  const Index n = std::min(max_windows, ds.size());
  if (n < 3) throw DataError("diagnose: need at least 3 windows");
  std::vector<Index> rows(static_cast<size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  PooledEmbeddings emb = embed_pooled(enc, gather_rows(ds.windows, rows));

  json report;
  report["windows_used"] = n;
  report["effective_rank"] = effective_rank(detail::to_matrix(emb));

  // latent straightness: per-recording trajectories ordered by start sample
  std::map<long, std::vector<std::pair<long, Index>>> by_rec;
  for (Index i = 0; i < n; ++i)
    by_rec[std::lround(ds.recording_ids[static_cast<size_t>(i)])].push_back(
        {std::lround(ds.start_samples[static_cast<size_t>(i)]), i});
  double straight_sum = 0;
  long straight_cnt = 0;
  for (auto& [rid, seq] : by_rec) {
    if (seq.size() < 3) continue;
    std::sort(seq.begin(), seq.end());
    Eigen::MatrixXd z(static_cast<Eigen::Index>(seq.size()), emb.dim());
    for (size_t t = 0; t < seq.size(); ++t)
      for (Index j = 0; j < emb.dim(); ++j)
        z(static_cast<Eigen::Index>(t), j) = emb.values[seq[t].second * emb.dim() + j];
    straight_sum += latent_straightness(z);
    ++straight_cnt;
  }
  if (straight_cnt) report["latent_straightness"] = straight_sum / straight_cnt;

  // decay-gate histogram per recurrent layer on one batch
  {
    const Index B = std::min<Index>(32, n);
    Tensorf batch = gather_rows(ds.windows, {rows.begin(), rows.begin() + B});
    Tensor<float> x(batch.shape());
    std::copy(batch.data(), batch.data() + batch.numel(), x.data());
    Graph<float> g;
    auto res = enc.encode(g, g.input(std::move(x)));
    json hists = json::array();
    for (size_t layer = 0; layer < res.gdn_gates.size(); ++layer) {
      const auto& gates = *res.gdn_gates[layer];
      std::vector<long> bins(20, 0);
      for (Index i = 0; i < gates.numel(); ++i) {
        const int b = std::clamp(static_cast<int>(gates[i] * 20.0f), 0, 19);
        ++bins[static_cast<size_t>(b)];
      }
      hists.push_back({{"layer", layer}, {"bin_edges", "[0,1] in 20 steps"},
                       {"counts", bins}});
    }
    report["gate_histograms"] = hists;
  }

  fs::create_directories(out);
  std::ofstream(fs::path(out) / "diagnostics.json") << report.dump(2) << "\n";
  std::cout << "effective rank " << report["effective_rank"] << " over " << n
            << " windows\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("LWM_THREADS"))
    Eigen::setNbThreads(std::max(1, std::atoi(threads)));

  CLI::App app{"IMU encoder pretraining and evaluation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic gait corpus");
  std::string sy_spec, sy_out, sy_id = "synth";
  std::uint64_t sy_seed = 0;
  synth->add_option("--spec", sy_spec, "cohort spec JSON (default: built-in two-cohort)");
  synth->add_option("--out", sy_out, "output container directory")->required();
  synth->add_option("--seed", sy_seed, "generation seed");
  synth->add_option("--dataset-id", sy_id, "container dataset id");

  // harmonize
  auto* harm = app.add_subcommand("harmonize", "raw recordings -> window container");
  std::string hz_raw, hz_out;
  double hz_stride = 0.5, hz_fall_stride = 0.1;
  harm->add_option("--raw", hz_raw, "raw store directory")->required();
  harm->add_option("--out", hz_out, "output container directory")->required();
  harm->add_option("--stride", hz_stride, "window stride fraction");
  harm->add_option("--fall-stride", hz_fall_stride, "stride fraction for recordings with falls");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train an encoder on a container");
  std::string pt_config, pt_data, pt_out, pt_objective, pt_predictor, pt_eig;
  double pt_lambda = -1, pt_lr = -1;
  long pt_epochs = -1, pt_batch = -1;
  std::int64_t pt_seed = -1;
  pre->add_option("--config", pt_config, "run config JSON");
  pre->add_option("--data", pt_data, "input container")->required();
  pre->add_option("--out", pt_out, "run directory")->required();
  pre->add_option("--objective", pt_objective, "lin | mae");
  pre->add_option("--lambda", pt_lambda, "sigreg weight (lin objective only)");
  pre->add_option("--predictor", pt_predictor, "linear | mlp | transformer | gdn");
  pre->add_option("--eig", pt_eig, "extended | restricted");
  pre->add_option("--epochs", pt_epochs, "training epochs");
  pre->add_option("--batch-size", pt_batch, "batch size");
  pre->add_option("--peak-lr", pt_lr, "peak learning rate");
  pre->add_option("--seed", pt_seed, "training seed");

  // embed
  auto* emb = app.add_subcommand("embed", "frozen-encoder pooled embeddings");
  std::string em_ckpt, em_data, em_out;
  Index em_batch = 32;
  emb->add_option("--checkpoint", em_ckpt, "checkpoint directory")->required();
  emb->add_option("--data", em_data, "input container")->required();
  emb->add_option("--out", em_out, "output embedding directory")->required();
  emb->add_option("--batch", em_batch, "embedding batch size");

  // probe
  auto* prb = app.add_subcommand("probe", "frozen-probe evaluation");
  std::string pb_data, pb_emb, pb_ckpt, pb_out, pb_labels, pb_protocol = "kfold5";
  double pb_noise = std::numeric_limits<double>::quiet_NaN();
  ProbeHp pb_hp;
  prb->add_option("--data", pb_data, "container with labels")->required();
  prb->add_option("--embeddings", pb_emb, "precomputed embedding directory");
  prb->add_option("--checkpoint", pb_ckpt, "checkpoint (embeds on the fly)");
  prb->add_option("--out", pb_out, "report directory")->required();
  prb->add_option("--labels", pb_labels, "label field: cohort | fall | fall_direction");
  prb->add_option("--protocol", pb_protocol, "kfold5 | loocv");
  prb->add_option("--noise", pb_noise, "AWGN SNR in dB applied before embedding");
  prb->add_option("--l2", pb_hp.l2, "probe L2 strength");
  prb->add_option("--iters", pb_hp.max_iters, "probe iteration cap");
  prb->add_option("--seed", pb_hp.seed, "probe seed");

  // diagnose
  auto* dia = app.add_subcommand("diagnose", "embedding-space diagnostics");
  std::string dg_ckpt, dg_data, dg_out;
  Index dg_max = 512;
  dia->add_option("--checkpoint", dg_ckpt, "checkpoint directory")->required();
  dia->add_option("--data", dg_data, "input container")->required();
  dia->add_option("--out", dg_out, "report directory")->required();
  dia->add_option("--max-windows", dg_max, "windows to embed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(sy_spec, sy_out, sy_seed, sy_id);
    if (*harm) return cmd_harmonize(hz_raw, hz_out, hz_stride, hz_fall_stride);
    if (*pre) {
      json overrides = json::object();
      if (!pt_objective.empty()) overrides["objective"] = pt_objective;
      if (pre->count("--lambda")) overrides["lambda"] = pt_lambda;
      if (!pt_predictor.empty()) overrides["predictor"] = pt_predictor;
      if (!pt_eig.empty()) overrides["eig"] = pt_eig;
      if (pt_epochs >= 0) overrides["epochs"] = pt_epochs;
      if (pt_batch >= 0) overrides["batch_size"] = pt_batch;
      if (pt_lr >= 0) overrides["peak_lr"] = pt_lr;
      if (pt_seed >= 0) overrides["seed"] = pt_seed;
      return cmd_pretrain(pt_config, pt_data, pt_out, overrides);
    }
    if (*emb) return cmd_embed(em_ckpt, em_data, em_out, em_batch);
    if (*prb) {
      if (pb_labels.empty())
        throw ConfigError("--labels is required; available: cohort, fall, fall_direction");
      std::optional<double> noise;
      if (prb->count("--noise")) noise = pb_noise;
      return cmd_probe(pb_data, pb_emb, pb_ckpt, pb_out, pb_labels, pb_protocol,
                       noise, pb_hp);
    }
    if (*dia) return cmd_diagnose(dg_ckpt, dg_data, dg_out, dg_max);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
