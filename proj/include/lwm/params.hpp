#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lwm/autodiff.hpp"
#include "lwm/rng.hpp"
#include "lwm/tensor.hpp"

namespace lwm {

namespace fs = std::filesystem;

/// Named parameter registry. Gradients are accumulated here by Graph leaves
/// and consumed by the optimizer.
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
  };

  Tensor<S>& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw std::invalid_argument("duplicate param " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, Tensor<S>::zeros(shape), Tensor<S>::zeros(shape)});
    return entries_.back().value;
  }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no param " + name);
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  Index total_params() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.array().setZero();
  }

  /// Register the named parameter as a leaf of g.
  int use(Graph<S>& g, const std::string& name) {
    Entry& e = at(name);
    return g.leaf(e.value, &e.grad);
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

// ---- initialisers ----------------------------------------------------------

/// Orthogonal (rows x cols) matrix: thin QR of a Gaussian draw, sign-fixed.
template <typename S>
void init_orthogonal(Tensor<S>& w, RngStream& rng) {
  const Index r = w.dim(0), c = w.dim(1);
  const Index m = std::max(r, c), n = std::min(r, c);
  Eigen::MatrixXd G(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) G(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(m, n);
  Eigen::MatrixXd R = qr.matrixQR().topRows(n).template triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (R(j, j) < 0) Q.col(j) = -Q.col(j);
  auto W = w.mat();
  if (r >= c) W = Q.template cast<S>();
  else W = Q.transpose().template cast<S>();
}

template <typename S>
void init_normal(Tensor<S>& w, RngStream& rng, double std) {
  rng.fill_normal(w, 0.0, std);
}

// ---- optimizer -------------------------------------------------------------

/// Adam with decoupled weight decay.
template <typename S>
class AdamW {
 public:
  AdamW(ParamStore<S>& params, double lr = 1e-3, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.01)
      : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        wd_(weight_decay) {
    for (auto& e : params.entries()) {
      m_.push_back(Tensor<S>::zeros(e.value.shape()));
      v_.push_back(Tensor<S>::zeros(e.value.shape()));
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    auto& es = params_.entries();
    for (size_t i = 0; i < es.size(); ++i) {
      auto g = es[i].grad.array();
      m_[i].array() = S(beta1_) * m_[i].array() + S(1.0 - beta1_) * g;
      v_[i].array() = S(beta2_) * v_[i].array() + S(1.0 - beta2_) * g * g;
      auto mhat = (m_[i].array() / S(bc1)).eval();
      auto vhat = (v_[i].array() / S(bc2)).eval();
      es[i].value.array() -=
          S(lr_) * (mhat / (vhat.sqrt() + S(eps_)) + S(wd_) * es[i].value.array());
    }
  }

 private:
  ParamStore<S>& params_;
  double lr_, beta1_, beta2_, eps_, wd_;
  long t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

/// Warmup-steady-decay: linear warmup over the first 10% of steps, constant
/// middle, cosine decay over the final 40%.
inline double lr_schedule(double peak_lr, long step, long total_steps) {
  if (total_steps <= 1) return peak_lr;
  const double warm = 0.10 * total_steps;
  const double decay_start = 0.60 * total_steps;
  const double s = static_cast<double>(step);
  if (s < warm) return peak_lr * (s + 1.0) / warm;
  if (s < decay_start) return peak_lr;
  const double frac = (s - decay_start) / (total_steps - decay_start);
  return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// ---- checkpoint I/O --------------------------------------------------------

inline void write_f32_blob(const fs::path& path, const float* data, size_t n) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

inline std::vector<float> read_f32_blob(const fs::path& path, size_t expected) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const auto bytes = static_cast<size_t>(in.tellg());
  if (bytes != expected * 4)
    throw std::runtime_error("blob size mismatch for " + path.string());
  std::vector<float> out(expected);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  return out;
}

inline std::string sanitize_param_name(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (c == '/') c = '.';
  return s;
}

/// Checkpoint: manifest.json (config + parameter registry) plus one
/// little-endian f32 blob per parameter under params/.
template <typename S>
void save_checkpoint(const fs::path& dir, const nlohmann::json& config,
                     const ParamStore<S>& store) {
  fs::create_directories(dir / "params");
  nlohmann::json manifest;
  manifest["config"] = config;
  nlohmann::json reg = nlohmann::json::array();
  for (const auto& e : store.entries()) {
    nlohmann::json p;
    p["name"] = e.name;
    p["shape"] = e.value.shape();
    reg.push_back(p);
    std::vector<float> buf(static_cast<size_t>(e.value.numel()));
    for (Index i = 0; i < e.value.numel(); ++i) buf[i] = static_cast<float>(e.value[i]);
    write_f32_blob(dir / "params" / (sanitize_param_name(e.name) + ".f32"),
                   buf.data(), buf.size());
  }
  manifest["params"] = reg;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

template <typename S>
nlohmann::json load_checkpoint(const fs::path& dir, ParamStore<S>& store) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  for (const auto& p : manifest["params"]) {
    const std::string name = p["name"];
    auto& e = store.at(name);
    Shape shape = p["shape"].get<Shape>();
    if (shape != e.value.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    auto buf = read_f32_blob(dir / "params" / (sanitize_param_name(name) + ".f32"),
                             static_cast<size_t>(e.value.numel()));
    for (Index i = 0; i < e.value.numel(); ++i) e.value[i] = static_cast<S>(buf[i]);
  }
  return manifest["config"];
}

}  // namespace lwm
