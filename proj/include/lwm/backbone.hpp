#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lwm/autodiff.hpp"
#include "lwm/ops_gdn.hpp"
#include "lwm/params.hpp"
#include "lwm/rng.hpp"

namespace lwm {

enum class EigMode { extended, restricted };

inline std::string to_string(EigMode m) {
  return m == EigMode::extended ? "extended" : "restricted";
}
inline EigMode eig_mode_from_string(const std::string& s) {
  if (s == "extended") return EigMode::extended;
  if (s == "restricted") return EigMode::restricted;
  throw std::invalid_argument("unknown eig mode: " + s);
}

struct ModelConfig {
  Index context_len = 512;
  Index in_channels = 6;
  Index embed_dim = 128;
  // 536 keeps the 12 channel mixers inside the parameter budget; see README.
  Index ffn_dim = 536;
  Index heads = 4;
  Index key_dim = 32;
  Index value_dim = 256;
  Index units = 3;
  Index convs_per_unit = 3;
  Index chunk = 64;
  EigMode eig_mode = EigMode::extended;
  double ln_eps = 1e-5;

  Index layers() const { return units * (convs_per_unit + 1); }

  void validate() const {
    if (!is_power_of_two(context_len))
      throw std::invalid_argument("context_len must be a power of two");
    if (value_dim % heads != 0)
      throw std::invalid_argument("value_dim must be divisible by heads");
    if (units < 1 || convs_per_unit < 1) throw std::invalid_argument("bad stack");
  }

  static ModelConfig production() { return ModelConfig{}; }

  static ModelConfig tiny() {
    ModelConfig c;
    c.context_len = 32;
    c.embed_dim = 8;
    c.ffn_dim = 16;
    c.heads = 2;
    c.key_dim = 4;
    c.value_dim = 8;
    c.units = 1;
    c.chunk = 8;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"context_len", context_len}, {"in_channels", in_channels},
            {"embed_dim", embed_dim},     {"ffn_dim", ffn_dim},
            {"heads", heads},             {"key_dim", key_dim},
            {"value_dim", value_dim},     {"units", units},
            {"convs_per_unit", convs_per_unit}, {"chunk", chunk},
            {"eig_mode", to_string(eig_mode)},  {"ln_eps", ln_eps}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.context_len = j.at("context_len");
    c.in_channels = j.at("in_channels");
    c.embed_dim = j.at("embed_dim");
    c.ffn_dim = j.at("ffn_dim");
    c.heads = j.at("heads");
    c.key_dim = j.at("key_dim");
    c.value_dim = j.at("value_dim");
    c.units = j.at("units");
    c.convs_per_unit = j.at("convs_per_unit");
    c.chunk = j.at("chunk");
    c.eig_mode = eig_mode_from_string(j.at("eig_mode"));
    c.ln_eps = j.at("ln_eps");
    return c;
  }
};

template <typename S>
struct EncodeResult {
  int final_hidden = -1;     // [B,L,d] after the last channel mixer
  int terminal_token = -1;   // [B,d], last position of the final recurrent block
  int pooled = -1;           // [B,d], temporal mean of final_hidden
  std::vector<int> layer_hidden;  // optional diagnostics
  std::vector<std::shared_ptr<Tensor<S>>> gdn_states;
  std::vector<std::shared_ptr<Tensor<S>>> gdn_gates;  // decay gate values [B,L,H]
};

/// Hybrid encoder: per unit, convs_per_unit gated long-convolution blocks and
/// one gated delta-rule block, each followed by a gated channel mixer; hidden
/// state weaves across unit boundaries through position 0.
template <typename S>
class Encoder {
 public:
  explicit Encoder(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const Index d = cfg_.embed_dim, L = cfg_.context_len, f = cfg_.ffn_dim;
    const Index dv = cfg_.value_dim, H = cfg_.heads, dk = cfg_.key_dim;
    params_.add("embed.w", {cfg_.in_channels, d});
    params_.add("embed.b", {d});
    add_ln("embed");
    for (Index u = 0; u < cfg_.units; ++u) {
      for (Index c = 0; c < cfg_.convs_per_unit; ++c) {
        const std::string p = block_prefix(u, c);
        params_.add(p + ".dw_k", {d, 3});
        params_.add(p + ".dw_b", {d});
        params_.add(p + ".pw_w", {d, d});
        params_.add(p + ".pw_b", {d});
        params_.add(p + ".kernel", {d, L});
        add_ln(p);
        add_mlp(p + ".mlp", d, f);
      }
      const std::string p = gdn_prefix(u);
      params_.add(p + ".wq", {d, H * dk});
      params_.add(p + ".wk", {d, H * dk});
      params_.add(p + ".wv", {d, dv});
      params_.add(p + ".wbeta", {d, H});
      params_.add(p + ".wgate", {d, H});
      params_.add(p + ".wz", {d, dv});
      params_.add(p + ".rms_g", {dv});
      params_.add(p + ".wo", {dv, d});
      params_.add(p + ".wo_b", {d});
      add_ln(p);
      add_mlp(p + ".mlp", d, f);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  Index param_count() const { return params_.total_params(); }

  void init(RngStream rng) {
    std::uint64_t salt = 0;
    for (auto& e : params_.entries()) {
      RngStream r = rng.split(salt++);
      const std::string& n = e.name;
      auto ends_with = [&](const char* suf) {
        const std::string s(suf);
        return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
      };
      if (ends_with(".ln_g") || ends_with(".rms_g")) {
        e.value.array().setConstant(S(1));
      } else if (ends_with(".kernel")) {
        init_normal(e.value, r, 1.0 / std::sqrt(static_cast<double>(cfg_.context_len)));
      } else if (ends_with(".dw_k")) {
        init_normal(e.value, r, 1.0 / std::sqrt(3.0));
      } else if (ends_with(".mlp.wo")) {
        // zero out-projection: channel mixers start as (normalised) identity
        e.value.array().setZero();
      } else if (e.value.rank() == 2) {
        init_orthogonal(e.value, r);
      } else {
        e.value.array().setZero();  // biases, ln_b
      }
    }
  }

  // ---- graph builders ------------------------------------------------------

  /// Per-timestep affine map to embed_dim followed by layer norm.
  int embed(Graph<S>& g, int x) {
    if (g.val(x).last_dim() != cfg_.in_channels)
      throw std::invalid_argument("embed: wrong channel count");
    int h = matmul(g, x, params_.use(g, "embed.w"));
    h = bias_add(g, h, params_.use(g, "embed.b"));
    return ln(g, h, "embed");
  }

  /// y = LN(h + ReLU(conv(gate(h) * h, kernel))) with
  /// gate = sigmoid(pointwise(SiLU(depthwise_k3(h)))).
  int long_conv_block(Graph<S>& g, int h, Index unit, Index c) {
    const std::string p = block_prefix(unit, c);
    int gz = depthwise_conv3(g, h, params_.use(g, p + ".dw_k"),
                             params_.use(g, p + ".dw_b"));
    gz = silu(g, gz);
    gz = matmul(g, gz, params_.use(g, p + ".pw_w"));
    gz = bias_add(g, gz, params_.use(g, p + ".pw_b"));
    gz = sigmoid(g, gz);
    int gh = mul(g, gz, h);
    int y = circular_conv(g, gh, params_.use(g, p + ".kernel"));
    y = relu(g, y);
    y = add(g, h, y);
    return ln(g, y, p);
  }

  /// Gated delta-rule sequence block; returns the post-LN hidden and records
  /// the terminal per-head state and decay-gate values.
  int gdn_block(Graph<S>& g, int h, Index unit, EncodeResult<S>* rec = nullptr) {
    const std::string p = gdn_prefix(unit);
    const Index B = g.val(h).dim(0), L = g.val(h).dim(1);
    const Index H = cfg_.heads, dk = cfg_.key_dim, dv = cfg_.value_dim;
    int q = matmul(g, h, params_.use(g, p + ".wq"));
    int k = matmul(g, h, params_.use(g, p + ".wk"));
    k = reshape(g, k, {B, L, H, dk});
    k = l2_normalize(g, k);
    k = reshape(g, k, {B, L, H * dk});
    int v = matmul(g, h, params_.use(g, p + ".wv"));
    int a = sigmoid(g, matmul(g, h, params_.use(g, p + ".wbeta")));
    if (cfg_.eig_mode == EigMode::extended) a = scale(g, a, S(2));
    int gate = sigmoid(g, matmul(g, h, params_.use(g, p + ".wgate")));
    auto scan = gdn_scan(g, q, k, v, a, gate, H, cfg_.chunk, chunkwise_);
    int o = rms_norm(g, scan.out, params_.use(g, p + ".rms_g"), dv / H,
                     static_cast<S>(cfg_.ln_eps));
    int z = matmul(g, h, params_.use(g, p + ".wz"));
    o = silu_gate(g, z, o);
    o = matmul(g, o, params_.use(g, p + ".wo"));
    o = bias_add(g, o, params_.use(g, p + ".wo_b"));
    o = add(g, h, o);
    int y = ln(g, o, p);
    if (rec) {
      rec->gdn_states.push_back(scan.terminal_state);
      auto gates = std::make_shared<Tensor<S>>(g.val(gate));
      rec->gdn_gates.push_back(gates);
    }
    return y;
  }

  /// y = LN(h + W_out(SiLU(W_g h) * (W_u h))).
  int gated_mlp(Graph<S>& g, int h, const std::string& prefix) {
    const std::string p = prefix + ".mlp";
    int a = matmul(g, h, params_.use(g, p + ".wg"));
    int b = matmul(g, h, params_.use(g, p + ".wu"));
    int y = silu_gate(g, a, b);
    y = matmul(g, y, params_.use(g, p + ".wo"));
    y = bias_add(g, y, params_.use(g, p + ".wo_b"));
    y = add(g, h, y);
    return ln(g, y, p);
  }

  /// Residual injection of the terminal hidden vector into position 0.
  int state_weave(Graph<S>& g, int h) {
    const Index L = g.val(h).dim(1);
    int tail = slice_time(g, h, L - 1);
    return add_at_time(g, h, 0, tail);
  }

  /// Full stack. x is a [B,L,in_channels] input node.
  EncodeResult<S> encode(Graph<S>& g, int x, bool record_layers = false) {
    EncodeResult<S> res;
    int h = embed(g, x);
    int last_gdn_out = -1;
    for (Index u = 0; u < cfg_.units; ++u) {
      for (Index c = 0; c < cfg_.convs_per_unit; ++c) {
        h = long_conv_block(g, h, u, c);
        h = gated_mlp(g, h, block_prefix(u, c));
        if (record_layers) res.layer_hidden.push_back(h);
      }
      last_gdn_out = gdn_block(g, h, u, &res);
      h = gated_mlp(g, last_gdn_out, gdn_prefix(u));
      if (record_layers) res.layer_hidden.push_back(h);
      if (u + 1 < cfg_.units) h = state_weave(g, h);
    }
    res.final_hidden = h;
    res.terminal_token = slice_time(g, last_gdn_out, cfg_.context_len - 1);
    res.pooled = mean_time(g, h);
    return res;
  }

  /// Force the per-timestep recurrence instead of the chunkwise scan
  /// (testing hook; both must agree numerically).
  void set_chunkwise(bool on) { chunkwise_ = on; }

 private:
  void add_ln(const std::string& p) {
    params_.add(p + ".ln_g", {cfg_.embed_dim});
    params_.add(p + ".ln_b", {cfg_.embed_dim});
  }
  void add_mlp(const std::string& p, Index d, Index f) {
    params_.add(p + ".wg", {d, f});
    params_.add(p + ".wu", {d, f});
    params_.add(p + ".wo", {f, d});
    params_.add(p + ".wo_b", {d});
    params_.add(p + ".ln_g", {d});
    params_.add(p + ".ln_b", {d});
  }
  int ln(Graph<S>& g, int h, const std::string& p) {
    return layer_norm(g, h, params_.use(g, p + ".ln_g"), params_.use(g, p + ".ln_b"),
                      static_cast<S>(cfg_.ln_eps));
  }
  static std::string block_prefix(Index u, Index c) {
    return "u" + std::to_string(u) + ".conv" + std::to_string(c);
  }
  static std::string gdn_prefix(Index u) { return "u" + std::to_string(u) + ".gdn"; }

  ModelConfig cfg_;
  ParamStore<S> params_;
  bool chunkwise_ = true;
};

}  // namespace lwm
