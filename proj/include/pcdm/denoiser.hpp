#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "pcdm/autograd.hpp"
#include "pcdm/diffusion.hpp"
#include "pcdm/parameters.hpp"
#include "pcdm/random.hpp"
#include "pcdm/tensor.hpp"

namespace pcdm {

struct DenoiserConfig {
  int64_t height = 64;
  int64_t width = 128;
  /// Resolution levels of the U-shape; channels double per level.
  int depth = 3;
  int64_t base_width = 32;
  int64_t time_encoding_dim = 32;  // length of the sinusoidal code of t
  int64_t cond_encoding_dim = 32;  // length of the sinusoidal code of d
  double period = 10000.0;
  int64_t max_groups = 8;
  /// Zero the final projection so an untrained model predicts 0.
  bool zero_init_output = true;

  int64_t time_embed_dim() const { return 3 * time_encoding_dim; }
  int64_t cond_embed_dim() const { return cond_encoding_dim; }
  int64_t joint_embed_dim() const { return time_embed_dim() + cond_embed_dim(); }
  int64_t channels_at(int level) const { return base_width << level; }
  int64_t groups_for(int64_t channels) const { return std::min(max_groups, channels); }

  /// Throws ConfigError when the shape or widths are unusable.
  void validate() const;
};

/// Sinusoidal code of a scalar: entries i < D/2 are cos(v * w_i), the rest
/// sin(v * w_i), with w_i = P^(-i / (D/2)) for i = 0..D/2-1.
Tensor sinusoidal_encode(double v, int64_t dim, double period = 10000.0);

struct ConditionEmbedding {
  Var en_t;  // sinusoidal code of t
  Var en_d;  // sinusoidal code of d
  Var e_t;   // MLP_t(en_t), length 3 * D_t^En
  Var e_d;   // MLP_d(en_d), length D_d^En
  Var e;     // e_t followed by e_d
};

/// Scaled dot-product attention over columns: q [C, N], k [C, M], v [C, M]
/// gives v * softmax(q^T k / sqrt(C))^T of shape [C, N]. The softmax runs over
/// the M keys of each query.
Var attention(const Var& q, const Var& k, const Var& v);

/// w1 * o_s + w2 * o_ct + w3 * o_cd with single-element learnable weights.
Var fuse_features(const Var& o_s, const Var& o_ct, const Var& o_cd, const Var& w1, const Var& w2, const Var& w3);

/// U-shape conditional denoiser f(x_t, t, y, d).
///
/// Parameters are named hierarchically ("enc0.rb.conv.w", "mid.sab.q.w",
/// "mid.pcab.w1", ...) and keep insertion order, which fixes the checkpoint
/// layout.
class DenoiserModel : public Denoiser {
 public:
  DenoiserModel(const DenoiserConfig& config, uint64_t init_seed);

  Var forward(const Var& x_t, int t, const Var& y, double d) const override;
  ParameterStore& parameters() override { return params_; }
  const ParameterStore& parameters() const { return params_; }
  std::pair<int64_t, int64_t> resolution() const override { return {config_.height, config_.width}; }
  const DenoiserConfig& config() const { return config_; }

  ConditionEmbedding embed_conditions(int t, double d) const;

  /// GN -> SiLU -> 3x3 conv on m, plus SiLU -> pointwise conv of e broadcast
  /// over H x W, plus a (projected when channels change) skip of m.
  Var res_block(const Var& m, const Var& e, const std::string& id) const;
  /// Self-attention over the H*W positions with a residual connection.
  Var sab(const Var& m, const std::string& id) const;
  /// Cross-attention: queries from the feature map, one key/value from e_x.
  Var cab(const Var& o_s, const Var& e_x, const std::string& id) const;
  /// Attention map of `cab` before its output projection, [C, H*W].
  Var cab_attention(const Var& o_s, const Var& e_x, const std::string& id) const;
  /// Weighted fusion of the three branches followed by GN -> SiLU -> 3x3 conv.
  Var pcab(const Var& o_s, const Var& o_ct, const Var& o_cd, const std::string& id) const;

  /// Copy parameter values by name; every name must exist with the same shape.
  void load_parameters(const std::vector<std::pair<std::string, Tensor>>& values);

 private:
  void add_conv(const std::string& id, int64_t c_out, int64_t c_in, int64_t k, bool zero = false);
  void add_linear(const std::string& id, int64_t out, int64_t in);
  void add_norm(const std::string& id, int64_t channels);
  void add_res_block(const std::string& id, int64_t c_in, int64_t c_out, int64_t embed_dim);
  void add_attention_proj(const std::string& id, int64_t channels, int64_t key_in);

  Var conv(const std::string& id, const Var& x, int64_t stride = 1) const;
  Var norm(const std::string& id, const Var& x) const;
  Var mlp(const std::string& id, const Var& x) const;
  const Var& p(const std::string& name) const { return params_.get(name); }

  DenoiserConfig config_;
  ParameterStore params_;
  Rng init_rng_;
};

}  // namespace pcdm
