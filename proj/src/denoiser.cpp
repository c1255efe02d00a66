#include "pcdm/denoiser.hpp"

#include <cmath>

#include "pcdm/errors.hpp"

namespace pcdm {

void DenoiserConfig::validate() const {
  if (depth < 1) throw ConfigError("denoiser depth must be >= 1");
  if (base_width < 1) throw ConfigError("denoiser base width must be >= 1");
  if (time_encoding_dim <= 0 || time_encoding_dim % 2 != 0 || cond_encoding_dim <= 0 || cond_encoding_dim % 2 != 0)
    throw ConfigError("sinusoidal encoding dimensions must be positive and even");
  const int64_t div = int64_t{1} << (depth - 1);
  if (height <= 0 || width <= 0 || height % div != 0 || width % div != 0)
    throw ConfigError("resolution " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be divisible by " + std::to_string(div) + " for depth " + std::to_string(depth));
  for (int level = 0; level < depth; ++level) {
    for (int64_t c : {channels_at(level), 2 * channels_at(level)}) {
      if (c % groups_for(c) != 0)
        throw ConfigError("channel count " + std::to_string(c) + " not divisible into " +
                          std::to_string(groups_for(c)) + " groups");
    }
  }
}

Tensor sinusoidal_encode(double v, int64_t dim, double period) {
  if (dim <= 0 || dim % 2 != 0) throw ConfigError("sinusoidal encoding dimension must be positive and even");
  const int64_t half = dim / 2;
  Tensor out({dim});
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::pow(period, -static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::cos(v * freq);
    out[half + i] = std::sin(v * freq);
  }
  return out;
}

Var attention(const Var& q, const Var& k, const Var& v) {
  if (q.value().ndim() != 2 || k.value().ndim() != 2 || v.value().ndim() != 2)
    throw DimensionError("attention expects [C, N] matrices");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.shape()[0]));
  const Var logits = ops::scale(ops::matmul(ops::transpose(q), k), scale);  // [N, M]
  const Var weights = ops::softmax(logits, 1);
  return ops::matmul(v, ops::transpose(weights));  // [C, N]
}

Var fuse_features(const Var& o_s, const Var& o_ct, const Var& o_cd, const Var& w1, const Var& w2, const Var& w3) {
  if (o_s.shape() != o_ct.shape() || o_s.shape() != o_cd.shape())
    throw DimensionError("fusion inputs must share a shape");
  return ops::add(ops::add(ops::scale_by(o_s, w1), ops::scale_by(o_ct, w2)), ops::scale_by(o_cd, w3));
}

DenoiserModel::DenoiserModel(const DenoiserConfig& config, uint64_t init_seed)
    : config_(config), init_rng_(init_seed) {
  config_.validate();
  const int64_t dt = config_.time_embed_dim();
  const int64_t dd = config_.cond_embed_dim();
  const int64_t de = config_.joint_embed_dim();

  add_linear("emb_t.fc1", dt, config_.time_encoding_dim);
  add_linear("emb_t.fc2", dt, dt);
  add_linear("emb_d.fc1", dd, config_.cond_encoding_dim);
  add_linear("emb_d.fc2", dd, dd);

  add_conv("in", config_.base_width, 2, 3);
  for (int i = 0; i < config_.depth; ++i) {
    const int64_t c = config_.channels_at(i);
    add_res_block("enc" + std::to_string(i) + ".rb", c, c, de);
    if (i + 1 < config_.depth) add_conv("enc" + std::to_string(i) + ".down", config_.channels_at(i + 1), c, 3);
  }
  const int64_t cm = config_.channels_at(config_.depth - 1);
  add_res_block("mid.rb", cm, cm, de);
  add_norm("mid.sab.gn", cm);
  add_attention_proj("mid.sab", cm, cm);
  add_norm("mid.cab_t.gn", cm);
  add_attention_proj("mid.cab_t", cm, dt);
  add_norm("mid.cab_d.gn", cm);
  add_attention_proj("mid.cab_d", cm, dd);
  params_.add("mid.pcab.w1", Tensor::scalar(1.0));
  params_.add("mid.pcab.w2", Tensor::scalar(1.0));
  params_.add("mid.pcab.w3", Tensor::scalar(1.0));
  add_norm("mid.pcab.gn", cm);
  add_conv("mid.pcab.conv", cm, cm, 3);
  for (int i = config_.depth - 1; i >= 0; --i) {
    const int64_t c = config_.channels_at(i);
    add_res_block("dec" + std::to_string(i) + ".rb", 2 * c, c, de);
    if (i > 0) add_conv("dec" + std::to_string(i) + ".up", config_.channels_at(i - 1), c, 3);
  }
  add_norm("out.gn", config_.base_width);
  add_conv("out.conv", 1, config_.base_width, 3, config_.zero_init_output);
}

void DenoiserModel::add_conv(const std::string& id, int64_t c_out, int64_t c_in, int64_t k, bool zero) {
  Tensor w({c_out, c_in, k, k});
  if (!zero) {
    const double std = std::sqrt(2.0 / static_cast<double>(c_in * k * k));
    for (double& v : w.data()) v = std * init_rng_.normal();
  }
  params_.add(id + ".w", std::move(w));
  params_.add(id + ".b", Tensor({c_out}, 0.0));
}

void DenoiserModel::add_linear(const std::string& id, int64_t out, int64_t in) {
  Tensor w({out, in});
  const double std = std::sqrt(2.0 / static_cast<double>(in));
  for (double& v : w.data()) v = std * init_rng_.normal();
  params_.add(id + ".w", std::move(w));
  params_.add(id + ".b", Tensor({out}, 0.0));
}

void DenoiserModel::add_norm(const std::string& id, int64_t channels) {
  params_.add(id + ".gamma", Tensor({channels}, 1.0));
  params_.add(id + ".beta", Tensor({channels}, 0.0));
}

void DenoiserModel::add_res_block(const std::string& id, int64_t c_in, int64_t c_out, int64_t embed_dim) {
  add_norm(id + ".gn", c_in);
  add_conv(id + ".conv", c_out, c_in, 3);
  add_conv(id + ".emb", c_out, embed_dim, 1);
  if (c_in != c_out) add_conv(id + ".skip", c_out, c_in, 1);
}

void DenoiserModel::add_attention_proj(const std::string& id, int64_t channels, int64_t key_in) {
  add_conv(id + ".q", channels, channels, 1);
  add_conv(id + ".k", channels, key_in, 1);
  add_conv(id + ".v", channels, key_in, 1);
  add_conv(id + ".out", channels, channels, 1);
}

Var DenoiserModel::conv(const std::string& id, const Var& x, int64_t stride) const {
  const Var& w = p(id + ".w");
  const int64_t k = w.shape()[2];
  return ops::conv2d(x, w, p(id + ".b"), stride, k / 2);
}

Var DenoiserModel::norm(const std::string& id, const Var& x) const {
  return ops::group_norm(x, config_.groups_for(x.shape()[0]), p(id + ".gamma"), p(id + ".beta"));
}

Var DenoiserModel::mlp(const std::string& id, const Var& x) const {
  const Var h = ops::silu(ops::linear(x, p(id + ".fc1.w"), p(id + ".fc1.b")));
  return ops::linear(h, p(id + ".fc2.w"), p(id + ".fc2.b"));
}

ConditionEmbedding DenoiserModel::embed_conditions(int t, double d) const {
  ConditionEmbedding emb;
  emb.en_t = Var::constant(sinusoidal_encode(static_cast<double>(t), config_.time_encoding_dim, config_.period));
  emb.en_d = Var::constant(sinusoidal_encode(d, config_.cond_encoding_dim, config_.period));
  emb.e_t = mlp("emb_t", emb.en_t);
  emb.e_d = mlp("emb_d", emb.en_d);
  emb.e = ops::concat({emb.e_t, emb.e_d}, 0);
  return emb;
}

Var DenoiserModel::res_block(const Var& m, const Var& e, const std::string& id) const {
  if (e.value().numel() != config_.joint_embed_dim())
    throw DimensionError("res_block: embedding length " + std::to_string(e.value().numel()) + ", expected " +
                         std::to_string(config_.joint_embed_dim()));
  const Var m_prime = conv(id + ".conv", ops::silu(norm(id + ".gn", m)));
  const Var e_col = ops::reshape(ops::silu(e), {e.value().numel(), 1, 1});
  const Var e_prime = conv(id + ".emb", e_col);  // [C_o, 1, 1]
  const Var skip = params_.contains(id + ".skip.w") ? conv(id + ".skip", m) : m;
  return ops::add(skip, ops::broadcast_add(m_prime, e_prime));
}

Var DenoiserModel::sab(const Var& m, const std::string& id) const {
  const Shape& s = m.shape();
  const int64_t c = s[0], hw = s[1] * s[2];
  const Var h = norm(id + ".gn", m);
  const Var q = ops::reshape(conv(id + ".q", h), {c, hw});
  const Var k = ops::reshape(conv(id + ".k", h), {c, hw});
  const Var v = ops::reshape(conv(id + ".v", h), {c, hw});
  const Var att = ops::reshape(attention(q, k, v), s);
  return ops::add(conv(id + ".out", att), m);
}

Var DenoiserModel::cab_attention(const Var& o_s, const Var& e_x, const std::string& id) const {
  const Shape& s = o_s.shape();
  const int64_t c = s[0], hw = s[1] * s[2];
  const Var q = ops::reshape(conv(id + ".q", norm(id + ".gn", o_s)), {c, hw});
  const Var e_col = ops::reshape(e_x, {e_x.value().numel(), 1, 1});
  const Var k = ops::reshape(conv(id + ".k", e_col), {c, 1});
  const Var v = ops::reshape(conv(id + ".v", e_col), {c, 1});
  return attention(q, k, v);
}

Var DenoiserModel::cab(const Var& o_s, const Var& e_x, const std::string& id) const {
  return conv(id + ".out", ops::reshape(cab_attention(o_s, e_x, id), o_s.shape()));
}

Var DenoiserModel::pcab(const Var& o_s, const Var& o_ct, const Var& o_cd, const std::string& id) const {
  const Var fused = fuse_features(o_s, o_ct, o_cd, p(id + ".w1"), p(id + ".w2"), p(id + ".w3"));
  return conv(id + ".conv", ops::silu(norm(id + ".gn", fused)));
}

Var DenoiserModel::forward(const Var& x_t, int t, const Var& y, double d) const {
  const Shape expected{1, config_.height, config_.width};
  if (x_t.shape() != expected || y.shape() != expected)
    throw DimensionError("denoiser expects x_t and y of shape " + shape_str(expected) + ", got " +
                         shape_str(x_t.shape()) + " and " + shape_str(y.shape()));
  const ConditionEmbedding emb = embed_conditions(t, d);

  Var h = conv("in", ops::concat({x_t, y}, 0));
  std::vector<Var> skips;
  for (int i = 0; i < config_.depth; ++i) {
    const std::string id = "enc" + std::to_string(i);
    h = res_block(h, emb.e, id + ".rb");
    skips.push_back(h);
    if (i + 1 < config_.depth) h = conv(id + ".down", h, 2);
  }

  h = res_block(h, emb.e, "mid.rb");
  const Var o_s = sab(h, "mid.sab");
  const Var o_ct = cab(o_s, emb.e_t, "mid.cab_t");
  const Var o_cd = cab(o_s, emb.e_d, "mid.cab_d");
  h = pcab(o_s, o_ct, o_cd, "mid.pcab");

  for (int i = config_.depth - 1; i >= 0; --i) {
    const std::string id = "dec" + std::to_string(i);
    h = res_block(ops::concat({h, skips[static_cast<size_t>(i)]}, 0), emb.e, id + ".rb");
    if (i > 0) h = conv(id + ".up", ops::upsample_nearest2x(h));
  }
  return conv("out.conv", ops::silu(norm("out.gn", h)));
}

void DenoiserModel::load_parameters(const std::vector<std::pair<std::string, Tensor>>& values) {
  if (values.size() != params_.size())
    throw DataError("parameter count mismatch: checkpoint has " + std::to_string(values.size()) + ", model has " +
                    std::to_string(params_.size()));
  for (const auto& [name, t] : values) {
    if (!params_.contains(name)) throw DataError("checkpoint parameter '" + name + "' unknown to the model");
    Var& v = params_.get(name);
    if (v.shape() != t.shape())
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                      shape_str(v.shape()));
    v.mutable_value() = t;
  }
}

}  // namespace pcdm
