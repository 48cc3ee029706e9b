#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "seqvis/batch.hpp"
#include "seqvis/image.hpp"
#include "seqvis/rng.hpp"
#include "seqvis/sampling.hpp"
#include "seqvis/vocab.hpp"

namespace seqvis {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int image_size = 64;
  int patch_size = 8;
  int channels = 3;
  int width = 64;
  int heads = 4;
  int enc_blocks = 2;
  int dec_blocks = 2;
  int ff_mult = 2;
  int vocab_size = 0;
  int max_seq_len = 64;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int ff_dim() const { return width * ff_mult; }

  void validate() const {
    if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
      throw std::invalid_argument("model: image_size must be a multiple of patch_size");
    if (width < 1 || heads < 1 || width % heads != 0)
      throw std::invalid_argument("model: width must be a multiple of heads");
    if (enc_blocks < 1 || dec_blocks < 1 || ff_mult < 1)
      throw std::invalid_argument("model: block counts must be >= 1");
    if (vocab_size < 1) throw std::invalid_argument("model: vocab_size must be set");
    if (max_seq_len < 2) throw std::invalid_argument("model: max_seq_len too small");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamInfo {
  std::string name;
  std::vector<int> dims;
  std::size_t offset = 0;

  std::size_t count() const {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
};

namespace detail {

inline std::vector<ParamInfo> build_manifest(const ModelConfig& cfg) {
  std::vector<ParamInfo> manifest;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<int> dims) {
    ParamInfo info{std::move(name), std::move(dims), offset};
    offset += info.count();
    manifest.push_back(std::move(info));
  };
  int d = cfg.width;
  auto add_attn = [&](const std::string& prefix) {
    add(prefix + ".wq", {d, d});
    add(prefix + ".wk", {d, d});
    add(prefix + ".wv", {d, d});
    add(prefix + ".wo", {d, d});
    add(prefix + ".bq", {d});
    add(prefix + ".bk", {d});
    add(prefix + ".bv", {d});
    add(prefix + ".bo", {d});
  };
  auto add_ff = [&](const std::string& prefix) {
    add(prefix + ".w1", {d, cfg.ff_dim()});
    add(prefix + ".b1", {cfg.ff_dim()});
    add(prefix + ".w2", {cfg.ff_dim(), d});
    add(prefix + ".b2", {d});
  };
  add("enc.patch_embed.w", {cfg.patch_dim(), d});
  add("enc.patch_embed.b", {d});
  add("enc.pos", {cfg.num_patches(), d});
  for (int i = 0; i < cfg.enc_blocks; ++i) {
    std::string p = "enc.b" + std::to_string(i);
    add_attn(p + ".attn");
    add_ff(p + ".ff");
  }
  add("dec.tok_embed", {cfg.vocab_size, d});
  add("dec.pos", {cfg.max_seq_len, d});
  for (int i = 0; i < cfg.dec_blocks; ++i) {
    std::string p = "dec.b" + std::to_string(i);
    add_attn(p + ".self");
    add_attn(p + ".cross");
    add_ff(p + ".ff");
  }
  return manifest;
}

}  // namespace detail

/// Flat parameter vector plus a named shape manifest.
struct ModelParams {
  ModelConfig config;
  std::vector<ParamInfo> manifest;
  std::vector<double> values;

  const ParamInfo& info(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("model params: unknown tensor " + name);
    return manifest[it->second];
  }

  Eigen::Map<Mat> mat(const std::string& name) {
    const ParamInfo& pi = info(name);
    if (pi.dims.size() != 2) throw std::invalid_argument(name + " is not a matrix");
    return Eigen::Map<Mat>(values.data() + pi.offset, pi.dims[0], pi.dims[1]);
  }
  Eigen::Map<const Mat> mat(const std::string& name) const {
    const ParamInfo& pi = info(name);
    if (pi.dims.size() != 2) throw std::invalid_argument(name + " is not a matrix");
    return Eigen::Map<const Mat>(values.data() + pi.offset, pi.dims[0], pi.dims[1]);
  }
  Eigen::Map<Eigen::VectorXd> vec(const std::string& name) {
    const ParamInfo& pi = info(name);
    return Eigen::Map<Eigen::VectorXd>(values.data() + pi.offset,
                                       static_cast<Eigen::Index>(pi.count()));
  }
  Eigen::Map<const Eigen::VectorXd> vec(const std::string& name) const {
    const ParamInfo& pi = info(name);
    return Eigen::Map<const Eigen::VectorXd>(values.data() + pi.offset,
                                             static_cast<Eigen::Index>(pi.count()));
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < manifest.size(); ++i) index_[manifest[i].name] = i;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient buffer sharing a parameter set's manifest.
struct GradBuffer {
  const ModelParams* shapes;
  std::vector<double> values;

  explicit GradBuffer(const ModelParams& params)
      : shapes(&params), values(params.values.size(), 0.0) {}

  Eigen::Map<Mat> mat(const std::string& name) {
    const ParamInfo& pi = shapes->info(name);
    return Eigen::Map<Mat>(values.data() + pi.offset, pi.dims[0], pi.dims[1]);
  }
  Eigen::Map<Eigen::VectorXd> vec(const std::string& name) {
    const ParamInfo& pi = shapes->info(name);
    return Eigen::Map<Eigen::VectorXd>(values.data() + pi.offset,
                                       static_cast<Eigen::Index>(pi.count()));
  }
};

inline ModelParams init_params(const ModelConfig& cfg, Rng& rng,
                               double init_scale = 0.02) {
  cfg.validate();
  ModelParams params;
  params.config = cfg;
  params.manifest = detail::build_manifest(cfg);
  std::size_t total = 0;
  for (const ParamInfo& pi : params.manifest) total += pi.count();
  params.values.resize(total);
  params.rebuild_index();
  for (const ParamInfo& pi : params.manifest) {
    bool is_bias = pi.dims.size() == 1;
    for (std::size_t i = 0; i < pi.count(); ++i) {
      params.values[pi.offset + i] = is_bias ? 0.0 : init_scale * rng.normal();
    }
  }
  return params;
}

inline std::size_t param_count(const ModelParams& params) {
  return params.values.size();
}

// --------------------------------------------------------------------------
// Forward / backward
// --------------------------------------------------------------------------

namespace detail {

constexpr double kLnEps = 1e-5;

inline double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); }
inline double gelu_grad(double z) {
  double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.141592653589793);
  return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))) + z * phi;
}

struct LnCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

inline Mat layer_norm(const Mat& x, LnCache& cache) {
  Mat out(x.rows(), x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = x.row(r).mean();
    double var = (x.row(r).array() - mean).square().mean();
    double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std(r) = inv;
    cache.xhat.row(r) = (x.row(r).array() - mean) * inv;
    out.row(r) = cache.xhat.row(r);
  }
  return out;
}

inline Mat layer_norm_backward(const Mat& dout, const LnCache& cache) {
  Mat dx(dout.rows(), dout.cols());
  for (Eigen::Index r = 0; r < dout.rows(); ++r) {
    double mean_d = dout.row(r).mean();
    double mean_dx = (dout.row(r).array() * cache.xhat.row(r).array()).mean();
    dx.row(r) = cache.inv_std(r) *
                (dout.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
  }
  return dx;
}

struct AttnCache {
  Mat q_in, kv_in;          // block inputs (already layer-normed)
  Mat Q, K, V;              // [L x d]
  std::vector<Mat> probs;   // per head, [Lq x Lk]
  Mat concat;               // [Lq x d]
};

inline Mat attention_forward(const ModelParams& params, const std::string& prefix,
                             const Mat& q_in, const Mat& kv_in, bool causal,
                             AttnCache& cache) {
  int d = params.config.width;
  int heads = params.config.heads;
  int dk = d / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  cache.q_in = q_in;
  cache.kv_in = kv_in;
  cache.Q = q_in * params.mat(prefix + ".wq");
  cache.Q.rowwise() += params.vec(prefix + ".bq").transpose();
  cache.K = kv_in * params.mat(prefix + ".wk");
  cache.K.rowwise() += params.vec(prefix + ".bk").transpose();
  cache.V = kv_in * params.mat(prefix + ".wv");
  cache.V.rowwise() += params.vec(prefix + ".bv").transpose();

  Eigen::Index lq = q_in.rows(), lk = kv_in.rows();
  cache.concat.resize(lq, d);
  cache.probs.assign(static_cast<std::size_t>(heads), Mat());
  for (int h = 0; h < heads; ++h) {
    auto Qh = cache.Q.middleCols(h * dk, dk);
    auto Kh = cache.K.middleCols(h * dk, dk);
    auto Vh = cache.V.middleCols(h * dk, dk);
    Mat scores = (Qh * Kh.transpose()) * scale;
    Mat& p = cache.probs[static_cast<std::size_t>(h)];
    p.resize(lq, lk);
    for (Eigen::Index i = 0; i < lq; ++i) {
      Eigen::Index limit = causal ? std::min<Eigen::Index>(i + 1, lk) : lk;
      double mx = scores.row(i).head(limit).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j < lk; ++j) {
        if (j < limit) {
          p(i, j) = std::exp(scores(i, j) - mx);
          z += p(i, j);
        } else {
          p(i, j) = 0.0;
        }
      }
      p.row(i) /= z;
    }
    cache.concat.middleCols(h * dk, dk) = p * Vh;
  }
  Mat out = cache.concat * params.mat(prefix + ".wo");
  out.rowwise() += params.vec(prefix + ".bo").transpose();
  return out;
}

/// Accumulates parameter gradients and the gradients w.r.t. both inputs.
inline void attention_backward(const ModelParams& params, const std::string& prefix,
                               const Mat& dout, const AttnCache& cache,
                               GradBuffer& grads, Mat& dq_in, Mat& dkv_in) {
  int d = params.config.width;
  int heads = params.config.heads;
  int dk = d / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  grads.mat(prefix + ".wo") += cache.concat.transpose() * dout;
  grads.vec(prefix + ".bo") += dout.colwise().sum().transpose();
  Mat dconcat = dout * params.mat(prefix + ".wo").transpose();

  Mat dQ = Mat::Zero(cache.Q.rows(), d);
  Mat dK = Mat::Zero(cache.K.rows(), d);
  Mat dV = Mat::Zero(cache.V.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Mat& p = cache.probs[static_cast<std::size_t>(h)];
    auto Qh = cache.Q.middleCols(h * dk, dk);
    auto Kh = cache.K.middleCols(h * dk, dk);
    auto Vh = cache.V.middleCols(h * dk, dk);
    Mat doh = dconcat.middleCols(h * dk, dk);
    Mat dp = doh * Vh.transpose();
    dV.middleCols(h * dk, dk) = p.transpose() * doh;
    // softmax rows: ds = p .* (dp - rowsum(dp .* p)); masked entries have p=0.
    Mat ds(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double dot = (dp.row(i).array() * p.row(i).array()).sum();
      ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
    }
    dQ.middleCols(h * dk, dk) = (ds * Kh) * scale;
    dK.middleCols(h * dk, dk) = (ds.transpose() * Qh) * scale;
  }
  grads.mat(prefix + ".wq") += cache.q_in.transpose() * dQ;
  grads.mat(prefix + ".wk") += cache.kv_in.transpose() * dK;
  grads.mat(prefix + ".wv") += cache.kv_in.transpose() * dV;
  grads.vec(prefix + ".bq") += dQ.colwise().sum().transpose();
  grads.vec(prefix + ".bk") += dK.colwise().sum().transpose();
  grads.vec(prefix + ".bv") += dV.colwise().sum().transpose();
  dq_in += dQ * params.mat(prefix + ".wq").transpose();
  dkv_in += dK * params.mat(prefix + ".wk").transpose();
  dkv_in += dV * params.mat(prefix + ".wv").transpose();
}

struct FfCache {
  Mat in;      // layer-normed input
  Mat h_pre;   // pre-activation
  Mat h_act;   // gelu output
};

inline Mat ff_forward(const ModelParams& params, const std::string& prefix,
                      const Mat& in, FfCache& cache) {
  cache.in = in;
  cache.h_pre = in * params.mat(prefix + ".w1");
  cache.h_pre.rowwise() += params.vec(prefix + ".b1").transpose();
  cache.h_act = cache.h_pre.unaryExpr([](double z) { return gelu(z); });
  Mat out = cache.h_act * params.mat(prefix + ".w2");
  out.rowwise() += params.vec(prefix + ".b2").transpose();
  return out;
}

inline Mat ff_backward(const ModelParams& params, const std::string& prefix,
                       const Mat& dout, const FfCache& cache, GradBuffer& grads) {
  grads.mat(prefix + ".w2") += cache.h_act.transpose() * dout;
  grads.vec(prefix + ".b2") += dout.colwise().sum().transpose();
  Mat dh = dout * params.mat(prefix + ".w2").transpose();
  Mat dpre =
      dh.array() * cache.h_pre.unaryExpr([](double z) { return gelu_grad(z); }).array();
  grads.mat(prefix + ".w1") += cache.in.transpose() * dpre;
  grads.vec(prefix + ".b1") += dpre.colwise().sum().transpose();
  return dpre * params.mat(prefix + ".w1").transpose();
}

inline void check_finite(const Mat& x, const std::string& layer) {
  if (!x.allFinite())
    throw std::runtime_error("non-finite activation in " + layer);
}

struct EncBlockCache {
  Mat x_in;
  LnCache ln1;
  AttnCache attn;
  Mat x_mid;
  LnCache ln2;
  FfCache ff;
};

struct DecBlockCache {
  Mat x_in;
  LnCache ln1;
  AttnCache self;
  Mat x_mid1;
  LnCache ln2;
  AttnCache cross;
  Mat x_mid2;
  LnCache ln3;
  FfCache ff;
};

struct ForwardCache {
  Mat patches;
  std::vector<EncBlockCache> enc;
  Mat enc_pre_ln;
  LnCache enc_ln;
  Mat enc_out;
  std::vector<TokenId> ids;
  std::vector<DecBlockCache> dec;
  Mat dec_pre_ln;
  LnCache dec_ln;
  Mat dec_out;
  Mat probs;  // [L x V], row j predicts position j+1
};

inline Mat patchify(const ModelConfig& cfg, const ImageTensor& image) {
  if (static_cast<int>(image.height) != cfg.image_size ||
      static_cast<int>(image.width) != cfg.image_size ||
      static_cast<int>(image.channels) != cfg.channels)
    throw std::invalid_argument("model: image does not match configured size");
  int side = cfg.patches_per_side();
  int ps = cfg.patch_size;
  Mat patches(cfg.num_patches(), cfg.patch_dim());
  for (int pr = 0; pr < side; ++pr) {
    for (int pc = 0; pc < side; ++pc) {
      int p = pr * side + pc;
      int col = 0;
      for (int dy = 0; dy < ps; ++dy) {
        for (int dx = 0; dx < ps; ++dx) {
          for (int ch = 0; ch < cfg.channels; ++ch) {
            patches(p, col++) =
                static_cast<double>(image.at(
                    static_cast<std::size_t>(pr * ps + dy),
                    static_cast<std::size_t>(pc * ps + dx),
                    static_cast<std::size_t>(ch))) -
                0.5;
          }
        }
      }
    }
  }
  return patches;
}

inline void encode_image(const ModelParams& params, const ImageTensor& image,
                         ForwardCache& cache) {
  const ModelConfig& cfg = params.config;
  cache.patches = patchify(cfg, image);
  Mat x = cache.patches * params.mat("enc.patch_embed.w");
  x.rowwise() += params.vec("enc.patch_embed.b").transpose();
  x += params.mat("enc.pos");
  check_finite(x, "enc.patch_embed");
  cache.enc.resize(static_cast<std::size_t>(cfg.enc_blocks));
  for (int i = 0; i < cfg.enc_blocks; ++i) {
    EncBlockCache& bc = cache.enc[static_cast<std::size_t>(i)];
    std::string p = "enc.b" + std::to_string(i);
    bc.x_in = x;
    Mat a = layer_norm(x, bc.ln1);
    x += attention_forward(params, p + ".attn", a, a, false, bc.attn);
    check_finite(x, p + ".attn");
    bc.x_mid = x;
    Mat f = layer_norm(x, bc.ln2);
    x += ff_forward(params, p + ".ff", f, bc.ff);
    check_finite(x, p + ".ff");
  }
  cache.enc_pre_ln = x;
  cache.enc_out = layer_norm(x, cache.enc_ln);
}

inline Mat decode_tokens(const ModelParams& params, std::span<const TokenId> ids,
                         ForwardCache& cache) {
  const ModelConfig& cfg = params.config;
  if (ids.empty()) throw std::invalid_argument("model: empty token prefix");
  if (static_cast<int>(ids.size()) > cfg.max_seq_len)
    throw std::invalid_argument("model: sequence longer than max_seq_len");
  Eigen::Index L = static_cast<Eigen::Index>(ids.size());
  auto tok = params.mat("dec.tok_embed");
  auto pos = params.mat("dec.pos");
  Mat x(L, cfg.width);
  for (Eigen::Index j = 0; j < L; ++j) {
    TokenId id = ids[static_cast<std::size_t>(j)];
    if (id < 0 || id >= cfg.vocab_size)
      throw std::invalid_argument("model: token id outside vocabulary");
    x.row(j) = tok.row(id) + pos.row(j);
  }
  cache.ids.assign(ids.begin(), ids.end());
  cache.dec.resize(static_cast<std::size_t>(cfg.dec_blocks));
  for (int i = 0; i < cfg.dec_blocks; ++i) {
    DecBlockCache& bc = cache.dec[static_cast<std::size_t>(i)];
    std::string p = "dec.b" + std::to_string(i);
    bc.x_in = x;
    Mat a = layer_norm(x, bc.ln1);
    x += attention_forward(params, p + ".self", a, a, true, bc.self);
    check_finite(x, p + ".self");
    bc.x_mid1 = x;
    Mat c = layer_norm(x, bc.ln2);
    x += attention_forward(params, p + ".cross", c, cache.enc_out, false, bc.cross);
    check_finite(x, p + ".cross");
    bc.x_mid2 = x;
    Mat f = layer_norm(x, bc.ln3);
    x += ff_forward(params, p + ".ff", f, bc.ff);
    check_finite(x, p + ".ff");
  }
  cache.dec_pre_ln = x;
  cache.dec_out = layer_norm(x, cache.dec_ln);
  Mat logits = cache.dec_out * tok.transpose();
  check_finite(logits, "dec.logits");
  return logits;
}

inline Mat softmax_rows(const Mat& logits) {
  Mat probs(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double mx = logits.row(r).maxCoeff();
    probs.row(r) = (logits.row(r).array() - mx).exp();
    probs.row(r) /= probs.row(r).sum();
  }
  return probs;
}

/// Full forward pass; row j of the result is the next-token distribution
/// after consuming ids[0..j].
inline Mat forward_all(const ModelParams& params, const ImageTensor& image,
                       std::span<const TokenId> ids, ForwardCache& cache) {
  encode_image(params, image, cache);
  Mat logits = decode_tokens(params, ids, cache);
  cache.probs = softmax_rows(logits);
  return cache.probs;
}

/// Backward from dlogits (same shape as [L x V]) through the whole model.
inline void backward_all(const ModelParams& params, const ForwardCache& cache,
                         const Mat& dlogits, GradBuffer& grads) {
  const ModelConfig& cfg = params.config;
  auto tok = params.mat("dec.tok_embed");

  // logits = dec_out * tok^T (tied embedding)
  Mat ddec_out = dlogits * tok;
  grads.mat("dec.tok_embed") += dlogits.transpose() * cache.dec_out;
  Mat dx = layer_norm_backward(ddec_out, cache.dec_ln);
  Mat denc_out = Mat::Zero(cache.enc_out.rows(), cache.enc_out.cols());

  for (int i = cfg.dec_blocks - 1; i >= 0; --i) {
    const DecBlockCache& bc = cache.dec[static_cast<std::size_t>(i)];
    std::string p = "dec.b" + std::to_string(i);
    // x = x_mid2 + ff(ln3(x_mid2))
    Mat dff_in = ff_backward(params, p + ".ff", dx, bc.ff, grads);
    dx += layer_norm_backward(dff_in, bc.ln3);
    // x_mid2 = x_mid1 + cross(ln2(x_mid1), enc_out)
    Mat dq = Mat::Zero(dx.rows(), cfg.width);
    attention_backward(params, p + ".cross", dx, bc.cross, grads, dq, denc_out);
    dx += layer_norm_backward(dq, bc.ln2);
    // x_mid1 = x_in + self(ln1(x_in))
    Mat dq2 = Mat::Zero(dx.rows(), cfg.width);
    Mat dkv2 = Mat::Zero(dx.rows(), cfg.width);
    attention_backward(params, p + ".self", dx, bc.self, grads, dq2, dkv2);
    dx += layer_norm_backward(dq2 + dkv2, bc.ln1);
  }
  // token embeddings + decoder positions
  {
    auto dtok = grads.mat("dec.tok_embed");
    auto dpos = grads.mat("dec.pos");
    for (Eigen::Index j = 0; j < dx.rows(); ++j) {
      dtok.row(cache.ids[static_cast<std::size_t>(j)]) += dx.row(j);
      dpos.row(j) += dx.row(j);
    }
  }

  // Encoder.
  Mat de = layer_norm_backward(denc_out, cache.enc_ln);
  for (int i = cfg.enc_blocks - 1; i >= 0; --i) {
    const EncBlockCache& bc = cache.enc[static_cast<std::size_t>(i)];
    std::string p = "enc.b" + std::to_string(i);
    Mat dff_in = ff_backward(params, p + ".ff", de, bc.ff, grads);
    de += layer_norm_backward(dff_in, bc.ln2);
    Mat dq = Mat::Zero(de.rows(), cfg.width);
    Mat dkv = Mat::Zero(de.rows(), cfg.width);
    attention_backward(params, p + ".attn", de, bc.attn, grads, dq, dkv);
    de += layer_norm_backward(dq + dkv, bc.ln1);
  }
  grads.mat("enc.pos") += de;
  grads.mat("enc.patch_embed.w") += cache.patches.transpose() * de;
  grads.vec("enc.patch_embed.b") += de.colwise().sum().transpose();
}

}  // namespace detail

// --------------------------------------------------------------------------
// Public model operations
// --------------------------------------------------------------------------

/// Next-token distribution after consuming the whole prefix.
inline std::vector<double> forward(const ModelParams& params,
                                   const ImageTensor& image,
                                   std::span<const TokenId> prefix) {
  if (static_cast<int>(prefix.size()) >= params.config.max_seq_len)
    throw std::invalid_argument("forward: prefix must be shorter than max_seq_len");
  detail::ForwardCache cache;
  Mat probs = detail::forward_all(params, image, prefix, cache);
  Eigen::Index last = probs.rows() - 1;
  return std::vector<double>(probs.row(last).begin(), probs.row(last).end());
}

/// Per-sequence distributions for every position j >= 1 (teacher forcing),
/// in the layout weighted_nll expects.
inline std::vector<std::vector<double>> forward_teacher(
    const ModelParams& params, const ImageTensor& image, const TokenSequence& seq) {
  detail::ForwardCache cache;
  Mat probs = detail::forward_all(params, image, seq.ids, cache);
  std::vector<std::vector<double>> out;
  for (Eigen::Index j = 0; j + 1 < probs.rows(); ++j) {
    out.emplace_back(probs.row(j).begin(), probs.row(j).end());
  }
  return out;
}

namespace detail {

/// Batch loss (gradient_weight * mean weighted nll) and, optionally, its
/// gradient.
inline double batch_loss(const ModelParams& params, const TrainingBatch& batch,
                         GradBuffer* grads) {
  if (batch.examples.empty())
    throw std::invalid_argument("batch_loss: empty batch");
  double total = 0.0;
  double scale = batch.gradient_weight / static_cast<double>(batch.examples.size());
  for (const TrainExample& ex : batch.examples) {
    if (ex.seq.ids.size() != ex.seq.weights.size())
      throw std::invalid_argument("batch_loss: ids/weights mismatch");
    ForwardCache cache;
    Mat probs = forward_all(params, ex.image, ex.seq.ids, cache);
    double nll = 0.0;
    Mat dlogits;
    if (grads) dlogits = Mat::Zero(probs.rows(), probs.cols());
    for (std::size_t j = 1; j < ex.seq.ids.size(); ++j) {
      double w = ex.seq.weights[j];
      if (w == 0.0) continue;
      Eigen::Index row = static_cast<Eigen::Index>(j - 1);
      TokenId target = ex.seq.ids[j];
      double p = probs(row, target);
      if (!(p > 0.0))
        throw std::domain_error("batch_loss: zero probability at weighted target");
      nll -= w * std::log(p);
      if (grads) {
        dlogits.row(row) += (w * scale) * probs.row(row);
        dlogits(row, target) -= w * scale;
      }
    }
    total += nll;
    if (grads && batch.gradient_weight != 0.0) {
      backward_all(params, cache, dlogits, *grads);
    }
  }
  return scale * total;
}

}  // namespace detail

/// One plain gradient-descent step on a batch; returns the pre-update loss.
inline double train_step(ModelParams& params, const TrainingBatch& batch,
                         double lr) {
  GradBuffer grads(params);
  double loss = detail::batch_loss(params, batch, &grads);
  for (double g : grads.values) {
    if (!std::isfinite(g)) throw std::runtime_error("train_step: non-finite gradient");
  }
  if (lr != 0.0) {
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      params.values[i] -= lr * grads.values[i];
    }
  }
  return loss;
}

/// Analytic gradient vs central finite differences (step h), component-wise;
/// returns the maximum relative error. Intended for tiny configurations.
inline double check_gradients(const ModelParams& params, const TrainingBatch& batch,
                              double h = 1e-5) {
  GradBuffer grads(params);
  detail::batch_loss(params, batch, &grads);
  ModelParams probe = params;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    double saved = probe.values[i];
    probe.values[i] = saved + h;
    double up = detail::batch_loss(probe, batch, nullptr);
    probe.values[i] = saved - h;
    double down = detail::batch_loss(probe, batch, nullptr);
    probe.values[i] = saved;
    double fd = (up - down) / (2.0 * h);
    double a = grads.values[i];
    double rel = std::abs(a - fd) / std::max({1e-4, std::abs(a), std::abs(fd)});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

/// Mean unscaled weighted-nll over examples; used for evaluation curves.
inline double mean_loss(const ModelParams& params,
                        std::span<const TrainExample> examples) {
  if (examples.empty()) throw std::invalid_argument("mean_loss: no examples");
  TrainingBatch batch;
  batch.gradient_weight = 1.0;
  batch.examples.assign(examples.begin(), examples.end());
  return detail::batch_loss(params, batch, nullptr);
}

enum class OptimizerKind { Sgd, Momentum, Adam };

struct TrainOptions {
  double lr = 0.01;
  OptimizerKind optimizer = OptimizerKind::Momentum;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
};

/// Owns the parameters plus optimizer state for a training run.
class Trainer {
 public:
  Trainer(ModelParams params, TrainOptions opt)
      : params_(std::move(params)), opt_(opt) {}

  double step(const TrainingBatch& batch) {
    GradBuffer grads(params_);
    double loss = detail::batch_loss(params_, batch, &grads);
    double norm = 0.0;
    for (double g : grads.values) {
      if (!std::isfinite(g))
        throw std::runtime_error("trainer: non-finite gradient");
      norm += g * g;
    }
    norm = std::sqrt(norm);
    double rescale = 1.0;
    if (opt_.clip_norm > 0.0 && norm > opt_.clip_norm) {
      rescale = opt_.clip_norm / norm;
    }
    ++t_;
    switch (opt_.optimizer) {
      case OptimizerKind::Sgd:
        for (std::size_t i = 0; i < params_.values.size(); ++i) {
          params_.values[i] -= opt_.lr * rescale * grads.values[i];
        }
        break;
      case OptimizerKind::Momentum: {
        if (velocity_.empty()) velocity_.assign(params_.values.size(), 0.0);
        for (std::size_t i = 0; i < params_.values.size(); ++i) {
          velocity_[i] =
              opt_.momentum * velocity_[i] - opt_.lr * rescale * grads.values[i];
          params_.values[i] += velocity_[i];
        }
        break;
      }
      case OptimizerKind::Adam: {
        if (m_.empty()) {
          m_.assign(params_.values.size(), 0.0);
          v_.assign(params_.values.size(), 0.0);
        }
        double b1t = 1.0 - std::pow(opt_.adam_beta1, t_);
        double b2t = 1.0 - std::pow(opt_.adam_beta2, t_);
        for (std::size_t i = 0; i < params_.values.size(); ++i) {
          double g = rescale * grads.values[i];
          m_[i] = opt_.adam_beta1 * m_[i] + (1.0 - opt_.adam_beta1) * g;
          v_[i] = opt_.adam_beta2 * v_[i] + (1.0 - opt_.adam_beta2) * g * g;
          params_.values[i] -=
              opt_.lr * (m_[i] / b1t) / (std::sqrt(v_[i] / b2t) + opt_.adam_eps);
        }
        break;
      }
    }
    return loss;
  }

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

 private:
  ModelParams params_;
  TrainOptions opt_;
  std::vector<double> velocity_, m_, v_;
  long t_ = 0;
};

/// Estimator view over trained parameters; safe for concurrent readers.
class TransformerEstimator : public NextTokenEstimator {
 public:
  explicit TransformerEstimator(const ModelParams& params) : params_(&params) {}

  std::vector<double> next(const ImageTensor& image, Task,
                           std::span<const TokenId> prefix) const override {
    return forward(*params_, image, prefix);
  }

 private:
  const ModelParams* params_;
};

// --------------------------------------------------------------------------
// Checkpoint format: text header (config + shape manifest with offsets)
// followed by the raw little-endian float32 parameter payload.
// --------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

inline std::string save_checkpoint(const ModelParams& params) {
  std::ostringstream out;
  const ModelConfig& c = params.config;
  out << "seqvis-checkpoint 1\n";
  out << "config image_size=" << c.image_size << " patch_size=" << c.patch_size
      << " channels=" << c.channels << " width=" << c.width << " heads=" << c.heads
      << " enc_blocks=" << c.enc_blocks << " dec_blocks=" << c.dec_blocks
      << " ff_mult=" << c.ff_mult << " vocab_size=" << c.vocab_size
      << " max_seq_len=" << c.max_seq_len << "\n";
  out << "tensors " << params.manifest.size() << "\n";
  for (const ParamInfo& pi : params.manifest) {
    out << pi.name << " ";
    for (std::size_t i = 0; i < pi.dims.size(); ++i) {
      out << (i ? "," : "") << pi.dims[i];
    }
    out << " " << pi.offset << "\n";
  }
  out << "payload float32 " << params.values.size() << "\n";
  std::vector<float> payload(params.values.begin(), params.values.end());
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  return out.str();
}

inline ModelParams load_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "seqvis-checkpoint" || version != 1)
    throw std::runtime_error("checkpoint: unrecognized header");
  std::string word;
  in >> word;
  if (word != "config") throw std::runtime_error("checkpoint: missing config");
  ModelConfig cfg;
  std::string line;
  std::getline(in, line);
  std::istringstream cl(line);
  std::map<std::string, int> kv;
  while (cl >> word) {
    std::size_t eq = word.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("checkpoint: malformed config entry " + word);
    kv[word.substr(0, eq)] = std::stoi(word.substr(eq + 1));
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end())
      throw std::runtime_error("checkpoint: config missing " + key);
    return it->second;
  };
  cfg.image_size = need("image_size");
  cfg.patch_size = need("patch_size");
  cfg.channels = need("channels");
  cfg.width = need("width");
  cfg.heads = need("heads");
  cfg.enc_blocks = need("enc_blocks");
  cfg.dec_blocks = need("dec_blocks");
  cfg.ff_mult = need("ff_mult");
  cfg.vocab_size = need("vocab_size");
  cfg.max_seq_len = need("max_seq_len");

  std::size_t tensor_count = 0;
  in >> word >> tensor_count;
  if (word != "tensors") throw std::runtime_error("checkpoint: missing tensor table");
  ModelParams params;
  params.config = cfg;
  for (std::size_t i = 0; i < tensor_count; ++i) {
    ParamInfo pi;
    std::string dims;
    in >> pi.name >> dims >> pi.offset;
    std::istringstream ds(dims);
    std::string tok;
    while (std::getline(ds, tok, ',')) pi.dims.push_back(std::stoi(tok));
    params.manifest.push_back(std::move(pi));
  }
  std::size_t value_count = 0;
  std::string dtype;
  in >> word >> dtype >> value_count;
  if (word != "payload" || dtype != "float32")
    throw std::runtime_error("checkpoint: missing float32 payload");
  in.get();  // newline before the binary payload
  std::vector<float> payload(value_count);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(value_count * sizeof(float)));
  if (!in) throw std::runtime_error("checkpoint: truncated payload");
  params.values.assign(payload.begin(), payload.end());
  params.rebuild_index();
  // Sanity: manifest must tile the payload exactly.
  std::size_t total = 0;
  for (const ParamInfo& pi : params.manifest) total += pi.count();
  if (total != params.values.size())
    throw std::runtime_error("checkpoint: manifest does not match payload size");
  return params;
}

}  // namespace seqvis
