#ifndef CAD_MODEL_HPP
#define CAD_MODEL_HPP

// Dual-path detector.
//
// Shared path: frozen video and audio tokens attend to each other (video
// queries over audio keys and the reverse); a KL term pulls the two attended
// summaries together. Specific path: trainable video and audio encoders,
// pooled over time, distilled into each other with a negative-cosine loss
// whose target side is detached. The pooled outputs of both paths are
// concatenated into a 4d embedding and classified by a small MLP head.
//
// Shared tokens are centred over time per clip before alignment, so the
// pooled shared summary carries cross-modal co-variation rather than static
// appearance. Position codes enter the attention logits only; keeping them out
// of the values stops the feed-forward layers from keying on absolute time.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cad/autodiff.hpp"
#include "cad/encoders.hpp"
#include "cad/params.hpp"

namespace cad::model {

using ad::Tape;
using ad::Var;
using enc::ClipInputs;

// ---------------------------------------------------------------------------
// Configuration

struct AblationFlags {
  bool no_alignment = false;
  bool no_cross_attention = false;
  bool no_frozen = false;
  bool no_distillation = false;
  bool kd_as_kl = false;
  bool video_only = false;

  static const std::vector<std::string>& names() {
    static const std::vector<std::string> n{"no_alignment", "no_cross_attention", "no_frozen",
                                            "no_distillation", "kd_as_kl", "video_only"};
    return n;
  }

  bool& flag(const std::string& name) {
    if (name == "no_alignment") return no_alignment;
    if (name == "no_cross_attention") return no_cross_attention;
    if (name == "no_frozen") return no_frozen;
    if (name == "no_distillation") return no_distillation;
    if (name == "kd_as_kl") return kd_as_kl;
    if (name == "video_only") return video_only;
    throw ArgumentError("unknown ablation flag '" + name + "'");
  }
  bool get(const std::string& name) const { return const_cast<AblationFlags*>(this)->flag(name); }

  static AblationFlags from_names(const std::vector<std::string>& list) {
    AblationFlags f;
    for (const auto& n : list) f.flag(n) = true;
    f.validate();
    return f;
  }

  std::vector<std::string> active() const {
    std::vector<std::string> out;
    for (const auto& n : names())
      if (get(n)) out.push_back(n);
    return out;
  }

  std::string label() const {
    const auto a = active();
    if (a.empty()) return "full";
    std::string s;
    for (const auto& n : a) s += (s.empty() ? "" : "+") + n;
    return s;
  }

  /// video_only removes the audio branch, so every audio-dependent flag contradicts it.
  void validate() const {
    if (video_only) {
      for (const char* n : {"no_alignment", "no_cross_attention", "no_distillation", "kd_as_kl"})
        if (get(n)) throw ArgumentError(std::string("ablation flags video_only and ") + n + " contradict");
    }
    if (kd_as_kl && no_distillation) throw ArgumentError("ablation flags kd_as_kl and no_distillation contradict");
  }
};

enum class KlAxis { Feature, Token };
enum class KlPooling { Pooled, TokenAveraged };

struct LossConfig {
  double lambda_kl = 1.0;
  double lambda_kd = 1.0;
  KlAxis kl_axis = KlAxis::Feature;
  KlPooling kl_pooling = KlPooling::Pooled;
  bool symmetric_kl = false;
  bool use_predictor = true;
};

struct ModelConfig {
  enc::EncoderConfig encoder;
  enc::LoraConfig lora;
  std::size_t ffn_hidden = 64;
  std::size_t projector_hidden = 64;
  std::size_t head_hidden = 32;
  double position_scale = 1.0;
  bool center_shared_tokens = true;
  bool positions_in_values = false;  // true: codes added to tokens before attention
  LossConfig loss;
  AblationFlags flags;
  std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// Building blocks with value-level entry points

struct AttentionResult {
  Var output;   // T x d
  Var weights;  // T x T, rows sum to 1
};

/// weights = softmax(Q K^T / sqrt(d_k)), output = weights V with Q = q Wq^T,
/// K = key Wk^T, V = value Wv^T. `scaled` = false drops the 1/sqrt(d_k) factor.
inline AttentionResult cross_attention(Var query, Var key, Var value, Var wq, Var wk, Var wv, bool scaled = true) {
  if (query.rows() != key.rows() || query.cols() != key.cols() || key.rows() != value.rows() ||
      key.cols() != value.cols())
    throw ArgumentError("cross_attention: query and key/value sequences differ in shape");
  Var q = ad::matmul_nt(query, wq), k = ad::matmul_nt(key, wk), v = ad::matmul_nt(value, wv);
  Var logits = ad::matmul_nt(q, k);
  if (scaled) logits = ad::scale(logits, 1.0 / std::sqrt(double(q.cols())));
  Var w = ad::softmax_rows(logits);
  return {ad::matmul(w, v), w};
}

inline AttentionResult cross_attention(Var query, Var kv, Var wq, Var wk, Var wv, bool scaled = true) {
  return cross_attention(query, kv, kv, wq, wk, wv, scaled);
}

/// Value-level attention with explicit projections.
inline std::pair<Mat, Mat> cross_attention_values(const Mat& query, const Mat& kv, const Mat& wq, const Mat& wk,
                                                  const Mat& wv, bool scaled = true) {
  Tape t;
  auto r = cross_attention(t.constant(query), t.constant(kv), t.constant(wq), t.constant(wk), t.constant(wv), scaled);
  return {r.output.value(), r.weights.value()};
}

/// KL(P || Q) with P from the video-to-audio stream and Q from the reverse.
/// Feature axis: softmax over features of each token (pooled: of the token
/// mean). Token axis: softmax over tokens of each feature (pooled: of the
/// feature mean).
inline Var alignment_kl(Var x_v2a, Var x_a2v, const LossConfig& cfg) {
  if (x_v2a.rows() != x_a2v.rows() || x_v2a.cols() != x_a2v.cols())
    throw ArgumentError("alignment_kl_loss: input shapes differ");
  auto one_way = [&](Var p, Var q) {
    if (cfg.kl_axis == KlAxis::Feature) {
      if (cfg.kl_pooling == KlPooling::Pooled) return ad::kl_softmax_rows(ad::mean_rows(p), ad::mean_rows(q));
      return ad::scale(ad::kl_softmax_rows(p, q), 1.0 / double(p.rows()));
    }
    if (cfg.kl_pooling == KlPooling::Pooled)
      return ad::kl_softmax_rows(ad::transpose(ad::mean_cols(p)), ad::transpose(ad::mean_cols(q)));
    return ad::scale(ad::kl_softmax_rows(ad::transpose(p), ad::transpose(q)), 1.0 / double(p.cols()));
  };
  Var l = one_way(x_v2a, x_a2v);
  if (cfg.symmetric_kl) l = ad::scale(ad::add(l, one_way(x_a2v, x_v2a)), 0.5);
  return l;
}

inline double alignment_kl_loss(const Mat& x_v2a, const Mat& x_a2v, const LossConfig& cfg = {}) {
  Tape t;
  return alignment_kl(t.constant(x_v2a), t.constant(x_a2v), cfg).scalar();
}

/// Mean of -cos(online_v, sg(target_a)) and -cos(online_a, sg(target_v)).
inline Var distillation(Var online_v, Var target_a, Var online_a, Var target_v) {
  Var d1 = ad::scale(ad::sum(ad::mul(ad::l2_normalize_rows(online_v, "video online vector"),
                                     ad::l2_normalize_rows(ad::stop_gradient(target_a), "audio target vector"))),
                     -1.0);
  Var d2 = ad::scale(ad::sum(ad::mul(ad::l2_normalize_rows(online_a, "audio online vector"),
                                     ad::l2_normalize_rows(ad::stop_gradient(target_v), "video target vector"))),
                     -1.0);
  return ad::scale(ad::add(d1, d2), 0.5);
}

/// Distillation loss on plain vectors: (-cos(x_v, z_a) - cos(x_a, z_v)) / 2.
inline double simsiam_distillation_loss(const Mat& x_v_u, const Mat& z_a_u, const Mat& x_a_u, const Mat& z_v_u) {
  Tape t;
  return distillation(t.constant(x_v_u), t.constant(z_a_u), t.constant(x_a_u), t.constant(z_v_u)).scalar();
}

/// Circular sinusoidal position codes, T x d; their mean over tokens is zero.
inline Mat position_codes(std::size_t T, std::size_t d, double scale) {
  Mat pe = Mat::Zero(Eigen::Index(T), Eigen::Index(d));
  const std::size_t freqs = std::max<std::size_t>(1, T / 2);
  for (std::size_t i = 0; 2 * i < d; ++i) {
    const double f = double(i % freqs + 1);
    for (std::size_t t = 0; t < T; ++t) {
      const double ph = 2.0 * std::numbers::pi * f * double(t) / double(T);
      pe(Eigen::Index(t), Eigen::Index(2 * i)) = scale * std::sin(ph);
      if (2 * i + 1 < d) pe(Eigen::Index(t), Eigen::Index(2 * i + 1)) = scale * std::cos(ph);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Model

struct LossBundle {
  double l_cls = 0, l_kl = 0, l_kd = 0;
  double lambda_kl = 1, lambda_kd = 1;
  double total = 0;
};

/// Per-clip inputs plus the outputs of frozen stages.
struct ClipCache {
  ClipInputs inputs;
  Mat shared_video;      // valid when has_frozen
  Mat shared_audio_h1;   // valid when has_frozen
  bool has_frozen = false;
  double label = 0.0;    // 1 for fake
};

/// The same clip rotated forward in time by `k` frames, in both streams.
inline ClipCache roll_frames(const ClipCache& c, std::size_t k) {
  ClipCache out = c;
  const auto T = Eigen::Index(c.inputs.frames);
  auto roll = [&](const Mat& x, Mat& y) {
    if (x.rows() == 0) return;
    const Eigen::Index per = x.rows() / T, shift = Eigen::Index(k % c.inputs.frames) * per;
    for (Eigen::Index i = 0; i < x.rows(); ++i) y.row((i + shift) % x.rows()) = x.row(i);
  };
  roll(c.inputs.patches, out.inputs.patches);
  roll(c.inputs.residual_patches, out.inputs.residual_patches);
  roll(c.inputs.audio_features, out.inputs.audio_features);
  roll(c.shared_video, out.shared_video);
  roll(c.shared_audio_h1, out.shared_audio_h1);
  return out;
}

struct ForwardResult {
  Var logit;
  Var embedding;  // 1 x 4d (1 x 2d for video_only)
  Var l_kl, l_kd;
  bool has_kl = false, has_kd = false;
  Mat attention_v2a, attention_a2v;  // T x T
  Mat x_v2a, x_a2v;                  // T x d
};

class CadModel {
 public:
  explicit CadModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.flags.validate();
    cfg_.encoder.validate();
    std::mt19937_64 rng(cfg_.seed);
    enc::register_encoder_params(store_, cfg_.encoder, cfg_.lora, rng);
    const auto d = Eigen::Index(cfg_.encoder.d);
    for (const char* dir : {"align.v2a", "align.a2v"}) {
      const std::string p(dir);
      for (const char* w : {".wq", ".wk", ".wv"})
        store_.add(p + w, Mat::Identity(d, d) + random_normal(rng, d, d, 0.02), Role::Trainable);
      const auto h = Eigen::Index(cfg_.ffn_hidden);
      store_.add(p + ".ffn_w1", fan_in_init(rng, h, d), Role::Trainable);
      store_.add(p + ".ffn_b1", Mat::Zero(1, h), Role::Trainable);
      store_.add(p + ".ffn_w2", fan_in_init(rng, d, h) * 0.5, Role::Trainable);
      store_.add(p + ".ffn_b2", Mat::Zero(1, d), Role::Trainable);
    }
    const auto ph = Eigen::Index(cfg_.projector_hidden);
    for (const char* m : {"v", "a"})
      for (const char* stage : {"proj", "pred"}) {
        const std::string p = std::string("kd.") + stage + "_" + m;
        store_.add(p + ".w1", fan_in_init(rng, ph, d), Role::Trainable);
        store_.add(p + ".b1", Mat::Zero(1, ph), Role::Trainable);
        store_.add(p + ".w2", fan_in_init(rng, d, ph), Role::Trainable);
        store_.add(p + ".b2", Mat::Zero(1, d), Role::Trainable);
      }
    const auto e = Eigen::Index(embedding_dim()), hh = Eigen::Index(cfg_.head_hidden);
    store_.add("head.w1", fan_in_init(rng, hh, e), Role::Trainable);
    store_.add("head.b1", Mat::Zero(1, hh), Role::Trainable);
    store_.add("head.w2", fan_in_init(rng, 1, hh), Role::Trainable);
    store_.add("head.b2", Mat::Zero(1, 1), Role::Trainable);
    if (cfg_.flags.no_frozen)
      for (Parameter* p : store_.all())
        if (p->role == Role::Frozen) p->trainable = true;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  std::size_t embedding_dim() const { return (cfg_.flags.video_only ? 2 : 4) * cfg_.encoder.d; }

  /// Front-ends plus every stage that no trainable parameter feeds.
  ClipCache prepare(const synth::MediaClip& clip) {
    ClipCache c;
    c.inputs = enc::prepare_inputs(clip, cfg_.encoder);
    c.label = clip.label.is_fake ? 1.0 : 0.0;
    if (!cfg_.flags.no_frozen) {
      Tape t;
      c.shared_video = enc::shared_video(t, store_, c.inputs, cfg_.encoder).value();
      if (!cfg_.lora.adapts("w1")) c.shared_audio_h1 = enc::shared_audio_layer1(t, store_, c.inputs, cfg_.lora).value();
      c.has_frozen = true;
    }
    return c;
  }

  ForwardResult forward(Tape& t, const ClipCache& c) {
    const auto& f = cfg_.flags;
    ForwardResult r;
    Var v_shared = c.has_frozen ? t.constant(c.shared_video) : enc::shared_video(t, store_, c.inputs, cfg_.encoder);
    Var v_spec = enc::specific_video(t, store_, c.inputs, cfg_.encoder);
    Var xv_u = ad::mean_rows(v_spec);
    const std::size_t T = c.inputs.frames;

    if (f.video_only) {
      r.embedding = ad::concat_cols({ad::mean_rows(v_shared), xv_u});
      r.logit = head(t, r.embedding);
      return r;
    }

    Var h1 = (c.has_frozen && c.shared_audio_h1.size() > 0) ? t.constant(c.shared_audio_h1)
                                                            : enc::shared_audio_layer1(t, store_, c.inputs, cfg_.lora);
    Var a_shared = enc::shared_audio_from_hidden(t, store_, h1, cfg_.lora);
    Var a_spec = enc::specific_audio(t, store_, c.inputs);
    Var xa_u = ad::mean_rows(a_spec);

    if (cfg_.center_shared_tokens) {
      v_shared = ad::add_row(v_shared, ad::scale(ad::mean_rows(v_shared), -1.0));
      a_shared = ad::add_row(a_shared, ad::scale(ad::mean_rows(a_shared), -1.0));
    }
    Var pe = t.constant(position_codes(T, cfg_.encoder.d, cfg_.position_scale));
    auto [x_v2a, w_v2a] = align(t, "align.v2a", v_shared, a_shared, pe);
    auto [x_a2v, w_a2v] = align(t, "align.a2v", a_shared, v_shared, pe);
    r.attention_v2a = w_v2a;
    r.attention_a2v = w_a2v;
    r.x_v2a = x_v2a.value();
    r.x_a2v = x_a2v.value();

    if (!f.no_alignment) {
      r.l_kl = alignment_kl(x_v2a, x_a2v, cfg_.loss);
      r.has_kl = true;
    }
    if (f.kd_as_kl) {
      r.l_kd = ad::kl_softmax_rows(xv_u, xa_u);
      r.has_kd = true;
    } else if (!f.no_distillation) {
      Var zv = mlp(t, "kd.proj_v", xv_u), za = mlp(t, "kd.proj_a", xa_u);
      Var online_v = cfg_.loss.use_predictor ? mlp(t, "kd.pred_v", zv) : zv;
      Var online_a = cfg_.loss.use_predictor ? mlp(t, "kd.pred_a", za) : za;
      if (target_source_) {
        const auto [zv0, za0] = target_source_->distillation_targets(c);
        r.l_kd = distillation(online_v, t.constant(za0), online_a, t.constant(zv0));
      } else {
        r.l_kd = distillation(online_v, za, online_a, zv);
      }
      r.has_kd = true;
    }

    r.embedding = ad::concat_cols({ad::mean_rows(x_v2a), ad::mean_rows(x_a2v), xv_u, xa_u});
    r.logit = head(t, r.embedding);
    return r;
  }

  /// Per-clip loss terms; `total` is a tape node for backward. `cls_weight`
  /// multiplies the classification term.
  Var clip_loss(Tape& t, const ClipCache& c, LossBundle& out, double cls_weight = 1.0) {
    ForwardResult r = forward(t, c);
    Var total = ad::bce_with_logits(r.logit, c.label);
    if (cls_weight != 1.0) total = ad::scale(total, cls_weight);
    out.l_cls = total.scalar();
    out.lambda_kl = cfg_.loss.lambda_kl;
    out.lambda_kd = cfg_.loss.lambda_kd;
    if (r.has_kl) {
      out.l_kl = r.l_kl.scalar();
      total = ad::add(total, ad::scale(r.l_kl, cfg_.loss.lambda_kl));
    }
    if (r.has_kd) {
      out.l_kd = r.l_kd.scalar();
      total = ad::add(total, ad::scale(r.l_kd, cfg_.loss.lambda_kd));
    }
    out.total = total.scalar();
    return total;
  }

  /// Mean loss over a batch; with `accumulate_grad`, adds d(mean)/d(param)
  /// into the parameter gradients.
  /// `class_weights` = {real, fake} weights on the classification term.
  LossBundle batch_loss(const std::vector<const ClipCache*>& batch, bool accumulate_grad,
                        std::array<double, 2> class_weights = {1.0, 1.0}) {
    if (batch.empty()) throw ArgumentError("total_loss: empty batch");
    LossBundle mean;
    mean.lambda_kl = cfg_.loss.lambda_kl;
    mean.lambda_kd = cfg_.loss.lambda_kd;
    const double w = 1.0 / double(batch.size());
    for (const ClipCache* c : batch) {
      Tape t;
      LossBundle one;
      Var total = clip_loss(t, *c, one, class_weights[c->label > 0.5 ? 1 : 0]);
      if (accumulate_grad) t.backward(total, w);
      mean.l_cls += w * one.l_cls;
      mean.l_kl += w * one.l_kl;
      mean.l_kd += w * one.l_kd;
      mean.total += w * one.total;
    }
    return mean;
  }

  LossBundle total_loss(const std::vector<synth::MediaClip>& clips, bool accumulate_grad = false) {
    if (clips.empty()) throw ArgumentError("total_loss: empty batch");
    std::vector<ClipCache> caches;
    for (const auto& clip : clips) caches.push_back(prepare(clip));
    std::vector<const ClipCache*> ptrs;
    for (const auto& c : caches) ptrs.push_back(&c);
    return batch_loss(ptrs, accumulate_grad);
  }

  /// Target-side projections (z_v, z_a) for one clip.
  std::pair<Mat, Mat> distillation_targets(const ClipCache& c) const {
    auto& self = const_cast<CadModel&>(*this);
    Tape t;
    Var zv = self.mlp(t, "kd.proj_v", ad::mean_rows(enc::specific_video(t, self.store_, c.inputs, cfg_.encoder)));
    Var za = self.mlp(t, "kd.proj_a", ad::mean_rows(enc::specific_audio(t, self.store_, c.inputs)));
    return {zv.value(), za.value()};
  }

  /// Takes distillation targets from `source` instead of this model. The
  /// detached targets then stay fixed while this model's parameters move,
  /// which is the function whose derivative backward computes; used by
  /// finite-difference checks. nullptr restores normal behaviour.
  void pin_distillation_targets(const CadModel* source) { target_source_ = source; }

  double score(const ClipCache& c) {
    Tape t;
    return forward(t, c).logit.scalar();
  }

  Mat embedding(const ClipCache& c) {
    Tape t;
    return forward(t, c).embedding.value();
  }

  /// Filter energy of each specific-video patch: T x patches_per_frame.
  Mat specific_video_energy(const ClipCache& c) {
    const Mat z = (c.inputs.residual_patches * store_.get("specific_video.patch_w").value.transpose()).rowwise() +
                  store_.get("specific_video.patch_b").value.row(0);
    const auto P = Eigen::Index(cfg_.encoder.patches_per_frame());
    Mat out(Eigen::Index(c.inputs.frames), P);
    for (Eigen::Index i = 0; i < z.rows(); ++i) out(i / P, i % P) = z.row(i).squaredNorm();
    return out;
  }

 private:
  Var p(Tape& t, const std::string& name) { return t.param(store_.get(name)); }

  Var mlp(Tape& t, const std::string& prefix, Var x) {
    Var h = ad::gelu(ad::linear(x, p(t, prefix + ".w1"), p(t, prefix + ".b1")));
    return ad::linear(h, p(t, prefix + ".w2"), p(t, prefix + ".b2"));
  }

  Var head(Tape& t, Var e) { return mlp(t, "head", e); }

  /// Attention sublayer (skipped under no_cross_attention) then a residual
  /// feed-forward sublayer. `pe` joins queries and keys; with
  /// positions_in_values it also joins values and the residual stream.
  std::pair<Var, Mat> align(Tape& t, const std::string& prefix, Var query, Var kv, Var pe) {
    if (cfg_.positions_in_values) {
      query = ad::add(query, pe);
      kv = ad::add(kv, pe);
    }
    Var h = query;
    Mat weights;
    if (cfg_.flags.no_cross_attention) {
      weights = Mat::Identity(query.rows(), query.rows());
    } else {
      Var qk_query = cfg_.positions_in_values ? query : ad::add(query, pe);
      Var qk_key = cfg_.positions_in_values ? kv : ad::add(kv, pe);
      auto att = cross_attention(qk_query, qk_key, kv, p(t, prefix + ".wq"), p(t, prefix + ".wk"), p(t, prefix + ".wv"));
      h = ad::add(query, att.output);
      weights = att.weights.value();
    }
    Var inner = ad::gelu(ad::linear(h, p(t, prefix + ".ffn_w1"), p(t, prefix + ".ffn_b1")));
    Var ffn = ad::linear(inner, p(t, prefix + ".ffn_w2"), p(t, prefix + ".ffn_b2"));
    return {ad::add(h, ffn), weights};
  }

  ModelConfig cfg_;
  ParamStore store_;
  const CadModel* target_source_ = nullptr;
};

}  // namespace cad::model

#endif  // CAD_MODEL_HPP
