#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tlf/checkpoint.hpp"
#include "tlf/config.hpp"
#include "tlf/nn.hpp"
#include "tlf/ops.hpp"

namespace tlf {

// Segment head: the representation is upsampled to frame resolution and
// turned into a per-pixel class distribution.
inline Tensor segment_head(const Tensor& repr, int factor) {
  return softmax_axis(bilinear_upsample(repr, factor), -1);
}

// ---------------------------------------------------------------------------
// Encoder: stride-2 residual blocks down to the representation extent, a
// dilated block at full depth, then a 1x1 projection to class channels.
// ---------------------------------------------------------------------------

class Encoder {
 public:
  Encoder(const ModelConfig& cfg, Rng& rng) : factor_(cfg.downsample_factor()) {
    const int s2 = cfg.stride2_blocks();
    int cin = 3;
    for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
      const int cout = cfg.encoder_channels[i];
      const bool dilated = static_cast<int>(i) == s2;
      Conv2dSpec spec;
      spec.stride = dilated ? 1 : 2;
      spec.dilation = dilated ? cfg.dilation : 1;
      Block b;
      b.conv = Conv2dLayer::make(3, cin, cout, /*with_bias=*/false, spec, rng);
      b.bn = BatchNormLayer::make(cout);
      if (spec.stride != 1 || cin != cout) {
        Conv2dSpec ps;
        ps.stride = spec.stride;
        b.proj = Conv2dLayer::make(1, cin, cout, /*with_bias=*/false, ps, rng);
      }
      blocks_.push_back(std::move(b));
      cin = cout;
    }
    to_repr_ = Conv2dLayer::make(1, cin, cfg.classes, /*with_bias=*/true, Conv2dSpec{}, rng);
  }

  // frames: [B,H,W,3] with H = W divisible by the downsample factor.
  Tensor forward(const Tensor& frames, Mode mode) const {
    const Shape& s = frames.shape();
    if (s.size() != 4 || s[3] != 3)
      throw std::invalid_argument("encoder: input must be [B,H,W,3]");
    if (s[1] % factor_ != 0 || s[2] % factor_ != 0)
      throw std::invalid_argument("encoder: frame extent not divisible by the downsample factor");
    Tensor x = frames;
    for (const auto& b : blocks_) {
      Tensor main = b.bn.forward(b.conv.forward(x), mode);
      Tensor shortcut = b.proj ? b.proj->forward(x) : x;
      x = relu(add(main, shortcut));
    }
    return to_repr_.forward(x);
  }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string bp = prefix + ".b" + std::to_string(i);
      blocks_[i].conv.register_into(reg, bp + ".conv", trainable);
      blocks_[i].bn.register_into(reg, bp + ".bn", trainable);
      if (blocks_[i].proj) blocks_[i].proj->register_into(reg, bp + ".proj", trainable);
    }
    to_repr_.register_into(reg, prefix + ".out", trainable);
  }

 private:
  struct Block {
    Conv2dLayer conv;
    BatchNormLayer bn;
    std::optional<Conv2dLayer> proj;
  };
  std::vector<Block> blocks_;
  Conv2dLayer to_repr_;
  int factor_;
};

// ---------------------------------------------------------------------------
// Measure head: two valid 3x3 conv blocks, flatten, dropout, dense to one
// unit. The affine final stage makes per-location contributions exact.
// ---------------------------------------------------------------------------

class MeasureHead {
 public:
  MeasureHead(const ModelConfig& cfg, Rng& rng)
      : repr_size_(cfg.repr_size), channels_(cfg.classes), filters_(cfg.measure_filters) {
    if (cfg.repr_size < 5)
      throw std::invalid_argument("measure head: repr_size must be >= 5 for two valid 3x3 convs");
    Conv2dSpec valid;
    valid.padding = Padding::Valid;
    conv1_ = Conv2dLayer::make(3, channels_, filters_, /*with_bias=*/true, valid, rng);
    bn1_ = BatchNormLayer::make(filters_);
    conv2_ = Conv2dLayer::make(3, filters_, filters_, /*with_bias=*/true, valid, rng);
    bn2_ = BatchNormLayer::make(filters_);
    feat_extent_ = repr_size_ - 4;
    flat_ = feat_extent_ * feat_extent_ * filters_;
    out_ = DenseLayer::make(flat_, 1, rng);
  }

  struct Out {
    Tensor r;         // [B,1]
    Tensor features;  // [B,h'',w'',F], pre-aggregation map
  };

  Out forward(const Tensor& repr, Mode mode, Rng& rng) const {
    const Shape& s = repr.shape();
    if (s.size() != 4 || s[1] != repr_size_ || s[2] != repr_size_ || s[3] != channels_)
      throw std::invalid_argument("measure head: unexpected representation shape " + shape_str(s));
    Tensor f1 = relu(bn1_.forward(conv1_.forward(repr), mode));
    Tensor f2 = relu(bn2_.forward(conv2_.forward(f1), mode));
    Tensor flat = reshape(f2, {s[0], flat_});
    Tensor dropped = dropout(flat, 0.5, mode, rng);
    return {out_.forward(dropped), f2};
  }

  struct Contribution {
    Tensor map;    // [h'',w''], per-location share of the measure
    double total;  // the measure itself
    double bias;
  };

  // Per-location partial measures for one representation [h,w,c]; the final
  // stage is affine, so sum(map) + bias reproduces the measure exactly.
  Contribution contribution_map(const Tensor& repr, Mode mode = Mode::Infer) const {
    if (mode == Mode::Train)
      throw std::invalid_argument("contribution map requires infer mode (dropout off)");
    NoGradScope ng;
    Rng unused(0);
    Tensor batched = reshape(repr, {1, repr_size_, repr_size_, channels_});
    Out out = forward(batched, Mode::Infer, unused);
    const double* feat = out.features.data();
    const double* w = out_.weight.data();
    std::vector<double> map(static_cast<std::size_t>(feat_extent_) * feat_extent_, 0.0);
    for (int i = 0; i < feat_extent_; ++i)
      for (int j = 0; j < feat_extent_; ++j) {
        double acc = 0.0;
        const std::size_t base = (static_cast<std::size_t>(i) * feat_extent_ + j) * filters_;
        for (int ch = 0; ch < filters_; ++ch) acc += w[base + ch] * feat[base + ch];
        map[static_cast<std::size_t>(i) * feat_extent_ + j] = acc;
      }
    return {Tensor::leaf({feat_extent_, feat_extent_}, std::move(map), false), out.r.item(),
            out_.bias.data()[0]};
  }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) {
    conv1_.register_into(reg, prefix + ".conv1", trainable);
    bn1_.register_into(reg, prefix + ".bn1", trainable);
    conv2_.register_into(reg, prefix + ".conv2", trainable);
    bn2_.register_into(reg, prefix + ".bn2", trainable);
    out_.register_into(reg, prefix + ".dense", trainable);
  }

  const DenseLayer& dense() const { return out_; }
  int feat_extent() const { return feat_extent_; }

 private:
  int repr_size_, channels_, filters_, feat_extent_ = 0, flat_ = 0;
  Conv2dLayer conv1_, conv2_;
  BatchNormLayer bn1_, bn2_;
  DenseLayer out_;
};

// ---------------------------------------------------------------------------
// Attention over the look-back period
// ---------------------------------------------------------------------------

struct AttentionOut {
  std::vector<Tensor> attended;  // same shapes as the inputs
  Tensor weights;                // spatial: [B,h,w,t]; mean: [B,t]
};

// Spatial attention: per-pixel softmax weights over the look-back steps,
// derived from the cloud channel (or every channel, for ablation), replicated
// across class channels by broadcast multiplication.
class SpatialAttention {
 public:
  SpatialAttention(const ModelConfig& cfg, Rng& rng)
      : variant_(cfg.attention),
        look_back_(cfg.look_back),
        cloud_(cfg.cloud_class),
        all_channels_(cfg.attention_all_channels) {
    const int per_step = all_channels_ ? cfg.classes : 1;
    if (variant_ == AttentionVariant::SpatialConv) {
      conv_ = Conv2dLayer::make(cfg.convlstm_kernel, look_back_ * per_step, cfg.attention_filters,
                                /*with_bias=*/true, Conv2dSpec{}, rng);
    } else if (variant_ == AttentionVariant::SpatialConvLstm) {
      cell_ = ConvLstmCell::make(cfg.convlstm_kernel, per_step, cfg.attention_filters, rng);
    } else {
      throw std::invalid_argument("spatial attention built with a non-spatial variant");
    }
    bn_ = BatchNormLayer::make(cfg.attention_filters);
    proj_ = DenseLayer::make(cfg.attention_filters, look_back_, rng);
  }

  AttentionOut forward(const std::vector<Tensor>& reprs, Mode mode) const {
    if (static_cast<int>(reprs.size()) != look_back_)
      throw std::invalid_argument("attention: expected " + std::to_string(look_back_) +
                                  " representations");
    const Shape& s = reprs[0].shape();
    const int batch = s[0], h = s[1], w = s[2];
    Tensor fmap;
    if (variant_ == AttentionVariant::SpatialConv) {
      Tensor x;
      if (all_channels_) {
        x = concat_last(reprs);
      } else {
        std::vector<Tensor> clouds;
        clouds.reserve(reprs.size());
        for (const auto& r : reprs) clouds.push_back(select_last(r, cloud_));
        x = stack_last(clouds);
      }
      fmap = conv_.forward(x);
    } else {
      auto state = cell_.initial_state(batch, h, w);
      for (const auto& r : reprs) {
        Tensor step = all_channels_ ? r : reshape(select_last(r, cloud_), {batch, h, w, 1});
        auto [out, next] = cell_.forward(step, state);
        fmap = out;
        state = next;
      }
    }
    Tensor logits = proj_.forward(bn_.forward(fmap, mode));  // [B,h,w,t]
    AttentionOut out;
    out.weights = softmax_axis(logits, -1);
    out.attended.reserve(reprs.size());
    for (int j = 0; j < look_back_; ++j)
      out.attended.push_back(mul_bcast_prefix(reprs[j], select_last(out.weights, j)));
    return out;
  }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) {
    if (variant_ == AttentionVariant::SpatialConv)
      conv_.register_into(reg, prefix + ".conv", trainable);
    else
      cell_.register_into(reg, prefix + ".cell", trainable);
    bn_.register_into(reg, prefix + ".bn", trainable);
    proj_.register_into(reg, prefix + ".dense", trainable);
  }

 private:
  AttentionVariant variant_;
  int look_back_, cloud_;
  bool all_channels_;
  Conv2dLayer conv_;
  ConvLstmCell cell_;
  BatchNormLayer bn_;
  DenseLayer proj_;
};

// Mean attention: one scalar weight per look-back step from the spatially
// averaged cloud channel, softmax-normalized.
class MeanAttention {
 public:
  MeanAttention(const ModelConfig& cfg, Rng& rng)
      : look_back_(cfg.look_back), cloud_(cfg.cloud_class) {
    proj_ = DenseLayer::make(look_back_, look_back_, rng);
  }

  AttentionOut forward(const std::vector<Tensor>& reprs, Mode /*mode*/) const {
    if (static_cast<int>(reprs.size()) != look_back_)
      throw std::invalid_argument("attention: expected " + std::to_string(look_back_) +
                                  " representations");
    const Shape& s = reprs[0].shape();
    const int batch = s[0], h = s[1], w = s[2];
    std::vector<Tensor> means;
    means.reserve(reprs.size());
    for (const auto& r : reprs)
      means.push_back(mean_axis(reshape(select_last(r, cloud_), {batch, h * w}), 1));
    Tensor logits = proj_.forward(stack_last(means));  // [B,t]
    AttentionOut out;
    out.weights = softmax_axis(logits, -1);
    out.attended.reserve(reprs.size());
    for (int j = 0; j < look_back_; ++j)
      out.attended.push_back(mul_bcast_prefix(reprs[j], select_last(out.weights, j)));
    return out;
  }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) {
    proj_.register_into(reg, prefix + ".dense", trainable);
  }

 private:
  int look_back_, cloud_;
  DenseLayer proj_;
};

// ---------------------------------------------------------------------------
// Future core: stacked ConvLSTM tiers with batch-time normalization between
// tiers and a shared per-step convolution back to class channels.
// ---------------------------------------------------------------------------

class FutureCore {
 public:
  FutureCore(const ModelConfig& cfg, Rng& rng) {
    int cin = cfg.classes;
    for (int f : cfg.convlstm_filters) {
      tiers_.push_back(ConvLstmCell::make(cfg.convlstm_kernel, cin, f, rng));
      bns_.push_back(BatchNormLayer::make(f));
      cin = f;
    }
    out_conv_ = Conv2dLayer::make(cfg.convlstm_kernel, cin, cfg.classes, /*with_bias=*/true,
                                  Conv2dSpec{}, rng);
  }

  std::vector<Tensor> forward(const std::vector<Tensor>& xs, Mode mode) const {
    if (xs.empty()) throw std::invalid_argument("future core: empty sequence");
    const Shape& s = xs[0].shape();
    const int batch = s[0], h = s[1], w = s[2];
    std::vector<Tensor> seq = xs;
    for (std::size_t ti = 0; ti < tiers_.size(); ++ti) {
      auto state = tiers_[ti].initial_state(batch, h, w);
      std::vector<Tensor> outs;
      outs.reserve(seq.size());
      for (const auto& x : seq) {
        auto [out, next] = tiers_[ti].forward(x, state);
        outs.push_back(out);
        state = next;
      }
      // Normalize over batch x time per channel.
      Tensor normed = bns_[ti].forward(concat0(outs), mode);
      seq.clear();
      for (std::size_t j = 0; j < outs.size(); ++j)
        seq.push_back(slice0(normed, static_cast<int>(j) * batch, batch));
    }
    std::vector<Tensor> out;
    out.reserve(seq.size());
    for (const auto& x : seq) out.push_back(out_conv_.forward(x));
    return out;
  }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) {
    for (std::size_t i = 0; i < tiers_.size(); ++i) {
      tiers_[i].register_into(reg, prefix + ".t" + std::to_string(i), trainable);
      bns_[i].register_into(reg, prefix + ".bn" + std::to_string(i), trainable);
    }
    out_conv_.register_into(reg, prefix + ".out", trainable);
  }

 private:
  std::vector<ConvLstmCell> tiers_;
  std::vector<BatchNormLayer> bns_;
  Conv2dLayer out_conv_;
};

// ---------------------------------------------------------------------------
// Now model
// ---------------------------------------------------------------------------

class NowModel {
 public:
  struct Output {
    Tensor mask_probs;  // [B,H,W,c]
    Tensor r;           // [B,1]
    Tensor repr;        // [B,h',w',c]
  };

  NowModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    encoder_ = std::make_unique<Encoder>(cfg_, rng);
    measure_ = std::make_unique<MeasureHead>(cfg_, rng);
    encoder_->register_into(registry_, "encoder", true);
    measure_->register_into(registry_, "measure", true);
  }

  Output forward(const Tensor& frames, Mode mode, Rng& rng) const {
    Tensor repr = encoder_->forward(frames, mode);
    Tensor mask = segment_head(repr, cfg_.downsample_factor());
    auto m = measure_->forward(repr, mode, rng);
    return {mask, m.r, repr};
  }

  const ModelConfig& config() const { return cfg_; }
  Registry& registry() { return registry_; }
  const Registry& registry() const { return registry_; }
  const Encoder& encoder() const { return *encoder_; }
  const MeasureHead& measure() const { return *measure_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<MeasureHead> measure_;
  Registry registry_;
};

// Single-frame convenience: [H,W,3] in, per-frame outputs out.
struct NowPrediction {
  Tensor mask_probs;  // [H,W,c]
  double r;
  Tensor repr;  // [h',w',c]
};

inline NowPrediction now_predict(const NowModel& model, const Tensor& frame) {
  NoGradScope ng;
  Rng unused(0);
  const Shape& s = frame.shape();
  if (s.size() != 3) throw std::invalid_argument("now_predict: frame must be [H,W,3]");
  Tensor batched = reshape(frame, {1, s[0], s[1], s[2]});
  auto out = model.forward(batched, Mode::Infer, unused);
  const auto& ms = out.mask_probs.shape();
  const auto& rs = out.repr.shape();
  return {reshape(out.mask_probs, {ms[1], ms[2], ms[3]}), out.r.item(),
          reshape(out.repr, {rs[1], rs[2], rs[3]})};
}

// ---------------------------------------------------------------------------
// Future model
// ---------------------------------------------------------------------------

class FutureModel {
 public:
  struct Horizon {
    Tensor mask_probs;  // [B,H,W,c]
    Tensor r;           // [B,1]
    Tensor repr;        // [B,h',w',c]
  };
  struct Output {
    std::vector<Horizon> horizons;  // exactly look_back entries, +1 .. +t
    Tensor attention;               // spatial: [B,h,w,t]; mean: [B,t]; none: uniform [B,h,w,t]
  };

  FutureModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    encoder_ = std::make_unique<Encoder>(cfg_, rng);
    measure_ = std::make_unique<MeasureHead>(cfg_, rng);
    if (cfg_.attention == AttentionVariant::SpatialConv ||
        cfg_.attention == AttentionVariant::SpatialConvLstm)
      spatial_attn_ = std::make_unique<SpatialAttention>(cfg_, rng);
    else if (cfg_.attention == AttentionVariant::Mean)
      mean_attn_ = std::make_unique<MeanAttention>(cfg_, rng);
    core_ = std::make_unique<FutureCore>(cfg_, rng);

    encoder_->register_into(registry_, "encoder", cfg_.encoder_trainable_in_future);
    measure_->register_into(registry_, "measure", true);
    if (spatial_attn_) spatial_attn_->register_into(registry_, "attn", true);
    if (mean_attn_) mean_attn_->register_into(registry_, "attn", true);
    core_->register_into(registry_, "core", true);
  }

  // Per-frame encoding. With a frozen encoder this runs in inference mode and
  // stays off the tape.
  std::vector<Tensor> encode(const std::vector<Tensor>& frames, Mode mode) const {
    std::vector<Tensor> reprs;
    reprs.reserve(frames.size());
    if (cfg_.encoder_trainable_in_future) {
      for (const auto& f : frames) reprs.push_back(encoder_->forward(f, mode));
    } else {
      NoGradScope ng;
      for (const auto& f : frames) reprs.push_back(encoder_->forward(f, Mode::Infer));
    }
    return reprs;
  }

  Output forward_from_reprs(const std::vector<Tensor>& reprs, Mode mode, Rng& rng) const {
    if (static_cast<int>(reprs.size()) != cfg_.look_back)
      throw std::invalid_argument("future model: expected " + std::to_string(cfg_.look_back) +
                                  " representations, got " + std::to_string(reprs.size()));
    AttentionOut att;
    if (spatial_attn_)
      att = spatial_attn_->forward(reprs, mode);
    else if (mean_attn_)
      att = mean_attn_->forward(reprs, mode);
    else {
      att.attended = reprs;
      const Shape& s = reprs[0].shape();
      att.weights = Tensor::full({s[0], s[1], s[2], cfg_.look_back}, 1.0 / cfg_.look_back);
    }
    std::vector<Tensor> predicted = core_->forward(att.attended, mode);
    Output out;
    out.attention = att.weights;
    out.horizons.reserve(predicted.size());
    for (const auto& repr : predicted) {
      Tensor mask = segment_head(repr, cfg_.downsample_factor());
      auto m = measure_->forward(repr, mode, rng);
      out.horizons.push_back({mask, m.r, repr});
    }
    return out;
  }

  Output forward(const std::vector<Tensor>& frames, Mode mode, Rng& rng) const {
    return forward_from_reprs(encode(frames, mode), mode, rng);
  }

  // Copies every overlapping record (encoder, measure head) from a trained
  // now-model checkpoint.
  int init_from_now(const CheckpointMap& now_records) {
    return load_overlapping(registry_, now_records);
  }

  const ModelConfig& config() const { return cfg_; }
  Registry& registry() { return registry_; }
  const Registry& registry() const { return registry_; }
  const MeasureHead& measure() const { return *measure_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<MeasureHead> measure_;
  std::unique_ptr<SpatialAttention> spatial_attn_;
  std::unique_ptr<MeanAttention> mean_attn_;
  std::unique_ptr<FutureCore> core_;
  Registry registry_;
};

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

// Persistence: the now prediction of the last input frame, copied to every
// horizon. Frames are single samples [H,W,3]; the output is batch 1.
inline FutureModel::Output persistence_predict(const NowModel& model,
                                               const std::vector<Tensor>& frames) {
  if (frames.empty()) throw std::invalid_argument("persistence: empty window");
  NoGradScope ng;
  Rng unused(0);
  const Shape& fs = frames.back().shape();
  Tensor batched = reshape(frames.back(), {1, fs[0], fs[1], fs[2]});
  auto now = model.forward(batched, Mode::Infer, unused);
  const int t = model.config().look_back;
  FutureModel::Output out;
  for (int j = 0; j < t; ++j) out.horizons.push_back({now.mask_probs, now.r, now.repr});
  const Shape& rs = now.repr.shape();
  out.attention = Tensor::full({rs[0], rs[1], rs[2], t}, 1.0 / t);
  return out;
}

// Feed-forward next-representation model rolled out autoregressively; its
// own prediction becomes the next input, so errors compound with horizon.
class AutoregressiveBaseline {
 public:
  AutoregressiveBaseline(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    context_ = cfg_.ar_context;
    conv1_ = Conv2dLayer::make(cfg_.convlstm_kernel, context_ * cfg_.classes, cfg_.ar_filters,
                               /*with_bias=*/true, Conv2dSpec{}, rng);
    bn_ = BatchNormLayer::make(cfg_.ar_filters);
    conv2_ = Conv2dLayer::make(cfg_.convlstm_kernel, cfg_.ar_filters, cfg_.classes,
                               /*with_bias=*/true, Conv2dSpec{}, rng);
    conv1_.register_into(registry_, "ar.conv1", true);
    bn_.register_into(registry_, "ar.bn", true);
    conv2_.register_into(registry_, "ar.conv2", true);
  }

  Tensor next_repr(const std::vector<Tensor>& context, Mode mode) const {
    if (static_cast<int>(context.size()) != context_)
      throw std::invalid_argument("autoregressive baseline: window shorter than its context");
    Tensor x = concat_last(context);
    return conv2_.forward(relu(bn_.forward(conv1_.forward(x), mode)));
  }

  std::vector<Tensor> rollout(const std::vector<Tensor>& reprs, int horizons, Mode mode) const {
    return rollout_with(reprs, horizons, context_,
                        [&](const std::vector<Tensor>& ctx) { return next_repr(ctx, mode); });
  }

  // Rollout with a pluggable one-step predictor (the identity function makes
  // this the persistence fixed point).
  static std::vector<Tensor> rollout_with(
      const std::vector<Tensor>& reprs, int horizons, int context,
      const std::function<Tensor(const std::vector<Tensor>&)>& next_fn) {
    if (static_cast<int>(reprs.size()) < context)
      throw std::invalid_argument("autoregressive rollout: window shorter than context");
    std::vector<Tensor> ctx(reprs.end() - context, reprs.end());
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(horizons));
    for (int j = 0; j < horizons; ++j) {
      Tensor next = next_fn(ctx);
      out.push_back(next);
      ctx.erase(ctx.begin());
      ctx.push_back(next);
    }
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  int context() const { return context_; }
  Registry& registry() { return registry_; }

 private:
  ModelConfig cfg_;
  int context_ = 0;
  Conv2dLayer conv1_, conv2_;
  BatchNormLayer bn_;
  Registry registry_;
};

}  // namespace tlf
