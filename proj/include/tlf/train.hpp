#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tlf/losses.hpp"
#include "tlf/metrics.hpp"
#include "tlf/model.hpp"
#include "tlf/optim.hpp"
#include "tlf/skydata.hpp"

namespace tlf {

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

struct FrameRef {
  int seq = 0;
  int frame = 0;
};

struct WindowRef {
  int seq = 0;
  int start = 0;  // first of 2t consecutive frames
};

inline std::vector<FrameRef> all_frames(const std::vector<VideoSequence>& data) {
  std::vector<FrameRef> refs;
  for (std::size_t s = 0; s < data.size(); ++s)
    for (std::size_t f = 0; f < data[s].size(); ++f)
      refs.push_back({static_cast<int>(s), static_cast<int>(f)});
  return refs;
}

inline std::vector<WindowRef> all_windows(const std::vector<VideoSequence>& data, int look_back) {
  const int span = 2 * look_back;
  std::vector<WindowRef> refs;
  for (std::size_t s = 0; s < data.size(); ++s)
    for (int start = 0; start + span <= static_cast<int>(data[s].size()); ++start)
      refs.push_back({static_cast<int>(s), start});
  return refs;
}

// Stacks single-sample tensors [S...] into one batch [B,S...].
inline Tensor stack_batch(const std::vector<const Tensor*>& items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: empty batch");
  const Shape& s = items[0]->shape();
  Shape out_shape = {static_cast<int>(items.size())};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(items.size()) * items[0]->size());
  for (const Tensor* t : items) {
    if (!same_shape(t->shape(), s)) throw std::invalid_argument("stack_batch: shape mismatch");
    out.insert(out.end(), t->values().begin(), t->values().end());
  }
  return Tensor::leaf(std::move(out_shape), std::move(out), false);
}

inline Tensor stack_masks_onehot(const std::vector<const Labels*>& masks, int extent,
                                 int classes) {
  std::vector<double> out(static_cast<std::size_t>(masks.size()) * extent * extent * classes,
                          0.0);
  for (std::size_t b = 0; b < masks.size(); ++b) {
    const Labels& m = *masks[b];
    if (static_cast<int>(m.size()) != extent * extent)
      throw std::invalid_argument("stack_masks_onehot: mask extent mismatch");
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (m[j] >= classes) throw std::invalid_argument("stack_masks_onehot: label out of range");
      out[(b * m.size() + j) * classes + m[j]] = 1.0;
    }
  }
  return Tensor::leaf({static_cast<int>(masks.size()), extent, extent, classes}, std::move(out),
                      false);
}

inline Tensor stack_scalars(const std::vector<double>& values) {
  return Tensor::leaf({static_cast<int>(values.size()), 1}, values, false);
}

// ---------------------------------------------------------------------------
// Loss logs
// ---------------------------------------------------------------------------

struct LossLogRow {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double segment = 0.0;
  double measure = 0.0;
};

struct TrainResult {
  std::vector<LossLogRow> log;
  std::vector<double> epoch_mean_loss;
};

inline void write_loss_log(const std::vector<LossLogRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write loss log " + path);
  os << "epoch,step,lr,total_loss,segment_loss,measure_loss\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g", r.epoch, r.step, r.lr,
                  r.total, r.segment, r.measure);
    os << buf << "\n";
  }
}

// ---------------------------------------------------------------------------
// Now-model training: minimizes lambda * (focal + CE) + log-cosh per frame.
// ---------------------------------------------------------------------------

inline TrainResult train_now(NowModel& model, const std::vector<VideoSequence>& data,
                             const TrainConfig& tc, const LossConfig& lc) {
  tc.validate();
  lc.validate();
  if (data.empty()) throw std::invalid_argument("train_now: empty dataset");
  const auto& cfg = model.config();
  std::vector<FrameRef> refs = all_frames(data);
  if (refs.empty()) throw std::invalid_argument("train_now: dataset has no frames");

  Rng rng(tc.seed);
  Adam opt(model.registry(), tc.weight_decay);
  TrainResult result;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tc);
    rng.shuffle(refs);
    double epoch_sum = 0.0;
    int steps = 0;
    for (std::size_t at = 0; at < refs.size(); at += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(refs.size(), at + static_cast<std::size_t>(tc.batch_size));
      std::vector<const Tensor*> frames;
      std::vector<const Labels*> masks;
      std::vector<double> irr;
      for (std::size_t i = at; i < end; ++i) {
        const auto& seq = data[static_cast<std::size_t>(refs[i].seq)];
        frames.push_back(&seq.frames[static_cast<std::size_t>(refs[i].frame)]);
        masks.push_back(&seq.masks[static_cast<std::size_t>(refs[i].frame)]);
        irr.push_back(seq.irradiance[static_cast<std::size_t>(refs[i].frame)]);
      }
      Tensor batch = stack_batch(frames);
      Tensor target = stack_masks_onehot(masks, cfg.frame_size, cfg.classes);
      Tensor r_gt = stack_scalars(irr);

      opt.zero_grad();
      Tape tape;
      double total, seg_v, meas_v;
      {
        TapeScope scope(tape);
        auto out = model.forward(batch, Mode::Train, rng);
        Tensor seg = combined_loss(out.mask_probs, target, lc);
        Tensor meas = logcosh_loss(out.r, r_gt, lc.m);
        Tensor loss = add(affine(seg, lc.lambda, 0.0), meas);
        total = loss.item();
        seg_v = seg.item();
        meas_v = meas.item();
        if (!std::isfinite(total))
          throw std::runtime_error("train_now: non-finite loss at epoch " +
                                   std::to_string(epoch) + " step " + std::to_string(steps) +
                                   " (batch starts at seq " + std::to_string(refs[at].seq) +
                                   " frame " + std::to_string(refs[at].frame) + ")");
        tape.backward(loss);
      }
      opt.step(lr);
      result.log.push_back({epoch, steps, lr, total, seg_v, meas_v});
      epoch_sum += total;
      ++steps;
    }
    result.epoch_mean_loss.push_back(epoch_sum / steps);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Frame-representation cache (frozen encoder path)
// ---------------------------------------------------------------------------

// Per-sequence, per-frame representations [1,h',w',c] computed off the tape.
inline std::vector<std::vector<Tensor>> encode_dataset(
    const std::vector<VideoSequence>& data,
    const std::function<Tensor(const Tensor& batched_frame)>& encode) {
  NoGradScope ng;
  std::vector<std::vector<Tensor>> reprs(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    reprs[s].reserve(data[s].size());
    for (const auto& frame : data[s].frames) {
      const Shape& fs = frame.shape();
      reprs[s].push_back(encode(reshape(frame, {1, fs[0], fs[1], fs[2]})));
    }
  }
  return reprs;
}

// ---------------------------------------------------------------------------
// Future-model training: windows of 2t frames, the first t as inputs, the
// last t as targets; the loss is averaged over horizons.
// ---------------------------------------------------------------------------

inline TrainResult train_future(FutureModel& model, const std::vector<VideoSequence>& data,
                                const CheckpointMap& now_records, const TrainConfig& tc,
                                const LossConfig& lc) {
  tc.validate();
  lc.validate();
  const auto& cfg = model.config();
  model.init_from_now(now_records);
  std::vector<WindowRef> refs = all_windows(data, cfg.look_back);
  if (refs.empty())
    throw std::invalid_argument("train_future: no window of " +
                                std::to_string(2 * cfg.look_back) + " consecutive frames");

  // A frozen encoder makes per-frame representations constants; cache them.
  const bool frozen = !cfg.encoder_trainable_in_future;
  std::vector<std::vector<Tensor>> cache;
  if (frozen)
    cache = encode_dataset(data, [&](const Tensor& f) { return model.encode({f}, Mode::Infer)[0]; });

  Rng rng(tc.seed);
  Adam opt(model.registry(), tc.weight_decay);
  TrainResult result;
  const int t = cfg.look_back;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tc);
    rng.shuffle(refs);
    double epoch_sum = 0.0;
    int steps = 0;
    for (std::size_t at = 0; at < refs.size(); at += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(refs.size(), at + static_cast<std::size_t>(tc.batch_size));
      const int bsz = static_cast<int>(end - at);

      opt.zero_grad();
      Tape tape;
      double total = 0.0, seg_v = 0.0, meas_v = 0.0;
      {
        TapeScope scope(tape);
        // Inputs: one batched representation per look-back step.
        std::vector<Tensor> reprs;
        reprs.reserve(static_cast<std::size_t>(t));
        for (int j = 0; j < t; ++j) {
          std::vector<Tensor> rows;
          rows.reserve(static_cast<std::size_t>(bsz));
          for (std::size_t i = at; i < end; ++i) {
            const auto& ref = refs[i];
            if (frozen) {
              rows.push_back(cache[static_cast<std::size_t>(ref.seq)]
                                  [static_cast<std::size_t>(ref.start + j)]);
            } else {
              const auto& f = data[static_cast<std::size_t>(ref.seq)]
                                  .frames[static_cast<std::size_t>(ref.start + j)];
              const Shape& fs = f.shape();
              rows.push_back(reshape(f, {1, fs[0], fs[1], fs[2]}));
            }
          }
          if (frozen)
            reprs.push_back(concat0(rows));
          else
            reprs.push_back(model.encode({concat0(rows)}, Mode::Train)[0]);
        }

        auto out = model.forward_from_reprs(reprs, Mode::Train, rng);

        Tensor loss_sum;
        for (int j = 0; j < t; ++j) {
          std::vector<const Labels*> masks;
          std::vector<double> irr;
          for (std::size_t i = at; i < end; ++i) {
            const auto& seq = data[static_cast<std::size_t>(refs[i].seq)];
            const int fidx = refs[i].start + t + j;
            masks.push_back(&seq.masks[static_cast<std::size_t>(fidx)]);
            irr.push_back(seq.irradiance[static_cast<std::size_t>(fidx)]);
          }
          Tensor target = stack_masks_onehot(masks, cfg.frame_size, cfg.classes);
          Tensor r_gt = stack_scalars(irr);
          Tensor seg = combined_loss(out.horizons[static_cast<std::size_t>(j)].mask_probs,
                                     target, lc);
          Tensor meas =
              logcosh_loss(out.horizons[static_cast<std::size_t>(j)].r, r_gt, lc.m);
          Tensor h_loss = add(affine(seg, lc.lambda, 0.0), meas);
          seg_v += seg.item();
          meas_v += meas.item();
          loss_sum = j == 0 ? h_loss : add(loss_sum, h_loss);
        }
        Tensor loss = affine(loss_sum, 1.0 / t, 0.0);
        total = loss.item();
        seg_v /= t;
        meas_v /= t;
        if (!std::isfinite(total))
          throw std::runtime_error("train_future: non-finite loss at epoch " +
                                   std::to_string(epoch) + " step " + std::to_string(steps) +
                                   " (batch starts at seq " + std::to_string(refs[at].seq) +
                                   " window " + std::to_string(refs[at].start) + ")");
        tape.backward(loss);
      }
      opt.step(lr);
      result.log.push_back({epoch, steps, lr, total, seg_v, meas_v});
      epoch_sum += total;
      ++steps;
    }
    result.epoch_mean_loss.push_back(epoch_sum / steps);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Autoregressive baseline training: one-step representation regression on
// (context -> next) pairs under squared error.
// ---------------------------------------------------------------------------

inline TrainResult train_autoregressive(AutoregressiveBaseline& ar, const NowModel& now,
                                        const std::vector<VideoSequence>& data,
                                        const TrainConfig& tc) {
  tc.validate();
  const int k = ar.context();
  auto cache = encode_dataset(
      data, [&](const Tensor& f) { return now.encoder().forward(f, Mode::Infer); });

  struct Pair {
    int seq, end;  // context frames [end-k, end), target frame end
  };
  std::vector<Pair> pairs;
  for (std::size_t s = 0; s < data.size(); ++s)
    for (int e = k; e < static_cast<int>(data[s].size()); ++e)
      pairs.push_back({static_cast<int>(s), e});
  if (pairs.empty()) throw std::invalid_argument("train_autoregressive: no training pairs");

  Rng rng(tc.seed);
  Adam opt(ar.registry(), tc.weight_decay);
  TrainResult result;

  for (int epoch = 0; epoch < tc.ar_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tc);
    rng.shuffle(pairs);
    double epoch_sum = 0.0;
    int steps = 0;
    for (std::size_t at = 0; at < pairs.size(); at += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(pairs.size(), at + static_cast<std::size_t>(tc.batch_size));
      opt.zero_grad();
      Tape tape;
      double total = 0.0;
      {
        TapeScope scope(tape);
        std::vector<Tensor> ctx_steps;
        for (int j = 0; j < k; ++j) {
          std::vector<Tensor> rows;
          for (std::size_t i = at; i < end; ++i)
            rows.push_back(cache[static_cast<std::size_t>(pairs[i].seq)]
                                [static_cast<std::size_t>(pairs[i].end - k + j)]);
          ctx_steps.push_back(concat0(rows));
        }
        std::vector<Tensor> tgt_rows;
        for (std::size_t i = at; i < end; ++i)
          tgt_rows.push_back(cache[static_cast<std::size_t>(pairs[i].seq)]
                                  [static_cast<std::size_t>(pairs[i].end)]);
        Tensor target = concat0(tgt_rows);
        Tensor pred = ar.next_repr(ctx_steps, Mode::Train);
        Tensor diff = sub(pred, target);
        Tensor loss = mean_all(mul(diff, diff));
        total = loss.item();
        if (!std::isfinite(total))
          throw std::runtime_error("train_autoregressive: non-finite loss at epoch " +
                                   std::to_string(epoch) + " step " + std::to_string(steps));
        tape.backward(loss);
      }
      opt.step(lr);
      result.log.push_back({epoch, steps, lr, total, total, 0.0});
      epoch_sum += total;
      ++steps;
    }
    result.epoch_mean_loss.push_back(epoch_sum / steps);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation protocol
// ---------------------------------------------------------------------------

inline MetricsReport evaluate_now(const NowModel& model, const std::vector<VideoSequence>& data) {
  const auto& cfg = model.config();
  MetricsAccumulator acc(cfg.classes);
  for (const auto& seq : data)
    for (std::size_t f = 0; f < seq.size(); ++f) {
      auto pred = now_predict(model, seq.frames[f]);
      acc.add_mask(argmax_last(pred.mask_probs), seq.masks[f]);
      acc.add_measure(pred.r, seq.irradiance[f]);
    }
  if (acc.samples == 0) throw std::invalid_argument("evaluate_now: empty evaluation set");
  MetricsReport report;
  report.classes = cfg.classes;
  report.add(0, acc);
  return report;
}

// Scores each horizon separately against the true future frames. Baselines
// run on exactly the same windows.
inline std::map<std::string, MetricsReport> evaluate_future(
    const FutureModel* future, const NowModel* now, const AutoregressiveBaseline* ar,
    const std::vector<VideoSequence>& data, bool baselines) {
  if (!future && !now) throw std::invalid_argument("evaluate_future: no model given");
  const ModelConfig& cfg = future ? future->config() : now->config();
  const int t = cfg.look_back;
  std::vector<WindowRef> refs = all_windows(data, t);
  if (refs.empty()) throw std::invalid_argument("evaluate_future: empty evaluation set");

  std::map<std::string, std::vector<MetricsAccumulator>> accs;
  auto ensure = [&](const std::string& name) {
    accs.emplace(name, std::vector<MetricsAccumulator>(static_cast<std::size_t>(t),
                                                       MetricsAccumulator(cfg.classes)));
  };
  if (future) ensure("future");
  if (baselines && now) {
    ensure("persistence");
    if (ar) ensure("autoregressive");
  }

  NoGradScope ng;
  Rng unused(0);

  // Cache per-frame representations for the heads that need them.
  std::vector<std::vector<Tensor>> now_reprs;
  if (baselines && now && ar)
    now_reprs = encode_dataset(
        data, [&](const Tensor& f) { return now->encoder().forward(f, Mode::Infer); });

  auto score = [&](const std::string& name, int horizon, const Tensor& mask_probs, double r,
                   const VideoSequence& seq, int target_idx) {
    auto& acc = accs.at(name)[static_cast<std::size_t>(horizon)];
    acc.add_mask(argmax_last(mask_probs), seq.masks[static_cast<std::size_t>(target_idx)]);
    acc.add_measure(r, seq.irradiance[static_cast<std::size_t>(target_idx)]);
  };

  for (const auto& ref : refs) {
    const auto& seq = data[static_cast<std::size_t>(ref.seq)];
    std::vector<Tensor> inputs;
    for (int j = 0; j < t; ++j) {
      const auto& f = seq.frames[static_cast<std::size_t>(ref.start + j)];
      const Shape& fs = f.shape();
      inputs.push_back(reshape(f, {1, fs[0], fs[1], fs[2]}));
    }
    if (future) {
      auto out = future->forward(inputs, Mode::Infer, unused);
      for (int j = 0; j < t; ++j)
        score("future", j, out.horizons[static_cast<std::size_t>(j)].mask_probs,
              out.horizons[static_cast<std::size_t>(j)].r.item(), seq, ref.start + t + j);
    }
    if (baselines && now) {
      std::vector<Tensor> singles;
      for (int j = 0; j < t; ++j)
        singles.push_back(seq.frames[static_cast<std::size_t>(ref.start + j)]);
      auto pers = persistence_predict(*now, singles);
      for (int j = 0; j < t; ++j)
        score("persistence", j, pers.horizons[static_cast<std::size_t>(j)].mask_probs,
              pers.horizons[static_cast<std::size_t>(j)].r.item(), seq, ref.start + t + j);
      if (ar) {
        std::vector<Tensor> ctx;
        for (int j = 0; j < t; ++j)
          ctx.push_back(now_reprs[static_cast<std::size_t>(ref.seq)]
                                 [static_cast<std::size_t>(ref.start + j)]);
        auto rolled = ar->rollout(ctx, t, Mode::Infer);
        for (int j = 0; j < t; ++j) {
          Tensor mask = segment_head(rolled[static_cast<std::size_t>(j)],
                                     cfg.downsample_factor());
          auto m = now->measure().forward(rolled[static_cast<std::size_t>(j)], Mode::Infer,
                                          unused);
          score("autoregressive", j, mask, m.r.item(), seq, ref.start + t + j);
        }
      }
    }
  }

  std::map<std::string, MetricsReport> reports;
  for (auto& [name, horizon_accs] : accs) {
    MetricsReport report;
    report.classes = cfg.classes;
    for (int j = 0; j < t; ++j)
      report.add((j + 1) * 10, horizon_accs[static_cast<std::size_t>(j)]);
    reports.emplace(name, std::move(report));
  }
  return reports;
}

}  // namespace tlf
