#pragma once

// Sample preparation, minibatch training with resumable state, guidance
// encoder pretraining by autoencoding, and batch evaluation.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>
#include <vector>

#include "ris/checkpoint.hpp"
#include "ris/corpus.hpp"
#include "ris/evaluation.hpp"
#include "ris/model.hpp"
#include "ris/optim.hpp"

namespace ris {

// [3 x H x W] with channel values in [0, 1].
inline Tensor image_tensor(const RgbImage& img) {
  const std::size_t hw = img.height * img.width;
  std::vector<double> v(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * hw + p] = img.pixels[p * 3 + c] / 255.0;
  return Tensor({3, img.height, img.width}, std::move(v));
}

struct PreparedSample {
  std::string id;
  Tensor image;
  EncodedText text;
  BinaryMask mask;
  std::shared_ptr<const GuidancePyramid> guidance;  // frozen encoder output, if any
};

inline Vocabulary build_vocabulary(const std::vector<synth::ReferringSample>& samples, const ModelConfig& cfg) {
  std::vector<std::vector<std::string>> sentences;
  sentences.reserve(samples.size());
  for (const auto& s : samples) sentences.push_back(model_tokens(Expression::from_text(s.expression), cfg));
  return Vocabulary::build(sentences);
}

// Loads images, encodes text, and (when the model has a guidance encoder)
// caches its frozen features. Parallel over `threads`; order is preserved.
inline std::vector<PreparedSample> prepare_samples(const std::vector<synth::ReferringSample>& samples,
                                                   const std::filesystem::path& corpus_dir, const Vocabulary& vocab,
                                                   const Model& model, unsigned threads = 1) {
  std::vector<PreparedSample> out(samples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    NoGradGuard ng;
    for (std::size_t i; (i = next++) < samples.size();) {
      try {
        const auto& s = samples[i];
        PreparedSample& p = out[i];
        p.id = s.split + "/" + std::to_string(i);
        p.image = image_tensor(read_ppm(corpus_dir / s.image_path));
        const auto tokens = model_tokens(Expression::from_text(s.expression), model.config());
        p.text = encode_tokens(tokens, vocab, model.config().max_len);
        p.mask = s.mask;
        if (model.guidance())
          p.guidance = std::make_shared<const GuidancePyramid>(*model.guidance_features(p.image));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = samples.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::max(1u, threads); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::size_t max_steps = 0;  // 0: run all epochs
  AdamWOptions optim;
  bool cosine = false;
  std::uint64_t seed = 0;  // sample order
};

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
  j = {{"epochs", t.epochs},
       {"batch_size", t.batch_size},
       {"max_steps", t.max_steps},
       {"lr", t.optim.lr},
       {"beta1", t.optim.beta1},
       {"beta2", t.optim.beta2},
       {"eps", t.optim.eps},
       {"weight_decay", t.optim.weight_decay},
       {"cosine", t.cosine},
       {"seed", t.seed}};
}

// Minibatch AdamW over a fixed sample list. The sample order of epoch e is a
// permutation seeded by (seed, e), so a run restored at any step continues
// exactly as the uninterrupted run would.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg, const std::vector<PreparedSample>& data)
      : model_(model), cfg_(cfg), data_(data), optimizer_(model.params(), cfg.optim) {
    if (data.empty()) throw Error(ErrorCode::EmptyResultSet, "no training samples");
    if (cfg.batch_size == 0) throw Error(ErrorCode::ConfigError, "train.batch_size: must be positive");
  }

  std::size_t steps_per_epoch() const { return (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }

  std::size_t total_steps() const {
    const std::size_t all = steps_per_epoch() * cfg_.epochs;
    return cfg_.max_steps ? std::min(all, cfg_.max_steps) : all;
  }

  std::size_t step_index() const { return static_cast<std::size_t>(optimizer_.step_count()); }
  bool done() const { return step_index() >= total_steps(); }

  // One optimizer step; returns the minibatch mean loss.
  double step() {
    const std::size_t s = step_index();
    const std::size_t epoch = s / steps_per_epoch(), offset = (s % steps_per_epoch()) * cfg_.batch_size;
    if (epoch != order_epoch_) {
      order_.resize(data_.size());
      std::iota(order_.begin(), order_.end(), 0);
      std::mt19937_64 rng(synth::splitmix64(cfg_.seed * 1000003ull + epoch));
      std::shuffle(order_.begin(), order_.end(), rng);
      order_epoch_ = epoch;
    }
    const std::size_t end = std::min(offset + cfg_.batch_size, data_.size());
    const double inv = 1.0 / static_cast<double>(end - offset);
    model_.params().zero_grad();
    double total = 0.0;
    for (std::size_t k = offset; k < end; ++k) {
      const PreparedSample& p = data_[order_[k]];
      const Tensor loss = model_.loss(p.image, p.text, p.mask.bits, p.guidance.get());
      total += loss.item();
      backward(scale(loss, inv));
    }
    if (cfg_.cosine) {
      const double t = static_cast<double>(s) / static_cast<double>(std::max<std::size_t>(1, total_steps()));
      optimizer_.set_lr(cfg_.optim.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
    }
    optimizer_.step();
    model_.params().zero_grad();
    return total * inv;
  }

  // Runs until done(); `on_step(step, loss)` after each step.
  void run(const std::function<void(std::size_t, double)>& on_step = {}) {
    while (!done()) {
      const double l = step();
      if (on_step) on_step(step_index(), l);
    }
  }

  void capture(Checkpoint& ckpt) const {
    model_.capture(ckpt);
    ckpt.meta["train"] = cfg_;
    ckpt.meta["optimizer_step"] = optimizer_.step_count();
    const auto& params = model_.params().params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& slot = optimizer_.slots()[i];
      ckpt.tensors.push_back({"optimizer.m." + params[i].name, params[i].tensor.shape(), false, slot.m});
      ckpt.tensors.push_back({"optimizer.v." + params[i].name, params[i].tensor.shape(), false, slot.v});
    }
  }

  void restore(const Checkpoint& ckpt) {
    model_.restore(ckpt);
    const auto& params = model_.params().params();
    std::vector<AdamW::Slot> slots(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto* m = ckpt.find("optimizer.m." + params[i].name);
      const auto* v = ckpt.find("optimizer.v." + params[i].name);
      if (!m || !v) throw Error(ErrorCode::StateMismatch, "checkpoint lacks optimizer state for " + params[i].name);
      slots[i] = {m->data, v->data};
    }
    optimizer_.restore(ckpt.meta.value("optimizer_step", 0L), std::move(slots));
  }

  AdamW& optimizer() { return optimizer_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  const std::vector<PreparedSample>& data_;
  AdamW optimizer_;
  std::vector<std::size_t> order_;
  std::size_t order_epoch_ = static_cast<std::size_t>(-1);
};

// Trains the guidance encoder to reconstruct 4x4 pixel patches from its four
// stages (each upsampled to stride 4 and linearly projected), then freezes it
// again. The reconstruction heads are discarded.
inline double pretrain_guidance_autoencoder(GuidanceEncoder& guidance, const std::vector<Tensor>& images,
                                            const ModelConfig& cfg, std::size_t steps, std::size_t batch_size,
                                            std::uint64_t seed, double lr = 1e-3) {
  if (images.empty() || steps == 0) return 0.0;
  ParameterStore& gs = guidance.store();
  for (auto& p : gs.params()) {
    p.frozen = false;
    p.tensor.set_requires_grad(true);
  }
  ParameterStore heads(seed ^ 0xae);
  std::array<nn::Linear, 4> proj;
  for (std::size_t s = 0; s < 4; ++s)
    proj[s] = nn::Linear::make(heads, "autoenc.stage" + std::to_string(s + 1), cfg.channels(s), 48);
  AdamWOptions opt;
  opt.lr = lr;
  opt.weight_decay = 0.0;
  AdamW enc_opt(gs, opt), head_opt(heads, opt);
  std::mt19937_64 rng(synth::splitmix64(seed));
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  double last = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    gs.zero_grad();
    heads.zero_grad();
    last = 0.0;
    for (std::size_t b = 0; b < batch_size; ++b) {
      const Tensor& img = images[pick(rng)];
      const auto pyr = guidance.encoder()(img);
      const std::size_t h = img.dim(1), w = img.dim(2);
      const Tensor target = patch_merge(chw_to_tokens(img), h, w, 4);
      Tensor recon;
      for (std::size_t s = 0; s < 4; ++s) {
        const Tensor up = s == 0 ? pyr.stages[0] : bilinear_upsample(pyr.stages[s], std::size_t{1} << s);
        const Tensor r = proj[s](chw_to_tokens(up));
        recon = s == 0 ? r : add(recon, r);
      }
      const Tensor loss = mse_loss(recon, target.data());
      last += loss.item() / static_cast<double>(batch_size);
      backward(scale(loss, 1.0 / static_cast<double>(batch_size)));
    }
    enc_opt.step();
    head_opt.step();
  }
  gs.zero_grad();
  gs.freeze("");
  return last;
}

inline std::vector<SampleResult> evaluate_samples(const Model& model, const std::vector<PreparedSample>& samples,
                                                  unsigned threads = 1,
                                                  std::vector<MaskPrediction>* predictions = nullptr) {
  std::vector<SampleResult> results(samples.size());
  if (predictions) predictions->assign(samples.size(), {});
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < samples.size();) {
      try {
        const auto& p = samples[i];
        MaskPrediction pred = model.predict(p.image, p.text, p.guidance.get());
        results[i] = iou(pred.mask, p.mask.bits, p.id);
        if (predictions) (*predictions)[i] = std::move(pred);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = samples.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::max(1u, threads); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace ris
