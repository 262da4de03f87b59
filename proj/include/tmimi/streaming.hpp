#pragma once

// Incremental decoding: one frame in, samples_per_frame samples out.
//
// Each layer keeps the projected keys and values of the last W frames (W =
// attention_window, current frame included) in a ring buffer. Attention visits
// the ring oldest-first, which is the same order the offline path uses, so the
// two agree to the last bit.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tmimi/model.hpp"

namespace tmimi {

class StreamState {
 public:
  explicit StreamState(std::shared_ptr<const PreparedDecoder> model) : model_(std::move(model)) {
    const auto& c = model_->config();
    keys_.assign(c.num_layers, Tensor2D(c.attention_window, c.model_dim));
    values_.assign(c.num_layers, Tensor2D(c.attention_window, c.model_dim));
  }

  const DecoderConfig& config() const { return model_->config(); }
  const PreparedDecoder& model() const { return *model_; }
  std::shared_ptr<const PreparedDecoder> shared_model() const { return model_; }

  std::size_t valid_len() const { return valid_len_; }
  std::uint64_t position() const { return position_; }

  // Bytes held by the K/V ring buffers.
  std::size_t kv_bytes() const {
    const auto& c = config();
    return c.num_layers * 2 * c.attention_window * c.model_dim * sizeof(float);
  }

  // Runs the transformer layers for one frame and returns the final-normed
  // hidden state (1 x model_dim).
  Tensor2D step_hidden(const FrameInput& frame) {
    const auto& c = config();
    const std::size_t window = c.attention_window;
    const std::size_t slot = static_cast<std::size_t>(position_ % window);
    const std::size_t visible = std::min(valid_len_ + 1, window);
    Tensor2D x = model_->embed(std::span(&frame, 1));
    for (std::size_t l = 0; l < c.num_layers; ++l) {
      Tensor2D& kr = keys_[l];
      Tensor2D& vr = values_[l];
      model_->run_layer(l, x, [&](const Tensor2D& q, const Tensor2D& k, const Tensor2D& v, Tensor2D& a) {
        std::copy(k.row(0).begin(), k.row(0).end(), kr.row(slot).begin());
        std::copy(v.row(0).begin(), v.row(0).end(), vr.row(slot).begin());
        // oldest visible frame sits `visible - 1` slots behind the current one
        const std::size_t oldest = (slot + window - (visible - 1)) % window;
        attend_row(q.row(0).data(), visible, [&](std::size_t j) { return kr.row((oldest + j) % window).data(); },
                   [&](std::size_t j) { return vr.row((oldest + j) % window).data(); }, c.num_heads, c.head_dim(),
                   a.row(0).data(), scores_);
      });
    }
    valid_len_ = visible;
    ++position_;
    return model_->final_hidden(x);
  }

  std::vector<float> step(const FrameInput& frame) { return model_->head(step_hidden(frame)).values(); }

  void reset() {
    for (auto& k : keys_) std::fill(k.data().begin(), k.data().end(), 0.0f);
    for (auto& v : values_) std::fill(v.data().begin(), v.data().end(), 0.0f);
    valid_len_ = 0;
    position_ = 0;
  }

 private:
  std::shared_ptr<const PreparedDecoder> model_;
  std::vector<Tensor2D> keys_;
  std::vector<Tensor2D> values_;
  std::size_t valid_len_ = 0;
  std::uint64_t position_ = 0;
  std::vector<float> scores_;
};

// Applies the plan to the weights once and returns a fresh stream at position 0.
inline StreamState new_stream(const DecoderWeights& weights, const PrecisionPlan& plan) {
  return StreamState(std::make_shared<const PreparedDecoder>(weights, plan));
}

inline std::vector<float> decode_streaming(StreamState& state, std::span<const FrameInput> frames) {
  std::vector<float> out;
  out.reserve(frames.size() * state.config().samples_per_frame);
  for (const auto& f : frames) {
    const auto chunk = state.step(f);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

}  // namespace tmimi
