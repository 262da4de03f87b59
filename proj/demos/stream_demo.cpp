// Decodes a few random frames with a small decoder, once offline and once a
// frame at a time, and prints how far apart the two outputs are.

#include <iostream>
#include <vector>

#include "tmimi/frames_io.hpp"
#include "tmimi/streaming.hpp"
#include "tmimi/weight_store.hpp"

int main() {
  tmimi::DecoderConfig config;
  config.num_layers = 4;
  config.model_dim = 64;
  config.ffn_dim = 256;
  config.num_heads = 4;
  config.attention_window = 8;
  config.head_hidden_dim = 96;
  config.codebook_size = 256;

  const auto weights = tmimi::init_random(config, 7);
  const auto plan = tmimi::PrecisionPlan::parse("T1-2:int8,T3-4:fp32,L:fp32");
  const auto frames = tmimi::random_frames(config, 20, 1);

  const auto offline = tmimi::forward_offline(frames, weights, plan);
  auto stream = tmimi::new_stream(weights, plan);
  std::vector<float> streamed;
  for (const auto& frame : frames) {
    const auto chunk = stream.step(frame);
    streamed.insert(streamed.end(), chunk.begin(), chunk.end());
  }
  std::cout << "frames " << frames.size() << ", samples " << streamed.size() << ", max |offline - streamed| "
            << tmimi::max_abs_diff(offline, streamed) << "\n";
}
