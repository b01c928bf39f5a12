#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mocha/tensor.hpp"

namespace mocha::data {

// One synthetic utterance. Frames and align are in raw-frame space;
// boundaries are 1-based end frames in post-stacking (encoder) space.
struct Utterance {
  std::string id;
  std::vector<std::vector<double>> frames;  // T_raw x F
  std::vector<int> align;                   // T_raw framewise symbol ids
  std::vector<int> tokens;                  // L ids, EOS-terminated
  std::vector<int> boundaries;              // L, EOS boundary = T'

  std::size_t raw_frames() const { return frames.size(); }
  std::size_t feature_dim() const { return frames.empty() ? 0 : frames[0].size(); }
  bool operator==(const Utterance&) const = default;
};

using Corpus = std::vector<Utterance>;

struct TaskConfig {
  std::size_t utterances = 100;
  std::size_t symbols = 16;        // alignment alphabet; tokens use ids 2..symbols+1
  std::size_t token_alphabet = 0;  // modulus of the lookahead sum, 0 = symbols
  std::size_t min_duration = 4;    // raw frames per segment
  std::size_t max_duration = 8;
  std::size_t min_tokens = 2;      // content tokens per utterance (EOS excluded)
  std::size_t max_tokens = 5;
  double noise_std = 0.1;
  std::size_t stack_factor = 1;
  std::uint64_t seed = 1;
};

// Token i names the symbol of segment i.
Corpus gen_segmental_task(const TaskConfig& cfg);

// Token i is (sym_i + sym_{i+lookshift}) mod token_alphabet, so emitting it needs
// frames past the gold boundary b_i. lookshift = 0 yields the segmental task.
Corpus gen_lookahead_task(const TaskConfig& cfg, std::size_t lookshift);

std::size_t stacked_length(std::size_t raw, std::size_t factor);
// 1-based raw boundary -> 1-based stacked boundary, ceil(b / factor).
int stacked_boundary(int raw_boundary, std::size_t factor);

// Concatenates groups of `factor` frames, zero-padding the last group.
// Returns a T' x (F * factor) constant tensor.
ag::Tensor stack_frames(const std::vector<std::vector<double>>& frames,
                        std::size_t factor);

// Checks the structural invariants; throws DataError naming the utterance.
void validate(const Utterance& u, std::size_t stack_factor);

void write_jsonl(const std::string& path, const Corpus& corpus);
Corpus read_jsonl(const std::string& path);

// Corpus split into leading and trailing parts.
std::pair<Corpus, Corpus> split(const Corpus& c, std::size_t first);

// Padded mini-batch. Rows beyond an item's length are zero and masked out.
struct Batch {
  std::size_t items = 0;
  std::size_t max_frames = 0;  // stacked
  std::size_t max_tokens = 0;
  std::size_t frame_dim = 0;   // stacked feature width
  std::vector<double> frames;  // items x max_frames x frame_dim
  std::vector<int> tokens;     // items x max_tokens, PAD filled
  std::vector<int> boundaries; // items x max_tokens, 0 filled
  std::vector<int> align;      // items x max_frames (stacked label of group end), -1 filled
  std::vector<double> frame_mask;  // items x max_frames
  std::vector<double> token_mask;  // items x max_tokens
  std::vector<std::size_t> frame_lengths;
  std::vector<std::size_t> token_lengths;
  std::vector<std::size_t> raw_lengths;
  std::vector<std::vector<int>> raw_align;

  // Unpadded views of item b.
  ag::Tensor item_frames(std::size_t b) const;
  std::vector<int> item_tokens(std::size_t b) const;
  std::vector<int> item_boundaries(std::size_t b) const;
  std::vector<int> item_align(std::size_t b) const;
};

// Framewise labels for stacked frames: the label of the last raw frame in
// each group.
std::vector<int> stacked_align(const std::vector<int>& align, std::size_t factor);

Batch batch_pad(const std::vector<const Utterance*>& items, std::size_t stack_factor);

}  // namespace mocha::data
