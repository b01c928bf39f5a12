#include "mocha/data.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "mocha/errors.hpp"
#include "mocha/model.hpp"

namespace mocha::data {

using nlohmann::json;

namespace {

// Symbols for `count` consecutive segments; neighbours always differ so that
// every segment is a maximal run.
std::vector<int> draw_symbols(std::mt19937_64& rng, std::size_t count,
                              std::size_t symbols) {
  std::uniform_int_distribution<int> sym(0, static_cast<int>(symbols) - 1);
  std::vector<int> out;
  while (out.size() < count) {
    int s = sym(rng);
    if (!out.empty() && s == out.back()) continue;
    out.push_back(s);
  }
  return out;
}

Utterance render(std::mt19937_64& rng, const TaskConfig& cfg, const std::string& id,
                 const std::vector<int>& segment_symbols, std::vector<int> content_tokens) {
  std::uniform_int_distribution<std::size_t> dur(cfg.min_duration, cfg.max_duration);
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  Utterance u;
  u.id = id;
  std::vector<int> segment_end;  // 1-based raw
  for (int s : segment_symbols) {
    const std::size_t d = dur(rng);
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> f(cfg.symbols, 0.0);
      f[static_cast<std::size_t>(s)] = 1.0;
      if (cfg.noise_std > 0.0)
        for (auto& v : f) v += noise(rng);
      u.frames.push_back(std::move(f));
      u.align.push_back(s);
    }
    segment_end.push_back(static_cast<int>(u.frames.size()));
  }
  const int t_stacked = static_cast<int>(stacked_length(u.frames.size(), cfg.stack_factor));
  u.tokens = std::move(content_tokens);
  for (std::size_t i = 0; i < u.tokens.size(); ++i)
    u.boundaries.push_back(stacked_boundary(segment_end[i], cfg.stack_factor));
  u.tokens.push_back(kEos);
  u.boundaries.push_back(t_stacked);
  return u;
}

void check_task(const TaskConfig& cfg) {
  require(cfg.symbols >= 2, "task: need at least two symbols");
  require(cfg.token_alphabet == 0 || cfg.token_alphabet >= 2,
          "task: token alphabet must be 0 or at least 2");
  require(cfg.min_duration >= 1 && cfg.min_duration <= cfg.max_duration,
          "task: durations must satisfy 1 <= min <= max");
  require(cfg.min_tokens >= 1 && cfg.min_tokens <= cfg.max_tokens,
          "task: token counts must satisfy 1 <= min <= max");
  require(cfg.stack_factor >= 1, "task: stack factor must be >= 1");
  require(cfg.noise_std >= 0.0, "task: noise_std must be >= 0");
}

std::string utt_id(std::size_t k) {
  std::ostringstream os;
  os << "utt" << k;
  return os.str();
}

}  // namespace

Corpus gen_segmental_task(const TaskConfig& cfg) { return gen_lookahead_task(cfg, 0); }

Corpus gen_lookahead_task(const TaskConfig& cfg, std::size_t lookshift) {
  check_task(cfg);
  Corpus corpus;
  corpus.reserve(cfg.utterances);
  for (std::size_t k = 0; k < cfg.utterances; ++k) {
    // Each utterance has its own stream so items are independent of n.
    std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(k),
                      static_cast<std::uint64_t>(lookshift)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> len(cfg.min_tokens, cfg.max_tokens);
    const std::size_t n_tokens = len(rng);
    auto syms = draw_symbols(rng, n_tokens + lookshift, cfg.symbols);
    std::vector<int> tokens;
    const int v = static_cast<int>(cfg.token_alphabet ? cfg.token_alphabet : cfg.symbols);
    for (std::size_t i = 0; i < n_tokens; ++i) {
      const int sym = lookshift == 0 ? syms[i] : (syms[i] + syms[i + lookshift]) % v;
      tokens.push_back(sym + 2);
    }
    corpus.push_back(render(rng, cfg, utt_id(k), syms, std::move(tokens)));
  }
  return corpus;
}

std::size_t stacked_length(std::size_t raw, std::size_t factor) {
  require(factor >= 1, "stack factor must be >= 1");
  return (raw + factor - 1) / factor;
}

int stacked_boundary(int raw_boundary, std::size_t factor) {
  require(factor >= 1, "stack factor must be >= 1");
  const int f = static_cast<int>(factor);
  return (raw_boundary + f - 1) / f;
}

ag::Tensor stack_frames(const std::vector<std::vector<double>>& frames,
                        std::size_t factor) {
  require(factor >= 1, "stack_frames: factor must be >= 1");
  const std::size_t t = frames.size();
  const std::size_t f = t ? frames[0].size() : 0;
  const std::size_t ts = stacked_length(t, factor);
  std::vector<double> out(ts * f * factor, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    require(frames[r].size() == f, "stack_frames: ragged frame widths");
    std::copy(frames[r].begin(), frames[r].end(), out.begin() + r * f);
  }
  return ag::Tensor::constant({ts, f * factor}, std::move(out));
}

std::vector<int> stacked_align(const std::vector<int>& align, std::size_t factor) {
  const std::size_t ts = stacked_length(align.size(), factor);
  std::vector<int> out(ts);
  for (std::size_t g = 0; g < ts; ++g)
    out[g] = align[std::min(align.size(), (g + 1) * factor) - 1];
  return out;
}

void validate(const Utterance& u, std::size_t stack_factor) {
  auto fail = [&](const std::string& what) {
    throw DataError("utterance '" + u.id + "': " + what);
  };
  if (u.frames.empty()) fail("no frames");
  const std::size_t f = u.feature_dim();
  for (const auto& fr : u.frames)
    if (fr.size() != f) fail("ragged frame widths");
  if (u.align.size() != u.frames.size()) fail("align length differs from frame count");
  if (u.tokens.empty() || u.tokens.back() != kEos) fail("tokens must end with EOS");
  if (u.tokens.size() != u.boundaries.size()) fail("tokens and boundaries differ in length");
  const int t = static_cast<int>(stacked_length(u.frames.size(), stack_factor));
  for (std::size_t i = 0; i < u.boundaries.size(); ++i) {
    const int b = u.boundaries[i];
    if (b < 1 || b > t) fail("boundary " + std::to_string(b) + " outside [1, " + std::to_string(t) + "]");
    if (i + 1 < u.boundaries.size() && i > 0 && b <= u.boundaries[i - 1])
      fail("boundaries must be strictly increasing");
    if (u.tokens[i] == kPad) fail("PAD inside token sequence");
  }
}

void write_jsonl(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  for (const auto& u : corpus) {
    json j;
    j["id"] = u.id;
    j["frames"] = u.frames;
    j["align"] = u.align;
    j["tokens"] = u.tokens;
    j["boundaries"] = u.boundaries;
    os << j.dump() << '\n';
  }
  if (!os) throw DataError("write failed for " + path);
}

Corpus read_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed record (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + ": record is not an object");
    for (const char* field : {"id", "frames", "align", "tokens", "boundaries"})
      if (!j.contains(field)) throw DataError(where + ": missing field '" + field + "'");
    Utterance u;
    try {
      u.id = j.at("id").get<std::string>();
      u.frames = j.at("frames").get<std::vector<std::vector<double>>>();
      u.align = j.at("align").get<std::vector<int>>();
      u.tokens = j.at("tokens").get<std::vector<int>>();
      u.boundaries = j.at("boundaries").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw DataError(where + ": wrong field type (" + e.what() + ")");
    }
    corpus.push_back(std::move(u));
  }
  return corpus;
}

std::pair<Corpus, Corpus> split(const Corpus& c, std::size_t first) {
  first = std::min(first, c.size());
  return {Corpus(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(first)),
          Corpus(c.begin() + static_cast<std::ptrdiff_t>(first), c.end())};
}

Batch batch_pad(const std::vector<const Utterance*>& items, std::size_t stack_factor) {
  require(!items.empty(), "batch_pad: empty batch");
  Batch b;
  b.items = items.size();
  b.frame_dim = items[0]->feature_dim() * stack_factor;
  for (const auto* u : items) {
    validate(*u, stack_factor);
    require(u->feature_dim() * stack_factor == b.frame_dim, "batch_pad: feature width mismatch");
    b.frame_lengths.push_back(stacked_length(u->raw_frames(), stack_factor));
    b.token_lengths.push_back(u->tokens.size());
    b.raw_lengths.push_back(u->raw_frames());
    b.raw_align.push_back(u->align);
    b.max_frames = std::max(b.max_frames, b.frame_lengths.back());
    b.max_tokens = std::max(b.max_tokens, b.token_lengths.back());
  }
  b.frames.assign(b.items * b.max_frames * b.frame_dim, 0.0);
  b.tokens.assign(b.items * b.max_tokens, kPad);
  b.boundaries.assign(b.items * b.max_tokens, 0);
  b.align.assign(b.items * b.max_frames, -1);
  b.frame_mask.assign(b.items * b.max_frames, 0.0);
  b.token_mask.assign(b.items * b.max_tokens, 0.0);
  for (std::size_t k = 0; k < b.items; ++k) {
    const auto& u = *items[k];
    ag::Tensor st = stack_frames(u.frames, stack_factor);
    std::copy(st.data().begin(), st.data().end(),
              b.frames.begin() + static_cast<std::ptrdiff_t>(k * b.max_frames * b.frame_dim));
    auto sa = stacked_align(u.align, stack_factor);
    for (std::size_t j = 0; j < b.frame_lengths[k]; ++j) {
      b.frame_mask[k * b.max_frames + j] = 1.0;
      b.align[k * b.max_frames + j] = sa[j];
    }
    for (std::size_t i = 0; i < b.token_lengths[k]; ++i) {
      b.tokens[k * b.max_tokens + i] = u.tokens[i];
      b.boundaries[k * b.max_tokens + i] = u.boundaries[i];
      b.token_mask[k * b.max_tokens + i] = 1.0;
    }
  }
  return b;
}

ag::Tensor Batch::item_frames(std::size_t k) const {
  require(k < items, "batch: item index out of range");
  const std::size_t n = frame_lengths[k] * frame_dim;
  const auto begin = frames.begin() + static_cast<std::ptrdiff_t>(k * max_frames * frame_dim);
  return ag::Tensor::constant({frame_lengths[k], frame_dim},
                              std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(n)));
}

std::vector<int> Batch::item_tokens(std::size_t k) const {
  const auto begin = tokens.begin() + static_cast<std::ptrdiff_t>(k * max_tokens);
  return {begin, begin + static_cast<std::ptrdiff_t>(token_lengths[k])};
}

std::vector<int> Batch::item_boundaries(std::size_t k) const {
  const auto begin = boundaries.begin() + static_cast<std::ptrdiff_t>(k * max_tokens);
  return {begin, begin + static_cast<std::ptrdiff_t>(token_lengths[k])};
}

std::vector<int> Batch::item_align(std::size_t k) const {
  const auto begin = align.begin() + static_cast<std::ptrdiff_t>(k * max_frames);
  return {begin, begin + static_cast<std::ptrdiff_t>(frame_lengths[k])};
}

}  // namespace mocha::data
