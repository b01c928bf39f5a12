#include "mocha/model.hpp"

#include <cmath>
#include <random>

#include "mocha/attention.hpp"
#include "mocha/errors.hpp"

namespace mocha {

using namespace ag;

void validate(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  const auto& d = cfg.decoder;
  const auto& a = cfg.attention;
  require(e.layers >= 1, "encoder.layers must be >= 1");
  require(e.hidden >= 1, "encoder.hidden must be >= 1");
  require(e.stack_factor >= 1, "encoder.stack_factor must be >= 1");
  require(e.feature_dim >= 1, "encoder.feature_dim must be >= 1");
  require(e.ce_branch == CeBranch::none || e.align_classes >= 2,
          "encoder.align_classes must be >= 2 when a CE branch is enabled");
  require(e.ce_branch != CeBranch::mtl || e.bottleneck() >= 1,
          "encoder.bottleneck_dim must be >= 1");
  require(e.dropout >= 0.0 && e.dropout < 1.0, "encoder.dropout must be in [0, 1)");
  require(d.layers >= 1, "decoder.layers must be >= 1");
  require(d.vocab >= 3, "decoder.vocab must include PAD, EOS and one token");
  require(d.label_smoothing >= 0.0 && d.label_smoothing < 1.0,
          "decoder.label_smoothing must be in [0, 1)");
  require(d.dropout >= 0.0 && d.dropout < 1.0, "decoder.dropout must be in [0, 1)");
  require(a.chunk_width >= 1, "attention.chunk_width must be >= 1");
  require(a.conv_kernel == 0 || a.conv_kernel % 2 == 1,
          "attention.conv_kernel must be odd (or 0 to disable)");
  require(a.attn_dim >= 1, "attention.attn_dim must be >= 1");
  require(a.clip_eps > 0.0 && a.clip_eps < 0.5, "attention.clip_eps must be in (0, 0.5)");
}

Tensor& ParamStore::add(const std::string& name, Shape shape,
                        std::vector<double> values) {
  require(!contains(name), [&] { return std::string("duplicate parameter " + name); });
  auto [it, _] =
      params_.emplace(name, Tensor::parameter(std::move(shape), std::move(values)));
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), [&] { return std::string("unknown parameter " + name); });
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [k, t] : params_) out.add(k, t.shape(), t.values());
  return out;
}

Tensor gru_step_projected(const Tensor& gx, const Tensor& h, const GruParams& p) {
  Tensor out = gru_cell(gx, h, p.w_hh, p.b_hh);
  if (p.ln_gain.defined()) out = layer_norm(out, p.ln_gain, p.ln_bias);
  return out;
}

Tensor gru_step(const Tensor& x, const Tensor& h, const GruParams& p) {
  require(x.size() == p.w_ih.cols(), [&] { return std::string("gru_step: input width " +
                                         std::to_string(x.size()) + " expected " +
                                         std::to_string(p.w_ih.cols())); });
  return gru_step_projected(linear_vec(x, p.w_ih, p.b_ih), h, p);
}

Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets,
                         double eps) {
  std::vector<double> weight(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i)
    weight[i] = targets[i] == kPad ? 0.0 : 1.0;
  return ag::label_smoothed_ce(logits, targets, eps, weight);
}

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

void add_matrix(ParamStore& ps, std::mt19937_64& rng, const std::string& name,
                std::size_t rows, std::size_t cols) {
  ps.add(name, {rows, cols},
         uniform(rng, rows * cols, 1.0 / std::sqrt(static_cast<double>(cols))));
}

void add_zeros(ParamStore& ps, const std::string& name, std::size_t n) {
  ps.add(name, {n}, std::vector<double>(n, 0.0));
}

void add_gru(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix,
             std::size_t in, std::size_t hidden, bool ln) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  ps.add(prefix + ".w_ih", {3 * hidden, in}, uniform(rng, 3 * hidden * in, bound));
  ps.add(prefix + ".w_hh", {3 * hidden, hidden},
         uniform(rng, 3 * hidden * hidden, bound));
  add_zeros(ps, prefix + ".b_ih", 3 * hidden);
  add_zeros(ps, prefix + ".b_hh", 3 * hidden);
  if (ln) {
    ps.add(prefix + ".ln_gain", {hidden}, std::vector<double>(hidden, 1.0));
    add_zeros(ps, prefix + ".ln_bias", hidden);
  }
}

void add_energy(ParamStore& ps, std::mt19937_64& rng, const std::string& prefix,
                std::size_t feat, std::size_t query, const AttentionConfig& a) {
  if (a.conv_kernel > 0)
    ps.add(prefix + ".conv", {a.conv_kernel, feat, feat},
           uniform(rng, a.conv_kernel * feat * feat,
                   1.0 / std::sqrt(static_cast<double>(a.conv_kernel * feat))));
  add_matrix(ps, rng, prefix + ".w_h", a.attn_dim, feat);
  add_matrix(ps, rng, prefix + ".w_s", a.attn_dim, query);
  add_zeros(ps, prefix + ".b", a.attn_dim);
  ps.add(prefix + ".v", {a.attn_dim},
         uniform(rng, a.attn_dim, 1.0 / std::sqrt(static_cast<double>(a.attn_dim))));
  ps.add(prefix + ".g", {1}, {1.0 / std::sqrt(static_cast<double>(a.attn_dim))});
  ps.add(prefix + ".r", {1}, {a.r_init});
}

GruParams gru_params(const ParamStore& ps, const std::string& prefix, bool ln) {
  GruParams p{ps.get(prefix + ".w_ih"), ps.get(prefix + ".b_ih"),
              ps.get(prefix + ".w_hh"), ps.get(prefix + ".b_hh"), {}, {}};
  if (ln) {
    p.ln_gain = ps.get(prefix + ".ln_gain");
    p.ln_bias = ps.get(prefix + ".ln_bias");
  }
  return p;
}

}  // namespace

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  validate(cfg_);
  init_params(seed);
}

Model::Model(ModelConfig cfg, ParamStore params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  validate(cfg_);
  check_params();
}

void Model::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& e = cfg_.encoder;
  const auto& d = cfg_.decoder;
  for (std::size_t l = 0; l < e.layers; ++l)
    add_gru(params_, rng, "enc.gru" + std::to_string(l), l == 0 ? e.input_dim() : e.hidden,
            e.hidden, e.layer_norm);
  if (e.ce_branch == CeBranch::direct) {
    add_matrix(params_, rng, "enc.ce_out.w", e.align_classes, e.hidden);
    add_zeros(params_, "enc.ce_out.b", e.align_classes);
  } else if (e.ce_branch == CeBranch::mtl) {
    add_matrix(params_, rng, "enc.mtl.ce_proj.w", e.bottleneck(), e.hidden);
    add_zeros(params_, "enc.mtl.ce_proj.b", e.bottleneck());
    add_matrix(params_, rng, "enc.mtl.s2s_proj.w", e.bottleneck(), e.hidden);
    add_zeros(params_, "enc.mtl.s2s_proj.b", e.bottleneck());
    add_matrix(params_, rng, "enc.mtl.ce_out.w", e.align_classes, e.bottleneck());
    add_zeros(params_, "enc.mtl.ce_out.b", e.align_classes);
  }
  const std::size_t feat = e.output_dim();
  params_.add("dec.embed", {d.vocab, d.embed_dim},
              uniform(rng, d.vocab * d.embed_dim, 1.0 / std::sqrt(static_cast<double>(d.embed_dim))));
  for (std::size_t l = 0; l < d.layers; ++l)
    add_gru(params_, rng, "dec.gru" + std::to_string(l),
            l == 0 ? d.embed_dim + feat : d.hidden, d.hidden, d.layer_norm);
  if (d.readout_dim > 0) {
    add_matrix(params_, rng, "dec.readout.w", d.readout_dim, d.hidden + feat);
    add_zeros(params_, "dec.readout.b", d.readout_dim);
  }
  add_matrix(params_, rng, "dec.out.w", d.vocab, d.readout_dim > 0 ? d.readout_dim : d.hidden + feat);
  add_zeros(params_, "dec.out.b", d.vocab);
  add_energy(params_, rng, "att.mono", feat, d.hidden, cfg_.attention);
  add_energy(params_, rng, "att.chunk", feat, d.hidden, cfg_.attention);
}

void Model::check_params() const {
  Model reference(cfg_, 0);
  for (const auto& [name, t] : reference.params().all()) {
    require(params_.contains(name), [&] { return std::string("model parameters lack " + name); });
    require(params_.get(name).shape() == t.shape(), [&] { return std::string("parameter " + name + " has shape " + shape_str(params_.get(name).shape()) +
                ", config expects " + shape_str(t.shape())); });
  }
  require(params_.all().size() == reference.params().all().size(),
          "model parameters contain names the config does not use");
}

GruParams Model::encoder_layer(std::size_t l) const {
  return gru_params(params_, "enc.gru" + std::to_string(l), cfg_.encoder.layer_norm);
}

GruParams Model::decoder_layer(std::size_t l) const {
  return gru_params(params_, "dec.gru" + std::to_string(l), cfg_.decoder.layer_norm);
}

EncoderOutput Model::encode(const Tensor& frames, const RunOptions& run) const {
  const auto& e = cfg_.encoder;
  require(frames.dim() == 2 && frames.cols() == e.input_dim(), [&] { return std::string("encode: frames must be T x " + std::to_string(e.input_dim()) + ", got " +
              shape_str(frames.shape())); });
  require(frames.rows() >= 1, "encode: empty input");
  const std::size_t t = frames.rows();
  Tensor x = frames;
  for (std::size_t l = 0; l < e.layers; ++l) {
    GruParams p = encoder_layer(l);
    Tensor gx = linear(x, p.w_ih, p.b_ih);
    Tensor h = Tensor::zeros({e.hidden});
    std::vector<Tensor> outs;
    outs.reserve(t);
    for (std::size_t j = 0; j < t; ++j) {
      h = gru_step_projected(row(gx, j), h, p);
      outs.push_back(h);
    }
    x = stack_rows(outs);
    if (run.training && e.dropout > 0.0 && l + 1 < e.layers)
      x = dropout(x, e.dropout, *run.rng);
  }
  EncoderOutput out;
  out.states = x;
  out.s2s_features = x;
  if (e.ce_branch == CeBranch::direct) {
    out.ce_logits = linear(x, params_.get("enc.ce_out.w"), params_.get("enc.ce_out.b"));
  } else if (e.ce_branch == CeBranch::mtl) {
    Tensor ce = linear(x, params_.get("enc.mtl.ce_proj.w"), params_.get("enc.mtl.ce_proj.b"));
    Tensor s2s =
        linear(x, params_.get("enc.mtl.s2s_proj.w"), params_.get("enc.mtl.s2s_proj.b"));
    out.ce_logits = linear(ce, params_.get("enc.mtl.ce_out.w"), params_.get("enc.mtl.ce_out.b"));
    out.s2s_features = concat_cols(ce, s2s);
  }
  return out;
}

DecoderState Model::initial_state() const {
  DecoderState s;
  for (std::size_t l = 0; l < cfg_.decoder.layers; ++l)
    s.layers.push_back(Tensor::zeros({cfg_.decoder.hidden}));
  return s;
}

DecoderState Model::advance(int y_prev, const Tensor& context_prev,
                            const DecoderState& state, const RunOptions& run) const {
  const auto& d = cfg_.decoder;
  require(y_prev >= 0 && static_cast<std::size_t>(y_prev) < d.vocab, [&] { return std::string("decoder: token id " + std::to_string(y_prev) + " outside vocabulary of " +
              std::to_string(d.vocab)); });
  require(state.layers.size() == d.layers, "decoder: state has wrong depth");
  Tensor x = concat({row(params_.get("dec.embed"), static_cast<std::size_t>(y_prev)),
                     context_prev});
  DecoderState next;
  for (std::size_t l = 0; l < d.layers; ++l) {
    Tensor h = gru_step(x, state.layers[l], decoder_layer(l));
    next.layers.push_back(h);
    x = h;
    if (run.training && d.dropout > 0.0 && l + 1 < d.layers)
      x = dropout(x, d.dropout, *run.rng);
  }
  return next;
}

Tensor Model::readout(const DecoderState& state, const Tensor& context) const {
  Tensor x = concat({state.top(), context});
  if (cfg_.decoder.readout_dim > 0)
    x = tanh(linear_vec(x, params_.get("dec.readout.w"), params_.get("dec.readout.b")));
  return linear_vec(x, params_.get("dec.out.w"), params_.get("dec.out.b"));
}

std::pair<DecoderState, Tensor> Model::decode_step(int y_prev, const DecoderState& state,
                                                   const Tensor& context,
                                                   const RunOptions& run) const {
  DecoderState next = advance(y_prev, context, state, run);
  Tensor logits = readout(next, context);
  return {std::move(next), std::move(logits)};
}

ForwardResult forward_teacher_forced(const Model& model, const Tensor& frames,
                                     std::span<const int> tokens,
                                     const ForwardOptions& opt) {
  require(!tokens.empty(), "forward: empty target sequence");
  require(opt.alignment_limit.empty() || opt.alignment_limit.size() == tokens.size(),
          "forward: alignment limit length must equal the token count");
  require(!opt.run.training || opt.run.rng, "forward: training needs an RNG");
  const auto& cfg = model.config();
  const auto& ac = cfg.attention;

  ForwardResult res;
  res.enc = model.encode(frames, opt.run);
  const Tensor& h = res.enc.s2s_features;
  const std::size_t t = h.rows();

  auto mono = attention::energy_params(model.params(), "att.mono");
  auto chunk = attention::energy_params(model.params(), "att.chunk");
  Tensor mono_keys = attention::attention_keys(h, mono);
  Tensor chunk_keys = attention::attention_keys(h, chunk);

  DecoderState state = model.initial_state();
  Tensor context = Tensor::zeros({cfg.encoder.output_dim()});
  Tensor alpha_prev = attention::alignment_prior(t);
  std::vector<Tensor> logits, ps, betas;
  std::vector<double> keep;
  const bool noisy = opt.run.training && ac.noise && ac.noise_std > 0.0;

  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int y_prev = i == 0 ? kEos : tokens[i - 1];
    state = model.advance(y_prev, context, state, opt.run);
    Tensor e = attention::energy_from_keys(mono_keys, state.top(), mono);
    Tensor p = attention::selection_probs(e, noisy, ac.noise_std, opt.run.rng);
    keep.clear();
    if (!opt.alignment_limit.empty()) {
      keep.assign(t, 0.0);
      for (std::size_t j = 0; j < t && j <= opt.alignment_limit[i]; ++j) keep[j] = 1.0;
    }
    Tensor alpha = attention::expected_alignment_row(p, alpha_prev, ac.algorithm,
                                                     ac.clip_eps, keep);
    Tensor u = attention::energy_from_keys(chunk_keys, state.top(), chunk);
    Tensor beta = attention::chunkwise_attention_row(alpha, u, ac.chunk_width);
    context = attention::context_vector(beta, h);
    logits.push_back(model.readout(state, context));
    ps.push_back(p);
    res.alpha_rows.push_back(alpha);
    betas.push_back(beta);
    alpha_prev = alpha;
  }
  res.logits = stack_rows(logits);
  res.p = stack_rows(ps);
  res.alpha = stack_rows(res.alpha_rows);
  res.beta = stack_rows(betas);
  return res;
}

}  // namespace mocha
