#include "mocha/streaming.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mocha/errors.hpp"
#include "mocha/kernels.hpp"

namespace mocha::streaming {

using namespace ag;

StreamingEncoder::StreamingEncoder(const Model& model, const Tensor& frames)
    : model_(model), input_(frames) {
  const auto& cfg = model.config();
  require(frames.dim() == 2 && frames.cols() == cfg.encoder.input_dim() && frames.rows() >= 1, [&] { return std::string("streaming: frames must be T x " + std::to_string(cfg.encoder.input_dim())); });
  t_ = frames.rows();
  feat_dim_ = cfg.encoder.output_dim();
  for (std::size_t l = 0; l < cfg.encoder.layers; ++l) {
    layers_.push_back(model.encoder_layer(l));
    hidden_.emplace_back(cfg.encoder.hidden, 0.0);
  }
  features_.assign(t_ * feat_dim_, 0.0);
  mono_ = attention::energy_params(model.params(), "att.mono");
  chunk_ = attention::energy_params(model.params(), "att.chunk");
  lookahead_ = mono_.lookahead();
  const std::size_t a = cfg.attention.attn_dim;
  mono_keys_.assign(t_ * a, 0.0);
  chunk_keys_.assign(t_ * a, 0.0);
  mono_ready_.assign(t_, 0);
  chunk_ready_.assign(t_, 0);
}

void StreamingEncoder::note(std::size_t input_row) {
  const long r = static_cast<long>(input_row);
  high_water_ = std::max(high_water_, r);
  probe_ = std::max(probe_, r);
}

void StreamingEncoder::advance_encoder(std::size_t j) {
  const auto& e = model_.config().encoder;
  const std::size_t hsz = e.hidden;
  std::vector<double> gx(3 * hsz), gh(3 * hsz), r(hsz), z(hsz), n(hsz), cell(hsz),
      xhat(hsz), next(hsz);
  while (encoded_ <= j) {
    const std::size_t f = encoded_;
    std::span<const double> x = input_.data().subspan(f * input_.cols(), input_.cols());
    std::vector<double> in(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const GruParams& p = layers_[l];
      kernels::affine(p.w_ih.data().data(), p.b_ih.data().data(), in.data(), gx.data(),
                      3 * hsz, in.size());
      kernels::gru_cell(gx.data(), hidden_[l].data(), p.w_hh.data().data(),
                        p.b_hh.data().data(), hsz, gh.data(), r.data(), z.data(), n.data(),
                        cell.data());
      if (p.ln_gain.defined())
        kernels::layer_norm(cell.data(), p.ln_gain.data().data(), p.ln_bias.data().data(),
                            hsz, 1e-5, xhat.data(), next.data());
      else
        next = cell;
      hidden_[l] = next;
      in = next;
    }
    double* out = features_.data() + f * feat_dim_;
    const auto& ps = model_.params();
    if (e.ce_branch == CeBranch::mtl) {
      const std::size_t b = e.bottleneck();
      const Tensor& cw = ps.get("enc.mtl.ce_proj.w");
      const Tensor& cb = ps.get("enc.mtl.ce_proj.b");
      const Tensor& sw = ps.get("enc.mtl.s2s_proj.w");
      const Tensor& sb = ps.get("enc.mtl.s2s_proj.b");
      kernels::affine(cw.data().data(), cb.data().data(), in.data(), out, b, hsz);
      kernels::affine(sw.data().data(), sb.data().data(), in.data(), out + b, b, hsz);
    } else {
      std::copy(in.begin(), in.end(), out);
    }
    ++encoded_;
  }
}

const double* StreamingEncoder::features(std::size_t j) {
  require(j < t_, "streaming: frame index out of range");
  note(j);
  if (j >= encoded_) advance_encoder(j);
  return features_.data() + j * feat_dim_;
}

const double* StreamingEncoder::key(std::size_t j, const attention::EnergyParams& p,
                                    std::vector<double>& store, std::vector<char>& ready) {
  require(j < t_, "streaming: key index out of range");
  const std::size_t a = model_.config().attention.attn_dim;
  const std::size_t last = std::min(j + lookahead_, t_ - 1);
  note(last);
  if (!ready[j]) {
    features(last);
    std::vector<double> conv(feat_dim_);
    const double* src = features_.data() + j * feat_dim_;
    if (p.conv.defined()) {
      kernels::conv1d_at(features_.data(), t_, feat_dim_, p.conv.data().data(),
                         p.conv.shape()[0], feat_dim_, j, conv.data());
      src = conv.data();
    }
    kernels::affine(p.w_h.data().data(), nullptr, src, store.data() + j * a, a, feat_dim_);
    ready[j] = 1;
  }
  return store.data() + j * a;
}

const double* StreamingEncoder::mono_key(std::size_t j) {
  return key(j, mono_, mono_keys_, mono_ready_);
}

const double* StreamingEncoder::chunk_key(std::size_t j) {
  return key(j, chunk_, chunk_keys_, chunk_ready_);
}

Query make_query(const attention::EnergyParams& p, const Tensor& state) {
  NoGradGuard guard;
  Query q;
  const std::size_t a = p.w_s.rows();
  q.proj.resize(a);
  kernels::affine(p.w_s.data().data(), p.b.data().data(), state.data().data(), q.proj.data(),
                  a, p.w_s.cols());
  q.v_unit = attention::normalized(p.v).values();
  q.g = p.g.item();
  q.r = p.r.item();
  return q;
}

namespace {

double energy(const double* key, const Query& q) {
  const std::size_t a = q.proj.size();
  return attention::energy_at({key, a}, q.proj, q.v_unit, q.g, q.r);
}

}  // namespace

double mono_energy(StreamingEncoder& enc, const Model& model, const Tensor& state,
                   std::size_t j) {
  Query q = make_query(attention::energy_params(model.params(), "att.mono"), state);
  return energy(enc.mono_key(j), q);
}

AttendResult attend(StreamingEncoder& enc, const Model& model, const Tensor& state,
                    std::size_t j_start) {
  NoGradGuard guard;
  const auto& ps = model.params();
  const std::size_t d = enc.feature_dim();
  enc.begin_probe();
  AttendResult res;
  Query mono = make_query(attention::energy_params(ps, "att.mono"), state);
  for (std::size_t j = j_start; j < enc.frames(); ++j) {
    if (kernels::sigmoid(energy(enc.mono_key(j), mono)) >= 0.5) {
      res.boundary = j;
      break;
    }
  }
  std::vector<double> ctx(d, 0.0);
  if (res.boundary) {
    const std::size_t j = *res.boundary;
    const std::size_t w = model.config().attention.chunk_width;
    const std::size_t lo = j + 1 >= w ? j + 1 - w : 0;
    Query chunk = make_query(attention::energy_params(ps, "att.chunk"), state);
    std::vector<double> u(j - lo + 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = lo; k <= j; ++k) {
      u[k - lo] = energy(enc.chunk_key(k), chunk);
      mx = std::max(mx, u[k - lo]);
    }
    double z = 0.0;
    for (auto& v : u) z += (v = std::exp(v - mx));
    for (std::size_t k = lo; k <= j; ++k) {
      const double beta = u[k - lo] / z;
      const double* h = enc.features(k);
      for (std::size_t c = 0; c < d; ++c) ctx[c] += beta * h[c];
    }
  }
  res.context = Tensor::vector(std::move(ctx));
  res.max_read = enc.probe();
  return res;
}

HardPass teacher_forced_hard(const Model& model, const Tensor& frames,
                             const std::vector<int>& tokens) {
  require(!tokens.empty(), "teacher_forced_hard: empty target sequence");
  NoGradGuard guard;
  StreamingEncoder enc(model, frames);
  const int t = static_cast<int>(enc.frames());
  HardPass out;
  DecoderState state = model.initial_state();
  Tensor context = Tensor::zeros({enc.feature_dim()});
  std::size_t ptr = 0;
  bool exhausted = false;
  std::vector<Tensor> logits;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int y_prev = i == 0 ? kEos : tokens[i - 1];
    state = model.advance(y_prev, context, state);
    if (exhausted) {
      context = Tensor::zeros({enc.feature_dim()});
      out.boundaries.push_back(t);
      out.max_read.push_back(enc.high_water());
    } else {
      AttendResult a = attend(enc, model, state.top(), ptr);
      context = a.context;
      out.max_read.push_back(a.max_read);
      if (a.boundary) {
        ptr = *a.boundary;
        out.boundaries.push_back(static_cast<int>(ptr) + 1);
      } else {
        exhausted = true;
        out.boundaries.push_back(t);
      }
    }
    logits.push_back(model.readout(state, context));
  }
  out.logits = stack_rows(logits);
  return out;
}

}  // namespace mocha::streaming
