#include "mocha/objectives.hpp"

#include "mocha/attention.hpp"
#include "mocha/errors.hpp"

namespace mocha::objectives {

using namespace ag;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::mtl_ce: return "mtl-ce";
    case Mode::pt_ce_stage1: return "pt-ce-stage1";
    case Mode::pt_ce_stage2: return "pt-ce-stage2";
    case Mode::decot: return "decot";
    case Mode::minlt: return "minlt";
    case Mode::decot_minlt: return "decot-minlt";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::baseline, Mode::mtl_ce, Mode::pt_ce_stage1, Mode::pt_ce_stage2,
                 Mode::decot, Mode::minlt, Mode::decot_minlt})
    if (to_string(m) == s) return m;
  if (s == "decot+minlt") return Mode::decot_minlt;
  throw ContractViolation("unknown objective mode '" + s + "'");
}

bool uses_decot(Mode m) { return m == Mode::decot || m == Mode::decot_minlt; }
bool uses_minlt(Mode m) { return m == Mode::minlt || m == Mode::decot_minlt; }
bool uses_framewise_ce(Mode m) { return m == Mode::mtl_ce || m == Mode::pt_ce_stage1; }
bool needs_boundaries(Mode m) { return uses_decot(m) || uses_minlt(m); }

bool ObjectiveConfig::quantity_active() const {
  return quantity_loss.value_or(uses_decot(mode));
}

void validate(const ObjectiveConfig& cfg) {
  require(cfg.lambda_ce >= 0.0 && cfg.lambda_ce <= 1.0, "lambda_ce must be in [0, 1]");
  require(cfg.lambda_qua >= 0.0, "lambda_qua must be >= 0");
  require(cfg.lambda_minlt >= 0.0, "lambda_minlt must be >= 0");
}

Tensor framewise_ce(const Tensor& ce_logits, std::span<const int> align) {
  require(ce_logits.defined(), "framewise_ce: no CE branch output");
  require(ce_logits.rows() == align.size(), [&] { return std::string("framewise_ce: " + std::to_string(align.size()) + " labels for " +
              std::to_string(ce_logits.rows()) + " frames"); });
  return ag::label_smoothed_ce(ce_logits, align, 0.0);
}

Tensor mtl_loss(const Tensor& s2s, const Tensor& ce_logits, std::span<const int> align,
                double lambda_ce) {
  require(lambda_ce >= 0.0 && lambda_ce <= 1.0, "mtl_loss: lambda_ce must be in [0, 1]");
  Tensor ce = framewise_ce(ce_logits, align);
  if (lambda_ce == 0.0) return s2s;
  if (lambda_ce == 1.0) return ce;
  return add(scale(s2s, 1.0 - lambda_ce), scale(ce, lambda_ce));
}

std::vector<std::size_t> decot_limits(std::span<const int> boundaries, std::size_t delta) {
  std::vector<std::size_t> lim;
  lim.reserve(boundaries.size());
  for (int b : boundaries) {
    require(b >= 1, "decot: gold boundaries must be >= 1");
    lim.push_back(static_cast<std::size_t>(b) + delta - 1);
  }
  return lim;
}

Tensor decot_alignment(const Tensor& p, std::span<const int> boundaries,
                       std::size_t delta, double clip_eps, AlignmentAlgorithm algo) {
  require(p.dim() == 2, "decot_alignment: p must be L x T");
  require(boundaries.size() == p.rows(),
          "decot_alignment: need one gold boundary per token");
  const std::size_t t = p.cols();
  const auto lim = decot_limits(boundaries, delta);
  Tensor prev = attention::alignment_prior(t);
  std::vector<Tensor> rows;
  std::vector<double> keep(t);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < t; ++j) keep[j] = j <= lim[i] ? 1.0 : 0.0;
    prev = attention::expected_alignment_row(row(p, i), prev, algo, clip_eps, keep);
    rows.push_back(prev);
  }
  return stack_rows(rows);
}

Tensor quantity_loss(const Tensor& alpha, std::size_t tokens) {
  return abs(add_const(scale(sum(alpha), -1.0), static_cast<double>(tokens)));
}

Tensor minlt_loss(const Tensor& alpha, std::span<const int> boundaries) {
  require(alpha.dim() == 2, "minlt_loss: alpha must be L x T");
  const std::size_t l = alpha.rows(), t = alpha.cols();
  require(boundaries.size() == l, "minlt_loss: need one boundary per token");
  require(l > 0, "minlt_loss: empty alignment");
  std::vector<double> positions(t);
  for (std::size_t j = 0; j < t; ++j) positions[j] = static_cast<double>(j + 1);
  Tensor pos = Tensor::vector(positions);
  Tensor expected = matvec(alpha, pos);  // L expected boundaries
  std::vector<double> gold(boundaries.begin(), boundaries.end());
  Tensor gap = abs(sub(expected, Tensor::vector(gold)));
  return scale(sum(gap), 1.0 / static_cast<double>(l));
}

Tensor total_loss(const LossComponents& c, const ObjectiveConfig& cfg) {
  auto need = [&](const Tensor& t, const char* what) {
    require(t.defined(), [&] { return std::string(std::string("total_loss: mode ") + to_string(cfg.mode) +
                             " needs the " + what + " component"); });
  };
  Tensor loss;
  switch (cfg.mode) {
    case Mode::pt_ce_stage1:
      need(c.framewise_ce, "framewise CE");
      return c.framewise_ce;
    case Mode::mtl_ce:
      need(c.s2s, "S2S");
      need(c.framewise_ce, "framewise CE");
      if (cfg.lambda_ce == 0.0) loss = c.s2s;
      else if (cfg.lambda_ce == 1.0) loss = c.framewise_ce;
      else
        loss = add(scale(c.s2s, 1.0 - cfg.lambda_ce), scale(c.framewise_ce, cfg.lambda_ce));
      break;
    default:
      need(c.s2s, "S2S");
      loss = c.s2s;
      break;
  }
  if (cfg.quantity_active() && cfg.lambda_qua > 0.0) {
    need(c.quantity, "quantity");
    loss = add(loss, scale(c.quantity, cfg.lambda_qua));
  }
  if (uses_minlt(cfg.mode) && cfg.lambda_minlt > 0.0) {
    need(c.minlt, "MinLT");
    loss = add(loss, scale(c.minlt, cfg.lambda_minlt));
  }
  return loss;
}

}  // namespace mocha::objectives
