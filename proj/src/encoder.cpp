#include "spot/encoder.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "spot/errors.hpp"
#include "spot/kernels.hpp"
#include "spot/rng.hpp"

namespace spot {
namespace {

constexpr double kLayerNormEps = 1e-6;
constexpr std::uint32_t kBundleVersion = 1;

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + x * pdf;
}

// Row-wise layer norm: out = g ⊙ xhat + b.
void layer_norm(const double* x, const double* g, const double* b, double* xhat, double* rstd, double* out, int rows,
                int d) {
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + static_cast<long>(r) * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += xr[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= d;
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = rs;
    double* xh = xhat + static_cast<long>(r) * d;
    double* o = out + static_cast<long>(r) * d;
    for (int i = 0; i < d; ++i) {
      xh[i] = (xr[i] - mean) * rs;
      o[i] = g[i] * xh[i] + b[i];
    }
  }
}

// Accumulates dg, db, and dx (+=) given dout.
void layer_norm_backward(const double* dout, const double* g, const double* xhat, const double* rstd, double* dx,
                         double* dg, double* db, int rows, int d, std::vector<double>& scratch) {
  scratch.resize(d);
  for (int r = 0; r < rows; ++r) {
    const double* dor = dout + static_cast<long>(r) * d;
    const double* xh = xhat + static_cast<long>(r) * d;
    double mean_dxh = 0.0;
    double mean_dxh_xh = 0.0;
    for (int i = 0; i < d; ++i) {
      dg[i] += dor[i] * xh[i];
      db[i] += dor[i];
      scratch[i] = dor[i] * g[i];
      mean_dxh += scratch[i];
      mean_dxh_xh += scratch[i] * xh[i];
    }
    mean_dxh /= d;
    mean_dxh_xh /= d;
    double* dxr = dx + static_cast<long>(r) * d;
    for (int i = 0; i < d; ++i) dxr[i] += rstd[r] * (scratch[i] - mean_dxh - xh[i] * mean_dxh_xh);
  }
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (depth < 1 || width < 1 || heads < 1 || mlp_ratio < 1 || num_classes < 1 || token_dim < 1) {
    throw std::invalid_argument("encoder: all counts must be >= 1");
  }
  if (width % heads != 0) throw std::invalid_argument("encoder: width must be divisible by heads");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw std::invalid_argument("encoder: label_smoothing must be in [0,1)");
}

ParamLayout::ParamLayout(const EncoderConfig& c) {
  c.validate();
  const int d = c.width;
  const int hid = c.hidden();
  auto add = [&](std::string name, std::vector<int> dims) {
    std::size_t n = 1;
    for (int v : dims) n *= static_cast<std::size_t>(v);
    tensors.push_back({std::move(name), std::move(dims), total, n});
    const std::size_t off = total;
    total += n;
    return off;
  };
  patch_w = add("patch.weight", {d, c.token_dim});
  patch_b = add("patch.bias", {d});
  cls = add("cls", {d});
  for (int l = 0; l < c.depth; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    Block b{};
    b.ln1_g = add(p + "norm1.weight", {d});
    b.ln1_b = add(p + "norm1.bias", {d});
    b.qkv_w = add(p + "attn.qkv.weight", {3 * d, d});
    b.qkv_b = add(p + "attn.qkv.bias", {3 * d});
    b.proj_w = add(p + "attn.proj.weight", {d, d});
    b.proj_b = add(p + "attn.proj.bias", {d});
    b.ln2_g = add(p + "norm2.weight", {d});
    b.ln2_b = add(p + "norm2.bias", {d});
    b.fc1_w = add(p + "mlp.fc1.weight", {hid, d});
    b.fc1_b = add(p + "mlp.fc1.bias", {hid});
    b.fc2_w = add(p + "mlp.fc2.weight", {d, hid});
    b.fc2_b = add(p + "mlp.fc2.bias", {d});
    blocks.push_back(b);
  }
  lnf_g = add("norm.weight", {d});
  lnf_b = add("norm.bias", {d});
  head_w = add("head.weight", {c.num_classes, d});
  head_b = add("head.bias", {c.num_classes});
}

EncoderParams::EncoderParams(const EncoderConfig& config)
    : config_(config), layout_(config), values_(layout_.total, 0.0), generation_(next_generation()) {
  const int d = config.width;
  auto ones = [&](std::size_t off) { std::fill_n(values_.begin() + static_cast<long>(off), d, 1.0); };
  for (const auto& b : layout_.blocks) {
    ones(b.ln1_g);
    ones(b.ln2_g);
  }
  ones(layout_.lnf_g);
}

EncoderParams::EncoderParams(const EncoderParams& other)
    : config_(other.config_), layout_(other.layout_), values_(other.values_), generation_(next_generation()) {}

EncoderParams& EncoderParams::operator=(const EncoderParams& other) {
  if (this != &other) {
    config_ = other.config_;
    layout_ = other.layout_;
    values_ = other.values_;
    generation_ = next_generation();
  }
  return *this;
}

std::span<double> EncoderParams::mutable_values() {
  generation_ = next_generation();
  return values_;
}

EncoderParams EncoderParams::initialize(const EncoderConfig& config, std::uint64_t seed) {
  EncoderParams p(config);
  const auto& L = p.layout_;
  CounterRng rng(seed);
  auto fill_normal = [&](std::size_t off, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i) p.values_[off + i] = stddev * rng.normal();
  };
  const int d = config.width;
  const int hid = config.hidden();
  const double residual_scale = 1.0 / std::sqrt(2.0 * config.depth);
  fill_normal(L.patch_w, static_cast<std::size_t>(d) * config.token_dim, 1.0 / std::sqrt(config.token_dim));
  fill_normal(L.cls, d, 0.02);
  for (const auto& b : L.blocks) {
    fill_normal(b.qkv_w, 3ull * d * d, 1.0 / std::sqrt(d));
    fill_normal(b.proj_w, 1ull * d * d, residual_scale / std::sqrt(d));
    fill_normal(b.fc1_w, 1ull * hid * d, 1.0 / std::sqrt(d));
    fill_normal(b.fc2_w, 1ull * d * hid, residual_scale / std::sqrt(hid));
  }
  fill_normal(L.head_w, static_cast<std::size_t>(config.num_classes) * d, 0.02);
  return p;
}

int ForwardTrace::prediction() const {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

double cross_entropy(std::span<const double> logits, int label, double smoothing) {
  const int c = static_cast<int>(logits.size());
  if (label < 0 || label >= c) throw std::invalid_argument("cross_entropy: invalid label");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double log_z = mx + std::log(sum);
  double loss = 0.0;
  for (int i = 0; i < c; ++i) {
    const double q = (i == label ? 1.0 - smoothing : 0.0) + smoothing / c;
    if (q != 0.0) loss -= q * (logits[i] - log_z);
  }
  return loss;
}

ForwardTrace forward(const EncoderParams& params, std::span<const Token> tokens) {
  const auto& cfg = params.config();
  const auto& L = params.layout();
  if (tokens.empty()) throw std::invalid_argument("forward: at least one token required");
  const int m = static_cast<int>(tokens.size());
  const int n = m + 1;
  const int d = cfg.width;
  const int hid = cfg.hidden();
  const int heads = cfg.heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardTrace t;
  t.params_ = &params;
  t.generation_ = params.generation();
  t.num_tokens_ = m;
  t.features_.resize(static_cast<std::size_t>(m) * cfg.token_dim);
  for (int i = 0; i < m; ++i) {
    if (static_cast<int>(tokens[i].features.size()) != cfg.token_dim) throw DataError("forward: token feature size mismatch");
    if (static_cast<int>(tokens[i].pos_embedding.size()) != d) throw DataError("forward: positional embedding size mismatch");
    std::copy(tokens[i].features.begin(), tokens[i].features.end(), t.features_.begin() + static_cast<long>(i) * cfg.token_dim);
  }

  std::vector<double> x(static_cast<std::size_t>(n) * d);
  std::copy_n(params.at(L.cls), d, x.begin());
  kernels::linear(t.features_, std::span(params.at(L.patch_w), static_cast<std::size_t>(d) * cfg.token_dim),
                  std::span(params.at(L.patch_b), d), std::span(x).subspan(d), m, cfg.token_dim, d);
  for (int i = 0; i < m; ++i) kernels::axpy(1.0, tokens[i].pos_embedding.data(), x.data() + static_cast<long>(i + 1) * d, d);

  t.layers_.resize(cfg.depth);
  for (int l = 0; l < cfg.depth; ++l) {
    const auto& B = L.blocks[l];
    auto& c = t.layers_[l];
    c.x_in = x;
    c.ln1_xhat.resize(x.size());
    c.ln1_rstd.resize(n);
    c.ln1_out.resize(x.size());
    layer_norm(x.data(), params.at(B.ln1_g), params.at(B.ln1_b), c.ln1_xhat.data(), c.ln1_rstd.data(), c.ln1_out.data(), n, d);

    c.qkv.resize(static_cast<std::size_t>(n) * 3 * d);
    kernels::linear(c.ln1_out, std::span(params.at(B.qkv_w), 3ull * d * d), std::span(params.at(B.qkv_b), 3ull * d), c.qkv,
                    n, d, 3 * d);

    c.attn.assign(static_cast<std::size_t>(heads) * n * n, 0.0);
    c.ctx.assign(static_cast<std::size_t>(n) * d, 0.0);
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < n; ++i) {
        const double* q = c.qkv.data() + static_cast<long>(i) * 3 * d + h * dh;
        double* p = c.attn.data() + (static_cast<long>(h) * n + i) * n;
        double mx = -INFINITY;
        for (int j = 0; j < n; ++j) {
          const double* k = c.qkv.data() + static_cast<long>(j) * 3 * d + d + h * dh;
          p[j] = kernels::dot(q, k, dh) * scale;
          mx = std::max(mx, p[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
          p[j] = std::exp(p[j] - mx);
          sum += p[j];
        }
        double* out = c.ctx.data() + static_cast<long>(i) * d + h * dh;
        for (int j = 0; j < n; ++j) {
          p[j] /= sum;
          kernels::axpy(p[j], c.qkv.data() + static_cast<long>(j) * 3 * d + 2 * d + h * dh, out, dh);
        }
      }
    }

    c.x_mid.resize(x.size());
    kernels::linear(c.ctx, std::span(params.at(B.proj_w), 1ull * d * d), std::span(params.at(B.proj_b), d), c.x_mid, n, d, d);
    for (std::size_t i = 0; i < x.size(); ++i) c.x_mid[i] += x[i];

    c.ln2_xhat.resize(x.size());
    c.ln2_rstd.resize(n);
    c.ln2_out.resize(x.size());
    layer_norm(c.x_mid.data(), params.at(B.ln2_g), params.at(B.ln2_b), c.ln2_xhat.data(), c.ln2_rstd.data(),
               c.ln2_out.data(), n, d);

    c.hidden_pre.resize(static_cast<std::size_t>(n) * hid);
    kernels::linear(c.ln2_out, std::span(params.at(B.fc1_w), 1ull * hid * d), std::span(params.at(B.fc1_b), hid),
                    c.hidden_pre, n, d, hid);
    c.hidden_act.resize(c.hidden_pre.size());
    for (std::size_t i = 0; i < c.hidden_pre.size(); ++i) c.hidden_act[i] = gelu(c.hidden_pre[i]);

    kernels::linear(c.hidden_act, std::span(params.at(B.fc2_w), 1ull * d * hid), std::span(params.at(B.fc2_b), d), x, n,
                    hid, d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += c.x_mid[i];
  }

  t.final_xhat_.resize(d);
  t.cls_feature.resize(d);
  layer_norm(x.data(), params.at(L.lnf_g), params.at(L.lnf_b), t.final_xhat_.data(), &t.final_rstd_, t.cls_feature.data(),
             1, d);
  t.logits.resize(cfg.num_classes);
  kernels::linear(t.cls_feature, std::span(params.at(L.head_w), static_cast<std::size_t>(cfg.num_classes) * d),
                  std::span(params.at(L.head_b), cfg.num_classes), t.logits, 1, d, cfg.num_classes);
  check_finite(t.logits, "forward");
  t.probabilities = softmax(t.logits);
  return t;
}

struct EncoderBackward {
  static void run(const ForwardTrace& t, int label, std::vector<double>* param_grad, TokenGradients* token_grad) {
    if (!t.params_) throw std::logic_error("backward: empty trace");
    const EncoderParams& params = *t.params_;
    if (params.generation() != t.generation_) throw std::logic_error("backward: stale trace (parameters changed since forward)");
    const auto& cfg = params.config();
    const auto& L = params.layout();
    if (label < 0 || label >= cfg.num_classes) throw std::invalid_argument("backward: invalid label");
    const int m = t.num_tokens_;
    const int n = m + 1;
    const int d = cfg.width;
    const int hid = cfg.hidden();
    const int heads = cfg.heads;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> local;
    std::vector<double>& g = param_grad ? *param_grad : local;
    g.assign(L.total, 0.0);
    auto gp = [&](std::size_t off) { return g.data() + off; };
    auto gspan = [&](std::size_t off, std::size_t len) { return std::span(g.data() + off, len); };

    std::vector<double> dlogits(cfg.num_classes);
    for (int i = 0; i < cfg.num_classes; ++i) {
      const double q = (i == label ? 1.0 - cfg.label_smoothing : 0.0) + cfg.label_smoothing / cfg.num_classes;
      dlogits[i] = t.probabilities[i] - q;
    }

    kernels::linear_grad_weight(dlogits, t.cls_feature, gspan(L.head_w, static_cast<std::size_t>(cfg.num_classes) * d),
                                gspan(L.head_b, cfg.num_classes), 1, d, cfg.num_classes);
    std::vector<double> dcls(d, 0.0);
    kernels::linear_grad_input(dlogits, std::span(params.at(L.head_w), static_cast<std::size_t>(cfg.num_classes) * d), dcls,
                               1, d, cfg.num_classes);

    std::vector<double> scratch;
    std::vector<double> dx(static_cast<std::size_t>(n) * d, 0.0);
    layer_norm_backward(dcls.data(), params.at(L.lnf_g), t.final_xhat_.data(), &t.final_rstd_, dx.data(), gp(L.lnf_g),
                        gp(L.lnf_b), 1, d, scratch);

    std::vector<double> dhidden, dln, dqkv, dctx, dattn_row;
    for (int l = cfg.depth - 1; l >= 0; --l) {
      const auto& B = L.blocks[l];
      const auto& c = t.layers_[l];

      // x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
      dhidden.assign(static_cast<std::size_t>(n) * hid, 0.0);
      kernels::linear_grad_weight(dx, c.hidden_act, gspan(B.fc2_w, 1ull * d * hid), gspan(B.fc2_b, d), n, hid, d);
      kernels::linear_grad_input(dx, std::span(params.at(B.fc2_w), 1ull * d * hid), dhidden, n, hid, d);
      for (std::size_t i = 0; i < dhidden.size(); ++i) dhidden[i] *= gelu_grad(c.hidden_pre[i]);
      kernels::linear_grad_weight(dhidden, c.ln2_out, gspan(B.fc1_w, 1ull * hid * d), gspan(B.fc1_b, hid), n, d, hid);
      dln.assign(static_cast<std::size_t>(n) * d, 0.0);
      kernels::linear_grad_input(dhidden, std::span(params.at(B.fc1_w), 1ull * hid * d), dln, n, d, hid);
      // dx now holds ∂L/∂x_mid (residual path) plus the norm path.
      layer_norm_backward(dln.data(), params.at(B.ln2_g), c.ln2_xhat.data(), c.ln2_rstd.data(), dx.data(), gp(B.ln2_g),
                          gp(B.ln2_b), n, d, scratch);

      // x_mid = x_in + proj(attn(ln1(x_in)))
      kernels::linear_grad_weight(dx, c.ctx, gspan(B.proj_w, 1ull * d * d), gspan(B.proj_b, d), n, d, d);
      dctx.assign(static_cast<std::size_t>(n) * d, 0.0);
      kernels::linear_grad_input(dx, std::span(params.at(B.proj_w), 1ull * d * d), dctx, n, d, d);

      dqkv.assign(static_cast<std::size_t>(n) * 3 * d, 0.0);
      dattn_row.resize(n);
      for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n; ++i) {
          const double* p = c.attn.data() + (static_cast<long>(h) * n + i) * n;
          const double* dout = dctx.data() + static_cast<long>(i) * d + h * dh;
          double weighted = 0.0;
          for (int j = 0; j < n; ++j) {
            const double* v = c.qkv.data() + static_cast<long>(j) * 3 * d + 2 * d + h * dh;
            dattn_row[j] = kernels::dot(dout, v, dh);
            weighted += p[j] * dattn_row[j];
            kernels::axpy(p[j], dout, dqkv.data() + static_cast<long>(j) * 3 * d + 2 * d + h * dh, dh);
          }
          const double* q = c.qkv.data() + static_cast<long>(i) * 3 * d + h * dh;
          double* dq = dqkv.data() + static_cast<long>(i) * 3 * d + h * dh;
          for (int j = 0; j < n; ++j) {
            const double ds = p[j] * (dattn_row[j] - weighted) * scale;
            if (ds == 0.0) continue;
            const double* k = c.qkv.data() + static_cast<long>(j) * 3 * d + d + h * dh;
            kernels::axpy(ds, k, dq, dh);
            kernels::axpy(ds, q, dqkv.data() + static_cast<long>(j) * 3 * d + d + h * dh, dh);
          }
        }
      }

      kernels::linear_grad_weight(dqkv, c.ln1_out, gspan(B.qkv_w, 3ull * d * d), gspan(B.qkv_b, 3ull * d), n, d, 3 * d);
      dln.assign(static_cast<std::size_t>(n) * d, 0.0);
      kernels::linear_grad_input(dqkv, std::span(params.at(B.qkv_w), 3ull * d * d), dln, n, d, 3 * d);
      layer_norm_backward(dln.data(), params.at(B.ln1_g), c.ln1_xhat.data(), c.ln1_rstd.data(), dx.data(), gp(B.ln1_g),
                          gp(B.ln1_b), n, d, scratch);
    }

    for (int i = 0; i < d; ++i) g[L.cls + i] += dx[i];
    const auto dtok = std::span<const double>(dx).subspan(d);
    kernels::linear_grad_weight(dtok, t.features_, gspan(L.patch_w, static_cast<std::size_t>(d) * cfg.token_dim),
                                gspan(L.patch_b, d), m, cfg.token_dim, d);
    if (token_grad) {
      token_grad->features.assign(m, std::vector<double>(cfg.token_dim, 0.0));
      token_grad->pos_embedding.assign(m, std::vector<double>(d, 0.0));
      for (int i = 0; i < m; ++i) {
        const auto row = dtok.subspan(static_cast<std::size_t>(i) * d, d);
        std::copy(row.begin(), row.end(), token_grad->pos_embedding[i].begin());
        kernels::linear_grad_input(row, std::span(params.at(L.patch_w), static_cast<std::size_t>(d) * cfg.token_dim),
                                   token_grad->features[i], 1, cfg.token_dim, d);
      }
    }
  }
};

void backward(const ForwardTrace& trace, int label, std::vector<double>* param_grad, TokenGradients* token_grad) {
  EncoderBackward::run(trace, label, param_grad, token_grad);
}

std::vector<double> backward_params(const ForwardTrace& trace, int label) {
  std::vector<double> g;
  EncoderBackward::run(trace, label, &g, nullptr);
  return g;
}

TokenGradients backward_tokens(const ForwardTrace& trace, int label) {
  TokenGradients tg;
  EncoderBackward::run(trace, label, nullptr, &tg);
  return tg;
}

PositionGradient position_gradient(const EncoderParams& params, const Image& image, std::span<const Point> placements,
                                   int label, const Tokenizer& tokenizer, const PositionGradientOptions& options) {
  validate_placements(placements, image.height(), image.width());
  const int k = tokenizer.config().window;
  const int m = static_cast<int>(placements.size());
  std::vector<Token> tokens(m);
  std::vector<std::vector<double>> patch_jac(m);
  for (int i = 0; i < m; ++i) {
    auto pj = patch_position_jacobian(image, placements[i], k);
    tokens[i] = {std::move(pj.features), placements[i], tokenizer.embedding()(placements[i])};
    patch_jac[i] = std::move(pj.jacobian);
  }
  const ForwardTrace trace = forward(params, tokens);
  PositionGradient out;
  out.loss = cross_entropy(trace.logits, label, params.config().label_smoothing);
  out.logits = trace.logits;
  out.prediction = trace.prediction();
  TokenGradients tg;
  backward(trace, label, nullptr, &tg);
  out.gradient.assign(m, Point{});
  for (int i = 0; i < m; ++i) {
    double gx = 0.0, gy = 0.0;
    if (options.feature_path) {
      const auto& f = tg.features[i];
      const auto& J = patch_jac[i];
      for (std::size_t r = 0; r < f.size(); ++r) {
        gx += f[r] * J[2 * r];
        gy += f[r] * J[2 * r + 1];
      }
    }
    if (options.embedding_path) {
      const auto pe_jac = tokenizer.embedding().jacobian(placements[i]);
      const auto& e = tg.pos_embedding[i];
      for (std::size_t r = 0; r < e.size(); ++r) {
        gx += e[r] * pe_jac[2 * r];
        gy += e[r] * pe_jac[2 * r + 1];
      }
    }
    if (!std::isfinite(gx) || !std::isfinite(gy)) throw NumericError("position_gradient: non-finite gradient");
    out.gradient[i] = {gx, gy};
  }
  return out;
}

Classification classify(const EncoderParams& params, const Image& image, std::span<const Point> placements, int label,
                        const Tokenizer& tokenizer) {
  const auto tokens = tokenizer(image, placements);
  const ForwardTrace trace = forward(params, tokens);
  Classification c;
  c.loss = label >= 0 ? cross_entropy(trace.logits, label, params.config().label_smoothing) : 0.0;
  c.prediction = trace.prediction();
  c.logits = trace.logits;
  c.cls_feature = trace.cls_feature;
  return c;
}

namespace {

nlohmann::json config_to_json(const EncoderConfig& c, const TokenizerConfig& t) {
  return {{"encoder",
           {{"depth", c.depth},
            {"width", c.width},
            {"heads", c.heads},
            {"mlp_ratio", c.mlp_ratio},
            {"num_classes", c.num_classes},
            {"token_dim", c.token_dim},
            {"label_smoothing", c.label_smoothing}}},
          {"tokenizer",
           {{"window", t.window}, {"embed_dim", t.embed_dim}, {"num_freqs", t.num_freqs}, {"freq_seed", t.freq_seed}}}};
}

}  // namespace

void save_params(const std::filesystem::path& path, const EncoderParams& params, const TokenizerConfig& tokenizer) {
  nlohmann::json manifest = config_to_json(params.config(), tokenizer);
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : params.layout().tensors) {
    manifest["tensors"].push_back({{"name", t.name}, {"dims", t.dims}, {"offset", t.offset}});
  }
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out{'S', 'P', 'T', 'B'};
  auto put = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(kBundleVersion);
  put(static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  Tensor payload{{static_cast<std::uint32_t>(params.values().size())},
                 std::vector<double>(params.values().begin(), params.values().end()),
                 DType::f64};
  const auto body = encode_tensor(payload);
  out.insert(out.end(), body.begin(), body.end());
  write_file_bytes(path, out);
}

ModelBundle load_params(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SPTB", 4) != 0) throw DataError("weights: bad magic");
  auto get = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
    return v;
  };
  if (get(4) != kBundleVersion) throw DataError("weights: unsupported version");
  const std::uint32_t len = get(8);
  if (12ull + len > bytes.size()) throw DataError("weights: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("weights: bad manifest: ") + e.what());
  }
  EncoderConfig c;
  TokenizerConfig t;
  try {
    const auto& e = manifest.at("encoder");
    c.depth = e.at("depth");
    c.width = e.at("width");
    c.heads = e.at("heads");
    c.mlp_ratio = e.at("mlp_ratio");
    c.num_classes = e.at("num_classes");
    c.token_dim = e.at("token_dim");
    c.label_smoothing = e.at("label_smoothing");
    const auto& tk = manifest.at("tokenizer");
    t.window = tk.at("window");
    t.embed_dim = tk.at("embed_dim");
    t.num_freqs = tk.at("num_freqs");
    t.freq_seed = tk.at("freq_seed");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("weights: bad manifest: ") + e.what());
  }
  EncoderParams params(c);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.layout().tensors.size()) throw DataError("weights: tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& want = params.layout().tensors[i];
    if (tensors[i].at("name") != want.name || tensors[i].at("dims").get<std::vector<int>>() != want.dims ||
        tensors[i].at("offset").get<std::size_t>() != want.offset) {
      throw DataError("weights: tensor '" + want.name + "' does not match the config layout");
    }
  }
  std::size_t offset = 12ull + len;
  Tensor payload = decode_tensor(bytes, offset);
  if (offset != bytes.size()) throw DataError("weights: trailing bytes");
  if (payload.values.size() != params.layout().total) throw DataError("weights: payload size mismatch");
  auto dst = params.mutable_values();
  std::copy(payload.values.begin(), payload.values.end(), dst.begin());
  return {std::move(params), t};
}

ModelBundle load_params(const std::filesystem::path& path, const EncoderConfig& expected) {
  auto bundle = load_params(path);
  if (!(bundle.params.config() == expected)) throw DataError("weights: stored config does not match the expected config");
  return bundle;
}

}  // namespace spot
