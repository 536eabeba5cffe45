#include <cstring>
#include <fstream>

#include "meshforge/error.hpp"
#include "meshforge/rng.hpp"
#include "net_internal.hpp"

namespace meshforge {

void NetConfig::validate() const {
  if (image_size <= 0 || image_size % 16 != 0)
    throw ValidationError("net image_size must be a positive multiple of 16");
  if (conv1_channels <= 0 || conv2_channels <= 0 || feature_dim <= 0 || attention_hidden <= 0 ||
      hidden_dim <= 0 || init_hidden <= 0 || regressor_hidden <= 0)
    throw ValidationError("net layer sizes must be positive");
}

namespace {

constexpr int kPhi = RecoveryVector::kSize;

ConvLayer make_conv(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng) {
  ConvLayer l;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  l.weight.resize(out_ch, in_ch * kernel * kernel);
  Scalar sigma = 1.0 / std::sqrt(static_cast<Scalar>(in_ch * kernel * kernel));
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = sigma * rng.normal();
  l.bias = VecX::Zero(out_ch);
  return l;
}

Dense make_dense(int in, int out, Rng& rng) {
  Dense d;
  d.w.resize(out, in);
  Scalar sigma = 1.0 / std::sqrt(static_cast<Scalar>(in));
  for (Eigen::Index i = 0; i < d.w.size(); ++i) d.w.data()[i] = sigma * rng.normal();
  d.b = VecX::Zero(out);
  return d;
}

MatX random_matrix(int rows, int cols, Rng& rng) {
  MatX m(rows, cols);
  Scalar sigma = 1.0 / std::sqrt(static_cast<Scalar>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sigma * rng.normal();
  return m;
}

}  // namespace

ModelParams ModelParams::create(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed ^ 0x6d65736866ull);  // decorrelate from other users of the seed
  ModelParams p;
  p.cfg = cfg;
  const int d = cfg.feature_dim, h = cfg.hidden_dim, a = cfg.attention_hidden;
  const int x = 2 * d + kPhi;
  p.conv1 = make_conv(1, cfg.conv1_channels, 5, 2, 2, rng);
  p.conv2 = make_conv(cfg.conv1_channels, cfg.conv2_channels, 5, 2, 2, rng);
  p.conv3 = make_conv(cfg.conv2_channels, d, 4, 4, 0, rng);
  p.att_wa = random_matrix(a, d, rng);
  p.att_wh = random_matrix(a, h, rng);
  p.att_b = VecX::Zero(a);
  p.att_v = VecX(a);
  for (int i = 0; i < a; ++i) p.att_v(i) = rng.normal() / std::sqrt(static_cast<Scalar>(a));
  p.att_c = 0;
  p.lstm_w = random_matrix(4 * h, x, rng);
  p.lstm_u = random_matrix(4 * h, h, rng);
  p.lstm_b = VecX::Zero(4 * h);
  p.init1 = make_dense(d, cfg.init_hidden, rng);
  p.init2 = make_dense(cfg.init_hidden, cfg.init_hidden, rng);
  p.init3 = make_dense(cfg.init_hidden, 2 * h, rng);
  p.reg1 = make_dense(h + kPhi, cfg.regressor_hidden, rng);
  p.reg2 = make_dense(cfg.regressor_hidden, cfg.regressor_hidden, rng);
  p.reg3 = make_dense(cfg.regressor_hidden, kPhi, rng);
  // small final layer keeps early IEF increments gentle
  p.reg3.w *= 0.01;
  p.mean_phi = VecX::Zero(kPhi);
  return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams z = other;
  for (ParamBlock& b : z.blocks()) std::memset(b.data, 0, sizeof(Scalar) * b.size);
  return z;
}

std::vector<ParamBlock> ModelParams::blocks() {
  std::vector<ParamBlock> out;
  auto add = [&out](const std::string& name, const std::string& group, Scalar* data,
                    Eigen::Index size) { out.push_back({name, group, data, size}); };
  add("conv1.weight", "encoder", conv1.weight.data(), conv1.weight.size());
  add("conv1.bias", "encoder", conv1.bias.data(), conv1.bias.size());
  add("conv2.weight", "encoder", conv2.weight.data(), conv2.weight.size());
  add("conv2.bias", "encoder", conv2.bias.data(), conv2.bias.size());
  add("conv3.weight", "encoder", conv3.weight.data(), conv3.weight.size());
  add("conv3.bias", "encoder", conv3.bias.data(), conv3.bias.size());
  add("att.wa", "attention", att_wa.data(), att_wa.size());
  add("att.wh", "attention", att_wh.data(), att_wh.size());
  add("att.b", "attention", att_b.data(), att_b.size());
  add("att.v", "attention", att_v.data(), att_v.size());
  add("att.c", "attention", &att_c, 1);
  add("lstm.w", "lstm", lstm_w.data(), lstm_w.size());
  add("lstm.u", "lstm", lstm_u.data(), lstm_u.size());
  add("lstm.b", "lstm", lstm_b.data(), lstm_b.size());
  add("init1.w", "init", init1.w.data(), init1.w.size());
  add("init1.b", "init", init1.b.data(), init1.b.size());
  add("init2.w", "init", init2.w.data(), init2.w.size());
  add("init2.b", "init", init2.b.data(), init2.b.size());
  add("init3.w", "init", init3.w.data(), init3.w.size());
  add("init3.b", "init", init3.b.data(), init3.b.size());
  add("reg1.w", "regressor", reg1.w.data(), reg1.w.size());
  add("reg1.b", "regressor", reg1.b.data(), reg1.b.size());
  add("reg2.w", "regressor", reg2.w.data(), reg2.w.size());
  add("reg2.b", "regressor", reg2.b.data(), reg2.b.size());
  add("reg3.w", "regressor", reg3.w.data(), reg3.w.size());
  add("reg3.b", "regressor", reg3.b.data(), reg3.b.size());
  add("mean_phi", "mean_phi", mean_phi.data(), mean_phi.size());
  return out;
}

std::vector<ParamBlock> ModelParams::blocks() const {
  return const_cast<ModelParams*>(this)->blocks();
}

Eigen::Index ModelParams::parameter_count() const {
  Eigen::Index n = 0;
  for (const ParamBlock& b : blocks()) n += b.size;
  return n;
}

void ModelParams::validate() const {
  cfg.validate();
  const int d = cfg.feature_dim, h = cfg.hidden_dim;
  if (att_wa.rows() != cfg.attention_hidden || att_wa.cols() != d ||
      att_wh.cols() != h || lstm_w.rows() != 4 * h || lstm_w.cols() != 2 * d + kPhi ||
      lstm_u.cols() != h || init3.w.rows() != 2 * h || reg3.w.rows() != kPhi ||
      reg1.w.cols() != h + kPhi || mean_phi.size() != kPhi)
    throw ValidationError("model parameter shapes are mutually inconsistent");
  for (const ParamBlock& b : blocks())
    for (Eigen::Index i = 0; i < b.size; ++i)
      if (!std::isfinite(b.data[i]))
        throw NumericError("model parameter block " + b.name + " contains non-finite values");
}

namespace detail {

ConvShape conv_shape(const ConvLayer& layer, int in_h, int in_w) {
  ConvShape s;
  s.in_h = in_h;
  s.in_w = in_w;
  s.out_h = (in_h + 2 * layer.pad - layer.kernel) / layer.stride + 1;
  s.out_w = (in_w + 2 * layer.pad - layer.kernel) / layer.stride + 1;
  return s;
}

MatX im2col(const ConvLayer& layer, const MatX& input, int in_h, int in_w) {
  ConvShape s = conv_shape(layer, in_h, in_w);
  MatX patches(layer.in_ch * layer.kernel * layer.kernel, s.out_h * s.out_w);
  for (int oy = 0; oy < s.out_h; ++oy)
    for (int ox = 0; ox < s.out_w; ++ox) {
      int col = oy * s.out_w + ox;
      for (int ic = 0; ic < layer.in_ch; ++ic)
        for (int ky = 0; ky < layer.kernel; ++ky)
          for (int kx = 0; kx < layer.kernel; ++kx) {
            int iy = oy * layer.stride - layer.pad + ky;
            int ix = ox * layer.stride - layer.pad + kx;
            int row = (ic * layer.kernel + ky) * layer.kernel + kx;
            patches(row, col) = (iy >= 0 && iy < in_h && ix >= 0 && ix < in_w)
                                    ? input(ic, iy * in_w + ix)
                                    : 0.0;
          }
    }
  return patches;
}

void col2im(const ConvLayer& layer, const MatX& dpatches, int in_h, int in_w, MatX& dinput) {
  ConvShape s = conv_shape(layer, in_h, in_w);
  dinput = MatX::Zero(layer.in_ch, in_h * in_w);
  for (int oy = 0; oy < s.out_h; ++oy)
    for (int ox = 0; ox < s.out_w; ++ox) {
      int col = oy * s.out_w + ox;
      for (int ic = 0; ic < layer.in_ch; ++ic)
        for (int ky = 0; ky < layer.kernel; ++ky)
          for (int kx = 0; kx < layer.kernel; ++kx) {
            int iy = oy * layer.stride - layer.pad + ky;
            int ix = ox * layer.stride - layer.pad + kx;
            if (iy < 0 || iy >= in_h || ix < 0 || ix >= in_w) continue;
            int row = (ic * layer.kernel + ky) * layer.kernel + kx;
            dinput(ic, iy * in_w + ix) += dpatches(row, col);
          }
    }
}

MatX conv_forward(const ConvLayer& layer, const MatX& input, int in_h, int in_w,
                  ConvCache* cache) {
  MatX patches = im2col(layer, input, in_h, in_w);
  MatX out = ((layer.weight * patches).colwise() + layer.bias).array().tanh();
  if (cache) {
    cache->patches = std::move(patches);
    cache->out = out;
    cache->in_h = in_h;
    cache->in_w = in_w;
  }
  return out;
}

MatX conv_backward(const ConvLayer& layer, const ConvCache& cache, const MatX& dout,
                   ConvLayer& grad) {
  MatX dpre = dout.array() * (1.0 - cache.out.array().square());
  grad.weight += dpre * cache.patches.transpose();
  grad.bias += dpre.rowwise().sum();
  MatX dinput;
  col2im(layer, layer.weight.transpose() * dpre, cache.in_h, cache.in_w, dinput);
  return dinput;
}

EncodedFrame encode_cached(const Image& image, const ModelParams& params, EncodeCache* cache) {
  const NetConfig& cfg = params.cfg;
  if (image.width != cfg.image_size || image.height != cfg.image_size)
    throw DimensionError("encoder expects " + std::to_string(cfg.image_size) + "x" +
                         std::to_string(cfg.image_size) + " images, got " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
  MatX input = image.pixels.transpose();  // 1 x (S*S)

  ConvCache local1, local2, local3;
  ConvCache* c1 = cache ? &cache->c1 : &local1;
  ConvCache* c2 = cache ? &cache->c2 : &local2;
  ConvCache* c3 = cache ? &cache->c3 : &local3;

  int s = cfg.image_size;
  MatX a1 = conv_forward(params.conv1, input, s, s, c1);
  MatX a2 = conv_forward(params.conv2, a1, s / 2, s / 2, c2);
  MatX a3 = conv_forward(params.conv3, a2, s / 4, s / 4, c3);

  EncodedFrame out;
  out.map = a3;  // D x L
  out.feature = a3.rowwise().mean();
  if (cache) {
    cache->map = out.map;
    cache->feature = out.feature;
  }
  return out;
}

void encode_backward(const ModelParams& params, const EncodeCache& cache, const MatX& dmap,
                     const VecX& dfeature, ModelParams& grads) {
  const Scalar l = static_cast<Scalar>(cache.map.cols());
  MatX dout3 = dmap;
  dout3.colwise() += (dfeature / l).eval();
  MatX dout2 = conv_backward(params.conv3, cache.c3, dout3, grads.conv3);
  MatX dout1 = conv_backward(params.conv2, cache.c2, dout2, grads.conv2);
  conv_backward(params.conv1, cache.c1, dout1, grads.conv1);  // input gradient unused
}

AttentionResult attention_cached(const MatX& map, const VecX& h_prev, const ModelParams& params,
                                 AttentionCache* cache) {
  const Eigen::Index l = map.cols();
  if (map.rows() != params.cfg.feature_dim || h_prev.size() != params.cfg.hidden_dim)
    throw DimensionError("attention inputs do not match the model dimensions");
  MatX pre = params.att_wa * map;  // A x L
  VecX hterm = params.att_wh * h_prev + params.att_b;
  pre.colwise() += hterm;
  MatX tan = pre.array().tanh();
  VecX logits = tan.transpose() * params.att_v;
  logits.array() += params.att_c;
  VecX shifted = logits.array() - logits.maxCoeff();
  VecX alpha = shifted.array().exp();
  alpha /= alpha.sum();
  AttentionResult out;
  out.weights = alpha;
  out.context = map * alpha;
  if (cache) {
    cache->map = map;
    cache->h_prev = h_prev;
    cache->tanh_pre = tan;
    cache->logits = logits;
    cache->alpha = alpha;
  }
  (void)l;
  return out;
}

void attention_backward(const ModelParams& params, const AttentionCache& cache,
                        const VecX& dcontext, MatX& dmap, VecX& dh_prev, ModelParams& grads) {
  // context = map * alpha
  VecX dalpha = cache.map.transpose() * dcontext;
  dmap += dcontext * cache.alpha.transpose();
  // softmax backward
  Scalar inner = cache.alpha.dot(dalpha);
  VecX dlogits = cache.alpha.array() * (dalpha.array() - inner);
  // logits_i = v . tanh_pre_i + c
  grads.att_v += cache.tanh_pre * dlogits;
  grads.att_c += dlogits.sum();
  MatX dtan = params.att_v * dlogits.transpose();        // A x L
  MatX dpre = dtan.array() * (1.0 - cache.tanh_pre.array().square());
  grads.att_wa += dpre * cache.map.transpose();
  VecX dpre_sum = dpre.rowwise().sum();
  grads.att_wh += dpre_sum * cache.h_prev.transpose();
  grads.att_b += dpre_sum;
  dmap += params.att_wa.transpose() * dpre;
  dh_prev += params.att_wh.transpose() * dpre_sum;
}

RecurrentState lstm_cached(const VecX& x, const RecurrentState& state, const ModelParams& params,
                           LstmCache* cache) {
  const int h = params.cfg.hidden_dim;
  if (x.size() != params.lstm_w.cols() || state.hidden.size() != h || state.cell.size() != h)
    throw DimensionError("lstm input dimensions do not match the model");
  VecX pre = params.lstm_w * x + params.lstm_u * state.hidden + params.lstm_b;
  auto sigmoid = [](const VecX& v) { return VecX(1.0 / (1.0 + (-v.array()).exp())); };
  VecX gi = sigmoid(pre.segment(0, h));
  VecX gf = sigmoid(pre.segment(h, h));
  VecX gg = pre.segment(2 * h, h).array().tanh();
  VecX go = sigmoid(pre.segment(3 * h, h));
  RecurrentState next;
  next.cell = gf.array() * state.cell.array() + gi.array() * gg.array();
  VecX tanh_c = next.cell.array().tanh();
  next.hidden = go.array() * tanh_c.array();
  if (cache) {
    cache->x = x;
    cache->h_prev = state.hidden;
    cache->c_prev = state.cell;
    cache->gate_i = gi;
    cache->gate_f = gf;
    cache->gate_g = gg;
    cache->gate_o = go;
    cache->c = next.cell;
    cache->tanh_c = tanh_c;
  }
  return next;
}

void lstm_backward(const ModelParams& params, const LstmCache& cache, const VecX& dh,
                   const VecX& dc_in, VecX& dx, VecX& dh_prev, VecX& dc_prev, ModelParams& grads) {
  const int h = params.cfg.hidden_dim;
  VecX dgo = dh.array() * cache.tanh_c.array();
  VecX dc = dc_in.array() + dh.array() * cache.gate_o.array() *
                                (1.0 - cache.tanh_c.array().square());
  VecX dgf = dc.array() * cache.c_prev.array();
  VecX dgi = dc.array() * cache.gate_g.array();
  VecX dgg = dc.array() * cache.gate_i.array();
  dc_prev += (dc.array() * cache.gate_f.array()).matrix();

  VecX dpre(4 * h);
  dpre.segment(0, h) = dgi.array() * cache.gate_i.array() * (1.0 - cache.gate_i.array());
  dpre.segment(h, h) = dgf.array() * cache.gate_f.array() * (1.0 - cache.gate_f.array());
  dpre.segment(2 * h, h) = dgg.array() * (1.0 - cache.gate_g.array().square());
  dpre.segment(3 * h, h) = dgo.array() * cache.gate_o.array() * (1.0 - cache.gate_o.array());

  grads.lstm_w += dpre * cache.x.transpose();
  grads.lstm_u += dpre * cache.h_prev.transpose();
  grads.lstm_b += dpre;
  dx += params.lstm_w.transpose() * dpre;
  dh_prev += params.lstm_u.transpose() * dpre;
}

VecX mlp_forward(const Dense& l1, const Dense& l2, const Dense& l3, const VecX& input,
                 MlpCache* cache) {
  VecX a1 = (l1.w * input + l1.b).array().tanh();
  VecX a2 = (l2.w * a1 + l2.b).array().tanh();
  VecX out = l3.w * a2 + l3.b;
  if (cache) {
    cache->input = input;
    cache->a1 = a1;
    cache->a2 = a2;
    cache->out = out;
  }
  return out;
}

VecX mlp_backward(const Dense& l1, const Dense& l2, const Dense& l3, const MlpCache& cache,
                  const VecX& dout, Dense& g1, Dense& g2, Dense& g3) {
  g3.w += dout * cache.a2.transpose();
  g3.b += dout;
  VecX da2 = l3.w.transpose() * dout;
  VecX dp2 = da2.array() * (1.0 - cache.a2.array().square());
  g2.w += dp2 * cache.a1.transpose();
  g2.b += dp2;
  VecX da1 = l2.w.transpose() * dp2;
  VecX dp1 = da1.array() * (1.0 - cache.a1.array().square());
  g1.w += dp1 * cache.input.transpose();
  g1.b += dp1;
  return l1.w.transpose() * dp1;
}

VecX ief_cached(const VecX& hidden, const VecX& phi_init, const ModelParams& params, int n_iter,
                IefCache* cache) {
  if (n_iter < 1) throw ValidationError("IEF needs at least one iteration");
  VecX phi = phi_init;
  if (cache) cache->phi.push_back(phi);
  for (int it = 0; it < n_iter; ++it) {
    VecX input(hidden.size() + phi.size());
    input << hidden, phi;
    MlpCache mc;
    VecX delta = mlp_forward(params.reg1, params.reg2, params.reg3, input, &mc);
    phi = phi + delta;
    if (cache) {
      cache->iters.push_back(std::move(mc));
      cache->phi.push_back(phi);
    }
  }
  return phi;
}

void ief_backward(const ModelParams& params, const IefCache& cache, const VecX& dphi_out,
                  VecX& dhidden, VecX& dphi_init, ModelParams& grads) {
  const Eigen::Index h = dhidden.size();
  VecX dphi = dphi_out;
  for (int it = static_cast<int>(cache.iters.size()) - 1; it >= 0; --it) {
    // phi_{it+1} = phi_it + mlp(h, phi_it)
    VecX dinput = mlp_backward(params.reg1, params.reg2, params.reg3, cache.iters[it], dphi,
                               grads.reg1, grads.reg2, grads.reg3);
    dhidden += dinput.head(h);
    dphi += dinput.tail(dinput.size() - h);  // skip connection keeps the rest
  }
  dphi_init += dphi;
}

std::vector<VecX> clip_forward(const ModelParams& params, std::span<const Image> frames,
                               int ief_iterations, ClipTape* tape) {
  if (frames.empty()) throw ValidationError("recover_clip needs at least one frame");
  const int t_count = static_cast<int>(frames.size());
  const int h = params.cfg.hidden_dim;

  if (tape) {
    tape->enc.resize(t_count);
    tape->att.resize(t_count);
    tape->lstm.resize(t_count);
    tape->ief.resize(t_count);
  }
  std::vector<VecX> phis;
  phis.push_back(params.mean_phi);

  EncodeCache enc0_local;
  EncodeCache* enc0 = tape ? &tape->enc[0] : &enc0_local;
  EncodedFrame first = encode_cached(frames[0], params, enc0);

  MlpCache init_local;
  MlpCache* init_cache = tape ? &tape->init : &init_local;
  VecX init_out = mlp_forward(params.init1, params.init2, params.init3, first.feature, init_cache);
  RecurrentState state{init_out.head(h), init_out.tail(h)};

  for (int t = 0; t < t_count; ++t) {
    EncodedFrame enc = t == 0 ? first : EncodedFrame{};
    if (t > 0) {
      EncodeCache enc_local;
      EncodeCache* cache = tape ? &tape->enc[t] : &enc_local;
      enc = encode_cached(frames[t], params, cache);
    }
    AttentionCache att_local;
    AttentionCache* att_cache = tape ? &tape->att[t] : &att_local;
    AttentionResult att = attention_cached(enc.map, state.hidden, params, att_cache);

    VecX x(2 * params.cfg.feature_dim + kPhi);
    x << enc.feature, att.context, phis.back();
    LstmCache lstm_local;
    LstmCache* lstm_cache = tape ? &tape->lstm[t] : &lstm_local;
    state = lstm_cached(x, state, params, lstm_cache);

    IefCache ief_local;
    IefCache* ief_cache = tape ? &tape->ief[t] : &ief_local;
    VecX phi = ief_cached(state.hidden, phis.back(), params, ief_iterations, ief_cache);
    phis.push_back(phi);
  }
  if (tape) tape->phis = phis;
  return phis;
}

void clip_backward(const ModelParams& params, const ClipTape& tape,
                   const std::vector<VecX>& dphis, ModelParams& grads) {
  const int t_count = static_cast<int>(tape.lstm.size());
  const int h = params.cfg.hidden_dim;
  const int d = params.cfg.feature_dim;

  std::vector<VecX> dphi_acc(static_cast<std::size_t>(t_count) + 1,
                             VecX::Zero(kPhi));
  for (int t = 1; t <= t_count; ++t) dphi_acc[static_cast<std::size_t>(t)] = dphis[t - 1];

  VecX dh_next = VecX::Zero(h);  // gradient flowing into h_t from steps after t
  VecX dc_next = VecX::Zero(h);
  std::vector<MatX> dmap(static_cast<std::size_t>(t_count));
  std::vector<VecX> dfeature(static_cast<std::size_t>(t_count), VecX::Zero(d));
  for (int t = 0; t < t_count; ++t)
    dmap[static_cast<std::size_t>(t)] =
        MatX::Zero(d, tape.enc[static_cast<std::size_t>(t)].map.cols());

  for (int t = t_count - 1; t >= 0; --t) {
    const std::size_t ts = static_cast<std::size_t>(t);
    // IEF consumed h_{t+1-cell} (the fresh hidden) and phi_t
    VecX dh = dh_next;
    ief_backward(params, tape.ief[ts], dphi_acc[ts + 1], dh, dphi_acc[ts], grads);

    // LSTM step t produced (c,h) from x_t and the previous state
    VecX dx = VecX::Zero(params.lstm_w.cols());
    VecX dh_prev = VecX::Zero(h);
    VecX dc_prev = VecX::Zero(h);
    lstm_backward(params, tape.lstm[ts], dh, dc_next, dx, dh_prev, dc_prev, grads);

    dfeature[ts] += dx.head(d);
    VecX dcontext = dx.segment(d, d);
    dphi_acc[ts] += dx.tail(kPhi);

    // attention at t conditioned on h_{t-1}
    attention_backward(params, tape.att[ts], dcontext, dmap[ts], dh_prev, grads);

    dh_next = dh_prev;
    dc_next = dc_prev;
  }

  // initial state from the init MLP on frame 1's feature
  VecX dinit(2 * h);
  dinit << dc_next, dh_next;
  VecX dfeat0 = mlp_backward(params.init1, params.init2, params.init3, tape.init, dinit,
                             grads.init1, grads.init2, grads.init3);
  dfeature[0] += dfeat0;

  for (int t = 0; t < t_count; ++t)
    encode_backward(params, tape.enc[static_cast<std::size_t>(t)],
                    dmap[static_cast<std::size_t>(t)], dfeature[static_cast<std::size_t>(t)],
                    grads);

  grads.mean_phi += dphi_acc[0];
}

}  // namespace detail

// --- public forward API -------------------------------------------------

EncodedFrame encode(const Image& image, const ModelParams& params) {
  return detail::encode_cached(image, params, nullptr);
}

AttentionResult attention(const MatX& map, const VecX& h_prev, const ModelParams& params) {
  return detail::attention_cached(map, h_prev, params, nullptr);
}

RecurrentState lstm_step(const VecX& input, const RecurrentState& state,
                         const ModelParams& params) {
  return detail::lstm_cached(input, state, params, nullptr);
}

RecurrentState init_states(const VecX& first_feature, const ModelParams& params) {
  if (first_feature.size() != params.cfg.feature_dim)
    throw DimensionError("init_states expects a feature vector of length D");
  VecX out = detail::mlp_forward(params.init1, params.init2, params.init3, first_feature, nullptr);
  const int h = params.cfg.hidden_dim;
  return {out.head(h), out.tail(h)};
}

RecoveryVector regress_ief(const VecX& hidden, const RecoveryVector& phi_init,
                           const ModelParams& params, int n_iter) {
  return RecoveryVector::from_flat(
      detail::ief_cached(hidden, phi_init.flatten(), params, n_iter, nullptr));
}

std::vector<RecoveryVector> recover_clip(std::span<const Image> frames, const ModelParams& params,
                                         int ief_iterations) {
  std::vector<VecX> phis = detail::clip_forward(params, frames, ief_iterations, nullptr);
  std::vector<RecoveryVector> out;
  for (std::size_t t = 1; t < phis.size(); ++t) out.push_back(RecoveryVector::from_flat(phis[t]));
  return out;
}

// --- serialization --------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'F', 'N', 'E', 'T', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("unexpected end of parameter file " + path);
  return value;
}

}  // namespace

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const NetConfig& c = params.cfg;
  for (int v : {c.image_size, c.conv1_channels, c.conv2_channels, c.feature_dim,
                c.attention_hidden, c.hidden_dim, c.init_hidden, c.regressor_hidden})
    write_pod(out, static_cast<std::uint32_t>(v));
  auto blocks = params.blocks();
  write_pod(out, static_cast<std::uint32_t>(blocks.size()));
  for (const ParamBlock& b : blocks) {
    write_pod(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_pod(out, static_cast<std::uint64_t>(b.size));
    out.write(reinterpret_cast<const char*>(b.data),
              static_cast<std::streamsize>(sizeof(Scalar) * b.size));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(path.string() + " is not a meshforge parameter file (bad magic/version)");
  NetConfig cfg;
  cfg.image_size = static_cast<int>(read_pod<std::uint32_t>(in, path.string()));
  cfg.conv1_channels = static_cast<int>(read_pod<std::uint32_t>(in, path.string()));
  cfg.conv2_channels = static_cast<int>(read_pod<std::uint32_t>(in, path.string()));
  cfg.feature_dim = static_cast<int>(read_pod<std::uint32_t>(in, path.string()));
  cfg.attention_hidden = static_cast<int>(read_pod<std::uint32_t>(in, path.string()));
  cfg.hidden_dim = static_cast<int>(read_pod<std::uint32_t>(in, path.string()));
  cfg.init_hidden = static_cast<int>(read_pod<std::uint32_t>(in, path.string()));
  cfg.regressor_hidden = static_cast<int>(read_pod<std::uint32_t>(in, path.string()));

  ModelParams params = ModelParams::create(cfg, 0);
  auto blocks = params.blocks();
  std::uint32_t count = read_pod<std::uint32_t>(in, path.string());
  if (count != blocks.size())
    throw IoError(path.string() + ": expected " + std::to_string(blocks.size()) +
                  " tensors, file has " + std::to_string(count));
  for (ParamBlock& b : blocks) {
    std::uint32_t name_len = read_pod<std::uint32_t>(in, path.string());
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint64_t size = read_pod<std::uint64_t>(in, path.string());
    if (name != b.name || static_cast<Eigen::Index>(size) != b.size)
      throw IoError(path.string() + ": tensor " + name + " does not match expected " + b.name +
                    " (" + std::to_string(b.size) + " values)");
    in.read(reinterpret_cast<char*>(b.data), static_cast<std::streamsize>(sizeof(Scalar) * size));
    if (!in) throw IoError("unexpected end of parameter file " + path.string());
  }
  params.validate();
  return params;
}

}  // namespace meshforge
