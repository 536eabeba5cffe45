#pragma once

#include <vector>

#include "meshforge/recover_net.hpp"

namespace meshforge::detail {

struct ConvShape {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

ConvShape conv_shape(const ConvLayer& layer, int in_h, int in_w);

MatX im2col(const ConvLayer& layer, const MatX& input, int in_h, int in_w);
void col2im(const ConvLayer& layer, const MatX& dpatches, int in_h, int in_w, MatX& dinput);

struct ConvCache {
  MatX patches;  // (in_ch k^2) x positions
  MatX out;      // out_ch x positions, post-tanh
  int in_h = 0, in_w = 0;
};

// out = tanh(W * im2col(input) + b)
MatX conv_forward(const ConvLayer& layer, const MatX& input, int in_h, int in_w, ConvCache* cache);

// returns d(input); accumulates layer gradients
MatX conv_backward(const ConvLayer& layer, const ConvCache& cache, const MatX& dout,
                   ConvLayer& grad);

struct EncodeCache {
  ConvCache c1, c2, c3;
  MatX map;      // D x L (= c3.out)
  VecX feature;  // D, mean over map columns
};

EncodedFrame encode_cached(const Image& image, const ModelParams& params, EncodeCache* cache);

// dmap: D x L, dfeature: D; accumulates encoder gradients
void encode_backward(const ModelParams& params, const EncodeCache& cache, const MatX& dmap,
                     const VecX& dfeature, ModelParams& grads);

struct AttentionCache {
  MatX map;       // D x L input
  VecX h_prev;    // H
  MatX tanh_pre;  // A x L
  VecX logits;    // L
  VecX alpha;     // L
};

AttentionResult attention_cached(const MatX& map, const VecX& h_prev, const ModelParams& params,
                                 AttentionCache* cache);

// inputs: dcontext (D), dalpha_ext (L or empty); outputs dmap, dh_prev accumulated
void attention_backward(const ModelParams& params, const AttentionCache& cache,
                        const VecX& dcontext, MatX& dmap, VecX& dh_prev, ModelParams& grads);

struct LstmCache {
  VecX x, h_prev, c_prev;
  VecX gate_i, gate_f, gate_g, gate_o;
  VecX c, tanh_c;
};

RecurrentState lstm_cached(const VecX& x, const RecurrentState& state, const ModelParams& params,
                           LstmCache* cache);

// dh, dc: gradients on the new state; accumulates dx, dh_prev, dc_prev
void lstm_backward(const ModelParams& params, const LstmCache& cache, const VecX& dh,
                   const VecX& dc, VecX& dx, VecX& dh_prev, VecX& dc_prev, ModelParams& grads);

struct MlpCache {
  VecX input;
  VecX a1, a2;  // post-tanh hidden activations
  VecX out;     // linear output
};

VecX mlp_forward(const Dense& l1, const Dense& l2, const Dense& l3, const VecX& input,
                 MlpCache* cache);

// returns d(input); accumulates the three layers' gradients
VecX mlp_backward(const Dense& l1, const Dense& l2, const Dense& l3, const MlpCache& cache,
                  const VecX& dout, Dense& g1, Dense& g2, Dense& g3);

struct IefCache {
  std::vector<MlpCache> iters;  // regressor MLP evaluations
  std::vector<VecX> phi;        // phi_0 .. phi_n (flat)
};

VecX ief_cached(const VecX& hidden, const VecX& phi_init, const ModelParams& params, int n_iter,
                IefCache* cache);

// dphi_out -> accumulates dhidden, dphi_init and regressor gradients
void ief_backward(const ModelParams& params, const IefCache& cache, const VecX& dphi_out,
                  VecX& dhidden, VecX& dphi_init, ModelParams& grads);

struct ClipTape {
  std::vector<EncodeCache> enc;
  std::vector<AttentionCache> att;
  std::vector<LstmCache> lstm;
  std::vector<IefCache> ief;
  MlpCache init;
  std::vector<VecX> phis;  // phi_0 .. phi_T
};

// Forward pass over a clip, recording everything needed for the backward.
std::vector<VecX> clip_forward(const ModelParams& params, std::span<const Image> frames,
                               int ief_iterations, ClipTape* tape);

// dphis[t] = dL/dphi_t for t = 1..T (index 0 of the argument is dL/dphi_1).
void clip_backward(const ModelParams& params, const ClipTape& tape,
                   const std::vector<VecX>& dphis, ModelParams& grads);

}  // namespace meshforge::detail
