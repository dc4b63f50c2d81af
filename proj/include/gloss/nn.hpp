#pragma once

// Recurrent building blocks on top of the autodiff tape.

#include <vector>

#include "gloss/autodiff.hpp"
#include "gloss/rng.hpp"

namespace gloss::nn {

using ad::Param;
using ad::Tape;
using ad::Var;
using ad::Vec;

struct LinearParams {
  Param W;
  Param b;

  LinearParams() = default;
  LinearParams(const std::string& name, int out_dim, int in_dim)
      : W(name + ".W", out_dim, in_dim), b(name + ".b", out_dim) {}

  void init(Rng& rng) { W.init_xavier(rng); }

  void collect(std::vector<Param*>& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
};

inline Var linear(Tape& t, LinearParams& p, Var x) { return t.affine(p.W, p.b, x); }

// One LSTM direction. Gate order in the packed matrix: input, forget,
// candidate, output. Forget bias starts at +1.
struct LstmParams {
  Param W;  // 4h x (input + hidden)
  Param b;  // 4h
  int input_dim = 0;
  int hidden = 0;

  LstmParams() = default;
  LstmParams(const std::string& name, int in_dim, int h)
      : W(name + ".W", 4 * h, in_dim + h), b(name + ".b", 4 * h),
        input_dim(in_dim), hidden(h) {}

  void init(Rng& rng) {
    W.init_xavier(rng);
    for (int i = hidden; i < 2 * hidden; ++i) b.value[i] = 1.0;
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
};

struct LstmState {
  Var h;
  Var c;
};

inline LstmState lstm_initial(Tape& t, int hidden) {
  return {t.zeros(hidden), t.zeros(hidden)};
}

inline LstmState lstm_step(Tape& t, LstmParams& p, Var x, const LstmState& prev) {
  Var z = t.affine(p.W, p.b, t.concat(x, prev.h));
  int h = p.hidden;
  Var i = t.sigmoid_(t.slice(z, 0, h));
  Var f = t.sigmoid_(t.slice(z, h, h));
  Var g = t.tanh_(t.slice(z, 2 * h, h));
  Var o = t.sigmoid_(t.slice(z, 3 * h, h));
  Var c = t.add(t.mul(f, prev.c), t.mul(i, g));
  return {t.mul(o, t.tanh_(c)), c};
}

struct BiLstmOutput {
  std::vector<Var> states;  // per position, concat(forward h, backward h): 2h
  Var final_forward;
  Var final_backward;

  // concat of the two final states (2h); summarises the whole sequence.
  Var final_state(Tape& t) const { return t.concat(final_forward, final_backward); }
};

// A stack of bidirectional LSTM layers. Layer l > 0 consumes the 2h states
// of layer l-1.
struct BiLstmParams {
  std::vector<LstmParams> fwd;
  std::vector<LstmParams> bwd;
  int hidden = 0;

  BiLstmParams() = default;
  BiLstmParams(const std::string& name, int layers, int in_dim, int h) : hidden(h) {
    for (int l = 0; l < layers; ++l) {
      int d = l == 0 ? in_dim : 2 * h;
      fwd.emplace_back(name + ".l" + std::to_string(l) + ".fwd", d, h);
      bwd.emplace_back(name + ".l" + std::to_string(l) + ".bwd", d, h);
    }
  }

  void init(Rng& rng) {
    for (auto& p : fwd) p.init(rng);
    for (auto& p : bwd) p.init(rng);
  }

  void collect(std::vector<Param*>& out) {
    for (auto& p : fwd) p.collect(out);
    for (auto& p : bwd) p.collect(out);
  }
};

inline BiLstmOutput bilstm(Tape& t, BiLstmParams& p, const std::vector<Var>& xs) {
  std::vector<Var> inputs = xs;
  BiLstmOutput out;
  for (std::size_t l = 0; l < p.fwd.size(); ++l) {
    std::vector<Var> hf(inputs.size()), hb(inputs.size());
    LstmState sf = lstm_initial(t, p.hidden);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      sf = lstm_step(t, p.fwd[l], inputs[i], sf);
      hf[i] = sf.h;
    }
    LstmState sb = lstm_initial(t, p.hidden);
    for (std::size_t i = inputs.size(); i-- > 0;) {
      sb = lstm_step(t, p.bwd[l], inputs[i], sb);
      hb[i] = sb.h;
    }
    std::vector<Var> states(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) states[i] = t.concat(hf[i], hb[i]);
    inputs = std::move(states);
    out.final_forward = sf.h;
    out.final_backward = sb.h;
  }
  out.states = std::move(inputs);
  return out;
}

// Inverted dropout; identity when rate == 0 or rng == nullptr (inference).
inline Var dropout(Tape& t, Var x, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  Vec m(t.dim(x));
  double keep = 1.0 - rate;
  for (double& v : m) v = rng->next_double() < keep ? 1.0 / keep : 0.0;
  return t.mask(x, std::move(m));
}

}  // namespace gloss::nn
