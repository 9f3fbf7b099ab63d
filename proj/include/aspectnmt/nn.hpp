#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "aspectnmt/autodiff.hpp"
#include "aspectnmt/rng.hpp"
#include "aspectnmt/serialize.hpp"

// Transformer building blocks on top of the tape. Every layer offers apply()
// for training (tape) and apply_plain() for inference; both read the same
// Param values, so a trained layer decodes without touching the tape.
namespace aspectnmt::nn {

using ad::Param;
using ad::Tape;
using ad::Var;

// Flat registry of a model's parameters, in registration order. That order is
// the checkpoint order, so it must stay stable across construction paths.
struct ParamStore {
    std::vector<Param*> items;

    void add(Param& p) { items.push_back(&p); }
    void zero_grad();
    double grad_norm() const; // global L2 norm over trainable params
    void scale_grads(double s);
    void clip_grad_norm(double max_norm);

    void to_checkpoint(Checkpoint& ckpt) const;
    void from_checkpoint(const Checkpoint& ckpt); // matches by name, checks shape
};

// Uniform Xavier fill: limit sqrt(6 / (rows + cols)).
void xavier_init(Param& p, Rng& rng);

struct Linear {
    Param W; // [in x out]
    Param b; // [1 x out]

    void init(const std::string& name, int in, int out, Rng& rng, ParamStore& ps);
    Var apply(Tape& t, Var x) const;
    Eigen::MatrixXd apply_plain(const Eigen::MatrixXd& x) const;
};

struct LayerNorm {
    Param gain, bias; // [1 x dim] each

    void init(const std::string& name, int dim, ParamStore& ps);
    Var apply(Tape& t, Var x) const;
    Eigen::MatrixXd apply_plain(const Eigen::MatrixXd& x) const;
};

struct MultiHead {
    int heads = 1;
    Linear wq, wk, wv, wo;

    void init(const std::string& name, int d_model, int heads, Rng& rng,
              ParamStore& ps);
    Var self_attn(Tape& t, Var x, const std::vector<int>& offsets, bool causal) const;
    Var cross_attn(Tape& t, Var x, Var memory, const std::vector<int>& q_offsets,
                   const std::vector<int>& kv_offsets) const;
};

// Single-sentence scaled-dot-product attention for inference paths. q, k, v
// already carry their head projections; causal masks strictly-later keys.
Eigen::MatrixXd attention_plain(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                const Eigen::MatrixXd& v, int heads, bool causal);

struct FeedForward {
    Linear expand, contract;

    void init(const std::string& name, int d_model, int d_ff, Rng& rng,
              ParamStore& ps);
    Var apply(Tape& t, Var x) const;
    Eigen::MatrixXd apply_plain(const Eigen::MatrixXd& x) const;
};

// Pre-norm residual blocks: x + sublayer(norm(x)), dropout on each sublayer
// output while training.
struct EncoderLayer {
    LayerNorm norm1, norm2;
    MultiHead attn;
    FeedForward ff;

    void init(const std::string& name, int d_model, int heads, int d_ff, Rng& rng,
              ParamStore& ps);
    Var apply(Tape& t, Var x, const std::vector<int>& offsets, double dropout_rate,
              Rng* dropout_rng, bool training) const;
    Eigen::MatrixXd apply_plain(const Eigen::MatrixXd& x) const; // one sentence
};

struct DecoderLayer {
    LayerNorm norm1, norm2, norm3;
    MultiHead self_attn;
    MultiHead cross;
    FeedForward ff;

    void init(const std::string& name, int d_model, int heads, int d_ff, Rng& rng,
              ParamStore& ps);
    Var apply(Tape& t, Var x, Var memory, const std::vector<int>& tgt_offsets,
              const std::vector<int>& src_offsets, double dropout_rate,
              Rng* dropout_rng, bool training) const;
};

// Rows 0..max_positions-1 of the sinusoidal position table.
Eigen::MatrixXd sinusoidal_positions(int max_positions, int d_model);

// Per-row position encodings for a concatenated batch: row r of the result is
// pe[r - start of r's sentence].
Eigen::MatrixXd positions_for(const Eigen::MatrixXd& pe,
                              const std::vector<int>& offsets);

// SGD with momentum and global-norm clipping (clip <= 0 disables).
struct SgdMomentum {
    double lr = 0.05;
    double momentum = 0.9;
    double clip = 5.0;

    void step(ParamStore& ps);
};

// Adam at a fixed learning rate (clip <= 0 disables clipping).
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double clip = 0.0;
    long steps = 0;

    void step(ParamStore& ps);
};

// Adam driven by the warmup-then-decay rate
//   rate(s) = factor * d_model^{-1/2} * min(s^{-1/2}, s * warmup^{-3/2}).
struct NoamAdam {
    double factor = 1.0;
    int warmup = 400;
    int d_model = 64;
    double beta1 = 0.9, beta2 = 0.98, eps = 1e-9;
    long steps = 0;

    double rate(long step) const;
    void step(ParamStore& ps);
};

} // namespace aspectnmt::nn
