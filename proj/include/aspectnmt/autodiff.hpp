#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "aspectnmt/rng.hpp"

// Reverse-mode differentiation over Eigen matrices. A Tape owns the nodes of
// one forward computation; backward() walks them in reverse insertion order,
// so ops must append nodes after their inputs (which the op functions below
// guarantee by construction). Values are double precision throughout; float32
// appears only inside checkpoint files.
namespace aspectnmt::ad {

// A named trainable tensor. Modules own their Params and expose them through
// a ParamStore; optimizers keep per-Param state in the slots below.
struct Param {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool trainable = true;
    Eigen::MatrixXd opt_m, opt_v; // optimizer scratch (momentum / Adam moments)

    Param() = default;
    Param(std::string n, Eigen::MatrixXd v)
        : name(std::move(n)), value(std::move(v)),
          grad(Eigen::MatrixXd::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad; // empty until something flows back
    std::function<void(Node&)> backward;
    bool needs_grad = false;
    Param* param = nullptr;

    void add_grad(const Eigen::MatrixXd& g) {
        if (grad.size() == 0)
            grad = g;
        else
            grad += g;
    }
};

using Var = Node*;

class Tape {
public:
    Var leaf(Param& p);                  // parameter leaf; grads flow into p.grad
    Var constant(Eigen::MatrixXd value); // no gradient tracking
    Var make(Eigen::MatrixXd value, bool needs_grad,
             std::function<void(Node&)> backward);

    // Seeds root (which must be 1x1) with gradient 1 and propagates backward.
    void backward(Var root);

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

private:
    std::deque<Node> nodes_; // deque keeps Var pointers stable
};

// ---- core ops ----
Var matmul(Tape& t, Var a, Var b);   // a * b
Var matmul_t(Tape& t, Var a, Var b); // a * b^T (used for tied output layers)
Var add(Tape& t, Var a, Var b);      // same shape
Var sub(Tape& t, Var a, Var b);
Var add_rowvec(Tape& t, Var a, Var bias);        // bias is 1 x cols, broadcast
Var add_const_rows(Tape& t, Var a, Eigen::MatrixXd rows); // untracked addend
Var mul_scalar(Tape& t, Var a, double s);
Var relu(Tape& t, Var a);
Var slice_cols(Tape& t, Var a, int first, int width);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var gather_rows(Tape& t, Var table, const std::vector<int>& rows);
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-6);
Var dropout(Tape& t, Var x, double rate, Rng& rng, bool training);

// Multi-head scaled-dot-product attention over a batch of sentences stored as
// concatenated rows. q_offsets / kv_offsets hold the running row boundaries
// (size = sentence count + 1); attention never crosses a boundary. causal
// restricts each query to keys at the same or earlier in-sentence position
// and requires matching offsets.
Var attention(Tape& t, Var q, Var k, Var v, int heads,
              const std::vector<int>& q_offsets,
              const std::vector<int>& kv_offsets, bool causal);

// Mean cross-entropy -log softmax(logits_i)[target_i], each row scaled by
// weights[i] (pass all ones for the unweighted mean); divides by row count.
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets,
                  const std::vector<double>& weights);

// Label-smoothed cross entropy against (1-smoothing)*onehot + smoothing/V.
Var smoothed_cross_entropy(Tape& t, Var logits, const std::vector<int>& targets,
                           double smoothing);

// E = sum_j softmax(logits)_j * stack[j]; gradients reach the logits only
// (the stack is frozen context by contract).
Var scalar_mix(Tape& t, Var logits, const std::vector<Eigen::MatrixXd>& stack);

// mean over rows of squared Euclidean distance between paired rows of a, b.
Var mean_row_sqdist(Tape& t, Var a, Var b);

// 1 - (1/(n(n-1))) sum over ordered pairs of split chunks of ||e_i - e_j||^2,
// averaged over the rows of h; only the first n chunks of width split_width
// participate. n < 2 yields a constant 0 (the pair sum is empty).
Var similarity_penalty(Tape& t, Var h, int n, int split_width);

// ---- finite-difference gradient checking (double precision) ----
// loss(true) must run the forward pass, backpropagate, and leave gradients in
// the params; loss(false) must only return the loss value. Every entry of
// every trainable param is probed with central differences; entries where both
// sides sit below the difference-quotient noise floor count as agreeing zeros.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
};
GradCheckResult grad_check(const std::function<double(bool)>& loss,
                           const std::vector<Param*>& params, double eps = 1e-5);

} // namespace aspectnmt::ad
