#include "aspectnmt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

#include "aspectnmt/errors.hpp"

namespace aspectnmt::ad {

Var Tape::leaf(Param& p) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = p.value;
    n.needs_grad = p.trainable;
    n.param = &p;
    if (p.trainable)
        n.backward = [](Node& self) { self.param->grad += self.grad; };
    return &n;
}

Var Tape::constant(Eigen::MatrixXd value) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    return &n;
}

Var Tape::make(Eigen::MatrixXd value, bool needs_grad,
               std::function<void(Node&)> backward) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    return &n;
}

void Tape::backward(Var root) {
    if (root->value.rows() != 1 || root->value.cols() != 1)
        throw Error(ErrorCategory::Internal, "backward root must be a 1x1 scalar");
    root->add_grad(Eigen::MatrixXd::Ones(1, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->needs_grad || it->grad.size() == 0 || !it->backward) continue;
        it->backward(*it);
    }
}

namespace {

bool wants_grad(Var a) { return a->needs_grad; }
bool wants_grad(Var a, Var b) { return a->needs_grad || b->needs_grad; }

} // namespace

Var matmul(Tape& t, Var a, Var b) {
    return t.make(a->value * b->value, wants_grad(a, b), [a, b](Node& self) {
        if (a->needs_grad) a->add_grad(self.grad * b->value.transpose());
        if (b->needs_grad) b->add_grad(a->value.transpose() * self.grad);
    });
}

Var matmul_t(Tape& t, Var a, Var b) {
    return t.make(a->value * b->value.transpose(), wants_grad(a, b),
                  [a, b](Node& self) {
                      if (a->needs_grad) a->add_grad(self.grad * b->value);
                      if (b->needs_grad)
                          b->add_grad(self.grad.transpose() * a->value);
                  });
}

Var add(Tape& t, Var a, Var b) {
    return t.make(a->value + b->value, wants_grad(a, b), [a, b](Node& self) {
        if (a->needs_grad) a->add_grad(self.grad);
        if (b->needs_grad) b->add_grad(self.grad);
    });
}

Var sub(Tape& t, Var a, Var b) {
    return t.make(a->value - b->value, wants_grad(a, b), [a, b](Node& self) {
        if (a->needs_grad) a->add_grad(self.grad);
        if (b->needs_grad) b->add_grad(-self.grad);
    });
}

Var add_rowvec(Tape& t, Var a, Var bias) {
    Eigen::MatrixXd out = a->value;
    out.rowwise() += bias->value.row(0);
    return t.make(std::move(out), wants_grad(a, bias), [a, bias](Node& self) {
        if (a->needs_grad) a->add_grad(self.grad);
        if (bias->needs_grad) bias->add_grad(self.grad.colwise().sum());
    });
}

Var add_const_rows(Tape& t, Var a, Eigen::MatrixXd rows) {
    return t.make(a->value + rows, wants_grad(a), [a](Node& self) {
        if (a->needs_grad) a->add_grad(self.grad);
    });
}

Var mul_scalar(Tape& t, Var a, double s) {
    return t.make(a->value * s, wants_grad(a), [a, s](Node& self) {
        if (a->needs_grad) a->add_grad(self.grad * s);
    });
}

Var relu(Tape& t, Var a) {
    return t.make(a->value.cwiseMax(0.0), wants_grad(a), [a](Node& self) {
        if (!a->needs_grad) return;
        a->add_grad(
            (a->value.array() > 0.0).cast<double>().matrix().cwiseProduct(self.grad));
    });
}

Var slice_cols(Tape& t, Var a, int first, int width) {
    return t.make(a->value.middleCols(first, width), wants_grad(a),
                  [a, first, width](Node& self) {
                      if (!a->needs_grad) return;
                      Eigen::MatrixXd g =
                          Eigen::MatrixXd::Zero(a->value.rows(), a->value.cols());
                      g.middleCols(first, width) = self.grad;
                      a->add_grad(g);
                  });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    Eigen::Index rows = parts.at(0)->value.rows(), cols = 0;
    bool needs = false;
    for (Var p : parts) {
        cols += p->value.cols();
        needs = needs || p->needs_grad;
    }
    Eigen::MatrixXd out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        out.middleCols(at, p->value.cols()) = p->value;
        at += p->value.cols();
    }
    std::vector<Var> owned = parts;
    return t.make(std::move(out), needs, [owned](Node& self) {
        Eigen::Index at = 0;
        for (Var p : owned) {
            if (p->needs_grad)
                p->add_grad(self.grad.middleCols(at, p->value.cols()));
            at += p->value.cols();
        }
    });
}

Var gather_rows(Tape& t, Var table, const std::vector<int>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), table->value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = table->value.row(rows[i]);
    return t.make(std::move(out), wants_grad(table), [table, rows](Node& self) {
        if (!table->needs_grad) return;
        Eigen::MatrixXd g =
            Eigen::MatrixXd::Zero(table->value.rows(), table->value.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            g.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
        table->add_grad(g);
    });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
    const Eigen::Index rows = x->value.rows(), cols = x->value.cols();
    Eigen::MatrixXd xhat(rows, cols);
    Eigen::VectorXd inv_sd(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double mean = x->value.row(r).mean();
        Eigen::RowVectorXd centered = x->value.row(r).array() - mean;
        double var = centered.squaredNorm() / static_cast<double>(cols);
        inv_sd(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = centered * inv_sd(r);
    }
    Eigen::MatrixXd out = xhat;
    out.array().rowwise() *= gain->value.row(0).array();
    out.rowwise() += bias->value.row(0);
    return t.make(std::move(out), x->needs_grad || wants_grad(gain, bias),
                  [x, gain, bias, xhat, inv_sd](Node& self) {
                      if (gain->needs_grad)
                          gain->add_grad(
                              self.grad.cwiseProduct(xhat).colwise().sum());
                      if (bias->needs_grad) bias->add_grad(self.grad.colwise().sum());
                      if (!x->needs_grad) return;
                      const Eigen::Index cols = xhat.cols();
                      Eigen::MatrixXd dxhat = self.grad;
                      dxhat.array().rowwise() *= gain->value.row(0).array();
                      Eigen::MatrixXd dx(xhat.rows(), cols);
                      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                          double m1 = dxhat.row(r).mean();
                          double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                          dx.row(r) =
                              (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) *
                              inv_sd(r);
                      }
                      x->add_grad(dx);
                  });
}

Var dropout(Tape& t, Var x, double rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    const double keep = 1.0 - rate;
    Eigen::MatrixXd mask(x->value.rows(), x->value.cols());
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
            mask(r, c) = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    return t.make(x->value.cwiseProduct(mask), wants_grad(x), [x, mask](Node& self) {
        if (x->needs_grad) x->add_grad(self.grad.cwiseProduct(mask));
    });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads,
              const std::vector<int>& q_offsets, const std::vector<int>& kv_offsets,
              bool causal) {
    const Eigen::Index d = q->value.cols();
    if (d % heads != 0)
        throw Error(ErrorCategory::Internal, "attention width not divisible by heads");
    if (q_offsets.size() != kv_offsets.size())
        throw Error(ErrorCategory::Internal, "attention offset arity mismatch");
    if (causal && q_offsets != kv_offsets)
        throw Error(ErrorCategory::Internal, "causal attention needs equal offsets");
    const Eigen::Index dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const int sents = static_cast<int>(q_offsets.size()) - 1;

    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(q->value.rows(), d);
    // per (sentence, head) softmax matrices, kept for the backward pass
    auto probs = std::make_shared<std::vector<Eigen::MatrixXd>>();
    probs->reserve(static_cast<std::size_t>(sents) * heads);
    for (int s = 0; s < sents; ++s) {
        const int q0 = q_offsets[s], lq = q_offsets[s + 1] - q0;
        const int k0 = kv_offsets[s], lk = kv_offsets[s + 1] - k0;
        for (int h = 0; h < heads; ++h) {
            auto Q = q->value.block(q0, h * dk, lq, dk);
            auto K = k->value.block(k0, h * dk, lk, dk);
            auto V = v->value.block(k0, h * dk, lk, dk);
            Eigen::MatrixXd scores = Q * K.transpose() * scale;
            if (causal)
                for (int i = 0; i < lq; ++i)
                    for (int j = i + 1; j < lk; ++j)
                        scores(i, j) = -1e30;
            for (int i = 0; i < lq; ++i) {
                Eigen::RowVectorXd row = scores.row(i);
                double mx = row.maxCoeff();
                row = (row.array() - mx).exp();
                scores.row(i) = row / row.sum();
            }
            out.block(q0, h * dk, lq, dk) = scores * V;
            probs->push_back(std::move(scores));
        }
    }
    bool needs = q->needs_grad || k->needs_grad || v->needs_grad;
    return t.make(std::move(out), needs,
                  [q, k, v, heads, q_offsets, kv_offsets, dk, scale, sents,
                   probs](Node& self) {
                      Eigen::MatrixXd dq =
                          Eigen::MatrixXd::Zero(q->value.rows(), q->value.cols());
                      Eigen::MatrixXd dkm =
                          Eigen::MatrixXd::Zero(k->value.rows(), k->value.cols());
                      Eigen::MatrixXd dv =
                          Eigen::MatrixXd::Zero(v->value.rows(), v->value.cols());
                      std::size_t idx = 0;
                      for (int s = 0; s < sents; ++s) {
                          const int q0 = q_offsets[s], lq = q_offsets[s + 1] - q0;
                          const int k0 = kv_offsets[s], lk = kv_offsets[s + 1] - k0;
                          for (int h = 0; h < heads; ++h) {
                              const Eigen::MatrixXd& P = (*probs)[idx++];
                              auto G = self.grad.block(q0, h * dk, lq, dk);
                              auto K = k->value.block(k0, h * dk, lk, dk);
                              auto Q = q->value.block(q0, h * dk, lq, dk);
                              auto V = v->value.block(k0, h * dk, lk, dk);
                              Eigen::MatrixXd dP = G * V.transpose();
                              Eigen::VectorXd rowdot =
                                  dP.cwiseProduct(P).rowwise().sum();
                              Eigen::MatrixXd dS =
                                  P.cwiseProduct(dP.colwise() - rowdot);
                              dq.block(q0, h * dk, lq, dk) = dS * K * scale;
                              dkm.block(k0, h * dk, lk, dk) += dS.transpose() * Q * scale;
                              dv.block(k0, h * dk, lk, dk) += P.transpose() * G;
                          }
                      }
                      if (q->needs_grad) q->add_grad(dq);
                      if (k->needs_grad) k->add_grad(dkm);
                      if (v->needs_grad) v->add_grad(dv);
                  });
}

namespace {

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::RowVectorXd row = logits.row(r);
        double mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        p.row(r) = row / row.sum();
    }
    return p;
}

} // namespace

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets,
                  const std::vector<double>& weights) {
    const Eigen::Index rows = logits->value.rows();
    if (static_cast<Eigen::Index>(targets.size()) != rows ||
        targets.size() != weights.size())
        throw Error(ErrorCategory::Internal, "cross entropy arity mismatch");
    if (rows == 0) throw Error(ErrorCategory::Internal, "cross entropy on 0 rows");
    auto p = std::make_shared<Eigen::MatrixXd>(row_softmax(logits->value));
    double loss = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r)
        loss -= weights[r] * std::log(std::max((*p)(r, targets[r]), 1e-300));
    loss /= static_cast<double>(rows);
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = loss;
    return t.make(std::move(out), wants_grad(logits),
                  [logits, targets, weights, p, rows](Node& self) {
                      if (!logits->needs_grad) return;
                      double g = self.grad(0, 0) / static_cast<double>(rows);
                      Eigen::MatrixXd dl = *p;
                      for (Eigen::Index r = 0; r < rows; ++r) {
                          dl(r, targets[r]) -= 1.0;
                          dl.row(r) *= g * weights[r];
                      }
                      logits->add_grad(dl);
                  });
}

Var smoothed_cross_entropy(Tape& t, Var logits, const std::vector<int>& targets,
                           double smoothing) {
    const Eigen::Index rows = logits->value.rows();
    const Eigen::Index vocab = logits->value.cols();
    if (static_cast<Eigen::Index>(targets.size()) != rows)
        throw Error(ErrorCategory::Internal, "cross entropy arity mismatch");
    if (rows == 0) throw Error(ErrorCategory::Internal, "cross entropy on 0 rows");
    const double uni = smoothing / static_cast<double>(vocab);
    const double hot = 1.0 - smoothing;
    auto p = std::make_shared<Eigen::MatrixXd>(row_softmax(logits->value));
    double loss = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        double logz = 0.0; // -sum_c q_c log p_c, accumulated directly
        for (Eigen::Index c = 0; c < vocab; ++c) {
            double q = uni + (c == targets[r] ? hot : 0.0);
            logz -= q * std::log(std::max((*p)(r, c), 1e-300));
        }
        loss += logz;
    }
    loss /= static_cast<double>(rows);
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = loss;
    return t.make(std::move(out), wants_grad(logits),
                  [logits, targets, p, rows, uni, hot](Node& self) {
                      if (!logits->needs_grad) return;
                      double g = self.grad(0, 0) / static_cast<double>(rows);
                      Eigen::MatrixXd dl = *p;
                      dl.array() -= uni;
                      for (Eigen::Index r = 0; r < rows; ++r)
                          dl(r, targets[r]) -= hot;
                      logits->add_grad(dl * g);
                  });
}

Var scalar_mix(Tape& t, Var logits, const std::vector<Eigen::MatrixXd>& stack) {
    const Eigen::Index n = logits->value.size();
    if (static_cast<std::size_t>(n) != stack.size())
        throw Error(ErrorCategory::Internal,
                    "scalar mix arity mismatch: " + std::to_string(n) + " logits vs " +
                        std::to_string(stack.size()) + " layers");
    Eigen::VectorXd flat(n);
    for (Eigen::Index i = 0; i < n; ++i) flat(i) = logits->value(i);
    Eigen::VectorXd alpha = (flat.array() - flat.maxCoeff()).exp();
    alpha /= alpha.sum();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(stack[0].rows(), stack[0].cols());
    for (Eigen::Index j = 0; j < n; ++j) out += alpha(j) * stack[j];
    auto stack_copy = std::make_shared<std::vector<Eigen::MatrixXd>>(stack);
    return t.make(std::move(out), wants_grad(logits),
                  [logits, alpha, stack_copy, n](Node& self) {
                      if (!logits->needs_grad) return;
                      Eigen::VectorXd dots(n);
                      for (Eigen::Index j = 0; j < n; ++j)
                          dots(j) = self.grad.cwiseProduct((*stack_copy)[j]).sum();
                      double mixbar = alpha.dot(dots);
                      Eigen::MatrixXd dl(logits->value.rows(), logits->value.cols());
                      for (Eigen::Index j = 0; j < n; ++j)
                          dl(j) = alpha(j) * (dots(j) - mixbar);
                      logits->add_grad(dl);
                  });
}

Var mean_row_sqdist(Tape& t, Var a, Var b) {
    const double rows = static_cast<double>(a->value.rows());
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw Error(ErrorCategory::Internal, "row distance shape mismatch");
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = (a->value - b->value).squaredNorm() / rows;
    return t.make(std::move(out), wants_grad(a, b), [a, b, rows](Node& self) {
        double g = self.grad(0, 0) * 2.0 / rows;
        if (a->needs_grad) a->add_grad(g * (a->value - b->value));
        if (b->needs_grad) b->add_grad(g * (b->value - a->value));
    });
}

Var similarity_penalty(Tape& t, Var h, int n, int split_width) {
    if (n < 2) {
        Eigen::MatrixXd out(1, 1);
        out(0, 0) = 0.0;
        return t.constant(std::move(out));
    }
    const Eigen::Index rows = h->value.rows();
    const double denom = static_cast<double>(n) * (n - 1);
    double total = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        double sq = 0.0;
        Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(split_width);
        for (int i = 0; i < n; ++i) {
            auto chunk = h->value.row(r).segment(i * split_width, split_width);
            sq += chunk.squaredNorm();
            s += chunk;
        }
        total += 2.0 * n * sq - 2.0 * s.squaredNorm();
    }
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = 1.0 - total / (static_cast<double>(rows) * denom);
    return t.make(std::move(out), wants_grad(h),
                  [h, n, split_width, rows, denom](Node& self) {
                      if (!h->needs_grad) return;
                      double g =
                          -self.grad(0, 0) * 4.0 / (static_cast<double>(rows) * denom);
                      Eigen::MatrixXd dh =
                          Eigen::MatrixXd::Zero(h->value.rows(), h->value.cols());
                      for (Eigen::Index r = 0; r < rows; ++r) {
                          Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(split_width);
                          for (int i = 0; i < n; ++i)
                              s += h->value.row(r).segment(i * split_width,
                                                           split_width);
                          for (int i = 0; i < n; ++i) {
                              auto chunk =
                                  h->value.row(r).segment(i * split_width, split_width);
                              dh.row(r).segment(i * split_width, split_width) =
                                  g * (static_cast<double>(n) * chunk - s);
                          }
                      }
                      h->add_grad(dh);
                  });
}

GradCheckResult grad_check(const std::function<double(bool)>& loss,
                           const std::vector<Param*>& params, double eps) {
    loss(true);
    std::vector<Eigen::MatrixXd> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) analytic.push_back(p->grad);

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        if (!p->trainable) continue;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            double saved = p->value(i);
            p->value(i) = saved + eps;
            double up = loss(false);
            p->value(i) = saved - eps;
            double down = loss(false);
            p->value(i) = saved;
            double fd = (up - down) / (2.0 * eps);
            double an = analytic[pi](i);
            // both below the central-difference noise floor: agree on "zero"
            if (std::abs(fd) + std::abs(an) <= 1e-7) continue;
            double rel = std::abs(fd - an) / (std::abs(fd) + std::abs(an));
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_param = p->name;
            }
        }
    }
    return result;
}

} // namespace aspectnmt::ad
