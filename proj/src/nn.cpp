#include "aspectnmt/nn.hpp"

#include <cmath>

#include "aspectnmt/errors.hpp"

namespace aspectnmt::nn {

void ParamStore::zero_grad() {
    for (Param* p : items) p->zero_grad();
}

double ParamStore::grad_norm() const {
    double sq = 0.0;
    for (Param* p : items)
        if (p->trainable) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

void ParamStore::scale_grads(double s) {
    for (Param* p : items)
        if (p->trainable) p->grad *= s;
}

void ParamStore::clip_grad_norm(double max_norm) {
    double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) scale_grads(max_norm / norm);
}

void ParamStore::to_checkpoint(Checkpoint& ckpt) const {
    for (const Param* p : items) ckpt.put(p->name, p->value);
}

void ParamStore::from_checkpoint(const Checkpoint& ckpt) {
    for (Param* p : items) {
        const Mat& stored = ckpt.get(p->name);
        if (stored.rows() != p->value.rows() || stored.cols() != p->value.cols())
            throw Error(ErrorCategory::DataFormat,
                        "checkpoint parameter '" + p->name + "' has shape " +
                            std::to_string(stored.rows()) + "x" +
                            std::to_string(stored.cols()) + ", expected " +
                            std::to_string(p->value.rows()) + "x" +
                            std::to_string(p->value.cols()));
        p->value = stored;
        p->zero_grad();
    }
}

void xavier_init(Param& p, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
        for (Eigen::Index c = 0; c < p.value.cols(); ++c)
            p.value(r, c) = rng.uniform(-limit, limit);
}

void Linear::init(const std::string& name, int in, int out, Rng& rng,
                  ParamStore& ps) {
    W = Param(name + ".W", Eigen::MatrixXd::Zero(in, out));
    b = Param(name + ".b", Eigen::MatrixXd::Zero(1, out));
    xavier_init(W, rng);
    ps.add(W);
    ps.add(b);
}

Var Linear::apply(Tape& t, Var x) const {
    Var w = t.leaf(const_cast<Param&>(W));
    Var bias = t.leaf(const_cast<Param&>(b));
    return ad::add_rowvec(t, ad::matmul(t, x, w), bias);
}

Eigen::MatrixXd Linear::apply_plain(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x * W.value;
    out.rowwise() += b.value.row(0);
    return out;
}

void LayerNorm::init(const std::string& name, int dim, ParamStore& ps) {
    gain = Param(name + ".gain", Eigen::MatrixXd::Ones(1, dim));
    bias = Param(name + ".bias", Eigen::MatrixXd::Zero(1, dim));
    ps.add(gain);
    ps.add(bias);
}

Var LayerNorm::apply(Tape& t, Var x) const {
    Var g = t.leaf(const_cast<Param&>(gain));
    Var b = t.leaf(const_cast<Param&>(bias));
    return ad::layer_norm(t, x, g, b);
}

Eigen::MatrixXd LayerNorm::apply_plain(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mean = x.row(r).mean();
        Eigen::RowVectorXd centered = x.row(r).array() - mean;
        double var = centered.squaredNorm() / static_cast<double>(x.cols());
        out.row(r) = centered / std::sqrt(var + 1e-6);
    }
    out.array().rowwise() *= gain.value.row(0).array();
    out.rowwise() += bias.value.row(0);
    return out;
}

void MultiHead::init(const std::string& name, int d_model, int head_count, Rng& rng,
                     ParamStore& ps) {
    heads = head_count;
    wq.init(name + ".q", d_model, d_model, rng, ps);
    wk.init(name + ".k", d_model, d_model, rng, ps);
    wv.init(name + ".v", d_model, d_model, rng, ps);
    wo.init(name + ".out", d_model, d_model, rng, ps);
}

Var MultiHead::self_attn(Tape& t, Var x, const std::vector<int>& offsets,
                         bool causal) const {
    Var q = wq.apply(t, x);
    Var k = wk.apply(t, x);
    Var v = wv.apply(t, x);
    Var mixed = ad::attention(t, q, k, v, heads, offsets, offsets, causal);
    return wo.apply(t, mixed);
}

Var MultiHead::cross_attn(Tape& t, Var x, Var memory,
                          const std::vector<int>& q_offsets,
                          const std::vector<int>& kv_offsets) const {
    Var q = wq.apply(t, x);
    Var k = wk.apply(t, memory);
    Var v = wv.apply(t, memory);
    Var mixed = ad::attention(t, q, k, v, heads, q_offsets, kv_offsets, false);
    return wo.apply(t, mixed);
}

Eigen::MatrixXd attention_plain(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                const Eigen::MatrixXd& v, int heads, bool causal) {
    const Eigen::Index d = q.cols();
    const Eigen::Index dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    Eigen::MatrixXd out(q.rows(), d);
    for (int h = 0; h < heads; ++h) {
        Eigen::MatrixXd scores =
            q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose() * scale;
        if (causal)
            for (Eigen::Index i = 0; i < scores.rows(); ++i)
                for (Eigen::Index j = i + 1; j < scores.cols(); ++j)
                    scores(i, j) = -1e30;
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            Eigen::RowVectorXd row = scores.row(i);
            double mx = row.maxCoeff();
            row = (row.array() - mx).exp();
            scores.row(i) = row / row.sum();
        }
        out.middleCols(h * dk, dk) = scores * v.middleCols(h * dk, dk);
    }
    return out;
}

void FeedForward::init(const std::string& name, int d_model, int d_ff, Rng& rng,
                       ParamStore& ps) {
    expand.init(name + ".in", d_model, d_ff, rng, ps);
    contract.init(name + ".out", d_ff, d_model, rng, ps);
}

Var FeedForward::apply(Tape& t, Var x) const {
    return contract.apply(t, ad::relu(t, expand.apply(t, x)));
}

Eigen::MatrixXd FeedForward::apply_plain(const Eigen::MatrixXd& x) const {
    return contract.apply_plain(expand.apply_plain(x).cwiseMax(0.0));
}

void EncoderLayer::init(const std::string& name, int d_model, int heads, int d_ff,
                        Rng& rng, ParamStore& ps) {
    norm1.init(name + ".norm1", d_model, ps);
    attn.init(name + ".attn", d_model, heads, rng, ps);
    norm2.init(name + ".norm2", d_model, ps);
    ff.init(name + ".ff", d_model, d_ff, rng, ps);
}

Var EncoderLayer::apply(Tape& t, Var x, const std::vector<int>& offsets,
                        double dropout_rate, Rng* dropout_rng, bool training) const {
    Var a = attn.self_attn(t, norm1.apply(t, x), offsets, false);
    if (training) a = ad::dropout(t, a, dropout_rate, *dropout_rng, true);
    x = ad::add(t, x, a);
    Var f = ff.apply(t, norm2.apply(t, x));
    if (training) f = ad::dropout(t, f, dropout_rate, *dropout_rng, true);
    return ad::add(t, x, f);
}

Eigen::MatrixXd EncoderLayer::apply_plain(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd n1 = norm1.apply_plain(x);
    Eigen::MatrixXd mixed =
        attention_plain(attn.wq.apply_plain(n1), attn.wk.apply_plain(n1),
                        attn.wv.apply_plain(n1), attn.heads, false);
    Eigen::MatrixXd y = x + attn.wo.apply_plain(mixed);
    return y + ff.apply_plain(norm2.apply_plain(y));
}

void DecoderLayer::init(const std::string& name, int d_model, int heads, int d_ff,
                        Rng& rng, ParamStore& ps) {
    norm1.init(name + ".norm1", d_model, ps);
    self_attn.init(name + ".self", d_model, heads, rng, ps);
    norm2.init(name + ".norm2", d_model, ps);
    cross.init(name + ".cross", d_model, heads, rng, ps);
    norm3.init(name + ".norm3", d_model, ps);
    ff.init(name + ".ff", d_model, d_ff, rng, ps);
}

Var DecoderLayer::apply(Tape& t, Var x, Var memory,
                        const std::vector<int>& tgt_offsets,
                        const std::vector<int>& src_offsets, double dropout_rate,
                        Rng* dropout_rng, bool training) const {
    Var a = self_attn.self_attn(t, norm1.apply(t, x), tgt_offsets, true);
    if (training) a = ad::dropout(t, a, dropout_rate, *dropout_rng, true);
    x = ad::add(t, x, a);
    Var c = cross.cross_attn(t, norm2.apply(t, x), memory, tgt_offsets, src_offsets);
    if (training) c = ad::dropout(t, c, dropout_rate, *dropout_rng, true);
    x = ad::add(t, x, c);
    Var f = ff.apply(t, norm3.apply(t, x));
    if (training) f = ad::dropout(t, f, dropout_rate, *dropout_rng, true);
    return ad::add(t, x, f);
}

Eigen::MatrixXd sinusoidal_positions(int max_positions, int d_model) {
    Eigen::MatrixXd pe(max_positions, d_model);
    for (int pos = 0; pos < max_positions; ++pos)
        for (int i = 0; i < d_model; i += 2) {
            double angle =
                pos / std::pow(10000.0, static_cast<double>(i) / d_model);
            pe(pos, i) = std::sin(angle);
            if (i + 1 < d_model) pe(pos, i + 1) = std::cos(angle);
        }
    return pe;
}

Eigen::MatrixXd positions_for(const Eigen::MatrixXd& pe,
                              const std::vector<int>& offsets) {
    Eigen::MatrixXd out(offsets.back(), pe.cols());
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
        for (int r = offsets[s]; r < offsets[s + 1]; ++r)
            out.row(r) = pe.row(r - offsets[s]);
    return out;
}

void SgdMomentum::step(ParamStore& ps) {
    if (clip > 0.0) ps.clip_grad_norm(clip);
    for (Param* p : ps.items) {
        if (!p->trainable) continue;
        if (p->opt_m.size() == 0)
            p->opt_m = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
        p->opt_m = momentum * p->opt_m + p->grad;
        p->value -= lr * p->opt_m;
    }
}

namespace {

void adam_update(ParamStore& ps, double lr, double beta1, double beta2, double eps,
                 long t) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Param* p : ps.items) {
        if (!p->trainable) continue;
        if (p->opt_m.size() == 0) {
            p->opt_m = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
            p->opt_v = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
        }
        p->opt_m = beta1 * p->opt_m + (1.0 - beta1) * p->grad;
        p->opt_v = beta2 * p->opt_v.array() +
                   (1.0 - beta2) * p->grad.array().square();
        Eigen::ArrayXXd mhat = p->opt_m.array() / bc1;
        Eigen::ArrayXXd vhat = p->opt_v.array() / bc2;
        p->value.array() -= lr * mhat / (vhat.sqrt() + eps);
    }
}

} // namespace

void Adam::step(ParamStore& ps) {
    if (clip > 0.0) ps.clip_grad_norm(clip);
    ++steps;
    adam_update(ps, lr, beta1, beta2, eps, steps);
}

double NoamAdam::rate(long step) const {
    double s = static_cast<double>(step);
    return factor * std::pow(static_cast<double>(d_model), -0.5) *
           std::min(std::pow(s, -0.5),
                    s * std::pow(static_cast<double>(warmup), -1.5));
}

void NoamAdam::step(ParamStore& ps) {
    ++steps;
    adam_update(ps, rate(steps), beta1, beta2, eps, steps);
}

} // namespace aspectnmt::nn
