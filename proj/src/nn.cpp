#include "podgen/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace podgen::nn {

void Adam::step(ParamList& params) {
    if (m.empty()) {
        m.resize(params.size());
        v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i].setZero(params[i].tensor->v.rows(), params[i].tensor->v.cols());
            v[i].setZero(params[i].tensor->v.rows(), params[i].tensor->v.cols());
        }
    }
    if (m.size() != params.size())
        throw std::runtime_error("Adam: parameter list changed size");
    ++step_count;
    const float bc1 = 1.0f - std::pow(beta1, float(step_count));
    const float bc2 = 1.0f - std::pow(beta2, float(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = *params[i].tensor;
        m[i] = beta1 * m[i] + (1.0f - beta1) * t.g;
        v[i] = beta2 * v[i] + (1.0f - beta2) * t.g.cwiseProduct(t.g);
        t.v.array() -=
            lr * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + eps);
    }
}

// ---- linear ----

void Linear::init(int in, int out, Rng& rng, float scale) {
    if (scale < 0.0f) scale = 1.0f / std::sqrt(float(in));
    w.init_normal(in, out, rng, scale);
    b.init(1, out);
}

void Linear::collect(ParamList& params, const std::string& prefix) {
    params.push_back({prefix + ".w", &w});
    params.push_back({prefix + ".b", &b});
}

Eigen::MatrixXf linear_fwd(const Linear& lin, const Eigen::MatrixXf& x, LinearCache* cache) {
    if (x.cols() != lin.w.v.rows())
        throw std::invalid_argument("linear_fwd: dimension mismatch");
    if (cache) cache->x = x;
    return (x * lin.w.v).rowwise() + lin.b.v.row(0);
}

Eigen::MatrixXf linear_bwd(Linear& lin, const LinearCache& cache, const Eigen::MatrixXf& dy) {
    lin.w.g.noalias() += cache.x.transpose() * dy;
    lin.b.g.row(0) += dy.colwise().sum();
    return dy * lin.w.v.transpose();
}

// ---- layer norm ----

void LayerNorm::init(int dim) {
    gamma.init(1, dim);
    gamma.v.setOnes();
    beta.init(1, dim);
}

void LayerNorm::collect(ParamList& params, const std::string& prefix) {
    params.push_back({prefix + ".gamma", &gamma});
    params.push_back({prefix + ".beta", &beta});
}

Eigen::MatrixXf layernorm_fwd(const LayerNorm& ln, const Eigen::MatrixXf& x,
                              LayerNormCache* cache) {
    const float eps = 1e-5f;
    Eigen::VectorXf mean = x.rowwise().mean();
    Eigen::MatrixXf centered = x.colwise() - mean;
    Eigen::VectorXf var = centered.array().square().rowwise().mean();
    Eigen::VectorXf inv_std = (var.array() + eps).rsqrt();
    Eigen::MatrixXf xhat = centered.array().colwise() * inv_std.array();
    if (cache) {
        cache->xhat = xhat;
        cache->inv_std = inv_std;
    }
    return (xhat.array().rowwise() * ln.gamma.v.row(0).array()).rowwise() +
           ln.beta.v.row(0).array();
}

Eigen::MatrixXf layernorm_bwd(LayerNorm& ln, const LayerNormCache& cache,
                              const Eigen::MatrixXf& dy) {
    const auto& xhat = cache.xhat;
    ln.gamma.g.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    ln.beta.g.row(0) += dy.colwise().sum();
    Eigen::MatrixXf dxhat = dy.array().rowwise() * ln.gamma.v.row(0).array();
    const float d = float(xhat.cols());
    Eigen::VectorXf sum_dxhat = dxhat.rowwise().sum();
    Eigen::VectorXf sum_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum();
    Eigen::MatrixXf dx =
        (dxhat.array() - (sum_dxhat / d).replicate(1, xhat.cols()).array() -
         xhat.array() * (sum_dxhat_xhat / d).replicate(1, xhat.cols()).array())
            .colwise() *
        cache.inv_std.array();
    return dx;
}

// ---- gelu ----

Eigen::MatrixXf gelu_fwd(const Eigen::MatrixXf& x) {
    return x.unaryExpr([](float v) {
        return 0.5f * v * (1.0f + std::erf(v * float(M_SQRT1_2)));
    });
}

Eigen::MatrixXf gelu_bwd(const Eigen::MatrixXf& x, const Eigen::MatrixXf& dy) {
    Eigen::MatrixXf d = x.unaryExpr([](float v) {
        const float cdf = 0.5f * (1.0f + std::erf(v * float(M_SQRT1_2)));
        const float pdf = std::exp(-0.5f * v * v) / std::sqrt(2.0f * float(M_PI));
        return cdf + v * pdf;
    });
    return d.cwiseProduct(dy);
}

// ---- rope ----

void apply_rope(Eigen::MatrixXf& m, int num_heads, const std::vector<int>& positions,
                bool inverse) {
    const int dim = int(m.cols());
    if (dim % num_heads != 0) throw std::invalid_argument("apply_rope: dim % heads != 0");
    const int head_dim = dim / num_heads;
    if (head_dim % 2 != 0) throw std::invalid_argument("apply_rope: head dim must be even");
    if (int(positions.size()) != int(m.rows()))
        throw std::invalid_argument("apply_rope: positions size mismatch");
    for (int t = 0; t < int(m.rows()); ++t) {
        const float pos = float(positions[std::size_t(t)]);
        for (int h = 0; h < num_heads; ++h) {
            for (int j = 0; j < head_dim / 2; ++j) {
                const float theta =
                    pos * std::pow(10000.0f, -2.0f * float(j) / float(head_dim));
                float c = std::cos(theta);
                float s = std::sin(theta);
                if (inverse) s = -s;
                const int a = h * head_dim + 2 * j;
                const float x0 = m(t, a);
                const float x1 = m(t, a + 1);
                m(t, a) = x0 * c - x1 * s;
                m(t, a + 1) = x0 * s + x1 * c;
            }
        }
    }
}

// ---- attention ----

void Attention::init(int dim, int heads, bool use_rope, Rng& rng) {
    if (dim % heads != 0) throw std::invalid_argument("Attention: dim % heads != 0");
    num_heads = heads;
    rope = use_rope;
    wq.init(dim, dim, rng);
    wk.init(dim, dim, rng);
    wv.init(dim, dim, rng);
    wo.init(dim, dim, rng);
}

void Attention::collect(ParamList& params, const std::string& prefix) {
    wq.collect(params, prefix + ".wq");
    wk.collect(params, prefix + ".wk");
    wv.collect(params, prefix + ".wv");
    wo.collect(params, prefix + ".wo");
}

namespace {

Eigen::MatrixXf masked_softmax_rows(const Eigen::MatrixXf& scores) {
    Eigen::MatrixXf p(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const float m = scores.row(i).maxCoeff();
        Eigen::ArrayXf e = (scores.row(i).array() - m).exp();
        p.row(i) = (e / e.sum()).matrix();
    }
    return p;
}

}  // namespace

Eigen::MatrixXf attn_fwd(const Attention& attn, const Eigen::MatrixXf& x,
                         const Eigen::ArrayXXf& add_mask, const std::vector<int>& positions,
                         AttentionCache* cache) {
    const int dim = int(x.cols());
    const int heads = attn.num_heads;
    const int head_dim = dim / heads;
    AttentionCache local;
    AttentionCache& c = cache ? *cache : local;

    c.q = linear_fwd(attn.wq, x, cache ? &c.qc : nullptr);
    c.k = linear_fwd(attn.wk, x, cache ? &c.kc : nullptr);
    c.v = linear_fwd(attn.wv, x, cache ? &c.vc : nullptr);
    if (attn.rope) {
        apply_rope(c.q, heads, positions);
        apply_rope(c.k, heads, positions);
    }
    c.positions = positions;

    const float scale = 1.0f / std::sqrt(float(head_dim));
    c.concat.resize(x.rows(), dim);
    c.probs.resize(std::size_t(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = c.q.middleCols(h * head_dim, head_dim);
        auto kh = c.k.middleCols(h * head_dim, head_dim);
        auto vh = c.v.middleCols(h * head_dim, head_dim);
        Eigen::MatrixXf scores = scale * (qh * kh.transpose());
        if (add_mask.size() > 0) {
            if (add_mask.rows() != scores.rows() || add_mask.cols() != scores.cols())
                throw std::invalid_argument("attn_fwd: mask shape mismatch");
            scores.array() += add_mask;
        }
        Eigen::MatrixXf p = masked_softmax_rows(scores);
        c.concat.middleCols(h * head_dim, head_dim).noalias() = p * vh;
        c.probs[std::size_t(h)] = std::move(p);
    }
    return linear_fwd(attn.wo, c.concat, cache ? &c.oc : nullptr);
}

Eigen::MatrixXf attn_bwd(Attention& attn, const AttentionCache& cache,
                         const Eigen::MatrixXf& dy) {
    const int dim = int(cache.q.cols());
    const int heads = attn.num_heads;
    const int head_dim = dim / heads;
    const float scale = 1.0f / std::sqrt(float(head_dim));

    Eigen::MatrixXf dconcat = linear_bwd(attn.wo, cache.oc, dy);
    Eigen::MatrixXf dq(cache.q.rows(), dim), dk(cache.k.rows(), dim), dv(cache.v.rows(), dim);
    for (int h = 0; h < heads; ++h) {
        auto qh = cache.q.middleCols(h * head_dim, head_dim);
        auto kh = cache.k.middleCols(h * head_dim, head_dim);
        auto vh = cache.v.middleCols(h * head_dim, head_dim);
        const auto& p = cache.probs[std::size_t(h)];
        auto doh = dconcat.middleCols(h * head_dim, head_dim);

        Eigen::MatrixXf dp = doh * vh.transpose();
        dv.middleCols(h * head_dim, head_dim).noalias() = p.transpose() * doh;
        // softmax backward per row
        Eigen::VectorXf rowdot = (dp.array() * p.array()).rowwise().sum();
        Eigen::MatrixXf ds =
            (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
        dq.middleCols(h * head_dim, head_dim).noalias() = ds * kh;
        dk.middleCols(h * head_dim, head_dim).noalias() = ds.transpose() * qh;
    }
    if (attn.rope) {
        apply_rope(dq, heads, cache.positions, /*inverse=*/true);
        apply_rope(dk, heads, cache.positions, /*inverse=*/true);
    }
    Eigen::MatrixXf dx = linear_bwd(attn.wq, cache.qc, dq);
    dx += linear_bwd(attn.wk, cache.kc, dk);
    dx += linear_bwd(attn.wv, cache.vc, dv);
    return dx;
}

Eigen::MatrixXf attn_fwd_prefixed(const Attention& attn, const Eigen::MatrixXf& x,
                                  const Eigen::MatrixXf& prefix_k,
                                  const Eigen::MatrixXf& prefix_v, Eigen::MatrixXf* new_k,
                                  Eigen::MatrixXf* new_v) {
    if (attn.rope)
        throw std::invalid_argument("attn_fwd_prefixed: rope path not supported");
    const int dim = int(x.cols());
    const int heads = attn.num_heads;
    const int head_dim = dim / heads;

    Eigen::MatrixXf q = linear_fwd(attn.wq, x);
    Eigen::MatrixXf ks = linear_fwd(attn.wk, x);
    Eigen::MatrixXf vs = linear_fwd(attn.wv, x);

    const Eigen::Index np = prefix_k.rows();
    Eigen::MatrixXf k(np + ks.rows(), dim), v(np + vs.rows(), dim);
    if (np > 0) {
        k.topRows(np) = prefix_k;
        v.topRows(np) = prefix_v;
    }
    k.bottomRows(ks.rows()) = ks;
    v.bottomRows(vs.rows()) = vs;

    const float scale = 1.0f / std::sqrt(float(head_dim));
    Eigen::MatrixXf concat(x.rows(), dim);
    for (int h = 0; h < heads; ++h) {
        auto qh = q.middleCols(h * head_dim, head_dim);
        auto kh = k.middleCols(h * head_dim, head_dim);
        auto vh = v.middleCols(h * head_dim, head_dim);
        Eigen::MatrixXf p = masked_softmax_rows(scale * (qh * kh.transpose()));
        concat.middleCols(h * head_dim, head_dim).noalias() = p * vh;
    }
    if (new_k) *new_k = std::move(ks);
    if (new_v) *new_v = std::move(vs);
    return linear_fwd(attn.wo, concat);
}

// ---- block ----

void Block::init(int dim, int ffn_dim, int heads, bool use_rope, Rng& rng) {
    ln1.init(dim);
    ln2.init(dim);
    attn.init(dim, heads, use_rope, rng);
    fc1.init(dim, ffn_dim, rng);
    fc2.init(ffn_dim, dim, rng);
}

void Block::collect(ParamList& params, const std::string& prefix) {
    ln1.collect(params, prefix + ".ln1");
    ln2.collect(params, prefix + ".ln2");
    attn.collect(params, prefix + ".attn");
    fc1.collect(params, prefix + ".fc1");
    fc2.collect(params, prefix + ".fc2");
}

Eigen::MatrixXf block_fwd(const Block& block, const Eigen::MatrixXf& x,
                          const Eigen::ArrayXXf& add_mask, const std::vector<int>& positions,
                          BlockCache* cache) {
    BlockCache local;
    BlockCache& c = cache ? *cache : local;
    Eigen::MatrixXf n1 = layernorm_fwd(block.ln1, x, cache ? &c.ln1c : nullptr);
    Eigen::MatrixXf h1 =
        x + attn_fwd(block.attn, n1, add_mask, positions, cache ? &c.attnc : nullptr);
    Eigen::MatrixXf n2 = layernorm_fwd(block.ln2, h1, cache ? &c.ln2c : nullptr);
    c.gelu_in = linear_fwd(block.fc1, n2, cache ? &c.fc1c : nullptr);
    Eigen::MatrixXf act = gelu_fwd(c.gelu_in);
    return h1 + linear_fwd(block.fc2, act, cache ? &c.fc2c : nullptr);
}

Eigen::MatrixXf block_bwd(Block& block, const BlockCache& cache, const Eigen::MatrixXf& dy) {
    Eigen::MatrixXf dact = linear_bwd(block.fc2, cache.fc2c, dy);
    Eigen::MatrixXf dgin = gelu_bwd(cache.gelu_in, dact);
    Eigen::MatrixXf dn2 = linear_bwd(block.fc1, cache.fc1c, dgin);
    Eigen::MatrixXf dh1 = dy + layernorm_bwd(block.ln2, cache.ln2c, dn2);
    Eigen::MatrixXf dn1 = attn_bwd(block.attn, cache.attnc, dh1);
    return dh1 + layernorm_bwd(block.ln1, cache.ln1c, dn1);
}

Eigen::MatrixXf block_fwd_prefixed(const Block& block, const Eigen::MatrixXf& x,
                                   const Eigen::MatrixXf& prefix_k,
                                   const Eigen::MatrixXf& prefix_v, Eigen::MatrixXf* new_k,
                                   Eigen::MatrixXf* new_v) {
    Eigen::MatrixXf n1 = layernorm_fwd(block.ln1, x);
    Eigen::MatrixXf h1 =
        x + attn_fwd_prefixed(block.attn, n1, prefix_k, prefix_v, new_k, new_v);
    Eigen::MatrixXf n2 = layernorm_fwd(block.ln2, h1);
    Eigen::MatrixXf act = gelu_fwd(linear_fwd(block.fc1, n2));
    return h1 + linear_fwd(block.fc2, act);
}

// ---- conv1d ----

void Conv1d::init(int in, int out, int kernel_size, Rng& rng) {
    if (kernel_size % 2 != 1) throw std::invalid_argument("Conv1d: kernel must be odd");
    kernel = kernel_size;
    in_dim = in;
    w.init_normal(kernel * in, out, rng, 1.0f / std::sqrt(float(kernel * in)));
    b.init(1, out);
}

void Conv1d::collect(ParamList& params, const std::string& prefix) {
    params.push_back({prefix + ".w", &w});
    params.push_back({prefix + ".b", &b});
}

Eigen::MatrixXf conv1d_fwd(const Conv1d& conv, const Eigen::MatrixXf& x, Conv1dCache* cache) {
    if (int(x.cols()) != conv.in_dim)
        throw std::invalid_argument("conv1d_fwd: dimension mismatch");
    const int t = int(x.rows());
    const int half = conv.kernel / 2;
    Eigen::MatrixXf patches = Eigen::MatrixXf::Zero(t, conv.kernel * conv.in_dim);
    for (int i = 0; i < t; ++i)
        for (int k = 0; k < conv.kernel; ++k) {
            const int src = i + k - half;
            if (src >= 0 && src < t)
                patches.block(i, k * conv.in_dim, 1, conv.in_dim) = x.row(src);
        }
    if (cache) cache->patches = patches;
    return (patches * conv.w.v).rowwise() + conv.b.v.row(0);
}

Eigen::MatrixXf conv1d_bwd(Conv1d& conv, const Conv1dCache& cache, const Eigen::MatrixXf& dy) {
    conv.w.g.noalias() += cache.patches.transpose() * dy;
    conv.b.g.row(0) += dy.colwise().sum();
    Eigen::MatrixXf dpatches = dy * conv.w.v.transpose();
    const int t = int(dy.rows());
    const int half = conv.kernel / 2;
    Eigen::MatrixXf dx = Eigen::MatrixXf::Zero(t, conv.in_dim);
    for (int i = 0; i < t; ++i)
        for (int k = 0; k < conv.kernel; ++k) {
            const int src = i + k - half;
            if (src >= 0 && src < t)
                dx.row(src) += dpatches.block(i, k * conv.in_dim, 1, conv.in_dim);
        }
    return dx;
}

// ---- misc ----

Eigen::RowVectorXf sinusoidal_embedding(float value, int dim, float max_period) {
    if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even");
    Eigen::RowVectorXf out(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const float freq = std::pow(max_period, -float(i) / float(half));
        out(i) = std::sin(value * freq);
        out(half + i) = std::cos(value * freq);
    }
    return out;
}

Eigen::MatrixXf softmax_rows(const Eigen::MatrixXf& logits) {
    return masked_softmax_rows(logits);
}

}  // namespace podgen::nn
