#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "podgen/rng.hpp"

namespace podgen::nn {

struct Tensor {
    Eigen::MatrixXf v;
    Eigen::MatrixXf g;

    void init(Eigen::Index rows, Eigen::Index cols) {
        v.setZero(rows, cols);
        g.setZero(rows, cols);
    }
    void init_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng, float scale) {
        v = scale * rng.normal_matrix(rows, cols);
        g.setZero(rows, cols);
    }
};

struct ParamRef {
    std::string name;
    Tensor* tensor;
};
using ParamList = std::vector<ParamRef>;

inline void zero_grads(ParamList& params) {
    for (auto& p : params) p.tensor->g.setZero();
}

struct Adam {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    int step_count = 0;
    std::vector<Eigen::MatrixXf> m, v;

    void step(ParamList& params);
};

// ---- linear ----

struct Linear {
    Tensor w;  // in x out
    Tensor b;  // 1 x out

    void init(int in, int out, Rng& rng, float scale = -1.0f);
    void collect(ParamList& params, const std::string& prefix);
};

struct LinearCache {
    Eigen::MatrixXf x;
};

Eigen::MatrixXf linear_fwd(const Linear& lin, const Eigen::MatrixXf& x,
                           LinearCache* cache = nullptr);
Eigen::MatrixXf linear_bwd(Linear& lin, const LinearCache& cache, const Eigen::MatrixXf& dy);

// ---- layer norm ----

struct LayerNorm {
    Tensor gamma;  // 1 x dim
    Tensor beta;   // 1 x dim

    void init(int dim);
    void collect(ParamList& params, const std::string& prefix);
};

struct LayerNormCache {
    Eigen::MatrixXf xhat;
    Eigen::VectorXf inv_std;
};

Eigen::MatrixXf layernorm_fwd(const LayerNorm& ln, const Eigen::MatrixXf& x,
                              LayerNormCache* cache = nullptr);
Eigen::MatrixXf layernorm_bwd(LayerNorm& ln, const LayerNormCache& cache,
                              const Eigen::MatrixXf& dy);

// ---- gelu ----

Eigen::MatrixXf gelu_fwd(const Eigen::MatrixXf& x);
Eigen::MatrixXf gelu_bwd(const Eigen::MatrixXf& x, const Eigen::MatrixXf& dy);

// ---- rotary position embedding ----

// Rotates (q or k) in place per head; inverse=true applies the transpose
// rotation (used on gradients).
void apply_rope(Eigen::MatrixXf& m, int num_heads, const std::vector<int>& positions,
                bool inverse = false);

// ---- multi-head attention ----

struct Attention {
    Linear wq, wk, wv, wo;
    int num_heads = 1;
    bool rope = false;

    void init(int dim, int heads, bool use_rope, Rng& rng);
    void collect(ParamList& params, const std::string& prefix);
};

struct AttentionCache {
    LinearCache qc, kc, vc, oc;
    Eigen::MatrixXf q, k, v;                // post-rope
    std::vector<Eigen::MatrixXf> probs;     // per head, Tq x Tk
    Eigen::MatrixXf concat;                 // Tq x dim, pre-output-projection
    std::vector<int> positions;
};

// Full self-attention over x with an additive mask (0 allowed / -1e9 blocked).
Eigen::MatrixXf attn_fwd(const Attention& attn, const Eigen::MatrixXf& x,
                         const Eigen::ArrayXXf& add_mask, const std::vector<int>& positions,
                         AttentionCache* cache = nullptr);
Eigen::MatrixXf attn_bwd(Attention& attn, const AttentionCache& cache,
                         const Eigen::MatrixXf& dy);

// Inference path with an external key/value prefix (attention states of
// finalized chunks). Queries come from x; keys/values are [prefix; self] and
// every position is visible. The freshly projected self keys/values are
// returned through new_k/new_v so the caller can extend its cache.
Eigen::MatrixXf attn_fwd_prefixed(const Attention& attn, const Eigen::MatrixXf& x,
                                  const Eigen::MatrixXf& prefix_k,
                                  const Eigen::MatrixXf& prefix_v, Eigen::MatrixXf* new_k,
                                  Eigen::MatrixXf* new_v);

// ---- pre-LN transformer block ----

struct Block {
    LayerNorm ln1, ln2;
    Attention attn;
    Linear fc1, fc2;

    void init(int dim, int ffn_dim, int heads, bool use_rope, Rng& rng);
    void collect(ParamList& params, const std::string& prefix);
};

struct BlockCache {
    LayerNormCache ln1c, ln2c;
    AttentionCache attnc;
    LinearCache fc1c, fc2c;
    Eigen::MatrixXf gelu_in;
};

Eigen::MatrixXf block_fwd(const Block& block, const Eigen::MatrixXf& x,
                          const Eigen::ArrayXXf& add_mask, const std::vector<int>& positions,
                          BlockCache* cache = nullptr);
Eigen::MatrixXf block_bwd(Block& block, const BlockCache& cache, const Eigen::MatrixXf& dy);

Eigen::MatrixXf block_fwd_prefixed(const Block& block, const Eigen::MatrixXf& x,
                                   const Eigen::MatrixXf& prefix_k,
                                   const Eigen::MatrixXf& prefix_v, Eigen::MatrixXf* new_k,
                                   Eigen::MatrixXf* new_v);

// ---- 1-d convolution over time (same padding) ----

struct Conv1d {
    Tensor w;  // (kernel * in) x out
    Tensor b;  // 1 x out
    int kernel = 7;
    int in_dim = 0;

    void init(int in, int out, int kernel_size, Rng& rng);
    void collect(ParamList& params, const std::string& prefix);
};

struct Conv1dCache {
    Eigen::MatrixXf patches;  // T x (kernel * in)
};

Eigen::MatrixXf conv1d_fwd(const Conv1d& conv, const Eigen::MatrixXf& x,
                           Conv1dCache* cache = nullptr);
Eigen::MatrixXf conv1d_bwd(Conv1d& conv, const Conv1dCache& cache, const Eigen::MatrixXf& dy);

// ---- misc ----

// Sinusoidal embedding of a scalar (timestep or position), dim must be even.
Eigen::RowVectorXf sinusoidal_embedding(float value, int dim, float max_period = 10000.0f);

// Row-wise softmax of logits (numerically stable).
Eigen::MatrixXf softmax_rows(const Eigen::MatrixXf& logits);

}  // namespace podgen::nn
