#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <vector>

namespace podgen {

// Flow-matching hyperparameters for the detokenizer.
struct FlowConfig {
    float sigma_min = 1e-4f;
    int ode_steps = 30;
    float prefill_t = 0.999f;
    int feature_dim = 16;
    int frames_per_code = 1;
    float code_frame_rate_hz = 50.0f;
    float train_chunk_min_s = 0.5f;
    float train_chunk_max_s = 3.0f;
    float infer_chunk_s = 3.0f;

    void validate() const {
        if (!(sigma_min > 0.0f && sigma_min < 1.0f))
            throw std::invalid_argument("FlowConfig: sigma_min must be in (0,1)");
        if (ode_steps < 1) throw std::invalid_argument("FlowConfig: ode_steps >= 1");
        if (!(prefill_t > 0.0f && prefill_t < 1.0f))
            throw std::invalid_argument("FlowConfig: prefill_t must be in (0,1)");
        if (frames_per_code < 1)
            throw std::invalid_argument("FlowConfig: frames_per_code >= 1");
    }

    // Feature frames per second (codes run at code_frame_rate_hz).
    float frame_rate_hz() const { return code_frame_rate_hz * float(frames_per_code); }
};

// Straight-path noising: M(t) = t*M + (1 - (1 - sigma_min)*t)*noise.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, Eigen::Dynamic> noise_sample(
    const Eigen::MatrixBase<DerivedA>& clean, typename DerivedA::Scalar t,
    const Eigen::MatrixBase<DerivedB>& noise, typename DerivedA::Scalar sigma_min) {
    using S = typename DerivedA::Scalar;
    if (clean.rows() != noise.rows() || clean.cols() != noise.cols())
        throw std::invalid_argument("noise_sample: shape mismatch");
    return t * clean + (S(1) - (S(1) - sigma_min) * t) * noise;
}

// Velocity regression target: dM(t)/dt = M - (1 - sigma_min)*noise. Constant in t.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, Eigen::Dynamic> fm_target(
    const Eigen::MatrixBase<DerivedA>& clean, const Eigen::MatrixBase<DerivedB>& noise,
    typename DerivedA::Scalar sigma_min) {
    using S = typename DerivedA::Scalar;
    if (clean.rows() != noise.rows() || clean.cols() != noise.cols())
        throw std::invalid_argument("fm_target: shape mismatch");
    return clean - (S(1) - sigma_min) * noise;
}

// Ordered, disjoint, covering frame ranges [begin, end) over [0, total_frames).
struct ChunkPlan {
    struct Range {
        int begin = 0;
        int end = 0;
        int size() const { return end - begin; }
    };
    std::vector<Range> chunks;

    int total_frames() const { return chunks.empty() ? 0 : chunks.back().end; }
    int num_chunks() const { return int(chunks.size()); }

    void validate() const;

    // Fixed-size chunks; the final chunk keeps the remainder.
    static ChunkPlan fixed(int total_frames, int frames_per_chunk);

    // Uniformly random sizes in [min_frames, max_frames], final chunk shorter
    // if the remainder runs out.
    template <typename RngT>
    static ChunkPlan random(int total_frames, int min_frames, int max_frames, RngT& rng) {
        if (total_frames < 1) throw std::invalid_argument("ChunkPlan: total_frames >= 1");
        if (min_frames < 1 || max_frames < min_frames)
            throw std::invalid_argument("ChunkPlan: bad frame range");
        ChunkPlan plan;
        int pos = 0;
        while (pos < total_frames) {
            int size = min_frames + int(rng.uniform_int(std::uint64_t(max_frames - min_frames + 1)));
            if (pos + size > total_frames) size = total_frames - pos;
            plan.chunks.push_back({pos, pos + size});
            pos += size;
        }
        return plan;
    }
};

// Chunk-level attention mask over 2N indices: [0, N) are clean chunks,
// [N, 2N) are noisy chunks. allowed(row, col) == true means row may attend col.
//
// Rules:
//   clean i -> clean j   iff j <= i
//   clean i -> noisy j   never
//   noisy i -> clean j   iff j <= i - 1
//   noisy i -> noisy j   iff j == i
struct ChunkMask {
    int num_chunks = 0;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> allowed;

    bool clean_to_clean(int i, int j) const { return allowed(i, j); }
    bool noisy_to_clean(int i, int j) const { return allowed(num_chunks + i, j); }
    bool noisy_to_noisy(int i, int j) const {
        return allowed(num_chunks + i, num_chunks + j);
    }
};

ChunkMask make_chunk_mask(int num_chunks);

// Expand a chunk-level mask to a frame-level additive mask (0 allowed,
// -1e9 disallowed). block_sizes holds 2N entries, clean chunks first; size 0
// drops a block, which lets callers build masks over partial sequences.
Eigen::ArrayXXf expand_chunk_mask(const ChunkMask& mask, const std::vector<int>& block_sizes);

// Mean excess adjacent-frame jump at chunk boundaries: mean over boundaries b
// of ||frame_b - frame_{b-1}|| minus the median adjacent-frame distance over
// the whole sequence, floored at zero.
float boundary_discontinuity(const Eigen::MatrixXf& features,
                             const std::vector<int>& chunk_boundaries);

}  // namespace podgen
