#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "crumb/rng.hpp"
#include "crumb/tensor.hpp"

namespace crumb {

// Shape contract between the feature extractor output and the codebook:
// an s x w x h feature map is cut along the feature axis into s/d chunks.
struct ReconstructionGeometry {
    std::size_t s = 0, w = 0, h = 0, d = 0;

    std::size_t chunks() const { return s / d; }
    void validate() const;  // throws if d does not divide s
};

// Trainable n x d matrix whose rows are the memory blocks.
struct Codebook {
    std::size_t n = 0, d = 0;
    Tensor blocks;  // n x d, grad-carrying
    bool frozen = false;

    std::span<const float> row(std::size_t k) const {
        return {blocks.data.data() + k * d, d};
    }
    std::uint8_t index_width() const { return n <= 256 ? 1 : 2; }

    void sgd_step(float learning_rate);  // no-op on values when frozen; grads cleared
    void zero_grad() { blocks.zero_grad(); }
    // throws on any zero-norm row
    void validate() const;
};

// Grid of selected block indices: the replay payload.
struct IndexMap {
    std::vector<std::uint16_t> indices;  // chunks * w * h entries, chunk-major
    ReconstructionGeometry geom;
    std::uint8_t index_width = 1;

    std::size_t stored_bytes() const { return indices.size() * index_width; }
};

enum class InitStrategy { MatchedSparse, DenseMatched, Normal, Uniform };

InitStrategy parse_init_strategy(const std::string& name);

// Similarity of one d-chunk against every row: dot(chunk, row / ||row||).
std::vector<float> similarity(std::span<const float> chunk, const Codebook& book);

// Chunk-wise argmax-similarity quantization; ties resolve to the lowest index.
// z_tilde slices are verbatim (unnormalized) copies of the winning rows.
std::pair<IndexMap, Tensor> quantize(const Tensor& z, const Codebook& book,
                                     const ReconstructionGeometry& geom);

Tensor reconstruct(const IndexMap& m, const Codebook& book);

// grad(B_k) += sum of grad_z_tilde slices at positions where k was selected.
// Selection is treated as a constant: nothing flows back toward z.
void route_gradients(const IndexMap& m, const Tensor& grad_z_tilde, Codebook& book);

Codebook init_codebook(InitStrategy strategy, std::size_t n, std::size_t d,
                       const std::vector<Tensor>* reference_feature_maps, Rng& rng,
                       double zero_prob = 0.64);

// Record format: magic "CRIM", u8 index_width, u32 s/d, u32 w, u32 h, u32 label,
// packed indices. d is not stored; the reader takes it from the codebook side.
void write_index_map(std::ostream& os, const IndexMap& m, std::uint32_t label);
std::pair<IndexMap, std::uint32_t> read_index_map(std::istream& is, std::size_t d);

}  // namespace crumb
