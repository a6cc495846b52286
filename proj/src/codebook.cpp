#include "crumb/codebook.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "crumb/common.hpp"

namespace crumb {

void ReconstructionGeometry::validate() const {
    if (s == 0 || w == 0 || h == 0 || d == 0)
        throw DataError("geometry: zero extent");
    if (s % d != 0) throw DataError("geometry: block dimension must divide channel count");
}

void Codebook::validate() const {
    for (std::size_t k = 0; k < n; ++k) {
        float norm2 = 0.0f;
        for (float v : row(k)) norm2 += v * v;
        if (norm2 == 0.0f) throw DataError("codebook: zero-norm row " + std::to_string(k));
    }
}

void Codebook::sgd_step(float learning_rate) {
    if (!frozen && blocks.has_grad())
        for (std::size_t i = 0; i < blocks.numel(); ++i)
            blocks.data[i] -= learning_rate * blocks.grad[i];
    blocks.zero_grad();
}

std::vector<float> similarity(std::span<const float> chunk, const Codebook& book) {
    if (chunk.size() != book.d) throw DataError("similarity: chunk length mismatch");
    std::vector<float> gamma(book.n);
    for (std::size_t k = 0; k < book.n; ++k) {
        auto r = book.row(k);
        float norm2 = 0.0f, dot = 0.0f;
        for (std::size_t j = 0; j < book.d; ++j) {
            norm2 += r[j] * r[j];
            dot += chunk[j] * r[j];
        }
        if (norm2 == 0.0f) throw DataError("similarity: zero-norm row " + std::to_string(k));
        gamma[k] = dot / std::sqrt(norm2);
    }
    return gamma;
}

std::pair<IndexMap, Tensor> quantize(const Tensor& z, const Codebook& book,
                                     const ReconstructionGeometry& geom) {
    geom.validate();
    if (book.d != geom.d) throw DataError("quantize: codebook/geometry block dimension mismatch");
    if (z.shape.size() != 3 || z.shape[0] != geom.s || z.shape[1] != geom.h ||
        z.shape[2] != geom.w)
        throw DataError("quantize: feature map shape mismatch");

    // rows normalized once; chunk norm is constant across k so it never
    // affects the argmax
    std::vector<float> unit(book.n * book.d);
    for (std::size_t k = 0; k < book.n; ++k) {
        auto r = book.row(k);
        float norm2 = 0.0f;
        for (float v : r) norm2 += v * v;
        if (norm2 == 0.0f) throw DataError("quantize: zero-norm row " + std::to_string(k));
        float inv = 1.0f / std::sqrt(norm2);
        for (std::size_t j = 0; j < book.d; ++j) unit[k * book.d + j] = r[j] * inv;
    }

    std::size_t hw = geom.w * geom.h;
    IndexMap m;
    m.geom = geom;
    m.index_width = book.index_width();
    m.indices.resize(geom.chunks() * hw);
    Tensor zt = Tensor::zeros(z.shape);

    std::vector<float> chunk(geom.d);
    for (std::size_t f = 0; f < geom.chunks(); ++f) {
        for (std::size_t p = 0; p < hw; ++p) {
            for (std::size_t j = 0; j < geom.d; ++j)
                chunk[j] = z.data[(f * geom.d + j) * hw + p];
            std::size_t best = 0;
            float best_gamma = -std::numeric_limits<float>::infinity();
            for (std::size_t k = 0; k < book.n; ++k) {
                float dot = 0.0f;
                const float* u = unit.data() + k * book.d;
                for (std::size_t j = 0; j < geom.d; ++j) dot += chunk[j] * u[j];
                if (dot > best_gamma) {  // strict: ties keep the lowest k
                    best_gamma = dot;
                    best = k;
                }
            }
            m.indices[f * hw + p] = static_cast<std::uint16_t>(best);
            auto r = book.row(best);
            for (std::size_t j = 0; j < geom.d; ++j)
                zt.data[(f * geom.d + j) * hw + p] = r[j];
        }
    }
    return {std::move(m), std::move(zt)};
}

Tensor reconstruct(const IndexMap& m, const Codebook& book) {
    const auto& g = m.geom;
    g.validate();
    if (book.d != g.d) throw DataError("reconstruct: block dimension mismatch");
    if (m.indices.size() != g.chunks() * g.w * g.h)
        throw DataError("reconstruct: index count mismatch");
    std::size_t hw = g.w * g.h;
    Tensor z = Tensor::zeros({g.s, g.h, g.w});
    for (std::size_t f = 0; f < g.chunks(); ++f)
        for (std::size_t p = 0; p < hw; ++p) {
            std::size_t k = m.indices[f * hw + p];
            if (k >= book.n) throw DataError("reconstruct: block index out of range (corrupt buffer)");
            auto r = book.row(k);
            for (std::size_t j = 0; j < g.d; ++j) z.data[(f * g.d + j) * hw + p] = r[j];
        }
    return z;
}

void route_gradients(const IndexMap& m, const Tensor& grad_z_tilde, Codebook& book) {
    const auto& g = m.geom;
    if (grad_z_tilde.numel() != g.s * g.w * g.h)
        throw DataError("route_gradients: gradient shape mismatch");
    book.blocks.ensure_grad();
    std::size_t hw = g.w * g.h;
    for (std::size_t f = 0; f < g.chunks(); ++f)
        for (std::size_t p = 0; p < hw; ++p) {
            std::size_t k = m.indices[f * hw + p];
            for (std::size_t j = 0; j < g.d; ++j)
                book.blocks.grad[k * g.d + j] += grad_z_tilde.data[(f * g.d + j) * hw + p];
        }
}

InitStrategy parse_init_strategy(const std::string& name) {
    if (name == "matched_sparse") return InitStrategy::MatchedSparse;
    if (name == "dense_matched") return InitStrategy::DenseMatched;
    if (name == "normal") return InitStrategy::Normal;
    if (name == "uniform") return InitStrategy::Uniform;
    throw ConfigError("unknown codebook init strategy: " + name);
}

Codebook init_codebook(InitStrategy strategy, std::size_t n, std::size_t d,
                       const std::vector<Tensor>* reference_feature_maps, Rng& rng,
                       double zero_prob) {
    if (n == 0 || d == 0) throw ConfigError("codebook: n and d must be positive");
    Codebook book;
    book.n = n;
    book.d = d;
    book.blocks = Tensor::zeros({n, d});
    book.blocks.ensure_grad();

    std::vector<float> pool;
    bool matched = strategy == InitStrategy::MatchedSparse || strategy == InitStrategy::DenseMatched;
    if (matched) {
        if (reference_feature_maps == nullptr || reference_feature_maps->empty())
            throw ConfigError("codebook: matched init requires reference feature maps");
        for (const Tensor& t : *reference_feature_maps)
            for (float v : t.data)
                if (v != 0.0f) pool.push_back(v);
        if (pool.empty()) throw DataError("codebook: reference feature maps are all zero");
    }

    for (std::size_t k = 0; k < n; ++k) {
        bool nonzero = false;
        while (!nonzero) {
            for (std::size_t j = 0; j < d; ++j) {
                float v = 0.0f;
                switch (strategy) {
                    case InitStrategy::MatchedSparse:
                        v = pool[rng.below(pool.size())];
                        if (rng.uniform() < zero_prob) v = 0.0f;
                        break;
                    case InitStrategy::DenseMatched:
                        v = pool[rng.below(pool.size())];
                        break;
                    case InitStrategy::Normal:
                        v = rng.normal();
                        break;
                    case InitStrategy::Uniform:
                        v = static_cast<float>(rng.uniform());
                        break;
                }
                book.blocks.data[k * d + j] = v;
                nonzero = nonzero || v != 0.0f;
            }
        }
    }
    return book;
}

namespace {

constexpr char kMagic[4] = {'C', 'R', 'I', 'M'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_index_map(std::ostream& os, const IndexMap& m, std::uint32_t label) {
    os.write(kMagic, 4);
    os.write(reinterpret_cast<const char*>(&m.index_width), 1);
    write_u32(os, static_cast<std::uint32_t>(m.geom.chunks()));
    write_u32(os, static_cast<std::uint32_t>(m.geom.w));
    write_u32(os, static_cast<std::uint32_t>(m.geom.h));
    write_u32(os, label);
    if (m.index_width == 1) {
        for (std::uint16_t k : m.indices) {
            unsigned char b = static_cast<unsigned char>(k);
            os.write(reinterpret_cast<const char*>(&b), 1);
        }
    } else {
        for (std::uint16_t k : m.indices) {
            unsigned char b[2] = {static_cast<unsigned char>(k),
                                  static_cast<unsigned char>(k >> 8)};
            os.write(reinterpret_cast<const char*>(b), 2);
        }
    }
}

std::pair<IndexMap, std::uint32_t> read_index_map(std::istream& is, std::size_t d) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("index map: bad record magic");
    IndexMap m;
    is.read(reinterpret_cast<char*>(&m.index_width), 1);
    if (m.index_width != 1 && m.index_width != 2)
        throw DataError("index map: unsupported index width");
    std::uint32_t chunks = read_u32(is);
    m.geom.w = read_u32(is);
    m.geom.h = read_u32(is);
    std::uint32_t label = read_u32(is);
    m.geom.d = d;
    m.geom.s = chunks * d;
    if (!is) throw DataError("index map: truncated header");
    m.indices.resize(static_cast<std::size_t>(chunks) * m.geom.w * m.geom.h);
    for (auto& k : m.indices) {
        unsigned char b[2] = {0, 0};
        is.read(reinterpret_cast<char*>(b), m.index_width);
        k = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    if (!is) throw DataError("index map: truncated payload");
    return {std::move(m), label};
}

}  // namespace crumb
