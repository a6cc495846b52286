#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "crumb/codebook.hpp"
#include "crumb/nn.hpp"

using namespace crumb;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

Codebook random_book(std::size_t n, std::size_t d, Rng& rng) {
    Codebook book;
    book.n = n;
    book.d = d;
    book.blocks = random_tensor({n, d}, rng);
    book.blocks.ensure_grad();
    book.validate();
    return book;
}

// Tie-corrected Mann-Whitney U with normal approximation; returns |z|.
double mann_whitney_abs_z(std::vector<double> a, std::vector<double> b) {
    std::vector<std::pair<double, int>> all;
    for (double v : a) all.emplace_back(v, 0);
    for (double v : b) all.emplace_back(v, 1);
    std::sort(all.begin(), all.end());
    std::size_t N = all.size();
    std::vector<double> rank(N);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < N;) {
        std::size_t j = i;
        while (j < N && all[j].first == all[i].first) ++j;
        double r = 0.5 * (i + 1 + j);  // midrank
        for (std::size_t k = i; k < j; ++k) rank[k] = r;
        double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    double r1 = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        if (all[i].second == 0) r1 += rank[i];
    double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
    double u = r1 - n1 * (n1 + 1) / 2.0;
    double mu = n1 * n2 / 2.0;
    double var = n1 * n2 / 12.0 *
                 ((N + 1) - tie_term / (static_cast<double>(N) * (N - 1)));
    return std::fabs(u - mu) / std::sqrt(var);
}

}  // namespace

TEST_CASE("similarity") {
    Rng rng(1);
    SUBCASE("orthonormal rows") {
        Codebook book = random_book(2, 2, rng);
        book.blocks.data = {1, 0, 0, 1};
        float chunk[2] = {1, 0};
        auto g = similarity(std::span<const float>(chunk, 2), book);
        CHECK(g[0] == doctest::Approx(1.0f));
        CHECK(g[1] == doctest::Approx(0.0f));
    }
    SUBCASE("row magnitude is normalized away, chunk magnitude is not") {
        Codebook book = random_book(1, 2, rng);
        book.blocks.data = {5, 0};
        float chunk[2] = {2, 0};
        auto g = similarity(std::span<const float>(chunk, 2), book);
        CHECK(g[0] == doctest::Approx(2.0f));
    }
    SUBCASE("matches scalar dot/norm oracle") {
        Codebook book = random_book(8, 5, rng);
        Tensor chunk = random_tensor({5}, rng);
        auto g = similarity(std::span<const float>(chunk.data), book);
        for (std::size_t k = 0; k < 8; ++k) {
            double dot = 0.0, nrm = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                dot += static_cast<double>(chunk.data[j]) * book.blocks.data[k * 5 + j];
                nrm += static_cast<double>(book.blocks.data[k * 5 + j]) *
                       book.blocks.data[k * 5 + j];
            }
            CHECK(g[k] == doctest::Approx(dot / std::sqrt(nrm)).epsilon(1e-6));
        }
    }
    SUBCASE("zero-norm row rejected by validate") {
        Codebook book = random_book(3, 4, rng);
        for (std::size_t j = 0; j < 4; ++j) book.blocks.data[1 * 4 + j] = 0.0f;
        CHECK_THROWS_AS(book.validate(), DataError);
    }
}

TEST_CASE("quantize") {
    Rng rng(2);
    SUBCASE("index map entry count at the reference geometry") {
        ReconstructionGeometry geom{512, 13, 13, 16};
        Codebook book = random_book(256, 16, rng);
        Tensor z = random_tensor({512, 13, 13}, rng);
        auto [m, zt] = quantize(z, book, geom);
        CHECK(m.indices.size() == 5408);
        CHECK(m.index_width == 1);
        for (auto i : m.indices) CHECK(i < 256);
        CHECK(m.stored_bytes() == 5408);
    }
    SUBCASE("chunks equal to rows are reproduced exactly") {
        ReconstructionGeometry geom{8, 2, 2, 4};
        Codebook book = random_book(6, 4, rng);
        Tensor z = Tensor::zeros({8, 2, 2});
        // chunk (f,x,y) strides over channels; plant row (f*2+x+y) % 6 there
        std::size_t w = 2, h = 2;
        std::vector<std::size_t> want;
        for (std::size_t f = 0; f < 2; ++f)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t y = 0; y < h; ++y) {
                    std::size_t k = (f * 2 + x + y) % 6;
                    want.push_back(k);
                    for (std::size_t j = 0; j < 4; ++j)
                        z.data[((f * 4 + j) * w + x) * h + y] = book.blocks.data[k * 4 + j];
                }
        auto [m, zt] = quantize(z, book, geom);
        std::size_t pos = 0;
        for (std::size_t f = 0; f < 2; ++f)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t y = 0; y < h; ++y, ++pos)
                    CHECK(m.indices[(f * w + x) * h + y] ==
                          want[(f * w + x) * h + y]);
        for (std::size_t i = 0; i < z.numel(); ++i) CHECK(zt.data[i] == z.data[i]);
    }
    SUBCASE("matches brute-force argmax oracle") {
        ReconstructionGeometry geom{8, 2, 2, 4};
        Codebook book = random_book(6, 4, rng);
        Tensor z = random_tensor({8, 2, 2}, rng);
        auto [m, zt] = quantize(z, book, geom);
        for (std::size_t f = 0; f < 2; ++f)
            for (std::size_t x = 0; x < 2; ++x)
                for (std::size_t y = 0; y < 2; ++y) {
                    float chunk[4];
                    for (std::size_t j = 0; j < 4; ++j)
                        chunk[j] = z.data[((f * 4 + j) * 2 + x) * 2 + y];
                    auto g = similarity(std::span<const float>(chunk, 4), book);
                    std::size_t best = 0;
                    for (std::size_t k = 1; k < 6; ++k)
                        if (g[k] > g[best]) best = k;
                    CHECK(m.indices[(f * 2 + x) * 2 + y] == best);
                }
    }
    SUBCASE("ties resolve to the lowest index") {
        ReconstructionGeometry geom{2, 1, 1, 2};
        Codebook book = random_book(3, 2, rng);
        // rows 1 and 2 positive-parallel: identical gamma
        book.blocks.data = {0.0f, 1.0f, 3.0f, 0.0f, 6.0f, 0.0f};
        Tensor z = Tensor::from({2, 1, 1}, {1.0f, 0.0f});
        auto [m, zt] = quantize(z, book, geom);
        CHECK(m.indices[0] == 1);
    }
    SUBCASE("shape mismatch rejected") {
        ReconstructionGeometry geom{8, 2, 2, 4};
        Codebook book = random_book(6, 4, rng);
        Tensor z = random_tensor({8, 3, 2}, rng);
        CHECK_THROWS_AS(quantize(z, book, geom), DataError);
    }
    SUBCASE("geometry requires d | s") {
        ReconstructionGeometry geom{10, 2, 2, 4};
        CHECK_THROWS_AS(geom.validate(), DataError);
    }
}

TEST_CASE("reconstruct") {
    Rng rng(3);
    SUBCASE("single-block codebook tiles row 0 everywhere") {
        Codebook book = random_book(1, 4, rng);
        IndexMap m;
        m.geom = {8, 2, 2, 4};
        m.indices.assign(8, 0);
        Tensor r = reconstruct(m, book);
        for (std::size_t f = 0; f < 2; ++f)
            for (std::size_t j = 0; j < 4; ++j)
                for (std::size_t p = 0; p < 4; ++p)
                    CHECK(r.data[(f * 4 + j) * 4 + p] == book.blocks.data[j]);
    }
    SUBCASE("round-trip is bit-exact") {
        ReconstructionGeometry geom{12, 3, 3, 4};
        Codebook book = random_book(9, 4, rng);
        Tensor z = random_tensor({12, 3, 3}, rng);
        auto [m, zt] = quantize(z, book, geom);
        Tensor r = reconstruct(m, book);
        CHECK(r.data == zt.data);
    }
    SUBCASE("updating a selected row changes exactly its slices") {
        ReconstructionGeometry geom{8, 2, 2, 4};
        Codebook book = random_book(4, 4, rng);
        IndexMap m;
        m.geom = geom;
        m.indices = {0, 1, 2, 3, 0, 1, 2, 3};
        Tensor before = reconstruct(m, book);
        book.blocks.data[2 * 4 + 1] += 0.5f;
        Tensor after = reconstruct(m, book);
        std::size_t diffs = 0;
        for (std::size_t i = 0; i < before.numel(); ++i)
            if (before.data[i] != after.data[i]) ++diffs;
        CHECK(diffs == 2);  // row 2 selected at two positions, one coord each
    }
    SUBCASE("out-of-range index rejected") {
        Codebook book = random_book(4, 4, rng);
        IndexMap m;
        m.geom = {8, 2, 2, 4};
        m.indices.assign(8, 7);
        CHECK_THROWS_AS(reconstruct(m, book), DataError);
    }
}

TEST_CASE("route_gradients") {
    Rng rng(4);
    ReconstructionGeometry geom{8, 2, 2, 4};
    Codebook book = random_book(5, 4, rng);
    book.zero_grad();

    SUBCASE("unselected rows get exactly zero; selected rows accumulate slices") {
        IndexMap m;
        m.geom = geom;
        m.indices = {3, 3, 0, 0, 0, 0, 0, 0};
        Tensor g = random_tensor({8, 2, 2}, rng);
        route_gradients(m, g, book);
        for (std::size_t j = 0; j < 4; ++j) {
            // row 3 selected at chunk 0 positions (0,0) and (0,1)
            float want = g.data[(0 * 4 + j) * 4 + 0] + g.data[(0 * 4 + j) * 4 + 1];
            CHECK(book.blocks.grad[3 * 4 + j] == doctest::Approx(want));
        }
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(book.blocks.grad[1 * 4 + j] == 0.0f);
            CHECK(book.blocks.grad[2 * 4 + j] == 0.0f);
            CHECK(book.blocks.grad[4 * 4 + j] == 0.0f);
        }
    }
    SUBCASE("grad sparsity bounded by distinct selected indices") {
        Tensor z = random_tensor({8, 2, 2}, rng);
        auto [m, zt] = quantize(z, book, geom);
        Tensor g = random_tensor({8, 2, 2}, rng);
        route_gradients(m, g, book);
        std::vector<std::uint16_t> uniq(m.indices.begin(), m.indices.end());
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        std::size_t nonzero_rows = 0;
        for (std::size_t k = 0; k < 5; ++k) {
            bool any = false;
            for (std::size_t j = 0; j < 4; ++j)
                if (book.blocks.grad[k * 4 + j] != 0.0f) any = true;
            if (any) ++nonzero_rows;
        }
        CHECK(nonzero_rows <= uniq.size());
    }
    SUBCASE("end-to-end codebook grads match finite differences") {
        // fixed selections; loss = CE(P(reconstruct(m, B)), y)
        Rng prng(7);
        Network p;
        p.layers.push_back(make_linear(8 * 2 * 2, 3, prng));
        p.split_index = 0;
        IndexMap m;
        m.geom = geom;
        m.indices = {0, 1, 2, 3, 4, 0, 1, 2};
        std::size_t target = 1;

        auto loss_fn = [&]() {
            Tensor zt = reconstruct(m, book);
            auto tr = forward(p, zt);
            return softmax_cross_entropy(tr.output(), target).first;
        };

        book.zero_grad();
        Tensor zt = reconstruct(m, book);
        auto tr = forward(p, zt);
        auto [loss, g] = softmax_cross_entropy(tr.output(), target);
        Tensor gin = backward(p, tr, g);
        route_gradients(m, gin, book);

        std::size_t checked = 0;
        for (std::size_t trial = 0; trial < 200 && checked < 10; ++trial) {
            std::size_t i = rng.below(book.blocks.numel());
            float analytic = book.blocks.grad[i];
            // floor keeps the check above the float32 finite-difference noise
            if (std::fabs(analytic) < 0.08f) continue;
            float* coord = &book.blocks.data[i];
            auto fd = finite_diff_grad(loss_fn, std::span<float* const>(&coord, 1), 1e-3f);
            float rel = std::fabs(fd[0] - analytic) /
                        std::max(std::fabs(fd[0]), std::fabs(analytic));
            CHECK(rel < 1e-3f);
            ++checked;
        }
        CHECK(checked == 10);
    }
}

TEST_CASE("codebook sgd and freezing") {
    Rng rng(5);
    Codebook book = random_book(4, 4, rng);
    book.zero_grad();
    book.blocks.grad[0] = 2.0f;
    float w0 = book.blocks.data[0];
    book.sgd_step(0.1f);
    CHECK(book.blocks.data[0] == doctest::Approx(w0 - 0.2f));
    CHECK(book.blocks.grad[0] == 0.0f);

    book.frozen = true;
    std::vector<float> before = book.blocks.data;
    book.blocks.grad.assign(book.blocks.numel(), 1.0f);
    book.sgd_step(0.1f);
    CHECK(book.blocks.data == before);
    for (float v : book.blocks.grad) CHECK(v == 0.0f);
}

TEST_CASE("argmax is invariant to positive row rescaling") {
    Rng rng(6);
    ReconstructionGeometry geom{8, 3, 3, 4};
    Codebook book = random_book(7, 4, rng);
    Tensor z = random_tensor({8, 3, 3}, rng);
    auto [m1, zt1] = quantize(z, book, geom);
    for (std::size_t j = 0; j < 4; ++j) book.blocks.data[3 * 4 + j] *= 17.0f;
    auto [m2, zt2] = quantize(z, book, geom);
    CHECK(m1.indices == m2.indices);
    // reconstruction values do change where row 3 was selected
    bool row3_used = std::count(m1.indices.begin(), m1.indices.end(), 3) > 0;
    if (row3_used) CHECK(zt1.data != zt2.data);
}

TEST_CASE("quantize(reconstruct(m)) is idempotent") {
    Rng rng(8);
    ReconstructionGeometry geom{8, 3, 3, 4};
    Codebook book = random_book(7, 4, rng);  // random rows: no positive-parallel pair
    Tensor z = random_tensor({8, 3, 3}, rng);
    auto [m, zt] = quantize(z, book, geom);
    auto [m2, zt2] = quantize(reconstruct(m, book), book, geom);
    CHECK(m.indices == m2.indices);
}

TEST_CASE("init_codebook") {
    Rng rng(9);
    std::vector<Tensor> refs;
    for (int i = 0; i < 3; ++i) {
        Tensor t = random_tensor({16, 4, 4}, rng);
        for (auto& v : t.data) v = std::max(0.0f, v) * 3.0f;  // relu-like, scaled
        refs.push_back(std::move(t));
    }

    SUBCASE("matched_sparse zero fraction near 0.64") {
        Codebook book = init_codebook(InitStrategy::MatchedSparse, 500, 20, &refs, rng);
        std::size_t zeros = 0;
        for (float v : book.blocks.data)
            if (v == 0.0f) ++zeros;
        double frac = static_cast<double>(zeros) / book.blocks.numel();
        CHECK(frac == doctest::Approx(0.64).epsilon(0.032));
        book.validate();  // no all-zero row survives
    }
    SUBCASE("uniform support is [0,1]") {
        Codebook book = init_codebook(InitStrategy::Uniform, 50, 8, nullptr, rng);
        for (float v : book.blocks.data) {
            CHECK(v >= 0.0f);
            CHECK(v < 1.0f);
        }
    }
    SUBCASE("normal strategy needs no references") {
        Codebook book = init_codebook(InitStrategy::Normal, 16, 8, nullptr, rng);
        book.validate();
        CHECK(book.blocks.numel() == 128);
    }
    SUBCASE("matched strategies require reference maps") {
        CHECK_THROWS_AS(init_codebook(InitStrategy::MatchedSparse, 8, 4, nullptr, rng),
                        ConfigError);
        CHECK_THROWS_AS(init_codebook(InitStrategy::DenseMatched, 8, 4, nullptr, rng),
                        ConfigError);
    }
    SUBCASE("matched_sparse nonzero entries match the pooled reference distribution") {
        Codebook book = init_codebook(InitStrategy::MatchedSparse, 500, 20, &refs, rng);
        std::vector<double> sample;
        for (float v : book.blocks.data)
            if (v != 0.0f) sample.push_back(v);
        std::vector<double> pool;
        for (auto& t : refs)
            for (float v : t.data)
                if (v != 0.0f) pool.push_back(v);
        // alpha = 0.01 two-sided
        CHECK(mann_whitney_abs_z(sample, pool) < 2.5758);
    }
    SUBCASE("dense_matched draws only pooled values, no zeroing") {
        Codebook book = init_codebook(InitStrategy::DenseMatched, 20, 8, &refs, rng);
        std::vector<float> pool;
        for (auto& t : refs)
            for (float v : t.data)
                if (v != 0.0f) pool.push_back(v);
        std::sort(pool.begin(), pool.end());
        for (float v : book.blocks.data)
            CHECK(std::binary_search(pool.begin(), pool.end(), v));
    }
    SUBCASE("name parsing") {
        CHECK(parse_init_strategy("matched_sparse") == InitStrategy::MatchedSparse);
        CHECK(parse_init_strategy("uniform") == InitStrategy::Uniform);
        CHECK_THROWS_AS(parse_init_strategy("bogus"), ConfigError);
    }
}

TEST_CASE("reference footprint arithmetic") {
    IndexMap m;
    m.geom = {512, 13, 13, 16};
    m.index_width = 1;
    m.indices.assign(m.geom.chunks() * 13 * 13, 0);
    CHECK(m.stored_bytes() == 5408);
    double ratio = 5408.0 / (3.0 * 224.0 * 224.0);
    CHECK(ratio == doctest::Approx(0.03593).epsilon(1e-3));
}

TEST_CASE("index map file round trip") {
    Rng rng(10);
    SUBCASE("8-bit width") {
        Codebook book = random_book(200, 4, rng);
        ReconstructionGeometry geom{8, 3, 3, 4};
        Tensor z = random_tensor({8, 3, 3}, rng);
        auto [m, zt] = quantize(z, book, geom);
        CHECK(m.index_width == 1);
        std::stringstream ss;
        write_index_map(ss, m, 42);
        CHECK(ss.str().substr(0, 4) == "CRIM");
        auto [back, label] = read_index_map(ss, 4);
        CHECK(label == 42);
        CHECK(back.indices == m.indices);
        CHECK(back.geom.w == 3);
        CHECK(back.geom.s == 8);
        CHECK(back.index_width == 1);
    }
    SUBCASE("16-bit width for n > 256") {
        Codebook book = random_book(512, 4, rng);
        CHECK(book.index_width() == 2);
        ReconstructionGeometry geom{8, 2, 2, 4};
        Tensor z = random_tensor({8, 2, 2}, rng);
        auto [m, zt] = quantize(z, book, geom);
        CHECK(m.index_width == 2);
        CHECK(m.stored_bytes() == 16);
        std::stringstream ss;
        write_index_map(ss, m, 7);
        auto [back, label] = read_index_map(ss, 4);
        CHECK(back.indices == m.indices);
        CHECK(back.index_width == 2);
    }
    SUBCASE("truncated stream rejected") {
        std::stringstream ss("CRIMx");
        CHECK_THROWS_AS(read_index_map(ss, 4), DataError);
    }
}
