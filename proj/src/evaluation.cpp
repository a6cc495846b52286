#include "crumb/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crumb/common.hpp"
#include "crumb/stats.hpp"

namespace crumb {

std::size_t predict(const Network& net, const Tensor& image) {
    auto trace = forward(net, image);
    const Tensor& logits = trace.output();
    return static_cast<std::size_t>(
        std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin());
}

double top1_accuracy(std::span<const PredictionRecord> records) {
    if (records.empty()) throw DataError("top1_accuracy: empty test set");
    std::size_t hits = 0;
    for (const auto& r : records)
        if (r.truth == r.predicted) ++hits;
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

TTestResult batch_paired_ttest(std::span<const double> series_a,
                               std::span<const double> series_b) {
    if (series_a.size() != series_b.size())
        throw DataError("paired t-test: series length mismatch");
    std::size_t n = series_a.size();
    if (n < 2) throw DataError("paired t-test: need at least 2 pairs");

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += series_a[i] - series_b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = series_a[i] - series_b[i] - mean;
        ss += d * d;
    }
    TTestResult res;
    res.df = static_cast<double>(n - 1);
    if (ss == 0.0 && mean == 0.0) {
        res.t = 0.0;
        res.p = 1.0;  // identical series by convention
        return res;
    }
    double se = std::sqrt(ss / (res.df * static_cast<double>(n)));
    if (se == 0.0) {
        res.t = mean > 0 ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
        res.p = 0.0;
        return res;
    }
    res.t = mean / se;
    res.p = student_t_two_sided_p(res.t, res.df);
    return res;
}

std::vector<double> batch_accuracy_series(std::span<const PredictionRecord> records,
                                          std::size_t batch_size, std::uint64_t partition_seed) {
    if (batch_size == 0) throw ConfigError("batch_accuracy_series: zero batch size");
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    // identical seed across runs keeps batch partitions comparable
    Rng rng(partition_seed);
    rng.shuffle(order);
    std::vector<double> out;
    std::size_t full_batches = records.size() / batch_size;
    for (std::size_t b = 0; b < full_batches; ++b) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < batch_size; ++i) {
            const auto& r = records[order[b * batch_size + i]];
            if (r.truth == r.predicted) ++hits;
        }
        out.push_back(static_cast<double>(hits) / static_cast<double>(batch_size));
    }
    return out;
}

std::vector<std::size_t> filter_runs(std::span<const double> first_task_accuracy,
                                     std::span<const double> thresholds) {
    std::vector<std::size_t> kept;
    for (double thr : thresholds) {
        kept.clear();
        for (std::size_t i = 0; i < first_task_accuracy.size(); ++i)
            if (first_task_accuracy[i] >= thr) kept.push_back(i);
        if (!kept.empty()) return kept;
    }
    kept.resize(first_task_accuracy.size());
    std::iota(kept.begin(), kept.end(), 0);
    return kept;
}

std::vector<std::uint16_t> block_activation_map(const Network& net, const Codebook& book,
                                                const ReconstructionGeometry& geom,
                                                const Tensor& image, std::size_t chunk_slot) {
    if (chunk_slot >= geom.chunks())
        throw DataError("block_activation_map: chunk slot out of range");
    auto trace = forward(net, image, 0, net.split_index);
    auto [m, zt] = quantize(trace.output(), book, geom);
    std::size_t hw = geom.w * geom.h;
    std::vector<std::uint16_t> grid(m.indices.begin() + static_cast<std::ptrdiff_t>(chunk_slot * hw),
                                    m.indices.begin() +
                                        static_cast<std::ptrdiff_t>((chunk_slot + 1) * hw));
    return grid;
}

}  // namespace crumb
