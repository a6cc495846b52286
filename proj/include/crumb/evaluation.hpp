#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crumb/codebook.hpp"
#include "crumb/nn.hpp"
#include "crumb/stream_data.hpp"

namespace crumb {

// argmax over P(F(image)) - the direct path; no quantization at test time
std::size_t predict(const Network& net, const Tensor& image);

struct PredictionRecord {
    std::uint64_t sample_id = 0;
    std::uint32_t truth = 0;
    std::uint32_t predicted = 0;
};

double top1_accuracy(std::span<const PredictionRecord> records);

// a[t][j]: accuracy on task j's test set after task t, j <= t; plus per-task
// accuracy over everything seen so far.
struct AccuracyMatrix {
    std::vector<std::vector<double>> entries;
    std::vector<double> all_seen;
};

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
};

// Paired t on per-batch accuracy differences. All-zero differences give p = 1.
TTestResult batch_paired_ttest(std::span<const double> series_a,
                               std::span<const double> series_b);

// Fixed seeded partition of test records into batches of batch_size; the final
// partial batch is dropped. Returns per-batch accuracy.
std::vector<double> batch_accuracy_series(std::span<const PredictionRecord> records,
                                          std::size_t batch_size, std::uint64_t partition_seed);

// Keeps runs with first-task accuracy above the highest threshold that retains
// at least one run; falls back to keeping all.
std::vector<std::size_t> filter_runs(std::span<const double> first_task_accuracy,
                                     std::span<const double> thresholds);

// w x h grid of block indices selected at chunk slot f for one image.
std::vector<std::uint16_t> block_activation_map(const Network& net, const Codebook& book,
                                                const ReconstructionGeometry& geom,
                                                const Tensor& image, std::size_t chunk_slot);

}  // namespace crumb
