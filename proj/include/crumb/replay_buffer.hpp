#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "crumb/codebook.hpp"
#include "crumb/rng.hpp"
#include "crumb/tensor.hpp"

namespace crumb {

enum class PayloadKind { Indices, Image, Feature };

struct Exemplar {
    std::uint32_t label = 0;
    IndexMap indices;  // PayloadKind::Indices
    Tensor tensor;     // PayloadKind::Image / Feature
};

// Byte budget arithmetic: how many index maps fit in the space of n_r raw
// images, after discounting the codebook itself.
// n = floor((n_r * 3 * w_i * h_i - b * d) / (s * w * h / d)), clamped at 0.
std::size_t capacity_from_budget(std::size_t n_r, std::size_t w_i, std::size_t h_i,
                                 std::size_t b, std::size_t d, std::size_t s, std::size_t w,
                                 std::size_t h);

// Bounded class-balanced exemplar store. When full, inserting evicts uniformly
// at random from the largest class (ties to the lowest class id); when the
// per-class quota ceil(capacity / seen_classes) shrinks because a new class
// appeared, over-quota classes are trimmed the same way.
class ExemplarStore {
  public:
    ExemplarStore(std::size_t capacity, PayloadKind kind, std::uint64_t seed);

    void insert(Exemplar ex);
    // batch_size uniform draws with replacement over all stored exemplars
    std::vector<const Exemplar*> sample_batch(std::size_t batch_size);

    std::size_t size() const;
    std::size_t capacity() const { return capacity_; }
    PayloadKind kind() const { return kind_; }
    std::size_t seen_classes() const { return ever_seen_.size(); }
    std::size_t stored_bytes() const;
    const std::map<std::uint32_t, std::vector<Exemplar>>& per_class() const { return per_class_; }

    // JSON sidecar plus concatenated CRIM records (index payloads) or one
    // tensor file per exemplar (image/feature payloads)
    void save(const std::filesystem::path& dir) const;
    static ExemplarStore load(const std::filesystem::path& dir, std::size_t d);

  private:
    void rebalance();

    std::size_t capacity_;
    PayloadKind kind_;
    Rng rng_;
    std::map<std::uint32_t, std::vector<Exemplar>> per_class_;
    std::set<std::uint32_t> ever_seen_;
};

}  // namespace crumb
