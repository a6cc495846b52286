#include "crumb/replay_buffer.hpp"

#include <fstream>

#include <json.hpp>

#include "crumb/common.hpp"

namespace crumb {

std::size_t capacity_from_budget(std::size_t n_r, std::size_t w_i, std::size_t h_i,
                                 std::size_t b, std::size_t d, std::size_t s, std::size_t w,
                                 std::size_t h) {
    if (d == 0 || (s * w * h) % d != 0)
        throw ConfigError("capacity_from_budget: s*w*h must be divisible by d");
    long long numerator = static_cast<long long>(n_r) * 3 * w_i * h_i -
                          static_cast<long long>(b) * d;
    if (numerator <= 0) return 0;
    return static_cast<std::size_t>(numerator / static_cast<long long>(s * w * h / d));
}

ExemplarStore::ExemplarStore(std::size_t capacity, PayloadKind kind, std::uint64_t seed)
    : capacity_(capacity), kind_(kind), rng_(seed) {}

std::size_t ExemplarStore::size() const {
    std::size_t n = 0;
    for (const auto& [c, v] : per_class_) n += v.size();
    return n;
}

std::size_t ExemplarStore::stored_bytes() const {
    std::size_t bytes = 0;
    for (const auto& [c, v] : per_class_)
        for (const Exemplar& ex : v) {
            switch (kind_) {
                case PayloadKind::Indices: bytes += ex.indices.stored_bytes(); break;
                case PayloadKind::Image: bytes += ex.tensor.numel(); break;  // 8-bit per channel value
                case PayloadKind::Feature: bytes += ex.tensor.numel() * sizeof(float); break;
            }
        }
    return bytes;
}

void ExemplarStore::insert(Exemplar ex) {
    ever_seen_.insert(ex.label);
    per_class_[ex.label].push_back(std::move(ex));
    rebalance();
}

void ExemplarStore::rebalance() {
    if (capacity_ == 0) {
        per_class_.clear();
        return;
    }
    std::size_t c = ever_seen_.size();
    std::size_t quota = (capacity_ + c - 1) / c;  // ceil; remainder slots first-come
    for (auto& [cls, v] : per_class_)
        while (v.size() > quota)
            v.erase(v.begin() + static_cast<std::ptrdiff_t>(rng_.below(v.size())));
    // capacity bound: shed from the largest class, ties to the lowest id
    while (size() > capacity_) {
        std::vector<Exemplar>* largest = nullptr;
        for (auto& [cls, v] : per_class_)
            if (largest == nullptr || v.size() > largest->size()) largest = &v;
        largest->erase(largest->begin() + static_cast<std::ptrdiff_t>(rng_.below(largest->size())));
    }
}

std::vector<const Exemplar*> ExemplarStore::sample_batch(std::size_t batch_size) {
    std::vector<const Exemplar*> all;
    for (const auto& [cls, v] : per_class_)
        for (const Exemplar& ex : v) all.push_back(&ex);
    if (all.empty()) throw DataError("sample_batch: store is empty");
    std::vector<const Exemplar*> out;
    out.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) out.push_back(all[rng_.below(all.size())]);
    return out;
}

namespace {

const char* kind_name(PayloadKind k) {
    switch (k) {
        case PayloadKind::Indices: return "indices";
        case PayloadKind::Image: return "image";
        case PayloadKind::Feature: return "feature";
    }
    return "?";
}

PayloadKind parse_kind(const std::string& name) {
    if (name == "indices") return PayloadKind::Indices;
    if (name == "image") return PayloadKind::Image;
    if (name == "feature") return PayloadKind::Feature;
    throw DataError("exemplar store: unknown payload kind: " + name);
}

}  // namespace

void ExemplarStore::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json meta;
    meta["capacity"] = capacity_;
    meta["kind"] = kind_name(kind_);
    meta["rng_state"] = rng_.save_state();
    meta["seen_classes"] = std::vector<std::uint32_t>(ever_seen_.begin(), ever_seen_.end());
    nlohmann::json counts = nlohmann::json::object();
    std::vector<std::uint32_t> labels;
    if (kind_ == PayloadKind::Indices) {
        std::ofstream rec(dir / "exemplars.bin", std::ios::binary);
        if (!rec) throw DataError("exemplar store: cannot write records");
        for (const auto& [cls, v] : per_class_) {
            counts[std::to_string(cls)] = v.size();
            for (const Exemplar& ex : v) write_index_map(rec, ex.indices, ex.label);
        }
    } else {
        std::size_t i = 0;
        for (const auto& [cls, v] : per_class_) {
            counts[std::to_string(cls)] = v.size();
            for (const Exemplar& ex : v) {
                save_tensor(dir / ("ex_" + std::to_string(i++) + ".crtn"), ex.tensor);
                labels.push_back(ex.label);
            }
        }
        meta["labels"] = labels;
    }
    meta["per_class_counts"] = counts;
    std::ofstream side(dir / "store.json");
    side << meta.dump(2) << "\n";
}

ExemplarStore ExemplarStore::load(const std::filesystem::path& dir, std::size_t d) {
    std::ifstream side(dir / "store.json");
    if (!side) throw DataError("exemplar store: missing sidecar: " + dir.string());
    nlohmann::json meta = nlohmann::json::parse(side);
    PayloadKind kind = parse_kind(meta.at("kind").get<std::string>());
    ExemplarStore store(meta.at("capacity").get<std::size_t>(), kind, 0);
    store.rng_.restore_state(meta.at("rng_state").get<std::string>());
    for (auto cls : meta.at("seen_classes").get<std::vector<std::uint32_t>>())
        store.ever_seen_.insert(cls);
    if (kind == PayloadKind::Indices) {
        std::ifstream rec(dir / "exemplars.bin", std::ios::binary);
        if (!rec) throw DataError("exemplar store: missing records: " + dir.string());
        while (rec.peek() != std::char_traits<char>::eof()) {
            auto [m, label] = read_index_map(rec, d);
            Exemplar ex;
            ex.label = label;
            ex.indices = std::move(m);
            store.per_class_[label].push_back(std::move(ex));
        }
    } else {
        auto labels = meta.at("labels").get<std::vector<std::uint32_t>>();
        for (std::size_t i = 0; i < labels.size(); ++i) {
            Exemplar ex;
            ex.label = labels[i];
            ex.tensor = load_tensor(dir / ("ex_" + std::to_string(i) + ".crtn"));
            store.per_class_[ex.label].push_back(std::move(ex));
        }
    }
    return store;
}

}  // namespace crumb
