#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crumb/rng.hpp"
#include "crumb/tensor.hpp"

namespace crumb {

struct Sample {
    Tensor image;  // c x side x side, values in [0, 1]
    std::uint32_t class_id = 0;
    std::uint32_t object_id = 0;
    std::uint32_t instance_id = 0;
    std::uint32_t frame_index = 0;
    std::uint64_t sample_id = 0;
};

enum class Protocol { ClassInstance, ClassIid };

Protocol parse_protocol(const std::string& name);
const char* protocol_name(Protocol p);

// One task: its class set plus the ordered sample sequence (indices into the
// sample pool). The first task's sequence may repeat samples across epochs;
// later tasks present each sample exactly once.
struct Task {
    std::vector<std::uint32_t> class_ids;
    std::vector<std::size_t> order;
};

struct TaskSchedule {
    Protocol protocol = Protocol::ClassIid;
    std::size_t first_task_epochs = 1;
    std::vector<Task> tasks;
};

// Seeded partition of the class list into tasks of classes_per_task (last task
// takes the remainder).
std::vector<std::vector<std::uint32_t>> partition_classes(std::vector<std::uint32_t> class_ids,
                                                          std::size_t classes_per_task,
                                                          Rng& rng);

// Clips (object x instance) shuffled uniformly; frames within each clip stay in
// ascending frame order.
std::vector<std::size_t> order_class_instance(const std::vector<Sample>& pool,
                                              const std::vector<std::size_t>& task_samples,
                                              Rng& rng);

// Uniform permutation of the task's samples.
std::vector<std::size_t> order_class_iid(const std::vector<std::size_t>& task_samples, Rng& rng);

// Full schedule: partitions classes, applies the protocol ordering per task,
// and expands the first task to first_task_epochs re-shuffled epochs.
TaskSchedule build_schedule(const std::vector<Sample>& pool, std::size_t classes_per_task,
                            Protocol protocol, std::size_t first_task_epochs, std::uint64_t seed);

struct SynthConfig {
    std::size_t classes = 10;
    std::size_t objects_per_class = 2;
    std::size_t instances_per_object = 4;
    std::size_t frames_per_instance = 10;
    std::size_t test_instances_per_object = 1;
    std::size_t image_side = 16;
    double rho = 0.8;          // AR(1) coefficient of the per-frame drift
    double noise_scale = 0.1;  // drift innovation scale
    std::uint64_t seed = 1;
    std::uint32_t class_id_offset = 0;
};

struct SynthData {
    std::vector<Sample> train;
    std::vector<Sample> test;
    // per-clip drift scalar paths, for diagnostics
    std::vector<std::vector<float>> drift_paths;
};

// Class pattern + object perturbation + AR(1) scalar drift + pixel noise,
// clamped to [0, 1]. The last test_instances_per_object instances of every
// object form the held-out test split.
SynthData synth_stream_generate(const SynthConfig& cfg);

// CSV manifest: header `path,class_id,object_id,instance_id,frame_index`,
// images as CRTN tensor files resolved relative to the manifest.
std::vector<Sample> load_manifest(const std::filesystem::path& path);

}  // namespace crumb
