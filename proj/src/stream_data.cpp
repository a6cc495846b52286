#include "crumb/stream_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "crumb/common.hpp"

namespace crumb {

Protocol parse_protocol(const std::string& name) {
    if (name == "class_instance") return Protocol::ClassInstance;
    if (name == "class_iid") return Protocol::ClassIid;
    throw ConfigError("unknown protocol: " + name);
}

const char* protocol_name(Protocol p) {
    return p == Protocol::ClassInstance ? "class_instance" : "class_iid";
}

std::vector<std::vector<std::uint32_t>> partition_classes(std::vector<std::uint32_t> class_ids,
                                                          std::size_t classes_per_task,
                                                          Rng& rng) {
    if (classes_per_task == 0 || class_ids.size() < classes_per_task)
        throw ConfigError("partition_classes: fewer classes than classes_per_task");
    rng.shuffle(class_ids);
    std::vector<std::vector<std::uint32_t>> tasks;
    for (std::size_t i = 0; i < class_ids.size(); i += classes_per_task) {
        std::size_t end = std::min(i + classes_per_task, class_ids.size());
        tasks.emplace_back(class_ids.begin() + static_cast<std::ptrdiff_t>(i),
                           class_ids.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return tasks;
}

std::vector<std::size_t> order_class_instance(const std::vector<Sample>& pool,
                                              const std::vector<std::size_t>& task_samples,
                                              Rng& rng) {
    // clip key: (class, object, instance); frames stay in temporal order
    std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, std::vector<std::size_t>>
        clips;
    std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::uint32_t>> seen;
    for (std::size_t idx : task_samples) {
        const Sample& s = pool[idx];
        if (!seen.insert({s.class_id, s.object_id, s.instance_id, s.frame_index}).second)
            throw DataError("order_class_instance: duplicate (object, instance, frame) triple");
        clips[{s.class_id, s.object_id, s.instance_id}].push_back(idx);
    }
    std::vector<std::vector<std::size_t>> clip_list;
    for (auto& [key, frames] : clips) {
        std::sort(frames.begin(), frames.end(), [&](std::size_t a, std::size_t b) {
            return pool[a].frame_index < pool[b].frame_index;
        });
        clip_list.push_back(std::move(frames));
    }
    rng.shuffle(clip_list);
    std::vector<std::size_t> out;
    out.reserve(task_samples.size());
    for (const auto& clip : clip_list) out.insert(out.end(), clip.begin(), clip.end());
    return out;
}

std::vector<std::size_t> order_class_iid(const std::vector<std::size_t>& task_samples, Rng& rng) {
    std::vector<std::size_t> out = task_samples;
    rng.shuffle(out);
    return out;
}

TaskSchedule build_schedule(const std::vector<Sample>& pool, std::size_t classes_per_task,
                            Protocol protocol, std::size_t first_task_epochs, std::uint64_t seed) {
    Rng rng(seed);
    std::set<std::uint32_t> class_set;
    for (const Sample& s : pool) class_set.insert(s.class_id);
    std::vector<std::uint32_t> classes(class_set.begin(), class_set.end());
    auto partitions = partition_classes(std::move(classes), classes_per_task, rng);

    TaskSchedule sched;
    sched.protocol = protocol;
    sched.first_task_epochs = std::max<std::size_t>(first_task_epochs, 1);
    for (std::size_t t = 0; t < partitions.size(); ++t) {
        Task task;
        task.class_ids = partitions[t];
        std::set<std::uint32_t> members(task.class_ids.begin(), task.class_ids.end());
        std::vector<std::size_t> samples;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (members.count(pool[i].class_id)) samples.push_back(i);
        if (samples.empty()) throw DataError("build_schedule: task has no samples");
        std::size_t epochs = t == 0 ? sched.first_task_epochs : 1;
        for (std::size_t e = 0; e < epochs; ++e) {
            auto ordered = protocol == Protocol::ClassInstance
                               ? order_class_instance(pool, samples, rng)
                               : order_class_iid(samples, rng);
            task.order.insert(task.order.end(), ordered.begin(), ordered.end());
        }
        sched.tasks.push_back(std::move(task));
    }
    return sched;
}

SynthData synth_stream_generate(const SynthConfig& cfg) {
    if (cfg.classes == 0 || cfg.objects_per_class == 0 || cfg.instances_per_object == 0 ||
        cfg.frames_per_instance == 0 || cfg.image_side == 0)
        throw ConfigError("synth: degenerate dimensions");
    if (cfg.rho < 0.0 || cfg.rho >= 1.0) throw ConfigError("synth: rho must be in [0, 1)");
    if (cfg.test_instances_per_object >= cfg.instances_per_object)
        throw ConfigError("synth: no training instances left after test split");

    Rng rng(cfg.seed);
    std::size_t npix = 3 * cfg.image_side * cfg.image_side;
    SynthData out;
    std::uint64_t next_id = 0;
    // stationary start so consecutive-frame drift correlation is rho throughout
    double start_scale = cfg.noise_scale / std::sqrt(1.0 - cfg.rho * cfg.rho);

    for (std::size_t c = 0; c < cfg.classes; ++c) {
        std::vector<float> base(npix);
        for (auto& v : base) v = rng.normal();
        for (std::size_t o = 0; o < cfg.objects_per_class; ++o) {
            std::vector<float> pattern(npix);
            for (std::size_t i = 0; i < npix; ++i) pattern[i] = base[i] + 0.3f * rng.normal();
            for (std::size_t inst = 0; inst < cfg.instances_per_object; ++inst) {
                bool is_test =
                    inst >= cfg.instances_per_object - cfg.test_instances_per_object;
                std::vector<float> drift(cfg.frames_per_instance);
                double dv = start_scale * rng.normal();
                for (std::size_t f = 0; f < cfg.frames_per_instance; ++f) {
                    drift[f] = static_cast<float>(dv);
                    dv = cfg.rho * dv + cfg.noise_scale * rng.normal();
                }
                out.drift_paths.push_back(drift);
                for (std::size_t f = 0; f < cfg.frames_per_instance; ++f) {
                    Sample s;
                    s.class_id = cfg.class_id_offset + static_cast<std::uint32_t>(c);
                    s.object_id = static_cast<std::uint32_t>(c * cfg.objects_per_class + o);
                    s.instance_id = static_cast<std::uint32_t>(inst);
                    s.frame_index = static_cast<std::uint32_t>(f);
                    s.sample_id = next_id++;
                    s.image = Tensor::zeros({3, cfg.image_side, cfg.image_side});
                    for (std::size_t i = 0; i < npix; ++i) {
                        float v = 0.5f + 0.25f * pattern[i] + drift[f] +
                                  0.05f * rng.normal();
                        s.image.data[i] = std::clamp(v, 0.0f, 1.0f);
                    }
                    (is_test ? out.test : out.train).push_back(std::move(s));
                }
            }
        }
    }
    return out;
}

namespace {

std::uint32_t parse_field_u32(const std::string& field, const char* name, std::size_t line) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(field, &pos);
    } catch (const std::exception&) {
        throw DataError("manifest line " + std::to_string(line) + ": malformed " + name + " '" +
                        field + "'");
    }
    if (pos != field.size() || v < 0 || v > 0xFFFFFFFFLL)
        throw DataError("manifest line " + std::to_string(line) + ": " + name +
                        " out of range: '" + field + "'");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<Sample> load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("manifest: cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) return {};
    if (line == "") return {};
    if (line != "path,class_id,object_id,instance_id,frame_index")
        throw DataError("manifest line 1: unexpected header '" + line + "'");

    std::vector<Sample> out;
    std::vector<std::size_t> expected_shape;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != 5)
            throw DataError("manifest line " + std::to_string(lineno) + ": expected 5 fields, got " +
                            std::to_string(fields.size()));
        Sample s;
        s.class_id = parse_field_u32(fields[1], "class_id", lineno);
        s.object_id = parse_field_u32(fields[2], "object_id", lineno);
        s.instance_id = parse_field_u32(fields[3], "instance_id", lineno);
        s.frame_index = parse_field_u32(fields[4], "frame_index", lineno);
        std::filesystem::path img = fields[0];
        if (img.is_relative()) img = path.parent_path() / img;
        if (!std::filesystem::exists(img))
            throw DataError("manifest line " + std::to_string(lineno) + ": missing file " +
                            img.string());
        s.image = load_tensor(img);
        if (s.image.shape.size() != 3)
            throw DataError("manifest line " + std::to_string(lineno) + ": image must be rank 3");
        if (expected_shape.empty())
            expected_shape = s.image.shape;
        else if (s.image.shape != expected_shape)
            throw DataError("manifest line " + std::to_string(lineno) +
                            ": inconsistent image shape");
        s.sample_id = out.size();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace crumb
