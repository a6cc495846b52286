#include "crumb/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "crumb/common.hpp"

namespace crumb {

namespace {

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<std::size_t>(to_u64(key, item)));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

std::string from_size_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "seed",
        "mode",
        "protocol",
        "dataset",
        "manifest_path",
        "manifest_test_path",
        "data.classes",
        "data.objects_per_class",
        "data.instances_per_object",
        "data.frames_per_instance",
        "data.test_instances_per_object",
        "data.image_side",
        "data.rho",
        "data.noise",
        "data.pretrain_classes",
        "net.conv_channels",
        "net.kernel",
        "net.hidden",
        "train.alpha_pretrain",
        "train.beta_pretrain",
        "train.alpha_stream",
        "train.beta_stream",
        "train.lr",
        "train.batch_size",
        "train.replay_batch_size",
        "train.pretrain_epochs",
        "train.first_task_epochs",
        "train.upper_bound_epochs",
        "train.buffer_capacity",
        "train.codebook_n",
        "train.codebook_d",
        "train.freeze_codebook",
        "train.codebook_init",
        "train.matched_zero_prob",
        "train.joint_replay_step",
        "train.early_feature_layer",
        "train.classes_per_task",
        "train.stop_after_task",
        "eval.batch",
        "eval.partition_seed",
        "report.filter",
    };
    return keys;
}

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& v) {
    auto u = [&] { return to_u64(key, v); };
    auto z = [&] { return static_cast<std::size_t>(to_u64(key, v)); };
    auto d = [&] { return to_double(key, v); };
    auto f = [&] { return static_cast<float>(to_double(key, v)); };
    auto b = [&] { return to_bool(key, v); };

    if (key == "seed") cfg.seed = u();
    else if (key == "mode") { parse_mode(v); cfg.mode = v; }
    else if (key == "protocol") { parse_protocol(v); cfg.protocol = v; }
    else if (key == "dataset") {
        if (v != "synthetic" && v != "manifest")
            throw ConfigError("config key 'dataset': expected synthetic or manifest");
        cfg.dataset = v;
    }
    else if (key == "manifest_path") cfg.manifest_path = v;
    else if (key == "manifest_test_path") cfg.manifest_test_path = v;
    else if (key == "data.classes") cfg.data.classes = z();
    else if (key == "data.objects_per_class") cfg.data.objects_per_class = z();
    else if (key == "data.instances_per_object") cfg.data.instances_per_object = z();
    else if (key == "data.frames_per_instance") cfg.data.frames_per_instance = z();
    else if (key == "data.test_instances_per_object") cfg.data.test_instances_per_object = z();
    else if (key == "data.image_side") cfg.data.image_side = z();
    else if (key == "data.rho") cfg.data.rho = d();
    else if (key == "data.noise") cfg.data.noise_scale = d();
    else if (key == "data.pretrain_classes") cfg.pretrain_classes = z();
    else if (key == "net.conv_channels") cfg.net.conv_channels = to_size_list(key, v);
    else if (key == "net.kernel") cfg.net.kernel = z();
    else if (key == "net.hidden") cfg.net.hidden = z();
    else if (key == "train.alpha_pretrain") cfg.train.alpha_pretrain = f();
    else if (key == "train.beta_pretrain") cfg.train.beta_pretrain = f();
    else if (key == "train.alpha_stream") cfg.train.alpha_stream = f();
    else if (key == "train.beta_stream") cfg.train.beta_stream = f();
    else if (key == "train.lr") cfg.train.learning_rate = f();
    else if (key == "train.batch_size") cfg.train.batch_size = z();
    else if (key == "train.replay_batch_size") cfg.train.replay_batch_size = z();
    else if (key == "train.pretrain_epochs") cfg.train.pretrain_epochs = z();
    else if (key == "train.first_task_epochs") cfg.train.first_task_epochs = z();
    else if (key == "train.upper_bound_epochs") cfg.train.upper_bound_epochs = z();
    else if (key == "train.buffer_capacity") cfg.train.buffer_capacity = z();
    else if (key == "train.codebook_n") cfg.train.codebook_n = z();
    else if (key == "train.codebook_d") cfg.train.codebook_d = z();
    else if (key == "train.freeze_codebook") cfg.train.freeze_codebook = b();
    else if (key == "train.codebook_init") { parse_init_strategy(v); cfg.train.codebook_init = v; }
    else if (key == "train.matched_zero_prob") cfg.train.matched_zero_prob = d();
    else if (key == "train.joint_replay_step") cfg.train.joint_replay_step = b();
    else if (key == "train.early_feature_layer") cfg.train.early_feature_layer = z();
    else if (key == "train.classes_per_task") cfg.classes_per_task = z();
    else if (key == "train.stop_after_task") cfg.stop_after_task = z();
    else if (key == "eval.batch") cfg.eval_batch = z();
    else if (key == "eval.partition_seed") cfg.eval_partition_seed = u();
    else if (key == "report.filter") cfg.report_filter = b();
    else throw ConfigError("unknown config key '" + key + "'");
}

std::string get_config_key(const RunConfig& cfg, const std::string& key) {
    if (key == "seed") return std::to_string(cfg.seed);
    if (key == "mode") return cfg.mode;
    if (key == "protocol") return cfg.protocol;
    if (key == "dataset") return cfg.dataset;
    if (key == "manifest_path") return cfg.manifest_path;
    if (key == "manifest_test_path") return cfg.manifest_test_path;
    if (key == "data.classes") return std::to_string(cfg.data.classes);
    if (key == "data.objects_per_class") return std::to_string(cfg.data.objects_per_class);
    if (key == "data.instances_per_object") return std::to_string(cfg.data.instances_per_object);
    if (key == "data.frames_per_instance") return std::to_string(cfg.data.frames_per_instance);
    if (key == "data.test_instances_per_object")
        return std::to_string(cfg.data.test_instances_per_object);
    if (key == "data.image_side") return std::to_string(cfg.data.image_side);
    if (key == "data.rho") return fmt_double(cfg.data.rho);
    if (key == "data.noise") return fmt_double(cfg.data.noise_scale);
    if (key == "data.pretrain_classes") return std::to_string(cfg.pretrain_classes);
    if (key == "net.conv_channels") return from_size_list(cfg.net.conv_channels);
    if (key == "net.kernel") return std::to_string(cfg.net.kernel);
    if (key == "net.hidden") return std::to_string(cfg.net.hidden);
    if (key == "train.alpha_pretrain") return fmt_double(cfg.train.alpha_pretrain);
    if (key == "train.beta_pretrain") return fmt_double(cfg.train.beta_pretrain);
    if (key == "train.alpha_stream") return fmt_double(cfg.train.alpha_stream);
    if (key == "train.beta_stream") return fmt_double(cfg.train.beta_stream);
    if (key == "train.lr") return fmt_double(cfg.train.learning_rate);
    if (key == "train.batch_size") return std::to_string(cfg.train.batch_size);
    if (key == "train.replay_batch_size") return std::to_string(cfg.train.replay_batch_size);
    if (key == "train.pretrain_epochs") return std::to_string(cfg.train.pretrain_epochs);
    if (key == "train.first_task_epochs") return std::to_string(cfg.train.first_task_epochs);
    if (key == "train.upper_bound_epochs") return std::to_string(cfg.train.upper_bound_epochs);
    if (key == "train.buffer_capacity") return std::to_string(cfg.train.buffer_capacity);
    if (key == "train.codebook_n") return std::to_string(cfg.train.codebook_n);
    if (key == "train.codebook_d") return std::to_string(cfg.train.codebook_d);
    if (key == "train.freeze_codebook") return cfg.train.freeze_codebook ? "true" : "false";
    if (key == "train.codebook_init") return cfg.train.codebook_init;
    if (key == "train.matched_zero_prob") return fmt_double(cfg.train.matched_zero_prob);
    if (key == "train.joint_replay_step") return cfg.train.joint_replay_step ? "true" : "false";
    if (key == "train.early_feature_layer") return std::to_string(cfg.train.early_feature_layer);
    if (key == "train.classes_per_task") return std::to_string(cfg.classes_per_task);
    if (key == "train.stop_after_task") return std::to_string(cfg.stop_after_task);
    if (key == "eval.batch") return std::to_string(cfg.eval_batch);
    if (key == "eval.partition_seed") return std::to_string(cfg.eval_partition_seed);
    if (key == "report.filter") return cfg.report_filter ? "true" : "false";
    throw ConfigError("unknown config key '" + key + "'");
}

void parse_config_stream(RunConfig& cfg, std::istream& is, const std::string& source_name) {
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t");
        line = line.substr(first, last - first + 1);
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(source_name + ":" + std::to_string(lineno) +
                                  ": malformed section header");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source_name + ":" + std::to_string(lineno) +
                              ": expected key = value");
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            auto b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!section.empty()) key = section + "." + key;
        try {
            set_config_key(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(source_name + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    parse_config_stream(base, is, path.filename().string());
    return base;
}

void write_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write config echo: " + path.string());
    for (const auto& key : config_keys()) os << key << " = " << get_config_key(cfg, key) << "\n";
}

TrainConfig resolved_train_config(const RunConfig& cfg) {
    TrainConfig t = cfg.train;
    t.mode = parse_mode(cfg.mode);
    t.seed = cfg.seed;
    return t;
}

SynthConfig resolved_stream_data_config(const RunConfig& cfg) {
    SynthConfig d = cfg.data;
    d.seed = cfg.seed * 0x9E3779B97F4A7C15ULL + 1;
    d.class_id_offset = 0;
    return d;
}

SynthConfig resolved_pretrain_data_config(const RunConfig& cfg) {
    SynthConfig d = cfg.data;
    d.classes = cfg.pretrain_classes;
    d.seed = cfg.seed * 0x9E3779B97F4A7C15ULL + 2;
    // disjoint id space from the stream classes
    d.class_id_offset = 10000;
    return d;
}

}  // namespace crumb
