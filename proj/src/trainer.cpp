#include "crumb/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "crumb/common.hpp"

namespace crumb {

Mode parse_mode(const std::string& name) {
    if (name == "crumb") return Mode::Crumb;
    if (name == "no_replay") return Mode::NoReplay;
    if (name == "image_replay") return Mode::ImageReplay;
    if (name == "early_feature_replay") return Mode::EarlyFeatureReplay;
    if (name == "upper_bound") return Mode::UpperBound;
    throw ConfigError("unknown mode: " + name);
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Crumb: return "crumb";
        case Mode::NoReplay: return "no_replay";
        case Mode::ImageReplay: return "image_replay";
        case Mode::EarlyFeatureReplay: return "early_feature_replay";
        case Mode::UpperBound: return "upper_bound";
    }
    return "?";
}

Network build_network(const NetSpecConfig& spec, std::size_t input_channels,
                      std::size_t input_side, std::size_t num_classes, Rng& rng) {
    if (spec.conv_channels.empty()) throw ConfigError("network: at least one conv block required");
    Network net;
    std::size_t ch = input_channels;
    std::size_t side = input_side;
    for (std::size_t out : spec.conv_channels) {
        net.layers.push_back(make_conv2d(ch, out, spec.kernel, 1, spec.kernel / 2, rng));
        net.layers.push_back(make_relu());
        net.layers.push_back(make_maxpool2d(2, 2));
        ch = out;
        if (side < 2) throw ConfigError("network: input side too small for the pool stack");
        side /= 2;
    }
    net.split_index = net.layers.size();
    std::size_t feat = ch * side * side;
    net.layers.push_back(make_linear(feat, spec.hidden, rng));
    net.layers.push_back(make_relu());
    net.layers.push_back(make_linear(spec.hidden, num_classes, rng));
    return net;
}

ReconstructionGeometry network_geometry(const Network& net, std::size_t input_channels,
                                        std::size_t input_side, std::size_t codebook_d) {
    std::size_t blocks = net.split_index / 3;
    std::size_t side = input_side >> blocks;
    const Layer& last_conv = net.layers[net.split_index - 3];
    ReconstructionGeometry geom{last_conv.out_channels, side, side, codebook_d};
    geom.validate();
    (void)input_channels;
    return geom;
}

LossResult compute_loss(Network& net, const Tensor* z, const Tensor* z_tilde,
                        std::size_t target, float alpha, float beta, float grad_scale) {
    if (alpha < 0.0f || beta < 0.0f) throw ConfigError("loss: negative weights");
    if (alpha == 0.0f && beta == 0.0f) throw ConfigError("loss: alpha and beta both zero");
    LossResult res;
    if (alpha > 0.0f) {
        if (z == nullptr) throw DataError("loss: alpha > 0 requires the direct feature map");
        auto tr = forward(net, *z, net.split_index);
        auto [ce, g] = softmax_cross_entropy(tr.output(), target);
        res.direct = ce;
        for (auto& v : g.data) v *= alpha * grad_scale;
        res.grad_z = backward(net, tr, g);
    }
    if (beta > 0.0f) {
        if (z_tilde == nullptr) throw DataError("loss: beta > 0 requires the reconstruction");
        auto tr = forward(net, *z_tilde, net.split_index);
        auto [ce, g] = softmax_cross_entropy(tr.output(), target);
        res.codebook_out = ce;
        for (auto& v : g.data) v *= beta * grad_scale;
        res.grad_z_tilde = backward(net, tr, g);
    }
    res.total = alpha * res.direct + beta * res.codebook_out;
    return res;
}

Trainer::Trainer(TrainConfig cfg, NetSpecConfig net_spec, std::size_t input_channels,
                 std::size_t input_side)
    : cfg_(std::move(cfg)),
      net_spec_(std::move(net_spec)),
      input_channels_(input_channels),
      input_side_(input_side),
      rng_(cfg_.seed) {
    net_ = build_network(net_spec_, input_channels_, input_side_, 0, rng_);
    geom_ = network_geometry(net_, input_channels_, input_side_, cfg_.codebook_d);
    if (cfg_.early_feature_layer == 0 || cfg_.early_feature_layer > net_.split_index)
        throw ConfigError("early_feature_layer must lie inside the feature extractor");
}

std::size_t Trainer::logit_of(std::uint32_t class_id) const {
    auto it = class_logit_.find(class_id);
    if (it == class_logit_.end())
        throw DataError("class " + std::to_string(class_id) + " not yet registered");
    return it->second;
}

void Trainer::extend_head(const std::vector<std::uint32_t>& new_classes) {
    for (std::uint32_t c : new_classes) {
        if (class_logit_.count(c)) throw DataError("class repeats across tasks");
        class_logit_[c] = class_order_.size();
        class_order_.push_back(c);
    }
    extend_linear_rows(net_.layers.back(), new_classes.size(), rng_);
}

void Trainer::emit(const BatchMetric& m) {
    if (metric_sink_ == nullptr) return;
    nlohmann::json j;
    j["task"] = m.task;
    j["batch"] = m.batch;
    j["phase"] = m.phase;
    j["loss_direct"] = m.loss_direct;
    j["loss_codebook"] = m.loss_codebook;
    j["buffer_size"] = m.buffer_size;
    j["seen_classes"] = m.seen_classes;
    *metric_sink_ << j.dump() << "\n";
}

void Trainer::init_codebook_from(const std::vector<Sample>& data) {
    InitStrategy strategy = parse_init_strategy(cfg_.codebook_init);
    std::vector<Tensor> refs;
    bool matched =
        strategy == InitStrategy::MatchedSparse || strategy == InitStrategy::DenseMatched;
    if (matched) {
        std::size_t count = std::min<std::size_t>(data.size(), 64);
        refs.reserve(count);
        for (std::size_t i = 0; i < count; ++i)
            refs.push_back(forward(net_, data[i].image, 0, net_.split_index).output());
    }
    book_ = init_codebook(strategy, cfg_.codebook_n, cfg_.codebook_d, matched ? &refs : nullptr,
                          rng_, cfg_.matched_zero_prob);
    book_.frozen = cfg_.freeze_codebook;
    book_.validate();
    codebook_ready_ = true;
}

void Trainer::pretrain(const std::vector<Sample>& data) {
    if (data.empty()) throw DataError("pretrain: empty dataset");
    std::set<std::uint32_t> classes;
    for (const Sample& s : data) classes.insert(s.class_id);
    extend_head({classes.begin(), classes.end()});
    if (!codebook_ready_) init_codebook_from(data);

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < cfg_.pretrain_epochs; ++epoch) {
        rng_.shuffle(order);
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            std::size_t end = std::min(start + cfg_.batch_size, order.size());
            float scale = 1.0f / static_cast<float>(end - start);
            float sum_direct = 0.0f, sum_cb = 0.0f;
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = data[order[i]];
                auto trF = forward(net_, s.image, 0, net_.split_index);
                const Tensor& z = trF.output();
                auto [m, zt] = quantize(z, book_, geom_);
                LossResult lr = compute_loss(net_, &z, &zt, logit_of(s.class_id),
                                             cfg_.alpha_pretrain, cfg_.beta_pretrain, scale);
                route_gradients(m, lr.grad_z_tilde, book_);
                if (lr.grad_z.numel() > 0) backward(net_, trF, lr.grad_z);
                sum_direct += lr.direct;
                sum_cb += lr.codebook_out;
            }
            sgd_step(net_, cfg_.learning_rate);
            book_.sgd_step(cfg_.learning_rate);
            ++step_count_;
            emit({epoch, batch_no++, "pretrain", sum_direct * scale, sum_cb * scale, 0,
                  class_order_.size()});
        }
    }
    // F is fixed from here on; grads still accumulate but sgd skips them
    for (std::size_t i = 0; i < net_.split_index; ++i) net_.layers[i].frozen = true;
}

void Trainer::begin_stream() {
    // fresh classifier head; the hidden classifier layers keep their
    // pretrained weights
    Layer& head = net_.layers.back();
    Rng head_rng(0);
    head = make_linear(head.in_features, 0, head_rng);
    class_order_.clear();
    class_logit_.clear();
    seen_pool_.clear();
    task_counter_ = 0;
    PayloadKind kind = PayloadKind::Indices;
    if (cfg_.mode == Mode::ImageReplay) kind = PayloadKind::Image;
    if (cfg_.mode == Mode::EarlyFeatureReplay) kind = PayloadKind::Feature;
    buffer_ = std::make_unique<ExemplarStore>(cfg_.buffer_capacity, kind, rng_.next_u64());
}

void Trainer::train_batch_new(const std::vector<Sample>& pool,
                              const std::vector<std::size_t>& batch,
                              std::vector<Exemplar>& staged) {
    float scale = 1.0f / static_cast<float>(batch.size());
    float sum_direct = 0.0f, sum_cb = 0.0f;
    for (std::size_t idx : batch) {
        const Sample& s = pool[idx];
        auto trF = forward(net_, s.image, 0, net_.split_index);
        const Tensor& z = trF.output();
        auto [m, zt] = quantize(z, book_, geom_);
        LossResult lr = compute_loss(net_, &z, &zt, logit_of(s.class_id), cfg_.alpha_stream,
                                     cfg_.beta_stream, scale);
        route_gradients(m, lr.grad_z_tilde, book_);
        if (lr.grad_z.numel() > 0) backward(net_, trF, lr.grad_z);
        sum_direct += lr.direct;
        sum_cb += lr.codebook_out;

        if (cfg_.mode == Mode::Crumb) {
            Exemplar ex;
            ex.label = s.class_id;
            ex.indices = std::move(m);
            staged.push_back(std::move(ex));
        } else if (cfg_.mode == Mode::ImageReplay) {
            Exemplar ex;
            ex.label = s.class_id;
            ex.tensor = s.image;
            staged.push_back(std::move(ex));
        } else if (cfg_.mode == Mode::EarlyFeatureReplay) {
            Exemplar ex;
            ex.label = s.class_id;
            ex.tensor = trF.acts[cfg_.early_feature_layer];
            staged.push_back(std::move(ex));
        }
    }
    last_new_direct_ = sum_direct * scale;
    last_new_codebook_ = sum_cb * scale;
}

void Trainer::replay_batch() {
    auto draws = buffer_->sample_batch(cfg_.replay_batch_size);
    float scale = 1.0f / static_cast<float>(draws.size());
    for (const Exemplar* ex : draws) {
        std::size_t y = logit_of(ex->label);
        switch (buffer_->kind()) {
            case PayloadKind::Indices: {
                Tensor zt = reconstruct(ex->indices, book_);
                LossResult lr = compute_loss(net_, nullptr, &zt, y, 0.0f, 1.0f, scale);
                route_gradients(ex->indices, lr.grad_z_tilde, book_);
                break;
            }
            case PayloadKind::Image: {
                // stored image runs through the full frozen F and the same
                // codebook-out path as a new image
                auto trF = forward(net_, ex->tensor, 0, net_.split_index);
                auto [m, zt] = quantize(trF.output(), book_, geom_);
                LossResult lr = compute_loss(net_, nullptr, &zt, y, 0.0f, 1.0f, scale);
                route_gradients(m, lr.grad_z_tilde, book_);
                break;
            }
            case PayloadKind::Feature: {
                auto tr = forward(net_, ex->tensor, cfg_.early_feature_layer);
                auto [ce, g] = softmax_cross_entropy(tr.output(), y);
                for (auto& v : g.data) v *= scale;
                backward(net_, tr, g);
                break;
            }
        }
    }
}

void Trainer::upper_bound_epoch() {
    std::vector<std::size_t> order(seen_pool_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_.shuffle(order);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        std::size_t end = std::min(start + cfg_.batch_size, order.size());
        float scale = 1.0f / static_cast<float>(end - start);
        float sum_direct = 0.0f;
        for (std::size_t i = start; i < end; ++i) {
            const Sample& s = seen_pool_[order[i]];
            auto trF = forward(net_, s.image, 0, net_.split_index);
            const Tensor& z = trF.output();
            LossResult lr =
                compute_loss(net_, &z, nullptr, logit_of(s.class_id), 1.0f, 0.0f, scale);
            if (lr.grad_z.numel() > 0) backward(net_, trF, lr.grad_z);
            sum_direct += lr.direct;
        }
        sgd_step(net_, cfg_.learning_rate);
        ++step_count_;
        emit({task_counter_, batch_no++, "upper_bound", sum_direct * scale, 0.0f, 0,
              class_order_.size()});
    }
}

void Trainer::stream_task(const std::vector<Sample>& pool, const Task& task) {
    if (task.order.empty()) throw DataError("stream_task: empty task");
    if (!codebook_ready_) throw DataError("stream_task: codebook not initialized (pretrain first)");
    ++task_counter_;
    std::vector<std::uint32_t> new_classes = task.class_ids;
    std::sort(new_classes.begin(), new_classes.end());
    extend_head(new_classes);

    if (cfg_.mode == Mode::UpperBound) {
        // cumulative retraining on everything seen so far
        std::set<std::size_t> uniq(task.order.begin(), task.order.end());
        for (std::size_t idx : uniq) seen_pool_.push_back(pool[idx]);
        for (std::size_t e = 0; e < cfg_.upper_bound_epochs; ++e) upper_bound_epoch();
        return;
    }

    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < task.order.size(); start += cfg_.batch_size) {
        std::size_t end = std::min(start + cfg_.batch_size, task.order.size());
        std::vector<std::size_t> batch(task.order.begin() + static_cast<std::ptrdiff_t>(start),
                                       task.order.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<Exemplar> staged;
        train_batch_new(pool, batch, staged);

        bool replay_due = task_counter_ > 1 && cfg_.mode != Mode::NoReplay &&
                          buffer_ != nullptr && buffer_->size() > 0;
        if (cfg_.joint_replay_step && replay_due) replay_batch();
        sgd_step(net_, cfg_.learning_rate);
        book_.sgd_step(cfg_.learning_rate);
        ++step_count_;

        // exemplars enter the buffer only after the gradient step on their batch
        if (cfg_.mode != Mode::NoReplay)
            for (Exemplar& ex : staged) buffer_->insert(std::move(ex));

        if (!cfg_.joint_replay_step && replay_due) {
            replay_batch();
            sgd_step(net_, cfg_.learning_rate);
            book_.sgd_step(cfg_.learning_rate);
            ++step_count_;
        }
        emit({task_counter_, batch_no++, "stream", last_new_direct_, last_new_codebook_,
              buffer_ ? buffer_->size() : 0, class_order_.size()});
    }
}

std::vector<PredictionRecord> Trainer::evaluate(const std::vector<Sample>& samples) const {
    if (class_order_.empty()) throw DataError("evaluate: no classes registered");
    std::vector<PredictionRecord> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) {
        std::size_t logit = predict(net_, s.image);
        out.push_back({s.sample_id, s.class_id, class_order_[logit]});
    }
    return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    Network& net = const_cast<Network&>(net_);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw DataError("checkpoint: cannot write manifest");
    for (const auto& [name, tensor] : parameter_tensors(net)) {
        save_tensor(dir / (name + ".crtn"), *tensor);
        manifest << name << " " << name << ".crtn\n";
    }
    save_tensor(dir / "codebook.crtn", book_.blocks);

    nlohmann::json meta;
    meta["geometry"] = {{"s", geom_.s}, {"w", geom_.w}, {"h", geom_.h}, {"d", geom_.d}};
    meta["codebook"] = {{"n", book_.n}, {"d", book_.d}, {"frozen", book_.frozen}};
    meta["class_order"] = class_order_;
    meta["task_counter"] = task_counter_;
    meta["step_count"] = step_count_;
    meta["rng_state"] = rng_.save_state();
    meta["codebook_ready"] = codebook_ready_;
    meta["f_frozen"] = net_.split_index > 0 && net_.layers[0].frozen;
    meta["mode"] = mode_name(cfg_.mode);
    std::ofstream mf(dir / "state.json");
    mf << meta.dump(2) << "\n";

    if (buffer_ && task_counter_ > 0) buffer_->save(dir / "buffer");
}

void Trainer::load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "state.json");
    if (!mf) throw DataError("checkpoint: missing state.json in " + dir.string());
    nlohmann::json meta = nlohmann::json::parse(mf);

    class_order_ = meta.at("class_order").get<std::vector<std::uint32_t>>();
    class_logit_.clear();
    for (std::size_t i = 0; i < class_order_.size(); ++i) class_logit_[class_order_[i]] = i;

    Rng scratch(0);
    net_ = build_network(net_spec_, input_channels_, input_side_, class_order_.size(), scratch);
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw DataError("checkpoint: missing manifest in " + dir.string());
    std::map<std::string, std::string> files;
    std::string name, file;
    while (manifest >> name >> file) files[name] = file;
    for (auto& [pname, tensor] : parameter_tensors(net_)) {
        auto it = files.find(pname);
        if (it == files.end()) throw DataError("checkpoint: missing parameter " + pname);
        Tensor loaded = load_tensor(dir / it->second);
        if (loaded.shape != tensor->shape)
            throw DataError("checkpoint: shape mismatch for " + pname);
        loaded.ensure_grad();
        *tensor = std::move(loaded);
    }

    auto g = meta.at("geometry");
    geom_ = {g.at("s").get<std::size_t>(), g.at("w").get<std::size_t>(),
             g.at("h").get<std::size_t>(), g.at("d").get<std::size_t>()};
    geom_.validate();
    auto cb = meta.at("codebook");
    book_.n = cb.at("n").get<std::size_t>();
    book_.d = cb.at("d").get<std::size_t>();
    book_.frozen = cb.at("frozen").get<bool>();
    book_.blocks = load_tensor(dir / "codebook.crtn");
    book_.blocks.ensure_grad();
    if (book_.d != geom_.d || book_.d != cfg_.codebook_d)
        throw DataError("checkpoint: codebook block dimension does not match configuration");

    task_counter_ = meta.at("task_counter").get<std::size_t>();
    step_count_ = meta.at("step_count").get<std::size_t>();
    rng_.restore_state(meta.at("rng_state").get<std::string>());
    codebook_ready_ = meta.at("codebook_ready").get<bool>();
    if (meta.at("f_frozen").get<bool>())
        for (std::size_t i = 0; i < net_.split_index; ++i) net_.layers[i].frozen = true;

    if (std::filesystem::exists(dir / "buffer")) {
        buffer_ = std::make_unique<ExemplarStore>(ExemplarStore::load(dir / "buffer", book_.d));
    }
}

}  // namespace crumb
