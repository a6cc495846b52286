#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "crumb/codebook.hpp"
#include "crumb/evaluation.hpp"
#include "crumb/nn.hpp"
#include "crumb/replay_buffer.hpp"
#include "crumb/stream_data.hpp"

namespace crumb {

enum class Mode { Crumb, NoReplay, ImageReplay, EarlyFeatureReplay, UpperBound };

Mode parse_mode(const std::string& name);
const char* mode_name(Mode m);

struct NetSpecConfig {
    std::vector<std::size_t> conv_channels = {16, 24, 32};
    std::size_t kernel = 3;
    std::size_t hidden = 64;
};

struct TrainConfig {
    float alpha_pretrain = 1.0f, beta_pretrain = 1.0f;
    float alpha_stream = 0.0f, beta_stream = 1.0f;
    float learning_rate = 0.05f;
    std::size_t batch_size = 8;
    std::size_t replay_batch_size = 8;
    std::size_t pretrain_epochs = 10;
    std::size_t first_task_epochs = 10;
    std::size_t upper_bound_epochs = 4;
    std::size_t buffer_capacity = 100;
    std::size_t codebook_n = 32;
    std::size_t codebook_d = 8;
    bool freeze_codebook = false;
    std::string codebook_init = "matched_sparse";
    double matched_zero_prob = 0.64;
    bool joint_replay_step = false;
    std::size_t early_feature_layer = 3;  // activation tapped before this layer index
    Mode mode = Mode::Crumb;
    std::uint64_t seed = 1;
};

// Builds F from the conv spec (conv/relu/pool blocks) and P as two linear
// layers; split_index sits at the F/P boundary.
Network build_network(const NetSpecConfig& spec, std::size_t input_channels,
                      std::size_t input_side, std::size_t num_classes, Rng& rng);
ReconstructionGeometry network_geometry(const Network& net, std::size_t input_channels,
                                        std::size_t input_side, std::size_t codebook_d);

struct BatchMetric {
    std::size_t task = 0;
    std::size_t batch = 0;
    std::string phase;
    float loss_direct = 0.0f;
    float loss_codebook = 0.0f;
    std::size_t buffer_size = 0;
    std::size_t seen_classes = 0;
};

// Both cross-entropy paths of the weighted loss. grad_z / grad_z_tilde are
// empty when the corresponding weight is zero; a zero weight skips that
// forward pass entirely, so the updates of an alpha = 0 step are bit-identical
// to a run that never evaluates the direct path.
struct LossResult {
    float total = 0.0f;
    float direct = 0.0f;
    float codebook_out = 0.0f;
    Tensor grad_z;
    Tensor grad_z_tilde;
};

LossResult compute_loss(Network& net, const Tensor* z, const Tensor* z_tilde,
                        std::size_t target, float alpha, float beta, float grad_scale);

class Trainer {
  public:
    Trainer(TrainConfig cfg, NetSpecConfig net_spec, std::size_t input_channels,
            std::size_t input_side);

    // Joint training of F, P, and the codebook on held-out classes with the
    // pretraining loss weights. Afterwards F is frozen for streaming.
    void pretrain(const std::vector<Sample>& data);

    // Resets the classifier head for a fresh class-incremental stream.
    void begin_stream();

    // One stream task: per-batch quantize + train + buffer insert, and one
    // replay batch per new batch from the second task on.
    void stream_task(const std::vector<Sample>& pool, const Task& task);

    std::vector<PredictionRecord> evaluate(const std::vector<Sample>& samples) const;

    void save_checkpoint(const std::filesystem::path& dir) const;
    void load_checkpoint(const std::filesystem::path& dir);

    Network& net() { return net_; }
    const Network& net() const { return net_; }
    Codebook& codebook() { return book_; }
    const Codebook& codebook() const { return book_; }
    const ReconstructionGeometry& geometry() const { return geom_; }
    const ExemplarStore* buffer() const { return buffer_.get(); }
    std::size_t step_count() const { return step_count_; }
    std::size_t seen_classes() const { return class_order_.size(); }
    std::size_t current_task() const { return task_counter_; }
    const std::vector<std::uint32_t>& class_order() const { return class_order_; }

    void set_metric_sink(std::ostream* sink) { metric_sink_ = sink; }

  private:
    void init_codebook_from(const std::vector<Sample>& data);
    void extend_head(const std::vector<std::uint32_t>& new_classes);
    void train_batch_new(const std::vector<Sample>& pool,
                         const std::vector<std::size_t>& batch, std::vector<Exemplar>& staged);
    void replay_batch();
    void upper_bound_epoch();
    void emit(const BatchMetric& m);
    std::size_t logit_of(std::uint32_t class_id) const;

    TrainConfig cfg_;
    NetSpecConfig net_spec_;
    std::size_t input_channels_, input_side_;
    Network net_;
    Codebook book_;
    ReconstructionGeometry geom_;
    std::unique_ptr<ExemplarStore> buffer_;
    std::vector<std::uint32_t> class_order_;           // logit index -> class id
    std::map<std::uint32_t, std::size_t> class_logit_;  // class id -> logit index
    std::vector<Sample> seen_pool_;                     // upper_bound only
    Rng rng_;
    std::size_t step_count_ = 0;
    std::size_t task_counter_ = 0;
    float last_new_direct_ = 0.0f;
    float last_new_codebook_ = 0.0f;
    bool codebook_ready_ = false;
    std::ostream* metric_sink_ = nullptr;
};

}  // namespace crumb
