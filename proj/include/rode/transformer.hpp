#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rode/metrics.hpp"
#include "rode/rode_layer.hpp"

namespace rode {

struct TransformerConfig {
    int vocab_size = 0;
    int d_model = 32;
    int n_heads = 4;
    int n_blocks = 2;
    int max_seq_len = 48;
    std::vector<std::string> adapted_projections = {"query", "value"}; // subset of query/key/value/output
    std::vector<int> rank_list = {2, 4, 8, 16};
    double alpha = 16.0;
    double dropout_rate = 0.05;
    RouteStrategy strategy = RouteStrategy::kLinearRectified;

    void validate() const; // throws ConfigError
    int d_head() const { return d_model / n_heads; }
};

struct NamedParam {
    std::string name;
    NodePtr node;
};

// Decoder-only transformer with pre-norm blocks. Attention projections named
// in `adapted_projections` carry a RodeLayer once attach_adapters() has run;
// everything else is a plain frozen linear map after freeze_base().
//
// Lifecycle: construct (all base weights trainable, no experts) ->
// pretrain the base -> freeze_base() -> attach_adapters() -> fine-tune.
class ToyTransformer {
public:
    ToyTransformer(const TransformerConfig& cfg, Rng& rng);

    const TransformerConfig& config() const { return cfg_; }

    // T x vocab logits; position t depends only on tokens 0..t. Gate vectors
    // are appended to `trace` when provided and adapters are attached.
    NodePtr forward_logits(const std::vector<int>& tokens, bool train_mode, Rng& rng,
                           RouterTrace* trace = nullptr, ForwardStats* stats = nullptr);

    // Mean cross-entropy over the target positions only. Returns the loss
    // node; `n_target_tokens` out-param reports the averaging denominator.
    NodePtr autoregressive_loss(const std::vector<int>& prompt, const std::vector<int>& target,
                                bool train_mode, Rng& rng, RouterTrace* trace = nullptr);

    // Deterministic argmax decoding; stops at stop_id, the token budget, or
    // the model's context limit. Returns the generated continuation
    // (including the stop token when produced).
    std::vector<int> greedy_decode(const std::vector<int>& prompt, int max_new_tokens,
                                   int stop_id);

    void freeze_base();
    bool base_frozen() const { return base_frozen_; }
    void attach_adapters(Rng& rng);
    bool adapters_attached() const { return adapters_attached_; }

    std::vector<NamedParam> parameters() const;           // all, stable order
    std::vector<NamedParam> trainable_parameters() const; // requires_grad only
    std::vector<NamedParam> base_parameters() const;
    void zero_grads();

    // Sum of expert + router parameters across all adapted projections.
    std::size_t adapter_parameter_count() const;

    std::vector<RodeLayer*> rode_layers(); // block-major, projection order q,k,v,o

private:
    struct Projection {
        NodePtr w0;
        std::optional<RodeLayer> rode;
    };
    struct Block {
        NodePtr ln1_gamma, ln1_beta;
        Projection q, k, v, o;
        NodePtr ln2_gamma, ln2_beta;
        NodePtr ffn_w1, ffn_w2;
    };

    NodePtr project(Projection& p, const NodePtr& x, bool train_mode, Rng& rng,
                    RouterTrace* trace, int block_idx, const char* proj_name,
                    ForwardStats* stats);
    bool is_adapted(const char* proj_name) const;

    TransformerConfig cfg_;
    NodePtr tok_embed_; // d_model x vocab
    NodePtr pos_embed_; // d_model x max_seq_len
    std::vector<Block> blocks_;
    NodePtr final_ln_gamma_, final_ln_beta_;
    NodePtr head_; // vocab x d_model
    bool base_frozen_ = false;
    bool adapters_attached_ = false;
};

// Wraps greedy decoding as a metrics predictor (decodes END-terminated).
Predictor greedy_predictor(ToyTransformer& model, int max_new_tokens);

// Runs traced eval-mode forwards over the samples' full teacher-forced
// sequences; one RouterTrace per sample.
std::vector<RouterTrace> collect_traces(ToyTransformer& model,
                                        const std::vector<TaskSample>& samples);

} // namespace rode
