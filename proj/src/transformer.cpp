#include "rode/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "rode/errors.hpp"

namespace rode {

namespace {
const char* const kProjNames[4] = {"query", "key", "value", "output"};
}

void TransformerConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
    if (d_model < 1 || n_heads < 1 || n_blocks < 1 || max_seq_len < 1)
        throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    if (rank_list.empty()) throw ConfigError("rank_list must be nonempty");
    for (int r : rank_list) {
        if (r < 1) throw ConfigError("rank must be >= 1, got " + std::to_string(r));
        if (r > d_model)
            throw ConfigError("rank " + std::to_string(r) + " exceeds d_model " +
                              std::to_string(d_model));
    }
    if (alpha <= 0.0) throw ConfigError("alpha must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("dropout_rate must be in [0, 1)");
    if (adapted_projections.empty())
        throw ConfigError("adapted_projections must name at least one projection");
    for (const auto& p : adapted_projections) {
        bool known = false;
        for (const char* n : kProjNames) known = known || p == n;
        if (!known)
            throw ConfigError("unknown projection '" + p +
                              "' (expected query, key, value or output)");
    }
}

ToyTransformer::ToyTransformer(const TransformerConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model;
    const double stddev = 0.02;
    Rng r = rng.split("base");
    auto normal_param = [&](std::size_t rows, std::size_t cols) {
        return make_leaf(Matrix::gaussian(rows, cols, 0.0, stddev, r), true);
    };
    tok_embed_ = normal_param(d, cfg_.vocab_size);
    pos_embed_ = normal_param(d, cfg_.max_seq_len);
    for (int b = 0; b < cfg_.n_blocks; ++b) {
        Block blk;
        blk.ln1_gamma = make_leaf(Matrix(d, 1, 1.0), true);
        blk.ln1_beta = make_leaf(Matrix::zeros(d, 1), true);
        blk.q.w0 = normal_param(d, d);
        blk.k.w0 = normal_param(d, d);
        blk.v.w0 = normal_param(d, d);
        blk.o.w0 = normal_param(d, d);
        blk.ln2_gamma = make_leaf(Matrix(d, 1, 1.0), true);
        blk.ln2_beta = make_leaf(Matrix::zeros(d, 1), true);
        blk.ffn_w1 = normal_param(4 * d, d);
        blk.ffn_w2 = normal_param(d, 4 * d);
        blocks_.push_back(std::move(blk));
    }
    final_ln_gamma_ = make_leaf(Matrix(d, 1, 1.0), true);
    final_ln_beta_ = make_leaf(Matrix::zeros(d, 1), true);
    head_ = normal_param(cfg_.vocab_size, d);
}

bool ToyTransformer::is_adapted(const char* proj_name) const {
    return std::find(cfg_.adapted_projections.begin(), cfg_.adapted_projections.end(),
                     proj_name) != cfg_.adapted_projections.end();
}

void ToyTransformer::freeze_base() {
    for (auto& p : base_parameters()) {
        p.node->requires_grad = false;
        p.node->grad = Matrix();
    }
    base_frozen_ = true;
}

void ToyTransformer::attach_adapters(Rng& rng) {
    if (!base_frozen_) throw ConfigError("attach_adapters: base must be frozen first");
    if (adapters_attached_) throw ConfigError("attach_adapters: adapters already attached");
    Rng root = rng.split("adapters");
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        Projection* projs[4] = {&blocks_[b].q, &blocks_[b].k, &blocks_[b].v, &blocks_[b].o};
        for (int p = 0; p < 4; ++p) {
            if (!is_adapted(kProjNames[p])) continue;
            Rng layer_rng = root.split(b * 4 + p);
            projs[p]->rode = make_rode_layer(projs[p]->w0, cfg_.rank_list, cfg_.alpha,
                                             cfg_.dropout_rate, cfg_.strategy, layer_rng);
        }
    }
    adapters_attached_ = true;
}

NodePtr ToyTransformer::project(Projection& p, const NodePtr& x, bool train_mode, Rng& rng,
                                RouterTrace* trace, int block_idx, const char* proj_name,
                                ForwardStats* stats) {
    if (!p.rode) return matmul(p.w0, x);
    GateSink sink;
    if (trace) {
        sink = [trace, block_idx, proj_name](const Matrix& gates) {
            for (std::size_t t = 0; t < gates.cols; ++t) {
                TraceEntry e;
                e.block = block_idx;
                e.projection = proj_name;
                e.token = static_cast<int>(t);
                e.gates.resize(gates.rows);
                for (std::size_t i = 0; i < gates.rows; ++i) e.gates[i] = gates.at(i, t);
                trace->entries.push_back(std::move(e));
            }
        };
    }
    return rode_forward(*p.rode, x, train_mode, rng, sink, stats);
}

NodePtr ToyTransformer::forward_logits(const std::vector<int>& tokens, bool train_mode, Rng& rng,
                                       RouterTrace* trace, ForwardStats* stats) {
    if (tokens.empty()) throw DataError("forward_logits: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg_.max_seq_len)
        throw DataError("forward_logits: sequence of length " + std::to_string(tokens.size()) +
                        " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    const std::size_t T = tokens.size();
    std::vector<int> positions(T);
    for (std::size_t i = 0; i < T; ++i) positions[i] = static_cast<int>(i);

    NodePtr x = add(embedding_lookup(tok_embed_, tokens), embedding_lookup(pos_embed_, positions));
    const std::size_t dh = cfg_.d_head();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        Block& blk = blocks_[b];
        NodePtr xn = layer_norm(x, blk.ln1_gamma, blk.ln1_beta);
        NodePtr q = project(blk.q, xn, train_mode, rng, trace, static_cast<int>(b), "query", stats);
        NodePtr k = project(blk.k, xn, train_mode, rng, trace, static_cast<int>(b), "key", stats);
        NodePtr v = project(blk.v, xn, train_mode, rng, trace, static_cast<int>(b), "value", stats);
        std::vector<NodePtr> heads;
        for (int h = 0; h < cfg_.n_heads; ++h) {
            NodePtr qh = slice_rows(q, h * dh, dh);
            NodePtr kh = slice_rows(k, h * dh, dh);
            NodePtr vh = slice_rows(v, h * dh, dh);
            NodePtr scores = scale_by_constant(matmul(transpose(qh), kh), scale);
            NodePtr attn = causal_softmax_rows(scores);
            heads.push_back(matmul(vh, transpose(attn)));
        }
        NodePtr merged = concat_rows(heads);
        NodePtr attn_out =
            project(blk.o, merged, train_mode, rng, trace, static_cast<int>(b), "output", stats);
        x = add(x, attn_out);
        NodePtr xf = layer_norm(x, blk.ln2_gamma, blk.ln2_beta);
        NodePtr ffn = matmul(blk.ffn_w2, relu(matmul(blk.ffn_w1, xf)));
        x = add(x, ffn);
    }
    NodePtr xn = layer_norm(x, final_ln_gamma_, final_ln_beta_);
    return transpose(matmul(head_, xn));
}

NodePtr ToyTransformer::autoregressive_loss(const std::vector<int>& prompt,
                                            const std::vector<int>& target, bool train_mode,
                                            Rng& rng, RouterTrace* trace) {
    if (target.empty()) throw DataError("autoregressive_loss: empty target");
    if (prompt.empty()) throw DataError("autoregressive_loss: empty prompt");
    const std::size_t P = prompt.size(), T = target.size();
    if (static_cast<int>(P + T) > cfg_.max_seq_len + 1)
        throw DataError("autoregressive_loss: combined length " + std::to_string(P + T) +
                        " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    // final target token is never fed back in, so the input is P+T-1 long
    std::vector<int> input(prompt);
    input.insert(input.end(), target.begin(), target.end() - 1);
    NodePtr logits = forward_logits(input, train_mode, rng, trace);
    NodePtr target_logits = slice_rows(logits, P - 1, T);
    return cross_entropy(target_logits, target);
}

std::vector<int> ToyTransformer::greedy_decode(const std::vector<int>& prompt,
                                               int max_new_tokens, int stop_id) {
    if (prompt.empty()) throw DataError("greedy_decode: empty prompt");
    Rng rng(0); // eval mode draws nothing
    std::vector<int> seq(prompt);
    std::vector<int> generated;
    for (int step = 0; step < max_new_tokens; ++step) {
        if (static_cast<int>(seq.size()) >= cfg_.max_seq_len) break;
        NodePtr logits = forward_logits(seq, false, rng);
        const std::size_t last = logits->value.rows - 1;
        int best = 0;
        for (int j = 1; j < cfg_.vocab_size; ++j)
            if (logits->value.at(last, j) > logits->value.at(last, best)) best = j;
        seq.push_back(best);
        generated.push_back(best);
        if (best == stop_id) break;
    }
    return generated;
}

std::vector<NamedParam> ToyTransformer::parameters() const {
    std::vector<NamedParam> out;
    out.push_back({"tok_embed", tok_embed_});
    out.push_back({"pos_embed", pos_embed_});
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const Block& blk = blocks_[b];
        const std::string prefix = "block" + std::to_string(b) + ".";
        out.push_back({prefix + "ln1.gamma", blk.ln1_gamma});
        out.push_back({prefix + "ln1.beta", blk.ln1_beta});
        const Projection* projs[4] = {&blk.q, &blk.k, &blk.v, &blk.o};
        for (int p = 0; p < 4; ++p) {
            const std::string pp = prefix + kProjNames[p] + ".";
            out.push_back({pp + "w0", projs[p]->w0});
            if (projs[p]->rode) {
                const RodeLayer& layer = *projs[p]->rode;
                for (std::size_t e = 0; e < layer.experts.size(); ++e) {
                    const std::string ep = pp + "expert" + std::to_string(e) + ".";
                    out.push_back({ep + "a_down", layer.experts[e].a_down});
                    out.push_back({ep + "b_up", layer.experts[e].b_up});
                }
                out.push_back({pp + "router.weight", layer.router.weight});
                out.push_back({pp + "router.bias", layer.router.bias});
            }
        }
        out.push_back({prefix + "ln2.gamma", blk.ln2_gamma});
        out.push_back({prefix + "ln2.beta", blk.ln2_beta});
        out.push_back({prefix + "ffn.w1", blk.ffn_w1});
        out.push_back({prefix + "ffn.w2", blk.ffn_w2});
    }
    out.push_back({"final_ln.gamma", final_ln_gamma_});
    out.push_back({"final_ln.beta", final_ln_beta_});
    out.push_back({"head", head_});
    return out;
}

std::vector<NamedParam> ToyTransformer::trainable_parameters() const {
    std::vector<NamedParam> out;
    for (auto& p : parameters())
        if (p.node->requires_grad) out.push_back(p);
    return out;
}

std::vector<NamedParam> ToyTransformer::base_parameters() const {
    std::vector<NamedParam> out;
    for (auto& p : parameters()) {
        const bool adapter = p.name.find(".expert") != std::string::npos ||
                             p.name.find(".router.") != std::string::npos;
        if (!adapter) out.push_back(p);
    }
    return out;
}

void ToyTransformer::zero_grads() {
    for (auto& p : parameters()) p.node->zero_grad();
}

std::size_t ToyTransformer::adapter_parameter_count() const {
    std::size_t n = 0;
    for (auto* layer : const_cast<ToyTransformer*>(this)->rode_layers())
        n += trainable_parameter_count(*layer);
    return n;
}

std::vector<RodeLayer*> ToyTransformer::rode_layers() {
    std::vector<RodeLayer*> out;
    for (auto& blk : blocks_) {
        Projection* projs[4] = {&blk.q, &blk.k, &blk.v, &blk.o};
        for (auto* p : projs)
            if (p->rode) out.push_back(&*p->rode);
    }
    return out;
}

Predictor greedy_predictor(ToyTransformer& model, int max_new_tokens) {
    return [&model, max_new_tokens](const TaskSample& sample) {
        return model.greedy_decode(sample.prompt, max_new_tokens, TokenLayout::kEnd);
    };
}

std::vector<RouterTrace> collect_traces(ToyTransformer& model,
                                        const std::vector<TaskSample>& samples) {
    std::vector<RouterTrace> traces;
    Rng rng(0);
    for (const auto& s : samples) {
        RouterTrace tr;
        tr.task_id = s.task_id;
        std::vector<int> seq(s.prompt);
        seq.insert(seq.end(), s.target.begin(), s.target.end());
        if (static_cast<int>(seq.size()) > model.config().max_seq_len)
            seq.resize(model.config().max_seq_len);
        model.forward_logits(seq, false, rng, &tr);
        traces.push_back(std::move(tr));
    }
    return traces;
}

} // namespace rode
