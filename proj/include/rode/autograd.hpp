#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "rode/matrix.hpp"
#include "rode/rng.hpp"

namespace rode {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the reverse-mode graph. `value` is fixed at construction;
// `grad` is allocated on first touch and accumulated into during backward.
struct Node {
    Matrix value;
    Matrix grad;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn; // empty for leaves and constant flow
    bool requires_grad = false;
    const char* op = "leaf";

    Matrix& ensure_grad() {
        if (grad.rows != value.rows || grad.cols != value.cols)
            grad = Matrix::zeros(value.rows, value.cols);
        return grad;
    }

    void zero_grad() {
        if (!grad.data.empty()) grad.fill(0.0);
    }
};

NodePtr make_leaf(Matrix value, bool requires_grad);

// Generic op constructor; public so callers can define custom differentiable
// ops without touching this module. Throws NumericError if `value` carries
// NaN/Inf. requires_grad is inherited from the parents.
NodePtr make_op(Matrix value, std::vector<NodePtr> parents, const char* op,
                std::function<void(Node&)> backward_fn);

// --- differentiable operations ------------------------------------------

NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr add(const NodePtr& a, const NodePtr& b);        // same shape
NodePtr add_bias(const NodePtr& a, const NodePtr& b);   // b is rows x 1, broadcast over columns
NodePtr scale_by_constant(const NodePtr& a, double c);
NodePtr elementwise_mul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr softmax(const NodePtr& a);                      // vector input (one row or one column)
NodePtr softmax_columns(const NodePtr& a);              // per-column softmax
NodePtr causal_softmax_rows(const NodePtr& a);          // row i normalized over columns 0..i
NodePtr top1_columns(const NodePtr& a);                 // softmax prob at the per-column argmax, 0 elsewhere
NodePtr layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                   double eps = 1e-5);                  // per-column over the feature dim
NodePtr embedding_lookup(const NodePtr& table, const std::vector<int>& ids);
NodePtr concat_rows(const std::vector<NodePtr>& parts);
NodePtr slice_rows(const NodePtr& a, std::size_t first, std::size_t count);
NodePtr row(const NodePtr& a, std::size_t i);
NodePtr scale_columns(const NodePtr& a, const NodePtr& s); // s is 1 x cols
NodePtr cross_entropy(const NodePtr& logits, const std::vector<int>& target_ids); // mean NLL, 1x1

// Inverted dropout. Train mode multiplies by a 0 / (1/(1-rate)) mask drawn
// from `rng`; eval mode is the identity.
Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng);
NodePtr dropout(const NodePtr& x, double rate, Rng& rng, bool train_mode);

// --- traversal ------------------------------------------------------------

// Reverse-mode sweep from `root`; each node is visited exactly once, in an
// order where every consumer runs before its producers. Gradients accumulate
// (+=) into leaves, so shared subexpressions sum their contributions.
void backward(const NodePtr& root);
void backward(const NodePtr& root, const Matrix& seed);

// Nodes reachable from root, consumers-before-producers.
std::vector<Node*> reverse_topological_order(const NodePtr& root);

// Sign pattern (-1/0/+1) of every relu input in the graph, in traversal
// order. Two forward passes of the same graph shape can be compared entry
// by entry to detect a crossed kink during finite differencing.
std::vector<std::int8_t> relu_input_signs(const NodePtr& root);

} // namespace rode
