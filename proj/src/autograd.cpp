#include "rode/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "rode/errors.hpp"

namespace rode {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows << "x" << m.cols;
    return os.str();
}

void check_finite(const Matrix& m, const char* op) {
    if (!m.all_finite())
        throw NumericError(std::string(op) + ": produced non-finite values");
}

// C = A * B
Matrix matmul_values(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    const std::size_t K = a.cols, N = b.cols;
    const double* A = a.data.data();
    const double* B = b.data.data();
    double* C = c.data.data();
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = A[i * K + k];
            const double* brow = B + k * N;
            double* crow = C + i * N;
            for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// C += A * B^T   (A: m x n, B: k x n, C: m x k)
void add_matmul_nt(Matrix& c, const Matrix& a, const Matrix& b) {
    const std::size_t N = a.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * N;
        double* crow = c.data.data() + i * b.rows;
        for (std::size_t k = 0; k < b.rows; ++k) {
            const double* brow = b.data.data() + k * N;
            double dot = 0.0;
            for (std::size_t j = 0; j < N; ++j) dot += arow[j] * brow[j];
            crow[k] += dot;
        }
    }
}

// C += A^T * B   (A: m x k, B: m x n, C: k x n)
void add_matmul_tn(Matrix& c, const Matrix& a, const Matrix& b) {
    const std::size_t K = a.cols, N = b.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* brow = b.data.data() + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = a.data[i * K + k];
            double* crow = c.data.data() + k * N;
            for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    }
}

void softmax_column_inplace(const double* z, double* out, std::size_t n, std::size_t stride) {
    if (n == 0) return;
    double mx = z[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, z[i * stride]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(z[i * stride] - mx);
        out[i * stride] = e;
        sum += e;
    }
    for (std::size_t i = 0; i < n; ++i) out[i * stride] /= sum;
}

} // namespace

NodePtr make_leaf(Matrix value, bool requires_grad) {
    check_finite(value, "leaf");
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

NodePtr make_op(Matrix value, std::vector<NodePtr> parents, const char* op,
                std::function<void(Node&)> backward_fn) {
    check_finite(value, op);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    if (a->value.cols != b->value.rows)
        throw DimensionError("matmul: inner dimensions differ, lhs " + shape_str(a->value) +
                             " vs rhs " + shape_str(b->value));
    Matrix out = matmul_values(a->value, b->value);
    return make_op(std::move(out), {a, b}, "matmul", [a, b](Node& self) {
        if (a->requires_grad) add_matmul_nt(a->ensure_grad(), self.grad, b->value);
        if (b->requires_grad) add_matmul_tn(b->ensure_grad(), a->value, self.grad);
    });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value))
        throw DimensionError("add: shape mismatch " + shape_str(a->value) + " vs " +
                             shape_str(b->value));
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_op(std::move(out), {a, b}, "add", [a, b](Node& self) {
        if (a->requires_grad) {
            Matrix& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self.grad.data[i];
        }
        if (b->requires_grad) {
            Matrix& gb = b->ensure_grad();
            for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += self.grad.data[i];
        }
    });
}

NodePtr add_bias(const NodePtr& a, const NodePtr& b) {
    if (b->value.cols != 1 || b->value.rows != a->value.rows)
        throw DimensionError("add_bias: bias must be " + std::to_string(a->value.rows) +
                             "x1, got " + shape_str(b->value));
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) += b->value.at(i, 0);
    return make_op(std::move(out), {a, b}, "add_bias", [a, b](Node& self) {
        if (a->requires_grad) {
            Matrix& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self.grad.data[i];
        }
        if (b->requires_grad) {
            Matrix& gb = b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.rows; ++i)
                for (std::size_t j = 0; j < self.grad.cols; ++j)
                    gb.at(i, 0) += self.grad.at(i, j);
        }
    });
}

NodePtr scale_by_constant(const NodePtr& a, double c) {
    Matrix out = a->value;
    for (auto& v : out.data) v *= c;
    return make_op(std::move(out), {a}, "scale_by_constant", [a, c](Node& self) {
        if (!a->requires_grad) return;
        Matrix& ga = a->ensure_grad();
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += c * self.grad.data[i];
    });
}

NodePtr elementwise_mul(const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value))
        throw DimensionError("elementwise_mul: shape mismatch " + shape_str(a->value) + " vs " +
                             shape_str(b->value));
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    return make_op(std::move(out), {a, b}, "elementwise_mul", [a, b](Node& self) {
        if (a->requires_grad) {
            Matrix& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.data.size(); ++i)
                ga.data[i] += self.grad.data[i] * b->value.data[i];
        }
        if (b->requires_grad) {
            Matrix& gb = b->ensure_grad();
            for (std::size_t i = 0; i < gb.data.size(); ++i)
                gb.data[i] += self.grad.data[i] * a->value.data[i];
        }
    });
}

NodePtr transpose(const NodePtr& a) {
    Matrix out(a->value.cols, a->value.rows);
    for (std::size_t i = 0; i < a->value.rows; ++i)
        for (std::size_t j = 0; j < a->value.cols; ++j) out.at(j, i) = a->value.at(i, j);
    return make_op(std::move(out), {a}, "transpose", [a](Node& self) {
        if (!a->requires_grad) return;
        Matrix& ga = a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.rows; ++i)
            for (std::size_t j = 0; j < self.grad.cols; ++j) ga.at(j, i) += self.grad.at(i, j);
    });
}

NodePtr relu(const NodePtr& a) {
    Matrix out = a->value;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {a}, "relu", [a](Node& self) {
        if (!a->requires_grad) return;
        Matrix& ga = a->ensure_grad();
        for (std::size_t i = 0; i < ga.data.size(); ++i)
            if (a->value.data[i] > 0.0) ga.data[i] += self.grad.data[i];
    });
}

NodePtr softmax(const NodePtr& a) {
    if (a->value.rows != 1 && a->value.cols != 1)
        throw DimensionError("softmax: expected a vector, got " + shape_str(a->value));
    Matrix out = a->value;
    softmax_column_inplace(a->value.data.data(), out.data.data(), a->value.size(), 1);
    return make_op(std::move(out), {a}, "softmax", [a](Node& self) {
        if (!a->requires_grad) return;
        Matrix& ga = a->ensure_grad();
        double dot = 0.0;
        for (std::size_t i = 0; i < self.value.data.size(); ++i)
            dot += self.grad.data[i] * self.value.data[i];
        for (std::size_t i = 0; i < ga.data.size(); ++i)
            ga.data[i] += self.value.data[i] * (self.grad.data[i] - dot);
    });
}

NodePtr softmax_columns(const NodePtr& a) {
    Matrix out = a->value;
    for (std::size_t j = 0; j < a->value.cols; ++j)
        softmax_column_inplace(a->value.data.data() + j, out.data.data() + j, a->value.rows,
                               a->value.cols);
    return make_op(std::move(out), {a}, "softmax_columns", [a](Node& self) {
        if (!a->requires_grad) return;
        Matrix& ga = a->ensure_grad();
        for (std::size_t j = 0; j < self.value.cols; ++j) {
            double dot = 0.0;
            for (std::size_t i = 0; i < self.value.rows; ++i)
                dot += self.grad.at(i, j) * self.value.at(i, j);
            for (std::size_t i = 0; i < self.value.rows; ++i)
                ga.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
        }
    });
}

NodePtr causal_softmax_rows(const NodePtr& a) {
    if (a->value.rows != a->value.cols)
        throw DimensionError("causal_softmax_rows: expected a square matrix, got " +
                             shape_str(a->value));
    const std::size_t n = a->value.rows;
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = a->value.at(i, 0);
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, a->value.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            const double e = std::exp(a->value.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j <= i; ++j) out.at(i, j) /= sum;
    }
    return make_op(std::move(out), {a}, "causal_softmax_rows", [a, n](Node& self) {
        if (!a->requires_grad) return;
        Matrix& ga = a->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
            for (std::size_t j = 0; j <= i; ++j)
                ga.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
        }
    });
}

NodePtr top1_columns(const NodePtr& a) {
    const std::size_t n = a->value.rows, T = a->value.cols;
    Matrix out(n, T);
    if (n == 0) return make_op(std::move(out), {a}, "top1_columns", [](Node&) {});
    std::vector<std::size_t> argmax(T, 0);
    for (std::size_t j = 0; j < T; ++j) {
        std::size_t am = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (a->value.at(i, j) > a->value.at(am, j)) am = i;
        argmax[j] = am;
        // full-column softmax; only the winning probability survives
        double mx = a->value.at(am, j);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += std::exp(a->value.at(i, j) - mx);
        out.at(am, j) = 1.0 / sum;
    }
    return make_op(std::move(out), {a}, "top1_columns", [a, n, T, argmax](Node& self) {
        if (!a->requires_grad) return;
        Matrix& ga = a->ensure_grad();
        for (std::size_t j = 0; j < T; ++j) {
            const std::size_t am = argmax[j];
            const double p_am = self.value.at(am, j);
            const double u = self.grad.at(am, j); // upstream reaches only the selected gate
            double mx = a->value.at(am, j);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) sum += std::exp(a->value.at(i, j) - mx);
            for (std::size_t i = 0; i < n; ++i) {
                const double p_i = std::exp(a->value.at(i, j) - mx) / sum;
                const double delta = i == am ? 1.0 : 0.0;
                ga.at(i, j) += u * p_am * (delta - p_i);
            }
        }
    });
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, double eps) {
    const std::size_t d = x->value.rows, T = x->value.cols;
    if (gamma->value.rows != d || gamma->value.cols != 1 || beta->value.rows != d ||
        beta->value.cols != 1)
        throw DimensionError("layer_norm: gamma/beta must be " + std::to_string(d) + "x1");
    Matrix xhat(d, T);
    Matrix inv(1, T);
    for (std::size_t j = 0; j < T; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += x->value.at(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = x->value.at(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double iv = 1.0 / std::sqrt(var + eps);
        inv.at(0, j) = iv;
        for (std::size_t i = 0; i < d; ++i) xhat.at(i, j) = (x->value.at(i, j) - mean) * iv;
    }
    Matrix out(d, T);
    for (std::size_t j = 0; j < T; ++j)
        for (std::size_t i = 0; i < d; ++i)
            out.at(i, j) = gamma->value.at(i, 0) * xhat.at(i, j) + beta->value.at(i, 0);
    return make_op(std::move(out), {x, gamma, beta}, "layer_norm",
                   [x, gamma, beta, xhat, inv, d, T](Node& self) {
                       if (gamma->requires_grad) {
                           Matrix& gg = gamma->ensure_grad();
                           for (std::size_t i = 0; i < d; ++i)
                               for (std::size_t j = 0; j < T; ++j)
                                   gg.at(i, 0) += self.grad.at(i, j) * xhat.at(i, j);
                       }
                       if (beta->requires_grad) {
                           Matrix& gb = beta->ensure_grad();
                           for (std::size_t i = 0; i < d; ++i)
                               for (std::size_t j = 0; j < T; ++j) gb.at(i, 0) += self.grad.at(i, j);
                       }
                       if (!x->requires_grad) return;
                       Matrix& gx = x->ensure_grad();
                       for (std::size_t j = 0; j < T; ++j) {
                           double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                           for (std::size_t i = 0; i < d; ++i) {
                               const double dxh = self.grad.at(i, j) * gamma->value.at(i, 0);
                               mean_dxhat += dxh;
                               mean_dxhat_xhat += dxh * xhat.at(i, j);
                           }
                           mean_dxhat /= static_cast<double>(d);
                           mean_dxhat_xhat /= static_cast<double>(d);
                           for (std::size_t i = 0; i < d; ++i) {
                               const double dxh = self.grad.at(i, j) * gamma->value.at(i, 0);
                               gx.at(i, j) += inv.at(0, j) *
                                              (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
                           }
                       }
                   });
}

NodePtr embedding_lookup(const NodePtr& table, const std::vector<int>& ids) {
    const std::size_t d = table->value.rows, V = table->value.cols;
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= V)
            throw IndexError("embedding_lookup: id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(V));
    Matrix out(d, ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t)
        for (std::size_t i = 0; i < d; ++i) out.at(i, t) = table->value.at(i, ids[t]);
    return make_op(std::move(out), {table}, "embedding_lookup", [table, ids, d](Node& self) {
        if (!table->requires_grad) return;
        Matrix& gt = table->ensure_grad();
        for (std::size_t t = 0; t < ids.size(); ++t)
            for (std::size_t i = 0; i < d; ++i) gt.at(i, ids[t]) += self.grad.at(i, t);
    });
}

NodePtr concat_rows(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: empty part list");
    const std::size_t cols = parts[0]->value.cols;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p->value.cols != cols)
            throw DimensionError("concat_rows: column count mismatch");
        rows += p->value.rows;
    }
    Matrix out(rows, cols);
    std::size_t r0 = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p->value.rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out.at(r0 + i, j) = p->value.at(i, j);
        r0 += p->value.rows;
    }
    return make_op(std::move(out), parts, "concat_rows", [parts, cols](Node& self) {
        std::size_t r0 = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                Matrix& gp = p->ensure_grad();
                for (std::size_t i = 0; i < p->value.rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j)
                        gp.at(i, j) += self.grad.at(r0 + i, j);
            }
            r0 += p->value.rows;
        }
    });
}

NodePtr slice_rows(const NodePtr& a, std::size_t first, std::size_t count) {
    if (first + count > a->value.rows)
        throw DimensionError("slice_rows: range [" + std::to_string(first) + ", " +
                             std::to_string(first + count) + ") exceeds " +
                             std::to_string(a->value.rows) + " rows");
    Matrix out(count, a->value.cols);
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < a->value.cols; ++j) out.at(i, j) = a->value.at(first + i, j);
    return make_op(std::move(out), {a}, "slice_rows", [a, first, count](Node& self) {
        if (!a->requires_grad) return;
        Matrix& ga = a->ensure_grad();
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < self.grad.cols; ++j)
                ga.at(first + i, j) += self.grad.at(i, j);
    });
}

NodePtr row(const NodePtr& a, std::size_t i) { return slice_rows(a, i, 1); }

NodePtr scale_columns(const NodePtr& a, const NodePtr& s) {
    if (s->value.rows != 1 || s->value.cols != a->value.cols)
        throw DimensionError("scale_columns: scale must be 1x" + std::to_string(a->value.cols) +
                             ", got " + shape_str(s->value));
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) *= s->value.at(0, j);
    return make_op(std::move(out), {a, s}, "scale_columns", [a, s](Node& self) {
        if (a->requires_grad) {
            Matrix& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.rows; ++i)
                for (std::size_t j = 0; j < ga.cols; ++j)
                    ga.at(i, j) += self.grad.at(i, j) * s->value.at(0, j);
        }
        if (s->requires_grad) {
            Matrix& gs = s->ensure_grad();
            for (std::size_t i = 0; i < a->value.rows; ++i)
                for (std::size_t j = 0; j < a->value.cols; ++j)
                    gs.at(0, j) += self.grad.at(i, j) * a->value.at(i, j);
        }
    });
}

NodePtr cross_entropy(const NodePtr& logits, const std::vector<int>& target_ids) {
    const std::size_t T = logits->value.rows, V = logits->value.cols;
    if (target_ids.size() != T)
        throw DimensionError("cross_entropy: " + std::to_string(T) + " logit rows vs " +
                             std::to_string(target_ids.size()) + " targets");
    for (int id : target_ids)
        if (id < 0 || static_cast<std::size_t>(id) >= V)
            throw IndexError("cross_entropy: target id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(V));

    Matrix probs(T, V);
    double loss = 0.0;
    for (std::size_t i = 0; i < T; ++i) {
        double mx = logits->value.at(i, 0);
        for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, logits->value.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            const double e = std::exp(logits->value.at(i, j) - mx);
            probs.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < V; ++j) probs.at(i, j) /= sum;
        loss -= logits->value.at(i, target_ids[i]) - mx - std::log(sum);
    }
    loss /= static_cast<double>(T);
    Matrix out(1, 1);
    out.at(0, 0) = loss;
    return make_op(std::move(out), {logits}, "cross_entropy",
                   [logits, probs, target_ids, T, V](Node& self) {
                       if (!logits->requires_grad) return;
                       Matrix& gl = logits->ensure_grad();
                       const double g = self.grad.at(0, 0) / static_cast<double>(T);
                       for (std::size_t i = 0; i < T; ++i) {
                           for (std::size_t j = 0; j < V; ++j) gl.at(i, j) += g * probs.at(i, j);
                           gl.at(i, target_ids[i]) -= g;
                       }
                   });
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    Matrix m(rows, cols);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (auto& v : m.data) v = rng.uniform() < rate ? 0.0 : keep_scale;
    return m;
}

NodePtr dropout(const NodePtr& x, double rate, Rng& rng, bool train_mode) {
    if (!train_mode || rate == 0.0) return x;
    NodePtr mask = make_leaf(dropout_mask(x->value.rows, x->value.cols, rate, rng), false);
    return elementwise_mul(x, mask);
}

std::vector<Node*> reverse_topological_order(const NodePtr& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    // iterative post-order: producers land before consumers, then reverse
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        if (next_parent < node->parents.size()) {
            Node* parent = node->parents[next_parent].get();
            ++next_parent;
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());
    return order;
}

void backward(const NodePtr& root, const Matrix& seed) {
    if (!root->value.same_shape(seed))
        throw DimensionError("backward: seed shape " + shape_str(seed) + " does not match root " +
                             shape_str(root->value));
    Matrix& rg = root->ensure_grad();
    for (std::size_t i = 0; i < rg.data.size(); ++i) rg.data[i] += seed.data[i];
    for (Node* node : reverse_topological_order(root))
        if (node->backward_fn) node->backward_fn(*node);
}

void backward(const NodePtr& root) {
    Matrix seed(root->value.rows, root->value.cols, 1.0);
    backward(root, seed);
}

std::vector<std::int8_t> relu_input_signs(const NodePtr& root) {
    std::vector<std::int8_t> signs;
    for (Node* node : reverse_topological_order(root)) {
        if (std::strcmp(node->op, "relu") != 0) continue;
        const Matrix& in = node->parents[0]->value;
        for (double v : in.data) signs.push_back(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0));
    }
    return signs;
}

} // namespace rode
