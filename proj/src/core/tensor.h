#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "error.h"
#include "rng.h"

namespace mef {

// Dense row-major 64-bit tensors on a tape. Nodes are created in forward
// order, which is a valid topological order, so backward is a single reverse
// sweep over the tape. Tensors are immutable once produced; a Tensor is a
// cheap handle into its tape.

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;   // allocated on demand, same length as value
    bool requires_grad = false;
    std::function<void()> backward; // adds into parent grads; empty for leaves
};

class Tensor {
public:
    Tensor() = default;
    Tensor(Tape* tape, Node* node) : tape_(tape), node_(node) {}

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& values() const { return node_->value; }
    double value_at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
    double scalar() const;

    // Gradient after Tape::backward; empty vector if none was propagated.
    const std::vector<double>& grad() const;

    Tape* tape() const { return tape_; }
    Node* node() const { return node_; }

private:
    Tape* tape_ = nullptr;
    Node* node_ = nullptr;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf constructors.
    Tensor leaf(const Shape& shape, const double* data, bool requires_grad);
    Tensor constant(const Shape& shape, std::vector<double> data);
    Tensor zeros(const Shape& shape);
    Tensor full(const Shape& shape, double v);
    Tensor randn(const Shape& shape, RngState& rng, double stddev = 1.0);

    // Reverse sweep from a scalar loss. Seeds d(loss)/d(loss) = 1 and calls
    // each node's backward hook in reverse creation order.
    void backward(const Tensor& loss);

    size_t node_count() const { return nodes_.size(); }

    // When true (default), every op verifies its output is finite and raises
    // a numeric error naming the op otherwise.
    static bool finite_checks_enabled;

    Node* make_node(Shape shape, bool requires_grad);
    void check_finite(const Node* n, const char* op) const;

private:
    std::deque<Node> nodes_;
};

// ---- arithmetic ----
Tensor matmul(const Tensor& a, const Tensor& b);         // A[m,k] * B[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);      // A[m,k] * B[n,k]^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);            // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_row(const Tensor& m, const Tensor& row);      // M[r,c] + row[c]
Tensor transpose(const Tensor& a);

// ---- structure ----
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// ---- nonlinear ----
Tensor gelu(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
// Row-wise softmax restricted to allowed entries; disallowed entries get
// weight exactly 0 and receive exactly zero gradient. `allowed` is row-major
// [rows x cols]; every row must keep at least one allowed entry.
Tensor softmax_rows_masked(const Tensor& a, const std::vector<uint8_t>& allowed);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// ---- reductions / losses ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// Mean negative log-likelihood over unmasked positions. Masked rows receive
// exactly zero gradient. Raises a data error if every position is masked.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& loss_mask);

} // namespace mef
