#include "tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace mef {

bool Tape::finite_checks_enabled = true;

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

double Tensor::scalar() const {
    if (node_->value.size() != 1)
        throw_numeric("scalar() on tensor of shape " + shape_str(node_->shape));
    return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
    return node_->grad;
}

Node* Tape::make_node(Shape shape, bool requires_grad) {
    Node& n = nodes_.emplace_back();
    n.shape = std::move(shape);
    n.value.resize(static_cast<size_t>(numel(n.shape)));
    n.requires_grad = requires_grad;
    return &n;
}

void Tape::check_finite(const Node* n, const char* op) const {
    if (!finite_checks_enabled) return;
    for (double v : n->value) {
        if (!std::isfinite(v))
            throw_numeric(std::string("non-finite value produced by op '") + op + "'");
    }
}

static std::vector<double>& ensure_grad(Node* n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
    return n->grad;
}

Tensor Tape::leaf(const Shape& shape, const double* data, bool requires_grad) {
    Node* n = make_node(shape, requires_grad);
    std::memcpy(n->value.data(), data, n->value.size() * sizeof(double));
    return Tensor(this, n);
}

Tensor Tape::constant(const Shape& shape, std::vector<double> data) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
        throw_numeric("constant: data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
    Node* n = make_node(shape, false);
    n->value = std::move(data);
    return Tensor(this, n);
}

Tensor Tape::zeros(const Shape& shape) {
    Node* n = make_node(shape, false);
    return Tensor(this, n);
}

Tensor Tape::full(const Shape& shape, double v) {
    Node* n = make_node(shape, false);
    std::fill(n->value.begin(), n->value.end(), v);
    return Tensor(this, n);
}

Tensor Tape::randn(const Shape& shape, RngState& rng, double stddev) {
    Node* n = make_node(shape, false);
    for (double& v : n->value) v = rng::next_normal(rng) * stddev;
    return Tensor(this, n);
}

void Tape::backward(const Tensor& loss) {
    if (loss.node()->value.size() != 1)
        throw_numeric("backward: loss must be scalar, got " + shape_str(loss.shape()));
    ensure_grad(loss.node())[0] = 1.0;
    // Creation order is a topological order; sweep in reverse up to the loss.
    bool seen = false;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!seen) {
            if (&*it == loss.node()) seen = true;
            else continue;
        }
        if (it->requires_grad && !it->grad.empty() && it->backward)
            it->backward();
    }
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
static void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
static void gemm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
static void gemm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        const double* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

static void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw_numeric(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

static Tape* common_tape(const Tensor& a, const Tensor& b) {
    if (a.tape() != b.tape())
        throw_numeric("operands live on different tapes");
    return a.tape();
}

// ---------------------------------------------------------------------------
// arithmetic ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw_numeric("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
    Tape* tape = common_tape(a, b);
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Node* an = a.node();
    Node* bn = b.node();
    Node* out = tape->make_node({m, n}, an->requires_grad || bn->requires_grad);
    gemm_acc(an->value.data(), bn->value.data(), out->value.data(), m, k, n);
    tape->check_finite(out, "matmul");
    if (out->requires_grad) {
        out->backward = [an, bn, out, m, k, n]() {
            const double* g = out->grad.data();
            if (an->requires_grad)
                gemm_nt_acc(g, bn->value.data(), ensure_grad(an).data(), m, n, k); // dA = dC * B^T
            if (bn->requires_grad)
                gemm_tn_acc(an->value.data(), g, ensure_grad(bn).data(), m, k, n); // dB = A^T * dC
        };
    }
    return Tensor(tape, out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.dim(1) != b.dim(1))
        throw_numeric("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()) + " transposed");
    Tape* tape = common_tape(a, b);
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Node* an = a.node();
    Node* bn = b.node();
    Node* out = tape->make_node({m, n}, an->requires_grad || bn->requires_grad);
    gemm_nt_acc(an->value.data(), bn->value.data(), out->value.data(), m, k, n);
    tape->check_finite(out, "matmul_nt");
    if (out->requires_grad) {
        out->backward = [an, bn, out, m, k, n]() {
            const double* g = out->grad.data();
            if (an->requires_grad)
                gemm_acc(g, bn->value.data(), ensure_grad(an).data(), m, n, k);    // dA = dC * B
            if (bn->requires_grad)
                gemm_tn_acc(g, an->value.data(), ensure_grad(bn).data(), m, n, k); // dB = dC^T * A
        };
    }
    return Tensor(tape, out);
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw_numeric(std::string(op) + ": shape mismatch, " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tape* tape = common_tape(a, b);
    Node* an = a.node();
    Node* bn = b.node();
    Node* out = tape->make_node(an->shape, an->requires_grad || bn->requires_grad);
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = an->value[i] + bn->value[i];
    tape->check_finite(out, "add");
    if (out->requires_grad) {
        out->backward = [an, bn, out]() {
            const size_t n = out->value.size();
            if (an->requires_grad) {
                auto& ga = ensure_grad(an);
                for (size_t i = 0; i < n; ++i) ga[i] += out->grad[i];
            }
            if (bn->requires_grad) {
                auto& gb = ensure_grad(bn);
                for (size_t i = 0; i < n; ++i) gb[i] += out->grad[i];
            }
        };
    }
    return Tensor(tape, out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tape* tape = common_tape(a, b);
    Node* an = a.node();
    Node* bn = b.node();
    Node* out = tape->make_node(an->shape, an->requires_grad || bn->requires_grad);
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = an->value[i] - bn->value[i];
    tape->check_finite(out, "sub");
    if (out->requires_grad) {
        out->backward = [an, bn, out]() {
            const size_t n = out->value.size();
            if (an->requires_grad) {
                auto& ga = ensure_grad(an);
                for (size_t i = 0; i < n; ++i) ga[i] += out->grad[i];
            }
            if (bn->requires_grad) {
                auto& gb = ensure_grad(bn);
                for (size_t i = 0; i < n; ++i) gb[i] -= out->grad[i];
            }
        };
    }
    return Tensor(tape, out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tape* tape = common_tape(a, b);
    Node* an = a.node();
    Node* bn = b.node();
    Node* out = tape->make_node(an->shape, an->requires_grad || bn->requires_grad);
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = an->value[i] * bn->value[i];
    tape->check_finite(out, "mul");
    if (out->requires_grad) {
        out->backward = [an, bn, out]() {
            const size_t n = out->value.size();
            if (an->requires_grad) {
                auto& ga = ensure_grad(an);
                for (size_t i = 0; i < n; ++i) ga[i] += out->grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& gb = ensure_grad(bn);
                for (size_t i = 0; i < n; ++i) gb[i] += out->grad[i] * an->value[i];
            }
        };
    }
    return Tensor(tape, out);
}

Tensor scale(const Tensor& a, double c) {
    Tape* tape = a.tape();
    Node* an = a.node();
    Node* out = tape->make_node(an->shape, an->requires_grad);
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) out->value[i] = an->value[i] * c;
    tape->check_finite(out, "scale");
    if (out->requires_grad) {
        out->backward = [an, out, c]() {
            auto& ga = ensure_grad(an);
            const size_t n = out->value.size();
            for (size_t i = 0; i < n; ++i) ga[i] += out->grad[i] * c;
        };
    }
    return Tensor(tape, out);
}

Tensor add_row(const Tensor& m, const Tensor& row) {
    require_rank2(m, "add_row");
    if (row.rank() != 1 || row.dim(0) != m.dim(1))
        throw_numeric("add_row: row shape " + shape_str(row.shape()) +
                      " does not match matrix " + shape_str(m.shape()));
    Tape* tape = common_tape(m, row);
    Node* mn = m.node();
    Node* rn = row.node();
    const int rows = m.dim(0), cols = m.dim(1);
    Node* out = tape->make_node(mn->shape, mn->requires_grad || rn->requires_grad);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out->value[static_cast<size_t>(i) * cols + j] =
                mn->value[static_cast<size_t>(i) * cols + j] + rn->value[static_cast<size_t>(j)];
    tape->check_finite(out, "add_row");
    if (out->requires_grad) {
        out->backward = [mn, rn, out, rows, cols]() {
            if (mn->requires_grad) {
                auto& gm = ensure_grad(mn);
                const size_t n = out->value.size();
                for (size_t i = 0; i < n; ++i) gm[i] += out->grad[i];
            }
            if (rn->requires_grad) {
                auto& gr = ensure_grad(rn);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j)
                        gr[static_cast<size_t>(j)] += out->grad[static_cast<size_t>(i) * cols + j];
            }
        };
    }
    return Tensor(tape, out);
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    Tape* tape = a.tape();
    Node* an = a.node();
    const int rows = a.dim(0), cols = a.dim(1);
    Node* out = tape->make_node({cols, rows}, an->requires_grad);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out->value[static_cast<size_t>(j) * rows + i] = an->value[static_cast<size_t>(i) * cols + j];
    if (out->requires_grad) {
        out->backward = [an, out, rows, cols]() {
            auto& ga = ensure_grad(an);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    ga[static_cast<size_t>(i) * cols + j] += out->grad[static_cast<size_t>(j) * rows + i];
        };
    }
    return Tensor(tape, out);
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw_numeric("concat_rows: empty input");
    Tape* tape = parts[0].tape();
    const int cols = parts[0].dim(1);
    int rows = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.dim(1) != cols)
            throw_numeric("concat_rows: column mismatch, " + shape_str(p.shape()) +
                          " vs expected cols " + std::to_string(cols));
        rows += p.dim(0);
        rg = rg || p.requires_grad();
    }
    Node* out = tape->make_node({rows, cols}, rg);
    std::vector<Node*> srcs;
    srcs.reserve(parts.size());
    size_t off = 0;
    for (const Tensor& p : parts) {
        Node* pn = p.node();
        std::memcpy(out->value.data() + off, pn->value.data(), pn->value.size() * sizeof(double));
        off += pn->value.size();
        srcs.push_back(pn);
    }
    if (rg) {
        out->backward = [srcs, out]() {
            size_t off = 0;
            for (Node* pn : srcs) {
                if (pn->requires_grad) {
                    auto& gp = ensure_grad(pn);
                    for (size_t i = 0; i < gp.size(); ++i) gp[i] += out->grad[off + i];
                }
                off += pn->value.size();
            }
        };
    }
    return Tensor(tape, out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw_numeric("concat_cols: empty input");
    Tape* tape = parts[0].tape();
    const int rows = parts[0].dim(0);
    int cols = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.dim(0) != rows)
            throw_numeric("concat_cols: row mismatch, " + shape_str(p.shape()) +
                          " vs expected rows " + std::to_string(rows));
        cols += p.dim(1);
        rg = rg || p.requires_grad();
    }
    Node* out = tape->make_node({rows, cols}, rg);
    std::vector<Node*> srcs;
    std::vector<int> offs;
    int coff = 0;
    for (const Tensor& p : parts) {
        Node* pn = p.node();
        const int pc = p.dim(1);
        for (int i = 0; i < rows; ++i)
            std::memcpy(out->value.data() + static_cast<size_t>(i) * cols + coff,
                        pn->value.data() + static_cast<size_t>(i) * pc,
                        static_cast<size_t>(pc) * sizeof(double));
        srcs.push_back(pn);
        offs.push_back(coff);
        coff += pc;
    }
    if (rg) {
        out->backward = [srcs, offs, out, rows, cols]() {
            for (size_t s = 0; s < srcs.size(); ++s) {
                Node* pn = srcs[s];
                if (!pn->requires_grad) continue;
                const int pc = pn->shape[1];
                auto& gp = ensure_grad(pn);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < pc; ++j)
                        gp[static_cast<size_t>(i) * pc + j] +=
                            out->grad[static_cast<size_t>(i) * cols + offs[s] + j];
            }
        };
    }
    return Tensor(tape, out);
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    require_rank2(a, "slice_rows");
    if (r0 < 0 || r1 > a.dim(0) || r0 >= r1)
        throw_numeric("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                      ") for " + shape_str(a.shape()));
    Tape* tape = a.tape();
    Node* an = a.node();
    const int cols = a.dim(1);
    Node* out = tape->make_node({r1 - r0, cols}, an->requires_grad);
    std::memcpy(out->value.data(), an->value.data() + static_cast<size_t>(r0) * cols,
                out->value.size() * sizeof(double));
    if (out->requires_grad) {
        out->backward = [an, out, r0, cols]() {
            auto& ga = ensure_grad(an);
            const size_t n = out->value.size();
            const size_t base = static_cast<size_t>(r0) * cols;
            for (size_t i = 0; i < n; ++i) ga[base + i] += out->grad[i];
        };
    }
    return Tensor(tape, out);
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    require_rank2(a, "slice_cols");
    if (c0 < 0 || c1 > a.dim(1) || c0 >= c1)
        throw_numeric("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                      ") for " + shape_str(a.shape()));
    Tape* tape = a.tape();
    Node* an = a.node();
    const int rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
    Node* out = tape->make_node({rows, w}, an->requires_grad);
    for (int i = 0; i < rows; ++i)
        std::memcpy(out->value.data() + static_cast<size_t>(i) * w,
                    an->value.data() + static_cast<size_t>(i) * cols + c0,
                    static_cast<size_t>(w) * sizeof(double));
    if (out->requires_grad) {
        out->backward = [an, out, rows, cols, c0, w]() {
            auto& ga = ensure_grad(an);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < w; ++j)
                    ga[static_cast<size_t>(i) * cols + c0 + j] += out->grad[static_cast<size_t>(i) * w + j];
        };
    }
    return Tensor(tape, out);
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    require_rank2(table, "embedding_rows");
    Tape* tape = table.tape();
    Node* tn = table.node();
    const int vocab = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw_data("embedding_rows: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(vocab) + ")");
    Node* out = tape->make_node({static_cast<int>(ids.size()), d}, tn->requires_grad);
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out->value.data() + i * d, tn->value.data() + static_cast<size_t>(ids[i]) * d,
                    static_cast<size_t>(d) * sizeof(double));
    if (out->requires_grad) {
        std::vector<int> idv = ids;
        out->backward = [tn, out, idv, d]() {
            auto& gt = ensure_grad(tn);
            for (size_t i = 0; i < idv.size(); ++i)
                for (int j = 0; j < d; ++j)
                    gt[static_cast<size_t>(idv[i]) * d + j] += out->grad[i * d + j];
        };
    }
    return Tensor(tape, out);
}

// ---------------------------------------------------------------------------
// nonlinear ops
// ---------------------------------------------------------------------------

Tensor gelu(const Tensor& a) {
    Tape* tape = a.tape();
    Node* an = a.node();
    Node* out = tape->make_node(an->shape, an->requires_grad);
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    constexpr double k = 0.044715;
    const size_t n = out->value.size();
    for (size_t i = 0; i < n; ++i) {
        double x = an->value[i];
        double t = std::tanh(c * (x + k * x * x * x));
        out->value[i] = 0.5 * x * (1.0 + t);
    }
    tape->check_finite(out, "gelu");
    if (out->requires_grad) {
        out->backward = [an, out]() {
            auto& ga = ensure_grad(an);
            const size_t n = out->value.size();
            for (size_t i = 0; i < n; ++i) {
                double x = an->value[i];
                double u = c * (x + k * x * x * x);
                double t = std::tanh(u);
                double du = c * (1.0 + 3.0 * k * x * x);
                double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                ga[i] += out->grad[i] * d;
            }
        };
    }
    return Tensor(tape, out);
}

static void softmax_forward(const double* x, double* y, const uint8_t* allowed,
                            int rows, int cols, const char* op) {
    for (int i = 0; i < rows; ++i) {
        const double* xr = x + static_cast<size_t>(i) * cols;
        double* yr = y + static_cast<size_t>(i) * cols;
        const uint8_t* ar = allowed ? allowed + static_cast<size_t>(i) * cols : nullptr;
        double mx = -std::numeric_limits<double>::infinity();
        int n_allowed = 0;
        for (int j = 0; j < cols; ++j) {
            if (ar && !ar[j]) continue;
            ++n_allowed;
            mx = std::max(mx, xr[j]);
        }
        if (n_allowed == 0)
            throw_numeric(std::string(op) + ": fully-masked row " + std::to_string(i));
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            if (ar && !ar[j]) { yr[j] = 0.0; continue; }
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (int j = 0; j < cols; ++j) {
            if (ar && !ar[j]) continue;
            yr[j] /= sum;
        }
    }
}

static void softmax_backward(const double* y, const double* gy, double* gx,
                             const uint8_t* allowed, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const double* yr = y + static_cast<size_t>(i) * cols;
        const double* gr = gy + static_cast<size_t>(i) * cols;
        double* gxr = gx + static_cast<size_t>(i) * cols;
        const uint8_t* ar = allowed ? allowed + static_cast<size_t>(i) * cols : nullptr;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) {
            if (ar && !ar[j]) continue;
            dot += gr[j] * yr[j];
        }
        for (int j = 0; j < cols; ++j) {
            if (ar && !ar[j]) continue;
            gxr[j] += yr[j] * (gr[j] - dot);
        }
    }
}

Tensor softmax_rows(const Tensor& a) {
    require_rank2(a, "softmax_rows");
    Tape* tape = a.tape();
    Node* an = a.node();
    const int rows = a.dim(0), cols = a.dim(1);
    Node* out = tape->make_node(an->shape, an->requires_grad);
    softmax_forward(an->value.data(), out->value.data(), nullptr, rows, cols, "softmax_rows");
    tape->check_finite(out, "softmax_rows");
    if (out->requires_grad) {
        out->backward = [an, out, rows, cols]() {
            softmax_backward(out->value.data(), out->grad.data(), ensure_grad(an).data(),
                             nullptr, rows, cols);
        };
    }
    return Tensor(tape, out);
}

Tensor softmax_rows_masked(const Tensor& a, const std::vector<uint8_t>& allowed) {
    require_rank2(a, "softmax_rows_masked");
    const int rows = a.dim(0), cols = a.dim(1);
    if (static_cast<int64_t>(allowed.size()) != static_cast<int64_t>(rows) * cols)
        throw_numeric("softmax_rows_masked: mask size " + std::to_string(allowed.size()) +
                      " does not match " + shape_str(a.shape()));
    Tape* tape = a.tape();
    Node* an = a.node();
    Node* out = tape->make_node(an->shape, an->requires_grad);
    softmax_forward(an->value.data(), out->value.data(), allowed.data(), rows, cols,
                    "softmax_rows_masked");
    tape->check_finite(out, "softmax_rows_masked");
    if (out->requires_grad) {
        std::vector<uint8_t> mask = allowed;
        out->backward = [an, out, mask, rows, cols]() {
            softmax_backward(out->value.data(), out->grad.data(), ensure_grad(an).data(),
                             mask.data(), rows, cols);
        };
    }
    return Tensor(tape, out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank2(x, "layer_norm");
    if (eps <= 0.0) throw_numeric("layer_norm: eps must be positive");
    const int rows = x.dim(0), d = x.dim(1);
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        throw_numeric("layer_norm: gamma/beta must be rank-1 of width " + std::to_string(d));
    Tape* tape = x.tape();
    Node* xn = x.node();
    Node* gn = gamma.node();
    Node* bn = beta.node();
    bool rg = xn->requires_grad || gn->requires_grad || bn->requires_grad;
    Node* out = tape->make_node(xn->shape, rg);
    // Cache normalized values and inverse stddev for backward.
    auto xhat = std::make_shared<std::vector<double>>(xn->value.size());
    auto istd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int i = 0; i < rows; ++i) {
        const double* xr = xn->value.data() + static_cast<size_t>(i) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = xr[j] - mean;
            var += c * c;
        }
        var /= d;
        double is = 1.0 / std::sqrt(var + eps);
        (*istd)[static_cast<size_t>(i)] = is;
        for (int j = 0; j < d; ++j) {
            double h = (xr[j] - mean) * is;
            (*xhat)[static_cast<size_t>(i) * d + j] = h;
            out->value[static_cast<size_t>(i) * d + j] = h * gn->value[static_cast<size_t>(j)] +
                                                         bn->value[static_cast<size_t>(j)];
        }
    }
    tape->check_finite(out, "layer_norm");
    if (rg) {
        out->backward = [xn, gn, bn, out, xhat, istd, rows, d]() {
            for (int i = 0; i < rows; ++i) {
                const double* g = out->grad.data() + static_cast<size_t>(i) * d;
                const double* h = xhat->data() + static_cast<size_t>(i) * d;
                if (gn->requires_grad) {
                    auto& gg = ensure_grad(gn);
                    for (int j = 0; j < d; ++j) gg[static_cast<size_t>(j)] += g[j] * h[j];
                }
                if (bn->requires_grad) {
                    auto& gb = ensure_grad(bn);
                    for (int j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += g[j];
                }
                if (xn->requires_grad) {
                    auto& gx = ensure_grad(xn);
                    double sum_gy = 0.0, sum_gyh = 0.0;
                    for (int j = 0; j < d; ++j) {
                        double gy = g[j] * gn->value[static_cast<size_t>(j)];
                        sum_gy += gy;
                        sum_gyh += gy * h[j];
                    }
                    const double is = (*istd)[static_cast<size_t>(i)];
                    for (int j = 0; j < d; ++j) {
                        double gy = g[j] * gn->value[static_cast<size_t>(j)];
                        gx[static_cast<size_t>(i) * d + j] +=
                            is * (gy - sum_gy / d - h[j] * (sum_gyh / d));
                    }
                }
            }
        };
    }
    return Tensor(tape, out);
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    Tape* tape = a.tape();
    Node* an = a.node();
    Node* out = tape->make_node({1}, an->requires_grad);
    double s = 0.0;
    for (double v : an->value) s += v;
    out->value[0] = s;
    tape->check_finite(out, "sum_all");
    if (out->requires_grad) {
        out->backward = [an, out]() {
            auto& ga = ensure_grad(an);
            const double g = out->grad[0];
            for (double& v : ga) v += g;
        };
    }
    return Tensor(tape, out);
}

Tensor mean_all(const Tensor& a) {
    Tensor s = sum_all(a);
    return scale(s, 1.0 / static_cast<double>(a.size()));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& loss_mask) {
    require_rank2(logits, "cross_entropy");
    const int t = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<int>(targets.size()) != t || static_cast<int>(loss_mask.size()) != t)
        throw_data("cross_entropy: targets/mask length must equal logit rows (" +
                   std::to_string(t) + ")");
    int n_active = 0;
    for (int i = 0; i < t; ++i) {
        if (!loss_mask[static_cast<size_t>(i)]) continue;
        ++n_active;
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= vocab)
            throw_data("cross_entropy: target id " + std::to_string(targets[static_cast<size_t>(i)]) +
                       " out of range [0," + std::to_string(vocab) + ")");
    }
    if (n_active == 0) throw_data("cross_entropy: every position is masked");
    Tape* tape = logits.tape();
    Node* ln = logits.node();
    Node* out = tape->make_node({1}, ln->requires_grad);
    // Cache probabilities of active rows for backward.
    auto probs = std::make_shared<std::vector<double>>(ln->value.size(), 0.0);
    double loss = 0.0;
    for (int i = 0; i < t; ++i) {
        if (!loss_mask[static_cast<size_t>(i)]) continue;
        const double* xr = ln->value.data() + static_cast<size_t>(i) * vocab;
        double* pr = probs->data() + static_cast<size_t>(i) * vocab;
        double mx = xr[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int j = 0; j < vocab; ++j) {
            pr[j] = std::exp(xr[j] - mx);
            sum += pr[j];
        }
        for (int j = 0; j < vocab; ++j) pr[j] /= sum;
        loss -= std::log(pr[targets[static_cast<size_t>(i)]]);
    }
    out->value[0] = loss / n_active;
    tape->check_finite(out, "cross_entropy");
    if (out->requires_grad) {
        std::vector<int> tg = targets;
        std::vector<uint8_t> mk = loss_mask;
        out->backward = [ln, out, probs, tg, mk, t, vocab, n_active]() {
            auto& gl = ensure_grad(ln);
            const double g = out->grad[0] / n_active;
            for (int i = 0; i < t; ++i) {
                if (!mk[static_cast<size_t>(i)]) continue;
                const double* pr = probs->data() + static_cast<size_t>(i) * vocab;
                double* gr = gl.data() + static_cast<size_t>(i) * vocab;
                for (int j = 0; j < vocab; ++j) gr[j] += g * pr[j];
                gr[tg[static_cast<size_t>(i)]] -= g;
            }
        };
    }
    return Tensor(tape, out);
}

} // namespace mef
