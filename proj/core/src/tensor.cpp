#include "memo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "memo/error.hpp"

namespace memo::ad {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    OpKind op = OpKind::Leaf;
    std::vector<std::shared_ptr<Node>> inputs;
    std::vector<std::size_t> index;
    std::vector<std::size_t> offsets;
    double param = 0.0;
    std::size_t extra = 0;
    bool requires_grad = false;
    std::size_t tape_id = Tensor::npos;
    const Tape* owner = nullptr;
    bool leaf_registered = false;
};

Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

namespace {

thread_local Tape* g_current_tape = nullptr;

std::shared_ptr<Node> make_node(Shape shape, OpKind op) {
    auto n = std::make_shared<Node>();
    n->value.assign(numel(shape), 0.0);
    n->shape = std::move(shape);
    n->op = op;
    return n;
}

const Node& get(const Tensor& t) {
    if (!t.defined()) throw ContractError("use of undefined tensor");
    return *t.node();
}

// Attaches inputs and records the node if any input carries a gradient.
Tensor finish(std::shared_ptr<Node> n, std::initializer_list<const Tensor*> inputs) {
    Tape* tape = g_current_tape;
    bool needs = false;
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
    if (tape != nullptr && needs) {
        n->inputs.reserve(inputs.size());
        for (const Tensor* t : inputs) n->inputs.push_back(t->node());
        n->requires_grad = true;
        tape->record(n);
    }
    return wrap(std::move(n));
}

Tensor finish_many(std::shared_ptr<Node> n, std::span<const Tensor> inputs) {
    Tape* tape = g_current_tape;
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    if (tape != nullptr && needs) {
        n->inputs.reserve(inputs.size());
        for (const Tensor& t : inputs) n->inputs.push_back(t.node());
        n->requires_grad = true;
        tape->record(n);
    }
    return wrap(std::move(n));
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (get(a).shape != get(b).shape) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

void require_rank(const Tensor& a, std::size_t rank, const char* what) {
    if (get(a).shape.size() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_string(a.shape()));
    }
}

void ensure_grad(Node& n) {
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

void check_offsets(const std::vector<std::size_t>& offsets, std::size_t total, const char* what) {
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != total ||
        !std::is_sorted(offsets.begin(), offsets.end())) {
        throw ContractError(std::string(what) + ": malformed segment offsets");
    }
}

// Backward rule of one node: reads n.grad, accumulates into inputs.
void propagate(Node& n) {
    const auto& g = n.grad;
    auto in = [&](std::size_t k) -> Node* {
        Node* p = n.inputs[k].get();
        if (!p->requires_grad) return nullptr;
        ensure_grad(*p);
        return p;
    };

    switch (n.op) {
        case OpKind::Leaf:
            break;
        case OpKind::MatMul: {
            const Node& a = *n.inputs[0];
            const Node& b = *n.inputs[1];
            const std::size_t m = a.shape[0], k = a.shape[1], cols = b.shape[1];
            if (Node* da = in(0)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j] * b.value[p * cols + j];
                        da->grad[i * k + p] += acc;
                    }
            }
            if (Node* db = in(1)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = a.value[i * k + p];
                        for (std::size_t j = 0; j < cols; ++j) db->grad[p * cols + j] += av * g[i * cols + j];
                    }
            }
            break;
        }
        case OpKind::MatVec: {
            const Node& w = *n.inputs[0];
            const Node& x = *n.inputs[1];
            const std::size_t m = w.shape[0], k = w.shape[1];
            if (Node* dw = in(0)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j) dw->grad[i * k + j] += g[i] * x.value[j];
            }
            if (Node* dx = in(1)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j) dx->grad[j] += w.value[i * k + j] * g[i];
            }
            break;
        }
        case OpKind::Transpose: {
            if (Node* da = in(0)) {
                const std::size_t r = n.inputs[0]->shape[0], c = n.inputs[0]->shape[1];
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) da->grad[i * c + j] += g[j * r + i];
            }
            break;
        }
        case OpKind::Add:
            for (std::size_t k = 0; k < 2; ++k)
                if (Node* d = in(k))
                    for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i];
            break;
        case OpKind::Sub:
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i];
            if (Node* d = in(1))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] -= g[i];
            break;
        case OpKind::Mul: {
            const auto& av = n.inputs[0]->value;
            const auto& bv = n.inputs[1]->value;
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i] * bv[i];
            if (Node* d = in(1))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i] * av[i];
            break;
        }
        case OpKind::Tanh:
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
            break;
        case OpKind::Sigmoid:
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
            break;
        case OpKind::LeakyRelu: {
            const auto& x = n.inputs[0]->value;
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i] * (x[i] > 0.0 ? 1.0 : n.param);
            break;
        }
        case OpKind::Scale: {
            const double s = n.inputs[0]->value[0];
            const auto& av = n.inputs[1]->value;
            if (Node* ds = in(0)) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                ds->grad[0] += acc;
            }
            if (Node* da = in(1))
                for (std::size_t i = 0; i < g.size(); ++i) da->grad[i] += s * g[i];
            break;
        }
        case OpKind::ScaleConst:
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += n.param * g[i];
            break;
        case OpKind::Sum:
            if (Node* d = in(0))
                for (double& v : d->grad) v += g[0];
            break;
        case OpKind::Dot: {
            const auto& av = n.inputs[0]->value;
            const auto& bv = n.inputs[1]->value;
            if (Node* d = in(0))
                for (std::size_t i = 0; i < av.size(); ++i) d->grad[i] += g[0] * bv[i];
            if (Node* d = in(1))
                for (std::size_t i = 0; i < av.size(); ++i) d->grad[i] += g[0] * av[i];
            break;
        }
        case OpKind::Softmax:
            if (Node* d = in(0)) {
                double inner = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) inner += g[i] * n.value[i];
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += n.value[i] * (g[i] - inner);
            }
            break;
        case OpKind::SoftmaxRows:
            if (Node* d = in(0)) {
                const std::size_t r = n.shape[0], c = n.shape[1];
                for (std::size_t i = 0; i < r; ++i) {
                    double inner = 0.0;
                    for (std::size_t j = 0; j < c; ++j) inner += g[i * c + j] * n.value[i * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                        d->grad[i * c + j] += n.value[i * c + j] * (g[i * c + j] - inner);
                }
            }
            break;
        case OpKind::SegmentSoftmax:
            if (Node* d = in(0)) {
                for (std::size_t s = 0; s + 1 < n.offsets.size(); ++s) {
                    double inner = 0.0;
                    for (std::size_t e = n.offsets[s]; e < n.offsets[s + 1]; ++e) inner += g[e] * n.value[e];
                    for (std::size_t e = n.offsets[s]; e < n.offsets[s + 1]; ++e)
                        d->grad[e] += n.value[e] * (g[e] - inner);
                }
            }
            break;
        case OpKind::SegmentWeightedSum: {
            const Node& m = *n.inputs[0];
            const Node& w = *n.inputs[1];
            const std::size_t dim = m.shape[1];
            Node* dm = in(0);
            Node* dw = in(1);
            for (std::size_t s = 0; s + 1 < n.offsets.size(); ++s) {
                for (std::size_t e = n.offsets[s]; e < n.offsets[s + 1]; ++e) {
                    const std::size_t src = n.index[e];
                    if (dm)
                        for (std::size_t c = 0; c < dim; ++c) dm->grad[src * dim + c] += w.value[e] * g[s * dim + c];
                    if (dw) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < dim; ++c) acc += m.value[src * dim + c] * g[s * dim + c];
                        dw->grad[e] += acc;
                    }
                }
            }
            break;
        }
        case OpKind::CrossEntropy:
            if (Node* d = in(0)) {
                const auto& z = n.inputs[0]->value;
                const double mx = *std::max_element(z.begin(), z.end());
                double denom = 0.0;
                for (double v : z) denom += std::exp(v - mx);
                for (std::size_t i = 0; i < z.size(); ++i) {
                    const double p = std::exp(z[i] - mx) / denom;
                    d->grad[i] += g[0] * (p - (i == n.extra ? 1.0 : 0.0));
                }
            }
            break;
        case OpKind::Concat: {
            std::size_t pos = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const std::size_t len = n.inputs[k]->value.size();
                if (Node* d = in(k))
                    for (std::size_t i = 0; i < len; ++i) d->grad[i] += g[pos + i];
                pos += len;
            }
            break;
        }
        case OpKind::StackRows: {
            const std::size_t dim = n.shape[1];
            for (std::size_t k = 0; k < n.inputs.size(); ++k)
                if (Node* d = in(k))
                    for (std::size_t i = 0; i < dim; ++i) d->grad[i] += g[k * dim + i];
            break;
        }
        case OpKind::StackColumns: {
            const std::size_t r = n.shape[0], c = n.shape[1];
            for (std::size_t k = 0; k < n.inputs.size(); ++k)
                if (Node* d = in(k))
                    for (std::size_t i = 0; i < r; ++i) d->grad[i] += g[i * c + k];
            break;
        }
        case OpKind::HConcat: {
            const std::size_t r = n.shape[0], total = n.shape[1];
            std::size_t col0 = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const std::size_t c = n.inputs[k]->shape[1];
                if (Node* d = in(k))
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) d->grad[i * c + j] += g[i * total + col0 + j];
                col0 += c;
            }
            break;
        }
        case OpKind::Row:
            if (Node* d = in(0)) {
                const std::size_t dim = n.value.size();
                for (std::size_t i = 0; i < dim; ++i) d->grad[n.extra * dim + i] += g[i];
            }
            break;
        case OpKind::Column:
            if (Node* d = in(0)) {
                const std::size_t c = n.inputs[0]->shape[1];
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i * c + n.extra] += g[i];
            }
            break;
        case OpKind::Gather:
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[n.index[i]] += g[i];
            break;
        case OpKind::Slice:
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[n.extra + i] += g[i];
            break;
        case OpKind::RowwiseDot: {
            const Node& a = *n.inputs[0];
            const Node& b = *n.inputs[1];
            const std::size_t dim = a.shape[1];
            Node* da = in(0);
            Node* db = in(1);
            for (std::size_t i = 0; i < g.size(); ++i)
                for (std::size_t j = 0; j < dim; ++j) {
                    if (da) da->grad[i * dim + j] += g[i] * b.value[i * dim + j];
                    if (db) db->grad[i * dim + j] += g[i] * a.value[i * dim + j];
                }
            break;
        }
        case OpKind::ScaleRows: {
            const Node& m = *n.inputs[0];
            const Node& w = *n.inputs[1];
            const std::size_t r = m.shape[0], c = m.shape[1];
            Node* dm = in(0);
            Node* dw = in(1);
            for (std::size_t i = 0; i < r; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    if (dm) dm->grad[i * c + j] += w.value[i] * g[i * c + j];
                    acc += m.value[i * c + j] * g[i * c + j];
                }
                if (dw) dw->grad[i] += acc;
            }
            break;
        }
        case OpKind::AddRowwise: {
            const std::size_t r = n.shape[0], c = n.shape[1];
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i];
            if (Node* d = in(1))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) d->grad[j] += g[i * c + j];
            break;
        }
        case OpKind::AddN:
            for (std::size_t k = 0; k < n.inputs.size(); ++k)
                if (Node* d = in(k))
                    for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i];
            break;
        case OpKind::Passthrough:
            if (Node* d = in(0))
                for (std::size_t i = 0; i < g.size(); ++i) d->grad[i] += g[i];
            break;
    }
}

}  // namespace

std::size_t numel(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

const char* op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::MatVec: return "matvec";
        case OpKind::Transpose: return "transpose";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Tanh: return "tanh";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::LeakyRelu: return "leaky_relu";
        case OpKind::Scale: return "scale";
        case OpKind::ScaleConst: return "scale_const";
        case OpKind::Sum: return "sum";
        case OpKind::Dot: return "dot";
        case OpKind::Softmax: return "softmax";
        case OpKind::SoftmaxRows: return "softmax_rows";
        case OpKind::Concat: return "concat";
        case OpKind::StackRows: return "stack_rows";
        case OpKind::StackColumns: return "stack_columns";
        case OpKind::HConcat: return "hconcat";
        case OpKind::Row: return "row";
        case OpKind::Column: return "column";
        case OpKind::Gather: return "gather";
        case OpKind::Slice: return "slice";
        case OpKind::RowwiseDot: return "rowwise_dot";
        case OpKind::ScaleRows: return "scale_rows";
        case OpKind::AddRowwise: return "add_rowwise";
        case OpKind::SegmentSoftmax: return "segment_softmax";
        case OpKind::SegmentWeightedSum: return "segment_weighted_sum";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::AddN: return "add_n";
        case OpKind::Passthrough: return "passthrough";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = make_node(std::move(shape), OpKind::Leaf);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != numel(shape)) {
        throw DimensionError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                             shape_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    return from({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return get(*this).shape; }
std::size_t Tensor::size() const { return get(*this).value.size(); }

std::size_t Tensor::rows() const {
    require_rank(*this, 2, "rows");
    return shape()[0];
}

std::size_t Tensor::cols() const {
    require_rank(*this, 2, "cols");
    return shape()[1];
}

std::span<const double> Tensor::values() const { return get(*this).value; }

std::span<double> Tensor::mutable_values() {
    if (get(*this).op != OpKind::Leaf) throw ContractError("mutable_values on a non-leaf tensor");
    return node_->value;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const { return get(*this).grad; }

std::span<double> Tensor::mutable_grad() {
    ensure_grad(*node_);
    return node_->grad;
}

void Tensor::zero_grad() {
    auto& n = *node_;
    n.grad.assign(n.value.size(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

std::size_t Tensor::node_id() const { return get(*this).tape_id; }
OpKind Tensor::op() const { return get(*this).op; }

// ---------------------------------------------------------------------------
// Tape

void Tape::record(const std::shared_ptr<Node>& node) {
    node->tape_id = nodes_.size();
    node->owner = this;
    for (const auto& in : node->inputs) {
        if (in->op == OpKind::Leaf && in->requires_grad && !in->leaf_registered) {
            in->leaf_registered = true;
            leaves_.push_back(in);
        }
    }
    nodes_.push_back(node);
}

std::vector<TapeEntry> Tape::entries() const {
    std::vector<TapeEntry> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) {
        TapeEntry e{n->op, {}, n->tape_id};
        for (const auto& in : n->inputs) e.inputs.push_back(in->owner == this ? in->tape_id : Tensor::npos);
        out.push_back(std::move(e));
    }
    return out;
}

void Tape::backward(const Tensor& loss) {
    const Node& ln = get(loss);
    if (ln.value.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_string(ln.shape));
    }
    for (auto& leaf : leaves_) leaf->grad.assign(leaf->value.size(), 0.0);
    for (auto& n : nodes_) n->grad.clear();
    last_visits_ = 0;

    if (ln.op == OpKind::Leaf) {
        if (ln.requires_grad) loss.node()->grad.assign(1, 1.0);
        return;
    }
    if (ln.owner != this) throw ContractError("backward: loss was not recorded on this tape");

    std::vector<char> reach(nodes_.size(), 0);
    reach[ln.tape_id] = 1;
    loss.node()->grad.assign(1, 1.0);
    for (std::size_t i = ln.tape_id + 1; i-- > 0;) {
        if (!reach[i]) continue;
        Node& n = *nodes_[i];
        ensure_grad(n);
        propagate(n);
        ++last_visits_;
        for (const auto& in : n.inputs)
            if (in->owner == this && in->tape_id != Tensor::npos) reach[in->tape_id] = 1;
    }
}

void Tape::clear() {
    for (auto& n : nodes_) {
        n->owner = nullptr;
        n->tape_id = Tensor::npos;
        n->inputs.clear();
        n->requires_grad = false;
    }
    for (auto& leaf : leaves_) leaf->leaf_registered = false;
    nodes_.clear();
    leaves_.clear();
    last_visits_ = 0;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
TapeScope::~TapeScope() { g_current_tape = previous_; }

Tape* current_tape() noexcept { return g_current_tape; }

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as[1] != bs[0]) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_string(as) + " x " + shape_string(bs));
    }
    const std::size_t m = as[0], k = as[1], cols = bs[1];
    auto n = make_node({m, cols}, OpKind::MatMul);
    const auto& av = get(a).value;
    const auto& bv = get(b).value;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            for (std::size_t j = 0; j < cols; ++j) n->value[i * cols + j] += x * bv[p * cols + j];
        }
    return finish(std::move(n), {&a, &b});
}

Tensor matvec(const Tensor& w, const Tensor& x) {
    require_rank(w, 2, "matvec");
    require_rank(x, 1, "matvec");
    const std::size_t m = w.shape()[0], k = w.shape()[1];
    if (x.shape()[0] != k) {
        throw DimensionError("matvec: inner dimensions disagree " + shape_string(w.shape()) + " x " +
                             shape_string(x.shape()));
    }
    auto n = make_node({m}, OpKind::MatVec);
    const auto& wv = get(w).value;
    const auto& xv = get(x).value;
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += wv[i * k + j] * xv[j];
        n->value[i] = acc;
    }
    return finish(std::move(n), {&w, &x});
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    auto n = make_node({c, r}, OpKind::Transpose);
    const auto& av = get(a).value;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[j * r + i] = av[i * c + j];
    return finish(std::move(n), {&a});
}

namespace {

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, OpKind op, const char* what, F f) {
    require_same(a, b, what);
    auto n = make_node(a.shape(), op);
    const auto& av = get(a).value;
    const auto& bv = get(b).value;
    for (std::size_t i = 0; i < av.size(); ++i) n->value[i] = f(av[i], bv[i]);
    return finish(std::move(n), {&a, &b});
}

template <typename F>
Tensor unary(const Tensor& a, OpKind op, F f) {
    auto n = make_node(get(a).shape, op);
    const auto& av = get(a).value;
    for (std::size_t i = 0; i < av.size(); ++i) n->value[i] = f(av[i]);
    return finish(std::move(n), {&a});
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(a, b, OpKind::Add, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(a, b, OpKind::Sub, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(a, b, OpKind::Mul, "mul", [](double x, double y) { return x * y; });
}

Tensor tanh(const Tensor& a) { return unary(a, OpKind::Tanh, [](double x) { return std::tanh(x); }); }

Tensor sigmoid(const Tensor& a) {
    return unary(a, OpKind::Sigmoid, [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    auto t = unary(a, OpKind::LeakyRelu, [slope](double x) { return x > 0.0 ? x : slope * x; });
    t.node()->param = slope;
    return t;
}

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b) {
    switch (kind) {
        case Elementwise::Add: return add(a, b);
        case Elementwise::Sub: return sub(a, b);
        case Elementwise::Mul: return mul(a, b);
        case Elementwise::Tanh: return tanh(a);
        case Elementwise::Sigmoid: return sigmoid(a);
    }
    throw ContractError("elementwise: unknown kind");
}

Tensor add_n(std::span<const Tensor> terms) {
    if (terms.empty()) throw ContractError("add_n: no terms");
    for (const auto& t : terms) require_same(terms[0], t, "add_n");
    auto n = make_node(terms[0].shape(), OpKind::AddN);
    for (const auto& t : terms) {
        const auto& v = get(t).value;
        for (std::size_t i = 0; i < v.size(); ++i) n->value[i] += v[i];
    }
    return finish_many(std::move(n), terms);
}

Tensor scale(const Tensor& s, const Tensor& a) {
    if (s.size() != 1) throw DimensionError("scale: expected scalar, got " + shape_string(s.shape()));
    const double sv = get(s).value[0];
    auto n = make_node(a.shape(), OpKind::Scale);
    const auto& av = get(a).value;
    for (std::size_t i = 0; i < av.size(); ++i) n->value[i] = sv * av[i];
    return finish(std::move(n), {&s, &a});
}

Tensor scale(const Tensor& a, double c) {
    auto t = unary(a, OpKind::ScaleConst, [c](double x) { return c * x; });
    t.node()->param = c;
    return t;
}

Tensor sum(const Tensor& a) {
    auto n = make_node({}, OpKind::Sum);
    for (double v : get(a).value) n->value[0] += v;
    return finish(std::move(n), {&a});
}

Tensor dot(const Tensor& a, const Tensor& b) {
    require_same(a, b, "dot");
    auto n = make_node({}, OpKind::Dot);
    const auto& av = get(a).value;
    const auto& bv = get(b).value;
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    n->value[0] = acc;
    return finish(std::move(n), {&a, &b});
}

namespace {

void softmax_into(std::span<const double> in, std::span<double> out, const char* what) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : in) {
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite score");
        mx = std::max(mx, v);
    }
    double denom = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = std::exp(in[i] - mx);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
}

}  // namespace

Tensor softmax(const Tensor& scores) {
    require_rank(scores, 1, "softmax");
    if (scores.size() == 0) throw ContractError("softmax: empty input");
    auto n = make_node(scores.shape(), OpKind::Softmax);
    softmax_into(get(scores).value, n->value, "softmax");
    return finish(std::move(n), {&scores});
}

Tensor softmax_rows(const Tensor& scores) {
    require_rank(scores, 2, "softmax_rows");
    const std::size_t r = scores.shape()[0], c = scores.shape()[1];
    if (c == 0) throw ContractError("softmax_rows: empty rows");
    auto n = make_node(scores.shape(), OpKind::SoftmaxRows);
    std::span<const double> in = get(scores).value;
    std::span<double> out = n->value;
    for (std::size_t i = 0; i < r; ++i) softmax_into(in.subspan(i * c, c), out.subspan(i * c, c), "softmax_rows");
    return finish(std::move(n), {&scores});
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
    require_rank(logits, 1, "cross_entropy");
    const auto& z = get(logits).value;
    if (target >= z.size()) {
        throw ContractError("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                            std::to_string(z.size()) + ")");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z) {
        if (!std::isfinite(v)) throw NumericError("cross_entropy: non-finite logit");
        mx = std::max(mx, v);
    }
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - mx);
    auto n = make_node({}, OpKind::CrossEntropy);
    n->value[0] = std::log(denom) - (z[target] - mx);
    n->extra = target;
    return finish(std::move(n), {&logits});
}

Tensor concat(std::span<const Tensor> parts) {
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p, 1, "concat");
        total += p.size();
    }
    auto n = make_node({total}, OpKind::Concat);
    std::size_t pos = 0;
    for (const auto& p : parts)
        for (double v : get(p).value) n->value[pos++] = v;
    return finish_many(std::move(n), parts);
}

Tensor stack_rows(std::span<const Tensor> rows) {
    if (rows.empty()) throw ContractError("stack_rows: no rows");
    const std::size_t dim = rows[0].size();
    for (const auto& r : rows) {
        require_rank(r, 1, "stack_rows");
        if (r.size() != dim) throw DimensionError("stack_rows: ragged rows");
    }
    auto n = make_node({rows.size(), dim}, OpKind::StackRows);
    for (std::size_t k = 0; k < rows.size(); ++k)
        std::copy(get(rows[k]).value.begin(), get(rows[k]).value.end(), n->value.begin() + k * dim);
    return finish_many(std::move(n), rows);
}

Tensor stack_columns(std::span<const Tensor> columns) {
    if (columns.empty()) throw ContractError("stack_columns: no columns");
    const std::size_t r = columns[0].size(), c = columns.size();
    for (const auto& col : columns) {
        require_rank(col, 1, "stack_columns");
        if (col.size() != r) throw DimensionError("stack_columns: ragged columns");
    }
    auto n = make_node({r, c}, OpKind::StackColumns);
    for (std::size_t k = 0; k < c; ++k) {
        const auto& v = get(columns[k]).value;
        for (std::size_t i = 0; i < r; ++i) n->value[i * c + k] = v[i];
    }
    return finish_many(std::move(n), columns);
}

Tensor hconcat(std::span<const Tensor> blocks) {
    if (blocks.empty()) throw ContractError("hconcat: no blocks");
    const std::size_t r = blocks[0].rows();
    std::size_t total = 0;
    for (const auto& b : blocks) {
        if (b.rows() != r) throw DimensionError("hconcat: row counts disagree");
        total += b.cols();
    }
    auto n = make_node({r, total}, OpKind::HConcat);
    std::size_t col0 = 0;
    for (const auto& b : blocks) {
        const std::size_t c = b.cols();
        const auto& v = get(b).value;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) n->value[i * total + col0 + j] = v[i * c + j];
        col0 += c;
    }
    return finish_many(std::move(n), blocks);
}

Tensor row(const Tensor& m, std::size_t i) {
    require_rank(m, 2, "row");
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    if (i >= r) throw RangeError("row: index " + std::to_string(i) + " outside " + shape_string(m.shape()));
    auto n = make_node({c}, OpKind::Row);
    const auto& v = get(m).value;
    std::copy(v.begin() + i * c, v.begin() + (i + 1) * c, n->value.begin());
    n->extra = i;
    return finish(std::move(n), {&m});
}

Tensor column(const Tensor& m, std::size_t j) {
    require_rank(m, 2, "column");
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    if (j >= c) throw RangeError("column: index " + std::to_string(j) + " outside " + shape_string(m.shape()));
    auto n = make_node({r}, OpKind::Column);
    const auto& v = get(m).value;
    for (std::size_t i = 0; i < r; ++i) n->value[i] = v[i * c + j];
    n->extra = j;
    return finish(std::move(n), {&m});
}

Tensor gather(const Tensor& v, std::vector<std::size_t> index) {
    require_rank(v, 1, "gather");
    const auto& vv = get(v).value;
    auto n = make_node({index.size()}, OpKind::Gather);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= vv.size()) throw RangeError("gather: index out of range");
        n->value[i] = vv[index[i]];
    }
    n->index = std::move(index);
    return finish(std::move(n), {&v});
}

Tensor slice(const Tensor& v, std::size_t start, std::size_t length) {
    require_rank(v, 1, "slice");
    if (start + length > v.size()) throw RangeError("slice: range exceeds " + shape_string(v.shape()));
    auto n = make_node({length}, OpKind::Slice);
    const auto& vv = get(v).value;
    std::copy(vv.begin() + start, vv.begin() + start + length, n->value.begin());
    n->extra = start;
    return finish(std::move(n), {&v});
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "rowwise_dot");
    require_same(a, b, "rowwise_dot");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    auto n = make_node({r}, OpKind::RowwiseDot);
    const auto& av = get(a).value;
    const auto& bv = get(b).value;
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += av[i * c + j] * bv[i * c + j];
        n->value[i] = acc;
    }
    return finish(std::move(n), {&a, &b});
}

Tensor scale_rows(const Tensor& m, const Tensor& w) {
    require_rank(m, 2, "scale_rows");
    require_rank(w, 1, "scale_rows");
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    if (w.size() != r) {
        throw DimensionError("scale_rows: " + shape_string(m.shape()) + " with weights " + shape_string(w.shape()));
    }
    auto n = make_node(m.shape(), OpKind::ScaleRows);
    const auto& mv = get(m).value;
    const auto& wv = get(w).value;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = wv[i] * mv[i * c + j];
    return finish(std::move(n), {&m, &w});
}

Tensor add_rowwise(const Tensor& m, const Tensor& bias) {
    require_rank(m, 2, "add_rowwise");
    require_rank(bias, 1, "add_rowwise");
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    if (bias.size() != c) {
        throw DimensionError("add_rowwise: " + shape_string(m.shape()) + " with bias " + shape_string(bias.shape()));
    }
    auto n = make_node(m.shape(), OpKind::AddRowwise);
    const auto& mv = get(m).value;
    const auto& bv = get(bias).value;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = mv[i * c + j] + bv[j];
    return finish(std::move(n), {&m, &bias});
}

Tensor segment_softmax(const Tensor& scores, std::vector<std::size_t> offsets) {
    require_rank(scores, 1, "segment_softmax");
    check_offsets(offsets, scores.size(), "segment_softmax");
    auto n = make_node(scores.shape(), OpKind::SegmentSoftmax);
    std::span<const double> in = get(scores).value;
    std::span<double> out = n->value;
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const std::size_t len = offsets[s + 1] - offsets[s];
        if (len == 0) continue;
        softmax_into(in.subspan(offsets[s], len), out.subspan(offsets[s], len), "segment_softmax");
    }
    n->offsets = std::move(offsets);
    return finish(std::move(n), {&scores});
}

Tensor segment_weighted_sum(const Tensor& m, std::vector<std::size_t> source, const Tensor& weights,
                            std::vector<std::size_t> offsets) {
    require_rank(m, 2, "segment_weighted_sum");
    require_rank(weights, 1, "segment_weighted_sum");
    if (source.size() != weights.size()) throw DimensionError("segment_weighted_sum: source/weight length mismatch");
    check_offsets(offsets, source.size(), "segment_weighted_sum");
    const std::size_t rows = m.shape()[0], dim = m.shape()[1];
    const std::size_t segments = offsets.size() - 1;
    auto n = make_node({segments, dim}, OpKind::SegmentWeightedSum);
    const auto& mv = get(m).value;
    const auto& wv = get(weights).value;
    for (std::size_t s = 0; s < segments; ++s)
        for (std::size_t e = offsets[s]; e < offsets[s + 1]; ++e) {
            if (source[e] >= rows) throw RangeError("segment_weighted_sum: source index out of range");
            for (std::size_t c = 0; c < dim; ++c) n->value[s * dim + c] += wv[e] * mv[source[e] * dim + c];
        }
    n->index = std::move(source);
    n->offsets = std::move(offsets);
    return finish(std::move(n), {&m, &weights});
}

Tensor passthrough(const Tensor& anchor, const Tensor& value) {
    require_same(anchor, value, "passthrough");
    auto n = make_node(anchor.shape(), OpKind::Passthrough);
    n->value = get(value).value;
    return finish(std::move(n), {&anchor});
}

}  // namespace memo::ad
