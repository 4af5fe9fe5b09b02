#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Operations record themselves on the thread's current Tape (see TapeScope)
// whenever at least one input requires a gradient. With no active tape the
// same calls compute values only, which is what inference paths use.
//
// Shapes are explicit: binary ops require identical shapes, and the only
// implicit broadcast is scalar * tensor via scale().

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace memo::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

enum class OpKind : std::uint8_t {
    Leaf,
    MatMul,
    MatVec,
    Transpose,
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    LeakyRelu,
    Scale,
    ScaleConst,
    Sum,
    Dot,
    Softmax,
    SoftmaxRows,
    Concat,
    StackRows,
    StackColumns,
    HConcat,
    Row,
    Column,
    Gather,
    Slice,
    RowwiseDot,
    ScaleRows,
    AddRowwise,
    SegmentSoftmax,
    SegmentWeightedSum,
    CrossEntropy,
    AddN,
    Passthrough,
};

const char* op_name(OpKind kind) noexcept;

struct Node;
class Tape;

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const;
    // Only leaves may be mutated in place (optimizer updates, test perturbation).
    std::span<double> mutable_values();
    double item() const;
    double operator[](std::size_t i) const { return values()[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    // Empty span when no gradient buffer has been allocated.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Fresh leaf holding a copy of the values, cut from any recorded history.
    Tensor detach() const;

    // Position in the recording tape; npos for leaves and untracked values.
    std::size_t node_id() const;
    OpKind op() const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    friend class Tape;
    friend Tensor wrap(std::shared_ptr<Node>);

    std::shared_ptr<Node> node_;
};

struct TapeEntry {
    OpKind op;
    std::vector<std::size_t> inputs;  // tape ids; npos for leaves
    std::size_t output;
};

// Ordered record of primitive operations. Entries are appended in execution
// order, so every input precedes its consumer.
class Tape {
public:
    Tape() = default;
    ~Tape() { clear(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const noexcept { return nodes_.size(); }
    std::vector<TapeEntry> entries() const;

    // Fills gradients for every tensor reachable from `loss`. Gradients of
    // all leaves seen by this tape are reset first, so leaves that are not
    // reachable from `loss` end with zero gradient.
    void backward(const Tensor& loss);

    // Number of nodes whose backward rule ran during the last backward().
    std::size_t last_visit_count() const noexcept { return last_visits_; }

    void clear();

    void record(const std::shared_ptr<Node>& node);

private:
    std::vector<std::shared_ptr<Node>> nodes_;
    std::vector<std::shared_ptr<Node>> leaves_;
    std::size_t last_visits_ = 0;
};

// Makes `tape` the current tape of this thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* current_tape() noexcept;

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& w, const Tensor& x);
Tensor transpose(const Tensor& a);

// Pointwise.
enum class Elementwise : std::uint8_t { Add, Sub, Mul, Tanh, Sigmoid };

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b = Tensor{});
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor add_n(std::span<const Tensor> terms);

// Scalar-tensor broadcast; `s` must hold exactly one element.
Tensor scale(const Tensor& s, const Tensor& a);
Tensor scale(const Tensor& a, double c);

// Reductions.
Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& scores);
Tensor softmax_rows(const Tensor& scores);

// Numerically stable -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::size_t target);

// Structure.
Tensor concat(std::span<const Tensor> parts);
Tensor stack_rows(std::span<const Tensor> rows);
Tensor stack_columns(std::span<const Tensor> columns);
Tensor hconcat(std::span<const Tensor> blocks);
Tensor row(const Tensor& m, std::size_t i);
Tensor column(const Tensor& m, std::size_t j);
Tensor gather(const Tensor& v, std::vector<std::size_t> index);
Tensor slice(const Tensor& v, std::size_t start, std::size_t length);

// Row-parallel helpers for batched attention.
Tensor rowwise_dot(const Tensor& a, const Tensor& b);
Tensor scale_rows(const Tensor& m, const Tensor& w);
Tensor add_rowwise(const Tensor& m, const Tensor& bias);

// Sparse neighborhood primitives. `offsets` has one more entry than there are
// segments; segment s covers entries [offsets[s], offsets[s+1]).
Tensor segment_softmax(const Tensor& scores, std::vector<std::size_t> offsets);
Tensor segment_weighted_sum(const Tensor& m, std::vector<std::size_t> source,
                            const Tensor& weights, std::vector<std::size_t> offsets);

// Value of `value`, gradient routed to `anchor` as identity. Shapes must match.
Tensor passthrough(const Tensor& anchor, const Tensor& value);

}  // namespace memo::ad
