#pragma once

#include <map>
#include <string>
#include <vector>

#include "optima/array.hpp"

namespace optima {

/// Primitive operations supported by the computation graph. The set is fixed;
/// anything else (warps, clamps) lives outside the graph and chains gradients
/// by hand.
enum class OpKind {
    Leaf,
    Add,
    Subtract,
    Multiply,
    MatMul,
    Affine,
    Relu,
    Tanh,
    Exp,
    Log,
    Negate,
    Square,
    SumReduce,
    MeanReduce,
    LogSumExp,
    Softmax,
    GaussianLogDensity,
    BroadcastScalar,
};

const char* op_name(OpKind k);

struct Node {
    OpKind op;
    std::vector<int> inputs;
    Shape shape;
    int axis = -1;      // LogSumExp / Softmax
    std::string name;   // Leaf slot name
};

using Bindings = std::map<std::string, Array>;

/// Static DAG of primitives over named leaf slots. Nodes are appended in
/// topological order by construction; shapes are checked at build time.
class ComputationGraph {
  public:
    using NodeId = int;

    NodeId input(const std::string& name, Shape shape);

    NodeId add(NodeId a, NodeId b);
    NodeId subtract(NodeId a, NodeId b);
    NodeId multiply(NodeId a, NodeId b);
    NodeId matmul(NodeId a, NodeId b);
    NodeId affine(NodeId w, NodeId x, NodeId b);
    NodeId relu(NodeId x);
    NodeId tanh(NodeId x);
    NodeId exp(NodeId x);
    NodeId log(NodeId x);
    NodeId negate(NodeId x);
    NodeId square(NodeId x);
    NodeId sum_reduce(NodeId x);
    NodeId mean_reduce(NodeId x);
    NodeId log_sum_exp(NodeId x, int axis = 0);
    NodeId softmax(NodeId x, int axis = 0);
    /// Scalar sum of log N(x_i | mean_i, exp(log_std_i)^2) over all entries.
    NodeId gaussian_log_density(NodeId x, NodeId mean, NodeId log_std);
    NodeId broadcast_scalar(NodeId s, Shape target);

    void set_output(NodeId id);
    NodeId output() const { return output_; }

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    const std::map<std::string, NodeId>& leaves() const { return leaves_; }
    bool has_leaf(const std::string& name) const { return leaves_.count(name) > 0; }

  private:
    NodeId push(Node n);
    const Shape& shape_of(NodeId id) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> leaves_;
    NodeId output_ = -1;
};

/// Value of the designated output node. Throws on missing/mis-shaped bindings
/// and on any non-finite intermediate (message names the node).
Array evaluate(const ComputationGraph& g, const Bindings& b);

/// One forward pass, values of several nodes.
std::vector<Array> evaluate_nodes(const ComputationGraph& g, const Bindings& b,
                                  const std::vector<int>& ids);

using GradMap = std::map<std::string, Array>;

/// Reverse-mode gradients of the (scalar) output with respect to the named
/// leaf slots. A leaf not on the path to the output gets a zero array.
GradMap gradient(const ComputationGraph& g, const Bindings& b,
                 const std::vector<std::string>& wrt);

/// Reusable evaluation buffers; avoids reallocating per-node arrays on every
/// call when shapes repeat (the trainer's hot loop).
struct ExecWorkspace {
    std::vector<Array> vals, adj;
};

/// Same, but differentiating an arbitrary scalar node; optionally returns all
/// forward values (indexed by node id) and reuses a workspace.
GradMap gradient_of(const ComputationGraph& g, const Bindings& b, int objective,
                    const std::vector<std::string>& wrt,
                    std::vector<Array>* forward_values = nullptr,
                    ExecWorkspace* workspace = nullptr);

}  // namespace optima
