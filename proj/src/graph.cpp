#include "optima/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace optima {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Subtract: return "subtract";
        case OpKind::Multiply: return "multiply";
        case OpKind::MatMul: return "matrix-multiply";
        case OpKind::Affine: return "affine";
        case OpKind::Relu: return "relu";
        case OpKind::Tanh: return "tanh";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Negate: return "negate";
        case OpKind::Square: return "square";
        case OpKind::SumReduce: return "sum-reduce";
        case OpKind::MeanReduce: return "mean-reduce";
        case OpKind::LogSumExp: return "log-sum-exp";
        case OpKind::Softmax: return "softmax";
        case OpKind::GaussianLogDensity: return "gaussian-log-density";
        case OpKind::BroadcastScalar: return "broadcast-scalar";
    }
    return "?";
}

namespace {

[[noreturn]] void build_error(const std::string& what) {
    throw std::invalid_argument("graph build: " + what);
}

}  // namespace

ComputationGraph::NodeId ComputationGraph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Shape& ComputationGraph::shape_of(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        build_error("node id " + std::to_string(id) + " out of range");
    return nodes_[static_cast<std::size_t>(id)].shape;
}

ComputationGraph::NodeId ComputationGraph::input(const std::string& name, Shape shape) {
    if (leaves_.count(name)) build_error("duplicate leaf slot '" + name + "'");
    if (shape.size() > 2) build_error("leaf '" + name + "' rank > 2");
    Node n;
    n.op = OpKind::Leaf;
    n.shape = std::move(shape);
    n.name = name;
    NodeId id = push(std::move(n));
    leaves_[name] = id;
    return id;
}

ComputationGraph::NodeId ComputationGraph::add(NodeId a, NodeId b) {
    if (shape_of(a) != shape_of(b))
        build_error(std::string("add: shape mismatch ") + shape_str(shape_of(a)) + " vs " +
                    shape_str(shape_of(b)));
    return push({OpKind::Add, {a, b}, shape_of(a), -1, {}});
}

ComputationGraph::NodeId ComputationGraph::subtract(NodeId a, NodeId b) {
    if (shape_of(a) != shape_of(b))
        build_error(std::string("subtract: shape mismatch ") + shape_str(shape_of(a)) + " vs " +
                    shape_str(shape_of(b)));
    return push({OpKind::Subtract, {a, b}, shape_of(a), -1, {}});
}

ComputationGraph::NodeId ComputationGraph::multiply(NodeId a, NodeId b) {
    if (shape_of(a) != shape_of(b))
        build_error(std::string("multiply: shape mismatch ") + shape_str(shape_of(a)) + " vs " +
                    shape_str(shape_of(b)));
    return push({OpKind::Multiply, {a, b}, shape_of(a), -1, {}});
}

ComputationGraph::NodeId ComputationGraph::matmul(NodeId a, NodeId b) {
    const Shape& sa = shape_of(a);
    const Shape& sb = shape_of(b);
    if (sa.size() != 2) build_error("matrix-multiply: left operand must be rank 2, got " + shape_str(sa));
    if (sb.size() == 2) {
        if (sa[1] != sb[0])
            build_error("matrix-multiply: inner dims " + shape_str(sa) + " vs " + shape_str(sb));
        return push({OpKind::MatMul, {a, b}, {sa[0], sb[1]}, -1, {}});
    }
    if (sb.size() == 1) {
        if (sa[1] != sb[0])
            build_error("matrix-multiply: inner dims " + shape_str(sa) + " vs " + shape_str(sb));
        return push({OpKind::MatMul, {a, b}, {sa[0]}, -1, {}});
    }
    build_error("matrix-multiply: right operand must be rank 1 or 2");
}

ComputationGraph::NodeId ComputationGraph::affine(NodeId w, NodeId x, NodeId b) {
    const Shape& sw = shape_of(w);
    const Shape& sx = shape_of(x);
    const Shape& sb = shape_of(b);
    if (sw.size() != 2 || sx.size() != 1 || sb.size() != 1)
        build_error("affine: expected W rank 2, x rank 1, b rank 1");
    if (sw[1] != sx[0] || sw[0] != sb[0])
        build_error("affine: shape mismatch W" + shape_str(sw) + " x" + shape_str(sx) + " b" +
                    shape_str(sb));
    return push({OpKind::Affine, {w, x, b}, {sw[0]}, -1, {}});
}

#define OPTIMA_UNARY(fn, kind)                                         \
    ComputationGraph::NodeId ComputationGraph::fn(NodeId x) {          \
        return push({OpKind::kind, {x}, shape_of(x), -1, {}});         \
    }

OPTIMA_UNARY(relu, Relu)
OPTIMA_UNARY(tanh, Tanh)
OPTIMA_UNARY(exp, Exp)
OPTIMA_UNARY(log, Log)
OPTIMA_UNARY(negate, Negate)
OPTIMA_UNARY(square, Square)
#undef OPTIMA_UNARY

ComputationGraph::NodeId ComputationGraph::sum_reduce(NodeId x) {
    (void)shape_of(x);
    return push({OpKind::SumReduce, {x}, Shape{}, -1, {}});
}

ComputationGraph::NodeId ComputationGraph::mean_reduce(NodeId x) {
    (void)shape_of(x);
    return push({OpKind::MeanReduce, {x}, Shape{}, -1, {}});
}

namespace {
Shape reduced_shape(const Shape& s, int axis, const char* what) {
    if (s.size() == 1) {
        if (axis != 0) build_error(std::string(what) + ": axis must be 0 for rank-1 input");
        return Shape{};
    }
    if (s.size() == 2) {
        if (axis == 0) return Shape{s[1]};
        if (axis == 1) return Shape{s[0]};
        build_error(std::string(what) + ": axis must be 0 or 1 for rank-2 input");
    }
    build_error(std::string(what) + ": input must be rank 1 or 2");
    return {};
}
}  // namespace

ComputationGraph::NodeId ComputationGraph::log_sum_exp(NodeId x, int axis) {
    Shape out = reduced_shape(shape_of(x), axis, "log-sum-exp");
    return push({OpKind::LogSumExp, {x}, std::move(out), axis, {}});
}

ComputationGraph::NodeId ComputationGraph::softmax(NodeId x, int axis) {
    reduced_shape(shape_of(x), axis, "softmax");
    return push({OpKind::Softmax, {x}, shape_of(x), axis, {}});
}

ComputationGraph::NodeId ComputationGraph::gaussian_log_density(NodeId x, NodeId mean, NodeId log_std) {
    if (shape_of(x) != shape_of(mean) || shape_of(x) != shape_of(log_std))
        build_error("gaussian-log-density: x, mean, log_std shapes must match");
    return push({OpKind::GaussianLogDensity, {x, mean, log_std}, Shape{}, -1, {}});
}

ComputationGraph::NodeId ComputationGraph::broadcast_scalar(NodeId s, Shape target) {
    if (numel(shape_of(s)) != 1) build_error("broadcast-scalar: source must have a single element");
    return push({OpKind::BroadcastScalar, {s}, std::move(target), -1, {}});
}

void ComputationGraph::set_output(NodeId id) {
    (void)shape_of(id);
    output_ = id;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void eval_error(int node_id, OpKind op, const std::string& what) {
    throw std::runtime_error("graph eval: node " + std::to_string(node_id) + " (" + op_name(op) +
                             "): " + what);
}

void check_finite(const Array& a, int node_id, OpKind op) {
    if (!a.all_finite()) eval_error(node_id, op, "non-finite intermediate value");
}

void ensure_shape(Array& a, const Shape& shape) {
    if (a.shape != shape) {
        a.shape = shape;
        a.data.resize(numel(shape));
    }
}

void forward_pass(const ComputationGraph& g, const Bindings& b, std::vector<Array>& vals) {
    const auto& nodes = g.nodes();
    if (vals.size() != nodes.size()) vals.resize(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Node& n = nodes[i];
        Array& out = vals[i];
        ensure_shape(out, n.shape);
        switch (n.op) {
            case OpKind::Leaf: {
                auto it = b.find(n.name);
                if (it == b.end())
                    eval_error(static_cast<int>(i), n.op, "no binding for slot '" + n.name + "'");
                if (it->second.shape != n.shape)
                    eval_error(static_cast<int>(i), n.op,
                               "binding for '" + n.name + "' has shape " + shape_str(it->second.shape) +
                                   ", expected " + shape_str(n.shape));
                out.data = it->second.data;
                break;
            }
            case OpKind::Add: {
                const Array& a = vals[n.inputs[0]];
                const Array& c = vals[n.inputs[1]];
                for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = a.data[k] + c.data[k];
                break;
            }
            case OpKind::Subtract: {
                const Array& a = vals[n.inputs[0]];
                const Array& c = vals[n.inputs[1]];
                for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = a.data[k] - c.data[k];
                break;
            }
            case OpKind::Multiply: {
                const Array& a = vals[n.inputs[0]];
                const Array& c = vals[n.inputs[1]];
                for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = a.data[k] * c.data[k];
                break;
            }
            case OpKind::MatMul: {
                const Array& a = vals[n.inputs[0]];
                const Array& c = vals[n.inputs[1]];
                std::fill(out.data.begin(), out.data.end(), 0.0);
                std::size_t m = a.shape[0], kk = a.shape[1];
                if (c.rank() == 2) {
                    std::size_t p = c.shape[1];
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < kk; ++j) {
                            double av = a.data[r * kk + j];
                            if (av == 0.0) continue;
                            for (std::size_t q = 0; q < p; ++q)
                                out.data[r * p + q] += av * c.data[j * p + q];
                        }
                } else {
                    for (std::size_t r = 0; r < m; ++r) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < kk; ++j) s += a.data[r * kk + j] * c.data[j];
                        out.data[r] = s;
                    }
                }
                break;
            }
            case OpKind::Affine: {
                const Array& w = vals[n.inputs[0]];
                const Array& x = vals[n.inputs[1]];
                const Array& bias = vals[n.inputs[2]];
                std::size_t m = w.shape[0], kk = w.shape[1];
                for (std::size_t r = 0; r < m; ++r) {
                    double s = bias.data[r];
                    for (std::size_t j = 0; j < kk; ++j) s += w.data[r * kk + j] * x.data[j];
                    out.data[r] = s;
                }
                break;
            }
            case OpKind::Relu: {
                const Array& a = vals[n.inputs[0]];
                for (std::size_t k = 0; k < out.size(); ++k)
                    out.data[k] = a.data[k] > 0.0 ? a.data[k] : 0.0;
                break;
            }
            case OpKind::Tanh: {
                const Array& a = vals[n.inputs[0]];
                for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = std::tanh(a.data[k]);
                break;
            }
            case OpKind::Exp: {
                const Array& a = vals[n.inputs[0]];
                for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = std::exp(a.data[k]);
                break;
            }
            case OpKind::Log: {
                const Array& a = vals[n.inputs[0]];
                for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = std::log(a.data[k]);
                break;
            }
            case OpKind::Negate: {
                const Array& a = vals[n.inputs[0]];
                for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = -a.data[k];
                break;
            }
            case OpKind::Square: {
                const Array& a = vals[n.inputs[0]];
                for (std::size_t k = 0; k < out.size(); ++k)
                    out.data[k] = a.data[k] * a.data[k];
                break;
            }
            case OpKind::SumReduce: {
                const Array& a = vals[n.inputs[0]];
                double s = 0.0;
                for (double v : a.data) s += v;
                out.data[0] = s;
                break;
            }
            case OpKind::MeanReduce: {
                const Array& a = vals[n.inputs[0]];
                double s = 0.0;
                for (double v : a.data) s += v;
                out.data[0] = s / static_cast<double>(a.size());
                break;
            }
            case OpKind::LogSumExp: {
                const Array& a = vals[n.inputs[0]];
                // slices: for rank-1, one slice; rank-2 axis=1 reduces rows, axis=0 columns.
                std::size_t nslices = out.size();
                std::size_t len = a.size() / nslices;
                for (std::size_t sidx = 0; sidx < nslices; ++sidx) {
                    auto elem = [&](std::size_t t) -> double {
                        if (a.rank() == 1) return a.data[t];
                        return n.axis == 1 ? a.data[sidx * len + t] : a.data[t * nslices + sidx];
                    };
                    double mx = elem(0);
                    for (std::size_t t = 1; t < len; ++t) mx = std::max(mx, elem(t));
                    double s = 0.0;
                    for (std::size_t t = 0; t < len; ++t) s += std::exp(elem(t) - mx);
                    out.data[sidx] = mx + std::log(s);
                }
                break;
            }
            case OpKind::Softmax: {
                const Array& a = vals[n.inputs[0]];
                std::size_t nslices = (a.rank() == 1) ? 1 : (n.axis == 1 ? a.shape[0] : a.shape[1]);
                std::size_t len = a.size() / nslices;
                for (std::size_t sidx = 0; sidx < nslices; ++sidx) {
                    auto idx = [&](std::size_t t) -> std::size_t {
                        if (a.rank() == 1) return t;
                        return n.axis == 1 ? sidx * len + t : t * nslices + sidx;
                    };
                    double mx = a.data[idx(0)];
                    for (std::size_t t = 1; t < len; ++t) mx = std::max(mx, a.data[idx(t)]);
                    double s = 0.0;
                    for (std::size_t t = 0; t < len; ++t) s += std::exp(a.data[idx(t)] - mx);
                    for (std::size_t t = 0; t < len; ++t)
                        out.data[idx(t)] = std::exp(a.data[idx(t)] - mx) / s;
                }
                break;
            }
            case OpKind::GaussianLogDensity: {
                const Array& x = vals[n.inputs[0]];
                const Array& mu = vals[n.inputs[1]];
                const Array& ls = vals[n.inputs[2]];
                constexpr double half_log_2pi = 0.91893853320467274178;
                double s = 0.0;
                for (std::size_t k = 0; k < x.size(); ++k) {
                    double sd = std::exp(ls.data[k]);
                    double z = (x.data[k] - mu.data[k]) / sd;
                    s += -half_log_2pi - ls.data[k] - 0.5 * z * z;
                }
                out.data[0] = s;
                break;
            }
            case OpKind::BroadcastScalar: {
                const Array& a = vals[n.inputs[0]];
                std::fill(out.data.begin(), out.data.end(), a.data[0]);
                break;
            }
        }
        check_finite(out, static_cast<int>(i), n.op);
    }
}

void backward_pass(const ComputationGraph& g, const std::vector<Array>& vals, int objective,
                   std::vector<Array>& adj) {
    const auto& nodes = g.nodes();
    if (adj.size() != nodes.size()) adj.resize(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        ensure_shape(adj[i], nodes[i].shape);
        std::fill(adj[i].data.begin(), adj[i].data.end(), 0.0);
    }
    adj[static_cast<std::size_t>(objective)].data[0] = 1.0;

    for (int i = objective; i >= 0; --i) {
        const Node& n = nodes[static_cast<std::size_t>(i)];
        const Array& g_out = adj[static_cast<std::size_t>(i)];
        switch (n.op) {
            case OpKind::Leaf:
                break;
            case OpKind::Add: {
                Array& da = adj[n.inputs[0]];
                Array& db = adj[n.inputs[1]];
                for (std::size_t k = 0; k < g_out.size(); ++k) {
                    da.data[k] += g_out.data[k];
                    db.data[k] += g_out.data[k];
                }
                break;
            }
            case OpKind::Subtract: {
                Array& da = adj[n.inputs[0]];
                Array& db = adj[n.inputs[1]];
                for (std::size_t k = 0; k < g_out.size(); ++k) {
                    da.data[k] += g_out.data[k];
                    db.data[k] -= g_out.data[k];
                }
                break;
            }
            case OpKind::Multiply: {
                const Array& a = vals[n.inputs[0]];
                const Array& c = vals[n.inputs[1]];
                Array& da = adj[n.inputs[0]];
                Array& db = adj[n.inputs[1]];
                for (std::size_t k = 0; k < g_out.size(); ++k) {
                    da.data[k] += g_out.data[k] * c.data[k];
                    db.data[k] += g_out.data[k] * a.data[k];
                }
                break;
            }
            case OpKind::MatMul: {
                const Array& a = vals[n.inputs[0]];
                const Array& c = vals[n.inputs[1]];
                Array& da = adj[n.inputs[0]];
                Array& dc = adj[n.inputs[1]];
                std::size_t m = a.shape[0], kk = a.shape[1];
                if (c.rank() == 2) {
                    std::size_t p = c.shape[1];
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < kk; ++j) {
                            double s = 0.0;
                            for (std::size_t q = 0; q < p; ++q)
                                s += g_out.data[r * p + q] * c.data[j * p + q];
                            da.data[r * kk + j] += s;
                        }
                    for (std::size_t j = 0; j < kk; ++j)
                        for (std::size_t q = 0; q < p; ++q) {
                            double s = 0.0;
                            for (std::size_t r = 0; r < m; ++r)
                                s += a.data[r * kk + j] * g_out.data[r * p + q];
                            dc.data[j * p + q] += s;
                        }
                } else {
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < kk; ++j) {
                            da.data[r * kk + j] += g_out.data[r] * c.data[j];
                            dc.data[j] += a.data[r * kk + j] * g_out.data[r];
                        }
                }
                break;
            }
            case OpKind::Affine: {
                const Array& w = vals[n.inputs[0]];
                const Array& x = vals[n.inputs[1]];
                Array& dw = adj[n.inputs[0]];
                Array& dx = adj[n.inputs[1]];
                Array& db = adj[n.inputs[2]];
                std::size_t m = w.shape[0], kk = w.shape[1];
                for (std::size_t r = 0; r < m; ++r) {
                    double gr = g_out.data[r];
                    db.data[r] += gr;
                    for (std::size_t j = 0; j < kk; ++j) {
                        dw.data[r * kk + j] += gr * x.data[j];
                        dx.data[j] += gr * w.data[r * kk + j];
                    }
                }
                break;
            }
            case OpKind::Relu: {
                const Array& x = vals[n.inputs[0]];
                Array& dx = adj[n.inputs[0]];
                for (std::size_t k = 0; k < g_out.size(); ++k)
                    if (x.data[k] > 0.0) dx.data[k] += g_out.data[k];
                break;
            }
            case OpKind::Tanh: {
                const Array& y = vals[static_cast<std::size_t>(i)];
                Array& dx = adj[n.inputs[0]];
                for (std::size_t k = 0; k < g_out.size(); ++k)
                    dx.data[k] += g_out.data[k] * (1.0 - y.data[k] * y.data[k]);
                break;
            }
            case OpKind::Exp: {
                const Array& y = vals[static_cast<std::size_t>(i)];
                Array& dx = adj[n.inputs[0]];
                for (std::size_t k = 0; k < g_out.size(); ++k)
                    dx.data[k] += g_out.data[k] * y.data[k];
                break;
            }
            case OpKind::Log: {
                const Array& x = vals[n.inputs[0]];
                Array& dx = adj[n.inputs[0]];
                for (std::size_t k = 0; k < g_out.size(); ++k)
                    dx.data[k] += g_out.data[k] / x.data[k];
                break;
            }
            case OpKind::Negate: {
                Array& dx = adj[n.inputs[0]];
                for (std::size_t k = 0; k < g_out.size(); ++k) dx.data[k] -= g_out.data[k];
                break;
            }
            case OpKind::Square: {
                const Array& x = vals[n.inputs[0]];
                Array& dx = adj[n.inputs[0]];
                for (std::size_t k = 0; k < g_out.size(); ++k)
                    dx.data[k] += 2.0 * g_out.data[k] * x.data[k];
                break;
            }
            case OpKind::SumReduce: {
                Array& dx = adj[n.inputs[0]];
                for (double& v : dx.data) v += g_out.data[0];
                break;
            }
            case OpKind::MeanReduce: {
                Array& dx = adj[n.inputs[0]];
                double s = g_out.data[0] / static_cast<double>(dx.size());
                for (double& v : dx.data) v += s;
                break;
            }
            case OpKind::LogSumExp: {
                const Array& x = vals[n.inputs[0]];
                const Array& y = vals[static_cast<std::size_t>(i)];
                Array& dx = adj[n.inputs[0]];
                std::size_t nslices = y.size();
                std::size_t len = x.size() / nslices;
                for (std::size_t sidx = 0; sidx < nslices; ++sidx) {
                    auto idx = [&](std::size_t t) -> std::size_t {
                        if (x.rank() == 1) return t;
                        return n.axis == 1 ? sidx * len + t : t * nslices + sidx;
                    };
                    for (std::size_t t = 0; t < len; ++t)
                        dx.data[idx(t)] += g_out.data[sidx] * std::exp(x.data[idx(t)] - y.data[sidx]);
                }
                break;
            }
            case OpKind::Softmax: {
                const Array& y = vals[static_cast<std::size_t>(i)];
                Array& dx = adj[n.inputs[0]];
                std::size_t nslices = (y.rank() == 1) ? 1 : (n.axis == 1 ? y.shape[0] : y.shape[1]);
                std::size_t len = y.size() / nslices;
                for (std::size_t sidx = 0; sidx < nslices; ++sidx) {
                    auto idx = [&](std::size_t t) -> std::size_t {
                        if (y.rank() == 1) return t;
                        return n.axis == 1 ? sidx * len + t : t * nslices + sidx;
                    };
                    double inner = 0.0;
                    for (std::size_t t = 0; t < len; ++t)
                        inner += g_out.data[idx(t)] * y.data[idx(t)];
                    for (std::size_t t = 0; t < len; ++t)
                        dx.data[idx(t)] += y.data[idx(t)] * (g_out.data[idx(t)] - inner);
                }
                break;
            }
            case OpKind::GaussianLogDensity: {
                const Array& x = vals[n.inputs[0]];
                const Array& mu = vals[n.inputs[1]];
                const Array& ls = vals[n.inputs[2]];
                Array& dx = adj[n.inputs[0]];
                Array& dmu = adj[n.inputs[1]];
                Array& dls = adj[n.inputs[2]];
                double go = g_out.data[0];
                for (std::size_t k = 0; k < x.size(); ++k) {
                    double sd = std::exp(ls.data[k]);
                    double diff = x.data[k] - mu.data[k];
                    double inv_var = 1.0 / (sd * sd);
                    dx.data[k] += go * (-diff * inv_var);
                    dmu.data[k] += go * (diff * inv_var);
                    dls.data[k] += go * (-1.0 + diff * diff * inv_var);
                }
                break;
            }
            case OpKind::BroadcastScalar: {
                Array& ds = adj[n.inputs[0]];
                double s = 0.0;
                for (double v : g_out.data) s += v;
                ds.data[0] += s;
                break;
            }
        }
    }
}

}  // namespace

Array evaluate(const ComputationGraph& g, const Bindings& b) {
    if (g.output() < 0) throw std::runtime_error("graph eval: no output node designated");
    std::vector<Array> vals;
    forward_pass(g, b, vals);
    return vals[static_cast<std::size_t>(g.output())];
}

std::vector<Array> evaluate_nodes(const ComputationGraph& g, const Bindings& b,
                                  const std::vector<int>& ids) {
    std::vector<Array> vals;
    forward_pass(g, b, vals);
    std::vector<Array> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(vals.at(static_cast<std::size_t>(id)));
    return out;
}

GradMap gradient_of(const ComputationGraph& g, const Bindings& b, int objective,
                    const std::vector<std::string>& wrt, std::vector<Array>* forward_values,
                    ExecWorkspace* workspace) {
    if (objective < 0 || objective >= static_cast<int>(g.nodes().size()))
        throw std::runtime_error("gradient: objective node out of range");
    if (numel(g.node(objective).shape) != 1)
        throw std::runtime_error("gradient: objective node is not scalar (shape " +
                                 shape_str(g.node(objective).shape) + ")");
    for (const auto& name : wrt)
        if (!g.has_leaf(name))
            throw std::runtime_error("gradient: unknown slot '" + name + "'");

    ExecWorkspace local;
    ExecWorkspace& ws = workspace != nullptr ? *workspace : local;
    forward_pass(g, b, ws.vals);
    backward_pass(g, ws.vals, objective, ws.adj);

    GradMap out;
    for (const auto& name : wrt) {
        int id = g.leaves().at(name);
        out[name] = ws.adj[static_cast<std::size_t>(id)];
    }
    if (forward_values) *forward_values = ws.vals;
    return out;
}

GradMap gradient(const ComputationGraph& g, const Bindings& b,
                 const std::vector<std::string>& wrt) {
    if (g.output() < 0) throw std::runtime_error("gradient: no output node designated");
    return gradient_of(g, b, g.output(), wrt);
}

}  // namespace optima
