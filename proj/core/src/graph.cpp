#include "hdlab/graph.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

#include "broadcast_plan.hpp"

namespace hdlab::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EMat>;
using MutMap = Eigen::Map<EMat>;

ConstMap map_of(const Tensor& t, std::size_t r, std::size_t c) {
    return ConstMap(t.data().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MutMap map_of(Tensor& t, std::size_t r, std::size_t c) {
    return MutMap(t.data().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t shape_rows(const std::vector<std::size_t>& s) { return s.size() == 2 ? s[0] : 1; }

std::size_t shape_cols(const std::vector<std::size_t>& s) {
    if (s.size() == 2) return s[1];
    if (s.size() == 1) return s[0];
    return 1;
}

}  // namespace

std::size_t Graph::out_rows(ValueId id) const { return shape_rows(shape(id)); }
std::size_t Graph::out_cols(ValueId id) const { return shape_cols(shape(id)); }

void Graph::check_id(ValueId id, const char* ctx) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw std::invalid_argument(std::string(ctx) + ": value id out of range");
    }
}

ValueId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
}

ValueId Graph::leaf(std::vector<std::size_t> shape, std::string name) {
    Node n;
    n.op = Op::Leaf;
    n.shape = std::move(shape);
    n.leaf_index = static_cast<int>(leaf_names_.size());
    leaf_names_.push_back(std::move(name));
    return push(std::move(n));
}

ValueId Graph::constant(Tensor value) {
    return constant(std::make_shared<const Tensor>(std::move(value)));
}

ValueId Graph::constant(std::shared_ptr<const Tensor> value) {
    if (!value) throw std::invalid_argument("constant: null payload");
    Node n;
    n.op = Op::Const;
    n.shape = value->shape();
    n.payload = std::move(value);
    return push(std::move(n));
}

ValueId Graph::constant_scalar(double v) { return constant(Tensor::scalar(v)); }

ValueId Graph::binary(Op op, ValueId a, ValueId b, const char* name) {
    check_id(a, name);
    check_id(b, name);
    // Shape inference doubles as validation; reuse the kernel planner on
    // zero-filled stand-ins to keep one source of truth for the rules.
    const std::size_t ra = out_rows(a), ca = out_cols(a);
    const std::size_t rb = out_rows(b), cb = out_cols(b);
    const std::size_t orows = std::max(ra, rb), ocols = std::max(ca, cb);
    auto ok = [](std::size_t d, std::size_t o) { return d == o || d == 1; };
    if (!ok(ra, orows) || !ok(ca, ocols) || !ok(rb, orows) || !ok(cb, ocols)) {
        throw std::invalid_argument(std::string(name) + ": incompatible operand shapes");
    }
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    if (node(a).shape.size() <= 1 && node(b).shape.size() <= 1 && orows == 1) {
        n.shape = {ocols};
    } else {
        n.shape = {orows, ocols};
    }
    return push(std::move(n));
}

ValueId Graph::unary(Op op, ValueId a) {
    check_id(a, "unary");
    Node n;
    n.op = op;
    n.a = a;
    n.shape = node(a).shape;
    return push(std::move(n));
}

ValueId Graph::add(ValueId a, ValueId b) { return binary(Op::Add, a, b, "add"); }
ValueId Graph::sub(ValueId a, ValueId b) { return binary(Op::Sub, a, b, "sub"); }
ValueId Graph::mul(ValueId a, ValueId b) { return binary(Op::Mul, a, b, "mul"); }
ValueId Graph::div(ValueId a, ValueId b) { return binary(Op::Div, a, b, "div"); }
ValueId Graph::max(ValueId a, ValueId b) { return binary(Op::Max, a, b, "max"); }

ValueId Graph::matmul(ValueId a, ValueId b) {
    check_id(a, "matmul");
    check_id(b, "matmul");
    if (out_cols(a) != out_rows(b)) {
        throw std::invalid_argument("matmul: inner dimensions differ");
    }
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    n.shape = {out_rows(a), out_cols(b)};
    return push(std::move(n));
}

ValueId Graph::time_embed(ValueId t, int dim, double scale) {
    check_id(t, "time_embed");
    if (out_cols(t) != 1) {
        throw std::invalid_argument("time_embed: input must be a column of scalars");
    }
    if (dim < 2 || dim % 2 != 0) {
        throw std::invalid_argument("time_embed: dim must be even and >= 2");
    }
    Node n;
    n.op = Op::TimeEmbed;
    n.a = t;
    n.shape = {out_rows(t), static_cast<std::size_t>(dim)};
    n.embed_scale = scale;
    const int half = dim / 2;
    n.freqs.resize(static_cast<std::size_t>(half));
    for (int k = 0; k < half; ++k) {
        n.freqs[static_cast<std::size_t>(k)] =
            scale * std::pow(10000.0, -static_cast<double>(k) / half);
    }
    return push(std::move(n));
}

ValueId Graph::silu(ValueId a) { return unary(Op::Silu, a); }
ValueId Graph::relu(ValueId a) { return unary(Op::Relu, a); }
ValueId Graph::exp(ValueId a) { return unary(Op::Exp, a); }
ValueId Graph::sqrt(ValueId a) { return unary(Op::Sqrt, a); }

ValueId Graph::row_norm(ValueId a) {
    check_id(a, "row_norm");
    Node n;
    n.op = Op::RowNorm;
    n.a = a;
    n.shape = {out_rows(a), 1};
    return push(std::move(n));
}

ValueId Graph::sum(ValueId a) {
    check_id(a, "sum");
    Node n;
    n.op = Op::Sum;
    n.a = a;
    n.shape = {1, 1};
    return push(std::move(n));
}

ValueId Graph::mean(ValueId a) {
    check_id(a, "mean");
    Node n;
    n.op = Op::Mean;
    n.a = a;
    n.shape = {1, 1};
    return push(std::move(n));
}

ValueId Graph::stop_gradient(ValueId a) { return unary(Op::StopGrad, a); }

ValueId Graph::scale(ValueId a, double s) { return mul(a, constant_scalar(s)); }
ValueId Graph::add_scalar(ValueId a, double s) { return add(a, constant_scalar(s)); }
ValueId Graph::square(ValueId a) { return mul(a, a); }
ValueId Graph::neg(ValueId a) { return scale(a, -1.0); }

const Tensor& Evaluation::at(ValueId id) const {
    const Node& n = graph_->node(id);
    if (n.op == Op::Const) return *n.payload;
    return values_[static_cast<std::size_t>(id)];
}

namespace {

// Single forward kernel shared by replay; keeps evaluation bit-stable.
Tensor eval_node(const Graph& g, const Node& n, const Tensor& va, const Tensor& vb) {
    switch (n.op) {
        case Op::Add: return add(va, vb);
        case Op::Sub: return sub(va, vb);
        case Op::Mul: return mul(va, vb);
        case Op::Div: return div(va, vb);
        case Op::Max: return emax(va, vb);
        case Op::MatMul: return matmul(va, vb);
        case Op::Silu: {
            Tensor out = va;
            for (double& v : out.data()) v = v * sigmoid(v);
            return out;
        }
        case Op::Relu: {
            Tensor out = va;
            for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
            return out;
        }
        case Op::Exp: {
            Tensor out = va;
            for (double& v : out.data()) v = std::exp(v);
            return out;
        }
        case Op::Sqrt: {
            Tensor out = va;
            for (double& v : out.data()) v = std::sqrt(v);
            return out;
        }
        case Op::RowNorm: return row_norms(va);
        case Op::Sum: return Tensor::scalar(hdlab::sum(va));
        case Op::Mean: return Tensor::scalar(hdlab::mean(va));
        case Op::StopGrad: return va;
        case Op::TimeEmbed: {
            const std::size_t m = va.rows() * va.cols();
            const std::size_t half = n.freqs.size();
            Tensor out({m, 2 * half});
            for (std::size_t i = 0; i < m; ++i) {
                const double x = va[i];
                for (std::size_t k = 0; k < half; ++k) {
                    out(i, k) = std::sin(x * n.freqs[k]);
                    out(i, half + k) = std::cos(x * n.freqs[k]);
                }
            }
            return out;
        }
        default: throw std::logic_error("eval_node: unexpected op");
    }
}

const Tensor& value_ref(const Graph& g, const std::vector<Tensor>& values, ValueId id) {
    const Node& n = g.node(id);
    if (n.op == Op::Const) return *n.payload;
    return values[static_cast<std::size_t>(id)];
}

}  // namespace

Evaluation forward(const Graph& g, std::span<const Tensor> leaves) {
    if (leaves.size() != g.leaf_count()) {
        throw std::invalid_argument("forward: expected " + std::to_string(g.leaf_count()) +
                                    " leaves, got " + std::to_string(leaves.size()));
    }
    std::vector<Tensor> values(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Node& n = g.node(static_cast<ValueId>(i));
        switch (n.op) {
            case Op::Leaf: {
                const Tensor& bound = leaves[static_cast<std::size_t>(n.leaf_index)];
                if (bound.numel() == 0) {
                    throw std::invalid_argument("forward: unbound leaf '" +
                                                g.leaf_name(n.leaf_index) + "'");
                }
                if (bound.rows() != shape_rows(n.shape) || bound.cols() != shape_cols(n.shape)) {
                    throw std::invalid_argument("forward: leaf '" + g.leaf_name(n.leaf_index) +
                                                "' shape mismatch");
                }
                values[i] = bound;
                break;
            }
            case Op::Const: break;
            default: {
                const Tensor& va = value_ref(g, values, n.a);
                static const Tensor kEmpty;
                const Tensor& vb = n.b >= 0 ? value_ref(g, values, n.b) : kEmpty;
                values[i] = eval_node(g, n, va, vb);
            }
        }
    }
    return Evaluation(g, std::move(values));
}

namespace {

Tensor& grad_buf(std::vector<Tensor>& adj, const Graph& g, ValueId id) {
    Tensor& t = adj[static_cast<std::size_t>(id)];
    if (t.numel() == 0) t = Tensor(g.shape(id));
    return t;
}

bool reaches_leaf(const Graph& g, std::vector<char>& memo, ValueId id) {
    char& m = memo[static_cast<std::size_t>(id)];
    if (m) return m == 1;
    const Node& n = g.node(id);
    bool r = false;
    if (n.op == Op::Leaf) {
        r = true;
    } else if (n.op != Op::Const && n.op != Op::StopGrad) {
        if (n.a >= 0) r = reaches_leaf(g, memo, n.a);
        if (!r && n.b >= 0) r = reaches_leaf(g, memo, n.b);
    }
    m = r ? 1 : 2;
    return r;
}

// d(out)/d(input) element factors for the elementwise binary ops.
struct BinaryGrads {
    double da, db;
};

BinaryGrads binary_grads(Op op, double x, double y) {
    switch (op) {
        case Op::Add: return {1.0, 1.0};
        case Op::Sub: return {1.0, -1.0};
        case Op::Mul: return {y, x};
        case Op::Div: return {1.0 / y, -x / (y * y)};
        case Op::Max: return x >= y ? BinaryGrads{1.0, 0.0} : BinaryGrads{0.0, 1.0};
        default: throw std::logic_error("binary_grads: unexpected op");
    }
}

}  // namespace

std::vector<Tensor> backward(const Graph& g, const Evaluation& eval, ValueId output,
                             const Tensor& seed) {
    if (&eval.graph() != &g) {
        throw std::invalid_argument("backward: evaluation belongs to a different record");
    }
    const Tensor& out_value = eval.at(output);
    if (seed.rows() != out_value.rows() || seed.cols() != out_value.cols()) {
        throw std::invalid_argument("backward: seed shape " + seed.shape_str() +
                                    " does not match output shape " + out_value.shape_str());
    }

    std::vector<char> memo(g.size(), 0);
    std::vector<Tensor> adj(g.size());
    adj[static_cast<std::size_t>(output)] = seed;

    for (ValueId id = output; id >= 0; --id) {
        Tensor& gout = adj[static_cast<std::size_t>(id)];
        if (gout.numel() == 0) continue;
        const Node& n = g.node(id);
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
            case Op::StopGrad: break;
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Max: {
                const Tensor& va = eval.at(n.a);
                const Tensor& vb = eval.at(n.b);
                detail::BroadcastPlan p = detail::plan_broadcast(va, vb, "backward");
                const bool need_a = reaches_leaf(g, memo, n.a);
                const bool need_b = reaches_leaf(g, memo, n.b);
                if (!need_a && !need_b) break;
                double* ga = need_a ? grad_buf(adj, g, n.a).data().data() : nullptr;
                double* gb = need_b ? grad_buf(adj, g, n.b).data().data() : nullptr;
                const double* pa = va.data().data();
                const double* pb = vb.data().data();
                const double* po = gout.data().data();
                for (std::size_t i = 0; i < p.out_rows; ++i) {
                    for (std::size_t j = 0; j < p.out_cols; ++j) {
                        const std::size_t ia = p.a_index(i, j);
                        const std::size_t ib = p.b_index(i, j);
                        const BinaryGrads bg = binary_grads(n.op, pa[ia], pb[ib]);
                        const double go = po[i * p.out_cols + j];
                        if (ga) ga[ia] += bg.da * go;
                        if (gb) gb[ib] += bg.db * go;
                    }
                }
                break;
            }
            case Op::MatMul: {
                const Tensor& va = eval.at(n.a);
                const Tensor& vb = eval.at(n.b);
                const std::size_t m = va.rows(), k = va.cols(), c = vb.cols();
                auto mg = map_of(gout, m, c);
                if (reaches_leaf(g, memo, n.a)) {
                    Tensor& ga = grad_buf(adj, g, n.a);
                    map_of(ga, m, k).noalias() += mg * map_of(vb, k, c).transpose();
                }
                if (reaches_leaf(g, memo, n.b)) {
                    Tensor& gb = grad_buf(adj, g, n.b);
                    map_of(gb, k, c).noalias() += map_of(va, m, k).transpose() * mg;
                }
                break;
            }
            case Op::Silu: {
                if (!reaches_leaf(g, memo, n.a)) break;
                const Tensor& va = eval.at(n.a);
                Tensor& ga = grad_buf(adj, g, n.a);
                for (std::size_t i = 0; i < va.numel(); ++i) {
                    const double s = sigmoid(va[i]);
                    ga[i] += gout[i] * s * (1.0 + va[i] * (1.0 - s));
                }
                break;
            }
            case Op::Relu: {
                if (!reaches_leaf(g, memo, n.a)) break;
                const Tensor& va = eval.at(n.a);
                Tensor& ga = grad_buf(adj, g, n.a);
                for (std::size_t i = 0; i < va.numel(); ++i) {
                    if (va[i] > 0.0) ga[i] += gout[i];
                }
                break;
            }
            case Op::Exp: {
                if (!reaches_leaf(g, memo, n.a)) break;
                const Tensor& vo = eval.at(id);
                Tensor& ga = grad_buf(adj, g, n.a);
                for (std::size_t i = 0; i < vo.numel(); ++i) ga[i] += gout[i] * vo[i];
                break;
            }
            case Op::Sqrt: {
                if (!reaches_leaf(g, memo, n.a)) break;
                const Tensor& vo = eval.at(id);
                Tensor& ga = grad_buf(adj, g, n.a);
                for (std::size_t i = 0; i < vo.numel(); ++i) ga[i] += gout[i] * 0.5 / vo[i];
                break;
            }
            case Op::RowNorm: {
                if (!reaches_leaf(g, memo, n.a)) break;
                const Tensor& va = eval.at(n.a);
                const Tensor& vo = eval.at(id);
                Tensor& ga = grad_buf(adj, g, n.a);
                for (std::size_t i = 0; i < va.rows(); ++i) {
                    const double nrm = vo[i];
                    if (nrm == 0.0) continue;  // subgradient 0 at the origin
                    const double go = gout[i];
                    for (std::size_t j = 0; j < va.cols(); ++j) {
                        ga(i, j) += go * va(i, j) / nrm;
                    }
                }
                break;
            }
            case Op::Sum: {
                if (!reaches_leaf(g, memo, n.a)) break;
                Tensor& ga = grad_buf(adj, g, n.a);
                const double go = gout.value();
                for (double& v : ga.data()) v += go;
                break;
            }
            case Op::Mean: {
                if (!reaches_leaf(g, memo, n.a)) break;
                Tensor& ga = grad_buf(adj, g, n.a);
                const double go = gout.value() / static_cast<double>(ga.numel());
                for (double& v : ga.data()) v += go;
                break;
            }
            case Op::TimeEmbed: {
                if (!reaches_leaf(g, memo, n.a)) break;
                const Tensor& va = eval.at(n.a);
                Tensor& ga = grad_buf(adj, g, n.a);
                const std::size_t half = n.freqs.size();
                for (std::size_t i = 0; i < va.numel(); ++i) {
                    const double x = va[i];
                    double acc = 0.0;
                    for (std::size_t kf = 0; kf < half; ++kf) {
                        const double f = n.freqs[kf];
                        acc += gout(i, kf) * f * std::cos(x * f);
                        acc -= gout(i, half + kf) * f * std::sin(x * f);
                    }
                    ga[i] += acc;
                }
                break;
            }
        }
        // The adjoint of this node is no longer needed; release the memory.
        if (n.op != Op::Leaf) gout = Tensor();
    }

    std::vector<Tensor> leaf_grads(g.leaf_count());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Node& n = g.node(static_cast<ValueId>(i));
        if (n.op != Op::Leaf) continue;
        Tensor& a = adj[i];
        leaf_grads[static_cast<std::size_t>(n.leaf_index)] =
            a.numel() ? std::move(a) : Tensor(n.shape);
    }
    return leaf_grads;
}

JvpResult jvp(const Graph& g, std::span<const Tensor> leaves, std::span<const Tensor> tangents,
              ValueId output) {
    if (leaves.size() != g.leaf_count() || tangents.size() != g.leaf_count()) {
        throw std::invalid_argument("jvp: leaves and tangents must cover every leaf");
    }
    const auto upto = static_cast<std::size_t>(output);
    if (upto >= g.size()) throw std::invalid_argument("jvp: output id out of range");

    // Dual-number evaluation: (value, tangent) per node, one sweep. An empty
    // tangent tensor stands for an exact zero and short-circuits work.
    std::vector<Tensor> values(upto + 1);
    std::vector<Tensor> tans(upto + 1);
    static const Tensor kEmpty;

    auto val = [&](ValueId id) -> const Tensor& { return value_ref(g, values, id); };
    auto tan = [&](ValueId id) -> const Tensor& {
        const Node& n = g.node(id);
        if (n.op == Op::Const) return kEmpty;
        return tans[static_cast<std::size_t>(id)];
    };

    for (std::size_t i = 0; i <= upto; ++i) {
        const Node& n = g.node(static_cast<ValueId>(i));
        switch (n.op) {
            case Op::Leaf: {
                const Tensor& bound = leaves[static_cast<std::size_t>(n.leaf_index)];
                if (bound.numel() == 0) {
                    throw std::invalid_argument("jvp: unbound leaf '" + g.leaf_name(n.leaf_index) +
                                                "'");
                }
                values[i] = bound;
                const Tensor& t = tangents[static_cast<std::size_t>(n.leaf_index)];
                if (t.numel()) {
                    if (t.rows() != bound.rows() || t.cols() != bound.cols()) {
                        throw std::invalid_argument("jvp: tangent shape mismatch for leaf '" +
                                                    g.leaf_name(n.leaf_index) + "'");
                    }
                    tans[i] = t;
                }
                break;
            }
            case Op::Const: break;
            case Op::StopGrad: values[i] = val(n.a); break;
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Max: {
                const Tensor& va = val(n.a);
                const Tensor& vb = val(n.b);
                values[i] = eval_node(g, n, va, vb);
                const Tensor& ta = tan(n.a);
                const Tensor& tb = tan(n.b);
                if (ta.numel() == 0 && tb.numel() == 0) break;
                detail::BroadcastPlan p = detail::plan_broadcast(va, vb, "jvp");
                Tensor t(p.out_shape);
                const double* pa = va.data().data();
                const double* pb = vb.data().data();
                const double* qa = ta.numel() ? ta.data().data() : nullptr;
                const double* qb = tb.numel() ? tb.data().data() : nullptr;
                for (std::size_t r = 0; r < p.out_rows; ++r) {
                    for (std::size_t c = 0; c < p.out_cols; ++c) {
                        const std::size_t ia = p.a_index(r, c);
                        const std::size_t ib = p.b_index(r, c);
                        const BinaryGrads bg = binary_grads(n.op, pa[ia], pb[ib]);
                        double acc = 0.0;
                        if (qa) acc += bg.da * qa[ia];
                        if (qb) acc += bg.db * qb[ib];
                        t[r * p.out_cols + c] = acc;
                    }
                }
                tans[i] = std::move(t);
                break;
            }
            case Op::MatMul: {
                const Tensor& va = val(n.a);
                const Tensor& vb = val(n.b);
                values[i] = matmul(va, vb);
                const Tensor& ta = tan(n.a);
                const Tensor& tb = tan(n.b);
                if (ta.numel() == 0 && tb.numel() == 0) break;
                Tensor t({va.rows(), vb.cols()});
                auto mt = map_of(t, va.rows(), vb.cols());
                if (ta.numel()) {
                    mt.noalias() +=
                        map_of(ta, va.rows(), va.cols()) * map_of(vb, vb.rows(), vb.cols());
                }
                if (tb.numel()) {
                    mt.noalias() +=
                        map_of(va, va.rows(), va.cols()) * map_of(tb, vb.rows(), vb.cols());
                }
                tans[i] = std::move(t);
                break;
            }
            case Op::Silu: {
                const Tensor& va = val(n.a);
                values[i] = eval_node(g, n, va, kEmpty);
                const Tensor& ta = tan(n.a);
                if (ta.numel() == 0) break;
                Tensor t(va.shape());
                for (std::size_t e = 0; e < va.numel(); ++e) {
                    const double s = sigmoid(va[e]);
                    t[e] = ta[e] * s * (1.0 + va[e] * (1.0 - s));
                }
                tans[i] = std::move(t);
                break;
            }
            case Op::Relu: {
                const Tensor& va = val(n.a);
                values[i] = eval_node(g, n, va, kEmpty);
                const Tensor& ta = tan(n.a);
                if (ta.numel() == 0) break;
                Tensor t(va.shape());
                for (std::size_t e = 0; e < va.numel(); ++e) t[e] = va[e] > 0.0 ? ta[e] : 0.0;
                tans[i] = std::move(t);
                break;
            }
            case Op::Exp: {
                const Tensor& va = val(n.a);
                values[i] = eval_node(g, n, va, kEmpty);
                const Tensor& ta = tan(n.a);
                if (ta.numel() == 0) break;
                const Tensor& vo = values[i];
                Tensor t(va.shape());
                for (std::size_t e = 0; e < va.numel(); ++e) t[e] = ta[e] * vo[e];
                tans[i] = std::move(t);
                break;
            }
            case Op::Sqrt: {
                const Tensor& va = val(n.a);
                values[i] = eval_node(g, n, va, kEmpty);
                const Tensor& ta = tan(n.a);
                if (ta.numel() == 0) break;
                const Tensor& vo = values[i];
                Tensor t(va.shape());
                for (std::size_t e = 0; e < va.numel(); ++e) t[e] = ta[e] * 0.5 / vo[e];
                tans[i] = std::move(t);
                break;
            }
            case Op::RowNorm: {
                const Tensor& va = val(n.a);
                values[i] = row_norms(va);
                const Tensor& ta = tan(n.a);
                if (ta.numel() == 0) break;
                const Tensor& vo = values[i];
                Tensor t({va.rows(), 1});
                for (std::size_t r = 0; r < va.rows(); ++r) {
                    if (vo[r] == 0.0) continue;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < va.cols(); ++c) acc += va(r, c) * ta(r, c);
                    t[r] = acc / vo[r];
                }
                tans[i] = std::move(t);
                break;
            }
            case Op::Sum: {
                const Tensor& va = val(n.a);
                values[i] = Tensor::scalar(hdlab::sum(va));
                const Tensor& ta = tan(n.a);
                if (ta.numel()) tans[i] = Tensor::scalar(hdlab::sum(ta));
                break;
            }
            case Op::Mean: {
                const Tensor& va = val(n.a);
                values[i] = Tensor::scalar(hdlab::mean(va));
                const Tensor& ta = tan(n.a);
                if (ta.numel()) tans[i] = Tensor::scalar(hdlab::mean(ta));
                break;
            }
            case Op::TimeEmbed: {
                const Tensor& va = val(n.a);
                values[i] = eval_node(g, n, va, kEmpty);
                const Tensor& ta = tan(n.a);
                if (ta.numel() == 0) break;
                const std::size_t half = n.freqs.size();
                Tensor t(values[i].shape());
                for (std::size_t r = 0; r < va.numel(); ++r) {
                    const double x = va[r];
                    for (std::size_t kf = 0; kf < half; ++kf) {
                        const double f = n.freqs[kf];
                        t(r, kf) = ta[r] * f * std::cos(x * f);
                        t(r, half + kf) = -ta[r] * f * std::sin(x * f);
                    }
                }
                tans[i] = std::move(t);
                break;
            }
        }
    }

    JvpResult res;
    res.value = val(output);
    const Tensor& t = tan(output);
    res.tangent = t.numel() ? t : Tensor(g.shape(output));
    return res;
}

void set_leaf(std::vector<Tensor>& bindings, const Graph& g, ValueId leaf_id, Tensor value) {
    const Node& n = g.node(leaf_id);
    if (n.op != Op::Leaf) throw std::invalid_argument("set_leaf: id is not a leaf");
    bindings[static_cast<std::size_t>(n.leaf_index)] = std::move(value);
}

}  // namespace hdlab::ad
