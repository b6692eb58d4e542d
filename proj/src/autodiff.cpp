#include "hskd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hskd {

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::AddRowVector: return "add_row_vector";
        case Op::DivColumn: return "div_column";
        case Op::MatMul: return "matmul";
        case Op::MatMulBT: return "matmul_bt";
        case Op::Relu: return "relu";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Scale: return "scale";
        case Op::Softmax: return "softmax";
        case Op::LogSoftmax: return "log_softmax";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::RowSum: return "row_sum";
        case Op::RowL2Norm: return "row_l2_norm";
    }
    return "unknown";
}

namespace {

[[noreturn]] void shape_mismatch(Op op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
}

[[noreturn]] void bad_rank(Op op, const Tensor& a) {
    throw ShapeError(std::string(op_name(op)) + ": unsupported shape " + shape_to_string(a.shape()));
}

Shape column_shape(const Tensor& a) {
    return a.rank() == 2 ? Shape{a.rows(), 1} : Shape{1};
}

void add_into(Tensor& dst, const Tensor& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var Graph::leaf(Tensor value, bool trainable) {
    Node n;
    n.op = Op::Leaf;
    n.owned = std::move(value);
    n.trainable = trainable;
    n.needs_grad = trainable;
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return Var{nodes_.size() - 1};
}

Var Graph::constant_ref(const Tensor& value) {
    Node n;
    n.op = Op::Leaf;
    n.external = &value;
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return Var{nodes_.size() - 1};
}

Var Graph::parameter(Parameter& p) {
    Node n;
    n.op = Op::Leaf;
    n.external = &p.value;
    n.param = &p;
    n.trainable = p.trainable;
    n.needs_grad = p.trainable;
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return Var{nodes_.size() - 1};
}

void Graph::check(Var v) const {
    if (v.id >= nodes_.size()) throw GraphError("variable does not belong to this graph");
}

Var Graph::unary(Op op, Var a) {
    check(a);
    Node n;
    n.op = op;
    n.lhs = a.id;
    n.arity = 1;
    n.needs_grad = nodes_[a.id].needs_grad;
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return Var{nodes_.size() - 1};
}

Var Graph::binary(Op op, Var a, Var b) {
    check(a);
    check(b);
    Node n;
    n.op = op;
    n.lhs = a.id;
    n.rhs = b.id;
    n.arity = 2;
    n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return Var{nodes_.size() - 1};
}

Var Graph::scale(Var a, double factor) {
    Var v = unary(Op::Scale, a);
    nodes_[v.id].factor = factor;
    return v;
}

void Graph::set_leaf_value(Var v, Tensor value) {
    check(v);
    Node& n = nodes_[v.id];
    if (n.op != Op::Leaf || n.external) throw GraphError("set_leaf_value needs an owned leaf");
    n.owned = std::move(value);
    invalidate();
}

void Graph::invalidate() {
    for (auto& n : nodes_) {
        n.fresh = false;
        n.has_grad = false;
    }
    evaluated_ = false;
}

const Tensor& Graph::value(Var v) const {
    check(v);
    if (!nodes_[v.id].fresh) throw GraphError("value requested before forward()");
    return node_value(nodes_[v.id]);
}

const Tensor& Graph::grad(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    if (!n.has_grad) throw GraphError("grad requested before backward()");
    return n.grad;
}

void Graph::evaluate(Node& n) {
    if (n.op == Op::Leaf) return;
    const Tensor& a = node_value(nodes_[n.lhs]);
    switch (n.op) {
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div: {
            const Tensor& b = node_value(nodes_[n.rhs]);
            if (a.shape() != b.shape()) shape_mismatch(n.op, a, b);
            Tensor out(a.shape());
            auto o = out.data();
            auto x = a.data();
            auto y = b.data();
            for (std::size_t i = 0; i < o.size(); ++i) {
                switch (n.op) {
                    case Op::Add: o[i] = x[i] + y[i]; break;
                    case Op::Sub: o[i] = x[i] - y[i]; break;
                    case Op::Mul: o[i] = x[i] * y[i]; break;
                    default: o[i] = x[i] / y[i]; break;
                }
            }
            n.owned = std::move(out);
            break;
        }
        case Op::AddRowVector: {
            const Tensor& b = node_value(nodes_[n.rhs]);
            if (a.rank() > 2 || a.rank() == 0 || b.size() != a.cols() || (b.rank() == 2 && b.rows() != 1)) {
                shape_mismatch(n.op, a, b);
            }
            Tensor out(a.shape());
            const std::size_t rows = a.rows(), cols = a.cols();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = a.at(i, j) + b[j];
            n.owned = std::move(out);
            break;
        }
        case Op::DivColumn: {
            const Tensor& c = node_value(nodes_[n.rhs]);
            if (a.rank() > 2 || a.rank() == 0 || c.size() != a.rows() || (c.rank() == 2 && c.cols() != 1)) {
                shape_mismatch(n.op, a, c);
            }
            Tensor out(a.shape());
            const std::size_t rows = a.rows(), cols = a.cols();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = a.at(i, j) / c[i];
            n.owned = std::move(out);
            break;
        }
        case Op::MatMul: {
            const Tensor& b = node_value(nodes_[n.rhs]);
            if (a.rank() == 0 || a.rank() > 2 || b.rank() != 2 || a.cols() != b.rows()) shape_mismatch(n.op, a, b);
            const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
            Tensor out(a.rank() == 1 ? Shape{cols} : Shape{rows, cols});
            for (std::size_t i = 0; i < rows; ++i) {
                auto o = out.row(i);
                for (std::size_t p = 0; p < inner; ++p) {
                    const double av = a.at(i, p);
                    auto br = b.row(p);
                    for (std::size_t j = 0; j < cols; ++j) o[j] += av * br[j];
                }
            }
            n.owned = std::move(out);
            break;
        }
        case Op::MatMulBT: {
            const Tensor& b = node_value(nodes_[n.rhs]);
            if (a.rank() == 0 || a.rank() > 2 || b.rank() != 2 || a.cols() != b.cols()) shape_mismatch(n.op, a, b);
            const std::size_t rows = a.rows(), inner = a.cols(), cols = b.rows();
            Tensor out(a.rank() == 1 ? Shape{cols} : Shape{rows, cols});
            for (std::size_t i = 0; i < rows; ++i) {
                auto ar = a.row(i);
                auto o = out.row(i);
                for (std::size_t j = 0; j < cols; ++j) {
                    auto br = b.row(j);
                    double acc = 0.0;
                    for (std::size_t p = 0; p < inner; ++p) acc += ar[p] * br[p];
                    o[j] = acc;
                }
            }
            n.owned = std::move(out);
            break;
        }
        case Op::Relu:
        case Op::Exp:
        case Op::Log:
        case Op::Sqrt:
        case Op::Scale: {
            Tensor out(a.shape());
            auto o = out.data();
            auto x = a.data();
            for (std::size_t i = 0; i < o.size(); ++i) {
                switch (n.op) {
                    case Op::Relu: o[i] = std::isnan(x[i]) || x[i] > 0.0 ? x[i] : 0.0; break;
                    case Op::Exp: o[i] = std::exp(x[i]); break;
                    case Op::Log: o[i] = std::log(x[i]); break;
                    case Op::Sqrt: o[i] = std::sqrt(x[i]); break;
                    default: o[i] = x[i] * n.factor; break;
                }
            }
            n.owned = std::move(out);
            break;
        }
        case Op::Softmax:
        case Op::LogSoftmax: {
            if (a.rank() == 0 || a.rank() > 2) bad_rank(n.op, a);
            Tensor out(a.shape());
            for (std::size_t i = 0; i < a.rows(); ++i) {
                auto x = a.row(i);
                auto o = out.row(i);
                const double peak = *std::max_element(x.begin(), x.end());
                double total = 0.0;
                for (std::size_t j = 0; j < x.size(); ++j) total += std::exp(x[j] - peak);
                if (n.op == Op::Softmax) {
                    for (std::size_t j = 0; j < x.size(); ++j) o[j] = std::exp(x[j] - peak) / total;
                } else {
                    const double log_total = std::log(total);
                    for (std::size_t j = 0; j < x.size(); ++j) o[j] = x[j] - peak - log_total;
                }
            }
            n.owned = std::move(out);
            break;
        }
        case Op::Sum:
        case Op::Mean: {
            double acc = 0.0;
            for (double v : a.data()) acc += v;
            if (n.op == Op::Mean) acc /= static_cast<double>(a.size());
            n.owned = Tensor::scalar(acc);
            break;
        }
        case Op::RowSum:
        case Op::RowL2Norm: {
            if (a.rank() == 0 || a.rank() > 2) bad_rank(n.op, a);
            Tensor out(column_shape(a));
            for (std::size_t i = 0; i < a.rows(); ++i) {
                double acc = 0.0;
                for (double v : a.row(i)) acc += n.op == Op::RowSum ? v : v * v;
                out[i] = n.op == Op::RowSum ? acc : std::sqrt(acc);
            }
            n.owned = std::move(out);
            break;
        }
        case Op::Leaf: break;
    }
}

const Tensor& Graph::forward(Var root) {
    check(root);
    std::vector<char> reachable(root.id + 1, 0);
    reachable[root.id] = 1;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        if (!reachable[i]) continue;
        const Node& n = nodes_[i];
        if (n.arity >= 1) reachable[n.lhs] = 1;
        if (n.arity == 2) reachable[n.rhs] = 1;
    }
    for (auto& n : nodes_) n.has_grad = false;
    for (std::size_t i = 0; i <= root.id; ++i) {
        if (!reachable[i]) continue;
        evaluate(nodes_[i]);
        nodes_[i].fresh = true;
    }
    evaluated_ = true;
    return node_value(nodes_[root.id]);
}

void Graph::propagate(const Node& n) {
    const Tensor& g = n.grad;
    const Tensor& out = node_value(n);
    Node& pa = nodes_[n.lhs];
    const Tensor& a = node_value(pa);
    Node* pb = n.arity == 2 ? &nodes_[n.rhs] : nullptr;
    const Tensor* b = pb ? &node_value(*pb) : nullptr;
    const bool ga_on = pa.needs_grad;
    const bool gb_on = pb && pb->needs_grad;

    switch (n.op) {
        case Op::Add:
            if (ga_on) add_into(pa.grad, g);
            if (gb_on) add_into(pb->grad, g);
            break;
        case Op::Sub:
            if (ga_on) add_into(pa.grad, g);
            if (gb_on) {
                auto d = pb->grad.data();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
            }
            break;
        case Op::Mul:
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (ga_on) pa.grad[i] += g[i] * (*b)[i];
                if (gb_on) pb->grad[i] += g[i] * a[i];
            }
            break;
        case Op::Div:
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double bv = (*b)[i];
                if (ga_on) pa.grad[i] += g[i] / bv;
                if (gb_on) pb->grad[i] -= g[i] * a[i] / (bv * bv);
            }
            break;
        case Op::AddRowVector:
            if (ga_on) add_into(pa.grad, g);
            if (gb_on) {
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) pb->grad[j] += g.at(i, j);
            }
            break;
        case Op::DivColumn:
            for (std::size_t i = 0; i < a.rows(); ++i) {
                const double c = (*b)[i];
                double acc = 0.0;
                for (std::size_t j = 0; j < a.cols(); ++j) {
                    if (ga_on) pa.grad.at(i, j) += g.at(i, j) / c;
                    acc += g.at(i, j) * a.at(i, j);
                }
                if (gb_on) pb->grad[i] -= acc / (c * c);
            }
            break;
        case Op::MatMul: {
            const std::size_t rows = a.rows(), inner = a.cols(), cols = b->cols();
            if (ga_on) {
                for (std::size_t i = 0; i < rows; ++i) {
                    auto gr = g.row(i);
                    for (std::size_t p = 0; p < inner; ++p) {
                        auto br = b->row(p);
                        double acc = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) acc += gr[j] * br[j];
                        pa.grad.at(i, p) += acc;
                    }
                }
            }
            if (gb_on) {
                for (std::size_t i = 0; i < rows; ++i) {
                    auto gr = g.row(i);
                    for (std::size_t p = 0; p < inner; ++p) {
                        const double av = a.at(i, p);
                        auto dst = pb->grad.row(p);
                        for (std::size_t j = 0; j < cols; ++j) dst[j] += av * gr[j];
                    }
                }
            }
            break;
        }
        case Op::MatMulBT: {
            const std::size_t rows = a.rows(), inner = a.cols(), cols = b->rows();
            for (std::size_t i = 0; i < rows; ++i) {
                auto gr = g.row(i);
                auto ar = a.row(i);
                for (std::size_t j = 0; j < cols; ++j) {
                    const double gv = gr[j];
                    if (gv == 0.0) continue;
                    auto br = b->row(j);
                    if (ga_on) {
                        auto dst = pa.grad.row(i);
                        for (std::size_t p = 0; p < inner; ++p) dst[p] += gv * br[p];
                    }
                    if (gb_on) {
                        auto dst = pb->grad.row(j);
                        for (std::size_t p = 0; p < inner; ++p) dst[p] += gv * ar[p];
                    }
                }
            }
            break;
        }
        case Op::Relu:
            for (std::size_t i = 0; i < g.size(); ++i)
                if (a[i] > 0.0) pa.grad[i] += g[i];
            break;
        case Op::Exp:
            for (std::size_t i = 0; i < g.size(); ++i) pa.grad[i] += g[i] * out[i];
            break;
        case Op::Log:
            for (std::size_t i = 0; i < g.size(); ++i) pa.grad[i] += g[i] / a[i];
            break;
        case Op::Sqrt:
            for (std::size_t i = 0; i < g.size(); ++i) pa.grad[i] += g[i] * 0.5 / out[i];
            break;
        case Op::Scale:
            for (std::size_t i = 0; i < g.size(); ++i) pa.grad[i] += g[i] * n.factor;
            break;
        case Op::Softmax:
            for (std::size_t i = 0; i < out.rows(); ++i) {
                auto y = out.row(i);
                auto gr = g.row(i);
                double dot = 0.0;
                for (std::size_t j = 0; j < y.size(); ++j) dot += gr[j] * y[j];
                auto dst = pa.grad.row(i);
                for (std::size_t j = 0; j < y.size(); ++j) dst[j] += y[j] * (gr[j] - dot);
            }
            break;
        case Op::LogSoftmax:
            for (std::size_t i = 0; i < out.rows(); ++i) {
                auto y = out.row(i);
                auto gr = g.row(i);
                double total = 0.0;
                for (double v : gr) total += v;
                auto dst = pa.grad.row(i);
                for (std::size_t j = 0; j < y.size(); ++j) dst[j] += gr[j] - std::exp(y[j]) * total;
            }
            break;
        case Op::Sum:
        case Op::Mean: {
            double gv = g[0];
            if (n.op == Op::Mean) gv /= static_cast<double>(a.size());
            for (auto& d : pa.grad.data()) d += gv;
            break;
        }
        case Op::RowSum:
            for (std::size_t i = 0; i < a.rows(); ++i)
                for (auto& d : pa.grad.row(i)) d += g[i];
            break;
        case Op::RowL2Norm:
            for (std::size_t i = 0; i < a.rows(); ++i) {
                const double norm = out[i];
                if (norm == 0.0) continue;  // subgradient 0 at the origin
                auto dst = pa.grad.row(i);
                auto x = a.row(i);
                for (std::size_t j = 0; j < x.size(); ++j) dst[j] += g[i] * x[j] / norm;
            }
            break;
        case Op::Leaf: break;
    }
}

void Graph::backward(Var loss) {
    check(loss);
    if (!nodes_[loss.id].fresh) throw GraphError("backward() called before forward()");
    const Tensor& lv = node_value(nodes_[loss.id]);
    if (lv.size() != 1 || lv.rank() > 1) {
        throw GraphError("backward() needs a scalar loss, got shape " + shape_to_string(lv.shape()));
    }

    std::vector<char> reachable(loss.id + 1, 0);
    reachable[loss.id] = 1;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        if (!reachable[i]) continue;
        const Node& n = nodes_[i];
        if (n.arity >= 1) reachable[n.lhs] = 1;
        if (n.arity == 2) reachable[n.rhs] = 1;
    }
    for (std::size_t i = 0; i <= loss.id; ++i) {
        if (!reachable[i]) continue;
        nodes_[i].grad = Tensor(node_value(nodes_[i]).shape(), 0.0);
        nodes_[i].has_grad = true;
    }
    nodes_[loss.id].grad.fill(1.0);

    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!reachable[i] || !n.needs_grad) continue;
        if (n.op == Op::Leaf) {
            if (n.param && n.param->trainable) {
                if (n.param->grad.shape() != n.param->value.shape() || n.param->grad.size() != n.param->value.size()) {
                    n.param->zero_grad();
                }
                add_into(n.param->grad, n.grad);
            }
            continue;
        }
        propagate(n);
    }
}

namespace {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

double scalar_of(const Tensor& t) {
    if (t.size() != 1 || t.rank() > 1) {
        throw GraphError("grad_check needs a scalar function, got shape " + shape_to_string(t.shape()));
    }
    return t[0];
}

}  // namespace

double grad_check(const ScalarFunction& f, const Tensor& point, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check step must be positive");
    Graph g;
    Var x = g.leaf(point, true);
    Var y = f(g, x);
    scalar_of(g.forward(y));
    g.backward(y);
    const Tensor analytic = g.grad(x);

    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double original = point[i];
        probe[i] = original + step;
        g.set_leaf_value(x, probe);
        const double up = scalar_of(g.forward(y));
        probe[i] = original - step;
        g.set_leaf_value(x, probe);
        const double down = scalar_of(g.forward(y));
        probe[i] = original;
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * step)));
    }
    return worst;
}

double grad_check_parameters(std::span<Parameter* const> params, const std::function<Var(Graph&)>& build,
                             double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check step must be positive");
    for (Parameter* p : params) p->zero_grad();
    {
        Graph g;
        Var loss = build(g);
        scalar_of(g.forward(loss));
        g.backward(loss);
    }
    auto evaluate = [&] {
        Graph g;
        Var loss = build(g);
        return scalar_of(g.forward(loss));
    };

    double worst = 0.0;
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double original = p->value[i];
            p->value[i] = original + step;
            const double up = evaluate();
            p->value[i] = original - step;
            const double down = evaluate();
            p->value[i] = original;
            worst = std::max(worst, relative_error(p->grad[i], (up - down) / (2.0 * step)));
        }
    }
    return worst;
}

}  // namespace hskd
