#include "chaoscope/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace chaoscope::ad {

int Tape::push(Node n) {
    n.grad.assign(n.val.size(), 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
        throw Error("tape: invalid node id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::node(int id) {
    return const_cast<Node&>(static_cast<const Tape*>(this)->node(id));
}

void Tape::check_same_dim(int a, int b, const char* what) const {
    if (node(a).val.size() != node(b).val.size())
        throw Error(std::string("tape: ") + what + ": dimension mismatch (" +
                    std::to_string(node(a).val.size()) + " vs " +
                    std::to_string(node(b).val.size()) + ")");
}

int Tape::input(Vec v) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(v);
    return push(std::move(n));
}

int Tape::constant(Vec v) { return input(std::move(v)); }

int Tape::add(int a, int b) {
    check_same_dim(a, b, "add");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.val = node(a).val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] += node(b).val[i];
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    check_same_dim(a, b, "sub");
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.val = node(a).val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] -= node(b).val[i];
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    check_same_dim(a, b, "mul");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.val = node(a).val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] *= node(b).val[i];
    return push(std::move(n));
}

int Tape::div(int a, int b) {
    check_same_dim(a, b, "div");
    Node n;
    n.op = Op::Div;
    n.a = a;
    n.b = b;
    n.val = node(a).val;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] /= node(b).val[i];
    return push(std::move(n));
}

int Tape::scale(int a, double c) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.c0 = c;
    n.val = node(a).val;
    for (auto& v : n.val) v *= c;
    return push(std::move(n));
}

int Tape::add_const(int a, double c) {
    Node n;
    n.op = Op::AddConst;
    n.a = a;
    n.c0 = c;
    n.val = node(a).val;
    for (auto& v : n.val) v += c;
    return push(std::move(n));
}

int Tape::matvec(int w, int x, int rows, int cols) {
    if (dim(w) != rows * cols)
        throw Error("tape: matvec: matrix node has " + std::to_string(dim(w)) +
                    " entries, expected " + std::to_string(rows * cols));
    if (dim(x) != cols)
        throw Error("tape: matvec: vector node has dim " + std::to_string(dim(x)) +
                    ", expected " + std::to_string(cols));
    Node n;
    n.op = Op::MatVec;
    n.a = w;
    n.b = x;
    n.i0 = rows;
    n.i1 = cols;
    n.val.assign(static_cast<std::size_t>(rows), 0.0);
    const Vec& wv = node(w).val;
    const Vec& xv = node(x).val;
    for (int r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += wv[static_cast<std::size_t>(r) * cols + c] * xv[static_cast<std::size_t>(c)];
        n.val[static_cast<std::size_t>(r)] = s;
    }
    return push(std::move(n));
}

int Tape::tanh_(int a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a;
    n.val = node(a).val;
    for (auto& v : n.val) v = std::tanh(v);
    return push(std::move(n));
}

int Tape::exp_(int a) {
    Node n;
    n.op = Op::Exp;
    n.a = a;
    n.val = node(a).val;
    for (auto& v : n.val) v = std::exp(v);
    return push(std::move(n));
}

int Tape::log_(int a) {
    Node n;
    n.op = Op::Log;
    n.a = a;
    n.val = node(a).val;
    for (auto& v : n.val) v = std::log(v);
    return push(std::move(n));
}

int Tape::square(int a) {
    Node n;
    n.op = Op::Square;
    n.a = a;
    n.val = node(a).val;
    for (auto& v : n.val) v = v * v;
    return push(std::move(n));
}

int Tape::abs_(int a) {
    Node n;
    n.op = Op::Abs;
    n.a = a;
    n.val = node(a).val;
    for (auto& v : n.val) v = std::fabs(v);
    return push(std::move(n));
}

int Tape::sin_(int a) {
    Node n;
    n.op = Op::Sin;
    n.a = a;
    n.val = node(a).val;
    for (auto& v : n.val) v = std::sin(v);
    return push(std::move(n));
}

int Tape::cos_(int a) {
    Node n;
    n.op = Op::Cos;
    n.a = a;
    n.val = node(a).val;
    for (auto& v : n.val) v = std::cos(v);
    return push(std::move(n));
}

int Tape::sum(int a) {
    Node n;
    n.op = Op::Sum;
    n.a = a;
    double s = 0.0;
    for (double v : node(a).val) s += v;
    n.val = {s};
    return push(std::move(n));
}

int Tape::mean(int a) {
    if (dim(a) == 0) throw Error("tape: mean of empty node");
    Node n;
    n.op = Op::Mean;
    n.a = a;
    double s = 0.0;
    for (double v : node(a).val) s += v;
    n.val = {s / static_cast<double>(dim(a))};
    return push(std::move(n));
}

int Tape::variance(int a) {
    if (dim(a) == 0) throw Error("tape: variance of empty node");
    Node n;
    n.op = Op::Variance;
    n.a = a;
    const Vec& x = node(a).val;
    const double inv_n = 1.0 / static_cast<double>(x.size());
    double mu = 0.0;
    for (double v : x) mu += v;
    mu *= inv_n;
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var *= inv_n;
    n.val = {var};
    n.c0 = mu;  // cached for backward
    return push(std::move(n));
}

int Tape::pick(int a, int index) {
    if (index < 0 || index >= dim(a))
        throw Error("tape: pick index " + std::to_string(index) + " out of range");
    Node n;
    n.op = Op::Pick;
    n.a = a;
    n.i0 = index;
    n.val = {node(a).val[static_cast<std::size_t>(index)]};
    return push(std::move(n));
}

int Tape::pack(const std::vector<int>& parts) {
    if (parts.empty()) throw Error("tape: pack of zero nodes");
    Node n;
    n.op = Op::Pack;
    n.parts = parts;
    for (int p : parts)
        for (double v : node(p).val) n.val.push_back(v);
    return push(std::move(n));
}

int Tape::slice(int a, int offset, int len) {
    if (offset < 0 || len < 0 || offset + len > dim(a))
        throw Error("tape: slice [" + std::to_string(offset) + ", " +
                    std::to_string(offset + len) + ") out of range for dim " +
                    std::to_string(dim(a)));
    Node n;
    n.op = Op::Slice;
    n.a = a;
    n.i0 = offset;
    n.i1 = len;
    n.val.assign(node(a).val.begin() + offset, node(a).val.begin() + offset + len);
    return push(std::move(n));
}

int Tape::clamp(int a, double lo, double hi) {
    Node n;
    n.op = Op::Clamp;
    n.a = a;
    n.c0 = lo;
    n.c1 = hi;
    n.val = node(a).val;
    for (auto& v : n.val) v = std::min(std::max(v, lo), hi);
    return push(std::move(n));
}

int Tape::stop_grad(int a) {
    Node n;
    n.op = Op::StopGrad;
    n.a = a;
    n.val = node(a).val;
    return push(std::move(n));
}

double Tape::scalar_value(int id) const {
    if (dim(id) != 1) throw Error("tape: node is not scalar");
    return node(id).val[0];
}

void Tape::backward(int loss) {
    if (dim(loss) != 1) throw Error("tape: backward requires a scalar loss node");
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    node(loss).grad[0] = 1.0;

    for (int id = loss; id >= 0; --id) {
        Node& n = node(id);
        bool any = false;
        for (double g : n.grad)
            if (g != 0.0) {
                any = true;
                break;
            }
        if (!any) continue;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                Vec& ga = node(n.a).grad;
                Vec& gb = node(n.b).grad;
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    ga[i] += n.grad[i];
                    gb[i] += n.grad[i];
                }
                break;
            }
            case Op::Sub: {
                Vec& ga = node(n.a).grad;
                Vec& gb = node(n.b).grad;
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    ga[i] += n.grad[i];
                    gb[i] -= n.grad[i];
                }
                break;
            }
            case Op::Mul: {
                Vec& ga = node(n.a).grad;
                Vec& gb = node(n.b).grad;
                const Vec& av = node(n.a).val;
                const Vec& bv = node(n.b).val;
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    ga[i] += n.grad[i] * bv[i];
                    gb[i] += n.grad[i] * av[i];
                }
                break;
            }
            case Op::Div: {
                Vec& ga = node(n.a).grad;
                Vec& gb = node(n.b).grad;
                const Vec& bv = node(n.b).val;
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    ga[i] += n.grad[i] / bv[i];
                    gb[i] -= n.grad[i] * n.val[i] / bv[i];
                }
                break;
            }
            case Op::Scale: {
                Vec& ga = node(n.a).grad;
                for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * n.c0;
                break;
            }
            case Op::AddConst: {
                Vec& ga = node(n.a).grad;
                for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
                break;
            }
            case Op::MatVec: {
                Vec& gw = node(n.a).grad;
                Vec& gx = node(n.b).grad;
                const Vec& wv = node(n.a).val;
                const Vec& xv = node(n.b).val;
                const int rows = n.i0, cols = n.i1;
                for (int r = 0; r < rows; ++r) {
                    const double g = n.grad[static_cast<std::size_t>(r)];
                    if (g == 0.0) continue;
                    for (int c = 0; c < cols; ++c) {
                        gw[static_cast<std::size_t>(r) * cols + c] += g * xv[static_cast<std::size_t>(c)];
                        gx[static_cast<std::size_t>(c)] += g * wv[static_cast<std::size_t>(r) * cols + c];
                    }
                }
                break;
            }
            case Op::Tanh: {
                Vec& ga = node(n.a).grad;
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    ga[i] += n.grad[i] * (1.0 - n.val[i] * n.val[i]);
                break;
            }
            case Op::Exp: {
                Vec& ga = node(n.a).grad;
                for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * n.val[i];
                break;
            }
            case Op::Log: {
                Vec& ga = node(n.a).grad;
                const Vec& av = node(n.a).val;
                for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] / av[i];
                break;
            }
            case Op::Square: {
                Vec& ga = node(n.a).grad;
                const Vec& av = node(n.a).val;
                for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * 2.0 * av[i];
                break;
            }
            case Op::Abs: {
                Vec& ga = node(n.a).grad;
                const Vec& av = node(n.a).val;
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
                    ga[i] += n.grad[i] * s;
                }
                break;
            }
            case Op::Sin: {
                Vec& ga = node(n.a).grad;
                const Vec& av = node(n.a).val;
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    ga[i] += n.grad[i] * std::cos(av[i]);
                break;
            }
            case Op::Cos: {
                Vec& ga = node(n.a).grad;
                const Vec& av = node(n.a).val;
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    ga[i] -= n.grad[i] * std::sin(av[i]);
                break;
            }
            case Op::Sum: {
                Vec& ga = node(n.a).grad;
                for (auto& g : ga) g += n.grad[0];
                break;
            }
            case Op::Mean: {
                Vec& ga = node(n.a).grad;
                const double inv_n = 1.0 / static_cast<double>(ga.size());
                for (auto& g : ga) g += n.grad[0] * inv_n;
                break;
            }
            case Op::Variance: {
                Vec& ga = node(n.a).grad;
                const Vec& av = node(n.a).val;
                const double inv_n = 1.0 / static_cast<double>(ga.size());
                for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] += n.grad[0] * 2.0 * (av[i] - n.c0) * inv_n;
                break;
            }
            case Op::Pick: {
                node(n.a).grad[static_cast<std::size_t>(n.i0)] += n.grad[0];
                break;
            }
            case Op::Pack: {
                std::size_t off = 0;
                for (int p : n.parts) {
                    Vec& gp = node(p).grad;
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += n.grad[off + i];
                    off += gp.size();
                }
                break;
            }
            case Op::Slice: {
                Vec& ga = node(n.a).grad;
                for (int i = 0; i < n.i1; ++i)
                    ga[static_cast<std::size_t>(n.i0 + i)] += n.grad[static_cast<std::size_t>(i)];
                break;
            }
            case Op::Clamp: {
                Vec& ga = node(n.a).grad;
                const Vec& av = node(n.a).val;
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    if (av[i] >= n.c0 && av[i] <= n.c1) ga[i] += n.grad[i];
                break;
            }
            case Op::StopGrad:
                break;
        }
    }
}

GradCheckResult grad_check(const LossBuilder& make_loss, const Vec& params, double h) {
    Tape tape;
    const int p = tape.input(params);
    const int loss = make_loss(tape, p);
    tape.backward(loss);
    const Vec g = tape.grad(p);

    auto eval = [&](const Vec& theta) {
        Tape t;
        const int pn = t.input(theta);
        return t.scalar_value(make_loss(t, pn));
    };

    GradCheckResult result;
    Vec theta = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double orig = theta[i];
        theta[i] = orig + h;
        const double up = eval(theta);
        theta[i] = orig - h;
        const double down = eval(theta);
        theta[i] = orig;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::fabs(g[i]), std::fabs(fd), 1e-6});
        const double rel = std::fabs(g[i] - fd) / denom;
        if (rel > result.max_rel_err) {
            result.max_rel_err = rel;
            result.index = i;
        }
    }
    return result;
}

}  // namespace chaoscope::ad
