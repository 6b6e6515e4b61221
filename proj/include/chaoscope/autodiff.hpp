// autodiff.hpp — reverse-mode automatic differentiation on an explicit tape.
//
// Nodes hold small dense vectors (a scalar is a vector of length 1). The tape
// is append-only, so operand indices always point backwards and one reverse
// sweep visits every node exactly once. This is sized for the networks and
// rollouts in this project, not for large tensors.
//
// Gradients are exact for the recorded computation. Non-smooth primitives
// (abs, clamp) propagate the one-sided derivative at their kink; grad_check
// reports a large error there, which is the documented behaviour.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "chaoscope/errors.hpp"
#include "chaoscope/linalg.hpp"

namespace chaoscope::ad {

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale,     // c * a
    AddConst,  // a + c
    MatVec,    // (i0 x i1) row-major matrix times vector
    Tanh,
    Exp,
    Log,
    Square,
    Abs,
    Sin,
    Cos,
    Sum,
    Mean,
    Variance,  // population variance (1/n)
    Pick,      // scalar a[i0]
    Pack,      // concatenation of several nodes
    Slice,     // a[i0 .. i0+i1)
    Clamp,     // pass-through gradient on [lo, hi], zero outside
    StopGrad,
};

class Tape {
  public:
    // Leaves. `input` and `constant` behave identically in backward; the two
    // names mark intent (differentiate vs. hold fixed) at call sites.
    int input(Vec v);
    int constant(Vec v);
    int scalar(double c) { return constant(Vec{c}); }

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);
    int scale(int a, double c);
    int add_const(int a, double c);
    int matvec(int w, int x, int rows, int cols);
    int tanh_(int a);
    int exp_(int a);
    int log_(int a);
    int square(int a);
    int abs_(int a);
    int sin_(int a);
    int cos_(int a);
    int sum(int a);
    int mean(int a);
    int variance(int a);
    int pick(int a, int index);
    int pack(const std::vector<int>& parts);
    int slice(int a, int offset, int len);
    int clamp(int a, double lo, double hi);
    int stop_grad(int a);

    int neg(int a) { return scale(a, -1.0); }
    int dot(int a, int b) { return sum(mul(a, b)); }

    int dim(int id) const { return static_cast<int>(node(id).val.size()); }
    const Vec& value(int id) const { return node(id).val; }
    double scalar_value(int id) const;
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Grads of all nodes are reset first,
    // so repeated calls on one tape are independent.
    void backward(int loss);
    const Vec& grad(int id) const { return node(id).grad; }

  private:
    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        int i0 = 0;
        int i1 = 0;
        double c0 = 0.0;
        double c1 = 0.0;
        std::vector<int> parts;
        Vec val;
        Vec grad;
    };

    int push(Node n);
    const Node& node(int id) const;
    Node& node(int id);
    void check_same_dim(int a, int b, const char* what) const;

    std::vector<Node> nodes_;
};

using Gradient = Vec;

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t index = 0;
};

// Builds the loss from a fresh tape and a leaf holding `params`; returns the
// scalar loss node. Used by grad_check and the trainer's diagnostics.
using LossBuilder = std::function<int(Tape&, int params_node)>;

// Compares reverse-mode gradients against central finite differences with
// step h, coordinate by coordinate. Relative error uses the floor
// max(|ad|, |fd|, 1e-6) so near-zero coordinates are judged absolutely.
GradCheckResult grad_check(const LossBuilder& make_loss, const Vec& params, double h);

}  // namespace chaoscope::ad
