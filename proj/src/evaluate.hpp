#pragma once

#include "lattice.hpp"
#include "theory.hpp"

#include <complex>
#include <map>

// Compiles lowered expressions into flat RPN programs and evaluates them over
// lattice blocks.  Real theories run on doubles; theories with a complex pair
// run on std::complex with the star component bound to the conjugate of the
// stored field.

namespace fieldlab {

// Per-field storage: one plane for a real field, (re, im) for a complex pair.
struct FieldBlock {
  GridPtr grid;
  const Theory* theory = nullptr;
  std::vector<Plane> planes;
  struct CompView {
    int re = -1, im = -1; // plane indices; im < 0 for real components
    bool conj = false;    // star components read the conjugate
  };
  std::vector<CompView> comp_view; // per component id
  bool any_complex = false;
};

FieldBlock make_block(const Theory& th, GridPtr grid);

// A complex-valued lattice field as a re/im plane pair; an empty `im` means
// identically-zero imaginary part.
struct CPlane {
  Plane re;
  Plane im;
  bool has_im() const { return !im.v.empty(); }
};
CPlane make_cplane(GridPtr g, bool with_im);

struct Program {
  enum class Op : uint8_t { push_const, push_input, add, mul, pow_n, exp_fn };
  struct Ins { Op op; int arg; };
  struct InputRef {
    enum Kind { coordinate, field_value, grad, grad2 } kind;
    int comp = -1, axis = -1, axis2 = -1;
  };
  std::vector<Ins> ops;
  std::vector<double> consts;
  std::vector<InputRef> inputs;
  int max_stack = 0;

  bool references_grad_axis(int axis) const;  // any grad/grad2 touching axis
  bool references(InputRef::Kind kind) const;
};

Program compile_expr(const Expr& e, const Theory& th);

// Cached central/second differences of the stored planes of a block.
struct DerivCache {
  const FieldBlock* block = nullptr;
  std::map<std::pair<int, int>, Plane> first;
  std::map<std::tuple<int, int, int>, Plane> second;
  const Plane& grad(int plane, int axis);
  const Plane& grad2(int plane, int a, int b);
};

// Evaluates the program at every site of slices [ta, tb); other slices of the
// output stay zero.  For complex runs, |Im| accumulates into *max_imag.
void eval_block(const Program& p, const FieldBlock& b, DerivCache& cache, int ta, int tb,
                Plane& out_re, Plane* out_im = nullptr, double* max_imag = nullptr);

// Single-point evaluation with explicit bindings (unbound symbols throw).
std::complex<double> eval_point(const Program& p,
                                const std::function<std::complex<double>(const Program::InputRef&)>& bind);

} // namespace fieldlab
