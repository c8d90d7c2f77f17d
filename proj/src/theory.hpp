#pragma once

#include "expr.hpp"

#include <functional>

// A Theory bundles a parsed Lagrangian density with its variational
// derivatives.  The Euler-Lagrange expression per component is assembled with
// the total spacetime derivative, so it references second-derivative symbols.

namespace fieldlab {

struct Theory {
  int dim = 0;
  std::vector<int> metric_sign;             // diag(+1,-1,...,-1)
  SymbolTable symbols;
  Expr surface;                             // printable parse result
  Expr lagrangian;                          // lowered
  bool spacetime_independent = false;

  std::vector<Expr> dl_dfield;              // per component: dL/dphi_a
  std::vector<std::vector<Expr>> dl_dgrad;  // [comp][mu]: dL/d(d_mu phi_a), upper mu
  std::vector<Expr> euler_lagrange;         // per component, contains partial2

  double param_value(const std::string& name) const;
  int conjugate_comp(int comp) const;       // itself for real components
  int n_comps() const { return (int)symbols.comps.size(); }
};

// Throws ParseError on grammar/index/parameter problems.
Theory make_theory(const std::string& lagrangian_text, int dim,
                   const std::vector<std::pair<std::string, double>>& params);

// --- symbolic derivatives on lowered trees -------------------------------

Expr diff_field(const Expr& e, int comp);
Expr diff_grad(const Expr& e, int comp, int axis);
Expr diff_grad2(const Expr& e, int comp, int a, int b);
Expr diff_coord_explicit(const Expr& e, int axis);

// d/dx^mu along solutions: explicit part plus chain rule through fields and
// gradients.  Input must not contain second-derivative symbols.
Expr total_derivative(const Expr& e, int axis, const Theory& th);

// dL/d(d_mu phi_comp) with the requested variance of mu.
Expr momentum(const Theory& th, int comp, int axis, bool up);

// Substitutes exprs for field/gradient symbols (ids < 0 in the maps are
// ignored); used to zero out or rename symbols.
using LeafRewrite = std::function<Expr(const ExprNode&)>; // returns nullptr to keep
Expr rewrite_leaves(const Expr& e, const LeafRewrite& f);

bool contains_grad2(const Expr& e);
bool contains_any_grad(const Expr& e);

} // namespace fieldlab
