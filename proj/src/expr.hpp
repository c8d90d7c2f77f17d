#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Expression trees for Lagrangian densities.
//
// Two levels share one node type:
//  * surface form: what the parser produces; partial derivatives may carry
//    named dummy indices (d(phi,mu)) and either variance, and products record
//    implicit contractions через repeated index names.
//  * lowered form: all contractions expanded against the diag(+1,-1,...,-1)
//    metric, every derivative a concrete covariant component.  Calculus and
//    numeric evaluation only ever see lowered trees.

namespace fieldlab {

enum class NodeKind {
  number,  // literal constant
  param,   // named parameter, value bound in the theory table
  coord,   // spacetime coordinate x^axis
  field,   // field component (component id)
  partial, // first derivative of a field component
  partial2,// second derivative (lowered trees only)
  sum,
  prod,
  pow_int, // integer exponent
  exp_fn,
};

struct ExprNode;
using Expr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  NodeKind kind;
  double value = 0.0;        // number
  int sym = -1;              // param id or component id
  int axis = -1;             // coord / partial axis (concrete), -1 if named
  int axis2 = -1;            // second axis of partial2 (axis <= axis2)
  bool contravariant = false;// surface partial variance
  std::string index_name;    // surface partial named index ("" if concrete)
  long exponent = 1;         // pow_int
  std::vector<Expr> kids;
};

// --- constructors (normalizing) ---------------------------------------

Expr num(double v);
Expr param(int id);
Expr coord(int axis);
Expr field(int comp);
Expr partial(int comp, int axis);                  // lowered: covariant d_axis
Expr partial_named(int comp, std::string index, bool contravariant);
Expr partial_concrete(int comp, int axis, bool contravariant); // surface
Expr partial2(int comp, int a, int b);             // lowered second derivative
Expr sum(std::vector<Expr> kids);
Expr prod(std::vector<Expr> kids);
Expr pow_int(Expr base, long n);
Expr exp_fn(Expr arg);
Expr neg(Expr e);

bool is_zero(const Expr& e);
bool is_one(const Expr& e);
bool structurally_equal(const Expr& a, const Expr& b);
bool contains(const Expr& e, NodeKind kind);

// --- symbol tables -----------------------------------------------------

struct SymbolTable {
  struct Param { std::string name; double value; };
  struct Component { std::string name; int field_index; bool star; };
  struct Field { std::string name; bool complex_pair; int comp_plain; int comp_star; };

  std::vector<Param> params;
  std::vector<Component> comps;
  std::vector<Field> fields;

  int find_param(const std::string& n) const;
  int find_comp(const std::string& n) const;
};

// --- parsing -----------------------------------------------------------

struct ParseError : std::runtime_error {
  int line, column;
  ParseError(const std::string& msg, int line, int column)
      : std::runtime_error(msg), line(line), column(column) {}
};

// Parses the Lagrangian grammar:
//   expr   := ('-')? term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := atom ('^' int)?
//   atom   := number | ident | 'd(' ident ',' index ')' | 'exp(' expr ')' | '(' expr ')'
//   index  := ('^')? (ident | digit+)
// Identifiers x0..x{D-1} are coordinates.  An identifier is a field component
// when it (or its 'star' partner) ever appears under d(...); every other
// identifier must resolve against the provided parameter table.  A repeated
// named index inside one term contracts covariant against contravariant.
// Values for all referenced parameters must be present in `param_values`.
Expr parse_lagrangian_text(const std::string& text, int dim,
                           const std::vector<std::pair<std::string, double>>& param_values,
                           SymbolTable& symbols);

// --- printing ----------------------------------------------------------

std::string to_text(const Expr& e, const SymbolTable& symbols);
std::string format_double(double v); // shortest round-trip decimal

// --- lowering ----------------------------------------------------------

// Expands named contractions and contravariant components against the
// mostly-minus metric; result contains only concrete covariant partials.
Expr lower(const Expr& e, int dim, const std::vector<int>& metric_sign);

} // namespace fieldlab
