#pragma once

#include "theory.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <tuple>

// Multivariate polynomial normal form over the lowered symbol set, with
// opaque atoms for non-polynomial factors (exponentials, inverses).  Used for
// coefficient matching: the proportionality constant search, homogeneity
// degrees, and canonical-form recognition.  Parameter values are substituted
// numerically.

namespace fieldlab {

struct Rational {
  long num = 0;
  long den = 1;
  bool operator==(const Rational&) const = default;
  double value() const { return (double)num / (double)den; }
};

enum PolySymTag { SYM_FIELD = 0, SYM_GRAD, SYM_GRAD2, SYM_COORD, SYM_ATOM };

struct PolyContext {
  using SymKey = std::tuple<int, int, int, int>; // (tag, a, b, c)
  std::map<SymKey, int> sym_index;
  std::vector<SymKey> sym_list;
  std::vector<Expr> atom_exprs;                  // per SYM_ATOM a-number
  std::map<std::string, int> atom_index;

  int intern(int tag, int a, int b = -1, int c = -1);
  int intern_atom(const std::string& key, const Expr& subtree);
};

using Monomial = std::vector<std::pair<int, int>>; // (sym, power), sorted, power != 0
using Poly = std::map<Monomial, double>;

Poly poly_add(const Poly& a, const Poly& b);
Poly poly_mul(const Poly& a, const Poly& b);
Poly poly_scale(const Poly& a, double s);
double poly_max_abs_coeff(const Poly& p);
std::string poly_signature(const Poly& p, const PolyContext& ctx); // deterministic key text

Poly to_poly(const Expr& e, const Theory& th, PolyContext& ctx);
Expr poly_to_expr(const Poly& p, const PolyContext& ctx);

// Plain tree evaluation on doubles; `leaf` supplies values for coord, field,
// partial and partial2 nodes (params are looked up in the theory table).
double eval_real(const Expr& e, const Theory& th,
                 const std::function<double(const ExprNode&)>& leaf);

// --- operations -----------------------------------------------------------

// Degree k with U(s*phi) = s^k U(phi), scaling all components of the given
// field jointly.  Symbolic for polynomial U, sampled numerically otherwise
// (relative tolerance 1e-10).  Throws std::invalid_argument when U contains
// derivatives of the field.
std::optional<Rational> detect_homogeneity(const Expr& potential, const Theory& th,
                                           int field_index, int sample_count, std::uint64_t seed);

// Searches for a constant rho with dL/d(d^mu phi_a) == rho * d_mu(dL/dphi_a)
// identically for every component and axis.
std::optional<double> check_k_condition(const Theory& th);

// Recognizes L = [exp(h.x)] * (canonical kinetic - U).
struct CanonicalForm {
  bool canonical = false;
  bool weighted = false;          // exponential prefactor present
  std::vector<double> h;          // covariant damping components when weighted
  Expr potential;                 // U (lowered); set when canonical
  Expr inner;                     // kinetic - U without the weight
  bool potential_coord_free = true;
  std::string diagnostic;         // why recognition failed
};
CanonicalForm analyze_canonical(const Theory& th);

} // namespace fieldlab
