#pragma once

#include "dynamics.hpp"

// Constructors and verifiers for the conserved objects: the slab-indexed
// nonlocal constant, currents induced by the total-divergence condition, the
// energy-momentum tensor, its momentum-shift companion, dilation currents and
// the field-magnitude reconstruction, the damped-theory current, and the
// finite-invariance current.  All quantities are evaluated on interior time
// slices so every stencil is central.

namespace fieldlab {

// Theorem-precondition failures carry a stable code (never a crash path).
struct RefusalError : std::runtime_error {
  std::string code;
  RefusalError(std::string code_, const std::string& msg)
      : std::runtime_error(msg), code(std::move(code_)) {}
};

struct Family {
  enum class Kind {
    identity,
    shift_const,       // phi - eps                    v = -1
    scale,             // (1+eps) phi                  v = phi
    spacetime_shift,   // phi(x + eps a)               v = a^mu d_mu phi
    momentum_shift,    // phi + eps b^mu dL/d(d^mu phi~)  (conjugate-paired)
    scaling,           // e^(eps Delta) phi(e^eps x)   v = Delta phi + x^mu d_mu phi
    dissipative_mixed, // phi + eps (phi + c^mu d_mu phi)
    phase,             // e^(i eps) phi                v = i phi
  };
  Kind kind = Kind::identity;
  std::vector<double> a;  // spacetime_shift direction
  std::vector<double> b;  // momentum_shift direction
  std::vector<double> c;  // dissipative_mixed vector (derived from h when empty)

  static const char* name(Kind k);
};

// d(phi_eps)/d(eps) at eps=0, one complex plane per component, filled on
// slices [ta, tb).
std::vector<CPlane> family_velocity(const Theory& th, const FieldBlock& block, const Family& fam,
                                    int ta, int tb);

// dL(x, phi_eps, d phi_eps)/d(eps) at 0 via the chain rule (never by an
// epsilon finite difference).
Plane dlagrangian_deps(const Theory& th, const FieldBlock& block, DerivCache& cache,
                       const std::vector<CPlane>& vel, int ta, int tb);

struct NonlocalReport {
  std::vector<int> t1;
  std::vector<double> value;
  double constancy_dev = 0.0; // max - min over reported t1
  double final_value = 0.0;
};
// Surface term minus slab volume term, reported for every upper slice in
// (t0, t1]; requires 1 <= t0 < t1 <= nt-2.
NonlocalReport nonlocal_constant(const Theory& th, const FieldBlock& block, const Family& fam,
                                 int t0, int t1);

Plane total_divergence_residual(const Theory& th, const FieldBlock& block, const Family& fam,
                                const VectorField& psi);
VectorField current_from_psi(const Theory& th, const FieldBlock& block, const Family& fam,
                             const VectorField& psi);

// T^mu_nu = dL/d(d_mu phi_a) d_nu phi_a - L delta^mu_nu; refuses
// spacetime-dependent densities (code "spacetime-dependent").
TensorField energy_momentum(const Theory& th, const FieldBlock& block);

// K^mu_nu from the momentum-shift construction; rho must come from
// check_k_condition.  Complex pairs are conjugate-paired.
TensorField k_tensor(const Theory& th, const FieldBlock& block, double rho);

struct TGeneratedResult {
  VectorField j;
  double condition_l2 = 0.0, condition_linf = 0.0; // defining-condition residual
  double theta_defect = 0.0;                       // |d theta - dL/dx| when checked
};
// f_vec: D coordinate-only expressions f^alpha(x); varphi: internal family
// with varphi_0 = 0; theta: nullptr means 0 (required spacetime-independent),
// otherwise checked against dL/dx^mu (code "theta-inconsistent" on failure).
TGeneratedResult current_from_T_general(const Theory& th, const FieldBlock& block,
                                        const std::vector<Expr>& f_vec, const Family& varphi,
                                        const Expr& theta);

struct ScalingCurrents {
  VectorField J;
  TensorField H;     // contravariant H^{mu nu}; divergence runs over mu
  double delta;      // (D-2)/2
};
// Requires the canonical unweighted form with U homogeneous of degree
// D/Delta_D and D != 2 (codes "dimension-two", "not-canonical",
// "wrong-homogeneity-degree").
ScalingCurrents scaling_currents(const Theory& th, const FieldBlock& block);

struct DistanceResult {
  Plane dist;
  long clamped_sites = 0;
  double min_radicand = 0.0;
};
// |phi| reconstructed from the traces of T, J, H; exact algebra up to
// rounding on the slices where the inputs are defined.
DistanceResult distance_from_origin(const Theory& th, const FieldBlock& block,
                                    const TensorField& T, const VectorField& J,
                                    const TensorField& H);

// e^{h.x} (phi d^mu phi + c_T T_L^mu_nu c^nu) for the damped canonical form;
// refuses when any h component vanishes (code "zero-damping-component") or
// the potential is not homogeneous of degree 2.
VectorField dissipative_current(const Theory& th, const FieldBlock& block);

struct FiniteInvarianceResult {
  bool accepted = false;
  double xi = 0.0;
  double site_dev = 0.0;   // standard deviation across sites
  double threshold = 0.0;
  VectorField j;           // filled when accepted
};
FiniteInvarianceResult finite_invariance_current(const Theory& th, const FieldBlock& block,
                                                 const Family& fam);

struct VerifyEntry {
  std::string current;
  std::string construction;
  double residual_l2 = 0.0, residual_linf = 0.0;
  std::vector<int> charge_t;
  std::vector<double> charge;
  std::vector<double> divergence_l2_slice;  // per charge_t slice
  std::vector<double> divergence_linf_slice;
  double drift = 0.0;      // relative when the charge is away from zero
  bool drift_absolute = false;
};
VerifyEntry verify_current(const VectorField& j, const std::string& name,
                           const std::string& construction);

// shared helpers
Plane eval_real_on(const Theory& th, const FieldBlock& block, DerivCache& cache, const Expr& e,
                   int ta, int tb, double* imag_max = nullptr);
CPlane eval_cplx_on(const Theory& th, const FieldBlock& block, DerivCache& cache, const Expr& e,
                    int ta, int tb);
CPlane comp_values(const FieldBlock& block, int comp);            // field values as planes
CPlane cplane_derivative(const CPlane& f, int axis, Variance v);
Plane coordinate_plane(GridPtr g, int axis);
int interior_lo(const FieldBlock& b);
int interior_hi(const FieldBlock& b); // exclusive

} // namespace fieldlab
