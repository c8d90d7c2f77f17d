#include "currents.hpp"

#include <cmath>
#include <numeric>

namespace fieldlab {

namespace {

void ensure_im(CPlane& p) {
  if (!p.has_im()) p.im = Plane(p.re.grid);
}

// acc += s * x
void cacc(CPlane& acc, const CPlane& x, double s = 1.0) {
  for (long i = 0; i < (long)acc.re.v.size(); ++i) acc.re[i] += s * x.re[i];
  if (x.has_im()) {
    ensure_im(acc);
    for (long i = 0; i < (long)acc.im.v.size(); ++i) acc.im[i] += s * x.im[i];
  }
}

CPlane cmul(const CPlane& a, const CPlane& b) {
  CPlane out = make_cplane(a.re.grid, a.has_im() || b.has_im());
  const long n = (long)out.re.v.size();
  if (!a.has_im() && !b.has_im()) {
    for (long i = 0; i < n; ++i) out.re[i] = a.re[i] * b.re[i];
    return out;
  }
  for (long i = 0; i < n; ++i) {
    double ar = a.re[i], ai = a.has_im() ? a.im[i] : 0.0;
    double br = b.re[i], bi = b.has_im() ? b.im[i] : 0.0;
    out.re[i] = ar * br - ai * bi;
    out.im[i] = ar * bi + ai * br;
  }
  return out;
}

Plane real_of(const CPlane& a) { return a.re; }

struct Ctx {
  const Theory* th;
  const FieldBlock* block;
  DerivCache cache;
  int lo, hi;

  std::vector<std::vector<CPlane>> mom;  // [comp][mu], contravariant
  std::vector<Expr> dl_dfield_cached;
  std::vector<CPlane> dphi;              // [comp] dL/dphi_a values
  std::vector<std::vector<CPlane>> grad; // [comp][mu] d_mu phi_a values
  Plane lagr;

  Ctx(const Theory& t, const FieldBlock& b)
      : th(&t), block(&b), lo(interior_lo(b)), hi(interior_hi(b)) {}

  const CPlane& momentum_plane(int c, int mu) {
    if (mom.empty()) mom.assign(th->n_comps(), std::vector<CPlane>(th->dim));
    CPlane& p = mom[c][mu];
    if (!p.re.grid) p = eval_cplx_on(*th, *block, cache, th->dl_dgrad[c][mu], lo, hi);
    return p;
  }
  const CPlane& dfield_plane(int c) {
    if (dphi.empty()) dphi.assign(th->n_comps(), CPlane{});
    CPlane& p = dphi[c];
    if (!p.re.grid) p = eval_cplx_on(*th, *block, cache, th->dl_dfield[c], lo, hi);
    return p;
  }
  const CPlane& grad_plane(int c, int mu) {
    if (grad.empty()) grad.assign(th->n_comps(), std::vector<CPlane>(th->dim));
    CPlane& p = grad[c][mu];
    if (!p.re.grid) p = cplane_derivative(comp_values(*block, c), mu, Variance::down);
    return p;
  }
  const Plane& lagrangian_plane() {
    if (!lagr.grid) lagr = eval_real_on(*th, *block, cache, th->lagrangian, lo, hi);
    return lagr;
  }
};

} // namespace

const char* Family::name(Kind k) {
  switch (k) {
    case Kind::identity: return "identity";
    case Kind::shift_const: return "field-shift-const";
    case Kind::scale: return "field-scale";
    case Kind::spacetime_shift: return "spacetime-shift";
    case Kind::momentum_shift: return "momentum-field-shift";
    case Kind::scaling: return "scaling";
    case Kind::dissipative_mixed: return "dissipative-mixed";
    case Kind::phase: return "phase";
  }
  return "?";
}

int interior_lo(const FieldBlock&) { return 1; }
int interior_hi(const FieldBlock& b) { return b.grid->shape[0] - 1; }

Plane coordinate_plane(GridPtr g, int axis) {
  Plane p(g);
  for (long i = 0; i < g->n_sites; ++i) p[i] = g->coordinate(axis, g->axis_index(i, axis));
  return p;
}

CPlane comp_values(const FieldBlock& block, int comp) {
  const auto& view = block.comp_view[comp];
  CPlane out;
  out.re = block.planes[view.re];
  if (view.im >= 0) {
    out.im = block.planes[view.im];
    if (view.conj)
      for (double& v : out.im.v) v = -v;
  }
  return out;
}

CPlane cplane_derivative(const CPlane& f, int axis, Variance var) {
  CPlane out;
  out.re = central_difference(f.re, axis, var);
  if (f.has_im()) out.im = central_difference(f.im, axis, var);
  return out;
}

Plane eval_real_on(const Theory& th, const FieldBlock& block, DerivCache& cache, const Expr& e,
                   int ta, int tb, double* imag_max) {
  Program p = compile_expr(e, th);
  Plane out(block.grid);
  Plane im;
  if (block.any_complex) im = Plane(block.grid);
  eval_block(p, block, cache, ta, tb, out, block.any_complex ? &im : nullptr, imag_max);
  return out;
}

CPlane eval_cplx_on(const Theory& th, const FieldBlock& block, DerivCache& cache, const Expr& e,
                    int ta, int tb) {
  Program p = compile_expr(e, th);
  CPlane out = make_cplane(block.grid, block.any_complex);
  eval_block(p, block, cache, ta, tb, out.re, out.has_im() ? &out.im : nullptr);
  return out;
}

// --- perturbation families -------------------------------------------------

std::vector<CPlane> family_velocity(const Theory& th, const FieldBlock& block, const Family& fam,
                                    int ta, int tb) {
  const int nc = th.n_comps();
  const GridPtr g = block.grid;
  std::vector<CPlane> out(nc);
  for (int c = 0; c < nc; ++c) out[c] = make_cplane(g, block.any_complex);

  auto values = [&](int c) { return comp_values(block, c); };

  switch (fam.kind) {
    case Family::Kind::identity:
      return out;
    case Family::Kind::shift_const:
      for (int c = 0; c < nc; ++c)
        for (double& v : out[c].re.v) v = -1.0;
      return out;
    case Family::Kind::scale:
      for (int c = 0; c < nc; ++c) out[c] = values(c);
      return out;
    case Family::Kind::spacetime_shift: {
      if ((int)fam.a.size() != th.dim)
        throw std::invalid_argument("spacetime-shift family needs a direction of dimension D");
      for (int c = 0; c < nc; ++c)
        for (int mu = 0; mu < th.dim; ++mu)
          if (fam.a[mu] != 0.0) cacc(out[c], cplane_derivative(values(c), mu, Variance::down), fam.a[mu]);
      return out;
    }
    case Family::Kind::momentum_shift: {
      if ((int)fam.b.size() != th.dim)
        throw std::invalid_argument("momentum-shift family needs a direction of dimension D");
      DerivCache cache;
      for (int c = 0; c < nc; ++c) {
        int cb = th.conjugate_comp(c);
        for (int mu = 0; mu < th.dim; ++mu) {
          double w = fam.b[mu] * th.metric_sign[mu];
          if (w != 0.0)
            cacc(out[c], eval_cplx_on(th, block, cache, th.dl_dgrad[cb][mu], ta, tb), w);
        }
      }
      return out;
    }
    case Family::Kind::scaling: {
      double delta = 0.5 * (th.dim - 2);
      for (int c = 0; c < nc; ++c) {
        cacc(out[c], values(c), delta);
        for (int mu = 0; mu < th.dim; ++mu) {
          CPlane d = cplane_derivative(values(c), mu, Variance::down);
          Plane x = coordinate_plane(g, mu);
          for (long i = 0; i < g->n_sites; ++i) {
            out[c].re[i] += x[i] * d.re[i];
            if (out[c].has_im() && d.has_im()) out[c].im[i] += x[i] * d.im[i];
          }
        }
      }
      return out;
    }
    case Family::Kind::dissipative_mixed: {
      std::vector<double> c_vec = fam.c;
      if (c_vec.empty()) {
        auto cf = analyze_canonical(th);
        if (!cf.weighted)
          throw RefusalError("zero-damping-component",
                             "dissipative-mixed family needs the damped canonical form");
        c_vec.assign(th.dim, 0.0);
        for (int mu = 0; mu < th.dim; ++mu) {
          if (cf.h[mu] == 0.0)
            throw RefusalError("zero-damping-component",
                               "damping component h_" + std::to_string(mu) + " vanishes");
          c_vec[mu] = 2.0 / ((double)th.dim * cf.h[mu]);
        }
      }
      for (int c = 0; c < nc; ++c) {
        cacc(out[c], values(c));
        for (int mu = 0; mu < th.dim; ++mu)
          if (c_vec[mu] != 0.0)
            cacc(out[c], cplane_derivative(values(c), mu, Variance::down), c_vec[mu]);
      }
      return out;
    }
    case Family::Kind::phase: {
      bool any = false;
      for (auto& f : th.symbols.fields) any = any || f.complex_pair;
      if (!any)
        throw RefusalError("phase-needs-complex", "phase family acts on complex fields only");
      for (int c = 0; c < nc; ++c) {
        CPlane v = values(c);
        ensure_im(v);
        double s = th.symbols.comps[c].star ? -1.0 : 1.0; // i phi, -i phi*
        out[c].re = v.im;
        for (double& x : out[c].re.v) x *= -s;
        ensure_im(out[c]);
        out[c].im = v.re;
        for (double& x : out[c].im.v) x *= s;
      }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

Plane dlagrangian_deps(const Theory& th, const FieldBlock& block, DerivCache& cache,
                       const std::vector<CPlane>& vel, int ta, int tb) {
  CPlane acc = make_cplane(block.grid, block.any_complex);
  for (int c = 0; c < th.n_comps(); ++c) {
    CPlane df = eval_cplx_on(th, block, cache, th.dl_dfield[c], ta, tb);
    cacc(acc, cmul(df, vel[c]));
    for (int mu = 0; mu < th.dim; ++mu) {
      CPlane m = eval_cplx_on(th, block, cache, th.dl_dgrad[c][mu], ta, tb);
      cacc(acc, cmul(m, cplane_derivative(vel[c], mu, Variance::down)));
    }
  }
  return real_of(acc);
}

// --- nonlocal constant -------------------------------------------------------

NonlocalReport nonlocal_constant(const Theory& th, const FieldBlock& block, const Family& fam,
                                 int t0, int t1) {
  if (t0 >= t1) throw std::invalid_argument("nonlocal constant needs t0 < t1");
  const int lo = interior_lo(block), hi = interior_hi(block);
  if (t0 < lo || t1 > hi - 1)
    throw std::invalid_argument("slab must lie on interior time slices");

  Ctx ctx(th, block);
  auto vel = family_velocity(th, block, fam, ctx.lo, ctx.hi);

  // surface integrand: dL/d(d_0 phi_a) * v_a
  CPlane surf = make_cplane(block.grid, block.any_complex);
  for (int c = 0; c < th.n_comps(); ++c)
    cacc(surf, cmul(ctx.momentum_plane(c, 0), vel[c]));
  Plane surf_re = real_of(surf);

  Plane deps = dlagrangian_deps(th, block, ctx.cache, vel, ctx.lo, ctx.hi);

  NonlocalReport rep;
  double s0 = slice_integral(surf_re, t0);
  for (int t = t0 + 1; t <= t1; ++t) {
    double flux = slice_integral(surf_re, t) - s0;
    double vol = volume_integral(deps, {t0, t});
    rep.t1.push_back(t);
    rep.value.push_back(flux - vol);
  }
  auto [mn, mx] = std::minmax_element(rep.value.begin(), rep.value.end());
  rep.constancy_dev = *mx - *mn;
  rep.final_value = rep.value.back();
  return rep;
}

Plane total_divergence_residual(const Theory& th, const FieldBlock& block, const Family& fam,
                                const VectorField& psi) {
  Ctx ctx(th, block);
  auto vel = family_velocity(th, block, fam, ctx.lo, ctx.hi);
  Plane deps = dlagrangian_deps(th, block, ctx.cache, vel, ctx.lo, ctx.hi);
  Plane div = divergence(psi);
  for (long i = 0; i < block.grid->n_sites; ++i) deps[i] -= div[i];
  return deps;
}

VectorField current_from_psi(const Theory& th, const FieldBlock& block, const Family& fam,
                             const VectorField& psi) {
  Ctx ctx(th, block);
  auto vel = family_velocity(th, block, fam, ctx.lo, ctx.hi);
  VectorField j{block.grid, {}};
  for (int mu = 0; mu < th.dim; ++mu) {
    CPlane acc = make_cplane(block.grid, block.any_complex);
    for (int c = 0; c < th.n_comps(); ++c)
      cacc(acc, cmul(ctx.momentum_plane(c, mu), vel[c]));
    Plane p = real_of(acc);
    for (long i = 0; i < block.grid->n_sites; ++i) p[i] -= psi.comp[mu][i];
    j.comp.push_back(std::move(p));
  }
  return j;
}

// --- energy-momentum and its momentum-shift companion ------------------------

TensorField energy_momentum(const Theory& th, const FieldBlock& block) {
  if (!th.spacetime_independent)
    throw RefusalError("spacetime-dependent",
                       "the energy-momentum construction needs a spacetime-independent density");
  Ctx ctx(th, block);
  TensorField T{block.grid, {}};
  T.comp.assign(th.dim, std::vector<Plane>(th.dim));
  const Plane& L = ctx.lagrangian_plane();
  for (int mu = 0; mu < th.dim; ++mu)
    for (int nu = 0; nu < th.dim; ++nu) {
      CPlane acc = make_cplane(block.grid, block.any_complex);
      for (int c = 0; c < th.n_comps(); ++c)
        cacc(acc, cmul(ctx.momentum_plane(c, mu), ctx.grad_plane(c, nu)));
      Plane p = real_of(acc);
      if (mu == nu)
        for (long i = 0; i < block.grid->n_sites; ++i) p[i] -= L[i];
      T.comp[mu][nu] = std::move(p);
    }
  return T;
}

TensorField k_tensor(const Theory& th, const FieldBlock& block, double rho) {
  Ctx ctx(th, block);
  TensorField K{block.grid, {}};
  K.comp.assign(th.dim, std::vector<Plane>(th.dim));

  // trace bracket: rho (dL/dphi_a)(dL/dphi_abar) + dL/d(d^a phi_a) dL/d(d_a phi_abar)
  Plane bracket(block.grid);
  for (int c = 0; c < th.n_comps(); ++c) {
    int cb = th.conjugate_comp(c);
    CPlane t = cmul(ctx.dfield_plane(c), ctx.dfield_plane(cb));
    for (long i = 0; i < block.grid->n_sites; ++i) bracket[i] += rho * t.re[i];
    for (int al = 0; al < th.dim; ++al) {
      CPlane m = cmul(ctx.momentum_plane(c, al), ctx.momentum_plane(cb, al));
      double s = th.metric_sign[al];
      for (long i = 0; i < block.grid->n_sites; ++i) bracket[i] += s * m.re[i];
    }
  }

  for (int mu = 0; mu < th.dim; ++mu)
    for (int nu = 0; nu < th.dim; ++nu) {
      Plane p(block.grid);
      for (int c = 0; c < th.n_comps(); ++c) {
        int cb = th.conjugate_comp(c);
        CPlane t = cmul(ctx.momentum_plane(c, mu), ctx.momentum_plane(cb, nu));
        double s = th.metric_sign[nu];
        for (long i = 0; i < block.grid->n_sites; ++i) p[i] += s * t.re[i];
      }
      if (mu == nu)
        for (long i = 0; i < block.grid->n_sites; ++i) p[i] -= 0.5 * bracket[i];
      K.comp[mu][nu] = std::move(p);
    }
  return K;
}

// --- currents generated through the mixed construction -----------------------

TGeneratedResult current_from_T_general(const Theory& th, const FieldBlock& block,
                                        const std::vector<Expr>& f_vec, const Family& varphi,
                                        const Expr& theta) {
  if ((int)f_vec.size() != th.dim)
    throw std::invalid_argument("need one f^alpha expression per axis");
  for (auto& f : f_vec)
    if (contains(f, NodeKind::field) || contains(f, NodeKind::partial))
      throw std::invalid_argument("f^alpha must depend on coordinates only");

  Ctx ctx(th, block);
  const Grid& g = *block.grid;
  const int lo = ctx.lo, hi = ctx.hi;

  // theta: zero for spacetime-independent densities, otherwise supplied and
  // checked against the explicit coordinate derivative of L
  Plane theta_plane(block.grid);
  TGeneratedResult res;
  if (theta) {
    theta_plane = eval_real_on(th, block, ctx.cache, theta, lo, hi);
    double scale = 1e-300;
    double defect = 0.0;
    for (int mu = 0; mu < th.dim; ++mu) {
      Plane gmu = eval_real_on(th, block, ctx.cache, diff_coord_explicit(th.lagrangian, mu), lo, hi);
      Plane dth = central_difference(theta_plane, mu, Variance::down);
      for (int t = lo + 1; t < hi - 1; ++t)
        for (long s = 0; s < g.slice_sites(); ++s) {
          long i = (long)t * g.slice_sites() + s;
          defect = std::max(defect, std::fabs(dth[i] - gmu[i]));
          scale = std::max(scale, std::fabs(gmu[i]));
        }
    }
    res.theta_defect = defect;
    if (defect > 1e-6 * (1.0 + scale))
      throw RefusalError("theta-inconsistent",
                         "supplied theta does not reproduce dL/dx^mu (defect " +
                             format_double(defect) + ")");
  } else if (!th.spacetime_independent) {
    throw RefusalError("theta-required",
                       "spacetime-dependent density: supply theta with dL/dx^mu = d_mu theta");
  }

  // C^mu_alpha = dL/d(d_mu phi_a) d_alpha phi_a - (L - theta) delta^mu_alpha
  const Plane& L = ctx.lagrangian_plane();
  std::vector<std::vector<Plane>> C(th.dim, std::vector<Plane>(th.dim));
  for (int mu = 0; mu < th.dim; ++mu)
    for (int al = 0; al < th.dim; ++al) {
      CPlane acc = make_cplane(block.grid, block.any_complex);
      for (int c = 0; c < th.n_comps(); ++c)
        cacc(acc, cmul(ctx.momentum_plane(c, mu), ctx.grad_plane(c, al)));
      Plane p = real_of(acc);
      if (mu == al)
        for (long i = 0; i < g.n_sites; ++i) p[i] -= L[i] - theta_plane[i];
      C[mu][al] = std::move(p);
    }

  // defining condition: dL(varphi_eps)/deps + C^mu_alpha d_mu f^alpha = 0
  auto vel = family_velocity(th, block, varphi, lo, hi);
  Plane cond = dlagrangian_deps(th, block, ctx.cache, vel, lo, hi);
  for (int mu = 0; mu < th.dim; ++mu)
    for (int al = 0; al < th.dim; ++al) {
      Plane df = eval_real_on(th, block, ctx.cache, diff_coord_explicit(f_vec[al], mu), lo, hi);
      for (long i = 0; i < g.n_sites; ++i) cond[i] += C[mu][al][i] * df[i];
    }
  res.condition_l2 = l2_norm(cond, lo + 1, hi - 1);
  res.condition_linf = linf_norm(cond, lo + 1, hi - 1);

  res.j.grid = block.grid;
  for (int mu = 0; mu < th.dim; ++mu) {
    Plane p(block.grid);
    for (int al = 0; al < th.dim; ++al) {
      Plane fv = eval_real_on(th, block, ctx.cache, f_vec[al], lo, hi);
      for (long i = 0; i < g.n_sites; ++i) p[i] += C[mu][al][i] * fv[i];
    }
    CPlane acc = make_cplane(block.grid, block.any_complex);
    for (int c = 0; c < th.n_comps(); ++c)
      cacc(acc, cmul(ctx.momentum_plane(c, mu), vel[c]));
    for (long i = 0; i < g.n_sites; ++i) p[i] += acc.re[i];
    res.j.comp.push_back(std::move(p));
  }
  return res;
}

// --- dilation currents -------------------------------------------------------

namespace {

// kinetic bilinear with the gradients replaced by the fields themselves:
// 1/2 phi^2 per real field, phi phi* per complex pair
Plane kinetic_bilinear(const Theory& th, const FieldBlock& block) {
  Plane q(block.grid);
  for (auto& f : th.symbols.fields) {
    const auto& view = block.comp_view[f.comp_plain];
    if (f.complex_pair) {
      const Plane& re = block.planes[view.re];
      const Plane& im = block.planes[view.im];
      for (long i = 0; i < block.grid->n_sites; ++i) q[i] += re[i] * re[i] + im[i] * im[i];
    } else {
      const Plane& re = block.planes[view.re];
      for (long i = 0; i < block.grid->n_sites; ++i) q[i] += 0.5 * re[i] * re[i];
    }
  }
  return q;
}

} // namespace

ScalingCurrents scaling_currents(const Theory& th, const FieldBlock& block) {
  if (th.dim == 2)
    throw RefusalError("dimension-two", "the dilation construction is empty in D = 2");
  auto cf = analyze_canonical(th);
  if (!cf.canonical || cf.weighted)
    throw RefusalError("not-canonical",
                       "density is not in the unweighted canonical form: " + cf.diagnostic);
  if (!cf.potential_coord_free)
    throw RefusalError("not-canonical", "potential depends on spacetime");
  double delta = 0.5 * (th.dim - 2);
  long num = 2L * th.dim, den = th.dim - 2;
  long gg = std::gcd(std::labs(num), std::labs(den));
  num /= gg; den /= gg;
  if (den < 0) { num = -num; den = -den; }
  Rational required{num, den};
  auto k = detect_homogeneity(cf.potential, th, 0, 64, 20240501u);
  if (!k || !(*k == required))
    throw RefusalError("wrong-homogeneity-degree",
                       "potential is not homogeneous of degree " + std::to_string(required.num) +
                           (required.den == 1 ? "" : "/" + std::to_string(required.den)));

  Ctx ctx(th, block);
  TensorField T = energy_momentum(th, block);
  const Grid& g = *block.grid;

  ScalingCurrents out{{block.grid, {}}, {block.grid, {}}, delta};
  std::vector<Plane> x(th.dim);
  for (int mu = 0; mu < th.dim; ++mu) x[mu] = coordinate_plane(block.grid, mu);

  for (int mu = 0; mu < th.dim; ++mu) {
    CPlane acc = make_cplane(block.grid, block.any_complex);
    for (int c = 0; c < th.n_comps(); ++c)
      cacc(acc, cmul(comp_values(block, c), ctx.momentum_plane(c, mu)));
    Plane p = real_of(acc);
    for (long i = 0; i < g.n_sites; ++i) p[i] *= delta;
    for (int al = 0; al < th.dim; ++al)
      for (long i = 0; i < g.n_sites; ++i) p[i] += x[al][i] * T.comp[mu][al][i];
    out.J.comp.push_back(std::move(p));
  }

  Plane q = kinetic_bilinear(th, block);
  Plane x2(block.grid);
  for (int al = 0; al < th.dim; ++al)
    for (long i = 0; i < g.n_sites; ++i) x2[i] += th.metric_sign[al] * x[al][i] * x[al][i];

  out.H.comp.assign(th.dim, std::vector<Plane>(th.dim));
  for (int mu = 0; mu < th.dim; ++mu)
    for (int nu = 0; nu < th.dim; ++nu) {
      Plane p(block.grid);
      double eta = (mu == nu) ? (double)th.metric_sign[mu] : 0.0;
      double snu = th.metric_sign[nu];
      for (long i = 0; i < g.n_sites; ++i) {
        double tupup = snu * T.comp[mu][nu][i];
        p[i] = delta * eta * q[i] + 0.5 * x2[i] * tupup - x[nu][i] * out.J.comp[mu][i];
      }
      out.H.comp[mu][nu] = std::move(p);
    }
  return out;
}

DistanceResult distance_from_origin(const Theory& th, const FieldBlock& block,
                                    const TensorField& T, const VectorField& J,
                                    const TensorField& H) {
  double delta = 0.5 * (th.dim - 2);
  if (delta == 0.0)
    throw RefusalError("dimension-two", "field magnitude reconstruction needs Delta_D != 0");
  if (th.symbols.fields.size() != 1)
    throw std::invalid_argument("magnitude reconstruction applies to a single field");
  bool complex_pair = th.symbols.fields[0].complex_pair;
  const Grid& g = *block.grid;

  Plane x2(block.grid);
  std::vector<Plane> x(th.dim);
  for (int mu = 0; mu < th.dim; ++mu) {
    x[mu] = coordinate_plane(block.grid, mu);
    for (long i = 0; i < g.n_sites; ++i) x2[i] += th.metric_sign[mu] * x[mu][i] * x[mu][i];
  }

  DistanceResult res;
  res.dist = Plane(block.grid);
  double divisor = (complex_pair ? 2.0 : 1.0) * th.dim * delta;
  for (long i = 0; i < g.n_sites; ++i) {
    double htr = 0.0, ttr = 0.0, xj = 0.0;
    for (int mu = 0; mu < th.dim; ++mu) {
      htr += th.metric_sign[mu] * H.comp[mu][mu][i];
      ttr += T.comp[mu][mu][i];
      xj += th.metric_sign[mu] * x[mu][i] * J.comp[mu][i];
    }
    double radicand = (2.0 * htr - x2[i] * ttr + 2.0 * xj) / divisor;
    if (radicand < 0.0) {
      res.min_radicand = std::min(res.min_radicand, radicand);
      ++res.clamped_sites;
      radicand = 0.0;
    }
    res.dist[i] = std::sqrt(radicand);
  }
  return res;
}

// --- dissipative current -----------------------------------------------------

VectorField dissipative_current(const Theory& th, const FieldBlock& block) {
  auto cf = analyze_canonical(th);
  if (!cf.canonical || !cf.weighted)
    throw RefusalError("not-dissipative-form",
                       "density is not exp(h.x) * (canonical kinetic - U): " + cf.diagnostic);
  if (!cf.potential_coord_free)
    throw RefusalError("not-dissipative-form", "potential depends on spacetime");
  if (th.symbols.fields.size() != 1 || th.symbols.fields[0].complex_pair)
    throw RefusalError("not-dissipative-form", "construction applies to a single real field");
  for (int mu = 0; mu < th.dim; ++mu)
    if (cf.h[mu] == 0.0)
      throw RefusalError("zero-damping-component",
                         "damping component h_" + std::to_string(mu) +
                             " vanishes; its reciprocal is undefined");
  auto k = detect_homogeneity(cf.potential, th, 0, 64, 20240502u);
  if (!k || !(*k == Rational{2, 1}))
    throw RefusalError("wrong-homogeneity-degree", "potential is not homogeneous of degree 2");

  // c^nu h_nu = 2 closes the divergence; the componentwise reciprocal is
  // normalized by 1/D so the contraction (not each component) carries the 2
  std::vector<double> cvec(th.dim);
  for (int mu = 0; mu < th.dim; ++mu) cvec[mu] = 2.0 / ((double)th.dim * cf.h[mu]);

  Ctx ctx(th, block);
  const Grid& g = *block.grid;
  const int comp = th.symbols.fields[0].comp_plain;

  // weight and undamped pieces
  Plane weight(block.grid);
  {
    std::vector<Expr> terms;
    for (int mu = 0; mu < th.dim; ++mu) terms.push_back(prod({num(cf.h[mu]), coord(mu)}));
    weight = eval_real_on(th, block, ctx.cache, exp_fn(sum(std::move(terms))), ctx.lo, ctx.hi);
  }
  Plane inner_l = eval_real_on(th, block, ctx.cache, cf.inner, ctx.lo, ctx.hi);
  std::vector<Plane> mom_l(th.dim), grad(th.dim);
  for (int mu = 0; mu < th.dim; ++mu) {
    mom_l[mu] = eval_real_on(th, block, ctx.cache, diff_grad(cf.inner, comp, mu), ctx.lo, ctx.hi);
    grad[mu] = central_difference(block.planes[block.comp_view[comp].re], mu, Variance::down);
  }
  const Plane& phi = block.planes[block.comp_view[comp].re];

  VectorField j{block.grid, {}};
  for (int mu = 0; mu < th.dim; ++mu) {
    Plane p(block.grid);
    for (long i = 0; i < g.n_sites; ++i) {
      double tpart = 0.0;
      for (int nu = 0; nu < th.dim; ++nu) {
        double t_mu_nu = mom_l[mu][i] * grad[nu][i] - (mu == nu ? inner_l[i] : 0.0);
        tpart += cvec[nu] * t_mu_nu;
      }
      double dup = th.metric_sign[mu] * grad[mu][i]; // d^mu phi
      p[i] = weight[i] * (phi[i] * dup + tpart);
    }
    j.comp.push_back(std::move(p));
  }
  return j;
}

// --- finite invariance -------------------------------------------------------

FiniteInvarianceResult finite_invariance_current(const Theory& th, const FieldBlock& block,
                                                 const Family& fam) {
  Ctx ctx(th, block);
  auto vel = family_velocity(th, block, fam, ctx.lo, ctx.hi);
  Plane deps = dlagrangian_deps(th, block, ctx.cache, vel, ctx.lo, ctx.hi);

  const Grid& g = *block.grid;
  const long per = g.slice_sites();
  double sum = 0.0, sum2 = 0.0;
  long n = 0;
  for (int t = ctx.lo; t < ctx.hi; ++t)
    for (long s = 0; s < per; ++s) {
      double v = deps[(long)t * per + s];
      sum += v;
      sum2 += v * v;
      ++n;
    }
  FiniteInvarianceResult res;
  res.xi = sum / (double)n;
  res.site_dev = std::sqrt(std::max(0.0, sum2 / (double)n - res.xi * res.xi));
  res.threshold = 1e-8 * (1.0 + std::fabs(res.xi));
  res.accepted = res.site_dev <= res.threshold;
  if (!res.accepted) return res;

  res.j.grid = block.grid;
  for (int mu = 0; mu < th.dim; ++mu) {
    CPlane acc = make_cplane(block.grid, block.any_complex);
    for (int c = 0; c < th.n_comps(); ++c)
      cacc(acc, cmul(ctx.momentum_plane(c, mu), vel[c]));
    Plane p = real_of(acc);
    if (res.xi != 0.0) {
      Plane x = coordinate_plane(block.grid, mu);
      for (long i = 0; i < g.n_sites; ++i) p[i] -= res.xi * x[i];
    }
    res.j.comp.push_back(std::move(p));
  }
  return res;
}

// --- verification -------------------------------------------------------------

VerifyEntry verify_current(const VectorField& j, const std::string& name,
                           const std::string& construction) {
  const Grid& g = *j.grid;
  VerifyEntry e;
  e.current = name;
  e.construction = construction;
  Plane div = divergence(j);
  const int lo = 2, hi = g.shape[0] - 2; // central stencils over filled slices
  e.residual_l2 = l2_norm(div, lo, hi);
  e.residual_linf = linf_norm(div, lo, hi);

  const long per = g.slice_sites();
  for (int t = lo; t < hi; ++t) {
    e.charge_t.push_back(t);
    e.charge.push_back(slice_integral(j.comp[0], t));
    double s2 = 0.0, si = 0.0;
    for (long s = 0; s < per; ++s) {
      double v = div[(long)t * per + s];
      s2 += v * v;
      si = std::max(si, std::fabs(v));
    }
    e.divergence_l2_slice.push_back(std::sqrt(s2 * g.spatial_cell()));
    e.divergence_linf_slice.push_back(si);
  }
  if (!e.charge.empty()) {
    double qref = e.charge.front();
    double dmax = 0.0, qmax = 0.0;
    for (double q : e.charge) {
      dmax = std::max(dmax, std::fabs(q - qref));
      qmax = std::max(qmax, std::fabs(q));
    }
    if (std::fabs(qref) > 1e-10 * std::max(1.0, qmax)) {
      e.drift = dmax / std::fabs(qref);
    } else {
      e.drift = dmax;
      e.drift_absolute = true;
    }
  }
  return e;
}

} // namespace fieldlab
