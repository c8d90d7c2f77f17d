#include "dynamics.hpp"

#include <cmath>
#include <random>

namespace fieldlab {

namespace {

using cd = std::complex<double>;

// spatial stencils on one contiguous time slice (grid strides apply as-is)
void spatial_diff(const Grid& g, const CSlice& f, int axis, CSlice& out) {
  const long st = g.stride[axis];
  const int n = g.shape[axis];
  const double inv2h = 1.0 / (2.0 * g.spacing[axis]);
  const long per = g.slice_sites();
  for (long i = 0; i < per; ++i) {
    int ai = (int)((i / st) % n);
    long up = (ai == n - 1) ? i - (long)(n - 1) * st : i + st;
    long dn = (ai == 0) ? i + (long)(n - 1) * st : i - st;
    out[i] = (f[up] - f[dn]) * inv2h;
  }
}

void spatial_diff2(const Grid& g, const CSlice& f, int a, int b, CSlice& out, CSlice& tmp) {
  if (a != b) {
    spatial_diff(g, f, a, tmp);
    spatial_diff(g, tmp, b, out);
    return;
  }
  const long st = g.stride[a];
  const int n = g.shape[a];
  const double invh2 = 1.0 / (g.spacing[a] * g.spacing[a]);
  const long per = g.slice_sites();
  for (long i = 0; i < per; ++i) {
    int ai = (int)((i / st) % n);
    long up = (ai == n - 1) ? i - (long)(n - 1) * st : i + st;
    long dn = (ai == 0) ? i + (long)(n - 1) * st : i - st;
    out[i] = (f[up] - 2.0 * f[i] + f[dn]) * invh2;
  }
}

struct EvolvedField {
  int field_index;
  int comp_evo; // plain component, stepped
  int comp_eq;  // component varied to get the equation containing dtt(evo)
  Program A, B, Q;
};

bool expr_has_time_partial(const Expr& e) {
  if (e->kind == NodeKind::partial && e->axis == 0) return true;
  if (e->kind == NodeKind::partial2 && e->axis == 0) return true;
  for (auto& k : e->kids)
    if (expr_has_time_partial(k)) return true;
  return false;
}

bool expr_has_time_partial2(const Expr& e) {
  if (e->kind == NodeKind::partial2 && e->axis == 0) return true;
  for (auto& k : e->kids)
    if (expr_has_time_partial2(k)) return true;
  return false;
}

std::vector<EvolvedField> build_stepper(const Theory& th) {
  std::vector<EvolvedField> out;
  for (size_t fi = 0; fi < th.symbols.fields.size(); ++fi) {
    const auto& f = th.symbols.fields[fi];
    EvolvedField ev;
    ev.field_index = (int)fi;
    ev.comp_evo = f.comp_plain;
    ev.comp_eq = f.complex_pair ? f.comp_star : f.comp_plain;
    const Expr& el = th.euler_lagrange[ev.comp_eq];

    Expr q = diff_grad2(el, ev.comp_evo, 0, 0);
    if (is_zero(q))
      throw StepperError("field '" + f.name + "': equation has no second time derivative");
    if (contains_any_grad(q) || contains(q, NodeKind::field))
      throw StepperError("field '" + f.name + "': kinetic coefficient depends on the field");

    Expr p = rewrite_leaves(el, [&](const ExprNode& n) -> Expr {
      if (n.kind == NodeKind::partial2 && n.sym == ev.comp_evo && n.axis == 0 && n.axis2 == 0)
        return num(0.0);
      return nullptr;
    });
    if (expr_has_time_partial2(p))
      throw StepperError("field '" + f.name + "': mixed or cross second time derivatives unsupported");

    Expr b = diff_grad(p, ev.comp_evo, 0);
    if (expr_has_time_partial(b))
      throw StepperError("field '" + f.name + "': equation is not affine in the velocity");
    Expr a = rewrite_leaves(p, [&](const ExprNode& n) -> Expr {
      if (n.kind == NodeKind::partial && n.sym == ev.comp_evo && n.axis == 0) return num(0.0);
      return nullptr;
    });
    if (expr_has_time_partial(a))
      throw StepperError("field '" + f.name + "': velocity coupling between components unsupported");

    ev.A = compile_expr(a, th);
    ev.B = compile_expr(b, th);
    ev.Q = compile_expr(q, th);
    out.push_back(std::move(ev));
  }
  return out;
}

// evaluation of a compiled program over one slice
struct SliceEval {
  const Theory* th;
  const Grid* g;
  int n_fields;
  const std::vector<CSlice>* phi; // per field
  double t;                       // slice time
  // caches
  std::map<std::pair<int, int>, CSlice> d1;          // (field, axis)
  std::map<std::tuple<int, int, int>, CSlice> d2;    // (field, a, b)
  CSlice tmp;

  const CSlice& grad(int fieldi, int axis) {
    auto key = std::make_pair(fieldi, axis);
    auto it = d1.find(key);
    if (it == d1.end()) {
      CSlice out(g->slice_sites());
      spatial_diff(*g, (*phi)[fieldi], axis, out);
      it = d1.emplace(key, std::move(out)).first;
    }
    return it->second;
  }
  const CSlice& grad2(int fieldi, int a, int b) {
    auto key = std::make_tuple(fieldi, std::min(a, b), std::max(a, b));
    auto it = d2.find(key);
    if (it == d2.end()) {
      CSlice out(g->slice_sites());
      if (tmp.size() != out.size()) tmp.resize(out.size());
      spatial_diff2(*g, (*phi)[fieldi], std::get<1>(key), std::get<2>(key), out, tmp);
      it = d2.emplace(key, std::move(out)).first;
    }
    return it->second;
  }

  void run(const Program& prog, CSlice& out) {
    const long per = g->slice_sites();
    const int ni = (int)prog.inputs.size();
    // resolve sources once
    struct Src { const cd* data = nullptr; bool conj = false; int coord_axis = -1; };
    std::vector<Src> src(ni);
    for (int i = 0; i < ni; ++i) {
      const auto& in = prog.inputs[i];
      if (in.kind == Program::InputRef::coordinate) { src[i].coord_axis = in.axis; continue; }
      const auto& comp = th->symbols.comps[in.comp];
      src[i].conj = comp.star;
      switch (in.kind) {
        case Program::InputRef::field_value: src[i].data = (*phi)[comp.field_index].data(); break;
        case Program::InputRef::grad:
          if (in.axis == 0) throw StepperError("internal: time gradient in slice program");
          src[i].data = grad(comp.field_index, in.axis).data();
          break;
        case Program::InputRef::grad2:
          if (in.axis == 0) throw StepperError("internal: time derivative in slice program");
          src[i].data = grad2(comp.field_index, in.axis, in.axis2).data();
          break;
        default: break;
      }
    }
    std::vector<cd> in(ni), stack(std::max(prog.max_stack, 1));
    for (long s = 0; s < per; ++s) {
      for (int i = 0; i < ni; ++i) {
        if (src[i].coord_axis == 0) in[i] = t;
        else if (src[i].coord_axis > 0) {
          int ax = src[i].coord_axis;
          in[i] = g->coordinate(ax, (int)((s / g->stride[ax]) % g->shape[ax]));
        } else {
          cd v = src[i].data[s];
          in[i] = src[i].conj ? std::conj(v) : v;
        }
      }
      int sp = 0;
      for (auto& ins : prog.ops) {
        switch (ins.op) {
          case Program::Op::push_const: stack[sp++] = ins.arg >= 0 ? prog.consts[ins.arg] : 0.0; break;
          case Program::Op::push_input: stack[sp++] = in[ins.arg]; break;
          case Program::Op::add: stack[sp - 2] += stack[sp - 1]; --sp; break;
          case Program::Op::mul: stack[sp - 2] *= stack[sp - 1]; --sp; break;
          case Program::Op::pow_n: {
            cd x = stack[sp - 1];
            int e = ins.arg;
            bool invert = e < 0;
            if (invert) e = -e;
            cd r = 1.0;
            while (e) { if (e & 1) r *= x; x *= x; e >>= 1; }
            stack[sp - 1] = invert ? 1.0 / r : r;
            break;
          }
          case Program::Op::exp_fn: stack[sp - 1] = std::exp(stack[sp - 1]); break;
        }
      }
      out[s] = stack[0];
    }
  }
};

void store_slice(FieldBlock& block, const Theory& th, int t, const std::vector<CSlice>& phi) {
  const long per = block.grid->slice_sites();
  const long off = (long)t * per;
  for (size_t fi = 0; fi < th.symbols.fields.size(); ++fi) {
    const auto& f = th.symbols.fields[fi];
    const auto& view = block.comp_view[f.comp_plain];
    for (long s = 0; s < per; ++s) {
      block.planes[view.re][off + s] = phi[fi][s].real();
      if (view.im >= 0) block.planes[view.im][off + s] = phi[fi][s].imag();
    }
  }
}

} // namespace

void synthesize_initial(const Theory& th, const Grid& g, const InitialData& d, int field_index,
                        CSlice& phi, CSlice& pi) {
  const long per = g.slice_sites();
  phi.assign(per, 0.0);
  pi.assign(per, 0.0);
  const bool complex_field = th.symbols.fields[field_index].complex_pair;
  const int dsp = g.dim - 1;

  if (d.kind == InitialData::Kind::plane_wave) {
    std::vector<double> k(dsp, 0.0);
    double k2 = 0.0;
    for (int i = 0; i < dsp; ++i) {
      int n = i < (int)d.modes.size() ? d.modes[i] : 0;
      double length = g.shape[i + 1] * g.spacing[i + 1];
      k[i] = 2.0 * M_PI * n / length;
      k2 += k[i] * k[i];
    }
    double omega = std::sqrt(k2 + d.mass * d.mass);
    double t0 = g.origin[0];
    for (long s = 0; s < per; ++s) {
      double kx = 0.0;
      for (int i = 0; i < dsp; ++i)
        kx += k[i] * g.coordinate(i + 1, (int)((s / g.stride[i + 1]) % g.shape[i + 1]));
      double arg = omega * t0 - kx + d.phase;
      if (complex_field) {
        cd v = d.amplitude * std::exp(cd(0.0, arg));
        phi[s] = v;
        pi[s] = cd(0.0, omega) * v;
      } else {
        phi[s] = d.amplitude * std::cos(arg);
        pi[s] = -d.amplitude * omega * std::sin(arg);
      }
    }
    return;
  }

  if (d.kind == InitialData::Kind::gaussian_packet) {
    for (long s = 0; s < per; ++s) {
      double r2 = 0.0;
      for (int i = 0; i < dsp; ++i) {
        double L = g.shape[i + 1] * g.spacing[i + 1];
        double c = i < (int)d.center.size() ? d.center[i] : 0.0;
        double x = g.coordinate(i + 1, (int)((s / g.stride[i + 1]) % g.shape[i + 1]));
        double u = (L / M_PI) * std::sin(M_PI * (x - c) / L); // periodic-smooth distance
        r2 += u * u;
      }
      phi[s] = d.amplitude * std::exp(-r2 / (d.width * d.width));
    }
    return;
  }

  // random smooth field: truncated Fourier series with decaying amplitudes
  std::mt19937_64 rng(d.seed + 977 * (std::uint64_t)field_index);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<int>> modes;
  std::vector<int> cur(dsp, -d.cutoff);
  for (;;) {
    modes.push_back(cur);
    int a = 0;
    for (; a < dsp; ++a) {
      if (++cur[a] <= d.cutoff) break;
      cur[a] = -d.cutoff;
    }
    if (a == dsp) break;
  }
  for (int pass = 0; pass < (complex_field ? 2 : 1); ++pass) {
    for (auto& n : modes) {
      double n2 = 0.0;
      for (int v : n) n2 += (double)v * v;
      double amp = 1.0 / (1.0 + n2 * n2);
      double ac = gauss(rng) * amp, as = gauss(rng) * amp;
      double pc = gauss(rng) * amp, ps = gauss(rng) * amp;
      for (long s = 0; s < per; ++s) {
        double kx = 0.0;
        for (int i = 0; i < dsp; ++i) {
          double L = g.shape[i + 1] * g.spacing[i + 1];
          double x = g.coordinate(i + 1, (int)((s / g.stride[i + 1]) % g.shape[i + 1]));
          kx += 2.0 * M_PI * n[i] * x / L;
        }
        double fv = d.amplitude * (ac * std::cos(kx) + as * std::sin(kx));
        double pv = d.amplitude * (pc * std::cos(kx) + ps * std::sin(kx));
        if (pass == 0) { phi[s] += fv; pi[s] += pv; }
        else { phi[s] += cd(0.0, fv); pi[s] += cd(0.0, pv); }
      }
    }
  }
}

EvolveResult evolve_from(const Theory& th, GridPtr grid, double dt, int steps,
                         std::vector<CSlice> phi, std::vector<CSlice> pi,
                         bool pi_at_half_step) {
  if (grid->shape[0] != steps + 1)
    throw std::invalid_argument("grid time extent must be steps+1 slices");
  if (std::fabs(grid->spacing[0] - dt) > 1e-12 * dt)
    throw std::invalid_argument("grid time spacing must equal dt");

  auto evolved = build_stepper(th);
  const int nf = (int)th.symbols.fields.size();
  const long per = grid->slice_sites();

  FieldBlock block = make_block(th, grid);
  store_slice(block, th, 0, phi);

  CSlice acc(per), bco(per), qco(per);
  for (int n = 0; n < steps; ++n) {
    SliceEval ev{&th, grid.get(), nf, &phi, grid->coordinate(0, n), {}, {}, {}};
    for (int fi = 0; fi < nf; ++fi) {
      if (n == 0 && pi_at_half_step) continue; // momentum already at t0 + dt/2
      auto& e = evolved[fi];
      ev.run(e.A, acc);
      ev.run(e.B, bco);
      ev.run(e.Q, qco);
      // el = A + B*v + Q*vdot = 0  =>  vdot = -(A + B v)/Q
      for (long s = 0; s < per; ++s) {
        cd q = qco[s];
        if (std::abs(q) < 1e-300)
          throw StepperError("kinetic coefficient vanishes at a site");
        cd a = -acc[s] / q;
        cd b = -bco[s] / q;
        cd half = 0.5 * dt * b;
        if (n == 0) {
          pi[fi][s] = pi[fi][s] + 0.5 * dt * (a + b * pi[fi][s]);
        } else {
          pi[fi][s] = (pi[fi][s] * (1.0 + half) + dt * a) / (1.0 - half);
        }
      }
    }
    bool finite = true;
    for (int fi = 0; fi < nf; ++fi)
      for (long s = 0; s < per; ++s) {
        phi[fi][s] += dt * pi[fi][s];
        finite = finite && std::isfinite(phi[fi][s].real()) && std::isfinite(phi[fi][s].imag());
      }
    if (!finite) throw InstabilityError("non-finite field value", n + 1);
    store_slice(block, th, n + 1, phi);
  }
  return {std::move(block), std::move(pi)};
}

EvolveResult evolve(const Theory& th, GridPtr grid, const EvolutionConfig& cfg) {
  if (cfg.dt <= 0) throw std::invalid_argument("dt must be positive");
  if (cfg.courant_check) {
    double hmin = 1e300;
    for (int a = 1; a < grid->dim; ++a) hmin = std::min(hmin, grid->spacing[a]);
    if (grid->dim > 1 && cfg.dt > 0.5 * hmin + 1e-15)
      throw std::invalid_argument("dt exceeds 0.5 * min spatial spacing (courant_check)");
  }
  const int nf = (int)th.symbols.fields.size();
  if (cfg.initial.empty()) throw std::invalid_argument("initial data required");
  std::vector<CSlice> phi(nf), pi(nf);
  for (int fi = 0; fi < nf; ++fi) {
    const InitialData& d = cfg.initial.size() == 1 ? cfg.initial[0] : cfg.initial.at(fi);
    synthesize_initial(th, *grid, d, fi, phi[fi], pi[fi]);
  }
  return evolve_from(th, std::move(grid), cfg.dt, cfg.steps, std::move(phi), std::move(pi),
                     /*pi_at_half_step=*/false);
}

FieldBlock exact_plane_wave(const Theory& th, GridPtr grid, const InitialData& d) {
  FieldBlock block = make_block(th, grid);
  const Grid& g = *grid;
  const int dsp = g.dim - 1;
  std::vector<double> k(dsp, 0.0);
  double k2 = 0.0;
  for (int i = 0; i < dsp; ++i) {
    int n = i < (int)d.modes.size() ? d.modes[i] : 0;
    double length = g.shape[i + 1] * g.spacing[i + 1];
    k[i] = 2.0 * M_PI * n / length;
    k2 += k[i] * k[i];
  }
  double omega = std::sqrt(k2 + d.mass * d.mass);
  for (size_t fi = 0; fi < th.symbols.fields.size(); ++fi) {
    const auto& f = th.symbols.fields[fi];
    const auto& view = block.comp_view[f.comp_plain];
    for (long i = 0; i < g.n_sites; ++i) {
      double arg = omega * g.coordinate(0, g.axis_index(i, 0)) + d.phase;
      for (int a = 0; a < dsp; ++a) arg -= k[a] * g.coordinate(a + 1, g.axis_index(i, a + 1));
      if (f.complex_pair) {
        block.planes[view.re][i] = d.amplitude * std::cos(arg);
        block.planes[view.im][i] = d.amplitude * std::sin(arg);
      } else {
        block.planes[view.re][i] = d.amplitude * std::cos(arg);
      }
    }
  }
  return block;
}

std::vector<CPlane> el_residual(const Theory& th, const FieldBlock& block) {
  if (block.grid->shape[0] < 3) throw std::invalid_argument("need at least 3 time slices");
  DerivCache cache;
  std::vector<CPlane> out;
  for (int c = 0; c < th.n_comps(); ++c) {
    Program p = compile_expr(th.euler_lagrange[c], th);
    CPlane r = make_cplane(block.grid, block.any_complex);
    eval_block(p, block, cache, 0, block.grid->shape[0], r.re, r.has_im() ? &r.im : nullptr);
    out.push_back(std::move(r));
  }
  return out;
}

} // namespace fieldlab
