#include "evaluate.hpp"

#include <cmath>

namespace fieldlab {

FieldBlock make_block(const Theory& th, GridPtr grid) {
  FieldBlock b;
  b.grid = std::move(grid);
  b.theory = &th;
  b.comp_view.resize(th.n_comps());
  for (auto& f : th.symbols.fields) {
    int re = (int)b.planes.size();
    b.planes.emplace_back(b.grid);
    int im = -1;
    if (f.complex_pair) {
      im = (int)b.planes.size();
      b.planes.emplace_back(b.grid);
      b.any_complex = true;
    }
    if (f.comp_plain >= 0) b.comp_view[f.comp_plain] = {re, im, false};
    if (f.comp_star >= 0) b.comp_view[f.comp_star] = {re, im, true};
  }
  return b;
}

CPlane make_cplane(GridPtr g, bool with_im) {
  CPlane c;
  c.re = Plane(g);
  if (with_im) c.im = Plane(std::move(g));
  return c;
}

bool Program::references_grad_axis(int axis) const {
  for (auto& in : inputs)
    if ((in.kind == InputRef::grad && in.axis == axis) ||
        (in.kind == InputRef::grad2 && (in.axis == axis || in.axis2 == axis)))
      return true;
  return false;
}

bool Program::references(InputRef::Kind kind) const {
  for (auto& in : inputs)
    if (in.kind == kind) return true;
  return false;
}

namespace {

struct Compiler {
  Program prog;
  const Theory* th;
  std::map<std::tuple<int, int, int, int>, int> input_ids;
  int depth = 0;

  void push(Program::Op op, int arg = 0) { prog.ops.push_back({op, arg}); }
  void note_push() { prog.max_stack = std::max(prog.max_stack, ++depth); }
  void note_pop() { --depth; }

  int input(Program::InputRef::Kind k, int comp, int axis, int axis2 = -1) {
    auto key = std::make_tuple((int)k, comp, axis, axis2);
    auto it = input_ids.find(key);
    if (it != input_ids.end()) return it->second;
    int id = (int)prog.inputs.size();
    prog.inputs.push_back({k, comp, axis, axis2});
    input_ids[key] = id;
    return id;
  }

  int constant(double v) {
    prog.consts.push_back(v);
    return (int)prog.consts.size() - 1;
  }

  void emit(const Expr& e) {
    switch (e->kind) {
      case NodeKind::number:
        push(Program::Op::push_const, constant(e->value));
        note_push();
        return;
      case NodeKind::param:
        push(Program::Op::push_const, constant(th->symbols.params[e->sym].value));
        note_push();
        return;
      case NodeKind::coord:
        push(Program::Op::push_input, input(Program::InputRef::coordinate, -1, e->axis));
        note_push();
        return;
      case NodeKind::field:
        push(Program::Op::push_input, input(Program::InputRef::field_value, e->sym, -1));
        note_push();
        return;
      case NodeKind::partial:
        push(Program::Op::push_input, input(Program::InputRef::grad, e->sym, e->axis));
        note_push();
        return;
      case NodeKind::partial2:
        push(Program::Op::push_input, input(Program::InputRef::grad2, e->sym, e->axis, e->axis2));
        note_push();
        return;
      case NodeKind::sum:
        emit(e->kids[0]);
        for (size_t i = 1; i < e->kids.size(); ++i) {
          emit(e->kids[i]);
          push(Program::Op::add);
          note_pop();
        }
        return;
      case NodeKind::prod:
        emit(e->kids[0]);
        for (size_t i = 1; i < e->kids.size(); ++i) {
          emit(e->kids[i]);
          push(Program::Op::mul);
          note_pop();
        }
        return;
      case NodeKind::pow_int:
        emit(e->kids[0]);
        push(Program::Op::pow_n, (int)e->exponent);
        return;
      case NodeKind::exp_fn:
        emit(e->kids[0]);
        push(Program::Op::exp_fn);
        return;
    }
    throw std::logic_error("unreachable");
  }
};

template <typename T>
T ipow(T x, int n) {
  if (n < 0) return T(1.0) / ipow(x, -n);
  T r(1.0);
  while (n) {
    if (n & 1) r *= x;
    x *= x;
    n >>= 1;
  }
  return r;
}

template <typename T>
T run_program(const Program& p, const T* in, T* stack) {
  int sp = 0;
  for (auto& ins : p.ops) {
    switch (ins.op) {
      case Program::Op::push_const: stack[sp++] = T(p.consts[ins.arg]); break;
      case Program::Op::push_input: stack[sp++] = in[ins.arg]; break;
      case Program::Op::add: stack[sp - 2] += stack[sp - 1]; --sp; break;
      case Program::Op::mul: stack[sp - 2] *= stack[sp - 1]; --sp; break;
      case Program::Op::pow_n: stack[sp - 1] = ipow(stack[sp - 1], ins.arg); break;
      case Program::Op::exp_fn: stack[sp - 1] = std::exp(stack[sp - 1]); break;
    }
  }
  return stack[0];
}

} // namespace

Program compile_expr(const Expr& e, const Theory& th) {
  Compiler c;
  c.th = &th;
  c.emit(e);
  return std::move(c.prog);
}

const Plane& DerivCache::grad(int plane, int axis) {
  auto key = std::make_pair(plane, axis);
  auto it = first.find(key);
  if (it == first.end())
    it = first.emplace(key, central_difference(block->planes[plane], axis, Variance::down)).first;
  return it->second;
}

const Plane& DerivCache::grad2(int plane, int a, int b) {
  auto key = std::make_tuple(plane, std::min(a, b), std::max(a, b));
  auto it = second.find(key);
  if (it == second.end())
    it = second.emplace(key, second_difference(block->planes[plane], std::get<1>(key), std::get<2>(key)))
             .first;
  return it->second;
}

void eval_block(const Program& p, const FieldBlock& b, DerivCache& cache, int ta, int tb,
                Plane& out_re, Plane* out_im, double* max_imag) {
  const Grid& g = *b.grid;
  cache.block = &b;
  const int ni = (int)p.inputs.size();

  // per-input plane sources (re/im pointers, conj flags); coordinates get
  // computed from the site index
  struct Src {
    const double* re = nullptr;
    const double* im = nullptr;
    bool conj = false;
    int coord_axis = -1;
  };
  std::vector<Src> src(ni);
  for (int i = 0; i < ni; ++i) {
    const auto& in = p.inputs[i];
    if (in.kind == Program::InputRef::coordinate) {
      src[i].coord_axis = in.axis;
      continue;
    }
    const auto& view = b.comp_view[in.comp];
    auto plane_of = [&](int plane_id) -> const double* {
      if (plane_id < 0) return nullptr;
      switch (in.kind) {
        case Program::InputRef::field_value: return b.planes[plane_id].v.data();
        case Program::InputRef::grad: return cache.grad(plane_id, in.axis).v.data();
        case Program::InputRef::grad2: return cache.grad2(plane_id, in.axis, in.axis2).v.data();
        default: return nullptr;
      }
    };
    src[i].re = plane_of(view.re);
    src[i].im = plane_of(view.im);
    src[i].conj = view.conj;
  }

  const long per = g.slice_sites();
  const bool cx = b.any_complex;
  std::vector<std::complex<double>> cin(ni), cstack(std::max(p.max_stack, 1));
  std::vector<double> din(ni), dstack(std::max(p.max_stack, 1));
  double mi = 0.0;

  for (int t = ta; t < tb; ++t) {
    for (long s = 0; s < per; ++s) {
      long site = (long)t * per + s;
      for (int i = 0; i < ni; ++i) {
        double re, im = 0.0;
        if (src[i].coord_axis >= 0) {
          re = g.coordinate(src[i].coord_axis, g.axis_index(site, src[i].coord_axis));
        } else {
          re = src[i].re[site];
          if (src[i].im) im = src[i].conj ? -src[i].im[site] : src[i].im[site];
        }
        if (cx) cin[i] = {re, im};
        else din[i] = re;
      }
      if (cx) {
        std::complex<double> r = run_program(p, cin.data(), cstack.data());
        out_re[site] = r.real();
        if (out_im) (*out_im)[site] = r.imag();
        mi = std::max(mi, std::fabs(r.imag()));
      } else {
        out_re[site] = run_program(p, din.data(), dstack.data());
      }
    }
  }
  if (max_imag) *max_imag = std::max(*max_imag, mi);
}

std::complex<double> eval_point(
    const Program& p, const std::function<std::complex<double>(const Program::InputRef&)>& bind) {
  std::vector<std::complex<double>> in(p.inputs.size());
  for (size_t i = 0; i < p.inputs.size(); ++i) in[i] = bind(p.inputs[i]);
  std::vector<std::complex<double>> stack(std::max(p.max_stack, 1));
  return run_program(p, in.data(), stack.data());
}

} // namespace fieldlab
