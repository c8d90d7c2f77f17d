#include "poly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fieldlab {

int PolyContext::intern(int tag, int a, int b, int c) {
  SymKey k{tag, a, b, c};
  auto it = sym_index.find(k);
  if (it != sym_index.end()) return it->second;
  int id = (int)sym_list.size();
  sym_list.push_back(k);
  sym_index[k] = id;
  return id;
}

int PolyContext::intern_atom(const std::string& key, const Expr& subtree) {
  auto it = atom_index.find(key);
  if (it != atom_index.end()) return it->second;
  int a = (int)atom_exprs.size();
  atom_exprs.push_back(subtree);
  atom_index[key] = a;
  return a;
}

Poly poly_add(const Poly& a, const Poly& b) {
  Poly out = a;
  for (auto& [m, c] : b) {
    double& v = out[m];
    v += c;
    if (v == 0.0) out.erase(m);
  }
  return out;
}

namespace {

Monomial mono_mul(const Monomial& a, const Monomial& b) {
  Monomial out;
  size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) out.push_back(a[i++]);
    else if (i == a.size() || b[j].first < a[i].first) out.push_back(b[j++]);
    else {
      int p = a[i].second + b[j].second;
      if (p != 0) out.push_back({a[i].first, p});
      ++i; ++j;
    }
  }
  return out;
}

} // namespace

Poly poly_mul(const Poly& a, const Poly& b) {
  Poly out;
  for (auto& [ma, ca] : a)
    for (auto& [mb, cb] : b) {
      Monomial m = mono_mul(ma, mb);
      double& v = out[m];
      v += ca * cb;
      if (v == 0.0) out.erase(m);
    }
  return out;
}

Poly poly_scale(const Poly& a, double s) {
  if (s == 0.0) return {};
  Poly out;
  for (auto& [m, c] : a) out[m] = c * s;
  return out;
}

double poly_max_abs_coeff(const Poly& p) {
  double m = 0.0;
  for (auto& [_, c] : p) m = std::max(m, std::fabs(c));
  return m;
}

std::string poly_signature(const Poly& p, const PolyContext& ctx) {
  std::string s;
  for (auto& [m, c] : p) {
    for (auto& [sym, pw] : m) {
      auto [tag, a, b, cc] = ctx.sym_list[sym];
      s += "s" + std::to_string(tag) + "." + std::to_string(a) + "." + std::to_string(b) + "." +
           std::to_string(cc) + "^" + std::to_string(pw) + " ";
    }
    s += "*" + format_double(c) + ";";
  }
  return s;
}

namespace {

Poly poly_one() { return {{Monomial{}, 1.0}}; }

Poly poly_pow(const Poly& p, long n) {
  Poly out = poly_one();
  for (long i = 0; i < n; ++i) out = poly_mul(out, p);
  return out;
}

Poly poly_sym(int sym, int power = 1) { return {{Monomial{{sym, power}}, 1.0}}; }

} // namespace

Poly to_poly(const Expr& e, const Theory& th, PolyContext& ctx) {
  switch (e->kind) {
    case NodeKind::number:
      if (e->value == 0.0) return {};
      return {{Monomial{}, e->value}};
    case NodeKind::param: {
      double v = th.symbols.params[e->sym].value;
      if (v == 0.0) return {};
      return {{Monomial{}, v}};
    }
    case NodeKind::coord: return poly_sym(ctx.intern(SYM_COORD, e->axis));
    case NodeKind::field: return poly_sym(ctx.intern(SYM_FIELD, e->sym));
    case NodeKind::partial: return poly_sym(ctx.intern(SYM_GRAD, e->sym, e->axis));
    case NodeKind::partial2: return poly_sym(ctx.intern(SYM_GRAD2, e->sym, e->axis, e->axis2));
    case NodeKind::sum: {
      Poly out;
      for (auto& k : e->kids) out = poly_add(out, to_poly(k, th, ctx));
      return out;
    }
    case NodeKind::prod: {
      Poly out = poly_one();
      for (auto& k : e->kids) out = poly_mul(out, to_poly(k, th, ctx));
      return out;
    }
    case NodeKind::pow_int: {
      Poly base = to_poly(e->kids[0], th, ctx);
      if (e->exponent >= 0) return poly_pow(base, e->exponent);
      if (base.size() == 1) {
        auto& [m, c] = *base.begin();
        Monomial inv;
        for (auto [sym, pw] : m) inv.push_back({sym, pw * (int)e->exponent});
        return {{inv, std::pow(c, (double)e->exponent)}};
      }
      int a = ctx.intern_atom("inv^" + std::to_string(e->exponent) + "|" + poly_signature(base, ctx), e);
      return poly_sym(ctx.intern(SYM_ATOM, a));
    }
    case NodeKind::exp_fn: {
      Poly arg = to_poly(e->kids[0], th, ctx);
      int a = ctx.intern_atom("exp|" + poly_signature(arg, ctx), e);
      return poly_sym(ctx.intern(SYM_ATOM, a));
    }
  }
  throw std::logic_error("unreachable");
}

Expr poly_to_expr(const Poly& p, const PolyContext& ctx) {
  std::vector<Expr> terms;
  for (auto& [m, c] : p) {
    std::vector<Expr> factors{num(c)};
    for (auto& [sym, pw] : m) {
      auto [tag, a, b, cc] = ctx.sym_list[sym];
      Expr base;
      switch (tag) {
        case SYM_FIELD: base = field(a); break;
        case SYM_GRAD: base = partial(a, b); break;
        case SYM_GRAD2: base = partial2(a, b, cc); break;
        case SYM_COORD: base = coord(a); break;
        case SYM_ATOM: base = ctx.atom_exprs[a]; break;
        default: throw std::logic_error("bad tag");
      }
      factors.push_back(pw == 1 ? base : pow_int(base, pw));
    }
    terms.push_back(prod(std::move(factors)));
  }
  return sum(std::move(terms));
}

double eval_real(const Expr& e, const Theory& th,
                 const std::function<double(const ExprNode&)>& leaf) {
  switch (e->kind) {
    case NodeKind::number: return e->value;
    case NodeKind::param: return th.symbols.params[e->sym].value;
    case NodeKind::coord:
    case NodeKind::field:
    case NodeKind::partial:
    case NodeKind::partial2:
      return leaf(*e);
    case NodeKind::sum: {
      double s = 0;
      for (auto& k : e->kids) s += eval_real(k, th, leaf);
      return s;
    }
    case NodeKind::prod: {
      double s = 1;
      for (auto& k : e->kids) s *= eval_real(k, th, leaf);
      return s;
    }
    case NodeKind::pow_int: return std::pow(eval_real(e->kids[0], th, leaf), (double)e->exponent);
    case NodeKind::exp_fn: return std::exp(eval_real(e->kids[0], th, leaf));
  }
  throw std::logic_error("unreachable");
}

// --- homogeneity -----------------------------------------------------------

std::optional<Rational> detect_homogeneity(const Expr& potential, const Theory& th,
                                           int field_index, int sample_count,
                                           std::uint64_t seed) {
  std::vector<int> comps;
  for (int c = 0; c < th.n_comps(); ++c)
    if (th.symbols.comps[c].field_index == field_index) comps.push_back(c);

  // derivatives of the scaled field are not covered by the definition
  bool has_deriv = false;
  std::function<void(const Expr&)> scan = [&](const Expr& e) {
    if ((e->kind == NodeKind::partial || e->kind == NodeKind::partial2) &&
        std::find(comps.begin(), comps.end(), e->sym) != comps.end())
      has_deriv = true;
    for (auto& k : e->kids) scan(k);
  };
  scan(potential);
  if (has_deriv)
    throw std::invalid_argument("potential contains derivatives of field '" +
                                th.symbols.fields[field_index].name + "'");

  PolyContext ctx;
  Poly p = to_poly(potential, th, ctx);
  double scale = poly_max_abs_coeff(p);
  if (scale == 0.0) return std::nullopt; // zero potential: no single degree

  auto atom_touches_field = [&](int sym) {
    auto [tag, a, b, cc] = ctx.sym_list[sym];
    if (tag != SYM_ATOM) return false;
    bool touches = false;
    std::function<void(const Expr&)> look = [&](const Expr& e) {
      if (e->kind == NodeKind::field &&
          std::find(comps.begin(), comps.end(), e->sym) != comps.end())
        touches = true;
      for (auto& k : e->kids) look(k);
    };
    look(ctx.atom_exprs[a]);
    return touches;
  };

  bool polynomial = true;
  for (auto& [m, c] : p)
    for (auto& [sym, pw] : m)
      if (atom_touches_field(sym)) polynomial = false;

  if (polynomial) {
    std::optional<long> k;
    for (auto& [m, c] : p) {
      if (std::fabs(c) <= 1e-14 * scale) continue;
      long deg = 0;
      for (auto& [sym, pw] : m) {
        auto [tag, a, b, cc] = ctx.sym_list[sym];
        if (tag == SYM_FIELD && std::find(comps.begin(), comps.end(), a) != comps.end())
          deg += pw;
      }
      if (!k) k = deg;
      else if (*k != deg) return std::nullopt;
    }
    if (!k) return std::nullopt;
    return Rational{*k, 1};
  }

  // numeric fallback: fit k from U(s*phi)/U(phi) at random points
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> val(0.5, 1.5), sd(1.2, 2.0);
  std::optional<double> k_num;
  for (int it = 0; it < std::max(sample_count, 1); ++it) {
    std::map<std::pair<int, int>, double> binding; // (kindtag, id-ish) -> value
    double s = sd(rng);
    auto leaf_at = [&](double field_scale) {
      return [&, field_scale](const ExprNode& n) {
        int tag = n.kind == NodeKind::coord ? 0 : n.kind == NodeKind::field ? 1 : 2;
        int id = n.kind == NodeKind::coord ? n.axis : n.sym * 64 + std::max(n.axis, 0) * 8 + std::max(n.axis2, 0);
        auto key = std::make_pair(tag, id);
        auto it2 = binding.find(key);
        if (it2 == binding.end()) it2 = binding.emplace(key, val(rng)).first;
        double v = it2->second;
        if (n.kind == NodeKind::field &&
            std::find(comps.begin(), comps.end(), n.sym) != comps.end())
          v *= field_scale;
        return v;
      };
    };
    double u1 = eval_real(potential, th, leaf_at(1.0));
    double us = eval_real(potential, th, leaf_at(s));
    if (std::fabs(u1) < 1e-300 || us / u1 <= 0.0) return std::nullopt;
    double k_est = std::log(us / u1) / std::log(s);
    if (!k_num) k_num = k_est;
    else if (std::fabs(k_est - *k_num) > 1e-10 * (1.0 + std::fabs(*k_num))) return std::nullopt;
  }
  if (!k_num) return std::nullopt;
  for (long den = 1; den <= 6; ++den) {
    double scaled = *k_num * (double)den;
    long numr = (long)std::llround(scaled);
    if (std::fabs(scaled - (double)numr) <= 1e-8 * den) {
      long g = std::gcd(std::labs(numr), den);
      return Rational{numr / g, den / g};
    }
  }
  return std::nullopt;
}

// --- constant-of-proportionality search -------------------------------------

std::optional<double> check_k_condition(const Theory& th) {
  PolyContext ctx;
  std::vector<std::pair<Poly, Poly>> pairs;
  double scale = 0.0;
  for (int c = 0; c < th.n_comps(); ++c) {
    for (int mu = 0; mu < th.dim; ++mu) {
      Expr lhs = momentum(th, c, mu, /*up=*/false);
      Expr rhs = total_derivative(th.dl_dfield[c], mu, th);
      Poly lp = to_poly(lhs, th, ctx);
      Poly rp = to_poly(rhs, th, ctx);
      scale = std::max({scale, poly_max_abs_coeff(lp), poly_max_abs_coeff(rp)});
      pairs.emplace_back(std::move(lp), std::move(rp));
    }
  }
  if (scale == 0.0) return std::nullopt;
  const double thr = 1e-12 * scale;
  std::optional<double> rho;
  for (auto& [lp, rp] : pairs) {
    std::map<Monomial, std::pair<double, double>> both;
    for (auto& [m, v] : lp) both[m].first = v;
    for (auto& [m, v] : rp) both[m].second = v;
    for (auto& [m, lr] : both) {
      auto [l, r] = lr;
      if (std::fabs(l) <= thr && std::fabs(r) <= thr) continue;
      if (std::fabs(r) <= thr) return std::nullopt;
      double q = l / r;
      if (!rho) rho = q;
      else if (std::fabs(q - *rho) > 1e-9 * (1.0 + std::fabs(*rho))) return std::nullopt;
    }
  }
  return rho;
}

// --- canonical-form recognition ----------------------------------------------

CanonicalForm analyze_canonical(const Theory& th) {
  CanonicalForm out;
  PolyContext ctx;
  Poly lp = to_poly(th.lagrangian, th, ctx);
  if (lp.empty()) {
    out.diagnostic = "Lagrangian is identically zero";
    return out;
  }

  // optional exponential weight: an exp atom with a coordinate-linear
  // exponent that multiplies every monomial exactly once
  std::vector<int> common;
  bool first = true;
  for (auto& [m, c] : lp) {
    std::vector<int> atoms;
    for (auto& [sym, pw] : m) {
      auto [tag, a, b, cc] = ctx.sym_list[sym];
      if (tag == SYM_ATOM && pw == 1) atoms.push_back(sym);
    }
    if (first) { common = atoms; first = false; }
    else {
      std::vector<int> inter;
      for (int s : common)
        if (std::find(atoms.begin(), atoms.end(), s) != atoms.end()) inter.push_back(s);
      common = inter;
    }
    if (common.empty()) break;
  }
  int weight_sym = -1;
  std::vector<double> h(th.dim, 0.0);
  for (int s : common) {
    auto [tag, a, b, cc] = ctx.sym_list[s];
    const Expr& atom = ctx.atom_exprs[a];
    if (atom->kind != NodeKind::exp_fn) continue;
    PolyContext actx;
    Poly arg = to_poly(atom->kids[0], th, actx);
    bool linear = true;
    std::fill(h.begin(), h.end(), 0.0);
    for (auto& [m, c] : arg) {
      if (m.size() != 1 || m[0].second != 1) { linear = false; break; }
      auto [atag, aa, ab, ac] = actx.sym_list[m[0].first];
      if (atag != SYM_COORD) { linear = false; break; }
      h[aa] = c;
    }
    if (linear) { weight_sym = s; break; }
  }

  Poly inner = lp;
  if (weight_sym >= 0) {
    out.weighted = true;
    out.h = h;
    Poly stripped;
    for (auto& [m, c] : lp) {
      Monomial mm;
      for (auto& [sym, pw] : m)
        if (sym != weight_sym) mm.push_back({sym, pw});
      stripped[mm] = c;
    }
    inner = std::move(stripped);
  }

  // split kinetic part from the rest
  Poly kinetic, rest;
  for (auto& [m, c] : inner) {
    bool has_grad = false;
    for (auto& [sym, pw] : m) {
      auto [tag, a, b, cc] = ctx.sym_list[sym];
      if (tag == SYM_GRAD || tag == SYM_GRAD2) has_grad = true;
    }
    (has_grad ? kinetic : rest)[m] = c;
  }

  // expected canonical kinetic term
  Poly expected;
  for (auto& f : th.symbols.fields) {
    for (int mu = 0; mu < th.dim; ++mu) {
      double s = (double)th.metric_sign[mu];
      if (f.complex_pair) {
        Monomial m{{ctx.intern(SYM_GRAD, f.comp_plain, mu), 1},
                   {ctx.intern(SYM_GRAD, f.comp_star, mu), 1}};
        std::sort(m.begin(), m.end());
        expected[m] = s;
      } else {
        Monomial m{{ctx.intern(SYM_GRAD, f.comp_plain, mu), 2}};
        expected[m] = 0.5 * s;
      }
    }
  }
  Poly diff = poly_add(kinetic, poly_scale(expected, -1.0));
  double ksc = std::max(poly_max_abs_coeff(expected), 1.0);
  for (auto& [m, c] : diff) {
    if (std::fabs(c) > 1e-12 * ksc) {
      out.diagnostic = "kinetic term is not in canonical form";
      return out;
    }
  }

  Poly upoly = poly_scale(rest, -1.0);
  for (auto& [m, c] : upoly)
    for (auto& [sym, pw] : m) {
      auto [tag, a, b, cc] = ctx.sym_list[sym];
      if (tag == SYM_COORD) out.potential_coord_free = false;
    }
  out.potential = poly_to_expr(upoly, ctx);
  out.inner = poly_to_expr(inner, ctx);
  out.canonical = true;
  return out;
}

} // namespace fieldlab
