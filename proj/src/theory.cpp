#include "theory.hpp"

namespace fieldlab {

double Theory::param_value(const std::string& name) const {
  int id = symbols.find_param(name);
  if (id < 0) throw std::runtime_error("unknown parameter '" + name + "'");
  return symbols.params[id].value;
}

int Theory::conjugate_comp(int comp) const {
  const auto& c = symbols.comps[comp];
  const auto& f = symbols.fields[c.field_index];
  if (!f.complex_pair) return comp;
  return c.star ? f.comp_plain : f.comp_star;
}

Theory make_theory(const std::string& text, int dim,
                   const std::vector<std::pair<std::string, double>>& params) {
  Theory th;
  th.dim = dim;
  th.metric_sign.assign(dim, -1);
  th.metric_sign[0] = 1;
  th.surface = parse_lagrangian_text(text, dim, params, th.symbols);
  th.lagrangian = lower(th.surface, dim, th.metric_sign);
  th.spacetime_independent = !contains(th.surface, NodeKind::coord);

  const int nc = th.n_comps();
  th.dl_dfield.resize(nc);
  th.dl_dgrad.assign(nc, std::vector<Expr>(dim));
  th.euler_lagrange.resize(nc);
  for (int c = 0; c < nc; ++c) {
    th.dl_dfield[c] = diff_field(th.lagrangian, c);
    for (int mu = 0; mu < dim; ++mu)
      th.dl_dgrad[c][mu] = diff_grad(th.lagrangian, c, mu);
    std::vector<Expr> div_terms;
    for (int mu = 0; mu < dim; ++mu)
      div_terms.push_back(neg(total_derivative(th.dl_dgrad[c][mu], mu, th)));
    div_terms.push_back(th.dl_dfield[c]);
    th.euler_lagrange[c] = sum(std::move(div_terms));
  }
  return th;
}

// --- generic leaf-wise differentiation -----------------------------------

namespace {

Expr diff_rec(const Expr& e, const std::function<Expr(const ExprNode&)>& leaf) {
  switch (e->kind) {
    case NodeKind::number:
    case NodeKind::param:
    case NodeKind::coord:
    case NodeKind::field:
    case NodeKind::partial:
    case NodeKind::partial2:
      return leaf(*e);
    case NodeKind::sum: {
      std::vector<Expr> kids;
      for (auto& k : e->kids) kids.push_back(diff_rec(k, leaf));
      return sum(std::move(kids));
    }
    case NodeKind::prod: {
      std::vector<Expr> terms;
      for (size_t i = 0; i < e->kids.size(); ++i) {
        Expr di = diff_rec(e->kids[i], leaf);
        if (is_zero(di)) continue;
        std::vector<Expr> factors;
        for (size_t j = 0; j < e->kids.size(); ++j)
          factors.push_back(j == i ? di : e->kids[j]);
        terms.push_back(prod(std::move(factors)));
      }
      return sum(std::move(terms));
    }
    case NodeKind::pow_int: {
      Expr db = diff_rec(e->kids[0], leaf);
      if (is_zero(db)) return num(0.0);
      return prod({num((double)e->exponent), pow_int(e->kids[0], e->exponent - 1), db});
    }
    case NodeKind::exp_fn: {
      Expr da = diff_rec(e->kids[0], leaf);
      if (is_zero(da)) return num(0.0);
      return prod({e, da});
    }
  }
  throw std::logic_error("unreachable");
}

} // namespace

Expr diff_field(const Expr& e, int comp) {
  return diff_rec(e, [comp](const ExprNode& n) {
    return num(n.kind == NodeKind::field && n.sym == comp ? 1.0 : 0.0);
  });
}

Expr diff_grad(const Expr& e, int comp, int axis) {
  return diff_rec(e, [comp, axis](const ExprNode& n) {
    return num(n.kind == NodeKind::partial && n.sym == comp && n.axis == axis ? 1.0 : 0.0);
  });
}

Expr diff_grad2(const Expr& e, int comp, int a, int b) {
  int lo = std::min(a, b), hi = std::max(a, b);
  return diff_rec(e, [comp, lo, hi](const ExprNode& n) {
    return num(n.kind == NodeKind::partial2 && n.sym == comp && n.axis == lo && n.axis2 == hi
                   ? 1.0
                   : 0.0);
  });
}

Expr diff_coord_explicit(const Expr& e, int axis) {
  return diff_rec(e, [axis](const ExprNode& n) {
    return num(n.kind == NodeKind::coord && n.axis == axis ? 1.0 : 0.0);
  });
}

Expr total_derivative(const Expr& e, int axis, const Theory& th) {
  if (contains_grad2(e))
    throw std::logic_error("total_derivative on an expression with second derivatives");
  std::vector<Expr> terms{diff_coord_explicit(e, axis)};
  for (int c = 0; c < th.n_comps(); ++c) {
    Expr df = diff_field(e, c);
    if (!is_zero(df)) terms.push_back(prod({df, partial(c, axis)}));
    for (int nu = 0; nu < th.dim; ++nu) {
      Expr dg = diff_grad(e, c, nu);
      if (!is_zero(dg)) terms.push_back(prod({dg, partial2(c, axis, nu)}));
    }
  }
  return sum(std::move(terms));
}

Expr momentum(const Theory& th, int comp, int axis, bool up) {
  Expr m = th.dl_dgrad[comp][axis];
  if (!up && th.metric_sign[axis] < 0) return neg(m);
  return m;
}

Expr rewrite_leaves(const Expr& e, const LeafRewrite& f) {
  switch (e->kind) {
    case NodeKind::number:
    case NodeKind::param:
    case NodeKind::coord:
    case NodeKind::field:
    case NodeKind::partial:
    case NodeKind::partial2: {
      Expr r = f(*e);
      return r ? r : e;
    }
    case NodeKind::sum: {
      std::vector<Expr> kids;
      for (auto& k : e->kids) kids.push_back(rewrite_leaves(k, f));
      return sum(std::move(kids));
    }
    case NodeKind::prod: {
      std::vector<Expr> kids;
      for (auto& k : e->kids) kids.push_back(rewrite_leaves(k, f));
      return prod(std::move(kids));
    }
    case NodeKind::pow_int:
      return pow_int(rewrite_leaves(e->kids[0], f), e->exponent);
    case NodeKind::exp_fn:
      return exp_fn(rewrite_leaves(e->kids[0], f));
  }
  throw std::logic_error("unreachable");
}

bool contains_grad2(const Expr& e) { return contains(e, NodeKind::partial2); }

bool contains_any_grad(const Expr& e) {
  return contains(e, NodeKind::partial) || contains(e, NodeKind::partial2);
}

} // namespace fieldlab
