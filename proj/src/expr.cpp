#include "expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

namespace fieldlab {

namespace {

Expr make(NodeKind k) {
  auto n = std::make_shared<ExprNode>();
  n->kind = k;
  return n;
}

} // namespace

Expr num(double v) {
  auto n = std::make_shared<ExprNode>();
  n->kind = NodeKind::number;
  n->value = v;
  return n;
}

Expr param(int id) {
  auto n = std::make_shared<ExprNode>();
  n->kind = NodeKind::param;
  n->sym = id;
  return n;
}

Expr coord(int axis) {
  auto n = std::make_shared<ExprNode>();
  n->kind = NodeKind::coord;
  n->axis = axis;
  return n;
}

Expr field(int comp) {
  auto n = std::make_shared<ExprNode>();
  n->kind = NodeKind::field;
  n->sym = comp;
  return n;
}

Expr partial(int comp, int axis) {
  auto n = std::make_shared<ExprNode>();
  n->kind = NodeKind::partial;
  n->sym = comp;
  n->axis = axis;
  return n;
}

Expr partial_named(int comp, std::string index, bool contravariant) {
  auto n = std::make_shared<ExprNode>();
  n->kind = NodeKind::partial;
  n->sym = comp;
  n->index_name = std::move(index);
  n->contravariant = contravariant;
  return n;
}

Expr partial_concrete(int comp, int axis, bool contravariant) {
  auto n = std::make_shared<ExprNode>();
  n->kind = NodeKind::partial;
  n->sym = comp;
  n->axis = axis;
  n->contravariant = contravariant;
  return n;
}

Expr partial2(int comp, int a, int b) {
  auto n = std::make_shared<ExprNode>();
  n->kind = NodeKind::partial2;
  n->sym = comp;
  n->axis = std::min(a, b);
  n->axis2 = std::max(a, b);
  return n;
}

bool is_zero(const Expr& e) { return e->kind == NodeKind::number && e->value == 0.0; }
bool is_one(const Expr& e) { return e->kind == NodeKind::number && e->value == 1.0; }

Expr sum(std::vector<Expr> kids) {
  std::vector<Expr> flat;
  double acc = 0.0;
  bool have_const = false;
  for (auto& k : kids) {
    if (k->kind == NodeKind::sum) {
      for (auto& g : k->kids) {
        if (g->kind == NodeKind::number) { acc += g->value; have_const = true; }
        else flat.push_back(g);
      }
    } else if (k->kind == NodeKind::number) {
      acc += k->value;
      have_const = true;
    } else {
      flat.push_back(k);
    }
  }
  if (have_const && acc != 0.0) flat.push_back(num(acc));
  if (flat.empty()) return num(0.0);
  if (flat.size() == 1) return flat[0];
  auto n = make(NodeKind::sum);
  const_cast<ExprNode*>(n.get())->kids = std::move(flat);
  return n;
}

Expr prod(std::vector<Expr> kids) {
  std::vector<Expr> flat;
  double coeff = 1.0;
  for (auto& k : kids) {
    if (k->kind == NodeKind::prod) {
      for (auto& g : k->kids) {
        if (g->kind == NodeKind::number) coeff *= g->value;
        else flat.push_back(g);
      }
    } else if (k->kind == NodeKind::number) {
      coeff *= k->value;
    } else {
      flat.push_back(k);
    }
  }
  if (coeff == 0.0) return num(0.0);
  if (flat.empty()) return num(coeff);
  std::vector<Expr> out;
  if (coeff != 1.0) out.push_back(num(coeff));
  out.insert(out.end(), flat.begin(), flat.end());
  if (out.size() == 1) return out[0];
  auto n = make(NodeKind::prod);
  const_cast<ExprNode*>(n.get())->kids = std::move(out);
  return n;
}

Expr pow_int(Expr base, long n) {
  if (n == 0) return num(1.0);
  if (n == 1) return base;
  if (base->kind == NodeKind::number) return num(std::pow(base->value, (double)n));
  if (base->kind == NodeKind::pow_int) {
    long m = base->exponent * n;
    return pow_int(base->kids[0], m);
  }
  auto node = make(NodeKind::pow_int);
  auto* p = const_cast<ExprNode*>(node.get());
  p->kids = {std::move(base)};
  p->exponent = n;
  return node;
}

Expr exp_fn(Expr arg) {
  if (arg->kind == NodeKind::number) return num(std::exp(arg->value));
  auto node = make(NodeKind::exp_fn);
  const_cast<ExprNode*>(node.get())->kids = {std::move(arg)};
  return node;
}

Expr neg(Expr e) { return prod({num(-1.0), std::move(e)}); }

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.get() == b.get()) return true;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case NodeKind::number: return a->value == b->value;
    case NodeKind::param: return a->sym == b->sym;
    case NodeKind::coord: return a->axis == b->axis;
    case NodeKind::field: return a->sym == b->sym;
    case NodeKind::partial:
      return a->sym == b->sym && a->axis == b->axis &&
             a->contravariant == b->contravariant && a->index_name == b->index_name;
    case NodeKind::partial2:
      return a->sym == b->sym && a->axis == b->axis && a->axis2 == b->axis2;
    case NodeKind::pow_int:
      if (a->exponent != b->exponent) return false;
      break;
    default: break;
  }
  if (a->kids.size() != b->kids.size()) return false;
  for (size_t i = 0; i < a->kids.size(); ++i)
    if (!structurally_equal(a->kids[i], b->kids[i])) return false;
  return true;
}

bool contains(const Expr& e, NodeKind kind) {
  if (e->kind == kind) return true;
  for (auto& k : e->kids)
    if (contains(k, kind)) return true;
  return false;
}

int SymbolTable::find_param(const std::string& n) const {
  for (size_t i = 0; i < params.size(); ++i)
    if (params[i].name == n) return (int)i;
  return -1;
}

int SymbolTable::find_comp(const std::string& n) const {
  for (size_t i = 0; i < comps.size(); ++i)
    if (comps[i].name == n) return (int)i;
  return -1;
}

// --- tokenizer ---------------------------------------------------------

namespace {

enum class Tok { ident, number, plus, minus, star, slash, caret, lparen, rparen, comma, end };

struct Token {
  Tok kind;
  std::string text;
  double value = 0.0;
  int line = 1, column = 1;
};

std::vector<Token> tokenize(const std::string& src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto push = [&](Tok k, std::string t, double v = 0.0) {
    out.push_back({k, std::move(t), v, line, col});
  };
  while (i < src.size()) {
    char c = src[i];
    if (c == '\n') { ++line; col = 1; ++i; continue; }
    if (c == ' ' || c == '\t' || c == '\r') { ++col; ++i; continue; }
    int tok_col = col;
    if (std::isalpha((unsigned char)c) || c == '_') {
      size_t j = i;
      while (j < src.size() && (std::isalnum((unsigned char)src[j]) || src[j] == '_')) ++j;
      out.push_back({Tok::ident, src.substr(i, j - i), 0.0, line, tok_col});
      col += (int)(j - i);
      i = j;
      continue;
    }
    if (std::isdigit((unsigned char)c) || (c == '.' && i + 1 < src.size() && std::isdigit((unsigned char)src[i + 1]))) {
      const char* begin = src.c_str() + i;
      char* endp = nullptr;
      double v = std::strtod(begin, &endp);
      size_t len = (size_t)(endp - begin);
      out.push_back({Tok::number, src.substr(i, len), v, line, tok_col});
      col += (int)len;
      i += len;
      continue;
    }
    switch (c) {
      case '+': push(Tok::plus, "+"); break;
      case '-': push(Tok::minus, "-"); break;
      case '*': push(Tok::star, "*"); break;
      case '/': push(Tok::slash, "/"); break;
      case '^': push(Tok::caret, "^"); break;
      case '(': push(Tok::lparen, "("); break;
      case ')': push(Tok::rparen, ")"); break;
      case ',': push(Tok::comma, ","); break;
      default:
        throw ParseError(std::string("unexpected character '") + c + "'", line, col);
    }
    ++col;
    ++i;
  }
  out.push_back({Tok::end, "", 0.0, line, col});
  return out;
}

bool is_coord_name(const std::string& s, int& axis) {
  if (s.size() < 2 || s[0] != 'x') return false;
  for (size_t i = 1; i < s.size(); ++i)
    if (!std::isdigit((unsigned char)s[i])) return false;
  axis = std::atoi(s.c_str() + 1);
  return true;
}

std::string strip_star(const std::string& s) {
  if (s.size() > 4 && s.compare(s.size() - 4, 4, "star") == 0) return s.substr(0, s.size() - 4);
  return s;
}

struct Parser {
  const std::vector<Token>& toks;
  size_t pos = 0;
  int dim;
  SymbolTable& sym;
  const std::set<std::string>& field_bases;
  std::map<std::string, double> values;

  const Token& peek() const { return toks[pos]; }
  const Token& next() { return toks[pos++]; }
  [[noreturn]] void fail(const std::string& msg, const Token& t) {
    throw ParseError(msg, t.line, t.column);
  }
  bool accept(Tok k) {
    if (toks[pos].kind == k) { ++pos; return true; }
    return false;
  }
  void expect(Tok k, const char* what) {
    if (!accept(k)) fail(std::string("expected ") + what, peek());
  }

  int component_id(const std::string& name, const Token& t) {
    int id = sym.find_comp(name);
    if (id >= 0) return id;
    std::string base = strip_star(name);
    bool star = base != name;
    int fidx = -1;
    for (size_t i = 0; i < sym.fields.size(); ++i)
      if (sym.fields[i].name == base) fidx = (int)i;
    if (fidx < 0) {
      sym.fields.push_back({base, false, -1, -1});
      fidx = (int)sym.fields.size() - 1;
    }
    sym.comps.push_back({name, fidx, star});
    id = (int)sym.comps.size() - 1;
    if (star) {
      sym.fields[fidx].complex_pair = true;
      sym.fields[fidx].comp_star = id;
    } else {
      sym.fields[fidx].comp_plain = id;
    }
    (void)t;
    return id;
  }

  int param_id(const std::string& name, const Token& t) {
    int id = sym.find_param(name);
    if (id >= 0) return id;
    auto it = values.find(name);
    if (it == values.end())
      fail("unbound parameter '" + name + "' (no value provided)", t);
    sym.params.push_back({name, it->second});
    return (int)sym.params.size() - 1;
  }

  Expr parse_expr() {
    bool negate = accept(Tok::minus);
    Expr e = parse_term();
    if (negate) e = neg(e);
    std::vector<Expr> terms{e};
    for (;;) {
      if (accept(Tok::plus)) terms.push_back(parse_term());
      else if (accept(Tok::minus)) terms.push_back(neg(parse_term()));
      else break;
    }
    Expr out = terms.size() == 1 ? terms[0] : sum(std::move(terms));
    return out;
  }

  Expr parse_term() {
    std::vector<Expr> factors{parse_factor()};
    for (;;) {
      if (accept(Tok::star)) factors.push_back(parse_factor());
      else if (accept(Tok::slash)) factors.push_back(pow_int(parse_factor(), -1));
      else break;
    }
    Expr t = factors.size() == 1 ? factors[0] : prod(std::move(factors));
    check_term_indices(t);
    return t;
  }

  Expr parse_factor() {
    Expr a = parse_atom();
    if (accept(Tok::caret)) {
      bool negexp = accept(Tok::minus);
      const Token& t = peek();
      if (t.kind != Tok::number || t.text.find_first_of(".eE") != std::string::npos)
        fail("exponent must be an integer", t);
      next();
      long n = (long)t.value;
      return pow_int(a, negexp ? -n : n);
    }
    return a;
  }

  Expr parse_atom() {
    const Token& t = peek();
    if (t.kind == Tok::number) { next(); return num(t.value); }
    if (t.kind == Tok::lparen) {
      next();
      Expr e = parse_expr();
      expect(Tok::rparen, "')'");
      return e;
    }
    if (t.kind == Tok::ident) {
      next();
      if (t.text == "d" && peek().kind == Tok::lparen) return parse_partial(t);
      if (t.text == "exp" && peek().kind == Tok::lparen) {
        next();
        Expr e = parse_expr();
        expect(Tok::rparen, "')'");
        return exp_fn(e);
      }
      int axis;
      if (is_coord_name(t.text, axis)) {
        if (axis >= dim)
          fail("coordinate '" + t.text + "' out of range for dimension " + std::to_string(dim), t);
        return coord(axis);
      }
      if (field_bases.count(strip_star(t.text)))
        return field(component_id(t.text, t));
      return param(param_id(t.text, t));
    }
    fail("expected an expression", t);
  }

  Expr parse_partial(const Token& dtok) {
    expect(Tok::lparen, "'('");
    const Token& ft = peek();
    if (ft.kind != Tok::ident) fail("expected field name in d(...)", ft);
    next();
    if (!field_bases.count(strip_star(ft.text)))
      fail("'" + ft.text + "' is not a field", ft);
    int comp = component_id(ft.text, ft);
    expect(Tok::comma, "','");
    bool contravariant = false;
    if (peek().kind == Tok::caret) { next(); contravariant = true; }
    const Token& it = peek();
    Expr result;
    if (it.kind == Tok::ident) {
      next();
      int ax;
      if (is_coord_name(it.text, ax))
        fail("index may not be a coordinate name", it);
      result = partial_named(comp, it.text, contravariant);
    } else if (it.kind == Tok::number) {
      next();
      if (it.text.find_first_of(".eE") != std::string::npos)
        fail("concrete index must be an integer", it);
      int ax = (int)it.value;
      if (ax < 0 || ax >= dim)
        fail("index " + it.text + " out of range for dimension " + std::to_string(dim), it);
      result = partial_concrete(comp, ax, contravariant);
    } else {
      fail("expected an index in d(...)", it);
    }
    expect(Tok::rparen, "')'");
    (void)dtok;
    return result;
  }

  // Collect named indices from the direct factors of a term; each must occur
  // exactly twice, once covariant and once contravariant.  Sums, exp
  // arguments, and nested products start fresh scopes of their own.
  void gather_named(const Expr& e, std::map<std::string, std::pair<int, int>>& counts) {
    switch (e->kind) {
      case NodeKind::partial:
        if (!e->index_name.empty()) {
          auto& c = counts[e->index_name];
          if (e->contravariant) c.second++;
          else c.first++;
        }
        return;
      case NodeKind::pow_int: {
        // phi_mu^2 counts the index |exponent| times at the same variance
        std::map<std::string, std::pair<int, int>> inner;
        gather_named(e->kids[0], inner);
        long n = std::labs(e->exponent);
        for (auto& [k, v] : inner) {
          counts[k].first += (int)n * v.first;
          counts[k].second += (int)n * v.second;
        }
        return;
      }
      case NodeKind::prod:
        for (auto& k : e->kids) gather_named(k, counts);
        return;
      default:
        return; // sum/exp/leaf: separate scope or nothing to collect
    }
  }

  void check_term_indices(const Expr& t) {
    std::map<std::string, std::pair<int, int>> counts;
    gather_named(t, counts);
    for (auto& [name, c] : counts) {
      auto [down, up] = c;
      if (down == 1 && up == 1) continue;
      if (down == 2 && up == 0)
        throw ParseError("dummy index '" + name + "' appears twice covariant", peek().line, peek().column);
      if (down == 0 && up == 2)
        throw ParseError("dummy index '" + name + "' appears twice contravariant", peek().line, peek().column);
      if (down + up == 1)
        throw ParseError("free index '" + name + "' left over (appears once)", peek().line, peek().column);
      throw ParseError("dummy index '" + name + "' appears " + std::to_string(down + up) +
                           " times in one term",
                       peek().line, peek().column);
    }
  }
};

} // namespace

Expr parse_lagrangian_text(const std::string& text, int dim,
                           const std::vector<std::pair<std::string, double>>& param_values,
                           SymbolTable& symbols) {
  if (dim < 1) throw ParseError("spacetime dimension must be >= 1", 1, 1);
  auto toks = tokenize(text);

  // prescan: identifiers appearing under d(...) define the field set
  std::set<std::string> bases;
  for (size_t i = 0; i + 2 < toks.size(); ++i) {
    if (toks[i].kind == Tok::ident && toks[i].text == "d" &&
        toks[i + 1].kind == Tok::lparen && toks[i + 2].kind == Tok::ident)
      bases.insert(strip_star(toks[i + 2].text));
  }
  if (bases.empty())
    throw ParseError("no field found: at least one d(field,index) term is required", 1, 1);

  Parser p{toks, 0, dim, symbols, bases, {}};
  for (auto& [k, v] : param_values) p.values[k] = v;
  Expr e = p.parse_expr();
  if (p.peek().kind != Tok::end)
    throw ParseError("unexpected trailing input '" + p.peek().text + "'", p.peek().line, p.peek().column);

  // a conjugate component without its partner would make the variational
  // bookkeeping ill-defined
  for (auto& f : symbols.fields) {
    if (f.complex_pair && (f.comp_plain < 0 || f.comp_star < 0))
      throw ParseError("complex field '" + f.name + "' must use both '" + f.name + "' and '" +
                           f.name + "star'",
                       1, 1);
  }
  return e;
}

// --- printing ----------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

enum Prec { P_SUM = 0, P_PROD = 1, P_POW = 2, P_ATOM = 3 };

void print(const Expr& e, const SymbolTable& s, std::string& out, int parent_prec);

void print_product(const Expr& e, const SymbolTable& s, std::string& out) {
  bool first = true;
  for (auto& k : e->kids) {
    bool div = k->kind == NodeKind::pow_int && k->exponent == -1;
    if (!first) out += div ? "/" : "*";
    else if (div) out += "1/";
    if (div) print(k->kids[0], s, out, P_POW);
    else print(k, s, out, P_PROD);
    first = false;
  }
}

void print(const Expr& e, const SymbolTable& s, std::string& out, int parent_prec) {
  switch (e->kind) {
    case NodeKind::number: {
      bool needs_paren = e->value < 0 && parent_prec > P_SUM;
      if (needs_paren) out += "(";
      out += format_double(e->value);
      if (needs_paren) out += ")";
      return;
    }
    case NodeKind::param: out += s.params[e->sym].name; return;
    case NodeKind::coord: out += "x" + std::to_string(e->axis); return;
    case NodeKind::field: out += s.comps[e->sym].name; return;
    case NodeKind::partial:
      out += "d(" + s.comps[e->sym].name + ",";
      if (e->contravariant) out += "^";
      if (e->index_name.empty()) out += std::to_string(e->axis);
      else out += e->index_name;
      out += ")";
      return;
    case NodeKind::partial2:
      out += "dd(" + s.comps[e->sym].name + "," + std::to_string(e->axis) + "," +
             std::to_string(e->axis2) + ")";
      return;
    case NodeKind::exp_fn:
      out += "exp(";
      print(e->kids[0], s, out, P_SUM);
      out += ")";
      return;
    case NodeKind::pow_int: {
      if (parent_prec > P_POW) out += "(";
      print(e->kids[0], s, out, P_ATOM);
      out += "^" + std::to_string(e->exponent);
      if (parent_prec > P_POW) out += ")";
      return;
    }
    case NodeKind::prod: {
      // pull a leading -1 out as a sign where the context allows it
      if (parent_prec > P_PROD) out += "(";
      print_product(e, s, out);
      if (parent_prec > P_PROD) out += ")";
      return;
    }
    case NodeKind::sum: {
      if (parent_prec > P_SUM) out += "(";
      bool first = true;
      for (auto& k : e->kids) {
        // render prod(-c, ...) and negative numbers with a minus sign
        bool negative = false;
        Expr body = k;
        if (k->kind == NodeKind::number && k->value < 0) {
          negative = true;
          body = num(-k->value);
        } else if (k->kind == NodeKind::prod && k->kids[0]->kind == NodeKind::number &&
                   k->kids[0]->value < 0) {
          negative = true;
          std::vector<Expr> rest(k->kids.begin(), k->kids.end());
          rest[0] = num(-rest[0]->value);
          body = prod(std::move(rest));
        }
        if (first) out += negative ? "-" : "";
        else out += negative ? " - " : " + ";
        print(body, s, out, P_PROD);
        first = false;
      }
      if (parent_prec > P_SUM) out += ")";
      return;
    }
  }
}

} // namespace

std::string to_text(const Expr& e, const SymbolTable& symbols) {
  std::string out;
  print(e, symbols, out, P_SUM);
  return out;
}

// --- lowering ----------------------------------------------------------

namespace {

Expr substitute_index(const Expr& e, const std::string& name, int axis,
                      const std::vector<int>& metric_sign) {
  switch (e->kind) {
    case NodeKind::partial:
      if (e->index_name == name && !name.empty()) {
        Expr p = partial(e->sym, axis);
        if (e->contravariant && metric_sign[axis] < 0) return neg(p);
        return p;
      }
      return e;
    case NodeKind::pow_int: {
      Expr b = substitute_index(e->kids[0], name, axis, metric_sign);
      if (b.get() == e->kids[0].get()) return e;
      return pow_int(b, e->exponent);
    }
    case NodeKind::prod: {
      std::vector<Expr> kids;
      bool changed = false;
      for (auto& k : e->kids) {
        Expr nk = substitute_index(k, name, axis, metric_sign);
        changed |= nk.get() != k.get();
        kids.push_back(nk);
      }
      if (!changed) return e;
      return prod(std::move(kids));
    }
    default:
      return e; // named indices never escape into sums/exp by construction
  }
}

void collect_names(const Expr& e, std::set<std::string>& names) {
  switch (e->kind) {
    case NodeKind::partial:
      if (!e->index_name.empty()) names.insert(e->index_name);
      return;
    case NodeKind::pow_int:
    case NodeKind::prod:
      for (auto& k : e->kids) collect_names(k, names);
      return;
    default:
      return;
  }
}

} // namespace

Expr lower(const Expr& e, int dim, const std::vector<int>& metric_sign) {
  switch (e->kind) {
    case NodeKind::number:
    case NodeKind::param:
    case NodeKind::coord:
    case NodeKind::field:
    case NodeKind::partial2:
      return e;
    case NodeKind::partial: {
      if (!e->index_name.empty())
        throw std::logic_error("unbound named index '" + e->index_name + "' during lowering");
      Expr p = partial(e->sym, e->axis);
      if (e->contravariant && metric_sign[e->axis] < 0) return neg(p);
      return p;
    }
    case NodeKind::sum: {
      std::vector<Expr> kids;
      for (auto& k : e->kids) kids.push_back(lower(k, dim, metric_sign));
      return sum(std::move(kids));
    }
    case NodeKind::exp_fn:
      return exp_fn(lower(e->kids[0], dim, metric_sign));
    case NodeKind::pow_int:
      return pow_int(lower(e->kids[0], dim, metric_sign), e->exponent);
    case NodeKind::prod: {
      std::set<std::string> names;
      collect_names(e, names);
      if (!names.empty()) {
        // expand one contraction, then lower the resulting sum (handles the rest)
        const std::string n = *names.begin();
        std::vector<Expr> terms;
        for (int ax = 0; ax < dim; ++ax)
          terms.push_back(substitute_index(e, n, ax, metric_sign));
        return lower(sum(std::move(terms)), dim, metric_sign);
      }
      std::vector<Expr> kids;
      for (auto& k : e->kids) kids.push_back(lower(k, dim, metric_sign));
      return prod(std::move(kids));
    }
  }
  throw std::logic_error("unreachable");
}

} // namespace fieldlab
