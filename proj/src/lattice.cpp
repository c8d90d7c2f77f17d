#include "lattice.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fieldlab {

std::shared_ptr<const Grid> Grid::make(std::vector<int> shape, std::vector<double> spacing,
                                       std::vector<double> origin) {
  auto g = std::make_shared<Grid>();
  g->dim = (int)shape.size();
  if (g->dim < 1) throw std::invalid_argument("grid needs at least one axis");
  if (spacing.size() != shape.size()) throw std::invalid_argument("spacing/shape size mismatch");
  if (origin.empty()) origin.assign(g->dim, 0.0);
  for (int a = 0; a < g->dim; ++a) {
    if (shape[a] < 4) throw std::invalid_argument("all axis extents must be >= 4");
    if (spacing[a] <= 0) throw std::invalid_argument("spacings must be positive");
  }
  g->shape = std::move(shape);
  g->spacing = std::move(spacing);
  g->origin = std::move(origin);
  g->stride.assign(g->dim, 1);
  for (int a = g->dim - 2; a >= 0; --a) g->stride[a] = g->stride[a + 1] * g->shape[a + 1];
  g->n_sites = g->stride[0] * g->shape[0];
  return g;
}

long Grid::site_index(const std::vector<int>& idx) const {
  long s = 0;
  for (int a = 0; a < dim; ++a) s += stride[a] * idx[a];
  return s;
}

double Grid::cell_volume() const {
  double v = 1;
  for (double h : spacing) v *= h;
  return v;
}

double Grid::spatial_cell() const {
  double v = 1;
  for (int a = 1; a < dim; ++a) v *= spacing[a];
  return v;
}

Plane central_difference(const Plane& f, int axis, Variance var) {
  const Grid& g = *f.grid;
  if (axis < 0 || axis >= g.dim) throw std::invalid_argument("axis out of range");
  Plane out(f.grid);
  const long st = g.stride[axis];
  const int n = g.shape[axis];
  const double inv2h = 1.0 / (2.0 * g.spacing[axis]);
  const double sign = (var == Variance::up && axis > 0) ? -1.0 : 1.0;
  for (long i = 0; i < g.n_sites; ++i) {
    int ai = g.axis_index(i, axis);
    double d;
    if (axis == 0) {
      if (ai == 0) d = (-3.0 * f[i] + 4.0 * f[i + st] - f[i + 2 * st]) * inv2h;
      else if (ai == n - 1) d = (3.0 * f[i] - 4.0 * f[i - st] + f[i - 2 * st]) * inv2h;
      else d = (f[i + st] - f[i - st]) * inv2h;
    } else {
      long up = (ai == n - 1) ? i - (long)(n - 1) * st : i + st;
      long dn = (ai == 0) ? i + (long)(n - 1) * st : i - st;
      d = (f[up] - f[dn]) * inv2h;
    }
    out[i] = sign * d;
  }
  return out;
}

Plane second_difference(const Plane& f, int a, int b) {
  const Grid& g = *f.grid;
  if (a != b) return central_difference(central_difference(f, a, Variance::down), b, Variance::down);
  Plane out(f.grid);
  const long st = g.stride[a];
  const int n = g.shape[a];
  const double invh2 = 1.0 / (g.spacing[a] * g.spacing[a]);
  for (long i = 0; i < g.n_sites; ++i) {
    int ai = g.axis_index(i, a);
    double d;
    if (a == 0) {
      // interior central; first-order one-sided at the two time edges (edge
      // slices are excluded from every reported norm)
      if (ai == 0) d = (2.0 * f[i] - 5.0 * f[i + st] + 4.0 * f[i + 2 * st] - f[i + 3 * st]) * invh2;
      else if (ai == n - 1)
        d = (2.0 * f[i] - 5.0 * f[i - st] + 4.0 * f[i - 2 * st] - f[i - 3 * st]) * invh2;
      else d = (f[i + st] - 2.0 * f[i] + f[i - st]) * invh2;
    } else {
      long up = (ai == n - 1) ? i - (long)(n - 1) * st : i + st;
      long dn = (ai == 0) ? i + (long)(n - 1) * st : i - st;
      d = (f[up] - 2.0 * f[i] + f[dn]) * invh2;
    }
    out[i] = d;
  }
  return out;
}

Plane divergence(const VectorField& j) {
  Plane out(j.grid);
  for (int mu = 0; mu < j.grid->dim; ++mu) {
    Plane d = central_difference(j.comp[mu], mu, Variance::down);
    for (long i = 0; i < j.grid->n_sites; ++i) out[i] += d[i];
  }
  return out;
}

double slice_integral(const Plane& f, int t) {
  const Grid& g = *f.grid;
  const long per = g.slice_sites();
  const long off = (long)t * per;
  double s = 0;
  for (long i = 0; i < per; ++i) s += f[off + i];
  return s * g.spatial_cell();
}

double volume_integral(const Plane& f, const SlabRegion& slab) {
  const Grid& g = *f.grid;
  if (slab.t0 >= slab.t1) throw std::invalid_argument("empty slab (t0 >= t1)");
  if (slab.t0 < 0 || slab.t1 >= g.shape[0]) throw std::invalid_argument("slab outside grid");
  double s = 0;
  for (int t = slab.t0; t <= slab.t1; ++t) {
    double w = (t == slab.t0 || t == slab.t1) ? 0.5 : 1.0;
    s += w * slice_integral(f, t);
  }
  return s * g.spacing[0];
}

double surface_flux(const VectorField& j, const SlabRegion& slab) {
  const Grid& g = *j.grid;
  if (slab.t0 >= slab.t1) throw std::invalid_argument("empty slab (t0 >= t1)");
  if (slab.t0 < 0 || slab.t1 >= g.shape[0]) throw std::invalid_argument("slab outside grid");
  return slice_integral(j.comp[0], slab.t1) - slice_integral(j.comp[0], slab.t0);
}

double l2_norm(const Plane& f, int ta, int tb) {
  const Grid& g = *f.grid;
  const long per = g.slice_sites();
  double s = 0;
  for (int t = ta; t < tb; ++t)
    for (long i = 0; i < per; ++i) {
      double v = f[(long)t * per + i];
      s += v * v;
    }
  return std::sqrt(s * g.cell_volume());
}

double linf_norm(const Plane& f, int ta, int tb) {
  const Grid& g = *f.grid;
  const long per = g.slice_sites();
  double m = 0;
  for (int t = ta; t < tb; ++t)
    for (long i = 0; i < per; ++i) m = std::max(m, std::fabs(f[(long)t * per + i]));
  return m;
}

bool all_finite(const Plane& f) {
  for (double v : f.v)
    if (!std::isfinite(v)) return false;
  return true;
}

void fill_plane(Plane& f, const std::function<double(const std::vector<double>&)>& fn) {
  const Grid& g = *f.grid;
  std::vector<double> x(g.dim);
  for (long i = 0; i < g.n_sites; ++i) {
    for (int a = 0; a < g.dim; ++a) x[a] = g.coordinate(a, g.axis_index(i, a));
    f[i] = fn(x);
  }
}

void save_planes(const std::string& base, const std::vector<Plane>& planes,
                 const std::vector<std::string>& names) {
  if (planes.empty()) throw std::invalid_argument("nothing to save");
  const Grid& g = *planes[0].grid;
  nlohmann::json hdr;
  hdr["format"] = "fieldlab-field";
  hdr["version"] = 1;
  hdr["dim"] = g.dim;
  hdr["shape"] = g.shape;
  hdr["spacing"] = g.spacing;
  hdr["origin"] = g.origin;
  hdr["components"] = planes.size();
  hdr["names"] = names;
  hdr["layout"] = "component-major; row-major with axis 0 slowest; little-endian float64";
  std::ofstream jh(base + ".json");
  if (!jh) throw std::runtime_error("cannot write " + base + ".json");
  jh << hdr.dump(2) << "\n";
  std::ofstream bin(base + ".f64", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + base + ".f64");
  for (auto& p : planes)
    bin.write(reinterpret_cast<const char*>(p.v.data()), (std::streamsize)(p.v.size() * sizeof(double)));
}

std::vector<Plane> load_planes(const std::string& base, std::vector<std::string>* names) {
  std::ifstream jh(base + ".json");
  if (!jh) throw std::runtime_error("cannot read " + base + ".json");
  nlohmann::json hdr = nlohmann::json::parse(jh);
  auto grid = Grid::make(hdr["shape"].get<std::vector<int>>(),
                         hdr["spacing"].get<std::vector<double>>(),
                         hdr["origin"].get<std::vector<double>>());
  size_t nc = hdr["components"].get<size_t>();
  if (names) *names = hdr["names"].get<std::vector<std::string>>();
  std::ifstream bin(base + ".f64", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + base + ".f64");
  std::vector<Plane> out;
  for (size_t c = 0; c < nc; ++c) {
    Plane p(grid);
    bin.read(reinterpret_cast<char*>(p.v.data()), (std::streamsize)(p.v.size() * sizeof(double)));
    if (!bin) throw std::runtime_error("truncated field data in " + base + ".f64");
    out.push_back(std::move(p));
  }
  return out;
}

double fit_order(const std::vector<double>& hs, const std::vector<double>& errs) {
  if (hs.size() != errs.size() || hs.size() < 2)
    throw std::invalid_argument("need at least two resolutions");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = (int)hs.size();
  for (int i = 0; i < n; ++i) {
    double x = std::log(hs[i]), y = std::log(std::max(errs[i], 1e-300));
    sx += x; sy += y; sxx += x * x; sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace fieldlab
