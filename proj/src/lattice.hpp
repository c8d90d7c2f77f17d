#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

// Discrete D-dimensional Minkowski lattice.  Axis 0 is time (not periodic);
// all spatial axes are periodic.  Stored values are row-major with axis 0
// slowest.  One consistent stencil family is used everywhere: 2nd-order
// central differences, with 2nd-order one-sided stencils at the two time
// edges, so the discrete Gauss identity below holds to discretization order.

namespace fieldlab {

struct Grid {
  int dim = 0;
  std::vector<int> shape;      // site counts per axis, axis 0 = time
  std::vector<double> spacing; // h_mu > 0
  std::vector<double> origin;  // coordinate of index 0 per axis
  std::vector<long> stride;
  long n_sites = 0;

  static std::shared_ptr<const Grid> make(std::vector<int> shape, std::vector<double> spacing,
                                          std::vector<double> origin = {});

  long site_index(const std::vector<int>& idx) const;
  int axis_index(long site, int axis) const { return (int)((site / stride[axis]) % shape[axis]); }
  double coordinate(int axis, int i) const { return origin[axis] + spacing[axis] * i; }
  long slice_sites() const { return n_sites / shape[0]; }
  double cell_volume() const;
  double spatial_cell() const; // product of spatial spacings
};

using GridPtr = std::shared_ptr<const Grid>;

struct Plane {
  GridPtr grid;
  std::vector<double> v;

  Plane() = default;
  explicit Plane(GridPtr g, double fill = 0.0) : grid(std::move(g)), v(grid->n_sites, fill) {}
  double& operator[](long i) { return v[i]; }
  double operator[](long i) const { return v[i]; }
};

struct VectorField { // contravariant components j^mu
  GridPtr grid;
  std::vector<Plane> comp; // size dim
};

struct TensorField { // mixed components t^mu_nu, comp[mu][nu]
  GridPtr grid;
  std::vector<std::vector<Plane>> comp;
};

struct SlabRegion {
  int t0 = 0, t1 = 0; // time-slice indices, t0 < t1
};

enum class Variance { down, up };

// 2nd-order d/dx^mu (down) or d/dx_mu (up; multiplies by the metric sign).
Plane central_difference(const Plane& f, int axis, Variance var);
// 2nd-order second derivative d2/dx^a dx^b (both down).
Plane second_difference(const Plane& f, int a, int b);

Plane divergence(const VectorField& j);

// Riemann sum over the slab: trapezoid weights in time, plain sum over the
// periodic spatial torus, times the cell volume.
double volume_integral(const Plane& f, const SlabRegion& slab);
// Integral of j^0 over slice t1 minus slice t0 (the only boundary faces of a
// spatially periodic slab).
double surface_flux(const VectorField& j, const SlabRegion& slab);
double slice_integral(const Plane& f, int t);

// Norms over a half-open slice range [ta, tb); L2 carries the cell measure.
double l2_norm(const Plane& f, int ta, int tb);
double linf_norm(const Plane& f, int ta, int tb);
bool all_finite(const Plane& f);

void fill_plane(Plane& f, const std::function<double(const std::vector<double>&)>& fn);

// Self-describing serialization: <base>.json header plus <base>.f64 raw
// little-endian doubles, planes concatenated in order.
void save_planes(const std::string& base_path, const std::vector<Plane>& planes,
                 const std::vector<std::string>& names);
std::vector<Plane> load_planes(const std::string& base_path, std::vector<std::string>* names = nullptr);

// least-squares slope of log(err) against log(h); hs and errs same length
double fit_order(const std::vector<double>& hs, const std::vector<double>& errs);

} // namespace fieldlab
