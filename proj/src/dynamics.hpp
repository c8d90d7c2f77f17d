#pragma once

#include "evaluate.hpp"
#include "poly.hpp"

#include <complex>

// Time evolution of the Euler-Lagrange equations.  The equation for each
// field is solved symbolically for the second time derivative; the update is
// a leapfrog with the standard half-step average for terms linear in the
// first time derivative (damping).  Stepping refuses theory shapes it cannot
// integrate rather than producing nonsense: non-constant-sign kinetic
// coefficients, mixed space-time second derivatives, velocity couplings.

namespace fieldlab {

struct InitialData {
  enum class Kind { plane_wave, gaussian_packet, random_smooth };
  Kind kind = Kind::plane_wave;
  double amplitude = 1.0;
  // plane wave
  std::vector<int> modes;   // integer wave numbers per spatial axis
  double mass = 0.0;        // dispersion mass, omega^2 = |k|^2 + m^2
  double phase = 0.0;
  // gaussian packet (periodic-smooth bump)
  std::vector<double> center;
  double width = 1.0;
  // random smooth field
  std::uint64_t seed = 1;
  int cutoff = 2;
};

struct EvolutionConfig {
  double dt = 0.0;
  int steps = 0;
  bool courant_check = true;
  std::vector<InitialData> initial; // one per field (size 1 broadcasts)
};

struct StepperError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InstabilityError : std::runtime_error {
  int step;
  InstabilityError(const std::string& m, int step) : std::runtime_error(m), step(step) {}
};

using CSlice = std::vector<std::complex<double>>; // one spatial slice per field

struct EvolveResult {
  FieldBlock block;
  std::vector<CSlice> pi_half; // per field: momentum at t_end - dt/2
};

// Evolves from the configured initial data; grid.shape[0] must equal steps+1.
EvolveResult evolve(const Theory& th, GridPtr grid, const EvolutionConfig& cfg);

// Evolves from explicit slice data; `pi` is at t0 + dt/2 when
// `pi_at_half_step` (the first step uses it directly, which makes a reversed
// run retrace a forward one exactly), otherwise at t0 and it receives the
// initial half kick.
EvolveResult evolve_from(const Theory& th, GridPtr grid, double dt, int steps,
                         std::vector<CSlice> phi0, std::vector<CSlice> pi,
                         bool pi_at_half_step);

// Analytic plane-wave block: A cos(w t - k.x + phase) per real field, the
// complex exponential for complex pairs.  Throws when a requested wave vector
// is not commensurate with the torus.
FieldBlock exact_plane_wave(const Theory& th, GridPtr grid, const InitialData& data);

// Pointwise Euler-Lagrange residual per component with discrete derivatives;
// meaningful on interior slices.
std::vector<CPlane> el_residual(const Theory& th, const FieldBlock& block);

// Initial slices for a configured field (used by evolve; exposed for tests).
void synthesize_initial(const Theory& th, const Grid& g, const InitialData& d, int field_index,
                        CSlice& phi, CSlice& pi);

} // namespace fieldlab
