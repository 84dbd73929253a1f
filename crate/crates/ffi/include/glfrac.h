#ifndef GLFRAC_H
#define GLFRAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GlfracStatus {
  GLFRAC_STATUS_OK = 0,
  GLFRAC_STATUS_INVALID_ARGUMENT = 1,
  GLFRAC_STATUS_CONFIG = 2,
  GLFRAC_STATUS_MESH = 3,
  GLFRAC_STATUS_SOLVER = 4,
  GLFRAC_STATUS_IO = 5,
  /**
   * the load schedule is exhausted; no step was taken
   */
  GLFRAC_STATUS_FINISHED = 6,
  /**
   * the output buffer is too small; the required length was written
   */
  GLFRAC_STATUS_BUFFER_TOO_SMALL = 7,
  GLFRAC_STATUS_PANIC = 8,
} GlfracStatus;

/**
 * Opaque scenario handle.
 */
typedef struct GlfracSimulation GlfracSimulation;

/**
 * Material parameters in kN/mm², kN/mm, mm and radians.
 */
typedef struct GlfracMaterial {
  double lambda;
  double mu;
  double chi;
  double xi;
  double alpha;
  double gc;
  double l;
  double kappa;
  double fiber_angle;
} GlfracMaterial;

typedef struct GlfracStepResult {
  size_t step;
  double ubar;
  double reaction;
  double strain_energy;
  double fracture_energy;
  size_t dofs;
  size_t gl_iterations;
  size_t staggers;
  size_t corrector_solves;
  double traction_mismatch;
  double min_interface_d;
  bool converged;
} GlfracStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *glfrac_last_error(void);

/**
 * Isotropic parameters with no structural anisotropy and fibers along x.
 */
struct GlfracMaterial glfrac_material_isotropic(double lambda,
                                                double mu,
                                                double gc,
                                                double l,
                                                double kappa);

/**
 * # Safety
 * `material` must be null or point to a valid `GlfracMaterial`.
 */
enum GlfracStatus glfrac_material_validate(const struct GlfracMaterial *material);

/**
 * Stress tensor components (xx, yy, xy) for strain tensor components (xx, yy, xy)
 * and crack phase-field `d` (1 intact).
 *
 * # Safety
 * `strain` and `stress` must point to 3 doubles; `material` to a valid material.
 */
enum GlfracStatus glfrac_stress(const struct GlfracMaterial *material,
                                const double *strain,
                                double d,
                                double *stress);

/**
 * Row-major 3x3 tangent mapping engineering strain (xx, yy, 2xy) to stress (xx, yy, xy).
 *
 * # Safety
 * `strain` must point to 3 doubles, `tangent` to 9; `material` to a valid material.
 */
enum GlfracStatus glfrac_tangent(const struct GlfracMaterial *material,
                                 const double *strain,
                                 double d,
                                 double *tangent);

/**
 * Degraded bulk energy density.
 *
 * # Safety
 * `strain` must point to 3 doubles, `out` to 1; `material` to a valid material.
 */
enum GlfracStatus glfrac_energy_density(const struct GlfracMaterial *material,
                                        const double *strain,
                                        double d,
                                        double *out);

/**
 * Dimensionless crack driving state of an undegraded strain.
 *
 * # Safety
 * `strain` must point to 3 doubles, `out` to 1; `material` to a valid material.
 */
enum GlfracStatus glfrac_crack_driving_state(const struct GlfracMaterial *material,
                                             const double *strain,
                                             double *out);

/**
 * Phase-field of a homogeneous state with history `h`.
 *
 * # Safety
 * `out` must point to 1 double.
 */
enum GlfracStatus glfrac_homogeneous_phase_field(double h, double kappa, double *out);

/**
 * Critical stress and strain from Voigt and Reuss averaged Young's moduli.
 *
 * # Safety
 * `sigma_c` and `eps_c` must point to 1 double each; `material` to a valid material.
 */
enum GlfracStatus glfrac_critical_stress(const struct GlfracMaterial *material,
                                         double e_voigt,
                                         double e_reuss,
                                         double *sigma_c,
                                         double *eps_c);

/**
 * Creates a simulation from TOML text, a config file path or a bundled config name,
 * applying `n_overrides` strings of the form `section.key=value`.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `overrides` must point to
 * `n_overrides` NUL-terminated strings (or be null when `n_overrides` is 0);
 * `out` must be writable.
 */
enum GlfracStatus glfrac_simulation_create(const char *config,
                                           const char *const *overrides,
                                           size_t n_overrides,
                                           struct GlfracSimulation **out);

/**
 * Commits one load step. Returns `Finished` once the schedule is exhausted.
 *
 * # Safety
 * `sim` must come from `glfrac_simulation_create`; `result` may be null.
 */
enum GlfracStatus glfrac_simulation_step(struct GlfracSimulation *sim,
                                         struct GlfracStepResult *result);

/**
 * Number of committed steps, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or come from `glfrac_simulation_create`.
 */
size_t glfrac_simulation_steps_done(const struct GlfracSimulation *sim);

/**
 * Copies the finest nodal phase-field into `buf`. `len` receives the node count;
 * if `capacity` is smaller, nothing is copied and `BufferTooSmall` is returned.
 * Before a local domain exists the field is empty.
 *
 * # Safety
 * `buf` must hold `capacity` doubles (or be null with capacity 0); `len` must be writable.
 */
enum GlfracStatus glfrac_simulation_phase_field(const struct GlfracSimulation *sim,
                                                double *buf,
                                                size_t capacity,
                                                size_t *len);

/**
 * Copies the run manifest as NUL-terminated JSON; `len` receives the byte count
 * including the terminator.
 *
 * # Safety
 * `buf` must hold `capacity` bytes (or be null with capacity 0); `len` must be writable.
 */
enum GlfracStatus glfrac_simulation_manifest(const struct GlfracSimulation *sim,
                                             char *buf,
                                             size_t capacity,
                                             size_t *len);

/**
 * Writes legacy VTK snapshots of the current state into the existing directory `dir`.
 *
 * # Safety
 * `sim` must come from `glfrac_simulation_create`; `dir` must be a NUL-terminated string.
 */
enum GlfracStatus glfrac_simulation_write_vtk(const struct GlfracSimulation *sim, const char *dir);

/**
 * Runs a whole scenario with artifacts, like `glfrac run`.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `output_dir` null or NUL-terminated.
 */
enum GlfracStatus glfrac_run(const char *config, const char *output_dir);

/**
 * # Safety
 * `sim` must be null or come from `glfrac_simulation_create`, and not be used afterwards.
 */
void glfrac_simulation_free(struct GlfracSimulation *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLFRAC_H */
