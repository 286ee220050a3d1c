#ifndef HAMSTAT_H
#define HAMSTAT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes shared by every function of the library.
 */
typedef enum HamstatStatus {
  HAMSTAT_STATUS_OK = 0,
  HAMSTAT_STATUS_NULL_POINTER = 1,
  HAMSTAT_STATUS_INVALID_ARGUMENT = 2,
  HAMSTAT_STATUS_NUMERICAL = 3,
  HAMSTAT_STATUS_UNSUPPORTED = 4,
  HAMSTAT_STATUS_IO = 5,
  HAMSTAT_STATUS_PANIC = 6,
} HamstatStatus;

typedef struct HamstatDomain HamstatDomain;

typedef struct HamstatExample HamstatExample;

typedef struct HamstatMesh HamstatMesh;

/**
 * All residuals of an analytic example on one mesh.
 */
typedef struct HamstatReport {
  double h;
  double lagrangian;
  double conformality;
  double structural;
  double angle_div;
  double angle_perp_div;
  double legendrian;
  double conormal;
  double neumann_trace;
  double stationarity;
} HamstatReport;

typedef struct HamstatRigidity {
  double initial_distance;
  double final_distance;
  double final_energy;
  double angle_variance;
  double circle_defect;
  double lagrangian_residual;
  uint64_t iterations;
  bool pass;
} HamstatRigidity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next failing call.
 */
const char *hamstat_last_error(void);

void hamstat_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hamstat_version(void);

/**
 * # Safety
 * `out_mesh` must be valid for writes.
 */
enum HamstatStatus hamstat_mesh_new(size_t n_rings,
                                    size_t n_sectors,
                                    double grading,
                                    struct HamstatMesh **out_mesh);

/**
 * # Safety
 * `mesh` must be null or come from [`hamstat_mesh_new`] and not be freed twice.
 */
void hamstat_mesh_free(struct HamstatMesh *mesh);

/**
 * # Safety
 * `mesh` must be a live handle; the out pointers must be valid for writes.
 */
enum HamstatStatus hamstat_mesh_info(const struct HamstatMesh *mesh,
                                     size_t *n_nodes,
                                     size_t *n_triangles,
                                     double *h);

/**
 * Copies node coordinates as `x0, y0, x1, y1, …` into `xy` (length `len ≥ 2·n_nodes`).
 *
 * # Safety
 * `mesh` must be a live handle and `xy` valid for `len` writes.
 */
enum HamstatStatus hamstat_mesh_nodes(const struct HamstatMesh *mesh, double *xy, size_t len);

/**
 * `name` is `flat`, `sw:p,q` or `nonminimal`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out_example` valid for writes.
 */
enum HamstatStatus hamstat_example_new(const char *name, struct HamstatExample **out_example);

/**
 * # Safety
 * `example` must be null or a handle from [`hamstat_example_new`].
 */
void hamstat_example_free(struct HamstatExample *example);

/**
 * Image point `(x₁, y₁, x₂, y₂)` of a disc point.
 *
 * # Safety
 * `example` must be a live handle and `xyxy` valid for 4 writes.
 */
enum HamstatStatus hamstat_example_value(const struct HamstatExample *example,
                                         double x,
                                         double y,
                                         double *xyxy);

/**
 * Lagrangian angle as a unit complex number.
 *
 * # Safety
 * `example` must be a live handle; `re`, `im` valid for writes.
 */
enum HamstatStatus hamstat_example_angle(const struct HamstatExample *example,
                                         double x,
                                         double y,
                                         double *re,
                                         double *im);

/**
 * Degree and flux of `iḡ∇g` around `(x, y)`, averaged over circles of radii `0.2, 0.35, 0.5`
 * (each scaled to stay inside the disc).
 *
 * # Safety
 * `example` must be a live handle; `degree`, `flux` valid for writes.
 */
enum HamstatStatus hamstat_example_singular_mass(const struct HamstatExample *example,
                                                 double x,
                                                 double y,
                                                 double *degree,
                                                 double *flux);

/**
 * # Safety
 * `out_domain` must be valid for writes.
 */
enum HamstatStatus hamstat_domain_ball(struct HamstatDomain **out_domain);

/**
 * Curve domain defined by the boundary normal field of `example`.
 *
 * # Safety
 * `example` must be a live handle and `out_domain` valid for writes.
 */
enum HamstatStatus hamstat_domain_curve(const struct HamstatExample *example,
                                        struct HamstatDomain **out_domain);

/**
 * # Safety
 * `domain` must be null or a handle from a `hamstat_domain_*` constructor.
 */
void hamstat_domain_free(struct HamstatDomain *domain);

/**
 * Full residual report of an analytic example against the standard test family.
 *
 * # Safety
 * Handles must be live and `report` valid for writes.
 */
enum HamstatStatus hamstat_example_report(const struct HamstatExample *example,
                                          const struct HamstatMesh *mesh,
                                          const struct HamstatDomain *domain,
                                          struct HamstatReport *report);

/**
 * Stationarity value of the P1 interpolant of `example` on `mesh`.
 *
 * # Safety
 * Handles must be live and `value` valid for writes.
 */
enum HamstatStatus hamstat_stationarity(const struct HamstatExample *example,
                                        const struct HamstatMesh *mesh,
                                        const struct HamstatDomain *domain,
                                        double *value);

/**
 * Rigidity experiment with the default solver configuration.
 *
 * # Safety
 * `mesh` must be a live handle and `result` valid for writes.
 */
enum HamstatStatus hamstat_rigidity(uint64_t seed,
                                    double eps,
                                    const struct HamstatMesh *mesh,
                                    struct HamstatRigidity *result);

/**
 * Runs the command-line driver with `argv[0..argc]` and returns its exit code
 * (0 pass, 1 usage or config error, 2 failed assertion); -1 on null arguments.
 *
 * # Safety
 * `argv` must hold `argc` NUL-terminated strings.
 */
int hamstat_run_cli(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAMSTAT_H */
